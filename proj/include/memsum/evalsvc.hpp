#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "memsum/corpus.hpp"
#include "memsum/experiments.hpp"

namespace memsum::evalsvc {

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Criterion { overall = 0, coverage = 1, non_redundancy = 2 };
inline constexpr std::array<const char*, 3> kCriteria{"overall", "coverage", "non_redundancy"};

/// Summaries produced by one model, keyed by document id.
struct ModelOutputs {
  std::string name;
  std::map<std::string, std::vector<std::string>> summaries;
};

struct SummaryPair {
  std::string pair_id;
  std::string document_id;
  std::vector<std::string> reference;
  std::vector<std::string> summary_a;
  std::vector<std::string> summary_b;
  std::string model_a;  // hidden until aggregation
  std::string model_b;
  std::uint64_t order_seed = 0;
};

/// Client view of a pair with the model mapping removed.
nlohmann::json public_view(const SummaryPair& pair);

struct SideRanks {
  int a = 1;
  int b = 2;
  bool operator==(const SideRanks&) const = default;
};

struct RankingRecord {
  std::string pair_id;
  std::string evaluator;
  std::array<SideRanks, 3> ranks{};  // indexed by Criterion
  bool skipped = false;
  std::string timestamp;  // ISO 8601 UTC, filled on submission when empty

  /// Ranks per criterion are {1,2}, {2,1} or {1,1}. Throws ValidationError naming the criterion.
  void validate() const;
};

nlohmann::json to_json(const RankingRecord& r);
/// Skipped records must not carry ranks. Throws ValidationError.
RankingRecord ranking_from_json(const nlohmann::json& j);

struct AuditNote {
  std::string pair_id;
  std::string evaluator;
  std::string replaced_timestamp;
  std::string timestamp;
};

struct HighlightResult {
  std::vector<double> a;
  std::vector<double> b;
};

/// Cosine between averaged word embeddings. UNK rows count, PAD tokens are
/// ignored, and a zero vector scores 0. Throws ValidationError on an empty query.
HighlightResult highlight(const SummaryPair& pair, std::string_view query, const Vocabulary& vocab,
                          const EmbeddingTable& embeddings);

struct ModelStats {
  std::string name;
  std::array<double, 3> mean_rank{};
  double mean_sentences = 0.0;
  double mean_words = 0.0;
};

struct Aggregate {
  bool empty = true;
  std::size_t records = 0;  // non-skipped
  std::size_t skipped = 0;
  std::array<ModelStats, 2> models;              // X then Y
  std::array<WilcoxonResult, 3> significance{};  // X rank vs Y rank per criterion
  std::vector<std::array<std::string, 3>> mapping;  // pair id, model on A, model on B
};

nlohmann::json to_json(const Aggregate& a);

struct Session {
  std::string id;
  std::string model_x;
  std::string model_y;
  std::uint64_t seed = 0;
  std::vector<SummaryPair> pairs;
  std::map<std::string, RankingRecord> records;  // key: pair id + '\n' + evaluator
  std::vector<AuditNote> audit;
};

/// One pair per document in `docs` order; model X goes on side A when the
/// seeded coin lands heads. Throws std::invalid_argument when the outputs
/// cover different ids or an id is missing from `docs`.
std::vector<SummaryPair> make_pairs(const ModelOutputs& x, const ModelOutputs& y, std::span<const Document> docs,
                                    std::uint64_t seed);

Aggregate aggregate_rankings(const Session& session);

/// Session state with an append-only JSON Lines event log replayed on open.
/// Reads share a lock; writes are serialized.
class EvalStore {
 public:
  /// No log path keeps everything in memory.
  explicit EvalStore(std::optional<std::filesystem::path> log = std::nullopt);

  /// `id` empty picks the next free "s<N>". Documents are remembered for document().
  std::string create_session(const ModelOutputs& x, const ModelOutputs& y, std::span<const Document> docs,
                             std::uint64_t seed, std::string id = {});

  /// Lowest-indexed pair this evaluator has neither ranked nor skipped.
  std::optional<SummaryPair> next_pair(const std::string& session, const std::string& evaluator) const;

  /// Stores the record and returns true when it replaced an earlier one.
  bool submit_ranking(const std::string& session, RankingRecord record);

  HighlightResult highlight(const std::string& session, const std::string& pair_id, std::string_view query,
                            const Vocabulary& vocab, const EmbeddingTable& embeddings) const;

  Aggregate aggregate(const std::string& session) const;
  Document document(const std::string& id) const;
  std::vector<RankingRecord> records(const std::string& session) const;
  std::vector<AuditNote> audit(const std::string& session) const;
  std::vector<std::string> sessions() const;

 private:
  void apply(const nlohmann::json& event);
  void append(const nlohmann::json& event);
  const Session& session_ref(const std::string& id) const;

  mutable std::shared_mutex mutex_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, Document> documents_;
  std::optional<std::filesystem::path> log_path_;
  std::ofstream log_;
};

}  // namespace memsum::evalsvc
