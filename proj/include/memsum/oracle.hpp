#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "memsum/corpus.hpp"
#include "memsum/rouge.hpp"

namespace memsum {

/// One extraction trajectory: sentence indices in extraction order plus the
/// terminal reward fixed when the episode was built.
struct Episode {
  std::vector<std::size_t> indices;
  double reward = 0.0;

  bool operator==(const Episode&) const = default;
};

struct OracleConfig {
  std::size_t branching = 2;      // B
  std::size_t max_sentences = 7;  // N_max of an episode
  std::size_t beam_cap = 16;      // partial summaries kept per depth
  double min_gain = 0.0;          // a step must improve mean(R1, R2) by more than this

  static constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();
  void validate() const;
};

/// Incremental mean(R1, R2) F1 of a growing extraction against a fixed gold
/// summary. Tokens are interned once per document; candidate text is the
/// concatenation of added sentences, so bigrams span sentence boundaries.
class R12Scorer {
 public:
  R12Scorer(const Document& doc, const RougeOptions& opts = {});

  struct State {
    std::vector<std::size_t> order;
    std::vector<std::uint32_t> unigrams;  // counts per interned id
    std::unordered_map<std::uint64_t, std::uint32_t> bigrams;
    std::size_t unigram_total = 0, bigram_total = 0;
    std::size_t unigram_overlap = 0, bigram_overlap = 0;
    std::int64_t last_token = -1;
  };

  State empty_state() const;
  double score(const State& s) const;
  /// Score after appending `sentence`, leaving `s` untouched.
  double score_with(const State& s, std::size_t sentence) const;
  void append(State& s, std::size_t sentence) const;
  std::size_t sentence_count() const noexcept { return sentences_.size(); }

 private:
  double combine(std::size_t o1, std::size_t c1, std::size_t o2, std::size_t c2) const;

  std::vector<std::vector<std::uint32_t>> sentences_;
  std::vector<std::uint32_t> gold_unigrams_;
  std::unordered_map<std::uint64_t, std::uint32_t> gold_bigrams_;
  std::size_t gold_unigram_total_ = 0, gold_bigram_total_ = 0;
};

/// High-ROUGE episode set: branching greedy search, best-first by reward.
/// Throws std::invalid_argument for an empty document or gold summary.
std::vector<Episode> build_episode_set(const Document& doc, const OracleConfig& config,
                                       const RougeOptions& opts = {});

/// Sequential greedy oracle (B = 1). Empty episode with reward 0 when no
/// sentence improves mean(R1, R2).
Episode greedy_oracle_summary(const Document& doc, std::size_t max_sentences,
                              const RougeOptions& opts = {});

/// Uniformly picks an episode and shuffles its indices; the reward is kept.
Episode sample_training_episode(std::span<const Episode> episodes, std::mt19937_64& rng);

/// Drops episodes that reference sentences at or beyond `valid_sentences`.
std::vector<Episode> drop_out_of_range(std::vector<Episode> episodes, std::size_t valid_sentences);

struct EpisodeCacheRecord {
  std::string id;
  std::vector<Episode> episodes;
};

void write_episode_cache(const std::filesystem::path& path,
                         std::span<const EpisodeCacheRecord> records);
std::vector<EpisodeCacheRecord> read_episode_cache(const std::filesystem::path& path);

}  // namespace memsum
