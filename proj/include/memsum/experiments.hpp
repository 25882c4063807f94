#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "memsum/corpus.hpp"
#include "memsum/inference.hpp"
#include "memsum/policy.hpp"

namespace memsum {

struct VariantSpec {
  Variant variant = Variant::full;
  std::size_t fixed_k = 7;  // no_auto_stop only

  void validate() const;
};

VariantSpec parse_variant_spec(std::string_view text);  // "no_auto_stop:5" or a plain variant name

template <typename T>
std::unique_ptr<Policy<T>> build_variant(const VariantSpec& spec, PolicyConfig config,
                                         const EmbeddingTable& embeddings, std::uint64_t seed = 0);

/// Every sentence followed immediately by a copy of itself; gold unchanged.
std::vector<Document> make_redundant_dataset(std::span<const Document> docs);

/// Percent of extracted sentences whose tokens equal an earlier extracted sentence.
double duplicate_percentage(std::span<const std::size_t> indices, const Document& doc);

/// Greedy extraction that skips candidates sharing a trigram with the summary.
template <typename T>
SummaryResult trigram_blocking_filter(const Policy<T>& policy, const Document& doc, const EncodedDocument& encoded,
                                      InferenceConfig config);

/// First min(K, N) sentences, scored against the gold summary.
SummaryResult lead_baseline(const Document& doc, std::size_t k);

/// Scores seen at each decision step. scores[t][i] is empty for sentences
/// already extracted or outside the document.
struct ScoreTrace {
  std::size_t sentences = 0;
  std::vector<double> p_stop;
  std::vector<std::vector<std::optional<double>>> scores;
  std::vector<std::size_t> chosen;  // extraction order
};

template <typename T>
ScoreTrace score_trace(const Policy<T>& policy, const Document& doc, const EncodedDocument& encoded,
                       const InferenceConfig& config);

/// CSV with header "step,p_stop,0,1,...", one row per step, "X" for missing entries.
void write_score_trace_csv(std::ostream& os, const ScoreTrace& trace);

struct WilcoxonResult {
  std::size_t n = 0;        // non-zero differences
  double w_plus = 0.0;      // rank sum of positive differences (a - b)
  double w_minus = 0.0;
  double statistic = 0.0;   // min(w_plus, w_minus)
  double p_value = 1.0;     // two-sided
  bool exact = false;
  bool degenerate = false;  // fewer than 6 non-zero differences
};

/// Paired signed-rank test on (a, b). Zero differences are dropped and tied
/// magnitudes share average ranks. Exact null distribution up to 50 pairs,
/// normal approximation with tie and continuity correction beyond.
WilcoxonResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs);

struct SyntheticCorpusConfig {
  std::size_t documents = 200;
  std::size_t sentences = 12;
  std::size_t planted = 3;
  std::size_t min_tokens = 7;
  std::size_t max_tokens = 12;
  std::uint64_t seed = 0;
};

/// Documents of filler sentences with `planted` sentences built from a
/// distinctive vocabulary; the gold summary is those sentences, each with one
/// token replaced.
std::vector<Document> synthetic_corpus(const SyntheticCorpusConfig& config);

/// Small documents of overlapping random sentences with a mixed gold summary.
std::vector<Document> random_small_documents(std::size_t count, std::size_t max_sentences, std::uint64_t seed);

}  // namespace memsum
