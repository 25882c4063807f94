#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memsum/corpus.hpp"
#include "memsum/policy.hpp"
#include "memsum/rouge.hpp"

namespace memsum {

enum class OutputOrder { extraction, document };

struct InferenceConfig {
  double p_thres = 0.6;
  std::size_t max_sentences = 7;  // N_max
  OutputOrder output_order = OutputOrder::document;
  bool block_trigrams = false;  // skip candidates sharing a trigram with the summary

  void validate() const;
};

struct SummaryResult {
  std::string id;
  std::vector<std::size_t> indices;    // extraction order, stop sentence excluded
  std::vector<std::string> sentences;  // in the configured output order
  std::optional<Reward> reward;        // against the gold summary, extraction order
  double ms = 0.0;
};

/// Called once per decision step, before the stop test, with the distribution
/// over the remaining sentences.
using StepObserver = std::function<void(const ExtractionState&, const ActionDistribution&)>;

/// Deterministic greedy extraction. Stops when p_stop >= p_thres, N_max
/// sentences are extracted, or nothing remains; otherwise takes argmax u with
/// ties going to the lowest index. Variants without a stop head use a fixed
/// budget (N_max, or fixed_k for no_auto_stop); stop_sentence stops when its
/// stop sentence wins.
template <typename T>
SummaryResult extract_summary(const Policy<T>& policy, const Document& doc,
                              const EncodedDocument& encoded, const InferenceConfig& config,
                              const StepObserver& observer = {});

/// Greedy path with no threshold stop, plus p_stop at each decision step.
/// The summary for threshold p is the prefix before the first step with
/// p_stop >= p, which is what extract_summary would return.
struct GreedyPath {
  std::vector<std::size_t> indices;
  std::vector<double> stop_probabilities;  // one per decision step, indices.size() + 1 at most
};

template <typename T>
GreedyPath greedy_path(const Policy<T>& policy, const EncodedDocument& encoded, std::size_t max_sentences);

std::vector<std::size_t> path_prefix(const GreedyPath& path, double p_thres);

struct EvaluationReport {
  std::size_t documents = 0;
  double rouge1 = 0.0, rouge2 = 0.0, rouge_l = 0.0;
  double reward = 0.0;  // mean of the per-document rewards
  double mean_sentences = 0.0;
  double mean_words = 0.0;  // tokens with a letter or digit
  double mean_ms = 0.0;
  std::vector<SummaryResult> results;  // input order
};

/// Extracts and scores every document, in parallel over `threads` workers
/// (0 picks the hardware concurrency).
template <typename T>
EvaluationReport evaluate_dataset(const Policy<T>& policy, std::span<const Document> docs,
                                  const Vocabulary& vocab, const CorpusConfig& corpus,
                                  const InferenceConfig& config, std::size_t threads = 0);

/// Recomputes the report averages from per-document results.
EvaluationReport summarize_results(std::vector<SummaryResult> results, std::span<const Document> docs);

struct SweepResult {
  std::vector<double> thresholds;
  std::vector<double> scores;  // mean reward per threshold
  double best_threshold = 0.0;
  double best_score = 0.0;
};

std::vector<double> default_threshold_grid();  // 0.1, 0.2, ..., 1.0

/// Scores every threshold; ties go to the smaller threshold.
template <typename T>
SweepResult sweep_threshold(const Policy<T>& policy, std::span<const Document> docs,
                            const Vocabulary& vocab, const CorpusConfig& corpus,
                            std::span<const double> thresholds, std::size_t max_sentences,
                            std::size_t threads = 0);

/// Runs fn(i) for i in [0, n) across a small worker pool.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// One JSON Lines record per result: {"id", "indices", "summary", "rouge"}, plus
/// "ms" when timing is requested.
void write_results(const std::filesystem::path& path, std::span<const SummaryResult> results,
                   bool include_timing = false);

extern template SummaryResult extract_summary<float>(const Policy<float>&, const Document&,
                                                     const EncodedDocument&, const InferenceConfig&,
                                                     const StepObserver&);
extern template SummaryResult extract_summary<double>(const Policy<double>&, const Document&,
                                                      const EncodedDocument&, const InferenceConfig&,
                                                      const StepObserver&);

}  // namespace memsum
