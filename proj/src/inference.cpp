#include "memsum/inference.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "memsum/errors.hpp"

namespace memsum {

void InferenceConfig::validate() const {
  if (!(p_thres >= 0.0 && p_thres <= 1.0)) throw std::invalid_argument("p_thres must be in [0, 1]");
  if (max_sentences == 0) throw std::invalid_argument("N_max must be at least 1");
}

namespace {

using Trigram = std::tuple<std::string, std::string, std::string>;

std::set<Trigram> trigrams(const TokenList& tokens) {
  std::set<Trigram> out;
  for (std::size_t i = 0; i + 2 < tokens.size(); ++i) out.emplace(tokens[i], tokens[i + 1], tokens[i + 2]);
  return out;
}

bool shares_trigram(const std::set<Trigram>& summary, const TokenList& tokens) {
  for (std::size_t i = 0; i + 2 < tokens.size(); ++i) {
    if (summary.contains(Trigram{tokens[i], tokens[i + 1], tokens[i + 2]})) return true;
  }
  return false;
}

std::size_t budget(const PolicyConfig& pc, std::size_t max_sentences) {
  return pc.variant == Variant::no_auto_stop ? pc.fixed_k : max_sentences;
}

}  // namespace

template <typename T>
SummaryResult extract_summary(const Policy<T>& policy, const Document& doc, const EncodedDocument& encoded,
                              const InferenceConfig& config, const StepObserver& observer) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const PolicyConfig& pc = policy.config();
  const std::size_t limit = budget(pc, config.max_sentences);

  ad::Graph<T> g(false, false);
  const DocumentStates states = policy.encode(g, encoded);
  auto state = ExtractionState::initial(states.sentences);
  std::set<Trigram> summary_trigrams;
  SummaryResult result;
  result.id = doc.id;

  while (result.indices.size() < limit) {
    const bool only_stop_left =
        states.stop_sentence && state.remaining.size() == 1 && state.remaining[0] == *states.stop_sentence;
    if (state.remaining.empty() || only_stop_left) break;
    const StepOutput out = policy.step(g, states, state);
    const ActionDistribution dist = policy.distribution(g, out);
    if (observer) observer(state, dist);
    if (pc.has_stop_head() && dist.p_stop >= config.p_thres) break;

    std::size_t best = dist.remaining.size();
    for (std::size_t k = 0; k < dist.remaining.size(); ++k) {
      const std::size_t s = dist.remaining[k];
      if (config.block_trigrams && s < doc.sentences.size() && shares_trigram(summary_trigrams, doc.sentences[s])) {
        continue;
      }
      if (best == dist.remaining.size() || dist.scores[k] > dist.scores[best]) best = k;
    }
    if (best == dist.remaining.size()) break;  // every candidate blocked
    const std::size_t chosen = dist.remaining[best];
    if (states.stop_sentence && chosen == *states.stop_sentence) break;
    state.select(chosen);
    result.indices.push_back(chosen);
    if (config.block_trigrams) {
      auto grams = trigrams(doc.sentences[chosen]);
      summary_trigrams.insert(grams.begin(), grams.end());
    }
  }

  std::vector<TokenList> extracted;
  for (std::size_t s : result.indices) extracted.push_back(doc.sentences[s]);
  if (!doc.gold_summary.empty()) result.reward = episode_reward(extracted, doc.gold_summary);

  auto order = result.indices;
  if (config.output_order == OutputOrder::document) std::sort(order.begin(), order.end());
  for (std::size_t s : order) {
    result.sentences.push_back(s < doc.raw_sentences.size() ? doc.raw_sentences[s] : std::string{});
  }
  result.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return result;
}

template <typename T>
GreedyPath greedy_path(const Policy<T>& policy, const EncodedDocument& encoded, std::size_t max_sentences) {
  const PolicyConfig& pc = policy.config();
  const std::size_t limit = budget(pc, max_sentences);
  ad::Graph<T> g(false, false);
  const DocumentStates states = policy.encode(g, encoded);
  auto state = ExtractionState::initial(states.sentences);
  GreedyPath path;
  while (path.indices.size() < limit) {
    const bool only_stop_left =
        states.stop_sentence && state.remaining.size() == 1 && state.remaining[0] == *states.stop_sentence;
    if (state.remaining.empty() || only_stop_left) break;
    const StepOutput out = policy.step(g, states, state);
    const ActionDistribution dist = policy.distribution(g, out);
    path.stop_probabilities.push_back(pc.has_stop_head() ? dist.p_stop : -1.0);
    const auto best = static_cast<std::size_t>(
        std::max_element(dist.scores.begin(), dist.scores.end()) - dist.scores.begin());
    const std::size_t chosen = dist.remaining[best];
    if (states.stop_sentence && chosen == *states.stop_sentence) break;
    state.select(chosen);
    path.indices.push_back(chosen);
  }
  return path;
}

std::vector<std::size_t> path_prefix(const GreedyPath& path, double p_thres) {
  std::size_t n = 0;
  while (n < path.indices.size() && !(path.stop_probabilities[n] >= p_thres)) ++n;
  return {path.indices.begin(), path.indices.begin() + static_cast<std::ptrdiff_t>(n)};
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

EvaluationReport summarize_results(std::vector<SummaryResult> results, std::span<const Document> docs) {
  EvaluationReport report;
  report.documents = results.size();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (r.reward) {
      report.rouge1 += r.reward->rouge1;
      report.rouge2 += r.reward->rouge2;
      report.rouge_l += r.reward->rouge_l;
      report.reward += r.reward->value;
    }
    report.mean_sentences += static_cast<double>(r.indices.size());
    for (std::size_t s : r.indices) {
      report.mean_words += static_cast<double>(filter_tokens(docs[i].sentences[s]).size());
    }
    report.mean_ms += r.ms;
  }
  if (!results.empty()) {
    const double n = static_cast<double>(results.size());
    for (double* v : {&report.rouge1, &report.rouge2, &report.rouge_l, &report.reward, &report.mean_sentences,
                      &report.mean_words, &report.mean_ms}) {
      *v /= n;
    }
  }
  report.results = std::move(results);
  return report;
}

template <typename T>
EvaluationReport evaluate_dataset(const Policy<T>& policy, std::span<const Document> docs,
                                  const Vocabulary& vocab, const CorpusConfig& corpus,
                                  const InferenceConfig& config, std::size_t threads) {
  config.validate();
  std::vector<SummaryResult> results(docs.size());
  parallel_for(docs.size(), threads, [&](std::size_t i) {
    results[i] = extract_summary(policy, docs[i], encode_document(docs[i], vocab, corpus), config);
  });
  return summarize_results(std::move(results), docs);
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

template <typename T>
SweepResult sweep_threshold(const Policy<T>& policy, std::span<const Document> docs, const Vocabulary& vocab,
                            const CorpusConfig& corpus, std::span<const double> thresholds,
                            std::size_t max_sentences, std::size_t threads) {
  if (docs.empty()) throw std::invalid_argument("sweep_threshold: no documents");
  if (thresholds.empty()) throw std::invalid_argument("sweep_threshold: no thresholds");
  for (double t : thresholds) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("sweep_threshold: thresholds must be in [0, 1]");
  }
  std::vector<std::vector<double>> per_doc(docs.size(), std::vector<double>(thresholds.size()));
  parallel_for(docs.size(), threads, [&](std::size_t i) {
    const auto path = greedy_path(policy, encode_document(docs[i], vocab, corpus), max_sentences);
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      std::vector<TokenList> extracted;
      for (std::size_t s : path_prefix(path, thresholds[k])) extracted.push_back(docs[i].sentences[s]);
      per_doc[i][k] = episode_reward(extracted, docs[i].gold_summary).value;
    }
  });
  SweepResult out;
  out.thresholds.assign(thresholds.begin(), thresholds.end());
  out.scores.assign(thresholds.size(), 0.0);
  for (const auto& row : per_doc) {
    for (std::size_t k = 0; k < row.size(); ++k) out.scores[k] += row[k] / static_cast<double>(docs.size());
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < out.scores.size(); ++k) {
    if (out.scores[k] > out.scores[best] ||
        (out.scores[k] == out.scores[best] && out.thresholds[k] < out.thresholds[best])) {
      best = k;
    }
  }
  out.best_threshold = out.thresholds[best];
  out.best_score = out.scores[best];
  return out;
}

void write_results(const std::filesystem::path& path, std::span<const SummaryResult> results, bool include_timing) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& r : results) {
    nlohmann::json j{{"id", r.id}, {"indices", r.indices}, {"summary", r.sentences}};
    if (include_timing) j["ms"] = r.ms;
    if (r.reward) {
      j["rouge"] = {{"rouge1", r.reward->rouge1},
                    {"rouge2", r.reward->rouge2},
                    {"rougeL", r.reward->rouge_l},
                    {"reward", r.reward->value}};
    } else {
      j["rouge"] = nullptr;
    }
    os << j.dump() << '\n';
  }
}

#define MEMSUM_INSTANTIATE(T)                                                                             \
  template SummaryResult extract_summary<T>(const Policy<T>&, const Document&, const EncodedDocument&,    \
                                            const InferenceConfig&, const StepObserver&);                 \
  template GreedyPath greedy_path<T>(const Policy<T>&, const EncodedDocument&, std::size_t);               \
  template EvaluationReport evaluate_dataset<T>(const Policy<T>&, std::span<const Document>,              \
                                                const Vocabulary&, const CorpusConfig&,                    \
                                                const InferenceConfig&, std::size_t);                      \
  template SweepResult sweep_threshold<T>(const Policy<T>&, std::span<const Document>, const Vocabulary&, \
                                          const CorpusConfig&, std::span<const double>, std::size_t,       \
                                          std::size_t);
MEMSUM_INSTANTIATE(float)
MEMSUM_INSTANTIATE(double)
#undef MEMSUM_INSTANTIATE

}  // namespace memsum
