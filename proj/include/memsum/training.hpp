#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "memsum/autodiff/parameters.hpp"
#include "memsum/corpus.hpp"
#include "memsum/inference.hpp"
#include "memsum/oracle.hpp"
#include "memsum/policy.hpp"

namespace memsum {

struct TrainerConfig {
  std::size_t batch_size = 16;
  std::size_t max_steps = 2000;
  std::size_t validation_interval = 100;  // optimizer steps between validations; 0 disables
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  ad::AdamConfig adam;
  InferenceConfig validation;  // stopping rule used for validation
  /// Validate at the best threshold of the default grid instead of validation.p_thres.
  bool sweep_validation = false;
  std::size_t threads = 0;  // validation workers

  void validate() const;
};

/// A training document with its cached high-ROUGE episodes.
struct TrainingExample {
  const Document* doc = nullptr;
  EncodedDocument encoded;
  std::vector<Episode> episodes;  // E_p, restricted to the encoded range
};

struct BatchItem {
  const EncodedDocument* encoded = nullptr;
  Episode episode;
};

struct StepStats {
  std::uint64_t step = 0;
  double loss = 0.0;
  double mean_reward = 0.0;
  double mean_length = 0.0;  // mean T
  std::size_t skipped = 0;   // documents without episodes
};

struct ValidationPoint {
  std::uint64_t step = 0;
  double score = 0.0;
  double p_thres = 0.0;
};

struct TrainingStats {
  std::vector<StepStats> steps;
  std::vector<ValidationPoint> validations;
  std::optional<ValidationPoint> best;
  bool stopped_early = false;
};

/// -(r / (T + 1)) * sum_t log pi(A_t | S_t) for a replayed episode: T
/// selections followed by the stop action. Variants without a stop head omit
/// the stop term; stop_sentence ends by selecting its stop sentence.
template <typename T>
ad::Var episode_loss(ad::Graph<T>& g, const Policy<T>& policy, const EncodedDocument& doc,
                     const Episode& episode);

/// Mean episode loss over the batch, one backward pass per item into the
/// shared gradients, then one Adam step.
template <typename T>
StepStats train_step(Policy<T>& policy, ad::AdamState<T>& adam, std::span<const BatchItem> batch,
                     std::uint64_t dropout_seed);

/// Mean reward of deterministic extraction over the validation documents.
template <typename T>
double validate(const Policy<T>& policy, std::span<const Document> docs, const Vocabulary& vocab,
                const CorpusConfig& corpus, const InferenceConfig& config, std::size_t threads = 0);

/// Validation-based early stopping: a round that fails to beat the best score
/// counts against patience, and after `patience` such rounds in a row training
/// stops. The best parameters seen at a validation are restored at the end.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Returns true if `score` is a new best.
  bool observe(double score);
  bool should_stop() const noexcept { return bad_rounds_ >= patience_; }
  std::size_t bad_rounds() const noexcept { return bad_rounds_; }

 private:
  std::size_t patience_;
  std::size_t bad_rounds_ = 0;
  bool seen_ = false;
  double best_ = 0.0;
};

std::vector<TrainingExample> prepare_examples(std::span<const Document> docs,
                                              std::span<const std::vector<Episode>> episodes,
                                              const Vocabulary& vocab, const CorpusConfig& corpus);

/// Trains for up to max_steps optimizer steps. `log` (if set) receives one
/// JSON object per optimizer step and per validation.
template <typename T>
TrainingStats train(Policy<T>& policy, ad::AdamState<T>& adam, std::span<const TrainingExample> examples,
                    std::span<const Document> validation_docs, const Vocabulary& vocab,
                    const CorpusConfig& corpus, const TrainerConfig& config,
                    const std::function<void(const nlohmann::json&)>& log = {});

/// Appends JSON lines to a file.
std::function<void(const nlohmann::json&)> jsonl_logger(const std::filesystem::path& path);

// Checkpoints: a directory with manifest.json, params.bin and vocab.txt.

inline constexpr int kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Policy<T>& policy, const ad::AdamState<T>* adam,
                     const Vocabulary& vocab, const CorpusConfig& corpus,
                     const nlohmann::json& extra_config = nlohmann::json::object());

template <typename T>
struct LoadedModel {
  std::unique_ptr<Policy<T>> policy;
  ad::AdamState<T> adam;
  Vocabulary vocab;
  CorpusConfig corpus;
  nlohmann::json config;  // full config echo from the manifest
};

/// Throws CheckpointError naming the offending field on version, precision,
/// tensor name or shape mismatch and on a truncated blob.
template <typename T>
LoadedModel<T> load_checkpoint(const std::filesystem::path& dir);

}  // namespace memsum
