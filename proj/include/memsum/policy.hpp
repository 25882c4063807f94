#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "memsum/autodiff/graph.hpp"
#include "memsum/autodiff/parameters.hpp"
#include "memsum/corpus.hpp"

namespace memsum {

/// Network wiring. `full` is the model; the rest are ablations.
enum class Variant { full, no_lse, no_gce, no_ehe, gru_ehe, no_auto_stop, stop_sentence };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

struct PolicyConfig {
  std::size_t dim = 200;          // d: word and sentence embedding size
  std::size_t lse_layers = 2;     // N_l
  std::size_t gce_layers = 2;     // N_g
  std::size_t ehe_layers = 3;     // N_h
  std::size_t heads = 8;          // EHE attention heads
  std::size_t ff_dim = 1024;      // EHE feed-forward hidden size
  double dropout = 0.1;           // EHE sublayers only
  std::size_t pooling_heads = 8;  // MHP heads
  Variant variant = Variant::full;
  std::size_t fixed_k = 7;        // summary length for no_auto_stop

  void validate() const;
  bool has_stop_head() const;
};

/// Extraction bookkeeping for one document. `remaining` stays sorted.
struct ExtractionState {
  std::vector<std::size_t> extracted;  // extraction order
  std::vector<std::size_t> remaining;  // I_t

  static ExtractionState initial(std::size_t sentences);
  std::size_t step() const noexcept { return extracted.size(); }  // t, also E_t
  std::vector<std::size_t> extracted_set() const;  // ascending
  bool is_remaining(std::size_t index) const;
  /// Moves `index` from remaining to extracted. Throws if it is not remaining.
  void select(std::size_t index);
};

/// Plain-value view of the policy's action distribution at one step.
struct ActionDistribution {
  double p_stop = 0.0;                 // 0 for variants without a stop head
  std::vector<std::size_t> remaining;  // I_t
  std::vector<double> scores;          // u_j, aligned with remaining

  std::vector<double> normalized() const;  // u_j / sum u
  double total_mass() const;               // (1 - p_stop) * sum normalized + p_stop
};

struct Action {
  bool stop = false;
  std::size_t sentence = 0;

  static Action stop_action() { return {true, 0}; }
  static Action select(std::size_t s) { return {false, s}; }
};

/// Per-document encoder outputs on a graph.
struct DocumentStates {
  ad::Var local;   // n x d, l
  ad::Var global;  // n x d, g
  std::size_t sentences = 0;  // n, including the synthetic stop sentence if any
  std::optional<std::size_t> stop_sentence;
};

/// Extractor outputs for the remaining sentences of one step.
struct StepOutput {
  std::vector<std::size_t> remaining;
  ad::Var history;      // n_rem x d
  ad::Var hidden;       // n_rem x d, last extractor hidden layer
  ad::Var score_logits; // n_rem x 1
  ad::Var scores;       // n_rem x 1, u = sigmoid(logits)
  ad::Var stop_logit;   // 1 x 1; invalid without a stop head
};

/// The extraction policy: local sentence encoder, global context encoder,
/// extraction history encoder and extractor with stop head. Forward passes
/// only read parameters, so one policy may serve concurrent inference graphs.
template <typename T>
class Policy {
 public:
  using Graph = ad::Graph<T>;
  using Var = ad::Var;

  Policy(PolicyConfig config, const EmbeddingTable& embeddings, std::uint64_t seed = 0);

  const PolicyConfig& config() const noexcept { return config_; }
  ad::ParameterStore<T>& parameters() const noexcept { return *store_; }

  /// LSE over every valid sentence, n x d.
  Var encode_local(Graph& g, const EncodedDocument& doc) const;
  /// GCE over the local embeddings, n x d.
  Var encode_global(Graph& g, Var local) const;
  DocumentStates encode(Graph& g, const EncodedDocument& doc) const;

  /// History embeddings for state.remaining, n_rem x d. Zero at t = 0.
  Var encode_history(Graph& g, const DocumentStates& doc, const ExtractionState& state) const;
  /// Throws std::invalid_argument if no sentence remains.
  StepOutput score_and_stop(Graph& g, const DocumentStates& doc, Var history,
                            const ExtractionState& state) const;
  StepOutput step(Graph& g, const DocumentStates& doc, const ExtractionState& state) const {
    return score_and_stop(g, doc, encode_history(g, doc, state), state);
  }

  /// log pi(action | state). Selecting requires a remaining sentence; the stop
  /// branch adds the parameter-free log(1/|I_t|).
  Var action_log_prob(Graph& g, const StepOutput& out, const Action& action) const;
  ActionDistribution distribution(const Graph& g, const StepOutput& out) const;

  /// Multi-head pooling of an m x d matrix with the named pooling block.
  Var pool(Graph& g, std::string_view prefix, Var rows) const;

 private:
  Var linear(Graph& g, const std::string& name, Var x) const;
  std::vector<Var> bilstm_stack(Graph& g, std::string_view prefix, std::size_t layers,
                               std::vector<Var> steps, const std::vector<ad::Mask>& masks) const;
  Var attention(Graph& g, const std::string& prefix, Var queries, Var keys_values) const;
  Var history_layer(Graph& g, std::size_t layer, Var x, Var extracted) const;
  Var gru_history(Graph& g, const DocumentStates& doc, const ExtractionState& state) const;

  void add_linear(const std::string& name, std::size_t in, std::size_t out);
  void add_lstm(const std::string& name, std::size_t in, std::size_t hidden);
  void add_pool(const std::string& name, std::size_t heads);

  ad::Parameter<T>& param(const std::string& name) const { return store_->get(name); }

  PolicyConfig config_;
  std::unique_ptr<ad::ParameterStore<T>> store_;
};

extern template class Policy<float>;
extern template class Policy<double>;

}  // namespace memsum
