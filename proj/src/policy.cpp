#include "memsum/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace memsum {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_lse: return "no_lse";
    case Variant::no_gce: return "no_gce";
    case Variant::no_ehe: return "no_ehe";
    case Variant::gru_ehe: return "gru_ehe";
    case Variant::no_auto_stop: return "no_auto_stop";
    case Variant::stop_sentence: return "stop_sentence";
  }
  return "full";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::full, Variant::no_lse, Variant::no_gce, Variant::no_ehe, Variant::gru_ehe,
                 Variant::no_auto_stop, Variant::stop_sentence}) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
}

void PolicyConfig::validate() const {
  if (dim == 0 || lse_layers == 0 || gce_layers == 0 || ehe_layers == 0 || heads == 0 ||
      ff_dim == 0 || pooling_heads == 0) {
    throw std::invalid_argument("policy config: sizes and layer counts must be at least 1");
  }
  if (dim % 2 != 0) throw std::invalid_argument("policy config: dim must be even (bi-LSTM halves)");
  if (dim % heads != 0) throw std::invalid_argument("policy config: dim not divisible by heads");
  if (dim % pooling_heads != 0) {
    throw std::invalid_argument("policy config: dim not divisible by pooling_heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("policy config: dropout must be in [0, 1)");
  if (variant == Variant::no_auto_stop && fixed_k == 0) {
    throw std::invalid_argument("policy config: no_auto_stop needs fixed_k >= 1");
  }
}

bool PolicyConfig::has_stop_head() const {
  return variant == Variant::full || variant == Variant::no_lse || variant == Variant::no_gce ||
         variant == Variant::gru_ehe;
}

ExtractionState ExtractionState::initial(std::size_t sentences) {
  ExtractionState s;
  s.remaining.resize(sentences);
  std::iota(s.remaining.begin(), s.remaining.end(), std::size_t{0});
  return s;
}

std::vector<std::size_t> ExtractionState::extracted_set() const {
  auto out = extracted;
  std::sort(out.begin(), out.end());
  return out;
}

bool ExtractionState::is_remaining(std::size_t index) const {
  return std::binary_search(remaining.begin(), remaining.end(), index);
}

void ExtractionState::select(std::size_t index) {
  auto it = std::lower_bound(remaining.begin(), remaining.end(), index);
  if (it == remaining.end() || *it != index) {
    throw std::invalid_argument("sentence " + std::to_string(index) + " is not remaining");
  }
  remaining.erase(it);
  extracted.push_back(index);
}

std::vector<double> ActionDistribution::normalized() const {
  const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] / total;
  return out;
}

double ActionDistribution::total_mass() const {
  const auto n = normalized();
  return (1.0 - p_stop) * std::accumulate(n.begin(), n.end(), 0.0) + p_stop;
}

template <typename T>
Policy<T>::Policy(PolicyConfig config, const EmbeddingTable& embeddings, std::uint64_t seed)
    : config_(std::move(config)), store_(std::make_unique<ad::ParameterStore<T>>(seed)) {
  config_.validate();
  const std::size_t d = config_.dim;
  if (embeddings.dim() != d) {
    throw std::invalid_argument("embedding dimension " + std::to_string(embeddings.dim()) +
                                " does not match policy dim " + std::to_string(d));
  }
  ad::Matrix<T> table(embeddings.rows(), d);
  for (std::size_t i = 0; i < table.size(); ++i) table[i] = static_cast<T>(embeddings.matrix[i]);
  store_->add("embedding", std::move(table), embeddings.trainable);

  const std::size_t half = d / 2;
  if (config_.variant != Variant::no_lse) {
    for (std::size_t k = 0; k < config_.lse_layers; ++k) {
      add_lstm("lse." + std::to_string(k) + ".fwd", d, half);
      add_lstm("lse." + std::to_string(k) + ".bwd", d, half);
    }
    add_pool("lse.pool", config_.pooling_heads);
  }
  if (config_.variant == Variant::stop_sentence) store_->add("stop_sentence.local", 1, d);
  if (config_.variant != Variant::no_gce) {
    for (std::size_t k = 0; k < config_.gce_layers; ++k) {
      add_lstm("gce." + std::to_string(k) + ".fwd", d, half);
      add_lstm("gce." + std::to_string(k) + ".bwd", d, half);
    }
  }
  if (config_.variant == Variant::gru_ehe) {
    for (const char* gate : {"z", "r", "n"}) {
      store_->add(std::string("gru.") + gate + ".w", d, d);
      store_->add(std::string("gru.") + gate + ".u", d, d);
      store_->add(std::string("gru.") + gate + ".b", 1, d, ad::Init::zeros);
    }
  } else if (config_.variant != Variant::no_ehe) {
    for (std::size_t k = 0; k < config_.ehe_layers; ++k) {
      const std::string p = "ehe." + std::to_string(k);
      for (const char* block : {".self", ".cross"}) {
        for (const char* proj : {".q", ".k", ".v", ".o"}) add_linear(p + block + proj, d, d);
      }
      for (const char* ln : {".ln1", ".ln2", ".ln3"}) {
        store_->add(p + ln + ".gain", 1, d, ad::Init::ones);
        store_->add(p + ln + ".bias", 1, d, ad::Init::zeros);
      }
      add_linear(p + ".ff1", d, config_.ff_dim);
      add_linear(p + ".ff2", config_.ff_dim, d);
    }
  }
  add_linear("ext.fc1", 3 * d, 2 * d);
  add_linear("ext.fc2", 2 * d, d);
  add_linear("ext.score", d, 1);
  if (config_.has_stop_head()) {
    add_pool("ext.stop_pool", config_.pooling_heads);
    add_linear("ext.stop", d, 1);
  }
}

template <typename T>
void Policy<T>::add_linear(const std::string& name, std::size_t in, std::size_t out) {
  store_->add(name + ".weight", in, out);
  store_->add(name + ".bias", 1, out, ad::Init::zeros);
}

template <typename T>
void Policy<T>::add_lstm(const std::string& name, std::size_t in, std::size_t hidden) {
  store_->add(name + ".w", in, 4 * hidden);
  store_->add(name + ".u", hidden, 4 * hidden);
  auto& b = store_->add(name + ".b", 1, 4 * hidden, ad::Init::zeros);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b.value[j] = T{1};  // forget gate
}

template <typename T>
void Policy<T>::add_pool(const std::string& name, std::size_t heads) {
  add_linear(name + ".attn", config_.dim, heads);
  add_linear(name + ".value", config_.dim, config_.dim);
  add_linear(name + ".out", config_.dim, config_.dim);
}

template <typename T>
ad::Var Policy<T>::linear(Graph& g, const std::string& name, Var x) const {
  return g.linear(x, g.parameter(param(name + ".weight")), g.parameter(param(name + ".bias")));
}

template <typename T>
ad::Var Policy<T>::pool(Graph& g, std::string_view prefix, Var rows) const {
  const std::string p(prefix);
  if (g.value(rows).rows() == 0) throw std::invalid_argument("multi-head pooling over zero rows");
  Var logits = linear(g, p + ".attn", rows);           // m x heads
  Var weights = g.softmax_rows(g.transpose(logits));   // heads x m
  Var values = linear(g, p + ".value", rows);          // m x d
  Var pooled = g.head_diagonal(g.matmul(weights, values), config_.pooling_heads);
  return linear(g, p + ".out", pooled);
}

template <typename T>
std::vector<ad::Var> Policy<T>::bilstm_stack(Graph& g, std::string_view prefix, std::size_t layers,
                                             std::vector<Var> steps,
                                             const std::vector<ad::Mask>& masks) const {
  const std::size_t half = config_.dim / 2;
  const std::size_t batch = g.value(steps.front()).rows();
  static const ad::Mask kAllValid;
  auto mask_at = [&](std::size_t t) -> const ad::Mask& { return masks.empty() ? kAllValid : masks[t]; };
  for (std::size_t k = 0; k < layers; ++k) {
    const std::string base = std::string(prefix) + "." + std::to_string(k);
    std::vector<Var> fwd(steps.size()), bwd(steps.size());
    for (int dir = 0; dir < 2; ++dir) {
      const std::string name = base + (dir == 0 ? ".fwd" : ".bwd");
      Var w = g.parameter(param(name + ".w"));
      Var u = g.parameter(param(name + ".u"));
      Var b = g.parameter(param(name + ".b"));
      Var state = g.zeros(batch, 2 * half);
      for (std::size_t i = 0; i < steps.size(); ++i) {
        const std::size_t t = dir == 0 ? i : steps.size() - 1 - i;
        state = g.lstm_cell(steps[t], state, w, u, b, mask_at(t));
        (dir == 0 ? fwd : bwd)[t] = g.slice_cols(state, 0, half);
      }
    }
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const Var parts[] = {fwd[t], bwd[t]};
      steps[t] = g.concat_cols(parts);
    }
  }
  return steps;
}

template <typename T>
ad::Var Policy<T>::encode_local(Graph& g, const EncodedDocument& doc) const {
  const std::size_t n = doc.valid_sentences();
  if (n == 0) throw std::invalid_argument("encode_local: document has no valid sentences");
  auto& table = param("embedding");

  std::vector<Var> sentence_vectors(n);
  if (config_.variant == Variant::no_lse) {
    for (std::size_t s = 0; s < n; ++s) {
      std::vector<std::size_t> ids(doc.token_counts[s]);
      for (std::size_t t = 0; t < ids.size(); ++t) ids[t] = doc.id(s, t);
      sentence_vectors[s] = g.mean_rows(g.embedding_lookup(table, ids), {});
    }
    return g.concat_rows(sentence_vectors);
  }

  const std::size_t longest =
      *std::max_element(doc.token_counts.begin(), doc.token_counts.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<Var> steps(longest);
  std::vector<ad::Mask> masks(longest, ad::Mask(n, 0));
  std::vector<std::size_t> ids(n);
  for (std::size_t t = 0; t < longest; ++t) {
    for (std::size_t s = 0; s < n; ++s) {
      ids[s] = doc.id(s, t);
      masks[t][s] = t < doc.token_counts[s] ? 1 : 0;
    }
    steps[t] = g.embedding_lookup(table, ids);
  }
  const auto outputs = bilstm_stack(g, "lse", config_.lse_layers, std::move(steps), masks);
  Var stacked = g.concat_rows(outputs);  // row t * n + s
  std::vector<std::size_t> rows;
  for (std::size_t s = 0; s < n; ++s) {
    rows.clear();
    for (std::size_t t = 0; t < doc.token_counts[s]; ++t) rows.push_back(t * n + s);
    sentence_vectors[s] = pool(g, "lse.pool", g.gather_rows(stacked, rows));
  }
  return g.concat_rows(sentence_vectors);
}

template <typename T>
ad::Var Policy<T>::encode_global(Graph& g, Var local) const {
  const std::size_t n = g.value(local).rows();
  if (config_.variant == Variant::no_gce) return g.zeros(n, config_.dim);
  std::vector<Var> steps(n);
  for (std::size_t t = 0; t < n; ++t) steps[t] = g.slice_rows(local, t, 1);
  return g.concat_rows(bilstm_stack(g, "gce", config_.gce_layers, std::move(steps), {}));
}

template <typename T>
DocumentStates Policy<T>::encode(Graph& g, const EncodedDocument& doc) const {
  DocumentStates states;
  states.local = encode_local(g, doc);
  if (config_.variant == Variant::stop_sentence) {
    const Var parts[] = {states.local, g.parameter(param("stop_sentence.local"))};
    states.local = g.concat_rows(parts);
    states.stop_sentence = g.value(states.local).rows() - 1;
  }
  states.global = encode_global(g, states.local);
  states.sentences = g.value(states.local).rows();
  return states;
}

template <typename T>
ad::Var Policy<T>::attention(Graph& g, const std::string& prefix, Var queries, Var keys_values) const {
  Var q = linear(g, prefix + ".q", queries);
  Var k = linear(g, prefix + ".k", keys_values);
  Var v = linear(g, prefix + ".v", keys_values);
  const std::size_t heads = config_.heads;
  const std::size_t width = config_.dim / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(width)));
  std::vector<Var> outputs(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : g.slice_cols(q, h * width, width);
    Var kh = heads == 1 ? k : g.slice_cols(k, h * width, width);
    Var vh = heads == 1 ? v : g.slice_cols(v, h * width, width);
    Var weights = g.softmax_rows(g.scale(g.matmul_nt(qh, kh), scale));
    outputs[h] = g.matmul(weights, vh);
  }
  Var joined = heads == 1 ? outputs[0] : g.concat_cols(outputs);
  return linear(g, prefix + ".o", joined);
}

template <typename T>
ad::Var Policy<T>::history_layer(Graph& g, std::size_t layer, Var x, Var extracted) const {
  const std::string p = "ehe." + std::to_string(layer);
  const double rate = config_.dropout;
  auto norm = [&](const char* ln, Var v) {
    return g.layer_norm(v, g.parameter(param(p + ln + ".gain")), g.parameter(param(p + ln + ".bias")));
  };
  x = norm(".ln1", g.add(x, g.dropout(attention(g, p + ".self", x, x), rate)));
  x = norm(".ln2", g.add(x, g.dropout(attention(g, p + ".cross", x, extracted), rate)));
  Var ff = linear(g, p + ".ff2", g.relu(linear(g, p + ".ff1", x)));
  return norm(".ln3", g.add(x, g.dropout(ff, rate)));
}

template <typename T>
ad::Var Policy<T>::gru_history(Graph& g, const DocumentStates& doc, const ExtractionState& state) const {
  auto gate = [&](const char* name, Var x, Var h) {
    const std::string p = std::string("gru.") + name;
    return g.add(g.add(g.matmul(x, g.parameter(param(p + ".w"))), g.matmul(h, g.parameter(param(p + ".u")))),
                 g.parameter(param(p + ".b")));
  };
  Var h = g.zeros(1, config_.dim);
  for (std::size_t idx : state.extracted) {
    Var x = g.slice_rows(doc.local, idx, 1);
    Var z = g.sigmoid(gate("z", x, h));
    Var r = g.sigmoid(gate("r", x, h));
    const std::string p = "gru.n";
    Var cand = g.tanh(g.add(g.add(g.matmul(x, g.parameter(param(p + ".w"))),
                                  g.matmul(g.mul(r, h), g.parameter(param(p + ".u")))),
                            g.parameter(param(p + ".b"))));
    h = g.add(cand, g.mul(z, g.sub(h, cand)));  // (1 - z) * cand + z * h
  }
  const std::vector<std::size_t> broadcast(state.remaining.size(), 0);
  return g.gather_rows(h, broadcast);
}

template <typename T>
ad::Var Policy<T>::encode_history(Graph& g, const DocumentStates& doc, const ExtractionState& state) const {
  const std::size_t n_rem = state.remaining.size();
  if (state.step() == 0 || config_.variant == Variant::no_ehe) return g.zeros(n_rem, config_.dim);
  if (config_.variant == Variant::gru_ehe) return gru_history(g, doc, state);
  if (n_rem == 0) return g.zeros(0, config_.dim);
  // The extracted side is an unordered set; a canonical order makes the
  // result independent of extraction order down to the last bit.
  const auto extracted = state.extracted_set();
  Var x = g.gather_rows(doc.local, state.remaining);
  Var ext = g.gather_rows(doc.local, extracted);
  for (std::size_t k = 0; k < config_.ehe_layers; ++k) x = history_layer(g, k, x, ext);
  return x;
}

template <typename T>
StepOutput Policy<T>::score_and_stop(Graph& g, const DocumentStates& doc, Var history,
                                     const ExtractionState& state) const {
  if (state.remaining.empty()) throw std::invalid_argument("score_and_stop: no remaining sentences");
  StepOutput out;
  out.remaining = state.remaining;
  out.history = history;
  const Var parts[] = {g.gather_rows(doc.local, state.remaining), g.gather_rows(doc.global, state.remaining),
                       history};
  Var x = g.concat_cols(parts);
  Var h1 = g.relu(linear(g, "ext.fc1", x));
  out.hidden = g.relu(linear(g, "ext.fc2", h1));
  out.score_logits = linear(g, "ext.score", out.hidden);
  out.scores = g.sigmoid(out.score_logits);
  if (config_.has_stop_head()) out.stop_logit = linear(g, "ext.stop", pool(g, "ext.stop_pool", out.hidden));
  return out;
}

template <typename T>
ad::Var Policy<T>::action_log_prob(Graph& g, const StepOutput& out, const Action& action) const {
  const std::size_t n = out.remaining.size();
  if (action.stop) {
    if (config_.variant == Variant::stop_sentence) {
      throw std::invalid_argument("stop_sentence policy stops by selecting its stop sentence");
    }
    if (!config_.has_stop_head()) throw std::invalid_argument("policy variant has no stop action");
    // log p_stop + log(1/|I_t|); the second term is a constant.
    return g.add_scalar(g.log_sigmoid(out.stop_logit), static_cast<T>(-std::log(static_cast<double>(n))));
  }
  auto it = std::lower_bound(out.remaining.begin(), out.remaining.end(), action.sentence);
  if (it == out.remaining.end() || *it != action.sentence) {
    throw std::invalid_argument("action_log_prob: sentence " + std::to_string(action.sentence) +
                                " is not remaining");
  }
  const auto k = static_cast<std::size_t>(it - out.remaining.begin());
  Var log_prob = g.sub(g.log_sigmoid(g.element(out.score_logits, k, 0)), g.log(g.sum(out.scores)));
  if (config_.has_stop_head()) log_prob = g.add(log_prob, g.log_sigmoid(g.negate(out.stop_logit)));
  return log_prob;
}

template <typename T>
ActionDistribution Policy<T>::distribution(const Graph& g, const StepOutput& out) const {
  ActionDistribution d;
  d.remaining = out.remaining;
  const auto& u = g.value(out.scores);
  d.scores.assign(u.values().begin(), u.values().end());
  if (out.stop_logit.valid()) {
    const double z = static_cast<double>(g.item(out.stop_logit));
    d.p_stop = 1.0 / (1.0 + std::exp(-z));
  }
  return d;
}

template class Policy<float>;
template class Policy<double>;

}  // namespace memsum
