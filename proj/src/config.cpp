#include "memsum/config.hpp"

#include <initializer_list>
#include <stdexcept>
#include <string>

namespace memsum {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* section) {
  if (!j.is_object()) throw std::invalid_argument(std::string(section) + " config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    for (const char* k : known) found = found || key == k;
    if (!found) throw std::invalid_argument(std::string("unknown ") + section + " config key '" + key + "'");
  }
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<V>();
}

}  // namespace

void to_json(json& j, const CorpusConfig& c) {
  j = {{"max_sentence_tokens", c.max_sentence_tokens},
       {"max_document_sentences", c.max_document_sentences},
       {"pad_token", c.pad_token},
       {"lowercase", c.lowercase}};
}

void from_json(const json& j, CorpusConfig& c) {
  reject_unknown(j, {"max_sentence_tokens", "max_document_sentences", "pad_token", "lowercase"}, "corpus");
  read(j, "max_sentence_tokens", c.max_sentence_tokens);
  read(j, "max_document_sentences", c.max_document_sentences);
  read(j, "pad_token", c.pad_token);
  read(j, "lowercase", c.lowercase);
}

void to_json(json& j, const PolicyConfig& c) {
  j = {{"dim", c.dim},
       {"lse_layers", c.lse_layers},
       {"gce_layers", c.gce_layers},
       {"ehe_layers", c.ehe_layers},
       {"heads", c.heads},
       {"ff_dim", c.ff_dim},
       {"dropout", c.dropout},
       {"pooling_heads", c.pooling_heads},
       {"variant", std::string(to_string(c.variant))},
       {"fixed_k", c.fixed_k}};
}

void from_json(const json& j, PolicyConfig& c) {
  reject_unknown(j,
                 {"dim", "lse_layers", "gce_layers", "ehe_layers", "heads", "ff_dim", "dropout", "pooling_heads",
                  "variant", "fixed_k"},
                 "policy");
  read(j, "dim", c.dim);
  read(j, "lse_layers", c.lse_layers);
  read(j, "gce_layers", c.gce_layers);
  read(j, "ehe_layers", c.ehe_layers);
  read(j, "heads", c.heads);
  read(j, "ff_dim", c.ff_dim);
  read(j, "dropout", c.dropout);
  read(j, "pooling_heads", c.pooling_heads);
  if (auto it = j.find("variant"); it != j.end()) c.variant = parse_variant(it->get<std::string>());
  read(j, "fixed_k", c.fixed_k);
}

void to_json(json& j, const OracleConfig& c) {
  j = {{"branching", c.branching},
       {"max_sentences", c.max_sentences},
       {"beam_cap", c.beam_cap == OracleConfig::kUnbounded ? json(nullptr) : json(c.beam_cap)},
       {"min_gain", c.min_gain}};
}

void from_json(const json& j, OracleConfig& c) {
  reject_unknown(j, {"branching", "max_sentences", "beam_cap", "min_gain"}, "oracle");
  read(j, "branching", c.branching);
  read(j, "max_sentences", c.max_sentences);
  if (auto it = j.find("beam_cap"); it != j.end()) {
    c.beam_cap = it->is_null() ? OracleConfig::kUnbounded : it->get<std::size_t>();
  }
  read(j, "min_gain", c.min_gain);
}

void to_json(json& j, const InferenceConfig& c) {
  j = {{"p_thres", c.p_thres},
       {"max_sentences", c.max_sentences},
       {"output_order", c.output_order == OutputOrder::document ? "document" : "extraction"},
       {"block_trigrams", c.block_trigrams}};
}

void from_json(const json& j, InferenceConfig& c) {
  reject_unknown(j, {"p_thres", "max_sentences", "output_order", "block_trigrams"}, "inference");
  read(j, "p_thres", c.p_thres);
  read(j, "max_sentences", c.max_sentences);
  if (auto it = j.find("output_order"); it != j.end()) {
    const auto s = it->get<std::string>();
    if (s == "document") {
      c.output_order = OutputOrder::document;
    } else if (s == "extraction") {
      c.output_order = OutputOrder::extraction;
    } else {
      throw std::invalid_argument("output_order must be 'document' or 'extraction'");
    }
  }
  read(j, "block_trigrams", c.block_trigrams);
}

void to_json(json& j, const TrainerConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"max_steps", c.max_steps},
       {"validation_interval", c.validation_interval},
       {"patience", c.patience},
       {"seed", c.seed},
       {"adam", c.adam},
       {"validation", c.validation},
       {"sweep_validation", c.sweep_validation},
       {"threads", c.threads}};
}

void from_json(const json& j, TrainerConfig& c) {
  reject_unknown(j,
                 {"batch_size", "max_steps", "validation_interval", "patience", "seed", "adam", "validation",
                  "sweep_validation", "threads"},
                 "trainer");
  read(j, "batch_size", c.batch_size);
  read(j, "max_steps", c.max_steps);
  read(j, "validation_interval", c.validation_interval);
  read(j, "patience", c.patience);
  read(j, "seed", c.seed);
  if (auto it = j.find("adam"); it != j.end()) from_json(*it, c.adam);
  if (auto it = j.find("validation"); it != j.end()) from_json(*it, c.validation);
  read(j, "sweep_validation", c.sweep_validation);
  read(j, "threads", c.threads);
}

}  // namespace memsum

namespace memsum::ad {

void to_json(nlohmann::json& j, const AdamConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"weight_decay", c.weight_decay}};
}

void from_json(const nlohmann::json& j, AdamConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("adam config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "learning_rate" && key != "beta1" && key != "beta2" && key != "epsilon" && key != "weight_decay") {
      throw std::invalid_argument("unknown adam config key '" + key + "'");
    }
  }
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("beta1")) c.beta1 = j["beta1"].get<double>();
  if (j.contains("beta2")) c.beta2 = j["beta2"].get<double>();
  if (j.contains("epsilon")) c.epsilon = j["epsilon"].get<double>();
  if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
}

}  // namespace memsum::ad
