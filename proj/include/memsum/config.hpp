#pragma once

#include <json.hpp>

#include "memsum/corpus.hpp"
#include "memsum/inference.hpp"
#include "memsum/oracle.hpp"
#include "memsum/policy.hpp"
#include "memsum/training.hpp"

// JSON conversions for every configuration struct. from_json overlays: keys
// that are absent keep their current value, unknown keys are rejected.

namespace memsum {

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);
void to_json(nlohmann::json& j, const PolicyConfig& c);
void from_json(const nlohmann::json& j, PolicyConfig& c);
void to_json(nlohmann::json& j, const OracleConfig& c);
void from_json(const nlohmann::json& j, OracleConfig& c);
void to_json(nlohmann::json& j, const InferenceConfig& c);
void from_json(const nlohmann::json& j, InferenceConfig& c);
void to_json(nlohmann::json& j, const TrainerConfig& c);
void from_json(const nlohmann::json& j, TrainerConfig& c);

}  // namespace memsum

namespace memsum::ad {
void to_json(nlohmann::json& j, const AdamConfig& c);
void from_json(const nlohmann::json& j, AdamConfig& c);
}  // namespace memsum::ad
