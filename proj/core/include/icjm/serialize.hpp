#pragma once

#include <nlohmann/json.hpp>

#include "icjm/model.hpp"

namespace icjm {

nlohmann::json to_json(const KnotVector& k);
nlohmann::json to_json(const ModelSpec& spec);
nlohmann::json to_json(const ModelParameters& p);

KnotVector knots_from_json(const nlohmann::json& j);
/// Rebuilds the penalty from its stored order.
ModelSpec spec_from_json(const nlohmann::json& j);
ModelParameters parameters_from_json(const nlohmann::json& j, const ModelSpec& spec);

}  // namespace icjm
