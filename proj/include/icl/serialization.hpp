// JSON serialization for problem specs, model checkpoints, and experiment
// configs. Matrices are row-major nested arrays.
//
// ProblemSpec document: {d, K, n, sigma, cov_x, tasks: [{mu, cov_beta, pi}]}
#pragma once

#include <json.hpp>
#include <string>

#include "icl/predictors.hpp"
#include "icl/problem_spec.hpp"
#include "icl/trainer.hpp"

namespace icl {

using nlohmann::json;

json matrix_to_json(const Matrix& m);
json vector_to_json(const Vector& v);
Matrix matrix_from_json(const json& j, const std::string& key);
Vector vector_from_json(const json& j, const std::string& key);

json spec_to_json(const ProblemSpec& spec);
// Validates and symmetrizes. `require_n` toggles whether the "n" key must be
// present (experiment configs supply n via n_values instead).
ProblemSpec spec_from_json(const json& j, bool require_n = true);

json model_to_json(const ReducedModel& model);
json model_to_json(const FullModel& model);
ReducedModel reduced_model_from_json(const json& j);
FullModel full_model_from_json(const json& j);

json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const json& j);

json load_json_file(const std::string& path);
void save_json_file(const std::string& path, const json& j);

}  // namespace icl
