#pragma once

// JSON encodings for the numeric types, models and TMAs.
//
// Matrices are written as {"rows", "cols", "data"} with row-major data so that
// empty shapes survive; readers also accept nested row arrays and bare
// numbers (1x1). Doubles are printed in shortest round-trip form, so a Tma
// saved and reloaded compares bit-identical.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "posmdp/belief.hpp"
#include "posmdp/model_spec.hpp"
#include "posmdp/tma_graph.hpp"

namespace posmdp::io {

using Json = nlohmann::json;

inline constexpr const char* kTmaFormat = "posmdp.tma";
inline constexpr int kTmaVersion = 1;

Json to_json(const Matrix& m);
Json to_json(const Vector& v);
Json to_json(const belief::GaussianBelief& b);

Matrix matrix_from_json(const Json& j);
Vector vector_from_json(const Json& j);
belief::GaussianBelief belief_from_json(const Json& j);

/// Accepts {"type": "scalar" | "single_integrator_2d" | "double_integrator_2d", ...}
/// or explicit {"A", "G", "C", "Q", "R_obs"}, plus optional "step_reward" and
/// "constraints" blocks.
ModelSpec model_spec_from_json(const Json& j);
Json to_json(const ModelSpec& spec);

/// {"lqr": {"state_weight", "control_weight"}} or {"fixed": matrix}. A number
/// as a weight means that multiple of the identity.
belief::GainSpec gain_spec_from_json(const Json& j, int state_dim, int control_dim);

/// Sampling block for construct_tma. Missing keys keep their defaults.
tma::SamplingConfig sampling_config_from_json(const Json& j, int state_dim, int control_dim);

Json to_json(const tma::Tma& tma);
tma::Tma tma_from_json(const Json& j);

void save_tma(const tma::Tma& tma, const std::filesystem::path& path);
tma::Tma load_tma(const std::filesystem::path& path);

/// Reads and parses a JSON file; failures become ConfigError.
Json read_json_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// 64-bit FNV-1a of the bytes, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);

/// j[key] when present, else `fallback`.
template <typename T>
T value_or(const Json& j, const char* key, T fallback) {
  auto it = j.find(key);
  return it == j.end() || it->is_null() ? fallback : it->template get<T>();
}

}  // namespace posmdp::io
