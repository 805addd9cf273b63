#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dim/autograd.hpp"

namespace dim {

// 64-bit FNV-1a; stable across platforms, used for artifact fingerprints.
std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Rounds every parameter to float32 so a saved checkpoint reproduces the
// in-memory model exactly.
void round_params_to_float32(ad::ParamStore& store);

// One DIMT file per parameter, `<dir>/<name>.dimt`.
void save_params(const ad::ParamStore& store, const std::filesystem::path& dir);
// Loads values into an already-shaped store; shapes must agree.
void load_params(ad::ParamStore& store, const std::filesystem::path& dir);

// Fingerprint of all parameter names and float32 values.
std::string params_hash(const ad::ParamStore& store);

// Bitwise comparison of parameter values whose names start with `prefix`.
bool params_equal(const ad::ParamStore& a, const ad::ParamStore& b, const std::string& prefix = "");

}  // namespace dim
