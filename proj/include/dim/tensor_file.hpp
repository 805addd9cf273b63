#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "dim/types.hpp"

namespace dim {

enum class DType : std::uint8_t { Float32 = 1, Int32 = 2 };

// N-dimensional row-major array as stored in a DIMT file.
//
// Layout (all integers little-endian):
//   "DIMT" | u32 version = 1 | u32 ndim | ndim x u64 dims | u8 dtype | payload
struct Tensor {
    std::vector<std::uint64_t> shape;
    std::variant<std::vector<float>, std::vector<std::int32_t>> data;

    DType dtype() const {
        return std::holds_alternative<std::vector<float>>(data) ? DType::Float32 : DType::Int32;
    }
    std::uint64_t element_count() const;

    const std::vector<float>& floats() const { return std::get<std::vector<float>>(data); }
    const std::vector<std::int32_t>& ints() const { return std::get<std::vector<std::int32_t>>(data); }

    static Tensor from_floats(std::vector<std::uint64_t> shape, std::vector<float> values);
    static Tensor from_ints(std::vector<std::uint64_t> shape, std::vector<std::int32_t> values);

    // 2-D float32 tensor; values are rounded to float32.
    static Tensor from_matrix(const Matrix& m);
    // Requires a 2-D float32 tensor (a 1-D tensor becomes a single row).
    Matrix to_matrix() const;

    bool operator==(const Tensor&) const = default;
};

inline constexpr std::uint32_t kTensorFileVersion = 1;

std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes);

void save_tensor_file(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor_file(const std::filesystem::path& path);

// Convenience wrappers for the common matrix case.
void save_matrix(const Matrix& m, const std::filesystem::path& path);
Matrix load_matrix(const std::filesystem::path& path);

// Rounds every entry to the nearest float32 so the in-memory value equals
// what a save/load cycle produces.
void round_to_float32(Matrix& m);

}  // namespace dim
