#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dim {

// Set of masked frame indices for a sequence of `length` frames.
struct MaskMap {
    std::vector<std::size_t> masked_indices;  // sorted, unique
    std::size_t length = 0;
    double percent = 0.0;

    bool empty() const { return masked_indices.empty(); }
    std::vector<bool> flags() const;
};

// round(p/100 * T) with round-half-to-even.
std::size_t mask_count(std::size_t length, double percent);

// Draws exactly mask_count(length, percent) distinct frames uniformly
// without replacement. Deterministic for a given (length, percent, seed).
MaskMap uniform_mask(std::size_t length, double percent, std::uint64_t seed);

// A token covering frames [i*stride, (i+1)*stride) is masked iff any of its
// frames (below `length`) is masked.
std::vector<bool> token_mask(const MaskMap& mask, std::size_t stride);

}  // namespace dim
