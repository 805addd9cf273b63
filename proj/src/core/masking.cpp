#include "dim/masking.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <numeric>

#include "dim/error.hpp"
#include "dim/rng.hpp"

namespace dim {

std::vector<bool> MaskMap::flags() const {
    std::vector<bool> f(length, false);
    for (auto i : masked_indices) f[i] = true;
    return f;
}

std::size_t mask_count(std::size_t length, double percent) {
    if (!(percent >= 0.0 && percent <= 100.0)) {
        throw InvalidArgument("mask percentage must lie in [0, 100]");
    }
    const double exact = percent * double(length) / 100.0;
    // nearbyint honours the current rounding mode; force ties-to-even.
    const int saved = std::fegetround();
    std::fesetround(FE_TONEAREST);
    const double r = std::nearbyint(exact);
    std::fesetround(saved);
    return std::min(length, static_cast<std::size_t>(r));
}

MaskMap uniform_mask(std::size_t length, double percent, std::uint64_t seed) {
    if (length < 1) throw InvalidArgument("uniform_mask: length must be >= 1");
    const std::size_t k = mask_count(length, percent);
    std::vector<std::size_t> pool(length);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    Rng rng(seed);
    // Partial Fisher-Yates: the first k slots become a uniform k-subset.
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(length - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return MaskMap{std::move(pool), length, percent};
}

std::vector<bool> token_mask(const MaskMap& mask, std::size_t stride) {
    if (stride < 1) throw InvalidArgument("token_mask: stride must be >= 1");
    const std::size_t tokens = (mask.length + stride - 1) / stride;
    std::vector<bool> out(tokens, false);
    for (auto f : mask.masked_indices) out[f / stride] = true;
    return out;
}

}  // namespace dim
