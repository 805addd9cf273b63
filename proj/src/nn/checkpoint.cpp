#include "dim/checkpoint.hpp"

#include <cstdio>
#include <cstring>

#include "dim/error.hpp"
#include "dim/tensor_file.hpp"

namespace dim {

std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void round_params_to_float32(ad::ParamStore& store) {
    for (auto& p : store.all()) round_to_float32(p.value);
}

void save_params(const ad::ParamStore& store, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& p : store.all()) save_matrix(p.value, dir / (p.name + ".dimt"));
}

void load_params(ad::ParamStore& store, const std::filesystem::path& dir) {
    for (auto& p : store.all()) {
        const auto path = dir / (p.name + ".dimt");
        if (!std::filesystem::exists(path)) throw MissingPrerequisite("checkpoint parameter missing: " + path.string());
        Matrix m = load_matrix(path);
        if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
            throw InvalidArgument("checkpoint parameter " + p.name + " has mismatched shape");
        }
        p.value = std::move(m);
    }
}

std::string params_hash(const ad::ParamStore& store) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : store.all()) {
        h = fnv1a64(p.name, h);
        h = fnv1a64(encode_tensor(Tensor::from_matrix(p.value)), h);
    }
    return hex64(h);
}

bool params_equal(const ad::ParamStore& a, const ad::ParamStore& b, const std::string& prefix) {
    for (const auto& p : a.all()) {
        if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
        if (!b.contains(p.name)) return false;
        const auto& q = b[b.find(p.name)];
        if (p.value.rows() != q.value.rows() || p.value.cols() != q.value.cols()) return false;
        if (std::memcmp(p.value.data(), q.value.data(), sizeof(double) * p.value.size()) != 0) return false;
    }
    return true;
}

}  // namespace dim
