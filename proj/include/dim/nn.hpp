#pragma once

#include <string>
#include <vector>

#include "dim/autograd.hpp"
#include "dim/rng.hpp"

namespace dim::nn {

using ad::ParamId;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

// Glorot-uniform weight (in x out) and zero bias (1 x out).
struct Linear {
    ParamId weight, bias;

    static Linear create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng);
    Var operator()(Tape& t, ParamStore& store, Var x) const;
};

struct LayerNorm {
    ParamId gain, bias;

    static LayerNorm create(ParamStore& store, const std::string& name, Eigen::Index dim);
    Var operator()(Tape& t, ParamStore& store, Var x) const;
};

// Pre-norm transformer block: x + MHA(LN(x)); x + FFN(LN(x)).
struct TransformerLayer {
    LayerNorm ln_attn, ln_ffn;
    Linear qkv, out, ff_in, ff_out;
    int heads = 1;

    static TransformerLayer create(ParamStore& store, const std::string& name, Eigen::Index dim, int heads,
                                   Eigen::Index ffn_dim, Rng& rng);
    Var operator()(Tape& t, ParamStore& store, Var x, const std::vector<bool>& key_valid = {}) const;
};

// Stack of blocks followed by a final LayerNorm. Zero blocks is allowed and
// reduces to the final LayerNorm.
struct TransformerStack {
    std::vector<TransformerLayer> layers;
    LayerNorm final_norm;

    static TransformerStack create(ParamStore& store, const std::string& name, Eigen::Index dim, int depth,
                                   int heads, Eigen::Index ffn_dim, Rng& rng);
    Var operator()(Tape& t, ParamStore& store, Var x, const std::vector<bool>& key_valid = {}) const;
};

// N(0, stddev^2) initialised table.
ParamId add_embedding(ParamStore& store, const std::string& name, Eigen::Index rows, Eigen::Index cols,
                      Rng& rng, double stddev = 0.02);

// Standard sinusoidal table: PE(p, 2i) = sin(p / 10000^(2i/d)),
// PE(p, 2i+1) = cos(p / 10000^(2i/d)).
Matrix sinusoidal_positions(Eigen::Index length, Eigen::Index dim);

}  // namespace dim::nn
