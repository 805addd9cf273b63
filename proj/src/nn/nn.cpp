#include "dim/nn.hpp"

#include <cmath>

#include "dim/error.hpp"

namespace dim::nn {

Linear Linear::create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng) {
    const double a = std::sqrt(6.0 / double(in + out));
    Matrix w(in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
    Linear l;
    l.weight = store.add(name + ".weight", std::move(w));
    l.bias = store.add(name + ".bias", Matrix::Zero(1, out));
    return l;
}

Var Linear::operator()(Tape& t, ParamStore& store, Var x) const {
    return ad::linear(t, x, t.param(store, weight), t.param(store, bias));
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, Eigen::Index dim) {
    LayerNorm l;
    l.gain = store.add(name + ".gain", Matrix::Ones(1, dim));
    l.bias = store.add(name + ".bias", Matrix::Zero(1, dim));
    return l;
}

Var LayerNorm::operator()(Tape& t, ParamStore& store, Var x) const {
    return ad::layer_norm(t, x, t.param(store, gain), t.param(store, bias));
}

TransformerLayer TransformerLayer::create(ParamStore& store, const std::string& name, Eigen::Index dim, int heads,
                                          Eigen::Index ffn_dim, Rng& rng) {
    if (heads < 1 || dim % heads != 0) throw InvalidArgument(name + ": heads must divide width");
    TransformerLayer l;
    l.heads = heads;
    l.ln_attn = LayerNorm::create(store, name + ".ln_attn", dim);
    l.qkv = Linear::create(store, name + ".qkv", dim, 3 * dim, rng);
    l.out = Linear::create(store, name + ".attn_out", dim, dim, rng);
    l.ln_ffn = LayerNorm::create(store, name + ".ln_ffn", dim);
    l.ff_in = Linear::create(store, name + ".ff_in", dim, ffn_dim, rng);
    l.ff_out = Linear::create(store, name + ".ff_out", ffn_dim, dim, rng);
    return l;
}

Var TransformerLayer::operator()(Tape& t, ParamStore& store, Var x, const std::vector<bool>& key_valid) const {
    const Eigen::Index d = t.value(x).cols();
    Var h = ln_attn(t, store, x);
    Var qkv_all = qkv(t, store, h);
    Var q = ad::slice_cols(t, qkv_all, 0, d);
    Var k = ad::slice_cols(t, qkv_all, d, d);
    Var v = ad::slice_cols(t, qkv_all, 2 * d, d);
    Var a = ad::attention(t, q, k, v, heads, key_valid);
    x = ad::add(t, x, out(t, store, a));
    Var f = ff_out(t, store, ad::gelu(t, ff_in(t, store, ln_ffn(t, store, x))));
    return ad::add(t, x, f);
}

TransformerStack TransformerStack::create(ParamStore& store, const std::string& name, Eigen::Index dim, int depth,
                                          int heads, Eigen::Index ffn_dim, Rng& rng) {
    TransformerStack s;
    for (int i = 0; i < depth; ++i) {
        s.layers.push_back(
            TransformerLayer::create(store, name + ".layer" + std::to_string(i), dim, heads, ffn_dim, rng));
    }
    s.final_norm = LayerNorm::create(store, name + ".final_norm", dim);
    return s;
}

Var TransformerStack::operator()(Tape& t, ParamStore& store, Var x, const std::vector<bool>& key_valid) const {
    for (const auto& l : layers) x = l(t, store, x, key_valid);
    return final_norm(t, store, x);
}

ParamId add_embedding(ParamStore& store, const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng,
                      double stddev) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
    return store.add(name, std::move(m));
}

Matrix sinusoidal_positions(Eigen::Index length, Eigen::Index dim) {
    Matrix pe(length, dim);
    for (Eigen::Index p = 0; p < length; ++p) {
        for (Eigen::Index i = 0; i < dim; ++i) {
            const double expo = double(2 * (i / 2)) / double(dim);
            const double angle = double(p) / std::pow(10000.0, expo);
            pe(p, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

}  // namespace dim::nn
