#include "dim/vq.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "dim/checkpoint.hpp"
#include "dim/error.hpp"
#include "dim/json_fields.hpp"
#include "dim/tensor_file.hpp"

namespace dim {

using nlohmann::json;

std::string to_string(Role r) { return r == Role::Speaker ? "speaker" : "listener"; }

Role parse_role(const std::string& s) {
    if (s == "speaker") return Role::Speaker;
    if (s == "listener") return Role::Listener;
    throw InvalidArgument("unknown role '" + s + "' (expected speaker|listener)");
}

void VQConfig::validate() const {
    if (codebook_size < 1 || code_dim < 1 || stride < 1 || hidden_dim < 1 || depth < 0 || heads < 1 ||
        ffn_dim < 1 || steps < 0 || batch_size < 1) {
        throw InvalidArgument("VQConfig: sizes must be positive");
    }
    if (hidden_dim % heads != 0) throw InvalidArgument("VQConfig: heads must divide hidden_dim");
    if (!(beta >= 0.0) || !(gamma >= 0.0)) throw InvalidArgument("VQConfig: beta and gamma must be >= 0");
    if (!(learning_rate > 0.0)) throw InvalidArgument("VQConfig: learning_rate must be > 0");
    if (codebook_init != "data" && codebook_init != "uniform") {
        throw InvalidArgument("VQConfig: codebook_init must be 'data' or 'uniform'");
    }
}

json to_json(const VQConfig& c) {
    return json{{"codebook_size", c.codebook_size}, {"code_dim", c.code_dim},
                {"stride", c.stride},               {"beta", c.beta},
                {"gamma", c.gamma},                 {"hidden_dim", c.hidden_dim},
                {"depth", c.depth},                 {"heads", c.heads},
                {"ffn_dim", c.ffn_dim},             {"learning_rate", c.learning_rate},
                {"grad_clip", c.grad_clip},         {"steps", c.steps},
                {"batch_size", c.batch_size},       {"codebook_init", c.codebook_init},
                {"seed", c.seed}};
}

VQConfig vq_config_from_json(const json& j, const std::string& path, VQConfig c) {
    FieldReader r(j, path);
    r.get("codebook_size", c.codebook_size);
    r.get("code_dim", c.code_dim);
    r.get("stride", c.stride);
    r.get("beta", c.beta);
    r.get("gamma", c.gamma);
    r.get("hidden_dim", c.hidden_dim);
    r.get("depth", c.depth);
    r.get("heads", c.heads);
    r.get("ffn_dim", c.ffn_dim);
    r.get("learning_rate", c.learning_rate);
    r.get("grad_clip", c.grad_clip);
    r.get("steps", c.steps);
    r.get("batch_size", c.batch_size);
    r.get("codebook_init", c.codebook_init);
    r.get("seed", c.seed);
    r.finish();
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return c;
}

// ------------------------------------------------------------------ VQModel

VQModel::VQModel(Role role, VQConfig config) : role_(role), config_(std::move(config)) {
    config_.validate();
    Rng rng(mix_seed(config_.seed, {0x5651, static_cast<std::uint64_t>(role_)}));
    const Eigen::Index patch = Eigen::Index(config_.stride) * kMotionDim;
    const Eigen::Index h = config_.hidden_dim;
    enc_in_ = nn::Linear::create(params_, "enc.in", patch, h, rng);
    enc_stack_ = nn::TransformerStack::create(params_, "enc.stack", h, config_.depth, config_.heads, config_.ffn_dim, rng);
    enc_out_ = nn::Linear::create(params_, "enc.out", h, config_.code_dim, rng);

    const double a = 1.0 / double(config_.codebook_size);
    Matrix cb(config_.codebook_size, config_.code_dim);
    for (Eigen::Index i = 0; i < cb.size(); ++i) cb.data()[i] = rng.uniform(-a, a);
    codebook_ = params_.add("codebook", std::move(cb));

    dec_in_ = nn::Linear::create(params_, "dec.in", config_.code_dim, h, rng);
    dec_stack_ = nn::TransformerStack::create(params_, "dec.stack", h, config_.depth, config_.heads, config_.ffn_dim, rng);
    dec_out_ = nn::Linear::create(params_, "dec.out", h, patch, rng);
    usage_.assign(static_cast<std::size_t>(config_.codebook_size), 0);
}

void VQModel::record_usage(const std::vector<int>& tokens) {
    for (int k : tokens) ++usage_[static_cast<std::size_t>(k)];
}

void VQModel::reset_usage() { std::fill(usage_.begin(), usage_.end(), 0); }

void VQModel::set_usage_counts(std::vector<std::uint64_t> counts) {
    if (counts.size() != usage_.size()) throw InvalidArgument("usage counts do not match codebook size");
    usage_ = std::move(counts);
}

Eigen::Index VQModel::token_count(Eigen::Index frames) const {
    return (frames + config_.stride - 1) / config_.stride;
}

void VQModel::set_encoder_trainable(bool on) {
    params_.set_trainable_prefix("enc.", on);
    params_.set_trainable_prefix("codebook", on);
}

void VQModel::set_decoder_trainable(bool on) { params_.set_trainable_prefix("dec.", on); }

ad::Var VQModel::encode_graph(ad::Tape& t, const Matrix& frames) {
    if (frames.cols() != kMotionDim) throw InvalidArgument("VQ encoder expects 56 columns");
    const Eigen::Index T = frames.rows();
    const Eigen::Index n = token_count(T);
    const Eigen::Index w = config_.stride;
    Matrix padded(n * w, kMotionDim);
    padded.topRows(T) = frames;
    for (Eigen::Index r = T; r < n * w; ++r) padded.row(r) = frames.row(T - 1);
    ad::Var x = t.constant(Eigen::Map<const Matrix>(padded.data(), n, w * kMotionDim));
    ad::Var h = enc_in_(t, params_, x);
    h = ad::add(t, h, t.constant(nn::sinusoidal_positions(n, config_.hidden_dim)));
    h = enc_stack_(t, params_, h);
    return enc_out_(t, params_, h);
}

ad::Var VQModel::decode_graph(ad::Tape& t, ad::Var latents, Eigen::Index length) {
    const Eigen::Index n = t.value(latents).rows();
    ad::Var h = dec_in_(t, params_, latents);
    h = ad::add(t, h, t.constant(nn::sinusoidal_positions(n, config_.hidden_dim)));
    h = dec_stack_(t, params_, h);
    ad::Var patches = dec_out_(t, params_, h);
    ad::Var frames = ad::reshape(t, patches, n * config_.stride, kMotionDim);
    if (length > 0 && length < n * config_.stride) frames = ad::slice_rows(t, frames, 0, length);
    return frames;
}

// ------------------------------------------------------------- quantisation

std::vector<int> quantize(const Matrix& latents, const Matrix& entries) {
    if (latents.cols() != entries.cols()) throw InvalidArgument("quantize: width mismatch");
    if (entries.rows() < 1) throw InvalidArgument("quantize: empty codebook");
    if (!latents.allFinite()) throw DivergenceError("quantize: non-finite latent (training diverged?)");
    std::vector<int> out(static_cast<std::size_t>(latents.rows()));
    for (Eigen::Index i = 0; i < latents.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_k = 0;
        for (Eigen::Index k = 0; k < entries.rows(); ++k) {
            const double d = (latents.row(i) - entries.row(k)).squaredNorm();
            if (d < best) {
                best = d;
                best_k = static_cast<int>(k);
            }
        }
        out[static_cast<std::size_t>(i)] = best_k;
    }
    return out;
}

EncodeResult vq_encode_const(const VQModel& model, const MotionSequence& motion) {
    // Graph building binds parameters mutably; inference never writes them.
    auto& m = const_cast<VQModel&>(model);
    ad::Tape t(false);
    ad::Var z = m.encode_graph(t, motion.frames());
    EncodeResult r;
    r.latents = t.value(z);
    r.tokens.tokens = quantize(r.latents, model.codebook());
    return r;
}

EncodeResult vq_encode(VQModel& model, const MotionSequence& motion) {
    EncodeResult r = vq_encode_const(model, motion);
    model.record_usage(r.tokens.tokens);
    return r;
}

MotionSequence vq_decode(const VQModel& model, const TokenSequence& tokens) {
    if (tokens.tokens.empty()) throw InvalidArgument("vq_decode: empty token sequence");
    for (int k : tokens.tokens) {
        if (k < 0 || k >= model.config().codebook_size) throw InvalidArgument("vq_decode: token out of range");
    }
    auto& m = const_cast<VQModel&>(model);
    ad::Tape t(false);
    ad::Var cb = t.param(m.params(), m.codebook_id());
    ad::Var q = ad::gather_rows(t, cb, tokens.tokens);
    ad::Var out = m.decode_graph(t, q);
    return MotionSequence(t.value(out));
}

MotionSequence vq_reconstruct(const VQModel& model, const MotionSequence& motion) {
    const EncodeResult enc = vq_encode_const(model, motion);
    const MotionSequence full = vq_decode(model, enc.tokens);
    return MotionSequence(full.frames().topRows(motion.length()));
}

// -------------------------------------------------------------------- losses

VQLossGraph vq_loss_graph(ad::Tape& t, VQModel& model, const Matrix& frames, const VQFrozenState* frozen) {
    VQLossGraph g;
    g.latents = model.encode_graph(t, frames);
    const Matrix& e_val = t.value(g.latents);
    g.tokens = frozen ? frozen->tokens : quantize(e_val, model.codebook());
    ad::Var cb = t.param(model.params(), model.codebook_id());
    g.quantized = ad::gather_rows(t, cb, g.tokens);

    ad::Var sg_e, sg_q, st;
    if (frozen) {
        sg_e = t.constant(frozen->latents);
        sg_q = t.constant(frozen->quantized);
        st = ad::add(t, g.latents, t.constant(frozen->quantized - frozen->latents));
    } else {
        sg_e = ad::detach(t, g.latents);
        sg_q = ad::detach(t, g.quantized);
        st = ad::straight_through(t, g.latents, t.value(g.quantized));
    }

    g.decoded = model.decode_graph(t, st, frames.rows());
    g.recon = ad::mse(t, g.decoded, t.constant(frames));

    const double width = double(model.config().code_dim);
    ad::Var codebook_term = ad::scale(t, ad::mse(t, sg_e, g.quantized), width);
    ad::Var commit_term = ad::scale(t, ad::mse(t, sg_q, g.latents), width * model.config().beta);
    g.codebook = ad::add(t, codebook_term, commit_term);
    g.total = ad::add(t, g.recon, ad::scale(t, g.codebook, model.config().gamma));
    return g;
}

VQLosses vq_losses(VQModel& model, const MotionSequence& motion) {
    ad::Tape t(false);
    const VQLossGraph g = vq_loss_graph(t, model, motion.frames());
    return VQLosses{t.scalar(g.recon), t.scalar(g.codebook), t.scalar(g.total)};
}

// ------------------------------------------------------------------ training

double reconstruction_mse(const VQModel& model, const std::vector<MotionSequence>& data) {
    double acc = 0.0;
    double count = 0.0;
    for (const auto& m : data) {
        const MotionSequence r = vq_reconstruct(model, m);
        acc += (r.frames() - m.frames()).squaredNorm();
        count += double(m.frames().size());
    }
    return count > 0 ? acc / count : 0.0;
}

namespace {

void init_codebook_from_data(VQModel& model, const std::vector<MotionSequence>& data, Rng& rng) {
    Matrix pool;
    std::vector<Matrix> latents;
    Eigen::Index rows = 0;
    for (const auto& m : data) {
        latents.push_back(vq_encode_const(model, m).latents);
        rows += latents.back().rows();
    }
    pool.resize(rows, model.config().code_dim);
    Eigen::Index r = 0;
    for (const auto& l : latents) {
        pool.middleRows(r, l.rows()) = l;
        r += l.rows();
    }
    const double spread = std::sqrt(std::max(1e-12, (pool.rowwise() - pool.colwise().mean()).squaredNorm() /
                                                       double(pool.size())));
    Matrix& cb = model.codebook();
    for (Eigen::Index k = 0; k < cb.rows(); ++k) {
        cb.row(k) = pool.row(static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(rows))));
        for (Eigen::Index c = 0; c < cb.cols(); ++c) cb(k, c) += 0.01 * spread * rng.normal();
    }
}

}  // namespace

VQTrainResult train_vq(VQModel& model, const std::vector<MotionSequence>& data) {
    if (data.empty()) throw InvalidArgument("train_vq: empty dataset");
    const VQConfig& cfg = model.config();
    Rng rng(mix_seed(cfg.seed, {0x7472, static_cast<std::uint64_t>(model.role())}));
    model.params().set_all_trainable(true);

    VQTrainResult result;
    if (cfg.codebook_init == "data") init_codebook_from_data(model, data, rng);
    result.initial_recon_mse = reconstruction_mse(model, data);

    Adam opt({&model.params()}, AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.grad_clip});
    for (int step = 0; step < cfg.steps; ++step) {
        opt.zero_grad();
        ad::Tape t;
        std::vector<ad::Var> totals, recons;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto idx = static_cast<std::size_t>(rng.uniform_index(data.size()));
            const VQLossGraph g = vq_loss_graph(t, model, data[idx].frames());
            totals.push_back(g.total);
            recons.push_back(g.recon);
        }
        ad::Var loss = ad::scale(t, ad::sum(t, ad::concat_rows(t, totals)), 1.0 / cfg.batch_size);
        ad::Var recon = ad::scale(t, ad::sum(t, ad::concat_rows(t, recons)), 1.0 / cfg.batch_size);
        const double lv = t.scalar(loss);
        if (!std::isfinite(lv)) {
            throw DivergenceError("train_vq (" + to_string(model.role()) + "): non-finite loss at step " +
                                  std::to_string(step));
        }
        result.total_curve.push_back(lv);
        result.recon_curve.push_back(t.scalar(recon));
        t.backward(loss);
        opt.step();
    }

    round_params_to_float32(model.params());
    model.reset_usage();
    for (const auto& m : data) vq_encode(model, m);
    result.final_recon_mse = reconstruction_mse(model, data);
    return result;
}

double codebook_utilization(const VQModel& model) {
    const auto& u = model.usage_counts();
    if (u.empty()) return 0.0;
    std::size_t used = 0;
    for (auto c : u) used += (c > 0);
    return double(used) / double(u.size());
}

// ---------------------------------------------------------------- checkpoint

void save_vq(const VQModel& model, const std::filesystem::path& dir, const VQTrainResult* train) {
    std::filesystem::create_directories(dir);
    save_params(model.params(), dir / "params");
    std::vector<std::int32_t> usage(model.usage_counts().begin(), model.usage_counts().end());
    save_tensor_file(Tensor::from_ints({usage.size()}, usage), dir / "usage_counts.dimt");
    json manifest{{"kind", "vq"},
                  {"role", to_string(model.role())},
                  {"config", to_json(model.config())},
                  {"seed", model.config().seed},
                  {"params_hash", params_hash(model.params())}};
    if (train) {
        manifest["steps"] = train->total_curve.size();
        manifest["final_total_loss"] = train->total_curve.empty() ? 0.0 : train->total_curve.back();
        manifest["final_recon_loss"] = train->recon_curve.empty() ? 0.0 : train->recon_curve.back();
        manifest["initial_recon_mse"] = train->initial_recon_mse;
        manifest["final_recon_mse"] = train->final_recon_mse;
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
}

VQModel load_vq(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw MissingPrerequisite("VQ checkpoint not found: " + dir.string());
    const json manifest = json::parse(in);
    if (manifest.value("kind", "") != "vq") throw InvalidArgument(dir.string() + " is not a VQ checkpoint");
    VQModel model(parse_role(manifest.at("role").get<std::string>()),
                  vq_config_from_json(manifest.at("config"), "/config"));
    load_params(model.params(), dir / "params");
    const auto usage_path = dir / "usage_counts.dimt";
    if (std::filesystem::exists(usage_path)) {
        const Tensor u = load_tensor_file(usage_path);
        model.set_usage_counts(std::vector<std::uint64_t>(u.ints().begin(), u.ints().end()));
    }
    return model;
}

}  // namespace dim
