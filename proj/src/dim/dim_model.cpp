#include "dim/dim_model.hpp"

#include <cmath>
#include <fstream>

#include "dim/checkpoint.hpp"
#include "dim/error.hpp"
#include "dim/json_fields.hpp"

namespace dim {

using nlohmann::json;

void DIMConfig::validate() const {
    if (!(mask_p >= 0.0 && mask_p <= 100.0)) throw InvalidArgument("DIMConfig: mask_p must be in [0, 100]");
    if (!(tau > 0.0)) throw InvalidArgument("DIMConfig: tau must be > 0");
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw InvalidArgument("DIMConfig: lambda1, lambda2 must be >= 0");
    if (model_dim < 1 || layers < 0 || heads < 1 || intermediate < 1 || audio_dim < 1 || epochs < 0 ||
        batch_size < 1) {
        throw InvalidArgument("DIMConfig: sizes must be positive");
    }
    if (model_dim % heads != 0) throw InvalidArgument("DIMConfig: heads must divide model_dim");
    if (!(learning_rate > 0.0)) throw InvalidArgument("DIMConfig: learning_rate must be > 0");
}

json to_json(const DIMConfig& c) {
    return json{{"mask_p", c.mask_p},
                {"tau", c.tau},
                {"lambda1", c.lambda1},
                {"lambda2", c.lambda2},
                {"model_dim", c.model_dim},
                {"layers", c.layers},
                {"heads", c.heads},
                {"intermediate", c.intermediate},
                {"audio_dim", c.audio_dim},
                {"learning_rate", c.learning_rate},
                {"grad_clip", c.grad_clip},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"decode_alignment", c.decode_alignment == DecodeAlignment::Cross ? "cross" : "straight"},
                {"symmetric_contrastive", c.symmetric_contrastive},
                {"use_vq", c.use_vq},
                {"joint_encoder", c.joint_encoder},
                {"train_vq_decoders", c.train_vq_decoders},
                {"code_relaxation", c.code_relaxation == CodeRelaxation::Soft ? "soft" : "straight_through"}};
}

DIMConfig dim_config_from_json(const json& j, const std::string& path, DIMConfig c) {
    FieldReader r(j, path);
    r.get("mask_p", c.mask_p);
    r.get("tau", c.tau);
    r.get("lambda1", c.lambda1);
    r.get("lambda2", c.lambda2);
    r.get("model_dim", c.model_dim);
    r.get("layers", c.layers);
    r.get("heads", c.heads);
    r.get("intermediate", c.intermediate);
    r.get("audio_dim", c.audio_dim);
    r.get("learning_rate", c.learning_rate);
    r.get("grad_clip", c.grad_clip);
    r.get("epochs", c.epochs);
    r.get("batch_size", c.batch_size);
    r.get("seed", c.seed);
    std::string align = c.decode_alignment == DecodeAlignment::Cross ? "cross" : "straight";
    r.get("decode_alignment", align);
    if (align == "cross") {
        c.decode_alignment = DecodeAlignment::Cross;
    } else if (align == "straight") {
        c.decode_alignment = DecodeAlignment::Straight;
    } else {
        throw ConfigError(r.child("decode_alignment") + ": expected 'cross' or 'straight'");
    }
    r.get("symmetric_contrastive", c.symmetric_contrastive);
    r.get("use_vq", c.use_vq);
    r.get("joint_encoder", c.joint_encoder);
    r.get("train_vq_decoders", c.train_vq_decoders);
    std::string relax = c.code_relaxation == CodeRelaxation::Soft ? "soft" : "straight_through";
    r.get("code_relaxation", relax);
    if (relax == "soft") {
        c.code_relaxation = CodeRelaxation::Soft;
    } else if (relax == "straight_through") {
        c.code_relaxation = CodeRelaxation::StraightThrough;
    } else {
        throw ConfigError(r.child("code_relaxation") + ": expected 'soft' or 'straight_through'");
    }
    r.finish();
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return c;
}

// ------------------------------------------------------------------ model

DIMModel::DIMModel(DIMConfig config, VQModel speaker_vq, VQModel listener_vq)
    : config_(std::move(config)), vq_s_(std::move(speaker_vq)), vq_l_(std::move(listener_vq)) {
    config_.validate();
    if (vq_s_.role() != Role::Speaker || vq_l_.role() != Role::Listener) {
        throw InvalidArgument("DIMModel: expected a speaker and a listener VQ model");
    }
    if (vq_s_.config().stride != vq_l_.config().stride ||
        vq_s_.config().codebook_size != vq_l_.config().codebook_size) {
        throw InvalidArgument("DIMModel: speaker and listener VQ models must share stride and codebook size");
    }
    // Checkpoints store float32, so every store starts from float32 values:
    // frozen parameters then survive the rounding at the end of training.
    round_params_to_float32(vq_s_.params());
    round_params_to_float32(vq_l_.params());
    vq_s_.set_encoder_trainable(false);
    vq_l_.set_encoder_trainable(false);
    vq_s_.set_decoder_trainable(config_.train_vq_decoders);
    vq_l_.set_decoder_trainable(config_.train_vq_decoders);

    Rng rng(mix_seed(config_.seed, {0x44494d}));
    const Eigen::Index d = config_.model_dim;
    const Eigen::Index w = stride();
    const Eigen::Index patch = w * kMotionDim;
    const Eigen::Index C = codebook_size();
    auto& L = layout_;
    auto& P = params_;
    L.in_s = nn::Linear::create(P, "in_s", patch, d, rng);
    L.in_l = nn::Linear::create(P, "in_l", patch, d, rng);
    L.role_s = nn::add_embedding(P, "role_s", 1, d, rng);
    L.role_l = nn::add_embedding(P, "role_l", 1, d, rng);
    L.enc_s = nn::TransformerStack::create(P, "enc_s", d, config_.layers, config_.heads, config_.intermediate, rng);
    L.enc_l = nn::TransformerStack::create(P, "enc_l", d, config_.layers, config_.heads, config_.intermediate, rng);
    L.enc_joint = nn::TransformerStack::create(P, "enc_joint", 2 * d, config_.layers, config_.heads,
                                               2 * config_.intermediate, rng);
    L.mask_s = nn::add_embedding(P, "mask_s", 1, d, rng);
    L.mask_l = nn::add_embedding(P, "mask_l", 1, d, rng);
    L.dec_role_s = nn::add_embedding(P, "dec_role_s", 1, d, rng);
    L.dec_role_l = nn::add_embedding(P, "dec_role_l", 1, d, rng);
    L.audio_in = nn::Linear::create(P, "audio_in", w * config_.audio_dim, d, rng);
    L.audio_role = nn::add_embedding(P, "audio_role", 1, d, rng);
    L.dec = nn::TransformerStack::create(P, "dec", d, config_.layers, config_.heads, config_.intermediate, rng);
    L.head_s = nn::Linear::create(P, "head_s", d, C, rng);
    L.head_l = nn::Linear::create(P, "head_l", d, C, rng);
    L.cont_s = nn::Linear::create(P, "cont_s", d, patch, rng);
    L.cont_l = nn::Linear::create(P, "cont_l", d, patch, rng);
    round_params_to_float32(P);
}

namespace {

const char* const kRoleEncoderPrefixes[] = {"in_s.", "in_l.", "role_s", "role_l", "enc_s.", "enc_l."};
const char* const kDecoderPrefixes[] = {"mask_s",   "mask_l", "dec_role_s", "dec_role_l", "audio_in.", "audio_role",
                                        "dec.",     "head_s.", "head_l.",   "cont_s.",    "cont_l."};

}  // namespace

void DIMModel::freeze_all() {
    params_.set_all_trainable(false);
    vq_s_.params().set_all_trainable(false);
    vq_l_.params().set_all_trainable(false);
}

void DIMModel::set_role_encoders_trainable(bool on) {
    for (const char* p : kRoleEncoderPrefixes) params_.set_trainable_prefix(p, on);
}

void DIMModel::set_joint_encoder_trainable(bool on) { params_.set_trainable_prefix("enc_joint.", on); }

void DIMModel::set_decoder_trainable(bool on) {
    for (const char* p : kDecoderPrefixes) params_.set_trainable_prefix(p, on);
}

std::uint64_t dim_mask_seed(std::uint64_t seed, std::size_t slot, Role role) {
    return mix_seed(seed, {0x6d61736b, static_cast<std::uint64_t>(slot), static_cast<std::uint64_t>(role)});
}

// ---------------------------------------------------------------- forward

namespace {

// T x c -> ceil(T/w) x (w*c), right-padding with the last frame.
Matrix patchify(const Matrix& frames, Eigen::Index w) {
    const Eigen::Index T = frames.rows();
    const Eigen::Index n = (T + w - 1) / w;
    Matrix padded(n * w, frames.cols());
    padded.topRows(T) = frames;
    for (Eigen::Index r = T; r < n * w; ++r) padded.row(r) = frames.row(T - 1);
    return Eigen::Map<const Matrix>(padded.data(), n, w * frames.cols());
}

std::vector<int> visible_positions(const std::vector<bool>& token_masked) {
    std::vector<int> out;
    for (std::size_t i = 0; i < token_masked.size(); ++i) {
        if (!token_masked[i]) out.push_back(static_cast<int>(i));
    }
    return out;
}

// Rows of `rows` (one per entry of `positions`) placed back on a length-n
// grid; positions not listed take `fill` (1 x d).
ad::Var scatter_with_fill(ad::Tape& t, ad::Var rows, const std::vector<int>& positions, ad::Var fill,
                          Eigen::Index n) {
    std::vector<int> idx(static_cast<std::size_t>(n), static_cast<int>(positions.size()));
    for (std::size_t k = 0; k < positions.size(); ++k) idx[static_cast<std::size_t>(positions[k])] = int(k);
    ad::Var source = positions.empty() ? fill : ad::concat_rows(t, {rows, fill});
    return ad::gather_rows(t, source, idx);
}

void check_mask(const MaskMap& m, Eigen::Index T, const char* role) {
    if (static_cast<Eigen::Index>(m.length) != T) {
        throw InvalidArgument(std::string("dim forward: ") + role + " mask length differs from the sample");
    }
}

}  // namespace

SampleGraph dim_sample_graph(ad::Tape& t, DIMModel& model, const DyadicSample& sample, const MaskMap& mask_s,
                             const MaskMap& mask_l, const ForwardRequest& req) {
    sample.validate();
    const DIMConfig& cfg = model.config();
    const auto& L = model.layout();
    auto& P = model.params();
    const Eigen::Index T = sample.length();
    const Eigen::Index w = model.stride();
    const Eigen::Index n = (T + w - 1) / w;
    const Eigen::Index d = cfg.model_dim;
    if (sample.audio.width() != cfg.audio_dim) {
        throw InvalidArgument("dim forward: audio width " + std::to_string(sample.audio.width()) +
                              " differs from configured audio_dim " + std::to_string(cfg.audio_dim));
    }
    check_mask(mask_s, T, "speaker");
    check_mask(mask_l, T, "listener");

    SampleGraph g;
    g.mask_s = mask_s;
    g.mask_l = mask_l;
    g.token_mask_s = token_mask(mask_s, static_cast<std::size_t>(w));
    g.token_mask_l = token_mask(mask_l, static_cast<std::size_t>(w));
    const std::vector<int> vis_s = visible_positions(g.token_mask_s);
    const std::vector<int> vis_l = visible_positions(g.token_mask_l);

    const ad::Var pe = t.constant(nn::sinusoidal_positions(n, d));

    // Role-specific encoders over the visible tokens only.
    auto encode_role = [&](const Matrix& frames, const nn::Linear& in, ad::ParamId role,
                           const nn::TransformerStack& enc, const std::vector<int>& vis) -> ad::Var {
        if (vis.empty()) return ad::Var{};
        ad::Var h = in(t, P, t.constant(patchify(frames, w)));
        h = ad::add(t, ad::add_row(t, h, t.param(P, role)), pe);
        return enc(t, P, ad::gather_rows(t, h, vis));
    };
    const ad::Var x_s = encode_role(sample.speaker.frames(), L.in_s, L.role_s, L.enc_s, vis_s);
    const ad::Var x_l = encode_role(sample.listener.frames(), L.in_l, L.role_l, L.enc_l, vis_l);
    if (x_s.valid()) g.pooled_s = ad::mean_rows(t, x_s);
    if (x_l.valid()) g.pooled_l = ad::mean_rows(t, x_l);

    const ad::Var mask_tok_s = t.param(P, L.mask_s);
    const ad::Var mask_tok_l = t.param(P, L.mask_l);
    ad::Var full_s, full_l;

    std::vector<int> uni;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!g.token_mask_s[std::size_t(i)] || !g.token_mask_l[std::size_t(i)]) uni.push_back(int(i));
    }
    if (cfg.joint_encoder && !uni.empty()) {
        // Feature-wise concatenation on the positions visible to either role;
        // a role's half is zero where that role is masked.
        const ad::Var zero = t.constant(Matrix::Zero(1, d));
        auto to_union = [&](ad::Var x, const std::vector<int>& vis) {
            std::vector<int> where(static_cast<std::size_t>(n), -1);
            for (std::size_t k = 0; k < vis.size(); ++k) where[std::size_t(vis[k])] = int(k);
            std::vector<int> idx;
            for (int u : uni) idx.push_back(where[std::size_t(u)] >= 0 ? where[std::size_t(u)] : int(vis.size()));
            ad::Var source = vis.empty() ? zero : ad::concat_rows(t, {x, zero});
            return ad::gather_rows(t, source, idx);
        };
        const ad::Var joint = L.enc_joint(t, P, ad::concat_cols(t, {to_union(x_s, vis_s), to_union(x_l, vis_l)}));
        const ad::Var j_s = ad::slice_cols(t, joint, 0, d);
        const ad::Var j_l = ad::slice_cols(t, joint, d, d);
        // Keep each role's rows at its own visible positions; pad the rest.
        auto pad = [&](ad::Var j, const std::vector<int>& vis, ad::Var fill) {
            std::vector<int> rows;
            std::size_t u = 0;
            for (int v : vis) {
                while (uni[u] != v) ++u;
                rows.push_back(int(u));
            }
            ad::Var picked = vis.empty() ? ad::Var{} : ad::gather_rows(t, j, rows);
            return scatter_with_fill(t, picked, vis, fill, n);
        };
        full_s = pad(j_s, vis_s, mask_tok_s);
        full_l = pad(j_l, vis_l, mask_tok_l);
    } else {
        full_s = scatter_with_fill(t, x_s, vis_s, mask_tok_s, n);
        full_l = scatter_with_fill(t, x_l, vis_l, mask_tok_l, n);
    }

    if (!req.speaker_outputs && !req.listener_outputs) return g;

    ad::Var audio = L.audio_in(t, P, t.constant(patchify(sample.audio.features(), w)));
    audio = ad::add(t, ad::add_row(t, audio, t.param(P, L.audio_role)), pe);

    auto decode_for = [&](Role target, ad::Var& logits_out, ad::Var& recon_out) {
        const bool cross = cfg.decode_alignment == DecodeAlignment::Cross;
        const Role source = cross ? (target == Role::Speaker ? Role::Listener : Role::Speaker) : target;
        const ad::Var stream = source == Role::Speaker ? full_s : full_l;
        const ad::ParamId dec_role = source == Role::Speaker ? L.dec_role_s : L.dec_role_l;
        ad::Var h = ad::add(t, ad::add_row(t, stream, t.param(P, dec_role)), pe);
        h = L.dec(t, P, ad::concat_rows(t, {h, audio}));
        h = ad::slice_rows(t, h, 0, n);
        VQModel& vq = model.vq(target);
        if (cfg.use_vq) {
            const nn::Linear& head = target == Role::Speaker ? L.head_s : L.head_l;
            logits_out = head(t, P, h);
            if (req.soft_reconstruction) {
                const ad::Var probs = ad::softmax_rows(t, logits_out);
                ad::Var latents = ad::matmul(t, probs, t.constant(vq.codebook()));
                if (cfg.code_relaxation == CodeRelaxation::StraightThrough) {
                    const std::vector<int> hard = argmax_rows(t.value(logits_out));
                    Matrix q(Eigen::Index(hard.size()), vq.codebook().cols());
                    for (std::size_t i = 0; i < hard.size(); ++i) q.row(Eigen::Index(i)) = vq.codebook().row(hard[i]);
                    latents = ad::straight_through(t, latents, q);
                }
                recon_out = vq.decode_graph(t, latents, T);
            }
        } else {
            const nn::Linear& cont = target == Role::Speaker ? L.cont_s : L.cont_l;
            ad::Var patches = cont(t, P, h);
            recon_out = ad::slice_rows(t, ad::reshape(t, patches, n * w, kMotionDim), 0, T);
        }
    };
    if (req.speaker_outputs) decode_for(Role::Speaker, g.logits_s, g.recon_s);
    if (req.listener_outputs) decode_for(Role::Listener, g.logits_l, g.recon_l);
    return g;
}

std::vector<int> argmax_rows(const Matrix& logits) {
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < logits.cols(); ++c) {
            if (logits(r, c) > logits(r, best)) best = c;
        }
        out[std::size_t(r)] = int(best);
    }
    return out;
}

MotionSequence decode_hard(const DIMModel& model, Role role, const Matrix& logits, Eigen::Index length) {
    const MotionSequence full = vq_decode(model.vq(role), TokenSequence{argmax_rows(logits)});
    if (length > full.length()) throw InvalidArgument("decode_hard: requested length exceeds decoded frames");
    return MotionSequence(full.frames().topRows(length));
}

DIMForward dim_forward(DIMModel& model, const std::vector<DyadicSample>& batch, std::uint64_t seed) {
    const DIMConfig& cfg = model.config();
    DIMForward out;
    std::vector<RowVector> ps, pl;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const DyadicSample& s = batch[b];
        const std::size_t T = static_cast<std::size_t>(s.length());
        const MaskMap ms = uniform_mask(T, cfg.mask_p, dim_mask_seed(seed, b, Role::Speaker));
        const MaskMap ml = uniform_mask(T, cfg.mask_p, dim_mask_seed(seed, b, Role::Listener));
        ad::Tape t(false);
        ForwardRequest req;
        const SampleGraph g = dim_sample_graph(t, model, s, ms, ml, req);
        SampleForward f;
        f.mask_s = ms;
        f.mask_l = ml;
        if (g.recon_s.valid()) f.soft_recon_s = t.value(g.recon_s);
        if (g.recon_l.valid()) f.soft_recon_l = t.value(g.recon_l);
        if (cfg.use_vq) {
            f.logits_s = t.value(g.logits_s);
            f.logits_l = t.value(g.logits_l);
            if (!f.logits_s.allFinite() || !f.logits_l.allFinite()) {
                throw DivergenceError("dim_forward: non-finite logits for clip '" + s.clip_id + "'");
            }
            f.hard_s = decode_hard(model, Role::Speaker, f.logits_s, s.length()).frames();
            f.hard_l = decode_hard(model, Role::Listener, f.logits_l, s.length()).frames();
        } else {
            f.hard_s = f.soft_recon_s;
            f.hard_l = f.soft_recon_l;
        }
        if (!f.soft_recon_s.allFinite() || !f.soft_recon_l.allFinite()) {
            throw DivergenceError("dim_forward: non-finite reconstruction for clip '" + s.clip_id + "'");
        }
        if (g.pooled_s.valid()) f.pooled_s = t.value(g.pooled_s);
        if (g.pooled_l.valid()) f.pooled_l = t.value(g.pooled_l);
        if (f.pooled_s.size() > 0 && f.pooled_l.size() > 0) {
            ps.push_back(f.pooled_s);
            pl.push_back(f.pooled_l);
        }
        out.samples.push_back(std::move(f));
    }
    const Eigen::Index d = cfg.model_dim;
    out.pooled_s.resize(Eigen::Index(ps.size()), d);
    out.pooled_l.resize(Eigen::Index(pl.size()), d);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        out.pooled_s.row(Eigen::Index(i)) = ps[i];
        out.pooled_l.row(Eigen::Index(i)) = pl[i];
    }
    return out;
}

TokenTargets prepare_targets(const DIMModel& model, const DyadicSample& sample) {
    if (sample.speaker.length() != sample.listener.length()) {
        throw InvalidArgument("prepare_targets: speaker and listener lengths differ for clip '" + sample.clip_id +
                              "'");
    }
    TokenTargets out;
    out.speaker = vq_encode_const(model.vq(Role::Speaker), sample.speaker).tokens;
    out.listener = vq_encode_const(model.vq(Role::Listener), sample.listener).tokens;
    return out;
}

// ----------------------------------------------------------------- losses

double contrastive_loss(const Matrix& pooled_s, const Matrix& pooled_l, double tau) {
    if (!(tau > 0.0)) throw InvalidArgument("contrastive_loss: tau must be > 0");
    if (pooled_s.rows() < 1 || pooled_s.rows() != pooled_l.rows() || pooled_s.cols() != pooled_l.cols()) {
        throw InvalidArgument("contrastive_loss: need matching N x d inputs with N >= 1");
    }
    const Matrix S = (pooled_s * pooled_l.transpose()) / tau;
    double total = 0.0;
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
        const double mx = S.row(i).maxCoeff();
        const double lse = mx + std::log((S.row(i).array() - mx).exp().sum());
        total += lse - S(i, i);
    }
    return total / double(S.rows());
}

ad::Var contrastive_graph(ad::Tape& t, ad::Var pooled_s, ad::Var pooled_l, double tau, bool symmetric) {
    if (!(tau > 0.0)) throw InvalidArgument("contrastive_loss: tau must be > 0");
    const ad::Var S = ad::scale(t, ad::matmul_nt(t, pooled_s, pooled_l), 1.0 / tau);
    std::vector<int> diag(static_cast<std::size_t>(t.value(S).rows()));
    for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = int(i);
    ad::Var loss = ad::cross_entropy(t, S, diag);
    if (symmetric) loss = ad::scale(t, ad::add(t, loss, ad::cross_entropy(t, ad::transpose(t, S), diag)), 0.5);
    return loss;
}

namespace {

std::vector<int> masked_targets(const std::vector<int>& tokens, const std::vector<bool>& token_masked) {
    if (tokens.size() != token_masked.size()) throw InvalidArgument("dim losses: token count mismatch");
    std::vector<int> out(tokens.size(), -1);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (token_masked[i]) out[i] = tokens[i];
    }
    return out;
}

void require_mask(const MaskMap& m) {
    if (m.percent > 0.0 && m.empty()) {
        throw InvalidArgument("dim losses: empty mask with p > 0 (sequence too short for the mask rate?)");
    }
}

double role_loss_value(const Matrix& logits, const Matrix& pred, const Matrix& gt, const std::vector<int>& targets,
                       const MaskMap& mask, int stride, bool use_vq) {
    require_mask(mask);
    if (mask.empty()) return 0.0;
    double ce = 0.0;
    if (use_vq) {
        const std::vector<int> tgt = masked_targets(targets, token_mask(mask, std::size_t(stride)));
        int count = 0;
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            const int k = tgt[std::size_t(r)];
            if (k < 0) continue;
            const double mx = logits.row(r).maxCoeff();
            ce += mx + std::log((logits.row(r).array() - mx).exp().sum()) - logits(r, k);
            ++count;
        }
        ce /= count;
    }
    double sq = 0.0;
    for (std::size_t f : mask.masked_indices) {
        sq += (pred.row(Eigen::Index(f)) - gt.row(Eigen::Index(f))).squaredNorm();
    }
    return ce + sq / double(mask.masked_indices.size());
}

}  // namespace

DIMLosses dim_losses(const std::vector<DIMLossInputs>& batch, const Matrix& pooled_s, const Matrix& pooled_l,
                     double tau, double lambda1, double lambda2, bool use_vq) {
    if (batch.empty()) throw InvalidArgument("dim_losses: empty batch");
    DIMLosses out;
    for (const auto& b : batch) {
        out.rec_s += role_loss_value(b.logits_s, b.pred_s, b.speaker, b.targets_s, b.mask_s, b.stride, use_vq);
        out.rec_l += role_loss_value(b.logits_l, b.pred_l, b.listener, b.targets_l, b.mask_l, b.stride, use_vq);
    }
    out.rec_s /= double(batch.size());
    out.rec_l /= double(batch.size());
    if (pooled_s.rows() > 0) out.contrastive = contrastive_loss(pooled_s, pooled_l, tau);
    out.total = lambda1 * out.contrastive + lambda2 * (out.rec_s + out.rec_l);
    return out;
}

BatchLossGraph dim_batch_loss_graph(ad::Tape& t, DIMModel& model, const std::vector<DyadicSample>& batch,
                                    const std::vector<TokenTargets>& targets, const std::vector<MaskMap>& masks_s,
                                    const std::vector<MaskMap>& masks_l, const ForwardRequest& req,
                                    double lambda1, double lambda2) {
    const std::size_t B = batch.size();
    if (B == 0 || targets.size() != B || masks_s.size() != B || masks_l.size() != B) {
        throw InvalidArgument("dim_batch_loss_graph: batch, targets and masks must have one entry per sample");
    }
    const DIMConfig& cfg = model.config();
    auto role_loss = [&](ad::Var logits, ad::Var recon, const Matrix& gt, const std::vector<int>& tokens,
                         const MaskMap& mask, const std::vector<bool>& tmask) -> ad::Var {
        require_mask(mask);
        if (mask.empty()) return ad::Var{};
        std::vector<int> frames(mask.masked_indices.begin(), mask.masked_indices.end());
        Matrix gt_rows(Eigen::Index(frames.size()), kMotionDim);
        for (std::size_t k = 0; k < frames.size(); ++k) gt_rows.row(Eigen::Index(k)) = gt.row(frames[k]);
        // Mean over masked frames of the squared L2 norm.
        ad::Var sq = ad::scale(t, ad::mse(t, ad::gather_rows(t, recon, frames), t.constant(std::move(gt_rows))),
                               double(kMotionDim));
        if (!cfg.use_vq) return sq;
        return ad::add(t, ad::cross_entropy(t, logits, masked_targets(tokens, tmask)), sq);
    };

    std::vector<ad::Var> rs, rl, ps, pl;
    for (std::size_t b = 0; b < B; ++b) {
        ForwardRequest r = req;
        r.soft_reconstruction = true;
        const SampleGraph g = dim_sample_graph(t, model, batch[b], masks_s[b], masks_l[b], r);
        if (req.speaker_outputs) {
            ad::Var v = role_loss(g.logits_s, g.recon_s, batch[b].speaker.frames(), targets[b].speaker.tokens,
                                  g.mask_s, g.token_mask_s);
            if (v.valid()) rs.push_back(v);
        }
        if (req.listener_outputs) {
            ad::Var v = role_loss(g.logits_l, g.recon_l, batch[b].listener.frames(), targets[b].listener.tokens,
                                  g.mask_l, g.token_mask_l);
            if (v.valid()) rl.push_back(v);
        }
        if (g.pooled_s.valid() && g.pooled_l.valid()) {
            ps.push_back(g.pooled_s);
            pl.push_back(g.pooled_l);
        }
    }
    auto batch_mean = [&](const std::vector<ad::Var>& parts) {
        if (parts.empty()) return t.constant(Matrix::Zero(1, 1));
        ad::Var acc = parts[0];
        for (std::size_t i = 1; i < parts.size(); ++i) acc = ad::add(t, acc, parts[i]);
        return ad::scale(t, acc, 1.0 / double(B));
    };
    BatchLossGraph out;
    out.rec_s = batch_mean(rs);
    out.rec_l = batch_mean(rl);
    if (!ps.empty() && lambda1 > 0.0) {
        out.contrastive = contrastive_graph(t, ad::concat_rows(t, ps), ad::concat_rows(t, pl), cfg.tau,
                                            cfg.symmetric_contrastive);
    } else if (!ps.empty()) {
        out.contrastive = ad::detach(t, contrastive_graph(t, ad::concat_rows(t, ps), ad::concat_rows(t, pl),
                                                          cfg.tau, cfg.symmetric_contrastive));
    } else {
        out.contrastive = t.constant(Matrix::Zero(1, 1));
    }
    out.total = ad::add(t, ad::scale(t, out.contrastive, lambda1),
                        ad::scale(t, ad::add(t, out.rec_s, out.rec_l), lambda2));
    return out;
}

// ------------------------------------------------------------- checkpoint

std::string dim_checkpoint_hash(const DIMModel& model) {
    const std::string joined = params_hash(model.params()) + params_hash(model.vq(Role::Speaker).params()) +
                               params_hash(model.vq(Role::Listener).params()) + to_json(model.config()).dump();
    return hex64(fnv1a64(joined));
}

void save_dim(const DIMModel& model, const std::filesystem::path& dir, const json& extra) {
    std::filesystem::create_directories(dir);
    save_params(model.params(), dir / "params");
    save_vq(model.vq(Role::Speaker), dir / "vq_speaker");
    save_vq(model.vq(Role::Listener), dir / "vq_listener");
    json manifest{{"kind", "dim"},
                  {"config", to_json(model.config())},
                  {"seed", model.config().seed},
                  {"params_hash", params_hash(model.params())},
                  {"checkpoint_hash", dim_checkpoint_hash(model)}};
    if (extra.is_object()) {
        for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out) throw Error("failed to write " + (dir / "manifest.json").string());
}

DIMModel load_dim(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw MissingPrerequisite("DIM checkpoint not found: " + dir.string());
    const json manifest = json::parse(in);
    if (manifest.value("kind", "") != "dim") throw InvalidArgument(dir.string() + " is not a DIM checkpoint");
    DIMModel model(dim_config_from_json(manifest.at("config"), "/config"), load_vq(dir / "vq_speaker"),
                   load_vq(dir / "vq_listener"));
    load_params(model.params(), dir / "params");
    return model;
}

}  // namespace dim
