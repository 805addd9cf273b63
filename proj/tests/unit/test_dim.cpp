#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dim/checkpoint.hpp"
#include "dim/dim_model.hpp"
#include "dim/error.hpp"
#include "dim/pretrain.hpp"
#include "dim/synth.hpp"

using namespace dim;

namespace {

VQConfig tiny_vq() {
    VQConfig c;
    c.codebook_size = 16;
    c.code_dim = 8;
    c.hidden_dim = 16;
    c.heads = 2;
    c.ffn_dim = 32;
    return c;
}

DIMConfig tiny_dim() {
    DIMConfig c;
    c.model_dim = 16;
    c.layers = 1;
    c.heads = 2;
    c.intermediate = 32;
    c.audio_dim = 8;
    c.learning_rate = 1e-3;
    c.epochs = 1;
    c.batch_size = 2;
    return c;
}

std::vector<DyadicSample> tiny_corpus(int n, int T) {
    SynthConfig sc;
    sc.n_clips = n;
    sc.length = T;
    sc.lag = 1;
    sc.audio_dim = 8;
    return synth_dyads(sc);
}

DIMModel tiny_model(DIMConfig c = tiny_dim()) {
    return DIMModel(c, VQModel(Role::Speaker, tiny_vq()), VQModel(Role::Listener, tiny_vq()));
}

}  // namespace

TEST_CASE("contrastive: single pair is zero") {
    Matrix s(1, 3), l(1, 3);
    s << 1, 2, 3;
    l << -1, 0, 4;
    CHECK(contrastive_loss(s, l, 0.07) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("contrastive: identical vectors give ln 2") {
    const Matrix v = Matrix::Constant(2, 4, 0.3);
    CHECK(contrastive_loss(v, v, 0.07) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("contrastive: unit positives and zero negatives at tau 1") {
    const Matrix I = Matrix::Identity(2, 2);
    const double expect = -std::log(std::exp(1.0) / (1.0 + std::exp(1.0)));
    CHECK(expect == doctest::Approx(0.3133).epsilon(1e-4));
    CHECK(contrastive_loss(I, I, 1.0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("contrastive: graph value, pair permutation and alignment monotonicity") {
    Rng rng(3);
    Matrix s(4, 5), l(4, 5);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        s.data()[i] = rng.normal();
        l.data()[i] = rng.normal();
    }
    ad::Tape t(false);
    CHECK(t.scalar(contrastive_graph(t, t.constant(s), t.constant(l), 0.5, false)) ==
          doctest::Approx(contrastive_loss(s, l, 0.5)).epsilon(1e-12));

    Matrix sp(4, 5), lp(4, 5);
    const int perm[4] = {2, 0, 3, 1};
    for (int i = 0; i < 4; ++i) {
        sp.row(i) = s.row(perm[i]);
        lp.row(i) = l.row(perm[i]);
    }
    CHECK(contrastive_loss(sp, lp, 0.5) == doctest::Approx(contrastive_loss(s, l, 0.5)).epsilon(1e-12));

    // Moving listener vectors toward their speakers lowers the loss.
    double prev = contrastive_loss(s, l, 0.5);
    for (double a : {0.25, 0.5, 0.75, 1.0}) {
        const double cur = contrastive_loss(s, (1 - a) * l + a * s, 0.5);
        CHECK(cur < prev);
        prev = cur;
    }
    CHECK_THROWS_AS(contrastive_loss(s, l, 0.0), InvalidArgument);
}

TEST_CASE("dim losses: uniform logits give ln|C| per role; lambda1 = 0") {
    const int T = 8, w = 2, K = 256;
    DIMLossInputs in;
    in.stride = w;
    in.logits_s = in.logits_l = Matrix::Zero(T / w, K);
    in.speaker = in.listener = Matrix::Constant(T, kMotionDim, 0.2);
    in.pred_s = in.pred_l = in.speaker;
    in.targets_s = in.targets_l = {3, 7, 255, 0};
    in.mask_s = uniform_mask(T, 50, 1);
    in.mask_l = uniform_mask(T, 50, 2);
    const Matrix pooled = Matrix::Identity(1, 4);
    const DIMLosses l = dim_losses({in}, pooled, pooled, 0.07, 0.0, 1.0);
    CHECK(l.rec_s == doctest::Approx(std::log(256.0)).epsilon(1e-12));
    CHECK(l.rec_l == doctest::Approx(std::log(256.0)).epsilon(1e-12));
    CHECK(l.total == l.rec_s + l.rec_l);

    const DIMLosses l2 = dim_losses({in}, pooled, pooled, 0.07, 0.0, 0.5);
    CHECK(l2.total == 0.5 * (l2.rec_s + l2.rec_l));
}

TEST_CASE("dim losses: exact predictions give zero reconstruction loss") {
    const int T = 6, w = 2, K = 16;
    DIMLossInputs in;
    in.stride = w;
    in.targets_s = {1, 2, 3};
    in.targets_l = {15, 0, 4};
    in.logits_s = Matrix::Zero(3, K);
    in.logits_l = Matrix::Zero(3, K);
    for (int i = 0; i < 3; ++i) {
        in.logits_s(i, in.targets_s[std::size_t(i)]) = 1e3;
        in.logits_l(i, in.targets_l[std::size_t(i)]) = 1e3;
    }
    in.speaker = Matrix::Constant(T, kMotionDim, 0.1);
    in.listener = Matrix::Constant(T, kMotionDim, -0.4);
    in.pred_s = in.speaker;
    in.pred_l = in.listener;
    in.mask_s = uniform_mask(T, 50, 3);
    in.mask_l = uniform_mask(T, 100, 3);
    const Matrix p = Matrix::Ones(1, 2);
    const DIMLosses l = dim_losses({in}, p, p, 0.07, 0.1, 1.0);
    CHECK(l.rec_s == 0.0);
    CHECK(l.rec_l == 0.0);

    // One frame off by 1 in every dim: squared norm 56 averaged over masked frames.
    in.pred_l.row(0).array() += 1.0;
    const DIMLosses off = dim_losses({in}, p, p, 0.07, 0.1, 1.0);
    CHECK(off.rec_l == doctest::Approx(56.0 / T).epsilon(1e-12));

    in.mask_s = MaskMap{{}, T, 50.0};
    CHECK_THROWS_AS(dim_losses({in}, p, p, 0.07, 0.1, 1.0), InvalidArgument);
}

TEST_CASE("dim forward: shapes, determinism and unmasked inputs") {
    DIMModel m = tiny_model();
    const auto batch = tiny_corpus(2, 9);
    const DIMForward a = dim_forward(m, batch, 5);
    const DIMForward b = dim_forward(m, batch, 5);
    REQUIRE(a.samples.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(a.samples[i].logits_s.rows() == 5);
        CHECK(a.samples[i].logits_s.cols() == 16);
        CHECK(a.samples[i].logits_l.rows() == 5);
        CHECK(a.samples[i].hard_l.rows() == 9);
        CHECK(a.samples[i].hard_l.cols() == kMotionDim);
        CHECK(a.samples[i].logits_s == b.samples[i].logits_s);
        CHECK(a.samples[i].logits_l == b.samples[i].logits_l);
        CHECK(a.samples[i].soft_recon_l == b.samples[i].soft_recon_l);
        CHECK(a.samples[i].mask_s.masked_indices.size() == mask_count(9, 50));
    }
    CHECK(a.pooled_s.rows() == 2);
    CHECK(a.pooled_s == b.pooled_s);

    ad::Tape t(false);
    ForwardRequest req;
    req.speaker_mask_p = req.listener_mask_p = 0.0;
    const SampleGraph g = dim_sample_graph(t, m, batch[0], uniform_mask(9, 0, 0), uniform_mask(9, 0, 0), req);
    for (bool x : g.token_mask_s) CHECK_FALSE(x);
    for (bool x : g.token_mask_l) CHECK_FALSE(x);
    CHECK(t.value(g.logits_s).rows() == 5);
}

TEST_CASE("dim targets: match the standalone encoder and stay in range") {
    const DIMModel m = tiny_model();
    const auto s = tiny_corpus(1, 12)[0];
    const TokenTargets a = prepare_targets(m, s);
    const TokenTargets b = prepare_targets(m, s);
    CHECK(a.speaker.tokens == b.speaker.tokens);
    CHECK(a.listener.tokens == b.listener.tokens);
    CHECK(a.speaker.tokens == vq_encode_const(m.vq(Role::Speaker), s.speaker).tokens.tokens);
    CHECK(a.listener.tokens == vq_encode_const(m.vq(Role::Listener), s.listener).tokens.tokens);
    for (int k : a.listener.tokens) CHECK((k >= 0 && k < m.codebook_size()));
}

TEST_CASE("dim: batch loss graph agrees with the value-level losses") {
    DIMModel m = tiny_model();
    const auto batch = tiny_corpus(3, 8);
    const std::uint64_t seed = 17;
    const DIMForward f = dim_forward(m, batch, seed);
    std::vector<DIMLossInputs> ins;
    std::vector<TokenTargets> targets;
    std::vector<MaskMap> ms, ml;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const TokenTargets tt = prepare_targets(m, batch[i]);
        targets.push_back(tt);
        DIMLossInputs in;
        in.logits_s = f.samples[i].logits_s;
        in.logits_l = f.samples[i].logits_l;
        in.pred_s = f.samples[i].soft_recon_s;
        in.pred_l = f.samples[i].soft_recon_l;
        in.speaker = batch[i].speaker.frames();
        in.listener = batch[i].listener.frames();
        in.targets_s = tt.speaker.tokens;
        in.targets_l = tt.listener.tokens;
        in.mask_s = f.samples[i].mask_s;
        in.mask_l = f.samples[i].mask_l;
        in.stride = m.stride();
        ins.push_back(in);
        ms.push_back(uniform_mask(8, m.config().mask_p, dim_mask_seed(seed, i, Role::Speaker)));
        ml.push_back(uniform_mask(8, m.config().mask_p, dim_mask_seed(seed, i, Role::Listener)));
        CHECK(ms.back().masked_indices == f.samples[i].mask_s.masked_indices);
    }
    const DIMLosses v = dim_losses(ins, f.pooled_s, f.pooled_l, m.config().tau, 0.1, 1.0);
    ad::Tape t(false);
    const BatchLossGraph g = dim_batch_loss_graph(t, m, batch, targets, ms, ml, ForwardRequest{}, 0.1, 1.0);
    CHECK(t.scalar(g.total) == doctest::Approx(v.total).epsilon(1e-10));
    CHECK(t.scalar(g.contrastive) == doctest::Approx(v.contrastive).epsilon(1e-10));
    CHECK(t.scalar(g.rec_s) == doctest::Approx(v.rec_s).epsilon(1e-10));
}

TEST_CASE("dim: loss gradient matches central differences") {
    // The straight-through forward is piecewise constant in the logits, so
    // the exact gradient is checked on the soft path.
    DIMConfig c = tiny_dim();
    c.code_relaxation = CodeRelaxation::Soft;
    DIMModel m = tiny_model(c);
    const auto batch = tiny_corpus(2, 8);
    std::vector<TokenTargets> targets;
    std::vector<MaskMap> ms, ml;
    for (std::size_t i = 0; i < 2; ++i) {
        targets.push_back(prepare_targets(m, batch[i]));
        ms.push_back(uniform_mask(8, 50, 100 + i));
        ml.push_back(uniform_mask(8, 50, 200 + i));
    }
    auto loss = [&](bool grad) {
        ad::Tape t(grad);
        const BatchLossGraph g = dim_batch_loss_graph(t, m, batch, targets, ms, ml, ForwardRequest{}, 0.1, 1.0);
        if (grad) t.backward(g.total);
        return t.scalar(g.total);
    };
    m.params().zero_grad();
    m.vq(Role::Speaker).params().zero_grad();
    m.vq(Role::Listener).params().zero_grad();
    loss(true);

    const double h = 1e-3;
    int checked = 0, within = 0;
    double worst = 0.0;
    Rng pick(9);
    auto probe = [&](ad::ParamStore& store) {
        for (auto& p : store.all()) {
            if (!p.trainable) continue;
            const auto i = static_cast<Eigen::Index>(pick.uniform_index(static_cast<std::uint64_t>(p.value.size())));
            const double keep = p.value.data()[i];
            p.value.data()[i] = keep + h;
            const double up = loss(false);
            p.value.data()[i] = keep - h;
            const double down = loss(false);
            p.value.data()[i] = keep;
            const double fd = (up - down) / (2 * h);
            const double an = p.grad.data()[i];
            const double diff = std::abs(fd - an);
            const double rel = diff < 1e-9 ? 0.0 : diff / std::max(std::abs(fd), std::abs(an));
            ++checked;
            within += rel < 1e-4;
            worst = std::max(worst, rel);
        }
    };
    probe(m.params());
    probe(m.vq(Role::Listener).params());
    CHECK(checked > 40);
    CHECK(within >= 0.95 * checked);
    CHECK(worst < 1e-2);
}

TEST_CASE("dim: straight-through reconstruction decodes the argmax codes") {
    DIMModel m = tiny_model();
    REQUIRE(m.config().code_relaxation == CodeRelaxation::StraightThrough);
    const auto batch = tiny_corpus(1, 9);
    ad::Tape t(false);
    const SampleGraph g = dim_sample_graph(t, m, batch[0], uniform_mask(9, 50, 1), uniform_mask(9, 50, 2), ForwardRequest{});
    TokenSequence best;
    const Matrix logits = t.value(g.logits_l);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::Index k = 0;
        logits.row(r).maxCoeff(&k);
        best.tokens.push_back(static_cast<int>(k));
    }
    const Matrix expected = vq_decode(m.vq(Role::Listener), best).frames().topRows(9);
    CHECK((t.value(g.recon_l) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dim: freeze contract and determinism of pretraining") {
    const auto corpus = tiny_corpus(1, 8);
    DIMModel a = tiny_model(), b = tiny_model();
    const VQModel before_s = a.vq(Role::Speaker), before_l = a.vq(Role::Listener);
    const PretrainResult ra = pretrain(a, corpus);
    const PretrainResult rb = pretrain(b, corpus);
    CHECK(params_equal(a.vq(Role::Speaker).params(), before_s.params(), "enc."));
    CHECK(params_equal(a.vq(Role::Listener).params(), before_l.params(), "enc."));
    CHECK(params_equal(a.vq(Role::Speaker).params(), before_s.params(), "codebook"));
    CHECK(params_equal(a.vq(Role::Listener).params(), before_l.params(), "codebook"));
    REQUIRE(ra.audits.size() == 1);
    CHECK(ra.audits[0].passed);
    CHECK(ra.epoch_loss == rb.epoch_loss);
    CHECK(params_equal(a.params(), b.params()));

    DIMConfig frozen_dec = tiny_dim();
    frozen_dec.train_vq_decoders = false;
    DIMModel c = tiny_model(frozen_dec);
    const VQModel dec_before = c.vq(Role::Listener);
    pretrain(c, corpus);
    CHECK(params_equal(c.vq(Role::Listener).params(), dec_before.params(), "dec."));
}

TEST_CASE("dim: contrastive-only training separates pairs") {
    DIMConfig c = tiny_dim();
    c.lambda1 = 1.0;
    c.lambda2 = 0.0;
    c.epochs = 40;
    c.batch_size = 4;
    c.learning_rate = 3e-3;
    c.tau = 0.5;
    DIMModel m = tiny_model(c);
    const auto corpus = tiny_corpus(4, 8);
    const PretrainResult r = pretrain(m, corpus);
    CHECK(r.steps.back().contrastive < 0.5 * r.steps.front().contrastive);
}

TEST_CASE("dim: checkpoint round trip") {
    DIMModel m = tiny_model();
    pretrain(m, tiny_corpus(2, 8));
    const auto dir = std::filesystem::temp_directory_path() / "dim_unit_dim_ckpt";
    std::filesystem::remove_all(dir);
    save_dim(m, dir);
    DIMModel back = load_dim(dir);
    CHECK(dim_checkpoint_hash(back) == dim_checkpoint_hash(m));
    const auto batch = tiny_corpus(1, 8);
    CHECK(dim_forward(back, batch, 1).samples[0].logits_l == dim_forward(m, batch, 1).samples[0].logits_l);
}
