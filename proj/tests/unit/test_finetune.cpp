#include <doctest.h>

#include <filesystem>

#include "dim/checkpoint.hpp"
#include "dim/error.hpp"
#include "dim/finetune.hpp"
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
    return c;
}

FinetuneConfig tiny_ft(FinetuneTask task, bool unfreeze) {
    FinetuneConfig c;
    c.task = task;
    c.unfreeze_vq_decoder = unfreeze;
    c.learning_rate = 1e-3;
    c.epochs = 2;
    c.batch_size = 2;
    return c;
}

std::vector<DyadicSample> corpus(int n = 3, int T = 10) {
    SynthConfig sc;
    sc.n_clips = n;
    sc.length = T;
    sc.lag = 1;
    sc.audio_dim = 8;
    return synth_dyads(sc);
}

DIMModel fresh() { return DIMModel(tiny_dim(), VQModel(Role::Speaker, tiny_vq()), VQModel(Role::Listener, tiny_vq())); }

}  // namespace

TEST_CASE("finetune listener: VQ encoders frozen, decoder follows the flag") {
    const DIMModel start = fresh();
    FinetuneResult r;
    const GeneratorModel frozen = finetune_listener(start, corpus(), tiny_ft(FinetuneTask::Listener, false), &r);
    const auto& l0 = start.vq(Role::Listener).params();
    const auto& s0 = start.vq(Role::Speaker).params();
    CHECK(params_equal(frozen.model.vq(Role::Listener).params(), l0, "enc."));
    CHECK(params_equal(frozen.model.vq(Role::Listener).params(), l0, "codebook"));
    CHECK(params_equal(frozen.model.vq(Role::Speaker).params(), s0, "enc."));
    CHECK(params_equal(frozen.model.vq(Role::Listener).params(), l0, "dec."));
    CHECK_FALSE(params_equal(frozen.model.params(), start.params()));
    REQUIRE(r.audits.size() == 2);
    for (const auto& a : r.audits) CHECK(a.passed);

    const GeneratorModel open = finetune_listener(start, corpus(), tiny_ft(FinetuneTask::Listener, true));
    CHECK(params_equal(open.model.vq(Role::Listener).params(), l0, "enc."));
    CHECK_FALSE(params_equal(open.model.vq(Role::Listener).params(), l0, "dec."));
    CHECK(params_equal(open.model.vq(Role::Speaker).params(), s0, "dec."));
}

TEST_CASE("finetune speaker: only the decoder side trains") {
    const DIMModel start = fresh();
    const GeneratorModel g = finetune_speaker(start, corpus(), tiny_ft(FinetuneTask::Speaker, true));
    for (const char* prefix : {"in_s.", "in_l.", "role_s", "role_l", "enc_s.", "enc_l.", "enc_joint."}) {
        CHECK(params_equal(g.model.params(), start.params(), prefix));
    }
    CHECK_FALSE(params_equal(g.model.params(), start.params(), "dec."));
    CHECK_FALSE(params_equal(g.model.vq(Role::Speaker).params(), start.vq(Role::Speaker).params(), "dec."));
    CHECK(params_equal(g.model.vq(Role::Speaker).params(), start.vq(Role::Speaker).params(), "enc."));
    CHECK(params_equal(g.model.vq(Role::Listener).params(), start.vq(Role::Listener).params()));
}

TEST_CASE("finetune: fixed seed reproduces the run") {
    const auto data = corpus();
    FinetuneResult ra, rb;
    const GeneratorModel a = finetune_listener(fresh(), data, tiny_ft(FinetuneTask::Listener, true), &ra);
    const GeneratorModel b = finetune_listener(fresh(), data, tiny_ft(FinetuneTask::Listener, true), &rb);
    CHECK(ra.epoch_loss == rb.epoch_loss);
    CHECK(dim_checkpoint_hash(a.model) == dim_checkpoint_hash(b.model));
}

TEST_CASE("generate listener: shape, determinism and token decoding") {
    const auto data = corpus(2, 9);
    const GeneratorModel g = finetune_listener(fresh(), data, tiny_ft(FinetuneTask::Listener, true));
    const Generation a = generate_listener_detailed(g, data[0].speaker, data[0].audio);
    const Generation b = generate_listener_detailed(g, data[0].speaker, data[0].audio);
    CHECK(a.motion.length() == 9);
    CHECK(a.motion.frames().cols() == kMotionDim);
    CHECK(a.motion.frames() == b.motion.frames());
    CHECK(a.tokens.tokens.size() == 5);
    for (int k : a.tokens.tokens) CHECK((k >= 0 && k < 16));
    const Matrix decoded = vq_decode(g.model.vq(Role::Listener), a.tokens).frames().topRows(9);
    CHECK(decoded == a.motion.frames());

    GenerateOptions hot{1.5, 7};
    CHECK(generate_listener(g, data[0].speaker, data[0].audio, hot).frames() ==
          generate_listener(g, data[0].speaker, data[0].audio, hot).frames());

    CHECK_THROWS_AS(generate_listener(g, data[0].speaker, AudioFeatureSequence(Matrix::Zero(4, 8))), InvalidArgument);
}

TEST_CASE("generate speaker: shape and determinism") {
    const auto data = corpus(2, 9);
    const GeneratorModel g = finetune_speaker(fresh(), data, tiny_ft(FinetuneTask::Speaker, true));
    const MotionSequence a = generate_speaker(g, data[1].audio);
    CHECK(a.length() == 9);
    CHECK(a.frames() == generate_speaker(g, data[1].audio).frames());
}

TEST_CASE("generator checkpoint round trip") {
    const auto data = corpus(2, 8);
    const GeneratorModel g = finetune_listener(fresh(), data, tiny_ft(FinetuneTask::Listener, true));
    const auto dir = std::filesystem::temp_directory_path() / "dim_unit_gen_ckpt";
    std::filesystem::remove_all(dir);
    save_generator(g, dir);
    const GeneratorModel back = load_generator(dir);
    CHECK(back.config.task == FinetuneTask::Listener);
    CHECK(generate_listener(back, data[1].speaker, data[1].audio).frames() ==
          generate_listener(g, data[1].speaker, data[1].audio).frames());
}

TEST_CASE("baselines: mirror, nearest and random") {
    const auto data = corpus(4, 12);
    const MotionSequence constant(Matrix::Constant(12, kMotionDim, 0.7));
    CHECK((MirrorBaseline(5)(constant).frames().array() - 0.7).abs().maxCoeff() < 1e-15);

    const NearestMotionBaseline nearest(data);
    CHECK(nearest.nearest_index(data[2].speaker) == 2);
    CHECK(nearest(data[2].speaker).frames() == data[2].listener.frames());

    const RandomBaseline noiseless(data, 3, 0.0);
    const MotionSequence r = noiseless(12, 0);
    bool is_training_clip = false;
    for (const auto& s : data) is_training_clip = is_training_clip || r.frames() == s.listener.frames();
    CHECK(is_training_clip);

    const RandomBaseline noisy(data, 3);
    CHECK(noisy(12, 5).frames() == noisy(12, 5).frames());
    CHECK(noisy(20, 1).length() == 20);
    CHECK_THROWS_AS(RandomBaseline({}, 0), InvalidArgument);

    const MotionSequence mean = mean_motion_baseline(data, Role::Speaker, 3);
    CHECK(mean.length() == 3);
    CHECK(mean.frames().row(0) == mean.frames().row(2));
}

TEST_CASE("mirror: centred window clipped at the ends") {
    Matrix x = Matrix::Zero(5, kMotionDim);
    for (int t = 0; t < 5; ++t) x(t, 0) = t;
    const Matrix m = MirrorBaseline(5)(MotionSequence(x)).frames();
    CHECK(m(0, 0) == doctest::Approx(1.0));        // mean of 0,1,2
    CHECK(m(1, 0) == doctest::Approx(1.5));        // mean of 0..3
    CHECK(m(2, 0) == doctest::Approx(2.0));        // mean of 0..4
    CHECK(m(4, 0) == doctest::Approx(3.0));        // mean of 2,3,4
}
