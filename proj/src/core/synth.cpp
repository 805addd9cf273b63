#include "dim/synth.hpp"

#include <algorithm>
#include <cmath>

#include "dim/error.hpp"
#include "dim/rng.hpp"

namespace dim {

namespace {

float to_f32(double v) { return static_cast<float>(v); }

// Rows normalised to unit L1 norm.
void normalize_rows_l1(Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double s = m.row(r).cwiseAbs().sum();
        if (s > 0) m.row(r) /= s;
    }
}

// Diagonal-dominant map: 0.8 * I + 0.2 * (random mix with unit L1 rows).
Matrix coupling_map(Rng& rng, Eigen::Index n) {
    Matrix mix(n, n);
    for (Eigen::Index i = 0; i < mix.size(); ++i) mix.data()[i] = rng.normal();
    normalize_rows_l1(mix);
    Matrix m = 0.2 * mix;
    for (Eigen::Index i = 0; i < n; ++i) m(i, i) += 0.8;
    // Keep the row bound exact after adding the diagonal.
    for (Eigen::Index r = 0; r < n; ++r) {
        const double s = m.row(r).cwiseAbs().sum();
        if (s > 1.0) m.row(r) /= s;
    }
    return m;
}

}  // namespace

void SynthConfig::validate() const {
    if (n_clips < 1) throw InvalidArgument("synth: n_clips must be >= 1");
    if (length < 1) throw InvalidArgument("synth: length must be >= 1");
    if (lag < 0 || lag >= length) throw InvalidArgument("synth: lag must satisfy 0 <= lag < T");
    if (!(noise >= 0.0)) throw InvalidArgument("synth: noise must be >= 0");
    if (n_modes < 1) throw InvalidArgument("synth: n_modes must be >= 1");
    if (audio_dim < 1 || n_components < 1) throw InvalidArgument("synth: dims must be >= 1");
    if (!(amplitude >= 0.0) || !(mode_scale >= 0.0) || !(audio_noise >= 0.0)) {
        throw InvalidArgument("synth: amplitudes must be >= 0");
    }
    if (!(freq_min > 0.0 && freq_max >= freq_min)) throw InvalidArgument("synth: bad frequency range");
}

SynthStructure synth_structure(const SynthConfig& config) {
    config.validate();
    Rng rng(mix_seed(config.seed, {0x5752}));
    SynthStructure s;
    s.mixing.resize(kMotionDim, config.n_components);
    for (Eigen::Index i = 0; i < s.mixing.size(); ++i) s.mixing.data()[i] = rng.normal();
    normalize_rows_l1(s.mixing);

    if (config.identity_coupling) {
        s.expr_map = Matrix::Identity(kExprDim, kExprDim);
        s.pose_map = Matrix::Identity(kPoseDim, kPoseDim);
    } else {
        s.expr_map = coupling_map(rng, kExprDim);
        s.pose_map = coupling_map(rng, kPoseDim);
    }

    s.audio_projection.resize(config.audio_dim, kMotionDim);
    const double proj_scale = 1.0 / std::sqrt(double(kMotionDim));
    for (Eigen::Index i = 0; i < s.audio_projection.size(); ++i) {
        s.audio_projection.data()[i] = proj_scale * rng.normal();
    }

    s.speaker_offsets.resize(config.n_modes, kMotionDim);
    s.listener_offsets.resize(config.n_modes, kMotionDim);
    for (Eigen::Index i = 0; i < s.speaker_offsets.size(); ++i) {
        s.speaker_offsets.data()[i] = rng.uniform(-config.mode_scale, config.mode_scale);
    }
    for (Eigen::Index i = 0; i < s.listener_offsets.size(); ++i) {
        s.listener_offsets.data()[i] = rng.uniform(-config.mode_scale, config.mode_scale);
    }
    if (config.identity_coupling) s.listener_offsets = s.speaker_offsets;
    return s;
}

RowVector couple_listener_frame(const SynthStructure& s, const RowVector& speaker_frame, int mode) {
    RowVector out(kMotionDim);
    for (Eigen::Index i = 0; i < kExprDim; ++i) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < kExprDim; ++j) acc += s.expr_map(i, j) * speaker_frame(j);
        out(i) = acc;
    }
    for (Eigen::Index i = 0; i < kPoseDim; ++i) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < kPoseDim; ++j) acc += s.pose_map(i, j) * speaker_frame(kExprDim + j);
        out(kExprDim + i) = acc;
    }
    // Speaker frames already include the speaker offset; swap it for the
    // listener's.
    for (Eigen::Index i = 0; i < kMotionDim; ++i) {
        double mapped_offset = 0.0;
        if (i < kExprDim) {
            for (Eigen::Index j = 0; j < kExprDim; ++j) mapped_offset += s.expr_map(i, j) * s.speaker_offsets(mode, j);
        } else {
            const Eigen::Index r = i - kExprDim;
            for (Eigen::Index j = 0; j < kPoseDim; ++j) {
                mapped_offset += s.pose_map(r, j) * s.speaker_offsets(mode, kExprDim + j);
            }
        }
        out(i) = out(i) - mapped_offset + s.listener_offsets(mode, i);
    }
    return out;
}

SynthCorpus synth_corpus(const SynthConfig& config) {
    SynthCorpus corpus;
    corpus.structure = synth_structure(config);
    const SynthStructure& s = corpus.structure;
    const int T = config.length;
    const int lag = config.lag;
    const int K = config.n_components;

    for (int c = 0; c < config.n_clips; ++c) {
        Rng rng(mix_seed(config.seed, {0xC11F, static_cast<std::uint64_t>(c)}));
        const int mode = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(config.n_modes)));
        std::vector<double> freq(K), phase(K);
        for (int k = 0; k < K; ++k) {
            freq[k] = rng.uniform(config.freq_min, config.freq_max);
            phase[k] = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        }

        // Speaker frames for t in [-lag, T), float32-rounded.
        Matrix extended(T + lag, kMotionDim);
        for (int row = 0; row < T + lag; ++row) {
            const double t = double(row - lag);
            for (Eigen::Index d = 0; d < kMotionDim; ++d) {
                double v = 0.0;
                for (int k = 0; k < K; ++k) v += s.mixing(d, k) * std::sin(freq[k] * t + phase[k]);
                extended(row, d) = to_f32(config.amplitude * v + s.speaker_offsets(mode, d));
            }
        }
        Matrix speaker = extended.bottomRows(T);

        Matrix listener(T, kMotionDim);
        for (int t = 0; t < T; ++t) {
            const RowVector clean = couple_listener_frame(s, extended.row(t), mode);
            for (Eigen::Index d = 0; d < kMotionDim; ++d) {
                double n = 0.0;
                if (config.noise > 0.0) n = std::clamp(rng.normal(), -4.0, 4.0) * config.noise;
                listener(t, d) = to_f32(clean(d) + n);
            }
        }

        Matrix audio(T, config.audio_dim);
        for (int t = 0; t < T; ++t) {
            for (int a = 0; a < config.audio_dim; ++a) {
                double acc = 0.0;
                for (Eigen::Index d = 0; d < kMotionDim; ++d) acc += s.audio_projection(a, d) * speaker(t, d);
                if (config.audio_noise > 0.0) acc += config.audio_noise * rng.normal();
                audio(t, a) = to_f32(acc);
            }
        }

        char id[32];
        std::snprintf(id, sizeof(id), "synth_%05d", c);
        corpus.samples.push_back(DyadicSample{id, MotionSequence(std::move(speaker)),
                                              MotionSequence(std::move(listener)),
                                              AudioFeatureSequence(std::move(audio))});
        corpus.modes.push_back(mode);
    }
    return corpus;
}

std::vector<DyadicSample> synth_dyads(const SynthConfig& config) { return synth_corpus(config).samples; }

}  // namespace dim
