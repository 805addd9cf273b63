#pragma once

#include <cstdint>
#include <vector>

#include "dim/motion.hpp"

namespace dim {

// Parameters of the synthetic dyadic-conversation generator.
//
// Speaker motion is a mixture of per-clip random sinusoids projected into the
// 56 coefficient dims plus a per-clip discrete behaviour-mode offset. The
// listener is a fixed linear map of the speaker delayed by `lag` frames, a
// mode-dependent offset and truncated Gaussian noise. Audio is a fixed noisy
// projection of the speaker motion.
struct SynthConfig {
    int n_clips = 20;
    int length = 64;
    int lag = 4;
    double noise = 0.01;
    int n_modes = 4;
    std::uint64_t seed = 0;

    int audio_dim = 64;
    int n_components = 3;
    double amplitude = 1.0;
    double mode_scale = 0.5;
    double audio_noise = 0.01;
    double freq_min = 0.08;  // radians per frame
    double freq_max = 0.30;
    // Listener = delayed speaker exactly (maps become identities).
    bool identity_coupling = false;

    void validate() const;

    // Upper bound on |value| of any generated motion coefficient.
    double bound() const { return amplitude + 2.0 * mode_scale + 4.0 * noise; }
};

// Fixed (per seed) linear structure shared by every clip.
struct SynthStructure {
    Matrix mixing;            // 56 x n_components, rows have L1 norm 1
    Matrix expr_map;          // 50 x 50, rows have L1 norm <= 1
    Matrix pose_map;          // 6 x 6, rows have L1 norm <= 1
    Matrix audio_projection;  // audio_dim x 56
    Matrix speaker_offsets;   // n_modes x 56
    Matrix listener_offsets;  // n_modes x 56
};

struct SynthCorpus {
    SynthStructure structure;
    std::vector<DyadicSample> samples;
    std::vector<int> modes;  // behaviour mode of each clip
};

SynthStructure synth_structure(const SynthConfig& config);
SynthCorpus synth_corpus(const SynthConfig& config);
std::vector<DyadicSample> synth_dyads(const SynthConfig& config);

// Noise-free listener frame for a given (float32-rounded) speaker frame.
// Sums run over ascending source index so callers can reproduce it exactly.
RowVector couple_listener_frame(const SynthStructure& s, const RowVector& speaker_frame, int mode);

}  // namespace dim
