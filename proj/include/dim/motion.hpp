#pragma once

#include <cstddef>
#include <string>

#include "dim/types.hpp"

namespace dim {

inline constexpr Eigen::Index kExprDim = 50;
inline constexpr Eigen::Index kPoseDim = 6;
inline constexpr Eigen::Index kMotionDim = kExprDim + kPoseDim;

// Per-frame facial motion coefficients: columns [0,50) expression,
// [50,56) head pose. Always at least one frame, always finite.
class MotionSequence {
public:
    explicit MotionSequence(Matrix frames, double frame_rate_hz = 25.0);

    static MotionSequence from_parts(const Matrix& expression, const Matrix& pose,
                                     double frame_rate_hz = 25.0);

    const Matrix& frames() const { return frames_; }
    Eigen::Index length() const { return frames_.rows(); }
    double frame_rate_hz() const { return frame_rate_hz_; }

    Matrix expression() const { return frames_.leftCols(kExprDim); }
    Matrix pose() const { return frames_.rightCols(kPoseDim); }

private:
    Matrix frames_;
    double frame_rate_hz_;
};

// Precomputed speech features (T_a x D_a).
class AudioFeatureSequence {
public:
    explicit AudioFeatureSequence(Matrix features);

    const Matrix& features() const { return features_; }
    Eigen::Index length() const { return features_.rows(); }
    Eigen::Index width() const { return features_.cols(); }

private:
    Matrix features_;
};

// One aligned speaker/listener/audio clip.
struct DyadicSample {
    std::string clip_id;
    MotionSequence speaker;
    MotionSequence listener;
    AudioFeatureSequence audio;

    Eigen::Index length() const { return speaker.length(); }

    // Throws unless speaker, listener and audio share one length.
    void validate() const;
};

// Linear interpolation along time onto `target_length` frames with the first
// and last frames pinned. Identity when the lengths already agree.
AudioFeatureSequence align_audio(const AudioFeatureSequence& audio, Eigen::Index target_length);

// Returns a copy of `sample` whose audio has been aligned to the motion length.
DyadicSample with_aligned_audio(const DyadicSample& sample);

bool all_finite(const Matrix& m);

}  // namespace dim
