#include "dim/motion.hpp"

#include <cmath>

#include "dim/error.hpp"

namespace dim {

bool all_finite(const Matrix& m) { return m.allFinite(); }

MotionSequence::MotionSequence(Matrix frames, double frame_rate_hz)
    : frames_(std::move(frames)), frame_rate_hz_(frame_rate_hz) {
    if (frames_.cols() != kMotionDim) {
        throw InvalidArgument("motion must have 56 columns, got " + std::to_string(frames_.cols()));
    }
    if (frames_.rows() < 1) throw InvalidArgument("motion must have at least one frame");
    if (!all_finite(frames_)) throw InvalidArgument("motion contains non-finite values");
    if (!(frame_rate_hz_ > 0.0)) throw InvalidArgument("frame rate must be positive");
}

MotionSequence MotionSequence::from_parts(const Matrix& expression, const Matrix& pose,
                                          double frame_rate_hz) {
    if (expression.cols() != kExprDim || pose.cols() != kPoseDim || expression.rows() != pose.rows()) {
        throw InvalidArgument("expression/pose blocks have inconsistent shapes");
    }
    Matrix frames(expression.rows(), kMotionDim);
    frames << expression, pose;
    return MotionSequence(std::move(frames), frame_rate_hz);
}

AudioFeatureSequence::AudioFeatureSequence(Matrix features) : features_(std::move(features)) {
    if (features_.rows() < 1) throw InvalidArgument("audio must have at least one frame");
    if (features_.cols() < 1) throw InvalidArgument("audio must have at least one feature");
    if (!all_finite(features_)) throw InvalidArgument("audio contains non-finite values");
}

void DyadicSample::validate() const {
    if (speaker.length() != listener.length()) {
        throw InvalidArgument("clip " + clip_id + ": speaker/listener length mismatch");
    }
    if (audio.length() != speaker.length()) {
        throw InvalidArgument("clip " + clip_id + ": audio is not aligned to motion length");
    }
}

AudioFeatureSequence align_audio(const AudioFeatureSequence& audio, Eigen::Index target_length) {
    if (target_length < 1) throw InvalidArgument("align_audio: target length must be >= 1");
    const Eigen::Index src_len = audio.length();
    if (src_len == target_length) return audio;
    const Matrix& src = audio.features();
    Matrix out(target_length, src.cols());
    for (Eigen::Index i = 0; i < target_length; ++i) {
        if (src_len == 1 || target_length == 1) {
            out.row(i) = src.row(0);
            continue;
        }
        const double pos = double(i) * double(src_len - 1) / double(target_length - 1);
        const auto lo = static_cast<Eigen::Index>(std::floor(pos));
        const Eigen::Index hi = std::min(lo + 1, src_len - 1);
        const double frac = pos - double(lo);
        if (frac == 0.0) {
            out.row(i) = src.row(lo);
        } else {
            out.row(i) = (1.0 - frac) * src.row(lo) + frac * src.row(hi);
        }
    }
    return AudioFeatureSequence(std::move(out));
}

DyadicSample with_aligned_audio(const DyadicSample& sample) {
    DyadicSample out = sample;
    out.audio = align_audio(sample.audio, sample.speaker.length());
    out.validate();
    return out;
}

}  // namespace dim
