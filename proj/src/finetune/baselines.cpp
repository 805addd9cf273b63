#include <limits>

#include "dim/error.hpp"
#include "dim/finetune.hpp"

namespace dim {

namespace {

// First `length` frames of `m`, holding the last frame when `m` is shorter.
Matrix fit_length(const Matrix& m, Eigen::Index length) {
    Matrix out(length, m.cols());
    const Eigen::Index keep = std::min(length, m.rows());
    out.topRows(keep) = m.topRows(keep);
    for (Eigen::Index r = keep; r < length; ++r) out.row(r) = m.row(m.rows() - 1);
    return out;
}

}  // namespace

RandomBaseline::RandomBaseline(const std::vector<DyadicSample>& corpus, std::uint64_t seed, double sigma_fraction)
    : seed_(seed) {
    if (corpus.empty()) throw InvalidArgument("random baseline: empty corpus");
    if (!(sigma_fraction >= 0.0)) throw InvalidArgument("random baseline: sigma_fraction must be >= 0");
    Eigen::Index rows = 0;
    for (const auto& s : corpus) {
        listeners_.push_back(s.listener.frames());
        rows += s.listener.length();
    }
    Matrix all(rows, kMotionDim);
    Eigen::Index r = 0;
    for (const auto& l : listeners_) {
        all.middleRows(r, l.rows()) = l;
        r += l.rows();
    }
    const RowVector mean = all.colwise().mean();
    noise_sd_ = ((all.rowwise() - mean).array().square().colwise().sum() / double(rows)).sqrt().matrix();
    noise_sd_ *= sigma_fraction;
}

MotionSequence RandomBaseline::operator()(Eigen::Index length, std::size_t query_index) const {
    if (length < 1) throw InvalidArgument("random baseline: length must be >= 1");
    Rng rng(mix_seed(seed_, {0x72616e64, static_cast<std::uint64_t>(query_index)}));
    Matrix out = fit_length(listeners_[rng.uniform_index(listeners_.size())], length);
    for (Eigen::Index t = 0; t < out.rows(); ++t) {
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
            if (noise_sd_(c) > 0.0) out(t, c) += rng.normal(0.0, noise_sd_(c));
        }
    }
    return MotionSequence(std::move(out));
}

NearestMotionBaseline::NearestMotionBaseline(const std::vector<DyadicSample>& corpus) {
    if (corpus.empty()) throw InvalidArgument("nearest-motion baseline: empty corpus");
    for (const auto& s : corpus) {
        speaker_means_.push_back(s.speaker.frames().colwise().mean());
        listeners_.push_back(s.listener.frames());
    }
}

std::size_t NearestMotionBaseline::nearest_index(const MotionSequence& speaker) const {
    const RowVector q = speaker.frames().colwise().mean();
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < speaker_means_.size(); ++i) {
        const double d = (speaker_means_[i] - q).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

MotionSequence NearestMotionBaseline::operator()(const MotionSequence& speaker) const {
    return MotionSequence(fit_length(listeners_[nearest_index(speaker)], speaker.length()));
}

MirrorBaseline::MirrorBaseline(int window) : window_(window) {
    if (window < 1) throw InvalidArgument("mirror baseline: window must be >= 1");
}

MotionSequence MirrorBaseline::operator()(const MotionSequence& speaker) const {
    const Matrix& x = speaker.frames();
    const Eigen::Index T = x.rows();
    const Eigen::Index before = (window_ - 1) / 2;
    const Eigen::Index after = window_ - 1 - before;
    Matrix out(T, x.cols());
    for (Eigen::Index t = 0; t < T; ++t) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, t - before);
        const Eigen::Index hi = std::min<Eigen::Index>(T - 1, t + after);
        out.row(t) = x.middleRows(lo, hi - lo + 1).colwise().mean();
    }
    return MotionSequence(std::move(out));
}

MotionSequence mean_motion_baseline(const std::vector<DyadicSample>& corpus, Role role, Eigen::Index length) {
    if (corpus.empty()) throw InvalidArgument("mean baseline: empty corpus");
    RowVector sum = RowVector::Zero(kMotionDim);
    double count = 0.0;
    for (const auto& s : corpus) {
        const Matrix& m = role == Role::Speaker ? s.speaker.frames() : s.listener.frames();
        sum += m.colwise().sum();
        count += double(m.rows());
    }
    return MotionSequence(Matrix(Matrix::Ones(length, 1) * (sum / count)));
}

}  // namespace dim
