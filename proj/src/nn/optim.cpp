#include "dim/optim.hpp"

#include <cmath>

#include "dim/error.hpp"

namespace dim {

Adam::Adam(std::vector<ad::ParamStore*> stores, AdamConfig config) : config_(config), stores_(std::move(stores)) {
    for (const auto* s : stores_) {
        auto& m = m_.emplace_back();
        auto& v = v_.emplace_back();
        for (const auto& p : s->all()) {
            m.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
            v.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        }
    }
}

void Adam::zero_grad() {
    for (auto* s : stores_) s->zero_grad();
}

double Adam::step() {
    double sq = 0.0;
    for (const auto* s : stores_) {
        for (const auto& p : s->all()) {
            if (p.trainable) sq += p.grad.squaredNorm();
        }
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm");
    const double clip = (config_.grad_clip > 0.0 && norm > config_.grad_clip) ? config_.grad_clip / norm : 1.0;

    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, double(step_));
    for (std::size_t si = 0; si < stores_.size(); ++si) {
        auto& params = stores_[si]->all();
        if (params.size() != m_[si].size()) throw InvalidArgument("Adam: parameter store changed shape");
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (!p.trainable) continue;
            Matrix& m = m_[si][i];
            Matrix& v = v_[si][i];
            const Matrix g = p.grad * clip;
            m = config_.beta1 * m + (1.0 - config_.beta1) * g;
            v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseAbs2();
            p.value.array() -= config_.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.eps);
        }
    }
    return norm;
}

}  // namespace dim
