#pragma once

#include <vector>

#include "dim/autograd.hpp"

namespace dim {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Global gradient-norm clip over trainable parameters; <= 0 disables.
    double grad_clip = 1.0;
};

// Adam over the trainable parameters of one or more stores. Frozen
// parameters are never written.
class Adam {
public:
    Adam(std::vector<ad::ParamStore*> stores, AdamConfig config);

    // Applies one update from the accumulated gradients and returns the
    // pre-clip global gradient norm. Throws DivergenceError on non-finite
    // gradients.
    double step();
    void zero_grad();

    long steps_taken() const { return step_; }

private:
    AdamConfig config_;
    std::vector<ad::ParamStore*> stores_;
    std::vector<std::vector<Matrix>> m_, v_;
    long step_ = 0;
};

}  // namespace dim
