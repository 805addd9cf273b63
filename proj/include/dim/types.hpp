#pragma once

#include <Eigen/Core>

namespace dim {

// Row-major so that a T x D motion matrix can be re-viewed as
// (T/w) x (w*D) without copying.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace dim
