#pragma once

#include <Eigen/Dense>

namespace gmmlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Column-per-sample batch: a D x N matrix.
using Batch = Eigen::MatrixXd;

}  // namespace gmmlab
