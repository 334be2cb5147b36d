#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace tten {

// Row-major so per-node embedding rows are contiguous.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

using Rng = std::mt19937_64;

}  // namespace tten
