#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace extembed {

// Row-major so that one token (or one position) is one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// FNV-1a over the raw bytes of a matrix, including its shape.
std::uint64_t checksum(const Matrix& m, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace extembed
