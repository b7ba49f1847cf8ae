#include "extembed/rope.hpp"

#include <cmath>
#include <string>

#include "extembed/errors.hpp"

namespace extembed {

RoPEFrequencies RoPEFrequencies::standard(std::size_t dim, double base) {
  if (dim == 0 || dim % 2 != 0) {
    throw DimensionError("rotary dimension must be a positive even number, got " + std::to_string(dim));
  }
  RoPEFrequencies f;
  f.base = base;
  f.dim = dim;
  f.theta.resize(dim / 2);
  for (std::size_t j = 0; j < dim / 2; ++j) {
    f.theta[j] = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dim));
  }
  return f;
}

namespace {

void check_rotary_input(std::size_t n, const RoPEFrequencies& freqs) {
  if (n % 2 != 0) {
    throw DimensionError("rotary input has odd length " + std::to_string(n));
  }
  if (freqs.theta.size() != n / 2) {
    throw DimensionError("rotary input of length " + std::to_string(n) + " needs " + std::to_string(n / 2) +
                         " frequencies, got " + std::to_string(freqs.theta.size()));
  }
}

}  // namespace

std::vector<double> apply_rope(std::span<const double> h, double m, const RoPEFrequencies& freqs) {
  check_rotary_input(h.size(), freqs);
  std::vector<double> out(h.size());
  for (std::size_t j = 0; j < freqs.theta.size(); ++j) {
    const double angle = m * freqs.theta[j];
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double x0 = h[2 * j];
    const double x1 = h[2 * j + 1];
    out[2 * j] = x0 * c - x1 * s;
    out[2 * j + 1] = x0 * s + x1 * c;
  }
  return out;
}

double attention_score(std::span<const double> q, std::span<const double> k, double m, double n,
                       const RoPEFrequencies& freqs) {
  if (q.size() != k.size()) {
    throw DimensionError("query/key length mismatch: " + std::to_string(q.size()) + " vs " +
                         std::to_string(k.size()));
  }
  const auto qr = apply_rope(q, m, freqs);
  const auto kr = apply_rope(k, n, freqs);
  double acc = 0.0;
  for (std::size_t i = 0; i < qr.size(); ++i) acc += qr[i] * kr[i];
  return acc;
}

double relative_attention_score(std::span<const double> q, std::span<const double> k, double relative,
                                const RoPEFrequencies& freqs) {
  if (q.size() != k.size()) {
    throw DimensionError("query/key length mismatch: " + std::to_string(q.size()) + " vs " +
                         std::to_string(k.size()));
  }
  check_rotary_input(q.size(), freqs);
  // Re[(q0 + i q1)(k0 - i k1) e^{i r theta}]
  double acc = 0.0;
  for (std::size_t j = 0; j < freqs.theta.size(); ++j) {
    const double re = q[2 * j] * k[2 * j] + q[2 * j + 1] * k[2 * j + 1];
    const double im = q[2 * j + 1] * k[2 * j] - q[2 * j] * k[2 * j + 1];
    const double angle = relative * freqs.theta[j];
    acc += re * std::cos(angle) - im * std::sin(angle);
  }
  return acc;
}

}  // namespace extembed
