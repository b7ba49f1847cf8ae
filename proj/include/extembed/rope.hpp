#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace extembed {

// Per-pair rotation frequencies theta_j = base^(-2j/d), j in [0, d/2).
struct RoPEFrequencies {
  double base = 10000.0;
  std::size_t dim = 0;
  std::vector<double> theta;

  static RoPEFrequencies standard(std::size_t dim, double base = 10000.0);
};

// Rotates pairs (h[2j], h[2j+1]) by m * theta_j. Throws DimensionError on odd
// length or a frequency count that does not match.
std::vector<double> apply_rope(std::span<const double> h, double m, const RoPEFrequencies& freqs);

// Re<f(q, m), f(k, n)>: the rotary attention score, a function of m - n only.
double attention_score(std::span<const double> q, std::span<const double> k, double m, double n,
                       const RoPEFrequencies& freqs);

// Same score written directly in terms of the relative phase m - n.
double relative_attention_score(std::span<const double> q, std::span<const double> k, double relative,
                                const RoPEFrequencies& freqs);

}  // namespace extembed
