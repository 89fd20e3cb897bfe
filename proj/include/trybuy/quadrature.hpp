#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace trybuy::quadrature {

struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Hermite rule for the weight exp(-x^2): roots of H_n by Newton
/// iteration on the orthonormal recurrence, with the usual asymptotic
/// starting guesses.
inline Rule gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: n must be >= 1");
  const double pim4 = std::pow(std::numbers::pi, -0.25);
  Rule rule;
  rule.nodes.assign(static_cast<std::size_t>(n), 0.0);
  rule.weights.assign(static_cast<std::size_t>(n), 0.0);
  int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * rule.nodes[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * rule.nodes[1];
    } else {
      z = 2.0 * z - rule.nodes[static_cast<std::size_t>(i - 2)];
    }
    double pp = 0.0;
    for (int its = 0; its < 100; ++its) {
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    rule.nodes[static_cast<std::size_t>(i)] = z;
    rule.nodes[static_cast<std::size_t>(n - 1 - i)] = -z;
    rule.weights[static_cast<std::size_t>(i)] = 2.0 / (pp * pp);
    rule.weights[static_cast<std::size_t>(n - 1 - i)] = rule.weights[static_cast<std::size_t>(i)];
  }
  return rule;
}

inline const Rule& gauss_hermite_64() {
  static const Rule rule = gauss_hermite(64);
  return rule;
}

/// E[f(X)] for X ~ Normal(mean, sd^2).
template <class F>
double normal_expectation(F&& f, double mean, double sd, const Rule& rule = gauss_hermite_64()) {
  if (sd == 0.0) return f(mean);
  double acc = 0.0;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k)
    acc += rule.weights[k] * f(mean + std::numbers::sqrt2 * sd * rule.nodes[k]);
  return acc / std::sqrt(std::numbers::pi);
}

}  // namespace trybuy::quadrature
