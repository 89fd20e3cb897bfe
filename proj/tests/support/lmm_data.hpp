#pragma once

// Random-intercept/random-slope dwell data with known per-participant
// coefficients, plus the no-pooling least-squares oracle.

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "trybuy/core_data.hpp"

namespace trybuy::test_support {

struct LmmTruth {
  double mu_alpha = 3.0, tau_alpha = 1.0;
  double mu_beta = 1.2, tau_beta = 0.3;
  double sigma = 1.5;
  double p_one = 0.1, p_two = 0.1;  // action-count probabilities
};

struct LmmSample {
  std::vector<ImpressionRecord> impressions;
  std::map<std::string, double> alpha, beta;
};

inline LmmSample simulate_lmm(const LmmTruth& t, int participants, int per_participant, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LmmSample s;
  for (int i = 0; i < participants; ++i) {
    std::string pid = "U" + std::to_string(1000 + i);
    double a = t.mu_alpha + t.tau_alpha * z(rng);
    double b = t.mu_beta + t.tau_beta * z(rng);
    s.alpha[pid] = a;
    s.beta[pid] = b;
    for (int j = 0; j < per_participant; ++j) {
      double draw = u(rng);
      int actions = draw < t.p_two ? 2 : (draw < t.p_two + t.p_one ? 1 : 0);
      ImpressionRecord imp;
      imp.participant_id = pid;
      imp.post_id = "S" + std::to_string(j);
      imp.position = j + 1;
      imp.shared = actions >= 1;
      imp.liked = actions == 2;
      imp.dwell_raw = a + b * actions + t.sigma * z(rng);
      s.impressions.push_back(imp);
    }
  }
  return s;
}

struct OlsLine {
  double intercept, slope;
};

// Per-participant least squares; nullopt when the action count never varies.
inline std::map<std::string, std::optional<OlsLine>> no_pooling_fits(const std::vector<ImpressionRecord>& imps) {
  struct Acc {
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  };
  std::map<std::string, Acc> acc;
  for (const auto& imp : imps) {
    auto& a = acc[imp.participant_id];
    double x = imp.action_count(), y = imp.dwell_raw;
    a.n += 1;
    a.sx += x;
    a.sy += y;
    a.sxx += x * x;
    a.sxy += x * y;
  }
  std::map<std::string, std::optional<OlsLine>> out;
  for (const auto& [pid, a] : acc) {
    double sxx = a.sxx - a.sx * a.sx / a.n;
    if (sxx <= 1e-12) {
      out[pid] = std::nullopt;
      continue;
    }
    double slope = (a.sxy - a.sx * a.sy / a.n) / sxx;
    out[pid] = OlsLine{(a.sy - slope * a.sx) / a.n, slope};
  }
  return out;
}

}  // namespace trybuy::test_support
