#pragma once

// Dwell preprocessing: 30 s cap and edge trim, hierarchical movement-time
// model, motor subtraction, then the 0.15 s floor.
//
// Movement model (random intercept + random slope, Gaussian):
//
//   dwell_ij = alpha_i + beta_i * actions_ij + e_ij
//   alpha_i ~ N(mu_alpha, tau_alpha^2),  beta_i ~ N(mu_beta, tau_beta^2),
//   e_ij ~ N(0, sigma^2)
//
// fitted by EM on per-participant sufficient statistics. Per-participant
// coefficients are posterior means given the estimated variance components.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "trybuy/core_data.hpp"
#include "trybuy/error.hpp"

namespace trybuy {

struct ExclusionRules {
  double max_dwell = 30.0;
  int edge_trim = 3;
  double min_adjusted_dwell = 0.15;

  void validate() const {
    if (!(max_dwell > 0)) throw InputError("rules: max_dwell must be > 0");
    if (edge_trim < 0) throw InputError("rules: edge_trim must be >= 0");
    if (!(min_adjusted_dwell >= 0)) throw InputError("rules: min_adjusted_dwell must be >= 0");
  }
};

struct PipelineAudit {
  std::size_t input_count = 0;
  std::size_t removed_max_dwell = 0;
  std::size_t removed_edge_trim = 0;
  std::size_t removed_min_dwell = 0;
  std::size_t retained_count = 0;
  std::vector<std::string> warnings;

  std::size_t removed_total() const { return removed_max_dwell + removed_edge_trim + removed_min_dwell; }
  bool conserved() const { return removed_total() + retained_count == input_count; }
};

struct ParticipantCoefficients {
  double alpha = 0.0;  // seconds
  double beta = 0.0;   // seconds per action ("movement time")
  std::size_t n = 0;
};

struct MovementOptions {
  double tolerance = 1e-8;  // relative log-likelihood change
  int max_iterations = 500;
  // Adds a fixed engaged/not-engaged step to the mean so that beta_i is
  // identified only from the 1-vs-2 action contrast. Off by default.
  bool engagement_step = false;
};

struct MovementModel {
  double mu_alpha = 0.0;
  double mu_beta = 0.0;
  double tau_alpha = 0.0;
  double tau_beta = 0.0;
  double sigma_eps = 0.0;
  double engagement_step = 0.0;  // only non-zero with MovementOptions::engagement_step
  bool slope_identified = false;
  bool step_fitted = false;
  int iterations = 0;
  bool converged = false;
  double log_likelihood = 0.0;
  std::map<std::string, ParticipantCoefficients> participants;
  std::vector<std::string> warnings;

  const ParticipantCoefficients& at(const std::string& participant) const {
    auto it = participants.find(participant);
    if (it == participants.end())
      throw InternalError("movement model has no entry for participant '" + participant +
                          "' (adjust_dwell called on data the model was not fitted to)");
    return it->second;
  }
};

// ---------------------------------------------------------------------------
// Stage 1: cap + edge trim

struct StageResult {
  std::vector<ImpressionRecord> kept;
  PipelineAudit audit;
};

/// Removes dwell_raw > max_dwell first, then the first/last `edge_trim`
/// positions of each participant's feed. Feed length is the participant's
/// largest position in the input.
inline StageResult apply_exclusions_stage1(const std::vector<ImpressionRecord>& impressions,
                                           const ExclusionRules& rules) {
  rules.validate();
  StageResult out;
  out.audit.input_count = impressions.size();
  std::map<std::string, int> feed_length;
  for (const auto& imp : impressions) {
    int& len = feed_length[imp.participant_id];
    len = std::max(len, imp.position);
  }
  for (const auto& [pid, len] : feed_length)
    if (len <= 2 * rules.edge_trim)
      out.audit.warnings.push_back("participant " + pid + " has feed length " + std::to_string(len) +
                                   " <= 2*edge_trim; all impressions removed");

  for (const auto& imp : impressions) {
    if (imp.dwell_raw > rules.max_dwell) {
      ++out.audit.removed_max_dwell;
      continue;
    }
    int len = feed_length[imp.participant_id];
    if (imp.position <= rules.edge_trim || imp.position > len - rules.edge_trim) {
      ++out.audit.removed_edge_trim;
      continue;
    }
    out.kept.push_back(imp);
  }
  out.audit.retained_count = out.kept.size();
  return out;
}

// ---------------------------------------------------------------------------
// Movement model

namespace detail {

struct ParticipantStats {
  double n = 0, sa = 0, saa = 0, sy = 0, say = 0, syy = 0;
  double se = 0, sea = 0, sey = 0;  // engaged-indicator cross products
  int min_action = 3, max_action = -1;
  bool has_one = false, has_two = false;
};

struct Posterior {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;
  double log_likelihood;
};

// Posterior of (alpha_i, beta_i) and marginal log-likelihood of one
// participant's responses, using K = G (I + S G / s2)^-1 so that a singular
// G (tau = 0) is handled without inversion.
inline Posterior participant_posterior(const ParticipantStats& st, const Eigen::Vector2d& mu,
                                       const Eigen::Matrix2d& g, double s2, double step) {
  Eigen::Matrix2d s;
  s << st.n, st.sa, st.sa, st.saa;
  Eigen::Vector2d xty(st.sy - step * st.se, st.say - step * st.sea);
  double yty = st.syy - 2.0 * step * st.sey + step * step * st.se;

  Eigen::Vector2d xtr = xty - s * mu;
  double rtr = yty - 2.0 * mu.dot(xty) + mu.dot(s * mu);
  Eigen::Matrix2d a = Eigen::Matrix2d::Identity() + s * g / s2;
  Eigen::Matrix2d k = g * a.inverse();
  k = 0.5 * (k + k.transpose());

  Posterior p;
  p.mean = mu + k * xtr / s2;
  p.cov = k;
  double det_a = a.determinant();
  p.log_likelihood = -0.5 * (st.n * std::log(2.0 * std::numbers::pi * s2) + std::log(det_a) + rtr / s2 -
                             xtr.dot(k * xtr) / (s2 * s2));
  return p;
}

}  // namespace detail

/// Fits the movement model by EM (relative log-likelihood change below
/// `tolerance`, at most `max_iterations`). Deterministic: statistics are
/// accumulated in input order and reduced in participant-id order.
inline MovementModel fit_movement_model(const std::vector<ImpressionRecord>& impressions,
                                        const MovementOptions& opts = {}) {
  if (impressions.empty()) throw InputError("fit_movement_model: no impressions");

  std::map<std::string, detail::ParticipantStats> stats;
  for (const auto& imp : impressions) {
    auto& st = stats[imp.participant_id];
    double a = imp.action_count();
    double e = imp.engaged() ? 1.0 : 0.0;
    double y = imp.dwell_raw;
    st.n += 1;
    st.sa += a;
    st.saa += a * a;
    st.sy += y;
    st.say += a * y;
    st.syy += y * y;
    st.se += e;
    st.sea += e * a;
    st.sey += e * y;
    st.min_action = std::min(st.min_action, imp.action_count());
    st.max_action = std::max(st.max_action, imp.action_count());
    st.has_one |= imp.action_count() == 1;
    st.has_two |= imp.action_count() == 2;
  }
  std::vector<std::string> ids;
  std::vector<detail::ParticipantStats> ps;
  for (auto& [id, st] : stats) {
    ids.push_back(id);
    ps.push_back(st);
  }
  const std::size_t m = ps.size();
  double n_total = 0, se_total = 0;
  for (const auto& st : ps) {
    n_total += st.n;
    se_total += st.se;
  }

  MovementModel model;
  bool any_engaged = se_total > 0;
  bool slope_free = false;
  bool step_free = false;
  if (opts.engagement_step) {
    step_free = std::any_of(ps.begin(), ps.end(), [](const auto& st) { return st.se > 0 && st.se < st.n; });
    slope_free = std::any_of(ps.begin(), ps.end(), [](const auto& st) { return st.has_one && st.has_two; });
    if (!slope_free && any_engaged)
      model.warnings.push_back("no participant has both 1- and 2-action impressions; slope fixed at 0");
  } else {
    slope_free = std::any_of(ps.begin(), ps.end(), [](const auto& st) { return st.min_action != st.max_action; });
  }
  if (!slope_free)
    model.warnings.push_back("no within-participant engagement variation; movement slope set to 0");
  model.slope_identified = slope_free;
  model.step_fitted = step_free;

  // Pooled least squares for starting values.
  Eigen::Vector2d mu = Eigen::Vector2d::Zero();
  double step = 0.0;
  double s2 = 1.0;
  {
    Eigen::Matrix3d xtx = Eigen::Matrix3d::Zero();
    Eigen::Vector3d xty = Eigen::Vector3d::Zero();
    double yty = 0;
    for (const auto& st : ps) {
      xtx(0, 0) += st.n;
      xtx(0, 1) += st.sa;
      xtx(1, 1) += st.saa;
      xtx(0, 2) += st.se;
      xtx(1, 2) += st.sea;
      xtx(2, 2) += st.se;
      xty(0) += st.sy;
      xty(1) += st.say;
      xty(2) += st.sey;
      yty += st.syy;
    }
    xtx(1, 0) = xtx(0, 1);
    xtx(2, 0) = xtx(0, 2);
    xtx(2, 1) = xtx(1, 2);
    std::vector<int> cols{0};
    if (slope_free) cols.push_back(1);
    if (step_free) cols.push_back(2);
    Eigen::MatrixXd a(cols.size(), cols.size());
    Eigen::VectorXd b(cols.size());
    for (std::size_t i = 0; i < cols.size(); ++i) {
      b(i) = xty(cols[i]);
      for (std::size_t j = 0; j < cols.size(); ++j) a(i, j) = xtx(cols[i], cols[j]);
    }
    Eigen::VectorXd coef = a.ldlt().solve(b);
    double rss = yty - 2.0 * coef.dot(b) + coef.dot(a * coef);
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (cols[i] == 0) mu(0) = coef(i);
      if (cols[i] == 1) mu(1) = coef(i);
      if (cols[i] == 2) step = coef(i);
    }
    s2 = std::max(rss / std::max(1.0, n_total - static_cast<double>(cols.size())), 1e-8);
  }
  Eigen::Matrix2d g = Eigen::Matrix2d::Zero();
  {
    // Spread of participant mean residuals and no-pooling slopes, floored so
    // EM does not start on the tau = 0 boundary.
    double ss_a = 0, ss_b = 0, mean_saa = 0;
    int nb = 0;
    for (const auto& st : ps) {
      double resid_mean = (st.sy - step * st.se) / st.n - mu(0) - mu(1) * st.sa / st.n;
      ss_a += resid_mean * resid_mean;
      mean_saa += st.saa / static_cast<double>(m);
      double sxx = st.saa - st.sa * st.sa / st.n;
      if (slope_free && sxx > 1e-12) {
        double sxy = (st.say - step * st.sea) - st.sa * (st.sy - step * st.se) / st.n;
        double b = sxy / sxx - mu(1);
        ss_b += b * b;
        ++nb;
      }
    }
    g(0, 0) = std::max(ss_a / static_cast<double>(m), 0.05 * s2);
    if (slope_free) g(1, 1) = std::max(nb > 0 ? ss_b / nb : 0.0, 0.05 * s2 / std::max(mean_saa, 1.0));
  }

  std::vector<detail::Posterior> post(m);
  double ll_old = -std::numeric_limits<double>::infinity();
  auto e_step = [&] {
    double ll = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      post[i] = detail::participant_posterior(ps[i], mu, g, s2, step);
      ll += post[i].log_likelihood;
    }
    return ll;
  };
  ll_old = e_step();
  int iter = 0;
  bool converged = false;
  for (iter = 1; iter <= opts.max_iterations; ++iter) {
    // M-step
    Eigen::Vector2d mu_new = Eigen::Vector2d::Zero();
    for (const auto& p : post) mu_new += p.mean;
    mu_new /= static_cast<double>(m);
    if (!slope_free) mu_new(1) = 0.0;
    Eigen::Matrix2d g_new = Eigen::Matrix2d::Zero();
    for (const auto& p : post) {
      Eigen::Vector2d d = p.mean - mu_new;
      g_new(0, 0) += d(0) * d(0) + p.cov(0, 0);
      g_new(1, 1) += d(1) * d(1) + p.cov(1, 1);
    }
    g_new /= static_cast<double>(m);
    if (!slope_free) g_new(1, 1) = 0.0;
    double step_new = 0.0;
    if (step_free) {
      double num = 0.0;
      for (std::size_t i = 0; i < m; ++i)
        num += ps[i].sey - post[i].mean(0) * ps[i].se - post[i].mean(1) * ps[i].sea;
      step_new = num / se_total;
    }
    double rss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto& st = ps[i];
      Eigen::Matrix2d s;
      s << st.n, st.sa, st.sa, st.saa;
      Eigen::Vector2d xty(st.sy - step_new * st.se, st.say - step_new * st.sea);
      double yty = st.syy - 2.0 * step_new * st.sey + step_new * step_new * st.se;
      const auto& b = post[i].mean;
      rss += yty - 2.0 * b.dot(xty) + b.dot(s * b) + (s * post[i].cov).trace();
    }
    mu = mu_new;
    g = g_new;
    step = step_new;
    s2 = std::max(rss / n_total, 1e-12);

    double ll = e_step();
    if (std::abs(ll - ll_old) < opts.tolerance * std::max(std::abs(ll_old), 1e-300)) {
      ll_old = ll;
      converged = true;
      break;
    }
    ll_old = ll;
  }
  if (!converged) {
    iter = opts.max_iterations;
    model.warnings.push_back("EM did not reach the convergence tolerance in " +
                             std::to_string(opts.max_iterations) + " iterations");
  }

  model.mu_alpha = mu(0);
  model.mu_beta = slope_free ? mu(1) : 0.0;
  model.tau_alpha = std::sqrt(std::max(g(0, 0), 0.0));
  model.tau_beta = slope_free ? std::sqrt(std::max(g(1, 1), 0.0)) : 0.0;
  model.sigma_eps = std::sqrt(s2);
  model.engagement_step = step_free ? step : 0.0;
  model.iterations = iter;
  model.converged = converged;
  model.log_likelihood = ll_old;
  for (std::size_t i = 0; i < m; ++i) {
    ParticipantCoefficients c;
    c.alpha = post[i].mean(0);
    c.beta = slope_free ? post[i].mean(1) : 0.0;
    c.n = static_cast<std::size_t>(ps[i].n);
    model.participants.emplace(ids[i], c);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Adjustment and floor

/// dwell_adjusted = max(0, dwell_raw - beta_i * actions). Zero-action
/// impressions are copied through untouched.
inline std::vector<ImpressionRecord> adjust_dwell(const std::vector<ImpressionRecord>& impressions,
                                                  const MovementModel& model) {
  std::vector<ImpressionRecord> out = impressions;
  for (auto& imp : out) {
    const auto& coef = model.at(imp.participant_id);
    int actions = imp.action_count();
    if (actions == 0) {
      imp.dwell_adjusted = imp.dwell_raw;
    } else {
      imp.dwell_adjusted = std::max(0.0, imp.dwell_raw - coef.beta * actions);
    }
  }
  return out;
}

/// Removes impressions with dwell_adjusted < min_adjusted_dwell (the
/// boundary value itself is kept).
inline StageResult apply_floor(const std::vector<ImpressionRecord>& impressions, const ExclusionRules& rules) {
  rules.validate();
  StageResult out;
  out.audit.input_count = impressions.size();
  for (const auto& imp : impressions) {
    if (!imp.dwell_adjusted) throw InternalError("apply_floor: impression has no dwell_adjusted");
    if (*imp.dwell_adjusted < rules.min_adjusted_dwell) {
      ++out.audit.removed_min_dwell;
      continue;
    }
    out.kept.push_back(imp);
  }
  out.audit.retained_count = out.kept.size();
  return out;
}

struct PipelineOptions {
  MovementOptions movement;
  // When false the movement model is skipped and dwell_adjusted = dwell_raw;
  // used for with/without-pipeline comparisons.
  bool adjust_motor = true;
};

struct PipelineResult {
  std::vector<ImpressionRecord> impressions;
  std::optional<MovementModel> model;
  PipelineAudit audit;
};

/// stage 1 -> movement fit -> adjustment -> floor.
inline PipelineResult run_pipeline(const std::vector<ImpressionRecord>& impressions, const ExclusionRules& rules,
                                   const PipelineOptions& opts = {}) {
  rules.validate();
  PipelineResult result;
  auto stage1 = apply_exclusions_stage1(impressions, rules);
  std::vector<ImpressionRecord> adjusted;
  if (stage1.kept.empty()) {
    adjusted = {};
  } else if (opts.adjust_motor) {
    result.model = fit_movement_model(stage1.kept, opts.movement);
    adjusted = adjust_dwell(stage1.kept, *result.model);
  } else {
    adjusted = stage1.kept;
    for (auto& imp : adjusted) imp.dwell_adjusted = imp.dwell_raw;
  }
  auto floor = apply_floor(adjusted, rules);

  result.audit.input_count = stage1.audit.input_count;
  result.audit.removed_max_dwell = stage1.audit.removed_max_dwell;
  result.audit.removed_edge_trim = stage1.audit.removed_edge_trim;
  result.audit.removed_min_dwell = floor.audit.removed_min_dwell;
  result.audit.retained_count = floor.audit.retained_count;
  result.audit.warnings = stage1.audit.warnings;
  if (result.model)
    for (const auto& w : result.model->warnings) result.audit.warnings.push_back("movement model: " + w);
  result.impressions = std::move(floor.kept);
  return result;
}

inline PipelineResult run_pipeline(const Dataset& dataset, const ExclusionRules& rules,
                                   const PipelineOptions& opts = {}) {
  return run_pipeline(dataset.impressions, rules, opts);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json to_json(const ExclusionRules& r) {
  nlohmann::ordered_json j;
  j["max_dwell"] = r.max_dwell;
  j["edge_trim"] = r.edge_trim;
  j["min_adjusted_dwell"] = r.min_adjusted_dwell;
  return j;
}

inline nlohmann::ordered_json to_json(const PipelineAudit& a) {
  nlohmann::ordered_json j;
  j["input"] = a.input_count;
  nlohmann::ordered_json stage1;
  stage1["removed_max_dwell"] = a.removed_max_dwell;
  stage1["removed_edge_trim"] = a.removed_edge_trim;
  j["stage1"] = stage1;
  nlohmann::ordered_json floor;
  floor["removed_min_dwell"] = a.removed_min_dwell;
  j["floor"] = floor;
  j["removed_total"] = a.removed_total();
  j["retained"] = a.retained_count;
  j["warnings"] = a.warnings;
  return j;
}

inline nlohmann::ordered_json to_json(const MovementModel& m) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json pop;
  pop["mu_alpha"] = m.mu_alpha;
  pop["mu_beta"] = m.mu_beta;
  pop["tau_alpha"] = m.tau_alpha;
  pop["tau_beta"] = m.tau_beta;
  pop["sigma_eps"] = m.sigma_eps;
  if (m.step_fitted) pop["engagement_step"] = m.engagement_step;
  j["population"] = pop;
  nlohmann::ordered_json fit;
  fit["method"] = "EM, empirical-Bayes posterior means";
  fit["slope_identified"] = m.slope_identified;
  fit["iterations"] = m.iterations;
  fit["converged"] = m.converged;
  fit["log_likelihood"] = m.log_likelihood;
  fit["warnings"] = m.warnings;
  j["fit"] = fit;
  nlohmann::ordered_json parts = nlohmann::ordered_json::array();
  for (const auto& [id, c] : m.participants) {
    nlohmann::ordered_json p;
    p["participant_id"] = id;
    p["alpha"] = c.alpha;
    p["beta"] = c.beta;
    p["n"] = c.n;
    parts.push_back(p);
  }
  j["participants"] = parts;
  return j;
}

}  // namespace trybuy
