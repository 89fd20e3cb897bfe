#pragma once

// Impression-level fixed-effects models: OLS on log(dwell) and logistic
// regression on engagement.
//
// Coding: engage is -0.5 / +0.5; credibility and sensationalism are the
// z-scored PC1 / PC2 scores; dwell as a predictor is log(dwell_adjusted)
// z-scored on the analysis sample. Interactions are elementwise products of
// coded columns. An intercept is always the first column.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trybuy/core_data.hpp"
#include "trybuy/error.hpp"
#include "trybuy/feature_space.hpp"
#include "trybuy/stats.hpp"

namespace trybuy {

enum class Response { log_dwell, engaged };
enum class Term { engage, credibility, sensationalism, dwell };

inline std::string_view to_string(Term t) {
  switch (t) {
    case Term::engage: return "engage";
    case Term::credibility: return "credibility";
    case Term::sensationalism: return "sensationalism";
    case Term::dwell: return "dwell";
  }
  return "?";
}

inline std::string_view to_string(Response r) { return r == Response::log_dwell ? "log_dwell" : "engaged"; }

struct DesignSpec {
  std::string name;
  Response response = Response::log_dwell;
  std::vector<Term> predictors;
  std::vector<std::pair<Term, Term>> interactions;
  bool participant_demean = false;  // linear models only

  void validate() const {
    std::set<Term> mains(predictors.begin(), predictors.end());
    if (mains.size() != predictors.size()) throw InputError("design spec: duplicate predictor");
    if (response == Response::log_dwell && mains.count(Term::dwell))
      throw InputError("design spec: dwell cannot predict log_dwell");
    if (response == Response::engaged && mains.count(Term::engage))
      throw InputError("design spec: engage cannot predict engagement");
    for (const auto& [a, b] : interactions)
      if (!mains.count(a) || !mains.count(b) || a == b)
        throw InputError("design spec: interaction " + std::string(to_string(a)) + ":" +
                         std::string(to_string(b)) + " must reference two declared main effects");
    if (participant_demean && response != Response::log_dwell)
      throw InputError("design spec: participant demeaning applies to the linear model only");
  }
};

// log(dwell) ~ engage * (credibility + sensationalism)
inline DesignSpec dwell_model_spec() {
  return {"dwell",
          Response::log_dwell,
          {Term::engage, Term::credibility, Term::sensationalism},
          {{Term::engage, Term::credibility}, {Term::engage, Term::sensationalism}},
          false};
}

// engaged ~ dwell * (credibility + sensationalism), logistic
inline DesignSpec engage_model_spec() {
  return {"engage",
          Response::engaged,
          {Term::dwell, Term::credibility, Term::sensationalism},
          {{Term::dwell, Term::credibility}, {Term::dwell, Term::sensationalism}},
          false};
}

// Structural attention model: log(dwell) ~ credibility + sensationalism.
inline DesignSpec attention_model_spec() {
  return {"attention", Response::log_dwell, {Term::credibility, Term::sensationalism}, {}, false};
}

struct Design {
  std::string spec_name;
  Response response = Response::log_dwell;
  std::vector<std::string> columns;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  std::map<std::string, std::pair<double, double>> centering;  // name -> (mean, sd)
  bool has_intercept = true;
};

/// Builds the coded design matrix. Every impression needs dwell_adjusted > 0
/// and a score row for its post.
inline Design build_design(const std::vector<ImpressionRecord>& impressions, const std::vector<PostScore>& scores,
                           const DesignSpec& spec) {
  spec.validate();
  std::map<std::string, const PostScore*> by_id;
  for (const auto& s : scores) by_id[s.post_id] = &s;

  std::set<std::string> missing;
  for (const auto& imp : impressions) {
    auto it = by_id.find(imp.post_id);
    if (it == by_id.end() || it->second->pc_scores.size() < 2) missing.insert(imp.post_id);
  }
  if (!missing.empty()) {
    std::string list;
    std::size_t shown = 0;
    for (const auto& m : missing) {
      if (shown++ == 10) {
        list += ", ...";
        break;
      }
      list += (list.empty() ? "" : ", ") + m;
    }
    throw InputError("build_design: no component scores for " + std::to_string(missing.size()) +
                     " post(s): " + list);
  }

  const auto n = static_cast<Eigen::Index>(impressions.size());
  if (n == 0) throw InputError("build_design: no impressions");
  Eigen::VectorXd log_dwell(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& imp = impressions[static_cast<std::size_t>(i)];
    if (!imp.dwell_adjusted) throw InputError("build_design: impression without dwell_adjusted");
    if (!(*imp.dwell_adjusted > 0))
      throw InputError("build_design: non-positive dwell_adjusted for participant " + imp.participant_id +
                       " post " + imp.post_id);
    log_dwell(i) = std::log(*imp.dwell_adjusted);
  }

  Design d;
  d.spec_name = spec.name;
  d.response = spec.response;

  std::map<Term, Eigen::VectorXd> coded;
  auto code = [&](Term t) -> const Eigen::VectorXd& {
    auto it = coded.find(t);
    if (it != coded.end()) return it->second;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& imp = impressions[static_cast<std::size_t>(i)];
      switch (t) {
        case Term::engage: v(i) = imp.engaged() ? 0.5 : -0.5; break;
        case Term::credibility: v(i) = by_id.at(imp.post_id)->pc_scores[0]; break;
        case Term::sensationalism: v(i) = by_id.at(imp.post_id)->pc_scores[1]; break;
        case Term::dwell: v(i) = log_dwell(i); break;
      }
    }
    if (t == Term::dwell) {
      if (n < 2) throw InputError("build_design: need at least 2 rows to z-score dwell");
      double mean = v.mean();
      double sd = std::sqrt((v.array() - mean).square().sum() / static_cast<double>(n - 1));
      if (!(sd > 0)) throw InputError("build_design: log dwell has zero variance");
      v = (v.array() - mean) / sd;
      d.centering["dwell"] = {mean, sd};
    }
    return coded.emplace(t, std::move(v)).first->second;
  };

  std::vector<Eigen::VectorXd> cols;
  if (!spec.participant_demean) {
    d.columns.push_back("(Intercept)");
    cols.push_back(Eigen::VectorXd::Ones(n));
  }
  d.has_intercept = !spec.participant_demean;
  for (Term t : spec.predictors) {
    d.columns.emplace_back(to_string(t));
    cols.push_back(code(t));
  }
  for (const auto& [a, b] : spec.interactions) {
    d.columns.push_back(std::string(to_string(a)) + ":" + std::string(to_string(b)));
    cols.push_back(code(a).cwiseProduct(code(b)));
  }

  d.x.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) d.x.col(static_cast<Eigen::Index>(j)) = cols[j];

  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    d.y(i) = spec.response == Response::log_dwell ? log_dwell(i)
                                                  : (impressions[static_cast<std::size_t>(i)].engaged() ? 1.0 : 0.0);

  if (spec.participant_demean) {
    std::map<std::string, std::vector<Eigen::Index>> groups;
    for (Eigen::Index i = 0; i < n; ++i) groups[impressions[static_cast<std::size_t>(i)].participant_id].push_back(i);
    for (const auto& [pid, rows] : groups) {
      double k = static_cast<double>(rows.size());
      double ym = 0;
      Eigen::RowVectorXd xm = Eigen::RowVectorXd::Zero(d.x.cols());
      for (auto r : rows) {
        ym += d.y(r);
        xm += d.x.row(r);
      }
      ym /= k;
      xm /= k;
      for (auto r : rows) {
        d.y(r) -= ym;
        d.x.row(r) -= xm;
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Fits

struct Coefficient {
  std::string term;
  double estimate = 0.0;
  double se = 0.0;
  double statistic = 0.0;
  double p = 1.0;
};

struct RegressionFit {
  std::string model;     // "ols" or "logistic"
  std::string spec_name;
  std::vector<Coefficient> coefficients;
  std::size_t n = 0;
  std::size_t k = 0;
  double r_squared = std::numeric_limits<double>::quiet_NaN();
  double sigma = std::numeric_limits<double>::quiet_NaN();
  double log_likelihood = 0.0;
  double deviance = std::numeric_limits<double>::quiet_NaN();
  double condition_number = 0.0;
  int iterations = 0;
  bool converged = true;
  std::vector<std::string> warnings;
  std::map<std::string, std::pair<double, double>> centering;

  const Coefficient& at(const std::string& term) const {
    for (const auto& c : coefficients)
      if (c.term == term) return c;
    throw InputError("fit has no term '" + term + "'");
  }
  const Coefficient* find(const std::string& term) const {
    for (const auto& c : coefficients)
      if (c.term == term) return &c;
    return nullptr;
  }
  Eigen::VectorXd estimates() const {
    Eigen::VectorXd b(static_cast<Eigen::Index>(coefficients.size()));
    for (std::size_t i = 0; i < coefficients.size(); ++i) b(static_cast<Eigen::Index>(i)) = coefficients[i].estimate;
    return b;
  }
};

inline constexpr double kMaxConditionNumber = 1e10;

namespace detail {

// Column-pivoted QR with an explicit condition-number guard. Throws naming
// the columns that are (numerically) linear combinations of the others.
inline Eigen::ColPivHouseholderQR<Eigen::MatrixXd> checked_qr(const Eigen::MatrixXd& x,
                                                              const std::vector<std::string>& columns,
                                                              double* condition = nullptr) {
  if (x.rows() < x.cols())
    throw InputError("design has fewer rows (" + std::to_string(x.rows()) + ") than columns (" +
                     std::to_string(x.cols()) + ")");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  const Eigen::Index k = x.cols();
  Eigen::MatrixXd r = qr.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
  const auto& sv = svd.singularValues();
  double cond = sv(k - 1) > 0 ? sv(0) / sv(k - 1) : std::numeric_limits<double>::infinity();
  if (condition) *condition = cond;
  if (qr.rank() < k || !(cond < kMaxConditionNumber)) {
    std::string names;
    auto rank = std::min<Eigen::Index>(qr.rank(), k - 1);
    // Pivots beyond the numerical rank are the dependent columns.
    for (Eigen::Index j = rank; j < k; ++j) {
      auto col = static_cast<std::size_t>(qr.colsPermutation().indices()(j));
      names += (names.empty() ? "" : ", ") + columns[col];
    }
    std::ostringstream os;
    os << "design matrix is rank deficient (condition number " << std::setprecision(3) << cond
       << "); collinear column(s): " << names;
    throw InputError(os.str());
  }
  return qr;
}

inline void fill_inference(RegressionFit& fit, const std::vector<std::string>& columns, const Eigen::VectorXd& beta,
                           const Eigen::MatrixXd& cov, bool use_t, double df) {
  for (std::size_t j = 0; j < columns.size(); ++j) {
    auto jj = static_cast<Eigen::Index>(j);
    Coefficient c;
    c.term = columns[j];
    c.estimate = beta(jj);
    c.se = std::sqrt(std::max(cov(jj, jj), 0.0));
    if (c.se > 0) {
      c.statistic = c.estimate / c.se;
      c.p = use_t ? stats::student_t_two_sided_p(c.statistic, df) : stats::normal_two_sided_p(c.statistic);
    } else {
      c.statistic = c.estimate == 0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), c.estimate);
      c.p = c.estimate == 0 ? 1.0 : 0.0;
    }
    fit.coefficients.push_back(c);
  }
}

}  // namespace detail

/// Least squares via pivoted QR; SEs from sigma^2 (X'X)^-1 on n-k df and
/// two-sided t p-values.
inline RegressionFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const std::vector<std::string>& columns,
                             bool has_intercept = true) {
  if (x.rows() != y.size()) throw InputError("fit_ols: row count mismatch");
  if (static_cast<std::size_t>(x.cols()) != columns.size()) throw InputError("fit_ols: column name count mismatch");
  RegressionFit fit;
  fit.model = "ols";
  auto qr = detail::checked_qr(x, columns, &fit.condition_number);
  const Eigen::Index n = x.rows(), k = x.cols();
  Eigen::VectorXd beta = qr.solve(y);
  Eigen::VectorXd resid = y - x * beta;
  double rss = resid.squaredNorm();
  double df = static_cast<double>(n - k);
  double s2 = df > 0 ? rss / df : std::numeric_limits<double>::quiet_NaN();

  Eigen::MatrixXd r = qr.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
  Eigen::MatrixXd rinv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
  Eigen::MatrixXd xtx_inv_perm = rinv * rinv.transpose();
  Eigen::MatrixXd xtx_inv = qr.colsPermutation() * xtx_inv_perm * qr.colsPermutation().transpose();
  Eigen::MatrixXd cov = (df > 0 ? s2 : 0.0) * xtx_inv;

  detail::fill_inference(fit, columns, beta, cov, true, df);
  fit.n = static_cast<std::size_t>(n);
  fit.k = static_cast<std::size_t>(k);
  double tss = has_intercept ? (y.array() - y.mean()).square().sum() : y.squaredNorm();
  fit.r_squared = tss > 0 ? 1.0 - rss / tss : 1.0;
  fit.sigma = std::sqrt(s2);
  double s2_ml = rss / static_cast<double>(n);
  fit.log_likelihood = s2_ml > 0 ? -0.5 * static_cast<double>(n) * (std::log(2.0 * std::numbers::pi * s2_ml) + 1.0)
                                 : std::numeric_limits<double>::infinity();
  fit.deviance = rss;
  return fit;
}

inline RegressionFit fit_ols(const Design& d) {
  auto fit = fit_ols(d.x, d.y, d.columns, d.has_intercept);
  fit.spec_name = d.spec_name;
  fit.centering = d.centering;
  return fit;
}

struct LogisticOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;
  double deviance_tolerance = 1e-10;
  int max_halvings = 30;
  double separation_bound = 15.0;
};

namespace detail {

inline double logistic_deviance(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& beta) {
  Eigen::VectorXd eta = x * beta;
  double dev = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) dev += stats::log1p_exp(eta(i)) - y(i) * eta(i);
  return 2.0 * dev;
}

}  // namespace detail

/// Maximum likelihood by IRLS (Newton) with step halving. Wald SEs from the
/// inverse observed information; two-sided normal p-values. Deviance never
/// increases across accepted steps.
inline RegressionFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  const std::vector<std::string>& columns, const LogisticOptions& opts = {},
                                  std::vector<double>* deviance_trace = nullptr) {
  if (x.rows() != y.size()) throw InputError("fit_logistic: row count mismatch");
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y(i) != 0.0 && y(i) != 1.0) throw InputError("fit_logistic: response must be 0/1");
  RegressionFit fit;
  fit.model = "logistic";
  detail::checked_qr(x, columns, &fit.condition_number);
  const Eigen::Index n = x.rows(), k = x.cols();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  double dev = detail::logistic_deviance(x, y, beta);
  if (deviance_trace) deviance_trace->push_back(dev);

  auto gradient_and_info = [&](const Eigen::VectorXd& b, Eigen::VectorXd& grad, Eigen::MatrixXd& info) {
    Eigen::VectorXd eta = x * b;
    Eigen::VectorXd w(n), resid(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double p = stats::logistic(eta(i));
      resid(i) = y(i) - p;
      w(i) = p * (1.0 - p);
    }
    grad = x.transpose() * resid;
    info = x.transpose() * w.asDiagonal() * x;
  };

  Eigen::VectorXd grad;
  Eigen::MatrixXd info;
  gradient_and_info(beta, grad, info);
  bool converged = grad.cwiseAbs().maxCoeff() < opts.gradient_tolerance;
  int iter = 0;
  while (!converged && iter < opts.max_iterations) {
    ++iter;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    Eigen::VectorXd delta = ldlt.solve(grad);
    double scale = 1.0;
    Eigen::VectorXd candidate = beta + delta;
    double dev_new = detail::logistic_deviance(x, y, candidate);
    int halvings = 0;
    while (!(dev_new <= dev) && halvings < opts.max_halvings) {
      scale *= 0.5;
      candidate = beta + scale * delta;
      dev_new = detail::logistic_deviance(x, y, candidate);
      ++halvings;
    }
    if (!(dev_new <= dev)) break;  // no descent possible: at the optimum to rounding
    double rel_change = std::abs(dev - dev_new) / std::max(std::abs(dev_new), 1e-300);
    beta = candidate;
    dev = dev_new;
    if (deviance_trace) deviance_trace->push_back(dev);
    gradient_and_info(beta, grad, info);
    if (grad.cwiseAbs().maxCoeff() < opts.gradient_tolerance || rel_change < opts.deviance_tolerance) converged = true;
  }
  if (!converged && grad.cwiseAbs().maxCoeff() < 1e-6) converged = true;

  Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  detail::fill_inference(fit, columns, beta, cov, false, 0.0);
  fit.n = static_cast<std::size_t>(n);
  fit.k = static_cast<std::size_t>(k);
  fit.iterations = iter;
  fit.converged = converged;
  fit.deviance = dev;
  fit.log_likelihood = -0.5 * dev;
  if (!converged)
    fit.warnings.push_back("IRLS did not converge in " + std::to_string(opts.max_iterations) +
                           " iterations; possible separation");
  if (beta.cwiseAbs().maxCoeff() > opts.separation_bound)
    fit.warnings.push_back("coefficient magnitude exceeds " + std::to_string(static_cast<int>(opts.separation_bound)) +
                           "; possible (quasi-)separation");
  return fit;
}

inline RegressionFit fit_logistic(const Design& d, const LogisticOptions& opts = {}) {
  auto fit = fit_logistic(d.x, d.y, d.columns, opts);
  fit.spec_name = d.spec_name;
  fit.centering = d.centering;
  return fit;
}

/// Dispatches on the spec's response.
inline RegressionFit fit_model(const std::vector<ImpressionRecord>& impressions, const std::vector<PostScore>& scores,
                               const DesignSpec& spec) {
  Design d = build_design(impressions, scores, spec);
  return spec.response == Response::log_dwell ? fit_ols(d) : fit_logistic(d);
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::ordered_json to_json(const RegressionFit& fit) {
  nlohmann::ordered_json j;
  j["model"] = fit.model;
  j["spec"] = fit.spec_name;
  nlohmann::ordered_json coefs = nlohmann::ordered_json::array();
  for (const auto& c : fit.coefficients) {
    nlohmann::ordered_json jc;
    jc["term"] = c.term;
    jc["estimate"] = c.estimate;
    jc["se"] = c.se;
    jc["statistic"] = c.statistic;
    jc["p"] = c.p;
    coefs.push_back(jc);
  }
  j["coefficients"] = coefs;
  nlohmann::ordered_json meta;
  meta["n"] = fit.n;
  meta["k"] = fit.k;
  if (fit.model == "ols") {
    meta["r_squared"] = fit.r_squared;
    meta["sigma"] = fit.sigma;
    meta["statistic"] = "t";
  } else {
    meta["deviance"] = fit.deviance;
    meta["iterations"] = fit.iterations;
    meta["converged"] = fit.converged;
    meta["statistic"] = "z (Wald)";
  }
  meta["log_likelihood"] = fit.log_likelihood;
  meta["condition_number"] = fit.condition_number;
  meta["standard_errors"] = "classical; not clustered by participant";
  nlohmann::ordered_json cent;
  for (const auto& [name, ms] : fit.centering) cent[name] = {{"mean", ms.first}, {"sd", ms.second}};
  meta["centering"] = cent;
  meta["warnings"] = fit.warnings;
  j["metadata"] = meta;
  return j;
}

inline RegressionFit regression_fit_from_json(const nlohmann::ordered_json& j) {
  RegressionFit fit;
  try {
    fit.model = j.at("model").get<std::string>();
    fit.spec_name = j.value("spec", "");
    for (const auto& jc : j.at("coefficients")) {
      Coefficient c;
      c.term = jc.at("term").get<std::string>();
      auto num = [&](const char* key) {
        const auto& v = jc.at(key);
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
      };
      c.estimate = num("estimate");
      c.se = num("se");
      c.statistic = num("statistic");
      c.p = num("p");
      fit.coefficients.push_back(c);
    }
    const auto& meta = j.at("metadata");
    fit.n = meta.at("n").get<std::size_t>();
    fit.k = meta.at("k").get<std::size_t>();
    auto mnum = [&](const char* key, double fallback) {
      if (!meta.contains(key) || meta.at(key).is_null()) return fallback;
      return meta.at(key).get<double>();
    };
    const double nan = std::numeric_limits<double>::quiet_NaN();
    fit.r_squared = mnum("r_squared", nan);
    fit.sigma = mnum("sigma", nan);
    fit.deviance = mnum("deviance", nan);
    fit.log_likelihood = mnum("log_likelihood", nan);
    fit.condition_number = mnum("condition_number", nan);
    fit.iterations = meta.value("iterations", 0);
    fit.converged = meta.value("converged", true);
    if (meta.contains("centering") && meta.at("centering").is_object())
      for (const auto& [name, ms] : meta.at("centering").items())
        fit.centering[name] = {ms.at("mean").get<double>(), ms.at("sd").get<double>()};
    if (meta.contains("warnings")) fit.warnings = meta.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("fit json: ") + e.what());
  }
  return fit;
}

/// Aligned text table in the layout of a published coefficient table.
inline std::string render_table(const RegressionFit& fit) {
  bool t = fit.model == "ols";
  std::vector<std::array<std::string, 5>> rows;
  rows.push_back({"", "Estimate", "SE", t ? "t value" : "z value", t ? "Pr(>|t|)" : "Pr(>|z|)"});
  auto fmt = [](double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
  };
  for (const auto& c : fit.coefficients) rows.push_back({c.term, fmt(c.estimate), fmt(c.se), fmt(c.statistic), fmt(c.p)});
  std::array<std::size_t, 5> width{};
  for (const auto& r : rows)
    for (std::size_t i = 0; i < 5; ++i) width[i] = std::max(width[i], r[i].size());
  std::ostringstream os;
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width[0])) << r[0];
    for (std::size_t i = 1; i < 5; ++i) os << "  " << std::right << std::setw(static_cast<int>(width[i])) << r[i];
    os << '\n';
  }
  os << "n = " << fit.n;
  if (t) {
    os << ", R^2 = " << fmt(fit.r_squared);
  } else {
    os << ", deviance = " << fmt(fit.deviance) << (fit.converged ? "" : " (not converged)");
  }
  os << "; classical SEs (not clustered)\n";
  for (const auto& w : fit.warnings) os << "warning: " << w << '\n';
  return os.str();
}

}  // namespace trybuy
