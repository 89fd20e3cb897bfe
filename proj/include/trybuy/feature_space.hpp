#pragma once

// Feature-space analyses: z-scoring, Pearson correlation with Student-t
// p-values, correlation-matrix PCA, component scores, top-post listings.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trybuy/core_data.hpp"
#include "trybuy/error.hpp"
#include "trybuy/stats.hpp"

namespace trybuy {

struct Standardized {
  Eigen::MatrixXd z;
  Eigen::VectorXd means;
  Eigen::VectorXd sds;
};

/// Column-wise z-scores with the n-1 sample SD. Throws on a constant column.
inline Standardized standardize(const Eigen::MatrixXd& x, const std::vector<std::string>& names = {}) {
  if (x.rows() < 2) throw InputError("standardize: need at least 2 rows");
  Standardized out;
  out.means.resize(x.cols());
  out.sds.resize(x.cols());
  out.z.resize(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double mean = x.col(j).mean();
    double ss = (x.col(j).array() - mean).square().sum();
    double sd = std::sqrt(ss / static_cast<double>(x.rows() - 1));
    if (!(sd > 0) || !std::isfinite(sd)) {
      std::string name = j < static_cast<Eigen::Index>(names.size()) ? names[j] : "#" + std::to_string(j);
      throw InputError("standardize: column '" + name + "' has zero (or undefined) variance");
    }
    out.means(j) = mean;
    out.sds(j) = sd;
    out.z.col(j) = (x.col(j).array() - mean) / sd;
  }
  return out;
}

inline Standardized standardize(const FeatureMatrix& m) { return standardize(m.values, m.columns); }

// ---------------------------------------------------------------------------
// Dwell per post

struct MeanDwell {
  std::map<std::string, double> mean;
  std::map<std::string, std::size_t> count;
  std::vector<std::string> warnings;
};

/// Mean dwell_adjusted per post. Posts listed in `expected_posts` that have
/// no retained impression are reported as warnings.
inline MeanDwell mean_dwell_by_post(const std::vector<ImpressionRecord>& impressions,
                                    const std::vector<std::string>& expected_posts = {}) {
  MeanDwell out;
  std::map<std::string, std::vector<double>> values;
  for (const auto& imp : impressions) {
    if (!imp.dwell_adjusted) throw InputError("mean_dwell_by_post: impression has no dwell_adjusted");
    values[imp.post_id].push_back(*imp.dwell_adjusted);
  }
  for (auto& [post, v] : values) {
    double sum = 0.0;
    for (double d : v) sum += d;
    out.mean[post] = sum / static_cast<double>(v.size());
    out.count[post] = v.size();
  }
  std::size_t missing = 0;
  for (const auto& p : expected_posts)
    if (!values.count(p)) ++missing;
  if (missing)
    out.warnings.push_back(std::to_string(missing) + " post(s) have no retained impressions and were omitted");
  return out;
}

// ---------------------------------------------------------------------------
// Correlation

struct CorrelationResult {
  double r = 0.0;
  std::size_t n = 0;
  double p = 1.0;
};

/// Pearson r with a two-sided Student-t p-value on n-2 df.
inline CorrelationResult correlate(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InputError("correlate: length mismatch");
  if (x.size() < 3) throw InputError("correlate: need n >= 3");
  double mx = stats::mean(x), my = stats::mean(y);
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0) || !(syy > 0)) throw InputError("correlate: zero variance input");
  CorrelationResult out;
  out.n = x.size();
  out.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  double df = static_cast<double>(out.n) - 2.0;
  if (std::abs(out.r) >= 1.0) {
    out.p = 0.0;
  } else {
    double t = out.r * std::sqrt(df / (1.0 - out.r * out.r));
    out.p = stats::student_t_two_sided_p(t, df);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaFit {
  std::vector<std::string> columns;
  Eigen::VectorXd means;       // standardization means
  Eigen::VectorXd sds;         // standardization SDs
  Eigen::MatrixXd correlation; // sample correlation matrix
  Eigen::MatrixXd loadings;    // columns = components, unit norm
  Eigen::VectorXd eigenvalues;
  Eigen::VectorXd variance_fraction;
  std::vector<bool> flipped;   // sign was flipped to make the largest |loading| positive

  Eigen::Index components() const { return loadings.cols(); }
};

namespace detail {

// Rows in lexicographic order, so sums (and hence the fit) do not depend on
// the input row order.
inline Eigen::MatrixXd canonical_row_order(const Eigen::MatrixXd& x) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (x(a, j) < x(b, j)) return true;
      if (x(a, j) > x(b, j)) return false;
    }
    return false;
  });
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

}  // namespace detail

/// PCA on the sample correlation matrix. Components are sorted by eigenvalue
/// (descending) and each is oriented so its largest-|loading| entry is
/// positive. Rank-deficient input yields zero eigenvalues.
inline PcaFit fit_pca(const Eigen::MatrixXd& raw, const std::vector<std::string>& names = {}) {
  const Eigen::Index n = raw.rows(), p = raw.cols();
  if (p < 1) throw InputError("fit_pca: no columns");
  if (n <= p) throw InputError("fit_pca: need more rows (" + std::to_string(n) + ") than columns (" +
                               std::to_string(p) + ")");
  if (!raw.allFinite()) throw InputError("fit_pca: non-finite input");

  Eigen::MatrixXd x = detail::canonical_row_order(raw);
  Standardized st = standardize(x, names);
  PcaFit fit;
  fit.columns = names;
  if (fit.columns.empty())
    for (Eigen::Index j = 0; j < p; ++j) fit.columns.push_back("x" + std::to_string(j + 1));
  fit.means = st.means;
  fit.sds = st.sds;
  fit.correlation = (st.z.transpose() * st.z) / static_cast<double>(n - 1);
  fit.correlation = 0.5 * (fit.correlation + fit.correlation.transpose());
  fit.correlation.diagonal().setOnes();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(fit.correlation);
  if (solver.info() != Eigen::Success) throw InputError("fit_pca: eigendecomposition failed");
  // Eigen returns ascending eigenvalues.
  fit.eigenvalues.resize(p);
  fit.loadings.resize(p, p);
  fit.flipped.assign(static_cast<std::size_t>(p), false);
  for (Eigen::Index k = 0; k < p; ++k) {
    Eigen::Index src = p - 1 - k;
    fit.eigenvalues(k) = std::max(solver.eigenvalues()(src), 0.0);
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      // Ties resolved toward the first feature; tolerance absorbs rounding.
      if (std::abs(v(j)) > best + 1e-12) {
        best = std::abs(v(j));
        arg = j;
      }
    }
    if (v(arg) < 0) {
      v = -v;
      fit.flipped[static_cast<std::size_t>(k)] = true;
    }
    fit.loadings.col(k) = v;
  }
  fit.variance_fraction = fit.eigenvalues / fit.eigenvalues.sum();
  return fit;
}

inline PcaFit fit_pca(const FeatureMatrix& m) { return fit_pca(m.values, m.columns); }

struct PostScore {
  std::string post_id;
  std::vector<double> pc_scores;  // unit-variance component scores
  std::optional<double> mean_dwell;
};

struct ScoreTable {
  std::vector<PostScore> posts;
  Eigen::MatrixXd raw_scores;  // before per-component scaling
  Eigen::MatrixXd scores;      // z-scored component scores

  const PostScore* find(const std::string& post_id) const {
    for (const auto& p : posts)
      if (p.post_id == post_id) return &p;
    return nullptr;
  }
};

/// Standardizes with the fit's means/SDs, multiplies by the loadings, then
/// scales each component by 1/sqrt(eigenvalue): on the training data every
/// score column has mean 0 and SD 1. Components with a zero eigenvalue score 0.
inline ScoreTable project(const PcaFit& fit, const Eigen::MatrixXd& x, const std::vector<std::string>& post_ids) {
  if (x.cols() != fit.means.size())
    throw InputError("project: matrix has " + std::to_string(x.cols()) + " columns, fit expects " +
                     std::to_string(fit.means.size()));
  if (static_cast<std::size_t>(x.rows()) != post_ids.size()) throw InputError("project: row/id count mismatch");
  Eigen::MatrixXd z = (x.rowwise() - fit.means.transpose()).array().rowwise() / fit.sds.transpose().array();
  ScoreTable out;
  out.raw_scores = z * fit.loadings;
  out.scores = out.raw_scores;
  for (Eigen::Index k = 0; k < fit.loadings.cols(); ++k) {
    double lambda = fit.eigenvalues(k);
    if (lambda > 1e-12) {
      out.scores.col(k) /= std::sqrt(lambda);
    } else {
      out.scores.col(k).setZero();
    }
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    PostScore ps;
    ps.post_id = post_ids[static_cast<std::size_t>(i)];
    ps.pc_scores.resize(static_cast<std::size_t>(out.scores.cols()));
    for (Eigen::Index k = 0; k < out.scores.cols(); ++k) ps.pc_scores[static_cast<std::size_t>(k)] = out.scores(i, k);
    out.posts.push_back(std::move(ps));
  }
  return out;
}

inline ScoreTable project(const PcaFit& fit, const FeatureMatrix& m) {
  if (m.columns != fit.columns) throw InputError("project: feature columns differ from the fit's columns");
  return project(fit, m.values, m.post_ids);
}

inline void attach_mean_dwell(ScoreTable& table, const MeanDwell& dwell) {
  for (auto& p : table.posts) {
    auto it = dwell.mean.find(p.post_id);
    if (it != dwell.mean.end()) p.mean_dwell = it->second;
  }
}

/// Posts sorted by one component's score, descending; ties by post_id.
inline std::vector<PostScore> top_posts(const std::vector<PostScore>& scores, std::size_t component, std::size_t k) {
  std::vector<PostScore> sorted = scores;
  for (const auto& s : sorted)
    if (component >= s.pc_scores.size()) throw InputError("top_posts: component index out of range");
  std::sort(sorted.begin(), sorted.end(), [&](const PostScore& a, const PostScore& b) {
    if (a.pc_scores[component] != b.pc_scores[component]) return a.pc_scores[component] > b.pc_scores[component];
    return a.post_id < b.post_id;
  });
  if (sorted.size() > k) sorted.resize(k);
  return sorted;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json to_json(const PcaFit& fit) {
  nlohmann::ordered_json j;
  j["method"] = "eigendecomposition of the sample correlation matrix";
  j["columns"] = fit.columns;
  j["means"] = std::vector<double>(fit.means.data(), fit.means.data() + fit.means.size());
  j["sds"] = std::vector<double>(fit.sds.data(), fit.sds.data() + fit.sds.size());
  j["eigenvalues"] = std::vector<double>(fit.eigenvalues.data(), fit.eigenvalues.data() + fit.eigenvalues.size());
  j["variance_fraction"] =
      std::vector<double>(fit.variance_fraction.data(), fit.variance_fraction.data() + fit.variance_fraction.size());
  std::vector<double> cumulative;
  double acc = 0.0;
  for (Eigen::Index k = 0; k < fit.variance_fraction.size(); ++k) cumulative.push_back(acc += fit.variance_fraction(k));
  j["cumulative_variance"] = cumulative;
  nlohmann::ordered_json loadings;
  for (Eigen::Index r = 0; r < fit.loadings.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(fit.loadings.cols()));
    for (Eigen::Index c = 0; c < fit.loadings.cols(); ++c) row[static_cast<std::size_t>(c)] = fit.loadings(r, c);
    loadings[fit.columns[static_cast<std::size_t>(r)]] = row;
  }
  j["loadings"] = loadings;
  j["orientation"] = "largest |loading| positive";
  std::vector<bool> flipped(fit.flipped.begin(), fit.flipped.end());
  j["flipped"] = flipped;
  nlohmann::ordered_json corr;
  for (Eigen::Index r = 0; r < fit.correlation.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(fit.correlation.cols()));
    for (Eigen::Index c = 0; c < fit.correlation.cols(); ++c) row[static_cast<std::size_t>(c)] = fit.correlation(r, c);
    corr[fit.columns[static_cast<std::size_t>(r)]] = row;
  }
  j["feature_correlation"] = corr;
  return j;
}

inline PcaFit pca_fit_from_json(const nlohmann::ordered_json& j) {
  PcaFit fit;
  try {
    fit.columns = j.at("columns").get<std::vector<std::string>>();
    auto vec = [](const std::vector<double>& v) {
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    fit.means = vec(j.at("means").get<std::vector<double>>());
    fit.sds = vec(j.at("sds").get<std::vector<double>>());
    fit.eigenvalues = vec(j.at("eigenvalues").get<std::vector<double>>());
    fit.variance_fraction = vec(j.at("variance_fraction").get<std::vector<double>>());
    auto p = static_cast<Eigen::Index>(fit.columns.size());
    fit.loadings.resize(p, p);
    fit.correlation.resize(p, p);
    for (Eigen::Index r = 0; r < p; ++r) {
      auto row = j.at("loadings").at(fit.columns[static_cast<std::size_t>(r)]).get<std::vector<double>>();
      auto crow = j.at("feature_correlation").at(fit.columns[static_cast<std::size_t>(r)]).get<std::vector<double>>();
      for (Eigen::Index c = 0; c < p; ++c) {
        fit.loadings(r, c) = row.at(static_cast<std::size_t>(c));
        fit.correlation(r, c) = crow.at(static_cast<std::size_t>(c));
      }
    }
    auto flipped = j.at("flipped").get<std::vector<bool>>();
    fit.flipped.assign(flipped.begin(), flipped.end());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("pca_fit.json: ") + e.what());
  }
  return fit;
}

inline void write_scores_csv(std::ostream& out, const std::vector<PostScore>& scores) {
  std::size_t k = scores.empty() ? kFeatureCount : scores.front().pc_scores.size();
  std::vector<std::string> header{"post_id"};
  for (std::size_t c = 0; c < k; ++c) header.push_back("PC" + std::to_string(c + 1));
  header.push_back("mean_dwell");
  csv::write_row(out, header);
  for (const auto& s : scores) {
    std::vector<std::string> row{s.post_id};
    for (double v : s.pc_scores) row.push_back(csv::format_shortest(v));
    row.push_back(s.mean_dwell ? csv::format_shortest(*s.mean_dwell) : "");
    csv::write_row(out, row);
  }
}

inline std::vector<PostScore> parse_scores(const std::vector<csv::Row>& rows, const std::string& what = "scores.csv") {
  if (rows.empty()) throw InputError(what + " is empty; expected header post_id,PC1,...,mean_dwell");
  const auto& h = rows.front().fields;
  if (h.size() < 3 || h.front() != "post_id" || h.back() != "mean_dwell" || h[1] != "PC1")
    throw InputError(what + " header mismatch; expected post_id,PC1,...,PCk,mean_dwell");
  std::size_t k = h.size() - 2;
  std::vector<PostScore> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.fields.size() != h.size())
      throw InputError(what + " line " + std::to_string(r.line) + ": wrong field count");
    PostScore ps;
    ps.post_id = r.fields[0];
    for (std::size_t c = 0; c < k; ++c) {
      auto v = csv::parse_double(r.fields[c + 1]);
      if (!v) throw InputError(what + " line " + std::to_string(r.line) + ": non-numeric score");
      ps.pc_scores.push_back(*v);
    }
    if (!r.fields.back().empty()) {
      auto v = csv::parse_double(r.fields.back());
      if (!v) throw InputError(what + " line " + std::to_string(r.line) + ": non-numeric mean_dwell");
      ps.mean_dwell = *v;
    }
    out.push_back(std::move(ps));
  }
  return out;
}

inline std::vector<PostScore> load_scores(const std::string& path) { return parse_scores(csv::read_file(path), path); }

}  // namespace trybuy
