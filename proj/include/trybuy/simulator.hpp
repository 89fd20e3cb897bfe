#pragma once

// Generative two-stage user and feed-ranking experiments.
//
// Stage 1 (try): log dwell = b0 + bc*c + bs*s + N(0, sd_d^2)
// Stage 2 (buy): P(engage) = logistic(g0 + gd*z + gc*c + gs*s + gds*z*s),
//                z = log dwell z-scored under its marginal over the pool.
// Observed dwell adds actions * motor time on top of attentional dwell.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "trybuy/core_data.hpp"
#include "trybuy/dwell_pipeline.hpp"
#include "trybuy/error.hpp"
#include "trybuy/feature_space.hpp"
#include "trybuy/parallel.hpp"
#include "trybuy/quadrature.hpp"
#include "trybuy/random.hpp"
#include "trybuy/reference_values.hpp"
#include "trybuy/regression.hpp"
#include "trybuy/stats.hpp"

namespace trybuy {

struct GenerativeParams {
  // Stage 1, log-seconds per SD. Intercept and noise are calibration constants.
  double dwell_intercept = std::log(2.5);
  double dwell_credibility = -0.017;
  double dwell_sensationalism = 0.038;
  double dwell_noise_sd = 0.9;
  // Stage 2, log-odds. Intercept is a calibration constant (~10% base rate).
  double engage_intercept = -2.2;
  double engage_dwell = 0.355;
  double engage_credibility = 0.212;
  double engage_sensationalism = -0.221;
  double engage_dwell_sensationalism = 0.062;
  // Motor time per action, seconds.
  double motor_mean = 1.2;
  double motor_sd = 0.4;
  double like_given_engage = 0.5;

  void validate() const {
    auto finite = {dwell_intercept, dwell_credibility, dwell_sensationalism, dwell_noise_sd,
                   engage_intercept, engage_dwell, engage_credibility, engage_sensationalism,
                   engage_dwell_sensationalism, motor_mean, motor_sd, like_given_engage};
    for (double v : finite)
      if (!std::isfinite(v)) throw InputError("generative params: non-finite value");
    if (dwell_noise_sd < 0 || motor_sd < 0) throw InputError("generative params: SDs must be >= 0");
    if (like_given_engage < 0 || like_given_engage > 1)
      throw InputError("generative params: like_given_engage must be in [0,1]");
  }

  double log_dwell_mean(double c, double s) const {
    return dwell_intercept + dwell_credibility * c + dwell_sensationalism * s;
  }

  // SD of log dwell over a pool of unit-variance, uncorrelated (c, s).
  double log_dwell_marginal_sd() const {
    return std::sqrt(dwell_credibility * dwell_credibility + dwell_sensationalism * dwell_sensationalism +
                     dwell_noise_sd * dwell_noise_sd);
  }

  double dwell_z(double log_dwell) const {
    double sd = log_dwell_marginal_sd();
    return sd > 0 ? (log_dwell - dwell_intercept) / sd : 0.0;
  }

  double engage_logit(double z, double c, double s) const {
    return engage_intercept + engage_dwell * z + engage_credibility * c + engage_sensationalism * s +
           engage_dwell_sensationalism * z * s;
  }
};

struct PoolComposition {
  int true_news = 100;
  int false_news = 100;
  int opinion = 38;
  int mundane = 38;

  int total() const { return true_news + false_news + opinion + mundane; }
};

struct SimConfig {
  std::size_t participants = 600;
  int feed_length = reference::kFeedLength;
  int news_per_feed = reference::kNewsPerFeed;
  PoolComposition composition;
  std::vector<Post> pool;  // when non-empty, used instead of the synthetic pool
  GenerativeParams params;
  std::uint64_t seed = 42;
  std::size_t replications = 20;
  unsigned threads = 1;

  void validate() const {
    params.validate();
    if (feed_length < 1) throw InputError("sim config: feed_length must be >= 1");
    int pool_size = pool.empty() ? composition.total() : static_cast<int>(pool.size());
    if (feed_length > pool_size)
      throw InputError("sim config: feed_length (" + std::to_string(feed_length) + ") exceeds pool size (" +
                       std::to_string(pool_size) + ")");
    if (news_per_feed < 0 || news_per_feed > feed_length)
      throw InputError("sim config: news_per_feed must be in [0, feed_length]");
    if (composition.true_news < 0 || composition.false_news < 0 || composition.opinion < 0 || composition.mundane < 0)
      throw InputError("sim config: negative pool composition");
  }
};

// ---------------------------------------------------------------------------
// Post pool

struct PostPool {
  std::vector<Post> posts;
  PcaFit pca;
  std::vector<PostScore> scores;
  std::vector<double> credibility;     // PC1 z-score, per post
  std::vector<double> sensationalism;  // PC2 z-score, per post
  std::vector<std::size_t> news;       // indices of news posts
  std::vector<std::size_t> other;      // opinion + mundane
};

namespace detail {

inline Eigen::MatrixXd orthonormal_reference_loadings() {
  Eigen::MatrixXd l(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) l(r, c) = reference::kLoadings[r][c];
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(l);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int c = 0; c < 8; ++c)
    if (r(c, c) < 0) q.col(c) *= -1.0;
  return q;
}

}  // namespace detail

/// Synthetic posts whose feature covariance follows the published component
/// structure: latent component scores with the published variance fractions,
/// rotated into feature space. News credibility and sensationalism are
/// shifted by category.
inline std::vector<Post> synthetic_posts(const PoolComposition& comp, std::uint64_t seed) {
  auto rng = rng::substream(seed, {rng::tag("pool")});
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd rot = detail::orthonormal_reference_loadings();
  std::vector<Post> posts;
  int index = 0;
  auto add = [&](Category cat, int count) {
    for (int i = 0; i < count; ++i) {
      Eigen::VectorXd u(8);
      for (int k = 0; k < 8; ++k) u(k) = std::sqrt(8.0 * reference::kVarianceFraction[k]) * normal(rng);
      switch (cat) {
        case Category::true_news: u(0) += 0.5; break;
        case Category::false_news: u(0) -= 0.5; u(1) += 0.5; break;
        case Category::opinion: u(0) += 0.25; break;
        case Category::mundane: u(1) += 0.25; break;
      }
      Eigen::VectorXd f = rot * u;
      Post p;
      ++index;
      char id[16];
      std::snprintf(id, sizeof(id), "S%04d", index);
      p.post_id = id;
      p.headline = "Synthetic " + std::string(to_string(cat)) + " post " + std::to_string(index);
      p.source = "simulator";
      p.category = cat;
      for (int k = 0; k < 8; ++k) p.features[static_cast<std::size_t>(k)] = 3.0 + f(k);
      posts.push_back(std::move(p));
    }
  };
  add(Category::true_news, comp.true_news);
  add(Category::false_news, comp.false_news);
  add(Category::opinion, comp.opinion);
  add(Category::mundane, comp.mundane);
  return posts;
}

/// Scores the pool through the same PCA used for real data: PC1 is
/// credibility and PC2 sensationalism.
inline PostPool build_pool(std::vector<Post> posts) {
  PostPool pool;
  pool.posts = std::move(posts);
  if (pool.posts.size() <= kFeatureCount) throw InputError("post pool needs more than 8 posts");
  FeatureMatrix fm = feature_matrix(pool.posts);
  pool.pca = fit_pca(fm);
  pool.scores = project(pool.pca, fm).posts;
  for (std::size_t i = 0; i < pool.posts.size(); ++i) {
    pool.credibility.push_back(pool.scores[i].pc_scores[0]);
    pool.sensationalism.push_back(pool.scores[i].pc_scores[1]);
    (is_news(pool.posts[i].category) ? pool.news : pool.other).push_back(i);
  }
  return pool;
}

inline PostPool build_pool(const SimConfig& cfg) {
  return build_pool(cfg.pool.empty() ? synthetic_posts(cfg.composition, cfg.seed) : cfg.pool);
}

/// Feed of `feed_length` distinct posts in presentation order: news_per_feed
/// news items plus the rest from opinion/mundane when the pool allows it,
/// otherwise a uniform sample of the whole pool.
inline std::vector<std::size_t> sample_feed(const PostPool& pool, int feed_length, int news_per_feed,
                                            rng::Engine& rng) {
  std::vector<std::size_t> feed;
  auto take = [&](std::vector<std::size_t> from, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, from.size() - 1);
      std::swap(from[i], from[pick(rng)]);
      feed.push_back(from[i]);
    }
  };
  auto n_news = static_cast<std::size_t>(news_per_feed);
  auto n_other = static_cast<std::size_t>(feed_length - news_per_feed);
  if (pool.news.size() >= n_news && pool.other.size() >= n_other) {
    take(pool.news, n_news);
    take(pool.other, n_other);
  } else {
    std::vector<std::size_t> all(pool.posts.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    take(all, static_cast<std::size_t>(feed_length));
  }
  std::shuffle(feed.begin(), feed.end(), rng);
  return feed;
}

/// Probability that a post is included in a sampled feed.
inline std::vector<double> inclusion_probabilities(const PostPool& pool, int feed_length, int news_per_feed) {
  std::vector<double> pi(pool.posts.size());
  auto n_news = static_cast<std::size_t>(news_per_feed);
  auto n_other = static_cast<std::size_t>(feed_length - news_per_feed);
  if (pool.news.size() >= n_news && pool.other.size() >= n_other) {
    for (auto i : pool.news) pi[i] = static_cast<double>(n_news) / static_cast<double>(pool.news.size());
    for (auto i : pool.other)
      pi[i] = pool.other.empty() ? 0.0 : static_cast<double>(n_other) / static_cast<double>(pool.other.size());
  } else {
    std::fill(pi.begin(), pi.end(), static_cast<double>(feed_length) / static_cast<double>(pool.posts.size()));
  }
  return pi;
}

// ---------------------------------------------------------------------------
// One impression

struct ImpressionDraw {
  double dwell_attention = 0.0;
  double p_engage = 0.0;
  bool engaged = false;
  bool shared = false;
  bool liked = false;
  int action_count = 0;
  double dwell_observed = 0.0;
};

inline double draw_motor_time(const GenerativeParams& params, rng::Engine& rng) {
  std::normal_distribution<double> motor(0.0, 1.0);
  return std::max(0.0, params.motor_mean + params.motor_sd * motor(rng));
}

/// One pass of the two-stage user over a post. An engagement is a share; a
/// like is added with probability like_given_engage. If `motor_time` is not
/// given, a per-impression motor time is drawn.
inline ImpressionDraw simulate_impression(double c, double s, const GenerativeParams& params, rng::Engine& rng,
                                          std::optional<double> motor_time = std::nullopt) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  ImpressionDraw d;
  double log_dwell = params.log_dwell_mean(c, s) + params.dwell_noise_sd * normal(rng);
  d.dwell_attention = std::exp(log_dwell);
  double z = params.dwell_z(log_dwell);
  d.p_engage = stats::logistic(params.engage_logit(z, c, s));
  d.engaged = unif(rng) < d.p_engage;
  double like_draw = unif(rng);
  d.shared = d.engaged;
  d.liked = d.engaged && like_draw < params.like_given_engage;
  d.action_count = static_cast<int>(d.shared) + static_cast<int>(d.liked);
  double motor = motor_time ? *motor_time : draw_motor_time(params, rng);
  d.dwell_observed = d.dwell_attention + d.action_count * motor;
  return d;
}

/// P(engage | c, s) with Stage-1 dwell integrated out (64-point
/// Gauss-Hermite).
inline double expected_engagement(double c, double s, const GenerativeParams& params) {
  return quadrature::normal_expectation(
      [&](double log_dwell) { return stats::logistic(params.engage_logit(params.dwell_z(log_dwell), c, s)); },
      params.log_dwell_mean(c, s), params.dwell_noise_sd);
}

/// E[attentional dwell] in seconds (lognormal mean).
inline double expected_dwell(double c, double s, const GenerativeParams& params) {
  return std::exp(params.log_dwell_mean(c, s) + 0.5 * params.dwell_noise_sd * params.dwell_noise_sd);
}

// ---------------------------------------------------------------------------
// Datasets

struct SimulatedData {
  Dataset dataset;
  PostPool pool;
  std::map<std::string, double> motor_time;  // per participant
  std::vector<double> dwell_attention;       // parallel to dataset.impressions
};

inline std::string participant_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "P%05zu", index + 1);
  return buf;
}

// Dwell is recorded at microsecond resolution, matching the CSV form.
inline double quantize_dwell(double seconds) { return std::round(seconds * 1e6) / 1e6; }

inline nlohmann::ordered_json to_json(const SimConfig& cfg);

inline SimulatedData simulate_dataset(const SimConfig& cfg, const PostPool& pool) {
  cfg.validate();
  const std::size_t n = cfg.participants;
  std::vector<std::vector<ImpressionRecord>> per_participant(n);
  std::vector<std::vector<double>> attention(n);
  std::vector<double> motor(n);
  parallel_for(n, cfg.threads, [&](std::size_t p) {
    auto rng = rng::substream(cfg.seed, {rng::tag("participant"), p});
    motor[p] = draw_motor_time(cfg.params, rng);
    auto feed = sample_feed(pool, cfg.feed_length, cfg.news_per_feed, rng);
    std::string pid = participant_id(p);
    for (std::size_t pos = 0; pos < feed.size(); ++pos) {
      std::size_t j = feed[pos];
      auto d = simulate_impression(pool.credibility[j], pool.sensationalism[j], cfg.params, rng, motor[p]);
      per_participant[p].push_back({pid, pool.posts[j].post_id, static_cast<int>(pos + 1),
                                    quantize_dwell(d.dwell_observed), d.shared, d.liked, std::nullopt});
      attention[p].push_back(d.dwell_attention);
    }
  });
  SimulatedData out;
  out.pool = pool;
  out.dataset.posts = pool.posts;
  for (std::size_t p = 0; p < n; ++p) {
    out.motor_time[participant_id(p)] = motor[p];
    for (auto& imp : per_participant[p]) out.dataset.impressions.push_back(std::move(imp));
    out.dwell_attention.insert(out.dwell_attention.end(), attention[p].begin(), attention[p].end());
  }
  out.dataset.provenance.digests["sim_config"] = sha256_hex(to_json(cfg).dump());
  out.dataset.provenance.ingested_at = "simulated (seed " + std::to_string(cfg.seed) + ")";
  return out;
}

inline SimulatedData simulate_dataset(const SimConfig& cfg) { return simulate_dataset(cfg, build_pool(cfg)); }

/// Closed-form expected engagement rate of a simulated dataset.
inline double expected_engagement_rate(const PostPool& pool, const SimConfig& cfg) {
  auto pi = inclusion_probabilities(pool, cfg.feed_length, cfg.news_per_feed);
  double acc = 0.0;
  for (std::size_t j = 0; j < pool.posts.size(); ++j)
    acc += pi[j] * expected_engagement(pool.credibility[j], pool.sensationalism[j], cfg.params);
  return acc / static_cast<double>(cfg.feed_length);
}

// ---------------------------------------------------------------------------
// Ranking

enum class Policy { dwell_opt, engage_opt, random, chronological };

inline std::string_view to_string(Policy p) {
  switch (p) {
    case Policy::dwell_opt: return "dwell_opt";
    case Policy::engage_opt: return "engage_opt";
    case Policy::random: return "random";
    case Policy::chronological: return "chronological";
  }
  return "?";
}

inline std::optional<Policy> parse_policy(std::string_view s) {
  for (Policy p : {Policy::dwell_opt, Policy::engage_opt, Policy::random, Policy::chronological})
    if (to_string(p) == s) return p;
  return std::nullopt;
}

struct Candidate {
  std::string post_id;
  double credibility = 0.0;
  double sensationalism = 0.0;
};

/// Indices of the top-k candidates by score, descending; ties by post_id.
inline std::vector<std::size_t> rank_by_score(const std::vector<Candidate>& candidates,
                                              const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(candidates.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return candidates[a].post_id < candidates[b].post_id;
  });
  if (idx.size() > k) idx.resize(k);
  return idx;
}

/// dwell_opt ranks by E[dwell], engage_opt by P(engage) with dwell
/// integrated out, random by a uniform shuffle, chronological by post_id
/// (publication order).
inline std::vector<std::size_t> rank_feed(Policy policy, const std::vector<Candidate>& candidates,
                                          const GenerativeParams& params, std::size_t k, rng::Engine* rng = nullptr) {
  std::vector<double> scores(candidates.size());
  switch (policy) {
    case Policy::dwell_opt:
      for (std::size_t i = 0; i < candidates.size(); ++i)
        scores[i] = expected_dwell(candidates[i].credibility, candidates[i].sensationalism, params);
      break;
    case Policy::engage_opt:
      for (std::size_t i = 0; i < candidates.size(); ++i)
        scores[i] = expected_engagement(candidates[i].credibility, candidates[i].sensationalism, params);
      break;
    case Policy::random: {
      if (!rng) throw InternalError("rank_feed: random policy needs an RNG");
      std::vector<std::size_t> idx(candidates.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::shuffle(idx.begin(), idx.end(), *rng);
      if (idx.size() > k) idx.resize(k);
      return idx;
    }
    case Policy::chronological:
      // Equal scores: order falls back to post_id.
      break;
  }
  return rank_by_score(candidates, scores, k);
}

// ---------------------------------------------------------------------------
// Policy experiments

struct PolicyOutcome {
  std::string policy;
  double mean_credibility = 0.0, se_credibility = 0.0;
  double mean_sensationalism = 0.0, se_sensationalism = 0.0;
  double engagement_rate = 0.0, se_engagement = 0.0;
  double mean_dwell = 0.0, se_dwell = 0.0;
  std::size_t replications = 0;
};

namespace detail {

inline std::pair<double, double> mean_and_se(const std::vector<double>& v) {
  double m = stats::mean(v);
  double se = v.size() > 1 ? stats::sample_sd(v) / std::sqrt(static_cast<double>(v.size())) : 0.0;
  return {m, se};
}

}  // namespace detail

/// For each of `cfg.replications` sessions: sample a candidate feed, rank it
/// with every policy, and let one simulated user traverse the top-k. The
/// user's response to a post is keyed by (session, post), so policies that
/// surface the same posts get identical responses.
inline std::vector<PolicyOutcome> run_policy_experiment(const SimConfig& cfg, const PostPool& pool,
                                                        const std::vector<Policy>& policies, std::size_t k) {
  cfg.validate();
  if (cfg.replications < 1) throw InputError("policy experiment: replications must be >= 1");
  const std::size_t reps = cfg.replications;
  struct SessionMetrics {
    double c = 0, s = 0, engaged = 0, dwell = 0;
  };
  std::vector<std::vector<SessionMetrics>> per_rep(reps, std::vector<SessionMetrics>(policies.size()));

  parallel_for(reps, cfg.threads, [&](std::size_t r) {
    auto session_rng = rng::substream(cfg.seed, {rng::tag("session"), r});
    auto feed = sample_feed(pool, cfg.feed_length, cfg.news_per_feed, session_rng);
    double motor = draw_motor_time(cfg.params, session_rng);
    std::vector<Candidate> candidates;
    for (auto j : feed) candidates.push_back({pool.posts[j].post_id, pool.credibility[j], pool.sensationalism[j]});
    for (std::size_t q = 0; q < policies.size(); ++q) {
      auto rank_rng = rng::substream(cfg.seed, {rng::tag("random-rank"), r});
      auto order = rank_feed(policies[q], candidates, cfg.params, k, &rank_rng);
      std::vector<std::size_t> surfaced;
      for (auto i : order) surfaced.push_back(feed[i]);
      std::sort(surfaced.begin(), surfaced.end());
      SessionMetrics m;
      for (auto j : surfaced) {
        auto rng = rng::substream(cfg.seed, {rng::tag("traverse"), r, j});
        auto d = simulate_impression(pool.credibility[j], pool.sensationalism[j], cfg.params, rng, motor);
        m.c += pool.credibility[j];
        m.s += pool.sensationalism[j];
        m.engaged += d.engaged ? 1.0 : 0.0;
        m.dwell += d.dwell_observed;
      }
      double cnt = static_cast<double>(std::max<std::size_t>(surfaced.size(), 1));
      per_rep[r][q] = {m.c / cnt, m.s / cnt, m.engaged / cnt, m.dwell / cnt};
    }
  });

  std::vector<PolicyOutcome> out;
  for (std::size_t q = 0; q < policies.size(); ++q) {
    std::vector<double> c, s, e, d;
    for (std::size_t r = 0; r < reps; ++r) {
      c.push_back(per_rep[r][q].c);
      s.push_back(per_rep[r][q].s);
      e.push_back(per_rep[r][q].engaged);
      d.push_back(per_rep[r][q].dwell);
    }
    PolicyOutcome o;
    o.policy = std::string(to_string(policies[q]));
    std::tie(o.mean_credibility, o.se_credibility) = detail::mean_and_se(c);
    std::tie(o.mean_sensationalism, o.se_sensationalism) = detail::mean_and_se(s);
    std::tie(o.engagement_rate, o.se_engagement) = detail::mean_and_se(e);
    std::tie(o.mean_dwell, o.se_dwell) = detail::mean_and_se(d);
    o.replications = reps;
    out.push_back(o);
  }
  return out;
}

inline std::vector<PolicyOutcome> run_policy_experiment(const SimConfig& cfg, const std::vector<Policy>& policies,
                                                        std::size_t k) {
  return run_policy_experiment(cfg, build_pool(cfg), policies, k);
}

inline void write_policy_outcomes_csv(std::ostream& out, const std::vector<PolicyOutcome>& outcomes) {
  csv::write_row(out, {"policy", "metric", "value", "se", "replications"});
  for (const auto& o : outcomes) {
    auto row = [&](const char* metric, double v, double se) {
      csv::write_row(out, {o.policy, metric, csv::format_shortest(v), csv::format_shortest(se),
                           std::to_string(o.replications)});
    };
    row("mean_credibility", o.mean_credibility, o.se_credibility);
    row("mean_sensationalism", o.mean_sensationalism, o.se_sensationalism);
    row("engagement_rate", o.engagement_rate, o.se_engagement);
    row("mean_dwell", o.mean_dwell, o.se_dwell);
  }
}

// ---------------------------------------------------------------------------
// Parameter recovery

struct RecoveryOptions {
  ExclusionRules rules;
  MovementOptions movement;
  bool compare_without_pipeline = true;
  double coverage_se_multiple = 3.0;
};

struct GeneratingValue {
  std::string model;  // "attention" or "engage"
  std::string term;
  double value;
};

inline std::vector<GeneratingValue> generating_values(const GenerativeParams& p) {
  return {{"attention", "credibility", p.dwell_credibility},
          {"attention", "sensationalism", p.dwell_sensationalism},
          {"engage", "dwell", p.engage_dwell},
          {"engage", "credibility", p.engage_credibility},
          {"engage", "sensationalism", p.engage_sensationalism},
          {"engage", "dwell:credibility", 0.0},
          {"engage", "dwell:sensationalism", p.engage_dwell_sensationalism}};
}

struct ReplicationFits {
  RegressionFit attention;  // log(dwell) ~ credibility + sensationalism
  RegressionFit engage;     // engagement model
  RegressionFit dwell;      // descriptive log(dwell) model with engage terms
  std::optional<MovementModel> movement;
  PipelineAudit audit;
};

struct TermRecovery {
  std::string model;
  std::string term;
  double generating = 0.0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double mean_se = 0.0;
  double coverage = 0.0;  // fraction of replications within k SEs
};

struct RecoveryArm {
  std::string name;  // "pipeline" or "raw"
  std::vector<ReplicationFits> replications;
  std::vector<TermRecovery> terms;
  double all_terms_covered_fraction = 0.0;  // replications where every term is within k SEs
  double mean_movement_slope = std::numeric_limits<double>::quiet_NaN();
};

struct RecoveryReport {
  SimConfig config;
  RecoveryOptions options;
  std::vector<RecoveryArm> arms;

  const RecoveryArm& arm(const std::string& name) const {
    for (const auto& a : arms)
      if (a.name == name) return a;
    throw InputError("recovery report has no arm '" + name + "'");
  }
};

inline ReplicationFits fit_replication(const SimulatedData& sim, const ExclusionRules& rules,
                                       const PipelineOptions& popts) {
  ReplicationFits f;
  auto cleaned = run_pipeline(sim.dataset, rules, popts);
  f.movement = cleaned.model;
  f.audit = cleaned.audit;
  FeatureMatrix fm = feature_matrix(sim.dataset.posts);
  auto scores = project(fit_pca(fm), fm).posts;
  f.attention = fit_model(cleaned.impressions, scores, attention_model_spec());
  f.engage = fit_model(cleaned.impressions, scores, engage_model_spec());
  f.dwell = fit_model(cleaned.impressions, scores, dwell_model_spec());
  return f;
}

/// simulate -> preprocess -> score -> fit, repeated over seeded replications,
/// with and (optionally) without the motor adjustment.
inline RecoveryReport parameter_recovery(const SimConfig& cfg, const RecoveryOptions& opts = {}) {
  cfg.validate();
  if (cfg.replications < 1) throw InputError("parameter recovery: replications must be >= 1");
  RecoveryReport report;
  report.config = cfg;
  report.options = opts;
  std::vector<bool> arms{true};
  if (opts.compare_without_pipeline) arms.push_back(false);
  const std::size_t reps = cfg.replications;
  std::vector<std::vector<ReplicationFits>> fits(arms.size(), std::vector<ReplicationFits>(reps));

  parallel_for(reps, cfg.threads, [&](std::size_t r) {
    SimConfig rc = cfg;
    rc.seed = rng::derive(cfg.seed, {rng::tag("recovery"), r});
    rc.threads = 1;
    auto sim = simulate_dataset(rc);
    for (std::size_t a = 0; a < arms.size(); ++a) {
      PipelineOptions popts;
      popts.movement = opts.movement;
      popts.adjust_motor = arms[a];
      fits[a][r] = fit_replication(sim, opts.rules, popts);
    }
  });

  auto truth = generating_values(cfg.params);
  for (std::size_t a = 0; a < arms.size(); ++a) {
    RecoveryArm arm;
    arm.name = arms[a] ? "pipeline" : "raw";
    arm.replications = std::move(fits[a]);
    std::vector<bool> all_ok(reps, true);
    for (const auto& g : truth) {
      TermRecovery t{g.model, g.term, g.value, 0, 0, 0, 0};
      std::size_t covered = 0;
      for (std::size_t r = 0; r < reps; ++r) {
        const auto& fit = g.model == "attention" ? arm.replications[r].attention : arm.replications[r].engage;
        const auto& c = fit.at(g.term);
        t.mean_estimate += c.estimate / static_cast<double>(reps);
        t.mean_se += c.se / static_cast<double>(reps);
        bool ok = std::abs(c.estimate - g.value) <= opts.coverage_se_multiple * c.se;
        covered += ok;
        all_ok[r] = all_ok[r] && ok;
      }
      t.bias = t.mean_estimate - g.value;
      t.coverage = static_cast<double>(covered) / static_cast<double>(reps);
      arm.terms.push_back(t);
    }
    arm.all_terms_covered_fraction =
        static_cast<double>(std::count(all_ok.begin(), all_ok.end(), true)) / static_cast<double>(reps);
    if (arms[a]) {
      double acc = 0;
      for (const auto& f : arm.replications) acc += f.movement ? f.movement->mu_beta : 0.0;
      arm.mean_movement_slope = acc / static_cast<double>(reps);
    }
    report.arms.push_back(std::move(arm));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Config + report JSON

inline nlohmann::ordered_json to_json(const GenerativeParams& p) {
  nlohmann::ordered_json j;
  j["stage1"] = {{"intercept", p.dwell_intercept},
                 {"credibility", p.dwell_credibility},
                 {"sensationalism", p.dwell_sensationalism},
                 {"noise_sd", p.dwell_noise_sd}};
  j["stage2"] = {{"intercept", p.engage_intercept},
                 {"dwell", p.engage_dwell},
                 {"credibility", p.engage_credibility},
                 {"sensationalism", p.engage_sensationalism},
                 {"dwell_sensationalism", p.engage_dwell_sensationalism}};
  j["motor"] = {{"mean", p.motor_mean}, {"sd", p.motor_sd}};
  j["like_given_engage"] = p.like_given_engage;
  return j;
}

inline nlohmann::ordered_json to_json(const SimConfig& cfg) {
  nlohmann::ordered_json j;
  j["participants"] = cfg.participants;
  j["feed_length"] = cfg.feed_length;
  j["news_per_feed"] = cfg.news_per_feed;
  if (cfg.pool.empty()) {
    j["pool"] = {{"true_news", cfg.composition.true_news},
                 {"false_news", cfg.composition.false_news},
                 {"opinion", cfg.composition.opinion},
                 {"mundane", cfg.composition.mundane}};
  } else {
    j["pool"] = {{"posts", cfg.pool.size()}};
  }
  j["params"] = to_json(cfg.params);
  j["seed"] = cfg.seed;
  j["replications"] = cfg.replications;
  return j;
}

namespace detail {

inline void reject_unknown(const nlohmann::ordered_json& j, std::initializer_list<std::string_view> known,
                           const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (auto k : known) ok = ok || it.key() == k;
    if (!ok) throw InputError("sim config: unknown key '" + where + it.key() + "'");
  }
}

template <class T>
void read_opt(const nlohmann::ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

/// Parses sim_config.json. Missing keys keep their defaults; unknown keys are
/// rejected. A pool given as {"ratings": path, "posts": path} is left for the
/// caller to load (see `pool_paths`).
inline SimConfig sim_config_from_json(const nlohmann::ordered_json& j) {
  SimConfig cfg;
  try {
    if (!j.is_object()) throw InputError("sim config: top level must be an object");
    detail::reject_unknown(j, {"participants", "feed_length", "news_per_feed", "pool", "params", "seed", "replications"},
                           "");
    detail::read_opt(j, "participants", cfg.participants);
    detail::read_opt(j, "feed_length", cfg.feed_length);
    detail::read_opt(j, "news_per_feed", cfg.news_per_feed);
    detail::read_opt(j, "seed", cfg.seed);
    detail::read_opt(j, "replications", cfg.replications);
    if (j.contains("pool")) {
      const auto& jp = j.at("pool");
      detail::reject_unknown(jp, {"true_news", "false_news", "opinion", "mundane", "ratings", "posts"}, "pool.");
      detail::read_opt(jp, "true_news", cfg.composition.true_news);
      detail::read_opt(jp, "false_news", cfg.composition.false_news);
      detail::read_opt(jp, "opinion", cfg.composition.opinion);
      detail::read_opt(jp, "mundane", cfg.composition.mundane);
    }
    if (j.contains("params")) {
      const auto& p = j.at("params");
      detail::reject_unknown(p, {"stage1", "stage2", "motor", "like_given_engage"}, "params.");
      auto& g = cfg.params;
      if (p.contains("stage1")) {
        const auto& s = p.at("stage1");
        detail::reject_unknown(s, {"intercept", "credibility", "sensationalism", "noise_sd"}, "params.stage1.");
        detail::read_opt(s, "intercept", g.dwell_intercept);
        detail::read_opt(s, "credibility", g.dwell_credibility);
        detail::read_opt(s, "sensationalism", g.dwell_sensationalism);
        detail::read_opt(s, "noise_sd", g.dwell_noise_sd);
      }
      if (p.contains("stage2")) {
        const auto& s = p.at("stage2");
        detail::reject_unknown(s, {"intercept", "dwell", "credibility", "sensationalism", "dwell_sensationalism"},
                               "params.stage2.");
        detail::read_opt(s, "intercept", g.engage_intercept);
        detail::read_opt(s, "dwell", g.engage_dwell);
        detail::read_opt(s, "credibility", g.engage_credibility);
        detail::read_opt(s, "sensationalism", g.engage_sensationalism);
        detail::read_opt(s, "dwell_sensationalism", g.engage_dwell_sensationalism);
      }
      if (p.contains("motor")) {
        const auto& s = p.at("motor");
        detail::reject_unknown(s, {"mean", "sd"}, "params.motor.");
        detail::read_opt(s, "mean", g.motor_mean);
        detail::read_opt(s, "sd", g.motor_sd);
      }
      detail::read_opt(p, "like_given_engage", g.like_given_engage);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("sim config: ") + e.what());
  }
  return cfg;
}

struct PoolPaths {
  std::string ratings;
  std::string posts;
};

inline std::optional<PoolPaths> pool_paths(const nlohmann::ordered_json& j) {
  if (!j.contains("pool")) return std::nullopt;
  const auto& jp = j.at("pool");
  if (!jp.contains("ratings") && !jp.contains("posts")) return std::nullopt;
  if (!jp.contains("ratings") || !jp.contains("posts"))
    throw InputError("sim config: pool needs both 'ratings' and 'posts' paths");
  return PoolPaths{jp.at("ratings").get<std::string>(), jp.at("posts").get<std::string>()};
}

inline nlohmann::ordered_json to_json(const RecoveryReport& rep) {
  nlohmann::ordered_json j;
  j["config"] = to_json(rep.config);
  j["rules"] = to_json(rep.options.rules);
  j["movement_engagement_step"] = rep.options.movement.engagement_step;
  j["coverage_se_multiple"] = rep.options.coverage_se_multiple;
  j["model_commitment"] =
      "one-directional: engagement is conditioned on attentional dwell; no feedback from engagement to "
      "attentional dwell within an impression";
  nlohmann::ordered_json arms = nlohmann::ordered_json::array();
  for (const auto& arm : rep.arms) {
    nlohmann::ordered_json ja;
    ja["arm"] = arm.name;
    ja["all_terms_covered_fraction"] = arm.all_terms_covered_fraction;
    if (!std::isnan(arm.mean_movement_slope)) ja["mean_movement_slope"] = arm.mean_movement_slope;
    nlohmann::ordered_json terms = nlohmann::ordered_json::array();
    for (const auto& t : arm.terms)
      terms.push_back({{"model", t.model},
                       {"term", t.term},
                       {"generating", t.generating},
                       {"mean_estimate", t.mean_estimate},
                       {"bias", t.bias},
                       {"mean_se", t.mean_se},
                       {"coverage", t.coverage}});
    ja["terms"] = terms;
    nlohmann::ordered_json reps = nlohmann::ordered_json::array();
    for (const auto& f : arm.replications) {
      nlohmann::ordered_json jr;
      auto coef_map = [](const RegressionFit& fit) {
        nlohmann::ordered_json m;
        for (const auto& c : fit.coefficients) m[c.term] = {{"estimate", c.estimate}, {"se", c.se}};
        return m;
      };
      jr["attention"] = coef_map(f.attention);
      jr["engage"] = coef_map(f.engage);
      jr["dwell"] = coef_map(f.dwell);
      if (f.movement) jr["movement_mu_beta"] = f.movement->mu_beta;
      jr["retained"] = f.audit.retained_count;
      reps.push_back(jr);
    }
    ja["replications"] = reps;
    arms.push_back(ja);
  }
  j["arms"] = arms;
  return j;
}

}  // namespace trybuy
