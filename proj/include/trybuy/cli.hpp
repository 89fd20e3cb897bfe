#pragma once

// Subcommand implementations behind the `trybuy` executable. Each command is
// a thin shell over library calls and writes a resolved_config.json snapshot
// next to its outputs.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trybuy/core_data.hpp"
#include "trybuy/dwell_pipeline.hpp"
#include "trybuy/error.hpp"
#include "trybuy/feature_space.hpp"
#include "trybuy/regression.hpp"
#include "trybuy/simulator.hpp"

namespace trybuy::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInput = 2;

struct RunConfig {
  std::string subcommand;
  std::string input;
  std::string output_dir = ".";
  std::string posts;    // posts.csv (headlines, referential checks)
  std::string cleaned;  // cleaned impressions for pca correlations
  std::string scores;   // scores.csv for fit
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  ExclusionRules rules;
  bool engagement_step = false;
  std::string model = "dwell";
  std::vector<std::string> policies{"dwell_opt", "engage_opt", "random", "chronological"};
  std::size_t k = 20;
  std::size_t top = 10;
  int verbosity = 0;
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["subcommand"] = c.subcommand;
  j["input"] = c.input;
  j["output_dir"] = c.output_dir;
  if (!c.posts.empty()) j["posts"] = c.posts;
  if (!c.cleaned.empty()) j["cleaned"] = c.cleaned;
  if (!c.scores.empty()) j["scores"] = c.scores;
  if (c.seed) j["seed"] = *c.seed;
  j["threads"] = c.threads;
  j["rules"] = trybuy::to_json(c.rules);
  j["engagement_step"] = c.engagement_step;
  j["model"] = c.model;
  j["policies"] = c.policies;
  j["k"] = c.k;
  j["top"] = c.top;
  return j;
}

namespace detail {

inline std::string out_path(const RunConfig& c, const std::string& name) {
  return (std::filesystem::path(c.output_dir) / name).string();
}

inline void prepare_output(const RunConfig& c) {
  std::error_code ec;
  std::filesystem::create_directories(c.output_dir, ec);
  if (ec) throw InputError("cannot create output directory " + c.output_dir + ": " + ec.message());
}

inline void require_input(const RunConfig& c) {
  if (c.input.empty()) throw InputError(c.subcommand + ": --input is required");
  if (!std::filesystem::exists(c.input)) throw InputError(c.subcommand + ": input file not found: " + c.input);
}

inline void write_json(const std::string& path, const nlohmann::ordered_json& j) {
  write_file(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

inline void write_snapshot(const RunConfig& c, nlohmann::ordered_json extra = {}) {
  auto j = to_json(c);
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_json(out_path(c, "resolved_config.json"), j);
}

template <class T>
std::vector<T> require_clean(LoadResult<T> loaded, const std::string& what) {
  if (!loaded.errors.empty())
    throw InputError(what + ": " + std::to_string(loaded.errors.size()) + " malformed row(s)\n" +
                     format_errors(loaded.errors));
  return std::move(loaded.rows);
}

inline nlohmann::ordered_json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path);
  try {
    nlohmann::ordered_json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline SimConfig load_sim_config(const RunConfig& c) {
  auto j = load_json_file(c.input);
  SimConfig cfg = sim_config_from_json(j);
  if (auto paths = pool_paths(j)) {
    auto base = std::filesystem::path(c.input).parent_path();
    auto resolve = [&](const std::string& p) {
      auto path = std::filesystem::path(p);
      return (path.is_absolute() ? path : base / path).string();
    };
    auto ratings = require_clean(load_ratings(resolve(paths->ratings)), "pool ratings");
    auto infos = require_clean(load_posts(resolve(paths->posts)), "pool posts");
    auto agg = aggregate_ratings(ratings);
    cfg.pool = assemble_posts(infos, agg.matrix);
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.threads = c.threads;
  return cfg;
}

inline std::string fixed(double v, int decimals) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int cmd_preprocess(const RunConfig& c, std::ostream& out) {
  detail::require_input(c);
  c.rules.validate();
  auto impressions = detail::require_clean(load_impressions(c.input), c.input);
  auto violations = validate_impressions(impressions);
  if (!c.posts.empty()) {
    auto infos = detail::require_clean(load_posts(c.posts), c.posts);
    std::set<std::string> ids;
    for (const auto& p : infos) ids.insert(p.post_id);
    for (const auto& imp : impressions)
      if (!ids.count(imp.post_id))
        violations.push_back({ViolationKind::dangling_post, imp.participant_id, imp.post_id, imp.position,
                              "post_id '" + imp.post_id + "' not in posts table"});
  }
  if (!violations.empty())
    throw InputError("impressions failed validation (" + std::to_string(violations.size()) + " violation(s))\n" +
                     format_violations(violations));

  detail::prepare_output(c);
  PipelineOptions opts;
  opts.movement.engagement_step = c.engagement_step;
  auto result = run_pipeline(impressions, c.rules, opts);
  write_file(detail::out_path(c, "cleaned.csv"),
             [&](std::ostream& o) { write_impressions_csv(o, result.impressions, true); });
  nlohmann::ordered_json model = result.model ? trybuy::to_json(*result.model) : nlohmann::ordered_json::object();
  detail::write_json(detail::out_path(c, "movement_model.json"), model);
  detail::write_json(detail::out_path(c, "audit.json"), trybuy::to_json(result.audit));
  detail::write_snapshot(c, {{"input_sha256", file_sha256(c.input)}});

  const auto& a = result.audit;
  out << "input " << a.input_count << ", removed: >" << c.rules.max_dwell << "s " << a.removed_max_dwell
      << ", edge trim " << a.removed_edge_trim << ", <" << c.rules.min_adjusted_dwell << "s " << a.removed_min_dwell
      << "; retained " << a.retained_count << '\n';
  if (result.model)
    out << "movement time: mu_beta = " << detail::fixed(result.model->mu_beta, 4)
        << " s/action, tau_beta = " << detail::fixed(result.model->tau_beta, 4) << '\n';
  for (const auto& w : a.warnings) out << "warning: " << w << '\n';
  return kExitOk;
}

inline int cmd_pca(const RunConfig& c, std::ostream& out) {
  detail::require_input(c);
  auto ratings = detail::require_clean(load_ratings(c.input), c.input);
  auto agg = aggregate_ratings(ratings);
  if (agg.matrix.rows() == 0) throw InputError("pca: no posts with complete feature ratings");
  auto fit = fit_pca(agg.matrix);
  auto table = project(fit, agg.matrix);

  std::map<std::string, std::string> headline;
  if (!c.posts.empty())
    for (const auto& p : detail::require_clean(load_posts(c.posts), c.posts)) headline[p.post_id] = p.headline;

  std::vector<std::array<std::string, 4>> correlations;
  if (!c.cleaned.empty()) {
    auto cleaned = detail::require_clean(load_impressions(c.cleaned), c.cleaned);
    auto dwell = mean_dwell_by_post(cleaned, agg.matrix.post_ids);
    for (const auto& w : dwell.warnings) out << "warning: " << w << '\n';
    attach_mean_dwell(table, dwell);
    std::vector<Eigen::Index> rows;
    std::vector<double> y;
    for (std::size_t i = 0; i < table.posts.size(); ++i)
      if (table.posts[i].mean_dwell) {
        rows.push_back(static_cast<Eigen::Index>(i));
        y.push_back(*table.posts[i].mean_dwell);
      }
    auto emit = [&](const std::string& name, const std::vector<double>& x) {
      auto r = correlate(x, y);
      correlations.push_back({name, csv::format_shortest(r.r), csv::format_shortest(r.p), std::to_string(r.n)});
    };
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      std::vector<double> x;
      for (auto i : rows) x.push_back(agg.matrix.values(i, static_cast<Eigen::Index>(f)));
      emit(std::string(kFeatureNames[f]), x);
    }
    for (Eigen::Index k = 0; k < fit.components(); ++k) {
      std::vector<double> x;
      for (auto i : rows) x.push_back(table.scores(i, k));
      emit("PC" + std::to_string(k + 1), x);
    }
  }

  detail::prepare_output(c);
  detail::write_json(detail::out_path(c, "pca_fit.json"), trybuy::to_json(fit));
  write_file(detail::out_path(c, "scores.csv"), [&](std::ostream& o) { write_scores_csv(o, table.posts); });
  if (!correlations.empty())
    write_file(detail::out_path(c, "correlations.csv"), [&](std::ostream& o) {
      csv::write_row(o, {"feature", "r", "p", "n"});
      for (const auto& row : correlations) csv::write_row(o, {row[0], row[1], row[2], row[3]});
    });
  write_file(detail::out_path(c, "top_posts.txt"), [&](std::ostream& o) {
    for (std::size_t comp = 0; comp < 2; ++comp) {
      o << "Top posts for PC" << comp + 1 << (comp == 0 ? " (credibility)" : " (sensationalism)") << '\n';
      auto top = top_posts(table.posts, comp, c.top);
      for (std::size_t i = 0; i < top.size(); ++i) {
        o << std::setw(3) << i + 1 << ". " << top[i].post_id << "  " << detail::fixed(top[i].pc_scores[comp], 3);
        auto it = headline.find(top[i].post_id);
        if (it != headline.end()) o << "  " << it->second;
        o << '\n';
      }
      o << '\n';
    }
  });
  detail::write_snapshot(c, {{"input_sha256", file_sha256(c.input)}});

  out << "variance:";
  double acc = 0.0;
  std::string cumulative = "cumulative variance:";
  for (Eigen::Index k = 0; k < fit.variance_fraction.size(); ++k) {
    out << ' ' << detail::fixed(fit.variance_fraction(k), 2);
    acc += fit.variance_fraction(k);
    cumulative += ' ' + detail::fixed(acc, 2);
  }
  out << '\n' << cumulative << '\n';
  if (!agg.dropped_posts.empty())
    out << "warning: " << agg.dropped_posts.size() << " post(s) dropped for incomplete ratings\n";
  return kExitOk;
}

inline int cmd_fit(const RunConfig& c, std::ostream& out) {
  detail::require_input(c);
  if (c.scores.empty()) throw InputError("fit: --scores is required");
  DesignSpec spec;
  if (c.model == "dwell") {
    spec = dwell_model_spec();
  } else if (c.model == "engage") {
    spec = engage_model_spec();
  } else if (c.model == "attention") {
    spec = attention_model_spec();
  } else {
    throw InputError("fit: --model must be dwell, engage or attention");
  }
  auto cleaned = detail::require_clean(load_impressions(c.input), c.input);
  auto scores = load_scores(c.scores);
  auto fit = fit_model(cleaned, scores, spec);
  detail::prepare_output(c);
  detail::write_json(detail::out_path(c, "fit_" + c.model + ".json"), trybuy::to_json(fit));
  auto table = render_table(fit);
  write_file(detail::out_path(c, "fit_" + c.model + ".txt"), [&](std::ostream& o) { o << table; });
  detail::write_snapshot(c, {{"input_sha256", file_sha256(c.input)}, {"scores_sha256", file_sha256(c.scores)}});
  out << table;
  return kExitOk;
}

inline int cmd_simulate(const RunConfig& c, std::ostream& out) {
  detail::require_input(c);
  SimConfig cfg = detail::load_sim_config(c);
  auto sim = simulate_dataset(cfg);
  auto check = validate_dataset(sim.dataset.posts, sim.dataset.impressions);
  if (!check.ok()) throw InternalError("simulated dataset failed validation:\n" + format_violations(check.violations));
  detail::prepare_output(c);
  write_file(detail::out_path(c, "posts.csv"), [&](std::ostream& o) { write_posts_csv(o, sim.dataset.posts); });
  write_file(detail::out_path(c, "ratings.csv"),
             [&](std::ostream& o) { write_ratings_csv(o, ratings_from_posts(sim.dataset.posts)); });
  write_file(detail::out_path(c, "impressions.csv"),
             [&](std::ostream& o) { write_impressions_csv(o, sim.dataset.impressions, false); });
  save_dataset_json(detail::out_path(c, "dataset.json"), sim.dataset);
  detail::write_snapshot(c, {{"sim_config", trybuy::to_json(cfg)}});
  std::size_t engaged = 0;
  for (const auto& imp : sim.dataset.impressions) engaged += imp.engaged();
  out << "simulated " << cfg.participants << " participants x " << cfg.feed_length << " posts ("
      << sim.dataset.impressions.size() << " impressions, engagement rate "
      << detail::fixed(sim.dataset.impressions.empty()
                           ? 0.0
                           : static_cast<double>(engaged) / static_cast<double>(sim.dataset.impressions.size()),
                       4)
      << ")\n";
  return kExitOk;
}

inline int cmd_experiment(const RunConfig& c, std::ostream& out) {
  detail::require_input(c);
  SimConfig cfg = detail::load_sim_config(c);
  std::vector<Policy> policies;
  for (const auto& name : c.policies) {
    auto p = parse_policy(name);
    if (!p) throw InputError("experiment: unknown policy '" + name + "'");
    policies.push_back(*p);
  }
  if (c.k < 1) throw InputError("experiment: -k must be >= 1");
  auto outcomes = run_policy_experiment(cfg, policies, c.k);
  detail::prepare_output(c);
  write_file(detail::out_path(c, "policy_outcomes.csv"),
             [&](std::ostream& o) { write_policy_outcomes_csv(o, outcomes); });
  detail::write_snapshot(c, {{"sim_config", trybuy::to_json(cfg)}});
  out << std::left << std::setw(15) << "policy" << std::right << std::setw(14) << "credibility" << std::setw(16)
      << "sensationalism" << std::setw(12) << "engage" << std::setw(12) << "dwell(s)" << '\n';
  for (const auto& o : outcomes)
    out << std::left << std::setw(15) << o.policy << std::right << std::setw(14) << detail::fixed(o.mean_credibility, 3)
        << std::setw(16) << detail::fixed(o.mean_sensationalism, 3) << std::setw(12)
        << detail::fixed(o.engagement_rate, 4) << std::setw(12) << detail::fixed(o.mean_dwell, 3) << '\n';
  out << "(" << cfg.replications << " sessions, top-" << c.k << ")\n";
  return kExitOk;
}

inline std::string render_recovery(const RecoveryReport& rep) {
  std::ostringstream os;
  for (const auto& arm : rep.arms) {
    os << "[" << arm.name << "] replications with every term within " << rep.options.coverage_se_multiple
       << " SE: " << detail::fixed(arm.all_terms_covered_fraction, 2) << '\n';
    os << std::left << std::setw(10) << "model" << std::setw(22) << "term" << std::right << std::setw(11) << "true"
       << std::setw(11) << "mean est" << std::setw(10) << "bias" << std::setw(9) << "mean SE" << std::setw(10)
       << "coverage" << '\n';
    for (const auto& t : arm.terms)
      os << std::left << std::setw(10) << t.model << std::setw(22) << t.term << std::right << std::setw(11)
         << detail::fixed(t.generating, 4) << std::setw(11) << detail::fixed(t.mean_estimate, 4) << std::setw(10)
         << detail::fixed(t.bias, 4) << std::setw(9) << detail::fixed(t.mean_se, 4) << std::setw(10)
         << detail::fixed(t.coverage, 2) << '\n';
  }
  return os.str();
}

inline int cmd_recover(const RunConfig& c, std::ostream& out) {
  detail::require_input(c);
  SimConfig cfg = detail::load_sim_config(c);
  RecoveryOptions opts;
  opts.rules = c.rules;
  opts.movement.engagement_step = c.engagement_step;
  auto rep = parameter_recovery(cfg, opts);
  detail::prepare_output(c);
  detail::write_json(detail::out_path(c, "recovery_report.json"), trybuy::to_json(rep));
  detail::write_snapshot(c, {{"sim_config", trybuy::to_json(cfg)}});
  out << render_recovery(rep);
  return kExitOk;
}

inline int cmd_report(const RunConfig& c, std::ostream& out) {
  detail::require_input(c);
  auto ext = std::filesystem::path(c.input).extension().string();
  if (ext == ".csv") {
    auto rows = csv::read_file(c.input);
    std::vector<std::size_t> width;
    for (const auto& r : rows)
      for (std::size_t i = 0; i < r.fields.size(); ++i) {
        if (width.size() <= i) width.push_back(0);
        width[i] = std::max(width[i], r.fields[i].size());
      }
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.fields.size(); ++i)
        out << (i ? "  " : "") << std::left << std::setw(static_cast<int>(width[i])) << r.fields[i];
      out << '\n';
    }
    return kExitOk;
  }
  auto j = detail::load_json_file(c.input);
  if (j.contains("coefficients")) {
    out << render_table(regression_fit_from_json(j));
  } else if (j.contains("arms")) {
    for (const auto& arm : j.at("arms")) {
      out << "[" << arm.at("arm").get<std::string>() << "] all terms covered: "
          << detail::fixed(arm.at("all_terms_covered_fraction").get<double>(), 2) << '\n';
      for (const auto& t : arm.at("terms"))
        out << "  " << std::left << std::setw(10) << t.at("model").get<std::string>() << std::setw(22)
            << t.at("term").get<std::string>() << std::right << " true " << detail::fixed(t.at("generating").get<double>(), 4)
            << "  est " << detail::fixed(t.at("mean_estimate").get<double>(), 4) << "  coverage "
            << detail::fixed(t.at("coverage").get<double>(), 2) << '\n';
    }
  } else if (j.contains("variance_fraction")) {
    auto fit = pca_fit_from_json(j);
    out << std::left << std::setw(14) << "";
    for (Eigen::Index k = 0; k < fit.components(); ++k) out << std::right << std::setw(7) << ("PC" + std::to_string(k + 1));
    out << '\n';
    for (Eigen::Index r = 0; r < fit.loadings.rows(); ++r) {
      out << std::left << std::setw(14) << fit.columns[static_cast<std::size_t>(r)];
      for (Eigen::Index k = 0; k < fit.components(); ++k) out << std::right << std::setw(7) << detail::fixed(fit.loadings(r, k), 2);
      out << '\n';
    }
    out << std::left << std::setw(14) << "variance";
    for (Eigen::Index k = 0; k < fit.components(); ++k)
      out << std::right << std::setw(7) << detail::fixed(fit.variance_fraction(k), 2);
    out << '\n';
  } else {
    throw InputError("report: unrecognized file " + c.input);
  }
  return kExitOk;
}

/// Dispatches and maps failures onto exit codes: 2 for input/validation
/// errors, 1 for anything else.
inline int run(const RunConfig& c, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    if (c.subcommand == "preprocess") return cmd_preprocess(c, out);
    if (c.subcommand == "pca") return cmd_pca(c, out);
    if (c.subcommand == "fit") return cmd_fit(c, out);
    if (c.subcommand == "simulate") return cmd_simulate(c, out);
    if (c.subcommand == "experiment") return cmd_experiment(c, out);
    if (c.subcommand == "recover") return cmd_recover(c, out);
    if (c.subcommand == "report") return cmd_report(c, out);
    err << "error: unknown subcommand '" << c.subcommand << "'\n";
    return kExitInput;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace trybuy::cli
