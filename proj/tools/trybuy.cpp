#include <CLI11.hpp>

#include "trybuy/cli.hpp"

int main(int argc, char** argv) {
  using trybuy::cli::RunConfig;
  CLI::App app{"trybuy: dwell-time preprocessing, feature space, models and feed simulation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "trybuy 0.1.0");

  RunConfig cfg;
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> seed_opts;
  auto common = [&](CLI::App* sub, bool needs_seed) {
    sub->add_option("--input,-i", cfg.input, "input file")->required();
    sub->add_option("--output-dir,-o", cfg.output_dir, "output directory")->capture_default_str();
    sub->add_flag("-v,--verbose", cfg.verbosity, "more output");
    if (needs_seed) {
      seed_opts.push_back(sub->add_option("--seed", seed, "override the configured RNG seed"));
      sub->add_option("--threads", cfg.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    }
  };
  auto rules = [&](CLI::App* sub) {
    sub->add_option("--rules.max-dwell", cfg.rules.max_dwell, "drop raw dwell above this (s)")->capture_default_str();
    sub->add_option("--rules.edge-trim", cfg.rules.edge_trim, "positions trimmed at each feed end")
        ->capture_default_str();
    sub->add_option("--rules.min-dwell", cfg.rules.min_adjusted_dwell, "drop adjusted dwell below this (s)")
        ->capture_default_str();
    sub->add_flag("--engagement-step", cfg.engagement_step,
                  "add a fixed engaged-vs-not step to the movement model");
  };

  auto* preprocess = app.add_subcommand("preprocess", "exclusions, movement-time model and dwell adjustment");
  common(preprocess, false);
  rules(preprocess);
  preprocess->add_option("--posts", cfg.posts, "posts.csv for referential checks");

  auto* pca = app.add_subcommand("pca", "aggregate ratings, fit PCA, score posts");
  common(pca, false);
  pca->add_option("--posts", cfg.posts, "posts.csv for headlines");
  pca->add_option("--cleaned", cfg.cleaned, "cleaned impressions for dwell correlations");
  pca->add_option("--top", cfg.top, "posts listed per component")->capture_default_str();

  auto* fit = app.add_subcommand("fit", "fit the dwell or engagement model");
  common(fit, false);
  fit->add_option("--scores", cfg.scores, "scores.csv from pca")->required();
  fit->add_option("--model", cfg.model, "dwell | engage | attention")
      ->check(CLI::IsMember({"dwell", "engage", "attention"}))
      ->capture_default_str();

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic study");
  common(simulate, true);

  auto* experiment = app.add_subcommand("experiment", "compare ranking policies");
  common(experiment, true);
  experiment->add_option("--policies", cfg.policies, "policies to compare")->delimiter(',')->capture_default_str();
  experiment->add_option("-k", cfg.k, "feed slots surfaced")->check(CLI::PositiveNumber)->capture_default_str();

  auto* recover = app.add_subcommand("recover", "parameter recovery over replications");
  common(recover, true);
  rules(recover);

  auto* report = app.add_subcommand("report", "render a fit, PCA, recovery or CSV output");
  common(report, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return trybuy::cli::kExitInput;
  }

  cfg.subcommand = app.get_subcommands().front()->get_name();
  for (auto* opt : seed_opts)
    if (opt->count() > 0) cfg.seed = seed;
  return trybuy::cli::run(cfg);
}
