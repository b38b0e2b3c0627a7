#include <iostream>

#include "CLI11.hpp"
#include "ngvi/data.hpp"
#include "ngvi/errors.hpp"
#include "ngvi/harness.hpp"

// Exit codes: 0 ok, 1 verification failure, 2 verification skipped
// instances only, 3 configuration or usage error, 4 data/fetch error, 5 other error.
int main(int argc, char** argv) {
  using namespace ngvi;
  CLI::App app{"Gaussian variational inference with natural-gradient optimizers"};
  app.require_subcommand(1);

  bool offline = false;
  std::string cache_dir;
  app.add_flag("--offline", offline, "Use the dataset cache only; never touch the network");
  app.add_option("--cache-dir", cache_dir, "Dataset cache root (default $NGVI_CACHE_DIR or ~/.cache/ngvi)");

  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<long> max_iters;
  bool quiet = false;
  run->add_option("config", config_path, "Experiment config (INI)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Base seed (seeds run as seed, seed+1, ...)");
  run->add_option("--max-iters", max_iters, "Iteration budget per method");
  run->add_option("--out", out_dir, "Output directory");
  run->add_flag("--quiet", quiet, "Suppress per-run progress lines");

  auto* verify = app.add_subcommand("verify", "Run the theory verification suite");
  std::string level = "fast";
  verify->add_option("--level", level, "fast or full")->check(CLI::IsMember({"fast", "full"}));

  auto* fetch = app.add_subcommand("fetch", "Download a dataset into the cache");
  std::string dataset;
  fetch->add_option("dataset", dataset, "Dataset name")->required();

  auto* plot = app.add_subcommand("plot", "Re-emit series files and charts from a run directory");
  std::string run_dir;
  plot->add_option("run_dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version exit 0; usage errors count as configuration errors.
    return app.exit(e) == 0 ? 0 : 3;
  }

  try {
    const std::filesystem::path cache =
        cache_dir.empty() ? data::default_cache_dir() : std::filesystem::path(cache_dir);
    if (*run) {
      auto cfg = harness::load_config(config_path);
      if (seed) cfg.seed = *seed;
      if (max_iters) cfg.max_iters = *max_iters;
      if (!out_dir.empty()) cfg.out = out_dir;
      cfg.validate();
      harness::RunOptions opts;
      opts.cache_dir = cache;
      opts.offline = offline;
      opts.quiet = quiet;
      const auto result = harness::run_experiment(cfg, opts);
      std::cout << "wrote " << cfg.out.string() << " (config " << cfg.hash() << ")\n";
      for (const auto& sr : result.runs) {
        for (const auto& rec : sr.records) {
          if (rec.status == RunStatus::aborted) {
            std::cout << "note: " << method_name(rec.method) << " seed " << sr.seed
                      << " aborted at iteration " << rec.abort_iteration << ": "
                      << rec.abort_message << "\n";
          }
        }
      }
      return 0;
    }
    if (*verify) {
      const auto report = harness::verify_suite(
          level == "full" ? harness::VerifyLevel::full : harness::VerifyLevel::fast, &std::cout);
      std::cout << "verify " << level << ": " << report.checks.size() << " checks in "
                << report.seconds << " s, exit " << report.exit_code() << "\n";
      return report.exit_code();
    }
    if (*fetch) {
      data::FetchOptions fo;
      fo.offline = offline;
      std::cout << data::fetch_dataset(dataset, cache, fo).string() << "\n";
      return 0;
    }
    if (*plot) {
      harness::emit_plot_data(harness::load_records(run_dir), run_dir);
      std::cout << "wrote series and charts under " << run_dir << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const FetchError& e) {
    std::cerr << "fetch error: " << e.what() << "\n";
    return 4;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  }
  return 0;
}
