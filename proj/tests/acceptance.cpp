// Acceptance suite: `acceptance --criterion N` prints one PASS/FAIL/SKIP
// line (plus indented detail lines) and exits 0 / 1 / 77.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "ngvi/data.hpp"
#include "ngvi/errors.hpp"
#include "ngvi/harness.hpp"

namespace fs = std::filesystem;
using namespace ngvi;
using namespace ngvi::harness;

namespace {

constexpr int kSkip = 77;
constexpr std::uint64_t kSeed = 20240611;

// Pinned tolerances.
constexpr double kGradientBudgetSeconds = 10.0;
constexpr double kContractionBudgetSeconds = 5.0;
constexpr double kTableBudgetSeconds = 300.0;
constexpr double kTableRelTol = 0.05;
constexpr double kAccuracyTol = 0.02;
constexpr double kDiabetesElbo = 301.18;
constexpr double kDiabetesNll = 79.72;
constexpr double kDiabetesAccuracy = 0.74;
// Equal-limit methods may differ by round-off in the last digits.
constexpr double kOrderingRoundOff = 1e-9;
// Fixed objective gap (relative to the initial gap) for the covtype
// iterations-to-target ordering, and the VN/SR-VN agreement factor.
constexpr double kCovtypeTargetGap = 1e-2;
constexpr double kCovtypeAgreement = 1.25;

struct Outcome {
  CheckStatus status;
  std::string summary;
  std::vector<std::string> details;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x, const char* f = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

Outcome from_checks(const std::vector<CheckResult>& checks, const std::string& summary,
                    std::vector<std::string> extra = {}) {
  Outcome o{CheckStatus::pass, summary, {}};
  for (const auto& c : checks) {
    if (c.status == CheckStatus::fail) o.status = CheckStatus::fail;
    o.details.push_back(std::string(check_status_name(c.status)) + " " + c.name + ": " +
                        c.detail);
  }
  for (auto& e : extra) o.details.push_back(std::move(e));
  return o;
}

Outcome timed(const std::string& summary, double budget, const std::function<CheckResult()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = f();
  const double secs = seconds_since(t0);
  Outcome o = from_checks({r}, summary);
  o.details.push_back("runtime " + fmt(secs, "%.2f") + " s (budget " + fmt(budget) + " s)");
  if (secs > budget) o.status = CheckStatus::fail;
  return o;
}

// ---- dataset-backed criteria ----

struct DataUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunOptions data_options() {
  RunOptions opts;
  opts.cache_dir = data::default_cache_dir();
  opts.offline = std::getenv("NGVI_OFFLINE") != nullptr;
  opts.quiet = true;
  return opts;
}

void ensure_dataset(const std::string& name, const RunOptions& opts) {
  data::FetchOptions fo;
  fo.offline = opts.offline;
  fo.timeout_seconds = 60;
  try {
    data::fetch_dataset(name, opts.cache_dir, fo);
  } catch (const FetchError& e) {
    throw DataUnavailable(e.what());
  }
}

ExperimentConfig preset(const std::string& file) {
  return load_config(fs::path(NGVI_PRESET_DIR) / file);
}

struct MethodSummary {
  double neg_elbo = 0, test_nll = 0, accuracy = 0;
  bool aborted = false;
};

std::map<Method, MethodSummary> terminal_means(const ExperimentResult& r) {
  std::map<Method, MethodSummary> out;
  std::map<Method, int> counts;
  for (const auto& sr : r.runs) {
    for (const auto& rec : sr.records) {
      auto& s = out[rec.method];
      const auto& last = rec.rows.back();
      s.neg_elbo += last.neg_elbo;
      s.test_nll += last.test_nll;
      s.accuracy += last.test_accuracy;
      s.aborted = s.aborted || rec.status == RunStatus::aborted;
      ++counts[rec.method];
    }
  }
  for (auto& [m, s] : out) {
    s.neg_elbo /= counts[m];
    s.test_nll /= counts[m];
    s.accuracy /= counts[m];
  }
  return out;
}

// Iterations for the seed-mean objective to fall to `frac` of its initial
// gap above the best value seen by any method; -1 when never reached.
std::map<Method, long> iterations_to_gap(const ExperimentResult& r, double frac) {
  std::map<Method, std::vector<const RunRecord*>> by_method;
  double best = 1e300;
  for (const auto& sr : r.runs) {
    for (const auto& rec : sr.records) {
      by_method[rec.method].push_back(&rec);
      for (const auto& row : rec.rows) best = std::min(best, row.neg_elbo);
    }
  }
  std::map<Method, long> out;
  for (const auto& [m, recs] : by_method) {
    std::size_t len = 0;
    for (auto* rec : recs) len = std::max(len, rec->rows.size());
    auto mean_at = [&](std::size_t i) {
      double s = 0;
      for (auto* rec : recs) s += rec->rows[std::min(i, rec->rows.size() - 1)].neg_elbo;
      return s / static_cast<double>(recs.size());
    };
    const double target = frac * (mean_at(0) - best);
    out[m] = -1;
    for (std::size_t i = 0; i < len; ++i) {
      if (mean_at(i) - best <= target) {
        out[m] = static_cast<long>(i);
        break;
      }
    }
  }
  return out;
}

Outcome criterion9() {
  const RunOptions base = data_options();
  for (const char* name : {"diabetes-scale", "mushrooms", "covtype-scale"}) ensure_dataset(name, base);
  const auto t0 = std::chrono::steady_clock::now();
  RunOptions opts = base;
  opts.write_files = false;
  Outcome o{CheckStatus::pass, "desk-scale real-data reproduction", {}};
  auto fail_if = [&](bool bad, const std::string& line) {
    if (bad) o.status = CheckStatus::fail;
    o.details.push_back(std::string(bad ? "FAIL " : "PASS ") + line);
  };

  const auto diabetes = terminal_means(run_experiment(preset("diabetes-scale.ini"), opts));
  for (const auto& [m, s] : diabetes) {
    const double e_rel = std::abs(s.neg_elbo - kDiabetesElbo) / kDiabetesElbo;
    const double n_rel = std::abs(s.test_nll - kDiabetesNll) / kDiabetesNll;
    const double a_err = std::abs(s.accuracy - kDiabetesAccuracy);
    fail_if(s.aborted || e_rel > kTableRelTol || n_rel > kTableRelTol || a_err > kAccuracyTol,
            std::string("diabetes ") + method_name(m) + ": -ELBO " + fmt(s.neg_elbo, "%.2f") +
                " (target 301.18), test NLL " + fmt(s.test_nll, "%.2f") +
                " (target 79.72), accuracy " + fmt(s.accuracy, "%.3f") + " (target 0.74)");
  }

  const auto mush = terminal_means(run_experiment(preset("mushrooms.ini"), opts));
  const double sr = mush.at(Method::srvn).neg_elbo;
  const double vn = mush.at(Method::vn).neg_elbo;
  const double bw = mush.at(Method::bwgd).neg_elbo;
  fail_if(!(sr <= vn + kOrderingRoundOff * std::abs(vn) && vn < bw),
          "mushrooms -ELBO: srvn " + fmt(sr, "%.4f") + ", vn " + fmt(vn, "%.4f") + ", bwgd " +
              fmt(bw, "%.4f") + " (want srvn <= vn < bwgd)");

  const auto cov = iterations_to_gap(run_experiment(preset("covtype-5k.ini"), opts),
                                     kCovtypeTargetGap);
  const long it_sr = cov.at(Method::srvn), it_vn = cov.at(Method::vn),
             it_bw = cov.at(Method::bwgd);
  const bool agree = it_sr > 0 && it_vn > 0 &&
                     std::max(it_sr, it_vn) <= kCovtypeAgreement * std::min(it_sr, it_vn);
  const bool faster = it_sr > 0 && it_vn > 0 && (it_bw < 0 || (it_sr < it_bw && it_vn < it_bw));
  fail_if(!(agree && faster),
          "covtype 5k subsample, iterations to 1% of initial gap: srvn " + std::to_string(it_sr) +
              ", vn " + std::to_string(it_vn) + ", bwgd " + std::to_string(it_bw) +
              " (-1 = not reached)");

  const double secs = seconds_since(t0);
  fail_if(secs > kTableBudgetSeconds, "runtime " + fmt(secs, "%.1f") + " s (budget 300 s)");
  return o;
}

bool same_file(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  return fa && fb && sa.str() == sb.str();
}

Outcome criterion10() {
  const RunOptions base = data_options();
  for (const char* name : {"diabetes-scale", "covtype-scale"}) ensure_dataset(name, base);
  const fs::path root = fs::temp_directory_path() / ("ngvi-determinism-" + std::to_string(::getpid()));
  fs::remove_all(root);
  Outcome o{CheckStatus::pass, "determinism of emitted CSVs", {}};
  for (const char* file : {"diabetes-scale.ini", "covtype-5k.ini"}) {
    ExperimentConfig cfg = preset(file);
    std::vector<fs::path> dirs;
    for (int k = 0; k < 2; ++k) {
      cfg.out = root / (cfg.name + "-" + std::to_string(k));
      run_experiment(cfg, base);
      dirs.push_back(cfg.out);
    }
    long compared = 0, differing = 0;
    for (const auto& entry : fs::recursive_directory_iterator(dirs[0])) {
      const fs::path rel = fs::relative(entry.path(), dirs[0]);
      if (entry.path().extension() != ".csv" || *rel.begin() == "timing") continue;
      ++compared;
      if (!same_file(entry.path(), dirs[1] / rel)) {
        ++differing;
        o.details.push_back("differs: " + cfg.name + "/" + rel.string());
      }
    }
    if (differing > 0 || compared == 0) o.status = CheckStatus::fail;
    o.details.push_back(cfg.name + ": " + std::to_string(compared) + " CSV files compared, " +
                        std::to_string(differing) + " differ (timing/ excluded)");
  }
  fs::remove_all(root);
  return o;
}

Outcome run_criterion(int c) {
  switch (c) {
    case 1:
      return timed("analytic gradients match central differences", kGradientBudgetSeconds,
                   [] { return check_gradients(kSeed + 1, 20, 5); });
    case 2:
      return from_checks({check_vn_one_step()}, "natural-parameter update is exact in one step");
    case 3:
      return from_checks({check_neumann_order(kSeed + 6)},
                         "square-root and natural-parameter updates agree to second order");
    case 4:
      return timed("per-iteration contraction with the rate-optimal step",
                   kContractionBudgetSeconds, [] { return check_contraction(kSeed + 7); });
    case 5:
      return from_checks({check_flow_rate()}, "flow objective gap decays at rate 2 mu");
    case 6:
      return from_checks({check_flow_invariance(kSeed + 8)},
                         "flow is parameterization invariant; Euler-mc equals the discrete method");
    case 7: {
      // The tight-constant sweeps are reported for context only.
      const CheckResult tight_fim = check_fim_bounds(8, 500, kSeed + 3, true);
      const CheckResult tight_pl = check_pl_sweep(8, 500, kSeed + 4, true);
      return from_checks(
          {check_fim_bounds(8, 500, kSeed + 3, false), check_pl_sweep(8, 500, kSeed + 4, false),
           check_mc_fim(1000000, kSeed + 5)},
          "FIM eigenvalue bounds, PL inequality and Monte-Carlo FIM",
          {std::string("info ") + tight_fim.name + ": " + tight_fim.detail,
           std::string("info ") + tight_pl.name + ": " + tight_pl.detail});
    }
    case 8:
      return from_checks({check_biased_plateau(kSeed + 9)},
                         "biased-oracle plateau within 10x of the bound");
    case 9: return criterion9();
    case 10: return criterion10();
  }
  throw ConfigError("criterion must be in 1..10");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int criterion = 0;
  app.add_option("--criterion", criterion, "Criterion number (1-10)")->required()->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  Outcome o;
  try {
    o = run_criterion(criterion);
  } catch (const DataUnavailable& e) {
    o = Outcome{CheckStatus::skipped, "dataset unavailable", {e.what()}};
  } catch (const std::exception& e) {
    o = Outcome{CheckStatus::fail, "exception", {e.what()}};
  }
  std::cout << "criterion " << criterion << ": " << check_status_name(o.status) << " - "
            << o.summary << "\n";
  for (const auto& d : o.details) std::cout << "    " << d << "\n";
  switch (o.status) {
    case CheckStatus::pass: return 0;
    case CheckStatus::skipped: return kSkip;
    case CheckStatus::fail: return 1;
  }
  return 1;
}
