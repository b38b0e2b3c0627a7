#include "ngvi/harness.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <limits>
#include <random>
#include <regex>
#include <sstream>

#include "json.hpp"

#ifndef NGVI_GIT_DESCRIBE
#define NGVI_GIT_DESCRIBE "unknown"
#endif

namespace ngvi::harness {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string fmt17(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

bool is_synthetic(const std::string& dataset) {
  return dataset.rfind("synthetic:", 0) == 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("no methods configured");
  for (Method m : methods) {
    auto it = step_sizes.find(m);
    if (it == step_sizes.end()) {
      throw ConfigError(std::string("no step size for method ") + method_name(m));
    }
    if (!(it->second > 0.0)) {
      throw ConfigError(std::string("step size for ") + method_name(m) + " must be positive");
    }
  }
  if (!(c0 > 0.0)) throw ConfigError("c0 must be positive");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (seeds < 1) throw ConfigError("seeds must be >= 1");
  if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
  if (oracle.quadrature_nodes < 3) throw ConfigError("quadrature_nodes must be >= 3");
  if (oracle.mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
  if (!is_synthetic(dataset)) data::dataset_info(dataset);
  else if (dataset != "synthetic:quadratic-toy" && dataset != "synthetic:logistic") {
    throw ConfigError("unknown synthetic problem '" + dataset + "'");
  }
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream os;
  os << "name=" << name << "\ndataset=" << dataset << "\nmethods=";
  for (std::size_t i = 0; i < methods.size(); ++i) {
    os << (i ? "," : "") << method_name(methods[i]);
  }
  os << "\n";
  for (const auto& [m, rho] : step_sizes) os << "step." << method_name(m) << "=" << fmt17(rho) << "\n";
  os << "gamma=" << fmt17(gamma) << "\nbeta=" << fmt17(beta) << "\nnonconvex=" << nonconvex
     << "\nrandom_mean=" << random_mean << "\nm0_scale=" << fmt17(m0_scale)
     << "\nc0=" << fmt17(c0) << "\nquadrature_nodes=" << oracle.quadrature_nodes
     << "\noracle_mode=" << (oracle.mode == OracleMode::deterministic ? "deterministic" : "monte_carlo")
     << "\nmc_samples=" << oracle.mc_samples << "\nmc_seed=" << oracle.mc_seed
     << "\nmax_iters=" << max_iters << "\ngrad_tol=" << fmt17(grad_tol)
     << "\nfixed_point_tol=" << fmt17(fixed_point_tol) << "\nseed=" << seed
     << "\nseeds=" << seeds << "\ntrain_count=" << train_count
     << "\nshuffle_seed=" << shuffle_seed << "\nscale=" << scale
     << "\nsubsample=" << subsample << "\nsynthetic_n=" << synthetic_n
     << "\nsynthetic_d=" << synthetic_d << "\n";
  return os.str();
}

std::string ExperimentConfig::hash() const { return data::sha256_hex(canonical()).substr(0, 16); }

ExperimentConfig table_preset(const std::string& dataset) {
  struct Row {
    const char* name;
    double beta, vn, srvn, bwgd;
    long max_iters;
  };
  static const Row rows[] = {
      {"australian-scale", 1e-5, 5e-3, 5e-3, 4.4e-3, 10000},
      {"diabetes-scale", 1e-2, 5e-3, 5e-3, 9e-4, 10000},
      {"breast-cancer", 1e-1, 9e-3, 6e-3, 6.3e-3, 10000},
      {"mushrooms", 1e-2, 2.5e-4, 2.5e-4, 8.5e-5, 2000},
      {"phishing", 1e-2, 4e-4, 4e-4, 8e-5, 2000},
      {"mnist", 1e-1, 5e-6, 5e-6, 1e-6, 200},
      {"covtype-scale", 2e-2, 1e-5, 1e-5, 1e-6, 500},
      {"leukemia", 2e-1, 5e-6, 5e-6, 1.5e-6, 100},
  };
  for (const Row& r : rows) {
    if (dataset != r.name) continue;
    const auto& info = data::dataset_info(dataset);
    ExperimentConfig cfg;
    cfg.name = dataset;
    cfg.dataset = dataset;
    cfg.beta = r.beta;
    cfg.step_sizes = {{Method::vn, r.vn}, {Method::srvn, r.srvn}, {Method::bwgd, r.bwgd}};
    cfg.max_iters = r.max_iters;
    cfg.seeds = 5;
    cfg.train_count = info.train_count;
    cfg.out = fs::path("runs") / dataset;
    return cfg;
  }
  throw ConfigError("no reference preset for '" + dataset + "'");
}

ExperimentConfig parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig cfg;
  if (auto ds = tree.get_optional<std::string>("experiment.dataset");
      ds && !is_synthetic(*ds)) {
    cfg = table_preset(*ds);
  }
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"experiment.name", [&](auto&, auto& v) { cfg.name = v; }},
      {"experiment.dataset", [&](auto&, auto& v) { cfg.dataset = v; }},
      {"experiment.methods",
       [&](auto&, auto& v) {
         cfg.methods.clear();
         for (const auto& m : split_list(v)) cfg.methods.push_back(parse_method(m));
       }},
      {"experiment.gamma", [&](auto& k, auto& v) { cfg.gamma = parse_double(k, v); }},
      {"experiment.beta", [&](auto& k, auto& v) { cfg.beta = parse_double(k, v); }},
      {"experiment.nonconvex", [&](auto& k, auto& v) { cfg.nonconvex = parse_bool(k, v); }},
      {"experiment.max_iters", [&](auto& k, auto& v) { cfg.max_iters = parse_int(k, v); }},
      {"experiment.seeds", [&](auto& k, auto& v) { cfg.seeds = static_cast<int>(parse_int(k, v)); }},
      {"experiment.seed", [&](auto& k, auto& v) { cfg.seed = static_cast<std::uint64_t>(parse_int(k, v)); }},
      {"experiment.out", [&](auto&, auto& v) { cfg.out = v; }},
      {"init.mean",
       [&](auto& k, auto& v) {
         if (v == "random") cfg.random_mean = true;
         else if (v == "zero") cfg.random_mean = false;
         else throw ConfigError("key '" + k + "': expected random or zero");
       }},
      {"init.m0_scale", [&](auto& k, auto& v) { cfg.m0_scale = parse_double(k, v); }},
      {"init.c0", [&](auto& k, auto& v) { cfg.c0 = parse_double(k, v); }},
      {"steps.gd", [&](auto& k, auto& v) { cfg.step_sizes[Method::gd] = parse_double(k, v); }},
      {"steps.vn", [&](auto& k, auto& v) { cfg.step_sizes[Method::vn] = parse_double(k, v); }},
      {"steps.srvn", [&](auto& k, auto& v) { cfg.step_sizes[Method::srvn] = parse_double(k, v); }},
      {"steps.bwgd", [&](auto& k, auto& v) { cfg.step_sizes[Method::bwgd] = parse_double(k, v); }},
      {"oracle.quadrature_nodes",
       [&](auto& k, auto& v) { cfg.oracle.quadrature_nodes = static_cast<int>(parse_int(k, v)); }},
      {"oracle.mode",
       [&](auto& k, auto& v) {
         if (v == "deterministic") cfg.oracle.mode = OracleMode::deterministic;
         else if (v == "monte_carlo") cfg.oracle.mode = OracleMode::monte_carlo;
         else throw ConfigError("key '" + k + "': expected deterministic or monte_carlo");
       }},
      {"oracle.mc_samples",
       [&](auto& k, auto& v) { cfg.oracle.mc_samples = static_cast<int>(parse_int(k, v)); }},
      {"oracle.mc_seed",
       [&](auto& k, auto& v) { cfg.oracle.mc_seed = static_cast<std::uint64_t>(parse_int(k, v)); }},
      {"stop.grad_tol", [&](auto& k, auto& v) { cfg.grad_tol = parse_double(k, v); }},
      {"stop.fixed_point_tol", [&](auto& k, auto& v) { cfg.fixed_point_tol = parse_double(k, v); }},
      {"split.train_count", [&](auto& k, auto& v) { cfg.train_count = parse_int(k, v); }},
      {"split.shuffle_seed",
       [&](auto& k, auto& v) { cfg.shuffle_seed = static_cast<std::uint64_t>(parse_int(k, v)); }},
      {"split.scale", [&](auto& k, auto& v) { cfg.scale = parse_bool(k, v); }},
      {"split.subsample", [&](auto& k, auto& v) { cfg.subsample = parse_int(k, v); }},
      {"synthetic.n", [&](auto& k, auto& v) { cfg.synthetic_n = parse_int(k, v); }},
      {"synthetic.d", [&](auto& k, auto& v) { cfg.synthetic_d = parse_int(k, v); }},
  };
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      const std::string full = section + "." + key;
      auto it = setters.find(full);
      if (it == setters.end()) throw ConfigError("unknown config key '" + full + "'");
      it->second(full, node.data());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in);
}

ProblemSpec quadratic_toy(double gamma) {
  // Eigenvalues 10 and 0.5 along axes rotated by 30 degrees.
  const double c = std::cos(M_PI / 6.0);
  const double s = std::sin(M_PI / 6.0);
  Matrix q(2, 2);
  q << c, -s, s, c;
  Vector eig(2);
  eig << 10.0, 0.5;
  const Matrix a = q * eig.asDiagonal() * q.transpose();
  Vector b(2);
  b << 1.0, 2.0;
  return make_quadratic_problem(a, b, 0.0, gamma);
}

TestMetrics compute_test_metrics(const Vector& theta, const data::DesignMatrix& test) {
  if (theta.size() != test.cols()) throw DimensionError("theta/test dimension mismatch");
  const Vector act = test.x() * theta;
  double nll = 0.0;
  long correct = 0;
  for (Eigen::Index i = 0; i < act.size(); ++i) {
    const double y = test.labels()(i);
    nll += softplus(-y * act(i));
    const double pred = act(i) >= 0.0 ? 1.0 : -1.0;  // ties go to +1
    if (pred == y) ++correct;
  }
  const double n = static_cast<double>(test.rows());
  return TestMetrics{nll, nll / n, static_cast<double>(correct) / n};
}

std::string git_describe() { return NGVI_GIT_DESCRIBE; }

// ---------------------------------------------------------------- running

namespace {

struct Prepared {
  ProblemSpec problem;
  std::shared_ptr<const data::DesignMatrix> test;
  Eigen::Index train_rows = 0;
  std::string digest = "none";
};

data::DesignMatrix synthetic_logistic(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector truth(d);
  for (Eigen::Index j = 0; j < d; ++j) truth(j) = 2.0 * normal(rng);
  Matrix x(n, d);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = normal(rng) / std::sqrt(static_cast<double>(d));
    y(i) = unif(rng) < sigmoid(x.row(i).dot(truth)) ? 1.0 : -1.0;
  }
  return data::DesignMatrix::from_dense(x, y);
}

Prepared prepare(const ExperimentConfig& cfg, const RunOptions& opts) {
  Prepared p;
  if (cfg.dataset == "synthetic:quadratic-toy") {
    p.problem = quadratic_toy(cfg.gamma);
    p.problem.nonconvex_reg = cfg.nonconvex;
    return p;
  }
  data::DesignMatrix full = [&] {
    if (cfg.dataset == "synthetic:logistic") {
      return synthetic_logistic(cfg.synthetic_n, cfg.synthetic_d, cfg.shuffle_seed);
    }
    const fs::path cache = opts.cache_dir.empty() ? data::default_cache_dir() : opts.cache_dir;
    data::FetchOptions fo;
    fo.offline = opts.offline;
    auto dm = data::load_dataset(cfg.dataset, cache, fo);
    p.digest = data::manifest_digest(cache / cfg.dataset);
    return dm;
  }();
  if (cfg.subsample > 0 && cfg.subsample < full.rows()) {
    auto perm = data::seeded_permutation(full.rows(), cfg.shuffle_seed ^ 0x5eedULL);
    perm.resize(static_cast<std::size_t>(cfg.subsample));
    std::sort(perm.begin(), perm.end());
    full = full.subset(perm);
  }
  Eigen::Index train = cfg.train_count;
  if (train <= 0 || train >= full.rows()) {
    train = static_cast<Eigen::Index>(std::llround(0.8 * static_cast<double>(full.rows())));
  }
  auto [tr, te] = data::split(full, data::SplitSpec{train, cfg.shuffle_seed, cfg.scale});
  p.train_rows = tr.rows();
  p.test = std::make_shared<const data::DesignMatrix>(std::move(te));
  p.problem = make_logistic_problem(std::make_shared<const data::DesignMatrix>(std::move(tr)),
                                    cfg.beta, cfg.gamma);
  p.problem.nonconvex_reg = cfg.nonconvex;
  return p;
}

GaussianParams initial_state(const ExperimentConfig& cfg, Eigen::Index d, std::uint64_t seed) {
  Vector m0 = Vector::Zero(d);
  if (cfg.random_mean) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index j = 0; j < d; ++j) m0(j) = cfg.m0_scale * normal(rng);
  }
  return GaussianParams::isotropic(std::move(m0), cfg.c0);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const Prepared prep = prepare(cfg, opts);
  ExperimentResult result;
  result.config = cfg;
  result.train_rows = prep.train_rows;
  result.test_rows = prep.test ? prep.test->rows() : 0;
  result.manifest_digest = prep.digest;
  result.git_describe = git_describe();

  auto run_seed = [&](std::uint64_t seed) {
    SeedRuns sr{seed, {}};
    const GaussianParams init = initial_state(cfg, prep.problem.dim(), seed);
    for (Method m : cfg.methods) {
      StepConfig step;
      step.rho = cfg.step_sizes.at(m);
      step.gamma = cfg.gamma;
      step.max_iters = cfg.max_iters;
      step.grad_tol = cfg.grad_tol;
      step.fixed_point_tol = cfg.fixed_point_tol;
      RunHooks hooks;
      if (prep.test) {
        auto test = prep.test;
        hooks.mean_metrics = [test](const Vector& mean) {
          return compute_test_metrics(mean, *test);
        };
      }
      RunRecord rec = run_optimizer(m, init, prep.problem, cfg.oracle, step, hooks);
      if (!opts.quiet) {
        std::ostringstream os;
        os << "[" << cfg.name << "] seed " << seed << " " << method_name(m) << ": "
           << status_name(rec.status) << " after " << rec.iterations()
           << " iterations, objective " << fmt17(rec.rows.back().neg_elbo);
        if (!rec.abort_message.empty()) os << " (" << rec.abort_message << ")";
        os << "\n";
        std::cerr << os.str();
      }
      sr.records.push_back(std::move(rec));
    }
    return sr;
  };

  std::vector<std::future<SeedRuns>> futures;
  for (int k = 0; k < cfg.seeds; ++k) {
    futures.push_back(std::async(std::launch::async, run_seed, cfg.seed + static_cast<std::uint64_t>(k)));
  }
  for (auto& f : futures) result.runs.push_back(f.get());
  if (opts.write_files) write_outputs(result, cfg.out);
  return result;
}

// ---------------------------------------------------------------- emission

namespace {

std::ofstream open_out(const fs::path& path) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string run_file(Method m, std::uint64_t seed) {
  return std::string(method_name(m)) + "_seed" + std::to_string(seed) + ".csv";
}

struct SeriesDef {
  const char* name;
  std::function<double(const IterationRow&)> get;
  bool gap_to_best;
  bool log_scale;
};

const std::vector<SeriesDef>& series_defs() {
  static const std::vector<SeriesDef> defs = {
      {"neg_elbo", [](const IterationRow& r) { return r.neg_elbo; }, true, true},
      {"test_nll", [](const IterationRow& r) { return r.test_nll; }, true, true},
      {"test_accuracy", [](const IterationRow& r) { return r.test_accuracy; }, false, false},
      {"grad_norm", [](const IterationRow& r) { return r.grad_norm; }, false, true},
  };
  return defs;
}

struct Envelope {
  std::vector<double> x;
  std::vector<double> mean, lo, hi;
};

// Seeds that stop early are padded with their last value.
Envelope envelope(const std::vector<RunRecord>& recs,
                  const std::function<double(const IterationRow&)>& get, double offset,
                  std::size_t length, bool seconds_axis) {
  Envelope e;
  for (std::size_t i = 0; i < length; ++i) {
    double sum = 0, lo = std::numeric_limits<double>::infinity(),
           hi = -std::numeric_limits<double>::infinity(), tsum = 0;
    for (const auto& r : recs) {
      const IterationRow& row = r.rows[std::min(i, r.rows.size() - 1)];
      const double v = get(row) - offset;
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      tsum += row.wall_ms / 1000.0;
    }
    const double n = static_cast<double>(recs.size());
    e.x.push_back(seconds_axis ? tsum / n : static_cast<double>(i));
    e.mean.push_back(sum / n);
    e.lo.push_back(lo);
    e.hi.push_back(hi);
  }
  return e;
}

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

void write_svg(const fs::path& path, const std::string& title, const std::string& xlabel,
               const std::vector<std::pair<std::string, Envelope>>& curves, bool log_y) {
  const double W = 640, H = 400, left = 70, right = 20, top = 40, bottom = 50;
  auto ty = [&](double v) { return log_y ? std::log10(std::max(v, 1e-16)) : v; };
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& [name, e] : curves) {
    for (std::size_t i = 0; i < e.x.size(); ++i) {
      if (!std::isfinite(e.mean[i])) continue;
      xmin = std::min(xmin, e.x[i]);
      xmax = std::max(xmax, e.x[i]);
      ymin = std::min(ymin, ty(e.lo[i]));
      ymax = std::max(ymax, ty(e.hi[i]));
    }
  }
  if (!std::isfinite(xmin)) return;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (W - left - right); };
  auto py = [&](double y) { return top + (ymax - ty(y)) / (ymax - ymin) * (H - top - bottom); };
  auto out = open_out(path);
  char buf[128];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n"
      << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << W - left - right
      << "\" height=\"" << H - top - bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  auto label = [&](double v, bool is_log) {
    std::snprintf(buf, sizeof buf, is_log ? "1e%.1f" : "%.4g", v);
    return std::string(buf);
  };
  out << "<text x=\"" << left - 5 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\">"
      << label(ymax, log_y) << "</text>\n"
      << "<text x=\"" << left - 5 << "\" y=\"" << H - bottom << "\" text-anchor=\"end\">"
      << label(ymin, log_y) << "</text>\n"
      << "<text x=\"" << left << "\" y=\"" << H - bottom + 16 << "\">" << label(xmin, false)
      << "</text>\n"
      << "<text x=\"" << W - right << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"end\">"
      << label(xmax, false) << "</text>\n"
      << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << xlabel
      << "</text>\n";
  std::size_t k = 0;
  for (const auto& [name, e] : curves) {
    const char* color = kColors[k % 4];
    out << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < e.x.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(e.x[i]), py(e.hi[i]));
      out << buf;
    }
    for (std::size_t i = e.x.size(); i-- > 0;) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(e.x[i]), py(e.lo[i]));
      out << buf;
    }
    out << "\"/>\n<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < e.x.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(e.x[i]), py(e.mean[i]));
      out << buf;
    }
    out << "\"/>\n<text x=\"" << W - right - 10 << "\" y=\"" << top + 16 + 16 * k
        << "\" text-anchor=\"end\" fill=\"" << color << "\">" << name << "</text>\n";
    ++k;
  }
  out << "</svg>\n";
}

void write_series(const fs::path& path, const char* xname, const Envelope& e) {
  auto out = open_out(path);
  out << xname << ",mean,min,max\n";
  for (std::size_t i = 0; i < e.x.size(); ++i) {
    out << fmt17(e.x[i]) << "," << fmt17(e.mean[i]) << "," << fmt17(e.lo[i]) << ","
        << fmt17(e.hi[i]) << "\n";
  }
}

}  // namespace

void emit_plot_data(const std::map<Method, std::vector<RunRecord>>& records,
                    const fs::path& out) {
  if (records.empty()) throw ConfigError("no records to plot");
  std::size_t length = 0;
  for (const auto& [m, recs] : records) {
    for (const auto& r : recs) length = std::max(length, r.rows.size());
  }
  for (const SeriesDef& def : series_defs()) {
    double best = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto& [m, recs] : records) {
      for (const auto& r : recs) {
        for (const auto& row : r.rows) {
          const double v = def.get(row);
          if (std::isnan(v)) continue;
          any = true;
          best = std::min(best, v);
        }
      }
    }
    if (!any) continue;
    const double offset = def.gap_to_best ? best : 0.0;
    const std::string metric = std::string(def.name) + (def.gap_to_best ? "_gap" : "");
    std::vector<std::pair<std::string, Envelope>> it_curves, time_curves;
    for (const auto& [m, recs] : records) {
      if (recs.empty()) continue;
      Envelope ei = envelope(recs, def.get, offset, length, false);
      Envelope et = envelope(recs, def.get, offset, length, true);
      write_series(out / "series" / (metric + "_iteration_" + method_name(m) + ".csv"), "iter", ei);
      write_series(out / "timing" / "series" / (metric + "_seconds_" + method_name(m) + ".csv"),
                   "seconds", et);
      it_curves.emplace_back(method_name(m), std::move(ei));
      time_curves.emplace_back(method_name(m), std::move(et));
    }
    write_svg(out / "charts" / (metric + "_iteration.svg"), metric, "iteration", it_curves,
              def.log_scale);
    write_svg(out / "timing" / "charts" / (metric + "_seconds.svg"), metric, "seconds",
              time_curves, def.log_scale);
  }
}

void write_outputs(const ExperimentResult& result, const fs::path& out) {
  const ExperimentConfig& cfg = result.config;
  const std::string hash = cfg.hash();
  std::map<Method, std::vector<RunRecord>> grouped;
  {
    auto summary = open_out(out / "summary.csv");
    summary << "method,seed,status,iterations,neg_elbo,test_nll_sum,test_nll_mean,"
               "test_accuracy,grad_norm,fixed_point_residual,abort_iteration,config_hash,"
               "git_describe,manifest_digest\n";
    auto timing = open_out(out / "timing" / "summary.csv");
    timing << "method,seed,iterations,total_ms,per_iter_ms\n";
    for (const SeedRuns& sr : result.runs) {
      for (const RunRecord& rec : sr.records) {
        grouped[rec.method].push_back(rec);
        auto runs = open_out(out / "runs" / run_file(rec.method, sr.seed));
        runs << "iter,neg_elbo,grad_norm,c_frob,v_eig_min,v_eig_max,test_nll,test_accuracy\n";
        auto tfile = open_out(out / "timing" / run_file(rec.method, sr.seed));
        tfile << "iter,wall_ms\n";
        for (const IterationRow& r : rec.rows) {
          runs << r.iter << "," << fmt17(r.neg_elbo) << "," << fmt17(r.grad_norm) << ","
               << fmt17(r.c_frob) << "," << fmt17(r.v_eig_min) << "," << fmt17(r.v_eig_max)
               << "," << fmt17(r.test_nll) << "," << fmt17(r.test_accuracy) << "\n";
          tfile << r.iter << "," << fmt17(r.wall_ms) << "\n";
        }
        const IterationRow& last = rec.rows.back();
        const double n_test = static_cast<double>(result.test_rows);
        summary << method_name(rec.method) << "," << sr.seed << "," << status_name(rec.status)
                << "," << rec.iterations() << "," << fmt17(last.neg_elbo) << ","
                << fmt17(last.test_nll) << ","
                << fmt17(n_test > 0 ? last.test_nll / n_test : std::nan("")) << ","
                << fmt17(last.test_accuracy) << "," << fmt17(rec.final_grad_norm) << ","
                << fmt17(rec.final_fixed_point_residual) << "," << rec.abort_iteration << ","
                << hash << "," << result.git_describe << "," << result.manifest_digest << "\n";
        const double iters = std::max<double>(1.0, static_cast<double>(rec.iterations()));
        timing << method_name(rec.method) << "," << sr.seed << "," << rec.iterations() << ","
               << fmt17(last.wall_ms) << "," << fmt17(last.wall_ms / iters) << "\n";
      }
    }
  }
  {
    auto conf = open_out(out / "config.txt");
    conf << cfg.canonical();
  }
  nlohmann::json j;
  j["name"] = cfg.name;
  j["dataset"] = cfg.dataset;
  j["config_hash"] = hash;
  j["git_describe"] = result.git_describe;
  j["manifest_digest"] = result.manifest_digest;
  j["train_rows"] = result.train_rows;
  j["test_rows"] = result.test_rows;
  j["runs"] = nlohmann::json::array();
  for (const SeedRuns& sr : result.runs) {
    for (const RunRecord& rec : sr.records) {
      const IterationRow& last = rec.rows.back();
      nlohmann::json r;
      r["method"] = method_name(rec.method);
      r["seed"] = sr.seed;
      r["status"] = status_name(rec.status);
      r["iterations"] = rec.iterations();
      r["neg_elbo"] = last.neg_elbo;
      if (!std::isnan(last.test_nll)) {
        r["test_nll_sum"] = last.test_nll;
        r["test_accuracy"] = last.test_accuracy;
      }
      r["grad_norm"] = rec.final_grad_norm;
      r["fixed_point_residual"] = rec.final_fixed_point_residual;
      r["total_ms"] = last.wall_ms;
      if (!rec.abort_message.empty()) {
        r["abort_message"] = rec.abort_message;
        r["abort_iteration"] = rec.abort_iteration;
      }
      j["runs"].push_back(r);
    }
  }
  auto js = open_out(out / "summary.json");
  js << j.dump(2) << "\n";
  emit_plot_data(grouped, out);
}

std::map<Method, std::vector<RunRecord>> load_records(const fs::path& run_dir) {
  const fs::path runs = run_dir / "runs";
  if (!fs::is_directory(runs)) throw IoError("no runs/ directory in " + run_dir.string());
  const std::regex name_re(R"(([a-z]+)_seed(\d+)\.csv)");
  std::vector<std::tuple<Method, std::uint64_t, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(runs)) {
    std::smatch match;
    const std::string fname = entry.path().filename().string();
    if (!std::regex_match(fname, match, name_re)) continue;
    files.emplace_back(parse_method(match[1]), std::stoull(match[2]), entry.path());
  }
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) {
    return std::make_pair(std::get<0>(a), std::get<1>(a)) <
           std::make_pair(std::get<0>(b), std::get<1>(b));
  });
  auto read_csv = [](const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot read " + p.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      std::vector<double> vals;
      std::istringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) vals.push_back(cell == "nan" ? std::nan("") : std::stod(cell));
      rows.push_back(std::move(vals));
    }
    return rows;
  };
  std::map<Method, std::vector<RunRecord>> out;
  for (const auto& [method, seed, path] : files) {
    RunRecord rec;
    rec.method = method;
    const auto rows = read_csv(path);
    std::vector<std::vector<double>> times;
    const fs::path tpath = run_dir / "timing" / path.filename();
    if (fs::exists(tpath)) times = read_csv(tpath);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& v = rows[i];
      if (v.size() != 8) throw IoError("malformed row in " + path.string());
      const double wall = i < times.size() && times[i].size() == 2 ? times[i][1] : std::nan("");
      rec.rows.push_back(IterationRow{static_cast<long>(v[0]), wall, v[1], v[2], v[3], v[4], v[5],
                                      v[6], v[7]});
    }
    if (rec.rows.empty()) continue;
    out[method].push_back(std::move(rec));
  }
  return out;
}

}  // namespace ngvi::harness
