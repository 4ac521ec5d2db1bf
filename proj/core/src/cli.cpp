#include "fessnc/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "fessnc/dynamics.hpp"
#include "fessnc/generator.hpp"
#include "fessnc/kernel.hpp"
#include "fessnc/nets.hpp"
#include "fessnc/projection.hpp"
#include "fessnc/simulate.hpp"
#include "fessnc/training.hpp"

namespace fessnc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string config_digest(const std::string& bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  std::ostringstream ss;
  ss << std::hex << h;
  return ss.str();
}

namespace {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ModelError : std::runtime_error {
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

struct RunConfig {
  std::string system;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::optional<dyn::FhnTopology> fhn;

  train::TrainConfig train_cfg;

  double dt = 1e-3;
  double horizon = 20.0;
  int n_traj = 10;
  int workers = 0;
  bool projection = true;
  std::optional<dyn::Box> x0_box;
  std::optional<std::vector<double>> x0_fixed;

  int n_points = 10000;
  double tau = 1e-12;

  // kernel controller settings ("models.controller" == "kernel")
  std::string kernel_sources;  // trajectory CSV path or "sample:N"
  double kernel_bandwidth = 1e-3;
  double kernel_flow_horizon = 20.0;

  std::string controller_src = "zero";
  std::string potential_src = "quadratic";
  std::string classk_src = "linear";

  std::string out_dir;
  std::string digest;
  std::string raw;
};

std::vector<double> to_doubles(const json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError("field '" + field + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& v : j) out.push_back(v.get<double>());
  return out;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();

  RunConfig cfg;
  cfg.raw = buf.str();
  cfg.digest = config_digest(cfg.raw);

  json j;
  try {
    j = json::parse(cfg.raw);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, {"system", "seed", "fhn", "nets", "train", "simulate", "project_check", "models",
                 "kernel", "out_dir"},
             "config root");

  if (!j.contains("system")) throw ConfigError("missing required field 'system'");
  cfg.system = j.at("system").get<std::string>();
  const auto names = dyn::system_names();
  if (std::find(names.begin(), names.end(), cfg.system) == names.end()) {
    std::ostringstream ss;
    ss << "unknown system '" << cfg.system << "' in field 'system' (valid:";
    for (const auto& n : names) ss << ' ' << n;
    ss << ")";
    throw ConfigError(ss.str());
  }

  if (j.contains("seed")) {
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.has_seed = true;
  }
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();

  if (j.contains("fhn")) {
    const json& f = j.at("fhn");
    check_keys(f, {"n", "ring_degree", "rewire_prob", "topology_seed"}, "fhn");
    dyn::FhnTopology topo;
    topo.n = f.value("n", topo.n);
    topo.ring_degree = f.value("ring_degree", topo.ring_degree);
    topo.rewire_prob = f.value("rewire_prob", topo.rewire_prob);
    topo.seed = f.value("topology_seed", topo.seed);
    cfg.fhn = topo;
  }

  cfg.train_cfg = train::default_train_config(cfg.system);
  if (j.contains("nets")) {
    const json& n = j.at("nets");
    check_keys(n,
               {"controller_widths", "icnn_widths", "classk_widths", "activation", "mask",
                "epsilon", "p", "quadrature_nodes", "srelu_knee"},
               "nets");
    auto& spec = cfg.train_cfg.nets;
    if (n.contains("controller_widths")) spec.controller_widths = n.at("controller_widths").get<std::vector<int>>();
    if (n.contains("icnn_widths")) spec.icnn_widths = n.at("icnn_widths").get<std::vector<int>>();
    if (n.contains("classk_widths")) spec.classk_widths = n.at("classk_widths").get<std::vector<int>>();
    if (n.contains("activation")) spec.activation = nets::activation_from_name(n.at("activation").get<std::string>());
    if (n.contains("mask")) spec.mask = n.at("mask").get<std::vector<std::uint8_t>>();
    if (n.contains("epsilon")) spec.epsilon = n.at("epsilon").get<double>();
    if (n.contains("p")) spec.floor_exponent = n.at("p").get<double>();
    if (n.contains("quadrature_nodes")) spec.quadrature_nodes = n.at("quadrature_nodes").get<int>();
    if (n.contains("srelu_knee")) spec.srelu_knee = n.at("srelu_knee").get<double>();
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, {"batch", "iters", "lr", "lambda1", "lambda2", "c", "trace_mode"}, "train");
    cfg.train_cfg.batch = t.value("batch", cfg.train_cfg.batch);
    cfg.train_cfg.iters = t.value("iters", cfg.train_cfg.iters);
    cfg.train_cfg.lr = t.value("lr", cfg.train_cfg.lr);
    cfg.train_cfg.lambda1 = t.value("lambda1", cfg.train_cfg.lambda1);
    cfg.train_cfg.lambda2 = t.value("lambda2", cfg.train_cfg.lambda2);
    cfg.train_cfg.c = t.value("c", cfg.train_cfg.c);
    if (t.contains("trace_mode")) cfg.train_cfg.trace = gen::TraceMode::parse(t.at("trace_mode").get<std::string>());
  }
  if (j.contains("simulate")) {
    const json& s = j.at("simulate");
    check_keys(s, {"dt", "T", "n_traj", "x0", "workers", "projection"}, "simulate");
    cfg.dt = s.value("dt", cfg.dt);
    cfg.horizon = s.value("T", cfg.horizon);
    cfg.n_traj = s.value("n_traj", cfg.n_traj);
    cfg.workers = s.value("workers", cfg.workers);
    cfg.projection = s.value("projection", cfg.projection);
    if (s.contains("x0")) {
      const json& x0 = s.at("x0");
      check_keys(x0, {"type", "lo", "hi", "value"}, "simulate.x0");
      const std::string type = x0.value("type", "box");
      if (type == "box") {
        dyn::Box box;
        box.lo = to_doubles(x0.at("lo"), "simulate.x0.lo");
        box.hi = to_doubles(x0.at("hi"), "simulate.x0.hi");
        cfg.x0_box = std::move(box);
      } else if (type == "fixed") {
        cfg.x0_fixed = to_doubles(x0.at("value"), "simulate.x0.value");
      } else {
        throw ConfigError("field 'simulate.x0.type' must be 'box' or 'fixed'");
      }
    }
  }
  if (j.contains("project_check")) {
    const json& p = j.at("project_check");
    check_keys(p, {"n_points", "tau"}, "project_check");
    cfg.n_points = p.value("n_points", cfg.n_points);
    cfg.tau = p.value("tau", cfg.tau);
  }
  if (j.contains("kernel")) {
    const json& k = j.at("kernel");
    check_keys(k, {"sources", "bandwidth", "flow_horizon"}, "kernel");
    cfg.kernel_sources = k.value("sources", cfg.kernel_sources);
    cfg.kernel_bandwidth = k.value("bandwidth", cfg.kernel_bandwidth);
    cfg.kernel_flow_horizon = k.value("flow_horizon", cfg.kernel_flow_horizon);
  }
  if (j.contains("models")) {
    const json& m = j.at("models");
    check_keys(m, {"controller", "potential", "classk"}, "models");
    cfg.controller_src = m.value("controller", cfg.controller_src);
    cfg.potential_src = m.value("potential", cfg.potential_src);
    cfg.classk_src = m.value("classk", cfg.classk_src);
  }
  cfg.train_cfg.system = cfg.system;
  return cfg;
}

std::string resolve_out_dir(const CommandOptions& opts, const RunConfig& cfg) {
  if (!opts.out_dir.empty()) return opts.out_dir;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  if (const char* env = std::getenv("FESSNC_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return "fessnc_out";
}

void apply_overrides(RunConfig& cfg, const CommandOptions& opts) {
  if (opts.seed_override) {
    cfg.seed = *opts.seed_override;
    cfg.has_seed = true;
  }
  if (opts.workers > 0) cfg.workers = opts.workers;
  cfg.train_cfg.seed = cfg.seed;
}

void require_seed(const RunConfig& cfg) {
  if (!cfg.has_seed) throw ConfigError("missing required field 'seed'");
}

void write_file(const fs::path& path, const std::string& payload) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << payload;
}

// ---- model resolution ------------------------------------------------------

struct ResolvedModels {
  gen::StateMap controller_map;
  proj::ControlFn controller_fn;
  std::shared_ptr<const ad::Field> potential;
  proj::ScalarMap alpha;
  std::optional<nets::ControllerNet> controller_net;
};

std::shared_ptr<const ad::Field> quadratic_potential(int d) {
  return ad::make_field(d, [](auto xs) {
    using S = std::remove_cvref_t<decltype(xs[0])>;
    S acc = S(0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) acc = acc + xs[i] * xs[i];
    return 0.5 * acc;
  });
}

ResolvedModels resolve_models(const RunConfig& cfg, const dyn::SystemBundle& bundle) {
  ResolvedModels out;
  const int d = bundle.model.d;

  if (cfg.controller_src == "zero") {
    out.controller_map = gen::zero_control();
  } else if (cfg.controller_src == "kernel") {
    std::vector<std::vector<double>> sources;
    if (cfg.kernel_sources.rfind("sample:", 0) == 0) {
      const int n = std::stoi(cfg.kernel_sources.substr(7));
      Rng rng = substream(cfg.seed, 0x6B65726EULL);
      for (int i = 0; i < n; ++i) sources.push_back(bundle.safe.sampler(rng));
    } else if (!cfg.kernel_sources.empty()) {
      sources = kernel::states_from_trajectory_csv(nets::load_text_file(cfg.kernel_sources));
    } else {
      throw ConfigError("models.controller is 'kernel' but 'kernel.sources' is missing");
    }
    if (!sources.empty() && static_cast<int>(sources.front().size()) != d) {
      throw ModelError("kernel sample dimension does not match system");
    }
    std::vector<std::vector<double>> targets(sources.size(),
                                             std::vector<double>(static_cast<std::size_t>(d), 0.0));
    auto drift = [model = bundle.model](std::span<const double> x, std::span<double> f) {
      model.drift(x, f);
    };
    kernel::KernelController kc(std::move(sources), std::move(targets), cfg.kernel_bandwidth,
                                drift, cfg.kernel_flow_horizon);
    out.controller_fn = kc.as_control_fn();
    out.controller_map = [fn = out.controller_fn](std::span<const double> x, std::span<double> u) {
      fn(x, 0.0, u);
    };
    if (cfg.potential_src == "quadratic") {
      // nothing extra; resolved below
    }
  } else if (cfg.controller_src == "random") {
    Rng rng = substream(cfg.seed, 0xC0117011ULL);
    auto spec = cfg.train_cfg.nets;
    if (spec.controller_widths.empty()) spec = train::default_net_spec(cfg.system);
    nets::ControllerNet net =
        nets::ControllerNet::random_init(spec.controller_widths, spec.activation, spec.mask, rng);
    net.normalize_in_place(50);
    out.controller_net = net;
  } else {
    nets::ControllerNet net = nets::controller_from_json(nets::load_text_file(cfg.controller_src));
    if (net.dim() != d) throw ModelError("controller model dimension does not match system");
    out.controller_net = std::move(net);
  }
  if (out.controller_net) {
    const nets::ControllerNet& net = *out.controller_net;
    out.controller_map = [net](std::span<const double> x, std::span<double> u) {
      const std::vector<double> v = net(x);
      std::copy(v.begin(), v.end(), u.begin());
    };
  }
  if (!out.controller_fn) out.controller_fn = proj::lift_state_map(out.controller_map);

  if (cfg.potential_src == "quadratic") {
    out.potential = quadratic_potential(d);
  } else if (cfg.potential_src == "from_barrier") {
    out.potential = proj::potential_from_barrier(bundle.safe);
  } else {
    nets::IcnnPotential pot = nets::potential_from_json(nets::load_text_file(cfg.potential_src));
    if (pot.dim() != d) throw ModelError("potential model dimension does not match system");
    out.potential = pot.as_field();
  }

  if (cfg.classk_src == "linear") {
    out.alpha = proj::linear_class_k(1.0);
  } else if (cfg.classk_src.rfind("linear:", 0) == 0) {
    out.alpha = proj::linear_class_k(std::stod(cfg.classk_src.substr(7)));
  } else {
    nets::ClassKNet net = nets::classk_from_json(nets::load_text_file(cfg.classk_src));
    out.alpha = [net](double s) { return net.value_extended(s); };
  }
  return out;
}

sim::InitialStateFn initial_state_fn(const RunConfig& cfg, const dyn::SystemBundle& bundle) {
  if (cfg.x0_fixed) {
    if (static_cast<int>(cfg.x0_fixed->size()) != bundle.model.d) {
      throw ConfigError("field 'simulate.x0.value' has the wrong dimension");
    }
    auto fixed = *cfg.x0_fixed;
    return [fixed](Rng&) { return fixed; };
  }
  const dyn::Box box = cfg.x0_box.value_or(bundle.x0_box);
  if (box.dim() != bundle.model.d) throw ConfigError("field 'simulate.x0' has the wrong dimension");
  return [box](Rng& rng) { return box.sample(rng); };
}

int config_failure(const std::exception& e) {
  std::cerr << "config error: " << e.what() << "\n";
  return kExitConfig;
}

}  // namespace

// ---- train ------------------------------------------------------------------

int cmd_train(const CommandOptions& opts) {
  RunConfig cfg;
  try {
    cfg = parse_run_config(opts.config_path);
    apply_overrides(cfg, opts);
    require_seed(cfg);
    cfg.train_cfg.validate();
  } catch (const std::exception& e) {
    return config_failure(e);
  }

  const fs::path out = resolve_out_dir(opts, cfg);
  fs::create_directories(out);
  const dyn::SystemBundle bundle = dyn::make_system(cfg.system, cfg.fhn);

  train::TrainResult result;
  try {
    result = train::train(bundle, cfg.train_cfg);
  } catch (const train::TrainingDiverged& e) {
    std::cerr << "training error: " << e.what();
    if (!e.point.empty()) {
      std::cerr << " at point (";
      for (std::size_t i = 0; i < e.point.size(); ++i) std::cerr << (i ? ", " : "") << e.point[i];
      std::cerr << ")";
    }
    std::cerr << "\n";
    return kExitNonFiniteLoss;
  }

  // Tight final bound before serialization.
  result.controller.normalize_in_place(50);

  auto with_digest = [&cfg](std::string payload) {
    json j = json::parse(payload);
    j["config_digest"] = cfg.digest;
    return j.dump(2);
  };
  nets::save_json_file((out / "controller.json").string(), with_digest(nets::to_json(result.controller)));
  nets::save_json_file((out / "potential.json").string(), with_digest(nets::to_json(result.potential)));
  nets::save_json_file((out / "classk.json").string(), with_digest(nets::to_json(result.classk)));

  std::ostringstream hist;
  hist << "# config_digest=" << cfg.digest << "\n";
  hist << "iteration,loss_es,loss_sf,total\n";
  hist.precision(17);
  for (const auto& row : result.history) {
    hist << row.iteration << ',' << row.loss_es << ',' << row.loss_sf << ',' << row.total << "\n";
  }
  write_file(out / "history.csv", hist.str());
  write_file(out / "config_digest.txt", cfg.digest + "\n");
  write_file(out / "run_config.json", cfg.raw);

  if (!opts.quiet) {
    std::cout << "trained " << cfg.system << " for " << result.history.size()
              << " iterations; models in " << out.string() << "\n";
  }
  return kExitOk;
}

// ---- project-check ------------------------------------------------------------

int cmd_project_check(const CommandOptions& opts) {
  RunConfig cfg;
  try {
    cfg = parse_run_config(opts.config_path);
    apply_overrides(cfg, opts);
  } catch (const std::exception& e) {
    return config_failure(e);
  }

  const fs::path out = resolve_out_dir(opts, cfg);
  fs::create_directories(out);
  const dyn::SystemBundle bundle = dyn::make_system(cfg.system, cfg.fhn);

  ResolvedModels models;
  try {
    models = resolve_models(cfg, bundle);
  } catch (const ConfigError& e) {
    return config_failure(e);
  } catch (const std::exception& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return kExitModelMismatch;
  }

  proj::ProjectedController controller(models.controller_fn, models.potential, bundle.safe,
                                       models.alpha, cfg.train_cfg.c, bundle.model, cfg.tau);

  Rng rng = substream(cfg.seed, 0x9C0FFEEULL);
  std::ostringstream csv;
  csv << "# config_digest=" << cfg.digest << "\n";
  const int d = bundle.model.d;
  for (int i = 1; i <= d; ++i) csv << 'x' << i << ',';
  csv << proj::PointDiagnostics::csv_header() << "\n";
  csv.precision(17);

  double max_stability_after = -std::numeric_limits<double>::infinity();
  double max_safety_violation_after = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < cfg.n_points; ++i) {
    const std::vector<double> x = bundle.safe.sampler(rng);
    proj::PointDiagnostics diag = controller.evaluate(x, 0.0);
    for (double xi : x) csv << xi << ',';
    csv << diag.csv_row() << "\n";
    max_stability_after = std::max(max_stability_after, diag.residual_stability_after);
    max_safety_violation_after = std::max(max_safety_violation_after, -diag.residual_safety_after);
  }
  write_file(out / "projection_diagnostics.csv", csv.str());

  std::cout << "project-check " << cfg.system << ": n=" << cfg.n_points
            << " max_stability_residual_after=" << max_stability_after
            << " max_safety_violation_after=" << max_safety_violation_after << "\n";
  return kExitOk;
}

// ---- simulate -------------------------------------------------------------------

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

int cmd_simulate(const CommandOptions& opts) {
  RunConfig cfg;
  try {
    cfg = parse_run_config(opts.config_path);
    apply_overrides(cfg, opts);
    require_seed(cfg);
  } catch (const std::exception& e) {
    return config_failure(e);
  }

  const fs::path out = resolve_out_dir(opts, cfg);
  fs::create_directories(out);
  const dyn::SystemBundle bundle = dyn::make_system(cfg.system, cfg.fhn);

  ResolvedModels models;
  try {
    models = resolve_models(cfg, bundle);
  } catch (const ConfigError& e) {
    return config_failure(e);
  } catch (const std::exception& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return kExitModelMismatch;
  }

  proj::ControlFn control = models.controller_fn;
  if (cfg.projection) {
    proj::ProjectedController projected(models.controller_fn, models.potential, bundle.safe,
                                        models.alpha, cfg.train_cfg.c, bundle.model, cfg.tau);
    control = projected.as_control_fn();
  }

  sim::InitialStateFn x0;
  try {
    x0 = initial_state_fn(cfg, bundle);
  } catch (const std::exception& e) {
    return config_failure(e);
  }

  const std::vector<sim::Trajectory> rollouts = sim::batch_rollout(
      bundle.model, control, x0, cfg.n_traj, cfg.dt, cfg.horizon, cfg.seed, cfg.workers);

  json metrics;
  metrics["system"] = cfg.system;
  metrics["seed"] = cfg.seed;
  metrics["config_digest"] = cfg.digest;
  metrics["n_traj"] = cfg.n_traj;
  metrics["dt"] = cfg.dt;
  metrics["T"] = cfg.horizon;
  if (bundle.topology) {
    metrics["topology"] = {{"n", bundle.topology->n},
                           {"ring_degree", bundle.topology->ring_degree},
                           {"rewire_prob", bundle.topology->rewire_prob},
                           {"topology_seed", bundle.topology->seed}};
  }

  int diverged = 0;
  std::vector<double> safety, energy, slopes;
  int successes = 0;
  json per_traj = json::array();
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    const sim::Trajectory& traj = rollouts[i];
    std::ostringstream name;
    name << "traj_" << i << ".csv";
    write_file(out / name.str(), "# config_digest=" + cfg.digest + "\n" + sim::trajectory_csv(traj));

    sim::MetricsReport rep = sim::compute_metrics(traj, bundle.safe, bundle.success);
    diverged += rep.diverged ? 1 : 0;
    successes += rep.success ? 1 : 0;
    safety.push_back(rep.safety_rate);
    energy.push_back(rep.control_energy);
    slopes.push_back(rep.lyapunov_slope);
    per_traj.push_back({{"safety_rate", rep.safety_rate},
                        {"success", rep.success},
                        {"control_energy", rep.control_energy},
                        {"lyapunov_slope", rep.lyapunov_slope},
                        {"min_target_distance", rep.min_target_distance},
                        {"diverged", rep.diverged}});
  }
  metrics["trajectories"] = per_traj;
  if (!rollouts.empty()) {
    metrics["safety_rate_mean"] =
        std::accumulate(safety.begin(), safety.end(), 0.0) / static_cast<double>(safety.size());
    metrics["safety_rate_min"] = *std::min_element(safety.begin(), safety.end());
    metrics["success_rate"] = static_cast<double>(successes) / static_cast<double>(rollouts.size());
    metrics["control_energy_median"] = median(energy);
    metrics["lyapunov_slope_median"] = median(slopes);
    metrics["diverged_count"] = diverged;
  }
  write_file(out / "metrics.json", metrics.dump(2) + "\n");

  if (!rollouts.empty() && diverged * 2 > static_cast<int>(rollouts.size())) {
    std::cerr << "simulate: " << diverged << "/" << rollouts.size()
              << " rollouts diverged; partial outputs kept in " << out.string() << "\n";
    return kExitDivergence;
  }
  if (!opts.quiet) {
    std::cout << "simulate " << cfg.system << ": " << rollouts.size() << " rollouts, metrics in "
              << (out / "metrics.json").string() << "\n";
  }
  return kExitOk;
}

// ---- bench ----------------------------------------------------------------------

int cmd_bench(const std::string& system, const CommandOptions& opts) {
  const auto names = dyn::system_names();
  if (std::find(names.begin(), names.end(), system) == names.end()) {
    std::cerr << "config error: unknown system '" << system << "' (valid:";
    for (const auto& n : names) std::cerr << ' ' << n;
    std::cerr << ")\n";
    return kExitConfig;
  }

  const fs::path out = opts.out_dir.empty() ? fs::path("fessnc_out") / ("bench_" + system)
                                            : fs::path(opts.out_dir);
  fs::create_directories(out);

  // Appendix defaults, expressed as a config document and re-consumed through
  // the standard pipeline.
  json j;
  j["system"] = system;
  j["seed"] = opts.seed_override.value_or(0);
  json simj;
  simj["dt"] = 1e-3;
  simj["T"] = 20.0;
  simj["n_traj"] = 10;
  if (opts.workers > 0) simj["workers"] = opts.workers;
  j["simulate"] = simj;
  j["project_check"] = {{"n_points", 2000}};
  j["models"] = {{"controller", (out / "controller.json").string()},
                 {"potential", (out / "potential.json").string()},
                 {"classk", (out / "classk.json").string()}};

  const fs::path config_path = out / "bench_config.json";
  write_file(config_path, j.dump(2) + "\n");

  CommandOptions sub = opts;
  sub.config_path = config_path.string();
  sub.out_dir = out.string();
  sub.quiet = true;

  if (int rc = cmd_train(sub); rc != kExitOk) return rc;
  if (int rc = cmd_project_check(sub); rc != kExitOk) return rc;
  if (int rc = cmd_simulate(sub); rc != kExitOk) return rc;

  std::ifstream metrics_in(out / "metrics.json");
  json metrics = json::parse(metrics_in);
  std::cout << "metric,value\n";
  std::cout << "success_rate," << metrics.value("success_rate", 0.0) << "\n";
  std::cout << "safety_rate_mean," << metrics.value("safety_rate_mean", 0.0) << "\n";
  std::cout << "control_energy_median," << metrics.value("control_energy_median", 0.0) << "\n";
  std::cout << "lyapunov_slope_median," << metrics.value("lyapunov_slope_median", 0.0) << "\n";
  return kExitOk;
}

}  // namespace fessnc::cli
