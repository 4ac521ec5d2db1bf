#include "fessnc/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fessnc::train {

NetSpec default_net_spec(const std::string& system) {
  NetSpec spec;
  if (system == "gbm") {
    spec.controller_widths = {1, 8, 8, 1};
    spec.icnn_widths = {1, 8, 8, 1};
  } else if (system == "double_pendulum" || system == "bicycle") {
    spec.controller_widths = {4, 12, 12, 4};
    spec.icnn_widths = {4, 12, 12, 1};
  } else if (system == "three_link") {
    spec.controller_widths = {6, 18, 18, 6};
    spec.icnn_widths = {6, 12, 12, 1};
    spec.mask = {0, 0, 0, 1, 1, 1};  // control acts on the velocity rows only
  } else if (system == "fhn") {
    spec.controller_widths = {100, 200, 200, 100};
    spec.icnn_widths = {100, 100, 100, 1};
  } else {
    throw std::invalid_argument("default_net_spec: unknown system " + system);
  }
  return spec;
}

TrainConfig default_train_config(const std::string& system) {
  TrainConfig cfg;
  cfg.system = system;
  cfg.nets = default_net_spec(system);
  if (system == "gbm") {
    cfg.batch = 200;
    cfg.iters = 300;
    cfg.lr = 0.1;
    cfg.c = -0.5;
  } else if (system == "double_pendulum") {
    cfg.batch = 500;
    cfg.iters = 300;
    cfg.lr = 0.1;
    cfg.c = -0.1;
  } else if (system == "bicycle") {
    cfg.batch = 500;
    cfg.iters = 500;
    cfg.lr = 0.05;
    cfg.c = -0.5;
  } else if (system == "three_link") {
    cfg.batch = 500;
    cfg.iters = 300;
    cfg.lr = 0.1;
    cfg.c = -0.1;
  } else if (system == "fhn") {
    cfg.batch = 32;
    cfg.iters = 300;
    cfg.lr = 0.1;
    cfg.c = -0.1;
  }
  return cfg;
}

void TrainConfig::validate() const {
  if (lambda1 <= 0.0 || lambda2 <= 0.0) throw std::invalid_argument("TrainConfig: lambda1, lambda2 must be positive");
  if (c >= 0.0) throw std::invalid_argument("TrainConfig: stability rate c must be negative");
  if (nets.epsilon <= 0.0) throw std::invalid_argument("TrainConfig: epsilon must be positive");
  if (batch < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
  if (iters < 0) throw std::invalid_argument("TrainConfig: iteration count must be >= 0");
  if (lr <= 0.0) throw std::invalid_argument("TrainConfig: learning rate must be positive");
}

std::vector<std::vector<double>> sample_safe_region(const dyn::SystemBundle& bundle, int n, Rng& rng) {
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(std::max(0, n)));
  for (int i = 0; i < n; ++i) out.push_back(bundle.safe.sampler(rng));
  return out;
}

std::vector<std::vector<double>> sample_safe_region(const std::string& system, int n, Rng& rng) {
  const dyn::SystemBundle bundle = dyn::make_system(system);
  return sample_safe_region(bundle, n, rng);
}

namespace {

Eigen::MatrixXd resolve_control_weight(const Eigen::MatrixXd& weight, int d) {
  if (weight.size() == 0) return Eigen::MatrixXd::Identity(d, d);
  if (weight.rows() != d || weight.cols() != d) {
    throw std::invalid_argument("control weight matrix R must be d x d");
  }
  return weight;
}

double quadratic_form(const Eigen::MatrixXd& r, std::span<const double> u) {
  double acc = 0.0;
  for (int i = 0; i < r.rows(); ++i) {
    for (int j = 0; j < r.cols(); ++j) acc += u[static_cast<std::size_t>(i)] * r(i, j) * u[static_cast<std::size_t>(j)];
  }
  return acc;
}

}  // namespace

double stability_loss(const std::vector<std::vector<double>>& batch, const gen::StateMap& u,
                      const ad::Field& potential, double c, const Eigen::MatrixXd& control_weight,
                      double lambda1, const gen::TraceMode& mode, const dyn::SdeModel& model,
                      Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("stability_loss: batch must be nonempty");
  const Eigen::MatrixXd r = resolve_control_weight(control_weight, model.d);
  double acc = 0.0;
  std::vector<double> uv(static_cast<std::size_t>(model.d));
  for (const auto& x : batch) {
    gen::GeneratorEval ev = gen::evaluate_generator(model, u, potential, x, mode, &rng);
    u(x, uv);
    acc += quadratic_form(r, uv) + lambda1 * std::max(0.0, ev.lie - c * ev.field_value);
  }
  return acc / static_cast<double>(batch.size());
}

double safety_loss(const std::vector<std::vector<double>>& batch, const gen::StateMap& u,
                   const dyn::SafeRegionSpec& region, const proj::ScalarMap& alpha,
                   const Eigen::MatrixXd& control_weight, double lambda2,
                   const gen::TraceMode& mode, const dyn::SdeModel& model, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("safety_loss: batch must be nonempty");
  const Eigen::MatrixXd r = resolve_control_weight(control_weight, model.d);
  double acc = 0.0;
  std::vector<double> uv(static_cast<std::size_t>(model.d));
  for (const auto& x : batch) {
    gen::GeneratorEval ev =
        gen::evaluate_generator(model, u, *region.smooth_barrier, x, mode, &rng);
    u(x, uv);
    acc += quadratic_form(r, uv) + lambda2 * std::max(0.0, -ev.lie - alpha(ev.field_value));
  }
  return acc / static_cast<double>(batch.size());
}

void AdamOptimizer::step(std::vector<double>& params, std::span<const double> grad) {
  if (m_.empty()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
  }
}

std::vector<double> pack_params(const nets::ControllerNet& c, const nets::IcnnPotential& v,
                                const nets::ClassKNet& k) {
  std::vector<double> theta;
  theta.reserve(c.params().size() + v.params().size() + k.params().size());
  theta.insert(theta.end(), c.params().begin(), c.params().end());
  theta.insert(theta.end(), v.params().begin(), v.params().end());
  theta.insert(theta.end(), k.params().begin(), k.params().end());
  return theta;
}

void unpack_params(std::span<const double> theta, nets::ControllerNet& c, nets::IcnnPotential& v,
                   nets::ClassKNet& k) {
  const std::size_t nc = c.params().size(), nv = v.params().size(), nk = k.params().size();
  if (theta.size() != nc + nv + nk) throw std::invalid_argument("unpack_params: size mismatch");
  std::copy(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(nc), c.params().begin());
  std::copy(theta.begin() + static_cast<std::ptrdiff_t>(nc),
            theta.begin() + static_cast<std::ptrdiff_t>(nc + nv), v.params().begin());
  std::copy(theta.begin() + static_cast<std::ptrdiff_t>(nc + nv), theta.end(), k.params().begin());
}

TapedLoss taped_batch_loss(ad::Tape& tape, std::span<const ad::Var> theta,
                           const std::vector<std::vector<double>>& batch,
                           const dyn::SystemBundle& bundle, const nets::ControllerNet& controller,
                           const nets::IcnnPotential& potential, const nets::ClassKNet& classk,
                           const TrainConfig& config, Rng& rng) {
  (void)tape;
  if (batch.empty()) throw std::invalid_argument("taped_batch_loss: batch must be nonempty");
  const dyn::SdeModel& model = bundle.model;
  const Eigen::MatrixXd r = resolve_control_weight(config.control_weight, model.d);
  const gen::TraceMode mode = config.trace.value_or(gen::training_trace_mode(model.r));

  const std::size_t nc = controller.params().size();
  const std::size_t nv = potential.params().size();
  const std::size_t nk = classk.params().size();
  std::span<const ad::Var> ctrl_params = theta.subspan(0, nc);
  std::span<const ad::Var> pot_params = theta.subspan(nc, nv);
  std::span<const ad::Var> k_params = theta.subspan(nc + nv, nk);

  const auto pot_field = potential.as_field(pot_params);

  ad::Var les(0.0), lsf(0.0);
  std::vector<ad::Var> xs, ux;
  std::vector<double> f_x(static_cast<std::size_t>(model.d));
  for (std::size_t pi = 0; pi < batch.size(); ++pi) {
    const auto& x = batch[pi];
    xs.assign(x.begin(), x.end());  // constants on the tape
    controller.eval_with<ad::Var>(ctrl_params, std::span<const ad::Var>(xs), ux);

    ad::Var quad(0.0);
    for (int i = 0; i < model.d; ++i) {
      for (int j = 0; j < model.d; ++j) {
        const double rij = r(i, j);
        if (rij != 0.0) quad += ux[static_cast<std::size_t>(i)] * (rij * ux[static_cast<std::size_t>(j)]);
      }
    }

    model.drift(x, f_x);
    const Eigen::MatrixXd g_x = model.diffusion_at(x);

    gen::GeneratorTerms<ad::Var> lv = gen::generator_point<ad::Var>(
        *pot_field, x, f_x, std::span<const ad::Var>(ux), g_x, mode, &rng);
    ad::Var es_term = quad + config.lambda1 * ad::relu(lv.lie - config.c * lv.field_value);

    gen::GeneratorTerms<ad::Var> lh = gen::generator_point<ad::Var>(
        *bundle.safe.smooth_barrier, x, f_x, std::span<const ad::Var>(ux), g_x, mode, &rng);
    ad::Var alpha_h =
        classk.eval_extended_with<ad::Var>(k_params, ad::Var(ad::value_of(lh.field_value)));
    ad::Var sf_term = quad + config.lambda2 * ad::relu(-lh.lie - alpha_h);

    if (!std::isfinite(ad::value_of(es_term)) || !std::isfinite(ad::value_of(sf_term))) {
      std::ostringstream ss;
      ss << "non-finite loss contribution at batch point " << pi;
      throw TrainingDiverged(-1, static_cast<int>(pi), x, ss.str());
    }
    les += es_term;
    lsf += sf_term;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  TapedLoss out{les * inv, lsf * inv, ad::Var(0.0)};
  out.total = out.loss_es + out.loss_sf;
  return out;
}

TrainResult train(const dyn::SystemBundle& bundle, const TrainConfig& config) {
  config.validate();
  const dyn::SdeModel& model = bundle.model;
  NetSpec spec = config.nets;
  if (spec.controller_widths.empty()) spec = default_net_spec(config.system);

  Rng init_rng = substream(config.seed, 0x1717u);
  nets::ControllerNet controller = nets::ControllerNet::random_init(
      spec.controller_widths, spec.activation, spec.mask, init_rng);
  nets::IcnnPotential potential = nets::IcnnPotential::random_init(
      spec.icnn_widths, spec.epsilon, spec.floor_exponent, init_rng, spec.srelu_knee);
  nets::ClassKNet classk = nets::ClassKNet::random_init(spec.classk_widths, init_rng,
                                                        spec.quadrature_nodes);
  if (controller.dim() != model.d || potential.dim() != model.d) {
    throw std::invalid_argument("train: net widths do not match the system dimension");
  }
  controller.normalize_in_place(50);  // start from a bounded-Lipschitz init

  std::vector<double> theta = pack_params(controller, potential, classk);
  AdamOptimizer adam(config.lr);
  std::vector<HistoryRow> history;
  history.reserve(static_cast<std::size_t>(config.iters));

  Rng batch_rng = substream(config.seed, 0xBA7C4u);
  Rng trace_rng = substream(config.seed, 0x7124CEu);

  ad::Tape tape;  // reused arena; clearing keeps the capacity across iterations
  for (int it = 0; it < config.iters; ++it) {
    const auto batch = sample_safe_region(bundle, config.batch, batch_rng);

    tape.clear();
    std::vector<ad::Var> th(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) th[i] = tape.leaf(theta[i]);

    TapedLoss loss;
    try {
      loss = taped_batch_loss(tape, th, batch, bundle, controller, potential, classk, config,
                              trace_rng);
    } catch (TrainingDiverged& e) {
      throw TrainingDiverged(it, e.point_index, e.point,
                             "training diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    if (!std::isfinite(ad::value_of(loss.total))) {
      throw TrainingDiverged(it, -1, {}, "training diverged at iteration " + std::to_string(it));
    }

    const std::vector<double> grad = tape.gradient(loss.total, th);
    adam.step(theta, grad);
    unpack_params(theta, controller, potential, classk);
    potential.clamp_convexity_weights();
    controller.normalize_in_place(config.sn_iterations);
    theta = pack_params(controller, potential, classk);

    history.push_back(HistoryRow{it, ad::value_of(loss.loss_es), ad::value_of(loss.loss_sf),
                                 ad::value_of(loss.total)});
  }

  return TrainResult{std::move(controller), std::move(potential), std::move(classk),
                     std::move(history)};
}

}  // namespace fessnc::train
