#include "fessnc/nets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fessnc::nets {

using nlohmann::json;

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kSoftplusLike:
      return "softplus";
  }
  return "tanh";
}

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "softplus") return Activation::kSoftplusLike;
  throw std::invalid_argument("unknown activation: " + name);
}

namespace {

void check_finite(std::span<const double> x, const char* who) {
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(who) + ": non-finite input");
  }
}

// Deterministic unit vector for power-iteration warm starts.
std::vector<double> seeded_unit(std::size_t n, std::uint64_t tag) {
  std::vector<double> v(n);
  double norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t r = splitmix64(tag * 0x9E37u + i + 1);
    v[i] = static_cast<double>(r >> 11) / static_cast<double>(1ULL << 53) - 0.5;
    norm += v[i] * v[i];
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= (norm > 0 ? norm : 1.0);
  return v;
}

double gauss_init(Rng& rng, double scale) { return gaussian(rng) * scale; }

}  // namespace

// ---- ControllerNet -----------------------------------------------------------

ControllerNet::ControllerNet(std::vector<int> widths, Activation act, std::vector<std::uint8_t> mask)
    : widths_(std::move(widths)), act_(act), mask_(std::move(mask)) {
  if (widths_.size() < 2) throw std::invalid_argument("ControllerNet: need at least one layer");
  if (widths_.front() != widths_.back()) {
    throw std::invalid_argument("ControllerNet: input and output widths must both equal d");
  }
  if (mask_.empty()) mask_.assign(static_cast<std::size_t>(widths_.front()), 1);
  if (static_cast<int>(mask_.size()) != widths_.front()) {
    throw std::invalid_argument("ControllerNet: mask length must equal d");
  }
  build_offsets();
}

void ControllerNet::build_offsets() {
  const int layers = layer_count();
  std::size_t off = 0;
  w_off_.resize(static_cast<std::size_t>(layers));
  b_off_.resize(static_cast<std::size_t>(layers));
  pu_.resize(static_cast<std::size_t>(layers));
  pv_.resize(static_cast<std::size_t>(layers));
  sigma_.assign(static_cast<std::size_t>(layers), 0.0);
  for (int l = 0; l < layers; ++l) {
    const int rows = widths_[static_cast<std::size_t>(l) + 1];
    const int cols = widths_[static_cast<std::size_t>(l)];
    w_off_[static_cast<std::size_t>(l)] = off;
    off += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    b_off_[static_cast<std::size_t>(l)] = off;
    if (layer_has_bias(l)) off += static_cast<std::size_t>(rows);
    pu_[static_cast<std::size_t>(l)] = seeded_unit(static_cast<std::size_t>(rows), 11u + static_cast<std::uint64_t>(l));
    pv_[static_cast<std::size_t>(l)] = seeded_unit(static_cast<std::size_t>(cols), 29u + static_cast<std::uint64_t>(l));
  }
  params_.assign(off, 0.0);
}

ControllerNet ControllerNet::random_init(std::vector<int> widths, Activation act,
                                         std::vector<std::uint8_t> mask, Rng& rng) {
  ControllerNet net(std::move(widths), act, std::move(mask));
  const int layers = net.layer_count();
  for (int l = 0; l < layers; ++l) {
    const int rows = net.widths_[static_cast<std::size_t>(l) + 1];
    const int cols = net.widths_[static_cast<std::size_t>(l)];
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (int i = 0; i < rows * cols; ++i) {
      net.params_[net.w_off_[static_cast<std::size_t>(l)] + static_cast<std::size_t>(i)] = gauss_init(rng, scale);
    }
  }
  return net;
}

std::vector<double> ControllerNet::operator()(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != dim()) throw std::invalid_argument("ControllerNet: dimension mismatch");
  check_finite(x, "ControllerNet");
  std::vector<double> out;
  eval_with<double>(std::span<const double>(params_), x, out);
  return out;
}

double ControllerNet::estimate_sigma(int layer, int iterations) {
  const int rows = widths_[static_cast<std::size_t>(layer) + 1];
  const int cols = widths_[static_cast<std::size_t>(layer)];
  const double* w = params_.data() + weight_offset(layer);
  auto& u = pu_[static_cast<std::size_t>(layer)];
  auto& v = pv_[static_cast<std::size_t>(layer)];
  for (int it = 0; it < iterations; ++it) {
    // u <- normalize(W v)
    double un = 0.0;
    for (int i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (int j = 0; j < cols; ++j) acc += w[i * cols + j] * v[static_cast<std::size_t>(j)];
      u[static_cast<std::size_t>(i)] = acc;
      un += acc * acc;
    }
    un = std::sqrt(un);
    if (un < 1e-300) return sigma_[static_cast<std::size_t>(layer)] = 0.0;
    for (auto& e : u) e /= un;
    // v <- normalize(W^T u)
    double vn = 0.0;
    for (int j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (int i = 0; i < rows; ++i) acc += w[i * cols + j] * u[static_cast<std::size_t>(i)];
      v[static_cast<std::size_t>(j)] = acc;
      vn += acc * acc;
    }
    vn = std::sqrt(vn);
    if (vn < 1e-300) return sigma_[static_cast<std::size_t>(layer)] = 0.0;
    for (auto& e : v) e /= vn;
  }
  double sigma = 0.0;
  for (int i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < cols; ++j) acc += w[i * cols + j] * v[static_cast<std::size_t>(j)];
    sigma += u[static_cast<std::size_t>(i)] * acc;
  }
  return sigma_[static_cast<std::size_t>(layer)] = std::abs(sigma);
}

void ControllerNet::normalize_in_place(int iterations) {
  if (iterations < 1) throw std::invalid_argument("spectral_normalize: iterations must be >= 1");
  for (int l = 0; l < layer_count(); ++l) {
    const int rows = widths_[static_cast<std::size_t>(l) + 1];
    const int cols = widths_[static_cast<std::size_t>(l)];
    double* w = params_.data() + weight_offset(l);
    // Warm-started estimate, then refinement rounds until the re-estimated
    // value sits inside the bound; each round is one extra power iteration.
    double sigma = estimate_sigma(l, iterations);
    for (int round = 0; round < 64; ++round) {
      if (sigma < 1e-12) break;  // degenerate guard: zero-ish matrix stays put
      if (std::abs(sigma - 1.0) <= 2.5e-4) break;
      for (int i = 0; i < rows * cols; ++i) w[i] /= sigma;
      sigma = estimate_sigma(l, 1);
    }
    sigma_[static_cast<std::size_t>(l)] = sigma < 1e-12 ? sigma : 1.0;
  }
}

ControllerNet spectral_normalize(ControllerNet net, int iterations) {
  net.normalize_in_place(iterations);
  return net;
}

// ---- IcnnPotential -------------------------------------------------------------

IcnnPotential::IcnnPotential(std::vector<int> widths, double epsilon, double floor_exponent,
                             double srelu_knee)
    : widths_(std::move(widths)), epsilon_(epsilon), floor_exponent_(floor_exponent), knee_(srelu_knee) {
  if (widths_.size() < 2 || widths_.back() != 1) {
    throw std::invalid_argument("IcnnPotential: widths must end in a scalar output");
  }
  if (epsilon_ <= 0.0 || floor_exponent_ <= 0.0) {
    throw std::invalid_argument("IcnnPotential: epsilon and floor exponent must be positive");
  }
  build_offsets();
}

void IcnnPotential::build_offsets() {
  const int layers = static_cast<int>(widths_.size()) - 1;
  std::size_t off = 0;
  w_off_.resize(static_cast<std::size_t>(layers));
  b_off_.resize(static_cast<std::size_t>(layers));
  u_off_.assign(static_cast<std::size_t>(layers), 0);
  for (int l = 0; l < layers; ++l) {
    const int rows = widths_[static_cast<std::size_t>(l) + 1];
    w_off_[static_cast<std::size_t>(l)] = off;
    off += static_cast<std::size_t>(rows) * static_cast<std::size_t>(dim());
    b_off_[static_cast<std::size_t>(l)] = off;
    off += static_cast<std::size_t>(rows);
    if (l > 0) {
      u_off_[static_cast<std::size_t>(l)] = off;
      off += static_cast<std::size_t>(rows) * static_cast<std::size_t>(widths_[static_cast<std::size_t>(l)]);
    }
  }
  params_.assign(off, 0.0);
}

IcnnPotential IcnnPotential::random_init(std::vector<int> widths, double epsilon,
                                         double floor_exponent, Rng& rng, double srelu_knee) {
  IcnnPotential net(std::move(widths), epsilon, floor_exponent, srelu_knee);
  const int layers = static_cast<int>(net.widths_.size()) - 1;
  for (int l = 0; l < layers; ++l) {
    const int rows = net.widths_[static_cast<std::size_t>(l) + 1];
    const double wscale = 1.0 / std::sqrt(static_cast<double>(net.dim()));
    for (int i = 0; i < rows * net.dim(); ++i) {
      net.params_[net.w_off_[static_cast<std::size_t>(l)] + static_cast<std::size_t>(i)] = gauss_init(rng, wscale);
    }
    for (int i = 0; i < rows; ++i) {
      net.params_[net.b_off_[static_cast<std::size_t>(l)] + static_cast<std::size_t>(i)] = 0.1;
    }
    if (l > 0) {
      const int prev = net.widths_[static_cast<std::size_t>(l)];
      const double uscale = 1.0 / std::sqrt(static_cast<double>(prev));
      for (int i = 0; i < rows * prev; ++i) {
        net.params_[net.u_off_[static_cast<std::size_t>(l)] + static_cast<std::size_t>(i)] =
            std::abs(gauss_init(rng, uscale));
      }
    }
  }
  return net;
}

void IcnnPotential::clamp_convexity_weights() {
  const int layers = static_cast<int>(widths_.size()) - 1;
  for (int l = 1; l < layers; ++l) {
    double* u = params_.data() + u_off_[static_cast<std::size_t>(l)];
    const std::size_t n = u_count(l);
    for (std::size_t i = 0; i < n; ++i) u[i] = std::max(0.0, u[i]);
  }
}

bool IcnnPotential::convexity_weights_nonnegative() const {
  const int layers = static_cast<int>(widths_.size()) - 1;
  for (int l = 1; l < layers; ++l) {
    const double* u = params_.data() + u_off_[static_cast<std::size_t>(l)];
    const std::size_t n = u_count(l);
    for (std::size_t i = 0; i < n; ++i) {
      if (u[i] < 0.0) return false;
    }
  }
  return true;
}

double IcnnPotential::operator()(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != dim()) throw std::invalid_argument("IcnnPotential: dimension mismatch");
  check_finite(x, "IcnnPotential");
  return eval_with<double>(std::span<const double>(params_), x);
}

double IcnnPotential::core(std::span<const double> x) const {
  return core_with<double>(std::span<const double>(params_), x);
}

namespace {

class PotentialField final : public ad::detail::FieldCrtp<PotentialField> {
 public:
  PotentialField(const IcnnPotential& net, std::vector<double> params)
      : net_(net), params_(std::move(params)) {}
  [[nodiscard]] int dim() const override { return net_.dim(); }

  template <class S>
  S evaluate(std::span<const S> x) const {
    std::vector<S> lifted(params_.begin(), params_.end());
    return net_.eval_with<S>(std::span<const S>(lifted), x);
  }

 private:
  IcnnPotential net_;  // copy of the descriptor (shapes, eps, p); weights below
  std::vector<double> params_;
};

class TapedPotentialField final : public ad::Field {
 public:
  TapedPotentialField(const IcnnPotential& net, std::span<const ad::Var> params)
      : net_(net), params_(params.begin(), params.end()) {}
  [[nodiscard]] int dim() const override { return net_.dim(); }

  double eval(std::span<const double>) const override {
    throw std::logic_error("taped potential only evaluates on tape scalar types");
  }
  ad::Dual<double> eval(std::span<const ad::Dual<double>>) const override {
    throw std::logic_error("taped potential only evaluates on tape scalar types");
  }
  ad::Dual2<double> eval(std::span<const ad::Dual2<double>>) const override {
    throw std::logic_error("taped potential only evaluates on tape scalar types");
  }
  ad::Var eval(std::span<const ad::Var> x) const override {
    return net_.eval_with_core0<ad::Var>(std::span<const ad::Var>(params_), x, core0());
  }
  ad::Dual<ad::Var> eval(std::span<const ad::Dual<ad::Var>> x) const override {
    if (dual_lift_.size() != params_.size()) {
      dual_lift_.resize(params_.size());
      for (std::size_t i = 0; i < params_.size(); ++i) {
        dual_lift_[i] = ad::Dual<ad::Var>(params_[i], ad::Var(0.0));
      }
    }
    const ad::Dual<ad::Var> anchor(core0(), ad::Var(0.0));
    return net_.eval_with_core0<ad::Dual<ad::Var>>(std::span<const ad::Dual<ad::Var>>(dual_lift_),
                                                   x, anchor);
  }
  ad::Dual2<ad::Var> eval(std::span<const ad::Dual2<ad::Var>> x) const override {
    if (dual2_lift_.size() != params_.size()) {
      dual2_lift_.resize(params_.size());
      for (std::size_t i = 0; i < params_.size(); ++i) {
        dual2_lift_[i] = ad::Dual2<ad::Var>(params_[i], ad::Var(0.0), ad::Var(0.0));
      }
    }
    const ad::Dual2<ad::Var> anchor(core0(), ad::Var(0.0), ad::Var(0.0));
    return net_.eval_with_core0<ad::Dual2<ad::Var>>(
        std::span<const ad::Dual2<ad::Var>>(dual2_lift_), x, anchor);
  }

 private:
  // p(0) built once per tape; it anchors every evaluation of this view.
  const ad::Var& core0() const {
    if (!has_core0_) {
      core0_ = net_.core_at_zero<ad::Var>(std::span<const ad::Var>(params_));
      has_core0_ = true;
    }
    return core0_;
  }

  IcnnPotential net_;
  std::vector<ad::Var> params_;
  // Lifted views built once per tape; training is single-writer per tape.
  mutable std::vector<ad::Dual<ad::Var>> dual_lift_;
  mutable std::vector<ad::Dual2<ad::Var>> dual2_lift_;
  mutable ad::Var core0_;
  mutable bool has_core0_ = false;
};

}  // namespace

std::shared_ptr<const ad::Field> IcnnPotential::as_field() const {
  return std::make_shared<PotentialField>(*this, params_);
}

std::shared_ptr<const ad::Field> IcnnPotential::as_field(std::span<const ad::Var> taped_params) const {
  return std::make_shared<TapedPotentialField>(*this, taped_params);
}

// ---- ClassKNet -----------------------------------------------------------------

ClassKNet::ClassKNet(std::vector<int> widths, int quadrature_nodes) : widths_(std::move(widths)) {
  if (widths_.size() < 2 || widths_.front() != 1 || widths_.back() != 1) {
    throw std::invalid_argument("ClassKNet: widths must map scalar to scalar");
  }
  if (quadrature_nodes < 2) throw std::invalid_argument("ClassKNet: need at least 2 quadrature nodes");
  gauss_legendre(quadrature_nodes, qnodes_, qweights_);
  build_offsets();
}

void ClassKNet::build_offsets() {
  const int layers = static_cast<int>(widths_.size()) - 1;
  std::size_t off = 0;
  w_off_.resize(static_cast<std::size_t>(layers));
  b_off_.resize(static_cast<std::size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    const int rows = widths_[static_cast<std::size_t>(l) + 1];
    const int cols = widths_[static_cast<std::size_t>(l)];
    w_off_[static_cast<std::size_t>(l)] = off;
    off += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    b_off_[static_cast<std::size_t>(l)] = off;
    off += static_cast<std::size_t>(rows);
  }
  params_.assign(off, 0.0);
}

ClassKNet ClassKNet::random_init(std::vector<int> widths, Rng& rng, int quadrature_nodes) {
  ClassKNet net(std::move(widths), quadrature_nodes);
  const int layers = static_cast<int>(net.widths_.size()) - 1;
  for (int l = 0; l < layers; ++l) {
    const int rows = net.widths_[static_cast<std::size_t>(l) + 1];
    const int cols = net.widths_[static_cast<std::size_t>(l)];
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (int i = 0; i < rows * cols; ++i) {
      net.params_[net.w_off_[static_cast<std::size_t>(l)] + static_cast<std::size_t>(i)] = gauss_init(rng, scale);
    }
    for (int i = 0; i < rows; ++i) {
      net.params_[net.b_off_[static_cast<std::size_t>(l)] + static_cast<std::size_t>(i)] = 0.1;
    }
  }
  return net;
}

double ClassKNet::operator()(double s) const {
  if (s < 0.0) throw std::invalid_argument("ClassKNet: argument must be nonnegative");
  return value_extended(s);
}

double ClassKNet::value_extended(double s) const {
  return eval_extended_with<double>(std::span<const double>(params_), s);
}

double ClassKNet::integrand(double z) const {
  return integrand_with<double>(std::span<const double>(params_), z);
}

void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(static_cast<std::size_t>(n), 0.0);
  weights.assign(static_cast<std::size_t>(n), 0.0);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double x = std::cos(M_PI * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = static_cast<double>(n) * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[static_cast<std::size_t>(i)] = -x;
    nodes[static_cast<std::size_t>(n - 1 - i)] = x;
    const double w = 2.0 / ((1.0 - x * x) * pp * pp);
    weights[static_cast<std::size_t>(i)] = w;
    weights[static_cast<std::size_t>(n - 1 - i)] = w;
  }
}

// ---- serialization --------------------------------------------------------------

namespace {
constexpr int kFormatVersion = 1;

json base_doc(const char* kind, const std::vector<int>& widths, const std::vector<double>& weights) {
  json j;
  j["format"] = "fessnc-net";
  j["version"] = kFormatVersion;
  j["kind"] = kind;
  j["widths"] = widths;
  j["weights"] = weights;
  return j;
}

json parse_doc(const std::string& text, const char* kind) {
  json j = json::parse(text);
  if (!j.is_object() || j.value("format", "") != "fessnc-net") {
    throw std::invalid_argument("model file is not a fessnc-net document");
  }
  if (j.value("version", -1) != kFormatVersion) {
    throw std::invalid_argument("unsupported fessnc-net version");
  }
  if (j.value("kind", "") != kind) {
    throw std::invalid_argument(std::string("expected model kind '") + kind + "', got '" +
                                j.value("kind", "") + "'");
  }
  return j;
}

void load_weights(const json& j, std::vector<double>& params) {
  const auto& w = j.at("weights");
  if (w.size() != params.size()) {
    throw std::invalid_argument("model weight count does not match layer shapes");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = w[i].get<double>();
}
}  // namespace

std::string to_json(const ControllerNet& net) {
  json j = base_doc("controller", net.widths(), net.params());
  j["activation"] = activation_name(net.activation());
  j["mask"] = net.mask();
  return j.dump(2);
}

std::string to_json(const IcnnPotential& net) {
  json j = base_doc("potential", net.widths(), net.params());
  j["epsilon"] = net.epsilon();
  j["p"] = net.floor_exponent();
  j["srelu_knee"] = net.srelu_knee();
  return j.dump(2);
}

std::string to_json(const ClassKNet& net) {
  json j = base_doc("classk", net.widths(), net.params());
  j["quadrature_nodes"] = net.quadrature_nodes();
  return j.dump(2);
}

ControllerNet controller_from_json(const std::string& text) {
  json j = parse_doc(text, "controller");
  ControllerNet net(j.at("widths").get<std::vector<int>>(),
                    activation_from_name(j.value("activation", "tanh")),
                    j.at("mask").get<std::vector<std::uint8_t>>());
  load_weights(j, net.params());
  return net;
}

IcnnPotential potential_from_json(const std::string& text) {
  json j = parse_doc(text, "potential");
  IcnnPotential net(j.at("widths").get<std::vector<int>>(), j.at("epsilon").get<double>(),
                    j.at("p").get<double>(), j.value("srelu_knee", 1.0));
  load_weights(j, net.params());
  return net;
}

ClassKNet classk_from_json(const std::string& text) {
  json j = parse_doc(text, "classk");
  ClassKNet net(j.at("widths").get<std::vector<int>>(), j.at("quadrature_nodes").get<int>());
  load_weights(j, net.params());
  return net;
}

void save_json_file(const std::string& path, const std::string& payload) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << payload << "\n";
}

std::string load_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fessnc::nets
