#pragma once

// The three parameterized function families: the diag-masked Lipschitz
// controller, the ICNN-based potential with an L^p floor, and the class-K
// function built as the integral of a strictly positive network. All forward
// passes are templated on the scalar type so the same definition serves plain
// evaluation, directional duals and taped training.

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fessnc/autodiff.hpp"
#include "fessnc/rng.hpp"

namespace fessnc::nets {

using ad::elu;
using ad::exp;
using ad::log;
using ad::powc;
using ad::relu;
using ad::srelu;
using ad::tanh;

enum class Activation : std::uint8_t { kTanh, kSoftplusLike };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

namespace detail {

// y = W z + b over flat row-major storage. `bias == nullptr` skips the bias.
template <class S>
void affine(std::span<const S> params, std::size_t w_off, std::size_t b_off, bool has_bias,
            int rows, int cols, std::span<const S> z, std::vector<S>& out) {
  out.assign(static_cast<std::size_t>(rows), S(0.0));
  for (int i = 0; i < rows; ++i) {
    S acc = has_bias ? params[b_off + static_cast<std::size_t>(i)] : S(0.0);
    const std::size_t row = w_off + static_cast<std::size_t>(i) * static_cast<std::size_t>(cols);
    for (int j = 0; j < cols; ++j) acc = acc + params[row + static_cast<std::size_t>(j)] * z[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = acc;
  }
}

template <class S>
S apply_activation(Activation act, const S& z) {
  switch (act) {
    case Activation::kTanh:
      return tanh(z);
    case Activation::kSoftplusLike:
      return log(1.0 + exp(z));
  }
  throw std::logic_error("unknown activation");
}

}  // namespace detail

// -----------------------------------------------------------------------------
// ControllerNet: u(x) = diag(x) . NN(x) with an optional output mask, weights
// kept under a spectral-norm bound by power iteration.
// -----------------------------------------------------------------------------
class ControllerNet {
 public:
  ControllerNet() = default;
  // widths = (h0, ..., h_{k+1}) with h0 == h_{k+1} == d.
  ControllerNet(std::vector<int> widths, Activation act, std::vector<std::uint8_t> mask);

  static ControllerNet random_init(std::vector<int> widths, Activation act,
                                   std::vector<std::uint8_t> mask, Rng& rng);

  [[nodiscard]] int dim() const { return widths_.front(); }
  [[nodiscard]] const std::vector<int>& widths() const { return widths_; }
  [[nodiscard]] Activation activation() const { return act_; }
  [[nodiscard]] const std::vector<std::uint8_t>& mask() const { return mask_; }

  [[nodiscard]] std::vector<double>& params() { return params_; }
  [[nodiscard]] const std::vector<double>& params() const { return params_; }

  [[nodiscard]] int layer_count() const { return static_cast<int>(widths_.size()) - 1; }
  // Offsets into the flat parameter vector for layer l's weight matrix.
  [[nodiscard]] std::size_t weight_offset(int layer) const { return w_off_[static_cast<std::size_t>(layer)]; }
  [[nodiscard]] std::size_t bias_offset(int layer) const { return b_off_[static_cast<std::size_t>(layer)]; }
  [[nodiscard]] bool layer_has_bias(int layer) const { return layer + 1 < layer_count(); }

  template <class S>
  void eval_with(std::span<const S> params, std::span<const S> x, std::vector<S>& out) const {
    const int layers = layer_count();
    std::vector<S> z(x.begin(), x.end());
    std::vector<S> next;
    for (int l = 0; l < layers; ++l) {
      detail::affine<S>(params, w_off_[static_cast<std::size_t>(l)], b_off_[static_cast<std::size_t>(l)],
                        layer_has_bias(l), widths_[static_cast<std::size_t>(l) + 1],
                        widths_[static_cast<std::size_t>(l)], z, next);
      if (l + 1 < layers) {
        for (auto& v : next) v = detail::apply_activation(act_, v);
      }
      z.swap(next);
    }
    out.assign(x.size(), S(0.0));
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!mask_[i]) continue;  // masked components stay identically zero
      out[i] = x[i] * z[i];
    }
  }

  // Plain evaluation with the stored weights; throws on non-finite input.
  [[nodiscard]] std::vector<double> operator()(std::span<const double> x) const;

  // One warm-started power-iteration estimate of the top singular value of
  // layer `l`'s current weight matrix (updates the persisted vectors).
  double estimate_sigma(int layer, int iterations);
  [[nodiscard]] double last_sigma(int layer) const { return sigma_[static_cast<std::size_t>(layer)]; }

  friend ControllerNet spectral_normalize(ControllerNet net, int iterations);
  void normalize_in_place(int iterations);

 private:
  void build_offsets();

  std::vector<int> widths_;
  Activation act_ = Activation::kTanh;
  std::vector<std::uint8_t> mask_;
  std::vector<double> params_;
  std::vector<std::size_t> w_off_, b_off_;
  // persisted power-iteration state per layer
  std::vector<std::vector<double>> pu_, pv_;
  std::vector<double> sigma_;
};

// Returns a copy with every weight matrix divided by its estimated top
// singular value (estimates below 1e-12 skip the division).
ControllerNet spectral_normalize(ControllerNet net, int iterations);

// -----------------------------------------------------------------------------
// IcnnPotential: V(x) = srelu(p(x) - p(0)) + eps * ||x||^p with p(x) an input
// convex network (U weights entrywise nonnegative, convex nondecreasing C^2
// activation).
// -----------------------------------------------------------------------------
class IcnnPotential {
 public:
  IcnnPotential() = default;
  // widths = (h0 = d, h1, ..., h_{k} = 1)
  IcnnPotential(std::vector<int> widths, double epsilon, double floor_exponent,
                double srelu_knee = 1.0);

  static IcnnPotential random_init(std::vector<int> widths, double epsilon, double floor_exponent,
                                   Rng& rng, double srelu_knee = 1.0);

  [[nodiscard]] int dim() const { return widths_.front(); }
  [[nodiscard]] const std::vector<int>& widths() const { return widths_; }
  [[nodiscard]] double epsilon() const { return epsilon_; }
  [[nodiscard]] double floor_exponent() const { return floor_exponent_; }
  [[nodiscard]] double srelu_knee() const { return knee_; }

  [[nodiscard]] std::vector<double>& params() { return params_; }
  [[nodiscard]] const std::vector<double>& params() const { return params_; }

  // Clamp the U weight entries to >= 0 (projection after optimizer steps).
  void clamp_convexity_weights();
  [[nodiscard]] bool convexity_weights_nonnegative() const;

  // ICNN core p(x).
  template <class S>
  S core_with(std::span<const S> params, std::span<const S> x) const {
    const int layers = static_cast<int>(widths_.size()) - 1;
    std::vector<S> z;
    std::vector<S> next;
    for (int l = 0; l < layers; ++l) {
      const int rows = widths_[static_cast<std::size_t>(l) + 1];
      next.assign(static_cast<std::size_t>(rows), S(0.0));
      for (int i = 0; i < rows; ++i) {
        S acc = params[b_off_[static_cast<std::size_t>(l)] + static_cast<std::size_t>(i)];
        const std::size_t wrow =
            w_off_[static_cast<std::size_t>(l)] + static_cast<std::size_t>(i) * static_cast<std::size_t>(dim());
        for (int j = 0; j < dim(); ++j) acc = acc + params[wrow + static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
        if (l > 0) {
          const int prev = widths_[static_cast<std::size_t>(l)];
          const std::size_t urow =
              u_off_[static_cast<std::size_t>(l)] + static_cast<std::size_t>(i) * static_cast<std::size_t>(prev);
          for (int j = 0; j < prev; ++j) acc = acc + params[urow + static_cast<std::size_t>(j)] * z[static_cast<std::size_t>(j)];
        }
        next[static_cast<std::size_t>(i)] = srelu(acc, knee_);
      }
      z.swap(next);
    }
    return z.front();
  }

  template <class S>
  S core_at_zero(std::span<const S> params) const {
    std::vector<S> zero(static_cast<std::size_t>(dim()), S(0.0));
    return core_with<S>(params, std::span<const S>(zero));
  }

  // V given a precomputed p(0); lets taped evaluations share the anchor.
  template <class S>
  S eval_with_core0(std::span<const S> params, std::span<const S> x, const S& core0) const {
    S shifted = core_with<S>(params, x) - core0;
    S norm_sq = S(0.0);
    for (const S& xi : x) norm_sq = norm_sq + xi * xi;
    S floor = floor_exponent_ == 2.0 ? epsilon_ * norm_sq
                                     : epsilon_ * powc(norm_sq, 0.5 * floor_exponent_);
    return srelu(shifted, knee_) + floor;
  }

  template <class S>
  S eval_with(std::span<const S> params, std::span<const S> x) const {
    return eval_with_core0<S>(params, x, core_at_zero<S>(params));
  }

  [[nodiscard]] double operator()(std::span<const double> x) const;
  [[nodiscard]] double core(std::span<const double> x) const;

  // Field views: inference (stored weights) and training (taped weights).
  [[nodiscard]] std::shared_ptr<const ad::Field> as_field() const;
  [[nodiscard]] std::shared_ptr<const ad::Field> as_field(std::span<const ad::Var> taped_params) const;

  [[nodiscard]] std::size_t u_offset(int layer) const { return u_off_[static_cast<std::size_t>(layer)]; }
  [[nodiscard]] std::size_t u_count(int layer) const {
    return static_cast<std::size_t>(widths_[static_cast<std::size_t>(layer) + 1]) *
           static_cast<std::size_t>(widths_[static_cast<std::size_t>(layer)]);
  }

 private:
  void build_offsets();

  std::vector<int> widths_;
  double epsilon_ = 1e-3;
  double floor_exponent_ = 2.0;
  double knee_ = 1.0;
  std::vector<double> params_;
  std::vector<std::size_t> w_off_, b_off_, u_off_;
};

// -----------------------------------------------------------------------------
// ClassKNet: alpha(s) = integral_0^s q(z) dz by fixed Gauss-Legendre
// quadrature, with q a positive network (ReLU hidden layers, ELU + 1 output).
// -----------------------------------------------------------------------------
class ClassKNet {
 public:
  ClassKNet() = default;
  // widths = (1, h1, ..., h_{k-1}, 1)
  explicit ClassKNet(std::vector<int> widths, int quadrature_nodes = 32);

  static ClassKNet random_init(std::vector<int> widths, Rng& rng, int quadrature_nodes = 32);

  [[nodiscard]] const std::vector<int>& widths() const { return widths_; }
  [[nodiscard]] int quadrature_nodes() const { return static_cast<int>(qnodes_.size()); }

  [[nodiscard]] std::vector<double>& params() { return params_; }
  [[nodiscard]] const std::vector<double>& params() const { return params_; }

  // Positive integrand q(z).
  template <class S>
  S integrand_with(std::span<const S> params, const S& z) const {
    const int layers = static_cast<int>(widths_.size()) - 1;
    std::vector<S> h(1, z);
    std::vector<S> next;
    for (int l = 0; l < layers; ++l) {
      detail::affine<S>(params, w_off_[static_cast<std::size_t>(l)], b_off_[static_cast<std::size_t>(l)],
                        true, widths_[static_cast<std::size_t>(l) + 1], widths_[static_cast<std::size_t>(l)],
                        std::span<const S>(h), next);
      if (l + 1 < layers) {
        for (auto& v : next) v = relu(v);
      } else {
        for (auto& v : next) v = elu(v) + 1.0;  // strictly positive output
      }
      h.swap(next);
    }
    return h.front();
  }

  // alpha(s) on the extended domain (s may be negative; the integral keeps its
  // sign, which is what the losses need for points outside the safe region).
  template <class S>
  S eval_extended_with(std::span<const S> params, const S& s) const {
    S half = 0.5 * s;
    S acc = S(0.0);
    for (std::size_t i = 0; i < qnodes_.size(); ++i) {
      S z = half + half * qnodes_[i];
      acc = acc + qweights_[i] * integrand_with<S>(params, z);
    }
    return half * acc;
  }

  // Guarded evaluation per the class-K contract; throws for s < 0.
  [[nodiscard]] double operator()(double s) const;
  [[nodiscard]] double value_extended(double s) const;
  [[nodiscard]] double integrand(double z) const;

 private:
  void build_offsets();

  std::vector<int> widths_;
  std::vector<double> params_;
  std::vector<std::size_t> w_off_, b_off_;
  std::vector<double> qnodes_, qweights_;  // Gauss-Legendre on [-1, 1]
};

// Gauss-Legendre nodes/weights on [-1, 1] (Newton on Legendre polynomials).
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

// -----------------------------------------------------------------------------
// Serialization: versioned JSON documents, weights row-major decimal.
// -----------------------------------------------------------------------------
std::string to_json(const ControllerNet& net);
std::string to_json(const IcnnPotential& net);
std::string to_json(const ClassKNet& net);

ControllerNet controller_from_json(const std::string& text);
IcnnPotential potential_from_json(const std::string& text);
ClassKNet classk_from_json(const std::string& text);

void save_json_file(const std::string& path, const std::string& payload);
std::string load_text_file(const std::string& path);

}  // namespace fessnc::nets
