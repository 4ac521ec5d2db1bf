#pragma once

// Closed-form approximate projection operators: a pointwise correction along
// grad V (stability) or grad h (safety) that makes the corresponding
// generator inequality hold wherever it was violated, plus their composition
// and the potential-from-barrier construction.

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fessnc/dynamics.hpp"
#include "fessnc/generator.hpp"

namespace fessnc::proj {

// alpha(h) evaluated on the extended domain (h may be slightly negative for
// reported out-of-region queries).
using ScalarMap = std::function<double(double)>;

inline ScalarMap linear_class_k(double gain = 1.0) {
  return [gain](double s) { return gain * s; };
}

struct StageResult {
  std::vector<double> u;
  double residual_before = 0.0;  // stability: LV - cV; safety: Lh + alpha(h)
  double residual_after = 0.0;
  double correction_norm = 0.0;
  bool guarded = false;  // degenerate gradient, base control returned
  bool corrected = false;
  gen::GeneratorEval generator;  // grad/trace of the stage field at x
};

// u'(x) = u(x) - max(0, L_u V - c V) / |grad V|^2 * grad V.
StageResult project_stable_detail(const gen::StateMap& u, const ad::Field& V, double c,
                                  const dyn::SdeModel& model, std::span<const double> x,
                                  double tau = 1e-12,
                                  std::optional<gen::TraceMode> mode = std::nullopt);
std::vector<double> project_stable(const gen::StateMap& u, const ad::Field& V, double c,
                                   const dyn::SdeModel& model, std::span<const double> x,
                                   double tau = 1e-12);

// u'(x) = u(x) + max(0, -L_u h - alpha(h)) / |grad h|^2 * grad h.
// Points outside the safe region are reported through `outside` (when given)
// and the correction is still computed.
StageResult project_safe_detail(const gen::StateMap& u, const dyn::SafeRegionSpec& region,
                                const ScalarMap& alpha, const dyn::SdeModel& model,
                                std::span<const double> x, double tau = 1e-12,
                                std::optional<gen::TraceMode> mode = std::nullopt,
                                bool* outside = nullptr);
std::vector<double> project_safe(const gen::StateMap& u, const dyn::SafeRegionSpec& region,
                                 const ScalarMap& alpha, const dyn::SdeModel& model,
                                 std::span<const double> x, double tau = 1e-12);

struct PointDiagnostics {
  std::vector<double> x;
  double residual_safety_before = 0.0;
  double residual_safety_after = 0.0;
  double residual_stability_before = 0.0;
  double residual_stability_after = 0.0;
  double correction_safety = 0.0;
  double correction_stability = 0.0;
  bool outside_safe_region = false;
  bool guarded_safety = false;
  bool guarded_stability = false;

  static std::string csv_header();
  [[nodiscard]] std::string csv_row() const;
};

// Time-varying control used by the simulator; neural controllers ignore t.
using ControlFn = std::function<void(std::span<const double>, double, std::span<double>)>;

inline ControlFn lift_state_map(gen::StateMap u) {
  return [u = std::move(u)](std::span<const double> x, double, std::span<double> out) { u(x, out); };
}

// Safety projection first, then the stability projection on the corrected
// controller; exact-class trace backends throughout.
class ProjectedController {
 public:
  ProjectedController(ControlFn base, std::shared_ptr<const ad::Field> potential,
                      dyn::SafeRegionSpec region, ScalarMap alpha, double c, dyn::SdeModel model,
                      double tau = 1e-12);

  void operator()(std::span<const double> x, double t, std::span<double> out) const;
  [[nodiscard]] std::vector<double> control(std::span<const double> x, double t) const;
  PointDiagnostics evaluate(std::span<const double> x, double t) const;

  [[nodiscard]] ControlFn as_control_fn() const;
  [[nodiscard]] double stability_rate() const { return c_; }
  [[nodiscard]] const dyn::SdeModel& model() const { return model_; }

 private:
  ControlFn base_;
  std::shared_ptr<const ad::Field> potential_;
  dyn::SafeRegionSpec region_;
  ScalarMap alpha_;
  double c_;
  dyn::SdeModel model_;
  double tau_;
  gen::TraceMode mode_;
};

ProjectedController compose_fessnc(ControlFn base, std::shared_ptr<const ad::Field> potential,
                                   dyn::SafeRegionSpec region, ScalarMap alpha, double c,
                                   dyn::SdeModel model, double tau = 1e-12);

// Theorem-5 style construction V(x) = h(0) - h(x); valid when h peaks at the
// origin, which is checked by sampling.
std::shared_ptr<const ad::Field> potential_from_barrier(const dyn::SafeRegionSpec& region,
                                                        int check_samples = 2000,
                                                        std::uint64_t check_seed = 0);

}  // namespace fessnc::proj
