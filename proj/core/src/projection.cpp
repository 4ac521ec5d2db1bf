#include "fessnc/projection.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fessnc::proj {

namespace {

void check_finite(std::span<const double> v, const char* who) {
  for (double e : v) {
    if (!std::isfinite(e)) throw std::runtime_error(std::string(who) + ": non-finite intermediate value");
  }
}

gen::TraceMode resolve_mode(const std::optional<gen::TraceMode>& mode, int r) {
  if (!mode) return gen::projection_trace_mode(r);
  if (mode->kind == gen::TraceKind::kHutchinson) {
    throw std::invalid_argument("projection requires an exact-class trace backend");
  }
  return *mode;
}

}  // namespace

StageResult project_stable_detail(const gen::StateMap& u, const ad::Field& V, double c,
                                  const dyn::SdeModel& model, std::span<const double> x,
                                  double tau, std::optional<gen::TraceMode> mode) {
  const gen::TraceMode m = resolve_mode(mode, model.r);
  gen::GeneratorEval ev = gen::evaluate_generator(model, u, V, x, m);

  StageResult res;
  res.u = ev.control;
  check_finite(res.u, "project_stable");

  const double target = c * ev.field_value;
  res.residual_before = ev.lie - target;
  res.residual_after = res.residual_before;

  double grad_sq = 0.0;
  for (double g : ev.grad) grad_sq += g * g;

  res.generator = std::move(ev);
  if (grad_sq < tau) {
    res.guarded = true;
    return res;
  }
  if (res.residual_before <= 0.0) {
    return res;  // feasible: bitwise no-op
  }

  const double coef = res.residual_before / grad_sq;
  for (int i = 0; i < model.d; ++i) {
    res.u[static_cast<std::size_t>(i)] -= coef * res.generator.grad[static_cast<std::size_t>(i)];
  }
  check_finite(res.u, "project_stable");
  res.corrected = true;
  res.correction_norm = coef * std::sqrt(grad_sq);
  res.residual_after = res.generator.lie_at(res.u) - target;
  return res;
}

std::vector<double> project_stable(const gen::StateMap& u, const ad::Field& V, double c,
                                   const dyn::SdeModel& model, std::span<const double> x,
                                   double tau) {
  return project_stable_detail(u, V, c, model, x, tau).u;
}

StageResult project_safe_detail(const gen::StateMap& u, const dyn::SafeRegionSpec& region,
                                const ScalarMap& alpha, const dyn::SdeModel& model,
                                std::span<const double> x, double tau,
                                std::optional<gen::TraceMode> mode, bool* outside) {
  const gen::TraceMode m = resolve_mode(mode, model.r);
  const ad::Field& h = *region.smooth_barrier;
  gen::GeneratorEval ev = gen::evaluate_generator(model, u, h, x, m);

  if (outside != nullptr) *outside = region.barrier->eval(x) < 0.0;

  StageResult res;
  res.u = ev.control;
  check_finite(res.u, "project_safe");

  const double ah = alpha(ev.field_value);
  // Safety residual: L_u h + alpha(h) must stay >= 0.
  res.residual_before = ev.lie + ah;
  res.residual_after = res.residual_before;

  double grad_sq = 0.0;
  for (double g : ev.grad) grad_sq += g * g;

  const double violation = -ev.lie - ah;  // max(0, -Lh - alpha(h))
  res.generator = std::move(ev);
  if (grad_sq < tau) {
    res.guarded = true;
    return res;
  }
  if (violation <= 0.0) {
    return res;
  }

  const double coef = violation / grad_sq;
  for (int i = 0; i < model.d; ++i) {
    res.u[static_cast<std::size_t>(i)] += coef * res.generator.grad[static_cast<std::size_t>(i)];
  }
  check_finite(res.u, "project_safe");
  res.corrected = true;
  res.correction_norm = coef * std::sqrt(grad_sq);
  res.residual_after = res.generator.lie_at(res.u) + ah;
  return res;
}

std::vector<double> project_safe(const gen::StateMap& u, const dyn::SafeRegionSpec& region,
                                 const ScalarMap& alpha, const dyn::SdeModel& model,
                                 std::span<const double> x, double tau) {
  return project_safe_detail(u, region, alpha, model, x, tau).u;
}

std::string PointDiagnostics::csv_header() {
  return "residual_safety_before,residual_safety_after,residual_stability_before,"
         "residual_stability_after,correction_safety,correction_stability,outside_safe_region";
}

std::string PointDiagnostics::csv_row() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << residual_safety_before << ',' << residual_safety_after << ',' << residual_stability_before
     << ',' << residual_stability_after << ',' << correction_safety << ',' << correction_stability
     << ',' << (outside_safe_region ? 1 : 0);
  return ss.str();
}

ProjectedController::ProjectedController(ControlFn base, std::shared_ptr<const ad::Field> potential,
                                         dyn::SafeRegionSpec region, ScalarMap alpha, double c,
                                         dyn::SdeModel model, double tau)
    : base_(std::move(base)),
      potential_(std::move(potential)),
      region_(std::move(region)),
      alpha_(std::move(alpha)),
      c_(c),
      model_(std::move(model)),
      tau_(tau),
      mode_(gen::projection_trace_mode(model_.r)) {
  if (c_ >= 0.0) throw std::invalid_argument("ProjectedController: stability rate c must be negative");
}

PointDiagnostics ProjectedController::evaluate(std::span<const double> x, double t) const {
  gen::StateMap base_at_t = [this, t](std::span<const double> xq, std::span<double> out) {
    base_(xq, t, out);
  };
  bool outside = false;
  StageResult safe = project_safe_detail(base_at_t, region_, alpha_, model_, x, tau_, mode_, &outside);

  gen::StateMap safe_map = [&safe](std::span<const double>, std::span<double> out) {
    std::copy(safe.u.begin(), safe.u.end(), out.begin());
  };
  StageResult stable = project_stable_detail(safe_map, *potential_, c_, model_, x, tau_, mode_);

  PointDiagnostics diag;
  diag.x.assign(x.begin(), x.end());
  diag.residual_safety_before = safe.residual_before;
  diag.residual_stability_before = stable.residual_before;
  diag.residual_stability_after = stable.residual_after;
  diag.correction_safety = safe.correction_norm;
  diag.correction_stability = stable.correction_norm;
  diag.outside_safe_region = outside;
  diag.guarded_safety = safe.guarded;
  diag.guarded_stability = stable.guarded;

  // Post-composition safety residual: the stability stage acts after the
  // safety stage, so report the safety inequality at the final control.
  diag.residual_safety_after =
      safe.generator.lie_at(stable.u) + alpha_(safe.generator.field_value);
  return diag;
}

void ProjectedController::operator()(std::span<const double> x, double t, std::span<double> out) const {
  gen::StateMap base_at_t = [this, t](std::span<const double> xq, std::span<double> o) {
    base_(xq, t, o);
  };
  StageResult safe = project_safe_detail(base_at_t, region_, alpha_, model_, x, tau_, mode_);
  gen::StateMap safe_map = [&safe](std::span<const double>, std::span<double> o) {
    std::copy(safe.u.begin(), safe.u.end(), o.begin());
  };
  StageResult stable = project_stable_detail(safe_map, *potential_, c_, model_, x, tau_, mode_);
  std::copy(stable.u.begin(), stable.u.end(), out.begin());
}

std::vector<double> ProjectedController::control(std::span<const double> x, double t) const {
  std::vector<double> out(static_cast<std::size_t>(model_.d));
  (*this)(x, t, out);
  return out;
}

ControlFn ProjectedController::as_control_fn() const {
  return [self = *this](std::span<const double> x, double t, std::span<double> out) {
    self(x, t, out);
  };
}

ProjectedController compose_fessnc(ControlFn base, std::shared_ptr<const ad::Field> potential,
                                   dyn::SafeRegionSpec region, ScalarMap alpha, double c,
                                   dyn::SdeModel model, double tau) {
  return ProjectedController(std::move(base), std::move(potential), std::move(region),
                             std::move(alpha), c, std::move(model), tau);
}

namespace {

class BarrierPotentialField final : public ad::detail::FieldCrtp<BarrierPotentialField> {
 public:
  BarrierPotentialField(std::shared_ptr<const ad::Field> h, double h0) : h_(std::move(h)), h0_(h0) {}
  [[nodiscard]] int dim() const override { return h_->dim(); }

  template <class S>
  S evaluate(std::span<const S> x) const {
    return h0_ - h_->eval(x);
  }

 private:
  std::shared_ptr<const ad::Field> h_;
  double h0_;
};

}  // namespace

std::shared_ptr<const ad::Field> potential_from_barrier(const dyn::SafeRegionSpec& region,
                                                        int check_samples, std::uint64_t check_seed) {
  const ad::Field& h = *region.smooth_barrier;
  std::vector<double> origin(static_cast<std::size_t>(h.dim()), 0.0);
  const double h0 = h.eval(std::span<const double>(origin));

  Rng rng = substream(check_seed, 0x8A5Eu);
  double max_seen = h0;
  for (int i = 0; i < check_samples; ++i) {
    const std::vector<double> x = region.sampler(rng);
    max_seen = std::max(max_seen, h.eval(std::span<const double>(x)));
  }
  if (max_seen > h0 + 1e-6) {
    std::ostringstream ss;
    ss << "potential_from_barrier: barrier does not peak at the origin (sampled max " << max_seen
       << " > h(0) = " << h0 << "); use a barrier shifted to peak at the equilibrium";
    throw std::invalid_argument(ss.str());
  }
  return std::make_shared<BarrierPotentialField>(region.smooth_barrier, h0);
}

}  // namespace fessnc::proj
