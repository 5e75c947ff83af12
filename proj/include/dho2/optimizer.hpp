#pragma once

#include <cstdint>
#include <string_view>

#include "dho2/lanczos.hpp"
#include "dho2/linalg.hpp"

namespace dho2 {

enum class BaseKind { Sgd, Momentum, Adam, AdamW };

BaseKind parse_base_kind(std::string_view name);
std::string_view base_kind_name(BaseKind kind);

struct BaseConfig {
  BaseKind kind = BaseKind::AdamW;
  double lr = 1e-3;
  double weight_decay = 0.05;  // adamw, decoupled
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
};

/// Pluggable first-order optimizer. step() returns the descent vector (the
/// -lr scaling is already applied) and advances the internal moments.
class BaseOptimizer {
 public:
  BaseOptimizer(const BaseConfig& cfg, std::size_t n);

  /// `w` is only read by AdamW for the decoupled weight-decay term.
  Vector step(const Vector& g, const Vector& w);

  const BaseConfig& config() const noexcept { return cfg_; }
  std::size_t dim() const noexcept { return n_; }
  std::size_t steps() const noexcept { return t_; }
  std::int64_t moment_slots() const noexcept;

 private:
  BaseConfig cfg_;
  std::size_t n_;
  std::size_t t_ = 0;
  Vector m_;  // first moment / momentum buffer
  Vector v_;  // second moment (adam, adamw)
};

struct Deltas {
  Vector newton;  // curvature-subspace step
  Vector base;    // complement-subspace step, Gram-Schmidt corrected
};

/// FOSI split update. newton = -alpha V (A1_floored^-1 (V^T g)); base is the
/// base-optimizer step on the complement gradient, re-projected so the two
/// stay orthogonal. An empty ESE disables the curvature path (newton = 0).
Deltas fosi_deltas(const Vector& g, const EseResult& ese, BaseOptimizer& base, const Vector& w,
                   double alpha, double eigval_floor = 1e-6);

/// ADMM variant: the driving gradient is g + pi and the Newton denominators
/// gain the penalty, (A1_floored + sigma I)^-1. sigma == 0 with pi == 0
/// reduces exactly to fosi_deltas.
Deltas admm_deltas(const Vector& g, const Vector& pi, const EseResult& ese, BaseOptimizer& base,
                   const Vector& w, double alpha, double sigma, double eigval_floor = 1e-6);

/// Augmented-Lagrangian loop state: primal w, auxiliary w_a, multiplier pi.
struct AdmmState {
  Vector w;
  Vector w_a;
  Vector pi;
  double sigma = 0.0;
  std::size_t outer = 0;
};

AdmmState make_admm_state(Vector w0, double sigma);

/// w <- w_a + pi / sigma (the closed-form minimizer of L over w).
const Vector& admm_w_update(AdmmState& state);

/// pi <- pi + sigma (w_a - w).
void admm_dual_update(AdmmState& state);

}  // namespace dho2
