#include "dho2/optimizer.hpp"

#include <cmath>

namespace dho2 {

BaseKind parse_base_kind(std::string_view name) {
  if (name == "sgd") return BaseKind::Sgd;
  if (name == "momentum") return BaseKind::Momentum;
  if (name == "adam") return BaseKind::Adam;
  if (name == "adamw") return BaseKind::AdamW;
  throw ArgumentError("base optimizer: expected sgd|momentum|adam|adamw, got '" +
                      std::string(name) + "'");
}

std::string_view base_kind_name(BaseKind kind) {
  switch (kind) {
    case BaseKind::Sgd: return "sgd";
    case BaseKind::Momentum: return "momentum";
    case BaseKind::Adam: return "adam";
    case BaseKind::AdamW: return "adamw";
  }
  return "?";
}

BaseOptimizer::BaseOptimizer(const BaseConfig& cfg, std::size_t n) : cfg_(cfg), n_(n) {
  if (n_ == 0) throw ArgumentError("BaseOptimizer: zero dimension");
  if (cfg_.lr < 0.0) throw ArgumentError("BaseOptimizer: negative learning rate");
  if (cfg_.kind != BaseKind::Sgd) m_.assign(n_, 0.0);
  if (cfg_.kind == BaseKind::Adam || cfg_.kind == BaseKind::AdamW) v_.assign(n_, 0.0);
}

std::int64_t BaseOptimizer::moment_slots() const noexcept {
  return static_cast<std::int64_t>(m_.size() + v_.size());
}

Vector BaseOptimizer::step(const Vector& g, const Vector& w) {
  if (g.size() != n_) throw DimensionError("BaseOptimizer: gradient length mismatch");
  if (!linalg::all_finite(g)) throw NumericError("BaseOptimizer: non-finite gradient");
  ++t_;
  Vector d(n_);
  switch (cfg_.kind) {
    case BaseKind::Sgd:
      for (std::size_t i = 0; i < n_; ++i) d[i] = -cfg_.lr * g[i];
      break;
    case BaseKind::Momentum:
      for (std::size_t i = 0; i < n_; ++i) {
        m_[i] = cfg_.momentum * m_[i] + g[i];
        d[i] = -cfg_.lr * m_[i];
      }
      break;
    case BaseKind::Adam:
    case BaseKind::AdamW: {
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      for (std::size_t i = 0; i < n_; ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        d[i] = -cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      if (cfg_.kind == BaseKind::AdamW) {
        if (w.size() != n_) throw DimensionError("BaseOptimizer: adamw needs the parameter vector");
        for (std::size_t i = 0; i < n_; ++i) d[i] -= cfg_.lr * cfg_.weight_decay * w[i];
      }
      break;
    }
  }
  return d;
}

namespace {

double floored_eigval(double a, double floor) {
  if (a == 0.0) return floor;
  const double mag = std::max(std::abs(a), floor);
  return a < 0.0 ? -mag : mag;
}

Deltas split_deltas(const Vector& g, const Vector* pi, const EseResult& ese, BaseOptimizer& base,
                    const Vector& w, double alpha, double sigma, double eigval_floor) {
  const std::size_t n = g.size();
  if (pi != nullptr && pi->size() != n) throw DimensionError("deltas: pi length mismatch");
  if (ese.count() > 0 && ese.eigvecs.rows() != n) {
    throw DimensionError("deltas: eigenvector rows != gradient length");
  }

  const Vector gt = pi == nullptr ? g : linalg::add(g, *pi);
  Deltas out;
  Vector g2;
  if (ese.count() > 0) {
    const Vector c = linalg::matvec_transpose(ese.eigvecs, gt);
    Vector newton_coeff(c.size());
    for (std::size_t j = 0; j < c.size(); ++j) {
      double denom = floored_eigval(ese.eigvals[j], eigval_floor) + sigma;
      if (std::abs(denom) < eigval_floor) {
        denom = denom < 0.0 ? -eigval_floor : eigval_floor;
      }
      newton_coeff[j] = c[j] / denom;
    }
    out.newton = linalg::scaled(linalg::matvec(ese.eigvecs, newton_coeff), -alpha);
    g2 = linalg::sub(gt, linalg::matvec(ese.eigvecs, c));
  } else {
    out.newton.assign(n, 0.0);
    g2 = gt;
  }

  Vector s = base.step(g2, w);
  if (ese.count() > 0) {
    const Vector sc = linalg::matvec_transpose(ese.eigvecs, s);
    out.base = linalg::sub(s, linalg::matvec(ese.eigvecs, sc));
  } else {
    out.base = std::move(s);
  }
  return out;
}

}  // namespace

Deltas fosi_deltas(const Vector& g, const EseResult& ese, BaseOptimizer& base, const Vector& w,
                   double alpha, double eigval_floor) {
  return split_deltas(g, nullptr, ese, base, w, alpha, 0.0, eigval_floor);
}

Deltas admm_deltas(const Vector& g, const Vector& pi, const EseResult& ese, BaseOptimizer& base,
                   const Vector& w, double alpha, double sigma, double eigval_floor) {
  return split_deltas(g, &pi, ese, base, w, alpha, sigma, eigval_floor);
}

AdmmState make_admm_state(Vector w0, double sigma) {
  if (sigma <= 0.0) throw ArgumentError("AdmmState: sigma must be positive");
  AdmmState s;
  s.w = w0;
  s.w_a = std::move(w0);
  s.pi.assign(s.w.size(), 0.0);
  s.sigma = sigma;
  return s;
}

const Vector& admm_w_update(AdmmState& state) {
  if (state.sigma <= 0.0) throw ArgumentError("admm_w_update: sigma must be positive");
  for (std::size_t i = 0; i < state.w.size(); ++i) {
    state.w[i] = state.w_a[i] + state.pi[i] / state.sigma;
  }
  return state.w;
}

void admm_dual_update(AdmmState& state) {
  for (std::size_t i = 0; i < state.pi.size(); ++i) {
    state.pi[i] += state.sigma * (state.w_a[i] - state.w[i]);
  }
  ++state.outer;
}

}  // namespace dho2
