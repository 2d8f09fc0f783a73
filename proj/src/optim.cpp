#include "selip/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "selip/error.hpp"

namespace selip {

AdamState make_adam_state(std::span<Parameter* const> params, double beta1, double beta2, double eps) {
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "Adam betas must lie in (0, 1)", "beta");
  }
  AdamState state;
  state.beta1 = beta1;
  state.beta2 = beta2;
  state.eps = eps;
  for (const Parameter* p : params) {
    state.m.emplace_back(p->value.rows(), p->value.cols());
    state.v.emplace_back(p->value.rows(), p->value.cols());
  }
  return state;
}

void adam_step(AdamState& state, std::span<Parameter* const> params, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "Adam state tracks " + std::to_string(state.m.size()) +
                                              " tensors, got " + std::to_string(params.size()));
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto& m = state.m[k].data();
    auto& v = state.v[k].data();
    auto& x = p.value.data();
    const auto& g = p.grad.data();
    if (m.size() != x.size() || g.size() != x.size()) {
      throw Error(ErrorCode::ShapeMismatch, "Adam moment shape differs from " + p.name, p.name);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      x[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

void validate_schedule(const ScheduleConfig& cfg) {
  if (!(cfg.lr_init_image > 0.0)) throw Error(ErrorCode::InvalidConfig, "lr_init_image must be > 0", "lr_init_image");
  if (!(cfg.lr_init_text > 0.0)) throw Error(ErrorCode::InvalidConfig, "lr_init_text must be > 0", "lr_init_text");
  if (cfg.t_max_warmup < 1) throw Error(ErrorCode::InvalidConfig, "t_max_warmup must be >= 1", "t_max_warmup");
  if (cfg.e_max < 1) throw Error(ErrorCode::InvalidConfig, "e_max must be >= 1", "e_max");
}

double warmup_lr(std::int64_t t, double lr_init, const ScheduleConfig& cfg) {
  if (t < 1 || t > cfg.t_max_warmup) {
    throw Error(ErrorCode::OutOfRangeIteration,
                "iteration " + std::to_string(t) + " outside warmup [1, " + std::to_string(cfg.t_max_warmup) + "]");
  }
  return lr_init * (static_cast<double>(t) / static_cast<double>(cfg.t_max_warmup));
}

double poly_lr(std::int64_t e, double lr_init, const ScheduleConfig& cfg) {
  if (e < 0 || e > cfg.e_max) {
    throw Error(ErrorCode::OutOfRangeEpoch,
                "epoch " + std::to_string(e) + " outside [0, " + std::to_string(cfg.e_max) + "]");
  }
  return lr_init * std::pow(1.0 - static_cast<double>(e) / static_cast<double>(cfg.e_max), cfg.poly_power);
}

double scheduled_lr(std::int64_t t, double lr_init, const ScheduleConfig& cfg, std::int64_t iterations_per_epoch) {
  if (t < 1) throw Error(ErrorCode::OutOfRangeIteration, "iterations are 1-based");
  if (t <= cfg.t_max_warmup) return warmup_lr(t, lr_init, cfg);
  const std::int64_t epoch = (t - cfg.t_max_warmup - 1) / iterations_per_epoch;
  return poly_lr(std::min(epoch, cfg.e_max), lr_init, cfg);
}

}  // namespace selip
