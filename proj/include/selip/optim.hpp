#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "selip/autodiff.hpp"
#include "selip/matrix.hpp"

namespace selip {

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamState&) const = default;
};

// Zero moments shaped like `params`.
AdamState make_adam_state(std::span<Parameter* const> params, double beta1 = 0.9, double beta2 = 0.999,
                          double eps = 1e-8);

// One bias-corrected Adam update from the gradients stored in `params`.
void adam_step(AdamState& state, std::span<Parameter* const> params, double lr);

struct ScheduleConfig {
  double lr_init_image = 1e-4;
  double lr_init_text = 5e-5;
  std::int64_t t_max_warmup = 5000;
  std::int64_t e_max = 100;
  double poly_power = 0.9;
};

void validate_schedule(const ScheduleConfig& cfg);

// lr_init * t / t_max for 1 <= t <= t_max.
double warmup_lr(std::int64_t t, double lr_init, const ScheduleConfig& cfg);
// lr_init * (1 - e / e_max)^power for 0 <= e <= e_max.
double poly_lr(std::int64_t e, double lr_init, const ScheduleConfig& cfg);

// Rate for 1-based training iteration t: warmup for t <= t_max, then the
// polynomial decay indexed by completed post-warmup epochs (clamped at e_max).
double scheduled_lr(std::int64_t t, double lr_init, const ScheduleConfig& cfg, std::int64_t iterations_per_epoch);

}  // namespace selip
