#pragma once

#include <limits>
#include <vector>

#include "salm/error.hpp"

namespace salm {

/// Comparisons treat improvements smaller than this as plateaus.
inline constexpr double kImprovementTol = 1e-6;

/// Multiply the learning rate by `factor` whenever the validation loss fails
/// to improve on the best seen so far.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(double lr, double factor = 0.25) : lr_(lr), factor_(factor) {}

  double lr() const { return lr_; }

  double observe(double valid_loss) {
    if (valid_loss < best_ - kImprovementTol) {
      best_ = valid_loss;
    } else {
      lr_ *= factor_;
    }
    return lr_;
  }

 private:
  double lr_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
};

inline double linear_decay(long long step, long long total_steps, double lr0) {
  if (step < 0 || step > total_steps) {
    throw ConfigError("linear_decay step out of range 0..total_steps");
  }
  if (total_steps == 0) return lr0;
  return lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

/// True when the best loss was achieved `patience` or more evaluations ago.
inline bool early_stop(const std::vector<double>& history, int patience = 4) {
  if (history.empty()) return false;
  std::size_t best_idx = 0;
  double best = history[0];
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] < best - kImprovementTol) {
      best = history[i];
      best_idx = i;
    }
  }
  return history.size() - 1 - best_idx >= static_cast<std::size_t>(patience);
}

}  // namespace salm
