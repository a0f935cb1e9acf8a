#pragma once

// Sliding-window smoother: re-optimizes the variables of the last N_w
// timesteps; older variables stay in the value store as constants.

#include <algorithm>
#include <vector>

#include "mbfg/solver.hpp"

namespace mbfg {

class FixedLagSmoother {
 public:
  explicit FixedLagSmoother(int window, LMConfig config = {})
      : window_(window), config_(std::move(config)) {
    if (window_ < 1) throw ConfigurationError("fixed-lag window must be >= 1");
  }

  void add_variable(const VariableKey& k, Vector initial) {
    const int dim = static_cast<int>(initial.size());
    values_.insert(k, std::move(initial));
    dims_.emplace(k, dim);
    latest_ = std::max(latest_, k.timestep);
  }

  void add_factor(FactorPtr f) {
    for (const auto& k : f->keys())
      if (!dims_.count(k))
        throw ConfigurationError(std::string(f->name()) + " references unknown " + k.str());
    live_.push_back(std::move(f));
  }

  /// First timestep still free.
  int window_start() const { return latest_ - window_ + 1; }

  /// Drops factors that only touch frozen variables and optimizes the window.
  LMSummary update() {
    const int start = window_start();
    std::erase_if(live_, [start](const FactorPtr& f) {
      return std::all_of(f->keys().begin(), f->keys().end(),
                         [start](const VariableKey& k) { return k.timestep < start; });
    });
    Ordering ordering;
    for (auto it = dims_.lower_bound(VariableKey(VarKind::q, start)); it != dims_.end(); ++it)
      ordering.push(it->first, it->second);
    const LMSummary s = optimize_lm_inplace(live_, values_, ordering, config_);
    history_.push_back(s);
    return s;
  }

  /// Current estimates of the free variables.
  Values window_values() const {
    Values out;
    for (const auto& [k, v] : values_)
      if (k.timestep >= window_start()) out.insert(k, v);
    return out;
  }

  const Values& values() const { return values_; }
  int window() const { return window_; }
  int latest() const { return latest_; }
  std::size_t live_factor_count() const { return live_.size(); }
  const std::vector<LMSummary>& history() const { return history_; }

 private:
  int window_;
  LMConfig config_;
  Values values_;
  std::map<VariableKey, int> dims_;
  std::vector<FactorPtr> live_;
  std::vector<LMSummary> history_;
  int latest_ = -1;
};

/// Adds one timestep's variables and factors, solves, and returns the window.
inline Values fixed_lag_step(FixedLagSmoother& smoother,
                             const std::vector<std::pair<VariableKey, Vector>>& variables,
                             const std::vector<FactorPtr>& factors) {
  for (const auto& [k, v] : variables) smoother.add_variable(k, v);
  for (const auto& f : factors) smoother.add_factor(f);
  smoother.update();
  return smoother.window_values();
}

}  // namespace mbfg
