#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "xscene/common/error.hpp"

namespace xscene::nn {

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // d value / d prediction
};

inline void require_equal_length(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size())
    fail(ErrorKind::input, std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                               std::to_string(b.size()));
}

/// sum (p - t)^2
inline LossResult squared_l2(std::span<const double> pred, std::span<const double> target) {
  require_equal_length(pred, target, "squared_l2");
  LossResult r{0.0, std::vector<double>(pred.size())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    r.value += d * d;
    r.grad[i] = 2.0 * d;
  }
  return r;
}

/// ||p - t||_2. The gradient at p == t is taken as zero.
inline LossResult l2_norm(std::span<const double> pred, std::span<const double> target) {
  auto r = squared_l2(pred, target);
  r.value = std::sqrt(r.value);
  const double scale = r.value > 0.0 ? 0.5 / r.value : 0.0;
  for (auto& g : r.grad) g *= scale;
  return r;
}

inline LossResult mean_squared(std::span<const double> pred, std::span<const double> target) {
  auto r = squared_l2(pred, target);
  const double n = static_cast<double>(pred.size());
  r.value /= n;
  for (auto& g : r.grad) g /= n;
  return r;
}

}  // namespace xscene::nn
