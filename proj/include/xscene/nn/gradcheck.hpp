#pragma once

// Central finite-difference checks of analytic gradients, shared by the unit
// tests, the acceptance runner and the reproduce report.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "xscene/nn/layers.hpp"

namespace xscene::nn {

struct GradCheckConfig {
  double step = 1e-5;
  double tolerance = 1e-4;
  double floor = 1e-8;  // denominators below this compare absolutely
};

struct TensorCheck {
  std::string name;
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
  std::size_t entries = 0;
  std::size_t skipped = 0;  // entries whose +-step probes crossed a ReLU kink
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TensorCheck, name, relative_error, entries, skipped)

struct GradCheckReport {
  std::vector<TensorCheck> tensors;

  double worst() const {
    double w = 0.0;
    for (const auto& t : tensors) w = std::max(w, t.relative_error);
    return w;
  }
  bool passed(double tolerance) const {
    for (const auto& t : tensors)
      if (!(t.relative_error < tolerance) || t.entries == t.skipped) return false;
    return !tensors.empty();
  }
};

/// A differentiable quantity to probe: `values` points at the numbers that get
/// perturbed, `analytic` at the gradient the model computed for them.
struct Probe {
  std::string name;
  std::vector<double>* values = nullptr;
  std::vector<double> analytic;
};

/// `loss` evaluates the scalar at the current values. `pattern` (optional)
/// returns the ReLU activation signature; an entry is skipped when either probe
/// lands in a different linear region than the unperturbed point, since the
/// finite difference is then not an estimate of the derivative.
inline GradCheckReport check_probes(std::vector<Probe>& probes, const std::function<double()>& loss,
                                    const std::function<std::vector<bool>()>& pattern, const GradCheckConfig& cfg = {}) {
  std::vector<bool> base;
  if (pattern) {
    loss();
    base = pattern();
  }
  GradCheckReport report;
  for (auto& p : probes) {
    auto& v = *p.values;
    double diff = 0.0, na = 0.0, nn = 0.0;
    TensorCheck t{p.name, 0.0, v.size(), 0};
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + cfg.step;
      const double up = loss();
      const bool up_same = !pattern || pattern() == base;
      v[i] = keep - cfg.step;
      const double down = loss();
      const bool down_same = !pattern || pattern() == base;
      v[i] = keep;
      if (!up_same || !down_same) {
        ++t.skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * cfg.step);
      diff += (numeric - p.analytic[i]) * (numeric - p.analytic[i]);
      na += p.analytic[i] * p.analytic[i];
      nn += numeric * numeric;
    }
    t.relative_error = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), cfg.floor});
    report.tensors.push_back(t);
  }
  return report;
}

/// Checks one layer under the scalar loss sum(w * layer(x)) with random w:
/// input gradient plus every parameter gradient.
template <class L>
GradCheckReport check_layer(L& layer, Tensor x, std::mt19937_64& rng, const GradCheckConfig& cfg = {}) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const Tensor y0 = layer.forward(x);
  std::vector<double> w(y0.size());
  for (auto& v : w) v = nd(rng);

  auto weighted = [&](const Tensor& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };
  std::vector<Parameter*> params;
  if constexpr (requires { layer.weight; }) params = {&layer.weight, &layer.bias};
  for (auto* p : params) p->value.zero_grad();
  layer.forward(x);
  const Tensor dx = layer.backward(Tensor(y0.shape(), w), true);

  std::vector<Probe> probes;
  probes.push_back({"input", &x.storage(), dx.storage()});
  for (auto* p : params)
    probes.push_back({p->name, &p->value.storage(), std::vector<double>(p->value.grad().begin(), p->value.grad().end())});

  auto loss = [&] { return weighted(layer.forward(x)); };
  std::function<std::vector<bool>()> pattern;
  if constexpr (std::is_same_v<L, Relu>) pattern = [&] { return layer.mask(); };
  return check_probes(probes, loss, pattern, cfg);
}

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Tensor t(shape);
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

}  // namespace xscene::nn
