#pragma once

// Comparison predictors: direct scene-to-scene regression trained on
// synchronized pairs (E2E), the same regression conditioned on the time
// offset between input and target (E2E_dt), and per-pixel linear
// interpolation over the target scene's own history.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xscene/common/error.hpp"
#include "xscene/mapgen/scene_map.hpp"
#include "xscene/model/architecture.hpp"
#include "xscene/model/dual_autoencoder.hpp"
#include "xscene/model/time_distance.hpp"
#include "xscene/nn/checkpoint.hpp"
#include "xscene/nn/loss.hpp"
#include "xscene/nn/optimizer.hpp"

namespace xscene::baselines {

using model::Direction;

/// One supervised example: predict `target` from `input`, optionally
/// conditioned on a scalar.
struct RegressionExample {
  const mapgen::SceneMap* input = nullptr;
  const mapgen::SceneMap* target = nullptr;
  double condition = 0.0;
};

struct Regressor {
  model::AutoEncoder net;
  std::vector<model::EpochLog> curve;
  std::size_t best_epoch = 0;
};

/// Minimizes the batch-mean squared error of net(input) against target, keeping
/// the parameters of the epoch with the lowest mean loss.
inline Regressor train_regressor(std::span<const RegressionExample> examples, const model::ArchConfig& arch,
                                 const model::TrainConfig& cfg, double scale, std::uint64_t seed) {
  require(!examples.empty(), ErrorKind::input, "train_regressor: no training examples");
  Regressor r{model::AutoEncoder(arch), {}, 0};
  std::mt19937_64 rng(seed);
  r.net.init(rng);
  auto params = r.net.parameters();
  nn::OptimizerState opt{cfg.adam, {}, {}, 0};
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  auto best_params = model::ParameterSnapshot::take(params);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::size_t n = end - start;
      std::vector<const mapgen::SceneMap*> in, out;
      nn::Tensor cond({n, arch.condition_inputs});
      for (std::size_t k = start; k < end; ++k) {
        in.push_back(examples[order[k]].input);
        out.push_back(examples[order[k]].target);
        if (arch.condition_inputs > 0) cond[(k - start) * arch.condition_inputs] = examples[order[k]].condition;
      }
      const nn::Tensor x = model::stack_maps(in, scale);
      const nn::Tensor t = model::stack_maps(out, scale);
      r.net.zero_grad();
      const nn::Tensor y = r.net.decode(r.net.encode(x, cond));
      nn::Tensor g(y.shape());
      const std::size_t per = y.size() / n;
      double batch = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const auto l = nn::squared_l2(y.data().subspan(s * per, per), t.data().subspan(s * per, per));
        batch += l.value;
        for (std::size_t i = 0; i < per; ++i) g[s * per + i] = l.grad[i] / static_cast<double>(n);
      }
      r.net.backward_encode(r.net.backward_decode(g));
      if (!std::isfinite(batch) || !model::all_finite(params))
        fail(ErrorKind::divergence, "baseline training diverged at epoch " + std::to_string(epoch) +
                                        " (batch loss " + std::to_string(batch) + ", learning rate " +
                                        std::to_string(cfg.adam.learning_rate) + ")");
      nn::optimizer_step(params, opt);
      total += batch;
    }
    const double mean = total / static_cast<double>(order.size());
    r.curve.push_back({epoch, mean, mean, 0.0, 0.0});
    if (mean < best) {
      best = mean;
      r.best_epoch = epoch;
      best_params = model::ParameterSnapshot::take(params);
    }
  }
  best_params.restore(params);
  r.net.clear_state();
  return r;
}

enum class Method { ours, e2e, e2e_dt, linear };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::ours: return "ours";
    case Method::e2e: return "e2e";
    case Method::e2e_dt: return "e2e_dt";
    case Method::linear: return "linear";
  }
  return "?";
}

inline Method method_from_string(std::string_view s) {
  for (Method m : {Method::ours, Method::e2e, Method::e2e_dt, Method::linear})
    if (to_string(m) == s) return m;
  fail(ErrorKind::config, "unknown method '" + std::string(s) + "' (expected ours, e2e, e2e_dt or linear)");
}

/// A pair of direction-specific regressors (a->b, b->a).
struct E2EModel {
  Method method = Method::e2e;
  model::ArchConfig arch;
  model::TrainConfig train;
  model::TimeDistanceConfig time;
  double scale = 1.0;
  Regressor a_to_b;
  Regressor b_to_a;

  const Regressor& net(Direction d) const { return d == Direction::a_to_b ? a_to_b : b_to_a; }
};

inline double combined_scale(std::span<const mapgen::SceneMap> a, std::span<const mapgen::SceneMap> b) {
  std::vector<const mapgen::SceneMap*> all;
  for (const auto& m : a) all.push_back(&m);
  for (const auto& m : b) all.push_back(&m);
  return model::normalization_scale(all);
}

/// Plain end-to-end regression on synchronized training pairs only.
/// `pairs` lists (index into obs_a, index into obs_b) with identical timestamps.
inline E2EModel train_e2e(std::span<const mapgen::SceneMap> obs_a, std::span<const mapgen::SceneMap> obs_b,
                          std::span<const std::pair<std::size_t, std::size_t>> pairs, const model::ArchConfig& arch,
                          const model::TrainConfig& cfg) {
  if (pairs.empty()) fail(ErrorKind::missing, "no pairwise data: e2e needs synchronized training observations");
  require(arch.condition_inputs == 0, ErrorKind::config, "e2e takes no conditioning input");
  E2EModel m;
  m.method = Method::e2e;
  m.arch = arch;
  m.train = cfg;
  m.scale = combined_scale(obs_a, obs_b);
  std::vector<RegressionExample> ab, ba;
  for (auto [i, j] : pairs) {
    require(obs_a[i].timestamp == obs_b[j].timestamp, ErrorKind::input, "train_e2e: pair is not synchronized");
    ab.push_back({&obs_a[i], &obs_b[j], 0.0});
    ba.push_back({&obs_b[j], &obs_a[i], 0.0});
  }
  m.a_to_b = train_regressor(ab, arch, cfg, m.scale, cfg.seed);
  m.b_to_a = train_regressor(ba, arch, cfg, m.scale, cfg.seed + 1);
  return m;
}

/// Time offset fed to E2E_dt: signed minutes from input to target divided by P/2.
inline double delta_t_feature(double t_in, double t_target, const model::TimeDistanceConfig& time) {
  return model::signed_offset(t_in, t_target, time) / (time.period / 2.0);
}

/// End-to-end regression on nearest-in-time cross pairs with the time offset
/// appended to the encoder's first fully connected input.
inline E2EModel train_e2e_dt(std::span<const mapgen::SceneMap> obs_a, std::span<const mapgen::SceneMap> obs_b,
                             model::ArchConfig arch, const model::TrainConfig& cfg,
                             const model::TimeDistanceConfig& time) {
  require(!obs_a.empty() && !obs_b.empty(), ErrorKind::input, "train_e2e_dt: empty observation set");
  arch.condition_inputs = 1;
  E2EModel m;
  m.method = Method::e2e_dt;
  m.arch = arch;
  m.train = cfg;
  m.time = time;
  m.scale = combined_scale(obs_a, obs_b);
  std::mt19937_64 unused(0);
  const auto ta = model::timestamps(obs_a), tb = model::timestamps(obs_b);
  const auto pairs = model::build_training_pairs(ta, tb, time, unused, 0);
  std::vector<RegressionExample> ab, ba;
  for (const auto& p : pairs) {
    const auto& sa = obs_a[p.a];
    const auto& sb = obs_b[p.b];
    ab.push_back({&sa, &sb, delta_t_feature(sa.timestamp, sb.timestamp, time)});
    ba.push_back({&sb, &sa, delta_t_feature(sb.timestamp, sa.timestamp, time)});
  }
  m.a_to_b = train_regressor(ab, arch, cfg, m.scale, cfg.seed);
  m.b_to_a = train_regressor(ba, arch, cfg, m.scale, cfg.seed + 1);
  return m;
}

/// Prediction of the other scene at the input's timestamp (time offset 0 for E2E_dt
/// unless `delta_t_minutes` is given).
inline mapgen::SceneMap predict_e2e(const mapgen::SceneMap& map_in, Direction direction, const E2EModel& m,
                                    double delta_t_minutes = 0.0) {
  if (map_in.scene != model::source_scene(direction))
    fail(ErrorKind::input, "predict_e2e: direction " + std::string(model::to_string(direction)) +
                               " does not accept a scene-" + std::string(to_string(map_in.scene)) + " map");
  model::require_model_shape(m.arch, map_in);
  model::AutoEncoder net = m.net(direction).net;
  const mapgen::SceneMap* p = &map_in;
  nn::Tensor cond({1, m.arch.condition_inputs});
  if (m.arch.condition_inputs > 0) cond[0] = delta_t_minutes / (m.time.period / 2.0);
  const nn::Tensor y = net.decode(net.encode(model::stack_maps({&p, 1}, m.scale), cond));
  mapgen::SceneMap out = model::denormalize(y, map_in, model::target_scene(direction), m.scale);
  out.timestamp = map_in.timestamp + delta_t_minutes;
  return out;
}

inline void save_e2e(const std::string& path, E2EModel& m) {
  std::vector<nn::NamedTensor> tensors;
  for (auto& t : model::named_tensors("a_to_b/", m.a_to_b.net)) tensors.push_back(t);
  for (auto& t : model::named_tensors("b_to_a/", m.b_to_a.net)) tensors.push_back(t);
  nlohmann::json header = {{"method", to_string(m.method)}, {"arch", m.arch},  {"scale", m.scale},
                           {"time", m.time},                {"train", m.train},
                           {"best_epoch", {m.a_to_b.best_epoch, m.b_to_a.best_epoch}},
                           {"layers", m.a_to_b.net.layer_specs()}};
  nn::write_checkpoint(path, header, tensors);
}

inline E2EModel load_e2e(const std::string& path) {
  const auto ck = nn::read_checkpoint(path);
  const Method method = method_from_string(ck.architecture.value("method", ""));
  require(method == Method::e2e || method == Method::e2e_dt, ErrorKind::input, path + ": not an end-to-end checkpoint");
  E2EModel m;
  m.method = method;
  m.arch = ck.architecture.at("arch").get<model::ArchConfig>();
  m.scale = ck.architecture.at("scale");
  m.time = ck.architecture.at("time").get<model::TimeDistanceConfig>();
  m.train = ck.architecture.at("train").get<model::TrainConfig>();
  m.a_to_b.net = model::AutoEncoder(m.arch);
  m.b_to_a.net = model::AutoEncoder(m.arch);
  model::load_named(ck, "a_to_b/", m.a_to_b.net);
  model::load_named(ck, "b_to_a/", m.b_to_a.net);
  return m;
}

/// Linear interpolation/extrapolation in time over the target scene's history:
/// the two maps with smallest dis to t (distinct times, unwrapped to the side of
/// t they lie on) define S(t) = (S2 - S1) / (t2 - t1) * (t - t2) + S2, where S2
/// is the nearer one. Negative values are clamped to zero.
inline mapgen::SceneMap predict_linear(std::span<const mapgen::SceneMap> history, double t,
                                       const model::TimeDistanceConfig& time) {
  require(history.size() >= 2, ErrorKind::input, "predict_linear: need at least two history maps");
  std::vector<std::size_t> order(history.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return model::dis(history[x].timestamp, t, time) < model::dis(history[y].timestamp, t, time);
  });
  const auto& s2 = history[order[0]];
  const mapgen::SceneMap* s1 = nullptr;
  for (std::size_t k = 1; k < order.size() && !s1; ++k)
    if (model::dis(history[order[k]].timestamp, s2.timestamp, time) > 0.0) s1 = &history[order[k]];
  require(s1 != nullptr, ErrorKind::input, "predict_linear: history holds a single distinct timestamp");
  mapgen::require_same_shape(*s1, s2, "predict_linear");

  const double t2 = t + model::signed_offset(t, s2.timestamp, time);
  const double t1 = t + model::signed_offset(t, s1->timestamp, time);
  const double slope_scale = (t - t2) / (t2 - t1);
  mapgen::SceneMap out = s2;
  out.timestamp = t;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::max(0.0, (s2.data[i] - s1->data[i]) * slope_scale + s2.data[i]);
  return out;
}

}  // namespace xscene::baselines
