#pragma once

// Two auto-encoders joined through a shared latent space. Scene maps of both
// scenes are encoded independently; a correlation loss pulls the codes of
// observations taken at nearby times together, and cross-scene prediction
// composes one scene's encoder with the other scene's decoder.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xscene/common/error.hpp"
#include "xscene/mapgen/render.hpp"
#include "xscene/mapgen/scene_map.hpp"
#include "xscene/model/architecture.hpp"
#include "xscene/model/time_distance.hpp"
#include "xscene/nn/checkpoint.hpp"
#include "xscene/nn/loss.hpp"
#include "xscene/nn/optimizer.hpp"

namespace xscene::model {

/// How the norm terms enter: ||.||_2 (reported values), ||.||_2^2, or
/// ||.||_2^2 with the reconstruction terms divided by the map entry count.
enum class LossForm { norm, squared, mean_squared };

NLOHMANN_JSON_SERIALIZE_ENUM(LossForm, {{LossForm::norm, "norm"},
                                        {LossForm::squared, "squared"},
                                        {LossForm::mean_squared, "mean_squared"}})

struct TrainConfig {
  nn::AdamConfig adam;
  std::size_t batch_size = 8;
  std::size_t epochs = 200;
  std::size_t random_pairs = 4;  // extra cross pairs drawn per epoch
  std::uint64_t seed = 1;
  LossForm loss_form = LossForm::mean_squared;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, adam, batch_size, epochs, random_pairs, seed, loss_form)

/// Pairing of obs_a[a] with obs_b[b].
struct TrainingPair {
  std::size_t a = 0;
  std::size_t b = 0;
  double delta_t = 0.0;
  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

struct EpochLog {
  std::size_t epoch = 0;
  double objective = 0.0;
  double recon_a = 0.0;
  double recon_b = 0.0;
  double latent = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EpochLog, epoch, objective, recon_a, recon_b, latent)

enum class Direction { a_to_b, b_to_a };

inline SceneId source_scene(Direction d) { return d == Direction::a_to_b ? SceneId::a : SceneId::b; }
inline SceneId target_scene(Direction d) { return d == Direction::a_to_b ? SceneId::b : SceneId::a; }
inline std::string_view to_string(Direction d) { return d == Direction::a_to_b ? "a->b" : "b->a"; }

struct TrainedModel {
  ArchConfig arch;
  AutoEncoder scene_a;
  AutoEncoder scene_b;
  double scale = 1.0;  // maps are divided by this before entering the network
  TimeDistanceConfig time;
  TrainConfig train;
  std::vector<EpochLog> curve;
  std::size_t best_epoch = 0;

  TrainedModel() = default;
  explicit TrainedModel(const ArchConfig& a) : arch(a), scene_a(a), scene_b(a) {}

  AutoEncoder& path(SceneId s) { return s == SceneId::a ? scene_a : scene_b; }
  const AutoEncoder& path(SceneId s) const { return s == SceneId::a ? scene_a : scene_b; }

  std::vector<nn::Parameter*> parameters() {
    auto out = scene_a.parameters();
    for (auto* p : scene_b.parameters()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    scene_a.zero_grad();
    scene_b.zero_grad();
  }
};

// ---- normalization and batching ----------------------------------------------

/// 99th percentile of the positive counts over all maps (1 when every map is empty).
inline double normalization_scale(std::span<const mapgen::SceneMap* const> maps) {
  std::vector<double> positive;
  for (const auto* m : maps)
    for (double v : m->data)
      if (v > 0.0) positive.push_back(v);
  if (positive.empty()) return 1.0;
  return mapgen::percentile(std::move(positive), 0.99);
}

/// Stacks maps into an [N, H, W, 4] tensor divided by `scale`.
inline nn::Tensor stack_maps(std::span<const mapgen::SceneMap* const> maps, double scale) {
  require(!maps.empty(), ErrorKind::input, "stack_maps: empty batch");
  const auto w = static_cast<std::size_t>(maps.front()->width);
  const auto h = static_cast<std::size_t>(maps.front()->height);
  nn::Tensor t({maps.size(), h, w, static_cast<std::size_t>(mapgen::kChannels)});
  const std::size_t per = h * w * mapgen::kChannels;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    mapgen::require_same_shape(*maps.front(), *maps[k], "stack_maps");
    for (std::size_t i = 0; i < per; ++i) t[k * per + i] = maps[k]->data[i] / scale;
  }
  return t;
}

inline void require_model_shape(const ArchConfig& arch, const mapgen::SceneMap& m) {
  if (static_cast<std::size_t>(m.width) != arch.width || static_cast<std::size_t>(m.height) != arch.width)
    fail(ErrorKind::input, "map is " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                               " but the model expects " + std::to_string(arch.width) + "x" +
                               std::to_string(arch.width));
}

// ---- losses --------------------------------------------------------------------


struct LossBreakdown {
  double recon_a = 0.0;
  double recon_b = 0.0;
  double latent = 0.0;  // exp(-c dt) * ||Z_a - Z_b||
  double total = 0.0;   // recon_a + recon_b + lambda * latent
};

/// Forward + backward over a batch of (S_a, S_b, weight) triples. Adds
/// grad_scale * d(sum of per-pair totals) to the parameter gradients and
/// returns the per-term sums.
inline LossBreakdown accumulate_pair_gradients(TrainedModel& m, const nn::Tensor& xa, const nn::Tensor& xb,
                                               std::span<const double> weights, LossForm form,
                                               const TimeDistanceConfig& time, double grad_scale = 1.0) {
  const std::size_t n = xa.dim(0);
  require(xb.dim(0) == n && weights.size() == n, ErrorKind::input, "pair batch: inconsistent batch sizes");
  const nn::Tensor za = m.scene_a.encode(xa);
  const nn::Tensor zb = m.scene_b.encode(xb);
  const nn::Tensor ya = m.scene_a.decode(za);
  const nn::Tensor yb = m.scene_b.decode(zb);

  auto loss = [&](std::span<const double> p, std::span<const double> t) {
    return form == LossForm::norm ? nn::l2_norm(p, t) : nn::squared_l2(p, t);
  };
  auto recon = [&](std::span<const double> p, std::span<const double> t) {
    return form == LossForm::mean_squared ? nn::mean_squared(p, t) : loss(p, t);
  };

  LossBreakdown sum;
  nn::Tensor gya(ya.shape()), gyb(yb.shape()), gza(za.shape()), gzb(zb.shape());
  const std::size_t per = ya.size() / n, dz = za.size() / n;
  for (std::size_t s = 0; s < n; ++s) {
    const auto ra = recon(ya.data().subspan(s * per, per), xa.data().subspan(s * per, per));
    const auto rb = recon(yb.data().subspan(s * per, per), xb.data().subspan(s * per, per));
    const auto rz = loss(za.data().subspan(s * dz, dz), zb.data().subspan(s * dz, dz));
    sum.recon_a += ra.value;
    sum.recon_b += rb.value;
    sum.latent += weights[s] * rz.value;
    for (std::size_t i = 0; i < per; ++i) {
      gya[s * per + i] = grad_scale * ra.grad[i];
      gyb[s * per + i] = grad_scale * rb.grad[i];
    }
    const double zscale = grad_scale * time.lambda * weights[s];
    for (std::size_t i = 0; i < dz; ++i) {
      gza[s * dz + i] = zscale * rz.grad[i];
      gzb[s * dz + i] = -zscale * rz.grad[i];
    }
  }
  sum.total = sum.recon_a + sum.recon_b + time.lambda * sum.latent;

  nn::Tensor da = m.scene_a.backward_decode(gya);
  nn::Tensor db = m.scene_b.backward_decode(gyb);
  for (std::size_t i = 0; i < da.size(); ++i) da[i] += gza[i];
  for (std::size_t i = 0; i < db.size(); ++i) db[i] += gzb[i];
  m.scene_a.backward_encode(da);
  m.scene_b.backward_encode(db);
  return sum;
}

/// Loss terms of one observation pair, on maps normalized by the model scale.
inline LossBreakdown losses(const mapgen::SceneMap& map_a, const mapgen::SceneMap& map_b, double delta_t,
                            const TrainedModel& model, const TimeDistanceConfig& time) {
  require_model_shape(model.arch, map_a);
  require_model_shape(model.arch, map_b);
  TrainedModel m = model;
  const mapgen::SceneMap* pa = &map_a;
  const mapgen::SceneMap* pb = &map_b;
  const nn::Tensor xa = stack_maps({&pa, 1}, m.scale);
  const nn::Tensor xb = stack_maps({&pb, 1}, m.scale);
  const nn::Tensor za = m.scene_a.encode(xa);
  const nn::Tensor zb = m.scene_b.encode(xb);
  LossBreakdown r;
  r.recon_a = nn::l2_norm(m.scene_a.decode(za).data(), xa.data()).value;
  r.recon_b = nn::l2_norm(m.scene_b.decode(zb).data(), xb.data()).value;
  r.latent = latent_weight(delta_t, time) * nn::l2_norm(za.data(), zb.data()).value;
  r.total = r.recon_a + r.recon_b + time.lambda * r.latent;
  return r;
}

// ---- pairing -------------------------------------------------------------------

inline std::size_t nearest_in_time(double t, std::span<const double> times, const TimeDistanceConfig& cfg) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < times.size(); ++j)
    if (dis(t, times[j], cfg) < dis(t, times[best], cfg)) best = j;
  return best;
}

/// Nearest-in-time partner for every scene-a map, then for every scene-b map
/// still unpaired, plus `random_pairs` uniformly drawn cross pairs.
inline std::vector<TrainingPair> build_training_pairs(std::span<const double> times_a, std::span<const double> times_b,
                                                      const TimeDistanceConfig& cfg, std::mt19937_64& rng,
                                                      std::size_t random_pairs) {
  require(!times_a.empty() && !times_b.empty(), ErrorKind::input, "build_training_pairs: empty observation set");
  std::vector<TrainingPair> pairs;
  std::vector<bool> b_used(times_b.size(), false);
  for (std::size_t i = 0; i < times_a.size(); ++i) {
    const std::size_t j = nearest_in_time(times_a[i], times_b, cfg);
    pairs.push_back({i, j, dis(times_a[i], times_b[j], cfg)});
    b_used[j] = true;
  }
  for (std::size_t j = 0; j < times_b.size(); ++j) {
    if (b_used[j]) continue;
    const std::size_t i = nearest_in_time(times_b[j], times_a, cfg);
    pairs.push_back({i, j, dis(times_a[i], times_b[j], cfg)});
  }
  std::uniform_int_distribution<std::size_t> pick_a(0, times_a.size() - 1), pick_b(0, times_b.size() - 1);
  for (std::size_t k = 0; k < random_pairs; ++k) {
    const std::size_t i = pick_a(rng), j = pick_b(rng);
    pairs.push_back({i, j, dis(times_a[i], times_b[j], cfg)});
  }
  return pairs;
}

inline std::vector<double> timestamps(std::span<const mapgen::SceneMap> maps) {
  std::vector<double> t;
  t.reserve(maps.size());
  for (const auto& m : maps) t.push_back(m.timestamp);
  return t;
}

// ---- training ------------------------------------------------------------------

inline bool all_finite(std::span<nn::Parameter* const> params) {
  for (const auto* p : params)
    for (double g : p->value.grad())
      if (!std::isfinite(g)) return false;
  return true;
}

struct ParameterSnapshot {
  std::vector<std::vector<double>> values;

  static ParameterSnapshot take(std::span<nn::Parameter* const> params) {
    ParameterSnapshot s;
    for (const auto* p : params) s.values.push_back(p->value.storage());
    return s;
  }
  void restore(std::span<nn::Parameter* const> params) const {
    for (std::size_t k = 0; k < params.size(); ++k)
      std::copy(values[k].begin(), values[k].end(), params[k]->value.storage().begin());
  }
};

/// Trains both auto-encoders on unsynchronized observations by minimizing
///   ||S_a - D_a(E_a S_a)||^2 + ||S_b - D_b(E_b S_b)||^2 + lambda exp(-c dt) ||Z_a - Z_b||^2
/// over the pairs of build_training_pairs (redrawn every epoch), averaged per
/// batch. The parameters of the epoch with the lowest mean objective are kept.
inline TrainedModel train(std::span<const mapgen::SceneMap> obs_a, std::span<const mapgen::SceneMap> obs_b,
                          const ArchConfig& arch, const TrainConfig& cfg, const TimeDistanceConfig& time) {
  require(!obs_a.empty() && !obs_b.empty(), ErrorKind::input, "train: empty observation set");
  require(cfg.batch_size >= 1 && cfg.epochs >= 1, ErrorKind::config, "train: batch_size and epochs must be positive");
  time.validate();
  for (const auto& m : obs_a) require_model_shape(arch, m);
  for (const auto& m : obs_b) require_model_shape(arch, m);

  TrainedModel model(arch);
  model.time = time;
  model.train = cfg;
  std::vector<const mapgen::SceneMap*> all;
  for (const auto& m : obs_a) all.push_back(&m);
  for (const auto& m : obs_b) all.push_back(&m);
  model.scale = normalization_scale(all);

  std::mt19937_64 rng(cfg.seed);
  model.scene_a.init(rng);
  model.scene_b.init(rng);
  auto params = model.parameters();
  nn::OptimizerState opt{cfg.adam, {}, {}, 0};

  const auto times_a = timestamps(obs_a);
  const auto times_b = timestamps(obs_b);
  double best = std::numeric_limits<double>::infinity();
  ParameterSnapshot best_params = ParameterSnapshot::take(params);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto pairs = build_training_pairs(times_a, times_b, time, rng, cfg.random_pairs);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    LossBreakdown epoch_sum;
    for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(pairs.size(), start + cfg.batch_size);
      std::vector<const mapgen::SceneMap*> ba, bb;
      std::vector<double> weights;
      for (std::size_t k = start; k < end; ++k) {
        ba.push_back(&obs_a[pairs[k].a]);
        bb.push_back(&obs_b[pairs[k].b]);
        weights.push_back(latent_weight(pairs[k].delta_t, time));
      }
      model.zero_grad();
      const auto batch = accumulate_pair_gradients(model, stack_maps(ba, model.scale), stack_maps(bb, model.scale),
                                                   weights, cfg.loss_form, time,
                                                   1.0 / static_cast<double>(end - start));
      if (!std::isfinite(batch.total) || !all_finite(params)) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << ", batch starting at pair " << start
            << " (objective " << batch.total << ", recon_a " << batch.recon_a << ", recon_b " << batch.recon_b
            << ", latent " << batch.latent << ", learning rate " << cfg.adam.learning_rate << ")";
        fail(ErrorKind::divergence, msg.str());
      }
      nn::optimizer_step(params, opt);
      epoch_sum.recon_a += batch.recon_a;
      epoch_sum.recon_b += batch.recon_b;
      epoch_sum.latent += batch.latent;
      epoch_sum.total += batch.total;
    }
    const double n = static_cast<double>(pairs.size());
    model.curve.push_back({epoch, epoch_sum.total / n, epoch_sum.recon_a / n, epoch_sum.recon_b / n, epoch_sum.latent / n});
    if (epoch_sum.total / n < best) {
      best = epoch_sum.total / n;
      model.best_epoch = epoch;
      best_params = ParameterSnapshot::take(params);
    }
  }
  // The logged objective of an epoch is measured before its own updates
  // finish, so the snapshot taken after it is the closest available.
  best_params.restore(params);
  model.scene_a.clear_state();
  model.scene_b.clear_state();
  return model;
}

// ---- prediction ----------------------------------------------------------------

/// Latent code of a map under its own scene's encoder.
inline std::vector<double> encode_map(const mapgen::SceneMap& map, const TrainedModel& model) {
  require_model_shape(model.arch, map);
  AutoEncoder enc = model.path(map.scene);
  const mapgen::SceneMap* p = &map;
  const nn::Tensor z = enc.encode(stack_maps({&p, 1}, model.scale));
  return z.storage();
}

inline mapgen::SceneMap denormalize(const nn::Tensor& y, const mapgen::SceneMap& like, SceneId scene, double scale) {
  mapgen::SceneMap out(scene, like.timestamp, like.width, like.height, like.cell_size);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::max(0.0, y[i] * scale);
  return out;
}

/// E_source followed by D_target; denormalized and clamped at zero.
inline mapgen::SceneMap predict_cross(const mapgen::SceneMap& map_in, Direction direction, const TrainedModel& model) {
  if (map_in.scene != source_scene(direction))
    fail(ErrorKind::input, "predict_cross: direction " + std::string(to_string(direction)) +
                               " expects a scene-" + std::string(to_string(source_scene(direction))) +
                               " map, got scene " + std::string(to_string(map_in.scene)));
  require_model_shape(model.arch, map_in);
  AutoEncoder enc = model.path(source_scene(direction));
  AutoEncoder dec = model.path(target_scene(direction));
  const mapgen::SceneMap* p = &map_in;
  const nn::Tensor z = enc.encode(stack_maps({&p, 1}, model.scale));
  return denormalize(dec.decode(z), map_in, target_scene(direction), model.scale);
}

/// Same-scene reconstruction D_s(E_s(S)).
inline mapgen::SceneMap reconstruct(const mapgen::SceneMap& map_in, const TrainedModel& model) {
  require_model_shape(model.arch, map_in);
  AutoEncoder ae = model.path(map_in.scene);
  const mapgen::SceneMap* p = &map_in;
  const nn::Tensor z = ae.encode(stack_maps({&p, 1}, model.scale));
  return denormalize(ae.decode(z), map_in, map_in.scene, model.scale);
}

// ---- persistence ---------------------------------------------------------------

inline std::vector<nn::NamedTensor> named_tensors(const std::string& prefix, AutoEncoder& ae) {
  std::vector<nn::NamedTensor> out;
  for (auto& [name, p] : ae.named_parameters()) out.push_back({prefix + name, &p->value});
  return out;
}

inline void load_named(const nn::Checkpoint& ck, const std::string& prefix, AutoEncoder& ae) {
  for (auto& [name, p] : ae.named_parameters()) {
    const auto it = ck.tensors.find(prefix + name);
    require(it != ck.tensors.end(), ErrorKind::input, "checkpoint lacks tensor " + prefix + name);
    nn::require_shape(it->second, p->value.shape(), "checkpoint tensor " + prefix + name);
    std::copy(it->second.data().begin(), it->second.data().end(), p->value.data().begin());
  }
}

inline nlohmann::json describe(const TrainedModel& m) {
  return {{"method", "ours"},
          {"arch", m.arch},
          {"layers", {{"a", m.scene_a.layer_specs()}, {"b", m.scene_b.layer_specs()}}},
          {"scale", m.scale},
          {"time", m.time},
          {"train", m.train},
          {"best_epoch", m.best_epoch}};
}

inline void save_model(const std::string& path, TrainedModel& m) {
  auto tensors = named_tensors("a/", m.scene_a);
  for (auto& t : named_tensors("b/", m.scene_b)) tensors.push_back(t);
  nn::write_checkpoint(path, describe(m), tensors);
}

inline TrainedModel load_model(const std::string& path) {
  const auto ck = nn::read_checkpoint(path);
  require(ck.architecture.value("method", "") == "ours", ErrorKind::input, path + ": not a shared-latent model checkpoint");
  TrainedModel m(ck.architecture.at("arch").get<ArchConfig>());
  m.scale = ck.architecture.at("scale");
  m.time = ck.architecture.at("time").get<TimeDistanceConfig>();
  m.train = ck.architecture.at("train").get<TrainConfig>();
  m.best_epoch = ck.architecture.value("best_epoch", std::size_t{0});
  load_named(ck, "a/", m.scene_a);
  load_named(ck, "b/", m.scene_b);
  return m;
}

}  // namespace xscene::model
