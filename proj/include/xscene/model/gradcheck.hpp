#pragma once

// Finite-difference checks of every layer and of the full training objective
// at small shapes.

#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "xscene/model/dual_autoencoder.hpp"
#include "xscene/nn/gradcheck.hpp"

namespace xscene::model {

/// Small architecture used by the objective check: 8x8 maps, two stride-2 convs.
inline ArchConfig tiny_arch() {
  ArchConfig a;
  a.width = 8;
  a.conv_channels = {3, 2};
  a.encoder_fc = {6};
  a.latent_dim = 2;
  a.decoder_fc = {5};
  return a;
}

/// Gradient of the batch objective (both reconstructions plus the weighted
/// latent term) with respect to every parameter of both auto-encoders.
inline nn::GradCheckReport check_objective(LossForm form, std::uint64_t seed, const nn::GradCheckConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  TrainedModel m(tiny_arch());
  m.scene_a.init(rng);
  m.scene_b.init(rng);
  // Zero biases put units with all-zero inputs exactly on the ReLU kink, where
  // no finite difference is meaningful; move to a generic point instead.
  std::uniform_real_distribution<double> shift(-0.1, 0.1);
  for (auto* ae : {&m.scene_a, &m.scene_b})
    for (auto& [name, p] : ae->named_parameters())
      if (name.ends_with(".bias"))
        for (auto& v : p->value.data()) v = shift(rng);
  TimeDistanceConfig time;
  const std::size_t n = 2, w = m.arch.width;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  nn::Tensor xa({n, w, w, 4}), xb({n, w, w, 4});
  for (auto& v : xa.data()) v = u(rng);
  for (auto& v : xb.data()) v = u(rng);
  std::uniform_real_distribution<double> dt(0.0, 30.0);
  const std::vector<double> weights = {latent_weight(dt(rng), time), latent_weight(dt(rng), time)};

  m.zero_grad();
  accumulate_pair_gradients(m, xa, xb, weights, form, time);
  std::vector<nn::Probe> probes;
  for (const auto& side : {std::pair<std::string, AutoEncoder*>{"a/", &m.scene_a}, {"b/", &m.scene_b}})
    for (auto& [name, p] : side.second->named_parameters())
      probes.push_back({side.first + name, &p->value.storage(),
                        std::vector<double>(p->value.grad().begin(), p->value.grad().end())});

  auto loss = [&] { return accumulate_pair_gradients(m, xa, xb, weights, form, time).total; };
  auto pattern = [&] {
    auto p = m.scene_a.activation_pattern();
    auto q = m.scene_b.activation_pattern();
    p.insert(p.end(), q.begin(), q.end());
    return p;
  };
  return nn::check_probes(probes, loss, pattern, cfg);
}

struct GradCheckEntry {
  std::string subject;
  std::uint64_t seed = 0;
  double worst = 0.0;
  bool passed = false;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GradCheckEntry, subject, seed, worst, passed)

/// Every layer kind and the objective (all loss forms) over `seeds` seeds.
inline std::vector<GradCheckEntry> gradient_check_suite(std::size_t seeds, const nn::GradCheckConfig& cfg = {}) {
  std::vector<GradCheckEntry> out;
  auto record = [&](const std::string& subject, std::uint64_t seed, const nn::GradCheckReport& r) {
    out.push_back({subject, seed, r.worst(), r.passed(cfg.tolerance)});
  };
  for (std::uint64_t s = 1; s <= seeds; ++s) {
    std::mt19937_64 rng(s);
    {
      nn::Conv2d c(3, 4, 3, 1);
      c.init(rng);
      record("conv2d_stride1", s, nn::check_layer(c, nn::random_tensor({2, 5, 5, 3}, rng), rng, cfg));
    }
    {
      nn::Conv2d c(2, 3, 3, 2);
      c.init(rng);
      record("conv2d_stride2", s, nn::check_layer(c, nn::random_tensor({2, 8, 8, 2}, rng), rng, cfg));
    }
    {
      nn::Dense d(7, 5);
      d.init(rng);
      record("fc", s, nn::check_layer(d, nn::random_tensor({3, 7}, rng), rng, cfg));
    }
    {
      nn::Upsample2x up;
      record("upsample2x", s, nn::check_layer(up, nn::random_tensor({2, 3, 3, 2}, rng), rng, cfg));
    }
    {
      nn::UpsampleConv2d uc(3, 2, 3);
      uc.init(rng);
      record("upsample2x_conv", s, nn::check_layer(uc, nn::random_tensor({2, 4, 4, 3}, rng), rng, cfg));
    }
    {
      nn::Relu r;
      record("relu", s, nn::check_layer(r, nn::random_tensor({4, 6}, rng), rng, cfg));
    }
    {
      nn::Reshape r({12});
      record("reshape", s, nn::check_layer(r, nn::random_tensor({2, 2, 3, 2}, rng), rng, cfg));
    }
    record("objective_mean_squared", s, check_objective(LossForm::mean_squared, s, cfg));
    record("objective_norm", s, check_objective(LossForm::norm, s, cfg));
    record("objective_squared", s, check_objective(LossForm::squared, s, cfg));
  }
  return out;
}

}  // namespace xscene::model
