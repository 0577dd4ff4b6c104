#pragma once

// Convolutional auto-encoder used for every scene and every baseline:
//   encoder: 3 x (3x3 stride-2 conv + ReLU), flatten, FC + ReLU, FC -> latent
//   decoder: FC stack with ReLU, reshape, 3 x (2x upsample + same conv),
//            ReLU between convs, linear output.
// An optional conditioning vector is appended to the flattened features
// before the first encoder FC layer.

#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "xscene/common/error.hpp"
#include "xscene/nn/layers.hpp"

namespace xscene::model {

struct ArchConfig {
  std::size_t width = 64;
  std::size_t in_channels = 4;
  std::vector<std::size_t> conv_channels = {8, 8, 8};
  std::size_t kernel = 3;
  std::vector<std::size_t> encoder_fc = {128};
  std::size_t latent_dim = 2;
  std::vector<std::size_t> decoder_fc = {64, 128};
  std::size_t condition_inputs = 0;

  std::size_t bottleneck_side() const { return width >> conv_channels.size(); }
  std::size_t flat_size() const { return bottleneck_side() * bottleneck_side() * conv_channels.back(); }

  void validate() const {
    require(width >= 8 && (width & (width - 1)) == 0, ErrorKind::config, "arch: width must be a power of two >= 8");
    require(!conv_channels.empty() && (width >> conv_channels.size()) >= 1, ErrorKind::config,
            "arch: too many stride-2 convolutions for the input width");
    require(latent_dim >= 1, ErrorKind::config, "arch: latent_dim must be positive");
  }

  static ArchConfig desk() { return {}; }
  static ArchConfig paper() {
    ArchConfig a;
    a.width = 512;
    return a;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ArchConfig, width, in_channels, conv_channels, kernel, encoder_fc,
                                                latent_dim, decoder_fc, condition_inputs)

struct LayerSpec {
  std::string kind;  // conv_stride2 | fc | upsample2x_conv | activation
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
};

inline void to_json(nlohmann::json& j, const LayerSpec& s) {
  j = {{"kind", s.kind}, {"in", s.in}, {"out", s.out}, {"kernel", s.kernel}};
}

class AutoEncoder {
 public:
  AutoEncoder() = default;
  explicit AutoEncoder(const ArchConfig& arch) : arch_(arch) {
    arch.validate();
    std::size_t ch = arch.in_channels;
    for (std::size_t c : arch.conv_channels) {
      features_.add(nn::Conv2d(ch, c, arch.kernel, 2)).add(nn::Relu{});
      ch = c;
    }
    features_.add(nn::Reshape({arch.flat_size()}));

    std::size_t in = arch.flat_size() + arch.condition_inputs;
    for (std::size_t h : arch.encoder_fc) {
      head_.add(nn::Dense(in, h)).add(nn::Relu{});
      in = h;
    }
    head_.add(nn::Dense(in, arch.latent_dim));

    in = arch.latent_dim;
    for (std::size_t h : arch.decoder_fc) {
      decoder_.add(nn::Dense(in, h)).add(nn::Relu{});
      in = h;
    }
    const std::size_t side = arch.bottleneck_side();
    decoder_.add(nn::Dense(in, arch.flat_size())).add(nn::Relu{});
    decoder_.add(nn::Reshape({side, side, arch.conv_channels.back()}));
    for (std::size_t k = arch.conv_channels.size(); k-- > 0;) {
      const std::size_t out = k == 0 ? arch.in_channels : arch.conv_channels[k - 1];
      decoder_.add(nn::UpsampleConv2d(arch.conv_channels[k], out, arch.kernel));
      if (k != 0) decoder_.add(nn::Relu{});
    }
  }

  const ArchConfig& arch() const { return arch_; }

  void init(std::mt19937_64& rng) {
    features_.init(rng);
    head_.init(rng);
    decoder_.init(rng);
  }

  /// x: [N, W, W, C]; condition: [N, condition_inputs] or empty when unconditioned.
  nn::Tensor encode(const nn::Tensor& x, const nn::Tensor& condition = {}) {
    nn::Tensor f = features_.forward(x);
    if (arch_.condition_inputs == 0) return head_.forward(std::move(f));
    const std::size_t n = f.dim(0), flat = arch_.flat_size(), k = arch_.condition_inputs;
    nn::require_shape(condition, {n, k}, "encoder condition");
    nn::Tensor joined({n, flat + k});
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(f.raw() + b * flat, flat, joined.raw() + b * (flat + k));
      std::copy_n(condition.raw() + b * k, k, joined.raw() + b * (flat + k) + flat);
    }
    return head_.forward(std::move(joined));
  }

  nn::Tensor decode(const nn::Tensor& z) { return decoder_.forward(z); }

  /// Returns d/dz given d/d(decoder output).
  nn::Tensor backward_decode(const nn::Tensor& grad_out) { return decoder_.backward(grad_out, true); }

  /// Backpropagates d/dz through the encoder; returns d/dx when requested.
  nn::Tensor backward_encode(const nn::Tensor& grad_z, bool need_input_grad = false) {
    nn::Tensor g = head_.backward(grad_z, true);
    if (arch_.condition_inputs > 0) {
      const std::size_t n = g.dim(0), flat = arch_.flat_size(), k = arch_.condition_inputs;
      nn::Tensor gf({n, flat});
      for (std::size_t b = 0; b < n; ++b) std::copy_n(g.raw() + b * (flat + k), flat, gf.raw() + b * flat);
      g = std::move(gf);
    }
    return features_.backward(std::move(g), need_input_grad);
  }

  std::vector<nn::Parameter*> parameters() {
    std::vector<nn::Parameter*> out;
    for (auto* seq : {&features_, &head_, &decoder_})
      for (auto* p : seq->parameters()) out.push_back(p);
    return out;
  }

  /// Parameters with stable hierarchical names, e.g. "encoder/features/0.weight".
  std::vector<std::pair<std::string, nn::Parameter*>> named_parameters() {
    std::vector<std::pair<std::string, nn::Parameter*>> out;
    auto collect = [&](nn::Sequential& seq, const std::string& prefix) {
      for (std::size_t k = 0; k < seq.layers().size(); ++k)
        std::visit([&](auto& layer) {
          if constexpr (requires { layer.weight; }) {
            out.emplace_back(prefix + "/" + std::to_string(k) + ".weight", &layer.weight);
            out.emplace_back(prefix + "/" + std::to_string(k) + ".bias", &layer.bias);
          }
        }, seq.layers()[k]);
    };
    collect(features_, "encoder/features");
    collect(head_, "encoder/head");
    collect(decoder_, "decoder");
    return out;
  }

  void clear_state() {
    features_.clear_state();
    head_.clear_state();
    decoder_.clear_state();
  }

  void zero_grad() {
    features_.zero_grad();
    head_.zero_grad();
    decoder_.zero_grad();
  }

  std::vector<bool> activation_pattern() const {
    std::vector<bool> out;
    for (const auto* seq : {&features_, &head_, &decoder_}) {
      auto p = seq->activation_pattern();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  std::vector<LayerSpec> layer_specs() const {
    std::vector<LayerSpec> out;
    auto describe = [&](const nn::Sequential& seq) {
      const auto& layers = seq.layers();
      for (std::size_t k = 0; k < layers.size(); ++k) {
        if (const auto* c = std::get_if<nn::Conv2d>(&layers[k])) {
          if (c->stride() == 2) out.push_back({"conv_stride2", c->in_channels(), c->out_channels(), c->kernel()});
        } else if (const auto* d = std::get_if<nn::Dense>(&layers[k])) {
          out.push_back({"fc", d->in_features(), d->out_features(), 0});
        } else if (const auto* u = std::get_if<nn::UpsampleConv2d>(&layers[k])) {
          out.push_back({"upsample2x_conv", u->in_channels(), u->out_channels(), u->kernel()});
        } else if (std::holds_alternative<nn::Relu>(layers[k])) {
          out.push_back({"activation", 0, 0, 0});
        }
      }
    };
    describe(features_);
    describe(head_);
    describe(decoder_);
    return out;
  }

  const nn::Sequential& features() const { return features_; }
  const nn::Sequential& head() const { return head_; }
  const nn::Sequential& decoder() const { return decoder_; }

 private:
  ArchConfig arch_;
  nn::Sequential features_;
  nn::Sequential head_;
  nn::Sequential decoder_;
};

}  // namespace xscene::model
