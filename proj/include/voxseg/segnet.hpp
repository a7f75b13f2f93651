#pragma once

#include <map>
#include <string>
#include <vector>

#include "voxseg/nn/losses.hpp"
#include "voxseg/nn/ops.hpp"
#include "voxseg/rng.hpp"

namespace voxseg {

enum class NormKind { kBatch, kGroup };

struct SegNetConfig {
  int levels = 5;
  int base_filters = 32;
  int max_filters = 320;      // expanded variant: 512
  int encoder_multiplier = 1; // expanded variant: 2
  NormKind norm = NormKind::kBatch;
  int group_count = 32;
  int in_channels = 4;
  int out_channels = 3;  // ET / TC / WT region sigmoids
  double leaky_slope = 0.01;
  int deep_supervision_heads = -1;  // -1: default levels - 2
  std::array<std::int64_t, 3> patch_shape{32, 32, 32};

  int ds_heads() const { return deep_supervision_heads < 0 ? levels - 2 : deep_supervision_heads; }

  void validate() const {
    if (levels < 2) throw std::invalid_argument("SegNetConfig: levels must be >= 2");
    if (base_filters < 1 || max_filters < 1)
      throw std::invalid_argument("SegNetConfig: filter counts must be positive");
    if (encoder_multiplier != 1 && encoder_multiplier != 2)
      throw std::invalid_argument("SegNetConfig: encoder_multiplier must be 1 or 2");
    if (ds_heads() < 0 || ds_heads() > levels - 2)
      throw std::invalid_argument("SegNetConfig: deep_supervision_heads out of range");
    const std::int64_t div = std::int64_t(1) << (levels - 1);
    for (auto s : patch_shape)
      if (s % div != 0)
        throw std::invalid_argument("SegNetConfig: patch shape not divisible by 2^(levels-1)");
  }
};

// Encoder widths: level i = min(base * multiplier * 2^i, max). The decoder
// always uses the multiplier-1 plan.
inline std::vector<int> channel_plan(const SegNetConfig& cfg) {
  std::vector<int> plan;
  for (int i = 0; i < cfg.levels; ++i) {
    long long c = static_cast<long long>(cfg.base_filters) * cfg.encoder_multiplier * (1LL << i);
    plan.push_back(static_cast<int>(std::min<long long>(c, cfg.max_filters)));
  }
  return plan;
}

inline std::vector<int> decoder_plan(const SegNetConfig& cfg) {
  SegNetConfig d = cfg;
  d.encoder_multiplier = 1;
  return channel_plan(d);
}

inline std::int64_t norm_groups(NormKind norm, int group_count, int channels) {
  if (norm != NormKind::kGroup) return 1;
  int g = std::min(group_count, channels);
  if (channels % g != 0)
    throw std::invalid_argument("group norm: channel count not divisible by group count");
  return g;
}

// The U-Net variant pair: per-level double convolution blocks
// (conv -> norm -> LeakyReLU, twice), strided-conv downsampling, transpose-
// conv upsampling, skip concatenation, sigmoid region heads at the finest
// decoder resolutions.
template <typename T>
class SegNet {
 public:
  SegNet() = default;
  SegNet(const SegNetConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    build_params(init_seed);
  }

  const SegNetConfig& config() const { return cfg_; }

  std::vector<std::pair<std::string, nn::NodePtr<T>>>& params() { return params_; }
  const std::vector<std::pair<std::string, nn::NodePtr<T>>>& params() const { return params_; }

  nn::NodePtr<T> param(const std::string& name) const {
    for (const auto& [n, p] : params_)
      if (n == name) return p;
    throw std::out_of_range("SegNet: no parameter named " + name);
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : params_) n += p->value.size();
    return n;
  }

  // patch: [N, in_channels, D, H, W]. Returns 1 + ds_heads() sigmoid outputs,
  // head h at 1/2^h resolution.
  std::vector<nn::NodePtr<T>> forward(const Tensor<T>& patch) const {
    if (patch.ndim() != 5 || patch.dim(1) != cfg_.in_channels)
      throw std::invalid_argument("SegNet::forward: bad input shape " + shape_str(patch.shape));
    auto x = nn::constant(patch);
    auto enc = channel_plan(cfg_);
    auto dec = decoder_plan(cfg_);

    std::vector<nn::NodePtr<T>> skips;
    nn::NodePtr<T> cur = x;
    for (int i = 0; i < cfg_.levels; ++i) {
      cur = double_conv(cur, "enc" + std::to_string(i), enc[static_cast<std::size_t>(i)],
                        i == 0 ? 1 : 2);
      skips.push_back(cur);
    }
    std::vector<nn::NodePtr<T>> dec_out(static_cast<std::size_t>(cfg_.levels - 1));
    for (int i = cfg_.levels - 2; i >= 0; --i) {
      std::string up = "up" + std::to_string(i);
      cur = nn::conv_transpose3d(cur, param(up + ".w"), param(up + ".b"), 2);
      cur = nn::concat_channels(skips[static_cast<std::size_t>(i)], cur);
      cur = double_conv(cur, "dec" + std::to_string(i), dec[static_cast<std::size_t>(i)], 1);
      dec_out[static_cast<std::size_t>(i)] = cur;
    }
    std::vector<nn::NodePtr<T>> heads;
    for (int h = 0; h <= cfg_.ds_heads(); ++h) {
      std::string hd = "head" + std::to_string(h);
      auto logits = nn::conv3d(dec_out[static_cast<std::size_t>(h)], param(hd + ".w"),
                               param(hd + ".b"), 1, 0);
      heads.push_back(nn::sigmoid(logits));
    }
    return heads;
  }

  void zero_grads() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

 private:
  nn::NodePtr<T> add_param(const std::string& name, Tensor<T> value) {
    auto p = nn::parameter(std::move(value));
    params_.emplace_back(name, p);
    return p;
  }

  Tensor<T> he_init(const std::vector<std::int64_t>& shape, std::int64_t fan_in, CounterRng& rng) {
    Tensor<T> t(shape);
    double s = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * s);
    return t;
  }

  void conv_block_params(const std::string& name, int cin, int cout, CounterRng& rng) {
    add_param(name + ".conv1.w", he_init({cout, cin, 3, 3, 3}, cin * 27, rng));
    add_param(name + ".conv1.b", Tensor<T>({cout}));
    add_norm_params(name + ".norm1", cout);
    add_param(name + ".conv2.w", he_init({cout, cout, 3, 3, 3}, cout * 27, rng));
    add_param(name + ".conv2.b", Tensor<T>({cout}));
    add_norm_params(name + ".norm2", cout);
  }

  void add_norm_params(const std::string& name, int channels) {
    Tensor<T> g({channels});
    g.fill(T(1));
    add_param(name + ".g", std::move(g));
    add_param(name + ".b", Tensor<T>({channels}));
  }

  void build_params(std::uint64_t seed) {
    CounterRng rng(seed, 0x5e67);
    auto enc = channel_plan(cfg_);
    auto dec = decoder_plan(cfg_);
    for (int i = 0; i < cfg_.levels; ++i) {
      int cin = i == 0 ? cfg_.in_channels : enc[static_cast<std::size_t>(i - 1)];
      conv_block_params("enc" + std::to_string(i), cin, enc[static_cast<std::size_t>(i)], rng);
    }
    for (int i = cfg_.levels - 2; i >= 0; --i) {
      int cin = i == cfg_.levels - 2 ? enc[static_cast<std::size_t>(i + 1)]
                                     : dec[static_cast<std::size_t>(i + 1)];
      int cout = dec[static_cast<std::size_t>(i)];
      add_param("up" + std::to_string(i) + ".w", he_init({cin, cout, 2, 2, 2}, cin * 8, rng));
      add_param("up" + std::to_string(i) + ".b", Tensor<T>({cout}));
      conv_block_params("dec" + std::to_string(i), enc[static_cast<std::size_t>(i)] + cout, cout,
                        rng);
    }
    for (int h = 0; h <= cfg_.ds_heads(); ++h) {
      int cin = dec[static_cast<std::size_t>(h)];
      add_param("head" + std::to_string(h) + ".w",
                he_init({cfg_.out_channels, cin, 1, 1, 1}, cin, rng));
      add_param("head" + std::to_string(h) + ".b", Tensor<T>({cfg_.out_channels}));
    }
  }

  nn::NodePtr<T> double_conv(const nn::NodePtr<T>& x, const std::string& name, int cout,
                             std::int64_t first_stride) const {
    auto apply_norm = [&](const nn::NodePtr<T>& h, const std::string& nname) {
      if (cfg_.norm == NormKind::kGroup)
        return nn::group_norm(h, param(nname + ".g"), param(nname + ".b"),
                              norm_groups(cfg_.norm, cfg_.group_count, cout), T(1e-5));
      return nn::batch_norm(h, param(nname + ".g"), param(nname + ".b"), T(1e-5));
    };
    auto h = nn::conv3d(x, param(name + ".conv1.w"), param(name + ".conv1.b"), first_stride, 1);
    h = apply_norm(h, name + ".norm1");
    h = nn::leaky_relu(h, static_cast<T>(cfg_.leaky_slope));
    h = nn::conv3d(h, param(name + ".conv2.w"), param(name + ".conv2.b"), 1, 1);
    h = apply_norm(h, name + ".norm2");
    return nn::leaky_relu(h, static_cast<T>(cfg_.leaky_slope));
  }

  SegNetConfig cfg_;
  std::vector<std::pair<std::string, nn::NodePtr<T>>> params_;
};

// The ensembled pair from the source method: the original network
// (batch norm, cap 320) and the larger one (doubled encoder, group norm,
// cap 512).
inline SegNetConfig baseline_config() {
  SegNetConfig c;
  c.norm = NormKind::kBatch;
  c.max_filters = 320;
  c.encoder_multiplier = 1;
  return c;
}

inline SegNetConfig expanded_config() {
  SegNetConfig c;
  c.norm = NormKind::kGroup;
  c.max_filters = 512;
  c.encoder_multiplier = 2;
  return c;
}

}  // namespace voxseg
