#pragma once

#include <string>
#include <vector>

#include "voxseg/nn/ops.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

// 20 convolutions total: entry conv+ReLU, three blocks of six conv+ReLU
// layers each with a short skip adding the block input, and a final
// single-filter conv with no activation. The network predicts the residual
// over trilinear 2x interpolation.
struct SRNetConfig {
  int filters = 32;
  int blocks = 3;
  int layers_per_block = 6;
  int scale_factor = 2;

  int conv_layers() const { return 1 + blocks * layers_per_block + 1; }

  void validate() const {
    if (filters < 1) throw std::invalid_argument("SRNetConfig: filters must be positive");
    if (blocks != 3 || layers_per_block != 6)
      throw std::invalid_argument("SRNetConfig: expected 3 blocks of 6 layers");
    if (scale_factor != 2) throw std::invalid_argument("SRNetConfig: only 2x scale supported");
  }
};

template <typename T>
class SRNet {
 public:
  SRNet() = default;
  SRNet(const SRNetConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    CounterRng rng(init_seed, 0x5172);
    add_conv("entry", 1, cfg_.filters, rng);
    for (int b = 0; b < cfg_.blocks; ++b)
      for (int l = 0; l < cfg_.layers_per_block; ++l)
        add_conv("block" + std::to_string(b) + ".conv" + std::to_string(l), cfg_.filters,
                 cfg_.filters, rng);
    add_conv("final", cfg_.filters, 1, rng);
  }

  const SRNetConfig& config() const { return cfg_; }

  std::vector<std::pair<std::string, nn::NodePtr<T>>>& params() { return params_; }
  const std::vector<std::pair<std::string, nn::NodePtr<T>>>& params() const { return params_; }

  nn::NodePtr<T> param(const std::string& name) const {
    for (const auto& [n, p] : params_)
      if (n == name) return p;
    throw std::out_of_range("SRNet: no parameter named " + name);
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : params_) n += p->value.size();
    return n;
  }

  void zero_grads() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

  // residual head: x is the interpolated volume as [N, 1, D, H, W]
  nn::NodePtr<T> residual(const Tensor<T>& x) const {
    auto h = conv("entry", nn::constant(x));
    h = nn::relu(h);
    for (int b = 0; b < cfg_.blocks; ++b) {
      auto block_in = h;
      for (int l = 0; l < cfg_.layers_per_block; ++l) {
        h = conv("block" + std::to_string(b) + ".conv" + std::to_string(l), h);
        h = nn::relu(h);
      }
      h = nn::add(h, block_in);  // short skip
    }
    return conv("final", h);
  }

 private:
  void add_conv(const std::string& name, int cin, int cout, CounterRng& rng) {
    Tensor<T> w({cout, cin, 3, 3, 3});
    double s = std::sqrt(2.0 / (cin * 27.0));
    for (auto& v : w.data) v = static_cast<T>(rng.normal() * s);
    auto wp = nn::parameter(std::move(w));
    params_.emplace_back(name + ".w", wp);
    params_.emplace_back(name + ".b", nn::parameter(Tensor<T>({cout})));
  }

  nn::NodePtr<T> conv(const std::string& name, const nn::NodePtr<T>& x) const {
    return nn::conv3d(x, param(name + ".w"), param(name + ".b"), 1, 1);
  }

  SRNetConfig cfg_;
  std::vector<std::pair<std::string, nn::NodePtr<T>>> params_;
};

// trilinear 2x interpolation + learned residual; spacing halves
template <typename T>
std::pair<TensorF, Geometry> upscale(const SRNet<T>& model, const TensorF& volume,
                                     const Geometry& geom) {
  TensorF up = resample(volume, {2.0, 2.0, 2.0}, ResampleMode::kTrilinear);
  Tensor<T> x({1, 1, up.shape[2], up.shape[1], up.shape[0]});
  // volume tensors are x-fastest; network tensors are W-fastest, so map
  // (x,y,z) -> (W,H,D) and the memory layout is identical
  for (std::int64_t i = 0; i < up.size(); ++i) x[i] = static_cast<T>(up[i]);
  auto res = model.residual(x);
  TensorF out(up.shape);
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = up[i] + static_cast<float>(res->value[i]);
  return {std::move(out), resampled_geometry(geom, {2.0, 2.0, 2.0})};
}

struct SrCase {
  MultiModalVolume image;
  LabelMap labels;
};

// all 4 channels through the network, labels nearest-resampled 2x
template <typename T>
SrCase sr_enhance_case(const SRNet<T>& model, const MultiModalVolume& image,
                       const LabelMap& labels) {
  SrCase out;
  for (int c = 0; c < kNumModalities; ++c) {
    auto [vol, geom] = upscale(model, image.channels[static_cast<std::size_t>(c)], image.geometry);
    out.image.channels[static_cast<std::size_t>(c)] = std::move(vol);
    out.image.geometry = geom;
  }
  TensorF lab_f = labels.labels.template cast<float>();
  TensorF res = resample(lab_f, {2.0, 2.0, 2.0}, ResampleMode::kNearest);
  out.labels.labels = TensorU8(res.shape);
  for (std::int64_t i = 0; i < res.size(); ++i)
    out.labels.labels[i] = static_cast<std::uint8_t>(res[i]);
  out.labels.geometry = resampled_geometry(labels.geometry, {2.0, 2.0, 2.0});
  return out;
}

}  // namespace voxseg
