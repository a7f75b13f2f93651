#include "voxseg/infer.hpp"

#include "voxseg/metrics.hpp"

#include <cmath>

namespace voxseg {
namespace {

std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch, double overlap) {
  if (extent <= patch) return {0};
  auto step = static_cast<std::int64_t>(std::llround(patch * (1.0 - overlap)));
  step = std::max<std::int64_t>(1, step);
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0;; s += step) {
    if (s + patch >= extent) {
      starts.push_back(extent - patch);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

TensorF window_weight(const std::array<std::int64_t, 3>& patch, const InferenceConfig& cfg) {
  TensorF w({patch[0], patch[1], patch[2]});
  if (cfg.weighting == WindowWeighting::kUniform) {
    w.fill(1.0f);
    return w;
  }
  std::array<std::vector<double>, 3> axis;
  for (int a = 0; a < 3; ++a) {
    std::int64_t n = patch[static_cast<std::size_t>(a)];
    double c = (n - 1) / 2.0;
    double sigma = std::max(1e-6, cfg.gaussian_sigma_frac * n);
    axis[static_cast<std::size_t>(a)].resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
      axis[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] =
          std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
  }
  for (std::int64_t z = 0; z < patch[2]; ++z)
    for (std::int64_t y = 0; y < patch[1]; ++y)
      for (std::int64_t x = 0; x < patch[0]; ++x)
        w.at3(x, y, z) = static_cast<float>(axis[0][static_cast<std::size_t>(x)] *
                                            axis[1][static_cast<std::size_t>(y)] *
                                            axis[2][static_cast<std::size_t>(z)]);
  return w;
}

}  // namespace

Tensor<float> sliding_window_infer(const SegNet<float>& model, const MultiModalVolume& volume,
                                   const InferenceConfig& cfg) {
  cfg.validate();
  const auto patch = model.config().patch_shape;
  const auto vs = volume.geometry.shape;

  TensorF weight = window_weight(patch, cfg);
  auto sx = window_starts(vs[0], patch[0], cfg.overlap);
  auto sy = window_starts(vs[1], patch[1], cfg.overlap);
  auto sz = window_starts(vs[2], patch[2], cfg.overlap);

  Tensor<double> acc({kNumRegions, vs[0], vs[1], vs[2]});
  Tensor<double> acc_w({vs[0], vs[1], vs[2]});
  const std::int64_t vvox = vs[0] * vs[1] * vs[2];
  const std::int64_t pvox = patch[0] * patch[1] * patch[2];

  // fixed window order keeps the accumulation deterministic
  for (auto z0 : sz)
    for (auto y0 : sy)
      for (auto x0 : sx) {
        TensorF input({1, kNumModalities, patch[2], patch[1], patch[0]});
        for (int m = 0; m < kNumModalities; ++m) {
          const auto& ch = volume.channels[static_cast<std::size_t>(m)];
          float* dst = input.data.data() + m * pvox;
          std::int64_t i = 0;
          for (std::int64_t z = 0; z < patch[2]; ++z)
            for (std::int64_t y = 0; y < patch[1]; ++y)
              for (std::int64_t x = 0; x < patch[0]; ++x, ++i) {
                std::int64_t gx = x0 + x, gy = y0 + y, gz = z0 + z;
                bool in = gx < vs[0] && gy < vs[1] && gz < vs[2];
                dst[i] = in ? ch.at3(gx, gy, gz) : 0.0f;  // zero-pad, cropped below
              }
        }
        auto outputs = model.forward(input);
        const auto& probs = outputs[0]->value;  // [1, 3, pz, py, px]
        std::int64_t i = 0;
        for (std::int64_t z = 0; z < patch[2]; ++z)
          for (std::int64_t y = 0; y < patch[1]; ++y)
            for (std::int64_t x = 0; x < patch[0]; ++x, ++i) {
              std::int64_t gx = x0 + x, gy = y0 + y, gz = z0 + z;
              if (gx >= vs[0] || gy >= vs[1] || gz >= vs[2]) continue;
              double w = weight.at3(x, y, z);
              std::int64_t gidx = gx + vs[0] * (gy + vs[1] * gz);
              for (int r = 0; r < kNumRegions; ++r)
                acc[r * vvox + gidx] += w * probs[r * pvox + i];
              acc_w[gidx] += w;
            }
      }

  Tensor<float> out({kNumRegions, vs[0], vs[1], vs[2]});
  for (std::int64_t g = 0; g < vvox; ++g) {
    double w = acc_w[g];
    if (!(w > 0)) throw std::logic_error("sliding_window_infer: uncovered voxel");
    for (int r = 0; r < kNumRegions; ++r)
      out[r * vvox + g] = static_cast<float>(acc[r * vvox + g] / w);
  }
  return out;
}

Tensor<float> ensemble(const std::vector<Tensor<float>>& prob_maps,
                       const std::vector<double>& weights) {
  if (prob_maps.empty()) throw std::invalid_argument("ensemble: no probability maps");
  std::vector<double> w = weights;
  if (w.empty()) w.assign(prob_maps.size(), 1.0);
  if (w.size() != prob_maps.size())
    throw std::invalid_argument("ensemble: weight/map count mismatch");
  double wsum = 0;
  for (double v : w) wsum += v;
  if (!(wsum > 0)) throw std::invalid_argument("ensemble: weights sum to zero");
  for (auto& v : w) v /= wsum;

  Tensor<float> out(prob_maps[0].shape);
  for (std::size_t m = 0; m < prob_maps.size(); ++m) {
    if (!prob_maps[m].same_shape(out)) throw std::invalid_argument("ensemble: shape mismatch");
    for (std::int64_t i = 0; i < out.size(); ++i)
      out[i] += static_cast<float>(w[m] * prob_maps[m][i]);
  }
  return out;
}

LabelMap compose_prediction(const Tensor<float>& region_probs, const Geometry& geom,
                            double threshold) {
  const std::int64_t vvox = geom.voxels();
  if (region_probs.size() != kNumRegions * vvox)
    throw std::invalid_argument("compose_prediction: probability volume size mismatch");
  RegionMaskSet masks;
  masks.geometry = geom;
  std::vector<std::int64_t> s3{geom.shape[0], geom.shape[1], geom.shape[2]};
  masks.et = Tensor<std::uint8_t>(s3);
  masks.tc = Tensor<std::uint8_t>(s3);
  masks.wt = Tensor<std::uint8_t>(s3);
  for (std::int64_t g = 0; g < vvox; ++g) {
    masks.et[g] = region_probs[0 * vvox + g] > threshold;
    masks.tc[g] = region_probs[1 * vvox + g] > threshold;
    masks.wt[g] = region_probs[2 * vvox + g] > threshold;
  }
  return regions_to_labels(masks, /*repair=*/true);
}

LabelMap predict_case(const std::vector<const SegNet<float>*>& models,
                      const MultiModalVolume& volume, const InferenceConfig& cfg) {
  if (models.empty()) throw std::invalid_argument("predict_case: no models");
  MultiModalVolume norm = volume;
  for (auto& ch : norm.channels) ch = znormalize(ch, ForegroundPolicy::kNonzero);
  std::vector<Tensor<float>> maps;
  maps.reserve(models.size());
  for (const auto* m : models) maps.push_back(sliding_window_infer(*m, norm, cfg));
  Tensor<float> combined = ensemble(maps, cfg.ensemble_weights);
  return compose_prediction(combined, volume.geometry, cfg.threshold);
}

}  // namespace voxseg
