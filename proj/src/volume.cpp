#include "voxseg/volume.hpp"

#include <algorithm>
#include <cmath>

namespace voxseg {

void MultiModalVolume::validate() const {
  geometry.validate();
  for (const auto& c : channels) {
    if (c.shape != std::vector<std::int64_t>{geometry.shape[0], geometry.shape[1], geometry.shape[2]})
      throw std::invalid_argument("MultiModalVolume: channel shape does not match geometry");
    for (float v : c.data)
      if (!std::isfinite(v)) throw std::invalid_argument("MultiModalVolume: non-finite voxel value");
  }
}

void LabelMap::validate() const {
  geometry.validate();
  if (labels.shape != std::vector<std::int64_t>{geometry.shape[0], geometry.shape[1], geometry.shape[2]})
    throw std::invalid_argument("LabelMap: shape does not match geometry");
  for (auto v : labels.data)
    if (v > 3) throw std::invalid_argument("LabelMap: voxel value outside {0,1,2,3}");
}

TensorF znormalize(const TensorF& volume, ForegroundPolicy policy) {
  double sum = 0.0, sum2 = 0.0;
  std::int64_t n = 0;
  for (float v : volume.data) {
    if (policy == ForegroundPolicy::kNonzero && v == 0.0f) continue;
    sum += v;
    sum2 += static_cast<double>(v) * v;
    ++n;
  }
  TensorF out(volume.shape);
  if (n == 0) return out;
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  if (var <= 0.0) return out;
  double inv_std = 1.0 / std::sqrt(var);
  for (std::int64_t i = 0; i < volume.size(); ++i) {
    float v = volume[i];
    if (policy == ForegroundPolicy::kNonzero && v == 0.0f)
      out[i] = 0.0f;
    else
      out[i] = static_cast<float>((v - mean) * inv_std);
  }
  return out;
}

RegionMaskSet labels_to_regions(const LabelMap& lm) {
  RegionMaskSet r;
  r.geometry = lm.geometry;
  r.et = Tensor<std::uint8_t>(lm.labels.shape);
  r.tc = Tensor<std::uint8_t>(lm.labels.shape);
  r.wt = Tensor<std::uint8_t>(lm.labels.shape);
  for (std::int64_t i = 0; i < lm.labels.size(); ++i) {
    std::uint8_t v = lm.labels[i];
    r.et[i] = (v == kEt) ? 1 : 0;
    r.tc[i] = (v == kEt || v == kNetc) ? 1 : 0;
    r.wt[i] = (v != kBackground) ? 1 : 0;
  }
  return r;
}

LabelMap regions_to_labels(const RegionMaskSet& regions, bool repair) {
  if (!regions.et.same_shape(regions.tc) || !regions.tc.same_shape(regions.wt))
    throw std::invalid_argument("regions_to_labels: mask shapes differ");
  LabelMap lm;
  lm.geometry = regions.geometry;
  lm.labels = TensorU8(regions.et.shape);
  for (std::int64_t i = 0; i < regions.et.size(); ++i) {
    bool et = regions.et[i] != 0;
    bool tc = regions.tc[i] != 0;
    bool wt = regions.wt[i] != 0;
    if (repair) {
      tc = tc || et;
      wt = wt || tc;
    } else if ((et && !tc) || (tc && !wt)) {
      throw std::invalid_argument("regions_to_labels: hierarchy violation (et <= tc <= wt) with repair off");
    }
    if (et)
      lm.labels[i] = kEt;
    else if (tc)
      lm.labels[i] = kNetc;
    else if (wt)
      lm.labels[i] = kSnfh;
    else
      lm.labels[i] = kBackground;
  }
  return lm;
}

Geometry resampled_geometry(const Geometry& g, const std::array<double, 3>& factor) {
  Geometry out = g;
  for (int a = 0; a < 3; ++a) {
    if (!(factor[a] > 0.0)) throw std::invalid_argument("resample: factor must be > 0");
    out.shape[a] = std::max<std::int64_t>(1, std::llround(static_cast<double>(g.shape[a]) * factor[a]));
    out.spacing[a] = g.spacing[a] / factor[a];
  }
  return out;
}

float sample_trilinear(const TensorF& v, double x, double y, double z) {
  auto clampc = [](double c, std::int64_t n) { return std::clamp(c, 0.0, static_cast<double>(n - 1)); };
  x = clampc(x, v.shape[0]);
  y = clampc(y, v.shape[1]);
  z = clampc(z, v.shape[2]);
  std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
  std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
  std::int64_t z0 = static_cast<std::int64_t>(std::floor(z));
  std::int64_t x1 = std::min(x0 + 1, v.shape[0] - 1);
  std::int64_t y1 = std::min(y0 + 1, v.shape[1] - 1);
  std::int64_t z1 = std::min(z0 + 1, v.shape[2] - 1);
  double fx = x - x0, fy = y - y0, fz = z - z0;
  double c00 = v.at3(x0, y0, z0) * (1 - fx) + v.at3(x1, y0, z0) * fx;
  double c10 = v.at3(x0, y1, z0) * (1 - fx) + v.at3(x1, y1, z0) * fx;
  double c01 = v.at3(x0, y0, z1) * (1 - fx) + v.at3(x1, y0, z1) * fx;
  double c11 = v.at3(x0, y1, z1) * (1 - fx) + v.at3(x1, y1, z1) * fx;
  double c0 = c00 * (1 - fy) + c10 * fy;
  double c1 = c01 * (1 - fy) + c11 * fy;
  return static_cast<float>(c0 * (1 - fz) + c1 * fz);
}

TensorF resample(const TensorF& volume, const std::array<double, 3>& factor, ResampleMode mode) {
  std::array<std::int64_t, 3> in_shape{volume.shape[0], volume.shape[1], volume.shape[2]};
  std::array<std::int64_t, 3> out_shape;
  for (int a = 0; a < 3; ++a) {
    if (!(factor[a] > 0.0)) throw std::invalid_argument("resample: factor must be > 0");
    out_shape[a] = std::max<std::int64_t>(1, std::llround(static_cast<double>(in_shape[a]) * factor[a]));
  }
  if (out_shape == in_shape && factor[0] == 1.0 && factor[1] == 1.0 && factor[2] == 1.0) return volume;

  TensorF out({out_shape[0], out_shape[1], out_shape[2]});
  // pixel-center mapping: in = (out + 0.5) / f - 0.5
  for (std::int64_t z = 0; z < out_shape[2]; ++z) {
    double sz = (z + 0.5) / factor[2] - 0.5;
    for (std::int64_t y = 0; y < out_shape[1]; ++y) {
      double sy = (y + 0.5) / factor[1] - 0.5;
      for (std::int64_t x = 0; x < out_shape[0]; ++x) {
        double sx = (x + 0.5) / factor[0] - 0.5;
        if (mode == ResampleMode::kTrilinear) {
          out.at3(x, y, z) = sample_trilinear(volume, sx, sy, sz);
        } else {
          std::int64_t ix = std::clamp<std::int64_t>(std::llround(sx), 0, in_shape[0] - 1);
          std::int64_t iy = std::clamp<std::int64_t>(std::llround(sy), 0, in_shape[1] - 1);
          std::int64_t iz = std::clamp<std::int64_t>(std::llround(sz), 0, in_shape[2] - 1);
          out.at3(x, y, z) = volume.at3(ix, iy, iz);
        }
      }
    }
  }
  return out;
}

TensorF gaussian_blur3(const TensorF& volume, double sigma) {
  if (sigma <= 0.0) return volume;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    ksum += v;
  }
  for (auto& v : kernel) v /= ksum;

  TensorF cur = volume;
  const std::array<std::int64_t, 3> n{volume.shape[0], volume.shape[1], volume.shape[2]};
  for (int axis = 0; axis < 3; ++axis) {
    TensorF next(cur.shape);
    for (std::int64_t z = 0; z < n[2]; ++z)
      for (std::int64_t y = 0; y < n[1]; ++y)
        for (std::int64_t x = 0; x < n[0]; ++x) {
          double acc = 0.0;
          for (int k = -radius; k <= radius; ++k) {
            std::int64_t c[3] = {x, y, z};
            c[axis] = std::clamp<std::int64_t>(c[axis] + k, 0, n[static_cast<std::size_t>(axis)] - 1);
            acc += kernel[static_cast<std::size_t>(k + radius)] * cur.at3(c[0], c[1], c[2]);
          }
          next.at3(x, y, z) = static_cast<float>(acc);
        }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace voxseg
