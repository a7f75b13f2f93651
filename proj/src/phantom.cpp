#include "voxseg/phantom.hpp"

#include <cmath>
#include <stdexcept>

namespace voxseg {
namespace {

struct Tumor {
  double cx, cy, cz;
  double r_et, r_tc, r_wt;
};

}  // namespace

PhantomCase generate_case(const PhantomSpec& spec, std::uint64_t case_index) {
  spec.validate();
  CounterRng rng(spec.seed, 0x9a0b7 + case_index);

  const auto [nx, ny, nz] = spec.shape;
  Geometry geom;
  geom.shape = spec.shape;
  geom.spacing = {1.0, 1.0, 1.0};

  // brain: axis-aligned ellipsoid, semi-axes 0.42 * shape
  const double cx = (nx - 1) / 2.0, cy = (ny - 1) / 2.0, cz = (nz - 1) / 2.0;
  const double ax = 0.42 * nx, ay = 0.42 * ny, az = 0.42 * nz;
  auto brain_rho2 = [&](double x, double y, double z) {
    double dx = (x - cx) / ax, dy = (y - cy) / ay, dz = (z - cz) / az;
    return dx * dx + dy * dy + dz * dz;
  };

  // place tumors fully inside the brain with a 1.5-voxel margin
  std::vector<Tumor> tumors;
  const double margin = 1.5;
  for (int t = 0; t < spec.tumor_count; ++t) {
    Tumor tm{};
    tm.r_et = rng.uniform(spec.r_et[0], spec.r_et[1]);
    tm.r_tc = rng.uniform(spec.r_tc[0], spec.r_tc[1]);
    tm.r_wt = rng.uniform(spec.r_wt[0], spec.r_wt[1]);
    bool placed = false;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      double x = rng.uniform(0, nx - 1), y = rng.uniform(0, ny - 1), z = rng.uniform(0, nz - 1);
      // farthest point of the tumor sphere must stay inside the ellipsoid
      double rr = tm.r_wt + margin;
      double sx = rr / ax, sy = rr / ay, sz = rr / az;
      double shrink = std::max({sx, sy, sz});
      if (shrink < 1.0 && brain_rho2(x, y, z) <= (1.0 - shrink) * (1.0 - shrink)) {
        tm.cx = x;
        tm.cy = y;
        tm.cz = z;
        placed = true;
        break;
      }
    }
    if (!placed) throw std::runtime_error("generate_case: tumor does not fit inside the brain mask");
    tumors.push_back(tm);
  }

  PhantomCase out;
  out.labels.geometry = geom;
  out.labels.labels = TensorU8({nx, ny, nz});
  out.image.geometry = geom;

  // tissue assignment per voxel: 0 background(outside brain), else tissue idx
  Tensor<std::int8_t> tissue({nx, ny, nz});
  tissue.fill(-1);
  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        if (brain_rho2(x, y, z) > 1.0) continue;
        std::int8_t tis = kTissueBrain;
        std::uint8_t lab = kBackground;
        for (const auto& tm : tumors) {
          double dx = x - tm.cx, dy = y - tm.cy, dz = z - tm.cz;
          double d = std::sqrt(dx * dx + dy * dy + dz * dz);
          if (d <= tm.r_et) {
            tis = kTissueEt;
            lab = kEt;
            break;
          } else if (d <= tm.r_tc) {
            tis = kTissueNetc;
            lab = kNetc;
            break;
          } else if (d <= tm.r_wt) {
            tis = kTissueSnfh;
            lab = kSnfh;
            break;
          }
        }
        tissue.at3(x, y, z) = tis;
        out.labels.labels.at3(x, y, z) = lab;
      }

  // per-modality intensity: tissue mean with a smooth radial brain falloff,
  // then edge-smoothing blur, then additive noise (all deterministic)
  for (int m = 0; m < kNumModalities; ++m) {
    TensorF ch({nx, ny, nz});
    for (std::int64_t z = 0; z < nz; ++z)
      for (std::int64_t y = 0; y < ny; ++y)
        for (std::int64_t x = 0; x < nx; ++x) {
          std::int8_t tis = tissue.at3(x, y, z);
          if (tis < 0) continue;
          double base = spec.intensities[static_cast<std::size_t>(m)][static_cast<std::size_t>(tis)];
          if (tis == kTissueBrain) base *= 1.0 - 0.25 * brain_rho2(x, y, z);
          ch.at3(x, y, z) = static_cast<float>(base);
        }
    ch = gaussian_blur3(ch, spec.smooth_sigma);
    if (spec.noise_sigma > 0) {
      CounterRng noise_rng(spec.seed, 0xa10e + case_index * 16 + static_cast<std::uint64_t>(m));
      for (auto& v : ch.data) v += static_cast<float>(noise_rng.normal() * spec.noise_sigma);
    }
    out.image.channels[static_cast<std::size_t>(m)] = std::move(ch);
  }
  return out;
}

TensorF degrade_channel(const TensorF& channel, const DomainProfile& profile, CounterRng& rng) {
  TensorF cur = gaussian_blur3(channel, profile.blur_sigma);

  const int f = profile.downsample_factor;
  if (f > 1) {
    std::array<std::int64_t, 3> out_shape{cur.shape[0] / f, cur.shape[1] / f, cur.shape[2] / f};
    for (auto s : out_shape)
      if (s < 1) throw std::invalid_argument("degrade: volume too small for downsample factor");
    TensorF ds({out_shape[0], out_shape[1], out_shape[2]});
    const double inv = 1.0 / (static_cast<double>(f) * f * f);
    for (std::int64_t z = 0; z < out_shape[2]; ++z)
      for (std::int64_t y = 0; y < out_shape[1]; ++y)
        for (std::int64_t x = 0; x < out_shape[0]; ++x) {
          double acc = 0;
          for (int dz = 0; dz < f; ++dz)
            for (int dy = 0; dy < f; ++dy)
              for (int dx = 0; dx < f; ++dx) acc += cur.at3(x * f + dx, y * f + dy, z * f + dz);
          ds.at3(x, y, z) = static_cast<float>(acc * inv);
        }
    cur = std::move(ds);
  }

  if (profile.contrast_scale != 1.0) {
    double mean = 0;
    for (float v : cur.data) mean += v;
    mean /= static_cast<double>(cur.size());
    for (auto& v : cur.data)
      v = static_cast<float>(mean + (v - mean) * profile.contrast_scale);
  }

  if (profile.extra_noise_sigma > 0)
    for (auto& v : cur.data) v += static_cast<float>(rng.normal() * profile.extra_noise_sigma);
  return cur;
}

MultiModalVolume degrade(const MultiModalVolume& volume, const DomainProfile& profile,
                         std::uint64_t seed) {
  profile.validate();
  MultiModalVolume out;
  for (int m = 0; m < kNumModalities; ++m) {
    CounterRng rng(seed, 0xde62 + static_cast<std::uint64_t>(m));
    out.channels[static_cast<std::size_t>(m)] =
        degrade_channel(volume.channels[static_cast<std::size_t>(m)], profile, rng);
  }
  out.geometry.shape = {out.channels[0].shape[0], out.channels[0].shape[1],
                        out.channels[0].shape[2]};
  for (int a = 0; a < 3; ++a)
    out.geometry.spacing[static_cast<std::size_t>(a)] =
        volume.geometry.spacing[static_cast<std::size_t>(a)] * profile.downsample_factor;
  return out;
}

}  // namespace voxseg
