#pragma once

#include <cstdint>

#include "voxseg/rng.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

// Tissue indices for the intensity table (modality x tissue)
enum PhantomTissue : int { kTissueBrain = 0, kTissueNetc = 1, kTissueSnfh = 2, kTissueEt = 3 };
inline constexpr int kNumTissues = 4;

struct PhantomSpec {
  std::array<std::int64_t, 3> shape{48, 48, 48};
  int tumor_count = 1;
  // per-tumor radii are drawn from these [lo, hi] ranges (voxels)
  std::array<double, 2> r_et{2.0, 4.0};
  std::array<double, 2> r_tc{4.5, 6.5};
  std::array<double, 2> r_wt{7.0, 10.0};
  // mean intensity per modality (T1, T1Gd, T2, FLAIR) and tissue. ET is
  // brightest in T1Gd, SNFH in FLAIR, mirroring real relative contrast.
  std::array<std::array<double, kNumTissues>, kNumModalities> intensities{{
      //            brain  netc  snfh  et
      /* t1    */ {{0.60, 0.35, 0.45, 0.50}},
      /* t1gd  */ {{0.55, 0.40, 0.50, 0.95}},
      /* t2    */ {{0.45, 0.65, 0.70, 0.55}},
      /* flair */ {{0.40, 0.55, 0.90, 0.60}},
  }};
  double smooth_sigma = 0.6;  // edge falloff blur (voxels)
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  void validate() const {
    for (auto s : shape)
      if (s < 8) throw std::invalid_argument("PhantomSpec: shape entries must be >= 8");
    if (tumor_count < 0) throw std::invalid_argument("PhantomSpec: tumor_count must be >= 0");
    auto ordered = [](const std::array<double, 2>& r) { return r[0] > 0 && r[0] <= r[1]; };
    if (!ordered(r_et) || !ordered(r_tc) || !ordered(r_wt))
      throw std::invalid_argument("PhantomSpec: invalid radius range");
    if (!(r_et[1] < r_tc[0] && r_tc[1] < r_wt[0]))
      throw std::invalid_argument("PhantomSpec: radius ranges must satisfy r_et < r_tc < r_wt");
    if (noise_sigma < 0 || smooth_sigma < 0)
      throw std::invalid_argument("PhantomSpec: sigmas must be >= 0");
  }
};

struct DomainProfile {
  double blur_sigma = 0.0;      // voxels
  int downsample_factor = 1;    // integer block-average pooling
  double extra_noise_sigma = 0.0;
  double contrast_scale = 1.0;  // applied around the channel mean

  void validate() const {
    if (downsample_factor < 1) throw std::invalid_argument("DomainProfile: downsample_factor >= 1");
    if (blur_sigma < 0 || extra_noise_sigma < 0 || contrast_scale <= 0)
      throw std::invalid_argument("DomainProfile: invalid parameter");
  }
};

struct PhantomCase {
  MultiModalVolume image;
  LabelMap labels;
};

// Deterministic in (spec, case_index): nested concentric tumor regions
// (ET core, NETC shell, SNFH outer shell) inside a smooth ellipsoidal brain.
PhantomCase generate_case(const PhantomSpec& spec, std::uint64_t case_index = 0);

// blur -> integer downsample -> contrast scale -> additive noise
MultiModalVolume degrade(const MultiModalVolume& volume, const DomainProfile& profile,
                         std::uint64_t seed);

TensorF degrade_channel(const TensorF& channel, const DomainProfile& profile, CounterRng& rng);

}  // namespace voxseg
