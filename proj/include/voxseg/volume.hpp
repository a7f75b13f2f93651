#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "voxseg/tensor.hpp"

namespace voxseg {

struct Geometry {
  std::array<std::int64_t, 3> shape{0, 0, 0};  // voxels per axis (x, y, z)
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel

  void validate() const {
    for (int i = 0; i < 3; ++i) {
      if (shape[i] < 1) throw std::invalid_argument("Geometry: shape entries must be >= 1");
      if (!(spacing[i] > 0.0)) throw std::invalid_argument("Geometry: spacing entries must be > 0");
    }
  }
  std::int64_t voxels() const { return shape[0] * shape[1] * shape[2]; }
  bool operator==(const Geometry& o) const { return shape == o.shape && spacing == o.spacing; }
};

// Canonical label convention. Legacy BraTS files encode ET as 4; the loader
// remaps 4 -> 3 on ingest.
enum Label : std::uint8_t { kBackground = 0, kNetc = 1, kSnfh = 2, kEt = 3 };

// The four mpMRI channels, in this fixed order.
enum Modality : int { kT1 = 0, kT1Gd = 1, kT2 = 2, kFlair = 3 };
inline constexpr int kNumModalities = 4;
inline constexpr const char* kModalityNames[kNumModalities] = {"t1", "t1gd", "t2", "flair"};

struct MultiModalVolume {
  std::array<TensorF, kNumModalities> channels;  // T1, T1Gd, T2, T2-FLAIR
  Geometry geometry;

  void validate() const;
};

struct LabelMap {
  TensorU8 labels;
  Geometry geometry;

  void validate() const;
};

struct RegionMaskSet {
  Tensor<std::uint8_t> et, tc, wt;  // 0/1 masks, et <= tc <= wt voxelwise
  Geometry geometry;
};

enum class ForegroundPolicy { kNonzero, kAll };
enum class ResampleMode { kTrilinear, kNearest };

// Z-score over the chosen foreground; population std. Zero-variance (or
// empty) foreground yields an all-zero output.
TensorF znormalize(const TensorF& volume, ForegroundPolicy policy);

// ET = {3}, TC = {1,3}, WT = {1,2,3}; the hierarchy et <= tc <= wt holds by
// construction.
RegionMaskSet labels_to_regions(const LabelMap& labels);

// Inverse of labels_to_regions. With repair the masks are first closed under
// the hierarchy (tc |= et, wt |= tc); without it a violation throws.
LabelMap regions_to_labels(const RegionMaskSet& regions, bool repair = false);

// Output shape = round(shape * factor); spacing divided by factor. Nearest
// mode is required for label data.
TensorF resample(const TensorF& volume, const std::array<double, 3>& factor, ResampleMode mode);

Geometry resampled_geometry(const Geometry& g, const std::array<double, 3>& factor);

// Trilinear sample of `v` at continuous (x, y, z); coordinates clamped to the
// valid range.
float sample_trilinear(const TensorF& v, double x, double y, double z);

// Separable Gaussian blur, truncated at 3 sigma, edge-clamped. sigma in
// voxels; sigma <= 0 is the identity.
TensorF gaussian_blur3(const TensorF& volume, double sigma);

}  // namespace voxseg
