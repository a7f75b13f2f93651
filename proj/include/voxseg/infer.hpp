#pragma once

#include <vector>

#include "voxseg/segnet.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

enum class WindowWeighting { kUniform, kGaussian };

struct InferenceConfig {
  double overlap = 0.5;  // fraction of patch shared between adjacent windows
  WindowWeighting weighting = WindowWeighting::kGaussian;
  double gaussian_sigma_frac = 0.125;  // sigma as a fraction of patch extent
  double threshold = 0.5;
  std::vector<double> ensemble_weights;  // normalized; empty -> equal

  void validate() const {
    if (overlap < 0 || overlap >= 1)
      throw std::invalid_argument("InferenceConfig: overlap must be in [0, 1)");
    if (!(threshold > 0 && threshold < 1))
      throw std::invalid_argument("InferenceConfig: threshold must be in (0, 1)");
    for (double w : ensemble_weights)
      if (w < 0) throw std::invalid_argument("InferenceConfig: negative ensemble weight");
  }
};

// Region probabilities for a whole volume, [3, nx, ny, nz] in volume axis
// order. The input must already be normalized. Window predictions are
// blended with weight-normalized accumulation (64-bit accumulators).
Tensor<float> sliding_window_infer(const SegNet<float>& model, const MultiModalVolume& volume,
                                   const InferenceConfig& cfg);

// voxelwise weighted arithmetic mean of probability maps
Tensor<float> ensemble(const std::vector<Tensor<float>>& prob_maps,
                       const std::vector<double>& weights);

// threshold each region channel, hierarchy-repair, emit labels
LabelMap compose_prediction(const Tensor<float>& region_probs, const Geometry& geom,
                            double threshold);

// full path: normalize -> per-model sliding window -> ensemble -> labels
LabelMap predict_case(const std::vector<const SegNet<float>*>& models,
                      const MultiModalVolume& volume, const InferenceConfig& cfg);

}  // namespace voxseg
