#pragma once

#include <string>
#include <vector>

#include "voxseg/checkpoint.hpp"
#include "voxseg/nn/losses.hpp"
#include "voxseg/phantom.hpp"
#include "voxseg/segnet.hpp"
#include "voxseg/srnet.hpp"

namespace voxseg {

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OptimizerConfig {
  double lr0 = 0.01;
  double momentum = 0.99;
  bool nesterov = true;
  double poly_power = 0.9;
  int total_steps = 1000;
  double weight_decay = 0.0;

  void validate() const {
    if (!(lr0 > 0)) throw std::invalid_argument("OptimizerConfig: lr0 must be > 0");
    if (momentum < 0 || momentum >= 1)
      throw std::invalid_argument("OptimizerConfig: momentum must be in [0, 1)");
    if (total_steps < 0) throw std::invalid_argument("OptimizerConfig: total_steps must be >= 0");
    if (weight_decay < 0) throw std::invalid_argument("OptimizerConfig: weight_decay must be >= 0");
  }
};

// lr0 * (1 - step/total)^power
double poly_lr(int step, int total_steps, double lr0, double power);

struct SgdState {
  std::vector<TensorF> velocity;  // one per parameter, same order
  std::uint64_t step = 0;
};

// Nesterov form: v <- m*v - lr*g; w <- w + m*v - lr*g. Plain momentum uses
// w <- w + v. Weight decay folds into g.
void sgd_step(std::vector<std::pair<std::string, nn::NodePtr<float>>>& params, SgdState& state,
              double lr, double momentum, bool nesterov, double weight_decay = 0.0);

struct AugmentationConfig {
  double p_rotation = 0.2;
  double max_rotation_deg = 15.0;  // per axis
  double p_scale = 0.2;
  std::array<double, 2> scale_range{0.9, 1.1};
  double p_elastic = 0.2;
  double elastic_alpha = 2.0;  // displacement magnitude (voxels)
  double elastic_sigma = 3.0;  // field smoothness (voxels)
  double p_brightness = 0.3;
  std::array<double, 2> brightness_add{-0.1, 0.1};
  std::array<double, 2> brightness_mul{0.9, 1.1};
  double p_gamma = 0.3;
  std::array<double, 2> gamma_range{0.7, 1.5};

  void validate() const {
    auto range_ok = [](const std::array<double, 2>& r) { return r[0] <= r[1]; };
    if (!range_ok(scale_range) || !range_ok(brightness_add) || !range_ok(brightness_mul) ||
        !range_ok(gamma_range))
      throw std::invalid_argument("AugmentationConfig: range lo > hi");
    if (!(gamma_range[0] > 0)) throw std::invalid_argument("AugmentationConfig: gamma must be > 0");
    for (double p : {p_rotation, p_scale, p_elastic, p_brightness, p_gamma})
      if (p < 0 || p > 1) throw std::invalid_argument("AugmentationConfig: probability out of [0,1]");
  }

  static AugmentationConfig disabled() {
    AugmentationConfig a;
    a.p_rotation = a.p_scale = a.p_elastic = a.p_brightness = a.p_gamma = 0.0;
    return a;
  }
};

struct TrainCase {
  std::string id;
  MultiModalVolume image;
  LabelMap labels;
};
using Dataset = std::vector<TrainCase>;

// per-channel z-score over nonzero voxels
TrainCase normalize_case(const TrainCase& c);
Dataset normalize_dataset(const Dataset& ds);

struct PatchPair {
  std::array<TensorF, kNumModalities> image;  // (x, y, z) order
  TensorU8 labels;
};

// With probability foreground_bias the patch center is a tumor voxel (when
// any exist); out-of-volume voxels are zero-padded.
PatchPair sample_patch(const TrainCase& c, const std::array<std::int64_t, 3>& patch_shape,
                       double foreground_bias, CounterRng& rng);

// row-major 3x3
using Mat3 = std::array<std::array<double, 3>, 3>;
Mat3 rotation_scale_matrix(const std::array<double, 3>& angles_rad, double scale_factor);

// Resamples the patch through the inverse spatial map
//   source = center + M * (target - center) + displacement(target)
// trilinear for image channels, nearest for labels.
void warp_patch(PatchPair& patch, const Mat3& inverse_map,
                const std::array<TensorF, 3>* displacement);

// spatial transforms hit image and labels identically; intensity transforms
// (brightness, gamma) hit the image only
void augment(PatchPair& patch, const AugmentationConfig& cfg, CounterRng& rng);

struct StepRecord {
  int step;
  double lr, loss, dice_term, bce_term;
};

struct TrainingLog {
  std::vector<StepRecord> steps;
  std::string to_csv() const;
  std::string digest() const;  // short hash of the csv, stored in checkpoints
};

struct TrainOptions {
  int batch_size = 2;
  double foreground_bias = 0.5;
};

// The step loop: sample batch -> augment -> forward -> combined loss ->
// backward -> Nesterov SGD with poly decay. Deterministic in (seed, model).
// A non-finite loss aborts with the offending step in the message.
TrainingLog train(SegNet<float>& model, const Dataset& dataset, const OptimizerConfig& opt,
                  nn::DiceLossConfig loss_cfg, const AugmentationConfig& aug, int steps,
                  std::uint64_t seed, const TrainOptions& topts = {});

// Resumes from checkpoint parameters with fresh optimizer state and a fresh
// poly schedule over `steps`.
SegNet<float> fine_tune(const Checkpoint& ck, const Dataset& dataset, OptimizerConfig opt,
                        int steps, std::uint64_t seed, const nn::DiceLossConfig& loss_cfg,
                        const AugmentationConfig& aug, TrainingLog* log = nullptr,
                        const TrainOptions& topts = {});

// LR/HR pairs for SR training; HR shape must be 2x LR shape per axis
struct SrPair {
  TensorF lr;
  TensorF hr;
};

// MSE between upscale(lr) and hr under the same SGD family
TrainingLog sr_train(SRNet<float>& model, const std::vector<SrPair>& pairs,
                     const OptimizerConfig& opt, int epochs, std::uint64_t seed);

enum class StrategyKind { kGliToSsa, kSsa, kSrSsa };

inline const char* strategy_tag(StrategyKind k) {
  switch (k) {
    case StrategyKind::kGliToSsa: return "S_GLI_to_SSA";
    case StrategyKind::kSsa: return "S_SSA";
    case StrategyKind::kSrSsa: return "S_srSSA";
  }
  return "?";
}

struct StrategySpec {
  StrategyKind kind = StrategyKind::kSsa;
  int pretrain_steps = 0;  // kind 1 only
  int target_steps = 100;
  OptimizerConfig pretrain_opt;
  OptimizerConfig target_opt;
};

struct StrategyResult {
  Checkpoint baseline;
  Checkpoint expanded;
  std::vector<std::pair<std::string, TrainingLog>> logs;  // "<variant>.<phase>"
};

// Trains both network variants under one data-utilization strategy. Datasets
// come in raw; normalization (and SR enhancement for kind 3) happens here.
StrategyResult run_strategy(const StrategySpec& spec, const SegNetConfig& baseline_cfg,
                            const SegNetConfig& expanded_cfg, const Dataset* pretrain_ds,
                            const Dataset& target_ds, const SRNet<float>* sr_model,
                            const nn::DiceLossConfig& loss_cfg, const AugmentationConfig& aug,
                            std::uint64_t seed, const TrainOptions& topts = {});

}  // namespace voxseg
