#pragma once

#include <vector>

#include "voxseg/nn/ops.hpp"

namespace voxseg::nn {

enum class DiceMode { kBatch, kSample };

template <typename T>
NodePtr<T> add_scalar(const NodePtr<T>& a, T c) {
  Tensor<T> out(a->value.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + c;
  return make_op<T>(std::move(out), {a}, [a](Node<T>& self) {
    for (std::int64_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
  });
}

// mean over elements of -[t log p + (1-t) log(1-p)], p clamped to
// [eps, 1-eps]; gradient is zero where the clamp saturates
template <typename T>
NodePtr<T> bce_loss(const NodePtr<T>& probs, const Tensor<T>& targets, T eps = T(1e-7)) {
  if (!probs->value.same_shape(targets)) throw std::invalid_argument("bce_loss: shape mismatch");
  const std::int64_t n = probs->value.size();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double p = std::clamp<double>(probs->value[i], eps, 1.0 - eps);
    double t = targets[i];
    acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  Tensor<T> out(std::vector<std::int64_t>{});
  out.data.assign(1, static_cast<T>(acc / n));
  auto tgt = std::make_shared<Tensor<T>>(targets);
  return make_op<T>(std::move(out), {probs}, [probs, tgt, n, eps](Node<T>& self) {
    T g = self.grad[0];
    for (std::int64_t i = 0; i < n; ++i) {
      T p = probs->value[i];
      if (p <= eps || p >= T(1) - eps) continue;
      double t = (*tgt)[i];
      probs->grad[i] += static_cast<T>(g * (static_cast<double>(p) - t) /
                                       (static_cast<double>(p) * (1.0 - p)) / n);
    }
  });
}

// Soft dice over [B, R, spatial...]. Batch mode sums intersections and
// volumes over the whole batch per region before dividing; sample mode
// computes a dice per (sample, region) and averages. Empty num/den with
// smooth 0 uses the 0/0 -> 0 convention. Returns the dice value (in [0,1]);
// the loss term is 1 - value.
template <typename T>
NodePtr<T> soft_dice(const NodePtr<T>& probs, const Tensor<T>& targets, DiceMode mode, T smooth) {
  if (!probs->value.same_shape(targets)) throw std::invalid_argument("soft_dice: shape mismatch");
  const std::int64_t b = probs->value.dim(0);
  const std::int64_t r = probs->value.dim(1);
  std::int64_t vox = 1;
  for (int d = 2; d < probs->value.ndim(); ++d) vox *= probs->value.dim(d);

  const std::int64_t units = (mode == DiceMode::kSample) ? b * r : r;
  std::vector<double> num(static_cast<std::size_t>(units)), den(static_cast<std::size_t>(units));
  auto unit_of = [mode, r](std::int64_t bi, std::int64_t ri) {
    return mode == DiceMode::kSample ? bi * r + ri : ri;
  };
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t ri = 0; ri < r; ++ri) {
      const T* p = probs->value.data.data() + (bi * r + ri) * vox;
      const T* t = targets.data.data() + (bi * r + ri) * vox;
      double spt = 0, sp = 0, st = 0;
      for (std::int64_t i = 0; i < vox; ++i) {
        spt += static_cast<double>(p[i]) * t[i];
        sp += p[i];
        st += t[i];
      }
      auto u = static_cast<std::size_t>(unit_of(bi, ri));
      num[u] += 2.0 * spt;
      den[u] += sp + st;
    }
  double dice = 0;
  for (std::int64_t u = 0; u < units; ++u) {
    double nu = num[static_cast<std::size_t>(u)] + smooth;
    double de = den[static_cast<std::size_t>(u)] + smooth;
    dice += (de > 0) ? nu / de : 0.0;
  }
  dice /= units;

  Tensor<T> out(std::vector<std::int64_t>{});
  out.data.assign(1, static_cast<T>(dice));
  auto tgt = std::make_shared<Tensor<T>>(targets);
  auto nums = std::make_shared<std::vector<double>>(std::move(num));
  auto dens = std::make_shared<std::vector<double>>(std::move(den));
  return make_op<T>(
      std::move(out), {probs},
      [probs, tgt, nums, dens, b, r, vox, units, smooth, unit_of](Node<T>& self) {
        T g = self.grad[0];
        for (std::int64_t bi = 0; bi < b; ++bi)
          for (std::int64_t ri = 0; ri < r; ++ri) {
            auto u = static_cast<std::size_t>(unit_of(bi, ri));
            double nu = (*nums)[u] + smooth;
            double de = (*dens)[u] + smooth;
            if (!(de > 0)) continue;
            T* dp = probs->grad.data.data() + (bi * r + ri) * vox;
            const T* t = tgt->data.data() + (bi * r + ri) * vox;
            double inv_de2 = 1.0 / (de * de);
            for (std::int64_t i = 0; i < vox; ++i)
              dp[i] += static_cast<T>(g * (2.0 * t[i] * de - nu) * inv_de2 / units);
          }
      });
}

struct DiceLossConfig {
  DiceMode mode = DiceMode::kBatch;
  double smooth = 1e-5;
  std::vector<double> ds_weights;  // one per head, must sum to 1
};

// Default deep-supervision weights 2^-h, normalized to sum 1.
inline std::vector<double> default_ds_weights(int heads) {
  std::vector<double> w(static_cast<std::size_t>(heads));
  double s = 0;
  for (int h = 0; h < heads; ++h) {
    w[static_cast<std::size_t>(h)] = std::pow(0.5, h);
    s += w[static_cast<std::size_t>(h)];
  }
  for (auto& v : w) v /= s;
  return w;
}

template <typename T>
struct CombinedLoss {
  NodePtr<T> total;
  double dice_term = 0;  // weighted sum of (1 - dice_h)
  double bce_term = 0;   // weighted sum of bce_h
};

// sum_h w_h * [(1 - soft_dice_h) + bce_h]; one target tensor per head
template <typename T>
CombinedLoss<T> combined_loss(const std::vector<NodePtr<T>>& outputs,
                              const std::vector<Tensor<T>>& targets, const DiceLossConfig& cfg) {
  if (outputs.size() != targets.size())
    throw std::invalid_argument("combined_loss: head/target count mismatch");
  if (cfg.ds_weights.size() != outputs.size())
    throw std::invalid_argument("combined_loss: head/weight count mismatch");
  double wsum = 0;
  for (double w : cfg.ds_weights) wsum += w;
  if (std::abs(wsum - 1.0) > 1e-9)
    throw std::invalid_argument("combined_loss: ds_weights must sum to 1");

  CombinedLoss<T> result;
  for (std::size_t h = 0; h < outputs.size(); ++h) {
    T w = static_cast<T>(cfg.ds_weights[h]);
    auto dice = soft_dice(outputs[h], targets[h], cfg.mode, static_cast<T>(cfg.smooth));
    auto dice_loss = add_scalar(scale(dice, T(-1)), T(1));
    auto ce = bce_loss(outputs[h], targets[h]);
    result.dice_term += cfg.ds_weights[h] * dice_loss->value[0];
    result.bce_term += cfg.ds_weights[h] * ce->value[0];
    auto term = scale(add(dice_loss, ce), w);
    result.total = result.total ? add(result.total, term) : term;
  }
  return result;
}

}  // namespace voxseg::nn
