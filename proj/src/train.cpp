#include "voxseg/train.hpp"

#include "voxseg/metrics.hpp"

#include <cmath>
#include <sstream>

namespace voxseg {

double poly_lr(int step, int total_steps, double lr0, double power) {
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("poly_lr: step outside [0, total_steps]");
  if (total_steps == 0) return 0.0;
  return lr0 * std::pow(1.0 - static_cast<double>(step) / total_steps, power);
}

void sgd_step(std::vector<std::pair<std::string, nn::NodePtr<float>>>& params, SgdState& state,
              double lr, double momentum, bool nesterov, double weight_decay) {
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (auto& [name, p] : params) state.velocity.emplace_back(TensorF(p->value.shape));
  }
  if (state.velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: velocity/parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].second;
    auto& v = state.velocity[i];
    if (v.shape != p->value.shape) throw std::invalid_argument("sgd_step: velocity shape mismatch");
    for (std::int64_t k = 0; k < p->value.size(); ++k) {
      float g = p->grad[k] + static_cast<float>(weight_decay) * p->value[k];
      float vk = static_cast<float>(momentum) * v[k] - static_cast<float>(lr) * g;
      v[k] = vk;
      if (nesterov)
        p->value[k] += static_cast<float>(momentum) * vk - static_cast<float>(lr) * g;
      else
        p->value[k] += vk;
    }
  }
  ++state.step;
}

TrainCase normalize_case(const TrainCase& c) {
  TrainCase out = c;
  for (auto& ch : out.image.channels) ch = znormalize(ch, ForegroundPolicy::kNonzero);
  return out;
}

Dataset normalize_dataset(const Dataset& ds) {
  Dataset out;
  out.reserve(ds.size());
  for (const auto& c : ds) out.push_back(normalize_case(c));
  return out;
}

PatchPair sample_patch(const TrainCase& c, const std::array<std::int64_t, 3>& patch_shape,
                       double foreground_bias, CounterRng& rng) {
  const auto& vshape = c.labels.labels.shape;
  std::array<std::int64_t, 3> center;
  bool want_fg = rng.uniform() < foreground_bias;
  std::int64_t fg_pick = -1;
  if (want_fg) {
    std::int64_t fg_count = 0;
    for (auto v : c.labels.labels.data) fg_count += (v != 0);
    if (fg_count > 0) fg_pick = rng.uniform_int(fg_count);
  }
  if (fg_pick >= 0) {
    std::int64_t seen = 0;
    std::int64_t idx = 0;
    for (std::int64_t i = 0; i < c.labels.labels.size(); ++i)
      if (c.labels.labels[i] != 0 && seen++ == fg_pick) {
        idx = i;
        break;
      }
    center[0] = idx % vshape[0];
    center[1] = (idx / vshape[0]) % vshape[1];
    center[2] = idx / (vshape[0] * vshape[1]);
  } else {
    for (int a = 0; a < 3; ++a)
      center[static_cast<std::size_t>(a)] = rng.uniform_int(vshape[static_cast<std::size_t>(a)]);
  }

  std::array<std::int64_t, 3> start;
  for (int a = 0; a < 3; ++a)
    start[static_cast<std::size_t>(a)] =
        center[static_cast<std::size_t>(a)] - patch_shape[static_cast<std::size_t>(a)] / 2;

  PatchPair p;
  p.labels = TensorU8({patch_shape[0], patch_shape[1], patch_shape[2]});
  for (auto& ch : p.image) ch = TensorF({patch_shape[0], patch_shape[1], patch_shape[2]});
  for (std::int64_t z = 0; z < patch_shape[2]; ++z)
    for (std::int64_t y = 0; y < patch_shape[1]; ++y)
      for (std::int64_t x = 0; x < patch_shape[0]; ++x) {
        std::int64_t sx = start[0] + x, sy = start[1] + y, sz = start[2] + z;
        bool in = sx >= 0 && sx < vshape[0] && sy >= 0 && sy < vshape[1] && sz >= 0 && sz < vshape[2];
        if (!in) continue;  // zero padding
        p.labels.at3(x, y, z) = c.labels.labels.at3(sx, sy, sz);
        for (int m = 0; m < kNumModalities; ++m)
          p.image[static_cast<std::size_t>(m)].at3(x, y, z) =
              c.image.channels[static_cast<std::size_t>(m)].at3(sx, sy, sz);
      }
  return p;
}

Mat3 rotation_scale_matrix(const std::array<double, 3>& a, double scale_factor) {
  auto mul = [](const Mat3& m, const Mat3& n) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r[i][j] += m[i][k] * n[k][j];
    return r;
  };
  double cx = std::cos(a[0]), sx = std::sin(a[0]);
  double cy = std::cos(a[1]), sy = std::sin(a[1]);
  double cz = std::cos(a[2]), sz = std::sin(a[2]);
  Mat3 rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
  Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
  Mat3 rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
  Mat3 m = mul(rz, mul(ry, rx));
  for (auto& row : m)
    for (auto& v : row) v *= scale_factor;
  return m;
}

void warp_patch(PatchPair& patch, const Mat3& inverse_map,
                const std::array<TensorF, 3>* displacement) {
  const auto shape = patch.labels.shape;
  std::array<double, 3> center{(shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0, (shape[2] - 1) / 2.0};

  PatchPair out;
  out.labels = TensorU8(shape);
  for (auto& ch : out.image) ch = TensorF(shape);

  for (std::int64_t z = 0; z < shape[2]; ++z)
    for (std::int64_t y = 0; y < shape[1]; ++y)
      for (std::int64_t x = 0; x < shape[0]; ++x) {
        double t[3] = {x - center[0], y - center[1], z - center[2]};
        double s[3];
        for (int i = 0; i < 3; ++i)
          s[i] = center[static_cast<std::size_t>(i)] + inverse_map[static_cast<std::size_t>(i)][0] * t[0] +
                 inverse_map[static_cast<std::size_t>(i)][1] * t[1] +
                 inverse_map[static_cast<std::size_t>(i)][2] * t[2];
        if (displacement)
          for (int i = 0; i < 3; ++i) s[i] += (*displacement)[static_cast<std::size_t>(i)].at3(x, y, z);
        for (int m = 0; m < kNumModalities; ++m)
          out.image[static_cast<std::size_t>(m)].at3(x, y, z) =
              sample_trilinear(patch.image[static_cast<std::size_t>(m)], s[0], s[1], s[2]);
        std::int64_t nx = std::clamp<std::int64_t>(std::llround(s[0]), 0, shape[0] - 1);
        std::int64_t ny = std::clamp<std::int64_t>(std::llround(s[1]), 0, shape[1] - 1);
        std::int64_t nz = std::clamp<std::int64_t>(std::llround(s[2]), 0, shape[2] - 1);
        out.labels.at3(x, y, z) = patch.labels.at3(nx, ny, nz);
      }
  patch = std::move(out);
}

void augment(PatchPair& patch, const AugmentationConfig& cfg, CounterRng& rng) {
  cfg.validate();
  std::array<double, 3> angles{0, 0, 0};
  double scale_factor = 1.0;
  bool spatial = false;
  if (rng.uniform() < cfg.p_rotation) {
    const double deg = 0.017453292519943295;
    for (auto& a : angles) a = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) * deg;
    spatial = true;
  }
  if (rng.uniform() < cfg.p_scale) {
    scale_factor = rng.uniform(cfg.scale_range[0], cfg.scale_range[1]);
    spatial = true;
  }
  std::array<TensorF, 3> disp;
  bool elastic = rng.uniform() < cfg.p_elastic;
  if (elastic) {
    for (auto& d : disp) {
      d = TensorF(patch.labels.shape);
      for (auto& v : d.data) v = static_cast<float>(rng.normal());
      d = gaussian_blur3(d, cfg.elastic_sigma);
      for (auto& v : d.data) v = static_cast<float>(v * cfg.elastic_alpha);
    }
    spatial = true;
  }
  if (spatial) {
    // inverse of rotate-then-scale: transpose of the rotation over the scale
    Mat3 fwd = rotation_scale_matrix(angles, 1.0);
    Mat3 inv{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        inv[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
            fwd[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] / scale_factor;
    warp_patch(patch, inv, elastic ? &disp : nullptr);
  }

  if (rng.uniform() < cfg.p_brightness) {
    double mul = rng.uniform(cfg.brightness_mul[0], cfg.brightness_mul[1]);
    double add = rng.uniform(cfg.brightness_add[0], cfg.brightness_add[1]);
    for (auto& ch : patch.image)
      for (auto& v : ch.data) v = static_cast<float>(v * mul + add);
  }
  if (rng.uniform() < cfg.p_gamma) {
    double gamma = rng.uniform(cfg.gamma_range[0], cfg.gamma_range[1]);
    for (auto& ch : patch.image) {
      float lo = ch.data[0], hi = ch.data[0];
      for (float v : ch.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi <= lo) continue;
      double range = hi - lo;
      for (auto& v : ch.data)
        v = static_cast<float>(lo + std::pow((v - lo) / range, gamma) * range);
    }
  }
}

std::string TrainingLog::to_csv() const {
  std::ostringstream os;
  os << "step,lr,loss,dice_term,bce_term\n";
  os.precision(9);
  for (const auto& s : steps)
    os << s.step << ',' << s.lr << ',' << s.loss << ',' << s.dice_term << ',' << s.bce_term << '\n';
  return os.str();
}

std::string TrainingLog::digest() const {
  std::string csv = to_csv();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : csv) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

namespace {

// stack patch channels into a [N, 4, pz, py, px] network tensor; the memory
// layout of an (x,y,z) volume equals (W,H,D) with W fastest
void copy_patch_into_batch(const PatchPair& p, TensorF& batch, std::int64_t n) {
  const std::int64_t vox = p.image[0].size();
  for (int m = 0; m < kNumModalities; ++m)
    std::copy_n(p.image[static_cast<std::size_t>(m)].data.data(), vox,
                batch.data.data() + (n * kNumModalities + m) * vox);
}

// per-head targets: region masks nearest-downsampled by 2^h
std::vector<TensorF> make_targets(const std::vector<PatchPair>& batch, int heads) {
  const auto shape = batch[0].labels.shape;
  const auto b = static_cast<std::int64_t>(batch.size());
  std::vector<TensorF> targets;
  for (int h = 0; h < heads; ++h) {
    const std::int64_t f = std::int64_t(1) << h;
    std::array<std::int64_t, 3> s{shape[0] / f, shape[1] / f, shape[2] / f};
    TensorF t({b, kNumRegions, s[2], s[1], s[0]});
    const std::int64_t vox = s[0] * s[1] * s[2];
    for (std::int64_t n = 0; n < b; ++n) {
      const auto& lab = batch[static_cast<std::size_t>(n)].labels;
      std::int64_t i = 0;
      for (std::int64_t z = 0; z < s[2]; ++z)
        for (std::int64_t y = 0; y < s[1]; ++y)
          for (std::int64_t x = 0; x < s[0]; ++x, ++i) {
            std::uint8_t v = lab.at3(x * f, y * f, z * f);
            t[(n * kNumRegions + 0) * vox + i] = (v == kEt) ? 1.0f : 0.0f;
            t[(n * kNumRegions + 1) * vox + i] = (v == kEt || v == kNetc) ? 1.0f : 0.0f;
            t[(n * kNumRegions + 2) * vox + i] = (v != kBackground) ? 1.0f : 0.0f;
          }
    }
    targets.push_back(std::move(t));
  }
  return targets;
}

}  // namespace

TrainingLog train(SegNet<float>& model, const Dataset& dataset, const OptimizerConfig& opt,
                  nn::DiceLossConfig loss_cfg, const AugmentationConfig& aug, int steps,
                  std::uint64_t seed, const TrainOptions& topts) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  opt.validate();
  aug.validate();
  const int heads = 1 + model.config().ds_heads();
  if (loss_cfg.ds_weights.empty()) loss_cfg.ds_weights = nn::default_ds_weights(heads);

  const auto patch_shape = model.config().patch_shape;
  SgdState state;
  TrainingLog log;
  for (int step = 0; step < steps; ++step) {
    CounterRng rng(seed, 0x57e9 + static_cast<std::uint64_t>(step));
    std::vector<PatchPair> batch;
    for (int b = 0; b < topts.batch_size; ++b) {
      const auto& c = dataset[static_cast<std::size_t>(rng.uniform_int(
          static_cast<std::int64_t>(dataset.size())))];
      PatchPair p = sample_patch(c, patch_shape, topts.foreground_bias, rng);
      augment(p, aug, rng);
      batch.push_back(std::move(p));
    }
    TensorF input({static_cast<std::int64_t>(batch.size()), kNumModalities, patch_shape[2],
                   patch_shape[1], patch_shape[0]});
    for (std::size_t b = 0; b < batch.size(); ++b)
      copy_patch_into_batch(batch[b], input, static_cast<std::int64_t>(b));
    auto targets = make_targets(batch, heads);

    model.zero_grads();
    auto outputs = model.forward(input);
    auto loss = nn::combined_loss(outputs, targets, loss_cfg);
    double loss_value = loss.total->value[0];
    if (!std::isfinite(loss_value))
      throw NumericalError("train: non-finite loss at step " + std::to_string(step));
    nn::backward(loss.total);
    double lr = poly_lr(step, opt.total_steps, opt.lr0, opt.poly_power);
    sgd_step(model.params(), state, lr, opt.momentum, opt.nesterov, opt.weight_decay);
    log.steps.push_back({step, lr, loss_value, loss.dice_term, loss.bce_term});
  }
  return log;
}

SegNet<float> fine_tune(const Checkpoint& ck, const Dataset& dataset, OptimizerConfig opt,
                        int steps, std::uint64_t seed, const nn::DiceLossConfig& loss_cfg,
                        const AugmentationConfig& aug, TrainingLog* log,
                        const TrainOptions& topts) {
  SegNet<float> model = seg_from_checkpoint(ck);
  opt.total_steps = steps;
  TrainingLog l = train(model, dataset, opt, loss_cfg, aug, steps, seed, topts);
  if (log) *log = std::move(l);
  return model;
}

TrainingLog sr_train(SRNet<float>& model, const std::vector<SrPair>& pairs,
                     const OptimizerConfig& opt, int epochs, std::uint64_t seed) {
  opt.validate();
  for (const auto& p : pairs)
    for (int a = 0; a < 3; ++a)
      if (p.hr.shape[static_cast<std::size_t>(a)] != 2 * p.lr.shape[static_cast<std::size_t>(a)])
        throw std::invalid_argument("sr_train: HR shape must be 2x LR shape");
  (void)seed;  // pair order is fixed; nothing else is stochastic

  const int total = epochs * static_cast<int>(pairs.size());
  SgdState state;
  TrainingLog log;
  int step = 0;
  for (int e = 0; e < epochs; ++e)
    for (const auto& pair : pairs) {
      TensorF up = resample(pair.lr, {2.0, 2.0, 2.0}, ResampleMode::kTrilinear);
      Tensor<float> x({1, 1, up.shape[2], up.shape[1], up.shape[0]});
      std::copy(up.data.begin(), up.data.end(), x.data.begin());
      Tensor<float> residual_target({1, 1, up.shape[2], up.shape[1], up.shape[0]});
      for (std::int64_t i = 0; i < up.size(); ++i) residual_target[i] = pair.hr[i] - up[i];

      model.zero_grads();
      auto res = model.residual(x);
      auto loss = nn::mse_loss(res, residual_target);
      double loss_value = loss->value[0];
      if (!std::isfinite(loss_value))
        throw NumericalError("sr_train: non-finite loss at step " + std::to_string(step));
      nn::backward(loss);
      double lr = poly_lr(step, total, opt.lr0, opt.poly_power);
      sgd_step(model.params(), state, lr, opt.momentum, opt.nesterov, opt.weight_decay);
      log.steps.push_back({step, lr, loss_value, 0.0, 0.0});
      ++step;
    }
  return log;
}

StrategyResult run_strategy(const StrategySpec& spec, const SegNetConfig& baseline_cfg,
                            const SegNetConfig& expanded_cfg, const Dataset* pretrain_ds,
                            const Dataset& target_ds, const SRNet<float>* sr_model,
                            const nn::DiceLossConfig& loss_cfg, const AugmentationConfig& aug,
                            std::uint64_t seed, const TrainOptions& topts) {
  if (spec.kind == StrategyKind::kGliToSsa && !pretrain_ds)
    throw std::invalid_argument("run_strategy: S_GLI_to_SSA requires a pretrain dataset");
  if (spec.kind == StrategyKind::kSrSsa && !sr_model)
    throw std::invalid_argument("run_strategy: S_srSSA requires an SR model");

  Dataset target;
  if (spec.kind == StrategyKind::kSrSsa) {
    for (const auto& c : target_ds) {
      SrCase e = sr_enhance_case(*sr_model, c.image, c.labels);
      target.push_back(normalize_case({c.id, std::move(e.image), std::move(e.labels)}));
    }
  } else {
    target = normalize_dataset(target_ds);
  }

  StrategyResult result;
  const SegNetConfig* cfgs[2] = {&baseline_cfg, &expanded_cfg};
  const char* variant_names[2] = {"baseline", "expanded"};
  for (int v = 0; v < 2; ++v) {
    SegNet<float> model(*cfgs[v], seed + static_cast<std::uint64_t>(v));
    std::string tag = strategy_tag(spec.kind);
    if (spec.kind == StrategyKind::kGliToSsa) {
      Dataset pre = normalize_dataset(*pretrain_ds);
      OptimizerConfig popt = spec.pretrain_opt;
      popt.total_steps = spec.pretrain_steps;
      auto plog = train(model, pre, popt, loss_cfg, aug, spec.pretrain_steps,
                        seed + 100 + static_cast<std::uint64_t>(v), topts);
      result.logs.emplace_back(std::string(variant_names[v]) + ".pretrain", std::move(plog));
    }
    OptimizerConfig topt = spec.target_opt;
    topt.total_steps = spec.target_steps;
    auto tlog = train(model, target, topt, loss_cfg, aug, spec.target_steps,
                      seed + 200 + static_cast<std::uint64_t>(v), topts);

    Checkpoint ck = checkpoint_from_seg(model, tag);
    ck.step = static_cast<std::uint64_t>(spec.target_steps +
                                         (spec.kind == StrategyKind::kGliToSsa ? spec.pretrain_steps : 0));
    ck.log_digest = tlog.digest();
    result.logs.emplace_back(std::string(variant_names[v]) + ".train", std::move(tlog));
    if (v == 0)
      result.baseline = std::move(ck);
    else
      result.expanded = std::move(ck);
  }
  return result;
}

}  // namespace voxseg
