#include <doctest.h>

#include <cmath>

#include "voxseg/phantom.hpp"
#include "voxseg/train.hpp"

using namespace voxseg;

namespace {

SegNetConfig tiny_net_config() {
  SegNetConfig cfg;
  cfg.levels = 2;
  cfg.base_filters = 2;
  cfg.max_filters = 4;
  cfg.patch_shape = {8, 8, 8};
  return cfg;
}

Dataset tiny_dataset(int n, std::uint64_t seed = 0) {
  PhantomSpec spec;
  spec.shape = {16, 16, 16};
  spec.r_et = {1.0, 1.5};
  spec.r_tc = {2.0, 2.5};
  spec.r_wt = {3.0, 4.0};
  spec.seed = seed;
  Dataset ds;
  for (int i = 0; i < n; ++i) {
    auto c = generate_case(spec, static_cast<std::uint64_t>(i));
    ds.push_back({"case" + std::to_string(i), std::move(c.image), std::move(c.labels)});
  }
  return normalize_dataset(ds);
}

}  // namespace

TEST_CASE("poly_lr: endpoint and midpoint pins") {
  CHECK(poly_lr(0, 1000, 0.01, 0.9) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(poly_lr(1000, 1000, 0.01, 0.9) == doctest::Approx(0.0));
  // 0.01 * 0.5^0.9
  CHECK(poly_lr(500, 1000, 0.01, 0.9) == doctest::Approx(0.005359).epsilon(1e-4));
  CHECK(poly_lr(500, 1000, 0.01, 0.9) == doctest::Approx(0.01 * std::pow(0.5, 0.9)).epsilon(1e-12));
  CHECK_THROWS_AS(poly_lr(-1, 1000, 0.01, 0.9), std::invalid_argument);
  CHECK_THROWS_AS(poly_lr(1001, 1000, 0.01, 0.9), std::invalid_argument);
}

TEST_CASE("sgd_step Nesterov matches a scalar simulation on f(w) = w^2") {
  // oracle in identical float arithmetic: g = 2w; v <- m v - lr g;
  // w <- w + m v - lr g
  const float lr = 0.1f, m = 0.9f;
  float w_oracle = 1.0f, v_oracle = 0.0f;

  Tensor<float> wv({1});
  wv.data = {1.0f};
  std::vector<std::pair<std::string, nn::NodePtr<float>>> params{{"w", nn::parameter(wv)}};
  SgdState state;
  for (int step = 0; step < 5; ++step) {
    float g = 2.0f * w_oracle;
    v_oracle = m * v_oracle - lr * g;
    w_oracle += m * v_oracle - lr * g;

    params[0].second->zero_grad();
    params[0].second->grad[0] = 2.0f * params[0].second->value[0];
    sgd_step(params, state, lr, m, true);
    CHECK(std::abs(params[0].second->value[0] - w_oracle) < 1e-12);
  }
  CHECK(state.step == 5);
}

TEST_CASE("sgd_step plain momentum applies w <- w + v") {
  Tensor<float> wv({1});
  wv.data = {1.0f};
  std::vector<std::pair<std::string, nn::NodePtr<float>>> params{{"w", nn::parameter(wv)}};
  SgdState state;
  params[0].second->grad[0] = 0.5f;
  sgd_step(params, state, 0.1, 0.9, false);
  // v = -0.05; w = 1 - 0.05
  CHECK(params[0].second->value[0] == doctest::Approx(0.95f));
  params[0].second->zero_grad();
  sgd_step(params, state, 0.1, 0.9, false);
  // v = 0.9 * -0.05 = -0.045
  CHECK(params[0].second->value[0] == doctest::Approx(0.905f));
}

TEST_CASE("sgd_step weight decay folds into the gradient") {
  Tensor<float> wv({1});
  wv.data = {2.0f};
  std::vector<std::pair<std::string, nn::NodePtr<float>>> params{{"w", nn::parameter(wv)}};
  SgdState state;
  // zero loss gradient; decay 0.1 gives g = 0.2
  sgd_step(params, state, 0.1, 0.0, false, 0.1);
  CHECK(params[0].second->value[0] == doctest::Approx(2.0f - 0.1f * 0.2f));
}

TEST_CASE("sample_patch: full foreground bias centers the patch on a tumor voxel") {
  TrainCase c;
  c.labels.geometry.shape = {8, 8, 8};
  c.labels.labels = TensorU8({8, 8, 8});
  c.labels.labels.at3(5, 4, 3) = kEt;
  for (auto& ch : c.image.channels) {
    ch = TensorF({8, 8, 8});
    ch.fill(1.0f);
  }
  c.image.geometry = c.labels.geometry;
  CounterRng rng(1, 0);
  auto p = sample_patch(c, {4, 4, 4}, 1.0, rng);
  CHECK(p.labels.shape == std::vector<std::int64_t>{4, 4, 4});
  CHECK(p.labels.at3(2, 2, 2) == kEt);
}

TEST_CASE("sample_patch zero-pads outside the volume") {
  TrainCase c;
  c.labels.geometry.shape = {4, 4, 4};
  c.labels.labels = TensorU8({4, 4, 4});
  c.labels.labels.at3(0, 0, 0) = kSnfh;
  for (auto& ch : c.image.channels) {
    ch = TensorF({4, 4, 4});
    ch.fill(3.0f);
  }
  CounterRng rng(2, 0);
  auto p = sample_patch(c, {6, 6, 6}, 1.0, rng);
  // center (0,0,0), start (-3,-3,-3): patch voxel (0,0,0) is outside
  CHECK(p.image[0].at3(0, 0, 0) == 0.0f);
  CHECK(p.labels.at3(3, 3, 3) == kSnfh);
  CHECK(p.image[0].at3(3, 3, 3) == 3.0f);
}

TEST_CASE("warp_patch: identity map leaves the patch unchanged") {
  PatchPair p;
  p.labels = TensorU8({5, 5, 5});
  CounterRng rng(3, 0);
  for (auto& v : p.labels.data) v = static_cast<std::uint8_t>(rng.uniform_int(4));
  for (auto& ch : p.image) {
    ch = TensorF({5, 5, 5});
    for (auto& v : ch.data) v = static_cast<float>(rng.uniform(-1, 1));
  }
  auto before = p;
  Mat3 identity{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  warp_patch(p, identity, nullptr);
  CHECK(p.labels.data == before.labels.data);
  for (int m = 0; m < kNumModalities; ++m)
    for (std::int64_t i = 0; i < p.image[0].size(); ++i)
      CHECK(p.image[static_cast<std::size_t>(m)][i] ==
            doctest::Approx(before.image[static_cast<std::size_t>(m)][i]).epsilon(1e-6));
}

TEST_CASE("warp_patch: 90-degree z rotation matches an axis-transposition oracle") {
  const double half_pi = 1.5707963267948966;
  PatchPair p;
  p.labels = TensorU8({5, 5, 5});
  CounterRng rng(4, 0);
  for (auto& v : p.labels.data) v = static_cast<std::uint8_t>(rng.uniform_int(4));
  for (auto& ch : p.image) {
    ch = TensorF({5, 5, 5});
    for (auto& v : ch.data) v = static_cast<float>(rng.uniform(-1, 1));
  }
  auto before = p;
  // the inverse of Rz(+90) is its transpose, Rz(-90): (x, y) -> (y, -x)
  Mat3 fwd = rotation_scale_matrix({0, 0, half_pi}, 1.0);
  Mat3 inv{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      inv[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          fwd[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
  warp_patch(p, inv, nullptr);
  // oracle: out(x, y, z) = in(2 + (y-2), 2 - (x-2), z)
  for (std::int64_t z = 0; z < 5; ++z)
    for (std::int64_t y = 0; y < 5; ++y)
      for (std::int64_t x = 0; x < 5; ++x) {
        std::int64_t sx = 2 + (y - 2), sy = 2 - (x - 2);
        CHECK(p.labels.at3(x, y, z) == before.labels.at3(sx, sy, z));
        CHECK(p.image[0].at3(x, y, z) ==
              doctest::Approx(before.image[0].at3(sx, sy, z)).epsilon(1e-4));
      }
}

TEST_CASE("rotation_scale_matrix: zero angles give scale * identity") {
  auto m = rotation_scale_matrix({0, 0, 0}, 1.3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ==
            doctest::Approx(i == j ? 1.3 : 0.0));
}

TEST_CASE("augment: disabled config is a no-op; brightness leaves labels alone") {
  PatchPair p;
  p.labels = TensorU8({6, 6, 6});
  CounterRng rng(5, 0);
  for (auto& v : p.labels.data) v = static_cast<std::uint8_t>(rng.uniform_int(4));
  for (auto& ch : p.image) {
    ch = TensorF({6, 6, 6});
    for (auto& v : ch.data) v = static_cast<float>(rng.uniform(0, 1));
  }
  auto before = p;

  auto off = AugmentationConfig::disabled();
  CounterRng arng(6, 0);
  augment(p, off, arng);
  CHECK(p.labels.data == before.labels.data);
  for (int m = 0; m < kNumModalities; ++m)
    CHECK(p.image[static_cast<std::size_t>(m)].data ==
          before.image[static_cast<std::size_t>(m)].data);

  AugmentationConfig bright = AugmentationConfig::disabled();
  bright.p_brightness = 1.0;
  CounterRng brng(7, 0);
  augment(p, bright, brng);
  CHECK(p.labels.data == before.labels.data);
  // intensity transform is affine: the difference ratio between voxel pairs
  // is preserved
  float i0 = before.image[0][0], i1 = before.image[0][1], i2 = before.image[0][2];
  float o0 = p.image[0][0], o1 = p.image[0][1], o2 = p.image[0][2];
  CHECK((o1 - o0) / (i1 - i0) == doctest::Approx((o2 - o0) / (i2 - i0)).epsilon(1e-3));
}

TEST_CASE("augment: gamma preserves the per-channel min and max") {
  PatchPair p;
  p.labels = TensorU8({6, 6, 6});
  CounterRng rng(8, 0);
  for (auto& ch : p.image) {
    ch = TensorF({6, 6, 6});
    for (auto& v : ch.data) v = static_cast<float>(rng.uniform(0, 1));
  }
  auto before = p;
  AugmentationConfig gcfg = AugmentationConfig::disabled();
  gcfg.p_gamma = 1.0;
  CounterRng grng(9, 0);
  augment(p, gcfg, grng);
  for (int m = 0; m < kNumModalities; ++m) {
    auto mm = [](const TensorF& t) {
      float lo = t.data[0], hi = t.data[0];
      for (float v : t.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      return std::pair{lo, hi};
    };
    auto [bl, bh] = mm(before.image[static_cast<std::size_t>(m)]);
    auto [al, ah] = mm(p.image[static_cast<std::size_t>(m)]);
    CHECK(al == doctest::Approx(bl).epsilon(1e-5));
    CHECK(ah == doctest::Approx(bh).epsilon(1e-5));
  }
}

TEST_CASE("augment is deterministic in the rng state") {
  AugmentationConfig cfg;  // defaults: all transforms possible
  auto make = [] {
    PatchPair p;
    p.labels = TensorU8({6, 6, 6});
    CounterRng rng(10, 0);
    for (auto& v : p.labels.data) v = static_cast<std::uint8_t>(rng.uniform_int(4));
    for (auto& ch : p.image) {
      ch = TensorF({6, 6, 6});
      for (auto& v : ch.data) v = static_cast<float>(rng.uniform(-1, 1));
    }
    return p;
  };
  auto a = make(), b = make();
  CounterRng r1(11, 3), r2(11, 3);
  augment(a, cfg, r1);
  augment(b, cfg, r2);
  CHECK(a.labels.data == b.labels.data);
  for (int m = 0; m < kNumModalities; ++m)
    CHECK(a.image[static_cast<std::size_t>(m)].data ==
          b.image[static_cast<std::size_t>(m)].data);
}

TEST_CASE("normalize_case: nonzero voxels end up zero-mean unit-std") {
  PhantomSpec spec;
  spec.shape = {16, 16, 16};
  spec.r_et = {1.0, 1.5};
  spec.r_tc = {2.0, 2.5};
  spec.r_wt = {3.0, 4.0};
  auto pc = generate_case(spec);
  TrainCase c{"c", pc.image, pc.labels};
  auto n = normalize_case(c);
  for (int m = 0; m < kNumModalities; ++m) {
    const auto& ch = n.image.channels[static_cast<std::size_t>(m)];
    const auto& raw = c.image.channels[static_cast<std::size_t>(m)];
    double mean = 0, var = 0;
    std::int64_t cnt = 0;
    for (std::int64_t i = 0; i < ch.size(); ++i) {
      if (raw[i] == 0.0f) continue;
      mean += ch[i];
      ++cnt;
    }
    REQUIRE(cnt > 0);
    mean /= static_cast<double>(cnt);
    for (std::int64_t i = 0; i < ch.size(); ++i) {
      if (raw[i] == 0.0f) continue;
      var += (ch[i] - mean) * (ch[i] - mean);
    }
    var /= static_cast<double>(cnt);
    CHECK(std::abs(mean) < 1e-4);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-4);
  }
}

TEST_CASE("train: zero steps is a no-op") {
  auto ds = tiny_dataset(1);
  SegNet<float> net(tiny_net_config(), 1);
  auto before = net.params()[0].second->value.data;
  OptimizerConfig opt;
  opt.total_steps = 10;
  auto log = train(net, ds, opt, {}, AugmentationConfig::disabled(), 0, 0);
  CHECK(log.steps.empty());
  CHECK(net.params()[0].second->value.data == before);
}

TEST_CASE("train: deterministic in the seed and actually moves the weights") {
  auto ds = tiny_dataset(2);
  OptimizerConfig opt;
  opt.total_steps = 3;
  opt.lr0 = 0.001;

  SegNet<float> a(tiny_net_config(), 1), b(tiny_net_config(), 1);
  auto before = a.params()[0].second->value.data;
  auto la = train(a, ds, opt, {}, AugmentationConfig::disabled(), 3, 77);
  auto lb = train(b, ds, opt, {}, AugmentationConfig::disabled(), 3, 77);
  CHECK(la.to_csv() == lb.to_csv());
  CHECK(la.digest() == lb.digest());
  REQUIRE(la.steps.size() == 3);
  CHECK(la.steps[0].lr == doctest::Approx(0.001));
  for (const auto& s : la.steps) CHECK(std::isfinite(s.loss));
  CHECK(a.params()[0].second->value.data != before);
  for (std::size_t i = 0; i < a.params().size(); ++i)
    CHECK(a.params()[i].second->value.data == b.params()[i].second->value.data);

  SegNet<float> c(tiny_net_config(), 1);
  auto lc = train(c, ds, opt, {}, AugmentationConfig::disabled(), 3, 78);
  CHECK(la.to_csv() != lc.to_csv());
}

TEST_CASE("train rejects an empty dataset") {
  SegNet<float> net(tiny_net_config(), 1);
  OptimizerConfig opt;
  CHECK_THROWS_AS(train(net, {}, opt, {}, AugmentationConfig::disabled(), 1, 0),
                  std::invalid_argument);
}

TEST_CASE("TrainingLog: csv header and digest stability") {
  TrainingLog log;
  log.steps.push_back({0, 0.01, 1.5, 1.0, 0.5});
  auto csv = log.to_csv();
  CHECK(csv.find("step,lr,loss,dice_term,bce_term") == 0);
  CHECK(log.digest() == log.digest());
  TrainingLog other;
  other.steps.push_back({0, 0.01, 1.5001, 1.0, 0.5});
  CHECK(log.digest() != other.digest());
}

TEST_CASE("fine_tune restarts the schedule and keeps the architecture") {
  auto ds = tiny_dataset(2);
  OptimizerConfig opt;
  opt.total_steps = 2;
  opt.lr0 = 0.001;
  SegNet<float> net(tiny_net_config(), 1);
  train(net, ds, opt, {}, AugmentationConfig::disabled(), 2, 5);
  auto ck = checkpoint_from_seg(net, "S_SSA");

  TrainingLog ftlog;
  OptimizerConfig fopt;
  fopt.lr0 = 0.001;
  auto tuned = fine_tune(ck, ds, fopt, 2, 6, {}, AugmentationConfig::disabled(), &ftlog);
  REQUIRE(ftlog.steps.size() == 2);
  // fresh poly schedule over 2 steps: first lr is lr0 again
  CHECK(ftlog.steps[0].lr == doctest::Approx(0.001));
  CHECK(tuned.parameter_count() == net.parameter_count());
}

TEST_CASE("sr_train: validates shapes and reduces the loss on an overfit pair") {
  SRNetConfig cfg;
  cfg.filters = 2;
  SRNet<float> net(cfg, 1);
  SrPair bad;
  bad.lr = TensorF({4, 4, 4});
  bad.hr = TensorF({7, 8, 8});
  OptimizerConfig opt;
  CHECK_THROWS_AS(sr_train(net, {bad}, opt, 1, 0), std::invalid_argument);

  // one synthetic pair: HR is a smooth ramp, LR its 2x block average
  TensorF hr({8, 8, 8});
  for (std::int64_t z = 0; z < 8; ++z)
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 8; ++x)
        hr.at3(x, y, z) = static_cast<float>(0.1 * x + 0.05 * y * y / 8.0 + 0.02 * z);
  TensorF lr({4, 4, 4});
  for (std::int64_t z = 0; z < 4; ++z)
    for (std::int64_t y = 0; y < 4; ++y)
      for (std::int64_t x = 0; x < 4; ++x) {
        double acc = 0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) acc += hr.at3(2 * x + dx, 2 * y + dy, 2 * z + dz);
        lr.at3(x, y, z) = static_cast<float>(acc / 8.0);
      }
  SrPair pair{std::move(lr), std::move(hr)};
  OptimizerConfig sopt;
  sopt.lr0 = 0.05;
  sopt.momentum = 0.9;
  auto log = sr_train(net, {pair}, sopt, 30, 0);
  REQUIRE(log.steps.size() == 30);
  CHECK(log.steps.back().loss < log.steps.front().loss);
  for (const auto& s : log.steps) CHECK(std::isfinite(s.loss));
}

TEST_CASE("run_strategy: tags checkpoints and validates required inputs") {
  auto ds = tiny_dataset(2);
  auto cfg_a = tiny_net_config();
  auto cfg_b = tiny_net_config();
  cfg_b.base_filters = 3;
  cfg_b.norm = NormKind::kGroup;
  cfg_b.group_count = 1;
  nn::DiceLossConfig lcfg;
  lcfg.ds_weights = nn::default_ds_weights(1);
  StrategySpec spec;
  spec.kind = StrategyKind::kSsa;
  spec.target_steps = 2;
  spec.target_opt.lr0 = 0.001;

  // raw (unnormalized) dataset in: run_strategy normalizes internally
  PhantomSpec pspec;
  pspec.shape = {16, 16, 16};
  pspec.r_et = {1.0, 1.5};
  pspec.r_tc = {2.0, 2.5};
  pspec.r_wt = {3.0, 4.0};
  Dataset raw;
  for (int i = 0; i < 2; ++i) {
    auto c = generate_case(pspec, static_cast<std::uint64_t>(i));
    raw.push_back({"r" + std::to_string(i), std::move(c.image), std::move(c.labels)});
  }

  auto result = run_strategy(spec, cfg_a, cfg_b, nullptr, raw, nullptr, lcfg,
                             AugmentationConfig::disabled(), 42);
  CHECK(result.baseline.strategy_tag == "S_SSA");
  CHECK(result.expanded.strategy_tag == "S_SSA");
  CHECK(result.baseline.model_kind == "seg");
  CHECK(result.logs.size() == 2);
  CHECK(result.baseline.step == 2);

  StrategySpec pre = spec;
  pre.kind = StrategyKind::kGliToSsa;
  CHECK_THROWS_AS(run_strategy(pre, cfg_a, cfg_b, nullptr, raw, nullptr, lcfg,
                               AugmentationConfig::disabled(), 42),
                  std::invalid_argument);
  StrategySpec sr = spec;
  sr.kind = StrategyKind::kSrSsa;
  CHECK_THROWS_AS(run_strategy(sr, cfg_a, cfg_b, nullptr, raw, nullptr, lcfg,
                               AugmentationConfig::disabled(), 42),
                  std::invalid_argument);
}

TEST_CASE("strategy_tag names") {
  CHECK(std::string(strategy_tag(StrategyKind::kGliToSsa)) == "S_GLI_to_SSA");
  CHECK(std::string(strategy_tag(StrategyKind::kSsa)) == "S_SSA");
  CHECK(std::string(strategy_tag(StrategyKind::kSrSsa)) == "S_srSSA");
}
