#include <doctest.h>

#include <cmath>

#include "voxseg/phantom.hpp"

using namespace voxseg;

TEST_CASE("generate_case is deterministic in its spec") {
  PhantomSpec spec;
  spec.shape = {32, 32, 32};
  spec.r_et = {2, 3};
  spec.r_tc = {4, 5};
  spec.r_wt = {6, 7};
  spec.seed = 123;
  auto a = generate_case(spec, 5);
  auto b = generate_case(spec, 5);
  CHECK(a.labels.labels.data == b.labels.labels.data);
  for (int m = 0; m < kNumModalities; ++m)
    CHECK(a.image.channels[static_cast<std::size_t>(m)].data ==
          b.image.channels[static_cast<std::size_t>(m)].data);
  auto c = generate_case(spec, 6);
  CHECK(c.labels.labels.data != a.labels.labels.data);
}

TEST_CASE("generate_case with no tumors yields all-background labels") {
  PhantomSpec spec;
  spec.shape = {24, 24, 24};
  spec.tumor_count = 0;
  auto c = generate_case(spec);
  for (auto v : c.labels.labels.data) CHECK(v == kBackground);
}

TEST_CASE("generate_case: region shell volumes match sphere arithmetic") {
  PhantomSpec spec;
  spec.shape = {48, 48, 48};
  spec.r_et = {3, 3};
  spec.r_tc = {5, 5};
  spec.r_wt = {8, 8};
  spec.noise_sigma = 0;
  spec.seed = 7;
  auto c = generate_case(spec);
  std::int64_t n_et = 0, n_netc = 0, n_snfh = 0;
  for (auto v : c.labels.labels.data) {
    n_et += v == kEt;
    n_netc += v == kNetc;
    n_snfh += v == kSnfh;
  }
  auto ball = [](double r) { return 4.0 / 3.0 * 3.14159265358979 * r * r * r; };
  CHECK(std::abs(n_et - ball(3)) / ball(3) < 0.15);
  CHECK(std::abs(n_netc - (ball(5) - ball(3))) / (ball(5) - ball(3)) < 0.15);
  CHECK(std::abs(n_snfh - (ball(8) - ball(5))) / (ball(8) - ball(5)) < 0.15);
}

TEST_CASE("generate_case: labels pass validity and the region hierarchy") {
  PhantomSpec spec;
  spec.shape = {32, 32, 32};
  spec.tumor_count = 2;
  spec.r_et = {2, 3};
  spec.r_tc = {3.5, 4.5};
  spec.r_wt = {5, 6};
  for (std::uint64_t idx = 0; idx < 5; ++idx) {
    auto c = generate_case(spec, idx);
    c.labels.validate();
    c.image.validate();
    auto r = labels_to_regions(c.labels);
    for (std::int64_t i = 0; i < r.et.size(); ++i) {
      CHECK(r.et[i] <= r.tc[i]);
      CHECK(r.tc[i] <= r.wt[i]);
    }
  }
}

TEST_CASE("generate_case: oversized tumor is a reportable error") {
  PhantomSpec spec;
  spec.shape = {16, 16, 16};
  spec.r_et = {4, 4};
  spec.r_tc = {8, 8};
  spec.r_wt = {20, 20};
  CHECK_THROWS_AS(generate_case(spec), std::runtime_error);
}

TEST_CASE("degrade: identity profile leaves the volume unchanged") {
  PhantomSpec spec;
  spec.shape = {24, 24, 24};
  spec.r_et = {1, 2};
  spec.r_tc = {2.5, 3.5};
  spec.r_wt = {4, 5};
  auto c = generate_case(spec);
  DomainProfile p;  // defaults are the identity
  auto out = degrade(c.image, p, 99);
  for (int m = 0; m < kNumModalities; ++m)
    CHECK(out.channels[static_cast<std::size_t>(m)].data ==
          c.image.channels[static_cast<std::size_t>(m)].data);
}

TEST_CASE("degrade: factor 2 halves shape and doubles spacing") {
  PhantomSpec spec;
  spec.shape = {32, 32, 32};
  spec.r_et = {1, 2};
  spec.r_tc = {2.5, 3.5};
  spec.r_wt = {4, 5};
  auto c = generate_case(spec);
  DomainProfile p;
  p.downsample_factor = 2;
  auto out = degrade(c.image, p, 0);
  CHECK(out.geometry.shape == std::array<std::int64_t, 3>{16, 16, 16});
  CHECK(out.geometry.spacing[0] == doctest::Approx(2.0));
}

TEST_CASE("degrade: blur reduces high-frequency energy") {
  PhantomSpec spec;
  spec.shape = {32, 32, 32};
  spec.r_et = {1, 2};
  spec.r_tc = {2.5, 3.5};
  spec.r_wt = {4, 5};
  spec.noise_sigma = 0.05;
  auto c = generate_case(spec);
  auto laplacian_energy = [](const TensorF& v) {
    double e = 0;
    for (std::int64_t z = 1; z < v.shape[2] - 1; ++z)
      for (std::int64_t y = 1; y < v.shape[1] - 1; ++y)
        for (std::int64_t x = 1; x < v.shape[0] - 1; ++x) {
          double l = -6.0 * v.at3(x, y, z) + v.at3(x - 1, y, z) + v.at3(x + 1, y, z) +
                     v.at3(x, y - 1, z) + v.at3(x, y + 1, z) + v.at3(x, y, z - 1) +
                     v.at3(x, y, z + 1);
          e += l * l;
        }
    return e;
  };
  DomainProfile p;
  p.blur_sigma = 1.0;
  auto out = degrade(c.image, p, 0);
  for (int m = 0; m < kNumModalities; ++m)
    CHECK(laplacian_energy(out.channels[static_cast<std::size_t>(m)]) <
          laplacian_energy(c.image.channels[static_cast<std::size_t>(m)]));
}

TEST_CASE("degrade is deterministic in its seed") {
  PhantomSpec spec;
  spec.shape = {24, 24, 24};
  spec.r_et = {1, 2};
  spec.r_tc = {2.5, 3.5};
  spec.r_wt = {4, 5};
  auto c = generate_case(spec);
  DomainProfile p;
  p.blur_sigma = 0.8;
  p.downsample_factor = 2;
  p.extra_noise_sigma = 0.05;
  p.contrast_scale = 0.7;
  auto a = degrade(c.image, p, 17);
  auto b = degrade(c.image, p, 17);
  for (int m = 0; m < kNumModalities; ++m)
    CHECK(a.channels[static_cast<std::size_t>(m)].data ==
          b.channels[static_cast<std::size_t>(m)].data);
}
