#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "voxseg/nifti.hpp"
#include "voxseg/rng.hpp"

using namespace voxseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("voxseg_nifti_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("nifti: float round trip is exact") {
  TempDir tmp;
  Geometry g;
  g.shape = {4, 4, 4};
  g.spacing = {1.0, 1.0, 1.0};
  TensorF v({4, 4, 4});
  v.fill(7.0f);
  for (const char* name : {"a.nii", "a.nii.gz"}) {
    auto p = tmp.path / name;
    save_volume(p, v, g);
    auto [back, bg] = load_volume(p);
    CHECK(back.data == v.data);
    CHECK(bg.shape == g.shape);
    CHECK(bg.spacing[0] == doctest::Approx(1.0));
  }
}

TEST_CASE("nifti: random float volumes round trip within 1e-6") {
  TempDir tmp;
  CounterRng rng(42, 0);
  Geometry g;
  g.shape = {6, 5, 7};
  g.spacing = {0.5, 1.25, 2.0};
  TensorF v({6, 5, 7});
  for (auto& x : v.data) x = static_cast<float>(rng.uniform(-100, 100));
  auto p = tmp.path / "r.nii.gz";
  save_volume(p, v, g);
  auto [back, bg] = load_volume(p);
  REQUIRE(back.size() == v.size());
  for (std::int64_t i = 0; i < v.size(); ++i)
    CHECK(std::abs(back[i] - v[i]) <= 1e-6f);
  CHECK(bg.spacing[1] == doctest::Approx(1.25));
}

TEST_CASE("nifti: integer labels round trip losslessly") {
  TempDir tmp;
  Geometry g;
  g.shape = {4, 4, 4};
  TensorU8 labels({4, 4, 4});
  for (std::int64_t i = 0; i < labels.size(); ++i)
    labels[i] = static_cast<std::uint8_t>(i % 4);
  auto p = tmp.path / "seg.nii.gz";
  save_labels(p, labels, g);
  auto [back, bg] = load_labels(p);
  CHECK(back.data == labels.data);
}

TEST_CASE("nifti: legacy label 4 is remapped to 3 on ingest") {
  TempDir tmp;
  Geometry g;
  g.shape = {2, 1, 1};
  TensorU8 labels({2, 1, 1});
  labels.data = {0, 4};
  auto p = tmp.path / "legacy.nii";
  save_labels(p, labels, g);
  auto [back, bg] = load_labels(p);
  CHECK(back.data == std::vector<std::uint8_t>{0, 3});
}

TEST_CASE("nifti: missing file raises a distinct error") {
  CHECK_THROWS_AS(load_volume("/nonexistent/path/file.nii"), NiftiMissingFile);
}

TEST_CASE("nifti: malformed header is rejected") {
  TempDir tmp;
  auto p = tmp.path / "garbage.nii";
  std::ofstream os(p, std::ios::binary);
  std::vector<char> junk(600, 0x5a);
  os.write(junk.data(), static_cast<std::streamsize>(junk.size()));
  os.close();
  CHECK_THROWS_AS(load_volume(p), NiftiMalformedHeader);
}

TEST_CASE("nifti: 2D payload is rejected as non-3D") {
  TempDir tmp;
  Geometry g;
  g.shape = {4, 4, 1};
  TensorF v({4, 4, 1});
  auto p = tmp.path / "twod.nii";
  save_volume(p, v, g);
  // rewrite dim[0] = 2 to make it a genuine 2D file
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  std::int16_t two = 2;
  f.seekp(40);
  f.write(reinterpret_cast<char*>(&two), 2);
  f.close();
  CHECK_THROWS_AS(load_volume(p), NiftiNon3D);
}
