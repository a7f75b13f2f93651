#pragma once

#include <json.hpp>

#include "voxseg/phantom.hpp"
#include "voxseg/segnet.hpp"
#include "voxseg/srnet.hpp"

namespace voxseg {

using nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// strict schema: unknown keys are rejected
inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(ctx + ": unknown key '" + it.key() + "'");
  }
}

template <typename T, std::size_t N>
std::array<T, N> to_array(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != N)
    throw ConfigError(ctx + ": expected an array of " + std::to_string(N) + " entries");
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = j[i].get<T>();
  return out;
}

inline json segnet_to_json(const SegNetConfig& c) {
  return json{{"levels", c.levels},
              {"base_filters", c.base_filters},
              {"max_filters", c.max_filters},
              {"encoder_multiplier", c.encoder_multiplier},
              {"norm", c.norm == NormKind::kGroup ? "group" : "batch"},
              {"group_count", c.group_count},
              {"in_channels", c.in_channels},
              {"out_channels", c.out_channels},
              {"leaky_slope", c.leaky_slope},
              {"deep_supervision_heads", c.deep_supervision_heads},
              {"patch_shape", c.patch_shape}};
}

inline SegNetConfig segnet_from_json(const json& j, const std::string& ctx = "segnet") {
  check_keys(j,
             {"levels", "base_filters", "max_filters", "encoder_multiplier", "norm", "group_count",
              "in_channels", "out_channels", "leaky_slope", "deep_supervision_heads", "patch_shape"},
             ctx);
  SegNetConfig c;
  c.levels = j.value("levels", c.levels);
  c.base_filters = j.value("base_filters", c.base_filters);
  c.max_filters = j.value("max_filters", c.max_filters);
  c.encoder_multiplier = j.value("encoder_multiplier", c.encoder_multiplier);
  if (j.contains("norm")) {
    std::string n = j["norm"].get<std::string>();
    if (n == "group")
      c.norm = NormKind::kGroup;
    else if (n == "batch")
      c.norm = NormKind::kBatch;
    else
      throw ConfigError(ctx + ": norm must be 'batch' or 'group'");
  }
  c.group_count = j.value("group_count", c.group_count);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.out_channels = j.value("out_channels", c.out_channels);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.deep_supervision_heads = j.value("deep_supervision_heads", c.deep_supervision_heads);
  if (j.contains("patch_shape")) c.patch_shape = to_array<std::int64_t, 3>(j["patch_shape"], ctx);
  c.validate();
  return c;
}

inline json srnet_to_json(const SRNetConfig& c) {
  return json{{"filters", c.filters},
              {"blocks", c.blocks},
              {"layers_per_block", c.layers_per_block},
              {"scale_factor", c.scale_factor}};
}

inline SRNetConfig srnet_from_json(const json& j, const std::string& ctx = "srnet") {
  check_keys(j, {"filters", "blocks", "layers_per_block", "scale_factor"}, ctx);
  SRNetConfig c;
  c.filters = j.value("filters", c.filters);
  c.blocks = j.value("blocks", c.blocks);
  c.layers_per_block = j.value("layers_per_block", c.layers_per_block);
  c.scale_factor = j.value("scale_factor", c.scale_factor);
  c.validate();
  return c;
}

inline json phantom_to_json(const PhantomSpec& s) {
  json intens = json::array();
  for (const auto& row : s.intensities) intens.push_back(row);
  return json{{"shape", s.shape},        {"tumor_count", s.tumor_count},
              {"r_et", s.r_et},          {"r_tc", s.r_tc},
              {"r_wt", s.r_wt},          {"intensities", intens},
              {"smooth_sigma", s.smooth_sigma}, {"noise_sigma", s.noise_sigma},
              {"seed", s.seed}};
}

inline PhantomSpec phantom_from_json(const json& j, const std::string& ctx = "phantom") {
  check_keys(j,
             {"shape", "tumor_count", "r_et", "r_tc", "r_wt", "intensities", "smooth_sigma",
              "noise_sigma", "seed"},
             ctx);
  PhantomSpec s;
  if (j.contains("shape")) s.shape = to_array<std::int64_t, 3>(j["shape"], ctx);
  s.tumor_count = j.value("tumor_count", s.tumor_count);
  if (j.contains("r_et")) s.r_et = to_array<double, 2>(j["r_et"], ctx);
  if (j.contains("r_tc")) s.r_tc = to_array<double, 2>(j["r_tc"], ctx);
  if (j.contains("r_wt")) s.r_wt = to_array<double, 2>(j["r_wt"], ctx);
  if (j.contains("intensities")) {
    const auto& a = j["intensities"];
    if (!a.is_array() || a.size() != kNumModalities)
      throw ConfigError(ctx + ": intensities must have 4 rows");
    for (int m = 0; m < kNumModalities; ++m)
      s.intensities[static_cast<std::size_t>(m)] =
          to_array<double, kNumTissues>(a[static_cast<std::size_t>(m)], ctx);
  }
  s.smooth_sigma = j.value("smooth_sigma", s.smooth_sigma);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

inline json profile_to_json(const DomainProfile& p) {
  return json{{"blur_sigma", p.blur_sigma},
              {"downsample_factor", p.downsample_factor},
              {"extra_noise_sigma", p.extra_noise_sigma},
              {"contrast_scale", p.contrast_scale}};
}

inline DomainProfile profile_from_json(const json& j, const std::string& ctx = "profile") {
  check_keys(j, {"blur_sigma", "downsample_factor", "extra_noise_sigma", "contrast_scale"}, ctx);
  DomainProfile p;
  p.blur_sigma = j.value("blur_sigma", p.blur_sigma);
  p.downsample_factor = j.value("downsample_factor", p.downsample_factor);
  p.extra_noise_sigma = j.value("extra_noise_sigma", p.extra_noise_sigma);
  p.contrast_scale = j.value("contrast_scale", p.contrast_scale);
  p.validate();
  return p;
}

}  // namespace voxseg
