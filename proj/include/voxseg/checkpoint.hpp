#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "voxseg/config_json.hpp"

namespace voxseg {

// Versioned binary archive: magic + version, model kind, strategy tag,
// config JSON, named float32 parameter tensors, optimizer velocities, step
// counter, training-log digest. Load-then-save is byte-stable.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string model_kind;    // "seg" or "sr"
  std::string strategy_tag;  // e.g. "S_SSA"; may be empty
  json config;
  std::vector<std::pair<std::string, TensorF>> tensors;
  std::vector<std::pair<std::string, TensorF>> velocities;  // may be empty
  std::uint64_t step = 0;
  std::string log_digest;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuild the model described by the checkpoint's config and load its
// parameters, validating every shape against the freshly built structure.
SegNet<float> seg_from_checkpoint(const Checkpoint& ck);
SRNet<float> sr_from_checkpoint(const Checkpoint& ck);

Checkpoint checkpoint_from_seg(const SegNet<float>& model, const std::string& strategy_tag = "");
Checkpoint checkpoint_from_sr(const SRNet<float>& model, const std::string& strategy_tag = "");

}  // namespace voxseg
