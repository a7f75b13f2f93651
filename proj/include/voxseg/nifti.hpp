#pragma once

#include <filesystem>
#include <stdexcept>
#include <utility>

#include "voxseg/volume.hpp"

namespace voxseg {

struct NiftiError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NiftiMissingFile : NiftiError {
  using NiftiError::NiftiError;
};
struct NiftiMalformedHeader : NiftiError {
  using NiftiError::NiftiError;
};
struct NiftiNon3D : NiftiError {
  using NiftiError::NiftiError;
};

// NIfTI-1, optionally gzip-compressed (.nii / .nii.gz). Arrays are kept in
// the file's native (x, y, z) order with x fastest; spacing comes from
// pixdim. scl_slope/scl_inter are applied when set.
std::pair<TensorF, Geometry> load_volume(const std::filesystem::path& path);

// Integer load for segmentation maps; remaps the legacy ET value 4 to 3.
std::pair<TensorU8, Geometry> load_labels(const std::filesystem::path& path);

// float32 payload; gzip iff the extension is .gz
void save_volume(const std::filesystem::path& path, const TensorF& vol, const Geometry& geom);

// uint8 payload
void save_labels(const std::filesystem::path& path, const TensorU8& labels, const Geometry& geom);

}  // namespace voxseg
