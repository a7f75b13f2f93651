#pragma once

#include <filesystem>

#include "voxseg/volume.hpp"

namespace voxseg {

// Axial / coronal / sagittal center-slice overlays: grayscale background
// with NETC red, SNFH green, ET blue.
void write_slice_overlays(const std::filesystem::path& out_dir, const std::string& case_id,
                          const TensorF& background, const LabelMap& labels);

void write_png_rgb(const std::filesystem::path& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb);

}  // namespace voxseg
