#include "voxseg/overlay.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace voxseg {
namespace {

constexpr std::uint8_t kLabelColors[4][3] = {
    {0, 0, 0},      // background (unused)
    {220, 40, 40},  // NETC red
    {40, 200, 40},  // SNFH green
    {60, 80, 230},  // ET blue
};

struct SliceSpec {
  const char* name;
  int fixed_axis;
};
constexpr SliceSpec kSlices[3] = {{"axial", 2}, {"coronal", 1}, {"sagittal", 0}};

}  // namespace

void write_png_rgb(const std::filesystem::path& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw std::invalid_argument("write_png_rgb: buffer size mismatch");
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot create " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw std::runtime_error("png write failed: " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void write_slice_overlays(const std::filesystem::path& out_dir, const std::string& case_id,
                          const TensorF& background, const LabelMap& labels) {
  if (background.shape != labels.labels.shape)
    throw std::invalid_argument("write_slice_overlays: image/label shape mismatch");
  float lo = background.data[0], hi = background.data[0];
  for (float v : background.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = hi > lo ? hi - lo : 1.0;

  std::filesystem::create_directories(out_dir);
  const auto& s = background.shape;
  for (const auto& slice : kSlices) {
    int a = slice.fixed_axis;
    int u_axis = a == 0 ? 1 : 0;
    int v_axis = a == 2 ? 1 : 2;
    const std::int64_t width = s[static_cast<std::size_t>(u_axis)];
    const std::int64_t height = s[static_cast<std::size_t>(v_axis)];
    const std::int64_t fixed = s[static_cast<std::size_t>(a)] / 2;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width * height * 3));
    for (std::int64_t v = 0; v < height; ++v)
      for (std::int64_t u = 0; u < width; ++u) {
        std::int64_t c[3];
        c[a] = fixed;
        c[u_axis] = u;
        c[v_axis] = v;
        double g = (background.at3(c[0], c[1], c[2]) - lo) / range;
        auto gray = static_cast<std::uint8_t>(std::clamp(g, 0.0, 1.0) * 255.0);
        std::uint8_t lab = labels.labels.at3(c[0], c[1], c[2]);
        std::uint8_t* px = rgb.data() + (static_cast<std::size_t>(height - 1 - v) * width + u) * 3;
        if (lab > 0 && lab <= 3) {
          for (int k = 0; k < 3; ++k)
            px[k] = static_cast<std::uint8_t>(0.45 * gray + 0.55 * kLabelColors[lab][k]);
        } else {
          px[0] = px[1] = px[2] = gray;
        }
      }
    write_png_rgb(out_dir / (case_id + "_" + slice.name + ".png"), static_cast<int>(width),
                  static_cast<int>(height), rgb);
  }
}

}  // namespace voxseg
