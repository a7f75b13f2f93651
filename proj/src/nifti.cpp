#include "voxseg/nifti.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <vector>

namespace voxseg {
namespace {

// NIfTI-1 datatype codes
constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

// gzread handles uncompressed files transparently, so one read path covers
// both .nii and .nii.gz.
std::vector<char> read_all(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw NiftiMissingFile("missing file: " + path.string());
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw NiftiError("cannot open: " + path.string());
  std::vector<char> out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  bool bad = n < 0;
  gzclose(f);
  if (bad) throw NiftiError("read error: " + path.string());
  return out;
}

void write_all(const std::filesystem::path& path, const char* data, std::size_t size) {
  if (path.extension() == ".gz") {
    gzFile f = gzopen(path.string().c_str(), "wb");
    if (!f) throw NiftiError("cannot create: " + path.string());
    std::size_t off = 0;
    while (off < size) {
      unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(size - off, 1u << 24));
      if (gzwrite(f, data + off, chunk) != static_cast<int>(chunk)) {
        gzclose(f);
        throw NiftiError("write error: " + path.string());
      }
      off += chunk;
    }
    gzclose(f);
  } else {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw NiftiError("cannot create: " + path.string());
    f.write(data, static_cast<std::streamsize>(size));
    if (!f) throw NiftiError("write error: " + path.string());
  }
}

struct Loaded {
  Nifti1Header hdr;
  Geometry geom;
  const char* payload;
  std::int64_t voxels;
};

Loaded parse(const std::vector<char>& bytes, const std::filesystem::path& path) {
  if (bytes.size() < sizeof(Nifti1Header))
    throw NiftiMalformedHeader("malformed header (file too short): " + path.string());
  Loaded r;
  std::memcpy(&r.hdr, bytes.data(), sizeof(Nifti1Header));
  if (r.hdr.sizeof_hdr != 348 ||
      !(std::strncmp(r.hdr.magic, "n+1", 3) == 0 || std::strncmp(r.hdr.magic, "ni1", 3) == 0))
    throw NiftiMalformedHeader("malformed header: " + path.string());
  int nd = r.hdr.dim[0];
  if (nd < 3) throw NiftiNon3D("non-3D payload (dim=" + std::to_string(nd) + "): " + path.string());
  for (int d = 4; d <= nd; ++d)
    if (r.hdr.dim[d] > 1)
      throw NiftiNon3D("non-3D payload (dim=" + std::to_string(nd) + "): " + path.string());
  for (int a = 0; a < 3; ++a) {
    r.geom.shape[a] = r.hdr.dim[a + 1];
    float p = r.hdr.pixdim[a + 1];
    r.geom.spacing[a] = p > 0.0f ? p : 1.0;
  }
  r.geom.validate();
  r.voxels = r.geom.voxels();
  std::size_t off = static_cast<std::size_t>(r.hdr.vox_offset);
  if (off < 348) off = 352;
  std::size_t bytes_per = static_cast<std::size_t>(r.hdr.bitpix) / 8;
  if (bytes.size() < off + bytes_per * static_cast<std::size_t>(r.voxels))
    throw NiftiMalformedHeader("truncated payload: " + path.string());
  r.payload = bytes.data() + off;
  return r;
}

template <typename Src, typename Dst>
void copy_payload(const char* src, std::int64_t n, Dst* dst) {
  const Src* s = reinterpret_cast<const Src*>(src);
  for (std::int64_t i = 0; i < n; ++i) dst[i] = static_cast<Dst>(s[i]);
}

template <typename Dst>
void decode(const Loaded& l, Dst* dst, const std::filesystem::path& path) {
  switch (l.hdr.datatype) {
    case kDtUint8: copy_payload<std::uint8_t>(l.payload, l.voxels, dst); break;
    case kDtInt16: copy_payload<std::int16_t>(l.payload, l.voxels, dst); break;
    case kDtInt32: copy_payload<std::int32_t>(l.payload, l.voxels, dst); break;
    case kDtFloat32: copy_payload<float>(l.payload, l.voxels, dst); break;
    case kDtFloat64: copy_payload<double>(l.payload, l.voxels, dst); break;
    default:
      throw NiftiMalformedHeader("unsupported datatype " + std::to_string(l.hdr.datatype) + ": " +
                                 path.string());
  }
}

Nifti1Header make_header(const Geometry& geom, std::int16_t datatype, std::int16_t bitpix) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  for (int a = 0; a < 3; ++a) {
    h.dim[a + 1] = static_cast<std::int16_t>(geom.shape[a]);
    h.pixdim[a + 1] = static_cast<float>(geom.spacing[a]);
  }
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.pixdim[0] = 1.0f;
  h.datatype = datatype;
  h.bitpix = bitpix;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // mm
  h.qform_code = 0;
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(geom.spacing[0]);
  h.srow_y[1] = static_cast<float>(geom.spacing[1]);
  h.srow_z[2] = static_cast<float>(geom.spacing[2]);
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

template <typename T>
void save_impl(const std::filesystem::path& path, const Tensor<T>& vol, const Geometry& geom,
               std::int16_t datatype) {
  if (vol.shape != std::vector<std::int64_t>{geom.shape[0], geom.shape[1], geom.shape[2]})
    throw std::invalid_argument("save: tensor shape does not match geometry");
  Nifti1Header h = make_header(geom, datatype, static_cast<std::int16_t>(sizeof(T) * 8));
  std::vector<char> bytes(352 + sizeof(T) * vol.data.size(), 0);
  std::memcpy(bytes.data(), &h, sizeof(h));
  std::memcpy(bytes.data() + 352, vol.data.data(), sizeof(T) * vol.data.size());
  write_all(path, bytes.data(), bytes.size());
}

}  // namespace

std::pair<TensorF, Geometry> load_volume(const std::filesystem::path& path) {
  auto bytes = read_all(path);
  Loaded l = parse(bytes, path);
  TensorF out({l.geom.shape[0], l.geom.shape[1], l.geom.shape[2]});
  decode(l, out.data.data(), path);
  float slope = l.hdr.scl_slope;
  float inter = l.hdr.scl_inter;
  if (slope != 0.0f && (slope != 1.0f || inter != 0.0f))
    for (auto& v : out.data) v = v * slope + inter;
  return {std::move(out), l.geom};
}

std::pair<TensorU8, Geometry> load_labels(const std::filesystem::path& path) {
  auto bytes = read_all(path);
  Loaded l = parse(bytes, path);
  std::vector<double> raw(static_cast<std::size_t>(l.voxels));
  decode(l, raw.data(), path);
  TensorU8 out({l.geom.shape[0], l.geom.shape[1], l.geom.shape[2]});
  for (std::int64_t i = 0; i < l.voxels; ++i) {
    auto v = static_cast<std::int64_t>(raw[static_cast<std::size_t>(i)]);
    if (v == 4) v = 3;  // legacy ET code
    if (v < 0 || v > 3)
      throw NiftiError("label value " + std::to_string(v) + " outside {0..4}: " + path.string());
    out[i] = static_cast<std::uint8_t>(v);
  }
  return {std::move(out), l.geom};
}

void save_volume(const std::filesystem::path& path, const TensorF& vol, const Geometry& geom) {
  save_impl(path, vol, geom, kDtFloat32);
}

void save_labels(const std::filesystem::path& path, const TensorU8& labels, const Geometry& geom) {
  save_impl(path, labels, geom, kDtUint8);
}

}  // namespace voxseg
