#include "voxseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace voxseg {
namespace {

constexpr char kMagic[8] = {'V', 'X', 'C', 'K', 'P', 'T', '0', '\n'};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }
void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
std::string get_str(std::istream& is) {
  std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

void put_tensors(std::ostream& os, const std::vector<std::pair<std::string, TensorF>>& ts) {
  put_u32(os, static_cast<std::uint32_t>(ts.size()));
  for (const auto& [name, t] : ts) {
    put_str(os, name);
    put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u64(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
}

std::vector<std::pair<std::string, TensorF>> get_tensors(std::istream& is) {
  std::uint32_t n = get_u32(is);
  std::vector<std::pair<std::string, TensorF>> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = get_str(is);
    std::uint32_t ndim = get_u32(is);
    std::vector<std::int64_t> shape(ndim);
    for (auto& d : shape) d = static_cast<std::int64_t>(get_u64(is));
    TensorF t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot create checkpoint: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put_u32(os, Checkpoint::kFormatVersion);
  put_str(os, ck.model_kind);
  put_str(os, ck.strategy_tag);
  put_str(os, ck.config.dump());
  put_tensors(os, ck.tensors);
  put_tensors(os, ck.velocities);
  put_u64(os, ck.step);
  put_str(os, ck.log_digest);
  if (!os) throw std::runtime_error("write error: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  std::uint32_t ver = get_u32(is);
  if (ver != Checkpoint::kFormatVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(ver));
  Checkpoint ck;
  ck.model_kind = get_str(is);
  ck.strategy_tag = get_str(is);
  ck.config = json::parse(get_str(is));
  ck.tensors = get_tensors(is);
  ck.velocities = get_tensors(is);
  ck.step = get_u64(is);
  ck.log_digest = get_str(is);
  if (!is) throw std::runtime_error("truncated checkpoint: " + path.string());
  return ck;
}

namespace {

template <typename Model>
void load_params(Model& model, const Checkpoint& ck) {
  if (ck.tensors.size() != model.params().size())
    throw std::runtime_error("checkpoint parameter count does not match config");
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    auto& [name, node] = model.params()[i];
    const auto& [ck_name, t] = ck.tensors[i];
    if (name != ck_name)
      throw std::runtime_error("checkpoint parameter name mismatch: " + ck_name + " vs " + name);
    if (t.shape != node->value.shape)
      throw std::runtime_error("checkpoint tensor shape mismatch for " + name + ": " +
                               shape_str(t.shape) + " vs " + shape_str(node->value.shape));
    node->value = t;
  }
}

template <typename Model>
std::vector<std::pair<std::string, TensorF>> dump_params(const Model& model) {
  std::vector<std::pair<std::string, TensorF>> out;
  out.reserve(model.params().size());
  for (const auto& [name, node] : model.params()) out.emplace_back(name, node->value);
  return out;
}

}  // namespace

SegNet<float> seg_from_checkpoint(const Checkpoint& ck) {
  if (ck.model_kind != "seg")
    throw std::runtime_error("checkpoint model kind is '" + ck.model_kind + "', expected 'seg'");
  SegNet<float> model(segnet_from_json(ck.config), 0);
  load_params(model, ck);
  return model;
}

SRNet<float> sr_from_checkpoint(const Checkpoint& ck) {
  if (ck.model_kind != "sr")
    throw std::runtime_error("checkpoint model kind is '" + ck.model_kind + "', expected 'sr'");
  SRNet<float> model(srnet_from_json(ck.config), 0);
  load_params(model, ck);
  return model;
}

Checkpoint checkpoint_from_seg(const SegNet<float>& model, const std::string& strategy_tag) {
  Checkpoint ck;
  ck.model_kind = "seg";
  ck.strategy_tag = strategy_tag;
  ck.config = segnet_to_json(model.config());
  ck.tensors = dump_params(model);
  return ck;
}

Checkpoint checkpoint_from_sr(const SRNet<float>& model, const std::string& strategy_tag) {
  Checkpoint ck;
  ck.model_kind = "sr";
  ck.strategy_tag = strategy_tag;
  ck.config = srnet_to_json(model.config());
  ck.tensors = dump_params(model);
  return ck;
}

}  // namespace voxseg
