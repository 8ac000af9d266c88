#include "attnpain/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace attnpain::harness {

namespace {

constexpr char kMagic[4] = {'P', 'V', 'T', 'C'};
constexpr uint32_t kVersion = 1;

void put_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u8(std::ostream& out, uint8_t v) { put_bytes(out, &v, 1); }

void put_u32(std::ostream& out, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  put_bytes(out, b, 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
  put_bytes(out, b, 8);
}

void put_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

void get_bytes(std::istream& in, void* p, size_t n, const std::string& path) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n)
    throw IoError(path + ": truncated checkpoint");
}

uint8_t get_u8(std::istream& in, const std::string& path) {
  uint8_t v = 0;
  get_bytes(in, &v, 1, path);
  return v;
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  uint8_t b[4];
  get_bytes(in, b, 4, path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& in, const std::string& path) {
  uint8_t b[8];
  get_bytes(in, b, 8, path);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in, const std::string& path) {
  uint64_t bits = get_u64(in, path);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void put_f64_array(std::ostream& out, const double* p, size_t n) {
  for (size_t i = 0; i < n; ++i) put_f64(out, p[i]);
}

void put_f32_array(std::ostream& out, const float* p, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    uint32_t bits;
    std::memcpy(&bits, &p[i], 4);
    put_u32(out, bits);
  }
}

}  // namespace

void save_checkpoint(const vit::ViTModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  const auto& cfg = model.config();

  put_bytes(out, kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, cfg.image_size);
  put_u64(out, cfg.patch_size);
  put_u64(out, cfg.channels);
  put_u64(out, cfg.hidden_dim);
  put_u64(out, cfg.num_layers);
  put_u64(out, cfg.num_heads);
  put_u64(out, cfg.mlp_dim);
  put_u64(out, cfg.num_classes);
  put_f64(out, cfg.head_dropout);
  put_u8(out, static_cast<uint8_t>(cfg.dtype));

  put_u32(out, static_cast<uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    put_u32(out, static_cast<uint32_t>(p.name.size()));
    put_bytes(out, p.name.data(), p.name.size());
    put_u8(out, static_cast<uint8_t>(p.value.dtype()));
    put_u32(out, static_cast<uint32_t>(p.value.ndim()));
    for (size_t d : p.value.shape()) put_u64(out, d);
    if (p.value.dtype() == DType::f64)
      put_f64_array(out, p.value.data_f64(), p.value.numel());
    else
      put_f32_array(out, p.value.data_f32(), p.value.numel());
  }
  for (const auto& p : model.params()) put_u8(out, p.trainable ? 1 : 0);
  put_u8(out, 0);  // no optimizer state
  if (!out) throw IoError(path + ": write failed");
}

vit::ViTModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open checkpoint");

  char magic[4];
  get_bytes(in, magic, 4, path);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(path + ": bad magic, not a PVTC checkpoint");
  const uint32_t version = get_u32(in, path);
  if (version != kVersion)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));

  vit::ModelConfig cfg;
  cfg.image_size = get_u64(in, path);
  cfg.patch_size = get_u64(in, path);
  cfg.channels = get_u64(in, path);
  cfg.hidden_dim = get_u64(in, path);
  cfg.num_layers = get_u64(in, path);
  cfg.num_heads = get_u64(in, path);
  cfg.mlp_dim = get_u64(in, path);
  cfg.num_classes = get_u64(in, path);
  cfg.head_dropout = get_f64(in, path);
  const uint8_t dt = get_u8(in, path);
  if (dt > 1) throw FormatError(path + ": unknown dtype code " + std::to_string(dt));
  cfg.dtype = static_cast<DType>(dt);
  cfg.validate();

  vit::ViTModel model = vit::ViTModel::init_parameters(cfg, 0);
  const uint32_t count = get_u32(in, path);
  if (count != model.params().size())
    throw FormatError(path + ": tensor count " + std::to_string(count) +
                      " does not match config (" + std::to_string(model.params().size()) +
                      " expected)");
  for (uint32_t t = 0; t < count; ++t) {
    const uint32_t name_len = get_u32(in, path);
    if (name_len > 4096) throw FormatError(path + ": implausible tensor name length");
    std::string name(name_len, '\0');
    get_bytes(in, name.data(), name_len, path);
    const uint8_t tdt = get_u8(in, path);
    if (tdt > 1) throw FormatError(path + ": unknown dtype code for tensor " + name);
    const uint32_t rank = get_u32(in, path);
    if (rank > 8) throw FormatError(path + ": implausible rank for tensor " + name);
    std::vector<size_t> shape(rank);
    size_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = get_u64(in, path);
      numel *= shape[d];
    }
    vit::Param& p = model.param(name);
    if (p.value.shape() != shape)
      throw FormatError(path + ": tensor " + name + " has shape " + shape_str(shape) +
                        ", expected " + shape_str(p.value.shape()));
    if (static_cast<DType>(tdt) != p.value.dtype())
      throw FormatError(path + ": tensor " + name + " dtype does not match config");
    if (static_cast<DType>(tdt) == DType::f64) {
      double* dst = p.value.data_f64();
      for (size_t i = 0; i < numel; ++i) dst[i] = get_f64(in, path);
    } else {
      float* dst = p.value.data_f32();
      for (size_t i = 0; i < numel; ++i) {
        uint32_t bits = get_u32(in, path);
        float f;
        std::memcpy(&f, &bits, 4);
        dst[i] = f;
      }
    }
  }
  for (auto& p : model.params()) {
    p.trainable = get_u8(in, path) != 0;
    p.value.set_requires_grad(p.trainable);
  }
  const uint8_t has_optim = get_u8(in, path);
  if (has_optim != 0)
    throw FormatError(path + ": embedded optimizer state is not supported by this version");
  return model;
}

void validate_checkpoint_config(const vit::ViTModel& loaded, const vit::ModelConfig& expected) {
  for (const auto& [name, shape] : vit::parameter_shapes(expected)) {
    const vit::Param* found = nullptr;
    for (const auto& p : loaded.params())
      if (p.name == name) {
        found = &p;
        break;
      }
    if (found == nullptr)
      throw FormatError("checkpoint is missing tensor " + name);
    if (found->value.shape() != shape)
      throw FormatError("checkpoint tensor " + name + " has shape " +
                        shape_str(found->value.shape()) + ", expected " + shape_str(shape));
  }
}

}  // namespace attnpain::harness
