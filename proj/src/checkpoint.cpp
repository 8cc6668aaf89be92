// SPDX-License-Identifier: Apache-2.0
#include "wmoe/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace wmoe::checkpoint {

namespace {

constexpr char kMagic[8] = {'W', 'M', 'O', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
  const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  std::string path;
  std::string bytes;
  std::size_t pos = 0;

  void need(std::size_t n) {
    if (pos + n > bytes.size()) {
      throw format_error(path + ": truncated at byte " + std::to_string(pos));
    }
  }
  std::uint16_t u16() {
    need(2);
    const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    pos += 2;
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    need(4);
    const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    pos += 4;
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string out = bytes.substr(pos, n);
    pos += n;
    return out;
  }
};

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

void save(const std::string& path, const RunConfig& config, const NamedParamSet& params) {
  std::string payload;
  put_u32(payload, kVersion);
  const std::string config_json = config.to_json().dump();
  put_u32(payload, static_cast<std::uint32_t>(config_json.size()));
  payload += config_json;
  put_u32(payload, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    if (name.size() > 0xffff) throw contract_error("checkpoint: parameter path too long");
    put_u16(payload, static_cast<std::uint16_t>(name.size()));
    payload += name;
    payload.push_back(static_cast<char>(tensor.rank()));
    for (int e : tensor.shape()) put_u32(payload, static_cast<std::uint32_t>(e));
    for (double v : tensor.data()) put_f64(payload, v);
  }
  const std::uint32_t crc =
      crc32(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());

  std::ofstream os(path, std::ios::binary);
  if (!os) throw format_error(path + ": cannot open for writing");
  os.write(kMagic, 8);
  os.write(payload.data(), static_cast<long>(payload.size()));
  std::string tail;
  put_u32(tail, crc);
  os.write(tail.data(), 4);
  if (!os) throw format_error(path + ": write failed");
}

Loaded load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error(path + ": cannot open");
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (all.size() < 12) throw format_error(path + ": truncated at byte 0");
  if (std::memcmp(all.data(), kMagic, 8) != 0) throw format_error(path + ": bad magic");

  // CRC covers everything between the magic and the trailing checksum.
  const std::string payload = all.substr(8, all.size() - 12);
  Reader tail{path, all.substr(all.size() - 4), 0};
  const std::uint32_t stored = tail.u32();
  const std::uint32_t actual =
      crc32(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());
  if (stored != actual) {
    throw format_error(path + ": CRC mismatch, checkpoint is corrupted");
  }

  Reader r{path, payload, 0};
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw format_error(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t json_len = r.u32();
  const std::string config_json = r.raw(json_len);
  Loaded out;
  try {
    out.config = RunConfig::from_json(nlohmann::json::parse(config_json));
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path + ": corrupt config snapshot: " + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.raw(name_len);
    r.need(1);
    const int rank = static_cast<unsigned char>(r.bytes[r.pos++]);
    Shape shape;
    long numel = 1;
    for (int d = 0; d < rank; ++d) {
      const std::uint32_t e = r.u32();
      if (e == 0) throw format_error(path + ": zero extent in tensor " + name);
      shape.push_back(static_cast<int>(e));
      numel *= e;
    }
    std::vector<double> data(numel);
    for (auto& v : data) v = r.f64();
    out.params.insert(name, Tensor::from(std::move(data), shape, /*requires_grad=*/true));
  }
  if (r.pos != r.bytes.size()) {
    throw format_error(path + ": trailing bytes after tensor data at byte " +
                       std::to_string(r.pos));
  }
  return out;
}

void restore_into(Model& model, const Loaded& loaded) {
  const ModelConfig want = model.config();
  const ModelConfig have = loaded.config.model_config();
  auto mismatch = [](const std::string& field, auto a, auto b) {
    return config_error("checkpoint config mismatch: " + field + " is " + std::to_string(b) +
                        ", expected " + std::to_string(a));
  };
  if (want.encoder.C != have.encoder.C) throw mismatch("C", want.encoder.C, have.encoder.C);
  if (want.encoder.grid_h != have.encoder.grid_h || want.encoder.grid_w != have.encoder.grid_w) {
    throw mismatch("grid", want.encoder.grid_h, have.encoder.grid_h);
  }
  if (want.encoder.n_tap_layers != have.encoder.n_tap_layers) {
    throw mismatch("taps", want.encoder.n_tap_layers, have.encoder.n_tap_layers);
  }
  if (want.encoder.image_h != have.encoder.image_h || want.encoder.image_w != have.encoder.image_w) {
    throw mismatch("image", want.encoder.image_h, have.encoder.image_h);
  }
  if (want.m != have.m) throw mismatch("m", want.m, have.m);
  if (want.n_experts != have.n_experts) throw mismatch("experts", want.n_experts, have.n_experts);
  if (want.top_k != have.top_k) throw mismatch("top_k", want.top_k, have.top_k);
  if (want.modules.ctds != have.modules.ctds || want.modules.wcma != have.modules.wcma ||
      want.modules.samoe != have.modules.samoe) {
    throw config_error("checkpoint config mismatch: module toggles differ");
  }

  std::size_t restored = 0;
  for (auto& [name, tensor] : model.params()) {
    if (!loaded.params.contains(name)) {
      throw format_error("checkpoint missing parameter " + name);
    }
    const Tensor& src = loaded.params.at(name);
    if (src.shape() != tensor.shape()) {
      throw config_error("checkpoint parameter " + name + " has shape " +
                         shape_str(src.shape()) + ", model expects " +
                         shape_str(tensor.shape()));
    }
    tensor.data() = src.data();
    ++restored;
  }
  if (restored != loaded.params.size()) {
    throw format_error("checkpoint holds " + std::to_string(loaded.params.size()) +
                       " tensors, model has " + std::to_string(restored));
  }
}

Model load_model(const std::string& path) {
  Loaded loaded = load(path);
  Model model(loaded.config.model_config());
  restore_into(model, loaded);
  return model;
}

}  // namespace wmoe::checkpoint
