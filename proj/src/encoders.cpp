// SPDX-License-Identifier: Apache-2.0
#include "wmoe/encoders.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "wmoe/kernels.hpp"
#include "wmoe/rng.hpp"

namespace wmoe {

namespace {

std::vector<double> draw_uniform(std::uint64_t seed, std::size_t n, double bound) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = rng.uniform(-bound, bound);
  return out;
}

}  // namespace

void EncoderSpec::validate() const {
  if (C < 8) throw config_error("encoder: C must be >= 8, got " + std::to_string(C));
  if (grid_h < 1 || grid_w < 1 || n_tap_layers < 1) {
    throw config_error("encoder: grid and tap count must be positive");
  }
  if (image_h % grid_h != 0 || image_w % grid_w != 0) {
    throw config_error("encoder: image size " + std::to_string(image_h) + "x" +
                       std::to_string(image_w) + " not divisible by grid " +
                       std::to_string(grid_h) + "x" + std::to_string(grid_w));
  }
}

void FeatureBundle::validate() const {
  if (!x_c.defined() || x_c.rank() != 1) throw dim_error("feature bundle: x_c must be rank-1");
  if (layers.empty()) throw dim_error("feature bundle: no layer grids");
  const Shape& s0 = layers.front().second.shape();
  int prev_id = std::numeric_limits<int>::min();
  for (const auto& [id, grid] : layers) {
    if (id <= prev_id) throw format_error("feature bundle: layer ids not strictly increasing");
    prev_id = id;
    if (grid.rank() != 3 || grid.shape() != s0) {
      throw dim_error("feature bundle: layer grids must share [H,W,C]");
    }
    if (grid.requires_grad()) throw contract_error("feature bundle: frozen features carry grad");
  }
  if (x_c.shape()[0] != s0[2]) throw dim_error("feature bundle: x_c dim does not match C");
  if (x_c.requires_grad()) throw contract_error("feature bundle: frozen features carry grad");
}

FrozenEncoder::FrozenEncoder(const EncoderSpec& spec) : spec_(spec) {
  spec_.validate();
  const int C = spec_.C;
  const int patch_len = (spec_.image_h / spec_.grid_h) * (spec_.image_w / spec_.grid_w);
  const double bound = 1.0 / std::sqrt(static_cast<double>(C));
  const auto stream = [&](const char* name, std::uint64_t extra = 0) {
    return mix_seed(spec_.seed, fnv1a(name), extra);
  };

  w_embed_ = draw_uniform(stream("img.embed.w"), static_cast<std::size_t>(C) * patch_len, bound);
  b_embed_ = draw_uniform(stream("img.embed.b"), C, bound);
  for (int i = 0; i < spec_.n_tap_layers; ++i) {
    w_block_.push_back(
        draw_uniform(stream("img.block.w", i), static_cast<std::size_t>(C) * C, bound));
    b_block_.push_back(draw_uniform(stream("img.block.b", i), C, bound));
  }
  w_xc_ = draw_uniform(stream("img.xc.w"), static_cast<std::size_t>(C) * C, bound);
  b_xc_ = draw_uniform(stream("img.xc.b"), C, bound);

  txt_w1_ = Tensor::from(draw_uniform(stream("txt.l1.w"), static_cast<std::size_t>(C) * C, bound),
                         {C, C});
  txt_b1_ = Tensor::from(draw_uniform(stream("txt.l1.b"), C, bound), {C});
  txt_w2_ = Tensor::from(draw_uniform(stream("txt.l2.w"), static_cast<std::size_t>(C) * C, bound),
                         {C, C});
  txt_b2_ = Tensor::from(draw_uniform(stream("txt.l2.b"), C, bound), {C});
}

FeatureBundle FrozenEncoder::encode_image(const Tensor& pixels) const {
  if (!pixels.defined() ||
      (pixels.rank() != 2 && !(pixels.rank() == 3 && pixels.shape()[2] == 1))) {
    throw dim_error("encode_image: expected [h,w] or [h,w,1] pixels");
  }
  const int h = pixels.shape()[0], w = pixels.shape()[1];
  if (h != spec_.image_h || w != spec_.image_w) {
    throw dim_error("encode_image: pixels " + shape_str(pixels.shape()) +
                    " do not match encoder image size " + std::to_string(spec_.image_h) + "x" +
                    std::to_string(spec_.image_w));
  }
  const int H = spec_.grid_h, W = spec_.grid_w, C = spec_.C;
  const int ph = h / H, pw = w / W;
  const int patch_len = ph * pw;
  const auto& px = pixels.data();

  // patch matrix [H*W, patch_len], each patch flattened row-major
  std::vector<double> patches(static_cast<std::size_t>(H) * W * patch_len);
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      double* dst = patches.data() + (static_cast<long>(i) * W + j) * patch_len;
      for (int py = 0; py < ph; ++py) {
        const double* src = px.data() + static_cast<long>(i * ph + py) * w + j * pw;
        std::copy(src, src + pw, dst + static_cast<long>(py) * pw);
      }
    }
  }

  const int hw = H * W;
  std::vector<double> grid(static_cast<std::size_t>(hw) * C);
  kernels::matmul_nt(patches.data(), w_embed_.data(), grid.data(), hw, patch_len, C);
  for (int i = 0; i < hw; ++i)
    for (int c = 0; c < C; ++c) grid[static_cast<long>(i) * C + c] += b_embed_[c];

  FeatureBundle bundle;
  bundle.source = FeatureBundle::Source::stub;
  std::vector<double> mixed(grid.size()), projected(grid.size());
  for (int b = 0; b < spec_.n_tap_layers; ++b) {
    kernels::mean3x3(grid.data(), mixed.data(), H, W, C);
    kernels::matmul_nt(mixed.data(), w_block_[b].data(), projected.data(), hw, C, C);
    for (int i = 0; i < hw; ++i)
      for (int c = 0; c < C; ++c)
        grid[static_cast<long>(i) * C + c] =
            std::tanh(projected[static_cast<long>(i) * C + c] + b_block_[b][c]);
    bundle.layers.emplace_back(b + 1, Tensor::from(grid, {H, W, C}));
  }

  std::vector<double> pooled(C, 0.0);
  for (int i = 0; i < hw; ++i)
    for (int c = 0; c < C; ++c) pooled[c] += grid[static_cast<long>(i) * C + c];
  for (int c = 0; c < C; ++c) pooled[c] /= hw;
  std::vector<double> xc(C);
  kernels::matmul_nt(pooled.data(), w_xc_.data(), xc.data(), 1, C, C);
  for (int c = 0; c < C; ++c) xc[c] += b_xc_[c];
  bundle.x_c = Tensor::from(std::move(xc), {C});
  bundle.validate();
  return bundle;
}

Tensor FrozenEncoder::encode_text(const TokenSequence& seq) const {
  if (!seq.tokens.defined() || seq.tokens.rank() != 2 || seq.tokens.shape()[1] != spec_.C) {
    throw dim_error("encode_text: tokens must be [n_tok, C] with C = " +
                    std::to_string(spec_.C));
  }
  const int n = seq.tokens.shape()[0];
  // Frozen positive position weights, normalized over the sequence.
  std::vector<double> weights(n);
  double total = 0.0;
  for (int t = 0; t < n; ++t) {
    Rng rng(mix_seed(spec_.seed, fnv1a("txt.pos"), static_cast<std::uint64_t>(t)));
    weights[t] = 0.25 + rng.uniform01();
    total += weights[t];
  }
  for (auto& v : weights) v /= total;
  Tensor p = Tensor::from(std::move(weights), {1, n});

  Tensor wmean = matmul(p, seq.tokens);                   // [1, C]
  Tensor hidden = tanh_op(linear(wmean, txt_w1_, txt_b1_));
  Tensor out = linear(hidden, txt_w2_, txt_b2_);
  return reshape(l2_normalize_rows(out), {spec_.C});
}

Tensor FrozenEncoder::word_embedding(const std::string& word) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(spec_.C));
  return Tensor::from(
      draw_uniform(mix_seed(spec_.seed, fnv1a("word"), fnv1a(word)), spec_.C, bound),
      {spec_.C});
}

std::vector<double> FrozenEncoder::weight_snapshot() const {
  std::vector<double> all;
  auto append = [&all](const std::vector<double>& v) { all.insert(all.end(), v.begin(), v.end()); };
  append(w_embed_);
  append(b_embed_);
  for (const auto& w : w_block_) append(w);
  for (const auto& b : b_block_) append(b);
  append(w_xc_);
  append(b_xc_);
  append(txt_w1_.data());
  append(txt_b1_.data());
  append(txt_w2_.data());
  append(txt_b2_.data());
  return all;
}

// --- feature dump IO ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'W', 'M', 'O', 'E', 'F', 'E', 'A', 'T'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float f) {
  put_u32(os, std::bit_cast<std::uint32_t>(f));
}

struct Reader {
  std::ifstream in;
  long offset = 0;
  std::string path;

  std::uint32_t u32() {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
      throw format_error(path + ": truncated at byte " + std::to_string(offset));
    }
    offset += 4;
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  float f32() { return std::bit_cast<float>(u32()); }
};

}  // namespace

void save_features(const FeatureBundle& bundle, const std::string& path) {
  bundle.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw format_error(path + ": cannot open for writing");
  os.write(kMagic, 8);
  put_u32(os, 1);  // version
  const Shape& gs = bundle.layers.front().second.shape();
  const int C = gs[2];
  put_u32(os, static_cast<std::uint32_t>(C));
  put_u32(os, static_cast<std::uint32_t>(gs[0]));
  put_u32(os, static_cast<std::uint32_t>(gs[1]));
  put_u32(os, static_cast<std::uint32_t>(bundle.layers.size()));
  for (double v : bundle.x_c.data()) put_f32(os, static_cast<float>(v));
  for (const auto& [id, grid] : bundle.layers) {
    put_u32(os, static_cast<std::uint32_t>(id));
    for (double v : grid.data()) put_f32(os, static_cast<float>(v));
  }
  if (!os) throw format_error(path + ": write failed");
}

FeatureBundle load_features(const std::string& path) {
  Reader r;
  r.path = path;
  r.in.open(path, std::ios::binary);
  if (!r.in) throw format_error(path + ": cannot open");
  char magic[8];
  if (!r.in.read(magic, 8)) throw format_error(path + ": truncated at byte 0");
  r.offset = 8;
  if (std::memcmp(magic, kMagic, 8) != 0) throw format_error(path + ": bad magic at byte 0");
  const std::uint32_t version = r.u32();
  if (version != 1) {
    throw format_error(path + ": unsupported version " + std::to_string(version) + " at byte 8");
  }
  const std::uint32_t C = r.u32();
  const std::uint32_t H = r.u32();
  const std::uint32_t W = r.u32();
  const std::uint32_t L = r.u32();
  if (C == 0 || H == 0 || W == 0 || L == 0) {
    throw format_error(path + ": zero extent in header at byte 12");
  }

  FeatureBundle bundle;
  bundle.source = FeatureBundle::Source::file;
  std::vector<double> xc(C);
  for (auto& v : xc) v = r.f32();
  bundle.x_c = Tensor::from(std::move(xc), {static_cast<int>(C)});
  long prev_id = -1;
  for (std::uint32_t l = 0; l < L; ++l) {
    const long id_offset = r.offset;
    const std::uint32_t id = r.u32();
    if (static_cast<long>(id) <= prev_id) {
      throw format_error(path + ": layer ids not strictly increasing at byte " +
                         std::to_string(id_offset));
    }
    prev_id = id;
    std::vector<double> grid(static_cast<std::size_t>(H) * W * C);
    for (auto& v : grid) v = r.f32();
    bundle.layers.emplace_back(
        static_cast<int>(id),
        Tensor::from(std::move(grid), {static_cast<int>(H), static_cast<int>(W),
                                       static_cast<int>(C)}));
  }
  bundle.validate();
  return bundle;
}

}  // namespace wmoe
