// SPDX-License-Identifier: Apache-2.0
#include "wmoe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wmoe/kernels.hpp"
#include "wmoe/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;

namespace wmoe::synth {

void ImageSample::validate() const {
  if (static_cast<long>(pixels.size()) != static_cast<long>(h) * w || pixels.size() != mask.size()) {
    throw format_error("sample " + id + ": pixel/mask sizes inconsistent");
  }
  long positives = 0;
  for (double m : mask) {
    if (m != 0.0 && m != 1.0) throw format_error("sample " + id + ": mask values must be 0/1");
    if (m == 1.0) ++positives;
  }
  if (label == 1 && positives == 0) {
    throw format_error("sample " + id + ": anomalous label with empty mask");
  }
  if (label == 0 && positives != 0) {
    throw format_error("sample " + id + ": normal label with nonempty mask");
  }
}

void FamilySpec::validate() const {
  if (name.empty()) throw config_error("family: name must not be empty");
  if (period < 2.0) throw config_error("family " + name + ": period must be >= 2");
  if (smooth_radius < 0.0) throw config_error("family " + name + ": smooth radius must be >= 0");
  if (defects.empty()) throw config_error("family " + name + ": defect menu must not be empty");
  if (intensity_lo <= 0.0 || intensity_hi < intensity_lo) {
    throw config_error("family " + name + ": bad intensity range");
  }
  if (anomaly_rate < 0.0 || anomaly_rate > 1.0) {
    throw config_error("family " + name + ": anomaly rate must be in [0,1]");
  }
  if (image_h < 16 || image_w < 16) throw config_error("family " + name + ": image too small");
}

namespace {

struct TextureParams {
  TextureKind kind;
  double period, angle, phase_x, phase_y, smooth_radius;
};

TextureParams jittered(const FamilySpec& spec, Rng& rng) {
  TextureParams p;
  p.kind = spec.texture;
  p.period = spec.period * (1.0 + 0.15 * (2.0 * rng.uniform01() - 1.0));
  p.angle = spec.angle + 0.15 * (2.0 * rng.uniform01() - 1.0);
  p.phase_x = rng.uniform(0.0, spec.period);
  p.phase_y = rng.uniform(0.0, spec.period);
  p.smooth_radius = spec.smooth_radius;
  return p;
}

void render_texture(const TextureParams& p, std::vector<double>& img, int h, int w, Rng& rng) {
  const double ca = std::cos(p.angle), sa = std::sin(p.angle);
  switch (p.kind) {
    case TextureKind::sinusoid_grating: {
      const double two_pi = 6.283185307179586476925286766559;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double u = (x + p.phase_x) * ca + (y + p.phase_y) * sa;
          img[static_cast<long>(y) * w + x] = 0.5 + 0.35 * std::sin(two_pi * u / p.period);
        }
      }
      break;
    }
    case TextureKind::checkerboard: {
      const double half = std::max(1.0, p.period / 2.0);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double u = (x + p.phase_x) * ca + (y + p.phase_y) * sa;
          const double v = -(x + p.phase_x) * sa + (y + p.phase_y) * ca;
          const long cell = static_cast<long>(std::floor(u / half)) +
                            static_cast<long>(std::floor(v / half));
          img[static_cast<long>(y) * w + x] = (cell & 1) ? 0.7 : 0.3;
        }
      }
      break;
    }
    case TextureKind::filtered_noise: {
      std::vector<double> noise(static_cast<std::size_t>(h) * w);
      for (auto& v : noise) v = rng.uniform01();
      const int r = std::max(0, static_cast<int>(std::lround(p.smooth_radius)));
      std::vector<double> blurred(noise.size());
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double acc = 0.0;
          int cnt = 0;
          for (int dy = -r; dy <= r; ++dy) {
            const int sy = std::clamp(y + dy, 0, h - 1);
            for (int dx = -r; dx <= r; ++dx) {
              const int sx = std::clamp(x + dx, 0, w - 1);
              acc += noise[static_cast<long>(sy) * w + sx];
              ++cnt;
            }
          }
          blurred[static_cast<long>(y) * w + x] = acc / cnt;
        }
      }
      double mean = 0.0;
      for (double v : blurred) mean += v;
      mean /= blurred.size();
      double var = 0.0;
      for (double v : blurred) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / blurred.size());
      const double scale = sd > 1e-9 ? 0.12 / sd : 0.0;
      for (std::size_t i = 0; i < blurred.size(); ++i) {
        img[i] = std::clamp(0.5 + (blurred[i] - mean) * scale, 0.05, 0.95);
      }
      break;
    }
  }
}

// Returns the defect mask area, or 0 when the attempt produced no support.
long apply_defect(const FamilySpec& spec, DefectKind kind, std::vector<double>& img,
                  std::vector<double>& mask, int h, int w, Rng& rng) {
  std::fill(mask.begin(), mask.end(), 0.0);
  const double amp = rng.uniform(spec.intensity_lo, spec.intensity_hi);
  const double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
  long area = 0;
  switch (kind) {
    case DefectKind::blob: {
      const double sigma = rng.uniform(1.5, 5.0);
      const double mx = std::min(8.0, w / 4.0), my = std::min(8.0, h / 4.0);
      const double cx = rng.uniform(mx, w - mx);
      const double cy = rng.uniform(my, h - my);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          const double bump = std::exp(-r2 / (2.0 * sigma * sigma));
          const long i = static_cast<long>(y) * w + x;
          img[i] = std::clamp(img[i] + sign * amp * bump, 0.0, 1.0);
          if (bump > 0.25) {
            mask[i] = 1.0;
            ++area;
          }
        }
      }
      break;
    }
    case DefectKind::scratch: {
      const double len = rng.uniform(12.0, 28.0);
      const double width = rng.uniform(1.0, 3.0);
      const double theta = rng.uniform(0.0, 6.283185307179586);
      const double mx = std::min(16.0, w / 4.0), my = std::min(16.0, h / 4.0);
      const double cx = rng.uniform(mx, w - mx);
      const double cy = rng.uniform(my, h - my);
      const double x0 = cx - 0.5 * len * std::cos(theta), y0 = cy - 0.5 * len * std::sin(theta);
      const double x1 = cx + 0.5 * len * std::cos(theta), y1 = cy + 0.5 * len * std::sin(theta);
      const double dx = x1 - x0, dy = y1 - y0;
      const double seg2 = dx * dx + dy * dy;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double t = std::clamp(((x - x0) * dx + (y - y0) * dy) / seg2, 0.0, 1.0);
          const double px = x0 + t * dx, py = y0 + t * dy;
          const double dist = std::hypot(x - px, y - py);
          const double cov = std::clamp(0.5 * width + 0.5 - dist, 0.0, 1.0);  // anti-aliased
          if (cov > 0.0) {
            const long i = static_cast<long>(y) * w + x;
            img[i] = std::clamp(img[i] + sign * amp * cov, 0.0, 1.0);
            if (cov > 0.5) {
              mask[i] = 1.0;
              ++area;
            }
          }
        }
      }
      break;
    }
    case DefectKind::patch_swap: {
      const int rw = 8 + static_cast<int>(rng.below(9));  // 8..16
      const int rh = 8 + static_cast<int>(rng.below(9));
      const int x0 = static_cast<int>(rng.below(w - rw));
      const int y0 = static_cast<int>(rng.below(h - rh));
      // a texture from a different family
      TextureKind other = spec.texture;
      while (other == spec.texture) {
        other = static_cast<TextureKind>(rng.below(3));
      }
      TextureParams p;
      p.kind = other;
      p.period = rng.uniform(4.0, 12.0);
      p.angle = rng.uniform(0.0, 3.14159265358979);
      p.phase_x = rng.uniform(0.0, 8.0);
      p.phase_y = rng.uniform(0.0, 8.0);
      p.smooth_radius = 1.0;
      std::vector<double> swap_tex(static_cast<std::size_t>(h) * w);
      render_texture(p, swap_tex, h, w, rng);
      for (int y = y0; y < y0 + rh; ++y) {
        for (int x = x0; x < x0 + rw; ++x) {
          const long i = static_cast<long>(y) * w + x;
          img[i] = swap_tex[i];
          mask[i] = 1.0;
          ++area;
        }
      }
      break;
    }
  }
  return area;
}

ImageSample make_sample(const FamilySpec& spec, int index, std::uint64_t dataset_seed) {
  const std::uint64_t sample_seed = mix_seed(dataset_seed, fnv1a("sample"),
                                             static_cast<std::uint64_t>(index));
  Rng rng(sample_seed);
  const int h = spec.image_h, w = spec.image_w;

  ImageSample s;
  s.family = spec.name;
  s.seed = sample_seed;
  s.h = h;
  s.w = w;
  s.pixels.assign(static_cast<std::size_t>(h) * w, 0.0);
  s.mask.assign(static_cast<std::size_t>(h) * w, 0.0);

  s.label = rng.uniform01() < spec.anomaly_rate ? 1 : 0;
  render_texture(jittered(spec, rng), s.pixels, h, w, rng);
  // 2% amplitude noise on every image
  for (auto& v : s.pixels) v = std::clamp(v + 0.02 * (2.0 * rng.uniform01() - 1.0), 0.0, 1.0);

  if (s.label == 1) {
    const long lo = std::max<long>(1, static_cast<long>(std::ceil(0.002 * h * w)));
    const long hi = static_cast<long>(std::floor(0.10 * h * w));
    std::vector<double> base = s.pixels;
    for (int attempt = 0; attempt < 64; ++attempt) {
      const DefectKind kind = spec.defects[rng.below(spec.defects.size())];
      s.pixels = base;
      const long area = apply_defect(spec, kind, s.pixels, s.mask, h, w, rng);
      if (area >= lo && area <= hi) break;
      if (attempt == 63) {
        throw config_error("family " + spec.name + ": cannot place defect within area bounds");
      }
    }
  }

  std::ostringstream id;
  id << spec.name << "_";
  id.width(5);
  id.fill('0');
  id << index;
  s.id = id.str();
  s.validate();
  return s;
}

}  // namespace

std::vector<ImageSample> generate(const FamilySpec& spec, int n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw config_error("generate: n must be >= 1");
  std::vector<ImageSample> out(n);
  const int nt = kernels::max_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(dynamic) if (nt > 1)
#endif
  for (int i = 0; i < n; ++i) out[i] = make_sample(spec, i, seed);
  return out;
}

std::pair<std::vector<ImageSample>, std::vector<ImageSample>> zero_shot_split(
    const std::vector<ImageSample>& all, const std::set<std::string>& train_families,
    const std::set<std::string>& eval_families) {
  std::vector<std::string> overlap;
  std::set_intersection(train_families.begin(), train_families.end(), eval_families.begin(),
                        eval_families.end(), std::back_inserter(overlap));
  if (!overlap.empty()) {
    std::string names;
    for (const auto& f : overlap) names += (names.empty() ? "" : ", ") + f;
    throw protocol_error("zero-shot split violated: families {" + names +
                         "} appear in both train and eval");
  }
  std::pair<std::vector<ImageSample>, std::vector<ImageSample>> out;
  for (const auto& s : all) {
    if (train_families.count(s.family)) out.first.push_back(s);
    if (eval_families.count(s.family)) out.second.push_back(s);
  }
  return out;
}

// --- PGM ----------------------------------------------------------------------

void write_pgm16(const std::string& path, const std::vector<double>& pixels, int h, int w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw format_error(path + ": cannot open for writing");
  os << "P5\n" << w << " " << h << "\n65535\n";
  for (double p : pixels) {
    const long q = std::lround(std::clamp(p, 0.0, 1.0) * 65535.0);
    const unsigned char b[2] = {static_cast<unsigned char>((q >> 8) & 0xff),
                                static_cast<unsigned char>(q & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!os) throw format_error(path + ": write failed");
}

namespace {

struct PgmHeader {
  int w, h;
  long maxval;
};

PgmHeader read_pgm_header(std::istream& in, const std::string& path) {
  std::string magic;
  in >> magic;
  if (magic != "P5") throw format_error(path + ": not a P5 graymap");
  long w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w < 1 || h < 1 || (maxval != 255 && maxval != 65535)) {
    throw format_error(path + ": malformed header");
  }
  in.get();  // single whitespace after maxval
  return {static_cast<int>(w), static_cast<int>(h), maxval};
}

}  // namespace

std::vector<double> read_pgm16(const std::string& path, int& h, int& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error(path + ": cannot open");
  const PgmHeader hd = read_pgm_header(in, path);
  if (hd.maxval != 65535) throw format_error(path + ": expected 16-bit graymap");
  h = hd.h;
  w = hd.w;
  std::vector<double> out(static_cast<std::size_t>(hd.h) * hd.w);
  std::vector<unsigned char> buf(out.size() * 2);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<long>(buf.size()))) {
    throw format_error(path + ": truncated pixel data");
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const unsigned v = (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1];
    out[i] = static_cast<double>(v) / 65535.0;
  }
  return out;
}

void write_pgm8(const std::string& path, const std::vector<double>& values01, int h, int w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw format_error(path + ": cannot open for writing");
  os << "P5\n" << w << " " << h << "\n255\n";
  for (double v : values01) {
    const unsigned char b = v != 0.0 ? 255 : 0;
    os.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!os) throw format_error(path + ": write failed");
}

std::vector<double> read_pgm8(const std::string& path, int& h, int& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error(path + ": cannot open");
  const PgmHeader hd = read_pgm_header(in, path);
  if (hd.maxval != 255) throw format_error(path + ": expected 8-bit graymap");
  h = hd.h;
  w = hd.w;
  std::vector<unsigned char> buf(static_cast<std::size_t>(hd.h) * hd.w);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<long>(buf.size()))) {
    throw format_error(path + ": truncated pixel data");
  }
  std::vector<double> out(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    if (buf[i] != 0 && buf[i] != 255) {
      throw format_error(path + ": mask values must be 0 or 255");
    }
    out[i] = buf[i] ? 1.0 : 0.0;
  }
  return out;
}

void write_pgm8_gray(const std::string& path, const std::vector<unsigned char>& bytes, int h,
                     int w) {
  if (static_cast<long>(bytes.size()) != static_cast<long>(h) * w) {
    throw format_error(path + ": pixel count does not match dimensions");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw format_error(path + ": cannot open for writing");
  os << "P5\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
  if (!os) throw format_error(path + ": write failed");
}

std::vector<unsigned char> read_pgm8_gray(const std::string& path, int& h, int& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error(path + ": cannot open");
  const PgmHeader hd = read_pgm_header(in, path);
  if (hd.maxval != 255) throw format_error(path + ": expected 8-bit graymap");
  h = hd.h;
  w = hd.w;
  std::vector<unsigned char> buf(static_cast<std::size_t>(hd.h) * hd.w);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<long>(buf.size()))) {
    throw format_error(path + ": truncated pixel data");
  }
  return buf;
}

// --- dataset IO -----------------------------------------------------------------

void write_dataset(const std::vector<ImageSample>& samples, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  std::ofstream index(fs::path(dir) / "index.csv");
  if (!index) throw format_error(dir + "/index.csv: cannot open for writing");
  index << "id,family,label,pixels_path,mask_path\n";
  for (const auto& s : samples) {
    s.validate();
    const std::string px_rel = "images/" + s.id + ".pgm";
    std::string mask_rel;
    write_pgm16((fs::path(dir) / px_rel).string(), s.pixels, s.h, s.w);
    if (s.label == 1) {
      mask_rel = "masks/" + s.id + ".pgm";
      write_pgm8((fs::path(dir) / mask_rel).string(), s.mask, s.h, s.w);
    }
    index << s.id << "," << s.family << "," << s.label << "," << px_rel << "," << mask_rel
          << "\n";
  }
}

std::vector<ImageSample> read_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw format_error(dir + ": not a directory");
  const fs::path index_path = fs::path(dir) / "index.csv";
  if (!fs::exists(index_path)) return {};  // empty directory is an empty dataset

  std::ifstream index(index_path);
  if (!index) throw format_error(index_path.string() + ": cannot open");
  std::string line;
  if (!std::getline(index, line) || line != "id,family,label,pixels_path,mask_path") {
    throw format_error(index_path.string() + ": bad header");
  }
  std::vector<ImageSample> out;
  int line_no = 1;
  while (std::getline(index, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() == 4) fields.push_back("");  // empty trailing mask_path
    if (fields.size() != 5) {
      throw format_error(index_path.string() + ": malformed row at line " +
                         std::to_string(line_no));
    }
    ImageSample s;
    s.id = fields[0];
    s.family = fields[1];
    if (fields[2] != "0" && fields[2] != "1") {
      throw format_error(index_path.string() + ": bad label at line " + std::to_string(line_no));
    }
    s.label = fields[2] == "1" ? 1 : 0;
    s.pixels = read_pgm16((fs::path(dir) / fields[3]).string(), s.h, s.w);
    if (s.label == 1) {
      if (fields[4].empty()) {
        throw format_error(index_path.string() + ": anomalous row " + s.id +
                           " has no mask file");
      }
      int mh = 0, mw = 0;
      s.mask = read_pgm8((fs::path(dir) / fields[4]).string(), mh, mw);
      if (mh != s.h || mw != s.w) {
        throw format_error(dir + ": mask size mismatch for " + s.id);
      }
    } else {
      s.mask.assign(s.pixels.size(), 0.0);
    }
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

// --- names -----------------------------------------------------------------------

const char* texture_name(TextureKind k) {
  switch (k) {
    case TextureKind::sinusoid_grating: return "sinusoid-grating";
    case TextureKind::checkerboard: return "checkerboard";
    case TextureKind::filtered_noise: return "filtered-noise";
  }
  return "?";
}

const char* defect_name(DefectKind k) {
  switch (k) {
    case DefectKind::blob: return "blob";
    case DefectKind::scratch: return "scratch";
    case DefectKind::patch_swap: return "patch-swap";
  }
  return "?";
}

TextureKind texture_from_name(const std::string& s) {
  if (s == "sinusoid-grating") return TextureKind::sinusoid_grating;
  if (s == "checkerboard") return TextureKind::checkerboard;
  if (s == "filtered-noise") return TextureKind::filtered_noise;
  throw config_error("unknown texture '" + s + "'");
}

DefectKind defect_from_name(const std::string& s) {
  if (s == "blob") return DefectKind::blob;
  if (s == "scratch") return DefectKind::scratch;
  if (s == "patch-swap") return DefectKind::patch_swap;
  throw config_error("unknown defect '" + s + "'");
}

}  // namespace wmoe::synth
