#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "nvde/synthoracle.hpp"

namespace nvde {

using json = nlohmann::json;

// ------------------------------------------------------------------- PNG

// Color images map linearly between [-0.5, 0.5] and 8-bit [0, 255].
namespace detail {

struct PngCloser {
  std::FILE* f = nullptr;
  ~PngCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

template <typename T>
void write_png(const std::string& path, const Tensor<T>& img) {
  int H = img.height(), W = img.width(), C = img.channels();
  check(C == 1 || C == 3, "write_png: 1 or 3 channels expected");
  detail::PngCloser fc{std::fopen(path.c_str(), "wb")};
  check(fc.f != nullptr, "write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng failure for " + path);
  }
  png_init_io(png, fc.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               C == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<size_t>(W) * C);
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < C; ++c) {
        double v = (static_cast<double>(img.at(i, j, c)) + 0.5) * 255.0;
        row[static_cast<size_t>(j * C + c)] =
            static_cast<png_byte>(std::clamp(std::lround(v), 0l, 255l));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

template <typename T>
Tensor<T> read_png(const std::string& path) {
  detail::PngCloser fc{std::fopen(path.c_str(), "rb")};
  check(fc.f != nullptr, "read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng failure for " + path);
  }
  png_init_io(png, fc.f);
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  int channels = static_cast<int>(png_get_channels(png, info));
  check(channels == 1 || channels == 3, "read_png: unsupported channel count");
  Tensor<T> img({static_cast<int>(h), static_cast<int>(w), channels});
  std::vector<png_byte> row(static_cast<size_t>(w) * channels);
  for (png_uint_32 i = 0; i < h; ++i) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 j = 0; j < w; ++j)
      for (int c = 0; c < channels; ++c)
        img.at(static_cast<int>(i), static_cast<int>(j), c) =
            static_cast<T>(row[static_cast<size_t>(j * channels + c)] / 255.0 - 0.5);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// ------------------------------------------------------------------- PFM

// Single-channel 32-bit PFM, scale -1.0 (little-endian), rows bottom-to-top.
template <typename T>
void write_pfm(const std::string& path, const Tensor<T>& img) {
  check(img.channels() == 1, "write_pfm: single channel expected");
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "write_pfm: cannot open " + path);
  f << "Pf\n" << img.width() << " " << img.height() << "\n-1.0\n";
  for (int i = img.height() - 1; i >= 0; --i)
    for (int j = 0; j < img.width(); ++j) {
      float v = static_cast<float>(img.at(i, j, 0));
      f.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
}

template <typename T>
Tensor<T> read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "read_pfm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0;
  f >> magic >> w >> h >> scale;
  check(magic == "Pf", "read_pfm: not a single-channel PFM: " + path);
  check(scale < 0, "read_pfm: big-endian PFM not supported");
  f.get();  // newline
  Tensor<T> img({h, w, 1});
  for (int i = h - 1; i >= 0; --i)
    for (int j = 0; j < w; ++j) {
      float v = 0;
      f.read(reinterpret_cast<char*>(&v), sizeof(float));
      img.at(i, j, 0) = static_cast<T>(v);
    }
  check(f.good(), "read_pfm: truncated file " + path);
  return img;
}

// ------------------------------------------------------------------ JSON

inline json camera_to_json(const Camera& cam) {
  return json{{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx},
              {"cy", cam.cy}, {"w", cam.width}, {"h", cam.height}};
}

inline Camera camera_from_json(const json& j) {
  Camera c;
  c.fx = j.at("fx");
  c.fy = j.at("fy");
  c.cx = j.at("cx");
  c.cy = j.at("cy");
  c.width = j.at("w");
  c.height = j.at("h");
  return c;
}

// Poses serialize as 12 row-major reals of [R|t].
inline json pose_to_json(const PoseSE3& p) {
  json a = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) a.push_back(p.R(i, j));
    a.push_back(p.t[i]);
  }
  return a;
}

inline PoseSE3 pose_from_json(const json& a) {
  check(a.is_array() && a.size() == 12, "pose_from_json: expected 12 reals");
  PoseSE3 p;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) p.R(i, j) = a.at(static_cast<size_t>(4 * i + j));
    p.t[i] = a.at(static_cast<size_t>(4 * i + 3));
  }
  return p;
}

inline SceneSpec scene_spec_from_json(const json& j) {
  SceneSpec s;
  s.cam = camera_from_json(j.at("camera"));
  s.t_near = j.value("t_near", 1.0);
  s.t_far = j.value("t_far", 16.0);
  s.seed = j.value("seed", 0ull);
  for (const auto& pj : j.at("planes")) {
    PlaneSpec p;
    p.depth = pj.at("depth");
    if (pj.contains("extent")) {
      auto e = pj.at("extent");
      p.bounded = true;
      p.x0 = e.at(0);
      p.x1 = e.at(1);
      p.y0 = e.at(2);
      p.y1 = e.at(3);
    }
    std::string kind = pj.value("texture", "noise");
    p.texture.kind = kind == "checker" ? TextureKind::checker : TextureKind::noise;
    p.texture.scale = pj.value("texture_scale", 1.0);
    p.texture.seed = pj.value("texture_seed", s.seed + 101 * s.planes.size());
    s.planes.push_back(p);
  }
  if (j.contains("highlight")) {
    const auto& hj = j.at("highlight");
    HighlightSpec h;
    h.plane = hj.value("plane", 0);
    h.center_u = hj.at("center_px").at(0);
    h.center_v = hj.at("center_px").at(1);
    h.radius_px = hj.value("radius_px", 5.0);
    h.intensity = hj.value("intensity", 0.35);
    h.gain = hj.value("gain", 0.5);
    s.highlight = h;
  }
  return s;
}

inline std::vector<PoseSE3> poses_from_json(const json& j) {
  std::vector<PoseSE3> out;
  for (const auto& pj : j) out.push_back(pose_from_json(pj));
  return out;
}

// ------------------------------------------------------------- FrameSets

// On-disk layout of a frame set directory:
//   frame_XXX.png, gt_depth_XXX.pfm, highlight_mask.png, poses.json
template <typename T>
void save_frameset(const std::string& dir, const FrameSet<T>& fs) {
  namespace fs_ = std::filesystem;
  fs_::create_directories(dir);
  json meta;
  meta["intrinsics"] = camera_to_json(fs.cam);
  meta["t_near"] = fs.t_near;
  meta["t_far"] = fs.t_far;
  meta["poses"] = json::array();
  char name[64];
  for (size_t i = 0; i < fs.images.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%03zu.png", i);
    write_png(dir + "/" + name, fs.images[i]);
    std::snprintf(name, sizeof(name), "gt_depth_%03zu.pfm", i);
    write_pfm(dir + "/" + name, fs.gt_depth[i]);
    meta["poses"].push_back(pose_to_json(fs.poses[i]));
  }
  if (!fs.highlight_mask.empty()) write_png(dir + "/highlight_mask.png", fs.highlight_mask);
  std::ofstream f(dir + "/poses.json");
  f << meta.dump(2) << "\n";
}

template <typename T>
FrameSet<T> load_frameset(const std::string& dir) {
  std::ifstream f(dir + "/poses.json");
  check(f.good(), "load_frameset: missing poses.json in " + dir);
  json meta = json::parse(f);
  FrameSet<T> fs;
  fs.cam = camera_from_json(meta.at("intrinsics"));
  fs.t_near = meta.value("t_near", 1.0);
  fs.t_far = meta.value("t_far", 16.0);
  fs.poses = poses_from_json(meta.at("poses"));
  char name[64];
  for (size_t i = 0; i < fs.poses.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%03zu.png", i);
    fs.images.push_back(read_png<T>(dir + "/" + name));
    std::snprintf(name, sizeof(name), "gt_depth_%03zu.pfm", i);
    if (std::filesystem::exists(dir + "/" + name))
      fs.gt_depth.push_back(read_pfm<T>(dir + "/" + name));
  }
  if (std::filesystem::exists(dir + "/highlight_mask.png")) {
    auto m = read_png<T>(dir + "/highlight_mask.png");
    fs.highlight_mask = Tensor<T>({m.height(), m.width(), 1});
    for (int64_t i = 0; i < fs.highlight_mask.numel(); ++i)
      fs.highlight_mask[i] = m[i * m.channels()] > T(0) ? T(1) : T(0);
  }
  return fs;
}

// ------------------------------------------------------------ checkpoints

// "NVDE1" container: magic NVDE1\0, version u32, tensor count u32, then per
// tensor: name length u16, UTF-8 name, dtype u8 (0=f32, 1=f64), ndim u8,
// dims u32 each, raw little-endian data. Trivially parseable anywhere.
struct Checkpoint {
  using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;
  std::vector<std::pair<std::string, AnyTensor>> entries;

  void add(const std::string& name, Tensor<float> t) { entries.emplace_back(name, std::move(t)); }
  void add(const std::string& name, Tensor<double> t) { entries.emplace_back(name, std::move(t)); }

  const AnyTensor* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }

  template <typename T>
  Tensor<T> get(const std::string& name) const {
    const AnyTensor* t = find(name);
    check(t != nullptr, "checkpoint: missing tensor " + name);
    if (std::holds_alternative<Tensor<T>>(*t)) return std::get<Tensor<T>>(*t);
    if constexpr (std::is_same_v<T, float>)
      return cast_tensor<float>(std::get<Tensor<double>>(*t));
    else
      return cast_tensor<double>(std::get<Tensor<float>>(*t));
  }
};

inline constexpr char kCheckpointMagic[6] = {'N', 'V', 'D', 'E', '1', '\0'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename V>
void write_le(std::ostream& os, V v) {
  // byte-order-stable write (this code targets little-endian hosts)
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <typename V>
V read_le(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  return v;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "save_checkpoint: cannot open " + path);
  f.write(kCheckpointMagic, 6);
  detail::write_le<uint32_t>(f, kCheckpointVersion);
  detail::write_le<uint32_t>(f, static_cast<uint32_t>(ckpt.entries.size()));
  for (const auto& [name, any] : ckpt.entries) {
    detail::write_le<uint16_t>(f, static_cast<uint16_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    std::visit(
        [&](const auto& t) {
          using T = typename std::decay_t<decltype(t)>::value_type;
          detail::write_le<uint8_t>(f, std::is_same_v<T, float> ? 0 : 1);
          detail::write_le<uint8_t>(f, static_cast<uint8_t>(t.shape.size()));
          for (int d : t.shape) detail::write_le<uint32_t>(f, static_cast<uint32_t>(d));
          f.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(T)));
        },
        any);
  }
  check(f.good(), "save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "load_checkpoint: cannot open " + path);
  char magic[6];
  f.read(magic, 6);
  check(std::memcmp(magic, kCheckpointMagic, 6) == 0, "load_checkpoint: bad magic in " + path);
  uint32_t version = detail::read_le<uint32_t>(f);
  check(version == kCheckpointVersion, "load_checkpoint: unsupported version");
  uint32_t count = detail::read_le<uint32_t>(f);
  Checkpoint ckpt;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t len = detail::read_le<uint16_t>(f);
    std::string name(len, '\0');
    f.read(name.data(), len);
    uint8_t dtype = detail::read_le<uint8_t>(f);
    uint8_t ndim = detail::read_le<uint8_t>(f);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(detail::read_le<uint32_t>(f));
    int64_t n = shape_numel(shape);
    if (dtype == 0) {
      Tensor<float> t(shape);
      f.read(reinterpret_cast<char*>(t.data.data()),
             static_cast<std::streamsize>(n * sizeof(float)));
      ckpt.add(name, std::move(t));
    } else {
      Tensor<double> t(shape);
      f.read(reinterpret_cast<char*>(t.data.data()),
             static_cast<std::streamsize>(n * sizeof(double)));
      ckpt.add(name, std::move(t));
    }
    check(f.good(), "load_checkpoint: truncated file " + path);
  }
  return ckpt;
}

// FNV-1a over the little-endian bytes of the config vector; the hash is
// stored bit-cast into a f64 tensor so the container format stays uniform.
inline uint64_t fnv1a(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline Tensor<double> hash_tensor(const Tensor<double>& config) {
  uint64_t h = fnv1a(config.data.data(), config.data.size() * sizeof(double));
  Tensor<double> t({1});
  std::memcpy(&t[0], &h, sizeof(double));
  return t;
}

}  // namespace nvde
