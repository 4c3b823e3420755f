#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lvmark/common.hpp"
#include "lvmark/png_io.hpp"
#include "lvmark/tensor.hpp"

namespace lvmark::media {

// ---------------------------------------------------------------------------
// VideoClip: F x H x W x C float video in [-1, 1], channel-interleaved.
// F must be even (one-level temporal DWT), H and W even, C == 3.
// ---------------------------------------------------------------------------

struct VideoClip {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> data;  // index: ((f*H + h)*W + w)*C + c

  VideoClip() = default;
  VideoClip(int f, int h, int w)
      : frames(f), height(h), width(w),
        data(static_cast<std::size_t>(f) * h * w * 3, 0.0f) {}

  float& at(int f, int h, int w, int c) {
    return data[static_cast<std::size_t>(((f * height + h) * width + w) * channels + c)];
  }
  float at(int f, int h, int w, int c) const {
    return data[static_cast<std::size_t>(((f * height + h) * width + w) * channels + c)];
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  void validate() const {
    require(frames >= 2, "clip frame count F=" + std::to_string(frames) + " must be >= 2");
    require(frames % 2 == 0, "clip frame count F=" + std::to_string(frames) + " must be even");
    require(height > 0 && height % 2 == 0,
            "clip height H=" + std::to_string(height) + " must be positive and even");
    require(width > 0 && width % 2 == 0,
            "clip width W=" + std::to_string(width) + " must be positive and even");
    require(channels == 3, "clip channel count C=" + std::to_string(channels) + " must be 3");
    require(static_cast<std::int64_t>(data.size()) ==
                static_cast<std::int64_t>(frames) * height * width * channels,
            "clip buffer size inconsistent with dimensions");
    for (float v : data)
      require(std::isfinite(v) && v >= -1.0f && v <= 1.0f,
              "clip values must be finite and within [-1, 1]");
  }

  bool same_dims(const VideoClip& o) const {
    return frames == o.frames && height == o.height && width == o.width && channels == o.channels;
  }
};

// Conversions between the media layout [F,H,W,C] and the network layout
// [B=1, C, F, H, W].
inline nn::Tensor clip_to_tensor(const VideoClip& clip) {
  nn::Tensor t({1, clip.channels, clip.frames, clip.height, clip.width});
  const int F = clip.frames, H = clip.height, W = clip.width, C = clip.channels;
  for (int c = 0; c < C; ++c)
    for (int f = 0; f < F; ++f)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          t[((static_cast<std::int64_t>(c) * F + f) * H + h) * W + w] = clip.at(f, h, w, c);
  return t;
}

// Extracts batch item `b` of a [B,C,F,H,W] tensor into a clip.
inline VideoClip tensor_to_clip(const nn::Tensor& t, int b = 0) {
  require(t.rank() == 5 && t.dim(1) == 3, "tensor_to_clip: [B,3,F,H,W] expected");
  const int C = t.dim(1), F = t.dim(2), H = t.dim(3), W = t.dim(4);
  VideoClip clip(F, H, W);
  const std::int64_t base = static_cast<std::int64_t>(b) * C * F * H * W;
  for (int c = 0; c < C; ++c)
    for (int f = 0; f < F; ++f)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          clip.at(f, h, w, c) =
              t[base + ((static_cast<std::int64_t>(c) * F + f) * H + h) * W + w];
  return clip;
}

// Stacks clips into a [B,C,F,H,W] batch tensor.
inline nn::Tensor clips_to_batch(const std::vector<VideoClip>& clips) {
  require(!clips.empty(), "clips_to_batch: empty batch");
  const auto& c0 = clips.front();
  nn::Tensor t({static_cast<int>(clips.size()), c0.channels, c0.frames, c0.height, c0.width});
  const std::int64_t per = c0.numel();
  for (std::size_t b = 0; b < clips.size(); ++b) {
    require(clips[b].same_dims(c0), "clips_to_batch: mixed clip dimensions");
    nn::Tensor one = clip_to_tensor(clips[b]);
    std::copy(one.data(), one.data() + per, t.data() + static_cast<std::int64_t>(b) * per);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic scenes: anti-aliased moving rectangles/ellipses over a smooth
// gradient with optional sinusoidal texture. Deterministic per seed.
// ---------------------------------------------------------------------------

struct SyntheticSceneSpec {
  int shapes = 3;
  double motion_amplitude = 2.0;  // pixels per frame
  double texture_frequency = 3.0; // cycles per width; 0 disables the texture
  bool background_gradient = true;
  std::uint64_t seed = 0;
  int frames = 8;
  int height = 64;
  int width = 64;

  void validate() const {
    require(shapes >= 1, "scene spec: shape count must be >= 1");
    require(motion_amplitude >= 0.0, "scene spec: motion amplitude must be >= 0");
    require(texture_frequency >= 0.0, "scene spec: texture frequency must be >= 0");
    require(frames >= 2 && frames % 2 == 0, "scene spec: frames must be even and >= 2");
    require(height >= 8 && height % 2 == 0, "scene spec: height must be even and >= 8");
    require(width >= 8 && width % 2 == 0, "scene spec: width must be even and >= 8");
  }
};

namespace detail {

struct Shape {
  bool ellipse;
  double cx, cy;        // start center (pixels)
  double hx, hy;        // half extents
  double vx, vy;        // velocity (pixels per frame)
  float color[3];
};

inline double smoothstep01(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// wraps x into [-margin, span - margin)
inline double wrap_coord(double x, double span, double margin) {
  const double period = span + 2.0 * margin;
  double y = std::fmod(x + margin, period);
  if (y < 0) y += period;
  return y - margin;
}

}  // namespace detail

inline VideoClip generate_synthetic_clip(const SyntheticSceneSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x5ce11e));
  const int F = spec.frames, H = spec.height, W = spec.width;

  const double theta = rng.uniform(0.0, 6.283185307179586);
  const double grad_amp = spec.background_gradient ? rng.uniform(0.25, 0.5) : 0.0;
  const double base = rng.uniform(-0.3, 0.3);
  const double tex_amp = spec.texture_frequency > 0.0 ? rng.uniform(0.1, 0.25) : 0.0;
  const double tex_phi = rng.uniform(0.0, 6.283185307179586);
  const double tex_phase = rng.uniform(0.0, 6.283185307179586);

  std::vector<detail::Shape> shapes(static_cast<std::size_t>(spec.shapes));
  const double min_dim = std::min(H, W);
  for (auto& s : shapes) {
    s.ellipse = rng.bernoulli(0.5);
    s.hx = rng.uniform(0.08, 0.2) * min_dim;
    s.hy = rng.uniform(0.08, 0.2) * min_dim;
    s.cx = rng.uniform(0.15, 0.85) * W;
    s.cy = rng.uniform(0.15, 0.85) * H;
    const double psi = rng.uniform(0.0, 6.283185307179586);
    s.vx = spec.motion_amplitude * std::cos(psi);
    s.vy = spec.motion_amplitude * std::sin(psi);
    for (float& c : s.color) c = static_cast<float>(rng.uniform(-0.9, 0.9));
  }

  VideoClip clip(F, H, W);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double tw = std::cos(tex_phi), th = std::sin(tex_phi);
  for (int f = 0; f < F; ++f) {
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const double nx = static_cast<double>(w) / W - 0.5;
        const double ny = static_cast<double>(h) / H - 0.5;
        double v = base + grad_amp * (ct * nx + st * ny);
        if (tex_amp > 0.0)
          v += tex_amp * std::sin(6.283185307179586 * spec.texture_frequency *
                                      (tw * static_cast<double>(w) / W + th * static_cast<double>(h) / H) +
                                  tex_phase);
        float px[3] = {static_cast<float>(v), static_cast<float>(v), static_cast<float>(v)};
        for (const auto& s : shapes) {
          const double margin = std::max(s.hx, s.hy) + 2.0;
          const double cx = detail::wrap_coord(s.cx + f * s.vx, W, margin);
          const double cy = detail::wrap_coord(s.cy + f * s.vy, H, margin);
          const double dx = (w + 0.5) - cx;
          const double dy = (h + 0.5) - cy;
          double dist;  // >0 outside, in pixels, roughly
          if (s.ellipse) {
            const double r = std::sqrt((dx * dx) / (s.hx * s.hx) + (dy * dy) / (s.hy * s.hy));
            dist = (r - 1.0) * std::min(s.hx, s.hy);
          } else {
            dist = std::max(std::abs(dx) - s.hx, std::abs(dy) - s.hy);
          }
          const double alpha = detail::smoothstep01(0.5 - dist);  // ~1px anti-aliased edge
          if (alpha > 0.0)
            for (int c = 0; c < 3; ++c)
              px[c] = static_cast<float>((1.0 - alpha) * px[c] + alpha * s.color[c]);
        }
        for (int c = 0; c < 3; ++c)
          clip.at(f, h, w, c) = std::clamp(px[c], -1.0f, 1.0f);
      }
  }
  return clip;
}

// ---------------------------------------------------------------------------
// Clip container ("NVV1"): magic, then u32 F, H, W, C, then f32 payload in
// frame-major row-major channel-interleaved order. All little-endian.
// ---------------------------------------------------------------------------

inline void save_clip(const VideoClip& clip, const std::string& path) {
  clip.validate();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_clip: cannot open " + path + " for writing");
  f.write("NVV1", 4);
  const std::uint32_t dims[4] = {static_cast<std::uint32_t>(clip.frames),
                                 static_cast<std::uint32_t>(clip.height),
                                 static_cast<std::uint32_t>(clip.width),
                                 static_cast<std::uint32_t>(clip.channels)};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  f.write(reinterpret_cast<const char*>(clip.data.data()),
          static_cast<std::streamsize>(clip.data.size() * sizeof(float)));
  if (!f) throw std::runtime_error("save_clip: short write to " + path);
}

namespace detail {

inline VideoClip load_clip_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("load_clip: cannot open " + path);
  char magic[4] = {};
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, "NVV1", 4) != 0)
    throw FormatError("load_clip: bad magic in " + path + " (expected NVV1)");
  std::uint32_t dims[4] = {};
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (f.gcount() != sizeof(dims)) throw FormatError("load_clip: truncated header in " + path);
  const auto F = static_cast<int>(dims[0]), H = static_cast<int>(dims[1]),
             W = static_cast<int>(dims[2]), C = static_cast<int>(dims[3]);
  if (F < 2 || F % 2 != 0) throw FormatError("load_clip: frame count F=" + std::to_string(F) + " must be even and >= 2");
  if (H <= 0 || H % 2 != 0) throw FormatError("load_clip: height H=" + std::to_string(H) + " must be even and positive");
  if (W <= 0 || W % 2 != 0) throw FormatError("load_clip: width W=" + std::to_string(W) + " must be even and positive");
  if (C != 3) throw FormatError("load_clip: channels C=" + std::to_string(C) + " must be 3");
  VideoClip clip(F, H, W);
  f.read(reinterpret_cast<char*>(clip.data.data()),
         static_cast<std::streamsize>(clip.data.size() * sizeof(float)));
  if (static_cast<std::size_t>(f.gcount()) != clip.data.size() * sizeof(float))
    throw FormatError("load_clip: truncated payload in " + path);
  return clip;
}

inline VideoClip load_clip_png_folder(const std::string& path) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.size() < 2 || files.size() % 2 != 0)
    throw FormatError("load_clip: PNG folder " + path + " must hold an even frame count >= 2, found " +
                      std::to_string(files.size()));
  VideoClip clip;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const png::Image img = png::read_file(files[i]);
    if (i == 0) {
      if (img.height % 2 != 0 || img.width % 2 != 0)
        throw FormatError("load_clip: PNG frame size " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + " must be even");
      clip = VideoClip(static_cast<int>(files.size()), img.height, img.width);
    } else {
      require(img.height == clip.height && img.width == clip.width,
              "load_clip: PNG frame size mismatch at " + files[i]);
    }
    for (int h = 0; h < clip.height; ++h)
      for (int w = 0; w < clip.width; ++w)
        for (int c = 0; c < 3; ++c) {
          const int src_c = img.channels == 1 ? 0 : c;
          const std::uint8_t px =
              img.pixels[(static_cast<std::size_t>(h) * img.width + w) * img.channels + src_c];
          clip.at(static_cast<int>(i), h, w, c) = static_cast<float>(px) / 127.5f - 1.0f;
        }
  }
  return clip;
}

}  // namespace detail

inline VideoClip load_clip(const std::string& path) {
  if (std::filesystem::is_directory(path)) return detail::load_clip_png_folder(path);
  return detail::load_clip_container(path);
}

// Writes the clip as a folder of frame_%04d.png files, mapping [-1,1] to
// [0,255] (the inverse of the ingestion map, rounded to nearest).
inline void save_clip_png_folder(const VideoClip& clip, const std::string& path) {
  namespace fs = std::filesystem;
  fs::create_directories(path);
  for (int f = 0; f < clip.frames; ++f) {
    png::Image img;
    img.width = clip.width;
    img.height = clip.height;
    img.channels = 3;
    img.pixels.resize(static_cast<std::size_t>(clip.width) * clip.height * 3);
    for (int h = 0; h < clip.height; ++h)
      for (int w = 0; w < clip.width; ++w)
        for (int c = 0; c < 3; ++c) {
          const float v = (clip.at(f, h, w, c) + 1.0f) * 127.5f;
          img.pixels[(static_cast<std::size_t>(h) * clip.width + w) * 3 + c] =
              static_cast<std::uint8_t>(std::clamp(static_cast<int>(std::lround(v)), 0, 255));
        }
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.png", f);
    png::write_file((fs::path(path) / name).string(), img);
  }
}

// ---------------------------------------------------------------------------
// Dataset manifest + seeded batch sampling
// ---------------------------------------------------------------------------

struct ManifestEntry {
  bool is_scene = true;
  SyntheticSceneSpec scene;
  std::string path;  // used when !is_scene
};

struct DatasetManifest {
  int frames = 8;
  int height = 64;
  int width = 64;
  std::string split = "train";
  bool with_replacement = false;
  std::vector<ManifestEntry> entries;

  void validate() const {
    require(!entries.empty(), "manifest: no entries");
  }
};

inline DatasetManifest make_synthetic_manifest(int count, int frames, int height, int width,
                                               std::uint64_t seed, const std::string& split) {
  DatasetManifest m;
  m.frames = frames;
  m.height = height;
  m.width = width;
  m.split = split;
  Rng rng(derive_seed(seed, fnv1a64(split)));
  for (int i = 0; i < count; ++i) {
    ManifestEntry e;
    e.is_scene = true;
    e.scene.shapes = 2 + static_cast<int>(rng.below(3));
    e.scene.motion_amplitude = rng.uniform(0.5, 3.0);
    e.scene.texture_frequency = rng.bernoulli(0.7) ? rng.uniform(1.0, 6.0) : 0.0;
    e.scene.background_gradient = true;
    e.scene.seed = rng.next_u64();
    e.scene.frames = frames;
    e.scene.height = height;
    e.scene.width = width;
    m.entries.push_back(e);
  }
  return m;
}

inline VideoClip load_entry(const DatasetManifest& m, int index) {
  const auto& e = m.entries[static_cast<std::size_t>(index)];
  VideoClip clip = e.is_scene ? generate_synthetic_clip(e.scene) : load_clip(e.path);
  require(clip.frames == m.frames && clip.height == m.height && clip.width == m.width,
          "manifest entry " + std::to_string(index) + " dimensions differ from the manifest");
  return clip;
}

// Seeded selection; a pure function of (manifest, batch, seed).
inline std::vector<int> sample_indices(const DatasetManifest& m, int batch, std::uint64_t seed) {
  m.validate();
  const int n = static_cast<int>(m.entries.size());
  Rng rng(derive_seed(seed, 0xba7c4));
  std::vector<int> idx;
  if (m.with_replacement) {
    for (int i = 0; i < batch; ++i) idx.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(n))));
  } else {
    require(batch <= n, "sample_batch: batch " + std::to_string(batch) + " exceeds dataset size " +
                            std::to_string(n) + " without replacement");
    auto perm = rng.permutation(n);
    idx.assign(perm.begin(), perm.begin() + batch);
  }
  return idx;
}

inline std::vector<VideoClip> sample_batch(const DatasetManifest& m, int batch, std::uint64_t seed) {
  std::vector<VideoClip> out;
  for (int i : sample_indices(m, batch, seed)) out.push_back(load_entry(m, i));
  return out;
}

}  // namespace lvmark::media
