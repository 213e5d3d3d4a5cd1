// Seeded synthetic conflict clips.
//
// Every clip shows two discs on a noisy background: a red one and a blue one.
//   class 0: each disc glides along its own horizontal band and bounces off
//            the borders; the bands never meet.
//   class 1: the discs converge on a meeting point, overlap there, and shake
//            with high-amplitude per-frame jitter throughout.
#pragma once

#include <cstdio>

#include "conflictnet/data/dataset.hpp"

namespace conflictnet {

struct SynthSpec {
  std::size_t clips_per_class = 50;
  std::size_t frames = 15;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 0;
  double speed_min = 0.5;         // pixels per frame at a 32-pixel frame
  double speed_max = 1.5;
  double jitter = 0.08;           // class-1 jitter amplitude, fraction of frame size
  double overlap_threshold = 0.5; // class-1 post-meeting center gap, fraction of radius

  void validate() const {
    if (clips_per_class == 0) throw ConfigError("clips_per_class", "must be positive");
    if (frames < 2) throw ConfigError("frames", "must be at least 2");
    if (height < 8 || width < 8) throw ConfigError("size", "frames must be at least 8x8");
    if (!(speed_min > 0 && speed_max >= speed_min)) throw ConfigError("speed", "need 0 < speed_min <= speed_max");
    if (jitter < 0) throw ConfigError("jitter", "must be non-negative");
    if (overlap_threshold < 0) throw ConfigError("overlap_threshold", "must be non-negative");
  }
};

namespace detail {

struct Point {
  double x, y;
};

inline void draw_disc(RgbImage& img, Point c, double r, const std::uint8_t color[3]) {
  const auto y0 = static_cast<std::ptrdiff_t>(std::floor(c.y - r)), y1 = static_cast<std::ptrdiff_t>(std::ceil(c.y + r));
  const auto x0 = static_cast<std::ptrdiff_t>(std::floor(c.x - r)), x1 = static_cast<std::ptrdiff_t>(std::ceil(c.x + r));
  for (auto y = std::max<std::ptrdiff_t>(0, y0); y <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(img.height) - 1, y1); ++y)
    for (auto x = std::max<std::ptrdiff_t>(0, x0); x <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(img.width) - 1, x1); ++x) {
      const double dx = static_cast<double>(x) + 0.5 - c.x, dy = static_cast<double>(y) + 0.5 - c.y;
      if (dx * dx + dy * dy > r * r) continue;
      auto* px = img.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
      for (int ch = 0; ch < 3; ++ch) px[ch] = std::max(px[ch], color[ch]);
    }
}

// Bouncing 1-D motion inside [lo, hi].
inline double bounce(double start, double velocity, std::size_t step, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return lo;
  double p = std::fmod(start - lo + velocity * static_cast<double>(step), 2 * span);
  if (p < 0) p += 2 * span;
  return lo + (p <= span ? p : 2 * span - p);
}

inline std::vector<RgbImage> render_clip(const SynthSpec& spec, int label, Rng rng) {
  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  const double size = std::min(h, w);
  const double r = std::max(2.0, size / 8.0);
  const double speed_scale = size / 32.0;
  const auto bg = static_cast<int>(rng.uniform(20, 60));
  const std::uint8_t red[3] = {static_cast<std::uint8_t>(rng.uniform(200, 255)), 40, 40};
  const std::uint8_t blue[3] = {40, 40, static_cast<std::uint8_t>(rng.uniform(200, 255))};

  std::vector<Point> a(spec.frames), b(spec.frames);
  if (label == 0) {
    const double ya = h * rng.uniform(0.18, 0.3), yb = h * rng.uniform(0.7, 0.82);
    const double xa = rng.uniform(r, w - r), xb = rng.uniform(r, w - r);
    const double va = rng.uniform(spec.speed_min, spec.speed_max) * speed_scale * (rng.uniform() < 0.5 ? -1 : 1);
    const double vb = rng.uniform(spec.speed_min, spec.speed_max) * speed_scale * (rng.uniform() < 0.5 ? -1 : 1);
    for (std::size_t k = 0; k < spec.frames; ++k) {
      a[k] = {bounce(xa, va, k, r, w - r), ya};
      b[k] = {bounce(xb, vb, k, r, w - r), yb};
    }
  } else {
    const Point meet{w * rng.uniform(0.4, 0.6), h * rng.uniform(0.4, 0.6)};
    Point sa{w * rng.uniform(0.1, 0.25), h * rng.uniform(0.1, 0.9)};
    Point sb{w * rng.uniform(0.75, 0.9), h * rng.uniform(0.1, 0.9)};
    if (rng.uniform() < 0.5) std::swap(sa, sb);
    const double angle = rng.uniform(0, 2 * 3.14159265358979323846);
    const double gap = spec.overlap_threshold * r * rng.uniform();
    const Point ma{meet.x + 0.5 * gap * std::cos(angle), meet.y + 0.5 * gap * std::sin(angle)};
    const Point mb{meet.x - 0.5 * gap * std::cos(angle), meet.y - 0.5 * gap * std::sin(angle)};
    const auto meet_frame = static_cast<std::size_t>(
        std::llround(static_cast<double>(spec.frames) * rng.uniform(0.3, 0.5)));
    const double amp = spec.jitter * size;
    for (std::size_t k = 0; k < spec.frames; ++k) {
      const double s = k >= meet_frame ? 1.0 : static_cast<double>(k) / static_cast<double>(meet_frame);
      a[k] = {sa.x + (ma.x - sa.x) * s + rng.uniform(-amp, amp), sa.y + (ma.y - sa.y) * s + rng.uniform(-amp, amp)};
      b[k] = {sb.x + (mb.x - sb.x) * s + rng.uniform(-amp, amp), sb.y + (mb.y - sb.y) * s + rng.uniform(-amp, amp)};
    }
  }

  std::vector<RgbImage> frames;
  frames.reserve(spec.frames);
  for (std::size_t k = 0; k < spec.frames; ++k) {
    RgbImage img(spec.width, spec.height);
    for (auto& px : img.pixels) px = static_cast<std::uint8_t>(bg + static_cast<int>(rng.below(13)) - 6);
    draw_disc(img, a[k], r, red);
    draw_disc(img, b[k], r, blue);
    frames.push_back(std::move(img));
  }
  return frames;
}

}  // namespace detail

/// Writes spec.clips_per_class clips of each class under out_dir and returns
/// the manifest (also written to out_dir/manifest.csv). Labels alternate 0,1.
inline Manifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "clips", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "clips").string() + ": " + ec.message());
  Manifest m{out_dir, {}};
  const Rng root(spec.seed);
  const std::size_t total = 2 * spec.clips_per_class;
  for (std::size_t i = 0; i < total; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "%05zu", i);
    m.clips.push_back({std::string("clips/") + id, static_cast<int>(i % 2), spec.frames});
  }
  std::vector<std::string> errors(total);
  parallel_for(total, [&](std::size_t i) {
    try {
      const auto& rec = m.clips[i];
      const auto dir = out_dir / rec.clip_dir;
      fs::create_directories(dir);
      const auto frames = detail::render_clip(spec, rec.label, root.substream("clip", i));
      for (std::size_t k = 0; k < frames.size(); ++k) write_ppm(dir / frame_file_name(k), frames[k]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);
  write_manifest(m);
  return m;
}

}  // namespace conflictnet
