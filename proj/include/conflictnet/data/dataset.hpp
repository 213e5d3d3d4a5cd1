// On-disk clip datasets: manifest CSV, frame loading, sampling, splitting and
// batch streaming.
//
// Layout:
//   <root>/manifest.csv               header: clip_dir,label,frame_count
//   <root>/clips/<id>/frame_000.ppm   one P6 file per frame
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "conflictnet/clip_batch.hpp"
#include "conflictnet/data/ppm.hpp"
#include "conflictnet/key_value.hpp"
#include "conflictnet/rng.hpp"

namespace conflictnet {

inline const char* class_name(int label) { return label == 0 ? "nonviolence" : "violence"; }

struct ClipRecord {
  std::string clip_dir;  // relative to the dataset root
  int label = 0;
  std::size_t frame_count = 0;

  bool operator==(const ClipRecord&) const = default;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ClipRecord> clips;

  std::size_t size() const noexcept { return clips.size(); }
  bool empty() const noexcept { return clips.empty(); }
  std::size_t count(int label) const {
    return static_cast<std::size_t>(
        std::count_if(clips.begin(), clips.end(), [label](const ClipRecord& c) { return c.label == label; }));
  }
};

inline constexpr const char* kManifestHeader = "clip_dir,label,frame_count";

inline std::string frame_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%03zu.ppm", index);
  return buf;
}

inline std::string manifest_csv(const Manifest& m) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& c : m.clips)
    out += c.clip_dir + "," + std::to_string(c.label) + "," + std::to_string(c.frame_count) + "\n";
  return out;
}

inline void write_manifest(const Manifest& m) {
  std::ofstream f(m.root / "manifest.csv", std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + (m.root / "manifest.csv").string());
  f << manifest_csv(m);
}

inline Manifest read_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.csv";
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(path.string() + ": manifest not found");
  Manifest m{root, {}};
  std::string line;
  if (!std::getline(f, line) || trim(line) != kManifestHeader)
    throw DataError(path.string() + ": expected header '" + kManifestHeader + "'");
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_list(line);
    auto bad = [&](const std::string& why) {
      return DataError(path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != 3) throw bad("expected 3 fields");
    ClipRecord rec;
    rec.clip_dir = std::string(fields[0]);
    if (fields[1] == "0") rec.label = 0;
    else if (fields[1] == "1") rec.label = 1;
    else throw bad("label must be 0 or 1");
    try {
      rec.frame_count = parse_uint("frame_count", fields[2]);
    } catch (const ConfigError&) {
      throw bad("frame_count must be a positive integer");
    }
    if (rec.frame_count == 0) throw bad("frame_count must be positive");
    m.clips.push_back(std::move(rec));
  }
  return m;
}

/// Evenly spread frame indices; short clips repeat their last frame.
inline std::vector<std::size_t> sample_frames(std::size_t n_frames, std::size_t seq_len) {
  if (n_frames == 0) throw DataError("sample_frames: clip has no frames");
  std::vector<std::size_t> idx(seq_len);
  if (n_frames >= seq_len) {
    if (seq_len == 1) return {0};
    // round(i (n-1) / (T-1)) with halves rounded up, in exact integer arithmetic
    const std::size_t num = n_frames - 1, den = seq_len - 1;
    for (std::size_t i = 0; i < seq_len; ++i) idx[i] = (2 * i * num + den) / (2 * den);
  } else {
    for (std::size_t i = 0; i < seq_len; ++i) idx[i] = std::min(i, n_frames - 1);
  }
  return idx;
}

/// Bilinear resize with half-pixel centers and edge clamping; output H'×W'×3
/// in the source value scale (0..255).
inline std::vector<double> resize_bilinear(const RgbImage& img, std::size_t out_h, std::size_t out_w) {
  std::vector<double> out(out_h * out_w * 3);
  auto axis = [](std::size_t dst, std::size_t in, std::size_t out_n, std::size_t& i0, std::size_t& i1, double& frac) {
    double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out_n) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(std::floor(src));
    i1 = std::min(i0 + 1, in - 1);
    frac = src - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    axis(y, img.height, out_h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      axis(x, img.width, out_w, x0, x1, fx);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(x0, y0)[c] * (1.0 - fx) + img.at(x1, y0)[c] * fx;
        const double bottom = img.at(x0, y1)[c] * (1.0 - fx) + img.at(x1, y1)[c] * fx;
        out[(y * out_w + x) * 3 + c] = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return out;
}

/// Loads the listed frames of one clip into a Tensor[n×H×W×3] scaled to [0,1].
inline Tensor load_frames(const std::filesystem::path& root, const ClipRecord& rec,
                          const std::vector<std::size_t>& frames, std::size_t target_h, std::size_t target_w) {
  Tensor out({frames.size(), target_h, target_w, 3});
  const std::size_t per = target_h * target_w * 3;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i] >= rec.frame_count)
      throw DataError(rec.clip_dir + ": frame index " + std::to_string(frames[i]) + " beyond frame_count");
    const auto img = read_ppm(root / rec.clip_dir / frame_file_name(frames[i]));
    const auto px = resize_bilinear(img, target_h, target_w);
    for (std::size_t j = 0; j < per; ++j) out[i * per + j] = px[j] / 255.0;
  }
  return out;
}

/// All frames of a clip, resized to target_h × target_w.
inline Tensor load_clip(const std::filesystem::path& root, const ClipRecord& rec, std::size_t target_h,
                        std::size_t target_w) {
  std::vector<std::size_t> all(rec.frame_count);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return load_frames(root, rec, all, target_h, target_w);
}

/// seq_len sampled frames of a clip: Tensor[T×H×W×3].
inline Tensor load_clip_sequence(const std::filesystem::path& root, const ClipRecord& rec, std::size_t seq_len,
                                 std::size_t target_h, std::size_t target_w) {
  return load_frames(root, rec, sample_frames(rec.frame_count, seq_len), target_h, target_w);
}

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplits {
  Manifest train, val, test;
};

/// Stratified, seeded three-way split. Each split keeps manifest order.
inline DatasetSplits split_dataset(const Manifest& m, SplitFractions fr, Rng rng) {
  if (fr.train < 0 || fr.val < 0 || fr.test < 0 || std::abs(fr.train + fr.val + fr.test - 1.0) > 1e-9)
    throw ConfigError("fractions", "split fractions must be non-negative and sum to 1");
  std::vector<int> assign(m.size(), 2);
  for (int label : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m.clips[i].label == label) idx.push_back(i);
    rng.shuffle(idx);
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::llround(n * fr.train));
    const auto n_val = std::min(idx.size() - n_train, static_cast<std::size_t>(std::llround(n * fr.val)));
    for (std::size_t k = 0; k < idx.size(); ++k) assign[idx[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
  }
  DatasetSplits out{{m.root, {}}, {m.root, {}}, {m.root, {}}};
  for (std::size_t i = 0; i < m.size(); ++i) {
    Manifest& dst = assign[i] == 0 ? out.train : (assign[i] == 1 ? out.val : out.test);
    dst.clips.push_back(m.clips[i]);
  }
  return out;
}

/// Decoded clip sequences for a manifest, held in memory.
class ClipStore {
 public:
  ClipStore(const Manifest& m, std::size_t seq_len, std::size_t h, std::size_t w) : seq_len_(seq_len), h_(h), w_(w) {
    if (m.empty()) throw DataError("manifest under " + m.root.string() + " is empty");
    clips_.resize(m.size());
    labels_.resize(m.size());
    std::vector<std::string> errors(m.size());
    parallel_for(m.size(), [&](std::size_t i) {
      try {
        clips_[i] = load_clip_sequence(m.root, m.clips[i], seq_len, h, w);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
      labels_[i] = m.clips[i].label;
    });
    for (const auto& e : errors)
      if (!e.empty()) throw DataError(e);
  }

  std::size_t size() const noexcept { return clips_.size(); }
  const Tensor& clip(std::size_t i) const { return clips_.at(i); }
  int label(std::size_t i) const { return labels_.at(i); }
  const std::vector<int>& labels() const noexcept { return labels_; }

  ClipBatch batch(const std::vector<std::size_t>& indices) const {
    const std::size_t per = seq_len_ * h_ * w_ * 3;
    Tensor frames({indices.size(), seq_len_, h_, w_, 3});
    std::vector<int> labels;
    labels.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      std::copy_n(clips_.at(indices[k]).data(), per, frames.data() + k * per);
      labels.push_back(labels_[indices[k]]);
    }
    return ClipBatch(std::move(frames), std::move(labels));
  }

 private:
  std::size_t seq_len_, h_, w_;
  std::vector<Tensor> clips_;
  std::vector<int> labels_;
};

/// Index batches for one epoch; the shuffle order is a pure function of
/// (rng seed, epoch).
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, const Rng& rng,
                                                           bool shuffle, std::size_t epoch) {
  if (n == 0) throw DataError("cannot iterate an empty manifest");
  if (batch_size == 0) throw ConfigError("batch_size", "must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    Rng r = rng.substream("epoch", epoch);
    r.shuffle(order);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  return out;
}

/// Stream of ClipBatch values covering the store once per epoch.
class BatchStream {
 public:
  BatchStream(const ClipStore& store, std::size_t batch_size, Rng rng, bool shuffle, std::size_t epoch = 0)
      : store_(&store), plan_(epoch_batches(store.size(), batch_size, rng, shuffle, epoch)) {}

  std::optional<ClipBatch> next() {
    if (pos_ == plan_.size()) return std::nullopt;
    return store_->batch(plan_[pos_++]);
  }

  const std::vector<std::vector<std::size_t>>& plan() const noexcept { return plan_; }

 private:
  const ClipStore* store_;
  std::vector<std::vector<std::size_t>> plan_;
  std::size_t pos_ = 0;
};

inline BatchStream batch_iter(const ClipStore& store, std::size_t batch_size, Rng rng, bool shuffle,
                              std::size_t epoch = 0) {
  return BatchStream(store, batch_size, rng, shuffle, epoch);
}

}  // namespace conflictnet
