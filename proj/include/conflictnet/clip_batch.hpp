#pragma once

#include <vector>

#include "conflictnet/tensor.hpp"

namespace conflictnet {

/// Frames B×T×H×W×C with values in [0,1] plus one label in {0,1} per clip.
class ClipBatch {
 public:
  ClipBatch(Tensor frames, std::vector<int> labels) : frames_(std::move(frames)), labels_(std::move(labels)) {
    if (frames_.rank() != 5) throw DimensionError("clip batch frames must be B×T×H×W×C, got " + to_string(frames_.shape()));
    if (labels_.size() != frames_.dim(0))
      throw DimensionError("clip batch has " + std::to_string(frames_.dim(0)) + " clips but " +
                           std::to_string(labels_.size()) + " labels");
    for (int l : labels_)
      if (l != 0 && l != 1) throw DataError("clip label must be 0 or 1, got " + std::to_string(l));
    for (double v : frames_.values())
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("clip frame value outside [0,1]");
  }

  const Tensor& frames() const noexcept { return frames_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }

 private:
  Tensor frames_;
  std::vector<int> labels_;
};

}  // namespace conflictnet
