#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tta/tensor.hpp"

namespace tta {

struct Dataset {
  enum class Split { kTrain, kTest };

  Tensor images;  // (N,1,H,W), pixels in [0,1]
  std::vector<int> labels;
  Split split = Split::kTest;
  std::string provenance;

  int n() const { return images.dim(0); }
  int n_classes() const;

  Tensor gather_images(const int* idx, int count) const;
  std::vector<int> gather_labels(const int* idx, int count) const;
};

// Procedurally rendered 10-class 28x28 glyph corpus: per-image position
// jitter (+-2 px), rotation (+-15 deg) and stroke intensity, deterministic
// in (seed, split). Any prefix is class-balanced.
Dataset synth_dataset(uint64_t seed, int n_per_class,
                      Dataset::Split split = Dataset::Split::kTest);

// Bit-exact IDX ingestion (big-endian magic 0x803/0x801, unsigned bytes
// scaled to [0,1]). Malformed input raises FormatError with a byte offset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace tta
