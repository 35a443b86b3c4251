#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "tta/dataset.hpp"

namespace tta {

enum class CorruptionKind {
  kGaussianNoise,
  kShotNoise,
  kImpulseNoise,
  kGaussianBlur,
  kContrast,
  kBrightness,
  kPixelate,
};

constexpr int kNumCorruptionKinds = 7;
constexpr int kNumSeverities = 5;

const char* corruption_name(CorruptionKind kind);
CorruptionKind corruption_from_name(const std::string& name);

struct CorruptionSpec {
  CorruptionKind kind;
  int severity;  // 1..5
  uint64_t seed = 0;
};

// Severity -> parameter mapping, pinned empirically against the SSIM spacing
// oracle and frozen as version 1 (data/corruption_constants_v1.txt mirrors
// these values).
struct CorruptionTable {
  int version = 1;
  std::array<std::array<double, kNumSeverities>, kNumCorruptionKinds> values{};

  double at(CorruptionKind kind, int severity) const;
};

const CorruptionTable& default_corruption_table();

// Human-readable key=value serialization of a table.
std::string corruption_table_text(const CorruptionTable& t);
void write_corruption_table(const CorruptionTable& t, const std::string& path);
CorruptionTable read_corruption_table(const std::string& path);

// Deterministic per-(image,spec) corruption; labels and shape preserved,
// pixels clamped to [0,1].
Dataset apply_corruption(const Dataset& ds, const CorruptionSpec& spec,
                         const CorruptionTable& table = default_corruption_table());

struct SubsetPlan {
  double class_fraction = 1.0;   // in (0,1]
  double sample_fraction = 1.0;  // in (0,1]
  uint64_t seed = 0;
};

// Adaptation subset: ceil(class_fraction * n_cl) seeded-random classes, then
// ceil(sample_fraction * count) samples per kept class. The evaluation set is
// the untouched input dataset.
Dataset subset_split(const Dataset& ds, const SubsetPlan& plan);

}  // namespace tta
