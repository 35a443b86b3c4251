#include "tta/corruptions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tta/errors.hpp"
#include "tta/rng.hpp"

namespace tta {

const char* corruption_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kGaussianNoise: return "gaussian-noise";
    case CorruptionKind::kShotNoise: return "shot-noise";
    case CorruptionKind::kImpulseNoise: return "impulse-noise";
    case CorruptionKind::kGaussianBlur: return "gaussian-blur";
    case CorruptionKind::kContrast: return "contrast";
    case CorruptionKind::kBrightness: return "brightness";
    case CorruptionKind::kPixelate: return "pixelate";
  }
  throw ContractError("corruption_name: unknown kind");
}

CorruptionKind corruption_from_name(const std::string& name) {
  for (int k = 0; k < kNumCorruptionKinds; ++k) {
    const auto kind = static_cast<CorruptionKind>(k);
    if (name == corruption_name(kind)) return kind;
  }
  throw ContractError("unknown corruption kind: " + name);
}

double CorruptionTable::at(CorruptionKind kind, int severity) const {
  if (severity < 1 || severity > kNumSeverities)
    throw ContractError("corruption severity must be in [1,5], got " +
                        std::to_string(severity));
  return values[static_cast<size_t>(kind)][static_cast<size_t>(severity - 1)];
}

const CorruptionTable& default_corruption_table() {
  // Pinned by the SSIM spacing calibration (tools/calibrate_corruptions);
  // see data/corruption_constants_v1.txt.
  static const CorruptionTable table = [] {
    CorruptionTable t;
    t.version = 1;
    t.values[static_cast<size_t>(CorruptionKind::kGaussianNoise)] = {0.04, 0.08, 0.12, 0.18, 0.26};
    t.values[static_cast<size_t>(CorruptionKind::kShotNoise)] = {60.0, 25.0, 12.0, 5.0, 3.0};
    t.values[static_cast<size_t>(CorruptionKind::kImpulseNoise)] = {0.02, 0.06, 0.12, 0.20, 0.30};
    t.values[static_cast<size_t>(CorruptionKind::kGaussianBlur)] = {0.4, 0.7, 1.0, 1.5, 2.2};
    t.values[static_cast<size_t>(CorruptionKind::kContrast)] = {0.75, 0.50, 0.40, 0.30, 0.15};
    t.values[static_cast<size_t>(CorruptionKind::kBrightness)] = {0.08, 0.16, 0.25, 0.35, 0.50};
    t.values[static_cast<size_t>(CorruptionKind::kPixelate)] = {2, 3, 4, 6, 8};
    return t;
  }();
  return table;
}

std::string corruption_table_text(const CorruptionTable& t) {
  std::ostringstream out;
  out << "# corruption severity constants (kind.s<severity> = parameter)\n";
  out << "version = " << t.version << "\n";
  for (int k = 0; k < kNumCorruptionKinds; ++k)
    for (int s = 1; s <= kNumSeverities; ++s) {
      out << corruption_name(static_cast<CorruptionKind>(k)) << ".s" << s << " = ";
      char buf[32];
      snprintf(buf, sizeof(buf), "%.17g", t.values[static_cast<size_t>(k)][static_cast<size_t>(s - 1)]);
      out << buf << "\n";
    }
  return out.str();
}

void write_corruption_table(const CorruptionTable& t, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ContractError("cannot write corruption constants: " + path);
  f << corruption_table_text(t);
}

CorruptionTable read_corruption_table(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ContractError("cannot open corruption constants: " + path);
  CorruptionTable t;
  t.version = 0;
  std::array<std::array<bool, kNumSeverities>, kNumCorruptionKinds> seen{};
  std::string line;
  uint64_t offset = 0;
  while (std::getline(f, line)) {
    const uint64_t line_offset = offset;
    offset += line.size() + 1;
    std::string s = line;
    if (const auto h = s.find('#'); h != std::string::npos) s = s.substr(0, h);
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      if (s.find_first_not_of(" \t\r") != std::string::npos)
        throw FormatError("constants file: malformed line '" + line + "'", line_offset);
      continue;
    }
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t\r");
      const auto e = v.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key == "version") {
      t.version = std::stoi(value);
      continue;
    }
    const auto dot = key.rfind(".s");
    if (dot == std::string::npos)
      throw FormatError("constants file: bad key '" + key + "'", line_offset);
    const CorruptionKind kind = corruption_from_name(key.substr(0, dot));
    const int sev = std::stoi(key.substr(dot + 2));
    if (sev < 1 || sev > kNumSeverities)
      throw FormatError("constants file: bad severity in '" + key + "'", line_offset);
    t.values[static_cast<size_t>(kind)][static_cast<size_t>(sev - 1)] = std::stod(value);
    seen[static_cast<size_t>(kind)][static_cast<size_t>(sev - 1)] = true;
  }
  if (t.version != 1) throw FormatError("constants file: unsupported version", 0);
  for (int k = 0; k < kNumCorruptionKinds; ++k)
    for (int s = 0; s < kNumSeverities; ++s)
      if (!seen[static_cast<size_t>(k)][static_cast<size_t>(s)])
        throw FormatError(std::string("constants file: missing ") +
                              corruption_name(static_cast<CorruptionKind>(k)) + ".s" +
                              std::to_string(s + 1),
                          offset);
  return t;
}

// ---------------------------------------------------------------------------

namespace {

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

void gaussian_blur_image(const double* in, double* out, int h, int w, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;
  // mirror at the half-sample boundary: -1 -> 0, w -> w-1
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - 1 - i;
    return i;
  };
  std::vector<double> tmp(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i)
        s += kernel[static_cast<size_t>(i + radius)] * in[y * w + reflect(x + i, w)];
      tmp[static_cast<size_t>(y) * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i)
        s += kernel[static_cast<size_t>(i + radius)] * tmp[static_cast<size_t>(reflect(y + i, h)) * w + x];
      out[y * w + x] = clamp01(s);
    }
}

void pixelate_image(const double* in, double* out, int h, int w, int block) {
  for (int by = 0; by < h; by += block)
    for (int bx = 0; bx < w; bx += block) {
      const int ye = std::min(by + block, h);
      const int xe = std::min(bx + block, w);
      double s = 0.0;
      for (int y = by; y < ye; ++y)
        for (int x = bx; x < xe; ++x) s += in[y * w + x];
      const double avg = s / ((ye - by) * (xe - bx));
      for (int y = by; y < ye; ++y)
        for (int x = bx; x < xe; ++x) out[y * w + x] = avg;
    }
}

}  // namespace

Dataset apply_corruption(const Dataset& ds, const CorruptionSpec& spec,
                         const CorruptionTable& table) {
  const double param = table.at(spec.kind, spec.severity);
  Dataset out;
  out.split = ds.split;
  out.labels = ds.labels;
  out.provenance = ds.provenance + "+" + corruption_name(spec.kind) + "(s" +
                   std::to_string(spec.severity) + ")";
  out.images = Tensor(ds.images.shape);

  const int n = ds.n();
  const int h = ds.images.dim(2), w = ds.images.dim(3);
  const size_t img = static_cast<size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const double* in = ds.images.data.data() + static_cast<size_t>(i) * img;
    double* dst = out.images.data.data() + static_cast<size_t>(i) * img;
    Rng rng(Rng::mix(spec.seed, static_cast<uint64_t>(i)));  // per-image stream
    switch (spec.kind) {
      case CorruptionKind::kGaussianNoise:
        for (size_t p = 0; p < img; ++p) dst[p] = clamp01(in[p] + param * rng.normal());
        break;
      case CorruptionKind::kShotNoise:
        for (size_t p = 0; p < img; ++p)
          dst[p] = clamp01(static_cast<double>(rng.poisson(in[p] * param)) / param);
        break;
      case CorruptionKind::kImpulseNoise:
        for (size_t p = 0; p < img; ++p) {
          const double u = rng.uniform();
          dst[p] = u < 0.5 * param ? 0.0 : (u < param ? 1.0 : in[p]);
        }
        break;
      case CorruptionKind::kGaussianBlur:
        gaussian_blur_image(in, dst, h, w, param);
        break;
      case CorruptionKind::kContrast:
        for (size_t p = 0; p < img; ++p) dst[p] = clamp01(0.5 + param * (in[p] - 0.5));
        break;
      case CorruptionKind::kBrightness:
        for (size_t p = 0; p < img; ++p) dst[p] = clamp01(in[p] + param);
        break;
      case CorruptionKind::kPixelate:
        pixelate_image(in, dst, h, w, static_cast<int>(param));
        break;
    }
  }
  return out;
}

Dataset subset_split(const Dataset& ds, const SubsetPlan& plan) {
  if (!(plan.class_fraction > 0.0) || plan.class_fraction > 1.0 ||
      !(plan.sample_fraction > 0.0) || plan.sample_fraction > 1.0)
    throw ContractError("subset_split: fractions must be in (0,1]");
  const int n_cl = ds.n_classes();
  if (n_cl < 1 || ds.n() < 1) throw ContractError("subset_split: empty dataset");

  // Class subset first, then per-class sample subsampling.
  std::vector<int> classes(static_cast<size_t>(n_cl));
  for (int c = 0; c < n_cl; ++c) classes[static_cast<size_t>(c)] = c;
  Rng class_rng(Rng::mix(plan.seed, 0xC1A5ULL));
  class_rng.shuffle(classes);
  const int keep_classes = static_cast<int>(std::ceil(plan.class_fraction * n_cl));
  classes.resize(static_cast<size_t>(keep_classes));
  std::vector<bool> keep(static_cast<size_t>(n_cl), false);
  for (int c : classes) keep[static_cast<size_t>(c)] = true;

  std::vector<int> chosen;
  for (int c = 0; c < n_cl; ++c) {
    if (!keep[static_cast<size_t>(c)]) continue;
    std::vector<int> members;
    for (int i = 0; i < ds.n(); ++i)
      if (ds.labels[static_cast<size_t>(i)] == c) members.push_back(i);
    if (members.empty()) continue;
    Rng sample_rng(Rng::mix(plan.seed, 0x5A3BULL + static_cast<uint64_t>(c)));
    sample_rng.shuffle(members);
    const int m = static_cast<int>(std::ceil(plan.sample_fraction * members.size()));
    members.resize(static_cast<size_t>(m));
    chosen.insert(chosen.end(), members.begin(), members.end());
  }
  if (chosen.empty()) throw ContractError("subset_split: empty adaptation subset");
  std::sort(chosen.begin(), chosen.end());

  Dataset out;
  out.split = ds.split;
  out.provenance = ds.provenance + "+subset(" + std::to_string(plan.class_fraction) + "," +
                   std::to_string(plan.sample_fraction) + ")";
  out.images = ds.gather_images(chosen.data(), static_cast<int>(chosen.size()));
  out.labels = ds.gather_labels(chosen.data(), static_cast<int>(chosen.size()));
  return out;
}

}  // namespace tta
