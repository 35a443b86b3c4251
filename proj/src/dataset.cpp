#include "tta/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "tta/errors.hpp"
#include "tta/rng.hpp"

namespace tta {

int Dataset::n_classes() const {
  int m = -1;
  for (int l : labels) m = std::max(m, l);
  return m + 1;
}

Tensor Dataset::gather_images(const int* idx, int count) const {
  const size_t img = images.numel() / static_cast<size_t>(n());
  Tensor out({count, images.dim(1), images.dim(2), images.dim(3)});
  for (int i = 0; i < count; ++i)
    std::memcpy(out.data.data() + static_cast<size_t>(i) * img,
                images.data.data() + static_cast<size_t>(idx[i]) * img, 8 * img);
  return out;
}

std::vector<int> Dataset::gather_labels(const int* idx, int count) const {
  std::vector<int> out(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) out[static_cast<size_t>(i)] = labels[static_cast<size_t>(idx[i])];
  return out;
}

namespace {

// Membership test of a glyph class at centered coordinates (u,v).
bool glyph_inside(int cls, double u, double v) {
  const double r = std::sqrt(u * u + v * v);
  switch (cls) {
    case 0:  // ring
      return r >= 6.5 && r <= 9.5;
    case 1:  // disk
      return r <= 6.0;
    case 2:  // horizontal bar
      return std::abs(v) <= 2.2 && std::abs(u) <= 9.0;
    case 3:  // vertical bar
      return std::abs(u) <= 2.2 && std::abs(v) <= 9.0;
    case 4:  // plus
      return (std::abs(u) <= 2.0 && std::abs(v) <= 8.5) ||
             (std::abs(v) <= 2.0 && std::abs(u) <= 8.5);
    case 5: {  // X: plus rotated by 45 degrees
      const double s = 1.0 / std::sqrt(2.0);
      const double u2 = (u + v) * s;
      const double v2 = (v - u) * s;
      return (std::abs(u2) <= 2.0 && std::abs(v2) <= 8.5) ||
             (std::abs(v2) <= 2.0 && std::abs(u2) <= 8.5);
    }
    case 6: {  // square outline
      const double m = std::max(std::abs(u), std::abs(v));
      return m >= 6.0 && m <= 9.0;
    }
    case 7:  // filled triangle, apex up
      return v >= -8.0 && v <= 7.0 && std::abs(u) <= 0.55 * (v + 8.0);
    case 8: {  // diamond outline
      const double m = std::abs(u) + std::abs(v);
      return m >= 7.0 && m <= 10.5;
    }
    case 9: {  // two dots
      const double du = std::abs(u) - 5.0;
      return std::sqrt(du * du + v * v) <= 3.0;
    }
    default:
      throw ContractError("glyph_inside: unknown class");
  }
}

}  // namespace

Dataset synth_dataset(uint64_t seed, int n_per_class, Dataset::Split split) {
  if (n_per_class < 1) throw ContractError("synth_dataset: n_per_class must be >= 1");
  constexpr int kClasses = 10;
  constexpr int kSize = 28;
  constexpr int kSub = 3;  // 3x3 supersampling per pixel
  const int n = n_per_class * kClasses;
  const uint64_t base = Rng::mix(seed, split == Dataset::Split::kTrain ? 1 : 2);

  Dataset ds;
  ds.split = split;
  ds.provenance = "synthetic(seed=" + std::to_string(seed) + ")";
  ds.images = Tensor({n, 1, kSize, kSize});
  ds.labels.resize(static_cast<size_t>(n));

  for (int i = 0; i < n; ++i) {
    const int cls = i % kClasses;  // any prefix stays class-balanced
    ds.labels[static_cast<size_t>(i)] = cls;
    Rng rng(Rng::mix(base, static_cast<uint64_t>(i)));
    const double dx = rng.uniform(-2.0, 2.0);
    const double dy = rng.uniform(-2.0, 2.0);
    const double theta = rng.uniform(-15.0, 15.0) * M_PI / 180.0;
    const double stroke = rng.uniform(0.6, 1.0);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double cx = 13.5 + dx, cy = 13.5 + dy;

    double* img = ds.images.data.data() + static_cast<size_t>(i) * kSize * kSize;
    for (int py = 0; py < kSize; ++py)
      for (int px = 0; px < kSize; ++px) {
        int hit = 0;
        for (int sy = 0; sy < kSub; ++sy)
          for (int sx = 0; sx < kSub; ++sx) {
            const double x = px + (sx + 0.5) / kSub;
            const double y = py + (sy + 0.5) / kSub;
            const double u = ct * (x - cx) + st * (y - cy);
            const double v = -st * (x - cx) + ct * (y - cy);
            if (glyph_inside(cls, u, v)) ++hit;
          }
        img[py * kSize + px] = stroke * (static_cast<double>(hit) / (kSub * kSub));
      }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

struct IdxReader {
  std::vector<uint8_t> bytes;
  uint64_t pos = 0;
  std::string path;

  uint32_t u32be(const char* what) {
    if (pos + 4 > bytes.size())
      throw FormatError(path + ": truncated while reading " + what, pos);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes[pos + i];
    pos += 4;
    return v;
  }
};

IdxReader read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContractError("cannot open IDX file: " + path);
  IdxReader r;
  r.path = path;
  r.bytes.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return r;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  IdxReader imgs = read_file(images_path);
  const uint32_t img_magic = imgs.u32be("magic");
  if (img_magic != 0x00000803u)
    throw FormatError(images_path + ": bad image magic 0x" + std::to_string(img_magic), 0);
  const uint32_t count = imgs.u32be("image count");
  const uint32_t rows = imgs.u32be("rows");
  const uint32_t cols = imgs.u32be("cols");
  const uint64_t pixels = static_cast<uint64_t>(count) * rows * cols;
  if (imgs.pos + pixels > imgs.bytes.size())
    throw FormatError(images_path + ": truncated pixel data", imgs.bytes.size());
  if (imgs.pos + pixels < imgs.bytes.size())
    throw FormatError(images_path + ": trailing bytes after pixel data", imgs.pos + pixels);

  IdxReader labs = read_file(labels_path);
  const uint32_t lab_magic = labs.u32be("magic");
  if (lab_magic != 0x00000801u)
    throw FormatError(labels_path + ": bad label magic 0x" + std::to_string(lab_magic), 0);
  const uint32_t lab_count = labs.u32be("label count");
  if (lab_count != count)
    throw FormatError(labels_path + ": label count " + std::to_string(lab_count) +
                          " does not match image count " + std::to_string(count),
                      4);
  if (labs.pos + lab_count > labs.bytes.size())
    throw FormatError(labels_path + ": truncated label data", labs.bytes.size());
  if (labs.pos + lab_count < labs.bytes.size())
    throw FormatError(labels_path + ": trailing bytes after label data", labs.pos + lab_count);

  Dataset ds;
  ds.split = Dataset::Split::kTest;
  ds.provenance = "idx-file(" + images_path + ")";
  ds.images = Tensor({static_cast<int>(count), 1, static_cast<int>(rows), static_cast<int>(cols)});
  for (uint64_t i = 0; i < pixels; ++i)
    ds.images.data[i] = static_cast<double>(imgs.bytes[imgs.pos + i]) / 255.0;
  ds.labels.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint8_t l = labs.bytes[labs.pos + i];
    ds.labels[i] = l;
  }
  return ds;
}

}  // namespace tta
