#include "tta/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "tta/errors.hpp"

namespace tta {

namespace {

constexpr char kMagic[4] = {'T', 'T', 'A', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct Reader {
  const std::vector<uint8_t>& b;
  uint64_t pos = 0;

  void need(uint64_t n, const char* what) {
    if (pos + n > b.size())
      throw FormatError(std::string("checkpoint truncated while reading ") + what, pos);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(uint32_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
    pos += n;
    return s;
  }
};

struct NamedTensor {
  const std::string* name;
  const Tensor* value;
};

std::vector<NamedTensor> entries_of(const AdaptableModel& m) {
  std::vector<NamedTensor> out;
  for (const Param& p : m.params()) out.push_back({&p.name, &p.value});
  for (const BufferEntry& b : m.buffers()) out.push_back({&b.name, &b.value});
  return out;
}

}  // namespace

std::vector<uint8_t> save_checkpoint(const AdaptableModel& m) {
  const auto entries = entries_of(m);
  // Manifest size precomputed so data offsets are absolute file offsets.
  uint64_t header = 4 + 4 + 4;
  for (const auto& e : entries)
    header += 4 + e.name->size() + 4 + 4 * e.value->shape.size() + 8;

  std::vector<uint8_t> out;
  out.reserve(header);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(entries.size()));
  uint64_t offset = header;
  for (const auto& e : entries) {
    put_u32(out, static_cast<uint32_t>(e.name->size()));
    out.insert(out.end(), e.name->begin(), e.name->end());
    put_u32(out, static_cast<uint32_t>(e.value->shape.size()));
    for (int d : e.value->shape) put_u32(out, static_cast<uint32_t>(d));
    put_u64(out, offset);
    offset += 8 * e.value->numel();
  }
  if (out.size() != header)
    throw ContractError("checkpoint: manifest size accounting error");
  for (const auto& e : entries) {
    const size_t at = out.size();
    out.resize(at + 8 * e.value->numel());
    std::memcpy(out.data() + at, e.value->data.data(), 8 * e.value->numel());
  }
  return out;
}

AdaptableModel load_checkpoint(const std::vector<uint8_t>& bytes, const ModelLayout& layout) {
  Reader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic", 0);
  r.pos = 4;
  const uint32_t version = r.u32("version");
  if (version != kVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);
  const uint32_t count = r.u32("entry count");

  struct Entry {
    std::string name;
    std::vector<int> shape;
    uint64_t offset;
  };
  std::vector<Entry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    Entry e;
    const uint32_t name_len = r.u32("name length");
    e.name = r.str(name_len, "name");
    const uint32_t ndim = r.u32("rank");
    if (ndim > 8) throw FormatError("checkpoint: implausible rank", r.pos - 4);
    for (uint32_t d = 0; d < ndim; ++d) {
      const uint32_t dim = r.u32("dimension");
      if (dim == 0) throw FormatError("checkpoint: zero dimension", r.pos - 4);
      e.shape.push_back(static_cast<int>(dim));
    }
    e.offset = r.u64("data offset");
    entries.push_back(std::move(e));
  }

  AdaptableModel m = AdaptableModel::build(0, layout);
  size_t filled = 0;
  const size_t expected = m.params().size() + m.buffers().size();
  uint64_t cursor = r.pos;
  for (const Entry& e : entries) {
    if (e.offset != cursor)
      throw FormatError("checkpoint: data block for '" + e.name + "' not contiguous", cursor);
    const uint64_t n = Tensor::numel_of(e.shape);
    if (e.offset + 8 * n > bytes.size())
      throw FormatError("checkpoint: truncated data for '" + e.name + "'", e.offset);
    Tensor* dst = nullptr;
    if (const int pi = m.param_index(e.name); pi >= 0)
      dst = &m.params()[static_cast<size_t>(pi)].value;
    else if (const int bi = m.buffer_index(e.name); bi >= 0)
      dst = &m.buffers()[static_cast<size_t>(bi)].value;
    else
      throw FormatError("checkpoint: unknown entry '" + e.name + "'", e.offset);
    if (dst->shape != e.shape)
      throw FormatError("checkpoint: shape mismatch for '" + e.name + "'", e.offset);
    std::memcpy(dst->data.data(), bytes.data() + e.offset, 8 * n);
    cursor = e.offset + 8 * n;
    ++filled;
  }
  if (cursor != bytes.size())
    throw FormatError("checkpoint: trailing bytes", cursor);
  if (filled != expected)
    throw FormatError("checkpoint: missing entries (" + std::to_string(filled) + " of " +
                          std::to_string(expected) + ")",
                      bytes.size());
  m.snapshot_pristine();
  return m;
}

void save_checkpoint_file(const AdaptableModel& m, const std::string& path) {
  const auto bytes = save_checkpoint(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ContractError("cannot open checkpoint file for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ContractError("failed to write checkpoint file: " + path);
}

AdaptableModel load_checkpoint_file(const std::string& path, const ModelLayout& layout) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContractError("cannot open checkpoint file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return load_checkpoint(bytes, layout);
}

}  // namespace tta
