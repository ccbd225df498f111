#include "kpt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "kpt/errors.hpp"

namespace kpt {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  out.push_back(kCheckpointVersion);
  for (const auto& e : entries) {
    std::size_t count = 1;
    for (auto d : e.dims) count *= d;
    if (count != e.values.size()) throw ContractError("checkpoint entry '" + e.name + "' has inconsistent dims");
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put_u32(out, d);
    for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kCheckpointMagic, 4)) throw IoError("not a checkpoint: bad magic");
  const auto version = r.u8();
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  std::vector<CheckpointEntry> entries;
  while (!r.done()) {
    CheckpointEntry e;
    e.name = r.str(r.u32());
    const auto rank = r.u32();
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      e.dims.push_back(r.u32());
      count *= e.dims.back();
    }
    e.values.reserve(count);
    for (std::size_t i = 0; i < count; ++i) e.values.push_back(std::bit_cast<float>(r.u32()));
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  const auto bytes = encode_checkpoint(entries);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path + "'");
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<CheckpointEntry> snapshot(const ParamStore& store) {
  std::vector<CheckpointEntry> out;
  for (const auto& [name, t] : store.entries()) {
    CheckpointEntry e;
    e.name = name;
    for (auto d : t.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
    e.values.assign(t.data().begin(), t.data().end());
    out.push_back(std::move(e));
  }
  return out;
}

void restore(ParamStore& store, const std::vector<CheckpointEntry>& entries) {
  for (auto [name, t] : store.entries()) {
    const CheckpointEntry* found = nullptr;
    for (const auto& e : entries)
      if (e.name == name) found = &e;
    if (!found) throw InputError("checkpoint lacks parameter '" + name + "'");
    Shape shape(found->dims.begin(), found->dims.end());
    if (shape != t.shape()) {
      throw InputError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                       shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(found->values[i]);
  }
}

}  // namespace kpt
