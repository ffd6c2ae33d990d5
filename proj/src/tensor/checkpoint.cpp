#include "fsra/tensor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace fsra {

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
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  float f32() { return std::bit_cast<float>(u32()); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated file");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& entries) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  for (const auto& e : entries) {
    std::size_t count = 1;
    for (auto x : e.extents) count *= x;
    if (count != e.values.size()) {
      throw std::invalid_argument("checkpoint: entry '" + e.name + "' extents do not match values");
    }
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, static_cast<std::uint32_t>(e.extents.size()));
    for (auto x : e.extents) put_u32(out, x);
    for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.str(4) != std::string(kCheckpointMagic, 4)) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  std::vector<NamedArray> entries;
  while (!in.done()) {
    NamedArray e;
    e.name = in.str(in.u32());
    const auto rank = in.u32();
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      e.extents.push_back(in.u32());
      count *= e.extents.back();
    }
    e.values.resize(count);
    for (auto& v : e.values) v = in.f32();
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& entries) {
  const auto bytes = encode_checkpoint(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<float> pack_u64(std::uint64_t value) {
  std::vector<float> limbs(4);
  for (int i = 0; i < 4; ++i) limbs[i] = static_cast<float>((value >> (16 * i)) & 0xFFFFu);
  return limbs;
}

std::uint64_t unpack_u64(const std::vector<float>& limbs) {
  if (limbs.size() != 4) throw std::runtime_error("checkpoint: malformed packed integer");
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint64_t>(limbs[i]) << (16 * i);
  return v;
}

}  // namespace fsra
