#include "dmsa/io/weights.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dmsa::io {

const Shape& NamedTensor::shape() const {
  return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, value);
}

const NamedTensor* WeightFile::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

template <typename Scalar>
void WeightFile::add(std::string name, const Tensor<Scalar>& t) {
  if (find(name) != nullptr) throw FormatError("weights: duplicate tensor name '" + name + "'");
  if (name.size() > 0xFFFF) throw FormatError("weights: tensor name longer than 65535 bytes");
  tensors.push_back({std::move(name), t});
}

template void WeightFile::add(std::string, const TensorF&);
template void WeightFile::add(std::string, const TensorD&);

namespace {

constexpr char kMagic[4] = {'D', 'M', 'S', 'W'};

class Writer {
 public:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("weights: truncated file at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

template <typename Scalar>
void put_payload(Writer& w, const Tensor<Scalar>& t) {
  using Bits = std::conditional_t<sizeof(Scalar) == 4, std::uint32_t, std::uint64_t>;
  for (Scalar v : t.values()) w.put(std::bit_cast<Bits>(v));
}

template <typename Scalar>
Tensor<Scalar> get_payload(Reader& r, Shape shape) {
  using Bits = std::conditional_t<sizeof(Scalar) == 4, std::uint32_t, std::uint64_t>;
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = std::bit_cast<Scalar>(r.get<Bits>());
  return t;
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::vector<std::uint8_t> encode(const WeightFile& file) {
  Writer w;
  w.raw(kMagic, 4);
  w.put(kWeightFormatVersion);
  w.put(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& nt : file.tensors) {
    w.put(static_cast<std::uint16_t>(nt.name.size()));
    w.raw(nt.name.data(), nt.name.size());
    w.put(static_cast<std::uint8_t>(nt.is_double() ? 1 : 0));
    const Shape& s = nt.shape();
    w.put(static_cast<std::uint8_t>(s.rank()));
    for (Index d : s.dims()) {
      if (d > 0xFFFFFFFFLL) throw FormatError("weights: extent of '" + nt.name + "' exceeds u32");
      w.put(static_cast<std::uint32_t>(d));
    }
    std::visit([&](const auto& t) { put_payload(w, t); }, nt.value);
  }
  w.put(crc_of(w.bytes));
  return std::move(w.bytes);
}

WeightFile decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 14) throw FormatError("weights: file too short (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("weights: bad magic, expected DMSW");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  const auto stored = tail.get<std::uint32_t>();
  if (stored != crc_of(body)) throw FormatError("weights: CRC mismatch");

  Reader r(body.subspan(4));
  const auto version = r.get<std::uint16_t>();
  if (version != kWeightFormatVersion) throw FormatError("weights: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  WeightFile f;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    const auto name_bytes = r.take(len);
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    if (rank < 1 || rank > Shape::kMaxRank) throw FormatError("weights: '" + name + "' has invalid rank");
    std::vector<Index> dims;
    for (int d = 0; d < rank; ++d) dims.push_back(r.get<std::uint32_t>());
    Shape shape;
    try {
      shape = Shape(dims);
    } catch (const Error& e) {
      throw FormatError("weights: '" + name + "': " + e.what());
    }
    if (dtype == 0) {
      f.add(std::move(name), get_payload<float>(r, std::move(shape)));
    } else if (dtype == 1) {
      f.add(std::move(name), get_payload<double>(r, std::move(shape)));
    } else {
      throw FormatError("weights: '" + name + "' has unknown dtype tag " + std::to_string(dtype));
    }
  }
  if (r.remaining() != 0) throw FormatError("weights: trailing bytes after last record");
  return f;
}

void save_weights(const std::filesystem::path& path, const WeightFile& file) {
  const auto bytes = encode(file);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

WeightFile load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "' for reading");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace dmsa::io
