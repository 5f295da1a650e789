#include "lab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <type_traits>

#include <zlib.h>

#include "lab/error.hpp"

namespace lab::io {

namespace {

static_assert(std::numeric_limits<float>::is_iec559, "IEEE-754 floats required");

constexpr char kMagic[4] = {'L', 'A', 'L', 'B'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::make_unsigned_t<std::conditional_t<std::is_same_v<T, float>, std::uint32_t, T>>;
  U bits;
  std::memcpy(&bits, &value, sizeof bits);
  for (std::size_t i = 0; i < sizeof bits; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes, std::size_t end)
      : bytes_(bytes), end_(end) {}

  template <class T>
  T get() {
    using U = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, T>;
    need(sizeof(U));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      bits |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    T value;
    std::memcpy(&value, &bits, sizeof value);
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) fail(Errc::TruncatedFile, "checkpoint ends inside an entry");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    require(name.size() <= 0xffff, Errc::InvalidArgument, "tensor name too long: " + name);
    require(t.dims.size() <= 0xff, Errc::InvalidArgument, "tensor rank too large: " + name);
    require(element_count(t.dims) == t.data.size(), Errc::ShapeMismatch,
            "tensor payload does not match its dims: " + name);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put_le<std::uint32_t>(out, d);
    for (float v : t.data) put_le<float>(out, v);
  }
  put_le<std::uint32_t>(out, crc32_of(out.data(), out.size()));
  return out;
}

NamedTensors decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) fail(Errc::TruncatedFile, "checkpoint shorter than its magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(Errc::BadMagic, "not a LALB checkpoint");
  if (bytes.size() < 16) fail(Errc::TruncatedFile, "checkpoint header incomplete");
  const std::size_t body = bytes.size() - 4;
  Reader header(bytes, body);
  header.get_string(4);
  const auto version = header.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    fail(Errc::UnsupportedVersion, "checkpoint version " + std::to_string(version));
  Reader trailer(bytes, bytes.size());
  trailer.get_string(body);
  const auto stored = trailer.get<std::uint32_t>();
  if (stored != crc32_of(bytes.data(), body)) fail(Errc::CrcMismatch, "checkpoint CRC-32 mismatch");

  const auto count = header.get<std::uint32_t>();
  NamedTensors out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = header.get<std::uint16_t>();
    std::string name = header.get_string(len);
    Tensor t;
    const auto rank = header.get<std::uint8_t>();
    for (int r = 0; r < rank; ++r) t.dims.push_back(header.get<std::uint32_t>());
    const std::size_t n = element_count(t.dims);
    if (n > (body - header.pos()) / 4) fail(Errc::TruncatedFile, "payload of " + name + " truncated");
    t.data.resize(n);
    for (auto& v : t.data) v = header.get<float>();
    out.emplace_back(std::move(name), std::move(t));
  }
  if (header.pos() != body) fail(Errc::TruncatedFile, "trailing bytes after the last entry");
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(Errc::IoError, "cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail(Errc::IoError, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(Errc::IoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void save_checkpoint(const NamedTensors& tensors, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(tensors);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

Tensor to_tensor(const Mat<float>& m) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

Mat<float> to_matrix(const Tensor& t) {
  Eigen::Index rows = 1;
  Eigen::Index cols = 1;
  if (t.dims.size() == 1) {
    cols = t.dims[0];
  } else if (t.dims.size() >= 2) {
    cols = t.dims.back();
    for (std::size_t i = 0; i + 1 < t.dims.size(); ++i) rows *= t.dims[i];
  }
  require(static_cast<std::size_t>(rows * cols) == t.data.size(), Errc::ShapeMismatch,
          "tensor payload does not match its dims");
  return Eigen::Map<const Mat<float>>(t.data.data(), rows, cols);
}

void append_params(NamedTensors& out, const ParamMap<float>& params, const std::string& prefix) {
  for (const auto& [name, m] : params) out.emplace_back(prefix + name, to_tensor(m));
}

ParamMap<float> extract_params(const NamedTensors& in, const std::string& prefix) {
  ParamMap<float> out;
  for (const auto& [name, t] : in)
    if (name.rfind(prefix, 0) == 0) out.emplace(name.substr(prefix.size()), to_matrix(t));
  return out;
}

const Tensor* find_tensor(const NamedTensors& in, const std::string& name) {
  for (const auto& [n, t] : in)
    if (n == name) return &t;
  return nullptr;
}

}  // namespace lab::io
