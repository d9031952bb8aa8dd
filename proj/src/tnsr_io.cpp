#include "avword/tnsr_io.hpp"

#include <cstring>
#include <fstream>

namespace avword {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};

std::size_t dtype_size(TnsrDtype d) {
  switch (d) {
    case TnsrDtype::f32: return 4;
    case TnsrDtype::f64: return 8;
    case TnsrDtype::u8: return 1;
  }
  AVW_FAIL("unknown TNSR dtype byte " << static_cast<int>(d));
}

[[noreturn]] void malformed(const std::string& path, std::size_t offset,
                            const std::string& why) {
  AVW_FAIL("malformed TNSR container " << path << " at byte offset " << offset
                                       << ": " << why);
}

}  // namespace

template <typename T>
Tensor<T> TnsrBlob::as() const {
  Tensor<T> out(shape);
  const std::size_t esz = dtype_size(dtype);
  const std::size_t n = out.numel();
  AVW_CHECK(payload.size() == esz * n, "TNSR payload size mismatch");
  const std::uint8_t* p = payload.data();
  for (std::size_t i = 0; i < n; ++i, p += esz) {
    switch (dtype) {
      case TnsrDtype::f32: {
        std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
        float v;
        std::memcpy(&v, &bits, 4);
        out[i] = static_cast<T>(v);
        break;
      }
      case TnsrDtype::f64: {
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b) bits = (bits << 8) | p[b];
        double v;
        std::memcpy(&v, &bits, 8);
        out[i] = static_cast<T>(v);
        break;
      }
      case TnsrDtype::u8:
        out[i] = static_cast<T>(p[0]);
        break;
    }
  }
  return out;
}

template Tensor<float> TnsrBlob::as<float>() const;
template Tensor<double> TnsrBlob::as<double>() const;
template Tensor<std::uint8_t> TnsrBlob::as<std::uint8_t>() const;

TnsrBlob read_tnsr(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  AVW_CHECK(in.good(), "cannot open " << path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());

  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    malformed(path, 0, "missing TNSR magic");
  if (bytes.size() < 5) malformed(path, 4, "truncated before version byte");
  if (bytes[4] != 0x01)
    malformed(path, 4, "unsupported version " + std::to_string(bytes[4]));
  if (bytes.size() < 6) malformed(path, 5, "truncated before dtype byte");
  if (bytes[5] > 2)
    malformed(path, 5, "unknown dtype byte " + std::to_string(bytes[5]));
  TnsrBlob blob;
  blob.dtype = static_cast<TnsrDtype>(bytes[5]);
  if (bytes.size() < 7) malformed(path, 6, "truncated before ndim byte");
  const std::size_t ndim = bytes[6];
  std::size_t off = 7;
  blob.shape.resize(ndim);
  for (std::size_t d = 0; d < ndim; ++d, off += 8) {
    if (bytes.size() < off + 8) malformed(path, off, "truncated extent");
    std::uint64_t e = 0;
    for (int b = 7; b >= 0; --b) e = (e << 8) | bytes[off + static_cast<std::size_t>(b)];
    if (e == 0) malformed(path, off, "zero extent");
    blob.shape[d] = static_cast<std::size_t>(e);
  }
  const std::size_t want = shape_numel(blob.shape) * dtype_size(blob.dtype);
  if (bytes.size() - off != want)
    malformed(path, off,
              "payload size " + std::to_string(bytes.size() - off) +
                  " does not match header (expected " + std::to_string(want) + ")");
  blob.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.end());
  return blob;
}

void write_tnsr(const std::string& path, const TnsrBlob& blob) {
  AVW_CHECK(blob.shape.size() <= 255, "TNSR supports at most 255 dims");
  AVW_CHECK(blob.payload.size() == shape_numel(blob.shape) * dtype_size(blob.dtype),
            "TNSR payload/shape mismatch while writing " << path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  AVW_CHECK(out.good(), "cannot open " << path << " for writing");
  out.write(kMagic, 4);
  out.put(0x01);
  out.put(static_cast<char>(blob.dtype));
  out.put(static_cast<char>(blob.shape.size()));
  for (std::size_t e : blob.shape) {
    std::uint64_t v = e;
    for (int b = 0; b < 8; ++b) {
      out.put(static_cast<char>(v & 0xff));
      v >>= 8;
    }
  }
  out.write(reinterpret_cast<const char*>(blob.payload.data()),
            static_cast<std::streamsize>(blob.payload.size()));
  AVW_CHECK(out.good(), "short write to " << path);
}

namespace {

template <typename T, TnsrDtype D>
TnsrBlob pack(const Tensor<T>& t) {
  TnsrBlob blob;
  blob.dtype = D;
  blob.shape = t.shape();
  blob.payload.resize(t.numel() * dtype_size(D));
  std::uint8_t* p = blob.payload.data();
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if constexpr (D == TnsrDtype::f32) {
      std::uint32_t bits;
      float v = static_cast<float>(t[i]);
      std::memcpy(&bits, &v, 4);
      for (int b = 0; b < 4; ++b) *p++ = static_cast<std::uint8_t>(bits >> (8 * b));
    } else if constexpr (D == TnsrDtype::f64) {
      std::uint64_t bits;
      double v = static_cast<double>(t[i]);
      std::memcpy(&bits, &v, 8);
      for (int b = 0; b < 8; ++b) *p++ = static_cast<std::uint8_t>(bits >> (8 * b));
    } else {
      *p++ = static_cast<std::uint8_t>(t[i]);
    }
  }
  return blob;
}

}  // namespace

void write_tnsr(const std::string& path, const Tensor<float>& t) {
  write_tnsr(path, pack<float, TnsrDtype::f32>(t));
}
void write_tnsr(const std::string& path, const Tensor<double>& t) {
  write_tnsr(path, pack<double, TnsrDtype::f64>(t));
}
void write_tnsr(const std::string& path, const Tensor<std::uint8_t>& t) {
  write_tnsr(path, pack<std::uint8_t, TnsrDtype::u8>(t));
}

}  // namespace avword
