// TNSR container: the repo-wide tensor file format.
//
// Layout: magic "TNSR", version byte 0x01, dtype byte (0=f32, 1=f64, 2=u8),
// ndim byte, ndim little-endian u64 extents, row-major little-endian payload.
#pragma once

#include <cstdint>
#include <string>

#include "avword/tensor.hpp"

namespace avword {

enum class TnsrDtype : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

struct TnsrBlob {
  TnsrDtype dtype;
  Shape shape;
  std::vector<std::uint8_t> payload;  // raw little-endian element bytes

  template <typename T>
  Tensor<T> as() const;
};

TnsrBlob read_tnsr(const std::string& path);
void write_tnsr(const std::string& path, const TnsrBlob& blob);

void write_tnsr(const std::string& path, const Tensor<float>& t);
void write_tnsr(const std::string& path, const Tensor<double>& t);
void write_tnsr(const std::string& path, const Tensor<std::uint8_t>& t);

}  // namespace avword
