// Copyright 2026 The Bolaco Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Named-tensor container ("BTNS"), little-endian:
//   magic "BTNS", u32 version = 1, u64 tensor count, then per tensor
//   u16 name length, name bytes, u8 rank, u64 dims[rank], u8 dtype, row-major payload.
// dtype 0 is f32 (weights). 1 (f64) and 2 (u8) carry exact metadata.

#ifndef BOLACO_TENSOR_BUNDLE_HPP
#define BOLACO_TENSOR_BUNDLE_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "bolaco/binary_io.hpp"
#include "bolaco/error.hpp"

namespace bolaco {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

struct Tensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  DType dtype = DType::f32;
  std::vector<double> values;  // row-major, widened to double in memory

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

struct TensorBundle {
  std::vector<Tensor> tensors;

  const Tensor* find(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const Tensor& at(std::string_view name) const {
    const Tensor* t = find(name);
    if (!t) throw Error(ErrorKind::missing_input, "tensor '" + std::string(name) + "' not found in bundle");
    return *t;
  }

  void add(Tensor t) { tensors.push_back(std::move(t)); }
};

inline Tensor matrix_tensor(std::string name, const Eigen::MatrixXd& m, DType dtype = DType::f32) {
  Tensor t{std::move(name), {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, dtype, {}};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.values.push_back(m(i, j));
  return t;
}

inline Tensor vector_tensor(std::string name, std::vector<double> v, DType dtype = DType::f32) {
  Tensor t{std::move(name), {static_cast<std::uint64_t>(v.size())}, dtype, std::move(v)};
  return t;
}

inline Tensor vector_tensor(std::string name, const Eigen::VectorXd& v, DType dtype = DType::f32) {
  return vector_tensor(std::move(name), std::vector<double>(v.data(), v.data() + v.size()), dtype);
}

inline Tensor text_tensor(std::string name, std::string_view text) {
  std::vector<double> bytes;
  bytes.reserve(text.size());
  for (unsigned char c : text) bytes.push_back(c);
  return vector_tensor(std::move(name), std::move(bytes), DType::u8);
}

inline Eigen::MatrixXd to_matrix(const Tensor& t) {
  detail::require(t.dims.size() == 2, ErrorKind::io, "tensor '" + t.name + "' is not a matrix");
  const auto r = static_cast<Eigen::Index>(t.dims[0]), c = static_cast<Eigen::Index>(t.dims[1]);
  Eigen::MatrixXd m(r, c);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = t.values[k++];
  return m;
}

inline Eigen::VectorXd to_vector(const Tensor& t) {
  detail::require(t.dims.size() == 1, ErrorKind::io, "tensor '" + t.name + "' is not a vector");
  return Eigen::Map<const Eigen::VectorXd>(t.values.data(), static_cast<Eigen::Index>(t.values.size()));
}

inline std::string to_text(const Tensor& t) {
  detail::require(t.dtype == DType::u8, ErrorKind::io, "tensor '" + t.name + "' is not text");
  std::string s;
  for (double v : t.values) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return s;
}

inline void write_bundle(std::ostream& os, const TensorBundle& b) {
  os.write("BTNS", 4);
  detail::write_le<std::uint32_t>(os, 1);
  detail::write_le<std::uint64_t>(os, b.tensors.size());
  for (const Tensor& t : b.tensors) {
    detail::require(t.name.size() <= 0xFFFF, ErrorKind::invalid_argument, "tensor name too long");
    detail::require(t.dims.size() <= 0xFF, ErrorKind::invalid_argument, "tensor rank too large");
    detail::require(t.values.size() == t.numel(), ErrorKind::dimension_mismatch,
                    "tensor '" + t.name + "' payload does not match its dims");
    detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) detail::write_le<std::uint64_t>(os, d);
    detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype));
    for (double v : t.values) {
      switch (t.dtype) {
        case DType::f32: detail::write_le<float>(os, static_cast<float>(v)); break;
        case DType::f64: detail::write_le<double>(os, v); break;
        case DType::u8: detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(v)); break;
      }
    }
  }
  if (!os) throw Error(ErrorKind::io, "failed writing tensor bundle");
}

inline TensorBundle read_bundle(std::istream& is, const std::string& path = "<stream>") {
  detail::read_magic(is, "BTNS", path);
  const auto version = detail::read_le<std::uint32_t>(is, "version");
  if (version != 1) throw Error(ErrorKind::io, path + ": unsupported bundle version " + std::to_string(version));
  const auto count = detail::read_le<std::uint64_t>(is, "tensor count");
  TensorBundle b;
  for (std::uint64_t i = 0; i < count; ++i) {
    Tensor t;
    t.name.resize(detail::read_le<std::uint16_t>(is, "name length"));
    is.read(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    if (!is) throw Error(ErrorKind::io, path + ": truncated tensor name");
    const auto rank = detail::read_le<std::uint8_t>(is, "rank");
    for (int d = 0; d < rank; ++d) t.dims.push_back(detail::read_le<std::uint64_t>(is, "dims"));
    const auto tag = detail::read_le<std::uint8_t>(is, "dtype");
    if (tag > 2) throw Error(ErrorKind::io, path + ": unknown dtype " + std::to_string(tag) + " for " + t.name);
    t.dtype = static_cast<DType>(tag);
    const std::uint64_t n = t.numel();
    detail::require(n < (std::uint64_t{1} << 40), ErrorKind::io, path + ": implausible tensor size for " + t.name);
    t.values.reserve(static_cast<std::size_t>(n));
    for (std::uint64_t k = 0; k < n; ++k) {
      switch (t.dtype) {
        case DType::f32: t.values.push_back(detail::read_le<float>(is, t.name)); break;
        case DType::f64: t.values.push_back(detail::read_le<double>(is, t.name)); break;
        case DType::u8: t.values.push_back(detail::read_le<std::uint8_t>(is, t.name)); break;
      }
    }
    b.tensors.push_back(std::move(t));
  }
  return b;
}

inline void save_bundle(const std::filesystem::path& path, const TensorBundle& b) {
  auto os = detail::open_output(path);
  write_bundle(os, b);
}

inline TensorBundle load_bundle(const std::filesystem::path& path) {
  auto is = detail::open_input(path);
  return read_bundle(is, path.string());
}

}  // namespace bolaco

#endif  // BOLACO_TENSOR_BUNDLE_HPP
