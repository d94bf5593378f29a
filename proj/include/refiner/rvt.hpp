#pragma once

#include <filesystem>
#include <iosfwd>

#include "refiner/tensor.hpp"

namespace refiner {

/// Malformed or unreadable tensor/image file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// RVT1 layout: "RVT1", u8 dtype (0 = f32, 1 = f64), u8 ndim, ndim x u32 LE
// extents, row-major LE payload.

template <typename T>
void write_rvt(std::ostream& out, const Tensor<T>& tensor);

template <typename T>
void write_rvt(const std::filesystem::path& path, const Tensor<T>& tensor);

/// Reads either stored dtype and converts to T.
template <typename T>
Tensor<T> read_rvt(std::istream& in);

template <typename T>
Tensor<T> read_rvt(const std::filesystem::path& path);

DType rvt_dtype(const std::filesystem::path& path);

}  // namespace refiner
