#include "refiner/rvt.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace refiner {

namespace {

constexpr std::array<char, 4> kMagic{'R', 'V', 'T', '1'};

template <typename U>
void put_le(std::ostream& out, U value) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
  const auto bits = std::bit_cast<Bits>(value);
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw FormatError("RVT1: truncated stream");
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(bytes[i]) << (8 * i);
  return std::bit_cast<U>(bits);
}

std::uint8_t get_u8(std::istream& in) {
  char c = 0;
  in.read(&c, 1);
  if (!in) throw FormatError("RVT1: truncated header");
  return static_cast<std::uint8_t>(c);
}

}  // namespace

template <typename T>
void write_rvt(std::ostream& out, const Tensor<T>& tensor) {
  out.write(kMagic.data(), kMagic.size());
  out.put(static_cast<char>(dtype_of<T>()));
  if (tensor.rank() > 255) throw FormatError("RVT1: rank too large");
  out.put(static_cast<char>(tensor.rank()));
  for (std::size_t e : tensor.shape()) {
    if (e > 0xffffffffu) throw FormatError("RVT1: extent exceeds u32");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  }
  for (T v : tensor.data()) put_le<T>(out, v);
  if (!out) throw FormatError("RVT1: write failed");
}

template <typename T>
void write_rvt(const std::filesystem::path& path, const Tensor<T>& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_rvt(out, tensor);
}

template <typename T>
Tensor<T> read_rvt(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("RVT1: bad magic");
  const std::uint8_t dtype = get_u8(in);
  if (dtype > 1) throw FormatError("RVT1: unknown dtype " + std::to_string(dtype));
  const std::uint8_t ndim = get_u8(in);
  Shape shape(ndim);
  for (auto& e : shape) {
    e = get_le<std::uint32_t>(in);
    if (e == 0) throw FormatError("RVT1: zero extent");
  }
  std::vector<T> data(numel(shape));
  for (auto& v : data) {
    v = dtype == 0 ? static_cast<T>(get_le<float>(in)) : static_cast<T>(get_le<double>(in));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> read_rvt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_rvt<T>(in);
}

DType rvt_dtype(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("RVT1: bad magic in " + path.string());
  const std::uint8_t dtype = get_u8(in);
  if (dtype > 1) throw FormatError("RVT1: unknown dtype");
  return static_cast<DType>(dtype);
}

template void write_rvt<float>(std::ostream&, const Tensor<float>&);
template void write_rvt<double>(std::ostream&, const Tensor<double>&);
template void write_rvt<float>(const std::filesystem::path&, const Tensor<float>&);
template void write_rvt<double>(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> read_rvt<float>(std::istream&);
template Tensor<double> read_rvt<double>(std::istream&);
template Tensor<float> read_rvt<float>(const std::filesystem::path&);
template Tensor<double> read_rvt<double>(const std::filesystem::path&);

}  // namespace refiner
