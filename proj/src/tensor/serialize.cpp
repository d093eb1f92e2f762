#include "pvnow/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace pvnow {

namespace {

template <class T>
void put(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw std::runtime_error("read_tensor: truncated stream");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
  for (auto d : tensor.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.dtype()));
  dispatch(tensor.dtype(), [&]<class T>() {
    for (T v : tensor.data<T>()) put<T>(out, v);
  });
  if (!out) throw std::runtime_error("write_tensor: stream failure");
}

Tensor read_tensor(std::istream& in) {
  const auto rank = get<std::uint32_t>(in);
  if (rank > 16) throw std::runtime_error("read_tensor: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get<std::uint32_t>(in);
  const auto tag = get<std::uint8_t>(in);
  if (tag > 1) throw std::runtime_error("read_tensor: unknown dtype tag " + std::to_string(tag));
  Tensor t(shape, static_cast<DType>(tag));
  dispatch(t.dtype(), [&]<class T>() {
    for (T& v : t.data<T>()) v = get<T>(in);
  });
  return t;
}

std::size_t serialized_size(const Tensor& tensor) {
  const std::size_t elem = tensor.dtype() == DType::f32 ? 4 : 8;
  return 4 + 4 * tensor.rank() + 1 + elem * tensor.numel();
}

}  // namespace pvnow
