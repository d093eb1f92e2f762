#pragma once

#include <iosfwd>

#include "pvnow/tensor.hpp"

namespace pvnow {

// Binary tensor layout, little-endian:
//   u32 rank | u32 dims[rank] | u8 dtype (0 = f32, 1 = f64) | raw element data
void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

/// Bytes write_tensor emits for this tensor.
std::size_t serialized_size(const Tensor& tensor);

}  // namespace pvnow
