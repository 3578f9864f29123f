#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tvr/tensor.hpp"

namespace tvr {

// Binary tensor dump: magic "TVT1", u32 rank, u32 extents, little-endian f32
// payload. Checkpoints are a fixed-order sequence of these records.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensors(const std::string& path, const std::vector<const Tensor*>& tensors);
std::vector<Tensor> load_tensors(const std::string& path);

// Loads records from `path` into existing tensors (shape-checked).
void load_tensors_into(const std::string& path, const std::vector<Tensor*>& tensors);

}  // namespace tvr
