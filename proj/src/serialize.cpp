#include "tvr/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace tvr {

namespace {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) fail(ErrorKind::Format, "truncated tensor record");
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("TVT1", 4);
  write_u32(os, static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) write_u32(os, static_cast<uint32_t>(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(float)));
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TVT1", 4) != 0)
    fail(ErrorKind::Format, "bad tensor magic");
  uint32_t rank = read_u32(is);
  if (rank == 0 || rank > 8) fail(ErrorKind::Format, "implausible tensor rank");
  std::vector<int> shape(rank);
  int64_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = read_u32(is);
    if (d == 0 || d > (1u << 24)) fail(ErrorKind::Format, "implausible tensor extent");
    shape[i] = static_cast<int>(d);
    n *= d;
  }
  std::vector<float> values(static_cast<size_t>(n));
  is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) fail(ErrorKind::Format, "truncated tensor payload");
  return Tensor(std::move(shape), std::move(values));
}

void save_tensors(const std::string& path, const std::vector<const Tensor*>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Format, "cannot open for writing: " + path);
  for (const Tensor* t : tensors) write_tensor(os, *t);
  if (!os) fail(ErrorKind::Format, "write failed: " + path);
}

std::vector<Tensor> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Format, "cannot open: " + path);
  std::vector<Tensor> out;
  while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(is));
  return out;
}

void load_tensors_into(const std::string& path, const std::vector<Tensor*>& tensors) {
  std::vector<Tensor> loaded = load_tensors(path);
  if (loaded.size() != tensors.size())
    fail(ErrorKind::Format, "checkpoint record count mismatch: " + path);
  for (size_t i = 0; i < tensors.size(); ++i) {
    if (loaded[i].shape() != tensors[i]->shape())
      fail(ErrorKind::Format, "checkpoint shape mismatch at record " + std::to_string(i));
    tensors[i]->assign_values(loaded[i]);
  }
}

}  // namespace tvr
