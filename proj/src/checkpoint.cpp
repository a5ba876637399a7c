#include "tcts/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tcts::ad {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace {

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::map<std::string, TensorPtr>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for write");
  os.write("TCTS", 4);
  put<uint32_t>(os, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    put<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint32_t>(os, static_cast<uint32_t>(t->rank()));
    for (size_t e : t->shape()) put<uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(t->values().data()),
             static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::map<std::string, TensorPtr> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TCTS", 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  uint32_t version = get<uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  }
  std::map<std::string, TensorPtr> out;
  while (true) {
    uint32_t name_len;
    is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (is.eof()) break;
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t rank = get<uint32_t>(is);
    Shape shape(rank);
    size_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<size_t>(get<uint64_t>(is));
      n *= shape[i];
    }
    std::vector<double> values(n);
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor '" + name + "'");
    out[name] = Tensor::from(std::move(shape), std::move(values));
  }
  return out;
}

}  // namespace tcts::ad
