#include "frinet/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace frinet::core {

namespace {

constexpr char kMagic[4] = {'F', 'R', 'N', 'W'};
constexpr uint32_t kVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_raw(std::FILE* f, const void* p, size_t n) {
  if (std::fwrite(p, 1, n, f) != n) throw std::runtime_error("weights file: write failed");
}

void read_raw(std::FILE* f, void* p, size_t n) {
  if (std::fread(p, 1, n, f) != n) throw std::runtime_error("weights file: truncated");
}

template <typename U>
void write_pod(std::FILE* f, U v) {
  write_raw(f, &v, sizeof(U));
}

template <typename U>
U read_pod(std::FILE* f) {
  U v;
  read_raw(f, &v, sizeof(U));
  return v;
}

}  // namespace

uint64_t fnv1a64_bytes(const void* data, size_t len, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

uint64_t tensors_checksum(const std::vector<NamedTensor>& tensors) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : tensors) {
    h = fnv1a64_bytes(t.name.data(), t.name.size(), h);
    for (int d : t.shape) {
      const uint32_t u = static_cast<uint32_t>(d);
      h = fnv1a64_bytes(&u, sizeof(u), h);
    }
    h = fnv1a64_bytes(t.data.data(), t.data.size() * sizeof(float), h);
  }
  return h;
}

void write_weights_file(const std::string& path, const std::vector<NamedTensor>& tensors) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  write_raw(f.get(), kMagic, 4);
  write_pod<uint32_t>(f.get(), kVersion);
  write_pod<uint32_t>(f.get(), static_cast<uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    write_pod<uint32_t>(f.get(), static_cast<uint32_t>(t.name.size()));
    write_raw(f.get(), t.name.data(), t.name.size());
    write_pod<uint32_t>(f.get(), static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) write_pod<int32_t>(f.get(), d);
    write_pod<uint64_t>(f.get(), t.data.size() * sizeof(float));
    write_raw(f.get(), t.data.data(), t.data.size() * sizeof(float));
  }
}

std::vector<NamedTensor> read_weights_file(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open weights file: " + path);
  char magic[4];
  read_raw(f.get(), magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a weights container: " + path);
  const auto version = read_pod<uint32_t>(f.get());
  if (version != kVersion)
    throw std::runtime_error("unsupported weights version " + std::to_string(version));
  const auto count = read_pod<uint32_t>(f.get());
  std::vector<NamedTensor> out(count);
  for (auto& t : out) {
    const auto name_len = read_pod<uint32_t>(f.get());
    t.name.resize(name_len);
    read_raw(f.get(), t.name.data(), name_len);
    const auto rank = read_pod<uint32_t>(f.get());
    if (rank == 0 || rank > 4) throw std::runtime_error("weights file: bad rank");
    t.shape.resize(rank);
    long numel = 1;
    for (auto& d : t.shape) {
      d = read_pod<int32_t>(f.get());
      if (d <= 0) throw std::runtime_error("weights file: bad dim");
      numel *= d;
    }
    const auto bytes = read_pod<uint64_t>(f.get());
    if (bytes != static_cast<uint64_t>(numel) * sizeof(float))
      throw std::runtime_error("weights file: payload size mismatch for " + t.name);
    t.data.resize(static_cast<size_t>(numel));
    read_raw(f.get(), t.data.data(), bytes);
  }
  return out;
}

}  // namespace frinet::core
