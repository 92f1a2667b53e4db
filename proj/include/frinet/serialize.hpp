#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "frinet/nn.hpp"
#include "frinet/tensor.hpp"

namespace frinet::core {

/// A named float32 tensor as stored in a weight container file.
struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

uint64_t fnv1a64_bytes(const void* data, size_t len,
                       uint64_t h = 0xcbf29ce484222325ull);
std::string hex64(uint64_t v);

/// Checksum over the canonical (name, shape, payload) stream.
uint64_t tensors_checksum(const std::vector<NamedTensor>& tensors);

void write_weights_file(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_weights_file(const std::string& path);

/// Export every entry of a store (parameters and buffers) in registration order.
template <typename T>
std::vector<NamedTensor> export_params(const nn::ParamStore<T>& store) {
  std::vector<NamedTensor> out;
  out.reserve(store.names().size());
  for (const auto& name : store.names()) {
    const auto& value = store.entry(name).value;
    NamedTensor t;
    t.name = name;
    t.shape = value.shape();
    t.data.resize(static_cast<size_t>(value.numel()));
    for (long i = 0; i < value.numel(); ++i) t.data[static_cast<size_t>(i)] = static_cast<float>(value[i]);
    out.push_back(std::move(t));
  }
  return out;
}

/// Import into an already-constructed store. Every store entry must be
/// present with a matching shape and no extra tensors may remain.
template <typename T>
void import_params(nn::ParamStore<T>& store, const std::vector<NamedTensor>& tensors) {
  size_t used = 0;
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (const auto& name : store.names()) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("import_params: missing tensor '" + name + "' in file");
    const NamedTensor& t = *it->second;
    auto& value = store.entry(name).value;
    if (t.shape != value.shape()) {
      std::string expect, found;
      for (int d : value.shape()) expect += std::to_string(d) + " ";
      for (int d : t.shape) found += std::to_string(d) + " ";
      throw std::runtime_error("import_params: shape mismatch for '" + name +
                               "': expected [ " + expect + "], file has [ " + found + "]");
    }
    for (long i = 0; i < value.numel(); ++i) value[i] = static_cast<T>(t.data[static_cast<size_t>(i)]);
    ++used;
  }
  if (used != tensors.size())
    throw std::runtime_error("import_params: file contains tensors unknown to this model");
}

template <typename T>
uint64_t params_checksum(const nn::ParamStore<T>& store) {
  return tensors_checksum(export_params(store));
}

}  // namespace frinet::core
