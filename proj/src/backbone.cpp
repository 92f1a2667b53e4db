#include "frinet/backbone.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "frinet/logging.hpp"
#include "frinet/rng.hpp"

using json = nlohmann::json;

namespace frinet::backbone {

Architecture Architecture::toy(int channels) {
  Architecture arch;
  arch.in_channels = 3;
  arch.blocks = {{channels, 1, 1, 3}, {channels, 2, 1, 3}, {channels, 1, 1, 3},
                 {channels, 2, 1, 3}};
  arch.name = "toy4-c" + std::to_string(channels) + "-s" + std::to_string(arch.stride());
  return arch;
}

Architecture Architecture::by_name(const std::string& name) {
  int channels = 0, stride = 0;
  if (std::sscanf(name.c_str(), "toy4-c%d-s%d", &channels, &stride) == 2) {
    Architecture arch = toy(channels);
    if (arch.stride() != stride)
      throw std::runtime_error("architecture name declares stride " + std::to_string(stride) +
                               " but toy4 has stride " + std::to_string(arch.stride()));
    return arch;
  }
  throw std::runtime_error("unknown backbone architecture: " + name);
}

core::Tensor<float> probe_image(int channels, int size) {
  core::Tensor<float> img({channels, size, size});
  for (long i = 0; i < img.numel(); ++i) {
    const uint64_t h = core::splitmix64(0x9e3779b97f4a7c15ull + static_cast<uint64_t>(i));
    img[i] = static_cast<float>(h >> 11) * static_cast<float>(0x1.0p-53);
  }
  return img;
}

uint64_t feature_hash(const core::Tensor<float>& features) {
  return core::fnv1a64_bytes(features.data(), sizeof(float) * features.numel());
}

void save_backbone(const Backbone<float>& backbone, const std::string& path,
                   BackboneSpec spec) {
  const auto tensors = core::export_params(backbone.params());
  core::write_weights_file(path, tensors);

  spec.name = backbone.arch().name;
  spec.channels = backbone.arch().channels();
  spec.stride = backbone.arch().stride();
  spec.frozen = true;
  spec.weights_uri = path;
  spec.weight_checksum = core::hex64(core::tensors_checksum(tensors));
  const auto probe = backbone.extract(probe_image(backbone.arch().in_channels, 32));
  spec.probe_feature_hash = core::hex64(feature_hash(probe.data));

  json j;
  j["name"] = spec.name;
  j["channels"] = spec.channels;
  j["stride"] = spec.stride;
  j["frozen"] = spec.frozen;
  j["weight_checksum"] = spec.weight_checksum;
  j["probe_feature_hash"] = spec.probe_feature_hash;
  j["pretrain_fold"] = spec.pretrain_fold;
  j["pixel_accuracy"] = spec.pixel_accuracy;
  std::ofstream out(path + ".json");
  if (!out) throw std::runtime_error("cannot write sidecar for " + path);
  out << j.dump(2) << "\n";
}

BackboneSpec read_backbone_sidecar(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw std::runtime_error("missing backbone sidecar: " + path + ".json");
  json j = json::parse(in);
  BackboneSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.channels = j.at("channels").get<int>();
  spec.stride = j.at("stride").get<int>();
  spec.frozen = j.at("frozen").get<bool>();
  spec.weights_uri = path;
  spec.weight_checksum = j.at("weight_checksum").get<std::string>();
  spec.probe_feature_hash = j.value("probe_feature_hash", "");
  spec.pretrain_fold = j.value("pretrain_fold", -1);
  spec.pixel_accuracy = j.value("pixel_accuracy", -1.0);
  return spec;
}

std::pair<Backbone<float>, BackboneSpec> load_backbone(const std::string& path,
                                                       bool verify_probe) {
  const BackboneSpec spec = read_backbone_sidecar(path);
  Architecture arch = Architecture::by_name(spec.name);
  if (arch.channels() != spec.channels)
    throw std::runtime_error("backbone channel mismatch: architecture '" + spec.name +
                             "' has " + std::to_string(arch.channels()) +
                             " channels, sidecar declares " + std::to_string(spec.channels));
  if (arch.stride() != spec.stride)
    throw std::runtime_error("backbone stride mismatch: architecture has " +
                             std::to_string(arch.stride()) + ", sidecar declares " +
                             std::to_string(spec.stride));

  const auto tensors = core::read_weights_file(path);
  const std::string found_checksum = core::hex64(core::tensors_checksum(tensors));
  if (found_checksum != spec.weight_checksum)
    throw std::runtime_error("backbone checksum mismatch for " + path + ": sidecar " +
                             spec.weight_checksum + ", file " + found_checksum);

  Backbone<float> backbone = Backbone<float>::uninitialized(arch);
  core::import_params(backbone.params(), tensors);
  backbone.mark_ready();
  core::log_info("loaded backbone '" + spec.name + "' checksum " + found_checksum);

  if (verify_probe && !spec.probe_feature_hash.empty()) {
    const auto probe = backbone.extract(probe_image(arch.in_channels, 32));
    const std::string h = core::hex64(feature_hash(probe.data));
    if (h != spec.probe_feature_hash)
      throw std::runtime_error("backbone probe feature hash mismatch for " + path +
                               ": sidecar " + spec.probe_feature_hash + ", computed " + h);
  }
  return {std::move(backbone), spec};
}

}  // namespace frinet::backbone
