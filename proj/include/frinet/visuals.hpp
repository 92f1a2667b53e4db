#pragma once

#include <string>
#include <vector>

#include "frinet/dataset.hpp"
#include "frinet/image_io.hpp"
#include "frinet/rothead.hpp"
#include "frinet/tensor.hpp"

namespace frinet::evaluation {

using core::GrayImage;
using core::RgbImage;
using core::Tensor;

// --- flat binary tensor dumps ----------------------------------------------
// Layout: magic "FRTD", u32 version, u8 dtype (1 = float32, 2 = uint8),
// u8 rank, u16 reserved, u32 dims[rank], row-major little-endian payload.

void write_tensor_dump(const std::string& path, const Tensor<float>& tensor);
void write_tensor_dump(const std::string& path, const Tensor<uint8_t>& tensor);
Tensor<float> read_tensor_dump_f32(const std::string& path);

// --- colormap ---------------------------------------------------------------
// Five linearly interpolated stops (dark blue -> teal -> green -> yellow ->
// white); input clamped to [0,1]. The exact mapping is part of the contract
// so heatmap pixels can be recomputed in tests.

std::array<uint8_t, 3> colormap(double v);

/// Render a single-channel map (values linearly mapped from [lo, hi]) as PNG.
RgbImage heatmap_image(const Tensor<float>& map, double lo, double hi);

/// Alpha-blend a fixed color onto mask==1 pixels: out = (in + color + 1) / 2.
RgbImage overlay_mask(const Tensor<float>& image_chw, const Tensor<uint8_t>& mask,
                      const std::array<uint8_t, 3>& color);

/// Draw mask boundary pixels in a solid color.
RgbImage contour_overlay(const Tensor<float>& image_chw, const Tensor<uint8_t>& mask,
                         const std::array<uint8_t, 3>& color);

/// Writes the qualitative panel for one episode:
///   support.png       first support image with mask contour
///   query.png         raw query image
///   gt_overlay.png    ground truth over the query
///   pred_overlay.png  fused prediction over the query
///   relations.png     orientation relation weights side by side
std::vector<std::string> render_visuals(const data::Episode& episode,
                                        const std::vector<Tensor<float>>& relation_maps,
                                        const Tensor<float>& fused_logits,
                                        const std::string& out_dir);

}  // namespace frinet::evaluation
