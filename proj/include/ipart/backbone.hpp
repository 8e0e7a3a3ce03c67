#pragma once

#include <random>
#include <vector>

#include "ipart/head.hpp"

namespace ipart {

struct BackboneConfig {
  Index in_channels = 3;
  std::vector<Index> widths{16, 32, 64, 64};
  std::vector<Index> strides{2, 2, 2, 1};
  bool batch_norm = true;

  Index depth() const { return widths.empty() ? in_channels : widths.back(); }
  Index total_stride() const;
};

/// One 3×3 convolution (with bias), optional batch normalization, ReLU.
struct BackboneStage {
  Tensor weight;  // O×C×3×3
  Tensor bias;    // O
  BatchNormParams bn;
  Index stride = 1;
};

struct BackboneParameters {
  BackboneConfig config;
  std::vector<BackboneStage> stages;

  BackboneParameters() = default;
  BackboneParameters(const BackboneConfig& cfg, std::mt19937_64& rng);

  void collect(const std::string& prefix, std::vector<ParameterRef>& params, std::vector<BufferRef>& buffers);
};

/// 3×H×W or N×3×H×W images to D×h×w / N×D×h×w features. Input extents must
/// be divisible by the total stride.
Var extract(Var images, BackboneParameters& params, Mode mode);

}  // namespace ipart
