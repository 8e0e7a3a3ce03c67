#pragma once

#include <cstdint>
#include <vector>

#include "ipart/backbone.hpp"
#include "ipart/grouping.hpp"
#include "ipart/head.hpp"

namespace ipart {

struct ModelConfig {
  BackboneConfig backbone;
  Index parts = 5;
  Index blocks = 2;
  Index classes = 4;
  Index attributes = 0;
  HeadMode heads = HeadMode::single;
  /// Off: attention replaced by the uniform vector 1/K.
  bool use_attention = true;
  Index smoothing_size = 3;
  double smoothing_bandwidth = 1.0;

  HeadConfig head_config() const;
};

/// Backbone, part dictionary and region head, trained jointly.
struct Model {
  ModelConfig config;
  BackboneParameters backbone;
  PartDictionary dictionary;
  HeadParameters head;
  SmoothingKernel kernel;

  static Model create(const ModelConfig& config, std::uint64_t seed);

  std::vector<ParameterRef> parameters();
  std::vector<BufferRef> buffers();
};

struct ForwardResult {
  Var features;     // N×D×h×w
  Var assignment;   // N×K×h×w
  Var smoothed;     // N×K×h×w
  Var occurrence;   // N×K
  Var regions;      // N×D×K
  Var transformed;  // N×D×K
  std::vector<Var> attention;  // per head, N×K
  std::vector<Var> logits;     // per head, N×C (or N×1)
};

ForwardResult forward(Model& model, Graph& graph, Var images, Mode mode);

}  // namespace ipart
