#pragma once

#include <random>
#include <string>
#include <vector>

#include "ipart/ops.hpp"

namespace ipart {

/// A named tensor owned by a model, visited for updates and checkpoints.
struct ParameterRef {
  std::string name;
  Tensor* tensor;
  bool decay;  // weight decay applies
};

struct BufferRef {
  std::string name;
  BatchNormState* state;
};

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;

  BatchNormParams() = default;
  explicit BatchNormParams(Index channels)
      : gamma(Shape{channels}, 1.0), beta(Shape{channels}, 0.0), state(channels) {}

  Var apply(Graph& g, Var x, Mode mode);
  void collect(const std::string& prefix, std::vector<ParameterRef>& params, std::vector<BufferRef>& buffers);
};

/// 1×1 convolution over regions, without bias (each is followed by batch
/// normalization or a softmax).
struct PointwiseConv {
  Tensor weight;  // O×C×1×1

  PointwiseConv() = default;
  PointwiseConv(Index out, Index in, std::mt19937_64& rng);
  Var apply(Graph& g, Var x) const;
};

/// conv→BN→ReLU, conv→BN→ReLU, conv→BN, plus the identity skip.
struct BottleneckBlock {
  PointwiseConv reduce, middle, expand;
  BatchNormParams bn_reduce, bn_middle, bn_expand;

  BottleneckBlock() = default;
  BottleneckBlock(Index dim, Index width, std::mt19937_64& rng);
};

/// Scores regions: conv→BN→ReLU→conv to one channel.
struct AttentionBranch {
  PointwiseConv hidden;
  BatchNormParams bn;
  PointwiseConv score;

  AttentionBranch() = default;
  AttentionBranch(Index dim, Index width, std::mt19937_64& rng);
};

struct Classifier {
  Tensor weight;  // C×D
  Tensor bias;    // C

  Classifier() = default;
  Classifier(Index classes, Index dim, std::mt19937_64& rng);
};

enum class HeadMode { single, per_attribute };

struct HeadConfig {
  Index dim = 64;
  Index blocks = 2;
  Index bottleneck_width = 32;
  Index attention_width = 32;
  Index classes = 4;         // single mode
  Index attributes = 0;      // per_attribute mode: number of binary heads
  HeadMode mode = HeadMode::single;
};

struct HeadParameters {
  HeadConfig config;
  std::vector<BottleneckBlock> transform;
  std::vector<AttentionBranch> attention;  // one per head
  std::vector<Classifier> classifiers;     // one per head

  HeadParameters() = default;
  HeadParameters(const HeadConfig& cfg, std::mt19937_64& rng);

  Index heads() const { return static_cast<Index>(classifiers.size()); }
  void collect(const std::string& prefix, std::vector<ParameterRef>& params, std::vector<BufferRef>& buffers);
};

/// Assignment-weighted mean residual per part, (x̄_k - d_k)/sigma_k, scaled to
/// unit norm; columns with norm below 1e-12 become zero and pass no gradient.
/// D×H×W → D×K, or N×D×H×W → N×D×K.
Var pool_regions(Var features, Var assignment, Var parts, Var raw_smoothing);

/// Residual bottleneck blocks over the K regions (treated as positions).
/// Accepts D×K or N×D×K.
Var transform(Var regions, HeadParameters& params, Mode mode);

/// Softmax over regions of the attention branch's scores: N×D×K → N×K.
Var attend(Var regions, HeadParameters& params, Mode mode, Index head = 0);

/// Logits W·(zt·a) + b for one head: N×C (single) or N×1 (per attribute).
Var classify_logits(Var transformed, Var attention, HeadParameters& params, Index head = 0);

/// Class probabilities (softmax over C) or per-head Bernoulli probabilities
/// (N×M) when the head mode is per_attribute.
Tensor classify(const Tensor& transformed, const std::vector<Tensor>& attention, HeadParameters& params);

/// Pixel score Σ_k q_k a_k. `assignment` is K×H×W, `attention` has K entries.
Tensor attribute_pixels(const Tensor& assignment, const Tensor& attention);

}  // namespace ipart
