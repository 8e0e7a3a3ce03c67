#include "ipart/model.hpp"

#include <random>

namespace ipart {

HeadConfig ModelConfig::head_config() const {
  HeadConfig h;
  h.dim = backbone.depth();
  h.blocks = blocks;
  h.bottleneck_width = std::max<Index>(1, h.dim / 2);
  h.attention_width = std::max<Index>(1, h.dim / 2);
  h.classes = classes;
  h.attributes = attributes;
  h.mode = heads;
  return h;
}

Model Model::create(const ModelConfig& config, std::uint64_t seed) {
  if (config.parts < 1) throw std::invalid_argument("model: need at least one part");
  std::mt19937_64 rng(seed);
  Model m;
  m.config = config;
  m.backbone = BackboneParameters(config.backbone, rng);
  m.dictionary = PartDictionary::random(config.parts, config.backbone.depth(), rng);
  m.head = HeadParameters(config.head_config(), rng);
  m.kernel = SmoothingKernel::gaussian(config.smoothing_size, config.smoothing_bandwidth);
  return m;
}

std::vector<ParameterRef> Model::parameters() {
  std::vector<ParameterRef> params;
  std::vector<BufferRef> buffers;
  backbone.collect("backbone", params, buffers);
  params.push_back({"dictionary.parts", &dictionary.parts, false});
  params.push_back({"dictionary.raw_smoothing", &dictionary.raw_smoothing, false});
  head.collect("head", params, buffers);
  return params;
}

std::vector<BufferRef> Model::buffers() {
  std::vector<ParameterRef> params;
  std::vector<BufferRef> buffers;
  backbone.collect("backbone", params, buffers);
  head.collect("head", params, buffers);
  return buffers;
}

ForwardResult forward(Model& model, Graph& g, Var images, Mode mode) {
  ForwardResult r;
  r.features = extract(images, model.backbone, mode);
  if (r.features.shape().size() != 4) throw std::invalid_argument("forward: expected a batch of images");
  Var parts = g.parameter(model.dictionary.parts);
  Var raw = g.parameter(model.dictionary.raw_smoothing);
  r.assignment = assign(r.features, parts, raw);
  r.smoothed = smooth(r.assignment, model.kernel);
  r.occurrence = occurrence(r.smoothed);
  r.regions = pool_regions(r.features, r.assignment, parts, raw);
  r.transformed = transform(r.regions, model.head, mode);
  const Index n = r.features.shape()[0];
  const Index k = model.config.parts;
  for (Index h = 0; h < model.head.heads(); ++h) {
    Var a = model.config.use_attention ? attend(r.regions, model.head, mode, h)
                                       : g.constant(Tensor(Shape{n, k}, 1.0 / static_cast<double>(k)));
    r.attention.push_back(a);
    r.logits.push_back(classify_logits(r.transformed, a, model.head, h));
  }
  return r;
}

}  // namespace ipart
