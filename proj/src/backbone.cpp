#include "ipart/backbone.hpp"

#include <cmath>
#include <string>

namespace ipart {

Index BackboneConfig::total_stride() const {
  Index s = 1;
  for (Index v : strides) s *= v;
  return s;
}

BackboneParameters::BackboneParameters(const BackboneConfig& cfg, std::mt19937_64& rng) : config(cfg) {
  if (cfg.widths.size() != cfg.strides.size()) {
    throw std::invalid_argument("backbone: widths and strides must have the same length");
  }
  Index in = cfg.in_channels;
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
    const Index out = cfg.widths[s];
    if (out < 1 || cfg.strides[s] < 1) throw std::invalid_argument("backbone: widths and strides must be positive");
    BackboneStage stage;
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in * 9)));
    stage.weight = Tensor(Shape{out, in, 3, 3});
    for (Index i = 0; i < stage.weight.size(); ++i) stage.weight[i] = normal(rng);
    stage.bias = Tensor(Shape{out}, 0.0);
    stage.bn = BatchNormParams(out);
    stage.stride = cfg.strides[s];
    stages.push_back(std::move(stage));
    in = out;
  }
}

void BackboneParameters::collect(const std::string& prefix, std::vector<ParameterRef>& params,
                                 std::vector<BufferRef>& buffers) {
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::string p = prefix + ".stage." + std::to_string(s);
    params.push_back({p + ".weight", &stages[s].weight, true});
    params.push_back({p + ".bias", &stages[s].bias, false});
    if (config.batch_norm) stages[s].bn.collect(p + ".bn", params, buffers);
  }
}

Var extract(Var images, BackboneParameters& params, Mode mode) {
  const Shape s = images.shape();
  if (s.size() != 3 && s.size() != 4) {
    throw std::invalid_argument("extract: expected 3×H×W or N×3×H×W images, got " + shape_string(s));
  }
  const Index h = s[s.size() - 2], w = s[s.size() - 1];
  const Index total = params.config.total_stride();
  if (h % total != 0 || w % total != 0) {
    throw std::invalid_argument("extract: image " + shape_string(s) + " not divisible by total stride " +
                                std::to_string(total));
  }
  Graph& g = images.graph();
  Var x = s.size() == 3 ? ops::reshape(images, {1, s[0], s[1], s[2]}) : images;
  for (auto& stage : params.stages) {
    x = ops::conv2d(x, g.parameter(stage.weight), g.parameter(stage.bias), stage.stride, Padding::same);
    if (params.config.batch_norm) x = stage.bn.apply(g, x, mode);
    x = ops::relu(x);
  }
  if (s.size() == 3) {
    const Shape& o = x.shape();
    x = ops::reshape(x, {o[1], o[2], o[3]});
  }
  return x;
}

}  // namespace ipart
