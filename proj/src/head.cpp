#include "ipart/head.hpp"

#include <cmath>
#include <string>

#include "ipart/parallel.hpp"

namespace ipart {

namespace {

using RowMatrix = Tensor::RowMatrix;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;

double sigmoid(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

Tensor he_normal(Shape shape, Index fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = normal(rng);
  return t;
}

// N×D×K regions as an N×D×1×K image so 1×1 convolutions apply per region.
Var as_image(Var regions) {
  const Shape& s = regions.shape();
  if (s.size() == 2) return ops::reshape(regions, {1, s[0], 1, s[1]});
  if (s.size() == 3) return ops::reshape(regions, {s[0], s[1], 1, s[2]});
  throw std::invalid_argument("head: expected D×K or N×D×K regions, got " + shape_string(s));
}

Var as_regions(Var image, const Shape& like) { return ops::reshape(image, like); }

}  // namespace

Var BatchNormParams::apply(Graph& g, Var x, Mode mode) {
  return ops::batch_norm(x, g.parameter(gamma), g.parameter(beta), state, mode);
}

void BatchNormParams::collect(const std::string& prefix, std::vector<ParameterRef>& params,
                              std::vector<BufferRef>& buffers) {
  params.push_back({prefix + ".gamma", &gamma, false});
  params.push_back({prefix + ".beta", &beta, false});
  buffers.push_back({prefix, &state});
}

PointwiseConv::PointwiseConv(Index out, Index in, std::mt19937_64& rng) : weight(he_normal({out, in, 1, 1}, in, rng)) {}

Var PointwiseConv::apply(Graph& g, Var x) const { return ops::conv2d(x, g.parameter(weight)); }

BottleneckBlock::BottleneckBlock(Index dim, Index width, std::mt19937_64& rng)
    : reduce(width, dim, rng),
      middle(width, width, rng),
      expand(dim, width, rng),
      bn_reduce(width),
      bn_middle(width),
      bn_expand(dim) {}

AttentionBranch::AttentionBranch(Index dim, Index width, std::mt19937_64& rng)
    : hidden(width, dim, rng), bn(width), score(1, width, rng) {}

Classifier::Classifier(Index classes, Index dim, std::mt19937_64& rng)
    : weight(he_normal({classes, dim}, dim, rng)), bias(Shape{classes}, 0.0) {}

HeadParameters::HeadParameters(const HeadConfig& cfg, std::mt19937_64& rng) : config(cfg) {
  if (cfg.dim < 1 || cfg.blocks < 0 || cfg.bottleneck_width < 1 || cfg.attention_width < 1) {
    throw std::invalid_argument("HeadParameters: invalid dimensions");
  }
  for (Index b = 0; b < cfg.blocks; ++b) transform.emplace_back(cfg.dim, cfg.bottleneck_width, rng);
  if (cfg.mode == HeadMode::single) {
    if (cfg.classes < 2) throw std::invalid_argument("HeadParameters: need at least two classes");
    attention.emplace_back(cfg.dim, cfg.attention_width, rng);
    classifiers.emplace_back(cfg.classes, cfg.dim, rng);
  } else {
    if (cfg.attributes < 1) throw std::invalid_argument("HeadParameters: per_attribute mode needs at least one head");
    for (Index m = 0; m < cfg.attributes; ++m) {
      attention.emplace_back(cfg.dim, cfg.attention_width, rng);
      classifiers.emplace_back(1, cfg.dim, rng);
    }
  }
}

void HeadParameters::collect(const std::string& prefix, std::vector<ParameterRef>& params,
                             std::vector<BufferRef>& buffers) {
  for (std::size_t b = 0; b < transform.size(); ++b) {
    const std::string p = prefix + ".transform." + std::to_string(b);
    auto& blk = transform[b];
    params.push_back({p + ".reduce.weight", &blk.reduce.weight, true});
    blk.bn_reduce.collect(p + ".bn_reduce", params, buffers);
    params.push_back({p + ".middle.weight", &blk.middle.weight, true});
    blk.bn_middle.collect(p + ".bn_middle", params, buffers);
    params.push_back({p + ".expand.weight", &blk.expand.weight, true});
    blk.bn_expand.collect(p + ".bn_expand", params, buffers);
  }
  for (std::size_t m = 0; m < attention.size(); ++m) {
    const std::string p = prefix + ".attention." + std::to_string(m);
    params.push_back({p + ".hidden.weight", &attention[m].hidden.weight, true});
    attention[m].bn.collect(p + ".bn", params, buffers);
    params.push_back({p + ".score.weight", &attention[m].score.weight, true});
  }
  for (std::size_t m = 0; m < classifiers.size(); ++m) {
    const std::string p = prefix + ".classifier." + std::to_string(m);
    params.push_back({p + ".weight", &classifiers[m].weight, true});
    params.push_back({p + ".bias", &classifiers[m].bias, false});
  }
}

// ---------------------------------------------------------------------------

Var pool_regions(Var features, Var assignment, Var parts, Var raw_smoothing) {
  const Tensor& x = features.value();
  const Tensor& q = assignment.value();
  const Tensor& dict = parts.value();
  const bool batched = x.rank() == 4;
  if ((x.rank() != 3 && x.rank() != 4) || q.rank() != x.rank() || dict.rank() != 2) {
    throw std::invalid_argument("pool_regions: unexpected shapes " + shape_string(x.shape()) + ", " +
                                shape_string(q.shape()) + ", " + shape_string(dict.shape()));
  }
  const Index n = batched ? x.dim(0) : 1;
  const Index d = x.dim(batched ? 1 : 0);
  const Index k = q.dim(batched ? 1 : 0);
  const Index p = x.size() / (n * d);
  if (dict.dim(0) != k || dict.dim(1) != d || q.size() != n * k * p || raw_smoothing.value().size() != k ||
      (batched && q.dim(0) != n)) {
    throw std::invalid_argument("pool_regions: inconsistent shapes " + shape_string(x.shape()) + ", " +
                                shape_string(q.shape()) + ", " + shape_string(dict.shape()));
  }
  Eigen::VectorXd sigma(k);
  for (Index i = 0; i < k; ++i) sigma[i] = sigmoid(raw_smoothing.value()[i]);
  const ConstMatMap dm(dict.data(), k, d);

  Tensor out(batched ? Shape{n, d, k} : Shape{d, k});
  Tensor mass(Shape{n, k});
  Tensor means(Shape{n, d, k});     // assignment-weighted feature means
  Tensor unnormed(Shape{n, d, k});  // z'
  Graph& graph = features.graph();
  parallel_for(n, graph.threads(), [&](Index s) {
    const ConstMatMap xm(x.data() + s * d * p, d, p);
    const ConstMatMap qm(q.data() + s * k * p, k, p);
    MatMap mean_m(means.data() + s * d * k, d, k);
    MatMap zp(unnormed.data() + s * d * k, d, k);
    MatMap zm(out.data() + s * d * k, d, k);
    const Eigen::VectorXd m = qm.rowwise().sum();
    mass.vec().segment(s * k, k) = m;
    mean_m.noalias() = xm * qm.transpose();
    for (Index i = 0; i < k; ++i) {
      mean_m.col(i) /= m[i];
      zp.col(i) = (mean_m.col(i) - dm.row(i).transpose()) / sigma[i];
      const double norm = zp.col(i).norm();
      if (norm < 1e-12) {
        zm.col(i).setZero();
      } else {
        zm.col(i) = zp.col(i) / norm;
      }
    }
  });

  Tensor saved_z = out;
  return graph.record(std::move(out), {features, assignment, parts, raw_smoothing},
                      [features, assignment, parts, raw_smoothing, n, d, k, p, sigma, z = std::move(saved_z),
                       mass = std::move(mass), means = std::move(means),
                       unnormed = std::move(unnormed)](Graph& g, const Tensor& go) {
    const bool want_x = g.requires_grad(features), want_q = g.requires_grad(assignment),
               want_d = g.requires_grad(parts), want_s = g.requires_grad(raw_smoothing);
    const Tensor& x = g.value(features);
    const Tensor& q = g.value(assignment);
    double* gx = want_x ? g.grad_buffer(features).data() : nullptr;
    double* gq = want_q ? g.grad_buffer(assignment).data() : nullptr;
    std::vector<RowMatrix> gd_parts(want_d ? static_cast<std::size_t>(n) : 0);
    std::vector<Eigen::VectorXd> gs_parts(want_s ? static_cast<std::size_t>(n) : 0);

    parallel_for(n, g.threads(), [&](Index s) {
      const ConstMatMap xm(x.data() + s * d * p, d, p);
      const ConstMatMap qm(q.data() + s * k * p, k, p);
      const ConstMatMap zm(z.data() + s * d * k, d, k);
      const ConstMatMap zp(unnormed.data() + s * d * k, d, k);
      const ConstMatMap mean_m(means.data() + s * d * k, d, k);
      const ConstMatMap gz(go.data() + s * d * k, d, k);
      RowMatrix g_mean(d, k);  // gradient w.r.t. the weighted means
      RowMatrix gd_s = RowMatrix::Zero(k, d);
      Eigen::VectorXd gs_s = Eigen::VectorXd::Zero(k);
      for (Index i = 0; i < k; ++i) {
        const double norm = zp.col(i).norm();
        if (norm < 1e-12) {
          g_mean.col(i).setZero();
          continue;
        }
        // through z = z'/||z'||
        const Eigen::VectorXd gzp = (gz.col(i) - zm.col(i) * zm.col(i).dot(gz.col(i))) / norm;
        g_mean.col(i) = gzp / sigma[i];
        gd_s.row(i) = -gzp.transpose() / sigma[i];
        const double gsig = -gzp.dot(zp.col(i)) / sigma[i];
        gs_s[i] = gsig * sigma[i] * (1.0 - sigma[i]);
      }
      const Eigen::VectorXd m = mass.vec().segment(s * k, k);
      RowMatrix scaled = g_mean;  // g_mean_k / m_k
      for (Index i = 0; i < k; ++i) scaled.col(i) /= m[i];
      if (want_x) MatMap(gx + s * d * p, d, p).noalias() += scaled * qm;
      if (want_q) {
        // d mean_k / d q_kp = (x_p - mean_k) / m_k
        MatMap gqm(gq + s * k * p, k, p);
        gqm.noalias() += scaled.transpose() * xm;
        const Eigen::VectorXd offset = (scaled.array() * mean_m.array()).colwise().sum().transpose();
        gqm.colwise() -= offset;
      }
      if (want_d) gd_parts[static_cast<std::size_t>(s)] = std::move(gd_s);
      if (want_s) gs_parts[static_cast<std::size_t>(s)] = std::move(gs_s);
    });
    if (want_d) {
      MatMap gdm(g.grad_buffer(parts).data(), k, d);
      for (const auto& part : gd_parts) gdm += part;
    }
    if (want_s) {
      auto& gsv = g.grad_buffer(raw_smoothing).vec();
      for (const auto& part : gs_parts) gsv += part;
    }
  });
}

Var transform(Var regions, HeadParameters& params, Mode mode) {
  const Shape shape = regions.shape();
  Graph& g = regions.graph();
  Var x = as_image(regions);
  for (auto& blk : params.transform) {
    Var h = ops::relu(blk.bn_reduce.apply(g, blk.reduce.apply(g, x), mode));
    h = ops::relu(blk.bn_middle.apply(g, blk.middle.apply(g, h), mode));
    h = blk.bn_expand.apply(g, blk.expand.apply(g, h), mode);
    x = ops::add(x, h);
  }
  return as_regions(x, shape);
}

Var attend(Var regions, HeadParameters& params, Mode mode, Index head) {
  auto& branch = params.attention.at(static_cast<std::size_t>(head));
  Graph& g = regions.graph();
  const Shape s = regions.shape();
  const Index n = s.size() == 3 ? s[0] : 1;
  const Index k = s.back();
  Var h = ops::relu(branch.bn.apply(g, branch.hidden.apply(g, as_image(regions)), mode));
  Var scores = ops::reshape(branch.score.apply(g, h), {n, k});
  return ops::softmax_axis(scores, 1);
}

Var classify_logits(Var transformed, Var attention, HeadParameters& params, Index head) {
  auto& cls = params.classifiers.at(static_cast<std::size_t>(head));
  Graph& g = transformed.graph();
  Var zt = transformed;
  if (zt.shape().size() == 2) zt = ops::reshape(zt, {1, zt.shape()[0], zt.shape()[1]});
  Var a = attention;
  if (a.shape().size() == 1) a = ops::reshape(a, {1, a.shape()[0]});
  Var pooled = ops::region_weighted_sum(zt, a);
  return ops::linear(pooled, g.parameter(cls.weight), g.parameter(cls.bias));
}

Tensor classify(const Tensor& transformed, const std::vector<Tensor>& attention, HeadParameters& params) {
  if (static_cast<Index>(attention.size()) != params.heads()) {
    throw std::invalid_argument("classify: expected one attention vector per head");
  }
  Graph g;
  g.set_grad_enabled(false);
  Var zt = g.constant(transformed);
  if (params.config.mode == HeadMode::single) {
    return ops::softmax_axis(classify_logits(zt, g.constant(attention[0]), params, 0), 1).value();
  }
  const Index n = transformed.rank() == 3 ? transformed.dim(0) : 1;
  Tensor probs(Shape{n, params.heads()});
  for (Index m = 0; m < params.heads(); ++m) {
    const Tensor& logit = classify_logits(zt, g.constant(attention[static_cast<std::size_t>(m)]), params, m).value();
    for (Index i = 0; i < n; ++i) probs(i, m) = sigmoid(logit[i]);
  }
  return probs;
}

Tensor attribute_pixels(const Tensor& assignment, const Tensor& attention) {
  if (assignment.rank() != 3 || attention.size() != assignment.dim(0)) {
    throw std::invalid_argument("attribute_pixels: assignment " + shape_string(assignment.shape()) +
                                " does not match attention " + shape_string(attention.shape()));
  }
  const Index k = assignment.dim(0), h = assignment.dim(1), w = assignment.dim(2);
  Tensor out(Shape{h, w});
  out.matrix(1, h * w) = attention.vec().transpose() * assignment.matrix(k, h * w);
  // Rows of the assignment sum to 1 only up to rounding; keep the convex hull exact.
  out.vec() = out.vec().cwiseMax(attention.vec().minCoeff()).cwiseMin(attention.vec().maxCoeff());
  return out;
}

}  // namespace ipart
