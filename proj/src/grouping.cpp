#include "ipart/grouping.hpp"

#include <cmath>
#include <string>

#include "ipart/parallel.hpp"

namespace ipart {

namespace {

using RowMatrix = Tensor::RowMatrix;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;

double sigmoid(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

struct Layout {
  bool batched;
  Index n, c, h, w;
  Index plane() const { return h * w; }
};

Layout layout_of(const Tensor& t, const char* where) {
  if (t.rank() == 3) return {false, 1, t.dim(0), t.dim(1), t.dim(2)};
  if (t.rank() == 4) return {true, t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
  throw std::invalid_argument(std::string(where) + ": expected C×H×W or N×C×H×W, got " + shape_string(t.shape()));
}

Tensor evaluate(const std::function<Var(Graph&)>& build) {
  Graph g;
  g.set_grad_enabled(false);
  return build(g).value();
}

}  // namespace

PartDictionary::PartDictionary(Tensor p, Tensor raw) : parts(std::move(p)), raw_smoothing(std::move(raw)) {
  if (parts.rank() != 2 || raw_smoothing.rank() != 1 || raw_smoothing.dim(0) != parts.dim(0)) {
    throw std::invalid_argument("PartDictionary: expected K×D parts and K smoothing values, got " +
                                shape_string(parts.shape()) + " and " + shape_string(raw_smoothing.shape()));
  }
}

PartDictionary PartDictionary::random(Index k, Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(d)));
  Tensor parts(Shape{k, d});
  for (Index i = 0; i < parts.size(); ++i) parts[i] = normal(rng);
  return PartDictionary(std::move(parts), Tensor(Shape{k}, 0.0));
}

double PartDictionary::sigma(Index k) const { return sigmoid(raw_smoothing[k]); }

SmoothingKernel SmoothingKernel::gaussian(Index size, double bandwidth) {
  if (size < 1 || size % 2 == 0) throw std::invalid_argument("SmoothingKernel: size must be odd and positive");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("SmoothingKernel: bandwidth must be positive");
  SmoothingKernel k;
  k.size = size;
  k.bandwidth = bandwidth;
  k.weights = Tensor(Shape{size, size});
  const Index r = size / 2;
  double total = 0.0;
  for (Index i = 0; i < size; ++i) {
    for (Index j = 0; j < size; ++j) {
      const double di = static_cast<double>(i - r), dj = static_cast<double>(j - r);
      total += (k.weights(i, j) = std::exp(-(di * di + dj * dj) / (2.0 * bandwidth * bandwidth)));
    }
  }
  k.weights.vec() /= total;
  return k;
}

// ---------------------------------------------------------------------------

Var assign(Var features, Var parts, Var raw_smoothing) {
  const Tensor& x = features.value();
  const Tensor& dict = parts.value();
  const Layout L = layout_of(x, "assign");
  if (dict.rank() != 2 || dict.dim(1) != L.c || raw_smoothing.value().size() != dict.dim(0)) {
    throw std::invalid_argument("assign: feature dimension of " + shape_string(x.shape()) +
                                " does not match dictionary " + shape_string(dict.shape()));
  }
  const Index k = dict.dim(0), d = L.c, p = L.plane();
  Eigen::VectorXd sigma(k);
  for (Index i = 0; i < k; ++i) sigma[i] = sigmoid(raw_smoothing.value()[i]);
  const ConstMatMap dm(dict.data(), k, d);

  Shape out_shape = L.batched ? Shape{L.n, k, L.h, L.w} : Shape{k, L.h, L.w};
  Tensor q(out_shape);
  Tensor dist(out_shape);  // squared distances, kept for backward
  Graph& graph = features.graph();
  parallel_for(L.n, graph.threads(), [&](Index n) {
    const ConstMatMap xm(x.data() + n * d * p, d, p);
    MatMap dst(dist.data() + n * k * p, k, p);
    MatMap qm(q.data() + n * k * p, k, p);
    for (Index i = 0; i < k; ++i) {
      dst.row(i) = (xm.colwise() - dm.row(i).transpose()).colwise().squaredNorm();
      qm.row(i) = -0.5 * dst.row(i) / (sigma[i] * sigma[i]);
    }
    for (Index col = 0; col < p; ++col) {
      const double mx = qm.col(col).maxCoeff();
      qm.col(col) = (qm.col(col).array() - mx).exp().matrix();
      qm.col(col) /= qm.col(col).sum();
    }
  });

  // Mix in a floor so no assignment saturates to exactly 0 or 1 in double.
  Tensor saved_q = q;
  const double mix = k > 1 ? 1.0 - static_cast<double>(k) * kAssignmentFloor : 1.0;
  if (k > 1) q.vec() = (q.vec() * mix).array() + kAssignmentFloor;
  return graph.record(std::move(q), {features, parts, raw_smoothing},
                      [features, parts, raw_smoothing, L, k, d, p, sigma, mix, qv = std::move(saved_q),
                       dist = std::move(dist)](Graph& g, const Tensor& go) {
    const bool want_x = g.requires_grad(features), want_d = g.requires_grad(parts),
               want_s = g.requires_grad(raw_smoothing);
    const Tensor& x = g.value(features);
    const ConstMatMap dm(g.value(parts).data(), k, d);
    std::vector<RowMatrix> gd_parts(want_d ? static_cast<std::size_t>(L.n) : 0);
    std::vector<Eigen::VectorXd> gs_parts(want_s ? static_cast<std::size_t>(L.n) : 0);
    double* gx = want_x ? g.grad_buffer(features).data() : nullptr;

    parallel_for(L.n, g.threads(), [&](Index n) {
      const ConstMatMap qm(qv.data() + n * k * p, k, p);
      const ConstMatMap gq(go.data() + n * k * p, k, p);
      const ConstMatMap xm(x.data() + n * d * p, d, p);
      // gradient w.r.t. the softmax logits
      const Eigen::RowVectorXd inner = (qm.array() * gq.array()).colwise().sum();
      RowMatrix gs = mix * (qm.array() * (gq.rowwise() - inner).array());
      // logits are -dist/(2 sigma^2); weight_kp = gs_kp / sigma_k^2
      RowMatrix wgt = gs;
      for (Index i = 0; i < k; ++i) wgt.row(i) /= sigma[i] * sigma[i];
      if (want_x) {
        MatMap gxm(gx + n * d * p, d, p);
        gxm += dm.transpose() * wgt;
        gxm -= (xm.array().rowwise() * wgt.colwise().sum().array()).matrix();
      }
      if (want_d) {
        RowMatrix gdn = wgt * xm.transpose();
        gdn -= (dm.array().colwise() * wgt.rowwise().sum().array()).matrix();
        gd_parts[static_cast<std::size_t>(n)] = std::move(gdn);
      }
      if (want_s) {
        const ConstMatMap dst(dist.data() + n * k * p, k, p);
        Eigen::VectorXd gsig(k);
        for (Index i = 0; i < k; ++i) {
          const double s = sigma[i];
          gsig[i] = gs.row(i).dot(dst.row(i)) / (s * s * s) * s * (1.0 - s);
        }
        gs_parts[static_cast<std::size_t>(n)] = std::move(gsig);
      }
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

Tensor assign(const Tensor& features, const PartDictionary& dict) {
  return evaluate([&](Graph& g) {
    return assign(g.constant(features), g.constant(dict.parts), g.constant(dict.raw_smoothing));
  });
}

// ---------------------------------------------------------------------------

namespace {

// Inverse in-image kernel mass for each output pixel.
Tensor border_normalizer(const SmoothingKernel& kernel, Index h, Index w) {
  const Index r = kernel.size / 2;
  Tensor inv(Shape{h, w});
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      double mass = 0.0;
      for (Index i = -r; i <= r; ++i) {
        for (Index j = -r; j <= r; ++j) {
          if (y + i >= 0 && y + i < h && x + j >= 0 && x + j < w) mass += kernel.weights(i + r, j + r);
        }
      }
      inv(y, x) = 1.0 / mass;
    }
  }
  return inv;
}

// out[y,x] (+)= scale[y,x] * sum_ij G[i,j] in[y+i, x+j]; transpose=true scatters instead.
void filter_plane(const double* in, double* out, const SmoothingKernel& kernel, const Tensor& inv, Index h, Index w,
                  bool transpose) {
  const Index r = kernel.size / 2;
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const double s = inv(y, x);
      double acc = 0.0;
      for (Index i = -r; i <= r; ++i) {
        const Index yy = y + i;
        if (yy < 0 || yy >= h) continue;
        for (Index j = -r; j <= r; ++j) {
          const Index xx = x + j;
          if (xx < 0 || xx >= w) continue;
          const double wgt = kernel.weights(i + r, j + r) * s;
          if (transpose) {
            out[yy * w + xx] += wgt * in[y * w + x];
          } else {
            acc += wgt * in[yy * w + xx];
          }
        }
      }
      if (!transpose) out[y * w + x] = acc;
    }
  }
}

}  // namespace

Var smooth(Var map, const SmoothingKernel& kernel) {
  const Tensor& q = map.value();
  const Layout L = layout_of(q, "smooth");
  if (kernel.size > std::min(L.h, L.w)) {
    throw std::invalid_argument("smooth: kernel size " + std::to_string(kernel.size) + " exceeds map " +
                                shape_string(q.shape()));
  }
  const Tensor inv = border_normalizer(kernel, L.h, L.w);
  Tensor out(q.shape());
  const Index planes = L.n * L.c;
  for (Index c = 0; c < planes; ++c) {
    filter_plane(q.data() + c * L.plane(), out.data() + c * L.plane(), kernel, inv, L.h, L.w, false);
  }
  return map.graph().record(std::move(out), {map}, [map, kernel, inv, L, planes](Graph& g, const Tensor& go) {
    Tensor& gq = g.grad_buffer(map);
    for (Index c = 0; c < planes; ++c) {
      filter_plane(go.data() + c * L.plane(), gq.data() + c * L.plane(), kernel, inv, L.h, L.w, true);
    }
  });
}

Tensor smooth(const Tensor& map, const SmoothingKernel& kernel) {
  return evaluate([&](Graph& g) { return smooth(g.constant(map), kernel); });
}

Var occurrence(Var smoothed) {
  const Tensor& s = smoothed.value();
  const Layout L = layout_of(s, "occurrence");
  Shape out_shape = L.batched ? Shape{L.n, L.c} : Shape{L.c};
  Tensor t(out_shape);
  std::vector<Index> argmax(static_cast<std::size_t>(L.n * L.c));
  for (Index c = 0; c < L.n * L.c; ++c) {
    const double* plane = s.data() + c * L.plane();
    Index best = 0;
    for (Index i = 1; i < L.plane(); ++i) {
      if (plane[i] > plane[best]) best = i;
    }
    argmax[static_cast<std::size_t>(c)] = c * L.plane() + best;
    t[c] = plane[best];
  }
  return smoothed.graph().record(std::move(t), {smoothed}, [smoothed, argmax](Graph& g, const Tensor& go) {
    Tensor& gs = g.grad_buffer(smoothed);
    for (std::size_t c = 0; c < argmax.size(); ++c) gs[argmax[c]] += go[static_cast<Index>(c)];
  });
}

Tensor occurrence(const Tensor& smoothed) {
  return evaluate([&](Graph& g) { return occurrence(g.constant(smoothed)); });
}

}  // namespace ipart
