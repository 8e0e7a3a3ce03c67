#include "ipart/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "ipart/parallel.hpp"

namespace ipart::ops {

namespace {

using RowMatrix = Tensor::RowMatrix;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

Tensor map_values(const Tensor& a, double (*fn)(double)) {
  Tensor out(a.shape());
  for (Index i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out(a.shape());
  out.vec() = a.value().vec() + b.value().vec();
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor out(a.shape());
  out.vec() = a.value().vec() - b.value().vec();
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    if (g.requires_grad(b)) g.grad_buffer(b).vec() -= go.vec();
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor out(a.shape());
  out.vec() = a.value().vec().cwiseProduct(b.value().vec());
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.requires_grad(a)) g.grad_buffer(a).vec() += go.vec().cwiseProduct(g.value(b).vec());
    if (g.requires_grad(b)) g.grad_buffer(b).vec() += go.vec().cwiseProduct(g.value(a).vec());
  });
}

Var scale(Var a, double s) {
  Tensor out(a.shape());
  out.vec() = a.value().vec() * s;
  return a.graph().record(std::move(out), {a}, [a, s](Graph& g, const Tensor& go) {
    g.grad_buffer(a).vec() += s * go.vec();
  });
}

Var sum(Var a) {
  Tensor out = Tensor::scalar(a.value().vec().sum());
  return a.graph().record(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    g.grad_buffer(a).vec().array() += go[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var relu(Var a) {
  Tensor out = map_values(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return a.graph().record(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    const Tensor& x = g.value(a);
    Tensor& ga = g.grad_buffer(a);
    // subgradient at 0 is 0
    for (Index i = 0; i < x.size(); ++i) {
      if (x[i] > 0.0) ga[i] += go[i];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph().record(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    g.grad_buffer(a).vec() += go.vec();
  });
}

Var transpose(Var a) {
  if (a.value().rank() != 2) throw std::invalid_argument("transpose: expected rank 2, got " + shape_string(a.shape()));
  const Index r = a.shape()[0], c = a.shape()[1];
  Tensor out(Shape{c, r});
  out.matrix(c, r) = a.value().matrix(r, c).transpose();
  return a.graph().record(std::move(out), {a}, [a, r, c](Graph& g, const Tensor& go) {
    g.grad_buffer(a).matrix(r, c) += go.matrix(c, r).transpose();
  });
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvGeometry {
  Index n, c, h, w, o, kh, kw, stride, pad, ho, wo;
  Index patch() const { return c * kh * kw; }
  Index out_plane() const { return ho * wo; }
};

void im2col(const double* img, const ConvGeometry& g, double* cols) {
  const Index plane = g.out_plane();
  for (Index ch = 0; ch < g.c; ++ch) {
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        double* row = cols + ((ch * g.kh + i) * g.kw + j) * plane;
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index y = oy * g.stride + i - g.pad;
          double* dst = row + oy * g.wo;
          if (y < 0 || y >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = img + (ch * g.h + y) * g.w;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index x = ox * g.stride + j - g.pad;
            dst[ox] = (x >= 0 && x < g.w) ? src[x] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* img) {
  const Index plane = g.out_plane();
  for (Index ch = 0; ch < g.c; ++ch) {
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        const double* row = cols + ((ch * g.kh + i) * g.kw + j) * plane;
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index y = oy * g.stride + i - g.pad;
          if (y < 0 || y >= g.h) continue;
          double* dst = img + (ch * g.h + y) * g.w;
          const double* src = row + oy * g.wo;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index x = ox * g.stride + j - g.pad;
            if (x >= 0 && x < g.w) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var input, Var kernel, Var bias, Index stride, Padding padding) {
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  const bool batched = x.rank() == 4;
  if ((x.rank() != 3 && x.rank() != 4) || k.rank() != 4 || k.dim(1) != x.dim(batched ? 1 : 0)) {
    throw std::invalid_argument("conv2d: shape mismatch between input " + shape_string(x.shape()) +
                                " and kernel " + shape_string(k.shape()));
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
  ConvGeometry geo{};
  geo.n = batched ? x.dim(0) : 1;
  geo.c = x.dim(batched ? 1 : 0);
  geo.h = x.dim(batched ? 2 : 1);
  geo.w = x.dim(batched ? 3 : 2);
  geo.o = k.dim(0);
  geo.kh = k.dim(2);
  geo.kw = k.dim(3);
  geo.stride = stride;
  if (padding == Padding::same) {
    if (geo.kh % 2 == 0 || geo.kw % 2 == 0 || geo.kh != geo.kw) {
      throw std::invalid_argument("conv2d: same padding needs an odd square kernel, got " + shape_string(k.shape()));
    }
    geo.pad = (geo.kh - 1) / 2;
  }
  if (geo.kh > geo.h + 2 * geo.pad || geo.kw > geo.w + 2 * geo.pad) {
    throw std::invalid_argument("conv2d: kernel " + shape_string(k.shape()) + " larger than padded input " +
                                shape_string(x.shape()));
  }
  const bool has_bias = bias.valid();
  if (has_bias && (bias.value().rank() != 1 || bias.value().dim(0) != geo.o)) {
    throw std::invalid_argument("conv2d: bias " + shape_string(bias.shape()) + " does not match kernel " +
                                shape_string(k.shape()));
  }
  geo.ho = (geo.h + 2 * geo.pad - geo.kh) / geo.stride + 1;
  geo.wo = (geo.w + 2 * geo.pad - geo.kw) / geo.stride + 1;

  Graph& graph = input.graph();
  const Index in_sample = geo.c * geo.h * geo.w;
  const Index out_sample = geo.o * geo.out_plane();
  const bool identity_cols = geo.kh == 1 && geo.kw == 1 && geo.stride == 1 && geo.pad == 0;

  auto cols = std::make_shared<std::vector<RowMatrix>>(static_cast<std::size_t>(geo.n));
  Shape out_shape = batched ? Shape{geo.n, geo.o, geo.ho, geo.wo} : Shape{geo.o, geo.ho, geo.wo};
  Tensor out(out_shape);
  const ConstMatMap wm(k.data(), geo.o, geo.patch());

  parallel_for(geo.n, graph.threads(), [&](Index n) {
    RowMatrix& cm = (*cols)[static_cast<std::size_t>(n)];
    if (identity_cols) {
      cm = ConstMatMap(x.data() + n * in_sample, geo.patch(), geo.out_plane());
    } else {
      cm.resize(geo.patch(), geo.out_plane());
      im2col(x.data() + n * in_sample, geo, cm.data());
    }
    MatMap om(out.data() + n * out_sample, geo.o, geo.out_plane());
    om.noalias() = wm * cm;
    if (has_bias) om.colwise() += bias.value().vec();
  });

  std::vector<Var> parents{input, kernel};
  if (has_bias) parents.push_back(bias);
  return graph.record(std::move(out), parents, [input, kernel, bias, has_bias, geo, cols, in_sample, out_sample](
                                                    Graph& g, const Tensor& go) {
    const bool want_x = g.requires_grad(input);
    const bool want_k = g.requires_grad(kernel);
    const bool want_b = has_bias && g.requires_grad(bias);
    const Tensor& k = g.value(kernel);
    const ConstMatMap wm(k.data(), geo.o, geo.patch());
    double* gx = want_x ? g.grad_buffer(input).data() : nullptr;
    std::vector<RowMatrix> gk_parts(want_k ? static_cast<std::size_t>(geo.n) : 0);

    parallel_for(geo.n, g.threads(), [&](Index n) {
      const ConstMatMap gom(go.data() + n * out_sample, geo.o, geo.out_plane());
      const RowMatrix& cm = (*cols)[static_cast<std::size_t>(n)];
      if (want_k) gk_parts[static_cast<std::size_t>(n)].noalias() = gom * cm.transpose();
      if (want_x) {
        RowMatrix gcols = wm.transpose() * gom;
        if (geo.kh == 1 && geo.kw == 1 && geo.stride == 1 && geo.pad == 0) {
          MatMap(gx + n * in_sample, geo.patch(), geo.out_plane()) += gcols;
        } else {
          col2im(gcols.data(), geo, gx + n * in_sample);
        }
      }
    });
    if (want_k) {
      MatMap gk(g.grad_buffer(kernel).data(), geo.o, geo.patch());
      for (const RowMatrix& part : gk_parts) gk += part;
    }
    if (want_b) {
      Tensor& gb = g.grad_buffer(bias);
      for (Index n = 0; n < geo.n; ++n) {
        gb.vec() += ConstMatMap(go.data() + n * out_sample, geo.o, geo.out_plane()).rowwise().sum();
      }
    }
  });
}

Var conv2d(Var input, Var kernel, Index stride, Padding padding) {
  return conv2d(input, kernel, Var(), stride, padding);
}

// ---------------------------------------------------------------------------
// batch_norm

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode, double eps, double momentum) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw std::invalid_argument("batch_norm: expected N×C×…, got " + shape_string(xv.shape()));
  const Index n = xv.dim(0), c = xv.dim(1);
  const Index inner = xv.size() / (n * c);
  const Index m = n * inner;
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw std::invalid_argument("batch_norm: affine parameters do not match " + shape_string(xv.shape()));
  }
  if (state.running_mean.size() != c) state = BatchNormState(c);
  if (mode == Mode::eval && !state.initialized) {
    throw std::logic_error("batch_norm: eval mode requested before any training step");
  }

  Eigen::VectorXd mu(c), inv_std(c);
  if (mode == Mode::train) {
    Eigen::VectorXd var(c);
    for (Index ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (Index b = 0; b < n; ++b) s += xv.vec().segment((b * c + ch) * inner, inner).sum();
      mu[ch] = s / static_cast<double>(m);
      double ss = 0.0;
      for (Index b = 0; b < n; ++b) {
        ss += (xv.vec().segment((b * c + ch) * inner, inner).array() - mu[ch]).square().sum();
      }
      var[ch] = ss / static_cast<double>(m);
      const double denom = std::sqrt(var[ch] + eps);
      inv_std[ch] = denom > 0.0 ? 1.0 / denom : 0.0;
    }
    const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
    state.running_mean.vec() = (1.0 - momentum) * state.running_mean.vec() + momentum * mu;
    state.running_var.vec() = (1.0 - momentum) * state.running_var.vec() + momentum * unbias * var;
    state.initialized = true;
  } else {
    mu = state.running_mean.vec();
    for (Index ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + eps);
  }

  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  const Tensor& gm = gamma.value();
  const Tensor& bt = beta.value();
  for (Index b = 0; b < n; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (b * c + ch) * inner;
      xhat.vec().segment(off, inner) = (xv.vec().segment(off, inner).array() - mu[ch]) * inv_std[ch];
      out.vec().segment(off, inner) = (gm[ch] * xhat.vec().segment(off, inner).array() + bt[ch]).matrix();
    }
  }

  return x.graph().record(std::move(out), {x, gamma, beta},
                          [x, gamma, beta, mode, n, c, inner, m, inv_std, xhat = std::move(xhat)](
                              Graph& g, const Tensor& go) {
    Eigen::VectorXd sum_g = Eigen::VectorXd::Zero(c), sum_gx = Eigen::VectorXd::Zero(c);
    for (Index b = 0; b < n; ++b) {
      for (Index ch = 0; ch < c; ++ch) {
        const Index off = (b * c + ch) * inner;
        sum_g[ch] += go.vec().segment(off, inner).sum();
        sum_gx[ch] += go.vec().segment(off, inner).dot(xhat.vec().segment(off, inner));
      }
    }
    if (g.requires_grad(gamma)) g.grad_buffer(gamma).vec() += sum_gx;
    if (g.requires_grad(beta)) g.grad_buffer(beta).vec() += sum_g;
    if (!g.requires_grad(x)) return;
    const Tensor& gm = g.value(gamma);
    Tensor& gx = g.grad_buffer(x);
    const double md = static_cast<double>(m);
    for (Index b = 0; b < n; ++b) {
      for (Index ch = 0; ch < c; ++ch) {
        const Index off = (b * c + ch) * inner;
        const double k = gm[ch] * inv_std[ch];
        if (mode == Mode::train) {
          gx.vec().segment(off, inner).array() +=
              k * (go.vec().segment(off, inner).array() - sum_g[ch] / md -
                   xhat.vec().segment(off, inner).array() * (sum_gx[ch] / md));
        } else {
          gx.vec().segment(off, inner) += k * go.vec().segment(off, inner);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// softmax and losses

Var softmax_axis(Var x, Index axis) {
  const Tensor& xv = x.value();
  if (axis < 0 || axis >= xv.rank()) {
    throw std::invalid_argument("softmax_axis: axis " + std::to_string(axis) + " invalid for " + shape_string(xv.shape()));
  }
  Index outer = 1, inner = 1;
  for (Index a = 0; a < axis; ++a) outer *= xv.dim(a);
  for (Index a = axis + 1; a < xv.rank(); ++a) inner *= xv.dim(a);
  const Index len = xv.dim(axis);
  Tensor y(xv.shape());
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * len * inner + i;
      double mx = xv[base];
      for (Index j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double s = 0.0;
      for (Index j = 0; j < len; ++j) s += (y[base + j * inner] = std::exp(xv[base + j * inner] - mx));
      for (Index j = 0; j < len; ++j) y[base + j * inner] /= s;
    }
  }
  Tensor saved = y;
  return x.graph().record(std::move(y), {x}, [x, y = std::move(saved), outer, inner, len](Graph& g,
                                                                                       const Tensor& go) {
    Tensor& gx = g.grad_buffer(x);
    for (Index o = 0; o < outer; ++o) {
      for (Index i = 0; i < inner; ++i) {
        const Index base = o * len * inner + i;
        double dot = 0.0;
        for (Index j = 0; j < len; ++j) dot += go[base + j * inner] * y[base + j * inner];
        for (Index j = 0; j < len; ++j) gx[base + j * inner] += y[base + j * inner] * (go[base + j * inner] - dot);
      }
    }
  });
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != static_cast<Index>(labels.size())) {
    throw std::invalid_argument("cross_entropy: logits " + shape_string(z.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const Index n = z.dim(0), c = z.dim(1);
  Tensor prob(z.shape());
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw std::invalid_argument("cross_entropy: label out of range");
    auto row = z.matrix(i * c, 1, c);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    loss += lse - row(0, y);
    prob.matrix(i * c, 1, c) = (row.array() - lse).exp().matrix();
  }
  loss /= static_cast<double>(n);
  return logits.graph().record(Tensor::scalar(loss), {logits},
                               [logits, labels, prob = std::move(prob), n, c](Graph& g, const Tensor& go) {
    Tensor& gz = g.grad_buffer(logits);
    const double s = go[0] / static_cast<double>(n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < c; ++j) {
        const double t = j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        gz[i * c + j] += s * (prob[i * c + j] - t);
      }
    }
  });
}

Var binary_cross_entropy_with_logits(Var logits, const Tensor& targets) {
  const Tensor& z = logits.value();
  require_same_shape(z.shape(), targets.shape(), "binary_cross_entropy_with_logits");
  double loss = 0.0;
  for (Index i = 0; i < z.size(); ++i) {
    const double l = z[i];
    loss += std::max(l, 0.0) - l * targets[i] + std::log1p(std::exp(-std::abs(l)));
  }
  const double count = static_cast<double>(z.size());
  return logits.graph().record(Tensor::scalar(loss / count), {logits},
                               [logits, targets, count](Graph& g, const Tensor& go) {
    const Tensor& z = g.value(logits);
    Tensor& gz = g.grad_buffer(logits);
    for (Index i = 0; i < z.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-z[i]));
      gz[i] += go[0] * (p - targets[i]) / count;
    }
  });
}

Var linear(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  if (xv.rank() != 2 || w.rank() != 2 || w.dim(1) != xv.dim(1) || bias.value().size() != w.dim(0)) {
    throw std::invalid_argument("linear: shape mismatch between input " + shape_string(xv.shape()) +
                                " and weight " + shape_string(w.shape()));
  }
  const Index n = xv.dim(0), d = xv.dim(1), c = w.dim(0);
  Tensor out(Shape{n, c});
  out.matrix(n, c) = xv.matrix(n, d) * w.matrix(c, d).transpose();
  out.matrix(n, c).rowwise() += bias.value().vec().transpose();
  return x.graph().record(std::move(out), {x, weight, bias}, [x, weight, bias, n, d, c](Graph& g, const Tensor& go) {
    const auto gm = go.matrix(n, c);
    if (g.requires_grad(x)) g.grad_buffer(x).matrix(n, d) += gm * g.value(weight).matrix(c, d);
    if (g.requires_grad(weight)) g.grad_buffer(weight).matrix(c, d) += gm.transpose() * g.value(x).matrix(n, d);
    if (g.requires_grad(bias)) g.grad_buffer(bias).vec() += gm.colwise().sum().transpose();
  });
}

Var region_weighted_sum(Var regions, Var weights) {
  const Tensor& z = regions.value();
  const Tensor& a = weights.value();
  if (z.rank() != 3 || a.rank() != 2 || a.dim(0) != z.dim(0) || a.dim(1) != z.dim(2)) {
    throw std::invalid_argument("region_weighted_sum: shape mismatch between regions " + shape_string(z.shape()) +
                                " and weights " + shape_string(a.shape()));
  }
  const Index n = z.dim(0), d = z.dim(1), k = z.dim(2);
  Tensor out(Shape{n, d});
  for (Index i = 0; i < n; ++i) {
    out.vec().segment(i * d, d) = z.matrix(i * d * k, d, k) * a.vec().segment(i * k, k);
  }
  return regions.graph().record(std::move(out), {regions, weights}, [regions, weights, n, d, k](Graph& g,
                                                                                              const Tensor& go) {
    const bool want_z = g.requires_grad(regions), want_a = g.requires_grad(weights);
    const Tensor& z = g.value(regions);
    const Tensor& a = g.value(weights);
    for (Index i = 0; i < n; ++i) {
      const auto gi = go.vec().segment(i * d, d);
      if (want_z) g.grad_buffer(regions).matrix(i * d * k, d, k) += gi * a.vec().segment(i * k, k).transpose();
      if (want_a) g.grad_buffer(weights).vec().segment(i * k, k) += z.matrix(i * d * k, d, k).transpose() * gi;
    }
  });
}

}  // namespace ipart::ops
