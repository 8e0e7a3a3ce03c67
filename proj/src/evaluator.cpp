#include "ipart/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numeric>

#include "ipart/trainer.hpp"

namespace ipart {

namespace {

Tensor slice(const Tensor& batched, Index i) {
  Shape inner(batched.shape().begin() + 1, batched.shape().end());
  const Index per = shape_size(inner);
  return Tensor(inner, Tensor::Vector(batched.vec().segment(i * per, per)));
}

void copy_rows(Tensor& dst, Index row, const Tensor& src) {
  dst.vec().segment(row * (dst.size() / dst.dim(0)), src.size()) = src.vec();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ModelOutputs infer(Model& model, const Dataset& data, Index batch_size, int threads) {
  if (data.empty()) throw std::invalid_argument("infer: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("infer: batch size must be positive");
  const Index n = static_cast<Index>(data.size());
  ModelOutputs out;
  for (Index start = 0; start < n; start += batch_size) {
    const Index count = std::min(batch_size, n - start);
    std::vector<Index> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), start);
    Graph g(threads);
    g.set_grad_enabled(false);
    const ForwardResult r = forward(model, g, g.constant(stack_images(data, idx)), Mode::eval);
    if (start == 0) {
      auto with_rows = [n](Shape s) {
        s[0] = n;
        return Tensor(s);
      };
      out.assignment = with_rows(r.assignment.shape());
      out.occurrence = with_rows(r.occurrence.shape());
      out.attention = with_rows(r.attention.front().shape());
      for (const Var& l : r.logits) out.logits.push_back(with_rows(l.shape()));
    }
    copy_rows(out.assignment, start, r.assignment.value());
    copy_rows(out.occurrence, start, r.occurrence.value());
    copy_rows(out.attention, start, r.attention.front().value());
    for (std::size_t h = 0; h < r.logits.size(); ++h) copy_rows(out.logits[h], start, r.logits[h].value());
  }
  return out;
}

double accuracy(const ModelOutputs& outputs, const Dataset& data) {
  const Index n = static_cast<Index>(data.size());
  if (outputs.logits.empty() || outputs.logits.front().dim(0) != n) {
    throw std::invalid_argument("accuracy: outputs do not match the dataset");
  }
  double correct = 0.0, judged = 0.0;
  const bool per_attribute = outputs.logits.size() > 1 || outputs.logits.front().dim(1) == 1;
  for (Index i = 0; i < n; ++i) {
    const Sample& s = data[static_cast<std::size_t>(i)];
    if (per_attribute) {
      for (std::size_t h = 0; h < outputs.logits.size(); ++h) {
        correct += (outputs.logits[h][i] > 0.0) == (s.attributes.at(h) != 0) ? 1.0 : 0.0;
        judged += 1.0;
      }
    } else {
      const Tensor& l = outputs.logits.front();
      Index best = 0;
      for (Index c = 1; c < l.dim(1); ++c) {
        if (l(i, c) > l(i, best)) best = c;
      }
      correct += best == s.label ? 1.0 : 0.0;
      judged += 1.0;
    }
  }
  return correct / judged;
}

Eigen::MatrixX2d centroids(const Tensor& assignment) {
  if (assignment.rank() != 3) {
    throw std::invalid_argument("centroids: expected K×h×w, got " + shape_string(assignment.shape()));
  }
  const Index k = assignment.dim(0), h = assignment.dim(1), w = assignment.dim(2);
  Eigen::MatrixX2d c = Eigen::MatrixX2d::Zero(k, 2);
  for (Index part = 0; part < k; ++part) {
    double mass = 0.0;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const double q = assignment(part, y, x);
        mass += q;
        c(part, 0) += q * static_cast<double>(y);
        c(part, 1) += q * static_cast<double>(x);
      }
    }
    c.row(part) /= mass;
  }
  return c;
}

MatrixX<double> centroid_features(const Tensor& assignment, Index stride) {
  if (assignment.rank() != 4) {
    throw std::invalid_argument("centroid_features: expected N×K×h×w, got " + shape_string(assignment.shape()));
  }
  const Index n = assignment.dim(0), k = assignment.dim(1);
  MatrixX<double> out(n, 2 * k);
  for (Index i = 0; i < n; ++i) {
    const Eigen::MatrixX2d c = centroids(slice(assignment, i));
    for (Index part = 0; part < k; ++part) {
      out(i, 2 * part) = (c(part, 0) + 0.5) * static_cast<double>(stride) - 0.5;
      out(i, 2 * part + 1) = (c(part, 1) + 0.5) * static_cast<double>(stride) - 0.5;
    }
  }
  return out;
}

MatrixX<double> landmark_targets(const Dataset& data) {
  const Index n = static_cast<Index>(data.size());
  const Index l = static_cast<Index>(data.front().landmarks.size());
  MatrixX<double> out(n, 2 * l);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < l; ++j) {
      const Point& p = data[static_cast<std::size_t>(i)].landmarks.at(static_cast<std::size_t>(j));
      out(i, 2 * j) = p.y;
      out(i, 2 * j + 1) = p.x;
    }
  }
  return out;
}

PresenceMask landmark_presence(const Dataset& data) {
  const Index n = static_cast<Index>(data.size());
  const Index l = static_cast<Index>(data.front().presence.size());
  PresenceMask out(n, l);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < l; ++j) out(i, j) = data[static_cast<std::size_t>(i)].presence.at(static_cast<std::size_t>(j));
  }
  return out;
}

VectorX<double> bbox_diagonals(const Dataset& data) {
  VectorX<double> out(static_cast<Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) out[static_cast<Index>(i)] = data[i].bbox.diagonal();
  return out;
}

double pointing_error(const std::vector<Tensor>& maps, const std::vector<BoundingBox>& boxes, Index image_height,
                      Index image_width) {
  if (maps.empty() || maps.size() != boxes.size()) {
    throw std::invalid_argument("pointing_error: need one map per bounding box");
  }
  Index misses = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const Tensor& m = maps[i];
    if (m.rank() != 2) throw std::invalid_argument("pointing_error: maps must be h×w, got " + shape_string(m.shape()));
    const Index h = m.dim(0), w = m.dim(1);
    Index best_y = 0, best_x = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (Index y = 0; y < image_height; ++y) {
      for (Index x = 0; x < image_width; ++x) {
        const double v = m(y * h / image_height, x * w / image_width);
        if (v > best) {
          best = v;
          best_y = y;
          best_x = x;
        }
      }
    }
    if (!boxes[i].contains(Point{static_cast<double>(best_y), static_cast<double>(best_x)})) ++misses;
  }
  return static_cast<double>(misses) / static_cast<double>(maps.size());
}

std::vector<Tensor> attribution_maps(const ModelOutputs& outputs) {
  std::vector<Tensor> maps;
  const Index n = outputs.assignment.dim(0);
  for (Index i = 0; i < n; ++i) {
    maps.push_back(attribute_pixels(slice(outputs.assignment, i), slice(outputs.attention, i)));
  }
  return maps;
}

std::string EvalReport::key_values() const {
  return "accuracy=" + fmt(accuracy) + "\nlandmark_error=" + fmt(landmark_error) + "\npointing_error=" +
         fmt(pointing_error) + "\nsamples=" + std::to_string(samples) + "\n";
}

std::string EvalReport::csv_header() { return "accuracy,landmark_error,pointing_error,samples"; }

std::string EvalReport::csv_row() const {
  return fmt(accuracy) + "," + fmt(landmark_error) + "," + fmt(pointing_error) + "," + std::to_string(samples);
}

EvalReport evaluate(Model& model, const Dataset& fit, const Dataset& test, int threads) {
  const Index stride = model.config.backbone.total_stride();
  const ModelOutputs fit_out = infer(model, fit, 64, threads);
  const ModelOutputs test_out = infer(model, test, 64, threads);

  const auto reg = fit_regressor<double>(centroid_features(fit_out.assignment, stride), landmark_targets(fit),
                                         landmark_presence(fit));

  EvalReport report;
  report.samples = static_cast<Index>(test.size());
  report.accuracy = accuracy(test_out, test);
  report.landmark_error = landmark_error<double>(reg, centroid_features(test_out.assignment, stride),
                                                 landmark_targets(test), landmark_presence(test), bbox_diagonals(test));
  std::vector<BoundingBox> boxes;
  for (const Sample& s : test) boxes.push_back(s.bbox);
  const Shape& image = test.front().image.shape();
  report.pointing_error = pointing_error(attribution_maps(test_out), boxes, image[1], image[2]);
  return report;
}

}  // namespace ipart
