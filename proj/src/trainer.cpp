#include "ipart/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "ipart/errors.hpp"
#include "ipart/io.hpp"

namespace ipart {

namespace {

Index argmax_row(const Tensor& logits, Index row) {
  const Index c = logits.dim(1);
  Index best = 0;
  for (Index j = 1; j < c; ++j) {
    if (logits(row, j) > logits(row, best)) best = j;
  }
  return best;
}

// Horizontal flip and padded random shift, applied in place to one 3×H×W image.
void augment(Tensor& image, bool flip, Index shift_y, Index shift_x) {
  const Index h = image.dim(1), w = image.dim(2);
  if (flip) {
    for (Index c = 0; c < 3; ++c) {
      for (Index y = 0; y < h; ++y) {
        double* row = image.data() + (c * h + y) * w;
        std::reverse(row, row + w);
      }
    }
  }
  if (shift_y == 0 && shift_x == 0) return;
  const Tensor src = image;
  for (Index c = 0; c < 3; ++c) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const Index sy = std::clamp<Index>(y + shift_y, 0, h - 1);
        const Index sx = std::clamp<Index>(x + shift_x, 0, w - 1);
        image(c, y, x) = src(c, sy, sx);
      }
    }
  }
}

}  // namespace

Index TrainConfig::decay_epoch() const { return static_cast<Index>(std::llround(static_cast<double>(epochs) * 2.0 / 3.0)); }

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0)) {
    throw ConfigError("train: learning rate, momentum or weight decay out of range");
  }
  if (batch_size < 1 || epochs < 0) throw ConfigError("train: batch size must be positive and epochs nonnegative");
  if (!(w_cls >= 0.0) || !(w_reg >= 0.0)) throw ConfigError("train: loss weights must be nonnegative");
  if (w_reg > 0.0 && batch_size < 2) throw ConfigError("train: the occurrence regularizer needs batch size >= 2");
  if (!(prior_alpha > 0.0) || !(prior_beta > 0.0)) throw ConfigError("train: prior parameters must be positive");
  if (!(eps > 0.0)) throw ConfigError("train: eps must be positive");
  if (crop_pad < 0) throw ConfigError("train: crop padding must be nonnegative");
}

std::string MetricsLog::csv() const {
  std::string out = "epoch,loss,cls_loss,reg_loss,accuracy\n";
  char buf[256];
  for (const auto& m : epochs) {
    std::snprintf(buf, sizeof buf, "%td,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.loss, m.cls_loss, m.reg_loss,
                  m.accuracy);
    out += buf;
  }
  return out;
}

double combine_losses(double classification, double regularization, double w_cls, double w_reg) {
  return w_cls * classification + w_reg * regularization;
}

LossTerms total_loss(const ForwardResult& fwd, const std::vector<int>& labels, const Tensor& attribute_targets,
                     const PriorQuantiles& quantiles, const TrainConfig& cfg) {
  LossTerms terms;
  if (fwd.logits.empty()) throw std::invalid_argument("total_loss: no classifier heads");
  if (fwd.logits.size() == 1 && fwd.logits[0].shape()[1] > 1) {
    terms.classification = ops::cross_entropy(fwd.logits[0], labels);
  } else {
    const Index n = fwd.logits[0].shape()[0];
    const Index m = static_cast<Index>(fwd.logits.size());
    if (attribute_targets.rank() != 2 || attribute_targets.dim(0) != n || attribute_targets.dim(1) != m) {
      throw std::invalid_argument("total_loss: attribute targets " + shape_string(attribute_targets.shape()) +
                                  " do not match " + std::to_string(m) + " heads");
    }
    Var acc;
    for (Index h = 0; h < m; ++h) {
      Tensor column(Shape{n, 1});
      for (Index i = 0; i < n; ++i) column[i] = attribute_targets(i, h);
      Var l = ops::binary_cross_entropy_with_logits(fwd.logits[static_cast<std::size_t>(h)], column);
      acc = acc.valid() ? ops::add(acc, l) : l;
    }
    terms.classification = ops::scale(acc, 1.0 / static_cast<double>(m));
  }
  terms.regularization = occurrence_loss(ops::transpose(fwd.occurrence), quantiles, cfg.regularizer());
  terms.total = ops::add(ops::scale(terms.classification, cfg.w_cls), ops::scale(terms.regularization, cfg.w_reg));
  return terms;
}

Tensor stack_images(const Dataset& data, const std::vector<Index>& indices) {
  if (indices.empty()) throw std::invalid_argument("stack_images: empty selection");
  const Shape& s = data.at(static_cast<std::size_t>(indices.front())).image.shape();
  const Index per = shape_size(s);
  Tensor batch(Shape{static_cast<Index>(indices.size()), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = data.at(static_cast<std::size_t>(indices[i])).image;
    require_same_shape(img.shape(), s, "stack_images");
    batch.vec().segment(static_cast<Index>(i) * per, per) = img.vec();
  }
  return batch;
}

MetricsLog train(Model& model, const Dataset& data, const TrainConfig& cfg,
                 const std::function<void(const EpochMetrics&)>& on_epoch) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: dataset is empty");
  const bool per_attribute = model.config.heads == HeadMode::per_attribute;
  if (per_attribute && static_cast<Index>(data.front().attributes.size()) != model.head.heads()) {
    throw ConfigError("train: dataset attributes do not match the number of heads");
  }

  const Index total = static_cast<Index>(data.size());
  const Index batch = std::min(cfg.batch_size, total);
  const Index batches = total / batch;  // trailing partial batch dropped
  QuantileCache cache;
  const auto quantiles = cache.get(cfg.prior(), batch);

  auto params = model.parameters();
  std::vector<Tensor> velocity;
  for (const auto& p : params) velocity.emplace_back(p.tensor->shape());

  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x5348));
  std::mt19937_64 augment_rng(derive_seed(cfg.seed, 0x4155));
  std::vector<Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Index{0});

  MetricsLog log;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = epoch >= cfg.decay_epoch() ? cfg.learning_rate * 0.1 : cfg.learning_rate;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochMetrics m;
    m.epoch = epoch + 1;
    double correct = 0.0, judged = 0.0;

    for (Index b = 0; b < batches; ++b) {
      std::vector<Index> idx(order.begin() + b * batch, order.begin() + (b + 1) * batch);
      Tensor images = stack_images(data, idx);
      std::vector<int> labels;
      Tensor targets(Shape{batch, std::max<Index>(1, model.head.heads())});
      const Index per = images.size() / batch;
      for (Index i = 0; i < batch; ++i) {
        const Sample& s = data[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        labels.push_back(s.label);
        if (per_attribute) {
          for (Index h = 0; h < model.head.heads(); ++h) targets(i, h) = s.attributes[static_cast<std::size_t>(h)];
        }
        const bool flip = cfg.flip && (augment_rng() & 1U);
        Index dy = 0, dx = 0;
        if (cfg.crop && cfg.crop_pad > 0) {
          std::uniform_int_distribution<Index> shift(-cfg.crop_pad, cfg.crop_pad);
          dy = shift(augment_rng);
          dx = shift(augment_rng);
        }
        if (flip || dy != 0 || dx != 0) {
          Tensor img(s.image.shape(), images.vec().segment(i * per, per));
          augment(img, flip, dy, dx);
          images.vec().segment(i * per, per) = img.vec();
        }
      }

      const std::string where = " at epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b);
      Graph g(cfg.threads);
      ForwardResult fwd = forward(model, g, g.constant(std::move(images)), Mode::train);
      LossTerms terms;
      try {
        terms = total_loss(fwd, labels, targets, *quantiles, cfg);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string("train: ") + e.what() + where);
      }
      const double loss = terms.total.value()[0];
      if (!std::isfinite(loss)) throw NumericalError("train: non-finite loss" + where);
      g.backward(terms.total);

      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& value = *params[p].tensor;
        Tensor& v = velocity[p];
        const Tensor* grad = g.parameter_grad(value);
        v.vec() *= cfg.momentum;
        if (grad) v.vec() += grad->vec();
        if (params[p].decay) v.vec() += cfg.weight_decay * value.vec();
        value.vec() -= lr * v.vec();
        if (!value.all_finite()) {
          throw NumericalError("train: parameter " + params[p].name + " became non-finite" + where);
        }
      }

      const double nb = static_cast<double>(batch);
      m.loss += loss * nb;
      m.cls_loss += terms.classification.value()[0] * nb;
      m.reg_loss += terms.regularization.value()[0] * nb;
      for (Index i = 0; i < batch; ++i) {
        if (per_attribute) {
          for (Index h = 0; h < model.head.heads(); ++h) {
            const bool predicted = fwd.logits[static_cast<std::size_t>(h)].value()[i] > 0.0;
            correct += predicted == (targets(i, h) > 0.5) ? 1.0 : 0.0;
            judged += 1.0;
          }
        } else {
          correct += argmax_row(fwd.logits[0].value(), i) == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
          judged += 1.0;
        }
      }
    }
    const double seen = static_cast<double>(batches * batch);
    m.loss /= seen;
    m.cls_loss /= seen;
    m.reg_loss /= seen;
    m.accuracy = correct / judged;
    log.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return log;
}

NamedTensors checkpoint_tensors(Model& model) {
  NamedTensors out;
  for (const auto& p : model.parameters()) out.emplace_back(p.name, *p.tensor);
  for (const auto& b : model.buffers()) {
    out.emplace_back(b.name + ".running_mean", b.state->running_mean);
    out.emplace_back(b.name + ".running_var", b.state->running_var);
    out.emplace_back(b.name + ".initialized", Tensor::scalar(b.state->initialized ? 1.0 : 0.0));
  }
  return out;
}

void restore_checkpoint(Model& model, const NamedTensors& tensors) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw IoError("checkpoint: missing tensor " + name);
  };
  auto load = [&](const std::string& name, Tensor& dst) {
    const Tensor& src = find(name);
    if (src.shape() != dst.shape()) {
      throw IoError("checkpoint: tensor " + name + " has shape " + shape_string(src.shape()) + ", model expects " +
                    shape_string(dst.shape()));
    }
    dst = src;
  };
  for (const auto& p : model.parameters()) load(p.name, *p.tensor);
  for (const auto& b : model.buffers()) {
    load(b.name + ".running_mean", b.state->running_mean);
    load(b.name + ".running_var", b.state->running_var);
    b.state->initialized = find(b.name + ".initialized")[0] != 0.0;
  }
}

void save_checkpoint(Model& model, const std::filesystem::path& path) {
  write_tensor_dump(path, checkpoint_tensors(model));
}

void load_checkpoint(Model& model, const std::filesystem::path& path) {
  restore_checkpoint(model, read_tensor_dump(path));
}

}  // namespace ipart
