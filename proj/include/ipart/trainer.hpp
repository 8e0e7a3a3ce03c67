#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ipart/io.hpp"
#include "ipart/model.hpp"
#include "ipart/regularizer.hpp"
#include "ipart/synthetic.hpp"

namespace ipart {

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Index batch_size = 32;
  Index epochs = 40;
  double w_cls = 1.0;
  double w_reg = 0.1;
  double prior_alpha = 1.0;
  double prior_beta = 1e-3;
  double eps = 1e-6;
  std::uint64_t seed = 0;
  bool flip = true;
  bool crop = false;
  Index crop_pad = 4;
  int threads = 1;

  BetaPrior<double> prior() const { return {prior_alpha, prior_beta}; }
  RegularizerConfig regularizer() const { return {eps, true}; }
  /// First epoch trained at one tenth of the base rate.
  Index decay_epoch() const;
  void validate() const;
};

struct EpochMetrics {
  Index epoch = 0;
  double loss = 0.0;
  double cls_loss = 0.0;
  double reg_loss = 0.0;  // unweighted occurrence loss
  double accuracy = 0.0;
};

struct MetricsLog {
  std::vector<EpochMetrics> epochs;

  /// `epoch,loss,cls_loss,reg_loss,accuracy` with full-precision values.
  std::string csv() const;
};

struct LossTerms {
  Var total;
  Var classification;
  Var regularization;
};

/// w_cls·L_cls + w_reg·L_occ. L_cls is cross entropy, or the mean binary
/// cross entropy over heads in per-attribute mode.
LossTerms total_loss(const ForwardResult& forward, const std::vector<int>& labels, const Tensor& attribute_targets,
                     const PriorQuantiles& quantiles, const TrainConfig& cfg);
double combine_losses(double classification, double regularization, double w_cls, double w_reg);

/// Mini-batch SGD with momentum and weight decay. Each epoch reshuffles from
/// the run seed; the rate drops ×0.1 at decay_epoch(). Throws NumericalError
/// naming the batch when the loss is not finite.
MetricsLog train(Model& model, const Dataset& data, const TrainConfig& cfg,
                 const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Stacks images of the selected samples into N×3×H×W.
Tensor stack_images(const Dataset& data, const std::vector<Index>& indices);

NamedTensors checkpoint_tensors(Model& model);
void restore_checkpoint(Model& model, const NamedTensors& tensors);
void save_checkpoint(Model& model, const std::filesystem::path& path);
void load_checkpoint(Model& model, const std::filesystem::path& path);

}  // namespace ipart
