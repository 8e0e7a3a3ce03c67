#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ipart/model.hpp"
#include "ipart/synthetic.hpp"

namespace ipart {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using PresenceMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Eval-mode outputs for a whole dataset.
struct ModelOutputs {
  Tensor assignment;  // N×K×h×w, unsmoothed
  Tensor occurrence;  // N×K
  Tensor attention;   // N×K, first head
  std::vector<Tensor> logits;  // per head, N×C or N×1
};

ModelOutputs infer(Model& model, const Dataset& data, Index batch_size = 64, int threads = 1);

/// Fraction correct: argmax against the label, or per-head sign against the
/// attribute in per-attribute mode.
double accuracy(const ModelOutputs& outputs, const Dataset& data);

/// Assignment-weighted centroid per part (K×2, columns y and x) in map cells.
Eigen::MatrixX2d centroids(const Tensor& assignment);

/// One row per sample: (y_0, x_0, ..., y_{K-1}, x_{K-1}) in image pixels,
/// mapping cell i to (i + 0.5)·stride - 0.5.
MatrixX<double> centroid_features(const Tensor& assignment, Index stride);

/// Landmark rows (y_0, x_0, ...) and the matching presence mask.
MatrixX<double> landmark_targets(const Dataset& data);
PresenceMask landmark_presence(const Dataset& data);
VectorX<double> bbox_diagonals(const Dataset& data);

/// Affine map from part centroids to landmarks, one least-squares fit per
/// landmark over the samples where it is present.
template <typename Scalar>
struct LandmarkRegressor {
  MatrixX<Scalar> weight;  // 2L×2K
  VectorX<Scalar> offset;  // 2L

  MatrixX<Scalar> predict(const MatrixX<Scalar>& inputs) const {
    return (inputs * weight.transpose()).rowwise() + offset.transpose();
  }
};

/// Minimum-norm least squares via a complete orthogonal decomposition.
/// Throws std::invalid_argument when a landmark has fewer than 2K+1 samples.
template <typename Scalar>
LandmarkRegressor<Scalar> fit_regressor(const MatrixX<Scalar>& inputs, const MatrixX<Scalar>& targets,
                                        const PresenceMask& present) {
  const Index samples = inputs.rows(), features = inputs.cols(), landmarks = targets.cols() / 2;
  if (targets.rows() != samples || targets.cols() % 2 != 0 || present.rows() != samples ||
      present.cols() != landmarks) {
    throw std::invalid_argument("fit_regressor: inconsistent input, target and mask sizes");
  }
  LandmarkRegressor<Scalar> reg{MatrixX<Scalar>::Zero(2 * landmarks, features), VectorX<Scalar>::Zero(2 * landmarks)};
  for (Index l = 0; l < landmarks; ++l) {
    const Index rows = present.col(l).count();
    if (rows < features + 1) {
      throw std::invalid_argument("fit_regressor: landmark " + std::to_string(l) + " has " + std::to_string(rows) +
                                  " samples, needs at least " + std::to_string(features + 1));
    }
    MatrixX<Scalar> design(rows, features + 1);
    MatrixX<Scalar> rhs(rows, 2);
    for (Index i = 0, r = 0; i < samples; ++i) {
      if (!present(i, l)) continue;
      design.row(r).head(features) = inputs.row(i);
      design(r, features) = Scalar(1);
      rhs.row(r) = targets.row(i).segment(2 * l, 2);
      ++r;
    }
    const MatrixX<Scalar> solution = design.completeOrthogonalDecomposition().solve(rhs);  // (F+1)×2
    reg.weight.middleRows(2 * l, 2) = solution.topRows(features).transpose();
    reg.offset.segment(2 * l, 2) = solution.row(features).transpose();
  }
  return reg;
}

/// Mean over present landmarks of ||predicted - true|| / normalizer.
template <typename Scalar>
Scalar landmark_error(const LandmarkRegressor<Scalar>& reg, const MatrixX<Scalar>& inputs,
                      const MatrixX<Scalar>& targets, const PresenceMask& present, const VectorX<Scalar>& normalizers) {
  const MatrixX<Scalar> predicted = reg.predict(inputs);
  Scalar total = 0;
  Index count = 0;
  for (Index i = 0; i < inputs.rows(); ++i) {
    for (Index l = 0; l < present.cols(); ++l) {
      if (!present(i, l)) continue;
      total += (predicted.row(i).segment(2 * l, 2) - targets.row(i).segment(2 * l, 2)).norm() / normalizers[i];
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("landmark_error: no present landmarks");
  return total / static_cast<Scalar>(count);
}

/// Fraction of samples whose attribution peak misses the bounding box. Maps
/// are h×w and upsampled by nearest neighbour to the image size; ties resolve
/// to the first pixel in row-major order.
double pointing_error(const std::vector<Tensor>& maps, const std::vector<BoundingBox>& boxes, Index image_height,
                      Index image_width);

/// Per-sample attribution maps Σ_k q_k a_k from eval outputs.
std::vector<Tensor> attribution_maps(const ModelOutputs& outputs);

struct EvalReport {
  double accuracy = 0.0;
  double landmark_error = 0.0;
  double pointing_error = 0.0;
  Index samples = 0;

  std::string key_values() const;
  static std::string csv_header();
  std::string csv_row() const;
};

/// Fits the landmark regressor on `fit` and scores everything on `test`.
EvalReport evaluate(Model& model, const Dataset& fit, const Dataset& test, int threads = 1);

}  // namespace ipart
