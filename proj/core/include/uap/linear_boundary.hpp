#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "uap/tensor.hpp"

namespace uap {

/// Affine multiclass scorer f_i(x) = w_i . x + b_i with C >= 2 classes.
class LinearClassifier {
 public:
  /// weights: (C, n); offsets: (C). Rejects identical weight rows, whose
  /// pairwise boundary is undefined.
  LinearClassifier(Tensor weights, Tensor offsets);
  /// Zero offsets.
  explicit LinearClassifier(Tensor weights);

  std::size_t num_classes() const { return weights_.dim(0); }
  std::size_t input_dim() const { return weights_.dim(1); }
  const Tensor& weights() const { return weights_; }
  const Tensor& offsets() const { return offsets_; }

  double score(std::size_t cls, const Tensor& x) const;
  std::vector<double> scores(const Tensor& x) const;
  std::size_t predict(const Tensor& x) const;

  LinearClassifier scaled(double c) const;

 private:
  Tensor weights_;
  Tensor offsets_;
};

struct CrossingReport {
  Tensor perturbation;  ///< (1 + eta) * r
  std::size_t iterations = 0;
  std::vector<std::size_t> crossed_indices;  ///< targets beaten at x + perturbation, ascending
  std::vector<std::size_t> targets;          ///< the frozen k nearest boundaries
  bool converged = false;
};

/// |w.x + b| / ||w||.
double binary_distance(const Tensor& w, double b, const Tensor& x);

/// Smallest r with w.(x + r) + b = 0: r = -f(x) w / ||w||^2.
Tensor binary_min_perturbation(const Tensor& w, double b, const Tensor& x);

/// Crossing distance to boundary {f_y = f_i}: (f_y - f_i) / ||w_y - w_i||.
double boundary_distance(const LinearClassifier& clf, const Tensor& x, std::size_t y, std::size_t i);

/// The `count` classes i != y with smallest boundary_distance, ascending by
/// distance, ties to the smaller index. Requires x classified as y.
std::vector<std::size_t> nearest_boundaries(const LinearClassifier& clf, const Tensor& x, std::size_t y,
                                            std::size_t count);

std::size_t nearest_boundary(const LinearClassifier& clf, const Tensor& x, std::size_t y);

/// Projection of x onto the nearest boundary, minus x.
Tensor multiclass_min_perturbation(const LinearClassifier& clf, const Tensor& x, std::size_t y);

/// Iteratively crosses the k nearest boundaries (frozen at x). Each step
/// projects onto the uncrossed target with the smallest remaining distance;
/// the overshoot (1 + eta) is applied once to the returned perturbation.
/// max_iters defaults to 50 * k.
CrossingReport cross_k_boundaries(const LinearClassifier& clf, const Tensor& x, std::size_t y, std::size_t k,
                                  double eta, std::optional<std::size_t> max_iters = std::nullopt);

}  // namespace uap
