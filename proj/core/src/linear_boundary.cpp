#include "uap/linear_boundary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "uap/error.hpp"

namespace uap {

namespace {

constexpr double kDegenerateNorm = 1e-12;

double diff_norm(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    sum += d * d;
  }
  return std::sqrt(sum);
}

void require_correct(const LinearClassifier& clf, const Tensor& x, std::size_t y) {
  if (y >= clf.num_classes()) throw InvalidArgument("class index out of range");
  const auto s = clf.scores(x);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != y && !(s[y] > s[i])) {
      throw PreconditionViolation("point is not classified as class " + std::to_string(y));
    }
  }
}

}  // namespace

LinearClassifier::LinearClassifier(Tensor weights, Tensor offsets)
    : weights_(std::move(weights)), offsets_(std::move(offsets)) {
  if (weights_.rank() != 2) throw InvalidArgument("classifier weights must be (C, n)");
  if (weights_.dim(0) < 2) throw InvalidArgument("classifier needs at least two classes");
  if (offsets_.rank() != 1 || offsets_.dim(0) != weights_.dim(0)) {
    throw InvalidArgument("classifier offsets must have shape (C)");
  }
  for (std::size_t i = 0; i < num_classes(); ++i) {
    for (std::size_t j = i + 1; j < num_classes(); ++j) {
      if (std::ranges::equal(weights_.row(i), weights_.row(j))) {
        throw InvalidArgument("classifier rows " + std::to_string(i) + " and " + std::to_string(j) +
                              " are identical");
      }
    }
  }
}

LinearClassifier::LinearClassifier(Tensor weights)
    : LinearClassifier(weights, Tensor(Shape{weights.rank() == 2 ? weights.dim(0) : 1})) {}

double LinearClassifier::score(std::size_t cls, const Tensor& x) const {
  if (x.size() != input_dim()) throw InvalidArgument("input dimension mismatch");
  return dot(weights_.row(cls), x.data()) + offsets_[cls];
}

std::vector<double> LinearClassifier::scores(const Tensor& x) const {
  std::vector<double> s(num_classes());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = score(i, x);
  return s;
}

std::size_t LinearClassifier::predict(const Tensor& x) const {
  const auto s = scores(x);
  return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
}

LinearClassifier LinearClassifier::scaled(double c) const { return {weights_ * c, offsets_ * c}; }

double binary_distance(const Tensor& w, double b, const Tensor& x) {
  const double wn = l2_norm(w);
  if (wn == 0.0) throw InvalidArgument("binary_distance: zero weight vector");
  return std::abs(dot(w, x) + b) / wn;
}

Tensor binary_min_perturbation(const Tensor& w, double b, const Tensor& x) {
  const double wn = l2_norm(w);
  if (wn == 0.0) throw InvalidArgument("binary_min_perturbation: zero weight vector");
  const double f = dot(w, x) + b;
  return w * (-f / (wn * wn));
}

double boundary_distance(const LinearClassifier& clf, const Tensor& x, std::size_t y, std::size_t i) {
  const double gap = clf.score(y, x) - clf.score(i, x);
  return gap / diff_norm(clf.weights().row(y), clf.weights().row(i));
}

std::vector<std::size_t> nearest_boundaries(const LinearClassifier& clf, const Tensor& x, std::size_t y,
                                            std::size_t count) {
  require_correct(clf, x, y);
  if (count == 0 || count > clf.num_classes() - 1) throw InvalidArgument("boundary count out of range");
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < clf.num_classes(); ++i) {
    if (i != y) ranked.emplace_back(boundary_distance(clf, x, y, i), i);
  }
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(count), ranked.end());
  std::vector<std::size_t> out(count);
  for (std::size_t j = 0; j < count; ++j) out[j] = ranked[j].second;
  return out;
}

std::size_t nearest_boundary(const LinearClassifier& clf, const Tensor& x, std::size_t y) {
  return nearest_boundaries(clf, x, y, 1).front();
}

Tensor multiclass_min_perturbation(const LinearClassifier& clf, const Tensor& x, std::size_t y) {
  const std::size_t l = nearest_boundary(clf, x, y);
  const auto wy = clf.weights().row(y);
  const auto wl = clf.weights().row(l);
  const double gap = clf.score(y, x) - clf.score(l, x);
  const double n = diff_norm(wy, wl);
  Tensor r(Shape{clf.input_dim()});
  for (std::size_t j = 0; j < r.size(); ++j) r[j] = (wl[j] - wy[j]) * gap / (n * n);
  return r;
}

CrossingReport cross_k_boundaries(const LinearClassifier& clf, const Tensor& x, std::size_t y, std::size_t k,
                                  double eta, std::optional<std::size_t> max_iters) {
  if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");
  if (k == 0 || k > clf.num_classes() - 1) throw InvalidArgument("k must be in [1, C-1]");
  const std::size_t cap = max_iters.value_or(50 * k);
  if (cap == 0) throw InvalidArgument("max_iters must be positive");

  CrossingReport report;
  report.targets = nearest_boundaries(clf, x, y, k);
  const auto& targets = report.targets;
  const auto wy = clf.weights().row(y);

  std::vector<double> denom(targets.size());
  for (std::size_t j = 0; j < targets.size(); ++j) denom[j] = diff_norm(wy, clf.weights().row(targets[j]));

  Tensor r(Shape{clf.input_dim()});
  auto uncrossed_at = [&](const Tensor& point) {
    const double fy = clf.score(y, point);
    return std::ranges::any_of(targets, [&](std::size_t l) { return fy >= clf.score(l, point); });
  };

  while (true) {
    if (!uncrossed_at(x + r * (1.0 + eta))) {
      report.converged = true;
      break;
    }
    if (report.iterations == cap) break;

    const Tensor x_hat = x + r;
    const double fy = clf.score(y, x_hat);
    std::size_t best = targets.size();
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < targets.size(); ++j) {
      if (denom[j] < kDegenerateNorm) continue;
      const double gap = fy - clf.score(targets[j], x_hat);
      if (gap <= 0.0) continue;
      const double dist = gap / denom[j];
      if (dist < best_dist || (dist == best_dist && targets[j] < targets[best])) {
        best_dist = dist;
        best = j;
      }
    }
    if (best == targets.size()) break;

    const std::size_t l = targets[best];
    const auto wl = clf.weights().row(l);
    const double gap = fy - clf.score(l, x_hat);
    const double scale = gap / (denom[best] * denom[best]);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += (wl[j] - wy[j]) * scale;
    ++report.iterations;
  }

  report.perturbation = r * (1.0 + eta);
  const Tensor adv = x + report.perturbation;
  const double fy = clf.score(y, adv);
  for (std::size_t l : targets) {
    if (clf.score(l, adv) > fy) report.crossed_indices.push_back(l);
  }
  std::ranges::sort(report.crossed_indices);
  return report;
}

}  // namespace uap
