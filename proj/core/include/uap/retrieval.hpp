#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "uap/tensor.hpp"

namespace uap {

/// Bidirectional match annotations: each image owns a nonempty set of texts
/// and each text belongs to exactly one image.
class MatchAnnotation {
 public:
  /// Throws CorruptDataset if a text is listed under two images, a text is
  /// unlisted, an index is out of range, or an image has no text.
  MatchAnnotation(std::vector<std::vector<std::size_t>> image_to_texts, std::size_t n_texts);

  std::size_t num_images() const { return image_to_texts_.size(); }
  std::size_t num_texts() const { return text_to_image_.size(); }
  const std::vector<std::size_t>& texts_of(std::size_t image) const { return image_to_texts_.at(image); }
  std::size_t image_of(std::size_t text) const { return text_to_image_.at(text); }
  const std::vector<std::vector<std::size_t>>& image_to_texts() const { return image_to_texts_; }
  const std::vector<std::size_t>& text_to_image() const { return text_to_image_; }

  friend bool operator==(const MatchAnnotation&, const MatchAnnotation&) = default;

 private:
  std::vector<std::vector<std::size_t>> image_to_texts_;
  std::vector<std::size_t> text_to_image_;
};

/// Gallery of unit-norm rows (M, d). Similarity is the dot product.
class EmbeddingIndex {
 public:
  static constexpr double kUnitTolerance = 1e-9;

  explicit EmbeddingIndex(Tensor embeddings);

  std::size_t size() const { return embeddings_.dim(0); }
  std::size_t dim() const { return embeddings_.dim(1); }
  const Tensor& embeddings() const { return embeddings_; }
  std::span<const double> row(std::size_t i) const { return embeddings_.row(i); }

  std::vector<double> similarities(std::span<const double> query) const;

 private:
  Tensor embeddings_;
};

/// True iff candidate a ranks ahead of b: higher score, ties to smaller index.
inline bool ranks_before(double score_a, std::size_t a, double score_b, std::size_t b) {
  return score_a > score_b || (score_a == score_b && a < b);
}

/// Number of gallery items ranked ahead of `item`.
std::size_t rank_of(std::span<const double> scores, std::size_t item);

/// Rank-based indicator over precomputed scores: 1 iff some match is among the top k.
int indicator_from_scores(std::span<const double> scores, std::span<const std::size_t> matches, std::size_t k);

/// 1 iff some element of `matches` is among the k gallery rows most similar to `query`.
int indicator(const Tensor& query, const EmbeddingIndex& index, std::span<const std::size_t> matches, std::size_t k);

/// The k most similar non-matching indices, by (similarity desc, index asc).
std::vector<std::size_t> select_nonmatching_topk(std::span<const double> scores,
                                                 std::span<const std::size_t> matches, std::size_t k);
std::vector<std::size_t> select_nonmatching_topk(const Tensor& query, const EmbeddingIndex& index,
                                                 std::span<const std::size_t> matches, std::size_t k);

/// Mean indicator over queries. `threads` > 1 splits queries across workers;
/// the reduction order is fixed, so the value does not depend on scheduling.
double recall_at_k(const EmbeddingIndex& queries, const EmbeddingIndex& gallery,
                   const std::vector<std::vector<std::size_t>>& matches, std::size_t k, std::size_t threads = 1);

/// Fraction of images whose labelled prototype is in the top k.
double topk_class_accuracy(const EmbeddingIndex& image_embeddings, const EmbeddingIndex& class_prototypes,
                           std::span<const std::size_t> labels, std::size_t k, std::size_t threads = 1);

struct MetricRecord {
  std::string metric;
  std::size_t k = 0;
  double value = 0.0;
  std::size_t n_queries = 0;
  std::uint64_t seed = 0;
};

/// {"metric", "k", "value", "n_queries", "seed"}
std::string to_json(const MetricRecord& record);

/// Runs fn(i) for i in [0, n) over `threads` workers (inline when threads <= 1).
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace uap
