#include "uap/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <thread>

#include "uap/error.hpp"

namespace uap {

MatchAnnotation::MatchAnnotation(std::vector<std::vector<std::size_t>> image_to_texts, std::size_t n_texts)
    : image_to_texts_(std::move(image_to_texts)) {
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  text_to_image_.assign(n_texts, kUnset);
  for (std::size_t v = 0; v < image_to_texts_.size(); ++v) {
    if (image_to_texts_[v].empty()) throw CorruptDataset("image " + std::to_string(v) + " has no matching text");
    for (std::size_t t : image_to_texts_[v]) {
      if (t >= n_texts) throw CorruptDataset("text index " + std::to_string(t) + " out of range");
      if (text_to_image_[t] != kUnset) {
        throw CorruptDataset("text " + std::to_string(t) + " is mapped to images " +
                             std::to_string(text_to_image_[t]) + " and " + std::to_string(v));
      }
      text_to_image_[t] = v;
    }
  }
  for (std::size_t t = 0; t < n_texts; ++t) {
    if (text_to_image_[t] == kUnset) throw CorruptDataset("text " + std::to_string(t) + " matches no image");
  }
}

EmbeddingIndex::EmbeddingIndex(Tensor embeddings) : embeddings_(std::move(embeddings)) {
  if (embeddings_.rank() != 2) throw InvalidArgument("embedding index must be (M, d)");
  for (std::size_t i = 0; i < size(); ++i) {
    if (std::abs(l2_norm(row(i)) - 1.0) > kUnitTolerance) {
      throw InvalidArgument("embedding row " + std::to_string(i) + " is not unit norm");
    }
  }
}

std::vector<double> EmbeddingIndex::similarities(std::span<const double> query) const {
  if (query.size() != dim()) throw InvalidArgument("query dimension does not match the index");
  std::vector<double> s(size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = dot(row(i), query);
  return s;
}

std::size_t rank_of(std::span<const double> scores, std::size_t item) {
  std::size_t ahead = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j != item && ranks_before(scores[j], j, scores[item], item)) ++ahead;
  }
  return ahead;
}

int indicator_from_scores(std::span<const double> scores, std::span<const std::size_t> matches, std::size_t k) {
  if (k == 0 || k > scores.size()) throw InvalidArgument("k must be in [1, M]");
  if (matches.empty()) throw InvalidArgument("indicator needs at least one match");
  std::size_t best = matches.front();
  for (std::size_t m : matches) {
    if (m >= scores.size()) throw InvalidArgument("match index out of range");
    if (ranks_before(scores[m], m, scores[best], best)) best = m;
  }
  return rank_of(scores, best) < k ? 1 : 0;
}

int indicator(const Tensor& query, const EmbeddingIndex& index, std::span<const std::size_t> matches, std::size_t k) {
  if (k == 0 || k > index.size()) throw InvalidArgument("k must be in [1, M]");
  return indicator_from_scores(index.similarities(query.data()), matches, k);
}

std::vector<std::size_t> select_nonmatching_topk(std::span<const double> scores,
                                                 std::span<const std::size_t> matches, std::size_t k) {
  std::vector<bool> excluded(scores.size(), false);
  for (std::size_t m : matches) {
    if (m >= scores.size()) throw InvalidArgument("match index out of range");
    excluded[m] = true;
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!excluded[i]) candidates.push_back(i);
  }
  if (k == 0 || k > candidates.size()) {
    throw InvalidArgument("need " + std::to_string(k) + " non-matching candidates, have " +
                          std::to_string(candidates.size()));
  }
  auto before = [&](std::size_t a, std::size_t b) { return ranks_before(scores[a], a, scores[b], b); };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(), before);
  candidates.resize(k);
  return candidates;
}

std::vector<std::size_t> select_nonmatching_topk(const Tensor& query, const EmbeddingIndex& index,
                                                 std::span<const std::size_t> matches, std::size_t k) {
  return select_nonmatching_topk(index.similarities(query.data()), matches, k);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double recall_at_k(const EmbeddingIndex& queries, const EmbeddingIndex& gallery,
                   const std::vector<std::vector<std::size_t>>& matches, std::size_t k, std::size_t threads) {
  if (queries.dim() != gallery.dim()) throw InvalidArgument("query and gallery dimensions differ");
  if (matches.size() != queries.size()) throw InvalidArgument("one match set per query required");
  if (k == 0 || k > gallery.size()) throw InvalidArgument("k must be in [1, M]");
  std::vector<int> hits(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t q) {
    hits[q] = indicator_from_scores(gallery.similarities(queries.row(q)), matches[q], k);
  });
  double sum = 0.0;
  for (int h : hits) sum += h;
  return sum / static_cast<double>(queries.size());
}

double topk_class_accuracy(const EmbeddingIndex& image_embeddings, const EmbeddingIndex& class_prototypes,
                           std::span<const std::size_t> labels, std::size_t k, std::size_t threads) {
  if (labels.size() != image_embeddings.size()) throw InvalidArgument("one label per image required");
  for (std::size_t y : labels) {
    if (y >= class_prototypes.size()) throw InvalidArgument("label " + std::to_string(y) + " out of range");
  }
  std::vector<std::vector<std::size_t>> matches(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) matches[i] = {labels[i]};
  return recall_at_k(image_embeddings, class_prototypes, matches, k, threads);
}

std::string to_json(const MetricRecord& record) {
  nlohmann::json j{{"metric", record.metric},
                   {"k", record.k},
                   {"value", record.value},
                   {"n_queries", record.n_queries},
                   {"seed", record.seed}};
  return j.dump();
}

}  // namespace uap
