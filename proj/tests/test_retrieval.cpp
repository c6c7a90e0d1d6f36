#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fixtures.hpp"
#include "uap/error.hpp"
#include "uap/retrieval.hpp"

namespace uap {
namespace {

using testing::random_unit;

EmbeddingIndex random_index(Lcg64& rng, std::size_t n, std::size_t d) {
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor u = random_unit(rng, d);
    v.insert(v.end(), u.data().begin(), u.data().end());
  }
  return EmbeddingIndex(Tensor(Shape{n, d}, std::move(v)));
}

// Oracle: sort every index by (score desc, index asc) and check the prefix.
int sorted_indicator(const std::vector<double>& scores, const std::vector<std::size_t>& matches, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
    if (std::find(matches.begin(), matches.end(), order[i]) != matches.end()) return 1;
  }
  return 0;
}

TEST(Retrieval, IndicatorMatchesSortOracle) {
  Lcg64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto gallery = random_index(rng, 30, 6);
    const Tensor q = random_unit(rng, 6);
    std::vector<std::size_t> matches{rng.below(30), rng.below(30)};
    const std::size_t k = 1 + rng.below(30);
    const auto scores = gallery.similarities(q.data());
    EXPECT_EQ(indicator(q, gallery, matches, k), sorted_indicator(scores, matches, k));
  }
}

TEST(Retrieval, TiesBreakToSmallerIndex) {
  const std::vector<double> scores{0.5, 0.9, 0.9, 0.1};
  EXPECT_EQ(rank_of(scores, 1), 0u);
  EXPECT_EQ(rank_of(scores, 2), 1u);
  const std::vector<std::size_t> m2{2};
  EXPECT_EQ(indicator_from_scores(scores, m2, 1), 0);
  EXPECT_EQ(indicator_from_scores(scores, m2, 2), 1);
}

TEST(Retrieval, KEqualToGallerySizeAlwaysHitsAndLargerIsRejected) {
  Lcg64 rng(2);
  const auto gallery = random_index(rng, 10, 4);
  const Tensor q = random_unit(rng, 4);
  const std::vector<std::size_t> m{9};
  EXPECT_EQ(indicator(q, gallery, m, 10), 1);
  EXPECT_THROW(indicator(q, gallery, m, 11), InvalidArgument);
  EXPECT_THROW(indicator(q, gallery, m, 0), InvalidArgument);
  EXPECT_THROW(indicator(q, gallery, std::vector<std::size_t>{}, 1), InvalidArgument);
}

TEST(Retrieval, NonmatchingTopkMatchesSortOracle) {
  Lcg64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto gallery = random_index(rng, 20, 5);
    const Tensor q = random_unit(rng, 5);
    const std::vector<std::size_t> matches{rng.below(20)};
    const auto scores = gallery.similarities(q.data());
    std::vector<std::size_t> order(20);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    order.erase(std::remove(order.begin(), order.end(), matches[0]), order.end());
    order.resize(5);
    EXPECT_EQ(select_nonmatching_topk(q, gallery, matches, 5), order);
  }
}

TEST(Retrieval, RecallMatchesLoopOracleAndIsMonotoneInK) {
  Lcg64 rng(4);
  const auto queries = random_index(rng, 40, 6);
  const auto gallery = random_index(rng, 60, 6);
  std::vector<std::vector<std::size_t>> matches(40);
  for (auto& m : matches) m = {rng.below(60), rng.below(60)};
  double prev = 0.0;
  for (std::size_t k = 1; k <= 60; ++k) {
    double hits = 0.0;
    for (std::size_t q = 0; q < 40; ++q) hits += sorted_indicator(gallery.similarities(queries.row(q)), matches[q], k);
    const double r = recall_at_k(queries, gallery, matches, k);
    EXPECT_DOUBLE_EQ(r, hits / 40.0);
    EXPECT_EQ(r, recall_at_k(queries, gallery, matches, k, 4));
    EXPECT_GE(r, prev);
    prev = r;
  }
  EXPECT_EQ(prev, 1.0);
}

TEST(Retrieval, PositiveRescalingOfScoresDoesNotChangeRanks) {
  Lcg64 rng(5);
  std::vector<double> scores(25);
  for (double& s : scores) s = rng.uniform(-1.0, 1.0);
  std::vector<double> scaled = scores;
  for (double& s : scaled) s = 3.0 * s + 0.25;
  for (std::size_t i = 0; i < scores.size(); ++i) EXPECT_EQ(rank_of(scores, i), rank_of(scaled, i));
}

TEST(Retrieval, RejectsNonUnitGalleryAndBadAnnotations) {
  EXPECT_THROW(EmbeddingIndex(Tensor(Shape{2, 2}, {1.0, 0.0, 0.5, 0.0})), InvalidArgument);
  EXPECT_THROW(MatchAnnotation({{0}, {0}}, 1), CorruptDataset);
  EXPECT_THROW(MatchAnnotation({{0}, {}}, 1), CorruptDataset);
  EXPECT_THROW(MatchAnnotation({{0}}, 2), CorruptDataset);
  EXPECT_THROW(MatchAnnotation({{3}}, 1), CorruptDataset);
  const MatchAnnotation ok({{1, 2}, {0}}, 3);
  EXPECT_EQ(ok.image_of(0), 1u);
  EXPECT_EQ(ok.image_of(2), 0u);
}

TEST(Retrieval, TopkClassAccuracy) {
  const EmbeddingIndex images(Tensor(Shape{3, 2}, {1.0, 0.0, 0.0, 1.0, 1.0, 0.0}));
  const EmbeddingIndex protos(Tensor(Shape{3, 2}, {1.0, 0.0, 0.0, 1.0, -1.0, 0.0}));
  const std::vector<std::size_t> labels{0, 0, 2};
  EXPECT_NEAR(topk_class_accuracy(images, protos, labels, 1), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(topk_class_accuracy(images, protos, labels, 2), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(topk_class_accuracy(images, protos, labels, 3), 1.0);
}

TEST(Retrieval, ParallelForCoversEveryIndexOnce) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 7, [&](std::size_t i) { hits[i] += 1; });
  EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
}

}  // namespace
}  // namespace uap
