#include "uap/evaluation.hpp"

#include <algorithm>
#include <json.hpp>

#include "uap/error.hpp"

namespace uap {

namespace {

double lookup(const std::vector<std::size_t>& ks, const std::vector<double>& values, std::size_t k) {
  const auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw InvalidArgument("metric not computed at k=" + std::to_string(k));
  return values[static_cast<std::size_t>(it - ks.begin())];
}

}  // namespace

double RetrievalMetrics::tr_at(std::size_t k) const { return lookup(ks, text_retrieval, k); }
double RetrievalMetrics::ir_at(std::size_t k) const { return lookup(ks, image_retrieval, k); }

EmbeddingIndex image_embeddings(const EncoderSpec& encoder, const MultimodalDataset& dataset,
                                const Perturbation* perturbation, std::size_t threads) {
  const std::size_t n = dataset.num_images();
  const std::size_t d = encoder.embed_dim();
  std::vector<double> out(n * d);
  parallel_for(n, threads, [&](std::size_t i) {
    const Tensor e = perturbation ? encoder.encode(PixelImage(perturbation->apply(dataset.image_data(i))))
                                  : encoder.encode(dataset.image(i));
    std::copy(e.data().begin(), e.data().end(), out.begin() + static_cast<std::ptrdiff_t>(i * d));
  });
  return EmbeddingIndex(Tensor(Shape{n, d}, std::move(out)));
}

RetrievalMetrics evaluate_embeddings(const EmbeddingIndex& images, const MultimodalDataset& dataset,
                                     const std::vector<std::size_t>& ks, std::size_t threads) {
  if (images.size() != dataset.num_images()) throw InvalidArgument("one embedding per image required");
  std::vector<std::vector<std::size_t>> ir_matches(dataset.num_texts());
  for (std::size_t t = 0; t < ir_matches.size(); ++t) ir_matches[t] = {dataset.annotations.image_of(t)};

  RetrievalMetrics m;
  m.ks = ks;
  for (std::size_t k : ks) {
    m.text_retrieval.push_back(recall_at_k(images, dataset.texts, dataset.annotations.image_to_texts(), k, threads));
    m.image_retrieval.push_back(recall_at_k(dataset.texts, images, ir_matches, k, threads));
  }
  const std::size_t classes = dataset.prototypes.size();
  m.top1 = topk_class_accuracy(images, dataset.prototypes, dataset.labels, 1, threads);
  m.top5 = topk_class_accuracy(images, dataset.prototypes, dataset.labels, std::min<std::size_t>(5, classes), threads);
  return m;
}

RetrievalMetrics evaluate(const EncoderSpec& encoder, const MultimodalDataset& dataset,
                          const Perturbation* perturbation, const std::vector<std::size_t>& ks,
                          std::size_t threads) {
  return evaluate_embeddings(image_embeddings(encoder, dataset, perturbation, threads), dataset, ks, threads);
}

std::string to_json(const RetrievalMetrics& metrics) {
  return nlohmann::json{{"k", metrics.ks},
                        {"tr", metrics.text_retrieval},
                        {"ir", metrics.image_retrieval},
                        {"top1", metrics.top1},
                        {"top5", metrics.top5}}
      .dump();
}

}  // namespace uap
