#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "uap/attack.hpp"
#include "uap/dataset.hpp"
#include "uap/encoder.hpp"
#include "uap/retrieval.hpp"

namespace uap {

/// Recall for both retrieval directions at each requested depth, plus
/// top-1/top-5 prototype classification accuracy.
struct RetrievalMetrics {
  std::vector<std::size_t> ks;
  std::vector<double> text_retrieval;   ///< image -> text R@k, aligned with ks
  std::vector<double> image_retrieval;  ///< text -> image R@k, aligned with ks
  double top1 = 0.0;
  double top5 = 0.0;

  double tr_at(std::size_t k) const;
  double ir_at(std::size_t k) const;
};

/// Embeddings of every dataset image, optionally after applying `perturbation`.
EmbeddingIndex image_embeddings(const EncoderSpec& encoder, const MultimodalDataset& dataset,
                                const Perturbation* perturbation = nullptr, std::size_t threads = 1);

RetrievalMetrics evaluate_embeddings(const EmbeddingIndex& images, const MultimodalDataset& dataset,
                                     const std::vector<std::size_t>& ks, std::size_t threads = 1);

RetrievalMetrics evaluate(const EncoderSpec& encoder, const MultimodalDataset& dataset,
                          const Perturbation* perturbation, const std::vector<std::size_t>& ks,
                          std::size_t threads = 1);

/// {"k": [...], "tr": [...], "ir": [...], "top1": x, "top5": y}
std::string to_json(const RetrievalMetrics& metrics);

}  // namespace uap
