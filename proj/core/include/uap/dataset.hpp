#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "uap/encoder.hpp"
#include "uap/retrieval.hpp"
#include "uap/tensor.hpp"

namespace uap {

/// Clean retrieval under the paired encoder is too close to chance for attack
/// metrics to mean anything.
class DegenerateDataset : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetParams {
  std::size_t n_images = 200;
  std::size_t texts_per_image = 5;
  Shape image_shape{3, 32, 32};
  std::size_t embed_dim = 64;
  std::size_t class_count = 10;
  double noise_level = 0.1;  ///< sigma of the per-coordinate Gaussian text noise
  std::uint64_t seed = 7;
  /// RMS of the pre-sigmoid decoder signal per pixel; controls image contrast.
  double contrast = 0.005;
  /// Clean TR R@k must reach floor_multiple * k / M.
  std::size_t floor_k = 10;
  double floor_multiple = 5.0;

  std::size_t n_texts() const { return n_images * texts_per_image; }
};

struct DatasetFile {
  std::string path;  ///< relative to the manifest directory
  std::string sha256;
};

struct DatasetManifest {
  DatasetParams params;
  std::string encoder_hash;  ///< encoder the decoder was paired with
  double clean_floor_recall = 0.0;
  DatasetFile images;
  DatasetFile texts;
  DatasetFile annotations;
  DatasetFile prototypes;
  DatasetFile labels;
};

/// In-memory multimodal dataset: images V, text embeddings E_t(T), match
/// annotations, and class prototypes/labels for the classification metric.
struct MultimodalDataset {
  DatasetManifest manifest;
  Tensor images;  ///< (N, c, h, w), values in [0, 1]
  EmbeddingIndex texts;
  MatchAnnotation annotations;
  EmbeddingIndex prototypes;
  std::vector<std::size_t> labels;

  std::size_t num_images() const { return images.dim(0); }
  std::size_t num_texts() const { return texts.size(); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  std::size_t image_size() const { return shape_size(image_shape()); }
  std::span<const double> image_data(std::size_t i) const;
  Tensor image_tensor(std::size_t i) const;
  PixelImage image(std::size_t i) const { return PixelImage(image_tensor(i)); }
  Tensor text(std::size_t t) const;
};

/// Deterministic synthetic dataset paired with `encoder`.
///
/// Latents z_i are seeded Gaussian directions. Images are
/// sigmoid(logit(o) + g * D z_i) where o is the encoder's input offset and D is
/// the Moore-Penrose inverse of the encoder's Jacobian at the constant image o,
/// rescaled to unit RMS per pixel; g is `contrast`. Texts for image i are
/// normalize(z_i + sigma * g_ij). Class prototypes are seeded unit vectors and
/// labels are argmax cosine(z_i, prototype).
///
/// Throws InvalidArgument on bad parameters and DegenerateDataset when clean
/// TR R@floor_k under the encoder is below floor_multiple times chance.
MultimodalDataset generate_dataset(const DatasetParams& params, const EncoderSpec& encoder);

/// Writes manifest.json and UAPT/JSON payloads; fills file hashes. Returns the manifest path.
std::filesystem::path save_dataset(MultimodalDataset& dataset, const std::filesystem::path& dir);

/// Verifies every file hash (IntegrityError) and dataset invariants (CorruptDataset).
MultimodalDataset load_dataset(const std::filesystem::path& manifest_path);

/// Hash identifying the dataset content (hash of the manifest's file hashes and params).
std::string dataset_hash(const MultimodalDataset& dataset);

/// Clean TR R@k of the encoder on the dataset.
double clean_text_recall(const MultimodalDataset& dataset, const EncoderSpec& encoder, std::size_t k,
                         std::size_t threads = 1);

}  // namespace uap
