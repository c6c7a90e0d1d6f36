#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uap/dataset.hpp"
#include "uap/encoder.hpp"
#include "uap/tensor.hpp"

namespace uap {

enum class Strategy { kTra, kIra, kTira };
enum class PerturbationMode { kPatch, kGlobal };
enum class NormKind { kL2, kLinf };

std::string to_string(Strategy s);
std::string to_string(PerturbationMode m);
std::string to_string(NormKind n);
Strategy parse_strategy(const std::string& s);
PerturbationMode parse_mode(const std::string& s);
NormKind parse_norm(const std::string& s);

/// Pixel-domain budgets for [0, 1] images (the [0, 255] budgets 2000 and 10 divided by 255).
inline constexpr double kDefaultL2Epsilon = 2000.0 / 255.0;
inline constexpr double kDefaultLinfEpsilon = 10.0 / 255.0;
inline constexpr double kDefaultPatchArea = 0.03;

struct AttackConfig {
  std::size_t k = 10;
  double eta = 0.02;
  std::size_t epochs = 10;
  std::size_t max_inner_iters = 50;
  std::size_t batch_size = 16;  ///< images per TIRA batch
  PerturbationMode mode = PerturbationMode::kPatch;
  std::optional<Mask> mask;  ///< required in patch mode
  NormKind norm = NormKind::kL2;
  double epsilon = kDefaultL2Epsilon;  ///< global mode budget
  std::uint64_t seed = 7;
  bool shuffle = false;         ///< seeded per-epoch permutation of the sample order
  std::size_t probe_images = 50;  ///< first images used for per-epoch trace metrics

  /// Throws InvalidArgument when fields are inconsistent with the mode.
  void validate() const;
  /// Canonical JSON (mask summarized by its hash).
  std::string to_json() const;
  std::string hash() const;
};

/// Default patch: bottom-right square covering `area` of the image.
Mask default_patch_mask(const Shape& image_shape, double area = kDefaultPatchArea, std::size_t inset = 0);

struct SampleRecord {
  std::size_t epoch = 0;
  Strategy phase = Strategy::kTra;  ///< kTra: image sample; kIra: text sample
  std::size_t sample = 0;
  std::size_t inner_iterations = 0;
  bool converged = false;
  bool degenerate = false;  ///< aborted on a vanishing gradient difference
};

struct CommitRecord {
  std::size_t epoch = 0;
  double l2 = 0.0;
  double linf = 0.0;
  bool within_budget = true;  ///< global mode: ||delta||_p <= epsilon; patch mode: delta in [0, 1]
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t k = 0;
  double clean_tr = 0.0;
  double adversarial_tr = 0.0;
  double clean_ir = 0.0;
  double adversarial_ir = 0.0;
};

struct AttackTrace {
  std::vector<SampleRecord> samples;
  std::vector<CommitRecord> commits;
  std::vector<EpochMetrics> epochs;

  double convergence_rate() const;
  std::string to_json() const;
};

struct Perturbation {
  Tensor delta;  ///< (c, h, w)
  PerturbationMode mode = PerturbationMode::kPatch;
  std::optional<Mask> mask;
  NormKind norm = NormKind::kL2;
  double epsilon = 0.0;
  std::string config_json;
  std::string config_hash;
  std::string encoder_hash;
  std::string dataset_hash;

  /// Image as seen by the model: patch replacement, or clamp(v + delta) in global mode.
  Tensor apply(std::span<const double> image) const;
};

struct AttackResult {
  Perturbation perturbation;
  AttackTrace trace;
};

/// One inner-loop run for a single sample. `r` lives on the free coordinates
/// (mask pixels in patch mode, every pixel in global mode) and is updated in
/// place; `delta` is not modified.
struct InnerResult {
  SampleRecord record;
  std::vector<double> r;
};

/// Holds everything the inner loops reuse across samples: clean embeddings,
/// the free-coordinate plan and per-image first-layer caches.
class UapAttack {
 public:
  UapAttack(const EncoderSpec& encoder, const MultimodalDataset& dataset, AttackConfig config);

  const AttackConfig& config() const { return config_; }
  const std::vector<std::size_t>& free_coordinates() const { return plan_.free; }

  /// Image-loop body (pushes image v across text boundaries), starting from `r`.
  InnerResult image_inner_loop(std::size_t image, const Tensor& delta, std::vector<double> r) const;
  /// Text-loop body (pushes the matched patched image below k others for text t).
  InnerResult text_inner_loop(std::size_t text, const Tensor& delta, std::vector<double> r) const;

  /// delta <- clamp_unit(delta + (1 + eta) r) in patch mode,
  /// delta <- P_p(delta + (1 + eta) r, epsilon) in global mode.
  Tensor commit(const Tensor& delta, std::span<const double> r) const;

  /// Non-matching texts with highest similarity to the clean embedding of `image`.
  std::vector<std::size_t> text_targets(std::size_t image) const;
  /// Non-matching images with highest similarity to text t.
  std::vector<std::size_t> image_targets(std::size_t text) const;

  /// The (possibly perturbed) image whose free coordinates the inner loop starts from.
  Tensor base_image(std::size_t image, const Tensor& delta) const;

  AttackResult run(Strategy strategy) const;

  EpochMetrics probe_metrics(const Tensor& delta, std::size_t epoch) const;

 private:
  Perturbation make_perturbation(Tensor delta) const;
  CommitRecord commit_record(const Tensor& delta, std::size_t epoch) const;
  std::vector<std::size_t> order(std::size_t n, std::size_t epoch) const;

  const EncoderSpec& encoder_;
  const MultimodalDataset& dataset_;
  AttackConfig config_;
  EncoderSpec::PartialPlan plan_;
  Tensor clean_image_embeddings_;  ///< (N, d)
  std::vector<std::vector<double>> masked_bases_;  ///< patch mode: per-image first-layer base
};

struct StepOutcome {
  Tensor delta;
  SampleRecord record;
};

/// Single-sample image-loop step followed by a commit.
StepOutcome tra_step(const EncoderSpec& encoder, const MultimodalDataset& dataset, std::size_t image,
                     const Tensor& delta, const AttackConfig& config);
/// Single-sample text-loop step followed by a commit.
StepOutcome ira_step(const EncoderSpec& encoder, const MultimodalDataset& dataset, std::size_t text,
                     const Tensor& delta, const AttackConfig& config);

AttackResult run_tra(const EncoderSpec& encoder, const MultimodalDataset& dataset, const AttackConfig& config);
AttackResult run_ira(const EncoderSpec& encoder, const MultimodalDataset& dataset, const AttackConfig& config);
AttackResult run_tira(const EncoderSpec& encoder, const MultimodalDataset& dataset, const AttackConfig& config);
/// Global-mode driver; `config.mode` must be kGlobal.
AttackResult run_global(const EncoderSpec& encoder, const MultimodalDataset& dataset, const AttackConfig& config,
                        Strategy strategy);

/// Writes the delta as UAPT plus a JSON sidecar (<path>.json) and, in patch
/// mode, the mask as <stem>_mask.uapt.
void save_perturbation(const Perturbation& p, const std::filesystem::path& path);
Perturbation load_perturbation(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& perturbation_path);

}  // namespace uap
