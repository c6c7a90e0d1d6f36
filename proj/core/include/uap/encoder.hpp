#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uap/tensor.hpp"

namespace uap {

enum class EncoderKind { kLinear, kMlp };
enum class Activation { kTanh, kRelu };

std::string to_string(EncoderKind kind);
std::string to_string(Activation act);
EncoderKind parse_encoder_kind(const std::string& s);
Activation parse_activation(const std::string& s);

struct DenseLayer {
  Tensor weight;  ///< (out, in)
  Tensor bias;    ///< (out)
};

struct ScoreGradient {
  double value = 0.0;
  Tensor gradient;  ///< same shape as the image
};

/// Image encoder E(v) = normalize(g(s * (v - o))) where g is either one affine
/// map (linear) or affine layers with tanh/relu between them (mlp; no
/// activation after the last layer). o and s are the per-pixel input offset
/// and scale applied before the first layer.
///
/// Immutable after construction; all evaluation methods are const and
/// thread-safe.
class EncoderSpec {
 public:
  struct Options {
    EncoderKind kind = EncoderKind::kMlp;
    Shape input_shape{3, 32, 32};
    std::size_t embed_dim = 64;
    std::vector<std::size_t> layer_widths{256, 128};  ///< hidden widths, mlp only
    Activation activation = Activation::kTanh;
    std::uint64_t seed = 42;
    double input_offset = 0.0;
    double input_scale = 1.0;
  };

  /// Weights drawn uniformly in [-a, a], a = sqrt(6 / (fan_in + fan_out)),
  /// layer by layer in row-major order from Lcg64(seed). Biases start at zero.
  static EncoderSpec random(const Options& options);

  /// The default benchmark encoder: mlp 3x32x32 -> 256 -> 128 -> 64, tanh,
  /// seed 42, inputs centred at 0.5 and scaled by 255 (pixel units).
  static Options toy_options();

  EncoderSpec(const Options& options, std::vector<DenseLayer> layers);

  const Options& options() const { return options_; }
  EncoderKind kind() const { return options_.kind; }
  const Shape& input_shape() const { return options_.input_shape; }
  std::size_t input_size() const { return shape_size(options_.input_shape); }
  std::size_t embed_dim() const { return options_.embed_dim; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Unit-norm embedding. Throws DegenerateEncoding if the pre-normalization
  /// output is all zeros.
  Tensor encode(const PixelImage& image) const;

  /// Same map on any finite tensor of the input shape; the attack inner loops
  /// evaluate iterates that may leave [0, 1] before the commit clamp.
  Tensor encode_unchecked(const Tensor& input) const;

  /// Pre-normalization output g(s * (v - o)).
  Tensor raw_output(const Tensor& input) const;

  /// value = direction . E(v); gradient = d value / d v.
  ScoreGradient project_with_gradient(const Tensor& input, const Tensor& direction) const;

  /// f(v) = text . E(v) and its input gradient. The text embedding must be unit norm.
  ScoreGradient score_with_gradient(const PixelImage& image, const Tensor& text_embedding) const;
  ScoreGradient score_with_gradient_unchecked(const Tensor& input, const Tensor& text_embedding) const;

  /// Jacobian of the pre-normalization output at `input`, shape (embed_dim, input_size).
  Tensor raw_jacobian(const Tensor& input) const;

  /// Evaluation plan for inputs where only the `free` coordinates vary. The
  /// first-layer columns of the free pixels are gathered once; the rest of a
  /// given image is folded into a per-image first-layer base.
  struct PartialPlan {
    std::vector<std::size_t> free;
    std::vector<double> columns;  ///< (first_width, free.size()) row-major, input scale applied
    bool all_free = false;
  };
  PartialPlan partial_plan(std::vector<std::size_t> free) const;
  /// Every coordinate free; evaluation falls back to the dense first layer.
  PartialPlan full_plan() const;
  /// First-layer pre-activation contributed by the non-free pixels of `image` plus the bias.
  std::vector<double> partial_base(const PartialPlan& plan, std::span<const double> image) const;

  /// Unit embedding of the image whose free coordinates are `values`.
  Tensor encode_partial(const PartialPlan& plan, std::span<const double> base, std::span<const double> values) const;
  /// direction . E and its gradient with respect to the free coordinates.
  double project_partial(const PartialPlan& plan, std::span<const double> base, std::span<const double> values,
                         const Tensor& direction, std::vector<double>& gradient) const;

  /// Hash of architecture and weight bytes; independent of file paths.
  std::string content_hash() const;

  /// Writes <dir>/<stem>.json plus one UAPT file per weight/bias.
  std::filesystem::path save(const std::filesystem::path& manifest_path) const;
  static EncoderSpec load(const std::filesystem::path& manifest_path);

 private:
  struct Trace;
  void forward(std::span<const double> input, Trace& trace) const;
  void forward_partial(const PartialPlan& plan, std::span<const double> base, std::span<const double> values,
                       Trace& trace) const;
  void forward_from_first(Trace& trace) const;
  double backward(const Trace& trace, const Tensor& direction, std::vector<double>& first_layer_grad) const;
  void check_input(const Tensor& input) const;

  Options options_;
  std::vector<DenseLayer> layers_;
};

/// Max over n_probes random coordinates of
/// |analytic - central_difference| / max(|analytic|, 1e-12). The central
/// difference is evaluated in long double so that it is not limited by
/// double cancellation on small gradient components.
double gradcheck(const EncoderSpec& spec, const PixelImage& image, const Tensor& text_embedding,
                 std::size_t n_probes, double step, std::uint64_t probe_seed = 0);

}  // namespace uap
