#include "uap/encoder.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "uap/error.hpp"
#include "uap/rng.hpp"
#include "uap/tensor_io.hpp"

namespace uap {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;

ConstMatrixMap as_matrix(const Tensor& w) { return {w.data().data(), Eigen::Index(w.dim(0)), Eigen::Index(w.dim(1))}; }

constexpr double kUnitTolerance = 1e-6;

}  // namespace

std::string to_string(EncoderKind kind) { return kind == EncoderKind::kLinear ? "linear" : "mlp"; }
std::string to_string(Activation act) { return act == Activation::kTanh ? "tanh" : "relu"; }

EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "linear") return EncoderKind::kLinear;
  if (s == "mlp") return EncoderKind::kMlp;
  throw InvalidArgument("unknown encoder kind '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw InvalidArgument("unknown activation '" + s + "'");
}

struct EncoderSpec::Trace {
  // pre[l] is the affine output of layer l; post[l] its activation (input to l+1).
  std::vector<Eigen::VectorXd> pre;
  std::vector<Eigen::VectorXd> post;
  Eigen::VectorXd input;
};

EncoderSpec::Options EncoderSpec::toy_options() {
  Options o;
  o.kind = EncoderKind::kMlp;
  o.input_shape = {3, 32, 32};
  o.embed_dim = 64;
  o.layer_widths = {256, 128};
  o.activation = Activation::kTanh;
  o.seed = 42;
  o.input_offset = 0.5;
  o.input_scale = 255.0;
  return o;
}

EncoderSpec EncoderSpec::random(const Options& options) {
  std::vector<std::size_t> dims{shape_size(options.input_shape)};
  if (options.kind == EncoderKind::kMlp) dims.insert(dims.end(), options.layer_widths.begin(), options.layer_widths.end());
  dims.push_back(options.embed_dim);

  Lcg64 rng(options.seed);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    if (in == 0 || out == 0) throw InvalidArgument("encoder layer dimensions must be positive");
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(in * out);
    for (double& v : w) v = rng.uniform(-a, a);
    layers.push_back({Tensor(Shape{out, in}, std::move(w)), Tensor(Shape{out})});
  }
  return EncoderSpec(options, std::move(layers));
}

EncoderSpec::EncoderSpec(const Options& options, std::vector<DenseLayer> layers)
    : options_(options), layers_(std::move(layers)) {
  if (options_.input_shape.size() != 3) throw InvalidArgument("encoder input shape must be (c, h, w)");
  if (options_.embed_dim == 0) throw InvalidArgument("embed_dim must be positive");
  if (!(options_.input_scale != 0.0 && std::isfinite(options_.input_scale) && std::isfinite(options_.input_offset))) {
    throw InvalidArgument("input scale must be finite and nonzero");
  }
  if (options_.kind == EncoderKind::kLinear) options_.layer_widths.clear();
  const std::size_t expected_layers = options_.layer_widths.size() + 1;
  if (layers_.size() != expected_layers) {
    throw InvalidArgument("encoder expects " + std::to_string(expected_layers) + " layers, got " +
                          std::to_string(layers_.size()));
  }
  std::size_t in = shape_size(options_.input_shape);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::size_t out = l + 1 < layers_.size() ? options_.layer_widths[l] : options_.embed_dim;
    if (layers_[l].weight.shape() != Shape{out, in} || layers_[l].bias.shape() != Shape{out}) {
      throw InvalidArgument("layer " + std::to_string(l) + " has shape " + shape_string(layers_[l].weight.shape()) +
                            ", expected " + shape_string(Shape{out, in}));
    }
    in = out;
  }
}

void EncoderSpec::check_input(const Tensor& input) const {
  if (input.shape() != options_.input_shape) {
    throw InvalidArgument("encoder input shape " + shape_string(input.shape()) + " does not match " +
                          shape_string(options_.input_shape));
  }
}

void EncoderSpec::forward(std::span<const double> input, Trace& trace) const {
  trace.input = (ConstVectorMap(input.data(), Eigen::Index(input.size())).array() - options_.input_offset) *
                options_.input_scale;
  const auto& first = layers_.front();
  trace.pre.resize(layers_.size());
  trace.post.resize(layers_.size());
  trace.pre[0].noalias() = as_matrix(first.weight) * trace.input;
  trace.pre[0] += ConstVectorMap(first.bias.data().data(), Eigen::Index(first.bias.size()));
  forward_from_first(trace);
}

void EncoderSpec::forward_partial(const PartialPlan& plan, std::span<const double> base,
                                  std::span<const double> values, Trace& trace) const {
  if (plan.all_free) {
    forward(values, trace);
    return;
  }
  const std::size_t width = layers_.front().weight.dim(0);
  const std::size_t nfree = plan.free.size();
  if (values.size() != nfree || base.size() != width) throw InvalidArgument("partial input size mismatch");
  trace.pre.resize(layers_.size());
  trace.post.resize(layers_.size());
  trace.input.resize(Eigen::Index(nfree));
  for (std::size_t j = 0; j < nfree; ++j) trace.input[Eigen::Index(j)] = values[j] - options_.input_offset;
  trace.pre[0] = ConstVectorMap(base.data(), Eigen::Index(width));
  if (nfree > 0) {
    const ConstMatrixMap cols(plan.columns.data(), Eigen::Index(width), Eigen::Index(nfree));
    trace.pre[0].noalias() += cols * trace.input;
  }
  forward_from_first(trace);
}

void EncoderSpec::forward_from_first(Trace& trace) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (l > 0) {
      const auto& layer = layers_[l];
      trace.pre[l].noalias() = as_matrix(layer.weight) * trace.post[l - 1];
      trace.pre[l] += ConstVectorMap(layer.bias.data().data(), Eigen::Index(layer.bias.size()));
    }
    const bool last = l + 1 == layers_.size();
    if (last) {
      trace.post[l] = trace.pre[l];
    } else if (options_.activation == Activation::kTanh) {
      trace.post[l] = trace.pre[l].array().tanh();
    } else {
      trace.post[l] = trace.pre[l].cwiseMax(0.0);
    }
  }
}

namespace {

Tensor normalized(const Eigen::VectorXd& z) {
  std::vector<double> e(z.data(), z.data() + z.size());
  const double n = l2_norm(e);
  if (n == 0.0) throw DegenerateEncoding("encoder output is all zeros before normalization");
  for (double& v : e) v /= n;
  const std::size_t d = e.size();
  return Tensor(Shape{d}, std::move(e));
}

}  // namespace

double EncoderSpec::backward(const Trace& trace, const Tensor& direction, std::vector<double>& first_layer_grad) const {
  if (direction.shape() != Shape{embed_dim()}) throw InvalidArgument("projection direction must have shape (d)");
  const Eigen::VectorXd& z = trace.post.back();
  const Tensor e = normalized(z);
  const double n = l2_norm(std::span<const double>(z.data(), std::size_t(z.size())));
  // Same summation order as dot(text, encode(v)), so the two agree bitwise.
  const double value = dot(direction, e);
  const ConstVectorMap g(direction.data().data(), Eigen::Index(direction.size()));
  const ConstVectorMap ev(e.data().data(), Eigen::Index(e.size()));
  // d(g.e)/dz = (I - e e^T) g / ||z||
  Eigen::VectorXd grad = (g - value * ev) / n;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size()) {
      if (options_.activation == Activation::kTanh) {
        grad.array() *= 1.0 - trace.post[l].array().square();
      } else {
        // relu'(0) = 0
        grad.array() *= (trace.pre[l].array() > 0.0).cast<double>();
      }
    }
    if (l == 0) break;
    grad = as_matrix(layers_[l].weight).transpose() * grad;
  }
  first_layer_grad.assign(grad.data(), grad.data() + grad.size());
  return value;
}

Tensor EncoderSpec::raw_output(const Tensor& input) const {
  check_input(input);
  Trace trace;
  forward(input.data(), trace);
  const auto& z = trace.post.back();
  return Tensor(Shape{embed_dim()}, std::vector<double>(z.data(), z.data() + z.size()));
}

Tensor EncoderSpec::encode_unchecked(const Tensor& input) const {
  Tensor z = raw_output(input);
  const double n = l2_norm(z);
  if (n == 0.0) throw DegenerateEncoding("encoder output is all zeros before normalization");
  for (double& v : z.data()) v /= n;
  return z;
}

Tensor EncoderSpec::encode(const PixelImage& image) const { return encode_unchecked(image.tensor()); }

ScoreGradient EncoderSpec::project_with_gradient(const Tensor& input, const Tensor& direction) const {
  check_input(input);
  Trace trace;
  forward(input.data(), trace);
  std::vector<double> g0;
  ScoreGradient out;
  out.value = backward(trace, direction, g0);
  Eigen::VectorXd grad = as_matrix(layers_.front().weight).transpose() * ConstVectorMap(g0.data(), Eigen::Index(g0.size()));
  grad *= options_.input_scale;
  out.gradient = Tensor(options_.input_shape, std::vector<double>(grad.data(), grad.data() + grad.size()));
  return out;
}

ScoreGradient EncoderSpec::score_with_gradient_unchecked(const Tensor& input, const Tensor& text_embedding) const {
  if (text_embedding.shape() != Shape{embed_dim()}) throw InvalidArgument("text embedding must have shape (d)");
  if (std::abs(l2_norm(text_embedding) - 1.0) > kUnitTolerance) {
    throw InvalidArgument("text embedding is not unit norm");
  }
  return project_with_gradient(input, text_embedding);
}

ScoreGradient EncoderSpec::score_with_gradient(const PixelImage& image, const Tensor& text_embedding) const {
  return score_with_gradient_unchecked(image.tensor(), text_embedding);
}

Tensor EncoderSpec::raw_jacobian(const Tensor& input) const {
  check_input(input);
  Trace trace;
  forward(input.data(), trace);
  // Product of layer Jacobians, accumulated from the output side.
  RowMatrix jac = RowMatrix::Identity(Eigen::Index(embed_dim()), Eigen::Index(embed_dim()));
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size()) {
      Eigen::VectorXd d;
      if (options_.activation == Activation::kTanh) {
        d = 1.0 - trace.post[l].array().square();
      } else {
        d = (trace.pre[l].array() > 0.0).cast<double>();
      }
      jac = jac * d.asDiagonal();
    }
    jac = jac * as_matrix(layers_[l].weight);
  }
  jac *= options_.input_scale;
  return Tensor(Shape{embed_dim(), input_size()}, std::vector<double>(jac.data(), jac.data() + jac.size()));
}

EncoderSpec::PartialPlan EncoderSpec::partial_plan(std::vector<std::size_t> free) const {
  const Tensor& w = layers_.front().weight;
  const std::size_t width = w.dim(0);
  const std::size_t in = w.dim(1);
  PartialPlan plan;
  plan.free = std::move(free);
  plan.columns.resize(width * plan.free.size());
  for (std::size_t j = 0; j < plan.free.size(); ++j) {
    if (plan.free[j] >= in) throw InvalidArgument("free coordinate out of range");
  }
  for (std::size_t r = 0; r < width; ++r) {
    const auto row = w.row(r);
    for (std::size_t j = 0; j < plan.free.size(); ++j) {
      plan.columns[r * plan.free.size() + j] = row[plan.free[j]] * options_.input_scale;
    }
  }
  return plan;
}

EncoderSpec::PartialPlan EncoderSpec::full_plan() const {
  PartialPlan plan;
  plan.free.resize(input_size());
  for (std::size_t i = 0; i < plan.free.size(); ++i) plan.free[i] = i;
  plan.all_free = true;
  return plan;
}

std::vector<double> EncoderSpec::partial_base(const PartialPlan& plan, std::span<const double> image) const {
  if (image.size() != input_size()) throw InvalidArgument("partial_base: image size mismatch");
  const auto& first = layers_.front();
  if (plan.all_free) return {first.bias.data().begin(), first.bias.data().end()};
  Eigen::VectorXd x = (ConstVectorMap(image.data(), Eigen::Index(image.size())).array() - options_.input_offset) *
                      options_.input_scale;
  for (std::size_t j : plan.free) x[Eigen::Index(j)] = 0.0;
  Eigen::VectorXd base = as_matrix(first.weight) * x;
  base += ConstVectorMap(first.bias.data().data(), Eigen::Index(first.bias.size()));
  return {base.data(), base.data() + base.size()};
}

Tensor EncoderSpec::encode_partial(const PartialPlan& plan, std::span<const double> base,
                                   std::span<const double> values) const {
  Trace trace;
  forward_partial(plan, base, values, trace);
  return normalized(trace.post.back());
}

double EncoderSpec::project_partial(const PartialPlan& plan, std::span<const double> base,
                                    std::span<const double> values, const Tensor& direction,
                                    std::vector<double>& gradient) const {
  Trace trace;
  forward_partial(plan, base, values, trace);
  std::vector<double> g0;
  const double value = backward(trace, direction, g0);
  const ConstVectorMap g0v(g0.data(), Eigen::Index(g0.size()));
  Eigen::VectorXd grad;
  if (plan.all_free) {
    grad = as_matrix(layers_.front().weight).transpose() * g0v;
    grad *= options_.input_scale;
  } else if (plan.free.empty()) {
    grad.resize(0);
  } else {
    const ConstMatrixMap cols(plan.columns.data(), Eigen::Index(g0.size()), Eigen::Index(plan.free.size()));
    grad = cols.transpose() * g0v;
  }
  gradient.assign(grad.data(), grad.data() + grad.size());
  return value;
}

namespace {

nlohmann::json architecture_json(const EncoderSpec::Options& o) {
  nlohmann::json j;
  j["kind"] = to_string(o.kind);
  j["input_shape"] = o.input_shape;
  j["embed_dim"] = o.embed_dim;
  j["layer_widths"] = o.layer_widths;
  j["activation"] = to_string(o.activation);
  j["seed"] = o.seed;
  j["input_offset"] = o.input_offset;
  j["input_scale"] = o.input_scale;
  return j;
}

}  // namespace

std::string EncoderSpec::content_hash() const {
  std::vector<std::uint8_t> buf;
  const std::string arch = architecture_json(options_).dump();
  buf.insert(buf.end(), arch.begin(), arch.end());
  for (const auto& layer : layers_) {
    const auto w = encode_uapt(layer.weight);
    const auto b = encode_uapt(layer.bias);
    buf.insert(buf.end(), w.begin(), w.end());
    buf.insert(buf.end(), b.begin(), b.end());
  }
  return sha256_hex(buf);
}

std::filesystem::path EncoderSpec::save(const std::filesystem::path& manifest_path) const {
  const auto dir = manifest_path.parent_path();
  const std::string stem = manifest_path.stem().string();
  nlohmann::json j;
  j["format"] = "uap-encoder";
  j["version"] = 1;
  j["architecture"] = architecture_json(options_);
  j["layers"] = nlohmann::json::array();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string wname = stem + "_layer" + std::to_string(l) + "_weight.uapt";
    const std::string bname = stem + "_layer" + std::to_string(l) + "_bias.uapt";
    const auto wbytes = encode_uapt(layers_[l].weight);
    const auto bbytes = encode_uapt(layers_[l].bias);
    write_file_bytes(dir / wname, wbytes);
    write_file_bytes(dir / bname, bbytes);
    j["layers"].push_back({{"weight", wname},
                           {"weight_sha256", sha256_hex(wbytes)},
                           {"bias", bname},
                           {"bias_sha256", sha256_hex(bbytes)}});
  }
  j["content_hash"] = content_hash();
  write_text_file(manifest_path, j.dump(2) + "\n");
  return manifest_path;
}

EncoderSpec EncoderSpec::load(const std::filesystem::path& manifest_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(manifest_path.string() + ": " + e.what());
  }
  try {
    if (j.at("format") != "uap-encoder") throw IntegrityError("not an encoder manifest");
    const auto& a = j.at("architecture");
    Options o;
    o.kind = parse_encoder_kind(a.at("kind").get<std::string>());
    o.input_shape = a.at("input_shape").get<Shape>();
    o.embed_dim = a.at("embed_dim").get<std::size_t>();
    o.layer_widths = a.at("layer_widths").get<std::vector<std::size_t>>();
    o.activation = parse_activation(a.at("activation").get<std::string>());
    o.seed = a.at("seed").get<std::uint64_t>();
    o.input_offset = a.value("input_offset", 0.0);
    o.input_scale = a.value("input_scale", 1.0);

    const auto dir = manifest_path.parent_path();
    std::vector<DenseLayer> layers;
    for (const auto& entry : j.at("layers")) {
      auto read_checked = [&](const char* file_key, const char* hash_key) {
        const auto path = dir / entry.at(file_key).get<std::string>();
        const auto bytes = read_file_bytes(path);
        if (entry.contains(hash_key) && sha256_hex(bytes) != entry.at(hash_key).get<std::string>()) {
          throw IntegrityError(path.string() + ": content hash mismatch");
        }
        return decode_uapt(bytes);
      };
      layers.push_back({read_checked("weight", "weight_sha256"), read_checked("bias", "bias_sha256")});
    }
    return EncoderSpec(o, std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(manifest_path.string() + ": malformed encoder manifest: " + e.what());
  }
}

namespace {

// Extended-precision score for the finite-difference side of gradcheck. In
// double, cancellation in f(x+h) - f(x-h) leaves ~1e-11 absolute noise, which
// swamps the relative error of small gradient components.
class ReferenceScorer {
 public:
  ReferenceScorer(const EncoderSpec& spec, const Tensor& input, const Tensor& text)
      : spec_(spec), text_(text.data().begin(), text.data().end()) {
    const auto& o = spec.options();
    const auto& first = spec.layers().front();
    const std::size_t rows = first.weight.dim(0);
    const std::size_t cols = first.weight.dim(1);
    base_.assign(rows, 0.0L);
    for (std::size_t r = 0; r < rows; ++r) {
      long double acc = first.bias[r];
      const auto w = first.weight.row(r);
      for (std::size_t c = 0; c < cols; ++c) {
        acc += static_cast<long double>(w[c]) * ((static_cast<long double>(input[c]) - o.input_offset) * o.input_scale);
      }
      base_[r] = acc;
    }
  }

  // Score with input coordinate i moved by `shift` pixel units.
  long double score(std::size_t i, long double shift) const {
    const auto& o = spec_.options();
    const auto& layers = spec_.layers();
    std::vector<long double> a = base_;
    const auto& w0 = layers.front().weight;
    for (std::size_t r = 0; r < a.size(); ++r) a[r] += static_cast<long double>(w0.row(r)[i]) * shift * o.input_scale;
    for (std::size_t l = 0;; ++l) {
      if (l + 1 == layers.size()) break;
      for (long double& v : a) v = o.activation == Activation::kTanh ? std::tanh(v) : std::max(v, 0.0L);
      const auto& next = layers[l + 1];
      std::vector<long double> z(next.weight.dim(0));
      for (std::size_t r = 0; r < z.size(); ++r) {
        long double acc = next.bias[r];
        const auto w = next.weight.row(r);
        for (std::size_t c = 0; c < a.size(); ++c) acc += static_cast<long double>(w[c]) * a[c];
        z[r] = acc;
      }
      a = std::move(z);
    }
    long double norm = 0.0L;
    long double dotp = 0.0L;
    for (std::size_t j = 0; j < a.size(); ++j) {
      norm += a[j] * a[j];
      dotp += a[j] * text_[j];
    }
    if (norm == 0.0L) throw DegenerateEncoding("encoder output is all zeros before normalization");
    return dotp / std::sqrt(norm);
  }

 private:
  const EncoderSpec& spec_;
  std::vector<long double> text_;
  std::vector<long double> base_;
};

}  // namespace

double gradcheck(const EncoderSpec& spec, const PixelImage& image, const Tensor& text_embedding,
                 std::size_t n_probes, double step, std::uint64_t probe_seed) {
  if (!(step > 0.0)) throw InvalidArgument("gradcheck step must be positive");
  const ScoreGradient analytic = spec.score_with_gradient(image, text_embedding);
  const ReferenceScorer reference(spec, image.tensor(), text_embedding);
  Lcg64 rng(probe_seed);
  const std::size_t n = image.tensor().size();
  double worst = 0.0;
  for (std::size_t p = 0; p < n_probes; ++p) {
    const std::size_t i = rng.below(n);
    const long double h = step;
    const long double fd = (reference.score(i, h) - reference.score(i, -h)) / (2.0L * h);
    const double a = analytic.gradient[i];
    worst = std::max(worst, static_cast<double>(std::abs(a - fd) / std::max<long double>(std::abs(a), 1e-12L)));
  }
  return worst;
}

}  // namespace uap
