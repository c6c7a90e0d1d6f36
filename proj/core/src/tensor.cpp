#include "uap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "uap/error.hpp"

namespace uap {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

void check_dims(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw InvalidArgument("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw InvalidArgument("data length " + std::to_string(data_.size()) + " does not match shape " +
                          shape_string(shape_));
  }
  if (!all_finite()) throw InvalidArgument("tensor data contains NaN or Inf");
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return vector(std::vector<double>(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw InvalidArgument("axis out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

std::span<double> Tensor::row(std::size_t i) {
  if (rank() != 2 || i >= shape_[0]) throw InvalidArgument("row index out of range");
  return std::span<double>(data_).subspan(i * shape_[1], shape_[1]);
}

std::span<const double> Tensor::row(std::size_t i) const {
  if (rank() != 2 || i >= shape_[0]) throw InvalidArgument("row index out of range");
  return std::span<const double>(data_).subspan(i * shape_[1], shape_[1]);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw InvalidArgument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("dot: length mismatch");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  return dot(a.data(), b.data());
}

double l2_norm(std::span<const double> v) {
  // Scaled accumulation keeps tiny and huge inputs representable.
  double scale = 0.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  if (scale == 0.0) return 0.0;
  double sum = 0.0;
  for (double x : v) {
    const double y = x / scale;
    sum += y * y;
  }
  return scale * std::sqrt(sum);
}

double l2_norm(const Tensor& t) {
  if (t.empty()) throw InvalidArgument("l2_norm of an empty tensor");
  return l2_norm(t.data());
}

double linf_norm(const Tensor& t) {
  if (t.empty()) throw InvalidArgument("linf_norm of an empty tensor");
  double m = 0.0;
  for (double x : t.data()) m = std::max(m, std::abs(x));
  return m;
}

Tensor project_l2(const Tensor& delta, double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidArgument("project_l2: epsilon must be positive");
  const double norm = l2_norm(delta);
  if (norm <= epsilon) return delta;
  double scale = epsilon / norm;
  Tensor out = delta * scale;
  // Rounding can leave the result a few ulps outside the ball; shrink until inside
  // so that a second projection is the identity.
  while (l2_norm(out) > epsilon) {
    scale = std::nextafter(scale, 0.0);
    out = delta * scale;
  }
  return out;
}

Tensor project_linf(const Tensor& delta, double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidArgument("project_linf: epsilon must be positive");
  Tensor out = delta;
  for (double& v : out.data()) v = std::clamp(v, -epsilon, epsilon);
  return out;
}

Tensor clamp_unit(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

PixelImage::PixelImage(Tensor tensor) : tensor_(std::move(tensor)) {
  if (tensor_.rank() != 3) {
    throw InvalidArgument("image must have shape (c, h, w), got " + shape_string(tensor_.shape()));
  }
  for (double v : tensor_.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("image pixel outside [0, 1]");
  }
}

Mask::Mask(Tensor tensor) : tensor_(std::move(tensor)) {
  if (tensor_.rank() != 3) {
    throw InvalidArgument("mask must have shape (c, h, w), got " + shape_string(tensor_.shape()));
  }
  const std::size_t plane = tensor_.dim(1) * tensor_.dim(2);
  for (std::size_t i = 0; i < tensor_.size(); ++i) {
    const double v = tensor_[i];
    if (v != 0.0 && v != 1.0) throw InvalidArgument("mask values must be exactly 0 or 1");
    if (tensor_[i % plane] != v) throw InvalidArgument("mask must be identical across channels");
    if (v == 1.0) indices_.push_back(i);
  }
}

Mask Mask::bottom_right_square(std::size_t channels, std::size_t height, std::size_t width,
                               std::size_t side, std::size_t inset) {
  if (side + inset > height || side + inset > width) {
    throw InvalidArgument("patch of side " + std::to_string(side) + " with inset " +
                          std::to_string(inset) + " does not fit a " + std::to_string(height) + "x" +
                          std::to_string(width) + " image");
  }
  Tensor t(Shape{channels, height, width});
  const std::size_t y0 = height - inset - side;
  const std::size_t x0 = width - inset - side;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = y0; y < y0 + side; ++y) {
      for (std::size_t x = x0; x < x0 + side; ++x) t[(c * height + y) * width + x] = 1.0;
    }
  }
  return Mask(std::move(t));
}

std::size_t Mask::square_side_for_area(std::size_t height, std::size_t width, double area_fraction) {
  if (!(area_fraction > 0.0 && area_fraction <= 1.0)) {
    throw InvalidArgument("patch area fraction must be in (0, 1]");
  }
  // Guard against sqrt landing just below an exact integer.
  const double exact = std::sqrt(area_fraction * static_cast<double>(height * width));
  return static_cast<std::size_t>(std::floor(exact + 1e-9));
}

PixelImage apply_patch(const PixelImage& image, const Tensor& delta, const Mask& mask) {
  require_same_shape(image.tensor(), delta, "apply_patch");
  require_same_shape(image.tensor(), mask.tensor(), "apply_patch");
  Tensor out = image.tensor();
  for (std::size_t i : mask.indices()) {
    const double v = delta[i];
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("apply_patch: delta outside [0, 1] under the mask");
    out[i] = v;
  }
  return PixelImage(std::move(out));
}

}  // namespace uap
