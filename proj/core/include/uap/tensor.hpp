#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace uap {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float64 array with an explicit shape. No broadcasting:
/// every binary operation requires identical shapes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor filled(Shape shape, double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Row i of a rank-2 tensor.
  std::span<double> row(std::size_t i);
  std::span<const double> row(std::size_t i) const;

  /// Same data viewed under a new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);
Tensor operator*(double s, Tensor a);

/// Elementwise product.
Tensor hadamard(const Tensor& a, const Tensor& b);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

double dot(std::span<const double> a, std::span<const double> b);
double dot(const Tensor& a, const Tensor& b);

double l2_norm(const Tensor& t);
double l2_norm(std::span<const double> v);
double linf_norm(const Tensor& t);

/// Scale back onto the l2 ball of radius epsilon when outside it.
/// Idempotent bitwise: the scaled result always satisfies l2_norm <= epsilon.
Tensor project_l2(const Tensor& delta, double epsilon);

/// Elementwise clamp to [-epsilon, epsilon].
Tensor project_linf(const Tensor& delta, double epsilon);

Tensor clamp_unit(const Tensor& t);

/// Image tensor of shape (c, h, w) with every value in [0, 1].
class PixelImage {
 public:
  explicit PixelImage(Tensor tensor);

  const Tensor& tensor() const { return tensor_; }
  const Shape& shape() const { return tensor_.shape(); }
  std::size_t channels() const { return tensor_.dim(0); }
  std::size_t height() const { return tensor_.dim(1); }
  std::size_t width() const { return tensor_.dim(2); }

  friend bool operator==(const PixelImage&, const PixelImage&) = default;

 private:
  Tensor tensor_;
};

/// Binary (c, h, w) tensor selecting the patch region; identical across channels.
class Mask {
 public:
  explicit Mask(Tensor tensor);

  /// Square patch of the given side anchored at the bottom-right corner,
  /// shifted up/left by `inset` pixels.
  static Mask bottom_right_square(std::size_t channels, std::size_t height, std::size_t width,
                                  std::size_t side, std::size_t inset = 0);

  /// Side of the square covering `area_fraction` of an h x w image: floor(sqrt(f*h*w)).
  static std::size_t square_side_for_area(std::size_t height, std::size_t width,
                                          double area_fraction);

  const Tensor& tensor() const { return tensor_; }
  const Shape& shape() const { return tensor_.shape(); }
  bool selected(std::size_t i) const { return tensor_[i] != 0.0; }
  /// Flat indices where the mask is 1, ascending.
  const std::vector<std::size_t>& indices() const { return indices_; }

 private:
  Tensor tensor_;
  std::vector<std::size_t> indices_;
};

/// image * (1 - mask) + delta * mask. Off-mask pixels are copied, not recomputed.
PixelImage apply_patch(const PixelImage& image, const Tensor& delta, const Mask& mask);

}  // namespace uap
