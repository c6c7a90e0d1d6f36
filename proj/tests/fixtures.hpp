#pragma once

#include <cmath>
#include <vector>

#include "uap/dataset.hpp"
#include "uap/encoder.hpp"
#include "uap/rng.hpp"
#include "uap/tensor.hpp"

namespace uap::testing {

inline Tensor random_tensor(Lcg64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor random_unit(Lcg64& rng, std::size_t d) {
  std::vector<double> v(d);
  double n = 0.0;
  for (double& x : v) {
    x = rng.gaussian();
    n += x * x;
  }
  for (double& x : v) x /= std::sqrt(n);
  return Tensor(Shape{d}, std::move(v));
}

inline PixelImage random_image(Lcg64& rng, const Shape& shape) { return PixelImage(random_tensor(rng, shape, 0.0, 1.0)); }

/// A downsized toy encoder: 3x8x8 -> 32 -> 16 -> 8.
inline EncoderSpec::Options small_options(EncoderKind kind = EncoderKind::kMlp) {
  auto o = EncoderSpec::toy_options();
  o.kind = kind;
  o.input_shape = {3, 8, 8};
  o.embed_dim = 8;
  o.layer_widths = kind == EncoderKind::kMlp ? std::vector<std::size_t>{32, 16} : std::vector<std::size_t>{};
  o.seed = 11;
  return o;
}

inline DatasetParams small_params() {
  DatasetParams p;
  p.n_images = 24;
  p.texts_per_image = 3;
  p.image_shape = {3, 8, 8};
  p.embed_dim = 8;
  p.class_count = 4;
  p.seed = 5;
  p.floor_k = 1;
  return p;
}

}  // namespace uap::testing
