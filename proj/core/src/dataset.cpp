#include "uap/dataset.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <json.hpp>
#include <sstream>

#include "uap/error.hpp"
#include "uap/rng.hpp"
#include "uap/tensor_io.hpp"

namespace uap {

using nlohmann::json;

std::span<const double> MultimodalDataset::image_data(std::size_t i) const {
  const std::size_t n = image_size();
  return images.data().subspan(i * n, n);
}

Tensor MultimodalDataset::image_tensor(std::size_t i) const {
  const auto d = image_data(i);
  return Tensor(image_shape(), std::vector<double>(d.begin(), d.end()));
}

Tensor MultimodalDataset::text(std::size_t t) const {
  const auto r = texts.row(t);
  return Tensor(Shape{r.size()}, std::vector<double>(r.begin(), r.end()));
}

namespace {

void validate(const DatasetParams& p) {
  if (p.n_images == 0 || p.texts_per_image == 0) throw InvalidArgument("dataset needs images and texts");
  if (p.image_shape.size() != 3) throw InvalidArgument("image shape must be (c, h, w)");
  for (std::size_t d : p.image_shape) {
    if (d == 0) throw InvalidArgument("image dimensions must be positive");
  }
  if (p.embed_dim == 0) throw InvalidArgument("embed_dim must be positive");
  if (p.class_count < 2) throw InvalidArgument("class_count must be at least 2");
  if (!(p.noise_level >= 0.0) || !std::isfinite(p.noise_level)) throw InvalidArgument("noise level must be >= 0");
  if (!(p.contrast > 0.0) || !std::isfinite(p.contrast)) throw InvalidArgument("contrast must be positive");
  if (p.embed_dim > shape_size(p.image_shape)) {
    throw InvalidArgument("embed_dim cannot exceed the number of pixels");
  }
  if (p.floor_k == 0) throw InvalidArgument("floor_k must be positive");
}

std::vector<double> unit_gaussian(Lcg64& rng, std::size_t d) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.gaussian();
  const double n = l2_norm(v);
  for (double& x : v) x /= n;
  return v;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

json params_json(const DatasetParams& p) {
  return {{"n_images", p.n_images},
          {"n_texts", p.n_texts()},
          {"texts_per_image", p.texts_per_image},
          {"image_shape", p.image_shape},
          {"embed_dim", p.embed_dim},
          {"class_count", p.class_count},
          {"noise_level", p.noise_level},
          {"seed", p.seed},
          {"contrast", p.contrast},
          {"floor_k", p.floor_k},
          {"floor_multiple", p.floor_multiple}};
}

DatasetParams params_from_json(const json& j) {
  DatasetParams p;
  p.n_images = j.at("n_images").get<std::size_t>();
  p.texts_per_image = j.at("texts_per_image").get<std::size_t>();
  p.image_shape = j.at("image_shape").get<Shape>();
  p.embed_dim = j.at("embed_dim").get<std::size_t>();
  p.class_count = j.at("class_count").get<std::size_t>();
  p.noise_level = j.at("noise_level").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.contrast = j.at("contrast").get<double>();
  p.floor_k = j.at("floor_k").get<std::size_t>();
  p.floor_multiple = j.at("floor_multiple").get<double>();
  if (j.at("n_texts").get<std::size_t>() != p.n_texts()) {
    throw CorruptDataset("manifest n_texts is not n_images * texts_per_image");
  }
  return p;
}

json file_json(const DatasetFile& f) { return {{"path", f.path}, {"sha256", f.sha256}}; }
DatasetFile file_from_json(const json& j) { return {j.at("path").get<std::string>(), j.at("sha256").get<std::string>()}; }

json manifest_json(const DatasetManifest& m) {
  return {{"format", "uap-dataset"},
          {"version", 1},
          {"params", params_json(m.params)},
          {"encoder_hash", m.encoder_hash},
          {"clean_floor_recall", m.clean_floor_recall},
          {"files",
           {{"images", file_json(m.images)},
            {"texts", file_json(m.texts)},
            {"annotations", file_json(m.annotations)},
            {"prototypes", file_json(m.prototypes)},
            {"labels", file_json(m.labels)}}}};
}

/// Pixel-space decoder: pseudo-inverse of the encoder Jacobian at the constant
/// image, scaled to unit RMS per pixel for a unit latent.
Eigen::MatrixXd decoder_matrix(const EncoderSpec& encoder, double base_level) {
  const Tensor base = Tensor::filled(encoder.input_shape(), base_level);
  const Tensor jac = encoder.raw_jacobian(base);
  const Eigen::Index d = Eigen::Index(jac.dim(0));
  const Eigen::Index n = Eigen::Index(jac.dim(1));
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> j(jac.data().data(), d, n);
  const Eigen::MatrixXd gram = j * j.transpose();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) {
    throw DegenerateDataset("encoder Jacobian at the base image is rank deficient; cannot build a decoder");
  }
  Eigen::MatrixXd dec = j.transpose() * ldlt.solve(Eigen::MatrixXd::Identity(d, d));
  const double rms = dec.norm() / std::sqrt(static_cast<double>(d * n));
  if (!(rms > 0.0) || !std::isfinite(rms)) throw DegenerateDataset("decoder matrix is degenerate");
  return dec / rms;
}

}  // namespace

double clean_text_recall(const MultimodalDataset& dataset, const EncoderSpec& encoder, std::size_t k,
                         std::size_t threads) {
  Tensor emb(Shape{dataset.num_images(), encoder.embed_dim()});
  parallel_for(dataset.num_images(), threads, [&](std::size_t i) {
    const Tensor e = encoder.encode(dataset.image(i));
    std::copy(e.data().begin(), e.data().end(), emb.row(i).begin());
  });
  return recall_at_k(EmbeddingIndex(std::move(emb)), dataset.texts, dataset.annotations.image_to_texts(),
                     std::min(k, dataset.num_texts()), threads);
}

MultimodalDataset generate_dataset(const DatasetParams& params, const EncoderSpec& encoder) {
  validate(params);
  if (encoder.input_shape() != params.image_shape) {
    throw InvalidArgument("encoder input shape " + shape_string(encoder.input_shape()) +
                          " does not match image shape " + shape_string(params.image_shape));
  }
  if (encoder.embed_dim() != params.embed_dim) throw InvalidArgument("encoder embed_dim does not match dataset");

  const std::size_t n = params.n_images;
  const std::size_t d = params.embed_dim;
  const std::size_t m = params.n_texts();
  const std::size_t pixels = shape_size(params.image_shape);

  Lcg64 rng(params.seed);
  std::vector<std::vector<double>> latents(n);
  for (auto& z : latents) z = unit_gaussian(rng, d);

  std::vector<double> text_data(m * d);
  std::vector<std::vector<std::size_t>> image_to_texts(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < params.texts_per_image; ++j) {
      const std::size_t t = i * params.texts_per_image + j;
      std::vector<double> v(d);
      for (std::size_t c = 0; c < d; ++c) v[c] = latents[i][c] + params.noise_level * rng.gaussian();
      const double norm = l2_norm(v);
      if (norm == 0.0) throw DegenerateDataset("text embedding collapsed to zero");
      for (std::size_t c = 0; c < d; ++c) text_data[t * d + c] = v[c] / norm;
      image_to_texts[i].push_back(t);
    }
  }

  std::vector<double> proto_data(params.class_count * d);
  for (std::size_t c = 0; c < params.class_count; ++c) {
    const auto p = unit_gaussian(rng, d);
    std::copy(p.begin(), p.end(), proto_data.begin() + static_cast<std::ptrdiff_t>(c * d));
  }
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t c = 0; c < params.class_count; ++c) {
      const double s = dot(latents[i], std::span<const double>(proto_data).subspan(c * d, d));
      if (s > best_sim) {
        best_sim = s;
        best = c;
      }
    }
    labels[i] = best;
  }

  double base = encoder.options().input_offset;
  if (!(base > 0.0 && base < 1.0)) base = 0.5;
  const double base_logit = std::log(base / (1.0 - base));
  const Eigen::MatrixXd dec = decoder_matrix(encoder, base);
  std::vector<double> image_data(n * pixels);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd signal = dec * Eigen::Map<const Eigen::VectorXd>(latents[i].data(), Eigen::Index(d));
    for (std::size_t p = 0; p < pixels; ++p) {
      image_data[i * pixels + p] = sigmoid(base_logit + params.contrast * signal[Eigen::Index(p)]);
    }
  }

  Shape stacked{n};
  stacked.insert(stacked.end(), params.image_shape.begin(), params.image_shape.end());
  MultimodalDataset ds{
      DatasetManifest{params, encoder.content_hash(), 0.0, {}, {}, {}, {}, {}},
      Tensor(stacked, std::move(image_data)),
      EmbeddingIndex(Tensor(Shape{m, d}, std::move(text_data))),
      MatchAnnotation(std::move(image_to_texts), m),
      EmbeddingIndex(Tensor(Shape{params.class_count, d}, std::move(proto_data))),
      std::move(labels),
  };

  const std::size_t k = std::min(params.floor_k, m);
  const double recall = clean_text_recall(ds, encoder, k);
  ds.manifest.clean_floor_recall = recall;
  const double chance = static_cast<double>(k) / static_cast<double>(m);
  if (recall < params.floor_multiple * chance) {
    std::ostringstream os;
    os << "clean TR R@" << k << " = " << recall << " is below " << params.floor_multiple << "x chance ("
       << params.floor_multiple * chance << "); the decoder/encoder pairing (dataset seed " << params.seed
       << ", encoder seed " << encoder.options().seed << ") is rejected";
    throw DegenerateDataset(os.str());
  }
  return ds;
}

std::filesystem::path save_dataset(MultimodalDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const std::string& name, const std::vector<std::uint8_t>& bytes) {
    write_file_bytes(dir / name, bytes);
    return DatasetFile{name, sha256_hex(bytes)};
  };
  auto put_text = [&](const std::string& name, const std::string& text) {
    return put(name, std::vector<std::uint8_t>(text.begin(), text.end()));
  };
  ds.manifest.images = put("images.uapt", encode_uapt(ds.images));
  ds.manifest.texts = put("texts.uapt", encode_uapt(ds.texts.embeddings()));
  ds.manifest.annotations = put_text("annotations.json", json{{"image_to_texts", ds.annotations.image_to_texts()}}.dump() + "\n");
  ds.manifest.prototypes = put("prototypes.uapt", encode_uapt(ds.prototypes.embeddings()));
  ds.manifest.labels = put_text("labels.json", json(ds.labels).dump() + "\n");
  const auto manifest_path = dir / "manifest.json";
  write_text_file(manifest_path, manifest_json(ds.manifest).dump(2) + "\n");
  return manifest_path;
}

MultimodalDataset load_dataset(const std::filesystem::path& manifest_path) {
  json mj;
  try {
    mj = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw IntegrityError(manifest_path.string() + ": " + e.what());
  }
  const auto dir = manifest_path.parent_path();
  DatasetManifest manifest;
  try {
    if (mj.at("format") != "uap-dataset") throw IntegrityError("not a dataset manifest");
    manifest.params = params_from_json(mj.at("params"));
    manifest.encoder_hash = mj.at("encoder_hash").get<std::string>();
    manifest.clean_floor_recall = mj.at("clean_floor_recall").get<double>();
    const auto& files = mj.at("files");
    manifest.images = file_from_json(files.at("images"));
    manifest.texts = file_from_json(files.at("texts"));
    manifest.annotations = file_from_json(files.at("annotations"));
    manifest.prototypes = file_from_json(files.at("prototypes"));
    manifest.labels = file_from_json(files.at("labels"));
  } catch (const json::exception& e) {
    throw IntegrityError(manifest_path.string() + ": malformed manifest: " + e.what());
  }

  auto checked = [&](const DatasetFile& f) {
    const auto path = dir / f.path;
    const auto bytes = read_file_bytes(path);
    if (sha256_hex(bytes) != f.sha256) throw IntegrityError(path.string() + ": content hash mismatch");
    return bytes;
  };
  const auto image_bytes = checked(manifest.images);
  const auto text_bytes = checked(manifest.texts);
  const auto ann_bytes = checked(manifest.annotations);
  const auto proto_bytes = checked(manifest.prototypes);
  const auto label_bytes = checked(manifest.labels);

  const auto& p = manifest.params;
  Tensor images = decode_uapt(image_bytes);
  Shape expected{p.n_images};
  expected.insert(expected.end(), p.image_shape.begin(), p.image_shape.end());
  if (images.shape() != expected) throw CorruptDataset("image tensor shape does not match the manifest");
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw CorruptDataset("image pixel outside [0, 1]");
  }
  Tensor texts = decode_uapt(text_bytes);
  if (texts.shape() != Shape{p.n_texts(), p.embed_dim}) throw CorruptDataset("text tensor shape does not match the manifest");
  Tensor protos = decode_uapt(proto_bytes);
  if (protos.shape() != Shape{p.class_count, p.embed_dim}) throw CorruptDataset("prototype tensor shape mismatch");

  std::vector<std::vector<std::size_t>> i2t;
  std::vector<std::size_t> labels;
  try {
    i2t = json::parse(ann_bytes).at("image_to_texts").get<std::vector<std::vector<std::size_t>>>();
    labels = json::parse(label_bytes).get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw CorruptDataset(std::string("malformed annotations: ") + e.what());
  }
  if (i2t.size() != p.n_images) throw CorruptDataset("annotation image count does not match the manifest");
  for (const auto& texts_of : i2t) {
    if (texts_of.size() != p.texts_per_image) throw CorruptDataset("image does not have texts_per_image matches");
  }
  if (labels.size() != p.n_images) throw CorruptDataset("label count does not match the manifest");
  for (std::size_t y : labels) {
    if (y >= p.class_count) throw CorruptDataset("label out of range");
  }

  auto index = [](Tensor t, const char* what) {
    try {
      return EmbeddingIndex(std::move(t));
    } catch (const InvalidArgument& e) {
      throw CorruptDataset(std::string(what) + ": " + e.what());
    }
  };
  return MultimodalDataset{manifest,
                           std::move(images),
                           index(std::move(texts), "texts"),
                           MatchAnnotation(std::move(i2t), p.n_texts()),
                           index(std::move(protos), "prototypes"),
                           std::move(labels)};
}

std::string dataset_hash(const MultimodalDataset& dataset) {
  DatasetManifest m = dataset.manifest;
  // Content hashes identify the payload; recompute them so unsaved datasets hash too.
  m.images = {"images.uapt", sha256_hex(encode_uapt(dataset.images))};
  m.texts = {"texts.uapt", sha256_hex(encode_uapt(dataset.texts.embeddings()))};
  m.annotations = {"annotations.json",
                   sha256_hex(json{{"image_to_texts", dataset.annotations.image_to_texts()}}.dump() + "\n")};
  m.prototypes = {"prototypes.uapt", sha256_hex(encode_uapt(dataset.prototypes.embeddings()))};
  m.labels = {"labels.json", sha256_hex(json(dataset.labels).dump() + "\n")};
  return sha256_hex(manifest_json(m).dump());
}

}  // namespace uap
