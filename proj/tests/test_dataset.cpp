#include <gtest/gtest.h>

#include <filesystem>
#include <json.hpp>

#include "fixtures.hpp"
#include "uap/dataset.hpp"
#include "uap/error.hpp"
#include "uap/tensor_io.hpp"

namespace uap {
namespace {

namespace fs = std::filesystem;
using testing::small_options;
using testing::small_params;

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Dataset, DeterministicForFixedSeed) {
  const auto enc = EncoderSpec::random(small_options());
  const auto a = generate_dataset(small_params(), enc);
  const auto b = generate_dataset(small_params(), enc);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.texts.embeddings(), b.texts.embeddings());
  EXPECT_EQ(dataset_hash(a), dataset_hash(b));
  auto p = small_params();
  p.seed += 1;
  EXPECT_NE(dataset_hash(generate_dataset(p, enc)), dataset_hash(a));
}

TEST(Dataset, InvariantsHold) {
  const auto enc = EncoderSpec::random(small_options());
  const auto ds = generate_dataset(small_params(), enc);
  EXPECT_EQ(ds.num_images(), 24u);
  EXPECT_EQ(ds.num_texts(), 72u);
  for (double v : ds.images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (std::size_t t = 0; t < ds.num_texts(); ++t) EXPECT_NEAR(l2_norm(ds.text(t)), 1.0, 1e-12);
  for (std::size_t i = 0; i < ds.num_images(); ++i) {
    EXPECT_EQ(ds.annotations.texts_of(i).size(), 3u);
    EXPECT_LT(ds.labels[i], 4u);
  }
  EXPECT_EQ(ds.manifest.encoder_hash, enc.content_hash());
}

TEST(Dataset, ZeroNoiseGivesIdenticalTextsPerImage) {
  auto p = small_params();
  p.noise_level = 0.0;
  const auto ds = generate_dataset(p, EncoderSpec::random(small_options()));
  for (std::size_t i = 0; i < ds.num_images(); ++i) {
    const auto& ts = ds.annotations.texts_of(i);
    for (std::size_t t : ts) EXPECT_EQ(ds.text(t), ds.text(ts[0]));
  }
}

TEST(Dataset, CleanRetrievalClearsTheFloor) {
  const auto enc = EncoderSpec::random(small_options());
  const auto ds = generate_dataset(small_params(), enc);
  EXPECT_GE(clean_text_recall(ds, enc, 1), 5.0 / 72.0);
}

TEST(Dataset, RejectsBadParameters) {
  const auto enc = EncoderSpec::random(small_options());
  auto p = small_params();
  p.n_images = 0;
  EXPECT_THROW(generate_dataset(p, enc), InvalidArgument);
  p = small_params();
  p.noise_level = -1.0;
  EXPECT_THROW(generate_dataset(p, enc), InvalidArgument);
  p = small_params();
  p.image_shape = {3, 4, 4};
  EXPECT_THROW(generate_dataset(p, enc), InvalidArgument);
  p = small_params();
  p.class_count = 1;
  EXPECT_THROW(generate_dataset(p, enc), InvalidArgument);
}

TEST(Dataset, UnreachableFloorIsDegenerate) {
  auto p = small_params();
  p.floor_multiple = 1e6;
  EXPECT_THROW(generate_dataset(p, EncoderSpec::random(small_options())), DegenerateDataset);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const auto dir = fresh_dir("uap_test_dataset_rt");
  auto ds = generate_dataset(small_params(), EncoderSpec::random(small_options()));
  const auto manifest = save_dataset(ds, dir);
  const auto back = load_dataset(manifest);
  EXPECT_EQ(back.images, ds.images);
  EXPECT_EQ(back.texts.embeddings(), ds.texts.embeddings());
  EXPECT_EQ(back.annotations, ds.annotations);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(dataset_hash(back), dataset_hash(ds));
  fs::remove_all(dir);
}

TEST(Dataset, TruncatedPayloadIsAnIntegrityError) {
  const auto dir = fresh_dir("uap_test_dataset_trunc");
  auto ds = generate_dataset(small_params(), EncoderSpec::random(small_options()));
  const auto manifest = save_dataset(ds, dir);
  auto bytes = read_file_bytes(dir / "images.uapt");
  bytes.resize(bytes.size() / 2);
  write_file_bytes(dir / "images.uapt", bytes);
  EXPECT_THROW(load_dataset(manifest), IntegrityError);
  fs::remove_all(dir);
}

TEST(Dataset, InconsistentAnnotationsWithValidHashAreCorrupt) {
  const auto dir = fresh_dir("uap_test_dataset_corrupt");
  auto ds = generate_dataset(small_params(), EncoderSpec::random(small_options()));
  const auto manifest = save_dataset(ds, dir);
  auto ann = nlohmann::json::parse(read_text_file(dir / "annotations.json"));
  ann["image_to_texts"][0][0] = ann["image_to_texts"][1][0];  // text listed twice, another unlisted
  const std::string text = ann.dump() + "\n";
  write_text_file(dir / "annotations.json", text);
  auto mj = nlohmann::json::parse(read_text_file(manifest));
  mj["files"]["annotations"]["sha256"] = sha256_hex(text);
  write_text_file(manifest, mj.dump(2));
  EXPECT_THROW(load_dataset(manifest), CorruptDataset);
  fs::remove_all(dir);
}

TEST(Dataset, MissingManifestIsAnIoError) {
  EXPECT_THROW(load_dataset("/nonexistent/manifest.json"), IoError);
}

}  // namespace
}  // namespace uap
