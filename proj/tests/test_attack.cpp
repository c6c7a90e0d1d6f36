#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "uap/attack.hpp"
#include "uap/error.hpp"
#include "uap/evaluation.hpp"
#include "uap/tensor_io.hpp"

namespace uap {
namespace {

using testing::small_options;
using testing::small_params;

struct Fixture {
  EncoderSpec encoder;
  MultimodalDataset dataset;
};

Fixture make_fixture(EncoderKind kind = EncoderKind::kMlp) {
  auto enc = EncoderSpec::random(small_options(kind));
  auto ds = generate_dataset(small_params(), enc);
  return {std::move(enc), std::move(ds)};
}

AttackConfig patch_config(std::size_t side = 3) {
  AttackConfig c;
  c.k = 1;
  c.epochs = 1;
  c.batch_size = 4;
  c.probe_images = 8;
  c.mask = Mask::bottom_right_square(3, 8, 8, side);
  return c;
}

AttackConfig global_config(NormKind norm, double eps) {
  AttackConfig c;
  c.k = 1;
  c.epochs = 1;
  c.batch_size = 4;
  c.probe_images = 8;
  c.mode = PerturbationMode::kGlobal;
  c.norm = norm;
  c.epsilon = eps;
  return c;
}

// Model input after moving the free coordinates of `image` by scale * r, without clamping.
Tensor shifted_input(const UapAttack& attack, std::size_t image, const Tensor& delta, const std::vector<double>& r,
                     double scale) {
  Tensor x = attack.base_image(image, delta);
  const auto& free = attack.free_coordinates();
  for (std::size_t j = 0; j < free.size(); ++j) x[free[j]] += scale * r[j];
  return x;
}

TEST(Attack, ImageLoopPushesMatchesOutOfTopK) {
  for (auto kind : {EncoderKind::kLinear, EncoderKind::kMlp}) {
    const auto fx = make_fixture(kind);
    const UapAttack attack(fx.encoder, fx.dataset, patch_config());
    const Tensor delta(fx.encoder.input_shape());
    std::size_t converged = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      const auto res = attack.image_inner_loop(i, delta, {});
      // Audit the converged flag against an independent full evaluation.
      const Tensor e = fx.encoder.encode_unchecked(shifted_input(attack, i, delta, res.r, 1.02));
      const int hit = indicator(e, fx.dataset.texts, fx.dataset.annotations.texts_of(i), 1);
      EXPECT_EQ(res.record.converged, hit == 0) << to_string(kind) << " image " << i;
      converged += res.record.converged;
    }
    EXPECT_GE(converged, 8u) << to_string(kind);
  }
}

TEST(Attack, ImageLoopStepsReduceTheMatchMargin) {
  const auto fx = make_fixture();
  auto cfg = patch_config();
  const Tensor delta(fx.encoder.input_shape());
  for (std::size_t i = 0; i < 5; ++i) {
    auto margin = [&](const UapAttack& a, const std::vector<double>& r) {
      const Tensor e = fx.encoder.encode_unchecked(shifted_input(a, i, delta, r, 1.0));
      const auto s = fx.dataset.texts.similarities(e.data());
      double own = -2.0;
      for (std::size_t t : fx.dataset.annotations.texts_of(i)) own = std::max(own, s[t]);
      double other = -2.0;
      for (std::size_t t : a.text_targets(i)) other = std::max(other, s[t]);
      return own - other;
    };
    cfg.max_inner_iters = 1;
    const UapAttack one(fx.encoder, fx.dataset, cfg);
    const auto res = one.image_inner_loop(i, delta, {});
    if (res.record.inner_iterations == 0) continue;
    EXPECT_LT(margin(one, res.r), margin(one, std::vector<double>(res.r.size(), 0.0)));
  }
}

TEST(Attack, TextLoopDemotesTheMatchedImage) {
  const auto fx = make_fixture();
  auto cfg = patch_config();
  cfg.k = 2;
  const UapAttack attack(fx.encoder, fx.dataset, cfg);
  const Tensor delta(fx.encoder.input_shape());
  std::size_t converged = 0;
  for (std::size_t t = 0; t < 10; ++t) {
    const auto res = attack.text_inner_loop(t, delta, {});
    // Candidates: the matched image then the k targets, all carrying the same r.
    std::vector<std::size_t> ids{fx.dataset.annotations.image_of(t)};
    const auto targets = attack.image_targets(t);
    ids.insert(ids.end(), targets.begin(), targets.end());
    std::vector<double> scores;
    for (std::size_t id : ids) {
      scores.push_back(dot(fx.dataset.text(t), fx.encoder.encode_unchecked(shifted_input(attack, id, delta, res.r, 1.02))));
    }
    const std::size_t own = 0;
    const int hit = indicator_from_scores(scores, std::span<const std::size_t>(&own, 1), 2);
    EXPECT_EQ(res.record.converged, hit == 0);
    converged += res.record.converged;
  }
  EXPECT_GE(converged, 8u);
}

TEST(Attack, SharedPatchGradientMatchesFiniteDifferences) {
  // d(f_y(t) - f_y'(t))/dr where both images carry the same masked r.
  auto o = small_options();
  o.input_scale = 1.0;
  const auto enc = EncoderSpec::random(o);
  const auto ds = generate_dataset(small_params(), enc);
  const Mask mask = Mask::bottom_right_square(3, 8, 8, 3);
  const auto plan = enc.partial_plan(mask.indices());
  Lcg64 rng(21);
  const Tensor delta = testing::random_tensor(rng, enc.input_shape(), 0.0, 1.0);
  std::vector<double> values;
  for (std::size_t i : mask.indices()) values.push_back(delta[i]);
  for (std::size_t t = 0; t < 5; ++t) {
    const std::size_t y = ds.annotations.image_of(t);
    const std::size_t other = (y + 1 + t) % ds.num_images();
    const Tensor text = ds.text(t);
    std::vector<double> g_y;
    std::vector<double> g_o;
    enc.project_partial(plan, enc.partial_base(plan, ds.image_data(y)), values, text, g_y);
    enc.project_partial(plan, enc.partial_base(plan, ds.image_data(other)), values, text, g_o);
    auto diff_at = [&](std::size_t j, double shift) {
      Tensor d = delta;
      d[mask.indices()[j]] += shift;
      auto score = [&](std::size_t img) {
        Tensor x = ds.image_tensor(img);
        for (std::size_t i : mask.indices()) x[i] = d[i];
        return dot(text, enc.encode_unchecked(x));
      };
      return score(y) - score(other);
    };
    for (int probe = 0; probe < 5; ++probe) {
      const std::size_t j = rng.below(values.size());
      const double h = 1e-5;
      const double fd = (diff_at(j, h) - diff_at(j, -h)) / (2.0 * h);
      const double analytic = g_y[j] - g_o[j];
      EXPECT_NEAR(analytic, fd, 1e-6 * std::max(std::abs(analytic), 1e-3));
    }
  }
}

TEST(Attack, TwoImageLinearCrossing) {
  // Two one-pixel-patch images, k = 1: after the text loop the other image outranks the match.
  auto o = small_options(EncoderKind::kLinear);
  const auto enc = EncoderSpec::random(o);
  auto p = small_params();
  p.n_images = 2;
  p.texts_per_image = 1;
  p.floor_k = 1;
  p.floor_multiple = 1.0;
  const auto ds = generate_dataset(p, enc);
  auto cfg = patch_config(4);
  const UapAttack attack(enc, ds, cfg);
  const Tensor delta(enc.input_shape());
  std::size_t converged = 0;
  for (std::size_t t = 0; t < 2; ++t) {
    const auto res = attack.text_inner_loop(t, delta, {});
    if (!res.record.converged) continue;
    ++converged;
    const std::size_t y = ds.annotations.image_of(t);
    const double own = dot(ds.text(t), enc.encode_unchecked(shifted_input(attack, y, delta, res.r, 1.02)));
    const double rival = dot(ds.text(t), enc.encode_unchecked(shifted_input(attack, 1 - y, delta, res.r, 1.02)));
    EXPECT_GT(rival, own);
  }
  EXPECT_GT(converged, 0u);
}

TEST(Attack, AlreadyFooledSampleTakesNoSteps) {
  const auto fx = make_fixture();
  const UapAttack attack(fx.encoder, fx.dataset, patch_config());
  const Tensor delta(fx.encoder.input_shape());
  for (std::size_t i = 0; i < 24; ++i) {
    const auto first = attack.image_inner_loop(i, delta, {});
    if (!first.record.converged) continue;
    const auto again = attack.image_inner_loop(i, delta, first.r);
    EXPECT_TRUE(again.record.converged);
    EXPECT_EQ(again.record.inner_iterations, 0u);
    EXPECT_EQ(again.r, first.r);
    return;
  }
  FAIL() << "no sample converged";
}

TEST(Attack, EmptyMaskLeavesDeltaUnchanged) {
  const auto fx = make_fixture();
  const auto res = run_tra(fx.encoder, fx.dataset, patch_config(0));
  EXPECT_EQ(l2_norm(res.perturbation.delta), 0.0);
  // Samples already fooled by the clean image converge; all others abort.
  std::size_t degenerate = 0;
  for (const auto& s : res.trace.samples) {
    EXPECT_NE(s.degenerate, s.converged);
    EXPECT_EQ(s.inner_iterations, 0u);
    degenerate += s.degenerate;
  }
  EXPECT_GT(degenerate, 0u);
}

TEST(Attack, ZeroEpochsIsTheIdentity) {
  const auto fx = make_fixture();
  auto cfg = patch_config();
  cfg.epochs = 0;
  const auto res = run_tira(fx.encoder, fx.dataset, cfg);
  EXPECT_EQ(l2_norm(res.perturbation.delta), 0.0);
  EXPECT_TRUE(res.trace.samples.empty());
  EXPECT_TRUE(res.trace.commits.empty());
}

TEST(Attack, RecordCountsFollowTheSchedule) {
  const auto fx = make_fixture();
  auto cfg = patch_config();
  cfg.epochs = 2;
  EXPECT_EQ(run_tra(fx.encoder, fx.dataset, cfg).trace.samples.size(), 2 * 24u);
  EXPECT_EQ(run_ira(fx.encoder, fx.dataset, cfg).trace.samples.size(), 2 * 72u);
  const auto tira = run_tira(fx.encoder, fx.dataset, cfg);
  EXPECT_EQ(tira.trace.samples.size(), 2 * (24u + 72u));
  EXPECT_EQ(tira.trace.commits.size(), 2 * 2 * 6u);  // two commits per batch of 4 images
  EXPECT_EQ(tira.trace.epochs.size(), 2u);
}

TEST(Attack, BatchLargerThanDatasetIsOneBatch) {
  const auto fx = make_fixture();
  auto cfg = patch_config();
  cfg.batch_size = 1000;
  const auto res = run_tira(fx.encoder, fx.dataset, cfg);
  EXPECT_EQ(res.trace.commits.size(), 2u);
}

TEST(Attack, RunsAreDeterministic) {
  const auto fx = make_fixture();
  auto cfg = patch_config();
  cfg.shuffle = true;
  const auto a = run_tira(fx.encoder, fx.dataset, cfg);
  const auto b = run_tira(fx.encoder, fx.dataset, cfg);
  EXPECT_EQ(a.perturbation.delta, b.perturbation.delta);
  EXPECT_EQ(a.trace.to_json(), b.trace.to_json());
}

TEST(Attack, PatchOnlyTouchesMaskPixels) {
  const auto fx = make_fixture();
  const auto cfg = patch_config();
  const auto res = run_tra(fx.encoder, fx.dataset, cfg);
  const auto& m = cfg.mask->tensor();
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0.0) {
      EXPECT_EQ(res.perturbation.delta[i], 0.0);
    }
    EXPECT_GE(res.perturbation.delta[i], 0.0);
    EXPECT_LE(res.perturbation.delta[i], 1.0);
  }
  const Tensor applied = res.perturbation.apply(fx.dataset.image_data(0));
  const Tensor clean = fx.dataset.image_tensor(0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(applied[i], m[i] == 0.0 ? clean[i] : res.perturbation.delta[i]);
  }
  for (const auto& c : res.trace.commits) EXPECT_TRUE(c.within_budget);
}

TEST(Attack, GlobalBudgetHoldsAtEveryCommit) {
  const auto fx = make_fixture();
  for (auto norm : {NormKind::kL2, NormKind::kLinf}) {
    const double eps = norm == NormKind::kL2 ? 0.5 : 4.0 / 255.0;
    for (auto strategy : {Strategy::kTra, Strategy::kIra, Strategy::kTira}) {
      const auto res = run_global(fx.encoder, fx.dataset, global_config(norm, eps), strategy);
      ASSERT_FALSE(res.trace.commits.empty());
      for (const auto& c : res.trace.commits) {
        EXPECT_TRUE(c.within_budget);
        EXPECT_LE(norm == NormKind::kL2 ? c.l2 : c.linf, eps + 1e-9);
      }
    }
  }
}

TEST(Attack, TinyBudgetKeepsCleanMetrics) {
  const auto fx = make_fixture();
  const auto res = run_global(fx.encoder, fx.dataset, global_config(NormKind::kL2, 1e-9), Strategy::kTra);
  const std::vector<std::size_t> ks{1, 5};
  const auto clean = evaluate(fx.encoder, fx.dataset, nullptr, ks);
  const auto adv = evaluate(fx.encoder, fx.dataset, &res.perturbation, ks);
  for (std::size_t j = 0; j < ks.size(); ++j) {
    EXPECT_NEAR(adv.text_retrieval[j], clean.text_retrieval[j], 0.01);
    EXPECT_NEAR(adv.image_retrieval[j], clean.image_retrieval[j], 0.01);
  }
}

TEST(Attack, ConfigValidation) {
  const auto fx = make_fixture();
  auto cfg = patch_config();
  cfg.mask.reset();
  EXPECT_THROW(UapAttack(fx.encoder, fx.dataset, cfg), InvalidArgument);
  cfg = patch_config();
  cfg.eta = 0.0;
  EXPECT_THROW(UapAttack(fx.encoder, fx.dataset, cfg), InvalidArgument);
  cfg = patch_config();
  cfg.k = 24;
  EXPECT_THROW(UapAttack(fx.encoder, fx.dataset, cfg), InvalidArgument);
  auto g = global_config(NormKind::kL2, 0.0);
  EXPECT_THROW(UapAttack(fx.encoder, fx.dataset, g), InvalidArgument);
  g = global_config(NormKind::kL2, 1.0);
  g.mask = Mask::bottom_right_square(3, 8, 8, 2);
  EXPECT_THROW(UapAttack(fx.encoder, fx.dataset, g), InvalidArgument);
}

TEST(Attack, DefaultPatchCoversThreePercent) {
  const Mask m = default_patch_mask({3, 32, 32});
  EXPECT_EQ(m.indices().size(), 3u * 5 * 5);
  EXPECT_EQ(m.tensor()[3 * 32 * 32 - 1], 1.0);
}

TEST(Persistence, PerturbationRoundTripAndTamperDetection) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "uap_test_perturbation";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto fx = make_fixture();
  const auto res = run_tra(fx.encoder, fx.dataset, patch_config());
  save_perturbation(res.perturbation, dir / "delta.uapt");
  const auto back = load_perturbation(dir / "delta.uapt");
  EXPECT_EQ(back.delta, res.perturbation.delta);
  ASSERT_TRUE(back.mask.has_value());
  EXPECT_EQ(back.mask->indices(), res.perturbation.mask->indices());
  EXPECT_EQ(back.encoder_hash, fx.encoder.content_hash());
  EXPECT_EQ(back.config_hash, res.perturbation.config_hash);

  Tensor d = res.perturbation.delta;
  d[d.size() - 1] = 0.123;
  write_uapt(dir / "delta.uapt", d);
  EXPECT_THROW(load_perturbation(dir / "delta.uapt"), IntegrityError);

  const auto g = run_global(fx.encoder, fx.dataset, global_config(NormKind::kLinf, 0.01), Strategy::kTra);
  save_perturbation(g.perturbation, dir / "global.uapt");
  const auto gb = load_perturbation(dir / "global.uapt");
  EXPECT_EQ(gb.mode, PerturbationMode::kGlobal);
  EXPECT_EQ(gb.norm, NormKind::kLinf);
  EXPECT_EQ(gb.epsilon, 0.01);
  EXPECT_FALSE(gb.mask.has_value());
  fs::remove_all(dir);
}

}  // namespace
}  // namespace uap
