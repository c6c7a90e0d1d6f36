#include "uap/attack.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "uap/error.hpp"
#include "uap/retrieval.hpp"
#include "uap/rng.hpp"
#include "uap/tensor_io.hpp"

namespace uap {

namespace {

using json = nlohmann::json;

// Below this the DeepFool step length is meaningless.
constexpr double kDegenerateNorm = 1e-12;

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

std::size_t argmax_score(std::span<const double> scores, std::span<const std::size_t> ids) {
  std::size_t best = ids.front();
  for (std::size_t i : ids) {
    if (ranks_before(scores[i], i, scores[best], best)) best = i;
  }
  return best;
}

std::size_t argmin_score(std::span<const double> scores, std::span<const std::size_t> ids) {
  std::size_t worst = ids.front();
  for (std::size_t i : ids) {
    if (scores[i] < scores[worst] || (scores[i] == scores[worst] && i < worst)) worst = i;
  }
  return worst;
}

std::string mask_hash(const Mask& mask) { return sha256_hex(encode_uapt(mask.tensor())); }

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kTra: return "tra";
    case Strategy::kIra: return "ira";
    case Strategy::kTira: return "tira";
  }
  return "?";
}
std::string to_string(PerturbationMode m) { return m == PerturbationMode::kPatch ? "patch" : "global"; }
std::string to_string(NormKind n) { return n == NormKind::kL2 ? "l2" : "linf"; }

Strategy parse_strategy(const std::string& s) {
  if (s == "tra") return Strategy::kTra;
  if (s == "ira") return Strategy::kIra;
  if (s == "tira") return Strategy::kTira;
  throw InvalidArgument("unknown strategy '" + s + "' (expected tra, ira or tira)");
}

PerturbationMode parse_mode(const std::string& s) {
  if (s == "patch") return PerturbationMode::kPatch;
  if (s == "global") return PerturbationMode::kGlobal;
  throw InvalidArgument("unknown mode '" + s + "' (expected patch or global)");
}

NormKind parse_norm(const std::string& s) {
  if (s == "l2") return NormKind::kL2;
  if (s == "linf") return NormKind::kLinf;
  throw InvalidArgument("unknown norm '" + s + "' (expected l2 or linf)");
}

void AttackConfig::validate() const {
  if (k == 0) throw InvalidArgument("k must be positive");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw InvalidArgument("eta must be positive and finite");
  if (max_inner_iters == 0) throw InvalidArgument("max_inner_iters must be positive");
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (mode == PerturbationMode::kPatch) {
    if (!mask) throw InvalidArgument("patch mode requires a mask");
  } else {
    if (mask) throw InvalidArgument("global mode does not take a mask");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("epsilon must be positive and finite");
  }
}

std::string AttackConfig::to_json() const {
  json j{{"k", k},
         {"eta", eta},
         {"epochs", epochs},
         {"max_inner_iters", max_inner_iters},
         {"batch_size", batch_size},
         {"mode", uap::to_string(mode)},
         {"seed", seed},
         {"shuffle", shuffle},
         {"probe_images", probe_images}};
  if (mode == PerturbationMode::kPatch && mask) {
    j["mask_sha256"] = mask_hash(*mask);
    j["mask_pixels"] = mask->indices().size();
  } else {
    j["norm"] = uap::to_string(norm);
    j["epsilon"] = epsilon;
  }
  return j.dump();
}

std::string AttackConfig::hash() const { return sha256_hex(to_json()); }

Mask default_patch_mask(const Shape& image_shape, double area, std::size_t inset) {
  if (image_shape.size() != 3) throw InvalidArgument("image shape must be (c, h, w)");
  const std::size_t side = Mask::square_side_for_area(image_shape[1], image_shape[2], area);
  return Mask::bottom_right_square(image_shape[0], image_shape[1], image_shape[2], side, inset);
}

double AttackTrace::convergence_rate() const {
  if (samples.empty()) return 0.0;
  const auto n = std::count_if(samples.begin(), samples.end(), [](const SampleRecord& r) { return r.converged; });
  return static_cast<double>(n) / static_cast<double>(samples.size());
}

std::string AttackTrace::to_json() const {
  json s = json::array();
  for (const auto& r : samples) {
    s.push_back({{"epoch", r.epoch},
                 {"phase", r.phase == Strategy::kTra ? "image" : "text"},
                 {"sample", r.sample},
                 {"inner_iterations", r.inner_iterations},
                 {"converged", r.converged},
                 {"degenerate", r.degenerate}});
  }
  json c = json::array();
  for (const auto& r : commits) {
    c.push_back({{"epoch", r.epoch}, {"l2", r.l2}, {"linf", r.linf}, {"within_budget", r.within_budget}});
  }
  json e = json::array();
  for (const auto& m : epochs) {
    e.push_back({{"epoch", m.epoch},
                 {"k", m.k},
                 {"clean_tr", m.clean_tr},
                 {"adversarial_tr", m.adversarial_tr},
                 {"clean_ir", m.clean_ir},
                 {"adversarial_ir", m.adversarial_ir}});
  }
  return json{{"samples", s}, {"commits", c}, {"epochs", e}, {"convergence_rate", convergence_rate()}}.dump();
}

Tensor Perturbation::apply(std::span<const double> image) const {
  if (image.size() != delta.size()) throw InvalidArgument("perturbation and image sizes differ");
  Tensor out(delta.shape(), std::vector<double>(image.begin(), image.end()));
  if (mode == PerturbationMode::kPatch) {
    if (!mask) throw InvalidArgument("patch perturbation without a mask");
    for (std::size_t i : mask->indices()) out[i] = delta[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamp01(out[i] + delta[i]);
  }
  return out;
}

UapAttack::UapAttack(const EncoderSpec& encoder, const MultimodalDataset& dataset, AttackConfig config)
    : encoder_(encoder), dataset_(dataset), config_(std::move(config)) {
  config_.validate();
  const std::size_t n = dataset_.num_images();
  if (n == 0 || dataset_.num_texts() == 0) throw InvalidArgument("attack needs a nonempty dataset");
  if (dataset_.image_shape() != encoder_.input_shape()) throw InvalidArgument("dataset images do not fit the encoder");
  if (dataset_.texts.dim() != encoder_.embed_dim()) throw InvalidArgument("text and image embedding sizes differ");
  if (config_.k + 1 > n) throw InvalidArgument("k must be smaller than the number of images");
  std::size_t most_texts = 0;
  for (const auto& t : dataset_.annotations.image_to_texts()) most_texts = std::max(most_texts, t.size());
  if (config_.k + most_texts > dataset_.num_texts()) throw InvalidArgument("k exceeds the non-matching text count");

  if (config_.mode == PerturbationMode::kPatch) {
    if (config_.mask->shape() != encoder_.input_shape()) throw InvalidArgument("mask shape does not fit the encoder");
    plan_ = encoder_.partial_plan(config_.mask->indices());
    masked_bases_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) masked_bases_.push_back(encoder_.partial_base(plan_, dataset_.image_data(i)));
  } else {
    plan_ = encoder_.full_plan();
    masked_bases_.push_back(encoder_.partial_base(plan_, dataset_.image_data(0)));
  }

  const std::size_t d = encoder_.embed_dim();
  std::vector<double> clean(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor e = encoder_.encode(dataset_.image(i));
    std::copy(e.data().begin(), e.data().end(), clean.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  clean_image_embeddings_ = Tensor(Shape{n, d}, std::move(clean));
}

std::vector<std::size_t> UapAttack::text_targets(std::size_t image) const {
  return select_nonmatching_topk(dataset_.texts.similarities(clean_image_embeddings_.row(image)),
                                 dataset_.annotations.texts_of(image), config_.k);
}

std::vector<std::size_t> UapAttack::image_targets(std::size_t text) const {
  const auto t = dataset_.texts.row(text);
  std::vector<double> scores(dataset_.num_images());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = dot(clean_image_embeddings_.row(i), t);
  const std::size_t match = dataset_.annotations.image_of(text);
  return select_nonmatching_topk(scores, std::span<const std::size_t>(&match, 1), config_.k);
}

Tensor UapAttack::base_image(std::size_t image, const Tensor& delta) const {
  require_same_shape(delta, Tensor(encoder_.input_shape()), "delta");
  Perturbation p;
  p.delta = delta;
  p.mode = config_.mode;
  p.mask = config_.mask;
  return p.apply(dataset_.image_data(image));
}

namespace {

// Free-coordinate view of one candidate image: the first-layer base and the
// free values at r = 0.
struct Candidate {
  std::span<const double> base;
  std::vector<double> start;
};

std::vector<double> shifted(const std::vector<double>& start, const std::vector<double>& r, double scale) {
  std::vector<double> out(start.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = start[j] + scale * r[j];
  return out;
}

}  // namespace

InnerResult UapAttack::image_inner_loop(std::size_t image, const Tensor& delta, std::vector<double> r) const {
  const std::size_t f = plan_.free.size();
  if (r.empty()) r.assign(f, 0.0);
  if (r.size() != f) throw InvalidArgument("r does not match the free coordinates");
  if (image >= dataset_.num_images()) throw InvalidArgument("image index out of range");

  const auto& matches = dataset_.annotations.texts_of(image);
  const auto targets = text_targets(image);
  const Tensor start_image = base_image(image, delta);
  Candidate c{config_.mode == PerturbationMode::kPatch ? masked_bases_[image] : masked_bases_.front(), {}};
  c.start.resize(f);
  for (std::size_t j = 0; j < f; ++j) c.start[j] = start_image[plan_.free[j]];

  InnerResult out{{0, Strategy::kTra, image, 0, false, false}, {}};
  std::vector<double> grad;
  for (std::size_t iter = 0;; ++iter) {
    const Tensor probe = encoder_.encode_partial(plan_, c.base, shifted(c.start, r, 1.0 + config_.eta));
    if (indicator_from_scores(dataset_.texts.similarities(probe.data()), matches, config_.k) == 0) {
      out.record.converged = true;
      break;
    }
    if (iter == config_.max_inner_iters) break;

    const std::vector<double> at = shifted(c.start, r, 1.0);
    const Tensor e = encoder_.encode_partial(plan_, c.base, at);
    const std::vector<double> scores = dataset_.texts.similarities(e.data());
    const std::size_t y_max = argmax_score(scores, matches);
    const std::size_t y_min = argmin_score(scores, targets);
    const double gap = scores[y_max] - scores[y_min];

    Tensor direction = dataset_.text(y_min);
    const auto own = dataset_.texts.row(y_max);
    for (std::size_t i = 0; i < direction.size(); ++i) direction[i] -= own[i];
    encoder_.project_partial(plan_, c.base, at, direction, grad);

    const double norm = f == 0 ? 0.0 : l2_norm(std::span<const double>(grad));
    if (!(norm >= kDegenerateNorm)) {
      out.record.degenerate = true;
      break;
    }
    // |gap| keeps the step pointed at the target boundary when the pair is
    // already ordered but the indicator still holds.
    const double step = std::abs(gap) / (norm * norm);
    for (std::size_t j = 0; j < f; ++j) r[j] += step * grad[j];
    ++out.record.inner_iterations;
  }
  out.r = std::move(r);
  return out;
}

InnerResult UapAttack::text_inner_loop(std::size_t text, const Tensor& delta, std::vector<double> r) const {
  const std::size_t f = plan_.free.size();
  if (r.empty()) r.assign(f, 0.0);
  if (r.size() != f) throw InvalidArgument("r does not match the free coordinates");
  if (text >= dataset_.num_texts()) throw InvalidArgument("text index out of range");

  // Candidate 0 is the matched image, 1..k the non-matching targets.
  std::vector<std::size_t> ids{dataset_.annotations.image_of(text)};
  const auto targets = image_targets(text);
  ids.insert(ids.end(), targets.begin(), targets.end());
  std::vector<Candidate> cands;
  cands.reserve(ids.size());
  for (std::size_t id : ids) {
    const Tensor start_image = base_image(id, delta);
    Candidate c{config_.mode == PerturbationMode::kPatch ? masked_bases_[id] : masked_bases_.front(), {}};
    c.start.resize(f);
    for (std::size_t j = 0; j < f; ++j) c.start[j] = start_image[plan_.free[j]];
    cands.push_back(std::move(c));
  }
  const Tensor t = dataset_.text(text);
  const std::size_t own = 0;
  std::vector<std::size_t> target_pos(targets.size());
  std::iota(target_pos.begin(), target_pos.end(), std::size_t{1});

  auto scores_at = [&](double scale) {
    std::vector<double> s(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
      s[i] = dot(t, encoder_.encode_partial(plan_, cands[i].base, shifted(cands[i].start, r, scale)));
    }
    return s;
  };

  InnerResult out{{0, Strategy::kIra, text, 0, false, false}, {}};
  std::vector<double> g_target;
  std::vector<double> g_own;
  for (std::size_t iter = 0;; ++iter) {
    if (indicator_from_scores(scores_at(1.0 + config_.eta), std::span<const std::size_t>(&own, 1), config_.k) == 0) {
      out.record.converged = true;
      break;
    }
    if (iter == config_.max_inner_iters) break;

    const std::vector<double> scores = scores_at(1.0);
    const std::size_t y_min = argmin_score(scores, target_pos);
    const double gap = scores[own] - scores[y_min];
    encoder_.project_partial(plan_, cands[y_min].base, shifted(cands[y_min].start, r, 1.0), t, g_target);
    encoder_.project_partial(plan_, cands[own].base, shifted(cands[own].start, r, 1.0), t, g_own);
    for (std::size_t j = 0; j < f; ++j) g_target[j] -= g_own[j];

    const double norm = f == 0 ? 0.0 : l2_norm(std::span<const double>(g_target));
    if (!(norm >= kDegenerateNorm)) {
      out.record.degenerate = true;
      break;
    }
    const double step = std::abs(gap) / (norm * norm);
    for (std::size_t j = 0; j < f; ++j) r[j] += step * g_target[j];
    ++out.record.inner_iterations;
  }
  out.r = std::move(r);
  return out;
}

Tensor UapAttack::commit(const Tensor& delta, std::span<const double> r) const {
  if (r.size() != plan_.free.size()) throw InvalidArgument("r does not match the free coordinates");
  const double scale = 1.0 + config_.eta;
  if (config_.mode == PerturbationMode::kPatch) {
    Tensor out = delta;
    for (std::size_t j = 0; j < r.size(); ++j) {
      const std::size_t i = plan_.free[j];
      out[i] = clamp01(out[i] + scale * r[j]);
    }
    return out;
  }
  Tensor sum = delta;
  for (std::size_t j = 0; j < r.size(); ++j) sum[plan_.free[j]] += scale * r[j];
  return config_.norm == NormKind::kL2 ? project_l2(sum, config_.epsilon) : project_linf(sum, config_.epsilon);
}

CommitRecord UapAttack::commit_record(const Tensor& delta, std::size_t epoch) const {
  CommitRecord c;
  c.epoch = epoch;
  c.l2 = l2_norm(delta);
  c.linf = linf_norm(delta);
  if (config_.mode == PerturbationMode::kPatch) {
    c.within_budget = std::all_of(delta.values().begin(), delta.values().end(),
                                  [](double x) { return x >= 0.0 && x <= 1.0; });
  } else {
    c.within_budget = (config_.norm == NormKind::kL2 ? c.l2 : c.linf) <= config_.epsilon;
  }
  return c;
}

std::vector<std::size_t> UapAttack::order(std::size_t n, std::size_t epoch) const {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (config_.shuffle) {
    Lcg64 rng(config_.seed + epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  }
  return idx;
}

EpochMetrics UapAttack::probe_metrics(const Tensor& delta, std::size_t epoch) const {
  const std::size_t p = std::min(config_.probe_images, dataset_.num_images());
  const std::size_t d = encoder_.embed_dim();
  Perturbation pert;
  pert.delta = delta;
  pert.mode = config_.mode;
  pert.mask = config_.mask;

  std::vector<double> clean(p * d);
  std::vector<double> adv(p * d);
  std::vector<double> texts;
  std::vector<std::vector<std::size_t>> tr_matches(p);
  std::vector<std::vector<std::size_t>> ir_matches;
  for (std::size_t i = 0; i < p; ++i) {
    const auto c = clean_image_embeddings_.row(i);
    std::copy(c.begin(), c.end(), clean.begin() + static_cast<std::ptrdiff_t>(i * d));
    const Tensor a = encoder_.encode_unchecked(pert.apply(dataset_.image_data(i)));
    std::copy(a.data().begin(), a.data().end(), adv.begin() + static_cast<std::ptrdiff_t>(i * d));
    for (std::size_t t : dataset_.annotations.texts_of(i)) {
      const auto row = dataset_.texts.row(t);
      tr_matches[i].push_back(ir_matches.size());
      ir_matches.push_back({i});
      texts.insert(texts.end(), row.begin(), row.end());
    }
  }
  const std::size_t m = ir_matches.size();
  const EmbeddingIndex clean_idx(Tensor(Shape{p, d}, std::move(clean)));
  const EmbeddingIndex adv_idx(Tensor(Shape{p, d}, std::move(adv)));
  const EmbeddingIndex text_idx(Tensor(Shape{m, d}, std::move(texts)));

  EpochMetrics e;
  e.epoch = epoch;
  e.k = std::min({config_.k, p, m});
  e.clean_tr = recall_at_k(clean_idx, text_idx, tr_matches, e.k);
  e.adversarial_tr = recall_at_k(adv_idx, text_idx, tr_matches, e.k);
  e.clean_ir = recall_at_k(text_idx, clean_idx, ir_matches, e.k);
  e.adversarial_ir = recall_at_k(text_idx, adv_idx, ir_matches, e.k);
  return e;
}

Perturbation UapAttack::make_perturbation(Tensor delta) const {
  Perturbation p;
  p.delta = std::move(delta);
  p.mode = config_.mode;
  p.mask = config_.mask;
  p.norm = config_.norm;
  p.epsilon = config_.mode == PerturbationMode::kGlobal ? config_.epsilon : 0.0;
  p.config_json = config_.to_json();
  p.config_hash = config_.hash();
  p.encoder_hash = encoder_.content_hash();
  p.dataset_hash = dataset_hash(dataset_);
  return p;
}

AttackResult UapAttack::run(Strategy strategy) const {
  Tensor delta(encoder_.input_shape());
  AttackTrace trace;

  auto record = [&](SampleRecord rec, std::size_t epoch) {
    rec.epoch = epoch;
    trace.samples.push_back(rec);
  };
  auto image_sample = [&](std::size_t i, std::size_t epoch) {
    InnerResult res = image_inner_loop(i, delta, {});
    delta = commit(delta, res.r);
    record(res.record, epoch);
    trace.commits.push_back(commit_record(delta, epoch));
  };
  auto text_sample = [&](std::size_t t, std::size_t epoch) {
    InnerResult res = text_inner_loop(t, delta, {});
    delta = commit(delta, res.r);
    record(res.record, epoch);
    trace.commits.push_back(commit_record(delta, epoch));
  };

  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    switch (strategy) {
      case Strategy::kTra:
        for (std::size_t i : order(dataset_.num_images(), epoch)) image_sample(i, epoch);
        break;
      case Strategy::kIra:
        for (std::size_t t : order(dataset_.num_texts(), epoch)) text_sample(t, epoch);
        break;
      case Strategy::kTira: {
        const auto images = order(dataset_.num_images(), epoch);
        for (std::size_t start = 0; start < images.size(); start += config_.batch_size) {
          const std::size_t stop = std::min(images.size(), start + config_.batch_size);
          // Image loop: one r shared across the batch, committed once.
          std::vector<double> r;
          for (std::size_t b = start; b < stop; ++b) {
            InnerResult res = image_inner_loop(images[b], delta, std::move(r));
            r = std::move(res.r);
            record(res.record, epoch);
          }
          delta = commit(delta, r);
          trace.commits.push_back(commit_record(delta, epoch));
          // Text loop over the batch's matching texts, again with a fresh shared r.
          r.clear();
          for (std::size_t b = start; b < stop; ++b) {
            for (std::size_t t : dataset_.annotations.texts_of(images[b])) {
              InnerResult res = text_inner_loop(t, delta, std::move(r));
              r = std::move(res.r);
              record(res.record, epoch);
            }
          }
          delta = commit(delta, r);
          trace.commits.push_back(commit_record(delta, epoch));
        }
        break;
      }
    }
    trace.epochs.push_back(probe_metrics(delta, epoch));
  }
  return {make_perturbation(std::move(delta)), std::move(trace)};
}

namespace {

AttackResult run_patch(const EncoderSpec& encoder, const MultimodalDataset& dataset, const AttackConfig& config,
                       Strategy strategy) {
  if (config.mode != PerturbationMode::kPatch) throw InvalidArgument("patch driver called with a global config");
  return UapAttack(encoder, dataset, config).run(strategy);
}

}  // namespace

StepOutcome tra_step(const EncoderSpec& encoder, const MultimodalDataset& dataset, std::size_t image,
                     const Tensor& delta, const AttackConfig& config) {
  const UapAttack attack(encoder, dataset, config);
  InnerResult res = attack.image_inner_loop(image, delta, {});
  return {attack.commit(delta, res.r), res.record};
}

StepOutcome ira_step(const EncoderSpec& encoder, const MultimodalDataset& dataset, std::size_t text,
                     const Tensor& delta, const AttackConfig& config) {
  const UapAttack attack(encoder, dataset, config);
  InnerResult res = attack.text_inner_loop(text, delta, {});
  return {attack.commit(delta, res.r), res.record};
}

AttackResult run_tra(const EncoderSpec& encoder, const MultimodalDataset& dataset, const AttackConfig& config) {
  return run_patch(encoder, dataset, config, Strategy::kTra);
}

AttackResult run_ira(const EncoderSpec& encoder, const MultimodalDataset& dataset, const AttackConfig& config) {
  return run_patch(encoder, dataset, config, Strategy::kIra);
}

AttackResult run_tira(const EncoderSpec& encoder, const MultimodalDataset& dataset, const AttackConfig& config) {
  return run_patch(encoder, dataset, config, Strategy::kTira);
}

AttackResult run_global(const EncoderSpec& encoder, const MultimodalDataset& dataset, const AttackConfig& config,
                        Strategy strategy) {
  if (config.mode != PerturbationMode::kGlobal) throw InvalidArgument("global driver needs a global config");
  return UapAttack(encoder, dataset, config).run(strategy);
}

}  // namespace uap
