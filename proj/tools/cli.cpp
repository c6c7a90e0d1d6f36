#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <thread>

#include "uap/attack.hpp"
#include "uap/dataset.hpp"
#include "uap/encoder.hpp"
#include "uap/error.hpp"
#include "uap/evaluation.hpp"
#include "uap/rng.hpp"
#include "uap/tensor_io.hpp"

namespace uap::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct HashMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t default_threads() {
  if (const char* env = std::getenv("UAP_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw InvalidArgument(std::string("UAP_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

fs::path dataset_manifest(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.json" : p; }

fs::path encoder_manifest(const std::string& flag, const fs::path& dataset) {
  if (!flag.empty()) return flag;
  const fs::path dir = fs::is_directory(dataset) ? dataset : dataset.parent_path();
  if (fs::exists(dir / "encoder.json")) return dir / "encoder.json";
  throw IoError("--encoder not given and no encoder.json next to the dataset");
}

json metrics_json(const RetrievalMetrics& m) {
  json tr = json::object();
  json ir = json::object();
  for (std::size_t i = 0; i < m.ks.size(); ++i) {
    tr[std::to_string(m.ks[i])] = m.text_retrieval[i];
    ir[std::to_string(m.ks[i])] = m.image_retrieval[i];
  }
  return {{"tr", tr}, {"ir", ir}, {"top1", m.top1}, {"top5", m.top5}};
}

json trace_summary(const AttackTrace& trace) {
  json epochs = json::array();
  for (const auto& e : trace.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"k", e.k},
                      {"clean_tr", e.clean_tr},
                      {"adversarial_tr", e.adversarial_tr},
                      {"clean_ir", e.clean_ir},
                      {"adversarial_ir", e.adversarial_ir}});
  }
  std::size_t degenerate = 0;
  for (const auto& s : trace.samples) degenerate += s.degenerate ? 1 : 0;
  double max_l2 = 0.0;
  double max_linf = 0.0;
  bool within = true;
  for (const auto& c : trace.commits) {
    max_l2 = std::max(max_l2, c.l2);
    max_linf = std::max(max_linf, c.linf);
    within = within && c.within_budget;
  }
  return {{"epochs", epochs},
          {"samples", trace.samples.size()},
          {"convergence_rate", trace.convergence_rate()},
          {"degenerate_samples", degenerate},
          {"commits", trace.commits.size()},
          {"max_commit_l2", max_l2},
          {"max_commit_linf", max_linf},
          {"all_commits_within_budget", within}};
}

void emit(const json& report, const fs::path& file, bool quiet, std::ostream& out) {
  const std::string text = report.dump(2) + "\n";
  write_text_file(file, text);
  if (!quiet) out << text;
}

struct GenArgs {
  std::string out;
  std::string encoder;
  DatasetParams params;
  std::vector<std::size_t> image_shape{3, 32, 32};
  bool quiet = false;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  if (a.image_shape.size() != 3) throw InvalidArgument("--image-shape takes three values c h w");
  DatasetParams params = a.params;
  params.image_shape = a.image_shape;
  const fs::path dir = a.out;
  fs::create_directories(dir);

  EncoderSpec encoder = [&] {
    if (!a.encoder.empty()) return EncoderSpec::load(a.encoder);
    auto o = EncoderSpec::toy_options();
    o.input_shape = params.image_shape;
    o.embed_dim = params.embed_dim;
    return EncoderSpec::random(o);
  }();
  if (encoder.input_shape() != params.image_shape || encoder.embed_dim() != params.embed_dim) {
    throw InvalidArgument("encoder shape does not match the requested image shape / embed_dim");
  }
  const fs::path enc_path = encoder.save(dir / "encoder.json");

  MultimodalDataset ds = generate_dataset(params, encoder);
  const fs::path manifest = save_dataset(ds, dir);
  json report{{"manifest", manifest.string()},
              {"encoder", enc_path.string()},
              {"encoder_hash", encoder.content_hash()},
              {"dataset_hash", dataset_hash(ds)},
              {"clean_floor_recall", ds.manifest.clean_floor_recall},
              {"files",
               {{"images", ds.manifest.images.sha256},
                {"texts", ds.manifest.texts.sha256},
                {"annotations", ds.manifest.annotations.sha256},
                {"prototypes", ds.manifest.prototypes.sha256},
                {"labels", ds.manifest.labels.sha256}}}};
  if (!a.quiet) out << report.dump(2) << "\n";
  return kOk;
}

struct AttackArgs {
  std::string strategy = "tira";
  std::string mode = "patch";
  AttackConfig config;
  std::optional<std::size_t> mask_side;
  std::optional<std::size_t> mask_inset;
  std::optional<std::string> norm;
  std::optional<double> epsilon;
  std::string encoder;
  std::string dataset;
  std::string out;
  std::optional<std::size_t> threads;
  bool quiet = false;
};

int cmd_attack(const AttackArgs& a, std::ostream& out) {
  const auto started = std::chrono::steady_clock::now();
  const Strategy strategy = parse_strategy(a.strategy);
  AttackConfig config = a.config;
  config.mode = parse_mode(a.mode);
  if (config.mode == PerturbationMode::kPatch && (a.norm || a.epsilon)) {
    throw InvalidArgument("--norm/--epsilon only apply to --mode global");
  }
  if (config.mode == PerturbationMode::kGlobal && (a.mask_side || a.mask_inset)) {
    throw InvalidArgument("--mask-side/--mask-inset only apply to --mode patch");
  }
  if (config.mode == PerturbationMode::kGlobal) {
    config.norm = parse_norm(a.norm.value_or("l2"));
    config.epsilon = a.epsilon.value_or(config.norm == NormKind::kL2 ? kDefaultL2Epsilon : kDefaultLinfEpsilon);
  }
  const std::size_t threads = a.threads.value_or(default_threads());
  if (threads == 0) throw InvalidArgument("--threads must be positive");

  const fs::path ds_path = dataset_manifest(a.dataset);
  const EncoderSpec encoder = EncoderSpec::load(encoder_manifest(a.encoder, a.dataset));
  const MultimodalDataset ds = load_dataset(ds_path);
  if (encoder.input_shape() != ds.image_shape()) throw InvalidArgument("encoder does not fit the dataset images");

  if (config.mode == PerturbationMode::kPatch) {
    const Shape& s = encoder.input_shape();
    const std::size_t side = a.mask_side.value_or(Mask::square_side_for_area(s[1], s[2], kDefaultPatchArea));
    config.mask = Mask::bottom_right_square(s[0], s[1], s[2], side, a.mask_inset.value_or(0));
  }
  config.validate();

  std::vector<std::size_t> ks;
  for (std::size_t k : {1, 5, 10}) {
    if (k <= ds.num_images()) ks.push_back(k);
  }
  const auto clean_images = image_embeddings(encoder, ds, nullptr, threads);
  const auto& p = ds.manifest.params;
  const std::size_t floor_k = std::min(p.floor_k, ds.num_texts());
  const double floor_recall = recall_at_k(clean_images, ds.texts, ds.annotations.image_to_texts(), floor_k, threads);
  const double chance = static_cast<double>(floor_k) / static_cast<double>(ds.num_texts());
  if (floor_recall < p.floor_multiple * chance) {
    throw DegenerateDataset("clean TR R@" + std::to_string(floor_k) + " = " + std::to_string(floor_recall) +
                            " is below " + std::to_string(p.floor_multiple) + "x chance");
  }
  const RetrievalMetrics clean = evaluate_embeddings(clean_images, ds, ks, threads);

  const AttackResult result = UapAttack(encoder, ds, config).run(strategy);
  const RetrievalMetrics adversarial = evaluate(encoder, ds, &result.perturbation, ks, threads);

  const fs::path dir = a.out;
  fs::create_directories(dir);
  const fs::path delta_path = dir / "delta.uapt";
  save_perturbation(result.perturbation, delta_path);
  write_text_file(dir / "trace.json", result.trace.to_json() + "\n");

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  json report{{"command", "attack"},
              {"library_version", UAP_VERSION},
              {"strategy", a.strategy},
              {"config", json::parse(config.to_json())},
              {"clean", metrics_json(clean)},
              {"adversarial", metrics_json(adversarial)},
              {"n_images", ds.num_images()},
              {"n_texts", ds.num_texts()},
              {"trace", trace_summary(result.trace)},
              {"wall_clock_seconds", seconds},
              {"seeds", {{"attack", config.seed}, {"dataset", p.seed}, {"encoder", encoder.options().seed}}},
              {"hashes",
               {{"encoder", result.perturbation.encoder_hash},
                {"dataset", result.perturbation.dataset_hash},
                {"config", result.perturbation.config_hash},
                {"perturbation", sha256_file(delta_path)}}},
              {"perturbation_path", delta_path.string()},
              {"cross_dataset", false}};
  emit(report, dir / "report.json", a.quiet, out);
  return kOk;
}

struct EvalArgs {
  std::string perturbation;
  std::string dataset;
  std::string encoder;
  std::vector<std::size_t> ks{1, 5, 10};
  bool override_hashes = false;
  std::string report;
  std::optional<std::size_t> threads;
  bool quiet = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const auto started = std::chrono::steady_clock::now();
  const std::size_t threads = a.threads.value_or(default_threads());
  if (threads == 0) throw InvalidArgument("--threads must be positive");
  const Perturbation pert = load_perturbation(a.perturbation);
  const EncoderSpec encoder = EncoderSpec::load(encoder_manifest(a.encoder, a.dataset));
  const MultimodalDataset ds = load_dataset(dataset_manifest(a.dataset));
  if (pert.delta.shape() != ds.image_shape()) throw InvalidArgument("perturbation does not fit the dataset images");
  for (std::size_t k : a.ks) {
    if (k == 0 || k > ds.num_images()) throw InvalidArgument("--k-list values must be in [1, n_images]");
  }

  const bool encoder_mismatch = pert.encoder_hash != encoder.content_hash();
  const bool dataset_mismatch = pert.dataset_hash != dataset_hash(ds);
  if ((encoder_mismatch || dataset_mismatch) && !a.override_hashes) {
    throw HashMismatch(std::string("perturbation was built for a different ") +
                       (encoder_mismatch ? "encoder" : "dataset") + "; pass --override to evaluate anyway");
  }
  if (encoder_mismatch || dataset_mismatch) err << "warning: evaluating across mismatched artifacts\n";

  const RetrievalMetrics clean = evaluate(encoder, ds, nullptr, a.ks, threads);
  const RetrievalMetrics adversarial = evaluate(encoder, ds, &pert, a.ks, threads);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  json report{{"command", "eval"},
              {"library_version", UAP_VERSION},
              {"config", json::parse(pert.config_json)},
              {"clean", metrics_json(clean)},
              {"adversarial", metrics_json(adversarial)},
              {"n_images", ds.num_images()},
              {"n_texts", ds.num_texts()},
              {"wall_clock_seconds", seconds},
              {"seeds", {{"dataset", ds.manifest.params.seed}, {"encoder", encoder.options().seed}}},
              {"hashes",
               {{"encoder", encoder.content_hash()},
                {"dataset", dataset_hash(ds)},
                {"config", pert.config_hash},
                {"perturbation", sha256_file(a.perturbation)}}},
              {"perturbation_path", a.perturbation},
              {"cross_dataset", dataset_mismatch},
              {"hash_mismatch", {{"encoder", encoder_mismatch}, {"dataset", dataset_mismatch}}}};
  const fs::path file = a.report.empty() ? fs::path(a.perturbation).parent_path() / "eval_report.json" : fs::path(a.report);
  emit(report, file, a.quiet, out);
  return kOk;
}

struct GradcheckArgs {
  std::string encoder;
  std::size_t trials = 20;
  std::size_t probes = 50;
  double step = 1e-5;
  std::uint64_t seed = 0;
  bool quiet = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  if (!(a.step > 0.0)) throw InvalidArgument("--step must be positive");
  if (a.trials == 0 || a.probes == 0) throw InvalidArgument("--trials and --probes must be positive");
  const EncoderSpec encoder =
      a.encoder.empty() ? EncoderSpec::random(EncoderSpec::toy_options()) : EncoderSpec::load(a.encoder);
  Lcg64 rng(a.seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < a.trials; ++t) {
    std::vector<double> image(encoder.input_size());
    for (double& v : image) v = rng.uniform();
    std::vector<double> text(encoder.embed_dim());
    for (double& v : text) v = rng.gaussian();
    const double n = l2_norm(std::span<const double>(text));
    for (double& v : text) v /= n;
    worst = std::max(worst, gradcheck(encoder, PixelImage(Tensor(encoder.input_shape(), std::move(image))),
                                      Tensor(Shape{encoder.embed_dim()}, std::move(text)), a.probes, a.step,
                                      a.seed + t));
  }
  const bool pass = worst < 1e-6;
  json report{{"command", "gradcheck"},
              {"encoder_hash", encoder.content_hash()},
              {"trials", a.trials},
              {"probes", a.probes},
              {"step", a.step},
              {"max_relative_error", worst},
              {"pass", pass}};
  if (!a.quiet) out << report.dump(2) << "\n";
  return pass ? kOk : kCheckFailed;
}

struct InitArgs {
  std::string out;
  EncoderSpec::Options options = EncoderSpec::toy_options();
  std::string kind = "mlp";
  std::string activation = "tanh";
  bool quiet = false;
};

int cmd_init_encoder(InitArgs a, std::ostream& out) {
  a.options.kind = parse_encoder_kind(a.kind);
  a.options.activation = parse_activation(a.activation);
  if (a.options.kind == EncoderKind::kLinear) a.options.layer_widths.clear();
  const EncoderSpec encoder = EncoderSpec::random(a.options);
  const fs::path path = encoder.save(a.out);
  if (!a.quiet) out << json{{"encoder", path.string()}, {"encoder_hash", encoder.content_hash()}}.dump(2) << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Universal adversarial perturbations against image-text retrieval"};
  app.require_subcommand(1);
  app.set_version_flag("--version", UAP_VERSION);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic multimodal dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--encoder", gen.encoder, "Encoder manifest (default: the toy encoder)");
  g->add_option("--n-images", gen.params.n_images)->capture_default_str();
  g->add_option("--texts-per-image", gen.params.texts_per_image)->capture_default_str();
  g->add_option("--image-shape", gen.image_shape, "c h w")->expected(3)->capture_default_str();
  g->add_option("--embed-dim", gen.params.embed_dim)->capture_default_str();
  g->add_option("--classes", gen.params.class_count)->capture_default_str();
  g->add_option("--noise", gen.params.noise_level, "Text noise sigma")->capture_default_str();
  g->add_option("--contrast", gen.params.contrast)->capture_default_str();
  g->add_option("--seed", gen.params.seed)->capture_default_str();
  g->add_option("--floor-k", gen.params.floor_k, "Depth of the clean-retrieval floor check")->capture_default_str();
  g->add_flag("--quiet", gen.quiet);

  AttackArgs atk;
  std::size_t mask_side = 0;
  std::size_t mask_inset = 0;
  std::string norm;
  double epsilon = 0.0;
  std::size_t atk_threads = 0;
  auto* at = app.add_subcommand("attack", "Synthesize a universal perturbation");
  at->add_option("--strategy", atk.strategy)->check(CLI::IsMember({"tra", "ira", "tira"}))->capture_default_str();
  at->add_option("--mode", atk.mode)->check(CLI::IsMember({"patch", "global"}))->capture_default_str();
  at->add_option("--k", atk.config.k)->capture_default_str();
  at->add_option("--eta", atk.config.eta)->capture_default_str();
  at->add_option("--epochs", atk.config.epochs)->capture_default_str();
  at->add_option("--batch-size", atk.config.batch_size)->capture_default_str();
  at->add_option("--max-inner-iters", atk.config.max_inner_iters)->capture_default_str();
  at->add_option("--probe-images", atk.config.probe_images)->capture_default_str();
  auto* side_opt = at->add_option("--mask-side", mask_side, "Patch side (default: 3% of the image area)");
  auto* inset_opt = at->add_option("--mask-inset", mask_inset, "Shift the patch up/left from the corner");
  auto* norm_opt = at->add_option("--norm", norm)->check(CLI::IsMember({"l2", "linf"}));
  auto* eps_opt = at->add_option("--epsilon", epsilon);
  at->add_option("--seed", atk.config.seed)->capture_default_str();
  at->add_flag("--shuffle", atk.config.shuffle, "Seeded per-epoch sample order");
  at->add_option("--encoder", atk.encoder);
  at->add_option("--dataset", atk.dataset)->required();
  at->add_option("--out", atk.out)->required();
  auto* at_threads = at->add_option("--threads", atk_threads, "Evaluation workers (env UAP_THREADS)");
  at->add_flag("--quiet", atk.quiet);

  EvalArgs ev;
  std::size_t ev_threads = 0;
  auto* e = app.add_subcommand("eval", "Evaluate a perturbation");
  e->add_option("--perturbation", ev.perturbation)->required();
  e->add_option("--dataset", ev.dataset)->required();
  e->add_option("--encoder", ev.encoder);
  e->add_option("--k-list", ev.ks)->delimiter(',')->capture_default_str();
  e->add_flag("--override", ev.override_hashes, "Evaluate even when artifact hashes differ");
  e->add_option("--report", ev.report);
  auto* ev_threads_opt = e->add_option("--threads", ev_threads);
  e->add_flag("--quiet", ev.quiet);

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of encoder gradients");
  c->add_option("--encoder", gc.encoder);
  c->add_option("--trials", gc.trials)->capture_default_str();
  c->add_option("--probes", gc.probes)->capture_default_str();
  c->add_option("--step", gc.step)->capture_default_str();
  c->add_option("--seed", gc.seed)->capture_default_str();
  c->add_flag("--quiet", gc.quiet);

  InitArgs init;
  auto* in = app.add_subcommand("init-encoder", "Write a randomly initialized encoder");
  in->add_option("--out", init.out, "Manifest path")->required();
  in->add_option("--kind", init.kind)->check(CLI::IsMember({"linear", "mlp"}))->capture_default_str();
  in->add_option("--activation", init.activation)->check(CLI::IsMember({"tanh", "relu"}))->capture_default_str();
  in->add_option("--widths", init.options.layer_widths)->capture_default_str();
  in->add_option("--embed-dim", init.options.embed_dim)->capture_default_str();
  in->add_option("--input-shape", init.options.input_shape)->expected(3)->capture_default_str();
  in->add_option("--input-offset", init.options.input_offset)->capture_default_str();
  in->add_option("--input-scale", init.options.input_scale)->capture_default_str();
  in->add_option("--seed", init.options.seed)->capture_default_str();
  in->add_flag("--quiet", init.quiet);

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kInvalidArgs;
  }

  try {
    if (g->parsed()) return cmd_gen(gen, out);
    if (at->parsed()) {
      if (side_opt->count() > 0) atk.mask_side = mask_side;
      if (inset_opt->count() > 0) atk.mask_inset = mask_inset;
      if (norm_opt->count() > 0) atk.norm = norm;
      if (eps_opt->count() > 0) atk.epsilon = epsilon;
      if (at_threads->count() > 0) atk.threads = atk_threads;
      return cmd_attack(atk, out);
    }
    if (e->parsed()) {
      if (ev_threads_opt->count() > 0) ev.threads = ev_threads;
      return cmd_eval(ev, out, err);
    }
    if (c->parsed()) return cmd_gradcheck(gc, out);
    if (in->parsed()) return cmd_init_encoder(init, out);
  } catch (const InvalidArgument& ex) {
    err << "error: " << ex.what() << "\n";
    return kInvalidArgs;
  } catch (const PreconditionViolation& ex) {
    err << "error: " << ex.what() << "\n";
    return kInvalidArgs;
  } catch (const DegenerateDataset& ex) {
    err << "error: degenerate dataset: " << ex.what() << "\n";
    return kDegenerateDataset;
  } catch (const DegenerateEncoding& ex) {
    err << "error: degenerate encoding: " << ex.what() << "\n";
    return kDegenerateDataset;
  } catch (const HashMismatch& ex) {
    err << "error: " << ex.what() << "\n";
    return kHashMismatch;
  } catch (const std::exception& ex) {
    // IoError, IntegrityError, CorruptDataset, filesystem and parse failures.
    err << "error: " << ex.what() << "\n";
    return kIoFailure;
  }
  return kInvalidArgs;
}

}  // namespace uap::cli
