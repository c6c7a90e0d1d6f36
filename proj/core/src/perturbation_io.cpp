#include <json.hpp>

#include "uap/attack.hpp"
#include "uap/error.hpp"
#include "uap/tensor_io.hpp"

namespace uap {

namespace {

using json = nlohmann::json;

std::filesystem::path mask_path_for(const std::filesystem::path& p) {
  return p.parent_path() / (p.stem().string() + "_mask.uapt");
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& perturbation_path) {
  return std::filesystem::path(perturbation_path.string() + ".json");
}

void save_perturbation(const Perturbation& p, const std::filesystem::path& path) {
  write_uapt(path, p.delta);
  json j{{"format", "uap-perturbation"},
         {"mode", to_string(p.mode)},
         {"delta_sha256", sha256_file(path)},
         {"config", json::parse(p.config_json.empty() ? "{}" : p.config_json)},
         {"config_hash", p.config_hash},
         {"encoder_hash", p.encoder_hash},
         {"dataset_hash", p.dataset_hash},
         {"library_version", UAP_VERSION}};
  if (p.mode == PerturbationMode::kPatch) {
    if (!p.mask) throw InvalidArgument("patch perturbation without a mask");
    const auto mp = mask_path_for(path);
    write_uapt(mp, p.mask->tensor());
    j["mask_path"] = mp.filename().string();
    j["mask_sha256"] = sha256_file(mp);
  } else {
    j["norm"] = to_string(p.norm);
    j["epsilon"] = p.epsilon;
  }
  write_text_file(sidecar_path(path), j.dump(2) + "\n");
}

Perturbation load_perturbation(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(sidecar_path(path)));
  } catch (const json::exception& e) {
    throw IntegrityError("perturbation sidecar is not valid JSON: " + std::string(e.what()));
  }
  try {
    if (j.at("format") != "uap-perturbation") throw IntegrityError("not a perturbation sidecar");
    if (sha256_file(path) != j.at("delta_sha256").get<std::string>()) {
      throw IntegrityError("perturbation file hash does not match its sidecar");
    }
    Perturbation p;
    p.delta = read_uapt(path);
    p.mode = parse_mode(j.at("mode").get<std::string>());
    p.config_json = j.at("config").dump();
    p.config_hash = j.at("config_hash").get<std::string>();
    p.encoder_hash = j.at("encoder_hash").get<std::string>();
    p.dataset_hash = j.at("dataset_hash").get<std::string>();
    if (p.mode == PerturbationMode::kPatch) {
      const auto mp = path.parent_path() / j.at("mask_path").get<std::string>();
      if (sha256_file(mp) != j.at("mask_sha256").get<std::string>()) {
        throw IntegrityError("mask file hash does not match the perturbation sidecar");
      }
      p.mask = Mask(read_uapt(mp));
      if (p.mask->shape() != p.delta.shape()) throw IntegrityError("mask and perturbation shapes differ");
    } else {
      p.norm = parse_norm(j.at("norm").get<std::string>());
      p.epsilon = j.at("epsilon").get<double>();
    }
    return p;
  } catch (const json::exception& e) {
    throw IntegrityError("perturbation sidecar is missing fields: " + std::string(e.what()));
  }
}

}  // namespace uap
