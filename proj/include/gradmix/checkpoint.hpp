#pragma once

// Checkpoint records: {format, version, spec, epoch, strategy, model, theta}.
// theta entries are shortest round-trip decimal strings, so save -> load is
// bitwise exact.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include <nlohmann/json.hpp>

#include "gradmix/models.hpp"

namespace gradmix {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelState state;
  int epoch = 0;
  std::string strategy;
  std::string model;  // e.g. "shared", or a target language id for ord_fs
};

inline std::string exact_decimal(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  if (res.ec != std::errc{}) throw std::runtime_error("exact_decimal: to_chars failed");
  return std::string(buf, res.ptr);
}

inline double parse_exact_decimal(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw DataError("invalid decimal float string '" + s + "'");
  }
  return v;
}

inline nlohmann::ordered_json spec_to_json(const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["family"] = to_string(spec.family);
  j["input_dim"] = spec.input_dim;
  j["hidden_dim"] = spec.hidden_dim;
  j["num_classes"] = spec.num_classes;
  return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.family = model_family_from_string(j.at("family").get<std::string>());
  spec.input_dim = j.at("input_dim").get<std::size_t>();
  spec.hidden_dim = j.value("hidden_dim", std::size_t{0});
  spec.num_classes = j.at("num_classes").get<std::size_t>();
  spec.validate();
  return spec;
}

inline nlohmann::ordered_json checkpoint_to_json(const Checkpoint& ck) {
  nlohmann::ordered_json j;
  j["format"] = "gradmix-checkpoint";
  j["version"] = kCheckpointVersion;
  j["spec"] = spec_to_json(ck.state.spec);
  j["epoch"] = ck.epoch;
  j["strategy"] = ck.strategy;
  j["model"] = ck.model;
  auto theta = nlohmann::ordered_json::array();
  for (double v : ck.state.theta) theta.push_back(exact_decimal(v));
  j["theta"] = std::move(theta);
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "gradmix-checkpoint") throw DataError("not a gradmix checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + j.at("version").dump());
  }
  Checkpoint ck;
  ck.state.spec = spec_from_json(j.at("spec"));
  ck.epoch = j.at("epoch").get<int>();
  ck.strategy = j.at("strategy").get<std::string>();
  ck.model = j.value("model", "");
  std::vector<double> theta;
  for (const auto& v : j.at("theta")) theta.push_back(parse_exact_decimal(v.get<std::string>()));
  if (theta.size() != ck.state.spec.param_dim()) {
    throw DataError("checkpoint theta has " + std::to_string(theta.size()) + " entries, spec needs " +
                    std::to_string(ck.state.spec.param_dim()));
  }
  ck.state.theta = ParamVec(std::move(theta));
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(ck).dump(1) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  return checkpoint_from_json(nlohmann::json::parse(in));
}

}  // namespace gradmix
