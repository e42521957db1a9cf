#pragma once

// Experiment configuration: JSON schema, defaults and a content hash.
//
// Every key is optional; missing keys take the defaults printed by
// `xbarsim config print-defaults`. Unknown keys are rejected so that typos
// never silently fall back to defaults.

#include "json.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xbarsim/circuit.hpp"
#include "xbarsim/error.hpp"
#include "xbarsim/mapping.hpp"
#include "xbarsim/model_spec.hpp"
#include "xbarsim/nn.hpp"
#include "xbarsim/pruning.hpp"

namespace xbarsim::harness {

using json = nlohmann::json;

struct DatasetConfig {
  std::uint64_t seed = 7;
  int n_train = 2000;
  int n_test = 2000;
};

struct TrainSettings {
  double lr = 0.05;
  int batch_size = 32;
  int epochs = 15;
};

struct PruningConfig {
  std::vector<PruneMethod> methods{PruneMethod::none, PruneMethod::cf, PruneMethod::xcs,
                                   PruneMethod::xrs};
  double s = 0.8;
};

struct MitigationConfig {
  bool rearrange = false;
  RearrangeOrder rearrange_order = RearrangeOrder::ascending;
  bool wct = false;
  double wct_percentile = 90.0;
  int wct_epochs = 2;
  bool wct_per_layer = false;
};

struct ExperimentConfig {
  std::string model = "reference";  // reference | small
  DatasetConfig dataset;
  TrainSettings train;
  CrossbarParams crossbar;  // n_rows/n_cols are taken from `sizes`
  std::vector<int> sizes{16, 32, 64};
  PruningConfig pruning;
  MitigationConfig mitigation;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int threads = 0;  // 0 = hardware concurrency
  std::string output_dir = "sweep_out";

  void validate() const {
    xbarsim::detail::require(model == "reference" || model == "small",
                    "model: expected \"reference\" or \"small\", got \"" + model + "\"");
    xbarsim::detail::require(dataset.n_train >= 1 && dataset.n_test >= 1,
                    "dataset.n_train and dataset.n_test must be >= 1");
    TrainConfig tc;
    tc.lr = train.lr;
    tc.batch_size = train.batch_size;
    tc.epochs = train.epochs;
    tc.validate();
    crossbar.validate();
    xbarsim::detail::require(!sizes.empty(), "sizes: must be non-empty");
    for (int n : sizes) xbarsim::detail::require(n >= 1 && n <= 1024, "sizes: entries must lie in [1, 1024]");
    xbarsim::detail::require(!seeds.empty(), "seeds: must be non-empty");
    xbarsim::detail::require(!pruning.methods.empty(), "pruning.methods: must be non-empty");
    xbarsim::detail::require(std::isfinite(pruning.s) && pruning.s >= 0 && pruning.s < 1,
                    "pruning.s: must lie in [0, 1)");
    xbarsim::detail::require(mitigation.wct_percentile > 0 && mitigation.wct_percentile <= 100,
                    "mitigation.wct_percentile: must lie in (0, 100]");
    xbarsim::detail::require(mitigation.wct_epochs >= 0, "mitigation.wct_epochs: must be >= 0");
    xbarsim::detail::require(threads >= 0, "threads: must be >= 0");
  }

  ModelSpec model_spec(std::uint64_t seed) const {
    return model == "small" ? small_model(seed) : reference_model(seed);
  }

  TrainConfig train_config(std::uint64_t seed) const {
    TrainConfig tc;
    tc.lr = train.lr;
    tc.batch_size = train.batch_size;
    tc.epochs = train.epochs;
    tc.seed = seed;
    return tc;
  }

  WctSettings wct_settings() const {
    WctSettings w;
    w.percentile = mitigation.wct_percentile;
    w.epochs = mitigation.wct_epochs;
    w.per_layer = mitigation.wct_per_layer;
    return w;
  }
};

inline const char* to_string(RearrangeOrder o) {
  return o == RearrangeOrder::center_out ? "center_out" : "ascending";
}

inline RearrangeOrder parse_rearrange_order(const std::string& s) {
  if (s == "ascending") return RearrangeOrder::ascending;
  if (s == "center_out") return RearrangeOrder::center_out;
  throw UsageError("unknown rearrange order '" + s + "' (expected ascending|center_out)");
}

// ---------------------------------------------------------------------------
// JSON conversion

inline json to_json(const CrossbarParams& p) {
  return {{"r_driver", p.r_driver}, {"r_wire_row", p.r_wire_row}, {"r_wire_col", p.r_wire_col},
          {"r_sense", p.r_sense},   {"g_min", p.g_min},           {"g_max", p.g_max},
          {"sigma_dev", p.sigma_dev}, {"v_read", p.v_read}};
}

inline json to_json(const ExperimentConfig& c) {
  json methods = json::array();
  for (auto m : c.pruning.methods) methods.push_back(to_string(m));
  return {
      {"model", c.model},
      {"dataset", {{"seed", c.dataset.seed}, {"n_train", c.dataset.n_train}, {"n_test", c.dataset.n_test}}},
      {"train", {{"lr", c.train.lr}, {"batch_size", c.train.batch_size}, {"epochs", c.train.epochs}}},
      {"crossbar", to_json(c.crossbar)},
      {"sizes", c.sizes},
      {"pruning", {{"methods", methods}, {"s", c.pruning.s}}},
      {"mitigation",
       {{"rearrange", c.mitigation.rearrange},
        {"rearrange_order", to_string(c.mitigation.rearrange_order)},
        {"wct", c.mitigation.wct},
        {"wct_percentile", c.mitigation.wct_percentile},
        {"wct_epochs", c.mitigation.wct_epochs},
        {"wct_per_layer", c.mitigation.wct_per_layer}}},
      {"seeds", c.seeds},
      {"threads", c.threads},
      {"output_dir", c.output_dir},
  };
}

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw UsageError((where.empty() ? "config" : where) + ": expected a JSON object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (!allowed.count(k)) throw UsageError("unknown config key '" + where + (where.empty() ? "" : ".") + k + "'");
  }
}

template <class T>
void read_key(const json& j, const char* key, const std::string& where, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError("config key '" + where + (where.empty() ? "" : ".") + key + "' has the wrong type");
  }
}

}  // namespace detail

/// Overlays the keys present in `j` on top of `p`.
inline CrossbarParams crossbar_from_json(const json& j, CrossbarParams p = {}) {
  const std::string w = "crossbar";
  detail::check_keys(j, w, {"r_driver", "r_wire_row", "r_wire_col", "r_sense", "g_min", "g_max",
                            "sigma_dev", "v_read"});
  detail::read_key(j, "r_driver", w, p.r_driver);
  detail::read_key(j, "r_wire_row", w, p.r_wire_row);
  detail::read_key(j, "r_wire_col", w, p.r_wire_col);
  detail::read_key(j, "r_sense", w, p.r_sense);
  detail::read_key(j, "g_min", w, p.g_min);
  detail::read_key(j, "g_max", w, p.g_max);
  detail::read_key(j, "sigma_dev", w, p.sigma_dev);
  detail::read_key(j, "v_read", w, p.v_read);
  p.validate();
  return p;
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  detail::check_keys(j, "", {"model", "dataset", "train", "crossbar", "sizes", "pruning",
                             "mitigation", "seeds", "threads", "output_dir"});
  detail::read_key(j, "model", "", c.model);
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    detail::check_keys(d, "dataset", {"seed", "n_train", "n_test"});
    detail::read_key(d, "seed", "dataset", c.dataset.seed);
    detail::read_key(d, "n_train", "dataset", c.dataset.n_train);
    detail::read_key(d, "n_test", "dataset", c.dataset.n_test);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    detail::check_keys(t, "train", {"lr", "batch_size", "epochs"});
    detail::read_key(t, "lr", "train", c.train.lr);
    detail::read_key(t, "batch_size", "train", c.train.batch_size);
    detail::read_key(t, "epochs", "train", c.train.epochs);
  }
  if (j.contains("crossbar")) c.crossbar = crossbar_from_json(j["crossbar"]);
  detail::read_key(j, "sizes", "", c.sizes);
  if (j.contains("pruning")) {
    const json& p = j["pruning"];
    detail::check_keys(p, "pruning", {"methods", "s"});
    if (p.contains("methods")) {
      std::vector<std::string> names;
      detail::read_key(p, "methods", "pruning", names);
      c.pruning.methods.clear();
      for (const auto& n : names) c.pruning.methods.push_back(parse_prune_method(n));
    }
    detail::read_key(p, "s", "pruning", c.pruning.s);
  }
  if (j.contains("mitigation")) {
    const json& m = j["mitigation"];
    const std::string w = "mitigation";
    detail::check_keys(m, w, {"rearrange", "rearrange_order", "wct", "wct_percentile", "wct_epochs",
                              "wct_per_layer"});
    detail::read_key(m, "rearrange", w, c.mitigation.rearrange);
    if (m.contains("rearrange_order")) {
      std::string o;
      detail::read_key(m, "rearrange_order", w, o);
      c.mitigation.rearrange_order = parse_rearrange_order(o);
    }
    detail::read_key(m, "wct", w, c.mitigation.wct);
    detail::read_key(m, "wct_percentile", w, c.mitigation.wct_percentile);
    detail::read_key(m, "wct_epochs", w, c.mitigation.wct_epochs);
    detail::read_key(m, "wct_per_layer", w, c.mitigation.wct_per_layer);
  }
  detail::read_key(j, "seeds", "", c.seeds);
  detail::read_key(j, "threads", "", c.threads);
  detail::read_key(j, "output_dir", "", c.output_dir);
  c.validate();
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline ExperimentConfig load_config(const std::string& path) {
  const json j = read_json_file(path);
  try {
    return config_from_json(j);
  } catch (const UsageError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

/// Crossbar parameters from a file that is either a full experiment config
/// (its "crossbar" section is used) or a bare crossbar object.
inline CrossbarParams load_crossbar(const std::string& path) {
  const json j = read_json_file(path);
  try {
    if (j.is_object() && (j.contains("crossbar") || j.contains("sizes") || j.contains("model")))
      return config_from_json(j).crossbar;
    return crossbar_from_json(j);
  } catch (const UsageError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Hashing

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Hash of the canonical (key-sorted, compact) dump.
inline std::string json_hash(const json& j) { return hex64(fnv1a(j.dump())); }

inline std::string config_hash(const ExperimentConfig& c) { return json_hash(to_json(c)); }

}  // namespace xbarsim::harness
