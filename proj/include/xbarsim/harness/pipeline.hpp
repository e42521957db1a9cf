#pragma once

// The evaluation chain shared by the CLI subcommands and the sweep runner:
// train (optionally pruned, optionally WCT) -> map onto crossbars -> infer.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xbarsim/harness/config.hpp"
#include "xbarsim/harness/io.hpp"
#include "xbarsim/harness/report.hpp"
#include "xbarsim/mapping.hpp"
#include "xbarsim/nn.hpp"
#include "xbarsim/pruning.hpp"

namespace xbarsim::harness {

struct TrainRequest {
  std::uint64_t seed = 1;
  PruneMethod method = PruneMethod::none;
  double s = 0.0;
  int tile_size = 0;  // XCS/XRS segment length
  bool wct = false;
};

inline SyntheticData make_dataset(const DatasetConfig& d) {
  return gen_synthetic_dataset(d.seed, d.n_train, d.n_test);
}

inline std::string dataset_hash(const DatasetConfig& d) {
  return json_hash(dataset_identity(d.seed, d.n_train, d.n_test));
}

/// Config narrowed to what produced one model; its hash identifies the model.
inline ExperimentConfig effective_config(ExperimentConfig cfg, const TrainRequest& r) {
  cfg.pruning.methods = {r.method};
  cfg.pruning.s = r.method == PruneMethod::none ? 0.0 : r.s;
  cfg.mitigation.wct = r.wct;
  cfg.mitigation.rearrange = false;
  cfg.seeds = {r.seed};
  if (r.method == PruneMethod::xcs || r.method == PruneMethod::xrs) cfg.sizes = {r.tile_size};
  cfg.threads = 0;
  cfg.output_dir = "";
  return cfg;
}

inline StoredModel finish_model(const ExperimentConfig& cfg, const TrainRequest& r, Model m,
                                std::optional<SparsityPattern> pattern, std::vector<double> w_cut,
                                const std::string& data_hash, const Dataset& test) {
  StoredModel sm;
  const ExperimentConfig eff = effective_config(cfg, r);
  sm.config = to_json(eff);
  sm.config_hash = config_hash(eff);
  sm.seed = r.seed;
  sm.dataset_hash = data_hash;
  sm.software_accuracy = evaluate(m, test);
  sm.model = std::move(m);
  sm.pattern = std::move(pattern);
  sm.w_cut = std::move(w_cut);
  return sm;
}

inline std::optional<SparsityPattern> make_pattern(const ModelSpec& spec, const TrainRequest& r) {
  if (r.method == PruneMethod::none) return std::nullopt;
  if ((r.method == PruneMethod::xcs || r.method == PruneMethod::xrs) && r.tile_size < 1)
    throw UsageError("XCS/XRS pruning needs a crossbar size for its segment length");
  return gen_mask(spec, r.method, r.s, r.tile_size, r.seed);
}

/// Trains the base model of `r` (ignoring r.wct).
inline StoredModel train_base(const ExperimentConfig& cfg, const TrainRequest& r, const SyntheticData& data,
                              const std::string& data_hash) {
  const ModelSpec spec = cfg.model_spec(r.seed);
  TrainConfig tc = cfg.train_config(r.seed);
  tc.pattern = make_pattern(spec, r);
  TrainResult res = train(init_model(spec), data.train, tc);
  TrainRequest base = r;
  base.wct = false;
  return finish_model(cfg, base, std::move(res.model), tc.pattern, {}, data_hash, data.test);
}

/// WCT retraining of an already trained base model.
inline StoredModel train_wct(const ExperimentConfig& cfg, const StoredModel& base, const TrainRequest& r,
                             const SyntheticData& data, const std::string& data_hash) {
  TrainConfig tc = cfg.train_config(r.seed);
  tc.pattern = base.pattern;
  tc.wct = cfg.wct_settings();
  TrainResult res = wct_train(base.model, data.train, tc);
  TrainRequest w = r;
  w.wct = true;
  return finish_model(cfg, w, std::move(res.model), base.pattern, std::move(res.w_cut), data_hash, data.test);
}

inline StoredModel train_model(const ExperimentConfig& cfg, const TrainRequest& r, const SyntheticData& data,
                               const std::string& data_hash) {
  StoredModel base = train_base(cfg, r, data, data_hash);
  if (!r.wct) return base;
  return train_wct(cfg, base, r, data, data_hash);
}

struct MapRequest {
  int size = 32;
  bool rearrange = false;
  RearrangeOrder order = RearrangeOrder::ascending;
  std::uint64_t seed = 1;
  int threads = 1;
  bool variation = true;  // false: sigma_dev forced to 0
};

inline MappedModel map_model(const StoredModel& sm, const CrossbarParams& xbar, const MapRequest& req) {
  CrossbarParams params = xbar.with_size(req.size);
  if (!req.variation) params.sigma_dev = 0.0;
  params.validate();
  MappedModel mm;
  mm.config_hash = sm.config_hash;
  mm.crossbar = xbar;
  mm.crossbar_hash = json_hash(to_json(xbar));
  mm.size = req.size;
  mm.rearrange = req.rearrange;
  mm.order = req.order;
  mm.seed = req.seed;
  const auto shapes = sm.model.shapes();
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    LayerMapOptions opt;
    opt.rearrange = req.rearrange;
    opt.order = req.order;
    opt.master_seed = req.seed;
    opt.layer_index = static_cast<int>(l);
    opt.threads = req.threads;
    if (sm.pattern) opt.compaction = layer_compaction(*sm.pattern, l, req.size);
    LayerSimulation sim = simulate_layer(sm.model.weights[l], params, opt);
    MappedLayer ml;
    ml.name = shapes[l].name;
    ml.w_nonideal = std::move(sim.w_nonideal);
    ml.record = std::move(sim.record);
    for (const auto& t : sim.nf.tiles) {
      ml.tile_nf.push_back(t.mean_nf);
      for (double v : t.per_column_nf) ml.nf_column_count += std::isnan(v) ? 0 : 1;
    }
    ml.mean_tile_nf = sim.nf.mean_tile_nf;
    ml.mean_column_nf = sim.nf.mean_column_nf;
    mm.layers.push_back(std::move(ml));
  }
  return mm;
}

inline std::string mitigation_label(bool rearrange, bool wct) {
  if (rearrange && wct) return "wct+rearrange";
  if (rearrange) return "rearrange";
  if (wct) return "wct";
  return "none";
}

/// Non-ideal inference of a mapped model; the row's wall time is left 0.
inline ReportRow infer_row(const StoredModel& sm, const MappedModel& mm, const Dataset& test) {
  if (mm.config_hash != sm.config_hash)
    throw NumericError("config hash mismatch: mapped directory was produced from model " + mm.config_hash +
                       ", but the given model has " + sm.config_hash);
  ReportRow row;
  row.seed = sm.seed;
  row.config_hash = sm.config_hash;
  row.crossbar_hash = mm.crossbar_hash;
  row.method = sm.pattern ? sm.pattern->method : PruneMethod::none;
  row.s = sm.pattern ? sm.pattern->s : 0.0;
  row.size = mm.size;
  row.mitigation = mitigation_label(mm.rearrange, !sm.w_cut.empty());
  row.software_accuracy = evaluate(sm.model, test);
  row.nonideal_accuracy = evaluate(inject_nonideal_weights(sm.model, mm.weights()), test);
  const auto nf = mm.mean_nf();
  if (!nf) throw NumericError("mean NF undefined: every column of every tile was excluded");
  row.mean_nf = *nf;
  row.compression_rate = sm.pattern ? compression_rate(sm.model.spec, *sm.pattern, mm.size) : 1.0;
  return row;
}

// ---------------------------------------------------------------------------
// NF-vs-size table

inline const std::vector<std::string>& nf_columns() {
  static const std::vector<std::string> cols{"size", "layer", "tiles", "mean_tile_nf", "mean_column_nf"};
  return cols;
}

/// One row per (size, layer) plus an "all" row per size holding the mean of
/// the per-tile means over every tile of the model. Undefined means render
/// as empty fields.
inline std::string nf_table(const StoredModel& sm, const CrossbarParams& xbar, const std::vector<int>& sizes,
                            std::uint64_t seed, bool variation, int threads) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt6(*v) : std::string(); };
  std::string out = join_csv(nf_columns()) + '\n';
  for (int n : sizes) {
    MapRequest req;
    req.size = n;
    req.seed = seed;
    req.threads = threads;
    req.variation = variation;
    const MappedModel mm = map_model(sm, xbar, req);
    std::size_t tiles = 0;
    for (const auto& l : mm.layers) {
      tiles += l.tile_nf.size();
      out += join_csv({std::to_string(n), l.name, std::to_string(l.tile_nf.size()), opt(l.mean_tile_nf),
                       opt(l.mean_column_nf)}) + '\n';
    }
    double col_sum = 0.0;
    int col_n = 0;
    for (const auto& l : mm.layers)
      if (l.mean_column_nf) {
        col_sum += *l.mean_column_nf * l.nf_column_count;
        col_n += l.nf_column_count;
      }
    const std::optional<double> all_cols =
        col_n ? std::optional<double>(col_sum / col_n) : std::nullopt;
    out += join_csv({std::to_string(n), "all", std::to_string(tiles), opt(mm.mean_nf()), opt(all_cols)}) + '\n';
  }
  return out;
}

}  // namespace xbarsim::harness
