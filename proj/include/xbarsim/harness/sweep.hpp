#pragma once

// Full-factorial sweep: seeds x sizes x pruning methods x mitigations.
//
// Models are trained once per (seed, method), except XCS/XRS whose segment
// grid follows the crossbar size and which are therefore trained once per
// (seed, method, size). Every cell is a pure function of its inputs, so
// cells run in parallel and the sorted CSV is identical for any thread count.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "xbarsim/harness/config.hpp"
#include "xbarsim/harness/pipeline.hpp"
#include "xbarsim/harness/report.hpp"
#include "xbarsim/mapping.hpp"

namespace xbarsim::harness {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

inline bool segment_method(PruneMethod m) { return m == PruneMethod::xcs || m == PruneMethod::xrs; }

struct SweepResult {
  std::vector<ReportRow> rows;
  std::string csv;
};

/// Runs the sweep in memory; `run_sweep` also writes the files.
inline SweepResult compute_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const int threads = resolve_threads(cfg.threads);
  const SyntheticData data = make_dataset(cfg.dataset);
  const std::string dhash = dataset_hash(cfg.dataset);

  // Training jobs, keyed by (seed, method, segment size or 0).
  using ModelKey = std::tuple<std::uint64_t, int, int>;
  std::vector<TrainRequest> jobs;
  for (auto seed : cfg.seeds)
    for (auto m : cfg.pruning.methods) {
      if (segment_method(m)) {
        for (int n : cfg.sizes) jobs.push_back({seed, m, cfg.pruning.s, n, false});
      } else {
        jobs.push_back({seed, m, cfg.pruning.s, 0, false});
      }
    }
  std::vector<StoredModel> base(jobs.size()), wct(cfg.mitigation.wct ? jobs.size() : 0);
  parallel_for(jobs.size(), threads, [&](std::size_t k) {
    base[k] = train_base(cfg, jobs[k], data, dhash);
    if (cfg.mitigation.wct) wct[k] = train_wct(cfg, base[k], jobs[k], data, dhash);
  });
  std::map<ModelKey, std::size_t> index;
  for (std::size_t k = 0; k < jobs.size(); ++k)
    index[{jobs[k].seed, static_cast<int>(jobs[k].method), jobs[k].tile_size}] = k;

  struct Cell {
    std::size_t model;
    bool wct;
    bool rearrange;
    int size;
  };
  std::vector<Cell> cells;
  for (auto seed : cfg.seeds)
    for (int n : cfg.sizes)
      for (auto m : cfg.pruning.methods) {
        const std::size_t k = index.at({seed, static_cast<int>(m), segment_method(m) ? n : 0});
        cells.push_back({k, false, false, n});
        if (cfg.mitigation.rearrange && !segment_method(m)) cells.push_back({k, false, true, n});
        if (cfg.mitigation.wct) cells.push_back({k, true, false, n});
      }

  std::vector<ReportRow> rows(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t c) {
    const Cell& cell = cells[c];
    const StoredModel& sm = cell.wct ? wct[cell.model] : base[cell.model];
    const auto t0 = std::chrono::steady_clock::now();
    MapRequest req;
    req.size = cell.size;
    req.rearrange = cell.rearrange;
    req.order = cfg.mitigation.rearrange_order;
    req.seed = sm.seed;
    const MappedModel mm = map_model(sm, cfg.crossbar, req);
    ReportRow row = infer_row(sm, mm, data.test);
    row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows[c] = std::move(row);
  });
  SweepResult out;
  out.csv = render_report(rows);
  sort_rows(rows);
  out.rows = std::move(rows);
  return out;
}

/// Writes <output_dir>/sweep.csv and <output_dir>/config.json.
inline SweepResult run_sweep(const ExperimentConfig& cfg) {
  SweepResult r = compute_sweep(cfg);
  const std::filesystem::path dir = cfg.output_dir.empty() ? "." : cfg.output_dir;
  write_text(dir / "sweep.csv", r.csv);
  write_json_file((dir / "config.json").string(), to_json(cfg));
  return r;
}

}  // namespace xbarsim::harness
