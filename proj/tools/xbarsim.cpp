// xbarsim command-line interface.
//
// Exit codes: 0 success, 1 usage error, 2 runtime or numeric error.

#include <chrono>
#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xbarsim/xbarsim.hpp"

namespace {

using namespace xbarsim;
using namespace xbarsim::harness;

int run(int argc, char** argv) {
  CLI::App app{"Crossbar non-ideality simulator for structure-pruned neural networks"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // dataset gen
  auto* dataset = app.add_subcommand("dataset", "Dataset utilities")->require_subcommand(1);
  auto* dataset_gen = dataset->add_subcommand("gen", "Generate the synthetic 8x8 four-class dataset");
  std::uint64_t ds_seed = 0;
  int ds_train = DatasetConfig{}.n_train, ds_test = DatasetConfig{}.n_test;
  std::string ds_out;
  dataset_gen->add_option("--seed", ds_seed, "Generator seed")->required();
  dataset_gen->add_option("--out", ds_out, "Output directory")->required();
  dataset_gen->add_option("--n-train", ds_train, "Training samples")->check(CLI::PositiveNumber);
  dataset_gen->add_option("--n-test", ds_test, "Test samples")->check(CLI::PositiveNumber);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model (optionally pruned at init, optionally WCT)");
  std::string tr_config, tr_out, tr_prune = "none", tr_dataset;
  std::optional<double> tr_s;
  std::optional<std::uint64_t> tr_seed;
  std::optional<int> tr_size;
  bool tr_wct = false;
  train_cmd->add_option("--config", tr_config, "Experiment config (JSON)")->required();
  train_cmd->add_option("--out", tr_out, "Output model directory")->required();
  train_cmd->add_option("--prune", tr_prune, "Pruning method: none|cf|xcs|xrs");
  train_cmd->add_option("--s", tr_s, "Sparsity ratio (default: pruning.s of the config)");
  train_cmd->add_option("--seed", tr_seed, "Seed (default: first entry of seeds)");
  train_cmd->add_option("--size", tr_size, "Segment length for xcs/xrs (the target crossbar size)");
  train_cmd->add_option("--dataset", tr_dataset, "Dataset directory (default: generate from the config)");
  train_cmd->add_flag("--wct", tr_wct, "Weight-constrained retraining after the base training");

  // map
  auto* map_cmd = app.add_subcommand("map", "Map a model onto non-ideal crossbars");
  std::string mp_model, mp_xbar, mp_out, mp_order = "ascending";
  int mp_size = 0, mp_threads = 0;
  std::uint64_t mp_seed = 0;
  bool mp_rearrange = false;
  map_cmd->add_option("--model", mp_model, "Model directory")->required();
  map_cmd->add_option("--xbar", mp_xbar, "Crossbar config (JSON)")->required();
  map_cmd->add_option("--size", mp_size, "Crossbar size N (N x N tiles)")->required()->check(CLI::Range(1, 1024));
  map_cmd->add_option("--seed", mp_seed, "Device-variation seed")->required();
  map_cmd->add_option("--out", mp_out, "Output directory")->required();
  map_cmd->add_flag("--rearrange", mp_rearrange, "Apply column rearrangement");
  map_cmd->add_option("--order", mp_order, "Rearrangement order: ascending|center_out");
  map_cmd->add_option("--threads", mp_threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "Evaluate a mapped model and append a report row");
  std::string in_model, in_mapped, in_dataset, in_report;
  infer_cmd->add_option("--model", in_model, "Model directory")->required();
  infer_cmd->add_option("--mapped", in_mapped, "Mapped directory")->required();
  infer_cmd->add_option("--dataset", in_dataset, "Dataset directory")->required();
  infer_cmd->add_option("--report", in_report, "CSV report to append to")->required();

  // nf
  auto* nf_cmd = app.add_subcommand("nf", "Non-ideality factor versus crossbar size");
  std::string nf_model, nf_xbar, nf_report;
  std::vector<int> nf_sizes;
  std::uint64_t nf_seed = 1;
  int nf_threads = 0;
  bool nf_variation = false;
  nf_cmd->add_option("--model", nf_model, "Model directory")->required();
  nf_cmd->add_option("--xbar", nf_xbar, "Crossbar config (JSON)")->required();
  nf_cmd->add_option("--sizes", nf_sizes, "Comma-separated crossbar sizes")
      ->required()
      ->delimiter(',')
      ->check(CLI::Range(1, 1024));
  nf_cmd->add_option("--report", nf_report, "Output CSV")->required();
  nf_cmd->add_option("--seed", nf_seed, "Device-variation seed");
  nf_cmd->add_flag("--with-variation", nf_variation, "Include device variation (default: circuit only)");
  nf_cmd->add_option("--threads", nf_threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Full factorial sweep into one CSV");
  std::string sw_config, sw_out;
  std::optional<int> sw_threads;
  sweep_cmd->add_option("--config", sw_config, "Experiment config (JSON)")->required();
  sweep_cmd->add_option("--out", sw_out, "Output directory (overrides output_dir)");
  sweep_cmd->add_option("--threads", sw_threads, "Worker threads (overrides threads)")->check(CLI::NonNegativeNumber);

  // config print-defaults
  auto* config_cmd = app.add_subcommand("config", "Configuration utilities")->require_subcommand(1);
  auto* print_defaults = config_cmd->add_subcommand("print-defaults", "Print the default experiment config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*dataset_gen) {
    save_dataset(ds_out, gen_synthetic_dataset(ds_seed, ds_train, ds_test), ds_seed);
    std::cout << "dataset written to " << ds_out << '\n';
  } else if (*train_cmd) {
    const ExperimentConfig cfg = load_config(tr_config);
    TrainRequest req;
    req.method = parse_prune_method(tr_prune);
    req.s = tr_s.value_or(cfg.pruning.s);
    req.seed = tr_seed.value_or(cfg.seeds.front());
    req.wct = tr_wct;
    if (segment_method(req.method)) {
      if (!tr_size) throw UsageError("--prune " + tr_prune + " needs --size (the crossbar size)");
      req.tile_size = *tr_size;
    }
    SyntheticData data;
    std::string dhash;
    if (tr_dataset.empty()) {
      data = make_dataset(cfg.dataset);
      dhash = dataset_hash(cfg.dataset);
    } else {
      StoredDataset sd = load_dataset(tr_dataset);
      data = std::move(sd.data);
      dhash = sd.config_hash;
    }
    const StoredModel sm = train_model(cfg, req, data, dhash);
    save_model(tr_out, sm);
    std::cout << "model " << sm.config_hash << " written to " << tr_out
              << " (test accuracy " << fmt6(sm.software_accuracy) << ")\n";
  } else if (*map_cmd) {
    const StoredModel sm = load_model(mp_model);
    MapRequest req;
    req.size = mp_size;
    req.rearrange = mp_rearrange;
    req.order = parse_rearrange_order(mp_order);
    req.seed = mp_seed;
    req.threads = resolve_threads(mp_threads);
    const MappedModel mm = map_model(sm, load_crossbar(mp_xbar), req);
    save_mapped(mp_out, mm, sm.model.spec);
    const auto nf = mm.mean_nf();
    std::cout << "mapped model written to " << mp_out << " (mean NF " << (nf ? fmt6(*nf) : "undefined") << ")\n";
  } else if (*infer_cmd) {
    const auto t0 = std::chrono::steady_clock::now();
    const StoredModel sm = load_model(in_model);
    const MappedModel mm = load_mapped(in_mapped, sm.model.spec);
    const StoredDataset sd = load_dataset(in_dataset);
    ReportRow row = infer_row(sm, mm, sd.data.test);
    row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_report(in_report, {row});
    std::cout << "software " << fmt6(row.software_accuracy) << ", non-ideal " << fmt6(row.nonideal_accuracy)
              << ", appended to " << in_report << '\n';
  } else if (*nf_cmd) {
    const StoredModel sm = load_model(nf_model);
    write_text(nf_report, nf_table(sm, load_crossbar(nf_xbar), nf_sizes, nf_seed, nf_variation,
                                   resolve_threads(nf_threads)));
    std::cout << "NF table written to " << nf_report << '\n';
  } else if (*sweep_cmd) {
    ExperimentConfig cfg = load_config(sw_config);
    if (!sw_out.empty()) cfg.output_dir = sw_out;
    if (sw_threads) cfg.threads = *sw_threads;
    const SweepResult r = run_sweep(cfg);
    std::cout << r.rows.size() << " rows written to "
              << (std::filesystem::path(cfg.output_dir.empty() ? "." : cfg.output_dir) / "sweep.csv").string()
              << '\n';
  } else if (*print_defaults) {
    std::cout << to_json(ExperimentConfig{}).dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const xbarsim::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
