#pragma once

// On-disk formats. Every artifact is a directory holding `manifest.json`
// plus one raw little-endian binary file per tensor, row-major:
//   *.f32  IEEE-754 binary32
//   *.i32  two's-complement int32 (labels only)
// Conv weights are stored as [out][in][kh][kw]; dense weights as [in][out],
// i.e. the unrolled WeightMatrix layout. Masks and signs use the unrolled
// layout of their layer.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xbarsim/error.hpp"
#include "xbarsim/harness/config.hpp"
#include "xbarsim/mapping.hpp"
#include "xbarsim/model_spec.hpp"
#include "xbarsim/nn.hpp"
#include "xbarsim/pruning.hpp"

namespace xbarsim::harness {

namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kDtype = "f32le";

// ---------------------------------------------------------------------------
// Raw tensors

inline void write_f32(const fs::path& path, const std::vector<double>& values) {
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(u >> (8 * b));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::vector<unsigned char> read_bytes(const fs::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size != expected)
    throw IoError("'" + path.string() + "' holds " + std::to_string(size) + " bytes, expected " +
                  std::to_string(expected));
  std::vector<unsigned char> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("read failed for '" + path.string() + "'");
  return bytes;
}

inline std::uint32_t load_le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::vector<double> read_f32(const fs::path& path, std::size_t count) {
  const auto bytes = read_bytes(path, count * 4);
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t u = load_le32(&bytes[i * 4]);
    float f;
    std::memcpy(&f, &u, 4);
    if (!std::isfinite(f)) throw IoError("'" + path.string() + "' contains a non-finite value");
    out[i] = f;
  }
  return out;
}

inline void write_i32(const fs::path& path, const std::vector<int>& values) {
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto u = static_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(u >> (8 * b));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::vector<int> read_i32(const fs::path& path, std::size_t count) {
  const auto bytes = read_bytes(path, count * 4);
  std::vector<int> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<std::int32_t>(load_le32(&bytes[i * 4]));
  return out;
}

/// Row-major flattening of a matrix.
inline std::vector<double> row_major(const Matrix& m) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  return v;
}

inline Matrix from_row_major(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
  xbarsim::detail::require(static_cast<Eigen::Index>(v.size()) == rows * cols, "tensor size mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
  return m;
}

// ---------------------------------------------------------------------------
// Native weight layout

/// Stored tensor shape of a layer's weights.
inline std::vector<int> native_shape(const ModelSpec& spec, const TrainableShape& s) {
  if (s.kind == LayerKind::conv) {
    const LayerSpec& l = spec.layers[static_cast<std::size_t>(s.layer_index)];
    return {l.out_ch, l.in_ch, l.kernel, l.kernel};
  }
  return {s.rows, s.cols};
}

/// Flattens a WeightMatrix into its stored layout.
inline std::vector<double> to_native(const Matrix& w, const TrainableShape& s) {
  // [out][in][kh][kw] is exactly the transpose of the unrolled matrix.
  return s.kind == LayerKind::conv ? row_major(w.transpose()) : row_major(w);
}

inline Matrix from_native(const std::vector<double>& v, const TrainableShape& s) {
  return s.kind == LayerKind::conv ? Matrix(from_row_major(v, s.cols, s.rows).transpose())
                                   : from_row_major(v, s.rows, s.cols);
}

// ---------------------------------------------------------------------------
// Manifest helpers

inline json read_manifest(const fs::path& dir, const std::string& format) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) throw IoError("'" + dir.string() + "' has no manifest.json");
  json j = read_json_file(p.string());
  if (!j.is_object() || j.value("format", "") != format)
    throw IoError("'" + p.string() + "': expected format '" + format + "'");
  if (j.value("version", 0) != kFormatVersion)
    throw IoError("'" + p.string() + "': unsupported version");
  if (j.contains("dtype") && j["dtype"] != kDtype)
    throw IoError("'" + p.string() + "': unsupported dtype");
  return j;
}

template <class T>
T manifest_get(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw IoError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw IoError(where + ": key '" + key + "' has the wrong type");
  }
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

// ---------------------------------------------------------------------------
// Datasets

inline json dataset_identity(std::uint64_t seed, int n_train, int n_test) {
  return {{"generator", "synthetic-bars-v1"}, {"seed", seed}, {"n_train", n_train}, {"n_test", n_test}};
}

inline void save_dataset(const fs::path& dir, const SyntheticData& data, std::uint64_t seed) {
  ensure_dir(dir);
  json splits = json::object();
  for (const Dataset* d : {&data.train, &data.test}) {
    const std::string img = d->split + "_images.f32", lab = d->split + "_labels.i32";
    write_f32(dir / img, row_major(d->images));
    write_i32(dir / lab, d->labels);
    splits[d->split] = {{"n", d->size()}, {"images", img}, {"labels", lab}};
  }
  const json id = dataset_identity(seed, data.train.size(), data.test.size());
  json m = {{"format", "xbarsim-dataset"},
            {"version", kFormatVersion},
            {"dtype", kDtype},
            {"identity", id},
            {"config_hash", json_hash(id)},
            {"shape", {data.train.channels, data.train.height, data.train.width}},
            {"classes", data.train.classes},
            {"splits", splits}};
  write_json_file((dir / "manifest.json").string(), m);
}

struct StoredDataset {
  SyntheticData data;
  std::string config_hash;
};

inline StoredDataset load_dataset(const fs::path& dir) {
  const json m = read_manifest(dir, "xbarsim-dataset");
  const std::string where = (dir / "manifest.json").string();
  const auto shape = manifest_get<std::vector<int>>(m, "shape", where);
  if (shape.size() != 3) throw IoError(where + ": 'shape' must have 3 entries");
  const int classes = manifest_get<int>(m, "classes", where);
  const json splits = manifest_get<json>(m, "splits", where);
  StoredDataset out;
  out.config_hash = manifest_get<std::string>(m, "config_hash", where);
  for (Dataset* d : {&out.data.train, &out.data.test}) {
    const std::string name = d == &out.data.train ? "train" : "test";
    if (!splits.contains(name)) throw IoError(where + ": missing split '" + name + "'");
    const json& s = splits[name];
    const int n = manifest_get<int>(s, "n", where);
    const int features = shape[0] * shape[1] * shape[2];
    d->split = name;
    d->channels = shape[0];
    d->height = shape[1];
    d->width = shape[2];
    d->classes = classes;
    d->images = from_row_major(read_f32(dir / manifest_get<std::string>(s, "images", where),
                                        static_cast<std::size_t>(n) * features),
                               n, features);
    d->labels = read_i32(dir / manifest_get<std::string>(s, "labels", where), static_cast<std::size_t>(n));
    for (int y : d->labels)
      if (y < 0 || y >= classes) throw IoError(where + ": label out of range in split '" + name + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model spec

inline json to_json(const ModelSpec& s) {
  json layers = json::array();
  for (const auto& l : s.layers) {
    json j = {{"kind", to_string(l.kind)}};
    if (l.kind == LayerKind::conv)
      j.update({{"in_ch", l.in_ch}, {"out_ch", l.out_ch}, {"kernel", l.kernel}, {"stride", l.stride},
                {"padding", l.padding}});
    if (l.kind == LayerKind::dense) j.update({{"in", l.in}, {"out", l.out}});
    layers.push_back(j);
  }
  return {{"in_channels", s.in_channels}, {"in_height", s.in_height}, {"in_width", s.in_width},
          {"num_classes", s.num_classes}, {"init_seed", s.init_seed},  {"layers", layers}};
}

inline ModelSpec model_spec_from_json(const json& j, const std::string& where) {
  ModelSpec s;
  s.in_channels = manifest_get<int>(j, "in_channels", where);
  s.in_height = manifest_get<int>(j, "in_height", where);
  s.in_width = manifest_get<int>(j, "in_width", where);
  s.num_classes = manifest_get<int>(j, "num_classes", where);
  s.init_seed = manifest_get<std::uint64_t>(j, "init_seed", where);
  for (const json& l : manifest_get<json>(j, "layers", where)) {
    const LayerKind k = parse_layer_kind(manifest_get<std::string>(l, "kind", where));
    LayerSpec ls;
    if (k == LayerKind::conv)
      ls = LayerSpec::conv(manifest_get<int>(l, "in_ch", where), manifest_get<int>(l, "out_ch", where),
                           manifest_get<int>(l, "kernel", where), manifest_get<int>(l, "stride", where),
                           manifest_get<int>(l, "padding", where));
    else if (k == LayerKind::dense)
      ls = LayerSpec::dense(manifest_get<int>(l, "in", where), manifest_get<int>(l, "out", where));
    else if (k == LayerKind::maxpool)
      ls = LayerSpec::maxpool();
    s.layers.push_back(ls);
  }
  try {
    s.trainable_shapes();
  } catch (const UsageError& e) {
    throw IoError(where + ": invalid model: " + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Models

struct StoredModel {
  Model model;
  std::optional<SparsityPattern> pattern;
  std::uint64_t seed = 0;
  std::string config_hash;
  json config;                  // effective experiment config
  std::vector<double> w_cut;    // WCT cutoffs, empty without WCT
  std::string dataset_hash;
  double software_accuracy = 0.0;
};

inline void save_model(const fs::path& dir, const StoredModel& sm) {
  ensure_dir(dir);
  const auto shapes = sm.model.shapes();
  json layers = json::array();
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    json e = {{"name", s.name},
              {"kind", to_string(s.kind)},
              {"shape", native_shape(sm.model.spec, s)},
              {"matrix_shape", {s.rows, s.cols}},
              {"weights", s.name + ".w.f32"},
              {"bias", s.name + ".b.f32"}};
    write_f32(dir / (s.name + ".w.f32"), to_native(sm.model.weights[l], s));
    const Eigen::VectorXd& b = sm.model.biases[l];
    write_f32(dir / (s.name + ".b.f32"), std::vector<double>(b.data(), b.data() + b.size()));
    if (sm.pattern && !sm.pattern->empty()) {
      e["mask"] = s.name + ".mask.f32";
      write_f32(dir / (s.name + ".mask.f32"), row_major(sm.pattern->masks[l]));
    }
    layers.push_back(e);
  }
  json pruning = nullptr;
  if (sm.pattern && !sm.pattern->empty())
    pruning = {{"method", to_string(sm.pattern->method)},
               {"s", sm.pattern->s},
               {"seed", sm.pattern->seed},
               {"tile_size", sm.pattern->tile_size}};
  json m = {{"format", "xbarsim-model"},
            {"version", kFormatVersion},
            {"dtype", kDtype},
            {"config_hash", sm.config_hash},
            {"config", sm.config},
            {"seed", sm.seed},
            {"dataset_hash", sm.dataset_hash},
            {"software_accuracy", sm.software_accuracy},
            {"spec", to_json(sm.model.spec)},
            {"layers", layers},
            {"pruning", pruning},
            {"wct", sm.w_cut.empty() ? json(nullptr) : json{{"w_cut", sm.w_cut}}}};
  write_json_file((dir / "manifest.json").string(), m);
}

inline StoredModel load_model(const fs::path& dir) {
  const json m = read_manifest(dir, "xbarsim-model");
  const std::string where = (dir / "manifest.json").string();
  StoredModel sm;
  sm.model.spec = model_spec_from_json(manifest_get<json>(m, "spec", where), where);
  sm.config_hash = manifest_get<std::string>(m, "config_hash", where);
  sm.config = m.value("config", json::object());
  sm.seed = manifest_get<std::uint64_t>(m, "seed", where);
  sm.dataset_hash = m.value("dataset_hash", "");
  sm.software_accuracy = m.value("software_accuracy", 0.0);
  if (m.contains("wct") && m["wct"].is_object()) sm.w_cut = manifest_get<std::vector<double>>(m["wct"], "w_cut", where);
  const auto shapes = sm.model.shapes();
  const json layers = manifest_get<json>(m, "layers", where);
  if (!layers.is_array() || layers.size() != shapes.size())
    throw IoError(where + ": 'layers' does not match the model spec");
  const bool pruned = m.contains("pruning") && m["pruning"].is_object();
  SparsityPattern p;
  if (pruned) {
    const json& pj = m["pruning"];
    p.method = parse_prune_method(manifest_get<std::string>(pj, "method", where));
    p.s = manifest_get<double>(pj, "s", where);
    p.seed = manifest_get<std::uint64_t>(pj, "seed", where);
    p.tile_size = manifest_get<int>(pj, "tile_size", where);
  }
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    const json& e = layers[l];
    const auto expect = native_shape(sm.model.spec, s);
    if (manifest_get<std::vector<int>>(e, "shape", where) != expect)
      throw IoError(where + ": layer '" + s.name + "' shape does not match the model spec");
    sm.model.weights.push_back(from_native(
        read_f32(dir / manifest_get<std::string>(e, "weights", where), static_cast<std::size_t>(s.rows * s.cols)), s));
    const auto b = read_f32(dir / manifest_get<std::string>(e, "bias", where), static_cast<std::size_t>(s.cols));
    sm.model.biases.push_back(Eigen::Map<const Eigen::VectorXd>(b.data(), s.cols));
    if (pruned)
      p.masks.push_back(from_row_major(
          read_f32(dir / manifest_get<std::string>(e, "mask", where), static_cast<std::size_t>(s.rows * s.cols)),
          s.rows, s.cols));
  }
  if (pruned) sm.pattern = std::move(p);
  return sm;
}

// ---------------------------------------------------------------------------
// Mapping records

inline json to_json(const TilePlacement& p) {
  return {{"row_block", p.row_block}, {"col_block", p.col_block}, {"rows", p.rows}, {"cols", p.cols}};
}

inline TilePlacement placement_from_json(const json& j, const std::string& where) {
  return {manifest_get<int>(j, "row_block", where), manifest_get<int>(j, "col_block", where),
          manifest_get<std::vector<int>>(j, "rows", where), manifest_get<std::vector<int>>(j, "cols", where)};
}

/// Signs are stored in a separate tensor file; everything else lives here.
inline json to_json(const MappingRecord& r) {
  json placements = json::array();
  for (const auto& p : r.tile_placements) placements.push_back(to_json(p));
  json compaction = nullptr;
  if (r.pruning_compaction) {
    const auto& d = *r.pruning_compaction;
    compaction = {{"method", to_string(d.method)}, {"source_rows", d.source_rows}, {"source_cols", d.source_cols},
                  {"kept_rows", d.kept_rows},      {"kept_cols", d.kept_cols},     {"segment", d.segment}};
  }
  return {{"tile_size", r.tile_size},
          {"source_rows", r.source_rows},
          {"source_cols", r.source_cols},
          {"working_rows", r.working_rows},
          {"working_cols", r.working_cols},
          {"w_scale", r.w_scale},
          {"row_pad", r.row_pad},
          {"col_pad", r.col_pad},
          {"tile_placements", placements},
          {"column_permutation", r.column_permutation ? json(*r.column_permutation) : json(nullptr)},
          {"pruning_compaction", compaction}};
}

inline MappingRecord record_from_json(const json& j, SignMatrix signs, const std::string& where) {
  MappingRecord r;
  r.tile_size = manifest_get<int>(j, "tile_size", where);
  r.source_rows = manifest_get<int>(j, "source_rows", where);
  r.source_cols = manifest_get<int>(j, "source_cols", where);
  r.working_rows = manifest_get<int>(j, "working_rows", where);
  r.working_cols = manifest_get<int>(j, "working_cols", where);
  r.w_scale = manifest_get<double>(j, "w_scale", where);
  r.row_pad = manifest_get<int>(j, "row_pad", where);
  r.col_pad = manifest_get<int>(j, "col_pad", where);
  for (const json& p : manifest_get<json>(j, "tile_placements", where))
    r.tile_placements.push_back(placement_from_json(p, where));
  if (j.contains("column_permutation") && !j["column_permutation"].is_null())
    r.column_permutation = manifest_get<std::vector<int>>(j, "column_permutation", where);
  if (j.contains("pruning_compaction") && !j["pruning_compaction"].is_null()) {
    const json& c = j["pruning_compaction"];
    CompactionDescriptor d;
    d.method = parse_prune_method(manifest_get<std::string>(c, "method", where));
    d.source_rows = manifest_get<int>(c, "source_rows", where);
    d.source_cols = manifest_get<int>(c, "source_cols", where);
    d.kept_rows = manifest_get<std::vector<int>>(c, "kept_rows", where);
    d.kept_cols = manifest_get<std::vector<int>>(c, "kept_cols", where);
    d.segment = manifest_get<int>(c, "segment", where);
    if (d.method == PruneMethod::xcs || d.method == PruneMethod::xrs) d.packed = r.tile_placements;
    r.pruning_compaction = std::move(d);
  }
  r.signs = std::move(signs);
  return r;
}

inline Matrix signs_to_matrix(const SignMatrix& s) { return s.cast<double>(); }

inline SignMatrix signs_from_matrix(const Matrix& m, const std::string& where) {
  SignMatrix s(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double v = m(i, j);
      if (v != -1.0 && v != 0.0 && v != 1.0) throw IoError(where + ": sign tensor holds a value outside {-1, 0, 1}");
      s(i, j) = static_cast<std::int8_t>(v);
    }
  return s;
}

// ---------------------------------------------------------------------------
// Mapped models

struct MappedLayer {
  std::string name;
  Matrix w_nonideal;  // unrolled layout
  MappingRecord record;
  std::vector<std::optional<double>> tile_nf;  // per-tile mean NF
  std::optional<double> mean_tile_nf;
  std::optional<double> mean_column_nf;
  int nf_column_count = 0;  // columns pooled into mean_column_nf
};

struct MappedModel {
  std::string config_hash;    // of the source model
  std::string crossbar_hash;
  CrossbarParams crossbar;
  int size = 0;
  bool rearrange = false;
  RearrangeOrder order = RearrangeOrder::ascending;
  std::uint64_t seed = 0;
  std::vector<MappedLayer> layers;

  /// Mean of per-tile mean NF over every tile of every layer.
  std::optional<double> mean_nf() const {
    double sum = 0.0;
    int n = 0;
    for (const auto& l : layers)
      for (const auto& t : l.tile_nf)
        if (t) {
          sum += *t;
          ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / n;
  }

  std::vector<Matrix> weights() const {
    std::vector<Matrix> w;
    for (const auto& l : layers) w.push_back(l.w_nonideal);
    return w;
  }
};

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::optional<double> opt_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

inline void save_mapped(const fs::path& dir, const MappedModel& mm, const ModelSpec& spec) {
  ensure_dir(dir);
  const auto shapes = spec.trainable_shapes();
  xbarsim::detail::require(shapes.size() == mm.layers.size(), "save_mapped: layer count mismatch");
  json layers = json::array();
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    const auto& ml = mm.layers[l];
    write_f32(dir / (s.name + ".wprime.f32"), to_native(ml.w_nonideal, s));
    write_f32(dir / (s.name + ".signs.f32"), row_major(signs_to_matrix(ml.record.signs)));
    json tiles = json::array();
    for (const auto& t : ml.tile_nf) tiles.push_back(opt_json(t));
    layers.push_back({{"name", s.name},
                      {"shape", native_shape(spec, s)},
                      {"weights", s.name + ".wprime.f32"},
                      {"signs", s.name + ".signs.f32"},
                      {"record", to_json(ml.record)},
                      {"nf", {{"tiles", tiles},
                              {"mean_tile_nf", opt_json(ml.mean_tile_nf)},
                              {"mean_column_nf", opt_json(ml.mean_column_nf)},
                              {"column_count", ml.nf_column_count}}}});
  }
  json m = {{"format", "xbarsim-mapped"},
            {"version", kFormatVersion},
            {"dtype", kDtype},
            {"config_hash", mm.config_hash},
            {"crossbar_hash", mm.crossbar_hash},
            {"crossbar", to_json(mm.crossbar)},
            {"size", mm.size},
            {"rearrange", mm.rearrange},
            {"rearrange_order", to_string(mm.order)},
            {"seed", mm.seed},
            {"mean_nf", opt_json(mm.mean_nf())},
            {"layers", layers}};
  write_json_file((dir / "manifest.json").string(), m);
}

inline MappedModel load_mapped(const fs::path& dir, const ModelSpec& spec) {
  const json m = read_manifest(dir, "xbarsim-mapped");
  const std::string where = (dir / "manifest.json").string();
  MappedModel mm;
  mm.config_hash = manifest_get<std::string>(m, "config_hash", where);
  mm.crossbar_hash = manifest_get<std::string>(m, "crossbar_hash", where);
  try {
    mm.crossbar = crossbar_from_json(manifest_get<json>(m, "crossbar", where));
  } catch (const UsageError& e) {
    throw IoError(where + ": " + e.what());
  }
  mm.size = manifest_get<int>(m, "size", where);
  mm.rearrange = manifest_get<bool>(m, "rearrange", where);
  mm.order = parse_rearrange_order(m.value("rearrange_order", "ascending"));
  mm.seed = manifest_get<std::uint64_t>(m, "seed", where);
  const auto shapes = spec.trainable_shapes();
  const json layers = manifest_get<json>(m, "layers", where);
  if (!layers.is_array() || layers.size() != shapes.size())
    throw IoError(where + ": 'layers' does not match the model");
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    const json& e = layers[l];
    if (manifest_get<std::vector<int>>(e, "shape", where) != native_shape(spec, s))
      throw IoError(where + ": layer '" + s.name + "' shape does not match the model");
    MappedLayer ml;
    ml.name = s.name;
    const auto count = static_cast<std::size_t>(s.rows * s.cols);
    ml.w_nonideal = from_native(read_f32(dir / manifest_get<std::string>(e, "weights", where), count), s);
    const Matrix sg = from_row_major(read_f32(dir / manifest_get<std::string>(e, "signs", where), count), s.rows, s.cols);
    ml.record = record_from_json(manifest_get<json>(e, "record", where), signs_from_matrix(sg, where), where);
    const json nf = manifest_get<json>(e, "nf", where);
    for (const json& t : manifest_get<json>(nf, "tiles", where)) ml.tile_nf.push_back(opt_from_json(t));
    ml.mean_tile_nf = opt_from_json(nf.value("mean_tile_nf", json(nullptr)));
    ml.mean_column_nf = opt_from_json(nf.value("mean_column_nf", json(nullptr)));
    ml.nf_column_count = nf.value("column_count", 0);
    mm.layers.push_back(std::move(ml));
  }
  return mm;
}

}  // namespace xbarsim::harness
