#include "hasa/serialize.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace hasa {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json genotype_to_obj(const CellGenotype& g) {
  json nodes = json::array();
  for (const auto& node : g.nodes) {
    json edges = json::array();
    for (const auto& e : node)
      edges.push_back({{"src", e.src}, {"op", std::string(op_kind_name(e.op))}});
    nodes.push_back(edges);
  }
  return json{{"reduction", g.reduction}, {"nodes", nodes}};
}

CellGenotype genotype_from_obj(const json& j) {
  CellGenotype g;
  g.reduction = j.at("reduction").get<bool>();
  const auto& nodes = j.at("nodes");
  if (nodes.size() != kCellInternalNodes)
    throw IoError("genotype: expected " + std::to_string(kCellInternalNodes) + " nodes");
  for (int n = 0; n < kCellInternalNodes; ++n) {
    const auto& edges = nodes[n];
    if (edges.size() != kRetainedPerNode)
      throw IoError("genotype: node " + std::to_string(n) + " must retain exactly 2 edges");
    for (int e = 0; e < kRetainedPerNode; ++e) {
      const std::string name = edges[e].at("op").get<std::string>();
      const auto kind = op_kind_from_name(name);
      if (!kind) throw IoError("genotype: unknown operation name '" + name + "'");
      g.nodes[n][e] = GenotypeEdge{edges[e].at("src").get<int>(), *kind};
    }
  }
  try {
    validate_genotype(g);
  } catch (const ConfigError& e) {
    throw IoError(std::string("genotype: ") + e.what());
  }
  return g;
}

json canonical_genotype_file(const GenotypeFile& g) {
  json j;
  j["format_version"] = g.format_version;
  j["task"] = g.task;
  j["active_op_catalog"] = g.active_op_catalog;
  json cells;
  cells["normal"] = genotype_to_obj(g.normal);
  if (g.reduction) cells["reduction"] = genotype_to_obj(*g.reduction);
  j["cells"] = cells;
  j["provenance"] = {{"seed", g.provenance.seed},
                     {"config_hash", g.provenance.config_hash},
                     {"dropped_ops", g.provenance.dropped_ops}};
  return j;
}

}  // namespace

std::string genotype_to_json(const GenotypeFile& g) {
  json j = canonical_genotype_file(g);
  j["checksum"] = hex64(fnv1a64(j.dump()));
  return j.dump(2) + "\n";
}

GenotypeFile genotype_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw IoError(std::string("genotype: malformed JSON: ") + e.what());
  }
  GenotypeFile g;
  if (!j.contains("format_version") || !j.at("format_version").is_number_integer())
    throw IoError("genotype: missing format_version");
  g.format_version = j.at("format_version").get<int>();
  if (g.format_version != 1)
    throw IoError("genotype: unsupported format_version " + std::to_string(g.format_version));
  g.task = j.at("task").get<std::string>();
  g.active_op_catalog = j.at("active_op_catalog").get<std::vector<std::string>>();
  for (const auto& name : g.active_op_catalog)
    if (!op_kind_from_name(name))
      throw IoError("genotype: unknown operation name '" + name + "' in catalog");
  g.normal = genotype_from_obj(j.at("cells").at("normal"));
  if (j.at("cells").contains("reduction"))
    g.reduction = genotype_from_obj(j.at("cells").at("reduction"));
  g.provenance.seed = j.at("provenance").at("seed").get<uint64_t>();
  g.provenance.config_hash = j.at("provenance").at("config_hash").get<std::string>();
  g.provenance.dropped_ops =
      j.at("provenance").at("dropped_ops").get<std::vector<std::string>>();

  const std::string stored = j.at("checksum").get<std::string>();
  json canon = canonical_genotype_file(g);
  if (hex64(fnv1a64(canon.dump())) != stored)
    throw IoError("genotype: checksum mismatch (file corrupted)");
  return g;
}

void save_genotype(const GenotypeFile& g, const fs::path& path) {
  atomic_write(path, genotype_to_json(g));
}

GenotypeFile load_genotype(const fs::path& path) { return genotype_from_json(read_file(path)); }

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'H', 'A', 'S', 'A', 'C', 'K', 'P', '1'};

json meta_to_json(const CheckpointMeta& m) {
  json j;
  j["kind"] = m.kind;
  j["task"] = m.task;
  j["seed"] = m.seed;
  j["config_hash"] = m.config_hash;
  j["stage"] = m.stage;
  j["dropped_ops"] = m.dropped_ops;
  j["split_arch"] = m.split_arch;
  j["split_weight"] = m.split_weight;
  j["report"] = m.report_json;
  j["build"] = m.build_json;
  j["genotype"] = m.genotype_json;
  j["backbone_spec"] = m.backbone_spec_json;
  return j;
}

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta m;
  m.kind = j.at("kind").get<std::string>();
  m.task = j.at("task").get<std::string>();
  m.seed = j.at("seed").get<uint64_t>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.stage = j.at("stage").get<int>();
  m.dropped_ops = j.at("dropped_ops").get<std::vector<std::string>>();
  m.split_arch = j.at("split_arch").get<std::vector<int>>();
  m.split_weight = j.at("split_weight").get<std::vector<int>>();
  m.report_json = j.at("report").get<std::string>();
  m.build_json = j.at("build").get<std::string>();
  m.genotype_json = j.at("genotype").get<std::string>();
  m.backbone_spec_json = j.at("backbone_spec").get<std::string>();
  return m;
}

void append_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t read_u64(const std::string& in, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const fs::path& path, const CheckpointMeta& meta,
                     const NamedParams& params) {
  json header = meta_to_json(meta);
  json tensors = json::array();
  int64_t offset = 0;
  for (const auto& [name, p] : params) {
    tensors.push_back({{"name", name},
                       {"shape", {p->value.shape.n, p->value.shape.c, p->value.shape.h,
                                  p->value.shape.w}},
                       {"dtype", "f32"},
                       {"offset", offset}});
    offset += p->value.shape.numel();
  }
  header["tensors"] = tensors;
  const std::string htext = header.dump();

  std::string payload;
  payload.reserve(static_cast<size_t>(offset) * 4);
  for (const auto& [name, p] : params) {
    const char* bytes = reinterpret_cast<const char*>(p->value.data.data());
    payload.append(bytes, p->value.data.size() * sizeof(float));
  }

  std::string file(kMagic, sizeof(kMagic));
  append_u64(file, htext.size());
  file += htext;
  file += payload;
  uint64_t checksum = fnv1a64(htext.data(), htext.size());
  checksum = fnv1a64(payload.data(), payload.size(), checksum);
  append_u64(file, checksum);
  atomic_write(path, file);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  const std::string file = read_file(path);
  if (file.size() < sizeof(kMagic) + 16 || std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError("checkpoint: bad magic in " + path.string());
  const uint64_t hlen = read_u64(file, sizeof(kMagic));
  const size_t hstart = sizeof(kMagic) + 8;
  if (hstart + hlen + 8 > file.size()) throw IoError("checkpoint: truncated file");
  const std::string htext = file.substr(hstart, hlen);
  const std::string payload = file.substr(hstart + hlen, file.size() - hstart - hlen - 8);
  const uint64_t stored = read_u64(file, file.size() - 8);
  uint64_t checksum = fnv1a64(htext.data(), htext.size());
  checksum = fnv1a64(payload.data(), payload.size(), checksum);
  if (checksum != stored) throw IoError("checkpoint: checksum mismatch (file corrupted)");

  json header;
  try {
    header = json::parse(htext);
  } catch (const std::exception& e) {
    throw IoError(std::string("checkpoint: malformed header: ") + e.what());
  }
  LoadedCheckpoint out;
  out.meta = meta_from_json(header);
  for (const auto& t : header.at("tensors")) {
    const auto shape = t.at("shape").get<std::vector<int>>();
    if (shape.size() != 4) throw IoError("checkpoint: tensor rank must be 4");
    Tensor tensor(Shape4{shape[0], shape[1], shape[2], shape[3]});
    const int64_t offset = t.at("offset").get<int64_t>();
    if (static_cast<size_t>(offset + tensor.shape.numel()) * 4 > payload.size())
      throw IoError("checkpoint: tensor data out of range");
    std::memcpy(tensor.data.data(), payload.data() + offset * 4,
                tensor.data.size() * sizeof(float));
    out.tensors.emplace_back(t.at("name").get<std::string>(), std::move(tensor));
  }
  return out;
}

void restore_params(const LoadedCheckpoint& ck, const NamedParams& params) {
  std::map<std::string, const Tensor*> index;
  for (const auto& [name, t] : ck.tensors) index[name] = &t;
  for (const auto& [name, p] : params) {
    auto it = index.find(name);
    if (it == index.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
    if (!(it->second->shape == p->value.shape))
      throw IoError("checkpoint: shape mismatch for '" + name + "'");
    p->value.data = it->second->data;
  }
}

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  if (task != "classification" && task != "segmentation")
    throw ConfigError("task: expected classification|segmentation, got '" + task + "'");
  if (image_size < 16 || image_size % 8 != 0)
    throw ConfigError("image_size: must be a multiple of 8, at least 16");
  if (task == "classification" && (train_per_class < 1 || test_per_class < 1))
    throw ConfigError("train_per_class/test_per_class: must be >= 1");
  if (task == "segmentation" && (train_count < 1 || test_count < 1))
    throw ConfigError("train_count/test_count: must be >= 1");
  if (eval_cells != 0 && eval_cells < 2)
    throw ConfigError("eval_cells: must be 0 or >= 2");
  if (eval_channels < 2) throw ConfigError("eval_channels: must be >= 2");
  if (keep_stages < 1 || keep_stages > 5) throw ConfigError("keep_stages: must lie in [1,5]");
  if (!aggregation_mode_from_name(aggregation))
    throw ConfigError("aggregation: expected sequential|dense|aspp, got '" + aggregation + "'");
  if (train.epochs < 1) throw ConfigError("train.epochs: must be >= 1");
  if (train.batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  search.validate();
}

namespace {

template <typename T>
void read_field(const json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const std::exception&) {
    throw ConfigError(path + key + ": invalid value");
  }
}

void apply_preset(RunConfig& c) {
  if (c.preset.empty()) return;
  if (c.preset == "desk-class") {
    c.task = "classification";
    c.search = SearchConfig::desk_class();
  } else if (c.preset == "desk-seg") {
    c.task = "segmentation";
    c.search = SearchConfig::desk_seg();
    c.eval_cells = 3;  // per block
  } else if (c.preset == "paper-class") {
    c.task = "classification";
    c.search = SearchConfig::paper_class();
  } else if (c.preset == "paper-seg") {
    c.task = "segmentation";
    c.search = SearchConfig::paper_seg();
    c.eval_cells = 3;
  } else {
    throw ConfigError("preset: unknown preset '" + c.preset + "'");
  }
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig c;
  read_field(j, "", "preset", c.preset);
  apply_preset(c);
  read_field(j, "", "task", c.task);
  read_field(j, "", "seed", c.seed);
  read_field(j, "", "out_dir", c.out_dir);

  if (j.contains("data")) {
    const json& d = j.at("data");
    read_field(d, "data.", "image_size", c.image_size);
    read_field(d, "data.", "train_per_class", c.train_per_class);
    read_field(d, "data.", "test_per_class", c.test_per_class);
    read_field(d, "data.", "train_count", c.train_count);
    read_field(d, "data.", "test_count", c.test_count);
    read_field(d, "data.", "seed", c.data_seed);
  }
  if (j.contains("pretext")) {
    const json& p = j.at("pretext");
    read_field(p, "pretext.", "images", c.pretext_images);
    read_field(p, "pretext.", "epochs", c.pretext_epochs);
    read_field(p, "pretext.", "batch_size", c.pretext_batch);
    read_field(p, "pretext.", "lr", c.pretext_lr);
    read_field(p, "pretext.", "seed", c.pretext_seed);
  }
  if (j.contains("search")) {
    const json& s = j.at("search");
    c.search.task = c.task;
    read_field(s, "search.", "K", c.search.K);
    read_field(s, "search.", "initial_cells", c.search.initial_cells);
    read_field(s, "search.", "cells_added_per_stage", c.search.cells_added_per_stage);
    read_field(s, "search.", "epochs_per_stage", c.search.epochs_per_stage);
    read_field(s, "search.", "arch_split_fraction", c.search.arch_split_fraction);
    read_field(s, "search.", "weight_lr", c.search.weight_lr);
    read_field(s, "search.", "arch_lr", c.search.arch_lr);
    read_field(s, "search.", "batch_size", c.search.batch_size);
    read_field(s, "search.", "channels", c.search.channels);
    read_field(s, "search.", "ablation_scorer", c.search.ablation_scorer);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    read_field(e, "eval.", "cells", c.eval_cells);
    read_field(e, "eval.", "channels", c.eval_channels);
    read_field(e, "eval.", "keep_stages", c.keep_stages);
    read_field(e, "eval.", "aggregation", c.aggregation);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    read_field(t, "train.", "epochs", c.train.epochs);
    read_field(t, "train.", "batch_size", c.train.batch_size);
    read_field(t, "train.", "lr_start", c.train.lr_start);
    read_field(t, "train.", "lr_end", c.train.lr_end);
    read_field(t, "train.", "augment", c.train.augment);
    read_field(t, "train.", "rotation_degrees", c.train.aug.rotation_degrees);
    read_field(t, "train.", "hflip_prob", c.train.aug.hflip_prob);
  }
  c.search.task = c.task;
  c.search.n_classes = c.task == "segmentation" ? kNumSegClasses : kNumLesionClasses;
  c.search.seed = c.seed;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(read_file(path)); }

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["task"] = c.task;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["data"] = {{"image_size", c.image_size},
               {"train_per_class", c.train_per_class},
               {"test_per_class", c.test_per_class},
               {"train_count", c.train_count},
               {"test_count", c.test_count},
               {"seed", c.data_seed}};
  j["pretext"] = {{"images", c.pretext_images},
                  {"epochs", c.pretext_epochs},
                  {"batch_size", c.pretext_batch},
                  {"lr", c.pretext_lr},
                  {"seed", c.pretext_seed}};
  j["search"] = {{"K", c.search.K},
                 {"initial_cells", c.search.initial_cells},
                 {"cells_added_per_stage", c.search.cells_added_per_stage},
                 {"epochs_per_stage", c.search.epochs_per_stage},
                 {"arch_split_fraction", c.search.arch_split_fraction},
                 {"weight_lr", c.search.weight_lr},
                 {"arch_lr", c.search.arch_lr},
                 {"batch_size", c.search.batch_size},
                 {"channels", c.search.channels},
                 {"ablation_scorer", c.search.ablation_scorer}};
  j["eval"] = {{"cells", c.eval_cells},
               {"channels", c.eval_channels},
               {"keep_stages", c.keep_stages},
               {"aggregation", c.aggregation}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr_start", c.train.lr_start},
                {"lr_end", c.train.lr_end},
                {"augment", c.train.augment},
                {"rotation_degrees", c.train.aug.rotation_degrees},
                {"hflip_prob", c.train.aug.hflip_prob}};
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
  // the output location is not part of the run's identity
  RunConfig c = cfg;
  c.out_dir.clear();
  return hex64(fnv1a64(run_config_to_json(c)));
}

std::string search_report_to_json(const SearchReport& r) {
  json j;
  j["task"] = r.task;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["final_cell_count"] = r.final_cell_count;
  j["dropped_sequence"] = r.dropped_sequence;
  j["wall_time_sec"] = r.wall_time_sec;
  json stages = json::array();
  for (const auto& s : r.stages) {
    stages.push_back({{"stage", s.stage},
                      {"cell_count", s.cell_count},
                      {"active_ops", s.active_ops},
                      {"dropped", s.dropped},
                      {"train_loss", s.train_loss},
                      {"val_loss", s.val_loss}});
  }
  j["stages"] = stages;
  return j.dump(2) + "\n";
}

SearchReport search_report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw IoError(std::string("report: malformed JSON: ") + e.what());
  }
  SearchReport r;
  r.task = j.at("task").get<std::string>();
  r.seed = j.at("seed").get<uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.final_cell_count = j.at("final_cell_count").get<int>();
  r.dropped_sequence = j.at("dropped_sequence").get<std::vector<std::string>>();
  r.wall_time_sec = j.at("wall_time_sec").get<double>();
  for (const auto& s : j.at("stages")) {
    StageRecord rec;
    rec.stage = s.at("stage").get<int>();
    rec.cell_count = s.at("cell_count").get<int>();
    rec.active_ops = s.at("active_ops").get<std::vector<std::string>>();
    rec.dropped = s.at("dropped").get<std::string>();
    rec.train_loss = s.at("train_loss").get<std::vector<float>>();
    rec.val_loss = s.at("val_loss").get<std::vector<float>>();
    r.stages.push_back(std::move(rec));
  }
  return r;
}

// ---------------------------------------------------------------------------
// datasets on disk
// ---------------------------------------------------------------------------

namespace {

void write_raw_f32(const fs::path& path, const std::vector<float>& data) {
  std::string bytes(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  atomic_write(path, bytes);
}

std::vector<float> read_raw_f32(const fs::path& path, size_t count) {
  const std::string bytes = read_file(path);
  if (bytes.size() != count * sizeof(float))
    throw IoError("dataset: unexpected tensor size in " + path.string());
  std::vector<float> out(count);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::string sample_name(const char* prefix, size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%05zu.bin", prefix, i);
  return buf;
}

}  // namespace

void materialize_dataset(const ClassDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = 1;
  manifest["task"] = "classification";
  manifest["image_size"] = ds.image_size;
  manifest["n_classes"] = ds.n_classes;
  manifest["mean"] = ds.mean;
  manifest["stdev"] = ds.stdev;
  json samples = json::array();
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const std::string file = sample_name("img", i);
    write_raw_f32(dir / file, s.image.data);
    samples.push_back({{"file", file},
                       {"shape", {s.image.shape.n, s.image.shape.c, s.image.shape.h,
                                  s.image.shape.w}},
                       {"dtype", "f32"},
                       {"label", s.label},
                       {"subject", s.subject_id}});
  }
  manifest["samples"] = samples;
  atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

void materialize_dataset(const SegDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = 1;
  manifest["task"] = "segmentation";
  manifest["image_size"] = ds.image_size;
  manifest["mean"] = ds.mean;
  manifest["stdev"] = ds.stdev;
  json samples = json::array();
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const std::string file = sample_name("img", i);
    const std::string mfile = sample_name("mask", i);
    write_raw_f32(dir / file, s.image.data);
    atomic_write(dir / mfile,
                 std::string(reinterpret_cast<const char*>(s.mask.v.data()), s.mask.v.size()));
    samples.push_back({{"file", file},
                       {"shape", {s.image.shape.n, s.image.shape.c, s.image.shape.h,
                                  s.image.shape.w}},
                       {"dtype", "f32"},
                       {"mask", mfile},
                       {"subject", s.subject_id}});
  }
  manifest["samples"] = samples;
  atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

ClassDataset load_class_dataset(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const std::exception& e) {
    throw IoError(std::string("dataset: malformed manifest: ") + e.what());
  }
  if (manifest.at("task").get<std::string>() != "classification")
    throw IoError("dataset: manifest task is not classification");
  ClassDataset ds;
  ds.image_size = manifest.at("image_size").get<int>();
  ds.n_classes = manifest.at("n_classes").get<int>();
  ds.mean = manifest.at("mean").get<float>();
  ds.stdev = manifest.at("stdev").get<float>();
  for (const auto& s : manifest.at("samples")) {
    ClassSample sample;
    const auto shape = s.at("shape").get<std::vector<int>>();
    sample.image = Tensor::from(Shape4{shape[0], shape[1], shape[2], shape[3]},
                                read_raw_f32(dir / s.at("file").get<std::string>(),
                                             static_cast<size_t>(shape[0]) * shape[1] *
                                                 shape[2] * shape[3]));
    sample.label = s.at("label").get<int>();
    sample.subject_id = s.at("subject").get<int>();
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

SegDataset load_seg_dataset(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const std::exception& e) {
    throw IoError(std::string("dataset: malformed manifest: ") + e.what());
  }
  if (manifest.at("task").get<std::string>() != "segmentation")
    throw IoError("dataset: manifest task is not segmentation");
  SegDataset ds;
  ds.image_size = manifest.at("image_size").get<int>();
  ds.mean = manifest.at("mean").get<float>();
  ds.stdev = manifest.at("stdev").get<float>();
  for (const auto& s : manifest.at("samples")) {
    SegSample sample;
    const auto shape = s.at("shape").get<std::vector<int>>();
    sample.image = Tensor::from(Shape4{shape[0], shape[1], shape[2], shape[3]},
                                read_raw_f32(dir / s.at("file").get<std::string>(),
                                             static_cast<size_t>(shape[0]) * shape[1] *
                                                 shape[2] * shape[3]));
    const std::string bytes = read_file(dir / s.at("mask").get<std::string>());
    sample.mask = Mask(shape[2], shape[3]);
    if (bytes.size() != sample.mask.v.size())
      throw IoError("dataset: mask size mismatch");
    std::memcpy(sample.mask.v.data(), bytes.data(), bytes.size());
    sample.subject_id = s.at("subject").get<int>();
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

std::string metrics_csv(const std::string& model, uint64_t seed,
                        const std::vector<std::tuple<std::string, std::string, double>>& rows) {
  std::string out = "model,seed,metric,class,value\n";
  char buf[64];
  for (const auto& [metric, cls, value] : rows) {
    std::snprintf(buf, sizeof(buf), "%.9g", value);
    out += model + "," + std::to_string(seed) + "," + metric + "," + cls + "," + buf + "\n";
  }
  return out;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::string out;
  for (int g = 0; g < cm.n_classes; ++g) {
    for (int p = 0; p < cm.n_classes; ++p) {
      out += std::to_string(cm.at(g, p));
      out += (p + 1 == cm.n_classes) ? '\n' : ',';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// typed checkpoints
// ---------------------------------------------------------------------------

std::string backbone_spec_to_json(const BackboneSpec& spec) {
  json stages = json::array();
  for (const auto& s : spec.stages)
    stages.push_back({{"out_channels", s.out_channels},
                      {"downsample", s.downsample},
                      {"blocks", s.blocks}});
  json j{{"stages", stages},
         {"in_channels", spec.in_channels},
         {"frozen_through", spec.frozen_through},
         {"pretext_seed", spec.pretext_seed}};
  return j.dump();
}

BackboneSpec backbone_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw IoError(std::string("backbone spec: malformed JSON: ") + e.what());
  }
  BackboneSpec spec;
  spec.stages.clear();
  for (const auto& s : j.at("stages"))
    spec.stages.push_back({s.at("out_channels").get<int>(), s.at("downsample").get<int>(),
                           s.at("blocks").get<int>()});
  spec.in_channels = j.at("in_channels").get<int>();
  spec.frozen_through = j.at("frozen_through").get<int>();
  spec.pretext_seed = j.at("pretext_seed").get<uint64_t>();
  return spec;
}

void save_backbone(const fs::path& path, Backbone& backbone, uint64_t seed) {
  CheckpointMeta meta;
  meta.kind = "backbone";
  meta.seed = seed;
  meta.backbone_spec_json = backbone_spec_to_json(backbone.spec);
  std::vector<Parameter*> ps;
  backbone.collect(ps);
  NamedParams named;
  for (Parameter* p : ps) named.emplace_back(p->name, p);
  save_checkpoint(path, meta, named);
}

std::shared_ptr<Backbone> load_backbone(const fs::path& path) {
  LoadedCheckpoint ck = load_checkpoint(path);
  if (ck.meta.kind != "backbone") throw IoError("checkpoint kind is not 'backbone'");
  BackboneSpec spec = backbone_spec_from_json(ck.meta.backbone_spec_json);
  Rng rng(spec.pretext_seed);
  auto bb = std::make_shared<Backbone>(spec, rng);
  std::vector<Parameter*> ps;
  bb->collect(ps);
  NamedParams named;
  for (Parameter* p : ps) named.emplace_back(p->name, p);
  restore_params(ck, named);
  bb->freeze_through(spec.frozen_through);
  return bb;
}

namespace {

template <typename Search>
void save_search_impl(const fs::path& path, Search& search, const std::string& cfg_hash) {
  CheckpointMeta meta;
  meta.kind = "search";
  meta.task = search.cfg.task;
  meta.seed = search.cfg.seed;
  meta.config_hash = cfg_hash;
  meta.stage = search.stage();
  meta.dropped_ops = search.report().dropped_sequence;
  meta.split_arch = search.split().first;
  meta.split_weight = search.split().second;
  meta.report_json = search_report_to_json(search.report());
  meta.backbone_spec_json = backbone_spec_to_json(search.supernet().backbone->spec);
  save_checkpoint(path, meta, search.supernet().named_params());
}

template <typename Search>
void resume_search_impl(const fs::path& path, Search& search) {
  LoadedCheckpoint ck = load_checkpoint(path);
  if (ck.meta.kind != "search") throw IoError("checkpoint kind is not 'search'");
  if (ck.meta.task != search.cfg.task) throw IoError("checkpoint task mismatch");
  std::vector<OpKind> dropped;
  for (const auto& name : ck.meta.dropped_ops) {
    auto k = op_kind_from_name(name);
    if (!k) throw IoError("checkpoint: unknown dropped op '" + name + "'");
    dropped.push_back(*k);
  }
  search.apply_schedule(ck.meta.stage, dropped);
  restore_params(ck, search.supernet().named_params());
  search.report() = search_report_from_json(ck.meta.report_json);
}

}  // namespace

void save_search_state(const fs::path& path, ClassifierSearch& search,
                       const std::string& cfg_hash) {
  save_search_impl(path, search, cfg_hash);
}
void save_search_state(const fs::path& path, SegSearch& search, const std::string& cfg_hash) {
  save_search_impl(path, search, cfg_hash);
}
void resume_search_state(const fs::path& path, ClassifierSearch& search) {
  resume_search_impl(path, search);
}
void resume_search_state(const fs::path& path, SegSearch& search) {
  resume_search_impl(path, search);
}

std::string classifier_build_to_json(const ClassifierBuild& b) {
  json j{{"n_cells", b.n_cells},
         {"channels", b.channels},
         {"n_classes", b.n_classes},
         {"keep_stages", b.keep_stages},
         {"aggregation", std::string(aggregation_mode_name(b.aggregation))},
         {"seed", b.seed}};
  return j.dump();
}

ClassifierBuild classifier_build_from_json(const std::string& text) {
  json j = json::parse(text);
  ClassifierBuild b;
  b.n_cells = j.at("n_cells").get<int>();
  b.channels = j.at("channels").get<int>();
  b.n_classes = j.at("n_classes").get<int>();
  b.keep_stages = j.at("keep_stages").get<int>();
  b.aggregation = *aggregation_mode_from_name(j.at("aggregation").get<std::string>());
  b.seed = j.at("seed").get<uint64_t>();
  return b;
}

std::string seg_build_to_json(const SegBuild& b) {
  json j{{"cells_per_block", b.cells_per_block},
         {"channels", b.channels},
         {"n_classes", b.n_classes},
         {"tap_hi_stage", b.tap_hi_stage},
         {"tap_lo_stage", b.tap_lo_stage},
         {"aggregation", std::string(aggregation_mode_name(b.aggregation))},
         {"aspp_rates", b.aspp_rates},
         {"aspp_branch_channels", b.aspp_branch_channels},
         {"seed", b.seed}};
  return j.dump();
}

SegBuild seg_build_from_json(const std::string& text) {
  json j = json::parse(text);
  SegBuild b;
  b.cells_per_block = j.at("cells_per_block").get<int>();
  b.channels = j.at("channels").get<int>();
  b.n_classes = j.at("n_classes").get<int>();
  b.tap_hi_stage = j.at("tap_hi_stage").get<int>();
  b.tap_lo_stage = j.at("tap_lo_stage").get<int>();
  b.aggregation = *aggregation_mode_from_name(j.at("aggregation").get<std::string>());
  b.aspp_rates = j.at("aspp_rates").get<std::vector<int>>();
  b.aspp_branch_channels = j.at("aspp_branch_channels").get<int>();
  b.seed = j.at("seed").get<uint64_t>();
  return b;
}

namespace {

json model_genotypes_json(const std::optional<CellGenotype>& normal,
                          const std::optional<CellGenotype>& reduction) {
  json j;
  if (normal) j["normal"] = genotype_to_obj(*normal);
  if (reduction) j["reduction"] = genotype_to_obj(*reduction);
  return j;
}

}  // namespace

void save_classifier(const fs::path& path, ClassifierModel& model, uint64_t seed,
                     const std::string& cfg_hash) {
  CheckpointMeta meta;
  meta.kind = "model";
  meta.task = "classification";
  meta.seed = seed;
  meta.config_hash = cfg_hash;
  meta.build_json = classifier_build_to_json(model.build);
  meta.genotype_json =
      model_genotypes_json(model.genotype_normal, model.genotype_reduction).dump();
  meta.backbone_spec_json = backbone_spec_to_json(model.backbone->spec);
  save_checkpoint(path, meta, model.named_params());
}

std::unique_ptr<ClassifierModel> load_classifier(const fs::path& path) {
  LoadedCheckpoint ck = load_checkpoint(path);
  if (ck.meta.kind != "model" || ck.meta.task != "classification")
    throw IoError("checkpoint is not a classification model");
  BackboneSpec spec = backbone_spec_from_json(ck.meta.backbone_spec_json);
  Rng rng(spec.pretext_seed);
  auto bb = std::make_shared<Backbone>(spec, rng);
  ClassifierBuild build = classifier_build_from_json(ck.meta.build_json);
  json g = json::parse(ck.meta.genotype_json);
  std::optional<CellGenotype> normal, reduction;
  if (g.contains("normal")) normal = genotype_from_obj(g.at("normal"));
  if (g.contains("reduction")) reduction = genotype_from_obj(g.at("reduction"));
  auto model = std::make_unique<ClassifierModel>(bb, build, normal, reduction);
  restore_params(ck, model->named_params());
  bb->freeze_through(spec.frozen_through);
  return model;
}

void save_segmenter(const fs::path& path, SegModel& model, uint64_t seed,
                    const std::string& cfg_hash) {
  CheckpointMeta meta;
  meta.kind = "model";
  meta.task = "segmentation";
  meta.seed = seed;
  meta.config_hash = cfg_hash;
  meta.build_json = seg_build_to_json(model.build);
  meta.genotype_json = model_genotypes_json(model.genotype, std::nullopt).dump();
  meta.backbone_spec_json = backbone_spec_to_json(model.backbone->spec);
  save_checkpoint(path, meta, model.named_params());
}

std::unique_ptr<SegModel> load_segmenter(const fs::path& path) {
  LoadedCheckpoint ck = load_checkpoint(path);
  if (ck.meta.kind != "model" || ck.meta.task != "segmentation")
    throw IoError("checkpoint is not a segmentation model");
  BackboneSpec spec = backbone_spec_from_json(ck.meta.backbone_spec_json);
  Rng rng(spec.pretext_seed);
  auto bb = std::make_shared<Backbone>(spec, rng);
  SegBuild build = seg_build_from_json(ck.meta.build_json);
  json g = json::parse(ck.meta.genotype_json);
  CellGenotype genotype = genotype_from_obj(g.at("normal"));
  auto model = std::make_unique<SegModel>(bb, build, genotype);
  restore_params(ck, model->named_params());
  bb->freeze_through(spec.frozen_through);
  return model;
}

void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::string out((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return out;
}

}  // namespace hasa
