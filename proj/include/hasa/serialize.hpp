#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "hasa/search.hpp"
#include "hasa/train.hpp"

namespace hasa {

// ---------------------------------------------------------------------------
// genotype files (JSON, checksummed)
// ---------------------------------------------------------------------------

struct GenotypeFile {
  int format_version = 1;
  std::string task;
  std::vector<std::string> active_op_catalog;
  CellGenotype normal;
  std::optional<CellGenotype> reduction;
  struct Provenance {
    uint64_t seed = 0;
    std::string config_hash;
    std::vector<std::string> dropped_ops;
  } provenance;
};

std::string genotype_to_json(const GenotypeFile& g);  // canonical, newline-terminated
GenotypeFile genotype_from_json(const std::string& text);
void save_genotype(const GenotypeFile& g, const std::filesystem::path& path);
GenotypeFile load_genotype(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// checkpoints (JSON header + raw little-endian float32 payload, checksummed)
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  std::string kind;  // "backbone" | "search" | "model"
  std::string task;
  uint64_t seed = 0;
  std::string config_hash;
  int stage = -1;                          // search checkpoints
  std::vector<std::string> dropped_ops;    // search checkpoints
  std::vector<int> split_arch, split_weight;
  std::string report_json;                 // search checkpoints: report so far
  std::string build_json;                  // model checkpoints: builder settings
  std::string genotype_json;               // model checkpoints
  std::string backbone_spec_json;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                     const NamedParams& params);
struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
// Copies loaded tensors into the model's parameters by name; throws IoError
// when a parameter is missing or shaped differently.
void restore_params(const LoadedCheckpoint& ck, const NamedParams& params);

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  std::string task = "classification";
  std::string preset;  // desk-class | desk-seg | paper-class | paper-seg
  uint64_t seed = 1;
  std::string out_dir = "out";

  // data
  int image_size = 64;
  int train_per_class = 50, test_per_class = 20;  // classification
  int train_count = 200, test_count = 50;         // segmentation
  uint64_t data_seed = 7;

  // backbone pretext
  int pretext_images = 96, pretext_epochs = 2, pretext_batch = 16;
  float pretext_lr = 1e-3f;
  uint64_t pretext_seed = 1;

  SearchConfig search;

  // evaluation-stage model + training
  int eval_cells = 7;
  int eval_channels = 16;
  int keep_stages = 3;
  std::string aggregation = "sequential";
  TrainOpts train;

  void validate() const;
};

RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);  // canonical effective config
std::string config_hash(const RunConfig& cfg);

std::string search_report_to_json(const SearchReport& r);
SearchReport search_report_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// datasets on disk (raw tensors + JSON manifest)
// ---------------------------------------------------------------------------

void materialize_dataset(const ClassDataset& ds, const std::filesystem::path& dir);
void materialize_dataset(const SegDataset& ds, const std::filesystem::path& dir);
ClassDataset load_class_dataset(const std::filesystem::path& dir);
SegDataset load_seg_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

// rows: model,seed,metric,class,value
std::string metrics_csv(const std::string& model, uint64_t seed,
                        const std::vector<std::tuple<std::string, std::string, double>>& rows);
std::string confusion_csv(const ConfusionMatrix& cm);

void atomic_write(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// typed checkpoints
// ---------------------------------------------------------------------------

std::string backbone_spec_to_json(const BackboneSpec& spec);
BackboneSpec backbone_spec_from_json(const std::string& text);

void save_backbone(const std::filesystem::path& path, Backbone& backbone, uint64_t seed);
std::shared_ptr<Backbone> load_backbone(const std::filesystem::path& path);

// Search stage checkpoints: written after each stage's training; resuming
// replays the grow/drop schedule and restores parameters, reproducing the
// remaining stages bit for bit (optimizers start fresh at stage entry in
// both paths).
void save_search_state(const std::filesystem::path& path, ClassifierSearch& search,
                       const std::string& cfg_hash);
void save_search_state(const std::filesystem::path& path, SegSearch& search,
                       const std::string& cfg_hash);
void resume_search_state(const std::filesystem::path& path, ClassifierSearch& search);
void resume_search_state(const std::filesystem::path& path, SegSearch& search);

std::string classifier_build_to_json(const ClassifierBuild& b);
ClassifierBuild classifier_build_from_json(const std::string& text);
std::string seg_build_to_json(const SegBuild& b);
SegBuild seg_build_from_json(const std::string& text);

void save_classifier(const std::filesystem::path& path, ClassifierModel& model, uint64_t seed,
                     const std::string& cfg_hash);
std::unique_ptr<ClassifierModel> load_classifier(const std::filesystem::path& path);
void save_segmenter(const std::filesystem::path& path, SegModel& model, uint64_t seed,
                    const std::string& cfg_hash);
std::unique_ptr<SegModel> load_segmenter(const std::filesystem::path& path);

}  // namespace hasa
