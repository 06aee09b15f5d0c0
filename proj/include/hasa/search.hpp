#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hasa/adam.hpp"
#include "hasa/model.hpp"

namespace hasa {

struct SearchConfig {
  int K = 2;                      // growth stages after the initial one
  int initial_cells = 3;          // classification: chain length; segmentation: per block
  int cells_added_per_stage = 2;  // total cells appended per stage
  int epochs_per_stage = 5;
  double arch_split_fraction = 0.3;  // share of data used for architecture updates
  float weight_lr = 0.01f;
  float arch_lr = 3e-4f;
  int batch_size = 16;
  int channels = 8;
  std::string task = "classification";  // classification | segmentation
  int n_classes = kNumLesionClasses;
  bool ablation_scorer = false;  // score ops by validation-loss ablation instead
                                 // of mean architecture weight
  uint64_t seed = 1;

  std::vector<OpKind> active_ops() const;  // catalog minus pooling for segmentation
  int final_cell_count() const;
  void validate() const;  // throws ConfigError with a field-path message

  static SearchConfig desk_class();
  static SearchConfig desk_seg();
  static SearchConfig paper_class();  // 5 cells + 2/stage, K=3, 25 epochs, batch 36
  static SearchConfig paper_seg();    // 1 cell/block + 1/block/stage, K=2
};

struct StageRecord {
  int stage = 0;
  int cell_count = 0;
  std::vector<std::string> active_ops;
  std::string dropped;  // op removed on entering this stage ("" for stage 0)
  std::vector<float> train_loss, val_loss;  // per epoch
};

struct SearchReport {
  std::string task;
  uint64_t seed = 0;
  std::string config_hash;
  std::vector<StageRecord> stages;
  std::vector<std::string> dropped_sequence;
  int final_cell_count = 0;
  double wall_time_sec = 0.0;
};

struct SearchResult {
  CellGenotype normal;
  std::optional<CellGenotype> reduction;
  SearchReport report;
};

// Sample-level stratified split: `fraction` of each class goes to the first
// (architecture) set, the rest to the second (weight) set. Deterministic in
// the seed; disjoint and exhaustive.
SplitIndices split_search_data(const std::vector<int>& labels, double fraction, uint64_t seed);

// One first-order alternation: network weights step on the weight batch with
// frozen alphas, then alphas step on the architecture batch with frozen
// weights. Returns (train loss, validation loss).
struct BilevelLosses {
  float train = 0, val = 0;
};

// Stage-stepped classification search; exposes state for checkpoint/resume.
class ClassifierSearch {
 public:
  ClassifierSearch(const SearchConfig& cfg, std::shared_ptr<Backbone> backbone,
                   const ClassDataset& data);

  void train_stage();    // epochs_per_stage epochs at the current stage
  void advance_stage();  // grow cells, drop the weakest op
  bool done() const { return stage_ >= cfg.K; }
  int stage() const { return stage_; }
  SearchResult finish(double wall_time_sec);

  // replays grow/drop bookkeeping without training (checkpoint resume)
  void apply_schedule(int stage, const std::vector<OpKind>& dropped);

  ClassifierSupernet& supernet() { return *net_; }
  SearchReport& report() { return report_; }
  const SplitIndices& split() const { return split_; }

  SearchConfig cfg;

 private:
  BilevelLosses bilevel_step(const std::vector<int>& weight_batch,
                             const std::vector<int>& arch_batch);
  OpKind weakest_op();
  void rebuild_optimizers();
  Tensor batch_taps(const std::vector<int>& idxs, std::vector<int>& labels_out);

  std::shared_ptr<Backbone> backbone_;
  const ClassDataset& data_;
  std::unique_ptr<ClassifierSupernet> net_;
  std::unique_ptr<Adam> weight_opt_, arch_opt_;
  SplitIndices split_;
  std::vector<Tensor> tap_cache_;
  SearchReport report_;
  int stage_ = 0;
};

class SegSearch {
 public:
  SegSearch(const SearchConfig& cfg, std::shared_ptr<Backbone> backbone, const SegDataset& data);

  void train_stage();
  void advance_stage();
  bool done() const { return stage_ >= cfg.K; }
  int stage() const { return stage_; }
  SearchResult finish(double wall_time_sec);
  void apply_schedule(int stage, const std::vector<OpKind>& dropped);

  SegSupernet& supernet() { return *net_; }
  SearchReport& report() { return report_; }
  const SplitIndices& split() const { return split_; }

  SearchConfig cfg;

 private:
  BilevelLosses bilevel_step(const std::vector<int>& weight_batch,
                             const std::vector<int>& arch_batch);
  OpKind weakest_op();
  void rebuild_optimizers();

  std::shared_ptr<Backbone> backbone_;
  const SegDataset& data_;
  std::unique_ptr<SegSupernet> net_;
  std::unique_ptr<Adam> weight_opt_, arch_opt_;
  SplitIndices split_;
  std::vector<std::pair<Tensor, Tensor>> tap_cache_;
  SearchReport report_;
  int stage_ = 0;
};

// Convenience wrappers: full search, start to genotype.
SearchResult run_search(const SearchConfig& cfg, std::shared_ptr<Backbone> backbone,
                        const ClassDataset& data);
SearchResult run_search(const SearchConfig& cfg, std::shared_ptr<Backbone> backbone,
                        const SegDataset& data);

}  // namespace hasa
