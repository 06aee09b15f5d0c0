#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hasa/backbone.hpp"
#include "hasa/cell.hpp"
#include "hasa/data.hpp"

namespace hasa {

enum class AggregationMode { sequential, dense, aspp };

std::string_view aggregation_mode_name(AggregationMode m);
std::optional<AggregationMode> aggregation_mode_from_name(std::string_view s);

// Per-part parameter counts and activation footprint at a reference input.
struct StageProfile {
  struct Row {
    std::string name;
    int64_t param_count = 0;
    int64_t activation_elems = 0;
  };
  std::vector<Row> rows;

  int64_t total_params() const;
  int64_t total_activation_bytes() const;  // elems * 4
};

// Records per-part activation sizes during a profiling forward pass.
struct Profiler {
  std::map<std::string, int64_t> activation_elems;
  void record(const std::string& part, const Tensor& t) {
    activation_elems[part] += t.shape.numel();
  }
};

using NamedParams = std::vector<std::pair<std::string, Parameter*>>;

// ---------------------------------------------------------------------------
// classification
// ---------------------------------------------------------------------------

struct ClassifierBuild {
  int n_cells = 7;
  int channels = 16;
  int n_classes = kNumLesionClasses;
  // backbone stages kept in front of the cells; 3 replaces the two deep
  // stages, 4 replaces only the deepest, 5 keeps the whole backbone
  // (reference model, requires n_cells == 0)
  int keep_stages = 3;
  AggregationMode aggregation = AggregationMode::sequential;
  uint64_t seed = 1;
};

// Which cells reduce: the two replaced-stage boundaries (indices 0 and
// n_cells/2), or just index 0 when a single stage is replaced.
std::vector<bool> classifier_reduction_flags(int n_cells, int n_reductions);

class ClassifierModel {
 public:
  ClassifierModel(std::shared_ptr<Backbone> backbone, const ClassifierBuild& build,
                  std::optional<CellGenotype> normal, std::optional<CellGenotype> reduction);

  Tensor forward(const Tensor& images, Tape* tape, Profiler* prof = nullptr);
  Tensor backbone_tap(const Tensor& images);
  Tensor forward_from_tap(const Tensor& tap, Tape* tape, Profiler* prof = nullptr);

  std::vector<Parameter*> trainable_params();
  NamedParams named_params();  // backbone (kept stages) + cells + reagg + head
  StageProfile profile(const Tensor& reference_input);

  ClassifierBuild build;
  std::optional<CellGenotype> genotype_normal, genotype_reduction;
  std::shared_ptr<Backbone> backbone;
  std::vector<std::unique_ptr<DiscreteCell>> cells;
  std::vector<bool> reduction_flags;
  std::vector<int> cell_channels;

  // dense re-aggregation: groups of consecutive normal cells, 1x1 merge
  // projections for local index >= 2
  struct DenseGroup {
    std::vector<int> cells;                 // global cell indices
    int entry = -1;                         // cell whose output enters the group (-1: tap)
    std::vector<std::unique_ptr<Conv2dLayer>> projections;  // local idx >= 2
  };
  std::vector<DenseGroup> dense_groups;

  std::unique_ptr<DenseLayer> head;
};

// ---------------------------------------------------------------------------
// segmentation
// ---------------------------------------------------------------------------

struct SegBuild {
  int cells_per_block = 3;
  int channels = 16;
  int n_classes = kNumSegClasses;
  int tap_hi_stage = 1;  // 4x downsample
  int tap_lo_stage = 2;  // 8x downsample
  AggregationMode aggregation = AggregationMode::sequential;  // sequential | aspp
  std::vector<int> aspp_rates = {1, 2, 4, 8};
  int aspp_branch_channels = 32;
  uint64_t seed = 1;
};

// Four parallel dilated convs over the fused taps plus a pooled global
// branch; projects to the low tap's channel width so the first decoder cell
// keeps its input adapters unchanged.
struct AsppHead {
  AsppHead(const std::string& name, int hi_ch, int lo_ch, const std::vector<int>& rates,
           int branch_ch, Rng& rng);

  Tensor forward(const Tensor& tap_hi, const Tensor& tap_lo, Tape* tape);
  void collect(std::vector<Parameter*>& out);

  std::vector<Conv2dLayer> branches;
  std::vector<NormLayer> branch_norms;
  Conv2dLayer global_conv;
  NormLayer global_norm;
  Conv2dLayer proj;
  NormLayer proj_norm;
};

class SegModel {
 public:
  SegModel(std::shared_ptr<Backbone> backbone, const SegBuild& build,
           const CellGenotype& genotype);

  Tensor forward(const Tensor& images, Tape* tape, Profiler* prof = nullptr);
  std::pair<Tensor, Tensor> backbone_taps(const Tensor& images);  // (hi, lo)
  Tensor forward_from_taps(const Tensor& tap_hi, const Tensor& tap_lo, Tape* tape,
                           Profiler* prof = nullptr);

  std::vector<Parameter*> trainable_params();
  NamedParams named_params();
  StageProfile profile(const Tensor& reference_input);

  SegBuild build;
  CellGenotype genotype;
  std::shared_ptr<Backbone> backbone;
  std::vector<std::unique_ptr<DiscreteCell>> cells;  // block1 then block2
  int block1_cells = 0;
  std::unique_ptr<ReluConvNorm> fuse;     // sequential: block2 entry projection
  std::unique_ptr<AsppHead> aspp;         // aspp mode
  std::unique_ptr<SepConvBlock> aspp_tail;
  std::unique_ptr<Conv2dLayer> head;
};

// ---------------------------------------------------------------------------
// search-time supernets
// ---------------------------------------------------------------------------

class ClassifierSupernet {
 public:
  ClassifierSupernet(std::shared_ptr<Backbone> backbone, std::vector<OpKind> active,
                     int initial_cells, int channels, int n_classes, uint64_t seed);

  Tensor forward(const Tensor& images, Tape* tape);
  Tensor backbone_tap(const Tensor& images);
  Tensor forward_from_tap(const Tensor& tap, Tape* tape);

  void grow(int n_new);  // appends normal cells initialized from the last cell
  void drop(OpKind k);
  std::map<OpKind, double> op_scores() const;
  CellGenotype derive_normal() const { return derive_genotype(*alphas_normal, false); }
  CellGenotype derive_reduce() const { return derive_genotype(*alphas_reduce, true); }

  std::vector<Parameter*> weight_params();  // cells + head
  std::vector<Parameter*> arch_params();    // both alpha sets
  NamedParams named_params();

  int cell_count() const { return static_cast<int>(cells.size()); }
  const std::vector<OpKind>& active_ops() const { return alphas_normal->active; }

  std::shared_ptr<Backbone> backbone;
  std::unique_ptr<AlphaSet> alphas_normal, alphas_reduce;
  std::vector<std::unique_ptr<MixedCell>> cells;
  std::vector<bool> reduction_flags;
  std::vector<int> cell_channels;
  std::unique_ptr<DenseLayer> head;
  int channels = 8;
  int n_classes = kNumLesionClasses;
  Rng grow_rng;
};

class SegSupernet {
 public:
  SegSupernet(std::shared_ptr<Backbone> backbone, std::vector<OpKind> active,
              int initial_cells_per_block, int channels, int n_classes, uint64_t seed);

  Tensor forward(const Tensor& images, Tape* tape);
  std::pair<Tensor, Tensor> backbone_taps(const Tensor& images);
  Tensor forward_from_taps(const Tensor& tap_hi, const Tensor& tap_lo, Tape* tape);

  void grow(int per_block);  // appends one cell per block `per_block` times
  void drop(OpKind k);
  std::map<OpKind, double> op_scores() const;
  CellGenotype derive() const { return derive_genotype(*alphas, false); }

  std::vector<Parameter*> weight_params();
  std::vector<Parameter*> arch_params();
  NamedParams named_params();

  int cell_count() const {
    return static_cast<int>(block1.size() + block2.size());
  }
  const std::vector<OpKind>& active_ops() const { return alphas->active; }

  std::shared_ptr<Backbone> backbone;
  std::unique_ptr<AlphaSet> alphas;
  std::vector<std::unique_ptr<MixedCell>> block1, block2;
  std::unique_ptr<ReluConvNorm> fuse;
  std::unique_ptr<Conv2dLayer> head;
  int channels = 8;
  int n_classes = kNumSegClasses;
  int tap_hi_stage = 1, tap_lo_stage = 2;
  Rng grow_rng;
};

// Positional-by-suffix parameter copy used when growing and rewriting:
// copies src values into dst wherever the name suffix (after the first
// component) and shape both match. Returns the copied names.
std::vector<std::string> copy_matching_params(const NamedParams& dst, const NamedParams& src);

}  // namespace hasa
