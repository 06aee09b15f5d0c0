#include "hasa/search.hpp"

#include <algorithm>
#include <chrono>
#include <map>

#include "hasa/losses.hpp"

namespace hasa {

std::vector<OpKind> SearchConfig::active_ops() const {
  std::vector<OpKind> ops(kFullCatalog.begin(), kFullCatalog.end());
  if (task == "segmentation")
    ops.erase(std::remove(ops.begin(), ops.end(), OpKind::max_pool_3x3), ops.end());
  return ops;
}

int SearchConfig::final_cell_count() const {
  const int blocks = task == "segmentation" ? 2 : 1;
  return blocks * initial_cells + K * cells_added_per_stage;
}

void SearchConfig::validate() const {
  if (task != "classification" && task != "segmentation")
    throw ConfigError("search.task: expected classification|segmentation, got '" + task + "'");
  if (K < 0) throw ConfigError("search.K: must be >= 0");
  if (initial_cells < (task == "segmentation" ? 1 : 2))
    throw ConfigError("search.initial_cells: too few cells");
  if (cells_added_per_stage < 1 && K > 0)
    throw ConfigError("search.cells_added_per_stage: must be >= 1");
  if (task == "segmentation" && K > 0 && cells_added_per_stage % 2 != 0)
    throw ConfigError("search.cells_added_per_stage: segmentation grows both blocks evenly");
  if (epochs_per_stage < 1) throw ConfigError("search.epochs_per_stage: must be >= 1");
  if (arch_split_fraction <= 0.0 || arch_split_fraction >= 1.0)
    throw ConfigError("search.arch_split_fraction: must lie in (0,1)");
  if (batch_size < 1) throw ConfigError("search.batch_size: must be >= 1");
  if (channels < 2) throw ConfigError("search.channels: must be >= 2");
  int non_none = 0;
  for (OpKind k : active_ops())
    if (k != OpKind::none) ++non_none;
  if (non_none - K < 2)
    throw ConfigError("search.K: dropping " + std::to_string(K) +
                      " ops would leave fewer than 2 non-none candidates");
}

SearchConfig SearchConfig::desk_class() {
  SearchConfig c;
  c.task = "classification";
  c.K = 2;
  c.initial_cells = 3;
  c.cells_added_per_stage = 2;
  c.epochs_per_stage = 5;
  c.weight_lr = 0.01f;
  c.arch_lr = 3e-4f;
  c.batch_size = 16;
  c.channels = 8;
  c.n_classes = kNumLesionClasses;
  return c;
}

SearchConfig SearchConfig::desk_seg() {
  SearchConfig c;
  c.task = "segmentation";
  c.K = 2;
  c.initial_cells = 1;
  c.cells_added_per_stage = 2;  // one per block
  c.epochs_per_stage = 5;
  c.weight_lr = 3e-3f;
  c.arch_lr = 3e-4f;
  c.batch_size = 8;
  c.channels = 8;
  c.n_classes = kNumSegClasses;
  return c;
}

SearchConfig SearchConfig::paper_class() {
  SearchConfig c = desk_class();
  c.initial_cells = 5;
  c.cells_added_per_stage = 2;
  c.K = 3;
  c.epochs_per_stage = 25;
  c.batch_size = 36;
  c.weight_lr = 0.025f;
  return c;
}

SearchConfig SearchConfig::paper_seg() {
  SearchConfig c = desk_seg();
  c.initial_cells = 1;
  c.cells_added_per_stage = 2;
  c.K = 2;
  c.epochs_per_stage = 25;
  c.batch_size = 8;
  c.weight_lr = 1e-4f;
  return c;
}

SplitIndices split_search_data(const std::vector<int>& labels, double fraction, uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0)
    throw ConfigError("split_search_data: fraction must lie in (0,1)");
  if (labels.empty()) throw ConfigError("split_search_data: empty dataset");
  std::map<int, std::vector<int>> per_class;
  for (size_t i = 0; i < labels.size(); ++i) per_class[labels[i]].push_back(static_cast<int>(i));

  SplitIndices out;
  Rng rng(seed);
  for (auto& [cls, idxs] : per_class) {
    rng.shuffle(idxs);
    const int take = static_cast<int>(std::lround(fraction * idxs.size()));
    for (size_t k = 0; k < idxs.size(); ++k)
      (static_cast<int>(k) < take ? out.first : out.second).push_back(idxs[k]);
  }
  std::sort(out.first.begin(), out.first.end());
  std::sort(out.second.begin(), out.second.end());
  if (out.first.empty() || out.second.empty())
    throw ConfigError("split_search_data: a partition came out empty");
  return out;
}

namespace {

// deterministic batch order for (seed, stage, epoch)
std::vector<std::vector<int>> epoch_batches(const std::vector<int>& indices, int batch_size,
                                            uint64_t seed, int stage, int epoch,
                                            const char* tag) {
  std::vector<int> order = indices;
  Rng rng(splitmix64(seed ^ fnv1a64(tag) ^ (static_cast<uint64_t>(stage) << 32) ^
                     static_cast<uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (size_t i = 0; i < order.size(); i += batch_size)
    batches.emplace_back(order.begin() + i,
                         order.begin() + std::min(order.size(), i + batch_size));
  return batches;
}

float mean_of(const std::vector<float>& v) {
  if (v.empty()) return 0.0f;
  double s = 0.0;
  for (float x : v) s += x;
  return static_cast<float>(s / v.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// ClassifierSearch
// ---------------------------------------------------------------------------

ClassifierSearch::ClassifierSearch(const SearchConfig& c, std::shared_ptr<Backbone> backbone,
                                   const ClassDataset& data)
    : cfg(c), backbone_(std::move(backbone)), data_(data) {
  cfg.validate();
  if (cfg.task != "classification") throw ConfigError("search.task: driver mismatch");
  net_ = std::make_unique<ClassifierSupernet>(backbone_, cfg.active_ops(), cfg.initial_cells,
                                              cfg.channels, cfg.n_classes, cfg.seed);
  std::vector<int> labels;
  for (const auto& s : data_.samples) labels.push_back(s.label);
  split_ = split_search_data(labels, cfg.arch_split_fraction, splitmix64(cfg.seed ^ 0x5eed));

  // frozen backbone + no augmentation during search: taps are reusable
  tap_cache_.reserve(data_.samples.size());
  for (const auto& s : data_.samples)
    tap_cache_.push_back(
        net_->backbone_tap(normalize_image(s.image, data_.mean, data_.stdev)));

  report_.task = cfg.task;
  report_.seed = cfg.seed;
  rebuild_optimizers();

  StageRecord rec;
  rec.stage = 0;
  rec.cell_count = net_->cell_count();
  for (OpKind k : net_->active_ops()) rec.active_ops.emplace_back(op_kind_name(k));
  report_.stages.push_back(std::move(rec));
}

void ClassifierSearch::rebuild_optimizers() {
  weight_opt_ = std::make_unique<Adam>(net_->weight_params(), cfg.weight_lr);
  arch_opt_ = std::make_unique<Adam>(net_->arch_params(), cfg.arch_lr);
}

Tensor ClassifierSearch::batch_taps(const std::vector<int>& idxs, std::vector<int>& labels_out) {
  const Shape4 s0 = tap_cache_[idxs[0]].shape;
  Tensor batch(Shape4{static_cast<int>(idxs.size()), s0.c, s0.h, s0.w});
  labels_out.clear();
  const size_t stride = static_cast<size_t>(s0.c) * s0.h * s0.w;
  for (size_t b = 0; b < idxs.size(); ++b) {
    std::copy(tap_cache_[idxs[b]].data.begin(), tap_cache_[idxs[b]].data.end(),
              batch.data.begin() + b * stride);
    labels_out.push_back(data_.samples[idxs[b]].label);
  }
  return batch;
}

BilevelLosses ClassifierSearch::bilevel_step(const std::vector<int>& weight_batch,
                                             const std::vector<int>& arch_batch) {
  BilevelLosses out;
  std::vector<int> labels;
  {
    // inner problem: network weights on the training split, alphas frozen
    Tensor x = batch_taps(weight_batch, labels);
    Tape tape;
    Tensor logits = net_->forward_from_tap(x, &tape);
    Tensor loss = cross_entropy_loss(logits, labels);
    tape.backward(loss);
    weight_opt_->step();
    out.train = loss.item();
  }
  {
    // outer problem: alphas on the validation split, weights frozen. A cell
    // type absent from the current layout leaves its alpha set unreachable;
    // watching it up front yields the zero gradient the contract promises.
    Tensor x = batch_taps(arch_batch, labels);
    Tape tape;
    for (Parameter* p : net_->arch_params()) tape.watch(*p);
    Tensor logits = net_->forward_from_tap(x, &tape);
    Tensor loss = cross_entropy_loss(logits, labels);
    tape.backward(loss);
    arch_opt_->step();
    out.val = loss.item();
  }
  return out;
}

void ClassifierSearch::train_stage() {
  StageRecord& rec = report_.stages.back();
  for (int epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
    auto wb = epoch_batches(split_.second, cfg.batch_size, cfg.seed, stage_, epoch, "w");
    auto ab = epoch_batches(split_.first, cfg.batch_size, cfg.seed, stage_, epoch, "a");
    std::vector<float> tl, vl;
    try {
      for (size_t i = 0; i < wb.size(); ++i) {
        BilevelLosses l = bilevel_step(wb[i], ab[i % ab.size()]);
        tl.push_back(l.train);
        vl.push_back(l.val);
      }
    } catch (const NumericError& e) {
      throw NumericError("search aborted at stage " + std::to_string(stage_) + " epoch " +
                         std::to_string(epoch) + ": " + e.what());
    }
    rec.train_loss.push_back(mean_of(tl));
    rec.val_loss.push_back(mean_of(vl));
  }
}

OpKind ClassifierSearch::weakest_op() {
  if (!cfg.ablation_scorer) {
    const auto scores = net_->op_scores();
    OpKind best = OpKind::none;
    double lowest = std::numeric_limits<double>::infinity();
    for (OpKind k : net_->active_ops()) {  // catalog order breaks ties
      if (k == OpKind::none) continue;
      const double s = scores.at(k);
      if (s < lowest) {
        lowest = s;
        best = k;
      }
    }
    return best;
  }
  // ablation scorer: mask one op everywhere and measure the validation loss
  // increase; the least-needed op is the one its removal hurts least
  auto eval_val = [&]() {
    std::vector<float> losses;
    auto batches = epoch_batches(split_.first, cfg.batch_size, cfg.seed, stage_, 9999, "abl");
    const size_t n = std::min<size_t>(4, batches.size());
    for (size_t i = 0; i < n; ++i) {
      std::vector<int> labels;
      Tensor x = batch_taps(batches[i], labels);
      losses.push_back(cross_entropy_loss(net_->forward_from_tap(x, nullptr), labels).item());
    }
    return mean_of(losses);
  };
  OpKind best = OpKind::none;
  double lowest = std::numeric_limits<double>::infinity();
  for (OpKind k : net_->active_ops()) {
    if (k == OpKind::none) continue;
    const int idx_n = net_->alphas_normal->index_of(k);
    const int idx_r = net_->alphas_reduce->index_of(k);
    std::vector<float> saved_n, saved_r;
    for (auto& p : net_->alphas_normal->edges) {
      saved_n.push_back(p.value.data[idx_n]);
      p.value.data[idx_n] = -1e9f;
    }
    for (auto& p : net_->alphas_reduce->edges) {
      saved_r.push_back(p.value.data[idx_r]);
      p.value.data[idx_r] = -1e9f;
    }
    const double increase = eval_val();
    size_t i = 0;
    for (auto& p : net_->alphas_normal->edges) p.value.data[idx_n] = saved_n[i++];
    i = 0;
    for (auto& p : net_->alphas_reduce->edges) p.value.data[idx_r] = saved_r[i++];
    if (increase < lowest) {
      lowest = increase;
      best = k;
    }
  }
  return best;
}

void ClassifierSearch::advance_stage() {
  if (done()) throw UsageError("advance_stage: schedule finished");
  const size_t active_before = net_->active_ops().size();
  const OpKind dropped = weakest_op();
  net_->grow(cfg.cells_added_per_stage);
  net_->drop(dropped);
  if (net_->active_ops().size() != active_before - 1)
    throw NumericError("progressive growing lost more than one op");
  ++stage_;
  rebuild_optimizers();  // parameter lists changed shape
  report_.dropped_sequence.emplace_back(op_kind_name(dropped));

  StageRecord rec;
  rec.stage = stage_;
  rec.cell_count = net_->cell_count();
  rec.dropped = op_kind_name(dropped);
  for (OpKind k : net_->active_ops()) rec.active_ops.emplace_back(op_kind_name(k));
  report_.stages.push_back(std::move(rec));
}

void ClassifierSearch::apply_schedule(int stage, const std::vector<OpKind>& dropped) {
  for (int k = 0; k < stage; ++k) {
    net_->grow(cfg.cells_added_per_stage);
    net_->drop(dropped[k]);
    ++stage_;
    rebuild_optimizers();
    report_.dropped_sequence.emplace_back(op_kind_name(dropped[k]));
    StageRecord rec;
    rec.stage = stage_;
    rec.cell_count = net_->cell_count();
    rec.dropped = op_kind_name(dropped[k]);
    for (OpKind kk : net_->active_ops()) rec.active_ops.emplace_back(op_kind_name(kk));
    report_.stages.push_back(std::move(rec));
  }
}

SearchResult ClassifierSearch::finish(double wall_time_sec) {
  SearchResult res;
  res.normal = net_->derive_normal();
  res.reduction = net_->derive_reduce();
  report_.final_cell_count = net_->cell_count();
  report_.wall_time_sec = wall_time_sec;
  res.report = report_;
  return res;
}

// ---------------------------------------------------------------------------
// SegSearch
// ---------------------------------------------------------------------------

SegSearch::SegSearch(const SearchConfig& c, std::shared_ptr<Backbone> backbone,
                     const SegDataset& data)
    : cfg(c), backbone_(std::move(backbone)), data_(data) {
  cfg.validate();
  if (cfg.task != "segmentation") throw ConfigError("search.task: driver mismatch");
  net_ = std::make_unique<SegSupernet>(backbone_, cfg.active_ops(), cfg.initial_cells,
                                       cfg.channels, cfg.n_classes, cfg.seed);
  std::vector<int> labels(data_.samples.size(), 0);  // unstratified
  split_ = split_search_data(labels, cfg.arch_split_fraction, splitmix64(cfg.seed ^ 0x5eed));

  tap_cache_.reserve(data_.samples.size());
  for (const auto& s : data_.samples)
    tap_cache_.push_back(
        net_->backbone_taps(normalize_image(s.image, data_.mean, data_.stdev)));

  report_.task = cfg.task;
  report_.seed = cfg.seed;
  rebuild_optimizers();

  StageRecord rec;
  rec.stage = 0;
  rec.cell_count = net_->cell_count();
  for (OpKind k : net_->active_ops()) rec.active_ops.emplace_back(op_kind_name(k));
  report_.stages.push_back(std::move(rec));
}

void SegSearch::rebuild_optimizers() {
  weight_opt_ = std::make_unique<Adam>(net_->weight_params(), cfg.weight_lr);
  arch_opt_ = std::make_unique<Adam>(net_->arch_params(), cfg.arch_lr);
}

namespace {

std::pair<Tensor, Tensor> assemble_taps(const std::vector<std::pair<Tensor, Tensor>>& cache,
                                        const std::vector<int>& idxs) {
  const Shape4 h0 = cache[idxs[0]].first.shape, l0 = cache[idxs[0]].second.shape;
  Tensor hi(Shape4{static_cast<int>(idxs.size()), h0.c, h0.h, h0.w});
  Tensor lo(Shape4{static_cast<int>(idxs.size()), l0.c, l0.h, l0.w});
  const size_t hs = static_cast<size_t>(h0.c) * h0.h * h0.w;
  const size_t ls = static_cast<size_t>(l0.c) * l0.h * l0.w;
  for (size_t b = 0; b < idxs.size(); ++b) {
    std::copy(cache[idxs[b]].first.data.begin(), cache[idxs[b]].first.data.end(),
              hi.data.begin() + b * hs);
    std::copy(cache[idxs[b]].second.data.begin(), cache[idxs[b]].second.data.end(),
              lo.data.begin() + b * ls);
  }
  return {std::move(hi), std::move(lo)};
}

}  // namespace

BilevelLosses SegSearch::bilevel_step(const std::vector<int>& weight_batch,
                                      const std::vector<int>& arch_batch) {
  BilevelLosses out;
  auto run = [&](const std::vector<int>& idxs, Adam& opt, bool arch) {
    auto [hi, lo] = assemble_taps(tap_cache_, idxs);
    std::vector<Mask> masks;
    for (int i : idxs) masks.push_back(data_.samples[i].mask);
    Tape tape;
    if (arch)
      for (Parameter* p : net_->arch_params()) tape.watch(*p);
    Tensor logits = net_->forward_from_taps(hi, lo, &tape);
    Tensor loss = dice_loss(softmax_channel(logits), masks);
    tape.backward(loss);
    opt.step();
    return loss.item();
  };
  out.train = run(weight_batch, *weight_opt_, false);
  out.val = run(arch_batch, *arch_opt_, true);
  return out;
}

void SegSearch::train_stage() {
  StageRecord& rec = report_.stages.back();
  for (int epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
    auto wb = epoch_batches(split_.second, cfg.batch_size, cfg.seed, stage_, epoch, "w");
    auto ab = epoch_batches(split_.first, cfg.batch_size, cfg.seed, stage_, epoch, "a");
    std::vector<float> tl, vl;
    try {
      for (size_t i = 0; i < wb.size(); ++i) {
        BilevelLosses l = bilevel_step(wb[i], ab[i % ab.size()]);
        tl.push_back(l.train);
        vl.push_back(l.val);
      }
    } catch (const NumericError& e) {
      throw NumericError("search aborted at stage " + std::to_string(stage_) + " epoch " +
                         std::to_string(epoch) + ": " + e.what());
    }
    rec.train_loss.push_back(mean_of(tl));
    rec.val_loss.push_back(mean_of(vl));
  }
}

OpKind SegSearch::weakest_op() {
  if (!cfg.ablation_scorer) {
    const auto scores = net_->op_scores();
    OpKind best = OpKind::none;
    double lowest = std::numeric_limits<double>::infinity();
    for (OpKind k : net_->active_ops()) {
      if (k == OpKind::none) continue;
      const double s = scores.at(k);
      if (s < lowest) {
        lowest = s;
        best = k;
      }
    }
    return best;
  }
  auto eval_val = [&]() {
    std::vector<float> losses;
    auto batches = epoch_batches(split_.first, cfg.batch_size, cfg.seed, stage_, 9999, "abl");
    const size_t n = std::min<size_t>(4, batches.size());
    for (size_t i = 0; i < n; ++i) {
      auto [hi, lo] = assemble_taps(tap_cache_, batches[i]);
      std::vector<Mask> masks;
      for (int j : batches[i]) masks.push_back(data_.samples[j].mask);
      losses.push_back(
          dice_loss(softmax_channel(net_->forward_from_taps(hi, lo, nullptr)), masks).item());
    }
    return mean_of(losses);
  };
  OpKind best = OpKind::none;
  double lowest = std::numeric_limits<double>::infinity();
  for (OpKind k : net_->active_ops()) {
    if (k == OpKind::none) continue;
    const int idx = net_->alphas->index_of(k);
    std::vector<float> saved;
    for (auto& p : net_->alphas->edges) {
      saved.push_back(p.value.data[idx]);
      p.value.data[idx] = -1e9f;
    }
    const double increase = eval_val();
    size_t i = 0;
    for (auto& p : net_->alphas->edges) p.value.data[idx] = saved[i++];
    if (increase < lowest) {
      lowest = increase;
      best = k;
    }
  }
  return best;
}

void SegSearch::advance_stage() {
  if (done()) throw UsageError("advance_stage: schedule finished");
  const size_t active_before = net_->active_ops().size();
  const OpKind dropped = weakest_op();
  net_->grow(cfg.cells_added_per_stage / 2);
  net_->drop(dropped);
  if (net_->active_ops().size() != active_before - 1)
    throw NumericError("progressive growing lost more than one op");
  ++stage_;
  rebuild_optimizers();
  report_.dropped_sequence.emplace_back(op_kind_name(dropped));

  StageRecord rec;
  rec.stage = stage_;
  rec.cell_count = net_->cell_count();
  rec.dropped = op_kind_name(dropped);
  for (OpKind k : net_->active_ops()) rec.active_ops.emplace_back(op_kind_name(k));
  report_.stages.push_back(std::move(rec));
}

void SegSearch::apply_schedule(int stage, const std::vector<OpKind>& dropped) {
  for (int k = 0; k < stage; ++k) {
    net_->grow(cfg.cells_added_per_stage / 2);
    net_->drop(dropped[k]);
    ++stage_;
    rebuild_optimizers();
    report_.dropped_sequence.emplace_back(op_kind_name(dropped[k]));
    StageRecord rec;
    rec.stage = stage_;
    rec.cell_count = net_->cell_count();
    rec.dropped = op_kind_name(dropped[k]);
    for (OpKind kk : net_->active_ops()) rec.active_ops.emplace_back(op_kind_name(kk));
    report_.stages.push_back(std::move(rec));
  }
}

SearchResult SegSearch::finish(double wall_time_sec) {
  SearchResult res;
  res.normal = net_->derive();
  report_.final_cell_count = net_->cell_count();
  report_.wall_time_sec = wall_time_sec;
  res.report = report_;
  return res;
}

// ---------------------------------------------------------------------------

SearchResult run_search(const SearchConfig& cfg, std::shared_ptr<Backbone> backbone,
                        const ClassDataset& data) {
  const auto t0 = std::chrono::steady_clock::now();
  ClassifierSearch search(cfg, std::move(backbone), data);
  search.train_stage();
  while (!search.done()) {
    search.advance_stage();
    search.train_stage();
  }
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return search.finish(dt);
}

SearchResult run_search(const SearchConfig& cfg, std::shared_ptr<Backbone> backbone,
                        const SegDataset& data) {
  const auto t0 = std::chrono::steady_clock::now();
  SegSearch search(cfg, std::move(backbone), data);
  search.train_stage();
  while (!search.done()) {
    search.advance_stage();
    search.train_stage();
  }
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return search.finish(dt);
}

}  // namespace hasa
