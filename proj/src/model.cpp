#include "hasa/model.hpp"

#include <algorithm>

namespace hasa {

std::string_view aggregation_mode_name(AggregationMode m) {
  switch (m) {
    case AggregationMode::sequential: return "sequential";
    case AggregationMode::dense: return "dense";
    case AggregationMode::aspp: return "aspp";
  }
  throw ConfigError("unknown aggregation mode");
}

std::optional<AggregationMode> aggregation_mode_from_name(std::string_view s) {
  for (AggregationMode m :
       {AggregationMode::sequential, AggregationMode::dense, AggregationMode::aspp})
    if (aggregation_mode_name(m) == s) return m;
  return std::nullopt;
}

int64_t StageProfile::total_params() const {
  int64_t t = 0;
  for (const Row& r : rows) t += r.param_count;
  return t;
}

int64_t StageProfile::total_activation_bytes() const {
  int64_t t = 0;
  for (const Row& r : rows) t += r.activation_elems * 4;
  return t;
}

std::vector<std::string> copy_matching_params(const NamedParams& dst, const NamedParams& src) {
  std::map<std::string, Parameter*> index;
  for (const auto& [name, p] : src) index[name] = p;
  std::vector<std::string> copied;
  for (const auto& [name, p] : dst) {
    auto it = index.find(name);
    if (it == index.end()) continue;
    if (!(it->second->value.shape == p->value.shape)) continue;
    p->value.data = it->second->value.data;
    copied.push_back(name);
  }
  return copied;
}

namespace {

NamedParams with_names(const std::vector<Parameter*>& ps) {
  NamedParams out;
  out.reserve(ps.size());
  for (Parameter* p : ps) out.emplace_back(p->name, p);
  return out;
}

// strips the leading "<head>.<index>." so cells with different indices can
// exchange weights
NamedParams with_relative_names(const std::vector<Parameter*>& ps, const std::string& prefix) {
  NamedParams out;
  for (Parameter* p : ps) {
    if (p->name.rfind(prefix, 0) != 0)
      throw UsageError("parameter '" + p->name + "' lacks prefix '" + prefix + "'");
    out.emplace_back(p->name.substr(prefix.size()), p);
  }
  return out;
}

}  // namespace

std::vector<bool> classifier_reduction_flags(int n_cells, int n_reductions) {
  std::vector<bool> flags(n_cells, false);
  if (n_reductions >= 1 && n_cells >= 1) flags[0] = true;
  if (n_reductions >= 2 && n_cells >= 2) flags[std::max(1, n_cells / 2)] = true;
  return flags;
}

// ---------------------------------------------------------------------------
// ClassifierModel
// ---------------------------------------------------------------------------

ClassifierModel::ClassifierModel(std::shared_ptr<Backbone> bb, const ClassifierBuild& b,
                                 std::optional<CellGenotype> normal,
                                 std::optional<CellGenotype> reduction)
    : build(b),
      genotype_normal(std::move(normal)),
      genotype_reduction(std::move(reduction)),
      backbone(std::move(bb)) {
  if (build.keep_stages < 1 || build.keep_stages > backbone->n_stages())
    throw ConfigError("classifier: keep_stages out of range");
  const int n_reductions =
      build.keep_stages >= backbone->n_stages() ? 0 : backbone->n_stages() - build.keep_stages;
  if (build.n_cells == 0) {
    if (build.keep_stages != backbone->n_stages())
      throw ConfigError("classifier: zero cells requires the full backbone");
  } else {
    if (build.n_cells < 2) throw ConfigError("classifier: need at least 2 cells");
    if (!genotype_normal) throw ConfigError("classifier: missing normal genotype");
    if (n_reductions > 0 && !genotype_reduction)
      throw ConfigError("classifier: missing reduction genotype");
  }
  if (build.aggregation == AggregationMode::aspp)
    throw ConfigError("classifier: aspp aggregation applies to segmentation");

  Rng rng(build.seed);
  reduction_flags = classifier_reduction_flags(build.n_cells, n_reductions);

  const int tap_ch = backbone->stage_channels(build.keep_stages - 1);
  int chan = build.channels;
  int c_pp = tap_ch, c_p = tap_ch;
  bool prev_red = false;
  int reductions_seen = 0;
  for (int i = 0; i < build.n_cells; ++i) {
    const bool red = reduction_flags[i];
    if (red && reductions_seen >= 1) chan *= 2;
    if (red) ++reductions_seen;
    CellDims dims{c_pp, c_p, chan, red, prev_red};
    const CellGenotype& g = red ? *genotype_reduction : *genotype_normal;
    Rng cell_rng = rng.derive(static_cast<uint64_t>(i) + 1000);
    cells.push_back(std::make_unique<DiscreteCell>(g, dims, "cells." + std::to_string(i),
                                                   cell_rng));
    cell_channels.push_back(chan);
    c_pp = c_p;
    c_p = 4 * chan;
    prev_red = red;
  }

  Rng head_rng = rng.derive("head");
  const int head_in = build.n_cells > 0 ? 4 * chan : tap_ch;
  head = std::make_unique<DenseLayer>("head", head_in, build.n_classes, head_rng);

  if (build.aggregation == AggregationMode::dense && build.n_cells > 0) {
    Rng proj_rng = rng.derive("reagg");
    int i = 0;
    while (i < build.n_cells) {
      if (reduction_flags[i]) {
        ++i;
        continue;
      }
      DenseGroup group;
      group.entry = i - 1;  // -1 means the backbone tap
      while (i < build.n_cells && !reduction_flags[i]) {
        group.cells.push_back(i);
        ++i;
      }
      const int gchan = 4 * cell_channels[group.cells.front()];
      const int entry_ch = group.entry >= 0 ? 4 * cell_channels[group.entry] : tap_ch;
      for (size_t c = 0; c < group.cells.size(); ++c) {
        if (c < 2) continue;
        const int in_ch = entry_ch + static_cast<int>(c) * gchan;
        auto proj = std::make_unique<Conv2dLayer>(
            "reagg.g" + std::to_string(dense_groups.size()) + ".proj" + std::to_string(c),
            in_ch, gchan, 1, ConvOpts{1, 0, 1, 1}, false, proj_rng);
        // identity initialization: select the slice sequential mode would
        // have used as input0 (the output two cells back)
        std::fill(proj->weight.value.data.begin(), proj->weight.value.data.end(), 0.0f);
        const int offset = entry_ch + static_cast<int>(c - 2) * gchan;
        for (int oc = 0; oc < gchan; ++oc)
          proj->weight.value.at(oc, offset + oc, 0, 0) = 1.0f;
        group.projections.push_back(std::move(proj));
      }
      dense_groups.push_back(std::move(group));
    }
  }
}

Tensor ClassifierModel::backbone_tap(const Tensor& images) {
  return backbone->forward_to(images, build.keep_stages - 1, nullptr);
}

Tensor ClassifierModel::forward(const Tensor& images, Tape* tape, Profiler* prof) {
  Tensor tap = backbone->forward_to(images, build.keep_stages - 1, nullptr);
  return forward_from_tap(tap, tape, prof);
}

Tensor ClassifierModel::forward_from_tap(const Tensor& tap, Tape* tape, Profiler* prof) {
  std::vector<Tensor> outs;
  outs.reserve(cells.size());

  // dense groups: cell index -> (group, local index)
  std::map<int, std::pair<int, int>> dense_pos;
  for (size_t g = 0; g < dense_groups.size(); ++g)
    for (size_t c = 0; c < dense_groups[g].cells.size(); ++c)
      dense_pos[dense_groups[g].cells[c]] = {static_cast<int>(g), static_cast<int>(c)};

  for (size_t i = 0; i < cells.size(); ++i) {
    Tensor in0 = i >= 2 ? outs[i - 2] : tap;
    const Tensor& in1 = i >= 1 ? outs[i - 1] : tap;
    auto pos = dense_pos.find(static_cast<int>(i));
    if (pos != dense_pos.end()) {
      const auto [g, c] = pos->second;
      DenseGroup& group = dense_groups[g];
      if (c >= 2) {
        std::vector<Tensor> srcs;
        srcs.push_back(group.entry >= 0 ? outs[group.entry] : tap);
        for (int k = 0; k < c; ++k) srcs.push_back(outs[group.cells[k]]);
        in0 = group.projections[c - 2]->forward(concat_channels(srcs), tape);
      }
    }
    outs.push_back(cells[i]->forward(in0, in1, tape));
    if (prof) prof->record("cells." + std::to_string(i), outs.back());
  }

  Tensor feats = cells.empty() ? tap : outs.back();
  Tensor pooled = pool2d(feats, PoolKind::global_avg, 0, 0, 0);
  Tensor logits = head->forward(pooled, tape);
  if (prof) prof->record("head", logits);
  return logits;
}

std::vector<Parameter*> ClassifierModel::trainable_params() {
  std::vector<Parameter*> ps;
  for (auto& c : cells) c->collect(ps);
  for (auto& g : dense_groups)
    for (auto& p : g.projections) p->collect(ps);
  head->collect(ps);
  return ps;
}

NamedParams ClassifierModel::named_params() {
  std::vector<Parameter*> ps;
  backbone->collect_through(build.keep_stages - 1, ps);
  for (auto& c : cells) c->collect(ps);
  for (auto& g : dense_groups)
    for (auto& p : g.projections) p->collect(ps);
  head->collect(ps);
  return with_names(ps);
}

StageProfile ClassifierModel::profile(const Tensor& reference_input) {
  StageProfile out;
  std::vector<Tensor> stage_outs =
      backbone->forward_stages(reference_input, build.keep_stages - 1, nullptr);
  for (int s = 0; s < build.keep_stages; ++s) {
    StageProfile::Row row;
    row.name = "backbone.s" + std::to_string(s);
    std::vector<Parameter*> ps;
    backbone->collect_through(s, ps);
    row.param_count = count_params(ps);
    if (s > 0) {
      std::vector<Parameter*> prev;
      backbone->collect_through(s - 1, prev);
      row.param_count -= count_params(prev);
    }
    row.activation_elems = stage_outs[s].shape.numel();
    out.rows.push_back(std::move(row));
  }

  Profiler prof;
  forward_from_tap(stage_outs.back(), nullptr, &prof);
  for (size_t i = 0; i < cells.size(); ++i) {
    StageProfile::Row row;
    row.name = "cells." + std::to_string(i);
    std::vector<Parameter*> ps;
    cells[i]->collect(ps);
    row.param_count = count_params(ps);
    row.activation_elems = prof.activation_elems[row.name];
    out.rows.push_back(std::move(row));
  }
  if (!dense_groups.empty()) {
    StageProfile::Row row;
    row.name = "reagg";
    std::vector<Parameter*> ps;
    for (auto& g : dense_groups)
      for (auto& p : g.projections) p->collect(ps);
    row.param_count = count_params(ps);
    out.rows.push_back(std::move(row));
  }
  StageProfile::Row hrow;
  hrow.name = "head";
  std::vector<Parameter*> hp;
  head->collect(hp);
  hrow.param_count = count_params(hp);
  hrow.activation_elems = prof.activation_elems["head"];
  out.rows.push_back(std::move(hrow));
  return out;
}

// ---------------------------------------------------------------------------
// AsppHead
// ---------------------------------------------------------------------------

AsppHead::AsppHead(const std::string& name, int hi_ch, int lo_ch, const std::vector<int>& rates,
                   int branch_ch, Rng& rng)
    : global_conv(name + ".global", lo_ch, branch_ch, 1, ConvOpts{1, 0, 1, 1}, false, rng),
      global_norm(name + ".global_norm", branch_ch),
      proj(name + ".proj", branch_ch * (static_cast<int>(rates.size()) + 1), lo_ch, 1,
           ConvOpts{1, 0, 1, 1}, false, rng),
      proj_norm(name + ".proj_norm", lo_ch) {
  if (rates.empty()) throw ConfigError("aspp: need at least one rate");
  for (size_t i = 0; i < rates.size(); ++i) {
    branches.emplace_back(name + ".branch" + std::to_string(i), hi_ch + lo_ch, branch_ch, 3,
                          ConvOpts{1, rates[i], rates[i], 1}, false, rng);
    branch_norms.emplace_back(name + ".branch" + std::to_string(i) + "_norm", branch_ch);
  }
}

Tensor AsppHead::forward(const Tensor& tap_hi, const Tensor& tap_lo, Tape* tape) {
  if (tap_hi.shape.h != 2 * tap_lo.shape.h || tap_hi.shape.w != 2 * tap_lo.shape.w)
    throw DimensionError("aspp: high-res tap must be exactly twice the low-res tap, got " +
                         to_string(tap_hi.shape) + " vs " + to_string(tap_lo.shape));
  Tensor up = bilinear_upsample(tap_lo, 2);
  Tensor cat = concat_channels({tap_hi, up});
  std::vector<Tensor> parts;
  for (size_t i = 0; i < branches.size(); ++i)
    parts.push_back(relu(branch_norms[i].forward(branches[i].forward(cat, tape), tape)));
  Tensor pooled = pool2d(tap_lo, PoolKind::avg, 3, 1, 1);
  Tensor g = bilinear_upsample(
      relu(global_norm.forward(global_conv.forward(pooled, tape), tape)), 2);
  parts.push_back(std::move(g));
  return relu(proj_norm.forward(proj.forward(concat_channels(parts), tape), tape));
}

void AsppHead::collect(std::vector<Parameter*>& out) {
  for (size_t i = 0; i < branches.size(); ++i) {
    branches[i].collect(out);
    branch_norms[i].collect(out);
  }
  global_conv.collect(out);
  global_norm.collect(out);
  proj.collect(out);
  proj_norm.collect(out);
}

// ---------------------------------------------------------------------------
// SegModel
// ---------------------------------------------------------------------------

SegModel::SegModel(std::shared_ptr<Backbone> bb, const SegBuild& b, const CellGenotype& g)
    : build(b), genotype(g), backbone(std::move(bb)) {
  if (build.cells_per_block < 1) throw ConfigError("segmenter: need cells in each block");
  if (build.aggregation == AggregationMode::dense)
    throw ConfigError("segmenter: dense aggregation applies to classification");
  if (build.aggregation == AggregationMode::aspp) {
    if (build.cells_per_block < 2)
      throw ConfigError("segmenter: aspp rewrite needs at least 2 cells per block");
    for (size_t i = 1; i < build.aspp_rates.size(); ++i)
      if (build.aspp_rates[i] <= build.aspp_rates[i - 1])
        throw ConfigError("segmenter: aspp rates must be strictly increasing");
  }
  if (genotype.reduction) throw ConfigError("segmenter: decoder cells are normal cells");

  Rng rng(build.seed);
  const int hi_ch = backbone->stage_channels(build.tap_hi_stage);
  const int lo_ch = backbone->stage_channels(build.tap_lo_stage);
  const int c = build.channels;
  const int m = build.cells_per_block;
  block1_cells = m;

  auto add_cell = [&](int idx, int c_pp, int c_p) {
    CellDims dims{c_pp, c_p, c, false, false};
    Rng cell_rng = rng.derive(static_cast<uint64_t>(idx) + 2000);
    cells.push_back(std::make_unique<DiscreteCell>(genotype, dims,
                                                   "cells." + std::to_string(idx), cell_rng));
  };
  // block1 chain entered by the low-res tap
  for (int k = 0; k < m; ++k)
    add_cell(k, k >= 2 ? 4 * c : lo_ch, k >= 1 ? 4 * c : lo_ch);
  // block2 chain entered by the fused map (4c wide either way)
  for (int k = 0; k < m; ++k)
    add_cell(m + k, k >= 2 ? 4 * c : 4 * c, k >= 1 ? 4 * c : 4 * c);

  if (build.aggregation == AggregationMode::aspp) {
    Rng aspp_rng = rng.derive("aspp");
    aspp = std::make_unique<AsppHead>("aspp", hi_ch, lo_ch, build.aspp_rates,
                                      build.aspp_branch_channels, aspp_rng);
    aspp_tail = std::make_unique<SepConvBlock>("aspp.tail", 4 * c, 4 * c, 3, 1, aspp_rng);
  } else {
    Rng fuse_rng = rng.derive("fuse");
    fuse = std::make_unique<ReluConvNorm>("fuse", 4 * c + hi_ch, 4 * c, fuse_rng);
  }
  Rng head_rng = rng.derive("head");
  head = std::make_unique<Conv2dLayer>("head", 4 * c, build.n_classes, 1,
                                       ConvOpts{1, 0, 1, 1}, true, head_rng);
}

std::pair<Tensor, Tensor> SegModel::backbone_taps(const Tensor& images) {
  auto stages = backbone->forward_stages(images, build.tap_lo_stage, nullptr);
  return {stages[build.tap_hi_stage], stages[build.tap_lo_stage]};
}

Tensor SegModel::forward(const Tensor& images, Tape* tape, Profiler* prof) {
  auto [hi, lo] = backbone_taps(images);
  return forward_from_taps(hi, lo, tape, prof);
}

Tensor SegModel::forward_from_taps(const Tensor& tap_hi, const Tensor& tap_lo, Tape* tape,
                                   Profiler* prof) {
  const int m = block1_cells;
  std::vector<Tensor> outs;
  outs.reserve(cells.size());

  Tensor logits4;
  if (build.aggregation == AggregationMode::aspp) {
    Tensor fused = aspp->forward(tap_hi, tap_lo, tape);
    if (prof) prof->record("aspp", fused);
    for (size_t i = 0; i < cells.size(); ++i) {
      const Tensor& in0 = i >= 2 ? outs[i - 2] : fused;
      const Tensor& in1 = i >= 1 ? outs[i - 1] : fused;
      outs.push_back(cells[i]->forward(in0, in1, tape));
      if (prof) prof->record("cells." + std::to_string(i), outs.back());
    }
    Tensor tail = aspp_tail->forward(outs.back(), tape);
    if (prof) prof->record("aspp.tail", tail);
    logits4 = head->forward(tail, tape);
  } else {
    for (int k = 0; k < m; ++k) {
      const Tensor& in0 = k >= 2 ? outs[k - 2] : tap_lo;
      const Tensor& in1 = k >= 1 ? outs[k - 1] : tap_lo;
      outs.push_back(cells[k]->forward(in0, in1, tape));
      if (prof) prof->record("cells." + std::to_string(k), outs.back());
    }
    Tensor up = bilinear_upsample(outs[m - 1], 2);
    Tensor fused = fuse->forward(concat_channels({up, tap_hi}), tape);
    if (prof) prof->record("fuse", fused);
    for (int k = 0; k < m; ++k) {
      const int i = m + k;
      const Tensor& in0 = k >= 2 ? outs[i - 2] : fused;
      const Tensor& in1 = k >= 1 ? outs[i - 1] : fused;
      outs.push_back(cells[i]->forward(in0, in1, tape));
      if (prof) prof->record("cells." + std::to_string(i), outs.back());
    }
    logits4 = head->forward(outs.back(), tape);
  }
  if (prof) prof->record("head", logits4);
  return bilinear_upsample(logits4, 4);
}

std::vector<Parameter*> SegModel::trainable_params() {
  std::vector<Parameter*> ps;
  for (auto& c : cells) c->collect(ps);
  if (fuse) fuse->collect(ps);
  if (aspp) aspp->collect(ps);
  if (aspp_tail) aspp_tail->collect(ps);
  head->collect(ps);
  return ps;
}

NamedParams SegModel::named_params() {
  std::vector<Parameter*> ps;
  backbone->collect_through(build.tap_lo_stage, ps);
  for (auto& c : cells) c->collect(ps);
  if (fuse) fuse->collect(ps);
  if (aspp) aspp->collect(ps);
  if (aspp_tail) aspp_tail->collect(ps);
  head->collect(ps);
  return with_names(ps);
}

StageProfile SegModel::profile(const Tensor& reference_input) {
  StageProfile out;
  auto stage_outs = backbone->forward_stages(reference_input, build.tap_lo_stage, nullptr);
  for (int s = 0; s <= build.tap_lo_stage; ++s) {
    StageProfile::Row row;
    row.name = "backbone.s" + std::to_string(s);
    std::vector<Parameter*> ps, prev;
    backbone->collect_through(s, ps);
    row.param_count = count_params(ps);
    if (s > 0) {
      backbone->collect_through(s - 1, prev);
      row.param_count -= count_params(prev);
    }
    row.activation_elems = stage_outs[s].shape.numel();
    out.rows.push_back(std::move(row));
  }
  Profiler prof;
  forward_from_taps(stage_outs[build.tap_hi_stage], stage_outs[build.tap_lo_stage], nullptr,
                    &prof);
  auto add_part = [&](const std::string& name, std::vector<Parameter*> ps) {
    StageProfile::Row row;
    row.name = name;
    row.param_count = count_params(ps);
    row.activation_elems = prof.activation_elems.count(name) ? prof.activation_elems[name] : 0;
    out.rows.push_back(std::move(row));
  };
  for (size_t i = 0; i < cells.size(); ++i) {
    std::vector<Parameter*> ps;
    cells[i]->collect(ps);
    add_part("cells." + std::to_string(i), std::move(ps));
  }
  if (fuse) {
    std::vector<Parameter*> ps;
    fuse->collect(ps);
    add_part("fuse", std::move(ps));
  }
  if (aspp) {
    std::vector<Parameter*> ps;
    aspp->collect(ps);
    add_part("aspp", std::move(ps));
    std::vector<Parameter*> tp;
    aspp_tail->collect(tp);
    add_part("aspp.tail", std::move(tp));
  }
  std::vector<Parameter*> hp;
  head->collect(hp);
  add_part("head", std::move(hp));
  return out;
}

// ---------------------------------------------------------------------------
// ClassifierSupernet
// ---------------------------------------------------------------------------

ClassifierSupernet::ClassifierSupernet(std::shared_ptr<Backbone> bb, std::vector<OpKind> active,
                                       int initial_cells, int chan, int ncls, uint64_t seed)
    : backbone(std::move(bb)), channels(chan), n_classes(ncls), grow_rng(splitmix64(seed ^ 77)) {
  if (initial_cells < 2) throw ConfigError("supernet: need at least 2 initial cells");
  Rng rng(seed);
  Rng an_rng = rng.derive("alphas.normal");
  Rng ar_rng = rng.derive("alphas.reduce");
  alphas_normal = std::make_unique<AlphaSet>("alphas.normal", active, an_rng);
  alphas_reduce = std::make_unique<AlphaSet>("alphas.reduce", std::move(active), ar_rng);

  reduction_flags = classifier_reduction_flags(initial_cells, 2);
  const int tap_ch = backbone->stage_channels(2);
  int c = channels;
  int c_pp = tap_ch, c_p = tap_ch;
  bool prev_red = false;
  int reductions_seen = 0;
  for (int i = 0; i < initial_cells; ++i) {
    const bool red = reduction_flags[i];
    if (red && reductions_seen >= 1) c *= 2;
    if (red) ++reductions_seen;
    CellDims dims{c_pp, c_p, c, red, prev_red};
    Rng cell_rng = rng.derive(static_cast<uint64_t>(i) + 3000);
    cells.push_back(std::make_unique<MixedCell>(
        dims, red ? alphas_reduce.get() : alphas_normal.get(), "cells." + std::to_string(i),
        cell_rng));
    cell_channels.push_back(c);
    c_pp = c_p;
    c_p = 4 * c;
    prev_red = red;
  }
  Rng head_rng = rng.derive("head");
  head = std::make_unique<DenseLayer>("head", 4 * c, n_classes, head_rng);
}

Tensor ClassifierSupernet::backbone_tap(const Tensor& images) {
  return backbone->forward_to(images, 2, nullptr);
}

Tensor ClassifierSupernet::forward(const Tensor& images, Tape* tape) {
  return forward_from_tap(backbone_tap(images), tape);
}

Tensor ClassifierSupernet::forward_from_tap(const Tensor& tap, Tape* tape) {
  std::vector<Tensor> outs;
  for (size_t i = 0; i < cells.size(); ++i) {
    const Tensor& in0 = i >= 2 ? outs[i - 2] : tap;
    const Tensor& in1 = i >= 1 ? outs[i - 1] : tap;
    outs.push_back(cells[i]->forward(in0, in1, tape));
  }
  Tensor pooled = pool2d(outs.back(), PoolKind::global_avg, 0, 0, 0);
  return head->forward(pooled, tape);
}

void ClassifierSupernet::grow(int n_new) {
  for (int k = 0; k < n_new; ++k) {
    const int i = static_cast<int>(cells.size());
    MixedCell& last = *cells.back();
    const int c = cell_channels.back();
    CellDims dims{4 * cell_channels[cells.size() - 2], 4 * c, c, false,
                  reduction_flags.back()};
    Rng cell_rng = grow_rng.derive(static_cast<uint64_t>(i));
    auto cell = std::make_unique<MixedCell>(dims, alphas_normal.get(),
                                            "cells." + std::to_string(i), cell_rng);
    // the new cell inherits the old cell's weights wherever shapes line up
    // (input adapters can differ right after a reduction boundary)
    std::vector<Parameter*> dst_ps, src_ps;
    cell->collect(dst_ps);
    last.collect(src_ps);
    copy_matching_params(
        with_relative_names(dst_ps, "cells." + std::to_string(i) + "."),
        with_relative_names(src_ps, last.name + "."));
    cells.push_back(std::move(cell));
    cell_channels.push_back(c);
    reduction_flags.push_back(false);
  }
}

void ClassifierSupernet::drop(OpKind k) {
  for (auto& c : cells) c->drop_op(k);
  alphas_normal->drop(k);
  alphas_reduce->drop(k);
}

std::map<OpKind, double> ClassifierSupernet::op_scores() const {
  std::map<OpKind, double> sum;
  int edges = 0;
  for (const AlphaSet* a : {alphas_normal.get(), alphas_reduce.get()}) {
    for (int e = 0; e < kCellEdges; ++e) {
      const auto w = a->softmax_edge(e);
      for (size_t i = 0; i < a->active.size(); ++i) sum[a->active[i]] += w[i];
      ++edges;
    }
  }
  std::map<OpKind, double> out;
  for (auto& [k, v] : sum)
    if (k != OpKind::none) out[k] = v / edges;
  return out;
}

std::vector<Parameter*> ClassifierSupernet::weight_params() {
  std::vector<Parameter*> ps;
  for (auto& c : cells) c->collect(ps);
  head->collect(ps);
  return ps;
}

std::vector<Parameter*> ClassifierSupernet::arch_params() {
  std::vector<Parameter*> ps;
  for (auto& p : alphas_normal->edges) ps.push_back(&p);
  for (auto& p : alphas_reduce->edges) ps.push_back(&p);
  return ps;
}

NamedParams ClassifierSupernet::named_params() {
  std::vector<Parameter*> ps;
  backbone->collect_through(2, ps);
  for (auto& c : cells) c->collect(ps);
  head->collect(ps);
  NamedParams out = with_names(ps);
  for (Parameter* p : arch_params()) out.emplace_back(p->name, p);
  return out;
}

// ---------------------------------------------------------------------------
// SegSupernet
// ---------------------------------------------------------------------------

SegSupernet::SegSupernet(std::shared_ptr<Backbone> bb, std::vector<OpKind> active,
                         int initial_cells_per_block, int chan, int ncls, uint64_t seed)
    : backbone(std::move(bb)), channels(chan), n_classes(ncls), grow_rng(splitmix64(seed ^ 99)) {
  if (initial_cells_per_block < 1) throw ConfigError("seg supernet: need initial cells");
  Rng rng(seed);
  Rng a_rng = rng.derive("alphas");
  alphas = std::make_unique<AlphaSet>("alphas.normal", std::move(active), a_rng);

  const int hi_ch = backbone->stage_channels(tap_hi_stage);
  const int lo_ch = backbone->stage_channels(tap_lo_stage);
  const int c = channels;
  auto make_cell = [&](const std::string& name, int c_pp, int c_p, uint64_t salt) {
    Rng cell_rng = rng.derive(salt);
    return std::make_unique<MixedCell>(CellDims{c_pp, c_p, c, false, false}, alphas.get(), name,
                                       cell_rng);
  };
  for (int k = 0; k < initial_cells_per_block; ++k) {
    block1.push_back(make_cell("b1." + std::to_string(k), k >= 2 ? 4 * c : lo_ch,
                               k >= 1 ? 4 * c : lo_ch, 4000 + k));
    block2.push_back(make_cell("b2." + std::to_string(k), 4 * c, 4 * c, 5000 + k));
  }
  Rng fuse_rng = rng.derive("fuse");
  fuse = std::make_unique<ReluConvNorm>("fuse", 4 * c + hi_ch, 4 * c, fuse_rng);
  Rng head_rng = rng.derive("head");
  head = std::make_unique<Conv2dLayer>("head", 4 * c, n_classes, 1, ConvOpts{1, 0, 1, 1}, true,
                                       head_rng);
}

std::pair<Tensor, Tensor> SegSupernet::backbone_taps(const Tensor& images) {
  auto stages = backbone->forward_stages(images, tap_lo_stage, nullptr);
  return {stages[tap_hi_stage], stages[tap_lo_stage]};
}

Tensor SegSupernet::forward(const Tensor& images, Tape* tape) {
  auto [hi, lo] = backbone_taps(images);
  return forward_from_taps(hi, lo, tape);
}

Tensor SegSupernet::forward_from_taps(const Tensor& tap_hi, const Tensor& tap_lo, Tape* tape) {
  std::vector<Tensor> outs;
  for (size_t k = 0; k < block1.size(); ++k) {
    const Tensor& in0 = k >= 2 ? outs[k - 2] : tap_lo;
    const Tensor& in1 = k >= 1 ? outs[k - 1] : tap_lo;
    outs.push_back(block1[k]->forward(in0, in1, tape));
  }
  Tensor up = bilinear_upsample(outs.back(), 2);
  Tensor fused = fuse->forward(concat_channels({up, tap_hi}), tape);
  std::vector<Tensor> outs2;
  for (size_t k = 0; k < block2.size(); ++k) {
    const Tensor& in0 = k >= 2 ? outs2[k - 2] : fused;
    const Tensor& in1 = k >= 1 ? outs2[k - 1] : fused;
    outs2.push_back(block2[k]->forward(in0, in1, tape));
  }
  Tensor logits4 = head->forward(outs2.back(), tape);
  return bilinear_upsample(logits4, 4);
}

void SegSupernet::grow(int per_block) {
  for (int t = 0; t < per_block; ++t) {
    for (auto* block : {&block1, &block2}) {
      auto& cells = *block;
      const int k = static_cast<int>(cells.size());
      MixedCell& last = *cells.back();
      const int c = channels;
      const std::string name =
          (block == &block1 ? "b1." : "b2.") + std::to_string(k);
      CellDims dims{k >= 2 ? 4 * c : last.dims.c_prev, 4 * c, c, false, false};
      Rng cell_rng = grow_rng.derive(fnv1a64(name));
      auto cell = std::make_unique<MixedCell>(dims, alphas.get(), name, cell_rng);
      std::vector<Parameter*> dst_ps, src_ps;
      cell->collect(dst_ps);
      last.collect(src_ps);
      copy_matching_params(with_relative_names(dst_ps, name + "."),
                           with_relative_names(src_ps, last.name + "."));
      cells.push_back(std::move(cell));
    }
  }
}

void SegSupernet::drop(OpKind k) {
  for (auto& c : block1) c->drop_op(k);
  for (auto& c : block2) c->drop_op(k);
  alphas->drop(k);
}

std::map<OpKind, double> SegSupernet::op_scores() const {
  std::map<OpKind, double> sum;
  for (int e = 0; e < kCellEdges; ++e) {
    const auto w = alphas->softmax_edge(e);
    for (size_t i = 0; i < alphas->active.size(); ++i) sum[alphas->active[i]] += w[i];
  }
  std::map<OpKind, double> out;
  for (auto& [k, v] : sum)
    if (k != OpKind::none) out[k] = v / kCellEdges;
  return out;
}

std::vector<Parameter*> SegSupernet::weight_params() {
  std::vector<Parameter*> ps;
  for (auto& c : block1) c->collect(ps);
  for (auto& c : block2) c->collect(ps);
  fuse->collect(ps);
  head->collect(ps);
  return ps;
}

std::vector<Parameter*> SegSupernet::arch_params() {
  std::vector<Parameter*> ps;
  for (auto& p : alphas->edges) ps.push_back(&p);
  return ps;
}

NamedParams SegSupernet::named_params() {
  std::vector<Parameter*> ps;
  backbone->collect_through(tap_lo_stage, ps);
  for (auto& c : block1) c->collect(ps);
  for (auto& c : block2) c->collect(ps);
  fuse->collect(ps);
  head->collect(ps);
  NamedParams out = with_names(ps);
  for (Parameter* p : arch_params()) out.emplace_back(p->name, p);
  return out;
}

}  // namespace hasa
