#include "hasa/cell.hpp"

#include <algorithm>
#include <cmath>

namespace hasa {

const std::array<EdgeSpec, kCellEdges>& cell_edge_list() {
  static const std::array<EdgeSpec, kCellEdges> edges = [] {
    std::array<EdgeSpec, kCellEdges> e{};
    int i = 0;
    for (int to = kCellInputNodes; to < kCellNodes; ++to)
      for (int from = 0; from < to; ++from) e[i++] = EdgeSpec{from, to};
    return e;
  }();
  return edges;
}

int cell_edge_index(int from, int to) {
  const auto& list = cell_edge_list();
  for (int i = 0; i < kCellEdges; ++i)
    if (list[i].from == from && list[i].to == to) return i;
  throw UsageError("cell_edge_index: no edge (" + std::to_string(from) + "," +
                   std::to_string(to) + ")");
}

// ---- AlphaSet ----

AlphaSet::AlphaSet(const std::string& name, std::vector<OpKind> active_ops, Rng& rng)
    : active(std::move(active_ops)) {
  if (active.empty()) throw ConfigError("AlphaSet: empty op set");
  edges.reserve(kCellEdges);
  for (int e = 0; e < kCellEdges; ++e) {
    Tensor t(Shape4{1, static_cast<int>(active.size()), 1, 1});
    // zero init plus tiny noise: unbiased start, breaks exact ties during
    // search without touching the deterministic tie-break at derivation
    for (auto& v : t.data) v = rng.uniform(-1e-3f, 1e-3f);
    edges.emplace_back(name + ".e" + std::to_string(e), std::move(t));
  }
}

int AlphaSet::index_of(OpKind k) const {
  for (size_t i = 0; i < active.size(); ++i)
    if (active[i] == k) return static_cast<int>(i);
  return -1;
}

std::vector<float> AlphaSet::softmax_edge(int edge) const {
  const auto& a = edges[edge].value.data;
  float mx = a[0];
  for (float v : a) mx = std::max(mx, v);
  double sum = 0.0;
  std::vector<float> w(a.size());
  for (size_t i = 0; i < a.size(); ++i) sum += std::exp(static_cast<double>(a[i]) - mx);
  for (size_t i = 0; i < a.size(); ++i)
    w[i] = static_cast<float>(std::exp(static_cast<double>(a[i]) - mx) / sum);
  return w;
}

void AlphaSet::drop(OpKind k) {
  if (k == OpKind::none) throw UsageError("AlphaSet: 'none' is never dropped");
  const int idx = index_of(k);
  if (idx < 0) throw UsageError("AlphaSet: op not active");
  for (auto& p : edges) {
    Tensor t(Shape4{1, static_cast<int>(active.size()) - 1, 1, 1});
    int j = 0;
    for (size_t i = 0; i < active.size(); ++i) {
      if (static_cast<int>(i) == idx) continue;
      t.data[j++] = p.value.data[i];
    }
    p.value = std::move(t);
    p.grad.reset();
  }
  active.erase(active.begin() + idx);
}

// ---- genotype ----

void validate_genotype(const CellGenotype& g) {
  for (int j = 0; j < kCellInternalNodes; ++j) {
    const auto& es = g.nodes[j];
    for (const auto& e : es) {
      if (e.op == OpKind::none)
        throw ConfigError("genotype: retained edge carries 'none' at node " + std::to_string(j));
      if (e.src < 0 || e.src >= kCellInputNodes + j)
        throw ConfigError("genotype: source " + std::to_string(e.src) +
                          " does not precede node " + std::to_string(j));
    }
    if (es[0].src == es[1].src)
      throw ConfigError("genotype: duplicate sources at node " + std::to_string(j));
  }
}

CellGenotype derive_genotype(const AlphaSet& alphas, bool reduction) {
  struct Scored {
    int from;
    OpKind op;
    float weight;
  };
  CellGenotype g;
  g.reduction = reduction;
  for (int j = 0; j < kCellInternalNodes; ++j) {
    const int node = kCellInputNodes + j;
    std::vector<Scored> cands;
    for (int from = 0; from < node; ++from) {
      const int e = cell_edge_index(from, node);
      const std::vector<float> w = alphas.softmax_edge(e);
      int best = -1;
      for (size_t i = 0; i < alphas.active.size(); ++i) {
        if (alphas.active[i] == OpKind::none) continue;
        if (best < 0 || w[i] > w[best]) best = static_cast<int>(i);
      }
      if (best < 0) throw ConfigError("derive_genotype: no non-none candidate available");
      cands.push_back(Scored{from, alphas.active[best], w[best]});
    }
    // retain the two best edges; ties fall to the lower source node
    std::stable_sort(cands.begin(), cands.end(), [](const Scored& a, const Scored& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      return a.from < b.from;
    });
    if (cands.size() < kRetainedPerNode)
      throw ConfigError("derive_genotype: fewer than 2 candidate edges");
    for (int r = 0; r < kRetainedPerNode; ++r)
      g.nodes[j][r] = GenotypeEdge{cands[r].from, cands[r].op};
    std::sort(g.nodes[j].begin(), g.nodes[j].end(),
              [](const GenotypeEdge& a, const GenotypeEdge& b) { return a.src < b.src; });
  }
  validate_genotype(g);
  return g;
}

CellGenotype random_genotype(const std::vector<OpKind>& active, bool reduction, Rng& rng) {
  std::vector<OpKind> pool;
  for (OpKind k : active)
    if (k != OpKind::none) pool.push_back(k);
  if (pool.empty()) throw ConfigError("random_genotype: no non-none ops");
  CellGenotype g;
  g.reduction = reduction;
  for (int j = 0; j < kCellInternalNodes; ++j) {
    const int node = kCellInputNodes + j;
    const int s0 = rng.uniform_int(0, node - 1);
    int s1 = rng.uniform_int(0, node - 2);
    if (s1 >= s0) ++s1;
    g.nodes[j][0] = GenotypeEdge{std::min(s0, s1), pool[rng.uniform_int(0, int(pool.size()) - 1)]};
    g.nodes[j][1] = GenotypeEdge{std::max(s0, s1), pool[rng.uniform_int(0, int(pool.size()) - 1)]};
  }
  validate_genotype(g);
  return g;
}

// ---- MixedCell ----

namespace {

int edge_stride(const CellDims& dims, int from) {
  return (dims.reduction && from < kCellInputNodes) ? 2 : 1;
}

}  // namespace

MixedCell::MixedCell(const CellDims& d, AlphaSet* a, const std::string& n, Rng& rng)
    : dims(d), name(n), pre1(n + ".pre1", d.c_prev, d.channels, rng), alphas(a) {
  if (dims.prev_reduction)
    pre0_reduce = std::make_unique<FactorizedReduce>(n + ".pre0", d.c_prev_prev, d.channels, rng);
  else
    pre0_conv = std::make_unique<ReluConvNorm>(n + ".pre0", d.c_prev_prev, d.channels, rng);

  for (const EdgeSpec& es : cell_edge_list()) {
    Edge edge;
    edge.from = es.from;
    edge.to = es.to;
    const int stride = edge_stride(dims, es.from);
    for (size_t i = 0; i < alphas->active.size(); ++i) {
      const OpKind k = alphas->active[i];
      if (k == OpKind::none) {
        edge.ops.push_back(nullptr);
        continue;
      }
      edge.ops.push_back(instantiate_op(
          k, dims.channels, dims.channels, stride,
          n + ".edge" + std::to_string(cell_edge_index(es.from, es.to)) + ".op_" +
              std::string(op_kind_name(k)),
          rng));
    }
    edges.push_back(std::move(edge));
  }
}

Tensor MixedCell::forward(const Tensor& s0, const Tensor& s1, Tape* tape) {
  Tensor x0 = pre0_reduce ? pre0_reduce->forward(s0, tape) : pre0_conv->forward(s0, tape);
  Tensor x1 = pre1.forward(s1, tape);
  if (x0.shape.h != x1.shape.h || x0.shape.w != x1.shape.w)
    throw DimensionError("cell inputs disagree spatially after preprocessing: " +
                         to_string(x0.shape) + " vs " + to_string(x1.shape));

  const int node_h = dims.reduction ? (x0.shape.h - 1) / 2 + 1 : x0.shape.h;
  const int node_w = dims.reduction ? (x0.shape.w - 1) / 2 + 1 : x0.shape.w;
  std::vector<Tensor> states{x0, x1};
  for (int node = kCellInputNodes; node < kCellNodes; ++node) {
    Tensor acc(Shape4{x0.shape.n, dims.channels, node_h, node_w});
    bool first = true;
    for (int from = 0; from < node; ++from) {
      Tensor term = edge_forward(cell_edge_index(from, node), states[from], tape);
      if (term.shape.numel() == 0) continue;  // edge with only 'none' active
      acc = first ? std::move(term) : add(acc, term);
      first = false;
    }
    states.push_back(std::move(acc));
  }
  return concat_channels(
      std::vector<Tensor>(states.begin() + kCellInputNodes, states.end()));
}

Tensor MixedCell::edge_forward(int edge_index, const Tensor& x, Tape* tape) {
  Edge& edge = edges[edge_index];
  if (edge.ops.size() != alphas->active.size())
    throw UsageError("mixed edge op list out of sync with active op set");
  Tensor a = use_param(alphas->edges[edge_index], tape);
  Tensor w = softmax_channel(a);
  Tensor acc;
  bool first = true;
  for (size_t i = 0; i < edge.ops.size(); ++i) {
    if (!edge.ops[i]) continue;  // 'none' contributes exactly zero
    Tensor term = scale_by(slice_channels(w, static_cast<int>(i), static_cast<int>(i) + 1),
                           edge.ops[i]->forward(x, tape));
    acc = first ? std::move(term) : add(acc, term);
    first = false;
  }
  return acc;  // empty tensor when every active op is 'none'
}

void MixedCell::collect(std::vector<Parameter*>& out) {
  if (pre0_reduce)
    pre0_reduce->collect(out);
  else
    pre0_conv->collect(out);
  pre1.collect(out);
  for (Edge& e : edges)
    for (auto& op : e.ops)
      if (op) op->collect(out);
}

void MixedCell::drop_op(OpKind k) {
  const int idx = alphas->index_of(k);
  if (idx < 0) throw UsageError("drop_op: op not active");
  for (Edge& e : edges) e.ops.erase(e.ops.begin() + idx);
}

void MixedCell::copy_params_from(MixedCell& other) {
  std::vector<Parameter*> dst, src;
  collect(dst);
  other.collect(src);
  if (dst.size() != src.size()) throw UsageError("cell copy: parameter count mismatch");
  for (size_t i = 0; i < dst.size(); ++i) {
    if (!(dst[i]->value.shape == src[i]->value.shape))
      throw UsageError("cell copy: shape mismatch at " + dst[i]->name);
    dst[i]->value.data = src[i]->value.data;
  }
}

// ---- DiscreteCell ----

DiscreteCell::DiscreteCell(const CellGenotype& g, const CellDims& d, const std::string& n,
                           Rng& rng)
    : genotype(g), dims(d), name(n), pre1(n + ".pre1", d.c_prev, d.channels, rng) {
  validate_genotype(g);
  if (g.reduction != d.reduction)
    throw ConfigError("DiscreteCell: genotype/dims reduction flag mismatch");
  if (dims.prev_reduction)
    pre0_reduce = std::make_unique<FactorizedReduce>(n + ".pre0", d.c_prev_prev, d.channels, rng);
  else
    pre0_conv = std::make_unique<ReluConvNorm>(n + ".pre0", d.c_prev_prev, d.channels, rng);

  nodes.resize(kCellInternalNodes);
  for (int j = 0; j < kCellInternalNodes; ++j)
    for (const GenotypeEdge& ge : g.nodes[j]) {
      NodeEdge ne;
      ne.from = ge.src;
      ne.op = instantiate_op(ge.op, dims.channels, dims.channels,
                             edge_stride(dims, ge.src),
                             n + ".node" + std::to_string(j) + ".src" + std::to_string(ge.src) +
                                 "." + std::string(op_kind_name(ge.op)),
                             rng);
      nodes[j].push_back(std::move(ne));
    }
}

std::unique_ptr<DiscreteCell> DiscreteCell::from_supernet(MixedCell& cell, const CellGenotype& g,
                                                          const std::string& name, Rng& rng) {
  auto out = std::make_unique<DiscreteCell>(g, cell.dims, name, rng);
  // preprocessing
  {
    std::vector<Parameter*> dst, src;
    if (out->pre0_reduce)
      out->pre0_reduce->collect(dst);
    else
      out->pre0_conv->collect(dst);
    out->pre1.collect(dst);
    if (cell.pre0_reduce)
      cell.pre0_reduce->collect(src);
    else
      cell.pre0_conv->collect(src);
    cell.pre1.collect(src);
    for (size_t i = 0; i < dst.size(); ++i) dst[i]->value.data = src[i]->value.data;
  }
  // retained ops
  for (int j = 0; j < kCellInternalNodes; ++j) {
    const int node = kCellInputNodes + j;
    for (auto& ne : out->nodes[j]) {
      MixedCell::Edge& medge = cell.edges[cell_edge_index(ne.from, node)];
      const int idx = cell.alphas->index_of(ne.op->kind);
      if (idx < 0 || !medge.ops[idx])
        throw UsageError("from_supernet: genotype op not present in supernet edge");
      ne.op->copy_params_from(*medge.ops[idx]);
    }
  }
  return out;
}

Tensor DiscreteCell::forward(const Tensor& s0, const Tensor& s1, Tape* tape) {
  Tensor x0 = pre0_reduce ? pre0_reduce->forward(s0, tape) : pre0_conv->forward(s0, tape);
  Tensor x1 = pre1.forward(s1, tape);
  if (x0.shape.h != x1.shape.h || x0.shape.w != x1.shape.w)
    throw DimensionError("cell inputs disagree spatially after preprocessing");

  std::vector<Tensor> states{x0, x1};
  for (int j = 0; j < kCellInternalNodes; ++j) {
    Tensor acc;
    bool first = true;
    for (auto& ne : nodes[j]) {
      Tensor term = ne.op->forward(states[ne.from], tape);
      acc = first ? std::move(term) : add(acc, term);
      first = false;
    }
    if (first)
      throw ConfigError("DiscreteCell: internal node without incoming edges");
    states.push_back(std::move(acc));
  }
  return concat_channels(
      std::vector<Tensor>(states.begin() + kCellInputNodes, states.end()));
}

void DiscreteCell::collect(std::vector<Parameter*>& out) {
  if (pre0_reduce)
    pre0_reduce->collect(out);
  else
    pre0_conv->collect(out);
  pre1.collect(out);
  for (auto& node : nodes)
    for (auto& ne : node) ne.op->collect(out);
}

}  // namespace hasa
