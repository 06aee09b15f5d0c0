#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "hasa/op_catalog.hpp"

namespace hasa {

// 7-node cell: 2 input nodes, 4 internal nodes, concatenated output.
inline constexpr int kCellInputNodes = 2;
inline constexpr int kCellInternalNodes = 4;
inline constexpr int kCellNodes = kCellInputNodes + kCellInternalNodes;
inline constexpr int kCellEdges = 14;  // 2+3+4+5
inline constexpr int kRetainedPerNode = 2;

struct CellSpec {
  int n_input_nodes = kCellInputNodes;
  int n_internal_nodes = kCellInternalNodes;
  int channels = 0;
  bool reduction = false;

  int out_channels() const { return n_internal_nodes * channels; }
};

struct EdgeSpec {
  int from, to;
};

// Edges ordered by (to, from): (0,2)(1,2)(0,3)...(4,5).
const std::array<EdgeSpec, kCellEdges>& cell_edge_list();
int cell_edge_index(int from, int to);

// Architecture weights shared by all cells of one type. One parameter vector
// per edge, indexed by the active op set (catalog order).
class AlphaSet {
 public:
  AlphaSet(const std::string& name, std::vector<OpKind> active_ops, Rng& rng);

  int index_of(OpKind k) const;  // -1 when inactive
  std::vector<float> softmax_edge(int edge) const;
  void drop(OpKind k);  // removes the op's logit column on every edge

  std::vector<OpKind> active;
  std::vector<Parameter> edges;  // kCellEdges entries, shape (1, |active|, 1, 1)
};

struct GenotypeEdge {
  int src = -1;
  OpKind op = OpKind::none;
  bool operator==(const GenotypeEdge&) const = default;
};

// Discrete architecture of one cell: per internal node, the two retained
// incoming edges. Never contains 'none'.
struct CellGenotype {
  std::array<std::array<GenotypeEdge, kRetainedPerNode>, kCellInternalNodes> nodes;
  bool reduction = false;

  bool operator==(const CellGenotype&) const = default;
};

// Throws ConfigError when a genotype violates its invariants.
void validate_genotype(const CellGenotype& g);

// Per edge: argmax of softmax(alpha) excluding 'none'; per node: the two
// incoming edges whose best-op weight is highest. Ties break toward the
// lower source node and earlier catalog position.
CellGenotype derive_genotype(const AlphaSet& alphas, bool reduction);

CellGenotype random_genotype(const std::vector<OpKind>& active, bool reduction, Rng& rng);

struct CellDims {
  int c_prev_prev = 0;  // channels of input node 0's source
  int c_prev = 0;       // channels of input node 1's source
  int channels = 0;     // internal width
  bool reduction = false;
  bool prev_reduction = false;  // previous cell halved resolution
};

// Search-time cell: every edge carries all active candidate ops, mixed by
// softmax(alpha).
class MixedCell {
 public:
  MixedCell(const CellDims& dims, AlphaSet* alphas, const std::string& name, Rng& rng);

  Tensor forward(const Tensor& s0, const Tensor& s1, Tape* tape);
  // One relaxed edge: sum over active ops of softmax(alpha)_o * op_o(x).
  Tensor edge_forward(int edge_index, const Tensor& x, Tape* tape);
  void collect(std::vector<Parameter*>& out);
  // Call on every cell before AlphaSet::drop(k); edges index into the
  // alpha columns.
  void drop_op(OpKind k);
  void copy_params_from(MixedCell& other);

  struct Edge {
    int from, to;
    // parallel to alphas->active; nullptr for 'none'
    std::vector<std::unique_ptr<OpInstance>> ops;
  };

  CellDims dims;
  std::string name;
  std::unique_ptr<ReluConvNorm> pre0_conv;
  std::unique_ptr<FactorizedReduce> pre0_reduce;
  ReluConvNorm pre1;
  std::vector<Edge> edges;
  AlphaSet* alphas;
};

// Evaluation-time cell: each internal node sums its retained edges. The node
// wiring is kept generic (any edge list) so hand-built variants can be
// exercised in tests; derived genotypes always carry exactly two per node.
class DiscreteCell {
 public:
  DiscreteCell(const CellGenotype& g, const CellDims& dims, const std::string& name, Rng& rng);

  // Same topology, parameters copied from the supernet's matching ops.
  static std::unique_ptr<DiscreteCell> from_supernet(MixedCell& cell, const CellGenotype& g,
                                                     const std::string& name, Rng& rng);

  Tensor forward(const Tensor& s0, const Tensor& s1, Tape* tape);
  void collect(std::vector<Parameter*>& out);

  struct NodeEdge {
    int from;
    std::unique_ptr<OpInstance> op;
  };

  CellGenotype genotype;
  CellDims dims;
  std::string name;
  std::unique_ptr<ReluConvNorm> pre0_conv;
  std::unique_ptr<FactorizedReduce> pre0_reduce;
  ReluConvNorm pre1;
  std::vector<std::vector<NodeEdge>> nodes;  // kCellInternalNodes entries
};

}  // namespace hasa
