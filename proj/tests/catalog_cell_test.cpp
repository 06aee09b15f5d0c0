#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hasa/cell.hpp"
#include "hasa/op_catalog.hpp"
#include "oracles.hpp"

using namespace hasa;

namespace {

std::vector<OpKind> full_catalog_vec() {
  return std::vector<OpKind>(kFullCatalog.begin(), kFullCatalog.end());
}

// Independent DAG walk: explicit node materialization, hand-rolled softmax
// over the raw alpha values, plain float mixing. Shares only the op forward
// implementations (validated elsewhere) with the code under test.
Tensor dag_cell_oracle(MixedCell& cell, const Tensor& s0, const Tensor& s1) {
  Tensor x0 = cell.pre0_reduce ? cell.pre0_reduce->forward(s0, nullptr)
                               : cell.pre0_conv->forward(s0, nullptr);
  Tensor x1 = cell.pre1.forward(s1, nullptr);
  std::vector<Tensor> nodes{x0, x1};
  for (int node = kCellInputNodes; node < kCellNodes; ++node) {
    Tensor sum;
    bool have = false;
    for (int from = 0; from < node; ++from) {
      const int e = cell_edge_index(from, node);
      const auto& alpha = cell.alphas->edges[e].value.data;
      double mx = alpha[0];
      for (float v : alpha) mx = std::max(mx, static_cast<double>(v));
      double z = 0.0;
      for (float v : alpha) z += std::exp(static_cast<double>(v) - mx);
      for (size_t i = 0; i < alpha.size(); ++i) {
        const double w = std::exp(static_cast<double>(alpha[i]) - mx) / z;
        if (!cell.edges[e].ops[i]) continue;
        Tensor y = cell.edges[e].ops[i]->forward(nodes[from], nullptr);
        if (!have) {
          sum = Tensor(y.shape, 0.0f);
          have = true;
        }
        for (size_t k = 0; k < y.data.size(); ++k)
          sum.data[k] += static_cast<float>(w * y.data[k]);
      }
    }
    nodes.push_back(std::move(sum));
  }
  Tensor out(Shape4{x0.shape.n, 4 * cell.dims.channels, nodes[2].shape.h, nodes[2].shape.w});
  const int HW = nodes[2].shape.h * nodes[2].shape.w;
  const int C = cell.dims.channels;
  for (int n = 0; n < out.shape.n; ++n)
    for (int j = 0; j < 4; ++j)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < HW; ++i)
          out.data[((static_cast<size_t>(n) * 4 * C + j * C + c) * HW) + i] =
              nodes[2 + j].data[(static_cast<size_t>(n) * C + c) * HW + i];
  return out;
}

Tensor dag_discrete_oracle(DiscreteCell& cell, const Tensor& s0, const Tensor& s1) {
  Tensor x0 = cell.pre0_reduce ? cell.pre0_reduce->forward(s0, nullptr)
                               : cell.pre0_conv->forward(s0, nullptr);
  Tensor x1 = cell.pre1.forward(s1, nullptr);
  std::vector<Tensor> nodes{x0, x1};
  for (int j = 0; j < kCellInternalNodes; ++j) {
    Tensor sum;
    bool have = false;
    for (auto& ne : cell.nodes[j]) {
      Tensor y = ne.op->forward(nodes[ne.from], nullptr);
      if (!have) {
        sum = Tensor(y.shape, 0.0f);
        have = true;
      }
      for (size_t k = 0; k < y.data.size(); ++k) sum.data[k] += y.data[k];
    }
    nodes.push_back(std::move(sum));
  }
  std::vector<Tensor> internal(nodes.begin() + 2, nodes.end());
  return concat_channels(internal);
}

void set_edge_alpha(AlphaSet& a, int edge, OpKind hot, float hot_v, float cold_v) {
  const int idx = a.index_of(hot);
  REQUIRE(idx >= 0);
  for (size_t i = 0; i < a.active.size(); ++i)
    a.edges[edge].value.data[i] = (static_cast<int>(i) == idx) ? hot_v : cold_v;
}

}  // namespace

TEST_CASE("op instances honor the shape contract at both strides") {
  Rng rng(1);
  for (OpKind k : kFullCatalog) {
    for (int stride : {1, 2}) {
      auto op = instantiate_op(k, 8, 8, stride, "t", rng);
      Tensor x = oracle::random_tensor({2, 8, 8, 8}, rng);
      Tensor y = op->forward(x, nullptr);
      CHECK(y.shape == Shape4{2, 8, stride == 1 ? 8 : 4, stride == 1 ? 8 : 4});
      for (float v : y.data) CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("none op returns zeros and passes no gradient") {
  Rng rng(2);
  auto op = instantiate_op(OpKind::none, 4, 4, 2, "none", rng);
  Tensor x = oracle::random_tensor({1, 4, 6, 6}, rng);
  Tensor y = op->forward(x, nullptr);
  CHECK(y.shape == Shape4{1, 4, 3, 3});
  for (float v : y.data) CHECK(v == 0.0f);

  Parameter xin("x", x);
  Tape tape;
  Tensor xt = tape.watch(xin);
  Tensor through_none = op->forward(xt, &tape);
  CHECK(!through_none.requires_grad());  // constant map, no gradient path
  // with a direct path added, the gradient is exactly the direct path's
  Tensor up = bilinear_upsample(through_none, 2);  // back to 6x6 for the sum
  Tensor loss = add(sum_all(up), sum_all(xt));
  tape.backward(loss);
  for (float v : xin.grad->data) CHECK(v == 1.0f);
}

TEST_CASE("skip_connect stride 1 is the identity") {
  Rng rng(3);
  auto op = instantiate_op(OpKind::skip_connect, 5, 5, 1, "skip", rng);
  Tensor x = oracle::random_tensor({2, 5, 4, 4}, rng);
  CHECK(oracle::max_abs_diff(op->forward(x, nullptr), x) == 0.0);
  CHECK(op->param_count() == 0);
}

TEST_CASE("mixconv splits channels 0-3 to the 3x3 branch and 4-7 to the 5x5 branch") {
  Rng rng(4);
  auto op = instantiate_op(OpKind::mixconv_35, 8, 8, 1, "mix", rng);
  auto* mix = dynamic_cast<OpInstance*>(op.get());
  REQUIRE(mix != nullptr);

  // zero the 3x3 branch kernels: output must become insensitive to input
  // channels 0-3 while still responding to channels 4-7
  std::vector<Parameter*> ps;
  op->collect(ps);
  Parameter* dw3 = nullptr;
  for (auto* p : ps)
    if (p->name.find(".dw3.") != std::string::npos) dw3 = p;
  REQUIRE(dw3 != nullptr);
  std::fill(dw3->value.data.begin(), dw3->value.data.end(), 0.0f);

  Tensor x = oracle::random_tensor({1, 8, 6, 6}, rng);
  Tensor base = op->forward(x, nullptr);

  Tensor x_lo = x;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 36; ++i) x_lo.data[c * 36 + i] += rng.uniform(-1.0f, 1.0f);
  CHECK(oracle::max_abs_diff(op->forward(x_lo, nullptr), base) == 0.0);

  Tensor x_hi = x;
  for (int c = 4; c < 8; ++c)
    for (int i = 0; i < 36; ++i) x_hi.data[c * 36 + i] += rng.uniform(0.5f, 1.0f);
  CHECK(oracle::max_abs_diff(op->forward(x_hi, nullptr), base) > 1e-4);
}

TEST_CASE("mixconv accepts odd channel counts with a floor/ceil split") {
  Rng rng(5);
  auto op = instantiate_op(OpKind::mixconv_35, 7, 7, 1, "mix7", rng);
  Tensor x = oracle::random_tensor({1, 7, 5, 5}, rng);
  CHECK(op->forward(x, nullptr).shape == Shape4{1, 7, 5, 5});
}

TEST_CASE("se_block gates channels with values strictly inside (0,1)") {
  Rng rng(6);
  auto op = instantiate_op(OpKind::se_block, 6, 6, 1, "se", rng);
  Tensor x = oracle::random_tensor({2, 6, 5, 5}, rng, 0.1f, 1.0f);
  Tensor y = op->forward(x, nullptr);
  // per-channel ratio y/x must be constant over the spatial grid and in (0,1)
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 6; ++c) {
      const float ratio = y.at(n, c, 0, 0) / x.at(n, c, 0, 0);
      CHECK(ratio > 0.0f);
      CHECK(ratio < 1.0f);
      for (int i = 0; i < 5; ++i)
        CHECK(y.at(n, c, i, i) / x.at(n, c, i, i) == doctest::Approx(ratio).epsilon(1e-4));
    }
}

TEST_CASE("se_block with symmetric gate weights scales all channels equally") {
  Rng rng(7);
  auto op = instantiate_op(OpKind::se_block, 4, 4, 1, "se_sym", rng);
  std::vector<Parameter*> ps;
  op->collect(ps);
  for (auto* p : ps) {
    const float v = p->name.find("bias") != std::string::npos ? 0.1f : 0.05f;
    std::fill(p->value.data.begin(), p->value.data.end(), v);
  }
  Tensor x(Shape4{1, 4, 3, 3});
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 9; ++i) x.data[c * 9 + i] = 2.0f;  // channel-wise constant
  Tensor y = op->forward(x, nullptr);
  const float f = y.data[0] / 2.0f;
  for (float v : y.data) CHECK(v / 2.0f == doctest::Approx(f).epsilon(1e-6));
}

TEST_CASE("sep_conv_3x3 keeps the contract on a 4x4 input") {
  Rng rng(8);
  auto op = instantiate_op(OpKind::sep_conv_3x3, 3, 3, 1, "sep", rng);
  Tensor x = oracle::random_tensor({1, 3, 4, 4}, rng);
  CHECK(op->forward(x, nullptr).shape == Shape4{1, 3, 4, 4});
  auto op2 = instantiate_op(OpKind::sep_conv_3x3, 3, 3, 2, "sep2", rng);
  CHECK(op2->forward(x, nullptr).shape == Shape4{1, 3, 2, 2});
}

TEST_CASE("param_count matches the analytic formula") {
  Rng rng(9);
  CHECK(instantiate_op(OpKind::none, 16, 16, 1, "n", rng)->param_count() == 0);
  CHECK(instantiate_op(OpKind::skip_connect, 16, 16, 1, "s", rng)->param_count() == 0);

  // bare depthwise 3x3 + pointwise 1x1 over C=16, no bias: C*9 + C*C = 400
  Conv2dLayer dw("dw", 16, 16, 3, ConvOpts{1, 1, 1, 16}, false, rng);
  Conv2dLayer pw("pw", 16, 16, 1, ConvOpts{1, 0, 1, 1}, false, rng);
  std::vector<Parameter*> ps;
  dw.collect(ps);
  pw.collect(ps);
  CHECK(count_params(ps) == 400);

  // every kind: param_count equals the sum of its parameter tensor sizes
  for (OpKind k : kFullCatalog) {
    auto op = instantiate_op(k, 8, 8, 2, "x", rng);
    std::vector<Parameter*> list;
    op->collect(list);
    int64_t total = 0;
    for (auto* p : list) total += p->value.shape.numel();
    CHECK(op->param_count() == total);
  }
}

TEST_CASE("unknown op name resolves to nothing") {
  CHECK(!op_kind_from_name("conv_7x7").has_value());
  CHECK(op_kind_from_name("sep_conv_3x3") == OpKind::sep_conv_3x3);
  for (OpKind k : kFullCatalog) CHECK(op_kind_from_name(op_kind_name(k)) == k);
}

TEST_CASE("catalog op gradients agree with finite differences") {
  Rng rng(10);
  for (OpKind k : {OpKind::sep_conv_3x3, OpKind::mixconv_35, OpKind::se_block}) {
    auto op = instantiate_op(k, 4, 4, 1, "fd", rng);
    Parameter xin("x", oracle::random_tensor({1, 4, 5, 5}, rng));
    const Tensor probe = oracle::random_tensor({1, 4, 5, 5}, rng);
    std::vector<Parameter*> params;
    op->collect(params);
    params.push_back(&xin);
    auto loss_fn = [&](Tape* t) {
      return sum_all(mul(op->forward(use_param(xin, t), t), probe));
    };
    Rng pick(static_cast<uint64_t>(k) + 100);
    auto st = oracle::fd_check(loss_fn, params, 80, 1e-3, pick);
    INFO("op ", op_kind_name(k));
    CHECK(st.max_rel < 1e-2);
    CHECK(st.median_rel < 1e-3);
  }
}

// ---------------------------------------------------------------------------
// cells
// ---------------------------------------------------------------------------

TEST_CASE("a cell owns 14 mixed edges") {
  CHECK(cell_edge_list().size() == 14);
  Rng rng(11);
  AlphaSet alphas("a", full_catalog_vec(), rng);
  CHECK(alphas.edges.size() == 14);
  MixedCell cell({8, 8, 4, false, false}, &alphas, "cell", rng);
  CHECK(cell.edges.size() == 14);
}

TEST_CASE("mixed edge saturates to the single op at a 40-logit gap") {
  Rng rng(12);
  AlphaSet alphas("a", full_catalog_vec(), rng);
  MixedCell cell({8, 8, 4, false, false}, &alphas, "cell", rng);
  Tensor x = oracle::random_tensor({1, 4, 6, 6}, rng);

  const int e = cell_edge_index(0, 2);
  set_edge_alpha(alphas, e, OpKind::sep_conv_3x3, 20.0f, -20.0f);
  Tensor mixed = cell.edge_forward(e, x, nullptr);
  const int idx = alphas.index_of(OpKind::sep_conv_3x3);
  Tensor alone = cell.edges[e].ops[idx]->forward(x, nullptr);
  CHECK(oracle::max_abs_diff(mixed, alone) < 1e-5);
}

TEST_CASE("equal alphas over {none, skip} halve the input") {
  Rng rng(13);
  AlphaSet alphas("a", {OpKind::none, OpKind::skip_connect}, rng);
  for (auto& p : alphas.edges) std::fill(p.value.data.begin(), p.value.data.end(), 0.0f);
  MixedCell cell({4, 4, 4, false, false}, &alphas, "cell", rng);
  Tensor x = oracle::random_tensor({1, 4, 5, 5}, rng);
  Tensor y = cell.edge_forward(cell_edge_index(0, 2), x, nullptr);
  Tensor half = scale(x, 0.5f);
  CHECK(oracle::max_abs_diff(y, half) < 1e-6);
}

TEST_CASE("alpha gradients match finite differences") {
  Rng rng(14);
  AlphaSet alphas("a", {OpKind::none, OpKind::skip_connect, OpKind::sep_conv_3x3,
                        OpKind::max_pool_3x3},
                  rng);
  MixedCell cell({4, 4, 4, false, false}, &alphas, "cell", rng);
  Tensor x = oracle::random_tensor({1, 4, 4, 4}, rng);
  const Tensor probe = oracle::random_tensor({1, 4, 4, 4}, rng);
  const int e = cell_edge_index(1, 2);
  auto loss_fn = [&](Tape* t) {
    return sum_all(mul(cell.edge_forward(e, x, t), probe));
  };
  std::vector<Parameter*> params{&alphas.edges[e]};
  Rng pick(15);
  auto st = oracle::fd_check(loss_fn, params, 16, 1e-3, pick);
  CHECK(st.max_rel < 1e-2);
}

TEST_CASE("cell with only 'none' active emits zeros") {
  Rng rng(16);
  AlphaSet alphas("a", {OpKind::none}, rng);
  MixedCell cell({4, 4, 4, false, false}, &alphas, "cell", rng);
  Tensor x = oracle::random_tensor({1, 4, 5, 5}, rng);
  Tensor y = cell.forward(x, x, nullptr);
  CHECK(y.shape == Shape4{1, 16, 5, 5});
  for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("cell_forward equals the brute-force DAG oracle") {
  Rng rng(17);
  SUBCASE("all edges forced to skip, equal inputs") {
    AlphaSet alphas("a", {OpKind::none, OpKind::skip_connect}, rng);
    for (int e = 0; e < kCellEdges; ++e)
      set_edge_alpha(alphas, e, OpKind::skip_connect, 20.0f, -20.0f);
    MixedCell cell({4, 4, 4, false, false}, &alphas, "cell", rng);
    Tensor x = oracle::random_tensor({1, 4, 5, 5}, rng);
    Tensor got = cell.forward(x, x, nullptr);
    Tensor want = dag_cell_oracle(cell, x, x);
    CHECK(oracle::max_abs_diff(got, want) < 1e-5);
  }
  SUBCASE("random alphas, full catalog, normal and reduction") {
    for (bool reduction : {false, true}) {
      AlphaSet alphas("a", full_catalog_vec(), rng);
      for (auto& p : alphas.edges)
        for (auto& v : p.value.data) v = rng.uniform(-1.5f, 1.5f);
      MixedCell cell({6, 6, 4, reduction, false}, &alphas, "cell", rng);
      Tensor s0 = oracle::random_tensor({2, 6, 6, 6}, rng);
      Tensor s1 = oracle::random_tensor({2, 6, 6, 6}, rng);
      Tensor got = cell.forward(s0, s1, nullptr);
      Tensor want = dag_cell_oracle(cell, s0, s1);
      CHECK(got.shape == want.shape);
      CHECK(oracle::max_abs_diff(got, want) < 1e-5);
    }
  }
}

TEST_CASE("derive_genotype tie-break: all-zero alphas pick node0/node1 and the first non-none op") {
  Rng rng(18);
  AlphaSet alphas("a", full_catalog_vec(), rng);
  for (auto& p : alphas.edges) std::fill(p.value.data.begin(), p.value.data.end(), 0.0f);
  CellGenotype g = derive_genotype(alphas, false);
  for (int j = 0; j < kCellInternalNodes; ++j) {
    CHECK(g.nodes[j][0].src == 0);
    CHECK(g.nodes[j][1].src == 1);
    CHECK(g.nodes[j][0].op == OpKind::skip_connect);
    CHECK(g.nodes[j][1].op == OpKind::skip_connect);
  }
}

TEST_CASE("derive_genotype excludes 'none' even at weight 0.99") {
  Rng rng(19);
  AlphaSet alphas("a", {OpKind::none, OpKind::skip_connect, OpKind::sep_conv_3x3}, rng);
  for (int e = 0; e < kCellEdges; ++e) {
    alphas.edges[e].value.data[0] = 8.0f;   // none dominates the softmax
    alphas.edges[e].value.data[1] = 2.0f;   // skip
    alphas.edges[e].value.data[2] = 0.0f;   // sep conv
  }
  CellGenotype g = derive_genotype(alphas, false);
  for (int j = 0; j < kCellInternalNodes; ++j)
    for (const auto& e : g.nodes[j]) CHECK(e.op == OpKind::skip_connect);
}

TEST_CASE("derive_genotype equals the exhaustive oracle on random alphas") {
  Rng rng(20);
  for (int trial = 0; trial < 200; ++trial) {
    AlphaSet alphas("a", full_catalog_vec(), rng);
    for (auto& p : alphas.edges)
      for (auto& v : p.value.data) v = rng.uniform(-3.0f, 3.0f);
    CellGenotype got = derive_genotype(alphas, trial % 2 == 0);

    // oracle: per edge, enumerate softmax weights; argmax excluding none;
    // per node, enumerate all source pairs and keep the two best scores
    for (int j = 0; j < kCellInternalNodes; ++j) {
      const int node = kCellInputNodes + j;
      std::vector<std::pair<float, std::pair<int, OpKind>>> scored;
      for (int from = 0; from < node; ++from) {
        auto w = alphas.softmax_edge(cell_edge_index(from, node));
        float best = -1.0f;
        OpKind bk = OpKind::none;
        for (size_t i = 0; i < alphas.active.size(); ++i) {
          if (alphas.active[i] == OpKind::none) continue;
          if (w[i] > best) {
            best = w[i];
            bk = alphas.active[i];
          }
        }
        scored.push_back({best, {from, bk}});
      }
      std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second.first < b.second.first;
      });
      std::array<GenotypeEdge, 2> want{
          GenotypeEdge{scored[0].second.first, scored[0].second.second},
          GenotypeEdge{scored[1].second.first, scored[1].second.second}};
      if (want[0].src > want[1].src) std::swap(want[0], want[1]);
      CHECK(got.nodes[j][0] == want[0]);
      CHECK(got.nodes[j][1] == want[1]);
    }
  }
}

TEST_CASE("derived genotypes stay legal at extreme alpha values") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    AlphaSet alphas("a", full_catalog_vec(), rng);
    for (auto& p : alphas.edges)
      for (auto& v : p.value.data) {
        const int r = rng.uniform_int(0, 3);
        v = r == 0 ? 1e6f : (r == 1 ? -1e6f : rng.uniform(-5.0f, 5.0f));
      }
    CellGenotype g = derive_genotype(alphas, false);
    CHECK_NOTHROW(validate_genotype(g));
  }
}

TEST_CASE("edge monotonicity: raising an op's alpha never evicts it") {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    AlphaSet alphas("a", full_catalog_vec(), rng);
    for (auto& p : alphas.edges)
      for (auto& v : p.value.data) v = rng.uniform(-2.0f, 2.0f);
    CellGenotype before = derive_genotype(alphas, false);

    const int e = rng.uniform_int(0, kCellEdges - 1);
    int op_idx = rng.uniform_int(1, static_cast<int>(alphas.active.size()) - 1);  // skip none
    const OpKind k = alphas.active[op_idx];
    const EdgeSpec es = cell_edge_list()[e];

    const bool was_in = [&] {
      for (const auto& ge : before.nodes[es.to - kCellInputNodes])
        if (ge.src == es.from && ge.op == k) return true;
      return false;
    }();

    alphas.edges[e].value.data[op_idx] += rng.uniform(0.1f, 3.0f);
    CellGenotype after = derive_genotype(alphas, false);
    if (was_in) {
      bool still_in = false;
      for (const auto& ge : after.nodes[es.to - kCellInputNodes])
        if (ge.src == es.from && ge.op == k) still_in = true;
      CHECK(still_in);
    }
  }
}

TEST_CASE("genotype_forward: all-skip genotype matches the DAG oracle") {
  Rng rng(23);
  CellGenotype g;
  g.reduction = false;
  for (int j = 0; j < kCellInternalNodes; ++j)
    g.nodes[j] = {GenotypeEdge{0, OpKind::skip_connect}, GenotypeEdge{1, OpKind::skip_connect}};
  DiscreteCell cell(g, {4, 4, 4, false, false}, "d", rng);
  Tensor x = oracle::random_tensor({1, 4, 5, 5}, rng);
  Tensor got = cell.forward(x, x, nullptr);
  Tensor want = dag_discrete_oracle(cell, x, x);
  CHECK(oracle::max_abs_diff(got, want) < 1e-6);
}

TEST_CASE("single-path cell output ignores the unused input") {
  Rng rng(24);
  // legal two-edge genotype to construct, then rewire to a single chain off
  // input node 1 (the generalized node wiring permits it)
  CellGenotype g;
  g.reduction = false;
  for (int j = 0; j < kCellInternalNodes; ++j)
    g.nodes[j] = {GenotypeEdge{0, OpKind::sep_conv_3x3}, GenotypeEdge{1, OpKind::sep_conv_3x3}};
  DiscreteCell cell(g, {4, 4, 4, false, false}, "d", rng);
  for (int j = 0; j < kCellInternalNodes; ++j) {
    cell.nodes[j].clear();
    DiscreteCell::NodeEdge ne;
    ne.from = j + 1;  // 1 -> 2 -> 3 -> 4 -> 5 chain
    ne.op = instantiate_op(OpKind::sep_conv_3x3, 4, 4, 1, "chain", rng);
    cell.nodes[j].push_back(std::move(ne));
  }
  Tensor a = oracle::random_tensor({1, 4, 5, 5}, rng);
  Tensor b = oracle::random_tensor({1, 4, 5, 5}, rng);
  Tensor zero(Shape4{1, 4, 5, 5}, 0.0f);
  Tensor y1 = cell.forward(a, b, nullptr);
  Tensor y2 = cell.forward(zero, b, nullptr);
  CHECK(oracle::max_abs_diff(y1, y2) == 0.0);
}

TEST_CASE("saturated supernet equals the derived discrete cell") {
  Rng rng(25);
  for (bool reduction : {false, true}) {
    AlphaSet alphas("a", full_catalog_vec(), rng);
    CellGenotype target = random_genotype(alphas.active, reduction, rng);
    // retained edges: +40 logit gap toward the target op; every other edge
    // saturates to 'none'
    for (int e = 0; e < kCellEdges; ++e) set_edge_alpha(alphas, e, OpKind::none, 20.0f, -20.0f);
    for (int j = 0; j < kCellInternalNodes; ++j)
      for (const auto& ge : target.nodes[j])
        set_edge_alpha(alphas, cell_edge_index(ge.src, kCellInputNodes + j), ge.op, 20.0f,
                       -20.0f);

    CHECK(derive_genotype(alphas, reduction) == target);

    MixedCell cell({6, 6, 4, reduction, false}, &alphas, "cell", rng);
    auto discrete = DiscreteCell::from_supernet(cell, target, "derived", rng);

    Tensor s0 = oracle::random_tensor({1, 6, 6, 6}, rng);
    Tensor s1 = oracle::random_tensor({1, 6, 6, 6}, rng);
    Tensor a = cell.forward(s0, s1, nullptr);
    Tensor b = discrete->forward(s0, s1, nullptr);
    CHECK(a.shape == b.shape);
    CHECK(oracle::max_abs_diff(a, b) < 1e-5);
  }
}

TEST_CASE("alpha drop removes exactly one column and the matching ops") {
  Rng rng(26);
  AlphaSet alphas("a", full_catalog_vec(), rng);
  for (auto& p : alphas.edges)
    for (auto& v : p.value.data) v = rng.uniform(-1.0f, 1.0f);
  MixedCell cell({4, 4, 4, false, false}, &alphas, "cell", rng);

  const std::vector<float> before = alphas.edges[3].value.data;
  const int drop_idx = alphas.index_of(OpKind::dil_conv_3x3);
  cell.drop_op(OpKind::dil_conv_3x3);  // cells first: they index into the alpha columns
  alphas.drop(OpKind::dil_conv_3x3);

  CHECK(alphas.active.size() == kFullCatalog.size() - 1);
  CHECK(alphas.index_of(OpKind::dil_conv_3x3) == -1);
  CHECK(cell.edges[0].ops.size() == alphas.active.size());
  // surviving logits keep their values
  int j = 0;
  for (size_t i = 0; i < before.size(); ++i) {
    if (static_cast<int>(i) == drop_idx) continue;
    CHECK(alphas.edges[3].value.data[j++] == before[i]);
  }
  CHECK_THROWS_AS(alphas.drop(OpKind::none), UsageError);

  Tensor x = oracle::random_tensor({1, 4, 4, 4}, rng);
  CHECK_NOTHROW(cell.forward(x, x, nullptr));
}

TEST_CASE("cell parameter copy reproduces outputs exactly") {
  Rng rng(27);
  AlphaSet alphas("a", full_catalog_vec(), rng);
  MixedCell a({6, 6, 4, false, false}, &alphas, "a", rng);
  MixedCell b({6, 6, 4, false, false}, &alphas, "b", rng);
  b.copy_params_from(a);
  Tensor s0 = oracle::random_tensor({1, 6, 5, 5}, rng);
  Tensor s1 = oracle::random_tensor({1, 6, 5, 5}, rng);
  CHECK(oracle::max_abs_diff(a.forward(s0, s1, nullptr), b.forward(s0, s1, nullptr)) == 0.0);
}
