#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "hasa/reaggregate.hpp"
#include "hasa/serialize.hpp"
#include "oracles.hpp"

using namespace hasa;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<Backbone> tiny_backbone(uint64_t seed = 3) {
  Rng rng(seed);
  BackboneSpec spec = BackboneSpec::desk_default();
  spec.pretext_seed = seed;
  return std::make_shared<Backbone>(spec, rng);
}

CellGenotype mixed_genotype(Rng& rng, bool reduction) {
  return random_genotype(std::vector<OpKind>(kFullCatalog.begin(), kFullCatalog.end()),
                         reduction, rng);
}

fs::path temp_dir() {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() / ("hasa_test_" + std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// dense re-aggregation
// ---------------------------------------------------------------------------

TEST_CASE("dense rewrite of a short chain equals the sequential model exactly") {
  auto bb = tiny_backbone();
  Rng grng(1);
  ClassifierBuild build;
  build.n_cells = 3;  // groups of size <= 1: the rewrite adds nothing
  build.channels = 4;
  build.seed = 7;
  ClassifierModel seq(bb, build, mixed_genotype(grng, false), mixed_genotype(grng, true));
  auto dense_model = reaggregate_dense(seq);

  Rng rng(2);
  Tensor x = oracle::random_tensor({1, 1, 64, 64}, rng);
  CHECK(oracle::max_abs_diff(seq.forward(x, nullptr), dense_model->forward(x, nullptr)) == 0.0);
  CHECK(dense_extra_connections(*dense_model) == 0);
}

TEST_CASE("identity-initialized dense rewrite reproduces sequential forward") {
  auto bb = tiny_backbone(5);
  Rng grng(3);
  ClassifierBuild build;
  build.n_cells = 9;  // groups of 3 and 4 normal cells
  build.channels = 4;
  build.seed = 11;
  ClassifierModel seq(bb, build, mixed_genotype(grng, false), mixed_genotype(grng, true));
  auto dense_model = reaggregate_dense(seq);

  // (n-1)(n-2)/2 per group: 3-cell group adds 1, 4-cell group adds 3
  CHECK(dense_extra_connections(*dense_model) == 4);

  Rng rng(4);
  Tensor x = oracle::random_tensor({2, 1, 64, 64}, rng);
  Tensor a = seq.forward(x, nullptr);
  Tensor b = dense_model->forward(x, nullptr);
  CHECK(oracle::max_abs_diff(a, b) < 1e-5);

  // genotype-preserving: rewrite-then-read equals derive-then-rewrite
  CHECK(dense_model->genotype_normal == seq.genotype_normal);
  CHECK(dense_model->genotype_reduction == seq.genotype_reduction);
  // the input model is not mutated: rerunning it gives identical numbers
  CHECK(oracle::max_abs_diff(seq.forward(x, nullptr), a) == 0.0);
}

TEST_CASE("verify_rewrite accepts honest rewrites across random genotypes") {
  auto bb = tiny_backbone(9);
  Rng grng(13);
  for (int trial = 0; trial < 20; ++trial) {
    ClassifierBuild build;
    build.n_cells = 5;
    build.channels = 4;
    build.seed = 100 + trial;
    ClassifierModel seq(bb, build, mixed_genotype(grng, false), mixed_genotype(grng, true));
    auto dense_model = reaggregate_dense(seq);
    RewriteReport rep = verify_rewrite(seq, *dense_model);
    INFO(rep.detail);
    CHECK(rep.ok());
    for (const auto& name : rep.added_names) CHECK(name.rfind("reagg.", 0) == 0);
  }
}

TEST_CASE("verify_rewrite flags a mutated cell weight") {
  auto bb = tiny_backbone(15);
  Rng grng(17);
  ClassifierBuild build;
  build.n_cells = 5;
  build.channels = 4;
  build.seed = 19;
  ClassifierModel seq(bb, build, mixed_genotype(grng, false), mixed_genotype(grng, true));
  auto dense_model = reaggregate_dense(seq);

  // deliberate corruption of one cell parameter
  std::vector<Parameter*> ps;
  dense_model->cells[2]->collect(ps);
  ps[3]->value.data[0] += 0.5f;
  RewriteReport rep = verify_rewrite(seq, *dense_model);
  CHECK(!rep.cell_params_equal);
  CHECK(!rep.ok());
}

TEST_CASE("dense rewrite adds exactly the projection parameters") {
  auto bb = tiny_backbone(25);
  Rng grng(23);
  ClassifierBuild build;
  build.n_cells = 9;
  build.channels = 4;
  build.seed = 29;
  ClassifierModel seq(bb, build, mixed_genotype(grng, false), mixed_genotype(grng, true));
  auto dense_model = reaggregate_dense(seq);
  RewriteReport rep = verify_rewrite(seq, *dense_model);
  CHECK(rep.ok());

  int64_t expected = 0;
  for (const auto& g : dense_model->dense_groups)
    for (const auto& p : g.projections) expected += p->weight.value.shape.numel();
  CHECK(rep.added_param_count == expected);
}

// ---------------------------------------------------------------------------
// aspp re-aggregation
// ---------------------------------------------------------------------------

TEST_CASE("aspp rewrite keeps cells and emits input-resolution predictions") {
  auto bb = tiny_backbone(35);
  Rng grng(31);
  SegBuild build;
  build.cells_per_block = 2;
  build.channels = 4;
  build.seed = 37;
  CellGenotype g = mixed_genotype(grng, false);
  SegModel seq(bb, build, g);
  auto aspp_model = reaggregate_aspp(seq);

  RewriteReport rep = verify_rewrite(seq, *aspp_model);
  INFO(rep.detail);
  CHECK(rep.ok());
  for (const auto& name : rep.added_names) CHECK(name.rfind("aspp.", 0) == 0);

  Rng rng(6);
  Tensor x = oracle::random_tensor({1, 1, 64, 64}, rng);
  CHECK(aspp_model->forward(x, nullptr).shape == Shape4{1, 3, 64, 64});
  CHECK(aspp_model->genotype == seq.genotype);
}

TEST_CASE("aspp fusion point doubles the low-res tap size") {
  Rng rng(7);
  AsppHead head("aspp", 32, 48, {1, 2, 4, 8}, 16, rng);
  Tensor hi = oracle::random_tensor({1, 32, 16, 16}, rng);
  Tensor lo = oracle::random_tensor({1, 48, 8, 8}, rng);
  Tensor fused = head.forward(hi, lo, nullptr);
  CHECK(fused.shape == Shape4{1, 48, 16, 16});  // 8x8 in -> 16x16 at the fusion point

  Tensor bad = oracle::random_tensor({1, 48, 6, 6}, rng);
  CHECK_THROWS_AS(head.forward(hi, bad, nullptr), DimensionError);
}

TEST_CASE("equal rates with identical branch weights make identical branches") {
  Rng rng(8);
  AsppHead head("aspp", 8, 8, {2, 2, 2, 2}, 4, rng);
  // copy branch 0's weights into every branch
  for (size_t i = 1; i < head.branches.size(); ++i) {
    head.branches[i].weight.value.data = head.branches[0].weight.value.data;
    head.branch_norms[i].gamma.value.data = head.branch_norms[0].gamma.value.data;
    head.branch_norms[i].beta.value.data = head.branch_norms[0].beta.value.data;
  }
  Tensor hi = oracle::random_tensor({1, 8, 8, 8}, rng);
  Tensor lo = oracle::random_tensor({1, 8, 4, 4}, rng);
  Tensor cat = concat_channels({hi, bilinear_upsample(lo, 2)});
  Tensor b0 = head.branches[0].forward(cat, nullptr);
  for (size_t i = 1; i < head.branches.size(); ++i)
    CHECK(oracle::max_abs_diff(head.branches[i].forward(cat, nullptr), b0) == 0.0);
}

TEST_CASE("aspp rewrite rejects non-increasing rates and bad tap ratios") {
  auto bb = tiny_backbone(45);
  Rng grng(41);
  SegBuild build;
  build.cells_per_block = 2;
  build.channels = 4;
  build.seed = 43;
  build.aggregation = AggregationMode::aspp;
  build.aspp_rates = {1, 4, 2, 8};
  CHECK_THROWS_AS(SegModel(bb, build, mixed_genotype(grng, false)), ConfigError);
}

TEST_CASE("a rate-4 branch responds exactly at taps offset by 4") {
  // one-hot 3x3 kernel at dilation 4: the impulse response lands 4 pixels away
  Tensor x({1, 1, 11, 11}, 0.0f);
  x.at(0, 0, 5, 5) = 1.0f;
  Tensor w({1, 1, 3, 3}, 0.0f);
  w.at(0, 0, 0, 0) = 1.0f;  // top-left tap
  Tensor y = conv2d(x, w, nullptr, {1, 4, 4, 1});
  CHECK(y.shape == Shape4{1, 1, 11, 11});
  for (int yy = 0; yy < 11; ++yy)
    for (int xx = 0; xx < 11; ++xx)
      CHECK(y.at(0, 0, yy, xx) == (yy == 9 && xx == 9 ? 1.0f : 0.0f));
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

TEST_CASE("genotype files round-trip byte for byte") {
  Rng rng(51);
  GenotypeFile g;
  g.task = "classification";
  for (OpKind k : kFullCatalog) g.active_op_catalog.emplace_back(op_kind_name(k));
  g.normal = mixed_genotype(rng, false);
  g.reduction = mixed_genotype(rng, true);
  g.provenance.seed = 42;
  g.provenance.config_hash = "cafe";
  g.provenance.dropped_ops = {"max_pool_3x3", "dil_conv_5x5"};

  const std::string text = genotype_to_json(g);
  GenotypeFile loaded = genotype_from_json(text);
  CHECK(genotype_to_json(loaded) == text);
  CHECK(loaded.normal == g.normal);
  CHECK(loaded.reduction == g.reduction);
  CHECK(loaded.provenance.dropped_ops == g.provenance.dropped_ops);

  fs::path dir = temp_dir();
  save_genotype(g, dir / "genotype.json");
  CHECK(genotype_to_json(load_genotype(dir / "genotype.json")) == text);
}

TEST_CASE("genotype loading rejects corruption, bad versions, unknown ops") {
  Rng rng(52);
  GenotypeFile g;
  g.task = "classification";
  for (OpKind k : kFullCatalog) g.active_op_catalog.emplace_back(op_kind_name(k));
  g.normal = mixed_genotype(rng, false);
  std::string text = genotype_to_json(g);

  SUBCASE("flipped payload byte fails the checksum") {
    const size_t pos = text.find("\"src\"");
    std::string bad = text;
    bad[pos + 8] = bad[pos + 8] == '0' ? '1' : '0';
    CHECK_THROWS_AS(genotype_from_json(bad), IoError);
  }
  SUBCASE("unsupported version is an explicit error") {
    std::string bad = text;
    bad.replace(bad.find("\"format_version\": 1"), 19, "\"format_version\": 9");
    CHECK_THROWS_AS(genotype_from_json(bad), IoError);
  }
  SUBCASE("unknown op names never default silently") {
    std::string bad = text;
    const size_t pos = bad.find("skip_connect");
    if (pos != std::string::npos) bad.replace(pos, 12, "warp_conv_9x");
    CHECK_THROWS_AS(genotype_from_json(bad), IoError);
  }
}

TEST_CASE("checkpoints round-trip and detect corruption") {
  fs::path dir = temp_dir();
  Rng rng(53);
  Parameter a("w.a", oracle::random_tensor({2, 3, 4, 5}, rng));
  Parameter b("w.b", oracle::random_tensor({1, 7, 1, 1}, rng));
  CheckpointMeta meta;
  meta.kind = "model";
  meta.task = "classification";
  meta.seed = 9;
  save_checkpoint(dir / "m.ckpt", meta, {{"w.a", &a}, {"w.b", &b}});

  LoadedCheckpoint ck = load_checkpoint(dir / "m.ckpt");
  CHECK(ck.meta.seed == 9);
  REQUIRE(ck.tensors.size() == 2);
  CHECK(ck.tensors[0].second.data == a.value.data);
  CHECK(ck.tensors[1].second.data == b.value.data);

  // single corrupted payload byte
  std::string bytes = read_file(dir / "m.ckpt");
  bytes[bytes.size() / 2] ^= 0x40;
  atomic_write(dir / "bad.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), IoError);
}

TEST_CASE("classifier checkpoints rebuild an identical model") {
  auto bb = tiny_backbone(55);
  bb->freeze_through(2);
  Rng grng(55);
  ClassifierBuild build;
  build.n_cells = 3;
  build.channels = 4;
  build.seed = 21;
  ClassifierModel model(bb, build, mixed_genotype(grng, false), mixed_genotype(grng, true));

  fs::path dir = temp_dir();
  save_classifier(dir / "cls.ckpt", model, 21, "hash");
  auto loaded = load_classifier(dir / "cls.ckpt");

  Rng rng(56);
  Tensor x = oracle::random_tensor({1, 1, 64, 64}, rng);
  CHECK(oracle::max_abs_diff(model.forward(x, nullptr), loaded->forward(x, nullptr)) == 0.0);
}

TEST_CASE("segmenter checkpoints rebuild an identical model") {
  auto bb = tiny_backbone(57);
  Rng grng(57);
  SegBuild build;
  build.cells_per_block = 2;
  build.channels = 4;
  build.seed = 23;
  SegModel model(bb, build, mixed_genotype(grng, false));
  fs::path dir = temp_dir();
  save_segmenter(dir / "seg.ckpt", model, 23, "hash");
  auto loaded = load_segmenter(dir / "seg.ckpt");
  Rng rng(58);
  Tensor x = oracle::random_tensor({1, 1, 64, 64}, rng);
  CHECK(oracle::max_abs_diff(model.forward(x, nullptr), loaded->forward(x, nullptr)) == 0.0);
}

TEST_CASE("run configs load presets and report bad fields by path") {
  RunConfig c = run_config_from_json(R"({"preset": "paper-class", "seed": 5})");
  CHECK(c.search.initial_cells == 5);
  CHECK(c.search.K == 3);
  CHECK(c.search.epochs_per_stage == 25);
  CHECK(c.search.batch_size == 36);
  CHECK(c.search.weight_lr == doctest::Approx(0.025f));

  try {
    run_config_from_json(R"({"preset": "desk-class", "search": {"K": "three"}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("search.K") != std::string::npos);
  }
  CHECK_THROWS_AS(run_config_from_json(R"({"preset": "warp"})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"task": "detection"})"), ConfigError);
}

TEST_CASE("config hash is stable and value-sensitive") {
  RunConfig a = run_config_from_json(R"({"preset": "desk-class"})");
  RunConfig b = run_config_from_json(R"({"preset": "desk-class"})");
  CHECK(config_hash(a) == config_hash(b));
  RunConfig c = run_config_from_json(R"({"preset": "desk-class", "seed": 2})");
  CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("datasets materialize and reload bit for bit") {
  fs::path dir = temp_dir();
  ClassDataset ds = gen_classification_set(2, 16, 61);
  materialize_dataset(ds, dir / "cls");
  ClassDataset loaded = load_class_dataset(dir / "cls");
  REQUIRE(loaded.samples.size() == ds.samples.size());
  CHECK(loaded.mean == ds.mean);
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(loaded.samples[i].image.data == ds.samples[i].image.data);
    CHECK(loaded.samples[i].label == ds.samples[i].label);
    CHECK(loaded.samples[i].subject_id == ds.samples[i].subject_id);
  }

  SegDataset sds = gen_segmentation_set(3, 16, 62);
  materialize_dataset(sds, dir / "seg");
  SegDataset sloaded = load_seg_dataset(dir / "seg");
  REQUIRE(sloaded.samples.size() == 3);
  for (size_t i = 0; i < sds.samples.size(); ++i) {
    CHECK(sloaded.samples[i].image.data == sds.samples[i].image.data);
    CHECK(sloaded.samples[i].mask.v == sds.samples[i].mask.v);
  }
}

TEST_CASE("search reports serialize losslessly") {
  SearchReport r;
  r.task = "classification";
  r.seed = 3;
  r.config_hash = "beef";
  r.final_cell_count = 7;
  r.dropped_sequence = {"max_pool_3x3"};
  StageRecord rec;
  rec.stage = 0;
  rec.cell_count = 5;
  rec.active_ops = {"none", "skip_connect"};
  rec.train_loss = {2.0f, 1.5f};
  rec.val_loss = {2.1f, 1.6f};
  r.stages.push_back(rec);
  SearchReport r2 = search_report_from_json(search_report_to_json(r));
  CHECK(search_report_to_json(r2) == search_report_to_json(r));
}

TEST_CASE("interrupted search resumes to the identical genotype") {
  ClassDataset ds = gen_classification_set(4, 32, 71);
  SearchConfig cfg = SearchConfig::desk_class();
  cfg.K = 2;
  cfg.initial_cells = 2;
  cfg.channels = 4;
  cfg.epochs_per_stage = 1;
  cfg.batch_size = 8;
  cfg.seed = 73;

  // uninterrupted run
  auto bb1 = tiny_backbone(71);
  SearchResult full = run_search(cfg, bb1, ds);

  // run to the end of stage 0, checkpoint, resume in a fresh driver
  fs::path dir = temp_dir();
  {
    auto bb2 = tiny_backbone(71);
    ClassifierSearch search(cfg, bb2, ds);
    search.train_stage();
    save_search_state(dir / "stage0.ckpt", search, "h");
  }
  {
    auto bb3 = tiny_backbone(71);
    ClassifierSearch search(cfg, bb3, ds);
    resume_search_state(dir / "stage0.ckpt", search);
    while (!search.done()) {
      search.advance_stage();
      search.train_stage();
    }
    SearchResult resumed = search.finish(0.0);
    CHECK(resumed.normal == full.normal);
    CHECK(resumed.reduction == full.reduction);
    CHECK(resumed.report.dropped_sequence == full.report.dropped_sequence);
  }
}

TEST_CASE("metrics csv is deterministic") {
  const std::string a = metrics_csv("model", 1, {{"accuracy", "all", 0.912345678}});
  const std::string b = metrics_csv("model", 1, {{"accuracy", "all", 0.912345678}});
  CHECK(a == b);
  CHECK(a.find("model,1,accuracy,all,0.912345678") != std::string::npos);
}
