// Command-line driver: gen-data | search | derive | reaggregate | train |
// eval | report. One command per process; artifacts land under the output
// directory with provenance (config hash + seed) embedded.

#include <chrono>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hasa/reaggregate.hpp"
#include "hasa/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hasa;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  int64_t seed_override = -1;
};

RunConfig effective_config(const GlobalArgs& g) {
  RunConfig cfg = g.config_path.empty() ? run_config_from_json("{\"preset\":\"desk-class\"}")
                                        : load_run_config(g.config_path);
  if (g.seed_override >= 0) {
    cfg.seed = static_cast<uint64_t>(g.seed_override);
    cfg.search.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
  }
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  if (const char* env = std::getenv("HASA_OUT")) cfg.out_dir = env;
  cfg.validate();
  return cfg;
}

std::shared_ptr<Backbone> build_or_load_backbone(const RunConfig& cfg, const fs::path& out,
                                                 const std::string& stem_path, bool pretext) {
  if (!stem_path.empty()) return load_backbone(stem_path);
  const fs::path cached = out / "backbone.ckpt";
  if (fs::exists(cached)) return load_backbone(cached);
  if (!pretext)
    throw ConfigError("no stem checkpoint found and pretext training is disabled "
                      "(--stem or enable pretext)");
  BackboneSpec spec = BackboneSpec::desk_default();
  spec.pretext_seed = cfg.pretext_seed;
  Rng rng(spec.pretext_seed);
  auto bb = std::make_shared<Backbone>(spec, rng);
  pretext_train(*bb, cfg.pretext_images, 32, cfg.pretext_epochs, cfg.pretext_batch,
                cfg.pretext_lr);
  save_backbone(cached, *bb, spec.pretext_seed);
  return bb;
}

ClassDataset class_train_set(const RunConfig& cfg) {
  return gen_classification_set(cfg.train_per_class, cfg.image_size, cfg.data_seed);
}
ClassDataset class_test_set(const RunConfig& cfg) {
  return gen_classification_set(cfg.test_per_class, cfg.image_size,
                                splitmix64(cfg.data_seed ^ 0x7e57));
}
SegDataset seg_train_set(const RunConfig& cfg) {
  return gen_segmentation_set(cfg.train_count, cfg.image_size, cfg.data_seed);
}
SegDataset seg_test_set(const RunConfig& cfg) {
  return gen_segmentation_set(cfg.test_count, cfg.image_size,
                              splitmix64(cfg.data_seed ^ 0x7e57));
}

GenotypeFile make_genotype_file(const RunConfig& cfg, const SearchResult& res) {
  GenotypeFile g;
  g.task = cfg.task;
  for (OpKind k : cfg.search.active_ops()) g.active_op_catalog.emplace_back(op_kind_name(k));
  g.normal = res.normal;
  g.reduction = res.reduction;
  g.provenance.seed = cfg.seed;
  g.provenance.config_hash = config_hash(cfg);
  g.provenance.dropped_ops = res.report.dropped_sequence;
  return g;
}

int cmd_gen_data(const GlobalArgs& g) {
  RunConfig cfg = effective_config(g);
  const fs::path out = fs::path(cfg.out_dir) / "data";
  if (cfg.task == "classification") {
    materialize_dataset(class_train_set(cfg), out / "train");
    materialize_dataset(class_test_set(cfg), out / "test");
  } else {
    materialize_dataset(seg_train_set(cfg), out / "train");
    materialize_dataset(seg_test_set(cfg), out / "test");
  }
  std::cout << "datasets written to " << out << "\n";
  return 0;
}

int cmd_search(const GlobalArgs& g, const std::string& stem, bool resume, int stop_after) {
  RunConfig cfg = effective_config(g);
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  auto bb = build_or_load_backbone(cfg, out, stem, true);
  const std::string hash = config_hash(cfg);
  const auto t0 = std::chrono::steady_clock::now();

  auto finalize = [&](SearchResult res) {
    res.report.config_hash = hash;
    save_genotype(make_genotype_file(cfg, res), out / "genotype.json");
    atomic_write(out / "search_report.json", search_report_to_json(res.report));
    std::cout << "search finished: " << res.report.final_cell_count << " cells, dropped [";
    for (size_t i = 0; i < res.report.dropped_sequence.size(); ++i)
      std::cout << (i ? " " : "") << res.report.dropped_sequence[i];
    std::cout << "]\n";
  };

  auto run_driver = [&](auto& search) {
    if (resume) {
      int last = -1;
      for (int k = 0; k <= search.cfg.K; ++k)
        if (fs::exists(out / ("stage" + std::to_string(k) + ".ckpt"))) last = k;
      if (last < 0) throw IoError("resume requested but no stage checkpoint found");
      resume_search_state(out / ("stage" + std::to_string(last) + ".ckpt"), search);
    } else {
      search.train_stage();
      save_search_state(out / "stage0.ckpt", search, hash);
      if (stop_after == 0) return false;
    }
    while (!search.done()) {
      search.advance_stage();
      search.train_stage();
      save_search_state(out / ("stage" + std::to_string(search.stage()) + ".ckpt"), search,
                        hash);
      if (stop_after >= 0 && search.stage() >= stop_after && !search.done()) return false;
    }
    return true;
  };

  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  if (cfg.task == "classification") {
    ClassDataset data = class_train_set(cfg);
    ClassifierSearch search(cfg.search, bb, data);
    if (run_driver(search)) finalize(search.finish(elapsed()));
  } else {
    SegDataset data = seg_train_set(cfg);
    SegSearch search(cfg.search, bb, data);
    if (run_driver(search)) finalize(search.finish(elapsed()));
  }
  return 0;
}

int cmd_derive(const GlobalArgs& g, const std::string& ckpt_path) {
  RunConfig cfg = effective_config(g);
  const fs::path out(cfg.out_dir);
  auto bb = [&] {
    LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    BackboneSpec spec = backbone_spec_from_json(ck.meta.backbone_spec_json);
    Rng rng(spec.pretext_seed);
    return std::make_shared<Backbone>(spec, rng);
  }();
  SearchResult res;
  if (cfg.task == "classification") {
    ClassDataset data = class_train_set(cfg);
    ClassifierSearch search(cfg.search, bb, data);
    resume_search_state(ckpt_path, search);
    res = search.finish(0.0);
  } else {
    SegDataset data = seg_train_set(cfg);
    SegSearch search(cfg.search, bb, data);
    resume_search_state(ckpt_path, search);
    res = search.finish(0.0);
  }
  res.report.config_hash = config_hash(cfg);
  save_genotype(make_genotype_file(cfg, res), out / "genotype.json");
  std::cout << "genotype written to " << (out / "genotype.json") << "\n";
  return 0;
}

int cmd_train(const GlobalArgs& g, const std::string& genotype_path,
              const std::string& init_from, bool finetune) {
  RunConfig cfg = effective_config(g);
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  const std::string hash = config_hash(cfg);
  TrainOpts opts = cfg.train;
  if (finetune) {
    opts.lr_start *= 0.1f;  // re-aggregation fine-tuning runs at a tenth of the rate
    opts.lr_end *= 0.1f;
  }

  json curves;
  if (cfg.task == "classification") {
    ClassDataset train_set = class_train_set(cfg);
    std::unique_ptr<ClassifierModel> model;
    std::shared_ptr<Backbone> bb;
    if (!init_from.empty()) {
      model = load_classifier(init_from);
    } else {
      GenotypeFile gf = load_genotype(genotype_path);
      bb = build_or_load_backbone(cfg, out, "", true);
      ClassifierBuild build;
      build.n_cells = cfg.eval_cells;
      build.channels = cfg.eval_channels;
      build.keep_stages = cfg.keep_stages;
      build.aggregation = *aggregation_mode_from_name(cfg.aggregation);
      build.seed = cfg.seed;
      std::optional<CellGenotype> reduction = gf.reduction;
      model = std::make_unique<ClassifierModel>(bb, build, gf.normal, reduction);
    }
    const std::vector<float> curve = train_classifier(*model, train_set, opts);
    curves["train_loss"] = curve;
    save_classifier(out / "model.ckpt", *model, cfg.seed, hash);
  } else {
    SegDataset train_set = seg_train_set(cfg);
    std::unique_ptr<SegModel> model;
    if (!init_from.empty()) {
      model = load_segmenter(init_from);
    } else {
      GenotypeFile gf = load_genotype(genotype_path);
      auto bb = build_or_load_backbone(cfg, out, "", true);
      SegBuild build;
      build.cells_per_block = cfg.eval_cells;
      build.channels = cfg.eval_channels;
      build.aggregation = *aggregation_mode_from_name(cfg.aggregation);
      build.seed = cfg.seed;
      model = std::make_unique<SegModel>(bb, build, gf.normal);
    }
    const std::vector<float> curve = train_segmenter(*model, train_set, opts);
    curves["train_loss"] = curve;
    save_segmenter(out / "model.ckpt", *model, cfg.seed, hash);
  }
  atomic_write(out / "train_curves.json", curves.dump(2) + "\n");
  std::cout << "model written to " << (out / "model.ckpt") << "\n";
  return 0;
}

int cmd_reaggregate(const GlobalArgs& g, const std::string& ckpt_path, const std::string& mode) {
  RunConfig cfg = effective_config(g);
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  const std::string hash = config_hash(cfg);

  json report;
  if (mode == "dense") {
    auto seq = load_classifier(ckpt_path);
    auto rewritten = reaggregate_dense(*seq);
    RewriteReport rep = verify_rewrite(*seq, *rewritten);
    if (!rep.ok()) throw NumericError("rewrite integrity check failed: " + rep.detail);
    save_classifier(out / "model_dense.ckpt", *rewritten, cfg.seed, hash);
    report["mode"] = "dense";
    report["added_param_count"] = rep.added_param_count;
    report["extra_connections"] = dense_extra_connections(*rewritten);
    report["cell_params_equal"] = rep.cell_params_equal;
  } else if (mode == "aspp") {
    auto seq = load_segmenter(ckpt_path);
    auto rewritten = reaggregate_aspp(*seq);
    RewriteReport rep = verify_rewrite(*seq, *rewritten);
    if (!rep.ok()) throw NumericError("rewrite integrity check failed: " + rep.detail);
    save_segmenter(out / "model_aspp.ckpt", *rewritten, cfg.seed, hash);
    report["mode"] = "aspp";
    report["added_param_count"] = rep.added_param_count;
    report["cell_params_equal"] = rep.cell_params_equal;
  } else {
    throw ConfigError("reaggregate: mode must be dense or aspp, got '" + mode + "'");
  }
  atomic_write(out / "rewrite_report.json", report.dump(2) + "\n");
  std::cout << "rewritten model written under " << out << "\n";
  return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& ckpt_path, const std::string& compare) {
  RunConfig cfg = effective_config(g);
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);

  std::vector<std::tuple<std::string, std::string, double>> rows;
  json extra;
  if (cfg.task == "classification") {
    ClassDataset test = class_test_set(cfg);
    auto model = load_classifier(ckpt_path);
    ClsEval ev = eval_classifier(*model, test);
    rows = {{"accuracy", "all", ev.metrics.accuracy},
            {"precision", "all", ev.metrics.precision},
            {"recall", "all", ev.metrics.recall},
            {"f1", "all", ev.metrics.f1}};
    atomic_write(out / "confusion.csv", confusion_csv(ev.cm));
    if (!compare.empty()) {
      auto other = load_classifier(compare);
      ClsEval ev2 = eval_classifier(*other, test);
      TTestResult t = paired_t_test(ev.gt_probs, ev2.gt_probs);
      extra["paired_t"] = {{"t", t.t}, {"p", t.p}, {"degenerate", t.degenerate}};
    }
  } else {
    SegDataset test = seg_test_set(cfg);
    auto model = load_segmenter(ckpt_path);
    SegEval ev = eval_segmenter(*model, test);
    rows = {{"dsc", "ovary", ev.ovary.dsc},     {"jc", "ovary", ev.ovary.jc},
            {"hd", "ovary", ev.ovary.hd},       {"asd", "ovary", ev.ovary.asd},
            {"dsc", "follicle", ev.follicle.dsc}, {"jc", "follicle", ev.follicle.jc},
            {"hd", "follicle", ev.follicle.hd}, {"asd", "follicle", ev.follicle.asd}};
    if (!compare.empty()) {
      auto other = load_segmenter(compare);
      SegEval ev2 = eval_segmenter(*other, test);
      TTestResult t = paired_t_test(ev.follicle_dsc, ev2.follicle_dsc);
      extra["paired_t_follicle_dsc"] = {{"t", t.t}, {"p", t.p}, {"degenerate", t.degenerate}};
    }
  }
  atomic_write(out / "metrics.csv", metrics_csv("hasa", cfg.seed, rows));
  if (!extra.empty()) atomic_write(out / "eval_extra.json", extra.dump(2) + "\n");
  std::cout << "metrics written to " << (out / "metrics.csv") << "\n";
  return 0;
}

int cmd_report(const GlobalArgs& g) {
  RunConfig cfg = effective_config(g);
  const fs::path out(cfg.out_dir);
  json report;
  report["config_hash"] = config_hash(cfg);
  report["task"] = cfg.task;
  for (const char* name : {"search_report.json", "rewrite_report.json", "train_curves.json",
                           "eval_extra.json"}) {
    const fs::path p = out / name;
    if (fs::exists(p)) report["artifacts"][name] = json::parse(read_file(p));
  }
  if (fs::exists(out / "metrics.csv")) report["artifacts"]["metrics.csv"] =
      read_file(out / "metrics.csv");
  if (fs::exists(out / "genotype.json"))
    report["artifacts"]["genotype.json"] = json::parse(read_file(out / "genotype.json"));
  atomic_write(out / "report.json", report.dump(2) + "\n");
  std::cout << "report written to " << (out / "report.json") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hybrid cell search: search, derive, re-aggregate, train and evaluate"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "run configuration (JSON)");
  app.add_option("--out", g.out_dir, "output directory (overrides config)");
  app.add_option("--seed", g.seed_override, "seed override");

  auto* sc_gen = app.add_subcommand("gen-data", "materialize the synthetic datasets");

  auto* sc_search = app.add_subcommand("search", "run the progressive cell search");
  std::string stem;
  bool resume = false;
  int stop_after = -1;
  sc_search->add_option("--stem", stem, "backbone stem checkpoint (skips pretext training)");
  sc_search->add_flag("--resume", resume, "continue from the newest stage checkpoint");
  sc_search->add_option("--stop-after-stage", stop_after,
                        "stop after the given stage completes (testing aid)");

  auto* sc_derive = app.add_subcommand("derive", "derive a genotype from a search checkpoint");
  std::string derive_ckpt;
  sc_derive->add_option("--checkpoint", derive_ckpt, "search stage checkpoint")->required();

  auto* sc_train = app.add_subcommand("train", "train an evaluation-stage model");
  std::string genotype_path, init_from;
  bool finetune = false;
  sc_train->add_option("--genotype", genotype_path, "genotype file from the search");
  sc_train->add_option("--init-from", init_from, "start from an existing model checkpoint");
  sc_train->add_flag("--finetune", finetune, "fine-tune at a tenth of the learning rate");

  auto* sc_reagg = app.add_subcommand("reaggregate", "rewrite a trained model's aggregation");
  std::string reagg_ckpt, reagg_mode = "dense";
  sc_reagg->add_option("--checkpoint", reagg_ckpt, "trained sequential model")->required();
  sc_reagg->add_option("--mode", reagg_mode, "dense | aspp");

  auto* sc_eval = app.add_subcommand("eval", "evaluate a model checkpoint on the test set");
  std::string eval_ckpt, compare;
  sc_eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  sc_eval->add_option("--compare", compare, "second checkpoint for the paired t-test");

  auto* sc_report = app.add_subcommand("report", "bundle run artifacts into report.json");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sc_gen->parsed()) return cmd_gen_data(g);
    if (sc_search->parsed()) return cmd_search(g, stem, resume, stop_after);
    if (sc_derive->parsed()) return cmd_derive(g, derive_ckpt);
    if (sc_train->parsed()) {
      if (genotype_path.empty() && init_from.empty())
        throw ConfigError("train: provide --genotype or --init-from");
      return cmd_train(g, genotype_path, init_from, finetune);
    }
    if (sc_reagg->parsed()) return cmd_reaggregate(g, reagg_ckpt, reagg_mode);
    if (sc_eval->parsed()) return cmd_eval(g, eval_ckpt, compare);
    if (sc_report->parsed()) return cmd_report(g);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
