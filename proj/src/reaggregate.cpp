#include "hasa/reaggregate.hpp"

#include <map>
#include <set>

namespace hasa {

std::unique_ptr<ClassifierModel> reaggregate_dense(ClassifierModel& sequential) {
  if (sequential.build.aggregation != AggregationMode::sequential)
    throw UsageError("reaggregate_dense: input model is not sequential");
  ClassifierBuild b = sequential.build;
  b.aggregation = AggregationMode::dense;
  auto out = std::make_unique<ClassifierModel>(sequential.backbone, b,
                                               sequential.genotype_normal,
                                               sequential.genotype_reduction);
  copy_matching_params(out->named_params(), sequential.named_params());
  return out;
}

std::unique_ptr<SegModel> reaggregate_aspp(SegModel& sequential) {
  if (sequential.build.aggregation != AggregationMode::sequential)
    throw UsageError("reaggregate_aspp: input model is not sequential");
  SegBuild b = sequential.build;
  b.aggregation = AggregationMode::aspp;
  auto out = std::make_unique<SegModel>(sequential.backbone, b, sequential.genotype);
  copy_matching_params(out->named_params(), sequential.named_params());
  return out;
}

namespace {

RewriteReport verify_named(const NamedParams& original, const NamedParams& rewritten,
                           bool genotype_equal, const std::set<std::string>& added_prefixes) {
  RewriteReport rep;
  rep.genotype_equal = genotype_equal;

  std::map<std::string, Parameter*> orig;
  for (const auto& [name, p] : original) orig[name] = p;

  rep.cell_params_equal = true;
  rep.added_only_expected = true;
  for (const auto& [name, p] : rewritten) {
    auto it = orig.find(name);
    if (it == orig.end()) {
      rep.added_names.push_back(name);
      rep.added_param_count += p->value.shape.numel();
      bool expected = false;
      for (const auto& prefix : added_prefixes)
        if (name.rfind(prefix, 0) == 0) expected = true;
      if (!expected) {
        rep.added_only_expected = false;
        if (rep.detail.empty()) rep.detail = "unexpected new parameter: " + name;
      }
      continue;
    }
    if (name.rfind("cells.", 0) == 0) {
      if (!(it->second->value.shape == p->value.shape) ||
          it->second->value.data != p->value.data) {
        rep.cell_params_equal = false;
        if (rep.detail.empty()) rep.detail = "cell parameter changed: " + name;
      }
    }
  }
  if (!rep.genotype_equal && rep.detail.empty()) rep.detail = "genotype mismatch";
  return rep;
}

}  // namespace

RewriteReport verify_rewrite(ClassifierModel& original, ClassifierModel& rewritten) {
  const bool genotype_equal =
      original.genotype_normal == rewritten.genotype_normal &&
      original.genotype_reduction == rewritten.genotype_reduction;
  return verify_named(original.named_params(), rewritten.named_params(), genotype_equal,
                      {"reagg."});
}

RewriteReport verify_rewrite(SegModel& original, SegModel& rewritten) {
  return verify_named(original.named_params(), rewritten.named_params(),
                      original.genotype == rewritten.genotype, {"aspp."});
}

int64_t dense_extra_connections(const ClassifierModel& dense_model) {
  int64_t extra = 0;
  for (const auto& group : dense_model.dense_groups) {
    const int64_t n = static_cast<int64_t>(group.cells.size());
    // every merge projection at local index c reads all c prior outputs;
    // sanity-check the wiring really is complete before using the formula
    if (static_cast<int64_t>(group.projections.size()) != std::max<int64_t>(0, n - 2))
      throw UsageError("dense group wiring is incomplete");
    extra += (n - 1) * (n - 2) / 2;
  }
  return extra;
}

}  // namespace hasa
