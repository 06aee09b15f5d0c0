#pragma once

#include <memory>

#include "hasa/model.hpp"

namespace hasa {

// Post-search graph rewrites. The rewrite builds a new model around the same
// backbone and genotype, copies every shared parameter, and adds only merge
// projections (dense) or the ASPP head (aspp). The input model is left
// untouched.

std::unique_ptr<ClassifierModel> reaggregate_dense(ClassifierModel& sequential);
std::unique_ptr<SegModel> reaggregate_aspp(SegModel& sequential);

struct RewriteReport {
  bool genotype_equal = false;
  bool cell_params_equal = false;
  bool added_only_expected = false;  // new params confined to reagg/aspp layers
  std::vector<std::string> added_names;
  int64_t added_param_count = 0;
  std::string detail;  // first failing name, when any

  bool ok() const { return genotype_equal && cell_params_equal && added_only_expected; }
};

RewriteReport verify_rewrite(ClassifierModel& original, ClassifierModel& rewritten);
RewriteReport verify_rewrite(SegModel& original, SegModel& rewritten);

// Cell-to-cell connections the dense rewrite adds beyond the linear chain:
// sum over resolution groups of (n-1)(n-2)/2, computed from the actual merge
// wiring.
int64_t dense_extra_connections(const ClassifierModel& dense_model);

}  // namespace hasa
