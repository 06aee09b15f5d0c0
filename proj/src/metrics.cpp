#include "hasa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hasa {

ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels,
                                 int n_classes) {
  if (preds.size() != labels.size())
    throw UsageError("confusion_matrix: prediction/label count mismatch");
  ConfusionMatrix cm(n_classes);
  for (size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes || preds[i] < 0 || preds[i] >= n_classes)
      throw UsageError("confusion_matrix: label out of range");
    ++cm.at(labels[i], preds[i]);
  }
  return cm;
}

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm, bool weighted) {
  const int K = cm.n_classes;
  const int64_t total = cm.total();
  if (K == 0 || total == 0) throw UsageError("classification_metrics: empty matrix");

  ClassificationMetrics out;
  int64_t trace = 0;
  for (int c = 0; c < K; ++c) trace += cm.at(c, c);
  out.accuracy = static_cast<double>(trace) / total;

  double psum = 0, rsum = 0, fsum = 0, wsum = 0;
  for (int c = 0; c < K; ++c) {
    int64_t support = 0, predicted = 0;
    for (int j = 0; j < K; ++j) {
      support += cm.at(c, j);
      predicted += cm.at(j, c);
    }
    if (support == 0) continue;  // zero-support class: excluded from weighting
    const double tp = static_cast<double>(cm.at(c, c));
    const double prec = predicted > 0 ? tp / predicted : 0.0;
    const double rec = tp / support;
    const double f1 = (prec + rec) > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    const double w = weighted ? static_cast<double>(support) : 1.0;
    psum += w * prec;
    rsum += w * rec;
    fsum += w * f1;
    wsum += w;
  }
  out.precision = psum / wsum;
  out.recall = rsum / wsum;
  out.f1 = fsum / wsum;
  return out;
}

BinaryMask select_class(const Mask& m, int class_id, bool organ) {
  BinaryMask b(m.h, m.w);
  for (size_t i = 0; i < m.v.size(); ++i)
    b.v[i] = organ ? (m.v[i] >= class_id ? 1 : 0) : (m.v[i] == class_id ? 1 : 0);
  return b;
}

std::pair<double, double> region_overlap(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw DimensionError("region_overlap: mask shape mismatch");
  int64_t inter = 0, p = 0, g = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    p += pred.v[i];
    g += gt.v[i];
    inter += pred.v[i] & gt.v[i];
  }
  if (p == 0 && g == 0) return {1.0, 1.0};  // both empty: perfect agreement
  const double dsc = 2.0 * inter / static_cast<double>(p + g);
  const double jc = static_cast<double>(inter) / static_cast<double>(p + g - inter);
  return {dsc, jc};
}

namespace {

std::vector<std::pair<int, int>> boundary_pixels(const BinaryMask& m) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (!m.at(y, x)) continue;
      const bool edge = y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1 ||
                        !m.at(y - 1, x) || !m.at(y + 1, x) || !m.at(y, x - 1) ||
                        !m.at(y, x + 1);
      if (edge) out.emplace_back(y, x);
    }
  return out;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Felzenszwalb-Huttenlocher exact 1D squared distance transform over the
// finite entries of f.
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  d.assign(n, kInf);
  std::vector<int> sites;
  for (int q = 0; q < n; ++q)
    if (f[q] < kInf) sites.push_back(q);
  if (sites.empty()) return;

  std::vector<int> v(sites.size());
  std::vector<double> z(sites.size() + 1);
  auto parab = [&](int q) { return f[q] + double(q) * q; };
  int k = 0;
  v[0] = sites[0];
  z[0] = -kInf;
  z[1] = kInf;
  for (size_t t = 1; t < sites.size(); ++t) {
    const int q = sites[t];
    double s = (parab(q) - parab(v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = (parab(q) - parab(v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = (q - double(v[k])) * (q - double(v[k])) + f[v[k]];
  }
}

// Exact squared Euclidean distance to the nearest site.
std::vector<double> edt_2d(int h, int w, const std::vector<std::pair<int, int>>& sites) {
  std::vector<double> grid(static_cast<size_t>(h) * w, kInf);
  for (auto [y, x] : sites) grid[static_cast<size_t>(y) * w + x] = 0.0;
  std::vector<double> col(h), out_col(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col[y] = grid[static_cast<size_t>(y) * w + x];
    edt_1d(col, out_col);
    for (int y = 0; y < h; ++y) grid[static_cast<size_t>(y) * w + x] = out_col[y];
  }
  std::vector<double> row(w), out_row(w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) row[x] = grid[static_cast<size_t>(y) * w + x];
    edt_1d(row, out_row);
    for (int x = 0; x < w; ++x) grid[static_cast<size_t>(y) * w + x] = out_row[x];
  }
  return grid;
}

}  // namespace

BoundaryStats boundary_distance(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw DimensionError("boundary_distance: mask shape mismatch");
  const auto pb = boundary_pixels(pred);
  const auto gb = boundary_pixels(gt);

  BoundaryStats st;
  if (pb.empty() && gb.empty()) {
    st.degenerate = true;  // no surfaces on either side
    return st;
  }
  if (pb.empty() || gb.empty()) {
    st.degenerate = true;
    st.hd = st.asd = std::sqrt(double(pred.h) * pred.h + double(pred.w) * pred.w);
    return st;
  }

  const auto dist_g = edt_2d(pred.h, pred.w, gb);  // distance to gt surface
  const auto dist_p = edt_2d(pred.h, pred.w, pb);  // distance to pred surface

  double max_pg = 0, max_gp = 0, sum = 0;
  for (auto [y, x] : pb) {
    const double d = std::sqrt(dist_g[static_cast<size_t>(y) * pred.w + x]);
    max_pg = std::max(max_pg, d);
    sum += d;
  }
  for (auto [y, x] : gb) {
    const double d = std::sqrt(dist_p[static_cast<size_t>(y) * pred.w + x]);
    max_gp = std::max(max_gp, d);
    sum += d;
  }
  st.hd = std::max(max_pg, max_gp);
  st.asd = sum / static_cast<double>(pb.size() + gb.size());
  return st;
}

// ---------------------------------------------------------------------------
// paired t-test
// ---------------------------------------------------------------------------

namespace {

double log_gamma(double x) { return std::lgamma(x); }

// continued fraction for the incomplete beta (Lentz)
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14, kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double bt = std::exp(log_gamma(a + b) - log_gamma(a) - log_gamma(b) +
                             a * std::log(x) + b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw UsageError("paired_t_test: length mismatch");
  const size_t n = a.size();
  if (n < 2) throw UsageError("paired_t_test: need at least 2 pairs");

  double mean = 0.0;
  for (size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = (a[i] - b[i]) - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);

  TTestResult r;
  if (var == 0.0) {
    r.degenerate = true;  // p undefined for identical-difference samples
    return r;
  }
  const double se = std::sqrt(var / static_cast<double>(n));
  r.t = mean / se;
  const double df = static_cast<double>(n - 1);
  r.p = incomplete_beta(df / 2.0, 0.5, df / (df + r.t * r.t));
  return r;
}

}  // namespace hasa
