#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "hasa/data.hpp"
#include "hasa/losses.hpp"
#include "hasa/metrics.hpp"
#include "oracles.hpp"

using namespace hasa;

namespace {

// O(n^2) all-pairs reference for the boundary metrics. Mirrors the library's
// boundary definition and summation order so agreement is exact.
BoundaryStats boundary_bruteforce(const BinaryMask& pred, const BinaryMask& gt) {
  auto boundary = [](const BinaryMask& m) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x) {
        if (!m.at(y, x)) continue;
        if (y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1 || !m.at(y - 1, x) ||
            !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1))
          out.emplace_back(y, x);
      }
    return out;
  };
  const auto pb = boundary(pred), gb = boundary(gt);
  BoundaryStats st;
  if (pb.empty() || gb.empty()) {
    st.degenerate = true;
    if (pb.empty() != gb.empty())
      st.hd = st.asd = std::sqrt(double(pred.h) * pred.h + double(pred.w) * pred.w);
    return st;
  }
  auto min_sq = [](std::pair<int, int> p, const std::vector<std::pair<int, int>>& set) {
    int64_t best = INT64_MAX;
    for (auto [y, x] : set) {
      const int64_t dy = p.first - y, dx = p.second - x;
      best = std::min(best, dy * dy + dx * dx);
    }
    return best;
  };
  double mx = 0, sum = 0;
  for (auto p : pb) {
    const double d = std::sqrt(static_cast<double>(min_sq(p, gb)));
    mx = std::max(mx, d);
    sum += d;
  }
  for (auto g : gb) {
    const double d = std::sqrt(static_cast<double>(min_sq(g, pb)));
    mx = std::max(mx, d);
    sum += d;
  }
  st.hd = mx;
  st.asd = sum / static_cast<double>(pb.size() + gb.size());
  return st;
}

BinaryMask random_blob_mask(int h, int w, Rng& rng) {
  BinaryMask m(h, w);
  const int n_blobs = rng.uniform_int(1, 3);
  for (int b = 0; b < n_blobs; ++b) {
    const int cy = rng.uniform_int(2, h - 3), cx = rng.uniform_int(2, w - 3);
    const int r = rng.uniform_int(1, std::min(h, w) / 3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.at(y, x) = 1;
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// generators
// ---------------------------------------------------------------------------

TEST_CASE("classification set: determinism, balance, stratified subjects") {
  ClassDataset a = gen_classification_set(10, 32, 7);
  ClassDataset b = gen_classification_set(10, 32, 7);
  REQUIRE(a.samples.size() == 90);
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].image.data == b.samples[i].image.data);
    CHECK(a.samples[i].label == b.samples[i].label);
  }
  int counts[9] = {0};
  for (const auto& s : a.samples) {
    ++counts[s.label];
    for (float v : s.image.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  for (int c = 0; c < 9; ++c) CHECK(counts[c] == 10);

  ClassDataset c = gen_classification_set(4, 32, 8);
  CHECK(c.samples[0].image.data != a.samples[0].image.data);
}

TEST_CASE("subjects never straddle a subject split") {
  ClassDataset ds = gen_classification_set(10, 16, 3);
  std::vector<int> subjects, labels;
  for (const auto& s : ds.samples) {
    subjects.push_back(s.subject_id);
    labels.push_back(s.label);
  }
  SplitIndices split = split_by_subject(subjects, labels, 0.3, 11);
  CHECK(split.first.size() + split.second.size() == ds.samples.size());
  std::set<int> s1, s2;
  for (int i : split.first) s1.insert(subjects[i]);
  for (int i : split.second) s2.insert(subjects[i]);
  for (int sub : s1) CHECK(s2.count(sub) == 0);

  SplitIndices again = split_by_subject(subjects, labels, 0.3, 11);
  CHECK(again.first == split.first);
}

TEST_CASE("segmentation set: follicles stay inside the ovary organ") {
  SegDataset ds = gen_segmentation_set(40, 48, 5);
  REQUIRE(ds.samples.size() == 40);
  for (const auto& s : ds.samples) {
    bool any_follicle = false;
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x) {
        const uint8_t m = s.mask.at(y, x);
        CHECK(m <= 2);
        if (m == 2) any_follicle = true;
      }
    CHECK(any_follicle);
    // by coding, follicle pixels (2) are inside the organ (>=1) trivially;
    // additionally the organ must be a sane size
    const BinaryMask organ = select_class(s.mask, 1, /*organ=*/true);
    CHECK(organ.count() > 100);
  }
  SegDataset ds2 = gen_segmentation_set(40, 48, 5);
  CHECK(ds2.samples[13].image.data == ds.samples[13].image.data);
  CHECK(ds2.samples[13].mask.v == ds.samples[13].mask.v);
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

TEST_CASE("augment: zero rotation and no flip is the identity") {
  SegDataset ds = gen_segmentation_set(2, 32, 9);
  AugmentConfig cfg;
  cfg.rotation_degrees = 0.0f;
  cfg.hflip_prob = 0.0f;
  Rng rng(1);
  SegSample out = augment(ds.samples[0], cfg, rng);
  CHECK(oracle::max_abs_diff(out.image, ds.samples[0].image) < 1e-6);
  CHECK(out.mask.v == ds.samples[0].mask.v);
}

TEST_CASE("augment: double horizontal flip is the identity") {
  ClassDataset ds = gen_classification_set(1, 32, 10);
  AugmentConfig cfg;
  cfg.rotation_degrees = 0.0f;
  cfg.hflip_prob = 1.0f;
  Rng rng(2);
  ClassSample once = augment(ds.samples[0], cfg, rng);
  ClassSample twice = augment(once, cfg, rng);
  CHECK(oracle::max_abs_diff(twice.image, ds.samples[0].image) < 1e-6);
  CHECK(once.label == ds.samples[0].label);
}

TEST_CASE("augment: rotated masks keep the label set and the containment") {
  SegDataset ds = gen_segmentation_set(10, 32, 12);
  AugmentConfig cfg;  // default +-20 degrees, flip 0.5
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const SegSample& src = ds.samples[t % ds.samples.size()];
    SegSample out = augment(src, cfg, rng);
    for (size_t i = 0; i < out.mask.v.size(); ++i) CHECK(out.mask.v[i] <= 2);
    // follicle pixels are mask==2 and the organ is mask>=1, so nearest
    // neighbor resampling keeps follicle subset organ by construction;
    // verify anyway
    for (int y = 0; y < out.mask.h; ++y)
      for (int x = 0; x < out.mask.w; ++x)
        if (out.mask.at(y, x) == 2) CHECK(out.mask.at(y, x) >= 1);
  }
}

TEST_CASE("rotate90 is exact and 4-periodic") {
  Rng rng(4);
  Tensor img = oracle::random_tensor({1, 1, 6, 4}, rng);
  Tensor r4 = rotate90(img, 4);
  CHECK(oracle::max_abs_diff(img, r4) == 0.0);
  Tensor r1 = rotate90(img, 1);
  CHECK(r1.shape == Shape4{1, 1, 4, 6});
  CHECK(r1.at(0, 0, 3, 0) == img.at(0, 0, 0, 0));
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

TEST_CASE("dice loss analytic cases") {
  const int H = 4, W = 4;
  Mask target(H, W, 0);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < W; ++x) target.at(y, x) = 1;
  target.at(3, 3) = 2;

  SUBCASE("perfect hard prediction drives the loss to ~0") {
    Tensor probs(Shape4{1, 3, H, W}, 0.0f);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) probs.at(0, target.at(y, x), y, x) = 1.0f;
    const float loss = dice_loss(probs, {target}, 1e-5f).item();
    CHECK(loss < 1e-4f);
  }
  SUBCASE("completely disjoint prediction approaches 1") {
    Tensor probs(Shape4{1, 3, H, W}, 0.0f);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        // predict follicle where background is, ovary never where it is
        if (target.at(y, x) == 0)
          probs.at(0, 2, y, x) = 1.0f;
        else
          probs.at(0, 0, y, x) = 1.0f;
      }
    CHECK(dice_loss(probs, {target}, 1e-4f).item() > 0.999f);
  }
  SUBCASE("gradient matches finite differences") {
    Rng rng(6);
    Parameter probs("p", oracle::random_tensor({1, 3, H, W}, rng, 0.05f, 0.95f));
    std::vector<Mask> targets{target};
    auto loss_fn = [&](Tape* t) { return dice_loss(use_param(probs, t), targets, 0.5f); };
    Rng pick(7);
    auto st = oracle::fd_check(loss_fn, {&probs}, 48, 1e-3, pick);
    CHECK(st.max_rel < 1e-2);
    CHECK(st.median_rel < 1e-3);
  }
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

TEST_CASE("confusion matrix basics") {
  ConfusionMatrix perfect = confusion_matrix({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
  for (int g = 0; g < 3; ++g)
    for (int p = 0; p < 3; ++p)
      CHECK(perfect.at(g, p) == (g == p ? (g == 1 ? 2 : 1) : 0));

  ConfusionMatrix cm = confusion_matrix({0, 1}, {1, 1}, 2);
  CHECK(cm.at(1, 0) == 1);
  CHECK(cm.at(1, 1) == 1);
  CHECK(cm.total() == 2);

  // row sums recount the per-class ground truth
  Rng rng(8);
  std::vector<int> preds, labels;
  int gt_count[4] = {0};
  for (int i = 0; i < 200; ++i) {
    preds.push_back(rng.uniform_int(0, 3));
    labels.push_back(rng.uniform_int(0, 3));
    ++gt_count[labels.back()];
  }
  ConfusionMatrix r = confusion_matrix(preds, labels, 4);
  for (int g = 0; g < 4; ++g) {
    int64_t row = 0;
    for (int p = 0; p < 4; ++p) row += r.at(g, p);
    CHECK(row == gt_count[g]);
  }
  CHECK_THROWS_AS(confusion_matrix({5}, {0}, 3), UsageError);
}

TEST_CASE("classification metrics: hand-worked 2x2 case") {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 8;
  cm.at(0, 1) = 2;
  cm.at(1, 0) = 3;
  cm.at(1, 1) = 7;
  ClassificationMetrics m = classification_metrics(cm);
  CHECK(m.accuracy == doctest::Approx(0.75));
  // class-0 precision 8/11, recall 0.8; class-1 precision 7/9, recall 0.7
  const double p = (10.0 * (8.0 / 11.0) + 10.0 * (7.0 / 9.0)) / 20.0;
  CHECK(m.precision == doctest::Approx(p));
  CHECK(m.recall == doctest::Approx(0.75));

  ConfusionMatrix diag(3);
  for (int i = 0; i < 3; ++i) diag.at(i, i) = 5;
  ClassificationMetrics pm = classification_metrics(diag);
  CHECK(pm.accuracy == 1.0);
  CHECK(pm.precision == 1.0);
  CHECK(pm.recall == 1.0);
  CHECK(pm.f1 == 1.0);
}

TEST_CASE("weighted recall equals accuracy on random confusion matrices") {
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const int k = rng.uniform_int(2, 7);
    ConfusionMatrix cm(k);
    for (int g = 0; g < k; ++g)
      for (int p = 0; p < k; ++p) cm.at(g, p) = rng.uniform_int(0, 9);
    if (cm.total() == 0) cm.at(0, 0) = 1;
    ClassificationMetrics m = classification_metrics(cm);
    CHECK(m.recall == doctest::Approx(m.accuracy).epsilon(1e-12));
  }
}

TEST_CASE("region overlap") {
  BinaryMask a(8, 8), b(8, 8);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) a.at(y, x) = b.at(y, x) = 1;
  auto [dsc, jc] = region_overlap(a, b);
  CHECK(dsc == 1.0);
  CHECK(jc == 1.0);

  BinaryMask c(8, 8);
  for (int x = 0; x < 8; ++x) c.at(7, x) = 1;
  auto [d2, j2] = region_overlap(a, c);
  CHECK(d2 == 0.0);
  CHECK(j2 == 0.0);

  // P = half of G: dsc = 2/3, jc = 1/2, and dsc = 2jc/(1+jc)
  BinaryMask g(10, 10), p(10, 10);
  int placed = 0;
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) {
      g.at(y, x) = 1;
      if (placed < 50) {
        p.at(y, x) = 1;
        ++placed;
      }
    }
  auto [d3, j3] = region_overlap(p, g);
  CHECK(d3 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(j3 == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d3 == doctest::Approx(2.0 * j3 / (1.0 + j3)).epsilon(1e-12));

  auto [d4, j4] = region_overlap(BinaryMask(4, 4), BinaryMask(4, 4));
  CHECK(d4 == 1.0);  // both-empty convention
  CHECK(j4 == 1.0);
}

TEST_CASE("dsc/jc analytic relation holds on random masks") {
  Rng rng(10);
  for (int t = 0; t < 200; ++t) {
    BinaryMask p = random_blob_mask(16, 16, rng);
    BinaryMask g = random_blob_mask(16, 16, rng);
    auto [dsc, jc] = region_overlap(p, g);
    CHECK(jc <= dsc + 1e-15);
    CHECK(std::abs(dsc - 2.0 * jc / (1.0 + jc)) < 1e-12);
  }
}

TEST_CASE("boundary distances") {
  SUBCASE("identical masks") {
    Rng rng(11);
    BinaryMask m = random_blob_mask(12, 12, rng);
    BoundaryStats st = boundary_distance(m, m);
    CHECK(st.hd == 0.0);
    CHECK(st.asd == 0.0);
    CHECK(!st.degenerate);
  }
  SUBCASE("two single pixels at (0,0) and (3,4)") {
    BinaryMask a(8, 8), b(8, 8);
    a.at(0, 0) = 1;
    b.at(3, 4) = 1;
    BoundaryStats st = boundary_distance(a, b);
    CHECK(st.hd == doctest::Approx(5.0));
    CHECK(st.asd == doctest::Approx(5.0));
  }
  SUBCASE("empty vs nonempty uses the diagonal sentinel") {
    BinaryMask a(6, 8), b(6, 8);
    b.at(2, 2) = 1;
    BoundaryStats st = boundary_distance(a, b);
    CHECK(st.degenerate);
    CHECK(st.hd == doctest::Approx(std::sqrt(36.0 + 64.0)));
  }
  SUBCASE("random masks match the all-pairs oracle exactly") {
    Rng rng(12);
    for (int t = 0; t < 100; ++t) {
      const int h = rng.uniform_int(6, 32), w = rng.uniform_int(6, 32);
      BinaryMask p = random_blob_mask(h, w, rng);
      BinaryMask g = random_blob_mask(h, w, rng);
      BoundaryStats got = boundary_distance(p, g);
      BoundaryStats want = boundary_bruteforce(p, g);
      CHECK(got.hd == want.hd);
      CHECK(got.asd == want.asd);
      CHECK(got.hd >= got.asd);
      // hd is symmetric
      BoundaryStats rev = boundary_distance(g, p);
      CHECK(rev.hd == got.hd);
    }
  }
}

TEST_CASE("paired t-test") {
  SUBCASE("identical samples are degenerate") {
    std::vector<double> a{1, 2, 3, 4};
    CHECK(paired_t_test(a, a).degenerate);
  }
  SUBCASE("zero-mean differences give t = 0, p = 1") {
    TTestResult r = paired_t_test({1, -1, 1, -1}, {0, 0, 0, 0});
    CHECK(!r.degenerate);
    CHECK(r.t == doctest::Approx(0.0));
    CHECK(r.p == doctest::Approx(1.0));
  }
  SUBCASE("differences 1..5 reproduce the reference t and p") {
    TTestResult r = paired_t_test({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
    CHECK(r.t == doctest::Approx(4.2426).epsilon(1e-4));
    CHECK(r.p == doctest::Approx(0.0132).epsilon(0.08));  // +-1e-3 absolute
    CHECK(std::abs(r.p - 0.0132) < 1e-3);
  }
  SUBCASE("antisymmetric under swapping the samples") {
    Rng rng(13);
    std::vector<double> a, b;
    for (int i = 0; i < 12; ++i) {
      a.push_back(rng.uniform());
      b.push_back(rng.uniform());
    }
    TTestResult r1 = paired_t_test(a, b);
    TTestResult r2 = paired_t_test(b, a);
    CHECK(r1.t == doctest::Approx(-r2.t).epsilon(1e-12));
    CHECK(r1.p == doctest::Approx(r2.p).epsilon(1e-12));
  }
}
