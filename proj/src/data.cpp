#include "hasa/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace hasa {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Ellipse {
  float cy, cx, a, b, angle;

  // quadratic form; <= 1 means inside
  float q(float y, float x) const {
    const float dy = y - cy, dx = x - cx;
    const float c = std::cos(angle), s = std::sin(angle);
    const float u = dx * c + dy * s;
    const float v = -dx * s + dy * c;
    return (u * u) / (a * a) + (v * v) / (b * b);
  }
};

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

void apply_speckle(Tensor& img, float strength, Rng& rng) {
  for (auto& v : img.data) v = clamp01(v * (1.0f + strength * rng.normal()) +
                                       0.015f * rng.normal());
}

Tensor background(int size, float base, float grad, float gdir, Rng& rng) {
  Tensor img(Shape4{1, 1, size, size}, base);
  const float gy = std::sin(gdir), gx = std::cos(gdir);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float t = (gy * y + gx * x) / size - 0.5f;
      img.at(0, 0, y, x) = clamp01(base + grad * t + 0.015f * rng.normal());
    }
  return img;
}

// Subject geometry shared by the subject's images; per-image jitter applied
// on top.
struct LesionGeom {
  Ellipse e;
  float septa_angles[4];
  int n_septa;
  float dot_y[8], dot_x[8], dot_r[8];
  int n_dots;
  float ring_k;
  float stripe_angle, stripe_period;
  float blob_y[5], blob_x[5], blob_r[5], blob_i[5];
  int n_blobs;
};

LesionGeom sample_geometry(int size, Rng& rng) {
  LesionGeom g{};
  const float s = static_cast<float>(size);
  g.e.cy = s * (0.5f + rng.uniform(-0.08f, 0.08f));
  g.e.cx = s * (0.5f + rng.uniform(-0.08f, 0.08f));
  g.e.a = s * rng.uniform(0.20f, 0.32f);
  g.e.b = s * rng.uniform(0.20f, 0.32f);
  g.e.angle = rng.uniform(0.0f, static_cast<float>(kPi));
  g.n_septa = rng.uniform_int(3, 4);
  for (int i = 0; i < g.n_septa; ++i)
    g.septa_angles[i] = rng.uniform(0.0f, static_cast<float>(kPi));
  g.n_dots = rng.uniform_int(5, 8);
  for (int i = 0; i < g.n_dots; ++i) {
    const float rr = rng.uniform(0.0f, 0.7f), th = rng.uniform(0.0f, 2.0f * kPi);
    g.dot_y[i] = g.e.cy + g.e.b * rr * std::sin(th);
    g.dot_x[i] = g.e.cx + g.e.a * rr * std::cos(th);
    g.dot_r[i] = rng.uniform(1.8f, 2.8f) * s / 64.0f;
  }
  g.ring_k = static_cast<float>(rng.uniform_int(2, 3));
  g.stripe_angle = rng.uniform(0.0f, static_cast<float>(kPi));
  g.stripe_period = rng.uniform(9.0f, 13.0f) * s / 64.0f;
  g.n_blobs = rng.uniform_int(3, 5);
  for (int i = 0; i < g.n_blobs; ++i) {
    const float rr = rng.uniform(0.0f, 0.6f), th = rng.uniform(0.0f, 2.0f * kPi);
    g.blob_y[i] = g.e.cy + g.e.b * rr * std::sin(th);
    g.blob_x[i] = g.e.cx + g.e.a * rr * std::cos(th);
    g.blob_r[i] = rng.uniform(4.5f, 7.5f) * s / 64.0f;
    g.blob_i[i] = rng.uniform(0.28f, 0.45f) * (i % 2 == 0 ? 1.0f : -1.0f);
  }
  return g;
}

Tensor render_lesion(int label, int size, const LesionGeom& g, Rng& rng) {
  Tensor img = background(size, 0.32f, rng.uniform(0.05f, 0.10f),
                          rng.uniform(0.0f, static_cast<float>(2.0 * kPi)), rng);
  const Ellipse& e = g.e;
  const float jitter = rng.uniform(-0.03f, 0.03f);

  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float q = e.q(static_cast<float>(y), static_cast<float>(x));
      const float rho = std::sqrt(q);
      float& px = img.at(0, 0, y, x);
      switch (label) {
        case 0:  // anechoic disc
          if (q <= 1.0f) px = 0.05f + jitter * 0.5f;
          break;
        case 1:  // dark disc with a bright rim
          if (q <= 1.0f) px = 0.07f + jitter * 0.5f;
          if (rho >= 0.90f && rho <= 1.20f) px = 0.88f + jitter;
          break;
        case 2: {  // multiloculated: mid-dark disc crossed by thick bright septa
          if (q <= 1.0f) {
            px = 0.22f + jitter * 0.5f;
            for (int i = 0; i < g.n_septa; ++i) {
              const float ny = std::sin(g.septa_angles[i]), nx = std::cos(g.septa_angles[i]);
              const float d = std::abs((y - e.cy) * ny + (x - e.cx) * nx);
              if (d < 2.2f * size / 64.0f) px = 0.80f + jitter;
            }
          }
          break;
        }
        case 3: {  // mid-gray disc with bright calcifications and a shadow
          if (q <= 1.0f) px = 0.38f + jitter;
          for (int i = 0; i < g.n_dots; ++i) {
            const float dy = y - g.dot_y[i], dx = x - g.dot_x[i];
            if (dy * dy + dx * dx < g.dot_r[i] * g.dot_r[i]) px = 0.97f;
          }
          if (y > e.cy + 0.5f * e.b && std::abs(x - e.cx) < 0.7f * e.a && q > 1.0f)
            px *= 0.40f;
          break;
        }
        case 4: {  // mixed solid: coarse bright/dark blotches
          if (q <= 1.0f) {
            px = 0.45f + jitter;
            for (int i = 0; i < g.n_blobs; ++i) {
              const float dy = y - g.blob_y[i], dx = x - g.blob_x[i];
              const float rr = (dy * dy + dx * dx) / (g.blob_r[i] * g.blob_r[i]);
              if (rr < 1.0f) px += g.blob_i[i] * (1.0f - rr);
            }
          }
          break;
        }
        case 5:  // wide concentric rings at full contrast
          if (q <= 1.0f)
            px = 0.06f + 0.80f * (0.5f + 0.5f * std::cos(rho * kPi * 2.0f * g.ring_k)) +
                 jitter * 0.5f;
          break;
        case 6: {  // wide diagonal stripes at full contrast
          if (q <= 1.0f) {
            const float u =
                y * std::sin(g.stripe_angle) + x * std::cos(g.stripe_angle);
            px = 0.08f +
                 0.72f * (0.5f + 0.5f * std::sin(2.0f * kPi * u / g.stripe_period)) +
                 jitter * 0.5f;
          }
          break;
        }
        case 7:  // bright solid mass
          if (q <= 1.0f) px = 0.82f + jitter;
          break;
        case 8:  // diffuse: background only
          break;
        default:
          throw ConfigError("render_lesion: label out of range");
      }
      px = clamp01(px);
    }
  apply_speckle(img, 0.11f, rng);
  return img;
}

}  // namespace

ClassDataset gen_classification_set(int n_per_class, int size, uint64_t seed) {
  if (n_per_class < 1) throw ConfigError("gen_classification_set: n_per_class must be >= 1");
  ClassDataset ds;
  ds.image_size = size;
  Rng base(seed);
  constexpr int kPerSubject = 2;
  for (int label = 0; label < kNumLesionClasses; ++label) {
    for (int i = 0; i < n_per_class; ++i) {
      const int subject = i / kPerSubject;
      Rng subj_rng = base.derive(static_cast<uint64_t>(label) * 1000003u + subject);
      const LesionGeom geom = sample_geometry(size, subj_rng);
      Rng img_rng = subj_rng.derive(static_cast<uint64_t>(i % kPerSubject) + 17u);
      ClassSample s;
      s.image = render_lesion(label, size, geom, img_rng);
      s.label = label;
      s.subject_id = label * 100000 + subject;
      ds.samples.push_back(std::move(s));
    }
  }
  double sum = 0.0, sq = 0.0;
  int64_t count = 0;
  for (const auto& s : ds.samples)
    for (float v : s.image.data) {
      sum += v;
      sq += static_cast<double>(v) * v;
      ++count;
    }
  ds.mean = static_cast<float>(sum / count);
  ds.stdev = static_cast<float>(std::sqrt(std::max(1e-12, sq / count - (sum / count) * (sum / count))));
  return ds;
}

SegDataset gen_segmentation_set(int n, int size, uint64_t seed) {
  if (n < 1) throw ConfigError("gen_segmentation_set: n must be >= 1");
  SegDataset ds;
  ds.image_size = size;
  Rng base(seed);
  constexpr int kPerSubject = 4;
  const float s = static_cast<float>(size);

  for (int i = 0; i < n; ++i) {
    const int subject = i / kPerSubject;
    Rng subj_rng = base.derive(900000007ull + subject);
    Ellipse ovary;
    ovary.cy = s * (0.5f + subj_rng.uniform(-0.08f, 0.08f));
    ovary.cx = s * (0.5f + subj_rng.uniform(-0.08f, 0.08f));
    ovary.a = s * subj_rng.uniform(0.26f, 0.38f);
    ovary.b = s * subj_rng.uniform(0.24f, 0.34f);
    ovary.angle = subj_rng.uniform(0.0f, static_cast<float>(kPi));

    Rng rng = subj_rng.derive(static_cast<uint64_t>(i % kPerSubject) + 31u);
    const int n_follicles = rng.uniform_int(1, 8);
    std::vector<Ellipse> follicles;
    for (int f = 0; f < n_follicles; ++f) {
      for (int attempt = 0; attempt < 80; ++attempt) {
        const float rr = rng.uniform(0.0f, 0.72f);
        const float th = rng.uniform(0.0f, static_cast<float>(2.0 * kPi));
        Ellipse fe;
        fe.cy = ovary.cy + ovary.b * rr * std::sin(th);
        fe.cx = ovary.cx + ovary.a * rr * std::cos(th);
        const float r = rng.uniform(3.5f, 8.0f) * s / 64.0f;
        fe.a = r * rng.uniform(0.8f, 1.2f);
        fe.b = r * rng.uniform(0.8f, 1.2f);
        fe.angle = rng.uniform(0.0f, static_cast<float>(kPi));
        if (ovary.q(fe.cy, fe.cx) <= 0.70f) {
          follicles.push_back(fe);
          break;
        }
      }
    }

    SegSample sample;
    sample.subject_id = subject;
    sample.image = background(size, 0.22f, rng.uniform(0.05f, 0.11f),
                              rng.uniform(0.0f, static_cast<float>(2.0 * kPi)), rng);
    sample.mask = Mask(size, size, 0);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const float qo = ovary.q(static_cast<float>(y), static_cast<float>(x));
        float& px = sample.image.at(0, 0, y, x);
        if (qo <= 1.0f) {
          px = 0.52f;
          sample.mask.at(y, x) = 1;
          for (const Ellipse& fe : follicles)
            if (fe.q(static_cast<float>(y), static_cast<float>(x)) <= 1.0f) {
              px = 0.07f;
              sample.mask.at(y, x) = 2;  // clipped to the ovary by construction
            }
        } else if (qo <= 1.25f) {
          px = 0.36f;  // darker capsule rim
        }
        px = clamp01(px);
      }
    apply_speckle(sample.image, 0.14f, rng);
    ds.samples.push_back(std::move(sample));
  }

  double sum = 0.0, sq = 0.0;
  int64_t count = 0;
  for (const auto& smp : ds.samples)
    for (float v : smp.image.data) {
      sum += v;
      sq += static_cast<double>(v) * v;
      ++count;
    }
  ds.mean = static_cast<float>(sum / count);
  ds.stdev = static_cast<float>(std::sqrt(std::max(1e-12, sq / count - (sum / count) * (sum / count))));
  return ds;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

namespace {

struct RotSpec {
  float angle = 0.0f;  // radians
  bool hflip = false;
};

Tensor rotate_image(const Tensor& img, const RotSpec& r) {
  const int H = img.shape.h, W = img.shape.w;
  Tensor out(img.shape, 0.0f);
  const float cy = (H - 1) / 2.0f, cx = (W - 1) / 2.0f;
  const float c = std::cos(-r.angle), s = std::sin(-r.angle);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float xx = r.hflip ? (W - 1 - x) : x;
      const float sy = cy + (y - cy) * c - (xx - cx) * s;
      const float sx = cx + (y - cy) * s + (xx - cx) * c;
      if (sy < -0.5f || sy > H - 0.5f || sx < -0.5f || sx > W - 0.5f) continue;
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const float ty = sy - y0, tx = sx - x0;
      auto val = [&](int yy, int xx2) -> float {
        if (yy < 0 || yy >= H || xx2 < 0 || xx2 >= W) return 0.0f;
        return img.at(0, 0, yy, xx2);
      };
      out.at(0, 0, y, x) = (1 - ty) * ((1 - tx) * val(y0, x0) + tx * val(y0, x0 + 1)) +
                           ty * ((1 - tx) * val(y0 + 1, x0) + tx * val(y0 + 1, x0 + 1));
    }
  return out;
}

Mask rotate_mask(const Mask& m, const RotSpec& r) {
  const int H = m.h, W = m.w;
  Mask out(H, W, 0);
  const float cy = (H - 1) / 2.0f, cx = (W - 1) / 2.0f;
  const float c = std::cos(-r.angle), s = std::sin(-r.angle);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float xx = r.hflip ? (W - 1 - x) : x;
      const float sy = cy + (y - cy) * c - (xx - cx) * s;
      const float sx = cx + (y - cy) * s + (xx - cx) * c;
      const int ny = static_cast<int>(std::lround(sy)), nx = static_cast<int>(std::lround(sx));
      if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
      out.at(y, x) = m.at(ny, nx);
    }
  return out;
}

RotSpec sample_rot(const AugmentConfig& cfg, Rng& rng) {
  RotSpec r;
  r.angle = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees) *
            static_cast<float>(kPi / 180.0);
  r.hflip = rng.uniform() < cfg.hflip_prob;
  return r;
}

}  // namespace

ClassSample augment(const ClassSample& s, const AugmentConfig& cfg, Rng& rng) {
  const RotSpec r = sample_rot(cfg, rng);
  ClassSample out;
  out.image = rotate_image(s.image, r);
  out.label = s.label;
  out.subject_id = s.subject_id;
  return out;
}

SegSample augment(const SegSample& s, const AugmentConfig& cfg, Rng& rng) {
  const RotSpec r = sample_rot(cfg, rng);  // one sample: image and mask move together
  SegSample out;
  out.image = rotate_image(s.image, r);
  out.mask = rotate_mask(s.mask, r);
  out.subject_id = s.subject_id;
  return out;
}

Tensor normalize_image(const Tensor& img, float mean, float stdev) {
  Tensor out = img.detached();
  const float inv = 1.0f / std::max(1e-6f, stdev);
  for (auto& v : out.data) v = (v - mean) * inv;
  return out;
}

Tensor rotate90(const Tensor& img, int k) {
  k = ((k % 4) + 4) % 4;
  Tensor cur = img.detached();
  for (int t = 0; t < k; ++t) {
    Tensor next(Shape4{cur.shape.n, cur.shape.c, cur.shape.w, cur.shape.h});
    for (int n = 0; n < cur.shape.n; ++n)
      for (int c = 0; c < cur.shape.c; ++c)
        for (int y = 0; y < cur.shape.h; ++y)
          for (int x = 0; x < cur.shape.w; ++x)
            next.at(n, c, cur.shape.w - 1 - x, y) = cur.at(n, c, y, x);
    cur = std::move(next);
  }
  return cur;
}

SplitIndices split_by_subject(const std::vector<int>& subject_ids,
                              const std::vector<int>& labels, double fraction, uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0)
    throw ConfigError("split_by_subject: fraction must lie in (0,1)");
  if (!labels.empty() && labels.size() != subject_ids.size())
    throw UsageError("split_by_subject: label/subject count mismatch");

  // subjects grouped per class (subjects never span classes)
  std::map<int, std::vector<int>> by_class_subject;  // class -> subject list
  std::map<int, std::vector<int>> samples_of_subject;
  for (size_t i = 0; i < subject_ids.size(); ++i) {
    const int cls = labels.empty() ? 0 : labels[i];
    auto& subs = by_class_subject[cls];
    if (std::find(subs.begin(), subs.end(), subject_ids[i]) == subs.end())
      subs.push_back(subject_ids[i]);
    samples_of_subject[subject_ids[i]].push_back(static_cast<int>(i));
  }

  SplitIndices out;
  Rng rng(seed);
  for (auto& [cls, subs] : by_class_subject) {
    rng.shuffle(subs);
    const int take = std::max(1, static_cast<int>(std::lround(fraction * subs.size())));
    for (size_t k = 0; k < subs.size(); ++k) {
      auto& dst = (static_cast<int>(k) < take) ? out.first : out.second;
      for (int idx : samples_of_subject[subs[k]]) dst.push_back(idx);
    }
  }
  std::sort(out.first.begin(), out.first.end());
  std::sort(out.second.begin(), out.second.end());
  if (out.first.empty() || out.second.empty())
    throw ConfigError("split_by_subject: a partition came out empty");
  return out;
}

}  // namespace hasa
