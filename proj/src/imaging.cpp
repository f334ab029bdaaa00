#include "mtj/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mtj/rng.hpp"

namespace mtj {

namespace {

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

/// Cubic taps for each output sample along one axis of the crop.
std::vector<Taps> cubic_taps(int offset, int src_len, int out_len) {
  std::vector<Taps> taps(static_cast<std::size_t>(out_len));
  const double scale = static_cast<double>(src_len) / out_len;
  for (int i = 0; i < out_len; ++i) {
    const double s = (i + 0.5) * scale - 0.5;
    const double base = std::floor(s);
    const double frac = s - base;
    Taps& t = taps[static_cast<std::size_t>(i)];
    for (int k = 0; k < 4; ++k) {
      const int j = static_cast<int>(base) - 1 + k;
      t.index[k] = offset + std::clamp(j, 0, src_len - 1);
      t.weight[k] = cubic_weight(frac - (k - 1));
    }
  }
  return taps;
}

}  // namespace

Frame crop_resize(const Frame& frame, const CropSpec& crop, int out_w, int out_h) {
  if (crop.w <= 0 || crop.h <= 0 || crop.x < 0 || crop.y < 0 || crop.x + crop.w > frame.width() ||
      crop.y + crop.h > frame.height())
    throw DataError("crop_resize: crop (" + std::to_string(crop.x) + "," + std::to_string(crop.y) + "," +
                    std::to_string(crop.w) + "," + std::to_string(crop.h) + ") is outside the " +
                    std::to_string(frame.width()) + "x" + std::to_string(frame.height()) + " frame");
  if (out_w <= 0 || out_h <= 0) throw DataError("crop_resize: output size must be positive");

  float lo = frame.at(crop.x, crop.y);
  float hi = lo;
  for (int y = crop.y; y < crop.y + crop.h; ++y)
    for (int x = crop.x; x < crop.x + crop.w; ++x) {
      lo = std::min(lo, frame.at(x, y));
      hi = std::max(hi, frame.at(x, y));
    }

  const auto xt = cubic_taps(crop.x, crop.w, out_w);
  const auto yt = cubic_taps(crop.y, crop.h, out_h);
  // Horizontal pass over the rows the vertical taps touch, then vertical pass.
  std::vector<double> rows(static_cast<std::size_t>(frame.height()) * out_w, 0.0);
  for (int y = crop.y; y < crop.y + crop.h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const Taps& t = xt[static_cast<std::size_t>(x)];
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += t.weight[k] * frame.at(t.index[k], y);
      rows[static_cast<std::size_t>(y) * out_w + x] = acc;
    }
  Frame out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const Taps& t = yt[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += t.weight[k] * rows[static_cast<std::size_t>(t.index[k]) * out_w + x];
      out.at(x, y) = std::clamp(static_cast<float>(acc), lo, hi);
    }
  }
  return out;
}

Point to_grid_coords(Point raw, const CropSpec& crop, int out_w, int out_h) {
  return {(raw.x - crop.x + 0.5) * out_w / crop.w - 0.5, (raw.y - crop.y + 0.5) * out_h / crop.h - 0.5};
}

Frame normalize(const Frame& frame) {
  Frame out(frame.width(), frame.height());
  if (frame.empty()) return out;
  const auto in = frame.values();
  double mean = 0.0;
  for (float v : in) mean += v;
  mean /= static_cast<double>(in.size());
  double var = 0.0;
  for (float v : in) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(in.size()));
  if (sd < kNormalizeEpsilon) return out;
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = static_cast<float>((in[i] - mean) / sd);
  return out;
}

bool AugmentParams::in_range() const {
  return std::abs(rotation_deg) <= kMaxRotationDeg && zoom >= kMinZoom && zoom <= kMaxZoom &&
         std::abs(shear) <= kMaxShear && std::abs(shift_x) <= kMaxShift && std::abs(shift_y) <= kMaxShift;
}

AugmentParams sample_augment(std::uint64_t seed) {
  Rng rng(seed, "augment");
  AugmentParams p;
  p.rotation_deg = rng.uniform(-kMaxRotationDeg, kMaxRotationDeg);
  p.zoom = rng.uniform(kMinZoom, kMaxZoom);
  p.shear = rng.uniform(-kMaxShear, kMaxShear);
  p.shift_x = rng.uniform(-kMaxShift, kMaxShift);
  p.shift_y = rng.uniform(-kMaxShift, kMaxShift);
  p.flip_h = rng.coin();
  p.flip_v = rng.coin();
  return p;
}

namespace {

/// Row-major 3x3 product restricted to affine rows.
Affine compose(const Affine& outer, const Affine& inner) {
  const auto& a = outer.m;
  const auto& b = inner.m;
  return {{a[0] * b[0] + a[1] * b[3], a[0] * b[1] + a[1] * b[4], a[0] * b[2] + a[1] * b[5] + a[2],
           a[3] * b[0] + a[4] * b[3], a[3] * b[1] + a[4] * b[4], a[3] * b[2] + a[4] * b[5] + a[5]}};
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

Affine Affine::inverse() const {
  const double det = m[0] * m[4] - m[1] * m[3];
  if (det == 0.0) throw NumericError("affine: singular transform");
  const double a = m[4] / det;
  const double b = -m[1] / det;
  const double d = -m[3] / det;
  const double e = m[0] / det;
  return {{a, b, -(a * m[2] + b * m[5]), d, e, -(d * m[2] + e * m[5])}};
}

Affine augment_transform(const AugmentParams& p, int width, int height) {
  const double cx = (width - 1) / 2.0;
  const double cy = (height - 1) / 2.0;
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const Affine to_centre{{1, 0, -cx, 0, 1, -cy}};
  const Affine rotation{{std::cos(th), -std::sin(th), 0, std::sin(th), std::cos(th), 0}};
  const Affine shear{{1, -std::sin(p.shear), 0, 0, std::cos(p.shear), 0}};
  const Affine zoom{{p.zoom, 0, 0, 0, p.zoom, 0}};
  const Affine shift{{1, 0, p.shift_x * width, 0, 1, p.shift_y * height}};
  const Affine flips{{p.flip_h ? -1.0 : 1.0, 0, 0, 0, p.flip_v ? -1.0 : 1.0, 0}};
  const Affine from_centre{{1, 0, cx, 0, 1, cy}};
  Affine t = to_centre;
  for (const Affine* f : {&rotation, &shear, &zoom, &shift, &flips, &from_centre}) t = compose(*f, t);
  return t;
}

Grid warp_reflect(const Grid& src, const Affine& forward) {
  const Affine inv = forward.inverse();
  const int w = src.width();
  const int h = src.height();
  Grid out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Point s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      const double fx = std::floor(s.x);
      const double fy = std::floor(s.y);
      const double ax = s.x - fx;
      const double ay = s.y - fy;
      const int x0 = static_cast<int>(fx);
      const int y0 = static_cast<int>(fy);
      const int xa = reflect_index(x0, w);
      const int xb = reflect_index(x0 + 1, w);
      const int ya = reflect_index(y0, h);
      const int yb = reflect_index(y0 + 1, h);
      const double top = (1.0 - ax) * src.at(xa, ya) + ax * src.at(xb, ya);
      const double bottom = (1.0 - ax) * src.at(xa, yb) + ax * src.at(xb, yb);
      out.at(x, y) = static_cast<float>((1.0 - ay) * top + ay * bottom);
    }
  return out;
}

std::pair<Frame, ProbabilityMap> apply_augment(const Frame& frame, const ProbabilityMap& map,
                                               const AugmentParams& params) {
  if (!frame.same_shape(map)) throw DataError("apply_augment: frame and map dimensions differ");
  const Affine t = augment_transform(params, frame.width(), frame.height());
  Frame f(warp_reflect(frame, t));
  ProbabilityMap m(warp_reflect(map, t));
  for (float& v : m.values()) v = std::clamp(v, 0.0f, 1.0f);
  return {std::move(f), std::move(m)};
}

}  // namespace mtj
