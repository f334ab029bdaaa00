#include "mtj/network.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "mtj/loss.hpp"
#include "mtj/rng.hpp"

namespace mtj {

void NetworkConfig::validate() const {
  if (depth < 1) throw UsageError("network: depth must be >= 1");
  if (base_filters < 1) throw UsageError("network: base_filters must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw UsageError("network: kernel_size must be odd and positive");
  if (depth > 16 || base_filters > (1 << 20) >> depth) throw UsageError("network: filter count overflow");
  const int div = 1 << depth;
  if (input_w <= 0 || input_h <= 0 || input_w % div != 0 || input_h % div != 0)
    throw UsageError("network: input dimensions must be positive multiples of 2^depth");
}

std::size_t LayerSpec::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

namespace {

int gate_channels(int skip_channels) { return std::max(1, skip_channels / 2); }

std::string enc_name(int level) { return "enc" + std::to_string(level); }
std::string dec_name(int level) { return "dec" + std::to_string(level); }

}  // namespace

std::vector<LayerSpec> layer_manifest(const NetworkConfig& config) {
  config.validate();
  const int k = config.kernel_size;
  std::vector<LayerSpec> out;
  auto conv = [&](const std::string& prefix, int cout, int cin, int kernel) {
    out.push_back({prefix + "/w", {cout, cin, kernel, kernel}});
    out.push_back({prefix + "/b", {cout}});
  };
  int cin = 1;
  for (int l = 0; l < config.depth; ++l) {
    conv(enc_name(l) + "/conv1", config.filters(l), cin, k);
    conv(enc_name(l) + "/conv2", config.filters(l), config.filters(l), k);
    cin = config.filters(l);
  }
  conv("bottleneck/conv1", config.filters(config.depth), cin, k);
  conv("bottleneck/conv2", config.filters(config.depth), config.filters(config.depth), k);
  for (int l = config.depth - 1; l >= 0; --l) {
    const int f = config.filters(l);
    const int g = config.filters(l + 1);
    const int inter = gate_channels(f);
    const std::string p = dec_name(l);
    conv(p + "/up", f, g, k);
    out.push_back({p + "/gate/theta/w", {inter, f, 2, 2}});
    conv(p + "/gate/phi", inter, g, 1);
    conv(p + "/gate/psi", 1, inter, 1);
    conv(p + "/conv1", f, 2 * f, k);
    conv(p + "/conv2", f, f, k);
  }
  conv("head", 1, config.filters(0), 1);
  return out;
}

template <class T>
std::size_t WeightsT<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

template <class T>
bool WeightsT<T>::all_finite() const {
  for (const auto& t : tensors)
    for (T v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

template <class T>
std::size_t WeightsT<T>::index_of(const std::string& path) const {
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].spec.path == path) return i;
  throw DataError("weights: no tensor named '" + path + "'");
}

template <class T>
WeightsT<T> WeightsT<T>::zeros_like() const {
  WeightsT out;
  out.config = config;
  out.tensors.reserve(tensors.size());
  for (const auto& t : tensors) out.tensors.push_back({t.spec, std::vector<T>(t.values.size(), T(0))});
  return out;
}

template struct WeightsT<float>;
template struct WeightsT<double>;

ModelWeights init_weights(const NetworkConfig& config) {
  ModelWeights w;
  w.config = config;
  const auto manifest = layer_manifest(config);
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const LayerSpec& spec = manifest[i];
    std::vector<float> values(spec.size(), 0.0f);
    if (spec.shape.size() == 4) {
      const int fan_in = spec.shape[1] * spec.shape[2] * spec.shape[3];
      const double limit = std::sqrt(6.0 / fan_in);
      Rng rng(derive_seed(config.rng_seed, hash_name("init"), i));
      for (float& v : values) v = static_cast<float>(rng.uniform(-limit, limit));
    }
    w.tensors.push_back({spec, std::move(values)});
  }
  return w;
}

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// [channels, height, width] activation.
template <class T>
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int channels, int height, int width)
      : c(channels), h(height), w(width), v(static_cast<std::size_t>(channels) * height * width, T(0)) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  T* channel(int i) { return v.data() + i * plane(); }
  const T* channel(int i) const { return v.data() + i * plane(); }
};

template <class T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> buffers[2];
  return buffers[slot];
}

template <class T>
void im2col(const Tensor<T>& in, int k, std::vector<T>& col) {
  const int pad = k / 2;
  const std::size_t hw = in.plane();
  col.resize(static_cast<std::size_t>(in.c) * k * k * hw);
  for (int ci = 0; ci < in.c; ++ci) {
    const T* src = in.channel(ci);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        const int x_lo = std::max(0, pad - kx);
        const int x_hi = std::min(in.w, in.w + pad - kx);
        for (int y = 0; y < in.h; ++y) {
          T* drow = dst + static_cast<std::size_t>(y) * in.w;
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= in.h) {
            std::fill(drow, drow + in.w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * in.w + (kx - pad);
          std::fill(drow, drow + x_lo, T(0));
          std::copy(srow + x_lo, srow + x_hi, drow + x_lo);
          std::fill(drow + x_hi, drow + in.w, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im(const std::vector<T>& col, int k, Tensor<T>& out) {
  const int pad = k / 2;
  const std::size_t hw = out.plane();
  std::fill(out.v.begin(), out.v.end(), T(0));
  for (int ci = 0; ci < out.c; ++ci) {
    T* dst = out.channel(ci);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        const int x_lo = std::max(0, pad - kx);
        const int x_hi = std::min(out.w, out.w + pad - kx);
        for (int y = 0; y < out.h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= out.h) continue;
          const T* srow = src + static_cast<std::size_t>(y) * out.w;
          T* drow = dst + static_cast<std::size_t>(sy) * out.w + (kx - pad);
          for (int x = x_lo; x < x_hi; ++x) drow[x] += srow[x];
        }
      }
    }
  }
}

/// Same-padded stride-1 convolution with bias (bias may be empty).
template <class T>
Tensor<T> conv_forward(const Tensor<T>& in, const ParamTensor<T>& weight, const ParamTensor<T>* bias) {
  const int cout = weight.spec.shape[0];
  const int k = weight.spec.shape[2];
  Tensor<T> out(cout, in.h, in.w);
  const auto hw = static_cast<Eigen::Index>(in.plane());
  MatMap<T> o(out.v.data(), cout, hw);
  ConstMatMap<T> wm(weight.values.data(), cout, static_cast<Eigen::Index>(in.c) * k * k);
  if (k == 1) {
    o.noalias() = wm * ConstMatMap<T>(in.v.data(), in.c, hw);
  } else {
    auto& col = scratch<T>(0);
    im2col(in, k, col);
    o.noalias() = wm * ConstMatMap<T>(col.data(), static_cast<Eigen::Index>(in.c) * k * k, hw);
  }
  if (bias != nullptr)
    for (int c = 0; c < cout; ++c) o.row(c).array() += bias->values[c];
  return out;
}

/// Accumulates dW/db and optionally writes d(input).
template <class T>
void conv_backward(const Tensor<T>& in, const ParamTensor<T>& weight, const Tensor<T>& dout, ParamTensor<T>& dweight,
                   ParamTensor<T>* dbias, Tensor<T>* din) {
  const int cout = weight.spec.shape[0];
  const int k = weight.spec.shape[2];
  const auto hw = static_cast<Eigen::Index>(in.plane());
  const auto rows = static_cast<Eigen::Index>(in.c) * k * k;
  ConstMatMap<T> d(dout.v.data(), cout, hw);
  ConstMatMap<T> wm(weight.values.data(), cout, rows);
  MatMap<T> dw(dweight.values.data(), cout, rows);
  if (dbias != nullptr) {
    // Plain loop: Eigen's vectorized sum() peels by pointer alignment, which
    // would make the result depend on where the buffer happens to be allocated.
    for (int c = 0; c < cout; ++c) {
      const T* row = dout.v.data() + static_cast<std::size_t>(c) * static_cast<std::size_t>(hw);
      T acc = 0;
      for (Eigen::Index i = 0; i < hw; ++i) acc += row[i];
      dbias->values[c] += acc;
    }
  }
  if (k == 1) {
    ConstMatMap<T> x(in.v.data(), in.c, hw);
    dw.noalias() += d * x.transpose();
    if (din != nullptr) {
      *din = Tensor<T>(in.c, in.h, in.w);
      MatMap<T>(din->v.data(), in.c, hw).noalias() = wm.transpose() * d;
    }
    return;
  }
  auto& col = scratch<T>(0);
  im2col(in, k, col);
  dw.noalias() += d * ConstMatMap<T>(col.data(), rows, hw).transpose();
  if (din != nullptr) {
    auto& dcol = scratch<T>(1);
    dcol.resize(static_cast<std::size_t>(rows * hw));
    MatMap<T>(dcol.data(), rows, hw).noalias() = wm.transpose() * d;
    *din = Tensor<T>(in.c, in.h, in.w);
    col2im(dcol, k, *din);
  }
}

/// 2x2 stride-2 convolution without bias (attention-gate skip projection).
template <class T>
void space_to_depth(const Tensor<T>& in, std::vector<T>& col) {
  const int oh = in.h / 2;
  const int ow = in.w / 2;
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  col.resize(static_cast<std::size_t>(in.c) * 4 * ohw);
  for (int c = 0; c < in.c; ++c)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        T* dst = col.data() + (static_cast<std::size_t>(c) * 4 + dy * 2 + dx) * ohw;
        const T* src = in.channel(c);
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) dst[y * ow + x] = src[(2 * y + dy) * in.w + 2 * x + dx];
      }
}

template <class T>
Tensor<T> strided_forward(const Tensor<T>& in, const ParamTensor<T>& weight) {
  const int cout = weight.spec.shape[0];
  Tensor<T> out(cout, in.h / 2, in.w / 2);
  auto& col = scratch<T>(0);
  space_to_depth(in, col);
  const auto ohw = static_cast<Eigen::Index>(out.plane());
  MatMap<T>(out.v.data(), cout, ohw).noalias() =
      ConstMatMap<T>(weight.values.data(), cout, in.c * 4) * ConstMatMap<T>(col.data(), in.c * 4, ohw);
  return out;
}

template <class T>
void strided_backward(const Tensor<T>& in, const ParamTensor<T>& weight, const Tensor<T>& dout,
                      ParamTensor<T>& dweight, Tensor<T>& din_accum) {
  const int cout = weight.spec.shape[0];
  const auto ohw = static_cast<Eigen::Index>(dout.plane());
  auto& col = scratch<T>(0);
  space_to_depth(in, col);
  ConstMatMap<T> d(dout.v.data(), cout, ohw);
  MatMap<T>(dweight.values.data(), cout, in.c * 4).noalias() +=
      d * ConstMatMap<T>(col.data(), in.c * 4, ohw).transpose();
  auto& dcol = scratch<T>(1);
  dcol.resize(static_cast<std::size_t>(in.c) * 4 * ohw);
  MatMap<T>(dcol.data(), in.c * 4, ohw).noalias() =
      ConstMatMap<T>(weight.values.data(), cout, in.c * 4).transpose() * d;
  const int ow = dout.w;
  for (int c = 0; c < in.c; ++c)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const T* src = dcol.data() + (static_cast<std::size_t>(c) * 4 + dy * 2 + dx) * ohw;
        T* dst = din_accum.channel(c);
        for (int y = 0; y < dout.h; ++y)
          for (int x = 0; x < ow; ++x) dst[(2 * y + dy) * in.w + 2 * x + dx] += src[y * ow + x];
      }
}

template <class T>
void relu_inplace(Tensor<T>& t) {
  for (T& x : t.v) x = x > T(0) ? x : T(0);
}

/// Masks an upstream gradient by the rectifier's active set.
template <class T>
void relu_backward(const Tensor<T>& activated, Tensor<T>& grad) {
  for (std::size_t i = 0; i < grad.v.size(); ++i)
    if (!(activated.v[i] > T(0))) grad.v[i] = T(0);
}

template <class T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

template <class T>
Tensor<T> maxpool_forward(const Tensor<T>& in, std::vector<int>* argmax) {
  Tensor<T> out(in.c, in.h / 2, in.w / 2);
  if (argmax != nullptr) argmax->resize(out.v.size());
  std::size_t o = 0;
  for (int c = 0; c < in.c; ++c) {
    const T* src = in.channel(c);
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x, ++o) {
        int best = 2 * y * in.w + 2 * x;
        for (int off : {best + 1, best + in.w, best + in.w + 1})
          if (src[off] > src[best]) best = off;
        out.v[o] = src[best];
        if (argmax != nullptr) (*argmax)[o] = best;
      }
  }
  return out;
}

template <class T>
void maxpool_backward(const Tensor<T>& dout, const std::vector<int>& argmax, Tensor<T>& din_accum) {
  std::size_t o = 0;
  for (int c = 0; c < dout.c; ++c) {
    T* dst = din_accum.channel(c);
    for (std::size_t i = 0; i < dout.plane(); ++i, ++o) dst[argmax[o]] += dout.v[o];
  }
}

template <class T>
Tensor<T> upsample_forward(const Tensor<T>& in) {
  Tensor<T> out(in.c, in.h * 2, in.w * 2);
  for (int c = 0; c < in.c; ++c) {
    const T* src = in.channel(c);
    T* dst = out.channel(c);
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) dst[y * out.w + x] = src[(y / 2) * in.w + x / 2];
  }
  return out;
}

template <class T>
Tensor<T> upsample_backward(const Tensor<T>& dout) {
  Tensor<T> din(dout.c, dout.h / 2, dout.w / 2);
  for (int c = 0; c < dout.c; ++c) {
    const T* src = dout.channel(c);
    T* dst = din.channel(c);
    for (int y = 0; y < dout.h; ++y)
      for (int x = 0; x < dout.w; ++x) dst[(y / 2) * din.w + x / 2] += src[y * dout.w + x];
  }
  return din;
}

template <class T>
void add_into(Tensor<T>& acc, const Tensor<T>& t) {
  if (acc.v.empty()) {
    acc = t;
    return;
  }
  for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += t.v[i];
}

/// Gate intermediates kept for the backward pass.
template <class T>
struct GateTape {
  Tensor<T> q;      // relu(theta*skip + phi*gating)
  Tensor<T> alpha;  // sigmoid coefficients at gating resolution
};

struct GateParams {
  std::size_t theta, phi_w, phi_b, psi_w, psi_b;
};

template <class T>
Tensor<T> gate_forward(const WeightsT<T>& w, const GateParams& ix, const Tensor<T>& skip, const Tensor<T>& gating,
                       GateTape<T>* tape) {
  Tensor<T> q = strided_forward(skip, w.tensors[ix.theta]);
  const Tensor<T> pg = conv_forward(gating, w.tensors[ix.phi_w], &w.tensors[ix.phi_b]);
  for (std::size_t i = 0; i < q.v.size(); ++i) q.v[i] = std::max(T(0), q.v[i] + pg.v[i]);
  Tensor<T> alpha = conv_forward(q, w.tensors[ix.psi_w], &w.tensors[ix.psi_b]);
  for (T& a : alpha.v) a = sigmoid(a);
  Tensor<T> gated(skip.c, skip.h, skip.w);
  for (int c = 0; c < skip.c; ++c) {
    const T* s = skip.channel(c);
    T* g = gated.channel(c);
    for (int y = 0; y < skip.h; ++y)
      for (int x = 0; x < skip.w; ++x) g[y * skip.w + x] = s[y * skip.w + x] * alpha.v[(y / 2) * alpha.w + x / 2];
  }
  if (tape != nullptr) {
    tape->q = std::move(q);
    tape->alpha = std::move(alpha);
  }
  return gated;
}

template <class T>
void gate_backward(const WeightsT<T>& w, const GateParams& ix, const Tensor<T>& skip, const Tensor<T>& gating,
                   const GateTape<T>& tape, const Tensor<T>& dgated, WeightsT<T>& grads, Tensor<T>& dskip,
                   Tensor<T>& dgating) {
  const Tensor<T>& alpha = tape.alpha;
  Tensor<T> dalpha(1, alpha.h, alpha.w);
  for (int c = 0; c < skip.c; ++c) {
    const T* s = skip.channel(c);
    const T* dg = dgated.channel(c);
    T* ds = dskip.channel(c);
    for (int y = 0; y < skip.h; ++y)
      for (int x = 0; x < skip.w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * skip.w + x;
        const std::size_t a = static_cast<std::size_t>(y / 2) * alpha.w + x / 2;
        ds[i] += dg[i] * alpha.v[a];
        dalpha.v[a] += dg[i] * s[i];
      }
  }
  for (std::size_t i = 0; i < dalpha.v.size(); ++i) dalpha.v[i] *= alpha.v[i] * (T(1) - alpha.v[i]);
  Tensor<T> dq;
  conv_backward(tape.q, w.tensors[ix.psi_w], dalpha, grads.tensors[ix.psi_w], &grads.tensors[ix.psi_b], &dq);
  relu_backward(tape.q, dq);
  strided_backward(skip, w.tensors[ix.theta], dq, grads.tensors[ix.theta], dskip);
  Tensor<T> dg;
  conv_backward(gating, w.tensors[ix.phi_w], dq, grads.tensors[ix.phi_w], &grads.tensors[ix.phi_b], &dg);
  add_into(dgating, dg);
}

struct ConvParams {
  std::size_t w, b;
};

template <class T>
struct EncoderTape {
  Tensor<T> input, r1, skip;
  std::vector<int> argmax;
};

template <class T>
struct DecoderTape {
  Tensor<T> up, ru, cat, r1, out;
  GateTape<T> gate;
};

template <class T>
struct Tape {
  std::vector<EncoderTape<T>> enc;
  Tensor<T> bottleneck_in, bottleneck_r1, bottleneck_out;
  std::vector<DecoderTape<T>> dec;  // indexed by level
  std::vector<T> logits;
};

/// Resolves tensor indices for one configuration.
struct Layout {
  std::vector<ConvParams> enc1, enc2, up, dec1, dec2;
  std::vector<GateParams> gate;
  ConvParams bott1{}, bott2{}, head{};

  template <class T>
  explicit Layout(const WeightsT<T>& w) {
    const int depth = w.config.depth;
    auto conv = [&](const std::string& p) { return ConvParams{w.index_of(p + "/w"), w.index_of(p + "/b")}; };
    for (int l = 0; l < depth; ++l) {
      enc1.push_back(conv(enc_name(l) + "/conv1"));
      enc2.push_back(conv(enc_name(l) + "/conv2"));
      const std::string d = dec_name(l);
      up.push_back(conv(d + "/up"));
      gate.push_back({w.index_of(d + "/gate/theta/w"), w.index_of(d + "/gate/phi/w"), w.index_of(d + "/gate/phi/b"),
                      w.index_of(d + "/gate/psi/w"), w.index_of(d + "/gate/psi/b")});
      dec1.push_back(conv(d + "/conv1"));
      dec2.push_back(conv(d + "/conv2"));
    }
    bott1 = conv("bottleneck/conv1");
    bott2 = conv("bottleneck/conv2");
    head = conv("head");
  }
};

template <class T>
void check_shapes(const WeightsT<T>& w) {
  const auto manifest = layer_manifest(w.config);
  if (manifest.size() != w.tensors.size()) throw DataError("weights: tensor count does not match configuration");
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (!(manifest[i] == w.tensors[i].spec) || w.tensors[i].values.size() != manifest[i].size())
      throw DataError("weights: tensor '" + w.tensors[i].spec.path + "' does not match configuration");
  }
}

template <class T>
void check_input(const WeightsT<T>& w, const Grid& frame) {
  if (frame.width() != w.config.input_w || frame.height() != w.config.input_h)
    throw DataError("network: input is " + std::to_string(frame.width()) + "x" + std::to_string(frame.height()) +
                    ", network expects " + std::to_string(w.config.input_w) + "x" + std::to_string(w.config.input_h));
  check_shapes(w);
  if (!w.all_finite()) throw NumericError("network: non-finite weights");
}

template <class T>
Tensor<T> conv_relu(const WeightsT<T>& w, const ConvParams& p, const Tensor<T>& in) {
  Tensor<T> out = conv_forward(in, w.tensors[p.w], &w.tensors[p.b]);
  relu_inplace(out);
  return out;
}

template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return out;
}

/// Full forward pass. With a tape, every intermediate needed by backward is kept.
template <class T>
std::vector<T> run_forward(const WeightsT<T>& w, const Grid& frame, Tape<T>* tape) {
  check_input(w, frame);
  const Layout ix(w);
  const int depth = w.config.depth;
  Tensor<T> x(1, frame.height(), frame.width());
  std::copy(frame.values().begin(), frame.values().end(), x.v.begin());

  std::vector<Tensor<T>> skips(depth);
  if (tape != nullptr) tape->enc.resize(depth);
  for (int l = 0; l < depth; ++l) {
    Tensor<T> r1 = conv_relu(w, ix.enc1[l], x);
    skips[l] = conv_relu(w, ix.enc2[l], r1);
    Tensor<T> pooled = maxpool_forward(skips[l], tape != nullptr ? &tape->enc[l].argmax : nullptr);
    if (tape != nullptr) {
      tape->enc[l].input = std::move(x);
      tape->enc[l].r1 = std::move(r1);
    }
    x = std::move(pooled);
  }
  Tensor<T> br1 = conv_relu(w, ix.bott1, x);
  Tensor<T> g = conv_relu(w, ix.bott2, br1);
  if (tape != nullptr) {
    tape->bottleneck_in = std::move(x);
    tape->bottleneck_r1 = std::move(br1);
    tape->bottleneck_out = g;
    tape->dec.resize(depth);
  }
  for (int l = depth - 1; l >= 0; --l) {
    DecoderTape<T>* dt = tape != nullptr ? &tape->dec[l] : nullptr;
    Tensor<T> up = upsample_forward(g);
    Tensor<T> ru = conv_relu(w, ix.up[l], up);
    Tensor<T> gated = gate_forward(w, ix.gate[l], skips[l], g, dt != nullptr ? &dt->gate : nullptr);
    Tensor<T> cat = concat(gated, ru);
    Tensor<T> r1 = conv_relu(w, ix.dec1[l], cat);
    Tensor<T> out = conv_relu(w, ix.dec2[l], r1);
    if (dt != nullptr) {
      dt->up = std::move(up);
      dt->ru = std::move(ru);
      dt->cat = std::move(cat);
      dt->r1 = std::move(r1);
      dt->out = out;
    }
    g = std::move(out);
  }
  if (tape != nullptr) {
    for (int l = 0; l < depth; ++l) tape->enc[l].skip = std::move(skips[l]);
  }
  Tensor<T> logits = conv_forward(g, w.tensors[ix.head.w], &w.tensors[ix.head.b]);
  return std::move(logits.v);
}

template <class T>
void run_backward(const WeightsT<T>& w, const Tape<T>& tape, const Tensor<T>& head_in, Tensor<T> dlogits,
                  WeightsT<T>& grads) {
  const Layout ix(w);
  const int depth = w.config.depth;
  Tensor<T> dcur;
  conv_backward(head_in, w.tensors[ix.head.w], dlogits, grads.tensors[ix.head.w], &grads.tensors[ix.head.b], &dcur);

  std::vector<Tensor<T>> dskips(depth);
  for (int l = 0; l < depth; ++l) {
    const DecoderTape<T>& dt = tape.dec[l];
    const Tensor<T>& skip = tape.enc[l].skip;
    const Tensor<T>& gating = (l == depth - 1) ? tape.bottleneck_out : tape.dec[l + 1].out;
    relu_backward(dt.out, dcur);
    Tensor<T> dr1;
    conv_backward(dt.r1, w.tensors[ix.dec2[l].w], dcur, grads.tensors[ix.dec2[l].w], &grads.tensors[ix.dec2[l].b], &dr1);
    relu_backward(dt.r1, dr1);
    Tensor<T> dcat;
    conv_backward(dt.cat, w.tensors[ix.dec1[l].w], dr1, grads.tensors[ix.dec1[l].w], &grads.tensors[ix.dec1[l].b],
                  &dcat);
    const std::size_t split = static_cast<std::size_t>(skip.c) * skip.plane();
    Tensor<T> dgated(skip.c, skip.h, skip.w);
    std::copy(dcat.v.begin(), dcat.v.begin() + static_cast<std::ptrdiff_t>(split), dgated.v.begin());
    Tensor<T> dru(dt.ru.c, dt.ru.h, dt.ru.w);
    std::copy(dcat.v.begin() + static_cast<std::ptrdiff_t>(split), dcat.v.end(), dru.v.begin());

    relu_backward(dt.ru, dru);
    Tensor<T> dup;
    conv_backward(dt.up, w.tensors[ix.up[l].w], dru, grads.tensors[ix.up[l].w], &grads.tensors[ix.up[l].b], &dup);
    Tensor<T> dgating = upsample_backward(dup);

    dskips[l] = Tensor<T>(skip.c, skip.h, skip.w);
    gate_backward(w, ix.gate[l], skip, gating, dt.gate, dgated, grads, dskips[l], dgating);
    dcur = std::move(dgating);
  }

  // dcur now holds d(bottleneck output).
  relu_backward(tape.bottleneck_out, dcur);
  Tensor<T> dbr1;
  conv_backward(tape.bottleneck_r1, w.tensors[ix.bott2.w], dcur, grads.tensors[ix.bott2.w],
                &grads.tensors[ix.bott2.b], &dbr1);
  relu_backward(tape.bottleneck_r1, dbr1);
  Tensor<T> dx;
  conv_backward(tape.bottleneck_in, w.tensors[ix.bott1.w], dbr1, grads.tensors[ix.bott1.w],
                &grads.tensors[ix.bott1.b], &dx);

  for (int l = depth - 1; l >= 0; --l) {
    const EncoderTape<T>& et = tape.enc[l];
    Tensor<T>& dskip = dskips[l];
    maxpool_backward(dx, et.argmax, dskip);
    relu_backward(et.skip, dskip);
    Tensor<T> dr1;
    conv_backward(et.r1, w.tensors[ix.enc2[l].w], dskip, grads.tensors[ix.enc2[l].w], &grads.tensors[ix.enc2[l].b],
                  &dr1);
    relu_backward(et.r1, dr1);
    conv_backward(et.input, w.tensors[ix.enc1[l].w], dr1, grads.tensors[ix.enc1[l].w], &grads.tensors[ix.enc1[l].b],
                  l > 0 ? &dx : nullptr);
  }
}

}  // namespace

template <class T>
std::vector<T> forward_logits(const WeightsT<T>& weights, const Grid& frame) {
  return run_forward<T>(weights, frame, nullptr);
}

template <class T>
ProbabilityMap forward(const WeightsT<T>& weights, const Grid& frame) {
  const std::vector<T> logits = run_forward<T>(weights, frame, nullptr);
  ProbabilityMap out(frame.width(), frame.height());
  auto v = out.values();
  for (std::size_t i = 0; i < logits.size(); ++i) v[i] = static_cast<float>(sigmoid(logits[i]));
  return out;
}

template <class T>
double accumulate_gradients(const WeightsT<T>& weights, const Grid& frame, const Grid& target, double zero_class_weight,
                            WeightsT<T>& grads, T grad_scale) {
  if (!frame.same_shape(target)) throw DataError("network: target and frame dimensions differ");
  if (grads.tensors.size() != weights.tensors.size()) throw DataError("network: gradient structure mismatch");
  Tape<T> tape;
  tape.logits = run_forward<T>(weights, frame, &tape);
  const std::size_t n = tape.logits.size();
  Tensor<T> dlogits(1, frame.height(), frame.width());
  double loss = 0.0;
  const auto y = target.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double p = static_cast<double>(sigmoid(tape.logits[i]));
    loss += weighted_bce_pixel(p, y[i], zero_class_weight);
    dlogits.v[i] = static_cast<T>(weighted_bce_logit_grad(p, y[i], zero_class_weight) / static_cast<double>(n)) *
                   grad_scale;
  }
  const Tensor<T>& head_in = tape.dec.front().out;
  run_backward(weights, tape, head_in, std::move(dlogits), grads);
  return loss / static_cast<double>(n);
}

template <class T>
WeightsT<T> backward(const WeightsT<T>& weights, const Grid& frame, const Grid& target, double zero_class_weight) {
  WeightsT<T> grads = weights.zeros_like();
  accumulate_gradients(weights, frame, target, zero_class_weight, grads);
  return grads;
}

template ProbabilityMap forward<float>(const WeightsT<float>&, const Grid&);
template ProbabilityMap forward<double>(const WeightsT<double>&, const Grid&);
template std::vector<float> forward_logits<float>(const WeightsT<float>&, const Grid&);
template std::vector<double> forward_logits<double>(const WeightsT<double>&, const Grid&);
template double accumulate_gradients<float>(const WeightsT<float>&, const Grid&, const Grid&, double,
                                            WeightsT<float>&, float);
template double accumulate_gradients<double>(const WeightsT<double>&, const Grid&, const Grid&, double,
                                             WeightsT<double>&, double);
template WeightsT<float> backward<float>(const WeightsT<float>&, const Grid&, const Grid&, double);
template WeightsT<double> backward<double>(const WeightsT<double>&, const Grid&, const Grid&, double);

GateOutput attention_gate(const GateInput& in) {
  if (in.height % 2 != 0 || in.width % 2 != 0) throw DataError("attention_gate: skip dimensions must be even");
  const int inter = in.theta.empty() ? 0 : static_cast<int>(in.theta.size() / (static_cast<std::size_t>(in.channels) * 4));
  const std::size_t skip_n = static_cast<std::size_t>(in.channels) * in.height * in.width;
  const std::size_t gate_n = static_cast<std::size_t>(in.gating_channels) * (in.height / 2) * (in.width / 2);
  if (in.skip.size() != skip_n || in.gating.size() != gate_n || inter < 1 ||
      in.theta.size() != static_cast<std::size_t>(inter) * in.channels * 4 ||
      in.phi.size() != static_cast<std::size_t>(inter) * in.gating_channels ||
      in.phi_bias.size() != static_cast<std::size_t>(inter) || in.psi.size() != static_cast<std::size_t>(inter) ||
      in.psi_bias.size() != 1)
    throw DataError("attention_gate: shape mismatch");

  WeightsT<double> w;
  w.tensors = {{{"theta", {inter, in.channels, 2, 2}}, in.theta},
               {{"phi/w", {inter, in.gating_channels, 1, 1}}, in.phi},
               {{"phi/b", {inter}}, in.phi_bias},
               {{"psi/w", {1, inter, 1, 1}}, in.psi},
               {{"psi/b", {1}}, in.psi_bias}};
  Tensor<double> skip(in.channels, in.height, in.width);
  skip.v = in.skip;
  Tensor<double> gating(in.gating_channels, in.height / 2, in.width / 2);
  gating.v = in.gating;
  GateTape<double> tape;
  Tensor<double> gated = gate_forward(w, GateParams{0, 1, 2, 3, 4}, skip, gating, &tape);
  return {std::move(gated.v), std::move(tape.alpha.v)};
}

namespace {

constexpr char kMagic[4] = {'M', 'T', 'J', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;

template <class U>
void write_le(std::ostream& os, U value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  os.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <class U>
U read_le(std::istream& is) {
  U value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(U));
  if (!is) throw DataError("weights: truncated file");
  return value;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const ModelWeights& weights) {
  check_shapes(weights);
  nlohmann::ordered_json header;
  const NetworkConfig& c = weights.config;
  header["config"] = {{"depth", c.depth},     {"base_filters", c.base_filters}, {"input_w", c.input_w},
                      {"input_h", c.input_h}, {"kernel_size", c.kernel_size},   {"rng_seed", c.rng_seed}};
  auto& layers = header["layers"] = nlohmann::ordered_json::array();
  for (const auto& t : weights.tensors) layers.push_back({{"path", t.spec.path}, {"shape", t.spec.shape}});
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("weights: cannot open '" + path.string() + "' for writing");
  os.write(kMagic, 4);
  write_le<std::uint32_t>(os, kWeightsVersion);
  write_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : weights.tensors)
    os.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * 4));
  os.flush();
  if (!os) throw DataError("weights: write to '" + path.string() + "' failed");
}

ModelWeights load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("weights: cannot open '" + path.string() + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw DataError("weights: bad magic in '" + path.string() + "'");
  if (read_le<std::uint32_t>(is) != kWeightsVersion) throw DataError("weights: unsupported version");
  const auto header_len = read_le<std::uint64_t>(is);
  if (header_len > (1u << 26)) throw DataError("weights: header too large");
  std::string text(header_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw DataError("weights: truncated header");

  ModelWeights w;
  try {
    const auto header = nlohmann::json::parse(text);
    const auto& c = header.at("config");
    w.config.depth = c.at("depth").get<int>();
    w.config.base_filters = c.at("base_filters").get<int>();
    w.config.input_w = c.at("input_w").get<int>();
    w.config.input_h = c.at("input_h").get<int>();
    w.config.kernel_size = c.at("kernel_size").get<int>();
    w.config.rng_seed = c.at("rng_seed").get<std::uint64_t>();
    const auto manifest = layer_manifest(w.config);
    const auto& layers = header.at("layers");
    if (layers.size() != manifest.size()) throw DataError("weights: layer count does not match configuration");
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      LayerSpec spec{layers[i].at("path").get<std::string>(), layers[i].at("shape").get<std::vector<int>>()};
      if (!(spec == manifest[i])) throw DataError("weights: layer '" + spec.path + "' has unexpected name or shape");
      w.tensors.push_back({std::move(spec), {}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("weights: malformed header: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("weights: invalid configuration: ") + e.what());
  }
  for (auto& t : w.tensors) {
    t.values.resize(t.spec.size());
    is.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * 4));
    if (!is) throw DataError("weights: truncated tensor '" + t.spec.path + "'");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("weights: trailing bytes after last tensor");
  return w;
}

}  // namespace mtj
