#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "quadnet/rng.hpp"
#include "quadnet/tensor.hpp"

namespace quadnet {

// ---- relu ---------------------------------------------------------------

// max(0, x); subgradient 0 at x == 0.
template <typename S>
Tensor<S> relu(Tensor<S> x) {
  return maximum(x, S(0));
}

// ---- conv2d ---------------------------------------------------------------

// Cross-correlation of a zero-padded [Cin,H,W] input with [Cout,Cin,k,k]
// filters, stride 1. Lowered to a GEMM over the im2col matrix; the patch
// matrix is kept alive for the backward rules.
template <typename S>
Tensor<S> conv2d(Tensor<S> x, Tensor<S> w, Tensor<S> b, int pad) {
  if (x.rank() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
  if (w.rank() != 4) throw std::invalid_argument("conv2d: weights must be [Cout,Cin,k,k], got " + shape_str(w.shape()));
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin)
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                " vs weights " + shape_str(w.shape()));
  if (w.dim(2) != w.dim(3)) throw std::invalid_argument("conv2d: kernel must be square");
  if (b.rank() != 1 || b.dim(0) != cout)
    throw std::invalid_argument("conv2d: bias must be [Cout], got " + shape_str(b.shape()));
  const int oh = h + 2 * pad - k + 1;
  const int ow = wd + 2 * pad - k + 1;
  if (oh <= 0 || ow <= 0)
    throw std::invalid_argument("conv2d: kernel does not fit padded input " + shape_str(x.shape()));

  const int patch = cin * k * k;
  auto cols = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>>(patch, oh * ow);
  cols->setZero();
  const S* xd = x.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      S* col = cols->data() + static_cast<ptrdiff_t>(oy * ow + ox) * patch;
      for (int c = 0; c < cin; ++c) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const int ix0 = ox - pad;
          const int lo = std::max(0, -ix0);
          const int hi = std::min(k, wd - ix0);
          const S* src = xd + (c * h + iy) * wd + ix0;
          S* dst = col + (c * k + ky) * k;
          for (int kx = lo; kx < hi; ++kx) dst[kx] = src[kx];
        }
      }
    }
  }

  Tensor<S> out = Tensor<S>::zeros({cout, oh, ow});
  ConstMatMap<S> wmat(w.data(), cout, patch);
  MatMap<S> omat(out.data(), cout, oh * ow);
  omat.noalias() = wmat * (*cols);
  for (int c = 0; c < cout; ++c) out.values().segment(c * oh * ow, oh * ow) += b[c];

  if (detail::recording<S>({&x, &w, &b})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("conv2d", out,
                              [x, w, b, out, cols, cin, h, wd, cout, k, pad, oh, ow]() mutable {
      const int patch2 = cin * k * k;
      ConstMatMap<S> g(out.grad().data(), cout, oh * ow);
      if (w.requires_grad()) {
        MatMap<S> gw(w.grad().data(), cout, patch2);
        gw.noalias() += g * cols->transpose();
      }
      if (b.requires_grad())
        for (int c = 0; c < cout; ++c) b.grad()[c] += g.row(c).sum();
      if (x.requires_grad()) {
        ConstMatMap<S> wmat2(w.data(), cout, patch2);
        Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> gcols = wmat2.transpose() * g;
        S* xg = x.grad().data();
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const S* col = gcols.data() + static_cast<ptrdiff_t>(oy * ow + ox) * patch2;
            for (int c = 0; c < cin; ++c) {
              for (int ky = 0; ky < k; ++ky) {
                const int iy = oy + ky - pad;
                if (iy < 0 || iy >= h) continue;
                const int ix0 = ox - pad;
                const int lo = std::max(0, -ix0);
                const int hi = std::min(k, wd - ix0);
                S* dst = xg + (c * h + iy) * wd + ix0;
                const S* src = col + (c * k + ky) * k;
                for (int kx = lo; kx < hi; ++kx) dst[kx] += src[kx];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---- max pooling ----------------------------------------------------------

// 2x2 window, stride 2; an odd trailing row/column is dropped. Gradient
// routes to the argmax cell, first index winning ties.
template <typename S>
Tensor<S> maxpool2(Tensor<S> x) {
  if (x.rank() != 3) throw std::invalid_argument("maxpool2: input must be [C,H,W], got " + shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < 2 || w < 2) throw std::invalid_argument("maxpool2: spatial extent below 2 in " + shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor<S> out = Tensor<S>::zeros({c, oh, ow});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(c * oh * ow));
  const S* xd = x.data();
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        int best = (ch * h + 2 * oy) * w + 2 * ox;
        S bv = xd[best];
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (xd[idx] > bv) {
              bv = xd[idx];
              best = idx;
            }
          }
        }
        const int o = (ch * oh + oy) * ow + ox;
        out.at(o) = bv;
        (*argmax)[static_cast<size_t>(o)] = best;
      }
    }
  }
  if (detail::recording<S>({&x})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("maxpool2", out, [x, out, argmax]() mutable {
      for (int i = 0; i < out.size(); ++i)
        x.grad()[(*argmax)[static_cast<size_t>(i)]] += out.grad()[i];
    });
  }
  return out;
}

// ---- gaussian smoothing (LCN building block) -------------------------------

namespace detail {

// One-dimensional leg of the separable Gaussian window, with the
// in-bounds weight mass per position. The 2-D coverage factorizes into
// the per-axis masses because tap validity is independent per axis.
struct SmoothAxis {
  std::vector<double> win;  // k taps
  std::vector<double> cov;  // extent entries
  int k = 0, pb = 0;
};

inline SmoothAxis smooth_axis(int k, int extent) {
  SmoothAxis ax;
  ax.k = k;
  ax.pb = (k - 1) / 2;
  ax.win.resize(static_cast<size_t>(k));
  const double sigma = 0.25 * k;
  const double c = (k - 1) / 2.0;
  for (int i = 0; i < k; ++i)
    ax.win[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
  ax.cov.assign(static_cast<size_t>(extent), 0.0);
  for (int p = 0; p < extent; ++p) {
    double m = 0.0;
    for (int i = 0; i < k; ++i) {
      const int q = p + i - ax.pb;
      if (q >= 0 && q < extent) m += ax.win[static_cast<size_t>(i)];
    }
    ax.cov[static_cast<size_t>(p)] = m;
  }
  return ax;
}

// rows x cols plane: smooth along the contiguous (cols) axis
template <typename S>
void smooth_pass_cols(const S* in, S* out, int rows, int cols, const SmoothAxis& ax) {
  for (int r = 0; r < rows; ++r) {
    const S* src = in + static_cast<ptrdiff_t>(r) * cols;
    S* dst = out + static_cast<ptrdiff_t>(r) * cols;
    for (int p = 0; p < cols; ++p) {
      const int lo = std::max(0, ax.pb - p);
      const int hi = std::min(ax.k, cols - p + ax.pb);
      double acc = 0.0;
      for (int i = lo; i < hi; ++i)
        acc += ax.win[static_cast<size_t>(i)] * static_cast<double>(src[p + i - ax.pb]);
      dst[p] = static_cast<S>(acc / ax.cov[static_cast<size_t>(p)]);
    }
  }
}

// adjoint of smooth_pass_cols: scatter g/cov back through the taps
template <typename S>
void smooth_pass_cols_adjoint(const S* g, S* out, int rows, int cols, const SmoothAxis& ax) {
  for (int r = 0; r < rows; ++r) {
    const S* src = g + static_cast<ptrdiff_t>(r) * cols;
    S* dst = out + static_cast<ptrdiff_t>(r) * cols;
    for (int p = 0; p < cols; ++p) {
      const double gp = static_cast<double>(src[p]) / ax.cov[static_cast<size_t>(p)];
      const int lo = std::max(0, ax.pb - p);
      const int hi = std::min(ax.k, cols - p + ax.pb);
      for (int i = lo; i < hi; ++i)
        dst[p + i - ax.pb] += static_cast<S>(ax.win[static_cast<size_t>(i)] * gp);
    }
  }
}

// smooth along the strided (rows) axis of one rows x cols plane
template <typename S>
void smooth_pass_rows(const S* in, S* out, int rows, int cols, const SmoothAxis& ax) {
  for (int p = 0; p < rows; ++p) {
    const int lo = std::max(0, ax.pb - p);
    const int hi = std::min(ax.k, rows - p + ax.pb);
    S* dst = out + static_cast<ptrdiff_t>(p) * cols;
    for (int x = 0; x < cols; ++x) {
      double acc = 0.0;
      for (int i = lo; i < hi; ++i)
        acc += ax.win[static_cast<size_t>(i)] *
               static_cast<double>(in[static_cast<ptrdiff_t>(p + i - ax.pb) * cols + x]);
      dst[x] = static_cast<S>(acc / ax.cov[static_cast<size_t>(p)]);
    }
  }
}

template <typename S>
void smooth_pass_rows_adjoint(const S* g, S* out, int rows, int cols, const SmoothAxis& ax) {
  for (int p = 0; p < rows; ++p) {
    const int lo = std::max(0, ax.pb - p);
    const int hi = std::min(ax.k, rows - p + ax.pb);
    const S* src = g + static_cast<ptrdiff_t>(p) * cols;
    for (int i = lo; i < hi; ++i) {
      const double wi = ax.win[static_cast<size_t>(i)] / ax.cov[static_cast<size_t>(p)];
      S* dst = out + static_cast<ptrdiff_t>(p + i - ax.pb) * cols;
      for (int x = 0; x < cols; ++x) dst[x] += static_cast<S>(wi * static_cast<double>(src[x]));
    }
  }
}

}  // namespace detail

// Per-channel weighted local average with a fixed separable Gaussian
// window, sigma = k/4. Near borders each 1-D pass renormalizes over its
// in-bounds taps, so a constant map smooths to itself exactly (sums
// accumulate in double). The window is constant: no weight gradient
// exists and backward runs the transposed passes.
template <typename S>
Tensor<S> smooth2d(Tensor<S> x, int k) {
  if (x.rank() != 3) throw std::invalid_argument("smooth2d: input must be [C,H,W], got " + shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int pb = (k - 1) / 2;  // pad before; even kernels pad one more after
  if (k < 1 || k - pb > std::min(h, w))
    throw std::invalid_argument("smooth2d: window " + std::to_string(k) + " too large for " +
                                shape_str(x.shape()));
  auto ax_x = std::make_shared<detail::SmoothAxis>(detail::smooth_axis(k, w));
  auto ax_y = std::make_shared<detail::SmoothAxis>(detail::smooth_axis(k, h));

  Tensor<S> out = Tensor<S>::zeros({c, h, w});
  std::vector<S> tmp(static_cast<size_t>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    const S* src = x.data() + static_cast<ptrdiff_t>(ch) * h * w;
    S* dst = out.data() + static_cast<ptrdiff_t>(ch) * h * w;
    detail::smooth_pass_cols(src, tmp.data(), h, w, *ax_x);
    detail::smooth_pass_rows(tmp.data(), dst, h, w, *ax_y);
  }

  if (detail::recording<S>({&x})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("smooth2d", out, [x, out, ax_x, ax_y, c, h, w]() mutable {
      std::vector<S> tmp2(static_cast<size_t>(h) * w);
      std::vector<S> back(static_cast<size_t>(h) * w);
      for (int ch = 0; ch < c; ++ch) {
        const S* g = out.grad().data() + static_cast<ptrdiff_t>(ch) * h * w;
        S* xg = x.grad().data() + static_cast<ptrdiff_t>(ch) * h * w;
        std::fill(tmp2.begin(), tmp2.end(), S(0));
        detail::smooth_pass_rows_adjoint(g, tmp2.data(), h, w, *ax_y);
        std::fill(back.begin(), back.end(), S(0));
        detail::smooth_pass_cols_adjoint(tmp2.data(), back.data(), h, w, *ax_x);
        for (int i = 0; i < h * w; ++i) xg[i] += back[static_cast<size_t>(i)];
      }
    });
  }
  return out;
}

// ---- local contrast normalization --------------------------------------

// Subtractive stage (x minus Gaussian-weighted local mean) followed by a
// divisive stage: divide by max(local weighted std, per-channel mean of
// the local stds, eps). Shape preserving and differentiable end to end.
template <typename S>
Tensor<S> lcn(Tensor<S> x, int kernel, S eps = S(1e-4)) {
  const int h = x.dim(1), w = x.dim(2);
  Tensor<S> centered = sub(x, smooth2d(x, kernel));
  Tensor<S> local_std = sqrt_elem(smooth2d(mul(centered, centered), kernel));
  Tensor<S> floor = expand_spatial(channel_mean(local_std), h, w);
  Tensor<S> denom = maximum(maximum(local_std, floor), eps);
  return div(centered, denom);
}

// ---- fully connected -----------------------------------------------------

// y = W x + b for x:[K], W:[N,K], b:[N].
template <typename S>
Tensor<S> linear(Tensor<S> x, Tensor<S> w, Tensor<S> b) {
  if (x.rank() != 1 || w.rank() != 2 || b.rank() != 1 || w.dim(1) != x.dim(0) || w.dim(0) != b.dim(0))
    throw std::invalid_argument("linear: incompatible shapes " + shape_str(x.shape()) + ", " +
                                shape_str(w.shape()) + ", " + shape_str(b.shape()));
  Tensor<S> col = reshape(x, {x.dim(0), 1});
  Tensor<S> y = add(matmul(w, col), reshape(b, {b.dim(0), 1}));
  return reshape(y, {b.dim(0)});
}

// ---- embedding tower -------------------------------------------------------

// conv1 7x7/150 -> relu -> pool -> lcn7, conv2 4x4/200 -> relu -> pool ->
// lcn7, conv3 4x4/300 -> relu -> pool -> lcn6, fc 10800->350 -> relu,
// fc 350->D. Input 3x48x48, zero pad 2 before each conv, no softmax.
constexpr int kImageChannels = 3;
constexpr int kImageSize = 48;
constexpr int kFc1Inputs = 10800;  // 300 channels * 6 * 6 after the conv stack
constexpr int kFc1Units = 350;
constexpr int kConvPad = 2;
constexpr int kDefaultEmbedDim = 100;

template <typename S>
struct EmbedderParams {
  int embed_dim = 0;
  Tensor<S> conv1_w, conv1_b;
  Tensor<S> conv2_w, conv2_b;
  Tensor<S> conv3_w, conv3_b;
  Tensor<S> fc1_w, fc1_b;
  Tensor<S> fc2_w, fc2_b;

  static constexpr int kNumParams = 10;

  template <typename F>
  void for_each(F&& f) {
    f("conv1.W", conv1_w);
    f("conv1.b", conv1_b);
    f("conv2.W", conv2_w);
    f("conv2.b", conv2_b);
    f("conv3.W", conv3_w);
    f("conv3.b", conv3_b);
    f("fc1.W", fc1_w);
    f("fc1.b", fc1_b);
    f("fc2.W", fc2_w);
    f("fc2.b", fc2_b);
  }

  template <typename F>
  void for_each(F&& f) const {
    const_cast<EmbedderParams*>(this)->for_each(
        [&](const char* name, Tensor<S>& t) { f(name, static_cast<const Tensor<S>&>(t)); });
  }

  void set_requires_grad(bool b) {
    for_each([b](const char*, Tensor<S>& t) { t.set_requires_grad(b); });
  }

  void zero_grad() {
    for_each([](const char*, Tensor<S>& t) { t.zero_grad(); });
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&ok](const char*, const Tensor<S>& t) { ok = ok && t.all_finite(); });
    return ok;
  }

  EmbedderParams clone() const {
    EmbedderParams c;
    c.embed_dim = embed_dim;
    c.conv1_w = conv1_w.clone();
    c.conv1_b = conv1_b.clone();
    c.conv2_w = conv2_w.clone();
    c.conv2_b = conv2_b.clone();
    c.conv3_w = conv3_w.clone();
    c.conv3_b = conv3_b.clone();
    c.fc1_w = fc1_w.clone();
    c.fc1_b = fc1_b.clone();
    c.fc2_w = fc2_w.clone();
    c.fc2_b = fc2_b.clone();
    return c;
  }

  void copy_values_from(const EmbedderParams& o) {
    conv1_w.values() = o.conv1_w.values();
    conv1_b.values() = o.conv1_b.values();
    conv2_w.values() = o.conv2_w.values();
    conv2_b.values() = o.conv2_b.values();
    conv3_w.values() = o.conv3_w.values();
    conv3_b.values() = o.conv3_b.values();
    fc1_w.values() = o.fc1_w.values();
    fc1_b.values() = o.fc1_b.values();
    fc2_w.values() = o.fc2_w.values();
    fc2_b.values() = o.fc2_b.values();
  }
};

inline std::vector<std::pair<std::string, std::vector<int>>> embedder_shapes(int embed_dim) {
  return {
      {"conv1.W", {150, 3, 7, 7}}, {"conv1.b", {150}},
      {"conv2.W", {200, 150, 4, 4}}, {"conv2.b", {200}},
      {"conv3.W", {300, 200, 4, 4}}, {"conv3.b", {300}},
      {"fc1.W", {kFc1Units, kFc1Inputs}}, {"fc1.b", {kFc1Units}},
      {"fc2.W", {embed_dim, kFc1Units}}, {"fc2.b", {embed_dim}},
  };
}

// Fan-in uniform init, weights ~ U(-s, s) with s = sqrt(1/fan_in),
// biases zero. Deterministic in the seed.
template <typename S>
EmbedderParams<S> init_embedder(uint64_t rng_seed, int embed_dim = kDefaultEmbedDim) {
  if (embed_dim < 1) throw std::invalid_argument("init_embedder: embed_dim must be >= 1");
  Rng rng(rng_seed);
  EmbedderParams<S> p;
  p.embed_dim = embed_dim;
  const auto shapes = embedder_shapes(embed_dim);
  std::vector<Tensor<S>*> slots = {&p.conv1_w, &p.conv1_b, &p.conv2_w, &p.conv2_b, &p.conv3_w,
                                   &p.conv3_b, &p.fc1_w,   &p.fc1_b,   &p.fc2_w,   &p.fc2_b};
  for (size_t i = 0; i < slots.size(); ++i) {
    const auto& shape = shapes[i].second;
    Tensor<S> t = Tensor<S>::zeros(shape);
    if (shape.size() > 1) {
      int fan_in = 1;
      for (size_t d = 1; d < shape.size(); ++d) fan_in *= shape[d];
      const double s = std::sqrt(1.0 / fan_in);
      for (int j = 0; j < t.size(); ++j) t.at(j) = static_cast<S>(rng.uniform(-s, s));
    }
    *slots[i] = t;
  }
  return p;
}

template <typename S>
struct EmbedResult {
  Tensor<S> embedding;  // [D]
  Tensor<S> fc1;        // [350], post-activation
};

template <typename S>
EmbedResult<S> embed(const EmbedderParams<S>& p, const Tensor<S>& image,
                     std::vector<std::vector<int>>* shape_trace = nullptr) {
  if (image.rank() != 3 || image.dim(0) != kImageChannels || image.dim(1) != kImageSize ||
      image.dim(2) != kImageSize)
    throw std::invalid_argument("embed: expected [3,48,48] input, got " + shape_str(image.shape()));
  auto note = [shape_trace](const Tensor<S>& t) {
    if (shape_trace) shape_trace->push_back(t.shape());
  };
  note(image);
  Tensor<S> x = relu(conv2d(image, p.conv1_w, p.conv1_b, kConvPad));
  note(x);
  x = lcn(maxpool2(x), 7);
  note(x);
  x = relu(conv2d(x, p.conv2_w, p.conv2_b, kConvPad));
  note(x);
  x = lcn(maxpool2(x), 7);
  note(x);
  x = relu(conv2d(x, p.conv3_w, p.conv3_b, kConvPad));
  note(x);
  x = lcn(maxpool2(x), 6);
  note(x);
  Tensor<S> flat = reshape(x, {kFc1Inputs});
  Tensor<S> h = relu(linear(flat, p.fc1_w, p.fc1_b));
  note(h);
  EmbedResult<S> r;
  r.fc1 = h;
  r.embedding = linear(h, p.fc2_w, p.fc2_b);
  note(r.embedding);
  return r;
}

// ---- SGD with momentum and coupled weight decay ---------------------------

template <typename S>
struct OptimizerState {
  S lr = S(1e-3);
  S momentum = S(0.9);
  S weight_decay = S(1e-4);
  std::vector<ArrayX<S>> velocity;  // mirrors parameter order, zero-initialized

  template <typename Params>
  static OptimizerState for_params(Params& params, S lr = S(1e-3), S momentum = S(0.9),
                                   S weight_decay = S(1e-4)) {
    OptimizerState st;
    st.lr = lr;
    st.momentum = momentum;
    st.weight_decay = weight_decay;
    params.for_each([&st](const char*, Tensor<S>& t) {
      st.velocity.push_back(ArrayX<S>::Zero(t.size()));
    });
    return st;
  }
};

// g' = g + wd * p; v <- momentum * v + g'; p <- p - lr * v.
// Gradients are passed as flat buffers in parameter order.
template <typename S, typename Params>
void sgd_step(Params& params, const std::vector<ArrayX<S>>& grads, OptimizerState<S>& state) {
  size_t i = 0;
  params.for_each([&](const char* name, Tensor<S>& t) {
    if (i >= grads.size() || grads[i].size() != t.values().size())
      throw std::invalid_argument(std::string("sgd_step: gradient shape mismatch for ") + name);
    if (!grads[i].allFinite())
      throw numeric_error(std::string("sgd_step: non-finite gradient for ") + name);
    ArrayX<S>& v = state.velocity[i];
    v = state.momentum * v + (grads[i] + state.weight_decay * t.values());
    t.values() -= state.lr * v;
    if (!t.values().allFinite())
      throw numeric_error(std::string("sgd_step: non-finite parameter ") + name +
                          " after update");
    ++i;
  });
}

// ---- checkpoint serialization --------------------------------------------
//
// Little-endian binary: magic "QNET1", u8 tower count (2), u32 D; then
// per tower, per parameter in declaration order: u8 name length, name
// bytes, u8 rank, u32 dims..., f32 data. Round-trips bit-exact.

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

template <typename S>
void write_tower(std::ostream& os, const EmbedderParams<S>& p) {
  p.for_each([&os](const char* name, const Tensor<S>& t) {
    const uint8_t len = static_cast<uint8_t>(std::strlen(name));
    os.put(static_cast<char>(len));
    os.write(name, len);
    os.put(static_cast<char>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) write_u32(os, static_cast<uint32_t>(t.dim(d)));
    for (int i = 0; i < t.size(); ++i) {
      const float f = static_cast<float>(t[i]);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      write_u32(os, bits);
    }
  });
}

template <typename S>
void read_tower(std::istream& is, EmbedderParams<S>& p, int embed_dim) {
  const auto expected = embedder_shapes(embed_dim);
  std::vector<Tensor<S>*> slots = {&p.conv1_w, &p.conv1_b, &p.conv2_w, &p.conv2_b, &p.conv3_w,
                                   &p.conv3_b, &p.fc1_w,   &p.fc1_b,   &p.fc2_w,   &p.fc2_b};
  p.embed_dim = embed_dim;
  for (size_t i = 0; i < slots.size(); ++i) {
    const int len = is.get();
    if (len < 0) throw std::runtime_error("checkpoint: truncated file");
    std::string name(static_cast<size_t>(len), '\0');
    is.read(name.data(), len);
    if (!is || name != expected[i].first)
      throw std::runtime_error("checkpoint: expected parameter '" + expected[i].first + "', got '" +
                               name + "'");
    const int rank = is.get();
    if (rank != static_cast<int>(expected[i].second.size()))
      throw std::runtime_error("checkpoint: rank mismatch for " + name);
    std::vector<int> shape(static_cast<size_t>(rank));
    for (int d = 0; d < rank; ++d) shape[static_cast<size_t>(d)] = static_cast<int>(read_u32(is));
    if (shape != expected[i].second)
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ", file has " +
                               shape_str(shape) + ", expected " + shape_str(expected[i].second));
    Tensor<S> t = Tensor<S>::zeros(shape);
    for (int j = 0; j < t.size(); ++j) {
      const uint32_t bits = read_u32(is);
      float f;
      std::memcpy(&f, &bits, 4);
      t.at(j) = static_cast<S>(f);
    }
    *slots[i] = t;
  }
}

}  // namespace detail

constexpr char kCheckpointMagic[5] = {'Q', 'N', 'E', 'T', '1'};

template <typename S>
void save_checkpoint(const EmbedderParams<S>& tower_t, const EmbedderParams<S>& tower_r,
                     const std::string& path) {
  if (tower_t.embed_dim != tower_r.embed_dim)
    throw std::invalid_argument("save_checkpoint: towers disagree on embedding dimension");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, 5);
  os.put(2);
  detail::write_u32(os, static_cast<uint32_t>(tower_t.embed_dim));
  detail::write_tower(os, tower_t);
  detail::write_tower(os, tower_r);
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

template <typename S>
struct Checkpoint {
  int embed_dim = 0;
  EmbedderParams<S> tower_t;  // template tower
  EmbedderParams<S> tower_r;  // real tower
};

// expected_dim > 0 asserts the configured embedding dimension against
// the one declared in the file.
template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path, int expected_dim = -1) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kCheckpointMagic, 5) != 0)
    throw std::runtime_error("load_checkpoint: magic mismatch in " + path);
  const int towers = is.get();
  if (towers != 2) throw std::runtime_error("load_checkpoint: unexpected tower count");
  Checkpoint<S> ck;
  ck.embed_dim = static_cast<int>(detail::read_u32(is));
  if (ck.embed_dim < 1 || ck.embed_dim > 1 << 20)
    throw std::runtime_error("load_checkpoint: implausible embedding dimension");
  if (expected_dim > 0 && ck.embed_dim != expected_dim)
    throw std::runtime_error("load_checkpoint: shape mismatch, file has D=" +
                             std::to_string(ck.embed_dim) + " but D=" +
                             std::to_string(expected_dim) + " was requested");
  detail::read_tower(is, ck.tower_t, ck.embed_dim);
  detail::read_tower(is, ck.tower_r, ck.embed_dim);
  return ck;
}

}  // namespace quadnet
