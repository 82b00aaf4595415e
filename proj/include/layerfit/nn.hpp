#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "layerfit/tensor.hpp"

namespace layerfit {

// ---------------------------------------------------------------------------
// 2-D linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    throw InputError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double av = A[i * k + p];
      if (av == 0.0) continue;
      double* orow = out.data() + static_cast<size_t>(i) * n;
      const double* brow = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  Tensor r = detail::alloc_result({m, n}, std::move(out), {a, b});
  if (r.requires_grad()) {
    detail::Node* node = r.node();
    node->backprop = [a, b, m, k, n, node]() {
      const double* G = node->grad.data();
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        double* dA = a.node()->grad.data();
        const double* B = b.node()->value.data();
        // dA = G * B^T
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double s = 0.0;
            const double* grow = G + static_cast<size_t>(i) * n;
            const double* brow = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
            dA[i * k + p] += s;
          }
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        double* dB = b.node()->grad.data();
        const double* A = a.node()->value.data();
        // dB = A^T * G
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double av = A[i * k + p];
            if (av == 0.0) continue;
            const double* grow = G + static_cast<size_t>(i) * n;
            double* drow = dB + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) drow[j] += av * grow[j];
          }
      }
    };
  }
  return r;
}

inline Tensor transpose2d(const Tensor& a) {
  if (a.shape().size() != 2)
    throw UsageError("transpose2d: expected rank-2, got " + shape_str(a.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = a.at(i * n + j);
  Tensor r = detail::alloc_result({n, m}, std::move(out), {a});
  if (r.requires_grad()) {
    detail::Node* node = r.node();
    node->backprop = [a, m, n, node]() {
      a.node()->ensure_grad();
      double* dA = a.node()->grad.data();
      const double* G = node->grad.data();
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i) dA[i * n + j] += G[static_cast<size_t>(j) * m + i];
    };
  }
  return r;
}

// Row-wise softmax of a rank-2 tensor.
inline Tensor softmax_rows(const Tensor& a) {
  if (a.shape().size() != 2)
    throw UsageError("softmax_rows: expected rank-2, got " + shape_str(a.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    const double* row = a.data().data() + static_cast<size_t>(i) * n;
    double* orow = out.data() + static_cast<size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      s += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= s;
  }
  Tensor r = detail::alloc_result({m, n}, std::move(out), {a});
  if (r.requires_grad()) {
    detail::Node* node = r.node();
    node->backprop = [a, m, n, node]() {
      a.node()->ensure_grad();
      double* dA = a.node()->grad.data();
      for (int i = 0; i < m; ++i) {
        const double* y = node->value.data() + static_cast<size_t>(i) * n;
        const double* g = node->grad.data() + static_cast<size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += g[j] * y[j];
        for (int j = 0; j < n; ++j) dA[i * n + j] += y[j] * (g[j] - dot);
      }
    };
  }
  return r;
}

// Affine map of row vectors: y[i] = x[i] * W^T + b, x: [n,in], W: [out,in].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 ||
      x.shape()[1] != w.shape()[1])
    throw ConfigError("linear: incompatible shapes x=" + shape_str(x.shape()) +
                      " w=" + shape_str(w.shape()));
  const int rows = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
  if (b.defined() && b.numel() != out_dim)
    throw ConfigError("linear: bias length " + std::to_string(b.numel()) +
                      " does not match out dim " + std::to_string(out_dim));
  std::vector<double> out(static_cast<size_t>(rows) * out_dim, 0.0);
  const double* X = x.data().data();
  const double* W = w.data().data();
  for (int i = 0; i < rows; ++i)
    for (int o = 0; o < out_dim; ++o) {
      const double* xrow = X + static_cast<size_t>(i) * in;
      const double* wrow = W + static_cast<size_t>(o) * in;
      double s = b.defined() ? b.at(o) : 0.0;
      for (int j = 0; j < in; ++j) s += xrow[j] * wrow[j];
      out[static_cast<size_t>(i) * out_dim + o] = s;
    }
  Tensor r = b.defined()
                 ? detail::alloc_result({rows, out_dim}, std::move(out), {x, w, b})
                 : detail::alloc_result({rows, out_dim}, std::move(out), {x, w});
  if (r.requires_grad()) {
    detail::Node* node = r.node();
    node->backprop = [x, w, b, rows, in, out_dim, node]() {
      const double* G = node->grad.data();
      if (x.requires_grad()) {
        x.node()->ensure_grad();
        double* dX = x.node()->grad.data();
        const double* W = w.node()->value.data();
        for (int i = 0; i < rows; ++i)
          for (int o = 0; o < out_dim; ++o) {
            double gv = G[static_cast<size_t>(i) * out_dim + o];
            if (gv == 0.0) continue;
            const double* wrow = W + static_cast<size_t>(o) * in;
            double* dxrow = dX + static_cast<size_t>(i) * in;
            for (int j = 0; j < in; ++j) dxrow[j] += gv * wrow[j];
          }
      }
      if (w.requires_grad()) {
        w.node()->ensure_grad();
        double* dW = w.node()->grad.data();
        const double* X = x.node()->value.data();
        for (int i = 0; i < rows; ++i)
          for (int o = 0; o < out_dim; ++o) {
            double gv = G[static_cast<size_t>(i) * out_dim + o];
            if (gv == 0.0) continue;
            const double* xrow = X + static_cast<size_t>(i) * in;
            double* dwrow = dW + static_cast<size_t>(o) * in;
            for (int j = 0; j < in; ++j) dwrow[j] += gv * xrow[j];
          }
      }
      if (b.defined() && b.requires_grad()) {
        b.node()->ensure_grad();
        double* dB = b.node()->grad.data();
        for (int i = 0; i < rows; ++i)
          for (int o = 0; o < out_dim; ++o)
            dB[o] += G[static_cast<size_t>(i) * out_dim + o];
      }
    };
  }
  return r;
}

inline Tensor linear(const Tensor& x, const Tensor& w) {
  return linear(x, w, Tensor());
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation), CHW single-sample layout
// ---------------------------------------------------------------------------

namespace detail {

inline void im2col(const double* x, int C, int H, int W, int K, int stride,
                   int pad, int Ho, int Wo, double* col) {
  const int N = Ho * Wo;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < K; ++ki)
      for (int kj = 0; kj < K; ++kj) {
        double* crow = col + (static_cast<size_t>(c) * K * K + ki * K + kj) * N;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride + ki - pad;
          double* dst = crow + static_cast<size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride + kj - pad;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
          }
        }
      }
}

inline void col2im_acc(const double* col, int C, int H, int W, int K, int stride,
                       int pad, int Ho, int Wo, double* dx) {
  const int N = Ho * Wo;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < K; ++ki)
      for (int kj = 0; kj < K; ++kj) {
        const double* crow = col + (static_cast<size_t>(c) * K * K + ki * K + kj) * N;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= H) continue;
          const double* src = crow + static_cast<size_t>(oy) * Wo;
          double* dst = dx + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

// conv2d on a single sample: x [C,H,W], w [O,C,K,K], optional bias [O].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     int stride, int padding) {
  if (x.shape().size() != 3 || w.shape().size() != 4)
    throw ConfigError("conv2d: expected x rank-3 and w rank-4, got x=" +
                      shape_str(x.shape()) + " w=" + shape_str(w.shape()));
  if (x.shape()[0] != w.shape()[1])
    throw ConfigError("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                      " vs weight " + shape_str(w.shape()));
  if (w.shape()[2] != w.shape()[3])
    throw ConfigError("conv2d: non-square kernel " + shape_str(w.shape()));
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int O = w.shape()[0], K = w.shape()[2];
  if (H + 2 * padding < K || W + 2 * padding < K)
    throw ConfigError("conv2d: kernel " + std::to_string(K) +
                      " does not fit padded input " + shape_str(x.shape()) +
                      " with padding " + std::to_string(padding));
  if (bias.defined() && bias.numel() != O)
    throw ConfigError("conv2d: bias length " + std::to_string(bias.numel()) +
                      " does not match out channels " + std::to_string(O));
  const int Ho = (H + 2 * padding - K) / stride + 1;
  const int Wo = (W + 2 * padding - K) / stride + 1;
  const int R = C * K * K;
  const int N = Ho * Wo;

  std::vector<double> col(static_cast<size_t>(R) * N);
  detail::im2col(x.data().data(), C, H, W, K, stride, padding, Ho, Wo, col.data());

  std::vector<double> out(static_cast<size_t>(O) * N, 0.0);
  const double* Wm = w.data().data();
  for (int o = 0; o < O; ++o) {
    double* orow = out.data() + static_cast<size_t>(o) * N;
    if (bias.defined()) std::fill(orow, orow + N, bias.at(o));
    for (int rix = 0; rix < R; ++rix) {
      double wv = Wm[static_cast<size_t>(o) * R + rix];
      if (wv == 0.0) continue;
      const double* crow = col.data() + static_cast<size_t>(rix) * N;
      for (int j = 0; j < N; ++j) orow[j] += wv * crow[j];
    }
  }

  Tensor r = bias.defined()
                 ? detail::alloc_result({O, Ho, Wo}, std::move(out), {x, w, bias})
                 : detail::alloc_result({O, Ho, Wo}, std::move(out), {x, w});
  if (r.requires_grad()) {
    detail::Node* node = r.node();
    auto saved_col = std::make_shared<std::vector<double>>(std::move(col));
    node->backprop = [x, w, bias, stride, padding, C, H, W, O, K, Ho, Wo, R, N,
                      saved_col, node]() {
      const double* G = node->grad.data();
      if (w.requires_grad()) {
        w.node()->ensure_grad();
        double* dW = w.node()->grad.data();
        const double* colp = saved_col->data();
        for (int o = 0; o < O; ++o) {
          const double* grow = G + static_cast<size_t>(o) * N;
          for (int rix = 0; rix < R; ++rix) {
            const double* crow = colp + static_cast<size_t>(rix) * N;
            double s = 0.0;
            for (int j = 0; j < N; ++j) s += grow[j] * crow[j];
            dW[static_cast<size_t>(o) * R + rix] += s;
          }
        }
      }
      if (bias.defined() && bias.requires_grad()) {
        bias.node()->ensure_grad();
        double* dB = bias.node()->grad.data();
        for (int o = 0; o < O; ++o) {
          const double* grow = G + static_cast<size_t>(o) * N;
          double s = 0.0;
          for (int j = 0; j < N; ++j) s += grow[j];
          dB[o] += s;
        }
      }
      if (x.requires_grad()) {
        x.node()->ensure_grad();
        std::vector<double> dcol(static_cast<size_t>(R) * N, 0.0);
        const double* Wm = w.node()->value.data();
        for (int o = 0; o < O; ++o) {
          const double* grow = G + static_cast<size_t>(o) * N;
          for (int rix = 0; rix < R; ++rix) {
            double wv = Wm[static_cast<size_t>(o) * R + rix];
            if (wv == 0.0) continue;
            double* drow = dcol.data() + static_cast<size_t>(rix) * N;
            for (int j = 0; j < N; ++j) drow[j] += wv * grow[j];
          }
        }
        detail::col2im_acc(dcol.data(), C, H, W, K, stride, padding, Ho, Wo,
                           x.node()->grad.data());
      }
    };
  }
  return r;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding) {
  return conv2d(x, w, Tensor(), stride, padding);
}

// ---------------------------------------------------------------------------
// Spatial / channel structure ops
// ---------------------------------------------------------------------------

inline Tensor upsample_nearest2(const Tensor& x) {
  if (x.shape().size() != 3)
    throw UsageError("upsample_nearest2: expected CHW, got " + shape_str(x.shape()));
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  std::vector<double> out(static_cast<size_t>(C) * 4 * H * W);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < 2 * H; ++y) {
      const double* src = x.data().data() + (static_cast<size_t>(c) * H + y / 2) * W;
      double* dst = out.data() + (static_cast<size_t>(c) * 2 * H + y) * 2 * W;
      for (int xw = 0; xw < 2 * W; ++xw) dst[xw] = src[xw / 2];
    }
  Tensor r = detail::alloc_result({C, 2 * H, 2 * W}, std::move(out), {x});
  if (r.requires_grad()) {
    detail::Node* node = r.node();
    node->backprop = [x, C, H, W, node]() {
      x.node()->ensure_grad();
      double* dX = x.node()->grad.data();
      const double* G = node->grad.data();
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y) {
          const double* grow = G + (static_cast<size_t>(c) * 2 * H + y) * 2 * W;
          double* drow = dX + (static_cast<size_t>(c) * H + y / 2) * W;
          for (int xw = 0; xw < 2 * W; ++xw) drow[xw / 2] += grow[xw];
        }
    };
  }
  return r;
}

inline Tensor concat_channel(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_channel: no inputs");
  const int H = parts[0].shape()[1], W = parts[0].shape()[2];
  int Ctot = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != 3 || p.shape()[1] != H || p.shape()[2] != W)
      throw InputError("concat_channel: incompatible part " + shape_str(p.shape()));
    Ctot += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(Ctot) * H * W);
  for (const Tensor& p : parts)
    out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor r = detail::alloc_result({Ctot, H, W}, std::move(out), parts);
  if (r.requires_grad()) {
    detail::Node* node = r.node();
    node->backprop = [parts, node]() {
      size_t off = 0;
      for (const Tensor& p : parts) {
        size_t len = static_cast<size_t>(p.numel());
        if (p.requires_grad()) {
          p.node()->ensure_grad();
          for (size_t i = 0; i < len; ++i) p.node()->grad[i] += node->grad[off + i];
        }
        off += len;
      }
    };
  }
  return r;
}

// Width-wise (spatial) concatenation of CHW tensors.
inline Tensor concat_width(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_width: no inputs");
  const int C = parts[0].shape()[0], H = parts[0].shape()[1];
  int Wtot = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != 3 || p.shape()[0] != C || p.shape()[1] != H)
      throw InputError("concat_width: incompatible part " + shape_str(p.shape()));
    Wtot += p.shape()[2];
  }
  std::vector<double> out(static_cast<size_t>(C) * H * Wtot);
  int woff = 0;
  for (const Tensor& p : parts) {
    const int Wp = p.shape()[2];
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y) {
        const double* src = p.data().data() + (static_cast<size_t>(c) * H + y) * Wp;
        double* dst = out.data() + (static_cast<size_t>(c) * H + y) * Wtot + woff;
        std::copy(src, src + Wp, dst);
      }
    woff += Wp;
  }
  Tensor r = detail::alloc_result({C, H, Wtot}, std::move(out), parts);
  if (r.requires_grad()) {
    detail::Node* node = r.node();
    node->backprop = [parts, C, H, Wtot, node]() {
      int woff = 0;
      for (const Tensor& p : parts) {
        const int Wp = p.shape()[2];
        if (p.requires_grad()) {
          p.node()->ensure_grad();
          for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y) {
              const double* grow =
                  node->grad.data() + (static_cast<size_t>(c) * H + y) * Wtot + woff;
              double* drow =
                  p.node()->grad.data() + (static_cast<size_t>(c) * H + y) * Wp;
              for (int xw = 0; xw < Wp; ++xw) drow[xw] += grow[xw];
            }
        }
        woff += Wp;
      }
    };
  }
  return r;
}

// Extracts columns [start, start+len) of a CHW tensor.
inline Tensor slice_width(const Tensor& x, int start, int len) {
  if (x.shape().size() != 3)
    throw UsageError("slice_width: expected CHW, got " + shape_str(x.shape()));
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (start < 0 || len < 1 || start + len > W)
    throw UsageError("slice_width: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of width " +
                     std::to_string(W));
  std::vector<double> out(static_cast<size_t>(C) * H * len);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y) {
      const double* src = x.data().data() + (static_cast<size_t>(c) * H + y) * W + start;
      double* dst = out.data() + (static_cast<size_t>(c) * H + y) * len;
      std::copy(src, src + len, dst);
    }
  Tensor r = detail::alloc_result({C, H, len}, std::move(out), {x});
  if (r.requires_grad()) {
    detail::Node* node = r.node();
    node->backprop = [x, start, len, C, H, W, node]() {
      x.node()->ensure_grad();
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y) {
          const double* grow = node->grad.data() + (static_cast<size_t>(c) * H + y) * len;
          double* drow =
              x.node()->grad.data() + (static_cast<size_t>(c) * H + y) * W + start;
          for (int xw = 0; xw < len; ++xw) drow[xw] += grow[xw];
        }
    };
  }
  return r;
}

// Multiplies every channel of x [C,H,W] by a single-channel map [1,H,W].
inline Tensor broadcast_mul(const Tensor& map, const Tensor& x) {
  if (map.shape().size() != 3 || map.shape()[0] != 1)
    throw InputError("broadcast_mul: map must be 1xHxW, got " + shape_str(map.shape()));
  if (x.shape().size() != 3 || x.shape()[1] != map.shape()[1] ||
      x.shape()[2] != map.shape()[2])
    throw InputError("broadcast_mul: spatial mismatch map=" + shape_str(map.shape()) +
                     " x=" + shape_str(x.shape()));
  const int C = x.shape()[0];
  const int P = x.shape()[1] * x.shape()[2];
  std::vector<double> out(static_cast<size_t>(C) * P);
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < P; ++p)
      out[static_cast<size_t>(c) * P + p] = map.at(p) * x.at(static_cast<int64_t>(c) * P + p);
  Tensor r = detail::alloc_result(x.shape(), std::move(out), {map, x});
  if (r.requires_grad()) {
    detail::Node* node = r.node();
    node->backprop = [map, x, C, P, node]() {
      const double* G = node->grad.data();
      if (map.requires_grad()) {
        map.node()->ensure_grad();
        double* dM = map.node()->grad.data();
        for (int c = 0; c < C; ++c)
          for (int p = 0; p < P; ++p)
            dM[p] += G[static_cast<size_t>(c) * P + p] *
                     x.node()->value[static_cast<size_t>(c) * P + p];
      }
      if (x.requires_grad()) {
        x.node()->ensure_grad();
        double* dX = x.node()->grad.data();
        for (int c = 0; c < C; ++c)
          for (int p = 0; p < P; ++p)
            dX[static_cast<size_t>(c) * P + p] +=
                G[static_cast<size_t>(c) * P + p] * map.node()->value[p];
      }
    };
  }
  return r;
}

// RMS normalization across channels at each spatial position, with a learned
// per-channel gain: y[c,p] = gain[c] * x[c,p] / sqrt(mean_c x[.,p]^2 + eps).
// Pins feature scale at stage boundaries of deep stacks.
inline Tensor rms_norm_channels(const Tensor& x, const Tensor& gain,
                                double eps = 1e-6) {
  if (x.shape().size() != 3 || gain.numel() != x.shape()[0])
    throw InputError("rms_norm_channels: x=" + shape_str(x.shape()) +
                     " gain=" + shape_str(gain.shape()));
  const int C = x.shape()[0];
  const int P = x.shape()[1] * x.shape()[2];
  std::vector<double> out(static_cast<size_t>(C) * P);
  std::vector<double> inv_rms(static_cast<size_t>(P));
  for (int p = 0; p < P; ++p) {
    double m = 0.0;
    for (int c = 0; c < C; ++c) {
      double v = x.at(static_cast<int64_t>(c) * P + p);
      m += v * v;
    }
    inv_rms[p] = 1.0 / std::sqrt(m / C + eps);
  }
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < P; ++p)
      out[static_cast<size_t>(c) * P + p] =
          gain.at(c) * x.at(static_cast<int64_t>(c) * P + p) * inv_rms[p];
  Tensor r = detail::alloc_result(x.shape(), std::move(out), {x, gain});
  if (r.requires_grad()) {
    detail::Node* node = r.node();
    auto saved = std::make_shared<std::vector<double>>(std::move(inv_rms));
    node->backprop = [x, gain, C, P, saved, node]() {
      const double* G = node->grad.data();
      const double* X = x.node()->value.data();
      const double* g = gain.node()->value.data();
      if (x.requires_grad()) {
        x.node()->ensure_grad();
        double* dX = x.node()->grad.data();
        for (int p = 0; p < P; ++p) {
          double r_p = (*saved)[p];
          double dot = 0.0;
          for (int c = 0; c < C; ++c)
            dot += G[static_cast<size_t>(c) * P + p] * g[c] *
                   X[static_cast<size_t>(c) * P + p];
          double k = r_p * r_p * r_p * dot / C;
          for (int c = 0; c < C; ++c)
            dX[static_cast<size_t>(c) * P + p] +=
                r_p * g[c] * G[static_cast<size_t>(c) * P + p] -
                k * X[static_cast<size_t>(c) * P + p];
        }
      }
      if (gain.requires_grad()) {
        gain.node()->ensure_grad();
        double* dG = gain.node()->grad.data();
        for (int c = 0; c < C; ++c) {
          double s = 0.0;
          for (int p = 0; p < P; ++p)
            s += G[static_cast<size_t>(c) * P + p] *
                 X[static_cast<size_t>(c) * P + p] * (*saved)[p];
          dG[c] += s;
        }
      }
    };
  }
  return r;
}

// Adds a per-channel bias b [C] to x [C,H,W].
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.shape().size() != 3 || b.numel() != x.shape()[0])
    throw InputError("add_channel_bias: x=" + shape_str(x.shape()) +
                     " bias=" + shape_str(b.shape()));
  const int C = x.shape()[0];
  const int P = x.shape()[1] * x.shape()[2];
  std::vector<double> out(x.data().begin(), x.data().end());
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < P; ++p) out[static_cast<size_t>(c) * P + p] += b.at(c);
  Tensor r = detail::alloc_result(x.shape(), std::move(out), {x, b});
  if (r.requires_grad()) {
    detail::Node* node = r.node();
    node->backprop = [x, b, C, P, node]() {
      const double* G = node->grad.data();
      if (x.requires_grad()) {
        x.node()->ensure_grad();
        for (size_t i = 0; i < node->grad.size(); ++i) x.node()->grad[i] += G[i];
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        for (int c = 0; c < C; ++c) {
          double s = 0.0;
          for (int p = 0; p < P; ++p) s += G[static_cast<size_t>(c) * P + p];
          b.node()->grad[c] += s;
        }
      }
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

// Named learnable tensors with deterministic (sorted-by-id) iteration.
class ParamStore {
 public:
  Tensor create(const std::string& id, Tensor init) {
    if (params_.count(id)) throw UsageError("duplicate parameter id: " + id);
    Tensor p = init.clone_as_leaf(true);
    params_.emplace(id, p);
    return p;
  }

  bool has(const std::string& id) const { return params_.count(id) > 0; }

  Tensor get(const std::string& id) const {
    auto it = params_.find(id);
    if (it == params_.end()) throw UsageError("unknown parameter id: " + id);
    return it->second;
  }

  const std::map<std::string, Tensor>& entries() const { return params_; }

  void zero_grads() {
    for (auto& [id, p] : params_) p.zero_grad();
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& [id, p] : params_) n += p.numel();
    return n;
  }

  size_t count() const { return params_.size(); }

 private:
  std::map<std::string, Tensor> params_;
};

// Fan-in scaled uniform init, U(-sqrt(3/fan_in), sqrt(3/fan_in)).
inline Tensor init_conv_weight(Shape shape, Rng& rng) {
  int fan_in = shape[1] * shape[2] * shape[3];
  double bound = std::sqrt(3.0 / fan_in);
  return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

inline Tensor init_linear_weight(Shape shape, Rng& rng) {
  int fan_in = shape[1];
  double bound = std::sqrt(3.0 / fan_in);
  return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

// ---------------------------------------------------------------------------
// Residual block: x + conv(act(conv(x))), shape preserving. The closing conv
// is zero-initialized so a fresh block is the identity map.
// ---------------------------------------------------------------------------

struct ResidualBlock {
  Tensor w1, b1, w2, b2;

  static ResidualBlock create(ParamStore& store, const std::string& prefix,
                              int channels, Rng& rng) {
    ResidualBlock blk;
    blk.w1 = store.create(prefix + ".conv1.w",
                          init_conv_weight({channels, channels, 3, 3}, rng));
    blk.b1 = store.create(prefix + ".conv1.b", Tensor::zeros({channels}));
    blk.w2 = store.create(prefix + ".conv2.w",
                          Tensor::zeros({channels, channels, 3, 3}));
    blk.b2 = store.create(prefix + ".conv2.b", Tensor::zeros({channels}));
    return blk;
  }

  static ResidualBlock load(const ParamStore& store, const std::string& prefix) {
    return {store.get(prefix + ".conv1.w"), store.get(prefix + ".conv1.b"),
            store.get(prefix + ".conv2.w"), store.get(prefix + ".conv2.b")};
  }

  Tensor forward(const Tensor& x) const {
    if (x.shape()[0] != w1.shape()[1])
      throw ConfigError("residual_block: channel mismatch, input " +
                        shape_str(x.shape()) + " vs params " + shape_str(w1.shape()));
    Tensor h = silu(conv2d(x, w1, b1, 1, 1));
    return add(x, conv2d(h, w2, b2, 1, 1));
  }
};

}  // namespace layerfit
