#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "dynstg/tensor.hpp"

// The closed primitive operation set. Every model layer in this library is a
// composition of these primitives plus the two structured graph/scan
// operations defined in graph.hpp and ssm.hpp. Elementwise binaries follow
// numpy broadcasting; gradients of broadcast operands are reduced back to the
// operand shape.

namespace dynstg {

namespace detail {

inline Shape bcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                       shape_str(b) + " are not broadcast-compatible");
    out[i] = std::max(da, db);
  }
  return out;
}

// Element strides of `s` aligned to broadcast result `out` (0 on broadcast dims).
inline std::vector<std::size_t> bcast_strides(const Shape& s, const Shape& out) {
  const auto st = row_strides(s);
  std::vector<std::size_t> r(out.size(), 0);
  const std::size_t pad = out.size() - s.size();
  for (std::size_t i = 0; i < s.size(); ++i)
    r[pad + i] = (s[i] == 1 && out[pad + i] != 1) ? 0 : st[i];
  return r;
}

// Iterates the broadcast result in row-major order, tracking aligned offsets
// into two operands.
template <class F>
void for_each_bcast2(const Shape& out, const std::vector<std::size_t>& sa,
                     const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t n = shape_numel(out);
  if (r == 0) {
    if (n) f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t lin = 0; lin < n; ++lin) {
    f(lin, oa, ob);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

inline bool wants_grad(std::initializer_list<const Tensor*> ins) {
  if (!Tape::current()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

inline void mark_recorded(Tensor& y) {
  y.impl()->requires_grad = true;
  y.impl()->ensure_grad();
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, Fwd&& fwd, Bwd&& dydx) {
  std::vector<double> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
  Tensor y(x.shape(), std::move(out));
  if (wants_grad({&x})) {
    mark_recorded(y);
    auto xi = x.impl();
    auto yi = y.impl();
    Tape::current()->record(yi, [xi, yi, dydx]() {
      if (!xi->requires_grad) return;
      for (std::size_t i = 0; i < xi->data.size(); ++i)
        xi->grad[i] += yi->grad[i] * dydx(xi->data[i], yi->data[i]);
    });
  }
  return y;
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binaries

inline Tensor add(const Tensor& a, const Tensor& b) {
  const Shape out = detail::bcast_shape(a.shape(), b.shape(), "add");
  const auto sa = detail::bcast_strides(a.shape(), out);
  const auto sb = detail::bcast_strides(b.shape(), out);
  std::vector<double> yd(shape_numel(out));
  const auto &ad = a.data(), &bd = b.data();
  detail::for_each_bcast2(out, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    yd[i] = ad[ia] + bd[ib];
  });
  Tensor y(out, std::move(yd));
  if (detail::wants_grad({&a, &b})) {
    detail::mark_recorded(y);
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    Tape::current()->record(yi, [ai, bi, yi, out, sa, sb]() {
      detail::for_each_bcast2(out, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        const double g = yi->grad[i];
        if (ai->requires_grad) ai->grad[ia] += g;
        if (bi->requires_grad) bi->grad[ib] += g;
      });
    });
  }
  return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  const Shape out = detail::bcast_shape(a.shape(), b.shape(), "mul");
  const auto sa = detail::bcast_strides(a.shape(), out);
  const auto sb = detail::bcast_strides(b.shape(), out);
  std::vector<double> yd(shape_numel(out));
  const auto &ad = a.data(), &bd = b.data();
  detail::for_each_bcast2(out, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    yd[i] = ad[ia] * bd[ib];
  });
  Tensor y(out, std::move(yd));
  if (detail::wants_grad({&a, &b})) {
    detail::mark_recorded(y);
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    Tape::current()->record(yi, [ai, bi, yi, out, sa, sb]() {
      detail::for_each_bcast2(out, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        const double g = yi->grad[i];
        if (ai->requires_grad) ai->grad[ia] += g * bi->data[ib];
        if (bi->requires_grad) bi->grad[ib] += g * ai->data[ia];
      });
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Matrix product over the trailing two axes, leading axes broadcast.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul: operands must have rank >= 2, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree for shapes " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  const Shape obatch = detail::bcast_shape(abatch, bbatch, "matmul");
  auto sa = detail::bcast_strides(abatch, obatch);
  auto sb = detail::bcast_strides(bbatch, obatch);
  for (auto& v : sa) v *= m * k;
  for (auto& v : sb) v *= k * n;

  Shape oshape = obatch;
  oshape.push_back(m);
  oshape.push_back(n);
  std::vector<double> yd(shape_numel(oshape), 0.0);
  const auto &ad = a.data(), &bd = b.data();
  detail::for_each_bcast2(obatch, sa, sb, [&](std::size_t bi_, std::size_t oa, std::size_t ob) {
    double* yp = yd.data() + bi_ * m * n;
    const double* ap = ad.data() + oa;
    const double* bp = bd.data() + ob;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = ap[i * k + kk];
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) yp[i * n + j] += av * bp[kk * n + j];
      }
  });
  Tensor y(oshape, std::move(yd));
  if (detail::wants_grad({&a, &b})) {
    detail::mark_recorded(y);
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    Tape::current()->record(yi, [ai, bi, yi, obatch, sa, sb, m, k, n]() {
      detail::for_each_bcast2(obatch, sa, sb, [&](std::size_t bt, std::size_t oa, std::size_t ob) {
        const double* gp = yi->grad.data() + bt * m * n;
        const double* ap = ai->data.data() + oa;
        const double* bp = bi->data.data() + ob;
        if (ai->requires_grad) {
          double* gal = ai->grad.data() + oa;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double g = gp[i * n + j];
              if (g == 0.0) continue;
              for (std::size_t kk = 0; kk < k; ++kk) gal[i * k + kk] += g * bp[kk * n + j];
            }
        }
        if (bi->requires_grad) {
          double* gbl = bi->grad.data() + ob;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double av = ap[i * k + kk];
              if (av == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gbl[kk * n + j] += av * gp[i * n + j];
            }
        }
      });
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// 1-D convolution along the time axis (axis 1), channels on the last axis.
// Cross-correlation convention, zero padding, stride 1. Axes between time and
// channels (e.g. a joint axis) act as independent batch dimensions. `groups`
// partitions channels; groups == channels gives a depth-wise convolution.

inline Tensor conv1d(const Tensor& x, const Tensor& w,
                     const std::optional<Tensor>& bias, std::size_t pad_left,
                     std::size_t pad_right, std::size_t groups = 1) {
  if (x.rank() < 3)
    throw ShapeError("conv1d: input must be [batch, time, ..., channels], got " +
                     shape_str(x.shape()));
  if (w.rank() != 3)
    throw ShapeError("conv1d: weight must be [out_ch, in_ch/groups, kernel], got " +
                     shape_str(w.shape()));
  const std::size_t B = x.dim(0), T = x.dim(1), Cin = x.dim(x.rank() - 1);
  std::size_t M = 1;
  for (std::size_t i = 2; i + 1 < x.rank(); ++i) M *= x.dim(i);
  const std::size_t Cout = w.dim(0), Cin_g = w.dim(1), K = w.dim(2);
  if (groups == 0 || Cin % groups != 0 || Cout % groups != 0 || Cin / groups != Cin_g)
    throw ShapeError("conv1d: channel/group mismatch for input " + shape_str(x.shape()) +
                     " weight " + shape_str(w.shape()) + " groups " + std::to_string(groups));
  if (bias && bias->shape() != Shape{Cout})
    throw ShapeError("conv1d: bias shape " + shape_str(bias->shape()) +
                     " does not match out channels " + std::to_string(Cout));
  if (T + pad_left + pad_right < K)
    throw ShapeError("conv1d: kernel longer than padded input");
  const std::size_t Tout = T + pad_left + pad_right - K + 1;
  const std::size_t Cout_g = Cout / groups;

  Shape oshape = x.shape();
  oshape[1] = Tout;
  oshape.back() = Cout;
  std::vector<double> yd(shape_numel(oshape), 0.0);
  const auto& xd = x.data();
  const auto& wd = w.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < Tout; ++t)
      for (std::size_t mm = 0; mm < M; ++mm)
        for (std::size_t co = 0; co < Cout; ++co) {
          const std::size_t g = co / Cout_g;
          double acc = bias ? bias->data()[co] : 0.0;
          for (std::size_t kk = 0; kk < K; ++kk) {
            const std::ptrdiff_t tin =
                static_cast<std::ptrdiff_t>(t + kk) - static_cast<std::ptrdiff_t>(pad_left);
            if (tin < 0 || tin >= static_cast<std::ptrdiff_t>(T)) continue;
            const double* xp = xd.data() + ((b * T + tin) * M + mm) * Cin + g * Cin_g;
            const double* wp = wd.data() + (co * Cin_g) * K + kk;
            for (std::size_t ci = 0; ci < Cin_g; ++ci) acc += xp[ci] * wp[ci * K];
          }
          yd[((b * Tout + t) * M + mm) * Cout + co] = acc;
        }
  Tensor y(oshape, std::move(yd));

  const Tensor* bptr = bias ? &*bias : nullptr;
  const bool want = bptr ? detail::wants_grad({&x, &w, bptr}) : detail::wants_grad({&x, &w});
  if (want) {
    detail::mark_recorded(y);
    auto xi = x.impl(), wi = w.impl(), yi = y.impl();
    auto bimpl = bias ? bias->impl() : nullptr;
    Tape::current()->record(yi, [xi, wi, bimpl, yi, B, T, M, Cin, Cout, Cin_g, Cout_g, K,
                                 pad_left, Tout]() {
      const auto& gd = yi->grad;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Tout; ++t)
          for (std::size_t mm = 0; mm < M; ++mm)
            for (std::size_t co = 0; co < Cout; ++co) {
              const double g = gd[((b * Tout + t) * M + mm) * Cout + co];
              if (g == 0.0) continue;
              const std::size_t grp = co / Cout_g;
              if (bimpl && bimpl->requires_grad) bimpl->grad[co] += g;
              for (std::size_t kk = 0; kk < K; ++kk) {
                const std::ptrdiff_t tin =
                    static_cast<std::ptrdiff_t>(t + kk) - static_cast<std::ptrdiff_t>(pad_left);
                if (tin < 0 || tin >= static_cast<std::ptrdiff_t>(T)) continue;
                const std::size_t xbase = ((b * T + tin) * M + mm) * Cin + grp * Cin_g;
                for (std::size_t ci = 0; ci < Cin_g; ++ci) {
                  if (xi->requires_grad)
                    xi->grad[xbase + ci] += g * wi->data[(co * Cin_g + ci) * K + kk];
                  if (wi->requires_grad)
                    wi->grad[(co * Cin_g + ci) * K + kk] += g * xi->data[xbase + ci];
                }
              }
            }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Softmax along one axis.

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(x.shape()));
  const std::size_t len = x.dim(axis);
  if (len == 0) throw DomainError("softmax over an empty axis");
  const auto st = row_strides(x.shape());
  const std::size_t inner = st[axis];
  const std::size_t outer = x.numel() / (len * inner);
  std::vector<double> yd(x.numel());
  const auto& xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xd[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      double sum = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xd[base + j * inner] - mx);
        yd[base + j * inner] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < len; ++j) yd[base + j * inner] /= sum;
    }
  Tensor y(x.shape(), std::move(yd));
  if (detail::wants_grad({&x})) {
    detail::mark_recorded(y);
    auto xi = x.impl(), yi = y.impl();
    Tape::current()->record(yi, [xi, yi, len, inner, outer]() {
      if (!xi->requires_grad) return;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j)
            dot += yi->grad[base + j * inner] * yi->data[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t p = base + j * inner;
            xi->grad[p] += yi->data[p] * (yi->grad[p] - dot);
          }
        }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise unaries

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return detail::stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor silu(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return v * detail::stable_sigmoid(v); },
      [](double v, double) {
        const double s = detail::stable_sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

inline Tensor softplus(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return detail::stable_sigmoid(v); });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0.0)) throw DomainError("log: input must be strictly positive");
  return detail::unary_op(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// ---------------------------------------------------------------------------
// Reductions. Axes are removed unless keepdims; no axes means reduce all.

namespace detail {

inline Tensor reduce(const Tensor& x, std::vector<std::size_t> axes, bool keepdims,
                     bool take_mean) {
  if (axes.empty()) {
    axes.resize(x.rank());
    for (std::size_t i = 0; i < x.rank(); ++i) axes[i] = i;
  }
  std::sort(axes.begin(), axes.end());
  std::vector<bool> reduced(x.rank(), false);
  for (std::size_t a : axes) {
    if (a >= x.rank())
      throw ShapeError("reduce: axis " + std::to_string(a) + " out of range for shape " +
                       shape_str(x.shape()));
    if (reduced[a]) throw ShapeError("reduce: duplicate axis " + std::to_string(a));
    reduced[a] = true;
  }
  Shape kshape = x.shape();
  std::size_t count = 1;
  for (std::size_t a : axes) {
    count *= kshape[a];
    kshape[a] = 1;
  }
  const double scale = take_mean ? 1.0 / static_cast<double>(count) : 1.0;
  // Output offset for each input element: strides of the kept shape with 0 on
  // reduced axes.
  auto ost = row_strides(kshape);
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (reduced[i]) ost[i] = 0;
  std::vector<double> yd(shape_numel(kshape), 0.0);
  const auto& xd = x.data();
  const auto xs = row_strides(x.shape());
  {
    std::vector<std::size_t> idx(x.rank(), 0);
    std::size_t oo = 0;
    for (std::size_t lin = 0; lin < x.numel(); ++lin) {
      yd[oo] += xd[lin];
      for (std::size_t d = x.rank(); d-- > 0;) {
        ++idx[d];
        oo += ost[d];
        if (idx[d] < x.dim(d)) break;
        oo -= ost[d] * x.dim(d);
        idx[d] = 0;
      }
    }
  }
  if (take_mean)
    for (double& v : yd) v *= scale;
  Shape fshape;
  if (keepdims) {
    fshape = kshape;
  } else {
    for (std::size_t i = 0; i < x.rank(); ++i)
      if (!reduced[i]) fshape.push_back(x.dim(i));
  }
  Tensor y(fshape, std::move(yd));
  if (wants_grad({&x})) {
    mark_recorded(y);
    auto xi = x.impl(), yi = y.impl();
    const Shape xshape = x.shape();
    Tape::current()->record(yi, [xi, yi, ost, xshape, scale]() {
      if (!xi->requires_grad) return;
      std::vector<std::size_t> idx(xshape.size(), 0);
      std::size_t oo = 0;
      for (std::size_t lin = 0; lin < xi->data.size(); ++lin) {
        xi->grad[lin] += yi->grad[oo] * scale;
        for (std::size_t d = xshape.size(); d-- > 0;) {
          ++idx[d];
          oo += ost[d];
          if (idx[d] < xshape[d]) break;
          oo -= ost[d] * xshape[d];
          idx[d] = 0;
        }
      }
    });
  }
  return y;
}

}  // namespace detail

inline Tensor sum(const Tensor& x, std::vector<std::size_t> axes = {}, bool keepdims = false) {
  return detail::reduce(x, std::move(axes), keepdims, false);
}

inline Tensor mean(const Tensor& x, std::vector<std::size_t> axes = {}, bool keepdims = false) {
  return detail::reduce(x, std::move(axes), keepdims, true);
}

// ---------------------------------------------------------------------------
// Reshape (row-major relayout; element count preserved).

inline Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  Tensor y(shape, x.data());
  if (detail::wants_grad({&x})) {
    detail::mark_recorded(y);
    auto xi = x.impl(), yi = y.impl();
    Tape::current()->record(yi, [xi, yi]() {
      if (!xi->requires_grad) return;
      for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += yi->grad[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// L2 normalization along the last axis: y = x / max(||x||_2, eps).
// Zero (and sub-eps) inputs map to (near-)zero outputs instead of NaN.

inline Tensor l2_normalize(const Tensor& x, double eps = 1e-12) {
  if (!(eps > 0.0)) throw ContractError("l2_normalize: eps must be positive");
  if (x.rank() == 0) throw ShapeError("l2_normalize: rank-0 input");
  const std::size_t len = x.dim(x.rank() - 1);
  const std::size_t outer = x.numel() / std::max<std::size_t>(len, 1);
  std::vector<double> yd(x.numel());
  std::vector<double> norms(outer);
  const auto& xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    double ss = 0.0;
    for (std::size_t j = 0; j < len; ++j) ss += xd[o * len + j] * xd[o * len + j];
    const double nrm = std::sqrt(ss);
    norms[o] = nrm;
    const double s = 1.0 / std::max(nrm, eps);
    for (std::size_t j = 0; j < len; ++j) yd[o * len + j] = xd[o * len + j] * s;
  }
  Tensor y(x.shape(), std::move(yd));
  if (detail::wants_grad({&x})) {
    detail::mark_recorded(y);
    auto xi = x.impl(), yi = y.impl();
    Tape::current()->record(yi, [xi, yi, norms, len, outer, eps]() {
      if (!xi->requires_grad) return;
      for (std::size_t o = 0; o < outer; ++o) {
        const double nrm = norms[o];
        if (nrm > eps) {
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j)
            dot += yi->grad[o * len + j] * yi->data[o * len + j];
          for (std::size_t j = 0; j < len; ++j)
            xi->grad[o * len + j] += (yi->grad[o * len + j] - yi->data[o * len + j] * dot) / nrm;
        } else {
          for (std::size_t j = 0; j < len; ++j) xi->grad[o * len + j] += yi->grad[o * len + j] / eps;
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Compositions of the primitives above (no new tape node kinds).

inline Tensor neg(const Tensor& x) { return mul(x, Tensor::scalar(-1.0)); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }
inline Tensor scale(const Tensor& x, double c) { return mul(x, Tensor::scalar(c)); }
inline Tensor add_scalar(const Tensor& x, double c) { return add(x, Tensor::scalar(c)); }

// Batched contraction over named axes: sum over `axes` of the broadcast product.
inline Tensor contract(const Tensor& a, const Tensor& b, std::vector<std::size_t> axes) {
  return sum(mul(a, b), std::move(axes));
}

// Slice of the last axis, expressed as a product with a constant selector so
// it stays inside the primitive set.
inline Tensor slice_last(const Tensor& x, std::size_t offset, std::size_t width) {
  const std::size_t L = x.dim(x.rank() - 1);
  if (offset + width > L)
    throw ShapeError("slice_last: [" + std::to_string(offset) + ", " +
                     std::to_string(offset + width) + ") exceeds axis of length " +
                     std::to_string(L));
  Tensor sel = Tensor::zeros({L, width});
  for (std::size_t j = 0; j < width; ++j) sel.mutable_data()[(offset + j) * width + j] = 1.0;
  return matmul(x, sel);
}

// Max over one axis as a detached constant (used only to shift exponents).
inline Tensor max_const(const Tensor& x, std::size_t axis) {
  const std::size_t len = x.dim(axis);
  const auto st = row_strides(x.shape());
  const std::size_t inner = st[axis];
  const std::size_t outer = x.numel() / (len * inner);
  Shape kshape = x.shape();
  kshape[axis] = 1;
  std::vector<double> md(shape_numel(kshape));
  const auto& xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xd[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      md[o * inner + in] = mx;
    }
  return Tensor(kshape, std::move(md));
}

// log(softmax(x)) computed through a detached max shift; exact for value and
// gradient since the shift is a constant.
inline Tensor log_softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw ShapeError("log_softmax: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(x.shape()));
  if (x.dim(axis) == 0) throw DomainError("log_softmax over an empty axis");
  const Tensor c = max_const(x, axis);
  const Tensor z = sub(x, c);
  const Tensor lse = log(sum(exp(z), {axis}, true));
  return sub(z, lse);
}

}  // namespace dynstg
