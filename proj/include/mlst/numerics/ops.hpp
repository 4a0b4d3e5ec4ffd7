#pragma once

// Route every product through the packed GEMM/GEMV kernels: the coefficient-based
// path for tiny operands uses vectorised reductions whose rounding depends on
// operand alignment, which would make results vary with heap layout.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 1
#endif
#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <span>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mlst/numerics/tensor.hpp"

namespace mlst {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

/// dst (+)= l · r. A 1×1 result is summed in order, independent of alignment.
template <class Dst, class L, class R>
void product_into(Dst&& dst, const L& l, const R& r, bool accumulate) {
  if (dst.rows() == 1 && dst.cols() == 1) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < l.cols(); ++i) s += l(0, i) * r(i, 0);
    dst(0, 0) = accumulate ? dst(0, 0) + s : s;
  } else if (accumulate) {
    dst.noalias() += l * r;
  } else {
    dst.noalias() = l * r;
  }
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

inline std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.assign(r, 1);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t oa = r - a.size(), ob = r - b.size();
    const std::size_t da = i >= oa ? a[i - oa] : 1;
    const std::size_t db = i >= ob ? b[i - ob] : 1;
    if (da != db && da != 1 && db != 1)
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    p.out[i] = std::max(da, db);
    if (i >= oa && da != 1) p.stride_a[i] = sa[i - oa];
    if (i >= ob && db != 1) p.stride_b[i] = sb[i - ob];
  }
  return p;
}

/// Visits every output cell with the matching flat offsets into both inputs.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t r = p.out.size();
  const std::size_t total = shape_numel(p.out);
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = p.out[r - 1];
  const std::size_t ia_step = p.stride_a[r - 1], ib_step = p.stride_b[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    std::size_t a = ia, b = ib;
    for (std::size_t j = 0; j < inner; ++j, a += ia_step, b += ib_step) f(o + j, a, b);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * idx[d];
      ib -= p.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

inline Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  std::vector<double> out;
  Shape out_shape;
  const bool same = a.shape() == b.shape();
  BroadcastPlan plan;
  const double* av = a.data();
  const double* bv = b.data();
  if (same) {
    out_shape = a.shape();
    out.resize(a.numel());
    const std::size_t n = out.size();
    switch (kind) {
      case BinaryKind::kAdd: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i]; break;
      case BinaryKind::kSub: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - bv[i]; break;
      case BinaryKind::kMul: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i]; break;
    }
  } else {
    plan = broadcast_plan(a.shape(), b.shape(), name);
    out_shape = plan.out;
    out.resize(shape_numel(plan.out));
    switch (kind) {
      case BinaryKind::kAdd:
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] + bv[j]; });
        break;
      case BinaryKind::kSub:
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] - bv[j]; });
        break;
      case BinaryKind::kMul:
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] * bv[j]; });
        break;
    }
  }
  return make_result(std::move(out_shape), std::move(out), {&a, &b},
                     [kind, same, plan](Node& self) {
                       const double* g = self.grad.data();
                       const double* av = self.parents[0]->value.data();
                       const double* bv = self.parents[1]->value.data();
                       double* ga = parent_grad(self, 0);
                       double* gb = parent_grad(self, 1);
                       const double sb = kind == BinaryKind::kSub ? -1.0 : 1.0;
                       if (same) {
                         const std::size_t n = self.value.size();
                         if (kind == BinaryKind::kMul) {
                           if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
                           if (gb) for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
                         } else {
                           if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                           if (gb) for (std::size_t i = 0; i < n; ++i) gb[i] += sb * g[i];
                         }
                         return;
                       }
                       for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
                         if (kind == BinaryKind::kMul) {
                           if (ga) ga[i] += g[o] * bv[j];
                           if (gb) gb[j] += g[o] * av[i];
                         } else {
                           if (ga) ga[i] += g[o];
                           if (gb) gb[j] += sb * g[o];
                         }
                       });
                     });
}

}  // namespace detail

/// Elementwise arithmetic with numpy-style broadcasting.
inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::kAdd, "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::kSub, "sub"); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::kMul, "mul"); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= s;
  return detail::make_result(x.shape(), std::move(out), {&x}, [s](Node& self) {
    double* gx = detail::parent_grad(self, 0);
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < self.value.size(); ++i) gx[i] += s * g[i];
  });
}

/// Batched matrix product over the last two axes. Leading (batch) axes
/// broadcast; `transpose_b` multiplies by the transpose of b's last two axes.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul: operands need rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(-2), k = a.dim(-1);
  const std::size_t bk = transpose_b ? b.dim(-1) : b.dim(-2);
  const std::size_t n = transpose_b ? b.dim(-2) : b.dim(-1);
  if (k != bk)
    throw DimensionError("matmul: inner extents differ for shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + (transpose_b ? " (b transposed)" : ""));
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  detail::BroadcastPlan plan;
  try {
    plan = detail::broadcast_plan(batch_a, batch_b, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch extents of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are not broadcastable");
  }
  std::vector<std::size_t> ia_list, ib_list;
  detail::for_each_broadcast(plan, [&](std::size_t, std::size_t i, std::size_t j) {
    ia_list.push_back(i);
    ib_list.push_back(j);
  });
  Shape out_shape = plan.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(shape_numel(out_shape));
  const std::size_t bsz = ia_list.size();
  for (std::size_t t = 0; t < bsz; ++t) {
    detail::ConstMatMap A(a.data() + ia_list[t] * m * k, m, k);
    detail::MatMap C(out.data() + t * m * n, m, n);
    if (transpose_b) {
      detail::ConstMatMap B(b.data() + ib_list[t] * n * k, n, k);
      detail::product_into(C, A, B.transpose(), false);
    } else {
      detail::ConstMatMap B(b.data() + ib_list[t] * k * n, k, n);
      detail::product_into(C, A, B, false);
    }
  }
  return detail::make_result(
      std::move(out_shape), std::move(out), {&a, &b},
      [=](Node& self) {
        double* ga = detail::parent_grad(self, 0);
        double* gb = detail::parent_grad(self, 1);
        const double* av = self.parents[0]->value.data();
        const double* bv = self.parents[1]->value.data();
        for (std::size_t t = 0; t < bsz; ++t) {
          detail::ConstMatMap G(self.grad.data() + t * m * n, m, n);
          detail::ConstMatMap A(av + ia_list[t] * m * k, m, k);
          if (transpose_b) {
            detail::ConstMatMap B(bv + ib_list[t] * n * k, n, k);
            if (ga) detail::product_into(detail::MatMap(ga + ia_list[t] * m * k, m, k), G, B, true);
            if (gb) detail::product_into(detail::MatMap(gb + ib_list[t] * n * k, n, k), G.transpose(), A, true);
          } else {
            detail::ConstMatMap B(bv + ib_list[t] * k * n, k, n);
            if (ga) detail::product_into(detail::MatMap(ga + ia_list[t] * m * k, m, k), G, B.transpose(), true);
            if (gb) detail::product_into(detail::MatMap(gb + ib_list[t] * k * n, k, n), A.transpose(), G, true);
          }
        }
      });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.values().begin(), x.values().end());
  return detail::make_result(std::move(shape), std::move(out), {&x}, [](Node& self) {
    double* gx = detail::parent_grad(self, 0);
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < self.value.size(); ++i) gx[i] += g[i];
  });
}

/// General axis permutation: output axis i is input axis perm[i].
inline Tensor permute(const Tensor& x, std::vector<std::size_t> perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw DimensionError("permute: order rank mismatch for " + shape_str(x.shape()));
  std::vector<bool> seen(r, false);
  for (std::size_t p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid axis order");
    seen[p] = true;
  }
  const auto in_strides = detail::contiguous_strides(x.shape());
  Shape out_shape(r);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  // map[o] = flat source offset of output cell o
  std::vector<std::size_t> map(x.numel());
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < map.size(); ++o) {
      map[o] = src;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        src += src_strides[d];
        if (idx[d] < out_shape[d]) break;
        src -= src_strides[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  std::vector<double> out(x.numel());
  const double* xv = x.data();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[map[o]];
  return detail::make_result(std::move(out_shape), std::move(out), {&x},
                             [map = std::move(map)](Node& self) {
                               double* gx = detail::parent_grad(self, 0);
                               const double* g = self.grad.data();
                               for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += g[o];
                             });
}

inline Tensor transpose(const Tensor& x, int axis0, int axis1) {
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[x.normalize_axis(axis0)], perm[x.normalize_axis(axis1)]);
  return permute(x, std::move(perm));
}

namespace detail {
/// Splits a shape around `axis` into (outer, extent, inner) block sizes.
inline std::array<std::size_t, 3> split_axis(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, s[axis], inner};
}
}  // namespace detail

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t ax = parts[0].normalize_axis(axis);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d)
      if (d != ax && p.shape()[d] != parts[0].shape()[d])
        throw DimensionError("concat: shapes " + shape_str(parts[0].shape()) + " and " +
                             shape_str(p.shape()) + " differ off the concat axis");
    out_shape[ax] += p.shape()[ax];
  }
  const auto [outer, total, inner] = detail::split_axis(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> extents;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t e = p.shape()[ax];
    extents.push_back(e);
    const double* pv = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv + o * e * inner, e * inner, out.data() + (o * total + off) * inner);
    off += e;
  }
  return detail::make_result_n(std::move(out_shape), std::move(out), parts,
                               [=](Node& self) {
                                 std::size_t off = 0;
                                 for (std::size_t i = 0; i < extents.size(); ++i) {
                                   const std::size_t e = extents[i];
                                   if (double* gp = detail::parent_grad(self, i)) {
                                     for (std::size_t o = 0; o < outer; ++o) {
                                       const double* g = self.grad.data() + (o * total + off) * inner;
                                       double* dst = gp + o * e * inner;
                                       for (std::size_t j = 0; j < e * inner; ++j) dst[j] += g[j];
                                     }
                                   }
                                   off += e;
                                 }
                               });
}

inline Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = x.normalize_axis(axis);
  if (length == 0 || start + length > x.shape()[ax])
    throw DimensionError("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                         ") outside " + shape_str(x.shape()));
  const auto [outer, extent, inner] = detail::split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  std::vector<double> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data() + (o * extent + start) * inner, length * inner, out.data() + o * length * inner);
  return detail::make_result(std::move(out_shape), std::move(out), {&x},
                             [outer, extent, inner, start, length](Node& self) {
                               double* gx = detail::parent_grad(self, 0);
                               for (std::size_t o = 0; o < outer; ++o) {
                                 const double* g = self.grad.data() + o * length * inner;
                                 double* dst = gx + (o * extent + start) * inner;
                                 for (std::size_t j = 0; j < length * inner; ++j) dst[j] += g[j];
                               }
                             });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::make_result(Shape{1}, {s}, {&x}, [](Node& self) {
    double* gx = detail::parent_grad(self, 0);
    const double g = self.grad[0];
    for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) gx[i] += g;
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const double* xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return detail::make_result(x.shape(), std::move(out), {&x}, [](Node& self) {
    double* gx = detail::parent_grad(self, 0);
    const double* g = self.grad.data();
    const double* xv = self.parents[0]->value.data();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

/// Numerically stable softmax along `axis` (max-subtracted).
inline Tensor softmax(const Tensor& x, int axis = -1) {
  const std::size_t ax = x.normalize_axis(axis);
  const auto [outer, n, inner] = detail::split_axis(x.shape(), ax);
  std::vector<double> out(x.numel());
  const double* xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      const double iz = 1.0 / z;
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] *= iz;
    }
  }
  return detail::make_result(x.shape(), std::move(out), {&x}, [outer, n, inner](Node& self) {
    double* gx = detail::parent_grad(self, 0);
    const double* g = self.grad.data();
    const double* y = self.value.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t i = base + j * inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

/// Log-softmax along the last axis; used by decoding, not on the training path.
inline std::vector<double> log_softmax_row(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

enum class Mode { kTrain, kEval };

/// Inverted dropout. Eval mode, or p == 0, returns the input unchanged.
inline Tensor dropout(const Tensor& x, double p, Mode mode, std::mt19937_64* rng) {
  if (mode == Mode::kEval || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  if (!rng) throw std::invalid_argument("dropout: training mode needs a generator");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) {
    const double u = static_cast<double>((*rng)() >> 11) * 0x1.0p-53;
    m = u >= p ? keep_scale : 0.0;
  }
  std::vector<double> out(x.numel());
  const double* xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return detail::make_result(x.shape(), std::move(out), {&x}, [mask = std::move(mask)](Node& self) {
    double* gx = detail::parent_grad(self, 0);
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

/// Normalises over the last axis.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d)
    throw DimensionError("layer_norm: affine parameters do not match width " + std::to_string(d));
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  const double* xv = x.data();
  const double* gv = gamma.data();
  const double* bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        double* gx = detail::parent_grad(self, 0);
        double* gg = detail::parent_grad(self, 1);
        double* gb = detail::parent_grad(self, 2);
        const double* g = self.grad.data();
        const double* gv = self.parents[1]->value.data();
        std::vector<double> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g + r * d;
          const double* hr = xhat.data() + r * d;
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += gr[j] * hr[j];
            if (gb) gb[j] += gr[j];
            dh[j] = gr[j] * gv[j];
            s1 += dh[j];
            s2 += dh[j] * hr[j];
          }
          if (!gx) continue;
          const double k = inv_std[r] / static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j)
            gx[r * d + j] += k * (static_cast<double>(d) * dh[j] - s1 - hr[j] * s2);
        }
      });
}

/// Per-channel normalisation of a B×C×H×W tensor over batch and spatial axes.
/// Training mode uses batch statistics and updates the running buffers in place.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                         Tensor& running_var, Mode mode, double momentum = 0.1, double eps = 1e-5) {
  if (x.rank() != 4) throw DimensionError("batch_norm: expected B×C×H×W, got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C || running_var.numel() != C)
    throw DimensionError("batch_norm: parameter width does not match " + std::to_string(C) + " channels");
  if (mode == Mode::kTrain && B < 2)
    throw std::invalid_argument("batch_norm: training mode needs batch size >= 2 (got 1)");
  const double count = static_cast<double>(B * HW);
  std::vector<double> mean(C), inv_std(C);
  const double* xv = x.data();
  if (mode == Mode::kTrain) {
    auto rm = running_mean.mutable_values();
    auto rv = running_var.mutable_values();
    for (std::size_t c = 0; c < C; ++c) {
      double mu = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = xv + (b * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) mu += p[i];
      }
      mu /= count;
      double var = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = xv + (b * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) var += (p[i] - mu) * (p[i] - mu);
      }
      const double unbiased = count > 1 ? var / (count - 1.0) : 0.0;
      var /= count;
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      rm[c] = (1.0 - momentum) * rm[c] + momentum * mu;
      rv[c] = (1.0 - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean.values()[c];
      inv_std[c] = 1.0 / std::sqrt(running_var.values()[c] + eps);
    }
  }
  std::vector<double> out(x.numel()), xhat(x.numel());
  const double* gv = gamma.data();
  const double* bv = beta.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const double h = (xv[base + i] - mean[c]) * inv_std[c];
        xhat[base + i] = h;
        out[base + i] = h * gv[c] + bv[c];
      }
    }
  const bool train = mode == Mode::kTrain;
  return detail::make_result(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        double* gx = detail::parent_grad(self, 0);
        double* gg = detail::parent_grad(self, 1);
        double* gb = detail::parent_grad(self, 2);
        const double* g = self.grad.data();
        const double* gv = self.parents[1]->value.data();
        for (std::size_t c = 0; c < C; ++c) {
          double sg = 0.0, sgh = 0.0;
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t base = (b * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              sg += g[base + i];
              sgh += g[base + i] * xhat[base + i];
            }
          }
          if (gg) gg[c] += sgh;
          if (gb) gb[c] += sg;
          if (!gx) continue;
          const double k = gv[c] * inv_std[c];
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t base = (b * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              if (train)
                gx[base + i] += k * (g[base + i] - sg / count - xhat[base + i] * sgh / count);
              else
                gx[base + i] += k * g[base + i];
            }
          }
        }
      });
}

struct Stride2d {
  std::size_t h = 1;
  std::size_t w = 1;
};

/// Output extent of a 3×3, padding-1 convolution along one axis.
constexpr std::size_t conv_out_extent(std::size_t in, std::size_t stride) {
  return (in + 2 - 3) / stride + 1;
}

/// 3×3 convolution with zero padding 1. x: B×C×H×W, weight: O×C×3×3, bias: O.
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Stride2d stride) {
  if (x.rank() != 4) throw DimensionError("conv2d: expected B×C×H×W input, got " + shape_str(x.shape()));
  if (stride.h == 0 || stride.w == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (weight.rank() != 4 || weight.dim(1) != C || weight.dim(2) != 3 || weight.dim(3) != 3)
    throw DimensionError("conv2d: kernel " + shape_str(weight.shape()) + " does not match input " +
                         shape_str(x.shape()));
  const std::size_t O = weight.dim(0);
  if (bias.numel() != O) throw DimensionError("conv2d: bias width mismatch");
  const std::size_t Ho = conv_out_extent(H, stride.h), Wo = conv_out_extent(W, stride.w);
  const std::size_t K = C * 9, P = Ho * Wo;
  // cols[b] is K×P, row (c,ki,kj), column (oh,ow)
  std::vector<double> cols(B * K * P, 0.0);
  const double* xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ki = 0; ki < 3; ++ki)
        for (std::size_t kj = 0; kj < 3; ++kj) {
          double* row = cols.data() + b * K * P + ((c * 3 + ki) * 3 + kj) * P;
          const double* src = xv + (b * C + c) * H * W;
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride.h + ki) - 1;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ow = 0; ow < Wo; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride.w + kj) - 1;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
              row[oh * Wo + ow] = src[ih * static_cast<std::ptrdiff_t>(W) + iw];
            }
          }
        }
  std::vector<double> out(B * O * P);
  detail::ConstMatMap Wm(weight.data(), O, K);
  const double* bv = bias.data();
  for (std::size_t b = 0; b < B; ++b) {
    detail::MatMap Y(out.data() + b * O * P, O, P);
    detail::product_into(Y, Wm, detail::ConstMatMap(cols.data() + b * K * P, K, P), false);
    for (std::size_t o = 0; o < O; ++o) Y.row(o).array() += bv[o];
  }
  return detail::make_result(
      Shape{B, O, Ho, Wo}, std::move(out), {&x, &weight, &bias},
      [=, cols = std::move(cols)](Node& self) {
        double* gx = detail::parent_grad(self, 0);
        double* gw = detail::parent_grad(self, 1);
        double* gb = detail::parent_grad(self, 2);
        detail::ConstMatMap Wm(self.parents[1]->value.data(), O, K);
        std::vector<double> dcols(gx ? K * P : 0);
        for (std::size_t b = 0; b < B; ++b) {
          detail::ConstMatMap G(self.grad.data() + b * O * P, O, P);
          detail::ConstMatMap Cb(cols.data() + b * K * P, K, P);
          if (gw) detail::product_into(detail::MatMap(gw, O, K), G, Cb.transpose(), true);
          if (gb)
            for (std::size_t o = 0; o < O; ++o)
              for (std::size_t q = 0; q < P; ++q) gb[o] += G(o, q);
          if (!gx) continue;
          detail::MatMap D(dcols.data(), K, P);
          detail::product_into(D, Wm.transpose(), G, false);
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ki = 0; ki < 3; ++ki)
              for (std::size_t kj = 0; kj < 3; ++kj) {
                const double* row = dcols.data() + ((c * 3 + ki) * 3 + kj) * P;
                double* dst = gx + (b * C + c) * H * W;
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride.h + ki) - 1;
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                  for (std::size_t ow = 0; ow < Wo; ++ow) {
                    const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride.w + kj) - 1;
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                    dst[ih * static_cast<std::ptrdiff_t>(W) + iw] += row[oh * Wo + ow];
                  }
                }
              }
        }
      });
}

/// Row gather: table V×D, ids → (ids.size())×D. Gradients scatter-add into the table.
inline Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t V = table.dim(0), D = table.dim(1);
  for (auto id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= V)
      throw std::out_of_range("embedding: id " + std::to_string(id) + " outside [0," + std::to_string(V) + ")");
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  std::vector<double> out(ids.size() * D);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * D, D, out.data() + i * D);
  return detail::make_result(Shape{ids.size(), D}, std::move(out), {&table}, [ids, D](Node& self) {
    double* gt = detail::parent_grad(self, 0);
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double* dst = gt + static_cast<std::size_t>(ids[i]) * D;
      for (std::size_t j = 0; j < D; ++j) dst[j] += g[i * D + j];
    }
  });
}

/// Mean token-level negative log-likelihood over positions whose target is not `pad_id`.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& targets, std::int64_t pad_id) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be N×V, got " + shape_str(logits.shape()));
  const std::size_t N = logits.dim(0), V = logits.dim(1);
  if (targets.size() != N)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(N) +
                         " rows");
  std::size_t count = 0;
  for (auto t : targets) {
    if (t == pad_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V)
      throw std::out_of_range("cross_entropy: target id " + std::to_string(t) + " outside [0," + std::to_string(V) + ")");
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every position is padding");
  std::vector<double> probs(N * V, 0.0);
  double total = 0.0;
  const double* lv = logits.data();
  for (std::size_t r = 0; r < N; ++r) {
    if (targets[r] == pad_id) continue;
    const double* row = lv + r * V;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < V; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[r * V + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < V; ++j) probs[r * V + j] /= z;
    total += mx + std::log(z) - row[static_cast<std::size_t>(targets[r])];
  }
  const double inv = 1.0 / static_cast<double>(count);
  return detail::make_result(Shape{1}, {total * inv}, {&logits},
                             [=, probs = std::move(probs)](Node& self) {
                               double* gl = detail::parent_grad(self, 0);
                               const double g = self.grad[0] * inv;
                               for (std::size_t r = 0; r < N; ++r) {
                                 if (targets[r] == pad_id) continue;
                                 for (std::size_t j = 0; j < V; ++j) gl[r * V + j] += g * probs[r * V + j];
                                 gl[r * V + static_cast<std::size_t>(targets[r])] -= g;
                               }
                             });
}

}  // namespace mlst
