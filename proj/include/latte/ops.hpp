#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include "latte/tensor.hpp"

// Differentiable tensor operations. Every op computes its forward value
// eagerly; when a tape is active and any input requires or carries gradient,
// the op appends its backward rule to that tape.

namespace latte {

namespace detail {

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta,
                 float* c, std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0f, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
                 double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

template <typename T>
bool wants_grad(const TensorNode<T>& n) {
  return n.requires_grad || n.tracked;
}

template <typename T>
Tape<T>* tape_for(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) return nullptr;
  for (const auto* t : inputs) {
    if (wants_grad(*t->node())) return tape;
  }
  return nullptr;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, Tape<T>* tape) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (tape != nullptr) {
    out.node()->tracked = true;
    out.node()->tape = tape;
    out.node()->generation = tape->generation();
  }
  return out;
}

/// Gradient buffer of `n`, or nullptr when `n` does not take gradient.
template <typename T>
T* grad_sink(TensorNode<T>& n) {
  if (!wants_grad(n)) return nullptr;
  n.grad_ready = true;
  return n.ensure_grad().data();
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace detail

/// a[..., k] x b[k, n] -> [..., n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(b, 2, "matmul");
  if (a.rank() < 1 || a.shape().back() != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0), n = b.dim(1), rows = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<T> out(rows * n);
  if (rows > 0 && n > 0) {
    detail::gemm(false, false, rows, n, k, a.data().data(), k, b.data().data(), n, T{0},
                 out.data(), n);
  }
  auto* tape = detail::tape_for<T>({&a, &b});
  auto result = detail::make_result(std::move(out_shape), std::move(out), tape);
  if (tape != nullptr) {
    tape->record([an = a.node(), bn = b.node(), on = result.node(), rows, k, n] {
      if (!on->grad_ready) return;
      const T* dc = on->grad.data();
      if (T* da = detail::grad_sink(*an)) {
        detail::gemm(false, true, rows, k, n, dc, n, bn->value.data(), n, T{1}, da, k);
      }
      if (T* db = detail::grad_sink(*bn)) {
        detail::gemm(true, false, k, n, rows, an->value.data(), k, dc, n, T{1}, db, n);
      }
    });
  }
  return result;
}

/// Batched product: a[B, m, k] x b[B, k, n] -> [B, m, n]; with `transpose_b`
/// the second operand is b[B, n, k].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  detail::require_rank(a, 3, "bmm");
  detail::require_rank(b, 3, "bmm");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != batch || bk != k) {
    throw DimensionError("bmm: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()) + (transpose_b ? " (transposed)" : ""));
  }
  std::vector<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    detail::gemm(false, transpose_b, m, n, k, a.data().data() + i * m * k, k,
                 b.data().data() + i * k * n, transpose_b ? k : n, T{0}, out.data() + i * m * n,
                 n);
  }
  auto* tape = detail::tape_for<T>({&a, &b});
  auto result = detail::make_result(Shape{batch, m, n}, std::move(out), tape);
  if (tape != nullptr) {
    tape->record([an = a.node(), bn = b.node(), on = result.node(), batch, m, k, n, transpose_b] {
      if (!on->grad_ready) return;
      T* da = detail::grad_sink(*an);
      T* db = detail::grad_sink(*bn);
      for (std::size_t i = 0; i < batch; ++i) {
        const T* dc = on->grad.data() + i * m * n;
        const T* av = an->value.data() + i * m * k;
        const T* bv = bn->value.data() + i * k * n;
        if (da != nullptr) {
          // dA = dC * B^T   (or dC * B when b was transposed)
          detail::gemm(false, !transpose_b, m, k, n, dc, n, bv, transpose_b ? k : n, T{1},
                       da + i * m * k, k);
        }
        if (db != nullptr) {
          if (transpose_b) {
            detail::gemm(true, false, n, k, m, dc, n, av, k, T{1}, db + i * k * n, k);
          } else {
            detail::gemm(true, false, k, n, m, av, k, dc, n, T{1}, db + i * k * n, n);
          }
        }
      }
    });
  }
  return result;
}

/// Elementwise a + b. `b` may have a shape that is a suffix of `a`'s shape, in
/// which case it is broadcast over the leading axes (bias rows, positional
/// tables).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!detail::is_suffix(b.shape(), a.shape())) {
    if (detail::is_suffix(a.shape(), b.shape())) return add(b, a);
    throw DimensionError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " do not broadcast");
  }
  const std::size_t inner = b.numel(), outer = inner ? a.numel() / inner : 0;
  std::vector<T> out(a.data().begin(), a.data().end());
  const T* bv = b.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    T* row = out.data() + o * inner;
    for (std::size_t i = 0; i < inner; ++i) row[i] += bv[i];
  }
  auto* tape = detail::tape_for<T>({&a, &b});
  auto result = detail::make_result(a.shape(), std::move(out), tape);
  if (tape != nullptr) {
    tape->record([an = a.node(), bn = b.node(), on = result.node(), outer, inner] {
      if (!on->grad_ready) return;
      const T* dc = on->grad.data();
      if (T* da = detail::grad_sink(*an)) {
        for (std::size_t i = 0; i < outer * inner; ++i) da[i] += dc[i];
      }
      if (T* db = detail::grad_sink(*bn)) {
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) db[i] += dc[o * inner + i];
        }
      }
    });
  }
  return result;
}

/// Elementwise a * b with the same suffix broadcasting rule as `add`.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (!detail::is_suffix(b.shape(), a.shape())) {
    if (detail::is_suffix(a.shape(), b.shape())) return mul(b, a);
    throw DimensionError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " do not broadcast");
  }
  const std::size_t inner = b.numel(), outer = inner ? a.numel() / inner : 0;
  std::vector<T> out(a.numel());
  const T* av = a.data().data();
  const T* bv = b.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = av[o * inner + i] * bv[i];
  }
  auto* tape = detail::tape_for<T>({&a, &b});
  auto result = detail::make_result(a.shape(), std::move(out), tape);
  if (tape != nullptr) {
    tape->record([an = a.node(), bn = b.node(), on = result.node(), outer, inner] {
      if (!on->grad_ready) return;
      const T* dc = on->grad.data();
      const T* av = an->value.data();
      const T* bv = bn->value.data();
      if (T* da = detail::grad_sink(*an)) {
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) da[o * inner + i] += dc[o * inner + i] * bv[i];
        }
      }
      if (T* db = detail::grad_sink(*bn)) {
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) db[i] += dc[o * inner + i] * av[o * inner + i];
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  auto* tape = detail::tape_for<T>({&a});
  auto result = detail::make_result(a.shape(), std::move(out), tape);
  if (tape != nullptr) {
    tape->record([an = a.node(), on = result.node(), factor] {
      if (!on->grad_ready) return;
      if (T* da = detail::grad_sink(*an)) {
        for (std::size_t i = 0; i < on->grad.size(); ++i) da[i] += factor * on->grad[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T{0} ? a[i] : T{0};
  auto* tape = detail::tape_for<T>({&a});
  auto result = detail::make_result(a.shape(), std::move(out), tape);
  if (tape != nullptr) {
    tape->record([an = a.node(), on = result.node()] {
      if (!on->grad_ready) return;
      if (T* da = detail::grad_sink(*an)) {
        for (std::size_t i = 0; i < on->grad.size(); ++i) {
          if (an->value[i] > T{0}) da[i] += on->grad[i];
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  auto* tape = detail::tape_for<T>({&a});
  auto result = detail::make_result(a.shape(), std::move(out), tape);
  if (tape != nullptr) {
    tape->record([an = a.node(), on = result.node()] {
      if (!on->grad_ready) return;
      if (T* da = detail::grad_sink(*an)) {
        for (std::size_t i = 0; i < on->grad.size(); ++i) {
          const T y = on->value[i];
          da[i] += on->grad[i] * (T{1} - y * y);
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " +
                           shape_str(s) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_block = out_shape[axis] * inner;
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t block = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * block, block, out.data() + o * out_block + offset);
    }
    offsets.push_back(offset);
    offset += block;
  }
  Tape<T>* tape = active_tape<T>();
  bool any = false;
  for (const auto& p : parts) any = any || detail::wants_grad(*p.node());
  if (!any) tape = nullptr;
  auto result = detail::make_result(std::move(out_shape), std::move(out), tape);
  if (tape != nullptr) {
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    tape->record([nodes, on = result.node(), offsets, outer, inner, axis, out_block] {
      if (!on->grad_ready) return;
      for (std::size_t j = 0; j < nodes.size(); ++j) {
        T* dp = detail::grad_sink(*nodes[j]);
        if (dp == nullptr) continue;
        const std::size_t block = nodes[j]->shape[axis] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = on->grad.data() + o * out_block + offsets[j];
          for (std::size_t i = 0; i < block; ++i) dp[o * block + i] += src[i];
        }
      }
    });
  }
  return result;
}

/// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t in_block = s[axis] * inner, out_block = (end - begin) * inner;
  std::vector<T> out(outer * out_block);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().data() + o * in_block + begin * inner, out_block,
                out.data() + o * out_block);
  }
  auto* tape = detail::tape_for<T>({&a});
  auto result = detail::make_result(std::move(out_shape), std::move(out), tape);
  if (tape != nullptr) {
    tape->record([an = a.node(), on = result.node(), outer, in_block, out_block, begin, inner] {
      if (!on->grad_ready) return;
      if (T* da = detail::grad_sink(*an)) {
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < out_block; ++i) {
            da[o * in_block + begin * inner + i] += on->grad[o * out_block + i];
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto* tape = detail::tape_for<T>({&a});
  auto result = detail::make_result(
      std::move(shape), std::vector<T>(a.data().begin(), a.data().end()), tape);
  if (tape != nullptr) {
    tape->record([an = a.node(), on = result.node()] {
      if (!on->grad_ready) return;
      if (T* da = detail::grad_sink(*an)) {
        for (std::size_t i = 0; i < on->grad.size(); ++i) da[i] += on->grad[i];
      }
    });
  }
  return result;
}

namespace detail {

// [B, T, H*D] <-> [B*H, T, D]
template <typename T>
void permute_heads(const T* src, T* dst, std::size_t batch, std::size_t steps, std::size_t heads,
                   std::size_t head_dim, bool split, bool accumulate) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t merged = ((b * steps + t) * heads + h) * head_dim;
        const std::size_t splitted = ((b * heads + h) * steps + t) * head_dim;
        const T* from = src + (split ? merged : splitted);
        T* to = dst + (split ? splitted : merged);
        for (std::size_t e = 0; e < head_dim; ++e) {
          if (accumulate) {
            to[e] += from[e];
          } else {
            to[e] = from[e];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  detail::require_rank(x, 3, "split_heads");
  const std::size_t batch = x.dim(0), steps = x.dim(1), width = x.dim(2);
  if (heads == 0 || width % heads != 0) {
    throw DimensionError("split_heads: width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads));
  }
  const std::size_t hd = width / heads;
  std::vector<T> out(x.numel());
  detail::permute_heads(x.data().data(), out.data(), batch, steps, heads, hd, true, false);
  auto* tape = detail::tape_for<T>({&x});
  auto result = detail::make_result(Shape{batch * heads, steps, hd}, std::move(out), tape);
  if (tape != nullptr) {
    tape->record([xn = x.node(), on = result.node(), batch, steps, heads, hd] {
      if (!on->grad_ready) return;
      if (T* dx = detail::grad_sink(*xn)) {
        detail::permute_heads(on->grad.data(), dx, batch, steps, heads, hd, false, true);
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads) {
  detail::require_rank(x, 3, "merge_heads");
  if (heads == 0 || x.dim(0) % heads != 0) {
    throw DimensionError("merge_heads: leading extent " + std::to_string(x.dim(0)) +
                         " not divisible by " + std::to_string(heads));
  }
  const std::size_t batch = x.dim(0) / heads, steps = x.dim(1), hd = x.dim(2);
  std::vector<T> out(x.numel());
  detail::permute_heads(x.data().data(), out.data(), batch, steps, heads, hd, false, false);
  auto* tape = detail::tape_for<T>({&x});
  auto result = detail::make_result(Shape{batch, steps, heads * hd}, std::move(out), tape);
  if (tape != nullptr) {
    tape->record([xn = x.node(), on = result.node(), batch, steps, heads, hd] {
      if (!on->grad_ready) return;
      if (T* dx = detail::grad_sink(*xn)) {
        detail::permute_heads(on->grad.data(), dx, batch, steps, heads, hd, true, true);
      }
    });
  }
  return result;
}

namespace detail {

template <typename T>
Tensor<T> softmax_impl(const Tensor<T>& a, std::size_t axis, bool causal) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw DimensionError("softmax: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  // Causal masking applies to the last two axes [queries, keys]; query q sees
  // keys up to q + (keys - queries).
  std::size_t queries = 1;
  if (causal) {
    if (s.size() < 2 || axis != s.size() - 1) {
      throw DimensionError("causal softmax needs rank >= 2 over the last axis, got " +
                           shape_str(s));
    }
    queries = s[s.size() - 2];
    if (queries > len) throw DimensionError("causal softmax: more queries than keys");
  }
  const auto* av = a.data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::isnan(av[i])) throw NumericError("softmax: NaN input at flat index " + std::to_string(i));
  }
  std::vector<T> out(a.numel(), T{0});
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t visible = causal ? (o % queries) + 1 + (len - queries) : len;
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, av[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < visible; ++j) {
        const T e = std::exp(av[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < visible; ++j) out[base + j * inner] /= total;
    }
  }
  auto* tape = tape_for<T>({&a});
  auto result = make_result(s, std::move(out), tape);
  if (tape != nullptr) {
    tape->record([an = a.node(), on = result.node(), outer, inner, len] {
      if (!on->grad_ready) return;
      T* da = grad_sink(*an);
      if (da == nullptr) return;
      const T* y = on->value.data();
      const T* dy = on->grad.data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < len; ++j) dot += dy[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            da[idx] += y[idx] * (dy[idx] - dot);
          }
        }
      }
    });
  }
  return result;
}

}  // namespace detail

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  return detail::softmax_impl(a, axis, false);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  return detail::softmax_impl(a, a.rank() - 1, false);
}

/// Softmax over the last axis of [..., queries, keys] with keys after the
/// query position masked to exactly zero.
template <typename T>
Tensor<T> causal_softmax(const Tensor<T>& a) {
  return detail::softmax_impl(a, a.rank() - 1, true);
}

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
  if (x.rank() < 1 || x.shape().back() < 2) {
    throw DimensionError("layer_norm: last axis must have extent >= 2, got " + shape_str(x.shape()));
  }
  const std::size_t width = x.shape().back(), rows = x.numel() / width;
  if (gain.numel() != width || bias.numel() != width) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match width " + std::to_string(width));
  }
  std::vector<T> out(x.numel()), normed(x.numel()), rstd(rows);
  const T* xv = x.data().data();
  const T* g = gain.data().data();
  const T* bv = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * width;
    T mean = 0;
    for (std::size_t i = 0; i < width; ++i) mean += row[i];
    mean /= static_cast<T>(width);
    T var = 0;
    for (std::size_t i = 0; i < width; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<T>(width);
    const T inv = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd[r] = inv;
    for (std::size_t i = 0; i < width; ++i) {
      const T n = (row[i] - mean) * inv;
      normed[r * width + i] = n;
      out[r * width + i] = n * g[i] + bv[i];
    }
  }
  auto* tape = detail::tape_for<T>({&x, &gain, &bias});
  auto result = detail::make_result(x.shape(), std::move(out), tape);
  if (tape != nullptr) {
    tape->record([xn = x.node(), gn = gain.node(), bn = bias.node(), on = result.node(),
                  normed = std::move(normed), rstd = std::move(rstd), rows, width] {
      if (!on->grad_ready) return;
      const T* dy = on->grad.data();
      const T* g = gn->value.data();
      if (T* dg = detail::grad_sink(*gn)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < width; ++i) dg[i] += dy[r * width + i] * normed[r * width + i];
      }
      if (T* db = detail::grad_sink(*bn)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < width; ++i) db[i] += dy[r * width + i];
      }
      if (T* dx = detail::grad_sink(*xn)) {
        const T inv_w = T{1} / static_cast<T>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dn = 0, mean_dn_n = 0;
          for (std::size_t i = 0; i < width; ++i) {
            const T dn = dy[r * width + i] * g[i];
            mean_dn += dn;
            mean_dn_n += dn * normed[r * width + i];
          }
          mean_dn *= inv_w;
          mean_dn_n *= inv_w;
          for (std::size_t i = 0; i < width; ++i) {
            const T dn = dy[r * width + i] * g[i];
            dx[r * width + i] += rstd[r] * (dn - mean_dn - normed[r * width + i] * mean_dn_n);
          }
        }
      }
    });
  }
  return result;
}

/// Rows of `table` [V, D] selected by `indices` -> [len(indices), D].
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<std::size_t>& indices) {
  detail::require_rank(table, 2, "embedding_lookup");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  std::vector<T> out(indices.size() * width);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= vocab) {
      throw LookupError("embedding_lookup: index " + std::to_string(indices[r]) +
                        " out of range for table with " + std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().data() + indices[r] * width, width, out.data() + r * width);
  }
  auto* tape = detail::tape_for<T>({&table});
  auto result = detail::make_result(Shape{indices.size(), width}, std::move(out), tape);
  if (tape != nullptr) {
    tape->record([tn = table.node(), on = result.node(), indices, width] {
      if (!on->grad_ready) return;
      if (T* dt = detail::grad_sink(*tn)) {
        for (std::size_t r = 0; r < indices.size(); ++r) {
          for (std::size_t i = 0; i < width; ++i) dt[indices[r] * width + i] += on->grad[r * width + i];
        }
      }
    });
  }
  return result;
}

/// Mean of row groups: rows [offsets[b], offsets[b+1]) of x [n, D] -> row b.
template <typename T>
Tensor<T> segment_mean(const Tensor<T>& x, const std::vector<std::size_t>& offsets) {
  detail::require_rank(x, 2, "segment_mean");
  if (offsets.size() < 2 || offsets.back() != x.dim(0)) {
    throw DimensionError("segment_mean: offsets do not cover " + shape_str(x.shape()));
  }
  const std::size_t groups = offsets.size() - 1, width = x.dim(1);
  std::vector<T> out(groups * width, T{0});
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t count = offsets[g + 1] - offsets[g];
    if (count == 0) throw DimensionError("segment_mean: empty segment " + std::to_string(g));
    for (std::size_t r = offsets[g]; r < offsets[g + 1]; ++r) {
      for (std::size_t i = 0; i < width; ++i) out[g * width + i] += x[r * width + i];
    }
    for (std::size_t i = 0; i < width; ++i) out[g * width + i] /= static_cast<T>(count);
  }
  auto* tape = detail::tape_for<T>({&x});
  auto result = detail::make_result(Shape{groups, width}, std::move(out), tape);
  if (tape != nullptr) {
    tape->record([xn = x.node(), on = result.node(), offsets, width, groups] {
      if (!on->grad_ready) return;
      if (T* dx = detail::grad_sink(*xn)) {
        for (std::size_t g = 0; g < groups; ++g) {
          const T inv = T{1} / static_cast<T>(offsets[g + 1] - offsets[g]);
          for (std::size_t r = offsets[g]; r < offsets[g + 1]; ++r) {
            for (std::size_t i = 0; i < width; ++i) dx[r * width + i] += inv * on->grad[g * width + i];
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (const T v : a.data()) total += v;
  auto* tape = detail::tape_for<T>({&a});
  auto result = detail::make_result(Shape{}, std::vector<T>{total}, tape);
  if (tape != nullptr) {
    tape->record([an = a.node(), on = result.node()] {
      if (!on->grad_ready) return;
      if (T* da = detail::grad_sink(*an)) {
        for (std::size_t i = 0; i < an->value.size(); ++i) da[i] += on->grad[0];
      }
    });
  }
  return result;
}

inline constexpr double kDefaultHuberDelta = 1.0;

/// Mean over elements of 0.5 e^2 for |e| <= delta, delta (|e| - 0.5 delta)
/// otherwise, with e = pred - target.
template <typename T>
Tensor<T> huber_loss(const Tensor<T>& pred, const Tensor<T>& target,
                     T delta = static_cast<T>(kDefaultHuberDelta)) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("huber_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  if (!(delta > T{0})) throw NumericError("huber_loss: delta must be positive");
  const std::size_t n = pred.numel();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T e = pred[i] - target[i];
    const T ae = std::abs(e);
    total += ae <= delta ? T{0.5} * e * e : delta * (ae - T{0.5} * delta);
  }
  auto* tape = detail::tape_for<T>({&pred, &target});
  auto result = detail::make_result(Shape{}, std::vector<T>{n ? total / static_cast<T>(n) : T{0}}, tape);
  if (tape != nullptr) {
    tape->record([pn = pred.node(), tn = target.node(), on = result.node(), n, delta] {
      if (!on->grad_ready || n == 0) return;
      const T g = on->grad[0] / static_cast<T>(n);
      T* dp = detail::grad_sink(*pn);
      T* dt = detail::grad_sink(*tn);
      for (std::size_t i = 0; i < n; ++i) {
        const T e = pn->value[i] - tn->value[i];
        const T de = std::abs(e) <= delta ? e : (e > 0 ? delta : -delta);
        if (dp != nullptr) dp[i] += g * de;
        if (dt != nullptr) dt[i] -= g * de;
      }
    });
  }
  return result;
}

}  // namespace latte
