#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "emoji/errors.hpp"
#include "emoji/numeric/autograd.hpp"
#include "emoji/numeric/rng.hpp"
#include "emoji/numeric/tensor.hpp"

namespace emoji::numeric {

namespace kernel {

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace kernel

namespace detail {

template <typename T>
bool any_requires(std::initializer_list<Var<T>> vars) {
  for (const auto& v : vars)
    if (v.tape->requires_grad(v.id)) return true;
  return false;
}

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw NumericError("operands recorded on different tapes");
  return *a.tape;
}

inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw NumericError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

}  // namespace detail

/// [m x k] * [k x n] -> [m x n]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) detail::shape_error("matmul", av.shape(), bv.shape());
  Tensor<T> out({m, n});
  kernel::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return tape.push(
      std::move(out), detail::any_requires({a, b}),
      [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ia)) kernel::gemm_nt(g.data(), t.value(ib).data(), t.grad_accumulator(ia).data(), m, n, k);
        if (t.requires_grad(ib)) kernel::gemm_tn(t.value(ia).data(), g.data(), t.grad_accumulator(ib).data(), m, k, n);
      },
      "matmul");
}

/// [m x k] * [n x k]^T -> [m x n]
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k) detail::shape_error("matmul_nt", av.shape(), bv.shape());
  Tensor<T> out({m, n});
  kernel::gemm_nt(av.data(), bv.data(), out.data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return tape.push(
      std::move(out), detail::any_requires({a, b}),
      [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ia)) kernel::gemm_nn(g.data(), t.value(ib).data(), t.grad_accumulator(ia).data(), m, n, k);
        if (t.requires_grad(ib)) kernel::gemm_tn(g.data(), t.value(ia).data(), t.grad_accumulator(ib).data(), m, n, k);
      },
      "matmul_nt");
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.size() != bv.size()) detail::shape_error("add", av.shape(), bv.shape());
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.push(
      std::move(out), detail::any_requires({a, b}),
      [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        for (std::size_t in : {ia, ib}) {
          if (!t.requires_grad(in)) continue;
          auto& acc = t.grad_accumulator(in);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
      },
      "add");
}

/// Adds a row vector (length n) to every row of an [m x n] tensor.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  Tape<T>& tape = detail::same_tape(a, row);
  const auto& av = a.value();
  const auto& rv = row.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (rv.size() != n) detail::shape_error("add_row", av.shape(), rv.shape());
  Tensor<T> out = av;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += rv[j];
  const std::size_t ia = a.id, ir = row.id;
  return tape.push(
      std::move(out), detail::any_requires({a, row}),
      [ia, ir, m, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ia)) {
          auto& acc = t.grad_accumulator(ia);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
        if (t.requires_grad(ir)) {
          auto& acc = t.grad_accumulator(ir);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) acc[j] += g[i * n + j];
        }
      },
      "add_row");
}

/// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.size() != bv.size()) detail::shape_error("mul", av.shape(), bv.shape());
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.push(
      std::move(out), detail::any_requires({a, b}),
      [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ia)) {
          auto& acc = t.grad_accumulator(ia);
          const auto& other = t.value(ib);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * other[i];
        }
        if (t.requires_grad(ib)) {
          auto& acc = t.grad_accumulator(ib);
          const auto& other = t.value(ia);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * other[i];
        }
      },
      "mul");
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  const std::size_t ia = a.id;
  return a.tape->push(
      std::move(out), detail::any_requires({a}),
      [ia, s](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& acc = t.grad_accumulator(ia);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * s;
      },
      "scale");
}

/// Sum of all entries, as a one-element tensor.
template <typename T>
Var<T> sum(Var<T> a) {
  T total{0};
  for (T v : a.value().values()) total += v;
  const std::size_t ia = a.id;
  return a.tape->push(
      Tensor<T>({1}, std::vector<T>{total}), detail::any_requires({a}),
      [ia](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        for (auto& v : t.grad_accumulator(ia).storage()) v += g;
      },
      "sum");
}

/// GELU, tanh approximation.
template <typename T>
Var<T> gelu(Var<T> a) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = static_cast<T>(0.044715);
  Tensor<T> out = a.value();
  for (auto& x : out.storage()) x = T{0.5} * x * (T{1} + std::tanh(c * (x + k * x * x * x)));
  const std::size_t ia = a.id;
  return a.tape->push(
      std::move(out), detail::any_requires({a}),
      [ia](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& x = t.value(ia);
        auto& acc = t.grad_accumulator(ia);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T xi = x[i];
          const T th = std::tanh(c * (xi + k * xi * xi * xi));
          const T d = T{0.5} * (T{1} + th) + T{0.5} * xi * (T{1} - th * th) * c * (T{1} + T{3} * k * xi * xi);
          acc[i] += g[i] * d;
        }
      },
      "gelu");
}

/// Row-wise layer normalization with learned gain and bias (both length n).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = static_cast<T>(1e-5)) {
  Tape<T>& tape = detail::same_tape(x, gain);
  detail::same_tape(x, bias);
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gain.value().size() != n || bias.value().size() != n)
    detail::shape_error("layer_norm", xv.shape(), gain.value().shape());
  Tensor<T> xhat({m, n});
  std::vector<T> inv_std(m);
  Tensor<T> out({m, n});
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t i = 0; i < m; ++i) {
    T mean{0};
    for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
    mean /= static_cast<T>(n);
    T var{0};
    for (std::size_t j = 0; j < n; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<T>(n);
    inv_std[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
      out(i, j) = gv[j] * xhat(i, j) + bv[j];
    }
  }
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  return tape.push(
      std::move(out), detail::any_requires({x, gain, bias}),
      [ix, ig, ib, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& gv = t.value(ig);
        if (t.requires_grad(ig)) {
          auto& acc = t.grad_accumulator(ig);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) acc[j] += g[i * n + j] * xhat(i, j);
        }
        if (t.requires_grad(ib)) {
          auto& acc = t.grad_accumulator(ib);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) acc[j] += g[i * n + j];
        }
        if (t.requires_grad(ix)) {
          auto& acc = t.grad_accumulator(ix);
          std::vector<T> dxhat(n);
          for (std::size_t i = 0; i < m; ++i) {
            T sum_d{0}, sum_dx{0};
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = g[i * n + j] * gv[j];
              sum_d += dxhat[j];
              sum_dx += dxhat[j] * xhat(i, j);
            }
            const T nn = static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j)
              acc[i * n + j] += inv_std[i] / nn * (nn * dxhat[j] - sum_d - xhat(i, j) * sum_dx);
          }
        }
      },
      "layer_norm");
}

/// Row softmax where columns with key_mask[j] == 0 receive an additive -inf
/// bias, i.e. exactly zero probability. An empty mask means no masking.
template <typename T>
Var<T> masked_softmax_rows(Var<T> x, std::span<const std::uint8_t> key_mask) {
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (!key_mask.empty() && key_mask.size() != n)
    throw NumericError("softmax mask length " + std::to_string(key_mask.size()) + " != " + std::to_string(n));
  auto open = [&](std::size_t j) { return key_mask.empty() || key_mask[j] != 0; };
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (open(j)) mx = std::max(mx, xv(i, j));
    if (!std::isfinite(mx)) throw NumericError("softmax row has no unmasked finite entries");
    T total{0};
    for (std::size_t j = 0; j < n; ++j) {
      const T e = open(j) ? std::exp(xv(i, j) - mx) : T{0};
      out(i, j) = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= total;
  }
  const std::size_t ix = x.id;
  return x.tape->push(
      std::move(out), detail::any_requires({x}),
      [ix, m, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& y = t.value(self);
        auto& acc = t.grad_accumulator(ix);
        for (std::size_t i = 0; i < m; ++i) {
          T dot{0};
          for (std::size_t j = 0; j < n; ++j) dot += y(i, j) * g[i * n + j];
          for (std::size_t j = 0; j < n; ++j) acc[i * n + j] += y(i, j) * (g[i * n + j] - dot);
        }
      },
      "softmax");
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  return masked_softmax_rows(x, {});
}

/// Gathers rows of an [r x n] tensor; gradient is scatter-added back.
template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<std::size_t> rows) {
  const auto& xv = x.value();
  const std::size_t n = xv.cols();
  Tensor<T> out({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows())
      throw NumericError("gather_rows index " + std::to_string(rows[i]) + " out of range " + shape_string(xv.shape()));
    std::copy_n(xv.row(rows[i]).begin(), n, out.row(i).begin());
  }
  const std::size_t ix = x.id;
  return x.tape->push(
      std::move(out), detail::any_requires({x}),
      [ix, n, rows = std::move(rows)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& acc = t.grad_accumulator(ix);
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::size_t j = 0; j < n; ++j) acc[rows[i] * n + j] += g[i * n + j];
      },
      "gather_rows");
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count) {
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (begin + count > n) throw NumericError("slice_cols out of range");
  Tensor<T> out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = xv(i, begin + j);
  const std::size_t ix = x.id;
  return x.tape->push(
      std::move(out), detail::any_requires({x}),
      [ix, m, n, begin, count](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& acc = t.grad_accumulator(ix);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < count; ++j) acc[i * n + begin + j] += g[i * count + j];
      },
      "slice_cols");
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw NumericError("concat_cols of nothing");
  Tape<T>& tape = *parts.front().tape;
  const std::size_t m = parts.front().value().rows();
  std::size_t n = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (p.tape != &tape) throw NumericError("operands recorded on different tapes");
    if (p.value().rows() != m) detail::shape_error("concat_cols", parts.front().value().shape(), p.value().shape());
    n += p.value().cols();
    needs = needs || tape.requires_grad(p.id);
  }
  Tensor<T> out({m, n});
  std::vector<std::pair<std::size_t, std::size_t>> pieces;  // (node id, width)
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, offset + j) = pv(i, j);
    pieces.emplace_back(p.id, pv.cols());
    offset += pv.cols();
  }
  return tape.push(
      std::move(out), needs,
      [m, n, pieces = std::move(pieces)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        std::size_t off = 0;
        for (auto [id, w] : pieces) {
          if (t.requires_grad(id)) {
            auto& acc = t.grad_accumulator(id);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < w; ++j) acc[i * w + j] += g[i * n + off + j];
          }
          off += w;
        }
      },
      "concat_cols");
}

/// Mean over the rows whose mask entry is non-zero, as a [1 x n] tensor.
template <typename T>
Var<T> masked_mean_rows(Var<T> x, std::span<const std::uint8_t> row_mask) {
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (row_mask.size() != m) throw NumericError("masked_mean_rows: mask length != rows");
  std::vector<std::size_t> used;
  for (std::size_t i = 0; i < m; ++i)
    if (row_mask[i]) used.push_back(i);
  if (used.empty()) throw NumericError("masked_mean_rows: every row is masked");
  const T inv = T{1} / static_cast<T>(used.size());
  Tensor<T> out({1, n});
  for (std::size_t i : used)
    for (std::size_t j = 0; j < n; ++j) out[j] += xv(i, j);
  for (auto& v : out.storage()) v *= inv;
  const std::size_t ix = x.id;
  return x.tape->push(
      std::move(out), detail::any_requires({x}),
      [ix, n, inv, used = std::move(used)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& acc = t.grad_accumulator(ix);
        for (std::size_t i : used)
          for (std::size_t j = 0; j < n; ++j) acc[i * n + j] += g[j] * inv;
      },
      "masked_mean_rows");
}

/// Inverted dropout. Identity when rate is zero.
template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw NumericError("dropout rate must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.value().size());
  for (auto& v : mask) v = rng.bernoulli(rate) ? T{0} : keep_scale;
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ix = x.id;
  return x.tape->push(
      std::move(out), detail::any_requires({x}),
      [ix, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& acc = t.grad_accumulator(ix);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * mask[i];
      },
      "dropout");
}

/// Mean over rows of -log softmax(logits)[label].
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> labels) {
  const auto& lv = logits.value();
  const std::size_t b = lv.rows(), c = lv.cols();
  if (labels.size() != b)
    throw NumericError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(b) + " rows");
  if (b == 0) throw NumericError("cross_entropy over an empty batch");
  Tensor<T> probs({b, c});
  T loss{0};
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c)
      throw NumericError("cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                         std::to_string(c) + " classes");
    T mx = lv(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv(i, j));
    T total{0};
    for (std::size_t j = 0; j < c; ++j) {
      probs(i, j) = std::exp(lv(i, j) - mx);
      total += probs(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) probs(i, j) /= total;
    loss += std::log(total) + mx - lv(i, labels[i]);
  }
  loss /= static_cast<T>(b);
  const std::size_t il = logits.id;
  std::vector<std::size_t> gold(labels.begin(), labels.end());
  return logits.tape->push(
      Tensor<T>({1}, std::vector<T>{loss}), detail::any_requires({logits}),
      [il, b, c, probs = std::move(probs), gold = std::move(gold)](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0] / static_cast<T>(b);
        auto& acc = t.grad_accumulator(il);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < c; ++j)
            acc[i * c + j] += g * (probs(i, j) - (j == gold[i] ? T{1} : T{0}));
      },
      "cross_entropy");
}

/// Compressed sparse rows; used for bag-of-words feature matrices.
template <typename T>
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> col_idx;
  std::vector<T> values;

  void push_row(const std::vector<std::pair<std::size_t, T>>& entries) {
    for (auto [c, v] : entries) {
      col_idx.push_back(c);
      values.push_back(v);
    }
    row_ptr.push_back(col_idx.size());
    ++rows;
  }

  T at(std::size_t r, std::size_t c) const {
    for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k)
      if (col_idx[k] == c) return values[k];
    return T{0};
  }
};

/// Constant sparse [m x k] times dense [k x n].
template <typename T>
Var<T> sparse_matmul(const CsrMatrix<T>& a, Var<T> w) {
  const auto& wv = w.value();
  const std::size_t n = wv.cols();
  if (wv.rows() != a.cols) throw NumericError("sparse_matmul: inner dimensions disagree");
  Tensor<T> out({a.rows, n});
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
      const T v = a.values[k];
      const T* wrow = wv.data() + a.col_idx[k] * n;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += v * wrow[j];
    }
  const std::size_t iw = w.id;
  return w.tape->push(
      std::move(out), detail::any_requires({w}),
      [&a, iw, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& acc = t.grad_accumulator(iw);
        for (std::size_t i = 0; i < a.rows; ++i)
          for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
            const T v = a.values[k];
            T* arow = acc.data() + a.col_idx[k] * n;
            for (std::size_t j = 0; j < n; ++j) arow[j] += v * g[i * n + j];
          }
      },
      "sparse_matmul");
}

}  // namespace emoji::numeric
