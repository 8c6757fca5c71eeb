#include "mf/numeric/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>

#include "kernels.hpp"
#include "mf/common/error.hpp"

MF_NUMERIC_BEGIN
namespace ops {
namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_node(std::string_view op, Shape shape, std::initializer_list<const Tensor*> inputs) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->value.assign(shape_numel(shape), Scalar(0));
  node->shape = std::move(shape);
  if (grad_enabled()) {
    for (const Tensor* t : inputs) node->requires_grad = node->requires_grad || t->requires_grad();
  }
  if (node->requires_grad) {
    for (const Tensor* t : inputs) node->inputs.push_back(t->node_ptr());
  }
  return node;
}

bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }
std::vector<Scalar>& grad_of(const Node& self, std::size_t i) { return self.inputs[i]->ensure_grad(); }
const std::vector<Scalar>& value_of(const Node& self, std::size_t i) { return self.inputs[i]->value; }

[[noreturn]] void shape_error(std::string_view op, const std::string& detail) {
  throw DimensionError(std::string(op) + ": " + detail);
}

void require_same(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error(op, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank, const char* which) {
  if (t.rank() != rank) {
    shape_error(op, std::string(which) + " must have rank " + std::to_string(rank) + ", got " +
                        shape_string(t.shape()));
  }
}

std::size_t last_dim(const Tensor& t) { return t.shape().empty() ? 1 : t.shape().back(); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  auto out = make_node("add", a.shape(), {&a, &b});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = av[i] + bv[i];
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(self, k)) continue;
        auto& g = grad_of(self, k);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  auto out = make_node("sub", a.shape(), {&a, &b});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = av[i] - bv[i];
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      if (wants(self, 0)) {
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (wants(self, 1)) {
        auto& g = grad_of(self, 1);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  auto out = make_node("mul", a.shape(), {&a, &b});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = av[i] * bv[i];
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      const auto& av = value_of(self, 0);
      const auto& bv = value_of(self, 1);
      if (wants(self, 0)) {
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
      }
      if (wants(self, 1)) {
        auto& g = grad_of(self, 1);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
      }
    };
  }
  return Tensor(out);
}

Tensor scale(const Tensor& x, Scalar s) {
  auto out = make_node("scale", x.shape(), {&x});
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = xv[i] * s;
  if (out->requires_grad) {
    out->backward = [s](Node& self) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    };
  }
  return Tensor(out);
}

Tensor scale_per_batch(const Tensor& x, std::span<const Scalar> factors) {
  if (x.rank() == 0 || x.dim(0) != factors.size()) {
    shape_error("scale_per_batch", "leading axis of " + shape_string(x.shape()) + " vs " +
                                       std::to_string(factors.size()) + " factors");
  }
  auto out = make_node("scale_per_batch", x.shape(), {&x});
  const std::size_t per = x.numel() / std::max<std::size_t>(1, factors.size());
  std::vector<Scalar> f(factors.begin(), factors.end());
  const auto& xv = x.values();
  for (std::size_t b = 0; b < f.size(); ++b)
    for (std::size_t i = 0; i < per; ++i) out->value[b * per + i] = xv[b * per + i] * f[b];
  if (out->requires_grad) {
    out->backward = [f = std::move(f), per](Node& self) {
      auto& g = grad_of(self, 0);
      for (std::size_t b = 0; b < f.size(); ++b)
        for (std::size_t i = 0; i < per; ++i) g[b * per + i] += self.grad[b * per + i] * f[b];
    };
  }
  return Tensor(out);
}

namespace {

void check_rows(std::string_view op, const Tensor& x, const Tensor& v) {
  if (v.rank() != 1 || x.rank() == 0 || v.dim(0) != x.shape().back()) {
    shape_error(op, "vector " + shape_string(v.shape()) + " does not match last axis of " +
                        shape_string(x.shape()));
  }
}

void check_per_batch(std::string_view op, const Tensor& x, const Tensor& v) {
  if (x.rank() != 3 || v.rank() != 2 || v.dim(0) != x.dim(0) || v.dim(1) != x.dim(2)) {
    shape_error(op, "expected x [B,T,d] and v [B,d], got " + shape_string(x.shape()) + " and " +
                        shape_string(v.shape()));
  }
}

}  // namespace

Tensor add_rows(const Tensor& x, const Tensor& v) {
  check_rows("add_rows", x, v);
  auto out = make_node("add_rows", x.shape(), {&x, &v});
  const std::size_t d = v.numel();
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.values();
  const auto& vv = v.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out->value[r * d + j] = xv[r * d + j] + vv[j];
  if (out->requires_grad) {
    out->backward = [rows, d](Node& self) {
      if (wants(self, 0)) {
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (wants(self, 1)) {
        auto& g = grad_of(self, 1);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
      }
    };
  }
  return Tensor(out);
}

Tensor mul_rows(const Tensor& x, const Tensor& v) {
  check_rows("mul_rows", x, v);
  auto out = make_node("mul_rows", x.shape(), {&x, &v});
  const std::size_t d = v.numel();
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.values();
  const auto& vv = v.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out->value[r * d + j] = xv[r * d + j] * vv[j];
  if (out->requires_grad) {
    out->backward = [rows, d](Node& self) {
      const auto& xv = value_of(self, 0);
      const auto& vv = value_of(self, 1);
      if (wants(self, 0)) {
        auto& g = grad_of(self, 0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r * d + j] * vv[j];
      }
      if (wants(self, 1)) {
        auto& g = grad_of(self, 1);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j] * xv[r * d + j];
      }
    };
  }
  return Tensor(out);
}

Tensor add_per_batch(const Tensor& x, const Tensor& v) {
  check_per_batch("add_per_batch", x, v);
  auto out = make_node("add_per_batch", x.shape(), {&x, &v});
  const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
  const auto& xv = x.values();
  const auto& vv = v.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t i = (b * T + t) * d + j;
        out->value[i] = xv[i] + vv[b * d + j];
      }
  if (out->requires_grad) {
    out->backward = [B, T, d](Node& self) {
      if (wants(self, 0)) {
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (wants(self, 1)) {
        auto& g = grad_of(self, 1);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < d; ++j) g[b * d + j] += self.grad[(b * T + t) * d + j];
      }
    };
  }
  return Tensor(out);
}

Tensor mul_per_batch(const Tensor& x, const Tensor& v) {
  check_per_batch("mul_per_batch", x, v);
  auto out = make_node("mul_per_batch", x.shape(), {&x, &v});
  const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
  const auto& xv = x.values();
  const auto& vv = v.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t i = (b * T + t) * d + j;
        out->value[i] = xv[i] * vv[b * d + j];
      }
  if (out->requires_grad) {
    out->backward = [B, T, d](Node& self) {
      const auto& xv = value_of(self, 0);
      const auto& vv = value_of(self, 1);
      if (wants(self, 0)) {
        auto& g = grad_of(self, 0);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < d; ++j) {
              const std::size_t i = (b * T + t) * d + j;
              g[i] += self.grad[i] * vv[b * d + j];
            }
      }
      if (wants(self, 1)) {
        auto& g = grad_of(self, 1);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < d; ++j) {
              const std::size_t i = (b * T + t) * d + j;
              g[b * d + j] += self.grad[i] * xv[i];
            }
      }
    };
  }
  return Tensor(out);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2, "lhs");
  require_rank("matmul", b, 2, "rhs");
  if (a.dim(1) != b.dim(0)) {
    shape_error("matmul", "inner extents differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = make_node("matmul", {m, n}, {&a, &b});
  kernels::gemm_nn(m, k, n, a.values().data(), b.values().data(), out->value.data(), false);
  if (out->requires_grad) {
    out->backward = [m, k, n](Node& self) {
      if (wants(self, 0)) kernels::gemm_nt(m, n, k, self.grad.data(), value_of(self, 1).data(), grad_of(self, 0).data(), true);
      if (wants(self, 1)) kernels::gemm_tn(k, m, n, value_of(self, 0).data(), self.grad.data(), grad_of(self, 1).data(), true);
    };
  }
  return Tensor(out);
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_rank("bmm", a, 3, "lhs");
  require_rank("bmm", b, 3, "rhs");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    shape_error("bmm", "incompatible " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t G = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  auto out = make_node("bmm", {G, m, n}, {&a, &b});
  for (std::size_t g = 0; g < G; ++g)
    kernels::gemm_nn(m, k, n, a.values().data() + g * m * k, b.values().data() + g * k * n,
                     out->value.data() + g * m * n, false);
  if (out->requires_grad) {
    out->backward = [G, m, k, n](Node& self) {
      for (std::size_t g = 0; g < G; ++g) {
        const Scalar* gy = self.grad.data() + g * m * n;
        if (wants(self, 0))
          kernels::gemm_nt(m, n, k, gy, value_of(self, 1).data() + g * k * n, grad_of(self, 0).data() + g * m * k, true);
        if (wants(self, 1))
          kernels::gemm_tn(k, m, n, value_of(self, 0).data() + g * m * k, gy, grad_of(self, 1).data() + g * k * n, true);
      }
    };
  }
  return Tensor(out);
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  require_rank("bmm_nt", a, 3, "lhs");
  require_rank("bmm_nt", b, 3, "rhs");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    shape_error("bmm_nt", "incompatible " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  }
  const std::size_t G = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  auto out = make_node("bmm_nt", {G, m, n}, {&a, &b});
  for (std::size_t g = 0; g < G; ++g)
    kernels::gemm_nt(m, k, n, a.values().data() + g * m * k, b.values().data() + g * n * k,
                     out->value.data() + g * m * n, false);
  if (out->requires_grad) {
    out->backward = [G, m, k, n](Node& self) {
      for (std::size_t g = 0; g < G; ++g) {
        const Scalar* gy = self.grad.data() + g * m * n;
        if (wants(self, 0))
          kernels::gemm_nn(m, n, k, gy, value_of(self, 1).data() + g * n * k, grad_of(self, 0).data() + g * m * k, true);
        if (wants(self, 1))
          kernels::gemm_tn(n, m, k, gy, value_of(self, 0).data() + g * m * k, grad_of(self, 1).data() + g * n * k, true);
      }
    };
  }
  return Tensor(out);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank("linear", w, 2, "weight");
  if (x.rank() == 0 || x.shape().back() != w.dim(0)) {
    shape_error("linear", "input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()));
  }
  const std::size_t in = w.dim(0), outd = w.dim(1);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != outd)) {
    shape_error("linear", "bias " + shape_string(b.shape()) + " vs weight " + shape_string(w.shape()));
  }
  const std::size_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = outd;
  NodePtr out = b.defined() ? make_node("linear", shape, {&x, &w, &b}) : make_node("linear", shape, {&x, &w});
  if (b.defined()) {
    const auto& bv = b.values();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out->value.begin() + r * outd);
  }
  kernels::gemm_nn(rows, in, outd, x.values().data(), w.values().data(), out->value.data(), b.defined());
  if (out->requires_grad) {
    const bool has_bias = b.defined();
    out->backward = [rows, in, outd, has_bias](Node& self) {
      if (wants(self, 0))
        kernels::gemm_nt(rows, outd, in, self.grad.data(), value_of(self, 1).data(), grad_of(self, 0).data(), true);
      if (wants(self, 1))
        kernels::gemm_tn(in, rows, outd, value_of(self, 0).data(), self.grad.data(), grad_of(self, 1).data(), true);
      if (has_bias && wants(self, 2)) {
        auto& g = grad_of(self, 2);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < outd; ++j) g[j] += self.grad[r * outd + j];
      }
    };
  }
  return Tensor(out);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    shape_error("reshape", "cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  auto out = make_node("reshape", std::move(shape), {&x});
  std::copy(x.values().begin(), x.values().end(), out->value.begin());
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

namespace {

// Maps each output flat index to its source flat index for a permutation.
std::vector<std::size_t> permutation_map(const Shape& in, const std::vector<std::size_t>& order) {
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = in[order[i]];
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_stride[order[i]];
    map[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(r);
  std::iota(iota.begin(), iota.end(), 0);
  if (sorted != iota) shape_error("permute", "invalid axis order for " + shape_string(x.shape()));
  Shape shape(r);
  for (std::size_t i = 0; i < r; ++i) shape[i] = x.dim(order[i]);
  auto out = make_node("permute", shape, {&x});
  auto map = std::make_shared<std::vector<std::size_t>>(permutation_map(x.shape(), order));
  const auto& xv = x.values();
  for (std::size_t i = 0; i < map->size(); ++i) out->value[i] = xv[(*map)[i]];
  if (out->requires_grad) {
    out->backward = [map](Node& self) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < map->size(); ++i) g[(*map)[i]] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor transpose(const Tensor& x, std::size_t i, std::size_t j) {
  if (i >= x.rank() || j >= x.rank()) shape_error("transpose", "axis out of range for " + shape_string(x.shape()));
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[i], order[j]);
  return permute(x, order);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) shape_error("concat", "axis out of range for " + shape_string(ref));
  Shape shape = ref;
  shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == ref.size();
    for (std::size_t i = 0; ok && i < ref.size(); ++i) ok = i == axis || p.dim(i) == ref[i];
    if (!ok) shape_error("concat", "shape mismatch " + shape_string(p.shape()) + " vs " + shape_string(ref));
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];

  auto out = std::make_shared<Node>();
  out->op = "concat";
  out->value.assign(shape_numel(shape), Scalar(0));
  out->shape = shape;
  if (grad_enabled())
    for (const auto& p : parts) out->requires_grad = out->requires_grad || p.requires_grad();
  if (out->requires_grad)
    for (const auto& p : parts) out->inputs.push_back(p.node_ptr());

  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t row = shape[axis] * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& pv = parts[k].values();
      std::copy_n(pv.begin() + o * widths[k], widths[k], out->value.begin() + o * row + offset);
      offset += widths[k];
    }
  }
  if (out->requires_grad) {
    out->backward = [widths, outer, row](Node& self) {
      for (std::size_t o = 0; o < outer; ++o) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (wants(self, k)) {
            auto& g = grad_of(self, k);
            for (std::size_t i = 0; i < widths[k]; ++i) g[o * widths[k] + i] += self.grad[o * row + offset + i];
          }
          offset += widths[k];
        }
      }
    };
  }
  return Tensor(out);
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t len) {
  const std::size_t d = last_dim(x);
  if (x.rank() == 0 || start + len > d) {
    shape_error("slice_last", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                  ") exceeds " + shape_string(x.shape()));
  }
  Shape shape = x.shape();
  shape.back() = len;
  auto out = make_node("slice_last", shape, {&x});
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.begin() + r * d + start, len, out->value.begin() + r * len);
  if (out->requires_grad) {
    out->backward = [rows, d, start, len](Node& self) {
      auto& g = grad_of(self, 0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j) g[r * d + start + j] += self.grad[r * len + j];
    };
  }
  return Tensor(out);
}

namespace {

void softmax_row(const Scalar* x, Scalar* y, std::size_t n) {
  if (n == 0) return;
  const Scalar mx = *std::max_element(x, x + n);
  double total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    total += y[j];
  }
  const Scalar inv = static_cast<Scalar>(1.0 / total);
  for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
}

void softmax_row_backward(const Scalar* y, const Scalar* gy, Scalar* gx, std::size_t n) {
  double dot = 0;
  for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(gy[j]) * y[j];
  const auto d = static_cast<Scalar>(dot);
  for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - d);
}

}  // namespace

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) shape_error("softmax", "scalar input");
  const std::size_t d = last_dim(x);
  const std::size_t rows = x.numel() / d;
  auto out = make_node("softmax", x.shape(), {&x});
  for (std::size_t r = 0; r < rows; ++r) softmax_row(x.values().data() + r * d, out->value.data() + r * d, d);
  if (out->requires_grad) {
    out->backward = [rows, d](Node& self) {
      auto& g = grad_of(self, 0);
      for (std::size_t r = 0; r < rows; ++r)
        softmax_row_backward(self.value.data() + r * d, self.grad.data() + r * d, g.data() + r * d, d);
    };
  }
  return Tensor(out);
}

Tensor masked_softmax(const Tensor& x, std::span<const std::size_t> key_counts) {
  require_rank("masked_softmax", x, 3, "input");
  const std::size_t G = x.dim(0), q = x.dim(1), k = x.dim(2);
  if (key_counts.size() != G) {
    shape_error("masked_softmax", std::to_string(key_counts.size()) + " key counts for " + std::to_string(G) + " groups");
  }
  for (auto c : key_counts)
    if (c > k) shape_error("masked_softmax", "key count " + std::to_string(c) + " exceeds " + std::to_string(k));
  auto out = make_node("masked_softmax", x.shape(), {&x});
  std::vector<std::size_t> counts(key_counts.begin(), key_counts.end());
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t r = 0; r < q; ++r) {
      const std::size_t off = (g * q + r) * k;
      softmax_row(x.values().data() + off, out->value.data() + off, counts[g]);
    }
  if (out->requires_grad) {
    out->backward = [G, q, k, counts = std::move(counts)](Node& self) {
      auto& gx = grad_of(self, 0);
      for (std::size_t g = 0; g < G; ++g)
        for (std::size_t r = 0; r < q; ++r) {
          const std::size_t off = (g * q + r) * k;
          softmax_row_backward(self.value.data() + off, self.grad.data() + off, gx.data() + off, counts[g]);
        }
    };
  }
  return Tensor(out);
}

Tensor layer_norm(const Tensor& x, Scalar eps) {
  if (x.rank() == 0) shape_error("layer_norm", "scalar input");
  const std::size_t d = last_dim(x);
  const std::size_t rows = x.numel() / d;
  auto out = make_node("layer_norm", x.shape(), {&x});
  auto rstd = std::make_shared<std::vector<Scalar>>(rows);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = xv.data() + r * d;
    double mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = static_cast<Scalar>(inv);
    for (std::size_t j = 0; j < d; ++j) out->value[r * d + j] = static_cast<Scalar>((row[j] - mean) * inv);
  }
  if (out->requires_grad) {
    out->backward = [rows, d, rstd](Node& self) {
      auto& g = grad_of(self, 0);
      for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* y = self.value.data() + r * d;
        const Scalar* gy = self.grad.data() + r * d;
        double mg = 0, mgy = 0;
        for (std::size_t j = 0; j < d; ++j) {
          mg += gy[j];
          mgy += static_cast<double>(gy[j]) * y[j];
        }
        mg /= static_cast<double>(d);
        mgy /= static_cast<double>(d);
        const Scalar s = (*rstd)[r];
        for (std::size_t j = 0; j < d; ++j)
          g[r * d + j] += static_cast<Scalar>(s * (gy[j] - mg - y[j] * mgy));
      }
    };
  }
  return Tensor(out);
}

Tensor gelu(const Tensor& x) {
  constexpr Scalar kC = Scalar(0.7978845608028654);  // sqrt(2/pi)
  constexpr Scalar kA = Scalar(0.044715);
  auto out = make_node("gelu", x.shape(), {&x});
  const auto& xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const Scalar v = xv[i];
    out->value[i] = Scalar(0.5) * v * (Scalar(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      const auto& xv = value_of(self, 0);
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const Scalar v = xv[i];
        const Scalar th = std::tanh(kC * (v + kA * v * v * v));
        const Scalar dth = (Scalar(1) - th * th) * kC * (Scalar(1) + Scalar(3) * kA * v * v);
        g[i] += self.grad[i] * (Scalar(0.5) * (Scalar(1) + th) + Scalar(0.5) * v * dth);
      }
    };
  }
  return Tensor(out);
}

Tensor relu(const Tensor& x) {
  auto out = make_node("relu", x.shape(), {&x});
  const auto& xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = xv[i] > 0 ? xv[i] : Scalar(0);
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      const auto& xv = value_of(self, 0);
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < xv.size(); ++i)
        if (xv[i] > 0) g[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor embedding(const Tensor& table, std::span<const int> indices) {
  require_rank("embedding", table, 2, "table");
  const std::size_t V = table.dim(0), d = table.dim(1);
  for (int idx : indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= V) {
      throw ContractError("embedding: index " + std::to_string(idx) + " outside vocabulary of " + std::to_string(V));
    }
  }
  auto out = make_node("embedding", {indices.size(), d}, {&table});
  std::vector<int> idx(indices.begin(), indices.end());
  const auto& tv = table.values();
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(tv.begin() + static_cast<std::size_t>(idx[r]) * d, d, out->value.begin() + r * d);
  if (out->requires_grad) {
    out->backward = [idx = std::move(idx), d](Node& self) {
      auto& g = grad_of(self, 0);
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(idx[r]) * d + j] += self.grad[r * d + j];
    };
  }
  return Tensor(out);
}

Tensor sum(const Tensor& x) {
  auto out = make_node("sum", {1}, {&x});
  double total = 0;
  for (Scalar v : x.values()) total += v;
  out->value[0] = static_cast<Scalar>(total);
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      auto& g = grad_of(self, 0);
      for (auto& v : g) v += self.grad[0];
    };
  }
  return Tensor(out);
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.numel()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same("mse", a, b);
  if (a.numel() == 0) throw ContractError("mse: empty tensors");
  auto out = make_node("mse", {1}, {&a, &b});
  double total = 0;
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double diff = static_cast<double>(av[i]) - bv[i];
    total += diff * diff;
  }
  const double n = static_cast<double>(av.size());
  out->value[0] = static_cast<Scalar>(total / n);
  if (out->requires_grad) {
    out->backward = [n](Node& self) {
      const auto& av = value_of(self, 0);
      const auto& bv = value_of(self, 1);
      const Scalar k = static_cast<Scalar>(2.0 * self.grad[0] / n);
      if (wants(self, 0)) {
        auto& g = grad_of(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (av[i] - bv[i]);
      }
      if (wants(self, 1)) {
        auto& g = grad_of(self, 1);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * (av[i] - bv[i]);
      }
    };
  }
  return Tensor(out);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank("cross_entropy", logits, 2, "logits");
  const std::size_t n = logits.dim(0), C = logits.dim(1);
  if (targets.size() != n) {
    shape_error("cross_entropy", std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  }
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= C) throw ContractError("cross_entropy: target out of range");
  auto out = make_node("cross_entropy", {1}, {&logits});
  auto probs = std::make_shared<std::vector<Scalar>>(n * C);
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const Scalar* row = logits.values().data() + r * C;
    softmax_row(row, probs->data() + r * C, C);
    const Scalar mx = *std::max_element(row, row + C);
    double lse = 0;
    for (std::size_t j = 0; j < C; ++j) lse += std::exp(static_cast<double>(row[j] - mx));
    total += std::log(lse) + mx - row[targets[r]];
  }
  out->value[0] = static_cast<Scalar>(total / static_cast<double>(n));
  if (out->requires_grad) {
    std::vector<int> tg(targets.begin(), targets.end());
    out->backward = [probs, tg = std::move(tg), n, C](Node& self) {
      auto& g = grad_of(self, 0);
      const Scalar k = self.grad[0] / static_cast<Scalar>(n);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < C; ++j) {
          const Scalar onehot = static_cast<int>(j) == tg[r] ? Scalar(1) : Scalar(0);
          g[r * C + j] += k * ((*probs)[r * C + j] - onehot);
        }
    };
  }
  return Tensor(out);
}

}  // namespace ops
MF_NUMERIC_END
