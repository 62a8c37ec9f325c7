#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "skelfuse/errors.hpp"
#include "skelfuse/ops.hpp"

namespace skelfuse::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

struct Dims {
  std::size_t r, c;
};

Dims dims(const Shape& s) {
  if (s.empty()) return {1, 1};
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw ShapeError("tensors of rank > 2 are not supported");
}

Dims dims(const Tensor& t) { return dims(t.shape()); }

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

enum class Bcast { Full, Row, Col, Scalar };

Bcast bcast_mode(const Tensor& x, Dims out, const char* op) {
  const Dims d = dims(x);
  if (d.r == out.r && d.c == out.c) return Bcast::Full;
  if (x.numel() == 1) return Bcast::Scalar;
  if (d.r == 1 && d.c == out.c) return Bcast::Row;
  if (d.c == 1 && d.r == out.r && x.rank() == 2) return Bcast::Col;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(x.shape()) + " to (" +
                   std::to_string(out.r) + ", " + std::to_string(out.c) + ")");
}

inline std::size_t bidx(Bcast mode, std::size_t r, std::size_t c, std::size_t cols) {
  switch (mode) {
    case Bcast::Full: return r * cols + c;
    case Bcast::Row: return c;
    case Bcast::Col: return r;
    case Bcast::Scalar: return 0;
  }
  return 0;
}

// f(x, y) with partials dfx(x, y, z), dfy(x, y, z) where z = f(x, y).
template <class F, class Dx, class Dy>
Tensor binary(const Tensor& a, const Tensor& b, F f, Dx dfx, Dy dfy, const char* op) {
  const Shape out_shape = a.numel() >= b.numel() ? a.shape() : b.shape();
  const Dims out = dims(out_shape);
  const Bcast ma = bcast_mode(a, out, op), mb = bcast_mode(b, out, op);
  std::vector<double> value(out.r * out.c);
  const auto av = a.data(), bv = b.data();
  for (std::size_t r = 0; r < out.r; ++r)
    for (std::size_t c = 0; c < out.c; ++c)
      value[r * out.c + c] = f(av[bidx(ma, r, c, out.c)], bv[bidx(mb, r, c, out.c)]);
  return make_result(
      out_shape, std::move(value), {a, b},
      [out, ma, mb, dfx, dfy](Node& self) {
        Node& A = parent(self, 0);
        Node& B = parent(self, 1);
        std::vector<double>* ga = A.requires_grad ? &A.ensure_grad() : nullptr;
        std::vector<double>* gb = B.requires_grad ? &B.ensure_grad() : nullptr;
        for (std::size_t r = 0; r < out.r; ++r)
          for (std::size_t c = 0; c < out.c; ++c) {
            const std::size_t k = r * out.c + c;
            const std::size_t ia = bidx(ma, r, c, out.c), ib = bidx(mb, r, c, out.c);
            const double x = A.value[ia], y = B.value[ib], z = self.value[k], g = self.grad[k];
            if (ga) (*ga)[ia] += g * dfx(x, y, z);
            if (gb) (*gb)[ib] += g * dfy(x, y, z);
          }
      },
      op);
}

// f(x) with derivative df(x, y) where y = f(x).
template <class F, class D>
Tensor unary(const Tensor& a, F f, D df, const char* op) {
  std::vector<double> value(a.numel());
  const auto av = a.data();
  for (std::size_t i = 0; i < value.size(); ++i) value[i] = f(av[i]);
  return make_result(
      a.shape(), std::move(value), {a},
      [df](Node& self) {
        Node& A = parent(self, 0);
        auto& ga = A.ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * df(A.value[i], self.value[i]);
      },
      op);
}

// Groups along an axis: axis 1 -> rows, axis 0 -> columns.
struct Groups {
  std::size_t count, length, group_stride, elem_stride;
  std::size_t at(std::size_t g, std::size_t i) const { return g * group_stride + i * elem_stride; }
};

Groups groups(const Tensor& a, int axis) {
  const Dims d = dims(a);
  if (axis == 1) return {d.r, d.c, d.c, 1};
  if (axis == 0) return {d.c, d.r, 1, d.c};
  throw ShapeError("axis must be 0 or 1");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Dims da = dims(a), db = dims(b);
  if (da.c != db.r)
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  std::vector<double> value(da.r * db.c);
  MutMap(value.data(), da.r, db.c).noalias() =
      ConstMap(a.data().data(), da.r, da.c) * ConstMap(b.data().data(), db.r, db.c);
  return make_result(
      {da.r, db.c}, std::move(value), {a, b},
      [da, db](Node& self) {
        Node& A = parent(self, 0);
        Node& B = parent(self, 1);
        const ConstMap g(self.grad.data(), da.r, db.c);
        if (A.requires_grad)
          MutMap(A.ensure_grad().data(), da.r, da.c).noalias() +=
              g * ConstMap(B.value.data(), db.r, db.c).transpose();
        if (B.requires_grad)
          MutMap(B.ensure_grad().data(), db.r, db.c).noalias() +=
              ConstMap(A.value.data(), da.r, da.c).transpose() * g;
      },
      "matmul");
}

Tensor transpose(const Tensor& a) {
  const Dims d = dims(a);
  std::vector<double> value(a.numel());
  MutMap(value.data(), d.c, d.r) = ConstMap(a.data().data(), d.r, d.c).transpose();
  return make_result(
      {d.c, d.r}, std::move(value), {a},
      [d](Node& self) {
        Node& A = parent(self, 0);
        MutMap(A.ensure_grad().data(), d.r, d.c) += ConstMap(self.grad.data(), d.c, d.r).transpose();
      },
      "transpose");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw ShapeError("reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  std::vector<double> value(a.data().begin(), a.data().end());
  return make_result(
      std::move(shape), std::move(value), {a},
      [](Node& self) {
        auto& ga = parent(self, 0).ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
      },
      "reshape");
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; }, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; }, "div");
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; }, "scale");
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; }, "add_scalar");
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; },
      "relu");
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; }, "log");
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; }, "clamp");
}

Tensor softmax(const Tensor& a, int axis) {
  const Groups g = groups(a, axis);
  std::vector<double> value(a.numel());
  const auto av = a.data();
  for (std::size_t k = 0; k < g.count; ++k) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < g.length; ++i) mx = std::max(mx, av[g.at(k, i)]);
    double total = 0.0;
    for (std::size_t i = 0; i < g.length; ++i) total += value[g.at(k, i)] = std::exp(av[g.at(k, i)] - mx);
    for (std::size_t i = 0; i < g.length; ++i) value[g.at(k, i)] /= total;
  }
  return make_result(
      a.shape(), std::move(value), {a},
      [g](Node& self) {
        auto& ga = parent(self, 0).ensure_grad();
        for (std::size_t k = 0; k < g.count; ++k) {
          double dot = 0.0;
          for (std::size_t i = 0; i < g.length; ++i) dot += self.grad[g.at(k, i)] * self.value[g.at(k, i)];
          for (std::size_t i = 0; i < g.length; ++i) {
            const std::size_t j = g.at(k, i);
            ga[j] += self.value[j] * (self.grad[j] - dot);
          }
        }
      },
      "softmax");
}

Tensor log_softmax(const Tensor& a, int axis) {
  const Groups g = groups(a, axis);
  std::vector<double> value(a.numel());
  const auto av = a.data();
  for (std::size_t k = 0; k < g.count; ++k) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < g.length; ++i) mx = std::max(mx, av[g.at(k, i)]);
    double total = 0.0;
    for (std::size_t i = 0; i < g.length; ++i) total += std::exp(av[g.at(k, i)] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t i = 0; i < g.length; ++i) value[g.at(k, i)] = av[g.at(k, i)] - lse;
  }
  return make_result(
      a.shape(), std::move(value), {a},
      [g](Node& self) {
        auto& ga = parent(self, 0).ensure_grad();
        for (std::size_t k = 0; k < g.count; ++k) {
          double total = 0.0;
          for (std::size_t i = 0; i < g.length; ++i) total += self.grad[g.at(k, i)];
          for (std::size_t i = 0; i < g.length; ++i) {
            const std::size_t j = g.at(k, i);
            ga[j] += self.grad[j] - std::exp(self.value[j]) * total;
          }
        }
      },
      "log_softmax");
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result(
      {}, {total}, {a},
      [](Node& self) {
        for (double& v : parent(self, 0).ensure_grad()) v += self.grad[0];
      },
      "sum");
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum(const Tensor& a, int axis) {
  const Groups g = groups(a, axis);
  const Dims d = dims(a);
  std::vector<double> value(g.count, 0.0);
  const auto av = a.data();
  for (std::size_t k = 0; k < g.count; ++k)
    for (std::size_t i = 0; i < g.length; ++i) value[k] += av[g.at(k, i)];
  Shape shape = axis == 1 ? Shape{d.r, 1} : Shape{1, d.c};
  return make_result(
      std::move(shape), std::move(value), {a},
      [g](Node& self) {
        auto& ga = parent(self, 0).ensure_grad();
        for (std::size_t k = 0; k < g.count; ++k)
          for (std::size_t i = 0; i < g.length; ++i) ga[g.at(k, i)] += self.grad[k];
      },
      "sum_axis");
}

Tensor mean(const Tensor& a, int axis) {
  const Groups g = groups(a, axis);
  if (g.length == 0) throw ShapeError("mean over an empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(g.length));
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of no tensors");
  if (axis != 0 && axis != 1) throw ShapeError("axis must be 0 or 1");
  std::vector<Dims> ds;
  for (const Tensor& t : parts) ds.push_back(dims(t));
  std::size_t rows = 0, cols = 0;
  if (axis == 0) {
    cols = ds[0].c;
    for (const Dims& d : ds) {
      if (d.c != cols) throw ShapeError("concat axis 0: column counts differ");
      rows += d.r;
    }
  } else {
    rows = ds[0].r;
    for (const Dims& d : ds) {
      if (d.r != rows) throw ShapeError("concat axis 1: row counts differ");
      cols += d.c;
    }
  }
  std::vector<double> value(rows * cols);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].data();
    if (axis == 0) {
      std::copy(src.begin(), src.end(), value.begin() + static_cast<std::ptrdiff_t>(offset * cols));
      offset += ds[p].r;
    } else {
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * ds[p].c), ds[p].c,
                    value.begin() + static_cast<std::ptrdiff_t>(r * cols + offset));
      offset += ds[p].c;
    }
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_result(
      {rows, cols}, std::move(value), std::move(parents),
      [ds, axis, cols](Node& self) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < ds.size(); ++p) {
          Node& P = parent(self, p);
          if (P.requires_grad) {
            auto& gp = P.ensure_grad();
            for (std::size_t r = 0; r < ds[p].r; ++r)
              for (std::size_t c = 0; c < ds[p].c; ++c)
                gp[r * ds[p].c + c] +=
                    axis == 0 ? self.grad[(off + r) * cols + c] : self.grad[r * cols + off + c];
          }
          off += axis == 0 ? ds[p].r : ds[p].c;
        }
      },
      "concat");
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  const Dims d = dims(a);
  if (begin > end || end > d.r) throw ShapeError("slice_rows out of range");
  std::vector<double> value(a.data().begin() + static_cast<std::ptrdiff_t>(begin * d.c),
                            a.data().begin() + static_cast<std::ptrdiff_t>(end * d.c));
  return make_result(
      {end - begin, d.c}, std::move(value), {a},
      [d, begin](Node& self) {
        auto& ga = parent(self, 0).ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[begin * d.c + i] += self.grad[i];
      },
      "slice_rows");
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const Dims d = dims(a);
  if (begin > end || end > d.c) throw ShapeError("slice_cols out of range");
  const std::size_t w = end - begin;
  std::vector<double> value(d.r * w);
  const auto av = a.data();
  for (std::size_t r = 0; r < d.r; ++r)
    for (std::size_t c = 0; c < w; ++c) value[r * w + c] = av[r * d.c + begin + c];
  return make_result(
      {d.r, w}, std::move(value), {a},
      [d, begin, w](Node& self) {
        auto& ga = parent(self, 0).ensure_grad();
        for (std::size_t r = 0; r < d.r; ++r)
          for (std::size_t c = 0; c < w; ++c) ga[r * d.c + begin + c] += self.grad[r * w + c];
      },
      "slice_cols");
}

Tensor gather_rows(const Tensor& a, std::span<const int> index) {
  const Dims d = dims(a);
  std::vector<int> idx(index.begin(), index.end());
  std::vector<double> value(idx.size() * d.c);
  const auto av = a.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= d.r) throw ShapeError("gather_rows index out of range");
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(idx[i] * d.c), d.c,
                value.begin() + static_cast<std::ptrdiff_t>(i * d.c));
  }
  Shape shape{idx.size(), d.c};
  return make_result(
      std::move(shape), std::move(value), {a},
      [d, idx = std::move(idx)](Node& self) {
        auto& ga = parent(self, 0).ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t c = 0; c < d.c; ++c) ga[idx[i] * d.c + c] += self.grad[i * d.c + c];
      },
      "gather_rows");
}

Tensor scatter_add_rows(const Tensor& a, std::span<const int> index, std::size_t out_rows) {
  const Dims d = dims(a);
  if (index.size() != d.r) throw ShapeError("scatter_add_rows: index length differs from row count");
  std::vector<int> idx(index.begin(), index.end());
  std::vector<double> value(out_rows * d.c, 0.0);
  const auto av = a.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= out_rows)
      throw ShapeError("scatter_add_rows index out of range");
    for (std::size_t c = 0; c < d.c; ++c) value[idx[i] * d.c + c] += av[i * d.c + c];
  }
  return make_result(
      {out_rows, d.c}, std::move(value), {a},
      [d, idx = std::move(idx)](Node& self) {
        auto& ga = parent(self, 0).ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t c = 0; c < d.c; ++c) ga[i * d.c + c] += self.grad[idx[i] * d.c + c];
      },
      "scatter_add_rows");
}

Tensor take(const Tensor& a, std::span<const std::size_t> index) {
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> value(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.numel()) throw ShapeError("take index out of range");
    value[i] = a.data()[idx[i]];
  }
  Shape shape{idx.size()};
  return make_result(
      std::move(shape), std::move(value), {a},
      [idx = std::move(idx)](Node& self) {
        auto& ga = parent(self, 0).ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += self.grad[i];
      },
      "take");
}

Tensor layer_norm(const Tensor& a, double eps) {
  const Dims d = dims(a);
  std::vector<double> value(a.numel());
  std::vector<double> inv_std(d.r);
  const auto av = a.data();
  for (std::size_t r = 0; r < d.r; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d.c; ++c) mu += av[r * d.c + c];
    mu /= static_cast<double>(d.c);
    double var = 0.0;
    for (std::size_t c = 0; c < d.c; ++c) var += (av[r * d.c + c] - mu) * (av[r * d.c + c] - mu);
    var /= static_cast<double>(d.c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d.c; ++c) value[r * d.c + c] = (av[r * d.c + c] - mu) * inv_std[r];
  }
  return make_result(
      a.shape(), std::move(value), {a},
      [d, inv_std = std::move(inv_std)](Node& self) {
        auto& ga = parent(self, 0).ensure_grad();
        const double n = static_cast<double>(d.c);
        for (std::size_t r = 0; r < d.r; ++r) {
          double mg = 0.0, mgy = 0.0;
          for (std::size_t c = 0; c < d.c; ++c) {
            mg += self.grad[r * d.c + c];
            mgy += self.grad[r * d.c + c] * self.value[r * d.c + c];
          }
          mg /= n;
          mgy /= n;
          for (std::size_t c = 0; c < d.c; ++c) {
            const std::size_t k = r * d.c + c;
            ga[k] += inv_std[r] * (self.grad[k] - mg - self.value[k] * mgy);
          }
        }
      },
      "layer_norm");
}

Tensor l2_normalize(const Tensor& a, double eps) {
  const Dims d = dims(a);
  std::vector<double> value(a.numel());
  std::vector<double> norms(d.r);
  const auto av = a.data();
  for (std::size_t r = 0; r < d.r; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d.c; ++c) s += av[r * d.c + c] * av[r * d.c + c];
    norms[r] = std::sqrt(s + eps);
    for (std::size_t c = 0; c < d.c; ++c) value[r * d.c + c] = av[r * d.c + c] / norms[r];
  }
  return make_result(
      a.shape(), std::move(value), {a},
      [d, norms = std::move(norms)](Node& self) {
        auto& ga = parent(self, 0).ensure_grad();
        for (std::size_t r = 0; r < d.r; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < d.c; ++c) dot += self.grad[r * d.c + c] * self.value[r * d.c + c];
          for (std::size_t c = 0; c < d.c; ++c) {
            const std::size_t k = r * d.c + c;
            ga[k] += (self.grad[k] - self.value[k] * dot) / norms[r];
          }
        }
      },
      "l2_normalize");
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape())
    throw ShapeError("bce_with_logits: " + shape_string(logits.shape()) + " vs " +
                     shape_string(targets.shape()));
  std::vector<double> value(logits.numel());
  const auto x = logits.data(), t = targets.data();
  for (std::size_t i = 0; i < value.size(); ++i)
    value[i] = std::max(x[i], 0.0) - x[i] * t[i] + std::log1p(std::exp(-std::abs(x[i])));
  return make_result(
      logits.shape(), std::move(value), {logits, targets.detach()},
      [](Node& self) {
        Node& X = parent(self, 0);
        const Node& T = parent(self, 1);
        auto& gx = X.ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double v = X.value[i];
          const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
          gx[i] += self.grad[i] * (s - T.value[i]);
        }
      },
      "bce_with_logits");
}

}  // namespace skelfuse::ad

namespace skelfuse::ad {

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, const Tensor* bias,
                            std::vector<Tensor>* weights) {
  const Dims dq = dims(q), dk = dims(k), dv = dims(v);
  if (dk.c != dq.c || dv.c != dq.c || dv.r != dk.r)
    throw ShapeError("attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) + ", v " +
                     shape_string(v.shape()));
  if (heads < 1 || dq.c % heads != 0) throw ShapeError("attention: width not divisible by head count");
  const std::size_t n = dq.r, m = dk.r, dh = dq.c / heads;
  if (bias && (bias->rows() != n || bias->cols() != m || bias->rank() != 2))
    throw ShapeError("attention: bias shape " + shape_string(bias->shape()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const ConstMap Q(q.data().data(), n, dq.c), K(k.data().data(), m, dq.c), V(v.data().data(), m, dq.c);

  auto attn = std::make_shared<std::vector<RowMat>>(heads);
  std::vector<double> value(n * dq.c);
  MutMap out(value.data(), n, dq.c);
  for (int h = 0; h < heads; ++h) {
    RowMat& a = (*attn)[h];
    a.noalias() = scale * Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose();
    if (bias) a += ConstMap(bias->data().data(), n, m);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = a.row(i);
      const double mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
    }
    out.middleCols(h * dh, dh).noalias() = a * V.middleCols(h * dh, dh);
    if (weights) weights->push_back(Tensor::matrix(n, m, std::vector<double>(a.data(), a.data() + n * m)));
  }

  std::vector<Tensor> parents{q, k, v};
  if (bias) parents.push_back(*bias);
  return make_result(
      {n, dq.c}, std::move(value), std::move(parents),
      [attn, n, m, dh, heads, scale, has_bias = bias != nullptr](Node& self) {
        Node& Qn = parent(self, 0);
        Node& Kn = parent(self, 1);
        Node& Vn = parent(self, 2);
        const std::size_t D = dh * heads;
        const ConstMap G(self.grad.data(), n, D);
        const ConstMap Q(Qn.value.data(), n, D), K(Kn.value.data(), m, D), V(Vn.value.data(), m, D);
        RowMat ds(n, m);
        for (int h = 0; h < heads; ++h) {
          const RowMat& a = (*attn)[h];
          const auto g = G.middleCols(h * dh, dh);
          if (Vn.requires_grad) MutMap(Vn.ensure_grad().data(), m, D).middleCols(h * dh, dh).noalias() += a.transpose() * g;
          ds.noalias() = g * V.middleCols(h * dh, dh).transpose();
          for (std::size_t i = 0; i < n; ++i) {
            const double dot = ds.row(i).dot(a.row(i));
            ds.row(i) = (a.row(i).array() * (ds.row(i).array() - dot)).matrix();
          }
          if (has_bias) {
            Node& Bn = parent(self, 3);
            if (Bn.requires_grad) MutMap(Bn.ensure_grad().data(), n, m) += ds;
          }
          if (Qn.requires_grad)
            MutMap(Qn.ensure_grad().data(), n, D).middleCols(h * dh, dh).noalias() += scale * ds * K.middleCols(h * dh, dh);
          if (Kn.requires_grad)
            MutMap(Kn.ensure_grad().data(), m, D).middleCols(h * dh, dh).noalias() +=
                scale * ds.transpose() * Q.middleCols(h * dh, dh);
        }
      },
      "attention");
}

}  // namespace skelfuse::ad
