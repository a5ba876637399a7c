#include "tcts/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tcts::ad {

bool Graph::check_finite = true;

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t e : s) {
    if (e == 0) throw std::invalid_argument("tensor extent must be positive");
    n *= e;
  }
  return n;
}

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              shape_str(a) + " vs " + shape_str(b));
}

void require_finite(std::string_view op, const Tensor& t) {
  if (!Graph::check_finite) return;
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) + ": non-finite value produced");
    }
  }
}

// Row/col view of a rank-1 or rank-2 tensor: rank-1 of length n is treated
// as [1 x n] where a matrix is expected.
struct Mat {
  size_t r, c;
};

Mat as_mat(const Tensor& t, std::string_view op) {
  if (t.rank() == 1) return {1, t.shape()[0]};
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
  throw std::invalid_argument(std::string(op) + ": expected rank<=2, got " +
                              shape_str(t.shape()));
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_numel(shape_) != values_.size()) {
    throw std::invalid_argument("tensor: extents " + shape_str(shape_) +
                                " do not match value count " +
                                std::to_string(values_.size()));
  }
}

TensorPtr Tensor::zeros(Shape shape) {
  size_t n = shape_numel(shape);
  return std::make_shared<Tensor>(std::move(shape), std::vector<double>(n, 0.0));
}

TensorPtr Tensor::full(Shape shape, double v) {
  size_t n = shape_numel(shape);
  return std::make_shared<Tensor>(std::move(shape), std::vector<double>(n, v));
}

TensorPtr Tensor::from(Shape shape, std::vector<double> values) {
  return std::make_shared<Tensor>(std::move(shape), std::move(values));
}

TensorPtr Tensor::scalar(double v) { return from({1}, {v}); }

size_t Tensor::rows() const { return as_mat(*this, "rows").r; }
size_t Tensor::cols() const { return as_mat(*this, "cols").c; }

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item: tensor is not scalar-shaped, " +
                                shape_str(shape_));
  }
  return values_[0];
}

std::vector<double>& Tensor::grad() {
  if (!grad_) grad_.emplace(values_.size(), 0.0);
  return *grad_;
}

const std::vector<double>& Tensor::grad_view() const {
  if (!grad_) throw std::runtime_error("gradient missing");
  return *grad_;
}

std::vector<double> Tensor::grad_or_zeros() const {
  if (grad_) return *grad_;
  return std::vector<double>(values_.size(), 0.0);
}

TensorPtr Graph::record(TensorPtr out, std::function<void()> back) {
  nodes_.push_back(Node{out, std::move(back)});
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise & linear algebra
// ---------------------------------------------------------------------------

TensorPtr Graph::add(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape() != b->shape()) shape_error("add", a->shape(), b->shape());
  std::vector<double> v(a->size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a->values()[i] + b->values()[i];
  auto out = Tensor::from(a->shape(), std::move(v));
  require_finite("add", *out);
  return record(out, [a, b, out] {
    if (!out->has_grad()) return;
    const auto& g = out->grad_view();
    if (!a->is_const) {
      auto& ga = a->grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (!b->is_const) {
      auto& gb = b->grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

TensorPtr Graph::sub(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape() != b->shape()) shape_error("sub", a->shape(), b->shape());
  std::vector<double> v(a->size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a->values()[i] - b->values()[i];
  auto out = Tensor::from(a->shape(), std::move(v));
  require_finite("sub", *out);
  return record(out, [a, b, out] {
    if (!out->has_grad()) return;
    const auto& g = out->grad_view();
    if (!a->is_const) {
      auto& ga = a->grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (!b->is_const) {
      auto& gb = b->grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

TensorPtr Graph::mul(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape() != b->shape()) shape_error("mul", a->shape(), b->shape());
  std::vector<double> v(a->size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a->values()[i] * b->values()[i];
  auto out = Tensor::from(a->shape(), std::move(v));
  require_finite("mul", *out);
  return record(out, [a, b, out] {
    if (!out->has_grad()) return;
    const auto& g = out->grad_view();
    if (!a->is_const) {
      auto& ga = a->grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b->values()[i];
    }
    if (!b->is_const) {
      auto& gb = b->grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a->values()[i];
    }
  });
}

TensorPtr Graph::scale(const TensorPtr& a, double c) {
  std::vector<double> v(a->size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a->values()[i] * c;
  auto out = Tensor::from(a->shape(), std::move(v));
  require_finite("scale", *out);
  return record(out, [a, c, out] {
    if (!out->has_grad() || a->is_const) return;
    const auto& g = out->grad_view();
    auto& ga = a->grad();
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
}

TensorPtr Graph::matmul(const TensorPtr& a, const TensorPtr& b) {
  Mat ma = as_mat(*a, "matmul"), mb = as_mat(*b, "matmul");
  if (ma.c != mb.r) shape_error("matmul", a->shape(), b->shape());
  const size_t m = ma.r, k = ma.c, n = mb.c;
  std::vector<double> v(m * n, 0.0);
  const double* pa = a->values().data();
  const double* pb = b->values().data();
  for (size_t i = 0; i < m; ++i) {
    for (size_t p = 0; p < k; ++p) {
      double aip = pa[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = pb + p * n;
      double* vrow = v.data() + i * n;
      for (size_t j = 0; j < n; ++j) vrow[j] += aip * brow[j];
    }
  }
  Shape out_shape = (a->rank() == 1 && b->rank() == 2) ? Shape{n} : Shape{m, n};
  auto out = Tensor::from(std::move(out_shape), std::move(v));
  require_finite("matmul", *out);
  return record(out, [a, b, out, m, k, n] {
    if (!out->has_grad()) return;
    const auto& g = out->grad_view();
    if (!a->is_const) {
      auto& ga = a->grad();  // dA = dC * B^T
      const double* pb = b->values().data();
      for (size_t i = 0; i < m; ++i) {
        for (size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = g.data() + i * n;
          const double* brow = pb + p * n;
          for (size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          ga[i * k + p] += s;
        }
      }
    }
    if (!b->is_const) {
      auto& gb = b->grad();  // dB = A^T * dC
      const double* pa = a->values().data();
      for (size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (size_t p = 0; p < k; ++p) {
          double aip = pa[i * k + p];
          if (aip == 0.0) continue;
          double* gbrow = gb.data() + p * n;
          for (size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

TensorPtr Graph::add_rows(const TensorPtr& m, const TensorPtr& row) {
  Mat mm = as_mat(*m, "add_rows"), mr = as_mat(*row, "add_rows");
  if (mr.r != 1 || mr.c != mm.c) shape_error("add_rows", m->shape(), row->shape());
  std::vector<double> v(m->size());
  for (size_t i = 0; i < mm.r; ++i)
    for (size_t j = 0; j < mm.c; ++j)
      v[i * mm.c + j] = m->values()[i * mm.c + j] + row->values()[j];
  auto out = Tensor::from(m->shape(), std::move(v));
  require_finite("add_rows", *out);
  return record(out, [m, row, out, mm] {
    if (!out->has_grad()) return;
    const auto& g = out->grad_view();
    if (!m->is_const) {
      auto& gm = m->grad();
      for (size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
    }
    if (!row->is_const) {
      auto& gr = row->grad();
      for (size_t i = 0; i < mm.r; ++i)
        for (size_t j = 0; j < mm.c; ++j) gr[j] += g[i * mm.c + j];
    }
  });
}

#define TCTS_UNARY(NAME, FWD, BWD_EXPR)                                       \
  TensorPtr Graph::NAME(const TensorPtr& a) {                                 \
    std::vector<double> v(a->size());                                         \
    for (size_t i = 0; i < v.size(); ++i) v[i] = FWD(a->values()[i]);         \
    auto out = Tensor::from(a->shape(), std::move(v));                        \
    require_finite(#NAME, *out);                                              \
    return record(out, [a, out] {                                             \
      if (!out->has_grad() || a->is_const) return;                            \
      const auto& g = out->grad_view();                                       \
      auto& ga = a->grad();                                                   \
      for (size_t i = 0; i < g.size(); ++i) {                                 \
        double x = a->values()[i];                                            \
        double y = out->values()[i];                                          \
        (void)x;                                                              \
        (void)y;                                                              \
        ga[i] += g[i] * (BWD_EXPR);                                           \
      }                                                                       \
    });                                                                       \
  }

TCTS_UNARY(tanh_, std::tanh, 1.0 - y * y)
TCTS_UNARY(sigmoid_, [](double t) { return 1.0 / (1.0 + std::exp(-t)); }, y * (1.0 - y))
TCTS_UNARY(relu_, [](double t) { return t > 0.0 ? t : 0.0; }, x > 0.0 ? 1.0 : 0.0)
TCTS_UNARY(exp_, std::exp, y)
TCTS_UNARY(log_, std::log, 1.0 / x)

#undef TCTS_UNARY

namespace {

// Stable per-row softmax into dst.
void softmax_row(const double* x, double* dst, size_t n, bool log_form) {
  double mx = x[0];
  for (size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (size_t i = 0; i < n; ++i) z += std::exp(x[i] - mx);
  if (log_form) {
    double lz = std::log(z);
    for (size_t i = 0; i < n; ++i) dst[i] = x[i] - mx - lz;
  } else {
    for (size_t i = 0; i < n; ++i) dst[i] = std::exp(x[i] - mx) / z;
  }
}

}  // namespace

TensorPtr Graph::softmax(const TensorPtr& a) {
  Mat m = as_mat(*a, "softmax");
  std::vector<double> v(a->size());
  for (size_t i = 0; i < m.r; ++i)
    softmax_row(a->values().data() + i * m.c, v.data() + i * m.c, m.c, false);
  auto out = Tensor::from(a->shape(), std::move(v));
  require_finite("softmax", *out);
  return record(out, [a, out, m] {
    if (!out->has_grad() || a->is_const) return;
    const auto& g = out->grad_view();
    auto& ga = a->grad();
    for (size_t i = 0; i < m.r; ++i) {
      const double* y = out->values().data() + i * m.c;
      const double* gr = g.data() + i * m.c;
      double dot = 0.0;
      for (size_t j = 0; j < m.c; ++j) dot += y[j] * gr[j];
      for (size_t j = 0; j < m.c; ++j) ga[i * m.c + j] += y[j] * (gr[j] - dot);
    }
  });
}

TensorPtr Graph::log_softmax(const TensorPtr& a) {
  Mat m = as_mat(*a, "log_softmax");
  std::vector<double> v(a->size());
  for (size_t i = 0; i < m.r; ++i)
    softmax_row(a->values().data() + i * m.c, v.data() + i * m.c, m.c, true);
  auto out = Tensor::from(a->shape(), std::move(v));
  require_finite("log_softmax", *out);
  return record(out, [a, out, m] {
    if (!out->has_grad() || a->is_const) return;
    const auto& g = out->grad_view();
    auto& ga = a->grad();
    for (size_t i = 0; i < m.r; ++i) {
      const double* ls = out->values().data() + i * m.c;
      const double* gr = g.data() + i * m.c;
      double gsum = 0.0;
      for (size_t j = 0; j < m.c; ++j) gsum += gr[j];
      for (size_t j = 0; j < m.c; ++j)
        ga[i * m.c + j] += gr[j] - std::exp(ls[j]) * gsum;
    }
  });
}

TensorPtr Graph::concat(const TensorPtr& a, const TensorPtr& b) {
  Mat ma = as_mat(*a, "concat"), mb = as_mat(*b, "concat");
  if (ma.r != 1 || mb.r != 1) {
    throw std::invalid_argument("concat: single-row operands required, got " +
                                shape_str(a->shape()) + " and " + shape_str(b->shape()));
  }
  std::vector<double> v;
  v.reserve(a->size() + b->size());
  v.insert(v.end(), a->values().begin(), a->values().end());
  v.insert(v.end(), b->values().begin(), b->values().end());
  Shape out_shape = (a->rank() == 2 || b->rank() == 2)
                        ? Shape{1, a->size() + b->size()}
                        : Shape{a->size() + b->size()};
  auto out = Tensor::from(std::move(out_shape), std::move(v));
  return record(out, [a, b, out] {
    if (!out->has_grad()) return;
    const auto& g = out->grad_view();
    if (!a->is_const) {
      auto& ga = a->grad();
      for (size_t i = 0; i < a->size(); ++i) ga[i] += g[i];
    }
    if (!b->is_const) {
      auto& gb = b->grad();
      for (size_t i = 0; i < b->size(); ++i) gb[i] += g[a->size() + i];
    }
  });
}

TensorPtr Graph::slice(const TensorPtr& a, size_t row0, size_t rows,
                       size_t col0, size_t cols) {
  Mat m = as_mat(*a, "slice");
  if (row0 + rows > m.r || col0 + cols > m.c || rows == 0 || cols == 0) {
    throw std::invalid_argument("slice: window out of range for " +
                                shape_str(a->shape()));
  }
  std::vector<double> v(rows * cols);
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j)
      v[i * cols + j] = a->values()[(row0 + i) * m.c + col0 + j];
  Shape out_shape = a->rank() == 1 ? Shape{cols} : Shape{rows, cols};
  auto out = Tensor::from(std::move(out_shape), std::move(v));
  return record(out, [a, out, m, row0, col0, rows, cols] {
    if (!out->has_grad() || a->is_const) return;
    const auto& g = out->grad_view();
    auto& ga = a->grad();
    for (size_t i = 0; i < rows; ++i)
      for (size_t j = 0; j < cols; ++j)
        ga[(row0 + i) * m.c + col0 + j] += g[i * cols + j];
  });
}

TensorPtr Graph::slice(const TensorPtr& a, size_t i0, size_t n) {
  if (a->rank() != 1) {
    throw std::invalid_argument("slice: rank-1 form on " + shape_str(a->shape()));
  }
  return slice(a, 0, 1, i0, n);
}

TensorPtr Graph::sum(const TensorPtr& a) {
  double s = 0.0;
  for (double v : a->values()) s += v;
  auto out = Tensor::scalar(s);
  require_finite("sum", *out);
  return record(out, [a, out] {
    if (!out->has_grad() || a->is_const) return;
    double g = out->grad_view()[0];
    auto& ga = a->grad();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

TensorPtr Graph::mean(const TensorPtr& a) {
  double s = 0.0;
  for (double v : a->values()) s += v;
  const double inv = 1.0 / static_cast<double>(a->size());
  auto out = Tensor::scalar(s * inv);
  require_finite("mean", *out);
  return record(out, [a, out, inv] {
    if (!out->has_grad() || a->is_const) return;
    double g = out->grad_view()[0] * inv;
    auto& ga = a->grad();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

TensorPtr Graph::stack_rows(const std::vector<TensorPtr>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty row list");
  size_t c = rows[0]->size();
  std::vector<double> v;
  v.reserve(rows.size() * c);
  for (const auto& r : rows) {
    Mat m = as_mat(*r, "stack_rows");
    if (m.r != 1 || m.c != c) shape_error("stack_rows", rows[0]->shape(), r->shape());
    v.insert(v.end(), r->values().begin(), r->values().end());
  }
  auto out = Tensor::from({rows.size(), c}, std::move(v));
  return record(out, [rows, out, c] {
    if (!out->has_grad()) return;
    const auto& g = out->grad_view();
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i]->is_const) continue;
      auto& gr = rows[i]->grad();
      for (size_t j = 0; j < c; ++j) gr[j] += g[i * c + j];
    }
  });
}

TensorPtr Graph::rows_select(const TensorPtr& table, const std::vector<size_t>& idx) {
  Mat m = as_mat(*table, "rows_select");
  if (idx.empty()) throw std::invalid_argument("rows_select: empty index list");
  for (size_t i : idx) {
    if (i >= m.r) {
      throw std::invalid_argument("rows_select: index " + std::to_string(i) +
                                  " out of range for " + shape_str(table->shape()));
    }
  }
  std::vector<double> v(idx.size() * m.c);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(table->values().data() + idx[i] * m.c, m.c, v.data() + i * m.c);
  auto out = Tensor::from({idx.size(), m.c}, std::move(v));
  return record(out, [table, out, idx, m] {
    if (!out->has_grad() || table->is_const) return;
    const auto& g = out->grad_view();
    auto& gt = table->grad();
    for (size_t i = 0; i < idx.size(); ++i)
      for (size_t j = 0; j < m.c; ++j) gt[idx[i] * m.c + j] += g[i * m.c + j];
  });
}

TensorPtr Graph::concat_flat(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_flat: no inputs");
  size_t total = 0;
  for (const auto& p : parts) total += p->size();
  std::vector<double> v;
  v.reserve(total);
  for (const auto& p : parts) v.insert(v.end(), p->values().begin(), p->values().end());
  auto out = Tensor::from({1, total}, std::move(v));
  return record(out, [parts, out] {
    if (!out->has_grad()) return;
    const auto& g = out->grad_view();
    size_t at = 0;
    for (const auto& p : parts) {
      if (!p->is_const) {
        auto& gp = p->grad();
        for (size_t i = 0; i < p->size(); ++i) gp[i] += g[at + i];
      }
      at += p->size();
    }
  });
}

// ---------------------------------------------------------------------------
// Fused cells
// ---------------------------------------------------------------------------

TensorPtr Graph::linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  Mat mx = as_mat(*x, "linear"), mw = as_mat(*w, "linear"), mb = as_mat(*b, "linear");
  if (mx.c != mw.r || mb.r != 1 || mb.c != mw.c) {
    throw std::invalid_argument("linear: shapes " + shape_str(x->shape()) + ", " +
                                shape_str(w->shape()) + ", " + shape_str(b->shape()) +
                                " do not conform");
  }
  const size_t n = mx.r, k = mx.c, o = mw.c;
  std::vector<double> v(n * o);
  for (size_t i = 0; i < n; ++i) {
    double* vr = v.data() + i * o;
    std::copy_n(b->values().data(), o, vr);
    const double* xr = x->values().data() + i * k;
    for (size_t p = 0; p < k; ++p) {
      double xv = xr[p];
      if (xv == 0.0) continue;
      const double* wr = w->values().data() + p * o;
      for (size_t j = 0; j < o; ++j) vr[j] += xv * wr[j];
    }
  }
  Shape out_shape = x->rank() == 1 ? Shape{o} : Shape{n, o};
  auto out = Tensor::from(std::move(out_shape), std::move(v));
  require_finite("linear", *out);
  return record(out, [x, w, b, out, n, k, o] {
    if (!out->has_grad()) return;
    const auto& g = out->grad_view();
    if (!x->is_const) {
      auto& gx = x->grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* gr = g.data() + i * o;
          const double* wr = w->values().data() + p * o;
          for (size_t j = 0; j < o; ++j) s += gr[j] * wr[j];
          gx[i * k + p] += s;
        }
    }
    if (!w->is_const) {
      auto& gw = w->grad();
      for (size_t i = 0; i < n; ++i) {
        const double* xr = x->values().data() + i * k;
        const double* gr = g.data() + i * o;
        for (size_t p = 0; p < k; ++p) {
          double xv = xr[p];
          if (xv == 0.0) continue;
          double* gwr = gw.data() + p * o;
          for (size_t j = 0; j < o; ++j) gwr[j] += xv * gr[j];
        }
      }
    }
    if (!b->is_const) {
      auto& gb = b->grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < o; ++j) gb[j] += g[i * o + j];
    }
  });
}

TensorPtr Graph::gru_cell(const TensorPtr& x, const TensorPtr& h,
                          const TensorPtr& wx, const TensorPtr& wh,
                          const TensorPtr& bx, const TensorPtr& bh) {
  Mat mx = as_mat(*x, "gru_cell"), mh = as_mat(*h, "gru_cell");
  Mat mwx = as_mat(*wx, "gru_cell"), mwh = as_mat(*wh, "gru_cell");
  const size_t n = mx.r, in = mx.c, hd = mh.c;
  if (mh.r != n || mwx.r != in || mwx.c != 3 * hd || mwh.r != hd ||
      mwh.c != 3 * hd || bx->size() != 3 * hd || bh->size() != 3 * hd) {
    throw std::invalid_argument(
        "gru_cell: shapes x" + shape_str(x->shape()) + " h" + shape_str(h->shape()) +
        " wx" + shape_str(wx->shape()) + " wh" + shape_str(wh->shape()) +
        " do not conform");
  }

  // Gate order in the packed 3H axis: reset | update | candidate.
  auto gates = std::make_shared<std::vector<double>>(n * 3 * hd);  // r,z,n values
  auto hn_pre = std::make_shared<std::vector<double>>(n * hd);     // h-side candidate preact
  std::vector<double> v(n * hd);

  thread_local std::vector<double> ax, ah;
  ax.assign(n * 3 * hd, 0.0);
  ah.assign(n * 3 * hd, 0.0);
  auto gemm = [](const double* A, const double* B, double* C, size_t N, size_t K,
                 size_t M, const double* bias) {
    for (size_t i = 0; i < N; ++i) {
      double* cr = C + i * M;
      std::copy_n(bias, M, cr);
      const double* ar = A + i * K;
      for (size_t p = 0; p < K; ++p) {
        double av = ar[p];
        if (av == 0.0) continue;
        const double* br = B + p * M;
        for (size_t j = 0; j < M; ++j) cr[j] += av * br[j];
      }
    }
  };
  gemm(x->values().data(), wx->values().data(), ax.data(), n, in, 3 * hd,
       bx->values().data());
  gemm(h->values().data(), wh->values().data(), ah.data(), n, hd, 3 * hd,
       bh->values().data());

  for (size_t i = 0; i < n; ++i) {
    const double* axr = ax.data() + i * 3 * hd;
    const double* ahr = ah.data() + i * 3 * hd;
    double* gr = gates->data() + i * 3 * hd;
    double* pre = hn_pre->data() + i * hd;
    const double* hr = h->values().data() + i * hd;
    double* vr = v.data() + i * hd;
    for (size_t j = 0; j < hd; ++j) {
      double r = 1.0 / (1.0 + std::exp(-(axr[j] + ahr[j])));
      double z = 1.0 / (1.0 + std::exp(-(axr[hd + j] + ahr[hd + j])));
      pre[j] = ahr[2 * hd + j];
      double nj = std::tanh(axr[2 * hd + j] + r * pre[j]);
      gr[j] = r;
      gr[hd + j] = z;
      gr[2 * hd + j] = nj;
      vr[j] = (1.0 - z) * nj + z * hr[j];
    }
  }

  Shape out_shape = x->rank() == 1 ? Shape{hd} : Shape{n, hd};
  auto out = Tensor::from(std::move(out_shape), std::move(v));
  require_finite("gru_cell", *out);
  return record(out, [x, h, wx, wh, bx, bh, out, gates, hn_pre, n, in, hd] {
    if (!out->has_grad()) return;
    const auto& g = out->grad_view();
    // Pre-activation gradients on the x side (da) and h side (db).
    thread_local std::vector<double> da, db;
    da.assign(n * 3 * hd, 0.0);
    db.assign(n * 3 * hd, 0.0);
    for (size_t i = 0; i < n; ++i) {
      const double* gr = gates->data() + i * 3 * hd;
      const double* pre = hn_pre->data() + i * hd;
      const double* hr = h->values().data() + i * hd;
      const double* go = g.data() + i * hd;
      double* dar = da.data() + i * 3 * hd;
      double* dbr = db.data() + i * 3 * hd;
      for (size_t j = 0; j < hd; ++j) {
        double r = gr[j], z = gr[hd + j], nj = gr[2 * hd + j];
        double dz = go[j] * (hr[j] - nj);
        double dn = go[j] * (1.0 - z);
        double dpre_n = dn * (1.0 - nj * nj);
        double dr = dpre_n * pre[j];
        double dpre_r = dr * r * (1.0 - r);
        double dpre_z = dz * z * (1.0 - z);
        dar[j] = dpre_r;
        dar[hd + j] = dpre_z;
        dar[2 * hd + j] = dpre_n;
        dbr[j] = dpre_r;
        dbr[hd + j] = dpre_z;
        dbr[2 * hd + j] = dpre_n * r;
      }
    }
    auto accum_gemm_at_b = [](const double* A, const double* D, double* G,
                              size_t N, size_t K, size_t M) {
      // G[K,M] += A^T[K,N] * D[N,M]
      for (size_t i = 0; i < N; ++i) {
        const double* ar = A + i * K;
        const double* dr = D + i * M;
        for (size_t p = 0; p < K; ++p) {
          double av = ar[p];
          if (av == 0.0) continue;
          double* gr = G + p * M;
          for (size_t j = 0; j < M; ++j) gr[j] += av * dr[j];
        }
      }
    };
    auto accum_gemm_at_a = [](const double* D, const double* B, double* G,
                              size_t N, size_t K, size_t M) {
      // G[N,K] += D[N,M] * B^T[M,K]
      for (size_t i = 0; i < N; ++i) {
        const double* dr = D + i * M;
        double* gr = G + i * K;
        for (size_t p = 0; p < K; ++p) {
          const double* br = B + p * M;
          double s = 0.0;
          for (size_t j = 0; j < M; ++j) s += dr[j] * br[j];
          gr[p] += s;
        }
      }
    };
    if (!x->is_const)
      accum_gemm_at_a(da.data(), wx->values().data(), x->grad().data(), n, in, 3 * hd);
    if (!wx->is_const)
      accum_gemm_at_b(x->values().data(), da.data(), wx->grad().data(), n, in, 3 * hd);
    if (!wh->is_const)
      accum_gemm_at_b(h->values().data(), db.data(), wh->grad().data(), n, hd, 3 * hd);
    if (!bx->is_const) {
      auto& gbx = bx->grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < 3 * hd; ++j) gbx[j] += da[i * 3 * hd + j];
    }
    if (!bh->is_const) {
      auto& gbh = bh->grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < 3 * hd; ++j) gbh[j] += db[i * 3 * hd + j];
    }
    if (!h->is_const) {
      auto& gh = h->grad();
      // through wh, plus the direct z*h path
      accum_gemm_at_a(db.data(), wh->values().data(), gh.data(), n, hd, 3 * hd);
      for (size_t i = 0; i < n; ++i) {
        const double* gr = gates->data() + i * 3 * hd;
        const double* go = g.data() + i * hd;
        for (size_t j = 0; j < hd; ++j) gh[i * hd + j] += go[j] * gr[hd + j];
      }
    }
  });
}

TensorPtr Graph::attn_prefix(const TensorPtr& q, const TensorPtr& kp,
                             const TensorPtr& vp, const TensorPtr& wq, size_t len,
                             std::vector<double>* alpha_out) {
  Mat mq = as_mat(*q, "attn_prefix"), mk = as_mat(*kp, "attn_prefix");
  Mat mv = as_mat(*vp, "attn_prefix"), mw = as_mat(*wq, "attn_prefix");
  const size_t d = mq.c, dv = mv.c;
  if (mq.r != 1 || mw.r != d || mk.c != mw.c || mk.r != mv.r || len == 0 ||
      len > mk.r) {
    throw std::invalid_argument(
        "attn_prefix: q" + shape_str(q->shape()) + " kp" + shape_str(kp->shape()) +
        " vp" + shape_str(vp->shape()) + " wq" + shape_str(wq->shape()) +
        " len " + std::to_string(len) + " do not conform");
  }
  const size_t dk = mw.c;

  // qp = q * wq
  auto qp = std::make_shared<std::vector<double>>(dk, 0.0);
  for (size_t p = 0; p < d; ++p) {
    double qv = q->values()[p];
    if (qv == 0.0) continue;
    const double* wr = wq->values().data() + p * dk;
    for (size_t j = 0; j < dk; ++j) (*qp)[j] += qv * wr[j];
  }
  // scores over the prefix, softmaxed
  auto alpha = std::make_shared<std::vector<double>>(len);
  {
    std::vector<double> s(len);
    for (size_t i = 0; i < len; ++i) {
      const double* kr = kp->values().data() + i * dk;
      double acc = 0.0;
      for (size_t j = 0; j < dk; ++j) acc += (*qp)[j] * kr[j];
      s[i] = acc;
    }
    softmax_row(s.data(), alpha->data(), len, false);
  }
  std::vector<double> v(dv, 0.0);
  for (size_t i = 0; i < len; ++i) {
    double a = (*alpha)[i];
    const double* vr = vp->values().data() + i * dv;
    for (size_t j = 0; j < dv; ++j) v[j] += a * vr[j];
  }
  if (alpha_out) {
    alpha_out->assign(mk.r, 0.0);  // positions past the prefix hold exact zeros
    std::copy_n(alpha->data(), len, alpha_out->data());
  }
  Shape out_shape = q->rank() == 1 ? Shape{dv} : Shape{1, dv};
  auto out = Tensor::from(std::move(out_shape), std::move(v));
  require_finite("attn_prefix", *out);
  return record(out, [q, kp, vp, wq, out, qp, alpha, len, d, dk, dv] {
    if (!out->has_grad()) return;
    const auto& g = out->grad_view();
    std::vector<double> dalpha(len);
    for (size_t i = 0; i < len; ++i) {
      const double* vr = vp->values().data() + i * dv;
      double s = 0.0;
      for (size_t j = 0; j < dv; ++j) s += g[j] * vr[j];
      dalpha[i] = s;
    }
    if (!vp->is_const) {
      auto& gv = vp->grad();
      for (size_t i = 0; i < len; ++i) {
        double a = (*alpha)[i];
        double* gvr = gv.data() + i * dv;
        for (size_t j = 0; j < dv; ++j) gvr[j] += a * g[j];
      }
    }
    // softmax jacobian
    double dot = 0.0;
    for (size_t i = 0; i < len; ++i) dot += (*alpha)[i] * dalpha[i];
    std::vector<double> ds(len);
    for (size_t i = 0; i < len; ++i) ds[i] = (*alpha)[i] * (dalpha[i] - dot);
    std::vector<double> dqp(dk, 0.0);
    for (size_t i = 0; i < len; ++i) {
      double dsi = ds[i];
      if (dsi == 0.0) continue;
      const double* kr = kp->values().data() + i * dk;
      for (size_t j = 0; j < dk; ++j) dqp[j] += dsi * kr[j];
    }
    if (!kp->is_const) {
      auto& gk = kp->grad();
      for (size_t i = 0; i < len; ++i) {
        double dsi = ds[i];
        if (dsi == 0.0) continue;
        double* gkr = gk.data() + i * dk;
        for (size_t j = 0; j < dk; ++j) gkr[j] += dsi * (*qp)[j];
      }
    }
    if (!q->is_const) {
      auto& gq = q->grad();
      for (size_t p = 0; p < d; ++p) {
        const double* wr = wq->values().data() + p * dk;
        double s = 0.0;
        for (size_t j = 0; j < dk; ++j) s += dqp[j] * wr[j];
        gq[p] += s;
      }
    }
    if (!wq->is_const) {
      auto& gw = wq->grad();
      for (size_t p = 0; p < d; ++p) {
        double qv = q->values()[p];
        if (qv == 0.0) continue;
        double* gwr = gw.data() + p * dk;
        for (size_t j = 0; j < dk; ++j) gwr[j] += qv * dqp[j];
      }
    }
  });
}

TensorPtr Graph::cross_entropy_sum(const TensorPtr& logits,
                                   const std::vector<size_t>& targets) {
  Mat m = as_mat(*logits, "cross_entropy_sum");
  if (targets.size() != m.r) {
    throw std::invalid_argument("cross_entropy_sum: " + std::to_string(targets.size()) +
                                " targets for " + shape_str(logits->shape()));
  }
  for (size_t t : targets) {
    if (t >= m.c) {
      throw std::invalid_argument("cross_entropy_sum: target " + std::to_string(t) +
                                  " out of range for " + shape_str(logits->shape()));
    }
  }
  auto probs = std::make_shared<std::vector<double>>(logits->size());
  double loss = 0.0;
  for (size_t i = 0; i < m.r; ++i) {
    const double* x = logits->values().data() + i * m.c;
    double* p = probs->data() + i * m.c;
    double mx = x[0];
    for (size_t j = 1; j < m.c; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (size_t j = 0; j < m.c; ++j) z += std::exp(x[j] - mx);
    double lz = std::log(z);
    for (size_t j = 0; j < m.c; ++j) p[j] = std::exp(x[j] - mx) / z;
    loss -= x[targets[i]] - mx - lz;
  }
  auto out = Tensor::scalar(loss);
  require_finite("cross_entropy_sum", *out);
  return record(out, [logits, out, probs, targets, m] {
    if (!out->has_grad() || logits->is_const) return;
    double g = out->grad_view()[0];
    auto& gl = logits->grad();
    for (size_t i = 0; i < m.r; ++i) {
      const double* p = probs->data() + i * m.c;
      double* gr = gl.data() + i * m.c;
      for (size_t j = 0; j < m.c; ++j) gr[j] += g * p[j];
      gr[targets[i]] -= g;
    }
  });
}

TensorPtr Graph::forward_op(std::string_view name, const std::vector<TensorPtr>& in) {
  auto want = [&](size_t n) {
    if (in.size() != n) {
      throw std::invalid_argument("forward_op " + std::string(name) + ": expected " +
                                  std::to_string(n) + " inputs, got " +
                                  std::to_string(in.size()));
    }
  };
  if (name == "matmul") { want(2); return matmul(in[0], in[1]); }
  if (name == "add") { want(2); return add(in[0], in[1]); }
  if (name == "sub") { want(2); return sub(in[0], in[1]); }
  if (name == "mul") { want(2); return mul(in[0], in[1]); }
  if (name == "tanh") { want(1); return tanh_(in[0]); }
  if (name == "sigmoid") { want(1); return sigmoid_(in[0]); }
  if (name == "relu") { want(1); return relu_(in[0]); }
  if (name == "exp") { want(1); return exp_(in[0]); }
  if (name == "log") { want(1); return log_(in[0]); }
  if (name == "softmax") { want(1); return softmax(in[0]); }
  if (name == "log_softmax") { want(1); return log_softmax(in[0]); }
  if (name == "concat") { want(2); return concat(in[0], in[1]); }
  if (name == "sum") { want(1); return sum(in[0]); }
  if (name == "mean") { want(1); return mean(in[0]); }
  throw std::invalid_argument("forward_op: unknown op '" + std::string(name) + "'");
}

void Graph::backward(const TensorPtr& root) {
  if (root->size() != 1) {
    throw std::invalid_argument("backward: root must be scalar-shaped, got " +
                                shape_str(root->shape()));
  }
  root->grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back();
}

double grad_global_norm(const std::vector<TensorPtr>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    const auto& g = p->grad_view();
    for (double v : g) sq += v * v;
  }
  return std::sqrt(sq);
}

SgdOptimizer::SgdOptimizer(std::vector<TensorPtr> params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
  for (const auto& p : params_) velocity_.emplace_back(p->size(), 0.0);
}

void SgdOptimizer::step(double lr, double clip_norm) {
  if (momentum_ == 0.0) {
    sgd_step(params_, lr, clip_norm);
    return;
  }
  for (const auto& p : params_) {
    if (!p->has_grad()) throw std::runtime_error("sgd step: parameter has no gradient");
  }
  double scale = 1.0;
  if (clip_norm > 0.0) {
    double norm = grad_global_norm(params_);
    if (norm > clip_norm) scale = clip_norm / norm;
  }
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    const auto& g = params_[pi]->grad_view();
    auto& v = velocity_[pi];
    auto& w = params_[pi]->values();
    for (size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum_ * v[i] + scale * g[i];
      w[i] -= lr * v[i];
    }
    params_[pi]->clear_grad();
  }
}

void sgd_step(const std::vector<TensorPtr>& params, double lr, double clip_norm) {
  for (const auto& p : params) {
    if (!p->has_grad()) {
      throw std::runtime_error("sgd_step: parameter has no gradient");
    }
  }
  double scale = 1.0;
  if (clip_norm > 0.0) {
    double norm = grad_global_norm(params);
    if (norm > clip_norm) scale = clip_norm / norm;
  }
  for (const auto& p : params) {
    const auto& g = p->grad_view();
    auto& v = p->values();
    for (size_t i = 0; i < v.size(); ++i) v[i] -= lr * scale * g[i];
    p->clear_grad();
  }
}

}  // namespace tcts::ad
