#include "contrastcat/numkernel/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "contrastcat/util/error.hpp"

namespace ccat::nk {

namespace {

void accumulate(Tape& t, Var target, const Matrix& g) {
  if (t.requires_grad(target)) t.grad_slot(target) += g;
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  return t.record(nk::matmul(t.value(a), t.value(b)), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(Var{self});
    if (t.requires_grad(a)) t.grad_slot(a) += matmul_nt(g, t.value(b));
    if (t.requires_grad(b)) t.grad_slot(b) += matmul_tn(t.value(a), g);
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  return t.record(nk::matmul_nt(t.value(a), t.value(b)), {a, b},
                  [a, b](Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(Var{self});
                    // out = a bᵀ: da = g b, db = gᵀ a
                    if (t.requires_grad(a)) t.grad_slot(a) += nk::matmul(g, t.value(b));
                    if (t.requires_grad(b)) t.grad_slot(b) += matmul_tn(g, t.value(a));
                  });
}

Var add(Tape& t, Var a, Var b) {
  return t.record(t.value(a) + t.value(b), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(Var{self});
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var add_row(Tape& t, Var m, Var row) {
  const Matrix& mv = t.value(m);
  const Matrix& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != mv.cols()) {
    throw ShapeError("add_row: cannot broadcast " + rv.shape_string() + " over " +
                     mv.shape_string());
  }
  Matrix out = mv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t c = 0; c < out.cols(); ++c) o[c] += rv(0, c);
  }
  return t.record(std::move(out), {m, row}, [m, row](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(Var{self});
    accumulate(t, m, g);
    if (t.requires_grad(row)) {
      Matrix& gr = t.grad_slot(row);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
    }
  });
}

Var hadamard(Tape& t, Var a, Var b) {
  return t.record(nk::hadamard(t.value(a), t.value(b)), {a, b},
                  [a, b](Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(Var{self});
                    if (t.requires_grad(a)) t.grad_slot(a) += nk::hadamard(g, t.value(b));
                    if (t.requires_grad(b)) t.grad_slot(b) += nk::hadamard(g, t.value(a));
                  });
}

Var scale(Tape& t, Var m, double s) {
  return t.record(t.value(m) * s, {m}, [m, s](Tape& t, std::size_t self) {
    accumulate(t, m, t.grad(Var{self}) * s);
  });
}

Var softmax_rows(Tape& t, Var m, double scale, std::span<const bool> key_mask) {
  Matrix p = nk::softmax_rows(t.value(m), scale, key_mask);
  return t.record(std::move(p), {m}, [m, scale](Tape& t, std::size_t self) {
    if (!t.requires_grad(m)) return;
    const Matrix& p = t.value(Var{self});
    const Matrix& g = t.grad(Var{self});
    Matrix& gm = t.grad_slot(m);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) dot += g(r, c) * p(r, c);
      for (std::size_t c = 0; c < p.cols(); ++c) gm(r, c) += scale * p(r, c) * (g(r, c) - dot);
    }
  });
}

Var layernorm(Tape& t, Var m, Var gain, Var bias, double eps) {
  const Matrix& x = t.value(m);
  Matrix y = nk::layernorm(x, t.value(gain), t.value(bias), eps);
  // Cache normalised rows and inverse std for the backward pass.
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  Matrix xhat(rows, cols);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) xhat(r, c) = (xr[c] - mean) * inv_std[r];
  }
  return t.record(std::move(y), {m, gain, bias},
                  [m, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(Var{self});
                    const Matrix& gv = t.value(gain);
                    const std::size_t rows = g.rows();
                    const std::size_t cols = g.cols();
                    if (t.requires_grad(gain) || t.requires_grad(bias)) {
                      Matrix dg(1, cols);
                      Matrix db(1, cols);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) {
                          dg(0, c) += g(r, c) * xhat(r, c);
                          db(0, c) += g(r, c);
                        }
                      accumulate(t, gain, dg);
                      accumulate(t, bias, db);
                    }
                    if (!t.requires_grad(m)) return;
                    Matrix& gm = t.grad_slot(m);
                    const double n = static_cast<double>(cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mean_d = 0.0;
                      double mean_dx = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double d = g(r, c) * gv(0, c);
                        mean_d += d;
                        mean_dx += d * xhat(r, c);
                      }
                      mean_d /= n;
                      mean_dx /= n;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double d = g(r, c) * gv(0, c);
                        gm(r, c) += inv_std[r] * (d - mean_d - xhat(r, c) * mean_dx);
                      }
                    }
                  });
}

Var gelu(Tape& t, Var m) {
  return t.record(nk::gelu(t.value(m)), {m}, [m](Tape& t, std::size_t self) {
    if (!t.requires_grad(m)) return;
    const Matrix& x = t.value(m);
    const Matrix& g = t.grad(Var{self});
    Matrix& gm = t.grad_slot(m);
    auto xs = x.data();
    auto gs = g.data();
    auto out = gm.data();
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] += gs[i] * gelu_derivative(xs[i]);
  });
}

Var sum(Tape& t, Var m) {
  Matrix out(1, 1, nk::sum(t.value(m)));
  return t.record(std::move(out), {m}, [m](Tape& t, std::size_t self) {
    if (!t.requires_grad(m)) return;
    const double g = t.grad(Var{self})(0, 0);
    for (double& v : t.grad_slot(m).data()) v += g;
  });
}

Var slice_cols(Tape& t, Var m, std::size_t first, std::size_t count) {
  const Matrix& x = t.value(m);
  if (first + count > x.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of range for " + x.shape_string());
  }
  Matrix out(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    std::copy_n(x.row(r).begin() + static_cast<std::ptrdiff_t>(first), count, out.row(r).begin());
  return t.record(std::move(out), {m}, [m, first, count](Tape& t, std::size_t self) {
    if (!t.requires_grad(m)) return;
    const Matrix& g = t.grad(Var{self});
    Matrix& gm = t.grad_slot(m);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) gm(r, first + c) += g(r, c);
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = t.value(parts[0]).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + t.value(parts[0]).shape_string() + " vs " +
                       t.value(p).shape_string());
    }
    cols += t.value(p).cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Matrix& v = t.value(p);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.row(r).begin(), v.row(r).end(),
                out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    offset += v.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  Tape::BackwardFn fn = [inputs](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(Var{self});
    std::size_t offset = 0;
    for (Var p : inputs) {
      const std::size_t w = t.value(p).cols();
      if (t.requires_grad(p)) {
        Matrix& gp = t.grad_slot(p);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, offset + c);
      }
      offset += w;
    }
  };
  // record() keeps the closure iff one of the listed inputs needs a gradient.
  auto needs = std::find_if(parts.begin(), parts.end(), [&](Var p) { return t.requires_grad(p); });
  if (needs == parts.end()) return t.record(std::move(out), {}, nullptr);
  return t.record(std::move(out), {*needs}, std::move(fn));
}

Var gather_rows(Tape& t, Var table, std::span<const std::size_t> rows) {
  const Matrix& tv = t.value(table);
  Matrix out(rows.size(), tv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= tv.rows()) {
      throw InputError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       tv.shape_string());
    }
    std::copy(tv.row(rows[i]).begin(), tv.row(rows[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return t.record(std::move(out), {table}, [table, idx = std::move(idx)](Tape& t, std::size_t self) {
    if (!t.requires_grad(table)) return;
    const Matrix& g = t.grad(Var{self});
    Matrix& gt = t.grad_slot(table);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < g.cols(); ++c) gt(idx[i], c) += g(i, c);
  });
}

Var take_rows(Tape& t, Var m, std::size_t count) {
  const Matrix& x = t.value(m);
  if (count > x.rows()) {
    throw ShapeError("take_rows: " + std::to_string(count) + " rows from " + x.shape_string());
  }
  Matrix out(count, x.cols());
  std::copy_n(x.data().begin(), count * x.cols(), out.data().begin());
  return t.record(std::move(out), {m}, [m](Tape& t, std::size_t self) {
    if (!t.requires_grad(m)) return;
    const Matrix& g = t.grad(Var{self});
    Matrix& gm = t.grad_slot(m);
    for (std::size_t i = 0; i < g.size(); ++i) gm.data()[i] += g.data()[i];
  });
}

Var pick(Tape& t, Var m, std::size_t r, std::size_t c) {
  const Matrix& x = t.value(m);
  if (r >= x.rows() || c >= x.cols()) {
    throw ShapeError("pick: (" + std::to_string(r) + ", " + std::to_string(c) +
                     ") out of range for " + x.shape_string());
  }
  return t.record(Matrix(1, 1, x(r, c)), {m}, [m, r, c](Tape& t, std::size_t self) {
    if (t.requires_grad(m)) t.grad_slot(m)(r, c) += t.grad(Var{self})(0, 0);
  });
}

Var softmax_row_vector(Tape& t, Var logits) {
  if (t.value(logits).rows() != 1) throw ShapeError("softmax_row_vector: expects a single row");
  return softmax_rows(t, logits, 1.0);
}

Var cross_entropy(Tape& t, Var logits, std::size_t label) {
  const Matrix& z = t.value(logits);
  if (z.rows() != 1 || label >= z.cols()) {
    throw ShapeError("cross_entropy: label " + std::to_string(label) + " invalid for logits " +
                     z.shape_string());
  }
  Matrix p = nk::softmax_rows(z, 1.0);
  const double loss = -std::log(std::max(p(0, label), std::numeric_limits<double>::min()));
  return t.record(Matrix(1, 1, loss), {logits},
                  [logits, label, p = std::move(p)](Tape& t, std::size_t self) {
                    if (!t.requires_grad(logits)) return;
                    const double g = t.grad(Var{self})(0, 0);
                    Matrix& gz = t.grad_slot(logits);
                    for (std::size_t c = 0; c < p.cols(); ++c)
                      gz(0, c) += g * (p(0, c) - (c == label ? 1.0 : 0.0));
                  });
}

}  // namespace ccat::nk
