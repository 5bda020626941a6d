#include "mblab/numerics/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "mblab/errors.hpp"

namespace mblab::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

ConstMatMap as_mat(const Tensor& t) { return ConstMatMap(t.ptr(), t.rows(), t.cols()); }
MatMap as_mat(Tensor& t) { return MatMap(t.ptr(), t.rows(), t.cols()); }

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("empty Var passed to primitive");
  return *a.tape();
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  double* d = dst.ptr();
  const double* s = src.ptr();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2("matmul", av);
  require_rank2("matmul", bv);
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  flops::add(2ULL * m * k * n);
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).record("matmul", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.needs_grad(Var(&t, ia))) as_mat(t.grad_ref(ia)).noalias() += as_mat(g) * as_mat(t.value(ib)).transpose();
    if (t.needs_grad(Var(&t, ib))) as_mat(t.grad_ref(ib)).noalias() += as_mat(t.value(ia)).transpose() * as_mat(g);
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_rank2("transpose", av);
  Tensor out({av.cols(), av.rows()});
  as_mat(out) = as_mat(av).transpose();
  const std::size_t ia = a.id();
  return tape_of(a).record("transpose", std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    as_mat(t.grad_ref(ia)) += as_mat(g).transpose();
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  accumulate(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).record("add", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.needs_grad(Var(&t, ia))) accumulate(t.grad_ref(ia), g);
    if (t.needs_grad(Var(&t, ib))) accumulate(t.grad_ref(ib), g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).record("sub", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.needs_grad(Var(&t, ia))) accumulate(t.grad_ref(ia), g);
    if (t.needs_grad(Var(&t, ib))) {
      Tensor& gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).record("mul", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (t.needs_grad(Var(&t, ia))) {
      Tensor& ga = t.grad_ref(ia);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(Var(&t, ib))) {
      Tensor& gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= s;
  const std::size_t ia = a.id();
  return tape_of(a).record("scale", std::move(out), {a}, [ia, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += s * g[i];
  });
}

Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.numel() != xv.cols()) {
    throw DimensionError("add_bias: bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
  }
  Tensor out = xv;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.ptr() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += bv[c];
  }
  const std::size_t ix = x.id(), ib = bias.id();
  return tape_of(x).record("add_bias", std::move(out), {x, bias}, [ix, ib, rows, cols](Tape& t, const Tensor& g) {
    if (t.needs_grad(Var(&t, ix))) accumulate(t.grad_ref(ix), g);
    if (t.needs_grad(Var(&t, ib))) {
      Tensor& gb = t.grad_ref(ib);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = g.ptr() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) gb[c] += row[c];
      }
    }
  });
}

Var linear(Var x, Var weight, Var bias) { return add_bias(matmul(x, weight), bias); }

Var softmax(Var a) {
  const Tensor& av = a.value();
  Tensor out = av;
  const std::size_t rows = av.rows(), cols = av.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.ptr() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (row[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) row[c] /= z;
  }
  const std::size_t ia = a.id();
  const std::size_t io = tape_of(a).size();  // id this node will receive
  return tape_of(a).record("softmax", std::move(out), {a}, [ia, io, rows, cols](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(io);
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.ptr() + r * cols;
      const double* gr = g.ptr() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
      double* o = ga.ptr() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) o[c] += yr[c] * (gr[c] - dot);
    }
  });
}

Var log_softmax(Var a) {
  const Tensor& av = a.value();
  Tensor out = av;
  const std::size_t rows = av.rows(), cols = av.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.ptr() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) row[c] -= lse;
  }
  const std::size_t ia = a.id();
  const std::size_t io = tape_of(a).size();
  return tape_of(a).record("log_softmax", std::move(out), {a}, [ia, io, rows, cols](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(io);
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.ptr() + r * cols;
      const double* gr = g.ptr() + r * cols;
      double gsum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gsum += gr[c];
      double* o = ga.ptr() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) o[c] += gr[c] - std::exp(yr[c]) * gsum;
    }
  });
}

Var layer_norm(Var x, double eps) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out = xv;
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.ptr() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) row[c] = (row[c] - mu) * is;
  }
  const std::size_t ix = x.id();
  const std::size_t io = tape_of(x).size();
  return tape_of(x).record("layer_norm", std::move(out), {x}, [ix, io, inv_std, rows, cols](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(io);
    Tensor& gx = t.grad_ref(ix);
    const double n = static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.ptr() + r * cols;
      const double* gr = g.ptr() + r * cols;
      double gsum = 0.0, gy = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        gsum += gr[c];
        gy += gr[c] * yr[c];
      }
      double* o = gx.ptr() + r * cols;
      const double is = (*inv_std)[r];
      for (std::size_t c = 0; c < cols; ++c) o[c] += is * (gr[c] - gsum / n - yr[c] * gy / n);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const std::size_t cols = x.value().cols();
  if (gamma.value().numel() != cols || beta.value().numel() != cols) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " vs input " + shape_str(x.shape()));
  }
  Var normed = layer_norm(x, eps);
  const Tensor& nv = normed.value();
  const std::size_t rows = nv.rows();
  Tensor out = nv;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.ptr() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] = row[c] * gamma.value()[c] + beta.value()[c];
  }
  const std::size_t in = normed.id(), ig = gamma.id(), ib = beta.id();
  return tape_of(x).record("layer_norm_affine", std::move(out), {normed, gamma, beta},
                           [in, ig, ib, rows, cols](Tape& t, const Tensor& g) {
                             const Tensor& nv = t.value(in);
                             const Tensor& gv = t.value(ig);
                             if (t.needs_grad(Var(&t, in))) {
                               Tensor& gn = t.grad_ref(in);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < cols; ++c) gn[r * cols + c] += g[r * cols + c] * gv[c];
                             }
                             if (t.needs_grad(Var(&t, ig))) {
                               Tensor& gg = t.grad_ref(ig);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * nv[r * cols + c];
                             }
                             if (t.needs_grad(Var(&t, ib))) {
                               Tensor& gb = t.grad_ref(ib);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                             }
                           });
}

Var gelu(Var a) {
  const Tensor& av = a.value();
  Tensor out = av;
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (auto& v : out.storage()) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  const std::size_t ia = a.id();
  return tape_of(a).record("gelu", std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad_ref(ia);
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double v = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      ga[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  require_rank2("embedding", tv);
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  const std::size_t d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside table " + shape_str(tv.shape()));
    }
    std::copy_n(tv.ptr() + ids[i] * d, d, out.ptr() + i * d);
  }
  const std::size_t it = table.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return tape_of(table).record("embedding", std::move(out), {table}, [it, idv, d](Tape& t, const Tensor& g) {
    Tensor& gt = t.grad_ref(it);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      double* dst = gt.ptr() + idv[i] * d;
      const double* src = g.ptr() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_rank2("concat", p.value());
  std::vector<std::size_t> ids;
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  const Tensor& first = parts.front().value();
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    const std::size_t other = axis == 0 ? v.cols() : v.rows();
    const std::size_t expect = axis == 0 ? first.cols() : first.rows();
    if (other != expect) {
      throw DimensionError("concat: incompatible " + shape_str(first.shape()) + " and " + shape_str(v.shape()));
    }
    ids.push_back(p.id());
    extents.push_back(axis == 0 ? v.rows() : v.cols());
    total += extents.back();
  }
  const std::size_t rows = axis == 0 ? total : first.rows();
  const std::size_t cols = axis == 0 ? first.cols() : total;
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    if (axis == 0) {
      std::copy(v.ptr(), v.ptr() + v.numel(), out.ptr() + off * cols);
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(v.ptr() + r * v.cols(), v.cols(), out.ptr() + r * cols + off);
      }
    }
    off += extents[k];
  }
  return tape_of(parts.front())
      .record("concat", std::move(out), parts, [ids, extents, axis, rows, cols](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.needs_grad(Var(&t, ids[k]))) {
            Tensor& gp = t.grad_ref(ids[k]);
            if (axis == 0) {
              const double* src = g.ptr() + off * cols;
              for (std::size_t i = 0; i < gp.numel(); ++i) gp[i] += src[i];
            } else {
              const std::size_t w = extents[k];
              for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * cols + off + c];
            }
          }
          off += extents[k];
        }
      });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_rank2("slice", av);
  const std::size_t extent = axis == 0 ? av.rows() : av.cols();
  if (axis > 1 || begin >= end || end > extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " of " + shape_str(av.shape()));
  }
  const std::size_t cols = av.cols();
  const std::size_t orows = axis == 0 ? end - begin : av.rows();
  const std::size_t ocols = axis == 0 ? cols : end - begin;
  Tensor out({orows, ocols});
  for (std::size_t r = 0; r < orows; ++r) {
    const std::size_t sr = axis == 0 ? r + begin : r;
    const std::size_t sc = axis == 0 ? 0 : begin;
    std::copy_n(av.ptr() + sr * cols + sc, ocols, out.ptr() + r * ocols);
  }
  const std::size_t ia = a.id();
  return tape_of(a).record("slice", std::move(out), {a},
                           [ia, axis, begin, cols, orows, ocols](Tape& t, const Tensor& g) {
                             Tensor& ga = t.grad_ref(ia);
                             for (std::size_t r = 0; r < orows; ++r) {
                               const std::size_t sr = axis == 0 ? r + begin : r;
                               const std::size_t sc = axis == 0 ? 0 : begin;
                               for (std::size_t c = 0; c < ocols; ++c) ga[sr * cols + sc + c] += g[r * ocols + c];
                             }
                           });
}

Var masked_fill(Var a, const std::vector<bool>& mask, double value) {
  const Tensor& av = a.value();
  if (mask.size() != av.numel()) {
    throw DimensionError("masked_fill: mask of " + std::to_string(mask.size()) + " entries vs " +
                         shape_str(av.shape()));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i)
    if (mask[i]) out[i] = value;
  const std::size_t ia = a.id();
  return tape_of(a).record("masked_fill", std::move(out), {a}, [ia, mask](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i)
      if (!mask[i]) ga[i] += g[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return tape_of(a).record("sum", Tensor::scalar(s), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(ia);
    for (auto& v : ga.storage()) v += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().numel());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += av[r * cols + c];
    out[r] = s;
  }
  const std::size_t ia = a.id();
  return tape_of(a).record("row_sum", std::move(out), {a}, [ia, rows, cols](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r];
  });
}

Var pick(Var a, std::span<const int> cols_idx) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  if (cols_idx.size() != rows) {
    throw DimensionError("pick: " + std::to_string(cols_idx.size()) + " indices for " + shape_str(av.shape()));
  }
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (cols_idx[r] < 0 || static_cast<std::size_t>(cols_idx[r]) >= cols) {
      throw DimensionError("pick: index " + std::to_string(cols_idx[r]) + " outside " + shape_str(av.shape()));
    }
    out[r] = av[r * cols + cols_idx[r]];
  }
  const std::size_t ia = a.id();
  std::vector<int> idx(cols_idx.begin(), cols_idx.end());
  return tape_of(a).record("pick", std::move(out), {a}, [ia, idx, cols](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) ga[r * cols + idx[r]] += g[r];
  });
}

Var segment_attention(Var q, Var k, Var v, const Segments& qs, const Segments& ks, std::size_t n_heads,
                      bool causal) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_rank2("attention", qv);
  require_rank2("attention", kv);
  require_rank2("attention", vv);
  const std::size_t d = qv.cols();
  if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows()) {
    throw DimensionError("attention: q " + shape_str(qv.shape()) + ", k " + shape_str(kv.shape()) + ", v " +
                         shape_str(vv.shape()));
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                         " heads");
  }
  if (qs.count() != ks.count() || qs.total() != qv.rows() || ks.total() != kv.rows()) {
    throw DimensionError("attention: segment tables do not match operand rows");
  }
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({qv.rows(), d}, 0.0);
  // Saved attention weights, one matrix per (segment, head).
  auto probs = std::make_shared<std::vector<RowMat>>(qs.count() * n_heads);
  for (std::size_t s = 0; s < qs.count(); ++s) {
    const std::size_t tq = qs.length(s), tk = ks.length(s);
    if (causal && tq != tk) throw DimensionError("attention: causal segments must have equal lengths");
    if (tq == 0 || tk == 0) continue;
    for (std::size_t h = 0; h < n_heads; ++h) {
      ConstStridedMap Q(qv.ptr() + qs.begin(s) * d + h * dh, tq, dh, Eigen::OuterStride<>(d));
      ConstStridedMap K(kv.ptr() + ks.begin(s) * d + h * dh, tk, dh, Eigen::OuterStride<>(d));
      ConstStridedMap V(vv.ptr() + ks.begin(s) * d + h * dh, tk, dh, Eigen::OuterStride<>(d));
      RowMat& P = (*probs)[s * n_heads + h];
      P.noalias() = (Q * K.transpose()) * inv_sqrt;
      for (std::size_t i = 0; i < tq; ++i) {
        const std::size_t visible = causal ? i + 1 : tk;
        double mx = P(i, 0);
        for (std::size_t j = 1; j < visible; ++j) mx = std::max(mx, P(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < visible; ++j) z += (P(i, j) = std::exp(P(i, j) - mx));
        for (std::size_t j = 0; j < visible; ++j) P(i, j) /= z;
        for (std::size_t j = visible; j < tk; ++j) P(i, j) = 0.0;
      }
      StridedMap O(out.ptr() + qs.begin(s) * d + h * dh, tq, dh, Eigen::OuterStride<>(d));
      O.noalias() = P * V;
    }
    flops::add(4ULL * tq * tk * d);
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return tape_of(q).record(
      "attention", std::move(out), {q, k, v}, [iq, ik, iv, qs, ks, n_heads, d, dh, inv_sqrt, probs](Tape& t, const Tensor& g) {
        const bool gq = t.needs_grad(Var(&t, iq));
        const bool gk = t.needs_grad(Var(&t, ik));
        const bool gv = t.needs_grad(Var(&t, iv));
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        const Tensor& vv = t.value(iv);
        Tensor* dq = gq ? &t.grad_ref(iq) : nullptr;
        Tensor* dk = gk ? &t.grad_ref(ik) : nullptr;
        Tensor* dv = gv ? &t.grad_ref(iv) : nullptr;
        RowMat dP, dS;
        for (std::size_t s = 0; s < qs.count(); ++s) {
          const std::size_t tq = qs.length(s), tk = ks.length(s);
          if (tq == 0 || tk == 0) continue;
          for (std::size_t h = 0; h < n_heads; ++h) {
            const RowMat& P = (*probs)[s * n_heads + h];
            ConstStridedMap G(g.ptr() + qs.begin(s) * d + h * dh, tq, dh, Eigen::OuterStride<>(d));
            ConstStridedMap Q(qv.ptr() + qs.begin(s) * d + h * dh, tq, dh, Eigen::OuterStride<>(d));
            ConstStridedMap K(kv.ptr() + ks.begin(s) * d + h * dh, tk, dh, Eigen::OuterStride<>(d));
            ConstStridedMap V(vv.ptr() + ks.begin(s) * d + h * dh, tk, dh, Eigen::OuterStride<>(d));
            if (gv) {
              StridedMap DV(dv->ptr() + ks.begin(s) * d + h * dh, tk, dh, Eigen::OuterStride<>(d));
              DV.noalias() += P.transpose() * G;
            }
            if (!gq && !gk) continue;
            dP.noalias() = G * V.transpose();
            dS.resize(tq, tk);
            for (std::size_t i = 0; i < tq; ++i) {
              double dot = 0.0;
              for (std::size_t j = 0; j < tk; ++j) dot += dP(i, j) * P(i, j);
              for (std::size_t j = 0; j < tk; ++j) dS(i, j) = P(i, j) * (dP(i, j) - dot) * inv_sqrt;
            }
            if (gq) {
              StridedMap DQ(dq->ptr() + qs.begin(s) * d + h * dh, tq, dh, Eigen::OuterStride<>(d));
              DQ.noalias() += dS * K;
            }
            if (gk) {
              StridedMap DK(dk->ptr() + ks.begin(s) * d + h * dh, tk, dh, Eigen::OuterStride<>(d));
              DK.noalias() += dS.transpose() * Q;
            }
          }
        }
      });
}

}  // namespace mblab::ops
