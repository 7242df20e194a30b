#include "rlab/numcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rlab/errors.hpp"

namespace rlab::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

using detail::Node;

// Treats any rank >= 1 tensor as [prod(leading) x last].
struct RowView {
  std::size_t rows;
  std::size_t cols;
};

RowView row_view(const Shape& shape, const char* op) {
  if (shape.empty()) throw DimensionError(std::string(op) + ": scalar input has no rows");
  const std::size_t cols = shape.back();
  return {cols == 0 ? 0 : numel(shape) / cols, cols};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + to_string(t.shape()));
  }
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MatMap(out.data(), m, n).noalias() =
      ConstMatMap(a.data().data(), m, k) * ConstMatMap(b.data().data(), k, n);
  return make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    ConstMatMap g(self.grad.data(), m, n);
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      MatMap(pa.grad_buffer().data(), m, k).noalias() +=
          g * ConstMatMap(pb.data.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      MatMap(pb.grad_buffer().data(), k, n).noalias() +=
          ConstMatMap(pa.data.data(), m, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  MatMap(out.data(), n, m) = ConstMatMap(a.data().data(), m, n).transpose();
  return make_op("transpose", {n, m}, std::move(out), {a}, [m, n](Node& self) {
    MatMap(parent(self, 0).grad_buffer().data(), m, n) +=
        ConstMatMap(self.grad.data(), n, m).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_op("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      Node& pn = parent(self, p);
      if (!pn.requires_grad) continue;
      auto& g = pn.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_op("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return make_op("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) {
    throw DimensionError("scale_by: factor must be a scalar, got " + to_string(s.shape()));
  }
  const double f = s.item();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * f;
  return make_op("scale_by", a.shape(), std::move(out), {a, s}, [f](Node& self) {
    Node& pa = parent(self, 0);
    Node& ps = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * f;
    }
    if (ps.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < pa.data.size(); ++i) acc += self.grad[i] * pa.data[i];
      ps.grad_buffer()[0] += acc;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const auto [rows, cols] = row_view(x.shape(), "add_bias");
  if (bias.size() != cols) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " does not match " +
                         to_string(x.shape()));
  }
  std::vector<double> out(x.size());
  const auto xd = x.data();
  const auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xd[r * cols + c] + bd[c];
  }
  return make_op("add_bias", x.shape(), std::move(out), {x, bias},
                 [rows = rows, cols = cols](Node& self) {
                   Node& px = parent(self, 0);
                   Node& pb = parent(self, 1);
                   if (px.requires_grad) {
                     auto& g = px.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                   }
                   if (pb.requires_grad) {
                     auto& g = pb.grad_buffer();
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
                     }
                   }
                 });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.at(i));
  return make_op("exp", a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.data[i];
  });
}

Tensor gelu(const Tensor& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const std::size_t n = a.size();
  std::vector<double> out(n);
  std::vector<double> tanh_u(n);
  const auto x = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double u = kC * (x[i] + kA * x[i] * x[i] * x[i]);
    tanh_u[i] = std::tanh(u);
    out[i] = 0.5 * x[i] * (1.0 + tanh_u[i]);
  }
  return make_op("gelu", a.shape(), std::move(out), {a},
                 [t = std::move(tanh_u)](Node& self) {
                   Node& pa = parent(self, 0);
                   auto& g = pa.grad_buffer();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const double xi = pa.data[i];
                     const double du = kC * (1.0 + 3.0 * kA * xi * xi);
                     const double d = 0.5 * (1.0 + t[i]) + 0.5 * xi * (1.0 - t[i] * t[i]) * du;
                     g[i] += self.grad[i] * d;
                   }
                 });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_op("sum", {}, {acc}, {a}, [](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor softmax_rows(const Tensor& x) {
  const auto [rows, cols] = row_view(x.shape(), "softmax_rows");
  check_finite("softmax_rows input", x.data());
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    const double inv = 1.0 / z;
    for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
  }
  return make_op("softmax_rows", x.shape(), std::move(out), {x},
                 [rows = rows, cols = cols](Node& self) {
                   auto& g = parent(self, 0).grad_buffer();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* y = self.data.data() + r * cols;
                     const double* gy = self.grad.data() + r * cols;
                     double dot = 0.0;
                     for (std::size_t c = 0; c < cols; ++c) dot += y[c] * gy[c];
                     for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
                   }
                 });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_matrix(logits, "cross_entropy");
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(b) + " rows");
  }
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  const auto ld = logits.data();
  std::vector<double> probs(b * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = ld.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (probs[i * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss += -(row[labels[i]] - mx - std::log(z));
  }
  loss /= static_cast<double>(b);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_op("cross_entropy", {}, {loss}, {logits},
                 [b, c, p = std::move(probs), lab = std::move(lab)](Node& self) {
                   auto& g = parent(self, 0).grad_buffer();
                   const double s = self.grad[0] / static_cast<double>(b);
                   for (std::size_t i = 0; i < b; ++i) {
                     for (std::size_t j = 0; j < c; ++j) {
                       const double onehot = (static_cast<int>(j) == lab[i]) ? 1.0 : 0.0;
                       g[i * c + j] += s * (p[i * c + j] - onehot);
                     }
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto [rows, d] = row_view(x.shape(), "layer_norm");
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: last dimension " + std::to_string(d) + " vs gamma " +
                         to_string(gamma.shape()) + ", beta " + to_string(beta.shape()));
  }
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += in[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (in[c] - mu) * is;
      xhat[r * d + c] = h;
      out[r * d + c] = gd[c] * h + bd[c];
    }
  }
  return make_op(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [rows = rows, d = d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& px = parent(self, 0);
        Node& pg = parent(self, 1);
        Node& pb = parent(self, 2);
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gy = self.grad.data() + r * d;
          const double* h = xhat.data() + r * d;
          if (pg.requires_grad) {
            auto& gg = pg.grad_buffer();
            for (std::size_t c = 0; c < d; ++c) gg[c] += gy[c] * h[c];
          }
          if (pb.requires_grad) {
            auto& gb = pb.grad_buffer();
            for (std::size_t c = 0; c < d; ++c) gb[c] += gy[c];
          }
          if (px.requires_grad) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double gh = gy[c] * pg.data[c];
              s1 += gh;
              s2 += gh * h[c];
            }
            auto& gx = px.grad_buffer();
            for (std::size_t c = 0; c < d; ++c) {
              const double gh = gy[c] * pg.data[c];
              gx[r * d + c] += inv_std[r] * (gh - inv_d * s1 - h[c] * inv_d * s2);
            }
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_bias(matmul(x, weight), bias);
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + to_string(parts.front().shape()) +
                           " vs " + to_string(p.shape()));
    }
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op("concat_rows", {rows, cols}, std::move(out), std::move(parents),
                 [offsets = std::move(offsets)](Node& self) {
                   for (std::size_t p = 0; p < self.parents.size(); ++p) {
                     Node& pn = *self.parents[p];
                     if (!pn.requires_grad) continue;
                     auto& g = pn.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[p] + i];
                   }
                 });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  if (begin > end || end > x.rows()) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + to_string(x.shape()));
  }
  const std::size_t cols = x.cols();
  std::vector<double> out(x.data().begin() + begin * cols, x.data().begin() + end * cols);
  return make_op("slice_rows", {end - begin, cols}, std::move(out), {x},
                 [off = begin * cols](Node& self) {
                   auto& g = parent(self, 0).grad_buffer();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
                 });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  require_matrix(x, "gather_rows");
  const std::size_t cols = x.cols();
  const std::size_t src_rows = x.rows();
  std::vector<double> out(index.size() * cols);
  const auto xd = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= src_rows) {
      throw IndexError("gather_rows: row " + std::to_string(index[i]) + " outside " +
                       to_string(x.shape()));
    }
    std::copy_n(xd.data() + index[i] * cols, cols, out.data() + i * cols);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op("gather_rows", {index.size(), cols}, std::move(out), {x},
                 [cols, idx = std::move(idx)](Node& self) {
                   auto& g = parent(self, 0).grad_buffer();
                   for (std::size_t i = 0; i < idx.size(); ++i) {
                     double* dst = g.data() + idx[i] * cols;
                     const double* src = self.grad.data() + i * cols;
                     for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                   }
                 });
}

}  // namespace rlab::num
