#include "rlab/vit/attention.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "rlab/errors.hpp"

namespace rlab::vit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct Geometry {
  std::size_t batch, length, heads, dim, dh;
  double scale;

  // Offset of head h's block of part p (0 = Q, 1 = K, 2 = V) in sequence b.
  std::size_t qkv_offset(std::size_t b, std::size_t part, std::size_t h) const {
    return b * length * 3 * dim + part * dim + h * dh;
  }
  std::size_t out_offset(std::size_t b, std::size_t h) const { return b * length * dim + h * dh; }
  std::size_t map_offset(std::size_t b, std::size_t h) const {
    return (b * heads + h) * length * length;
  }
};

}  // namespace

num::Tensor multi_head_attention(const num::Tensor& qkv, std::size_t batch, std::size_t length,
                                 std::size_t heads, const AttentionNoise* noise,
                                 AttentionRecord* record) {
  if (qkv.rank() != 2 || heads == 0 || qkv.cols() % (3 * heads) != 0 ||
      qkv.rows() != batch * length) {
    throw DimensionError("multi_head_attention: qkv " + num::to_string(qkv.shape()) +
                         " incompatible with batch " + std::to_string(batch) + ", length " +
                         std::to_string(length) + ", heads " + std::to_string(heads));
  }
  const std::size_t dim = qkv.cols() / 3;
  Geometry g{batch, length, heads, dim, dim / heads, 1.0 / std::sqrt(double(dim / heads))};
  const std::size_t L = length, dh = g.dh;
  const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(3 * dim));
  const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(dim));

  const std::size_t map_size = batch * heads * L * L;
  auto probs = std::make_shared<std::vector<double>>(map_size);
  std::vector<double> logits(map_size);
  const double* src = qkv.data().data();

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      ConstStrided q(src + g.qkv_offset(b, 0, h), L, dh, in_stride);
      ConstStrided k(src + g.qkv_offset(b, 1, h), L, dh, in_stride);
      MatMap s(logits.data() + g.map_offset(b, h), L, L);
      s.noalias() = (q * k.transpose()) * g.scale;
      MatMap a(probs->data() + g.map_offset(b, h), L, L);
      for (std::size_t i = 0; i < L; ++i) {
        const double mx = s.row(i).maxCoeff();
        double total = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          const double e = std::exp(s(i, j) - mx);
          a(i, j) = e;
          total += e;
        }
        a.row(i) /= total;
      }
    }
  }

  // The map actually applied to V; equals `probs` unless noise is active.
  std::shared_ptr<std::vector<double>> applied = probs;
  if (noise != nullptr && noise->sigma != 0.0) {
    if (noise->rng == nullptr) throw Error("multi_head_attention: noise without an RNG stream");
    applied = std::make_shared<std::vector<double>>(*probs);
    for (double& v : *applied) v += noise->sigma * noise->rng->normal();
  }

  std::vector<double> out(batch * L * dim);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      ConstMatMap a(applied->data() + g.map_offset(b, h), L, L);
      ConstStrided v(src + g.qkv_offset(b, 2, h), L, dh, in_stride);
      Strided o(out.data() + g.out_offset(b, h), L, dh, out_stride);
      o.noalias() = a * v;
    }
  }

  if (record != nullptr) {
    record->attn = num::Tensor({batch, heads, L, L}, *applied);
    record->logits = num::Tensor({batch, heads, L, L}, std::move(logits));
  }

  return num::make_op(
      "multi_head_attention", {batch * L, dim}, std::move(out), {qkv},
      [g, probs, applied](num::detail::Node& self) {
        const std::size_t L = g.length, dh = g.dh, dim = g.dim;
        const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(3 * dim));
        const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(dim));
        const double* x = self.parents[0]->data.data();
        double* dx = self.parents[0]->grad_buffer().data();
        RowMat d_applied(L, L), ds(L, L);
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t h = 0; h < g.heads; ++h) {
            ConstStrided q(x + g.qkv_offset(b, 0, h), L, dh, in_stride);
            ConstStrided k(x + g.qkv_offset(b, 1, h), L, dh, in_stride);
            ConstStrided v(x + g.qkv_offset(b, 2, h), L, dh, in_stride);
            ConstStrided d_out(self.grad.data() + g.out_offset(b, h), L, dh, out_stride);
            ConstMatMap a(probs->data() + g.map_offset(b, h), L, L);
            ConstMatMap a_used(applied->data() + g.map_offset(b, h), L, L);
            Strided dq(dx + g.qkv_offset(b, 0, h), L, dh, in_stride);
            Strided dk(dx + g.qkv_offset(b, 1, h), L, dh, in_stride);
            Strided dv(dx + g.qkv_offset(b, 2, h), L, dh, in_stride);

            d_applied.noalias() = d_out * v.transpose();
            dv.noalias() += a_used.transpose() * d_out;
            // Softmax Jacobian, row by row: dS = A (dA - <dA, A>).
            for (std::size_t i = 0; i < L; ++i) {
              const double inner = d_applied.row(i).dot(a.row(i));
              ds.row(i) = (a.row(i).array() * (d_applied.row(i).array() - inner)) * g.scale;
            }
            dq.noalias() += ds * k;
            dk.noalias() += ds.transpose() * q;
          }
        }
      });
}

}  // namespace rlab::vit
