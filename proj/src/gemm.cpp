#include "gemm.hpp"

#include <Eigen/Core>

namespace veil::detail {

namespace {
using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
}  // namespace

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const float* a,
          const float* b, float* c, bool accumulate) {
  Map cm(c, m, n);
  if (!accumulate) cm.setZero();
  ConstMap am(a, trans_a ? k : m, trans_a ? m : k);
  ConstMap bm(b, trans_b ? n : k, trans_b ? k : n);
  if (!trans_a && !trans_b) cm.noalias() += am * bm;
  else if (trans_a && !trans_b) cm.noalias() += am.transpose() * bm;
  else if (!trans_a && trans_b) cm.noalias() += am * bm.transpose();
  else cm.noalias() += am.transpose() * bm.transpose();
}

}  // namespace veil::detail
