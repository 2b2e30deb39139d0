#include "iterflow/losses.hpp"

#include <stdexcept>

#include "iterflow/model.hpp"

namespace iterflow::losses {

using ad::Index;
using ad::Shape;
using ad::Tensor;

namespace {

Tensor zero() { return Tensor::scalar(0.0); }

geom::PointCloud subset(const geom::PointCloud& cloud, const std::vector<Index>& rows) {
  geom::PointCloud out(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = cloud.row(rows[k]);
  return out;
}

Tensor rows_constant(const geom::PointCloud& cloud, const std::vector<Index>& rows) {
  std::vector<double> v(rows.size() * 3);
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t j = 0; j < 3; ++j) v[k * 3 + j] = cloud(rows[k], static_cast<Eigen::Index>(j));
  return Tensor::constant(Shape{rows.size(), 3}, std::move(v));
}

}  // namespace

Tensor instance_chamfer(const Tensor& warped_source, const geom::PointCloud& target,
                        const labeling::InstanceAssignment& assignment) {
  const geom::PointCloud warped = model::to_cloud(warped_source);
  // Every directional nearest-neighbor term becomes one weighted pair
  // (source row, target row); the selection is frozen at current values.
  std::vector<Index> src_rows, tgt_rows;
  std::vector<double> weights;
  std::size_t contributing = 0;
  for (std::size_t g = 0; g < assignment.num_instances; ++g) {
    const auto& s = assignment.source_sets[g];
    const auto& t = assignment.target_sets[g];
    if (s.empty() || t.empty()) continue;
    ++contributing;
    const auto s_cloud = subset(warped, s);
    const auto t_cloud = subset(target, t);
    for (std::size_t a = 0; a < s.size(); ++a) {
      const auto nn = geom::nearest_neighbor(s_cloud.row(static_cast<Eigen::Index>(a)).transpose(), t_cloud);
      src_rows.push_back(s[a]);
      tgt_rows.push_back(t[nn.index]);
      weights.push_back(1.0 / static_cast<double>(s.size()));
    }
    for (std::size_t b = 0; b < t.size(); ++b) {
      const auto nn = geom::nearest_neighbor(t_cloud.row(static_cast<Eigen::Index>(b)).transpose(), s_cloud);
      src_rows.push_back(s[nn.index]);
      tgt_rows.push_back(t[b]);
      weights.push_back(1.0 / static_cast<double>(t.size()));
    }
  }
  if (contributing == 0) return zero();
  const auto diff = ad::sub(ad::gather_rows(warped_source, std::span<const Index>(src_rows)),
                            rows_constant(target, tgt_rows));
  const auto sq = ad::sum_over_axis(ad::mul(diff, diff), 1);
  const std::size_t pairs = weights.size();
  const auto w = Tensor::constant(Shape{pairs}, std::move(weights));
  return ad::scale(ad::sum(ad::mul(sq, w)), 1.0 / static_cast<double>(contributing));
}

Tensor instance_smoothness(const Tensor& flow, const labeling::InstanceAssignment& assignment) {
  Tensor acc;
  std::size_t contributing = 0;
  for (std::size_t g = 0; g < assignment.num_instances; ++g) {
    const auto& s = assignment.source_sets[g];
    if (s.empty()) continue;
    ++contributing;
    const auto fg = ad::gather_rows(flow, std::span<const Index>(s));
    const auto spread = ad::l2_norm_rows(ad::sub(fg, ad::mean_over_axis(fg, 0)));
    const auto term = ad::mean_over_axis(spread, 0);
    acc = acc.defined() ? ad::add(acc, term) : term;
  }
  if (contributing == 0) return zero();
  return ad::scale(acc, 1.0 / static_cast<double>(contributing));
}

Tensor rigid_static(const Tensor& flow, const std::vector<std::int32_t>& static_set, const geom::RigidTransform& ego,
                    const geom::PointCloud& source) {
  if (static_set.empty()) return zero();
  if (static_cast<Eigen::Index>(flow.rows()) != source.rows())
    throw std::invalid_argument("rigid_static: flow and source frame differ in length");
  const geom::PointCloud rigid = geom::rigid_flow(ego, source);
  const auto residual = ad::sub(ad::gather_rows(flow, std::span<const Index>(static_set)), rows_constant(rigid, static_set));
  return ad::mean_over_axis(ad::l2_norm_rows(residual), 0);
}

LossBreakdown LossTerms::values() const {
  return {ic.item(), is.item(), stat.item(), total.item()};
}

LossTerms total_loss(const Tensor& flow, const geom::PointCloud& source, const geom::PointCloud& target,
                     const labeling::InstanceAssignment& assignment, const std::vector<std::int32_t>& static_set,
                     const geom::RigidTransform& ego) {
  if (static_cast<Eigen::Index>(flow.rows()) != source.rows())
    throw std::invalid_argument("total_loss: flow has " + std::to_string(flow.rows()) + " rows, source frame has " +
                                std::to_string(source.rows()));
  LossTerms terms;
  const Tensor warped = ad::add(model::to_tensor<double>(source), flow);
  terms.ic = instance_chamfer(warped, target, assignment);
  terms.is = instance_smoothness(flow, assignment);
  terms.stat = rigid_static(flow, static_set, ego, source);
  terms.total = ad::add(ad::add(terms.stat, terms.ic), terms.is);
  return terms;
}

}  // namespace iterflow::losses
