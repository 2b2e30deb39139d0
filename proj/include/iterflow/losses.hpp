#pragma once

#include <cstdint>
#include <vector>

#include "iterflow/autodiff.hpp"
#include "iterflow/geom.hpp"
#include "iterflow/labeling.hpp"

namespace iterflow::losses {

// Chamfer loss restricted to same-instance pairs, squared distances.
// Instances lacking points on either side contribute nothing; the sum is
// averaged over contributing instances (0 when none).
ad::Tensor instance_chamfer(const ad::Tensor& warped_source, const geom::PointCloud& target,
                            const labeling::InstanceAssignment& assignment);

// Mean distance of each instance's flows to their instance mean, averaged
// over instances with at least one source point.
ad::Tensor instance_smoothness(const ad::Tensor& flow, const labeling::InstanceAssignment& assignment);

// Mean distance between predicted and ego rigid flow over the static set.
ad::Tensor rigid_static(const ad::Tensor& flow, const std::vector<std::int32_t>& static_set,
                        const geom::RigidTransform& ego, const geom::PointCloud& source);

struct LossBreakdown {
  double ic = 0.0;
  double is = 0.0;
  double stat = 0.0;
  double total = 0.0;
};

struct LossTerms {
  ad::Tensor ic;
  ad::Tensor is;
  ad::Tensor stat;
  ad::Tensor total;

  LossBreakdown values() const;
};

LossTerms total_loss(const ad::Tensor& flow, const geom::PointCloud& source, const geom::PointCloud& target,
                     const labeling::InstanceAssignment& assignment, const std::vector<std::int32_t>& static_set,
                     const geom::RigidTransform& ego);

}  // namespace iterflow::losses
