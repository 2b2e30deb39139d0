#pragma once

// The iterative flow network: shared multi-scale encoder, context encoder,
// ball-query cross-frame correlation, pointwise GRU update, flow head, and
// the K-step residual refinement loop.
//
// Every stage is a free function templated on the scalar type so the same
// code runs in 64-bit (training, gradient checks) and 32-bit (inference).

#include <cstdint>
#include <string>
#include <vector>

#include "iterflow/autodiff.hpp"
#include "iterflow/geom.hpp"

namespace iterflow::model {

enum class CorrelationProduct { kElementwise, kInner };

struct IterFlowConfig {
  std::size_t feature_dim = 64;  // C
  std::size_t hidden_dim = 64;   // H
  std::size_t neighbors = 8;     // L
  double radius = 1.0;           // R, meters
  std::size_t iterations = 12;   // K

  std::vector<double> encoder_radii{2.0, 4.0};
  std::size_t encoder_neighbors = 8;
  std::size_t point_mlp_dim = 32;
  std::size_t set_abstraction_dim = 64;
  std::size_t correlation_dim = 64;
  std::size_t motion_dim = 64;      // MLP over [correlation, context]
  std::size_t flow_embed_dim = 32;  // MLP over the current flow

  CorrelationProduct product = CorrelationProduct::kElementwise;
  bool intermediate_supervision = false;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument on K < 1, L < 1, R <= 0 or zero widths.
  void validate() const;
  std::size_t gru_input_dim() const { return motion_dim + flow_embed_dim; }
};

template <typename T>
using Params = ad::BasicParamStore<T>;

// Deterministic initialization from cfg.seed; uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
ad::ParamStore init_params(const IterFlowConfig& cfg);
std::size_t parameter_count(const IterFlowConfig& cfg);

// Per-point encoding E = [coords | features]. The coordinate part is kept
// separately so warping only swaps `coords`.
template <typename T>
struct EncodedFrame {
  ad::BasicTensor<T> coords;    // N x 3
  ad::BasicTensor<T> features;  // N x C

  ad::BasicTensor<T> as_matrix() const;  // N x (3 + C)
};

// `prefix` selects the weight set: "enc" (shared frame encoder) or "ctx".
template <typename T>
EncodedFrame<T> encode(const geom::RadarFrame& frame, const Params<T>& params, const IterFlowConfig& cfg,
                       const std::string& prefix = "enc");

template <typename T>
ad::BasicTensor<T> correlate(const EncodedFrame<T>& warped, const EncodedFrame<T>& target, const Params<T>& params,
                             const IterFlowConfig& cfg);

template <typename T>
ad::BasicTensor<T> assemble_gru_input(const ad::BasicTensor<T>& correlation, const ad::BasicTensor<T>& context,
                                      const ad::BasicTensor<T>& flow, const Params<T>& params);

// Extremes of the gate activations, one entry per iteration.
struct GateTrace {
  std::vector<double> z_min, z_max, r_min, r_max, h_min, h_max;
};

template <typename T>
ad::BasicTensor<T> gru_step(const ad::BasicTensor<T>& hidden, const ad::BasicTensor<T>& input,
                            const Params<T>& params, GateTrace* trace = nullptr);

template <typename T>
ad::BasicTensor<T> flow_head(const ad::BasicTensor<T>& hidden, const Params<T>& params);

template <typename T>
ad::BasicTensor<T> initial_hidden(const ad::BasicTensor<T>& context, const Params<T>& params);

template <typename T>
struct ForwardResult {
  std::vector<ad::BasicTensor<T>> flows;      // F^1 .. F^K
  std::vector<ad::BasicTensor<T>> residuals;  // ΔF^1 .. ΔF^K
  const ad::BasicTensor<T>& final_flow() const { return flows.back(); }
};

// Runs K refinement steps from zero flow. Throws std::runtime_error naming
// the iteration when a non-finite value appears.
template <typename T>
ForwardResult<T> forward(const geom::RadarFrame& source, const geom::RadarFrame& target, const IterFlowConfig& cfg,
                         const Params<T>& params, GateTrace* trace = nullptr);

// Tensor <-> point cloud helpers.
template <typename T>
ad::BasicTensor<T> to_tensor(const geom::PointCloud& cloud);
template <typename T>
geom::PointCloud to_cloud(const ad::BasicTensor<T>& tensor);

}  // namespace iterflow::model
