#include "iterflow/model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace iterflow::model {

using ad::Index;
using ad::Shape;

void IterFlowConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("IterFlowConfig: iterations (K) must be >= 1");
  if (neighbors < 1) throw std::invalid_argument("IterFlowConfig: neighbors (L) must be >= 1");
  if (!(radius > 0.0)) throw std::invalid_argument("IterFlowConfig: radius (R) must be positive");
  if (encoder_neighbors < 1) throw std::invalid_argument("IterFlowConfig: encoder_neighbors must be >= 1");
  for (double r : encoder_radii)
    if (!(r > 0.0)) throw std::invalid_argument("IterFlowConfig: encoder radii must be positive");
  if (feature_dim == 0 || hidden_dim == 0 || point_mlp_dim == 0 || set_abstraction_dim == 0 ||
      correlation_dim == 0 || motion_dim == 0 || flow_embed_dim == 0)
    throw std::invalid_argument("IterFlowConfig: layer widths must be positive");
}

namespace {

struct LayerSpec {
  std::string name;
  std::size_t in;
  std::size_t out;
};

std::vector<LayerSpec> encoder_layers(const IterFlowConfig& cfg, const std::string& prefix) {
  std::vector<LayerSpec> layers;
  const auto P = cfg.point_mlp_dim, S = cfg.set_abstraction_dim;
  layers.push_back({prefix + ".point0", 5, P});
  layers.push_back({prefix + ".point1", P, P});
  for (std::size_t s = 0; s < cfg.encoder_radii.size(); ++s) {
    layers.push_back({prefix + ".sa" + std::to_string(s) + ".0", P + 3, S});
    layers.push_back({prefix + ".sa" + std::to_string(s) + ".1", S, S});
  }
  layers.push_back({prefix + ".proj", P + cfg.encoder_radii.size() * S, cfg.feature_dim});
  return layers;
}

std::vector<LayerSpec> all_layers(const IterFlowConfig& cfg) {
  auto layers = encoder_layers(cfg, "enc");
  for (auto& l : encoder_layers(cfg, "ctx")) layers.push_back(l);
  const std::size_t C = cfg.feature_dim, H = cfg.hidden_dim, D = cfg.gru_input_dim();
  const std::size_t pair_in = (cfg.product == CorrelationProduct::kElementwise ? C : 1) + 3;
  layers.push_back({"init", C, H});
  layers.push_back({"corr.0", pair_in, cfg.correlation_dim});
  layers.push_back({"corr.1", cfg.correlation_dim, cfg.correlation_dim});
  layers.push_back({"motion", cfg.correlation_dim + C, cfg.motion_dim});
  layers.push_back({"flow_embed", 3, cfg.flow_embed_dim});
  layers.push_back({"gru.z", H + D, H});
  layers.push_back({"gru.r", H + D, H});
  layers.push_back({"gru.h", H + D, H});
  layers.push_back({"head.0", H, H});
  layers.push_back({"head.1", H, 3});
  return layers;
}

template <typename T>
ad::BasicTensor<T> linear(const ad::BasicTensor<T>& x, const Params<T>& params, const std::string& name) {
  return ad::add(ad::matmul(x, params.get(name + ".w")), params.get(name + ".b"));
}

template <typename T>
ad::BasicTensor<T> mlp_relu(const ad::BasicTensor<T>& x, const Params<T>& params, const std::string& name) {
  return ad::relu(linear(x, params, name));
}

template <typename T>
ad::BasicTensor<T> constant_from(const geom::PointCloud& cloud) {
  std::vector<T> v(static_cast<std::size_t>(cloud.size()));
  for (Eigen::Index i = 0; i < cloud.rows(); ++i)
    for (Eigen::Index j = 0; j < 3; ++j) v[static_cast<std::size_t>(i * 3 + j)] = static_cast<T>(cloud(i, j));
  return ad::BasicTensor<T>::constant(Shape{static_cast<std::size_t>(cloud.rows()), 3}, std::move(v));
}

struct GatherPlan {
  std::vector<Index> query_rows;
  std::vector<Index> neighbor_rows;
  std::vector<std::size_t> offsets;
};

GatherPlan plan_from(const geom::NeighborLists& nb) {
  GatherPlan plan;
  plan.offsets = nb.offsets;
  plan.neighbor_rows.assign(nb.indices.begin(), nb.indices.end());
  plan.query_rows.reserve(nb.indices.size());
  for (std::size_t q = 0; q < nb.queries(); ++q)
    for (std::size_t k = 0; k < nb.count(q); ++k) plan.query_rows.push_back(static_cast<Index>(q));
  return plan;
}

template <typename T>
void record_extremes(const ad::BasicTensor<T>& t, std::vector<double>& lo, std::vector<double>& hi) {
  double mn = std::numeric_limits<double>::infinity(), mx = -mn;
  for (auto v : t.data()) {
    mn = std::min(mn, static_cast<double>(v));
    mx = std::max(mx, static_cast<double>(v));
  }
  lo.push_back(mn);
  hi.push_back(mx);
}

}  // namespace

ad::ParamStore init_params(const IterFlowConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ad::ParamStore params;
  for (const auto& l : all_layers(cfg)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(l.in * l.out), b(l.out);
    for (auto& v : w) v = dist(rng);
    for (auto& v : b) v = dist(rng);
    params.add(l.name + ".w", Shape{l.in, l.out}, std::move(w));
    params.add(l.name + ".b", Shape{l.out}, std::move(b));
  }
  return params;
}

std::size_t parameter_count(const IterFlowConfig& cfg) {
  std::size_t n = 0;
  for (const auto& l : all_layers(cfg)) n += l.in * l.out + l.out;
  return n;
}

template <typename T>
ad::BasicTensor<T> EncodedFrame<T>::as_matrix() const {
  return ad::concat<T>({coords, features}, 1);
}

template <typename T>
ad::BasicTensor<T> to_tensor(const geom::PointCloud& cloud) {
  return constant_from<T>(cloud);
}

template <typename T>
geom::PointCloud to_cloud(const ad::BasicTensor<T>& tensor) {
  if (tensor.rank() != 2 || tensor.shape()[1] != 3)
    throw std::invalid_argument("to_cloud: expected an N x 3 tensor, got " + ad::shape_str(tensor.shape()));
  geom::PointCloud cloud(static_cast<Eigen::Index>(tensor.shape()[0]), 3);
  auto v = tensor.data();
  for (std::size_t i = 0; i < v.size(); ++i) cloud.data()[i] = static_cast<double>(v[i]);
  return cloud;
}

template <typename T>
EncodedFrame<T> encode(const geom::RadarFrame& frame, const Params<T>& params, const IterFlowConfig& cfg,
                       const std::string& prefix) {
  const std::size_t n = frame.size();
  const auto feats = frame.features();
  std::vector<T> raw(n * 5);
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<T>(feats.data()[i]);
  auto input = ad::BasicTensor<T>::constant(Shape{n, 5}, std::move(raw));
  auto coords = constant_from<T>(frame.positions);

  auto point = mlp_relu(mlp_relu(input, params, prefix + ".point0"), params, prefix + ".point1");
  std::vector<ad::BasicTensor<T>> scales{point};
  for (std::size_t s = 0; s < cfg.encoder_radii.size(); ++s) {
    const auto nb = geom::ball_query(frame.positions, frame.positions, cfg.encoder_radii[s], cfg.encoder_neighbors,
                                     {.exclude_self = true});
    const auto plan = plan_from(nb);
    auto offset = ad::sub(ad::gather_rows(coords, std::span<const Index>(plan.neighbor_rows)),
                          ad::gather_rows(coords, std::span<const Index>(plan.query_rows)));
    auto grouped = ad::concat<T>({ad::gather_rows(point, std::span<const Index>(plan.neighbor_rows)), offset}, 1);
    const std::string name = prefix + ".sa" + std::to_string(s);
    auto h = mlp_relu(mlp_relu(grouped, params, name + ".0"), params, name + ".1");
    scales.push_back(ad::segment_max(h, std::span<const std::size_t>(plan.offsets)));
  }
  auto features = linear(ad::concat(scales, 1), params, prefix + ".proj");
  return {coords, features};
}

template <typename T>
ad::BasicTensor<T> correlate(const EncodedFrame<T>& warped, const EncodedFrame<T>& target, const Params<T>& params,
                             const IterFlowConfig& cfg) {
  const auto nb = geom::ball_query(to_cloud(warped.coords), to_cloud(target.coords), cfg.radius, cfg.neighbors);
  const auto plan = plan_from(nb);
  const std::span<const Index> qrows(plan.query_rows), nrows(plan.neighbor_rows);

  auto product = ad::mul(ad::gather_rows(target.features, nrows), ad::gather_rows(warped.features, qrows));
  if (cfg.product == CorrelationProduct::kInner) {
    const std::size_t c = warped.features.shape()[1];
    product = ad::matmul(product, ad::BasicTensor<T>::constant(Shape{c, 1}, std::vector<T>(c, T(1))));
  }
  auto offset = ad::sub(ad::gather_rows(target.coords, nrows), ad::gather_rows(warped.coords, qrows));
  auto pair = ad::concat<T>({product, offset}, 1);
  auto h = mlp_relu(mlp_relu(pair, params, "corr.0"), params, "corr.1");
  return ad::segment_max(h, std::span<const std::size_t>(plan.offsets));
}

template <typename T>
ad::BasicTensor<T> assemble_gru_input(const ad::BasicTensor<T>& correlation, const ad::BasicTensor<T>& context,
                                      const ad::BasicTensor<T>& flow, const Params<T>& params) {
  auto motion = mlp_relu(ad::concat<T>({correlation, context}, 1), params, "motion");
  auto flow_embed = mlp_relu(flow, params, "flow_embed");
  return ad::concat<T>({motion, flow_embed}, 1);
}

template <typename T>
ad::BasicTensor<T> gru_step(const ad::BasicTensor<T>& hidden, const ad::BasicTensor<T>& input,
                            const Params<T>& params, GateTrace* trace) {
  auto hx = ad::concat<T>({hidden, input}, 1);
  auto z = ad::sigmoid(linear(hx, params, "gru.z"));
  auto r = ad::sigmoid(linear(hx, params, "gru.r"));
  auto candidate = ad::tanh(linear(ad::concat<T>({ad::mul(r, hidden), input}, 1), params, "gru.h"));
  // (1 - z) h + z ĥ, written as h + z (ĥ - h)
  auto next = ad::add(hidden, ad::mul(z, ad::sub(candidate, hidden)));
  if (trace) {
    record_extremes(z, trace->z_min, trace->z_max);
    record_extremes(r, trace->r_min, trace->r_max);
    record_extremes(next, trace->h_min, trace->h_max);
  }
  return next;
}

template <typename T>
ad::BasicTensor<T> flow_head(const ad::BasicTensor<T>& hidden, const Params<T>& params) {
  return linear(mlp_relu(hidden, params, "head.0"), params, "head.1");
}

template <typename T>
ad::BasicTensor<T> initial_hidden(const ad::BasicTensor<T>& context, const Params<T>& params) {
  return ad::tanh(linear(context, params, "init"));
}

template <typename T>
ForwardResult<T> forward(const geom::RadarFrame& source, const geom::RadarFrame& target, const IterFlowConfig& cfg,
                         const Params<T>& params, GateTrace* trace) {
  cfg.validate();
  if (source.size() == 0 || target.size() == 0) throw std::invalid_argument("forward: empty frame");
  const auto src = encode(source, params, cfg, "enc");
  const auto tgt = encode(target, params, cfg, "enc");
  const auto context = encode(source, params, cfg, "ctx").features;

  auto hidden = initial_hidden(context, params);
  auto flow = ad::BasicTensor<T>::zeros(Shape{source.size(), 3});
  ForwardResult<T> result;
  for (std::size_t k = 1; k <= cfg.iterations; ++k) {
    const EncodedFrame<T> warped{ad::add(src.coords, flow), src.features};
    auto corr = correlate(warped, tgt, params, cfg);
    auto x = assemble_gru_input(corr, context, flow, params);
    hidden = gru_step(hidden, x, params, trace);
    auto delta = flow_head(hidden, params);
    flow = ad::add(flow, delta);
    for (auto v : flow.data())
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error("forward: non-finite flow at iteration " + std::to_string(k));
    result.residuals.push_back(delta);
    result.flows.push_back(flow);
  }
  return result;
}

#define ITERFLOW_MODEL_INSTANTIATE(T)                                                                          \
  template struct EncodedFrame<T>;                                                                             \
  template EncodedFrame<T> encode(const geom::RadarFrame&, const Params<T>&, const IterFlowConfig&,             \
                                  const std::string&);                                                        \
  template ad::BasicTensor<T> correlate(const EncodedFrame<T>&, const EncodedFrame<T>&, const Params<T>&,       \
                                        const IterFlowConfig&);                                                \
  template ad::BasicTensor<T> assemble_gru_input(const ad::BasicTensor<T>&, const ad::BasicTensor<T>&,          \
                                                 const ad::BasicTensor<T>&, const Params<T>&);                 \
  template ad::BasicTensor<T> gru_step(const ad::BasicTensor<T>&, const ad::BasicTensor<T>&, const Params<T>&,  \
                                       GateTrace*);                                                            \
  template ad::BasicTensor<T> flow_head(const ad::BasicTensor<T>&, const Params<T>&);                          \
  template ad::BasicTensor<T> initial_hidden(const ad::BasicTensor<T>&, const Params<T>&);                     \
  template ForwardResult<T> forward(const geom::RadarFrame&, const geom::RadarFrame&, const IterFlowConfig&,   \
                                    const Params<T>&, GateTrace*);                                             \
  template ad::BasicTensor<T> to_tensor(const geom::PointCloud&);                                              \
  template geom::PointCloud to_cloud(const ad::BasicTensor<T>&);

ITERFLOW_MODEL_INSTANTIATE(double)
ITERFLOW_MODEL_INSTANTIATE(float)

#undef ITERFLOW_MODEL_INSTANTIATE

}  // namespace iterflow::model
