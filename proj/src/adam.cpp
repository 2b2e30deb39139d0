#include "iterflow/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace iterflow::ad {

AdamState AdamState::for_params(const ParamStore& params, AdamOptions options) {
  AdamState s;
  s.options = options;
  for (const auto& t : params.tensors()) {
    s.first_moment.emplace_back(t.size(), 0.0);
    s.second_moment.emplace_back(t.size(), 0.0);
  }
  return s;
}

void adam_step(ParamStore& params, const std::vector<std::vector<double>>& grads, AdamState& state) {
  if (grads.size() != params.size())
    throw std::invalid_argument("adam_step: expected " + std::to_string(params.size()) + " gradient arrays, got " +
                                std::to_string(grads.size()));
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw std::invalid_argument("adam_step: optimizer state does not match the parameter set");
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& t = params.tensors()[p];
    if (grads[p].size() != t.size() || state.first_moment[p].size() != t.size() ||
        state.second_moment[p].size() != t.size())
      throw std::invalid_argument("adam_step: size mismatch for parameter '" + params.names()[p] + "'");
    for (double g : grads[p])
      if (!std::isfinite(g)) throw std::domain_error("adam_step: non-finite gradient in parameter '" + params.names()[p] + "'");
  }

  const auto& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params.tensors()[p].mutable_data();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      values[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

}  // namespace iterflow::ad
