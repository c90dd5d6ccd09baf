#include "fedsim/optim.hpp"

#include <cmath>

#include "fedsim/errors.hpp"

namespace fedsim {

void ClientOptConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("client_opt.lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("client_opt.momentum must be in [0, 1)");
  if (beta1 < 0.0 || beta1 >= 1.0)
    throw ConfigError("client_opt.beta1 must be in [0, 1)");
  if (beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("client_opt.beta2 must be in [0, 1)");
  if (eps <= 0.0) throw ConfigError("client_opt.eps must be positive");
  if (weight_decay < 0.0)
    throw ConfigError("client_opt.weight_decay must be non-negative");
  if (proximal_mu < 0.0)
    throw ConfigError("client_opt.proximal_mu must be non-negative");
}

void ServerOptConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("server_opt.lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("server_opt.momentum must be in [0, 1)");
}

namespace {

// Applies fn(trainable_index, value_index) over live coordinates in layout
// order.
template <typename Fn>
void for_trainable(const BlockLayout& layout, Fn&& fn) {
  std::size_t t = 0;
  const auto& blocks = layout.blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].frozen) continue;
    const std::size_t off = layout.offset(b);
    for (std::size_t i = 0; i < blocks[b].length; ++i) fn(t++, off + i);
  }
}

}  // namespace

void client_step(ParamVector& x, const Gradient& g, OptimizerState& state,
                 const ClientOptConfig& cfg, const ParamVector& x_global) {
  check_same_layout(x, g);
  check_same_layout(x, x_global);
  const BlockLayout& layout = *x.layout;
  if (state.first_moment.size() != layout.trainable_len())
    throw LayoutError("optimizer state does not match trainable length");
  for (double v : g.values)
    if (!std::isfinite(v)) throw NumericalError("non-finite gradient");

  state.step_count++;
  const double t = static_cast<double>(state.step_count);

  if (cfg.variant == ClientOptVariant::Sgd) {
    for_trainable(layout, [&](std::size_t ti, std::size_t vi) {
      const double eff =
          g.values[vi] + cfg.proximal_mu * (x.values[vi] - x_global.values[vi]);
      state.first_moment[ti] = cfg.momentum * state.first_moment[ti] + eff;
      x.values[vi] -= cfg.lr * state.first_moment[ti];
    });
  } else {
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for_trainable(layout, [&](std::size_t ti, std::size_t vi) {
      const double eff =
          g.values[vi] + cfg.proximal_mu * (x.values[vi] - x_global.values[vi]);
      state.first_moment[ti] =
          cfg.beta1 * state.first_moment[ti] + (1.0 - cfg.beta1) * eff;
      state.second_moment[ti] =
          cfg.beta2 * state.second_moment[ti] + (1.0 - cfg.beta2) * eff * eff;
      const double m_hat = state.first_moment[ti] / bc1;
      const double v_hat = state.second_moment[ti] / bc2;
      x.values[vi] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) +
                                cfg.weight_decay * x.values[vi]);
    });
  }
  check_finite(x, "model after client step");
}

void server_step(ParamVector& x, const ParamVector& pseudo_grad,
                 OptimizerState& state, const ServerOptConfig& cfg) {
  check_same_layout(x, pseudo_grad);
  const BlockLayout& layout = *x.layout;
  if (state.first_moment.size() != layout.trainable_len())
    throw LayoutError("optimizer state does not match trainable length");
  for (double v : pseudo_grad.values)
    if (!std::isfinite(v)) throw NumericalError("non-finite pseudo-gradient");

  state.step_count++;
  for_trainable(layout, [&](std::size_t ti, std::size_t vi) {
    state.first_moment[ti] =
        cfg.momentum * state.first_moment[ti] + pseudo_grad.values[vi];
    x.values[vi] -= cfg.lr * state.first_moment[ti];
  });
  check_finite(x, "model after server step");
}

}  // namespace fedsim
