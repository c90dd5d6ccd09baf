#pragma once

#include <cstddef>
#include <vector>

#include "fedsim/core.hpp"

namespace fedsim {

enum class ClientOptVariant { Sgd, AdamW };

struct ClientOptConfig {
  ClientOptVariant variant = ClientOptVariant::Sgd;
  double lr = 0.1;
  double momentum = 0.0;  // SGD only
  double beta1 = 0.9;     // AdamW
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // FedProx proximal coefficient; 0 disables the proximal term.
  double proximal_mu = 0.0;

  void validate() const;
};

struct ServerOptConfig {
  double lr = 1.0;
  double momentum = 0.0;

  void validate() const;

  static ServerOptConfig fedavg() { return {1.0, 0.0}; }
  static ServerOptConfig fedopt() { return {1.0, 0.9}; }
};

// Per-optimizer scratch over trainable coordinates only; frozen blocks never
// accumulate state.
struct OptimizerState {
  std::size_t step_count = 0;
  std::vector<double> first_moment;   // AdamW m / SGD and server velocity
  std::vector<double> second_moment;  // AdamW v

  static OptimizerState zeros(std::size_t trainable_len) {
    OptimizerState s;
    s.first_moment.assign(trainable_len, 0.0);
    s.second_moment.assign(trainable_len, 0.0);
    return s;
  }
};

// One local optimizer step in place. The effective gradient is
// g + mu * (x - x_global) on trainable coordinates, then SGD-momentum or
// decoupled AdamW. Frozen coordinates are untouched.
void client_step(ParamVector& x, const Gradient& g, OptimizerState& state,
                 const ClientOptConfig& cfg, const ParamVector& x_global);

// Server-side SGD with momentum on the pseudo-gradient (-aggregated delta):
// v <- m*v + pg; x <- x - lr*v, trainable coordinates only.
void server_step(ParamVector& x, const ParamVector& pseudo_grad,
                 OptimizerState& state, const ServerOptConfig& cfg);

}  // namespace fedsim
