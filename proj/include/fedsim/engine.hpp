#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedsim/core.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/secagg.hpp"
#include "fedsim/tasks.hpp"

namespace fedsim {

struct RoundConfig {
  std::size_t total_rounds = 10;
  std::size_t cohort_size = 1;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 32;
  ClientOptConfig client_opt;
  ServerOptConfig server_opt;
  std::uint64_t seed = 0;
  bool secure = false;
  // p_i = |D_i| when true (the FedAvg convention), otherwise p_i = 1.
  // Secure rounds always mask unit weights; see secagg.
  bool weight_by_size = true;
  QuantizationConfig quant;

  void validate(std::size_t n_clients) const;
};

struct ClientUpdate {
  std::uint64_t client_id = 0;
  ParamVector delta;  // x_i after local training minus the broadcast model
  double weight = 1.0;
  std::size_t steps = 0;
  double train_loss = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::uint64_t> cohort;
  double train_loss_mean = 0.0;
  std::map<std::string, double> eval_metrics;
  std::size_t payload_bytes_up = 0;
  std::size_t payload_bytes_down = 0;
  std::int64_t wall_ms = 0;
};

std::string round_record_to_json(const RoundRecord& r, bool with_wall_ms);

// Uniform sample without replacement, sorted, deterministic in (seed, round).
std::vector<std::uint64_t> sample_cohort(std::size_t n_clients,
                                         std::size_t cohort_size,
                                         std::size_t round, std::uint64_t seed);

// One client's local pass: seeded-shuffled mini-batches, local_epochs epochs,
// optimizer state reset at round start. Batch RNG depends only on
// (seed, round, client_id).
ClientUpdate local_train(std::uint64_t client_id, const ParamVector& global_model,
                         const std::vector<std::size_t>& indices,
                         const RoundConfig& cfg, std::size_t round,
                         const TaskBinding& task);

// Weighted mean of deltas, iteration sorted by client id.
ParamVector aggregate(const std::vector<ClientUpdate>& updates);

// Where the cohort's local work happens: in-process for the local bus,
// frame exchange for the TCP backend.
class RoundExecutor {
 public:
  struct SecureRound {
    std::vector<MaskedUpdate> updates;
    double train_loss_mean = 0.0;
    std::size_t payload_bytes_up = 0;
  };

  virtual ~RoundExecutor() = default;
  virtual std::vector<ClientUpdate> run_clear(
      std::size_t round, const std::vector<std::uint64_t>& cohort,
      const ParamVector& model) = 0;
  virtual SecureRound run_secure(std::size_t round,
                                 const std::vector<std::uint64_t>& cohort,
                                 const ParamVector& model) = 0;
};

// Deterministic in-process backend.
class LocalBusExecutor : public RoundExecutor {
 public:
  LocalBusExecutor(const TaskBinding& task,
                   std::vector<std::vector<std::size_t>> client_indices,
                   RoundConfig cfg);

  std::vector<ClientUpdate> run_clear(std::size_t round,
                                      const std::vector<std::uint64_t>& cohort,
                                      const ParamVector& model) override;
  SecureRound run_secure(std::size_t round,
                         const std::vector<std::uint64_t>& cohort,
                         const ParamVector& model) override;

 private:
  const TaskBinding& task_;
  std::vector<std::vector<std::size_t>> client_indices_;
  RoundConfig cfg_;
};

using RecordSink = std::function<void(const RoundRecord&)>;

// The full Algorithm: T rounds of broadcast, local training, (secure)
// aggregation, server step, evaluation.
std::pair<ParamVector, std::vector<RoundRecord>> run_federation(
    std::size_t n_clients, const RoundConfig& cfg, const TaskBinding& task,
    RoundExecutor& executor, const RecordSink& sink = nullptr);

// Same trainer loop on the pooled dataset; the equivalence oracle for the
// single-client federated run.
std::pair<ParamVector, std::vector<RoundRecord>> centralized_train(
    std::size_t n_train, const RoundConfig& cfg, const TaskBinding& task,
    const RecordSink& sink = nullptr);

}  // namespace fedsim
