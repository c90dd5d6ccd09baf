#include "fedsim/engine.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include <json.hpp>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

void RoundConfig::validate(std::size_t n_clients) const {
  if (cohort_size == 0 || cohort_size > n_clients)
    throw ConfigError("federation.cohort_size must be in [1, n_clients]");
  if (local_epochs == 0)
    throw ConfigError("federation.local_epochs must be at least 1");
  if (batch_size == 0)
    throw ConfigError("federation.batch_size must be at least 1");
  client_opt.validate();
  server_opt.validate();
  if (secure) {
    quant.validate();
    if ((std::uint64_t{1} << quant.headroom_bits) < cohort_size)
      throw ConfigError("secure.headroom_bits too small for the cohort size");
  }
}

std::string round_record_to_json(const RoundRecord& r, bool with_wall_ms) {
  nlohmann::json j;
  j["round"] = r.round;
  j["cohort"] = r.cohort;
  j["train_loss_mean"] = r.train_loss_mean;
  j["eval"] = r.eval_metrics;
  j["payload_bytes_up"] = r.payload_bytes_up;
  j["payload_bytes_down"] = r.payload_bytes_down;
  if (with_wall_ms) j["wall_ms"] = r.wall_ms;
  return j.dump();
}

std::vector<std::uint64_t> sample_cohort(std::size_t n_clients,
                                         std::size_t cohort_size,
                                         std::size_t round, std::uint64_t seed) {
  if (cohort_size > n_clients)
    throw ConfigError("sample_cohort: cohort_size exceeds n_clients");
  Rng rng(derive_seed(seed, "engine/cohort", round));
  const std::vector<std::size_t> picks =
      rng.sample_without_replacement(n_clients, cohort_size);
  std::vector<std::uint64_t> cohort(picks.begin(), picks.end());
  return cohort;  // already ascending
}

ClientUpdate local_train(std::uint64_t client_id, const ParamVector& global_model,
                         const std::vector<std::size_t>& indices,
                         const RoundConfig& cfg, std::size_t round,
                         const TaskBinding& task) {
  if (indices.empty())
    throw EmptyClient("local_train: client " + std::to_string(client_id) +
                      " has no examples");

  ParamVector x = global_model;
  OptimizerState state = OptimizerState::zeros(x.layout->trainable_len());
  Rng rng(derive_seed(cfg.seed, "engine/batch", round, client_id));

  std::vector<std::size_t> order = indices;
  double loss_sum = 0.0;
  std::size_t steps = 0;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      const std::size_t end = std::min(pos + cfg.batch_size, order.size());
      const std::vector<std::size_t> batch(order.begin() + pos,
                                           order.begin() + end);
      auto [loss, grad] = task.loss_and_grad(x, batch);
      client_step(x, grad, state, cfg.client_opt, global_model);
      loss_sum += loss;
      steps++;
    }
  }

  ClientUpdate update;
  update.client_id = client_id;
  update.delta = axpy(-1.0, global_model, x);
  update.weight =
      cfg.weight_by_size ? static_cast<double>(indices.size()) : 1.0;
  update.steps = steps;
  update.train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
  return update;
}

ParamVector aggregate(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw NoUpdates("aggregate: no client updates");
  std::vector<const ClientUpdate*> sorted;
  sorted.reserve(updates.size());
  for (const ClientUpdate& u : updates) sorted.push_back(&u);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
    return a->client_id < b->client_id;
  });

  double weight_sum = 0.0;
  for (const auto* u : sorted) {
    check_same_layout(u->delta, sorted.front()->delta);
    if (!(u->weight > 0.0)) throw DataError("aggregate: non-positive weight");
    weight_sum += u->weight;
  }

  ParamVector delta(sorted.front()->delta.layout);
  const BlockLayout& layout = *delta.layout;
  for (const auto* u : sorted) {
    const double w = u->weight / weight_sum;
    const auto& blocks = layout.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      if (blocks[b].frozen) continue;
      const std::size_t off = layout.offset(b);
      for (std::size_t i = 0; i < blocks[b].length; ++i)
        delta.values[off + i] += w * u->delta.values[off + i];
    }
  }
  return delta;
}

LocalBusExecutor::LocalBusExecutor(
    const TaskBinding& task, std::vector<std::vector<std::size_t>> client_indices,
    RoundConfig cfg)
    : task_(task), client_indices_(std::move(client_indices)), cfg_(std::move(cfg)) {}

std::vector<ClientUpdate> LocalBusExecutor::run_clear(
    std::size_t round, const std::vector<std::uint64_t>& cohort,
    const ParamVector& model) {
  std::vector<ClientUpdate> updates;
  updates.reserve(cohort.size());
  for (std::uint64_t id : cohort)
    updates.push_back(
        local_train(id, model, client_indices_.at(id), cfg_, round, task_));
  return updates;
}

RoundExecutor::SecureRound LocalBusExecutor::run_secure(
    std::size_t round, const std::vector<std::uint64_t>& cohort,
    const ParamVector& model) {
  const std::vector<PairwiseSeed> seeds = derive_pair_seeds(
      cohort, round, derive_seed(cfg_.seed, "secagg/root"));
  SecureRound out;
  double loss_sum = 0.0;
  for (std::uint64_t id : cohort) {
    ClientUpdate u =
        local_train(id, model, client_indices_.at(id), cfg_, round, task_);
    loss_sum += u.train_loss;
    const std::vector<std::uint64_t> dq =
        quantize(trainable_view(u.delta), cfg_.quant);
    MaskedUpdate masked = mask_update(dq, 1, id, cohort, seeds, cfg_.quant);
    out.payload_bytes_up += encode_masked_update(masked, cfg_.quant).size();
    out.updates.push_back(std::move(masked));
  }
  out.train_loss_mean =
      cohort.empty() ? 0.0 : loss_sum / static_cast<double>(cohort.size());
  return out;
}

std::pair<ParamVector, std::vector<RoundRecord>> run_federation(
    std::size_t n_clients, const RoundConfig& cfg, const TaskBinding& task,
    RoundExecutor& executor, const RecordSink& sink) {
  cfg.validate(n_clients);

  ParamVector model = task.model_init();
  OptimizerState server_state =
      OptimizerState::zeros(model.layout->trainable_len());
  std::vector<RoundRecord> records;
  records.reserve(cfg.total_rounds);

  for (std::size_t t = 0; t < cfg.total_rounds; ++t) {
    const auto start = std::chrono::steady_clock::now();
    RoundRecord rec;
    rec.round = t;
    rec.cohort = sample_cohort(n_clients, cfg.cohort_size, t, cfg.seed);
    rec.payload_bytes_down = rec.cohort.size() * payload_bytes(model);

    ParamVector delta;
    if (cfg.secure) {
      RoundExecutor::SecureRound sr = executor.run_secure(t, rec.cohort, model);
      delta = secure_aggregate(sr.updates, cfg.quant, rec.cohort, model.layout);
      rec.train_loss_mean = sr.train_loss_mean;
      rec.payload_bytes_up = sr.payload_bytes_up;
    } else {
      const std::vector<ClientUpdate> updates =
          executor.run_clear(t, rec.cohort, model);
      delta = aggregate(updates);
      double loss_sum = 0.0;
      for (const ClientUpdate& u : updates) {
        loss_sum += u.train_loss;
        rec.payload_bytes_up += payload_bytes(u.delta);
      }
      rec.train_loss_mean =
          updates.empty() ? 0.0 : loss_sum / static_cast<double>(updates.size());
    }

    // ServerOpt consumes the negated aggregate as a pseudo-gradient.
    ParamVector pseudo_grad = delta;
    for (double& v : pseudo_grad.values) v = -v;
    server_step(model, pseudo_grad, server_state, cfg.server_opt);

    rec.eval_metrics = task.evaluate(model);
    rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    if (sink) sink(rec);
    records.push_back(std::move(rec));
  }
  return {std::move(model), std::move(records)};
}

std::pair<ParamVector, std::vector<RoundRecord>> centralized_train(
    std::size_t n_train, const RoundConfig& cfg, const TaskBinding& task,
    const RecordSink& sink) {
  if (n_train == 0) throw EmptyDataset("centralized_train: empty dataset");
  std::vector<std::size_t> all(n_train);
  std::iota(all.begin(), all.end(), 0);

  ParamVector model = task.model_init();
  std::vector<RoundRecord> records;
  records.reserve(cfg.total_rounds);
  for (std::size_t t = 0; t < cfg.total_rounds; ++t) {
    const auto start = std::chrono::steady_clock::now();
    ClientUpdate update = local_train(0, model, all, cfg, t, task);
    model = axpy(1.0, update.delta, model);

    RoundRecord rec;
    rec.round = t;
    rec.cohort = {0};
    rec.train_loss_mean = update.train_loss;
    rec.eval_metrics = task.evaluate(model);
    rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    if (sink) sink(rec);
    records.push_back(std::move(rec));
  }
  return {std::move(model), std::move(records)};
}

}  // namespace fedsim
