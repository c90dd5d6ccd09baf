// End-to-end acceptance suite. Each test case prints one pass/fail line so the
// run reads as a checklist.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>
#include <vector>

#include "fedsim/engine.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/partition.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/secagg.hpp"
#include "fedsim/tasks.hpp"
#include "fedsim/transport.hpp"

using namespace fedsim;

namespace {

void report(int criterion, const char* name, bool pass) {
  std::printf("criterion %2d (%s): %s\n", criterion, name,
              pass ? "PASS" : "FAIL");
  std::fflush(stdout);
  CHECK(pass);
}

Dataset tc_dataset(std::size_t n_classes, std::size_t n_train,
                   std::size_t n_test, std::uint64_t seed, double skew = 0.1,
                   std::size_t vocab = 400) {
  SyntheticTCConfig cfg;
  cfg.n_classes = n_classes;
  cfg.vocab_size = vocab;
  cfg.n_train = n_train;
  cfg.n_test = n_test;
  cfg.skew = skew;
  cfg.seed = seed;
  return generate_tc_dataset(cfg);
}

std::vector<std::vector<std::size_t>> partition_clients(const Dataset& ds,
                                                        std::size_t n_clients,
                                                        double alpha,
                                                        std::uint64_t seed) {
  PartitionSpec spec;
  spec.strategy = PartitionStrategy::LabelDirichlet;
  spec.n_clients = n_clients;
  spec.alpha = alpha;
  spec.seed = seed;
  std::vector<int> labels;
  for (const Example& ex : ds.train) labels.push_back(ex.label);
  return dirichlet_label_partition(labels, spec).assignments;
}

double max_abs_diff(const ParamVector& a, const ParamVector& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
  return worst;
}

}  // namespace

TEST_CASE("1: single-client federation collapses to centralized training") {
  const auto start = std::chrono::steady_clock::now();
  const Dataset ds = tc_dataset(4, 400, 100, 21);
  const auto task = make_task_binding(ds, 64, {}, 21);
  RoundConfig cfg;
  cfg.total_rounds = 10;
  cfg.cohort_size = 1;
  cfg.batch_size = 32;
  cfg.seed = 4;
  std::vector<std::size_t> all(400);
  std::iota(all.begin(), all.end(), 0);

  LocalBusExecutor exec(task, {all}, cfg);
  const auto [fed, fed_rec] = run_federation(1, cfg, task, exec);
  const auto [cen, cen_rec] = centralized_train(400, cfg, task);

  bool pass = fed_rec.size() == 10 && cen_rec.size() == 10;
  // Per-round model agreement: replay both trajectories round by round.
  for (std::size_t t = 1; t <= 10 && pass; ++t) {
    RoundConfig partial = cfg;
    partial.total_rounds = t;
    LocalBusExecutor e2(task, {all}, partial);
    const auto ft = run_federation(1, partial, task, e2).first;
    const auto ct = centralized_train(400, partial, task).first;
    pass = max_abs_diff(ft, ct) <= 1e-9;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  report(1, "protocol collapse", pass && secs < 10.0);
}

TEST_CASE("2: FedProx with mu=0 is bitwise FedAvg") {
  const Dataset ds = tc_dataset(5, 500, 100, 22);
  const auto task = make_task_binding(ds, 64, {}, 22);
  RoundConfig fedavg;
  fedavg.total_rounds = 5;
  fedavg.cohort_size = 3;
  fedavg.batch_size = 16;
  fedavg.seed = 9;
  RoundConfig fedprox = fedavg;
  fedprox.client_opt.proximal_mu = 0.0;

  const auto split = partition_clients(ds, 5, 0.5, 1);
  LocalBusExecutor ea(task, split, fedavg);
  LocalBusExecutor eb(task, split, fedprox);
  const auto ma = run_federation(5, fedavg, task, ea).first;
  const auto mb = run_federation(5, fedprox, task, eb).first;
  report(2, "FedProx mu=0 identity", ma.values == mb.values);
}

TEST_CASE("3: aggregation equals the closed-form weighted mean") {
  const auto layout = make_layout({{"w", 16, false}});
  Rng rng(23);
  bool pass = true;
  for (int trial = 0; trial < 1000 && pass; ++trial) {
    const std::size_t m = 2 + rng.uniform_int(8);
    std::vector<ClientUpdate> ups(m);
    std::vector<double> expect(16, 0.0);
    double wsum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      ups[i].client_id = i;
      ups[i].weight = 0.25 + rng.uniform() * 8.0;
      ups[i].delta = ParamVector(layout);
      for (double& v : ups[i].delta.values) v = rng.normal() * 3.0;
      wsum += ups[i].weight;
      for (std::size_t k = 0; k < 16; ++k)
        expect[k] += ups[i].weight * ups[i].delta.values[k];
    }
    const auto r = aggregate(ups);
    for (std::size_t k = 0; k < 16; ++k)
      pass = pass && std::abs(r.values[k] - expect[k] / wsum) < 1e-12;
    auto shuffled = ups;
    rng.shuffle(shuffled);
    pass = pass && aggregate(shuffled).values == r.values;
  }
  report(3, "aggregation law", pass);
}

TEST_CASE("4: secure aggregation is field-exact and tracks clear training") {
  const QuantizationConfig q{};  // 32-bit field, clip 8, headroom 4
  Rng rng(29);
  bool field_exact = true;
  for (int trial = 0; trial < 100 && field_exact; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(15);  // cohorts of 2..16
    std::vector<std::uint64_t> cohort;
    for (std::size_t i = 0; i < n; ++i)
      cohort.push_back(trial * 100 + i);
    const auto seeds = derive_pair_seeds(cohort, trial, 7);
    const std::size_t dim = 1 + rng.uniform_int(64);
    std::vector<std::uint64_t> plain_sum(dim, 0), masked_sum(dim, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> delta(dim);
      for (double& x : delta) x = (rng.uniform() * 2.0 - 1.0) * q.clip;
      const auto dq = quantize(delta, q);
      const auto m = mask_update(dq, 1, cohort[i], cohort, seeds, q);
      for (std::size_t k = 0; k < dim; ++k) {
        plain_sum[k] = (plain_sum[k] + dq[k]) & q.field_mask();
        masked_sum[k] = (masked_sum[k] + m.field_values[k]) & q.field_mask();
      }
    }
    field_exact = plain_sum == masked_sum;
  }

  // End-to-end: secure and clear runs share every seed; the only difference
  // per round is the quantization grid, so the final models differ by at most
  // T * eps_q per coordinate.
  const Dataset ds = tc_dataset(4, 400, 100, 24);
  const auto task = make_task_binding(ds, 64, {}, 24);
  RoundConfig clear_cfg;
  clear_cfg.total_rounds = 8;
  clear_cfg.cohort_size = 4;
  clear_cfg.batch_size = 16;
  clear_cfg.seed = 31;
  clear_cfg.weight_by_size = false;  // secure rounds aggregate unit-weighted
  RoundConfig secure_cfg = clear_cfg;
  secure_cfg.secure = true;
  const auto split = partition_clients(ds, 6, 1.0, 2);
  LocalBusExecutor ec(task, split, clear_cfg);
  LocalBusExecutor es(task, split, secure_cfg);
  const auto mc = run_federation(6, clear_cfg, task, ec).first;
  const auto ms = run_federation(6, secure_cfg, task, es).first;
  const bool close =
      max_abs_diff(mc, ms) <= 8.0 * secure_cfg.quant.quant_step();
  report(4, "secure aggregation exactness", field_exact && close);
}

TEST_CASE("5: accuracy degrades as the partition grows more non-IID") {
  const auto start = std::chrono::steady_clock::now();
  std::size_t ordered = 0;
  // 50 classes with heavy token overlap keep the task unsaturated, and long
  // local passes amplify client drift, so the alpha ordering is visible.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset ds = tc_dataset(50, 2000, 4000, 100 + seed, 60.0, 600);
    const auto task = make_task_binding(ds, 64, {}, 100 + seed);
    auto final_acc = [&](double alpha) {
      RoundConfig cfg;
      cfg.total_rounds = 30;
      cfg.cohort_size = 10;
      cfg.batch_size = 8;
      cfg.local_epochs = 6;
      cfg.client_opt.lr = 1.5;
      cfg.seed = seed;
      const auto split = partition_clients(ds, 100, alpha, seed);
      LocalBusExecutor exec(task, split, cfg);
      const auto [model, records] = run_federation(100, cfg, task, exec);
      return records.back().eval_metrics.at("accuracy");
    };
    const double a100 = final_acc(100.0);
    const double a10 = final_acc(10.0);
    const double a1 = final_acc(1.0);
    if (a100 >= a10 && a10 >= a1) ordered++;
    std::printf("  seed %llu: acc(alpha=100)=%.4f acc(10)=%.4f acc(1)=%.4f\n",
                static_cast<unsigned long long>(seed), a100, a10, a1);
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  report(5, "non-IID degradation ordering", ordered >= 4 && secs < 600.0);
}

TEST_CASE("6: partition statistics across the alpha range") {
  bool monotone = true;
  const Dataset ds = tc_dataset(10, 4000, 100, 26);
  std::vector<int> labels;
  for (const Example& ex : ds.train) labels.push_back(ex.label);
  for (std::uint64_t seed = 0; seed < 5 && monotone; ++seed) {
    double prev = 2.0;
    for (double alpha : {1.0, 5.0, 10.0, 100.0}) {
      PartitionSpec spec;
      spec.strategy = PartitionStrategy::LabelDirichlet;
      spec.n_clients = 20;
      spec.alpha = alpha;
      spec.seed = seed;
      const double jsd =
          mean_offdiagonal(jsd_matrix(dirichlet_label_partition(labels, spec)));
      monotone = monotone && jsd < prev;
      prev = jsd;
    }
  }

  // alpha -> infinity: every client reproduces the uniform prior closely.
  bool prior_limit = true;
  {
    PartitionSpec spec;
    spec.strategy = PartitionStrategy::LabelDirichlet;
    spec.n_clients = 10;
    spec.alpha = 1e9;
    spec.seed = 3;
    const Dataset big = tc_dataset(10, 10000, 100, 27);
    std::vector<int> big_labels;
    for (const Example& ex : big.train) big_labels.push_back(ex.label);
    const auto r = dirichlet_label_partition(big_labels, spec);
    for (const auto& row : r.label_matrix) {
      const double total = std::accumulate(row.begin(), row.end(), 0.0);
      for (std::size_t c : row)
        prior_limit =
            prior_limit && std::abs(c / total - 0.1) < 0.02;
    }
  }

  // alpha -> 0: nearly all clients concentrate on a single label.
  bool point_limit = true;
  {
    const Dataset two = tc_dataset(2, 2000, 100, 28);
    std::vector<int> two_labels;
    for (const Example& ex : two.train) two_labels.push_back(ex.label);
    PartitionSpec spec;
    spec.strategy = PartitionStrategy::LabelDirichlet;
    spec.n_clients = 100;
    spec.alpha = 1e-6;
    spec.seed = 5;
    const auto r = dirichlet_label_partition(two_labels, spec);
    std::size_t concentrated = 0;
    for (const auto& row : r.label_matrix) {
      const double total = std::accumulate(row.begin(), row.end(), 0.0);
      if (*std::max_element(row.begin(), row.end()) >= 0.9 * total)
        concentrated++;
    }
    point_limit = concentrated >= 95;
  }
  report(6, "partition statistics", monotone && prior_limit && point_limit);
}

TEST_CASE("7: freezing blocks shrinks the uplink by the frozen fraction") {
  const Dataset ds = tc_dataset(10, 600, 100, 29);
  const std::size_t dim = 32;
  bool pass = true;
  for (std::size_t frozen_count : {0u, 3u, 7u, 10u}) {
    std::vector<std::string> freeze;
    for (std::size_t k = 0; k < frozen_count; ++k) {
      char name[16];
      std::snprintf(name, sizeof(name), "class_%02zu", k);
      freeze.emplace_back(name);
    }
    const auto task = make_task_binding(ds, dim, freeze, 29);
    RoundConfig cfg;
    cfg.total_rounds = 3;
    cfg.cohort_size = 3;
    cfg.batch_size = 16;
    cfg.seed = 6;
    const auto split = partition_clients(ds, 6, 1.0, 4);
    LocalBusExecutor exec(task, split, cfg);
    const auto before = task.model_init();
    const auto [after, records] = run_federation(6, cfg, task, exec);
    const std::size_t expected_bytes = 3 * (10 - frozen_count) * dim * 8;
    for (const auto& rec : records)
      pass = pass && rec.payload_bytes_up == expected_bytes;
    // Frozen coordinates are bit-identical before and after training.
    for (std::size_t b = 0; b < before.layout->blocks().size(); ++b) {
      if (!before.layout->blocks()[b].frozen) continue;
      const std::size_t off = before.layout->offset(b);
      for (std::size_t i = 0; i < before.layout->blocks()[b].length; ++i)
        pass = pass && after.values[off + i] == before.values[off + i];
    }
    if (frozen_count == 0 || frozen_count == 10) continue;
    // The trained (live) part must actually have moved.
    pass = pass && after.values != before.values;
  }
  report(7, "frozen-block payload accounting", pass);
}

TEST_CASE("8: closed-form gradients match finite differences") {
  auto rel_err = [](const TaskBinding& task,
                    const std::vector<std::size_t>& batch, ParamVector x) {
    const double h = 1e-5;
    const auto grad = task.loss_and_grad(x, batch).second;
    double err2 = 0.0, norm2 = 0.0;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
      const double keep = x.values[i];
      x.values[i] = keep + h;
      const double up = task.loss_and_grad(x, batch).first;
      x.values[i] = keep - h;
      const double down = task.loss_and_grad(x, batch).first;
      x.values[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      err2 += (fd - grad.values[i]) * (fd - grad.values[i]);
      norm2 += grad.values[i] * grad.values[i];
    }
    return std::sqrt(err2) / std::max(std::sqrt(norm2), 1e-12);
  };

  const Dataset tc = tc_dataset(4, 200, 50, 30);
  const auto tc_task = make_task_binding(tc, 12, {}, 30);
  TaggingConfig st_cfg;
  st_cfg.n_train = 100;
  st_cfg.n_test = 30;
  st_cfg.vocab_size = 150;
  st_cfg.tag_vocab = 7;
  st_cfg.seed = 31;
  const Dataset st = generate_st_dataset(st_cfg);
  const auto st_task = make_task_binding(st, 12, {}, 31);

  Rng rng(32);
  bool pass = true;
  for (int t = 0; t < 50 && pass; ++t) {
    ParamVector x = tc_task.model_init();
    for (double& v : x.values) v = rng.normal() * 0.5;
    pass = rel_err(tc_task, {rng.uniform_int(200), rng.uniform_int(200)}, x) <
           1e-6;
  }
  for (int t = 0; t < 50 && pass; ++t) {
    ParamVector x = st_task.model_init();
    for (double& v : x.values) v = rng.normal() * 0.5;
    pass = rel_err(st_task, {rng.uniform_int(100)}, x) < 1e-6;
  }
  report(8, "gradient correctness", pass);
}

TEST_CASE("9: the TCP backend reproduces local-bus training") {
  const auto start = std::chrono::steady_clock::now();
  bool pass = true;

  struct Scenario {
    std::size_t n_clients;
    bool secure;
    bool adamw;
  };
  const Scenario scenarios[] = {{2, false, false}, {6, false, true},
                                {6, true, false}};
  for (const Scenario& sc : scenarios) {
    const Dataset ds = tc_dataset(4, 360, 80, 33 + sc.n_clients);
    const auto task = make_task_binding(ds, 32, {}, 33 + sc.n_clients);
    RoundConfig cfg;
    cfg.total_rounds = 3;
    cfg.cohort_size = sc.n_clients;
    cfg.batch_size = 16;
    cfg.seed = 40;
    cfg.secure = sc.secure;
    if (sc.secure) cfg.weight_by_size = false;
    if (sc.adamw) {
      cfg.client_opt.variant = ClientOptVariant::AdamW;
      cfg.client_opt.lr = 0.01;
      cfg.server_opt = ServerOptConfig::fedopt();
    }
    const auto split = partition_clients(ds, sc.n_clients, 1.0, 8);

    TcpServerOptions opt;
    opt.n_clients = sc.n_clients;
    TcpServer server(opt);
    const std::uint16_t port = server.port();
    std::pair<ParamVector, std::vector<RoundRecord>> tcp_result;
    std::thread server_thread([&] { tcp_result = server.run(cfg, task); });
    std::vector<std::thread> clients;
    for (std::uint64_t id = 0; id < sc.n_clients; ++id)
      clients.emplace_back(
          [&, id] { run_client("127.0.0.1", port, id, split[id], cfg, task); });
    for (auto& t : clients) t.join();
    server_thread.join();

    LocalBusExecutor exec(task, split, cfg);
    const auto local = run_federation(sc.n_clients, cfg, task, exec).first;
    pass = pass && max_abs_diff(tcp_result.first, local) <= 1e-9;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  report(9, "cross-backend equivalence", pass && secs < 60.0);
}

TEST_CASE("10: the frame codec is robust and pinned") {
  bool pass = true;
  // Golden fixtures.
  pass = pass &&
         frame_encode(msg::Shutdown{}) == std::vector<std::uint8_t>{0, 0, 0, 1, 6};
  msg::Broadcast b;
  b.round = 1;
  b.cohort = {0, 1};
  b.layout_hash = 0x0123456789ABCDEFULL;
  b.trainable_values = {1.5, -2.0};
  const std::vector<std::uint8_t> golden = {
      0x00, 0x00, 0x00, 0x35, 0x02, 0x01, 0x00, 0x00, 0x00, 0x02, 0x00,
      0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01,
      0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xEF, 0xCD, 0xAB, 0x89,
      0x67, 0x45, 0x23, 0x01, 0x02, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
      0x00, 0x00, 0x00, 0xF8, 0x3F, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
      0x00, 0xC0};
  pass = pass && frame_encode(b) == golden;

  // 10^5 fuzzed frames: structured errors only.
  Rng rng(34);
  for (int t = 0; t < 100000 && pass; ++t) {
    std::vector<std::uint8_t> frame;
    const std::size_t len = rng.uniform_int(48);
    if (rng.uniform() < 0.5) {
      const std::uint32_t n = static_cast<std::uint32_t>(len) + 1;
      frame = {static_cast<std::uint8_t>(n >> 24),
               static_cast<std::uint8_t>(n >> 16),
               static_cast<std::uint8_t>(n >> 8), static_cast<std::uint8_t>(n),
               static_cast<std::uint8_t>(rng.uniform_int(8))};
    }
    while (frame.size() < len + 5)
      frame.push_back(static_cast<std::uint8_t>(rng.uniform_int(256)));
    try {
      (void)frame_decode(frame.data(), frame.size());
    } catch (const Error&) {
      // structured
    } catch (...) {
      pass = false;
    }
  }
  report(10, "codec robustness", pass);
}
