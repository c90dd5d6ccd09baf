#include "fedsim/partition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

// Smallest index whose cumulative weight exceeds u * total; ties (zero-weight
// runs) resolve to the lowest index with positive weight.
std::size_t sample_categorical(Rng& rng, const std::vector<double>& weights) {
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (total <= 0.0) throw DataError("categorical sample over empty weights");
  const double threshold = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = i;
    acc += weights[i];
    if (acc > threshold) return i;
  }
  return last_positive;
}

std::vector<std::vector<std::size_t>> count_labels(
    const std::vector<std::vector<std::size_t>>& assignments,
    const std::vector<int>& labels, std::size_t n_labels) {
  std::vector<std::vector<std::size_t>> m(
      assignments.size(), std::vector<std::size_t>(n_labels, 0));
  for (std::size_t i = 0; i < assignments.size(); ++i)
    for (std::size_t idx : assignments[i])
      m[i][static_cast<std::size_t>(labels[idx])]++;
  return m;
}

// Shared by the label and cluster strategies; `labels` may be real classes or
// cluster ids.
PartitionResult label_partition_impl(const std::vector<int>& labels,
                                     const PartitionSpec& spec,
                                     std::size_t n_labels) {
  const std::size_t n = labels.size();
  const std::size_t n_clients = spec.n_clients;
  if (n == 0) throw EmptyDataset("label partition: empty dataset");
  if (n_clients == 0) throw ConfigError("label partition: n_clients must be positive");
  if (n_clients > n)
    throw TooManyClients("label partition: more clients than examples");
  if (spec.alpha <= 0.0) throw ConfigError("label partition: alpha must be positive");

  std::vector<double> prior = spec.prior;
  if (prior.empty()) prior.assign(n_labels, 1.0 / static_cast<double>(n_labels));
  if (prior.size() != n_labels)
    throw ConfigError("label partition: prior length does not match label count");
  double psum = std::accumulate(prior.begin(), prior.end(), 0.0);
  if (std::abs(psum - 1.0) > 1e-12)
    throw ConfigError("label partition: prior does not sum to 1");

  // Per-label pools, each pre-shuffled on its own substream and consumed from
  // the back, so pool order is independent of the client visit order.
  std::vector<std::vector<std::size_t>> pools(n_labels);
  for (std::size_t i = 0; i < n; ++i) {
    int l = labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= n_labels)
      throw DataError("label partition: label out of range");
    pools[static_cast<std::size_t>(l)].push_back(i);
  }
  for (std::size_t l = 0; l < n_labels; ++l) {
    Rng pool_rng(derive_seed(spec.seed, "partition/pool", l));
    pool_rng.shuffle(pools[l]);
  }
  std::vector<double> remaining(n_labels);
  for (std::size_t l = 0; l < n_labels; ++l)
    remaining[l] = static_cast<double>(pools[l].size());

  // Near-equal client sizes: the first n mod N clients take the extra one.
  const std::size_t base = n / n_clients;
  const std::size_t extras = n % n_clients;

  std::vector<std::vector<std::size_t>> assignments(n_clients);
  std::vector<double> conc(n_labels);
  for (std::size_t l = 0; l < n_labels; ++l) conc[l] = spec.alpha * prior[l];

  for (std::size_t j = 0; j < n_clients; ++j) {
    Rng rng(derive_seed(spec.seed, "partition/client", j));
    const std::vector<double> q = rng.dirichlet(conc);
    const std::size_t quota = base + (j < extras ? 1 : 0);

    // Target per-label counts: largest-remainder rounding of quota * q, so
    // the alpha extremes behave exactly (alpha -> inf gives the prior split,
    // alpha -> 0 a single-label client). Ties go to the lowest label id.
    std::vector<std::size_t> counts(n_labels, 0);
    std::vector<std::pair<double, std::size_t>> fracs(n_labels);
    std::size_t allocated = 0;
    for (std::size_t l = 0; l < n_labels; ++l) {
      const double exact = q[l] * static_cast<double>(quota);
      counts[l] = static_cast<std::size_t>(std::floor(exact));
      fracs[l] = {exact - std::floor(exact), l};
      allocated += counts[l];
    }
    std::stable_sort(fracs.begin(), fracs.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; allocated < quota; ++k, ++allocated)
      counts[fracs[k % n_labels].second]++;

    auto& mine = assignments[j];
    mine.reserve(quota);
    std::size_t deficit = 0;
    for (std::size_t l = 0; l < n_labels; ++l) {
      const std::size_t take = std::min(counts[l], pools[l].size());
      deficit += counts[l] - take;
      for (std::size_t k = 0; k < take; ++k) {
        mine.push_back(pools[l].back());
        pools[l].pop_back();
        remaining[l] -= 1.0;
      }
    }
    // Dynamic reassignment: exhausted-label vacancies are filled one example
    // at a time, replacement label drawn proportionally to the remaining
    // unassigned counts.
    for (std::size_t k = 0; k < deficit; ++k) {
      const std::size_t l = sample_categorical(rng, remaining);
      mine.push_back(pools[l].back());
      pools[l].pop_back();
      remaining[l] -= 1.0;
    }
    std::sort(mine.begin(), mine.end());
  }

  PartitionResult result;
  result.spec = spec;
  result.assignments = std::move(assignments);
  result.label_matrix = count_labels(result.assignments, labels, n_labels);
  result.n_examples = n;
  result.n_labels = n_labels;
  return result;
}

}  // namespace

std::string strategy_name(PartitionStrategy s) {
  switch (s) {
    case PartitionStrategy::LabelDirichlet: return "label_dirichlet";
    case PartitionStrategy::QuantityDirichlet: return "quantity_dirichlet";
    case PartitionStrategy::ClusterDirichlet: return "cluster_dirichlet";
    case PartitionStrategy::Natural: return "natural";
  }
  throw ConfigError("unknown partition strategy");
}

PartitionStrategy strategy_from_name(const std::string& name) {
  if (name == "label_dirichlet") return PartitionStrategy::LabelDirichlet;
  if (name == "quantity_dirichlet") return PartitionStrategy::QuantityDirichlet;
  if (name == "cluster_dirichlet") return PartitionStrategy::ClusterDirichlet;
  if (name == "natural") return PartitionStrategy::Natural;
  throw ConfigError("unknown partition strategy '" + name + "'");
}

PartitionResult dirichlet_label_partition(const std::vector<int>& labels,
                                          const PartitionSpec& spec) {
  if (spec.strategy != PartitionStrategy::LabelDirichlet)
    throw ConfigError("dirichlet_label_partition: wrong strategy in spec");
  int max_label = -1;
  for (int l : labels) max_label = std::max(max_label, l);
  if (labels.empty()) throw EmptyDataset("label partition: empty dataset");
  return label_partition_impl(labels, spec,
                              static_cast<std::size_t>(max_label) + 1);
}

PartitionResult quantity_partition(std::size_t n_examples,
                                   const PartitionSpec& spec) {
  if (spec.strategy != PartitionStrategy::QuantityDirichlet)
    throw ConfigError("quantity_partition: wrong strategy in spec");
  const std::size_t n_clients = spec.n_clients;
  if (n_examples == 0) throw EmptyDataset("quantity partition: empty dataset");
  if (n_clients == 0) throw ConfigError("quantity partition: n_clients must be positive");
  if (n_clients > n_examples)
    throw TooManyClients("quantity partition: more clients than examples");
  if (spec.beta <= 0.0) throw ConfigError("quantity partition: beta must be positive");

  Rng rng(derive_seed(spec.seed, "partition/quantity"));
  const std::vector<double> z =
      rng.dirichlet(std::vector<double>(n_clients, spec.beta));

  // Largest-remainder rounding of z_i * n, then bump zero-size clients from
  // the largest ones so every client keeps at least one example.
  std::vector<std::size_t> sizes(n_clients);
  std::vector<std::pair<double, std::size_t>> fracs(n_clients);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n_clients; ++i) {
    const double exact = z[i] * static_cast<double>(n_examples);
    sizes[i] = static_cast<std::size_t>(std::floor(exact));
    fracs[i] = {exact - std::floor(exact), i};
    assigned += sizes[i];
  }
  std::stable_sort(fracs.begin(), fracs.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });
  for (std::size_t k = 0; assigned < n_examples; ++k, ++assigned)
    sizes[fracs[k % n_clients].second]++;
  for (std::size_t i = 0; i < n_clients; ++i) {
    while (sizes[i] == 0) {
      std::size_t donor =
          std::max_element(sizes.begin(), sizes.end()) - sizes.begin();
      if (sizes[donor] <= 1) throw TooManyClients("quantity partition: cannot give every client an example");
      sizes[donor]--;
      sizes[i]++;
    }
  }

  std::vector<std::size_t> perm(n_examples);
  std::iota(perm.begin(), perm.end(), 0);
  Rng shuffle_rng(derive_seed(spec.seed, "partition/shuffle"));
  shuffle_rng.shuffle(perm);

  PartitionResult result;
  result.spec = spec;
  result.assignments.resize(n_clients);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n_clients; ++i) {
    result.assignments[i].assign(perm.begin() + pos, perm.begin() + pos + sizes[i]);
    std::sort(result.assignments[i].begin(), result.assignments[i].end());
    pos += sizes[i];
  }
  result.n_examples = n_examples;
  result.n_labels = 1;
  result.label_matrix.resize(n_clients);
  for (std::size_t i = 0; i < n_clients; ++i)
    result.label_matrix[i] = {result.assignments[i].size()};
  return result;
}

PartitionResult cluster_feature_partition(
    const std::vector<std::vector<double>>& embeddings,
    const PartitionSpec& spec) {
  if (spec.strategy != PartitionStrategy::ClusterDirichlet)
    throw ConfigError("cluster_feature_partition: wrong strategy in spec");
  if (embeddings.empty()) throw EmptyDataset("cluster partition: empty dataset");
  if (spec.n_clusters == 0)
    throw ConfigError("cluster partition: n_clusters must be positive");
  if (embeddings.size() < spec.n_clusters)
    throw DataError("cluster partition: fewer points than clusters");

  bool all_identical = true;
  for (const auto& e : embeddings)
    if (e != embeddings.front()) {
      all_identical = false;
      break;
    }
  if (all_identical)
    throw ClusteringDegenerate("cluster partition: all embeddings identical");

  const std::vector<int> cluster_ids =
      kmeans(embeddings, spec.n_clusters, derive_seed(spec.seed, "partition/kmeans"));

  PartitionSpec inner = spec;
  if (inner.prior.size() != spec.n_clusters) inner.prior.clear();
  PartitionResult result = label_partition_impl(cluster_ids, inner, spec.n_clusters);
  result.spec = spec;
  return result;
}

PartitionResult natural_partition(const std::vector<int>& group_ids) {
  if (group_ids.empty()) throw EmptyDataset("natural partition: empty dataset");
  int max_group = -1;
  for (int g : group_ids) {
    if (g < 0) throw DataError("natural partition: negative group id");
    max_group = std::max(max_group, g);
  }
  const std::size_t n_groups = static_cast<std::size_t>(max_group) + 1;

  PartitionResult result;
  result.spec.strategy = PartitionStrategy::Natural;
  result.spec.n_clients = n_groups;
  result.assignments.resize(n_groups);
  for (std::size_t i = 0; i < group_ids.size(); ++i)
    result.assignments[static_cast<std::size_t>(group_ids[i])].push_back(i);
  for (std::size_t g = 0; g < n_groups; ++g)
    if (result.assignments[g].empty())
      throw EmptyClient("natural partition: group " + std::to_string(g) +
                        " has no examples");
  result.label_matrix = count_labels(result.assignments, group_ids, n_groups);
  result.n_examples = group_ids.size();
  result.n_labels = n_groups;
  return result;
}

double js_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size())
    throw LayoutError("js_divergence: length mismatch");
  auto check = [](const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) {
      if (x < 0.0) throw DataError("js_divergence: negative probability");
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw DataError("js_divergence: probabilities do not sum to 1");
  };
  check(p);
  check(q);
  double jsd = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) jsd += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) jsd += 0.5 * q[i] * std::log2(q[i] / m);
  }
  return std::min(std::max(jsd, 0.0), 1.0);
}

std::vector<std::vector<double>> jsd_matrix(const PartitionResult& result) {
  const std::size_t n = result.label_matrix.size();
  std::vector<std::vector<double>> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t c : result.label_matrix[i]) sum += static_cast<double>(c);
    if (sum <= 0.0) throw DataError("jsd_matrix: empty label row");
    rows[i].resize(result.label_matrix[i].size());
    for (std::size_t l = 0; l < rows[i].size(); ++l)
      rows[i][l] = static_cast<double>(result.label_matrix[i][l]) / sum;
  }
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      m[i][j] = m[j][i] = js_divergence(rows[i], rows[j]);
  return m;
}

std::vector<double> embed_text(const std::vector<int>& tokens, std::size_t d,
                               std::uint64_t seed) {
  if (d < 8) throw ConfigError("embed_text: dimension must be at least 8");
  std::vector<double> v(d, 0.0);
  if (tokens.empty()) return v;  // degenerate: zero vector
  auto add = [&](std::uint64_t h) {
    const std::size_t idx = static_cast<std::size_t>(h % d);
    const double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
    v[idx] += sign;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i)
    add(derive_seed(seed, "embed/unigram", static_cast<std::uint64_t>(tokens[i])));
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
    add(derive_seed(seed, "embed/bigram", static_cast<std::uint64_t>(tokens[i]),
                    static_cast<std::uint64_t>(tokens[i + 1])));
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<int> kmeans(const std::vector<std::vector<double>>& points,
                        std::size_t k, std::uint64_t seed) {
  const std::size_t n = points.size();
  if (k == 0) throw ConfigError("kmeans: k must be positive");
  if (n < k) throw DataError("kmeans: fewer points than clusters");
  const std::size_t dim = points.front().size();

  Rng rng(seed);
  // k-means++ seeding.
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);
  centroids.push_back(points[rng.uniform_int(n)]);
  std::vector<double> d2(n);
  while (centroids.size() < k) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (const auto& c : centroids) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
    }
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    if (total <= 0.0) {
      // Remaining points coincide with existing centroids; seed uniformly.
      centroids.push_back(points[rng.uniform_int(n)]);
      continue;
    }
    const double threshold = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc > threshold) {
        pick = i;
        break;
      }
    }
    centroids.push_back(points[pick]);
  }

  std::vector<int> labels(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      int best_c = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = sq_dist(points[i], centroids[c]);
        if (d < best) {
          best = d;
          best_c = static_cast<int>(c);
        }
      }
      labels[i] = best_c;
    }

    std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      counts[labels[i]]++;
      for (std::size_t j = 0; j < dim; ++j)
        next[labels[i]][j] += points[i][j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster to the globally farthest point.
        double far_d = -1.0;
        std::size_t far_i = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = sq_dist(points[i], centroids[labels[i]]);
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        next[c] = points[far_i];
        labels[far_i] = static_cast<int>(c);
        counts[c] = 1;
      } else {
        for (std::size_t j = 0; j < dim; ++j)
          next[c][j] /= static_cast<double>(counts[c]);
      }
    }

    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      shift = std::max(shift, std::sqrt(sq_dist(next[c], centroids[c])));
    centroids = std::move(next);
    if (shift < 1e-6) break;
  }
  return labels;
}

std::string partition_to_json(const PartitionResult& result) {
  nlohmann::json j;
  j["version"] = 1;
  j["strategy"] = strategy_name(result.spec.strategy);
  j["n_clients"] = result.spec.n_clients;
  const auto s = result.spec.strategy;
  if (s == PartitionStrategy::LabelDirichlet ||
      s == PartitionStrategy::ClusterDirichlet)
    j["alpha"] = result.spec.alpha;
  else
    j["alpha"] = nullptr;
  if (s == PartitionStrategy::QuantityDirichlet)
    j["beta"] = result.spec.beta;
  else
    j["beta"] = nullptr;
  if (s == PartitionStrategy::ClusterDirichlet)
    j["n_clusters"] = result.spec.n_clusters;
  j["seed"] = result.spec.seed;
  j["n_examples"] = result.n_examples;
  j["n_labels"] = result.n_labels;
  nlohmann::json assignments = nlohmann::json::object();
  for (std::size_t i = 0; i < result.assignments.size(); ++i)
    assignments[std::to_string(i)] = result.assignments[i];
  j["assignments"] = std::move(assignments);
  j["label_matrix"] = result.label_matrix;
  return j.dump();
}

PartitionResult partition_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("partition file: ") + e.what());
  }
  try {
    PartitionResult result;
    result.spec.strategy = strategy_from_name(j.at("strategy").get<std::string>());
    result.spec.n_clients = j.at("n_clients").get<std::size_t>();
    if (!j.at("alpha").is_null()) result.spec.alpha = j["alpha"].get<double>();
    if (!j.at("beta").is_null()) result.spec.beta = j["beta"].get<double>();
    if (j.contains("n_clusters"))
      result.spec.n_clusters = j["n_clusters"].get<std::size_t>();
    result.spec.seed = j.at("seed").get<std::uint64_t>();
    result.n_examples = j.at("n_examples").get<std::size_t>();
    result.n_labels = j.at("n_labels").get<std::size_t>();
    result.assignments.resize(result.spec.n_clients);
    for (std::size_t i = 0; i < result.spec.n_clients; ++i)
      result.assignments[i] =
          j.at("assignments").at(std::to_string(i)).get<std::vector<std::size_t>>();
    result.label_matrix =
        j.at("label_matrix").get<std::vector<std::vector<std::size_t>>>();
    return result;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("partition file: ") + e.what());
  }
}

std::string jsd_matrix_csv(const std::vector<std::vector<double>>& m) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& row : m) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ',';
      out << row[j];
    }
    out << '\n';
  }
  return out.str();
}

double mean_offdiagonal(const std::vector<std::vector<double>>& m) {
  const std::size_t n = m.size();
  if (n < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) sum += m[i][j];
  return sum / static_cast<double>(n * (n - 1));
}

}  // namespace fedsim
