#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedsim {

enum class PartitionStrategy {
  LabelDirichlet,
  QuantityDirichlet,
  ClusterDirichlet,
  Natural,
};

std::string strategy_name(PartitionStrategy s);
PartitionStrategy strategy_from_name(const std::string& name);

struct PartitionSpec {
  PartitionStrategy strategy = PartitionStrategy::LabelDirichlet;
  std::size_t n_clients = 1;
  double alpha = 1.0;  // label/cluster concentration
  double beta = 1.0;   // quantity concentration
  std::vector<double> prior;  // class prior p; empty means uniform
  std::size_t n_clusters = 1;
  std::uint64_t seed = 0;
};

struct PartitionResult {
  PartitionSpec spec;
  // assignments[i] is client i's example index list, sorted ascending;
  // disjoint across clients and jointly covering {0..n_examples-1}.
  std::vector<std::vector<std::size_t>> assignments;
  // Per-client label counts, n_clients x n_labels. Row sums equal client
  // sizes. Quantity partitions use a single pseudo-label column.
  std::vector<std::vector<std::size_t>> label_matrix;
  std::size_t n_examples = 0;
  std::size_t n_labels = 0;
};

// Label-distribution shift: q_j ~ Dir_L(alpha * p) per client, near-equal
// sizes, draws label-by-label with dynamic reassignment when a label pool
// runs dry (replacement label sampled proportionally to remaining counts).
PartitionResult dirichlet_label_partition(const std::vector<int>& labels,
                                          const PartitionSpec& spec);

// Quantity shift: z ~ Dir_N(beta * 1); sizes by largest remainder, minimum 1
// per client; examples assigned by a seeded shuffle.
PartitionResult quantity_partition(std::size_t n_examples,
                                   const PartitionSpec& spec);

// Feature shift: k-means cluster ids become pseudo-labels, then the label
// path is reused with L = K.
PartitionResult cluster_feature_partition(
    const std::vector<std::vector<double>>& embeddings,
    const PartitionSpec& spec);

// One client per group id; group ids must be dense in [0, G).
PartitionResult natural_partition(const std::vector<int>& group_ids);

// Jensen-Shannon divergence, base-2 logs, 0*log0 := 0. Result in [0, 1].
double js_divergence(const std::vector<double>& p, const std::vector<double>& q);

// Pairwise JSD of normalized label_matrix rows; symmetric, zero diagonal.
std::vector<std::vector<double>> jsd_matrix(const PartitionResult& result);

// Deterministic hashed unigram+bigram embedding, L2-normalized. Empty input
// yields the zero vector.
std::vector<double> embed_text(const std::vector<int>& tokens, std::size_t d,
                               std::uint64_t seed);

// Lloyd's algorithm with k-means++ init; max 100 iterations, centroid-shift
// tolerance 1e-6; empty clusters re-seeded to the farthest point.
std::vector<int> kmeans(const std::vector<std::vector<double>>& points,
                        std::size_t k, std::uint64_t seed);

// Partition file round-trip (JSON, see docs) and the JSD matrix CSV.
std::string partition_to_json(const PartitionResult& result);
PartitionResult partition_from_json(const std::string& text);
std::string jsd_matrix_csv(const std::vector<std::vector<double>>& m);

double mean_offdiagonal(const std::vector<std::vector<double>>& m);

}  // namespace fedsim
