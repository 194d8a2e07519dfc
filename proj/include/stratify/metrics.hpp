#pragma once

#include <cstddef>
#include <span>

#include <json.hpp>

namespace stratify {

// External validation of a clustering against known classes. Labels may
// use any integer alphabet. Entropies use natural logarithms.

// Hubert-Arabie adjusted Rand index. Two single-cluster partitions score 1.
double adjusted_rand_index(std::span<const int> truth, std::span<const int> pred);

// 1 - H(C|K) / H(C); 1 when the classes have zero entropy.
double homogeneity(std::span<const int> truth, std::span<const int> pred);

// 1 - H(K|C) / H(K); 1 when the clusters have zero entropy.
double completeness(std::span<const int> truth, std::span<const int> pred);

std::size_t count_labels(std::span<const int> labels);

struct ClusteringMetrics {
  double ari = 0.0;
  double homogeneity = 0.0;
  double completeness = 0.0;
  std::size_t n_clusters_pred = 0;
  std::size_t n_clusters_true = 0;
};

ClusteringMetrics evaluate_clustering(std::span<const int> truth, std::span<const int> pred);
nlohmann::json to_json(const ClusteringMetrics& m);

}  // namespace stratify
