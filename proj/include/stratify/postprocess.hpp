#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stratify/errors.hpp"
#include "stratify/linalg.hpp"
#include "stratify/profile_regression.hpp"

namespace stratify {

// Binary co-clustering matrix of a single partition.
Matrix score_matrix(std::span<const int> labels);

struct SimilarityMatrix {
  Matrix values;
  std::size_t iterations = 0;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
};

// Running sum of score matrices as integer pair counts (upper triangle).
// Sums are exact, so the result does not depend on the order in which
// partitions or partial accumulators are combined.
class SimilarityAccumulator {
 public:
  explicit SimilarityAccumulator(std::size_t n = 0);

  void add(std::span<const int> labels);
  void merge(const SimilarityAccumulator& other);
  std::size_t iterations() const { return iterations_; }
  std::size_t size() const { return n_; }
  SimilarityMatrix result() const;

 private:
  std::size_t n_ = 0;
  std::size_t iterations_ = 0;
  std::vector<std::uint32_t> counts_;
};

SimilarityMatrix accumulate_similarity(const std::vector<std::vector<int>>& partitions);
SimilarityMatrix accumulate_similarity(const ChainTrace& trace);

struct PamResult {
  std::vector<int> labels;  // 1..k, numbered by first appearance
  std::vector<std::size_t> medoids;  // medoids[c - 1] is the medoid of label c
  double cost = 0.0;
};

// BUILD + SWAP k-medoids on a symmetric dissimilarity matrix with zero
// diagonal. Ties go to the lowest index throughout.
PamResult pam_partition(const Matrix& dissimilarity, std::size_t k);

// Sum over subjects of the dissimilarity to the closest medoid.
double medoid_cost(const Matrix& dissimilarity, std::span<const std::size_t> medoids);

// Mean silhouette width; singletons contribute 0. Needs at least two
// clusters.
double average_silhouette(const Matrix& dissimilarity, std::span<const int> labels);

struct RepresentativeClustering {
  std::vector<int> labels;
  std::size_t k = 0;
  double silhouette = 0.0;
  std::vector<std::size_t> medoids;
  std::vector<double> silhouette_by_k;  // entry k - 2 for k = 2..k_max
};

// min(10, floor(n / 10)), but never below 2.
std::size_t default_k_max(std::size_t n);

// PAM on 1 - S for k = 2..min(k_max, n); the largest average silhouette
// wins, ties going to the smaller k.
RepresentativeClustering select_representative(const SimilarityMatrix& similarity, std::size_t k_max,
                                               const WarningSink& warn = stderr_warning);

enum class ProfileFlag { above, below, overlapping };

std::string to_string(ProfileFlag flag);

inline constexpr std::array<double, 7> kProfileQuantiles{0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975};

struct ProfileEntry {
  int cluster = 0;
  std::string parameter;
  std::array<double, 7> quantiles{};
  double mean = 0.0;
  ProfileFlag flag = ProfileFlag::overlapping;
};

struct ClusterProfileSummary {
  std::vector<ProfileEntry> entries;

  const ProfileEntry* find(int cluster, const std::string& parameter) const;
};

// Sample quantile with linear interpolation between order statistics.
double sample_quantile(std::vector<double> values, double p);

// Per retained iteration, a representative cluster's value of a parameter
// is the member-weighted mean of the values of the iteration clusters its
// members belong to. Parameters: mu_x[name] (effective mean),
// psi[name=label] and mu_y[outcome]. A cluster is flagged above (below) the
// cross-cluster average when the 5% (95%) quantile lies above (below) the
// unweighted mean of the per-cluster posterior means.
ClusterProfileSummary summarize_profiles(const ChainTrace& trace, const ClusteringData& data,
                                         std::span<const int> representative);

}  // namespace stratify
