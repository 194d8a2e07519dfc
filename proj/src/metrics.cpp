#include "stratify/metrics.hpp"

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "stratify/errors.hpp"

namespace stratify {

namespace {

struct Contingency {
  std::map<std::pair<int, int>, double> cells;
  std::map<int, double> rows;  // truth
  std::map<int, double> cols;  // pred
  double n = 0.0;
};

Contingency tabulate(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size())
    throw DataError("partition lengths differ: " + std::to_string(truth.size()) + " vs " + std::to_string(pred.size()));
  Contingency t;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    t.cells[{truth[i], pred[i]}] += 1.0;
    t.rows[truth[i]] += 1.0;
    t.cols[pred[i]] += 1.0;
  }
  t.n = static_cast<double>(truth.size());
  return t;
}

double entropy(const std::map<int, double>& counts, double n) {
  double h = 0.0;
  for (const auto& [label, c] : counts)
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  return h;
}

// H(truth | pred) when first_given_second is set, else H(pred | truth).
double conditional_entropy(const Contingency& t, bool first_given_second) {
  const auto& given = first_given_second ? t.cols : t.rows;
  double h = 0.0;
  for (const auto& [key, c] : t.cells) {
    const double g = given.at(first_given_second ? key.second : key.first);
    h -= (c / t.n) * std::log(c / g);
  }
  return h;
}

}  // namespace

double adjusted_rand_index(std::span<const int> truth, std::span<const int> pred) {
  const Contingency t = tabulate(truth, pred);
  if (t.n < 2.0) throw DataError("adjusted Rand index needs at least two subjects");
  // Pair counts are integers; with N = C(n, 2) the index is
  // (N sum_ij - a b) / (N (a + b) / 2 - a b), evaluated exactly in 128-bit
  // integers up to the final division.
  using Wide = __int128;
  auto pairs = [](double c) { return static_cast<Wide>(c) * (static_cast<Wide>(c) - 1) / 2; };
  Wide index = 0;
  for (const auto& [key, c] : t.cells) index += pairs(c);
  Wide a = 0;
  for (const auto& [key, c] : t.rows) a += pairs(c);
  Wide b = 0;
  for (const auto& [key, c] : t.cols) b += pairs(c);
  const Wide total = pairs(t.n);
  const Wide num = 2 * (total * index - a * b);
  const Wide den = total * (a + b) - 2 * a * b;
  if (den == 0) return 1.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

double homogeneity(std::span<const int> truth, std::span<const int> pred) {
  const Contingency t = tabulate(truth, pred);
  if (t.n == 0.0) return 1.0;
  const double h_c = entropy(t.rows, t.n);
  if (h_c == 0.0) return 1.0;
  return 1.0 - conditional_entropy(t, true) / h_c;
}

double completeness(std::span<const int> truth, std::span<const int> pred) {
  const Contingency t = tabulate(truth, pred);
  if (t.n == 0.0) return 1.0;
  const double h_k = entropy(t.cols, t.n);
  if (h_k == 0.0) return 1.0;
  return 1.0 - conditional_entropy(t, false) / h_k;
}

std::size_t count_labels(std::span<const int> labels) { return std::set<int>(labels.begin(), labels.end()).size(); }

ClusteringMetrics evaluate_clustering(std::span<const int> truth, std::span<const int> pred) {
  ClusteringMetrics m;
  m.ari = adjusted_rand_index(truth, pred);
  m.homogeneity = homogeneity(truth, pred);
  m.completeness = completeness(truth, pred);
  m.n_clusters_pred = count_labels(pred);
  m.n_clusters_true = count_labels(truth);
  return m;
}

nlohmann::json to_json(const ClusteringMetrics& m) {
  return nlohmann::json{{"ari", m.ari},
                        {"homogeneity", m.homogeneity},
                        {"completeness", m.completeness},
                        {"n_clusters_pred", m.n_clusters_pred},
                        {"n_clusters_true", m.n_clusters_true}};
}

}  // namespace stratify
