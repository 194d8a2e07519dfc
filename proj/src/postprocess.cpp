#include "stratify/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>

namespace stratify {

Matrix score_matrix(std::span<const int> labels) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  Matrix s(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      s(i, j) = labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
  return s;
}

namespace {

std::size_t tri_index(std::size_t n, std::size_t i, std::size_t j) {
  // Row-major upper triangle without the diagonal, i < j.
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}

}  // namespace

SimilarityAccumulator::SimilarityAccumulator(std::size_t n) : n_(n), counts_(n > 1 ? n * (n - 1) / 2 : 0, 0) {}

void SimilarityAccumulator::add(std::span<const int> labels) {
  if (labels.size() != n_)
    throw DataError("similarity: partition has " + std::to_string(labels.size()) + " labels, expected " +
                    std::to_string(n_));
  ++iterations_;
  if (n_ < 2) return;
  // Group subjects by label, then count pairs inside each group.
  std::vector<std::size_t> order(n_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });
  std::size_t start = 0;
  while (start < n_) {
    std::size_t end = start + 1;
    while (end < n_ && labels[order[end]] == labels[order[start]]) ++end;
    for (std::size_t a = start; a < end; ++a)
      for (std::size_t b = a + 1; b < end; ++b) {
        const std::size_t i = order[a];
        const std::size_t j = order[b];
        ++counts_[tri_index(n_, std::min(i, j), std::max(i, j))];
      }
    start = end;
  }
}

void SimilarityAccumulator::merge(const SimilarityAccumulator& other) {
  if (other.n_ != n_) throw DataError("similarity: cannot merge accumulators of different size");
  iterations_ += other.iterations_;
  for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += other.counts_[k];
}

SimilarityMatrix SimilarityAccumulator::result() const {
  if (iterations_ == 0) throw DataError("similarity: no iterations accumulated");
  SimilarityMatrix s;
  s.iterations = iterations_;
  const auto n = static_cast<Eigen::Index>(n_);
  s.values = Matrix::Identity(n, n);
  const double inv = 1.0 / static_cast<double>(iterations_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double v = static_cast<double>(counts_[tri_index(n_, i, j)]) * inv;
      s.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      s.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  return s;
}

SimilarityMatrix accumulate_similarity(const std::vector<std::vector<int>>& partitions) {
  if (partitions.empty()) throw DataError("similarity: no partitions given");
  SimilarityAccumulator acc(partitions.front().size());
  for (const auto& p : partitions) acc.add(p);
  return acc.result();
}

SimilarityMatrix accumulate_similarity(const ChainTrace& trace) {
  if (trace.records.empty()) throw DataError("similarity: trace has no retained iterations");
  SimilarityAccumulator acc(trace.subjects);
  for (const auto& rec : trace.records) acc.add(rec.z);
  return acc.result();
}

double medoid_cost(const Matrix& d, std::span<const std::size_t> medoids) {
  double cost = 0.0;
  for (Eigen::Index j = 0; j < d.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t m : medoids) best = std::min(best, d(static_cast<Eigen::Index>(m), j));
    cost += best;
  }
  return cost;
}

PamResult pam_partition(const Matrix& d, std::size_t k) {
  const auto n = static_cast<std::size_t>(d.rows());
  if (d.rows() != d.cols()) throw DataError("PAM: dissimilarity matrix must be square");
  if (k == 0 || k > n) throw ConfigError("PAM: k must lie in 1.." + std::to_string(n) + ", got " + std::to_string(k));
  auto D = [&](std::size_t i, std::size_t j) { return d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); };

  std::vector<std::size_t> medoids;
  std::vector<char> is_medoid(n, 0);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());

  // BUILD: greedy additions that most reduce the cost.
  for (std::size_t step = 0; step < k; ++step) {
    std::size_t best = n;
    double best_gain = -std::numeric_limits<double>::infinity();
    for (std::size_t h = 0; h < n; ++h) {
      if (is_medoid[h]) continue;
      double gain = 0.0;
      if (step == 0) {
        for (std::size_t j = 0; j < n; ++j) gain -= D(h, j);
      } else {
        for (std::size_t j = 0; j < n; ++j) gain += std::max(0.0, nearest[j] - D(h, j));
      }
      if (gain > best_gain) {
        best_gain = gain;
        best = h;
      }
    }
    medoids.push_back(best);
    is_medoid[best] = 1;
    for (std::size_t j = 0; j < n; ++j) nearest[j] = std::min(nearest[j], D(best, j));
  }

  // SWAP: best improving (medoid, non-medoid) exchange until none improves.
  std::vector<double> dn(n);
  std::vector<double> ds(n);
  std::vector<std::size_t> which(n);
  for (std::size_t guard = 0; guard < 10000; ++guard) {
    for (std::size_t j = 0; j < n; ++j) {
      dn[j] = ds[j] = std::numeric_limits<double>::infinity();
      which[j] = 0;
      for (std::size_t m = 0; m < k; ++m) {
        const double v = D(medoids[m], j);
        if (v < dn[j]) {
          ds[j] = dn[j];
          dn[j] = v;
          which[j] = m;
        } else if (v < ds[j]) {
          ds[j] = v;
        }
      }
    }
    double best_delta = -1e-12;
    std::size_t best_m = k;
    std::size_t best_h = n;
    for (std::size_t m = 0; m < k; ++m) {
      for (std::size_t h = 0; h < n; ++h) {
        if (is_medoid[h]) continue;
        double delta = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double dh = D(h, j);
          if (which[j] == m) {
            delta += std::min(dh, ds[j]) - dn[j];
          } else if (dh < dn[j]) {
            delta += dh - dn[j];
          }
        }
        if (delta < best_delta) {
          best_delta = delta;
          best_m = m;
          best_h = h;
        }
      }
    }
    if (best_m == k) break;
    is_medoid[medoids[best_m]] = 0;
    is_medoid[best_h] = 1;
    medoids[best_m] = best_h;
  }

  // Assign to the nearest medoid (lowest subject index on ties); medoids
  // always belong to their own cluster.
  std::vector<std::size_t> sorted = medoids;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> owner(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (is_medoid[j]) {
      owner[j] = j;
      continue;
    }
    std::size_t best = sorted.front();
    for (std::size_t m : sorted)
      if (D(m, j) < D(best, j)) best = m;
    owner[j] = best;
  }
  PamResult result;
  std::map<std::size_t, int> label_of;
  result.labels.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    auto it = label_of.find(owner[j]);
    if (it == label_of.end()) {
      it = label_of.emplace(owner[j], static_cast<int>(label_of.size()) + 1).first;
      result.medoids.push_back(owner[j]);
    }
    result.labels[j] = it->second;
  }
  for (std::size_t j = 0; j < n; ++j) result.cost += D(owner[j], j);
  return result;
}

double average_silhouette(const Matrix& d, std::span<const int> labels) {
  const std::size_t n = labels.size();
  if (static_cast<std::size_t>(d.rows()) != n) throw DataError("silhouette: size mismatch");
  std::map<int, std::size_t> index;
  for (int l : labels) index.emplace(l, 0);
  if (index.size() < 2) throw DataError("silhouette: at least two clusters are required");
  std::size_t next = 0;
  for (auto& [label, idx] : index) idx = next++;
  const std::size_t k = index.size();
  std::vector<std::size_t> cls(n);
  std::vector<std::size_t> size(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    cls[i] = index[labels[i]];
    ++size[cls[i]];
  }
  double total = 0.0;
  std::vector<double> sums(k);
  for (std::size_t i = 0; i < n; ++i) {
    if (size[cls[i]] == 1) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) sums[cls[j]] += d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const double a = sums[cls[i]] / static_cast<double>(size[cls[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != cls[i]) b = std::min(b, sums[c] / static_cast<double>(size[c]));
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

std::size_t default_k_max(std::size_t n) { return std::max<std::size_t>(2, std::min<std::size_t>(10, n / 10)); }

RepresentativeClustering select_representative(const SimilarityMatrix& similarity, std::size_t k_max,
                                               const WarningSink& warn) {
  const std::size_t n = similarity.size();
  if (k_max < 2) throw ConfigError("k_max must be at least 2");
  if (n < 2) throw DataError("representative clustering needs at least two subjects");
  const Matrix d = Matrix::Ones(similarity.values.rows(), similarity.values.cols()) - similarity.values;
  RepresentativeClustering best;
  best.silhouette = -std::numeric_limits<double>::infinity();
  const std::size_t top = std::min(k_max, n);
  for (std::size_t k = 2; k <= top; ++k) {
    PamResult pam = pam_partition(d, k);
    const double asw = average_silhouette(d, pam.labels);
    best.silhouette_by_k.push_back(asw);
    if (asw > best.silhouette) {
      best.silhouette = asw;
      best.k = k;
      best.labels = std::move(pam.labels);
      best.medoids = std::move(pam.medoids);
    }
  }
  if (best.silhouette < 0.2)
    warn("representative clustering: average silhouette width " + std::to_string(best.silhouette) +
         " at k = " + std::to_string(best.k) + " indicates weak structure");
  return best;
}

std::string to_string(ProfileFlag flag) {
  switch (flag) {
    case ProfileFlag::above:
      return "above";
    case ProfileFlag::below:
      return "below";
    case ProfileFlag::overlapping:
      break;
  }
  return "overlapping";
}

const ProfileEntry* ClusterProfileSummary::find(int cluster, const std::string& parameter) const {
  for (const auto& e : entries)
    if (e.cluster == cluster && e.parameter == parameter) return &e;
  return nullptr;
}

double sample_quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ClusterProfileSummary summarize_profiles(const ChainTrace& trace, const ClusteringData& data,
                                         std::span<const int> representative) {
  if (trace.records.empty()) throw DataError("profile summary: trace has no retained iterations");
  if (representative.size() != trace.subjects) throw DataError("profile summary: clustering size mismatch");
  int k = 0;
  for (int l : representative) k = std::max(k, l);
  const auto kk = static_cast<std::size_t>(k);

  std::vector<std::string> names;
  for (const auto& name : data.continuous_names) names.push_back("mu_x[" + name + "]");
  for (std::size_t j = 0; j < data.p2; ++j)
    for (const auto& level : data.levels[j]) names.push_back("psi[" + data.discrete_names[j] + "=" + level + "]");
  for (const auto& name : data.outcome_names) names.push_back("mu_y[" + name + "]");
  const std::size_t P = names.size();

  std::vector<double> rep_size(kk, 0.0);
  for (int l : representative) rep_size[static_cast<std::size_t>(l - 1)] += 1.0;

  // draws[(r * P + p)] holds one value per retained iteration.
  std::vector<std::vector<double>> draws(kk * P);
  std::vector<double> values(P);
  for (const auto& rec : trace.records) {
    const std::size_t c_count = rec.clusters.size();
    // overlap[r][c] = members of representative cluster r in iteration cluster c.
    std::vector<double> overlap(kk * c_count, 0.0);
    for (std::size_t i = 0; i < trace.subjects; ++i)
      overlap[static_cast<std::size_t>(representative[i] - 1) * c_count + static_cast<std::size_t>(rec.z[i] - 1)] += 1.0;
    for (std::size_t r = 0; r < kk; ++r) {
      std::fill(values.begin(), values.end(), 0.0);
      if (rep_size[r] == 0.0) continue;
      for (std::size_t c = 0; c < c_count; ++c) {
        const double w = overlap[r * c_count + c] / rep_size[r];
        if (w == 0.0) continue;
        const ClusterRecord& cl = rec.clusters[c];
        if (cl.mu_y.size() == 0) throw DataError("profile summary: trace was recorded without cluster parameters");
        std::size_t p = 0;
        for (std::size_t j = 0; j < data.p1; ++j) values[p++] += w * cl.mu_x(static_cast<Eigen::Index>(j));
        for (std::size_t j = 0; j < data.p2; ++j)
          for (double prob : cl.psi[j]) values[p++] += w * prob;
        for (std::size_t a = 0; a < data.outcome_dim; ++a) values[p++] += w * cl.mu_y(static_cast<Eigen::Index>(a));
      }
      for (std::size_t p = 0; p < P; ++p) draws[r * P + p].push_back(values[p]);
    }
  }

  ClusterProfileSummary summary;
  std::vector<double> average(P, 0.0);
  std::size_t populated = 0;
  for (std::size_t r = 0; r < kk; ++r) {
    if (rep_size[r] == 0.0) continue;
    ++populated;
    for (std::size_t p = 0; p < P; ++p) {
      const auto& v = draws[r * P + p];
      ProfileEntry e;
      e.cluster = static_cast<int>(r + 1);
      e.parameter = names[p];
      for (std::size_t q = 0; q < kProfileQuantiles.size(); ++q) e.quantiles[q] = sample_quantile(v, kProfileQuantiles[q]);
      e.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      average[p] += e.mean;
      summary.entries.push_back(std::move(e));
    }
  }
  for (double& a : average) a /= static_cast<double>(std::max<std::size_t>(populated, 1));
  for (auto& e : summary.entries) {
    const auto p = static_cast<std::size_t>(std::find(names.begin(), names.end(), e.parameter) - names.begin());
    if (e.quantiles[1] > average[p]) e.flag = ProfileFlag::above;
    else if (e.quantiles[5] < average[p]) e.flag = ProfileFlag::below;
    else e.flag = ProfileFlag::overlapping;
  }
  return summary;
}

}  // namespace stratify
