#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stratify/bart.hpp"
#include "stratify/postprocess.hpp"
#include "stratify/profile_regression.hpp"

namespace stratify {

// subject,yhat_arm_1,...,yhat_arm_K
void write_potential_outcomes(const PotentialOutcomeMatrix& m, const std::filesystem::path& path);
PotentialOutcomeMatrix read_potential_outcomes(const std::filesystem::path& path);

// trace.csv: iteration,alpha,n_active,z_1..z_n.
// cluster_params.csv: iteration,cluster,size followed by the parameter
// columns (mu_x[..], sigma_x[a;b], gamma[..], psi[..=..], mu_y[..],
// sigma_y[a;b]). selection.csv: mean posterior selection probabilities,
// only when the trace carries them.
void write_trace(const ChainTrace& trace, const ClusteringData& data, const std::filesystem::path& trace_path,
                 const std::filesystem::path& params_path);
// Reads allocations, alpha and (when the companion file exists) the
// cluster parameters back. Selection probabilities are not restored.
ChainTrace read_trace(const std::filesystem::path& trace_path, const std::filesystem::path& params_path,
                      const ClusteringData& data);

// Per covariate (continuous then discrete), the posterior mean of rho_j.
std::vector<double> mean_selection_probabilities(const ChainTrace& trace);
void write_selection(const ChainTrace& trace, const ClusteringData& data, const std::filesystem::path& path);

// 8-byte little-endian n followed by n * n little-endian doubles, row-major.
void write_similarity(const SimilarityMatrix& s, const std::filesystem::path& path);
SimilarityMatrix read_similarity(const std::filesystem::path& path, std::size_t iterations = 0);
void write_similarity_csv(const SimilarityMatrix& s, const std::filesystem::path& path);

// subject,cluster (subjects numbered from 1).
void write_labels(std::span<const int> labels, const std::filesystem::path& path);
// Reads the "cluster" column, or the last column when none is named so.
std::vector<int> read_labels(const std::filesystem::path& path);

// cluster,parameter,quantile,value,flag; quantile is a probability or "mean".
void write_profiles(const ClusterProfileSummary& s, const std::filesystem::path& path);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace stratify
