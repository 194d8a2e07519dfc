#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stratify/csv.hpp"

namespace stratify {

enum class CovariateKind { continuous, discrete };

struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::continuous;
  // Discrete only. 0 means "infer from the data"; a declared count may
  // exceed the number of labels actually observed.
  std::size_t categories = 0;
  // Discrete only. Explicit label order; code k is levels[k - 1].
  std::vector<std::string> levels;
};

// Column roles for one analysis. Lives in its own JSON file so a data file
// can serve several analyses.
struct Schema {
  std::vector<CovariateSpec> covariates;
  std::string treatment;
  std::string outcome;  // may be empty when benefit and risk are given
  std::optional<std::string> benefit;
  std::optional<std::string> risk;
  std::size_t arms = 0;
  double tradeoff = 0.0;  // b in U = G - b * R

  std::size_t continuous_count() const;
  std::size_t discrete_count() const;
  bool uses_utility() const { return benefit.has_value() && risk.has_value(); }

  // Throws ConfigError on duplicate names, an empty covariate list, a
  // discrete covariate declared with fewer than two categories, etc.
  void validate() const;
};

Schema schema_from_json(const nlohmann::json& j);
nlohmann::json schema_to_json(const Schema& schema);
Schema load_schema(const std::filesystem::path& path);
void save_schema(const Schema& schema, const std::filesystem::path& path);

struct UtilityConfig {
  double tradeoff = 0.0;
};

// U = G - b * R.
double compute_utility(double benefit, double risk, const UtilityConfig& cfg);

// Integer code k of a discrete covariate maps to labels[k - 1].
struct CategoryEncoding {
  std::string covariate;
  std::vector<std::string> labels;
};

struct Dataset {
  std::size_t arms = 0;
  std::vector<int> treatment;  // values in 1..arms
  std::vector<double> outcome;

  std::vector<std::string> continuous_names;
  Eigen::MatrixXd continuous;  // n x p1

  std::vector<std::string> discrete_names;
  std::vector<int> categories;  // K_j per discrete covariate
  Eigen::MatrixXi discrete;     // n x p2, codes 1..K_j
  std::vector<CategoryEncoding> encodings;

  std::size_t size() const { return treatment.size(); }
  std::size_t p1() const { return continuous_names.size(); }
  std::size_t p2() const { return discrete_names.size(); }

  // Throws DataError when any structural invariant is broken.
  void validate() const;

  bool operator==(const Dataset& other) const;
};

Dataset parse_dataset(const csv::Table& table, const Schema& schema, const std::string& source);
Dataset load_dataset(const std::filesystem::path& path, const Schema& schema);

// Schema describing the file written by write_dataset (plain outcome column,
// explicit discrete levels so the encoding is reproduced exactly).
Schema dataset_schema(const Dataset& ds, const std::string& treatment = "treatment",
                      const std::string& outcome = "outcome");
void write_dataset(const Dataset& ds, const std::filesystem::path& path,
                   const std::string& treatment = "treatment", const std::string& outcome = "outcome");

// CSV with columns covariate,label,code.
void write_encoding_table(const Dataset& ds, const std::filesystem::path& path);

// Data-wide reference profile used by variable selection: column means of
// the continuous covariates and observed category proportions of the
// discrete ones.
struct EmpiricalReference {
  std::vector<double> means;
  std::vector<std::vector<double>> proportions;
};

EmpiricalReference summarize_columns(const Dataset& ds);

}  // namespace stratify
