#include "stratify/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "stratify/errors.hpp"

namespace stratify {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

bool is_missing(std::string_view cell) {
  cell = trim(cell);
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == "null" ||
         cell == "NULL";
}

std::optional<double> parse_number(std::string_view cell) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

std::string where(const std::string& source, std::size_t row, const std::string& column) {
  return source + ": row " + std::to_string(row + 1) + ", column '" + column + "'";
}

std::size_t require_column(const csv::Table& table, const std::string& name, const std::string& source) {
  const long idx = table.column(name);
  if (idx < 0) throw DataError(source + ": missing column '" + name + "'");
  return static_cast<std::size_t>(idx);
}

double cell_number(const csv::Table& table, std::size_t row, std::size_t col, const std::string& source) {
  const std::string& cell = table.rows[row][col];
  if (is_missing(cell)) throw DataError(where(source, row, table.header[col]) + ": missing value");
  const auto value = parse_number(cell);
  if (!value) {
    throw DataError(where(source, row, table.header[col]) + ": unparseable value '" + cell + "'");
  }
  return *value;
}

// Observed labels in a stable order: numeric order when every label parses
// as a number, lexicographic otherwise.
std::vector<std::string> ordered_labels(const std::set<std::string>& observed) {
  std::vector<std::string> labels(observed.begin(), observed.end());
  const bool numeric = std::all_of(labels.begin(), labels.end(),
                                   [](const std::string& s) { return parse_number(s).has_value(); });
  if (numeric) {
    std::stable_sort(labels.begin(), labels.end(), [](const std::string& a, const std::string& b) {
      return *parse_number(a) < *parse_number(b);
    });
  }
  return labels;
}

}  // namespace

std::size_t Schema::continuous_count() const {
  return static_cast<std::size_t>(std::count_if(covariates.begin(), covariates.end(), [](const auto& c) {
    return c.kind == CovariateKind::continuous;
  }));
}

std::size_t Schema::discrete_count() const { return covariates.size() - continuous_count(); }

void Schema::validate() const {
  if (covariates.empty()) throw ConfigError("schema: at least one covariate is required");
  if (treatment.empty()) throw ConfigError("schema: treatment column name is required");
  if (arms < 1) throw ConfigError("schema: arms must be at least 1");
  if (benefit.has_value() != risk.has_value()) {
    throw ConfigError("schema: benefit and risk columns must be given together");
  }
  if (outcome.empty() && !uses_utility()) {
    throw ConfigError("schema: an outcome column or a benefit/risk pair is required");
  }
  if (!std::isfinite(tradeoff) || tradeoff < 0.0) {
    throw ConfigError("schema: tradeoff must be finite and non-negative");
  }
  std::set<std::string> names;
  auto add_name = [&](const std::string& name) {
    if (name.empty()) throw ConfigError("schema: empty column name");
    if (!names.insert(name).second) throw ConfigError("schema: duplicate column name '" + name + "'");
  };
  add_name(treatment);
  if (!outcome.empty()) add_name(outcome);
  if (benefit) add_name(*benefit);
  if (risk) add_name(*risk);
  for (const auto& cov : covariates) {
    add_name(cov.name);
    if (cov.kind == CovariateKind::discrete) {
      if (!cov.levels.empty()) {
        const std::set<std::string> unique(cov.levels.begin(), cov.levels.end());
        if (unique.size() != cov.levels.size()) {
          throw ConfigError("schema: duplicate level in covariate '" + cov.name + "'");
        }
        if (cov.categories != 0 && cov.categories != cov.levels.size()) {
          throw ConfigError("schema: categories and levels disagree for '" + cov.name + "'");
        }
      }
      const std::size_t declared = cov.levels.empty() ? cov.categories : cov.levels.size();
      if (declared == 1) {
        throw ConfigError("schema: discrete covariate '" + cov.name + "' needs at least 2 categories");
      }
    }
  }
}

Schema schema_from_json(const nlohmann::json& j) {
  Schema schema;
  try {
    schema.treatment = j.at("treatment").get<std::string>();
    schema.outcome = j.value("outcome", std::string{});
    if (j.contains("benefit")) schema.benefit = j.at("benefit").get<std::string>();
    if (j.contains("risk")) schema.risk = j.at("risk").get<std::string>();
    schema.arms = j.at("arms").get<std::size_t>();
    schema.tradeoff = j.value("tradeoff", 0.0);
    for (const auto& c : j.at("covariates")) {
      CovariateSpec spec;
      spec.name = c.at("name").get<std::string>();
      const std::string kind = c.value("kind", std::string("continuous"));
      if (kind == "continuous") {
        spec.kind = CovariateKind::continuous;
      } else if (kind == "discrete") {
        spec.kind = CovariateKind::discrete;
        spec.categories = c.value("categories", std::size_t{0});
        if (c.contains("levels")) {
          for (const auto& level : c.at("levels")) {
            spec.levels.push_back(level.is_string() ? level.get<std::string>() : level.dump());
          }
        }
      } else {
        throw ConfigError("schema: unknown covariate kind '" + kind + "'");
      }
      schema.covariates.push_back(std::move(spec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  schema.validate();
  return schema;
}

nlohmann::json schema_to_json(const Schema& schema) {
  nlohmann::json j;
  j["treatment"] = schema.treatment;
  if (!schema.outcome.empty()) j["outcome"] = schema.outcome;
  if (schema.benefit) j["benefit"] = *schema.benefit;
  if (schema.risk) j["risk"] = *schema.risk;
  j["arms"] = schema.arms;
  j["tradeoff"] = schema.tradeoff;
  j["covariates"] = nlohmann::json::array();
  for (const auto& cov : schema.covariates) {
    nlohmann::json c;
    c["name"] = cov.name;
    c["kind"] = cov.kind == CovariateKind::continuous ? "continuous" : "discrete";
    if (cov.kind == CovariateKind::discrete) {
      if (cov.categories != 0) c["categories"] = cov.categories;
      if (!cov.levels.empty()) c["levels"] = cov.levels;
    }
    j["covariates"].push_back(std::move(c));
  }
  return j;
}

Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return schema_from_json(j);
}

void save_schema(const Schema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << schema_to_json(schema).dump(2) << '\n';
}

double compute_utility(double benefit, double risk, const UtilityConfig& cfg) {
  return benefit - cfg.tradeoff * risk;
}

void Dataset::validate() const {
  const std::size_t n = size();
  if (arms < 1) throw DataError("dataset: arm count must be at least 1");
  if (outcome.size() != n) throw DataError("dataset: outcome length mismatch");
  if (continuous_names.size() + discrete_names.size() == 0) throw DataError("dataset: no covariates");
  if (static_cast<std::size_t>(continuous.rows()) != n || static_cast<std::size_t>(continuous.cols()) != p1()) {
    throw DataError("dataset: continuous covariate matrix has the wrong shape");
  }
  if (static_cast<std::size_t>(discrete.rows()) != n || static_cast<std::size_t>(discrete.cols()) != p2()) {
    throw DataError("dataset: discrete covariate matrix has the wrong shape");
  }
  if (categories.size() != p2() || encodings.size() != p2()) {
    throw DataError("dataset: discrete metadata length mismatch");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (treatment[i] < 1 || static_cast<std::size_t>(treatment[i]) > arms) {
      throw DataError("dataset: treatment out of range at row " + std::to_string(i + 1));
    }
    if (!std::isfinite(outcome[i])) throw DataError("dataset: non-finite outcome at row " + std::to_string(i + 1));
    for (std::size_t j = 0; j < p2(); ++j) {
      const int code = discrete(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (code < 1 || code > categories[j]) {
        throw DataError("dataset: category code out of range at row " + std::to_string(i + 1));
      }
    }
  }
  if (!continuous.allFinite()) throw DataError("dataset: non-finite continuous covariate");
}

bool Dataset::operator==(const Dataset& o) const {
  if (arms != o.arms || treatment != o.treatment || outcome != o.outcome) return false;
  if (continuous_names != o.continuous_names || discrete_names != o.discrete_names) return false;
  if (categories != o.categories) return false;
  if (continuous.rows() != o.continuous.rows() || continuous.cols() != o.continuous.cols()) return false;
  if (discrete.rows() != o.discrete.rows() || discrete.cols() != o.discrete.cols()) return false;
  if (continuous != o.continuous || discrete != o.discrete) return false;
  for (std::size_t j = 0; j < encodings.size(); ++j) {
    if (encodings[j].covariate != o.encodings[j].covariate || encodings[j].labels != o.encodings[j].labels) {
      return false;
    }
  }
  return encodings.size() == o.encodings.size();
}

Dataset parse_dataset(const csv::Table& table, const Schema& schema, const std::string& source) {
  schema.validate();
  const std::size_t n = table.rows.size();
  Dataset ds;
  ds.arms = schema.arms;
  ds.treatment.resize(n);
  ds.outcome.resize(n);

  const std::size_t treat_col = require_column(table, schema.treatment, source);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& cell = table.rows[i][treat_col];
    if (is_missing(cell)) throw DataError(where(source, i, schema.treatment) + ": missing value");
    const auto value = parse_number(cell);
    if (!value || std::floor(*value) != *value) {
      throw DataError(where(source, i, schema.treatment) + ": treatment '" + cell + "' is not an integer arm");
    }
    if (*value < 1.0 || *value > static_cast<double>(schema.arms)) {
      throw DataError(where(source, i, schema.treatment) + ": treatment " + cell + " outside 1.." +
                      std::to_string(schema.arms));
    }
    ds.treatment[i] = static_cast<int>(*value);
  }

  if (schema.uses_utility()) {
    const std::size_t g_col = require_column(table, *schema.benefit, source);
    const std::size_t r_col = require_column(table, *schema.risk, source);
    const UtilityConfig cfg{schema.tradeoff};
    for (std::size_t i = 0; i < n; ++i) {
      ds.outcome[i] = compute_utility(cell_number(table, i, g_col, source), cell_number(table, i, r_col, source), cfg);
    }
  } else {
    const std::size_t y_col = require_column(table, schema.outcome, source);
    for (std::size_t i = 0; i < n; ++i) ds.outcome[i] = cell_number(table, i, y_col, source);
  }

  std::vector<std::size_t> cont_cols;
  std::vector<const CovariateSpec*> disc_specs;
  std::vector<std::size_t> disc_cols;
  for (const auto& cov : schema.covariates) {
    const std::size_t col = require_column(table, cov.name, source);
    if (cov.kind == CovariateKind::continuous) {
      ds.continuous_names.push_back(cov.name);
      cont_cols.push_back(col);
    } else {
      ds.discrete_names.push_back(cov.name);
      disc_specs.push_back(&cov);
      disc_cols.push_back(col);
    }
  }

  ds.continuous.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cont_cols.size()));
  for (std::size_t j = 0; j < cont_cols.size(); ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      ds.continuous(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          cell_number(table, i, cont_cols[j], source);
    }
  }

  ds.discrete.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(disc_cols.size()));
  for (std::size_t j = 0; j < disc_cols.size(); ++j) {
    const CovariateSpec& spec = *disc_specs[j];
    const std::size_t col = disc_cols[j];
    std::set<std::string> observed;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string& cell = table.rows[i][col];
      if (is_missing(cell)) throw DataError(where(source, i, spec.name) + ": missing value");
      observed.insert(std::string(trim(cell)));
    }
    std::vector<std::string> labels;
    if (!spec.levels.empty()) {
      labels = spec.levels;
    } else {
      labels = ordered_labels(observed);
      if (spec.categories != 0) {
        if (labels.size() > spec.categories) {
          throw DataError(source + ": column '" + spec.name + "' has " + std::to_string(labels.size()) +
                          " labels but " + std::to_string(spec.categories) + " categories were declared");
        }
        for (std::size_t k = labels.size(); k < spec.categories; ++k) {
          labels.push_back("?" + std::to_string(k + 1));
        }
      }
    }
    if (labels.size() < 2) {
      throw DataError(source + ": discrete column '" + spec.name + "' needs at least 2 categories");
    }
    std::map<std::string, int> code_of;
    for (std::size_t k = 0; k < labels.size(); ++k) code_of[labels[k]] = static_cast<int>(k + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string label(trim(table.rows[i][col]));
      const auto it = code_of.find(label);
      if (it == code_of.end()) {
        throw DataError(where(source, i, spec.name) + ": label '" + label + "' is not a declared level");
      }
      ds.discrete(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = it->second;
    }
    ds.categories.push_back(static_cast<int>(labels.size()));
    ds.encodings.push_back({spec.name, std::move(labels)});
  }

  ds.validate();
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, const Schema& schema) {
  return parse_dataset(csv::read(path), schema, path.string());
}

Schema dataset_schema(const Dataset& ds, const std::string& treatment, const std::string& outcome) {
  Schema schema;
  schema.treatment = treatment;
  schema.outcome = outcome;
  schema.arms = ds.arms;
  for (const auto& name : ds.continuous_names) schema.covariates.push_back({name, CovariateKind::continuous, 0, {}});
  for (std::size_t j = 0; j < ds.p2(); ++j) {
    schema.covariates.push_back({ds.discrete_names[j], CovariateKind::discrete,
                                 static_cast<std::size_t>(ds.categories[j]), ds.encodings[j].labels});
  }
  return schema;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path, const std::string& treatment,
                   const std::string& outcome) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  std::vector<std::string> header{treatment, outcome};
  header.insert(header.end(), ds.continuous_names.begin(), ds.continuous_names.end());
  header.insert(header.end(), ds.discrete_names.begin(), ds.discrete_names.end());
  csv::write_row(out, header);
  std::vector<std::string> row;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    row.clear();
    row.push_back(std::to_string(ds.treatment[i]));
    row.push_back(csv::format_double(ds.outcome[i]));
    for (Eigen::Index j = 0; j < ds.continuous.cols(); ++j) row.push_back(csv::format_double(ds.continuous(r, j)));
    for (std::size_t j = 0; j < ds.p2(); ++j) {
      const int code = ds.discrete(r, static_cast<Eigen::Index>(j));
      row.push_back(ds.encodings[j].labels[static_cast<std::size_t>(code - 1)]);
    }
    csv::write_row(out, row);
  }
}

void write_encoding_table(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_row(out, {"covariate", "label", "code"});
  for (const auto& enc : ds.encodings) {
    for (std::size_t k = 0; k < enc.labels.size(); ++k) {
      csv::write_row(out, {enc.covariate, enc.labels[k], std::to_string(k + 1)});
    }
  }
}

EmpiricalReference summarize_columns(const Dataset& ds) {
  EmpiricalReference ref;
  const std::size_t n = ds.size();
  if (n == 0) return ref;
  for (Eigen::Index j = 0; j < ds.continuous.cols(); ++j) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < ds.continuous.rows(); ++i) sum += ds.continuous(i, j);
    ref.means.push_back(sum / static_cast<double>(n));
  }
  for (std::size_t j = 0; j < ds.p2(); ++j) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(ds.categories[j]), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[static_cast<std::size_t>(ds.discrete(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - 1)];
    }
    std::vector<double> props(counts.size());
    for (std::size_t k = 0; k < counts.size(); ++k) {
      props[k] = static_cast<double>(counts[k]) / static_cast<double>(n);
    }
    ref.proportions.push_back(std::move(props));
  }
  return ref;
}

}  // namespace stratify
