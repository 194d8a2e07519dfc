#include "stratify/artifacts.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "stratify/csv.hpp"
#include "stratify/errors.hpp"

namespace stratify {

namespace {

std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

double parse_number(const std::string& field, const std::filesystem::path& path, std::size_t row) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw DataError(path.string() + ": row " + std::to_string(row + 1) + ": '" + field + "' is not a number");
  }
}

int parse_int(const std::string& field, const std::filesystem::path& path, std::size_t row) {
  const double v = parse_number(field, path, row);
  if (v != static_cast<double>(static_cast<int>(v)))
    throw DataError(path.string() + ": row " + std::to_string(row + 1) + ": '" + field + "' is not an integer");
  return static_cast<int>(v);
}

std::vector<std::string> param_header(const ClusteringData& data) {
  std::vector<std::string> h{"iteration", "cluster", "size"};
  for (const auto& name : data.continuous_names) h.push_back("mu_x[" + name + "]");
  for (const auto& a : data.continuous_names)
    for (const auto& b : data.continuous_names) h.push_back("sigma_x[" + a + ";" + b + "]");
  for (const auto& name : data.continuous_names) h.push_back("gamma[" + name + "]");
  for (const auto& name : data.discrete_names) h.push_back("gamma[" + name + "]");
  for (std::size_t j = 0; j < data.p2; ++j)
    for (const auto& level : data.levels[j]) h.push_back("psi[" + data.discrete_names[j] + "=" + level + "]");
  for (const auto& name : data.outcome_names) h.push_back("mu_y[" + name + "]");
  for (const auto& a : data.outcome_names)
    for (const auto& b : data.outcome_names) h.push_back("sigma_y[" + a + ";" + b + "]");
  return h;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int k = 0; k < 8; ++k) bytes[k] = static_cast<unsigned char>(v >> (8 * k));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
  return v;
}

}  // namespace

void write_potential_outcomes(const PotentialOutcomeMatrix& m, const std::filesystem::path& path) {
  auto out = open_out(path);
  std::vector<std::string> row{"subject"};
  for (std::size_t a = 0; a < m.arms(); ++a) row.push_back("yhat_arm_" + std::to_string(a + 1));
  csv::write_row(out, row);
  for (std::size_t i = 0; i < m.subjects(); ++i) {
    row.assign(1, std::to_string(i + 1));
    for (std::size_t a = 0; a < m.arms(); ++a)
      row.push_back(csv::format_double(m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a))));
    csv::write_row(out, row);
  }
}

PotentialOutcomeMatrix read_potential_outcomes(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  if (t.header.size() < 2 || t.header[0] != "subject") throw DataError(path.string() + ": expected subject,yhat_arm_* columns");
  PotentialOutcomeMatrix m;
  const std::size_t arms = t.header.size() - 1;
  for (std::size_t a = 0; a < arms; ++a) m.arm_labels.push_back("arm_" + std::to_string(a + 1));
  m.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(arms));
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t a = 0; a < arms; ++a)
      m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = parse_number(t.rows[i][a + 1], path, i);
  return m;
}

void write_trace(const ChainTrace& trace, const ClusteringData& data, const std::filesystem::path& trace_path,
                 const std::filesystem::path& params_path) {
  {
    auto out = open_out(trace_path);
    std::vector<std::string> row{"iteration", "alpha", "n_active"};
    for (std::size_t i = 0; i < trace.subjects; ++i) row.push_back("z_" + std::to_string(i + 1));
    csv::write_row(out, row);
    for (const auto& rec : trace.records) {
      row = {std::to_string(rec.iteration), csv::format_double(rec.alpha), std::to_string(rec.active())};
      for (int z : rec.z) row.push_back(std::to_string(z));
      csv::write_row(out, row);
    }
  }
  auto out = open_out(params_path);
  csv::write_row(out, param_header(data));
  std::vector<std::string> row;
  for (const auto& rec : trace.records) {
    for (std::size_t c = 0; c < rec.clusters.size(); ++c) {
      const ClusterRecord& cl = rec.clusters[c];
      if (cl.mu_y.size() == 0) continue;
      row = {std::to_string(rec.iteration), std::to_string(c + 1), std::to_string(cl.size)};
      for (Eigen::Index j = 0; j < cl.mu_x.size(); ++j) row.push_back(csv::format_double(cl.mu_x(j)));
      for (Eigen::Index a = 0; a < cl.sigma_x.rows(); ++a)
        for (Eigen::Index b = 0; b < cl.sigma_x.cols(); ++b) row.push_back(csv::format_double(cl.sigma_x(a, b)));
      for (int g : cl.gamma_x) row.push_back(std::to_string(g));
      for (int g : cl.gamma_d) row.push_back(std::to_string(g));
      for (const auto& probs : cl.psi)
        for (double p : probs) row.push_back(csv::format_double(p));
      for (Eigen::Index a = 0; a < cl.mu_y.size(); ++a) row.push_back(csv::format_double(cl.mu_y(a)));
      for (Eigen::Index a = 0; a < cl.sigma_y.rows(); ++a)
        for (Eigen::Index b = 0; b < cl.sigma_y.cols(); ++b) row.push_back(csv::format_double(cl.sigma_y(a, b)));
      csv::write_row(out, row);
    }
  }
}

ChainTrace read_trace(const std::filesystem::path& trace_path, const std::filesystem::path& params_path,
                      const ClusteringData& data) {
  const csv::Table t = csv::read(trace_path);
  if (t.header.size() < 3 || t.header[0] != "iteration") throw DataError(trace_path.string() + ": not a trace file");
  ChainTrace trace;
  trace.subjects = t.header.size() - 3;
  std::map<std::size_t, std::size_t> by_iteration;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    IterationRecord rec;
    rec.iteration = static_cast<std::size_t>(parse_int(t.rows[r][0], trace_path, r));
    rec.alpha = parse_number(t.rows[r][1], trace_path, r);
    const auto active = static_cast<std::size_t>(parse_int(t.rows[r][2], trace_path, r));
    rec.z.resize(trace.subjects);
    for (std::size_t i = 0; i < trace.subjects; ++i) {
      rec.z[i] = parse_int(t.rows[r][i + 3], trace_path, r);
      if (rec.z[i] < 1 || static_cast<std::size_t>(rec.z[i]) > active)
        throw DataError(trace_path.string() + ": row " + std::to_string(r + 1) + ": label out of range");
    }
    rec.clusters.resize(active);
    for (int z : rec.z) ++rec.clusters[static_cast<std::size_t>(z - 1)].size;
    by_iteration[rec.iteration] = trace.records.size();
    trace.records.push_back(std::move(rec));
  }
  if (!std::filesystem::exists(params_path)) return trace;

  const csv::Table p = csv::read(params_path);
  if (p.header != param_header(data))
    throw DataError(params_path.string() + ": columns do not match the data set");
  const auto p1 = static_cast<Eigen::Index>(data.p1);
  const auto k = static_cast<Eigen::Index>(data.outcome_dim);
  for (std::size_t r = 0; r < p.rows.size(); ++r) {
    const auto& f = p.rows[r];
    const auto it = by_iteration.find(static_cast<std::size_t>(parse_int(f[0], params_path, r)));
    if (it == by_iteration.end()) throw DataError(params_path.string() + ": row " + std::to_string(r + 1) + ": unknown iteration");
    IterationRecord& rec = trace.records[it->second];
    const int c = parse_int(f[1], params_path, r);
    if (c < 1 || static_cast<std::size_t>(c) > rec.clusters.size())
      throw DataError(params_path.string() + ": row " + std::to_string(r + 1) + ": unknown cluster");
    ClusterRecord& cl = rec.clusters[static_cast<std::size_t>(c - 1)];
    std::size_t col = 3;
    auto next = [&]() { return parse_number(f[col++], params_path, r); };
    cl.mu_x.resize(p1);
    for (Eigen::Index j = 0; j < p1; ++j) cl.mu_x(j) = next();
    cl.sigma_x.resize(p1, p1);
    for (Eigen::Index a = 0; a < p1; ++a)
      for (Eigen::Index b = 0; b < p1; ++b) cl.sigma_x(a, b) = next();
    cl.gamma_x.resize(data.p1);
    for (auto& g : cl.gamma_x) g = static_cast<int>(next());
    cl.gamma_d.resize(data.p2);
    for (auto& g : cl.gamma_d) g = static_cast<int>(next());
    cl.psi.assign(data.p2, {});
    for (std::size_t j = 0; j < data.p2; ++j) {
      cl.psi[j].resize(static_cast<std::size_t>(data.categories[j]));
      for (auto& v : cl.psi[j]) v = next();
    }
    cl.mu_y.resize(k);
    for (Eigen::Index a = 0; a < k; ++a) cl.mu_y(a) = next();
    cl.sigma_y.resize(k, k);
    for (Eigen::Index a = 0; a < k; ++a)
      for (Eigen::Index b = 0; b < k; ++b) cl.sigma_y(a, b) = next();
  }
  return trace;
}

std::vector<double> mean_selection_probabilities(const ChainTrace& trace) {
  std::vector<double> mean;
  for (const auto& rec : trace.records) {
    std::vector<double> rho = rec.rho_x;
    rho.insert(rho.end(), rec.rho_d.begin(), rec.rho_d.end());
    if (mean.empty()) mean.assign(rho.size(), 0.0);
    for (std::size_t j = 0; j < rho.size() && j < mean.size(); ++j) mean[j] += rho[j];
  }
  for (double& m : mean) m /= static_cast<double>(trace.records.size());
  return mean;
}

void write_selection(const ChainTrace& trace, const ClusteringData& data, const std::filesystem::path& path) {
  const std::vector<double> rho = mean_selection_probabilities(trace);
  auto out = open_out(path);
  csv::write_row(out, {"covariate", "rho"});
  std::vector<std::string> names = data.continuous_names;
  names.insert(names.end(), data.discrete_names.begin(), data.discrete_names.end());
  for (std::size_t j = 0; j < names.size() && j < rho.size(); ++j) csv::write_row(out, {names[j], csv::format_double(rho[j])});
}

void write_similarity(const SimilarityMatrix& s, const std::filesystem::path& path) {
  auto out = open_out(path, true);
  const std::size_t n = s.size();
  put_u64(out, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double v = s.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  if (!out) throw DataError("failed writing " + path.string());
}

SimilarityMatrix read_similarity(const std::filesystem::path& path, std::size_t iterations) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  const std::uint64_t n = get_u64(in);
  if (!in) throw DataError(path.string() + ": truncated header");
  const auto size = std::filesystem::file_size(path);
  if (size != 8 + n * n * 8) throw DataError(path.string() + ": size does not match the declared dimension");
  SimilarityMatrix s;
  s.iterations = iterations;
  const auto ne = static_cast<Eigen::Index>(n);
  s.values.resize(ne, ne);
  for (Eigen::Index i = 0; i < ne; ++i)
    for (Eigen::Index j = 0; j < ne; ++j) s.values(i, j) = std::bit_cast<double>(get_u64(in));
  return s;
}

void write_similarity_csv(const SimilarityMatrix& s, const std::filesystem::path& path) {
  auto out = open_out(path);
  std::vector<std::string> row;
  for (std::size_t j = 0; j < s.size(); ++j) row.push_back("s_" + std::to_string(j + 1));
  csv::write_row(out, row);
  for (Eigen::Index i = 0; i < s.values.rows(); ++i) {
    row.clear();
    for (Eigen::Index j = 0; j < s.values.cols(); ++j) row.push_back(csv::format_double(s.values(i, j)));
    csv::write_row(out, row);
  }
}

void write_labels(std::span<const int> labels, const std::filesystem::path& path) {
  auto out = open_out(path);
  csv::write_row(out, {"subject", "cluster"});
  for (std::size_t i = 0; i < labels.size(); ++i) csv::write_row(out, {std::to_string(i + 1), std::to_string(labels[i])});
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("labels file not found: " + path.string());
  const csv::Table t = csv::read(path);
  if (t.header.empty()) throw DataError(path.string() + ": empty labels file");
  long col = t.column("cluster");
  if (col < 0) col = static_cast<long>(t.header.size()) - 1;
  std::vector<int> labels;
  labels.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    labels.push_back(parse_int(t.rows[r][static_cast<std::size_t>(col)], path, r));
  return labels;
}

void write_profiles(const ClusterProfileSummary& s, const std::filesystem::path& path) {
  auto out = open_out(path);
  csv::write_row(out, {"cluster", "parameter", "quantile", "value", "flag"});
  for (const auto& e : s.entries) {
    const std::string cluster = std::to_string(e.cluster);
    const std::string flag = to_string(e.flag);
    for (std::size_t q = 0; q < kProfileQuantiles.size(); ++q)
      csv::write_row(out, {cluster, e.parameter, csv::format_double(kProfileQuantiles[q]), csv::format_double(e.quantiles[q]), flag});
    csv::write_row(out, {cluster, e.parameter, "mean", csv::format_double(e.mean), flag});
  }
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

}  // namespace stratify
