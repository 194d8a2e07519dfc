#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "stratify/data_model.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("stratify_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Every set partition of {0..n-1} as a restricted growth string.
inline std::vector<std::vector<int>> all_partitions(int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> a(static_cast<std::size_t>(n), 0);
  auto rec = [&](auto&& self, int i, int top) -> void {
    if (i == n) {
      out.push_back(a);
      return;
    }
    for (int v = 0; v <= top + 1; ++v) {
      a[static_cast<std::size_t>(i)] = v;
      self(self, i + 1, std::max(top, v));
    }
  };
  if (n == 0) return {{}};
  rec(rec, 0, -1);
  return out;
}

inline std::vector<int> random_labels(std::mt19937_64& g, std::size_t n, int k) {
  std::uniform_int_distribution<int> d(0, k - 1);
  std::vector<int> out(n);
  for (auto& v : out) v = d(g);
  return out;
}

inline Eigen::MatrixXd random_spd(std::mt19937_64& g, int d) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = z(g);
  return a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(d, d);
}

// Symmetric dissimilarity with zero diagonal and entries in (0, 1).
inline Eigen::MatrixXd random_dissimilarity(std::mt19937_64& g, int n) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) d(i, j) = d(j, i) = u(g);
  return d;
}

// n subjects, arms 1..k, `p1` continuous and `p2` binary covariates.
inline stratify::Dataset random_dataset(std::mt19937_64& g, std::size_t n, std::size_t arms, std::size_t p1,
                                        std::size_t p2) {
  std::normal_distribution<double> z;
  std::uniform_int_distribution<int> arm(1, static_cast<int>(arms));
  std::uniform_int_distribution<int> bin(1, 2);
  stratify::Dataset ds;
  ds.arms = arms;
  ds.continuous.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p1));
  ds.discrete.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p2));
  for (std::size_t j = 0; j < p1; ++j) ds.continuous_names.push_back("c" + std::to_string(j + 1));
  for (std::size_t j = 0; j < p2; ++j) {
    ds.discrete_names.push_back("d" + std::to_string(j + 1));
    ds.categories.push_back(2);
    ds.encodings.push_back({ds.discrete_names.back(), {"1", "2"}});
  }
  for (std::size_t i = 0; i < n; ++i) {
    ds.treatment.push_back(arm(g));
    ds.outcome.push_back(z(g));
    for (std::size_t j = 0; j < p1; ++j) ds.continuous(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = z(g);
    for (std::size_t j = 0; j < p2; ++j) ds.discrete(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = bin(g);
  }
  return ds;
}

}  // namespace testing
