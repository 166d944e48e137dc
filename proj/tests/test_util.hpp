#ifndef TABADV_TEST_UTIL_HPP
#define TABADV_TEST_UTIL_HPP

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tabadv/dataset.hpp"
#include "tabadv/mlp.hpp"

namespace testutil {

// Central finite differences with the classic gradient-check error
// normalization: |a - n| / max(1, |a|, |n|).
inline double rel_err(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

// Numerically differentiates fn around x, writing the gradient into grad.
template <typename Fn>
Eigen::MatrixXd central_diff_matrix(Eigen::MatrixXd x, Fn fn, double h = 1e-4) {
  Eigen::MatrixXd grad(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double orig = x(i, j);
      x(i, j) = orig + h;
      const double fp = fn(x);
      x(i, j) = orig - h;
      const double fm = fn(x);
      x(i, j) = orig;
      grad(i, j) = (fp - fm) / (2.0 * h);
    }
  }
  return grad;
}

// Exact value of the zero-sum game min over column mixtures of
// max_i (A q)_i, by Shapley-Snow kernel enumeration: some square submatrix B
// yields optimal strategies p = v B^-T 1, q = v B^-1 1 with
// v = 1 / (1^T B^-1 1). Feasibility of the candidate against the full matrix
// certifies the value, so the returned number is exact up to the tolerance.
inline double matrix_game_value(const Eigen::MatrixXd& a_in, double tol = 1e-9) {
  const double shift = 1.0 - a_in.minCoeff();
  const Eigen::MatrixXd a = a_in.array() + shift;  // entries >= 1 so v != 0
  const int m = static_cast<int>(a.rows());
  const int n = static_cast<int>(a.cols());

  std::vector<std::vector<int>> row_subsets, col_subsets;
  for (int mask = 1; mask < (1 << m); ++mask) {
    std::vector<int> s;
    for (int i = 0; i < m; ++i)
      if (mask & (1 << i)) s.push_back(i);
    row_subsets.push_back(std::move(s));
  }
  for (int mask = 1; mask < (1 << n); ++mask) {
    std::vector<int> s;
    for (int j = 0; j < n; ++j)
      if (mask & (1 << j)) s.push_back(j);
    col_subsets.push_back(std::move(s));
  }

  for (const auto& rows : row_subsets) {
    for (const auto& cols : col_subsets) {
      if (rows.size() != cols.size()) continue;
      const int k = static_cast<int>(rows.size());
      Eigen::MatrixXd b(k, k);
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) b(i, j) = a(rows[i], cols[j]);

      const Eigen::FullPivLU<Eigen::MatrixXd> lu(b);
      if (!lu.isInvertible()) continue;
      const Eigen::FullPivLU<Eigen::MatrixXd> lut(b.transpose());
      const Eigen::VectorXd ones = Eigen::VectorXd::Ones(k);
      const Eigen::VectorXd binv_one = lu.solve(ones);
      const double s = binv_one.sum();
      if (std::abs(s) < 1e-12) continue;
      const double v = 1.0 / s;
      const Eigen::VectorXd q = v * binv_one;          // column mix
      const Eigen::VectorXd p = v * lut.solve(ones);   // row mix
      if ((q.array() < -tol).any() || (p.array() < -tol).any()) continue;

      // Certify optimality over the full matrix.
      Eigen::VectorXd full_q = Eigen::VectorXd::Zero(n);
      for (int j = 0; j < k; ++j) full_q[cols[j]] = std::max(q[j], 0.0);
      full_q /= full_q.sum();
      Eigen::VectorXd full_p = Eigen::VectorXd::Zero(m);
      for (int i = 0; i < k; ++i) full_p[rows[i]] = std::max(p[i], 0.0);
      full_p /= full_p.sum();

      const Eigen::VectorXd row_payoffs = a * full_q;     // adversary's options
      const Eigen::VectorXd col_payoffs = a.transpose() * full_p;
      if (row_payoffs.maxCoeff() <= v + tol && col_payoffs.minCoeff() >= v - tol)
        return v - shift;
    }
  }
  throw std::runtime_error("matrix_game_value: no kernel certified");
}

inline std::string temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("tabadv_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline std::string write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
  return path;
}

// Shared desk-scale fixture: default synthetic spec standardized with its own
// train statistics.
struct Fixture {
  tabadv::Dataset train;
  tabadv::Dataset test;
};

inline Fixture make_fixture(std::uint64_t seed, int n_train, int n_test) {
  const auto spec = tabadv::SyntheticSpec::default_spec();
  tabadv::Dataset train_raw = tabadv::synth_generate(tabadv::derive_seed(seed, 1), n_train, spec);
  tabadv::Dataset test_raw = tabadv::synth_generate(tabadv::derive_seed(seed, 2), n_test, spec);
  auto [train, stats] = tabadv::fit_standardize(train_raw);
  tabadv::Dataset test = tabadv::apply_standardize(test_raw, stats);
  return {std::move(train), std::move(test)};
}

}  // namespace testutil

#endif  // TABADV_TEST_UTIL_HPP
