#pragma once

// Mixture datasets: the in-memory layout shared by the model and baselines,
// the synthetic two-peak toy generator, CSV round-tripping, and seeded
// train/test splitting.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mixsig/errors.hpp"
#include "mixsig/linalg.hpp"
#include "mixsig/rng.hpp"

namespace mixsig {

enum class WeightMode { regression, classification };

struct MixtureDataset {
  Matrix Y_train;                       // N x M
  Matrix R_train;                       // N x C (simplex rows; one-hot in classification)
  Matrix Y_test;                        // N* x M
  std::optional<Matrix> R_test_truth;   // N* x C, held out for scoring
  Vector lambda;                        // M, strictly increasing
  WeightMode mode = WeightMode::regression;
  std::string provenance;

  // generator ground truth, kept only for synthetic data
  struct Truth {
    Vector h;                 // N+N* latent draws
    Matrix r_all;             // (N+N*) x C weight draws
    std::vector<Matrix> f;    // per component: (N+N*) x M pure signal values
    Matrix noise;             // (N+N*) x M
  };
  std::optional<Truth> truth;

  Eigen::Index n_train() const { return Y_train.rows(); }
  Eigen::Index n_test() const { return Y_test.rows(); }
  Eigen::Index n_locations() const { return lambda.size(); }
  Eigen::Index n_components() const { return R_train.cols(); }
};

inline void validate_dataset(const MixtureDataset& d) {
  if (d.Y_train.cols() != d.lambda.size() ||
      (d.Y_test.rows() > 0 && d.Y_test.cols() != d.lambda.size()))
    throw DimensionMismatch("dataset: Y column count does not match lambda");
  if (d.R_train.rows() != d.Y_train.rows())
    throw DimensionMismatch("dataset: R_train rows do not match Y_train");
  if (d.R_test_truth && d.R_test_truth->rows() != d.Y_test.rows())
    throw DimensionMismatch("dataset: R_test_truth rows do not match Y_test");
  for (Eigen::Index j = 1; j < d.lambda.size(); ++j)
    if (!(d.lambda[j] > d.lambda[j - 1])) throw Error("dataset: lambda must be strictly increasing");
  auto check_simplex = [&](const Matrix& r, const char* which) {
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      if (std::abs(r.row(i).sum() - 1.0) > 1e-8 || r.row(i).minCoeff() < -1e-8)
        throw SimplexViolation(std::string("dataset: ") + which + " row " + std::to_string(i) +
                               " is not on the simplex");
    }
  };
  check_simplex(d.R_train, "R_train");
  if (d.R_test_truth) check_simplex(*d.R_test_truth, "R_test_truth");
}

// ---------------------------------------------------------------------------
// toy generator: two Gaussian peaks that shift and scale with a scalar latent
// ---------------------------------------------------------------------------

struct ToyConfig {
  int n_train = 40;
  int n_test = 40;
  int m = 50;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
  // generator constants
  double peak_center_1 = 0.3;
  double peak_center_2 = 0.7;
  double center_shift = 0.05;  // peak shift per unit latent
  double amp_slope = 0.2;      // amplitude change per unit latent
  double peak_width = 0.08;
};

// Draw order (fixed for reproducibility): per row first h_i then r_i, all rows
// before any noise; then noise row-major. y_ij accumulates components in index
// order so the stored truth reconstructs y bitwise.
inline MixtureDataset generate_toy(const ToyConfig& cfg) {
  if (cfg.n_train < 0 || cfg.n_test < 0 || cfg.m < 2 || cfg.peak_width <= 0.0)
    throw ConfigError("generate_toy: invalid configuration");
  const int n_tot = cfg.n_train + cfg.n_test;
  const int C = 2;
  RngStream rng(cfg.seed);

  MixtureDataset d;
  d.mode = WeightMode::regression;
  d.provenance = "toy";
  d.lambda.resize(cfg.m);
  for (int j = 0; j < cfg.m; ++j) d.lambda[j] = static_cast<double>(j) / (cfg.m - 1);

  MixtureDataset::Truth truth;
  truth.h.resize(n_tot);
  truth.r_all.resize(n_tot, C);
  truth.f.assign(C, Matrix(n_tot, cfg.m));
  truth.noise.resize(n_tot, cfg.m);

  for (int i = 0; i < n_tot; ++i) {
    truth.h[i] = rng.normal();
    truth.r_all.row(i) = rng.dirichlet(Vector::Ones(C)).transpose();
  }
  for (int i = 0; i < n_tot; ++i)
    for (int j = 0; j < cfg.m; ++j) truth.noise(i, j) = cfg.noise_sigma * rng.normal();

  const double centers[2] = {cfg.peak_center_1, cfg.peak_center_2};
  Matrix y(n_tot, cfg.m);
  for (int i = 0; i < n_tot; ++i) {
    const double h = truth.h[i];
    for (int j = 0; j < cfg.m; ++j) {
      const double lam = d.lambda[j];
      double acc = 0.0;
      for (int c = 0; c < C; ++c) {
        const double dx = lam - centers[c] - cfg.center_shift * h;
        const double f = (1.0 + cfg.amp_slope * h) *
                         std::exp(-dx * dx / (2.0 * cfg.peak_width * cfg.peak_width));
        truth.f[c](i, j) = f;
        acc += truth.r_all(i, c) * f;
      }
      y(i, j) = acc + truth.noise(i, j);
    }
  }

  d.Y_train = y.topRows(cfg.n_train);
  d.R_train = truth.r_all.topRows(cfg.n_train);
  d.Y_test = y.bottomRows(cfg.n_test);
  d.R_test_truth = Matrix(truth.r_all.bottomRows(cfg.n_test));
  d.truth = std::move(truth);
  return d;
}

// ---------------------------------------------------------------------------
// CSV in/out
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void save_matrix_csv(const std::string& path, const Matrix& m,
                            const std::vector<std::string>& header = {}) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  if (!header.empty()) {
    for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << header[k];
    out << "\n";
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_double(m(i, j));
    out << "\n";
  }
}

inline Matrix load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  long lineno = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    long col = 0;
    bool header_row = false;
    while (std::getline(ss, cell, ',')) {
      ++col;
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      const bool numeric = end != cell.c_str() && *end == '\0';
      if (!numeric) {
        if (first_content_line && col == 1) {
          header_row = true;  // header detected by non-numeric first cell
          break;
        }
        throw ParseError("non-numeric cell '" + cell + "' in " + path, lineno, col);
      }
      row.push_back(v);
    }
    first_content_line = false;
    if (header_row) continue;
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError("ragged row in " + path, lineno, static_cast<long>(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("no data rows in " + path, lineno, 0);
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.front().size(); ++j) m(i, j) = rows[i][j];
  return m;
}

// Loads Y (+ optional weights and lambda). With weights the rows are training
// rows; without, they are test rows awaiting prediction. Weight rows must sum
// to 1 within 1e-6 and are renormalized exactly afterwards.
inline MixtureDataset load_csv(const std::string& path_y, const std::string& path_r = "",
                               const std::string& path_lambda = "",
                               WeightMode mode = WeightMode::regression) {
  MixtureDataset d;
  d.mode = mode;
  d.provenance = path_y;
  Matrix y = load_matrix_csv(path_y);
  if (!path_lambda.empty()) {
    Matrix lam = load_matrix_csv(path_lambda);
    if (lam.cols() == 1)
      d.lambda = lam.col(0);
    else
      d.lambda = lam.row(0).transpose();
  } else {
    d.lambda.resize(y.cols());
    for (Eigen::Index j = 0; j < y.cols(); ++j)
      d.lambda[j] = y.cols() == 1 ? 0.0 : static_cast<double>(j) / (y.cols() - 1);
  }
  if (!path_r.empty()) {
    Matrix r = load_matrix_csv(path_r);
    if (r.rows() != y.rows()) throw DimensionMismatch("load_csv: R rows do not match Y rows");
    std::string bad;
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      if (std::abs(r.row(i).sum() - 1.0) > 1e-6 || r.row(i).minCoeff() < -1e-9)
        bad += (bad.empty() ? "" : ", ") + std::to_string(i);
    }
    if (!bad.empty()) throw SimplexViolation("load_csv: weight rows not on the simplex: " + bad);
    for (Eigen::Index i = 0; i < r.rows(); ++i) r.row(i) /= r.row(i).sum();
    d.Y_train = std::move(y);
    d.R_train = std::move(r);
    d.Y_test.resize(0, d.Y_train.cols());
  } else {
    d.Y_test = std::move(y);
    d.Y_train.resize(0, d.Y_test.cols());
    d.R_train.resize(0, 0);
  }
  return d;
}

// Seeded split of the training rows into train/test. The first
// round(test_fraction*N) entries of a Fisher-Yates shuffle become test rows;
// indices are then sorted so row order within each side is stable.
inline MixtureDataset split(const MixtureDataset& data, double test_fraction, std::uint64_t seed) {
  if (data.n_train() == 0) throw Error("split: no training rows to split");
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw ConfigError("split: bad test_fraction");
  const Eigen::Index n = data.n_train();
  std::vector<Eigen::Index> idx(n);
  for (Eigen::Index i = 0; i < n; ++i) idx[i] = i;
  RngStream rng(seed);
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.next_below(static_cast<std::uint64_t>(i + 1))]);
  const Eigen::Index n_test = static_cast<Eigen::Index>(std::llround(test_fraction * n));
  std::vector<Eigen::Index> test_idx(idx.begin(), idx.begin() + n_test);
  std::vector<Eigen::Index> train_idx(idx.begin() + n_test, idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  MixtureDataset out;
  out.mode = data.mode;
  out.provenance = data.provenance;
  out.lambda = data.lambda;
  out.Y_train.resize(train_idx.size(), data.Y_train.cols());
  out.R_train.resize(train_idx.size(), data.R_train.cols());
  out.Y_test.resize(test_idx.size(), data.Y_train.cols());
  Matrix r_test(test_idx.size(), data.R_train.cols());
  for (std::size_t k = 0; k < train_idx.size(); ++k) {
    out.Y_train.row(k) = data.Y_train.row(train_idx[k]);
    out.R_train.row(k) = data.R_train.row(train_idx[k]);
  }
  for (std::size_t k = 0; k < test_idx.size(); ++k) {
    out.Y_test.row(k) = data.Y_train.row(test_idx[k]);
    r_test.row(k) = data.R_train.row(test_idx[k]);
  }
  out.R_test_truth = std::move(r_test);
  return out;
}

}  // namespace mixsig
