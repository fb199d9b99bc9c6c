#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "sdfbayes/core.hpp"

namespace sdfb {

/// Standardized dose levels of the two drugs. Both vectors are strictly
/// increasing; the default lattice is u = (-2,-1,0), v = (-3,-2,-1,0).
class DoseGrid {
 public:
  DoseGrid() : DoseGrid({-2.0, -1.0, 0.0}, {-3.0, -2.0, -1.0, 0.0}) {}
  DoseGrid(std::vector<double> dose_a, std::vector<double> dose_b)
      : u_(std::move(dose_a)), v_(std::move(dose_b)) {
    if (u_.empty() || v_.empty()) throw shape_error("dose grid needs at least one level per drug");
    for (std::size_t i = 1; i < u_.size(); ++i)
      if (!(u_[i] > u_[i - 1])) throw invalid_parameter_error("drug-A doses must be strictly increasing");
    for (std::size_t i = 1; i < v_.size(); ++i)
      if (!(v_[i] > v_[i - 1])) throw invalid_parameter_error("drug-B doses must be strictly increasing");
  }

  int J() const { return static_cast<int>(u_.size()); }
  int K() const { return static_cast<int>(v_.size()); }
  int cells() const { return J() * K(); }

  double u(int j) const { return u_.at(static_cast<std::size_t>(j - 1)); }
  double v(int k) const { return v_.at(static_cast<std::size_t>(k - 1)); }
  const std::vector<double>& dose_a() const { return u_; }
  const std::vector<double>& dose_b() const { return v_; }

  bool contains(Dc dc) const { return dc.j >= 1 && dc.j <= J() && dc.k >= 1 && dc.k <= K(); }
  int index(Dc dc) const { return (dc.j - 1) * K() + (dc.k - 1); }
  Dc dc(int index) const { return Dc{index / K() + 1, index % K() + 1}; }

  template <typename T>
  CellMatrix<T> matrix(T fill = T{}) const {
    return CellMatrix<T>(J(), K(), fill);
  }

  friend bool operator==(const DoseGrid&, const DoseGrid&) = default;

 private:
  std::vector<double> u_;
  std::vector<double> v_;
};

/// Parameters of the logistic joint dose-toxicity model
///   logit p_jk = theta0 + theta1 u_j + theta2 v_k + theta3 u_j v_k.
///
/// The model is admissible on a grid when toxicity increases separately in j
/// and in k: theta1 > 0, theta2 > 0, theta1 + theta3 v_k > 0 and
/// theta2 + theta3 u_j > 0 for every level. Other joint models (copula,
/// Thall, exponential, ...) would plug in behind the same
/// params -> probability matrix surface.
struct ModelParams {
  std::array<double, 4> theta{0.0, 1.0, 1.0, 0.0};

  ModelParams() = default;
  ModelParams(double t0, double t1, double t2, double t3) : theta{t0, t1, t2, t3} {}

  double& operator[](int d) { return theta[static_cast<std::size_t>(d)]; }
  double operator[](int d) const { return theta[static_cast<std::size_t>(d)]; }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline bool is_admissible(const ModelParams& p, const DoseGrid& grid) {
  for (double t : p.theta)
    if (!std::isfinite(t)) return false;
  if (!(p[1] > 0.0) || !(p[2] > 0.0)) return false;
  for (double vk : grid.dose_b())
    if (!(p[1] + p[3] * vk > 0.0)) return false;
  for (double uj : grid.dose_a())
    if (!(p[2] + p[3] * uj > 0.0)) return false;
  return true;
}

inline void require_admissible(const ModelParams& p, const DoseGrid& grid) {
  if (!is_admissible(p, grid))
    throw invalid_parameter_error("model parameters violate the monotonicity constraints");
}

inline double logistic(double z) {
  // Split on sign so exp never overflows.
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double toxicity_logit(const ModelParams& p, double uj, double vk) {
  return p[0] + p[1] * uj + p[2] * vk + p[3] * uj * vk;
}

/// Unchecked toxicity for hot loops; callers guarantee admissibility.
inline double toxicity_unchecked(const ModelParams& p, const DoseGrid& grid, Dc dc) {
  return logistic(toxicity_logit(p, grid.u(dc.j), grid.v(dc.k)));
}

inline double logistic_toxicity(const ModelParams& params, const DoseGrid& grid, int j, int k) {
  require_admissible(params, grid);
  if (!grid.contains(Dc{j, k})) throw std::out_of_range("dose index outside grid: " + to_string(Dc{j, k}));
  return toxicity_unchecked(params, grid, Dc{j, k});
}

inline CellMatrix<double> toxicity_matrix(const ModelParams& params, const DoseGrid& grid) {
  require_admissible(params, grid);
  CellMatrix<double> out = grid.matrix<double>();
  for (int j = 1; j <= grid.J(); ++j)
    for (int k = 1; k <= grid.K(); ++k) out(j, k) = toxicity_unchecked(params, grid, Dc{j, k});
  return out;
}

}  // namespace sdfb
