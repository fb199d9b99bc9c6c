#pragma once

#include <array>
#include <cmath>
#include <string>

#include "sdfbayes/core.hpp"

namespace sdfb {

/// Univariate prior on one model coordinate, up to an additive constant of
/// its log density. Every prior is truncated to the conditional feasible
/// interval, so densities stay proper.
struct ParamPrior {
  enum class Kind { normal, exponential, gamma, uniform };

  Kind kind = Kind::uniform;
  double a = 0.0;  // normal: mean; exponential: rate; gamma: shape
  double b = 0.0;  // normal: variance; gamma: rate

  static ParamPrior normal(double mean, double variance) { return {Kind::normal, mean, variance}; }
  static ParamPrior exponential(double rate) { return {Kind::exponential, rate, 0.0}; }
  static ParamPrior gamma(double shape, double rate) { return {Kind::gamma, shape, rate}; }
  static ParamPrior uniform() { return {Kind::uniform, 0.0, 0.0}; }

  double log_density(double x) const {
    switch (kind) {
      case Kind::normal: {
        const double d = x - a;
        return -0.5 * d * d / b;
      }
      case Kind::exponential:
        return -a * x;
      case Kind::gamma:
        return (a - 1.0) * std::log(x) - b * x;
      case Kind::uniform:
        return 0.0;
    }
    return 0.0;
  }

  /// Whether the log density is concave on its support.
  bool log_concave() const { return kind != Kind::gamma || a >= 1.0; }
};

/// Independent priors for (theta0, theta1, theta2, theta3) plus the truncation
/// bound B shared by every coordinate.
struct PriorSpec {
  std::string name = "default";
  std::array<ParamPrior, 4> dims{ParamPrior::normal(0.0, 10.0), ParamPrior::exponential(1.0),
                                 ParamPrior::exponential(1.0), ParamPrior::normal(0.0, 10.0)};
  double bound = 20.0;

  /// N(0,10) intercept and interaction, Exp(1) slopes.
  static PriorSpec standard() { return PriorSpec{}; }

  /// N(0,50) intercept and interaction, Gamma(0.1, 0.1) slopes (mean 1, variance 10).
  static PriorSpec high_variance() {
    PriorSpec p;
    p.name = "hivar";
    p.dims = {ParamPrior::normal(0.0, 50.0), ParamPrior::gamma(0.1, 0.1), ParamPrior::gamma(0.1, 0.1),
              ParamPrior::normal(0.0, 50.0)};
    return p;
  }

  /// Flat on the truncated feasible region.
  static PriorSpec non_informative() {
    PriorSpec p;
    p.name = "noninfo";
    p.dims = {ParamPrior::uniform(), ParamPrior::uniform(), ParamPrior::uniform(), ParamPrior::uniform()};
    return p;
  }

  static PriorSpec by_name(const std::string& name) {
    if (name == "default" || name == "standard") return standard();
    if (name == "hivar") return high_variance();
    if (name == "noninfo") return non_informative();
    throw not_found_error("unknown prior '" + name + "'");
  }
};

}  // namespace sdfb
