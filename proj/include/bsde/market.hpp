#pragma once

// Problem definitions (generic decoupled FBSDE, Black-Scholes instances) and
// the analytic / semi-analytic reference prices used to check the solver.

#include "bsde/common.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>

namespace bsde {

/// Driver value together with its partial derivative in y. The partial in z
/// is written by the driver into the caller-provided buffer.
struct DriverValue {
  double value = 0.0;
  double dy = 0.0;
};

using DriftFn = std::function<void(double t, const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> out)>;
using DiffusionFn = std::function<void(double t, const Eigen::Ref<const Vector>& x, Eigen::Ref<Matrix> out)>;
using DriverFn = std::function<DriverValue(double t, const Eigen::Ref<const Vector>& x, double y,
                                           const Eigen::Ref<const Vector>& z, Eigen::Ref<Vector> dz)>;
using TerminalFn = std::function<double(const Eigen::Ref<const Vector>& x)>;

/// One decoupled FBSDE instance with scalar Y:
///   dX = b(t,X) dt + sigma(t,X) dW,  -dY = f(t,X,Y,Z) dt - Z dW,  Y_T = g(X_T).
struct FbsdeProblem {
  int dim_x = 1;
  int dim_w = 1;
  double horizon = 1.0;
  Vector x0;
  DriftFn drift;
  DiffusionFn diffusion;  // fills a dim_x x dim_w matrix
  DriverFn driver;
  TerminalFn terminal;
  /// Set when the driver is exactly -rate * y; enables the closed-form
  /// recursion identity checks and cheaper rollouts.
  std::optional<double> linear_discount_rate;

  /// Throws std::invalid_argument when dimensions or coefficient values at x0
  /// are not usable.
  void validate() const;

  Matrix diffusion_at(double t, const Eigen::Ref<const Vector>& x) const;
};

struct BlackScholesMarket {
  double rate = 0.0;
  Vector dividends;
  Vector vols;
  Matrix correlation;
  Vector spots;
  double strike = 0.0;
  double maturity = 1.0;

  int dim() const { return static_cast<int>(spots.size()); }

  /// Uniform market: every asset shares dividend, vol and spot; constant
  /// pairwise correlation rho.
  static BlackScholesMarket uniform(int dim, double rate, double dividend, double vol,
                                    double rho, double spot, double strike, double maturity);

  /// Throws std::invalid_argument on inconsistent sizes, negative vols or
  /// spots, or a correlation matrix that is not symmetric PSD with unit diagonal.
  void validate() const;

  /// Lower-triangular L with L L^T = correlation.
  Matrix correlation_factor() const;
};

/// Cholesky factor of a symmetric positive semi-definite matrix. Pivots whose
/// remaining diagonal is within `tolerance` of zero yield a zero column.
/// Throws std::invalid_argument when the matrix is not PSD up to `tolerance`.
Matrix psd_cholesky(const Matrix& a, double tolerance = 1e-10);

struct OneDimReduction {
  double mu_hat = 0.0;
  double sigma_hat = 0.0;
  double s_hat0 = 0.0;
};

double normal_cdf(double x);

/// Geometric mean with each factor floored at zero; the mean of a vector with
/// any non-positive entry is 0.
double floored_geometric_mean(const Eigen::Ref<const Vector>& x);

FbsdeProblem make_geometric_put_problem(const BlackScholesMarket& market);
FbsdeProblem make_basket_call_problem(const BlackScholesMarket& market);

enum class PayoffKind { geometric_put, basket_call };

std::string to_string(PayoffKind kind);
PayoffKind parse_payoff(const std::string& text);
FbsdeProblem make_problem(PayoffKind kind, const BlackScholesMarket& market);

OneDimReduction reduce_to_one_dim(const BlackScholesMarket& market);

/// European geometric put at time 0 for the market's spots.
double geometric_put_closed_form(const BlackScholesMarket& market);

/// Put on the reduced one-dimensional asset; `remaining` is time to maturity.
double reduced_put_price(const OneDimReduction& reduced, double rate, double strike,
                         double remaining, double spot);

struct ValueAndDelta {
  double value = 0.0;
  double delta = 0.0;
};

/// Value and d(value)/ds at (t, s), where s is the geometric-mean state.
/// Requires 0 <= t < T; s <= 0 returns the s -> 0+ limit.
ValueAndDelta geometric_put_value_and_delta(const BlackScholesMarket& market, double t, double s);

/// Same for a precomputed reduction; `remaining` = T - t > 0.
ValueAndDelta reduced_put_value_and_delta(const OneDimReduction& reduced, double rate,
                                          double strike, double remaining, double s);

struct McEstimate {
  double price = 0.0;
  double std_error = 0.0;
};

/// Discounted basket-call payoff under exact lognormal terminal sampling.
/// Deterministic given seed and independent of `workers`.
McEstimate basket_call_mc_oracle(const BlackScholesMarket& market, std::int64_t samples,
                                 std::uint64_t seed, int workers = 1);

}  // namespace bsde
