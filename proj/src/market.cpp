#include "bsde/market.hpp"

#include "bsde/rng.hpp"
#include "bsde/stats.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace bsde {

void FbsdeProblem::validate() const {
  if (dim_x < 1 || dim_w < 1) throw std::invalid_argument("FbsdeProblem: dimensions must be >= 1");
  if (!(horizon > 0.0)) throw std::invalid_argument("FbsdeProblem: horizon must be > 0");
  if (x0.size() != dim_x) throw std::invalid_argument("FbsdeProblem: x0 has wrong size");
  if (!drift || !diffusion || !driver || !terminal)
    throw std::invalid_argument("FbsdeProblem: all coefficient functions must be set");

  Vector b(dim_x);
  drift(0.0, x0, b);
  const Matrix s = diffusion_at(0.0, x0);
  Vector dz(dim_w);
  const double g = terminal(x0);
  const auto f = driver(0.0, x0, g, Vector::Zero(dim_w), dz);
  if (!b.allFinite() || !s.allFinite() || !std::isfinite(g) || !std::isfinite(f.value))
    throw std::invalid_argument("FbsdeProblem: coefficients are not finite at x0");
}

Matrix FbsdeProblem::diffusion_at(double t, const Eigen::Ref<const Vector>& x) const {
  Matrix out(dim_x, dim_w);
  diffusion(t, x, out);
  return out;
}

BlackScholesMarket BlackScholesMarket::uniform(int dim, double rate, double dividend, double vol,
                                               double rho, double spot, double strike,
                                               double maturity) {
  BlackScholesMarket m;
  m.rate = rate;
  m.dividends = Vector::Constant(dim, dividend);
  m.vols = Vector::Constant(dim, vol);
  m.correlation = Matrix::Constant(dim, dim, rho);
  m.correlation.diagonal().setOnes();
  m.spots = Vector::Constant(dim, spot);
  m.strike = strike;
  m.maturity = maturity;
  return m;
}

void BlackScholesMarket::validate() const {
  const int d = dim();
  if (d < 1) throw std::invalid_argument("market: at least one asset required");
  if (dividends.size() != d || vols.size() != d || correlation.rows() != d ||
      correlation.cols() != d)
    throw std::invalid_argument("market: parameter sizes do not match the number of spots");
  if (!(maturity > 0.0)) throw std::invalid_argument("market: maturity must be > 0");
  if (strike < 0.0) throw std::invalid_argument("market: strike must be >= 0");
  if ((vols.array() < 0.0).any()) throw std::invalid_argument("market: vols must be >= 0");
  if ((spots.array() <= 0.0).any()) throw std::invalid_argument("market: spots must be > 0");
  if (!correlation.allFinite()) throw std::invalid_argument("market: correlation not finite");
  for (int i = 0; i < d; ++i) {
    if (std::abs(correlation(i, i) - 1.0) > 1e-12)
      throw std::invalid_argument("market: correlation diagonal must be 1");
    for (int j = 0; j < i; ++j)
      if (std::abs(correlation(i, j) - correlation(j, i)) > 1e-12)
        throw std::invalid_argument("market: correlation must be symmetric");
  }
  (void)psd_cholesky(correlation);
}

Matrix BlackScholesMarket::correlation_factor() const { return psd_cholesky(correlation); }

Matrix psd_cholesky(const Matrix& a, double tolerance) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("psd_cholesky: matrix must be square");
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double diag = a(j, j) - l.row(j).head(j).squaredNorm();
    if (diag < -tolerance) {
      std::ostringstream msg;
      msg << "psd_cholesky: matrix is not positive semi-definite (pivot " << j << " = " << diag
          << ")";
      throw std::invalid_argument(msg.str());
    }
    if (diag <= tolerance) {
      // Rank-deficient direction: the column must vanish for PSD input.
      for (Eigen::Index i = j + 1; i < n; ++i) {
        const double off = a(i, j) - l.row(i).head(j).dot(l.row(j).head(j));
        if (std::abs(off) > std::sqrt(tolerance))
          throw std::invalid_argument("psd_cholesky: matrix is not positive semi-definite");
      }
      continue;
    }
    const double root = std::sqrt(diag);
    l(j, j) = root;
    for (Eigen::Index i = j + 1; i < n; ++i)
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / root;
  }
  return l;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double floored_geometric_mean(const Eigen::Ref<const Vector>& x) {
  double log_sum = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0)) return 0.0;
    log_sum += std::log(x[i]);
  }
  return std::exp(log_sum / static_cast<double>(x.size()));
}

namespace {

FbsdeProblem make_black_scholes_problem(const BlackScholesMarket& market, TerminalFn payoff) {
  market.validate();
  const int d = market.dim();
  const Matrix factor = market.correlation_factor();
  const Vector carry = market.rate - market.dividends.array();
  const Vector vols = market.vols;
  const double r = market.rate;

  FbsdeProblem p;
  p.dim_x = d;
  p.dim_w = d;
  p.horizon = market.maturity;
  p.x0 = market.spots;
  p.drift = [carry](double, const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> out) {
    out = carry.cwiseProduct(x);
  };
  p.diffusion = [vols, factor](double, const Eigen::Ref<const Vector>& x, Eigen::Ref<Matrix> out) {
    out = vols.cwiseProduct(x).asDiagonal() * factor;
  };
  p.driver = [r](double, const Eigen::Ref<const Vector>&, double y, const Eigen::Ref<const Vector>&,
                 Eigen::Ref<Vector> dz) {
    dz.setZero();
    return DriverValue{-r * y, -r};
  };
  p.terminal = std::move(payoff);
  p.linear_discount_rate = r;
  return p;
}

}  // namespace

FbsdeProblem make_geometric_put_problem(const BlackScholesMarket& market) {
  const double k = market.strike;
  return make_black_scholes_problem(market, [k](const Eigen::Ref<const Vector>& x) {
    return std::max(k - floored_geometric_mean(x), 0.0);
  });
}

FbsdeProblem make_basket_call_problem(const BlackScholesMarket& market) {
  const double k = market.strike;
  return make_black_scholes_problem(
      market, [k](const Eigen::Ref<const Vector>& x) { return std::max(x.mean() - k, 0.0); });
}

std::string to_string(PayoffKind kind) {
  return kind == PayoffKind::geometric_put ? "geometric_put" : "basket_call";
}

PayoffKind parse_payoff(const std::string& text) {
  if (text == "geometric_put") return PayoffKind::geometric_put;
  if (text == "basket_call") return PayoffKind::basket_call;
  throw std::invalid_argument("unknown payoff '" + text + "' (expected geometric_put or basket_call)");
}

FbsdeProblem make_problem(PayoffKind kind, const BlackScholesMarket& market) {
  return kind == PayoffKind::geometric_put ? make_geometric_put_problem(market)
                                           : make_basket_call_problem(market);
}

OneDimReduction reduce_to_one_dim(const BlackScholesMarket& market) {
  market.validate();
  const int d = market.dim();
  const double dd = static_cast<double>(d);
  // Diagonal counted once: sum_i sigma_i^2 plus the off-diagonal pairs.
  double var = market.vols.squaredNorm();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j) var += market.vols[i] * market.vols[j] * market.correlation(i, j);
  var /= dd * dd;

  double drift = 0.0;
  for (int i = 0; i < d; ++i)
    drift += market.rate - market.dividends[i] - 0.5 * market.vols[i] * market.vols[i];
  drift = drift / dd + 0.5 * var;

  return {drift, std::sqrt(std::max(var, 0.0)), floored_geometric_mean(market.spots)};
}

double reduced_put_price(const OneDimReduction& reduced, double rate, double strike,
                         double remaining, double spot) {
  const double discount = std::exp(-rate * remaining);
  if (strike <= 0.0) return 0.0;
  if (spot <= 0.0) return discount * strike;
  const double forward = spot * std::exp(reduced.mu_hat * remaining);
  const double spread = reduced.sigma_hat * std::sqrt(remaining);
  if (spread <= 0.0) return discount * std::max(strike - forward, 0.0);
  const double d_plus = (std::log(forward / strike) + 0.5 * spread * spread) / spread;
  const double d_minus = d_plus - spread;
  return discount * (strike * normal_cdf(-d_minus) - forward * normal_cdf(-d_plus));
}

double geometric_put_closed_form(const BlackScholesMarket& market) {
  const auto reduced = reduce_to_one_dim(market);
  return reduced_put_price(reduced, market.rate, market.strike, market.maturity, reduced.s_hat0);
}

ValueAndDelta geometric_put_value_and_delta(const BlackScholesMarket& market, double t, double s) {
  if (!(t >= 0.0 && t < market.maturity))
    throw std::invalid_argument("geometric_put_value_and_delta: requires 0 <= t < T");
  return reduced_put_value_and_delta(reduce_to_one_dim(market), market.rate, market.strike,
                                     market.maturity - t, s);
}

ValueAndDelta reduced_put_value_and_delta(const OneDimReduction& reduced, double rate,
                                          double strike, double remaining, double s) {
  const double k = strike;
  const double r = rate;
  ValueAndDelta out;
  out.value = reduced_put_price(reduced, r, k, remaining, s);
  if (k <= 0.0) return out;

  const double growth = std::exp((reduced.mu_hat - r) * remaining);
  if (s <= 0.0) {
    out.delta = -growth;
    return out;
  }
  const double forward = s * std::exp(reduced.mu_hat * remaining);
  const double spread = reduced.sigma_hat * std::sqrt(remaining);
  if (spread <= 0.0) {
    out.delta = forward < k ? -growth : 0.0;
    return out;
  }
  const double d_plus = (std::log(forward / k) + 0.5 * spread * spread) / spread;
  out.delta = -growth * normal_cdf(-d_plus);
  return out;
}

McEstimate basket_call_mc_oracle(const BlackScholesMarket& market, std::int64_t samples,
                                 std::uint64_t seed, int workers) {
  market.validate();
  if (samples < 1) throw std::invalid_argument("basket_call_mc_oracle: samples must be >= 1");
  const int d = market.dim();
  const double t = market.maturity;
  const Matrix factor = market.correlation_factor();
  const Vector log_drift =
      (market.rate - market.dividends.array() - 0.5 * market.vols.array().square()) * t;
  const Vector scale = market.vols * std::sqrt(t);
  const double discount = std::exp(-market.rate * t);

  auto payoff = [&](std::int64_t index, Vector& xi, Vector& x) {
    fill_normals(seed, Stream::oracle, static_cast<std::uint64_t>(index), 0,
                 std::span<double>(xi.data(), static_cast<std::size_t>(d)));
    x = (log_drift + scale.cwiseProduct(factor * xi)).array().exp() * market.spots.array();
    return discount * std::max(x.mean() - market.strike, 0.0);
  };

  Vector xi(d), x(d);
  const double shift = payoff(0, xi, x);

  // Fixed block decomposition so the reduction order is independent of workers.
  constexpr std::int64_t kBlock = 4096;
  const auto blocks = static_cast<std::size_t>((samples + kBlock - 1) / kBlock);
  std::vector<ShiftedSums> partial(blocks);
  parallel_ranges(blocks, workers, [&](std::size_t begin, std::size_t end) {
    Vector xi_local(d), x_local(d);
    for (std::size_t b = begin; b < end; ++b) {
      ShiftedSums s;
      s.shift = shift;
      const std::int64_t first = static_cast<std::int64_t>(b) * kBlock;
      const std::int64_t last = std::min(samples, first + kBlock);
      for (std::int64_t m = first; m < last; ++m) s.add(payoff(m, xi_local, x_local));
      partial[b] = s;
    }
  });
  ShiftedSums total;
  total.shift = shift;
  for (const auto& s : partial) total.merge(s);
  return {total.mean(), total.std_error()};
}

}  // namespace bsde
