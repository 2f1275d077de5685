#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <utility>

#include "mets/rng.hpp"

namespace mets {

/// Symmetric positive-definite matrix with a cached lower Cholesky factor.
///
/// Construction validates symmetry (to 1e-12 relative to the largest entry)
/// and strictly positive Cholesky pivots; anything else throws NumericalError.
class SpdMatrix
{
public:
    SpdMatrix() = default;
    explicit SpdMatrix(const Eigen::MatrixXd& values);

    static SpdMatrix identity(Eigen::Index dim, double scale = 1.0);

    Eigen::Index dimension() const noexcept { return values_.rows(); }
    const Eigen::MatrixXd& values() const noexcept { return values_; }
    const Eigen::MatrixXd& cholesky() const noexcept { return chol_; }
    double log_det() const noexcept { return log_det_; }

    Eigen::MatrixXd inverse() const;
    /// Solves A x = b.
    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
    /// Quadratic form x' A^{-1} x.
    double inverse_quadratic(const Eigen::VectorXd& x) const;

    double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

private:
    Eigen::MatrixXd values_;
    Eigen::MatrixXd chol_;
    double log_det_ = 0.0;
};

// Samplers. All of them consume draws only from the supplied stream.

Eigen::VectorXd mvn_sample(const Eigen::VectorXd& mean, const SpdMatrix& cov, RngStream& rng);

/// Draws from N(mean, Q^{-1}) given the Cholesky factor L of the precision Q = L L'.
Eigen::VectorXd mvn_sample_precision(const Eigen::VectorXd& mean, const Eigen::MatrixXd& precision_chol,
                                     RngStream& rng);

/// Wishart draw via the Bartlett decomposition.
SpdMatrix wishart_sample(double nu, const SpdMatrix& scale, RngStream& rng);

/// IW(nu, scale) draw: a Wishart on the inverse scale, inverted.
SpdMatrix inverse_wishart_sample(double nu, const SpdMatrix& scale, RngStream& rng);

double gamma_sample(double shape, double rate, RngStream& rng);
double inverse_gamma_sample(double shape, double scale, RngStream& rng);
double chi_square_sample(double df, RngStream& rng);
double student_t_sample(double df, RngStream& rng);

/// |C(0, 1)|.
double half_cauchy_sample(RngStream& rng);

/// One draw of (x^2, a) from x^2 | a ~ IG(1/2, 1/a), a ~ IG(1/2, 1); the
/// marginal of x is half-Cauchy(0, 1).
std::pair<double, double> aux_pair_sample(RngStream& rng);

// Log densities.

double log_normal_density(double x, double mean, double sd);
double log_mvn_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const SpdMatrix& cov);
double log_gamma_density(double x, double shape, double rate);
double log_inverse_gamma_density(double x, double shape, double scale);
double log_half_cauchy_density(double x);
double log_student_t_density(double x, double df);
double log_multivariate_gamma(double a, int dim);
double log_inverse_wishart_density(const SpdMatrix& sigma, double nu, const SpdMatrix& scale);

/// log(sum(exp(values))) without overflow.
double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& values);

}  // namespace mets
