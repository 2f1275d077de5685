#include "mets/distributions.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "mets/errors.hpp"

namespace mets {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

void require_positive(double value, const char* what)
{
    if (!(value > 0.0) || !std::isfinite(value))
    {
        throw InvalidArgument(std::string(what) + " must be positive and finite");
    }
}

}  // namespace

SpdMatrix::SpdMatrix(const Eigen::MatrixXd& values)
{
    if (values.rows() != values.cols() || values.rows() == 0)
    {
        throw NumericalError("SPD matrix must be square and non-empty");
    }
    if (!values.allFinite())
    {
        throw NumericalError("SPD matrix has non-finite entries");
    }
    const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
    if ((values - values.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    {
        throw NumericalError("matrix is not symmetric");
    }
    values_ = 0.5 * (values + values.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(values_);
    if (llt.info() != Eigen::Success)
    {
        throw NumericalError("matrix is not positive definite");
    }
    chol_ = llt.matrixL();
    log_det_ = 0.0;
    for (Eigen::Index i = 0; i < chol_.rows(); ++i)
    {
        const double pivot = chol_(i, i);
        if (!(pivot > 0.0) || !std::isfinite(pivot))
        {
            throw NumericalError("matrix is not positive definite");
        }
        log_det_ += 2.0 * std::log(pivot);
    }
}

SpdMatrix SpdMatrix::identity(Eigen::Index dim, double scale)
{
    return SpdMatrix(scale * Eigen::MatrixXd::Identity(dim, dim));
}

Eigen::MatrixXd SpdMatrix::inverse() const
{
    const Eigen::Index n = dimension();
    Eigen::MatrixXd linv = chol_.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
    Eigen::MatrixXd inv = linv.transpose() * linv;
    return 0.5 * (inv + inv.transpose());
}

Eigen::VectorXd SpdMatrix::solve(const Eigen::VectorXd& rhs) const
{
    Eigen::VectorXd y = chol_.triangularView<Eigen::Lower>().solve(rhs);
    return chol_.transpose().triangularView<Eigen::Upper>().solve(y);
}

double SpdMatrix::inverse_quadratic(const Eigen::VectorXd& x) const
{
    return chol_.triangularView<Eigen::Lower>().solve(x).squaredNorm();
}

Eigen::VectorXd mvn_sample(const Eigen::VectorXd& mean, const SpdMatrix& cov, RngStream& rng)
{
    if (mean.size() != cov.dimension())
    {
        throw InvalidArgument("mvn_sample: mean and covariance dimensions differ");
    }
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
    {
        z(i) = rng.normal();
    }
    return mean + cov.cholesky().triangularView<Eigen::Lower>() * z;
}

Eigen::VectorXd mvn_sample_precision(const Eigen::VectorXd& mean, const Eigen::MatrixXd& precision_chol,
                                     RngStream& rng)
{
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
    {
        z(i) = rng.normal();
    }
    // L' x = z gives x ~ N(0, (L L')^{-1}).
    return mean + precision_chol.transpose().triangularView<Eigen::Upper>().solve(z);
}

namespace {

// Lower-triangular Bartlett factor A with W = (L A)(L A)'.
Eigen::MatrixXd bartlett_factor(double nu, Eigen::Index dim, RngStream& rng)
{
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i)
    {
        a(i, i) = std::sqrt(chi_square_sample(nu - static_cast<double>(i), rng));
        for (Eigen::Index j = 0; j < i; ++j)
        {
            a(i, j) = rng.normal();
        }
    }
    return a;
}

void require_dof(double nu, Eigen::Index dim)
{
    if (!(nu > static_cast<double>(dim) - 1.0) || !std::isfinite(nu))
    {
        throw InvalidArgument("Wishart degrees of freedom must exceed dimension - 1");
    }
}

}  // namespace

SpdMatrix wishart_sample(double nu, const SpdMatrix& scale, RngStream& rng)
{
    const Eigen::Index dim = scale.dimension();
    require_dof(nu, dim);
    const Eigen::MatrixXd a = bartlett_factor(nu, dim, rng);
    const Eigen::MatrixXd t = scale.cholesky().triangularView<Eigen::Lower>() * a;
    Eigen::MatrixXd w = t * t.transpose();
    return SpdMatrix(0.5 * (w + w.transpose()));
}

SpdMatrix inverse_wishart_sample(double nu, const SpdMatrix& scale, RngStream& rng)
{
    const Eigen::Index dim = scale.dimension();
    require_dof(nu, dim);
    const SpdMatrix inv_scale(scale.inverse());
    const Eigen::MatrixXd a = bartlett_factor(nu, dim, rng);
    const Eigen::MatrixXd t = inv_scale.cholesky().triangularView<Eigen::Lower>() * a;
    // Sigma = (T T')^{-1} = T^{-T} T^{-1}
    const Eigen::MatrixXd tinv =
        t.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(dim, dim));
    Eigen::MatrixXd sigma = tinv.transpose() * tinv;
    return SpdMatrix(0.5 * (sigma + sigma.transpose()));
}

double gamma_sample(double shape, double rate, RngStream& rng)
{
    require_positive(shape, "gamma shape");
    require_positive(rate, "gamma rate");
    if (shape < 1.0)
    {
        // Boost a shape < 1 draw from shape + 1.
        const double g = gamma_sample(shape + 1.0, 1.0, rng);
        return g * std::pow(rng.uniform(), 1.0 / shape) / rate;
    }
    // Marsaglia & Tsang (2000).
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;)
    {
        double x = 0.0;
        double v = 0.0;
        do
        {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v))
        {
            return d * v / rate;
        }
    }
}

double inverse_gamma_sample(double shape, double scale, RngStream& rng)
{
    require_positive(scale, "inverse-gamma scale");
    return 1.0 / gamma_sample(shape, scale, rng);
}

double chi_square_sample(double df, RngStream& rng)
{
    require_positive(df, "chi-square degrees of freedom");
    return gamma_sample(0.5 * df, 0.5, rng);
}

double student_t_sample(double df, RngStream& rng)
{
    require_positive(df, "Student t degrees of freedom");
    const double z = rng.normal();
    return z / std::sqrt(chi_square_sample(df, rng) / df);
}

double half_cauchy_sample(RngStream& rng)
{
    return std::tan(0.5 * std::numbers::pi * rng.uniform());
}

std::pair<double, double> aux_pair_sample(RngStream& rng)
{
    const double aux = inverse_gamma_sample(0.5, 1.0, rng);
    const double scale_sq = inverse_gamma_sample(0.5, 1.0 / aux, rng);
    return {scale_sq, aux};
}

double log_normal_density(double x, double mean, double sd)
{
    const double z = (x - mean) / sd;
    return -0.5 * kLogTwoPi - std::log(sd) - 0.5 * z * z;
}

double log_mvn_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const SpdMatrix& cov)
{
    if (x.size() != cov.dimension() || mean.size() != cov.dimension())
    {
        throw InvalidArgument("log_mvn_density: dimension mismatch");
    }
    const double k = static_cast<double>(x.size());
    return -0.5 * (k * kLogTwoPi + cov.log_det() + cov.inverse_quadratic(x - mean));
}

double log_gamma_density(double x, double shape, double rate)
{
    if (!(x > 0.0))
    {
        return -std::numeric_limits<double>::infinity();
    }
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double log_inverse_gamma_density(double x, double shape, double scale)
{
    if (!(x > 0.0))
    {
        return -std::numeric_limits<double>::infinity();
    }
    return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

double log_half_cauchy_density(double x)
{
    if (x < 0.0)
    {
        return -std::numeric_limits<double>::infinity();
    }
    return std::log(2.0 / std::numbers::pi) - std::log1p(x * x);
}

double log_student_t_density(double x, double df)
{
    return std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) - 0.5 * std::log(df * std::numbers::pi)
           - 0.5 * (df + 1.0) * std::log1p(x * x / df);
}

double log_multivariate_gamma(double a, int dim)
{
    double out = 0.25 * dim * (dim - 1) * std::log(std::numbers::pi);
    for (int j = 1; j <= dim; ++j)
    {
        out += std::lgamma(a + 0.5 * (1 - j));
    }
    return out;
}

double log_inverse_wishart_density(const SpdMatrix& sigma, double nu, const SpdMatrix& scale)
{
    const Eigen::Index dim = sigma.dimension();
    if (scale.dimension() != dim)
    {
        throw InvalidArgument("log_inverse_wishart_density: dimension mismatch");
    }
    const double d = static_cast<double>(dim);
    const double trace = (scale.values() * sigma.inverse()).trace();
    return 0.5 * nu * scale.log_det() - 0.5 * nu * d * std::numbers::ln2
           - log_multivariate_gamma(0.5 * nu, static_cast<int>(dim)) - 0.5 * (nu + d + 1.0) * sigma.log_det()
           - 0.5 * trace;
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& values)
{
    if (values.size() == 0)
    {
        return -std::numeric_limits<double>::infinity();
    }
    const double m = values.maxCoeff();
    if (!std::isfinite(m))
    {
        return m;
    }
    return m + std::log((values.array() - m).exp().sum());
}

}  // namespace mets
