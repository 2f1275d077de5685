#pragma once

// Helpers shared by the test binaries: seeded generators, statistics used as
// oracles, and small fixtures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mets/ingest.hpp"
#include "mets/model.hpp"
#include "mets/rng.hpp"

namespace mets::test {

inline double mean_of(const std::vector<double>& v)
{
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double variance_of(const std::vector<double>& v)
{
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v)
    {
        s += (x - m) * (x - m);
    }
    return s / static_cast<double>(v.size() - 1);
}

inline double median_of(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// One-sample Kolmogorov-Smirnov distance against a continuous CDF.
template <typename Cdf>
double ks_distance(std::vector<double> x, Cdf cdf)
{
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
    {
        const double f = cdf(x[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

/// Two-sample Kolmogorov-Smirnov distance.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b)
{
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0;
    std::size_t j = 0;
    double d = 0.0;
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    while (i < a.size() && j < b.size())
    {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

inline double half_cauchy_cdf(double x)
{
    return x <= 0.0 ? 0.0 : 2.0 / M_PI * std::atan(x);
}

/// Random SPD matrix A A' + dim I from a seeded std::mt19937_64 (independent of RngStream).
inline Eigen::MatrixXd random_spd(int dim, std::mt19937_64& gen)
{
    std::normal_distribution<double> n01;
    Eigen::MatrixXd a(dim, dim);
    for (int i = 0; i < dim; ++i)
    {
        for (int j = 0; j < dim; ++j)
        {
            a(i, j) = n01(gen);
        }
    }
    return a * a.transpose() + dim * Eigen::MatrixXd::Identity(dim, dim);
}

/// Random design: `subjects` subjects with `visits` rows each, yearly-ish
/// gaps, and each waist cell missing with probability `missing_rate`.
/// Outcomes are drawn from N(0, 1).
inline DesignData random_design(int subjects, int visits, int P, int K, double missing_rate, std::mt19937_64& gen)
{
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u01;
    const int n = subjects * visits;
    DesignData d;
    d.X.resize(n, P);
    d.Y.resize(n, K);
    d.observed.setConstant(n, K, true);
    d.n_subjects = subjects;
    for (int r = 0; r < n; ++r)
    {
        const int i = r / visits;
        const bool first = r % visits == 0;
        d.subject_of.push_back(i);
        d.prev_row.push_back(first ? -1 : r - 1);
        d.delta_t.push_back(first ? std::nan("") : 0.25 + 1.5 * u01(gen));
        for (int p = 0; p < P; ++p)
        {
            d.X(r, p) = n01(gen);
        }
        for (int k = 0; k < K; ++k)
        {
            d.Y(r, k) = n01(gen);
        }
        d.observed(r, 0) = u01(gen) >= missing_rate;
    }
    d.finalize();
    return d;
}

/// Random point of the parameter space with beta consistent with its factors.
inline ParameterState random_state(const DesignData& data, const ModelConfig& config, std::mt19937_64& gen)
{
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u01;
    ParameterState s = initial_state(data, config);
    for (Eigen::Index i = 0; i < s.z.size(); ++i)
    {
        s.z.data()[i] = n01(gen);
    }
    for (Eigen::Index i = 0; i < s.lambda.size(); ++i)
    {
        s.lambda(i) = 0.1 + 2.0 * u01(gen);
    }
    for (Eigen::Index i = 0; i < s.tau.size(); ++i)
    {
        s.tau(i) = 0.1 + u01(gen);
    }
    for (Eigen::Index i = 0; i < s.b.size(); ++i)
    {
        s.b.data()[i] = n01(gen);
    }
    for (Eigen::Index i = 0; i < s.mu_b.size(); ++i)
    {
        s.mu_b(i) = n01(gen);
    }
    for (Eigen::Index i = 0; i < s.y_missing.size(); ++i)
    {
        s.y_missing(i) = n01(gen);
    }
    for (Eigen::Index i = 0; i < s.phi.size(); ++i)
    {
        s.phi(i) = 0.5 + 10.0 * u01(gen);
    }
    s.Sigma_Y = SpdMatrix(random_spd(config.K, gen) / config.K);
    s.Sigma_b = SpdMatrix(random_spd(config.K, gen) / config.K);
    s.refresh_beta(config.groups);
    return s;
}

/// Schema with two numeric covariates (one logged), a binary and the sex indicator.
inline CovariateSchema small_schema()
{
    return CovariateSchema::from_json(nlohmann::json::parse(R"({"covariates": [
        {"name": "bmi", "kind": "numeric", "group": "numerical"},
        {"name": "ferritin", "kind": "numeric", "log_transformed": true, "group": "numerical"},
        {"name": "physical_activity", "kind": "binary", "group": "binary", "levels": ["Inactive", "Active"]},
        {"name": "sex_male", "kind": "binary", "group": "binary", "from_sex": true},
        {"name": "bmi_x_sex", "kind": "interaction", "base": "bmi", "group": "interactions"}
    ]})"));
}

/// Scratch directory removed on destruction.
// Independent WAIC in long double, written straight from the definitions.
inline std::pair<double, double> oracle_waic(const Eigen::MatrixXd& ll)
{
    const long S = ll.rows();
    const long N = ll.cols();
    std::vector<long double> elpd(static_cast<std::size_t>(N));
    for (long i = 0; i < N; ++i)
    {
        long double sum_exp = 0.0L;
        long double mean = 0.0L;
        for (long s = 0; s < S; ++s)
        {
            sum_exp += std::exp(static_cast<long double>(ll(s, i)));
            mean += ll(s, i);
        }
        mean /= S;
        long double var = 0.0L;
        for (long s = 0; s < S; ++s)
        {
            var += (ll(s, i) - mean) * (ll(s, i) - mean);
        }
        var /= (S - 1);
        elpd[static_cast<std::size_t>(i)] = std::log(sum_exp / S) - var;
    }
    long double total = 0.0L;
    for (auto e : elpd)
    {
        total += e;
    }
    const long double m = total / N;
    long double v = 0.0L;
    for (auto e : elpd)
    {
        v += (e - m) * (e - m);
    }
    v /= (N - 1);
    return {static_cast<double>(-2.0L * total), static_cast<double>(2.0L * std::sqrt(N * v))};
}

class TempDir
{
public:
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("metsrisk-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
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

}  // namespace mets::test
