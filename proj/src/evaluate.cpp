#include "mets/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "mets/distributions.hpp"
#include "mets/errors.hpp"

namespace mets {

namespace {

void check_matrix(const Eigen::MatrixXd& loglik, int min_draws)
{
    if (loglik.rows() < min_draws)
    {
        throw InvalidArgument("need at least " + std::to_string(min_draws) + " draws, got "
                              + std::to_string(loglik.rows()));
    }
    if (loglik.cols() == 0)
    {
        throw InvalidArgument("log-likelihood matrix has no observations");
    }
    if (!loglik.allFinite())
    {
        throw InvalidArgument("log-likelihood matrix contains non-finite values");
    }
}

double sample_variance(const Eigen::VectorXd& v)
{
    if (v.size() < 2)
    {
        return 0.0;
    }
    const double m = v.mean();
    return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

double log_mean_exp(const Eigen::VectorXd& v)
{
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().mean());
}

// Standard error of -2 * sum(pointwise).
double ic_se(const Eigen::VectorXd& pointwise)
{
    return 2.0 * std::sqrt(static_cast<double>(pointwise.size()) * sample_variance(pointwise));
}

double gpd_quantile(double p, double k, double sigma)
{
    if (std::abs(k) < 1e-12)
    {
        return -sigma * std::log1p(-p);
    }
    return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

}  // namespace

WaicResult waic(const Eigen::MatrixXd& loglik)
{
    check_matrix(loglik, 2);
    const Eigen::Index n = loglik.cols();
    WaicResult out;
    out.pointwise.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        const Eigen::VectorXd col = loglik.col(i);
        const double p = sample_variance(col);
        out.p_waic += p;
        out.pointwise(i) = log_mean_exp(col) - p;
    }
    out.waic = -2.0 * out.pointwise.sum();
    out.se = ic_se(out.pointwise);
    return out;
}

GpdFit gpd_fit(const std::vector<double>& x)
{
    const std::size_t n = x.size();
    if (n < 2)
    {
        throw InvalidArgument("generalized Pareto fit needs at least 2 values");
    }
    constexpr double kPrior = 3.0;
    const std::size_t m = 30 + static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
    const double xstar = x[static_cast<std::size_t>(std::floor(static_cast<double>(n) / 4.0 + 0.5)) - 1];
    std::vector<double> theta(m);
    std::vector<double> l_theta(m);
    for (std::size_t j = 0; j < m; ++j)
    {
        theta[j] = 1.0 / x[n - 1]
                   + (1.0 - std::sqrt(static_cast<double>(m) / (static_cast<double>(j + 1) - 0.5))) / kPrior / xstar;
        double k = 0.0;
        for (double v : x)
        {
            k += std::log1p(-theta[j] * v);
        }
        k /= static_cast<double>(n);
        l_theta[j] = static_cast<double>(n) * (std::log(-theta[j] / k) - k - 1.0);
    }
    const double norm = log_sum_exp(Eigen::Map<const Eigen::VectorXd>(l_theta.data(), static_cast<Eigen::Index>(m)));
    double theta_hat = 0.0;
    for (std::size_t j = 0; j < m; ++j)
    {
        theta_hat += theta[j] * std::exp(l_theta[j] - norm);
    }
    double k = 0.0;
    for (double v : x)
    {
        k += std::log1p(-theta_hat * v);
    }
    k /= static_cast<double>(n);
    GpdFit fit;
    fit.sigma = -k / theta_hat;
    fit.k = (k * static_cast<double>(n) + 0.5 * 10.0) / (static_cast<double>(n) + 10.0);
    if (std::isnan(fit.k))
    {
        fit.k = std::numeric_limits<double>::infinity();
    }
    return fit;
}

Eigen::VectorXd psis_log_weights(const Eigen::VectorXd& log_ratios, double* khat)
{
    const Eigen::Index s = log_ratios.size();
    Eigen::VectorXd lw = log_ratios.array() - log_ratios.maxCoeff();
    const auto tail_len = static_cast<Eigen::Index>(
        std::ceil(std::min(0.2 * static_cast<double>(s), 3.0 * std::sqrt(static_cast<double>(s)))));
    double k = 0.0;
    if (tail_len >= 5 && tail_len < s)
    {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(s));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return lw(a) < lw(b); });
        const Eigen::Index first_tail = s - tail_len;
        const double cutoff = lw(order[static_cast<std::size_t>(first_tail - 1)]);
        const double tail_min = lw(order[static_cast<std::size_t>(first_tail)]);
        const double tail_max = lw(order.back());
        // A flat tail has nothing to smooth; k is reported as 0.
        if (tail_max - tail_min > std::numeric_limits<double>::epsilon() / 100.0)
        {
            const double exp_cutoff = std::exp(cutoff);
            std::vector<double> exceed;
            exceed.reserve(static_cast<std::size_t>(tail_len));
            for (Eigen::Index t = first_tail; t < s; ++t)
            {
                exceed.push_back(std::exp(lw(order[static_cast<std::size_t>(t)])) - exp_cutoff);
            }
            const GpdFit fit = gpd_fit(exceed);
            k = fit.k;
            if (std::isfinite(fit.k))
            {
                for (Eigen::Index t = 0; t < tail_len; ++t)
                {
                    const double p = (static_cast<double>(t) + 0.5) / static_cast<double>(tail_len);
                    lw(order[static_cast<std::size_t>(first_tail + t)]) =
                        std::log(gpd_quantile(p, fit.k, fit.sigma) + exp_cutoff);
                }
            }
        }
    }
    // Truncate at the largest raw weight.
    lw = lw.cwiseMin(0.0);
    lw.array() -= log_sum_exp(lw);
    if (khat)
    {
        *khat = k;
    }
    return lw;
}

LooResult psis_loo(const Eigen::MatrixXd& loglik)
{
    check_matrix(loglik, kMinLooDraws);
    const Eigen::Index n = loglik.cols();
    LooResult out;
    out.pointwise.resize(n);
    out.pareto_k.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        const Eigen::VectorXd ll = loglik.col(i);
        if (ll.minCoeff() == ll.maxCoeff())
        {
            // Uniform weights: the LOO density is the common value, exactly.
            out.pareto_k(i) = 0.0;
            out.pointwise(i) = ll(0);
            continue;
        }
        double k = 0.0;
        const Eigen::VectorXd lw = psis_log_weights(-ll, &k);
        if (!lw.allFinite())
        {
            throw NumericalError("non-finite importance weights for observation " + std::to_string(i));
        }
        out.pareto_k(i) = k;
        out.pointwise(i) = log_sum_exp(lw + ll);
        out.p_loo += log_mean_exp(ll) - out.pointwise(i);
    }
    out.looic = -2.0 * out.pointwise.sum();
    out.se = ic_se(out.pointwise);
    return out;
}

int IcReport::bad_k_count() const
{
    return static_cast<int>((pareto_k.array() > kParetoKWarning).count());
}

nlohmann::json IcReport::to_json() const
{
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    return {{"label", label},
            {"waic", waic},
            {"waic_se", waic_se},
            {"looic", looic},
            {"looic_se", looic_se},
            {"n", n},
            {"pareto_k", vec(pareto_k)},
            {"waic_pointwise", vec(waic_pointwise)},
            {"loo_pointwise", vec(loo_pointwise)}};
}

IcReport IcReport::from_json(const nlohmann::json& doc)
{
    auto vec = [&](const char* key) {
        Eigen::VectorXd v;
        if (doc.contains(key))
        {
            const auto& arr = doc.at(key);
            v.resize(static_cast<Eigen::Index>(arr.size()));
            for (std::size_t i = 0; i < arr.size(); ++i)
            {
                // JSON has no infinity; a null k is an unusable (infinite) tail.
                v(static_cast<Eigen::Index>(i)) =
                    arr[i].is_null() ? std::numeric_limits<double>::infinity() : arr[i].get<double>();
            }
        }
        return v;
    };
    IcReport r;
    r.label = doc.at("label").get<std::string>();
    auto num = [&](const char* key) {
        const auto& v = doc.at(key);
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    };
    r.waic = num("waic");
    r.waic_se = num("waic_se");
    r.looic = num("looic");
    r.looic_se = num("looic_se");
    r.n = doc.value("n", 0);
    r.pareto_k = vec("pareto_k");
    r.waic_pointwise = vec("waic_pointwise");
    r.loo_pointwise = vec("loo_pointwise");
    return r;
}

IcReport ic_report(const std::string& label, const Eigen::MatrixXd& loglik)
{
    const WaicResult w = waic(loglik);
    const LooResult l = psis_loo(loglik);
    IcReport r;
    r.label = label;
    r.waic = w.waic;
    r.waic_se = w.se;
    r.looic = l.looic;
    r.looic_se = l.se;
    r.pareto_k = l.pareto_k;
    r.waic_pointwise = w.pointwise;
    r.loo_pointwise = l.pointwise;
    r.n = static_cast<int>(loglik.cols());
    return r;
}

IcReport sum_reports(const std::string& label, const std::vector<IcReport>& parts)
{
    if (parts.empty())
    {
        throw InvalidArgument("nothing to sum");
    }
    IcReport out;
    out.label = label;
    out.n = parts.front().n;
    double waic_var = 0.0;
    double loo_var = 0.0;
    bool pointwise = true;
    for (const auto& p : parts)
    {
        if (p.n != out.n)
        {
            throw InvalidArgument("summed reports must cover the same observations");
        }
        out.waic += p.waic;
        out.looic += p.looic;
        waic_var += p.waic_se * p.waic_se;
        loo_var += p.looic_se * p.looic_se;
        pointwise = pointwise && p.loo_pointwise.size() == p.n && p.waic_pointwise.size() == p.n;
    }
    out.waic_se = std::sqrt(waic_var);
    out.looic_se = std::sqrt(loo_var);
    if (pointwise)
    {
        out.waic_pointwise = Eigen::VectorXd::Zero(out.n);
        out.loo_pointwise = Eigen::VectorXd::Zero(out.n);
        for (const auto& p : parts)
        {
            out.waic_pointwise += p.waic_pointwise;
            out.loo_pointwise += p.loo_pointwise;
        }
    }
    return out;
}

std::vector<ComparisonRow> compare(const std::vector<IcReport>& reports)
{
    if (reports.size() < 2)
    {
        throw InvalidArgument("comparison needs at least two models");
    }
    for (const auto& r : reports)
    {
        if (r.n != reports.front().n)
        {
            throw InvalidArgument("models were evaluated on different observations (" + std::to_string(r.n) + " vs "
                                  + std::to_string(reports.front().n) + ")");
        }
    }
    std::vector<std::size_t> order(reports.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return reports[a].looic < reports[b].looic; });
    const IcReport& best = reports[order.front()];
    std::vector<ComparisonRow> rows;
    for (std::size_t idx : order)
    {
        const IcReport& r = reports[idx];
        ComparisonRow row;
        row.label = r.label;
        row.looic = r.looic;
        row.looic_se = r.looic_se;
        row.waic = r.waic;
        row.delta = r.looic - best.looic;
        const bool paired = r.loo_pointwise.size() > 0 && r.loo_pointwise.size() == best.loo_pointwise.size();
        row.delta_se = paired ? ic_se(best.loo_pointwise - r.loo_pointwise)
                              : std::sqrt(r.looic_se * r.looic_se + best.looic_se * best.looic_se);
        if (rows.empty())
        {
            row.verdict = "best";
        }
        else
        {
            row.verdict = row.delta == 0.0 || std::abs(row.delta) < row.delta_se ? "indistinguishable" : "worse";
        }
        rows.push_back(row);
    }
    return rows;
}

std::string format_comparison(const std::vector<ComparisonRow>& rows)
{
    std::size_t width = 5;
    for (const auto& r : rows)
    {
        width = std::max(width, r.label.size());
    }
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s %12s %10s %12s %10s %10s  %s\n", static_cast<int>(width), "model", "looic",
                  "se", "waic", "delta", "delta_se", "verdict");
    out << buf;
    for (const auto& r : rows)
    {
        std::snprintf(buf, sizeof buf, "%-*s %12.1f %10.1f %12.1f %10.1f %10.1f  %s\n", static_cast<int>(width),
                      r.label.c_str(), r.looic, r.looic_se, r.waic, r.delta, r.delta_se, r.verdict.c_str());
        out << buf;
    }
    return out.str();
}

nlohmann::json comparison_json(const std::vector<ComparisonRow>& rows)
{
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows)
    {
        out.push_back({{"label", r.label},
                       {"looic", r.looic},
                       {"looic_se", r.looic_se},
                       {"waic", r.waic},
                       {"delta", r.delta},
                       {"delta_se", r.delta_se},
                       {"verdict", r.verdict}});
    }
    return out;
}

}  // namespace mets
