#include "mets/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "mets/errors.hpp"

namespace mets {

namespace {

double mean_of(const std::vector<double>& x)
{
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// Biased (divide by n) autocovariance at a single lag.
double autocovariance(const std::vector<double>& x, double mean, std::size_t lag)
{
    double s = 0.0;
    for (std::size_t t = 0; t + lag < x.size(); ++t)
    {
        s += (x[t] - mean) * (x[t + lag] - mean);
    }
    return s / static_cast<double>(x.size());
}

// Multi-chain ESS with Geyer's initial monotone sequence, following the
// split-chain estimator used by common MCMC toolkits.
double multi_chain_ess(const std::vector<std::vector<double>>& chains)
{
    const std::size_t m = chains.size();
    const std::size_t n = chains.front().size();
    std::vector<double> means(m);
    std::vector<double> vars(m);
    for (std::size_t c = 0; c < m; ++c)
    {
        means[c] = mean_of(chains[c]);
        vars[c] = autocovariance(chains[c], means[c], 0) * static_cast<double>(n) / static_cast<double>(n - 1);
    }
    const double mean_var = mean_of(vars);
    double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
    if (m > 1)
    {
        const double grand = mean_of(means);
        double b = 0.0;
        for (double mu : means)
        {
            b += (mu - grand) * (mu - grand);
        }
        var_plus += b / static_cast<double>(m - 1);
    }
    const double total = static_cast<double>(m * n);
    if (!(var_plus > 0.0))
    {
        return total;
    }
    auto mean_acov = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t c = 0; c < m; ++c)
        {
            s += autocovariance(chains[c], means[c], lag);
        }
        return s / static_cast<double>(m);
    };
    std::vector<double> rho(n + 2, 0.0);
    double rho_even = 1.0;
    double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
    rho[0] = rho_even;
    rho[1] = rho_odd;
    std::size_t s = 1;
    while (s + 4 < n && rho_even + rho_odd > 0.0)
    {
        rho_even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
        if (rho_even + rho_odd >= 0.0)
        {
            rho[s + 1] = rho_even;
            rho[s + 2] = rho_odd;
        }
        s += 2;
    }
    const std::size_t max_s = s;
    if (rho_even > 0.0)
    {
        rho[max_s + 1] = rho_even;
    }
    for (std::size_t t = 1; t + 3 <= max_s; t += 2)
    {
        if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t])
        {
            rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
            rho[t + 2] = rho[t + 1];
        }
    }
    double tau = -1.0 + 2.0 * std::accumulate(rho.begin(), rho.begin() + static_cast<long>(max_s), 0.0)
                 + rho[max_s + 1];
    tau = std::max(tau, 1.0 / std::log10(total));
    return std::min(total / tau, total * std::log10(total));
}

std::vector<std::vector<double>> split_chains(const std::vector<std::vector<double>>& chains)
{
    std::vector<std::vector<double>> out;
    for (const auto& c : chains)
    {
        const std::size_t half = c.size() / 2;
        // Odd lengths drop the middle draw.
        out.emplace_back(c.begin(), c.begin() + static_cast<long>(half));
        out.emplace_back(c.end() - static_cast<long>(half), c.end());
    }
    return out;
}

std::vector<std::vector<double>> rank_normalize(const std::vector<std::vector<double>>& chains)
{
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t c = 0; c < chains.size(); ++c)
    {
        for (double v : chains[c])
        {
            all.emplace_back(v, all.size());
        }
    }
    const std::size_t total = all.size();
    std::sort(all.begin(), all.end());
    std::vector<double> rank(total);
    for (std::size_t i = 0; i < total;)
    {
        std::size_t j = i;
        while (j + 1 < total && all[j + 1].first == all[i].first)
        {
            ++j;
        }
        // Average rank (1-based) for ties.
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t)
        {
            rank[all[t].second] = r;
        }
        i = j + 1;
    }
    const boost::math::normal_distribution<double> normal;
    std::vector<std::vector<double>> out(chains.size());
    std::size_t idx = 0;
    for (std::size_t c = 0; c < chains.size(); ++c)
    {
        for (std::size_t t = 0; t < chains[c].size(); ++t)
        {
            const double u = (rank[idx++] - 0.375) / (static_cast<double>(total) + 0.25);
            out[c].push_back(boost::math::quantile(normal, u));
        }
    }
    return out;
}

}  // namespace

double effective_sample_size(const std::vector<double>& chain)
{
    if (chain.size() < 4)
    {
        throw InvalidArgument("ESS needs at least 4 draws");
    }
    return multi_chain_ess({chain});
}

RhatEss rhat_ess(const std::vector<std::vector<double>>& chains)
{
    if (chains.size() < 2)
    {
        throw InvalidArgument("R-hat is undefined for a single chain");
    }
    const std::size_t n = chains.front().size();
    for (const auto& c : chains)
    {
        if (c.size() != n)
        {
            throw InvalidArgument("chains must have equal length");
        }
        for (double v : c)
        {
            if (!std::isfinite(v))
            {
                throw InvalidArgument("draws must be finite");
            }
        }
    }
    if (n < 4)
    {
        throw InvalidArgument("R-hat needs at least 4 draws per chain");
    }
    const double total = static_cast<double>(chains.size() * n);
    const double first = chains.front().front();
    const bool constant = std::all_of(chains.begin(), chains.end(), [&](const std::vector<double>& c) {
        return std::all_of(c.begin(), c.end(), [&](double v) { return v == first; });
    });
    if (constant)
    {
        return {1.0, total};
    }

    const auto split = split_chains(chains);
    const std::size_t half = split.front().size();
    std::vector<double> means;
    double w = 0.0;
    for (const auto& c : split)
    {
        const double mu = mean_of(c);
        means.push_back(mu);
        double ss = 0.0;
        for (double v : c)
        {
            ss += (v - mu) * (v - mu);
        }
        w += ss / static_cast<double>(half - 1);
    }
    w /= static_cast<double>(split.size());
    const double grand = mean_of(means);
    double b = 0.0;
    for (double mu : means)
    {
        b += (mu - grand) * (mu - grand);
    }
    b *= static_cast<double>(half) / static_cast<double>(split.size() - 1);
    RhatEss out;
    if (w > 0.0)
    {
        const double var_plus = (static_cast<double>(half) - 1.0) / static_cast<double>(half) * w
                                + b / static_cast<double>(half);
        out.rhat = std::sqrt(var_plus / w);
    }
    else
    {
        out.rhat = std::numeric_limits<double>::infinity();
    }
    out.ess = multi_chain_ess(split_chains(rank_normalize(chains)));
    return out;
}

RhatEss rhat_ess(const PosteriorDraws& draws, const std::function<double(const Draw&)>& selector)
{
    std::vector<std::vector<double>> chains(static_cast<std::size_t>(draws.chains));
    for (int c = 0; c < draws.chains; ++c)
    {
        for (int s = 0; s < draws.per_chain; ++s)
        {
            chains[static_cast<std::size_t>(c)].push_back(selector(draws.at(c, s)));
        }
    }
    return rhat_ess(chains);
}

std::vector<ScalarDiagnostic> diagnostic_panel(const PosteriorDraws& draws,
                                               const std::vector<std::string>& covariate_names)
{
    std::vector<ScalarDiagnostic> out;
    if (draws.draws.empty())
    {
        return out;
    }
    const Draw& first = draws.draws.front();
    auto add = [&](std::string name, const std::function<double(const Draw&)>& f) {
        const auto r = rhat_ess(draws, f);
        out.push_back({std::move(name), r.rhat, r.ess});
    };
    const auto P = first.beta.rows();
    const auto K = first.beta.cols();
    for (Eigen::Index p = 0; p < P; ++p)
    {
        const std::string cov = static_cast<std::size_t>(p) < covariate_names.size()
                                    ? covariate_names[static_cast<std::size_t>(p)]
                                    : std::to_string(p);
        for (Eigen::Index k = 0; k < K; ++k)
        {
            const std::string target = K == kNumTargets ? std::string(kTargetColumns[static_cast<std::size_t>(k)])
                                                        : std::to_string(k);
            add("beta[" + cov + "," + target + "]",
                [p, k](const Draw& d) { return d.beta(p, k); });
        }
    }
    for (Eigen::Index k = 0; k < K; ++k)
    {
        add("Sigma_Y[" + std::to_string(k) + "," + std::to_string(k) + "]",
            [k](const Draw& d) { return d.Sigma_Y(k, k); });
    }
    for (Eigen::Index k = 0; k < K; ++k)
    {
        add("mu_b[" + std::to_string(k) + "]", [k](const Draw& d) { return d.mu_b(k); });
    }
    for (Eigen::Index g = 0; g < first.tau.size(); ++g)
    {
        add("tau[" + std::to_string(g) + "]", [g](const Draw& d) { return d.tau(g); });
    }
    for (Eigen::Index k = 0; k < first.phi.size(); ++k)
    {
        add("phi[" + std::to_string(k) + "]", [k](const Draw& d) { return d.phi(k); });
    }
    add("log_joint", [](const Draw& d) { return d.log_joint; });
    return out;
}

}  // namespace mets
