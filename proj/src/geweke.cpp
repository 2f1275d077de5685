#include "mets/geweke.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "mets/distributions.hpp"
#include "mets/errors.hpp"

namespace mets {

namespace {

DesignData geweke_design(const GewekeShape& shape, RngStream& rng)
{
    const int n = shape.subjects * shape.visits;
    DesignData d;
    d.X.resize(n, shape.P);
    d.Y.setZero(n, shape.K);
    d.observed.setConstant(n, shape.K, true);
    d.n_subjects = shape.subjects;
    d.subject_of.resize(static_cast<std::size_t>(n));
    d.delta_t.assign(static_cast<std::size_t>(n), std::nan(""));
    d.prev_row.assign(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < shape.subjects; ++i)
    {
        for (int j = 0; j < shape.visits; ++j)
        {
            const int r = i * shape.visits + j;
            d.subject_of[static_cast<std::size_t>(r)] = i;
            // The last covariate is constant within a subject, like sex.
            for (int p = 0; p < shape.P; ++p)
            {
                const bool subject_level = p == shape.P - 1 && j > 0;
                d.X(r, p) = subject_level ? d.X(r - 1, p) : rng.normal();
            }
            if (j > 0)
            {
                d.prev_row[static_cast<std::size_t>(r)] = r - 1;
                d.delta_t[static_cast<std::size_t>(r)] = 0.5 + 0.25 * j;
            }
            // First component missing on every middle visit.
            if (j % 3 == 1)
            {
                d.observed(r, 0) = false;
            }
        }
    }
    d.finalize();
    return d;
}

ParameterState prior_draw(const DesignData& data, const ModelConfig& config, RngStream& rng)
{
    ParameterState s;
    const int P = config.P;
    const int K = config.K;
    s.z.resize(P, K);
    for (int p = 0; p < P; ++p)
    {
        for (int k = 0; k < K; ++k)
        {
            s.z(p, k) = rng.normal();
        }
    }
    s.lambda.resize(P);
    s.aux_lambda.resize(P);
    for (int p = 0; p < P; ++p)
    {
        const auto [lam2, aux] = aux_pair_sample(rng);
        s.lambda(p) = std::sqrt(lam2);
        s.aux_lambda(p) = aux;
    }
    s.tau.resize(kNumGroups);
    s.aux_tau.resize(kNumGroups);
    for (int g = 0; g < kNumGroups; ++g)
    {
        const auto [tau2, aux] = aux_pair_sample(rng);
        s.tau(g) = std::sqrt(tau2);
        s.aux_tau(g) = aux;
    }
    s.refresh_beta(config.groups);
    s.mu_b = mvn_sample(Eigen::VectorXd::Zero(K), SpdMatrix::identity(K), rng);
    s.Sigma_b = inverse_wishart_sample(config.nu_b, config.Psi_b, rng);
    s.b.resize(data.n_subjects, K);
    for (int i = 0; i < data.n_subjects; ++i)
    {
        s.b.row(i) = mvn_sample(s.mu_b, s.Sigma_b, rng).transpose();
    }
    s.Sigma_Y = inverse_wishart_sample(config.nu_Y, config.Psi_Y, rng);
    if (config.tcar)
    {
        s.phi.resize(K);
        for (int k = 0; k < K; ++k)
        {
            s.phi(k) = gamma_sample(config.phi_shape, config.phi_rate, rng);
        }
    }
    s.y_missing.setZero(static_cast<Eigen::Index>(data.missing_cells.size()));
    return s;
}

// Full outcome matrix given the parameters, row by row so lags are available.
Eigen::MatrixXd forward_outcomes(const ParameterState& state, const DesignData& data, RngStream& rng)
{
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(data.N(), data.K());
    for (int r = 0; r < data.N(); ++r)
    {
        const Eigen::VectorXd mu = linear_predictor(state, data, r, y);
        y.row(r) = mvn_sample(mu, state.Sigma_Y, rng).transpose();
    }
    return y;
}

void store_missing(ParameterState& state, const DesignData& data, const Eigen::MatrixXd& y)
{
    for (std::size_t m = 0; m < data.missing_cells.size(); ++m)
    {
        const auto [r, k] = data.missing_cells[m];
        state.y_missing(static_cast<Eigen::Index>(m)) = y(r, k);
    }
}

struct Probe
{
    std::string name;
    std::function<double(const ParameterState&, const Eigen::MatrixXd&)> f;
};

std::vector<Probe> probe_panel(const GewekeShape& shape)
{
    const int P = shape.P;
    const int K = shape.K;
    std::vector<Probe> probes;
    auto add = [&probes](std::string name, std::function<double(const ParameterState&, const Eigen::MatrixXd&)> f) {
        probes.push_back({std::move(name), std::move(f)});
    };
    add("Sigma_Y[0,0]", [](const ParameterState& s, const Eigen::MatrixXd&) { return s.Sigma_Y(0, 0); });
    add("Sigma_Y[last,last]",
        [K](const ParameterState& s, const Eigen::MatrixXd&) { return s.Sigma_Y(K - 1, K - 1); });
    add("Sigma_Y[0,last]", [K](const ParameterState& s, const Eigen::MatrixXd&) { return s.Sigma_Y(0, K - 1); });
    add("Sigma_b[0,0]", [](const ParameterState& s, const Eigen::MatrixXd&) { return s.Sigma_b(0, 0); });
    add("Sigma_b[last,last]",
        [K](const ParameterState& s, const Eigen::MatrixXd&) { return s.Sigma_b(K - 1, K - 1); });
    add("Sigma_b[0,last]", [K](const ParameterState& s, const Eigen::MatrixXd&) { return s.Sigma_b(0, K - 1); });
    add("mu_b[0]", [](const ParameterState& s, const Eigen::MatrixXd&) { return s.mu_b(0); });
    add("mu_b[last]", [K](const ParameterState& s, const Eigen::MatrixXd&) { return s.mu_b(K - 1); });
    add("b[0,0]", [](const ParameterState& s, const Eigen::MatrixXd&) { return s.b(0, 0); });
    add("atan beta[0,0]", [](const ParameterState& s, const Eigen::MatrixXd&) { return std::atan(s.beta(0, 0)); });
    add("atan beta[last,last]",
        [P, K](const ParameterState& s, const Eigen::MatrixXd&) { return std::atan(s.beta(P - 1, K - 1)); });
    add("atan beta[0,0]^2",
        [](const ParameterState& s, const Eigen::MatrixXd&) { return std::atan(s.beta(0, 0) * s.beta(0, 0)); });
    add("atan z[last,0]^2",
        [P](const ParameterState& s, const Eigen::MatrixXd&) { return std::atan(s.z(P - 1, 0) * s.z(P - 1, 0)); });
    add("atan beta[last,0]^2", [P](const ParameterState& s, const Eigen::MatrixXd&) {
        return std::atan(s.beta(P - 1, 0) * s.beta(P - 1, 0));
    });
    add("b[last,0]^2", [](const ParameterState& s, const Eigen::MatrixXd&) {
        const Eigen::Index i = s.b.rows() - 1;
        return s.b(i, 0) * s.b(i, 0);
    });
    add("atan lambda[0]", [](const ParameterState& s, const Eigen::MatrixXd&) { return std::atan(s.lambda(0)); });
    add("atan lambda[last]",
        [P](const ParameterState& s, const Eigen::MatrixXd&) { return std::atan(s.lambda(P - 1)); });
    for (int g = 0; g < kNumGroups; ++g)
    {
        add("atan tau[" + std::to_string(g) + "]",
            [g](const ParameterState& s, const Eigen::MatrixXd&) { return std::atan(s.tau(g)); });
    }
    // Outcome moments are unbounded under the horseshoe, so they are squashed.
    add("atan mean y[0]", [](const ParameterState&, const Eigen::MatrixXd& y) { return std::atan(y.col(0).mean()); });
    add("atan mean y[last]",
        [K](const ParameterState&, const Eigen::MatrixXd& y) { return std::atan(y.col(K - 1).mean()); });
    add("atan mean y[0]^2", [](const ParameterState&, const Eigen::MatrixXd& y) {
        return std::atan(y.col(0).squaredNorm() / static_cast<double>(y.rows()));
    });
    add("atan mean y[0]*y[last]", [K](const ParameterState&, const Eigen::MatrixXd& y) {
        return std::atan(y.col(0).dot(y.col(K - 1)) / static_cast<double>(y.rows()));
    });
    if (shape.tcar)
    {
        for (int k = 0; k < K; ++k)
        {
            add("log phi[" + std::to_string(k) + "]",
                [k](const ParameterState& s, const Eigen::MatrixXd&) { return std::log(s.phi(k)); });
        }
    }
    return probes;
}

}  // namespace

double GewekeReport::max_abs_z() const
{
    double m = 0.0;
    for (const auto& s : statistics)
    {
        m = std::max(m, std::abs(s.z));
    }
    return m;
}

GewekeReport geweke_test(const GewekeShape& shape, const GewekeSettings& settings)
{
    if (settings.chains < 2 || settings.iterations < 2 * settings.chains)
    {
        throw InvalidArgument("insufficient draws for the Geweke test");
    }
    if (shape.subjects < 1 || shape.visits < 1 || shape.P < 1 || shape.K < 2)
    {
        throw InvalidArgument("Geweke shape needs subjects, visits, P >= 1 and K >= 2");
    }
    RngStream design_rng(settings.seed, 0);
    const DesignData data = geweke_design(shape, design_rng);
    std::vector<int> groups(static_cast<std::size_t>(shape.P));
    for (int p = 0; p < shape.P; ++p)
    {
        // Last group deliberately left empty when P is small.
        groups[static_cast<std::size_t>(p)] = std::min(p, kNumGroups - 2);
    }
    const ModelConfig config = ModelConfig::defaults(shape.P, groups, shape.K, shape.tcar);
    const auto probes = probe_panel(shape);
    const std::size_t n_probe = probes.size();
    const auto iters = static_cast<std::size_t>(settings.iterations);

    // Forward (marginal-conditional) simulator.
    std::vector<double> fwd_sum(n_probe, 0.0);
    std::vector<double> fwd_sq(n_probe, 0.0);
    RngStream fwd_rng(settings.seed, 1);
    for (std::size_t t = 0; t < iters; ++t)
    {
        ParameterState s = prior_draw(data, config, fwd_rng);
        const Eigen::MatrixXd y = forward_outcomes(s, data, fwd_rng);
        for (std::size_t j = 0; j < n_probe; ++j)
        {
            const double v = probes[j].f(s, y);
            fwd_sum[j] += v;
            fwd_sq[j] += v * v;
        }
    }

    // Successive-conditional simulator: independent chains, each started at
    // an exact joint draw, so every chain is stationary from the first sweep
    // when the kernels are correct.
    const auto n_chains = static_cast<std::size_t>(settings.chains);
    const std::size_t length = iters / n_chains;
    std::vector<std::vector<double>> chain_means(n_probe, std::vector<double>(n_chains, 0.0));
    GewekeReport report;
    for (std::size_t c = 0; c < n_chains; ++c)
    {
        RngStream sc_rng(settings.seed, 2 + c);
        GibbsSampler gibbs(data, config, settings.kernel);
        ParameterState state = prior_draw(data, config, sc_rng);
        Eigen::MatrixXd y = forward_outcomes(state, data, sc_rng);
        gibbs.set_outcomes(y);
        store_missing(state, data, y);
        std::vector<double> sums(n_probe, 0.0);
        std::size_t done = 0;
        try
        {
            for (; done < length; ++done)
            {
                gibbs.sweep(state, sc_rng, false);
                y = forward_outcomes(state, data, sc_rng);
                gibbs.set_outcomes(y);
                store_missing(state, data, y);
                for (std::size_t j = 0; j < n_probe; ++j)
                {
                    sums[j] += probes[j].f(state, y);
                }
            }
        }
        catch (const NumericalError&)
        {
            ++report.failed_chains;
        }
        for (std::size_t j = 0; j < n_probe; ++j)
        {
            chain_means[j][c] = done > 0 ? sums[j] / static_cast<double>(done) : probes[j].f(state, y);
        }
    }

    auto& out = report.statistics;
    const double n = static_cast<double>(iters);
    const double r = static_cast<double>(n_chains);
    for (std::size_t j = 0; j < n_probe; ++j)
    {
        GewekeStatistic st;
        st.name = probes[j].name;
        st.forward_mean = fwd_sum[j] / n;
        const double fwd_var = std::max(0.0, fwd_sq[j] / n - st.forward_mean * st.forward_mean) * n / (n - 1.0);
        double gsum = 0.0;
        for (double v : chain_means[j])
        {
            gsum += v;
        }
        st.gibbs_mean = gsum / r;
        double gss = 0.0;
        for (double v : chain_means[j])
        {
            gss += (v - st.gibbs_mean) * (v - st.gibbs_mean);
        }
        const double se = std::sqrt(fwd_var / n + gss / (r - 1.0) / r);
        st.z = se > 0.0 ? (st.forward_mean - st.gibbs_mean) / se : 0.0;
        out.push_back(std::move(st));
    }
    return report;
}

}  // namespace mets
