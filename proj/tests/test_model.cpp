#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mets/errors.hpp"
#include "mets/model.hpp"
#include "support.hpp"

using namespace mets;

namespace {

// Independent density code: explicit LU determinants and inverses, no SpdMatrix.
double oracle_mvn(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, const Eigen::MatrixXd& s)
{
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(s);
    const Eigen::VectorXd d = x - mu;
    return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * M_PI) + std::log(lu.determinant())
                   + d.dot(lu.inverse() * d));
}

double oracle_iw(const Eigen::MatrixXd& s, double nu, const Eigen::MatrixXd& psi)
{
    const double k = static_cast<double>(s.rows());
    double log_gamma_k = k * (k - 1.0) / 4.0 * std::log(M_PI);
    for (int j = 1; j <= s.rows(); ++j)
    {
        log_gamma_k += std::lgamma(nu / 2.0 + (1.0 - j) / 2.0);
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(s);
    return nu / 2.0 * std::log(psi.determinant()) - nu * k / 2.0 * std::log(2.0) - log_gamma_k
           - (nu + k + 1.0) / 2.0 * std::log(lu.determinant()) - 0.5 * (psi * lu.inverse()).trace();
}

double oracle_half_cauchy(double x)
{
    return std::log(2.0 / M_PI) - std::log1p(x * x);
}

double oracle_gamma(double x, double shape, double rate)
{
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double oracle_log_joint(const ParameterState& s, const DesignData& d, const ModelConfig& c)
{
    Eigen::MatrixXd y = d.Y;
    for (std::size_t m = 0; m < d.missing_cells.size(); ++m)
    {
        y(d.missing_cells[m].first, d.missing_cells[m].second) = s.y_missing(static_cast<Eigen::Index>(m));
    }
    Eigen::MatrixXd beta(c.P, c.K);
    for (int p = 0; p < c.P; ++p)
    {
        for (int k = 0; k < c.K; ++k)
        {
            beta(p, k) = s.tau(c.groups[p]) * s.lambda(p) * s.z(p, k);
        }
    }
    double lp = 0.0;
    for (int r = 0; r < d.N(); ++r)
    {
        Eigen::VectorXd mu = (d.X.row(r) * beta).transpose() + s.b.row(d.subject_of[r]).transpose();
        if (c.tcar && d.prev_row[r] >= 0)
        {
            for (int k = 0; k < c.K; ++k)
            {
                mu(k) += std::exp(-s.phi(k) * d.delta_t[r]) * y(d.prev_row[r], k);
            }
        }
        lp += oracle_mvn(y.row(r).transpose(), mu, s.Sigma_Y.values());
    }
    for (int i = 0; i < d.n_subjects; ++i)
    {
        lp += oracle_mvn(s.b.row(i).transpose(), s.mu_b, s.Sigma_b.values());
    }
    lp += oracle_mvn(s.mu_b, Eigen::VectorXd::Zero(c.K), Eigen::MatrixXd::Identity(c.K, c.K));
    lp += oracle_iw(s.Sigma_Y.values(), c.nu_Y, c.Psi_Y.values());
    lp += oracle_iw(s.Sigma_b.values(), c.nu_b, c.Psi_b.values());
    for (int p = 0; p < c.P; ++p)
    {
        for (int k = 0; k < c.K; ++k)
        {
            lp += -0.5 * std::log(2.0 * M_PI) - 0.5 * s.z(p, k) * s.z(p, k);
        }
        lp += oracle_half_cauchy(s.lambda(p));
    }
    for (Eigen::Index g = 0; g < s.tau.size(); ++g)
    {
        lp += oracle_half_cauchy(s.tau(g));
    }
    if (c.tcar)
    {
        for (int k = 0; k < c.K; ++k)
        {
            lp += oracle_gamma(s.phi(k), c.phi_shape, c.phi_rate);
        }
    }
    return lp;
}

ModelConfig config_for(int P, int K, bool tcar)
{
    std::vector<int> groups(static_cast<std::size_t>(P));
    for (int p = 0; p < P; ++p)
    {
        groups[static_cast<std::size_t>(p)] = p % kNumGroups;
    }
    return ModelConfig::defaults(P, groups, K, tcar);
}

// One subject with two visits a quarter-year apart and K = 1.
DesignData two_visit_design()
{
    DesignData d;
    d.X = Eigen::MatrixXd::Zero(2, 1);
    d.Y = Eigen::MatrixXd::Zero(2, 1);
    d.Y(0, 0) = 1.0;
    d.observed.setConstant(2, 1, true);
    d.n_subjects = 1;
    d.subject_of = {0, 0};
    d.prev_row = {-1, 0};
    d.delta_t = {std::nan(""), 0.25};
    d.finalize();
    return d;
}

double decay_component(double phi)
{
    const DesignData d = two_visit_design();
    const ModelConfig c = config_for(1, 1, true);
    ParameterState s = initial_state(d, c);
    s.phi.setConstant(1, phi);
    return linear_predictor(s, d, 1)(0);
}

}  // namespace

TEST_CASE("log_joint likelihood term at the mode")
{
    DesignData d;
    d.X = Eigen::MatrixXd::Zero(1, 1);
    d.Y = Eigen::MatrixXd::Zero(1, 5);
    d.observed.setConstant(1, 5, true);
    d.n_subjects = 1;
    d.subject_of = {0};
    d.prev_row = {-1};
    d.delta_t = {std::nan("")};
    d.finalize();
    const ModelConfig c = config_for(1, 5, false);
    ParameterState s = initial_state(d, c);
    s.Sigma_Y = SpdMatrix::identity(5);

    // Subtracting the prior part isolates the likelihood of the single row.
    auto likelihood = [&](const ParameterState& st) {
        ModelConfig empty = c;
        DesignData none = d;
        none.X.resize(0, 1);
        none.Y.resize(0, 5);
        none.observed.resize(0, 5);
        none.subject_of.clear();
        none.prev_row.clear();
        none.delta_t.clear();
        none.finalize();
        return log_joint(st, d, c) - log_joint(st, none, empty);
    };
    CHECK(likelihood(s) == doctest::Approx(-4.5947).epsilon(1e-4));
    CHECK(pointwise_loglik(s, d)(0) == doctest::Approx(-2.5 * std::log(2.0 * M_PI)));
    d.Y(0, 0) = 1.0;
    CHECK(likelihood(s) == doctest::Approx(-2.5 * std::log(2.0 * M_PI) - 0.5));
}

TEST_CASE("log_joint matches the brute-force oracle on random states")
{
    std::mt19937_64 gen(2024);
    for (int rep = 0; rep < 40; ++rep)
    {
        const int K = 1 + rep % 5;
        const int P = 1 + rep % 4;
        const bool tcar = rep % 2 == 1;
        const DesignData d = test::random_design(2 + rep % 4, 1 + rep % 4, P, K, 0.4, gen);
        const ModelConfig c = config_for(P, K, tcar);
        const ParameterState s = test::random_state(d, c, gen);
        const double expected = oracle_log_joint(s, d, c);
        CHECK(std::abs(log_joint(s, d, c) - expected) < 1e-8 * std::max(1.0, std::abs(expected)));
    }
}

TEST_CASE("log_joint rejects mismatched dimensions")
{
    std::mt19937_64 gen(1);
    const DesignData d = test::random_design(3, 2, 2, 3, 0.0, gen);
    const ModelConfig c = config_for(2, 3, false);
    ParameterState s = test::random_state(d, c, gen);
    s.b.conservativeResize(2, 3);
    CHECK_THROWS_AS(log_joint(s, d, c), InvalidArgument);
}

TEST_CASE("pointwise log-likelihood marginalizes the missing waist")
{
    std::mt19937_64 gen(3);
    const DesignData d = test::random_design(4, 3, 2, 3, 0.5, gen);
    const ModelConfig c = config_for(2, 3, false);
    const ParameterState s = test::random_state(d, c, gen);
    const Eigen::VectorXd ll = pointwise_loglik(s, d);
    for (int r = 0; r < d.N(); ++r)
    {
        const Eigen::VectorXd mu = linear_predictor(s, d, r);
        if (d.observed(r, 0))
        {
            CHECK(ll(r) == doctest::Approx(oracle_mvn(d.Y.row(r).transpose(), mu, s.Sigma_Y.values())));
        }
        else
        {
            const Eigen::MatrixXd sub = s.Sigma_Y.values().bottomRightCorner(2, 2);
            CHECK(ll(r) == doctest::Approx(oracle_mvn(d.Y.row(r).tail(2).transpose(), mu.tail(2), sub)));
        }
    }
}

TEST_CASE("linear predictor without t-CAR")
{
    std::mt19937_64 gen(4);
    const DesignData d = test::random_design(2, 2, 3, 5, 0.0, gen);
    const ModelConfig c = config_for(3, 5, false);
    ParameterState s = initial_state(d, c);
    s.b.setOnes();
    for (int r = 0; r < d.N(); ++r)
    {
        CHECK(linear_predictor(s, d, r).isApprox(Eigen::VectorXd::Ones(5)));
    }
}

TEST_CASE("t-CAR decay anchors")
{
    CHECK(tcar_decay(10.61, 0.25) == doctest::Approx(0.0704748).epsilon(1e-5));
    CHECK(tcar_decay(15.96, 0.25) == doctest::Approx(0.0184997).epsilon(1e-5));
    const double pmax = decay_component(10.61);
    const double trig = decay_component(15.96);
    CHECK(std::abs(pmax - 0.0705) < 1e-4);
    CHECK(std::abs(trig - 0.0185) < 1e-4);
    CHECK(std::abs(pmax - 0.071) < 1e-3);
    CHECK(std::abs(trig - 0.018) < 1e-3);
    // Six months for triglycerides.
    CHECK(std::abs(tcar_decay(15.96, 0.5) - 0.0003) < 1e-4);
}

TEST_CASE("t-CAR term vanishes for large phi")
{
    std::mt19937_64 gen(5);
    for (int rep = 0; rep < 20; ++rep)
    {
        const DesignData d = test::random_design(3, 3, 2, 5, 0.3, gen);
        ModelConfig with = config_for(2, 5, true);
        ParameterState s = test::random_state(d, with, gen);
        ParameterState plain = s;
        plain.phi.resize(0);
        for (int r = 0; r < d.N(); ++r)
        {
            if (d.prev_row[r] >= 0)
            {
                s.phi.setConstant(5, 700.0 / d.delta_t[r]);
                const Eigen::VectorXd diff = linear_predictor(s, d, r) - linear_predictor(plain, d, r);
                CHECK(diff.cwiseAbs().maxCoeff() < 1e-12);
            }
            else
            {
                CHECK(linear_predictor(s, d, r).isApprox(linear_predictor(plain, d, r)));
            }
        }
    }
}

TEST_CASE("log_joint is invariant under subject permutation")
{
    std::mt19937_64 gen(6);
    for (int rep = 0; rep < 10; ++rep)
    {
        const int subjects = 5;
        const int visits = 3;
        const bool tcar = rep % 2 == 0;
        const DesignData d = test::random_design(subjects, visits, 2, 3, 0.4, gen);
        const ModelConfig c = config_for(2, 3, tcar);
        const ParameterState s = test::random_state(d, c, gen);
        const Eigen::MatrixXd y = completed_outcomes(s, d);

        std::vector<int> perm(subjects);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), gen);

        DesignData q = d;
        ParameterState t = s;
        Eigen::MatrixXd yq(d.N(), 3);
        for (int ni = 0; ni < subjects; ++ni)
        {
            const int oi = perm[ni];
            t.b.row(ni) = s.b.row(oi);
            for (int v = 0; v < visits; ++v)
            {
                const int nr = ni * visits + v;
                const int orow = oi * visits + v;
                q.X.row(nr) = d.X.row(orow);
                yq.row(nr) = y.row(orow);
                q.observed.row(nr) = d.observed.row(orow);
                q.delta_t[nr] = d.delta_t[orow];
            }
        }
        q.Y = yq;
        q.finalize();
        t.y_missing.resize(static_cast<Eigen::Index>(q.missing_cells.size()));
        for (std::size_t m = 0; m < q.missing_cells.size(); ++m)
        {
            t.y_missing(static_cast<Eigen::Index>(m)) = yq(q.missing_cells[m].first, q.missing_cells[m].second);
        }
        CHECK(log_joint(t, q, c) == doctest::Approx(log_joint(s, d, c)).epsilon(1e-12));
    }
}

TEST_CASE("beta stays consistent with its factors")
{
    std::mt19937_64 gen(7);
    const DesignData d = test::random_design(2, 2, 4, 5, 0.0, gen);
    const ModelConfig c = config_for(4, 5, false);
    ParameterState s = test::random_state(d, c, gen);
    for (int p = 0; p < 4; ++p)
    {
        for (int k = 0; k < 5; ++k)
        {
            CHECK(s.beta(p, k) == doctest::Approx(s.tau(c.groups[p]) * s.lambda(p) * s.z(p, k)));
        }
    }
}

TEST_CASE("config defaults and validation")
{
    const ModelConfig c = ModelConfig::from_schema(test::small_schema());
    CHECK(c.P == 5);
    CHECK(c.K == 5);
    CHECK(c.groups == std::vector<int>{0, 0, 1, 1, 2});
    CHECK(c.Psi_Y.values().isApprox(2.0 * Eigen::MatrixXd::Identity(5, 5)));
    CHECK(c.Psi_b.values().isApprox(12.0 * Eigen::MatrixXd::Identity(5, 5)));
    CHECK(c.nu_Y == 10.0);
    CHECK(c.nu_b == 10.0);
    CHECK(c.phi_shape == 2.0);
    CHECK(c.phi_rate == 0.2);
    CHECK(ModelConfig::from_json(c.to_json()).to_json() == c.to_json());

    ModelConfig bad = c;
    bad.nu_Y = 6.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = c;
    bad.groups.pop_back();
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("design data from a standardized cohort")
{
    std::istringstream in("subject_id,visit_date,sex,waist_cm,pmax_mmhg,glucose_mgdl,triglycerides_mgdl,hdl_mgdl,"
                          "bmi,ferritin,physical_activity\n"
                          "A,2015-01-01,M,90,120,90,100,50,25,40,1\n"
                          "A,2015-04-02,M,,125,95,110,52,26,45,1\n"
                          "B,2016-01-01,F,80,110,85,90,60,22,30,0\n"
                          "B,2017-01-01,F,82,115,88,95,58,23,35,0\n");
    const auto res = read_cohort(in, test::small_schema());
    const Cohort s = transform_and_standardize(res.cohort, std::vector<bool>(4, true));
    std::vector<std::string> ids;
    const DesignData d = build_design(s, &ids);
    CHECK(ids == std::vector<std::string>{"A", "B"});
    CHECK(d.N() == 4);
    CHECK(d.n_subjects == 2);
    CHECK(d.prev_row == std::vector<int>{-1, 0, -1, 2});
    CHECK(d.next_row == std::vector<int>{1, -1, 3, -1});
    CHECK(d.delta_t[1] == doctest::Approx(91.0 / 365.25));
    CHECK(d.delta_t[3] == doctest::Approx(366.0 / 365.25));
    CHECK(std::isnan(d.delta_t[0]));
    REQUIRE(d.missing_cells.size() == 1);
    CHECK(d.missing_cells[0] == std::pair<int, int>{1, 0});
    CHECK(d.X(0, 4) == doctest::Approx(d.X(0, 0)));
    CHECK(d.X(2, 4) == 0.0);
}

TEST_CASE("MetS rule examples")
{
    using Y = std::array<std::optional<double>, kNumTargets>;
    CHECK(mets_indicator(Y{103.0, 131.0, 101.0, 100.0, 45.0}, Sex::male) == 1);
    CHECK(mets_indicator(Y{89.0, 120.0, 100.0, 140.0, 49.0}, Sex::female) == 1);
    CHECK(mets_indicator(Y{std::nullopt, 131.0, 101.0, 100.0, 45.0}, Sex::male) == 0);
    // Boundaries: waist and HDL strict, the rest inclusive.
    CHECK(mets_indicator(Y{102.0, 130.0, 100.0, 150.0, 45.0}, Sex::male) == 1);
    CHECK(mets_indicator(Y{102.0, 129.9, 100.0, 150.0, 40.0}, Sex::male) == 0);
    CHECK(mets_indicator(Y{88.0, 120.0, 99.0, 150.0, 50.0}, Sex::female) == 0);
    CHECK_THROWS_AS(mets_indicator(Y{90.0, 120.0, std::nullopt, 100.0, 45.0}, Sex::male), InvalidArgument);
    CHECK(mets_indicator(std::array<double, kNumTargets>{103.0, 131.0, 101.0, 100.0, 45.0}, Sex::male) == 1);
}

TEST_CASE("MetS rule is monotone")
{
    std::mt19937_64 gen(8);
    std::uniform_real_distribution<double> waist(60.0, 130.0);
    std::uniform_real_distribution<double> pmax(90.0, 170.0);
    std::uniform_real_distribution<double> glu(60.0, 140.0);
    std::uniform_real_distribution<double> tg(40.0, 300.0);
    std::uniform_real_distribution<double> hdl(25.0, 90.0);
    std::uniform_real_distribution<double> step(0.0, 30.0);
    for (int rep = 0; rep < 20000; ++rep)
    {
        const Sex sex = rep % 2 ? Sex::male : Sex::female;
        std::array<std::optional<double>, kNumTargets> y{waist(gen), pmax(gen), glu(gen), tg(gen), hdl(gen)};
        if (rep % 3 == 0)
        {
            y[kWaist].reset();
        }
        if (mets_indicator(y, sex) == 0)
        {
            continue;
        }
        auto worse = y;
        const int k = rep % kNumTargets;
        if (!worse[static_cast<std::size_t>(k)])
        {
            continue;
        }
        *worse[static_cast<std::size_t>(k)] += k == kHdl ? -step(gen) : step(gen);
        CHECK(mets_indicator(worse, sex) == 1);
    }
}
