#include "mets/model.hpp"

#include <cmath>
#include <limits>

#include "mets/errors.hpp"

namespace mets {

namespace {

constexpr double kDaysPerYear = 365.25;

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m)
{
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
    {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j)
        {
            row.push_back(m(i, j));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& doc)
{
    const auto rows = static_cast<Eigen::Index>(doc.size());
    const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(doc[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
    {
        if (static_cast<Eigen::Index>(doc[i].size()) != cols)
        {
            throw ValidationError("ragged matrix in JSON");
        }
        for (Eigen::Index j = 0; j < cols; ++j)
        {
            m(i, j) = doc[i][j].get<double>();
        }
    }
    return m;
}

// Indices of observed / missing components of a row.
void split_indices(const DesignData& data, int row, std::vector<int>& obs, std::vector<int>& mis)
{
    obs.clear();
    mis.clear();
    for (int k = 0; k < data.K(); ++k)
    {
        (data.observed(row, k) ? obs : mis).push_back(k);
    }
}

}  // namespace

ModelConfig ModelConfig::defaults(int P, std::vector<int> groups, int K, bool tcar)
{
    ModelConfig c;
    c.K = K;
    c.P = P;
    c.Psi_Y = SpdMatrix::identity(K, 2.0);
    c.Psi_b = SpdMatrix::identity(K, 12.0);
    c.groups = std::move(groups);
    c.tcar = tcar;
    c.validate();
    return c;
}

ModelConfig ModelConfig::from_schema(const CovariateSchema& schema, bool tcar)
{
    std::vector<int> groups;
    for (const auto& e : schema.entries())
    {
        groups.push_back(static_cast<int>(e.group));
    }
    return defaults(static_cast<int>(schema.size()), std::move(groups), kNumTargets, tcar);
}

void ModelConfig::validate() const
{
    if (K < 1 || P < 0)
    {
        throw InvalidArgument("model dimensions must satisfy K >= 1, P >= 0");
    }
    if (static_cast<int>(groups.size()) != P)
    {
        throw InvalidArgument("group assignment must cover every covariate");
    }
    for (int g : groups)
    {
        if (g < 0 || g >= kNumGroups)
        {
            throw InvalidArgument("group index out of range");
        }
    }
    if (Psi_Y.dimension() != K || Psi_b.dimension() != K)
    {
        throw InvalidArgument("scale matrices must be K x K");
    }
    if (!(nu_Y > K + 1) || !(nu_b > K + 1))
    {
        throw InvalidArgument("inverse-Wishart degrees of freedom must exceed K + 1");
    }
    if (!(phi_shape > 0.0) || !(phi_rate > 0.0))
    {
        throw InvalidArgument("phi prior parameters must be positive");
    }
}

nlohmann::json ModelConfig::to_json() const
{
    return {{"K", K},
            {"P", P},
            {"nu_Y", nu_Y},
            {"Psi_Y", matrix_to_json(Psi_Y.values())},
            {"nu_b", nu_b},
            {"Psi_b", matrix_to_json(Psi_b.values())},
            {"groups", groups},
            {"tcar", tcar},
            {"phi_prior", {{"shape", phi_shape}, {"rate", phi_rate}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc)
{
    ModelConfig c;
    try
    {
        c.K = doc.at("K").get<int>();
        c.P = doc.at("P").get<int>();
        c.nu_Y = doc.at("nu_Y").get<double>();
        c.Psi_Y = SpdMatrix(matrix_from_json(doc.at("Psi_Y")));
        c.nu_b = doc.at("nu_b").get<double>();
        c.Psi_b = SpdMatrix(matrix_from_json(doc.at("Psi_b")));
        c.groups = doc.at("groups").get<std::vector<int>>();
        c.tcar = doc.at("tcar").get<bool>();
        c.phi_shape = doc.at("phi_prior").at("shape").get<double>();
        c.phi_rate = doc.at("phi_prior").at("rate").get<double>();
    }
    catch (const nlohmann::json::exception& ex)
    {
        throw ValidationError(std::string("malformed model config: ") + ex.what());
    }
    catch (const NumericalError& ex)
    {
        throw ValidationError(std::string("model config scale matrix: ") + ex.what());
    }
    c.validate();
    return c;
}

void DesignData::finalize()
{
    const int n = N();
    if (Y.rows() != n || observed.rows() != n || observed.cols() != K())
    {
        throw InvalidArgument("design data: X, Y and observed mask disagree in shape");
    }
    if (static_cast<int>(subject_of.size()) != n || static_cast<int>(delta_t.size()) != n
        || static_cast<int>(prev_row.size()) != n)
    {
        throw InvalidArgument("design data: row metadata has the wrong length");
    }
    next_row.assign(static_cast<std::size_t>(n), -1);
    missing_cells.clear();
    for (int r = 0; r < n; ++r)
    {
        if (subject_of[r] < 0 || subject_of[r] >= n_subjects)
        {
            throw InvalidArgument("design data: subject index out of range");
        }
        const int p = prev_row[r];
        if (p >= 0)
        {
            if (p >= r || subject_of[p] != subject_of[r] || !(delta_t[r] > 0.0))
            {
                throw InvalidArgument("design data: invalid lag structure at row " + std::to_string(r));
            }
            next_row[p] = r;
        }
        for (int k = 0; k < K(); ++k)
        {
            if (!observed(r, k))
            {
                Y(r, k) = 0.0;
                missing_cells.emplace_back(r, k);
            }
        }
    }
}

DesignData build_design(const Cohort& cohort, std::vector<std::string>* subject_ids)
{
    if (!cohort.standardization)
    {
        throw InvalidArgument("build_design expects a standardized cohort");
    }
    const auto& recs = cohort.records;
    const int n = static_cast<int>(recs.size());
    const int P = static_cast<int>(cohort.schema.size());
    DesignData d;
    d.X.resize(n, P);
    d.Y.setZero(n, kNumTargets);
    d.observed.setConstant(n, kNumTargets, false);
    d.subject_of.resize(static_cast<std::size_t>(n));
    d.delta_t.assign(static_cast<std::size_t>(n), std::numeric_limits<double>::quiet_NaN());
    d.prev_row.assign(static_cast<std::size_t>(n), -1);
    if (subject_ids)
    {
        subject_ids->clear();
    }
    int subject = -1;
    for (int r = 0; r < n; ++r)
    {
        const auto& rec = recs[static_cast<std::size_t>(r)];
        const bool same = r > 0 && recs[static_cast<std::size_t>(r - 1)].subject_id == rec.subject_id;
        if (!same)
        {
            ++subject;
            if (subject_ids)
            {
                subject_ids->push_back(rec.subject_id);
            }
        }
        else
        {
            d.prev_row[r] = r - 1;
            const auto days = (rec.visit_date - recs[static_cast<std::size_t>(r - 1)].visit_date).count();
            d.delta_t[r] = static_cast<double>(days) / kDaysPerYear;
        }
        d.subject_of[r] = subject;
        for (int p = 0; p < P; ++p)
        {
            const auto& v = rec.covariates[static_cast<std::size_t>(p)];
            if (!v)
            {
                throw ValidationError("subject " + rec.subject_id + ": covariate '" + cohort.schema[p].name
                                      + "' is missing; impute before fitting");
            }
            d.X(r, p) = *v;
        }
        for (int k = 0; k < kNumTargets; ++k)
        {
            const auto& t = rec.targets[static_cast<std::size_t>(k)];
            if (t)
            {
                d.Y(r, k) = *t;
                d.observed(r, k) = true;
            }
            else if (k != kWaist)
            {
                throw ValidationError("subject " + rec.subject_id + ": missing " + std::string(kTargetColumns[k]));
            }
        }
    }
    d.n_subjects = subject + 1;
    d.finalize();
    return d;
}

void ParameterState::refresh_beta(const std::vector<int>& groups)
{
    beta.resize(z.rows(), z.cols());
    for (Eigen::Index p = 0; p < z.rows(); ++p)
    {
        beta.row(p) = tau(groups[static_cast<std::size_t>(p)]) * lambda(p) * z.row(p);
    }
}

Eigen::MatrixXd completed_outcomes(const ParameterState& state, const DesignData& data)
{
    Eigen::MatrixXd y = data.Y;
    for (std::size_t m = 0; m < data.missing_cells.size(); ++m)
    {
        const auto [r, k] = data.missing_cells[m];
        y(r, k) = state.y_missing(static_cast<Eigen::Index>(m));
    }
    return y;
}

Eigen::VectorXd linear_predictor(const ParameterState& state, const DesignData& data, int row,
                                 const Eigen::MatrixXd& completed)
{
    if (row < 0 || row >= data.N())
    {
        throw InvalidArgument("row index out of range");
    }
    Eigen::VectorXd mu = state.beta.transpose() * data.X.row(row).transpose();
    mu += state.b.row(data.subject_of[row]).transpose();
    const int prev = data.prev_row[row];
    if (state.phi.size() > 0 && prev >= 0)
    {
        for (int k = 0; k < data.K(); ++k)
        {
            mu(k) += tcar_decay(state.phi(k), data.delta_t[row]) * completed(prev, k);
        }
    }
    return mu;
}

Eigen::VectorXd linear_predictor(const ParameterState& state, const DesignData& data, int row)
{
    return linear_predictor(state, data, row, completed_outcomes(state, data));
}

Eigen::MatrixXd linear_predictors(const ParameterState& state, const DesignData& data,
                                  const Eigen::MatrixXd& completed)
{
    Eigen::MatrixXd mu = data.X * state.beta;
    for (int r = 0; r < data.N(); ++r)
    {
        mu.row(r) += state.b.row(data.subject_of[r]);
        const int prev = data.prev_row[r];
        if (state.phi.size() > 0 && prev >= 0)
        {
            for (int k = 0; k < data.K(); ++k)
            {
                mu(r, k) += tcar_decay(state.phi(k), data.delta_t[r]) * completed(prev, k);
            }
        }
    }
    return mu;
}

ParameterState initial_state(const DesignData& data, const ModelConfig& config)
{
    config.validate();
    if (data.N() > 0 && (data.P() != config.P || data.K() != config.K))
    {
        throw InvalidArgument("design data dimensions do not match the model config");
    }
    const int P = config.P;
    const int K = config.K;
    ParameterState s;
    s.z.setZero(P, K);
    s.beta.setZero(P, K);
    s.lambda.setOnes(P);
    s.aux_lambda.setOnes(P);
    s.tau.setOnes(kNumGroups);
    s.aux_tau.setOnes(kNumGroups);
    s.b.setZero(data.n_subjects, K);
    s.mu_b.setZero(K);
    s.Sigma_Y = SpdMatrix(config.Psi_Y.values() / (config.nu_Y - K - 1.0));
    s.Sigma_b = SpdMatrix(config.Psi_b.values() / (config.nu_b - K - 1.0));
    if (config.tcar)
    {
        s.phi.setConstant(K, 10.0);
    }
    s.y_missing.setZero(static_cast<Eigen::Index>(data.missing_cells.size()));

    // Conditional means, row by row so lags see already-filled predecessors.
    Eigen::MatrixXd y = data.Y;
    std::vector<int> obs;
    std::vector<int> mis;
    std::size_t cursor = 0;
    for (int r = 0; r < data.N(); ++r)
    {
        split_indices(data, r, obs, mis);
        if (mis.empty())
        {
            continue;
        }
        const Eigen::VectorXd mu = linear_predictor(s, data, r, y);
        const auto& S = s.Sigma_Y.values();
        Eigen::VectorXd cond = mu(mis);
        if (!obs.empty())
        {
            const Eigen::MatrixXd s_oo = S(obs, obs);
            const Eigen::VectorXd dev = y(r, obs).transpose() - mu(obs);
            cond += S(mis, obs) * s_oo.llt().solve(dev);
        }
        for (std::size_t j = 0; j < mis.size(); ++j)
        {
            y(r, mis[j]) = cond(static_cast<Eigen::Index>(j));
            s.y_missing(static_cast<Eigen::Index>(cursor++)) = cond(static_cast<Eigen::Index>(j));
        }
    }
    return s;
}

double log_joint(const ParameterState& state, const DesignData& data, const ModelConfig& config)
{
    const int P = config.P;
    const int K = config.K;
    if (state.z.rows() != P || state.z.cols() != K || state.lambda.size() != P || state.tau.size() != kNumGroups
        || state.b.rows() != data.n_subjects || state.b.cols() != K || state.mu_b.size() != K
        || state.Sigma_Y.dimension() != K || state.Sigma_b.dimension() != K
        || state.y_missing.size() != static_cast<Eigen::Index>(data.missing_cells.size())
        || (config.tcar && state.phi.size() != K) || (data.N() > 0 && (data.P() != P || data.K() != K)))
    {
        throw InvalidArgument("log_joint: state, data and config dimensions disagree");
    }
    const Eigen::MatrixXd y = completed_outcomes(state, data);
    const Eigen::MatrixXd mu = linear_predictors(state, data, y);
    double lp = 0.0;
    const Eigen::VectorXd zero_k = Eigen::VectorXd::Zero(K);
    for (int r = 0; r < data.N(); ++r)
    {
        lp += log_mvn_density(y.row(r).transpose(), mu.row(r).transpose(), state.Sigma_Y);
    }
    for (int i = 0; i < data.n_subjects; ++i)
    {
        lp += log_mvn_density(state.b.row(i).transpose(), state.mu_b, state.Sigma_b);
    }
    lp += log_mvn_density(state.mu_b, zero_k, SpdMatrix::identity(K));
    lp += log_inverse_wishart_density(state.Sigma_Y, config.nu_Y, config.Psi_Y);
    lp += log_inverse_wishart_density(state.Sigma_b, config.nu_b, config.Psi_b);
    for (Eigen::Index p = 0; p < state.z.rows(); ++p)
    {
        for (Eigen::Index k = 0; k < state.z.cols(); ++k)
        {
            lp += log_normal_density(state.z(p, k), 0.0, 1.0);
        }
        lp += log_half_cauchy_density(state.lambda(p));
    }
    for (Eigen::Index g = 0; g < state.tau.size(); ++g)
    {
        lp += log_half_cauchy_density(state.tau(g));
    }
    if (config.tcar)
    {
        for (Eigen::Index k = 0; k < state.phi.size(); ++k)
        {
            lp += log_gamma_density(state.phi(k), config.phi_shape, config.phi_rate);
        }
    }
    return lp;
}

Eigen::VectorXd pointwise_loglik(const ParameterState& state, const DesignData& data)
{
    const Eigen::MatrixXd y = completed_outcomes(state, data);
    const Eigen::MatrixXd mu = linear_predictors(state, data, y);
    Eigen::VectorXd ll(data.N());
    std::vector<int> obs;
    std::vector<int> mis;
    for (int r = 0; r < data.N(); ++r)
    {
        split_indices(data, r, obs, mis);
        if (mis.empty())
        {
            ll(r) = log_mvn_density(y.row(r).transpose(), mu.row(r).transpose(), state.Sigma_Y);
            continue;
        }
        const SpdMatrix s_oo(state.Sigma_Y.values()(obs, obs));
        ll(r) = log_mvn_density(y(r, obs).transpose(), mu(r, obs).transpose(), s_oo);
    }
    return ll;
}

nlohmann::json MetsThresholds::to_json() const
{
    return {{"waist_cm", {{"male", waist_male}, {"female", waist_female}, {"rule", "greater"}}},
            {"pmax_mmhg", {{"male", pmax}, {"female", pmax}, {"rule", "greater_or_equal"}}},
            {"glucose_mgdl", {{"male", glucose}, {"female", glucose}, {"rule", "greater_or_equal"}}},
            {"triglycerides_mgdl",
             {{"male", triglycerides}, {"female", triglycerides}, {"rule", "greater_or_equal"}}},
            {"hdl_mgdl", {{"male", hdl_male}, {"female", hdl_female}, {"rule", "less"}}},
            {"criteria_required", 3}};
}

std::array<std::optional<bool>, kNumTargets> mets_criteria(const std::array<std::optional<double>, kNumTargets>& y,
                                                            Sex sex, const MetsThresholds& t)
{
    const bool male = sex == Sex::male;
    for (int k = kPmax; k < kNumTargets; ++k)
    {
        if (!y[static_cast<std::size_t>(k)])
        {
            throw InvalidArgument("MetS rule needs " + std::string(kTargetColumns[k]));
        }
    }
    std::array<std::optional<bool>, kNumTargets> c{};
    if (y[kWaist])
    {
        c[kWaist] = *y[kWaist] > (male ? t.waist_male : t.waist_female);
    }
    c[kPmax] = *y[kPmax] >= t.pmax;
    c[kGlucose] = *y[kGlucose] >= t.glucose;
    c[kTriglycerides] = *y[kTriglycerides] >= t.triglycerides;
    c[kHdl] = *y[kHdl] < (male ? t.hdl_male : t.hdl_female);
    return c;
}

int mets_indicator(const std::array<std::optional<double>, kNumTargets>& y, Sex sex)
{
    int met = 0;
    for (const auto& c : mets_criteria(y, sex))
    {
        met += c.value_or(false) ? 1 : 0;
    }
    return met >= 3 ? 1 : 0;
}

int mets_indicator(const std::array<double, kNumTargets>& y, Sex sex)
{
    std::array<std::optional<double>, kNumTargets> opt;
    for (std::size_t k = 0; k < opt.size(); ++k)
    {
        opt[k] = y[k];
    }
    return mets_indicator(opt, sex);
}

}  // namespace mets
