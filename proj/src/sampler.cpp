#include "mets/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "mets/diagnostics.hpp"
#include "mets/distributions.hpp"
#include "mets/errors.hpp"

namespace mets {

namespace {

constexpr int kAdaptWindow = 50;
constexpr double kInitialPhiStep = 0.3;

// Draw from N(Q^{-1} lin, Q^{-1}).
Eigen::VectorXd draw_from_precision(const Eigen::MatrixXd& q, const Eigen::VectorXd& lin, RngStream& rng)
{
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (q + q.transpose()));
    if (llt.info() != Eigen::Success)
    {
        throw NumericalError("posterior precision is not positive definite");
    }
    const Eigen::MatrixXd l = llt.matrixL();
    const Eigen::VectorXd mean = llt.solve(lin);
    return mvn_sample_precision(mean, l, rng);
}

}  // namespace

void SamplerSettings::validate() const
{
    if (chains < 1)
    {
        throw InvalidArgument("chains must be >= 1");
    }
    if (samples < 1)
    {
        throw InvalidArgument("samples must be >= 1");
    }
    if (burn_in < 0 || thin < 1)
    {
        throw InvalidArgument("burn-in must be >= 0 and thin >= 1");
    }
}

const std::vector<std::string>& SamplerSettings::update_order()
{
    static const std::vector<std::string> order = {"b", "mu_b", "Sigma_b", "Sigma_Y", "z", "lambda_tau",
                                                   "lambda_tau_noncentered", "subject_shift", "missing_outcomes", "phi"};
    return order;
}

nlohmann::json SamplerSettings::to_json() const
{
    return {{"chains", chains},   {"burn_in", burn_in}, {"samples", samples},          {"thin", thin},
            {"seed", seed},       {"store_loglik", store_loglik}, {"update_order", update_order()}};
}

SamplerSettings SamplerSettings::from_json(const nlohmann::json& doc)
{
    SamplerSettings s;
    try
    {
        s.chains = doc.value("chains", s.chains);
        s.burn_in = doc.value("burn_in", s.burn_in);
        s.samples = doc.value("samples", s.samples);
        s.thin = doc.value("thin", s.thin);
        s.seed = doc.value("seed", s.seed);
        s.store_loglik = doc.value("store_loglik", s.store_loglik);
    }
    catch (const nlohmann::json::exception& ex)
    {
        throw ValidationError(std::string("malformed sampler settings: ") + ex.what());
    }
    s.validate();
    return s;
}

GibbsSampler::GibbsSampler(const DesignData& data, const ModelConfig& config, KernelOptions options)
    : data_(data), config_(config), options_(options)
{
    config_.validate();
    if (data_.N() > 0 && (data_.P() != config_.P || data_.K() != config_.K))
    {
        throw InvalidArgument("design data dimensions do not match the model config");
    }
    if (data_.N() == 0)
    {
        data_.X.resize(0, config_.P);
        data_.Y.resize(0, config_.K);
        data_.observed.resize(0, config_.K);
    }
    xtx_ = data_.X.transpose() * data_.X;
    rows_of_subject_.assign(static_cast<std::size_t>(data_.n_subjects), {});
    for (int r = 0; r < data_.N(); ++r)
    {
        rows_of_subject_[static_cast<std::size_t>(data_.subject_of[r])].push_back(r);
        if (data_.prev_row[r] >= 0)
        {
            lagged_rows_.push_back(r);
        }
    }
    members_of_group_.assign(kNumGroups, {});
    for (int p = 0; p < config_.P; ++p)
    {
        members_of_group_[static_cast<std::size_t>(config_.groups[static_cast<std::size_t>(p)])].push_back(p);
    }
    for (int p = 0; p < config_.P && data_.N() > 0; ++p)
    {
        bool constant = true;
        for (int r = 0; r < data_.N() && constant; ++r)
        {
            const int first = rows_of_subject_[static_cast<std::size_t>(data_.subject_of[r])].front();
            constant = data_.X(r, p) == data_.X(first, p);
        }
        if (constant)
        {
            subject_level_.push_back(p);
        }
    }
    missing_start_.assign(static_cast<std::size_t>(data_.N()), -1);
    for (std::size_t m = data_.missing_cells.size(); m-- > 0;)
    {
        missing_start_[static_cast<std::size_t>(data_.missing_cells[m].first)] = static_cast<int>(m);
    }
    phi_step_.setConstant(config_.tcar ? config_.K : 0, kInitialPhiStep);
    reset_acceptance();
}

void GibbsSampler::set_outcomes(const Eigen::MatrixXd& y)
{
    if (y.rows() != data_.Y.rows() || y.cols() != data_.Y.cols())
    {
        throw InvalidArgument("set_outcomes: shape mismatch");
    }
    data_.Y = y;
    for (const auto& [r, k] : data_.missing_cells)
    {
        data_.Y(r, k) = 0.0;
    }
}

void GibbsSampler::reset_acceptance()
{
    phi_accepts_.setZero(phi_step_.size());
    phi_window_accepts_.setZero(phi_step_.size());
    phi_proposals_ = 0;
    phi_window_ = 0;
}

Eigen::VectorXd GibbsSampler::phi_acceptance() const
{
    if (phi_proposals_ == 0)
    {
        return Eigen::VectorXd::Zero(phi_step_.size());
    }
    return phi_accepts_ / static_cast<double>(phi_proposals_);
}

Eigen::MatrixXd GibbsSampler::completed(const ParameterState& state) const
{
    return completed_outcomes(state, data_);
}

Eigen::MatrixXd GibbsSampler::lag_term(const ParameterState& state, const Eigen::MatrixXd& y) const
{
    Eigen::MatrixXd lag = Eigen::MatrixXd::Zero(data_.N(), config_.K);
    if (!config_.tcar)
    {
        return lag;
    }
    for (int r : lagged_rows_)
    {
        const int prev = data_.prev_row[r];
        for (int k = 0; k < config_.K; ++k)
        {
            lag(r, k) = tcar_decay(state.phi(k), data_.delta_t[r]) * y(prev, k);
        }
    }
    return lag;
}

Eigen::MatrixXd GibbsSampler::residual(const ParameterState& state, const Eigen::MatrixXd& y, bool include_b) const
{
    Eigen::MatrixXd e = y - data_.X * state.beta - lag_term(state, y);
    if (include_b)
    {
        for (int r = 0; r < data_.N(); ++r)
        {
            e.row(r) -= state.b.row(data_.subject_of[r]);
        }
    }
    return e;
}

void GibbsSampler::sweep(ParameterState& state, RngStream& rng, bool adapt)
{
    update_b(state, rng);
    update_mu_b(state, rng);
    update_Sigma_b(state, rng);
    update_Sigma_Y(state, rng);
    update_z(state, rng);
    update_scales(state, rng);
    update_scales_noncentered(state, rng);
    update_subject_shift(state, rng);
    update_missing(state, rng);
    if (config_.tcar)
    {
        update_phi(state, rng, adapt);
    }
}

void GibbsSampler::update_b(ParameterState& state, RngStream& rng)
{
    const Eigen::MatrixXd y = completed(state);
    const Eigen::MatrixXd e = residual(state, y, false);
    const Eigen::MatrixXd omega = state.Sigma_Y.inverse();
    const Eigen::MatrixXd sb_inv = state.Sigma_b.inverse();
    const Eigen::VectorXd prior_lin = sb_inv * state.mu_b;
    for (int i = 0; i < data_.n_subjects; ++i)
    {
        const auto& rows = rows_of_subject_[static_cast<std::size_t>(i)];
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(config_.K);
        for (int r : rows)
        {
            sum += e.row(r).transpose();
        }
        const Eigen::MatrixXd q = sb_inv + static_cast<double>(rows.size()) * omega;
        state.b.row(i) = draw_from_precision(q, prior_lin + omega * sum, rng).transpose();
    }
}

void GibbsSampler::update_mu_b(ParameterState& state, RngStream& rng)
{
    const int K = config_.K;
    const Eigen::MatrixXd sb_inv = state.Sigma_b.inverse();
    const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(K, K) + static_cast<double>(data_.n_subjects) * sb_inv;
    const Eigen::VectorXd sum = state.b.colwise().sum().transpose();
    state.mu_b = draw_from_precision(q, sb_inv * sum, rng);
}

void GibbsSampler::update_Sigma_b(ParameterState& state, RngStream& rng)
{
    Eigen::MatrixXd dev = state.b;
    dev.rowwise() -= state.mu_b.transpose();
    const SpdMatrix scale(config_.Psi_b.values() + dev.transpose() * dev);
    state.Sigma_b = inverse_wishart_sample(config_.nu_b + data_.n_subjects, scale, rng);
}

void GibbsSampler::update_Sigma_Y(ParameterState& state, RngStream& rng)
{
    const Eigen::MatrixXd e = residual(state, completed(state), true);
    const Eigen::MatrixXd s = config_.Psi_Y.values() + e.transpose() * e;
    const Eigen::MatrixXd scale = options_.sigma_y_scale_factor * 0.5 * (s + s.transpose());
    state.Sigma_Y = inverse_wishart_sample(config_.nu_Y + data_.N(), SpdMatrix(scale), rng);
}

void GibbsSampler::update_z(ParameterState& state, RngStream& rng)
{
    const int P = config_.P;
    const int K = config_.K;
    if (P == 0)
    {
        return;
    }
    const Eigen::MatrixXd y = completed(state);
    Eigen::MatrixXd target = y - lag_term(state, y);
    for (int r = 0; r < data_.N(); ++r)
    {
        target.row(r) -= state.b.row(data_.subject_of[r]);
    }
    Eigen::VectorXd d(P);
    for (int p = 0; p < P; ++p)
    {
        d(p) = state.tau(config_.groups[static_cast<std::size_t>(p)]) * state.lambda(p);
    }
    const Eigen::MatrixXd omega = state.Sigma_Y.inverse();
    const Eigen::MatrixXd g = d.asDiagonal() * xtx_ * d.asDiagonal();
    // vec(Z) is column-major: index k * P + p.
    Eigen::MatrixXd q = Eigen::MatrixXd::Identity(P * K, P * K);
    for (int k = 0; k < K; ++k)
    {
        for (int l = 0; l < K; ++l)
        {
            q.block(k * P, l * P, P, P) += omega(k, l) * g;
        }
    }
    const Eigen::MatrixXd lin_mat = d.asDiagonal() * (data_.X.transpose() * target) * omega;
    const Eigen::VectorXd lin = Eigen::Map<const Eigen::VectorXd>(lin_mat.data(), P * K);
    const Eigen::VectorXd z = draw_from_precision(q, lin, rng);
    state.z = Eigen::Map<const Eigen::MatrixXd>(z.data(), P, K);
    state.refresh_beta(config_.groups);
}

void GibbsSampler::update_scales(ParameterState& state, RngStream& rng)
{
    const int K = config_.K;
    // Centered parametrization: beta is held fixed while the scales move, then
    // z is recovered from beta.
    for (int p = 0; p < config_.P; ++p)
    {
        const double tau = state.tau(config_.groups[static_cast<std::size_t>(p)]);
        const double b2 = state.beta.row(p).squaredNorm();
        const double lam2 = inverse_gamma_sample(0.5 * (K + 1), 1.0 / state.aux_lambda(p) + b2 / (2.0 * tau * tau), rng);
        state.lambda(p) = std::sqrt(lam2);
        state.aux_lambda(p) = inverse_gamma_sample(1.0, 1.0 + 1.0 / lam2, rng);
    }
    for (int g = 0; g < kNumGroups; ++g)
    {
        const auto& members = members_of_group_[static_cast<std::size_t>(g)];
        double ss = 0.0;
        for (int p : members)
        {
            ss += state.beta.row(p).squaredNorm() / (state.lambda(p) * state.lambda(p));
        }
        const double shape = 0.5 * (static_cast<double>(members.size()) * K + 1.0);
        const double tau2 = inverse_gamma_sample(shape, 1.0 / state.aux_tau(g) + 0.5 * ss, rng);
        state.tau(g) = std::sqrt(tau2);
        state.aux_tau(g) = inverse_gamma_sample(1.0, 1.0 + 1.0 / tau2, rng);
    }
    for (int p = 0; p < config_.P; ++p)
    {
        const double scale = state.tau(config_.groups[static_cast<std::size_t>(p)]) * state.lambda(p);
        if (!(scale > 0.0) || !std::isfinite(scale))
        {
            throw NumericalError("shrinkage scale left (0, inf)");
        }
        state.z.row(p) = state.beta.row(p) / scale;
    }
    state.refresh_beta(config_.groups);
}

void GibbsSampler::update_subject_shift(ParameterState& state, RngStream& rng)
{
    if (subject_level_.empty())
    {
        return;
    }
    const int K = config_.K;
    const Eigen::MatrixXd q = state.Sigma_b.inverse();
    // A subject without rows is outside the likelihood and need not move.
    auto subject_value = [&](int i, int p) {
        const auto& rows = rows_of_subject_[static_cast<std::size_t>(i)];
        return rows.empty() ? 0.0 : data_.X(rows.front(), p);
    };
    for (int p : subject_level_)
    {
        double u_mean = 0.0;
        for (int i = 0; i < data_.n_subjects; ++i)
        {
            u_mean += subject_value(i, p);
        }
        u_mean /= static_cast<double>(data_.n_subjects);
        // Direction: z_p += delta / s, b_i -= u_i delta, mu_b -= m delta. Every
        // row mean is unchanged. m = 0 trades beta against the random effects,
        // m = mean(u) against their mean.
        for (const double m : {0.0, u_mean})
        {
            const double s = state.tau(config_.groups[static_cast<std::size_t>(p)]) * state.lambda(p);
            double uu = 0.0;
            Eigen::VectorXd ur = Eigen::VectorXd::Zero(K);
            for (int i = 0; i < data_.n_subjects; ++i)
            {
                const double u = subject_value(i, p) - m;
                uu += u * u;
                ur += u * (state.b.row(i).transpose() - state.mu_b);
            }
            const Eigen::MatrixXd precision =
                Eigen::MatrixXd::Identity(K, K) * (1.0 / (s * s) + m * m) + uu * q;
            const Eigen::VectorXd linear = -state.z.row(p).transpose() / s + q * ur + m * state.mu_b;
            const Eigen::LLT<Eigen::MatrixXd> llt(precision);
            if (llt.info() != Eigen::Success)
            {
                throw NumericalError("subject shift precision is not positive definite");
            }
            Eigen::VectorXd noise(K);
            for (int k = 0; k < K; ++k)
            {
                noise(k) = rng.normal();
            }
            const Eigen::VectorXd delta = llt.solve(linear) + llt.matrixU().solve(noise);
            state.z.row(p) += delta.transpose() / s;
            state.mu_b -= m * delta;
            for (int i = 0; i < data_.n_subjects; ++i)
            {
                state.b.row(i) -= subject_value(i, p) * delta.transpose();
            }
        }
    }
    state.refresh_beta(config_.groups);
}

void GibbsSampler::update_scales_noncentered(ParameterState& state, RngStream& rng)
{
    const int P = config_.P;
    if (P == 0)
    {
        return;
    }
    const Eigen::MatrixXd y = completed(state);
    const Eigen::MatrixXd omega = state.Sigma_Y.inverse();
    // X'E with E the current residual; kept in sync as beta moves.
    Eigen::MatrixXd xte = data_.X.transpose() * residual(state, y, true);
    // Change in the log likelihood when beta moves by delta (P x K).
    auto log_ratio = [&](const Eigen::MatrixXd& delta) {
        return (omega * delta.transpose() * xte).trace() - 0.5 * (omega * delta.transpose() * xtx_ * delta).trace();
    };
    auto accept = [&](const Eigen::MatrixXd& delta) {
        if (std::log(rng.uniform()) < log_ratio(delta))
        {
            xte -= xtx_ * delta;
            return true;
        }
        return false;
    };
    Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(P, config_.K);
    for (int p = 0; p < P; ++p)
    {
        const double tau = state.tau(config_.groups[static_cast<std::size_t>(p)]);
        const double proposal = half_cauchy_sample(rng);
        delta.setZero();
        delta.row(p) = tau * (proposal - state.lambda(p)) * state.z.row(p);
        if (accept(delta))
        {
            state.lambda(p) = proposal;
            state.beta.row(p) += delta.row(p);
        }
    }
    for (int g = 0; g < kNumGroups; ++g)
    {
        const auto& members = members_of_group_[static_cast<std::size_t>(g)];
        const double proposal = half_cauchy_sample(rng);
        delta.setZero();
        for (int p : members)
        {
            delta.row(p) = (proposal - state.tau(g)) * state.lambda(p) * state.z.row(p);
        }
        if (members.empty() || accept(delta))
        {
            state.tau(g) = proposal;
        }
    }
    for (int p = 0; p < P; ++p)
    {
        if (!(state.lambda(p) > 0.0) || !std::isfinite(state.lambda(p)))
        {
            throw NumericalError("local scale left (0, inf)");
        }
    }
    state.refresh_beta(config_.groups);
    // Scale and auxiliary move as one block: scale from its auxiliary-free
    // conditional, then the auxiliary given the scale.
    for (int p = 0; p < P; ++p)
    {
        state.aux_lambda(p) = inverse_gamma_sample(1.0, 1.0 + 1.0 / (state.lambda(p) * state.lambda(p)), rng);
    }
    for (int g = 0; g < kNumGroups; ++g)
    {
        state.aux_tau(g) = inverse_gamma_sample(1.0, 1.0 + 1.0 / (state.tau(g) * state.tau(g)), rng);
    }
}

void GibbsSampler::update_missing(ParameterState& state, RngStream& rng)
{
    if (data_.missing_cells.empty())
    {
        return;
    }
    const int K = config_.K;
    Eigen::MatrixXd y = completed(state);
    const Eigen::MatrixXd omega = state.Sigma_Y.inverse();
    std::vector<int> obs;
    std::vector<int> mis;
    for (int r = 0; r < data_.N(); ++r)
    {
        const int start = missing_start_[static_cast<std::size_t>(r)];
        if (start < 0)
        {
            continue;
        }
        obs.clear();
        mis.clear();
        for (int k = 0; k < K; ++k)
        {
            (data_.observed(r, k) ? obs : mis).push_back(k);
        }
        const Eigen::VectorXd mu = linear_predictor(state, data_, r, y);
        Eigen::MatrixXd q = omega(mis, mis);
        Eigen::VectorXd lin = q * mu(mis);
        if (!obs.empty())
        {
            lin -= omega(mis, obs) * (y(r, obs).transpose() - mu(obs));
        }
        const int next = data_.next_row[static_cast<std::size_t>(r)];
        if (config_.tcar && next >= 0)
        {
            Eigen::MatrixXd dm = Eigen::MatrixXd::Zero(K, static_cast<Eigen::Index>(mis.size()));
            Eigen::VectorXd current(static_cast<Eigen::Index>(mis.size()));
            for (std::size_t j = 0; j < mis.size(); ++j)
            {
                const auto jj = static_cast<Eigen::Index>(j);
                dm(mis[j], jj) = tcar_decay(state.phi(mis[j]), data_.delta_t[static_cast<std::size_t>(next)]);
                current(jj) = y(r, mis[j]);
            }
            const Eigen::VectorXd mu_next = linear_predictor(state, data_, next, y);
            const Eigen::VectorXd c = y.row(next).transpose() - mu_next + dm * current;
            q += dm.transpose() * omega * dm;
            lin += dm.transpose() * omega * c;
        }
        const Eigen::VectorXd draw = draw_from_precision(q, lin, rng);
        for (std::size_t j = 0; j < mis.size(); ++j)
        {
            const auto jj = static_cast<Eigen::Index>(j);
            y(r, mis[j]) = draw(jj);
            state.y_missing(start + static_cast<Eigen::Index>(j)) = draw(jj);
        }
    }
}

double GibbsSampler::phi_log_target(const ParameterState& state, const Eigen::MatrixXd& base_resid,
                                    const Eigen::MatrixXd& y, int k, double phi_k) const
{
    const Eigen::MatrixXd omega = state.Sigma_Y.inverse();
    Eigen::VectorXd phi = state.phi;
    phi(k) = phi_k;
    double quad = 0.0;
    Eigen::VectorXd e(config_.K);
    for (int r : lagged_rows_)
    {
        const int prev = data_.prev_row[r];
        for (int j = 0; j < config_.K; ++j)
        {
            e(j) = base_resid(r, j) - tcar_decay(phi(j), data_.delta_t[r]) * y(prev, j);
        }
        quad += e.dot(omega * e);
    }
    // Gamma prior on phi plus the log-scale Jacobian.
    return -0.5 * quad + log_gamma_density(phi_k, config_.phi_shape, config_.phi_rate) + std::log(phi_k);
}

void GibbsSampler::update_phi(ParameterState& state, RngStream& rng, bool adapt)
{
    const Eigen::MatrixXd y = completed(state);
    Eigen::MatrixXd base = y - data_.X * state.beta;
    for (int r = 0; r < data_.N(); ++r)
    {
        base.row(r) -= state.b.row(data_.subject_of[r]);
    }
    for (int k = 0; k < config_.K; ++k)
    {
        const double current = state.phi(k);
        const double proposal = current * std::exp(phi_step_(k) * rng.normal());
        if (!(proposal > 0.0) || !std::isfinite(proposal))
        {
            continue;
        }
        const double log_ratio =
            phi_log_target(state, base, y, k, proposal) - phi_log_target(state, base, y, k, current);
        if (std::log(rng.uniform()) < log_ratio)
        {
            state.phi(k) = proposal;
            phi_accepts_(k) += 1.0;
            phi_window_accepts_(k) += 1.0;
        }
    }
    ++phi_proposals_;
    ++phi_window_;
    if (adapt && phi_window_ == kAdaptWindow)
    {
        for (int k = 0; k < config_.K; ++k)
        {
            const double rate = phi_window_accepts_(k) / kAdaptWindow;
            if (rate < 0.3)
            {
                phi_step_(k) *= 0.7;
            }
            else if (rate > 0.5)
            {
                phi_step_(k) *= 1.4;
            }
        }
        phi_window_accepts_.setZero();
        phi_window_ = 0;
    }
}

namespace {

struct ChainOutput
{
    std::vector<Draw> draws;
    Eigen::MatrixXd loglik;
    Eigen::VectorXd missing_sum;
    Eigen::VectorXd phi_step;
    Eigen::VectorXd phi_acceptance;
};

ChainOutput run_chain(const DesignData& data, const ModelConfig& config, const SamplerSettings& settings,
                      const KernelOptions& options, int chain)
{
    RngStream rng(settings.seed, static_cast<std::uint64_t>(chain));
    GibbsSampler gibbs(data, config, options);
    ParameterState state = initial_state(data, config);
    ChainOutput out;
    out.draws.reserve(static_cast<std::size_t>(settings.samples));
    if (settings.store_loglik)
    {
        out.loglik.resize(settings.samples, data.N());
    }
    out.missing_sum.setZero(static_cast<Eigen::Index>(data.missing_cells.size()));

    std::vector<int> last_row(static_cast<std::size_t>(data.n_subjects), -1);
    for (int r = 0; r < data.N(); ++r)
    {
        last_row[static_cast<std::size_t>(data.subject_of[r])] = r;
    }

    const long total = static_cast<long>(settings.burn_in) + static_cast<long>(settings.samples) * settings.thin;
    if (settings.burn_in == 0)
    {
        gibbs.reset_acceptance();
    }
    for (long s = 0; s < total; ++s)
    {
        try
        {
            gibbs.sweep(state, rng, s < settings.burn_in);
        }
        catch (const NumericalError& ex)
        {
            throw SamplerError(ex.what(), static_cast<std::size_t>(chain), static_cast<std::size_t>(s));
        }
        if (s + 1 == settings.burn_in)
        {
            gibbs.reset_acceptance();
        }
        if (s < settings.burn_in || (s - settings.burn_in + 1) % settings.thin != 0)
        {
            continue;
        }
        Draw d;
        d.chain = chain;
        d.beta = state.beta;
        d.lambda = state.lambda;
        d.tau = state.tau;
        d.b = state.b;
        d.mu_b = state.mu_b;
        d.Sigma_Y = state.Sigma_Y.values();
        d.Sigma_b = state.Sigma_b.values();
        d.phi = state.phi;
        d.log_joint = log_joint(state, data, config);
        if (!std::isfinite(d.log_joint))
        {
            throw SamplerError("log joint is not finite", static_cast<std::size_t>(chain), static_cast<std::size_t>(s));
        }
        if (config.tcar)
        {
            const Eigen::MatrixXd y = completed_outcomes(state, data);
            d.y_last.resize(data.n_subjects, config.K);
            for (int i = 0; i < data.n_subjects; ++i)
            {
                d.y_last.row(i) = y.row(last_row[static_cast<std::size_t>(i)]);
            }
        }
        if (settings.store_loglik)
        {
            out.loglik.row(static_cast<Eigen::Index>(out.draws.size())) = pointwise_loglik(state, data).transpose();
        }
        out.missing_sum += state.y_missing;
        out.draws.push_back(std::move(d));
    }
    out.phi_step = gibbs.phi_step();
    out.phi_acceptance = gibbs.phi_acceptance();
    return out;
}

}  // namespace

PosteriorDraws fit(const DesignData& data, const ModelConfig& config, const SamplerSettings& settings,
                   const KernelOptions& options)
{
    settings.validate();
    config.validate();
    std::vector<char> seen(static_cast<std::size_t>(data.n_subjects), 0);
    for (int i : data.subject_of)
    {
        seen[static_cast<std::size_t>(i)] = 1;
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    {
        throw InvalidArgument("every subject needs at least one training visit");
    }
    std::vector<ChainOutput> outputs(static_cast<std::size_t>(settings.chains));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(settings.chains));
    std::vector<std::thread> threads;
    for (int c = 0; c < settings.chains; ++c)
    {
        threads.emplace_back([&, c] {
            try
            {
                outputs[static_cast<std::size_t>(c)] = run_chain(data, config, settings, options, c);
            }
            catch (...)
            {
                errors[static_cast<std::size_t>(c)] = std::current_exception();
            }
        });
    }
    for (auto& t : threads)
    {
        t.join();
    }
    for (const auto& e : errors)
    {
        if (e)
        {
            std::rethrow_exception(e);
        }
    }

    PosteriorDraws post;
    post.chains = settings.chains;
    post.per_chain = settings.samples;
    const auto total = static_cast<Eigen::Index>(settings.chains) * settings.samples;
    if (settings.store_loglik)
    {
        post.loglik.resize(total, data.N());
    }
    post.y_missing_mean.setZero(static_cast<Eigen::Index>(data.missing_cells.size()));
    post.phi_step.setZero(config.tcar ? config.K : 0);
    post.phi_acceptance.setZero(config.tcar ? config.K : 0);
    for (int c = 0; c < settings.chains; ++c)
    {
        auto& o = outputs[static_cast<std::size_t>(c)];
        if (settings.store_loglik)
        {
            post.loglik.middleRows(static_cast<Eigen::Index>(c) * settings.samples, settings.samples) = o.loglik;
        }
        post.y_missing_mean += o.missing_sum;
        if (config.tcar)
        {
            post.phi_step += o.phi_step / settings.chains;
            post.phi_acceptance += o.phi_acceptance / settings.chains;
        }
        std::move(o.draws.begin(), o.draws.end(), std::back_inserter(post.draws));
    }
    post.y_missing_mean /= static_cast<double>(total);
    if (settings.chains >= 2 && settings.samples >= 4)
    {
        post.diagnostics = diagnostic_panel(post);
    }
    return post;
}

}  // namespace mets
