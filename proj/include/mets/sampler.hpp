#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mets/model.hpp"
#include "mets/rng.hpp"

namespace mets {

struct SamplerSettings
{
    int chains = 4;
    int burn_in = 1000;
    int samples = 1000;
    int thin = 1;
    std::uint64_t seed = 1;
    /// Keep the draws x N log-likelihood matrix (needed for WAIC / PSIS-LOO).
    bool store_loglik = true;

    void validate() const;
    static const std::vector<std::string>& update_order();

    nlohmann::json to_json() const;
    static SamplerSettings from_json(const nlohmann::json& doc);
};

/// Test hooks that perturb individual kernels. Defaults give the correct sampler.
struct KernelOptions
{
    /// Multiplies the inverse-Wishart scale of the Sigma_Y update.
    double sigma_y_scale_factor = 1.0;
};

/// One retained draw.
struct Draw
{
    int chain = 0;
    Eigen::MatrixXd beta;
    Eigen::VectorXd lambda;
    Eigen::VectorXd tau;
    Eigen::MatrixXd b;
    Eigen::VectorXd mu_b;
    Eigen::MatrixXd Sigma_Y;
    Eigen::MatrixXd Sigma_b;
    Eigen::VectorXd phi;
    /// Completed outcomes at each subject's last training visit (t-CAR only).
    Eigen::MatrixXd y_last;
    double log_joint = 0.0;
};

struct ScalarDiagnostic
{
    std::string name;
    double rhat = 1.0;
    double ess = 0.0;
};

struct PosteriorDraws
{
    int chains = 0;
    int per_chain = 0;
    /// Chain-major: draws[c * per_chain + s].
    std::vector<Draw> draws;
    /// draws x N, observed components only. Empty when not stored.
    Eigen::MatrixXd loglik;
    /// Posterior mean of every augmented cell, aligned with DesignData::missing_cells.
    Eigen::VectorXd y_missing_mean;
    std::vector<ScalarDiagnostic> diagnostics;
    /// Final random-walk step sizes and post-burn-in acceptance rates of log phi.
    Eigen::VectorXd phi_step;
    Eigen::VectorXd phi_acceptance;

    std::size_t size() const { return draws.size(); }
    const Draw& at(int chain, int sample) const { return draws[static_cast<std::size_t>(chain * per_chain + sample)]; }
};

/// Blocked Gibbs kernel for one chain. Block order: b_i, mu_b, Sigma_b,
/// Sigma_Y, z, (lambda, tau), subject-level shift, missing outcomes, phi.
class GibbsSampler
{
public:
    GibbsSampler(const DesignData& data, const ModelConfig& config, KernelOptions options = {});

    /// One full sweep. `adapt` enables step-size adaptation for phi.
    void sweep(ParameterState& state, RngStream& rng, bool adapt = false);

    void update_b(ParameterState& state, RngStream& rng);
    void update_mu_b(ParameterState& state, RngStream& rng);
    void update_Sigma_b(ParameterState& state, RngStream& rng);
    void update_Sigma_Y(ParameterState& state, RngStream& rng);
    void update_z(ParameterState& state, RngStream& rng);
    void update_scales(ParameterState& state, RngStream& rng);
    /// Independence Metropolis on each scale with z held fixed and the
    /// auxiliary integrated out; proposals come from the half-Cauchy prior.
    void update_scales_noncentered(ParameterState& state, RngStream& rng);
    /// Moves beta of a subject-constant covariate and every b_i in opposite
    /// directions, which leaves the likelihood unchanged; the shift is drawn
    /// from its exact Gaussian conditional.
    void update_subject_shift(ParameterState& state, RngStream& rng);
    void update_missing(ParameterState& state, RngStream& rng);
    void update_phi(ParameterState& state, RngStream& rng, bool adapt);

    const Eigen::VectorXd& phi_step() const { return phi_step_; }
    Eigen::VectorXd phi_acceptance() const;
    void reset_acceptance();

    /// Replaces the outcome matrix (used by the Geweke harness when observed data are redrawn).
    void set_outcomes(const Eigen::MatrixXd& y);

private:
    Eigen::MatrixXd completed(const ParameterState& state) const;
    Eigen::MatrixXd lag_term(const ParameterState& state, const Eigen::MatrixXd& y) const;
    Eigen::MatrixXd residual(const ParameterState& state, const Eigen::MatrixXd& y, bool include_b) const;
    double phi_log_target(const ParameterState& state, const Eigen::MatrixXd& base_resid,
                          const Eigen::MatrixXd& y, int k, double phi_k) const;

    DesignData data_;
    ModelConfig config_;
    KernelOptions options_;
    Eigen::MatrixXd xtx_;
    std::vector<std::vector<int>> rows_of_subject_;
    std::vector<std::vector<int>> members_of_group_;
    /// Covariates constant within every subject.
    std::vector<int> subject_level_;
    /// First index into missing_cells for each row, or -1.
    std::vector<int> missing_start_;
    std::vector<int> lagged_rows_;
    Eigen::VectorXd phi_step_;
    Eigen::VectorXd phi_accepts_;
    Eigen::VectorXd phi_window_accepts_;
    int phi_proposals_ = 0;
    int phi_window_ = 0;
};

/// Runs all chains (one thread each) and collects the retained draws.
PosteriorDraws fit(const DesignData& data, const ModelConfig& config, const SamplerSettings& settings,
                   const KernelOptions& options = {});

}  // namespace mets
