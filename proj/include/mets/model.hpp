#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mets/distributions.hpp"
#include "mets/ingest.hpp"

namespace mets {

/// Hyperparameters and structure of the multivariate mixed model.
struct ModelConfig
{
    int K = kNumTargets;
    int P = 0;
    double nu_Y = 10.0;
    SpdMatrix Psi_Y;
    double nu_b = 10.0;
    SpdMatrix Psi_b;
    /// Group index (0..kNumGroups-1) per covariate.
    std::vector<int> groups;
    bool tcar = false;
    double phi_shape = 2.0;
    double phi_rate = 0.2;

    /// nu = 10, Psi_Y = 2I, Psi_b = 12I.
    static ModelConfig defaults(int P, std::vector<int> groups, int K = kNumTargets, bool tcar = false);
    static ModelConfig from_schema(const CovariateSchema& schema, bool tcar = false);

    /// Throws InvalidArgument on inconsistent dimensions or nu <= K + 1.
    void validate() const;
    int group_count() const { return kNumGroups; }

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& doc);
};

/// Model-ready training data. Missing outcome cells hold 0 in Y and are
/// flagged false in `observed`.
struct DesignData
{
    Eigen::MatrixXd X;
    Eigen::MatrixXd Y;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> observed;
    std::vector<int> subject_of;
    int n_subjects = 0;
    /// Years since the subject's previous visit; NaN on first visits.
    std::vector<double> delta_t;
    /// Index of the previous / next row of the same subject, or -1.
    std::vector<int> prev_row;
    std::vector<int> next_row;
    /// Missing cells as (row, component), row-major order.
    std::vector<std::pair<int, int>> missing_cells;

    int N() const { return static_cast<int>(X.rows()); }
    int P() const { return static_cast<int>(X.cols()); }
    int K() const { return static_cast<int>(Y.cols()); }

    /// Recomputes missing_cells, next_row and consistency checks.
    void finalize();
};

/// Builds design data from a standardized cohort. Records must be grouped by
/// subject and ordered by date (as produced by ingest). Throws on missing
/// covariates or missing non-waist targets.
DesignData build_design(const Cohort& cohort, std::vector<std::string>* subject_ids = nullptr);

/// One point of the parameter space.
struct ParameterState
{
    Eigen::MatrixXd beta;  // P x K, derived: tau[g(p)] * lambda[p] * z(p, k)
    Eigen::MatrixXd z;
    Eigen::VectorXd lambda;
    Eigen::VectorXd tau;
    Eigen::VectorXd aux_lambda;
    Eigen::VectorXd aux_tau;
    Eigen::MatrixXd b;  // I x K
    Eigen::VectorXd mu_b;
    SpdMatrix Sigma_Y;
    SpdMatrix Sigma_b;
    /// Values of DesignData::missing_cells, same order.
    Eigen::VectorXd y_missing;
    /// Decay rates, size K when t-CAR is enabled, otherwise empty.
    Eigen::VectorXd phi;

    /// Recomputes beta from (tau, lambda, z).
    void refresh_beta(const std::vector<int>& groups);
};

/// Deterministic start: beta = 0, b = 0, covariances at prior means,
/// scales 1, phi = 10, missing cells at their conditional means.
ParameterState initial_state(const DesignData& data, const ModelConfig& config);

/// Y with missing cells replaced by the state's augmented values.
Eigen::MatrixXd completed_outcomes(const ParameterState& state, const DesignData& data);

inline double tcar_decay(double phi, double delta_t) { return std::exp(-phi * delta_t); }

/// Mean of row `row` given the completed outcome matrix.
Eigen::VectorXd linear_predictor(const ParameterState& state, const DesignData& data, int row,
                                 const Eigen::MatrixXd& completed);
Eigen::VectorXd linear_predictor(const ParameterState& state, const DesignData& data, int row);

/// Row means for all rows (N x K).
Eigen::MatrixXd linear_predictors(const ParameterState& state, const DesignData& data,
                                  const Eigen::MatrixXd& completed);

/// log p(Y_obs, y_missing, state) up to nothing: every normalizing constant included.
double log_joint(const ParameterState& state, const DesignData& data, const ModelConfig& config);

/// Log-likelihood of the observed components of each row (N entries).
Eigen::VectorXd pointwise_loglik(const ParameterState& state, const DesignData& data);

/// Sex-specific clinical cut-offs of the five criteria.
struct MetsThresholds
{
    double waist_male = 102.0;
    double waist_female = 88.0;
    double pmax = 130.0;
    double glucose = 100.0;
    double triglycerides = 150.0;
    double hdl_male = 40.0;
    double hdl_female = 50.0;

    nlohmann::json to_json() const;
};

inline constexpr MetsThresholds kMetsThresholds{};

/// Per-component criterion flags (waist unset when absent).
std::array<std::optional<bool>, kNumTargets> mets_criteria(const std::array<std::optional<double>, kNumTargets>& y,
                                                            Sex sex,
                                                            const MetsThresholds& thresholds = kMetsThresholds);

/// 1 when at least three criteria are met; an absent waist counts as not met.
int mets_indicator(const std::array<std::optional<double>, kNumTargets>& y, Sex sex);
int mets_indicator(const std::array<double, kNumTargets>& y, Sex sex);

}  // namespace mets
