#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace mets {

struct WaicResult
{
    double waic = 0.0;
    double se = 0.0;
    double p_waic = 0.0;
    /// Per-observation elpd contributions (lppd_i - p_i).
    Eigen::VectorXd pointwise;
};

struct GpdFit
{
    double k = 0.0;
    double sigma = 0.0;
};

struct LooResult
{
    double looic = 0.0;
    double se = 0.0;
    double p_loo = 0.0;
    Eigen::VectorXd pointwise;
    Eigen::VectorXd pareto_k;
};

inline constexpr double kParetoKWarning = 0.7;
inline constexpr int kMinLooDraws = 100;

/// `loglik` is draws x observations.
WaicResult waic(const Eigen::MatrixXd& loglik);
LooResult psis_loo(const Eigen::MatrixXd& loglik);

/// Zhang-Stephens generalized Pareto fit of ascending exceedances, with the
/// weakly informative shrinkage of k toward 0.5.
GpdFit gpd_fit(const std::vector<double>& sorted_exceedances);

/// Pareto-smoothed, self-normalized log weights of one observation.
Eigen::VectorXd psis_log_weights(const Eigen::VectorXd& log_ratios, double* khat = nullptr);

struct IcReport
{
    std::string label;
    double waic = 0.0;
    double waic_se = 0.0;
    double looic = 0.0;
    double looic_se = 0.0;
    Eigen::VectorXd pareto_k;
    /// Pointwise elpd values; empty for reports built from published totals.
    Eigen::VectorXd waic_pointwise;
    Eigen::VectorXd loo_pointwise;
    /// Observation count (kept when pointwise values are absent).
    int n = 0;

    int bad_k_count() const;
    nlohmann::json to_json() const;
    static IcReport from_json(const nlohmann::json& doc);
};

IcReport ic_report(const std::string& label, const Eigen::MatrixXd& loglik);

/// Totals of independent per-outcome fits; SEs combine in quadrature and
/// pointwise values add when every part has them.
IcReport sum_reports(const std::string& label, const std::vector<IcReport>& parts);

struct ComparisonRow
{
    std::string label;
    double looic = 0.0;
    double looic_se = 0.0;
    double waic = 0.0;
    /// Relative to the best (lowest LOOIC) model; 0 for the best.
    double delta = 0.0;
    double delta_se = 0.0;
    /// "best", "indistinguishable" or "worse".
    std::string verdict;
};

/// Ascending by LOOIC. A model is indistinguishable from the best when
/// |delta| < delta_se; delta_se uses pointwise differences when both reports
/// carry them and sqrt(se_a^2 + se_b^2) otherwise.
std::vector<ComparisonRow> compare(const std::vector<IcReport>& reports);

std::string format_comparison(const std::vector<ComparisonRow>& rows);
nlohmann::json comparison_json(const std::vector<ComparisonRow>& rows);

}  // namespace mets
