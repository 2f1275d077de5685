#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mets/ingest.hpp"
#include "mets/model.hpp"
#include "mets/predict.hpp"
#include "mets/rng.hpp"
#include "mets/sampler.hpp"

namespace mets {

struct NormalMarginal
{
    double mean = 0.0;
    double sd = 1.0;
};

/// Synthetic longitudinal cohort with covariates BMI, age and sex.
struct SimConfig
{
    int n_donors = 50;
    int n_male = 43;
    int n_female = 7;
    int visits = 5;
    int visit_spacing_months = 12;
    double rho = 0.5;
    double sigma = 3.0;
    double t_df = 4.0;
    /// Multivariate t errors (one mixing variable per visit vector); false
    /// draws the five components independently.
    bool t_shared_scale = false;
    double bmi_drift = 1.05;
    double bmi_noise_var = 0.36;
    double age_drift_threshold = 50.0;
    /// Rows bmi, age, sex_male; columns in target order.
    Eigen::MatrixXd beta_true = default_beta();
    std::uint64_t seed = 1;

    /// Baseline covariate marginals by sex (truncated normals).
    NormalMarginal bmi_male{25.56, 3.15};
    NormalMarginal bmi_female{24.00, 3.84};
    NormalMarginal age_male{47.63, 9.72};
    NormalMarginal age_female{50.24, 11.20};
    double min_age = 18.0;
    double max_age = 65.0;
    double min_bmi = 16.0;
    double max_bmi = 45.0;
    /// Centering and scaling of BMI and age inside x'beta.
    NormalMarginal bmi_reference{25.4, 3.29};
    NormalMarginal age_reference{48.0, 9.96};
    /// Clinical means and SDs of the five targets, mapped to log scale.
    std::array<NormalMarginal, kNumTargets> target_clinical{
        {{93.85, 10.26}, {121.89, 11.18}, {91.92, 10.60}, {105.51, 55.49}, {56.51, 14.20}}};
    /// Rescale each latent component to unit sample variance before mapping
    /// to clinical units.
    bool rescale_outcomes = true;
    /// Standard deviation of the rescaled latent outcomes on the
    /// log-standardized scale. The default gives a training prevalence near
    /// 0.11 and a final-visit prevalence near 0.16 (8 of 50).
    double outcome_spread = 1.6;
    std::string start_date = "2015-01-15";

    static Eigen::MatrixXd default_beta();
    void validate() const;
    nlohmann::json to_json() const;
    static SimConfig from_json(const nlohmann::json& doc);
};

/// Schema of the simulated cohort: bmi, age (numerical), sex_male (binary).
CovariateSchema simulation_schema();

/// BMI one visit later.
double next_bmi(double bmi, double age, const SimConfig& config, double noise);

/// Log-scale mean and sd of a log-normal with the given clinical moments.
NormalMarginal log_moments(const NormalMarginal& clinical);

struct SimulatedCohort
{
    /// Clinical units, raw covariates, sorted by (subject, date).
    Cohort cohort;
    std::vector<std::string> subject_ids;
    /// MetS status at each donor's final visit, parallel to subject_ids.
    std::vector<int> true_label;
    /// Latent outcomes and the standardized covariates that generated them,
    /// row-aligned with cohort.records.
    Eigen::MatrixXd latent;
    Eigen::MatrixXd x;
    /// Centering and scale applied to the latent outcomes before mapping.
    Eigen::VectorXd latent_center;
    Eigen::VectorXd latent_scale;
};

SimulatedCohort simulate_cohort(const SimConfig& config);

void write_truth(std::ostream& out, const SimulatedCohort& sim);

struct StudyResult
{
    TrafficLightConfusion confusion;
    double threshold = 0.0;
    /// Yellow plus red over true positives; green over true negatives.
    double combined_sensitivity = 0.0;
    double green_specificity = 0.0;
    int positives = 0;
    int negatives = 0;

    nlohmann::json to_json() const;
};

/// Fits the baseline model on all but each donor's last visit and classifies
/// the last visit at t = training prevalence.
StudyResult run_study(const SimConfig& config, const SamplerSettings& settings, bool tcar = false);

/// Larger cohort for exercising the pipeline: more covariates, irregular
/// gaps, missing waist and missing covariates.
struct DemoConfig
{
    int n_donors = 120;
    int min_visits = 3;
    int max_visits = 7;
    double male_fraction = 0.86;
    double waist_missing = 0.35;
    double covariate_missing = 0.10;
    double mean_gap_months = 10.0;
    std::uint64_t seed = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static DemoConfig from_json(const nlohmann::json& doc);
};

CovariateSchema demo_schema();
Cohort simulate_demo_cohort(const DemoConfig& config);

}  // namespace mets
