#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mets/ingest.hpp"
#include "mets/model.hpp"
#include "mets/rng.hpp"
#include "mets/sampler.hpp"

namespace mets {

enum class RiskColor
{
    green,
    yellow,
    red
};

std::string_view to_string(RiskColor color);
RiskColor parse_color(std::string_view text);

struct RiskAssessment
{
    std::string subject_id;
    double p_mean = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::optional<RiskColor> color;
    /// Probability that each component meets its MetS criterion.
    std::array<double, kNumTargets> per_component_prob{};
    int n_draws = 0;

    nlohmann::json to_json() const;
    static RiskAssessment from_json(const nlohmann::json& doc);
};

/// Consecutive blocks per chain for the probability interval.
inline constexpr int kCiBlocks = 40;
inline constexpr int kMinPredictiveDraws = 100;

/// One visit to score for a known subject.
struct PredictionInput
{
    /// Row of the subject in the posterior random-effect matrices.
    int subject = 0;
    std::string subject_id;
    Sex sex = Sex::male;
    /// Covariates on model scale.
    Eigen::VectorXd x;
    /// Years since the previous visit; only read by t-CAR posteriors.
    double delta_t = std::numeric_limits<double>::quiet_NaN();
    /// Previous outcomes on model scale. Empty means "the last training
    /// visit" (taken per draw). NaN entries contribute no lag.
    Eigen::VectorXd y_prev;
};

/// Simulates the visit once per retained draw and summarizes MetS risk.
/// The color is left unset.
RiskAssessment predict_next_visit(const PosteriorDraws& draws, const Standardization& standardization,
                                  const PredictionInput& input, RngStream& rng,
                                  const MetsThresholds& thresholds = kMetsThresholds);

/// 2.5/97.5 percentiles of per-block means of a chain-major 0/1 sequence,
/// clamped so the interval contains the overall mean.
std::pair<double, double> block_interval(const std::vector<std::uint8_t>& indicators, int chains, int per_chain,
                                         int blocks = kCiBlocks);

/// Linear-interpolation sample quantile (R type 7) of sorted data.
double sorted_quantile(const std::vector<double>& sorted, double q);

/// Per-subject seed so results do not depend on processing order.
std::uint64_t derive_seed(std::uint64_t base, std::string_view key);

struct RocPoint
{
    double threshold = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
};

struct ThresholdReport
{
    double t_star = 0.0;
    std::vector<RocPoint> roc_points;
    double youden_at_t_star = 0.0;

    nlohmann::json to_json() const;
};

inline constexpr int kThresholdGridSteps = 500;
inline constexpr double kThresholdGridStep = 0.001;

/// Scans t = 0, 0.001, ..., 0.5 (positive when p >= t) and returns the
/// smallest t maximizing Youden's J. Labels are 0/1.
ThresholdReport select_threshold(const std::vector<std::pair<double, int>>& scored);

RiskColor classify(double p_mean, double ci_high, double t);
RiskColor classify(const RiskAssessment& assessment, double t);

struct BinaryConfusion
{
    long true_negative = 0;
    long false_positive = 0;
    long false_negative = 0;
    long true_positive = 0;

    void add(bool predicted, int label);
    long total() const { return true_negative + false_positive + false_negative + true_positive; }
};

/// Counts by color (rows green, yellow, red) and true label (columns 0, 1).
struct TrafficLightConfusion
{
    std::array<std::array<long, 2>, 3> counts{};

    void add(RiskColor color, int label);
    /// Green is a negative prediction; yellow and red are positive.
    BinaryConfusion collapse() const;
    nlohmann::json to_json() const;
};

struct Metrics
{
    double sensitivity = 0.0;
    double specificity = 0.0;
    double accuracy = 0.0;

    nlohmann::json to_json() const;
};

/// Throws InvalidArgument when either class is empty.
Metrics metrics(const BinaryConfusion& confusion);
Metrics metrics(const TrafficLightConfusion& confusion);

}  // namespace mets
