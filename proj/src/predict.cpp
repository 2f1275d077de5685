#include "mets/predict.hpp"

#include <algorithm>
#include <cmath>

#include "mets/errors.hpp"

namespace mets {

std::string_view to_string(RiskColor color)
{
    switch (color)
    {
    case RiskColor::green:
        return "green";
    case RiskColor::yellow:
        return "yellow";
    case RiskColor::red:
        return "red";
    }
    return "green";
}

RiskColor parse_color(std::string_view text)
{
    if (text == "green")
    {
        return RiskColor::green;
    }
    if (text == "yellow")
    {
        return RiskColor::yellow;
    }
    if (text == "red")
    {
        return RiskColor::red;
    }
    throw ValidationError("unknown risk color '" + std::string(text) + "'");
}

nlohmann::json RiskAssessment::to_json() const
{
    nlohmann::json doc;
    doc["subject_id"] = subject_id;
    doc["p_mean"] = p_mean;
    doc["ci_low"] = ci_low;
    doc["ci_high"] = ci_high;
    doc["color"] = color ? nlohmann::json(std::string(to_string(*color))) : nlohmann::json(nullptr);
    nlohmann::json comps = nlohmann::json::object();
    for (int k = 0; k < kNumTargets; ++k)
    {
        comps[std::string(kTargetColumns[static_cast<std::size_t>(k)])] = per_component_prob[static_cast<std::size_t>(k)];
    }
    doc["per_component_prob"] = comps;
    doc["n_draws"] = n_draws;
    return doc;
}

RiskAssessment RiskAssessment::from_json(const nlohmann::json& doc)
{
    RiskAssessment a;
    a.subject_id = doc.at("subject_id").get<std::string>();
    a.p_mean = doc.at("p_mean").get<double>();
    a.ci_low = doc.at("ci_low").get<double>();
    a.ci_high = doc.at("ci_high").get<double>();
    if (doc.contains("color") && !doc["color"].is_null())
    {
        a.color = parse_color(doc["color"].get<std::string>());
    }
    const auto& comps = doc.at("per_component_prob");
    for (int k = 0; k < kNumTargets; ++k)
    {
        a.per_component_prob[static_cast<std::size_t>(k)] =
            comps.at(std::string(kTargetColumns[static_cast<std::size_t>(k)])).get<double>();
    }
    a.n_draws = doc.value("n_draws", 0);
    return a;
}

double sorted_quantile(const std::vector<double>& sorted, double q)
{
    if (sorted.empty())
    {
        throw InvalidArgument("quantile of an empty sample");
    }
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::pair<double, double> block_interval(const std::vector<std::uint8_t>& indicators, int chains, int per_chain,
                                         int blocks)
{
    if (chains <= 0 || per_chain <= 0
        || indicators.size() != static_cast<std::size_t>(chains) * static_cast<std::size_t>(per_chain))
    {
        throw InvalidArgument("indicator count does not match chains x draws");
    }
    const int b_count = std::min(blocks, per_chain);
    std::vector<double> means;
    means.reserve(static_cast<std::size_t>(chains * b_count));
    double total = 0.0;
    for (int c = 0; c < chains; ++c)
    {
        const std::size_t base = static_cast<std::size_t>(c) * static_cast<std::size_t>(per_chain);
        for (int b = 0; b < b_count; ++b)
        {
            const int from = b * per_chain / b_count;
            const int to = (b + 1) * per_chain / b_count;
            double s = 0.0;
            for (int t = from; t < to; ++t)
            {
                s += indicators[base + static_cast<std::size_t>(t)];
            }
            total += s;
            means.push_back(s / static_cast<double>(to - from));
        }
    }
    std::sort(means.begin(), means.end());
    const double p = total / static_cast<double>(indicators.size());
    const double lo = std::clamp(sorted_quantile(means, 0.025), 0.0, p);
    const double hi = std::clamp(sorted_quantile(means, 0.975), p, 1.0);
    return {lo, hi};
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view key)
{
    std::uint64_t state = base ^ fnv1a64(key);
    return splitmix64(state);
}

RiskAssessment predict_next_visit(const PosteriorDraws& draws, const Standardization& standardization,
                                  const PredictionInput& input, RngStream& rng, const MetsThresholds& thresholds)
{
    if (draws.size() < static_cast<std::size_t>(kMinPredictiveDraws))
    {
        throw InvalidArgument("at least " + std::to_string(kMinPredictiveDraws)
                              + " posterior draws are needed for a risk interval");
    }
    const Draw& first = draws.draws.front();
    const int K = static_cast<int>(first.beta.cols());
    if (K != kNumTargets)
    {
        throw InvalidArgument("risk assessment needs all five outcome components");
    }
    if (input.subject < 0 || input.subject >= first.b.rows())
    {
        throw InvalidArgument("unknown subject '" + input.subject_id + "'");
    }
    if (input.x.size() != first.beta.rows())
    {
        throw InvalidArgument("covariate vector has " + std::to_string(input.x.size()) + " entries, expected "
                              + std::to_string(first.beta.rows()));
    }
    const bool tcar = first.phi.size() > 0;
    const bool lagged = tcar && std::isfinite(input.delta_t);
    if (lagged && input.delta_t < 0.0)
    {
        throw InvalidArgument("visit precedes the previous visit");
    }
    if (input.y_prev.size() != 0 && input.y_prev.size() != K)
    {
        throw InvalidArgument("previous outcome vector has the wrong length");
    }

    std::vector<std::uint8_t> indicator(draws.size());
    std::array<double, kNumTargets> component_hits{};
    Eigen::VectorXd y(K);
    std::array<std::optional<double>, kNumTargets> clinical;
    for (std::size_t s = 0; s < draws.size(); ++s)
    {
        const Draw& d = draws.draws[s];
        Eigen::VectorXd mean = d.beta.transpose() * input.x + d.b.row(input.subject).transpose();
        if (lagged)
        {
            for (int k = 0; k < K; ++k)
            {
                const double prev = input.y_prev.size() != 0 ? input.y_prev(k) : d.y_last(input.subject, k);
                if (std::isfinite(prev))
                {
                    mean(k) += tcar_decay(d.phi(k), input.delta_t) * prev;
                }
            }
        }
        const Eigen::LLT<Eigen::MatrixXd> llt(d.Sigma_Y);
        if (llt.info() != Eigen::Success)
        {
            throw NumericalError("posterior draw has a non-SPD residual covariance");
        }
        for (int k = 0; k < K; ++k)
        {
            y(k) = rng.normal();
        }
        y = mean + llt.matrixL() * y;
        for (int k = 0; k < K; ++k)
        {
            clinical[static_cast<std::size_t>(k)] = standardization.unstandardize_target(k, y(k));
        }
        const auto flags = mets_criteria(clinical, input.sex, thresholds);
        int met = 0;
        for (int k = 0; k < K; ++k)
        {
            if (flags[static_cast<std::size_t>(k)].value_or(false))
            {
                ++met;
                component_hits[static_cast<std::size_t>(k)] += 1.0;
            }
        }
        indicator[s] = met >= 3 ? 1 : 0;
    }

    RiskAssessment out;
    out.subject_id = input.subject_id;
    out.n_draws = static_cast<int>(draws.size());
    double hits = 0.0;
    for (auto v : indicator)
    {
        hits += v;
    }
    out.p_mean = hits / static_cast<double>(draws.size());
    for (int k = 0; k < K; ++k)
    {
        out.per_component_prob[static_cast<std::size_t>(k)] =
            component_hits[static_cast<std::size_t>(k)] / static_cast<double>(draws.size());
    }
    const auto [lo, hi] = block_interval(indicator, draws.chains, draws.per_chain);
    out.ci_low = lo;
    out.ci_high = hi;
    return out;
}

nlohmann::json ThresholdReport::to_json() const
{
    nlohmann::json roc = nlohmann::json::array();
    for (const auto& p : roc_points)
    {
        roc.push_back({{"threshold", p.threshold}, {"sensitivity", p.sensitivity}, {"specificity", p.specificity}});
    }
    return {{"t_star", t_star}, {"youden", youden_at_t_star}, {"roc", roc}};
}

ThresholdReport select_threshold(const std::vector<std::pair<double, int>>& scored)
{
    long positives = 0;
    long negatives = 0;
    for (const auto& [p, label] : scored)
    {
        if (!std::isfinite(p) || p < 0.0 || p > 1.0)
        {
            throw InvalidArgument("scores must be probabilities");
        }
        if (label != 0 && label != 1)
        {
            throw InvalidArgument("labels must be 0 or 1");
        }
        (label == 1 ? positives : negatives) += 1;
    }
    if (positives == 0 || negatives == 0)
    {
        throw InvalidArgument("threshold selection needs both positive and negative labels");
    }
    ThresholdReport report;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kThresholdGridSteps; ++i)
    {
        const double t = i * kThresholdGridStep;
        long tp = 0;
        long tn = 0;
        for (const auto& [p, label] : scored)
        {
            const bool predicted = p >= t;
            if (predicted && label == 1)
            {
                ++tp;
            }
            else if (!predicted && label == 0)
            {
                ++tn;
            }
        }
        RocPoint point{t, static_cast<double>(tp) / static_cast<double>(positives),
                       static_cast<double>(tn) / static_cast<double>(negatives)};
        const double j = point.sensitivity + point.specificity - 1.0;
        // Strict comparison keeps the smallest maximizer.
        if (j > best)
        {
            best = j;
            report.t_star = t;
        }
        report.roc_points.push_back(point);
    }
    report.youden_at_t_star = best;
    return report;
}

RiskColor classify(double p_mean, double ci_high, double t)
{
    if (p_mean >= t)
    {
        return RiskColor::red;
    }
    return ci_high < t ? RiskColor::green : RiskColor::yellow;
}

RiskColor classify(const RiskAssessment& assessment, double t)
{
    return classify(assessment.p_mean, assessment.ci_high, t);
}

void BinaryConfusion::add(bool predicted, int label)
{
    if (label == 1)
    {
        (predicted ? true_positive : false_negative) += 1;
    }
    else
    {
        (predicted ? false_positive : true_negative) += 1;
    }
}

void TrafficLightConfusion::add(RiskColor color, int label)
{
    counts[static_cast<std::size_t>(color)][label == 1 ? 1 : 0] += 1;
}

BinaryConfusion TrafficLightConfusion::collapse() const
{
    BinaryConfusion b;
    b.true_negative = counts[0][0];
    b.false_negative = counts[0][1];
    b.false_positive = counts[1][0] + counts[2][0];
    b.true_positive = counts[1][1] + counts[2][1];
    return b;
}

nlohmann::json TrafficLightConfusion::to_json() const
{
    nlohmann::json doc;
    for (int c = 0; c < 3; ++c)
    {
        const auto& row = counts[static_cast<std::size_t>(c)];
        doc[std::string(to_string(static_cast<RiskColor>(c)))] = {{"true_no", row[0]}, {"true_yes", row[1]}};
    }
    return doc;
}

nlohmann::json Metrics::to_json() const
{
    return {{"sensitivity", sensitivity}, {"specificity", specificity}, {"accuracy", accuracy}};
}

Metrics metrics(const BinaryConfusion& c)
{
    const long positives = c.true_positive + c.false_negative;
    const long negatives = c.true_negative + c.false_positive;
    if (positives == 0 || negatives == 0)
    {
        throw InvalidArgument("metrics need at least one positive and one negative case");
    }
    Metrics m;
    m.sensitivity = static_cast<double>(c.true_positive) / static_cast<double>(positives);
    m.specificity = static_cast<double>(c.true_negative) / static_cast<double>(negatives);
    m.accuracy = static_cast<double>(c.true_positive + c.true_negative) / static_cast<double>(c.total());
    return m;
}

Metrics metrics(const TrafficLightConfusion& confusion)
{
    return metrics(confusion.collapse());
}

}  // namespace mets
