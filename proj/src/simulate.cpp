#include "mets/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "mets/csv.hpp"
#include "mets/distributions.hpp"
#include "mets/errors.hpp"

namespace mets {

namespace {

double truncated_normal(const NormalMarginal& m, double lo, double hi, RngStream& rng)
{
    for (int attempt = 0; attempt < 10000; ++attempt)
    {
        const double v = m.mean + m.sd * rng.normal();
        if (v >= lo && v <= hi)
        {
            return v;
        }
    }
    throw InvalidArgument("truncation bounds exclude nearly all of the marginal");
}

Date add_months(Date base, int months)
{
    const std::chrono::year_month_day ymd{base};
    return std::chrono::sys_days{ymd + std::chrono::months{months}};
}

std::string donor_id(int i, int n)
{
    const std::size_t width = std::max<std::size_t>(3, std::to_string(n).size());
    std::string digits = std::to_string(i + 1);
    return "D" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

nlohmann::json marginal_json(const NormalMarginal& m)
{
    return {{"mean", m.mean}, {"sd", m.sd}};
}

NormalMarginal marginal_from(const nlohmann::json& doc, const NormalMarginal& fallback)
{
    return {doc.value("mean", fallback.mean), doc.value("sd", fallback.sd)};
}

// Clinical value of latent component k after centering/scaling.
double to_clinical(const std::array<NormalMarginal, kNumTargets>& log_targets, int k, double standardized)
{
    const auto& m = log_targets[static_cast<std::size_t>(k)];
    return std::exp(m.mean + m.sd * standardized);
}

}  // namespace

Eigen::MatrixXd SimConfig::default_beta()
{
    // Rows bmi, age, sex_male; coefficients whose intervals exclude zero in
    // the reference fit, zero otherwise.
    Eigen::MatrixXd beta(3, kNumTargets);
    beta << 0.64, 0.19, 0.00, 0.17, -0.17,  //
        0.19, 0.29, 0.11, 0.17, 0.05,       //
        0.33, 0.25, 0.15, 0.19, -0.94;
    return beta;
}

void SimConfig::validate() const
{
    if (n_donors <= 0 || n_male < 0 || n_female < 0 || n_male + n_female != n_donors)
    {
        throw InvalidArgument("n_male + n_female must equal n_donors");
    }
    if (visits < 2)
    {
        throw InvalidArgument("at least two visits per donor are needed");
    }
    if (visit_spacing_months <= 0)
    {
        throw InvalidArgument("visit spacing must be positive");
    }
    if (!(rho >= 0.0 && rho < 1.0))
    {
        throw InvalidArgument("rho must lie in [0, 1)");
    }
    if (!(sigma >= 0.0) || !(bmi_noise_var >= 0.0) || !(t_df > 0.0) || !(outcome_spread > 0.0))
    {
        throw InvalidArgument("variances must be non-negative and t_df positive");
    }
    if (beta_true.rows() != 3 || beta_true.cols() != kNumTargets)
    {
        throw InvalidArgument("beta_true must be 3 x 5 (bmi, age, sex_male)");
    }
    for (const auto* m : {&bmi_male, &bmi_female, &age_male, &age_female, &bmi_reference, &age_reference})
    {
        if (!(m->sd > 0.0))
        {
            throw InvalidArgument("marginal standard deviations must be positive");
        }
    }
    for (const auto& m : target_clinical)
    {
        if (!(m.mean > 0.0 && m.sd > 0.0))
        {
            throw InvalidArgument("target clinical moments must be positive");
        }
    }
    parse_date(start_date);
}

nlohmann::json SimConfig::to_json() const
{
    nlohmann::json beta = nlohmann::json::array();
    for (Eigen::Index p = 0; p < beta_true.rows(); ++p)
    {
        std::vector<double> row(beta_true.cols());
        for (Eigen::Index k = 0; k < beta_true.cols(); ++k)
        {
            row[static_cast<std::size_t>(k)] = beta_true(p, k);
        }
        beta.push_back(row);
    }
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& m : target_clinical)
    {
        targets.push_back(marginal_json(m));
    }
    return {{"n_donors", n_donors},
            {"n_male", n_male},
            {"n_female", n_female},
            {"visits", visits},
            {"visit_spacing_months", visit_spacing_months},
            {"rho", rho},
            {"sigma", sigma},
            {"t_df", t_df},
            {"t_shared_scale", t_shared_scale},
            {"bmi_drift", bmi_drift},
            {"bmi_noise_var", bmi_noise_var},
            {"age_drift_threshold", age_drift_threshold},
            {"beta_true", beta},
            {"seed", seed},
            {"bmi_male", marginal_json(bmi_male)},
            {"bmi_female", marginal_json(bmi_female)},
            {"age_male", marginal_json(age_male)},
            {"age_female", marginal_json(age_female)},
            {"min_age", min_age},
            {"max_age", max_age},
            {"min_bmi", min_bmi},
            {"max_bmi", max_bmi},
            {"bmi_reference", marginal_json(bmi_reference)},
            {"age_reference", marginal_json(age_reference)},
            {"target_clinical", targets},
            {"rescale_outcomes", rescale_outcomes},
            {"outcome_spread", outcome_spread},
            {"start_date", start_date}};
}

SimConfig SimConfig::from_json(const nlohmann::json& doc)
{
    SimConfig c;
    c.n_donors = doc.value("n_donors", c.n_donors);
    c.n_male = doc.value("n_male", c.n_male);
    c.n_female = doc.value("n_female", c.n_female);
    c.visits = doc.value("visits", c.visits);
    c.visit_spacing_months = doc.value("visit_spacing_months", c.visit_spacing_months);
    c.rho = doc.value("rho", c.rho);
    c.sigma = doc.value("sigma", c.sigma);
    c.t_df = doc.value("t_df", c.t_df);
    c.t_shared_scale = doc.value("t_shared_scale", c.t_shared_scale);
    c.bmi_drift = doc.value("bmi_drift", c.bmi_drift);
    c.bmi_noise_var = doc.value("bmi_noise_var", c.bmi_noise_var);
    c.age_drift_threshold = doc.value("age_drift_threshold", c.age_drift_threshold);
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("beta_true"))
    {
        const auto rows = doc.at("beta_true").get<std::vector<std::vector<double>>>();
        c.beta_true.resize(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
        for (std::size_t p = 0; p < rows.size(); ++p)
        {
            if (static_cast<Eigen::Index>(rows[p].size()) != c.beta_true.cols())
            {
                throw ValidationError("beta_true rows must have equal length");
            }
            for (std::size_t k = 0; k < rows[p].size(); ++k)
            {
                c.beta_true(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)) = rows[p][k];
            }
        }
    }
    if (doc.contains("bmi_male")) c.bmi_male = marginal_from(doc["bmi_male"], c.bmi_male);
    if (doc.contains("bmi_female")) c.bmi_female = marginal_from(doc["bmi_female"], c.bmi_female);
    if (doc.contains("age_male")) c.age_male = marginal_from(doc["age_male"], c.age_male);
    if (doc.contains("age_female")) c.age_female = marginal_from(doc["age_female"], c.age_female);
    if (doc.contains("bmi_reference")) c.bmi_reference = marginal_from(doc["bmi_reference"], c.bmi_reference);
    if (doc.contains("age_reference")) c.age_reference = marginal_from(doc["age_reference"], c.age_reference);
    c.min_age = doc.value("min_age", c.min_age);
    c.max_age = doc.value("max_age", c.max_age);
    c.min_bmi = doc.value("min_bmi", c.min_bmi);
    c.max_bmi = doc.value("max_bmi", c.max_bmi);
    if (doc.contains("target_clinical"))
    {
        const auto& t = doc.at("target_clinical");
        if (!t.is_array() || t.size() != kNumTargets)
        {
            throw ValidationError("target_clinical needs five entries");
        }
        for (std::size_t k = 0; k < kNumTargets; ++k)
        {
            c.target_clinical[k] = marginal_from(t[k], c.target_clinical[k]);
        }
    }
    c.rescale_outcomes = doc.value("rescale_outcomes", c.rescale_outcomes);
    c.outcome_spread = doc.value("outcome_spread", c.outcome_spread);
    c.start_date = doc.value("start_date", c.start_date);
    c.validate();
    return c;
}

CovariateSchema simulation_schema()
{
    CovariateEntry bmi;
    bmi.name = "bmi";
    CovariateEntry age;
    age.name = "age";
    CovariateEntry sex;
    sex.name = "sex_male";
    sex.kind = CovariateKind::binary;
    sex.group = CovariateGroup::binary;
    sex.from_sex = true;
    return CovariateSchema({bmi, age, sex});
}

double next_bmi(double bmi, double age, const SimConfig& config, double noise)
{
    return (age >= config.age_drift_threshold ? config.bmi_drift * bmi : bmi) + noise;
}

NormalMarginal log_moments(const NormalMarginal& clinical)
{
    const double cv2 = (clinical.sd / clinical.mean) * (clinical.sd / clinical.mean);
    const double var = std::log1p(cv2);
    return {std::log(clinical.mean) - 0.5 * var, std::sqrt(var)};
}

SimulatedCohort simulate_cohort(const SimConfig& config)
{
    config.validate();
    const int n = config.n_donors;
    const int J = config.visits;
    const int rows = n * J;
    const Date start = parse_date(config.start_date);
    const double bmi_sd = std::sqrt(config.bmi_noise_var);

    SimulatedCohort sim;
    sim.cohort.schema = simulation_schema();
    sim.latent.resize(rows, kNumTargets);
    sim.x.resize(rows, 3);
    std::vector<Sex> sexes(static_cast<std::size_t>(n));

    // Donors are independent; each gets its own stream so the result does
    // not depend on generation order.
    for (int i = 0; i < n; ++i)
    {
        RngStream rng(derive_seed(config.seed, "donor:" + std::to_string(i)));
        const Sex sex = i < config.n_male ? Sex::male : Sex::female;
        sexes[static_cast<std::size_t>(i)] = sex;
        const bool male = sex == Sex::male;
        double age = truncated_normal(male ? config.age_male : config.age_female, config.min_age, config.max_age, rng);
        double bmi = truncated_normal(male ? config.bmi_male : config.bmi_female, config.min_bmi, config.max_bmi, rng);
        Eigen::VectorXd y_prev = Eigen::VectorXd::Zero(kNumTargets);
        for (int j = 0; j < J; ++j)
        {
            if (j > 0)
            {
                age += config.visit_spacing_months / 12.0;
                bmi = next_bmi(bmi, age, config, bmi_sd * rng.normal());
            }
            const int r = i * J + j;
            Eigen::Vector3d x((bmi - config.bmi_reference.mean) / config.bmi_reference.sd,
                              (age - config.age_reference.mean) / config.age_reference.sd, male ? 1.0 : 0.0);
            sim.x.row(r) = x.transpose();
            Eigen::VectorXd y = config.beta_true.transpose() * x + config.rho * y_prev;
            if (config.t_shared_scale)
            {
                // Multivariate t: one chi-square mixing variable per visit.
                const double scale = std::sqrt(config.t_df / chi_square_sample(config.t_df, rng));
                for (int k = 0; k < kNumTargets; ++k)
                {
                    y(k) += config.sigma * scale * rng.normal();
                }
            }
            else
            {
                for (int k = 0; k < kNumTargets; ++k)
                {
                    y(k) += config.sigma * student_t_sample(config.t_df, rng);
                }
            }
            sim.latent.row(r) = y.transpose();
            y_prev = y;

            VisitRecord rec;
            rec.subject_id = donor_id(i, n);
            rec.visit_index = j;
            rec.visit_date = add_months(start, j * config.visit_spacing_months);
            rec.sex = sex;
            rec.covariates = {bmi, age, male ? 1.0 : 0.0};
            sim.cohort.records.push_back(std::move(rec));
        }
    }

    sim.latent_center = Eigen::VectorXd::Zero(kNumTargets);
    sim.latent_scale = Eigen::VectorXd::Ones(kNumTargets);
    if (config.rescale_outcomes && rows > 1)
    {
        sim.latent_center = sim.latent.colwise().mean().transpose();
        for (int k = 0; k < kNumTargets; ++k)
        {
            const double ss = (sim.latent.col(k).array() - sim.latent_center(k)).square().sum();
            const double sd = std::sqrt(ss / static_cast<double>(rows - 1));
            sim.latent_scale(k) = sd > 0.0 ? sd : 1.0;
        }
    }
    std::array<NormalMarginal, kNumTargets> log_targets;
    for (int k = 0; k < kNumTargets; ++k)
    {
        log_targets[static_cast<std::size_t>(k)] = log_moments(config.target_clinical[static_cast<std::size_t>(k)]);
    }
    for (int r = 0; r < rows; ++r)
    {
        auto& rec = sim.cohort.records[static_cast<std::size_t>(r)];
        for (int k = 0; k < kNumTargets; ++k)
        {
            const double z = config.outcome_spread * (sim.latent(r, k) - sim.latent_center(k)) / sim.latent_scale(k);
            rec.targets[static_cast<std::size_t>(k)] = to_clinical(log_targets, k, z);
        }
    }
    for (int i = 0; i < n; ++i)
    {
        const auto& last = sim.cohort.records[static_cast<std::size_t>(i * J + J - 1)];
        sim.subject_ids.push_back(last.subject_id);
        sim.true_label.push_back(mets_indicator(last.targets, last.sex));
    }
    return sim;
}

void write_truth(std::ostream& out, const SimulatedCohort& sim)
{
    csv::write_row(out, {"subject_id", "true_label"});
    for (std::size_t i = 0; i < sim.subject_ids.size(); ++i)
    {
        csv::write_row(out, {sim.subject_ids[i], std::to_string(sim.true_label[i])});
    }
}

nlohmann::json StudyResult::to_json() const
{
    return {{"confusion", confusion.to_json()},
            {"threshold", threshold},
            {"combined_sensitivity", combined_sensitivity},
            {"green_specificity", green_specificity},
            {"positives", positives},
            {"negatives", negatives}};
}

StudyResult run_study(const SimConfig& config, const SamplerSettings& settings, bool tcar)
{
    const SimulatedCohort sim = simulate_cohort(config);
    const Cohort standardized = transform_and_standardize(sim.cohort, training_mask(sim.cohort));
    const Split split = split_last_visit(standardized);

    // Training prevalence on clinical values.
    const auto mask = training_mask(sim.cohort);
    double prevalent = 0.0;
    double train_rows = 0.0;
    for (std::size_t r = 0; r < sim.cohort.records.size(); ++r)
    {
        if (mask[r])
        {
            const auto& rec = sim.cohort.records[r];
            prevalent += mets_indicator(rec.targets, rec.sex);
            train_rows += 1.0;
        }
    }

    std::vector<std::string> ids;
    const DesignData data = build_design(split.train, &ids);
    const ModelConfig model = ModelConfig::from_schema(split.train.schema, tcar);
    const PosteriorDraws draws = fit(data, model, settings);

    StudyResult result;
    result.threshold = prevalent / train_rows;
    Date last_train{};
    for (std::size_t t = 0; t < split.test.records.size(); ++t)
    {
        const VisitRecord& rec = split.test.records[t];
        const auto it = std::find(ids.begin(), ids.end(), rec.subject_id);
        if (it == ids.end())
        {
            throw InvalidArgument("test subject missing from training data");
        }
        for (const auto& tr : split.train.records)
        {
            if (tr.subject_id == rec.subject_id)
            {
                last_train = tr.visit_date;
            }
        }
        PredictionInput input;
        input.subject = static_cast<int>(it - ids.begin());
        input.subject_id = rec.subject_id;
        input.sex = rec.sex;
        input.x.resize(static_cast<Eigen::Index>(rec.covariates.size()));
        for (std::size_t p = 0; p < rec.covariates.size(); ++p)
        {
            input.x(static_cast<Eigen::Index>(p)) = rec.covariates[p].value();
        }
        input.delta_t = static_cast<double>((rec.visit_date - last_train).count()) / 365.25;
        RngStream rng(derive_seed(settings.seed, rec.subject_id));
        const RiskAssessment a = predict_next_visit(draws, *standardized.standardization, input, rng);
        const auto idx = static_cast<std::size_t>(std::find(sim.subject_ids.begin(), sim.subject_ids.end(),
                                                            rec.subject_id)
                                                  - sim.subject_ids.begin());
        const int label = sim.true_label[idx];
        result.confusion.add(classify(a, result.threshold), label);
    }
    const auto& c = result.confusion.counts;
    result.positives = static_cast<int>(c[0][1] + c[1][1] + c[2][1]);
    result.negatives = static_cast<int>(c[0][0] + c[1][0] + c[2][0]);
    result.combined_sensitivity =
        result.positives > 0 ? static_cast<double>(c[1][1] + c[2][1]) / result.positives : 0.0;
    result.green_specificity = result.negatives > 0 ? static_cast<double>(c[0][0]) / result.negatives : 0.0;
    return result;
}

// ---------------------------------------------------------------------------
// Demo cohort

void DemoConfig::validate() const
{
    if (n_donors <= 0 || min_visits < 2 || max_visits < min_visits)
    {
        throw InvalidArgument("demo cohort needs donors and 2 <= min_visits <= max_visits");
    }
    if (!(male_fraction >= 0.0 && male_fraction <= 1.0) || !(waist_missing >= 0.0 && waist_missing < 1.0)
        || !(covariate_missing >= 0.0 && covariate_missing < 0.5))
    {
        throw InvalidArgument("demo fractions out of range");
    }
    if (!(mean_gap_months > 0.0))
    {
        throw InvalidArgument("mean gap must be positive");
    }
}

nlohmann::json DemoConfig::to_json() const
{
    return {{"n_donors", n_donors},
            {"min_visits", min_visits},
            {"max_visits", max_visits},
            {"male_fraction", male_fraction},
            {"waist_missing", waist_missing},
            {"covariate_missing", covariate_missing},
            {"mean_gap_months", mean_gap_months},
            {"seed", seed}};
}

DemoConfig DemoConfig::from_json(const nlohmann::json& doc)
{
    DemoConfig c;
    c.n_donors = doc.value("n_donors", c.n_donors);
    c.min_visits = doc.value("min_visits", c.min_visits);
    c.max_visits = doc.value("max_visits", c.max_visits);
    c.male_fraction = doc.value("male_fraction", c.male_fraction);
    c.waist_missing = doc.value("waist_missing", c.waist_missing);
    c.covariate_missing = doc.value("covariate_missing", c.covariate_missing);
    c.mean_gap_months = doc.value("mean_gap_months", c.mean_gap_months);
    c.seed = doc.value("seed", c.seed);
    c.validate();
    return c;
}

namespace {

struct DemoCovariate
{
    const char* name;
    NormalMarginal male;
    NormalMarginal female;
    bool log_transformed;
    // Within-donor visit-to-visit noise as a fraction of the sd.
    double jitter;
    // Effects on (waist, pmax, glucose, triglycerides, hdl) per sd.
    std::array<double, kNumTargets> beta;
};

// Marginals by sex and coefficients follow the reference cohort summaries.
const std::array<DemoCovariate, 6> kDemoNumeric{{
    {"age", {47.63, 9.72}, {50.24, 11.20}, false, 0.0, {0.19, 0.29, 0.11, 0.17, 0.05}},
    {"bmi", {25.56, 3.15}, {24.00, 3.84}, false, 0.15, {0.64, 0.19, 0.05, 0.17, -0.17}},
    {"height", {177.39, 6.47}, {164.56, 5.80}, false, 0.02, {0.23, 0.01, 0.00, -0.01, -0.02}},
    {"heart_rate", {66.93, 7.07}, {68.08, 6.87}, false, 0.6, {0.00, 0.08, 0.01, 0.03, -0.01}},
    {"hemoglobin", {15.04, 0.85}, {13.52, 0.75}, false, 0.5, {0.01, 0.07, 0.01, 0.11, 0.10}},
    {"ferritin", {67.91, 50.32}, {48.74, 33.91}, true, 0.4, {0.01, 0.01, 0.00, -0.01, -0.03}},
}};

const std::array<double, kNumTargets> kDemoActive{-0.04, 0.00, -0.02, 0.00, -0.01};
const std::array<double, kNumTargets> kDemoMale{0.33, 0.25, 0.15, 0.19, -0.94};
const std::array<double, kNumTargets> kDemoBmiSex{-0.06, 0.03, 0.05, 0.06, -0.11};

}  // namespace

CovariateSchema demo_schema()
{
    std::vector<CovariateEntry> entries;
    for (const auto& c : kDemoNumeric)
    {
        CovariateEntry e;
        e.name = c.name;
        e.log_transformed = c.log_transformed;
        entries.push_back(e);
    }
    CovariateEntry active;
    active.name = "physical_activity";
    active.kind = CovariateKind::binary;
    active.group = CovariateGroup::binary;
    active.levels = {"Inactive", "Active"};
    entries.push_back(active);
    CovariateEntry male;
    male.name = "sex_male";
    male.kind = CovariateKind::binary;
    male.group = CovariateGroup::binary;
    male.from_sex = true;
    entries.push_back(male);
    CovariateEntry inter;
    inter.name = "bmi_x_sex";
    inter.kind = CovariateKind::interaction;
    inter.group = CovariateGroup::interactions;
    inter.base = "bmi";
    entries.push_back(inter);
    return CovariateSchema(std::move(entries));
}

Cohort simulate_demo_cohort(const DemoConfig& config)
{
    config.validate();
    Cohort cohort;
    cohort.schema = demo_schema();
    const Date start = parse_date("2016-03-01");
    const std::size_t n_numeric = kDemoNumeric.size();
    const std::size_t active_idx = n_numeric;
    const std::size_t male_idx = n_numeric + 1;

    // Correlated residuals and random intercepts on the latent scale.
    Eigen::MatrixXd corr = Eigen::MatrixXd::Constant(kNumTargets, kNumTargets, 0.3);
    corr.diagonal().setOnes();
    const Eigen::MatrixXd L_eps = (0.35 * corr).llt().matrixL();
    const Eigen::MatrixXd L_b = (0.25 * corr).llt().matrixL();
    std::array<NormalMarginal, kNumTargets> log_targets;
    const SimConfig reference;
    for (int k = 0; k < kNumTargets; ++k)
    {
        log_targets[static_cast<std::size_t>(k)] = log_moments(reference.target_clinical[static_cast<std::size_t>(k)]);
    }

    for (int i = 0; i < config.n_donors; ++i)
    {
        RngStream rng(derive_seed(config.seed, "demo:" + std::to_string(i)));
        const bool male = rng.uniform() < config.male_fraction;
        const int visits = config.min_visits
                           + static_cast<int>(rng.uniform() * (config.max_visits - config.min_visits + 1));
        std::array<double, kDemoNumeric.size()> level{};
        for (std::size_t c = 0; c < n_numeric; ++c)
        {
            const auto& m = male ? kDemoNumeric[c].male : kDemoNumeric[c].female;
            if (kDemoNumeric[c].log_transformed)
            {
                const NormalMarginal lm = log_moments(m);
                level[c] = std::exp(lm.mean + lm.sd * rng.normal());
            }
            else
            {
                level[c] = m.mean + m.sd * rng.normal();
            }
        }
        level[0] = std::clamp(level[0], 18.0, 65.0);
        const bool active = rng.uniform() < 0.67;
        Eigen::VectorXd z(kNumTargets);
        for (int k = 0; k < kNumTargets; ++k)
        {
            z(k) = rng.normal();
        }
        const Eigen::VectorXd b = L_b * z;
        Date date = start + std::chrono::days{static_cast<int>(rng.uniform() * 365.0)};
        for (int j = 0; j < visits; ++j)
        {
            if (j > 0)
            {
                const double months = std::max(3.0, config.mean_gap_months * (0.5 + rng.uniform()));
                const int days = static_cast<int>(std::round(months * 30.44));
                date += std::chrono::days{days};
                level[0] += days / 365.25;
            }
            VisitRecord rec;
            rec.subject_id = donor_id(i, config.n_donors);
            rec.visit_index = j;
            rec.visit_date = date;
            rec.sex = male ? Sex::male : Sex::female;
            rec.covariates.assign(cohort.schema.size(), std::nullopt);
            Eigen::VectorXd mean = b;
            for (std::size_t c = 0; c < n_numeric; ++c)
            {
                const auto& d = kDemoNumeric[c];
                const auto& m = male ? d.male : d.female;
                double v = level[c];
                if (d.jitter > 0.0)
                {
                    v = d.log_transformed ? v * std::exp(d.jitter * log_moments(m).sd * rng.normal())
                                          : v + d.jitter * m.sd * rng.normal();
                }
                if (c == 0)
                {
                    v = std::round(v * 10.0) / 10.0;
                }
                const double zc = d.log_transformed ? (std::log(v) - log_moments(m).mean) / log_moments(m).sd
                                                    : (v - m.mean) / m.sd;
                for (int k = 0; k < kNumTargets; ++k)
                {
                    mean(k) += d.beta[static_cast<std::size_t>(k)] * zc;
                    if (c == 1 && male)
                    {
                        mean(k) += kDemoBmiSex[static_cast<std::size_t>(k)] * zc;
                    }
                }
                // Age is always recorded; the others go missing at random.
                if (c == 0 || rng.uniform() >= config.covariate_missing)
                {
                    rec.covariates[c] = v;
                }
            }
            for (int k = 0; k < kNumTargets; ++k)
            {
                mean(k) += (active ? kDemoActive[static_cast<std::size_t>(k)] : 0.0)
                           + (male ? kDemoMale[static_cast<std::size_t>(k)] : 0.0);
            }
            if (rng.uniform() >= config.covariate_missing)
            {
                rec.covariates[active_idx] = active ? 1.0 : 0.0;
            }
            rec.covariates[male_idx] = male ? 1.0 : 0.0;
            for (int k = 0; k < kNumTargets; ++k)
            {
                z(k) = rng.normal();
            }
            const Eigen::VectorXd y = mean + L_eps * z;
            for (int k = 0; k < kNumTargets; ++k)
            {
                const double clinical = to_clinical(log_targets, k, y(k));
                rec.targets[static_cast<std::size_t>(k)] = std::round(clinical * 10.0) / 10.0;
            }
            if (rng.uniform() < config.waist_missing)
            {
                rec.targets[kWaist].reset();
            }
            cohort.records.push_back(std::move(rec));
        }
    }
    return cohort;
}

}  // namespace mets
