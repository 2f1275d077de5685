#include "mets/cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mets/artifact.hpp"
#include "mets/errors.hpp"
#include "mets/geweke.hpp"
#include "mets/service.hpp"
#include "mets/simulate.hpp"

namespace mets {

namespace {

using nlohmann::json;

json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
    {
        throw ValidationError("cannot open " + path);
    }
    try
    {
        return json::parse(in);
    }
    catch (const json::exception& ex)
    {
        throw ValidationError(path + ": " + ex.what());
    }
}

LoadResult read_data(const std::string& path, const CovariateSchema& schema, ReadOptions options)
{
    if (path == "-")
    {
        return read_cohort(std::cin, schema, options);
    }
    return load_cohort(path, schema, options);
}

// Writes to `path`, or to `fallback` when the path is empty or "-".
template <typename Fn>
void write_output(const std::string& path, std::ostream& fallback, Fn&& fn)
{
    if (path.empty() || path == "-")
    {
        fn(fallback);
        return;
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file)
    {
        throw Error("cannot write " + path);
    }
    fn(file);
    if (!file)
    {
        throw Error("failed writing " + path);
    }
}

// Fills absent input covariates from the subject's last training visit.
void carry_forward(std::vector<std::optional<double>>& raw, const VisitRecord* last, const CovariateSchema& schema)
{
    if (last == nullptr)
    {
        return;
    }
    for (std::size_t p = 0; p < schema.size(); ++p)
    {
        if (schema.is_input_column(p) && !raw[p] && p < last->covariates.size())
        {
            raw[p] = last->covariates[p];
        }
    }
}

struct FitArgs
{
    std::string data;
    std::string schema;
    std::string out;
    std::string config;
    int chains = 4;
    int burnin = 1000;
    int samples = 1000;
    int thin = 1;
    std::uint64_t seed = 1;
    std::optional<std::uint64_t> prediction_seed;
    bool tcar = false;
    bool univariate = false;
};

int cmd_fit(const FitArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err)
{
    const CovariateSchema schema = CovariateSchema::load(a.schema);
    const LoadResult loaded = read_data(a.data, schema, {});
    if (loaded.dropped > 0)
    {
        err << "dropped " << loaded.dropped << " rows with missing non-waist targets\n";
    }

    FitOptions options;
    json sampler = json::object();
    if (!a.config.empty())
    {
        const json doc = read_json_file(a.config);
        if (!doc.is_object())
        {
            throw ValidationError("config must be a JSON object");
        }
        options.model_overrides = doc.value("model", json::object());
        sampler = doc.value("sampler", json::object());
        if (doc.contains("imputation"))
        {
            const json& imp = doc.at("imputation");
            options.imputation.iterations = imp.value("iterations", options.imputation.iterations);
            options.imputation.donors = imp.value("donors", options.imputation.donors);
        }
    }
    // Explicit flags win over the config file.
    auto given = [&](const char* name) { return sub.get_option(name)->count() > 0; };
    if (given("--chains") || !sampler.contains("chains")) sampler["chains"] = a.chains;
    if (given("--burnin") || !sampler.contains("burn_in")) sampler["burn_in"] = a.burnin;
    if (given("--samples") || !sampler.contains("samples")) sampler["samples"] = a.samples;
    if (given("--thin") || !sampler.contains("thin")) sampler["thin"] = a.thin;
    if (given("--seed") || !sampler.contains("seed")) sampler["seed"] = a.seed;
    options.settings = SamplerSettings::from_json(sampler);
    options.tcar = a.tcar || options.model_overrides.value("tcar", false);
    options.univariate = a.univariate;
    options.imputation.seed = options.settings.seed;
    options.prediction_seed = a.prediction_seed;

    ModelArtifact artifact = fit_artifact(loaded.cohort, options);
    save_artifact(artifact, a.out);

    json summary = {{"artifact", a.out},
                    {"label", artifact.label},
                    {"subjects", artifact.subject_ids.size()},
                    {"visits", artifact.history.size()},
                    {"draws", artifact.draws.size()},
                    {"thin_factor", artifact.thin_factor},
                    {"content_hash", artifact.content_hash}};
    if (artifact.ic)
    {
        summary["waic"] = artifact.ic->waic;
        summary["looic"] = artifact.ic->looic;
        if (artifact.ic->bad_k_count() > 0)
        {
            err << "warning: " << artifact.ic->bad_k_count() << " observations have Pareto k > " << kParetoKWarning
                << "\n";
        }
    }
    double max_rhat = 0.0;
    for (const auto& d : artifact.draws.diagnostics)
    {
        max_rhat = std::max(max_rhat, d.rhat);
    }
    if (!artifact.draws.diagnostics.empty())
    {
        summary["max_rhat"] = max_rhat;
        if (max_rhat > 1.01)
        {
            err << "warning: max R-hat " << max_rhat << " exceeds 1.01\n";
        }
    }
    out << summary.dump() << "\n";
    return kExitOk;
}

struct PredictArgs
{
    std::string model;
    std::string data;
    std::string out;
    bool probabilities_only = false;
};

int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream& err)
{
    auto artifact = std::make_shared<const ModelArtifact>(load_artifact(a.model));
    if (!artifact->t_star && !a.probabilities_only)
    {
        err << "error: artifact has no threshold (t_star); run `threshold` first or pass --probabilities-only\n";
        return kExitValidation;
    }
    const Predictor predictor(artifact);
    const LoadResult loaded = read_data(a.data, artifact->schema, {.require_targets = false});

    std::vector<std::string> lines;
    lines.reserve(loaded.cohort.records.size());
    for (const VisitRecord& rec : loaded.cohort.records)
    {
        auto raw = rec.covariates;
        raw.resize(artifact->schema.size());
        carry_forward(raw, predictor.last_visit(rec.subject_id), artifact->schema);
        RiskAssessment r = predictor.assess(rec.subject_id, std::move(raw), rec.visit_date);
        if (a.probabilities_only)
        {
            r.color.reset();
        }
        lines.push_back(r.to_json().dump());
    }
    write_output(a.out, out, [&](std::ostream& o) {
        for (const auto& line : lines)
        {
            o << line << "\n";
        }
    });
    return kExitOk;
}

struct ThresholdArgs
{
    std::string model;
    std::string data;
    std::string out;
};

int cmd_threshold(const ThresholdArgs& a, std::ostream& out, std::ostream& err)
{
    ModelArtifact artifact = load_artifact(a.model);
    std::vector<VisitRecord> visits;
    if (a.data.empty())
    {
        visits = artifact.history;
    }
    else
    {
        auto shared = std::make_shared<const ModelArtifact>(artifact);
        const Predictor predictor(shared);
        const LoadResult loaded = read_data(a.data, artifact.schema, {});
        for (VisitRecord rec : loaded.cohort.records)
        {
            carry_forward(rec.covariates, predictor.last_visit(rec.subject_id), artifact.schema);
            visits.push_back(std::move(rec));
        }
    }
    const auto scored = score_labeled_visits(artifact, visits);
    const ThresholdReport report = select_threshold(scored);
    artifact.t_star = report.t_star;
    artifact.youden = report.youden_at_t_star;
    const std::string target = a.out.empty() ? a.model : a.out;
    save_artifact(artifact, target);
    err << "t_star = " << report.t_star << " (Youden J " << report.youden_at_t_star << ") from " << scored.size()
        << " labeled visits\n";
    out << report.to_json().dump() << "\n";
    return kExitOk;
}

struct SimulateArgs
{
    std::string config;
    std::uint64_t seed = 1;
    std::string out;
    std::string truth;
    std::string train;
    std::string next;
    std::string schema_out;
    bool demo = false;
};

int cmd_simulate(const SimulateArgs& a, const CLI::App& sub, std::ostream& out, std::ostream&)
{
    const json doc = a.config.empty() ? json::object() : read_json_file(a.config);
    const bool seed_given = sub.get_option("--seed")->count() > 0;
    Cohort cohort;
    std::optional<SimulatedCohort> sim;
    if (a.demo)
    {
        DemoConfig cfg = DemoConfig::from_json(doc);
        if (seed_given || !doc.contains("seed"))
        {
            cfg.seed = a.seed;
        }
        cohort = simulate_demo_cohort(cfg);
        if (!a.truth.empty())
        {
            throw ValidationError("--truth is only available for the study generator");
        }
    }
    else
    {
        SimConfig cfg = SimConfig::from_json(doc);
        if (seed_given || !doc.contains("seed"))
        {
            cfg.seed = a.seed;
        }
        sim = simulate_cohort(cfg);
        cohort = sim->cohort;
    }

    if (!a.schema_out.empty())
    {
        write_output(a.schema_out, out, [&](std::ostream& o) { o << cohort.schema.to_json().dump(2) << "\n"; });
    }
    if (!a.truth.empty())
    {
        write_output(a.truth, out, [&](std::ostream& o) { write_truth(o, *sim); });
    }
    if (!a.train.empty() || !a.next.empty())
    {
        if (a.train.empty() || a.next.empty())
        {
            throw ValidationError("--train and --next go together");
        }
        const Split split = split_last_visit(cohort);
        write_output(a.train, out, [&](std::ostream& o) { write_cohort(o, split.train); });
        write_output(a.next, out, [&](std::ostream& o) { write_cohort(o, split.test); });
    }
    if (!a.out.empty() || (a.train.empty() && a.next.empty()))
    {
        write_output(a.out, out, [&](std::ostream& o) { write_cohort(o, cohort); });
    }
    return kExitOk;
}

struct CompareArgs
{
    std::vector<std::string> models;
    std::string json_out;
};

int cmd_compare(const CompareArgs& a, std::ostream& out)
{
    std::vector<IcReport> reports;
    for (const auto& path : a.models)
    {
        const ModelArtifact artifact = load_artifact(path);
        if (!artifact.ic)
        {
            throw ValidationError(path + " has no information criteria (fit stored fewer than "
                                  + std::to_string(kMinLooDraws) + " draws or no log-likelihood)");
        }
        reports.push_back(*artifact.ic);
    }
    const auto rows = compare(reports);
    out << format_comparison(rows);
    if (!a.json_out.empty())
    {
        write_output(a.json_out, out, [&](std::ostream& o) { o << comparison_json(rows).dump(2) << "\n"; });
    }
    return kExitOk;
}

struct ServeArgs
{
    std::string model;
    std::string host = "127.0.0.1";
    int port = 8080;
};

int cmd_serve(const ServeArgs& a, std::ostream& err)
{
    auto artifact = std::make_shared<const ModelArtifact>(load_artifact(a.model));
    if (!artifact->t_star)
    {
        err << "warning: artifact has no threshold; /predict and /whatif will answer 409\n";
    }
    HttpServer server(artifact);
    const int port = server.bind(a.host, a.port);
    err << "serving " << artifact->label << " (" << artifact->content_hash << ") on http://" << a.host << ":" << port
        << "\n";
    err.flush();
    server.run();
    return kExitOk;
}

struct GewekeArgs
{
    int iterations = 100000;
    int chains = 200;
    std::uint64_t seed = 1;
    bool tcar = false;
    double mutate = 1.0;
    double limit = 4.0;
};

int cmd_geweke(const GewekeArgs& a, std::ostream& out)
{
    GewekeShape shape;
    shape.tcar = a.tcar;
    GewekeSettings settings;
    settings.iterations = a.iterations;
    settings.chains = a.chains;
    settings.seed = a.seed;
    settings.kernel.sigma_y_scale_factor = a.mutate;
    const GewekeReport report = geweke_test(shape, settings);
    json stats = json::array();
    for (const auto& s : report.statistics)
    {
        stats.push_back({{"name", s.name}, {"forward_mean", s.forward_mean}, {"gibbs_mean", s.gibbs_mean}, {"z", s.z}});
    }
    const double max_z = report.max_abs_z();
    const bool pass = max_z < a.limit;
    out << json{{"statistics", stats},
                {"max_abs_z", max_z},
                {"failed_chains", report.failed_chains},
                {"limit", a.limit},
                {"pass", pass}}
               .dump(2)
        << "\n";
    return pass ? kExitOk : kExitRuntime;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Longitudinal metabolic syndrome risk: fit, predict and serve"};
    app.name("metsrisk");
    app.require_subcommand(1);

    FitArgs fit_args;
    auto* fit_cmd = app.add_subcommand("fit", "Fit the model to a visit CSV and write an artifact");
    fit_cmd->add_option("--data", fit_args.data, "Training visits CSV ('-' for stdin)")->required();
    fit_cmd->add_option("--schema", fit_args.schema, "Covariate schema JSON")->required();
    fit_cmd->add_option("--out", fit_args.out, "Artifact path (.json or .cbor)")->required();
    fit_cmd->add_option("--config", fit_args.config, "JSON with optional 'model', 'sampler', 'imputation' objects");
    fit_cmd->add_option("--chains", fit_args.chains, "Parallel chains")->capture_default_str();
    fit_cmd->add_option("--burnin", fit_args.burnin, "Burn-in sweeps per chain")->capture_default_str();
    fit_cmd->add_option("--samples", fit_args.samples, "Retained draws per chain")->capture_default_str();
    fit_cmd->add_option("--thin", fit_args.thin, "Keep every n-th sweep")->capture_default_str();
    fit_cmd->add_option("--seed", fit_args.seed, "Sampler and imputation seed")->capture_default_str();
    fit_cmd->add_option("--prediction-seed", fit_args.prediction_seed, "Seed for served predictions");
    fit_cmd->add_flag("--tcar", fit_args.tcar, "Add the continuous-time autoregressive term");
    fit_cmd->add_flag("--univariate", fit_args.univariate, "Five single-outcome fits (information criteria only)");

    PredictArgs predict_args;
    auto* predict_cmd = app.add_subcommand("predict", "Score next-visit covariates; one JSON line per row");
    predict_cmd->add_option("--model", predict_args.model, "Artifact")->required();
    predict_cmd->add_option("--data", predict_args.data, "Next-visit CSV ('-' for stdin)")->required();
    predict_cmd->add_option("--out", predict_args.out, "JSONL output (default stdout)");
    predict_cmd->add_flag("--probabilities-only", predict_args.probabilities_only,
                          "Report probabilities without traffic-light colors");

    ThresholdArgs threshold_args;
    auto* threshold_cmd = app.add_subcommand("threshold", "Select t* by Youden's J and store it in the artifact");
    threshold_cmd->add_option("--model", threshold_args.model, "Artifact")->required();
    threshold_cmd->add_option("--data", threshold_args.data, "Labeled visits CSV (default: training history)");
    threshold_cmd->add_option("--out", threshold_args.out, "Output artifact (default: overwrite --model)");

    SimulateArgs sim_args;
    auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic cohort");
    sim_cmd->add_option("--config", sim_args.config, "Simulation config JSON");
    sim_cmd->add_option("--seed", sim_args.seed, "Generator seed")->capture_default_str();
    sim_cmd->add_option("--out", sim_args.out, "Full cohort CSV (default stdout)");
    sim_cmd->add_option("--truth", sim_args.truth, "Final-visit MetS labels CSV");
    sim_cmd->add_option("--train", sim_args.train, "All but the last visit of each subject");
    sim_cmd->add_option("--next", sim_args.next, "Last visit of each subject");
    sim_cmd->add_option("--schema-out", sim_args.schema_out, "Covariate schema JSON");
    sim_cmd->add_flag("--demo", sim_args.demo, "Richer cohort with missing values and more covariates");

    CompareArgs compare_args;
    auto* compare_cmd = app.add_subcommand("compare", "Compare WAIC / PSIS-LOO across artifacts");
    compare_cmd->add_option("models", compare_args.models, "Artifacts")->required()->expected(2, -1);
    compare_cmd->add_option("--json", compare_args.json_out, "Also write the table as JSON");

    ServeArgs serve_args;
    auto* serve_cmd = app.add_subcommand("serve", "Serve predictions over HTTP");
    serve_cmd->add_option("--model", serve_args.model, "Artifact")->required();
    serve_cmd->add_option("--host", serve_args.host, "Bind address")->capture_default_str();
    serve_cmd->add_option("--port", serve_args.port, "Port (0 picks a free one)")->capture_default_str();

    GewekeArgs geweke_args;
    auto* geweke_cmd = app.add_subcommand("geweke", "Joint-distribution self-test of the sampler");
    geweke_cmd->add_option("--iterations", geweke_args.iterations, "Draws per simulator")->capture_default_str();
    geweke_cmd->add_option("--chains", geweke_args.chains, "Successive-conditional chains")->capture_default_str();
    geweke_cmd->add_option("--seed", geweke_args.seed, "Seed")->capture_default_str();
    geweke_cmd->add_flag("--tcar", geweke_args.tcar, "Include the autoregressive term");
    geweke_cmd->add_option("--mutate", geweke_args.mutate, "Scale factor corrupting the Sigma_Y kernel")
        ->capture_default_str();
    geweke_cmd->add_option("--limit", geweke_args.limit, "Largest acceptable |z|")->capture_default_str();

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& ex)
    {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try
    {
        if (fit_cmd->parsed()) return cmd_fit(fit_args, *fit_cmd, out, err);
        if (predict_cmd->parsed()) return cmd_predict(predict_args, out, err);
        if (threshold_cmd->parsed()) return cmd_threshold(threshold_args, out, err);
        if (sim_cmd->parsed()) return cmd_simulate(sim_args, *sim_cmd, out, err);
        if (compare_cmd->parsed()) return cmd_compare(compare_args, out);
        if (serve_cmd->parsed()) return cmd_serve(serve_args, err);
        if (geweke_cmd->parsed()) return cmd_geweke(geweke_args, out);
    }
    catch (const ValidationError& ex)
    {
        err << "error: " << ex.what() << "\n";
        return kExitValidation;
    }
    catch (const InvalidArgument& ex)
    {
        err << "error: " << ex.what() << "\n";
        return kExitValidation;
    }
    catch (const std::exception& ex)
    {
        err << "runtime failure: " << ex.what() << "\n";
        return kExitRuntime;
    }
    return kExitValidation;
}

}  // namespace mets
