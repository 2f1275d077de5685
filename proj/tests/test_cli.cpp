#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mets/artifact.hpp"
#include "mets/cli.hpp"
#include "support.hpp"

using namespace mets;
using nlohmann::json;

namespace {

struct Run
{
    int code = -1;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "metsrisk");
    std::vector<const char*> argv;
    for (const auto& a : args)
    {
        argv.push_back(a.c_str());
    }
    std::ostringstream out;
    std::ostringstream err;
    Run r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::vector<std::string> lines_of(const std::string& text)
{
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
    {
        if (!line.empty())
        {
            lines.push_back(line);
        }
    }
    return lines;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Simulated cohort split into training and next-visit files, plus one fit.
struct Workspace
{
    test::TempDir dir{"cli"};
    std::string train = (dir.path() / "train.csv").string();
    std::string next = (dir.path() / "next.csv").string();
    std::string truth = (dir.path() / "truth.csv").string();
    std::string schema = (dir.path() / "schema.json").string();
    std::string model = (dir.path() / "model.json").string();

    Workspace()
    {
        const Run sim = cli({"simulate", "--seed", "3", "--train", train, "--next", next, "--truth", truth,
                             "--schema-out", schema});
        REQUIRE(sim.code == kExitOk);
        const Run fit = fit_to(model, "5");
        REQUIRE(fit.code == kExitOk);
    }

    Run fit_to(const std::string& out, const std::string& seed, const std::vector<std::string>& extra = {}) const
    {
        std::vector<std::string> args{"fit",      "--data",   train, "--schema",  schema, "--out", out,
                                      "--chains", "2",        "--burnin", "200", "--samples", "200",
                                      "--seed",   seed};
        args.insert(args.end(), extra.begin(), extra.end());
        return cli(args);
    }

    std::string path(const std::string& name) const { return (dir.path() / name).string(); }
};

Workspace& workspace()
{
    static Workspace w;
    return w;
}

}  // namespace

TEST_CASE("argument errors exit with code 1")
{
    CHECK(cli({}).code == kExitValidation);
    CHECK(cli({"frobnicate"}).code == kExitValidation);
    CHECK(cli({"fit", "--bogus"}).code == kExitValidation);
    CHECK(cli({"fit", "--data", "x.csv"}).code == kExitValidation);
    CHECK(cli({"compare", "only-one.json"}).code == kExitValidation);
    CHECK(cli({"fit", "--data", "/nonexistent.csv", "--schema", "/nonexistent.json", "--out", "m.json"}).code
          == kExitValidation);
    const Run help = cli({"--help"});
    CHECK(help.code == kExitOk);
    CHECK(help.out.find("predict") != std::string::npos);
}

TEST_CASE("simulate writes the cohort files")
{
    const Workspace& w = workspace();
    CHECK(lines_of(slurp(w.train)).size() == 1 + 200);
    CHECK(lines_of(slurp(w.next)).size() == 1 + 50);
    CHECK(lines_of(slurp(w.truth)).size() == 1 + 50);
    CHECK(json::parse(slurp(w.schema)).is_array());

    const Run to_stdout = cli({"simulate", "--seed", "3"});
    CHECK(to_stdout.code == kExitOk);
    CHECK(lines_of(to_stdout.out).size() == 1 + 250);
    CHECK(cli({"simulate", "--seed", "3"}).out == to_stdout.out);
    CHECK(cli({"simulate", "--seed", "4"}).out != to_stdout.out);

    const Run demo = cli({"simulate", "--demo", "--seed", "2"});
    CHECK(demo.code == kExitOk);
    CHECK(lines_of(demo.out).size() > 120 * 3);
    CHECK(cli({"simulate", "--train", w.path("lonely.csv")}).code == kExitValidation);
}

TEST_CASE("fit reports a summary and writes an artifact")
{
    const Workspace& w = workspace();
    const ModelArtifact a = load_artifact(w.model);
    CHECK(a.label == "baseline");
    CHECK(a.draws.size() == 400);
    CHECK_FALSE(a.t_star.has_value());

    const Run again = w.fit_to(w.path("again.json"), "5");
    REQUIRE(again.code == kExitOk);
    const json summary = json::parse(lines_of(again.out).back());
    CHECK(summary["content_hash"] == a.content_hash);
    CHECK(summary["subjects"] == 50);
    CHECK(slurp(w.path("again.json")) == slurp(w.model));
}

TEST_CASE("predict needs a threshold unless probabilities only")
{
    const Workspace& w = workspace();
    const std::string fresh = w.path("fresh.json");
    REQUIRE(w.fit_to(fresh, "6").code == kExitOk);
    const Run refused = cli({"predict", "--model", fresh, "--data", w.next});
    CHECK(refused.code == kExitValidation);
    CHECK(refused.err.find("threshold") != std::string::npos);

    const Run probs = cli({"predict", "--model", fresh, "--data", w.next, "--probabilities-only"});
    CHECK(probs.code == kExitOk);
    const auto lines = lines_of(probs.out);
    REQUIRE(lines.size() == 50);
    CHECK(json::parse(lines[0])["color"].is_null());
}

TEST_CASE("fit, threshold and predict end to end")
{
    const Workspace& w = workspace();
    const std::string tuned = w.path("tuned.json");
    const Run th = cli({"threshold", "--model", w.model, "--out", tuned});
    REQUIRE(th.code == kExitOk);
    const json report = json::parse(lines_of(th.out).back());
    const double t_star = report["t_star"].get<double>();
    CHECK(t_star >= 0.0);
    CHECK(t_star <= 0.5);
    CHECK(load_artifact(tuned).t_star == t_star);

    const std::string jsonl = w.path("pred.jsonl");
    const Run first = cli({"predict", "--model", tuned, "--data", w.next, "--out", jsonl});
    REQUIRE(first.code == kExitOk);
    const auto lines = lines_of(slurp(jsonl));
    REQUIRE(lines.size() == 50);
    for (const auto& line : lines)
    {
        const RiskAssessment r = RiskAssessment::from_json(json::parse(line));
        REQUIRE(r.color.has_value());
        CHECK(*r.color == classify(r, t_star));
    }
    CHECK(json::parse(lines[0])["subject_id"] == "D001");

    const Run second = cli({"predict", "--model", tuned, "--data", w.next});
    CHECK(second.code == kExitOk);
    CHECK(second.out == slurp(jsonl));
}

TEST_CASE("threshold with labeled data and compare")
{
    const Workspace& w = workspace();
    const std::string tuned = w.path("tuned-train.json");
    CHECK(cli({"threshold", "--model", w.model, "--data", w.train, "--out", tuned}).code == kExitOk);

    const std::string tcar = w.path("tcar.json");
    REQUIRE(w.fit_to(tcar, "5", {"--tcar"}).code == kExitOk);
    const std::string table = w.path("compare.json");
    const Run cmp = cli({"compare", w.model, tcar, "--json", table});
    CHECK(cmp.code == kExitOk);
    CHECK(cmp.out.find("baseline") != std::string::npos);
    CHECK(cmp.out.find("tcar") != std::string::npos);
    const json rows = json::parse(slurp(table));
    CHECK(rows.dump().find("best") != std::string::npos);
}

TEST_CASE("bad artifacts and runtime failures")
{
    const Workspace& w = workspace();
    std::string text = slurp(w.model);
    const auto at = text.find("\"prediction_seed\":");
    REQUIRE(at != std::string::npos);
    text.insert(at + 18, "1");
    const std::string tampered = w.path("tampered.json");
    std::ofstream(tampered) << text;
    const Run r = cli({"predict", "--model", tampered, "--data", w.next, "--probabilities-only"});
    CHECK(r.code == kExitValidation);
    CHECK(r.err.find("hash") != std::string::npos);

    const Run unwritable = w.fit_to("/nonexistent-dir/model.json", "5");
    CHECK(unwritable.code == kExitRuntime);

    const Run geweke = cli({"geweke", "--iterations", "20000", "--chains", "100", "--mutate", "2"});
    CHECK(geweke.code == kExitRuntime);
    CHECK(json::parse(geweke.out)["pass"] == false);
}
