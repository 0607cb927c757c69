#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "hstc/cli.hpp"
#include "hstc/errors.hpp"

#include "helpers.hpp"

using namespace hstc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = 0;
    std::string out;
    std::string err;
};

RunResult run(std::vector<std::string> args) {
    std::ostringstream out;
    std::ostringstream err;
    RunResult result;
    result.code = cli::dispatch(args, out, err);
    result.out = out.str();
    result.err = err.str();
    return result;
}

//! A config file wiring the shipped fixtures to a scripted backend, with the
//! output directory placed in this test run's scratch space.
std::string scripted_config(const std::string& out_subdir) {
    const std::string output_dir = hstc_tests::scratch_dir() + "/" + out_subdir;
    std::ostringstream ini;
    ini << "# test harness configuration\n"
        << "[paths]\n"
        << "corpus = " << hstc_tests::repo_path("fixtures/corpus_ch39.jsonl") << "\n"
        << "vectors = " << hstc_tests::repo_path("fixtures/vectors_ch39.jsonl") << "\n"
        << "synonyms = " << hstc_tests::repo_path("data/synonyms.json") << "\n"
        << "prompts = " << hstc_tests::repo_path("prompts") << "\n"
        << "output_dir = " << output_dir << "\n"
        << "\n"
        << "[backend]\n"
        << "kind = scripted\n"
        << "fixture_path = " << hstc_tests::repo_path("fixtures/golden.jsonl") << "\n";
    return hstc_tests::write_scratch("config-" + out_subdir + ".ini", ini.str());
}

std::string film_description() {
    for (const auto& gold : hstc_tests::golden_queries()) {
        if (gold.query_id == "q-film") return gold.description;
    }
    FAIL("q-film missing");
    return "";
}

} // namespace

// ===========================================================================
// Dispatch basics
// ===========================================================================

TEST_CASE("help and usage errors have distinct exit codes") {
    const RunResult help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("Usage") != std::string::npos);

    const RunResult unknown = run({"frobnicate"});
    CHECK(unknown.code == 2);
    CHECK_FALSE(unknown.err.empty());

    const RunResult none = run({});
    CHECK(none.code == 2);
}

TEST_CASE("domain errors exit 1 with an error line") {
    // No corpus configured.
    const RunResult result = run({"ingest"});
    CHECK(result.code == 1);
    CHECK(result.err.find("error:") != std::string::npos);

    const RunResult missing = run({"evaluate", "/no/such/preds.jsonl", "/no/such/gold.jsonl"});
    CHECK(missing.code == 1);
}

// ===========================================================================
// Configuration
// ===========================================================================

TEST_CASE("config files parse sections, comments, and overrides") {
    const std::string path = hstc_tests::write_scratch("parse.ini",
                                                       "# comment\n"
                                                       "[paths]\n"
                                                       "corpus = /tmp/c.jsonl\n"
                                                       "; another comment\n"
                                                       "[pipeline]\n"
                                                       "n_l1 = 7\n"
                                                       "v7_recall_vocabulary = off\n"
                                                       "[backend]\n"
                                                       "kind = http\n"
                                                       "timeout_ms = 1500\n");
    cli::CliConfig config = cli::load_cli_config(path);
    CHECK(config.corpus_path == "/tmp/c.jsonl");
    CHECK(config.pipeline.n_l1 == 7);
    CHECK_FALSE(config.pipeline.v7_recall_vocabulary);
    CHECK(config.backend.kind == BackendKind::Http);
    CHECK(config.backend.timeout_ms == 1500);
    CHECK(config.output_dir == "out"); // untouched default

    cli::apply_set(config, "pipeline.n_l1=9");
    CHECK(config.pipeline.n_l1 == 9); // flag overrides file
}

TEST_CASE("config errors carry the file location") {
    const std::string bad_section =
        hstc_tests::write_scratch("bad_section.ini", "[nope]\nkey = 1\n");
    CHECK_THROWS_WITH_AS(cli::load_cli_config(bad_section),
                         doctest::Contains(":1: unknown config section"), ConfigError);

    const std::string bad_key =
        hstc_tests::write_scratch("bad_key.ini", "[paths]\nelsewhere = x\n");
    CHECK_THROWS_WITH_AS(cli::load_cli_config(bad_key), doctest::Contains(":2:"), ConfigError);

    const std::string no_eq = hstc_tests::write_scratch("no_eq.ini", "[paths]\ncorpus\n");
    CHECK_THROWS_AS(cli::load_cli_config(no_eq), ConfigError);

    const std::string homeless = hstc_tests::write_scratch("homeless.ini", "corpus = x\n");
    CHECK_THROWS_WITH_AS(cli::load_cli_config(homeless),
                         doctest::Contains("outside of any [section]"), ConfigError);

    const std::string bad_bool =
        hstc_tests::write_scratch("bad_bool.ini", "[pipeline]\nv7_l1_note_retention = maybe\n");
    CHECK_THROWS_AS(cli::load_cli_config(bad_bool), ConfigError);

    const std::string bad_int =
        hstc_tests::write_scratch("bad_int.ini", "[backend]\ntimeout_ms = soon\n");
    CHECK_THROWS_AS(cli::load_cli_config(bad_int), ConfigError);

    CHECK_THROWS_AS(cli::load_cli_config(hstc_tests::scratch_dir() + "/absent.ini"),
                    ConfigError);

    cli::CliConfig config;
    CHECK_THROWS_AS(cli::apply_set(config, "no-dot=3"), ConfigError);
    CHECK_THROWS_AS(cli::apply_set(config, "pipeline.n_l1"), ConfigError);
    CHECK_THROWS_AS(cli::apply_set(config, "pipeline.unknown=3"), ConfigError);

    // A bad --set surfaces as exit code 1 through dispatch.
    const RunResult result = run({"ingest", "--set", "bogus"});
    CHECK(result.code == 1);
    CHECK(result.err.find("error:") != std::string::npos);
}

// ===========================================================================
// Subcommands against the shipped fixtures
// ===========================================================================

TEST_CASE("ingest summarizes the corpus") {
    const RunResult result =
        run({"ingest", "--set", "paths.corpus=" + hstc_tests::repo_path("fixtures/corpus_ch39.jsonl"),
             "--set", "paths.output_dir=" + hstc_tests::scratch_dir() + "/ingest-out"});
    CHECK(result.code == 0);
    CHECK(result.out.find("corpus version: golden-2022r1") != std::string::npos);
    CHECK(result.out.find("nodes: 18 (chapters 3, headings 6, subheadings 8, national 1)") !=
          std::string::npos);
    CHECK(result.out.find("note clauses: 5 (inclusion 2, exclusion 2, priority 1)") !=
          std::string::npos);
    CHECK(result.out.find("gir rules: 9") != std::string::npos);

    const std::string machine = hstc_tests::scratch_dir() + "/ingest-out/ingest.json";
    REQUIRE(fs::exists(machine));
    const json parsed = json::parse(std::ifstream(machine));
    CHECK(parsed["nodes"]["total"] == 18);
}

TEST_CASE("classify writes a trace and a decision") {
    const std::string config = scripted_config("classify-out");
    const RunResult result =
        run({"classify", "--config", config, "--query-id", "q-film", film_description()});
    CHECK(result.code == 0);
    CHECK(result.out.find("query q-film") != std::string::npos);
    CHECK(result.out.find("top-1: 3919.90 (confidence 0.86)") != std::string::npos);
    CHECK(result.out.find("trace: ") != std::string::npos);

    const std::string out_dir = hstc_tests::scratch_dir() + "/classify-out";
    CHECK(fs::exists(out_dir + "/trace-q-film.json"));
    REQUIRE(fs::exists(out_dir + "/decision-q-film.json"));
    const json decision = json::parse(std::ifstream(out_dir + "/decision-q-film.json"));
    CHECK(decision["top3"][0]["code"] == "391990");
}

TEST_CASE("classify failures keep the partial trace on disk") {
    const std::string config = scripted_config("classify-fail");
    // A description with no scripted responses: the stage-1 lookup misses.
    const RunResult result =
        run({"classify", "--config", config, "--query-id", "q/odd id", "unscripted gadget"});
    CHECK(result.code == 1);
    CHECK(result.err.find("error:") != std::string::npos);
    // The query id is sanitized for the file name and the trace is partial.
    const std::string trace_path =
        hstc_tests::scratch_dir() + "/classify-fail/trace-q_odd_id.json";
    REQUIRE(fs::exists(trace_path));
    const json trace = json::parse(std::ifstream(trace_path));
    CHECK(trace["stages"].empty());
}

TEST_CASE("batch classifies a gold file and preserves input order") {
    const std::string config = scripted_config("batch-out");
    const RunResult result =
        run({"batch", "--config", config, hstc_tests::repo_path("fixtures/gold_golden.jsonl"),
             "--jobs", "2"});
    CHECK(result.code == 0);

    const std::string out_dir = hstc_tests::scratch_dir() + "/batch-out";
    REQUIRE(fs::exists(out_dir + "/predictions.jsonl"));
    std::ifstream preds(out_dir + "/predictions.jsonl");
    std::string line;
    std::vector<json> records;
    while (std::getline(preds, line)) {
        records.push_back(json::parse(line));
    }
    REQUIRE(records.size() == 2);
    CHECK(records[0]["query_id"] == "q-film"); // gold-file order, not finish order
    CHECK(records[1]["query_id"] == "q-rolls");
    CHECK(records[0]["top3"][0] == "391990");
    CHECK(records[1]["top3"][0] == "391910");
    CHECK(fs::exists(out_dir + "/traces/q-film.json"));
    CHECK(fs::exists(out_dir + "/traces/q-rolls.json"));
}

TEST_CASE("evaluate renders the accuracy table") {
    const RunResult result =
        run({"evaluate", hstc_tests::repo_path("fixtures/eval/preds_v7.jsonl"),
             hstc_tests::repo_path("fixtures/eval/gold_632.jsonl"), "--set",
             "paths.output_dir=" + hstc_tests::scratch_dir() + "/eval-out"});
    CHECK(result.code == 0);
    CHECK(result.out.find("75.0% (474/632)") != std::string::npos);
    CHECK(result.out.find("91.5% (578/632)") != std::string::npos);
    CHECK(result.out.find("64.2% (406/632)") != std::string::npos);
    CHECK(result.out.find("78.3% (495/632)") != std::string::npos);
}

TEST_CASE("agree compares two prediction runs") {
    const RunResult result =
        run({"agree", hstc_tests::repo_path("fixtures/eval/preds_v7.jsonl"),
             hstc_tests::repo_path("fixtures/eval/preds_v6.jsonl"), "--set",
             "paths.output_dir=" + hstc_tests::scratch_dir() + "/agree-out"});
    CHECK(result.code == 0);
    CHECK(result.out.find("top-1 agreement, 4-digit: 84.2% (532/632)") != std::string::npos);
    CHECK(result.out.find("top-1 agreement, 6-digit: 77.4% (489/632)") != std::string::npos);
}

TEST_CASE("audit prints shares and corrected accuracy") {
    const RunResult result =
        run({"audit", hstc_tests::repo_path("fixtures/eval/audit_226.jsonl"), "--base-correct",
             "406", "--total", "632", "--set",
             "paths.output_dir=" + hstc_tests::scratch_dir() + "/audit-out"});
    CHECK(result.code == 0);
    CHECK(result.out.find("42.5") != std::string::npos);
    CHECK(result.out.find("accuracy, no credit: 64.2%") != std::string::npos);
    CHECK(result.out.find("corrected accuracy, credit A+D: 81.5%") != std::string::npos);
    CHECK(result.out.find("corrected accuracy, credit A+C+D: 94.6%") != std::string::npos);

    // One of --base-correct/--total can be derived from the record count.
    const RunResult derived =
        run({"audit", hstc_tests::repo_path("fixtures/eval/audit_226.jsonl"), "--base-correct",
             "406", "--set", "paths.output_dir=" + hstc_tests::scratch_dir() + "/audit-out2"});
    CHECK(derived.code == 0);
    CHECK(derived.out.find("81.5") != std::string::npos);

    // Inconsistent figures are rejected.
    const RunResult bad =
        run({"audit", hstc_tests::repo_path("fixtures/eval/audit_226.jsonl"), "--base-correct",
             "1", "--total", "3"});
    CHECK(bad.code == 1);
}

TEST_CASE("attribute tallies four-digit errors from batch traces") {
    // Build traces for both golden queries first.
    const std::string config = scripted_config("attr-batch");
    REQUIRE(run({"batch", "--config", config,
                 hstc_tests::repo_path("fixtures/gold_golden.jsonl")})
                .code == 0);

    // A gold file that marks both queries wrong at four digits.
    const std::string wrong_gold = hstc_tests::write_scratch(
        "attr_gold.jsonl",
        R"({"query_id":"q-film","description":"d","gold_code":"851762"})" "\n"
        R"({"query_id":"q-rolls","description":"d","gold_code":"401699"})" "\n");
    const RunResult result =
        run({"attribute", hstc_tests::scratch_dir() + "/attr-batch/traces", wrong_gold, "--set",
             "paths.output_dir=" + hstc_tests::scratch_dir() + "/attr-out"});
    CHECK(result.code == 0);
    CHECK(result.out.find("queries: 2, four-digit top-1 errors: 2") != std::string::npos);
    // 8517 was retrieved for the film query (kept at neither stage beyond
    // L1), 4016 was a stage-3 survivor for the rolls query via retention.
    CHECK(result.out.find("total: 2") != std::string::npos);

    // Queries correct at four digits are skipped entirely.
    const std::string right_gold = hstc_tests::write_scratch(
        "attr_gold_right.jsonl",
        R"({"query_id":"q-film","description":"d","gold_code":"391990"})" "\n"
        R"({"query_id":"q-rolls","description":"d","gold_code":"391910"})" "\n");
    const RunResult none =
        run({"attribute", hstc_tests::scratch_dir() + "/attr-batch/traces", right_gold, "--set",
             "paths.output_dir=" + hstc_tests::scratch_dir() + "/attr-out2"});
    CHECK(none.code == 0);
    CHECK(none.out.find("queries: 2, four-digit top-1 errors: 0") != std::string::npos);

    // A missing trace file is a hard error.
    const std::string orphan_gold = hstc_tests::write_scratch(
        "attr_gold_orphan.jsonl",
        R"({"query_id":"q-ghost","description":"d","gold_code":"851762"})" "\n");
    const RunResult missing =
        run({"attribute", hstc_tests::scratch_dir() + "/attr-batch/traces", orphan_gold});
    CHECK(missing.code == 1);
}

TEST_CASE("verify grounds citations and flags mutations") {
    const std::string config = scripted_config("verify-out");
    REQUIRE(run({"classify", "--config", config, "--query-id", "q-film", film_description()})
                .code == 0);
    const std::string decision_path =
        hstc_tests::scratch_dir() + "/verify-out/decision-q-film.json";

    const RunResult ok = run({"verify", decision_path, "--set",
                              "paths.corpus=" + hstc_tests::repo_path("fixtures/corpus_ch39.jsonl"),
                              "--set",
                              "paths.output_dir=" + hstc_tests::scratch_dir() + "/verify-out"});
    CHECK(ok.code == 0);
    CHECK(ok.out.find("grounded: 3, ungrounded: 0") != std::string::npos);

    // Corrupt one quoted passage and expect a nonzero exit.
    json decision = json::parse(std::ifstream(decision_path));
    decision["top3"][0]["citations"][0]["quoted_text"] = "never in any clause";
    const std::string mutated = hstc_tests::write_scratch(
        "decision-mutated.json", decision.dump() + "\n");
    const RunResult bad = run({"verify", mutated, "--set",
                               "paths.corpus=" + hstc_tests::repo_path("fixtures/corpus_ch39.jsonl"),
                               "--set",
                               "paths.output_dir=" + hstc_tests::scratch_dir() + "/verify-out"});
    CHECK(bad.code == 1);
    CHECK(bad.out.find("ungrounded") != std::string::npos);
}
