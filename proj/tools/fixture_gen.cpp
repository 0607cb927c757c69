// Regenerates every derived fixture: the scripted backend responses for the
// two golden queries (frozen from a live run against a deterministic
// in-process responder) and the synthetic evaluation datasets with known
// metric values. Re-running against an unchanged repository must reproduce
// every file byte for byte; the freshness test relies on that.
//
// Usage: fixture_gen <repo_root> [out_dir]
//
// Inputs are read from <repo_root>/fixtures, <repo_root>/prompts and
// <repo_root>/data; outputs go to out_dir (default <repo_root>/fixtures).

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hstc/canonical.hpp"
#include "hstc/corpus.hpp"
#include "hstc/evaluation.hpp"
#include "hstc/gateway.hpp"
#include "hstc/pipeline.hpp"
#include "hstc/prompts.hpp"
#include "hstc/retrieval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hstc;

namespace {

const char* kFilmDescription =
    "Self-adhesive film of thermoplastic polyurethane (TPU), 0.2 mm thick, "
    "supplied in sheets 50 cm wide for surface protection of painted panels.";
const char* kRollsDescription =
    "Self-adhesive tape of thermoplastic polyurethane put up in rolls 15 cm "
    "wide for masking during spray painting.";

bool is_film(const std::string& text) {
    return text.find("sheets 50 cm") != std::string::npos;
}

bool is_rolls(const std::string& text) {
    return text.find("rolls 15 cm") != std::string::npos;
}

// ---------------------------------------------------------------------------
// The scripted "model": one deterministic reply per stage and scenario.
// ---------------------------------------------------------------------------

json film_attributes() {
    return json{{"material", "thermoplastic polyurethane (TPU)"},
                {"form", "self-adhesive film in sheets"},
                {"function", "protects painted surfaces during handling"},
                {"end_use", "temporary surface protection of painted panels"},
                {"features", json::array({"self-adhesive", "0.2 mm thick", "50 cm wide"})}};
}

json rolls_attributes() {
    return json{{"material", "thermoplastic polyurethane (TPU)"},
                {"form", "self-adhesive tape in narrow rolls"},
                {"function", "masks areas during spray painting"},
                {"end_use", "paint masking"},
                {"features", json::array({"self-adhesive", "15 cm wide", "supplied in rolls"})}};
}

std::string respond(const ChatRequest& request, int attempt) {
    if (attempt != 1) {
        throw std::runtime_error("golden responder was asked for a repair attempt on stage " +
                                 request.stage_name + "; a canned reply failed validation");
    }
    const json input = json::parse(request.canonical_input);

    if (request.stage_name == "stage1_extract") {
        const std::string description = input.at("description").get<std::string>();
        if (is_film(description)) {
            return film_attributes().dump();
        }
        if (is_rolls(description)) {
            return rolls_attributes().dump();
        }
        throw std::runtime_error("no scripted attributes for description: " + description);
    }

    if (request.stage_name == "stage3_l1") {
        const std::string form = input.at("attributes").at("form").get<std::string>();
        if (form.find("sheets") != std::string::npos) {
            return json{{"keep", json::array({"3919", "3920", "3916", "3926"})}}.dump();
        }
        return json{{"keep", json::array({"3919", "3920"})}}.dump();
    }

    if (request.stage_name == "stage4_l2") {
        const std::string form = input.at("attributes").at("form").get<std::string>();
        if (form.find("sheets") != std::string::npos) {
            return json{
                {"keep_final", json::array({"3919", "3920"})},
                {"demotions",
                 json::array({json{{"code", "3916"}, {"clause_id", "ch39-n1"}},
                              json{{"code", "3926"}, {"clause_id", "ch39-n1"}},
                              json{{"code", "4016"}, {"clause_id", "ch39-x1"}}})},
                {"confirmation",
                 json{{"chosen", "3919"},
                      {"pros",
                       json::array({"the goods are self-adhesive flat shapes of plastics",
                                    "the chapter note directs self-adhesive shapes to 39.19"})},
                      {"cons",
                       json::array({"39.20 would cover the film were it not self-adhesive"})},
                      {"gir_clauses", json::array({"GIR1", "GIR3a"})}}}}.dump();
        }
        return json{
            {"keep_final", json::array({"3919"})},
            {"demotions",
             json::array({json{{"code", "3920"}, {"clause_id", "ch39-n1"}},
                          json{{"code", "4016"}, {"clause_id", "ch39-x1"}}})},
            {"confirmation",
             json{{"chosen", "3919"},
                  {"pros", json::array({"self-adhesive tape in rolls is named by the heading"})},
                  {"cons", json::array()},
                  {"gir_clauses", json::array({"GIR1", "GIR3a"})}}}}.dump();
    }

    if (request.stage_name == "stage5_subheading") {
        const std::string chosen = input.at("chosen").get<std::string>();
        const std::string description = input.at("description").get<std::string>();
        if (chosen == "3919" && is_film(description)) {
            return json{{"six_digit", "391990"},
                        {"ambiguous", false},
                        {"gir_clauses", json::array({"GIR1", "GIR6"})}}.dump();
        }
        if (chosen == "3919" && is_rolls(description)) {
            return json{{"six_digit", "391910"},
                        {"ambiguous", false},
                        {"gir_clauses", json::array({"GIR1", "GIR6"})}}.dump();
        }
        if (chosen == "3920") {
            return json{{"six_digit", "392099"},
                        {"ambiguous", false},
                        {"gir_clauses", json::array({"GIR1", "GIR6"})}}.dump();
        }
        throw std::runtime_error("no scripted subheading for heading " + chosen);
    }

    if (request.stage_name == "stage6_score") {
        const std::string form = input.at("attributes").at("form").get<std::string>();
        if (form.find("sheets") != std::string::npos) {
            return json{
                {"top3",
                 json::array(
                     {json{{"code", "391990"},
                           {"confidence", 0.86},
                           {"pros",
                            json::array(
                                {"self-adhesive flat shape of plastics in sheets",
                                 "sheet width of 50 cm rules out the narrow-roll subheading"})},
                           {"cons", json::array()},
                           {"gir_clauses", json::array({"GIR1", "GIR3a", "GIR6"})},
                           {"citations",
                            json::array(
                                {json{{"clause_id", "ch39-n1"},
                                      {"quoted_text",
                                       "the self-adhesive heading is to be taken first"},
                                      {"span", json::array({35, 46})}},
                                 json{{"clause_id", "3919"},
                                      {"quoted_text",
                                       "Self-adhesive plates, sheets, film, foil"}}})}},
                      json{{"code", "392099"},
                           {"confidence", 0.31},
                           {"pros",
                            json::array(
                                {"plates, sheets and film of plastics are covered in general"})},
                           {"cons",
                            json::array(
                                {"not the most specific heading for self-adhesive goods"})},
                           {"gir_clauses", json::array({"GIR1", "GIR6"})},
                           {"citations",
                            json::array({json{
                                {"clause_id", "3920"},
                                {"quoted_text",
                                 "Other plates, sheets, film, foil and strip, of plastics"},
                                {"span", json::array({6, 26})}}})}}})}}.dump();
        }
        return json{
            {"top3",
             json::array({json{
                 {"code", "391910"},
                 {"confidence", 0.9},
                 {"pros",
                  json::array({"self-adhesive tape of plastics put up in rolls",
                               "roll width of 15 cm is within the 20 cm limit"})},
                 {"cons", json::array()},
                 {"gir_clauses", json::array({"GIR1", "GIR3a", "GIR6"})},
                 {"citations", json::array({json{{"clause_id", "391910"},
                                                 {"quoted_text", "not exceeding 20 cm"},
                                                 {"span", json::array({0, 19})}}})}}})}}.dump();
    }

    if (request.stage_name == "stage6_spans") {
        json spans = json::array();
        for (const json& citation : input.at("citations")) {
            const std::string clause_id = citation.at("clause_id").get<std::string>();
            const std::string quoted = citation.at("quoted_text").get<std::string>();
            if (clause_id == "3919" && quoted.rfind("Self-adhesive", 0) == 0) {
                spans.push_back(json{{"clause_id", clause_id}, {"start", 0}, {"end", 13}});
            } else {
                spans.push_back(json{{"clause_id", clause_id},
                                     {"start", 0},
                                     {"end", static_cast<int>(quoted.size())}});
            }
        }
        return json{{"spans", std::move(spans)}}.dump();
    }

    throw std::runtime_error("no scripted reply for stage " + request.stage_name);
}

// ---------------------------------------------------------------------------
// Synthetic evaluation datasets
// ---------------------------------------------------------------------------

std::string two_digits(int n) {
    std::ostringstream out;
    out << std::setw(2) << std::setfill('0') << n;
    return out.str();
}

std::string four_digits(int n) {
    std::ostringstream out;
    out << std::setw(4) << std::setfill('0') << n;
    return out.str();
}

// A stable pseudo-random six-digit code for record i; first digit never 0.
std::string code6(int i) {
    const long long value = 100000 + (static_cast<long long>(i) * 137) % 800000;
    return std::to_string(value);
}

// Same heading, different final pair: a six-digit miss that still counts at
// four digits.
std::string wrong_at6(const std::string& code) {
    const int last = std::stoi(code.substr(4, 2));
    return code.substr(0, 4) + two_digits((last + 7) % 100);
}

// Different heading entirely; offset picks distinct wrong headings.
std::string wrong_heading(const std::string& code, int offset) {
    const int heading = std::stoi(code.substr(0, 4));
    return four_digits(1000 + (heading - 1000 + offset) % 9000) + code.substr(4, 2);
}

std::string eval_id(int i) {
    std::ostringstream out;
    out << "e" << std::setw(4) << std::setfill('0') << i;
    return out.str();
}

void write_lines(const std::string& path, const std::vector<json>& records) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    for (const json& record : records) {
        out << canonical_json_string(record) << '\n';
    }
}

// Outcome groups, in block order. The counts are chosen so the four
// accuracy figures, the agreement figures and the audit shares all land on
// round, independently checkable values.
enum class Group { ExactSix, FourOnlyTop1, SixInTop3, FourInTop3, Miss };

Group group_of(int i) {
    if (i <= 406) return Group::ExactSix;
    if (i <= 474) return Group::FourOnlyTop1;
    if (i <= 495) return Group::SixInTop3;
    if (i <= 578) return Group::FourInTop3;
    return Group::Miss;
}

void generate_eval(const std::string& dir) {
    std::vector<json> gold;
    std::vector<json> preds_a;
    std::vector<json> preds_b;
    for (int i = 1; i <= 632; ++i) {
        const std::string id = eval_id(i);
        const std::string gold_code = code6(i);
        gold.push_back(json{{"query_id", id},
                            {"description", "evaluation record " + id},
                            {"gold_code", gold_code}});

        std::vector<std::string> top3;
        switch (group_of(i)) {
        case Group::ExactSix:
            top3 = {gold_code, wrong_at6(gold_code), wrong_heading(gold_code, 13)};
            break;
        case Group::FourOnlyTop1:
            top3 = {wrong_at6(gold_code), gold_code, wrong_heading(gold_code, 13)};
            break;
        case Group::SixInTop3:
            top3 = {wrong_heading(gold_code, 13), gold_code, wrong_at6(gold_code)};
            break;
        case Group::FourInTop3:
            top3 = {wrong_heading(gold_code, 13), wrong_at6(gold_code),
                    wrong_heading(gold_code, 26)};
            break;
        case Group::Miss:
            top3 = {wrong_heading(gold_code, 13), wrong_heading(gold_code, 26),
                    wrong_heading(gold_code, 39)};
            break;
        }
        preds_a.push_back(json{{"query_id", id}, {"top3", top3}});

        // The comparison run agrees with run A's top-1 on the first 489
        // records, matches it only at four digits on the next 43, and picks
        // a different heading on the last 100.
        std::string other_top1;
        if (i <= 489) {
            other_top1 = top3[0];
        } else if (i <= 532) {
            other_top1 = wrong_at6(top3[0]);
        } else {
            other_top1 = wrong_heading(top3[0], 17);
        }
        preds_b.push_back(json{{"query_id", id}, {"top3", json::array({other_top1})}});
    }
    write_lines(dir + "/gold_632.jsonl", gold);
    write_lines(dir + "/preds_v7.jsonl", preds_a);
    write_lines(dir + "/preds_v6.jsonl", preds_b);

    std::vector<json> audit;
    for (int i = 1; i <= 226; ++i) {
        const char* bucket = nullptr;
        const char* rationale = nullptr;
        if (i <= 96) {
            bucket = "A";
            rationale = "ground-truth label contradicts the heading text";
        } else if (i <= 130) {
            bucket = "B";
            rationale = "both codes are defensible under the notes";
        } else if (i <= 213) {
            bucket = "C";
            rationale = "agent reading of the notes is preferable";
        } else {
            bucket = "D";
            rationale = "description too sparse to decide";
        }
        std::ostringstream id;
        id << "a" << std::setw(3) << std::setfill('0') << i;
        const std::string gt = code6(1000 + i);
        audit.push_back(json{{"query_id", id.str()},
                             {"gt_code", gt},
                             {"agent_code", wrong_at6(gt)},
                             {"bucket", bucket},
                             {"rationale", rationale}});
    }
    write_lines(dir + "/audit_226.jsonl", audit);
}

// ---------------------------------------------------------------------------
// Self-checks: regeneration must reproduce the advertised figures.
// ---------------------------------------------------------------------------

void expect(bool ok, const std::string& what) {
    if (!ok) {
        throw std::runtime_error("self-check failed: " + what);
    }
}

void check_eval(const std::string& dir) {
    const auto golds = load_gold(dir + "/gold_632.jsonl");
    const auto preds_a = load_predictions(dir + "/preds_v7.jsonl");
    const auto preds_b = load_predictions(dir + "/preds_v6.jsonl");
    const EvalReport report = evaluate(preds_a, golds);
    expect(report.top1_4d.render() == "75.0% (474/632)", "top-1@4 " + report.top1_4d.render());
    expect(report.top3_4d.render() == "91.5% (578/632)", "top-3@4 " + report.top3_4d.render());
    expect(report.top1_6d.render() == "64.2% (406/632)", "top-1@6 " + report.top1_6d.render());
    expect(report.top3_6d.render() == "78.3% (495/632)", "top-3@6 " + report.top3_6d.render());
    expect(agreement(preds_a, preds_b, 4).render() == "84.2% (532/632)", "agreement@4");
    expect(agreement(preds_a, preds_b, 6).render() == "77.4% (489/632)", "agreement@6");

    const auto audit = load_audit(dir + "/audit_226.jsonl");
    const AuditShares shares = audit_shares(audit);
    expect(shares.shares[0].str() == "42.5" && shares.shares[1].str() == "15.0" &&
               shares.shares[2].str() == "36.7" && shares.shares[3].str() == "5.8",
           "audit shares");
    expect(corrected_accuracy(406, 632, audit, {AuditBucket::A, AuditBucket::D}).str() == "81.5",
           "corrected accuracy A+D");
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2 || argc > 3) {
        std::cerr << "usage: fixture_gen <repo_root> [out_dir]\n";
        return 2;
    }
    const std::string root = argv[1];
    const std::string out_dir = argc == 3 ? argv[2] : root + "/fixtures";
    try {
        fs::create_directories(out_dir);
        fs::create_directories(out_dir + "/eval");

        TariffCorpus corpus = parse_corpus(root + "/fixtures/corpus_ch39.jsonl");
        PromptSet prompts = PromptSet::load(root + "/prompts");
        SynonymTable synonyms = SynonymTable::load(root + "/data/synonyms.json");
        VectorSet vectors = load_vectors(root + "/fixtures/vectors_ch39.jsonl");

        CallbackBackend responder(&respond);
        auto recorder = std::make_unique<RecordingBackend>(responder);
        RecordingBackend* recorded = recorder.get();
        Gateway gateway(std::move(recorder), default_schema_registry(), 2);
        const Engine engine(corpus, std::move(gateway), prompts, synonyms, vectors,
                            PipelineConfig{});

        const auto film = engine.classify(kFilmDescription, "q-film");
        expect(film.first.top3.at(0).code.digits() == "391990",
               "film top-1 is " + film.first.top3.at(0).code.digits());
        const auto rolls = engine.classify(kRollsDescription, "q-rolls");
        expect(rolls.first.top3.at(0).code.digits() == "391910",
               "rolls top-1 is " + rolls.first.top3.at(0).code.digits());

        recorded->write_fixture_file(out_dir + "/golden.jsonl");
        write_lines(out_dir + "/gold_golden.jsonl",
                    {json{{"query_id", "q-film"},
                          {"description", kFilmDescription},
                          {"gold_code", "391990"}},
                     json{{"query_id", "q-rolls"},
                          {"description", kRollsDescription},
                          {"gold_code", "391910"}}});

        generate_eval(out_dir + "/eval");
        check_eval(out_dir + "/eval");
    } catch (const std::exception& e) {
        std::cerr << "fixture_gen: " << e.what() << '\n';
        return 1;
    }
    std::cout << "fixtures written to " << out_dir << '\n';
    return 0;
}
