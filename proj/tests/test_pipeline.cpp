#include "doctest.h"

#include <algorithm>
#include <memory>

#include "json.hpp"

#include "hstc/errors.hpp"
#include "hstc/pipeline.hpp"

#include "helpers.hpp"

using namespace hstc;
using nlohmann::json;

namespace {

Engine callback_engine(CallbackBackend::Responder responder, PipelineConfig config = {}) {
    return Engine(hstc_tests::golden_corpus(),
                  Gateway(std::make_unique<CallbackBackend>(std::move(responder)),
                          default_schema_registry(), 2),
                  PromptSet::load(hstc_tests::repo_path("prompts")),
                  SynonymTable::load(hstc_tests::repo_path("data/synonyms.json")),
                  load_vectors(hstc_tests::repo_path("fixtures/vectors_ch39.jsonl")), config);
}

std::string film_description() {
    for (const auto& gold : hstc_tests::golden_queries()) {
        if (gold.query_id == "q-film") {
            return gold.description;
        }
    }
    FAIL("q-film missing from golden gold file");
    return "";
}

ProductAttributes steel_attrs() {
    ProductAttributes attrs;
    attrs.material = "stainless steel";
    attrs.form = "sheet";
    attrs.function = "cover";
    attrs.end_use = "machine guard";
    return attrs;
}

} // namespace

// ===========================================================================
// Golden end-to-end run (scripted fixtures)
// ===========================================================================

TEST_CASE("golden film query classifies to 391990 with a full trace") {
    const Engine engine = hstc_tests::golden_engine();
    const auto [decision, trace] = engine.classify(film_description(), "q-film");

    REQUIRE(decision.top3.size() == 2);
    CHECK(decision.top3[0].code.digits() == "391990");
    CHECK(decision.top3[0].confidence == doctest::Approx(0.86));
    CHECK(decision.top3[1].code.digits() == "392099");

    // The winner cites the priority note and the heading text verbatim.
    REQUIRE(decision.top3[0].citations.size() == 2);
    CHECK(decision.top3[0].citations[0].clause_id == "ch39-n1");
    CHECK(decision.top3[0].citations[1].clause_id == "3919");
    // The second citation arrived without a span; the span call filled it.
    CHECK(decision.top3[0].citations[1].span_start == 0);
    CHECK(decision.top3[0].citations[1].span_end == 13);

    const CitationReport report = verify_citations(engine.corpus(), decision);
    CHECK(report.all_grounded());

    // Trace structure: all six stages, in pipeline order.
    REQUIRE(trace.stages.size() == 6);
    CHECK(trace.stages[0].stage == "stage1_extract");
    CHECK(trace.stages[1].stage == "stage2_retrieve");
    CHECK(trace.stages[2].stage == "stage3_l1");
    CHECK(trace.stages[3].stage == "stage4_l2");
    CHECK(trace.stages[4].stage == "stage5_subheading");
    CHECK(trace.stages[5].stage == "stage6_score");
    CHECK(trace.query_id == "q-film");
    CHECK(trace.corpus_version == "golden-2022r1");

    // Retrieval saw all six headings; the fused list is capped by config.
    CHECK(trace.stages[1].output["candidates"].size() == 6);

    // 4016 was dropped by the shortlist but retained via its note tag.
    const json& reappended = trace.stages[2].output["reappended"];
    REQUIRE(reappended.size() == 1);
    CHECK(reappended[0] == "4016");

    // Two kept headings resolved in one merged stage-5 record, two calls.
    CHECK(trace.stages[4].output["resolutions"].size() == 2);
    CHECK(trace.stages[4].calls.size() == 2);

    // Stage 6 runs two calls: the scoring call and the span call.
    CHECK(trace.stages[5].calls.size() == 2);
    CHECK(trace.stages[5].output["span_fallback"] == false);

    // Scripted runs record zero wall time everywhere.
    for (const StageRecord& stage : trace.stages) {
        CHECK(stage.wall_ms == 0);
        for (const CallRecord& call : stage.calls) {
            CHECK(call.attempts == 1);
        }
    }
}

TEST_CASE("golden rolls query resolves the narrow-roll subheading") {
    const Engine engine = hstc_tests::golden_engine();
    std::string description;
    for (const auto& gold : hstc_tests::golden_queries()) {
        if (gold.query_id == "q-rolls") description = gold.description;
    }
    const auto [decision, trace] = engine.classify(description, "q-rolls");
    REQUIRE(decision.top3.size() == 1);
    CHECK(decision.top3[0].code.digits() == "391910");
    CHECK(verify_citations(engine.corpus(), decision).all_grounded());
    // Single kept heading, so stage 5 made exactly one call.
    CHECK(trace.stages[4].calls.size() == 1);
}

TEST_CASE("scripted traces are byte-identical across runs") {
    const Engine engine = hstc_tests::golden_engine();
    const std::string description = film_description();
    const std::string first = engine.classify(description, "q-film").second.serialize();
    const std::string second = engine.classify(description, "q-film").second.serialize();
    CHECK(first == second);
    CHECK(first.back() == '\n');
    CHECK(first.find('\n') == first.size() - 1); // single canonical line
}

TEST_CASE("confirmation trigger and demotions are recorded") {
    const Engine engine = hstc_tests::golden_engine();
    const auto [decision, trace] = engine.classify(film_description(), "q-film");
    const json& verdict = trace.stages[3].output;
    CHECK(verdict["confirmation_triggered"] == true);
    CHECK(verdict["keep_final"].size() == 2);
    REQUIRE(verdict["demotions"].size() == 3);
    // Every demotion cites a clause that exists in the corpus.
    for (const json& demotion : verdict["demotions"]) {
        CHECK(engine.corpus().find_clause(demotion["clause_id"].get<std::string>()) != nullptr);
    }
}

// ===========================================================================
// Note retention
// ===========================================================================

TEST_CASE("note-tagged headings dropped by the shortlist are re-appended") {
    const auto responder = [](const ChatRequest& request, int) -> std::string {
        const json input = json::parse(request.canonical_input);
        if (request.stage_name == "stage1_extract") {
            return json{{"material", "thermoplastic polyurethane (TPU)"},
                        {"form", "self-adhesive film in sheets"},
                        {"function", "protects surfaces"},
                        {"end_use", "surface protection"},
                        {"features", json::array()}}.dump();
        }
        if (request.stage_name == "stage3_l1") {
            // Drop both note-tagged candidates (3919 and 4016) on purpose.
            return json{{"keep", json::array({"3920"})}}.dump();
        }
        if (request.stage_name == "stage4_l2") {
            return json{{"keep_final", json::array({"3919"})},
                        {"demotions",
                         json::array({json{{"code", "3920"}, {"clause_id", "ch39-n1"}},
                                      json{{"code", "4016"}, {"clause_id", "ch39-x1"}}})},
                        {"confirmation",
                         json{{"chosen", "3919"},
                              {"pros", json::array({"specific heading"})},
                              {"cons", json::array()},
                              {"gir_clauses", json::array({"GIR1", "GIR3a"})}}}}.dump();
        }
        if (request.stage_name == "stage5_subheading") {
            return json{{"six_digit", "391990"},
                        {"ambiguous", false},
                        {"gir_clauses", json::array({"GIR6"})}}.dump();
        }
        if (request.stage_name == "stage6_score") {
            return json{{"top3",
                         json::array({json{{"code", "391990"},
                                           {"confidence", 0.8},
                                           {"pros", json::array({"specific"})},
                                           {"cons", json::array()},
                                           {"gir_clauses", json::array({"GIR1"})},
                                           {"citations",
                                            json::array({json{{"clause_id", "3919"},
                                                              {"quoted_text", "Self-adhesive"},
                                                              {"span", json::array({0, 13})}}})}}})}}
                .dump();
        }
        (void)input;
        throw std::runtime_error("unexpected stage " + request.stage_name);
    };

    const Engine engine = callback_engine(responder);
    const auto [decision, trace] = engine.classify(film_description(), "retention");

    const json& stage3 = trace.stages[2].output;
    std::vector<std::string> survivors;
    for (const json& survivor : stage3["survivors"]) {
        survivors.push_back(survivor["code"].get<std::string>());
    }
    // Model order first, then the retained headings in retrieval order.
    REQUIRE(survivors.size() == 3);
    CHECK(survivors[0] == "3920");
    const auto pos_3919 = std::find(survivors.begin(), survivors.end(), "3919");
    const auto pos_4016 = std::find(survivors.begin(), survivors.end(), "4016");
    REQUIRE(pos_3919 != survivors.end());
    REQUIRE(pos_4016 != survivors.end());
    CHECK(pos_3919 < pos_4016); // 3919 out-retrieves 4016
    CHECK(stage3["reappended"].size() == 2);

    CHECK(decision.top3[0].code.digits() == "391990");
}

TEST_CASE("retention can be disabled by configuration") {
    PipelineConfig config;
    config.v7_l1_note_retention = false;
    int stage4_survivor_count = -1;
    const auto responder = [&](const ChatRequest& request, int) -> std::string {
        if (request.stage_name == "stage1_extract") {
            return json{{"material", "thermoplastic polyurethane (TPU)"},
                        {"form", "self-adhesive film in sheets"},
                        {"function", "protects surfaces"},
                        {"end_use", ""},
                        {"features", json::array()}}.dump();
        }
        if (request.stage_name == "stage3_l1") {
            return json{{"keep", json::array({"3920"})}}.dump();
        }
        if (request.stage_name == "stage4_l2") {
            const json input = json::parse(request.canonical_input);
            stage4_survivor_count = static_cast<int>(input["survivors"].size());
            return json{{"keep_final", json::array({"3920"})},
                        {"demotions", json::array()},
                        {"confirmation",
                         json{{"chosen", "3920"},
                              {"pros", json::array()},
                              {"cons", json::array()},
                              {"gir_clauses", json::array({"GIR1"})}}}}.dump();
        }
        if (request.stage_name == "stage5_subheading") {
            return json{{"six_digit", "392099"},
                        {"ambiguous", false},
                        {"gir_clauses", json::array({"GIR6"})}}.dump();
        }
        return json{{"top3",
                     json::array({json{{"code", "392099"},
                                       {"confidence", 0.5},
                                       {"pros", json::array()},
                                       {"cons", json::array()},
                                       {"gir_clauses", json::array({"GIR1"})},
                                       {"citations", json::array()}}})}}.dump();
    };
    const Engine engine = callback_engine(responder, config);
    const auto [decision, trace] = engine.classify(film_description(), "no-retention");
    CHECK(stage4_survivor_count == 1); // nothing re-appended
    CHECK(trace.stages[2].output["reappended"].empty());
}

// ===========================================================================
// Stage-level behavior
// ===========================================================================

TEST_CASE("stage5 rejects a heading without subheadings") {
    const TariffCorpus corpus = hstc_tests::golden_corpus();
    Gateway gateway(std::make_unique<CallbackBackend>(
                        [](const ChatRequest&, int) -> std::string {
                            throw std::runtime_error("should not be called");
                        }),
                    default_schema_registry(), 0);
    const PromptSet prompts = PromptSet::load(hstc_tests::repo_path("prompts"));
    CHECK_THROWS_AS(stage5_subheading(gateway, prompts, corpus, HsCode::parse("391910"),
                                      "description", steel_attrs()),
                    Error);
}

TEST_CASE("self-exclusion drops keyword-matched headings before scoring") {
    const TariffCorpus corpus = hstc_tests::golden_corpus();
    const PromptSet prompts = PromptSet::load(hstc_tests::repo_path("prompts"));

    ProductAttributes attrs;
    attrs.material = "vulcanised rubber";
    attrs.form = "gasket sheet";
    attrs.function = "sealing";

    L2Verdict verdict;
    verdict.keep_final = {{HsCode::parse("3919"), "Self-adhesive...", 1.0, false}};
    verdict.confirmation.chosen = HsCode::parse("3919");
    verdict.confirmation.gir_clauses = {GirId::GIR1};

    std::map<std::string, SubheadingResolution> resolutions;
    resolutions["3919"] = {HsCode::parse("391990"), std::nullopt, false, {GirId::GIR6}};

    Gateway gateway(std::make_unique<CallbackBackend>(
                        [](const ChatRequest&, int) -> std::string {
                            throw std::runtime_error("model must not be reached");
                        }),
                    default_schema_registry(), 0);

    // The rubber keywords of ch39-x1 match the attributes, the only kept
    // heading is excluded, and the stage fails rather than fabricating.
    PipelineConfig config;
    CHECK_THROWS_WITH_AS(
        stage6_score(gateway, prompts, corpus, verdict, resolutions, attrs, config),
        doctest::Contains("self-excluded"), Error);

    // With the flag off the keyword match is ignored and the model answers.
    config.v7_stage6_self_exclusion = false;
    Gateway answering(std::make_unique<CallbackBackend>([](const ChatRequest&, int) {
                          return json{{"top3",
                                       json::array({json{{"code", "391990"},
                                                         {"confidence", 0.4},
                                                         {"pros", json::array()},
                                                         {"cons", json::array()},
                                                         {"gir_clauses", json::array({"GIR1"})},
                                                         {"citations", json::array()}}})}}
                              .dump();
                      }),
                      default_schema_registry(), 0);
    const auto outcome =
        stage6_score(answering, prompts, corpus, verdict, resolutions, attrs, config);
    CHECK(outcome.value.top3[0].code.digits() == "391990");
}

TEST_CASE("partial self-exclusion narrows the candidate pool") {
    const TariffCorpus corpus = hstc_tests::golden_corpus();
    const PromptSet prompts = PromptSet::load(hstc_tests::repo_path("prompts"));

    ProductAttributes attrs;
    attrs.material = "vulcanised rubber with a webbing of textile";
    attrs.form = "roll";
    attrs.function = "sealing";

    L2Verdict verdict;
    verdict.keep_final = {{HsCode::parse("3919"), "Self-adhesive...", 1.0, false},
                          {HsCode::parse("8517"), "Telephone sets...", 0.5, false}};
    verdict.confirmation.chosen = HsCode::parse("3919");
    verdict.confirmation.gir_clauses = {GirId::GIR1};

    std::map<std::string, SubheadingResolution> resolutions;
    resolutions["3919"] = {HsCode::parse("391990"), std::nullopt, false, {GirId::GIR6}};
    resolutions["8517"] = {HsCode::parse("851762"), std::nullopt, false, {GirId::GIR6}};

    json seen_input;
    Gateway gateway(std::make_unique<CallbackBackend>([&](const ChatRequest& request, int) {
                        seen_input = json::parse(request.canonical_input);
                        return json{{"top3",
                                     json::array({json{{"code", "851762"},
                                                       {"confidence", 0.6},
                                                       {"pros", json::array()},
                                                       {"cons", json::array()},
                                                       {"gir_clauses", json::array({"GIR1"})},
                                                       {"citations", json::array()}}})}}
                            .dump();
                    }),
                    default_schema_registry(), 0);

    PipelineConfig config;
    const auto outcome =
        stage6_score(gateway, prompts, corpus, verdict, resolutions, attrs, config);
    CHECK(outcome.value.top3[0].code.digits() == "851762");
    REQUIRE(seen_input["self_excluded"].size() == 1);
    CHECK(seen_input["self_excluded"][0]["code"] == "3919");
    CHECK(seen_input["self_excluded"][0]["clause_id"] == "ch39-x1");
    CHECK(seen_input["candidates"].size() == 1); // only 8517 reached the model
}

TEST_CASE("span-call fixture misses fall back to full-quote spans") {
    const auto responder = [](const ChatRequest& request, int) -> std::string {
        if (request.stage_name == "stage1_extract") {
            return json{{"material", "thermoplastic polyurethane (TPU)"},
                        {"form", "self-adhesive film in sheets"},
                        {"function", "protects surfaces"},
                        {"end_use", ""},
                        {"features", json::array()}}.dump();
        }
        if (request.stage_name == "stage3_l1") {
            return json{{"keep", json::array({"3919", "4016"})}}.dump();
        }
        if (request.stage_name == "stage4_l2") {
            return json{{"keep_final", json::array({"3919"})},
                        {"demotions", json::array()},
                        {"confirmation",
                         json{{"chosen", "3919"},
                              {"pros", json::array()},
                              {"cons", json::array()},
                              {"gir_clauses", json::array({"GIR1"})}}}}.dump();
        }
        if (request.stage_name == "stage5_subheading") {
            return json{{"six_digit", "391990"},
                        {"ambiguous", false},
                        {"gir_clauses", json::array({"GIR6"})}}.dump();
        }
        if (request.stage_name == "stage6_score") {
            // One citation without a span forces the span call.
            return json{{"top3",
                         json::array({json{{"code", "391990"},
                                           {"confidence", 0.7},
                                           {"pros", json::array()},
                                           {"cons", json::array()},
                                           {"gir_clauses", json::array({"GIR1"})},
                                           {"citations",
                                            json::array({json{
                                                {"clause_id", "3919"},
                                                {"quoted_text", "Self-adhesive plates"}}})}}})}}
                .dump();
        }
        if (request.stage_name == "stage6_spans") {
            throw FixtureMissingError("missing-span-key", "no fixture for span call");
        }
        throw std::runtime_error("unexpected stage " + request.stage_name);
    };

    const Engine engine = callback_engine(responder);
    const auto [decision, trace] = engine.classify(film_description(), "span-fallback");
    CHECK(trace.stages[5].output["span_fallback"] == true);
    CHECK(trace.stages[5].calls.size() == 1); // the span call is not recorded
    REQUIRE(decision.top3[0].citations.size() == 1);
    CHECK(decision.top3[0].citations[0].span_start == 0);
    CHECK(decision.top3[0].citations[0].span_end ==
          decision.top3[0].citations[0].quoted_text.size());
}

// ===========================================================================
// Failure handling
// ===========================================================================

TEST_CASE("empty description fails at stage 1 with an empty partial trace") {
    const Engine engine = hstc_tests::golden_engine();
    try {
        engine.classify("", "empty");
        FAIL("expected ClassifyError");
    } catch (const ClassifyError& e) {
        CHECK(e.stage == "stage1_extract");
        CHECK(e.partial_trace.stages.empty());
        CHECK(e.partial_trace.query_id == "empty");
    }
}

TEST_CASE("no candidates fails at stage 3 after recording stage 2") {
    // No query embeddings and no lexical overlap: retrieval comes up empty.
    const auto responder = [](const ChatRequest& request, int) -> std::string {
        if (request.stage_name == "stage1_extract") {
            return json{{"material", "qqq"},
                        {"form", "zzz"},
                        {"function", "yyy"},
                        {"end_use", ""},
                        {"features", json::array()}}.dump();
        }
        throw std::runtime_error("later stages must not run");
    };
    Engine engine(hstc_tests::golden_corpus(),
                  Gateway(std::make_unique<CallbackBackend>(responder),
                          default_schema_registry(), 2),
                  PromptSet::load(hstc_tests::repo_path("prompts")), SynonymTable{},
                  VectorSet{}, PipelineConfig{});
    try {
        engine.classify("xxxyyy zzzqqq", "nocand");
        FAIL("expected ClassifyError");
    } catch (const ClassifyError& e) {
        CHECK(e.stage == "stage3_l1");
        REQUIRE(e.partial_trace.stages.size() == 2);
        CHECK(e.partial_trace.stages[1].output["candidates"].empty());
    }
}

TEST_CASE("persistent fabricated demotion clause surfaces as a stage-4 error") {
    const auto responder = [](const ChatRequest& request, int) -> std::string {
        if (request.stage_name == "stage1_extract") {
            return json{{"material", "thermoplastic polyurethane (TPU)"},
                        {"form", "self-adhesive film in sheets"},
                        {"function", "protects"},
                        {"end_use", ""},
                        {"features", json::array()}}.dump();
        }
        if (request.stage_name == "stage3_l1") {
            return json{{"keep", json::array({"3919"})}}.dump();
        }
        if (request.stage_name == "stage4_l2") {
            return json{{"keep_final", json::array({"3919"})},
                        {"demotions",
                         json::array({json{{"code", "3919"}, {"clause_id", "made-up"}}})},
                        {"confirmation",
                         json{{"chosen", "3919"},
                              {"pros", json::array()},
                              {"cons", json::array()},
                              {"gir_clauses", json::array({"GIR1"})}}}}.dump();
        }
        throw std::runtime_error("unexpected stage " + request.stage_name);
    };
    const Engine engine = callback_engine(responder);
    try {
        engine.classify(film_description(), "bad-clause");
        FAIL("expected ClassifyError");
    } catch (const ClassifyError& e) {
        CHECK(e.stage == "stage4_l2");
        CHECK(e.partial_trace.stages.size() == 3);
        CHECK(std::string(e.what()).find("made-up") != std::string::npos);
    }
}

// ===========================================================================
// Support types
// ===========================================================================

TEST_CASE("synonym expansion appends matched expansions") {
    const SynonymTable table = SynonymTable::load(hstc_tests::repo_path("data/synonyms.json"));
    // Single-token key matches on token membership, case-insensitive.
    const std::string expanded = table.expand("Film of TPU");
    CHECK(expanded.find("thermoplastic polyurethane") != std::string::npos);
    CHECK(expanded.find("sheet") != std::string::npos);
    // Multi-word keys match as substrings.
    CHECK(table.expand("insulating tape for cables").find("electrical tape") !=
          std::string::npos);
    // No match leaves the text untouched.
    CHECK(table.expand("wooden chair") == "wooden chair");
    // "tpu" must appear as its own token, not as a substring.
    CHECK(table.expand("output signal").find("polyurethane") == std::string::npos);
}

TEST_CASE("attributes round-trip through their record form") {
    ProductAttributes attrs;
    attrs.material = "m";
    attrs.form = "f";
    attrs.function = "fn";
    attrs.end_use = "e";
    attrs.features = {"a", "b"};
    CHECK(ProductAttributes::from_json(attrs.to_json()) == attrs);

    attrs.origin_brand = "BrandCo";
    CHECK(ProductAttributes::from_json(attrs.to_json()) == attrs);

    // attribute_strings skips the empty end_use but keeps features.
    attrs.end_use = "";
    const auto strings = attrs.attribute_strings();
    CHECK(std::find(strings.begin(), strings.end(), "e") == strings.end());
    CHECK(std::find(strings.begin(), strings.end(), "a") != strings.end());
}

TEST_CASE("pipeline config validation") {
    PipelineConfig config;
    CHECK_NOTHROW(config.validate());
    config.n_l1 = 50; // exceeds n_retrieve
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = {};
    config.rrf_k = 0.0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = {};
    config.bm25_b = 1.5;
    CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("verify_citations flags unknown ids and mutated quotes") {
    const TariffCorpus corpus = hstc_tests::golden_corpus();
    FinalDecision decision;
    ScoredCandidate candidate;
    candidate.code = HsCode::parse("391990");
    candidate.confidence = 0.5;
    candidate.citations.push_back({"3919", "Self-adhesive plates", 0, 13});
    candidate.citations.push_back({"ch39-x1", "does not cover articles", 0, 5});
    decision.top3.push_back(candidate);

    CHECK(verify_citations(corpus, decision).all_grounded());

    decision.top3[0].citations[0].quoted_text = "Self adhesive plates"; // mutated
    const CitationReport mutated = verify_citations(corpus, decision);
    CHECK(mutated.ungrounded_count == 1);
    CHECK(mutated.grounded_count == 1);

    decision.top3[0].citations[0] = {"no-such-clause", "text", 0, 4};
    const CitationReport unknown = verify_citations(corpus, decision);
    CHECK_FALSE(unknown.all_grounded());
    REQUIRE(unknown.checks[0].error.has_value());
}
