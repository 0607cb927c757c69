#include "hstc/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include "hstc/canonical.hpp"
#include "hstc/tokenize.hpp"

namespace hstc {

using nlohmann::json;

namespace {

std::string ascii_lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

json gir_list_to_json(const std::vector<GirId>& ids) {
    json arr = json::array();
    for (GirId id : ids) {
        arr.push_back(to_string(id));
    }
    return arr;
}

std::vector<GirId> gir_list_from_json(const json& arr) {
    std::vector<GirId> ids;
    for (const auto& entry : arr) {
        auto id = gir_from_string(entry.get<std::string>());
        if (!id) {
            throw Error("not a GIR id: " + entry.get<std::string>());
        }
        ids.push_back(*id);
    }
    return ids;
}

} // namespace

// ===========================================================================
// Payload serialization
// ===========================================================================

std::vector<std::string> ProductAttributes::attribute_strings() const {
    std::vector<std::string> out{material, form, function};
    if (!end_use.empty()) {
        out.push_back(end_use);
    }
    for (const std::string& feature : features) {
        if (!feature.empty()) {
            out.push_back(feature);
        }
    }
    return out;
}

std::string ProductAttributes::joined_lower() const {
    std::string joined = material + ' ' + form + ' ' + function + ' ' + end_use;
    for (const std::string& feature : features) {
        joined += ' ';
        joined += feature;
    }
    if (origin_brand) {
        joined += ' ';
        joined += *origin_brand;
    }
    return ascii_lower(joined);
}

json ProductAttributes::to_json() const {
    json j;
    j["material"] = material;
    j["form"] = form;
    j["function"] = function;
    j["end_use"] = end_use;
    j["features"] = features;
    if (origin_brand) {
        j["origin_brand"] = *origin_brand;
    }
    return j;
}

ProductAttributes ProductAttributes::from_json(const json& value) {
    ProductAttributes attrs;
    attrs.material = value.at("material").get<std::string>();
    attrs.form = value.at("form").get<std::string>();
    attrs.function = value.at("function").get<std::string>();
    attrs.end_use = value.at("end_use").get<std::string>();
    attrs.features = value.at("features").get<std::vector<std::string>>();
    if (value.contains("origin_brand") && !value["origin_brand"].is_null()) {
        attrs.origin_brand = value["origin_brand"].get<std::string>();
    }
    return attrs;
}

json CandidateHeading::to_json() const {
    json j;
    j["code"] = code.digits();
    j["heading_text"] = heading_text;
    j["retrieval_score"] = retrieval_score;
    j["note_tagged"] = note_tagged;
    return j;
}

json L2Verdict::to_json() const {
    json j;
    json keep = json::array();
    for (const CandidateHeading& candidate : keep_final) {
        keep.push_back(candidate.to_json());
    }
    j["keep_final"] = std::move(keep);
    json dem = json::array();
    for (const Demotion& demotion : demotions) {
        dem.push_back(json{{"code", demotion.code.digits()}, {"clause_id", demotion.clause_id}});
    }
    j["demotions"] = std::move(dem);
    j["confirmation"] = json{{"chosen", confirmation.chosen.digits()},
                             {"pros", confirmation.pros},
                             {"cons", confirmation.cons},
                             {"gir_clauses", gir_list_to_json(confirmation.gir_clauses)}};
    j["confirmation_triggered"] = confirmation_triggered;
    return j;
}

json SubheadingResolution::to_json() const {
    json j;
    j["six_digit"] = six_digit.digits();
    if (eight_digit) {
        j["eight_digit"] = eight_digit->digits();
    }
    j["ambiguous"] = ambiguous;
    j["gir_clauses"] = gir_list_to_json(gir_clauses);
    return j;
}

json Citation::to_json() const {
    json j;
    j["clause_id"] = clause_id;
    j["quoted_text"] = quoted_text;
    j["span"] = json::array({span_start, span_end});
    return j;
}

json ScoredCandidate::to_json() const {
    json j;
    j["code"] = code.digits();
    j["confidence"] = confidence;
    j["pros"] = pros;
    j["cons"] = cons;
    j["gir_clauses"] = gir_list_to_json(gir_clauses);
    json cits = json::array();
    for (const Citation& citation : citations) {
        cits.push_back(citation.to_json());
    }
    j["citations"] = std::move(cits);
    return j;
}

json FinalDecision::to_json() const {
    json arr = json::array();
    for (const ScoredCandidate& candidate : top3) {
        arr.push_back(candidate.to_json());
    }
    return json{{"top3", std::move(arr)}};
}

FinalDecision FinalDecision::from_json(const json& value) {
    FinalDecision decision;
    for (const auto& entry : value.at("top3")) {
        ScoredCandidate candidate;
        candidate.code = HsCode::from_digits(entry.at("code").get<std::string>());
        candidate.confidence = entry.at("confidence").get<double>();
        candidate.pros = entry.at("pros").get<std::vector<std::string>>();
        candidate.cons = entry.at("cons").get<std::vector<std::string>>();
        candidate.gir_clauses = gir_list_from_json(entry.at("gir_clauses"));
        for (const auto& cit : entry.at("citations")) {
            Citation citation;
            citation.clause_id = cit.at("clause_id").get<std::string>();
            citation.quoted_text = cit.at("quoted_text").get<std::string>();
            if (cit.contains("span") && !cit["span"].is_null()) {
                citation.span_start = cit["span"][0].get<std::size_t>();
                citation.span_end = cit["span"][1].get<std::size_t>();
            } else {
                citation.span_start = 0;
                citation.span_end = citation.quoted_text.size();
            }
            candidate.citations.push_back(std::move(citation));
        }
        decision.top3.push_back(std::move(candidate));
    }
    return decision;
}

json CallRecord::to_json() const {
    return json{{"key", key}, {"raw_text", raw_text}, {"attempts", attempts}};
}

json StageRecord::to_json() const {
    json calls_json = json::array();
    for (const CallRecord& call : calls) {
        calls_json.push_back(call.to_json());
    }
    return json{{"stage", stage},
                {"input", input},
                {"output", output},
                {"calls", std::move(calls_json)},
                {"wall_ms", wall_ms}};
}

json PipelineTrace::to_json() const {
    json stages_json = json::array();
    for (const StageRecord& record : stages) {
        stages_json.push_back(record.to_json());
    }
    return json{{"query_id", query_id},
                {"corpus_version", corpus_version},
                {"config", config_snapshot},
                {"stages", std::move(stages_json)}};
}

std::string PipelineTrace::serialize() const {
    return canonical_json_string(to_json()) + "\n";
}

// ===========================================================================
// Configuration
// ===========================================================================

void PipelineConfig::validate() const {
    if (n_keep_final < 1 || n_l1 < n_keep_final || n_retrieve < n_l1) {
        throw ConfigError("candidate counts must satisfy n_retrieve >= n_l1 >= n_keep_final >= 1");
    }
    if (rrf_k <= 0.0) {
        throw ConfigError("rrf_k must be positive");
    }
    if (bm25_k1 < 0.0) {
        throw ConfigError("bm25_k1 must be non-negative");
    }
    if (bm25_b < 0.0 || bm25_b > 1.0) {
        throw ConfigError("bm25_b must lie in [0, 1]");
    }
}

json PipelineConfig::to_json() const {
    json j;
    j["n_retrieve"] = n_retrieve;
    j["n_l1"] = n_l1;
    j["n_keep_final"] = n_keep_final;
    j["v7_recall_vocabulary"] = v7_recall_vocabulary;
    j["v7_l1_note_retention"] = v7_l1_note_retention;
    j["v7_stage6_self_exclusion"] = v7_stage6_self_exclusion;
    j["v7_broadened_l2_triggers"] = v7_broadened_l2_triggers;
    j["rrf_k"] = rrf_k;
    j["bm25_k1"] = bm25_k1;
    j["bm25_b"] = bm25_b;
    j["measure_wall_time"] = measure_wall_time;
    return j;
}

SynonymTable::SynonymTable(std::map<std::string, std::vector<std::string>> entries)
    : entries_(std::move(entries)) {}

SynonymTable SynonymTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open synonym table: " + path);
    }
    json parsed;
    try {
        parsed = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    if (!parsed.is_object()) {
        throw ConfigError(path + ": synonym table must be an object of term -> expansions");
    }
    std::map<std::string, std::vector<std::string>> entries;
    for (const auto& [term, expansions] : parsed.items()) {
        if (!expansions.is_array()) {
            throw ConfigError(path + ": expansions for '" + term + "' must be an array");
        }
        std::vector<std::string> list;
        for (const auto& expansion : expansions) {
            if (!expansion.is_string()) {
                throw ConfigError(path + ": expansions for '" + term + "' must be strings");
            }
            list.push_back(expansion.get<std::string>());
        }
        entries[term] = std::move(list);
    }
    return SynonymTable(std::move(entries));
}

std::string SynonymTable::expand(const std::string& text) const {
    if (entries_.empty()) {
        return text;
    }
    const std::string lower_text = ascii_lower(text);
    const std::vector<std::string> tokens = tokenize(text);
    const std::set<std::string> token_set(tokens.begin(), tokens.end());

    std::string out = text;
    for (const auto& [term, expansions] : entries_) {
        const std::string lower_term = ascii_lower(term);
        const bool hit = lower_term.find(' ') == std::string::npos
                             ? token_set.count(lower_term) != 0
                             : lower_text.find(lower_term) != std::string::npos;
        if (!hit) {
            continue;
        }
        for (const std::string& expansion : expansions) {
            out += ' ';
            out += expansion;
        }
    }
    return out;
}

// ===========================================================================
// Prompt rendering helpers
// ===========================================================================

namespace {

std::string attrs_string(const ProductAttributes& attrs) {
    return canonical_json_string(attrs.to_json());
}

std::string render_candidate_lines(const std::vector<CandidateHeading>& candidates) {
    std::ostringstream out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        out << (i + 1) << ". " << candidates[i].code.display() << " — "
            << candidates[i].heading_text;
        if (candidates[i].note_tagged) {
            out << " [note-tagged]";
        }
        out << '\n';
    }
    return out.str();
}

std::string render_notes(const TariffCorpus& corpus, const HsCode& code) {
    std::ostringstream out;
    for (const NoteClause* clause : corpus.notes_for(code)) {
        out << "  note " << clause->id << " (" << to_string(clause->clause_type)
            << "): " << clause->text << '\n';
    }
    return out.str();
}

std::string render_survivors(const TariffCorpus& corpus,
                             const std::vector<CandidateHeading>& survivors) {
    std::ostringstream out;
    for (const CandidateHeading& survivor : survivors) {
        out << survivor.code.display() << " — " << survivor.heading_text << '\n'
            << render_notes(corpus, survivor.code);
    }
    return out.str();
}

std::string render_children(const TariffCorpus& corpus, const HsCode& heading) {
    std::ostringstream out;
    for (const TariffNode* child : corpus.children_of(heading)) {
        out << child->code.display() << " — " << child->text << '\n';
        for (const TariffNode* grandchild : corpus.children_of(child->code)) {
            out << "  " << grandchild->code.display() << " — " << grandchild->text << '\n';
        }
    }
    return out.str();
}

std::string render_gir_rules(const TariffCorpus& corpus) {
    std::ostringstream out;
    for (const GirRule& rule : corpus.gir()) {
        out << to_string(rule.id) << ": " << rule.text << '\n';
    }
    return out.str();
}

json note_ids_json(const TariffCorpus& corpus, const HsCode& code) {
    json ids = json::array();
    for (const NoteClause* clause : corpus.notes_for(code)) {
        ids.push_back(clause->id);
    }
    return ids;
}

//! Resolves a citable id: note clause first, then a node's own text.
const std::string* citable_text(const TariffCorpus& corpus, const std::string& clause_id) {
    if (const NoteClause* clause = corpus.find_clause(clause_id)) {
        return &clause->text;
    }
    try {
        const HsCode code = HsCode::parse(clause_id);
        if (const TariffNode* node = corpus.find_node(code)) {
            return &node->text;
        }
    } catch (const CodeError&) {
        // not a code-shaped id; fall through
    }
    return nullptr;
}

CallRecord call_record(const StructuredReply& reply) {
    return CallRecord{reply.key, reply.raw_text, reply.attempts};
}

} // namespace

// ===========================================================================
// Stage 1: attribute extraction
// ===========================================================================

StageOutcome<ProductAttributes> stage1_extract(const Gateway& gateway, const PromptSet& prompts,
                                               const std::string& description) {
    if (description.empty()) {
        throw Error("stage1_extract: empty product description");
    }
    const json input{{"description", description}};
    ChatRequest request;
    request.stage_name = "stage1_extract";
    request.system_prompt = prompts.stage("stage1_extract").system;
    request.user_prompt = prompts.render_user("stage1_extract", {{"description", description}});
    request.schema_id = "attributes.v1";
    request.canonical_input = canonical_json_string(input);

    const StructuredReply reply = gateway.complete_structured(request);
    ProductAttributes attrs = ProductAttributes::from_json(reply.value);

    StageRecord record;
    record.stage = "stage1_extract";
    record.input = input;
    record.output = attrs.to_json();
    record.calls.push_back(call_record(reply));
    return {std::move(attrs), std::move(record)};
}

// ===========================================================================
// Stage 2: hybrid retrieval
// ===========================================================================

StageOutcome<std::vector<CandidateHeading>> stage2_retrieve(
    const TariffCorpus& corpus, const RetrievalIndices& indices,
    const EmbeddingSource* embeddings, const std::string& description,
    const ProductAttributes& attrs, const SynonymTable& synonyms, const PipelineConfig& config) {
    const std::size_t depth = static_cast<std::size_t>(config.n_retrieve);

    // One lexical query for the raw description, one per attribute string;
    // attribute queries pass through the synonym table when the expanded
    // recall vocabulary is on.
    std::vector<std::string> lexical_queries{description};
    for (const std::string& attr : attrs.attribute_strings()) {
        lexical_queries.push_back(config.v7_recall_vocabulary ? synonyms.expand(attr) : attr);
    }

    // Dense queries are keyed by the raw strings.
    std::vector<std::string> dense_keys{description};
    for (const std::string& attr : attrs.attribute_strings()) {
        dense_keys.push_back(attr);
    }

    std::vector<RankedList> lists;
    for (const std::string& query : lexical_queries) {
        RankedList list = bm25_query(indices.bm25, query, depth);
        if (!list.empty()) {
            lists.push_back(std::move(list));
        }
    }
    std::vector<std::string> dense_resolved;
    if (embeddings != nullptr && !indices.dense.vectors.empty()) {
        for (const std::string& key : dense_keys) {
            if (auto vec = embeddings->embed(key)) {
                RankedList list = dense_query(indices.dense, *vec, depth);
                if (!list.empty()) {
                    lists.push_back(std::move(list));
                    dense_resolved.push_back(key);
                }
            }
        }
    }

    RankedList fused = rrf_fuse(lists, config.rrf_k);
    if (fused.size() > depth) {
        fused.entries.resize(depth);
    }

    std::vector<CandidateHeading> candidates;
    candidates.reserve(fused.size());
    for (const ScoredDoc& doc : fused.entries) {
        CandidateHeading candidate;
        candidate.code = HsCode::from_digits(doc.doc_id);
        candidate.heading_text = corpus.node(candidate.code).text;
        candidate.retrieval_score = doc.score;
        candidates.push_back(std::move(candidate));
    }

    // A candidate is note-tagged when an exclusion clause attached to any
    // co-retrieved candidate redirects to it.
    for (const CandidateHeading& source : candidates) {
        for (const auto& [clause_id, target] : corpus.exclusion_redirects(source.code)) {
            (void)clause_id;
            for (CandidateHeading& candidate : candidates) {
                if (target == candidate.code || target.is_ancestor_of(candidate.code)) {
                    candidate.note_tagged = true;
                }
            }
        }
    }

    StageRecord record;
    record.stage = "stage2_retrieve";
    record.input = json{{"description", description},
                        {"attributes", attrs.to_json()},
                        {"lexical_queries", lexical_queries},
                        {"dense_queries_resolved", dense_resolved}};
    json out = json::array();
    for (const CandidateHeading& candidate : candidates) {
        out.push_back(candidate.to_json());
    }
    record.output = json{{"candidates", std::move(out)}};
    return {std::move(candidates), std::move(record)};
}

// ===========================================================================
// Stage 3: L1 shortlist
// ===========================================================================

StageOutcome<std::vector<CandidateHeading>> stage3_l1(
    const Gateway& gateway, const PromptSet& prompts,
    const std::vector<CandidateHeading>& candidates, const ProductAttributes& attrs,
    const PipelineConfig& config) {
    if (candidates.empty()) {
        throw Error("stage3_l1: no candidates to rank");
    }

    json candidates_json = json::array();
    for (const CandidateHeading& candidate : candidates) {
        candidates_json.push_back(candidate.to_json());
    }
    const json input{{"attributes", attrs.to_json()},
                     {"candidates", candidates_json},
                     {"n_l1", config.n_l1}};

    ChatRequest request;
    request.stage_name = "stage3_l1";
    request.system_prompt = prompts.stage("stage3_l1").system;
    request.user_prompt =
        prompts.render_user("stage3_l1", {{"attributes", attrs_string(attrs)},
                                          {"candidates", render_candidate_lines(candidates)},
                                          {"n_l1", std::to_string(config.n_l1)}});
    request.schema_id = "shortlist.v1";
    request.canonical_input = canonical_json_string(input);

    std::set<std::string> candidate_codes;
    for (const CandidateHeading& candidate : candidates) {
        candidate_codes.insert(candidate.code.digits());
    }
    const auto extra = [&](const json& value) -> std::optional<std::string> {
        const json& keep = value["keep"];
        if (keep.size() > static_cast<std::size_t>(config.n_l1)) {
            return "keep lists " + std::to_string(keep.size()) + " codes, limit is " +
                   std::to_string(config.n_l1);
        }
        for (const auto& code : keep) {
            if (candidate_codes.count(code.get<std::string>()) == 0) {
                return "code " + code.get<std::string>() + " is not among the candidates";
            }
        }
        return std::nullopt;
    };

    const StructuredReply reply = gateway.complete_structured(request, extra);

    const auto by_code = [&](const std::string& digits) -> const CandidateHeading& {
        for (const CandidateHeading& candidate : candidates) {
            if (candidate.code.digits() == digits) {
                return candidate;
            }
        }
        throw Error("stage3_l1: lost candidate " + digits);
    };

    std::vector<CandidateHeading> survivors;
    std::set<std::string> kept;
    for (const auto& code : reply.value["keep"]) {
        survivors.push_back(by_code(code.get<std::string>()));
        kept.insert(code.get<std::string>());
    }

    // Note retention: note-tagged candidates the ranker dropped come back at
    // the tail, in their retrieval order.
    std::vector<std::string> reappended;
    if (config.v7_l1_note_retention) {
        for (const CandidateHeading& candidate : candidates) {
            if (candidate.note_tagged && kept.count(candidate.code.digits()) == 0) {
                survivors.push_back(candidate);
                reappended.push_back(candidate.code.digits());
            }
        }
    }

    StageRecord record;
    record.stage = "stage3_l1";
    record.input = input;
    json survivors_json = json::array();
    for (const CandidateHeading& survivor : survivors) {
        survivors_json.push_back(survivor.to_json());
    }
    record.output = json{{"survivors", std::move(survivors_json)}, {"reappended", reappended}};
    record.calls.push_back(call_record(reply));
    return {std::move(survivors), std::move(record)};
}

// ===========================================================================
// Stage 4: L2 rank and confirmation
// ===========================================================================

StageOutcome<L2Verdict> stage4_l2(const Gateway& gateway, const PromptSet& prompts,
                                  const TariffCorpus& corpus,
                                  const std::vector<CandidateHeading>& survivors,
                                  const ProductAttributes& attrs, const PipelineConfig& config) {
    if (survivors.empty()) {
        throw Error("stage4_l2: no survivors to rank");
    }

    // The confirmation sub-step fires when notes demand it: any survivor
    // carrying a priority or exclusion clause, or — with broadened triggers —
    // any two survivors sharing a chapter.
    bool triggered = false;
    for (const CandidateHeading& survivor : survivors) {
        for (const NoteClause* clause : corpus.notes_for(survivor.code)) {
            if (clause->clause_type == ClauseType::Priority ||
                clause->clause_type == ClauseType::Exclusion) {
                triggered = true;
            }
        }
    }
    if (!triggered && config.v7_broadened_l2_triggers) {
        std::set<std::string> chapters;
        for (const CandidateHeading& survivor : survivors) {
            if (!chapters.insert(survivor.code.chapter().digits()).second) {
                triggered = true;
                break;
            }
        }
    }

    json survivors_json = json::array();
    for (const CandidateHeading& survivor : survivors) {
        survivors_json.push_back(json{{"code", survivor.code.digits()},
                                      {"text", survivor.heading_text},
                                      {"note_ids", note_ids_json(corpus, survivor.code)}});
    }
    const json input{{"attributes", attrs.to_json()},
                     {"survivors", survivors_json},
                     {"n_keep_final", config.n_keep_final},
                     {"confirmation_triggered", triggered}};

    const std::string confirmation_note =
        triggered ? "Notes apply to these candidates. Run the confirmation analysis for your "
                    "chosen heading: list pros, cons, and the applicable GIR clauses, and cite "
                    "the note clause id for every demotion."
                  : "No note conflicts detected; still report your chosen heading with any "
                    "pros, cons, and GIR clauses you relied on.";

    ChatRequest request;
    request.stage_name = "stage4_l2";
    request.system_prompt = prompts.stage("stage4_l2").system;
    request.user_prompt = prompts.render_user(
        "stage4_l2", {{"attributes", attrs_string(attrs)},
                      {"survivors", render_survivors(corpus, survivors)},
                      {"n_keep_final", std::to_string(config.n_keep_final)},
                      {"confirmation_note", confirmation_note}});
    request.schema_id = "l2_verdict.v1";
    request.canonical_input = canonical_json_string(input);

    std::set<std::string> survivor_codes;
    for (const CandidateHeading& survivor : survivors) {
        survivor_codes.insert(survivor.code.digits());
    }
    const auto extra = [&](const json& value) -> std::optional<std::string> {
        const json& keep = value["keep_final"];
        if (keep.size() > static_cast<std::size_t>(config.n_keep_final)) {
            return "keep_final lists " + std::to_string(keep.size()) + " codes, limit is " +
                   std::to_string(config.n_keep_final);
        }
        for (const auto& code : keep) {
            if (survivor_codes.count(code.get<std::string>()) == 0) {
                return "code " + code.get<std::string>() + " is not among the survivors";
            }
        }
        for (const auto& demotion : value["demotions"]) {
            if (survivor_codes.count(demotion["code"].get<std::string>()) == 0) {
                return "demoted code " + demotion["code"].get<std::string>() +
                       " is not among the survivors";
            }
            const std::string clause_id = demotion["clause_id"].get<std::string>();
            if (corpus.find_clause(clause_id) == nullptr) {
                return "demotion cites unknown clause id '" + clause_id + "'";
            }
        }
        for (const auto& gir : value["confirmation"]["gir_clauses"]) {
            auto id = gir_from_string(gir.get<std::string>());
            if (!id || corpus.find_gir(*id) == nullptr) {
                return "unknown GIR clause '" + gir.get<std::string>() + "'";
            }
        }
        return std::nullopt;
    };

    const StructuredReply reply = gateway.complete_structured(request, extra);

    const auto by_code = [&](const std::string& digits) -> const CandidateHeading& {
        for (const CandidateHeading& survivor : survivors) {
            if (survivor.code.digits() == digits) {
                return survivor;
            }
        }
        throw Error("stage4_l2: lost survivor " + digits);
    };

    L2Verdict verdict;
    verdict.confirmation_triggered = triggered;
    for (const auto& code : reply.value["keep_final"]) {
        verdict.keep_final.push_back(by_code(code.get<std::string>()));
    }
    for (const auto& demotion : reply.value["demotions"]) {
        verdict.demotions.push_back(
            Demotion{HsCode::from_digits(demotion["code"].get<std::string>()),
                     demotion["clause_id"].get<std::string>()});
    }
    const json& confirmation = reply.value["confirmation"];
    verdict.confirmation.chosen = HsCode::from_digits(confirmation["chosen"].get<std::string>());
    verdict.confirmation.pros = confirmation["pros"].get<std::vector<std::string>>();
    verdict.confirmation.cons = confirmation["cons"].get<std::vector<std::string>>();
    verdict.confirmation.gir_clauses = gir_list_from_json(confirmation["gir_clauses"]);

    StageRecord record;
    record.stage = "stage4_l2";
    record.input = input;
    record.output = verdict.to_json();
    record.calls.push_back(call_record(reply));
    return {std::move(verdict), std::move(record)};
}

// ===========================================================================
// Stage 5: subheading resolution
// ===========================================================================

StageOutcome<SubheadingResolution> stage5_subheading(const Gateway& gateway,
                                                     const PromptSet& prompts,
                                                     const TariffCorpus& corpus,
                                                     const HsCode& chosen,
                                                     const std::string& description,
                                                     const ProductAttributes& attrs) {
    if (chosen.level() != CodeLevel::Heading) {
        throw Error("stage5_subheading: " + chosen.digits() + " is not a heading");
    }
    const TariffNode& heading = corpus.node(chosen);
    bool has_subheading = false;
    for (const TariffNode* child : corpus.children_of(chosen)) {
        if (child->code.level() == CodeLevel::Subheading) {
            has_subheading = true;
            break;
        }
    }
    if (!has_subheading) {
        throw Error("stage5_subheading: heading " + chosen.digits() +
                    " has no subheadings in the corpus");
    }

    const json input{{"chosen", chosen.digits()},
                     {"description", description},
                     {"attributes", attrs.to_json()}};

    ChatRequest request;
    request.stage_name = "stage5_subheading";
    request.system_prompt = prompts.stage("stage5_subheading").system;
    request.user_prompt = prompts.render_user(
        "stage5_subheading", {{"chosen", chosen.display()},
                              {"chosen_text", heading.text},
                              {"children", render_children(corpus, chosen)},
                              {"description", description},
                              {"attributes", attrs_string(attrs)}});
    request.schema_id = "subheading.v1";
    request.canonical_input = canonical_json_string(input);

    const auto extra = [&](const json& value) -> std::optional<std::string> {
        const std::string six = value["six_digit"].get<std::string>();
        const HsCode six_code = HsCode::from_digits(six);
        if (!corpus.contains(six_code)) {
            return "subheading " + six + " does not exist in the corpus";
        }
        if (!chosen.is_ancestor_of(six_code)) {
            return "subheading " + six + " does not descend from heading " + chosen.digits();
        }
        if (value.contains("eight_digit") && !value["eight_digit"].is_null()) {
            const std::string eight = value["eight_digit"].get<std::string>();
            if (!corpus.contains(HsCode::from_digits(eight))) {
                return "national code " + eight + " does not exist in the corpus";
            }
        }
        for (const auto& gir : value["gir_clauses"]) {
            auto id = gir_from_string(gir.get<std::string>());
            if (!id || corpus.find_gir(*id) == nullptr) {
                return "unknown GIR clause '" + gir.get<std::string>() + "'";
            }
        }
        return std::nullopt;
    };

    const StructuredReply reply = gateway.complete_structured(request, extra);

    SubheadingResolution resolution;
    resolution.six_digit = HsCode::from_digits(reply.value["six_digit"].get<std::string>());
    if (reply.value.contains("eight_digit") && !reply.value["eight_digit"].is_null()) {
        resolution.eight_digit =
            HsCode::from_digits(reply.value["eight_digit"].get<std::string>());
    }
    resolution.ambiguous = reply.value["ambiguous"].get<bool>();
    resolution.gir_clauses = gir_list_from_json(reply.value["gir_clauses"]);

    StageRecord record;
    record.stage = "stage5_subheading";
    record.input = input;
    record.output = resolution.to_json();
    record.calls.push_back(call_record(reply));
    return {std::move(resolution), std::move(record)};
}

// ===========================================================================
// Stage 6: final scoring
// ===========================================================================

StageOutcome<FinalDecision> stage6_score(
    const Gateway& gateway, const PromptSet& prompts, const TariffCorpus& corpus,
    const L2Verdict& verdict, const std::map<std::string, SubheadingResolution>& resolutions,
    const ProductAttributes& attrs, const PipelineConfig& config) {
    if (verdict.keep_final.empty()) {
        throw Error("stage6_score: empty keep_final");
    }

    struct PoolEntry {
        const CandidateHeading* heading;
        const SubheadingResolution* resolution;
    };
    std::vector<PoolEntry> pool;
    for (const CandidateHeading& kept : verdict.keep_final) {
        auto it = resolutions.find(kept.code.digits());
        if (it == resolutions.end()) {
            throw Error("stage6_score: no subheading resolution for " + kept.code.digits());
        }
        pool.push_back(PoolEntry{&kept, &it->second});
    }

    // Self-exclusion: drop a candidate when an exclusion clause of its own
    // chapter has a keyword hit against the extracted attributes.
    json self_excluded = json::array();
    if (config.v7_stage6_self_exclusion) {
        const std::string attr_text = attrs.joined_lower();
        std::vector<PoolEntry> surviving;
        for (const PoolEntry& entry : pool) {
            std::optional<std::string> hit_clause;
            std::set<std::string> seen_clauses;
            for (const auto& [clause_id, target] : corpus.exclusion_redirects(entry.heading->code)) {
                (void)target;
                if (!seen_clauses.insert(clause_id).second || hit_clause) {
                    continue;
                }
                const NoteClause* clause = corpus.find_clause(clause_id);
                for (const std::string& keyword : clause->keywords) {
                    if (!keyword.empty() &&
                        attr_text.find(ascii_lower(keyword)) != std::string::npos) {
                        hit_clause = clause_id;
                        break;
                    }
                }
            }
            if (hit_clause) {
                self_excluded.push_back(json{{"code", entry.heading->code.digits()},
                                             {"clause_id", *hit_clause}});
            } else {
                surviving.push_back(entry);
            }
        }
        pool = std::move(surviving);
    }
    if (pool.empty()) {
        throw Error("stage6_score: every candidate was self-excluded");
    }

    json pool_json = json::array();
    std::set<std::string> pool_codes;
    for (const PoolEntry& entry : pool) {
        json e;
        e["code"] = entry.resolution->resolved().digits();
        e["heading"] = entry.heading->code.digits();
        e["six_digit"] = entry.resolution->six_digit.digits();
        if (entry.resolution->eight_digit) {
            e["eight_digit"] = entry.resolution->eight_digit->digits();
        }
        e["ambiguous"] = entry.resolution->ambiguous;
        e["gir_clauses"] = gir_list_to_json(entry.resolution->gir_clauses);
        pool_json.push_back(std::move(e));
        pool_codes.insert(entry.resolution->resolved().digits());
    }
    const json input{{"attributes", attrs.to_json()},
                     {"candidates", pool_json},
                     {"confirmation",
                      json{{"chosen", verdict.confirmation.chosen.digits()},
                           {"pros", verdict.confirmation.pros},
                           {"cons", verdict.confirmation.cons},
                           {"gir_clauses", gir_list_to_json(verdict.confirmation.gir_clauses)}}},
                     {"self_excluded", self_excluded}};

    // Prompt context: each candidate with its heading/subheading texts and
    // notes, the stage-4 confirmation, and the GIR rule texts.
    std::ostringstream context;
    for (const PoolEntry& entry : pool) {
        const HsCode& resolved = entry.resolution->resolved();
        context << resolved.display() << " (heading " << entry.heading->code.display() << " — "
                << entry.heading->heading_text << ")\n"
                << "  subheading " << entry.resolution->six_digit.display() << " — "
                << corpus.node(entry.resolution->six_digit).text << '\n';
        if (entry.resolution->eight_digit) {
            context << "  national " << entry.resolution->eight_digit->display() << " — "
                    << corpus.node(*entry.resolution->eight_digit).text << '\n';
        }
        context << render_notes(corpus, entry.heading->code);
    }
    context << "Stage-4 confirmation: chosen " << verdict.confirmation.chosen.display() << '\n';
    for (const std::string& pro : verdict.confirmation.pros) {
        context << "  pro: " << pro << '\n';
    }
    for (const std::string& con : verdict.confirmation.cons) {
        context << "  con: " << con << '\n';
    }

    ChatRequest request;
    request.stage_name = "stage6_score";
    request.system_prompt = prompts.stage("stage6_score").system;
    request.user_prompt =
        prompts.render_user("stage6_score", {{"attributes", attrs_string(attrs)},
                                             {"candidates", context.str()},
                                             {"gir_rules", render_gir_rules(corpus)}});
    request.schema_id = "final.v1";
    request.canonical_input = canonical_json_string(input);

    const auto extra = [&](const json& value) -> std::optional<std::string> {
        for (const auto& entry : value["top3"]) {
            const std::string code = entry["code"].get<std::string>();
            if (pool_codes.count(code) == 0) {
                return "code " + code + " is not among the resolved candidates";
            }
            for (const auto& gir : entry["gir_clauses"]) {
                auto id = gir_from_string(gir.get<std::string>());
                if (!id || corpus.find_gir(*id) == nullptr) {
                    return "unknown GIR clause '" + gir.get<std::string>() + "'";
                }
            }
            for (const auto& cit : entry["citations"]) {
                const std::string clause_id = cit["clause_id"].get<std::string>();
                const std::string* text = citable_text(corpus, clause_id);
                if (text == nullptr) {
                    return "citation names unknown clause id '" + clause_id + "'";
                }
                const std::string quoted = cit["quoted_text"].get<std::string>();
                if (text->find(quoted) == std::string::npos) {
                    return "citation of '" + clause_id + "' is not a verbatim quote";
                }
            }
        }
        return std::nullopt;
    };

    const StructuredReply reply = gateway.complete_structured(request, extra);

    FinalDecision decision;
    struct PendingSpan {
        std::size_t candidate;
        std::size_t citation;
    };
    std::vector<PendingSpan> pending;
    for (const auto& entry : reply.value["top3"]) {
        ScoredCandidate candidate;
        candidate.code = HsCode::from_digits(entry["code"].get<std::string>());
        candidate.confidence = std::clamp(entry["confidence"].get<double>(), 0.0, 1.0);
        candidate.pros = entry["pros"].get<std::vector<std::string>>();
        candidate.cons = entry["cons"].get<std::vector<std::string>>();
        candidate.gir_clauses = gir_list_from_json(entry["gir_clauses"]);
        for (const auto& cit : entry["citations"]) {
            Citation citation;
            citation.clause_id = cit["clause_id"].get<std::string>();
            citation.quoted_text = cit["quoted_text"].get<std::string>();
            if (cit.contains("span") && !cit["span"].is_null()) {
                citation.span_start = cit["span"][0].get<std::size_t>();
                citation.span_end = cit["span"][1].get<std::size_t>();
            } else {
                pending.push_back(PendingSpan{decision.top3.size(), candidate.citations.size()});
                citation.span_start = 0;
                citation.span_end = citation.quoted_text.size();
            }
            candidate.citations.push_back(std::move(citation));
        }
        decision.top3.push_back(std::move(candidate));
    }

    StageRecord record;
    record.stage = "stage6_score";
    record.input = input;
    record.calls.push_back(call_record(reply));

    // Load-bearing spans the reply left out are produced by one post-
    // processing call; if no scripted response exists for it, the full
    // quote stands in as the span.
    bool span_fallback = false;
    if (!pending.empty()) {
        json citations_json = json::array();
        for (const PendingSpan& p : pending) {
            const Citation& citation = decision.top3[p.candidate].citations[p.citation];
            citations_json.push_back(json{{"clause_id", citation.clause_id},
                                          {"quoted_text", citation.quoted_text}});
        }
        const json span_input{{"citations", citations_json}};

        std::ostringstream listing;
        for (const auto& c : citations_json) {
            listing << c["clause_id"].get<std::string>() << ": "
                    << c["quoted_text"].get<std::string>() << '\n';
        }
        ChatRequest span_request;
        span_request.stage_name = "stage6_spans";
        span_request.system_prompt = prompts.stage("stage6_spans").system;
        span_request.user_prompt =
            prompts.render_user("stage6_spans", {{"citations", listing.str()}});
        span_request.schema_id = "spans.v1";
        span_request.canonical_input = canonical_json_string(span_input);

        const auto span_extra = [&](const json& value) -> std::optional<std::string> {
            const json& spans = value["spans"];
            if (spans.size() != pending.size()) {
                return "expected " + std::to_string(pending.size()) + " spans, got " +
                       std::to_string(spans.size());
            }
            for (std::size_t i = 0; i < pending.size(); ++i) {
                const Citation& citation =
                    decision.top3[pending[i].candidate].citations[pending[i].citation];
                if (spans[i]["clause_id"].get<std::string>() != citation.clause_id) {
                    return "span " + std::to_string(i) + " names the wrong clause";
                }
                if (spans[i]["end"].get<std::size_t>() > citation.quoted_text.size()) {
                    return "span " + std::to_string(i) + " exceeds the quoted text";
                }
            }
            return std::nullopt;
        };

        try {
            const StructuredReply span_reply =
                gateway.complete_structured(span_request, span_extra);
            const json& spans = span_reply.value["spans"];
            for (std::size_t i = 0; i < pending.size(); ++i) {
                Citation& citation =
                    decision.top3[pending[i].candidate].citations[pending[i].citation];
                citation.span_start = spans[i]["start"].get<std::size_t>();
                citation.span_end = spans[i]["end"].get<std::size_t>();
            }
            record.calls.push_back(call_record(span_reply));
        } catch (const FixtureMissingError&) {
            span_fallback = true; // full-quote spans already in place
        }
    }

    // Confidence orders the final list; ties keep the model's order.
    std::stable_sort(decision.top3.begin(), decision.top3.end(),
                     [](const ScoredCandidate& a, const ScoredCandidate& b) {
                         return a.confidence > b.confidence;
                     });

    record.output = decision.to_json();
    record.output["span_fallback"] = span_fallback;
    return {std::move(decision), std::move(record)};
}

// ===========================================================================
// Citation verification
// ===========================================================================

json CitationCheck::to_json() const {
    json j;
    j["clause_id"] = clause_id;
    j["grounded"] = grounded;
    if (error) {
        j["error"] = *error;
    }
    return j;
}

json CitationReport::to_json() const {
    json checks_json = json::array();
    for (const CitationCheck& check : checks) {
        checks_json.push_back(check.to_json());
    }
    return json{{"checks", std::move(checks_json)},
                {"grounded", grounded_count},
                {"ungrounded", ungrounded_count}};
}

CitationReport verify_citations(const TariffCorpus& corpus, const FinalDecision& decision) {
    CitationReport report;
    for (const ScoredCandidate& candidate : decision.top3) {
        for (const Citation& citation : candidate.citations) {
            CitationCheck check;
            check.clause_id = citation.clause_id;
            const std::string* text = citable_text(corpus, citation.clause_id);
            if (text == nullptr) {
                check.grounded = false;
                check.error = "unknown clause id '" + citation.clause_id + "'";
            } else {
                const bool quote_ok =
                    text->find(citation.quoted_text) != std::string::npos &&
                    !citation.quoted_text.empty();
                const bool span_ok = citation.span_start < citation.span_end &&
                                     citation.span_end <= citation.quoted_text.size();
                check.grounded = quote_ok && span_ok;
            }
            if (check.grounded) {
                ++report.grounded_count;
            } else {
                ++report.ungrounded_count;
            }
            report.checks.push_back(std::move(check));
        }
    }
    return report;
}

// ===========================================================================
// Engine
// ===========================================================================

RetrievalIndices build_indices(const TariffCorpus& corpus, const VectorSet& vectors,
                               const PipelineConfig& config) {
    RetrievalIndices indices;
    indices.docs = documents_from_corpus(corpus);
    indices.bm25 = build_bm25(indices.docs, config.bm25_k1, config.bm25_b);
    indices.dense = dense_index_from_vectors(vectors, corpus);
    return indices;
}

Engine::Engine(TariffCorpus corpus, Gateway gateway, PromptSet prompts, SynonymTable synonyms,
               VectorSet vectors, PipelineConfig config)
    : corpus_(std::move(corpus)), gateway_(std::move(gateway)), prompts_(std::move(prompts)),
      synonyms_(std::move(synonyms)), embeddings_(VectorSet{}), config_(config) {
    config_.validate();
    indices_ = build_indices(corpus_, vectors, config_);
    embeddings_ = FileEmbeddings(std::move(vectors));
}

std::pair<FinalDecision, PipelineTrace> Engine::classify(const std::string& description,
                                                         const std::string& query_id) const {
    PipelineTrace trace;
    trace.query_id = query_id;
    trace.corpus_version = corpus_.version();
    trace.config_snapshot = config_.to_json();

    using Clock = std::chrono::steady_clock;
    const auto record_time = [&](StageRecord& record, Clock::time_point start) {
        if (config_.measure_wall_time) {
            record.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 Clock::now() - start)
                                 .count();
        } else {
            record.wall_ms = 0;
        }
    };

    if (description.empty()) {
        throw ClassifyError("stage1_extract", std::move(trace),
                            "stage1_extract: empty product description");
    }

    ProductAttributes attrs;
    try {
        const auto start = Clock::now();
        auto outcome = stage1_extract(gateway_, prompts_, description);
        record_time(outcome.record, start);
        trace.stages.push_back(std::move(outcome.record));
        attrs = std::move(outcome.value);
    } catch (const Error& e) {
        throw ClassifyError("stage1_extract", std::move(trace), e.what());
    }

    std::vector<CandidateHeading> candidates;
    try {
        const auto start = Clock::now();
        auto outcome = stage2_retrieve(corpus_, indices_, &embeddings_, description, attrs,
                                       synonyms_, config_);
        record_time(outcome.record, start);
        trace.stages.push_back(std::move(outcome.record));
        candidates = std::move(outcome.value);
    } catch (const Error& e) {
        throw ClassifyError("stage2_retrieve", std::move(trace), e.what());
    }

    if (candidates.empty()) {
        throw ClassifyError("stage3_l1", std::move(trace),
                            "stage3_l1: retrieval produced no candidates");
    }

    std::vector<CandidateHeading> survivors;
    try {
        const auto start = Clock::now();
        auto outcome = stage3_l1(gateway_, prompts_, candidates, attrs, config_);
        record_time(outcome.record, start);
        trace.stages.push_back(std::move(outcome.record));
        survivors = std::move(outcome.value);
    } catch (const Error& e) {
        throw ClassifyError("stage3_l1", std::move(trace), e.what());
    }

    L2Verdict verdict;
    try {
        const auto start = Clock::now();
        auto outcome = stage4_l2(gateway_, prompts_, corpus_, survivors, attrs, config_);
        record_time(outcome.record, start);
        trace.stages.push_back(std::move(outcome.record));
        verdict = std::move(outcome.value);
    } catch (const Error& e) {
        throw ClassifyError("stage4_l2", std::move(trace), e.what());
    }

    std::map<std::string, SubheadingResolution> resolutions;
    try {
        const auto start = Clock::now();
        StageRecord record;
        record.stage = "stage5_subheading";
        json kept_json = json::array();
        json calls_input = json::array();
        json resolutions_json;
        for (const CandidateHeading& kept : verdict.keep_final) {
            kept_json.push_back(kept.code.digits());
            auto outcome = stage5_subheading(gateway_, prompts_, corpus_, kept.code, description,
                                             attrs);
            calls_input.push_back(outcome.record.input);
            resolutions_json[kept.code.digits()] = outcome.record.output;
            for (CallRecord& call : outcome.record.calls) {
                record.calls.push_back(std::move(call));
            }
            resolutions.emplace(kept.code.digits(), std::move(outcome.value));
        }
        record.input = json{{"headings", std::move(kept_json)},
                            {"description", description},
                            {"attributes", attrs.to_json()},
                            {"calls_input", std::move(calls_input)}};
        record.output = json{{"resolutions", std::move(resolutions_json)}};
        record_time(record, start);
        trace.stages.push_back(std::move(record));
    } catch (const Error& e) {
        throw ClassifyError("stage5_subheading", std::move(trace), e.what());
    }

    FinalDecision decision;
    try {
        const auto start = Clock::now();
        auto outcome =
            stage6_score(gateway_, prompts_, corpus_, verdict, resolutions, attrs, config_);
        record_time(outcome.record, start);
        trace.stages.push_back(std::move(outcome.record));
        decision = std::move(outcome.value);
    } catch (const Error& e) {
        throw ClassifyError("stage6_score", std::move(trace), e.what());
    }

    return {std::move(decision), std::move(trace)};
}

} // namespace hstc
