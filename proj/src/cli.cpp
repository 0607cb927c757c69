#include "hstc/cli.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "hstc/canonical.hpp"
#include "hstc/corpus.hpp"
#include "hstc/errors.hpp"
#include "hstc/evaluation.hpp"

namespace hstc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ===========================================================================
// Configuration
// ===========================================================================

namespace {

std::string trim(const std::string& s) {
    const std::size_t begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) {
        return "";
    }
    const std::size_t end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

int parse_int(const std::string& value, const std::string& key) {
    try {
        std::size_t used = 0;
        const int parsed = std::stoi(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError("'" + key + "' needs an integer, got '" + value + "'");
    }
}

double parse_double(const std::string& value, const std::string& key) {
    try {
        std::size_t used = 0;
        const double parsed = std::stod(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError("'" + key + "' needs a number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "true" || value == "1" || value == "on" || value == "yes") {
        return true;
    }
    if (value == "false" || value == "0" || value == "off" || value == "no") {
        return false;
    }
    throw ConfigError("'" + key + "' needs a boolean, got '" + value + "'");
}

void set_value(CliConfig& config, const std::string& section, const std::string& key,
               const std::string& value) {
    const std::string full = section + "." + key;
    if (section == "paths") {
        if (key == "corpus") {
            config.corpus_path = value;
        } else if (key == "vectors") {
            config.vectors_path = value;
        } else if (key == "synonyms") {
            config.synonyms_path = value;
        } else if (key == "prompts") {
            config.prompts_dir = value;
        } else if (key == "output_dir") {
            config.output_dir = value;
        } else {
            throw ConfigError("unknown config key '" + full + "'");
        }
        return;
    }
    if (section == "backend") {
        if (key == "kind") {
            if (value == "scripted") {
                config.backend.kind = BackendKind::Scripted;
            } else if (value == "http") {
                config.backend.kind = BackendKind::Http;
            } else {
                throw ConfigError("backend.kind must be 'scripted' or 'http'");
            }
        } else if (key == "endpoint") {
            config.backend.endpoint = value;
        } else if (key == "model_name") {
            config.backend.model_name = value;
        } else if (key == "auth_env_var") {
            config.backend.auth_env_var = value;
        } else if (key == "timeout_ms") {
            config.backend.timeout_ms = parse_int(value, full);
        } else if (key == "max_repair_retries") {
            config.backend.max_repair_retries = parse_int(value, full);
        } else if (key == "fixture_path") {
            config.backend.fixture_path = value;
        } else if (key == "strict_fixtures") {
            config.backend.strict_fixtures = parse_bool(value, full);
        } else {
            throw ConfigError("unknown config key '" + full + "'");
        }
        return;
    }
    if (section == "pipeline") {
        if (key == "n_retrieve") {
            config.pipeline.n_retrieve = parse_int(value, full);
        } else if (key == "n_l1") {
            config.pipeline.n_l1 = parse_int(value, full);
        } else if (key == "n_keep_final") {
            config.pipeline.n_keep_final = parse_int(value, full);
        } else if (key == "v7_recall_vocabulary") {
            config.pipeline.v7_recall_vocabulary = parse_bool(value, full);
        } else if (key == "v7_l1_note_retention") {
            config.pipeline.v7_l1_note_retention = parse_bool(value, full);
        } else if (key == "v7_stage6_self_exclusion") {
            config.pipeline.v7_stage6_self_exclusion = parse_bool(value, full);
        } else if (key == "v7_broadened_l2_triggers") {
            config.pipeline.v7_broadened_l2_triggers = parse_bool(value, full);
        } else if (key == "rrf_k") {
            config.pipeline.rrf_k = parse_double(value, full);
        } else if (key == "bm25_k1") {
            config.pipeline.bm25_k1 = parse_double(value, full);
        } else if (key == "bm25_b") {
            config.pipeline.bm25_b = parse_double(value, full);
        } else if (key == "measure_wall_time") {
            config.pipeline.measure_wall_time = parse_bool(value, full);
        } else {
            throw ConfigError("unknown config key '" + full + "'");
        }
        return;
    }
    throw ConfigError("unknown config section '" + section + "'");
}

} // namespace

CliConfig load_cli_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path);
    }
    CliConfig config;
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string text = trim(line);
        if (text.empty() || text[0] == '#' || text[0] == ';') {
            continue;
        }
        if (text.front() == '[' && text.back() == ']') {
            section = trim(text.substr(1, text.size() - 2));
            if (section != "paths" && section != "backend" && section != "pipeline") {
                throw ConfigError(path + ":" + std::to_string(line_no) +
                                  ": unknown config section '" + section + "'");
            }
            continue;
        }
        const std::size_t eq = text.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + text + "'");
        }
        if (section.empty()) {
            throw ConfigError(path + ":" + std::to_string(line_no) +
                              ": key outside of any [section]");
        }
        try {
            set_value(config, section, trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return config;
}

void apply_set(CliConfig& config, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("--set needs section.key=value, got '" + assignment + "'");
    }
    const std::string path = trim(assignment.substr(0, eq));
    const std::size_t dot = path.find('.');
    if (dot == std::string::npos) {
        throw ConfigError("--set needs section.key=value, got '" + assignment + "'");
    }
    set_value(config, path.substr(0, dot), path.substr(dot + 1), trim(assignment.substr(eq + 1)));
}

// ===========================================================================
// Shared command plumbing
// ===========================================================================

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
};

void add_common(CLI::App* sub, CommonOpts& opts) {
    sub->add_option("--config", opts.config_path, "config file (sectioned key=value)");
    sub->add_option("--set", opts.sets, "override one config value: section.key=value");
}

CliConfig resolve_config(const CommonOpts& opts) {
    CliConfig config;
    if (!opts.config_path.empty()) {
        config = load_cli_config(opts.config_path);
    }
    for (const std::string& assignment : opts.sets) {
        apply_set(config, assignment);
    }
    return config;
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) {
        throw ConfigError(what + " path is not configured");
    }
    if (!fs::exists(path)) {
        throw ConfigError(what + " does not exist: " + path);
    }
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path);
    }
    out << content;
}

void write_machine(const CliConfig& config, const std::string& name, const json& value) {
    fs::create_directories(config.output_dir);
    write_text_file(config.output_dir + "/" + name, canonical_json_string(value) + "\n");
}

std::string sanitize_id(const std::string& id) {
    std::string out;
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
        out += ok ? c : '_';
    }
    return out;
}

TariffCorpus load_corpus_checked(const CliConfig& config) {
    require_file(config.corpus_path, "corpus file");
    return parse_corpus(config.corpus_path);
}

Engine make_engine(const CliConfig& config) {
    TariffCorpus corpus = load_corpus_checked(config);
    require_file(config.prompts_dir, "prompts directory");
    PromptSet prompts = PromptSet::load(config.prompts_dir);
    SynonymTable synonyms;
    if (!config.synonyms_path.empty()) {
        require_file(config.synonyms_path, "synonym table");
        synonyms = SynonymTable::load(config.synonyms_path);
    }
    VectorSet vectors;
    if (!config.vectors_path.empty()) {
        require_file(config.vectors_path, "vectors file");
        vectors = load_vectors(config.vectors_path);
    }
    if (config.backend.kind == BackendKind::Scripted) {
        require_file(config.backend.fixture_path, "fixture file");
    }
    Gateway gateway = Gateway::from_config(config.backend);
    return Engine(std::move(corpus), std::move(gateway), std::move(prompts), std::move(synonyms),
                  std::move(vectors), config.pipeline);
}

std::string format_confidence(double value) {
    return json(value).dump();
}

void print_decision(std::ostream& out, const TariffCorpus& corpus,
                    const FinalDecision& decision) {
    for (std::size_t i = 0; i < decision.top3.size(); ++i) {
        const ScoredCandidate& candidate = decision.top3[i];
        out << "top-" << (i + 1) << ": " << candidate.code.display() << " (confidence "
            << format_confidence(candidate.confidence) << ")\n";
        if (!candidate.gir_clauses.empty()) {
            out << "  gir:";
            for (GirId id : candidate.gir_clauses) {
                out << ' ' << to_string(id);
            }
            out << '\n';
        }
        for (const std::string& pro : candidate.pros) {
            out << "  pro: " << pro << '\n';
        }
        for (const std::string& con : candidate.cons) {
            out << "  con: " << con << '\n';
        }
        for (const Citation& citation : candidate.citations) {
            out << "  cite " << citation.clause_id << ": \"" << citation.quoted_text << "\"";
            const std::string load_bearing = citation.quoted_text.substr(
                citation.span_start, citation.span_end - citation.span_start);
            if (load_bearing != citation.quoted_text) {
                out << " [load-bearing: \"" << load_bearing << "\"]";
            }
            out << '\n';
        }
    }
    (void)corpus;
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

int run_ingest(const CliConfig& config, std::ostream& out) {
    const TariffCorpus corpus = load_corpus_checked(config);
    int chapters = 0;
    int headings = 0;
    int subheadings = 0;
    int national = 0;
    for (const HsCode& code : corpus.codes()) {
        switch (code.level()) {
        case CodeLevel::Chapter:
            ++chapters;
            break;
        case CodeLevel::Heading:
            ++headings;
            break;
        case CodeLevel::Subheading:
            ++subheadings;
            break;
        case CodeLevel::National:
            ++national;
            break;
        }
    }
    int inclusion = 0;
    int exclusion = 0;
    int priority = 0;
    for (const std::string& id : corpus.clause_ids()) {
        switch (corpus.find_clause(id)->clause_type) {
        case ClauseType::Inclusion:
            ++inclusion;
            break;
        case ClauseType::Exclusion:
            ++exclusion;
            break;
        case ClauseType::Priority:
            ++priority;
            break;
        }
    }
    out << "corpus version: " << corpus.version() << '\n'
        << "nodes: " << corpus.codes().size() << " (chapters " << chapters << ", headings "
        << headings << ", subheadings " << subheadings << ", national " << national << ")\n"
        << "note clauses: " << corpus.clause_ids().size() << " (inclusion " << inclusion
        << ", exclusion " << exclusion << ", priority " << priority << ")\n"
        << "gir rules: " << corpus.gir().size() << '\n';

    write_machine(config, "ingest.json",
                  json{{"version", corpus.version()},
                       {"nodes",
                        json{{"total", corpus.codes().size()},
                             {"chapters", chapters},
                             {"headings", headings},
                             {"subheadings", subheadings},
                             {"national", national}}},
                       {"clauses",
                        json{{"total", corpus.clause_ids().size()},
                             {"inclusion", inclusion},
                             {"exclusion", exclusion},
                             {"priority", priority}}},
                       {"gir_rules", corpus.gir().size()}});
    return 0;
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

int run_classify(const CliConfig& config, const std::string& description,
                 const std::string& query_id, std::ostream& out) {
    const Engine engine = make_engine(config);
    fs::create_directories(config.output_dir);
    const std::string trace_name = "trace-" + sanitize_id(query_id) + ".json";
    try {
        auto [decision, trace] = engine.classify(description, query_id);
        write_text_file(config.output_dir + "/" + trace_name, trace.serialize());
        write_machine(config, "decision-" + sanitize_id(query_id) + ".json", decision.to_json());
        out << "query " << query_id << '\n';
        print_decision(out, engine.corpus(), decision);
        out << "trace: " << config.output_dir << "/" << trace_name << '\n';
        return 0;
    } catch (const ClassifyError& e) {
        // Keep the partial trace inspectable: stages before the failure.
        write_text_file(config.output_dir + "/" + trace_name, e.partial_trace.serialize());
        throw;
    }
}

// ---------------------------------------------------------------------------
// batch
// ---------------------------------------------------------------------------

int run_batch(const CliConfig& config, const std::string& gold_path, int jobs,
              std::ostream& out) {
    require_file(gold_path, "gold file");
    const std::vector<GoldRecord> golds = load_gold(gold_path);
    if (golds.empty()) {
        throw EvalError("gold file has no records: " + gold_path);
    }
    const Engine engine = make_engine(config);

    struct Slot {
        std::optional<std::pair<FinalDecision, PipelineTrace>> result;
        std::exception_ptr error;
    };
    std::vector<Slot> slots(golds.size());
    std::atomic<std::size_t> cursor{0};
    const int worker_count = std::max(1, std::min<int>(jobs, static_cast<int>(golds.size())));

    const auto worker = [&] {
        while (true) {
            const std::size_t index = cursor.fetch_add(1);
            if (index >= golds.size()) {
                return;
            }
            try {
                slots[index].result =
                    engine.classify(golds[index].description, golds[index].query_id);
            } catch (...) {
                slots[index].error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(worker_count));
    for (int i = 0; i < worker_count; ++i) {
        workers.emplace_back(worker);
    }
    for (std::thread& thread : workers) {
        thread.join();
    }

    // Fail on the earliest input with an error, deterministically.
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].error) {
            std::rethrow_exception(slots[i].error);
        }
    }

    fs::create_directories(config.output_dir + "/traces");
    std::ostringstream predictions;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        const auto& [decision, trace] = *slots[i].result;
        const std::string trace_rel = "traces/" + sanitize_id(golds[i].query_id) + ".json";
        write_text_file(config.output_dir + "/" + trace_rel, trace.serialize());
        PredictionRecord pred;
        pred.query_id = golds[i].query_id;
        for (const ScoredCandidate& candidate : decision.top3) {
            pred.top3.push_back(candidate.code);
        }
        pred.trace_path = trace_rel;
        predictions << canonical_json_string(pred.to_json()) << '\n';
    }
    write_text_file(config.output_dir + "/predictions.jsonl", predictions.str());

    out << "classified " << golds.size() << " queries\n"
        << "predictions: " << config.output_dir << "/predictions.jsonl\n"
        << "traces: " << config.output_dir << "/traces/\n";
    write_machine(config, "batch.json",
                  json{{"queries", golds.size()},
                       {"predictions", config.output_dir + "/predictions.jsonl"},
                       {"traces_dir", config.output_dir + "/traces"}});
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate / agree
// ---------------------------------------------------------------------------

int run_evaluate(const CliConfig& config, const std::string& preds_path,
                 const std::string& gold_path, std::ostream& out) {
    require_file(preds_path, "predictions file");
    require_file(gold_path, "gold file");
    const EvalReport report = evaluate(load_predictions(preds_path), load_gold(gold_path));
    out << report.render();
    write_machine(config, "evaluate.json", report.to_json());
    return 0;
}

int run_agree(const CliConfig& config, const std::string& path_a, const std::string& path_b,
              std::ostream& out) {
    require_file(path_a, "predictions file");
    require_file(path_b, "predictions file");
    const std::vector<PredictionRecord> run_a = load_predictions(path_a);
    const std::vector<PredictionRecord> run_b = load_predictions(path_b);
    const AgreementResult at4 = agreement(run_a, run_b, 4);
    const AgreementResult at6 = agreement(run_a, run_b, 6);
    out << "top-1 agreement, 4-digit: " << at4.render() << '\n'
        << "top-1 agreement, 6-digit: " << at6.render() << '\n';
    write_machine(config, "agree.json",
                  json{{"four_digit", json{{"count", at4.count},
                                           {"total", at4.total},
                                           {"percent", at4.percent.str()}}},
                       {"six_digit", json{{"count", at6.count},
                                          {"total", at6.total},
                                          {"percent", at6.percent.str()}}}});
    return 0;
}

// ---------------------------------------------------------------------------
// attribute
// ---------------------------------------------------------------------------

int run_attribute(const CliConfig& config, const std::string& traces_dir,
                  const std::string& gold_path, std::ostream& out) {
    require_file(gold_path, "gold file");
    if (traces_dir.empty() || !fs::is_directory(traces_dir)) {
        throw ConfigError("traces directory does not exist: " + traces_dir);
    }
    const std::vector<GoldRecord> golds = load_gold(gold_path);

    std::vector<std::pair<TraceView, HsCode>> errors;
    int correct = 0;
    for (const GoldRecord& gold : golds) {
        if (gold.gold_code.size() < 4) {
            throw EvalError("gold code for '" + gold.query_id +
                            "' is too short for four-digit attribution");
        }
        const std::string trace_path =
            traces_dir + "/" + sanitize_id(gold.query_id) + ".json";
        std::ifstream in(trace_path);
        if (!in) {
            throw EvalError("missing trace for query '" + gold.query_id + "': " + trace_path);
        }
        json trace_json;
        try {
            trace_json = json::parse(in);
        } catch (const json::parse_error& e) {
            throw EvalError(trace_path + ": " + e.what());
        }
        TraceView view = TraceView::from_trace_json(trace_json);
        const HsCode gold4 = gold.gold_code.truncated(4);
        if (view.final_top1.size() >= 4 && view.final_top1.compare(0, 4, gold4.digits()) == 0) {
            ++correct;
            continue;
        }
        errors.emplace_back(std::move(view), gold4);
    }
    const AttributionTable table = attribution_table(errors);
    out << "queries: " << golds.size() << ", four-digit top-1 errors: " << table.total << '\n'
        << table.render();
    json machine = table.to_json();
    machine["queries"] = golds.size();
    machine["correct"] = correct;
    write_machine(config, "attribute.json", machine);
    return 0;
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

int run_audit(const CliConfig& config, const std::string& audit_path, int base_correct,
              int total, std::ostream& out) {
    require_file(audit_path, "audit file");
    const std::vector<AuditRecord> records = load_audit(audit_path);
    const AuditShares shares = audit_shares(records);
    out << shares.render();

    json machine = json{{"shares", shares.to_json()}};
    const int n = static_cast<int>(records.size());
    if (base_correct < 0 && total >= 0) {
        base_correct = total - n;
    } else if (total < 0 && base_correct >= 0) {
        total = base_correct + n;
    }
    if (base_correct >= 0 && total >= 0) {
        const Percent base = corrected_accuracy(base_correct, total, records, {});
        const Percent credit_ad =
            corrected_accuracy(base_correct, total, records, {AuditBucket::A, AuditBucket::D});
        const Percent credit_acd = corrected_accuracy(
            base_correct, total, records, {AuditBucket::A, AuditBucket::C, AuditBucket::D});
        out << "accuracy, no credit: " << base.str() << "%\n"
            << "corrected accuracy, credit A+D: " << credit_ad.str() << "%\n"
            << "corrected accuracy, credit A+C+D: " << credit_acd.str() << "%\n";
        machine["corrected"] = json{{"base_correct", base_correct},
                                    {"total", total},
                                    {"no_credit", base.str()},
                                    {"credit_a_d", credit_ad.str()},
                                    {"credit_a_c_d", credit_acd.str()}};
    }
    write_machine(config, "audit.json", machine);
    return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

int run_verify(const CliConfig& config, const std::string& decision_path, std::ostream& out) {
    require_file(decision_path, "decision file");
    const TariffCorpus corpus = load_corpus_checked(config);
    std::ifstream in(decision_path);
    json decision_json;
    try {
        decision_json = json::parse(in);
    } catch (const json::parse_error& e) {
        throw EvalError(decision_path + ": " + e.what());
    }
    FinalDecision decision;
    try {
        decision = FinalDecision::from_json(decision_json);
    } catch (const std::exception& e) {
        throw EvalError(decision_path + ": not a decision document: " + e.what());
    }
    const CitationReport report = verify_citations(corpus, decision);
    for (const CitationCheck& check : report.checks) {
        out << check.clause_id << ": " << (check.grounded ? "grounded" : "ungrounded");
        if (check.error) {
            out << " (" << *check.error << ")";
        }
        out << '\n';
    }
    out << "grounded: " << report.grounded_count << ", ungrounded: " << report.ungrounded_count
        << '\n';
    write_machine(config, "verify.json", report.to_json());
    return report.all_grounded() ? 0 : 1;
}

} // namespace

// ===========================================================================
// Dispatch
// ===========================================================================

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"deterministic six-stage HS tariff classification workflow"};
    app.require_subcommand(1);

    CommonOpts ingest_opts;
    auto* ingest_cmd = app.add_subcommand("ingest", "validate and summarize a corpus file");
    add_common(ingest_cmd, ingest_opts);

    CommonOpts classify_opts;
    std::string classify_description;
    std::string classify_query_id = "query";
    auto* classify_cmd =
        app.add_subcommand("classify", "classify one product description");
    add_common(classify_cmd, classify_opts);
    classify_cmd->add_option("description", classify_description, "product description")
        ->required();
    classify_cmd->add_option("--query-id", classify_query_id, "id recorded in the trace");

    CommonOpts batch_opts;
    std::string batch_gold;
    int batch_jobs = 4;
    auto* batch_cmd = app.add_subcommand("batch", "classify every query in a gold file");
    add_common(batch_cmd, batch_opts);
    batch_cmd->add_option("gold", batch_gold, "gold file (line-delimited records)")->required();
    batch_cmd->add_option("--jobs", batch_jobs, "concurrent classification jobs")
        ->check(CLI::PositiveNumber);

    CommonOpts evaluate_opts;
    std::string evaluate_preds;
    std::string evaluate_gold;
    auto* evaluate_cmd =
        app.add_subcommand("evaluate", "top-1/top-3 accuracy at 4 and 6 digits");
    add_common(evaluate_cmd, evaluate_opts);
    evaluate_cmd->add_option("predictions", evaluate_preds, "predictions file")->required();
    evaluate_cmd->add_option("gold", evaluate_gold, "gold file")->required();

    CommonOpts agree_opts;
    std::string agree_a;
    std::string agree_b;
    auto* agree_cmd = app.add_subcommand("agree", "top-1 agreement between two runs");
    add_common(agree_cmd, agree_opts);
    agree_cmd->add_option("run_a", agree_a, "first predictions file")->required();
    agree_cmd->add_option("run_b", agree_b, "second predictions file")->required();

    CommonOpts attribute_opts;
    std::string attribute_traces;
    std::string attribute_gold;
    auto* attribute_cmd =
        app.add_subcommand("attribute", "stage attribution of four-digit top-1 errors");
    add_common(attribute_cmd, attribute_opts);
    attribute_cmd->add_option("traces", attribute_traces, "directory of per-query traces")
        ->required();
    attribute_cmd->add_option("gold", attribute_gold, "gold file")->required();

    CommonOpts audit_opts;
    std::string audit_file;
    int audit_base_correct = -1;
    int audit_total = -1;
    auto* audit_cmd = app.add_subcommand("audit", "audit-bucket shares and corrected accuracy");
    add_common(audit_cmd, audit_opts);
    audit_cmd->add_option("audit_file", audit_file, "audit records file")->required();
    audit_cmd->add_option("--base-correct", audit_base_correct,
                          "six-digit top-1 correct count before crediting");
    audit_cmd->add_option("--total", audit_total, "total evaluated queries");

    CommonOpts verify_opts;
    std::string verify_decision;
    auto* verify_cmd = app.add_subcommand("verify", "check a decision's citation groundedness");
    add_common(verify_cmd, verify_opts);
    verify_cmd->add_option("decision", verify_decision, "decision document")->required();

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("hstc");
    for (const std::string& arg : args) {
        argv.push_back(arg.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << '\n' << app.help();
        return 2;
    }

    try {
        if (ingest_cmd->parsed()) {
            return run_ingest(resolve_config(ingest_opts), out);
        }
        if (classify_cmd->parsed()) {
            return run_classify(resolve_config(classify_opts), classify_description,
                                classify_query_id, out);
        }
        if (batch_cmd->parsed()) {
            return run_batch(resolve_config(batch_opts), batch_gold, batch_jobs, out);
        }
        if (evaluate_cmd->parsed()) {
            return run_evaluate(resolve_config(evaluate_opts), evaluate_preds, evaluate_gold,
                                out);
        }
        if (agree_cmd->parsed()) {
            return run_agree(resolve_config(agree_opts), agree_a, agree_b, out);
        }
        if (attribute_cmd->parsed()) {
            return run_attribute(resolve_config(attribute_opts), attribute_traces,
                                 attribute_gold, out);
        }
        if (audit_cmd->parsed()) {
            return run_audit(resolve_config(audit_opts), audit_file, audit_base_correct,
                             audit_total, out);
        }
        if (verify_cmd->parsed()) {
            return run_verify(resolve_config(verify_opts), verify_decision, out);
        }
        err << "no subcommand selected\n" << app.help();
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace hstc::cli
