#include "hstc/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "hstc/errors.hpp"

namespace hstc {

using nlohmann::json;

// ===========================================================================
// Loading
// ===========================================================================

namespace {

json parse_line(const std::string& path, int line_no, const std::string& line) {
    try {
        return json::parse(line);
    } catch (const json::parse_error& e) {
        throw EvalError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
}

std::string require_string(const json& record, const char* key, const std::string& where) {
    if (!record.contains(key) || !record[key].is_string()) {
        throw EvalError(where + ": missing string field '" + key + "'");
    }
    return record[key].get<std::string>();
}

//! Parses a gold annotation, cutting ten-digit national codes to six.
HsCode parse_gold_code(const std::string& raw, const std::string& where, bool& truncated) {
    std::string digits;
    for (char c : raw) {
        if (c == '.' || c == ' ') {
            continue;
        }
        digits += c;
    }
    if (digits.size() == 10) {
        digits.resize(6);
        truncated = true;
    }
    try {
        return HsCode::from_digits(std::move(digits));
    } catch (const CodeError& e) {
        throw EvalError(where + ": " + e.what());
    }
}

} // namespace

std::vector<GoldRecord> load_gold(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw EvalError("cannot open gold file: " + path);
    }
    std::vector<GoldRecord> golds;
    std::set<std::string> ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const std::string where = path + ":" + std::to_string(line_no);
        const json record = parse_line(path, line_no, line);
        GoldRecord gold;
        gold.query_id = require_string(record, "query_id", where);
        if (gold.query_id.empty()) {
            throw EvalError(where + ": empty query_id");
        }
        gold.description = require_string(record, "description", where);
        gold.gold_code = parse_gold_code(require_string(record, "gold_code", where), where,
                                         gold.truncated_from_ten);
        if (!ids.insert(gold.query_id).second) {
            throw EvalError(where + ": duplicate query_id '" + gold.query_id + "'");
        }
        golds.push_back(std::move(gold));
    }
    return golds;
}

json PredictionRecord::to_json() const {
    json j;
    j["query_id"] = query_id;
    json codes = json::array();
    for (const HsCode& code : top3) {
        codes.push_back(code.digits());
    }
    j["top3"] = std::move(codes);
    if (trace_path) {
        j["trace_path"] = *trace_path;
    }
    return j;
}

std::vector<PredictionRecord> load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw EvalError("cannot open predictions file: " + path);
    }
    std::vector<PredictionRecord> preds;
    std::set<std::string> ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const std::string where = path + ":" + std::to_string(line_no);
        const json record = parse_line(path, line_no, line);
        PredictionRecord pred;
        pred.query_id = require_string(record, "query_id", where);
        if (!record.contains("top3") || !record["top3"].is_array() || record["top3"].empty() ||
            record["top3"].size() > 3) {
            throw EvalError(where + ": top3 must list 1 to 3 codes");
        }
        for (const auto& code : record["top3"]) {
            if (!code.is_string()) {
                throw EvalError(where + ": top3 entries must be code strings");
            }
            try {
                pred.top3.push_back(HsCode::parse(code.get<std::string>()));
            } catch (const CodeError& e) {
                throw EvalError(where + ": " + e.what());
            }
        }
        for (std::size_t i = 0; i < pred.top3.size(); ++i) {
            for (std::size_t j = i + 1; j < pred.top3.size(); ++j) {
                if (pred.top3[i] == pred.top3[j]) {
                    throw EvalError(where + ": top3 repeats code " + pred.top3[i].digits());
                }
            }
        }
        if (record.contains("trace_path") && !record["trace_path"].is_null()) {
            pred.trace_path = record["trace_path"].get<std::string>();
        }
        if (!ids.insert(pred.query_id).second) {
            throw EvalError(where + ": duplicate query_id '" + pred.query_id + "'");
        }
        preds.push_back(std::move(pred));
    }
    return preds;
}

// ===========================================================================
// Percent
// ===========================================================================

Percent Percent::of(long long count, long long total) {
    if (total <= 0) {
        throw EvalError("percentage of an empty set");
    }
    if (count < 0 || count > total) {
        throw EvalError("count " + std::to_string(count) + " outside [0, " +
                        std::to_string(total) + "]");
    }
    // 100 * count / total to one decimal == 1000 * count / total in tenths;
    // round half up via the remainder, in integers throughout.
    const long long numerator = count * 1000;
    long long tenths = numerator / total;
    const long long remainder = numerator % total;
    if (2 * remainder >= total) {
        ++tenths;
    }
    return Percent{tenths};
}

std::string Percent::str() const {
    return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
}

// ===========================================================================
// Accuracy
// ===========================================================================

namespace {

bool code_matches(const HsCode& pred, const HsCode& gold, int digits) {
    const auto want = static_cast<std::size_t>(digits);
    if (pred.size() < want || gold.size() < want) {
        return false;
    }
    return pred.truncated(want) == gold.truncated(want);
}

void check_eval_inputs(const std::vector<PredictionRecord>& preds,
                       const std::vector<GoldRecord>& golds) {
    if (golds.empty()) {
        throw EvalError("empty gold set");
    }
    if (preds.empty()) {
        throw EvalError("empty prediction set");
    }
    std::set<std::string> gold_ids;
    for (const GoldRecord& gold : golds) {
        gold_ids.insert(gold.query_id);
    }
    std::set<std::string> seen;
    for (const PredictionRecord& pred : preds) {
        if (gold_ids.count(pred.query_id) == 0) {
            throw EvalError("prediction for unknown query_id '" + pred.query_id + "'");
        }
        if (!seen.insert(pred.query_id).second) {
            throw EvalError("duplicate prediction for query_id '" + pred.query_id + "'");
        }
    }
}

} // namespace

std::string AccuracyResult::render() const {
    return percent.str() + "% (" + std::to_string(count) + "/" + std::to_string(total) + ")";
}

AccuracyResult topk_accuracy(const std::vector<PredictionRecord>& preds,
                             const std::vector<GoldRecord>& golds, int digits, int k) {
    if (digits != 4 && digits != 6) {
        throw EvalError("digits must be 4 or 6");
    }
    if (k != 1 && k != 3) {
        throw EvalError("k must be 1 or 3");
    }
    check_eval_inputs(preds, golds);

    std::map<std::string, const PredictionRecord*> by_id;
    for (const PredictionRecord& pred : preds) {
        by_id[pred.query_id] = &pred;
    }

    int correct = 0;
    for (const GoldRecord& gold : golds) {
        auto it = by_id.find(gold.query_id);
        if (it == by_id.end()) {
            continue; // no prediction: incorrect
        }
        const auto& top3 = it->second->top3;
        const std::size_t depth = std::min<std::size_t>(top3.size(), static_cast<std::size_t>(k));
        for (std::size_t i = 0; i < depth; ++i) {
            if (code_matches(top3[i], gold.gold_code, digits)) {
                ++correct;
                break;
            }
        }
    }
    const int total = static_cast<int>(golds.size());
    return AccuracyResult{correct, total, Percent::of(correct, total)};
}

EvalReport evaluate(const std::vector<PredictionRecord>& preds,
                    const std::vector<GoldRecord>& golds) {
    check_eval_inputs(preds, golds);
    std::map<std::string, const PredictionRecord*> by_id;
    for (const PredictionRecord& pred : preds) {
        by_id[pred.query_id] = &pred;
    }

    EvalReport report;
    report.n = static_cast<int>(golds.size());
    int c14 = 0;
    int c34 = 0;
    int c16 = 0;
    int c36 = 0;
    for (const GoldRecord& gold : golds) {
        QueryVerdict verdict;
        verdict.query_id = gold.query_id;
        if (gold.truncated_from_ten) {
            ++report.truncated_gold;
        }
        auto it = by_id.find(gold.query_id);
        if (it != by_id.end()) {
            const auto& top3 = it->second->top3;
            for (std::size_t i = 0; i < top3.size(); ++i) {
                const bool hit4 = code_matches(top3[i], gold.gold_code, 4);
                const bool hit6 = code_matches(top3[i], gold.gold_code, 6);
                if (i == 0) {
                    verdict.top1_4d = hit4;
                    verdict.top1_6d = hit6;
                }
                verdict.top3_4d = verdict.top3_4d || hit4;
                verdict.top3_6d = verdict.top3_6d || hit6;
            }
        }
        c14 += verdict.top1_4d ? 1 : 0;
        c34 += verdict.top3_4d ? 1 : 0;
        c16 += verdict.top1_6d ? 1 : 0;
        c36 += verdict.top3_6d ? 1 : 0;
        report.verdicts.push_back(std::move(verdict));
    }
    report.top1_4d = AccuracyResult{c14, report.n, Percent::of(c14, report.n)};
    report.top3_4d = AccuracyResult{c34, report.n, Percent::of(c34, report.n)};
    report.top1_6d = AccuracyResult{c16, report.n, Percent::of(c16, report.n)};
    report.top3_6d = AccuracyResult{c36, report.n, Percent::of(c36, report.n)};
    return report;
}

std::string EvalReport::render() const {
    std::ostringstream out;
    out << "queries: " << n << '\n';
    if (truncated_gold > 0) {
        out << "gold codes truncated from ten digits: " << truncated_gold << '\n';
    }
    out << "top-1 accuracy, 4-digit: " << top1_4d.render() << '\n'
        << "top-3 accuracy, 4-digit: " << top3_4d.render() << '\n'
        << "top-1 accuracy, 6-digit: " << top1_6d.render() << '\n'
        << "top-3 accuracy, 6-digit: " << top3_6d.render() << '\n';
    return out.str();
}

json EvalReport::to_json() const {
    const auto acc = [](const AccuracyResult& r) {
        return json{{"count", r.count}, {"total", r.total}, {"percent", r.percent.str()}};
    };
    json verdicts_json = json::array();
    for (const QueryVerdict& verdict : verdicts) {
        verdicts_json.push_back(json{{"query_id", verdict.query_id},
                                     {"top1_4d", verdict.top1_4d},
                                     {"top3_4d", verdict.top3_4d},
                                     {"top1_6d", verdict.top1_6d},
                                     {"top3_6d", verdict.top3_6d}});
    }
    return json{{"n", n},
                {"truncated_gold", truncated_gold},
                {"top1_4d", acc(top1_4d)},
                {"top3_4d", acc(top3_4d)},
                {"top1_6d", acc(top1_6d)},
                {"top3_6d", acc(top3_6d)},
                {"verdicts", std::move(verdicts_json)}};
}

// ===========================================================================
// Agreement
// ===========================================================================

std::string AgreementResult::render() const {
    return percent.str() + "% (" + std::to_string(count) + "/" + std::to_string(total) + ")";
}

AgreementResult agreement(const std::vector<PredictionRecord>& run_a,
                          const std::vector<PredictionRecord>& run_b, int digits) {
    if (digits != 4 && digits != 6) {
        throw EvalError("digits must be 4 or 6");
    }
    if (run_a.empty() || run_b.empty()) {
        throw EvalError("empty prediction set");
    }
    std::map<std::string, const PredictionRecord*> by_id_b;
    for (const PredictionRecord& pred : run_b) {
        by_id_b[pred.query_id] = &pred;
    }
    if (by_id_b.size() != run_a.size() || by_id_b.size() != run_b.size()) {
        throw EvalError("runs cover different query sets");
    }
    int agree = 0;
    for (const PredictionRecord& pred_a : run_a) {
        auto it = by_id_b.find(pred_a.query_id);
        if (it == by_id_b.end()) {
            throw EvalError("runs cover different query sets: '" + pred_a.query_id +
                            "' is only in one run");
        }
        if (code_matches(pred_a.top3.front(), it->second->top3.front(), digits)) {
            ++agree;
        }
    }
    const int total = static_cast<int>(run_a.size());
    return AgreementResult{agree, total, Percent::of(agree, total)};
}

// ===========================================================================
// Attribution
// ===========================================================================

const char* to_string(AttributionBucket bucket) {
    switch (bucket) {
    case AttributionBucket::RecallMiss:
        return "recall_miss";
    case AttributionBucket::L1Drop:
        return "l1_drop";
    case AttributionBucket::L2NotKept:
        return "l2_not_kept";
    case AttributionBucket::L2KeptNotTop1:
        return "l2_kept_not_top1";
    case AttributionBucket::FinalOverride:
        return "final_override";
    }
    return "?";
}

TraceView TraceView::from_trace_json(const json& trace) {
    TraceView view;
    if (!trace.contains("stages") || !trace["stages"].is_array()) {
        throw EvalError("trace has no stages");
    }
    if (trace.contains("query_id") && trace["query_id"].is_string()) {
        view.query_id = trace["query_id"].get<std::string>();
    }
    const auto find_stage = [&](const char* name) -> const json* {
        for (const auto& stage : trace["stages"]) {
            if (stage.is_object() && stage.contains("stage") && stage["stage"] == name) {
                return &stage;
            }
        }
        return nullptr;
    };
    const auto collect_codes = [](const json& list, std::vector<std::string>& out) {
        for (const auto& entry : list) {
            out.push_back(entry.at("code").get<std::string>());
        }
    };
    try {
        const json* s2 = find_stage("stage2_retrieve");
        const json* s3 = find_stage("stage3_l1");
        const json* s4 = find_stage("stage4_l2");
        const json* s6 = find_stage("stage6_score");
        if (s2 == nullptr || s3 == nullptr || s4 == nullptr || s6 == nullptr) {
            throw EvalError("trace is missing a required stage record");
        }
        collect_codes((*s2)["output"].at("candidates"), view.stage2_codes);
        collect_codes((*s3)["output"].at("survivors"), view.stage3_codes);
        collect_codes((*s4)["output"].at("keep_final"), view.keep_final);
        view.l2_top1 = (*s4)["output"].at("confirmation").at("chosen").get<std::string>();
        const json& top3 = (*s6)["output"].at("top3");
        if (!top3.is_array() || top3.empty()) {
            throw EvalError("trace has an empty final decision");
        }
        view.final_top1 = top3[0].at("code").get<std::string>();
    } catch (const json::exception& e) {
        throw EvalError(std::string("malformed trace: ") + e.what());
    }
    return view;
}

AttributionBucket attribute_error(const TraceView& trace, const HsCode& gold4) {
    if (gold4.level() != CodeLevel::Heading) {
        throw EvalError("attribution gold must be a four-digit heading");
    }
    const std::string& gold = gold4.digits();
    const auto contains_heading = [&](const std::vector<std::string>& codes) {
        return std::any_of(codes.begin(), codes.end(), [&](const std::string& code) {
            return code.size() >= 4 && code.compare(0, 4, gold) == 0;
        });
    };
    if (trace.final_top1.size() >= 4 && trace.final_top1.compare(0, 4, gold) == 0) {
        throw EvalError("trace's final top-1 matches the gold heading; nothing to attribute");
    }
    if (!contains_heading(trace.stage2_codes)) {
        return AttributionBucket::RecallMiss;
    }
    if (!contains_heading(trace.stage3_codes)) {
        return AttributionBucket::L1Drop;
    }
    if (!contains_heading(trace.keep_final)) {
        return AttributionBucket::L2NotKept;
    }
    if (trace.l2_top1 != gold) {
        return AttributionBucket::L2KeptNotTop1;
    }
    return AttributionBucket::FinalOverride;
}

std::string AttributionTable::render() const {
    static const char* kLabels[kAttributionBucketCount] = {
        "recall miss (stage 2)", "shortlist drop (stage 3)", "not kept at stage 4",
        "kept at stage 4, not top-1", "final-stage override"};
    std::ostringstream out;
    for (int i = 0; i < kAttributionBucketCount; ++i) {
        out << kLabels[i] << ": " << counts[static_cast<std::size_t>(i)] << '\n';
    }
    out << "total: " << total << '\n';
    return out.str();
}

json AttributionTable::to_json() const {
    json j;
    for (int i = 0; i < kAttributionBucketCount; ++i) {
        j[to_string(static_cast<AttributionBucket>(i))] = counts[static_cast<std::size_t>(i)];
    }
    j["total"] = total;
    return j;
}

AttributionTable attribution_table(const std::vector<std::pair<TraceView, HsCode>>& errors) {
    AttributionTable table;
    for (const auto& [trace, gold4] : errors) {
        const AttributionBucket bucket = attribute_error(trace, gold4);
        ++table.counts[static_cast<std::size_t>(bucket)];
        ++table.total;
    }
    return table;
}

// ===========================================================================
// Audit
// ===========================================================================

const char* to_string(AuditBucket bucket) {
    switch (bucket) {
    case AuditBucket::A:
        return "A";
    case AuditBucket::B:
        return "B";
    case AuditBucket::C:
        return "C";
    case AuditBucket::D:
        return "D";
    }
    return "?";
}

AuditBucket audit_bucket_from_string(const std::string& s) {
    if (s == "A") {
        return AuditBucket::A;
    }
    if (s == "B") {
        return AuditBucket::B;
    }
    if (s == "C") {
        return AuditBucket::C;
    }
    if (s == "D") {
        return AuditBucket::D;
    }
    throw EvalError("unknown audit bucket '" + s + "'");
}

std::vector<AuditRecord> load_audit(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw EvalError("cannot open audit file: " + path);
    }
    std::vector<AuditRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const std::string where = path + ":" + std::to_string(line_no);
        const json record = parse_line(path, line_no, line);
        AuditRecord audit;
        audit.query_id = require_string(record, "query_id", where);
        try {
            audit.gt_code = HsCode::parse(require_string(record, "gt_code", where));
            audit.agent_code = HsCode::parse(require_string(record, "agent_code", where));
        } catch (const CodeError& e) {
            throw EvalError(where + ": " + e.what());
        }
        audit.bucket = audit_bucket_from_string(require_string(record, "bucket", where));
        audit.rationale = require_string(record, "rationale", where);
        if (audit.gt_code.size() < 6 || audit.agent_code.size() < 6 ||
            audit.gt_code.truncated(6) == audit.agent_code.truncated(6)) {
            throw EvalError(where + ": audit rows must disagree at six digits");
        }
        records.push_back(std::move(audit));
    }
    return records;
}

std::string AuditShares::render() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < 4; ++i) {
        out << "bucket " << to_string(static_cast<AuditBucket>(i)) << ": " << counts[i] << " ("
            << shares[i].str() << "%)\n";
    }
    out << "total: " << total << '\n';
    return out.str();
}

json AuditShares::to_json() const {
    json j;
    for (std::size_t i = 0; i < 4; ++i) {
        j[to_string(static_cast<AuditBucket>(i))] =
            json{{"count", counts[i]}, {"share", shares[i].str()}};
    }
    j["total"] = total;
    return j;
}

AuditShares audit_shares(const std::vector<AuditRecord>& records) {
    if (records.empty()) {
        throw EvalError("empty audit set");
    }
    AuditShares shares;
    shares.total = static_cast<int>(records.size());
    for (const AuditRecord& record : records) {
        ++shares.counts[static_cast<std::size_t>(record.bucket)];
    }
    for (std::size_t i = 0; i < 4; ++i) {
        shares.shares[i] = Percent::of(shares.counts[i], shares.total);
    }
    return shares;
}

Percent corrected_accuracy(int base_correct, int total,
                           const std::vector<AuditRecord>& records,
                           const std::set<AuditBucket>& credited) {
    if (base_correct < 0 || total <= 0) {
        throw EvalError("invalid corrected-accuracy inputs");
    }
    if (base_correct + static_cast<int>(records.size()) != total) {
        throw EvalError("base_correct + audited disagreements must equal total (" +
                        std::to_string(base_correct) + " + " + std::to_string(records.size()) +
                        " != " + std::to_string(total) + ")");
    }
    int credited_count = 0;
    for (const AuditRecord& record : records) {
        if (credited.count(record.bucket) != 0) {
            ++credited_count;
        }
    }
    return Percent::of(base_correct + credited_count, total);
}

} // namespace hstc
