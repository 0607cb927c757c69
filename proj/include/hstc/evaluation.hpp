#ifndef HSTC_EVALUATION_HPP_
#define HSTC_EVALUATION_HPP_

#include <array>
#include <compare>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "hstc/hs_code.hpp"

namespace hstc {

// ===========================================================================
// Records
// ===========================================================================

struct GoldRecord {
    std::string query_id;
    std::string description;
    HsCode gold_code;
    // Ten-digit annotations are cut to six digits on load; the flag keeps
    // the provenance visible in reports.
    bool truncated_from_ten = false;
};

struct PredictionRecord {
    std::string query_id;
    std::vector<HsCode> top3; // 1..3 distinct codes, best first
    std::optional<std::string> trace_path;

    nlohmann::json to_json() const;
};

//! Loads line-delimited gold records {query_id, description, gold_code}.
//! Throws EvalError on malformed lines or duplicate query ids.
std::vector<GoldRecord> load_gold(const std::string& path);

//! Loads line-delimited predictions {query_id, top3, trace_path?}.
std::vector<PredictionRecord> load_predictions(const std::string& path);

// ===========================================================================
// Percentages
// ===========================================================================

//! A percentage with one decimal, kept as integer tenths so every figure
//! re-derives exactly from its count (no float accumulation).
struct Percent {
    long long tenths = 0;

    //! round-half-up(100 * count / total, 1 decimal). total must be > 0.
    static Percent of(long long count, long long total);

    std::string str() const; // "75.0"

    friend auto operator<=>(const Percent&, const Percent&) = default;
};

// ===========================================================================
// Accuracy and agreement
// ===========================================================================

struct AccuracyResult {
    int count = 0;
    int total = 0;
    Percent percent;

    std::string render() const; // "75.0% (474/632)"
};

//! Top-k accuracy at a digit granularity: a query counts as correct when any
//! of the first k predicted codes equals the gold code after both are
//! truncated to `digits`. digits must be 4 or 6; k must be 1 or 3. The
//! denominator is the gold set; queries without a prediction count as
//! incorrect.
AccuracyResult topk_accuracy(const std::vector<PredictionRecord>& preds,
                             const std::vector<GoldRecord>& golds, int digits, int k);

struct QueryVerdict {
    std::string query_id;
    bool top1_4d = false;
    bool top3_4d = false;
    bool top1_6d = false;
    bool top3_6d = false;
};

struct EvalReport {
    int n = 0;
    int truncated_gold = 0; // gold codes cut from ten digits on load
    AccuracyResult top1_4d;
    AccuracyResult top3_4d;
    AccuracyResult top1_6d;
    AccuracyResult top3_6d;
    std::vector<QueryVerdict> verdicts; // gold-file order

    std::string render() const;
    nlohmann::json to_json() const;
};

//! Full Table-style evaluation: all four accuracy figures plus per-query
//! verdicts the figures re-derive from.
EvalReport evaluate(const std::vector<PredictionRecord>& preds,
                    const std::vector<GoldRecord>& golds);

struct AgreementResult {
    int count = 0;
    int total = 0;
    Percent percent;

    std::string render() const; // "84.2% (532/632)"
};

//! Fraction of queries whose top-1 codes agree at `digits` between two runs
//! over the same query set. Symmetric; throws EvalError when the id sets
//! differ.
AgreementResult agreement(const std::vector<PredictionRecord>& run_a,
                          const std::vector<PredictionRecord>& run_b, int digits);

// ===========================================================================
// Stage attribution
// ===========================================================================

enum class AttributionBucket { RecallMiss, L1Drop, L2NotKept, L2KeptNotTop1, FinalOverride };
constexpr int kAttributionBucketCount = 5;

const char* to_string(AttributionBucket bucket);

//! The slice of a pipeline trace that error attribution reads: per-stage
//! candidate code lists and the two top-1 commitments.
struct TraceView {
    std::string query_id;
    std::vector<std::string> stage2_codes; // heading digits, fused order
    std::vector<std::string> stage3_codes;
    std::vector<std::string> keep_final;
    std::string l2_top1;    // stage-4 confirmation.chosen
    std::string final_top1; // stage-6 top3[0], six or eight digits

    static TraceView from_trace_json(const nlohmann::json& trace);
};

//! First-failing-stage attribution of a four-digit top-1 error. Throws
//! EvalError when the trace's final top-1 actually matches gold4 (not an
//! error trace).
AttributionBucket attribute_error(const TraceView& trace, const HsCode& gold4);

struct AttributionTable {
    std::array<int, kAttributionBucketCount> counts{};
    int total = 0;

    std::string render() const;
    nlohmann::json to_json() const;
};

AttributionTable attribution_table(const std::vector<std::pair<TraceView, HsCode>>& errors);

// ===========================================================================
// Audit accounting
// ===========================================================================

enum class AuditBucket { A, B, C, D };

const char* to_string(AuditBucket bucket);
AuditBucket audit_bucket_from_string(const std::string& s);

struct AuditRecord {
    std::string query_id;
    HsCode gt_code;
    HsCode agent_code;
    AuditBucket bucket = AuditBucket::A;
    std::string rationale;
};

//! Loads line-delimited audit records. Enforces the disagreement invariant:
//! gt_code and agent_code must differ at six digits.
std::vector<AuditRecord> load_audit(const std::string& path);

struct AuditShares {
    int total = 0;
    std::array<int, 4> counts{};
    std::array<Percent, 4> shares{};

    std::string render() const;
    nlohmann::json to_json() const;
};

AuditShares audit_shares(const std::vector<AuditRecord>& records);

//! (base_correct + records in credited buckets) / total, one decimal.
//! Requires base_correct + records.size() == total.
Percent corrected_accuracy(int base_correct, int total,
                           const std::vector<AuditRecord>& records,
                           const std::set<AuditBucket>& credited);

} // namespace hstc

#endif // HSTC_EVALUATION_HPP_
