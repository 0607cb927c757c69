#ifndef HSTC_PIPELINE_HPP_
#define HSTC_PIPELINE_HPP_

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hstc/corpus.hpp"
#include "hstc/errors.hpp"
#include "hstc/gateway.hpp"
#include "hstc/hs_code.hpp"
#include "hstc/prompts.hpp"
#include "hstc/retrieval.hpp"

namespace hstc {

// ===========================================================================
// Stage payloads
// ===========================================================================

//! Fixed attribute schema extracted from a product description. The keys
//! are closed: the extractor is never allowed to invent new ones.
struct ProductAttributes {
    std::string material;
    std::string form;
    std::string function;
    std::string end_use;
    std::vector<std::string> features;
    std::optional<std::string> origin_brand;

    //! Query strings for retrieval: material, form, function, end_use (when
    //! non-empty), then each feature.
    std::vector<std::string> attribute_strings() const;

    //! All attribute text joined and lowercased, for keyword matching.
    std::string joined_lower() const;

    nlohmann::json to_json() const;
    static ProductAttributes from_json(const nlohmann::json& value);

    friend bool operator==(const ProductAttributes&, const ProductAttributes&) = default;
};

struct CandidateHeading {
    HsCode code; // heading level
    std::string heading_text;
    double retrieval_score = 0.0;
    // True when some exclusion clause attached to a co-retrieved candidate
    // redirects to this heading.
    bool note_tagged = false;

    nlohmann::json to_json() const;

    friend bool operator==(const CandidateHeading&, const CandidateHeading&) = default;
};

struct Demotion {
    HsCode code;
    std::string clause_id;

    friend bool operator==(const Demotion&, const Demotion&) = default;
};

struct Confirmation {
    HsCode chosen;
    std::vector<std::string> pros;
    std::vector<std::string> cons;
    std::vector<GirId> gir_clauses;

    friend bool operator==(const Confirmation&, const Confirmation&) = default;
};

struct L2Verdict {
    std::vector<CandidateHeading> keep_final; // ordered, <= n_keep_final
    std::vector<Demotion> demotions;
    Confirmation confirmation;
    bool confirmation_triggered = false;

    nlohmann::json to_json() const;
};

struct SubheadingResolution {
    HsCode six_digit;
    std::optional<HsCode> eight_digit;
    bool ambiguous = false;
    std::vector<GirId> gir_clauses;

    //! The code this resolution commits to: eight_digit when present,
    //! six_digit otherwise.
    const HsCode& resolved() const { return eight_digit ? *eight_digit : six_digit; }

    nlohmann::json to_json() const;

    friend bool operator==(const SubheadingResolution&, const SubheadingResolution&) = default;
};

struct Citation {
    std::string clause_id;
    std::string quoted_text;
    std::size_t span_start = 0; // byte offsets into quoted_text
    std::size_t span_end = 0;

    nlohmann::json to_json() const;

    friend bool operator==(const Citation&, const Citation&) = default;
};

struct ScoredCandidate {
    HsCode code; // six- or eight-digit
    double confidence = 0.0; // in [0, 1]
    std::vector<std::string> pros;
    std::vector<std::string> cons;
    std::vector<GirId> gir_clauses;
    std::vector<Citation> citations;

    nlohmann::json to_json() const;

    friend bool operator==(const ScoredCandidate&, const ScoredCandidate&) = default;
};

struct FinalDecision {
    std::vector<ScoredCandidate> top3; // confidence non-increasing

    nlohmann::json to_json() const;
    static FinalDecision from_json(const nlohmann::json& value);
};

// ===========================================================================
// Trace
// ===========================================================================

//! One backend call made by a stage.
struct CallRecord {
    std::string key;      // fixture/backend key
    std::string raw_text; // verbatim reply of the accepted attempt
    int attempts = 1;

    nlohmann::json to_json() const;
};

struct StageRecord {
    std::string stage;
    nlohmann::json input;  // snapshot of the stage input
    nlohmann::json output; // snapshot of the stage output
    std::vector<CallRecord> calls; // empty for non-model stages
    long long wall_ms = 0;

    nlohmann::json to_json() const;
};

struct PipelineTrace {
    std::string query_id;
    std::string corpus_version;
    nlohmann::json config_snapshot;
    std::vector<StageRecord> stages; // fixed order, stage 1 first

    nlohmann::json to_json() const;
    //! Canonical single-line serialization; byte-identical across runs with
    //! a scripted backend.
    std::string serialize() const;
};

//! Stage failure carrying the partial trace: stages before the failing one
//! are present, later ones absent.
struct ClassifyError : Error {
    ClassifyError(std::string stage_, PipelineTrace partial, const std::string& msg)
        : Error(msg), stage(std::move(stage_)), partial_trace(std::move(partial)) {}
    std::string stage;
    PipelineTrace partial_trace;
};

// ===========================================================================
// Configuration
// ===========================================================================

struct PipelineConfig {
    int n_retrieve = 40;
    int n_l1 = 10;
    int n_keep_final = 3;
    bool v7_recall_vocabulary = true;
    bool v7_l1_note_retention = true;
    bool v7_stage6_self_exclusion = true;
    bool v7_broadened_l2_triggers = true;
    double rrf_k = 60.0;
    double bm25_k1 = 1.2;
    double bm25_b = 0.75;
    // Off by default: stage wall times are recorded as zero so traces stay
    // byte-deterministic; turn on for live-backend latency inspection.
    bool measure_wall_time = false;

    void validate() const; // throws ConfigError
    nlohmann::json to_json() const;

    friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

//! Term-to-expansions table backing the expanded recall vocabulary. A key
//! matches when its token appears in the query (single-token keys) or when
//! it occurs as a lowercase substring (multi-word keys).
class SynonymTable {
public:
    SynonymTable() = default;
    explicit SynonymTable(std::map<std::string, std::vector<std::string>> entries);
    static SynonymTable load(const std::string& path);

    //! Returns `text` with the expansions of every matched key appended.
    std::string expand(const std::string& text) const;

    bool empty() const { return entries_.empty(); }

private:
    std::map<std::string, std::vector<std::string>> entries_;
};

// ===========================================================================
// Stages
// ===========================================================================

template <typename T>
struct StageOutcome {
    T value;
    StageRecord record;
};

struct RetrievalIndices {
    std::vector<DocumentEntry> docs;
    Bm25Index bm25;
    DenseIndex dense;
};

RetrievalIndices build_indices(const TariffCorpus& corpus, const VectorSet& vectors,
                               const PipelineConfig& config);

StageOutcome<ProductAttributes> stage1_extract(const Gateway& gateway, const PromptSet& prompts,
                                               const std::string& description);

StageOutcome<std::vector<CandidateHeading>> stage2_retrieve(
    const TariffCorpus& corpus, const RetrievalIndices& indices,
    const EmbeddingSource* embeddings, const std::string& description,
    const ProductAttributes& attrs, const SynonymTable& synonyms, const PipelineConfig& config);

StageOutcome<std::vector<CandidateHeading>> stage3_l1(const Gateway& gateway,
                                                      const PromptSet& prompts,
                                                      const std::vector<CandidateHeading>& candidates,
                                                      const ProductAttributes& attrs,
                                                      const PipelineConfig& config);

StageOutcome<L2Verdict> stage4_l2(const Gateway& gateway, const PromptSet& prompts,
                                  const TariffCorpus& corpus,
                                  const std::vector<CandidateHeading>& survivors,
                                  const ProductAttributes& attrs, const PipelineConfig& config);

StageOutcome<SubheadingResolution> stage5_subheading(const Gateway& gateway,
                                                     const PromptSet& prompts,
                                                     const TariffCorpus& corpus,
                                                     const HsCode& chosen,
                                                     const std::string& description,
                                                     const ProductAttributes& attrs);

StageOutcome<FinalDecision> stage6_score(
    const Gateway& gateway, const PromptSet& prompts, const TariffCorpus& corpus,
    const L2Verdict& verdict, const std::map<std::string, SubheadingResolution>& resolutions,
    const ProductAttributes& attrs, const PipelineConfig& config);

// ===========================================================================
// Citation verification
// ===========================================================================

struct CitationCheck {
    std::string clause_id;
    bool grounded = false;
    std::optional<std::string> error; // set when the clause id is unknown

    nlohmann::json to_json() const;
};

struct CitationReport {
    std::vector<CitationCheck> checks;
    int grounded_count = 0;
    int ungrounded_count = 0;

    bool all_grounded() const { return ungrounded_count == 0; }
    nlohmann::json to_json() const;
};

//! Re-checks every citation of a decision against the corpus: grounded iff
//! quoted_text is a byte-exact contiguous substring of the cited text and
//! the span is in bounds. Clause ids resolve against note clauses first,
//! then against node codes (heading text is citable). Never mutates the
//! decision.
CitationReport verify_citations(const TariffCorpus& corpus, const FinalDecision& decision);

// ===========================================================================
// Engine
// ===========================================================================

//! Bundles the immutable classification state: corpus, indices, gateway,
//! prompts, synonyms. classify() is const and safe to call concurrently.
class Engine {
public:
    Engine(TariffCorpus corpus, Gateway gateway, PromptSet prompts, SynonymTable synonyms,
           VectorSet vectors, PipelineConfig config);

    //! Runs stages 1..6 in fixed order. Throws ClassifyError carrying the
    //! partial trace when a stage fails.
    std::pair<FinalDecision, PipelineTrace> classify(const std::string& description,
                                                     const std::string& query_id) const;

    const TariffCorpus& corpus() const { return corpus_; }
    const PipelineConfig& config() const { return config_; }

private:
    TariffCorpus corpus_;
    Gateway gateway_;
    PromptSet prompts_;
    SynonymTable synonyms_;
    FileEmbeddings embeddings_;
    PipelineConfig config_;
    RetrievalIndices indices_;
};

} // namespace hstc

#endif // HSTC_PIPELINE_HPP_
