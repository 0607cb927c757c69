#ifndef HSTC_CORPUS_HPP_
#define HSTC_CORPUS_HPP_

#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hstc/hs_code.hpp"

namespace hstc {

//! One node of the tariff hierarchy: chapter, heading, subheading or
//! national subdivision, with its legal description text.
struct TariffNode {
    HsCode code;
    std::string text;
    int section_id = 0; // 1..21
    std::vector<std::string> note_refs; // explicitly attached clause ids

    std::optional<HsCode> parent() const { return code.parent(); }
};

enum class NoteScope { Section, Chapter };
enum class ClauseType { Inclusion, Exclusion, Priority };
enum class PriorityKind { FormPriority, PartVsWhole, SpecificOverGeneric, Other };

const char* to_string(NoteScope s);
const char* to_string(ClauseType t);
const char* to_string(PriorityKind k);
NoteScope note_scope_from_string(const std::string& s);
ClauseType clause_type_from_string(const std::string& s);
PriorityKind priority_kind_from_string(const std::string& s);

//! A typed clause from a section or chapter note.
/*!
 * The text is preserved byte-exactly from the corpus file; citation
 * grounding checks compare against it verbatim. Redirect targets are the
 * headings an exclusion or priority clause routes goods toward; they may
 * name codes outside the loaded corpus slice (cross-chapter redirections
 * into chapters that were not ingested).
 */
struct NoteClause {
    std::string id;
    NoteScope scope = NoteScope::Chapter;
    std::string chapter;  // 2-digit chapter code; valid when scope == Chapter
    int section_id = 0;   // valid when scope == Section
    ClauseType clause_type = ClauseType::Inclusion;
    std::string text;
    std::vector<HsCode> redirect_targets;
    std::optional<PriorityKind> priority_kind;
    std::vector<std::string> keywords; // optional triggers for self-exclusion matching
};

enum class GirId { GIR1, GIR2a, GIR2b, GIR3a, GIR3b, GIR3c, GIR4, GIR5, GIR6 };

const char* to_string(GirId id);
std::optional<GirId> gir_from_string(const std::string& s);

struct GirRule {
    GirId id = GirId::GIR1;
    std::string text;
    int precedence = 0; // lower applies first
};

//! The parsed tariff knowledge base. Immutable after parse; safe for any
//! number of concurrent readers.
class TariffCorpus {
public:
    const std::string& version() const { return version_; }

    const TariffNode* find_node(const HsCode& code) const;
    const TariffNode& node(const HsCode& code) const; // throws CorpusError if absent
    bool contains(const HsCode& code) const { return find_node(code) != nullptr; }

    const NoteClause* find_clause(const std::string& id) const;

    const std::vector<GirRule>& gir() const { return gir_; }
    const GirRule* find_gir(GirId id) const;

    //! All node codes, ascending. Stable iteration order for serialization
    //! and index building.
    const std::vector<HsCode>& codes() const { return sorted_codes_; }
    //! All clause ids, ascending.
    const std::vector<std::string>& clause_ids() const { return sorted_clause_ids_; }

    //! Direct children of a code (one level down), ascending.
    std::vector<const TariffNode*> children_of(const HsCode& code) const;

    //! The precomputed note closure for a code: clauses scoped to its
    //! chapter plus clauses scoped to its enclosing section, id-ascending.
    //! Single map access at query time. Throws CorpusError for unknown codes.
    std::vector<const NoteClause*> notes_for(const HsCode& code) const;

    //! All (clause id, redirect target) pairs from exclusion clauses scoped
    //! to the code's chapter, ordered clause id then target ascending.
    std::vector<std::pair<std::string, HsCode>> exclusion_redirects(const HsCode& code) const;

    void serialize(std::ostream& out) const;

    friend bool operator==(const TariffCorpus&, const TariffCorpus&);

    friend TariffCorpus parse_corpus_stream(std::istream& in, const std::string& source_name);

private:
    std::string version_;
    std::unordered_map<std::string, TariffNode> nodes_;
    std::unordered_map<std::string, NoteClause> clauses_;
    std::vector<GirRule> gir_;
    std::unordered_map<std::string, std::vector<std::string>> notes_by_code_;
    std::vector<HsCode> sorted_codes_;
    std::vector<std::string> sorted_clause_ids_;
};

bool operator==(const TariffNode&, const TariffNode&);
bool operator==(const NoteClause&, const NoteClause&);
bool operator==(const GirRule&, const GirRule&);

//! Parses a line-delimited corpus file (see docs/corpus-format.md).
/*!
 * Records may appear in any order; linking and validation happen after the
 * whole file is read. Throws CorpusError with the offending line number for
 * malformed records, and without one for cross-record violations (dangling
 * parent, dangling note_ref, duplicate code or clause id).
 */
TariffCorpus parse_corpus(const std::string& path);
TariffCorpus parse_corpus_stream(std::istream& in, const std::string& source_name = "<stream>");

} // namespace hstc

#endif // HSTC_CORPUS_HPP_
