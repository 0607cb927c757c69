#include "hstc/corpus.hpp"

#include "hstc/errors.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace hstc {

using nlohmann::json;

const char* to_string(NoteScope s) {
    return s == NoteScope::Section ? "section" : "chapter";
}

const char* to_string(ClauseType t) {
    switch (t) {
    case ClauseType::Inclusion: return "inclusion";
    case ClauseType::Exclusion: return "exclusion";
    case ClauseType::Priority: return "priority";
    }
    return "?";
}

const char* to_string(PriorityKind k) {
    switch (k) {
    case PriorityKind::FormPriority: return "form_priority";
    case PriorityKind::PartVsWhole: return "part_vs_whole";
    case PriorityKind::SpecificOverGeneric: return "specific_over_generic";
    case PriorityKind::Other: return "other";
    }
    return "?";
}

NoteScope note_scope_from_string(const std::string& s) {
    if (s == "section") return NoteScope::Section;
    if (s == "chapter") return NoteScope::Chapter;
    throw CorpusError("unknown note scope '" + s + "'");
}

ClauseType clause_type_from_string(const std::string& s) {
    if (s == "inclusion") return ClauseType::Inclusion;
    if (s == "exclusion") return ClauseType::Exclusion;
    if (s == "priority") return ClauseType::Priority;
    throw CorpusError("unknown clause type '" + s + "'");
}

PriorityKind priority_kind_from_string(const std::string& s) {
    if (s == "form_priority") return PriorityKind::FormPriority;
    if (s == "part_vs_whole") return PriorityKind::PartVsWhole;
    if (s == "specific_over_generic") return PriorityKind::SpecificOverGeneric;
    if (s == "other") return PriorityKind::Other;
    throw CorpusError("unknown priority kind '" + s + "'");
}

const char* to_string(GirId id) {
    switch (id) {
    case GirId::GIR1: return "GIR1";
    case GirId::GIR2a: return "GIR2a";
    case GirId::GIR2b: return "GIR2b";
    case GirId::GIR3a: return "GIR3a";
    case GirId::GIR3b: return "GIR3b";
    case GirId::GIR3c: return "GIR3c";
    case GirId::GIR4: return "GIR4";
    case GirId::GIR5: return "GIR5";
    case GirId::GIR6: return "GIR6";
    }
    return "?";
}

std::optional<GirId> gir_from_string(const std::string& s) {
    static const std::pair<const char*, GirId> table[] = {
        {"GIR1", GirId::GIR1},   {"GIR2a", GirId::GIR2a}, {"GIR2b", GirId::GIR2b},
        {"GIR3a", GirId::GIR3a}, {"GIR3b", GirId::GIR3b}, {"GIR3c", GirId::GIR3c},
        {"GIR4", GirId::GIR4},   {"GIR5", GirId::GIR5},   {"GIR6", GirId::GIR6},
    };
    for (const auto& [name, id] : table) {
        if (s == name) return id;
    }
    return std::nullopt;
}

bool operator==(const TariffNode& a, const TariffNode& b) {
    return a.code == b.code && a.text == b.text && a.section_id == b.section_id &&
           a.note_refs == b.note_refs;
}

bool operator==(const NoteClause& a, const NoteClause& b) {
    return a.id == b.id && a.scope == b.scope && a.chapter == b.chapter &&
           a.section_id == b.section_id && a.clause_type == b.clause_type && a.text == b.text &&
           a.redirect_targets == b.redirect_targets && a.priority_kind == b.priority_kind &&
           a.keywords == b.keywords;
}

bool operator==(const GirRule& a, const GirRule& b) {
    return a.id == b.id && a.text == b.text && a.precedence == b.precedence;
}

bool operator==(const TariffCorpus& a, const TariffCorpus& b) {
    return a.version_ == b.version_ && a.nodes_ == b.nodes_ && a.clauses_ == b.clauses_ &&
           a.gir_ == b.gir_;
}

const TariffNode* TariffCorpus::find_node(const HsCode& code) const {
    auto it = nodes_.find(code.digits());
    return it == nodes_.end() ? nullptr : &it->second;
}

const TariffNode& TariffCorpus::node(const HsCode& code) const {
    const TariffNode* n = find_node(code);
    if (!n) {
        throw CorpusError("unknown code '" + code.digits() + "'");
    }
    return *n;
}

const NoteClause* TariffCorpus::find_clause(const std::string& id) const {
    auto it = clauses_.find(id);
    return it == clauses_.end() ? nullptr : &it->second;
}

const GirRule* TariffCorpus::find_gir(GirId id) const {
    for (const auto& rule : gir_) {
        if (rule.id == id) return &rule;
    }
    return nullptr;
}

std::vector<const TariffNode*> TariffCorpus::children_of(const HsCode& code) const {
    std::vector<const TariffNode*> out;
    for (const auto& c : sorted_codes_) {
        if (c.size() == code.size() + 2 && code.is_ancestor_of(c)) {
            out.push_back(&nodes_.at(c.digits()));
        }
    }
    return out;
}

std::vector<const NoteClause*> TariffCorpus::notes_for(const HsCode& code) const {
    auto it = notes_by_code_.find(code.digits());
    if (it == notes_by_code_.end()) {
        throw CorpusError("unknown code '" + code.digits() + "'");
    }
    std::vector<const NoteClause*> out;
    out.reserve(it->second.size());
    for (const auto& id : it->second) {
        out.push_back(&clauses_.at(id));
    }
    return out;
}

std::vector<std::pair<std::string, HsCode>>
TariffCorpus::exclusion_redirects(const HsCode& code) const {
    if (!contains(code)) {
        throw CorpusError("unknown code '" + code.digits() + "'");
    }
    const std::string chapter = code.truncated(2).digits();
    std::vector<std::pair<std::string, HsCode>> out;
    for (const auto& id : sorted_clause_ids_) {
        const NoteClause& clause = clauses_.at(id);
        if (clause.scope != NoteScope::Chapter || clause.chapter != chapter ||
            clause.clause_type != ClauseType::Exclusion) {
            continue;
        }
        std::vector<HsCode> targets = clause.redirect_targets;
        std::sort(targets.begin(), targets.end());
        for (const auto& target : targets) {
            out.emplace_back(id, target);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void fail_line(const std::string& source, std::size_t line_no, const std::string& msg) {
    throw CorpusError(source + ":" + std::to_string(line_no) + ": " + msg);
}

std::string require_string(const json& rec, const char* field, const std::string& source,
                           std::size_t line_no) {
    if (!rec.contains(field) || !rec[field].is_string()) {
        fail_line(source, line_no, std::string("missing or non-string field '") + field + "'");
    }
    return rec[field].get<std::string>();
}

} // namespace

TariffCorpus parse_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw CorpusError("cannot open corpus file '" + path + "'");
    }
    return parse_corpus_stream(in, path);
}

TariffCorpus parse_corpus_stream(std::istream& in, const std::string& source_name) {
    TariffCorpus corpus;
    std::string line;
    std::size_t line_no = 0;

    std::set<int> seen_gir_precedence;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            fail_line(source_name, line_no, std::string("malformed record: ") + e.what());
        }
        if (!rec.is_object()) {
            fail_line(source_name, line_no, "record is not an object");
        }
        const std::string kind = require_string(rec, "kind", source_name, line_no);

        try {
            if (kind == "meta") {
                corpus.version_ = rec.value("version", "");
            } else if (kind == "node") {
                TariffNode node;
                node.code = HsCode::from_digits(require_string(rec, "code", source_name, line_no));
                node.text = require_string(rec, "text", source_name, line_no);
                if (node.text.empty()) {
                    fail_line(source_name, line_no, "node text must be non-empty");
                }
                if (!rec.contains("section_id") || !rec["section_id"].is_number_integer()) {
                    fail_line(source_name, line_no, "missing or non-integer field 'section_id'");
                }
                node.section_id = rec["section_id"].get<int>();
                if (node.section_id < 1 || node.section_id > 21) {
                    fail_line(source_name, line_no,
                              "section_id " + std::to_string(node.section_id) + " outside 1..21");
                }
                if (rec.contains("note_refs")) {
                    for (const auto& r : rec["note_refs"]) {
                        node.note_refs.push_back(r.get<std::string>());
                    }
                }
                auto [it, inserted] = corpus.nodes_.emplace(node.code.digits(), std::move(node));
                (void)it;
                if (!inserted) {
                    throw CorpusError("duplicate code '" + rec["code"].get<std::string>() + "'");
                }
            } else if (kind == "note_clause") {
                NoteClause clause;
                clause.id = require_string(rec, "id", source_name, line_no);
                clause.scope = note_scope_from_string(require_string(rec, "scope", source_name, line_no));
                if (clause.scope == NoteScope::Section) {
                    if (!rec.contains("scope_id") || !rec["scope_id"].is_number_integer()) {
                        fail_line(source_name, line_no, "section clause needs integer scope_id");
                    }
                    clause.section_id = rec["scope_id"].get<int>();
                    if (clause.section_id < 1 || clause.section_id > 21) {
                        fail_line(source_name, line_no, "scope_id outside 1..21");
                    }
                } else {
                    // Chapter scope: scope_id is the 2-digit chapter code.
                    if (!rec.contains("scope_id") || !rec["scope_id"].is_string()) {
                        fail_line(source_name, line_no, "chapter clause needs string scope_id");
                    }
                    const HsCode ch = HsCode::from_digits(rec["scope_id"].get<std::string>());
                    if (ch.level() != CodeLevel::Chapter) {
                        fail_line(source_name, line_no, "chapter scope_id must be 2 digits");
                    }
                    clause.chapter = ch.digits();
                }
                clause.clause_type =
                    clause_type_from_string(require_string(rec, "clause_type", source_name, line_no));
                clause.text = require_string(rec, "text", source_name, line_no);
                if (clause.text.empty()) {
                    fail_line(source_name, line_no, "clause text must be non-empty");
                }
                if (rec.contains("redirect_targets")) {
                    for (const auto& t : rec["redirect_targets"]) {
                        clause.redirect_targets.push_back(HsCode::from_digits(t.get<std::string>()));
                    }
                }
                if (!clause.redirect_targets.empty() && clause.clause_type == ClauseType::Inclusion) {
                    fail_line(source_name, line_no,
                              "redirect_targets only valid on exclusion or priority clauses");
                }
                if (rec.contains("priority_kind") && !rec["priority_kind"].is_null()) {
                    clause.priority_kind =
                        priority_kind_from_string(rec["priority_kind"].get<std::string>());
                }
                if (clause.priority_kind.has_value() != (clause.clause_type == ClauseType::Priority)) {
                    fail_line(source_name, line_no,
                              "priority_kind must be present exactly when clause_type is priority");
                }
                if (rec.contains("keywords")) {
                    for (const auto& k : rec["keywords"]) {
                        clause.keywords.push_back(k.get<std::string>());
                    }
                }
                auto [it, inserted] = corpus.clauses_.emplace(clause.id, std::move(clause));
                (void)it;
                if (!inserted) {
                    throw CorpusError("duplicate clause id '" + rec["id"].get<std::string>() + "'");
                }
            } else if (kind == "gir_rule") {
                GirRule rule;
                const std::string id_str = require_string(rec, "id", source_name, line_no);
                auto id = gir_from_string(id_str);
                if (!id) {
                    fail_line(source_name, line_no, "unknown GIR id '" + id_str + "'");
                }
                rule.id = *id;
                rule.text = require_string(rec, "text", source_name, line_no);
                if (!rec.contains("precedence") || !rec["precedence"].is_number_integer()) {
                    fail_line(source_name, line_no, "missing or non-integer field 'precedence'");
                }
                rule.precedence = rec["precedence"].get<int>();
                for (const auto& existing : corpus.gir_) {
                    if (existing.id == rule.id) {
                        throw CorpusError("duplicate GIR id '" + id_str + "'");
                    }
                }
                if (!seen_gir_precedence.insert(rule.precedence).second) {
                    throw CorpusError("duplicate GIR precedence " + std::to_string(rule.precedence));
                }
                corpus.gir_.push_back(std::move(rule));
            } else {
                fail_line(source_name, line_no, "unknown record kind '" + kind + "'");
            }
        } catch (const CodeError& e) {
            fail_line(source_name, line_no, e.what());
        } catch (const json::exception& e) {
            fail_line(source_name, line_no, std::string("malformed record: ") + e.what());
        }
    }

    // Linking and validation, order-independent of the file layout.
    std::sort(corpus.gir_.begin(), corpus.gir_.end(),
              [](const GirRule& a, const GirRule& b) { return a.precedence < b.precedence; });
    for (std::size_t i = 1; i < corpus.gir_.size(); ++i) {
        if (static_cast<int>(corpus.gir_[i - 1].id) >= static_cast<int>(corpus.gir_[i].id)) {
            throw CorpusError("GIR precedence order inconsistent with GIR numbering: " +
                              std::string(to_string(corpus.gir_[i - 1].id)) + " before " +
                              std::string(to_string(corpus.gir_[i].id)));
        }
    }

    for (auto& [digits, node] : corpus.nodes_) {
        if (auto parent = node.parent()) {
            if (!corpus.nodes_.count(parent->digits())) {
                throw CorpusError("dangling parent '" + parent->digits() + "' for node '" +
                                  digits + "'");
            }
            if (corpus.nodes_.at(parent->digits()).section_id != node.section_id) {
                throw CorpusError("node '" + digits + "' section_id differs from its parent");
            }
        }
        for (const auto& ref : node.note_refs) {
            if (!corpus.clauses_.count(ref)) {
                throw CorpusError("dangling note_ref '" + ref + "' on node '" + digits + "'");
            }
        }
        corpus.sorted_codes_.push_back(node.code);
    }
    std::sort(corpus.sorted_codes_.begin(), corpus.sorted_codes_.end());

    for (const auto& [id, clause] : corpus.clauses_) {
        (void)clause;
        corpus.sorted_clause_ids_.push_back(id);
    }
    std::sort(corpus.sorted_clause_ids_.begin(), corpus.sorted_clause_ids_.end());

    // Note closure: for every node, the clauses scoped to its chapter plus
    // the clauses scoped to its enclosing section, id-ascending. This is the
    // single-lookup structure behind notes_for.
    for (const auto& code : corpus.sorted_codes_) {
        const TariffNode& node = corpus.nodes_.at(code.digits());
        const std::string chapter = code.truncated(2).digits();
        std::vector<std::string> ids;
        for (const auto& id : corpus.sorted_clause_ids_) {
            const NoteClause& clause = corpus.clauses_.at(id);
            const bool chapter_hit =
                clause.scope == NoteScope::Chapter && clause.chapter == chapter;
            const bool section_hit =
                clause.scope == NoteScope::Section && clause.section_id == node.section_id;
            if (chapter_hit || section_hit) {
                ids.push_back(id);
            }
        }
        corpus.notes_by_code_.emplace(code.digits(), std::move(ids));
    }

    return corpus;
}

void TariffCorpus::serialize(std::ostream& out) const {
    json meta{{"kind", "meta"}, {"version", version_}};
    out << meta.dump() << "\n";
    for (const auto& rule : gir_) {
        json rec{{"kind", "gir_rule"},
                 {"id", to_string(rule.id)},
                 {"text", rule.text},
                 {"precedence", rule.precedence}};
        out << rec.dump() << "\n";
    }
    for (const auto& id : sorted_clause_ids_) {
        const NoteClause& clause = clauses_.at(id);
        json rec{{"kind", "note_clause"},
                 {"id", clause.id},
                 {"scope", to_string(clause.scope)},
                 {"clause_type", to_string(clause.clause_type)},
                 {"text", clause.text}};
        if (clause.scope == NoteScope::Section) {
            rec["scope_id"] = clause.section_id;
        } else {
            rec["scope_id"] = clause.chapter;
        }
        if (!clause.redirect_targets.empty()) {
            json targets = json::array();
            for (const auto& t : clause.redirect_targets) targets.push_back(t.digits());
            rec["redirect_targets"] = targets;
        }
        if (clause.priority_kind) {
            rec["priority_kind"] = to_string(*clause.priority_kind);
        }
        if (!clause.keywords.empty()) {
            rec["keywords"] = clause.keywords;
        }
        out << rec.dump() << "\n";
    }
    for (const auto& code : sorted_codes_) {
        const TariffNode& node = nodes_.at(code.digits());
        json rec{{"kind", "node"},
                 {"code", node.code.digits()},
                 {"text", node.text},
                 {"section_id", node.section_id}};
        if (!node.note_refs.empty()) {
            rec["note_refs"] = node.note_refs;
        }
        out << rec.dump() << "\n";
    }
}

} // namespace hstc
