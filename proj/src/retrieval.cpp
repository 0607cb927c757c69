#include "hstc/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "hstc/errors.hpp"
#include "hstc/tokenize.hpp"

namespace hstc {

using nlohmann::json;

std::vector<DocumentEntry> documents_from_corpus(const TariffCorpus& corpus) {
    std::vector<DocumentEntry> docs;
    for (const auto& code : corpus.codes()) {
        const TariffNode& node = corpus.node(code);
        if (node.code.level() != CodeLevel::Heading) {
            continue;
        }
        DocumentEntry entry;
        entry.doc_id = node.code.digits();
        entry.body = node.text;
        for (const NoteClause* clause : corpus.notes_for(node.code)) {
            entry.body += '\n';
            entry.body += clause->text;
        }
        entry.tokens = tokenize(entry.body);
        docs.push_back(std::move(entry));
    }
    return docs;
}

RankedList make_ranked(std::vector<ScoredDoc> scored, std::size_t top_n) {
    std::sort(scored.begin(), scored.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.doc_id < b.doc_id;
    });
    if (scored.size() > top_n) {
        scored.resize(top_n);
    }
    return RankedList{std::move(scored)};
}

// ---------------------------------------------------------------------------
// BM25
// ---------------------------------------------------------------------------

Bm25Index build_bm25(const std::vector<DocumentEntry>& docs, double k1, double b) {
    Bm25Index index;
    index.k1 = k1;
    index.b = b;
    index.doc_count = static_cast<int>(docs.size());

    long long total_length = 0;
    for (const DocumentEntry& doc : docs) {
        if (index.doc_lengths.count(doc.doc_id) != 0) {
            throw RetrievalError("duplicate document id in index: " + doc.doc_id);
        }
        index.doc_lengths[doc.doc_id] = static_cast<int>(doc.tokens.size());
        total_length += static_cast<long long>(doc.tokens.size());

        std::map<std::string, int> tf;
        for (const std::string& token : doc.tokens) {
            ++tf[token];
        }
        for (const auto& [term, count] : tf) {
            index.postings[term].push_back(Bm25Index::Posting{doc.doc_id, count});
        }
    }
    index.avg_doc_length =
        docs.empty() ? 0.0 : static_cast<double>(total_length) / static_cast<double>(docs.size());
    for (auto& [term, postings] : index.postings) {
        std::sort(postings.begin(), postings.end(),
                  [](const Bm25Index::Posting& a, const Bm25Index::Posting& b) {
                      return a.doc_id < b.doc_id;
                  });
    }
    return index;
}

RankedList bm25_query(const Bm25Index& index, std::string_view query, std::size_t top_n) {
    const std::vector<std::string> query_tokens = tokenize(query);
    std::map<std::string, int> query_tf;
    for (const std::string& token : query_tokens) {
        ++query_tf[token];
    }

    const double n_docs = static_cast<double>(index.doc_count);
    std::map<std::string, double> scores;
    for (const auto& [term, qcount] : query_tf) {
        auto it = index.postings.find(term);
        if (it == index.postings.end()) {
            continue;
        }
        const auto& postings = it->second;
        const double df = static_cast<double>(postings.size());
        const double idf = std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
        for (const auto& posting : postings) {
            const double tf = static_cast<double>(posting.term_frequency);
            const double dl = static_cast<double>(index.doc_lengths.at(posting.doc_id));
            const double norm =
                index.avg_doc_length > 0.0 ? dl / index.avg_doc_length : 0.0;
            const double denom = tf + index.k1 * (1.0 - index.b + index.b * norm);
            scores[posting.doc_id] +=
                static_cast<double>(qcount) * idf * (tf * (index.k1 + 1.0)) / denom;
        }
    }

    std::vector<ScoredDoc> scored;
    scored.reserve(scores.size());
    for (const auto& [doc_id, score] : scores) {
        if (score > 0.0) {
            scored.push_back(ScoredDoc{doc_id, score});
        }
    }
    return make_ranked(std::move(scored), top_n);
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

namespace {

void check_finite(const std::string& key, const std::vector<double>& vec) {
    for (double component : vec) {
        if (!std::isfinite(component)) {
            throw RetrievalError("non-finite component in vector for '" + key + "'");
        }
    }
}

} // namespace

DenseIndex build_dense(const std::map<std::string, std::vector<double>>& vectors) {
    DenseIndex index;
    for (const auto& [doc_id, vec] : vectors) {
        if (index.vectors.empty()) {
            index.dim = vec.size();
        } else if (vec.size() != index.dim) {
            throw RetrievalError("vector for '" + doc_id + "' has dimension " +
                                 std::to_string(vec.size()) + ", expected " +
                                 std::to_string(index.dim));
        }
        check_finite(doc_id, vec);
        index.vectors[doc_id] = vec;
    }
    return index;
}

RankedList dense_query(const DenseIndex& index, const std::vector<double>& query_vec,
                       std::size_t top_n) {
    if (!index.vectors.empty() && query_vec.size() != index.dim) {
        throw RetrievalError("query vector has dimension " + std::to_string(query_vec.size()) +
                             ", index expects " + std::to_string(index.dim));
    }
    check_finite("<query>", query_vec);

    double query_norm_sq = 0.0;
    for (double component : query_vec) {
        query_norm_sq += component * component;
    }
    const double query_norm = std::sqrt(query_norm_sq);

    std::vector<ScoredDoc> scored;
    scored.reserve(index.vectors.size());
    for (const auto& [doc_id, vec] : index.vectors) {
        double dot = 0.0;
        double norm_sq = 0.0;
        for (std::size_t i = 0; i < vec.size(); ++i) {
            dot += vec[i] * query_vec[i];
            norm_sq += vec[i] * vec[i];
        }
        double score = 0.0;
        if (query_norm > 0.0 && norm_sq > 0.0) {
            score = dot / (query_norm * std::sqrt(norm_sq));
        }
        scored.push_back(ScoredDoc{doc_id, score});
    }
    return make_ranked(std::move(scored), top_n);
}

// ---------------------------------------------------------------------------
// RRF
// ---------------------------------------------------------------------------

RankedList rrf_fuse(const std::vector<RankedList>& lists, double k) {
    if (k <= 0.0) {
        throw RetrievalError("rrf constant must be positive, got " + std::to_string(k));
    }
    std::map<std::string, double> fused;
    for (const RankedList& list : lists) {
        for (std::size_t i = 0; i < list.entries.size(); ++i) {
            const double rank = static_cast<double>(i + 1);
            fused[list.entries[i].doc_id] += 1.0 / (k + rank);
        }
    }
    std::vector<ScoredDoc> scored;
    scored.reserve(fused.size());
    for (const auto& [doc_id, score] : fused) {
        scored.push_back(ScoredDoc{doc_id, score});
    }
    return make_ranked(std::move(scored), scored.size());
}

// ---------------------------------------------------------------------------
// Vector files
// ---------------------------------------------------------------------------

VectorSet load_vectors(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw RetrievalError("cannot open vectors file: " + path);
    }
    VectorSet set;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            throw RetrievalError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!header_seen) {
            if (!record.is_object() || !record.contains("dim") ||
                !record["dim"].is_number_unsigned()) {
                throw RetrievalError(path + ":" + std::to_string(line_no) +
                                     ": first record must declare the vector dimension");
            }
            set.dim = record["dim"].get<std::size_t>();
            if (set.dim == 0) {
                throw RetrievalError(path + ":" + std::to_string(line_no) +
                                     ": vector dimension must be positive");
            }
            header_seen = true;
            continue;
        }
        if (!record.is_object() || !record.contains("key") || !record["key"].is_string() ||
            !record.contains("vector") || !record["vector"].is_array()) {
            throw RetrievalError(path + ":" + std::to_string(line_no) +
                                 ": expected {\"key\": ..., \"vector\": [...]}");
        }
        const std::string key = record["key"].get<std::string>();
        std::vector<double> vec;
        vec.reserve(record["vector"].size());
        for (const auto& component : record["vector"]) {
            if (!component.is_number()) {
                throw RetrievalError(path + ":" + std::to_string(line_no) +
                                     ": vector components must be numbers");
            }
            vec.push_back(component.get<double>());
        }
        if (vec.size() != set.dim) {
            throw RetrievalError(path + ":" + std::to_string(line_no) + ": vector for '" + key +
                                 "' has dimension " + std::to_string(vec.size()) + ", expected " +
                                 std::to_string(set.dim));
        }
        check_finite(key, vec);
        if (!set.vectors.emplace(key, std::move(vec)).second) {
            throw RetrievalError(path + ":" + std::to_string(line_no) + ": duplicate key '" + key +
                                 "'");
        }
    }
    if (!header_seen) {
        throw RetrievalError(path + ": empty vectors file");
    }
    return set;
}

DenseIndex dense_index_from_vectors(const VectorSet& vectors, const TariffCorpus& corpus) {
    const auto is_code_key = [](const std::string& key) {
        if (key.size() != 2 && key.size() != 4 && key.size() != 6 && key.size() != 8) {
            return false;
        }
        return std::all_of(key.begin(), key.end(),
                           [](unsigned char c) { return std::isdigit(c) != 0; });
    };
    std::map<std::string, std::vector<double>> subset;
    for (const auto& [key, vec] : vectors.vectors) {
        if (is_code_key(key) && corpus.contains(HsCode::from_digits(key))) {
            subset[key] = vec;
        }
    }
    DenseIndex index = build_dense(subset);
    if (index.vectors.empty()) {
        index.dim = vectors.dim;
    }
    return index;
}

std::optional<std::vector<double>> FileEmbeddings::embed(std::string_view text) const {
    auto it = vectors_.vectors.find(std::string(text));
    if (it == vectors_.vectors.end()) {
        return std::nullopt;
    }
    return it->second;
}

} // namespace hstc
