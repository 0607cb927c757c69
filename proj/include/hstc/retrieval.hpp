#ifndef HSTC_RETRIEVAL_HPP_
#define HSTC_RETRIEVAL_HPP_

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hstc/corpus.hpp"
#include "hstc/hs_code.hpp"

namespace hstc {

//! One indexable document: a heading and its associated note text.
struct DocumentEntry {
    std::string doc_id; // heading code digits
    std::string body;
    std::vector<std::string> tokens;
};

//! Builds one DocumentEntry per heading: the heading text concatenated
//! with the texts of the notes that constrain it.
std::vector<DocumentEntry> documents_from_corpus(const TariffCorpus& corpus);

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;

    friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
};

//! Scores in non-increasing order, doc ids distinct, ties broken by doc id
//! ascending.
struct RankedList {
    std::vector<ScoredDoc> entries;

    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
};

//! Sorts (score desc, doc_id asc) and truncates to top_n.
RankedList make_ranked(std::vector<ScoredDoc> scored, std::size_t top_n);

// ---------------------------------------------------------------------------
// Lexical index
// ---------------------------------------------------------------------------

struct Bm25Index {
    struct Posting {
        std::string doc_id;
        int term_frequency = 0;
    };
    std::unordered_map<std::string, std::vector<Posting>> postings;
    std::unordered_map<std::string, int> doc_lengths;
    double avg_doc_length = 0.0;
    int doc_count = 0;
    double k1 = 1.2;
    double b = 0.75;
};

//! Builds an Okapi BM25 inverted index. Throws RetrievalError on duplicate
//! doc ids.
Bm25Index build_bm25(const std::vector<DocumentEntry>& docs, double k1 = 1.2, double b = 0.75);

//! Top-n documents by BM25 score. Uses IDF = ln((N - n + 0.5)/(n + 0.5) + 1),
//! so a document that never matches a query term is excluded rather than
//! scored zero.
RankedList bm25_query(const Bm25Index& index, std::string_view query, std::size_t top_n);

// ---------------------------------------------------------------------------
// Dense index
// ---------------------------------------------------------------------------

struct DenseIndex {
    std::map<std::string, std::vector<double>> vectors; // doc_id -> embedding
    std::size_t dim = 0;
};

//! Builds a dense index from embeddings. Throws RetrievalError on dimension
//! mismatch or non-finite components.
DenseIndex build_dense(const std::map<std::string, std::vector<double>>& vectors);

//! Top-n documents by cosine similarity, brute-force scan. All documents are
//! scored; a zero-norm vector on either side scores 0. Throws RetrievalError
//! on dimension mismatch.
RankedList dense_query(const DenseIndex& index, const std::vector<double>& query_vec,
                       std::size_t top_n);

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

//! Reciprocal rank fusion: fused(d) = sum over lists containing d of
//! 1/(k + rank), rank starting at 1. Input scores are ignored; only the
//! ranks matter. Throws RetrievalError when k <= 0.
RankedList rrf_fuse(const std::vector<RankedList>& lists, double k = 60.0);

// ---------------------------------------------------------------------------
// Embedding supply
// ---------------------------------------------------------------------------

//! Keyed vectors loaded from a vectors file: a header record declaring the
//! dimension, then one record per key. Keys are heading codes for index
//! entries; free text keys supply query-time embeddings in offline mode.
struct VectorSet {
    std::size_t dim = 0;
    std::map<std::string, std::vector<double>> vectors;
};

VectorSet load_vectors(const std::string& path);

//! Restriction of a VectorSet to keys that are heading codes of the corpus.
DenseIndex dense_index_from_vectors(const VectorSet& vectors, const TariffCorpus& corpus);

//! Source of query-time embeddings. Implementations must be safe for
//! concurrent calls.
class EmbeddingSource {
public:
    virtual ~EmbeddingSource() = default;
    //! Returns the embedding for `text`, or nullopt when none is available
    //! (the caller then simply skips the dense list for that query).
    virtual std::optional<std::vector<double>> embed(std::string_view text) const = 0;
};

//! Embeddings looked up by exact text key in a VectorSet.
class FileEmbeddings : public EmbeddingSource {
public:
    explicit FileEmbeddings(VectorSet vectors) : vectors_(std::move(vectors)) {}
    std::optional<std::vector<double>> embed(std::string_view text) const override;

private:
    VectorSet vectors_;
};

} // namespace hstc

#endif // HSTC_RETRIEVAL_HPP_
