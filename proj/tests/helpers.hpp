#ifndef HSTC_TESTS_HELPERS_HPP_
#define HSTC_TESTS_HELPERS_HPP_

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hstc/corpus.hpp"
#include "hstc/evaluation.hpp"
#include "hstc/gateway.hpp"
#include "hstc/pipeline.hpp"
#include "hstc/prompts.hpp"
#include "hstc/retrieval.hpp"

namespace hstc_tests {

inline std::string repo_root() { return HSTC_REPO_ROOT; }

inline std::string repo_path(const std::string& rel) { return repo_root() + "/" + rel; }

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(static_cast<bool>(in), "cannot open " << path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

//! Directory for scratch files, unique per test process, left behind for
//! inspection on failure.
inline std::string scratch_dir() {
    static const std::string dir = [] {
        const auto base = std::filesystem::temp_directory_path() / "hstc_tests";
        std::filesystem::create_directories(base);
        for (int i = 0;; ++i) {
            auto candidate = base / ("run" + std::to_string(::getpid()) + "_" + std::to_string(i));
            if (std::filesystem::create_directory(candidate)) {
                return candidate.string();
            }
        }
    }();
    return dir;
}

inline std::string write_scratch(const std::string& name, const std::string& content) {
    const std::string path = scratch_dir() + "/" + name;
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    out << content;
    return path;
}

inline hstc::TariffCorpus golden_corpus() {
    return hstc::parse_corpus(repo_path("fixtures/corpus_ch39.jsonl"));
}

//! Engine wired to the shipped scripted fixtures; classifies the two golden
//! queries deterministically.
inline hstc::Engine golden_engine(hstc::PipelineConfig config = {}) {
    hstc::BackendConfig backend;
    backend.kind = hstc::BackendKind::Scripted;
    backend.fixture_path = repo_path("fixtures/golden.jsonl");
    return hstc::Engine(golden_corpus(), hstc::Gateway::from_config(backend),
                        hstc::PromptSet::load(repo_path("prompts")),
                        hstc::SynonymTable::load(repo_path("data/synonyms.json")),
                        hstc::load_vectors(repo_path("fixtures/vectors_ch39.jsonl")), config);
}

//! The two golden queries: q-film (-> 391990) and q-rolls (-> 391910).
inline std::vector<hstc::GoldRecord> golden_queries() {
    return hstc::load_gold(repo_path("fixtures/gold_golden.jsonl"));
}

} // namespace hstc_tests

#endif // HSTC_TESTS_HELPERS_HPP_
