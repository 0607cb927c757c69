#ifndef HSTC_CLI_HPP_
#define HSTC_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

#include "hstc/gateway.hpp"
#include "hstc/pipeline.hpp"

namespace hstc::cli {

//! Everything a command needs to run, assembled from built-in defaults, an
//! optional sectioned config file, and --set overrides (flag > file >
//! default).
struct CliConfig {
    std::string corpus_path;
    std::string vectors_path;
    std::string synonyms_path;
    std::string prompts_dir;
    std::string output_dir = "out";
    BackendConfig backend;
    PipelineConfig pipeline;
};

//! Parses the sectioned key/value config format (docs/config.md). Unknown
//! sections or keys are rejected.
CliConfig load_cli_config(const std::string& path);

//! Applies one "section.key=value" override.
void apply_set(CliConfig& config, const std::string& assignment);

//! Runs one command. `args` excludes the program name. Returns the process
//! exit code: 0 success, 1 domain error, 2 usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace hstc::cli

#endif // HSTC_CLI_HPP_
