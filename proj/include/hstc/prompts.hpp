#ifndef HSTC_PROMPTS_HPP_
#define HSTC_PROMPTS_HPP_

#include <map>
#include <string>
#include <vector>

namespace hstc {

//! System/user halves of one stage's prompt. The user half may contain
//! {{placeholder}} slots filled at call time.
struct PromptTemplate {
    std::string system;
    std::string user;
};

//! Substitutes every {{name}} in `tmpl` with values.at(name). Throws
//! ConfigError on an unknown placeholder or an unterminated one. Substituted
//! values are not re-scanned.
std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& values);

//! The pipeline's prompt templates, one per model-calling stage. Templates
//! are configuration: they live in versioned text files, one file per stage
//! (`<stage_name>.txt`), each holding a `[system]` section followed by a
//! `[user]` section.
class PromptSet {
public:
    explicit PromptSet(std::map<std::string, PromptTemplate> templates);

    //! Loads `<dir>/<stage>.txt` for every model-calling stage.
    static PromptSet load(const std::string& dir);

    const PromptTemplate& stage(const std::string& stage_name) const;

    std::string render_user(const std::string& stage_name,
                            const std::map<std::string, std::string>& values) const;

    //! Stage names every PromptSet must cover.
    static const std::vector<std::string>& required_stages();

private:
    std::map<std::string, PromptTemplate> templates_;
};

} // namespace hstc

#endif // HSTC_PROMPTS_HPP_
