#include "hstc/prompts.hpp"

#include <fstream>
#include <sstream>

#include "hstc/errors.hpp"

namespace hstc {

std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const std::size_t open = tmpl.find("{{", pos);
        if (open == std::string::npos) {
            out.append(tmpl, pos, std::string::npos);
            break;
        }
        out.append(tmpl, pos, open - pos);
        const std::size_t close = tmpl.find("}}", open + 2);
        if (close == std::string::npos) {
            throw ConfigError("unterminated placeholder in prompt template");
        }
        const std::string name = tmpl.substr(open + 2, close - open - 2);
        auto it = values.find(name);
        if (it == values.end()) {
            throw ConfigError("prompt placeholder '" + name + "' has no value");
        }
        out += it->second;
        pos = close + 2;
    }
    return out;
}

PromptSet::PromptSet(std::map<std::string, PromptTemplate> templates)
    : templates_(std::move(templates)) {
    for (const std::string& stage : required_stages()) {
        if (templates_.count(stage) == 0) {
            throw ConfigError("prompt set is missing stage '" + stage + "'");
        }
    }
}

const std::vector<std::string>& PromptSet::required_stages() {
    static const std::vector<std::string> stages = {
        "stage1_extract", "stage3_l1", "stage4_l2",
        "stage5_subheading", "stage6_score", "stage6_spans",
    };
    return stages;
}

namespace {

PromptTemplate parse_template(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open prompt template: " + path);
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string content = buffer.str();

    // The file holds a "[system]" line, the system text, a "[user]" line,
    // then the user text. Section markers must sit alone on their line.
    std::string line;
    std::istringstream stream(content);
    if (!std::getline(stream, line) || line != "[system]") {
        throw ConfigError(path + ": template must begin with a [system] line");
    }
    PromptTemplate tmpl;
    bool in_user = false;
    std::string* current = &tmpl.system;
    while (std::getline(stream, line)) {
        if (line == "[user]") {
            if (in_user) {
                throw ConfigError(path + ": duplicate [user] section");
            }
            in_user = true;
            current = &tmpl.user;
            continue;
        }
        if (!current->empty()) {
            *current += '\n';
        }
        *current += line;
    }
    if (!in_user) {
        throw ConfigError(path + ": template has no [user] section");
    }
    return tmpl;
}

} // namespace

PromptSet PromptSet::load(const std::string& dir) {
    std::map<std::string, PromptTemplate> templates;
    for (const std::string& stage : required_stages()) {
        templates[stage] = parse_template(dir + "/" + stage + ".txt");
    }
    return PromptSet(std::move(templates));
}

const PromptTemplate& PromptSet::stage(const std::string& stage_name) const {
    auto it = templates_.find(stage_name);
    if (it == templates_.end()) {
        throw ConfigError("no prompt template for stage '" + stage_name + "'");
    }
    return it->second;
}

std::string PromptSet::render_user(const std::string& stage_name,
                                   const std::map<std::string, std::string>& values) const {
    return render_template(stage(stage_name).user, values);
}

} // namespace hstc
