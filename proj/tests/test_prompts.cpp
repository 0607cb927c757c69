#include "doctest.h"

#include "hstc/errors.hpp"
#include "hstc/prompts.hpp"

#include "helpers.hpp"

using namespace hstc;

TEST_CASE("render_template substitutes named placeholders") {
    CHECK(render_template("classify {{what}} as {{code}}", {{"what", "film"}, {"code", "3919"}}) ==
          "classify film as 3919");
    // Substituted values are not re-scanned for placeholders.
    CHECK(render_template("{{a}}", {{"a", "{{b}}"}}) == "{{b}}");
}

TEST_CASE("render_template rejects unknown and unterminated placeholders") {
    CHECK_THROWS_AS(render_template("{{missing}}", {}), ConfigError);
    CHECK_THROWS_AS(render_template("oops {{never", {{"never", "x"}}), ConfigError);
}

TEST_CASE("shipped prompt set loads with all six stages") {
    const PromptSet prompts = PromptSet::load(hstc_tests::repo_path("prompts"));
    for (const std::string& stage : PromptSet::required_stages()) {
        CHECK_FALSE(prompts.stage(stage).system.empty());
        CHECK_FALSE(prompts.stage(stage).user.empty());
    }
    const std::string rendered =
        prompts.render_user("stage1_extract", {{"description", "a red widget"}});
    CHECK(rendered.find("a red widget") != std::string::npos);
    CHECK(rendered.find("{{") == std::string::npos);
}

TEST_CASE("template files must carry both sections in order") {
    using hstc_tests::write_scratch;
    namespace fs = std::filesystem;

    const std::string dir = hstc_tests::scratch_dir() + "/prompts_bad";
    fs::create_directories(dir);
    for (const std::string& stage : PromptSet::required_stages()) {
        write_scratch("prompts_bad/" + stage + ".txt", "[system]\nsys\n[user]\nuser\n");
    }
    CHECK_NOTHROW(PromptSet::load(dir));

    write_scratch("prompts_bad/stage3_l1.txt", "sys first\n[user]\nuser\n");
    CHECK_THROWS_WITH_AS(PromptSet::load(dir), doctest::Contains("[system]"), ConfigError);

    write_scratch("prompts_bad/stage3_l1.txt", "[system]\nsys only\n");
    CHECK_THROWS_WITH_AS(PromptSet::load(dir), doctest::Contains("[user]"), ConfigError);

    write_scratch("prompts_bad/stage3_l1.txt", "[system]\ns\n[user]\nu\n[user]\nagain\n");
    CHECK_THROWS_WITH_AS(PromptSet::load(dir), doctest::Contains("duplicate"), ConfigError);
}

TEST_CASE("a missing stage file fails the whole set") {
    namespace fs = std::filesystem;
    const std::string dir = hstc_tests::scratch_dir() + "/prompts_missing";
    fs::create_directories(dir);
    for (const std::string& stage : PromptSet::required_stages()) {
        if (stage != "stage6_spans") {
            hstc_tests::write_scratch("prompts_missing/" + stage + ".txt",
                                      "[system]\ns\n[user]\nu\n");
        }
    }
    CHECK_THROWS_AS(PromptSet::load(dir), ConfigError);
}
