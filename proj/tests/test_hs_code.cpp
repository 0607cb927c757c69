#include "doctest.h"

#include "hstc/errors.hpp"
#include "hstc/hs_code.hpp"

using namespace hstc;

TEST_CASE("parse strips separators and classifies levels") {
    CHECK(HsCode::parse("39.19").digits() == "3919");
    CHECK(HsCode::parse(" 3919 10 ").digits() == "391910");
    CHECK(HsCode::parse("3919.90.10").digits() == "39199010");

    CHECK(HsCode::parse("39").level() == CodeLevel::Chapter);
    CHECK(HsCode::parse("3919").level() == CodeLevel::Heading);
    CHECK(HsCode::parse("391910").level() == CodeLevel::Subheading);
    CHECK(HsCode::parse("39191011").level() == CodeLevel::National);
}

TEST_CASE("parse rejects junk") {
    CHECK_THROWS_AS(HsCode::parse("391"), CodeError);      // odd digit count
    CHECK_THROWS_AS(HsCode::parse("39191"), CodeError);    // length 5
    CHECK_THROWS_AS(HsCode::parse("3919101112"), CodeError); // length 10
    CHECK_THROWS_AS(HsCode::parse(""), CodeError);
    CHECK_THROWS_AS(HsCode::parse("39a9"), CodeError);
    CHECK_THROWS_AS(HsCode::parse("39-19"), CodeError); // dash is not a separator
}

TEST_CASE("truncation and ancestry") {
    const HsCode national = HsCode::parse("39199010");
    CHECK(national.truncated(6).digits() == "391990");
    CHECK(national.truncated(4).digits() == "3919");
    CHECK(national.chapter().digits() == "39");
    CHECK_THROWS_AS(HsCode::parse("3919").truncated(6), CodeError); // longer than the code
    CHECK_THROWS_AS(national.truncated(3), CodeError);              // not a level boundary

    CHECK(HsCode::parse("3919").is_ancestor_of(national));
    CHECK(HsCode::parse("39").is_ancestor_of(national));
    CHECK_FALSE(national.is_ancestor_of(national)); // proper ancestry only
    CHECK_FALSE(HsCode::parse("3920").is_ancestor_of(national));
    // String-prefix traps: 39 is not an ancestor of 40-chapter codes, and a
    // heading is never an ancestor of its own chapter.
    CHECK_FALSE(HsCode::parse("3919").is_ancestor_of(HsCode::parse("39")));
}

TEST_CASE("parent walks one level up") {
    CHECK(HsCode::parse("391990").parent()->digits() == "3919");
    CHECK(HsCode::parse("3919").parent()->digits() == "39");
    CHECK_FALSE(HsCode::parse("39").parent().has_value());
}

TEST_CASE("display inserts the dot after the heading") {
    CHECK(HsCode::parse("39").display() == "39");
    CHECK(HsCode::parse("3919").display() == "3919");
    CHECK(HsCode::parse("391990").display() == "3919.90");
    CHECK(HsCode::parse("39199010").display() == "3919.9010");
}

TEST_CASE("ordering is digit-lexicographic") {
    CHECK(HsCode::parse("3916") < HsCode::parse("3919"));
    CHECK(HsCode::parse("3919") < HsCode::parse("391910"));
    CHECK(HsCode::parse("391910") < HsCode::parse("391990"));
    CHECK(HsCode::parse("40") < HsCode::parse("4016"));
}
