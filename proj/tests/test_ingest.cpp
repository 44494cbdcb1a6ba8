#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "pricetree/error.hpp"
#include "pricetree/ingest.hpp"
#include "pricetree/tree_io.hpp"

using namespace pricetree;

namespace {

std::vector<HierarchyRow> parse(const std::string& text) {
    std::istringstream in(text);
    return parse_hierarchy_csv(in);
}

std::size_t error_line(const std::string& text) {
    try {
        parse(text);
    } catch (const ParseError& e) {
        return e.line();
    }
    return 0;
}

const std::filesystem::path kData = PRICETREE_DATA_DIR;

} // namespace

TEST_CASE("three-row hierarchy") {
    const auto rows = parse("node_id,parent_id,quality\nroot,,\na,root,0.9\nb , root , 0.6  \n");
    REQUIRE(rows.size() == 3);
    CHECK(rows[2].node_id == "b");
    CHECK(rows[2].parent_id == "root");
    CHECK(rows[2].quality_raw == 0.6);
    CHECK_FALSE(rows[0].quality_raw);
    CHECK(rows[2].line == 4);

    const auto specs = to_tree_spec(rows, NormalizationMethod::Identity);
    REQUIRE(specs.size() == 3);
    CHECK(specs[0].children == std::vector<std::string>{"a", "b"});
    CHECK(specs[1].quality == 0.9);
    CHECK(build_tree(specs).leaf_count() == 2);
}

TEST_CASE("loader errors carry line numbers") {
    CHECK(error_line("node_id,parent_id,quality\nr,,\ns,,\n") == 3);
    CHECK(error_line("node_id,parent_id,quality\nr,,\na,r,0.5\na,r,0.4\n") == 4);
    CHECK(error_line("node_id,parent_id,quality\nr,,\na,r,high\n") == 3);
    CHECK(error_line("node_id,parent_id,quality\nr,,\na,r,0.5,extra\n") == 3);
    CHECK(error_line("id,parent,q\nr,,\n") == 1);
    CHECK_THROWS_AS(parse(""), ParseError);
    CHECK_THROWS_AS(load_hierarchy_csv(kData / "does_not_exist.csv"), Error);
}

TEST_CASE("structural problems surface from validation") {
    // A leaf row that is also a parent.
    CHECK_THROWS_AS(to_tree_spec(parse("node_id,parent_id,quality\nr,,\na,r,0.5\nb,r,0.4\nc,a,0.3\n"),
                                 NormalizationMethod::Identity),
                    ValidationError);
    // A selector row without children.
    CHECK_THROWS_AS(to_tree_spec(parse("node_id,parent_id,quality\nr,,\na,r,0.5\nb,r,\n"),
                                 NormalizationMethod::Identity),
                    ValidationError);
    CHECK_THROWS_AS(to_tree_spec(parse("node_id,parent_id,quality\nr,,\na,r,0.5\nb,x,0.4\n"),
                                 NormalizationMethod::Identity),
                    ValidationError);
}

TEST_CASE("rank normalisation") {
    const auto a = rank_normalize(std::vector<double>{10, 20, 30});
    CHECK(a[0] == doctest::Approx(1.0 / 6));
    CHECK(a[1] == doctest::Approx(0.5));
    CHECK(a[2] == doctest::Approx(5.0 / 6));
    CHECK(rank_normalize(std::vector<double>{3, 3, 3, 3}) == std::vector<double>(4, 0.5));
    CHECK(rank_normalize(std::vector<double>{-7}) == std::vector<double>{0.5});
    // Ranks 1, 2.5, 2.5, 4.
    const auto t = rank_normalize(std::vector<double>{1, 5, 5, 9});
    CHECK(t[1] == t[2]);
    CHECK(t[1] == doctest::Approx(0.5));

    Stream rng = Stream::derive(4, "ranks");
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> raw(1 + rng.below(40));
        for (double& x : raw)
            x = static_cast<double>(rng.below(20)) - 5.0;
        const auto r = rank_normalize(raw);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            CHECK((r[i] > 0.0 && r[i] < 1.0));
            for (std::size_t j = 0; j < raw.size(); ++j) {
                if (raw[i] > raw[j])
                    CHECK(r[i] > r[j]);
                if (raw[i] == raw[j])
                    CHECK(r[i] == r[j]);
            }
        }
    }
}

TEST_CASE("min-max and identity normalisation") {
    CHECK(minmax_normalize(std::vector<double>{2, 4, 3}) == std::vector<double>{0.0, 1.0, 0.5});
    CHECK(minmax_normalize(std::vector<double>{2, 2}) == std::vector<double>{0.5, 0.5});

    const auto rows = parse("node_id,parent_id,quality\nr,,\na,r,0.25\nb,r,0.75\n");
    const auto same = to_tree_spec(rows, NormalizationMethod::Identity);
    CHECK(same[1].quality == 0.25);
    CHECK(same[2].quality == 0.75);
    try {
        to_tree_spec(parse("node_id,parent_id,quality\nr,,\na,r,1.5\nb,r,0.2\n"), NormalizationMethod::Identity);
        FAIL("quality 1.5 accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Range);
    }
    CHECK(parse_normalization("minmax") == NormalizationMethod::MinMax);
    CHECK_THROWS_AS(parse_normalization("zscore"), Error);
}

TEST_CASE("bundled synthetic samples") {
    struct Sample {
        const char* file;
        std::size_t leaves;
        std::uint32_t depth;
    };
    for (const Sample s : {Sample{"sp500_shape.csv", 397, 3}, Sample{"census_shape.csv", 475, 4},
                           Sample{"pisa_shape.csv", 1567, 4}}) {
        CAPTURE(s.file);
        const auto rows = load_hierarchy_csv(kData / s.file);
        const auto specs = to_tree_spec(rows, NormalizationMethod::RankUniform);
        CHECK(specs.size() == rows.size());
        const Tree tree = build_tree(specs);
        CHECK(tree.leaf_count() == s.leaves);
        CHECK(tree.depth() == s.depth);
        for (NodeIndex i = 0; i < tree.node_count(); ++i)
            if (tree.node(i).kind == NodeKind::Selector)
                CHECK((tree.node(i).child_count >= 2 && tree.node(i).child_count <= 10));

        // Each leaf lands on its midpoint rank: (#less + (#equal + 1)/2 - 0.5) / L.
        std::vector<double> raw, q;
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (rows[i].quality_raw) {
                raw.push_back(*rows[i].quality_raw);
                q.push_back(*specs[i].quality);
            }
        const auto n = static_cast<double>(raw.size());
        for (std::size_t i = 0; i < raw.size(); ++i) {
            const auto less = std::count_if(raw.begin(), raw.end(), [&](double x) { return x < raw[i]; });
            const auto equal = std::count(raw.begin(), raw.end(), raw[i]);
            const double rank = static_cast<double>(less) + static_cast<double>(equal + 1) / 2.0;
            CHECK(q[i] == doctest::Approx((rank - 0.5) / n).epsilon(1e-15));
        }

        // Serialising and reloading gives the same specs.
        CHECK(parse_tree_spec(format_tree_spec(specs)) == specs);
        // And the CSV form reloads to the same rows.
        std::istringstream again(format_hierarchy_csv(rows));
        const auto reread = parse_hierarchy_csv(again);
        REQUIRE(reread.size() == rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            CHECK(reread[i].node_id == rows[i].node_id);
            CHECK(reread[i].quality_raw == rows[i].quality_raw);
        }
    }
}
