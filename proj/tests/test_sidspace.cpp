#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "sidrec/sidspace.hpp"
#include "test_util.hpp"

using namespace sidrec;
using namespace sidrec::sid;
using quant::SidAssignment;
using quant::SidCode;

// random assignment over a small code space; collisions get suffixes 0,1,2,...
static SidAssignment random_assignment(size_t n_items, size_t levels, size_t codewords,
                                       uint64_t seed) {
    SidAssignment a;
    a.levels = levels;
    a.codewords = codewords;
    Rng rng(seed);
    std::map<std::vector<size_t>, size_t> counts;
    for (size_t i = 0; i < n_items; ++i) {
        std::vector<size_t> codes;
        for (size_t l = 0; l < levels; ++l) codes.push_back(rng.below(codewords));
        char tag = char('a' + i % 26);
        std::string id = std::string("item_") + tag + "_" + std::to_string(i);
        a.by_item[id] = SidCode{codes, counts[codes]++};
    }
    return a;
}

TEST_CASE("vocab tokens and letters") {
    SidVocab v;
    v.levels = 3;
    v.codewords = 8;
    CHECK(v.token(0, 5) == "<a_5>");
    CHECK(v.token(1, 0) == "<b_0>");
    CHECK(v.token(2, 138) == "<c_138>");
    CHECK(v.token(3, 1) == "<d_1>");
    CHECK_THROWS_AS(v.token(4, 0), Error);

    auto all = v.all_tokens(2);
    CHECK(all.size() == 3 * 8 + 2);
    std::set<std::string> uniq(all.begin(), all.end());
    CHECK(uniq.size() == all.size());
}

TEST_CASE("build_trie basics") {
    SidAssignment a;
    a.levels = 3;
    a.codewords = 8;
    a.by_item["x"] = SidCode{{0, 1, 1}, 0};
    a.by_item["y"] = SidCode{{1, 1, 1}, 0};
    a.by_item["z"] = SidCode{{2, 1, 1}, 0};
    auto trie = build_trie(a);
    CHECK(trie.root.children.size() == 3);
    CHECK(trie.resolve({0, 1, 1}, std::nullopt) == "x");
    CHECK(trie.resolve({3, 1, 1}, std::nullopt) == std::nullopt);

    SUBCASE("duplicate path is rejected") {
        a.by_item["x2"] = SidCode{{0, 1, 1}, 0};
        CHECK_THROWS_AS(build_trie(a), Error);
    }
    SUBCASE("wrong code length is rejected") {
        a.by_item["bad"] = SidCode{{0, 1}, 0};
        CHECK_THROWS_AS(build_trie(a), Error);
    }
}

TEST_CASE("trie roundtrip on a 300-item assignment") {
    auto a = random_assignment(300, 3, 8, 5);
    auto trie = build_trie(a);
    for (const auto& [id, sc] : a.by_item) {
        auto plain = trie.resolve(sc.codes, std::nullopt);
        auto suffixed = trie.resolve(sc.codes, sc.disambiguation);
        if (plain)
            CHECK(*plain == id);  // unique tuple
        else
            CHECK(suffixed == id);  // collision resolved by suffix
    }
}

TEST_CASE("constrained_next equals brute-force prefix scan") {
    auto a = random_assignment(90, 3, 4, 7);
    auto trie = build_trie(a);

    auto brute = [&](const std::vector<size_t>& prefix) {
        std::set<size_t> next;
        for (const auto& [id, sc] : a.by_item) {
            std::vector<size_t> path = sc.codes;
            // collisions extend the path by their suffix
            if (!trie.resolve(sc.codes, std::nullopt)) path.push_back(sc.disambiguation);
            if (path.size() <= prefix.size()) continue;
            bool match = true;
            for (size_t i = 0; i < prefix.size(); ++i) match &= path[i] == prefix[i];
            if (match) next.insert(path[prefix.size()]);
        }
        return next;
    };

    // every prefix up to full depth
    std::vector<std::vector<size_t>> prefixes = {{}};
    for (size_t depth = 0; depth < 3; ++depth) {
        std::vector<std::vector<size_t>> grown;
        for (const auto& p : prefixes)
            for (size_t c = 0; c < 5; ++c) {
                auto q = p;
                q.push_back(c);
                grown.push_back(q);
            }
        for (const auto& p : grown) CHECK(constrained_next(trie, p).codes == brute(p));
        prefixes = grown;
    }

    SUBCASE("terminal markers") {
        for (const auto& [id, sc] : a.by_item) {
            if (trie.resolve(sc.codes, std::nullopt)) {
                auto n = constrained_next(trie, sc.codes);
                CHECK(n.terminal);
                CHECK(n.item_id == id);
            } else {
                auto full = sc.codes;
                full.push_back(sc.disambiguation);
                auto n = constrained_next(trie, full);
                CHECK(n.terminal);
                CHECK(n.item_id == id);
                CHECK_FALSE(constrained_next(trie, sc.codes).terminal);
            }
        }
    }
    SUBCASE("absent prefix gives the empty set") {
        auto n = constrained_next(trie, {99});
        CHECK(n.codes.empty());
        CHECK_FALSE(n.terminal);
    }
}

TEST_CASE("parse_sid_text") {
    SidVocab v;
    v.levels = 3;

    SUBCASE("plain SID") {
        auto p = parse_sid_text(v, "<a_5><b_2><c_7>");
        REQUIRE(p.ok);
        CHECK(p.codes == std::vector<size_t>({5, 2, 7}));
        CHECK_FALSE(p.disambiguation.has_value());
    }
    SUBCASE("level order is enforced") {
        CHECK_FALSE(parse_sid_text(v, "<b_2><a_5><c_7>").ok);
        CHECK_FALSE(parse_sid_text(v, "<a_5><c_7><b_2>").ok);
    }
    SUBCASE("last complete run wins") {
        auto p = parse_sid_text(
            v, "the user enjoys RPGs. candidates <a_1><b_1><c_1> and then answer: <a_2><b_3><c_4>");
        REQUIRE(p.ok);
        CHECK(p.codes == std::vector<size_t>({2, 3, 4}));
    }
    SUBCASE("tokens must be adjacent") {
        CHECK_FALSE(parse_sid_text(v, "<a_1> <b_2><c_3>").ok);
        auto p = parse_sid_text(v, "<a_9><a_1><b_2><c_3>");
        REQUIRE(p.ok);
        CHECK(p.codes == std::vector<size_t>({1, 2, 3}));
    }
    SUBCASE("adjacent suffix is captured, detached suffix is not") {
        auto p = parse_sid_text(v, "<a_1><b_2><c_3><d_1>");
        REQUIRE(p.ok);
        REQUIRE(p.disambiguation.has_value());
        CHECK(*p.disambiguation == 1);
        auto q = parse_sid_text(v, "<a_1><b_2><c_3> <d_1>");
        REQUIRE(q.ok);
        CHECK_FALSE(q.disambiguation.has_value());
    }
    SUBCASE("totality on garbage") {
        for (const char* s : {"", "<", "<a_>", "<a_1", "<e_1><f_2>", "plain text", "<a_1x>",
                              "<a_1><b_2>", "<<a_1><b_2><c_3"})
            CHECK_FALSE(parse_sid_text(v, s).ok);
    }
}

TEST_CASE("render_sid and parse roundtrip through the trie") {
    auto a = random_assignment(120, 3, 4, 9);
    auto trie = build_trie(a);
    SidVocab v;
    v.levels = 3;
    v.codewords = 4;
    bool saw_suffix = false;
    for (const auto& [id, sc] : a.by_item) {
        std::string text = render_sid(v, trie, sc);
        auto p = parse_sid_text(v, text);
        REQUIRE(p.ok);
        CHECK(trie.resolve(p) == id);
        saw_suffix |= p.disambiguation.has_value();
    }
    CHECK(saw_suffix);  // 120 items over 64 tuples must collide
}

TEST_CASE("compute_reward values") {
    SidAssignment a;
    a.levels = 3;
    a.codewords = 8;
    a.by_item["t"] = SidCode{{1, 2, 3}, 0};
    a.by_item["other"] = SidCode{{5, 5, 5}, 0};
    auto trie = build_trie(a);
    SidVocab v;
    v.levels = 3;
    SidCode truth{{1, 2, 3}, 0};

    auto r = [&](const std::string& text) { return compute_reward(v, text, truth, trie, 0.1); };

    SUBCASE("stepwise ladder") {
        CHECK(r("<a_1><b_2><c_3>").r_sr == 1.0);
        CHECK(r("<a_1><b_2><c_9>").r_sr == 0.5);
        CHECK(r("<a_1><b_9><c_9>").r_sr == 0.25);
        CHECK(r("<a_9><b_9><c_9>").r_sr == 0.125);
    }
    SUBCASE("exact match totals 1.1") {
        auto rb = r("<a_1><b_2><c_3>");
        CHECK(rb.m == 3);
        CHECK(rb.r_f == 1.0);
        CHECK(rb.total == doctest::Approx(1.1).epsilon(1e-12));
    }
    SUBCASE("catalog-valid item with no correct prefix totals 0.225") {
        auto rb = r("<a_5><b_5><c_5>");
        CHECK(rb.m == 0);
        CHECK(rb.r_f == 1.0);
        CHECK(rb.total == doctest::Approx(0.225).epsilon(1e-12));
    }
    SUBCASE("non-catalog prediction earns no format reward") {
        auto rb = r("<a_1><b_2><c_9>");
        CHECK(rb.r_f == 0.0);
        CHECK(rb.total == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("parse failure zeroes everything") {
        auto rb = r("no sid here");
        CHECK_FALSE(rb.parsed);
        CHECK(rb.total == 0.0);
        CHECK(rb.r_sr == 0.0);
    }
    SUBCASE("missing ground truth is a data error") {
        SidCode bogus{{7, 7, 7}, 0};
        CHECK_THROWS_AS(compute_reward(v, "<a_1><b_2><c_3>", bogus, trie, 0.1), Error);
    }
}

TEST_CASE("r_f soundness by exhaustive enumeration") {
    auto a = random_assignment(80, 3, 4, 13);
    auto trie = build_trie(a);
    SidVocab v;
    v.levels = 3;
    v.codewords = 4;
    SidCode truth = a.by_item.begin()->second;

    std::set<std::vector<size_t>> catalog_plain;  // tuples resolvable without suffix
    for (const auto& [id, sc] : a.by_item)
        if (trie.resolve(sc.codes, std::nullopt)) catalog_plain.insert(sc.codes);

    for (size_t c1 = 0; c1 < 5; ++c1)
        for (size_t c2 = 0; c2 < 5; ++c2)
            for (size_t c3 = 0; c3 < 5; ++c3) {
                ParsedSid p;
                p.ok = true;
                p.codes = {c1, c2, c3};
                auto rb = compute_reward(p, truth, trie, 0.1);
                bool in_catalog = catalog_plain.count(p.codes) > 0;
                CHECK(rb.r_f == (in_catalog ? 1.0 : 0.0));
                CHECK(rb.total >= 0.125);
                CHECK(rb.total <= 1.1);
            }

    SUBCASE("monotonicity in m") {
        double prev = -1.0;
        for (size_t m = 0; m <= 3; ++m) {
            ParsedSid p;
            p.ok = true;
            p.codes = truth.codes;
            for (size_t l = m; l < 3; ++l) p.codes[l] = (truth.codes[l] + 1) % 4 + 100;
            auto rb = compute_reward(p, truth, trie, 0.0);
            CHECK(rb.m == m);
            CHECK(rb.r_sr > prev);
            prev = rb.r_sr;
        }
        CHECK(prev == 1.0);
    }
}
