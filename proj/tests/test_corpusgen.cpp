#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "sidrec/corpusgen.hpp"
#include "test_util.hpp"

using namespace sidrec;
using namespace sidrec::corpus;

// the catalog behind the committed golden files
static SidCatalog appendix_catalog() {
    std::vector<data::Item> items = {
        {"game_ff8", "Final Fantasy VIII", "a role playing adventure", "Video Games"},
        {"game_zelda", "The Legend of Zelda: Spirit Tracks", "a top down adventure", "Video Games"},
        {"game_fifa", "FIFA Soccer 12 - Playstation 3", "a soccer simulation", "Video Games"},
        {"game_gt5", "PS3 Gran Turismo 5 XL Edition", "a racing simulation", "Video Games"},
        {"game_mlb", "MLB 13 The Show - Playstation 3", "a baseball simulation", "Video Games"},
        {"console_ps4", "PlayStation 4 500GB Console [Old Model][Discontinued]", "a home console",
         "Video Games"},
    };
    quant::SidAssignment a;
    a.levels = 3;
    a.codewords = 256;
    a.by_item["game_ff8"] = {{195, 133, 138}, 0};
    a.by_item["game_zelda"] = {{175, 83, 8}, 0};
    a.by_item["game_fifa"] = {{45, 88, 206}, 0};
    a.by_item["game_gt5"] = {{205, 247, 168}, 0};
    a.by_item["game_mlb"] = {{45, 190, 242}, 0};
    a.by_item["console_ps4"] = {{231, 28, 63}, 0};
    return SidCatalog::build(items, a);
}

static const std::vector<std::string> kSeq = {"game_fifa", "game_gt5", "game_mlb", "console_ps4"};

static std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TEST_CASE("cases 1-6 reproduce the committed golden files byte-for-byte") {
    auto cat = appendix_catalog();
    for (int c = 1; c <= 6; ++c) {
        auto ids = c <= 2 ? std::vector<std::string>{c == 1 ? "game_ff8" : "game_zelda"} : kSeq;
        auto ex = render_alignment_example(c, cat, ids);
        CHECK(ex.prompt + ex.target ==
              slurp(fixture_path("golden/case" + std::to_string(c) + ".txt")));
        // rendering twice gives identical bytes
        auto again = render_alignment_example(c, cat, ids);
        CHECK(ex.prompt == again.prompt);
        CHECK(ex.target == again.target);
    }
}

TEST_CASE("rendered targets carry the expected answer span") {
    auto cat = appendix_catalog();
    auto c1 = render_alignment_example(1, cat, {"game_ff8"});
    CHECK(c1.target == "<a_195><b_133><c_138><|im_end|>");
    CHECK(c1.prompt.find("Which item has the title: \"Final Fantasy VIII\"?") != std::string::npos);
    auto c5 = render_alignment_example(5, cat, kSeq);
    CHECK(c5.target == "<a_231><b_28><c_63><|im_end|>");
    CHECK(c5.tag == TaskTag::seqsid2sid);
    auto c3 = render_alignment_example(3, cat, kSeq);
    CHECK(c3.target == "\"PlayStation 4 500GB Console [Old Model][Discontinued]\"<|im_end|>");
}

TEST_CASE("rendering errors") {
    auto cat = appendix_catalog();
    CHECK_THROWS_AS(render_alignment_example(1, cat, {"missing_item"}), Error);
    CHECK_THROWS_AS(render_alignment_example(3, cat, {"game_ff8"}), Error);
    CHECK_THROWS_AS(render_alignment_example(9, cat, kSeq), Error);
}

TEST_CASE("every SID string in a generated corpus parses") {
    auto cat = appendix_catalog();
    std::vector<AlignmentExample> corpus;
    for (int c = 1; c <= 6; ++c)
        corpus.push_back(render_alignment_example(
            c, cat, c <= 2 ? std::vector<std::string>{"game_ff8"} : kSeq));
    corpus.push_back(synth_enrichment(EnrichKind::item, cat, {"game_zelda"},
                                      EnrichSource::fallback, 1));
    corpus.push_back(synth_enrichment(EnrichKind::user, cat, kSeq, EnrichSource::fallback, 1));
    corpus.push_back(coldstart_reason_example(cat, kSeq, 1));

    size_t sid_texts = 0;
    for (const auto& ex : corpus) {
        for (const std::string* text : {&ex.prompt, &ex.target}) {
            if (text->find("<a_") == std::string::npos) continue;
            ++sid_texts;
            CHECK(sid::parse_sid_text(cat.vocab, *text).ok);
        }
    }
    CHECK(sid_texts > 6);
}

TEST_CASE("teacher_chat against a scripted mock server") {
    httplib::Server svr;
    std::atomic<int> calls{0};
    std::string seen_auth;
    svr.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        int n = ++calls;
        seen_auth = req.get_header_value("Authorization");
        if (n <= 2) {
            res.status = 429;
            return;
        }
        auto body = nlohmann::json::parse(req.body);
        nlohmann::json reply;
        reply["choices"][0]["message"]["content"] =
            "echo: " + body["messages"][0]["content"].get<std::string>();
        res.set_content(reply.dump(), "application/json");
    });
    int port = svr.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread srv_thread([&] { svr.listen_after_bind(); });
    svr.wait_until_ready();

    setenv("SIDREC_TEST_KEY", "secret-key", 1);
    TeacherConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.model = "mock";
    cfg.api_key_env = "SIDREC_TEST_KEY";
    cfg.max_retries = 3;
    cfg.backoff_ms = 2;

    SUBCASE("429 twice then success, backoff recorded") {
        std::vector<size_t> backoffs;
        std::string out = teacher_chat(cfg, {{"user", "hello"}}, &backoffs);
        CHECK(out == "echo: hello");
        CHECK(backoffs == std::vector<size_t>({2, 4}));
        CHECK(seen_auth == "Bearer secret-key");
    }
    SUBCASE("retries exhausted carries the last status") {
        calls = -100;  // keep the mock in 429 mode for all attempts
        try {
            teacher_chat(cfg, {{"user", "hi"}});
            FAIL("expected error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("429") != std::string::npos);
        }
    }
    SUBCASE("missing env var fails before any network call") {
        int before = calls;
        TeacherConfig bad = cfg;
        bad.api_key_env = "SIDREC_NO_SUCH_KEY";
        try {
            teacher_chat(bad, {{"user", "hi"}});
            FAIL("expected error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("SIDREC_NO_SUCH_KEY") != std::string::npos);
        }
        CHECK(calls == before);
    }

    svr.stop();
    srv_thread.join();
}

TEST_CASE("item enrichment fallback is deterministic and validated") {
    auto cat = appendix_catalog();
    auto e1 = synth_enrichment(EnrichKind::item, cat, {"game_zelda"}, EnrichSource::fallback, 42);
    auto e2 = synth_enrichment(EnrichKind::item, cat, {"game_zelda"}, EnrichSource::fallback, 42);
    CHECK(e1.target == e2.target);
    CHECK(e1.tag == TaskTag::item_enrich);

    std::string sid = cat.sid_string("game_zelda");
    size_t hits = 0;
    for (size_t p = e1.target.find(sid); p != std::string::npos;
         p = e1.target.find(sid, p + 1))
        ++hits;
    CHECK(hits >= 2);
    CHECK(e1.target.find("The Legend of Zelda") == std::string::npos);
    CHECK(validate_enrichment(EnrichKind::item, cat, {"game_zelda"}, e1.target));
}

TEST_CASE("user enrichment recites all history SIDs") {
    auto cat = appendix_catalog();
    auto ex = synth_enrichment(EnrichKind::user, cat, kSeq, EnrichSource::fallback, 7);
    CHECK(ex.tag == TaskTag::user_enrich);
    for (size_t i = 0; i + 1 < kSeq.size(); ++i)
        CHECK(ex.target.find(cat.sid_string(kSeq[i])) != std::string::npos);
    CHECK(validate_enrichment(EnrichKind::user, cat, kSeq, ex.target));
}

TEST_CASE("teacher output failing validation falls back") {
    httplib::Server svr;
    svr.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        nlohmann::json reply;
        reply["choices"][0]["message"]["content"] = "useless text without any identifiers";
        res.set_content(reply.dump(), "application/json");
    });
    int port = svr.bind_to_any_port("127.0.0.1");
    std::thread srv_thread([&] { svr.listen_after_bind(); });
    svr.wait_until_ready();

    setenv("SIDREC_TEST_KEY", "secret-key", 1);
    TeacherConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.model = "mock";
    cfg.api_key_env = "SIDREC_TEST_KEY";
    cfg.backoff_ms = 1;

    auto cat = appendix_catalog();
    auto ex = synth_enrichment(EnrichKind::item, cat, {"game_ff8"}, EnrichSource::teacher, 3, &cfg);
    // fallback produced a valid paragraph despite the broken teacher
    CHECK(validate_enrichment(EnrichKind::item, cat, {"game_ff8"}, ex.target));

    svr.stop();
    srv_thread.join();
}

TEST_CASE("coldstart example ends with the target SID") {
    auto cat = appendix_catalog();
    auto ex = coldstart_reason_example(cat, kSeq, 5);
    CHECK(ex.tag == TaskTag::coldstart_reason);
    auto parsed = sid::parse_sid_text(cat.vocab, ex.target);
    REQUIRE(parsed.ok);
    CHECK(parsed.codes == cat.assignment.by_item.at("console_ps4").codes);
    // reasoning precedes the final answer
    CHECK(ex.target.find(cat.sid_string("game_fifa")) <
          ex.target.rfind(cat.sid_string("console_ps4")));
}

TEST_CASE("load_general_reasoning fixture") {
    auto general = load_general_reasoning(fixture_path("general_reasoning.jsonl"));
    CHECK(general.size() == 16);
    for (const auto& ex : general) {
        CHECK(ex.tag == TaskTag::general);
        CHECK(ex.prompt.find("<|im_start|>assistant\n") != std::string::npos);
        CHECK(ex.target.find("The answer is") != std::string::npos);
    }
}

static std::map<TaskTag, std::vector<AlignmentExample>> two_sources(size_t n_a, size_t n_b) {
    std::map<TaskTag, std::vector<AlignmentExample>> src;
    for (size_t i = 0; i < n_a; ++i)
        src[TaskTag::title2sid].push_back({TaskTag::title2sid, "pa" + std::to_string(i), "t"});
    for (size_t i = 0; i < n_b; ++i)
        src[TaskTag::general].push_back({TaskTag::general, "pb" + std::to_string(i), "t"});
    return src;
}

TEST_CASE("build_mixture proportions") {
    auto src = two_sources(20, 20);
    auto count = [](const std::vector<AlignmentExample>& v, TaskTag t) {
        size_t n = 0;
        for (const auto& e : v) n += e.tag == t;
        return n;
    };

    SUBCASE("equal weights, budget 10 gives 5+5") {
        MixtureSpec spec;
        spec.weights = {{TaskTag::title2sid, 1.0}, {TaskTag::general, 1.0}};
        spec.budget = 10;
        auto mix = build_mixture(src, spec);
        CHECK(mix.size() == 10);
        CHECK(count(mix, TaskTag::title2sid) == 5);
        CHECK(count(mix, TaskTag::general) == 5);
    }
    SUBCASE("2:1 weights, budget 9 gives 6+3") {
        MixtureSpec spec;
        spec.weights = {{TaskTag::title2sid, 2.0}, {TaskTag::general, 1.0}};
        spec.budget = 9;
        auto mix = build_mixture(src, spec);
        CHECK(count(mix, TaskTag::title2sid) == 6);
        CHECK(count(mix, TaskTag::general) == 3);
    }
    SUBCASE("counts stay within 1 of exact proportionality") {
        MixtureSpec spec;
        spec.weights = {{TaskTag::title2sid, 3.0}, {TaskTag::general, 2.0}};
        spec.budget = 17;
        auto mix = build_mixture(src, spec);
        CHECK(std::abs(double(count(mix, TaskTag::title2sid)) - 17.0 * 3 / 5) <= 1.0);
        CHECK(std::abs(double(count(mix, TaskTag::general)) - 17.0 * 2 / 5) <= 1.0);
        CHECK(mix.size() == 17);
    }
    SUBCASE("same spec twice gives identical order") {
        MixtureSpec spec;
        spec.weights = {{TaskTag::title2sid, 1.0}, {TaskTag::general, 1.0}};
        spec.budget = 12;
        spec.seed = 9;
        auto m1 = build_mixture(src, spec);
        auto m2 = build_mixture(src, spec);
        for (size_t i = 0; i < m1.size(); ++i) CHECK(m1[i].prompt == m2[i].prompt);
    }
    SUBCASE("positive weight with empty source is an error") {
        MixtureSpec spec;
        spec.weights = {{TaskTag::title2sid, 1.0}, {TaskTag::user_enrich, 1.0}};
        spec.budget = 4;
        CHECK_THROWS_AS(build_mixture(src, spec), Error);
    }
    SUBCASE("short source cycles deterministically") {
        auto small = two_sources(2, 20);
        MixtureSpec spec;
        spec.weights = {{TaskTag::title2sid, 1.0}, {TaskTag::general, 1.0}};
        spec.budget = 8;
        auto mix = build_mixture(small, spec);
        CHECK(count(mix, TaskTag::title2sid) == 4);
    }
}

TEST_CASE("corpus file roundtrip") {
    auto cat = appendix_catalog();
    std::vector<AlignmentExample> corpus = {
        render_alignment_example(1, cat, {"game_ff8"}),
        coldstart_reason_example(cat, kSeq, 2),
    };
    write_corpus("/tmp/sidrec_corpus.jsonl", corpus);
    auto back = load_corpus("/tmp/sidrec_corpus.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].tag == TaskTag::title2sid);
    CHECK(back[0].prompt == corpus[0].prompt);
    CHECK(back[1].target == corpus[1].target);

    std::ofstream("/tmp/sidrec_corpus_bad.jsonl") << "{\"task_tag\":\"title2sid\"}\n";
    CHECK_THROWS_AS(load_corpus("/tmp/sidrec_corpus_bad.jsonl"), Error);
}
