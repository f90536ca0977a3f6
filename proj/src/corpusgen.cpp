#include "sidrec/corpusgen.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace sidrec::corpus {

namespace {

const char* kTagNames[] = {"title2sid",   "sid2title",   "seqsid2title", "seqtitle2title",
                           "seqsid2sid",  "seqtitle2sid", "item_enrich",  "user_enrich",
                           "general",     "coldstart_reason"};

constexpr const char* kPreamble =
    "Below is an instruction that describes a task, paired with an input that provides further "
    "context. Write a response that appropriately completes the request.";

std::string chat_prompt(const std::string& system, const std::string& user) {
    return "<|im_start|>system\n" + system + "<|im_end|>\n<|im_start|>user\n" + user +
           "<|im_end|>\n<|im_start|>assistant\n";
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::vector<std::string> lower_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur += char(std::tolower(static_cast<unsigned char>(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

size_t count_occurrences(const std::string& text, const std::string& needle) {
    if (needle.empty()) return 0;
    size_t n = 0;
    for (size_t pos = text.find(needle); pos != std::string::npos;
         pos = text.find(needle, pos + needle.size()))
        ++n;
    return n;
}

}  // namespace

std::string tag_name(TaskTag tag) { return kTagNames[size_t(tag)]; }

TaskTag parse_tag(const std::string& name) {
    for (size_t i = 0; i < std::size(kTagNames); ++i)
        if (name == kTagNames[i]) return TaskTag(i);
    throw Error("corpus: unknown task tag '" + name + "'");
}

SidCatalog SidCatalog::build(const std::vector<data::Item>& items,
                             const quant::SidAssignment& assignment) {
    SidCatalog c;
    for (const auto& it : items) c.items[it.item_id] = it;
    c.assignment = assignment;
    c.vocab.levels = assignment.levels;
    c.vocab.codewords = assignment.codewords;
    c.trie = sid::build_trie(assignment);
    return c;
}

const data::Item& SidCatalog::item(const std::string& item_id) const {
    auto it = items.find(item_id);
    if (it == items.end()) throw Error("corpus: unknown item " + item_id);
    return it->second;
}

std::string SidCatalog::sid_string(const std::string& item_id) const {
    auto it = assignment.by_item.find(item_id);
    if (it == assignment.by_item.end()) throw Error("corpus: item " + item_id + " has no SID");
    return sid::render_sid(vocab, trie, it->second);
}

AlignmentExample render_alignment_example(int case_id, const SidCatalog& catalog,
                                          const std::vector<std::string>& item_ids) {
    if (item_ids.empty()) throw Error("render_alignment_example: no items given");
    if (case_id >= 3 && item_ids.size() < 2)
        throw Error("render_alignment_example: cases 3-6 need a history plus a target");

    AlignmentExample ex;
    if (case_id == 1 || case_id == 2) {
        const data::Item& it = catalog.item(item_ids[0]);
        std::string sid = catalog.sid_string(item_ids[0]);
        std::string system = std::string(kPreamble) + "\nAnswer the question about item identification.";
        if (case_id == 1) {
            ex.tag = TaskTag::title2sid;
            ex.prompt = chat_prompt(system, "Which item has the title: " + quoted(it.title) + "?");
            ex.target = sid + "<|im_end|>";
        } else {
            ex.tag = TaskTag::sid2title;
            ex.prompt = chat_prompt(system, "What is the title of item " + sid + "?");
            ex.target = quoted(it.title) + "<|im_end|>";
        }
        return ex;
    }

    std::vector<std::string> history(item_ids.begin(), item_ids.end() - 1);
    const std::string& target_id = item_ids.back();
    std::vector<std::string> sids, titles;
    for (const auto& id : history) {
        sids.push_back(catalog.sid_string(id));
        titles.push_back(quoted(catalog.item(id).title));
    }
    std::string sid_list = join(sids, ", ");
    std::string title_list = join(titles, ", ");
    std::string target_sid = catalog.sid_string(target_id);
    std::string target_title = quoted(catalog.item(target_id).title);

    switch (case_id) {
        case 3:
            ex.tag = TaskTag::seqsid2title;
            ex.prompt = chat_prompt(
                std::string(kPreamble) +
                    "Can you recommend the next item for the user based on their interaction history?",
                "The user has sequentially interacted with items " + sid_list +
                    ". Can you recommend the next item for him? Tell me the title of the item?");
            ex.target = target_title + "<|im_end|>";
            break;
        case 4:
            ex.tag = TaskTag::seqtitle2title;
            ex.prompt = chat_prompt(
                std::string(kPreamble) +
                    "Given a list of games the user recently enjoy, please write a new game that the "
                    "user may bought.",
                "The user has played the following games before:" + title_list + "?");
            ex.target = target_title + "<|im_end|>";
            break;
        case 5:
            ex.tag = TaskTag::seqsid2sid;
            ex.prompt = chat_prompt(
                std::string(kPreamble) +
                    " Can you predict the next possible item that the user may expect?",
                "The user has interacted with items " + sid_list +
                    " in chronological order. Can you predict the next possible item that the user "
                    "may expect?");
            ex.target = target_sid + "<|im_end|>";
            break;
        case 6:
            ex.tag = TaskTag::seqtitle2sid;
            ex.prompt = chat_prompt(
                std::string(kPreamble) +
                    " Based on the user's historical interaction with item titles, predict the "
                    "semantic ID of the next item they may expect.",
                "The user has interacted with the following games items in chronological order: " +
                    title_list + ". Can you predict the next item the user may expect?");
            ex.target = target_sid + "<|im_end|>";
            break;
        default:
            throw Error("render_alignment_example: case_id must be 1..6, got " +
                        std::to_string(case_id));
    }
    return ex;
}

// ---------------------------------------------------------------------------
// teacher client

std::string teacher_chat(const TeacherConfig& config, const std::vector<ChatMessage>& messages,
                         std::vector<size_t>* backoff_log) {
    const char* key = config.api_key_env.empty() ? nullptr : std::getenv(config.api_key_env.c_str());
    if (!key || !*key)
        throw Error("teacher: API key environment variable '" + config.api_key_env +
                    "' is not set");

    // split endpoint into base url and path
    size_t scheme = config.endpoint.find("://");
    if (scheme == std::string::npos) throw Error("teacher: endpoint must be a full URL");
    size_t path_pos = config.endpoint.find('/', scheme + 3);
    std::string base = path_pos == std::string::npos ? config.endpoint
                                                     : config.endpoint.substr(0, path_pos);
    std::string path = path_pos == std::string::npos ? "/" : config.endpoint.substr(path_pos);

    nlohmann::ordered_json body;
    body["model"] = config.model;
    body["messages"] = nlohmann::json::array();
    for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    body["temperature"] = config.temperature;
    std::string payload = body.dump();

    std::string last_failure = "no attempt made";
    for (size_t attempt = 0; attempt <= config.max_retries; ++attempt) {
        if (attempt > 0) {
            size_t delay = config.backoff_ms << (attempt - 1);
            if (backoff_log) backoff_log->push_back(delay);
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        }
        httplib::Client cli(base);
        cli.set_connection_timeout(std::chrono::milliseconds(size_t(config.timeout_seconds * 1000)));
        cli.set_read_timeout(std::chrono::milliseconds(size_t(config.timeout_seconds * 1000)));
        httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};
        auto res = cli.Post(path, headers, payload, "application/json");
        if (!res) {
            last_failure = "connection error (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_failure = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw Error("teacher: HTTP " + std::to_string(res->status) + ": " + res->body);
        try {
            auto j = nlohmann::json::parse(res->body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(std::string("teacher: malformed response: ") + e.what());
        }
    }
    throw Error("teacher: retries exhausted, last failure: " + last_failure);
}

// ---------------------------------------------------------------------------
// enrichment

namespace {

// description-derived vocabulary with title words removed, padded if sparse
std::vector<std::string> safe_words(const data::Item& it, size_t want) {
    std::vector<std::string> title_ws = lower_words(it.title);
    std::vector<std::string> out;
    for (const auto& w : lower_words(it.description + " " + it.category))
        if (std::find(title_ws.begin(), title_ws.end(), w) == title_ws.end()) out.push_back(w);
    const char* pad[] = {"versatile", "engaging", "polished", "dependable", "distinctive",
                         "immersive", "refined",   "memorable"};
    for (size_t i = 0; out.size() < want; ++i) out.push_back(pad[i % std::size(pad)]);
    return out;
}

std::string item_fallback_text(const SidCatalog& catalog, const std::string& item_id,
                               uint64_t seed) {
    const data::Item& it = catalog.item(item_id);
    std::string s = catalog.sid_string(item_id);
    Rng rng(hash_mix(seed, fnv1a64(item_id)));
    const char* openers[] = {"Introducing", "Meet", "Consider"};
    const char* verdicts[] = {"a dependable pick", "an easy recommendation", "a standout choice"};
    auto w = safe_words(it, 6);
    std::string cat = it.category.empty() ? "general catalog" : it.category;
    std::string text;
    text += std::string(openers[rng.below(3)]) + " " + s + ", a " + cat +
            " release defined by " + w[0] + ", " + w[1] + ", and " + w[2] + ". ";
    text += "Shoppers drawn to " + cat + " experiences will find that " + s +
            " rewards repeat sessions, pairing " + w[3] + " with " + w[4] + ". ";
    text += "Its " + w[5] + " character keeps " + s + " " + verdicts[rng.below(3)] +
            " for anyone building out a " + cat + " collection.";
    return text;
}

std::string user_fallback_text(const SidCatalog& catalog, const std::vector<std::string>& history,
                               const std::string& target_id, uint64_t seed) {
    Rng rng(hash_mix(seed, fnv1a64(target_id)));
    std::vector<std::string> sids;
    for (const auto& id : history) sids.push_back(catalog.sid_string(id));
    const char* openers[] = {"The user has engaged with", "This journey moves through",
                             "The interaction record covers"};
    std::string text = std::string(openers[rng.below(3)]) + " " + join(sids, ", ") +
                       " in chronological order. ";
    text += "The sequence opened with " + sids.front() + ", a " +
            catalog.item(history.front()).category + " pick that set the tone for what followed. ";
    if (sids.size() > 1)
        text += "Later steps such as " + sids.back() + " show the interest settling around " +
                catalog.item(history.back()).category + " experiences. ";
    text += "Taken together, these choices suggest the user tends to prefer " +
            catalog.item(target_id).category +
            " material and may enjoy a continuation of that thread, pointing toward " +
            catalog.sid_string(target_id) + ".";
    return text;
}

std::vector<ChatMessage> item_stage1_prompt(const data::Item& it) {
    std::string p =
        "You are an expert recommendation system analyst analyzing user behavior patterns.\n\n"
        "Your goal is to reason through the user's  history and predict what the item the user "
        "would be interested in, explaining your reasoning process from your analytical "
        "perspective in first person.\n\n"
        "Based on the following product information, generate a comprehensive analysis:\n\n"
        "Title: " + it.title + "\nCategory: " + it.category + "\nDescription: " + it.description +
        "\n\nPlease provide:\n\n"
        "1. A detailed 2-3 sentence description\n\n"
        "2. 2-3 main use cases\n\n"
        "3. Target audience\n\n"
        "4. 3-5 key features summary\n\n"
        "5. 5-8 related keywords";
    return {{"user", p}};
}

std::vector<ChatMessage> item_stage2_prompt(const data::Item& it, const std::string& sid,
                                            const std::string& stage1) {
    std::string p =
        "You are a senior copywriter preparing an in-depth narrative for a product dossier.\n\n"
        "- Source Meta Information: Title: " + it.title + " Categories: " + it.category +
        " Description: " + it.description + "\n\n"
        "- Product Semantic Identifier (use this exact string whenever you mention the product): " +
        sid + "\n\n"
        "- Enrichment from Stage 1: " + stage1 + "\n\n"
        "Task:\n\n"
        "1. Combine ALL of the information above into a single rich and coherent narrative of at "
        "least 10 sentences. Include every important fact,Detailed Description,scenario,Target "
        "Audience,audience insight, feature highlight, and keyword context that appears in the "
        "sources.\n\n"
        "2. Every reference to the product must use the identifier " + sid +
        ". Do NOT use the title or any other alias.\n\n"
        "3. Ensure the result reads like a rich, flowing paragraph (no bullet points, headings, or "
        "enumerations). Maintain a professional and descriptive tone suitable for a product "
        "catalog.\n\n"
        "4. Highlight how " + sid + " fits different use cases, why its features matter, and draw "
        "from both original data and first-stage enhancements without omitting details.";
    return {{"user", p}};
}

std::vector<ChatMessage> user_stage1_prompt(const SidCatalog& catalog,
                                            const std::vector<std::string>& history,
                                            const std::string& target_id) {
    std::vector<std::string> titles, descs;
    for (const auto& id : history) {
        titles.push_back(quoted(catalog.item(id).title));
        descs.push_back(catalog.item(id).description);
    }
    std::string p =
        "You are an expert recommendation system analyst analyzing user behavior patterns.\n\n"
        "Your goal is to reason through the user's  history and predict what the item the user "
        "would be interested in, explaining your reasoning process from your analytical "
        "perspective in first person.\n\n"
        "Given user interaction history, item descriptions, and reference next item, produce a "
        "concise first-person reasoning from an analyst's perspective to predict what kind of "
        "item the user may like in the next interactions. The reference item is only for internal "
        "guidance—reason entirely based on interaction history and item descriptions. Never "
        "mention or discuss the reference item in your reasoning. Write as a genuine real-time "
        "prediction analyzing user behavior patterns.\n\n"
        "User Interaction history: " + join(titles, ", ") + "\n\n"
        "Reference next item: " + quoted(catalog.item(target_id).title) + "\n\n"
        "Item Descriptions: " + join(descs, " | ") + "\n\n"
        "OUTPUT REQUIREMENTS:\n\n"
        "1. Output ONLY reasoning monologue in first person (I) as an analyst. Keep concise but "
        "detailed.Vary sentence structures to avoid repetition.\n\n"
        "2. Analyze general user preferences (genres, themes, attributes, motivations) and "
        "engagement patterns based on history.\n\n"
        "3. Express potential interests or tendencies rather than deterministic conclusions or "
        "single outcomes.\n\n"
        "4. Adapt depth to history length: brief key observations for short histories; "
        "step-by-step tracing of interest shifts for longer ones. Base predictions on observed "
        "patterns.\n\n"
        "5. CRITICAL: Always use ONLY the SID format when referring to items. Never use titles, "
        "names, or 'Item SID:' prefixes.\n\n"
        "6. Never mention 'reference item' or imply knowledge of the target. Reason as if "
        "predicting blindly.\n\n"
        "7. Start directly with reasoning. Do NOT predict a specific next item. End with a "
        "non-deterministic summary of likely interests (e.g., 'may enjoy', 'tends to prefer').\n\n"
        "Your Reasoning:";
    return {{"user", p}};
}

std::vector<ChatMessage> user_stage2_prompt(const SidCatalog& catalog,
                                            const std::vector<std::string>& history,
                                            const std::string& target_id,
                                            const std::string& stage1) {
    std::vector<std::string> pairs;
    for (const auto& id : history)
        pairs.push_back(quoted(catalog.item(id).title) + " " + catalog.sid_string(id));
    std::string p =
        "Integrate the following information into a single, coherent, natural narrative "
        "paragraph:\n\n"
        "User interaction history: " + join(pairs, ", ") + "\n\n"
        "Reference next item: " + quoted(catalog.item(target_id).title) + " " +
        catalog.sid_string(target_id) + "\n\n"
        "Reasoning path from stage 1: " + stage1 + "\n\n"
        "OUTPUT REQUIREMENTS:\n\n"
        "1. Start your narrative by explicitly reciting the full 'User Interaction history "
        "(chronological item SIDs)' sequence EXACTLY as provided, but use varied and natural "
        "opening phrases. Ensure the full sequence is included to establish context.\n\n"
        "2. Write in a natural, flowing style—avoid mechanical or formulaic language in the "
        "subsequent analysis. Make it read like a genuine narrative.\n\n"
        "3. Preserve the essential reasoning insights from the reasoning path—don't just "
        "summarize, but naturally incorporate the key analytical points and logic.\n\n"
        "4. When mentioning any item, ALWAYS use its SID (format: <a_XXX><b_YYY><c_ZZZ>)—never "
        "use item titles or names.\n\n"
        "5. Keep the narrative natural and engaging.\n\n"
        "Integrated Narrative:";
    return {{"user", p}};
}

}  // namespace

bool validate_enrichment(EnrichKind kind, const SidCatalog& catalog,
                         const std::vector<std::string>& item_ids, const std::string& text) {
    if (kind == EnrichKind::item) {
        const data::Item& it = catalog.item(item_ids[0]);
        return count_occurrences(text, catalog.sid_string(item_ids[0])) >= 2 &&
               count_occurrences(text, it.title) == 0;
    }
    // user kind: every history SID must appear
    for (size_t i = 0; i + 1 < item_ids.size(); ++i)
        if (count_occurrences(text, catalog.sid_string(item_ids[i])) == 0) return false;
    return true;
}

AlignmentExample synth_enrichment(EnrichKind kind, const SidCatalog& catalog,
                                  const std::vector<std::string>& item_ids, EnrichSource source,
                                  uint64_t seed, const TeacherConfig* teacher) {
    if (item_ids.empty()) throw Error("synth_enrichment: no items given");
    if (kind == EnrichKind::user && item_ids.size() < 2)
        throw Error("synth_enrichment: user kind needs a history plus a target");
    std::vector<std::string> history(item_ids.begin(),
                                     kind == EnrichKind::user ? item_ids.end() - 1 : item_ids.end());
    const std::string& target_id = item_ids.back();

    std::string text;
    if (source == EnrichSource::teacher) {
        if (!teacher) throw Error("synth_enrichment: teacher source without a TeacherConfig");
        for (int attempt = 0; attempt < 2 && text.empty(); ++attempt) {
            std::string stage1, stage2;
            if (kind == EnrichKind::item) {
                stage1 = teacher_chat(*teacher, item_stage1_prompt(catalog.item(item_ids[0])));
                stage2 = teacher_chat(*teacher, item_stage2_prompt(catalog.item(item_ids[0]),
                                                                   catalog.sid_string(item_ids[0]),
                                                                   stage1));
            } else {
                stage1 = teacher_chat(*teacher, user_stage1_prompt(catalog, history, target_id));
                stage2 = teacher_chat(*teacher,
                                      user_stage2_prompt(catalog, history, target_id, stage1));
            }
            if (validate_enrichment(kind, catalog, item_ids, stage2)) text = stage2;
        }
        if (text.empty()) {
            std::fprintf(stderr,
                         "warning: teacher enrichment failed validation twice, using fallback\n");
            source = EnrichSource::fallback;
        }
    }
    if (source == EnrichSource::fallback) {
        text = kind == EnrichKind::item ? item_fallback_text(catalog, item_ids[0], seed)
                                        : user_fallback_text(catalog, history, target_id, seed);
        if (!validate_enrichment(kind, catalog, item_ids, text))
            throw Error("synth_enrichment: fallback text failed validation for " + target_id);
    }

    AlignmentExample ex;
    if (kind == EnrichKind::item) {
        ex.tag = TaskTag::item_enrich;
        ex.prompt = chat_prompt(std::string(kPreamble) + "\nDescribe the item in detail.",
                                "Tell me about item " + catalog.sid_string(item_ids[0]) + ".");
    } else {
        std::vector<std::string> sids;
        for (const auto& id : history) sids.push_back(catalog.sid_string(id));
        ex.tag = TaskTag::user_enrich;
        ex.prompt = chat_prompt(
            std::string(kPreamble) +
                "\nTell the story of the user's interaction history and what it suggests.",
            "The user has interacted with items " + join(sids, ", ") +
                " in chronological order. Describe this user's journey and preferences.");
    }
    ex.target = text + "<|im_end|>";
    return ex;
}

AlignmentExample coldstart_reason_example(const SidCatalog& catalog,
                                          const std::vector<std::string>& item_ids, uint64_t seed) {
    if (item_ids.size() < 2)
        throw Error("coldstart_reason_example: need a history plus a target");
    std::vector<std::string> history(item_ids.begin(), item_ids.end() - 1);
    const std::string& target_id = item_ids.back();
    std::vector<std::string> sids;
    for (const auto& id : history) sids.push_back(catalog.sid_string(id));

    AlignmentExample ex;
    ex.tag = TaskTag::coldstart_reason;
    ex.prompt = chat_prompt(
        std::string(kPreamble) +
            " Can you predict the next possible item that the user may expect? Think about the "
            "user's preferences step by step before answering with the item's Semantic ID.",
        "The user has interacted with items " + join(sids, ", ") +
            " in chronological order. Can you predict the next possible item that the user may "
            "expect?");
    std::string reasoning = user_fallback_text(catalog, history, target_id, seed);
    ex.target = reasoning + "\nThe next item is " + catalog.sid_string(target_id) + "<|im_end|>";
    return ex;
}

std::vector<AlignmentExample> load_general_reasoning(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_general_reasoning: cannot open " + path);
    std::vector<AlignmentExample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("question") || !j.contains("reasoning") ||
            !j.contains("answer"))
            throw Error("load_general_reasoning: line " + std::to_string(lineno) +
                        ": expected keys question, reasoning, answer");
        AlignmentExample ex;
        ex.tag = TaskTag::general;
        ex.prompt = chat_prompt(std::string(kPreamble) + "\nSolve the problem step by step.",
                                j.at("question").get<std::string>());
        ex.target = j.at("reasoning").get<std::string>() + " The answer is " +
                    j.at("answer").get<std::string>() + ".<|im_end|>";
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<AlignmentExample> build_mixture(
    const std::map<TaskTag, std::vector<AlignmentExample>>& sources, const MixtureSpec& spec) {
    double total_w = 0.0;
    for (const auto& [tag, w] : spec.weights) {
        if (w < 0.0) throw Error("build_mixture: negative weight for " + tag_name(tag));
        total_w += w;
    }
    if (total_w <= 0.0) throw Error("build_mixture: all weights are zero");

    // largest-remainder apportionment of the budget
    std::vector<std::pair<TaskTag, double>> active;
    for (const auto& [tag, w] : spec.weights)
        if (w > 0.0) {
            auto src = sources.find(tag);
            if (src == sources.end() || src->second.empty())
                throw Error("build_mixture: weight > 0 but no examples for " + tag_name(tag));
            active.push_back({tag, w});
        }
    std::vector<size_t> counts(active.size());
    std::vector<std::pair<double, size_t>> remainders;
    size_t assigned = 0;
    for (size_t i = 0; i < active.size(); ++i) {
        double exact = double(spec.budget) * active[i].second / total_w;
        counts[i] = size_t(exact);
        assigned += counts[i];
        remainders.push_back({exact - double(counts[i]), i});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (size_t i = 0; assigned < spec.budget; ++i, ++assigned)
        ++counts[remainders[i % remainders.size()].second];

    std::vector<AlignmentExample> out;
    for (size_t i = 0; i < active.size(); ++i) {
        const auto& src = sources.at(active[i].first);
        for (size_t k = 0; k < counts[i]; ++k) out.push_back(src[k % src.size()]);
    }
    Rng rng(spec.seed);
    for (size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.below(i)]);
    return out;
}

void write_corpus(const std::string& path, const std::vector<AlignmentExample>& corpus) {
    std::ofstream out(path);
    if (!out) throw Error("write_corpus: cannot open " + path);
    for (const auto& ex : corpus) {
        nlohmann::ordered_json j;
        j["task_tag"] = tag_name(ex.tag);
        j["prompt"] = ex.prompt;
        j["target"] = ex.target;
        out << j.dump() << "\n";
    }
}

std::vector<AlignmentExample> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_corpus: cannot open " + path);
    std::vector<AlignmentExample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("task_tag") || !j.contains("prompt") ||
            !j.contains("target"))
            throw Error("load_corpus: line " + std::to_string(lineno) +
                        ": expected keys task_tag, prompt, target");
        AlignmentExample ex;
        ex.tag = parse_tag(j.at("task_tag").get<std::string>());
        ex.prompt = j.at("prompt").get<std::string>();
        ex.target = j.at("target").get<std::string>();
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace sidrec::corpus
