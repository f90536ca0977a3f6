#pragma once

#include <map>
#include <string>
#include <vector>

#include "sidrec/dataio.hpp"
#include "sidrec/quantizer.hpp"
#include "sidrec/sidspace.hpp"

namespace sidrec::corpus {

enum class TaskTag {
    title2sid,
    sid2title,
    seqsid2title,
    seqtitle2title,
    seqsid2sid,
    seqtitle2sid,
    item_enrich,
    user_enrich,
    general,
    coldstart_reason,
};
std::string tag_name(TaskTag tag);
TaskTag parse_tag(const std::string& name);

struct AlignmentExample {
    TaskTag tag = TaskTag::general;
    std::string prompt;  // chat markup through the assistant header line
    std::string target;  // answer span, terminated by <|im_end|>
};

// Catalog, SID assignment, vocabulary and trie bundled for rendering.
struct SidCatalog {
    std::map<std::string, data::Item> items;
    quant::SidAssignment assignment;
    sid::SidVocab vocab;
    sid::SidTrie trie;

    static SidCatalog build(const std::vector<data::Item>& items,
                            const quant::SidAssignment& assignment);
    const data::Item& item(const std::string& item_id) const;
    std::string sid_string(const std::string& item_id) const;
};

// Cases 1-6. Cases 1-2 take a single item id; cases 3-6 take a history whose
// last element is the prediction target.
AlignmentExample render_alignment_example(int case_id, const SidCatalog& catalog,
                                          const std::vector<std::string>& item_ids);

struct TeacherConfig {
    std::string endpoint;     // e.g. http://host:port/v1/chat/completions
    std::string model;
    std::string api_key_env;  // environment variable holding the key
    double timeout_seconds = 30.0;
    size_t max_retries = 3;
    double temperature = 0.7;
    size_t backoff_ms = 500;  // base delay, doubled per retry
};

struct ChatMessage {
    std::string role;
    std::string content;
};

// One chat completion call with exponential backoff on transient failures.
// Appends each sleep duration to backoff_log when provided.
std::string teacher_chat(const TeacherConfig& config, const std::vector<ChatMessage>& messages,
                         std::vector<size_t>* backoff_log = nullptr);

enum class EnrichKind { item, user };
enum class EnrichSource { teacher, fallback };

// Cases 7-8. For item kind pass a single item id; for user kind pass the
// history with the next item last. The teacher path runs the two-stage
// prompts; on validation failure it retries once, then falls back.
AlignmentExample synth_enrichment(EnrichKind kind, const SidCatalog& catalog,
                                  const std::vector<std::string>& item_ids, EnrichSource source,
                                  uint64_t seed, const TeacherConfig* teacher = nullptr);

// structural checks the enrichment text must satisfy
bool validate_enrichment(EnrichKind kind, const SidCatalog& catalog,
                         const std::vector<std::string>& item_ids, const std::string& text);

// Reason-then-recommend training example for the cold-start stage: prompt is
// the history plus an instruction to think first, target is reasoning
// followed by the next item's SID.
AlignmentExample coldstart_reason_example(const SidCatalog& catalog,
                                          const std::vector<std::string>& item_ids, uint64_t seed);

// committed generic chain-of-thought pairs, chat-wrapped
std::vector<AlignmentExample> load_general_reasoning(const std::string& path);

struct MixtureSpec {
    std::map<TaskTag, double> weights;
    size_t budget = 0;
    uint64_t seed = 1;
};

// Largest-remainder apportionment of the budget across tags (counts within
// +/-1 of exact proportionality), cycling a source when it is shorter than
// its quota, then a seeded shuffle.
std::vector<AlignmentExample> build_mixture(
    const std::map<TaskTag, std::vector<AlignmentExample>>& sources, const MixtureSpec& spec);

void write_corpus(const std::string& path, const std::vector<AlignmentExample>& corpus);
std::vector<AlignmentExample> load_corpus(const std::string& path);

}  // namespace sidrec::corpus
