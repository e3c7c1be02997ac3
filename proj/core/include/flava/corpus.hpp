#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flava {

struct PairRecord {
    std::string image_ref;               // path or external identifier
    std::optional<std::string> image_hash;  // content hash if known
    std::optional<std::string> description;
    std::optional<std::string> title;
    std::optional<std::string> caption;
    std::string source;
    std::optional<std::string> language;  // trusted when present

    bool has_any_text() const { return description || title || caption; }
};

// Post-filter corpus entry: one image/caption pair.
struct CorpusEntry {
    std::string image_hash;
    std::string caption;
    std::string source;
};

struct FilterDecision {
    bool accepted = false;
    std::string caption;  // the field that passed
    std::string field;    // "description" | "title" | "caption"
    std::string reason;   // rejection reason: "language" | "length" | "no_text"
};

// Pluggable English detector: a record-level language tag is trusted;
// otherwise the heuristic (ASCII ratio + stopword hit) decides.
using LanguageDetector = std::function<bool(const std::string&)>;
bool heuristic_is_english(const std::string& text);

int word_count(const std::string& text);

// The YFCC rule: a field passes if it is English and has more than two
// words; the description is considered first, then the title.
FilterDecision yfcc_filter(const PairRecord& record,
                           const LanguageDetector& is_english = heuristic_is_english);

// Non-filtered sources take the first present field of caption, description,
// title verbatim.
FilterDecision passthrough_filter(const PairRecord& record);

std::string image_content_hash(const PairRecord& record);

// Keeps the first occurrence of each (image hash, caption) pair, in order.
std::vector<CorpusEntry> dedupe(const std::vector<CorpusEntry>& entries);

struct CorpusStats {
    std::int64_t pair_count = 0;
    std::int64_t unique_image_count = 0;
    double mean_caption_words = 0.0;
    std::map<std::string, std::int64_t> per_source;
};

CorpusStats corpus_stats(const std::vector<CorpusEntry>& entries);

// ---- build pipeline --------------------------------------------------------

struct CorpusSource {
    std::string name;
    std::string path;          // JSONL of PairRecords
    bool apply_yfcc_filter = false;
};

struct BuildOptions {
    int shard_size = 10000;
};

struct BuildReport {
    CorpusStats stats;
    std::int64_t rejected = 0;
    std::map<std::string, std::int64_t> rejection_reasons;
    std::vector<std::string> shard_files;
};

std::vector<CorpusSource> load_sources_manifest(const std::string& path);
PairRecord parse_record_json(const std::string& line);

// Ingest -> filter -> dedupe -> shard + manifest with stats under out_dir.
BuildReport build_corpus(const std::vector<CorpusSource>& sources, const std::string& out_dir,
                         const BuildOptions& options = {},
                         const LanguageDetector& is_english = heuristic_is_english);

}  // namespace flava
