#include "flava/corpus.hpp"

#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "flava/util.hpp"

namespace flava {

namespace {

const std::set<std::string>& english_stopwords() {
    static const std::set<std::string> words = {
        "the", "a",  "an",  "of",  "and", "or",  "in", "on",   "at",   "is",  "are",
        "was", "to", "with", "for", "this", "that", "it", "as", "by", "from", "be",
        "my",  "we", "our", "his", "her",  "its"};
    return words;
}

std::string lower(const std::string& s) {
    std::string out = s;
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

int word_count(const std::string& text) {
    std::istringstream in(text);
    std::string tok;
    int n = 0;
    while (in >> tok) ++n;
    return n;
}

bool heuristic_is_english(const std::string& text) {
    if (text.empty()) return false;
    std::size_t ascii = 0;
    for (unsigned char c : text)
        if (c < 128) ++ascii;
    if (static_cast<double>(ascii) / static_cast<double>(text.size()) < 0.9) return false;
    std::istringstream in(lower(text));
    std::string tok;
    while (in >> tok) {
        while (!tok.empty() && !std::isalpha(static_cast<unsigned char>(tok.back()))) tok.pop_back();
        if (english_stopwords().count(tok)) return true;
    }
    return false;
}

namespace {

// English AND more than two words.
FilterDecision check_field(const std::string& text, const char* field,
                           const LanguageDetector& is_english) {
    FilterDecision d;
    d.field = field;
    if (!is_english(text)) {
        d.reason = "language";
        return d;
    }
    if (word_count(text) <= 2) {
        d.reason = "length";
        return d;
    }
    d.accepted = true;
    d.caption = text;
    return d;
}

}  // namespace

FilterDecision yfcc_filter(const PairRecord& record, const LanguageDetector& is_english) {
    auto lang_trusted = [&](const std::string& text) {
        if (record.language) return lower(*record.language).rfind("en", 0) == 0;
        return is_english(text);
    };
    if (record.description) {
        FilterDecision d = check_field(*record.description, "description", lang_trusted);
        if (d.accepted) return d;
        if (record.title) {
            FilterDecision t = check_field(*record.title, "title", lang_trusted);
            return t;  // accepted, or rejected with the title's reason
        }
        return d;
    }
    if (record.title) return check_field(*record.title, "title", lang_trusted);
    FilterDecision d;
    d.reason = "no_text";
    return d;
}

FilterDecision passthrough_filter(const PairRecord& record) {
    FilterDecision d;
    if (record.caption) {
        d.accepted = true;
        d.caption = *record.caption;
        d.field = "caption";
    } else if (record.description) {
        d.accepted = true;
        d.caption = *record.description;
        d.field = "description";
    } else if (record.title) {
        d.accepted = true;
        d.caption = *record.title;
        d.field = "title";
    } else {
        d.reason = "no_text";
    }
    return d;
}

std::string image_content_hash(const PairRecord& record) {
    if (record.image_hash) return *record.image_hash;
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(record.image_ref)));
    return std::string(buf);
}

std::vector<CorpusEntry> dedupe(const std::vector<CorpusEntry>& entries) {
    std::vector<CorpusEntry> out;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& e : entries)
        if (seen.insert({e.image_hash, e.caption}).second) out.push_back(e);
    return out;
}

CorpusStats corpus_stats(const std::vector<CorpusEntry>& entries) {
    CorpusStats stats;
    std::set<std::string> images;
    std::int64_t words = 0;
    for (const auto& e : entries) {
        ++stats.pair_count;
        images.insert(e.image_hash);
        words += word_count(e.caption);
        ++stats.per_source[e.source];
    }
    stats.unique_image_count = static_cast<std::int64_t>(images.size());
    stats.mean_caption_words =
        stats.pair_count == 0 ? 0.0 : static_cast<double>(words) / static_cast<double>(stats.pair_count);
    return stats;
}

// ---------------------------------------------------------------------------

std::vector<CorpusSource> load_sources_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("missing_input", "cannot open sources manifest '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail("invalid_manifest", std::string("sources manifest is not valid JSON: ") + e.what());
    }
    if (!j.contains("sources") || !j["sources"].is_array())
        fail("invalid_manifest", "sources manifest needs a 'sources' array");
    std::vector<CorpusSource> out;
    for (const auto& s : j["sources"]) {
        CorpusSource src;
        src.name = s.value("name", "");
        src.path = s.value("path", "");
        src.apply_yfcc_filter = s.value("apply_filter", false);
        if (src.name.empty() || src.path.empty())
            fail("invalid_manifest", "every source needs a name and a path");
        out.push_back(std::move(src));
    }
    return out;
}

PairRecord parse_record_json(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        fail("invalid_record", std::string("record is not valid JSON: ") + e.what());
    }
    PairRecord r;
    r.image_ref = j.value("image", "");
    if (r.image_ref.empty()) fail("invalid_record", "record has no 'image' reference");
    auto opt = [&](const char* key) -> std::optional<std::string> {
        if (j.contains(key) && j[key].is_string()) return j[key].get<std::string>();
        return std::nullopt;
    };
    r.image_hash = opt("image_hash");
    r.description = opt("description");
    r.title = opt("title");
    r.caption = opt("caption");
    r.language = opt("lang");
    if (!r.has_any_text())
        fail("invalid_record", "record for '" + r.image_ref +
                                   "' has none of description/title/caption");
    return r;
}

BuildReport build_corpus(const std::vector<CorpusSource>& sources, const std::string& out_dir,
                         const BuildOptions& options, const LanguageDetector& is_english) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    std::vector<CorpusEntry> entries;
    BuildReport report;
    for (const auto& source : sources) {
        std::ifstream in(source.path);
        if (!in) fail("missing_input", "cannot open source file '" + source.path + "'");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            PairRecord record = parse_record_json(line);
            record.source = source.name;
            FilterDecision d =
                source.apply_yfcc_filter ? yfcc_filter(record, is_english) : passthrough_filter(record);
            if (!d.accepted) {
                ++report.rejected;
                ++report.rejection_reasons[d.reason];
                continue;
            }
            entries.push_back({image_content_hash(record), d.caption, source.name});
        }
    }
    entries = dedupe(entries);
    report.stats = corpus_stats(entries);

    int shard = 0;
    std::ofstream out;
    for (size_t i = 0; i < entries.size(); ++i) {
        if (i % static_cast<size_t>(options.shard_size) == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "shard-%05d.jsonl", shard++);
            std::string shard_path = out_dir + "/" + name;
            out.close();
            out.open(shard_path);
            report.shard_files.push_back(shard_path);
        }
        nlohmann::json j{{"image_hash", entries[i].image_hash},
                         {"caption", entries[i].caption},
                         {"source", entries[i].source}};
        out << j.dump() << "\n";
    }
    out.close();

    nlohmann::json manifest;
    manifest["pair_count"] = report.stats.pair_count;
    manifest["unique_image_count"] = report.stats.unique_image_count;
    manifest["mean_caption_words"] = report.stats.mean_caption_words;
    manifest["per_source"] = report.stats.per_source;
    manifest["rejected"] = report.rejected;
    manifest["rejection_reasons"] = report.rejection_reasons;
    manifest["shards"] = report.shard_files;
    std::ofstream mf(out_dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";
    return report;
}

}  // namespace flava
