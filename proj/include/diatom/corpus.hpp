#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "diatom/errors.hpp"

namespace diatom {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class Sentiment { Positive, Negative, Neutral };

inline int sentiment_index(Sentiment s) { return static_cast<int>(s); }

inline const char* sentiment_name(Sentiment s) {
    switch (s) {
        case Sentiment::Positive: return "pos";
        case Sentiment::Negative: return "neg";
        case Sentiment::Neutral: return "neu";
    }
    return "?";
}

// Proxy classes used by the annotated sentences and by topic labeling.
enum class ProxyLabel { Positive, Negative, Plot, None };

inline const char* proxy_label_name(ProxyLabel l) {
    switch (l) {
        case ProxyLabel::Positive: return "Positive";
        case ProxyLabel::Negative: return "Negative";
        case ProxyLabel::Plot: return "Plot";
        case ProxyLabel::None: return "None";
    }
    return "?";
}

inline ProxyLabel proxy_label_from(const std::string& s) {
    if (s == "Positive") return ProxyLabel::Positive;
    if (s == "Negative") return ProxyLabel::Negative;
    if (s == "Plot") return ProxyLabel::Plot;
    if (s == "None") return ProxyLabel::None;
    throw DataError("unknown annotation label: '" + s + "'");
}

struct Vocabulary {
    std::vector<std::string> tokens;               // id -> token, frequency-descending
    std::unordered_map<std::string, int> index;    // token -> id

    int size() const { return static_cast<int>(tokens.size()); }

    std::optional<int> id_of(const std::string& token) const {
        auto it = index.find(token);
        if (it == index.end()) return std::nullopt;
        return it->second;
    }
};

struct BowDocument {
    std::string doc_id;
    std::map<int, int> counts;  // word id -> count, ids < V, counts >= 1
    std::optional<Sentiment> sentiment_label;
    std::optional<std::string> plot_id;

    bool empty() const { return counts.empty(); }

    int total_tokens() const {
        int n = 0;
        for (const auto& [_, c] : counts) n += c;
        return n;
    }
};

struct PlotDocument {
    std::string plot_id;
    std::map<int, int> counts;
};

struct AnnotatedSentence {
    std::string text;
    ProxyLabel label = ProxyLabel::None;
};

struct CorpusSplit {
    std::vector<BowDocument> train, dev, test;
    std::vector<PlotDocument> plots;
};

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

// Bundled stopword list (Snowball English). Versioned here so token streams
// are stable across environments.
inline const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> words = {
        "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "your", "yours",
        "yourself", "yourselves", "he", "him", "his", "himself", "she", "her", "hers",
        "herself", "it", "its", "itself", "they", "them", "their", "theirs", "themselves",
        "what", "which", "who", "whom", "this", "that", "these", "those", "am", "is", "are",
        "was", "were", "be", "been", "being", "have", "has", "had", "having", "do", "does",
        "did", "doing", "a", "an", "the", "and", "but", "if", "or", "because", "as", "until",
        "while", "of", "at", "by", "for", "with", "about", "against", "between", "into",
        "through", "during", "before", "after", "above", "below", "to", "from", "up", "down",
        "in", "out", "on", "off", "over", "under", "again", "further", "then", "once", "here",
        "there", "when", "where", "why", "how", "all", "any", "both", "each", "few", "more",
        "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so",
        "than", "too", "very", "s", "t", "can", "will", "just", "don", "should", "now"};
    return words;
}

// Lowercase, split on anything outside [a-z0-9], drop stopwords, tokens
// shorter than three characters and digit-only tokens. Duplicates preserved.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&]() {
        if (current.empty()) return;
        std::string tok;
        tok.swap(current);
        if (tok.size() < 3) return;
        if (stopwords().count(tok)) return;
        bool all_digits = true;
        for (char c : tok) {
            if (!std::isdigit(static_cast<unsigned char>(c))) {
                all_digits = false;
                break;
            }
        }
        if (all_digits) return;
        out.push_back(std::move(tok));
    };
    for (char ch : text) {
        const unsigned char c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary construction and vectorization
// ---------------------------------------------------------------------------

inline constexpr int kDefaultVocabSize = 2000;

inline Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& docs,
                                   int max_size = kDefaultVocabSize) {
    if (max_size < 1) throw ConfigError("build_vocabulary: max_size must be >= 1");
    std::unordered_map<std::string, std::int64_t> freq;
    for (const auto& doc : docs)
        for (const auto& tok : doc) ++freq[tok];
    if (freq.empty()) throw DataError("build_vocabulary: no tokens");

    std::vector<std::pair<std::string, std::int64_t>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (static_cast<int>(items.size()) > max_size) items.resize(max_size);

    Vocabulary vocab;
    vocab.tokens.reserve(items.size());
    for (int i = 0; i < static_cast<int>(items.size()); ++i) {
        vocab.tokens.push_back(items[i].first);
        vocab.index.emplace(items[i].first, i);
    }
    return vocab;
}

// Out-of-vocabulary tokens are dropped; an all-OOV document comes back empty
// and the caller decides whether to keep it.
inline std::map<int, int> vectorize(const std::vector<std::string>& tokens,
                                    const Vocabulary& vocab) {
    std::map<int, int> counts;
    for (const auto& tok : tokens) {
        if (auto id = vocab.id_of(tok)) ++counts[*id];
    }
    return counts;
}

// m_v = log((c_v + eps) / sum_u(c_u + eps)) over the training counts.
// Fixed after construction; the decoder treats it as a constant.
inline Eigen::VectorXd background_log_frequency(const std::vector<BowDocument>& corpus,
                                                const Vocabulary& vocab, double eps = 1.0) {
    const int v_size = vocab.size();
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(v_size);
    for (const auto& doc : corpus)
        for (const auto& [id, c] : doc.counts) counts(id) += c;
    if (counts.sum() <= 0.0 && eps <= 0.0)
        throw DataError("background_log_frequency: no counts");
    const Eigen::VectorXd smoothed = counts.array() + eps;
    return (smoothed.array() / smoothed.sum()).log();
}

// ---------------------------------------------------------------------------
// JSONL loading
// ---------------------------------------------------------------------------

struct CorpusStats {
    std::map<std::string, int> split_sizes;          // split -> documents
    std::map<std::string, int> label_counts;         // pos/neg/neu/unlabeled
    int plots = 0;
    int reviews = 0;
    int empty_documents = 0;  // all-OOV or empty after tokenization

    std::string describe() const {
        std::ostringstream os;
        os << "reviews=" << reviews << " plots=" << plots;
        for (const auto& [k, v] : split_sizes) os << " " << k << "=" << v;
        for (const auto& [k, v] : label_counts) os << " " << k << "=" << v;
        if (empty_documents > 0) os << " empty=" << empty_documents;
        return os.str();
    }
};

// Everything the rest of the pipeline needs: vectorized splits, the
// vocabulary they are expressed in, and the raw train token stream (kept for
// coherence evaluation).
struct CorpusData {
    CorpusSplit split;
    Vocabulary vocab;
    CorpusStats stats;
    std::vector<std::vector<std::string>> train_tokens;
    std::vector<std::string> warnings;
};

namespace detail {

inline json parse_jsonl_line(const std::string& line, const std::string& file, int line_no) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw DataError(file + ":" + std::to_string(line_no) + ": malformed JSONL record");
    }
    return j;
}

struct RawReview {
    std::string doc_id;
    std::string text;
    std::optional<Sentiment> label;
    std::optional<std::string> plot_id;
};

inline std::optional<Sentiment> parse_review_label(const json& j, const std::string& file,
                                                   int line_no) {
    if (!j.contains("label") || j.at("label").is_null()) return std::nullopt;
    const std::string s = j.at("label").get<std::string>();
    if (s == "pos") return Sentiment::Positive;
    if (s == "neg") return Sentiment::Negative;
    if (s == "neu") return Sentiment::Neutral;
    throw DataError(file + ":" + std::to_string(line_no) + ": unknown label '" + s + "'");
}

inline std::vector<RawReview> load_reviews_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<RawReview> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = parse_jsonl_line(line, path, line_no);
        RawReview r;
        try {
            r.doc_id = j.at("doc_id").get<std::string>();
            r.text = j.at("text").get<std::string>();
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        r.label = parse_review_label(j, path, line_no);
        if (j.contains("plot_id") && !j.at("plot_id").is_null())
            r.plot_id = j.at("plot_id").get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace detail

// Loads a corpus directory: train.jsonl, dev.jsonl, test.jsonl, plots.jsonl.
// The vocabulary is built from the training split only.
inline CorpusData load_corpus(const std::string& dir, int max_vocab = kDefaultVocabSize) {
    auto reviews_path = [&](const char* split) { return dir + "/" + split + ".jsonl"; };

    auto raw_train = detail::load_reviews_file(reviews_path("train"));
    auto raw_dev = detail::load_reviews_file(reviews_path("dev"));
    auto raw_test = detail::load_reviews_file(reviews_path("test"));

    CorpusData data;
    data.train_tokens.reserve(raw_train.size());
    for (const auto& r : raw_train) data.train_tokens.push_back(tokenize(r.text));
    data.vocab = build_vocabulary(data.train_tokens, max_vocab);

    // plots
    {
        const std::string path = dir + "/plots.jsonl";
        std::ifstream in(path);
        if (!in) throw DataError("cannot open " + path);
        std::string line;
        int line_no = 0;
        std::unordered_set<std::string> seen;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            json j = detail::parse_jsonl_line(line, path, line_no);
            PlotDocument p;
            try {
                p.plot_id = j.at("plot_id").get<std::string>();
                p.counts = vectorize(tokenize(j.at("text").get<std::string>()), data.vocab);
            } catch (const json::exception& e) {
                throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
            }
            if (!seen.insert(p.plot_id).second)
                throw DataError(path + ":" + std::to_string(line_no) + ": duplicate plot_id '" +
                                p.plot_id + "'");
            data.split.plots.push_back(std::move(p));
        }
    }

    std::unordered_set<std::string> plot_ids;
    for (const auto& p : data.split.plots) plot_ids.insert(p.plot_id);

    std::unordered_set<std::string> doc_ids;
    auto convert = [&](const std::vector<detail::RawReview>& raw, const char* name) {
        std::vector<BowDocument> docs;
        docs.reserve(raw.size());
        for (const auto& r : raw) {
            if (!doc_ids.insert(r.doc_id).second)
                throw DataError(std::string(name) + ": duplicate doc_id '" + r.doc_id + "'");
            BowDocument d;
            d.doc_id = r.doc_id;
            d.counts = vectorize(tokenize(r.text), data.vocab);
            d.sentiment_label = r.label;
            d.plot_id = r.plot_id;
            if (d.plot_id && !plot_ids.count(*d.plot_id))
                throw DataError(std::string(name) + ": review '" + r.doc_id +
                                "' references unknown plot_id '" + *d.plot_id + "'");
            if (d.empty()) {
                ++data.stats.empty_documents;
                data.warnings.push_back("document '" + d.doc_id + "' is empty after " +
                                        "tokenization/vectorization; excluded from training");
            }
            if (d.sentiment_label)
                ++data.stats.label_counts[sentiment_name(*d.sentiment_label)];
            else
                ++data.stats.label_counts["unlabeled"];
            docs.push_back(std::move(d));
        }
        data.stats.split_sizes[name] = static_cast<int>(docs.size());
        return docs;
    };

    data.split.train = convert(raw_train, "train");
    data.split.dev = convert(raw_dev, "dev");
    data.split.test = convert(raw_test, "test");
    data.stats.plots = static_cast<int>(data.split.plots.size());
    data.stats.reviews = static_cast<int>(data.split.train.size() + data.split.dev.size() +
                                          data.split.test.size());
    return data;
}

inline std::vector<AnnotatedSentence> load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<AnnotatedSentence> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = detail::parse_jsonl_line(line, path, line_no);
        AnnotatedSentence s;
        try {
            s.text = j.at("text").get<std::string>();
            s.label = proxy_label_from(j.at("label").get<std::string>());
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace diatom
