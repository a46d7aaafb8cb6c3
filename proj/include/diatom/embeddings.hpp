#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "diatom/corpus.hpp"
#include "diatom/errors.hpp"

namespace diatom {

using Eigen::VectorXd;

// Word vectors consumed from a text file; read-only after load.
struct EmbeddingTable {
    int dimension = 0;
    std::unordered_map<std::string, VectorXd> vectors;

    bool empty() const { return vectors.empty(); }

    // Missing tokens are an explicit absence, never a silent zero.
    std::optional<VectorXd> lookup(const std::string& token) const {
        if (empty()) throw DataError("embedding table is empty");
        auto it = vectors.find(token);
        if (it == vectors.end()) return std::nullopt;
        return it->second;
    }
};

struct SentenceEmbedding {
    VectorXd vector;
    enum class Source { ExternalFile, MeanOfWords } source = Source::MeanOfWords;
};

// Precomputed sentence vectors keyed by exact sentence text.
struct SentenceCache {
    std::unordered_map<std::string, VectorXd> vectors;

    std::optional<VectorXd> lookup(const std::string& text) const {
        auto it = vectors.find(text);
        if (it == vectors.end()) return std::nullopt;
        return it->second;
    }
};

// Format: one entry per line, "token v1 v2 ... vD", consistent D.
inline EmbeddingTable load_embedding_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    EmbeddingTable table;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string token;
        ss >> token;
        std::vector<double> vals;
        double v;
        while (ss >> v) vals.push_back(v);
        if (token.empty() || vals.empty())
            throw DataError(path + ":" + std::to_string(line_no) + ": malformed embedding line");
        if (table.dimension == 0) {
            table.dimension = static_cast<int>(vals.size());
        } else if (static_cast<int>(vals.size()) != table.dimension) {
            throw DataError(path + ":" + std::to_string(line_no) + ": dimension " +
                            std::to_string(vals.size()) + " != " +
                            std::to_string(table.dimension));
        }
        VectorXd vec = Eigen::Map<VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
        table.vectors.emplace(std::move(token), std::move(vec));
    }
    return table;
}

// Cache format: JSONL {"text": str, "vector": [float, ...]}
inline SentenceCache load_sentence_cache(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    SentenceCache cache;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = detail::parse_jsonl_line(line, path, line_no);
        try {
            auto vals = j.at("vector").get<std::vector<double>>();
            VectorXd vec =
                Eigen::Map<VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
            cache.vectors.emplace(j.at("text").get<std::string>(), std::move(vec));
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cache;
}

inline double cosine(const VectorXd& u, const VectorXd& v) {
    const double nu = u.norm();
    const double nv = v.norm();
    if (nu == 0.0 || nv == 0.0) throw DataError("cosine: zero vector");
    return u.dot(v) / (nu * nv);
}

// Weighted average of the top-word vectors, renormalized over the words that
// are actually present in the table, then scaled to unit norm.
inline VectorXd topic_embedding(const std::vector<std::pair<std::string, double>>& top_words,
                                const EmbeddingTable& table) {
    if (top_words.empty()) throw ConfigError("topic_embedding: no top words");
    VectorXd acc;
    double weight_sum = 0.0;
    for (const auto& [token, weight] : top_words) {
        auto vec = table.lookup(token);
        if (!vec) continue;
        if (acc.size() == 0) acc = VectorXd::Zero(vec->size());
        acc += weight * (*vec);
        weight_sum += weight;
    }
    if (weight_sum <= 0.0 || acc.size() == 0)
        throw DataError("unlabelable topic: no top word present in the embedding table");
    acc /= weight_sum;
    const double norm = acc.norm();
    if (norm == 0.0) throw DataError("topic_embedding: degenerate zero vector");
    return acc / norm;
}

inline SentenceEmbedding sentence_embedding(const AnnotatedSentence& sentence,
                                            const EmbeddingTable& table,
                                            const SentenceCache* cache = nullptr) {
    if (cache) {
        if (auto hit = cache->lookup(sentence.text)) {
            return {*hit, SentenceEmbedding::Source::ExternalFile};
        }
    }
    VectorXd acc;
    int n = 0;
    for (const auto& tok : tokenize(sentence.text)) {
        auto vec = table.lookup(tok);
        if (!vec) continue;
        if (acc.size() == 0) acc = VectorXd::Zero(vec->size());
        acc += *vec;
        ++n;
    }
    if (n == 0)
        throw DataError("sentence has no in-table words and no cache entry: '" + sentence.text +
                        "'");
    acc /= static_cast<double>(n);
    const double norm = acc.norm();
    if (norm == 0.0) throw DataError("sentence_embedding: degenerate zero vector");
    return {acc / norm, SentenceEmbedding::Source::MeanOfWords};
}

}  // namespace diatom
