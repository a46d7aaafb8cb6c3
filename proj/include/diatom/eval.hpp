#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "diatom/corpus.hpp"
#include "diatom/embeddings.hpp"
#include "diatom/errors.hpp"
#include "diatom/model.hpp"

namespace diatom {

// ---------------------------------------------------------------------------
// Windowed NPMI coherence
// ---------------------------------------------------------------------------

struct CoherenceConfig {
    int window_size = 110;
    int top_n = 10;
    std::string reference = "train";

    void validate() const {
        if (window_size < 2) throw ConfigError("CoherenceConfig: window_size >= 2");
        if (top_n < 2) throw ConfigError("CoherenceConfig: top_n >= 2");
    }
};

inline void to_json(json& j, const CoherenceConfig& c) {
    j = json{{"window_size", c.window_size}, {"top_n", c.top_n}, {"reference", c.reference}};
}

inline void from_json(const json& j, CoherenceConfig& c) {
    CoherenceConfig d;
    c.window_size = j.value("window_size", d.window_size);
    c.top_n = j.value("top_n", d.top_n);
    c.reference = j.value("reference", d.reference);
}

struct CoherenceResult {
    std::vector<double> per_topic;  // NaN when every pair was skipped
    double mean = 0.0;
    int undefined_topics = 0;
    long long windows = 0;
};

// Boolean sliding-window NPMI, an approximation of the usual C_V metric
// (direct NPMI confirmation only, no indirect cosine stage).
inline CoherenceResult npmi_coherence(const TopicSet& topics,
                                      const std::vector<std::vector<std::string>>& reference,
                                      const CoherenceConfig& cfg = {}) {
    cfg.validate();
    constexpr double kEps = 1e-12;

    // collect the words we need counts for
    std::unordered_map<std::string, int> word_id;
    for (const auto& t : topics.topics) {
        const int n = std::min<int>(cfg.top_n, static_cast<int>(t.top_words.size()));
        for (int i = 0; i < n; ++i) word_id.emplace(t.top_words[i].first, -1);
    }
    int next = 0;
    for (auto& [w, id] : word_id) id = next++;
    const int nw = next;

    std::vector<long long> singles(nw, 0);
    std::vector<std::vector<long long>> pairs(nw, std::vector<long long>(nw, 0));
    long long windows = 0;

    std::vector<int> in_window(nw, 0);
    std::vector<int> present;
    auto account_window = [&]() {
        ++windows;
        present.clear();
        for (int k = 0; k < nw; ++k)
            if (in_window[k] > 0) present.push_back(k);
        for (std::size_t a = 0; a < present.size(); ++a) {
            ++singles[present[a]];
            for (std::size_t b = a + 1; b < present.size(); ++b) {
                ++pairs[present[a]][present[b]];
                ++pairs[present[b]][present[a]];
            }
        }
    };

    for (const auto& doc : reference) {
        std::vector<int> ids(doc.size(), -1);
        for (std::size_t i = 0; i < doc.size(); ++i) {
            auto it = word_id.find(doc[i]);
            if (it != word_id.end()) ids[i] = it->second;
        }
        const int len = static_cast<int>(doc.size());
        if (len == 0) continue;
        const int w = cfg.window_size;
        if (len <= w) {
            for (int i = 0; i < len; ++i)
                if (ids[i] >= 0) ++in_window[ids[i]];
            account_window();
            for (int i = 0; i < len; ++i)
                if (ids[i] >= 0) --in_window[ids[i]];
        } else {
            for (int i = 0; i < w; ++i)
                if (ids[i] >= 0) ++in_window[ids[i]];
            account_window();
            for (int start = 1; start + w <= len; ++start) {
                if (ids[start - 1] >= 0) --in_window[ids[start - 1]];
                if (ids[start + w - 1] >= 0) ++in_window[ids[start + w - 1]];
                account_window();
            }
            for (int i = len - w; i < len; ++i)
                if (ids[i] >= 0) --in_window[ids[i]];
        }
    }

    CoherenceResult result;
    result.windows = windows;
    if (windows == 0) throw DataError("npmi_coherence: empty reference corpus");
    const double nwind = static_cast<double>(windows);

    auto clamp01 = [&](double p) { return std::min(std::max(p, kEps), 1.0 - kEps); };

    double mean_acc = 0.0;
    int defined = 0;
    for (const auto& t : topics.topics) {
        const int n = std::min<int>(cfg.top_n, static_cast<int>(t.top_words.size()));
        double acc = 0.0;
        int count = 0;
        for (int a = 0; a < n; ++a) {
            const int ia = word_id.at(t.top_words[a].first);
            if (singles[ia] == 0) continue;  // word absent from reference
            for (int b = a + 1; b < n; ++b) {
                const int ib = word_id.at(t.top_words[b].first);
                if (singles[ib] == 0) continue;
                const double li = std::log(clamp01(singles[ia] / nwind));
                const double lj = std::log(clamp01(singles[ib] / nwind));
                const double lij = std::log(clamp01(pairs[ia][ib] / nwind));
                const double npmi = (lij - li - lj) / -lij;
                acc += npmi;
                ++count;
            }
        }
        if (count == 0) {
            result.per_topic.push_back(std::numeric_limits<double>::quiet_NaN());
            ++result.undefined_topics;
        } else {
            const double score = acc / count;
            result.per_topic.push_back(score);
            mean_acc += score;
            ++defined;
        }
    }
    result.mean = defined > 0 ? mean_acc / defined : std::numeric_limits<double>::quiet_NaN();
    return result;
}

// ---------------------------------------------------------------------------
// Topic uniqueness
// ---------------------------------------------------------------------------

struct UniquenessResult {
    std::vector<double> per_topic;
    double mean = 0.0;
};

// TU(k) = (1/L) sum_l 1/cnt(l,k) with cnt counting how many topics carry the
// word in their top-L list.
inline UniquenessResult topic_uniqueness(const TopicSet& topics, int top_l = 10) {
    std::unordered_map<std::string, int> cnt;
    for (const auto& t : topics.topics) {
        if (static_cast<int>(t.top_words.size()) < top_l)
            throw ConfigError("topic_uniqueness: fewer than L top words available");
        for (int i = 0; i < top_l; ++i) ++cnt[t.top_words[i].first];
    }
    UniquenessResult r;
    double acc = 0.0;
    for (const auto& t : topics.topics) {
        double tu = 0.0;
        for (int i = 0; i < top_l; ++i) tu += 1.0 / cnt.at(t.top_words[i].first);
        tu /= static_cast<double>(top_l);
        r.per_topic.push_back(tu);
        acc += tu;
    }
    r.mean = topics.topics.empty() ? 0.0 : acc / static_cast<double>(topics.topics.size());
    return r;
}

// ---------------------------------------------------------------------------
// Topic labeling and disentanglement rate
// ---------------------------------------------------------------------------

struct TopicLabel {
    int topic_index = 0;
    ProxyLabel label = ProxyLabel::None;
    std::vector<std::pair<AnnotatedSentence, double>> retrieved;  // sentence, similarity
};

inline constexpr int kLabelTopWords = 10;
inline constexpr int kLabelRetrieved = 10;

// Majority label over the 10 most similar annotated sentences; ties go to the
// tied label with the highest mean similarity. Duplicate texts in the pool are
// collapsed so the retrieval set holds distinct sentences.
inline TopicLabel label_topic(const TopicInfo& topic,
                              const std::vector<AnnotatedSentence>& annotations,
                              const EmbeddingTable& table,
                              const SentenceCache* cache = nullptr) {
    if (annotations.empty()) throw ConfigError("label_topic: empty annotation pool");

    std::vector<std::pair<std::string, double>> top(
        topic.top_words.begin(),
        topic.top_words.begin() +
            std::min<std::size_t>(topic.top_words.size(), kLabelTopWords));
    const VectorXd t_vec = topic_embedding(top, table);

    std::unordered_set<std::string> seen;
    std::vector<std::pair<double, std::size_t>> scored;  // similarity, pool index
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        if (!seen.insert(annotations[i].text).second) continue;
        VectorXd s_vec;
        try {
            s_vec = sentence_embedding(annotations[i], table, cache).vector;
        } catch (const DataError&) {
            continue;  // sentence has no representation; leave it out of the ranking
        }
        scored.emplace_back(cosine(t_vec, s_vec), i);
    }
    if (scored.empty()) throw DataError("label_topic: no embeddable sentence in the pool");

    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    const std::size_t take = std::min<std::size_t>(scored.size(), kLabelRetrieved);

    TopicLabel out;
    out.topic_index = topic.index;
    std::map<ProxyLabel, int> votes;
    std::map<ProxyLabel, double> sims;
    for (std::size_t i = 0; i < take; ++i) {
        const auto& sent = annotations[scored[i].second];
        out.retrieved.emplace_back(sent, scored[i].first);
        ++votes[sent.label];
        sims[sent.label] += scored[i].first;
    }
    int best_votes = 0;
    for (const auto& [label, v] : votes) best_votes = std::max(best_votes, v);
    ProxyLabel winner = ProxyLabel::None;
    double winner_mean = -std::numeric_limits<double>::infinity();
    for (const auto& [label, v] : votes) {
        if (v != best_votes) continue;
        const double mean_sim = sims[label] / v;
        if (mean_sim > winner_mean) {
            winner_mean = mean_sim;
            winner = label;
        }
    }
    out.label = winner;
    return out;
}

// rho = opinion-labeled topics / all labeled topics.
inline double disentanglement_rate(const std::vector<TopicLabel>& labels) {
    if (labels.empty()) throw ConfigError("disentanglement_rate: no labels");
    int opinion = 0;
    for (const auto& l : labels)
        if (l.label == ProxyLabel::Positive || l.label == ProxyLabel::Negative) ++opinion;
    return static_cast<double>(opinion) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Sentiment classification accuracy
// ---------------------------------------------------------------------------

struct AccuracyResult {
    double accuracy = 0.0;
    int evaluated = 0;
    int skipped = 0;  // unlabeled or empty documents
};

// Mean-latent prediction: z_s from the posterior mean (eps = 0), argmax of
// the classifier head against the gold label.
inline AccuracyResult sentiment_accuracy(const Model& model,
                                         const std::vector<BowDocument>& docs) {
    AccuracyResult r;
    int correct = 0;
    for (const auto& d : docs) {
        if (!d.sentiment_label || d.empty()) {
            ++r.skipped;
            continue;
        }
        auto [mu, var] = model.encode_sentiment(d.counts);
        const VectorXd psi = sample_simplex(mu, var, VectorXd::Zero(mu.size()));
        const VectorXd z_s = model.mix_sentiment(psi);
        const VectorXd p = model.classify_sentiment(z_s);
        Eigen::Index argmax = 0;
        p.maxCoeff(&argmax);
        if (static_cast<int>(argmax) == sentiment_index(*d.sentiment_label)) ++correct;
        ++r.evaluated;
    }
    r.accuracy = r.evaluated > 0 ? static_cast<double>(correct) / r.evaluated : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Topic-vector export
// ---------------------------------------------------------------------------

// CSV: topic index, structural tag, proxy label (may be empty), then the
// V decoder-column weights in vocabulary order.
inline void export_topic_vectors(const Model& model, const Vocabulary& vocab,
                                 const std::vector<TopicLabel>* labels,
                                 const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << "topic,tag,label";
    for (const auto& tok : vocab.tokens) out << ',' << tok;
    out << '\n';
    char buf[64];
    for (int j = 0; j < model.cfg.K + model.cfg.S; ++j) {
        out << j << ',' << (j < model.cfg.K ? "plot" : "opinion") << ',';
        if (labels) {
            for (const auto& l : *labels)
                if (l.topic_index == j) out << proxy_label_name(l.label);
        }
        for (int v = 0; v < model.cfg.V; ++v) {
            // %.9g round-trips the float32 values stored in checkpoints
            std::snprintf(buf, sizeof(buf), "%.9g",
                          static_cast<double>(static_cast<float>(model.params.dec_w.v(v, j))));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw DataError("failed while writing " + path);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct EvalReport {
    std::optional<double> mean_coherence;
    std::optional<double> mean_uniqueness;
    std::optional<double> accuracy;
    std::optional<double> rho;
    double configured_ratio = 0.0;  // S / (S + K)
    std::vector<TopicLabel> labels;
    json details;  // per-topic values, skip counts, etc.

    json to_json() const {
        json j;
        if (mean_coherence) j["mean_coherence"] = *mean_coherence;
        if (mean_uniqueness) j["mean_topic_uniqueness"] = *mean_uniqueness;
        if (accuracy) j["sentiment_accuracy"] = *accuracy;
        if (rho) j["disentanglement_rate"] = *rho;
        j["configured_ratio"] = configured_ratio;
        if (!labels.empty()) {
            json arr = json::array();
            for (const auto& l : labels) {
                arr.push_back({{"topic", l.topic_index}, {"label", proxy_label_name(l.label)}});
            }
            j["topic_labels"] = arr;
        }
        if (!details.is_null()) j["details"] = details;
        return j;
    }
};

}  // namespace diatom
