#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diatom/corpus.hpp"
#include "diatom/errors.hpp"
#include "diatom/rng.hpp"

namespace diatom {

// Planted-block corpus: disjoint plot-word and opinion-word blocks, each
// document mixing exactly one block of each kind. The document label depends
// only on the opinion block, so the plot side carries no label information by
// construction.

struct SyntheticConfig {
    int plot_blocks = 8;     // K*
    int opinion_blocks = 4;  // S*, must be even for balanced binary labels
    int style_blocks = 4;    // label-independent register variation, neutral by design
    int vocab_size = 600;
    int common_words = 120;  // shared pool drawn by every document, like function words
    int train_docs = 2000;
    int dev_docs = 200;
    int test_docs = 400;
    int doc_len_min = 60;
    int doc_len_max = 100;
    int plot_len = 120;
    int plots_per_block = 1;
    int sentences_per_class = 50;
    int sentence_len = 12;
    double common_fraction = 0.3;    // token share drawn from the common pool
    double mix_alpha_plot = 7.0;     // Dirichlet weight of the plot share
    double mix_alpha_style = 5.0;    // of the style share
    double mix_alpha_opinion = 4.0;  // and of the (minority) opinion share
    double zipf_exponent = 0.8;         // within-block word distribution
    double common_zipf_exponent = 1.1;  // the common pool is more top-heavy
    double embedding_noise = 0.01;
    std::uint64_t seed = 7;

    int block_size() const {
        return (vocab_size - common_words) /
               (plot_blocks + opinion_blocks + style_blocks);
    }

    void validate() const {
        if (plot_blocks < 1 || opinion_blocks < 1)
            throw ConfigError("SyntheticConfig: need at least one block of each kind");
        if (opinion_blocks % 2 != 0)
            throw ConfigError("SyntheticConfig: opinion_blocks must be even for balanced labels");
        if (style_blocks < 0) throw ConfigError("SyntheticConfig: style_blocks must be >= 0");
        if (common_words < 0 || common_words >= vocab_size)
            throw ConfigError("SyntheticConfig: common_words must be in [0, vocab_size)");
        if (common_fraction < 0.0 || common_fraction >= 1.0)
            throw ConfigError("SyntheticConfig: common_fraction must be in [0, 1)");
        if (common_fraction > 0.0 && common_words < 1)
            throw ConfigError("SyntheticConfig: common_fraction needs a common pool");
        if (block_size() < 2)
            throw ConfigError("SyntheticConfig: vocab too small for the requested blocks");
        if (train_docs < 1) throw ConfigError("SyntheticConfig: train_docs must be >= 1");
        if (doc_len_min < 1 || doc_len_max < doc_len_min)
            throw ConfigError("SyntheticConfig: bad document length range");
        if (plots_per_block < 1) throw ConfigError("SyntheticConfig: plots_per_block >= 1");
        if (sentence_len < 1 || sentences_per_class < 1)
            throw ConfigError("SyntheticConfig: bad annotation settings");
    }
};

inline void to_json(json& j, const SyntheticConfig& c) {
    j = json{{"plot_blocks", c.plot_blocks},
             {"opinion_blocks", c.opinion_blocks},
             {"vocab_size", c.vocab_size},
             {"common_words", c.common_words},
             {"common_fraction", c.common_fraction},
             {"style_blocks", c.style_blocks},
             {"train_docs", c.train_docs},
             {"dev_docs", c.dev_docs},
             {"test_docs", c.test_docs},
             {"doc_len_min", c.doc_len_min},
             {"doc_len_max", c.doc_len_max},
             {"plot_len", c.plot_len},
             {"plots_per_block", c.plots_per_block},
             {"sentences_per_class", c.sentences_per_class},
             {"sentence_len", c.sentence_len},
             {"mix_alpha_plot", c.mix_alpha_plot},
             {"mix_alpha_style", c.mix_alpha_style},
             {"mix_alpha_opinion", c.mix_alpha_opinion},
             {"zipf_exponent", c.zipf_exponent},
             {"common_zipf_exponent", c.common_zipf_exponent},
             {"embedding_noise", c.embedding_noise},
             {"seed", c.seed}};
}

inline void from_json(const json& j, SyntheticConfig& c) {
    SyntheticConfig d;
    c.plot_blocks = j.value("plot_blocks", d.plot_blocks);
    c.opinion_blocks = j.value("opinion_blocks", d.opinion_blocks);
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.common_words = j.value("common_words", d.common_words);
    c.common_fraction = j.value("common_fraction", d.common_fraction);
    c.style_blocks = j.value("style_blocks", d.style_blocks);
    c.train_docs = j.value("train_docs", d.train_docs);
    c.dev_docs = j.value("dev_docs", d.dev_docs);
    c.test_docs = j.value("test_docs", d.test_docs);
    c.doc_len_min = j.value("doc_len_min", d.doc_len_min);
    c.doc_len_max = j.value("doc_len_max", d.doc_len_max);
    c.plot_len = j.value("plot_len", d.plot_len);
    c.plots_per_block = j.value("plots_per_block", d.plots_per_block);
    c.sentences_per_class = j.value("sentences_per_class", d.sentences_per_class);
    c.sentence_len = j.value("sentence_len", d.sentence_len);
    c.mix_alpha_plot = j.value("mix_alpha_plot", d.mix_alpha_plot);
    c.mix_alpha_style = j.value("mix_alpha_style", d.mix_alpha_style);
    c.mix_alpha_opinion = j.value("mix_alpha_opinion", d.mix_alpha_opinion);
    c.zipf_exponent = j.value("zipf_exponent", d.zipf_exponent);
    c.common_zipf_exponent = j.value("common_zipf_exponent", d.common_zipf_exponent);
    c.embedding_noise = j.value("embedding_noise", d.embedding_noise);
    c.seed = j.value("seed", d.seed);
}

struct SyntheticReview {
    std::string doc_id;
    std::string text;
    std::string label;  // "pos" or "neg"
    std::string plot_id;
    int plot_block = 0;
    int opinion_block = 0;
    int style_block = 0;
};

struct SyntheticData {
    SyntheticConfig cfg;
    std::vector<SyntheticReview> train, dev, test;
    std::vector<std::pair<std::string, std::string>> plots;  // plot_id, text
    std::vector<AnnotatedSentence> annotations;
    std::vector<std::pair<std::string, Eigen::VectorXd>> word_vectors;
    json ground_truth;

    double expected_rho() const {
        return static_cast<double>(cfg.opinion_blocks) /
               static_cast<double>(cfg.opinion_blocks + cfg.plot_blocks);
    }

    void write(const std::string& dir) const;
};

namespace detail {

inline std::string synth_token(int word) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%04d", word);
    return buf;
}

inline std::string synth_plot_id(int p) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "plot%02d", p);
    return buf;
}

// block -> word sampler over its slice of the vocabulary, mild Zipf decay
struct BlockSampler {
    int first_word = 0;
    std::vector<double> cdf;

    int sample(Rng& rng) const {
        const double u = rng.uniform();
        auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        const int r = static_cast<int>(it - cdf.begin());
        return first_word + std::min<int>(r, static_cast<int>(cdf.size()) - 1);
    }
};

inline BlockSampler make_block_sampler(int first_word, int size, double exponent) {
    BlockSampler s;
    s.first_word = first_word;
    std::vector<double> w(size);
    double sum = 0.0;
    for (int r = 0; r < size; ++r) {
        w[r] = 1.0 / std::pow(static_cast<double>(r + 1), exponent);
        sum += w[r];
    }
    s.cdf.resize(size);
    double acc = 0.0;
    for (int r = 0; r < size; ++r) {
        acc += w[r] / sum;
        s.cdf[r] = acc;
    }
    s.cdf[size - 1] = 1.0;
    return s;
}

}  // namespace detail

inline SyntheticData synthetic_corpus(const SyntheticConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    SyntheticData data;
    data.cfg = cfg;

    const int bs = cfg.block_size();
    const int base = cfg.common_words;  // block words start after the common pool
    detail::BlockSampler common_sampler;
    if (cfg.common_words > 0)
        common_sampler =
            detail::make_block_sampler(0, cfg.common_words, cfg.common_zipf_exponent);
    std::vector<detail::BlockSampler> plot_samplers, opinion_samplers, style_samplers;
    for (int k = 0; k < cfg.plot_blocks; ++k)
        plot_samplers.push_back(detail::make_block_sampler(base + k * bs, bs, cfg.zipf_exponent));
    for (int s = 0; s < cfg.opinion_blocks; ++s)
        opinion_samplers.push_back(detail::make_block_sampler(base + (cfg.plot_blocks + s) * bs,
                                                              bs, cfg.zipf_exponent));
    for (int t = 0; t < cfg.style_blocks; ++t)
        style_samplers.push_back(detail::make_block_sampler(
            base + (cfg.plot_blocks + cfg.opinion_blocks + t) * bs, bs, cfg.zipf_exponent));
    auto draw_token = [&](const detail::BlockSampler& block) {
        if (cfg.common_fraction > 0.0 && rng.bernoulli(cfg.common_fraction))
            return common_sampler.sample(rng);
        return block.sample(rng);
    };

    auto sample_sentence = [&](const detail::BlockSampler& sampler, int len) {
        std::string text;
        for (int i = 0; i < len; ++i) {
            if (i > 0) text += ' ';
            text += detail::synth_token(sampler.sample(rng));
        }
        return text;
    };

    // reviews
    auto make_split = [&](const char* name, int count) {
        std::vector<SyntheticReview> out;
        out.reserve(count);
        for (int i = 0; i < count; ++i) {
            SyntheticReview r;
            char idbuf[32];
            std::snprintf(idbuf, sizeof(idbuf), "%s-%05d", name, i);
            r.doc_id = idbuf;
            r.plot_block = static_cast<int>(rng.index(cfg.plot_blocks));
            r.opinion_block = static_cast<int>(rng.index(cfg.opinion_blocks));
            r.style_block = cfg.style_blocks > 0
                                ? static_cast<int>(rng.index(cfg.style_blocks))
                                : -1;
            r.label = r.opinion_block < cfg.opinion_blocks / 2 ? "pos" : "neg";
            const int plot_slot = static_cast<int>(rng.index(cfg.plots_per_block));
            r.plot_id = detail::synth_plot_id(r.plot_block * cfg.plots_per_block + plot_slot);
            std::vector<double> alphas = {cfg.mix_alpha_plot, cfg.mix_alpha_opinion};
            if (r.style_block >= 0) alphas.push_back(cfg.mix_alpha_style);
            const auto mix = rng.dirichlet(alphas);
            const int len =
                cfg.doc_len_min + static_cast<int>(rng.index(cfg.doc_len_max - cfg.doc_len_min + 1));
            std::string text;
            for (int t = 0; t < len; ++t) {
                const double u = rng.uniform();
                const detail::BlockSampler* sampler = &plot_samplers[r.plot_block];
                if (u >= mix[0]) {
                    sampler = (u < mix[0] + mix[1] || r.style_block < 0)
                                  ? &opinion_samplers[r.opinion_block]
                                  : &style_samplers[r.style_block];
                }
                if (t > 0) text += ' ';
                text += detail::synth_token(draw_token(*sampler));
            }
            r.text = std::move(text);
            out.push_back(std::move(r));
        }
        return out;
    };
    data.train = make_split("train", cfg.train_docs);
    data.dev = make_split("dev", cfg.dev_docs);
    data.test = make_split("test", cfg.test_docs);

    // plots: plots_per_block per plot block, block words plus the common pool
    for (int k = 0; k < cfg.plot_blocks; ++k) {
        for (int slot = 0; slot < cfg.plots_per_block; ++slot) {
            const int p = k * cfg.plots_per_block + slot;
            std::string text;
            for (int t = 0; t < cfg.plot_len; ++t) {
                if (t > 0) text += ' ';
                text += detail::synth_token(draw_token(plot_samplers[k]));
            }
            data.plots.emplace_back(detail::synth_plot_id(p), std::move(text));
        }
    }

    // annotation pool with ground-truth proxy labels
    for (int i = 0; i < cfg.sentences_per_class; ++i) {
        const int pos_block = static_cast<int>(rng.index(cfg.opinion_blocks / 2));
        data.annotations.push_back(
            {sample_sentence(opinion_samplers[pos_block], cfg.sentence_len),
             ProxyLabel::Positive});
    }
    for (int i = 0; i < cfg.sentences_per_class; ++i) {
        const int neg_block =
            cfg.opinion_blocks / 2 + static_cast<int>(rng.index(cfg.opinion_blocks / 2));
        data.annotations.push_back(
            {sample_sentence(opinion_samplers[neg_block], cfg.sentence_len),
             ProxyLabel::Negative});
    }
    for (int i = 0; i < cfg.sentences_per_class; ++i) {
        const int block = static_cast<int>(rng.index(cfg.plot_blocks));
        data.annotations.push_back(
            {sample_sentence(plot_samplers[block], cfg.sentence_len), ProxyLabel::Plot});
    }
    for (int i = 0; i < cfg.sentences_per_class; ++i) {
        std::string text;
        for (int t = 0; t < cfg.sentence_len; ++t) {
            if (t > 0) text += ' ';
            text += detail::synth_token(static_cast<int>(rng.index(cfg.vocab_size)));
        }
        data.annotations.push_back({std::move(text), ProxyLabel::None});
    }

    // word vectors: one-hot block indicator plus small noise; common-pool and
    // leftover filler words get noise only
    const int dim = cfg.plot_blocks + cfg.opinion_blocks;
    for (int v = 0; v < cfg.vocab_size; ++v) {
        Eigen::VectorXd vec(dim);
        for (int d = 0; d < dim; ++d) vec(d) = cfg.embedding_noise * rng.normal();
        if (v >= base) {
            const int block = (v - base) / bs;
            if (block < dim) vec(block) += 1.0;
        }
        data.word_vectors.emplace_back(detail::synth_token(v), std::move(vec));
    }

    // ground truth
    json gt;
    gt["config"] = cfg;
    gt["expected_rho"] = data.expected_rho();
    gt["block_size"] = bs;
    json common = json::array();
    for (int r = 0; r < cfg.common_words; ++r) common.push_back(detail::synth_token(r));
    gt["common_words"] = common;
    json plot_words = json::array(), opinion_words = json::array(),
         style_words = json::array();
    for (int k = 0; k < cfg.plot_blocks; ++k) {
        json words = json::array();
        for (int r = 0; r < bs; ++r) words.push_back(detail::synth_token(base + k * bs + r));
        plot_words.push_back(words);
    }
    for (int s = 0; s < cfg.opinion_blocks; ++s) {
        json words = json::array();
        for (int r = 0; r < bs; ++r)
            words.push_back(detail::synth_token(base + (cfg.plot_blocks + s) * bs + r));
        opinion_words.push_back(words);
    }
    for (int t = 0; t < cfg.style_blocks; ++t) {
        json words = json::array();
        for (int r = 0; r < bs; ++r)
            words.push_back(
                detail::synth_token(base + (cfg.plot_blocks + cfg.opinion_blocks + t) * bs + r));
        style_words.push_back(words);
    }
    gt["plot_block_words"] = plot_words;
    gt["opinion_block_words"] = opinion_words;
    gt["style_block_words"] = style_words;
    json docs = json::object();
    auto record_docs = [&](const std::vector<SyntheticReview>& reviews) {
        for (const auto& r : reviews) {
            docs[r.doc_id] = {{"plot_block", r.plot_block},
                              {"opinion_block", r.opinion_block},
                              {"style_block", r.style_block},
                              {"label", r.label}};
        }
    };
    record_docs(data.train);
    record_docs(data.dev);
    record_docs(data.test);
    gt["docs"] = std::move(docs);
    data.ground_truth = std::move(gt);
    return data;
}

inline void SyntheticData::write(const std::string& dir) const {
    auto open = [](const std::string& path) {
        std::ofstream out(path, std::ios::trunc | std::ios::binary);
        if (!out) throw DataError("cannot write " + path);
        return out;
    };

    auto write_reviews = [&](const std::vector<SyntheticReview>& reviews,
                             const std::string& path) {
        auto out = open(path);
        for (const auto& r : reviews) {
            json j{{"doc_id", r.doc_id},
                   {"text", r.text},
                   {"label", r.label},
                   {"plot_id", r.plot_id}};
            out << j.dump() << '\n';
        }
    };
    write_reviews(train, dir + "/train.jsonl");
    write_reviews(dev, dir + "/dev.jsonl");
    write_reviews(test, dir + "/test.jsonl");

    {
        auto out = open(dir + "/plots.jsonl");
        for (const auto& [id, text] : plots) {
            json j{{"plot_id", id}, {"text", text}};
            out << j.dump() << '\n';
        }
    }
    {
        auto out = open(dir + "/annotations.jsonl");
        for (const auto& s : annotations) {
            json j{{"text", s.text}, {"label", proxy_label_name(s.label)}};
            out << j.dump() << '\n';
        }
    }
    {
        auto out = open(dir + "/embeddings.txt");
        char buf[64];
        for (const auto& [token, vec] : word_vectors) {
            out << token;
            for (Eigen::Index d = 0; d < vec.size(); ++d) {
                std::snprintf(buf, sizeof(buf), "%.9g", vec(d));
                out << ' ' << buf;
            }
            out << '\n';
        }
    }
    {
        auto out = open(dir + "/ground_truth.json");
        out << ground_truth.dump(2) << '\n';
    }
}

}  // namespace diatom
