// diatom: disentangled adversarial topic model over paired review/plot corpora.
//
// Subcommands: train, eval, topics, synth, export-vectors. One experiment
// config drives everything; flags only pick the subcommand and override the
// seed and output directory. Exit codes: 0 ok, 2 configuration/input error,
// 3 numerical failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "diatom/checkpoint.hpp"
#include "diatom/corpus.hpp"
#include "diatom/embeddings.hpp"
#include "diatom/errors.hpp"
#include "diatom/eval.hpp"
#include "diatom/model.hpp"
#include "diatom/synthetic.hpp"
#include "diatom/training.hpp"

namespace fs = std::filesystem;
using diatom::json;

namespace {

struct ExperimentPaths {
    std::string corpus;       // directory with train/dev/test/plots JSONL
    std::string annotations;  // annotated sentences JSONL
    std::string embeddings;   // word vector table
    std::string sentence_cache;  // optional precomputed sentence vectors
    std::string output_dir = ".";
};

struct ExperimentConfig {
    ExperimentPaths paths;
    diatom::ModelConfig model;
    diatom::TrainConfig train;
    diatom::CoherenceConfig coherence;
    int vocab_size = diatom::kDefaultVocabSize;
};

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw diatom::ConfigError("cannot open config " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw diatom::ConfigError(path + ": invalid JSON");
    ExperimentConfig cfg;
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        cfg.paths.corpus = p.value("corpus", "");
        cfg.paths.annotations = p.value("annotations", "");
        cfg.paths.embeddings = p.value("embeddings", "");
        cfg.paths.sentence_cache = p.value("sentence_cache", "");
        cfg.paths.output_dir = p.value("output_dir", ".");
    }
    if (j.contains("model")) cfg.model = j.at("model").get<diatom::ModelConfig>();
    if (j.contains("train")) cfg.train = j.at("train").get<diatom::TrainConfig>();
    if (j.contains("coherence")) cfg.coherence = j.at("coherence").get<diatom::CoherenceConfig>();
    cfg.vocab_size = j.value("vocab_size", diatom::kDefaultVocabSize);
    return cfg;
}

std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("DIATOM_SEED");
    if (!v || !*v) return std::nullopt;
    return static_cast<std::uint64_t>(std::strtoull(v, nullptr, 10));
}

void apply_overrides(ExperimentConfig& cfg, const std::optional<std::uint64_t>& seed_flag,
                     const std::string& output_dir_flag) {
    if (auto s = env_seed()) cfg.train.seed = *s;
    if (seed_flag) cfg.train.seed = *seed_flag;
    if (!output_dir_flag.empty()) cfg.paths.output_dir = output_dir_flag;
}

void require_path(const std::string& path, const char* what) {
    if (path.empty())
        throw diatom::ConfigError(std::string("config is missing paths.") + what);
    if (!fs::exists(path))
        throw diatom::ConfigError(std::string(what) + " path does not exist: " + path);
}

int cmd_train(const std::string& config_path, const std::optional<std::uint64_t>& seed,
              const std::string& output_dir) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    apply_overrides(cfg, seed, output_dir);
    require_path(cfg.paths.corpus, "corpus");
    fs::create_directories(cfg.paths.output_dir);

    std::ofstream log(cfg.paths.output_dir + "/train.log", std::ios::trunc);
    auto logline = [&](const std::string& s) {
        log << s << '\n';
        std::cout << s << '\n';
    };

    diatom::CorpusData corpus = diatom::load_corpus(cfg.paths.corpus, cfg.vocab_size);
    logline("loaded corpus: " + corpus.stats.describe());
    for (const auto& w : corpus.warnings) log << "warning: " << w << '\n';

    cfg.model.V = corpus.vocab.size();
    cfg.model.P = static_cast<int>(corpus.split.plots.size());
    cfg.model.validate();
    cfg.train.validate();

    diatom::Model model(cfg.model, cfg.train.seed);
    model.set_background(
        diatom::background_log_frequency(corpus.split.train, corpus.vocab));

    const auto t0 = std::chrono::steady_clock::now();
    diatom::TrainResult result =
        diatom::train(model, corpus.split, cfg.train, [&](const diatom::EpochRecord& e) {
            char buf[256];
            std::snprintf(buf, sizeof(buf),
                          "epoch %d stage-terms=%zu train=%.4f dev=%.4f (%.1fs)", e.epoch,
                          e.active_terms.size(), e.train.total, e.dev.total, e.seconds);
            logline(buf);
        });
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    logline("training finished in " + std::to_string(elapsed) + "s, best epoch " +
            std::to_string(result.best_epoch));

    // best-dev parameters go into the checkpoint
    diatom::Model best(cfg.model, std::move(result.best_params));
    diatom::save_checkpoint(cfg.paths.output_dir + "/checkpoint.bin", best, corpus.vocab);

    std::ofstream hist(cfg.paths.output_dir + "/history.jsonl",
                       std::ios::trunc | std::ios::binary);
    hist << diatom::history_to_jsonl(result.history);

    json resolved;
    resolved["paths"] = {{"corpus", cfg.paths.corpus},
                         {"annotations", cfg.paths.annotations},
                         {"embeddings", cfg.paths.embeddings},
                         {"sentence_cache", cfg.paths.sentence_cache},
                         {"output_dir", cfg.paths.output_dir}};
    resolved["model"] = cfg.model;
    resolved["train"] = cfg.train;
    resolved["coherence"] = cfg.coherence;
    resolved["vocab_size"] = cfg.vocab_size;
    std::ofstream rc(cfg.paths.output_dir + "/config.resolved.json",
                     std::ios::trunc | std::ios::binary);
    rc << resolved.dump(2) << '\n';
    return 0;
}

std::vector<diatom::TopicLabel> compute_labels(const diatom::Model& model,
                                               const diatom::Vocabulary& vocab,
                                               const ExperimentConfig& cfg,
                                               std::vector<int>* unlabelable) {
    require_path(cfg.paths.annotations, "annotations");
    require_path(cfg.paths.embeddings, "embeddings");
    auto annotations = diatom::load_annotations(cfg.paths.annotations);
    auto table = diatom::load_embedding_table(cfg.paths.embeddings);
    std::optional<diatom::SentenceCache> cache;
    if (!cfg.paths.sentence_cache.empty())
        cache = diatom::load_sentence_cache(cfg.paths.sentence_cache);

    auto topics = model.topic_word_matrix(vocab, diatom::kLabelTopWords);
    std::vector<diatom::TopicLabel> labels;
    for (const auto& t : topics.topics) {
        try {
            labels.push_back(
                diatom::label_topic(t, annotations, table, cache ? &*cache : nullptr));
        } catch (const diatom::DataError&) {
            if (unlabelable) unlabelable->push_back(t.index);
        }
    }
    return labels;
}

int cmd_eval(const std::string& model_path, const std::string& config_path,
             const std::string& metrics_csv, const std::string& output_path) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    auto loaded = diatom::load_checkpoint(model_path);

    std::set<std::string> metrics;
    {
        std::stringstream ss(metrics_csv);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) metrics.insert(item);
        }
    }
    if (metrics.empty()) metrics = {"coherence", "tu", "accuracy", "labels", "rho"};
    for (const auto& m : metrics) {
        if (m != "coherence" && m != "tu" && m != "accuracy" && m != "labels" && m != "rho")
            throw diatom::ConfigError("unknown metric '" + m + "'");
    }

    diatom::EvalReport report;
    report.configured_ratio =
        static_cast<double>(loaded.config.S) / (loaded.config.S + loaded.config.K);
    json details;

    auto topics = loaded.model.topic_word_matrix(loaded.vocab, cfg.coherence.top_n);

    if (metrics.count("coherence")) {
        require_path(cfg.paths.corpus, "corpus");
        diatom::CorpusData corpus = diatom::load_corpus(cfg.paths.corpus, cfg.vocab_size);
        auto coh = diatom::npmi_coherence(topics, corpus.train_tokens, cfg.coherence);
        report.mean_coherence = coh.mean;
        details["coherence_per_topic"] = coh.per_topic;
        details["coherence_undefined_topics"] = coh.undefined_topics;
    }
    if (metrics.count("tu")) {
        auto tu = diatom::topic_uniqueness(topics, std::min(10, cfg.coherence.top_n));
        report.mean_uniqueness = tu.mean;
        details["tu_per_topic"] = tu.per_topic;
    }
    if (metrics.count("accuracy")) {
        require_path(cfg.paths.corpus, "corpus");
        diatom::CorpusData corpus = diatom::load_corpus(cfg.paths.corpus, cfg.vocab_size);
        auto acc = diatom::sentiment_accuracy(loaded.model, corpus.split.test);
        report.accuracy = acc.accuracy;
        details["accuracy_evaluated"] = acc.evaluated;
        details["accuracy_skipped"] = acc.skipped;
    }
    if (metrics.count("labels") || metrics.count("rho")) {
        std::vector<int> unlabelable;
        report.labels = compute_labels(loaded.model, loaded.vocab, cfg, &unlabelable);
        if (!unlabelable.empty()) details["unlabelable_topics"] = unlabelable;
        if (metrics.count("rho") && !report.labels.empty())
            report.rho = diatom::disentanglement_rate(report.labels);
    }
    report.details = details;

    std::string out_path = output_path;
    if (out_path.empty()) {
        fs::create_directories(cfg.paths.output_dir);
        out_path = cfg.paths.output_dir + "/report.json";
    }
    std::ofstream out(out_path, std::ios::trunc | std::ios::binary);
    if (!out) throw diatom::DataError("cannot write " + out_path);
    out << report.to_json().dump(2) << '\n';
    std::cout << report.to_json().dump(2) << '\n';
    return 0;
}

int cmd_topics(const std::string& model_path, int top_words, const std::string& config_path) {
    auto loaded = diatom::load_checkpoint(model_path);
    if (top_words > loaded.config.V) {
        std::cerr << "warning: --top-words " << top_words << " exceeds vocabulary size "
                  << loaded.config.V << ", clamping\n";
        top_words = loaded.config.V;
    }
    auto topics = loaded.model.topic_word_matrix(loaded.vocab, top_words);

    std::vector<diatom::TopicLabel> labels;
    if (!config_path.empty()) {
        ExperimentConfig cfg = load_experiment_config(config_path);
        if (!cfg.paths.annotations.empty() && !cfg.paths.embeddings.empty())
            labels = compute_labels(loaded.model, loaded.vocab, cfg, nullptr);
    }

    for (const auto& t : topics.topics) {
        std::cout << "topic " << t.index << " [" << (t.opinion ? "opinion" : "plot") << "]";
        for (const auto& l : labels)
            if (l.topic_index == t.index) std::cout << " (" << proxy_label_name(l.label) << ")";
        std::cout << ":";
        for (const auto& [tok, _] : t.top_words) std::cout << ' ' << tok;
        std::cout << '\n';
    }
    return 0;
}

int cmd_synth(const std::string& gen_config_path, const std::optional<std::uint64_t>& seed,
              const std::string& output_dir) {
    diatom::SyntheticConfig cfg;
    if (!gen_config_path.empty()) {
        std::ifstream in(gen_config_path);
        if (!in) throw diatom::ConfigError("cannot open gen-config " + gen_config_path);
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded())
            throw diatom::ConfigError(gen_config_path + ": invalid JSON");
        cfg = j.get<diatom::SyntheticConfig>();
    }
    if (auto s = env_seed()) cfg.seed = *s;
    if (seed) cfg.seed = *seed;
    const std::string dir = output_dir.empty() ? "." : output_dir;
    fs::create_directories(dir);
    diatom::SyntheticData data = diatom::synthetic_corpus(cfg);
    data.write(dir);
    std::cout << "wrote synthetic corpus to " << dir << " (train=" << data.train.size()
              << ", dev=" << data.dev.size() << ", test=" << data.test.size()
              << ", plots=" << data.plots.size() << ")\n";
    return 0;
}

int cmd_export_vectors(const std::string& model_path, const std::string& output,
                       const std::string& config_path) {
    auto loaded = diatom::load_checkpoint(model_path);
    std::vector<diatom::TopicLabel> labels;
    if (!config_path.empty()) {
        ExperimentConfig cfg = load_experiment_config(config_path);
        if (!cfg.paths.annotations.empty() && !cfg.paths.embeddings.empty())
            labels = compute_labels(loaded.model, loaded.vocab, cfg, nullptr);
    }
    diatom::export_topic_vectors(loaded.model, loaded.vocab,
                                 labels.empty() ? nullptr : &labels, output);
    std::cout << "wrote " << output << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DIATOM: disentangled adversarial topic model"};
    app.require_subcommand(1);

    std::string config_path, model_path, gen_config_path, metrics, output_path, output_dir;
    int top_words = 10;
    std::optional<std::uint64_t> seed;

    auto* train = app.add_subcommand("train", "train a model from an experiment config");
    train->add_option("--config", config_path, "experiment config JSON")->required();
    train->add_option("--seed", seed, "override the training seed");
    train->add_option("--output-dir", output_dir, "override paths.output_dir");

    auto* eval = app.add_subcommand("eval", "run the evaluation battery on a checkpoint");
    eval->add_option("--model", model_path, "checkpoint file")->required();
    eval->add_option("--config", config_path, "experiment config JSON")->required();
    eval->add_option("--metrics", metrics, "comma list: coherence,tu,accuracy,labels,rho");
    eval->add_option("--output", output_path, "report path (default: output_dir/report.json)");

    auto* topics = app.add_subcommand("topics", "print topics with top words");
    topics->add_option("--model", model_path, "checkpoint file")->required();
    topics->add_option("--top-words", top_words, "words per topic (default 10)");
    topics->add_option("--config", config_path, "config providing annotations/embeddings");

    auto* synth = app.add_subcommand("synth", "generate a planted synthetic corpus");
    synth->add_option("--gen-config", gen_config_path, "generator config JSON");
    synth->add_option("--seed", seed, "override the generator seed");
    synth->add_option("--output-dir", output_dir, "where to write the corpus files");

    auto* exportv = app.add_subcommand("export-vectors", "write topic vectors as CSV");
    exportv->add_option("--model", model_path, "checkpoint file")->required();
    exportv->add_option("--output", output_path, "CSV path")->required();
    exportv->add_option("--config", config_path, "config providing annotations/embeddings");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, seed, output_dir);
        if (eval->parsed()) return cmd_eval(model_path, config_path, metrics, output_path);
        if (topics->parsed()) return cmd_topics(model_path, top_words, config_path);
        if (synth->parsed()) return cmd_synth(gen_config_path, seed, output_dir);
        if (exportv->parsed()) return cmd_export_vectors(model_path, output_path, config_path);
    } catch (const diatom::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const diatom::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const diatom::DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
