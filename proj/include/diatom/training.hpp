#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "diatom/corpus.hpp"
#include "diatom/errors.hpp"
#include "diatom/model.hpp"
#include "diatom/rng.hpp"

namespace diatom {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 30;
    int batch_size = 64;
    double learning_rate = 0.002;  // searched in [0.001, 0.5]
    double dropout = 0.2;          // encoder hidden layers only, in [0, 0.6]
    int unfreeze_e = 5;  // epoch that unfreezes the classifiers
    int unfreeze_n = 5;  // offset to the adversarial stage (epoch e+n)
    std::uint64_t seed = 42;
    int early_stop_patience = 10;

    void validate() const {
        if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be > 0");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("TrainConfig: dropout in [0,1)");
        if (unfreeze_e < 0 || unfreeze_n < 0)
            throw ConfigError("TrainConfig: unfreeze offsets must be >= 0");
        if (early_stop_patience < 1) throw ConfigError("TrainConfig: patience must be >= 1");
    }
};

inline void to_json(json& j, const TrainConfig& c) {
    j = json{{"epochs", c.epochs},
             {"batch_size", c.batch_size},
             {"learning_rate", c.learning_rate},
             {"dropout", c.dropout},
             {"unfreeze_e", c.unfreeze_e},
             {"unfreeze_n", c.unfreeze_n},
             {"seed", c.seed},
             {"early_stop_patience", c.early_stop_patience}};
}

inline void from_json(const json& j, TrainConfig& c) {
    TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.dropout = j.value("dropout", d.dropout);
    c.unfreeze_e = j.value("unfreeze_e", d.unfreeze_e);
    c.unfreeze_n = j.value("unfreeze_n", d.unfreeze_n);
    c.seed = j.value("seed", d.seed);
    c.early_stop_patience = j.value("early_stop_patience", d.early_stop_patience);
}

// ---------------------------------------------------------------------------
// Sequential unfreezing
// ---------------------------------------------------------------------------

// Stage 0: autoencoder only (reconstruction, KLs, orthogonality, plot VAE and
// plot classifier). Stage 1 (epoch >= e): sentiment loss and head. Stage 2
// (epoch >= e+n): the adversarial term.
struct StagePlan {
    int stage = 0;
    ActiveTerms active;
    std::vector<std::string> term_names;
    std::vector<std::string> group_names;

    bool group_active(ParamGroup g) const {
        if (g == ParamGroup::Fixed) return false;
        if (g == ParamGroup::SentimentHead) return stage >= 1;
        return true;
    }
};

inline StagePlan unfreeze_schedule(int epoch, const TrainConfig& cfg,
                                   const ModelConfig& model_cfg) {
    if (epoch < 0) throw ConfigError("unfreeze_schedule: epoch must be >= 0");
    StagePlan plan;
    if (epoch < cfg.unfreeze_e) {
        plan.stage = 0;
    } else if (epoch < cfg.unfreeze_e + cfg.unfreeze_n) {
        plan.stage = 1;
    } else {
        plan.stage = 2;
    }
    plan.active.sentiment = plan.stage >= 1;
    plan.active.adversarial = plan.stage >= 2;

    plan.term_names = {"L_x", "KL_a", "KL_s"};
    if (model_cfg.enable_orth) plan.term_names.push_back("L_orth");
    if (model_cfg.enable_plot_net) {
        plan.term_names.push_back("L_d");
        plan.term_names.push_back("L_plot_za");
        plan.term_names.push_back("L_plot_zd");
    }
    if (plan.active.sentiment && model_cfg.enable_sentiment)
        plan.term_names.push_back("L_sent");
    if (plan.active.adversarial && model_cfg.enable_adversarial)
        plan.term_names.push_back("L_adv");

    plan.group_names = {param_group_name(ParamGroup::Autoencoder)};
    if (model_cfg.enable_plot_net)
        plan.group_names.push_back(param_group_name(ParamGroup::PlotHead));
    if (plan.stage >= 1 && model_cfg.enable_sentiment)
        plan.group_names.push_back(param_group_name(ParamGroup::SentimentHead));
    return plan;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

class Adam {
public:
    double lr = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit Adam(double learning_rate) : lr(learning_rate) {}

    void step(ModelParams& params, const StagePlan& plan) {
        auto tensors = params.registry();
        if (m_.empty()) {
            for (Tensor* t : tensors) {
                m_.push_back(MatrixXd::Zero(t->v.rows(), t->v.cols()));
                v_.push_back(MatrixXd::Zero(t->v.rows(), t->v.cols()));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, t_);
        const double bc2 = 1.0 - std::pow(beta2, t_);
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            Tensor* t = tensors[i];
            if (!t->trainable || !plan.group_active(t->group)) continue;
            m_[i] = beta1 * m_[i] + (1.0 - beta1) * t->g;
            v_[i] = beta2 * v_[i] + (1.0 - beta2) * t->g.cwiseProduct(t->g);
            const MatrixXd mhat = m_[i] / bc1;
            const MatrixXd vhat = v_[i] / bc2;
            t->v.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
        }
    }

private:
    std::vector<MatrixXd> m_, v_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// Dataset preparation and batching
// ---------------------------------------------------------------------------

// Training-ready view of a corpus: non-empty documents, integer labels,
// plot-id indices and densified plot documents.
struct Dataset {
    const std::vector<BowDocument>* docs = nullptr;
    std::vector<int> usable;                        // indices of non-empty docs
    std::vector<int> labels;                        // aligned with docs
    std::vector<int> plot_index;                    // aligned with docs, -1 = none
    std::vector<const PlotDocument*> plots;         // plot_index -> document
    int skipped_empty = 0;
};

inline Dataset prepare_dataset(const std::vector<BowDocument>& docs,
                               const std::vector<PlotDocument>& plots,
                               const ModelConfig& cfg) {
    Dataset ds;
    ds.docs = &docs;
    std::unordered_map<std::string, int> plot_ids;
    for (const auto& p : plots) {
        plot_ids.emplace(p.plot_id, static_cast<int>(ds.plots.size()));
        ds.plots.push_back(&p);
    }
    ds.labels.resize(docs.size(), -1);
    ds.plot_index.resize(docs.size(), -1);
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& d = docs[i];
        if (d.empty()) {
            ++ds.skipped_empty;
        } else {
            ds.usable.push_back(static_cast<int>(i));
        }
        if (d.sentiment_label) {
            const int y = sentiment_index(*d.sentiment_label);
            if (y >= cfg.M)
                throw ConfigError("document '" + d.doc_id + "' has label index " +
                                  std::to_string(y) + " but M=" + std::to_string(cfg.M));
            ds.labels[i] = y;
        }
        if (d.plot_id) {
            auto it = plot_ids.find(*d.plot_id);
            if (it == plot_ids.end())
                throw ConfigError("document '" + d.doc_id + "' references unknown plot");
            ds.plot_index[i] = it->second;
        }
    }
    return ds;
}

inline Batch make_batch(const Dataset& ds, const std::vector<int>& doc_indices,
                        const ModelConfig& cfg) {
    const Eigen::Index B = static_cast<Eigen::Index>(doc_indices.size());
    Batch batch;
    batch.X = MatrixXd::Zero(B, cfg.V);
    batch.labels.resize(B);
    batch.plot_labels.resize(B);
    std::vector<int> plot_rows;
    for (Eigen::Index b = 0; b < B; ++b) {
        const int i = doc_indices[b];
        for (const auto& [id, c] : (*ds.docs)[i].counts) batch.X(b, id) = c;
        batch.labels[b] = ds.labels[i];
        batch.plot_labels[b] = ds.plot_index[i];
        if (cfg.enable_plot_net && ds.plot_index[i] >= 0 &&
            !ds.plots[ds.plot_index[i]]->counts.empty()) {
            plot_rows.push_back(static_cast<int>(b));
        }
    }
    batch.Xp = MatrixXd::Zero(static_cast<Eigen::Index>(plot_rows.size()), cfg.V);
    for (std::size_t r = 0; r < plot_rows.size(); ++r) {
        const int i = doc_indices[plot_rows[r]];
        for (const auto& [id, c] : ds.plots[ds.plot_index[i]]->counts)
            batch.Xp(static_cast<Eigen::Index>(r), id) = c;
        batch.xp_doc.push_back(plot_rows[r]);
    }
    return batch;
}

inline MatrixXd dropout_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, double p) {
    if (p <= 0.0) return MatrixXd();
    MatrixXd mask(rows, cols);
    const double keep = 1.0 - p;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            mask(i, j) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    return mask;
}

inline BatchNoise sample_noise(Rng& rng, const Batch& batch, const ModelConfig& cfg,
                               double dropout) {
    BatchNoise n;
    const Eigen::Index B = batch.size();
    const Eigen::Index Bp = batch.plot_rows();
    auto normal_matrix = [&rng](Eigen::Index r, Eigen::Index c) {
        MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
        return m;
    };
    for (int l = 0; l < cfg.L; ++l) {
        n.eps_a.push_back(normal_matrix(B, cfg.K));
        n.eps_s.push_back(normal_matrix(B, cfg.S));
        n.eps_d.push_back(normal_matrix(Bp, cfg.K));
    }
    n.drop_a = dropout_mask(rng, B, cfg.hidden_doc, dropout);
    n.drop_s = dropout_mask(rng, B, cfg.hidden_doc, dropout);
    n.drop_d = dropout_mask(rng, Bp, cfg.hidden_doc, dropout);
    return n;
}

// ---------------------------------------------------------------------------
// Deterministic evaluation of the full objective (dev loss)
// ---------------------------------------------------------------------------

// Mean-latent, eval-mode pass over a document list. All terms are active so
// the scalar is comparable across unfreezing stages.
inline LossBreakdown evaluate_objective(Model& model, const Dataset& ds,
                                        int chunk_size = 256) {
    LossBreakdown acc;
    double docs_total = 0.0;
    double plots_total = 0.0;
    ForwardOptions opts;
    opts.training = false;
    opts.update_bn_stats = false;
    opts.compute_grads = false;
    for (std::size_t start = 0; start < ds.usable.size();
         start += static_cast<std::size_t>(chunk_size)) {
        std::vector<int> idx(ds.usable.begin() + static_cast<std::ptrdiff_t>(start),
                             ds.usable.begin() +
                                 static_cast<std::ptrdiff_t>(std::min(
                                     ds.usable.size(), start + static_cast<std::size_t>(chunk_size))));
        Batch batch = make_batch(ds, idx, model.cfg);
        BatchNoise noise = zero_noise(batch, model.cfg);
        LossBreakdown b = model.forward_backward(batch, noise, opts);
        const double w = static_cast<double>(batch.size());
        const double wp = static_cast<double>(batch.plot_rows());
        acc.L_x += b.L_x * w;
        acc.KL_a += b.KL_a * w;
        acc.KL_s += b.KL_s * w;
        acc.L_adv += b.L_adv * w;
        acc.L_sent += b.L_sent * w;  // weighted by batch size; labeled subsets close enough
        acc.L_plot_za += b.L_plot_za * w;
        acc.L_d += b.L_d * wp;
        acc.L_plot_zd += b.L_plot_zd * wp;
        acc.L_orth = b.L_orth;  // model-level term, not per-document
        docs_total += w;
        plots_total += wp;
    }
    if (docs_total > 0.0) {
        acc.L_x /= docs_total;
        acc.KL_a /= docs_total;
        acc.KL_s /= docs_total;
        acc.L_adv /= docs_total;
        acc.L_sent /= docs_total;
        acc.L_plot_za /= docs_total;
    }
    if (plots_total > 0.0) {
        acc.L_d /= plots_total;
        acc.L_plot_zd /= plots_total;
    }
    acc.total = total_loss(acc, model.cfg, ActiveTerms{true, true});
    return acc;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    LossBreakdown train;
    LossBreakdown dev;
    std::vector<std::string> active_terms;
    std::vector<std::string> active_groups;
    double seconds = 0.0;  // reported in logs only, never in history files
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_dev_total = std::numeric_limits<double>::infinity();
};

inline json breakdown_to_json(const LossBreakdown& b) {
    return json{{"L_x", b.L_x},       {"KL_a", b.KL_a},
                {"KL_s", b.KL_s},     {"L_adv", b.L_adv},
                {"L_sent", b.L_sent}, {"L_orth", b.L_orth},
                {"L_d", b.L_d},       {"L_plot_za", b.L_plot_za},
                {"L_plot_zd", b.L_plot_zd}, {"total", b.total}};
}

// One line per epoch; wall-clock stays out so identical runs produce
// byte-identical files.
inline std::string history_to_jsonl(const TrainHistory& history) {
    std::string out;
    for (const auto& e : history.epochs) {
        json j{{"epoch", e.epoch},
               {"train", breakdown_to_json(e.train)},
               {"dev", breakdown_to_json(e.dev)},
               {"active_terms", e.active_terms},
               {"active_groups", e.active_groups},
               {"best_so_far", e.epoch == history.best_epoch}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

struct TrainResult {
    TrainHistory history;
    ModelParams best_params;
    int best_epoch = -1;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(Model& model, const CorpusSplit& split, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = nullptr) {
    cfg.validate();
    Dataset train_ds = prepare_dataset(split.train, split.plots, model.cfg);
    Dataset dev_ds = prepare_dataset(split.dev, split.plots, model.cfg);
    if (train_ds.usable.empty()) throw ConfigError("train: empty training set");

    Rng rng(cfg.seed);
    Adam adam(cfg.learning_rate);
    TrainResult result;

    std::vector<int> order = train_ds.usable;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        StagePlan plan = unfreeze_schedule(epoch, cfg, model.cfg);
        rng.shuffle(order);

        LossBreakdown train_acc;
        double seen = 0.0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
            std::vector<int> idx(
                order.begin() + static_cast<std::ptrdiff_t>(start),
                order.begin() + static_cast<std::ptrdiff_t>(
                                    std::min(order.size(),
                                             start + static_cast<std::size_t>(cfg.batch_size))));
            Batch batch = make_batch(train_ds, idx, model.cfg);
            BatchNoise noise = sample_noise(rng, batch, model.cfg, cfg.dropout);
            ForwardOptions opts;
            opts.training = true;
            opts.update_bn_stats = true;
            opts.compute_grads = true;
            opts.active = plan.active;
            LossBreakdown b;
            try {
                b = model.forward_backward(batch, noise, opts);
            } catch (const NumericalError& e) {
                throw NumericalError("epoch " + std::to_string(epoch) + " batch " +
                                     std::to_string(batch_index) + ": " + e.what());
            }
            adam.step(model.params, plan);

            const double w = static_cast<double>(batch.size());
            train_acc.L_x += b.L_x * w;
            train_acc.KL_a += b.KL_a * w;
            train_acc.KL_s += b.KL_s * w;
            train_acc.L_adv += b.L_adv * w;
            train_acc.L_sent += b.L_sent * w;
            train_acc.L_orth += b.L_orth * w;
            train_acc.L_d += b.L_d * w;
            train_acc.L_plot_za += b.L_plot_za * w;
            train_acc.L_plot_zd += b.L_plot_zd * w;
            train_acc.total += b.total * w;
            seen += w;
        }
        if (seen > 0.0) {
            train_acc.L_x /= seen;
            train_acc.KL_a /= seen;
            train_acc.KL_s /= seen;
            train_acc.L_adv /= seen;
            train_acc.L_sent /= seen;
            train_acc.L_orth /= seen;
            train_acc.L_d /= seen;
            train_acc.L_plot_za /= seen;
            train_acc.L_plot_zd /= seen;
            train_acc.total /= seen;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train = train_acc;
        rec.dev = dev_ds.usable.empty() ? train_acc : evaluate_objective(model, dev_ds);
        rec.active_terms = plan.term_names;
        rec.active_groups = plan.group_names;
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (rec.dev.total < result.history.best_dev_total) {
            result.history.best_dev_total = rec.dev.total;
            result.history.best_epoch = epoch;
            result.best_epoch = epoch;
            result.best_params = model.params;
        }
        result.history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (epoch - result.history.best_epoch >= cfg.early_stop_patience) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Gradient check: analytic vs central finite differences
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    std::string tensor;
    double max_rel_err = 0.0;
    Eigen::Index worst_row = 0, worst_col = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;

    bool pass(double tolerance) const { return max_rel_err <= tolerance; }
};

// The adversarial branch runs against a head snapshot taken before
// perturbation, so the finite difference agrees with the implemented
// stop-gradient semantics exactly.
inline GradCheckReport gradient_check(
    Model& model, const Batch& batch, const BatchNoise& noise, const ActiveTerms& active,
    double fd_step = 1e-5,
    const std::function<void(ModelParams&)>& corrupt_grads = nullptr) {
    const HeadSnapshot snap = model.snapshot_head();

    ForwardOptions opts;
    opts.training = true;
    opts.update_bn_stats = false;
    opts.compute_grads = true;
    opts.active = active;
    opts.frozen_head = &snap;
    model.forward_backward(batch, noise, opts);

    std::vector<MatrixXd> analytic;
    for (Tensor* t : model.params.registry()) analytic.push_back(t->g);
    if (corrupt_grads) {
        corrupt_grads(model.params);
        analytic.clear();
        for (Tensor* t : model.params.registry()) analytic.push_back(t->g);
    }

    ForwardOptions probe = opts;
    probe.compute_grads = false;

    GradCheckReport report;
    auto tensors = model.params.registry();
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
        Tensor* t = tensors[ti];
        if (!t->trainable) continue;
        GradCheckEntry entry;
        entry.tensor = t->name;
        for (Eigen::Index i = 0; i < t->v.rows(); ++i) {
            for (Eigen::Index j = 0; j < t->v.cols(); ++j) {
                const double old = t->v(i, j);
                const double h = fd_step * std::max(1.0, std::abs(old));
                t->v(i, j) = old + h;
                const double lp = model.forward_backward(batch, noise, probe).total;
                t->v(i, j) = old - h;
                const double lm = model.forward_backward(batch, noise, probe).total;
                t->v(i, j) = old;
                const double fd = (lp - lm) / (2.0 * h);
                const double an = analytic[ti](i, j);
                const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
                const double rel = std::abs(fd - an) / denom;
                if (rel > entry.max_rel_err) {
                    entry.max_rel_err = rel;
                    entry.worst_row = i;
                    entry.worst_col = j;
                }
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace diatom
