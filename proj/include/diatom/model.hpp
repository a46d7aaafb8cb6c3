#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diatom/corpus.hpp"
#include "diatom/errors.hpp"
#include "diatom/nn.hpp"
#include "diatom/rng.hpp"

namespace diatom {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
    int V = 0;  // vocabulary size
    int K = 25; // plot/neutral topics
    int S = 25; // opinion topics
    int M = 2;  // sentiment classes
    int P = 0;  // plot classes (0 disables the plot classifier even when the net is on)

    int hidden_doc = 100;  // encoder hidden width
    int hidden_clf = 50;   // classifier hidden width
    int L = 1;             // Monte Carlo samples

    double alpha = 1.0;  // reconstruction + KL
    double beta = 1.0;   // adversarial
    double gamma = 1.0;  // sentiment
    double eta = 1.0;    // orthogonality
    double weight_plot_vae = 1.0;
    double weight_plot_za = 1.0;
    double weight_plot_zd = 1.0;

    bool enable_orth = true;
    bool enable_sentiment = true;
    bool enable_adversarial = true;
    bool enable_plot_net = true;
    bool enable_batchnorm = true;

    // Test mode: the mixing layers pass their input through unchanged.
    bool identity_mix = false;

    // "xavier" or "sparse"; sparse puts a handful of unit-Gaussian entries
    // per topic column and zeroes the rest.
    std::string decoder_init = "sparse";

    void validate() const {
        if (V < 1) throw ConfigError("ModelConfig: V must be >= 1");
        if (K < 1) throw ConfigError("ModelConfig: K must be >= 1");
        if (S < 1) throw ConfigError("ModelConfig: S must be >= 1");
        if (M < 2) throw ConfigError("ModelConfig: M must be >= 2");
        if (P < 0) throw ConfigError("ModelConfig: P must be >= 0");
        if (hidden_doc < 1 || hidden_clf < 1) throw ConfigError("ModelConfig: hidden sizes");
        if (L < 1) throw ConfigError("ModelConfig: L must be >= 1");
        for (double w : {alpha, beta, gamma, eta, weight_plot_vae, weight_plot_za,
                         weight_plot_zd}) {
            if (!std::isfinite(w) || w < 0.0)
                throw ConfigError("ModelConfig: loss weights must be finite and >= 0");
        }
        if (decoder_init != "sparse" && decoder_init != "xavier")
            throw ConfigError("ModelConfig: decoder_init must be 'sparse' or 'xavier'");
    }
};

inline void to_json(json& j, const ModelConfig& c) {
    j = json{{"V", c.V},
             {"K", c.K},
             {"S", c.S},
             {"M", c.M},
             {"P", c.P},
             {"hidden_doc", c.hidden_doc},
             {"hidden_clf", c.hidden_clf},
             {"L", c.L},
             {"alpha", c.alpha},
             {"beta", c.beta},
             {"gamma", c.gamma},
             {"eta", c.eta},
             {"weight_plot_vae", c.weight_plot_vae},
             {"weight_plot_za", c.weight_plot_za},
             {"weight_plot_zd", c.weight_plot_zd},
             {"enable_orth", c.enable_orth},
             {"enable_sentiment", c.enable_sentiment},
             {"enable_adversarial", c.enable_adversarial},
             {"enable_plot_net", c.enable_plot_net},
             {"enable_batchnorm", c.enable_batchnorm},
             {"identity_mix", c.identity_mix},
             {"decoder_init", c.decoder_init}};
}

inline void from_json(const json& j, ModelConfig& c) {
    ModelConfig d;
    c.V = j.value("V", d.V);
    c.K = j.value("K", d.K);
    c.S = j.value("S", d.S);
    c.M = j.value("M", d.M);
    c.P = j.value("P", d.P);
    c.hidden_doc = j.value("hidden_doc", d.hidden_doc);
    c.hidden_clf = j.value("hidden_clf", d.hidden_clf);
    c.L = j.value("L", d.L);
    c.alpha = j.value("alpha", d.alpha);
    c.beta = j.value("beta", d.beta);
    c.gamma = j.value("gamma", d.gamma);
    c.eta = j.value("eta", d.eta);
    c.weight_plot_vae = j.value("weight_plot_vae", d.weight_plot_vae);
    c.weight_plot_za = j.value("weight_plot_za", d.weight_plot_za);
    c.weight_plot_zd = j.value("weight_plot_zd", d.weight_plot_zd);
    c.enable_orth = j.value("enable_orth", d.enable_orth);
    c.enable_sentiment = j.value("enable_sentiment", d.enable_sentiment);
    c.enable_adversarial = j.value("enable_adversarial", d.enable_adversarial);
    c.enable_plot_net = j.value("enable_plot_net", d.enable_plot_net);
    c.enable_batchnorm = j.value("enable_batchnorm", d.enable_batchnorm);
    c.identity_mix = j.value("identity_mix", d.identity_mix);
    c.decoder_init = j.value("decoder_init", d.decoder_init);
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

enum class ParamGroup { Autoencoder, SentimentHead, PlotHead, Fixed };

inline const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Autoencoder: return "autoencoder";
        case ParamGroup::SentimentHead: return "sentiment_head";
        case ParamGroup::PlotHead: return "plot_head";
        case ParamGroup::Fixed: return "fixed";
    }
    return "?";
}

struct Tensor {
    std::string name;
    ParamGroup group = ParamGroup::Autoencoder;
    bool trainable = true;
    MatrixXd v;  // value
    MatrixXd g;  // gradient, same shape

    void init(const std::string& n, Eigen::Index rows, Eigen::Index cols, ParamGroup grp,
              bool train = true) {
        name = n;
        group = grp;
        trainable = train;
        v = MatrixXd::Zero(rows, cols);
        g = MatrixXd::Zero(rows, cols);
    }
};

struct ModelParams {
    // review encoders (shared hidden layer, two heads each)
    Tensor enc_a_w1, enc_a_b1, enc_a_wmu, enc_a_bmu, enc_a_wsig, enc_a_bsig;
    Tensor enc_s_w1, enc_s_b1, enc_s_wmu, enc_s_bmu, enc_s_wsig, enc_s_bsig;
    // mixing layers
    Tensor mix_a_w, mix_a_b, mix_s_w, mix_s_b;
    // shared decoder over concatenated latents
    Tensor dec_w;  // V x (K+S)
    // sentiment classifier head
    Tensor clf_w1, clf_b1, clf_w2, clf_b2;
    // plot network
    Tensor plot_enc_w1, plot_enc_b1, plot_enc_wmu, plot_enc_bmu, plot_enc_wsig, plot_enc_bsig;
    Tensor plot_dec_w, plot_dec_b;  // K x V, 1 x V
    Tensor plot_clf_w, plot_clf_b;  // K x P, 1 x P
    // fixed state
    Tensor bg_m;     // 1 x V background log-frequency, never optimized
    Tensor adapter;  // K x S, fixed at initialization, bridges z_a into the classifier
    Tensor bn_mean, bn_var;  // decoder batchnorm running statistics

    std::vector<Tensor*> registry() {
        return {&enc_a_w1,     &enc_a_b1,     &enc_a_wmu,    &enc_a_bmu,     &enc_a_wsig,
                &enc_a_bsig,   &enc_s_w1,     &enc_s_b1,     &enc_s_wmu,     &enc_s_bmu,
                &enc_s_wsig,   &enc_s_bsig,   &mix_a_w,      &mix_a_b,       &mix_s_w,
                &mix_s_b,      &dec_w,        &clf_w1,       &clf_b1,        &clf_w2,
                &clf_b2,       &plot_enc_w1,  &plot_enc_b1,  &plot_enc_wmu,  &plot_enc_bmu,
                &plot_enc_wsig, &plot_enc_bsig, &plot_dec_w,  &plot_dec_b,    &plot_clf_w,
                &plot_clf_b,   &bg_m,         &adapter,      &bn_mean,       &bn_var};
    }

    std::vector<const Tensor*> registry() const {
        auto* self = const_cast<ModelParams*>(this);
        std::vector<const Tensor*> out;
        for (Tensor* t : self->registry()) out.push_back(t);
        return out;
    }

    void zero_grads() {
        for (Tensor* t : registry()) t->g.setZero();
    }
};

// ---------------------------------------------------------------------------
// Losses and latents
// ---------------------------------------------------------------------------

struct LatentPair {
    VectorXd z_a;  // K-simplex
    VectorXd z_s;  // S-simplex
    std::uint64_t noise_seed = 0;
};

struct LossBreakdown {
    double L_x = 0.0;        // reconstruction NLL
    double KL_a = 0.0;
    double KL_s = 0.0;
    double L_adv = 0.0;      // KL(U || p(y|z_a))
    double L_sent = 0.0;     // cross-entropy on z_s
    double L_orth = 0.0;
    double L_d = 0.0;        // plot VAE (reconstruction + KL)
    double L_plot_za = 0.0;
    double L_plot_zd = 0.0;
    double total = 0.0;
};

// Stage gating; config enable flags apply on top of this.
struct ActiveTerms {
    bool sentiment = true;
    bool adversarial = true;
};

// The minimized objective. Every term enters with a positive sign and a
// non-negative value, so smaller is better throughout.
inline double total_loss(const LossBreakdown& b, const ModelConfig& cfg,
                         const ActiveTerms& active = {}) {
    auto check = [](double v, const char* name) {
        if (!std::isfinite(v)) throw NumericalError(std::string("non-finite loss term: ") + name);
        return v;
    };
    double total = cfg.alpha * (check(b.L_x, "L_x") + check(b.KL_a, "KL_a") +
                                check(b.KL_s, "KL_s"));
    if (cfg.enable_adversarial && active.adversarial) total += cfg.beta * check(b.L_adv, "L_adv");
    if (cfg.enable_sentiment && active.sentiment) total += cfg.gamma * check(b.L_sent, "L_sent");
    if (cfg.enable_orth) total += cfg.eta * check(b.L_orth, "L_orth");
    if (cfg.enable_plot_net) {
        total += cfg.weight_plot_vae * check(b.L_d, "L_d");
        total += cfg.weight_plot_za * check(b.L_plot_za, "L_plot_za");
        total += cfg.weight_plot_zd * check(b.L_plot_zd, "L_plot_zd");
    }
    if (!std::isfinite(total)) throw NumericalError("non-finite loss term: total");
    return total;
}

// KL(N(mu, diag(var)) || N(0, I)) = 0.5 sum(mu^2 + var - 1 - log var)
inline double kl_diag_gaussian(const VectorXd& mu, const VectorXd& var) {
    if ((var.array() <= 0.0).any()) throw NumericalError("kl_diag_gaussian: var must be > 0");
    return 0.5 * (mu.array().square() + var.array() - 1.0 - var.array().log()).sum();
}

// Simplex map of a reparameterized Gaussian draw.
inline VectorXd sample_simplex(const VectorXd& mu, const VectorXd& var, const VectorXd& eps) {
    if (mu.size() != var.size() || mu.size() != eps.size())
        throw ConfigError("sample_simplex: dimension mismatch");
    VectorXd pre = mu.array() + var.array().sqrt() * eps.array();
    RowVectorXd row = pre.transpose();
    return nn::softmax_rows(row).transpose();
}

// -sum_v counts_v log p_v with the usual clamp.
inline double reconstruction_nll(const std::map<int, int>& counts, const VectorXd& p) {
    double loss = 0.0;
    for (const auto& [id, c] : counts) {
        loss -= c * std::log(std::max(p(id), nn::kLogClamp));
    }
    return loss;
}

// KL(U(0,M) || p) = sum_c (1/M) log((1/M)/p_c)
inline double kl_uniform_to(const VectorXd& p) {
    const double u = 1.0 / static_cast<double>(p.size());
    double kl = 0.0;
    for (Eigen::Index c = 0; c < p.size(); ++c) {
        kl += u * std::log(u / std::max(p(c), nn::kLogClamp));
    }
    return kl;
}

// Frobenius norm of the Gram matrix deviation over column-normalized W.
inline double orthogonality_loss(const MatrixXd& w) {
    MatrixXd wn = w;
    for (Eigen::Index j = 0; j < wn.cols(); ++j) {
        const double n = std::max(wn.col(j).norm(), 1e-12);
        wn.col(j) /= n;
    }
    MatrixXd gram = wn.transpose() * wn;
    gram.diagonal().array() -= 1.0;
    return gram.norm();
}

// ---------------------------------------------------------------------------
// Batched forward/backward input
// ---------------------------------------------------------------------------

struct Batch {
    MatrixXd X;                    // B x V review counts
    std::vector<int> labels;       // B entries, -1 = unlabeled
    std::vector<int> plot_labels;  // B entries, -1 = no plot
    MatrixXd Xp;                   // Bp x V plot counts, one row per review with a plot
    std::vector<int> xp_doc;       // Bp entries: owning review row

    Eigen::Index size() const { return X.rows(); }
    Eigen::Index plot_rows() const { return Xp.rows(); }
};

struct BatchNoise {
    std::vector<MatrixXd> eps_a;  // L entries of B x K
    std::vector<MatrixXd> eps_s;  // L entries of B x S
    std::vector<MatrixXd> eps_d;  // L entries of Bp x K
    MatrixXd drop_a, drop_s, drop_d;  // inverted-dropout masks; empty = off
};

inline BatchNoise zero_noise(const Batch& batch, const ModelConfig& cfg) {
    BatchNoise n;
    for (int l = 0; l < cfg.L; ++l) {
        n.eps_a.push_back(MatrixXd::Zero(batch.size(), cfg.K));
        n.eps_s.push_back(MatrixXd::Zero(batch.size(), cfg.S));
        n.eps_d.push_back(MatrixXd::Zero(batch.plot_rows(), cfg.K));
    }
    return n;
}

// The adversarial branch always runs through a value snapshot of the
// classifier head: gradients flow to the encoder side only, and a finite
// difference over the live parameters sees exactly what backprop computes.
struct HeadSnapshot {
    MatrixXd w1, b1, w2, b2;
};

struct ForwardOptions {
    bool training = true;         // batch statistics + dropout
    bool update_bn_stats = true;  // off for repeated loss probes
    bool compute_grads = true;
    ActiveTerms active;
    const HeadSnapshot* frozen_head = nullptr;  // defaults to the live head values
};

// ---------------------------------------------------------------------------
// Topic views
// ---------------------------------------------------------------------------

struct TopicInfo {
    int index = 0;
    bool opinion = false;  // first K columns are plot topics, last S opinion topics
    std::vector<std::pair<std::string, double>> top_words;  // token, probability
    std::optional<ProxyLabel> label;
};

struct TopicSet {
    std::vector<TopicInfo> topics;
    int top_n = 10;
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class Model {
public:
    ModelConfig cfg;
    ModelParams params;

    Model(const ModelConfig& config, std::uint64_t seed) : cfg(config) {
        cfg.validate();
        allocate();
        initialize(seed);
    }

    // Construct with existing parameters (checkpoint loading).
    Model(const ModelConfig& config, ModelParams existing)
        : cfg(config), params(std::move(existing)) {
        cfg.validate();
        check_shapes();
    }

    void set_background(const VectorXd& m) {
        if (m.size() != cfg.V) throw ConfigError("set_background: wrong dimension");
        params.bg_m.v = m.transpose();
    }

    // ---- single-document operations -------------------------------------

    VectorXd densify(const std::map<int, int>& counts) const {
        VectorXd x = VectorXd::Zero(cfg.V);
        for (const auto& [id, c] : counts) {
            if (id < 0 || id >= cfg.V) throw ConfigError("word id out of range");
            x(id) = static_cast<double>(c);
        }
        return x;
    }

    // q(phi|x): mean and softplus-positive variance in R^K.
    std::pair<VectorXd, VectorXd> encode_plot(const std::map<int, int>& counts) const {
        return encode_single(counts, params.enc_a_w1, params.enc_a_b1, params.enc_a_wmu,
                             params.enc_a_bmu, params.enc_a_wsig, params.enc_a_bsig);
    }

    // q(psi|x): mean and variance in R^S.
    std::pair<VectorXd, VectorXd> encode_sentiment(const std::map<int, int>& counts) const {
        return encode_single(counts, params.enc_s_w1, params.enc_s_b1, params.enc_s_wmu,
                             params.enc_s_bmu, params.enc_s_wsig, params.enc_s_bsig);
    }

    VectorXd mix_plot(const VectorXd& phi) const {
        return mix_single(phi, params.mix_a_w, params.mix_a_b);
    }

    VectorXd mix_sentiment(const VectorXd& psi) const {
        return mix_single(psi, params.mix_s_w, params.mix_s_b);
    }

    // softmax(batchnorm(m + W (z_a || z_s))); frozen statistics here.
    VectorXd decode(const VectorXd& z_a, const VectorXd& z_s) const {
        if (z_a.size() != cfg.K || z_s.size() != cfg.S) throw ConfigError("decode: bad latents");
        RowVectorXd zcat(cfg.K + cfg.S);
        zcat << z_a.transpose(), z_s.transpose();
        RowVectorXd logits = zcat * params.dec_w.v.transpose() + params.bg_m.v;
        if (cfg.enable_batchnorm) {
            logits = nn::batchnorm_eval(logits, params.bn_mean.v, params.bn_var.v);
        }
        return nn::softmax_rows(logits).transpose();
    }

    double reconstruction_loss(const std::map<int, int>& counts,
                               const std::vector<LatentPair>& samples) const {
        if (samples.empty()) throw ConfigError("reconstruction_loss: no samples");
        double loss = 0.0;
        for (const auto& s : samples) loss += reconstruction_nll(counts, decode(s.z_a, s.z_s));
        return loss / static_cast<double>(samples.size());
    }

    VectorXd classify_sentiment(const VectorXd& z_s) const {
        return head_forward(z_s, params.clf_w1.v, params.clf_b1.v, params.clf_w2.v,
                            params.clf_b2.v);
    }

    // Classifier prediction as seen from z_a, through the fixed adapter.
    VectorXd classify_from_plot_latent(const VectorXd& z_a) const {
        VectorXd bridged = params.adapter.v.transpose() * z_a;
        return classify_sentiment(bridged);
    }

    double adversarial_loss(const VectorXd& z_a) const {
        return kl_uniform_to(classify_from_plot_latent(z_a));
    }

    double sentiment_loss(const VectorXd& z_s, int label) const {
        if (label < 0 || label >= cfg.M) throw ConfigError("sentiment_loss: bad label");
        VectorXd p = classify_sentiment(z_s);
        return -std::log(std::max(p(label), nn::kLogClamp));
    }

    // Plot VAE on a single plot document; returns (L_d, sampled z_d).
    std::pair<double, VectorXd> plot_vae_loss(const std::map<int, int>& counts,
                                              const VectorXd& eps) const {
        if (counts.empty()) throw ConfigError("plot_vae_loss: empty plot document");
        auto [mu, var] = encode_single(counts, params.plot_enc_w1, params.plot_enc_b1,
                                       params.plot_enc_wmu, params.plot_enc_bmu,
                                       params.plot_enc_wsig, params.plot_enc_bsig);
        VectorXd z_d = sample_simplex(mu, var, eps);
        RowVectorXd logits = z_d.transpose() * params.plot_dec_w.v + params.plot_dec_b.v;
        VectorXd p = nn::softmax_rows(logits).transpose();
        const double loss = reconstruction_nll(counts, p) + kl_diag_gaussian(mu, var);
        return {loss, z_d};
    }

    // Cross-entropies of the shared plot head on both latents.
    std::pair<double, double> plot_classification_losses(const VectorXd& z_a,
                                                         const VectorXd& z_d,
                                                         int plot_label) const {
        if (plot_label < 0) return {0.0, 0.0};
        if (cfg.P < 1) throw ConfigError("plot_classification_losses: P not configured");
        if (plot_label >= cfg.P) throw ConfigError("plot_classification_losses: bad label");
        auto ce = [&](const VectorXd& z) {
            RowVectorXd logits = z.transpose() * params.plot_clf_w.v + params.plot_clf_b.v;
            VectorXd p = nn::softmax_rows(logits).transpose();
            return -std::log(std::max(p(plot_label), nn::kLogClamp));
        };
        return {ce(z_a), ce(z_d)};
    }

    TopicSet topic_word_matrix(const Vocabulary& vocab, int top_n = 10) const {
        if (vocab.size() != cfg.V) throw ConfigError("topic_word_matrix: vocabulary mismatch");
        const int n = std::min(top_n, cfg.V);
        TopicSet set;
        set.top_n = n;
        for (int j = 0; j < cfg.K + cfg.S; ++j) {
            RowVectorXd col = params.dec_w.v.col(j).transpose();
            VectorXd probs = nn::softmax_rows(col).transpose();
            std::vector<int> order(cfg.V);
            for (int v = 0; v < cfg.V; ++v) order[v] = v;
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (probs(a) != probs(b)) return probs(a) > probs(b);
                return vocab.tokens[a] < vocab.tokens[b];
            });
            TopicInfo info;
            info.index = j;
            info.opinion = j >= cfg.K;
            for (int r = 0; r < n; ++r)
                info.top_words.emplace_back(vocab.tokens[order[r]], probs(order[r]));
            set.topics.push_back(std::move(info));
        }
        return set;
    }

    HeadSnapshot snapshot_head() const {
        return {params.clf_w1.v, params.clf_b1.v, params.clf_w2.v, params.clf_b2.v};
    }

    // ---- batched objective ----------------------------------------------

    LossBreakdown forward_backward(const Batch& batch, const BatchNoise& noise,
                                   const ForwardOptions& opts);

private:
    struct EncoderTensors {
        Tensor *w1, *b1, *wmu, *bmu, *wsig, *bsig;
    };

    struct EncoderCache {
        MatrixXd h_pre, h;     // B x hidden (h already has dropout applied)
        MatrixXd mu, u, var, sd;
        const MatrixXd* mask = nullptr;
    };

    EncoderTensors enc_a() { return {&params.enc_a_w1, &params.enc_a_b1, &params.enc_a_wmu,
                                     &params.enc_a_bmu, &params.enc_a_wsig, &params.enc_a_bsig}; }
    EncoderTensors enc_s() { return {&params.enc_s_w1, &params.enc_s_b1, &params.enc_s_wmu,
                                     &params.enc_s_bmu, &params.enc_s_wsig, &params.enc_s_bsig}; }
    EncoderTensors enc_d() { return {&params.plot_enc_w1, &params.plot_enc_b1,
                                     &params.plot_enc_wmu, &params.plot_enc_bmu,
                                     &params.plot_enc_wsig, &params.plot_enc_bsig}; }

    void encoder_forward(const MatrixXd& x, EncoderTensors t, const MatrixXd* mask,
                         EncoderCache& c) const {
        c.h_pre = (x * t.w1->v).rowwise() + RowVectorXd(t.b1->v);
        c.h = nn::softplus(c.h_pre);
        if (mask && mask->size() > 0) c.h = c.h.cwiseProduct(*mask);
        c.mask = mask;
        c.mu = (c.h * t.wmu->v).rowwise() + RowVectorXd(t.bmu->v);
        c.u = (c.h * t.wsig->v).rowwise() + RowVectorXd(t.bsig->v);
        c.var = nn::softplus(c.u);
        c.sd = c.var.array().sqrt();
    }

    void encoder_backward(const MatrixXd& x, EncoderTensors t, const EncoderCache& c,
                          const MatrixXd& d_mu, const MatrixXd& d_u) {
        t.wmu->g += c.h.transpose() * d_mu;
        t.bmu->g += d_mu.colwise().sum();
        t.wsig->g += c.h.transpose() * d_u;
        t.bsig->g += d_u.colwise().sum();
        MatrixXd dh = d_mu * t.wmu->v.transpose() + d_u * t.wsig->v.transpose();
        if (c.mask && c.mask->size() > 0) dh = dh.cwiseProduct(*c.mask);
        MatrixXd dh_pre = dh.cwiseProduct(nn::sigmoid(c.h_pre));
        t.w1->g += x.transpose() * dh_pre;
        t.b1->g += dh_pre.colwise().sum();
    }

    std::pair<VectorXd, VectorXd> encode_single(const std::map<int, int>& counts,
                                                const Tensor& w1, const Tensor& b1,
                                                const Tensor& wmu, const Tensor& bmu,
                                                const Tensor& wsig, const Tensor& bsig) const {
        if (counts.empty()) throw ConfigError("encode: empty document");
        VectorXd x = densify(counts);
        RowVectorXd h = nn::softplus((x.transpose() * w1.v + RowVectorXd(b1.v)).eval());
        VectorXd mu = (h * wmu.v + RowVectorXd(bmu.v)).transpose();
        VectorXd var = nn::softplus((h * wsig.v + RowVectorXd(bsig.v)).eval()).transpose();
        return {mu, var};
    }

    VectorXd mix_single(const VectorXd& p, const Tensor& w, const Tensor& b) const {
        if (cfg.identity_mix) return p;
        RowVectorXd pre = p.transpose() * w.v + RowVectorXd(b.v);
        return nn::softmax_rows(pre).transpose();
    }

    VectorXd head_forward(const VectorXd& z, const MatrixXd& w1, const MatrixXd& b1,
                          const MatrixXd& w2, const MatrixXd& b2) const {
        RowVectorXd h = nn::softplus((z.transpose() * w1 + RowVectorXd(b1)).eval());
        RowVectorXd logits = h * w2 + RowVectorXd(b2);
        return nn::softmax_rows(logits).transpose();
    }

    void allocate() {
        const int V = cfg.V, K = cfg.K, S = cfg.S, M = cfg.M, h = cfg.hidden_doc,
                  hc = cfg.hidden_clf;
        const int P = std::max(cfg.P, 1);  // keep shapes valid when unused
        auto G = ParamGroup::Autoencoder;
        params.enc_a_w1.init("enc_a_w1", V, h, G);
        params.enc_a_b1.init("enc_a_b1", 1, h, G);
        params.enc_a_wmu.init("enc_a_wmu", h, K, G);
        params.enc_a_bmu.init("enc_a_bmu", 1, K, G);
        params.enc_a_wsig.init("enc_a_wsig", h, K, G);
        params.enc_a_bsig.init("enc_a_bsig", 1, K, G);
        params.enc_s_w1.init("enc_s_w1", V, h, G);
        params.enc_s_b1.init("enc_s_b1", 1, h, G);
        params.enc_s_wmu.init("enc_s_wmu", h, S, G);
        params.enc_s_bmu.init("enc_s_bmu", 1, S, G);
        params.enc_s_wsig.init("enc_s_wsig", h, S, G);
        params.enc_s_bsig.init("enc_s_bsig", 1, S, G);
        params.mix_a_w.init("mix_a_w", K, K, G);
        params.mix_a_b.init("mix_a_b", 1, K, G);
        params.mix_s_w.init("mix_s_w", S, S, G);
        params.mix_s_b.init("mix_s_b", 1, S, G);
        params.dec_w.init("dec_w", V, K + S, G);
        params.clf_w1.init("clf_w1", S, hc, ParamGroup::SentimentHead);
        params.clf_b1.init("clf_b1", 1, hc, ParamGroup::SentimentHead);
        params.clf_w2.init("clf_w2", hc, M, ParamGroup::SentimentHead);
        params.clf_b2.init("clf_b2", 1, M, ParamGroup::SentimentHead);
        params.plot_enc_w1.init("plot_enc_w1", V, h, G);
        params.plot_enc_b1.init("plot_enc_b1", 1, h, G);
        params.plot_enc_wmu.init("plot_enc_wmu", h, K, G);
        params.plot_enc_bmu.init("plot_enc_bmu", 1, K, G);
        params.plot_enc_wsig.init("plot_enc_wsig", h, K, G);
        params.plot_enc_bsig.init("plot_enc_bsig", 1, K, G);
        params.plot_dec_w.init("plot_dec_w", K, V, G);
        params.plot_dec_b.init("plot_dec_b", 1, V, G);
        params.plot_clf_w.init("plot_clf_w", K, P, ParamGroup::PlotHead);
        params.plot_clf_b.init("plot_clf_b", 1, P, ParamGroup::PlotHead);
        params.bg_m.init("bg_m", 1, V, ParamGroup::Fixed, false);
        params.adapter.init("adapter", K, S, ParamGroup::Fixed, false);
        params.bn_mean.init("bn_mean", 1, V, ParamGroup::Fixed, false);
        params.bn_var.init("bn_var", 1, V, ParamGroup::Fixed, false);
        params.bn_var.v.setOnes();
    }

    void initialize(std::uint64_t seed) {
        Rng rng(seed);
        for (Tensor* t : params.registry()) {
            if (!t->trainable) continue;
            if (t->v.rows() == 1) continue;  // biases start at zero
            if (t == &params.dec_w && cfg.decoder_init == "sparse") {
                nn::sparse_init(t->v, rng, std::min<int>(20, cfg.V), 1.0);
            } else {
                nn::xavier_init(t->v, rng);
            }
        }
        nn::xavier_init(params.adapter.v, rng);  // fixed after this
    }

    void check_shapes() const {
        auto expect = [](const Tensor& t, Eigen::Index r, Eigen::Index c) {
            if (t.v.rows() != r || t.v.cols() != c)
                throw ConfigError("checkpoint shape mismatch for tensor '" + t.name + "'");
        };
        const int V = cfg.V, K = cfg.K, S = cfg.S, h = cfg.hidden_doc;
        expect(params.enc_a_w1, V, h);
        expect(params.enc_s_w1, V, h);
        expect(params.enc_a_wmu, h, K);
        expect(params.enc_s_wmu, h, S);
        expect(params.dec_w, V, K + S);
        expect(params.clf_w1, S, cfg.hidden_clf);
        expect(params.clf_w2, cfg.hidden_clf, cfg.M);
        expect(params.plot_enc_w1, V, h);
        expect(params.plot_dec_w, K, V);
        expect(params.plot_clf_w, K, std::max(cfg.P, 1));
        expect(params.bg_m, 1, V);
        expect(params.adapter, K, S);
        expect(params.bn_mean, 1, V);
        expect(params.bn_var, 1, V);
    }
};

// ---------------------------------------------------------------------------
// forward_backward: the composite objective and its exact gradient
// ---------------------------------------------------------------------------

inline LossBreakdown Model::forward_backward(const Batch& batch, const BatchNoise& noise,
                                             const ForwardOptions& opts) {
    const Eigen::Index B = batch.size();
    const Eigen::Index Bp = cfg.enable_plot_net ? batch.plot_rows() : 0;
    if (B == 0) throw ConfigError("forward_backward: empty batch");
    if (static_cast<Eigen::Index>(batch.labels.size()) != B ||
        static_cast<Eigen::Index>(batch.plot_labels.size()) != B)
        throw ConfigError("forward_backward: label arrays do not match batch");
    if (static_cast<int>(noise.eps_a.size()) < cfg.L)
        throw ConfigError("forward_backward: noise draws do not cover L samples");

    const bool grads = opts.compute_grads;
    if (grads) params.zero_grads();

    const bool sent_on = cfg.enable_sentiment && opts.active.sentiment;
    const bool adv_on = cfg.enable_adversarial && opts.active.adversarial;
    const bool plot_on = cfg.enable_plot_net && Bp > 0;
    const bool plot_clf_on = cfg.enable_plot_net && cfg.P > 0;

    HeadSnapshot live_snapshot;
    const HeadSnapshot* head = opts.frozen_head;
    if (head == nullptr) {
        live_snapshot = snapshot_head();
        head = &live_snapshot;
    }

    LossBreakdown out;

    // ---- encoders (once per batch) ----
    EncoderCache ca, cs, cd;
    encoder_forward(batch.X, enc_a(), opts.training ? &noise.drop_a : nullptr, ca);
    encoder_forward(batch.X, enc_s(), opts.training ? &noise.drop_s : nullptr, cs);
    if (plot_on)
        encoder_forward(batch.Xp, enc_d(), opts.training ? &noise.drop_d : nullptr, cd);

    // ---- closed-form KL terms ----
    auto kl_batch = [](const EncoderCache& c) {
        return 0.5 *
               (c.mu.array().square() + c.var.array() - 1.0 - c.var.array().log()).sum();
    };
    out.KL_a = kl_batch(ca) / static_cast<double>(B);
    out.KL_s = kl_batch(cs) / static_cast<double>(B);
    double kl_d = plot_on ? kl_batch(cd) / static_cast<double>(Bp) : 0.0;

    // gradient accumulators for the encoder heads
    MatrixXd d_mu_a = MatrixXd::Zero(B, cfg.K), d_u_a = MatrixXd::Zero(B, cfg.K);
    MatrixXd d_mu_s = MatrixXd::Zero(B, cfg.S), d_u_s = MatrixXd::Zero(B, cfg.S);
    MatrixXd d_mu_d, d_u_d;
    if (plot_on) {
        d_mu_d = MatrixXd::Zero(Bp, cfg.K);
        d_u_d = MatrixXd::Zero(Bp, cfg.K);
    }

    if (grads) {
        const double ka = cfg.alpha / static_cast<double>(B);
        d_mu_a += ka * ca.mu;
        d_u_a += (ka * 0.5 * (1.0 - ca.var.array().inverse())).matrix()
                     .cwiseProduct(nn::sigmoid(ca.u));
        d_mu_s += ka * cs.mu;
        d_u_s += (ka * 0.5 * (1.0 - cs.var.array().inverse())).matrix()
                     .cwiseProduct(nn::sigmoid(cs.u));
        if (plot_on) {
            const double kd = cfg.weight_plot_vae / static_cast<double>(Bp);
            d_mu_d += kd * cd.mu;
            d_u_d += (kd * 0.5 * (1.0 - cd.var.array().inverse())).matrix()
                         .cwiseProduct(nn::sigmoid(cd.u));
        }
    }

    // labeled / plot-labeled row bookkeeping
    Eigen::Index n_labeled = 0, n_plot_labeled = 0;
    for (Eigen::Index b = 0; b < B; ++b) {
        if (batch.labels[b] >= 0) ++n_labeled;
        if (batch.plot_labels[b] >= 0) ++n_plot_labeled;
    }

    const double Ld = static_cast<double>(cfg.L);

    // ---- Monte Carlo samples ----
    for (int l = 0; l < cfg.L; ++l) {
        // sample + mix, review side
        MatrixXd phi_a = nn::softmax_rows(ca.mu + ca.sd.cwiseProduct(noise.eps_a[l]));
        MatrixXd phi_s = nn::softmax_rows(cs.mu + cs.sd.cwiseProduct(noise.eps_s[l]));
        MatrixXd za, zs;
        if (cfg.identity_mix) {
            za = phi_a;
            zs = phi_s;
        } else {
            za = nn::softmax_rows((phi_a * params.mix_a_w.v).rowwise() +
                                  RowVectorXd(params.mix_a_b.v));
            zs = nn::softmax_rows((phi_s * params.mix_s_w.v).rowwise() +
                                  RowVectorXd(params.mix_s_b.v));
        }

        MatrixXd zcat(B, cfg.K + cfg.S);
        zcat << za, zs;

        // decoder
        MatrixXd logits = (zcat * params.dec_w.v.transpose()).rowwise() +
                          RowVectorXd(params.bg_m.v);
        nn::BatchNormCache bn_cache;
        MatrixXd y;
        if (cfg.enable_batchnorm) {
            if (opts.training) {
                RowVectorXd rm = params.bn_mean.v, rv = params.bn_var.v;
                y = nn::batchnorm_train(logits, rm, rv, opts.update_bn_stats, bn_cache);
                if (opts.update_bn_stats) {
                    params.bn_mean.v = rm;
                    params.bn_var.v = rv;
                }
            } else {
                y = nn::batchnorm_eval(logits, params.bn_mean.v, params.bn_var.v);
            }
        } else {
            y = logits;
        }
        MatrixXd pw = nn::softmax_rows(y);

        for (Eigen::Index b = 0; b < B; ++b)
            out.L_x += nn::clamped_nll(batch.X.row(b), pw.row(b)) / (Ld * B);

        MatrixXd d_za = MatrixXd::Zero(B, cfg.K);
        MatrixXd d_zs = MatrixXd::Zero(B, cfg.S);

        if (grads) {
            // reconstruction backward
            MatrixXd dpw(B, cfg.V);
            const double scale = cfg.alpha / (Ld * static_cast<double>(B));
            for (Eigen::Index b = 0; b < B; ++b)
                dpw.row(b) = scale * nn::clamped_nll_grad(batch.X.row(b), pw.row(b));
            MatrixXd dy = nn::softmax_backward(pw, dpw);
            MatrixXd dlogits;
            if (cfg.enable_batchnorm) {
                dlogits = opts.training ? nn::batchnorm_backward(bn_cache, dy)
                                        : nn::batchnorm_eval_backward(dy, params.bn_var.v);
            } else {
                dlogits = dy;
            }
            params.dec_w.g += dlogits.transpose() * zcat;
            MatrixXd dzcat = dlogits * params.dec_w.v;
            d_za += dzcat.leftCols(cfg.K);
            d_zs += dzcat.rightCols(cfg.S);
        }

        // sentiment head on z_s
        if (n_labeled > 0) {
            MatrixXd hc_pre = (zs * params.clf_w1.v).rowwise() + RowVectorXd(params.clf_b1.v);
            MatrixXd hc = nn::softplus(hc_pre);
            MatrixXd py = nn::softmax_rows((hc * params.clf_w2.v).rowwise() +
                                           RowVectorXd(params.clf_b2.v));
            for (Eigen::Index b = 0; b < B; ++b) {
                if (batch.labels[b] < 0) continue;
                out.L_sent +=
                    -std::log(std::max(py(b, batch.labels[b]), nn::kLogClamp)) /
                    (Ld * static_cast<double>(n_labeled));
            }
            if (grads && sent_on) {
                const double scale = cfg.gamma / (Ld * static_cast<double>(n_labeled));
                MatrixXd dpy = MatrixXd::Zero(B, cfg.M);
                for (Eigen::Index b = 0; b < B; ++b) {
                    const int yb = batch.labels[b];
                    if (yb < 0) continue;
                    if (py(b, yb) > nn::kLogClamp) dpy(b, yb) = -scale / py(b, yb);
                }
                MatrixXd dlog = nn::softmax_backward(py, dpy);
                params.clf_w2.g += hc.transpose() * dlog;
                params.clf_b2.g += dlog.colwise().sum();
                MatrixXd dhc = (dlog * params.clf_w2.v.transpose())
                                   .cwiseProduct(nn::sigmoid(hc_pre));
                params.clf_w1.g += zs.transpose() * dhc;
                params.clf_b1.g += dhc.colwise().sum();
                d_zs += dhc * params.clf_w1.v.transpose();
            }
        }

        // adversarial branch: frozen head, encoder-side gradient only
        {
            MatrixXd bridged = za * params.adapter.v;  // B x S
            MatrixXd h2_pre = (bridged * head->w1).rowwise() + RowVectorXd(head->b1);
            MatrixXd h2 = nn::softplus(h2_pre);
            MatrixXd padv =
                nn::softmax_rows((h2 * head->w2).rowwise() + RowVectorXd(head->b2));
            const double u = 1.0 / static_cast<double>(cfg.M);
            for (Eigen::Index b = 0; b < B; ++b) {
                double kl = 0.0;
                for (int c = 0; c < cfg.M; ++c)
                    kl += u * std::log(u / std::max(padv(b, c), nn::kLogClamp));
                out.L_adv += kl / (Ld * static_cast<double>(B));
            }
            if (grads && adv_on) {
                const double scale = cfg.beta / (Ld * static_cast<double>(B));
                MatrixXd dpadv = MatrixXd::Zero(B, cfg.M);
                for (Eigen::Index b = 0; b < B; ++b)
                    for (int c = 0; c < cfg.M; ++c)
                        if (padv(b, c) > nn::kLogClamp)
                            dpadv(b, c) = -scale * u / padv(b, c);
                MatrixXd dlog = nn::softmax_backward(padv, dpadv);
                MatrixXd dh2 = (dlog * head->w2.transpose()).cwiseProduct(nn::sigmoid(h2_pre));
                MatrixXd dbridged = dh2 * head->w1.transpose();
                d_za += dbridged * params.adapter.v.transpose();
            }
        }

        // plot classifier on z_a
        if (plot_clf_on && n_plot_labeled > 0) {
            MatrixXd ppa = nn::softmax_rows((za * params.plot_clf_w.v).rowwise() +
                                            RowVectorXd(params.plot_clf_b.v));
            for (Eigen::Index b = 0; b < B; ++b) {
                const int pb = batch.plot_labels[b];
                if (pb < 0) continue;
                out.L_plot_za += -std::log(std::max(ppa(b, pb), nn::kLogClamp)) /
                                 (Ld * static_cast<double>(n_plot_labeled));
            }
            if (grads) {
                const double scale =
                    cfg.weight_plot_za / (Ld * static_cast<double>(n_plot_labeled));
                MatrixXd dppa = MatrixXd::Zero(B, cfg.P);
                for (Eigen::Index b = 0; b < B; ++b) {
                    const int pb = batch.plot_labels[b];
                    if (pb < 0) continue;
                    if (ppa(b, pb) > nn::kLogClamp) dppa(b, pb) = -scale / ppa(b, pb);
                }
                MatrixXd dlog = nn::softmax_backward(ppa, dppa);
                params.plot_clf_w.g += za.transpose() * dlog;
                params.plot_clf_b.g += dlog.colwise().sum();
                d_za += dlog * params.plot_clf_w.v.transpose();
            }
        }

        // plot VAE sample path + plot classifier on z_d
        MatrixXd d_zd;
        if (plot_on) {
            MatrixXd phi_d = nn::softmax_rows(cd.mu + cd.sd.cwiseProduct(noise.eps_d[l]));
            MatrixXd logits_d =
                (phi_d * params.plot_dec_w.v).rowwise() + RowVectorXd(params.plot_dec_b.v);
            MatrixXd pd = nn::softmax_rows(logits_d);
            for (Eigen::Index r = 0; r < Bp; ++r)
                out.L_d += nn::clamped_nll(batch.Xp.row(r), pd.row(r)) /
                           (Ld * static_cast<double>(Bp));

            d_zd = MatrixXd::Zero(Bp, cfg.K);
            if (grads) {
                MatrixXd dpd(Bp, cfg.V);
                const double scale = cfg.weight_plot_vae / (Ld * static_cast<double>(Bp));
                for (Eigen::Index r = 0; r < Bp; ++r)
                    dpd.row(r) = scale * nn::clamped_nll_grad(batch.Xp.row(r), pd.row(r));
                MatrixXd dlog = nn::softmax_backward(pd, dpd);
                params.plot_dec_w.g += phi_d.transpose() * dlog;
                params.plot_dec_b.g += dlog.colwise().sum();
                d_zd += dlog * params.plot_dec_w.v.transpose();
            }

            if (plot_clf_on) {
                MatrixXd ppd = nn::softmax_rows((phi_d * params.plot_clf_w.v).rowwise() +
                                                RowVectorXd(params.plot_clf_b.v));
                for (Eigen::Index r = 0; r < Bp; ++r) {
                    const int pb = batch.plot_labels[batch.xp_doc[r]];
                    if (pb < 0) continue;
                    out.L_plot_zd += -std::log(std::max(ppd(r, pb), nn::kLogClamp)) /
                                     (Ld * static_cast<double>(Bp));
                }
                if (grads) {
                    const double scale =
                        cfg.weight_plot_zd / (Ld * static_cast<double>(Bp));
                    MatrixXd dppd = MatrixXd::Zero(Bp, cfg.P);
                    for (Eigen::Index r = 0; r < Bp; ++r) {
                        const int pb = batch.plot_labels[batch.xp_doc[r]];
                        if (pb < 0) continue;
                        if (ppd(r, pb) > nn::kLogClamp) dppd(r, pb) = -scale / ppd(r, pb);
                    }
                    MatrixXd dlog = nn::softmax_backward(ppd, dppd);
                    params.plot_clf_w.g += phi_d.transpose() * dlog;
                    params.plot_clf_b.g += dlog.colwise().sum();
                    d_zd += dlog * params.plot_clf_w.v.transpose();
                }
            }

            if (grads) {
                MatrixXd dphi_pre = nn::softmax_backward(phi_d, d_zd);
                d_mu_d += dphi_pre;
                d_u_d += dphi_pre.cwiseProduct(noise.eps_d[l])
                             .cwiseProduct(nn::sigmoid(cd.u))
                             .cwiseQuotient(2.0 * cd.sd.cwiseMax(1e-300));
            }
        }

        // backprop through mix + simplex sampling, review side
        if (grads) {
            MatrixXd dphi_a, dphi_s;
            if (cfg.identity_mix) {
                dphi_a = d_za;
                dphi_s = d_zs;
            } else {
                MatrixXd dpre_a = nn::softmax_backward(za, d_za);
                params.mix_a_w.g += phi_a.transpose() * dpre_a;
                params.mix_a_b.g += dpre_a.colwise().sum();
                dphi_a = dpre_a * params.mix_a_w.v.transpose();
                MatrixXd dpre_s = nn::softmax_backward(zs, d_zs);
                params.mix_s_w.g += phi_s.transpose() * dpre_s;
                params.mix_s_b.g += dpre_s.colwise().sum();
                dphi_s = dpre_s * params.mix_s_w.v.transpose();
            }
            MatrixXd dpre_phi_a = nn::softmax_backward(phi_a, dphi_a);
            d_mu_a += dpre_phi_a;
            d_u_a += dpre_phi_a.cwiseProduct(noise.eps_a[l])
                         .cwiseProduct(nn::sigmoid(ca.u))
                         .cwiseQuotient(2.0 * ca.sd.cwiseMax(1e-300));
            MatrixXd dpre_phi_s = nn::softmax_backward(phi_s, dphi_s);
            d_mu_s += dpre_phi_s;
            d_u_s += dpre_phi_s.cwiseProduct(noise.eps_s[l])
                         .cwiseProduct(nn::sigmoid(cs.u))
                         .cwiseQuotient(2.0 * cs.sd.cwiseMax(1e-300));
        }
    }

    // ---- plot VAE closed-form KL ----
    out.L_d += kl_d;

    // ---- orthogonality on the decoder columns ----
    {
        out.L_orth = orthogonality_loss(params.dec_w.v);
        if (grads && cfg.enable_orth && out.L_orth > 1e-12) {
            const Eigen::Index T = params.dec_w.v.cols();
            MatrixXd wn = params.dec_w.v;
            VectorXd norms(T);
            for (Eigen::Index j = 0; j < T; ++j) {
                norms(j) = std::max(wn.col(j).norm(), 1e-12);
                wn.col(j) /= norms(j);
            }
            MatrixXd gram = wn.transpose() * wn;
            gram.diagonal().array() -= 1.0;
            // d||G||_F/dWn = 2 Wn G / ||G||_F; then through column normalization
            MatrixXd dwn = (2.0 * cfg.eta / out.L_orth) * (wn * gram);
            for (Eigen::Index j = 0; j < T; ++j) {
                const VectorXd wj = wn.col(j);
                params.dec_w.g.col(j) +=
                    (dwn.col(j) - wj * wj.dot(dwn.col(j))) / norms(j);
            }
        }
    }

    // ---- encoder backward passes ----
    if (grads) {
        encoder_backward(batch.X, enc_a(), ca, d_mu_a, d_u_a);
        encoder_backward(batch.X, enc_s(), cs, d_mu_s, d_u_s);
        if (plot_on) encoder_backward(batch.Xp, enc_d(), cd, d_mu_d, d_u_d);
    }

    out.total = total_loss(out, cfg, opts.active);
    return out;
}

}  // namespace diatom
