#include <catch2/catch_amalgamated.hpp>

#include "diatom/model.hpp"
#include "diatom/rng.hpp"

using namespace diatom;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.V = 6;
    cfg.K = 3;
    cfg.S = 2;
    cfg.M = 2;
    cfg.P = 2;
    cfg.hidden_doc = 8;
    cfg.hidden_clf = 4;
    return cfg;
}

void zero_tensor(Tensor& t) { t.v.setZero(); }

std::map<int, int> doc_counts(std::initializer_list<std::pair<int, int>> items) {
    std::map<int, int> m;
    for (auto [k, v] : items) m.emplace(k, v);
    return m;
}

}  // namespace

TEST_CASE("encode heads: zero weights give zero mean and softplus(0) variance") {
    Model model(tiny_config(), 1);
    zero_tensor(model.params.enc_a_wmu);
    zero_tensor(model.params.enc_a_bmu);
    zero_tensor(model.params.enc_a_wsig);
    zero_tensor(model.params.enc_a_bsig);
    auto [mu, var] = model.encode_plot(doc_counts({{0, 2}, {3, 1}}));
    REQUIRE(mu.size() == 3);  // vectors in R^K
    REQUIRE(var.size() == 3);
    const double sp0 = std::log(2.0);  // softplus(0)
    for (int i = 0; i < 3; ++i) {
        CHECK(mu(i) == 0.0);
        CHECK(var(i) == Catch::Approx(sp0).epsilon(1e-12));
        CHECK(var(i) == Catch::Approx(0.6931).epsilon(1e-4));
    }
}

TEST_CASE("encoders are deterministic and reject empty documents") {
    Model model(tiny_config(), 2);
    auto a = model.encode_sentiment(doc_counts({{1, 3}}));
    auto b = model.encode_sentiment(doc_counts({{1, 3}}));
    CHECK((a.first - b.first).norm() == 0.0);
    CHECK((a.second - b.second).norm() == 0.0);
    REQUIRE(a.first.size() == 2);  // vectors in R^S
    CHECK_THROWS_AS(model.encode_plot({}), ConfigError);
}

TEST_CASE("sample_simplex maps zero pre-activations to the uniform point") {
    VectorXd mu = VectorXd::Zero(4), var = VectorXd::Ones(4), eps = VectorXd::Zero(4);
    VectorXd p = sample_simplex(mu, var, eps);
    for (int i = 0; i < 4; ++i) CHECK(p(i) == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("sample_simplex outputs sum to one and are reproducible") {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        VectorXd mu(5), var(5), eps(5);
        for (int i = 0; i < 5; ++i) {
            mu(i) = rng.normal();
            var(i) = 0.1 + rng.uniform();
            eps(i) = rng.normal();
        }
        VectorXd p = sample_simplex(mu, var, eps);
        CHECK(p.sum() == Catch::Approx(1.0).epsilon(1e-9));
        CHECK((p.array() >= 0.0).all());
        CHECK((p - sample_simplex(mu, var, eps)).norm() == 0.0);
    }
}

TEST_CASE("mix: identity test mode passes simplex points through") {
    ModelConfig cfg = tiny_config();
    cfg.identity_mix = true;
    Model model(cfg, 3);
    VectorXd p(3);
    p << 0.2, 0.5, 0.3;
    CHECK((model.mix_plot(p) - p).norm() == 0.0);
}

TEST_CASE("mix: zero-weight affine layer gives the uniform point") {
    Model model(tiny_config(), 4);
    zero_tensor(model.params.mix_a_w);
    zero_tensor(model.params.mix_a_b);
    VectorXd p(3);
    p << 0.7, 0.2, 0.1;
    VectorXd z = model.mix_plot(p);
    for (int i = 0; i < 3; ++i) CHECK(z(i) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(model.mix_sentiment(VectorXd::Constant(2, 0.5)).sum() ==
          Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("decode: zero decoder and background give the uniform distribution") {
    ModelConfig cfg = tiny_config();
    cfg.enable_batchnorm = false;
    Model model(cfg, 5);
    zero_tensor(model.params.dec_w);
    zero_tensor(model.params.bg_m);
    VectorXd z_a = VectorXd::Constant(3, 1.0 / 3.0);
    VectorXd z_s = VectorXd::Constant(2, 0.5);
    VectorXd p = model.decode(z_a, z_s);
    for (int v = 0; v < 6; ++v) CHECK(p(v) == Catch::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("decode: zero decoder recovers the smoothed unigram background") {
    ModelConfig cfg = tiny_config();
    cfg.enable_batchnorm = false;
    Model model(cfg, 6);
    zero_tensor(model.params.dec_w);
    VectorXd m(6);
    m << std::log(0.4), std::log(0.2), std::log(0.1), std::log(0.1), std::log(0.1),
        std::log(0.1);
    model.set_background(m);
    VectorXd p = model.decode(VectorXd::Constant(3, 1.0 / 3.0), VectorXd::Constant(2, 0.5));
    CHECK(p(0) == Catch::Approx(0.4).epsilon(1e-9));
    CHECK(p(1) == Catch::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("decode always returns a probability distribution") {
    Model model(tiny_config(), 7);
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        VectorXd za(3), zs(2);
        for (int i = 0; i < 3; ++i) za(i) = rng.uniform();
        for (int i = 0; i < 2; ++i) zs(i) = rng.uniform();
        za /= za.sum();
        zs /= zs.sum();
        VectorXd p = model.decode(za, zs);
        CHECK(p.sum() == Catch::Approx(1.0).epsilon(1e-6));
        CHECK((p.array() >= 0.0).all());
    }
}

TEST_CASE("kl_diag_gaussian closed form") {
    VectorXd mu0 = VectorXd::Zero(2), var1 = VectorXd::Ones(2);
    CHECK(kl_diag_gaussian(mu0, var1) == Catch::Approx(0.0).margin(1e-15));

    VectorXd mu(2);
    mu << 1.0, 0.0;
    CHECK(kl_diag_gaussian(mu, var1) == Catch::Approx(0.5).epsilon(1e-12));

    VectorXd mu1 = VectorXd::Zero(1), vare = VectorXd::Constant(1, std::exp(1.0));
    CHECK(kl_diag_gaussian(mu1, vare) ==
          Catch::Approx((std::exp(1.0) - 2.0) / 2.0).epsilon(1e-12));
    CHECK(kl_diag_gaussian(mu1, vare) == Catch::Approx(0.3591).epsilon(1e-3));
}

TEST_CASE("reconstruction loss oracle values") {
    VectorXd p(2);
    p << 0.5, 0.5;
    auto counts = doc_counts({{0, 1}, {1, 1}});
    CHECK(reconstruction_nll(counts, p) == Catch::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(reconstruction_nll(counts, p) == Catch::Approx(1.3863).epsilon(1e-4));

    VectorXd sure(2);
    sure << 1.0, 0.0;
    CHECK(reconstruction_nll(doc_counts({{0, 3}}), sure) == Catch::Approx(0.0).margin(1e-15));

    auto doubled = doc_counts({{0, 2}, {1, 2}});
    CHECK(reconstruction_nll(doubled, p) ==
          Catch::Approx(2.0 * reconstruction_nll(counts, p)).epsilon(1e-12));
}

TEST_CASE("adversarial KL-to-uniform oracle values") {
    VectorXd uniform = VectorXd::Constant(2, 0.5);
    CHECK(kl_uniform_to(uniform) == Catch::Approx(0.0).margin(1e-12));

    VectorXd skew(2);
    skew << 0.9, 0.1;
    const double expected = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    CHECK(kl_uniform_to(skew) == Catch::Approx(expected).epsilon(1e-12));
    CHECK(kl_uniform_to(skew) == Catch::Approx(0.5108).epsilon(1e-3));

    VectorXd degenerate(2);
    degenerate << 1.0, 0.0;  // clamped, stays finite
    CHECK(std::isfinite(kl_uniform_to(degenerate)));
    CHECK(kl_uniform_to(degenerate) > 5.0);
}

TEST_CASE("model adversarial_loss is zero when the bridged head is uniform") {
    Model model(tiny_config(), 8);
    zero_tensor(model.params.clf_w1);
    zero_tensor(model.params.clf_b1);
    zero_tensor(model.params.clf_w2);
    zero_tensor(model.params.clf_b2);
    VectorXd z_a = VectorXd::Constant(3, 1.0 / 3.0);
    CHECK(model.adversarial_loss(z_a) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("sentiment loss oracle values") {
    Model model(tiny_config(), 9);
    // zero head -> uniform prediction -> cross-entropy ln M
    zero_tensor(model.params.clf_w1);
    zero_tensor(model.params.clf_b1);
    zero_tensor(model.params.clf_w2);
    zero_tensor(model.params.clf_b2);
    VectorXd z_s = VectorXd::Constant(2, 0.5);
    CHECK(model.sentiment_loss(z_s, 0) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(model.sentiment_loss(z_s, 0) == Catch::Approx(0.6931).epsilon(1e-3));

    // exact one-hot prediction -> zero loss
    CHECK(nn::clamped_nll((Eigen::RowVectorXd(2) << 1, 0).finished(),
                          (Eigen::RowVectorXd(2) << 1, 0).finished()) ==
          Catch::Approx(0.0).margin(1e-15));

    // permuting classes together with the target leaves the loss unchanged
    Eigen::RowVectorXd p(3), y(3);
    p << 0.2, 0.5, 0.3;
    y << 0, 1, 0;
    Eigen::RowVectorXd p2(3), y2(3);
    p2 << 0.5, 0.3, 0.2;
    y2 << 1, 0, 0;
    CHECK(nn::clamped_nll(y, p) == Catch::Approx(nn::clamped_nll(y2, p2)).epsilon(1e-12));
}

TEST_CASE("orthogonality loss oracle values") {
    MatrixXd w = MatrixXd::Zero(4, 2);
    w(0, 0) = 1.0;
    w(1, 1) = 1.0;
    CHECK(orthogonality_loss(w) == Catch::Approx(0.0).margin(1e-12));

    MatrixXd w2 = MatrixXd::Zero(4, 2);
    w2(0, 0) = 1.0;
    w2(0, 1) = 1.0;
    CHECK(orthogonality_loss(w2) == Catch::Approx(std::sqrt(2.0)).epsilon(1e-12));

    // column scaling is absorbed by the normalization
    MatrixXd w3 = w2;
    w3.col(1) *= 7.5;
    CHECK(orthogonality_loss(w3) == Catch::Approx(orthogonality_loss(w2)).epsilon(1e-12));
}

TEST_CASE("plot_vae_loss composes reconstruction and KL on the plot input") {
    ModelConfig cfg = tiny_config();
    Model model(cfg, 10);
    auto counts = doc_counts({{0, 2}, {2, 1}});
    VectorXd eps = VectorXd::Zero(cfg.K);

    auto [loss, z_d] = model.plot_vae_loss(counts, eps);
    CHECK(z_d.sum() == Catch::Approx(1.0).epsilon(1e-9));

    // manual composition through the same pieces
    auto [mu, var] = [&] {
        // plot encoder applied by hand
        VectorXd x = model.densify(counts);
        Eigen::RowVectorXd h =
            nn::softplus((x.transpose() * model.params.plot_enc_w1.v +
                          Eigen::RowVectorXd(model.params.plot_enc_b1.v)).eval());
        VectorXd m = (h * model.params.plot_enc_wmu.v +
                      Eigen::RowVectorXd(model.params.plot_enc_bmu.v)).transpose();
        VectorXd v = nn::softplus((h * model.params.plot_enc_wsig.v +
                                   Eigen::RowVectorXd(model.params.plot_enc_bsig.v)).eval())
                         .transpose();
        return std::make_pair(m, v);
    }();
    VectorXd zd = sample_simplex(mu, var, eps);
    Eigen::RowVectorXd logits =
        zd.transpose() * model.params.plot_dec_w.v + Eigen::RowVectorXd(model.params.plot_dec_b.v);
    VectorXd p = nn::softmax_rows(logits).transpose();
    CHECK(loss == Catch::Approx(reconstruction_nll(counts, p) + kl_diag_gaussian(mu, var))
                      .epsilon(1e-12));

    SECTION("empty plot document is an error") {
        CHECK_THROWS_AS(model.plot_vae_loss({}, eps), ConfigError);
    }
}

TEST_CASE("zero-weight plot decoder gives the uniform reconstruction term") {
    ModelConfig cfg = tiny_config();
    Model model(cfg, 11);
    zero_tensor(model.params.plot_dec_w);
    zero_tensor(model.params.plot_dec_b);
    auto counts = doc_counts({{1, 2}, {4, 3}});
    auto [loss, z_d] = model.plot_vae_loss(counts, VectorXd::Zero(cfg.K));
    VectorXd uni = VectorXd::Constant(cfg.V, 1.0 / cfg.V);
    // subtract the KL piece computed from the model's own encoder outputs
    VectorXd x = model.densify(counts);
    Eigen::RowVectorXd h = nn::softplus((x.transpose() * model.params.plot_enc_w1.v +
                                         Eigen::RowVectorXd(model.params.plot_enc_b1.v)).eval());
    VectorXd mu = (h * model.params.plot_enc_wmu.v +
                   Eigen::RowVectorXd(model.params.plot_enc_bmu.v)).transpose();
    VectorXd var = nn::softplus((h * model.params.plot_enc_wsig.v +
                                 Eigen::RowVectorXd(model.params.plot_enc_bsig.v)).eval())
                       .transpose();
    CHECK(loss - kl_diag_gaussian(mu, var) ==
          Catch::Approx(reconstruction_nll(counts, uni)).epsilon(1e-12));
}

TEST_CASE("plot classification losses") {
    ModelConfig cfg = tiny_config();
    cfg.P = 4;
    Model model(cfg, 12);
    VectorXd z_a = VectorXd::Constant(3, 1.0 / 3.0);
    VectorXd z_d = VectorXd::Constant(3, 1.0 / 3.0);

    SECTION("uniform head predicts ln P") {
        zero_tensor(model.params.plot_clf_w);
        zero_tensor(model.params.plot_clf_b);
        auto [za_loss, zd_loss] = model.plot_classification_losses(z_a, z_d, 1);
        CHECK(za_loss == Catch::Approx(std::log(4.0)).epsilon(1e-12));
        CHECK(zd_loss == Catch::Approx(std::log(4.0)).epsilon(1e-12));
        CHECK(za_loss == Catch::Approx(1.3863).epsilon(1e-3));
    }

    SECTION("confident correct head gives near-zero losses") {
        zero_tensor(model.params.plot_clf_w);
        model.params.plot_clf_b.v.setZero();
        model.params.plot_clf_b.v(0, 2) = 50.0;
        auto [za_loss, zd_loss] = model.plot_classification_losses(z_a, z_d, 2);
        CHECK(za_loss < 1e-12);
        CHECK(zd_loss < 1e-12);
    }

    SECTION("missing plot id contributes nothing") {
        auto [za_loss, zd_loss] = model.plot_classification_losses(z_a, z_d, -1);
        CHECK(za_loss == 0.0);
        CHECK(zd_loss == 0.0);
    }
}

TEST_CASE("classify_sentiment is a distribution with default hidden width 50") {
    ModelConfig cfg;
    cfg.V = 10;
    cfg.K = 2;
    cfg.S = 3;
    cfg.P = 1;
    CHECK(cfg.hidden_clf == 50);
    CHECK(cfg.hidden_doc == 100);
    Model model(cfg, 13);
    CHECK(model.params.clf_w1.v.cols() == 50);

    VectorXd z_s = VectorXd::Constant(3, 1.0 / 3.0);
    VectorXd p = model.classify_sentiment(z_s);
    CHECK(p.sum() == Catch::Approx(1.0).epsilon(1e-9));

    zero_tensor(model.params.clf_w1);
    zero_tensor(model.params.clf_b1);
    zero_tensor(model.params.clf_w2);
    zero_tensor(model.params.clf_b2);
    p = model.classify_sentiment(z_s);
    for (int c = 0; c < cfg.M; ++c) CHECK(p(c) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax argmax is invariant under positive rescaling of logits") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::RowVectorXd logits(4);
        for (int i = 0; i < 4; ++i) logits(i) = rng.normal();
        const double c = 0.1 + 10.0 * rng.uniform();
        Eigen::Index i1, i2;
        nn::softmax_rows(logits).row(0).maxCoeff(&i1);
        nn::softmax_rows((c * logits).eval()).row(0).maxCoeff(&i2);
        CHECK(i1 == i2);
    }
}

TEST_CASE("topic_word_matrix tags, sizes and tie-breaking") {
    ModelConfig cfg;
    cfg.V = 6;
    cfg.K = 2;
    cfg.S = 1;
    cfg.P = 1;
    cfg.hidden_doc = 4;
    cfg.hidden_clf = 3;
    Model model(cfg, 14);
    Vocabulary vocab = build_vocabulary({{"ee", "dd", "cc", "bb", "aa", "ff"}}, 6);

    model.params.dec_w.v.setZero();  // fully tied weights
    TopicSet set = model.topic_word_matrix(vocab, 10);
    REQUIRE(set.topics.size() == 3);
    CHECK(!set.topics[0].opinion);
    CHECK(!set.topics[1].opinion);
    CHECK(set.topics[2].opinion);
    CHECK(set.top_n == 6);  // clamped at V
    // ties resolved lexicographically
    CHECK(set.topics[0].top_words[0].first == "aa");
    CHECK(set.topics[0].top_words[5].first == "ff");

    model.params.dec_w.v(3, 0) = 2.0;  // push one word up in topic 0
    set = model.topic_word_matrix(vocab, 3);
    CHECK(set.topics[0].top_words.size() == 3);
    CHECK(set.topics[0].top_words[0].first == vocab.tokens[3]);
}

TEST_CASE("total_loss combines the breakdown with configured weights") {
    ModelConfig cfg = tiny_config();
    LossBreakdown b;
    b.L_x = 1.0;
    b.KL_a = 0.5;
    b.KL_s = 0.25;
    b.L_adv = 2.0;
    b.L_sent = 3.0;
    b.L_orth = 0.1;
    b.L_d = 4.0;
    b.L_plot_za = 0.2;
    b.L_plot_zd = 0.3;

    SECTION("everything off gives zero") {
        ModelConfig off = cfg;
        off.alpha = off.beta = off.gamma = off.eta = 0.0;
        off.enable_plot_net = false;
        CHECK(total_loss(b, off) == 0.0);
    }

    SECTION("weighted combination") {
        ModelConfig w = cfg;
        w.alpha = 2.0;
        w.beta = 0.5;
        w.gamma = 3.0;
        w.eta = 10.0;
        const double expected = 2.0 * (1.0 + 0.5 + 0.25) + 0.5 * 2.0 + 3.0 * 3.0 +
                                10.0 * 0.1 + 4.0 + 0.2 + 0.3;
        CHECK(total_loss(b, w) == Catch::Approx(expected).epsilon(1e-12));
    }

    SECTION("disabling the adversarial flag removes exactly beta * L_adv") {
        ModelConfig on = cfg, off = cfg;
        off.enable_adversarial = false;
        CHECK(total_loss(b, on) - total_loss(b, off) ==
              Catch::Approx(cfg.beta * b.L_adv).epsilon(1e-12));
    }

    SECTION("NaN is rejected with the term name") {
        LossBreakdown bad = b;
        bad.L_sent = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_WITH(total_loss(bad, cfg), Catch::Matchers::ContainsSubstring("L_sent"));
    }
}
