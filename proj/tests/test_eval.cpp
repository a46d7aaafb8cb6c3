#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "diatom/eval.hpp"
#include "diatom/rng.hpp"
#include "test_util.hpp"

using namespace diatom;
using Eigen::VectorXd;
using testutil::TempDir;

namespace {

TopicSet make_topics(const std::vector<std::vector<std::string>>& word_lists) {
    TopicSet set;
    int idx = 0;
    for (const auto& words : word_lists) {
        TopicInfo t;
        t.index = idx++;
        double w = 1.0;
        for (const auto& tok : words) {
            t.top_words.emplace_back(tok, w);
            w *= 0.9;
        }
        set.topics.push_back(t);
    }
    return set;
}

std::vector<std::string> numbered(const std::string& prefix, int from, int count) {
    std::vector<std::string> out;
    for (int i = 0; i < count; ++i) out.push_back(prefix + std::to_string(from + i));
    return out;
}

}  // namespace

TEST_CASE("topic uniqueness oracle constructions") {
    SECTION("pairwise disjoint lists give TU = 1") {
        auto set = make_topics({numbered("aa", 0, 10), numbered("bb", 0, 10),
                                numbered("cc", 0, 10)});
        auto tu = topic_uniqueness(set, 10);
        for (double v : tu.per_topic) CHECK(v == Catch::Approx(1.0).epsilon(1e-12));
        CHECK(tu.mean == Catch::Approx(1.0).epsilon(1e-12));
    }

    SECTION("K identical lists give TU = 1/K") {
        const int k = 4;
        std::vector<std::vector<std::string>> lists(k, numbered("w", 0, 10));
        auto tu = topic_uniqueness(make_topics(lists), 10);
        for (double v : tu.per_topic) CHECK(v == Catch::Approx(1.0 / k).epsilon(1e-12));
    }

    SECTION("two topics sharing 5 of 10 words give TU = 0.75") {
        auto sharing_a = numbered("sh", 0, 5);
        auto rest_a = numbered("ax", 0, 5);
        auto rest_b = numbered("bx", 0, 5);
        std::vector<std::string> ta = sharing_a, tb = sharing_a;
        ta.insert(ta.end(), rest_a.begin(), rest_a.end());
        tb.insert(tb.end(), rest_b.begin(), rest_b.end());
        auto tu = topic_uniqueness(make_topics({ta, tb}), 10);
        CHECK(tu.per_topic[0] == Catch::Approx(0.75).epsilon(1e-12));
        CHECK(tu.per_topic[1] == Catch::Approx(0.75).epsilon(1e-12));
    }

    SECTION("mean TU is 1 iff all top lists are pairwise disjoint") {
        Rng rng(31);
        for (int trial = 0; trial < 25; ++trial) {
            std::vector<std::vector<std::string>> lists;
            const int topics = 2 + static_cast<int>(rng.index(3));
            const bool force_overlap = rng.bernoulli(0.5);
            for (int t = 0; t < topics; ++t)
                lists.push_back(numbered("t" + std::to_string(t) + "w", 0, 5));
            if (force_overlap) lists[1][0] = lists[0][0];
            auto tu = topic_uniqueness(make_topics(lists), 5);
            // disjointness check by hand
            std::set<std::string> seen;
            bool disjoint = true;
            for (const auto& l : lists)
                for (const auto& w : l) disjoint = seen.insert(w).second && disjoint;
            if (disjoint)
                CHECK(tu.mean == Catch::Approx(1.0).epsilon(1e-12));
            else
                CHECK(tu.mean < 1.0);
        }
    }

    SECTION("asking for more words than available is an error") {
        auto set = make_topics({numbered("aa", 0, 3)});
        CHECK_THROWS_AS(topic_uniqueness(set, 10), ConfigError);
    }
}

TEST_CASE("disentanglement rate oracle values") {
    auto mk = [](std::vector<ProxyLabel> ls) {
        std::vector<TopicLabel> out;
        int i = 0;
        for (auto l : ls) {
            TopicLabel t;
            t.topic_index = i++;
            t.label = l;
            out.push_back(t);
        }
        return out;
    };
    using PL = ProxyLabel;
    CHECK(disentanglement_rate(mk({PL::Positive, PL::Negative, PL::Plot, PL::None})) ==
          Catch::Approx(0.5).epsilon(1e-12));
    CHECK(disentanglement_rate(mk({PL::Plot, PL::Plot, PL::Plot})) == 0.0);
    CHECK(disentanglement_rate(mk({PL::Positive, PL::Positive})) == 1.0);

    // invariant under permutation of topics
    auto labels = mk({PL::Positive, PL::Plot, PL::Negative, PL::None, PL::Plot});
    auto shuffled = mk({PL::Plot, PL::None, PL::Positive, PL::Plot, PL::Negative});
    CHECK(disentanglement_rate(labels) == Catch::Approx(disentanglement_rate(shuffled)));
}

TEST_CASE("npmi coherence: perfect association, independence, never co-occurring") {
    // 50 windows with {alpha,beta}, 50 with {gamma,delta}: alpha and beta are
    // perfectly associated, alpha and gamma never co-occur.
    std::vector<std::vector<std::string>> reference;
    for (int i = 0; i < 50; ++i) reference.push_back({"alpha", "beta"});
    for (int i = 0; i < 50; ++i) reference.push_back({"gamma", "delta"});

    CoherenceConfig cfg;
    cfg.top_n = 2;

    auto perfect = npmi_coherence(make_topics({{"alpha", "beta"}}), reference, cfg);
    REQUIRE(perfect.per_topic.size() == 1);
    CHECK(perfect.per_topic[0] == Catch::Approx(1.0).margin(1e-9));

    auto never = npmi_coherence(make_topics({{"alpha", "gamma"}}), reference, cfg);
    CHECK(never.per_topic[0] < -0.9);

    SECTION("document order does not matter") {
        auto shuffled = reference;
        std::reverse(shuffled.begin(), shuffled.end());
        auto a = npmi_coherence(make_topics({{"alpha", "beta"}, {"alpha", "delta"}}),
                                reference, cfg);
        auto b = npmi_coherence(make_topics({{"alpha", "beta"}, {"alpha", "delta"}}),
                                shuffled, cfg);
        CHECK(a.per_topic[0] == Catch::Approx(b.per_topic[0]).epsilon(1e-12));
        CHECK(a.per_topic[1] == Catch::Approx(b.per_topic[1]).epsilon(1e-12));
        CHECK(a.mean == Catch::Approx(b.mean).epsilon(1e-12));
    }
}

TEST_CASE("npmi coherence: independent words score near zero on a large reference") {
    // ~1e5 tokens: 5000 documents of 20 tokens over 100 independent words
    Rng rng(8);
    std::vector<std::vector<std::string>> reference;
    for (int d = 0; d < 5000; ++d) {
        std::vector<std::string> doc;
        for (int t = 0; t < 20; ++t)
            doc.push_back("word" + std::to_string(rng.index(100)));
        reference.push_back(std::move(doc));
    }
    CoherenceConfig cfg;
    cfg.top_n = 2;
    auto res = npmi_coherence(make_topics({{"word0", "word1"}, {"word42", "word87"}}),
                              reference, cfg);
    for (double v : res.per_topic) CHECK(std::abs(v) < 0.05);
}

TEST_CASE("npmi coherence: topics with absent words are excluded with a warning") {
    std::vector<std::vector<std::string>> reference = {{"alpha", "beta"}};
    CoherenceConfig cfg;
    cfg.top_n = 2;
    auto res = npmi_coherence(make_topics({{"ghost", "phantom"}, {"alpha", "beta"}}),
                              reference, cfg);
    CHECK(res.undefined_topics == 1);
    CHECK(std::isnan(res.per_topic[0]));
    CHECK(res.per_topic[1] == Catch::Approx(1.0).margin(1e-9));
    CHECK(res.mean == Catch::Approx(1.0).margin(1e-9));  // mean over defined topics
}

namespace {

// Table where each "anchor word" sits at a known angle from e1 in the plane.
EmbeddingTable angled_table(const std::vector<std::pair<std::string, double>>& word_cos) {
    EmbeddingTable t;
    t.dimension = 2;
    for (const auto& [word, c] : word_cos) {
        VectorXd v(2);
        v << c, std::sqrt(std::max(0.0, 1.0 - c * c));
        t.vectors.emplace(word, v);
    }
    return t;
}

}  // namespace

TEST_CASE("label_topic majority, tie-breaking and duplication invariance") {
    TopicInfo topic;
    topic.index = 0;
    topic.top_words = {{"anchor", 1.0}};

    SECTION("unanimous pool") {
        std::vector<std::pair<std::string, double>> words = {{"anchor", 1.0}};
        std::vector<AnnotatedSentence> pool;
        for (int i = 0; i < 10; ++i) {
            words.emplace_back("plotw" + std::to_string(i), 0.9 - 0.01 * i);
            pool.push_back({"plotw" + std::to_string(i), ProxyLabel::Plot});
        }
        auto table = angled_table(words);
        auto label = label_topic(topic, pool, table);
        CHECK(label.label == ProxyLabel::Plot);
        CHECK(label.retrieved.size() == 10);
    }

    SECTION("majority wins") {
        std::vector<std::pair<std::string, double>> words = {{"anchor", 1.0}};
        std::vector<AnnotatedSentence> pool;
        for (int i = 0; i < 6; ++i) {
            words.emplace_back("pos" + std::to_string(i), 0.9);
            pool.push_back({"pos" + std::to_string(i), ProxyLabel::Positive});
        }
        for (int i = 0; i < 4; ++i) {
            words.emplace_back("plot" + std::to_string(i), 0.95);
            pool.push_back({"plot" + std::to_string(i), ProxyLabel::Plot});
        }
        auto table = angled_table(words);
        CHECK(label_topic(topic, pool, table).label == ProxyLabel::Positive);
    }

    SECTION("tie broken by highest mean similarity") {
        std::vector<std::pair<std::string, double>> words = {{"anchor", 1.0}};
        std::vector<AnnotatedSentence> pool;
        for (int i = 0; i < 5; ++i) {
            words.emplace_back("pos" + std::to_string(i), 0.8);
            pool.push_back({"pos" + std::to_string(i), ProxyLabel::Positive});
        }
        for (int i = 0; i < 5; ++i) {
            words.emplace_back("neg" + std::to_string(i), 0.6);
            pool.push_back({"neg" + std::to_string(i), ProxyLabel::Negative});
        }
        auto table = angled_table(words);
        CHECK(label_topic(topic, pool, table).label == ProxyLabel::Positive);
    }

    SECTION("duplicating the pool changes nothing") {
        std::vector<std::pair<std::string, double>> words = {{"anchor", 1.0}};
        std::vector<AnnotatedSentence> pool;
        for (int i = 0; i < 12; ++i) {
            const double c = 0.95 - 0.05 * i;
            words.emplace_back("sent" + std::to_string(i), c);
            pool.push_back(
                {"sent" + std::to_string(i), i < 7 ? ProxyLabel::Negative : ProxyLabel::Plot});
        }
        auto table = angled_table(words);
        auto base = label_topic(topic, pool, table);
        std::vector<AnnotatedSentence> doubled = pool;
        doubled.insert(doubled.end(), pool.begin(), pool.end());
        auto dup = label_topic(topic, doubled, table);
        CHECK(base.label == dup.label);
        REQUIRE(base.retrieved.size() == dup.retrieved.size());
        for (std::size_t i = 0; i < base.retrieved.size(); ++i)
            CHECK(base.retrieved[i].first.text == dup.retrieved[i].first.text);
    }

    SECTION("unlabelable topic propagates an error") {
        EmbeddingTable table = angled_table({{"other", 1.0}});
        std::vector<AnnotatedSentence> pool = {{"other", ProxyLabel::Plot}};
        TopicInfo oov;
        oov.index = 3;
        oov.top_words = {{"missing", 1.0}};
        CHECK_THROWS_AS(label_topic(oov, pool, table), DataError);
    }
}

TEST_CASE("sentiment accuracy with a majority-class head") {
    ModelConfig cfg;
    cfg.V = 8;
    cfg.K = 2;
    cfg.S = 2;
    cfg.M = 2;
    cfg.P = 1;
    cfg.hidden_doc = 4;
    cfg.hidden_clf = 3;
    Model model(cfg, 55);
    // bias the head hard toward class 0
    model.params.clf_w1.v.setZero();
    model.params.clf_b1.v.setZero();
    model.params.clf_w2.v.setZero();
    model.params.clf_b2.v.setZero();
    model.params.clf_b2.v(0, 0) = 50.0;

    std::vector<BowDocument> docs;
    for (int i = 0; i < 10; ++i) {
        BowDocument d;
        d.doc_id = "d" + std::to_string(i);
        d.counts = {{i % 8, 1 + i % 3}};
        d.sentiment_label = i < 7 ? Sentiment::Positive : Sentiment::Negative;
        docs.push_back(d);
    }
    BowDocument unlabeled;
    unlabeled.doc_id = "u";
    unlabeled.counts = {{0, 1}};
    docs.push_back(unlabeled);

    auto acc = sentiment_accuracy(model, docs);
    CHECK(acc.evaluated == 10);
    CHECK(acc.skipped == 1);
    CHECK(acc.accuracy == Catch::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("random heads hover near chance on balanced binary data") {
    ModelConfig cfg;
    cfg.V = 10;
    cfg.K = 2;
    cfg.S = 2;
    cfg.M = 2;
    cfg.P = 1;
    cfg.hidden_doc = 4;
    cfg.hidden_clf = 3;

    std::vector<BowDocument> docs;
    Rng gen(77);
    for (int i = 0; i < 40; ++i) {
        BowDocument d;
        d.doc_id = "d" + std::to_string(i);
        for (int t = 0; t < 6; ++t) d.counts[static_cast<int>(gen.index(10))] += 1;
        d.sentiment_label = i % 2 == 0 ? Sentiment::Positive : Sentiment::Negative;
        docs.push_back(d);
    }

    double mean_acc = 0.0;
    for (int seed = 0; seed < 100; ++seed) {
        Model model(cfg, 1000 + seed);
        mean_acc += sentiment_accuracy(model, docs).accuracy;
    }
    mean_acc /= 100.0;
    CHECK(mean_acc > 0.45);
    CHECK(mean_acc < 0.55);
}

TEST_CASE("export_topic_vectors writes a parseable CSV that round-trips") {
    ModelConfig cfg;
    cfg.V = 5;
    cfg.K = 2;
    cfg.S = 1;
    cfg.M = 2;
    cfg.P = 1;
    cfg.hidden_doc = 3;
    cfg.hidden_clf = 3;
    Model model(cfg, 60);
    Vocabulary vocab = build_vocabulary({{"vv", "ww", "xx", "yy", "zz"}}, 5);

    TempDir dir("export");
    export_topic_vectors(model, vocab, nullptr, dir.file("vectors.csv"));

    std::ifstream in(dir.file("vectors.csv"));
    std::string header;
    std::getline(in, header);
    CHECK(header == "topic,tag,label,vv,ww,xx,yy,zz");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++rows;
        // topic index, tag, empty label, then V floats
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        const int topic = std::stoi(field);
        std::getline(ss, field, ',');
        CHECK(field == (topic < cfg.K ? "plot" : "opinion"));
        std::getline(ss, field, ',');
        CHECK(field.empty());
        for (int v = 0; v < cfg.V; ++v) {
            REQUIRE(std::getline(ss, field, ','));
            const double parsed = std::stod(field);
            CHECK(static_cast<float>(parsed) ==
                  static_cast<float>(model.params.dec_w.v(v, topic)));
        }
    }
    CHECK(rows == 3);
}
