#include <catch2/catch_amalgamated.hpp>

#include "diatom/embeddings.hpp"
#include "diatom/rng.hpp"
#include "test_util.hpp"

using namespace diatom;
using Eigen::VectorXd;
using testutil::TempDir;
using testutil::write_file;

namespace {

EmbeddingTable basis_table(int dim) {
    EmbeddingTable t;
    t.dimension = dim;
    for (int i = 0; i < dim; ++i) {
        VectorXd v = VectorXd::Zero(dim);
        v(i) = 1.0;
        t.vectors.emplace("word" + std::to_string(i), v);
    }
    return t;
}

}  // namespace

TEST_CASE("load_embedding_table parses the text format") {
    TempDir dir("emb");
    std::string content;
    for (int i = 0; i < 3; ++i) {
        content += "tok" + std::to_string(i);
        for (int d = 0; d < 300; ++d) content += " " + std::to_string(0.001 * (i + d));
        content += "\n";
    }
    write_file(dir.file("vec.txt"), content);
    auto table = load_embedding_table(dir.file("vec.txt"));
    CHECK(table.dimension == 300);
    CHECK(table.vectors.size() == 3);
    CHECK(table.lookup("tok1").has_value());
    CHECK(!table.lookup("tok9").has_value());
}

TEST_CASE("load_embedding_table rejects inconsistent dimensions") {
    TempDir dir("emb_bad");
    write_file(dir.file("vec.txt"), "aa 1 2 3 4\nbb 1 2 3\n");
    CHECK_THROWS_WITH(load_embedding_table(dir.file("vec.txt")),
                      Catch::Matchers::ContainsSubstring(":2"));
}

TEST_CASE("empty embedding table errors on first use") {
    TempDir dir("emb_empty");
    write_file(dir.file("vec.txt"), "");
    auto table = load_embedding_table(dir.file("vec.txt"));
    CHECK(table.empty());
    CHECK_THROWS_AS(table.lookup("anything"), DataError);
}

TEST_CASE("cosine basics") {
    VectorXd e1 = VectorXd::Zero(2), e2 = VectorXd::Zero(2);
    e1(0) = 1.0;
    e2(1) = 1.0;
    CHECK(cosine(e1, e1) == Catch::Approx(1.0));
    CHECK(cosine(e1, e2) == Catch::Approx(0.0).margin(1e-15));
    CHECK(cosine(e1, (-e1).eval()) == Catch::Approx(-1.0));
    CHECK_THROWS_AS(cosine(VectorXd::Zero(2), e1), DataError);
}

TEST_CASE("cosine is symmetric and scale-invariant") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        VectorXd u(4), v(4);
        for (int i = 0; i < 4; ++i) {
            u(i) = rng.normal();
            v(i) = rng.normal();
        }
        if (u.norm() == 0.0 || v.norm() == 0.0) continue;
        const double a = 0.1 + rng.uniform() * 5.0;
        const double b = 0.1 + rng.uniform() * 5.0;
        CHECK(cosine(u, v) == Catch::Approx(cosine(v, u)).epsilon(1e-12));
        CHECK(cosine((a * u).eval(), (b * v).eval()) ==
              Catch::Approx(cosine(u, v)).epsilon(1e-12));
    }
}

TEST_CASE("topic_embedding oracle cases") {
    auto table = basis_table(4);

    SECTION("single word returns its normalized vector") {
        VectorXd w(4);
        w << 3.0, 0.0, 0.0, 0.0;
        EmbeddingTable t;
        t.dimension = 4;
        t.vectors.emplace("solo", w);
        auto e = topic_embedding({{"solo", 1.0}}, t);
        CHECK((e - w / w.norm()).norm() < 1e-12);
    }

    SECTION("two equal-weight basis vectors average to the diagonal") {
        auto e = topic_embedding({{"word0", 0.5}, {"word1", 0.5}}, table);
        CHECK(e(0) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
        CHECK(e(1) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
        CHECK(e(2) == Catch::Approx(0.0).margin(1e-15));
    }

    SECTION("missing words are skipped with weight renormalization") {
        auto e = topic_embedding({{"word0", 0.5}, {"unknown", 0.5}}, table);
        CHECK(e(0) == Catch::Approx(1.0).epsilon(1e-12));
    }

    SECTION("all top words OOV is an error") {
        CHECK_THROWS_WITH(topic_embedding({{"nope", 1.0}}, table),
                          Catch::Matchers::ContainsSubstring("unlabelable"));
    }
}

TEST_CASE("topic_embedding output has unit norm") {
    Rng rng(17);
    EmbeddingTable t;
    t.dimension = 6;
    for (int i = 0; i < 20; ++i) {
        VectorXd v(6);
        for (int d = 0; d < 6; ++d) v(d) = rng.normal();
        t.vectors.emplace("w" + std::to_string(i), v);
    }
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::pair<std::string, double>> words;
        double total = 0.0;
        for (int i = 0; i < 5; ++i) {
            const double w = rng.uniform() + 0.01;
            words.emplace_back("w" + std::to_string(rng.index(20)), w);
            total += w;
        }
        for (auto& [_, w] : words) w /= total;
        CHECK(topic_embedding(words, t).norm() == Catch::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("sentence_embedding uses the cache verbatim and falls back to word means") {
    auto table = basis_table(4);
    // "word0 word1" under mean-of-words
    AnnotatedSentence s{"word0 word1", ProxyLabel::None};
    auto e = sentence_embedding(s, table);
    CHECK(e.source == SentenceEmbedding::Source::MeanOfWords);
    CHECK(e.vector(0) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(e.vector(1) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

    SentenceCache cache;
    VectorXd cached(4);
    cached << 0.25, 0.5, 0.0, 0.0;  // deliberately not unit norm
    cache.vectors.emplace("word0 word1", cached);
    auto hit = sentence_embedding(s, table, &cache);
    CHECK(hit.source == SentenceEmbedding::Source::ExternalFile);
    CHECK((hit.vector - cached).norm() == 0.0);

    AnnotatedSentence empty{"", ProxyLabel::None};
    CHECK_THROWS_AS(sentence_embedding(empty, table), DataError);

    AnnotatedSentence oov{"completely unknown tokens", ProxyLabel::None};
    CHECK_THROWS_AS(sentence_embedding(oov, table), DataError);
}

TEST_CASE("sentence cache file round-trips") {
    TempDir dir("cache");
    write_file(dir.file("cache.jsonl"),
               json{{"text", "hello there"}, {"vector", {0.1, 0.2}}}.dump() + "\n");
    auto cache = load_sentence_cache(dir.file("cache.jsonl"));
    auto v = cache.lookup("hello there");
    REQUIRE(v.has_value());
    CHECK((*v)(0) == Catch::Approx(0.1));
    CHECK((*v)(1) == Catch::Approx(0.2));
}

TEST_CASE("sentence_embedding is deterministic") {
    auto table = basis_table(3);
    AnnotatedSentence s{"word0 word2 word2", ProxyLabel::None};
    auto a = sentence_embedding(s, table);
    auto b = sentence_embedding(s, table);
    CHECK((a.vector - b.vector).norm() == 0.0);
}
