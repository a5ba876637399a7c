#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tcts/metrics.hpp"
#include "tcts/rng.hpp"

using namespace tcts::metrics;

TEST_CASE("AP worked examples") {
  // full wait
  ReadWriteTrace full;
  full.src_len = 6;
  full.g = {6, 6, 6, 6};
  CHECK(average_proportion(full) == doctest::Approx(1.0));

  // |x|=|y|=4, k=2, g=[2,3,4,4] -> 13/16
  auto t = waitk_trace(2, 4, 4);
  CHECK(t.g == std::vector<int>{2, 3, 4, 4});
  CHECK(average_proportion(t) == doctest::Approx(0.8125));

  ReadWriteTrace one;
  one.src_len = 1;
  one.g = {1};
  CHECK(average_proportion(one) == doctest::Approx(1.0));
}

TEST_CASE("AL worked examples") {
  // |x|=|y|=4, k=2 -> tau=3, AL=2
  CHECK(average_lagging(waitk_trace(2, 4, 4)) == doctest::Approx(2.0));

  // full wait, |x|=|y|=n -> tau=1, AL=n
  for (int n : {2, 5, 9}) {
    ReadWriteTrace t;
    t.src_len = n;
    t.g.assign(static_cast<size_t>(n), n);
    CHECK(average_lagging(t) == doctest::Approx(static_cast<double>(n)));
  }
}

TEST_CASE("AL closed form: wait-k with |x|=|y|=n gives exactly k") {
  for (int n = 2; n <= 50; ++n) {
    for (int k = 1; k <= n; ++k) {
      CHECK(average_lagging(waitk_trace(k, n, n)) == doctest::Approx(k).epsilon(1e-12));
    }
  }
}

TEST_CASE("AL rejects traces that never read the full source") {
  ReadWriteTrace t;
  t.src_len = 5;
  t.g = {1, 2, 3};
  CHECK_THROWS_AS(average_lagging(t), std::invalid_argument);
}

TEST_CASE("trace validation") {
  ReadWriteTrace t;
  t.src_len = 3;
  t.g = {2, 1, 3};  // decreasing
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  t.g = {0, 1};  // below 1
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  t.g = {};
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("BLEU identities") {
  std::vector<std::vector<int>> corpus = {{1, 2, 3, 4, 5}, {7, 8, 9, 10}};
  CHECK(corpus_bleu(corpus, corpus) == doctest::Approx(100.0));

  // zero 4-gram overlap, smoothing off
  std::vector<std::vector<int>> hyp = {{1, 2, 3, 9, 5, 6}};
  std::vector<std::vector<int>> ref = {{1, 2, 3, 4, 5, 6}};
  CHECK(corpus_bleu(hyp, ref) == doctest::Approx(0.0));
}

TEST_CASE("BLEU brevity penalty worked example") {
  // hyp "a b c d", ref "a b c d e": precisions 1, BP = e^{1-5/4}
  std::vector<std::vector<int>> hyp = {{1, 2, 3, 4}};
  std::vector<std::vector<int>> ref = {{1, 2, 3, 4, 5}};
  CHECK(corpus_bleu(hyp, ref) == doctest::Approx(100.0 * std::exp(-0.25)).epsilon(1e-9));
}

TEST_CASE("BLEU n-gram clipping") {
  // hyp repeats a token more often than the reference contains it
  std::vector<std::vector<int>> hyp = {{7, 7, 7, 7, 7, 7, 7}};
  std::vector<std::vector<int>> ref = {{7, 7, 1, 2, 3, 4, 5}};
  double b = corpus_bleu(hyp, ref, 1);
  CHECK(b == doctest::Approx(100.0 * 2.0 / 7.0).epsilon(1e-9));
}

TEST_CASE("BLEU permutation never beats the exact reference") {
  tcts::Rng rng(17);
  std::vector<int> ref_seq = {1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<std::vector<int>> ref = {ref_seq};
  double exact = corpus_bleu(ref, ref);
  for (int i = 0; i < 50; ++i) {
    auto shuf = ref_seq;
    rng.shuffle(shuf);
    CHECK(corpus_bleu({shuf}, ref) <= exact + 1e-12);
  }
}

TEST_CASE("BLEU rejects empty corpus") {
  CHECK_THROWS_AS(corpus_bleu({}, {}), std::invalid_argument);
}

TEST_CASE("Spearman hand example") {
  CHECK(spearman({1, 2, 3}, {30, 10, 20}) == doctest::Approx(-0.5));
}

TEST_CASE("RankIC identities") {
  std::vector<PanelPrediction> panel;
  tcts::Rng rng(3);
  for (int d = 0; d < 4; ++d) {
    for (int i = 0; i < 5; ++i) {
      double label = rng.normal();
      // prediction is a strictly increasing transform of the label
      panel.push_back({d, i, std::exp(2.0 * label) + 3.0, label});
    }
  }
  CHECK(rank_ic(panel) == doctest::Approx(1.0));
  for (auto& p : panel) p.predicted = -p.predicted;
  CHECK(rank_ic(panel) == doctest::Approx(-1.0));
}

TEST_CASE("RankIC monotone transform invariance") {
  tcts::Rng rng(11);
  std::vector<PanelPrediction> panel, transformed;
  for (int d = 0; d < 6; ++d) {
    for (int i = 0; i < 7; ++i) {
      double pred = rng.normal(), label = rng.normal();
      panel.push_back({d, i, pred, label});
      transformed.push_back({d, i, std::atan(pred) * 5 + 1, label});
    }
  }
  CHECK(rank_ic(transformed) == doctest::Approx(rank_ic(panel)).epsilon(1e-12));
}

TEST_CASE("RankIC single-date hand example and rejection") {
  std::vector<PanelPrediction> p = {{0, 0, 1, 30}, {0, 1, 2, 10}, {0, 2, 3, 20}};
  CHECK(rank_ic(p) == doctest::Approx(-0.5));
  std::vector<PanelPrediction> lonely = {{0, 0, 1, 2}, {1, 0, 3, 4}};
  CHECK_THROWS_AS(rank_ic(lonely), std::invalid_argument);
}

TEST_CASE("ICIR worked example, symmetry, and edge") {
  CHECK(icir({0.1, 0.3}) == doctest::Approx(2.0));
  CHECK(icir({-0.1, -0.3}) == doctest::Approx(-2.0));
  CHECK_THROWS_AS(icir({0.2, 0.2, 0.2}), std::invalid_argument);
  CHECK_THROWS_AS(icir({0.2}), std::invalid_argument);
}

TEST_CASE("MSE examples and homogeneity") {
  CHECK(mse({1, 2, 3}, {1, 2, 3}) == doctest::Approx(0.0));
  CHECK(mse({0, 0}, {1, 3}) == doctest::Approx(5.0));
  double base = mse({1, 2}, {0, 0});
  CHECK(mse({3, 6}, {0, 0}) == doctest::Approx(9.0 * base));
}
