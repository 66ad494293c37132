#include <gtest/gtest.h>

#include <numeric>

#include "oracles.hpp"
#include "socl/metrics/ce.hpp"
#include "socl/metrics/nlg.hpp"
#include "socl/metrics/retrieval.hpp"
#include "socl/ten/rng.hpp"
#include "support.hpp"

namespace {

using namespace socl;
using namespace socl::metrics;

Tokens words(const std::string& s) {
  Tokens out;
  std::string w;
  for (char c : s + " ") {
    if (c == ' ') {
      if (!w.empty()) out.push_back(w);
      w.clear();
    } else {
      w.push_back(c);
    }
  }
  return out;
}

Tokens random_sentence(ten::Rng& rng, std::size_t vocab, std::size_t max_len) {
  Tokens s(rng.below(max_len + 1));
  for (auto& w : s) w = "w" + std::to_string(rng.below(vocab));
  return s;
}

TEST(Bleu, Examples) {
  const Tokens ref = words("the cat sat on the mat");
  EXPECT_DOUBLE_EQ(bleu(ref, {ref}, 4), 1.0);
  // Matches: 5 of 6 unigrams, 3 of 5 bigrams, 2 of 4 trigrams, 1 of 3 4-grams.
  const Tokens hyp = words("the cat sat on a mat");
  EXPECT_NEAR(bleu(hyp, {ref}, 4), std::pow(5.0 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0, 0.25), 1e-12);
  EXPECT_EQ(bleu(words("mat on sat cat"), {ref}, 2), 0.0);
  EXPECT_NEAR(bleu(hyp, {ref}, 2), std::sqrt(5.0 / 6.0 * 3.0 / 5.0), 1e-12);
  // Clipping: "the" counted at most twice.
  EXPECT_NEAR(bleu(words("the the the the the the"), {ref}, 1), 2.0 / 6.0, 1e-12);
  // Brevity penalty exp(1 - 6/4) on a 4-token exact prefix.
  EXPECT_NEAR(bleu(words("the cat sat on"), {ref}, 4), std::exp(1.0 - 6.0 / 4.0), 1e-12);
  // Every n-gram of a 5-token exact prefix matches, so only the penalty remains.
  EXPECT_NEAR(bleu(words("the cat sat on the"), {ref}, 4), std::exp(1.0 - 6.0 / 5.0), 1e-12);
  EXPECT_THROW(bleu(hyp, {ref}, 0), ParameterError);
  EXPECT_THROW(bleu(hyp, {ref}, 5), ParameterError);
  EXPECT_THROW(corpus_bleu({}, {}, 4), ParameterError);
}

TEST(Bleu, MatchesScanningOracle) {
  ten::Rng rng(31);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<Tokens> hyps;
    std::vector<std::vector<Tokens>> refs;
    const std::size_t n_cases = 1 + rng.below(4);
    for (std::size_t i = 0; i < n_cases; ++i) {
      hyps.push_back(random_sentence(rng, 4, 10));
      std::vector<Tokens> r;
      for (std::size_t k = 0, nr = 1 + rng.below(3); k < nr; ++k) r.push_back(random_sentence(rng, 4, 10));
      refs.push_back(r);
    }
    const std::size_t n = 1 + rng.below(4);
    EXPECT_NEAR(corpus_bleu(hyps, refs, n), oracle::corpus_bleu(hyps, refs, n), 1e-12);
  }
}

TEST(Bleu, LowerOrderNeverSmallerOnIdenticalLengths) {
  ten::Rng rng(32);
  for (int rep = 0; rep < 100; ++rep) {
    const Tokens ref = random_sentence(rng, 3, 12);
    Tokens hyp = ref;
    for (auto& w : hyp)
      if (rng.bernoulli(0.2)) w = "w" + std::to_string(rng.below(3));
    for (std::size_t n = 2; n <= 4; ++n) EXPECT_LE(bleu(hyp, {ref}, n), bleu(hyp, {ref}, n - 1) + 1e-12);
  }
}

TEST(Bleu, CorpusOrderInvariant) {
  ten::Rng rng(33);
  std::vector<Tokens> hyps;
  std::vector<std::vector<Tokens>> refs;
  for (int i = 0; i < 8; ++i) {
    hyps.push_back(random_sentence(rng, 5, 8));
    refs.push_back({random_sentence(rng, 5, 8)});
  }
  const double base = corpus_bleu(hyps, refs, 2);
  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<Tokens> h2;
  std::vector<std::vector<Tokens>> r2;
  for (std::size_t i : perm) {
    h2.push_back(hyps[i]);
    r2.push_back(refs[i]);
  }
  EXPECT_NEAR(corpus_bleu(h2, r2, 2), base, 1e-15);
}

TEST(RougeL, Examples) {
  // LCS "the cat on mat" has length 4 in two 5-token strings: P = R = 0.8.
  EXPECT_NEAR(rouge_l(words("the cat sat on mat"), words("the cat lay on mat")), 0.8, 1e-12);
  EXPECT_EQ(rouge_l(words("a b"), words("c d")), 0.0);
  EXPECT_EQ(rouge_l({}, words("c d")), 0.0);
  EXPECT_EQ(rouge_l(words("c d"), words("c d")), 1.0);
  EXPECT_THROW(rouge_l(words("a"), {}), ParameterError);
  EXPECT_EQ(lcs_length(words("a b c d"), words("b d a")), 2u);
}

TEST(RougeL, MatchesTableOracle) {
  ten::Rng rng(34);
  for (int rep = 0; rep < 100; ++rep) {
    const Tokens h = random_sentence(rng, 4, 12);
    Tokens r = random_sentence(rng, 4, 12);
    if (r.empty()) r.push_back("w0");
    EXPECT_EQ(lcs_length(h, r), oracle::lcs(h, r));
    EXPECT_NEAR(rouge_l(h, r), oracle::rouge_l(h, r), 1e-12);
  }
}

TEST(CeMetrics, Examples) {
  // TP 3, FP 1, FN 2: P 0.75, R 0.6, F1 2/3.
  const std::vector<std::vector<int>> pred{{1, 1, 0}, {1, 0, 1}};
  const std::vector<std::vector<int>> truth{{1, 0, 1}, {1, 1, 1}};
  const auto s = ce_metrics(pred, truth);
  EXPECT_NEAR(s.precision, 0.75, 1e-15);
  EXPECT_NEAR(s.recall, 0.6, 1e-15);
  EXPECT_NEAR(s.f1, 2.0 / 3.0, 1e-15);
  const auto none = ce_metrics({{0, 0}}, {{0, 0}});
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_EQ(ce_metrics(truth, truth).f1, 1.0);
  // Macro: per label F1 = {1, 0, 2/3}.
  EXPECT_NEAR(ce_metrics(pred, truth, Averaging::Macro).f1, 5.0 / 9.0, 1e-12);
  EXPECT_THROW(ce_metrics({{1}}, {{1, 0}}), ShapeError);
  EXPECT_THROW(parse_averaging("weighted"), ConfigError);
}

TEST(CeMetrics, MatchesSetOracle) {
  ten::Rng rng(35);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + rng.below(10), L = 1 + rng.below(8);
    std::vector<std::vector<int>> pred(n, std::vector<int>(L)), truth(n, std::vector<int>(L));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < L; ++l) {
        pred[i][l] = rng.bernoulli(0.4);
        truth[i][l] = rng.bernoulli(0.4);
      }
    const auto s = ce_metrics(pred, truth);
    const auto o = oracle::ce_micro(pred, truth);
    EXPECT_NEAR(s.precision, o.p, 1e-12);
    EXPECT_NEAR(s.recall, o.r, 1e-12);
    EXPECT_NEAR(s.f1, o.f, 1e-12);
  }
}

TEST(Retrieval, Examples) {
  // Two subjects, one structure, orthogonal tokens: perfect retrieval.
  const std::vector<TextQuery> q{{std::vector<double>{1, 0}}, {std::vector<double>{0, 1}}};
  const std::vector<ten::Mat> v{ten::Mat{{1, 0}}, ten::Mat{{0, 1}}};
  auto r = retrieval_recall(q, v, {1, 2});
  EXPECT_EQ(r[1], 1.0);
  EXPECT_EQ(r[2], 1.0);
  // Swapped volumes: every true volume ranks second.
  r = retrieval_recall(q, {v[1], v[0]}, {1, 2});
  EXPECT_EQ(r[1], 0.0);
  EXPECT_EQ(r[2], 1.0);
  // Ties resolve against the true volume only when it has the higher index.
  EXPECT_EQ(true_rank({0.5, 0.5}, 0), 0u);
  EXPECT_EQ(true_rank({0.5, 0.5}, 1), 1u);
  // Absent structures are skipped; an empty query scores 0.
  EXPECT_EQ(subject_score({std::nullopt}, ten::Mat{{1, 0}}), 0.0);
  EXPECT_THROW(retrieval_recall({}, {}, {1}), ParameterError);
  EXPECT_THROW(retrieval_recall(q, v, {0}), ParameterError);
}

// Random tokens: recall@K is about K / N for N subjects.
TEST(Retrieval, RandomBaselineIsKOverN) {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ten::Rng rng(seed);
    std::vector<TextQuery> q;
    std::vector<ten::Mat> v;
    for (int i = 0; i < 100; ++i) {
      q.push_back({test::random_unit_rows(rng, 1, 8).row_vec(0), test::random_unit_rows(rng, 1, 8).row_vec(0)});
      v.push_back(test::random_unit_rows(rng, 2, 8));
    }
    const auto r = retrieval_recall(q, v, {1, 5, 10});
    EXPECT_LE(r.at(1), r.at(5));
    EXPECT_LE(r.at(5), r.at(10));
    total += r.at(10);
  }
  EXPECT_NEAR(total / 20.0, 0.1, 0.06);
}

}  // namespace
