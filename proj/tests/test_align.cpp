#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "socl/align/loss.hpp"
#include "socl/align/queue.hpp"
#include "support.hpp"

namespace {

using namespace socl;
using namespace socl::align;
using ten::Mat;

std::vector<double> e(std::size_t i, std::size_t d = 3) {
  std::vector<double> v(d, 0.0);
  v[i] = 1.0;
  return v;
}

TEST(Sim, Examples) {
  EXPECT_EQ(sim(e(0), e(0)), 1.0);
  EXPECT_EQ(sim(e(0), e(1)), 0.0);
  const std::vector<double> h{std::sqrt(0.5), std::sqrt(0.5), 0.0};
  EXPECT_NEAR(sim(h, e(1)), std::sqrt(0.5), 1e-15);
}

TEST(ImageToTextDist, Examples) {
  const Mat neg = Mat::row(e(1));
  const auto p = image_to_text_dist(e(0), e(0), neg, 1.0);
  EXPECT_NEAR(p[0], std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-15);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
  const auto none = image_to_text_dist(e(0), e(1), Mat(0, 3), 0.5);
  EXPECT_EQ(none, std::vector<double>{1.0});
  EXPECT_THROW(image_to_text_dist(e(0), e(0), neg, 0.0), ParameterError);
  EXPECT_THROW(image_to_text_dist(e(0), e(0), Mat(1, 2), 1.0), ShapeError);
}

TEST(SoftTargets, SelfIsPositive) {
  const Mat neg{{0.0, 1.0, 0.0}, {1.0, 0.0, 0.0}};
  const auto q = soft_targets(e(0), neg, 0.5);
  ASSERT_EQ(q.size(), 3u);
  EXPECT_NEAR(q[0], q[2], 1e-15);  // the second negative equals the text itself
  EXPECT_NEAR(q[0] / q[1], std::exp(2.0), 1e-12);
}

TEST(Distributions, MatchOracleOnRandomInstances) {
  ten::Rng rng(21);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t d = 2 + rng.below(10), m = rng.below(20);
    const Mat u = test::random_unit_rows(rng, 2, d), neg = test::random_unit_rows(rng, m, d);
    const double tau = 0.02 + rng.uniform();
    const auto p = image_to_text_dist(u.row_span(0), u.row_span(1), neg, tau);
    const auto po = oracle::candidate_dist(u.row_vec(0), u.row_vec(1), neg, tau);
    const auto q = soft_targets(u.row_span(1), neg, tau);
    const auto qo = oracle::candidate_dist(u.row_vec(1), u.row_vec(1), neg, tau);
    ASSERT_EQ(p.size(), m + 1);
    for (std::size_t i = 0; i <= m; ++i) {
      EXPECT_NEAR(p[i], po[i], 1e-12);
      EXPECT_NEAR(q[i], qo[i], 1e-12);
    }
  }
}

TEST(Distributions, PositiveMassGrowsAsTauShrinks) {
  ten::Rng rng(22);
  for (int rep = 0; rep < 50; ++rep) {
    const Mat u = test::random_unit_rows(rng, 1, 6), neg = test::random_unit_rows(rng, 5, 6);
    double best_neg = -1.0;
    for (std::size_t m = 0; m < 5; ++m) best_neg = std::max(best_neg, sim(u.row_span(0), neg.row_span(m)));
    if (best_neg > 0.99) continue;
    double prev = 0.0;
    for (double tau : {1.0, 0.5, 0.2, 0.1, 0.05}) {
      const double p0 = soft_targets(u.row_span(0), neg, tau)[0];
      EXPECT_GT(p0, prev);
      prev = p0;
    }
  }
}

TEST(Losses, ItcIsLogTwoForTwoEqualCandidates) {
  const ContrastBatch b{{0, 0, e(0), e(1)}};
  EXPECT_NEAR(loss_so_itc(b, Mat::row(e(2)), 0.3), std::log(2.0), 1e-15);
}

TEST(Losses, KlVanishesWhenVisualEqualsText) {
  ten::Rng rng(23);
  const Mat u = test::random_unit_rows(rng, 3, 5), neg = test::random_unit_rows(rng, 4, 5);
  ContrastBatch b;
  for (std::size_t i = 0; i < 3; ++i) b.push_back({i, 0, u.row_vec(i), u.row_vec(i)});
  EXPECT_NEAR(loss_so_kl(b, neg, 0.2), 0.0, 1e-14);
  EXPECT_GT(loss_so_itc(b, neg, 0.2), 0.0);
}

TEST(Losses, PreInterpolatesAndValidates) {
  ten::Rng rng(24);
  const Mat u = test::random_unit_rows(rng, 4, 5), neg = test::random_unit_rows(rng, 6, 5);
  const ContrastBatch b{{0, 0, u.row_vec(0), u.row_vec(1)}, {1, 0, u.row_vec(2), u.row_vec(3)}};
  const double itc = loss_so_itc(b, neg, 0.1), kl = loss_so_kl(b, neg, 0.1);
  EXPECT_EQ(loss_so_pre(b, neg, 0.1, 0.0), itc);
  EXPECT_EQ(loss_so_pre(b, neg, 0.1, 1.0), kl);
  EXPECT_NEAR(loss_so_pre(b, neg, 0.1, 0.5), 0.5 * (itc + kl), 1e-15);
  EXPECT_GE(kl, 0.0);
  EXPECT_THROW(loss_so_pre(b, neg, 0.1, 1.5), ParameterError);
  EXPECT_THROW(loss_so_pre(b, neg, 0.1, -0.1), ParameterError);
  EXPECT_THROW(loss_so_itc({}, neg, 0.1), ParameterError);
}

// The tape objective and the value-level losses are written independently.
TEST(Objective, AgreesWithValueLevelLosses) {
  ten::Rng rng(25);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t P = 1 + rng.below(5), d = 2 + rng.below(6), m = rng.below(8);
    const Mat v = test::random_unit_rows(rng, P, d), t = test::random_unit_rows(rng, P, d), neg = test::random_unit_rows(rng, m, d);
    const double tau = 0.05 + rng.uniform(), alpha = rng.uniform();
    ContrastBatch b;
    for (std::size_t i = 0; i < P; ++i) b.push_back({i, 0, v.row_vec(i), t.row_vec(i)});
    ten::Tape tape(false);
    const auto terms = so_pre_objective(tape, tape.constant(v), tape.constant(t), neg, tape.constant(Mat(1, 1, std::log(tau))),
                                        {alpha, true, true});
    EXPECT_NEAR(terms.itc.item(), loss_so_itc(b, neg, tau), 1e-10);
    EXPECT_NEAR(terms.kl.item(), loss_so_kl(b, neg, tau), 1e-10);
    EXPECT_NEAR(terms.total.item(), loss_so_pre(b, neg, tau, alpha), 1e-10);
  }
}

// Soft targets are constants: the KL gradient equals that of cross-entropy
// against the frozen q (the entropy of q contributes nothing).
TEST(Objective, TargetsCarryNoGradient) {
  ten::Rng rng(26);
  const Mat v = test::random_unit_rows(rng, 3, 4), t0 = test::random_unit_rows(rng, 3, 4), neg = test::random_unit_rows(rng, 5, 4);
  Mat grad_kl, grad_ce;
  {
    ten::Tape tape;
    auto text = tape.leaf(t0);
    const auto terms = so_pre_objective(tape, tape.constant(v), text, neg, tape.constant(Mat(1, 1, std::log(0.2))), {0.5, false, true});
    tape.backward(terms.total);
    grad_kl = tape.grad(text);
  }
  {
    ten::Tape tape;
    auto text = tape.leaf(t0);
    ten::Tape probe(false);
    const Mat q = so_pre_objective(probe, probe.constant(v), probe.constant(t0), neg, probe.constant(Mat(1, 1, std::log(0.2))),
                                   {0.5, false, true}).targets;
    auto logits = ten::concat_cols({ten::rows_dot(tape.constant(v), text), ten::matmul_nt(tape.constant(v), tape.constant(neg))});
    auto p = ten::softmax_rows(ten::scale(logits, 1.0 / 0.2));
    tape.backward(ten::mean(ten::cross_entropy_rows(q, p)));
    grad_ce = tape.grad(text);
  }
  EXPECT_LT(test::max_abs_diff(grad_kl, grad_ce), 1e-12);
}

TEST(Objective, BothTermsOffIsZero) {
  ten::Tape tape;
  const Mat u{{1.0, 0.0}};
  const auto terms = so_pre_objective(tape, tape.constant(u), tape.constant(u), Mat(0, 2), tape.constant(Mat(1, 1, 0.0)), {0.2, false, false});
  EXPECT_EQ(terms.total.item(), 0.0);
}

TEST(DuplicatePositive, SoftTargetsSplitMassAndPreBeatsItc) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto c = fixture::duplicate_case(seed);
    for (std::size_t i = 0; i < c.batch.size(); ++i) {
      const auto q = soft_targets(c.batch[i].text, c.negatives, c.tau);
      EXPECT_NEAR(q[0], q[1 + c.duplicate_row[i]], 1e-9);
    }
    EXPECT_LT(loss_so_pre(c.batch, c.negatives, c.tau, 0.5), loss_so_itc(c.batch, c.negatives, c.tau)) << seed;
  }
}

TEST(ProjectionHeads, OutputsUnitRowsAndTauClamp) {
  ProjectionHeads h(4, 6, 3, 0.07, 1);
  ten::Rng rng(27);
  const Mat v = h.visual(rng.normal_mat(5, 4, 1.0)), t = h.text(rng.normal_mat(5, 6, 1.0));
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(ten::norm2(v.row_span(i)), 1.0, 1e-12);
    EXPECT_NEAR(ten::norm2(t.row_span(i)), 1.0, 1e-12);
  }
  EXPECT_NEAR(h.tau(), 0.07, 1e-15);
  h.log_tau.value[0] = 5.0;
  h.clamp_tau();
  EXPECT_NEAR(h.tau(), 1.0, 1e-12);
  h.log_tau.value[0] = -50.0;
  h.clamp_tau();
  EXPECT_NEAR(h.tau(), 0.01, 1e-12);
  EXPECT_THROW(ProjectionHeads(4, 6, 3, 2.0, 1), ParameterError);
}

TEST(Queue, FillThenEvictMostRedundant) {
  DiversityQueue q(1, 2);
  EXPECT_TRUE(q.offer({0, e(0), 0}));
  EXPECT_TRUE(q.offer({0, e(0), 1}));  // score 1: overlaps the first entry
  EXPECT_EQ(q.entries(0)[1].score, 1.0);
  // Score 0 < max 1: the second entry goes and the candidate is appended.
  EXPECT_TRUE(q.offer({0, e(1), 2}));
  ASSERT_EQ(q.entries(0).size(), 2u);
  EXPECT_EQ(q.entries(0)[0].subject, 0u);
  EXPECT_EQ(q.entries(0)[1].subject, 2u);
  // Score 1 is not below the current max 0: rejected.
  EXPECT_FALSE(q.offer({0, e(0), 3}));
  // Equal scores are rejected too.
  EXPECT_FALSE(q.offer({0, e(2), 4}));
  EXPECT_EQ(q.total_size(), 2u);
  EXPECT_THROW(q.offer({1, e(0), 0}), ParameterError);
  EXPECT_THROW(DiversityQueue(1, 0), ParameterError);
}

TEST(Queue, FifoEvictsOldest) {
  DiversityQueue q(2, 2, QueuePolicy::Fifo);
  for (std::size_t s = 0; s < 4; ++s) q.offer({1, e(s % 3), s});
  ASSERT_EQ(q.entries(1).size(), 2u);
  EXPECT_EQ(q.entries(1)[0].subject, 2u);
  EXPECT_EQ(q.entries(1)[1].subject, 3u);
  EXPECT_TRUE(q.entries(0).empty());
}

TEST(Queue, SnapshotIsStructureMajor) {
  DiversityQueue q(3, 4);
  q.offer({2, e(2), 0});
  q.offer({0, e(0), 1});
  q.offer({1, e(1), 2});
  EXPECT_EQ(q.snapshot(3), Mat::identity(3));
  EXPECT_THROW(q.snapshot(4), ShapeError);
}

TEST(Queue, MatchesSimulatorOverRandomStream) {
  ten::Rng rng(28);
  const std::size_t ns = 3, cap = 5, d = 4;
  DiversityQueue q(ns, cap);
  oracle::QueueSimulator sim(ns, cap);
  for (int step = 0; step < 200; ++step) {
    const std::size_t s = rng.below(ns), subject = rng.below(40);
    const auto tok = test::random_unit_rows(rng, 1, d).row_vec(0);
    q.offer({s, tok, subject});
    sim.offer(s, tok, subject);
    for (std::size_t k = 0; k < ns; ++k) {
      ASSERT_EQ(q.entries(k).size(), sim.list(k).size());
      for (std::size_t i = 0; i < sim.list(k).size(); ++i) {
        EXPECT_EQ(q.entries(k)[i].token, sim.list(k)[i].token);
        EXPECT_EQ(q.entries(k)[i].subject, sim.list(k)[i].subject);
        EXPECT_EQ(q.entries(k)[i].score, sim.list(k)[i].score);
      }
    }
  }
}

TEST(Queue, CheckpointRoundTrip) {
  ten::Rng rng(29);
  DiversityQueue q(2, 3);
  for (int i = 0; i < 10; ++i) q.offer({rng.below(2), test::random_unit_rows(rng, 1, 3).row_vec(0), static_cast<std::size_t>(i), {1.0, 2.0}});
  ten::ArrayTable t;
  q.save_to(t);
  const auto back = DiversityQueue::load_from(ten::ArrayTable::deserialize(t.serialize()));
  EXPECT_EQ(back.snapshot(3), q.snapshot(3));
  EXPECT_EQ(back.sources(2), q.sources(2));
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < q.entries(s).size(); ++i) {
      EXPECT_EQ(back.entries(s)[i].score, q.entries(s)[i].score);
      EXPECT_EQ(back.entries(s)[i].subject, q.entries(s)[i].subject);
    }
  EXPECT_EQ(back.policy(), QueuePolicy::Diversity);
  EXPECT_THROW(parse_queue_policy("lifo"), ConfigError);
}

TEST(GradCheck, ItcKlPre) {
  fixture::TinyAlign f;
  EXPECT_LE(f.grad_error({0.2, true, false}), 1e-3);
  EXPECT_LE(f.grad_error({0.2, false, true}), 1e-3);
  EXPECT_LE(f.grad_error({0.5, true, true}), 1e-3);
}

}  // namespace
