#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "socl/decoder/model.hpp"
#include "socl/decoder/vocab.hpp"
#include "support.hpp"

namespace {

using namespace socl;
using namespace socl::decoder;
using ten::Mat;

TEST(Vocab, ReservedIdsAndRoundTrip) {
  const auto v = Vocab::build({"No effusion. Heart normal.", "Heart enlarged."});
  EXPECT_EQ(v.token(Vocab::kPad), "<pad>");
  EXPECT_EQ(v.token(Vocab::kBos), "<bos>");
  EXPECT_EQ(v.token(Vocab::kEos), "<eos>");
  EXPECT_EQ(v.token(Vocab::kUnk), "<unk>");
  const auto ids = v.encode("Heart normal.");
  EXPECT_EQ(ids.front(), Vocab::kBos);
  EXPECT_EQ(ids.back(), Vocab::kEos);
  EXPECT_EQ(v.decode(ids), "Heart normal.");
  EXPECT_EQ(v.encode("spleen")[1], Vocab::kUnk);
  EXPECT_THROW(v.token(100), ParameterError);
  ten::ArrayTable t;
  v.save_to(t);
  EXPECT_EQ(Vocab::load_from(t).tokens(), v.tokens());
  EXPECT_THROW(Vocab::load_from(ten::ArrayTable{}), FormatError);
}

TEST(Vocab, DetokenizeInvertsWordTokens) {
  const std::string s = "The lungs are clear. There is a small nodule in the left lung.";
  EXPECT_EQ(detokenize(word_tokens(s)), s);
}

decoder::VisualInput tiny_visual(ten::Rng& rng) { return {rng.normal_mat(3, 8, 1.0), rng.normal_mat(6, 8, 1.0)}; }

// With zero head weights every position predicts uniformly, so each of the
// |y| - 1 scored positions costs log|V|.
TEST(LossRg, UniformLogitsGiveLogVocab) {
  DecoderModel m(fixture::tiny_decoder_dims(), 1);
  m.head.weight.value.fill(0.0);
  ten::Rng rng(2);
  const auto vis = tiny_visual(rng);
  ten::Tape t(false);
  EXPECT_NEAR(m.loss_rg(t, vis, {1, 4, 5, 2}).item(), 3.0 * std::log(9.0), 1e-12);
}

// Independent chain-rule oracle: sum of -log softmax(prefix logits)[next].
TEST(LossRg, EqualsPrefixChainRule) {
  DecoderModel m(fixture::tiny_decoder_dims(), 3);
  ten::Rng rng(4);
  const auto vis = tiny_visual(rng);
  const std::vector<TokenId> y{1, 5, 6, 7, 4, 2};
  double expected = 0.0;
  for (std::size_t k = 1; k < y.size(); ++k) {
    ten::Tape t(false);
    const Mat lg = m.logits(t, {&vis}, {std::vector<TokenId>(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(k))}).value();
    auto row = lg.row_vec(k - 1);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - mx);
    expected -= row[static_cast<std::size_t>(y[k])] - mx - std::log(z);
  }
  ten::Tape t(false);
  EXPECT_NEAR(m.loss_rg(t, vis, y).item(), expected, 1e-10);
}

TEST(LossRg, BatchIsMeanOfSequencesAndPadIsMasked) {
  fixture::TinyDecoder f;
  ten::Tape t(false);
  const double batch = f.batch_loss(t).item();
  const double a = f.model.loss_rg(t, f.visual[0], f.targets[0]).item();
  const double b = f.model.loss_rg(t, f.visual[1], f.targets[1]).item();
  EXPECT_NEAR(batch, 0.5 * (a + b), 1e-10);
  const auto pl = f.model.position_losses(t, f.visual[1], f.targets[1]).value();
  EXPECT_EQ(pl(1, 0), 0.0);  // target token 0 is padding
  EXPECT_GT(pl(0, 0), 0.0);
}

TEST(Decoder, CausalPrefixLogitsIgnoreLaterTokens) {
  DecoderModel m(fixture::tiny_decoder_dims(), 5);
  ten::Rng rng(6);
  const auto vis = tiny_visual(rng);
  ten::Tape t(false);
  const Mat a = m.logits(t, {&vis}, {{1, 4, 5, 6}}).value();
  const Mat b = m.logits(t, {&vis}, {{1, 4, 7, 8}}).value();
  for (std::size_t c = 0; c < a.cols(); ++c) {
    EXPECT_EQ(a(0, c), b(0, c));
    EXPECT_EQ(a(1, c), b(1, c));
  }
}

TEST(Decoder, BatchingDoesNotMixSequences) {
  DecoderModel m(fixture::tiny_decoder_dims(), 7);
  ten::Rng rng(8);
  const auto v1 = tiny_visual(rng), v2 = tiny_visual(rng);
  ten::Tape t(false);
  const Mat both = m.logits(t, {&v1, &v2}, {{1, 4, 5}, {1, 6}}).value();
  const Mat one = m.logits(t, {&v2}, {{1, 6}}).value();
  for (std::size_t c = 0; c < one.cols(); ++c) {
    EXPECT_NEAR(both(3, c), one(0, c), 1e-12);
    EXPECT_NEAR(both(4, c), one(1, c), 1e-12);
  }
}

TEST(Decoder, GenerationStopsAtEosAndIsDeterministic) {
  DecoderModel m(fixture::tiny_decoder_dims(), 9);
  // Bias the head so EOS always wins.
  m.head.bias.value.fill(0.0);
  m.head.bias.value[Vocab::kEos] = 100.0;
  ten::Rng rng(10);
  const auto vis = tiny_visual(rng);
  EXPECT_EQ(m.generate(vis, {8, Vocab::kEos}), (std::vector<TokenId>{Vocab::kBos, Vocab::kEos}));

  DecoderModel free(fixture::tiny_decoder_dims(), 11);
  const auto g1 = free.generate(vis, {8, Vocab::kEos});
  const auto g2 = free.generate(vis, {8, Vocab::kEos});
  EXPECT_EQ(g1, g2);
  EXPECT_LE(g1.size(), 8u);
  EXPECT_EQ(free.generate_batch({&vis, &vis}, {8, Vocab::kEos})[1], g1);
}

TEST(Decoder, MemoryLengthFollowsInputs) {
  DecoderModel m(fixture::tiny_decoder_dims(), 12);
  ten::Rng rng(13);
  const auto full = tiny_visual(rng);
  ten::Tape t(false);
  EXPECT_EQ(m.memory(t, full).rows(), 9u);  // N^s (1 + K)
  EXPECT_EQ(m.memory(t, {full.sv, Mat()}).rows(), 3u);
  EXPECT_EQ(m.memory(t, {Mat(), full.ts}).rows(), 6u);
  EXPECT_THROW(m.memory(t, {Mat(), Mat()}), ParameterError);
  EXPECT_THROW(m.memory(t, {Mat(4, 8), Mat()}), ShapeError);
}

TEST(Decoder, RejectsMalformedTargets) {
  fixture::TinyDecoder f;
  ten::Tape t(false);
  EXPECT_THROW(f.model.loss_rg(t, f.visual[0], {1}), ParameterError);
  EXPECT_THROW(f.model.loss_rg(t, f.visual[0], {4, 2}), ParameterError);
  EXPECT_THROW(f.model.loss_rg(t, f.visual[0], {1, 4}), ParameterError);
  EXPECT_THROW(f.model.loss_rg(t, f.visual[0], {1, 42, 2}), ParameterError);
  EXPECT_THROW(f.model.loss_rg(t, f.visual[0], {1, 4, 4, 4, 4, 4, 4, 4, 2}), ParameterError);
  EXPECT_THROW(DecoderModel({.vocab = 9, .width = 8, .heads = 3}, 0), ParameterError);
}

TEST(Decoder, CheckpointRoundTrip) {
  fixture::TinyDecoder f;
  ten::ArrayTable t;
  f.model.save_to(t);
  auto back = DecoderModel::load_from(ten::ArrayTable::deserialize(t.serialize()));
  ten::Tape a(false), b(false);
  EXPECT_EQ(back.batch_loss(a, {&f.visual[0], &f.visual[1]}, f.targets).item(), f.batch_loss(b).item());
}

TEST(GradCheck, LossRg) {
  fixture::TinyDecoder f;
  EXPECT_LE(f.grad_error(), 1e-3);
  EXPECT_LE(f.key_bias_grad(), 1e-8);
}

}  // namespace
