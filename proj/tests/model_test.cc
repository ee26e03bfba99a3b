#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mcsearch/model.h"
#include "mcsearch/training.h"
#include "synthetic.h"

namespace mcsearch {
namespace {

class ModelTest : public ::testing::Test {
 protected:
  ModelTest()
      : vocab_(Vocabulary::train(testing::toy_mlm_texts(100, 1), 300, 1)),
        model_(EncoderConfig::toy(vocab_.size(), 7)) {}

  EncodedSequence pair(std::string_view q, std::string_view c) const {
    return encode_pair(q, c, vocab_, model_.config().max_len);
  }

  Vocabulary vocab_;
  EncoderModel model_;
};

TEST(EncoderConfig, DefaultsAndValidation) {
  EncoderConfig c;
  EXPECT_EQ(c.layers, 2u);
  EXPECT_EQ(c.heads, 4u);
  EXPECT_EQ(c.hidden, 128u);
  EXPECT_EQ(c.ffn, 512u);
  EXPECT_EQ(c.max_len, 256u);
  EXPECT_DOUBLE_EQ(c.dropout, 0.1);
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = EncoderConfig{};
  c.ffn = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST_F(ModelTest, TensorShapesMatchConfig) {
  const auto& cfg = model_.config();
  EXPECT_EQ(model_.tensor("embeddings.token").rows, cfg.vocab_size);
  EXPECT_EQ(model_.tensor("embeddings.position").rows, cfg.max_len);
  EXPECT_EQ(model_.tensor("layer1.ffn.w1").cols, cfg.ffn);
  EXPECT_EQ(model_.tensor("mlm_head.weight").cols, cfg.vocab_size);
  EXPECT_EQ(model_.tensor("cls_head.weight").rows, cfg.hidden);
  std::size_t total = 0;
  for (const auto& t : model_.tensors()) total += t.size();
  EXPECT_EQ(total, model_.parameter_count());
  EXPECT_LT(model_.parameter_count(), kGradCheckParameterLimit);
  EXPECT_THROW(model_.tensor("no.such.tensor"), Error);
}

TEST_F(ModelTest, ForwardIsFiniteAndDeterministic) {
  auto seq = pair("", "");
  auto a = model_.forward(seq);
  EXPECT_TRUE(a.cls.allFinite());
  EncoderModel twin(model_.config());
  EXPECT_EQ(twin.forward(seq).cls, a.cls);
  std::vector<EncodedSequence> batch = {pair("get user", "set id"),
                                        pair("get user", "set id")};
  auto out = model_.forward(batch);
  EXPECT_EQ(out[0].hidden, out[1].hidden);
}

TEST_F(ModelTest, PaddedPositionsDoNotInfluenceContent) {
  auto seq = pair("get user name", "open file");
  auto base = model_.forward(seq);
  auto altered = seq;
  for (std::size_t i = seq.content_length(); i < seq.size(); ++i)
    altered.ids[i] = static_cast<TokenId>(kFirstByteId + (i * 7) % 200);
  auto other = model_.forward(altered);
  const auto n = static_cast<Eigen::Index>(seq.content_length());
  EXPECT_EQ(base.cls, other.cls);
  EXPECT_EQ(base.hidden.topRows(n), other.hidden.topRows(n));
}

TEST_F(ModelTest, AttentionRowsSumToOneOverAttendedKeys) {
  auto seq = pair("get user", "read file close");
  auto out = model_.forward(seq, true);
  ASSERT_EQ(out.attention.size(), model_.config().layers);
  for (const auto& layer : out.attention)
    for (const auto& p : layer)
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-6);
        for (Eigen::Index j = 0; j < p.cols(); ++j)
          if (!seq.attention_mask[j]) EXPECT_EQ(p(i, j), 0.0);
      }
}

TEST_F(ModelTest, ZeroClassificationHeadScoresOneHalf) {
  auto& w = model_.tensor("cls_head.weight");
  auto& b = model_.tensor("cls_head.bias");
  model_.view(w).setZero();
  model_.view(b).setZero();
  CrossEncoderScorer scorer(model_, vocab_);
  EXPECT_EQ(scorer.score("get user", "func get() {}"), 0.5);
}

TEST_F(ModelTest, ScoreIsIndependentOfBatchContext) {
  CrossEncoderScorer scorer(model_, vocab_);
  std::vector<std::string> codes = {"open file", "read item list",
                                    "close user id name"};
  auto batch = scorer.score_codes("get user", codes);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    EXPECT_EQ(batch[i], scorer.score("get user", codes[i]));
    EXPECT_GT(batch[i], 0.0);
    EXPECT_LT(batch[i], 1.0);
  }
}

TEST_F(ModelTest, ScoreIgnoresPaddingLength) {
  // Scoring trims to the content, so the padded forward pass and the
  // scorer agree on the logit.
  auto seq = pair("get user", "open file");
  auto full = model_.forward(seq);
  double logit = full.cls.dot(
      model_.view(model_.tensor("cls_head.weight")).col(0)) +
      model_.parameters()[model_.tensor("cls_head.bias").offset];
  EXPECT_NEAR(model_.classification_logit(seq), logit, 1e-12);
}

TEST_F(ModelTest, CheckpointRoundTrip) {
  std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
  model_.save(buf, ArtifactHeader{"abc", 3});
  auto back = EncoderModel::load(buf);
  EXPECT_EQ(back.config(), model_.config());
  EXPECT_TRUE(std::equal(back.parameters().begin(), back.parameters().end(),
                         model_.parameters().begin()));
  std::string truncated = buf.str();
  truncated.resize(truncated.size() - 9);
  std::istringstream bad(truncated);
  EXPECT_THROW(EncoderModel::load(bad), Error);
}

TEST_F(ModelTest, MlmLossOnlyReadsMaskedPositions) {
  auto seq = pair("get user name", "open file");
  TrainingExample ex{seq, {{2, seq.ids[2]}}, std::nullopt};
  std::vector<TrainingExample> batch = {ex};
  std::vector<double> grad;
  model_.loss(batch, &grad);
  const auto& w = model_.tensor("cls_head.weight");
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(grad[w.offset + i], 0.0);

  TrainingExample none{seq, {}, std::nullopt};
  std::vector<TrainingExample> empty = {none};
  auto loss = model_.loss(empty, &grad);
  EXPECT_EQ(loss.total(), 0.0);
  const auto& head = model_.tensor("mlm_head.weight");
  for (std::size_t i = 0; i < head.size(); ++i)
    EXPECT_EQ(grad[head.offset + i], 0.0);
}

TEST_F(ModelTest, InitialMlmLossIsNearUniform) {
  SplitMix64 rng(2);
  std::vector<TrainingExample> batch;
  for (const auto& text : testing::toy_mlm_texts(32, 9)) {
    auto ex = mask_for_mlm(pair(text, ""), 0.15, vocab_.size(), rng);
    ASSERT_TRUE(ex);
    batch.push_back(*ex);
  }
  auto loss = model_.loss(batch, nullptr);
  EXPECT_NEAR(loss.mlm, std::log(static_cast<double>(vocab_.size())),
              0.2 * std::log(static_cast<double>(vocab_.size())));
}

TEST_F(ModelTest, RejectsBadInput) {
  auto seq = pair("a", "b");
  seq.ids[1] = static_cast<TokenId>(model_.config().vocab_size);
  EXPECT_THROW(model_.forward(seq), Error);
  auto longer = encode_pair("a", "b", vocab_, model_.config().max_len + 1);
  EXPECT_THROW(model_.forward(longer), Error);
}

TEST_F(ModelTest, GradientCheckToyConfig) {
  SplitMix64 rng(4);
  std::vector<TrainingExample> batch;
  auto texts = testing::toy_mlm_texts(4, 5);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto ex = mask_for_mlm(pair(texts[i], texts[(i + 1) % 4]), 0.15,
                           vocab_.size(), rng);
    ex->label = static_cast<int>(i % 2);
    batch.push_back(*ex);
  }
  testing::jitter_parameters(model_, 0.3, 8);
  auto result = grad_check(model_, batch, {256, 1e-4, 3});
  EXPECT_GE(result.checked, 200u);
  EXPECT_TRUE(result.passed(1e-3))
      << result.max_relative_error << " at " << result.worst_tensor << "["
      << result.worst_index << "] analytic " << result.worst_analytic
      << " numeric " << result.worst_numeric;
}

TEST(GradCheck, RefusesLargeModels) {
  EncoderConfig big;
  EncoderModel model(big);
  EXPECT_THROW(grad_check(model, {}), Error);
}

}  // namespace
}  // namespace mcsearch
