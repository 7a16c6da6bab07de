#include <set>

#include "test_util.hpp"

using namespace cm2;

namespace {

void zero_all(Mlp& m) {
  m.for_each_param([](Parameter& p) { std::fill(p.value.data().begin(), p.value.data().end(), 0.0); });
}

std::vector<double> apply_act(Activation a, std::vector<double> v) {
  for (double& x : v) x = a == Activation::tanh ? std::tanh(x) : (a == Activation::relu ? std::max(0.0, x) : x);
  return v;
}

/// x W + b for a single row, by loops.
std::vector<double> dense_row(const Dense& d, const std::vector<double>& x) {
  const Tensor& w = d.weight.value;
  std::vector<double> out(w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double s = d.bias.value[j];
    for (std::size_t i = 0; i < w.rows(); ++i) s += x[i] * w.at(i, j);
    out[j] = s;
  }
  return out;
}

std::vector<double> mlp_row(const Mlp& m, const std::vector<double>& x) {
  return dense_row(m.second, apply_act(m.activation, dense_row(m.first, x)));
}

}  // namespace

TEST(Encoder, ZeroWeightsGiveZeroFeatures) {
  std::mt19937_64 gen(1);
  EncoderStage s = init_stage(0, StageDims::from(ModelConfig::desk(), 8), 1);
  zero_all(s.encoder.mlp);
  Tape t;
  const Tensor f = s.encoder.encode(t, t.constant(testutil::random({3, 4, 8}, gen))).value();
  EXPECT_EQ(f, Tensor::zeros({3, 64}));
}

TEST(Encoder, SingleFrameEqualsPlainMlp) {
  std::mt19937_64 gen(2);
  ModelConfig m = testutil::small_model();
  m.frames = 1;
  EncoderStage s = init_stage(0, StageDims::from(m, 5), 2);
  const Tensor x = testutil::random({3, 1, 5}, gen);
  Tape t;
  const Tensor f = s.encoder.encode(t, t.constant(x)).value();
  const Tensor direct = s.encoder.mlp.forward(t, t.constant(x.reshaped({3, 5}))).value();
  EXPECT_EQ(f, direct);
}

TEST(Encoder, MatchesPerFrameLoopOracle) {
  std::mt19937_64 gen(3);
  ModelConfig m = testutil::small_model();
  EncoderStage s = init_stage(0, StageDims::from(m, 5), 3);
  s.encoder.for_each_param([&gen](Parameter& p) {
    for (double& v : p.value.data()) v = std::uniform_real_distribution<double>(-1, 1)(gen);
  });
  const Tensor x = testutil::random({2, 4, 5}, gen);
  Tape t;
  const Tensor f = s.encoder.encode(t, t.constant(x)).value();
  ASSERT_EQ(f.shape(), (Shape{2, m.feature_dim}));
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> acc(m.feature_dim, 0.0);
    for (std::size_t fr = 0; fr < 4; ++fr) {
      std::vector<double> row(5);
      for (std::size_t j = 0; j < 5; ++j) row[j] = x[(b * 4 + fr) * 5 + j];
      const auto y = mlp_row(s.encoder.mlp, row);
      for (std::size_t j = 0; j < y.size(); ++j) acc[j] += y[j] / 4.0;
    }
    for (std::size_t j = 0; j < acc.size(); ++j) EXPECT_NEAR(f.at(b, j), acc[j], 1e-12);
  }
}

TEST(Encoder, RejectsWrongInputShape) {
  EncoderStage s = init_stage(0, StageDims::from(ModelConfig::desk(), 8), 1);
  Tape t;
  EXPECT_THROW(s.encoder.encode(t, t.constant(Tensor({2, 4, 7}))), DimensionError);
  EXPECT_THROW(s.encoder.encode(t, t.constant(Tensor({2, 3, 8}))), DimensionError);
  EXPECT_THROW(s.head.project(t, t.constant(Tensor({2, 63}))), DimensionError);
}

TEST(Encoder, ParameterNamesArePrefixed) {
  EncoderStage s = init_stage(2, StageDims::from(ModelConfig::desk(), 8), 1);
  s.encoder.for_each_param([](const Parameter& p) { EXPECT_TRUE(p.name.starts_with("encoder/2/")) << p.name; });
  s.head.for_each_param([](const Parameter& p) { EXPECT_TRUE(p.name.starts_with("head/2/")) << p.name; });
}

TEST(Encoder, OutputShapeDependsOnlyOnInputShape) {
  std::mt19937_64 gen(4);
  ModelConfig m = testutil::small_model();
  for (std::uint64_t seed : {1u, 2u}) {
    EncoderStage s = init_stage(0, StageDims::from(m, 6), seed);
    for (std::size_t b : {2u, 5u}) {
      Tape t;
      EXPECT_EQ(s.embed(t, t.constant(testutil::random({b, m.frames, 6}, gen))).shape(), (Shape{b, m.unified_dim}));
    }
  }
}

TEST(ProjectionHead, IdentityLayersGiveTanhOfInput) {
  std::mt19937_64 gen(5);
  Mlp mlp{Dense{Parameter("a/w", Tensor::identity(4)), Parameter("a/b", Tensor::zeros({1, 4}))},
          Dense{Parameter("b/w", Tensor::identity(4)), Parameter("b/b", Tensor::zeros({1, 4}))}, Activation::tanh};
  ProjectionHead head{mlp};
  const Tensor x = testutil::random({3, 4}, gen, -2, 2);
  Tape t;
  const Tensor y = head.project(t, t.constant(x)).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], std::tanh(x[i]), 1e-12);
}

TEST(ProjectionHead, ZeroInputZeroBiasGivesZero) {
  ProjectionHead head = init_text_head(ModelConfig::desk(), 3);
  Tape t;
  EXPECT_EQ(head.project(t, t.constant(Tensor::zeros({2, 64}))).value(), Tensor::zeros({2, 16}));
}

TEST(ProjectionHead, GradientThroughProjectAndEncode) {
  std::mt19937_64 gen(6);
  ModelConfig m = testutil::small_model();
  m.frames = 2;
  EncoderStage s = init_stage(0, StageDims::from(m, 3), 6);
  const Tensor x = testutil::random({3, 2, 3}, gen);
  const Tensor w = testutil::random({3, m.unified_dim}, gen);
  std::vector<Parameter*> ps;
  s.for_each_param([&ps](Parameter& p) { ps.push_back(&p); });
  auto f = [&](Tape& t) { return sum(mul(s.embed(t, t.constant(x)), t.constant(w))); };
  EXPECT_LE(grad_check(f, ps).max_rel_error(), 1e-4);
}

TEST(MappingHead, ZeroHeadGivesZero) {
  MappingHead h = init_mapping_head(0, 1, 5, 7, testutil::small_model(), 1);
  zero_all(h.mlp);
  std::mt19937_64 gen(7);
  Tape t;
  EXPECT_EQ(h.map_features(t, t.constant(testutil::random({3, 5}, gen))).value(), Tensor::zeros({3, 7}));
}

TEST(MappingHead, LinearHeadIsMatmul) {
  ModelConfig m = testutil::small_model();
  m.head_activation = Activation::identity;
  MappingHead h = init_mapping_head(0, 1, 5, 7, m, 1);
  std::mt19937_64 gen(8);
  const Tensor f = testutil::random({3, 5}, gen);
  const Tensor w = kernels::matmul(h.mlp.first.weight.value, h.mlp.second.weight.value);
  Tape t;
  const Tensor got = h.map_features(t, t.constant(f)).value();
  const auto want = oracle::matmul(testutil::to_rows(f), testutil::to_rows(w));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(got.at(i, j), want[i][j], 1e-12);
}

TEST(MappingHead, RejectsSourceThatRequiresGrad) {
  MappingHead h = init_mapping_head(0, 1, 5, 7, testutil::small_model(), 1);
  Tape t;
  EXPECT_THROW(h.map_features(t, t.leaf(Tensor({2, 5}))), TapeError);
  EXPECT_THROW(h.map_features(t, t.constant(Tensor({2, 4}))), DimensionError);
}

TEST(MappingHead, PromptLossLeavesSourceEncoderUntouched) {
  std::mt19937_64 gen(9);
  ModelConfig m = testutil::small_model();
  EncoderStage src = init_stage(0, StageDims::from(m, 4), 1);
  src.set_frozen(true);
  EncoderStage tgt = init_stage(1, StageDims::from(m, 4), 1);
  MappingHead h = init_mapping_head(0, 1, m.feature_dim, m.feature_dim, m, 1);
  const Tensor x0 = testutil::random({4, m.frames, 4}, gen);
  const Tensor x1 = testutil::random({4, m.frames, 4}, gen);
  const std::uint64_t before = parameter_fingerprint(src);
  Tape t;
  Var fs = t.constant(src.encoder.encode(t, t.constant(x0)).value());
  Var loss = prompt_loss({h.map_features(t, fs)}, tgt.encoder.encode(t, t.constant(x1)), {1.0}, 1.0);
  t.backward(loss);
  src.for_each_param([](const Parameter& p) { EXPECT_EQ(p.grad, Tensor::zeros(p.value.shape())) << p.name; });
  EXPECT_EQ(parameter_fingerprint(src), before);
  double head_grad = 0;
  h.for_each_param([&](const Parameter& p) {
    for (double g : p.grad.data()) head_grad += std::abs(g);
  });
  EXPECT_GT(head_grad, 0.0);
}

TEST(TextEmbedder, DeterministicUnitNorm) {
  FrozenTextEmbedder te{default_class_names(20), "A video of a driver ", 64, 0};
  const Tensor a = te.embed("eating");
  EXPECT_EQ(a, te.embed("eating"));
  double n = 0;
  for (double v : a.data()) n += v * v;
  EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
  EXPECT_THROW(te.embed("juggling"), ConfigError);
}

TEST(TextEmbedder, DistinctLabelsAreDistinct) {
  FrozenTextEmbedder te{default_class_names(20), "A video of a driver ", 64, 0};
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t j = i + 1; j < 20; ++j) {
      const double c = oracle::cosine(te.embed(te.vocabulary[i]).values(), te.embed(te.vocabulary[j]).values());
      EXPECT_GT(c, -0.99);
      EXPECT_LT(c, 0.99);
    }
  }
}

TEST(TextEmbedder, PrefixIsPartOfTheKey) {
  FrozenTextEmbedder te{{"eating"}, "A video of a driver ", 64, 0};
  const Tensor a = te.embed("eating");
  FrozenTextEmbedder other{{"eating"}, "A clip of ", 64, 0};
  EXPECT_NE(a, other.embed("eating"));
  const Tensor m = te.matrix();
  for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(m.at(0, j), a[j]);
}

TEST(InitStage, SeedDeterminism) {
  const StageDims d = StageDims::from(ModelConfig::desk(), 32);
  EXPECT_EQ(parameter_fingerprint(init_stage(0, d, 5)), parameter_fingerprint(init_stage(0, d, 5)));
  EXPECT_NE(parameter_fingerprint(init_stage(0, d, 5)), parameter_fingerprint(init_stage(0, d, 6)));
  EXPECT_NE(parameter_fingerprint(init_stage(0, d, 5)), parameter_fingerprint(init_stage(1, d, 5)));
}

TEST(InitStage, ParameterCountMatchesFormula) {
  for (const ModelConfig& m : {ModelConfig::desk(), ModelConfig::paper(), testutil::small_model()}) {
    const StageDims d = StageDims::from(m, 32);
    std::size_t n = 0;
    init_stage(0, d, 1).for_each_param([&n](const Parameter& p) { n += p.value.size(); });
    const std::size_t formula = (32 + 1) * m.encoder_hidden + (m.encoder_hidden + 1) * m.feature_dim +
                                (m.feature_dim + 1) * m.head_hidden + (m.head_hidden + 1) * m.unified_dim;
    EXPECT_EQ(n, formula);
    EXPECT_EQ(d.parameter_count(), formula);
  }
}

TEST(InitStage, GlorotBoundAndZeroBias) {
  const EncoderStage s = init_stage(0, StageDims::from(ModelConfig::desk(), 32), 1);
  s.for_each_param([](const Parameter& p) {
    if (p.name.ends_with("bias")) {
      EXPECT_EQ(p.value, Tensor::zeros(p.value.shape()));
    } else {
      const double bound = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
      for (double v : p.value.data()) EXPECT_LE(std::abs(v), bound);
    }
  });
}

TEST(ContinualState, PromptSourcesArePreviousStages) {
  ContinualState st = make_state(ModelConfig::desk(), {2, 0, 1}, {{0, 8}, {1, 8}, {2, 8}}, {"a", "b"}, 1);
  EXPECT_TRUE(st.prompt_sources(0).empty());
  EXPECT_EQ(st.prompt_sources(2), (std::vector<int>{2, 0}));
  EXPECT_THROW(st.prompt_sources(4), ConfigError);
  EXPECT_THROW(st.stage_for(0), ConfigError);
  EXPECT_THROW(make_state(ModelConfig::desk(), {}, {}, {"a"}, 1), ConfigError);
}
