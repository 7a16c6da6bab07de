#include <sstream>

#include "test_util.hpp"

using namespace cm2;

namespace {

struct Fixture {
  SyntheticDataset data;
  ContinualState state;
};

const Fixture& trained() {
  static const Fixture f = [] {
    Fixture x{generate(testutil::small_data()), {}};
    const TrainConfig cfg = testutil::small_train();
    x.state = make_state(testutil::small_model(), cfg.modality_order, x.data.obs_dims(), x.data.class_names, cfg.seed);
    for (std::size_t k = 0; k < 2; ++k) train_stage(x.state, x.data, cfg, k);
    return x;
  }();
  return f;
}

Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
  oracle::Matrix m;
  for (auto r : rows) m.emplace_back(r);
  return testutil::from_rows(m);
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

}  // namespace

TEST(Scores, BoundedAndDeterministic) {
  const auto& f = trained();
  const auto idx = f.data.indices(Split::test);
  const Tensor s = predict_unimodal(f.state, f.data, 0, idx);
  ASSERT_EQ(s.shape(), (Shape{idx.size(), 4}));
  for (double v : s.data()) {
    EXPECT_GE(v, -1.0 - 1e-12);
    EXPECT_LE(v, 1.0 + 1e-12);
  }
  EXPECT_EQ(predict_unimodal(f.state, f.data, 0, idx), s);
  EXPECT_EQ(predict_unimodal(f.state, f.data, 0, Split::test), s);
}

TEST(Scores, DuplicatedSampleGivesIdenticalRows) {
  const auto& f = trained();
  const Tensor s = predict_unimodal(f.state, f.data, 1, std::vector<std::size_t>{5, 9, 5});
  for (std::size_t j = 0; j < s.cols(); ++j) EXPECT_EQ(s.at(0, j), s.at(2, j));
}

TEST(Scores, ChunkingDoesNotChangeRows) {
  const auto& f = trained();
  std::vector<std::size_t> all(f.data.samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const Tensor whole = predict_unimodal(f.state, f.data, 0, all);
  for (std::size_t i : {std::size_t{0}, std::size_t{37}, all.size() - 1}) {
    const Tensor one = predict_unimodal(f.state, f.data, 0, std::vector<std::size_t>{i});
    for (std::size_t j = 0; j < one.cols(); ++j) EXPECT_EQ(one.at(0, j), whole.at(i, j));
  }
}

TEST(Scores, ArgmaxAgreesWithSoftmax) {
  const auto& f = trained();
  const Tensor s = predict_unimodal(f.state, f.data, 0, Split::val);
  const auto rows = testutil::to_rows(s);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto ls = oracle::naive_log_softmax(rows[r]);
    EXPECT_EQ(argmax_row(s, r), oracle::argmax(ls));
  }
}

TEST(Scores, PredictDoesNotTouchParameters) {
  Fixture f = trained();
  const std::uint64_t before = parameter_fingerprint(f.state.stages[0]);
  (void)predict_unimodal(f.state, f.data, 0, Split::test);
  EXPECT_EQ(parameter_fingerprint(f.state.stages[0]), before);
  EXPECT_THROW(predict_unimodal(f.state, f.data, 2, Split::test), ConfigError);
}

TEST(LateFuse, SingleMatrixIsIdentity) {
  const Tensor a = matrix({{0.1, -0.4}, {0.9, 0.3}});
  EXPECT_EQ(late_fuse({a}), a);
}

TEST(LateFuse, OppositeMatricesCancel) {
  const Tensor a = matrix({{0.1, -0.4}, {0.9, 0.3}});
  Tensor b = a;
  for (double& v : b.data()) v = -v;
  EXPECT_EQ(late_fuse({a, b}), Tensor::zeros({2, 2}));
}

TEST(LateFuse, CopiesAndLoopOracle) {
  std::mt19937_64 gen(4);
  const Tensor a = testutil::random({5, 3}, gen), b = testutil::random({5, 3}, gen), c = testutil::random({5, 3}, gen);
  const Tensor fused = late_fuse({a, b, c});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(fused.at(i, j), (a.at(i, j) + b.at(i, j) + c.at(i, j)) / 3.0, 1e-15);
  const Tensor k = late_fuse({a, a, a, a});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(k[i], a[i], 1e-15);
  const Tensor w = late_fuse({a, b}, {3.0, 1.0});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(w[i], 0.75 * a[i] + 0.25 * b[i], 1e-15);
}

TEST(LateFuse, Errors) {
  EXPECT_THROW(late_fuse({}), DimensionError);
  EXPECT_THROW(late_fuse({Tensor::zeros({2, 2}), Tensor::zeros({2, 3})}), DimensionError);
  EXPECT_THROW(late_fuse({Tensor::zeros({2, 2})}, {0.0}), ConfigError);
}

TEST(Metrics, NinetyTenExample) {
  // 90 samples of class 0 all right, 10 of class 1 all predicted as class 0
  Tensor scores({100, 2});
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < 100; ++i) {
    scores.at(i, 0) = 1.0;
    targets.push_back(i < 90 ? 0 : 1);
  }
  EXPECT_DOUBLE_EQ(top1(scores, targets), 0.9);
  EXPECT_DOUBLE_EQ(mean1(scores, targets), 0.5);
  const auto rec = per_class_recall(scores, targets);
  EXPECT_EQ(rec[0], 1.0);
  EXPECT_EQ(rec[1], 0.0);
  const auto cm = confusion_counts(scores, targets);
  EXPECT_EQ(cm[0][0], 90u);
  EXPECT_EQ(cm[1][0], 10u);
}

TEST(Metrics, AllRightAndAllWrong) {
  const Tensor right = matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
  const std::vector<std::size_t> t{0, 1, 2, 0};
  EXPECT_EQ(top1(right, t), 1.0);
  EXPECT_EQ(mean1(right, t), 1.0);
  const Tensor wrong = matrix({{0, 1, 0}, {0, 0, 1}, {1, 0, 0}, {0, 0, 1}});
  EXPECT_EQ(top1(wrong, t), 0.0);
  EXPECT_EQ(mean1(wrong, t), 0.0);
}

TEST(Metrics, Random50x10MatchesBruteForce) {
  std::mt19937_64 gen(50);
  const oracle::Matrix m = oracle::random_matrix(50, 10, gen);
  std::vector<std::size_t> t(50);
  for (auto& y : t) y = gen() % 10;
  EXPECT_EQ(top1(testutil::from_rows(m), t), oracle::brute_top1(m, t));
  EXPECT_EQ(mean1(testutil::from_rows(m), t), oracle::brute_mean1(m, t));
}

TEST(Metrics, TiesGoToLowestIndex) {
  const Tensor s = matrix({{0.5, 0.5, 0.1}});
  EXPECT_EQ(argmax_row(s, 0), 0u);
  EXPECT_EQ(top1(s, {0}), 1.0);
}

TEST(Metrics, AbsentClassesAreSkipped) {
  const Tensor s = matrix({{1, 0, 0}, {0, 0, 1}, {0, 0, 1}});
  const std::vector<std::size_t> t{0, 2, 0};
  EXPECT_FALSE(per_class_recall(s, t)[1].has_value());
  EXPECT_DOUBLE_EQ(mean1(s, t), (0.5 + 1.0) / 2.0);
}

TEST(Metrics, BruteForceOnRandomSets) {
  std::mt19937_64 gen(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t classes = 2 + gen() % 6, n = 1 + gen() % 40;
    // coarse values make ties common
    oracle::Matrix m(n, std::vector<double>(classes));
    for (auto& row : m)
      for (double& v : row) v = static_cast<double>(gen() % 4);
    std::vector<std::size_t> t(n);
    for (auto& y : t) y = gen() % classes;
    const Tensor s = testutil::from_rows(m);
    ASSERT_EQ(top1(s, t), oracle::brute_top1(m, t)) << trial;
    ASSERT_EQ(mean1(s, t), oracle::brute_mean1(m, t)) << trial;
  }
}

TEST(Metrics, BalancedSetsCoincide) {
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor s = testutil::random({30, 3}, gen);
    std::vector<std::size_t> t;
    for (std::size_t i = 0; i < 30; ++i) t.push_back(i % 3);
    EXPECT_NEAR(top1(s, t), mean1(s, t), 1e-15);
  }
}

TEST(Metrics, FusedPredictionInvariantToPositiveScaling) {
  std::mt19937_64 gen(9);
  const Tensor a = testutil::random({40, 5}, gen), b = testutil::random({40, 5}, gen);
  std::vector<std::size_t> t;
  for (std::size_t i = 0; i < 40; ++i) t.push_back(gen() % 5);
  auto scaled = [](Tensor x) {
    for (double& v : x.data()) v *= 3.7;
    return x;
  };
  const Tensor fused = late_fuse({a, b}), fused_scaled = late_fuse({scaled(a), scaled(b)});
  EXPECT_EQ(top1(fused, t), top1(fused_scaled, t));
  EXPECT_EQ(mean1(fused, t), mean1(fused_scaled, t));
}

TEST(Metrics, Errors) {
  EXPECT_THROW(top1(Tensor::zeros({2, 3}), {0}), DimensionError);
  EXPECT_THROW(mean1(Tensor::zeros({2, 3}), {}), DimensionError);
}

TEST(Export, RowsHeaderAndParseBack) {
  const auto& f = trained();
  const auto dir = testutil::scratch_dir();
  const auto idx = f.data.indices(Split::test);
  export_features(f.state, f.data, 0, dir / "a.csv", Split::test);
  const std::string text = read_file(dir / "a.csv");
  const auto lines = split_lines(text);
  ASSERT_EQ(lines.size(), idx.size() + 1);
  const std::size_t d = f.state.model.feature_dim;
  std::string header = "sample_id,label";
  for (std::size_t j = 0; j < d; ++j) header += ",f" + std::to_string(j);
  EXPECT_EQ(lines[0], header);

  const Tensor feats = extract_features(f.state.stage_for(0), f.data, idx);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto fields = split_fields(lines[r + 1]);
    ASSERT_EQ(fields.size(), d + 2);
    EXPECT_EQ(std::stoul(fields[0]), idx[r]);
    EXPECT_EQ(std::stoul(fields[1]), f.data.samples[idx[r]].label);
    for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(std::stod(fields[j + 2]), feats.at(r, j));
  }

  export_features(f.state, f.data, 0, dir / "b.csv", Split::test);
  EXPECT_EQ(read_file(dir / "b.csv"), text);
  export_features(f.state, f.data, 1, dir / "all.csv");
  EXPECT_EQ(split_lines(read_file(dir / "all.csv")).size(), f.data.samples.size() + 1);
}

TEST(Export, FeaturesMatchEncoderForward) {
  const auto& f = trained();
  const std::vector<std::size_t> idx{0, 3};
  const Tensor feats = extract_features(f.state.stage_for(0), f.data, idx);
  EncoderStage s = f.state.stage_for(0);
  Tape t;
  const Tensor live = s.encoder.encode(t, t.constant(f.data.batch(idx, 0))).value();
  EXPECT_EQ(feats, live);
}
