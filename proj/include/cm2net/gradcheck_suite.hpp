#pragma once

// Finite-difference check of every differentiable op and of the full staged
// objective on a tiny two-modality model.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cm2net/grad_check.hpp"
#include "cm2net/losses.hpp"
#include "cm2net/model.hpp"
#include "cm2net/rng.hpp"
#include "cm2net/trainer.hpp"

namespace cm2 {

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
};

inline constexpr double kGradCheckTolerance = 1e-4;

namespace detail {

/// Uniform in [lo, hi], re-drawn while |x| < gap so kinks stay out of reach of the step.
inline Tensor random_tensor(Shape shape, CounterRng& rng, double lo, double hi, double gap = 0.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    do {
      v = rng.uniform(lo, hi);
    } while (std::abs(v) < gap);
  }
  return t;
}

/// sum(x * w) with fixed random w, so every output element carries a distinct weight.
inline Var weighted_sum(Var x, CounterRng& rng) {
  return sum(mul(x, x.tape()->constant(random_tensor(x.shape(), rng, -1.0, 1.0))));
}

/// tanh whose backward forgets the chain-rule factor: the negative control.
inline Var faulty_tanh(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::tanh(v);
  return x.tape()->record("faulty_tanh", std::move(out), {x}, [](const BackwardArgs& a) {
    auto d = a.input_grads[0]->data();
    auto g = a.out_grad.data();
    auto y = a.out_value.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (1.0 - y[i]);
  });
}

using UnaryOp = std::function<Var(Var)>;

inline GradCheckCase check_unary(const std::string& name, Shape shape, double lo, double hi, const UnaryOp& op,
                                 std::uint64_t seed, double gap = 0.0) {
  CounterRng rng(derive_key(seed, {fnv1a64(name)}));
  Parameter x(name + "/x", random_tensor(std::move(shape), rng, lo, hi, gap));
  const std::uint64_t wkey = rng.next_u64();
  auto f = [&](Tape& t) {
    CounterRng wr(wkey);
    return weighted_sum(op(t.param(x)), wr);
  };
  return {name, grad_check(f, {&x})};
}

using BinaryOp = std::function<Var(Var, Var)>;

inline GradCheckCase check_binary(const std::string& name, Shape sa, Shape sb, const BinaryOp& op,
                                  std::uint64_t seed) {
  CounterRng rng(derive_key(seed, {fnv1a64(name)}));
  Parameter a(name + "/a", random_tensor(std::move(sa), rng, -10.0, 10.0));
  Parameter b(name + "/b", random_tensor(std::move(sb), rng, -10.0, 10.0));
  const std::uint64_t wkey = rng.next_u64();
  auto f = [&](Tape& t) {
    CounterRng wr(wkey);
    return weighted_sum(op(t.param(a), t.param(b)), wr);
  };
  return {name, grad_check(f, {&a, &b})};
}

struct ToyProblem {
  ModelConfig model;
  EncoderStage source;
  EncoderStage target;
  ProjectionHead text_head;
  MappingHead mapping;
  FrozenTextEmbedder text;
  Tensor batch0;
  Tensor batch1;
  std::vector<std::size_t> targets;
};

/// Two classes, batch of 4, two modalities with 3-d observations over 2 frames.
inline ToyProblem make_toy(std::uint64_t seed) {
  ToyProblem p;
  p.model.frames = 2;
  p.model.encoder_hidden = 5;
  p.model.feature_dim = 4;
  p.model.text_dim = 6;
  p.model.head_hidden = 5;
  p.model.unified_dim = 3;
  p.model.mapping_hidden = 4;
  const StageDims dims = StageDims::from(p.model, 3);
  p.source = init_stage(0, dims, seed);
  p.target = init_stage(1, dims, seed);
  p.text_head = init_text_head(p.model, seed);
  p.mapping = init_mapping_head(0, 1, 4, 4, p.model, seed);
  // non-zero biases so their gradients are exercised away from the init point
  CounterRng rng(derive_key(seed, {99}));
  auto jitter = [&rng](Parameter& q) {
    if (q.name.ends_with("/bias"))
      for (double& v : q.value.data()) v = rng.uniform(-0.5, 0.5);
  };
  p.source.for_each_param(jitter);
  p.target.for_each_param(jitter);
  p.text_head.for_each_param(jitter);
  p.mapping.for_each_param(jitter);
  p.text = FrozenTextEmbedder{{"eating", "drinking"}, p.model.text_prefix, p.model.text_dim, 0};
  p.batch0 = random_tensor({4, 2, 3}, rng, -2.0, 2.0);
  p.batch1 = random_tensor({4, 2, 3}, rng, -2.0, 2.0);
  p.targets = {0, 1, 1, 0};
  return p;
}

}  // namespace detail

/// Runs every case. `inject_fault` adds a case built on an op with a wrong
/// backward rule, which must fail.
inline std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 0, bool inject_fault = false) {
  using namespace detail;
  std::vector<GradCheckCase> out;
  const std::uint64_t s = seed;

  out.push_back(check_binary("matmul", {4, 5}, {5, 3}, [](Var a, Var b) { return matmul(a, b); }, s));
  out.push_back(check_unary("transpose", {3, 4}, -10, 10, [](Var x) { return transpose(x); }, s));
  out.push_back(check_binary("add", {3, 4}, {3, 4}, [](Var a, Var b) { return add(a, b); }, s));
  out.push_back(check_binary("sub", {3, 4}, {3, 4}, [](Var a, Var b) { return sub(a, b); }, s));
  out.push_back(check_binary("mul", {3, 4}, {3, 4}, [](Var a, Var b) { return mul(a, b); }, s));
  out.push_back(check_unary("scale", {3, 4}, -10, 10, [](Var x) { return scale(x, -2.5); }, s));
  out.push_back(check_unary("neg", {3, 4}, -10, 10, [](Var x) { return neg(x); }, s));
  out.push_back(check_unary("relu", {3, 4}, -10, 10, [](Var x) { return relu(x); }, s, 1e-2));
  out.push_back(check_unary("tanh", {3, 4}, -3, 3, [](Var x) { return tanh(x); }, s));
  out.push_back(check_unary("exp", {3, 4}, -10, 10, [](Var x) { return exp(x); }, s));
  out.push_back(check_unary("log", {3, 4}, 0.1, 10, [](Var x) { return log(x); }, s));
  out.push_back(check_unary("sum", {3, 4}, -10, 10, [](Var x) { return sum(x); }, s));
  out.push_back(check_unary("mean", {3, 4}, -10, 10, [](Var x) { return mean(x); }, s));
  out.push_back(check_unary("mean_over_axis", {2, 3, 4}, -10, 10, [](Var x) { return mean_over_axis(x, 1); }, s));
  out.push_back(check_unary("reshape", {2, 3, 4}, -10, 10, [](Var x) { return reshape(x, {6, 4}); }, s));
  out.push_back(check_binary("add_rowwise", {3, 4}, {1, 4}, [](Var a, Var b) { return add_rowwise(a, b); }, s));
  out.push_back(check_unary("index_rows", {3, 4}, -10, 10, [](Var x) { return index_rows(x, {2, 0, 2, 1}); }, s));
  out.push_back(check_unary("pick", {3, 4}, -10, 10, [](Var x) { return pick(x, {3, 0, 3}); }, s));
  out.push_back(check_unary("diagonal", {4, 4}, -10, 10, [](Var x) { return diagonal(x); }, s));
  out.push_back(check_unary("l2_normalize", {2, 5}, -10, 10, [](Var x) { return l2_normalize(x); }, s));
  out.push_back(check_unary("log_softmax_rows", {3, 6}, -10, 10, [](Var x) { return log_softmax_rows(x); }, s));
  out.push_back(check_binary("similarity_scores", {3, 8}, {5, 8},
                             [](Var a, Var b) { return similarity_scores(a, b); }, s));
  out.push_back(check_unary("cls_loss", {4, 6}, -1, 1, [](Var x) { return cls_loss(x, {0, 5, 2, 2}, 0.5); }, s));
  out.push_back(check_binary("cl_loss", {4, 5}, {4, 5}, [](Var a, Var b) { return cl_loss(a, b, 1.0); }, s));
  {
    CounterRng rng(derive_key(s, {fnv1a64("prompt_loss")}));
    Parameter m0("prompt_loss/mapped0", random_tensor({4, 5}, rng, -3, 3));
    Parameter m1("prompt_loss/mapped1", random_tensor({4, 5}, rng, -3, 3));
    Parameter f("prompt_loss/f", random_tensor({4, 5}, rng, -3, 3));
    auto fn = [&](Tape& t) { return prompt_loss({t.param(m0), t.param(m1)}, t.param(f), {0.3, 0.7}, 1.0); };
    out.push_back({"prompt_loss", grad_check(fn, {&m0, &m1, &f})});
  }

  ToyProblem toy = make_toy(s);
  {
    EncoderStage stage = toy.source;
    auto fn = [&](Tape& t) { return stage.embed(t, t.constant(toy.batch0)); };
    std::vector<Parameter*> ps;
    stage.for_each_param([&ps](Parameter& p) { ps.push_back(&p); });
    CounterRng wr(derive_key(s, {fnv1a64("project_encode")}));
    const std::uint64_t wkey = wr.next_u64();
    auto weighted = [&](Tape& t) {
      CounterRng r(wkey);
      return weighted_sum(fn(t), r);
    };
    out.push_back({"project_encode", grad_check(weighted, ps)});
  }
  const Tensor text_matrix = toy.text.matrix();
  const LossWeights weights;
  {
    EncoderStage stage = toy.source;
    ProjectionHead text_head = toy.text_head;
    std::vector<Parameter*> ps;
    stage.for_each_param([&ps](Parameter& p) { ps.push_back(&p); });
    text_head.for_each_param([&ps](Parameter& p) { ps.push_back(&p); });
    auto fn = [&](Tape& t) {
      return stage_loss(t, stage, text_head, text_matrix, {}, {}, toy.batch0, toy.targets, weights, {}).total;
    };
    out.push_back({"total_loss_stage0", grad_check(fn, ps)});
  }
  {
    EncoderStage source = toy.source;
    source.set_frozen(true);
    Tape ft;
    const Tensor source_features = source.encoder.encode(ft, ft.constant(toy.batch0)).value();
    EncoderStage stage = toy.target;
    ProjectionHead text_head = toy.text_head;
    MappingHead head = toy.mapping;
    std::vector<Parameter*> ps;
    stage.for_each_param([&ps](Parameter& p) { ps.push_back(&p); });
    text_head.for_each_param([&ps](Parameter& p) { ps.push_back(&p); });
    head.for_each_param([&ps](Parameter& p) { ps.push_back(&p); });
    auto fn = [&](Tape& t) {
      return stage_loss(t, stage, text_head, text_matrix, {&head}, {source_features}, toy.batch1, toy.targets,
                        weights, {1.0})
          .total;
    };
    out.push_back({"total_loss_stage1", grad_check(fn, ps)});
  }

  if (inject_fault) {
    out.push_back(check_unary("faulty_tanh", {3, 4}, -2, 2, [](Var x) { return faulty_tanh(x); }, s));
  }
  return out;
}

inline bool gradcheck_passed(const std::vector<GradCheckCase>& cases, double tol = kGradCheckTolerance) {
  for (const auto& c : cases)
    if (!c.report.passed(tol)) return false;
  return true;
}

}  // namespace cm2
