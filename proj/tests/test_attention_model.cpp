#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "entlab/entropy.hpp"
#include "entlab/errors.hpp"
#include "entlab/model.hpp"

using namespace entlab;

namespace {

Tensor randn(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = n(rng);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double largest_singular_value(const Tensor& w) {
  Eigen::MatrixXd m(w.rows(), w.cols());
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) m(r, c) = w(r, c);
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

ArchConfig tiny(const std::string& preset) {
  ArchConfig a = ArchConfig::preset(preset);
  a.layers = 2;
  a.heads = 2;
  a.d_model = 8;
  a.context = 6;
  a.vocab_size = 11;
  return a;
}

std::vector<int> tokens(std::size_t n, std::mt19937_64& rng, int vocab) {
  std::vector<int> t(n);
  for (auto& v : t) v = static_cast<int>(rng() % static_cast<unsigned>(vocab));
  return t;
}

}  // namespace

TEST(AttentionHead, ZeroQueryKeyGivesUniformCausalRows) {
  std::mt19937_64 rng(1);
  Graph g;
  HeadParams p{g.constant(Tensor({4, 2})), g.constant(Tensor({4, 2})), g.constant(randn({4, 2}, rng))};
  auto r = attention_head(g.constant(randn({5, 4}, rng)), p, Mask::causal, std::nullopt);
  const Tensor& a = r.probs.value();
  for (std::size_t i = 0; i < 5; ++i) {
    double h = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      EXPECT_DOUBLE_EQ(a(i, j), 1.0 / double(i + 1));
      h -= a(i, j) * std::log(a(i, j));
    }
    EXPECT_NEAR(h, std::log(double(i + 1)), 1e-12);
  }
}

TEST(AttentionHead, TwoTokenHandComputed) {
  Graph g;
  const Tensor x = Tensor::matrix({{1.0, 0.5}, {-0.5, 2.0}});
  const Tensor wq = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  const Tensor wk = Tensor::matrix({{0.5, -1.0}, {1.5, 0.25}});
  const Tensor wv = Tensor::matrix({{2.0, 0.0}, {0.0, 3.0}});
  HeadParams p{g.constant(wq), g.constant(wk), g.constant(wv)};
  auto r = attention_head(g.constant(x), p, Mask::causal, std::nullopt);
  // q1 = x1, k_j = x_j Wk; scores a = q1.k0 / sqrt 2, b = q1.k1 / sqrt 2.
  const double k0[] = {1.0 * 0.5 + 0.5 * 1.5, 1.0 * -1.0 + 0.5 * 0.25};
  const double k1[] = {-0.5 * 0.5 + 2.0 * 1.5, -0.5 * -1.0 + 2.0 * 0.25};
  const double a = (-0.5 * k0[0] + 2.0 * k0[1]) / std::sqrt(2.0);
  const double b = (-0.5 * k1[0] + 2.0 * k1[1]) / std::sqrt(2.0);
  const double pa = std::exp(a) / (std::exp(a) + std::exp(b));
  EXPECT_DOUBLE_EQ(r.probs.value()(0, 0), 1.0);
  EXPECT_EQ(r.probs.value()(0, 1), 0.0);
  EXPECT_NEAR(r.probs.value()(1, 0), pa, 1e-15);
  EXPECT_NEAR(r.probs.value()(1, 1), 1 - pa, 1e-15);
  EXPECT_NEAR(r.out.value()(1, 0), pa * 2.0 + (1 - pa) * -1.0, 1e-14);
  EXPECT_NEAR(r.out.value()(1, 1), pa * 1.5 + (1 - pa) * 6.0, 1e-14);
}

TEST(AttentionHead, HigherTemperatureRaisesRowEntropy) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    HeadParams p{g.constant(randn({6, 3}, rng)), g.constant(randn({6, 3}, rng)), g.constant(randn({6, 3}, rng))};
    Var x = g.constant(randn({7, 6}, rng));
    auto base = attention_head(x, p, Mask::causal, std::nullopt);
    auto hot = attention_head(x, p, Mask::causal, g.constant(Tensor({1, 7}, 2.5)));
    const Tensor eb = row_entropy(base.probs).value(), eh = row_entropy(hot.probs).value();
    for (std::size_t i = 0; i < 7; ++i) EXPECT_GE(eh[i], eb[i] - 1e-12);
  }
}

TEST(Mha, SingleHeadIsHeadThenProjection) {
  std::mt19937_64 rng(3);
  Graph g;
  Var x = g.constant(randn({5, 4}, rng));
  MhaParams p{g.constant(randn({4, 4}, rng)), g.constant(randn({4, 4}, rng)), g.constant(randn({4, 4}, rng)),
              g.constant(randn({4, 4}, rng)), 1, std::nullopt};
  auto m = mha(x, p, Mask::causal, 5);
  auto h = attention_head(x, HeadParams{p.wq, p.wk, p.wv}, Mask::causal, std::nullopt);
  EXPECT_EQ(m.out.value(), matmul(h.out, p.wo).value());
  EXPECT_EQ(m.probs[0].value(), h.probs.value());
}

TEST(Mha, IdentityProjectionIsRawConcatenation) {
  std::mt19937_64 rng(4);
  Graph g;
  Var x = g.constant(randn({5, 4}, rng));
  MhaParams p{g.constant(randn({4, 4}, rng)), g.constant(randn({4, 4}, rng)), g.constant(randn({4, 4}, rng)),
              g.constant(Tensor::identity(4)), 2, std::nullopt};
  auto m = mha(x, p, Mask::causal, 5);
  for (std::size_t h = 0; h < 2; ++h) {
    HeadParams hp{slice(p.wq, 0, 4, 2 * h, 2), slice(p.wk, 0, 4, 2 * h, 2), slice(p.wv, 0, 4, 2 * h, 2)};
    const Tensor ho = attention_head(x, hp, Mask::causal, std::nullopt).out.value();
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(m.out.value()(r, 2 * h + c), ho(r, c), 1e-13);
  }
}

TEST(Mha, MatchesIndependentPerHeadLoop) {
  std::mt19937_64 rng(5);
  const std::size_t T = 6, d = 8, H = 4, dk = 2;
  const Tensor x = randn({T, d}, rng), wq = randn({d, d}, rng), wk = randn({d, d}, rng), wv = randn({d, d}, rng),
               wo = randn({d, d}, rng);
  Graph g;
  MhaParams p{g.constant(wq), g.constant(wk), g.constant(wv), g.constant(wo), H, std::nullopt};
  const Tensor got = mha(g.constant(x), p, Mask::causal, T).out.value();

  // Plain loops, no library ops.
  Tensor cat({T, d});
  for (std::size_t h = 0; h < H; ++h) {
    auto proj = [&](const Tensor& w, std::size_t i, std::size_t c) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += x(i, k) * w(k, h * dk + c);
      return s;
    };
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> sc(i + 1);
      double mx = -1e300, z = 0;
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < dk; ++c) s += proj(wq, i, c) * proj(wk, j, c);
        sc[j] = s / std::sqrt(double(dk));
        mx = std::max(mx, sc[j]);
      }
      for (auto& s : sc) z += (s = std::exp(s - mx));
      for (std::size_t c = 0; c < dk; ++c) {
        double o = 0;
        for (std::size_t j = 0; j <= i; ++j) o += sc[j] / z * proj(wv, j, c);
        cat(i, h * dk + c) = o;
      }
    }
  }
  Tensor want({T, d});
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t k = 0; k < d; ++k) want(i, c) += cat(i, k) * wo(k, c);
  EXPECT_LT(max_abs_diff(got, want), 1e-12);
}

TEST(Ffn, ReluWithNegativePreactivationsIsZero) {
  std::mt19937_64 rng(6);
  Graph g;
  Tensor x({3, 2}, 1.0);
  FfnParams p{g.constant(Tensor({2, 8}, -0.5)), g.constant(randn({8, 2}, rng)), std::nullopt};
  for (double v : ffn(g.constant(x), p, FfnKind::relu).value().storage()) EXPECT_EQ(v, 0.0);
}

TEST(Ffn, IdentityIsComposedMatmul) {
  std::mt19937_64 rng(7);
  Graph g;
  Var x = g.constant(randn({3, 4}, rng));
  FfnParams p{g.constant(randn({4, 16}, rng)), g.constant(randn({16, 4}, rng)), std::nullopt};
  EXPECT_EQ(ffn(x, p, FfnKind::identity).value(), matmul(matmul(x, *p.w_in), *p.w_out).value());
}

TEST(Ffn, GeluScalarExpansion) {
  Graph g;
  const Tensor x = Tensor::matrix({{0.7, -1.2}});
  const Tensor win = Tensor::matrix({{0.5, -0.3, 1.0, 0.2, 0.0, 0.4, -0.8, 0.9}, {0.1, 0.6, -0.2, 0.7, 1.1, -0.5, 0.3, 0.05}});
  const Tensor wout = Tensor::matrix({{0.3, -0.1}, {0.2, 0.4}, {-0.6, 0.5}, {0.9, 0.0}, {0.1, 0.1}, {-0.2, 0.8}, {0.5, -0.7}, {0.4, 0.3}});
  FfnParams p{g.constant(win), g.constant(wout), std::nullopt};
  const Tensor got = ffn(g.constant(x), p, FfnKind::gelu).value();
  auto gelu_scalar = [](double v) {
    return 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v)));
  };
  for (std::size_t c = 0; c < 2; ++c) {
    double o = 0;
    for (std::size_t k = 0; k < 8; ++k) o += gelu_scalar(x[0] * win(0, k) + x[1] * win(1, k)) * wout(k, c);
    EXPECT_NEAR(got[c], o, 1e-14);
  }
}

TEST(Ffn, MissingWeightsIsAConfigError) {
  Graph g;
  FfnParams p;
  EXPECT_THROW(ffn(g.constant(Tensor({1, 2})), p, FfnKind::gelu), ConfigError);
  EXPECT_THROW(ffn(g.constant(Tensor({1, 2})), p, FfnKind::scaled_fused), ConfigError);
}

namespace {

struct BlockFixture {
  std::mt19937_64 rng{8};
  Graph g;
  ArchConfig cfg;
  BlockParams p;
  Var x;
  std::size_t T = 5, d = 4;

  explicit BlockFixture(const std::string& preset) : cfg(ArchConfig::preset(preset)) {
    x = g.constant(randn({T, d}, rng));
    p.attn = MhaParams{g.constant(randn({d, d}, rng, 0.5)), g.constant(randn({d, d}, rng, 0.5)),
                       g.constant(randn({d, d}, rng, 0.5)), g.constant(randn({d, d}, rng, 0.5)), 2, std::nullopt};
    if (cfg.use_layernorm) {
      p.ln1_gain = g.constant(randn({d}, rng));
      p.ln1_bias = g.constant(randn({d}, rng));
      p.ln2_gain = g.constant(randn({d}, rng));
      p.ln2_bias = g.constant(randn({d}, rng));
    }
    if (cfg.ffn_kind == FfnKind::scaled_fused) {
      p.ffn.w_fused = g.constant(randn({d, d}, rng));
    } else {
      p.ffn.w_in = g.constant(randn({d, 4 * d}, rng));
      p.ffn.w_out = g.constant(randn({4 * d, d}, rng));
    }
  }
};

}  // namespace

TEST(Block, UnitScalesGivePlainResidual) {
  BlockFixture f("sm_scfuffn");
  f.p.alpha = f.g.constant(Tensor::scalar(1.0));
  f.p.beta = f.g.constant(Tensor::scalar(1.0));
  const Tensor got = block_forward(f.x, f.p, f.cfg, f.T).out.value();
  Var xsa = add(f.x, mha(f.x, f.p.attn, Mask::causal, f.T).out);
  EXPECT_EQ(got, add(xsa, matmul(xsa, *f.p.ffn.w_fused)).value());
}

TEST(Block, LargeAlphaSuppressesFfn) {
  BlockFixture f("sm_scfuffn");
  f.p.alpha = f.g.constant(Tensor::scalar(1e12));
  f.p.beta = f.g.constant(Tensor::scalar(1.0));
  const Tensor got = block_forward(f.x, f.p, f.cfg, f.T).out.value();
  const Tensor xsa = add(f.x, mha(f.x, f.p.attn, Mask::causal, f.T).out).value();
  EXPECT_LT(max_abs_diff(got, xsa), 1e-9);
}

TEST(Block, PreLayerNormMatchesStepByStep) {
  BlockFixture f("sm_ln_g");
  const Tensor got = block_forward(f.x, f.p, f.cfg, f.T).out.value();
  Var a = mha(layernorm(f.x, *f.p.ln1_gain, *f.p.ln1_bias), f.p.attn, Mask::causal, f.T).out;
  Var xsa = add(f.x, a);
  Var h = gelu(matmul(layernorm(xsa, *f.p.ln2_gain, *f.p.ln2_bias), *f.p.ffn.w_in));
  EXPECT_EQ(got, add(xsa, matmul(h, *f.p.ffn.w_out)).value());
}

TEST(Model, EmptyStackIsEmbedThenUnembed) {
  ArchConfig a = tiny("sm");
  a.layers = 0;
  Model m(a, 3);
  const std::vector<int> ids = {1, 4, 2};
  const Tensor logits = m.trace(ids).logits;
  Graph g;
  Var e = add(gather_rows(g.param(*m.find_parameter("embed.tokens")), ids),
              gather_rows(g.param(*m.find_parameter("embed.positions")), std::vector<int>{0, 1, 2}));
  EXPECT_EQ(logits, matmul(e, g.param(*m.find_parameter("unembed.weight"))).value());
}

TEST(Model, SameSeedSameLogits) {
  std::mt19937_64 rng(9);
  const auto ids = tokens(6, rng, 11);
  EXPECT_EQ(Model(tiny("sm_ln_g"), 42).trace(ids).logits, Model(tiny("sm_ln_g"), 42).trace(ids).logits);
  EXPECT_NE(Model(tiny("sm_ln_g"), 42).trace(ids).logits, Model(tiny("sm_ln_g"), 43).trace(ids).logits);
}

TEST(Model, SoftmaxOnlyConfigCountsNoOtherNonlinearities) {
  ArchConfig a = tiny("sm");
  a.layers = 3;
  Model m(a, 1);
  std::mt19937_64 rng(10);
  Graph g;
  const std::vector<std::vector<int>> batch = {tokens(6, rng, 11)};
  ModelOutput out = m.forward(g, batch);
  EXPECT_EQ(out.attention.size(), a.layers * a.heads);
  EXPECT_EQ(g.op_counts().softmax, a.layers * a.heads);
  EXPECT_EQ(g.op_counts().layernorm, 0u);
  EXPECT_EQ(g.op_counts().gelu, 0u);
  EXPECT_EQ(g.op_counts().relu, 0u);

  Graph g2;
  Model(tiny("sm_ln_g"), 1).forward(g2, batch);
  EXPECT_EQ(g2.op_counts().layernorm, 2 * 2u + 1);  // two per block plus the final one
  EXPECT_EQ(g2.op_counts().gelu, 2u);
}

TEST(Model, TokenOutOfRangeIsAnInputError) {
  Model m(tiny("sm"), 1);
  EXPECT_THROW(m.trace(std::vector<int>{1, 11}), InputError);
  EXPECT_THROW(m.trace(std::vector<int>{-1}), InputError);
  EXPECT_THROW(m.trace(std::vector<int>(7, 0)), InputError);
}

TEST(Model, EveryConfigurationRunsForwardAndBackward) {
  std::vector<ArchConfig> configs;
  for (const auto& name : ArchConfig::preset_names()) configs.push_back(tiny(name));
  for (auto alt : {NormAlternative::weight_norm, NormAlternative::spectral_norm})
    for (auto tgt : {NormTargets::qk, NormTargets::ffn, NormTargets::qk_ffn, NormTargets::qkv_ffn, NormTargets::qkvo_ffn}) {
      ArchConfig a = tiny("sm_g");
      a.norm_alternative = alt;
      a.norm_targets = tgt;
      configs.push_back(a);
    }
  std::mt19937_64 rng(11);
  for (const auto& a : configs) {
    SCOPED_TRACE(a.name());
    Model m(a, 5);
    Graph g;
    const std::vector<std::vector<int>> batch = {tokens(6, rng, 11), tokens(6, rng, 11)};
    ModelOutput out = m.forward(g, batch);
    EXPECT_EQ(out.logits.shape(), (Shape{12, 11}));
    std::vector<int> targets = tokens(12, rng, 11);
    g.backward(cross_entropy(out.logits, targets));
    for (Parameter* p : m.parameters()) {
      EXPECT_TRUE(p->grad.all_finite()) << p->name;
      double norm = 0;
      for (double v : p->grad.storage()) norm += v * v;
      if (p->name.find("tau") == std::string::npos) EXPECT_GT(norm, 0.0) << p->name;
    }
  }
}

TEST(Model, AttentionIsCausal) {
  std::mt19937_64 rng(12);
  for (const auto& name : ArchConfig::preset_names()) {
    SCOPED_TRACE(name);
    Model m(tiny(name), 7);
    const auto ids = tokens(6, rng, 11);
    const Tensor base = m.trace(ids).logits;
    for (std::size_t j = 1; j < 6; ++j) {
      auto probe = ids;
      probe[j] = (probe[j] + 1) % 11;
      const Tensor moved = m.trace(probe).logits;
      for (std::size_t i = 0; i < j; ++i)
        for (std::size_t v = 0; v < 11; ++v) EXPECT_EQ(moved(i, v), base(i, v)) << "i=" << i << " j=" << j;
      bool changed = false;
      for (std::size_t v = 0; v < 11; ++v) changed = changed || moved(j, v) != base(j, v);
      EXPECT_TRUE(changed);
    }
  }
}

TEST(Model, TraceRowsAreCausalDistributions) {
  std::mt19937_64 rng(13);
  Model m(tiny("smt_scfuffn"), 2);
  const ForwardTrace t = m.trace(tokens(6, rng, 11));
  ASSERT_EQ(t.attention.size(), 4u);
  for (const Tensor& a : t.attention)
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 6; ++j) {
        if (j > i) EXPECT_EQ(a(i, j), 0.0);
        s += a(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Model, TemperatureInitialization) {
  ArchConfig a = tiny("smt_scfuffn");
  Model m(a, 1);
  const Tensor t = m.temperatures(1);
  EXPECT_EQ(t.shape(), (Shape{a.heads, a.context}));
  for (double v : t.storage()) EXPECT_NEAR(v, a.temperature_init, 1e-15);
  ASSERT_NE(m.find_parameter("layers.0.ffn.alpha"), nullptr);
  EXPECT_EQ(m.find_parameter("layers.0.ffn.alpha")->value.item(), 1.0);
  EXPECT_EQ(m.find_parameter("layers.0.ffn.beta")->value.item(), 1.0);
}

TEST(Model, ConfigValidation) {
  ArchConfig a = tiny("sm_ln_g");
  a.norm_alternative = NormAlternative::weight_norm;
  EXPECT_THROW(a.validate(), ConfigError);
  a = tiny("sm");
  a.d_model = 9;
  EXPECT_THROW(a.validate(), ConfigError);
  EXPECT_THROW(ArchConfig::preset("sm_ln_x"), ConfigError);
  EXPECT_THROW(parse_norm_targets("qv"), ConfigError);
  EXPECT_EQ(parse_norm_targets("QKV+FFN"), NormTargets::qkv_ffn);
}

TEST(WeightNorm, UnitColumnsWithUnitGainAreUnchanged) {
  Graph g;
  const double s = 1 / std::sqrt(2.0);
  const Tensor v = Tensor::matrix({{s, 0.6}, {s, 0.8}});
  EXPECT_LT(max_abs_diff(weight_norm(g.constant(v), g.constant(Tensor({2}, 1.0))).value(), v), 1e-15);
}

TEST(WeightNorm, ScaleInvariantInDirection) {
  std::mt19937_64 rng(14);
  Graph g;
  const Tensor v = randn({5, 3}, rng);
  Tensor v10 = v;
  for (auto& x : v10.storage()) x *= 10;
  Var gain = g.constant(randn({3}, rng));
  EXPECT_LT(max_abs_diff(weight_norm(g.constant(v), gain).value(), weight_norm(g.constant(v10), gain).value()), 1e-14);
}

TEST(WeightNorm, OutputUnitNormsEqualGains) {
  std::mt19937_64 rng(15);
  Graph g;
  const Tensor gain = Tensor::vector({0.5, 2.0, 3.5});
  const Tensor w = weight_norm(g.constant(randn({6, 3}, rng)), g.constant(gain)).value();
  for (std::size_t c = 0; c < 3; ++c) {
    double n = 0;
    for (std::size_t r = 0; r < 6; ++r) n += w(r, c) * w(r, c);
    EXPECT_NEAR(std::sqrt(n), gain[c], 1e-13);
  }
}

TEST(SpectralNorm, DiagonalNormalizesToUnitSpectralNorm) {
  const Tensor w = Tensor::matrix({{3, 0}, {0, 1}});
  Tensor u = Tensor::vector({0.6, 0.8}), v = Tensor::vector({0.8, 0.6});
  const double sigma = power_iteration(w, u, v, 30);
  EXPECT_NEAR(sigma, 3.0, 1e-9);
  Graph g;
  EXPECT_NEAR(largest_singular_value(spectral_normalize(g.constant(w), u, v).value()), 1.0, 1e-9);
}

TEST(SpectralNorm, OrthogonalMatrixIsUnchanged) {
  const double c = std::cos(0.7), s = std::sin(0.7);
  const Tensor w = Tensor::matrix({{c, -s}, {s, c}});
  Tensor u = Tensor::vector({1, 0}), v = Tensor::vector({0.6, 0.8});
  EXPECT_NEAR(power_iteration(w, u, v, 30), 1.0, 1e-12);
  Graph g;
  EXPECT_LT(max_abs_diff(spectral_normalize(g.constant(w), u, v).value(), w), 1e-12);
}

TEST(SpectralNorm, ThirtyIterationsMatchSvd) {
  // Random orthogonal factors around random singular values with sigma2 / sigma1 <= 0.7.
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    auto orthogonal = [&] {
      const Tensor g = randn({8, 8}, rng);
      Eigen::MatrixXd m(8, 8);
      for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) m(r, c) = g(r, c);
      return Eigen::MatrixXd(Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ());
    };
    const double top = 2.0 + 2.0 * unif(rng);
    Eigen::VectorXd s(8);
    s(0) = top;
    for (int i = 1; i < 8; ++i) s(i) = 0.7 * top * unif(rng);
    const Eigen::MatrixXd m = orthogonal() * s.asDiagonal() * orthogonal().transpose();
    Tensor w({8, 8});
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 8; ++c) w(r, c) = m(r, c);
    Tensor u = randn({8}, rng), v = randn({8}, rng);
    EXPECT_NEAR(power_iteration(w, u, v, 30), largest_singular_value(w), 1e-6) << "trial " << trial;
  }
}

TEST(SpectralNorm, GaussianMatricesConvergeFromBelow) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor w = randn({8, 8}, rng);
    const double sigma = largest_singular_value(w);
    Tensor u = randn({8}, rng), v = randn({8}, rng);
    double prev = power_iteration(w, u, v, 1);
    for (int k = 2; k <= 30; ++k) {
      const double est = power_iteration(w, u, v, 1);
      EXPECT_GE(est, prev - 1e-12);
      EXPECT_LE(est, sigma + 1e-12);
      prev = est;
    }
    EXPECT_NEAR(power_iteration(w, u, v, 2000), sigma, 1e-9) << "trial " << trial;
  }
}

TEST(SpectralNorm, EstimateFrozenAtInference) {
  ArchConfig a = tiny("sm_g");
  a.norm_alternative = NormAlternative::spectral_norm;
  Model m(a, 1);
  const Tensor before = m.find_buffer("layers.0.attn.q.sn_u")->value;
  m.trace(std::vector<int>{1, 2, 3});
  EXPECT_EQ(m.find_buffer("layers.0.attn.q.sn_u")->value, before);
  Graph g;
  const std::vector<std::vector<int>> batch = {{1, 2, 3}};
  m.forward(g, batch, Phase::train);
  EXPECT_NE(m.find_buffer("layers.0.attn.q.sn_u")->value, before);
}
