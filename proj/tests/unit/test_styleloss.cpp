#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "rego/errors.hpp"
#include "rego/styleloss.hpp"

using namespace rego;
using namespace rego::testing;

namespace {

GramStyle gram_of(std::vector<double> flat, int n) { return {constant(Tensor({n, n}, std::move(flat))), 0}; }

double hand_cosine(const Tensor& a, const Tensor& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::sqrt(na * nb);
}

}  // namespace

TEST(Gram, AnalyticExamples) {
  // channel 0 = (1,0), channel 1 = (0,1) over two pixels
  const Tensor m1({1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  const Tensor g1 = gram_matrix(constant(m1)).matrix.value();
  EXPECT_EQ(g1.storage(), (std::vector<double>{0.5, 0, 0, 0.5}));
  const Tensor m2({1, 2, 2}, 1.0);
  EXPECT_EQ(gram_matrix(constant(m2)).matrix.value().storage(), (std::vector<double>{1, 1, 1, 1}));
  EXPECT_EQ(gram_matrix(constant(m2), 3).layer, 3);
}

TEST(Gram, PropertiesOverRandomFeatureMaps) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 7);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = dim(rng), w = dim(rng), c = dim(rng);
    const Tensor f = random_tensor({h, w, c}, rng, -2, 2);
    const Tensor g = gram_matrix(constant(f)).matrix.value();
    const auto oracle = naive_gram(f);
    std::vector<std::vector<double>> sym(c, std::vector<double>(c));
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) {
        EXPECT_NEAR(g[i * c + j], oracle[i][j], 1e-12);
        EXPECT_LE(std::abs(g[i * c + j] - g[j * c + i]), 1e-9);
        sym[i][j] = g[i * c + j];
      }
    EXPECT_GE(jacobi_eigenvalues(sym).front(), -1e-8);
    const double s = std::uniform_real_distribution<double>(-3, 3)(rng);
    const Tensor gs = gram_matrix(ops::scale(constant(f), s)).matrix.value();
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(gs[i], s * s * g[i], 1e-7);
    if (s > 0) {
      EXPECT_NEAR(style_similarity(gram_matrix(ops::scale(constant(f), s)), gram_matrix(constant(f))).item(), 1.0,
                  1e-7);
    }
  }
}

TEST(Gram, ChannelPermutationPermutesTheMatrix) {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({3, 4, 4}, rng), b = random_tensor({3, 4, 4}, rng);
  const std::vector<int> perm{2, 0, 3, 1};
  auto permute = [&](const Tensor& t) {
    Tensor out(t.dims());
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 4; ++x)
        for (int c = 0; c < 4; ++c) out.at(y, x, c) = t.at(y, x, perm[c]);
    return out;
  };
  const Tensor ga = gram_matrix(constant(a)).matrix.value();
  const Tensor gp = gram_matrix(constant(permute(a))).matrix.value();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(gp[i * 4 + j], ga[perm[i] * 4 + perm[j]], 1e-12);
  const double s1 = style_similarity(gram_matrix(constant(a)), gram_matrix(constant(b))).item();
  const double s2 = style_similarity(gram_matrix(constant(permute(a))), gram_matrix(constant(permute(b)))).item();
  EXPECT_NEAR(s1, s2, 1e-9);
}

TEST(Similarity, AnalyticAndBruteForce) {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({3, 3}, rng);
  const Tensor b = random_tensor({3, 3}, rng);
  const GramStyle ga{constant(a), 0}, gb{constant(b), 0};
  EXPECT_NEAR(style_similarity(ga, ga).item(), 1.0, 1e-9);
  EXPECT_NEAR(style_similarity(ga, GramStyle{ops::scale(constant(a), -1.0), 0}).item(), -1.0, 1e-9);
  EXPECT_NEAR(style_similarity(ga, gb).item(), hand_cosine(a, b), 1e-9);
  EXPECT_THROW(style_similarity(ga, GramStyle{constant(Tensor({2, 2}, 1.0)), 0}), ShapeError);
}

TEST(Similarity, ZeroNormIsDegenerateNotAnError) {
  bool degenerate = false;
  const double s = style_similarity(gram_of({0, 0, 0, 0}, 2), gram_of({1, 0, 0, 1}, 2), &degenerate).item();
  EXPECT_EQ(s, 0.0);
  EXPECT_TRUE(degenerate);
  degenerate = false;
  style_similarity(gram_of({1, 0, 0, 1}, 2), gram_of({1, 0, 0, 1}, 2), &degenerate);
  EXPECT_FALSE(degenerate);
}

TEST(RankLayer, AnalyticCases) {
  const GramStyle r = gram_of({1, 0, 0, 0}, 2);
  const GramStyle orth = gram_of({0, 1, 1, 0}, 2);
  EXPECT_NEAR(style_rank_layer(r, r, r, 0.1).item(), 0.1, 1e-12);
  EXPECT_EQ(style_rank_layer(r, r, orth, 0.1).item(), 0.0);  // saturated hinge is exactly zero
  EXPECT_NEAR(style_rank_layer(r, orth, r, 0.1).item(), 1.1, 1e-12);
}

TEST(StyleConfig, DefaultsAndValidation) {
  const StyleConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.alpha, 0.1);
  ASSERT_EQ(cfg.layer_weights.size(), 5u);
  EXPECT_NEAR(std::accumulate(cfg.layer_weights.begin(), cfg.layer_weights.end(), 0.0), 1.0, 1e-15);
  StyleConfig bad;
  bad.alpha = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = StyleConfig{};
  bad.layer_weights = {0.2, -0.1};
  EXPECT_THROW(bad.validate(), ConfigError);
  const StyleConfig back = StyleConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.layer_weights, cfg.layer_weights);
  EXPECT_EQ(back.extractor, cfg.extractor);
}

class StyleTotal : public ::testing::Test {
 protected:
  RandomPyramidExtractor extractor{0};
  StyleConfig cfg;
  std::mt19937_64 rng{5};
  Tensor image() { return random_tensor({16, 16, 3}, rng, 0.0, 1.0); }
};

TEST_F(StyleTotal, IdenticalTripletGivesAlpha) {
  const Tensor x = image();
  const StyleLoss s = style_rank_total(constant(x), constant(x), constant(x), extractor, cfg);
  EXPECT_NEAR(s.total.item(), cfg.alpha, 1e-9);
  EXPECT_EQ(s.active_layers, 5);
}

TEST_F(StyleTotal, ZeroWeightsGiveZero) {
  cfg.layer_weights.assign(5, 0.0);
  EXPECT_EQ(style_rank_total(constant(image()), constant(image()), constant(image()), extractor, cfg).total.item(), 0.0);
}

TEST_F(StyleTotal, MatchesLayerByLayerOracle) {
  cfg.layer_weights = {0.1, 0.3, 0.2, 0.25, 0.15};
  cfg.alpha = 0.4;
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor g = image(), l = image(), r = image();
    const StyleLoss s = style_rank_total(constant(g), constant(l), constant(r), extractor, cfg);
    const auto ag = extractor.activations(constant(g)), al = extractor.activations(constant(l)),
               ar = extractor.activations(constant(r));
    double expect = 0;
    for (int d = 0; d < 5; ++d) {
      auto flat = [](const std::vector<std::vector<double>>& m) {
        std::vector<double> v;
        for (const auto& row : m) v.insert(v.end(), row.begin(), row.end());
        const int n = static_cast<int>(m.size());
        return Tensor({n, n}, v);
      };
      const Tensor Rg = flat(naive_gram(ag[d].value())), Lg = flat(naive_gram(al[d].value())),
                   Gg = flat(naive_gram(ar[d].value()));
      const double layer = std::max(0.0, cfg.alpha - hand_cosine(Rg, Lg) + hand_cosine(Rg, Gg));
      EXPECT_NEAR(s.layer_losses[d], layer, 1e-9);
      expect += cfg.layer_weights[d] * layer;
    }
    EXPECT_NEAR(s.total.item(), expect, 1e-7);
  }
}

TEST_F(StyleTotal, NonnegativeOverRandomTriplets) {
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor g = random_tensor({8, 8, 3}, rng, 0, 1), l = random_tensor({8, 8, 3}, rng, 0, 1),
                 r = random_tensor({8, 8, 3}, rng, 0, 1);
    ASSERT_GE(style_rank_total(constant(g), constant(l), constant(r), extractor, cfg).total.item(), 0.0);
  }
}

TEST_F(StyleTotal, Errors) {
  cfg.layer_weights = {0.5, 0.5};
  EXPECT_THROW(style_rank_total(constant(image()), constant(image()), constant(image()), extractor, cfg), ConfigError);
  cfg = StyleConfig{};
  EXPECT_THROW(style_rank_total(constant(image()), constant(Tensor({16, 8, 3})), constant(image()), extractor, cfg),
               ShapeError);
}

TEST_F(StyleTotal, GradientMatchesFiniteDifferencesAwayFromKinks) {
  cfg.alpha = 0.5;  // keep most layers strictly active
  Var g = parameter(image());
  const Tensor l = image(), r = image();
  auto loss = [&] { return style_rank_total(g, constant(l), constant(r), extractor, cfg).total; };
  const auto res = check_gradients(loss, {{"gen", g}}, 1e-5, 120);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
  EXPECT_GT(res.checked, 60);
}

TEST(Extractor, FactoryAndFrozenWeights) {
  const auto e = make_feature_extractor("random-pyramid:seed=3");
  EXPECT_EQ(e->layer_count(), 5);
  EXPECT_EQ(e->id(), RandomPyramidExtractor(3).id());
  EXPECT_THROW(make_feature_extractor("vgg19"), ConfigError);
  const auto acts = e->activations(constant(Tensor({16, 32, 3}, 0.3)));
  EXPECT_EQ(acts[0].value().dims(), (Dims{8, 16, 8}));
  for (const auto& a : acts) EXPECT_FALSE(a.requires_grad());
}
