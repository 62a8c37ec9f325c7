#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "skelfuse/errors.hpp"
#include "skelfuse/gradcheck_suite.hpp"
#include "skelfuse/ops.hpp"
#include "skelfuse/param_store.hpp"
#include "skelfuse/rng.hpp"

using namespace skelfuse;
using ad::Tensor;

namespace {

Tensor random(Rng& rng, std::size_t r, std::size_t c, bool grad = true) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(-1, 1);
  return Tensor::matrix(r, c, std::move(v), grad);
}

Tensor weighted(const Tensor& y, Rng& rng) {
  std::vector<double> w(y.numel());
  for (double& x : w) x = rng.uniform(-1, 1);
  return ad::sum(ad::mul(y, Tensor::from(y.shape(), std::move(w))));
}

}  // namespace

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(1);
  const Tensor s = ad::softmax(random(rng, 8, 8, false), 1);
  for (std::size_t r = 0; r < 8; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 8; ++c) sum += s.at(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Ops, SoftmaxIsStableForLargeLogits) {
  const Tensor s = ad::softmax(Tensor::matrix(1, 3, {1000.0, 1000.0, -1000.0}), 1);
  EXPECT_NEAR(s.at(0, 0), 0.5, 1e-12);
  EXPECT_EQ(s.at(0, 2), 0.0);
}

TEST(Ops, IdentityMatmul) {
  Rng rng(2);
  const Tensor a = random(rng, 5, 3, false);
  std::vector<double> eye(25, 0.0);
  for (int i = 0; i < 5; ++i) eye[i * 6] = 1.0;
  const Tensor out = ad::matmul(Tensor::matrix(5, 5, eye), a);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(out.data()[i], a.data()[i]);
}

TEST(Ops, SumOfMatmulGradientIsOnesTimesBTransposed) {
  Rng rng(3);
  Tensor a = random(rng, 4, 3), b = random(rng, 3, 5);
  ad::sum(ad::matmul(a, b)).backward();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 5; ++j) expect += b.at(k, j);
      EXPECT_NEAR(a.grad()[i * 3 + k], expect, 1e-12);
    }
  std::vector<Tensor> in{a, b};
  EXPECT_LT(ad::grad_check([&] { return ad::sum(ad::matmul(in[0], in[1])); }, in).max_error, 1e-6);
}

TEST(Ops, ShapeErrors) {
  Rng rng(4);
  const Tensor a = random(rng, 2, 3), b = random(rng, 2, 3);
  EXPECT_THROW(ad::matmul(a, b), ShapeError);
  EXPECT_THROW(ad::add(a, random(rng, 3, 2)), ShapeError);
  EXPECT_THROW(ad::slice_rows(a, 1, 4), ShapeError);
  const std::vector<int> bad{5};
  EXPECT_THROW(ad::gather_rows(a, bad), ShapeError);
  const std::vector<Tensor> parts{a, random(rng, 2, 2)};
  EXPECT_THROW(ad::concat(parts, 0), ShapeError);
  EXPECT_THROW(ad::multi_head_attention(random(rng, 2, 3), random(rng, 2, 3), random(rng, 2, 3), 2), ShapeError);
}

TEST(Backward, NonScalarIsRejected) {
  Rng rng(5);
  EXPECT_THROW(ad::relu(random(rng, 2, 2)).backward(), NotScalar);
}

TEST(Backward, ConstantLossLeavesZeroGrads) {
  Rng rng(6);
  Tensor w = random(rng, 3, 3);
  w.zero_grad();
  ad::sum(Tensor::matrix(1, 2, {1.0, 2.0})).backward();
  for (double g : w.grad_or_zeros()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, MeanReluMatchesFiniteDifferences) {
  Rng rng(7);
  std::vector<Tensor> in{random(rng, 6, 4), random(rng, 4, 1)};
  const auto r = ad::grad_check([&] { return ad::mean(ad::relu(ad::matmul(in[0], in[1]))); }, in);
  EXPECT_LT(r.max_error, 1e-4);
}

TEST(Backward, TwoPassesDoubleTheGradient) {
  Rng rng(8);
  Tensor w = random(rng, 3, 2);
  const Tensor x = random(rng, 2, 3, false);
  const Tensor loss = ad::sum(ad::exp(ad::matmul(x, w)));
  loss.backward();
  const std::vector<double> once(w.grad().begin(), w.grad().end());
  loss.backward();
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(w.grad()[i], 2.0 * once[i]);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tensor x = Tensor::scalar(3.0, true);
  const Tensor y = ad::mul(x, x);
  ad::add(y, y).backward();  // d/dx 2x^2 = 4x
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(GradCheck, LinearIsExact) {
  Rng rng(9);
  std::vector<Tensor> in{random(rng, 3, 4)};
  const Tensor w = random(rng, 3, 4, false);
  EXPECT_LT(ad::grad_check([&] { return ad::sum(ad::mul(in[0], w)); }, in).max_error, 1e-8);
}

TEST(GradCheck, DeadReluRegionIsExact) {
  std::vector<Tensor> in{Tensor::matrix(2, 2, {-1.0, -2.0, -0.5, -3.0}, true)};
  const auto r = ad::grad_check([&] { return ad::mean(ad::relu(in[0])); }, in);
  EXPECT_LT(r.max_error, 1e-10);
}

TEST(GradCheck, FlagsAWrongGradient) {
  std::vector<Tensor> in{Tensor::matrix(1, 3, {0.1, 0.2, 0.3}, true)};
  auto doubled_grad = [](const Tensor& a) {
    std::vector<double> v(a.data().begin(), a.data().end());
    return ad::make_result(a.shape(), v, {a},
                           [](ad::Node& self) {
                             auto& g = self.parents[0]->ensure_grad();
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * self.grad[i];
                           },
                           "bad_identity");
  };
  const auto r = ad::grad_check([&] { return ad::sum(ad::mul(doubled_grad(in[0]), in[0])); }, in);
  EXPECT_GT(r.max_error, 0.1);
}

// Every differentiable op on randomized shapes up to 32 x 32.
TEST(GradCheckProperty, LargeRandomShapes) {
  Rng rng(10);
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t n = 16 + rng.below(17), m = 16 + rng.below(17), k = 16 + rng.below(17);
    std::vector<Tensor> in{random(rng, n, k), random(rng, k, m)};
    Rng wr(trial);
    const Tensor w = random(wr, n, m, false);
    auto chain = [&] {
      const Tensor h = ad::matmul(in[0], in[1]);
      const Tensor s = ad::add(ad::softmax(h, 1), ad::log_softmax(h, 0));
      const Tensor l = ad::add(ad::layer_norm(h), ad::l2_normalize(ad::sigmoid(h)));
      return ad::sum(ad::mul(ad::add(s, ad::exp(ad::scale(l, 0.1))), w));
    };
    EXPECT_LT(ad::grad_check(chain, in).max_error, 1e-4);
  }
}

TEST(GradCheckProperty, SuiteIsStableAcrossSeeds) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const GradCheckReport r = run_gradchecks(default_gradcheck_registry(seed));
    EXPECT_TRUE(r.passed) << "seed " << seed << " worst " << r.worst_name << " " << r.worst_error;
  }
}

TEST(GradCheckSuite, EmptyRegistryFails) {
  EXPECT_FALSE(run_gradchecks(GradCheckRegistry{}).passed);
}

TEST(GradCheckSuite, CorruptedMatmulIsNamed) {
  GradCheckRegistry reg = default_gradcheck_registry();
  reg.add("matmul", [] {
    Rng rng(3);
    std::vector<Tensor> in{random(rng, 3, 4), random(rng, 4, 2)};
    auto bad_matmul = [](const Tensor& a, const Tensor& b) {
      const Tensor good = ad::matmul(a.detach(), b.detach());
      std::vector<double> v(good.data().begin(), good.data().end());
      return ad::make_result({a.rows(), b.cols()}, v, {a, b},
                             [](ad::Node& self) {
                               // Gradient for A only, and transposed wrongly: dA = G * B.
                               ad::Node& A = *self.parents[0];
                               ad::Node& B = *self.parents[1];
                               const std::size_t n = A.shape[0], k = A.shape[1], m = B.shape[1];
                               auto& g = A.ensure_grad();
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t p = 0; p < k; ++p)
                                   for (std::size_t j = 0; j < m; ++j) g[i * k + p] += self.grad[i * m + j] * B.value[p * m + j] * 0.5;
                             },
                             "matmul");
    };
    Rng wr(4);
    const Tensor w = random(wr, 3, 2, false);
    return ad::grad_check([&] { return ad::sum(ad::mul(bad_matmul(in[0], in[1]), w)); }, in);
  });
  const GradCheckReport r = run_gradchecks(reg);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.worst_name, "matmul");
}

TEST(Adam, ZeroGradsLeaveParametersUnchanged) {
  ParamStore store;
  Rng rng(1);
  store.add_xavier("w", 3, 3, rng);
  const std::vector<double> before(store.get("w").data().begin(), store.get("w").data().end());
  store.zero_grad();
  adam_step(store, {});
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(store.get("w").data()[i], before[i]);
  EXPECT_EQ(store.step(), 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  store.add("x", Tensor::scalar(2.0));
  store.zero_grad();
  store.get("x").node()->grad[0] = 1.0;
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(store, cfg);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(store.get("x").item(), 2.0 - 0.1 / (1.0 + 1e-8), 1e-12);
  EXPECT_NEAR(store.get("x").item(), 1.9, 1e-6);
}

TEST(Adam, ConvergesOnQuadratic) {
  ParamStore store;
  store.add("x", Tensor::scalar(1.0));
  AdamConfig cfg;
  cfg.lr = 0.05;
  for (int i = 0; i < 100; ++i) {
    store.zero_grad();
    const Tensor x = store.get("x");
    ad::mul(x, x).backward();
    adam_step(store, cfg);
  }
  EXPECT_LT(std::abs(store.get("x").item()), 0.05);
}

TEST(Adam, MissingGradThrows) {
  ParamStore store;
  store.add("x", Tensor::scalar(1.0));
  EXPECT_THROW(adam_step(store, {}), MissingGrad);
}

TEST(ParamStore, DuplicateAndMissingNames) {
  ParamStore store;
  store.add("a", Tensor::scalar(1.0));
  EXPECT_THROW(store.add("a", Tensor::scalar(2.0)), ArgumentError);
  EXPECT_THROW(store.get("b"), ArgumentError);
}

TEST(Checkpoint, BitExactRoundTrip) {
  ParamStore store;
  Rng rng(12);
  store.add_xavier("layer.w", 5, 7, rng);
  store.add("layer.s", Tensor::scalar(std::nextafter(1.0, 2.0)));
  const auto path = std::filesystem::temp_directory_path() / "skelfuse_unit" / "ck.bin";
  std::filesystem::create_directories(path.parent_path());
  save_checkpoint(store, path, {{"note", "x"}});
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.config.at("note"), "x");
  for (const auto& name : store.names()) {
    const Tensor a = store.get(name), b = ck.params.get(name);
    EXPECT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
  }
  std::ifstream manifest(path.string() + ".json");
  const auto j = nlohmann::json::parse(manifest);
  EXPECT_EQ(j.at("dtype"), "float64");
  EXPECT_EQ(j.at("endianness"), "little");
}

TEST(Checkpoint, CopyParamsChecksShapes) {
  ParamStore a, b;
  a.add("w", Tensor::matrix(1, 2, {1, 2}));
  b.add("w", Tensor::matrix(2, 1, {0, 0}));
  EXPECT_THROW(copy_params(a, b), ShapeError);
}
