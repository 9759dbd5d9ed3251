#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "pixmatch/errors.hpp"
#include "pixmatch/tensor.hpp"
#include "support/oracles.hpp"

using namespace pixmatch;

namespace {

constexpr int kSeeds = 100;
constexpr double kGradTol = 1e-4;

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
std::vector<double> grads(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

template <class Build>
void check_gradients(const char* name, Build build) {
  double worst = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(derive_seed(1234, static_cast<std::uint64_t>(seed)));
    auto [fn, inputs] = build(rng);
    worst = std::max(worst, oracle::gradient_rel_error(fn, inputs));
  }
  EXPECT_LT(worst, kGradTol) << name;
}

}  // namespace

TEST(TensorBasics, ShapeMustMatchData) {
  EXPECT_THROW(Tensor::from_data({2, 3}, std::vector<double>(5)), ShapeError);
  const auto t = Tensor::from_data({2, 3}, std::vector<double>(6, 1.5));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(), 2u);
  EXPECT_FALSE(t.has_grad());
}

TEST(TensorBasics, ReluAndExpExamples) {
  EXPECT_EQ(values(relu(Tensor::from_data({3}, {-1.0, 0.0, 2.0}))), (std::vector<double>{0.0, 0.0, 2.0}));
  EXPECT_EQ(exp(Tensor::from_data({1}, {0.0})).item(), 1.0);
}

TEST(TensorBasics, SquareDerivativeAtThree) {
  auto x = Tensor::from_data({1}, {3.0}, true);
  backward(sum(square(x)));
  EXPECT_NEAR(x.grad()[0], 6.0, 1e-12);
}

TEST(TensorBasics, BinaryShapeRules) {
  const auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const auto b = Tensor::from_data({4}, {1, 2, 3, 4});
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_EQ(values(add(a, Tensor::scalar(1.0))), (std::vector<double>{2, 3, 4, 5}));
  EXPECT_EQ(values(sub(Tensor::scalar(10.0), a)), (std::vector<double>{9, 8, 7, 6}));
  EXPECT_EQ(values(mul(a, a)), (std::vector<double>{1, 4, 9, 16}));
  EXPECT_THROW(elementwise(ElementwiseKind::add, a), ShapeError);
}

TEST(TensorBasics, LogRejectsNonPositive) {
  EXPECT_THROW(log(Tensor::from_data({2}, {1.0, 0.0})), DomainError);
  EXPECT_THROW(log(Tensor::from_data({1}, {-2.0})), DomainError);
  EXPECT_NEAR(log(Tensor::from_data({1}, {std::exp(1.5)})).item(), 1.5, 1e-15);
}

TEST(Backward, SumAndSquareExamples) {
  auto x = Tensor::from_data({3}, {0.3, -2.0, 7.0}, true);
  backward(sum(x));
  EXPECT_EQ(grads(x), (std::vector<double>{1, 1, 1}));

  auto y = Tensor::from_data({2}, {1.0, 2.0}, true);
  backward(sum(mul(y, y)));
  EXPECT_EQ(grads(y), (std::vector<double>{2, 4}));
}

TEST(Backward, RejectsNonScalar) {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(square(x)), ShapeError);
}

TEST(Backward, Accumulates) {
  auto x = Tensor::from_data({2}, {1.0, -1.0}, true);
  backward(sum(scale(x, 3.0)));
  backward(sum(scale(x, 3.0)));
  EXPECT_EQ(grads(x), (std::vector<double>{6, 6}));
  x.zero_grad();
  EXPECT_EQ(grads(x), (std::vector<double>{0, 0}));
}

TEST(Detach, ProductWithDetachedFactor) {
  auto x = Tensor::from_data({1}, {2.0}, true);
  const auto d = detach(x);
  EXPECT_EQ(values(d), values(x));
  EXPECT_FALSE(d.requires_grad());
  backward(sum(mul(d, x)));
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_FALSE(d.has_grad());
}

TEST(NoGrad, RecordsNothing) {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = square(x);
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(y.is_leaf());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tape, TopologicalOrderAndSingleVisit) {
  auto a = Tensor::from_data({2}, {0.5, 1.5}, true);
  auto b = Tensor::from_data({2}, {2.0, -1.0}, true);
  const auto c = mul(a, b);
  const auto d = add(c, a);      // a reached through two paths
  const auto e = square(c);      // c shared by two consumers
  const auto loss = sum(add(d, e));
  const auto tape = ComputationTape::record(loss);
  const auto entries = tape.entries();

  std::set<std::uint64_t> seen;
  std::map<std::uint64_t, std::size_t> position;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    EXPECT_TRUE(seen.insert(entries[i].sequence).second) << "node listed twice";
    position[entries[i].sequence] = i;
  }
  EXPECT_LT(position[c.sequence()], position[d.sequence()]);
  EXPECT_LT(position[c.sequence()], position[e.sequence()]);
  EXPECT_LT(position[d.sequence()], position[loss.sequence()]);
  EXPECT_EQ(entries.back().sequence, loss.sequence());

  const auto visited = tape.replay_backward();
  std::vector<std::uint64_t> expected;
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->op_name != "leaf") expected.push_back(it->sequence);
  }
  EXPECT_EQ(visited, expected);
}

TEST(Tape, ReplayTwiceDoublesGradients) {
  Rng rng(77);
  auto x = oracle::random_tensor({2, 3, 4, 4}, rng);
  x.set_requires_grad(true);
  auto w = oracle::random_tensor({2, 3, 3, 3}, rng);
  w.set_requires_grad(true);
  auto bias = oracle::random_tensor({2}, rng);
  bias.set_requires_grad(true);
  const auto loss = mean(square(softmax_channels(conv2d(x, w, bias, 1, 1))));
  const auto tape = ComputationTape::record(loss);
  tape.replay_backward();
  const auto once_x = grads(x), once_w = grads(w), once_b = grads(bias);
  tape.replay_backward();
  for (std::size_t i = 0; i < once_x.size(); ++i) EXPECT_EQ(x.grad()[i], 2.0 * once_x[i]);
  for (std::size_t i = 0; i < once_w.size(); ++i) EXPECT_EQ(w.grad()[i], 2.0 * once_w[i]);
  for (std::size_t i = 0; i < once_b.size(); ++i) EXPECT_EQ(bias.grad()[i], 2.0 * once_b[i]);
}

TEST(Tape, GradientsFiniteForFiniteInputs) {
  Rng rng(5);
  auto x = oracle::random_tensor({1, 2, 6, 6}, rng, -50.0, 50.0);
  x.set_requires_grad(true);
  backward(mean(log(softmax_channels(x))));
  for (double g : x.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Conv2d, SumOfOnes) {
  const auto x = Tensor::full({1, 1, 3, 3}, 1.0);
  const auto w = Tensor::full({1, 1, 3, 3}, 1.0);
  const auto out = conv2d(x, w, Tensor::zeros({1}), 1, 1);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_EQ(out.at(4), 9.0);
  EXPECT_EQ(out.at(0), 4.0);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(3);
  const auto x = oracle::random_tensor({2, 1, 5, 4}, rng);
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;
  const auto out = conv2d(x, Tensor::from_data({1, 1, 3, 3}, k), Tensor::zeros({1}), 1, 1);
  EXPECT_EQ(values(out), values(x));
}

TEST(Conv2d, OutputExtentAndErrors) {
  const auto x = Tensor::zeros({1, 2, 8, 8});
  EXPECT_EQ(conv2d(x, Tensor::zeros({4, 2, 3, 3}), Tensor::zeros({4}), 2, 1).shape(), (Shape{1, 4, 4, 4}));
  EXPECT_EQ(conv2d(x, Tensor::zeros({4, 2, 3, 3}), Tensor::zeros({4}), 1, 0).shape(), (Shape{1, 4, 6, 6}));
  EXPECT_THROW(conv2d(x, Tensor::zeros({4, 3, 3, 3}), Tensor::zeros({4}), 1, 1), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor::zeros({4, 2, 2, 2}), Tensor::zeros({4}), 1, 1), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor::zeros({4, 2, 3, 3}), Tensor::zeros({3}), 1, 1), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor::zeros({4, 2, 3, 3}), Tensor::zeros({4}), 0, 1), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1, 2, 5, 5}), Tensor::zeros({1}), 1, 1),
               ShapeError);
}

TEST(Conv2d, MatchesDirectLoop) {
  Rng rng(11);
  const auto x = oracle::random_tensor({2, 3, 7, 6}, rng);
  const auto w = oracle::random_tensor({4, 3, 3, 3}, rng);
  const auto b = oracle::random_tensor({4}, rng);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      const auto out = conv2d(x, w, b, stride, pad);
      const auto& s = out.shape();
      for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t o = 0; o < 4; ++o) {
          for (std::size_t oy = 0; oy < s[2]; ++oy) {
            for (std::size_t ox = 0; ox < s[3]; ++ox) {
              double acc = b.at(o);
              for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t ky = 0; ky < 3; ++ky) {
                  for (std::size_t kx = 0; kx < 3; ++kx) {
                    const auto iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    const auto ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                    if (iy < 0 || ix < 0 || iy >= 7 || ix >= 6) continue;
                    acc += x.at(((n * 3 + c) * 7 + iy) * 6 + ix) * w.at(((o * 3 + c) * 3 + ky) * 3 + kx);
                  }
                }
              }
              EXPECT_NEAR(out.at(((n * 4 + o) * s[2] + oy) * s[3] + ox), acc, 1e-12);
            }
          }
        }
      }
    }
  }
}

TEST(Softmax, Examples) {
  const auto uniform = softmax_channels(Tensor::zeros({1, 4, 2, 2}));
  for (double v : uniform.data()) EXPECT_DOUBLE_EQ(v, 0.25);

  const auto p = softmax_channels(Tensor::from_data({1, 2, 1, 1}, {std::log(2.0), 0.0}));
  EXPECT_NEAR(p.at(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p.at(1), 1.0 / 3.0, 1e-15);

  const auto big = softmax_channels(Tensor::from_data({1, 2, 1, 1}, {1000.0, 0.0}));
  EXPECT_EQ(big.at(0), 1.0);
  EXPECT_EQ(big.at(1), 0.0);

  EXPECT_THROW(softmax_channels(Tensor::zeros({1, 1, 2, 2})), ShapeError);
}

TEST(Softmax, NormalisedAndShiftInvariant) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const std::size_t c = 5, hw = 9;
    auto logits = oracle::random_tensor({2, c, 3, 3}, rng, -20.0, 20.0);
    auto shifted = values(logits);
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t i = 0; i < hw; ++i) {
        const double k = rng.uniform(-30.0, 30.0);
        for (std::size_t ch = 0; ch < c; ++ch) shifted[(n * c + ch) * hw + i] += k;
      }
    }
    const auto p = softmax_channels(logits);
    const auto q = softmax_channels(Tensor::from_data(logits.shape(), shifted));
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t i = 0; i < hw; ++i) {
        double total = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const auto idx = (n * c + ch) * hw + i;
          EXPECT_GE(p.at(idx), 0.0);
          EXPECT_NEAR(p.at(idx), q.at(idx), 1e-9);
          total += p.at(idx);
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
      }
    }
  }
}

TEST(Upsample, IdentityAndConstant) {
  Rng rng(8);
  const auto x = oracle::random_tensor({1, 2, 3, 5}, rng);
  EXPECT_EQ(values(upsample_bilinear(x, 3, 5)), values(x));
  const auto c = upsample_bilinear(Tensor::full({1, 1, 2, 2}, 0.7), 8, 8);
  for (double v : c.data()) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(Upsample, HalfPixelCentres) {
  // Doubling [0, 1]: output centres at 0.25, 0.75, 1.25, 1.75 in input pixels map to
  // source coordinates -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to the last pixel).
  const auto out = upsample_bilinear(Tensor::from_data({1, 1, 1, 2}, {0.0, 1.0}), 1, 4);
  EXPECT_NEAR(out.at(0), 0.0, 1e-15);
  EXPECT_NEAR(out.at(1), 0.25, 1e-15);
  EXPECT_NEAR(out.at(2), 0.75, 1e-15);
  EXPECT_NEAR(out.at(3), 1.0, 1e-15);
}

// --- finite-difference oracle -------------------------------------------------

TEST(GradientOracle, Add) {
  check_gradients("add", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return sum(square(add(v[0], v[1]))); }),
                     std::vector{oracle::random_tensor({4, 4}, rng), oracle::random_tensor({4, 4}, rng)}};
  });
  check_gradients("add scalar", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return sum(square(add(v[0], v[1]))); }),
                     std::vector{oracle::random_tensor({6}, rng), oracle::random_tensor({1}, rng)}};
  });
}

TEST(GradientOracle, Sub) {
  check_gradients("sub", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return sum(square(sub(v[0], v[1]))); }),
                     std::vector{oracle::random_tensor({3, 5}, rng), oracle::random_tensor({3, 5}, rng)}};
  });
  check_gradients("scalar minus tensor", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return sum(square(sub(v[1], v[0]))); }),
                     std::vector{oracle::random_tensor({7}, rng), oracle::random_tensor({1}, rng)}};
  });
}

TEST(GradientOracle, Mul) {
  check_gradients("mul", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return sum(mul(v[0], v[1])); }),
                     std::vector{oracle::random_tensor({8}, rng), oracle::random_tensor({8}, rng)}};
  });
  check_gradients("mul scalar", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return sum(square(mul(v[1], v[0]))); }),
                     std::vector{oracle::random_tensor({2, 4}, rng), oracle::random_tensor({1}, rng)}};
  });
}

TEST(GradientOracle, ExpLogReluSquare) {
  check_gradients("exp", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return sum(exp(v[0])); }),
                     std::vector{oracle::random_tensor({10}, rng)}};
  });
  check_gradients("log", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return sum(log(v[0])); }),
                     std::vector{oracle::random_tensor({10}, rng, 0.1, 3.0)}};
  });
  check_gradients("relu", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return sum(square(relu(v[0]))); }),
                     std::vector{oracle::random_away_from_zero({12}, rng)}};
  });
  check_gradients("square", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return sum(square(v[0])); }),
                     std::vector{oracle::random_tensor({3, 3}, rng)}};
  });
}

TEST(GradientOracle, ScaleSumMean) {
  check_gradients("scale/mean", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return mean(square(scale(v[0], -2.5))); }),
                     std::vector{oracle::random_tensor({2, 3, 2}, rng)}};
  });
}

TEST(GradientOracle, Conv2d) {
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      check_gradients("conv2d", [&](Rng& rng) {
        return std::pair{oracle::ScalarFn([=](const auto& v) {
                           return sum(square(conv2d(v[0], v[1], v[2], stride, pad)));
                         }),
                         std::vector{oracle::random_tensor({1, 2, 5, 5}, rng), oracle::random_tensor({2, 2, 3, 3}, rng),
                                     oracle::random_tensor({2}, rng)}};
      });
    }
  }
  check_gradients("conv2d 1x1", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return sum(square(conv2d(v[0], v[1], v[2], 1, 0))); }),
                     std::vector{oracle::random_tensor({2, 3, 3, 3}, rng), oracle::random_tensor({2, 3, 1, 1}, rng),
                                 oracle::random_tensor({2}, rng)}};
  });
}

TEST(GradientOracle, Upsample) {
  check_gradients("upsample", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) { return sum(square(upsample_bilinear(v[0], 7, 9))); }),
                     std::vector{oracle::random_tensor({1, 2, 3, 4}, rng)}};
  });
}

TEST(GradientOracle, Softmax) {
  check_gradients("softmax", [](Rng& rng) {
    auto weights = oracle::random_tensor({2, 3, 2, 2}, rng);
    return std::pair{
        oracle::ScalarFn([weights](const auto& v) { return sum(mul(softmax_channels(v[0]), weights)); }),
        std::vector{oracle::random_tensor({2, 3, 2, 2}, rng, -3.0, 3.0)}};
  });
}

TEST(GradientOracle, Composite) {
  check_gradients("composite", [](Rng& rng) {
    return std::pair{oracle::ScalarFn([](const auto& v) {
                       const auto h = relu(conv2d(v[0], v[1], v[2], 2, 1));
                       const auto up = upsample_bilinear(h, 4, 4);
                       return mean(log(softmax_channels(up)));
                     }),
                     std::vector{oracle::random_tensor({1, 2, 4, 4}, rng), oracle::random_tensor({3, 2, 3, 3}, rng),
                                 oracle::random_tensor({3}, rng)}};
  });
}

TEST(Elementwise, ReluPropagatesNan) {
  const auto out = relu(Tensor::from_data({3}, {std::numeric_limits<double>::quiet_NaN(), -1.0, 2.0}));
  EXPECT_TRUE(std::isnan(out.data()[0]));
  EXPECT_EQ(out.data()[1], 0.0);
  EXPECT_EQ(out.data()[2], 2.0);
}
