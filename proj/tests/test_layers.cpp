#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "swiden/layers.hpp"

using namespace swiden;

namespace {

Rng dummy(0);

std::unique_ptr<Sequential> conv_branch(std::size_t cin, std::size_t cout, Rng& init) {
  auto s = std::make_unique<Sequential>();
  s->emplace<Conv2d>(cin, cout, 3, 1, 1, init);
  s->emplace<Relu>();
  s->emplace<Conv2d>(cout, cout, 3, 1, 1, init);
  return s;
}

/// Brute-force direct cross-correlation for one sample.
Tensor direct_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor y({cout, oh, ow});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = b[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) {
              const long yy = static_cast<long>(i * stride + u) - static_cast<long>(pad);
              const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
              acc += w.at({o, c, u, v}) * x.at({c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)});
            }
        y.at({o, i, j}) = acc;
      }
  return y;
}

}  // namespace

TEST(Conv2d, HandExample) {
  Conv2d conv(Tensor({1, 1, 2, 2}, {1, 0, 0, 1}), Tensor({1}, {0.0}), 1, 0);
  const Tensor y = conv.forward(Tensor({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}), Mode::Train, dummy);
  EXPECT_EQ(y, Tensor({1, 1, 2, 2}, {6, 8, 12, 14}));
}

TEST(Conv2d, OneByOneKernelScales) {
  Conv2d conv(Tensor({1, 1, 1, 1}, {2.5}), Tensor({1}, {-1.0}), 1, 0);
  Rng rng(1);
  const Tensor x = Tensor::normal({2, 1, 4, 3}, 1.0, rng);
  const Tensor y = conv.forward(x, Mode::Train, dummy);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], 2.5 * x[i] - 1.0, 1e-15);
}

TEST(Conv2d, MatchesDirectConvolution) {
  Rng rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + rng.index(3), cin = 1 + rng.index(3), cout = 1 + rng.index(4);
    const std::size_t h = 3 + rng.index(6), w = 3 + rng.index(6), k = 1 + rng.index(3);
    const std::size_t stride = 1 + rng.index(2), pad = rng.index(2);
    Conv2d conv(cin, cout, k, stride, pad, rng);
    conv.bias().value = Tensor::normal({cout}, 1.0, rng);
    const Tensor x = Tensor::normal({n, cin, h, w}, 1.0, rng);
    const Tensor y = conv.forward(x, Mode::Train, dummy);
    for (std::size_t s = 0; s < n; ++s) {
      const Tensor ref = direct_conv(x.slice0(s, 1).reshaped({cin, h, w}), conv.weight().value, conv.bias().value,
                                     stride, pad);
      const Tensor got = y.slice0(s, 1);
      ASSERT_EQ(got.size(), ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-12);
    }
  }
}

TEST(Conv2d, HeInitStatistics) {
  Rng rng(9);
  Conv2d conv(16, 64, 3, 1, 1, rng);
  const auto& w = conv.weight().value;
  double s2 = 0;
  for (double v : w.data()) s2 += v * v;
  EXPECT_NEAR(std::sqrt(s2 / static_cast<double>(w.size())), std::sqrt(2.0 / (16 * 9)), 0.01);
  for (double v : conv.bias().value.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, ShapeErrors) {
  Rng rng(1);
  Conv2d conv(2, 3, 3, 1, 0, rng);
  EXPECT_THROW(conv.forward(Tensor({1, 3, 5, 5}), Mode::Train, dummy), ShapeError);
  EXPECT_THROW(conv.forward(Tensor({1, 2, 2, 2}), Mode::Train, dummy), ShapeError);
  conv.forward(Tensor({1, 2, 4, 4}), Mode::Train, dummy);
  EXPECT_THROW(conv.backward(Tensor({1, 3, 3, 3})), ShapeError);
}

TEST(Conv2d, DisabledInputGradKeepsParamGrads) {
  Rng rng(2);
  Conv2d a(2, 3, 3, 1, 1, rng);
  Conv2d b(a.weight().value, a.bias().value, 1, 1);
  b.set_input_grad(false);
  const Tensor x = Tensor::normal({2, 2, 5, 5}, 1.0, rng);
  const Tensor g = Tensor::normal({2, 3, 5, 5}, 1.0, rng);
  a.forward(x, Mode::Train, dummy);
  b.forward(x, Mode::Train, dummy);
  a.backward(g);
  const Tensor gi = b.backward(g);
  EXPECT_EQ(a.weight().grad, b.weight().grad);
  EXPECT_EQ(a.bias().grad, b.bias().grad);
  EXPECT_EQ(gi, Tensor(x.shape()));
}

TEST(MaxPool2d, Examples) {
  MaxPool2d pool(2, 2);
  EXPECT_EQ(pool.forward(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), Mode::Train, dummy), Tensor({1, 1, 1, 1}, {4}));
  pool.forward(Tensor({1, 1, 2, 2}, 5.0), Mode::Train, dummy);
  EXPECT_EQ(pool.backward(Tensor({1, 1, 1, 1}, {1.0})), Tensor({1, 1, 2, 2}, {1, 0, 0, 0}));
  EXPECT_THROW(pool.forward(Tensor({1, 1, 1, 1}), Mode::Train, dummy), ShapeError);
}

TEST(GlobalAvgPool, Examples) {
  GlobalAvgPool gap;
  EXPECT_EQ(gap.forward(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), Mode::Train, dummy), Tensor({1, 1}, {2.5}));
  EXPECT_EQ(gap.forward(Tensor({1, 2, 3, 3}, 7.0), Mode::Train, dummy), Tensor({1, 2}, {7, 7}));
  EXPECT_EQ(gap.backward(Tensor({1, 2}, {9, 18})).at({0, 1, 2, 2}), 2.0);
}

TEST(Linear, Examples) {
  Linear id(Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, 0.0));
  const Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(id.forward(x, Mode::Train, dummy), x);
  Linear fc(Tensor({2, 1}, {1, 1}), Tensor({1}, {3.0}));
  EXPECT_EQ(fc.forward(Tensor({1, 2}, {1, 2}), Mode::Train, dummy), Tensor({1, 1}, {6}));
  EXPECT_THROW(fc.forward(Tensor({1, 3}), Mode::Train, dummy), ShapeError);
}

TEST(Relu, ForwardAndSubgradient) {
  Relu r;
  EXPECT_EQ(r.forward(Tensor({3}, {-1, 0, 2}), Mode::Train, dummy), Tensor({3}, {0, 0, 2}));
  EXPECT_EQ(r.backward(Tensor({3}, {1, 1, 1})), Tensor({3}, {0, 0, 1}));
}

TEST(Dropout, EvalAndZeroAreIdentity) {
  Rng rng(3);
  const Tensor x = Tensor::normal({4, 7}, 1.0, rng);
  Dropout d(0.5);
  EXPECT_EQ(d.forward(x, Mode::Eval, rng), x);
  Dropout zero(0.0);
  const Rng before = rng;
  EXPECT_EQ(zero.forward(x, Mode::Train, rng), x);
  EXPECT_TRUE(rng == before);  // p == 0 draws nothing
  EXPECT_THROW(Dropout(1.0), ConfigError);
  EXPECT_THROW(Dropout(-0.1), ConfigError);
}

TEST(Dropout, MaskReplaysGenerator) {
  const Tensor x({3, 5}, 1.0);
  Dropout d(0.5);
  Rng rng(77);
  const Tensor y = d.forward(x, Mode::Train, rng);
  Rng replay(77);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool dropped = replay.uniform() < 0.5;
    EXPECT_EQ(y[i], dropped ? 0.0 : 2.0) << i;
  }
  const Tensor g = d.backward(Tensor({3, 5}, 3.0));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(g[i], y[i] * 3.0);
}

TEST(SoftmaxXent, UniformLogits) {
  std::vector<std::size_t> labels{7};
  const auto r = softmax_xent(Tensor({1, 50}, 0.0), labels);
  EXPECT_NEAR(r.loss, std::log(50.0), 1e-12);
  EXPECT_NEAR(r.loss, 3.9120, 1e-4);
}

TEST(SoftmaxXent, LargeLogitsDoNotOverflow) {
  std::vector<std::size_t> labels{0};
  const auto r = softmax_xent(Tensor({1, 2}, {1000, 0}), labels);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  EXPECT_TRUE(r.grad.all_finite());
}

TEST(SoftmaxXent, GradientFormulaAndErrors) {
  std::vector<std::size_t> labels{1, 0};
  const auto r = softmax_xent(Tensor({2, 2}, 0.0), labels);
  EXPECT_EQ(r.grad, Tensor({2, 2}, {0.25, -0.25, -0.25, 0.25}));
  std::vector<std::size_t> bad{2};
  EXPECT_THROW(softmax_xent(Tensor({1, 2}), bad), LabelError);
}

TEST(Grl, Examples) {
  const Tensor x({2}, {3, -1});
  EXPECT_EQ(grl_forward(x, 2.0), x);
  EXPECT_EQ(grl_backward(Tensor({2}, {1, -3}), 2.0), Tensor({2}, {-2, 6}));
  const Tensor z = grl_backward(Tensor({2}, {1, -3}), 0.0);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(GradientReversal(-1.0), ConfigError);
}

TEST(Grl, LayerContractForPaperLambdas) {
  Rng rng(12);
  for (double lambda : {0.0, 1.0, 2.0, 3.0, 5.0, 10.0}) {
    GradientReversal grl(lambda);
    const Tensor x = Tensor::normal({3, 4}, 1.0, rng);
    EXPECT_EQ(grl.forward(x, Mode::Train, rng), x);
    const Tensor g = Tensor::normal({3, 4}, 1.0, rng);
    const Tensor back = grl.backward(g);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(back[i], -lambda * g[i]);
  }
}

TEST(Router, SingleSampleMatchesBranchAlone) {
  Rng init(5), rng(6);
  std::vector<std::unique_ptr<Sequential>> bs;
  bs.push_back(conv_branch(2, 3, init));
  bs.push_back(conv_branch(2, 3, init));
  Router router(std::move(bs));
  const Tensor x = Tensor::normal({1, 2, 4, 4}, 1.0, rng);
  std::vector<std::size_t> styles{0};
  const Tensor y = route_forward(router, x, styles, Mode::Train, rng);
  EXPECT_EQ(y, router.branch(0).forward(x, Mode::Train, rng));
}

TEST(Router, UnusedBranchGetsExactlyZeroGrad) {
  Rng init(5), rng(6);
  std::vector<std::unique_ptr<Sequential>> bs;
  bs.push_back(conv_branch(2, 3, init));
  bs.push_back(conv_branch(2, 3, init));
  Router router(std::move(bs));
  const Tensor x = Tensor::normal({3, 2, 4, 4}, 1.0, rng);
  std::vector<std::size_t> styles{1, 1, 1};
  const Tensor y = route_forward(router, x, styles, Mode::Train, rng);
  route_backward(router, Tensor::normal(y.shape(), 1.0, rng));
  for (Param* p : router.branch(0).params())
    for (double g : p->grad.data()) EXPECT_EQ(g, 0.0);
  double used = 0;
  for (Param* p : router.branch(1).params())
    for (double g : p->grad.data()) used += std::abs(g);
  EXPECT_GT(used, 0.0);
}

TEST(Router, MixedBatchMatchesIsolatedRuns) {
  Rng init(8), rng(9);
  std::vector<std::unique_ptr<Sequential>> a, b;
  Rng init_b = init;
  a.push_back(conv_branch(2, 3, init));
  a.push_back(conv_branch(2, 3, init));
  b.push_back(conv_branch(2, 3, init_b));
  b.push_back(conv_branch(2, 3, init_b));
  Router mixed(std::move(a)), alone(std::move(b));

  const Tensor x = Tensor::normal({2, 2, 5, 5}, 1.0, rng);
  const Tensor up = Tensor::normal({2, 3, 5, 5}, 1.0, rng);
  std::vector<std::size_t> styles{0, 1};
  const Tensor y = route_forward(mixed, x, styles, Mode::Train, rng);
  const Tensor gx = route_backward(mixed, up);

  for (std::size_t s = 0; s < 2; ++s) {
    const Tensor ys = alone.branch(s).forward(x.slice0(s, 1), Mode::Train, rng);
    const Tensor gs = alone.branch(s).backward(up.slice0(s, 1));
    const Tensor my = y.slice0(s, 1), mg = gx.slice0(s, 1);
    for (std::size_t i = 0; i < ys.size(); ++i) EXPECT_NEAR(my[i], ys[i], 1e-10);
    for (std::size_t i = 0; i < gs.size(); ++i) EXPECT_NEAR(mg[i], gs[i], 1e-10);
    const auto pm = mixed.branch(s).params(), pa = alone.branch(s).params();
    for (std::size_t k = 0; k < pm.size(); ++k)
      for (std::size_t i = 0; i < pm[k]->grad.size(); ++i) EXPECT_NEAR(pm[k]->grad[i], pa[k]->grad[i], 1e-10);
  }
}

TEST(Router, Errors) {
  Rng init(1);
  std::vector<std::unique_ptr<Sequential>> bs;
  bs.push_back(conv_branch(1, 2, init));
  bs.push_back(std::make_unique<Sequential>());
  bs.back()->emplace<Conv2d>(1, 3, 3, 1, 1, init);
  Router router(std::move(bs));
  EXPECT_THROW(router.set_routes({2}), RoutingError);
  router.set_routes({0, 1});
  EXPECT_THROW(router.forward(Tensor({2, 1, 4, 4}), Mode::Train, init), ShapeError);
}

TEST(GatherScatter, RoundTrip) {
  Rng rng(3);
  const Tensor x = Tensor::normal({4, 2, 3}, 1.0, rng);
  std::vector<std::size_t> rows{3, 1};
  const Tensor g = gather_rows(x, rows);
  EXPECT_EQ(g.slice0(0, 1), x.slice0(3, 1));
  Tensor dst(x.shape());
  scatter_rows(dst, g, rows);
  EXPECT_EQ(dst.slice0(1, 1), x.slice0(1, 1));
  EXPECT_EQ(dst.slice0(0, 1), Tensor({1, 2, 3}));
}

TEST(Sequential, ParamNames) {
  Rng rng(1);
  Sequential s;
  s.emplace<Conv2d>(1, 2, 3, 1, 1, rng);
  s.emplace<Relu>();
  s.emplace<Linear>(4, 2, rng);
  std::vector<NamedParam> out;
  s.collect_params("body.", out);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0].name, "body.0.weight");
  EXPECT_EQ(out[3].name, "body.2.bias");
}
