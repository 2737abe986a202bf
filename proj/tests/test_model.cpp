#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pneumanet/model.hpp"
#include "pneumanet/training.hpp"
#include "support/gradcheck.hpp"

using namespace pneumanet;

namespace {

std::vector<Tensor32> noise_images(std::size_t n, std::size_t size, std::mt19937_64& rng) {
  std::vector<Tensor32> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(gradcheck::random_tensor({size, size, 1}, rng, 0, 1).cast<float>());
  return out;
}

// Bright square in the left half vs the right half.
std::vector<Tensor32> separable_images(std::size_t per_class, std::size_t size,
                                       std::mt19937_64& rng, std::vector<int>& labels) {
  std::uniform_real_distribution<float> noise(0.0f, 0.2f);
  std::vector<Tensor32> out;
  for (int label = 0; label < 2; ++label) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Tensor32 img({size, size, 1});
      for (float& v : img.values()) v = noise(rng);
      const std::size_t x0 = label ? size / 2 + 1 : 1;
      for (std::size_t y = size / 4; y < 3 * size / 4; ++y)
        for (std::size_t x = x0; x < x0 + size / 2 - 2; ++x) img.at({y, x, 0}) = 0.9f;
      out.push_back(std::move(img));
      labels.push_back(label);
    }
  }
  return out;
}

}  // namespace

TEST(Labels, NamesAndThreshold) {
  EXPECT_EQ(label_name(Label::pneumonia), "PNEUMONIA");
  EXPECT_EQ(label_from_string("NORMAL"), Label::normal);
  EXPECT_THROW(label_from_string("normal"), InvalidArgument);
  EXPECT_EQ(label_for_probability(0.5), Label::pneumonia);
  EXPECT_EQ(label_for_probability(std::nextafter(0.5, 0.0)), Label::normal);
}

TEST(Architecture, DefaultParameterCountAndOutputShape) {
  const auto arch = CnnArchitecture::standard(148);
  const auto net = build_model<float>(arch, 1);
  // conv1 32*1*3*3 + 32, bn1 2*32, conv2 64*32*3*3 + 64, bn2 2*64,
  // dense (64*37*37) + 1.
  const std::size_t expected = (32 * 9 + 32) + 64 + (64 * 32 * 9 + 64) + 128 + (64 * 37 * 37 + 1);
  EXPECT_EQ(net.parameter_count(), expected);
  EXPECT_EQ(expected, 106625u);
  EXPECT_EQ(net.output_shape(), (Shape{1}));
  std::mt19937_64 rng(1);
  const auto imgs = noise_images(3, 148, rng);
  std::vector<const Tensor32*> ptrs{&imgs[0], &imgs[1], &imgs[2]};
  EXPECT_EQ(net.infer(stack_images<float>(ptrs)).shape(), (Shape{3, 1}));
}

TEST(Architecture, ValidationRejectsBadStacks) {
  auto arch = CnnArchitecture::standard(32);
  std::swap(arch.blocks[0].filters, arch.blocks[1].filters);
  EXPECT_THROW(arch.validate(), InvalidArgument);
  auto tiny = CnnArchitecture::standard(2);
  EXPECT_THROW(tiny.validate(), InvalidArgument);
  auto empty = CnnArchitecture::standard(32);
  empty.blocks.clear();
  EXPECT_THROW(build_model<float>(empty, 0), InvalidArgument);
}

TEST(Architecture, JsonRoundTrip) {
  auto arch = CnnArchitecture::standard(64);
  arch.blocks[1].activation = ops::Activation::leaky_relu(0.1);
  EXPECT_EQ(CnnArchitecture::from_json(arch.to_json()), arch);
  EXPECT_THROW(CnnArchitecture::from_json({{"height", 3}}), InvalidArgument);
}

TEST(BuildModel, DeterministicFromSeed) {
  const auto arch = CnnArchitecture::standard(32);
  const auto a = build_model<float>(arch, 42), b = build_model<float>(arch, 42);
  const auto c = build_model<float>(arch, 43);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i], *pb[i]);
  EXPECT_NE(*pa[0], *pc[0]);
  // He-uniform bounds, zero biases, unit gamma.
  const double limit = std::sqrt(6.0 / 9.0);
  for (float w : pa[0]->values()) EXPECT_LE(std::abs(w), limit);
  for (float v : pa[1]->values()) EXPECT_EQ(v, 0.0f);
  for (float v : pa[2]->values()) EXPECT_EQ(v, 1.0f);
}

TEST(BuildModel, DescriptionRoundTripAndCast) {
  const auto net = build_model<float>(CnnArchitecture::standard(16), 5);
  const auto copy = nn::Network<float>::from_description(net.describe());
  EXPECT_EQ(copy.describe(), net.describe());
  const auto d = net.cast<double>();
  auto pf = net.parameters();
  auto pd = d.parameters();
  for (std::size_t i = 0; i < pf.size(); ++i) EXPECT_EQ(pd[i]->cast<float>(), *pf[i]);
}

TEST(Bce, ClosedFormAndGradient) {
  const int one[] = {1};
  EXPECT_NEAR(bce_loss<double>(Tensor64({1, 1}, 0.5), one).value, std::log(2.0), 1e-12);
  EXPECT_LE(bce_loss<double>(Tensor64({1, 1}, 1.0), one).value, -std::log(1 - 1e-7) + 1e-15);
  const auto r = bce_loss<double>(Tensor64({1, 1}, 0.3), one);
  const double h = 1e-5;
  const double numeric = (bce_loss<double>(Tensor64({1, 1}, 0.3 + h), one).value -
                          bce_loss<double>(Tensor64({1, 1}, 0.3 - h), one).value) /
                         (2 * h);
  EXPECT_LE(std::abs(r.grad[0] - numeric) / std::abs(numeric), 1e-6);
  const int bad[] = {2};
  EXPECT_THROW(bce_loss<double>(Tensor64({1, 1}, 0.3), bad), InvalidArgument);
}

TEST(Adam, FirstStepAndZeroGradient) {
  Tensor64 p({1}, 0.0), g({1}, 0.1);
  Tensor64* ps[] = {&p};
  Tensor64* gs[] = {&g};
  AdamState<double> st;
  adam_step<double>(ps, gs, st);
  EXPECT_EQ(st.t, 1u);
  EXPECT_NEAR(p[0], -0.001 * 0.1 / (0.1 + 1e-8), 1e-15);
  EXPECT_NEAR(p[0], -9.9999e-4, 1e-8);

  Tensor64 q({2}, 3.0), z({2}, 0.0);
  Tensor64* qs[] = {&q};
  Tensor64* zs[] = {&z};
  AdamState<double> st2;
  adam_step<double>(qs, zs, st2);
  EXPECT_EQ(q, Tensor64({2}, 3.0));
  EXPECT_EQ(st2.t, 1u);

  Tensor64 wrong({3});
  Tensor64* ws[] = {&wrong};
  EXPECT_THROW(adam_step<double>(qs, ws, st2), ShapeError);
}

TEST(Adam, ConstantGradientStepApproachesAlpha) {
  Tensor64 p({1}, 0.0), g({1}, -0.37);
  Tensor64* ps[] = {&p};
  Tensor64* gs[] = {&g};
  AdamState<double> st;
  double prev = 0, step = 0;
  for (int i = 0; i < 5000; ++i) {
    adam_step<double>(ps, gs, st);
    step = p[0] - prev;
    prev = p[0];
  }
  EXPECT_NEAR(step, 1e-3, 1e-9);
}

TEST(EarlyStopping, Walkthrough) {
  EarlyStopping<int> es(2);
  EXPECT_FALSE(es.observe(0.6, 1, 1));
  EXPECT_FALSE(es.observe(0.7, 2, 2));
  EXPECT_FALSE(es.observe(0.65, 3, 3));
  EXPECT_TRUE(es.observe(0.66, 4, 4));
  EXPECT_EQ(es.best_epoch(), 2u);
  EXPECT_EQ(*es.best_snapshot(), 2);
  EXPECT_EQ(es.best_value(), 0.7);
}

TEST(EarlyStopping, EqualValueIsNotImprovementAndZeroPatienceNeverStops) {
  EarlyStopping<int> es(1);
  es.observe(0.5, 1, 1);
  EXPECT_TRUE(es.observe(0.5, 2, 2));
  EXPECT_EQ(*es.best_snapshot(), 1);
  EarlyStopping<int> never(0);
  for (int i = 0; i < 20; ++i) EXPECT_FALSE(never.observe(0.1, i + 1, i));
}

TEST(EarlyStopping, NeverReturnsWorseEpoch) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    EarlyStopping<double> es(1 + rng() % 4);
    double best = -1;
    for (std::size_t e = 1; e <= 30; ++e) {
      const double v = std::round(u(rng) * 20) / 20;
      best = std::max(best, v);
      const bool stop = es.observe(v, e, v);
      ASSERT_EQ(*es.best_snapshot(), best);
      if (stop) break;
    }
  }
}

TEST(Training, ZeroEpochsReturnsInitial) {
  std::mt19937_64 rng(4);
  const auto net = build_model<float>(CnnArchitecture::standard(8), 1);
  const auto imgs = noise_images(4, 8, rng);
  ImageSet set;
  for (std::size_t i = 0; i < imgs.size(); ++i) set.add(imgs[i], static_cast<int>(i % 2));
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto r = train(net, set, set, cfg);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.best.describe(), net.describe());
  auto a = r.best.parameters(), b = net.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
}

TEST(Training, RejectsEmptyAndTinyBatches) {
  const auto net = build_model<float>(CnnArchitecture::standard(8), 1);
  ImageSet empty;
  EXPECT_THROW(train(net, empty, empty, {}), InvalidArgument);
  std::mt19937_64 rng(5);
  const auto imgs = noise_images(4, 8, rng);
  ImageSet set;
  for (const auto& im : imgs) set.add(im, 0);
  TrainConfig cfg;
  cfg.batch_size = 1;
  EXPECT_THROW(train(net, set, set, cfg), InvalidArgument);
}

TEST(Training, ReproducibleAndLearnsSeparableSet) {
  std::mt19937_64 rng(6);
  std::vector<int> labels;
  const auto imgs = separable_images(8, 16, rng, labels);
  ImageSet set;
  for (std::size_t i = 0; i < imgs.size(); ++i) set.add(imgs[i], labels[i]);
  const auto net = build_model<float>(CnnArchitecture::standard(16), 7);
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 8;
  cfg.patience = 0;
  cfg.seed = 9;
  const auto a = train(net, set, set, cfg);
  const auto b = train(net, set, set, cfg);
  ASSERT_EQ(history_csv(a.history), history_csv(b.history));
  EXPECT_GE(a.history.back().train_accuracy, 0.95);
  EXPECT_EQ(a.best_val_accuracy, evaluate(a.best, set).accuracy);
  EXPECT_NE(history_csv(a.history).find("epoch,train_loss,train_acc,val_loss,val_acc\n"),
            std::string::npos);
}

TEST(Predict, ZeroDenseGivesSigmoidOfBiasAndIsDeterministic) {
  auto net = build_model<float>(CnnArchitecture::standard(16), 3);
  auto params = net.parameters();
  params[params.size() - 2]->fill(0.0f);
  params.back()->fill(0.75f);
  std::mt19937_64 rng(7);
  const auto imgs = noise_images(2, 16, rng);
  const float p = predict(net, imgs[0]);
  EXPECT_EQ(p, ops::sigmoid(0.75f));
  EXPECT_EQ(predict(net, imgs[1]), p);
  EXPECT_THROW(predict(net, Tensor32({15, 16, 1})), ShapeError);
}

TEST(Predict, BatchPackingInvariance) {
  auto net = build_model<float>(CnnArchitecture::standard(16), 3);
  std::mt19937_64 rng(8);
  // Give batchnorm non-trivial running statistics first.
  const auto warm = noise_images(8, 16, rng);
  std::vector<const Tensor32*> wp;
  for (const auto& w : warm) wp.push_back(&w);
  net.forward(stack_images<float>(wp), nn::Mode::train);

  const auto imgs = noise_images(70, 16, rng);
  std::vector<const Tensor32*> ptrs;
  for (const auto& im : imgs) ptrs.push_back(&im);
  const auto batch = predict_batch(net, ptrs);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    EXPECT_NEAR(predict(net, imgs[i]), batch[i], 1e-6);
  }
}

TEST(GradientSuite, EndToEndSmallDefaultArchitecture) {
  std::mt19937_64 rng(10);
  auto net = build_model<double>(CnnArchitecture::standard(12), 11);
  const Tensor64 x = gradcheck::random_tensor({2, 1, 12, 12}, rng, 0, 1);
  const auto r = gradcheck::check_network(net, x, {0, 1}, 40, rng);
  EXPECT_LE(r.max_rel, 1e-3) << r.worst;
}
