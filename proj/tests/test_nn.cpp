#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "reference_model.hpp"
#include "sfcsplit/checkpoint.hpp"
#include "sfcsplit/dataset.hpp"
#include "sfcsplit/nn.hpp"

using namespace sfcsplit;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  Tensor<T> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : t.data) v = static_cast<T>(n(rng));
  return t;
}

std::vector<std::uint32_t> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint32_t> out(n);
  for (auto& l : out) l = static_cast<std::uint32_t>(rng() % classes);
  return out;
}

double model_loss(nn::SubModel<double>& m, const Tensor<double>& x, const std::vector<std::uint32_t>& y) {
  return nn::loss_and_grad(m.forward(x), y).loss;
}

}  // namespace

TEST(Kernels, DenseForwardMatchesHandComputation) {
  nn::Layer<double> l;
  l.in_dim = 2;
  l.out_dim = 2;
  l.weights = Tensor<double>({2, 2}, {1.0, -2.0, 3.0, 4.0});
  l.bias = Tensor<double>({2}, {0.5, -100.0});
  const Tensor<double> x({1, 2}, {1.0, 2.0});
  const auto y = nn::dense_forward(l, x);
  EXPECT_DOUBLE_EQ(y.data[0], 7.5);
  EXPECT_DOUBLE_EQ(y.data[1], 0.0);
  l.activation = nn::Activation::Identity;
  EXPECT_DOUBLE_EQ(nn::dense_forward(l, x).data[1], -94.0);
}

TEST(Kernels, ForwardRejectsWrongWidth) {
  auto g = nn::GlobalModel<float>::init({4, 3, 2}, 1);
  EXPECT_THROW(nn::dense_forward(g.layers[0], Tensor<float>({2, 5})), ShapeError);
}

TEST(Kernels, UniformLogitsGiveLogClasses) {
  const Tensor<double> logits({2, 4});
  const auto res = nn::loss_and_grad(logits, {0, 3});
  EXPECT_NEAR(res.loss, std::log(4.0), 1e-15);
  EXPECT_NEAR(res.grad.at(0, 0), (0.25 - 1.0) / 2.0, 1e-15);
  EXPECT_NEAR(res.grad.at(1, 1), 0.25 / 2.0, 1e-15);
}

TEST(Kernels, LossRejectsOutOfRangeLabel) {
  EXPECT_THROW(nn::loss_and_grad(Tensor<double>({1, 3}), {3}), std::out_of_range);
}

TEST(Gradients, CentralDifferencesMatchBackprop) {
  auto global = nn::GlobalModel<double>::init({8, 7, 6, 5}, 42);
  for (auto& l : global.layers) {
    std::mt19937_64 rng(l.out_dim);
    for (auto& b : l.bias.data) b = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  }
  auto model = nn::as_single(global);
  const auto x = random_tensor<double>({4, 8}, 3);
  const auto y = random_labels(4, 5, 4);

  const auto res = nn::loss_and_grad(model.forward(x), y);
  const auto back = model.backward(res.grad, true);

  const double h = 1e-6;
  std::size_t checked = 0;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = model_loss(model, x, y);
    param = saved - h;
    const double down = model_loss(model, x, y);
    param = saved;
    const double numeric = (up - down) / (2 * h);
    const double err = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-8);
    EXPECT_LT(err, 1e-4) << "analytic " << analytic << " numeric " << numeric;
    ++checked;
  };
  for (std::size_t l = 0; l < model.depth(); ++l) {
    auto& layer = model.layers()[l];
    for (std::size_t k = 0; k < layer.weights.data.size(); ++k) check(layer.weights.data[k], back.grads[l].weights.data[k]);
    for (std::size_t k = 0; k < layer.bias.data.size(); ++k) check(layer.bias.data[k], back.grads[l].bias.data[k]);
  }
  EXPECT_EQ(checked, 8u * 7 + 7 + 7 * 6 + 6 + 6 * 5 + 5);
}

TEST(Gradients, InputGradientMatchesCentralDifferences) {
  auto model = nn::as_single(nn::GlobalModel<double>::init({6, 5, 3}, 8));
  auto x = random_tensor<double>({2, 6}, 9);
  const auto y = random_labels(2, 3, 10);
  const auto back = model.backward(nn::loss_and_grad(model.forward(x), y).grad, true);
  for (std::size_t k = 0; k < x.data.size(); ++k) {
    const double saved = x.data[k];
    x.data[k] = saved + 1e-6;
    const double up = model_loss(model, x, y);
    x.data[k] = saved - 1e-6;
    const double down = model_loss(model, x, y);
    x.data[k] = saved;
    EXPECT_NEAR(back.input_grad.data[k], (up - down) / 2e-6, 1e-7);
  }
}

TEST(Gradients, BackwardBeforeForwardThrows) {
  auto model = nn::as_single(nn::GlobalModel<double>::init({3, 2, 2}, 1));
  EXPECT_THROW(model.backward(Tensor<double>({1, 2})), ProtocolError);
}

TEST(Gradients, LossAndGradAgreeWithReferenceModel) {
  const auto global = nn::GlobalModel<double>::init({5, 6, 4}, 17);
  auto model = nn::as_single(global);
  const auto x = random_tensor<double>({3, 5}, 1);
  const auto y = random_labels(3, 4, 2);
  const auto res = nn::loss_and_grad(model.forward(x), y);
  const auto back = model.backward(res.grad, false);

  const auto ref = refmodel::from_layers(global.layers);
  const auto pass = refmodel::forward(ref, refmodel::to_matrix(x));
  EXPECT_NEAR(res.loss, refmodel::loss(pass.acts.back(), y), 1e-13);
  const auto g = refmodel::backward(ref, pass, y);
  for (std::size_t l = 0; l < ref.size(); ++l) {
    for (std::size_t i = 0; i < ref[l].in; ++i) {
      for (std::size_t j = 0; j < ref[l].out; ++j) {
        EXPECT_NEAR(back.grads[l].weights.data[i * ref[l].out + j], g.w[l][j][i], 1e-14);
      }
    }
  }
}

TEST(LearningRate, DividesByFiveAtEachBoundary) {
  nn::TrainConfig cfg;
  EXPECT_DOUBLE_EQ(nn::lr_schedule(cfg, 1), 0.1);
  EXPECT_DOUBLE_EQ(nn::lr_schedule(cfg, 60), 0.1);
  EXPECT_NEAR(nn::lr_schedule(cfg, 61), 0.02, 1e-17);
  EXPECT_NEAR(nn::lr_schedule(cfg, 121), 0.1 / 25, 1e-17);
  EXPECT_NEAR(nn::lr_schedule(cfg, 161), 8e-4, 1e-17);
  EXPECT_NEAR(nn::lr_schedule(cfg, 200), 8e-4, 1e-17);
}

TEST(Sgd, MomentumAndWeightDecayClosedForm) {
  std::vector<nn::Layer<double>> layers(1);
  layers[0].in_dim = 1;
  layers[0].out_dim = 1;
  layers[0].weights = Tensor<double>({1, 1}, {2.0});
  layers[0].bias = Tensor<double>({1}, {0.0});
  std::vector<nn::LayerGrads<double>> grads{{Tensor<double>({1, 1}, {1.0}), Tensor<double>({1}, {0.0})}};
  nn::TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.01;
  nn::OptimizerState<double> state;

  nn::sgd_step(layers, grads, state, cfg, 1);
  // g = 1 + 0.01*2 = 1.02; v = 1.02; w = 2 - 0.102
  EXPECT_NEAR(layers[0].weights.data[0], 1.898, 1e-15);
  nn::sgd_step(layers, grads, state, cfg, 1);
  const double g2 = 1.0 + 0.01 * 1.898;
  const double v2 = 0.9 * 1.02 + g2;
  EXPECT_NEAR(layers[0].weights.data[0], 1.898 - 0.1 * v2, 1e-15);
}

TEST(Sgd, RejectsMismatchedGradients) {
  auto g = nn::GlobalModel<double>::init({3, 2, 2}, 1);
  nn::OptimizerState<double> state;
  EXPECT_THROW(nn::sgd_step(g.layers, std::vector<nn::LayerGrads<double>>(1), state, nn::TrainConfig{}, 1),
               ShapeError);
}

TEST(Split, SizesFromCuts) {
  EXPECT_EQ(nn::split_sizes(37, {2, 10, 19}), (std::vector<std::size_t>{2, 8, 9, 18}));
  EXPECT_EQ(nn::split_sizes(7, {2, 4, 5}), (std::vector<std::size_t>{2, 2, 1, 2}));
  EXPECT_THROW(nn::split_sizes(7, {}), std::invalid_argument);
  EXPECT_THROW(nn::split_sizes(7, {3, 3}), std::invalid_argument);
  EXPECT_THROW(nn::split_sizes(7, {7}), std::invalid_argument);
}

TEST(Split, SlicesAreContiguousAndMergeBack) {
  const auto g = nn::GlobalModel<float>::init({6, 5, 4, 4, 3, 2, 2, 3}, 5);
  const auto subs = nn::split_model(g, {2, 4, 5});
  ASSERT_EQ(subs.size(), 4u);
  EXPECT_EQ(subs[1].first_layer(), 3u);
  EXPECT_EQ(subs[1].input_dim(), subs[0].output_dim());
  EXPECT_EQ(subs[3].depth(), 2u);
  EXPECT_EQ(nn::merge(subs).layers, g.layers);
}

TEST(Split, ChainedForwardBackwardIsBitIdentical) {
  const auto g = nn::GlobalModel<float>::init({7, 6, 5, 5, 4, 3}, 23);
  auto subs = nn::split_model(g, {1, 3});
  auto whole = nn::as_single(g);
  const auto x = random_tensor<float>({5, 7}, 2);
  const auto y = random_labels(5, 3, 3);

  Tensor<float> a = x;
  for (auto& s : subs) a = s.forward(a);
  const auto whole_logits = whole.forward(x);
  EXPECT_EQ(a.data, whole_logits.data);

  const auto loss = nn::loss_and_grad(a, y);
  std::vector<nn::LayerGrads<float>> chained;
  Tensor<float> up = loss.grad;
  for (std::size_t k = subs.size(); k-- > 0;) {
    auto r = subs[k].backward(up, k > 0);
    chained.insert(chained.begin(), r.grads.begin(), r.grads.end());
    up = r.input_grad;
  }
  const auto ref = whole.backward(nn::loss_and_grad(whole_logits, y).grad, false);
  ASSERT_EQ(chained.size(), ref.grads.size());
  for (std::size_t l = 0; l < chained.size(); ++l) {
    EXPECT_EQ(chained[l].weights.data, ref.grads[l].weights.data);
    EXPECT_EQ(chained[l].bias.data, ref.grads[l].bias.data);
  }
}

TEST(Init, SeededAndShaped) {
  const auto a = nn::GlobalModel<float>::init({4, 3, 2}, 9);
  const auto b = nn::GlobalModel<float>::init({4, 3, 2}, 9);
  const auto c = nn::GlobalModel<float>::init({4, 3, 2}, 10);
  EXPECT_EQ(a.layers, b.layers);
  EXPECT_NE(a.layers, c.layers);
  EXPECT_EQ(a.layers[1].activation, nn::Activation::Identity);
  EXPECT_EQ(a.layers[0].activation, nn::Activation::Relu);
  const double limit = std::sqrt(6.0 / 7.0);
  for (float w : a.layers[0].weights.data) EXPECT_LE(std::abs(w), limit);
}

TEST(Checkpoint, RoundTripsThroughFile) {
  const auto g = nn::GlobalModel<float>::init({4, 3, 2}, 9);
  const auto path = std::filesystem::temp_directory_path() / "sfcsplit_test_model.nsfm";
  save_checkpoint(g.layers, path);
  EXPECT_EQ(load_checkpoint<float>(path), g.layers);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptBytes) {
  auto bytes = encode_checkpoint(nn::GlobalModel<double>::init({2, 2, 2}, 1).layers);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint<double>(bad_magic), std::runtime_error);
  bytes.push_back(0);
  EXPECT_THROW(decode_checkpoint<double>(bytes), std::runtime_error);
}

TEST(Dataset, BlobsAreSeededAndBalanced) {
  BlobSpec spec{100, 5, 4, 2.0, 1.0, 3};
  const auto a = make_gaussian_blobs(spec);
  const auto b = make_gaussian_blobs(spec);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.size(), 100u);
  std::vector<int> counts(4);
  for (auto l : a.labels) ++counts[l];
  EXPECT_EQ(counts, (std::vector<int>{25, 25, 25, 25}));
}

TEST(Dataset, EpochBatchesCoverEverySampleOnce) {
  const auto batches = epoch_batches(10, 4, 1, 1);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches.back().size(), 2u);
  std::vector<std::size_t> all;
  for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(all[i], i);
  EXPECT_NE(epoch_batches(10, 4, 1, 2), batches);
}

TEST(Dataset, FlatFileRoundTrip) {
  const auto ds = make_gaussian_blobs({12, 3, 2, 1.0, 1.0, 5});
  const auto path = std::filesystem::temp_directory_path() / "sfcsplit_test_data.nsfd";
  save_flat_dataset(ds, path);
  const auto back = load_flat_dataset(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.labels, ds.labels);
  ASSERT_EQ(back.features.size(), ds.features.size());
  for (std::size_t i = 0; i < ds.features.size(); ++i) {
    EXPECT_EQ(back.features[i], static_cast<double>(static_cast<float>(ds.features[i])));
  }
}
