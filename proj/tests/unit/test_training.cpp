#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lostgan/error.hpp"
#include "lostgan/ops.hpp"
#include "lostgan/training.hpp"
#include "test_support.hpp"

using namespace lostgan;
using lostgan::testing::grad_check;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(int classes = 4) {
  ExperimentConfig c;
  c.generator.ch = 2;
  c.generator.n_blocks = 1;
  c.generator.d_noise = 4;
  c.generator.d_obj_noise = 3;
  c.generator.d_e = 4;
  c.generator.mask_size = 8;
  c.generator.mask_channels = 4;
  c.generator.num_classes = classes;
  c.discriminator.ch = 2;
  c.discriminator.lattice = 8;
  c.discriminator.n_backbone_blocks = 2;
  c.discriminator.roi_size = 2;
  c.discriminator.num_classes = classes;
  c.train.batch_size = 4;
  c.train.seed = 5;
  return c;
}

const LayoutDataset& tiny_data() {
  static const LayoutDataset ds = make_synthetic_corpus(SyntheticSceneSpec::standard(4, 8), 12, 3);
  return ds;
}

ExperimentConfig small_config() {
  auto c = experiment_preset("desk32", 4);
  c.generator.ch = 4;
  c.generator.d_noise = c.generator.d_obj_noise = c.generator.d_e = 8;
  c.generator.mask_channels = 4;
  c.discriminator.ch = 4;
  c.train.batch_size = 4;
  c.train.seed = 9;
  return c;
}

const LayoutDataset& small_data() {
  static const LayoutDataset ds = make_synthetic_corpus(SyntheticSceneSpec::standard(4, 32), 16, 4);
  return ds;
}

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "lostgan_training_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

// Hinge-loss table.

TEST(HingeTable, RealScoreTwoIsZero) { EXPECT_EQ(hinge_d_term(2.0, true), 0.0); }
TEST(HingeTable, RealScoreZeroIsOne) { EXPECT_EQ(hinge_d_term(0.0, true), 1.0); }
TEST(HingeTable, FakeScoreMinusThreeIsZero) { EXPECT_EQ(hinge_d_term(-3.0, false), 0.0); }

TEST(HingeTable, DStepLambdaZeroDropsObjectTerms) {
  const auto r = d_losses_from_scores({0.2}, {-4.0}, {0.1}, {5.0}, 0.0);
  EXPECT_EQ(r.d_total, (1.0 - 0.2) + (1.0 + 0.1));
  EXPECT_EQ(r.d_loss_real_obj, 5.0);
  EXPECT_EQ(r.d_loss_fake_obj, 6.0);
}

TEST(HingeTable, DStepHandSetScoresTotalOne) {
  const auto r = d_losses_from_scores({0.5}, {1.5}, {-0.5}, {-2.0}, 1.0);
  EXPECT_EQ(r.d_loss_real_img, 0.5);
  EXPECT_EQ(r.d_loss_real_obj, 0.0);
  EXPECT_EQ(r.d_loss_fake_img, 0.5);
  EXPECT_EQ(r.d_loss_fake_obj, 0.0);
  EXPECT_EQ(r.d_total, 1.0);
}

TEST(HingeTable, DStepDefaultLambdaIsOne) {
  EXPECT_EQ(TrainConfig{}.lambda, 1.0);
  EXPECT_EQ(experiment_preset("coco64", 171).train.lambda, 1.0);
}

TEST(HingeTable, GStepScoresOneAndTwo) {
  const auto r = g_losses_from_scores({1.0}, {2.0}, 1.0);
  EXPECT_EQ(r.g_total, -3.0);
}

TEST(HingeTable, GStepLambdaZero) {
  const auto r = g_losses_from_scores({1.0, 2.0, 4.5}, {7.0, -1.0, 3.0}, 0.0);
  EXPECT_EQ(r.g_total, -(1.0 + 2.0 + 4.5) / 3);
}

TEST(HingeTable, GLossReachesMaskNet) {
  auto config = tiny_config();
  Generator g(config.generator);
  Discriminator d(config.discriminator);
  const auto batch = make_batch(tiny_data(), {0, 1, 2, 3});
  const auto styles = styles_for_step(batch.layouts, config.generator, 1, 0, NoisePurpose::kGeneratorStep);
  auto loss = [&] {
    const auto out = g.generate(batch.layouts, styles, true);
    const auto s = d.score(out.image, batch.layouts, false);
    return ag::scale(ag::add(ag::mean(s.s_img), ag::mean(s.s_obj)), -1.0);
  };
  ag::Var& w = g.mask_net().head.weight;
  w.set_requires_grad(true);
  const double h = 1e-5;
  double largest = 0.0;
  for (std::int64_t i = 0; i < w.value().numel(); ++i) {
    ag::NoGradGuard guard;
    const double saved = w.value()[i];
    w.mutable_value()[i] = saved + h;
    const double plus = loss().value().item();
    w.mutable_value()[i] = saved - h;
    const double minus = loss().value().item();
    w.mutable_value()[i] = saved;
    largest = std::max(largest, std::abs(plus - minus) / (2 * h));
  }
  EXPECT_GT(largest, 1e-8);
  const auto r = grad_check(loss, {w}, 8);
  EXPECT_TRUE(r.ok()) << r.first_failure;
}

TEST(Hinge, DifferentiableMean) {
  ag::Var s(Tensor({4}, std::vector<double>{-2.0, 0.5, 1.5, -0.25}), true);
  const auto real = hinge_d_term(s, true);
  EXPECT_DOUBLE_EQ(real.value().item(), (3.0 + 0.5 + 0.0 + 1.25) / 4);
  ag::backward(real);
  EXPECT_EQ(s.grad()[0], -0.25);
  EXPECT_EQ(s.grad()[2], 0.0);
  const auto r = grad_check([&] { return hinge_d_term(s, false); }, {s});
  EXPECT_TRUE(r.ok()) << r.first_failure;
}

TEST(Hinge, LipschitzAndNonNegative) {
  for (double a = -3.0; a <= 3.0; a += 0.37)
    for (double b = -3.0; b <= 3.0; b += 0.41)
      for (bool real : {true, false}) {
        EXPECT_GE(hinge_d_term(a, real), 0.0);
        EXPECT_LE(std::abs(hinge_d_term(a, real) - hinge_d_term(b, real)), std::abs(a - b) + 1e-15);
      }
  EXPECT_EQ(hinge_d_term(1.0, true), 0.0);
  EXPECT_GT(hinge_d_term(0.999, true), 0.0);
  EXPECT_EQ(hinge_d_term(-1.0, false), 0.0);
}

TEST(GradCheck, TinyModelGeneratorAndDiscriminatorLosses) {
  auto config = tiny_config();
  Generator g(config.generator);
  Discriminator d(config.discriminator);
  const auto batch = make_batch(tiny_data(), {4, 5, 6});
  const auto styles = styles_for_step(batch.layouts, config.generator, 2, 0, NoisePurpose::kDiscriminatorStep);
  const ag::Var real(batch.images);

  auto d_loss = [&] {
    const auto fake = g.generate(batch.layouts, styles, true).image;
    const auto sr = d.score(real, batch.layouts, false);
    const auto sf = d.score(fake, batch.layouts, false);
    return ag::add(ag::add(hinge_d_term(sr.s_img, true), hinge_d_term(sf.s_img, false)),
                   ag::add(hinge_d_term(sr.s_obj, true), hinge_d_term(sf.s_obj, false)));
  };
  auto g_loss = [&] {
    const auto s = d.score(g.generate(batch.layouts, styles, true).image, batch.layouts, false);
    return ag::scale(ag::add(ag::mean(s.s_img), ag::mean(s.s_obj)), -1.0);
  };

  auto gp = g.parameters(), dp = d.parameters();
  std::vector<ag::Var> g_leaves, d_leaves;
  for (auto& p : gp.parameters) g_leaves.push_back(p.var);
  for (auto& p : dp.parameters) d_leaves.push_back(p.var);

  gp.set_requires_grad(false);
  dp.set_requires_grad(true);
  const auto rd = grad_check(d_loss, d_leaves, 6);
  EXPECT_TRUE(rd.ok()) << rd.first_failure << " (" << rd.failed << " of " << rd.checked << ")";

  gp.set_requires_grad(true);
  dp.set_requires_grad(false);
  const auto rg = grad_check(g_loss, g_leaves, 6);
  EXPECT_TRUE(rg.ok()) << rg.first_failure << " (" << rg.failed << " of " << rg.checked << ")";
}

TEST(Trainer, StepsTouchOnlyTheirOwnParameters) {
  Trainer t(tiny_config(), tiny_data());
  const auto batch = t.batches().batch_for_step(0);
  const auto g0 = t.generator().parameters().value_hash(), d0 = t.discriminator().parameters().value_hash();
  ScoreRecord real, fake;
  const auto dr = t.d_step(batch, &real, &fake);
  EXPECT_EQ(t.generator().parameters().value_hash(), g0);
  const auto d1 = t.discriminator().parameters().value_hash();
  EXPECT_NE(d1, d0);
  const auto recomputed = d_losses_from_scores(real.s_img, real.s_obj, fake.s_img, fake.s_obj, 1.0);
  EXPECT_EQ(dr.d_total, recomputed.d_total);
  EXPECT_EQ(dr.d_loss_fake_obj, recomputed.d_loss_fake_obj);

  ScoreRecord gen;
  const auto gr = t.g_step(batch, &gen);
  EXPECT_EQ(t.discriminator().parameters().value_hash(), d1);
  EXPECT_NE(t.generator().parameters().value_hash(), g0);
  EXPECT_EQ(gr.g_total, g_losses_from_scores(gen.s_img, gen.s_obj, 1.0).g_total);
}

TEST(Trainer, LambdaZeroTotalsUseImageTermsOnly) {
  auto config = tiny_config();
  config.train.lambda = 0.0;
  Trainer t(config, tiny_data());
  const auto r = t.train_step().losses;
  EXPECT_EQ(r.d_total, r.d_loss_real_img + r.d_loss_fake_img);
  EXPECT_EQ(r.g_total, r.g_loss_img);
}

TEST(Trainer, ShortRunStaysFinite) {
  Trainer t(tiny_config(), tiny_data());
  for (int i = 0; i < 30; ++i) {
    const auto r = t.train_step().losses;
    for (double v : {r.d_total, r.g_total, r.d_loss_real_obj, r.g_loss_obj}) ASSERT_TRUE(std::isfinite(v));
  }
  EXPECT_EQ(t.step(), 30);
}

TEST(Trainer, ResumeReproducesNextStep) {
  const auto config = small_config();
  Trainer straight(config, small_data());
  straight.train_step();
  straight.train_step();
  const auto path = temp_path("resume.lgc");
  straight.save_checkpoint(path);
  const auto expected = straight.train_step().losses;

  Trainer resumed(config, small_data());
  resumed.restore(Checkpoint::load(path));
  EXPECT_EQ(resumed.step(), 2);
  const auto got = resumed.train_step().losses;
  EXPECT_NEAR(got.d_total, expected.d_total, 1e-6);
  EXPECT_NEAR(got.g_total, expected.g_total, 1e-6);
  EXPECT_NEAR(got.d_loss_fake_obj, expected.d_loss_fake_obj, 1e-6);
  EXPECT_NEAR(got.g_loss_obj, expected.g_loss_obj, 1e-6);
  EXPECT_EQ(resumed.generator().parameters().value_hash(), straight.generator().parameters().value_hash());
}

TEST(Trainer, RestoreRejectsOtherModel) {
  Trainer a(tiny_config(), tiny_data());
  auto other = tiny_config();
  other.generator.ch = 3;
  Trainer b(other, tiny_data());
  try {
    b.restore(a.checkpoint());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCheckpointIOError);
  }
}

TEST(Checkpoint, SerializeRoundTrip) {
  Checkpoint c;
  c.metadata = {{"kind", "test"}, {"step", 3}};
  c.arrays["a"] = Tensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, -6.5});
  c.arrays["scalar"] = Tensor::scalar(0.1);
  const auto bytes = c.serialize();
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "LOSTGANC");
  const auto back = Checkpoint::deserialize(bytes);
  EXPECT_EQ(back.metadata, c.metadata);
  EXPECT_EQ(back.arrays, c.arrays);
  EXPECT_EQ(back.content_hash(), c.content_hash());

  const auto path = temp_path("roundtrip.lgc");
  c.save(path);
  EXPECT_EQ(Checkpoint::load(path).arrays, c.arrays);

  auto corrupt = bytes;
  corrupt[0] = 'X';
  EXPECT_THROW(Checkpoint::deserialize(corrupt), Error);
  corrupt = bytes;
  corrupt.resize(corrupt.size() - 5);
  EXPECT_THROW(Checkpoint::deserialize(corrupt), Error);
  EXPECT_THROW(Checkpoint::load(temp_path("absent.lgc")), Error);
}

TEST(Checkpoint, RestoreParametersChecksNamesAndShapes) {
  Generator g(tiny_config().generator);
  auto set = g.parameters();
  Checkpoint c;
  store_parameters(set, c);
  EXPECT_NO_THROW(restore_parameters(set, c));
  auto reshaped = c;
  reshaped.arrays.begin()->second = Tensor({1});
  EXPECT_THROW(restore_parameters(set, reshaped), Error);
  auto missing = c;
  missing.arrays.erase(missing.arrays.begin());
  EXPECT_THROW(restore_parameters(set, missing), Error);
}

TEST(Noise, StylesArePerSampleAndPurpose) {
  const auto config = tiny_config().generator;
  const auto batch = make_batch(tiny_data(), {0, 1});
  const auto a = styles_for_step(batch.layouts, config, 3, 10, NoisePurpose::kGeneratorStep);
  EXPECT_EQ(a, styles_for_step(batch.layouts, config, 3, 10, NoisePurpose::kGeneratorStep));
  EXPECT_NE(a, styles_for_step(batch.layouts, config, 3, 10, NoisePurpose::kDiscriminatorStep));
  EXPECT_NE(a, styles_for_step(batch.layouts, config, 3, 11, NoisePurpose::kGeneratorStep));
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].objects(), batch.layouts[0].size());
  EXPECT_EQ(a[0].z_img.size(), static_cast<std::size_t>(config.d_noise));
  EXPECT_EQ(a[0].z_obj[0].size(), static_cast<std::size_t>(config.d_obj_noise));
  const std::uint64_t expected_seed = derive_seed(derive_seed(derive_seed(3, 2), 10), 1);
  EXPECT_EQ(a[1], sample_style(batch.layouts[1].size(), config.d_noise, config.d_obj_noise, expected_seed));
}

TEST(Config, PresetsAndJson) {
  for (const auto& name : experiment_preset_names()) {
    const auto c = experiment_preset(name, 8);
    EXPECT_NO_THROW(c.validate()) << name;
    EXPECT_EQ(ExperimentConfig::from_json(c.to_json()).to_json(), c.to_json());
  }
  EXPECT_EQ(experiment_preset("desk32", 8).generator.output_side(), 32);
  EXPECT_EQ(experiment_preset("coco64", 171).generator.output_side(), 64);
  EXPECT_EQ(experiment_preset("coco128", 171).generator.n_blocks, 5);
  EXPECT_THROW(experiment_preset("nope", 8), Error);

  const auto path = temp_path("config.json");
  std::ofstream(path) << "// desk run\n{\"train\": {\"lambda\": 0.5}}\n";
  auto loaded = ExperimentConfig::load(path);
  EXPECT_EQ(loaded.train.lambda, 0.5);

  auto bad = experiment_preset("desk32", 8);
  bad.discriminator.lattice = 64;
  EXPECT_THROW(bad.validate(), Error);
  bad = experiment_preset("desk32", 8);
  bad.train.lambda = -1.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet set;
  ag::Var p(Tensor({2}, std::vector<double>{1.0, -1.0}), true);
  set.add("p", p);
  Adam opt(set, {0.1, 0.0, 0.999, 1e-8});
  ag::backward(ag::sum(ag::mul(p, ag::Var(Tensor({2}, std::vector<double>{3.0, -0.5})))));
  opt.step();
  EXPECT_NEAR(p.value()[0], 0.9, 1e-7);
  EXPECT_NEAR(p.value()[1], -0.9, 1e-7);
  EXPECT_EQ(opt.steps(), 1);
}
