#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ipart/errors.hpp"
#include "ipart/trainer.hpp"

using namespace ipart;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.backbone.widths = {4, 8};
  cfg.backbone.strides = {2, 2};
  cfg.parts = 3;
  cfg.blocks = 1;
  cfg.classes = 4;
  return cfg;
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  return cfg;
}

const Dataset& tiny_data() {
  static const Dataset data = generate(SceneSpec::default_spec(), 16, 77);
  return data;
}

}  // namespace

TEST_CASE("loss combination and schedule") {
  CHECK(std::abs(combine_losses(0.7, 1.3, 1.0, 0.1) - 0.83) < 1e-15);
  CHECK(combine_losses(0.7, 1.3, 1.0, 0.0) == 0.7);

  TrainConfig cfg;
  CHECK(cfg.decay_epoch() == 27);
  cfg.epochs = 3;
  CHECK(cfg.decay_epoch() == 2);

  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.w_reg = 0.0;
  cfg.validate();
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("total loss pieces") {
  Model model = Model::create(tiny_model(), 1);
  const Dataset& data = tiny_data();
  Graph g;
  const ForwardResult fwd = forward(model, g, g.constant(stack_images(data, {0, 1, 2, 3})), Mode::train);
  std::vector<int> labels;
  for (Index i = 0; i < 4; ++i) labels.push_back(data[static_cast<std::size_t>(i)].label);
  const PriorQuantiles q(BetaPrior<double>(1, 1e-3), 4);
  TrainConfig cfg;
  const LossTerms terms = total_loss(fwd, labels, Tensor(Shape{4, 1}), q, cfg);
  CHECK(terms.total.value()[0] ==
        doctest::Approx(combine_losses(terms.classification.value()[0], terms.regularization.value()[0], 1.0, 0.1))
            .epsilon(1e-14));
  CHECK(terms.classification.value()[0] == ops::cross_entropy(fwd.logits[0], labels).value()[0]);
  cfg.w_reg = 0.0;
  CHECK(total_loss(fwd, labels, Tensor(Shape{4, 1}), q, cfg).total.value()[0] == terms.classification.value()[0]);
}

TEST_CASE("a single full-batch step matches hand-computed SGD") {
  const Dataset& data = tiny_data();
  TrainConfig cfg = tiny_train();
  cfg.batch_size = 16;
  cfg.epochs = 1;
  cfg.flip = false;
  Model trained = Model::create(tiny_model(), 2);
  Model reference = Model::create(tiny_model(), 2);
  train(trained, data, cfg);

  std::vector<Index> all(16);
  for (Index i = 0; i < 16; ++i) all[static_cast<std::size_t>(i)] = i;
  std::vector<int> labels;
  for (const Sample& s : data) labels.push_back(s.label);
  Graph g;
  const ForwardResult fwd = forward(reference, g, g.constant(stack_images(data, all)), Mode::train);
  const PriorQuantiles q(cfg.prior(), 16);
  g.backward(total_loss(fwd, labels, Tensor(Shape{16, 1}), q, cfg).total);

  auto got = trained.parameters();
  auto ref = reference.parameters();
  for (std::size_t p = 0; p < ref.size(); ++p) {
    const Tensor* grad = g.parameter_grad(*ref[p].tensor);
    Eigen::VectorXd step = grad ? grad->vec() : Eigen::VectorXd::Zero(ref[p].tensor->size());
    if (ref[p].decay) step += cfg.weight_decay * ref[p].tensor->vec();
    const Eigen::VectorXd expected = ref[p].tensor->vec() - cfg.learning_rate * step;
    INFO(ref[p].name);
    // sample order differs, so sums round differently
    CHECK((got[p].tensor->vec() - expected).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + expected.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  TrainConfig cfg = tiny_train();
  cfg.learning_rate = 0.0;
  Model model = Model::create(tiny_model(), 3);
  const Model before = model;
  const MetricsLog log = train(model, tiny_data(), cfg);
  CHECK(log.epochs.size() == 2);
  CHECK(model.dictionary.parts == before.dictionary.parts);
  CHECK(model.backbone.stages[0].weight == before.backbone.stages[0].weight);
  CHECK(model.head.classifiers[0].weight == before.head.classifiers[0].weight);
  // running statistics still move
  CHECK(!(model.backbone.stages[0].bn.state.running_mean == before.backbone.stages[0].bn.state.running_mean));
}

TEST_CASE("training is deterministic and logs every epoch") {
  TrainConfig cfg = tiny_train();
  cfg.crop = true;
  Model a = Model::create(tiny_model(), 4), b = Model::create(tiny_model(), 4);
  std::vector<Index> seen;
  const MetricsLog la = train(a, tiny_data(), cfg, [&](const EpochMetrics& m) { seen.push_back(m.epoch); });
  const MetricsLog lb = train(b, tiny_data(), cfg);
  CHECK(seen == std::vector<Index>{1, 2});
  CHECK(la.csv() == lb.csv());
  CHECK(encode_tensor_dump(checkpoint_tensors(a)) == encode_tensor_dump(checkpoint_tensors(b)));

  const std::string csv = la.csv();
  CHECK(csv.rfind("epoch,loss,cls_loss,reg_loss,accuracy\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  for (const auto& m : la.epochs) {
    CHECK(std::isfinite(m.loss));
    CHECK(std::abs(m.loss - combine_losses(m.cls_loss, m.reg_loss, 1.0, 0.1)) < 1e-12);
    CHECK(m.accuracy >= 0.0);
    CHECK(m.accuracy <= 1.0);
  }

  TrainConfig other = cfg;
  other.seed = 1;
  Model c = Model::create(tiny_model(), 4);
  train(c, tiny_data(), other);
  CHECK(!(c.dictionary.parts == a.dictionary.parts));
}

TEST_CASE("per-attribute training") {
  ModelConfig mc = tiny_model();
  mc.heads = HeadMode::per_attribute;
  mc.attributes = 4;
  Model model = Model::create(mc, 5);
  const MetricsLog log = train(model, tiny_data(), tiny_train());
  CHECK(std::isfinite(log.epochs.back().loss));

  mc.attributes = 3;
  Model mismatched = Model::create(mc, 5);
  CHECK_THROWS_AS(train(mismatched, tiny_data(), tiny_train()), ConfigError);
}

TEST_CASE("divergence is reported") {
  TrainConfig cfg = tiny_train();
  cfg.batch_size = 4;
  cfg.learning_rate = 1e300;
  Model model = Model::create(tiny_model(), 6);
  try {
    train(model, tiny_data(), cfg);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto path = std::filesystem::temp_directory_path() / "ipart_test_checkpoint.rgt";
  Model model = Model::create(tiny_model(), 7);
  train(model, tiny_data(), tiny_train());
  save_checkpoint(model, path);

  Model other = Model::create(tiny_model(), 8);
  load_checkpoint(other, path);
  CHECK(encode_tensor_dump(checkpoint_tensors(other)) == encode_tensor_dump(checkpoint_tensors(model)));

  Graph ga, gb;
  ga.set_grad_enabled(false);
  gb.set_grad_enabled(false);
  const Tensor images = stack_images(tiny_data(), {0, 1, 2});
  CHECK(forward(model, ga, ga.constant(images), Mode::eval).logits[0].value() ==
        forward(other, gb, gb.constant(images), Mode::eval).logits[0].value());

  ModelConfig wider = tiny_model();
  wider.parts = 4;
  Model incompatible = Model::create(wider, 8);
  CHECK_THROWS_AS(load_checkpoint(incompatible, path), IoError);
  NamedTensors partial = checkpoint_tensors(model);
  partial.pop_back();
  CHECK_THROWS_AS(restore_checkpoint(other, partial), IoError);
  std::filesystem::remove(path);
}
