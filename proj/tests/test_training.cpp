#include <doctest.h>

#include <cmath>

#include "rulstm/errors.hpp"
#include "rulstm/training.hpp"

using namespace rulstm;
using ad::Tape;
using ad::Tensor;

namespace {

RUModelConfig small_config(double dropout = 0.0) {
  RUModelConfig cfg;
  cfg.hidden = 8;
  cfg.modality_dims = {4, 4};
  cfg.modality_names = {"a", "b"};
  cfg.n_actions = 4;
  cfg.n_verbs = 2;
  cfg.n_nouns = 2;
  cfg.dropout_p = dropout;
  cfg.s_enc = 2;
  cfg.s_ant = 4;
  return cfg;
}

// Class c puts a bump on feature c of modality 0; the rest is noise.
std::vector<Sample> fixture(const RUModelConfig& cfg, std::size_t n, std::uint64_t seed) {
  ad::Rng rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.annotation.video_id = "v" + std::to_string(i);
    s.annotation.action = i % cfg.n_actions;
    for (std::size_t m = 0; m < cfg.n_modalities(); ++m) {
      FeatureMatrix fm{static_cast<std::size_t>(cfg.total_steps()), cfg.modality_dims[m], {}};
      for (std::size_t r = 0; r < fm.rows; ++r)
        for (std::size_t c = 0; c < fm.cols; ++c)
          fm.values.push_back(0.3 * (2.0 * ad::uniform01(rng) - 1.0) +
                              (m == 0 && c == s.annotation.action ? 1.0 : 0.0));
      s.modalities.push_back(std::move(fm));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<double>> snapshot(const RUModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, p] : m.named_parameters())
    out.emplace_back(p->value().data().begin(), p->value().data().end());
  return out;
}

StepOutputs constant_step(std::vector<double> scores) {
  StepOutputs s;
  const std::size_t n = scores.size();
  s.fused = Tensor::matrix(1, n, std::move(scores));
  return s;
}

}  // namespace

TEST_SUITE("loss") {
  TEST_CASE("uniform predictions cost ln n") {
    std::vector<StepOutputs> steps(8, constant_step({0.2, 0.2, 0.2, 0.2}));
    std::vector<std::size_t> target{3};
    Tape tape(false);
    CHECK(loss_anticipation(tape, steps, target).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  }

  TEST_CASE("confident correct predictions cost almost nothing") {
    std::vector<StepOutputs> steps(8, constant_step({-15.0, 15.0, -15.0}));
    std::vector<std::size_t> target{1};
    Tape tape(false);
    CHECK(loss_anticipation(tape, steps, target).item() < 1e-4);
  }

  TEST_CASE("no steps") {
    Tape tape(false);
    std::vector<std::size_t> target{1};
    CHECK_THROWS_AS(loss_anticipation(tape, std::vector<StepOutputs>{}, target), ContractError);
  }
}

TEST_SUITE("stages") {
  TEST_CASE("zero learning rate leaves parameters untouched") {
    const auto cfg = small_config(0.5);
    auto data = fixture(cfg, 12, 1);
    RUModel m = RUModel::create(cfg, 3);
    const auto before = snapshot(m);
    TrainConfig tc;
    tc.lr = 0.0;
    tc.batch_size = 4;
    tc.default_epochs = 3;
    ad::Rng rng(5);
    train_scp(m, 0, data, data, tc, rng);
    train_branch(m, 1, data, data, tc, rng);
    CHECK(snapshot(m) == before);
  }

  TEST_CASE("one epoch on one sample moves the branch") {
    const auto cfg = small_config();
    auto data = fixture(cfg, 1, 2);
    for (bool scp : {true, false}) {
      RUModel m = RUModel::create(cfg, 3);
      const auto before = snapshot(m);
      TrainConfig tc;
      tc.default_epochs = 1;
      ad::Rng rng(5);
      if (scp) train_scp(m, 0, data, data, tc, rng);
      else train_branch(m, 0, data, data, tc, rng);
      CHECK(snapshot(m) != before);
      CHECK(m.branch_trained[0] == !scp);
    }
  }

  TEST_CASE("full-batch loss does not increase") {
    // Without dropout and with one batch per epoch the recorded loss is the
    // objective before each plain gradient step.
    const auto cfg = small_config();
    int monotone = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto data = fixture(cfg, 10, seed);
      RUModel m = RUModel::create(cfg, seed);
      TrainConfig tc;
      tc.lr = 0.05;
      tc.momentum = 0.0;
      tc.batch_size = 10;
      tc.default_epochs = 50;
      ad::Rng rng(seed);
      for (bool scp : {true, false}) {
        auto rep = scp ? train_scp(m, 0, data, data, tc, rng) : train_branch(m, 0, data, data, tc, rng);
        bool ok = true;
        for (std::size_t e = 1; e < rep.epochs.size(); ++e)
          ok = ok && rep.epochs[e].train_loss <= rep.epochs[e - 1].train_loss;
        monotone += ok;
      }
    }
    CHECK(monotone >= 8);
  }

  TEST_CASE("best epoch is restored from an injected metric trajectory") {
    const auto cfg = small_config(0.3);
    auto data = fixture(cfg, 8, 3);
    RUModel m = RUModel::create(cfg, 3);
    const std::vector<double> trajectory{50, 70, 70, 60};
    std::vector<std::vector<std::vector<double>>> seen;
    StageSpec spec{"probe", ForwardMode::anticipation, Fusion::single(0), 4,
                   [&](const RUModel& model, int epoch) {
                     seen.push_back(snapshot(model));
                     return trajectory[static_cast<std::size_t>(epoch - 1)];
                   }};
    TrainConfig tc;
    tc.batch_size = 3;
    ad::Rng rng(9);
    auto rep = train_stage(m, data, {}, spec, tc, rng);
    CHECK(rep.selected_epoch == 2);
    CHECK(rep.best_metric == 70.0);
    REQUIRE(rep.epochs.size() == 4);
    CHECK(snapshot(m) == seen[1]);
    CHECK(seen[1] != seen[3]);
  }

  TEST_CASE("selected epoch reproduces the reported metric") {
    const auto cfg = small_config(0.3);
    auto train = fixture(cfg, 16, 4);
    auto val = fixture(cfg, 8, 5);
    RUModel m = RUModel::create(cfg, 4);
    TrainConfig tc;
    tc.batch_size = 4;
    tc.default_epochs = 6;
    ad::Rng rng(2);
    auto rep = train_branch(m, 0, train, val, tc, rng);
    const auto table = run_inference(m, val, ForwardMode::anticipation, Fusion::single(0)).table;
    CHECK(validation_metric(table, tc.early_stop_metric) == rep.best_metric);
    CHECK(rep.epochs[static_cast<std::size_t>(rep.selected_epoch - 1)].val_metric == rep.best_metric);
  }

  TEST_CASE("argument errors") {
    const auto cfg = small_config();
    auto data = fixture(cfg, 4, 1);
    RUModel m = RUModel::create(cfg, 1);
    TrainConfig tc;
    tc.default_epochs = 1;
    tc.joint_epochs = 1;
    ad::Rng rng(1);
    CHECK_THROWS_AS(train_scp(m, 0, std::vector<Sample>{}, data, tc, rng), DataError);
    CHECK_THROWS_AS(train_joint(m, data, data, tc, rng), ContractError);
    tc.require_pretrained = false;
    CHECK_NOTHROW(train_joint(m, data, data, tc, rng));
    tc.lr = -1.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc.lr = 0.1;
    tc.momentum = 1.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
  }

  TEST_CASE("per-modality epoch lists fall back to the default") {
    TrainConfig tc;
    tc.default_epochs = 7;
    tc.scp_epochs = {3};
    CHECK(tc.scp_epochs_for(0) == 3);
    CHECK(tc.scp_epochs_for(1) == 7);
    CHECK(tc.branch_epochs_for(0) == 7);
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("stage order and determinism") {
    const auto cfg = small_config(0.3);
    auto train = fixture(cfg, 12, 6);
    auto val = fixture(cfg, 6, 7);
    TrainConfig tc;
    tc.batch_size = 4;
    tc.default_epochs = 2;
    tc.joint_epochs = 2;
    tc.seed = 13;
    auto a = run_pipeline(cfg, tc, Fusion::matt(), train, val);
    auto b = run_pipeline(cfg, tc, Fusion::matt(), train, val);
    std::vector<std::string> stages;
    for (const auto& r : a.reports) stages.push_back(r.stage);
    CHECK(stages == std::vector<std::string>{"scp:0", "branch:0", "scp:1", "branch:1", "joint"});
    CHECK(snapshot(a.model) == snapshot(b.model));
    CHECK(a.reports_json().dump() == b.reports_json().dump());

    tc.use_scp = false;
    auto c = run_pipeline(cfg, tc, Fusion::early(), train, val);
    REQUIRE(c.reports.size() == 1);
    CHECK(c.reports[0].stage == "branch:early");
  }
}
