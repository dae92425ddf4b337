#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bisenet/checkpoint.hpp"
#include "bisenet/trainer.hpp"
#include "fixtures.hpp"

using namespace bisenet;
namespace fs = std::filesystem;

namespace {

EngineConfig small_config() {
  EngineConfig c;
  c.model = fixture::tiny_config(3);
  c.train.synth_count = 4;
  c.train.synth_height = 32;
  c.train.synth_width = 32;
  c.train.batch_size = 2;
  c.augment.crop_h = 32;
  c.augment.crop_w = 32;
  c.sgd.max_iter = 12;
  c.seed = 3;
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("loss log format") {
    CHECK(loss_csv_header() == "iter,lr,L,lp,l2,l3");
    const TrainStep s{7, 0.1, 1.0 / 3.0, 0.25, 2.5, 1e-300};
    const auto row = loss_csv_row(s);
    CHECK(row == "7,0.1,0.3333333333333333,0.25,2.5,1e-300");
  }

  TEST_CASE("batches cycle through the set") {
    const auto cfg = small_config();
    Trainer t(cfg, load_training_data(cfg));
    CHECK(t.batch_indices(0) == std::vector<std::int64_t>{0, 1});
    CHECK(t.batch_indices(1) == std::vector<std::int64_t>{2, 3});
    CHECK(t.batch_indices(2) == std::vector<std::int64_t>{0, 1});
    const auto [x, y] = t.make_batch(1);
    CHECK(x.shape() == Shape{2, 3, 32, 32});
    CHECK(y.n == 2);
  }

  TEST_CASE("steps follow the poly schedule and are reproducible") {
    const auto cfg = small_config();
    Trainer a(cfg, load_training_data(cfg)), b(cfg, load_training_data(cfg));
    const auto ha = a.run(), hb = b.run();
    REQUIRE(ha.size() == 12);
    for (std::size_t i = 0; i < ha.size(); ++i) {
      CHECK(ha[i].iter == static_cast<std::int64_t>(i));
      CHECK(std::abs(ha[i].lr - poly_lr(cfg.sgd, ha[i].iter)) <= 1e-12);
      CHECK(loss_csv_row(ha[i]) == loss_csv_row(hb[i]));
      CHECK(std::isfinite(ha[i].total));
      CHECK(ha[i].total == doctest::Approx(ha[i].lp + cfg.model.aux_loss_weight * (ha[i].l2 + ha[i].l3)));
    }
    for (std::size_t i = 0; i < a.store().size(); ++i)
      CHECK(a.store().entries()[i].value == b.store().entries()[i].value);
    CHECK(a.store().iteration == 12);
    CHECK(a.iteration() == 12);
  }

  TEST_CASE("loss falls on a fixed batch") {
    auto cfg = small_config();
    cfg.train.augment = false;
    cfg.train.batch_size = 4;
    cfg.sgd.max_iter = 300;
    Trainer t(cfg, load_training_data(cfg));
    const auto h = t.run();
    INFO("initial " << h.front().total << " final " << h.back().total);
    CHECK(h.back().total < h.front().total / 5.0);
  }

  TEST_CASE("non-finite losses stop training with a numeric error") {
    const auto cfg = small_config();
    Trainer t(cfg, load_training_data(cfg));
    for (auto& v : t.store().at("head.main.cls.bias").value.data()) v = std::nanf("");
    try {
      (void)t.step();
      FAIL("expected a numeric error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kNumeric);
    }
  }

  TEST_CASE("odd sizes and empty sets are data errors") {
    auto cfg = small_config();
    cfg.train.augment = false;
    cfg.train.synth_height = 40;
    Trainer t(cfg, load_training_data(cfg));
    try {
      (void)t.make_batch(0);
      FAIL("expected a data error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kData);
    }
    cfg.train.synth_count = 0;
    CHECK_THROWS_AS(load_training_data(cfg), Error);
  }

  TEST_CASE("config-driven run writes the log and checkpoints") {
    const auto dir = fs::temp_directory_path() / "bisenet_trainer_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto cfg = small_config();
    cfg.train.log_path = (dir / "loss.csv").string();
    cfg.train.checkpoint_path = (dir / "m.bsnt").string();
    cfg.train.checkpoint_every = 5;
    const auto h = train_from_config(cfg);
    const auto log = slurp(cfg.train.log_path);
    std::istringstream lines(log);
    std::string line;
    std::getline(lines, line);
    CHECK(line == loss_csv_header());
    int rows = 0;
    while (std::getline(lines, line)) CHECK(line == loss_csv_row(h[static_cast<std::size_t>(rows++)]));
    CHECK(rows == 12);
    CHECK(fs::exists(cfg.train.checkpoint_path + ".cfg"));
    CHECK(parse_config(slurp(cfg.train.checkpoint_path + ".cfg")) == cfg);
    const auto file = read_checkpoint(cfg.train.checkpoint_path);
    CHECK(file.iteration == 12);
    CHECK(file.config_hash == config_hash(cfg));
    fs::remove_all(dir);
  }

  TEST_CASE("evaluation reports a bounded score") {
    const auto cfg = small_config();
    auto data = load_training_data(cfg);
    Model model(cfg.model);
    auto store = init_params<float>(model.graph(), 0);
    const auto r = evaluate(model, store, data, cfg.augment.mean);
    REQUIRE(r.mean_iou.has_value());
    CHECK(*r.mean_iou >= 0.0);
    CHECK(*r.mean_iou <= 1.0);
  }
}
