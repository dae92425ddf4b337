#pragma once

// Mini-batch training loop, evaluation and the loss log.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bisenet/bisenet.hpp"
#include "bisenet/data.hpp"
#include "bisenet/engine_config.hpp"
#include "bisenet/metrics.hpp"

namespace bisenet {

struct TrainStep {
  std::int64_t iter = 0;
  double lr = 0.0;
  double total = 0.0;  // L
  double lp = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
};

// CSV row in the loss log: iter,lr,L,lp,l2,l3 with round-trippable numbers.
std::string loss_csv_header();
std::string loss_csv_row(const TrainStep& s);

// Training samples named by the config (manifest or synthetic set).
// Throws kData when the set is empty.
std::vector<Sample> load_training_data(const EngineConfig& cfg);

class Trainer {
 public:
  // Parameters are initialised from cfg.seed.
  Trainer(EngineConfig cfg, std::vector<Sample> data);

  // Indices of the samples forming batch `iter` (cyclic over the set).
  std::vector<std::int64_t> batch_indices(std::int64_t iter) const;
  // Augmented (or mean-subtracted) batch for `iter`.
  std::pair<Tensor, LabelMap> make_batch(std::int64_t iter) const;

  // One forward / backward / SGD update. Throws kNumeric on a non-finite loss.
  TrainStep step();

  // Runs the remaining iterations up to sgd.max_iter; `on_step` sees each one.
  std::vector<TrainStep> run(const std::function<void(const TrainStep&)>& on_step = {});

  std::int64_t iteration() const { return iter_; }
  Model& model() { return model_; }
  ParamStore& store() { return store_; }
  const EngineConfig& config() const { return cfg_; }

 private:
  EngineConfig cfg_;
  std::vector<Sample> data_;
  Model model_;
  ParamStore store_;
  std::int64_t iter_ = 0;
};

// Inference-mode mIoU of the model over samples (mean-subtracted, no
// augmentation, full-resolution prediction).
MiouResult evaluate(Model& model, ParamStore& store, const std::vector<Sample>& samples,
                    const std::array<double, 3>& mean);

// Checkpoint plus "<path>.cfg" holding the serialized config.
void save_trained(const ParamStore& store, const EngineConfig& cfg, const std::string& path);

// Full training run as driven by the CLI: writes the loss log and
// checkpoints named in cfg.train.
std::vector<TrainStep> train_from_config(const EngineConfig& cfg);

}  // namespace bisenet
