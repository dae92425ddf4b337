#include "bisenet/trainer.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "bisenet/checkpoint.hpp"
#include "bisenet/optim.hpp"

namespace bisenet {

namespace {

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string loss_csv_header() { return "iter,lr,L,lp,l2,l3"; }

std::string loss_csv_row(const TrainStep& s) {
  return std::to_string(s.iter) + "," + num(s.lr) + "," + num(s.total) + "," + num(s.lp) + "," + num(s.l2) +
         "," + num(s.l3);
}

std::vector<Sample> load_training_data(const EngineConfig& cfg) {
  std::vector<Sample> data;
  if (cfg.train.source == DataSource::kManifest) {
    data = load_dataset(cfg.train.manifest);
  } else {
    data = synth_shapes(cfg.train.synth_count, cfg.train.synth_height, cfg.train.synth_width,
                        cfg.model.num_classes, cfg.seed);
  }
  if (data.empty()) fail(ErrorKind::kData, "training set is empty");
  return data;
}

Trainer::Trainer(EngineConfig cfg, std::vector<Sample> data)
    : cfg_(std::move(cfg)), data_(std::move(data)), model_(cfg_.model) {
  cfg_.validate();
  if (data_.empty()) fail(ErrorKind::kData, "training set is empty");
  store_ = init_params<float>(model_.graph(), cfg_.seed);
  store_.config_hash = config_hash(cfg_);
}

std::vector<std::int64_t> Trainer::batch_indices(std::int64_t iter) const {
  const auto n = static_cast<std::int64_t>(data_.size());
  std::vector<std::int64_t> idx;
  for (std::int64_t k = 0; k < cfg_.train.batch_size; ++k) idx.push_back((iter * cfg_.train.batch_size + k) % n);
  return idx;
}

std::pair<Tensor, LabelMap> Trainer::make_batch(std::int64_t iter) const {
  const auto n = static_cast<std::int64_t>(data_.size());
  std::vector<Sample> batch;
  for (std::int64_t k = 0; k < cfg_.train.batch_size; ++k) {
    const std::int64_t flat = iter * cfg_.train.batch_size + k;
    const Sample& src = data_[static_cast<std::size_t>(flat % n)];
    if (cfg_.train.augment) {
      batch.push_back(augment_indexed(src, cfg_.augment, static_cast<std::uint64_t>(flat % n),
                                      static_cast<std::uint64_t>(flat / n)));
    } else {
      batch.push_back(Sample{normalize_image(src.image, cfg_.augment.mean), src.label});
    }
  }
  for (const auto& s : batch)
    if (s.image.shape().h % 32 != 0 || s.image.shape().w % 32 != 0)
      fail(ErrorKind::kData, "training image " + s.image.shape().str() +
                                 " is not a multiple of 32; enable augmentation with a suitable crop");
  return {stack_images(batch), stack_labels(batch)};
}

TrainStep Trainer::step() {
  if (iter_ >= cfg_.sgd.max_iter)
    fail(ErrorKind::kArgument, "training already reached max_iter " + std::to_string(cfg_.sgd.max_iter));
  auto [x, labels] = make_batch(iter_);
  auto fwd = model_.forward(store_, x, Mode::kTrain);
  const Tensor* a16 = fwd.aux_logits.size() == 2 ? &fwd.aux_logits[0] : nullptr;
  const Tensor* a32 = fwd.aux_logits.size() == 2 ? &fwd.aux_logits[1] : nullptr;
  auto loss = joint_loss(fwd.main_logits, a16, a32, labels, cfg_.model);

  TrainStep s;
  s.iter = iter_;
  s.lr = poly_lr(cfg_.sgd, iter_);
  s.total = loss.total;
  s.lp = loss.lp;
  s.l2 = loss.l2;
  s.l3 = loss.l3;
  if (!std::isfinite(loss.total)) {
    std::string ids;
    for (auto i : batch_indices(iter_)) ids += (ids.empty() ? "" : ",") + std::to_string(i);
    fail(ErrorKind::kNumeric, "non-finite loss at iteration " + std::to_string(iter_) + " (batch samples " + ids + ")");
  }

  std::map<std::string, Tensor> seeds;
  seeds.emplace(val::kLogits, std::move(loss.grad_main));
  if (a16) {
    seeds.emplace(val::kAux16, std::move(loss.grad_aux16));
    seeds.emplace(val::kAux32, std::move(loss.grad_aux32));
  }
  auto grads = model_.executor().backward(store_, seeds);
  sgd_step(store_, grads.params, s.lr, cfg_.sgd);
  ++iter_;
  store_.iteration = static_cast<std::uint64_t>(iter_);
  return s;
}

std::vector<TrainStep> Trainer::run(const std::function<void(const TrainStep&)>& on_step) {
  std::vector<TrainStep> history;
  while (iter_ < cfg_.sgd.max_iter) {
    history.push_back(step());
    if (on_step) on_step(history.back());
  }
  return history;
}

MiouResult evaluate(Model& model, ParamStore& store, const std::vector<Sample>& samples,
                    const std::array<double, 3>& mean) {
  ConfusionMatrix cm(model.config().num_classes);
  for (const auto& s : samples) {
    const Tensor x = normalize_image(s.image, mean);
    const Tensor& logits = model.infer(store, x);
    const LabelMap pred = predict_full_res(logits, x.shape().h, x.shape().w);
    cm.add(s.label, pred, static_cast<std::int32_t>(model.config().ignore_index));
  }
  return miou(cm);
}

void save_trained(const ParamStore& store, const EngineConfig& cfg, const std::string& path) {
  save_checkpoint(store, path);
  std::ofstream out(path + ".cfg");
  if (!out) fail(ErrorKind::kIo, "cannot write '" + path + ".cfg'");
  out << serialize_config(cfg);
}

std::vector<TrainStep> train_from_config(const EngineConfig& cfg) {
  Trainer trainer(cfg, load_training_data(cfg));
  std::ofstream log(cfg.train.log_path);
  if (!log) fail(ErrorKind::kIo, "cannot write loss log '" + cfg.train.log_path + "'");
  log << loss_csv_header() << "\n";
  const auto history = trainer.run([&](const TrainStep& s) {
    log << loss_csv_row(s) << "\n";
    log.flush();
    const std::int64_t done = s.iter + 1;
    if (cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0 && done < cfg.sgd.max_iter)
      save_trained(trainer.store(), cfg, cfg.train.checkpoint_path);
  });
  save_trained(trainer.store(), cfg, cfg.train.checkpoint_path);
  return history;
}

}  // namespace bisenet
