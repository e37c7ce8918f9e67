#include "vesselseg/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "vesselseg/checkpoint.hpp"
#include "vesselseg/errors.hpp"
#include "vesselseg/inference.hpp"
#include "vesselseg/parallel.hpp"

namespace vesselseg {

void TrainConfig::validate() const {
  if (total_epochs < 1) throw ConfigError("train.total_epochs must be >= 1");
  if (phases.empty()) throw ConfigError("train.phases must list at least one phase");
  int sum = 0;
  for (const auto& p : phases) {
    if (p.epochs < 1) throw ConfigError("every training phase needs at least one epoch");
    if (!(p.learning_rate > 0.0)) throw ConfigError("learning rates must be positive");
    sum += p.epochs;
  }
  if (sum != total_epochs) {
    throw ConfigError("training phases cover " + std::to_string(sum) + " epochs but train.total_epochs is " +
                      std::to_string(total_epochs));
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (windows_per_image < 1) throw ConfigError("train.windows_per_image must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
  model.validate();
  const int div = model.size_divisor();
  if (window_width < 1 || window_height < 1 || window_width % div != 0 || window_height % div != 0) {
    throw ConfigError("window " + std::to_string(window_width) + "x" + std::to_string(window_height) +
                      " must be positive and divisible by " + std::to_string(div) + " for depth " +
                      std::to_string(model.depth));
  }
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.epsilon > 0)) {
    throw ConfigError("Adam betas must lie in [0, 1) and epsilon must be positive");
  }
  loss.validate();
  augmentation.validate();
}

double TrainConfig::learning_rate_at(int epoch) const {
  int end = 0;
  for (const auto& p : phases) {
    end += p.epochs;
    if (epoch <= end) return p.learning_rate;
  }
  return phases.back().learning_rate;
}

bool TrainConfig::is_phase_boundary(int epoch) const {
  int end = 0;
  for (const auto& p : phases) {
    end += p.epochs;
    if (epoch == end) return true;
  }
  return false;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "epoch,lr,train_loss,val_loss,seconds\n" << std::setprecision(10);
  for (const auto& e : history.epochs) {
    out << e.epoch << "," << e.learning_rate << "," << e.train_loss << ",";
    if (std::isnan(e.val_loss)) {
      out << "nan";
    } else {
      out << e.val_loss;
    }
    out << "," << e.seconds << "\n";
  }
}

AdamOptimizer::AdamOptimizer(std::size_t parameter_count, AdamParams params)
    : params_(params), first_(parameter_count, 0.0f), second_(parameter_count, 0.0f) {}

void AdamOptimizer::step(std::span<float> weights, std::span<const float> grad, double learning_rate) {
  if (weights.size() != first_.size() || grad.size() != first_.size()) {
    throw DimensionError("optimizer state does not match the parameter count");
  }
  ++steps_;
  const double b1 = params_.beta1;
  const double b2 = params_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const auto step_size = static_cast<float>(learning_rate / correction1);
  const auto inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(correction2));
  const auto eps = static_cast<float>(params_.epsilon);
  const auto fb1 = static_cast<float>(b1);
  const auto fb2 = static_cast<float>(b2);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const float g = grad[i];
    first_[i] = fb1 * first_[i] + (1.0f - fb1) * g;
    second_[i] = fb2 * second_[i] + (1.0f - fb2) * g * g;
    weights[i] -= step_size * first_[i] / (std::sqrt(second_[i]) * inv_sqrt_c2 + eps);
  }
}

double validation_loss(const Model& model, const std::vector<const LabeledImage*>& images, const LossParams& params) {
  if (images.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<Grid<float>> probs;
  std::vector<Grid<std::uint8_t>> masks;
  for (const auto* item : images) {
    probs.push_back(segment_full(model, item->image).values);
    masks.push_back(item->mask.labels);
  }
  return dice_focal_loss(probs, masks, params).total;
}

namespace {

struct Batch {
  std::vector<Grid<float>> images;
  std::vector<Grid<std::uint8_t>> masks;
};

}  // namespace

CheckpointMetadata training_metadata(const TrainConfig& config, int epoch) {
  std::ostringstream phases;
  for (std::size_t i = 0; i < config.phases.size(); ++i) {
    phases << (i ? "," : "") << config.phases[i].epochs << ":" << config.phases[i].learning_rate;
  }
  return {
      {"epochs_completed", std::to_string(epoch)},
      {"total_epochs", std::to_string(config.total_epochs)},
      {"phases", phases.str()},
      {"batch_size", std::to_string(config.batch_size)},
      {"windows_per_image", std::to_string(config.windows_per_image)},
      {"window", std::to_string(config.window_width) + "x" + std::to_string(config.window_height)},
      {"seed.split", std::to_string(config.split_seed)},
      {"seed.init", std::to_string(config.model.init_seed)},
      {"seed.sampling", std::to_string(config.sampling_seed)},
      {"loss.lambda_dice", std::to_string(config.loss.lambda_dice)},
      {"loss.lambda_focal", std::to_string(config.loss.lambda_focal)},
      {"loss.gamma", std::to_string(config.loss.gamma)},
      {"loss.epsilon", std::to_string(config.loss.epsilon)},
      {"loss.prob_clip", std::to_string(config.loss.prob_clip)},
      {"augmentation.enabled", config.augmentation.enabled ? "true" : "false"},
      {"init", "variance-scaled uniform (fan-in)"},
      {"toolkit_version", VESSELSEG_VERSION},
  };
}

TrainResult run_training(const TrainConfig& config, const DatasetSplit& split, const std::vector<LabeledImage>& data,
                         const TrainHooks& hooks) {
  config.validate();
  if (split.train_ids.empty()) throw ConfigError("training split is empty");

  std::map<std::string, const LabeledImage*> by_id;
  for (const auto& item : data) by_id[item.image.id] = &item;
  auto lookup = [&](const std::string& id) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ConfigError("split id '" + id + "' is not in the loaded dataset");
    return it->second;
  };
  std::vector<const LabeledImage*> train_items;
  for (const auto& id : split.train_ids) {
    const auto* item = lookup(id);
    check_pair(item->image, item->mask);
    if (item->image.width() < config.window_width || item->image.height() < config.window_height) {
      throw DimensionError("training image '" + id + "' is " + std::to_string(item->image.width()) + "x" +
                           std::to_string(item->image.height()) + ", smaller than the " +
                           std::to_string(config.window_width) + "x" + std::to_string(config.window_height) +
                           " window");
    }
    train_items.push_back(item);
  }
  std::vector<const LabeledImage*> val_items;
  for (const auto& id : split.val_ids) val_items.push_back(lookup(id));

  if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);

  TrainResult result{build_unet(config.model), {}};
  Model& model = result.model;
  AdamOptimizer adam(model.parameter_count(), config.adam);
  Rng rng(config.sampling_seed);
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.total_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = config.learning_rate_at(epoch);

    std::vector<WindowSample> windows;
    for (const auto* item : train_items) {
      auto drawn = sample_windows(item->image, item->mask, static_cast<std::size_t>(config.windows_per_image),
                                  config.window_width, config.window_height, rng);
      std::move(drawn.begin(), drawn.end(), std::back_inserter(windows));
    }
    if (hooks.on_windows) hooks.on_windows(epoch, windows);
    rng.shuffle(windows);

    const std::size_t batch_count = (windows.size() + batch_size - 1) / batch_size;
    // Augmentation for batch b+1 runs while batch b is optimised. Only the
    // producer touches rng, and batches are produced in order.
    auto prepare = [&](std::size_t b) {
      Batch batch;
      const std::size_t end = std::min(windows.size(), (b + 1) * batch_size);
      for (std::size_t i = b * batch_size; i < end; ++i) {
        const WindowSample augmented = apply_plan(sample_plan(config.augmentation, rng), windows[i]);
        batch.images.push_back(augmented.image_patch);
        batch.masks.push_back(augmented.mask_patch);
      }
      return batch;
    };

    double loss_sum = 0.0;
    std::size_t loss_weight = 0;
    std::future<Batch> pending = std::async(std::launch::async, prepare, 0);
    std::vector<float> grad(model.parameter_count());
    for (std::size_t b = 0; b < batch_count; ++b) {
      Batch batch = pending.get();
      if (b + 1 < batch_count) pending = std::async(std::launch::async, prepare, b + 1);

      const std::size_t n = batch.images.size();
      std::vector<ForwardTape> tapes(n);
      std::vector<Grid<float>> probs(n);
      parallel_for(n, [&](std::size_t i) { probs[i] = model.forward_train(batch.images[i], tapes[i]); });

      std::vector<Grid<float>> dprobs;
      const LossTerms loss = dice_focal_loss(probs, batch.masks, config.loss, &dprobs);
      if (!std::isfinite(loss.total)) {
        throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(b + 1) + " of " + std::to_string(batch_count));
      }
      loss_sum += loss.total * static_cast<double>(n);
      loss_weight += n;

      // Per-sample gradients reduced in sample order keep the result
      // independent of the worker count.
      std::vector<std::vector<float>> sample_grads(n);
      parallel_for(n, [&](std::size_t i) {
        sample_grads[i].assign(model.parameter_count(), 0.0f);
        model.backward(tapes[i], dprobs[i], sample_grads[i]);
        tapes[i] = ForwardTape();
      });
      std::fill(grad.begin(), grad.end(), 0.0f);
      for (const auto& g : sample_grads) {
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += g[k];
      }
      for (float g : grad) {
        if (!std::isfinite(g)) {
          throw NonFiniteLossError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(b + 1));
        }
      }
      adam.step(model.weights(), grad, lr);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.learning_rate = lr;
    record.train_loss = loss_sum / static_cast<double>(loss_weight);
    record.val_loss = config.compute_validation_loss ? validation_loss(model, val_items, config.loss)
                                                     : std::numeric_limits<double>::quiet_NaN();
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.epochs.push_back(record);

    if (hooks.log) {
      std::ostringstream msg;
      msg << "epoch " << epoch << "/" << config.total_epochs << " lr=" << lr << " train_loss=" << record.train_loss
          << " val_loss=" << record.val_loss << " (" << std::fixed << std::setprecision(1) << record.seconds << " s)";
      hooks.log(msg.str());
    }
    if (!config.checkpoint_dir.empty() && (epoch % config.checkpoint_every == 0 || config.is_phase_boundary(epoch))) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
      save_checkpoint(model, training_metadata(config, epoch), config.checkpoint_dir / name.str());
    }
    if (hooks.on_epoch_end && !hooks.on_epoch_end(record, model)) break;
  }
  return result;
}

}  // namespace vesselseg
