#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vesselseg/augment.hpp"
#include "vesselseg/checkpoint.hpp"
#include "vesselseg/dataio.hpp"
#include "vesselseg/loss.hpp"
#include "vesselseg/unet.hpp"

namespace vesselseg {

struct TrainPhase {
  int epochs = 0;
  double learning_rate = 0.0;
};

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  int total_epochs = 600;
  std::vector<TrainPhase> phases{{300, 1e-3}, {300, 1e-4}};
  int batch_size = 20;
  int windows_per_image = 20;
  int window_width = 320;
  int window_height = 240;
  LossParams loss;
  AugmentationSpec augmentation;
  AdamParams adam;
  UNetConfig model;                 // model.init_seed is the init seed
  std::uint64_t sampling_seed = 0;  // windows, augmentation and shuffling
  std::uint64_t split_seed = 0;     // recorded in checkpoint metadata
  int checkpoint_every = 50;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints written
  bool compute_validation_loss = true;

  /// Throws ConfigError if the phases do not sum to total_epochs or any
  /// field is out of range.
  void validate() const;
  double learning_rate_at(int epoch) const;  // epoch is 1-based
  bool is_phase_boundary(int epoch) const;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when there is no validation set
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

/// CSV with header `epoch,lr,train_loss,val_loss,seconds`.
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

/// Adam with bias correction; moments kept in float alongside the weights.
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t parameter_count, AdamParams params);
  void step(std::span<float> weights, std::span<const float> grad, double learning_rate);
  long steps() const { return steps_; }

 private:
  AdamParams params_;
  std::vector<float> first_;
  std::vector<float> second_;
  long steps_ = 0;
};

struct TrainHooks {
  /// Called with each epoch's freshly sampled windows, before augmentation.
  std::function<void(int epoch, const std::vector<WindowSample>&)> on_windows;
  /// Called after each epoch; returning false stops training early.
  std::function<bool(const EpochRecord&, const Model&)> on_epoch_end;
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

/// Trains a fresh U-Net on split.train_ids. Each epoch draws
/// windows_per_image new windows per training image, shuffles them, applies a
/// freshly sampled augmentation plan per window and takes one Adam step per
/// batch. Checkpoints go to checkpoint_dir every checkpoint_every epochs and
/// at phase boundaries.
///
/// Throws ConfigError for an invalid config or empty training split,
/// DimensionError if a training image is smaller than the window, and
/// NonFiniteLossError (with epoch and batch) if the loss diverges.
TrainResult run_training(const TrainConfig& config, const DatasetSplit& split, const std::vector<LabeledImage>& data,
                         const TrainHooks& hooks = {});

/// Seeds, schedule and loss settings recorded alongside checkpoints.
CheckpointMetadata training_metadata(const TrainConfig& config, int epochs_completed);

/// Loss on full images through the inference path.
double validation_loss(const Model& model, const std::vector<const LabeledImage*>& images, const LossParams& params);

}  // namespace vesselseg
