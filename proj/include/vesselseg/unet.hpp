#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vesselseg/grid.hpp"

namespace vesselseg {

enum class Upsampling {
  transposed,  // learnable 2x2 stride-2 transposed convolution
  nearest,     // nearest-neighbour x2 followed by a 3x3 convolution
};

std::string to_string(Upsampling mode);
Upsampling parse_upsampling(const std::string& text);

struct UNetConfig {
  int depth = 4;           // number of 2x down-sampling stages
  int base_channels = 16;  // channels of the first stage; doubles per stage
  std::uint64_t init_seed = 0;
  Upsampling upsampling = Upsampling::transposed;

  /// Throws ConfigError unless depth >= 1 and base_channels >= 1.
  void validate() const;
  /// Inputs must have width and height divisible by this (2^depth).
  int size_divisor() const { return 1 << depth; }

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// Closed-form parameter count of the network described by config.
std::size_t unet_parameter_count(const UNetConfig& config);

/// One named slice of the flat weight vector.
struct ParameterInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Activations recorded by Model::forward_train and consumed by backward.
class ForwardTape;

/// U-Net with same-padded 3x3 convolutions, ReLU, 2x2 max pooling, skip
/// concatenation and a 1x1 convolution + logistic head. All weights live in
/// one contiguous float vector so optimisers can treat them uniformly.
///
/// A Model is immutable during forward passes; concurrent forwards are safe.
class Model {
 public:
  /// Builds the layer layout and initialises weights from config.init_seed
  /// (variance-scaled uniform over fan-in, zero biases).
  explicit Model(const UNetConfig& config);

  const UNetConfig& config() const { return config_; }
  const std::vector<ParameterInfo>& parameters() const { return layout_; }
  std::size_t parameter_count() const { return weights_.size(); }

  std::span<float> weights() { return weights_; }
  std::span<const float> weights() const { return weights_; }
  std::span<const float> weights(const ParameterInfo& info) const {
    return std::span<const float>(weights_).subspan(info.offset, info.size);
  }

  /// Identifier of the checkpoint this model came from ("untrained" when built
  /// in memory, the checksum when loaded).
  const std::string& checkpoint_id() const { return checkpoint_id_; }
  void set_checkpoint_id(std::string id) { checkpoint_id_ = std::move(id); }

  /// Per-pixel vessel probabilities, every value strictly inside (0, 1).
  /// Throws DimensionError unless width and height are multiples of
  /// config().size_divisor().
  Grid<float> forward(const Grid<float>& input) const;

  /// Forwards each batch element, in parallel across elements.
  std::vector<Grid<float>> forward(std::span<const Grid<float>> batch) const;

  /// Forward pass that records the activations needed by backward().
  Grid<float> forward_train(const Grid<float>& input, ForwardTape& tape) const;

  /// Accumulates dLoss/dWeights into grad (same layout as weights()) given
  /// dLoss/dProbability for the output recorded in tape.
  void backward(const ForwardTape& tape, const Grid<float>& grad_probs, std::span<float> grad) const;

 private:
  struct Conv {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    std::size_t weight = 0;  // offsets into weights_
    std::size_t bias = 0;
  };
  struct Stage {
    Conv first;
    Conv second;
  };
  struct Up {
    Conv conv;  // 2x2 transposed or 3x3 after nearest upsampling
  };

  Conv add_conv(const std::string& prefix, int in_channels, int out_channels, int kernel, bool transposed);
  Grid<float> run(const Grid<float>& input, ForwardTape* tape) const;

  UNetConfig config_;
  std::vector<ParameterInfo> layout_;
  std::vector<float> weights_;
  std::vector<Stage> encoder_;
  Stage bottleneck_;
  std::vector<Up> up_;        // up_[i] maps stage i+1 features to stage i width
  std::vector<Stage> decoder_;
  Conv head_;
  std::string checkpoint_id_ = "untrained";

  friend class ForwardTape;
};

class ForwardTape {
 public:
  ForwardTape();
  ~ForwardTape();
  ForwardTape(ForwardTape&&) noexcept;
  ForwardTape& operator=(ForwardTape&&) noexcept;

  struct State;
  State& state() { return *state_; }
  const State& state() const { return *state_; }

 private:
  std::unique_ptr<State> state_;
};

Model build_unet(const UNetConfig& config);

}  // namespace vesselseg
