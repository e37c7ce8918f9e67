#include "vesselseg/unet.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "vesselseg/errors.hpp"
#include "vesselseg/parallel.hpp"
#include "vesselseg/rng.hpp"

namespace vesselseg {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

// Upper bound on im2col buffer elements; larger images are processed in row bands.
constexpr std::size_t kMaxColumnElements = std::size_t{1} << 18;

struct Feature {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Feature() = default;
  Feature(int c, int h, int w)
      : channels(c), height(h), width(w), values(static_cast<std::size_t>(c) * h * w, 0.0f) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float* channel(int c) { return values.data() + c * plane(); }
  const float* channel(int c) const { return values.data() + c * plane(); }
  void release() { std::vector<float>().swap(values); }
};

int rows_per_band(int channels, int width, int height) {
  const std::size_t per_row = static_cast<std::size_t>(channels) * 9 * width;
  return static_cast<int>(std::clamp<std::size_t>(kMaxColumnElements / per_row, 1, height));
}

// Column buffer for output rows [y0, y1) of a zero-padded 3x3 convolution.
void im2col(const Feature& x, int y0, int y1, std::vector<float>& col) {
  const int w = x.width;
  const std::size_t cols = static_cast<std::size_t>(y1 - y0) * w;
  col.resize(static_cast<std::size_t>(x.channels) * 9 * cols);
  float* out = col.data();
  for (int c = 0; c < x.channels; ++c) {
    const float* src = x.channel(c);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        for (int y = y0; y < y1; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= x.height) {
            std::fill(out, out + w, 0.0f);
          } else {
            const float* s = src + static_cast<std::size_t>(sy) * w;
            const int lo = std::max(0, -dx);
            const int hi = std::min(w, w - dx);
            for (int xx = 0; xx < lo; ++xx) out[xx] = 0.0f;
            std::copy(s + lo + dx, s + hi + dx, out + lo);
            for (int xx = hi; xx < w; ++xx) out[xx] = 0.0f;
          }
          out += w;
        }
      }
    }
  }
}

// Adds the column-buffer gradient for rows [y0, y1) back onto dx.
void col2im(const std::vector<float>& col, int y0, int y1, Feature& dx) {
  const int w = dx.width;
  const float* in = col.data();
  for (int c = 0; c < dx.channels; ++c) {
    float* dst = dx.channel(c);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int dxo = kx - 1;
        for (int y = y0; y < y1; ++y) {
          const int sy = y + ky - 1;
          if (sy >= 0 && sy < dx.height) {
            float* d = dst + static_cast<std::size_t>(sy) * w;
            const int lo = std::max(0, -dxo);
            const int hi = std::min(w, w - dxo);
            for (int xx = lo; xx < hi; ++xx) d[xx + dxo] += in[xx];
          }
          in += w;
        }
      }
    }
  }
}

void add_bias_activate(Feature& y, const float* bias, bool relu) {
  const std::size_t plane = y.plane();
  for (int c = 0; c < y.channels; ++c) {
    float* v = y.channel(c);
    const float b = bias[c];
    if (relu) {
      for (std::size_t i = 0; i < plane; ++i) v[i] = std::max(v[i] + b, 0.0f);
    } else {
      for (std::size_t i = 0; i < plane; ++i) v[i] += b;
    }
  }
}

void relu_mask(const Feature& y, Feature& dy) {
  for (std::size_t i = 0; i < dy.values.size(); ++i) {
    if (y.values[i] <= 0.0f) dy.values[i] = 0.0f;
  }
}

void accumulate_bias(const Feature& dy, float* grad_bias) {
  const std::size_t plane = dy.plane();
  for (int c = 0; c < dy.channels; ++c) {
    const float* g = dy.channel(c);
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sum += g[i];
    grad_bias[c] += static_cast<float>(sum);
  }
}

Feature maxpool(const Feature& x) {
  Feature y(x.channels, x.height / 2, x.width / 2);
  for (int c = 0; c < x.channels; ++c) {
    const float* s = x.channel(c);
    float* d = y.channel(c);
    for (int i = 0; i < y.height; ++i) {
      const float* r0 = s + static_cast<std::size_t>(2 * i) * x.width;
      const float* r1 = r0 + x.width;
      for (int j = 0; j < y.width; ++j) {
        d[static_cast<std::size_t>(i) * y.width + j] =
            std::max(std::max(r0[2 * j], r0[2 * j + 1]), std::max(r1[2 * j], r1[2 * j + 1]));
      }
    }
  }
  return y;
}

// Routes each pooled gradient to the first maximal input in raster order.
void maxpool_backward(const Feature& x, const Feature& dy, Feature& dx) {
  for (int c = 0; c < x.channels; ++c) {
    const float* s = x.channel(c);
    const float* g = dy.channel(c);
    float* d = dx.channel(c);
    for (int i = 0; i < dy.height; ++i) {
      for (int j = 0; j < dy.width; ++j) {
        const std::size_t base = static_cast<std::size_t>(2 * i) * x.width + 2 * j;
        const std::size_t cand[4] = {base, base + 1, base + x.width, base + x.width + 1};
        std::size_t best = cand[0];
        for (int k = 1; k < 4; ++k) {
          if (s[cand[k]] > s[best]) best = cand[k];
        }
        d[best] += g[static_cast<std::size_t>(i) * dy.width + j];
      }
    }
  }
}

Feature upsample_nearest(const Feature& x) {
  Feature y(x.channels, x.height * 2, x.width * 2);
  for (int c = 0; c < x.channels; ++c) {
    const float* s = x.channel(c);
    float* d = y.channel(c);
    for (int i = 0; i < y.height; ++i) {
      for (int j = 0; j < y.width; ++j) {
        d[static_cast<std::size_t>(i) * y.width + j] = s[static_cast<std::size_t>(i / 2) * x.width + j / 2];
      }
    }
  }
  return y;
}

Feature upsample_nearest_backward(const Feature& dy) {
  Feature dx(dy.channels, dy.height / 2, dy.width / 2);
  for (int c = 0; c < dy.channels; ++c) {
    const float* g = dy.channel(c);
    float* d = dx.channel(c);
    for (int i = 0; i < dy.height; ++i) {
      for (int j = 0; j < dy.width; ++j) {
        d[static_cast<std::size_t>(i / 2) * dx.width + j / 2] += g[static_cast<std::size_t>(i) * dy.width + j];
      }
    }
  }
  return dx;
}

Feature concat(const Feature& a, const Feature& b) {
  Feature y(a.channels + b.channels, a.height, a.width);
  std::copy(a.values.begin(), a.values.end(), y.values.begin());
  std::copy(b.values.begin(), b.values.end(), y.values.begin() + static_cast<std::ptrdiff_t>(a.values.size()));
  return y;
}

float logistic(float z) {
  constexpr float lo = std::numeric_limits<float>::min();
  constexpr float hi = 1.0f - 0x1.0p-24f;
  const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(z)));
  return std::clamp(static_cast<float>(p), lo, hi);
}

}  // namespace

struct ForwardTape::State {
  struct StageActs {
    Feature in;
    Feature mid;
    Feature out;
  };
  std::vector<StageActs> encoder;
  StageActs bottleneck;
  std::vector<StageActs> decoder;
  Grid<float> probs;
};

ForwardTape::ForwardTape() : state_(std::make_unique<State>()) {}
ForwardTape::~ForwardTape() = default;
ForwardTape::ForwardTape(ForwardTape&&) noexcept = default;
ForwardTape& ForwardTape::operator=(ForwardTape&&) noexcept = default;

namespace {

// Convolution kernels working on a Feature. `w` points at the whole weight
// vector; offsets come from the layer descriptor.
struct ConvOps {
  int in_channels;
  int out_channels;
  int kernel;
  const float* weight;
  const float* bias;

  Feature forward(const Feature& x, bool relu, std::vector<float>& col) const {
    Feature y(out_channels, x.height, x.width);
    const int w = x.width;
    if (kernel == 1) {
      ConstMatMap wm(weight, out_channels, in_channels);
      ConstMatMap xm(x.values.data(), in_channels, static_cast<Eigen::Index>(x.plane()));
      MatMap ym(y.values.data(), out_channels, static_cast<Eigen::Index>(y.plane()));
      ym.noalias() = wm * xm;
    } else {
      ConstMatMap wm(weight, out_channels, in_channels * 9);
      MatMap ym(y.values.data(), out_channels, static_cast<Eigen::Index>(y.plane()));
      const int band = rows_per_band(in_channels, w, x.height);
      for (int y0 = 0; y0 < x.height; y0 += band) {
        const int y1 = std::min(x.height, y0 + band);
        im2col(x, y0, y1, col);
        const Eigen::Index n = static_cast<Eigen::Index>(y1 - y0) * w;
        ConstMatMap cm(col.data(), in_channels * 9, n);
        ym.block(0, static_cast<Eigen::Index>(y0) * w, out_channels, n).noalias() = wm * cm;
      }
    }
    add_bias_activate(y, bias, relu);
    return y;
  }

  // dy must already be masked by the activation derivative.
  void backward(const Feature& x, const Feature& dy, float* grad_weight, float* grad_bias, Feature* dx,
                std::vector<float>& col) const {
    accumulate_bias(dy, grad_bias);
    const int w = x.width;
    if (kernel == 1) {
      ConstMatMap xm(x.values.data(), in_channels, static_cast<Eigen::Index>(x.plane()));
      ConstMatMap gm(dy.values.data(), out_channels, static_cast<Eigen::Index>(dy.plane()));
      MatMap gw(grad_weight, out_channels, in_channels);
      gw.noalias() += gm * xm.transpose();
      if (dx != nullptr) {
        *dx = Feature(in_channels, x.height, x.width);
        ConstMatMap wm(weight, out_channels, in_channels);
        MatMap dxm(dx->values.data(), in_channels, static_cast<Eigen::Index>(x.plane()));
        dxm.noalias() = wm.transpose() * gm;
      }
      return;
    }
    ConstMatMap wm(weight, out_channels, in_channels * 9);
    ConstMatMap gm(dy.values.data(), out_channels, static_cast<Eigen::Index>(dy.plane()));
    MatMap gw(grad_weight, out_channels, in_channels * 9);
    if (dx != nullptr) *dx = Feature(in_channels, x.height, x.width);
    const int band = rows_per_band(in_channels, w, x.height);
    for (int y0 = 0; y0 < x.height; y0 += band) {
      const int y1 = std::min(x.height, y0 + band);
      const Eigen::Index n = static_cast<Eigen::Index>(y1 - y0) * w;
      const auto g_band = gm.block(0, static_cast<Eigen::Index>(y0) * w, out_channels, n);
      im2col(x, y0, y1, col);
      {
        ConstMatMap cm(col.data(), in_channels * 9, n);
        gw.noalias() += g_band * cm.transpose();
      }
      if (dx != nullptr) {
        MatMap dcol(col.data(), in_channels * 9, n);
        dcol.noalias() = wm.transpose() * g_band;
        col2im(col, y0, y1, *dx);
      }
    }
  }
};

// 2x2 stride-2 transposed convolution, weight layout [in][out][2][2].
struct TransposedOps {
  int in_channels;
  int out_channels;
  const float* weight;
  const float* bias;

  Feature forward(const Feature& x, std::vector<float>& scratch) const {
    const Eigen::Index n = static_cast<Eigen::Index>(x.plane());
    scratch.resize(static_cast<std::size_t>(out_channels) * 4 * n);
    ConstMatMap wm(weight, in_channels, out_channels * 4);
    ConstMatMap xm(x.values.data(), in_channels, n);
    MatMap zm(scratch.data(), out_channels * 4, n);
    zm.noalias() = wm.transpose() * xm;
    Feature y(out_channels, x.height * 2, x.width * 2);
    for (int co = 0; co < out_channels; ++co) {
      float* d = y.channel(co);
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const float* z = scratch.data() + static_cast<std::size_t>(co * 4 + a * 2 + b) * n;
          for (int i = 0; i < x.height; ++i) {
            float* row = d + static_cast<std::size_t>(2 * i + a) * y.width + b;
            const float* zr = z + static_cast<std::size_t>(i) * x.width;
            for (int j = 0; j < x.width; ++j) row[2 * j] = zr[j] + bias[co];
          }
        }
      }
    }
    return y;
  }

  void backward(const Feature& x, const Feature& dy, float* grad_weight, float* grad_bias, Feature& dx,
                std::vector<float>& scratch) const {
    accumulate_bias(dy, grad_bias);
    const Eigen::Index n = static_cast<Eigen::Index>(x.plane());
    scratch.resize(static_cast<std::size_t>(out_channels) * 4 * n);
    for (int co = 0; co < out_channels; ++co) {
      const float* g = dy.channel(co);
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          float* z = scratch.data() + static_cast<std::size_t>(co * 4 + a * 2 + b) * n;
          for (int i = 0; i < x.height; ++i) {
            const float* row = g + static_cast<std::size_t>(2 * i + a) * dy.width + b;
            float* zr = z + static_cast<std::size_t>(i) * x.width;
            for (int j = 0; j < x.width; ++j) zr[j] = row[2 * j];
          }
        }
      }
    }
    ConstMatMap wm(weight, in_channels, out_channels * 4);
    ConstMatMap xm(x.values.data(), in_channels, n);
    ConstMatMap zm(scratch.data(), out_channels * 4, n);
    MatMap gw(grad_weight, in_channels, out_channels * 4);
    gw.noalias() += xm * zm.transpose();
    dx = Feature(in_channels, x.height, x.width);
    MatMap dxm(dx.values.data(), in_channels, n);
    dxm.noalias() = wm * zm;
  }
};

}  // namespace

std::string to_string(Upsampling mode) {
  return mode == Upsampling::transposed ? "transposed" : "nearest";
}

Upsampling parse_upsampling(const std::string& text) {
  if (text == "transposed") return Upsampling::transposed;
  if (text == "nearest") return Upsampling::nearest;
  throw ConfigError("unknown upsampling mode '" + text + "' (expected transposed or nearest)");
}

void UNetConfig::validate() const {
  if (depth < 1) throw ConfigError("model depth must be >= 1, got " + std::to_string(depth));
  if (depth > 12) throw ConfigError("model depth " + std::to_string(depth) + " is unreasonably large");
  if (base_channels < 1) {
    throw ConfigError("model base_channels must be >= 1, got " + std::to_string(base_channels));
  }
}

std::size_t unet_parameter_count(const UNetConfig& config) {
  config.validate();
  // Two 3x3 convolutions (with bias) taking `in` to `out` channels.
  auto double_conv = [](std::size_t in, std::size_t out) { return 9 * in * out + out + 9 * out * out + out; };
  const std::size_t up_taps = config.upsampling == Upsampling::transposed ? 4 : 9;
  std::size_t total = 0;
  std::size_t in = 1;
  for (int i = 0; i < config.depth; ++i) {
    const std::size_t c = static_cast<std::size_t>(config.base_channels) << i;
    total += double_conv(in, c);                         // encoder stage
    total += up_taps * (2 * c) * c + c;                  // up-sampling into stage i
    total += double_conv(2 * c, c);                      // decoder stage on [skip, up]
    in = c;
  }
  total += double_conv(in, 2 * in);                      // bottleneck
  total += static_cast<std::size_t>(config.base_channels) + 1;  // 1x1 head
  return total;
}

Model::Conv Model::add_conv(const std::string& prefix, int in_channels, int out_channels, int kernel,
                            bool transposed) {
  Conv conv;
  conv.in_channels = in_channels;
  conv.out_channels = out_channels;
  conv.kernel = kernel;
  const auto cin = static_cast<std::size_t>(in_channels);
  const auto cout = static_cast<std::size_t>(out_channels);
  const auto k = static_cast<std::size_t>(kernel);
  ParameterInfo w{prefix + ".weight",
                  transposed ? std::vector<std::size_t>{cin, cout, k, k} : std::vector<std::size_t>{cout, cin, k, k},
                  weights_.size(), cin * cout * k * k};
  conv.weight = w.offset;
  weights_.resize(weights_.size() + w.size);
  layout_.push_back(std::move(w));
  ParameterInfo b{prefix + ".bias", {cout}, weights_.size(), cout};
  conv.bias = b.offset;
  weights_.resize(weights_.size() + b.size);
  layout_.push_back(std::move(b));
  return conv;
}

Model::Model(const UNetConfig& config) : config_(config) {
  config_.validate();
  const int depth = config_.depth;
  auto width_at = [&](int stage) { return config_.base_channels << stage; };

  int in = 1;
  for (int i = 0; i < depth; ++i) {
    const std::string p = "encoder" + std::to_string(i);
    Stage s;
    s.first = add_conv(p + ".conv1", in, width_at(i), 3, false);
    s.second = add_conv(p + ".conv2", width_at(i), width_at(i), 3, false);
    encoder_.push_back(s);
    in = width_at(i);
  }
  bottleneck_.first = add_conv("bottleneck.conv1", in, width_at(depth), 3, false);
  bottleneck_.second = add_conv("bottleneck.conv2", width_at(depth), width_at(depth), 3, false);

  up_.resize(depth);
  decoder_.resize(depth);
  for (int i = depth - 1; i >= 0; --i) {
    const std::string p = "decoder" + std::to_string(i);
    const bool transposed = config_.upsampling == Upsampling::transposed;
    up_[i].conv = add_conv(p + ".up", width_at(i + 1), width_at(i), transposed ? 2 : 3, transposed);
    decoder_[i].first = add_conv(p + ".conv1", 2 * width_at(i), width_at(i), 3, false);
    decoder_[i].second = add_conv(p + ".conv2", width_at(i), width_at(i), 3, false);
  }
  head_ = add_conv("head", width_at(0), 1, 1, false);

  // Variance-scaled uniform initialisation over fan-in: He scaling for
  // ReLU layers, unit gain for the linear up-sampling and head layers.
  Rng rng(config_.init_seed);
  auto init = [&](const Conv& conv, double gain, bool transposed) {
    const double fan_in = transposed ? conv.in_channels : static_cast<double>(conv.in_channels) * conv.kernel * conv.kernel;
    const double limit = std::sqrt(3.0 * gain / fan_in);
    const std::size_t n = static_cast<std::size_t>(conv.in_channels) * conv.out_channels * conv.kernel * conv.kernel;
    for (std::size_t i = 0; i < n; ++i) {
      weights_[conv.weight + i] = static_cast<float>((2.0 * rng.uniform() - 1.0) * limit);
    }
  };
  for (const auto& s : encoder_) {
    init(s.first, 2.0, false);
    init(s.second, 2.0, false);
  }
  init(bottleneck_.first, 2.0, false);
  init(bottleneck_.second, 2.0, false);
  for (int i = depth - 1; i >= 0; --i) {
    init(up_[i].conv, 1.0, config_.upsampling == Upsampling::transposed);
    init(decoder_[i].first, 2.0, false);
    init(decoder_[i].second, 2.0, false);
  }
  init(head_, 1.0, false);
}

Grid<float> Model::run(const Grid<float>& input, ForwardTape* tape) const {
  const int div = config_.size_divisor();
  if (input.width() % div != 0 || input.height() % div != 0 || input.empty()) {
    throw DimensionError("input " + std::to_string(input.width()) + "x" + std::to_string(input.height()) +
                         " is not divisible by " + std::to_string(div) +
                         "; pad width and height to a multiple of " + std::to_string(div) + " first");
  }
  using StageActs = ForwardTape::State::StageActs;
  const float* w = weights_.data();
  auto ops = [&](const Conv& c) { return ConvOps{c.in_channels, c.out_channels, c.kernel, w + c.weight, w + c.bias}; };
  std::vector<float> scratch;

  const int depth = config_.depth;
  std::vector<StageActs> enc(depth);
  std::vector<Feature> skips(depth);
  Feature x(1, input.height(), input.width());
  std::copy(input.values().begin(), input.values().end(), x.values.begin());

  for (int i = 0; i < depth; ++i) {
    StageActs& s = enc[i];
    s.mid = ops(encoder_[i].first).forward(x, true, scratch);
    s.out = ops(encoder_[i].second).forward(s.mid, true, scratch);
    Feature pooled = maxpool(s.out);
    if (tape != nullptr) {
      s.in = std::move(x);
    } else {
      s.mid.release();
      skips[i] = std::move(s.out);
    }
    x = std::move(pooled);
  }
  StageActs bottom;
  bottom.mid = ops(bottleneck_.first).forward(x, true, scratch);
  bottom.out = ops(bottleneck_.second).forward(bottom.mid, true, scratch);
  if (tape != nullptr) {
    bottom.in = std::move(x);
  } else {
    x.release();
    bottom.mid.release();
  }

  std::vector<StageActs> dec(depth);
  const Feature* below = &bottom.out;
  Feature carried;  // decoder output kept alive in inference mode
  for (int i = depth - 1; i >= 0; --i) {
    const Conv& uc = up_[i].conv;
    Feature up;
    if (config_.upsampling == Upsampling::transposed) {
      up = TransposedOps{uc.in_channels, uc.out_channels, w + uc.weight, w + uc.bias}.forward(*below, scratch);
    } else {
      up = ops(uc).forward(upsample_nearest(*below), false, scratch);
    }
    const Feature& skip = tape != nullptr ? enc[i].out : skips[i];
    StageActs& s = dec[i];
    s.in = concat(skip, up);
    up.release();
    if (tape == nullptr) skips[i].release();
    s.mid = ops(decoder_[i].first).forward(s.in, true, scratch);
    if (tape == nullptr) s.in.release();
    s.out = ops(decoder_[i].second).forward(s.mid, true, scratch);
    if (tape == nullptr) {
      s.mid.release();
      carried = std::move(s.out);
      below = &carried;
    } else {
      below = &s.out;
    }
  }

  const Feature logits = ops(head_).forward(*below, false, scratch);
  Grid<float> probs(input.width(), input.height());
  auto& p = probs.values();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = logistic(logits.values[i]);

  if (tape != nullptr) {
    auto& st = tape->state();
    st.encoder = std::move(enc);
    st.bottleneck = std::move(bottom);
    st.decoder = std::move(dec);
    st.probs = probs;
  }
  return probs;
}

Grid<float> Model::forward(const Grid<float>& input) const {
  try {
    return run(input, nullptr);
  } catch (const std::bad_alloc&) {
    throw OutOfMemoryError("out of memory forwarding a " + std::to_string(input.width()) + "x" +
                           std::to_string(input.height()) + " input");
  }
}

std::vector<Grid<float>> Model::forward(std::span<const Grid<float>> batch) const {
  std::vector<Grid<float>> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { out[i] = forward(batch[i]); });
  return out;
}

Grid<float> Model::forward_train(const Grid<float>& input, ForwardTape& tape) const {
  return run(input, &tape);
}

void Model::backward(const ForwardTape& tape, const Grid<float>& grad_probs, std::span<float> grad) const {
  const auto& st = tape.state();
  if (grad.size() != weights_.size()) throw DimensionError("gradient buffer does not match the weight count");
  if (!grad_probs.same_shape(st.probs)) throw DimensionError("probability gradient does not match the recorded output");

  const float* w = weights_.data();
  float* g = grad.data();
  auto ops = [&](const Conv& c) { return ConvOps{c.in_channels, c.out_channels, c.kernel, w + c.weight, w + c.bias}; };
  std::vector<float> scratch;
  const int depth = config_.depth;

  // Logistic head: dL/dz = dL/dp * p * (1 - p).
  const Feature& top = st.decoder[0].out;
  Feature dlogit(1, top.height, top.width);
  for (std::size_t i = 0; i < dlogit.values.size(); ++i) {
    const float p = st.probs.values()[i];
    dlogit.values[i] = grad_probs.values()[i] * p * (1.0f - p);
  }
  Feature dx;
  ops(head_).backward(top, dlogit, g + head_.weight, g + head_.bias, &dx, scratch);

  std::vector<Feature> skip_grad(depth);
  Feature dbelow;
  for (int i = 0; i < depth; ++i) {
    const auto& s = st.decoder[i];
    Feature dy = std::move(dx);
    relu_mask(s.out, dy);
    Feature dmid;
    ops(decoder_[i].second).backward(s.mid, dy, g + decoder_[i].second.weight, g + decoder_[i].second.bias, &dmid, scratch);
    relu_mask(s.mid, dmid);
    Feature dcat;
    ops(decoder_[i].first).backward(s.in, dmid, g + decoder_[i].first.weight, g + decoder_[i].first.bias, &dcat, scratch);

    // Split [skip, up] channels.
    const int skip_channels = st.encoder[i].out.channels;
    Feature dskip(skip_channels, dcat.height, dcat.width);
    Feature dup(dcat.channels - skip_channels, dcat.height, dcat.width);
    const auto split_at = dcat.values.begin() + static_cast<std::ptrdiff_t>(dskip.values.size());
    std::copy(dcat.values.begin(), split_at, dskip.values.begin());
    std::copy(split_at, dcat.values.end(), dup.values.begin());
    skip_grad[i] = std::move(dskip);

    const Feature& below = i + 1 < depth ? st.decoder[i + 1].out : st.bottleneck.out;
    const Conv& uc = up_[i].conv;
    if (config_.upsampling == Upsampling::transposed) {
      TransposedOps{uc.in_channels, uc.out_channels, w + uc.weight, w + uc.bias}.backward(
          below, dup, g + uc.weight, g + uc.bias, dx, scratch);
    } else {
      const Feature upsampled = upsample_nearest(below);
      Feature dups;
      ops(uc).backward(upsampled, dup, g + uc.weight, g + uc.bias, &dups, scratch);
      dx = upsample_nearest_backward(dups);
    }
  }

  // Bottleneck.
  {
    const auto& s = st.bottleneck;
    Feature dy = std::move(dx);
    relu_mask(s.out, dy);
    Feature dmid;
    ops(bottleneck_.second).backward(s.mid, dy, g + bottleneck_.second.weight, g + bottleneck_.second.bias, &dmid, scratch);
    relu_mask(s.mid, dmid);
    ops(bottleneck_.first).backward(s.in, dmid, g + bottleneck_.first.weight, g + bottleneck_.first.bias, &dbelow, scratch);
  }

  for (int i = depth - 1; i >= 0; --i) {
    const auto& s = st.encoder[i];
    Feature dy = std::move(skip_grad[i]);
    maxpool_backward(s.out, dbelow, dy);
    relu_mask(s.out, dy);
    Feature dmid;
    ops(encoder_[i].second).backward(s.mid, dy, g + encoder_[i].second.weight, g + encoder_[i].second.bias, &dmid, scratch);
    relu_mask(s.mid, dmid);
    Feature* din = i > 0 ? &dbelow : nullptr;
    ops(encoder_[i].first).backward(s.in, dmid, g + encoder_[i].first.weight, g + encoder_[i].first.bias, din, scratch);
  }
}

Model build_unet(const UNetConfig& config) { return Model(config); }

}  // namespace vesselseg
