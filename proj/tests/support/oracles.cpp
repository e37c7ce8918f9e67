#include "oracles.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace vesselseg::testkit {

double pairwise_auc(std::span<const Grid<float>> probs, std::span<const Grid<std::uint8_t>> masks) {
  std::vector<float> pos, neg;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    for (std::size_t i = 0; i < probs[k].values().size(); ++i) {
      (masks[k].values()[i] ? pos : neg).push_back(probs[k].values()[i]);
    }
  }
  double wins = 0.0;
  for (float a : pos) {
    for (float b : neg) {
      if (a > b) wins += 1.0;
      else if (a == b) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::pair<double, double> exhaustive_best_f1(std::span<const Grid<float>> probs,
                                             std::span<const Grid<std::uint8_t>> masks,
                                             const std::vector<double>& grid) {
  double best_t = grid.front();
  double best_f1 = -1.0;
  for (double t : grid) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
      for (std::size_t i = 0; i < probs[k].values().size(); ++i) {
        const bool pred = probs[k].values()[i] >= t;
        const bool truth = masks[k].values()[i] != 0;
        if (pred && truth) tp += 1;
        else if (pred) fp += 1;
        else if (truth) fn += 1;
      }
    }
    const double f1 = 2 * tp / (2 * tp + fp + fn);
    if (f1 > best_f1 || (f1 == best_f1 && t < best_t)) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return {best_t, best_f1};
}

std::size_t enumerate_unet_parameters(const UNetConfig& config) {
  struct Layer {
    std::size_t cin, cout, k;
  };
  std::vector<Layer> layers;
  std::size_t c = config.base_channels;
  std::size_t in = 1;
  for (int i = 0; i < config.depth; ++i) {
    layers.push_back({in, c, 3});
    layers.push_back({c, c, 3});
    in = c;
    c *= 2;
  }
  layers.push_back({in, c, 3});
  layers.push_back({c, c, 3});
  for (int i = config.depth - 1; i >= 0; --i) {
    const std::size_t out = c / 2;
    layers.push_back({c, out, config.upsampling == Upsampling::transposed ? 2u : 3u});
    layers.push_back({2 * out, out, 3});
    layers.push_back({out, out, 3});
    c = out;
  }
  layers.push_back({c, 1, 1});
  std::size_t total = 0;
  for (const auto& l : layers) total += l.cin * l.cout * l.k * l.k + l.cout;
  return total;
}

namespace {

struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
  double& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

class Weights {
 public:
  explicit Weights(const Model& m) : model_(m) {
    for (const auto& p : m.parameters()) by_name_[p.name] = &p;
  }
  std::span<const float> get(const std::string& name) const {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::runtime_error("missing parameter " + name);
    return model_.weights(*it->second);
  }

 private:
  const Model& model_;
  std::map<std::string, const ParameterInfo*> by_name_;
};

Tensor conv(const Tensor& x, const Weights& wts, const std::string& name, int cout, int k, bool relu) {
  const auto w = wts.get(name + ".weight");
  const auto b = wts.get(name + ".bias");
  const int pad = k / 2;
  Tensor y(cout, x.h, x.w);
  for (int co = 0; co < cout; ++co) {
    for (int i = 0; i < x.h; ++i) {
      for (int j = 0; j < x.w; ++j) {
        double s = b[co];
        for (int ci = 0; ci < x.c; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int sy = i + ky - pad;
              const int sx = j + kx - pad;
              if (sy < 0 || sx < 0 || sy >= x.h || sx >= x.w) continue;
              s += w[((static_cast<std::size_t>(co) * x.c + ci) * k + ky) * k + kx] * x.at(ci, sy, sx);
            }
          }
        }
        y.at(co, i, j) = relu ? std::max(0.0, s) : s;
      }
    }
  }
  return y;
}

Tensor pool(const Tensor& x) {
  Tensor y(x.c, x.h / 2, x.w / 2);
  for (int c = 0; c < x.c; ++c)
    for (int i = 0; i < y.h; ++i)
      for (int j = 0; j < y.w; ++j)
        y.at(c, i, j) = std::max(std::max(x.at(c, 2 * i, 2 * j), x.at(c, 2 * i, 2 * j + 1)),
                                 std::max(x.at(c, 2 * i + 1, 2 * j), x.at(c, 2 * i + 1, 2 * j + 1)));
  return y;
}

Tensor up_transposed(const Tensor& x, const Weights& wts, const std::string& name, int cout) {
  const auto w = wts.get(name + ".weight");
  const auto b = wts.get(name + ".bias");
  Tensor y(cout, x.h * 2, x.w * 2);
  for (int co = 0; co < cout; ++co)
    for (int i = 0; i < y.h; ++i)
      for (int j = 0; j < y.w; ++j) {
        double s = b[co];
        for (int ci = 0; ci < x.c; ++ci)
          s += w[((static_cast<std::size_t>(ci) * cout + co) * 2 + i % 2) * 2 + j % 2] * x.at(ci, i / 2, j / 2);
        y.at(co, i, j) = s;
      }
  return y;
}

Tensor up_nearest(const Tensor& x) {
  Tensor y(x.c, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c)
    for (int i = 0; i < y.h; ++i)
      for (int j = 0; j < y.w; ++j) y.at(c, i, j) = x.at(c, i / 2, j / 2);
  return y;
}

Tensor cat(const Tensor& a, const Tensor& b) {
  Tensor y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return y;
}

}  // namespace

Grid<double> naive_unet_forward(const Model& model, const Grid<float>& input) {
  const auto& cfg = model.config();
  const Weights wts(model);
  Tensor x(1, input.height(), input.width());
  for (int y = 0; y < input.height(); ++y)
    for (int xx = 0; xx < input.width(); ++xx) x.at(0, y, xx) = input(xx, y);

  std::vector<Tensor> skips;
  int c = cfg.base_channels;
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string p = "encoder" + std::to_string(i);
    x = conv(conv(x, wts, p + ".conv1", c, 3, true), wts, p + ".conv2", c, 3, true);
    skips.push_back(x);
    x = pool(x);
    c *= 2;
  }
  x = conv(conv(x, wts, "bottleneck.conv1", c, 3, true), wts, "bottleneck.conv2", c, 3, true);
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const std::string p = "decoder" + std::to_string(i);
    c /= 2;
    const Tensor up = cfg.upsampling == Upsampling::transposed ? up_transposed(x, wts, p + ".up", c)
                                                                : conv(up_nearest(x), wts, p + ".up", c, 3, false);
    x = cat(skips[static_cast<std::size_t>(i)], up);
    x = conv(conv(x, wts, p + ".conv1", c, 3, true), wts, p + ".conv2", c, 3, true);
  }
  const Tensor logits = conv(x, wts, "head", 1, 1, false);
  Grid<double> out(input.width(), input.height());
  for (int y = 0; y < input.height(); ++y)
    for (int xx = 0; xx < input.width(); ++xx) out(xx, y) = 1.0 / (1.0 + std::exp(-logits.at(0, y, xx)));
  return out;
}

std::size_t naive_box_count(const Grid<std::uint8_t>& mask, int s) {
  std::size_t count = 0;
  for (int by = 0; by < mask.height(); by += s) {
    for (int bx = 0; bx < mask.width(); bx += s) {
      bool hit = false;
      for (int y = by; y < std::min(by + s, mask.height()) && !hit; ++y)
        for (int x = bx; x < std::min(bx + s, mask.width()) && !hit; ++x) hit = mask(x, y) != 0;
      if (hit) ++count;
    }
  }
  return count;
}

Grid<std::uint8_t> sierpinski(int order) {
  const int n = 1 << order;
  Grid<std::uint8_t> g(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x <= y; ++x) g(x, y) = ((x & (y - x)) == 0) ? 1 : 0;
  return g;
}

}  // namespace vesselseg::testkit
