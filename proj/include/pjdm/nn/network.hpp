#pragma once

// Small convolutional encoder-decoder with hand-written reverse mode.
//
// Parameter layout (canonical order, also the checkpoint order):
//   time projection  W[c0][temb], b[c0]
//   unet:   for level l = 0..L-1:   conv_a W[w_l][cin_l][3][3], b[w_l]
//                                    conv_b W[w_l][w_l][3][3],  b[w_l]
//           for level l = L-2..0:   dec    W[w_l][w_l+w_{l+1}][3][3], b[w_l]
//           out W[1][w_0][3][3], b[1]
//   linear: out W[1][cin][3][3], b[1]
// c0 is w_0 for unet and 1 for linear. The time bias is added per channel to
// the first convolution's output.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pjdm::nn {

struct Architecture {
  enum class Kind { Linear, UNet };

  Kind kind = Kind::UNet;
  int in_channels = 1;
  std::vector<int> widths{8, 16, 32};
  int time_dim = 16;
  double time_scale = 1.0;

  /// e.g. "unet in=1 widths=8,16,32 temb=16 tscale=100"
  std::string to_string() const;
  static Architecture parse(std::string_view text);

  int levels() const { return kind == Kind::UNet ? static_cast<int>(widths.size()) : 0; }
  int first_channels() const { return kind == Kind::UNet ? widths.front() : 1; }
  std::size_t parameter_count() const;
  void validate() const;

  /// Widths are ignored for the linear kind.
  bool operator==(const Architecture& o) const {
    return kind == o.kind && in_channels == o.in_channels && time_dim == o.time_dim &&
           time_scale == o.time_scale && (kind == Kind::Linear || widths == o.widths);
  }
};

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C x (H*W) activation block.
template <class S>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  Mat<S> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w) : channels(c), height(h), width(w), data(Mat<S>::Zero(c, h * w)) {}
};

template <class S>
struct ConvCache {
  Mat<S> cols;
  int in_channels = 0;
  int height = 0;
  int width = 0;
};

/// Activations recorded by one forward pass. A tape is consumed by backward.
template <class S>
struct Tape {
  bool valid = false;
  std::vector<S> temb;
  std::vector<ConvCache<S>> conv;   // inputs of every convolution, in call order
  std::vector<Mat<S>> preact;       // SiLU inputs, in call order
  std::vector<std::pair<int, int>> dims;  // level spatial sizes

  void clear() {
    valid = false;
    conv.clear();
    preact.clear();
    dims.clear();
  }
};

namespace detail {

template <class S>
void im2col(const Tensor3<S>& in, ConvCache<S>& cache) {
  const int C = in.channels, H = in.height, W = in.width;
  cache.in_channels = C;
  cache.height = H;
  cache.width = W;
  cache.cols.setZero(C * 9, H * W);
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int row = c * 9 + ky * 3 + kx;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= H) continue;
          for (int x = 0; x < W; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= W) continue;
            cache.cols(row, y * W + x) = in.data(c, sy * W + sx);
          }
        }
      }
    }
  }
}

template <class S>
Tensor3<S> col2im(const Mat<S>& dcols, int C, int H, int W) {
  Tensor3<S> out(C, H, W);
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int row = c * 9 + ky * 3 + kx;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= H) continue;
          for (int x = 0; x < W; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= W) continue;
            out.data(c, sy * W + sx) += dcols(row, y * W + x);
          }
        }
      }
    }
  }
  return out;
}

template <class S>
S sigmoid(S z) {
  return S(1) / (S(1) + std::exp(-z));
}

}  // namespace detail

template <class S>
class Network {
 public:
  using Map = Eigen::Map<Mat<S>>;
  using ConstMap = Eigen::Map<const Mat<S>>;

  Network() = default;
  explicit Network(Architecture arch) : arch_(std::move(arch)) {
    arch_.validate();
    build_layout();
    params_.assign(arch_.parameter_count(), S(0));
  }

  const Architecture& arch() const { return arch_; }
  std::vector<S>& params() { return params_; }
  const std::vector<S>& params() const { return params_; }

  /// Fan-in scaled uniform weights, zero biases, zero output layer.
  void init(std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::fill(params_.begin(), params_.end(), S(0));
    for (const auto& L : layers_) {
      if (L.is_output) continue;
      const double bound = L.is_time ? 1.0 / std::sqrt(static_cast<double>(L.fan_in))
                                     : std::sqrt(6.0 / static_cast<double>(L.fan_in));
      for (std::size_t i = 0; i < L.weight_count(); ++i) {
        params_[L.w_off + i] = static_cast<S>(bound * u(eng));
      }
    }
  }

  /// Every parameter (output layer and biases included) uniform in [-scale, scale].
  void randomize(std::uint64_t seed, double scale) {
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& p : params_) p = static_cast<S>(u(eng));
  }

  std::vector<S> time_embedding(double tau) const {
    const int half = arch_.time_dim / 2;
    std::vector<S> e(static_cast<std::size_t>(arch_.time_dim));
    const double x = tau * arch_.time_scale;
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      e[static_cast<std::size_t>(k)] = static_cast<S>(std::sin(x * freq));
      e[static_cast<std::size_t>(k + half)] = static_cast<S>(std::cos(x * freq));
    }
    return e;
  }

  /// Input: in_channels x (H*W). Output: 1 x (H*W).
  Tensor3<S> forward(const Tensor3<S>& input, double tau, Tape<S>* tape = nullptr) const {
    if (input.channels != arch_.in_channels) {
      throw std::invalid_argument("network: expected " + std::to_string(arch_.in_channels) +
                                  " input channels, got " + std::to_string(input.channels));
    }
    if (input.height < 1 || input.width < 1) throw std::invalid_argument("network: empty input");
    Tape<S> local;
    Tape<S>& tp = tape ? *tape : local;
    tp.clear();
    tp.temb = time_embedding(tau);
    std::size_t li = 0;
    const Layer& time = layers_[li++];
    Mat<S> tbias = weight(time) * Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(
                                      tp.temb.data(), arch_.time_dim) +
                   bias(time);

    Tensor3<S> out;
    if (arch_.kind == Architecture::Kind::Linear) {
      out = conv(layers_[li++], input, tp);
      out.data.colwise() += tbias.col(0);
    } else {
      const int L = arch_.levels();
      std::vector<Tensor3<S>> skips;
      Tensor3<S> h = input;
      for (int l = 0; l < L; ++l) {
        if (l > 0) h = avgpool(h);
        tp.dims.emplace_back(h.height, h.width);
        Tensor3<S> z = conv(layers_[li++], h, tp);
        if (l == 0) z.data.colwise() += tbias.col(0);
        Tensor3<S> a = silu(std::move(z), tp);
        Tensor3<S> z2 = conv(layers_[li++], a, tp);
        h = silu(std::move(z2), tp);
        skips.push_back(h);
      }
      for (int l = L - 2; l >= 0; --l) {
        const auto& sk = skips[static_cast<std::size_t>(l)];
        Tensor3<S> up = upsample(h, sk.height, sk.width);
        Tensor3<S> cat(up.channels + sk.channels, sk.height, sk.width);
        cat.data.topRows(up.channels) = up.data;
        cat.data.bottomRows(sk.channels) = sk.data;
        h = silu(conv(layers_[li++], cat, tp), tp);
      }
      out = conv(layers_[li++], h, tp);
    }
    tp.valid = true;
    return out;
  }

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
  /// Returns d(loss)/d(input). The tape is invalidated.
  Tensor3<S> backward(Tape<S>& tp, const Tensor3<S>& grad_out, std::vector<S>& grads) const {
    if (!tp.valid) throw std::logic_error("network: backward needs a fresh forward tape");
    tp.valid = false;
    if (grads.size() != params_.size()) grads.assign(params_.size(), S(0));
    std::size_t conv_i = tp.conv.size();
    std::size_t act_i = tp.preact.size();
    std::size_t li = layers_.size();

    Tensor3<S> g = grad_out;
    Mat<S> dtbias;
    if (arch_.kind == Architecture::Kind::Linear) {
      dtbias = g.data.rowwise().sum();
      g = conv_backward(layers_[--li], tp.conv[--conv_i], g, grads);
    } else {
      const int L = arch_.levels();
      g = conv_backward(layers_[--li], tp.conv[--conv_i], g, grads);
      std::vector<Tensor3<S>> dskips(static_cast<std::size_t>(L));
      for (int l = 0; l <= L - 2; ++l) {
        g = silu_backward(tp.preact[--act_i], std::move(g));
        const auto& cache = tp.conv[--conv_i];
        Tensor3<S> dcat = conv_backward(layers_[--li], cache, g, grads);
        const int skip_c = arch_.widths[static_cast<std::size_t>(l)];
        const int up_c = dcat.channels - skip_c;
        Tensor3<S> dup(up_c, dcat.height, dcat.width);
        dup.data = dcat.data.topRows(up_c);
        Tensor3<S> dsk(skip_c, dcat.height, dcat.width);
        dsk.data = dcat.data.bottomRows(skip_c);
        dskips[static_cast<std::size_t>(l)] = std::move(dsk);
        const auto& below = tp.dims[static_cast<std::size_t>(l + 1)];
        g = upsample_backward(dup, below.first, below.second);
      }
      for (int l = L - 1; l >= 0; --l) {
        if (l < L - 1) g.data += dskips[static_cast<std::size_t>(l)].data;
        g = silu_backward(tp.preact[--act_i], std::move(g));
        g = conv_backward(layers_[--li], tp.conv[--conv_i], g, grads);
        g = silu_backward(tp.preact[--act_i], std::move(g));
        if (l == 0) dtbias = g.data.rowwise().sum();
        g = conv_backward(layers_[--li], tp.conv[--conv_i], g, grads);
        if (l > 0) {
          const auto& above = tp.dims[static_cast<std::size_t>(l - 1)];
          g = avgpool_backward(g, above.first, above.second);
        }
      }
    }
    const Layer& time = layers_[--li];
    Map dw(grads.data() + time.w_off, time.rows, time.cols);
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(grads.data() + time.b_off, time.rows);
    Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> emb(tp.temb.data(), arch_.time_dim);
    dw.noalias() += dtbias.col(0) * emb;
    db += dtbias.col(0);
    return g;
  }

 private:
  struct Layer {
    std::size_t w_off = 0;
    std::size_t b_off = 0;
    int rows = 0;  // output channels
    int cols = 0;  // cin*9 for conv, temb for the time projection
    int fan_in = 1;
    bool is_time = false;
    bool is_output = false;
    std::size_t weight_count() const {
      return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    }
  };

  void build_layout() {
    layers_.clear();
    std::size_t off = 0;
    auto add = [&](int cout, int cols, bool is_time, bool is_output) {
      Layer L;
      L.rows = cout;
      L.cols = cols;
      L.fan_in = cols;
      L.is_time = is_time;
      L.is_output = is_output;
      L.w_off = off;
      off += L.weight_count();
      L.b_off = off;
      off += static_cast<std::size_t>(cout);
      layers_.push_back(L);
    };
    add(arch_.first_channels(), arch_.time_dim, true, false);
    if (arch_.kind == Architecture::Kind::Linear) {
      add(1, arch_.in_channels * 9, false, false);
    } else {
      const auto& w = arch_.widths;
      int cin = arch_.in_channels;
      for (int width : w) {
        add(width, cin * 9, false, false);
        add(width, width * 9, false, false);
        cin = width;
      }
      for (int l = static_cast<int>(w.size()) - 2; l >= 0; --l) {
        const auto i = static_cast<std::size_t>(l);
        add(w[i], (w[i] + w[i + 1]) * 9, false, false);
      }
      add(1, w.front() * 9, false, true);
    }
    if (off != arch_.parameter_count()) throw std::logic_error("network: layout size mismatch");
  }

  ConstMap weight(const Layer& L) const { return ConstMap(params_.data() + L.w_off, L.rows, L.cols); }
  Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> bias(const Layer& L) const {
    return Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(params_.data() + L.b_off, L.rows);
  }

  Tensor3<S> conv(const Layer& L, const Tensor3<S>& in, Tape<S>& tp) const {
    tp.conv.emplace_back();
    auto& cache = tp.conv.back();
    detail::im2col(in, cache);
    Tensor3<S> out(L.rows, in.height, in.width);
    out.data.noalias() = weight(L) * cache.cols;
    out.data.colwise() += bias(L);
    return out;
  }

  Tensor3<S> conv_backward(const Layer& L, const ConvCache<S>& cache, const Tensor3<S>& g,
                           std::vector<S>& grads) const {
    Map dw(grads.data() + L.w_off, L.rows, L.cols);
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(grads.data() + L.b_off, L.rows);
    dw.noalias() += g.data * cache.cols.transpose();
    db += g.data.rowwise().sum();
    Mat<S> dcols = weight(L).transpose() * g.data;
    return detail::col2im(dcols, cache.in_channels, cache.height, cache.width);
  }

  Tensor3<S> silu(Tensor3<S> z, Tape<S>& tp) const {
    tp.preact.push_back(z.data);
    z.data = z.data.unaryExpr([](S v) { return v * detail::sigmoid(v); });
    return z;
  }

  static Tensor3<S> silu_backward(const Mat<S>& z, Tensor3<S> g) {
    g.data = g.data.cwiseProduct(z.unaryExpr([](S v) {
      const S s = detail::sigmoid(v);
      return s * (S(1) + v * (S(1) - s));
    }));
    return g;
  }

  static Tensor3<S> avgpool(const Tensor3<S>& in) {
    const int H = in.height / 2, W = in.width / 2;
    if (H < 1 || W < 1) throw std::invalid_argument("network: input too small for pooling");
    Tensor3<S> out(in.channels, H, W);
    for (int c = 0; c < in.channels; ++c) {
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const int s0 = 2 * y * in.width + 2 * x;
          out.data(c, y * W + x) = S(0.25) * (in.data(c, s0) + in.data(c, s0 + 1) +
                                              in.data(c, s0 + in.width) +
                                              in.data(c, s0 + in.width + 1));
        }
      }
    }
    return out;
  }

  static Tensor3<S> avgpool_backward(const Tensor3<S>& g, int H, int W) {
    Tensor3<S> out(g.channels, H, W);
    for (int c = 0; c < g.channels; ++c) {
      for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
          const S v = S(0.25) * g.data(c, y * g.width + x);
          const int s0 = 2 * y * W + 2 * x;
          out.data(c, s0) += v;
          out.data(c, s0 + 1) += v;
          out.data(c, s0 + W) += v;
          out.data(c, s0 + W + 1) += v;
        }
      }
    }
    return out;
  }

  static Tensor3<S> upsample(const Tensor3<S>& in, int H, int W) {
    Tensor3<S> out(in.channels, H, W);
    for (int c = 0; c < in.channels; ++c) {
      for (int y = 0; y < H; ++y) {
        const int sy = std::min(y / 2, in.height - 1);
        for (int x = 0; x < W; ++x) {
          const int sx = std::min(x / 2, in.width - 1);
          out.data(c, y * W + x) = in.data(c, sy * in.width + sx);
        }
      }
    }
    return out;
  }

  static Tensor3<S> upsample_backward(const Tensor3<S>& g, int h, int w) {
    Tensor3<S> out(g.channels, h, w);
    for (int c = 0; c < g.channels; ++c) {
      for (int y = 0; y < g.height; ++y) {
        const int sy = std::min(y / 2, h - 1);
        for (int x = 0; x < g.width; ++x) {
          const int sx = std::min(x / 2, w - 1);
          out.data(c, sy * w + sx) += g.data(c, y * g.width + x);
        }
      }
    }
    return out;
  }

  Architecture arch_;
  std::vector<Layer> layers_;
  std::vector<S> params_;
};

}  // namespace pjdm::nn
