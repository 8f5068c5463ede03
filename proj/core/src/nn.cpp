#include "semaforge/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "semaforge/errors.hpp"

namespace semaforge {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

// Bias gradients. Eigen may lower colwise().sum() to a GEMV whose summation
// order follows buffer alignment, which breaks run-to-run reproducibility.
void add_column_sums(const double* g, std::size_t rows, std::size_t cols, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += g[r * cols + c];
  }
}

struct Image4 {
  std::size_t n, h, w, c;
  bool batched;
};

Image4 as_image4(const Tensor& t, const char* op) {
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), false};
  throw DimensionError(std::string(op) + ": expected H x W x C or N x H x W x C, got " +
                       shape_str(t.shape()));
}

Shape image_shape(const Image4& g, std::size_t h, std::size_t w, std::size_t c) {
  if (g.batched) return {g.n, h, w, c};
  return {h, w, c};
}

std::vector<double> normal_values(std::size_t count, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(count);
  for (double& x : v) x = dist(rng);
  return v;
}

}  // namespace

void StateDict::append(const StateDict& other) {
  parameters.insert(parameters.end(), other.parameters.begin(), other.parameters.end());
  buffers.insert(buffers.end(), other.buffers.begin(), other.buffers.end());
}

std::vector<NamedTensor> StateDict::all() const {
  std::vector<NamedTensor> out = parameters;
  out.insert(out.end(), buffers.begin(), buffers.end());
  return out;
}

// --- conv2d ----------------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t h, w, cin, cout, k;
  long pad;
  std::size_t patch() const { return k * k * cin; }
  std::size_t sites() const { return h * w; }
};

// Per-thread scratch so the im2col matrix of one sample stays cache-resident
// and is never reallocated.
std::vector<double>& conv_scratch(std::size_t size) {
  thread_local std::vector<double> buffer;
  if (buffer.size() < size) buffer.resize(size);
  return buffer;
}

// Columns ordered (ky, kx, cin) to match the kernel's row-major layout.
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t patch = g.patch();
  std::fill(cols, cols + g.sites() * patch, 0.0);
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t xo = 0; xo < g.w; ++xo, cols += patch)
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const long sy = static_cast<long>(y + ky) - g.pad;
        if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const long sx = static_cast<long>(xo + kx) - g.pad;
          if (sx < 0 || sx >= static_cast<long>(g.w)) continue;
          const double* src = x + (static_cast<std::size_t>(sy) * g.w + sx) * g.cin;
          std::copy(src, src + g.cin, cols + (ky * g.k + kx) * g.cin);
        }
      }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t patch = g.patch();
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t xo = 0; xo < g.w; ++xo, cols += patch)
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const long sy = static_cast<long>(y + ky) - g.pad;
        if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const long sx = static_cast<long>(xo + kx) - g.pad;
          if (sx < 0 || sx >= static_cast<long>(g.w)) continue;
          double* dst = dx + (static_cast<std::size_t>(sy) * g.w + sx) * g.cin;
          const double* s = cols + (ky * g.k + kx) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) dst[c] += s[c];
        }
      }
}

// Direct 3x3 path for the narrow convolutions at full fragment resolution
// (LAM convs, first backbone stage), where im2col + GEMM is dominated by the
// skinny matrix shapes. Each sample is copied into a zero-bordered,
// channel-planar scratch image so that every kernel tap becomes a contiguous
// row update along x.
constexpr std::size_t kLanes = 8;
typedef double Vec __attribute__((vector_size(kLanes * sizeof(double))));

inline Vec load(const double* p) {
  Vec v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store(double* p, Vec v) { std::memcpy(p, &v, sizeof v); }
inline Vec splat(double x) { return Vec{} + x; }

struct PlanarScratch {
  std::vector<double> image;  // C x (h+2) x (w+2)
  std::vector<double> rows;   // per-row accumulators
  std::vector<double> grad;   // output gradient, same layout as image
  std::vector<Vec> wacc;      // kernel-gradient partial sums
  std::vector<double> wtail;
};

PlanarScratch& planar_scratch() {
  thread_local PlanarScratch s;
  return s;
}

// (h x w x c) interleaved -> c x (h+2) x (w+2), zero border.
void to_padded_planar(const double* src, std::size_t h, std::size_t w, std::size_t c,
                      std::vector<double>& dst) {
  const std::size_t ph = h + 2, pw = w + 2;
  dst.assign(c * ph * pw, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        dst[ch * ph * pw + (y + 1) * pw + x + 1] = src[(y * w + x) * c + ch];
}

// out[y, x, co] (+)= b[co] + sum over taps and ci of w[tap, ci, co] * xp.
// w is laid out (ky, kx, cin, cout).
void conv3x3_planar(const double* __restrict xp, const double* __restrict w,
                    const double* __restrict b, std::size_t h, std::size_t wd,
                    std::size_t cin, std::size_t cout, bool accumulate, double* __restrict out) {
  const std::size_t ph = h + 2, pw = wd + 2;
  std::vector<double>& rows = planar_scratch().rows;
  rows.resize(cout * wd);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* r = rows.data() + co * wd;
      const double init = b ? b[co] : 0.0;
      std::size_t x0 = 0;
      // 32-wide strips kept in four vector registers across all taps.
      for (; x0 + 4 * kLanes <= wd; x0 += 4 * kLanes) {
        Vec a0 = splat(init), a1 = a0, a2 = a0, a3 = a0;
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const double* src = xp + ci * ph * pw + (y + ky) * pw + x0;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const Vec wv = splat(w[((ky * 3 + kx) * cin + ci) * cout + co]);
              a0 += wv * load(src + kx);
              a1 += wv * load(src + kx + kLanes);
              a2 += wv * load(src + kx + 2 * kLanes);
              a3 += wv * load(src + kx + 3 * kLanes);
            }
          }
        store(r + x0, a0);
        store(r + x0 + kLanes, a1);
        store(r + x0 + 2 * kLanes, a2);
        store(r + x0 + 3 * kLanes, a3);
      }
      for (; x0 + kLanes <= wd; x0 += kLanes) {
        Vec a0 = splat(init);
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const double* src = xp + ci * ph * pw + (y + ky) * pw + x0;
            for (std::size_t kx = 0; kx < 3; ++kx)
              a0 += splat(w[((ky * 3 + kx) * cin + ci) * cout + co]) * load(src + kx);
          }
        store(r + x0, a0);
      }
      for (std::size_t x = x0; x < wd; ++x) {
        double acc = init;
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx)
              acc += w[((ky * 3 + kx) * cin + ci) * cout + co] *
                     xp[ci * ph * pw + (y + ky) * pw + x + kx];
        r[x] = acc;
      }
    }
    double* o = out + y * wd * cout;
    for (std::size_t x = 0; x < wd; ++x)
      for (std::size_t co = 0; co < cout; ++co) {
        const double v = rows[co * wd + x];
        if (accumulate) o[x * cout + co] += v;
        else o[x * cout + co] = v;
      }
  }
}

void direct_forward(const double* x, const double* w, const double* b, const ConvGeometry& g,
                    double* out) {
  PlanarScratch& s = planar_scratch();
  to_padded_planar(x, g.h, g.w, g.cin, s.image);
  conv3x3_planar(s.image.data(), w, b, g.h, g.w, g.cin, g.cout, false, out);
}

void direct_backward(const double* x, const double* w, const double* go, const ConvGeometry& g,
                     double* dx, double* dw, double* db) {
  PlanarScratch& s = planar_scratch();
  const std::size_t h = g.h, wd = g.w, cin = g.cin, cout = g.cout;
  const std::size_t ph = h + 2, pw = wd + 2;
  if (db) {
    for (std::size_t p = 0; p < h * wd; ++p)
      for (std::size_t co = 0; co < cout; ++co) db[co] += go[p * cout + co];
  }
  if (!dx && !dw) return;
  to_padded_planar(go, h, wd, cout, s.grad);
  if (dx) {
    // Correlation of the padded output gradient with the spatially flipped,
    // channel-transposed kernel.
    std::vector<double> wt(9 * cout * cin);
    for (std::size_t k = 0; k < 9; ++k)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t co = 0; co < cout; ++co)
          wt[((8 - k) * cout + co) * cin + ci] = w[(k * cin + ci) * cout + co];
    conv3x3_planar(s.grad.data(), wt.data(), nullptr, h, wd, cout, cin, true, dx);
  }
  if (dw) {
    to_padded_planar(x, h, wd, cin, s.image);
    const std::size_t taps = 9 * cin * cout;
    s.wacc.assign(taps, Vec{});
    s.wtail.assign(taps, 0.0);
    // Row-outer so the input and gradient rows stay in L1 across all taps.
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const double* src = s.image.data() + ci * ph * pw + (y + ky) * pw + kx;
            const std::size_t base = ((ky * 3 + kx) * cin + ci) * cout;
            for (std::size_t co = 0; co < cout; ++co) {
              const double* gr = s.grad.data() + co * ph * pw + (y + 1) * pw + 1;
              Vec t0{}, t1{};
              std::size_t xo = 0;
              for (; xo + 2 * kLanes <= wd; xo += 2 * kLanes) {
                t0 += load(src + xo) * load(gr + xo);
                t1 += load(src + xo + kLanes) * load(gr + xo + kLanes);
              }
              for (; xo < wd; ++xo) s.wtail[base + co] += src[xo] * gr[xo];
              s.wacc[base + co] += t0 + t1;
            }
          }
    for (std::size_t i = 0; i < taps; ++i) {
      double t = s.wtail[i];
      for (std::size_t l = 0; l < kLanes; ++l) t += s.wacc[i][l];
      dw[i] += t;
    }
  }
}

bool use_direct(const ConvGeometry& g) { return g.k == 3 && g.cin * g.cout <= 32; }

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  const Image4 img = as_image4(input, "conv2d");
  if (kernel.rank() != 4 || kernel.dim(0) != kernel.dim(1) || kernel.dim(0) % 2 == 0) {
    throw DimensionError("conv2d: kernel must be k x k x Cin x Cout with odd k, got " +
                         shape_str(kernel.shape()));
  }
  if (kernel.dim(2) != img.c) {
    throw DimensionError("conv2d: input has " + std::to_string(img.c) + " channels but kernel " +
                         shape_str(kernel.shape()) + " expects " + std::to_string(kernel.dim(2)));
  }
  const ConvGeometry g{img.h, img.w, img.c, kernel.dim(3), kernel.dim(0),
                       static_cast<long>(kernel.dim(0) / 2)};
  if (bias.numel() != g.cout) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(g.cout) + " output channels");
  }
  const std::size_t in_stride = g.sites() * g.cin;
  const std::size_t out_stride = g.sites() * g.cout;

  Buffer out(img.n * out_stride);
  const bool direct = use_direct(g);
  if (direct) {
    auto x = input.values();
    for (std::size_t n = 0; n < img.n; ++n) {
      direct_forward(x.data() + n * in_stride, kernel.values().data(), bias.values().data(), g,
                     out.data() + n * out_stride);
    }
  } else {
    auto x = input.values();
    std::vector<double>& cols = conv_scratch(g.sites() * g.patch());
    ConstMapMatrix w(kernel.values().data(), g.patch(), g.cout);
    Eigen::Map<const Eigen::RowVectorXd> b(bias.values().data(), g.cout);
    for (std::size_t n = 0; n < img.n; ++n) {
      im2col(x.data() + n * in_stride, g, cols.data());
      MapMatrix o(out.data() + n * out_stride, g.sites(), g.cout);
      o.noalias() = ConstMapMatrix(cols.data(), g.sites(), g.patch()) * w;
      o.rowwise() += b;
    }
  }

  return Tensor::from_op(
      "conv2d", image_shape(img, g.h, g.w, g.cout), std::move(out), {input, kernel, bias},
      [input, kernel, g, direct, batch = img.n, in_stride, out_stride](
          std::span<const double> grad, std::span<double* const> in) {
        if (direct) {
          auto x = input.values();
          for (std::size_t n = 0; n < batch; ++n) {
            direct_backward(x.data() + n * in_stride, kernel.values().data(),
                            grad.data() + n * out_stride, g,
                            in[0] ? in[0] + n * in_stride : nullptr, in[1], in[2]);
          }
          return;
        }
        std::vector<double>& cols = conv_scratch(g.sites() * g.patch());
        ConstMapMatrix w(kernel.values().data(), g.patch(), g.cout);
        auto x = input.values();
        for (std::size_t n = 0; n < batch; ++n) {
          ConstMapMatrix go(grad.data() + n * out_stride, g.sites(), g.cout);
          if (in[1]) {
            im2col(x.data() + n * in_stride, g, cols.data());
            MapMatrix(in[1], g.patch(), g.cout).noalias() +=
                ConstMapMatrix(cols.data(), g.sites(), g.patch()).transpose() * go;
          }
          if (in[2]) add_column_sums(grad.data() + n * out_stride, g.sites(), g.cout, in[2]);
          if (in[0]) {
            MapMatrix dcol(cols.data(), g.sites(), g.patch());
            dcol.noalias() = go * w.transpose();
            col2im_add(cols.data(), g, in[0] + n * in_stride);
          }
        }
      });
}

// --- batch norm --------------------------------------------------------------

namespace {

// Per-channel reductions over a count x channels row-major block. The
// restrict-qualified accumulators keep the sums in registers.
void channel_sum(const double* __restrict x, std::size_t count, std::size_t channels,
                 double* __restrict out) {
  for (std::size_t c = 0; c < channels; ++c) out[c] = 0.0;
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t c = 0; c < channels; ++c) out[c] += x[i * channels + c];
}

void channel_sq_dev(const double* __restrict x, const double* __restrict mu, std::size_t count,
                    std::size_t channels, double* __restrict out) {
  for (std::size_t c = 0; c < channels; ++c) out[c] = 0.0;
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      const double d = x[i * channels + c] - mu[c];
      out[c] += d * d;
    }
}

void channel_dot(const double* __restrict a, const double* __restrict b, std::size_t count,
                 std::size_t channels, double* __restrict out) {
  for (std::size_t c = 0; c < channels; ++c) out[c] = 0.0;
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t c = 0; c < channels; ++c) out[c] += a[i * channels + c] * b[i * channels + c];
}

// dx += a[c] * (g - b[c] - xhat * k[c])
void bn_input_grad(const double* __restrict g, const double* __restrict xhat,
                   const double* __restrict a, const double* __restrict b,
                   const double* __restrict k, std::size_t count, std::size_t channels,
                   double* __restrict dx) {
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t j = i * channels + c;
      dx[j] += a[c] * (g[j] - b[c] - xhat[j] * k[c]);
    }
}

}  // namespace

Tensor batch_norm(const Tensor& input, BatchNormState& state, Mode mode) {
  if (input.rank() < 2) {
    throw DimensionError("batch_norm: expected at least 2 axes, got " + shape_str(input.shape()));
  }
  const std::size_t channels = input.shape().back();
  if (state.gamma.numel() != channels) {
    throw DimensionError("batch_norm: layer has " + std::to_string(state.gamma.numel()) +
                         " channels, input " + shape_str(input.shape()));
  }
  const std::size_t count = input.numel() / channels;
  auto x = input.values();

  std::vector<double> mu(channels, 0.0), inv_std(channels, 0.0);
  if (mode == Mode::train) {
    // Rank-3 input is a single image: no batch to normalise over.
    const std::size_t batch = input.rank() == 3 ? 1 : input.dim(0);
    if (batch < 2) {
      throw ContractError("batch_norm: train mode needs a batch of at least 2 samples, got " +
                          std::to_string(batch));
    }
    std::vector<double> var(channels, 0.0);
    channel_sum(x.data(), count, channels, mu.data());
    for (double& m : mu) m /= static_cast<double>(count);
    channel_sq_dev(x.data(), mu.data(), count, channels, var.data());
    auto rm = state.running_mean.mutable_values();
    auto rv = state.running_var.mutable_values();
    for (std::size_t c = 0; c < channels; ++c) {
      const double biased = var[c] / static_cast<double>(count);
      const double unbiased = var[c] / static_cast<double>(count - 1);
      inv_std[c] = 1.0 / std::sqrt(biased + state.eps);
      rm[c] = (1.0 - state.momentum) * rm[c] + state.momentum * mu[c];
      rv[c] = (1.0 - state.momentum) * rv[c] + state.momentum * unbiased;
    }
  } else {
    auto rm = state.running_mean.values();
    auto rv = state.running_var.values();
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(rv[c] + state.eps);
    }
  }

  auto gamma = state.gamma.values();
  auto beta = state.beta.values();
  auto xhat = std::make_shared<Buffer>(x.size());
  Buffer out(x.size());
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t j = i * channels + c;
      (*xhat)[j] = (x[j] - mu[c]) * inv_std[c];
      out[j] = gamma[c] * (*xhat)[j] + beta[c];
    }

  const bool train = mode == Mode::train;
  return Tensor::from_op(
      "batch_norm", input.shape(), std::move(out), {input, state.gamma, state.beta},
      [xhat, inv_std, gamma = state.gamma, count, channels, train](std::span<const double> g,
                                                                   std::span<double* const> in) {
        auto gm = gamma.values();
        std::vector<double> sum_dy(channels), sum_dy_xhat(channels);
        channel_sum(g.data(), count, channels, sum_dy.data());
        channel_dot(g.data(), xhat->data(), count, channels, sum_dy_xhat.data());
        if (in[1])
          for (std::size_t c = 0; c < channels; ++c) in[1][c] += sum_dy_xhat[c];
        if (in[2])
          for (std::size_t c = 0; c < channels; ++c) in[2][c] += sum_dy[c];
        if (!in[0]) return;
        // Eval mode treats the statistics as constants.
        const double m = static_cast<double>(count);
        std::vector<double> a(channels), b(channels, 0.0), k(channels, 0.0);
        for (std::size_t c = 0; c < channels; ++c) {
          a[c] = gm[c] * inv_std[c];
          if (train) {
            b[c] = sum_dy[c] / m;
            k[c] = sum_dy_xhat[c] / m;
          }
        }
        bn_input_grad(g.data(), xhat->data(), a.data(), b.data(), k.data(), count, channels,
                      in[0]);
      });
}

// --- pooling -----------------------------------------------------------------

Tensor max_pool2x2(const Tensor& input) {
  const Image4 g = as_image4(input, "max_pool2x2");
  const std::size_t oh = g.h / 2, ow = g.w / 2;
  if (oh == 0 || ow == 0) {
    throw DimensionError("max_pool2x2: input " + shape_str(input.shape()) + " is smaller than 2x2");
  }
  auto x = input.values();
  Buffer out(g.n * oh * ow * g.c);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo)
        for (std::size_t c = 0; c < g.c; ++c, ++o) {
          std::size_t best = ((n * g.h + 2 * y) * g.w + 2 * xo) * g.c + c;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t j = ((n * g.h + 2 * y + dy) * g.w + 2 * xo + dx) * g.c + c;
              if (x[j] > x[best]) best = j;
            }
          out[o] = x[best];
          (*argmax)[o] = best;
        }
  return Tensor::from_op("max_pool2x2", image_shape(g, oh, ow, g.c), std::move(out), {input},
                         [argmax](std::span<const double> grad, std::span<double* const> in) {
                           if (!in[0]) return;
                           for (std::size_t o = 0; o < grad.size(); ++o) in[0][(*argmax)[o]] += grad[o];
                         });
}

Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  const Image4 g = as_image4(input, "adaptive_avg_pool");
  if (out_h == 0 || out_w == 0) throw ContractError("adaptive_avg_pool: output size must be positive");
  if (g.h < out_h || g.w < out_w) {
    throw ContractError("adaptive_avg_pool: input " + std::to_string(g.h) + "x" +
                        std::to_string(g.w) + " is smaller than the " + std::to_string(out_h) +
                        "x" + std::to_string(out_w) +
                        " output; upscale fragments to at least that size");
  }
  auto bin = [](std::size_t i, std::size_t len, std::size_t out) { return i * len / out; };
  auto x = input.values();
  Buffer out(g.n * out_h * out_w * g.c, 0.0);
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t y0 = bin(i, g.h, out_h), y1 = bin(i + 1, g.h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const std::size_t x0 = bin(j, g.w, out_w), x1 = bin(j + 1, g.w, out_w);
        const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
        double* dst = &out[((n * out_h + i) * out_w + j) * g.c];
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx)
            for (std::size_t c = 0; c < g.c; ++c) dst[c] += x[((n * g.h + y) * g.w + xx) * g.c + c];
        for (std::size_t c = 0; c < g.c; ++c) dst[c] *= inv;
      }
    }
  return Tensor::from_op(
      "adaptive_avg_pool", image_shape(g, out_h, out_w, g.c), std::move(out), {input},
      [g, out_h, out_w, bin](std::span<const double> grad, std::span<double* const> in) {
        if (!in[0]) return;
        for (std::size_t n = 0; n < g.n; ++n)
          for (std::size_t i = 0; i < out_h; ++i) {
            const std::size_t y0 = bin(i, g.h, out_h), y1 = bin(i + 1, g.h, out_h);
            for (std::size_t j = 0; j < out_w; ++j) {
              const std::size_t x0 = bin(j, g.w, out_w), x1 = bin(j + 1, g.w, out_w);
              const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
              const double* src = &grad[((n * out_h + i) * out_w + j) * g.c];
              for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t xx = x0; xx < x1; ++xx)
                  for (std::size_t c = 0; c < g.c; ++c)
                    in[0][((n * g.h + y) * g.w + xx) * g.c + c] += src[c] * inv;
            }
          }
      });
}

// --- dense -------------------------------------------------------------------

namespace {

void linear_row(const double* __restrict x, const double* __restrict w,
                const double* __restrict b, std::size_t fin, std::size_t fout,
                double* __restrict out) {
  for (std::size_t j = 0; j < fout; ++j) out[j] = b[j];
  for (std::size_t k = 0; k < fin; ++k) {
    const double v = x[k];
    const double* row = w + k * fout;
    for (std::size_t j = 0; j < fout; ++j) out[j] += v * row[j];
  }
}

}  // namespace

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(0) ||
      bias.numel() != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_str(input.shape()) + ", weight " +
                         shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()) +
                         " do not compose");
  }
  const std::size_t n = input.dim(0), fin = weight.dim(0), fout = weight.dim(1);
  Buffer out(n * fout);
  // Row by row with a fixed summation order: a sample's output does not
  // depend on what else is in the batch.
  for (std::size_t r = 0; r < n; ++r) {
    linear_row(input.values().data() + r * fin, weight.values().data(), bias.values().data(), fin,
               fout, out.data() + r * fout);
  }
  return Tensor::from_op(
      "linear", Shape{n, fout}, std::move(out), {input, weight, bias},
      [input, weight, n, fin, fout](std::span<const double> grad, std::span<double* const> in) {
        ConstMapMatrix go(grad.data(), n, fout);
        if (in[0]) {
          MapMatrix(in[0], n, fin).noalias() +=
              go * ConstMapMatrix(weight.values().data(), fin, fout).transpose();
        }
        if (in[1]) {
          MapMatrix(in[1], fin, fout).noalias() +=
              ConstMapMatrix(input.values().data(), n, fin).transpose() * go;
        }
        if (in[2]) add_column_sums(grad.data(), n, fout, in[2]);
      });
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() == 0) throw DimensionError("softmax: needs at least one axis");
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.numel() / k;
  auto x = logits.values();
  Buffer out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = &x[r * k];
    double* dst = &out[r * k];
    const double top = *std::max_element(src, src + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += dst[j] = std::exp(src[j] - top);
    for (std::size_t j = 0; j < k; ++j) dst[j] /= total;
  }
  auto saved = std::make_shared<Buffer>(out);
  return Tensor::from_op("softmax", logits.shape(), std::move(out), {logits},
                         [saved, rows, k](std::span<const double> g, std::span<double* const> in) {
                           if (!in[0]) return;
                           const auto& s = *saved;
                           for (std::size_t r = 0; r < rows; ++r) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * s[r * k + j];
                             for (std::size_t j = 0; j < k; ++j)
                               in[0][r * k + j] += s[r * k + j] * (g[r * k + j] - dot);
                           }
                         });
}

Tensor cross_entropy(const Tensor& probs, std::span<const int> labels) {
  Tensor table = probs.rank() == 1 ? probs.reshape({1, probs.dim(0)}) : probs;
  if (table.rank() != 2 || table.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: probs " + shape_str(probs.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= table.dim(1)) {
      throw ContractError("cross_entropy: label " + std::to_string(y) + " outside {0.." +
                          std::to_string(table.dim(1) - 1) + "}");
    }
  }
  return neg(mean(log_clamped(pick(table, labels), kLogFloor)));
}

// --- modules -------------------------------------------------------------------

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, Rng& rng, std::size_t kernel) {
  const std::size_t fan_in = kernel * kernel * in_channels;
  kernel_ = Tensor::parameter({kernel, kernel, in_channels, out_channels},
                              normal_values(fan_in * out_channels,
                                            std::sqrt(2.0 / static_cast<double>(fan_in)), rng));
  bias_ = Tensor::parameter({out_channels}, std::vector<double>(out_channels, 0.0));
}

void Conv2d::export_state(StateDict& out, const std::string& prefix) const {
  out.parameters.push_back({prefix + ".kernel", kernel_});
  out.parameters.push_back({prefix + ".bias", bias_});
}

BatchNorm::BatchNorm(std::size_t channels, double eps, double momentum) {
  state_.gamma = Tensor::parameter({channels}, std::vector<double>(channels, 1.0));
  state_.beta = Tensor::parameter({channels}, std::vector<double>(channels, 0.0));
  state_.running_mean = Tensor::zeros({channels});
  state_.running_var = Tensor::ones({channels});
  state_.eps = eps;
  state_.momentum = momentum;
}

void BatchNorm::export_state(StateDict& out, const std::string& prefix) const {
  out.parameters.push_back({prefix + ".gamma", state_.gamma});
  out.parameters.push_back({prefix + ".beta", state_.beta});
  out.buffers.push_back({prefix + ".running_mean", state_.running_mean});
  out.buffers.push_back({prefix + ".running_var", state_.running_var});
}

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& rng) {
  weight_ = Tensor::parameter(
      {in_features, out_features},
      normal_values(in_features * out_features,
                    std::sqrt(2.0 / static_cast<double>(in_features)), rng));
  bias_ = Tensor::parameter({out_features}, std::vector<double>(out_features, 0.0));
}

void Linear::export_state(StateDict& out, const std::string& prefix) const {
  out.parameters.push_back({prefix + ".weight", weight_});
  out.parameters.push_back({prefix + ".bias", bias_});
}

MlpHead::MlpHead(const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.size() != 4) {
    throw ContractError("MlpHead: expected 4 widths (in, hidden, hidden, out), got " +
                        std::to_string(widths.size()));
  }
  in_features_ = widths[0];
  for (std::size_t i = 0; i < 3; ++i) layers_.emplace_back(widths[i], widths[i + 1], rng);
}

Tensor MlpHead::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != in_features_) {
    throw DimensionError("MlpHead: expected N x " + std::to_string(in_features_) + ", got " +
                         shape_str(x.shape()));
  }
  Tensor h = relu(layers_[0].forward(x));
  h = relu(layers_[1].forward(h));
  return layers_[2].forward(h);
}

void MlpHead::export_state(StateDict& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].export_state(out, prefix + ".fc" + std::to_string(i + 1));
  }
}

}  // namespace semaforge
