#include <Eigen/Core>
#include <algorithm>
#include <limits>
#include <thread>

#include "capsed/tensor.hpp"

namespace capsed {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

std::size_t g_num_threads = 1;

// Runs fn(i) for i in [0, n). Each index must write to disjoint memory.
template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t workers = std::min(g_num_threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

struct ConvGeometry {
  std::size_t batch, c_in, c_out, h, w, kh, kw;
  std::size_t patch() const { return c_in * kh * kw; }
  std::size_t plane() const { return h * w; }
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(g.kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(g.kw / 2);
  const auto H = static_cast<std::ptrdiff_t>(g.h), W = static_cast<std::ptrdiff_t>(g.w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    const double* plane = x + c * g.plane();
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj, ++row) {
        double* dst = col + row * g.plane();
        const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(ki) - ph;
        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(kj) - pw;
        for (std::ptrdiff_t i = 0; i < H; ++i) {
          const std::ptrdiff_t si = i + di;
          double* out = dst + i * W;
          if (si < 0 || si >= H) {
            std::fill(out, out + W, 0.0);
            continue;
          }
          const double* src = plane + si * W;
          for (std::ptrdiff_t j = 0; j < W; ++j) {
            const std::ptrdiff_t sj = j + dj;
            out[j] = (sj < 0 || sj >= W) ? 0.0 : src[sj];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(g.kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(g.kw / 2);
  const auto H = static_cast<std::ptrdiff_t>(g.h), W = static_cast<std::ptrdiff_t>(g.w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    double* plane = dx + c * g.plane();
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj, ++row) {
        const double* src = col + row * g.plane();
        const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(ki) - ph;
        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(kj) - pw;
        for (std::ptrdiff_t i = 0; i < H; ++i) {
          const std::ptrdiff_t si = i + di;
          if (si < 0 || si >= H) continue;
          double* dst = plane + si * W;
          const double* s = src + i * W;
          for (std::ptrdiff_t j = 0; j < W; ++j) {
            const std::ptrdiff_t sj = j + dj;
            if (sj >= 0 && sj < W) dst[sj] += s[j];
          }
        }
      }
    }
  }
}

}  // namespace

void set_num_threads(std::size_t n) { g_num_threads = std::max<std::size_t>(1, n); }
std::size_t num_threads() { return g_num_threads; }

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  if (input.rank() != 3 && input.rank() != 4) {
    throw ShapeError("conv2d: input must be [C x H x W] or [B x C x H x W], got " +
                     to_string(input.shape()));
  }
  if (kernels.rank() != 4) throw ShapeError("conv2d: kernels must be rank 4, got " + to_string(kernels.shape()));
  const bool batched = input.rank() == 4;
  ConvGeometry g{};
  g.batch = batched ? input.dim(0) : 1;
  g.c_in = input.dim(batched ? 1 : 0);
  g.h = input.dim(batched ? 2 : 1);
  g.w = input.dim(batched ? 3 : 2);
  g.c_out = kernels.dim(0);
  g.kh = kernels.dim(2);
  g.kw = kernels.dim(3);
  if (kernels.dim(1) != g.c_in) {
    throw ShapeError("conv2d: input has " + std::to_string(g.c_in) + " channels but kernels " +
                     to_string(kernels.shape()) + " expect " + std::to_string(kernels.dim(1)));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ShapeError("conv2d: same padding needs odd kernel sizes");
  if (bias.rank() != 1 || bias.dim(0) != g.c_out) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match " +
                     std::to_string(g.c_out) + " output channels");
  }

  Shape out_shape = batched ? Shape{g.batch, g.c_out, g.h, g.w} : Shape{g.c_out, g.h, g.w};
  std::vector<double> out(g.batch * g.c_out * g.plane());
  const double* x = input.data().data();
  ConstMap kmat(kernels.data().data(), g.c_out, g.patch());
  Eigen::Map<const Eigen::VectorXd> bv(bias.data().data(), g.c_out);
  parallel_for(g.batch, [&](std::size_t b) {
    std::vector<double> col(g.patch() * g.plane());
    im2col(x + b * g.c_in * g.plane(), g, col.data());
    Map y(out.data() + b * g.c_out * g.plane(), g.c_out, g.plane());
    y.noalias() = kmat * ConstMap(col.data(), g.patch(), g.plane());
    y.colwise() += bv;
  });

  return Tensor::record(
      std::move(out_shape), std::move(out), {input, kernels, bias},
      [input, kernels, g](std::span<const double> gout, GradInputs gi) {
        const double* x = input.data().data();
        ConstMap kmat(kernels.data().data(), g.c_out, g.patch());
        // Per-sample kernel gradients, reduced in sample order afterwards.
        std::vector<RowMatrix> dk(gi[1] ? g.batch : 0);
        parallel_for(g.batch, [&](std::size_t b) {
          ConstMap dy(gout.data() + b * g.c_out * g.plane(), g.c_out, g.plane());
          std::vector<double> col(g.patch() * g.plane());
          if (gi[1]) {
            im2col(x + b * g.c_in * g.plane(), g, col.data());
            dk[b].noalias() = dy * ConstMap(col.data(), g.patch(), g.plane()).transpose();
          }
          if (gi[0]) {
            Map(col.data(), g.patch(), g.plane()).noalias() = kmat.transpose() * dy;
            col2im_add(col.data(), g, gi[0] + b * g.c_in * g.plane());
          }
        });
        if (gi[1]) {
          Map dkernels(gi[1], g.c_out, g.patch());
          for (const auto& d : dk) dkernels += d;
        }
        if (gi[2]) {
          for (std::size_t b = 0; b < g.batch; ++b) {
            ConstMap dy(gout.data() + b * g.c_out * g.plane(), g.c_out, g.plane());
            Eigen::Map<Eigen::VectorXd>(gi[2], g.c_out) += dy.rowwise().sum();
          }
        }
      });
}

Tensor maxpool_freq(const Tensor& input, std::size_t pool) {
  if (input.rank() < 2) throw ShapeError("maxpool_freq: input needs frequency and time axes");
  if (pool == 0) throw ShapeError("maxpool_freq: pool size must be positive");
  const std::size_t f = input.dim(input.rank() - 2);
  const std::size_t t = input.dim(input.rank() - 1);
  if (f % pool != 0) {
    throw ShapeError("maxpool_freq: " + std::to_string(f) + " frequency bins not divisible by " +
                     std::to_string(pool));
  }
  const std::size_t planes = input.numel() / (f * t);
  const std::size_t fo = f / pool;
  Shape out_shape = input.shape();
  out_shape[out_shape.size() - 2] = fo;
  auto x = input.data();
  std::vector<double> out(planes * fo * t);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < fo; ++i) {
      for (std::size_t j = 0; j < t; ++j) {
        std::size_t best = p * f * t + (i * pool) * t + j;
        for (std::size_t k = 1; k < pool; ++k) {
          const std::size_t idx = p * f * t + (i * pool + k) * t + j;
          if (x[idx] > x[best]) best = idx;
        }
        const std::size_t o = p * fo * t + i * t + j;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  return Tensor::record(std::move(out_shape), std::move(out), {input},
                        [argmax = std::move(argmax)](std::span<const double> g, GradInputs gi) {
                          for (std::size_t o = 0; o < g.size(); ++o) gi[0][argmax[o]] += g[o];
                        });
}

}  // namespace capsed
