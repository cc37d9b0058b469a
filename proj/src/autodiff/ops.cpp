#include "msn/autodiff/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "msn/error.hpp"

namespace msn::ad {
namespace {

using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

bool wants_grad(const NodePtr& n) { return n && n->requires_grad; }

void check_rank(const Tensor& t, std::size_t rank, const char* op) {
  require(t.defined(), Errc::invalid_argument, std::string(op) + ": undefined tensor");
  require(t.rank() == rank, Errc::shape_mismatch,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
}

// ---------------------------------------------------------------- convolution

struct ConvGeom {
  std::size_t B, Ci, H, W, Co, kh, kw, sh, sw, ph, pw, Ho, Wo;
  std::size_t K() const { return Ci * kh * kw; }
  std::size_t P() const { return Ho * Wo; }
};

// Output columns [lo, hi) whose input column ox * sw + kx - pw lies inside [0, W).
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeom& g, std::size_t kx) {
  std::size_t lo = 0;
  while (lo < g.Wo && lo * g.sw + kx < g.pw) ++lo;
  std::size_t hi = lo;
  while (hi < g.Wo && hi * g.sw + kx < g.W + g.pw) ++hi;
  return {lo, hi};
}

// cols is (K, nb * P) row-major; column index = local batch * P + output position.
void im2col(const double* x, const ConvGeom& g, std::size_t b0, std::size_t nb, double* cols) {
  const std::size_t P = g.P(), ld = nb * P;
  for (std::size_t ci = 0; ci < g.Ci; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* dst = cols + ((ci * g.kh + ky) * g.kw + kx) * ld;
        for (std::size_t bi = 0; bi < nb; ++bi) {
          const double* xb = x + ((b0 + bi) * g.Ci + ci) * g.H * g.W;
          double* d = dst + bi * P;
          for (std::size_t oy = 0; oy < g.Ho; ++oy) {
            const long iy = long(oy * g.sh + ky) - long(g.ph);
            double* row = d + oy * g.Wo;
            if (iy < 0 || iy >= long(g.H)) {
              std::fill(row, row + g.Wo, 0.0);
              continue;
            }
            const double* xr = xb + std::size_t(iy) * g.W;
            const auto [lo, hi] = valid_columns(g, kx);
            std::fill(row, row + lo, 0.0);
            std::fill(row + hi, row + g.Wo, 0.0);
            const double* src = xr + (lo * g.sw + kx - g.pw);
            if (g.sw == 1)
              std::copy(src, src + (hi - lo), row + lo);
            else
              for (std::size_t ox = lo; ox < hi; ++ox, src += g.sw) row[ox] = *src;
          }
        }
      }
}

void col2im(const double* cols, const ConvGeom& g, std::size_t b0, std::size_t nb, double* dx) {
  const std::size_t P = g.P(), ld = nb * P;
  for (std::size_t ci = 0; ci < g.Ci; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* src = cols + ((ci * g.kh + ky) * g.kw + kx) * ld;
        for (std::size_t bi = 0; bi < nb; ++bi) {
          double* xb = dx + ((b0 + bi) * g.Ci + ci) * g.H * g.W;
          const double* s = src + bi * P;
          for (std::size_t oy = 0; oy < g.Ho; ++oy) {
            const long iy = long(oy * g.sh + ky) - long(g.ph);
            if (iy < 0 || iy >= long(g.H)) continue;
            double* xr = xb + std::size_t(iy) * g.W;
            const double* row = s + oy * g.Wo;
            const auto [lo, hi] = valid_columns(g, kx);
            double* dst = xr + (lo * g.sw + kx - g.pw);
            for (std::size_t ox = lo; ox < hi; ++ox, dst += g.sw) *dst += row[ox];
          }
        }
      }
}

std::size_t batch_chunk(const ConvGeom& g) {
  constexpr std::size_t kMaxColsEntries = std::size_t(1) << 16;
  return std::clamp<std::size_t>(kMaxColsEntries / std::max<std::size_t>(1, g.K() * g.P()), 1, g.B);
}

// ------------------------------------------------------------- broadcasting

// For each flat index of `from`, the flat index of `to` whose dims are equal or 1.
std::vector<std::size_t> reduce_index_map(const Shape& from, const Shape& to) {
  const std::size_t r = from.size();
  std::vector<std::size_t> to_stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    to_stride[i] = to[i] == 1 ? 0 : s;
    s *= to[i];
  }
  std::vector<std::size_t> map(numel(from));
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    map[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      ++idx[i];
      off += to_stride[i];
      if (idx[i] < from[i]) break;
      off -= to_stride[i] * idx[i];
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
  check_rank(x, 4, "conv2d");
  check_rank(weight, 4, "conv2d");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3),
             opt.stride_h, opt.stride_w, opt.pad_h, opt.pad_w, 0, 0};
  require(weight.dim(1) == g.Ci, Errc::shape_mismatch,
          "conv2d: input channels " + std::to_string(g.Ci) + " vs weight " + shape_str(weight.shape()));
  require(g.sh >= 1 && g.sw >= 1, Errc::invalid_argument, "conv2d: stride must be >= 1");
  require(g.H + 2 * g.ph >= g.kh && g.W + 2 * g.pw >= g.kw, Errc::shape_mismatch,
          "conv2d: kernel " + shape_str(weight.shape()) + " exceeds padded input " + shape_str(x.shape()));
  if (bias.defined())
    require(bias.numel() == g.Co, Errc::shape_mismatch, "conv2d: bias size mismatch");
  g.Ho = (g.H + 2 * g.ph - g.kh) / g.sh + 1;
  g.Wo = (g.W + 2 * g.pw - g.kw) / g.sw + 1;

  const std::size_t K = g.K(), P = g.P(), chunk = batch_chunk(g);
  std::vector<double> out(g.B * g.Co * P);
  ConstRowMap wm(weight.data().data(), g.Co, K);
  std::vector<double> cols;
  RowMat prod;
  for (std::size_t b0 = 0; b0 < g.B; b0 += chunk) {
    const std::size_t nb = std::min(chunk, g.B - b0);
    cols.resize(K * nb * P);
    im2col(x.data().data(), g, b0, nb, cols.data());
    prod.noalias() = wm * ConstRowMap(cols.data(), K, nb * P);
    for (std::size_t bi = 0; bi < nb; ++bi)
      for (std::size_t co = 0; co < g.Co; ++co) {
        const double bv = bias.defined() ? bias.data()[co] : 0.0;
        double* dst = out.data() + ((b0 + bi) * g.Co + co) * P;
        const double* src = prod.data() + co * nb * P + bi * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + bv;
      }
  }

  NodePtr xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
  return make_result(
      {g.B, g.Co, g.Ho, g.Wo}, std::move(out), {x, weight, bias},
      [xn, wn, bn, g](Node& self) {
        const std::size_t K = g.K(), P = g.P(), chunk = batch_chunk(g);
        const double* gy = self.grad.data();
        if (wants_grad(bn)) {
          auto& db = bn->ensure_grad();
          for (std::size_t b = 0; b < g.B; ++b)
            for (std::size_t co = 0; co < g.Co; ++co) {
              const double* src = gy + (b * g.Co + co) * P;
              db[co] += std::accumulate(src, src + P, 0.0);
            }
        }
        if (!wants_grad(xn) && !wants_grad(wn)) return;
        std::vector<double> cols, gmat;
        ConstRowMap wm(wn->value.data(), g.Co, K);
        RowMat dcols;
        for (std::size_t b0 = 0; b0 < g.B; b0 += chunk) {
          const std::size_t nb = std::min(chunk, g.B - b0);
          gmat.resize(g.Co * nb * P);
          for (std::size_t bi = 0; bi < nb; ++bi)
            for (std::size_t co = 0; co < g.Co; ++co) {
              const double* src = gy + ((b0 + bi) * g.Co + co) * P;
              std::copy(src, src + P, gmat.data() + co * nb * P + bi * P);
            }
          ConstRowMap gm(gmat.data(), g.Co, nb * P);
          if (wants_grad(wn)) {
            cols.resize(K * nb * P);
            im2col(xn->value.data(), g, b0, nb, cols.data());
            RowMap dw(wn->ensure_grad().data(), g.Co, K);
            dw.noalias() += gm * ConstRowMap(cols.data(), K, nb * P).transpose();
          }
          if (wants_grad(xn)) {
            dcols.noalias() = wm.transpose() * gm;
            col2im(dcols.data(), g, b0, nb, xn->ensure_grad().data());
          }
        }
      },
      "conv2d");
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  check_rank(x, 3, "conv1d");
  check_rank(weight, 3, "conv1d");
  require(weight.dim(2) <= x.dim(2), Errc::shape_mismatch,
          "conv1d: kernel " + std::to_string(weight.dim(2)) + " longer than input " +
              std::to_string(x.dim(2)));
  Tensor x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
  Tensor w4 = reshape(weight, {weight.dim(0), weight.dim(1), 1, weight.dim(2)});
  Tensor y = conv2d(x4, w4, bias, {1, stride, 0, 0});
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3)});
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check_rank(x, 2, "linear");
  check_rank(weight, 2, "linear");
  const std::size_t B = x.dim(0), Din = x.dim(1), Dout = weight.dim(0);
  require(weight.dim(1) == Din, Errc::shape_mismatch,
          "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  if (bias.defined()) require(bias.numel() == Dout, Errc::shape_mismatch, "linear: bias size mismatch");
  std::vector<double> out(B * Dout);
  RowMap y(out.data(), B, Dout);
  y.noalias() = ConstRowMap(x.data().data(), B, Din) * ConstRowMap(weight.data().data(), Dout, Din).transpose();
  if (bias.defined())
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), Dout);

  NodePtr xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
  return make_result(
      {B, Dout}, std::move(out), {x, weight, bias},
      [xn, wn, bn, B, Din, Dout](Node& self) {
        ConstRowMap gy(self.grad.data(), B, Dout);
        if (wants_grad(xn))
          RowMap(xn->ensure_grad().data(), B, Din).noalias() += gy * ConstRowMap(wn->value.data(), Dout, Din);
        if (wants_grad(wn))
          RowMap(wn->ensure_grad().data(), Dout, Din).noalias() +=
              gy.transpose() * ConstRowMap(xn->value.data(), B, Din);
        if (wants_grad(bn))
          Eigen::Map<Eigen::RowVectorXd>(bn->ensure_grad().data(), Dout) += gy.colwise().sum();
      },
      "linear");
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.data()[i]);
  NodePtr xn = x.node();
  return make_result(
      x.shape(), std::move(out), {x},
      [xn](Node& self) {
        if (!wants_grad(xn)) return;
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (xn->value[i] > 0.0) gx[i] += self.grad[i];
      },
      "relu");
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
  NodePtr xn = x.node();
  return make_result(
      x.shape(), std::move(out), {x},
      [xn](Node& self) {
        if (!wants_grad(xn)) return;
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double s = self.value[i];
          gx[i] += self.grad[i] * s * (1.0 - s);
        }
      },
      "sigmoid");
}

Tensor silu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] / (1.0 + std::exp(-x.data()[i]));
  NodePtr xn = x.node();
  return make_result(
      x.shape(), std::move(out), {x},
      [xn](Node& self) {
        if (!wants_grad(xn)) return;
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double v = xn->value[i], s = 1.0 / (1.0 + std::exp(-v));
          gx[i] += self.grad[i] * s * (1.0 + v * (1.0 - s));
        }
      },
      "silu");
}

Tensor max_pool2d(const Tensor& x, PoolOptions opt) {
  check_rank(x, 4, "max_pool2d");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(opt.stride_h >= 1 && opt.stride_w >= 1, Errc::invalid_argument, "max_pool2d: stride must be >= 1");
  require(opt.pad_h < opt.kernel_h && opt.pad_w < opt.kernel_w, Errc::invalid_argument,
          "max_pool2d: padding must be smaller than the window");
  require(H + 2 * opt.pad_h >= opt.kernel_h && W + 2 * opt.pad_w >= opt.kernel_w, Errc::shape_mismatch,
          "max_pool2d: window exceeds padded input " + shape_str(x.shape()));
  const std::size_t Ho = (H + 2 * opt.pad_h - opt.kernel_h) / opt.stride_h + 1;
  const std::size_t Wo = (W + 2 * opt.pad_w - opt.kernel_w) / opt.stride_w + 1;

  std::vector<double> out(B * C * Ho * Wo);
  std::vector<std::size_t> argmax(out.size());
  const double* xv = x.data().data();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* plane = xv + bc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t ky = 0; ky < opt.kernel_h; ++ky) {
          const long iy = long(oy * opt.stride_h + ky) - long(opt.pad_h);
          if (iy < 0 || iy >= long(H)) continue;
          for (std::size_t kx = 0; kx < opt.kernel_w; ++kx) {
            const long ix = long(ox * opt.stride_w + kx) - long(opt.pad_w);
            if (ix < 0 || ix >= long(W)) continue;
            const std::size_t idx = std::size_t(iy) * W + std::size_t(ix);
            if (plane[idx] > best) {
              best = plane[idx];
              arg = idx;
            }
          }
        }
        const std::size_t o = (bc * Ho + oy) * Wo + ox;
        out[o] = best;
        argmax[o] = bc * H * W + arg;
      }
  }
  NodePtr xn = x.node();
  return make_result(
      {B, C, Ho, Wo}, std::move(out), {x},
      [xn, argmax = std::move(argmax)](Node& self) {
        if (!wants_grad(xn)) return;
        auto& gx = xn->ensure_grad();
        for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[o];
      },
      "max_pool2d");
}

Tensor global_max_pool2d(const Tensor& x) {
  check_rank(x, 4, "global_max_pool2d");
  Tensor y = max_pool2d(x, {x.dim(2), x.dim(3), x.dim(2), x.dim(3), 0, 0});
  return reshape(y, {x.dim(0), x.dim(1)});
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training, double eps, double momentum) {
  require(x.defined() && (x.rank() == 2 || x.rank() == 4), Errc::shape_mismatch,
          "batch_norm: expected (B,C) or (B,C,H,W)");
  const std::size_t B = x.dim(0), C = x.dim(1), S = x.numel() / (B * C);
  require(gamma.numel() == C && beta.numel() == C, Errc::shape_mismatch, "batch_norm: affine size mismatch");
  if (state.running_mean.size() != C) {
    state.running_mean.assign(C, 0.0);
    state.running_var.assign(C, 1.0);
  }
  const double* xv = x.data().data();
  const std::size_t n = B * S;
  std::vector<double> mean(C, 0.0), inv_std(C), out(x.numel()), xhat(x.numel());
  if (training) {
    std::vector<double> sq(C, 0.0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const double* row = xv + (b * C + c) * S;
        double acc = 0.0;
        for (std::size_t s = 0; s < S; ++s) acc += row[s];
        mean[c] += acc;
      }
    for (std::size_t c = 0; c < C; ++c) mean[c] /= double(n);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const double* row = xv + (b * C + c) * S;
        double acc = 0.0;
        for (std::size_t s = 0; s < S; ++s) acc += (row[s] - mean[c]) * (row[s] - mean[c]);
        sq[c] += acc;
      }
    for (std::size_t c = 0; c < C; ++c) {
      const double var = sq[c] / double(n);
      const double unbiased = n > 1 ? sq[c] / double(n - 1) : var;
      state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * mean[c];
      state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * unbiased;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }
  const double* gv = gamma.data().data();
  const double* bv = beta.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * S;
      const double mu = mean[c], is = inv_std[c], g = gv[c], bt = bv[c];
      for (std::size_t s = 0; s < S; ++s) {
        xhat[base + s] = (xv[base + s] - mu) * is;
        out[base + s] = g * xhat[base + s] + bt;
      }
    }
  NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, B, C, S, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
        const double* gy = self.grad.data();
        const double n = double(B * S);
        std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * S;
            double a = 0.0, ax = 0.0;
            for (std::size_t s = 0; s < S; ++s) {
              a += gy[base + s];
              ax += gy[base + s] * xhat[base + s];
            }
            sum_g[c] += a;
            sum_gx[c] += ax;
          }
        if (wants_grad(gn))
          for (std::size_t c = 0; c < C; ++c) gn->ensure_grad()[c] += sum_gx[c];
        if (wants_grad(bn))
          for (std::size_t c = 0; c < C; ++c) bn->ensure_grad()[c] += sum_g[c];
        if (!wants_grad(xn)) return;
        auto& gx = xn->ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * S;
            const double k = gn->value[c] * inv_std[c];
            if (training) {
              const double mg = sum_g[c] / n, mgx = sum_gx[c] / n;
              for (std::size_t s = 0; s < S; ++s) gx[base + s] += k * (gy[base + s] - mg - xhat[base + s] * mgx);
            } else {
              for (std::size_t s = 0; s < S; ++s) gx[base + s] += k * gy[base + s];
            }
          }
      },
      "batch_norm");
}

Tensor stats_pool(const Tensor& x, std::size_t groups, double eps) {
  require(x.defined() && x.rank() >= 2, Errc::shape_mismatch, "stats_pool: expected rank >= 2");
  require(groups >= 1 && x.dim(0) % groups == 0, Errc::shape_mismatch,
          "stats_pool: leading dim " + std::to_string(x.dim(0)) + " not divisible by " + std::to_string(groups));
  const std::size_t B = x.dim(0) / groups, C = x.dim(1), S = x.numel() / (x.dim(0) * C);
  require(groups * S >= 1 && B >= 1, Errc::shape_mismatch, "stats_pool: nothing to pool");
  const std::size_t n = groups * S;
  const double* xv = x.data().data();
  auto at = [=](std::size_t b, std::size_t g, std::size_t c, std::size_t s) {
    return ((b * groups + g) * C + c) * S + s;
  };
  std::vector<double> out(B * 2 * C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t s = 0; s < S; ++s) acc += xv[at(b, g, c, s)];
      const double mu = acc / double(n);
      double sq = 0.0;
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t s = 0; s < S; ++s) {
          const double d = xv[at(b, g, c, s)] - mu;
          sq += d * d;
        }
      out[b * 2 * C + c] = mu;
      out[b * 2 * C + C + c] = std::sqrt(std::max(sq / double(n), eps * eps));
    }
  NodePtr xn = x.node();
  return make_result(
      {B, 2 * C}, std::move(out), {x},
      [xn, B, C, S, groups, n, eps, at](Node& self) {
        if (!wants_grad(xn)) return;
        auto& gx = xn->ensure_grad();
        const double* xv = xn->value.data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) {
            const double mu = self.value[b * 2 * C + c];
            const double sd = self.value[b * 2 * C + C + c];
            const double g_mean = self.grad[b * 2 * C + c] / double(n);
            const bool floored = sd * sd <= eps * eps;
            const double g_std = floored ? 0.0 : self.grad[b * 2 * C + C + c] / (double(n) * sd);
            for (std::size_t g = 0; g < groups; ++g)
              for (std::size_t s = 0; s < S; ++s) {
                const std::size_t i = at(b, g, c, s);
                gx[i] += g_mean + g_std * (xv[i] - mu);
              }
          }
      },
      "stats_pool");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), Errc::shape_mismatch,
          "add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  NodePtr an = a.node(), bn = b.node();
  return make_result(
      a.shape(), std::move(out), {a, b},
      [an, bn](Node& self) {
        for (const NodePtr& p : {an, bn}) {
          if (!wants_grad(p)) continue;
          auto& g = p->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
      },
      "add");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), Errc::shape_mismatch,
          "mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  NodePtr an = a.node(), bn = b.node();
  return make_result(
      a.shape(), std::move(out), {a, b},
      [an, bn](Node& self) {
        // Read both values before accumulating so mul(x, x) is handled.
        if (wants_grad(an)) {
          auto& g = an->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
        }
        if (wants_grad(bn)) {
          auto& g = bn->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
        }
      },
      "mul");
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  NodePtr xn = x.node();
  return make_result(
      x.shape(), std::move(out), {x},
      [xn, factor](Node& self) {
        if (!wants_grad(xn)) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
      },
      "scale");
}

Tensor mul_broadcast(const Tensor& x, const Tensor& g) {
  require(x.rank() == g.rank(), Errc::shape_mismatch, "mul_broadcast: rank mismatch");
  for (std::size_t i = 0; i < x.rank(); ++i)
    require(g.dim(i) == x.dim(i) || g.dim(i) == 1, Errc::shape_mismatch,
            "mul_broadcast: " + shape_str(x.shape()) + " vs " + shape_str(g.shape()));
  auto map = reduce_index_map(x.shape(), g.shape());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * g.data()[map[i]];
  NodePtr xn = x.node(), gn = g.node();
  return make_result(
      x.shape(), std::move(out), {x, g},
      [xn, gn, map = std::move(map)](Node& self) {
        if (wants_grad(xn)) {
          auto& gx = xn->ensure_grad();
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * gn->value[map[i]];
        }
        if (wants_grad(gn)) {
          auto& gg = gn->ensure_grad();
          for (std::size_t i = 0; i < map.size(); ++i) gg[map[i]] += self.grad[i] * xn->value[i];
        }
      },
      "mul_broadcast");
}

Tensor mean_axes(const Tensor& x, std::vector<std::size_t> axes) {
  Shape out_shape = x.shape();
  std::size_t count = 1;
  for (std::size_t a : axes) {
    require(a < x.rank(), Errc::invalid_argument, "mean_axes: axis out of range");
    count *= out_shape[a];
    out_shape[a] = 1;
  }
  auto map = reduce_index_map(x.shape(), out_shape);
  std::vector<double> out(numel(out_shape), 0.0);
  for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] += x.data()[i];
  const double inv = 1.0 / double(count);
  for (double& v : out) v *= inv;
  NodePtr xn = x.node();
  return make_result(
      std::move(out_shape), std::move(out), {x},
      [xn, inv, map = std::move(map)](Node& self) {
        if (!wants_grad(xn)) return;
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < map.size(); ++i) gx[i] += self.grad[map[i]] * inv;
      },
      "mean_axes");
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.numel(), Errc::shape_mismatch,
          "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  NodePtr xn = x.node();
  return make_result(
      std::move(shape), x.values(), {x},
      [xn](Node& self) {
        if (!wants_grad(xn)) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      },
      "reshape");
}

Tensor concat_features(const std::vector<Tensor>& parts) {
  require(!parts.empty(), Errc::invalid_argument, "concat_features: nothing to concatenate");
  const std::size_t B = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t D = 0;
  for (const Tensor& p : parts) {
    check_rank(p, 2, "concat_features");
    require(p.dim(0) == B, Errc::shape_mismatch, "concat_features: batch mismatch");
    widths.push_back(p.dim(1));
    D += p.dim(1);
  }
  std::vector<double> out(B * D);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(parts[k].data().data() + b * widths[k], widths[k], out.data() + b * D + off);
    off += widths[k];
  }
  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node());
  return make_result(
      {B, D}, std::move(out), parts,
      [nodes, widths, B, D](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (wants_grad(nodes[k])) {
            auto& g = nodes[k]->ensure_grad();
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t j = 0; j < widths[k]; ++j) g[b * widths[k] + j] += self.grad[b * D + off + j];
          }
          off += widths[k];
        }
      },
      "concat_features");
}

Tensor l2_normalize_rows(const Tensor& x) {
  check_rank(x, 2, "l2_normalize_rows");
  const std::size_t B = x.dim(0), D = x.dim(1);
  std::vector<double> out(B * D), norms(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double* r = x.data().data() + b * D;
    double sq = 0.0;
    for (std::size_t j = 0; j < D; ++j) sq += r[j] * r[j];
    norms[b] = std::max(std::sqrt(sq), 1e-12);
    for (std::size_t j = 0; j < D; ++j) out[b * D + j] = r[j] / norms[b];
  }
  NodePtr xn = x.node();
  return make_result(
      {B, D}, std::move(out), {x},
      [xn, B, D, norms = std::move(norms)](Node& self) {
        if (!wants_grad(xn)) return;
        auto& g = xn->ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
          const double* y = self.value.data() + b * D;
          const double* gy = self.grad.data() + b * D;
          double dot = 0.0;
          for (std::size_t j = 0; j < D; ++j) dot += y[j] * gy[j];
          for (std::size_t j = 0; j < D; ++j) g[b * D + j] += (gy[j] - y[j] * dot) / norms[b];
        }
      },
      "l2_normalize_rows");
}

Tensor sum(const Tensor& x) {
  const double total = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  NodePtr xn = x.node();
  return make_result(
      {}, {total}, {x},
      [xn](Node& self) {
        if (!wants_grad(xn)) return;
        for (double& g : xn->ensure_grad()) g += self.grad[0];
      },
      "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / double(x.numel())); }

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  require(weights.size() == x.numel(), Errc::shape_mismatch, "weighted_sum: weight count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += x.data()[i] * weights[i];
  NodePtr xn = x.node();
  std::vector<double> w(weights.begin(), weights.end());
  return make_result(
      {}, {total}, {x},
      [xn, w = std::move(w)](Node& self) {
        if (!wants_grad(xn)) return;
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < w.size(); ++i) g[i] += self.grad[0] * w[i];
      },
      "weighted_sum");
}

}  // namespace msn::ad
