#include "casdet/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "casdet/error.hpp"

namespace casdet::numerics {

namespace {

void require_rank(const Var& v, std::size_t rank, const char* what) {
  if (v.value().rank() != rank) {
    throw DimensionError(std::string(what) + " must have rank " +
                         std::to_string(rank) + ", got shape " +
                         shape_to_string(v.shape()));
  }
}

// Adds src into the gradient of `in` if it participates in differentiation.
inline std::span<double> grad_of(Node& in) { return in.value.grad(); }

// First output index whose input coordinate o*stride - pad + k is >= 0, and
// one past the last whose coordinate is < extent.
inline void valid_range(int out_extent, int in_extent, int stride, int pad,
                        int k, int& lo, int& hi) {
  int num = pad - k;
  lo = num > 0 ? (num + stride - 1) / stride : 0;
  int last = in_extent - 1 + pad - k;
  hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
  if (lo > hi) lo = hi;
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, const Var& bias, int stride,
           int padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (stride < 1) throw DimensionError("conv2d stride must be >= 1");
  if (padding < 0) throw DimensionError("conv2d padding must be >= 0");
  const int cin = static_cast<int>(input.value().dim(0));
  const int h = static_cast<int>(input.value().dim(1));
  const int w = static_cast<int>(input.value().dim(2));
  const int cout = static_cast<int>(kernel.value().dim(0));
  const int kh = static_cast<int>(kernel.value().dim(2));
  const int kw = static_cast<int>(kernel.value().dim(3));
  if (static_cast<int>(kernel.value().dim(1)) != cin) {
    throw DimensionError("conv2d kernel axis 1 (C_in) is " +
                         std::to_string(kernel.value().dim(1)) +
                         " but input axis 0 (channels) is " +
                         std::to_string(cin));
  }
  if (kh > h + 2 * padding) {
    throw DimensionError("conv2d kernel axis 2 (kH=" + std::to_string(kh) +
                         ") exceeds padded input height " +
                         std::to_string(h + 2 * padding));
  }
  if (kw > w + 2 * padding) {
    throw DimensionError("conv2d kernel axis 3 (kW=" + std::to_string(kw) +
                         ") exceeds padded input width " +
                         std::to_string(w + 2 * padding));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.value().rank() != 1 ||
                   static_cast<int>(bias.value().dim(0)) != cout)) {
    throw DimensionError("conv2d bias axis 0 must equal C_out=" +
                         std::to_string(cout) + ", got shape " +
                         shape_to_string(bias.shape()));
  }
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (w + 2 * padding - kw) / stride + 1;

  Tensor out({static_cast<std::size_t>(cout), static_cast<std::size_t>(ho),
              static_cast<std::size_t>(wo)});
  const double* x = input.value().data().data();
  const double* k = kernel.value().data().data();
  double* y = out.data().data();
  for (int co = 0; co < cout; ++co) {
    double* yplane = y + static_cast<std::size_t>(co) * ho * wo;
    if (has_bias) std::fill(yplane, yplane + ho * wo, bias.value()[co]);
    for (int ci = 0; ci < cin; ++ci) {
      const double* xplane = x + static_cast<std::size_t>(ci) * h * w;
      for (int ky = 0; ky < kh; ++ky) {
        int oy_lo, oy_hi;
        valid_range(ho, h, stride, padding, ky, oy_lo, oy_hi);
        for (int kx = 0; kx < kw; ++kx) {
          int ox_lo, ox_hi;
          valid_range(wo, w, stride, padding, kx, ox_lo, ox_hi);
          const double kv = k[((co * cin + ci) * kh + ky) * kw + kx];
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            const double* xrow = xplane + (oy * stride - padding + ky) * w;
            double* yrow = yplane + oy * wo;
            for (int ox = ox_lo; ox < ox_hi; ++ox) {
              yrow[ox] += kv * xrow[ox * stride - padding + kx];
            }
          }
        }
      }
    }
  }

  std::vector<Var> inputs{input, kernel};
  if (has_bias) inputs.push_back(bias);
  return make_result(
      "conv2d", std::move(out), std::move(inputs),
      [=](Node& self) {
        const double* g = self.value.grad().data();
        Node& in = *self.inputs[0];
        Node& ker = *self.inputs[1];
        const double* xv = in.value.data().data();
        const double* kv_all = ker.value.data().data();
        double* gx = in.requires_grad ? grad_of(in).data() : nullptr;
        double* gk = ker.requires_grad ? grad_of(ker).data() : nullptr;
        if (has_bias && self.inputs[2]->requires_grad) {
          double* gb = grad_of(*self.inputs[2]).data();
          for (int co = 0; co < cout; ++co) {
            const double* gp = g + static_cast<std::size_t>(co) * ho * wo;
            double acc = 0.0;
            for (int i = 0; i < ho * wo; ++i) acc += gp[i];
            gb[co] += acc;
          }
        }
        for (int co = 0; co < cout; ++co) {
          const double* gplane = g + static_cast<std::size_t>(co) * ho * wo;
          for (int ci = 0; ci < cin; ++ci) {
            const std::size_t plane = static_cast<std::size_t>(ci) * h * w;
            for (int ky = 0; ky < kh; ++ky) {
              int oy_lo, oy_hi;
              valid_range(ho, h, stride, padding, ky, oy_lo, oy_hi);
              for (int kx = 0; kx < kw; ++kx) {
                int ox_lo, ox_hi;
                valid_range(wo, w, stride, padding, kx, ox_lo, ox_hi);
                const std::size_t kidx =
                    ((co * cin + ci) * kh + ky) * kw + kx;
                const double kv = kv_all[kidx];
                double kacc = 0.0;
                for (int oy = oy_lo; oy < oy_hi; ++oy) {
                  const std::size_t row =
                      plane + (oy * stride - padding + ky) * w;
                  const double* grow = gplane + oy * wo;
                  for (int ox = ox_lo; ox < ox_hi; ++ox) {
                    const std::size_t xi = row + ox * stride - padding + kx;
                    kacc += grow[ox] * xv[xi];
                    if (gx) gx[xi] += kv * grow[ox];
                  }
                }
                if (gk) gk[kidx] += kacc;
              }
            }
          }
        }
      });
}

Var relu(const Var& x) {
  Tensor out(x.shape());
  auto in = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
  return make_result("relu", std::move(out), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    auto g = self.value.grad();
    auto xv = in.value.data();
    auto gx = grad_of(in);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  auto in = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = 1.0 / (1.0 + std::exp(-in[i]));
  return make_result("sigmoid", std::move(out), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    auto g = self.value.grad();
    auto y = self.value.data();
    auto gx = grad_of(in);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

namespace kernels {

BilinearTap bilinear_tap(double y, double x, std::size_t height,
                         std::size_t width) {
  BilinearTap tap{};
  for (int i = 0; i < 4; ++i) {
    tap.index[i] = -1;
    tap.weight[i] = 0.0;
  }
  const double hh = static_cast<double>(height);
  const double ww = static_cast<double>(width);
  // Every neighbour is off-grid: output and both gradients are exactly zero.
  if (!(y > -1.0 && y < hh && x > -1.0 && x < ww)) return tap;
  const double y0f = std::floor(y);
  const double x0f = std::floor(x);
  const double fy = y - y0f;
  const double fx = x - x0f;
  const long y0 = static_cast<long>(y0f);
  const long x0 = static_cast<long>(x0f);
  tap.fy = fy;
  tap.fx = fx;
  tap.inside = true;
  const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const double ws[4] = {(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx,
                        fy * (1.0 - fx), fy * fx};
  for (int i = 0; i < 4; ++i) {
    tap.weight[i] = ws[i];
    if (ys[i] >= 0 && ys[i] < static_cast<long>(height) && xs[i] >= 0 &&
        xs[i] < static_cast<long>(width)) {
      tap.index[i] = ys[i] * static_cast<long>(width) + xs[i];
    }
  }
  return tap;
}

}  // namespace kernels

Var bilinear_sample(const Var& input, const Var& points) {
  require_rank(input, 3, "bilinear_sample input");
  require_rank(points, 2, "bilinear_sample points");
  if (points.value().dim(1) != 2) {
    throw DimensionError("bilinear_sample points axis 1 must be 2 (y, x), got " +
                         std::to_string(points.value().dim(1)));
  }
  const std::size_t c = input.value().dim(0);
  const std::size_t h = input.value().dim(1);
  const std::size_t w = input.value().dim(2);
  const std::size_t np = points.value().dim(0);
  const std::size_t plane = h * w;

  std::vector<kernels::BilinearTap> taps(np);
  auto pts = points.value().data();
  for (std::size_t p = 0; p < np; ++p) {
    taps[p] = kernels::bilinear_tap(pts[2 * p], pts[2 * p + 1], h, w);
  }
  Tensor out({c, np});
  const double* xv = input.value().data().data();
  double* o = out.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* xp = xv + ch * plane;
    double* orow = o + ch * np;
    for (std::size_t p = 0; p < np; ++p) {
      const auto& t = taps[p];
      double acc = 0.0;
      for (int i = 0; i < 4; ++i) {
        if (t.index[i] >= 0) acc += t.weight[i] * xp[t.index[i]];
      }
      orow[p] = acc;
    }
  }

  return make_result(
      "bilinear_sample", std::move(out), {input, points},
      [taps = std::move(taps), c, np, plane](Node& self) {
        const double* g = self.value.grad().data();
        Node& in = *self.inputs[0];
        Node& pt = *self.inputs[1];
        const double* xv = in.value.data().data();
        if (in.requires_grad) {
          double* gx = grad_of(in).data();
          for (std::size_t ch = 0; ch < c; ++ch) {
            double* gp = gx + ch * plane;
            const double* grow = g + ch * np;
            for (std::size_t p = 0; p < np; ++p) {
              const auto& t = taps[p];
              for (int i = 0; i < 4; ++i) {
                if (t.index[i] >= 0) gp[t.index[i]] += t.weight[i] * grow[p];
              }
            }
          }
        }
        if (pt.requires_grad) {
          double* gpts = grad_of(pt).data();
          for (std::size_t p = 0; p < np; ++p) {
            const auto& t = taps[p];
            if (!t.inside) continue;
            const double fy = t.fy;
            const double fx = t.fx;
            double gy = 0.0;
            double gxx = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
              const double* xp = xv + ch * plane;
              double v[4];
              for (int i = 0; i < 4; ++i) v[i] = t.index[i] >= 0 ? xp[t.index[i]] : 0.0;
              const double gout = g[ch * np + p];
              gy += gout * ((1.0 - fx) * (v[2] - v[0]) + fx * (v[3] - v[1]));
              gxx += gout * ((1.0 - fy) * (v[1] - v[0]) + fy * (v[3] - v[2]));
            }
            gpts[2 * p] += gy;
            gpts[2 * p + 1] += gxx;
          }
        }
      });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t m = a.value().dim(0);
  const std::size_t k = a.value().dim(1);
  const std::size_t n = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw DimensionError("matmul rhs axis 0 is " +
                         std::to_string(b.value().dim(0)) +
                         " but lhs axis 1 is " + std::to_string(k));
  }
  Tensor out({m, n});
  const double* av = a.value().data().data();
  const double* bv = b.value().data().data();
  double* o = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double s = av[i * k + kk];
      const double* brow = bv + kk * n;
      double* orow = o + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
    }
  }
  return make_result("matmul", std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* g = self.value.grad().data();
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const double* av = na.value.data().data();
    const double* bv = nb.value.data().data();
    if (na.requires_grad) {
      double* ga = grad_of(na).data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[kk * n + j];
          ga[i * k + kk] += acc;
        }
      }
    }
    if (nb.requires_grad) {
      double* gb = grad_of(nb).data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double s = av[i * k + kk];
          for (std::size_t j = 0; j < n; ++j) gb[kk * n + j] += s * g[i * n + j];
        }
      }
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  require_rank(bias, 1, "add_bias bias");
  const std::size_t m = x.value().dim(0);
  if (bias.value().dim(0) != m) {
    throw DimensionError("add_bias bias axis 0 is " +
                         std::to_string(bias.value().dim(0)) +
                         " but input axis 0 is " + std::to_string(m));
  }
  const std::size_t inner = x.value().numel() / m;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < inner; ++j) {
      out[i * inner + j] = x.value()[i * inner + j] + bias.value()[i];
    }
  }
  return make_result("add_bias", std::move(out), {x, bias}, [m, inner](Node& self) {
    auto g = self.value.grad();
    Node& nx = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (nx.requires_grad) {
      auto gx = grad_of(nx);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (nb.requires_grad) {
      auto gb = grad_of(nb);
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < inner; ++j) acc += g[i * inner + j];
        gb[i] += acc;
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add shapes differ: " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result("add", std::move(out), {a, b}, [](Node& self) {
    auto g = self.value.grad();
    for (int s = 0; s < 2; ++s) {
      Node& in = *self.inputs[s];
      if (!in.requires_grad) continue;
      auto gi = grad_of(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * factor;
  return make_result("scale", std::move(out), {x}, [factor](Node& self) {
    auto g = self.value.grad();
    auto gx = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

Var reshape(const Var& x, Shape shape) {
  if (shape_numel(shape) != x.value().numel()) {
    throw DimensionError("cannot reshape " + shape_to_string(x.shape()) +
                         " to " + shape_to_string(shape));
  }
  auto src = x.value().data();
  Tensor out(std::move(shape), std::vector<double>(src.begin(), src.end()));
  return make_result("reshape", std::move(out), {x}, [](Node& self) {
    auto g = self.value.grad();
    auto gx = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var permute(const Var& x, std::span<const std::size_t> perm) {
  const Shape& in_shape = x.shape();
  const std::size_t r = in_shape.size();
  if (perm.size() != r) {
    throw DimensionError("permute needs " + std::to_string(r) +
                         " axes, got " + std::to_string(perm.size()));
  }
  std::vector<bool> used(r, false);
  for (std::size_t p : perm) {
    if (p >= r || used[p]) throw DimensionError("permute axes are not a permutation");
    used[p] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[perm[i]];
    src_stride[i] = in_stride[perm[i]];
  }
  // map[i] = flat input index feeding flat output index i
  const std::size_t n = x.value().numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++counter[ax];
      src += src_stride[ax];
      if (counter[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * out_shape[ax];
      counter[ax] = 0;
    }
  }
  Tensor out(out_shape);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.value()[map[i]];
  return make_result("permute", std::move(out), {x}, [map = std::move(map)](Node& self) {
    auto g = self.value.grad();
    auto gx = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[map[i]] += g[i];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows needs at least one input");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<Var> inputs;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    Shape t(parts[i].shape().begin() + 1, parts[i].shape().end());
    if (t != tail) {
      throw DimensionError("concat_rows input " + std::to_string(i) +
                           " has trailing shape " + shape_to_string(t) +
                           ", expected " + shape_to_string(tail));
    }
    rows += parts[i].shape()[0];
    inputs.push_back(parts[i]);
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  std::vector<double> data;
  data.reserve(shape_numel(shape));
  for (const Var& p : parts) {
    auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  return make_result("concat_rows", Tensor(std::move(shape), std::move(data)),
                     std::move(inputs), [](Node& self) {
                       auto g = self.value.grad();
                       std::size_t off = 0;
                       for (auto& in : self.inputs) {
                         const std::size_t n = in->value.numel();
                         if (in->requires_grad) {
                           auto gi = grad_of(*in);
                           for (std::size_t i = 0; i < n; ++i) gi[i] += g[off + i];
                         }
                         off += n;
                       }
                     });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return make_result("sum", Tensor::scalar(acc), {x}, [](Node& self) {
    const double g = self.value.grad()[0];
    auto gx = grad_of(*self.inputs[0]);
    for (double& v : gx) v += g;
  });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) {
    throw DimensionError("weighted_sum has " + std::to_string(terms.size()) +
                         " terms but " + std::to_string(weights.size()) +
                         " weights");
  }
  double acc = 0.0;
  std::vector<Var> inputs;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    acc += weights[i] * terms[i].value().item();
    inputs.push_back(terms[i]);
  }
  std::vector<double> w(weights.begin(), weights.end());
  return make_result("weighted_sum", Tensor::scalar(acc), std::move(inputs),
                     [w = std::move(w)](Node& self) {
                       const double g = self.value.grad()[0];
                       for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                         if (self.inputs[i]->requires_grad) {
                           grad_of(*self.inputs[i])[0] += w[i] * g;
                         }
                       }
                     });
}

Var scale_grad(const Var& x, double factor) {
  auto d = x.value().data();
  Tensor out(x.shape(), std::vector<double>(d.begin(), d.end()));
  return make_result("scale_grad", std::move(out), {x}, [factor](Node& self) {
    auto g = self.value.grad();
    auto gx = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

}  // namespace casdet::numerics
