// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Feature maps are (B, C, H, W); channel
// ops (concat, slice, gather) also accept (B, C) and (B, C, ...) tensors.

#ifndef RGBT_OPS_HPP_
#define RGBT_OPS_HPP_

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <numeric>
#include <span>
#include <vector>

#include "rgbt/autograd.hpp"

namespace rgbt::ops {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline std::size_t inner_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 2; i < s.size(); ++i) n *= static_cast<std::size_t>(s[i]);
  return n;
}

struct ConvGeometry {
  int batch, cin, h, w, cout, k, stride, pad, groups, ho, wo;
  int cin_g() const { return cin / groups; }
  int cout_g() const { return cout / groups; }
  int col_rows() const { return cin_g() * k * k; }
  int col_cols() const { return ho * wo; }
  bool direct() const { return k == 1 && stride == 1 && pad == 0; }
};

// Column buffer for one image and one group.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const int cols = g.col_cols();
  for (int c = 0; c < g.cin_g(); ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        T* row = col + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * cols;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          T* dst = row + oh * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(ih) * g.w;
          if (g.stride == 1) {
            const int off = kj - g.pad;
            for (int ow = 0; ow < g.wo; ++ow) {
              const int iw = ow + off;
              dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : T(0);
            }
          } else {
            for (int ow = 0; ow < g.wo; ++ow) {
              const int iw = ow * g.stride - g.pad + kj;
              dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* dx) {
  const int cols = g.col_cols();
  for (int c = 0; c < g.cin_g(); ++c) {
    T* xc = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const T* row = col + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * cols;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.h) continue;
          T* dst = xc + static_cast<std::size_t>(ih) * g.w;
          const T* src = row + oh * g.wo;
          for (int ow = 0; ow < g.wo; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace detail

/// 2-D convolution, square kernel, zero padding, optional bias (pass nullptr).
/// Weight shape (Cout, Cin/groups, k, k).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad,
              int groups = 1) {
  const Shape& xs = x->shape();
  const Shape& ws = weight->shape();
  if (xs.size() != 4 || ws.size() != 4) throw ShapeError("conv2d expects 4-D input and weight");
  detail::ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad, groups, 0, 0};
  if (g.cin % groups || g.cout % groups || ws[1] != g.cin / groups || ws[2] != ws[3])
    throw ShapeError("conv2d weight " + shape_str(ws) + " incompatible with input " +
                     shape_str(xs) + " and groups " + std::to_string(groups));
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d output would be empty");
  if (bias && bias->value.size() != static_cast<std::size_t>(g.cout))
    throw ShapeError("conv2d bias size mismatch");

  Tensor<T> out({g.batch, g.cout, g.ho, g.wo});
  const std::size_t in_img = static_cast<std::size_t>(g.cin) * g.h * g.w;
  const std::size_t out_img = static_cast<std::size_t>(g.cout) * g.ho * g.wo;
  const std::size_t in_grp = static_cast<std::size_t>(g.cin_g()) * g.h * g.w;
  const std::size_t out_grp = static_cast<std::size_t>(g.cout_g()) * g.ho * g.wo;
  const std::size_t w_grp = static_cast<std::size_t>(g.cout_g()) * g.col_rows();
  std::vector<T> col(g.direct() ? 0 : static_cast<std::size_t>(g.col_rows()) * g.col_cols());

  for (int b = 0; b < g.batch; ++b) {
    for (int gr = 0; gr < groups; ++gr) {
      const T* xin = x->value.data() + b * in_img + gr * in_grp;
      const T* colp = xin;
      if (!g.direct()) {
        detail::im2col(xin, g, col.data());
        colp = col.data();
      }
      detail::CMapMat<T> W(weight->value.data() + gr * w_grp, g.cout_g(), g.col_rows());
      detail::CMapMat<T> C(colp, g.col_rows(), g.col_cols());
      detail::MapMat<T> Y(out.data() + b * out_img + gr * out_grp, g.cout_g(), g.col_cols());
      Y.noalias() = W * C;
    }
    if (bias) {
      for (int c = 0; c < g.cout; ++c) {
        T* y = out.data() + b * out_img + static_cast<std::size_t>(c) * g.ho * g.wo;
        const T bv = bias->value[c];
        for (int i = 0; i < g.ho * g.wo; ++i) y[i] += bv;
      }
    }
  }

  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(bias);
  return make_op<T>(std::move(out), std::move(inputs), [g, in_img, out_img, in_grp, out_grp,
                                                        w_grp](Node<T>& self) {
    auto& xin = *self.inputs[0];
    auto& win = *self.inputs[1];
    Node<T>* bin = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    const bool need_dx = xin.requires_grad, need_dw = win.requires_grad;
    std::vector<T> col(static_cast<std::size_t>(g.col_rows()) * g.col_cols());
    T* dx = need_dx ? xin.ensure_grad().data() : nullptr;
    T* dw = need_dw ? win.ensure_grad().data() : nullptr;
    for (int b = 0; b < g.batch; ++b) {
      for (int gr = 0; gr < g.groups; ++gr) {
        detail::CMapMat<T> dY(self.grad.data() + b * out_img + gr * out_grp, g.cout_g(),
                              g.col_cols());
        const T* xb = xin.value.data() + b * in_img + gr * in_grp;
        if (need_dw) {
          const T* colp = xb;
          if (!g.direct()) {
            detail::im2col(xb, g, col.data());
            colp = col.data();
          }
          detail::CMapMat<T> C(colp, g.col_rows(), g.col_cols());
          detail::MapMat<T> dW(dw + gr * w_grp, g.cout_g(), g.col_rows());
          dW.noalias() += dY * C.transpose();
        }
        if (need_dx) {
          detail::CMapMat<T> W(win.value.data() + gr * w_grp, g.cout_g(), g.col_rows());
          T* dxb = dx + b * in_img + gr * in_grp;
          if (g.direct()) {
            detail::MapMat<T> dX(dxb, g.col_rows(), g.col_cols());
            dX.noalias() += W.transpose() * dY;
          } else {
            detail::MapMat<T> dC(col.data(), g.col_rows(), g.col_cols());
            dC.noalias() = W.transpose() * dY;
            detail::col2im(col.data(), g, dxb);
          }
        }
      }
    }
    if (bin && bin->requires_grad) {
      auto& db = bin->ensure_grad();
      const int hw = g.ho * g.wo;
      for (int b = 0; b < g.batch; ++b)
        for (int c = 0; c < g.cout; ++c) {
          const T* d = self.grad.data() + b * out_img + static_cast<std::size_t>(c) * hw;
          T s = 0;
          for (int i = 0; i < hw; ++i) s += d[i];
          db[c] += s;
        }
    }
  });
}

/// Running statistics owned by a normalization layer.
template <typename T>
struct NormStats {
  Tensor<T> mean;
  Tensor<T> var;
};

/// Per-channel batch normalization. In training mode the batch statistics are
/// used and `stats` is updated with exponential averaging; otherwise `stats`
/// is used as is.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, NormStats<T>& stats,
                  bool training, T momentum, T eps) {
  const Shape& s = x->shape();
  const int B = s[0], C = s[1];
  const std::size_t hw = detail::inner_size(s);
  const std::size_t n = static_cast<std::size_t>(B) * hw;
  std::vector<T> mean(C), inv_std(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double sum = 0, sq = 0;
      for (int b = 0; b < B; ++b) {
        const T* p = x->value.data() + (static_cast<std::size_t>(b) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) sum += p[i];
      }
      const double mu = sum / n;
      for (int b = 0; b < B; ++b) {
        const T* p = x->value.data() + (static_cast<std::size_t>(b) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const double var = sq / n;
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
      const double unbiased = n > 1 ? sq / (n - 1) : var;
      stats.mean[c] = (T(1) - momentum) * stats.mean[c] + momentum * static_cast<T>(mu);
      stats.var[c] = (T(1) - momentum) * stats.var[c] + momentum * static_cast<T>(unbiased);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = stats.mean[c];
      inv_std[c] = T(1) / std::sqrt(stats.var[c] + eps);
    }
  }

  Tensor<T> xhat(s), out(s);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
      const T m = mean[c], is = inv_std[c], ga = gamma->value[c], be = beta->value[c];
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (x->value[off + i] - m) * is;
        xhat[off + i] = xh;
        out[off + i] = ga * xh + be;
      }
    }

  return make_op<T>(std::move(out), {x, gamma, beta},
                    [xhat = std::move(xhat), inv_std, training, B, C, hw, n](Node<T>& self) {
                      auto& xin = *self.inputs[0];
                      auto& gin = *self.inputs[1];
                      auto& bin = *self.inputs[2];
                      std::vector<T> sum_dy(C, 0), sum_dy_xhat(C, 0);
                      for (int b = 0; b < B; ++b)
                        for (int c = 0; c < C; ++c) {
                          const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
                          T s1 = 0, s2 = 0;
                          for (std::size_t i = 0; i < hw; ++i) {
                            s1 += self.grad[off + i];
                            s2 += self.grad[off + i] * xhat[off + i];
                          }
                          sum_dy[c] += s1;
                          sum_dy_xhat[c] += s2;
                        }
                      if (gin.requires_grad) {
                        auto& dg = gin.ensure_grad();
                        for (int c = 0; c < C; ++c) dg[c] += sum_dy_xhat[c];
                      }
                      if (bin.requires_grad) {
                        auto& db = bin.ensure_grad();
                        for (int c = 0; c < C; ++c) db[c] += sum_dy[c];
                      }
                      if (!xin.requires_grad) return;
                      auto& dx = xin.ensure_grad();
                      const T inv_n = T(1) / static_cast<T>(n);
                      for (int b = 0; b < B; ++b)
                        for (int c = 0; c < C; ++c) {
                          const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
                          const T k = gin.value[c] * inv_std[c];
                          if (training) {
                            const T m1 = sum_dy[c] * inv_n, m2 = sum_dy_xhat[c] * inv_n;
                            for (std::size_t i = 0; i < hw; ++i)
                              dx[off + i] += k * (self.grad[off + i] - m1 - xhat[off + i] * m2);
                          } else {
                            for (std::size_t i = 0; i < hw; ++i) dx[off + i] += k * self.grad[off + i];
                          }
                        }
                    });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  Tensor<T> out(x->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] * detail::sigmoid(x->value[i]);
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& dx = in.ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T v = in.value[i];
      const T s = detail::sigmoid(v);
      dx[i] += self.grad[i] * s * (T(1) + v * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] > T(0) ? x->value[i] : T(0);
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& dx = in.ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (in.value[i] > T(0)) dx[i] += self.grad[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid(x->value[i]);
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i)
      dx[i] += self.grad[i] * self.value[i] * (T(1) - self.value[i]);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  a->value.check_same(b->value);
  Tensor<T> out = a->value;
  out += b->value;
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->ensure_grad() += self.grad;
  });
}

/// Concatenation along dimension 1.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  Shape s = xs[0]->shape();
  const int B = s[0];
  const std::size_t inner = detail::inner_size(s);
  int total = 0;
  for (const auto& x : xs) {
    const Shape& t = x->shape();
    if (t.size() != s.size() || t[0] != B || detail::inner_size(t) != inner ||
        !std::equal(t.begin() + 2, t.end(), s.begin() + 2))
      throw ShapeError("concat shape mismatch " + shape_str(s) + " vs " + shape_str(t));
    total += t[1];
  }
  s[1] = total;
  Tensor<T> out(s);
  std::vector<int> widths;
  for (int b = 0; b < B; ++b) {
    T* dst = out.data() + static_cast<std::size_t>(b) * total * inner;
    for (const auto& x : xs) {
      const std::size_t len = static_cast<std::size_t>(x->shape()[1]) * inner;
      std::copy_n(x->value.data() + b * len, len, dst);
      dst += len;
    }
  }
  for (const auto& x : xs) widths.push_back(x->shape()[1]);
  return make_op<T>(std::move(out), xs, [widths, B, total, inner](Node<T>& self) {
    std::size_t ch = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& in = *self.inputs[k];
      const std::size_t len = static_cast<std::size_t>(widths[k]) * inner;
      if (in.requires_grad) {
        auto& dx = in.ensure_grad();
        for (int b = 0; b < B; ++b) {
          const T* src = self.grad.data() + static_cast<std::size_t>(b) * total * inner + ch * inner;
          T* dst = dx.data() + b * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      }
      ch += widths[k];
    }
  });
}

/// Channels [begin, begin + count) along dimension 1.
template <typename T>
Var<T> slice(const Var<T>& x, int begin, int count) {
  Shape s = x->shape();
  if (begin < 0 || count <= 0 || begin + count > s[1])
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") out of range for " + shape_str(s));
  const int B = s[0], C = s[1];
  const std::size_t inner = detail::inner_size(s);
  s[1] = count;
  Tensor<T> out(s);
  for (int b = 0; b < B; ++b)
    std::copy_n(x->value.data() + (static_cast<std::size_t>(b) * C + begin) * inner,
                count * inner, out.data() + static_cast<std::size_t>(b) * count * inner);
  return make_op<T>(std::move(out), {x}, [B, C, begin, count, inner](Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (int b = 0; b < B; ++b) {
      T* dst = dx.data() + (static_cast<std::size_t>(b) * C + begin) * inner;
      const T* src = self.grad.data() + static_cast<std::size_t>(b) * count * inner;
      for (std::size_t i = 0; i < count * inner; ++i) dst[i] += src[i];
    }
  });
}

/// Output channel i is input channel `source[i]` (dimension 1 gather).
template <typename T>
Var<T> gather_channels(const Var<T>& x, std::vector<int> source) {
  Shape s = x->shape();
  const int B = s[0], C = s[1];
  const std::size_t inner = detail::inner_size(s);
  for (int c : source)
    if (c < 0 || c >= C) throw BoundsError("gather_channels source index out of range");
  const int Co = static_cast<int>(source.size());
  s[1] = Co;
  Tensor<T> out(s);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < Co; ++i)
      std::copy_n(x->value.data() + (static_cast<std::size_t>(b) * C + source[i]) * inner, inner,
                  out.data() + (static_cast<std::size_t>(b) * Co + i) * inner);
  return make_op<T>(std::move(out), {x}, [source = std::move(source), B, C, Co, inner](Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < Co; ++i) {
        T* dst = dx.data() + (static_cast<std::size_t>(b) * C + source[i]) * inner;
        const T* src = self.grad.data() + (static_cast<std::size_t>(b) * Co + i) * inner;
        for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
      }
  });
}

/// Nearest-neighbour 2x spatial upsampling.
template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  const Shape& s = x->shape();
  const int B = s[0], C = s[1], H = s[2], W = s[3];
  Tensor<T> out({B, C, 2 * H, 2 * W});
  for (int bc = 0; bc < B * C; ++bc)
    for (int i = 0; i < 2 * H; ++i)
      for (int j = 0; j < 2 * W; ++j)
        out[(static_cast<std::size_t>(bc) * 2 * H + i) * 2 * W + j] =
            x->value[(static_cast<std::size_t>(bc) * H + i / 2) * W + j / 2];
  return make_op<T>(std::move(out), {x}, [B, C, H, W](Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (int bc = 0; bc < B * C; ++bc)
      for (int i = 0; i < 2 * H; ++i)
        for (int j = 0; j < 2 * W; ++j)
          dx[(static_cast<std::size_t>(bc) * H + i / 2) * W + j / 2] +=
              self.grad[(static_cast<std::size_t>(bc) * 2 * H + i) * 2 * W + j];
  });
}

/// (B, C, H, W) -> (B, C) spatial mean.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape& s = x->shape();
  const int B = s[0], C = s[1];
  const std::size_t hw = detail::inner_size(s);
  Tensor<T> out({B, C});
  for (int bc = 0; bc < B * C; ++bc) {
    T sum = 0;
    const T* p = x->value.data() + bc * hw;
    for (std::size_t i = 0; i < hw; ++i) sum += p[i];
    out[bc] = sum / static_cast<T>(hw);
  }
  return make_op<T>(std::move(out), {x}, [B, C, hw](Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (int bc = 0; bc < B * C; ++bc) {
      const T g = self.grad[bc] / static_cast<T>(hw);
      T* p = dx.data() + bc * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] += g;
    }
  });
}

/// (B, in) x (out, in)^T + bias -> (B, out).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const int B = x->shape()[0], in = x->shape()[1], outw = weight->shape()[0];
  if (weight->shape()[1] != in || bias->value.size() != static_cast<std::size_t>(outw))
    throw ShapeError("linear weight/bias shape mismatch");
  Tensor<T> out({B, outw});
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < outw; ++o) {
      T s = bias->value[o];
      for (int i = 0; i < in; ++i) s += weight->value.at(o, i) * x->value.at(b, i);
      out.at(b, o) = s;
    }
  return make_op<T>(std::move(out), {x, weight, bias}, [B, in, outw](Node<T>& self) {
    auto& xi = *self.inputs[0];
    auto& wi = *self.inputs[1];
    auto& bi = *self.inputs[2];
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < outw; ++o) {
        const T g = self.grad.at(b, o);
        if (bi.requires_grad) bi.ensure_grad()[o] += g;
        if (wi.requires_grad) {
          auto& dw = wi.ensure_grad();
          for (int i = 0; i < in; ++i) dw.at(o, i) += g * xi.value.at(b, i);
        }
        if (xi.requires_grad) {
          auto& dx = xi.ensure_grad();
          for (int i = 0; i < in; ++i) dx.at(b, i) += g * wi.value.at(o, i);
        }
      }
  });
}

/// x (B, C, H, W) scaled by per-channel weights w (B, C).
template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& w) {
  const Shape& s = x->shape();
  const int B = s[0], C = s[1];
  if (w->shape() != Shape{B, C}) throw ShapeError("scale_channels weight shape mismatch");
  const std::size_t hw = detail::inner_size(s);
  Tensor<T> out(s);
  for (int bc = 0; bc < B * C; ++bc)
    for (std::size_t i = 0; i < hw; ++i) out[bc * hw + i] = x->value[bc * hw + i] * w->value[bc];
  return make_op<T>(std::move(out), {x, w}, [B, C, hw](Node<T>& self) {
    auto& xi = *self.inputs[0];
    auto& wi = *self.inputs[1];
    for (int bc = 0; bc < B * C; ++bc) {
      if (wi.requires_grad) {
        T s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += self.grad[bc * hw + i] * xi.value[bc * hw + i];
        wi.ensure_grad()[bc] += s;
      }
      if (xi.requires_grad) {
        auto& dx = xi.ensure_grad();
        for (std::size_t i = 0; i < hw; ++i) dx[bc * hw + i] += self.grad[bc * hw + i] * wi.value[bc];
      }
    }
  });
}

/// Input (B, S*W) read as S blocks of width W; softmax across the S blocks
/// independently for every (b, slot) pair.
template <typename T>
Var<T> softmax_across_blocks(const Var<T>& x, int blocks) {
  const int B = x->shape()[0], total = x->shape()[1];
  if (x->shape().size() != 2 || total % blocks) throw ShapeError("softmax_across_blocks shape");
  const int W = total / blocks;
  Tensor<T> out(x->shape());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < W; ++c) {
      T mx = x->value.at(b, c);
      for (int s = 1; s < blocks; ++s) mx = std::max(mx, x->value.at(b, s * W + c));
      T z = 0;
      for (int s = 0; s < blocks; ++s) {
        const T e = std::exp(x->value.at(b, s * W + c) - mx);
        out.at(b, s * W + c) = e;
        z += e;
      }
      for (int s = 0; s < blocks; ++s) out.at(b, s * W + c) /= z;
    }
  return make_op<T>(std::move(out), {x}, [B, W, blocks](Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < W; ++c) {
        T dot = 0;
        for (int s = 0; s < blocks; ++s)
          dot += self.grad.at(b, s * W + c) * self.value.at(b, s * W + c);
        for (int s = 0; s < blocks; ++s) {
          const T y = self.value.at(b, s * W + c);
          dx.at(b, s * W + c) += y * (self.grad.at(b, s * W + c) - dot);
        }
      }
  });
}

/// (B, A*K, H, W) head output -> (B, A, H, W, K) detection grid layout.
template <typename T>
Var<T> head_to_grid(const Var<T>& x, int anchors) {
  const Shape& s = x->shape();
  const int B = s[0], AK = s[1], H = s[2], W = s[3];
  if (AK % anchors) throw ShapeError("head channels not divisible by anchor count");
  const int K = AK / anchors;
  Tensor<T> out({B, anchors, H, W, K});
  for (int b = 0; b < B; ++b)
    for (int a = 0; a < anchors; ++a)
      for (int k = 0; k < K; ++k)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) out.at(b, a, h, w, k) = x->value.at(b, a * K + k, h, w);
  return make_op<T>(std::move(out), {x}, [B, anchors, K, H, W](Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int a = 0; a < anchors; ++a)
        for (int k = 0; k < K; ++k)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) dx.at(b, a * K + k, h, w) += self.grad.at(b, a, h, w, k);
  });
}

/// Scalar sum of elementwise product with a constant tensor. Used to reduce
/// a tensor to a scalar in gradient checks.
template <typename T>
Var<T> dot_const(const Var<T>& x, Tensor<T> weights) {
  x->value.check_same(weights);
  T s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += x->value[i] * weights[i];
  return make_op<T>(Tensor<T>({1}, s), {x}, [w = std::move(weights)](Node<T>& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * w[i];
  });
}

/// Scalar node whose value and input gradients were computed elsewhere
/// (closed-form loss terms). `grads[i]` is d value / d inputs[i].
template <typename T>
Var<T> external_scalar(std::vector<Var<T>> inputs, T value, std::vector<Tensor<T>> grads) {
  if (inputs.size() != grads.size()) throw ShapeError("external_scalar gradient count");
  for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i]->value.check_same(grads[i]);
  return make_op<T>(Tensor<T>({1}, value), std::move(inputs),
                    [grads = std::move(grads)](Node<T>& self) {
                      const T g = self.grad[0];
                      for (std::size_t k = 0; k < grads.size(); ++k) {
                        auto& in = *self.inputs[k];
                        if (!in.requires_grad) continue;
                        auto& dx = in.ensure_grad();
                        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * grads[k][i];
                      }
                    });
}

}  // namespace rgbt::ops

#endif  // RGBT_OPS_HPP_
