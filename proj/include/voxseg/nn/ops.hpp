#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

#include "voxseg/nn/graph.hpp"

namespace voxseg::nn {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

struct ConvDims {
  std::int64_t in_d, in_h, in_w;
  std::int64_t out_d, out_h, out_w;
  std::int64_t kernel, stride, pad;
  std::int64_t out_voxels() const { return out_d * out_h * out_w; }
  std::int64_t in_voxels() const { return in_d * in_h * in_w; }
};

inline ConvDims conv_dims(std::int64_t d, std::int64_t h, std::int64_t w, std::int64_t kernel,
                          std::int64_t stride, std::int64_t pad) {
  ConvDims c{d, h, w, 0, 0, 0, kernel, stride, pad};
  c.out_d = (d + 2 * pad - kernel) / stride + 1;
  c.out_h = (h + 2 * pad - kernel) / stride + 1;
  c.out_w = (w + 2 * pad - kernel) / stride + 1;
  if (c.out_d < 1 || c.out_h < 1 || c.out_w < 1)
    throw std::invalid_argument("conv: kernel does not fit input");
  return c;
}

// col is (C*k^3) x out_voxels, column-major; row index = ((c*k + kd)*k + kh)*k + kw
template <typename T>
void im2col(const T* x, std::int64_t channels, const ConvDims& cd, MatCM<T>& col) {
  const std::int64_t k = cd.kernel;
  const std::int64_t rows = channels * k * k * k;
  col.resize(rows, cd.out_voxels());
  const std::int64_t in_hw = cd.in_h * cd.in_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* xc = x + c * cd.in_voxels();
    for (std::int64_t kd = 0; kd < k; ++kd)
      for (std::int64_t kh = 0; kh < k; ++kh)
        for (std::int64_t kw = 0; kw < k; ++kw) {
          const std::int64_t row = ((c * k + kd) * k + kh) * k + kw;
          std::int64_t m = 0;
          for (std::int64_t od = 0; od < cd.out_d; ++od) {
            const std::int64_t id = od * cd.stride + kd - cd.pad;
            for (std::int64_t oh = 0; oh < cd.out_h; ++oh) {
              const std::int64_t ih = oh * cd.stride + kh - cd.pad;
              const bool plane_ok = id >= 0 && id < cd.in_d && ih >= 0 && ih < cd.in_h;
              for (std::int64_t ow = 0; ow < cd.out_w; ++ow, ++m) {
                const std::int64_t iw = ow * cd.stride + kw - cd.pad;
                col(row, m) = (plane_ok && iw >= 0 && iw < cd.in_w)
                                  ? xc[id * in_hw + ih * cd.in_w + iw]
                                  : T(0);
              }
            }
          }
        }
  }
}

// adjoint of im2col: scatter-add columns back into the image
template <typename T>
void col2im(const MatCM<T>& col, std::int64_t channels, const ConvDims& cd, T* x) {
  const std::int64_t k = cd.kernel;
  const std::int64_t in_hw = cd.in_h * cd.in_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    T* xc = x + c * cd.in_voxels();
    for (std::int64_t kd = 0; kd < k; ++kd)
      for (std::int64_t kh = 0; kh < k; ++kh)
        for (std::int64_t kw = 0; kw < k; ++kw) {
          const std::int64_t row = ((c * k + kd) * k + kh) * k + kw;
          std::int64_t m = 0;
          for (std::int64_t od = 0; od < cd.out_d; ++od) {
            const std::int64_t id = od * cd.stride + kd - cd.pad;
            for (std::int64_t oh = 0; oh < cd.out_h; ++oh) {
              const std::int64_t ih = oh * cd.stride + kh - cd.pad;
              const bool plane_ok = id >= 0 && id < cd.in_d && ih >= 0 && ih < cd.in_h;
              for (std::int64_t ow = 0; ow < cd.out_w; ++ow, ++m) {
                const std::int64_t iw = ow * cd.stride + kw - cd.pad;
                if (plane_ok && iw >= 0 && iw < cd.in_w) xc[id * in_hw + ih * cd.in_w + iw] += col(row, m);
              }
            }
          }
        }
  }
}

// x: [N, Cin, D, H, W]; w: [Cout, Cin, k, k, k]; b: [Cout] or null
template <typename T>
NodePtr<T> conv3d(const NodePtr<T>& x, const NodePtr<T>& w, const NodePtr<T>& b,
                  std::int64_t stride, std::int64_t pad) {
  if (x->value.ndim() != 5 || w->value.ndim() != 5)
    throw std::invalid_argument("conv3d: expected 5-d input and weight");
  const std::int64_t n_batch = x->value.dim(0), cin = x->value.dim(1);
  const std::int64_t cout = w->value.dim(0), kernel = w->value.dim(2);
  if (w->value.dim(1) != cin) throw std::invalid_argument("conv3d: channel mismatch");
  ConvDims cd = conv_dims(x->value.dim(2), x->value.dim(3), x->value.dim(4), kernel, stride, pad);
  const std::int64_t kvol = cin * kernel * kernel * kernel;
  const std::int64_t m = cd.out_voxels();

  Tensor<T> out({n_batch, cout, cd.out_d, cd.out_h, cd.out_w});
  Eigen::Map<const MatRM<T>> wmat(w->value.data.data(), cout, kvol);
  MatCM<T> col;
  for (std::int64_t n = 0; n < n_batch; ++n) {
    im2col(x->value.data.data() + n * cin * cd.in_voxels(), cin, cd, col);
    Eigen::Map<MatRM<T>> y(out.data.data() + n * cout * m, cout, m);
    y.noalias() = wmat * col;
    if (b) {
      for (std::int64_t c = 0; c < cout; ++c) y.row(c).array() += b->value[c];
    }
  }

  std::vector<NodePtr<T>> parents{x, w};
  if (b) parents.push_back(b);
  return make_op<T>(
      std::move(out), std::move(parents),
      [x, w, b, cd, n_batch, cin, cout, kvol, m](Node<T>& self) {
        Eigen::Map<const MatRM<T>> wmat(w->value.data.data(), cout, kvol);
        MatCM<T> col, dcol;
        for (std::int64_t n = 0; n < n_batch; ++n) {
          Eigen::Map<const MatRM<T>> dy(self.grad.data.data() + n * cout * m, cout, m);
          if (w->requires_grad) {
            im2col(x->value.data.data() + n * cin * cd.in_voxels(), cin, cd, col);
            Eigen::Map<MatRM<T>> dw(w->grad.data.data(), cout, kvol);
            dw.noalias() += dy * col.transpose();
          }
          if (b && b->requires_grad) {
            for (std::int64_t c = 0; c < cout; ++c) b->grad[c] += dy.row(c).sum();
          }
          if (x->requires_grad) {
            dcol.noalias() = wmat.transpose() * dy;
            col2im(dcol, cin, cd, x->grad.data.data() + n * cin * cd.in_voxels());
          }
        }
      });
}

// x: [N, Cin, D, H, W]; w: [Cin, Cout, k, k, k]; output spatial dims
// (D-1)*stride + k (no padding). The op is the adjoint of a stride-s conv,
// so im2col/col2im swap roles relative to conv3d.
template <typename T>
NodePtr<T> conv_transpose3d(const NodePtr<T>& x, const NodePtr<T>& w, const NodePtr<T>& b,
                            std::int64_t stride) {
  const std::int64_t n_batch = x->value.dim(0), cin = x->value.dim(1);
  if (w->value.dim(0) != cin) throw std::invalid_argument("conv_transpose3d: channel mismatch");
  const std::int64_t cout = w->value.dim(1), kernel = w->value.dim(2);
  const std::int64_t out_d = (x->value.dim(2) - 1) * stride + kernel;
  const std::int64_t out_h = (x->value.dim(3) - 1) * stride + kernel;
  const std::int64_t out_w = (x->value.dim(4) - 1) * stride + kernel;
  // dims of the adjoint conv: its input is our output
  ConvDims cd = conv_dims(out_d, out_h, out_w, kernel, stride, 0);
  const std::int64_t kvol = cout * kernel * kernel * kernel;
  const std::int64_t m = cd.out_voxels();  // == our input voxel count
  if (m != x->value.dim(2) * x->value.dim(3) * x->value.dim(4))
    throw std::logic_error("conv_transpose3d: dim bookkeeping error");

  Tensor<T> out({n_batch, cout, out_d, out_h, out_w});
  Eigen::Map<const MatRM<T>> wmat(w->value.data.data(), cin, kvol);
  MatCM<T> col;
  for (std::int64_t n = 0; n < n_batch; ++n) {
    Eigen::Map<const MatRM<T>> xm(x->value.data.data() + n * cin * m, cin, m);
    col.noalias() = wmat.transpose() * xm;
    T* out_n = out.data.data() + n * cout * cd.in_voxels();
    col2im(col, cout, cd, out_n);
    if (b) {
      for (std::int64_t c = 0; c < cout; ++c) {
        T* oc = out_n + c * cd.in_voxels();
        for (std::int64_t i = 0; i < cd.in_voxels(); ++i) oc[i] += b->value[c];
      }
    }
  }

  std::vector<NodePtr<T>> parents{x, w};
  if (b) parents.push_back(b);
  return make_op<T>(
      std::move(out), std::move(parents),
      [x, w, b, cd, n_batch, cin, cout, kvol, m](Node<T>& self) {
        Eigen::Map<const MatRM<T>> wmat(w->value.data.data(), cin, kvol);
        MatCM<T> dcol;
        for (std::int64_t n = 0; n < n_batch; ++n) {
          const T* dout_n = self.grad.data.data() + n * cout * cd.in_voxels();
          im2col(dout_n, cout, cd, dcol);
          if (x->requires_grad) {
            Eigen::Map<MatRM<T>> dx(x->grad.data.data() + n * cin * m, cin, m);
            dx.noalias() += wmat * dcol;
          }
          if (w->requires_grad) {
            Eigen::Map<const MatRM<T>> xm(x->value.data.data() + n * cin * m, cin, m);
            Eigen::Map<MatRM<T>> dw(w->grad.data.data(), cin, kvol);
            dw.noalias() += xm * dcol.transpose();
          }
          if (b && b->requires_grad) {
            for (std::int64_t c = 0; c < cout; ++c) {
              const T* dc = dout_n + c * cd.in_voxels();
              T s = 0;
              for (std::int64_t i = 0; i < cd.in_voxels(); ++i) s += dc[i];
              b->grad[c] += s;
            }
          }
        }
      });
}

template <typename T>
NodePtr<T> leaky_relu(const NodePtr<T>& x, T slope) {
  Tensor<T> out(x->value.shape);
  for (std::int64_t i = 0; i < x->value.size(); ++i) {
    T v = x->value[i];
    out[i] = v > 0 ? v : slope * v;
  }
  return make_op<T>(std::move(out), {x}, [x, slope](Node<T>& self) {
    for (std::int64_t i = 0; i < self.grad.size(); ++i)
      x->grad[i] += self.grad[i] * (x->value[i] > 0 ? T(1) : slope);
  });
}

template <typename T>
NodePtr<T> relu(const NodePtr<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
NodePtr<T> sigmoid(const NodePtr<T>& x) {
  Tensor<T> out(x->value.shape);
  for (std::int64_t i = 0; i < x->value.size(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-x->value[i]));
  return make_op<T>(std::move(out), {x}, [x](Node<T>& self) {
    for (std::int64_t i = 0; i < self.grad.size(); ++i) {
      T y = self.value[i];
      x->grad[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
NodePtr<T> add(const NodePtr<T>& a, const NodePtr<T>& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
  Tensor<T> out(a->value.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
    if (a->requires_grad)
      for (std::int64_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
    if (b->requires_grad)
      for (std::int64_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i];
  });
}

template <typename T>
NodePtr<T> scale(const NodePtr<T>& a, T c) {
  Tensor<T> out(a->value.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = c * a->value[i];
  return make_op<T>(std::move(out), {a}, [a, c](Node<T>& self) {
    for (std::int64_t i = 0; i < self.grad.size(); ++i) a->grad[i] += c * self.grad[i];
  });
}

// concatenate along the channel axis (dim 1) of [N, C, D, H, W]
template <typename T>
NodePtr<T> concat_channels(const NodePtr<T>& a, const NodePtr<T>& b) {
  const auto& sa = a->value.shape;
  const auto& sb = b->value.shape;
  if (sa.size() != 5 || sb.size() != 5 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] ||
      sa[4] != sb[4])
    throw std::invalid_argument("concat_channels: incompatible shapes");
  const std::int64_t n_batch = sa[0], ca = sa[1], cb = sb[1];
  const std::int64_t vox = sa[2] * sa[3] * sa[4];
  Tensor<T> out({n_batch, ca + cb, sa[2], sa[3], sa[4]});
  for (std::int64_t n = 0; n < n_batch; ++n) {
    std::copy_n(a->value.data.data() + n * ca * vox, ca * vox,
                out.data.data() + n * (ca + cb) * vox);
    std::copy_n(b->value.data.data() + n * cb * vox, cb * vox,
                out.data.data() + (n * (ca + cb) + ca) * vox);
  }
  return make_op<T>(std::move(out), {a, b}, [a, b, n_batch, ca, cb, vox](Node<T>& self) {
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const T* g = self.grad.data.data() + n * (ca + cb) * vox;
      if (a->requires_grad) {
        T* ga = a->grad.data.data() + n * ca * vox;
        for (std::int64_t i = 0; i < ca * vox; ++i) ga[i] += g[i];
      }
      if (b->requires_grad) {
        T* gb = b->grad.data.data() + n * cb * vox;
        for (std::int64_t i = 0; i < cb * vox; ++i) gb[i] += g[ca * vox + i];
      }
    }
  });
}

// Group normalization over [N, C, D, H, W]: statistics per (sample, group).
// gamma/beta have C entries.
template <typename T>
NodePtr<T> group_norm(const NodePtr<T>& x, const NodePtr<T>& gamma, const NodePtr<T>& beta,
                      std::int64_t groups, T eps) {
  const std::int64_t n_batch = x->value.dim(0), channels = x->value.dim(1);
  if (channels % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  const std::int64_t vox = x->value.dim(2) * x->value.dim(3) * x->value.dim(4);
  const std::int64_t cpg = channels / groups;
  const std::int64_t gsize = cpg * vox;

  auto xhat = std::make_shared<Tensor<T>>(x->value.shape);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n_batch * groups));
  Tensor<T> out(x->value.shape);
  for (std::int64_t n = 0; n < n_batch; ++n)
    for (std::int64_t g = 0; g < groups; ++g) {
      const T* xg = x->value.data.data() + (n * channels + g * cpg) * vox;
      double mean = 0, var = 0;
      for (std::int64_t i = 0; i < gsize; ++i) mean += xg[i];
      mean /= gsize;
      for (std::int64_t i = 0; i < gsize; ++i) {
        double d = xg[i] - mean;
        var += d * d;
      }
      var /= gsize;
      T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      (*inv_std)[static_cast<std::size_t>(n * groups + g)] = istd;
      T* xh = xhat->data.data() + (n * channels + g * cpg) * vox;
      T* o = out.data.data() + (n * channels + g * cpg) * vox;
      for (std::int64_t c = 0; c < cpg; ++c) {
        T gm = gamma->value[g * cpg + c];
        T bt = beta->value[g * cpg + c];
        for (std::int64_t i = 0; i < vox; ++i) {
          T h = static_cast<T>((xg[c * vox + i] - mean) * istd);
          xh[c * vox + i] = h;
          o[c * vox + i] = gm * h + bt;
        }
      }
    }

  return make_op<T>(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, n_batch, channels, groups, cpg, vox, gsize](Node<T>& self) {
        for (std::int64_t n = 0; n < n_batch; ++n)
          for (std::int64_t g = 0; g < groups; ++g) {
            const std::int64_t base = (n * channels + g * cpg) * vox;
            const T* dy = self.grad.data.data() + base;
            const T* xh = xhat->data.data() + base;
            T istd = (*inv_std)[static_cast<std::size_t>(n * groups + g)];
            // dyh = dy * gamma; need mean(dyh) and mean(dyh * xhat)
            double s1 = 0, s2 = 0;
            for (std::int64_t c = 0; c < cpg; ++c) {
              T gm = gamma->value[g * cpg + c];
              for (std::int64_t i = 0; i < vox; ++i) {
                double dyh = static_cast<double>(dy[c * vox + i]) * gm;
                s1 += dyh;
                s2 += dyh * xh[c * vox + i];
              }
            }
            s1 /= gsize;
            s2 /= gsize;
            for (std::int64_t c = 0; c < cpg; ++c) {
              T gm = gamma->value[g * cpg + c];
              double dgam = 0, dbet = 0;
              for (std::int64_t i = 0; i < vox; ++i) {
                double d = dy[c * vox + i];
                double h = xh[c * vox + i];
                dgam += d * h;
                dbet += d;
                if (x->requires_grad)
                  x->grad[base + c * vox + i] +=
                      static_cast<T>(istd * (d * gm - s1 - h * s2));
              }
              if (gamma->requires_grad) gamma->grad[g * cpg + c] += static_cast<T>(dgam);
              if (beta->requires_grad) beta->grad[g * cpg + c] += static_cast<T>(dbet);
            }
          }
      });
}

// Batch normalization (training statistics): per channel over (N, spatial).
template <typename T>
NodePtr<T> batch_norm(const NodePtr<T>& x, const NodePtr<T>& gamma, const NodePtr<T>& beta, T eps) {
  const std::int64_t n_batch = x->value.dim(0), channels = x->value.dim(1);
  const std::int64_t vox = x->value.dim(2) * x->value.dim(3) * x->value.dim(4);
  const std::int64_t m = n_batch * vox;

  auto xhat = std::make_shared<Tensor<T>>(x->value.shape);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(channels));
  Tensor<T> out(x->value.shape);
  auto idx = [=](std::int64_t n, std::int64_t c) { return (n * channels + c) * vox; };
  for (std::int64_t c = 0; c < channels; ++c) {
    double mean = 0, var = 0;
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const T* xc = x->value.data.data() + idx(n, c);
      for (std::int64_t i = 0; i < vox; ++i) mean += xc[i];
    }
    mean /= m;
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const T* xc = x->value.data.data() + idx(n, c);
      for (std::int64_t i = 0; i < vox; ++i) {
        double d = xc[i] - mean;
        var += d * d;
      }
    }
    var /= m;
    T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    (*inv_std)[static_cast<std::size_t>(c)] = istd;
    T gm = gamma->value[c], bt = beta->value[c];
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const T* xc = x->value.data.data() + idx(n, c);
      T* xh = xhat->data.data() + idx(n, c);
      T* o = out.data.data() + idx(n, c);
      for (std::int64_t i = 0; i < vox; ++i) {
        T h = static_cast<T>((xc[i] - mean) * istd);
        xh[i] = h;
        o[i] = gm * h + bt;
      }
    }
  }

  return make_op<T>(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, n_batch, channels, vox, m, idx](Node<T>& self) {
        for (std::int64_t c = 0; c < channels; ++c) {
          T gm = gamma->value[c];
          T istd = (*inv_std)[static_cast<std::size_t>(c)];
          double s1 = 0, s2 = 0, dgam = 0, dbet = 0;
          for (std::int64_t n = 0; n < n_batch; ++n) {
            const T* dy = self.grad.data.data() + idx(n, c);
            const T* xh = xhat->data.data() + idx(n, c);
            for (std::int64_t i = 0; i < vox; ++i) {
              double d = dy[i];
              double h = xh[i];
              s1 += d;
              s2 += d * h;
              dgam += d * h;
              dbet += d;
            }
          }
          if (gamma->requires_grad) gamma->grad[c] += static_cast<T>(dgam);
          if (beta->requires_grad) beta->grad[c] += static_cast<T>(dbet);
          if (!x->requires_grad) continue;
          double m1 = s1 * gm / m, m2 = s2 * gm / m;
          for (std::int64_t n = 0; n < n_batch; ++n) {
            const T* dy = self.grad.data.data() + idx(n, c);
            const T* xh = xhat->data.data() + idx(n, c);
            T* dx = x->grad.data.data() + idx(n, c);
            for (std::int64_t i = 0; i < vox; ++i)
              dx[i] += static_cast<T>(istd * (static_cast<double>(dy[i]) * gm - m1 - xh[i] * m2));
          }
        }
      });
}

// mean over all elements of (pred - target)^2
template <typename T>
NodePtr<T> mse_loss(const NodePtr<T>& pred, const Tensor<T>& target) {
  if (!pred->value.same_shape(target)) throw std::invalid_argument("mse_loss: shape mismatch");
  const std::int64_t n = pred->value.size();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double d = pred->value[i] - target[i];
    acc += d * d;
  }
  Tensor<T> out(std::vector<std::int64_t>{});
  out.data.assign(1, static_cast<T>(acc / n));
  auto tgt = std::make_shared<Tensor<T>>(target);
  return make_op<T>(std::move(out), {pred}, [pred, tgt, n](Node<T>& self) {
    T g = self.grad[0];
    for (std::int64_t i = 0; i < n; ++i)
      pred->grad[i] += static_cast<T>(g * 2.0 * (pred->value[i] - (*tgt)[i]) / n);
  });
}

template <typename T>
NodePtr<T> scalar_from(T v) {
  Tensor<T> t({});
  t.data.assign(1, v);
  return constant(std::move(t));
}

}  // namespace voxseg::nn
