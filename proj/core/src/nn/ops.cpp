#include "cfx/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cfx::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void im2col(const double* img, int channels, int height, int width, int k, int stride,
            int pad, int out_h, int out_w, double* cols) {
    const std::size_t grid = static_cast<std::size_t>(out_h) * out_w;
    for (int c = 0; c < channels; ++c) {
        const double* plane = img + static_cast<std::size_t>(c) * height * width;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                double* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * grid;
                for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    double* dst = row + static_cast<std::size_t>(oh) * out_w;
                    if (ih < 0 || ih >= height) {
                        std::fill(dst, dst + out_w, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(ih) * width;
                    for (int ow = 0; ow < out_w; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        dst[ow] = (iw >= 0 && iw < width) ? src[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, int channels, int height, int width, int k, int stride,
            int pad, int out_h, int out_w, double* img) {
    const std::size_t grid = static_cast<std::size_t>(out_h) * out_w;
    for (int c = 0; c < channels; ++c) {
        double* plane = img + static_cast<std::size_t>(c) * height * width;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const double* row =
                    cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * grid;
                for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= height) continue;
                    const double* src = row + static_cast<std::size_t>(oh) * out_w;
                    double* dst = plane + static_cast<std::size_t>(ih) * width;
                    for (int ow = 0; ow < out_w; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < width) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

void require_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    a.shape().str() + " vs " + b.shape().str());
    }
}

void accumulate(Node* node, const Tensor& g) {
    if (!node->requires_grad) return;
    Tensor& dst = node->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
}

template <class Forward, class Derivative>
Var unary(const Var& x, Forward f, Derivative df) {
    Tensor out(x.shape());
    const Tensor& in = x.value();
    for (std::size_t i = 0; i < in.numel(); ++i) out[i] = f(in[i]);
    Node* xn = x.node();
    Tensor out_copy = x.requires_grad() ? out : Tensor();
    return record(std::move(out), {x}, [xn, df, y = std::move(out_copy)](const Tensor& g) {
        Tensor& dx = xn->grad_buffer();
        const Tensor& xv = xn->value;
        for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * df(xv[i], y[i]);
    });
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (ws.c != xs.c || ws.h != ws.w) {
        throw std::invalid_argument("conv2d: weight " + ws.str() + " incompatible with input " +
                                    xs.str());
    }
    const int k = ws.h;
    const int out_h = (xs.h + 2 * pad - k) / stride + 1;
    const int out_w = (xs.w + 2 * pad - k) / stride + 1;
    if (xs.h + 2 * pad < k || out_h <= 0 || out_w <= 0) {
        throw std::invalid_argument("conv2d: input " + xs.str() + " too small for kernel " +
                                    std::to_string(k));
    }
    const int rows = xs.c * k * k;
    const std::size_t grid = static_cast<std::size_t>(out_h) * out_w;
    const Shape os{xs.n, ws.n, out_h, out_w};

    auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(xs.n) * rows * grid);
    Tensor out(os);
    CMapMat wm(weight.value().data(), ws.n, rows);
    for (int n = 0; n < xs.n; ++n) {
        double* cn = cols->data() + static_cast<std::size_t>(n) * rows * grid;
        im2col(x.value().data() + n * xs.item(), xs.c, xs.h, xs.w, k, stride, pad, out_h,
               out_w, cn);
        MapMat on(out.data() + n * os.item(), ws.n, static_cast<Eigen::Index>(grid));
        on.noalias() = wm * CMapMat(cn, rows, static_cast<Eigen::Index>(grid));
        if (bias.defined()) {
            for (int o = 0; o < ws.n; ++o) on.row(o).array() += bias.value()[o];
        }
    }

    Node* xn = x.node();
    Node* wn = weight.node();
    Node* bn = bias.defined() ? bias.node() : nullptr;
    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return record(std::move(out), std::move(inputs),
                  [=](const Tensor& g) {
                      CMapMat w(wn->value.data(), ws.n, rows);
                      std::vector<double> dcols;
                      if (xn->requires_grad) dcols.resize(static_cast<std::size_t>(rows) * grid);
                      for (int n = 0; n < xs.n; ++n) {
                          CMapMat gn(g.data() + n * os.item(), ws.n, static_cast<Eigen::Index>(grid));
                          const double* cn = cols->data() + static_cast<std::size_t>(n) * rows * grid;
                          if (wn->requires_grad) {
                              MapMat dw(wn->grad_buffer().data(), ws.n, rows);
                              dw.noalias() += gn * CMapMat(cn, rows, static_cast<Eigen::Index>(grid)).transpose();
                          }
                          if (bn && bn->requires_grad) {
                              Tensor& db = bn->grad_buffer();
                              // Plain loop: Eigen's vectorised sum depends on the
                              // buffer's alignment, which breaks bit-reproducibility.
                              for (int o = 0; o < ws.n; ++o) {
                                  double acc = 0.0;
                                  for (Eigen::Index j = 0; j < gn.cols(); ++j) acc += gn(o, j);
                                  db[o] += acc;
                              }
                          }
                          if (xn->requires_grad) {
                              MapMat dc(dcols.data(), rows, static_cast<Eigen::Index>(grid));
                              dc.noalias() = w.transpose() * gn;
                              col2im(dcols.data(), xs.c, xs.h, xs.w, k, stride, pad, out_h, out_w,
                                     xn->grad_buffer().data() + n * xs.item());
                          }
                      }
                  });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad,
                     int output_pad) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();  // [in, out, k, k]
    if (ws.n != xs.c || ws.h != ws.w) {
        throw std::invalid_argument("conv_transpose2d: weight " + ws.str() +
                                    " incompatible with input " + xs.str());
    }
    const int k = ws.h;
    const int cout = ws.c;
    const int out_h = (xs.h - 1) * stride - 2 * pad + k + output_pad;
    const int out_w = (xs.w - 1) * stride - 2 * pad + k + output_pad;
    if (out_h <= 0 || out_w <= 0) {
        throw std::invalid_argument("conv_transpose2d: empty output for input " + xs.str());
    }
    const int rows = cout * k * k;
    const std::size_t grid = xs.plane();
    const Shape os{xs.n, cout, out_h, out_w};

    Tensor out(os);
    CMapMat wm(weight.value().data(), xs.c, rows);
    std::vector<double> cols(static_cast<std::size_t>(rows) * grid);
    for (int n = 0; n < xs.n; ++n) {
        MapMat cm(cols.data(), rows, static_cast<Eigen::Index>(grid));
        cm.noalias() = wm.transpose() *
                       CMapMat(x.value().data() + n * xs.item(), xs.c, static_cast<Eigen::Index>(grid));
        double* on = out.data() + n * os.item();
        col2im(cols.data(), cout, out_h, out_w, k, stride, pad, xs.h, xs.w, on);
        if (bias.defined()) {
            for (int o = 0; o < cout; ++o) {
                double* p = on + static_cast<std::size_t>(o) * os.plane();
                const double b = bias.value()[o];
                for (std::size_t i = 0; i < os.plane(); ++i) p[i] += b;
            }
        }
    }

    Node* xn = x.node();
    Node* wn = weight.node();
    Node* bn = bias.defined() ? bias.node() : nullptr;
    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return record(std::move(out), std::move(inputs), [=](const Tensor& g) {
        CMapMat w(wn->value.data(), xs.c, rows);
        std::vector<double> gcols(static_cast<std::size_t>(rows) * grid);
        for (int n = 0; n < xs.n; ++n) {
            const double* gn = g.data() + n * os.item();
            im2col(gn, cout, out_h, out_w, k, stride, pad, xs.h, xs.w, gcols.data());
            CMapMat gc(gcols.data(), rows, static_cast<Eigen::Index>(grid));
            if (xn->requires_grad) {
                MapMat dx(xn->grad_buffer().data() + n * xs.item(), xs.c, static_cast<Eigen::Index>(grid));
                dx.noalias() += w * gc;
            }
            if (wn->requires_grad) {
                MapMat dw(wn->grad_buffer().data(), xs.c, rows);
                dw.noalias() += CMapMat(xn->value.data() + n * xs.item(), xs.c,
                                        static_cast<Eigen::Index>(grid)) *
                                gc.transpose();
            }
            if (bn && bn->requires_grad) {
                Tensor& db = bn->grad_buffer();
                for (int o = 0; o < cout; ++o) {
                    const double* p = gn + static_cast<std::size_t>(o) * os.plane();
                    double s = 0.0;
                    for (std::size_t i = 0; i < os.plane(); ++i) s += p[i];
                    db[o] += s;
                }
            }
        }
    });
}

Var reflection_pad(const Var& x, int pad) {
    const Shape xs = x.shape();
    if (pad < 0 || pad >= xs.h || pad >= xs.w) {
        throw std::invalid_argument("reflection_pad: pad " + std::to_string(pad) +
                                    " invalid for input " + xs.str());
    }
    const Shape os{xs.n, xs.c, xs.h + 2 * pad, xs.w + 2 * pad};
    auto reflect = [](int i, int n) {
        if (i < 0) return -i;
        if (i >= n) return 2 * n - 2 - i;
        return i;
    };
    // Source offset within a plane, for every output position.
    std::vector<int> src(os.plane());
    for (int i = 0; i < os.h; ++i) {
        for (int j = 0; j < os.w; ++j) {
            src[static_cast<std::size_t>(i) * os.w + j] =
                reflect(i - pad, xs.h) * xs.w + reflect(j - pad, xs.w);
        }
    }
    Tensor out(os);
    const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
    for (std::size_t p = 0; p < planes; ++p) {
        const double* in = x.value().data() + p * xs.plane();
        double* o = out.data() + p * os.plane();
        for (std::size_t i = 0; i < os.plane(); ++i) o[i] = in[src[i]];
    }
    Node* xn = x.node();
    return record(std::move(out), {x}, [=, src = std::move(src)](const Tensor& g) {
        Tensor& dx = xn->grad_buffer();
        for (std::size_t p = 0; p < planes; ++p) {
            double* d = dx.data() + p * xs.plane();
            const double* gp = g.data() + p * os.plane();
            for (std::size_t i = 0; i < os.plane(); ++i) d[src[i]] += gp[i];
        }
    });
}

Var max_pool2d(const Var& x, int kernel, int stride) {
    const Shape xs = x.shape();
    if (xs.h < kernel || xs.w < kernel) {
        throw std::invalid_argument("max_pool2d: input " + xs.str() + " smaller than kernel");
    }
    const Shape os{xs.n, xs.c, (xs.h - kernel) / stride + 1, (xs.w - kernel) / stride + 1};
    Tensor out(os);
    std::vector<std::size_t> arg(os.numel());
    const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
    for (std::size_t p = 0; p < planes; ++p) {
        const double* in = x.value().data() + p * xs.plane();
        for (int i = 0; i < os.h; ++i) {
            for (int j = 0; j < os.w; ++j) {
                std::size_t best = static_cast<std::size_t>(i * stride) * xs.w + j * stride;
                for (int a = 0; a < kernel; ++a) {
                    for (int b = 0; b < kernel; ++b) {
                        const std::size_t idx =
                            static_cast<std::size_t>(i * stride + a) * xs.w + j * stride + b;
                        if (in[idx] > in[best]) best = idx;
                    }
                }
                const std::size_t o = p * os.plane() + static_cast<std::size_t>(i) * os.w + j;
                out[o] = in[best];
                arg[o] = p * xs.plane() + best;
            }
        }
    }
    Node* xn = x.node();
    return record(std::move(out), {x}, [xn, arg = std::move(arg)](const Tensor& g) {
        Tensor& dx = xn->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) dx[arg[i]] += g[i];
    });
}

Var instance_norm(const Var& x, double eps) {
    const Shape xs = x.shape();
    const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
    const std::size_t m = xs.plane();
    Tensor out(xs);
    std::vector<double> inv_std(planes);
    for (std::size_t p = 0; p < planes; ++p) {
        const double* in = x.value().data() + p * m;
        double mu = 0.0;
        for (std::size_t i = 0; i < m; ++i) mu += in[i];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t i = 0; i < m; ++i) var += (in[i] - mu) * (in[i] - mu);
        var /= static_cast<double>(m);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[p] = is;
        double* o = out.data() + p * m;
        for (std::size_t i = 0; i < m; ++i) o[i] = (in[i] - mu) * is;
    }
    Node* xn = x.node();
    Tensor xhat = x.requires_grad() ? out : Tensor();
    return record(std::move(out), {x},
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor& g) {
                      Tensor& dx = xn->grad_buffer();
                      for (std::size_t p = 0; p < planes; ++p) {
                          const double* gp = g.data() + p * m;
                          const double* xh = xhat.data() + p * m;
                          double sg = 0.0;
                          double sgx = 0.0;
                          for (std::size_t i = 0; i < m; ++i) {
                              sg += gp[i];
                              sgx += gp[i] * xh[i];
                          }
                          sg /= static_cast<double>(m);
                          sgx /= static_cast<double>(m);
                          double* d = dx.data() + p * m;
                          for (std::size_t i = 0; i < m; ++i) {
                              d[i] += inv_std[p] * (gp[i] - sg - xh[i] * sgx);
                          }
                      }
                  });
}

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                     BatchStats* stats) {
    const Shape xs = x.shape();
    const int channels = xs.c;
    const std::size_t plane = xs.plane();
    const std::size_t m = static_cast<std::size_t>(xs.n) * plane;
    std::vector<double> mu(channels, 0.0), var(channels, 0.0), inv_std(channels);
    const double* in = x.value().data();
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < channels; ++c) {
            const double* p = in + n * xs.item() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) mu[c] += p[i];
        }
    }
    for (int c = 0; c < channels; ++c) mu[c] /= static_cast<double>(m);
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < channels; ++c) {
            const double* p = in + n * xs.item() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) var[c] += (p[i] - mu[c]) * (p[i] - mu[c]);
        }
    }
    for (int c = 0; c < channels; ++c) {
        var[c] /= static_cast<double>(m);
        inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    }
    Tensor xhat(xs);
    Tensor out(xs);
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < channels; ++c) {
            const std::size_t off = n * xs.item() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                xhat[off + i] = (in[off + i] - mu[c]) * inv_std[c];
                out[off + i] = gamma.value()[c] * xhat[off + i] + beta.value()[c];
            }
        }
    }
    if (stats) *stats = BatchStats{mu, var};
    Node* xn = x.node();
    Node* gn = gamma.node();
    Node* bn = beta.node();
    return record(std::move(out), {x, gamma, beta},
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor& g) {
                      std::vector<double> sg(channels, 0.0), sgx(channels, 0.0);
                      for (int n = 0; n < xs.n; ++n) {
                          for (int c = 0; c < channels; ++c) {
                              const std::size_t off = n * xs.item() + c * plane;
                              for (std::size_t i = 0; i < plane; ++i) {
                                  sg[c] += g[off + i];
                                  sgx[c] += g[off + i] * xhat[off + i];
                              }
                          }
                      }
                      if (gn->requires_grad) {
                          Tensor& dg = gn->grad_buffer();
                          for (int c = 0; c < channels; ++c) dg[c] += sgx[c];
                      }
                      if (bn->requires_grad) {
                          Tensor& db = bn->grad_buffer();
                          for (int c = 0; c < channels; ++c) db[c] += sg[c];
                      }
                      if (!xn->requires_grad) return;
                      Tensor& dx = xn->grad_buffer();
                      const double inv_m = 1.0 / static_cast<double>(m);
                      for (int n = 0; n < xs.n; ++n) {
                          for (int c = 0; c < channels; ++c) {
                              const double k = gn->value[c] * inv_std[c];
                              const std::size_t off = n * xs.item() + c * plane;
                              for (std::size_t i = 0; i < plane; ++i) {
                                  dx[off + i] += k * (g[off + i] - sg[c] * inv_m -
                                                      xhat[off + i] * sgx[c] * inv_m);
                              }
                          }
                      }
                  });
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta,
                    const Tensor& running_mean, const Tensor& running_var, double eps) {
    const Shape xs = x.shape();
    const int channels = xs.c;
    const std::size_t plane = xs.plane();
    std::vector<double> k(channels), shift(channels);
    for (int c = 0; c < channels; ++c) {
        const double is = 1.0 / std::sqrt(running_var[c] + eps);
        k[c] = gamma.value()[c] * is;
        shift[c] = beta.value()[c] - running_mean[c] * k[c];
    }
    Tensor out(xs);
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < channels; ++c) {
            const std::size_t off = n * xs.item() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                out[off + i] = k[c] * x.value()[off + i] + shift[c];
            }
        }
    }
    Node* xn = x.node();
    Node* gn = gamma.node();
    Node* bn = beta.node();
    std::vector<double> mean_copy(running_mean.values().begin(), running_mean.values().end());
    std::vector<double> inv(channels);
    for (int c = 0; c < channels; ++c) inv[c] = 1.0 / std::sqrt(running_var[c] + eps);
    return record(std::move(out), {x, gamma, beta},
                  [=, mean_copy = std::move(mean_copy), inv = std::move(inv)](const Tensor& g) {
                      for (int n = 0; n < xs.n; ++n) {
                          for (int c = 0; c < channels; ++c) {
                              const std::size_t off = n * xs.item() + c * plane;
                              for (std::size_t i = 0; i < plane; ++i) {
                                  const double xh = (xn->value[off + i] - mean_copy[c]) * inv[c];
                                  if (xn->requires_grad) xn->grad_buffer()[off + i] += g[off + i] * k[c];
                                  if (gn->requires_grad) gn->grad_buffer()[c] += g[off + i] * xh;
                                  if (bn->requires_grad) bn->grad_buffer()[c] += g[off + i];
                              }
                          }
                      }
                  });
}

Var dense(const Var& x, const Var& weight, const Var& bias) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    const int in = static_cast<int>(xs.item());
    if (static_cast<int>(ws.item()) != in) {
        throw std::invalid_argument("dense: weight " + ws.str() + " expects " +
                                    std::to_string(ws.item()) + " inputs, got " + xs.str());
    }
    const int outs = ws.n;
    Tensor out(Shape{xs.n, outs, 1, 1});
    CMapMat xm(x.value().data(), xs.n, in);
    CMapMat wm(weight.value().data(), outs, in);
    MapMat om(out.data(), xs.n, outs);
    om.noalias() = xm * wm.transpose();
    if (bias.defined()) {
        for (int n = 0; n < xs.n; ++n) {
            for (int o = 0; o < outs; ++o) om(n, o) += bias.value()[o];
        }
    }
    Node* xn = x.node();
    Node* wn = weight.node();
    Node* bn = bias.defined() ? bias.node() : nullptr;
    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return record(std::move(out), std::move(inputs), [=](const Tensor& g) {
        CMapMat gm(g.data(), xs.n, outs);
        if (xn->requires_grad) {
            MapMat dx(xn->grad_buffer().data(), xs.n, in);
            dx.noalias() += gm * CMapMat(wn->value.data(), outs, in);
        }
        if (wn->requires_grad) {
            MapMat dw(wn->grad_buffer().data(), outs, in);
            dw.noalias() += gm.transpose() * CMapMat(xn->value.data(), xs.n, in);
        }
        if (bn && bn->requires_grad) {
            Tensor& db = bn->grad_buffer();
            for (int n = 0; n < xs.n; ++n) {
                for (int o = 0; o < outs; ++o) db[o] += gm(n, o);
            }
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(shape);
    Node* xn = x.node();
    return record(std::move(out), {x}, [xn](const Tensor& g) { accumulate(xn, g); });
}

Var relu(const Var& x) {
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
    return unary(
        x, [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var tanh(const Var& x) {
    return unary(
        x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
    return unary(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& x) {
    return unary(
        x,
        [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Var softmax(const Var& x) {
    const Shape xs = x.shape();
    const std::size_t plane = xs.plane();
    Tensor out(xs);
    for (int n = 0; n < xs.n; ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t base = n * xs.item() + p;
            double mx = x.value()[base];
            for (int c = 1; c < xs.c; ++c) mx = std::max(mx, x.value()[base + c * plane]);
            double z = 0.0;
            for (int c = 0; c < xs.c; ++c) {
                const double e = std::exp(x.value()[base + c * plane] - mx);
                out[base + c * plane] = e;
                z += e;
            }
            for (int c = 0; c < xs.c; ++c) out[base + c * plane] /= z;
        }
    }
    Node* xn = x.node();
    Tensor y = x.requires_grad() ? out : Tensor();
    return record(std::move(out), {x}, [=, y = std::move(y)](const Tensor& g) {
        Tensor& dx = xn->grad_buffer();
        for (int n = 0; n < xs.n; ++n) {
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t base = n * xs.item() + p;
                double dot = 0.0;
                for (int c = 0; c < xs.c; ++c) dot += g[base + c * plane] * y[base + c * plane];
                for (int c = 0; c < xs.c; ++c) {
                    const std::size_t i = base + c * plane;
                    dx[i] += y[i] * (g[i] - dot);
                }
            }
        }
    });
}

Var dropout(const Var& x, double p, std::mt19937_64& rng) {
    if (p <= 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    const double s = 1.0 / (1.0 - p);
    std::vector<double> mask(x.value().numel());
    for (auto& m : mask) m = keep(rng) ? s : 0.0;
    Tensor out(x.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = x.value()[i] * mask[i];
    Node* xn = x.node();
    return record(std::move(out), {x}, [xn, mask = std::move(mask)](const Tensor& g) {
        Tensor& dx = xn->grad_buffer();
        for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += g[i] * mask[i];
    });
}

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
    Node* an = a.node();
    Node* bn = b.node();
    return record(std::move(out), {a, b}, [an, bn](const Tensor& g) {
        accumulate(an, g);
        accumulate(bn, g);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    Node* an = a.node();
    Node* bn = b.node();
    return record(std::move(out), {a, b}, [an, bn](const Tensor& g) {
        accumulate(an, g);
        if (bn->requires_grad) {
            Tensor& d = bn->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) d[i] -= g[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    Node* an = a.node();
    Node* bn = b.node();
    return record(std::move(out), {a, b}, [an, bn](const Tensor& g) {
        if (an->requires_grad) {
            Tensor& d = an->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            Tensor& d = bn->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i] * an->value[i];
        }
    });
}

Var scale(const Var& x, double s) {
    return unary(
        x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
    return unary(
        x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var square(const Var& x) {
    return unary(
        x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var abs(const Var& x) {
    return unary(
        x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    Node* xn = x.node();
    return record(Tensor(Shape{1, 1, 1, 1}, s), {x}, [xn](const Tensor& g) {
        Tensor& d = xn->grad_buffer();
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g[0];
    });
}

Var mean(const Var& x) {
    const double inv = 1.0 / static_cast<double>(x.value().numel());
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    Node* xn = x.node();
    return record(Tensor(Shape{1, 1, 1, 1}, s * inv), {x}, [xn, inv](const Tensor& g) {
        Tensor& d = xn->grad_buffer();
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g[0] * inv;
    });
}

}  // namespace cfx::nn
