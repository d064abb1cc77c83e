#include "inflatenn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "inflatenn/parallel.hpp"

namespace inflatenn {

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// First output index whose receptive field start is >= 0.
inline int out_lo(int k, int pad, int stride) {
  const int num = pad - k;
  if (num <= 0) return 0;
  return (num + stride - 1) / stride;
}

// One past the last output index whose receptive field start is < extent.
inline int out_hi(int k, int pad, int stride, int in_extent, int out_extent) {
  const int num = in_extent - 1 - k + pad;
  if (num < 0) return 0;
  return std::min(out_extent, num / stride + 1);
}

void check_rank(const char* op, int want, int got) {
  if (want != got) {
    throw DimensionError(std::string(op) + " expects rank-" + std::to_string(want) +
                         " input, got rank-" + std::to_string(got));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
TensorT<T> conv2d_forward(const Conv2DLayerT<T>& layer, const TensorT<T>& x) {
  check_rank("conv2d", 4, x.rank());
  const auto& w = layer.weights;
  if (w.rank() != 4) throw DimensionError("conv2d weights must be rank-4, got " + shape_str(w.shape()));
  const int n = x.extent(0), ic = x.extent(1), h = x.extent(2), wd = x.extent(3);
  const int oc = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  if (w.extent(1) != ic) {
    throw DimensionError("conv2d channel mismatch: weights " + shape_str(w.shape()) +
                         " vs input " + shape_str(x.shape()));
  }
  const int s = layer.stride, p = layer.pad;
  const int oh = (h + 2 * p - kh) / s + 1;
  const int ow = (wd + 2 * p - kw) / s + 1;
  if (h + 2 * p < kh || wd + 2 * p < kw) {
    throw DimensionError("conv2d input " + shape_str(x.shape()) + " smaller than kernel " +
                         shape_str(w.shape()) + " after padding " + std::to_string(p));
  }

  TensorT<T> out({n, oc, oh, ow});
  parallel_for(static_cast<std::int64_t>(n) * oc, [&](std::int64_t plane) {
    const int ni = static_cast<int>(plane / oc);
    const int oci = static_cast<int>(plane % oc);
    std::vector<double> acc(static_cast<std::size_t>(oh) * ow,
                            static_cast<double>(layer.bias[oci]));
    for (int ici = 0; ici < ic; ++ici) {
      const T* xplane = x.data() + ((static_cast<std::int64_t>(ni) * ic + ici) * h) * wd;
      const T* wrow = w.data() + ((static_cast<std::int64_t>(oci) * ic + ici) * kh) * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const double wv = static_cast<double>(wrow[ky * kw + kx]);
          const int ylo = out_lo(ky, p, s), yhi = out_hi(ky, p, s, h, oh);
          const int xlo = out_lo(kx, p, s), xhi = out_hi(kx, p, s, wd, ow);
          for (int oy = ylo; oy < yhi; ++oy) {
            const int iy = oy * s + ky - p;
            const T* xrow = xplane + static_cast<std::int64_t>(iy) * wd;
            double* arow = acc.data() + static_cast<std::int64_t>(oy) * ow;
            int ix = xlo * s + kx - p;
            for (int ox = xlo; ox < xhi; ++ox, ix += s) {
              arow[ox] += wv * static_cast<double>(xrow[ix]);
            }
          }
        }
      }
    }
    T* orow = out.data() + plane * oh * ow;
    for (std::size_t i = 0; i < acc.size(); ++i) orow[i] = static_cast<T>(acc[i]);
  });
  return out;
}

template <typename T>
ConvGradsT<T> conv2d_backward(const Conv2DLayerT<T>& layer, const TensorT<T>& x,
                              const TensorT<T>& grad_out) {
  check_rank("conv2d_backward", 4, x.rank());
  const auto& w = layer.weights;
  const int n = x.extent(0), ic = x.extent(1), h = x.extent(2), wd = x.extent(3);
  const int oc = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  const int s = layer.stride, p = layer.pad;
  const int oh = grad_out.extent(2), ow = grad_out.extent(3);
  if (grad_out.extent(0) != n || grad_out.extent(1) != oc) {
    throw StateError("conv2d_backward grad shape " + shape_str(grad_out.shape()) +
                     " does not match cached forward");
  }

  ConvGradsT<T> grads{TensorT<T>(x.shape()), TensorT<T>(w.shape()), TensorT<T>(layer.bias.shape())};

  // weight and bias grads: one worker per output channel.
  parallel_for(oc, [&](std::int64_t oci) {
    std::vector<double> wacc(static_cast<std::size_t>(ic) * kh * kw, 0.0);
    double bacc = 0.0;
    for (int ni = 0; ni < n; ++ni) {
      const T* gplane = grad_out.data() + ((static_cast<std::int64_t>(ni) * oc + oci) * oh) * ow;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) {
        bacc += static_cast<double>(gplane[i]);
      }
      for (int ici = 0; ici < ic; ++ici) {
        const T* xplane = x.data() + ((static_cast<std::int64_t>(ni) * ic + ici) * h) * wd;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const int ylo = out_lo(ky, p, s), yhi = out_hi(ky, p, s, h, oh);
            const int xlo = out_lo(kx, p, s), xhi = out_hi(kx, p, s, wd, ow);
            double acc = 0.0;
            for (int oy = ylo; oy < yhi; ++oy) {
              const int iy = oy * s + ky - p;
              const T* xrow = xplane + static_cast<std::int64_t>(iy) * wd;
              const T* grow = gplane + static_cast<std::int64_t>(oy) * ow;
              int ix = xlo * s + kx - p;
              for (int ox = xlo; ox < xhi; ++ox, ix += s) {
                acc += static_cast<double>(grow[ox]) * static_cast<double>(xrow[ix]);
              }
            }
            wacc[(static_cast<std::size_t>(ici) * kh + ky) * kw + kx] += acc;
          }
        }
      }
    }
    T* wrow = grads.weights.data() + static_cast<std::int64_t>(oci) * ic * kh * kw;
    for (std::size_t i = 0; i < wacc.size(); ++i) wrow[i] = static_cast<T>(wacc[i]);
    grads.bias[oci] = static_cast<T>(bacc);
  });

  // input grad: one worker per batch item.
  parallel_for(n, [&](std::int64_t ni) {
    std::vector<double> xacc(static_cast<std::size_t>(ic) * h * wd, 0.0);
    for (int oci = 0; oci < oc; ++oci) {
      const T* gplane = grad_out.data() + ((static_cast<std::int64_t>(ni) * oc + oci) * oh) * ow;
      for (int ici = 0; ici < ic; ++ici) {
        double* xplane = xacc.data() + static_cast<std::size_t>(ici) * h * wd;
        const T* wrow = w.data() + ((static_cast<std::int64_t>(oci) * ic + ici) * kh) * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const double wv = static_cast<double>(wrow[ky * kw + kx]);
            const int ylo = out_lo(ky, p, s), yhi = out_hi(ky, p, s, h, oh);
            const int xlo = out_lo(kx, p, s), xhi = out_hi(kx, p, s, wd, ow);
            for (int oy = ylo; oy < yhi; ++oy) {
              const int iy = oy * s + ky - p;
              double* xrow = xplane + static_cast<std::int64_t>(iy) * wd;
              const T* grow = gplane + static_cast<std::int64_t>(oy) * ow;
              int ix = xlo * s + kx - p;
              for (int ox = xlo; ox < xhi; ++ox, ix += s) {
                xrow[ix] += wv * static_cast<double>(grow[ox]);
              }
            }
          }
        }
      }
    }
    T* dst = grads.input.data() + static_cast<std::int64_t>(ni) * ic * h * wd;
    for (std::size_t i = 0; i < xacc.size(); ++i) dst[i] = static_cast<T>(xacc[i]);
  });
  return grads;
}

// ---------------------------------------------------------------------------
// conv3d

template <typename T>
TensorT<T> conv3d_forward(const Conv3DLayerT<T>& layer, const TensorT<T>& x) {
  check_rank("conv3d", 5, x.rank());
  const auto& w = layer.weights;
  if (w.rank() != 5) throw DimensionError("conv3d weights must be rank-5, got " + shape_str(w.shape()));
  const int n = x.extent(0), ic = x.extent(1), t = x.extent(2), h = x.extent(3), wd = x.extent(4);
  const int oc = w.extent(0), kt = w.extent(2), kh = w.extent(3), kw = w.extent(4);
  if (w.extent(1) != ic) {
    throw DimensionError("conv3d channel mismatch: weights " + shape_str(w.shape()) +
                         " vs input " + shape_str(x.shape()));
  }
  const int s = layer.stride, p = layer.pad, pt = layer.temporal_pad, dil = layer.temporal_dilation;
  const int span_t = (kt - 1) * dil + 1;
  if (t + 2 * pt < span_t) {
    throw DimensionError("conv3d temporal extent " + std::to_string(t) + " (+2*" +
                         std::to_string(pt) + " pad) below required minimum " +
                         std::to_string(span_t));
  }
  const int ot = t + 2 * pt - span_t + 1;
  const int oh = (h + 2 * p - kh) / s + 1;
  const int ow = (wd + 2 * p - kw) / s + 1;
  if (h + 2 * p < kh || wd + 2 * p < kw) {
    throw DimensionError("conv3d spatial input " + shape_str(x.shape()) + " smaller than kernel " +
                         shape_str(w.shape()));
  }

  TensorT<T> out({n, oc, ot, oh, ow});
  parallel_for(static_cast<std::int64_t>(n) * oc, [&](std::int64_t plane) {
    const int ni = static_cast<int>(plane / oc);
    const int oci = static_cast<int>(plane % oc);
    std::vector<double> acc(static_cast<std::size_t>(ot) * oh * ow,
                            static_cast<double>(layer.bias[oci]));
    for (int ici = 0; ici < ic; ++ici) {
      const T* xvol = x.data() + ((static_cast<std::int64_t>(ni) * ic + ici) * t) * h * wd;
      const T* wvol = w.data() + ((static_cast<std::int64_t>(oci) * ic + ici) * kt) * kh * kw;
      for (int ktap = 0; ktap < kt; ++ktap) {
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const double wv = static_cast<double>(wvol[(ktap * kh + ky) * kw + kx]);
            if (wv == 0.0) continue;
            const int ylo = out_lo(ky, p, s), yhi = out_hi(ky, p, s, h, oh);
            const int xlo = out_lo(kx, p, s), xhi = out_hi(kx, p, s, wd, ow);
            for (int oti = 0; oti < ot; ++oti) {
              const int it = oti + ktap * dil - pt;
              if (it < 0 || it >= t) continue;
              const T* xframe = xvol + static_cast<std::int64_t>(it) * h * wd;
              double* aframe = acc.data() + static_cast<std::int64_t>(oti) * oh * ow;
              for (int oy = ylo; oy < yhi; ++oy) {
                const int iy = oy * s + ky - p;
                const T* xrow = xframe + static_cast<std::int64_t>(iy) * wd;
                double* arow = aframe + static_cast<std::int64_t>(oy) * ow;
                int ix = xlo * s + kx - p;
                for (int ox = xlo; ox < xhi; ++ox, ix += s) {
                  arow[ox] += wv * static_cast<double>(xrow[ix]);
                }
              }
            }
          }
        }
      }
    }
    T* orow = out.data() + plane * ot * oh * ow;
    for (std::size_t i = 0; i < acc.size(); ++i) orow[i] = static_cast<T>(acc[i]);
  });
  return out;
}

template <typename T>
ConvGradsT<T> conv3d_backward(const Conv3DLayerT<T>& layer, const TensorT<T>& x,
                              const TensorT<T>& grad_out) {
  check_rank("conv3d_backward", 5, x.rank());
  const auto& w = layer.weights;
  const int n = x.extent(0), ic = x.extent(1), t = x.extent(2), h = x.extent(3), wd = x.extent(4);
  const int oc = w.extent(0), kt = w.extent(2), kh = w.extent(3), kw = w.extent(4);
  const int s = layer.stride, p = layer.pad, pt = layer.temporal_pad, dil = layer.temporal_dilation;
  const int ot = grad_out.extent(2), oh = grad_out.extent(3), ow = grad_out.extent(4);
  if (grad_out.extent(0) != n || grad_out.extent(1) != oc) {
    throw StateError("conv3d_backward grad shape " + shape_str(grad_out.shape()) +
                     " does not match cached forward");
  }

  ConvGradsT<T> grads{TensorT<T>(x.shape()), TensorT<T>(w.shape()), TensorT<T>(layer.bias.shape())};

  parallel_for(oc, [&](std::int64_t oci) {
    std::vector<double> wacc(static_cast<std::size_t>(ic) * kt * kh * kw, 0.0);
    double bacc = 0.0;
    for (int ni = 0; ni < n; ++ni) {
      const T* gvol = grad_out.data() + ((static_cast<std::int64_t>(ni) * oc + oci) * ot) * oh * ow;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(ot) * oh * ow; ++i) {
        bacc += static_cast<double>(gvol[i]);
      }
      for (int ici = 0; ici < ic; ++ici) {
        const T* xvol = x.data() + ((static_cast<std::int64_t>(ni) * ic + ici) * t) * h * wd;
        for (int ktap = 0; ktap < kt; ++ktap) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const int ylo = out_lo(ky, p, s), yhi = out_hi(ky, p, s, h, oh);
              const int xlo = out_lo(kx, p, s), xhi = out_hi(kx, p, s, wd, ow);
              double acc = 0.0;
              for (int oti = 0; oti < ot; ++oti) {
                const int it = oti + ktap * dil - pt;
                if (it < 0 || it >= t) continue;
                const T* xframe = xvol + static_cast<std::int64_t>(it) * h * wd;
                const T* gframe = gvol + static_cast<std::int64_t>(oti) * oh * ow;
                for (int oy = ylo; oy < yhi; ++oy) {
                  const int iy = oy * s + ky - p;
                  const T* xrow = xframe + static_cast<std::int64_t>(iy) * wd;
                  const T* grow = gframe + static_cast<std::int64_t>(oy) * ow;
                  int ix = xlo * s + kx - p;
                  for (int ox = xlo; ox < xhi; ++ox, ix += s) {
                    acc += static_cast<double>(grow[ox]) * static_cast<double>(xrow[ix]);
                  }
                }
              }
              wacc[((static_cast<std::size_t>(ici) * kt + ktap) * kh + ky) * kw + kx] += acc;
            }
          }
        }
      }
    }
    T* wrow = grads.weights.data() + static_cast<std::int64_t>(oci) * ic * kt * kh * kw;
    for (std::size_t i = 0; i < wacc.size(); ++i) wrow[i] = static_cast<T>(wacc[i]);
    grads.bias[oci] = static_cast<T>(bacc);
  });

  parallel_for(n, [&](std::int64_t ni) {
    std::vector<double> xacc(static_cast<std::size_t>(ic) * t * h * wd, 0.0);
    for (int oci = 0; oci < oc; ++oci) {
      const T* gvol = grad_out.data() + ((static_cast<std::int64_t>(ni) * oc + oci) * ot) * oh * ow;
      for (int ici = 0; ici < ic; ++ici) {
        double* xvol = xacc.data() + static_cast<std::size_t>(ici) * t * h * wd;
        const T* wvol = w.data() + ((static_cast<std::int64_t>(oci) * ic + ici) * kt) * kh * kw;
        for (int ktap = 0; ktap < kt; ++ktap) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const double wv = static_cast<double>(wvol[(ktap * kh + ky) * kw + kx]);
              if (wv == 0.0) continue;
              const int ylo = out_lo(ky, p, s), yhi = out_hi(ky, p, s, h, oh);
              const int xlo = out_lo(kx, p, s), xhi = out_hi(kx, p, s, wd, ow);
              for (int oti = 0; oti < ot; ++oti) {
                const int it = oti + ktap * dil - pt;
                if (it < 0 || it >= t) continue;
                double* xframe = xvol + static_cast<std::int64_t>(it) * h * wd;
                const T* gframe = gvol + static_cast<std::int64_t>(oti) * oh * ow;
                for (int oy = ylo; oy < yhi; ++oy) {
                  const int iy = oy * s + ky - p;
                  double* xrow = xframe + static_cast<std::int64_t>(iy) * wd;
                  const T* grow = gframe + static_cast<std::int64_t>(oy) * ow;
                  int ix = xlo * s + kx - p;
                  for (int ox = xlo; ox < xhi; ++ox, ix += s) {
                    xrow[ix] += wv * static_cast<double>(grow[ox]);
                  }
                }
              }
            }
          }
        }
      }
    }
    T* dst = grads.input.data() + static_cast<std::int64_t>(ni) * ic * t * h * wd;
    for (std::size_t i = 0; i < xacc.size(); ++i) dst[i] = static_cast<T>(xacc[i]);
  });
  return grads;
}

// ---------------------------------------------------------------------------
// pooling

template <typename T>
TensorT<T> maxpool_forward(int wt, int wh, int ww, const TensorT<T>& x, MaxPoolCacheT<T>* cache) {
  if (x.rank() != 4 && x.rank() != 5) {
    throw DimensionError("maxpool expects rank-4 or rank-5 input, got " + shape_str(x.shape()));
  }
  const bool temporal = x.rank() == 5;
  const int n = x.extent(0), c = x.extent(1);
  const int t = temporal ? x.extent(2) : 1;
  const int h = x.extent(temporal ? 3 : 2), wd = x.extent(temporal ? 4 : 3);
  if (!temporal) wt = 1;
  if (t < wt || h < wh || wd < ww) {
    throw DimensionError("maxpool window " + std::to_string(wt) + "x" + std::to_string(wh) + "x" +
                         std::to_string(ww) + " larger than input " + shape_str(x.shape()));
  }
  const int ot = t / wt, oh = h / wh, ow = wd / ww;
  std::vector<int> out_shape =
      temporal ? std::vector<int>{n, c, ot, oh, ow} : std::vector<int>{n, c, oh, ow};
  TensorT<T> out(out_shape);
  if (cache) {
    cache->in_shape = x.shape();
    cache->argmax.assign(static_cast<std::size_t>(out.size()), 0);
  }

  parallel_for(static_cast<std::int64_t>(n) * c, [&](std::int64_t plane) {
    const T* xvol = x.data() + plane * t * h * wd;
    T* ovol = out.data() + plane * ot * oh * ow;
    for (int oti = 0; oti < ot; ++oti) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          T best{};
          std::int64_t best_off = -1;
          for (int dt = 0; dt < wt; ++dt) {
            for (int dy = 0; dy < wh; ++dy) {
              for (int dx = 0; dx < ww; ++dx) {
                const std::int64_t off =
                    (static_cast<std::int64_t>(oti * wt + dt) * h + (oy * wh + dy)) * wd +
                    (ox * ww + dx);
                const T v = xvol[off];
                if (best_off < 0 || v > best) {
                  best = v;
                  best_off = off;
                }
              }
            }
          }
          const std::int64_t oidx = (static_cast<std::int64_t>(oti) * oh + oy) * ow + ox;
          ovol[oidx] = best;
          if (cache) cache->argmax[static_cast<std::size_t>(plane * ot * oh * ow + oidx)] =
              plane * t * h * wd + best_off;
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> maxpool_backward(const MaxPoolCacheT<T>& cache, const TensorT<T>& grad_out) {
  if (cache.argmax.size() != static_cast<std::size_t>(grad_out.size())) {
    throw StateError("maxpool_backward cache does not match grad shape " +
                     shape_str(grad_out.shape()));
  }
  TensorT<T> grad_in(cache.in_shape);
  for (std::int64_t i = 0; i < grad_out.size(); ++i) {
    grad_in[cache.argmax[static_cast<std::size_t>(i)]] += grad_out[i];
  }
  return grad_in;
}

template <typename T>
TensorT<T> global_avg_pool_forward(const TensorT<T>& x) {
  if (x.rank() < 3) {
    throw DimensionError("global_avg_pool expects rank >= 3, got " + shape_str(x.shape()));
  }
  const int n = x.extent(0), c = x.extent(1);
  std::int64_t rest = 1;
  for (int axis = 2; axis < x.rank(); ++axis) rest *= x.extent(axis);
  TensorT<T> out({n, c});
  parallel_for(static_cast<std::int64_t>(n) * c, [&](std::int64_t plane) {
    const T* src = x.data() + plane * rest;
    double acc = 0.0;
    for (std::int64_t i = 0; i < rest; ++i) acc += static_cast<double>(src[i]);
    out[plane] = static_cast<T>(acc / static_cast<double>(rest));
  });
  return out;
}

template <typename T>
TensorT<T> global_avg_pool_backward(const std::vector<int>& in_shape, const TensorT<T>& grad_out) {
  TensorT<T> grad_in(in_shape);
  std::int64_t rest = 1;
  for (std::size_t axis = 2; axis < in_shape.size(); ++axis) rest *= in_shape[axis];
  for (std::int64_t plane = 0; plane < grad_out.size(); ++plane) {
    const T g = static_cast<T>(static_cast<double>(grad_out[plane]) / static_cast<double>(rest));
    T* dst = grad_in.data() + plane * rest;
    for (std::int64_t i = 0; i < rest; ++i) dst[i] = g;
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// dense

template <typename T>
TensorT<T> dense_forward(const DenseLayerT<T>& layer, const TensorT<T>& x) {
  const auto& w = layer.weights;
  const bool batched = x.rank() == 2;
  if (!batched && x.rank() != 1) {
    throw DimensionError("dense expects rank-1 or rank-2 input, got " + shape_str(x.shape()));
  }
  const int n = batched ? x.extent(0) : 1;
  const int in = batched ? x.extent(1) : x.extent(0);
  const int out_f = w.extent(0);
  if (w.extent(1) != in) {
    throw DimensionError("dense inner extents differ: weights " + shape_str(w.shape()) +
                         " vs input " + shape_str(x.shape()));
  }
  TensorT<T> out(batched ? std::vector<int>{n, out_f} : std::vector<int>{out_f});
  parallel_for(n, [&](std::int64_t ni) {
    const T* xrow = x.data() + ni * in;
    T* orow = out.data() + ni * out_f;
    for (int o = 0; o < out_f; ++o) {
      const T* wrow = w.data() + static_cast<std::int64_t>(o) * in;
      double acc = static_cast<double>(layer.bias[o]);
      for (int i = 0; i < in; ++i) acc += static_cast<double>(wrow[i]) * static_cast<double>(xrow[i]);
      orow[o] = static_cast<T>(acc);
    }
  });
  return out;
}

template <typename T>
DenseGradsT<T> dense_backward(const DenseLayerT<T>& layer, const TensorT<T>& x,
                              const TensorT<T>& grad_out) {
  const auto& w = layer.weights;
  const bool batched = x.rank() == 2;
  const int n = batched ? x.extent(0) : 1;
  const int in = batched ? x.extent(1) : x.extent(0);
  const int out_f = w.extent(0);
  if (grad_out.size() != static_cast<std::int64_t>(n) * out_f) {
    throw StateError("dense_backward grad shape " + shape_str(grad_out.shape()) +
                     " does not match cached forward");
  }
  DenseGradsT<T> grads{TensorT<T>(x.shape()), TensorT<T>(w.shape()), TensorT<T>(layer.bias.shape())};
  parallel_for(n, [&](std::int64_t ni) {
    const T* grow = grad_out.data() + ni * out_f;
    T* xg = grads.input.data() + ni * in;
    for (int i = 0; i < in; ++i) {
      double acc = 0.0;
      for (int o = 0; o < out_f; ++o) {
        acc += static_cast<double>(grow[o]) * static_cast<double>(w[static_cast<std::int64_t>(o) * in + i]);
      }
      xg[i] = static_cast<T>(acc);
    }
  });
  parallel_for(out_f, [&](std::int64_t o) {
    double bacc = 0.0;
    T* wg = grads.weights.data() + o * in;
    std::vector<double> wacc(static_cast<std::size_t>(in), 0.0);
    for (int ni = 0; ni < n; ++ni) {
      const double g = static_cast<double>(grad_out[static_cast<std::int64_t>(ni) * out_f + o]);
      bacc += g;
      const T* xrow = x.data() + static_cast<std::int64_t>(ni) * in;
      for (int i = 0; i < in; ++i) wacc[static_cast<std::size_t>(i)] += g * static_cast<double>(xrow[i]);
    }
    for (int i = 0; i < in; ++i) wg[i] = static_cast<T>(wacc[static_cast<std::size_t>(i)]);
    grads.bias[o] = static_cast<T>(bacc);
  });
  return grads;
}

// ---------------------------------------------------------------------------
// activations and dropout

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad_out) {
  TensorT<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return out;
}

template <typename T>
TensorT<T> softmax_forward(const TensorT<T>& x) {
  const int cols = x.extent(x.rank() - 1);
  const std::int64_t rows = x.size() / cols;
  TensorT<T> out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * cols;
    T* dst = out.data() + r * cols;
    double mx = static_cast<double>(src[0]);
    for (int i = 1; i < cols; ++i) mx = std::max(mx, static_cast<double>(src[i]));
    double sum = 0.0;
    for (int i = 0; i < cols; ++i) sum += std::exp(static_cast<double>(src[i]) - mx);
    for (int i = 0; i < cols; ++i) {
      dst[i] = static_cast<T>(std::exp(static_cast<double>(src[i]) - mx) / sum);
    }
  }
  return out;
}

template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& y, const TensorT<T>& grad_out) {
  const int cols = y.extent(y.rank() - 1);
  const std::int64_t rows = y.size() / cols;
  TensorT<T> out(y.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* yr = y.data() + r * cols;
    const T* gr = grad_out.data() + r * cols;
    T* dst = out.data() + r * cols;
    double dot = 0.0;
    for (int i = 0; i < cols; ++i) dot += static_cast<double>(gr[i]) * static_cast<double>(yr[i]);
    for (int i = 0; i < cols; ++i) {
      dst[i] = static_cast<T>(static_cast<double>(yr[i]) * (static_cast<double>(gr[i]) - dot));
    }
  }
  return out;
}

template <typename T>
TensorT<T> dropout_mask(float rate, std::vector<int> shape, bool train_mode, RngStream& rng) {
  if (rate < 0.0f || rate >= 1.0f) {
    throw DomainError("dropout rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!train_mode || rate == 0.0f) return TensorT<T>::full(std::move(shape), T(1));
  TensorT<T> mask(std::move(shape));
  const T keep = static_cast<T>(1.0 / (1.0 - static_cast<double>(rate)));
  for (std::int64_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.next_float() < rate ? T(0) : keep;
  }
  return mask;
}

template <typename T>
TensorT<T> apply_mask(const TensorT<T>& x, const TensorT<T>& mask) {
  if (!x.same_shape(mask)) {
    throw DimensionError("mask shape " + shape_str(mask.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  TensorT<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm

template <typename T>
TensorT<T> batchnorm_forward(BatchNormLayerT<T>& layer, const TensorT<T>& x, bool train_mode,
                             BatchNormCacheT<T>* cache) {
  if (x.rank() < 2) {
    throw DimensionError("batchnorm expects rank >= 2, got " + shape_str(x.shape()));
  }
  const int n = x.extent(0), c = x.extent(1);
  if (c != layer.scale.extent(0)) {
    throw DimensionError("batchnorm channel mismatch: layer " + shape_str(layer.scale.shape()) +
                         " vs input " + shape_str(x.shape()));
  }
  std::int64_t rest = 1;
  for (int axis = 2; axis < x.rank(); ++axis) rest *= x.extent(axis);
  const std::int64_t count = static_cast<std::int64_t>(n) * rest;

  std::vector<double> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
  if (train_mode) {
    for (int ci = 0; ci < c; ++ci) {
      double sum = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const T* src = x.data() + (static_cast<std::int64_t>(ni) * c + ci) * rest;
        for (std::int64_t i = 0; i < rest; ++i) sum += static_cast<double>(src[i]);
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const T* src = x.data() + (static_cast<std::int64_t>(ni) * c + ci) * rest;
        for (std::int64_t i = 0; i < rest; ++i) {
          const double d = static_cast<double>(src[i]) - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[static_cast<std::size_t>(ci)] = mu;
      inv_std[static_cast<std::size_t>(ci)] = 1.0 / std::sqrt(var + layer.epsilon);
      layer.running_mean[ci] = static_cast<T>((1.0 - layer.momentum) *
                                              static_cast<double>(layer.running_mean[ci]) +
                                              layer.momentum * mu);
      layer.running_var[ci] = static_cast<T>((1.0 - layer.momentum) *
                                             static_cast<double>(layer.running_var[ci]) +
                                             layer.momentum * var);
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mean[static_cast<std::size_t>(ci)] = static_cast<double>(layer.running_mean[ci]);
      inv_std[static_cast<std::size_t>(ci)] =
          1.0 / std::sqrt(static_cast<double>(layer.running_var[ci]) + layer.epsilon);
    }
  }

  TensorT<T> out(x.shape());
  parallel_for(static_cast<std::int64_t>(n) * c, [&](std::int64_t plane) {
    const int ci = static_cast<int>(plane % c);
    const double mu = mean[static_cast<std::size_t>(ci)];
    const double is = inv_std[static_cast<std::size_t>(ci)];
    const double sc = static_cast<double>(layer.scale[ci]);
    const double of = static_cast<double>(layer.offset[ci]);
    const T* src = x.data() + plane * rest;
    T* dst = out.data() + plane * rest;
    for (std::int64_t i = 0; i < rest; ++i) {
      dst[i] = static_cast<T>((static_cast<double>(src[i]) - mu) * is * sc + of);
    }
  });
  if (cache) {
    cache->input = x;
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->train_mode = train_mode;
  }
  return out;
}

template <typename T>
BatchNormGradsT<T> batchnorm_backward(const BatchNormLayerT<T>& layer,
                                      const BatchNormCacheT<T>& cache,
                                      const TensorT<T>& grad_out) {
  const auto& x = cache.input;
  if (!x.same_shape(grad_out)) {
    throw StateError("batchnorm_backward grad shape " + shape_str(grad_out.shape()) +
                     " does not match cached forward " + shape_str(x.shape()));
  }
  const int n = x.extent(0), c = x.extent(1);
  std::int64_t rest = 1;
  for (int axis = 2; axis < x.rank(); ++axis) rest *= x.extent(axis);
  const double count = static_cast<double>(static_cast<std::int64_t>(n) * rest);

  BatchNormGradsT<T> grads{TensorT<T>(x.shape()), TensorT<T>(layer.scale.shape()),
                           TensorT<T>(layer.offset.shape())};
  parallel_for(c, [&](std::int64_t ci) {
    const double mu = cache.mean[static_cast<std::size_t>(ci)];
    const double is = cache.inv_std[static_cast<std::size_t>(ci)];
    const double sc = static_cast<double>(layer.scale[ci]);
    double sum_g = 0.0, sum_gx = 0.0;
    for (int ni = 0; ni < n; ++ni) {
      const std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * rest;
      for (std::int64_t i = 0; i < rest; ++i) {
        const double g = static_cast<double>(grad_out[base + i]);
        const double xh = (static_cast<double>(x[base + i]) - mu) * is;
        sum_g += g;
        sum_gx += g * xh;
      }
    }
    grads.offset[ci] = static_cast<T>(sum_g);
    grads.scale[ci] = static_cast<T>(sum_gx);
    for (int ni = 0; ni < n; ++ni) {
      const std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * rest;
      for (std::int64_t i = 0; i < rest; ++i) {
        const double g = static_cast<double>(grad_out[base + i]);
        if (cache.train_mode) {
          const double xh = (static_cast<double>(x[base + i]) - mu) * is;
          grads.input[base + i] =
              static_cast<T>(sc * is * (g - sum_g / count - xh * sum_gx / count));
        } else {
          grads.input[base + i] = static_cast<T>(sc * is * g);
        }
      }
    }
  });
  return grads;
}

// ---------------------------------------------------------------------------
// lstm

template <typename T>
TensorT<T> lstm_forward(const LSTMLayerT<T>& layer, const TensorT<T>& seq, bool train_mode,
                        RngStream& rng, LSTMCacheT<T>* cache) {
  check_rank("lstm", 2, seq.rank());
  const int steps = seq.extent(0), feat = seq.extent(1);
  const int hidden = layer.hidden_size;
  if (layer.w_input.extent(0) != 4 * hidden || layer.w_input.extent(1) != feat) {
    throw DimensionError("lstm feature mismatch: w_input " + shape_str(layer.w_input.shape()) +
                         " vs sequence " + shape_str(seq.shape()));
  }
  if (layer.w_recurrent.extent(0) != 4 * hidden || layer.w_recurrent.extent(1) != hidden) {
    throw DimensionError("lstm recurrent weights " + shape_str(layer.w_recurrent.shape()) +
                         " inconsistent with hidden size " + std::to_string(hidden));
  }

  TensorT<T> input_mask = dropout_mask<T>(layer.dropout_rate, {feat}, train_mode, rng);
  TensorT<T> recurrent_mask =
      dropout_mask<T>(layer.recurrent_dropout_rate, {hidden}, train_mode, rng);

  TensorT<T> inputs({steps, feat});
  TensorT<T> gates({steps, 4 * hidden});
  TensorT<T> cells({steps, hidden});
  TensorT<T> hiddens({steps, hidden});

  std::vector<double> h_prev(static_cast<std::size_t>(hidden), 0.0);
  std::vector<double> c_prev(static_cast<std::size_t>(hidden), 0.0);
  std::vector<double> pre(static_cast<std::size_t>(4 * hidden));
  for (int t = 0; t < steps; ++t) {
    T* xh = inputs.data() + static_cast<std::int64_t>(t) * feat;
    for (int i = 0; i < feat; ++i) xh[i] = seq[static_cast<std::int64_t>(t) * feat + i] * input_mask[i];
    for (int j = 0; j < 4 * hidden; ++j) {
      double acc = static_cast<double>(layer.bias[j]);
      const T* wx = layer.w_input.data() + static_cast<std::int64_t>(j) * feat;
      for (int i = 0; i < feat; ++i) acc += static_cast<double>(wx[i]) * static_cast<double>(xh[i]);
      const T* wh = layer.w_recurrent.data() + static_cast<std::int64_t>(j) * hidden;
      for (int i = 0; i < hidden; ++i) {
        acc += static_cast<double>(wh[i]) * h_prev[static_cast<std::size_t>(i)] *
               static_cast<double>(recurrent_mask[i]);
      }
      pre[static_cast<std::size_t>(j)] = acc;
    }
    T* gate_row = gates.data() + static_cast<std::int64_t>(t) * 4 * hidden;
    T* cell_row = cells.data() + static_cast<std::int64_t>(t) * hidden;
    T* hid_row = hiddens.data() + static_cast<std::int64_t>(t) * hidden;
    for (int i = 0; i < hidden; ++i) {
      const double ig = sigmoid(pre[static_cast<std::size_t>(i)]);
      const double fg = sigmoid(pre[static_cast<std::size_t>(hidden + i)]);
      const double gg = std::tanh(pre[static_cast<std::size_t>(2 * hidden + i)]);
      const double og = sigmoid(pre[static_cast<std::size_t>(3 * hidden + i)]);
      const double cv = fg * c_prev[static_cast<std::size_t>(i)] + ig * gg;
      const double hv = og * std::tanh(cv);
      gate_row[i] = static_cast<T>(ig);
      gate_row[hidden + i] = static_cast<T>(fg);
      gate_row[2 * hidden + i] = static_cast<T>(gg);
      gate_row[3 * hidden + i] = static_cast<T>(og);
      cell_row[i] = static_cast<T>(cv);
      hid_row[i] = static_cast<T>(hv);
      c_prev[static_cast<std::size_t>(i)] = cv;
      h_prev[static_cast<std::size_t>(i)] = hv;
    }
  }
  if (cache) {
    cache->inputs = std::move(inputs);
    cache->gates = std::move(gates);
    cache->cells = cells;
    cache->hidden = hiddens;
    cache->input_mask = std::move(input_mask);
    cache->recurrent_mask = std::move(recurrent_mask);
  }
  return hiddens;
}

template <typename T>
LSTMGradsT<T> lstm_backward(const LSTMLayerT<T>& layer, const LSTMCacheT<T>& cache,
                            const TensorT<T>& grad_hidden_seq) {
  const int steps = cache.inputs.extent(0), feat = cache.inputs.extent(1);
  const int hidden = layer.hidden_size;
  if (grad_hidden_seq.extent(0) != steps || grad_hidden_seq.extent(1) != hidden) {
    throw StateError("lstm_backward grad shape " + shape_str(grad_hidden_seq.shape()) +
                     " does not match cached forward");
  }
  LSTMGradsT<T> grads{TensorT<T>({steps, feat}), TensorT<T>(layer.w_input.shape()),
                      TensorT<T>(layer.w_recurrent.shape()), TensorT<T>(layer.bias.shape())};
  std::vector<double> dwx(static_cast<std::size_t>(grads.w_input.size()), 0.0);
  std::vector<double> dwh(static_cast<std::size_t>(grads.w_recurrent.size()), 0.0);
  std::vector<double> db(static_cast<std::size_t>(4 * hidden), 0.0);
  std::vector<double> dh_next(static_cast<std::size_t>(hidden), 0.0);
  std::vector<double> dc_next(static_cast<std::size_t>(hidden), 0.0);
  std::vector<double> da(static_cast<std::size_t>(4 * hidden));

  for (int t = steps - 1; t >= 0; --t) {
    const T* gate_row = cache.gates.data() + static_cast<std::int64_t>(t) * 4 * hidden;
    const T* cell_row = cache.cells.data() + static_cast<std::int64_t>(t) * hidden;
    const T* xh = cache.inputs.data() + static_cast<std::int64_t>(t) * feat;
    for (int i = 0; i < hidden; ++i) {
      const double dh = static_cast<double>(grad_hidden_seq[static_cast<std::int64_t>(t) * hidden + i]) +
                        dh_next[static_cast<std::size_t>(i)];
      const double ig = static_cast<double>(gate_row[i]);
      const double fg = static_cast<double>(gate_row[hidden + i]);
      const double gg = static_cast<double>(gate_row[2 * hidden + i]);
      const double og = static_cast<double>(gate_row[3 * hidden + i]);
      const double tc = std::tanh(static_cast<double>(cell_row[i]));
      const double dc = dc_next[static_cast<std::size_t>(i)] + dh * og * (1.0 - tc * tc);
      const double c_prev =
          t > 0 ? static_cast<double>(cache.cells[static_cast<std::int64_t>(t - 1) * hidden + i]) : 0.0;
      da[static_cast<std::size_t>(i)] = dc * gg * ig * (1.0 - ig);
      da[static_cast<std::size_t>(hidden + i)] = dc * c_prev * fg * (1.0 - fg);
      da[static_cast<std::size_t>(2 * hidden + i)] = dc * ig * (1.0 - gg * gg);
      da[static_cast<std::size_t>(3 * hidden + i)] = dh * tc * og * (1.0 - og);
      dc_next[static_cast<std::size_t>(i)] = dc * fg;
    }
    for (int j = 0; j < 4 * hidden; ++j) {
      const double a = da[static_cast<std::size_t>(j)];
      db[static_cast<std::size_t>(j)] += a;
      double* wxrow = dwx.data() + static_cast<std::int64_t>(j) * feat;
      for (int i = 0; i < feat; ++i) wxrow[i] += a * static_cast<double>(xh[i]);
      if (t > 0) {
        double* whrow = dwh.data() + static_cast<std::int64_t>(j) * hidden;
        const T* hp = cache.hidden.data() + static_cast<std::int64_t>(t - 1) * hidden;
        for (int i = 0; i < hidden; ++i) {
          whrow[i] += a * static_cast<double>(hp[i]) * static_cast<double>(cache.recurrent_mask[i]);
        }
      }
    }
    T* gx = grads.input.data() + static_cast<std::int64_t>(t) * feat;
    for (int i = 0; i < feat; ++i) {
      double acc = 0.0;
      for (int j = 0; j < 4 * hidden; ++j) {
        acc += static_cast<double>(layer.w_input[static_cast<std::int64_t>(j) * feat + i]) *
               da[static_cast<std::size_t>(j)];
      }
      gx[i] = static_cast<T>(acc * static_cast<double>(cache.input_mask[i]));
    }
    for (int i = 0; i < hidden; ++i) {
      double acc = 0.0;
      for (int j = 0; j < 4 * hidden; ++j) {
        acc += static_cast<double>(layer.w_recurrent[static_cast<std::int64_t>(j) * hidden + i]) *
               da[static_cast<std::size_t>(j)];
      }
      dh_next[static_cast<std::size_t>(i)] = acc * static_cast<double>(cache.recurrent_mask[i]);
    }
  }
  for (std::int64_t i = 0; i < grads.w_input.size(); ++i)
    grads.w_input[i] = static_cast<T>(dwx[static_cast<std::size_t>(i)]);
  for (std::int64_t i = 0; i < grads.w_recurrent.size(); ++i)
    grads.w_recurrent[i] = static_cast<T>(dwh[static_cast<std::size_t>(i)]);
  for (std::int64_t i = 0; i < grads.bias.size(); ++i)
    grads.bias[i] = static_cast<T>(db[static_cast<std::size_t>(i)]);
  return grads;
}

// ---------------------------------------------------------------------------

#define INFLATENN_INSTANTIATE_LAYERS(T)                                                          \
  template TensorT<T> conv2d_forward<T>(const Conv2DLayerT<T>&, const TensorT<T>&);              \
  template ConvGradsT<T> conv2d_backward<T>(const Conv2DLayerT<T>&, const TensorT<T>&,           \
                                            const TensorT<T>&);                                  \
  template TensorT<T> conv3d_forward<T>(const Conv3DLayerT<T>&, const TensorT<T>&);              \
  template ConvGradsT<T> conv3d_backward<T>(const Conv3DLayerT<T>&, const TensorT<T>&,           \
                                            const TensorT<T>&);                                  \
  template TensorT<T> maxpool_forward<T>(int, int, int, const TensorT<T>&, MaxPoolCacheT<T>*);   \
  template TensorT<T> maxpool_backward<T>(const MaxPoolCacheT<T>&, const TensorT<T>&);           \
  template TensorT<T> global_avg_pool_forward<T>(const TensorT<T>&);                             \
  template TensorT<T> global_avg_pool_backward<T>(const std::vector<int>&, const TensorT<T>&);   \
  template TensorT<T> dense_forward<T>(const DenseLayerT<T>&, const TensorT<T>&);                \
  template DenseGradsT<T> dense_backward<T>(const DenseLayerT<T>&, const TensorT<T>&,            \
                                            const TensorT<T>&);                                  \
  template TensorT<T> relu_forward<T>(const TensorT<T>&);                                        \
  template TensorT<T> relu_backward<T>(const TensorT<T>&, const TensorT<T>&);                    \
  template TensorT<T> softmax_forward<T>(const TensorT<T>&);                                     \
  template TensorT<T> softmax_backward<T>(const TensorT<T>&, const TensorT<T>&);                 \
  template TensorT<T> dropout_mask<T>(float, std::vector<int>, bool, RngStream&);                \
  template TensorT<T> apply_mask<T>(const TensorT<T>&, const TensorT<T>&);                       \
  template TensorT<T> batchnorm_forward<T>(BatchNormLayerT<T>&, const TensorT<T>&, bool,         \
                                           BatchNormCacheT<T>*);                                 \
  template BatchNormGradsT<T> batchnorm_backward<T>(const BatchNormLayerT<T>&,                   \
                                                    const BatchNormCacheT<T>&,                   \
                                                    const TensorT<T>&);                          \
  template TensorT<T> lstm_forward<T>(const LSTMLayerT<T>&, const TensorT<T>&, bool, RngStream&, \
                                      LSTMCacheT<T>*);                                           \
  template LSTMGradsT<T> lstm_backward<T>(const LSTMLayerT<T>&, const LSTMCacheT<T>&,            \
                                          const TensorT<T>&);

INFLATENN_INSTANTIATE_LAYERS(float)
INFLATENN_INSTANTIATE_LAYERS(double)

#undef INFLATENN_INSTANTIATE_LAYERS

}  // namespace inflatenn
