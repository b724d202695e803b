#include "mufasa/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mufasa::nn {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

bool any_grad(const Tape& t, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (t.requires_grad(v)) return true;
  return false;
}

// Accumulates `g` into v's gradient when v participates in differentiation.
template <typename F>
void accumulate(Tape& t, Var v, F&& f) {
  if (t.requires_grad(v)) f(t.grad(v));
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

Var add(Tape& t, Var a, Var b) {
  require(t.shape(a) == t.shape(b), "add: shape mismatch " + shape_string(t.shape(a)) + " vs " +
                                        shape_string(t.shape(b)));
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return t.record(std::move(out), any_grad(t, {a, b}),
                  [a, b](Tape& t, const Tensor&, const std::vector<double>& g) {
                    accumulate(t, a, [&](auto& ga) {
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    });
                    accumulate(t, b, [&](auto& gb) {
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                    });
                  });
}

Var mul(Tape& t, Var a, Var b) {
  require(t.shape(a) == t.shape(b), "mul: shape mismatch");
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return t.record(std::move(out), any_grad(t, {a, b}),
                  [a, b](Tape& t, const Tensor&, const std::vector<double>& g) {
                    const auto& av = t.value(a);
                    const auto& bv = t.value(b);
                    accumulate(t, a, [&](auto& ga) {
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                    });
                    accumulate(t, b, [&](auto& gb) {
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                    });
                  });
}

Var scale(Tape& t, Var a, double s) {
  const auto& av = t.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return t.record(std::move(out), t.requires_grad(a), [a, s](Tape& t, const Tensor&, const std::vector<double>& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var relu(Tape& t, Var a) {
  const auto& av = t.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return t.record(std::move(out), t.requires_grad(a), [a](Tape& t, const Tensor&, const std::vector<double>& g) {
    const auto& av = t.value(a);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) ga[i] += g[i];
  });
}

Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double v : t.value(a).values()) s += v;
  return t.record(Tensor::scalar(s), t.requires_grad(a), [a](Tape& t, const Tensor&, const std::vector<double>& g) {
    auto& ga = t.grad(a);
    for (double& v : ga) v += g[0];
  });
}

Var reshape(Tape& t, Var a, Shape shape) {
  const auto& av = t.value(a);
  require(shape_size(shape) == av.size(), "reshape: size mismatch " + shape_string(av.shape()) +
                                              " -> " + shape_string(shape));
  Tensor out(std::move(shape), std::vector<double>(av.values().begin(), av.values().end()));
  return t.record(std::move(out), t.requires_grad(a), [a](Tape& t, const Tensor&, const std::vector<double>& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var transpose(Tape& t, Var a) {
  const auto& av = t.value(a);
  require(av.rank() == 2, "transpose: rank-2 input required");
  const std::size_t r = av.dim(0), c = av.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return t.record(std::move(out), t.requires_grad(a),
                  [a, r, c](Tape& t, const Tensor&, const std::vector<double>& g) {
                    auto& ga = t.grad(a);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                  });
}

Var linear(Tape& t, Var x, Var w, Var b) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  const auto& bv = t.value(b);
  require(xv.rank() == 2 && wv.rank() == 2 && bv.rank() == 1, "linear: expects x[N,d], W[o,d], b[o]");
  const std::size_t n = xv.dim(0), din = xv.dim(1), dout = wv.dim(0);
  require(wv.dim(1) == din && bv.dim(0) == dout,
          "linear: input width " + std::to_string(din) + " does not match weight " +
              shape_string(wv.shape()));
  Tensor out({n, dout});
  const double* xp = xv.data();
  const double* wp = wv.data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = xp + r * din;
    for (std::size_t o = 0; o < dout; ++o) {
      const double* wr = wp + o * din;
      double s = bv[o];
      for (std::size_t i = 0; i < din; ++i) s += wr[i] * xr[i];
      out[r * dout + o] = s;
    }
  }
  return t.record(std::move(out), any_grad(t, {x, w, b}),
                  [x, w, b, n, din, dout](Tape& t, const Tensor&, const std::vector<double>& g) {
                    const double* xp = t.value(x).data();
                    const double* wp = t.value(w).data();
                    double* gx = t.requires_grad(x) ? t.grad(x).data() : nullptr;
                    double* gw = t.requires_grad(w) ? t.grad(w).data() : nullptr;
                    double* gb = t.requires_grad(b) ? t.grad(b).data() : nullptr;
                    for (std::size_t r = 0; r < n; ++r) {
                      const double* xr = xp + r * din;
                      for (std::size_t o = 0; o < dout; ++o) {
                        const double go = g[r * dout + o];
                        if (go == 0.0) continue;
                        if (gb) gb[o] += go;
                        if (gx) {
                          const double* wr = wp + o * din;
                          double* gxr = gx + r * din;
                          for (std::size_t i = 0; i < din; ++i) gxr[i] += go * wr[i];
                        }
                        if (gw) {
                          double* gwr = gw + o * din;
                          for (std::size_t i = 0; i < din; ++i) gwr[i] += go * xr[i];
                        }
                      }
                    }
                  });
}

Var matmul(Tape& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
          "matmul: shape mismatch " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * bv[p * m + j];
    }
  return t.record(std::move(out), any_grad(t, {a, b}),
                  [a, b, n, k, m](Tape& t, const Tensor&, const std::vector<double>& g) {
                    const auto& av = t.value(a);
                    const auto& bv = t.value(b);
                    accumulate(t, a, [&](auto& ga) {
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          double s = 0.0;
                          for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * bv[p * m + j];
                          ga[i * k + p] += s;
                        }
                    });
                    accumulate(t, b, [&](auto& gb) {
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          const double aip = av[i * k + p];
                          if (aip == 0.0) continue;
                          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * g[i * m + j];
                        }
                    });
                  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1),
          "matmul_nt: shape mismatch " + shape_string(av.shape()) + " x " +
              shape_string(bv.shape()) + "^T");
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(0);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += av[i * k + p] * bv[j * k + p];
      out[i * m + j] = s;
    }
  return t.record(std::move(out), any_grad(t, {a, b}),
                  [a, b, n, k, m](Tape& t, const Tensor&, const std::vector<double>& g) {
                    const auto& av = t.value(a);
                    const auto& bv = t.value(b);
                    double* ga = t.requires_grad(a) ? t.grad(a).data() : nullptr;
                    double* gb = t.requires_grad(b) ? t.grad(b).data() : nullptr;
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < m; ++j) {
                        const double gij = g[i * m + j];
                        if (gij == 0.0) continue;
                        if (ga)
                          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[j * k + p];
                        if (gb)
                          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * av[i * k + p];
                      }
                  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = t.shape(parts[0]).at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool needs_grad = false;
  for (Var p : parts) {
    const auto& s = t.shape(p);
    require(s.size() == 2 && s[0] == n, "concat_cols: inputs must be [N, d_i] with equal N");
    widths.push_back(s[1]);
    total += s[1];
    needs_grad = needs_grad || t.requires_grad(p);
  }
  Tensor out({n, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = t.value(parts[k]);
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    offset += widths[k];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), needs_grad,
                  [inputs, widths, n, total](Tape& t, const Tensor&, const std::vector<double>& g) {
                    std::size_t offset = 0;
                    for (std::size_t k = 0; k < inputs.size(); ++k) {
                      if (t.requires_grad(inputs[k])) {
                        auto& gi = t.grad(inputs[k]);
                        for (std::size_t r = 0; r < n; ++r)
                          for (std::size_t c = 0; c < widths[k]; ++c)
                            gi[r * widths[k] + c] += g[r * total + offset + c];
                      }
                      offset += widths[k];
                    }
                  });
}

Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t end) {
  const auto& av = t.value(a);
  require(av.rank() == 2 && begin <= end && end <= av.dim(1), "slice_cols: bad range");
  const std::size_t n = av.dim(0), d = av.dim(1), w = end - begin;
  Tensor out({n, w});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = av[r * d + begin + c];
  return t.record(std::move(out), t.requires_grad(a),
                  [a, n, d, w, begin](Tape& t, const Tensor&, const std::vector<double>& g) {
                    auto& ga = t.grad(a);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t c = 0; c < w; ++c) ga[r * d + begin + c] += g[r * w + c];
                  });
}

Var gather_rows(Tape& t, Var x, std::span<const std::size_t> rows) {
  const auto& xv = t.value(x);
  require(xv.rank() == 2, "gather_rows: rank-2 input required");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < n, "gather_rows: row index out of range");
    std::copy_n(xv.data() + rows[r] * d, d, out.data() + r * d);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return t.record(std::move(out), t.requires_grad(x),
                  [x, idx, d](Tape& t, const Tensor&, const std::vector<double>& g) {
                    auto& gx = t.grad(x);
                    for (std::size_t r = 0; r < idx.size(); ++r)
                      for (std::size_t c = 0; c < d; ++c) gx[idx[r] * d + c] += g[r * d + c];
                  });
}

Var maxpool_rows(Tape& t, Var x) {
  const auto& xv = t.value(x);
  require(xv.rank() == 2, "maxpool_rows: rank-2 input required");
  require(xv.dim(0) >= 1, "maxpool_rows: empty input");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor out({d});
  std::vector<std::size_t> arg(d, 0);
  for (std::size_t c = 0; c < d; ++c) {
    double best = xv[c];
    for (std::size_t r = 1; r < n; ++r)
      if (xv[r * d + c] > best) {
        best = xv[r * d + c];
        arg[c] = r;
      }
    out[c] = best;
  }
  return t.record(std::move(out), t.requires_grad(x), [x, arg, d](Tape& t, const Tensor&, const std::vector<double>& g) {
    auto& gx = t.grad(x);
    for (std::size_t c = 0; c < d; ++c) gx[arg[c] * d + c] += g[c];
  });
}

Var segment_max(Tape& t, Var x, std::span<const std::size_t> segment, std::size_t num_segments) {
  const auto& xv = t.value(x);
  require(xv.rank() == 2 && segment.size() == xv.dim(0), "segment_max: one segment id per row");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  constexpr std::size_t kEmpty = static_cast<std::size_t>(-1);
  Tensor out({num_segments, d});
  std::vector<std::size_t> arg(num_segments * d, kEmpty);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t s = segment[r];
    require(s < num_segments, "segment_max: segment id out of range");
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t o = s * d + c;
      if (arg[o] == kEmpty || xv[r * d + c] > out[o]) {
        out[o] = xv[r * d + c];
        arg[o] = r;
      }
    }
  }
  return t.record(std::move(out), t.requires_grad(x), [x, arg, d](Tape& t, const Tensor&, const std::vector<double>& g) {
    auto& gx = t.grad(x);
    for (std::size_t o = 0; o < arg.size(); ++o)
      if (arg[o] != kEmpty) gx[arg[o] * d + (o % d)] += g[o];
  });
}

namespace {

struct AxisLayout {
  std::size_t outer, extent, inner;
  std::size_t at(std::size_t o, std::size_t k, std::size_t i) const {
    return (o * extent + k) * inner + i;
  }
};

AxisLayout layout_of(const Shape& s, std::size_t axis) {
  require(axis < s.size(), "axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  AxisLayout l{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

}  // namespace

Var softmax(Tape& t, Var x, std::size_t axis) {
  const auto& xv = t.value(x);
  const AxisLayout L = layout_of(xv.shape(), axis);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t i = 0; i < L.inner; ++i) {
      double mx = xv[L.at(o, 0, i)];
      for (std::size_t k = 1; k < L.extent; ++k) mx = std::max(mx, xv[L.at(o, k, i)]);
      double z = 0.0;
      for (std::size_t k = 0; k < L.extent; ++k) {
        const double e = std::exp(xv[L.at(o, k, i)] - mx);
        out[L.at(o, k, i)] = e;
        z += e;
      }
      for (std::size_t k = 0; k < L.extent; ++k) out[L.at(o, k, i)] /= z;
    }
  return t.record(std::move(out), t.requires_grad(x),
                  [x, L](Tape& t, const Tensor& y, const std::vector<double>& g) {
                    auto& gx = t.grad(x);
                    for (std::size_t o = 0; o < L.outer; ++o)
                      for (std::size_t i = 0; i < L.inner; ++i) {
                        double dot = 0.0;
                        for (std::size_t k = 0; k < L.extent; ++k)
                          dot += g[L.at(o, k, i)] * y[L.at(o, k, i)];
                        for (std::size_t k = 0; k < L.extent; ++k) {
                          const std::size_t j = L.at(o, k, i);
                          gx[j] += y[j] * (g[j] - dot);
                        }
                      }
                  });
}

Var normalize_sum(Tape& t, Var x, std::size_t axis) {
  const auto& xv = t.value(x);
  const AxisLayout L = layout_of(xv.shape(), axis);
  Tensor out(xv.shape());
  std::vector<double> sums(L.outer * L.inner, 0.0);
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t i = 0; i < L.inner; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < L.extent; ++k) s += xv[L.at(o, k, i)];
      sums[o * L.inner + i] = s;
      for (std::size_t k = 0; k < L.extent; ++k) out[L.at(o, k, i)] = xv[L.at(o, k, i)] / s;
    }
  return t.record(std::move(out), t.requires_grad(x),
                  [x, L, sums](Tape& t, const Tensor& y, const std::vector<double>& g) {
                    auto& gx = t.grad(x);
                    for (std::size_t o = 0; o < L.outer; ++o)
                      for (std::size_t i = 0; i < L.inner; ++i) {
                        const double s = sums[o * L.inner + i];
                        double dot = 0.0;
                        for (std::size_t k = 0; k < L.extent; ++k)
                          dot += g[L.at(o, k, i)] * y[L.at(o, k, i)];
                        for (std::size_t k = 0; k < L.extent; ++k) {
                          const std::size_t j = L.at(o, k, i);
                          gx[j] += (g[j] - dot) / s;
                        }
                      }
                  });
}

Var conv2d(Tape& t, Var img, Var w, Var b) {
  const auto& iv = t.value(img);
  const auto& wv = t.value(w);
  const auto& bv = t.value(b);
  require(iv.rank() == 3 && wv.rank() == 4 && bv.rank() == 1,
          "conv2d: expects img[C,H,W], w[O,C,k,k], b[O]");
  const std::size_t cin = iv.dim(0), h = iv.dim(1), wd = iv.dim(2);
  const std::size_t cout = wv.dim(0), k = wv.dim(2);
  require(wv.dim(1) == cin && wv.dim(3) == k && bv.dim(0) == cout,
          "conv2d: weight " + shape_string(wv.shape()) + " does not match image " +
              shape_string(iv.shape()));
  require(k % 2 == 1, "conv2d: kernel size must be odd");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(wd);

  // Visits every (output pixel, input pixel, weight) triple with in-bounds input.
  auto for_each_tap = [=](auto&& body) {
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::ptrdiff_t ky = 0; ky < static_cast<std::ptrdiff_t>(k); ++ky)
          for (std::ptrdiff_t kx = 0; kx < static_cast<std::ptrdiff_t>(k); ++kx) {
            const std::size_t widx = ((co * cin + ci) * k + static_cast<std::size_t>(ky)) * k +
                                     static_cast<std::size_t>(kx);
            const std::ptrdiff_t dy = ky - pad, dx = kx - pad;
            const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
            const std::ptrdiff_t y1 = std::min(H, H - dy);
            const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
            const std::ptrdiff_t x1 = std::min(W, W - dx);
            for (std::ptrdiff_t y = y0; y < y1; ++y) {
              const std::size_t orow = (co * h + static_cast<std::size_t>(y)) * wd;
              const std::size_t irow = (ci * h + static_cast<std::size_t>(y + dy)) * wd;
              body(widx, orow + static_cast<std::size_t>(x0),
                   irow + static_cast<std::size_t>(x0 + dx), static_cast<std::size_t>(x1 - x0));
            }
          }
  };

  Tensor out({cout, h, wd});
  for (std::size_t co = 0; co < cout; ++co)
    std::fill_n(out.data() + co * h * wd, h * wd, bv[co]);
  {
    double* op = out.data();
    const double* ip = iv.data();
    const double* wp = wv.data();
    for_each_tap([&](std::size_t widx, std::size_t o, std::size_t i, std::size_t n) {
      const double wv_ = wp[widx];
      if (wv_ == 0.0) return;
      for (std::size_t x = 0; x < n; ++x) op[o + x] += wv_ * ip[i + x];
    });
  }
  return t.record(
      std::move(out), any_grad(t, {img, w, b}),
      [img, w, b, for_each_tap, cout, h, wd](Tape& t, const Tensor&, const std::vector<double>& g) {
        const double* ip = t.value(img).data();
        const double* wp = t.value(w).data();
        double* gi = t.requires_grad(img) ? t.grad(img).data() : nullptr;
        double* gw = t.requires_grad(w) ? t.grad(w).data() : nullptr;
        if (t.requires_grad(b)) {
          auto& gb = t.grad(b);
          for (std::size_t co = 0; co < cout; ++co) {
            double s = 0.0;
            for (std::size_t j = 0; j < h * wd; ++j) s += g[co * h * wd + j];
            gb[co] += s;
          }
        }
        if (!gi && !gw) return;
        for_each_tap([&](std::size_t widx, std::size_t o, std::size_t i, std::size_t n) {
          if (gw) {
            double s = 0.0;
            for (std::size_t x = 0; x < n; ++x) s += g[o + x] * ip[i + x];
            gw[widx] += s;
          }
          if (gi) {
            const double wv_ = wp[widx];
            for (std::size_t x = 0; x < n; ++x) gi[i + x] += wv_ * g[o + x];
          }
        });
      });
}

Var scatter_to_grid(Tape& t, Var rows, std::span<const std::int64_t> cells, std::size_t height,
                    std::size_t width) {
  const auto& rv = t.value(rows);
  require(rv.rank() == 2 && rv.dim(0) == cells.size(), "scatter_to_grid: one cell per row");
  const std::size_t k = rv.dim(0), c = rv.dim(1), hw = height * width;
  Tensor out({c, height, width});
  for (std::size_t r = 0; r < k; ++r) {
    if (cells[r] < 0) continue;
    const auto cell = static_cast<std::size_t>(cells[r]);
    require(cell < hw, "scatter_to_grid: cell out of range");
    for (std::size_t ch = 0; ch < c; ++ch) out[ch * hw + cell] += rv[r * c + ch];
  }
  std::vector<std::int64_t> idx(cells.begin(), cells.end());
  return t.record(std::move(out), t.requires_grad(rows),
                  [rows, idx, c, hw](Tape& t, const Tensor&, const std::vector<double>& g) {
                    auto& gr = t.grad(rows);
                    for (std::size_t r = 0; r < idx.size(); ++r) {
                      if (idx[r] < 0) continue;
                      const auto cell = static_cast<std::size_t>(idx[r]);
                      for (std::size_t ch = 0; ch < c; ++ch) gr[r * c + ch] += g[ch * hw + cell];
                    }
                  });
}

Var gather_from_grid(Tape& t, Var img, std::span<const std::int64_t> cells) {
  const auto& iv = t.value(img);
  require(iv.rank() == 3, "gather_from_grid: expects img[C,H,W]");
  const std::size_t c = iv.dim(0), hw = iv.dim(1) * iv.dim(2), n = cells.size();
  Tensor out({n, c});
  for (std::size_t r = 0; r < n; ++r) {
    if (cells[r] < 0) continue;
    const auto cell = static_cast<std::size_t>(cells[r]);
    require(cell < hw, "gather_from_grid: cell out of range");
    for (std::size_t ch = 0; ch < c; ++ch) out[r * c + ch] = iv[ch * hw + cell];
  }
  std::vector<std::int64_t> idx(cells.begin(), cells.end());
  return t.record(std::move(out), t.requires_grad(img),
                  [img, idx, c, hw](Tape& t, const Tensor&, const std::vector<double>& g) {
                    auto& gi = t.grad(img);
                    for (std::size_t r = 0; r < idx.size(); ++r) {
                      if (idx[r] < 0) continue;
                      const auto cell = static_cast<std::size_t>(idx[r]);
                      for (std::size_t ch = 0; ch < c; ++ch) gi[ch * hw + cell] += g[r * c + ch];
                    }
                  });
}

Var sigmoid_focal_loss(Tape& t, Var logits, std::span<const double> targets,
                       std::span<const double> weights, double alpha, double gamma) {
  const auto& xv = t.value(logits);
  const std::size_t n = xv.size();
  require(targets.size() == n && weights.size() == n, "sigmoid_focal_loss: size mismatch");
  double total = 0.0;
  std::vector<double> dloss(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0) continue;
    const double x = xv[i];
    const double p = sigmoid(x);
    const double log_p = -softplus(-x);
    const double log_q = -softplus(x);
    if (targets[i] > 0.5) {
      const double q = 1.0 - p;
      total += weights[i] * -alpha * std::pow(q, gamma) * log_p;
      dloss[i] = weights[i] * alpha * (gamma * std::pow(q, gamma) * p * log_p - std::pow(q, gamma + 1.0));
    } else {
      total += weights[i] * -(1.0 - alpha) * std::pow(p, gamma) * log_q;
      dloss[i] = weights[i] * (1.0 - alpha) *
                 (-gamma * std::pow(p, gamma) * (1.0 - p) * log_q + std::pow(p, gamma + 1.0));
    }
  }
  return t.record(Tensor::scalar(total), t.requires_grad(logits),
                  [logits, dloss](Tape& t, const Tensor&, const std::vector<double>& g) {
                    auto& gx = t.grad(logits);
                    for (std::size_t i = 0; i < dloss.size(); ++i) gx[i] += g[0] * dloss[i];
                  });
}

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels,
                          std::span<const double> weights) {
  const auto& xv = t.value(logits);
  require(xv.rank() == 2 && labels.size() == xv.dim(0) && weights.size() == xv.dim(0),
          "softmax_cross_entropy: expects logits[N,K] with N labels and weights");
  const std::size_t n = xv.dim(0), k = xv.dim(1);
  double total = 0.0;
  std::vector<double> dloss(n * k, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    if (weights[r] == 0.0) continue;
    require(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < k,
            "softmax_cross_entropy: label out of range");
    const double* row = xv.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += weights[r] * (lse - row[labels[r]]);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(row[j] - lse);
      dloss[r * k + j] = weights[r] * (p - (static_cast<int>(j) == labels[r] ? 1.0 : 0.0));
    }
  }
  return t.record(Tensor::scalar(total), t.requires_grad(logits),
                  [logits, dloss](Tape& t, const Tensor&, const std::vector<double>& g) {
                    auto& gx = t.grad(logits);
                    for (std::size_t i = 0; i < dloss.size(); ++i) gx[i] += g[0] * dloss[i];
                  });
}

Var smooth_l1(Tape& t, Var pred, const Tensor& target, std::span<const double> row_weights,
              double beta) {
  const auto& pv = t.value(pred);
  require(pv.shape() == target.shape() && pv.rank() == 2 && row_weights.size() == pv.dim(0),
          "smooth_l1: shape mismatch");
  const std::size_t n = pv.dim(0), d = pv.dim(1);
  double total = 0.0;
  std::vector<double> dloss(n * d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    if (row_weights[r] == 0.0) continue;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = pv[r * d + c] - target[r * d + c];
      const double a = std::abs(diff);
      if (a < beta) {
        total += row_weights[r] * 0.5 * diff * diff / beta;
        dloss[r * d + c] = row_weights[r] * diff / beta;
      } else {
        total += row_weights[r] * (a - 0.5 * beta);
        dloss[r * d + c] = row_weights[r] * (diff > 0.0 ? 1.0 : -1.0);
      }
    }
  }
  return t.record(Tensor::scalar(total), t.requires_grad(pred),
                  [pred, dloss](Tape& t, const Tensor&, const std::vector<double>& g) {
                    auto& gx = t.grad(pred);
                    for (std::size_t i = 0; i < dloss.size(); ++i) gx[i] += g[0] * dloss[i];
                  });
}

Var bce_with_logits(Tape& t, Var logits, std::span<const double> targets,
                    std::span<const double> weights) {
  const auto& xv = t.value(logits);
  const std::size_t n = xv.size();
  require(targets.size() == n && weights.size() == n, "bce_with_logits: size mismatch");
  double total = 0.0;
  std::vector<double> dloss(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0) continue;
    total += weights[i] * (softplus(xv[i]) - targets[i] * xv[i]);
    dloss[i] = weights[i] * (sigmoid(xv[i]) - targets[i]);
  }
  return t.record(Tensor::scalar(total), t.requires_grad(logits),
                  [logits, dloss](Tape& t, const Tensor&, const std::vector<double>& g) {
                    auto& gx = t.grad(logits);
                    for (std::size_t i = 0; i < dloss.size(); ++i) gx[i] += g[0] * dloss[i];
                  });
}

}  // namespace mufasa::nn
