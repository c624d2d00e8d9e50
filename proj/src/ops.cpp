#include <algorithm>
#include <cmath>

#include "tttlab/autodiff.hpp"
#include "tttlab/errors.hpp"

namespace tttlab {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

void require_rank2(const Tensor& a, const char* op) {
    if (a.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
    }
}

// Precomputed source indices/weights for one axis of an align-corners resize.
struct AxisMap {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;
};

AxisMap axis_map(std::size_t in, std::size_t out) {
    AxisMap m;
    m.lo.resize(out);
    m.hi.resize(out);
    m.frac.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
        const double src = (out > 1 && in > 1)
                               ? static_cast<double>(o) * static_cast<double>(in - 1) /
                                     static_cast<double>(out - 1)
                               : 0.0;
        auto lo = static_cast<std::size_t>(std::floor(src));
        lo = std::min(lo, in - 1);
        m.lo[o] = lo;
        m.hi[o] = std::min(lo + 1, in - 1);
        m.frac[o] = src - static_cast<double>(lo);
    }
    return m;
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_same_shape(av, bv, "add");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return t.record(std::move(out), {a, b},
                    [](const Tensor& g, std::span<Tensor* const> in) {
                        for (Tensor* d : in) {
                            if (!d) continue;
                            for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
                        }
                    },
                    "add");
}

Var mul(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_same_shape(av, bv, "mul");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return t.record(std::move(out), {a, b},
                    [av, bv](const Tensor& g, std::span<Tensor* const> in) {
                        if (in[0]) for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * bv[i];
                        if (in[1]) for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * av[i];
                    },
                    "mul");
}

Var scale(Tape& t, Var a, double factor) {
    Tensor out = t.value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
    return t.record(std::move(out), {a},
                    [factor](const Tensor& g, std::span<Tensor* const> in) {
                        for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * factor;
                    },
                    "scale");
}

Var sum(Tape& t, Var a) {
    double s = 0.0;
    for (double v : t.value(a).data()) s += v;
    return t.record(Tensor::scalar(s), {a},
                    [](const Tensor& g, std::span<Tensor* const> in) {
                        const double gs = g[0];
                        for (double& d : in[0]->data()) d += gs;
                    },
                    "sum");
}

Var tanh(Tape& t, Var a) {
    Tensor out = t.value(a);
    for (double& v : out.data()) v = std::tanh(v);
    Tensor y = out;
    return t.record(std::move(out), {a},
                    [y = std::move(y)](const Tensor& g, std::span<Tensor* const> in) {
                        for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * (1.0 - y[i] * y[i]);
                    },
                    "tanh");
}

Var matmul(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_rank2(av, "matmul");
    require_rank2(bv, "matmul");
    const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
    if (bv.dim(0) != k) {
        throw ShapeError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
    }
    Tensor out({n, m});
    const double* A = av.data().data();
    const double* B = bv.data().data();
    double* C = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = C + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = B + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
        }
    }
    const bool need_a = t.requires_grad(a);
    const bool need_b = t.requires_grad(b);
    // Only keep copies of the operands the backward pass actually reads.
    Tensor a_keep = need_b ? av : Tensor();
    Tensor b_keep = need_a ? bv : Tensor();
    return t.record(
        std::move(out), {a, b},
        [n, k, m, a_keep = std::move(a_keep), b_keep = std::move(b_keep)](
            const Tensor& g, std::span<Tensor* const> in) {
            const double* G = g.data().data();
            if (in[0]) {
                const double* B = b_keep.data().data();
                double* dA = in[0]->data().data();
                for (std::size_t i = 0; i < n; ++i) {
                    const double* grow = G + i * m;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* brow = B + p * m;
                        double s = 0.0;
                        for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
                        dA[i * k + p] += s;
                    }
                }
            }
            if (in[1]) {
                const double* A = a_keep.data().data();
                double* dB = in[1]->data().data();
                for (std::size_t i = 0; i < n; ++i) {
                    const double* grow = G + i * m;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = A[i * k + p];
                        if (aip == 0.0) continue;
                        double* drow = dB + p * m;
                        for (std::size_t j = 0; j < m; ++j) drow[j] += aip * grow[j];
                    }
                }
            }
        },
        "matmul");
}

Var add_bias(Tape& t, Var a, Var bias) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(bias);
    require_rank2(av, "add_bias");
    const std::size_t n = av.dim(0), m = av.dim(1);
    if (bv.size() != m) {
        throw ShapeError("add_bias: bias of " + std::to_string(bv.size()) + " for " +
                         std::to_string(m) + " columns");
    }
    Tensor out = av;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bv[j];
    return t.record(std::move(out), {a, bias},
                    [n, m](const Tensor& g, std::span<Tensor* const> in) {
                        if (in[0]) for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                        if (in[1]) {
                            for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < m; ++j) (*in[1])[j] += g[i * m + j];
                        }
                    },
                    "add_bias");
}

Var affine(Tape& t, Var x, Var weight, Var bias) { return add_bias(t, matmul(t, x, weight), bias); }

Var upsample_bilinear(Tape& t, Var x, const GridResize& grid) {
    const Tensor& xv = t.value(x);
    require_rank2(xv, "upsample_bilinear");
    if (grid.in_h == 0 || grid.in_w == 0 || grid.out_h == 0 || grid.out_w == 0 ||
        xv.dim(0) != grid.batch * grid.in_h * grid.in_w) {
        throw ShapeError("upsample_bilinear: " + std::to_string(xv.dim(0)) +
                         " rows do not match the grid description");
    }
    const std::size_t c = xv.dim(1);
    AxisMap ym = axis_map(grid.in_h, grid.out_h);
    AxisMap xm = axis_map(grid.in_w, grid.out_w);
    const std::size_t in_px = grid.in_h * grid.in_w;
    const std::size_t out_px = grid.out_h * grid.out_w;
    Tensor out({grid.batch * out_px, c});
    for (std::size_t b = 0; b < grid.batch; ++b) {
        for (std::size_t oy = 0; oy < grid.out_h; ++oy) {
            const double wy = ym.frac[oy];
            for (std::size_t ox = 0; ox < grid.out_w; ++ox) {
                const double wx = xm.frac[ox];
                const double* s00 = &xv.data()[(b * in_px + ym.lo[oy] * grid.in_w + xm.lo[ox]) * c];
                const double* s01 = &xv.data()[(b * in_px + ym.lo[oy] * grid.in_w + xm.hi[ox]) * c];
                const double* s10 = &xv.data()[(b * in_px + ym.hi[oy] * grid.in_w + xm.lo[ox]) * c];
                const double* s11 = &xv.data()[(b * in_px + ym.hi[oy] * grid.in_w + xm.hi[ox]) * c];
                double* o = &out.data()[(b * out_px + oy * grid.out_w + ox) * c];
                const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
                const double w10 = wy * (1 - wx), w11 = wy * wx;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    o[ch] = w00 * s00[ch] + w01 * s01[ch] + w10 * s10[ch] + w11 * s11[ch];
                }
            }
        }
    }
    return t.record(
        std::move(out), {x},
        [grid, c, ym = std::move(ym), xm = std::move(xm), in_px, out_px](
            const Tensor& g, std::span<Tensor* const> in) {
            double* d = in[0]->data().data();
            for (std::size_t b = 0; b < grid.batch; ++b) {
                for (std::size_t oy = 0; oy < grid.out_h; ++oy) {
                    const double wy = ym.frac[oy];
                    for (std::size_t ox = 0; ox < grid.out_w; ++ox) {
                        const double wx = xm.frac[ox];
                        const double* go = &g.data()[(b * out_px + oy * grid.out_w + ox) * c];
                        double* d00 = d + (b * in_px + ym.lo[oy] * grid.in_w + xm.lo[ox]) * c;
                        double* d01 = d + (b * in_px + ym.lo[oy] * grid.in_w + xm.hi[ox]) * c;
                        double* d10 = d + (b * in_px + ym.hi[oy] * grid.in_w + xm.lo[ox]) * c;
                        double* d11 = d + (b * in_px + ym.hi[oy] * grid.in_w + xm.hi[ox]) * c;
                        const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
                        const double w10 = wy * (1 - wx), w11 = wy * wx;
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            d00[ch] += w00 * go[ch];
                            d01[ch] += w01 * go[ch];
                            d10[ch] += w10 * go[ch];
                            d11[ch] += w11 * go[ch];
                        }
                    }
                }
            }
        },
        "upsample_bilinear");
}

Var slice_columns(Tape& t, Var x, std::size_t begin, std::size_t count) {
    const Tensor& xv = t.value(x);
    require_rank2(xv, "slice_columns");
    const std::size_t n = xv.dim(0), c = xv.dim(1);
    if (begin + count > c || count == 0) {
        throw ShapeError("slice_columns: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") of " + std::to_string(c) + " columns");
    }
    Tensor out({n, count});
    for (std::size_t r = 0; r < n; ++r)
        std::copy_n(&xv.data()[r * c + begin], count, &out.data()[r * count]);
    return t.record(std::move(out), {x},
                    [n, c, begin, count](const Tensor& g, std::span<Tensor* const> in) {
                        double* d = in[0]->data().data();
                        for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t j = 0; j < count; ++j) d[r * c + begin + j] += g[r * count + j];
                    },
                    "slice_columns");
}

Var group_mean(Tape& t, Var x, std::size_t group) {
    const Tensor& xv = t.value(x);
    require_rank2(xv, "group_mean");
    if (group == 0 || xv.dim(0) % group != 0) {
        throw ShapeError("group_mean: " + std::to_string(xv.dim(0)) + " rows not divisible by " +
                         std::to_string(group));
    }
    const std::size_t groups = xv.dim(0) / group, c = xv.dim(1);
    const double inv = 1.0 / static_cast<double>(group);
    Tensor out({groups, c});
    for (std::size_t gi = 0; gi < groups; ++gi) {
        for (std::size_t r = 0; r < group; ++r) {
            const double* row = &xv.data()[(gi * group + r) * c];
            for (std::size_t ch = 0; ch < c; ++ch) out[gi * c + ch] += row[ch];
        }
        for (std::size_t ch = 0; ch < c; ++ch) out[gi * c + ch] *= inv;
    }
    return t.record(std::move(out), {x},
                    [groups, group, c, inv](const Tensor& g, std::span<Tensor* const> in) {
                        double* d = in[0]->data().data();
                        for (std::size_t gi = 0; gi < groups; ++gi)
                            for (std::size_t r = 0; r < group; ++r)
                                for (std::size_t ch = 0; ch < c; ++ch)
                                    d[(gi * group + r) * c + ch] += g[gi * c + ch] * inv;
                    },
                    "group_mean");
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = t.value(x);
    const Tensor& gv = t.value(gamma);
    const Tensor& bv = t.value(beta);
    require_rank2(xv, "layer_norm");
    const std::size_t n = xv.dim(0), c = xv.dim(1);
    if (gv.size() != c || bv.size() != c) throw ShapeError("layer_norm: scale/shift size mismatch");
    Tensor xhat({n, c});
    std::vector<double> inv_std(n);
    Tensor out({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += xv[i * c + j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = xv[i * c + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (xv[i * c + j] - mean) * inv_std[i];
            out[i * c + j] = gv[j] * xhat[i * c + j] + bv[j];
        }
    }
    Tensor gamma_keep = gv;
    return t.record(
        std::move(out), {x, gamma, beta},
        [n, c, xhat = std::move(xhat), inv_std = std::move(inv_std), gamma_keep = std::move(gamma_keep)](
            const Tensor& g, std::span<Tensor* const> in) {
            if (in[1]) for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) (*in[1])[j] += g[i * c + j] * xhat[i * c + j];
            if (in[2]) for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) (*in[2])[j] += g[i * c + j];
            if (!in[0]) return;
            const double cn = static_cast<double>(c);
            for (std::size_t i = 0; i < n; ++i) {
                double s1 = 0.0, s2 = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = g[i * c + j] * gamma_keep[j];
                    s1 += dxh;
                    s2 += dxh * xhat[i * c + j];
                }
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = g[i * c + j] * gamma_keep[j];
                    (*in[0])[i * c + j] += inv_std[i] / cn * (cn * dxh - s1 - xhat[i * c + j] * s2);
                }
            }
        },
        "layer_norm");
}

Var weighted_squared_error(Tape& t, Var pred, const Tensor& target, const Tensor& weight) {
    const Tensor& pv = t.value(pred);
    if (pv.size() != target.size() || pv.size() != weight.size()) {
        throw ShapeError("weighted_squared_error: prediction " + shape_string(pv.shape()) +
                         ", target " + shape_string(target.shape()) + ", weight " +
                         shape_string(weight.shape()));
    }
    std::vector<double> resid(pv.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        if (weight[i] == 0.0) continue;
        resid[i] = pv[i] - target[i];
        loss += weight[i] * resid[i] * resid[i];
    }
    Tensor w = weight;
    return t.record(Tensor::scalar(loss), {pred},
                    [resid = std::move(resid), w = std::move(w)](const Tensor& g, std::span<Tensor* const> in) {
                        const double gs = g[0];
                        for (std::size_t i = 0; i < resid.size(); ++i) {
                            (*in[0])[i] += gs * 2.0 * w[i] * resid[i];
                        }
                    },
                    "weighted_squared_error");
}

Var weighted_softmax_cross_entropy(Tape& t, Var logits, std::span<const std::size_t> classes,
                                   std::span<const double> row_weight) {
    const Tensor& lv = t.value(logits);
    require_rank2(lv, "softmax_cross_entropy");
    const std::size_t n = lv.dim(0), k = lv.dim(1);
    if (classes.size() != n || row_weight.size() != n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(n) + " rows, " +
                         std::to_string(classes.size()) + " targets, " +
                         std::to_string(row_weight.size()) + " weights");
    }
    // Softmax probabilities minus the one-hot target, pre-scaled by the row weight.
    Tensor dlogits({n, k});
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double w = row_weight[r];
        if (w == 0.0) continue;
        if (classes[r] >= k) {
            throw ShapeError("softmax_cross_entropy: class " + std::to_string(classes[r]) +
                             " out of range for " + std::to_string(k) + " logits");
        }
        const double* row = &lv.data()[r * k];
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        loss += w * (lse - row[classes[r]]);
        for (std::size_t j = 0; j < k; ++j) dlogits[r * k + j] = w * std::exp(row[j] - lse);
        dlogits[r * k + classes[r]] -= w;
    }
    return t.record(Tensor::scalar(loss), {logits},
                    [dlogits = std::move(dlogits)](const Tensor& g, std::span<Tensor* const> in) {
                        const double gs = g[0];
                        for (std::size_t i = 0; i < dlogits.size(); ++i) (*in[0])[i] += gs * dlogits[i];
                    },
                    "softmax_cross_entropy");
}

Var weighted_bce_with_logits(Tape& t, Var logits, const Tensor& target, const Tensor& weight) {
    const Tensor& lv = t.value(logits);
    if (lv.size() != target.size() || lv.size() != weight.size()) {
        throw ShapeError("bce_with_logits: logits " + shape_string(lv.shape()) + ", target " +
                         shape_string(target.shape()));
    }
    std::vector<double> dl(lv.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < lv.size(); ++i) {
        if (weight[i] == 0.0) continue;
        const double x = lv[i], y = target[i];
        loss += weight[i] * (std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x))));
        dl[i] = weight[i] * (sigmoid(x) - y);
    }
    return t.record(Tensor::scalar(loss), {logits},
                    [dl = std::move(dl)](const Tensor& g, std::span<Tensor* const> in) {
                        const double gs = g[0];
                        for (std::size_t i = 0; i < dl.size(); ++i) (*in[0])[i] += gs * dl[i];
                    },
                    "bce_with_logits");
}

Var mse(Tape& t, Var pred, const Tensor& target) {
    const std::size_t n = t.value(pred).size();
    Tensor w(t.value(pred).shape());
    w.fill(1.0 / static_cast<double>(n));
    return weighted_squared_error(t, pred, target, w);
}

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const std::size_t> classes) {
    const std::size_t n = t.value(logits).rank() == 2 ? t.value(logits).dim(0) : 0;
    std::vector<double> w(n, n ? 1.0 / static_cast<double>(n) : 0.0);
    return weighted_softmax_cross_entropy(t, logits, classes, w);
}

Var bce_with_logits(Tape& t, Var logits, const Tensor& target) {
    const std::size_t n = t.value(logits).size();
    Tensor w(t.value(logits).shape());
    w.fill(1.0 / static_cast<double>(n));
    return weighted_bce_with_logits(t, logits, target, w);
}

}  // namespace tttlab
