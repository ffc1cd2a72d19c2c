// Copyright (C) 2026 The UniParser Authors
// SPDX-License-Identifier: Apache-2.0

#include "uniparser/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "uniparser/error.hpp"

namespace uniparser::nn {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

void expect(bool ok, const char* op, const std::string& what) {
    if (!ok) throw Error(ErrorCode::BadShape, std::string(op) + ": " + what);
}

Tensor& g0(Node& n) { return n.parents[0]->grad_buffer(); }
Tensor& g1(Node& n) { return n.parents[1]->grad_buffer(); }
bool needs(Node& n, std::size_t i) { return i < n.parents.size() && n.parents[i]->requires_grad; }

// Column matrix (C·k·k)×(Ho·Wo) for a C×H×W input.
void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, double* col) {
    const int plane = ho * wo;
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + static_cast<std::size_t>((ch * k + ky) * k + kx) * plane;
                const double* src = x + static_cast<std::size_t>(ch) * h * w;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    double* dst = row + oy * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, 0.0);
                        continue;
                    }
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < w) ? src[iy * w + ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* col, int c, int h, int w, int k, int stride, int pad, int ho, int wo, double* x) {
    const int plane = ho * wo;
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + static_cast<std::size_t>((ch * k + ky) * k + kx) * plane;
                double* dst = x + static_cast<std::size_t>(ch) * h * w;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[iy * w + ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

struct Lerp {
    int i0, i1;
    double w1;
};

// Half-pixel source positions; negative positions clamp to the first cell.
std::vector<Lerp> lerp_table(int in, int out) {
    std::vector<Lerp> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        t[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
    }
    return t;
}

}  // namespace

Var add(const Var& a, const Var& b) {
    expect(a.shape() == b.shape(), "add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& n) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (!needs(n, p)) continue;
            auto& g = n.parents[p]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.values()) v *= s;
    return make_result(std::move(out), {a}, [s](Node& n) {
        auto& g = g0(n);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
}

Var sum(const Var& a) {
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    return make_result(Tensor({1}, total), {a}, [](Node& n) {
        auto& g = g0(n);
        for (auto& v : g.values()) v += n.grad[0];
    });
}

Var mean(const Var& a) {
    const auto count = static_cast<double>(a.value().size());
    expect(count > 0, "mean", "empty input");
    return scale(sum(a), 1.0 / count);
}

Var relu(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.values()) v = v > 0 ? v : 0.0;
    return make_result(std::move(out), {a}, [](Node& n) {
        auto& g = g0(n);
        const auto& x = n.parents[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += x[i] > 0 ? n.grad[i] : 0.0;
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
    return make_result(std::move(out), {a}, [](Node& n) {
        auto& g = g0(n);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = n.value[i];
            g[i] += n.grad[i] * s * (1.0 - s);
        }
    });
}

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_result(std::move(out), {a}, [](Node& n) {
        auto& g = g0(n);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
    expect(x.value().rank() == 3, "conv2d", "input must be C×H×W, got " + shape_str(x.shape()));
    expect(weight.value().rank() == 4, "conv2d", "weight must be O×C×k×k");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int o = weight.dim(0), k = weight.dim(2);
    expect(weight.dim(1) == c && weight.dim(3) == k, "conv2d",
           "weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
    expect(!bias.defined() || bias.value().size() == static_cast<std::size_t>(o), "conv2d", "bias size");
    const int ho = (h + 2 * padding - k) / stride + 1;
    const int wo = (w + 2 * padding - k) / stride + 1;
    expect(ho > 0 && wo > 0, "conv2d", "output would be empty for input " + shape_str(x.shape()));
    const int ckk = c * k * k;
    const int plane = ho * wo;
    const bool pointwise = (k == 1 && stride == 1 && padding == 0);

    Tensor col;
    if (!pointwise) {
        col = Tensor({ckk, plane});
        im2col(x.value().data(), c, h, w, k, stride, padding, ho, wo, col.data());
    }
    const double* colp = pointwise ? x.value().data() : col.data();

    Tensor out({o, ho, wo});
    MapRM y(out.data(), o, plane);
    y.noalias() = CMapRM(weight.value().data(), o, ckk) * CMapRM(colp, ckk, plane);
    if (bias.defined()) {
        for (int oc = 0; oc < o; ++oc) y.row(oc).array() += bias.value()[static_cast<std::size_t>(oc)];
    }

    std::vector<Var> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_result(std::move(out), std::move(parents),
                       [col = std::move(col), pointwise, c, h, w, k, o, stride, padding, ho, wo, ckk,
                        plane](Node& n) {
                           CMapRM dy(n.grad.data(), o, plane);
                           const double* colp = pointwise ? n.parents[0]->value.data() : col.data();
                           if (needs(n, 1)) {
                               MapRM dw(g1(n).data(), o, ckk);
                               dw.noalias() += dy * CMapRM(colp, ckk, plane).transpose();
                           }
                           if (needs(n, 2)) {
                               auto& db = n.parents[2]->grad_buffer();
                               for (int oc = 0; oc < o; ++oc) db[static_cast<std::size_t>(oc)] += dy.row(oc).sum();
                           }
                           if (needs(n, 0)) {
                               CMapRM wm(n.parents[1]->value.data(), o, ckk);
                               if (pointwise) {
                                   MapRM dx(g0(n).data(), ckk, plane);
                                   dx.noalias() += wm.transpose() * dy;
                               } else {
                                   MatRM dcol = wm.transpose() * dy;
                                   col2im(dcol.data(), c, h, w, k, stride, padding, ho, wo, g0(n).data());
                               }
                           }
                       });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    expect(x.value().rank() == 3, "group_norm", "input must be C×H×W");
    const int c = x.dim(0);
    const int hw = x.dim(1) * x.dim(2);
    expect(groups > 0 && c % groups == 0, "group_norm", "groups must divide channels");
    const int cg = c / groups;
    const double n = static_cast<double>(cg) * hw;

    Tensor xhat(x.shape());
    Tensor out(x.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(groups));
    const double* xv = x.value().data();
    for (int g = 0; g < groups; ++g) {
        const std::size_t base = static_cast<std::size_t>(g) * cg * hw;
        const std::size_t len = static_cast<std::size_t>(cg) * hw;
        double m = 0.0;
        for (std::size_t i = 0; i < len; ++i) m += xv[base + i];
        m /= n;
        double var = 0.0;
        for (std::size_t i = 0; i < len; ++i) var += (xv[base + i] - m) * (xv[base + i] - m);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(g)] = is;
        for (std::size_t i = 0; i < len; ++i) xhat[base + i] = (xv[base + i] - m) * is;
    }
    for (int ch = 0; ch < c; ++ch) {
        const double ga = gamma.value()[static_cast<std::size_t>(ch)];
        const double be = beta.value()[static_cast<std::size_t>(ch)];
        for (int i = 0; i < hw; ++i) {
            const std::size_t idx = static_cast<std::size_t>(ch) * hw + i;
            out[idx] = ga * xhat[idx] + be;
        }
    }
    return make_result(std::move(out), {x, gamma, beta},
                       [xhat = std::move(xhat), inv_std = std::move(inv_std), c, hw, cg, groups, n](Node& nd) {
                           const auto& gamma_v = nd.parents[1]->value;
                           if (needs(nd, 1) || needs(nd, 2)) {
                               for (int ch = 0; ch < c; ++ch) {
                                   double sg = 0.0, sb = 0.0;
                                   for (int i = 0; i < hw; ++i) {
                                       const std::size_t idx = static_cast<std::size_t>(ch) * hw + i;
                                       sg += nd.grad[idx] * xhat[idx];
                                       sb += nd.grad[idx];
                                   }
                                   if (needs(nd, 1)) nd.parents[1]->grad_buffer()[static_cast<std::size_t>(ch)] += sg;
                                   if (needs(nd, 2)) nd.parents[2]->grad_buffer()[static_cast<std::size_t>(ch)] += sb;
                               }
                           }
                           if (!needs(nd, 0)) return;
                           auto& gx = g0(nd);
                           std::vector<double> dxhat(static_cast<std::size_t>(cg) * hw);
                           for (int g = 0; g < groups; ++g) {
                               const std::size_t base = static_cast<std::size_t>(g) * cg * hw;
                               double s1 = 0.0, s2 = 0.0;
                               for (int lc = 0; lc < cg; ++lc) {
                                   const double ga = gamma_v[static_cast<std::size_t>(g * cg + lc)];
                                   for (int i = 0; i < hw; ++i) {
                                       const std::size_t li = static_cast<std::size_t>(lc) * hw + i;
                                       const double d = nd.grad[base + li] * ga;
                                       dxhat[li] = d;
                                       s1 += d;
                                       s2 += d * xhat[base + li];
                                   }
                               }
                               const double is = inv_std[static_cast<std::size_t>(g)];
                               for (std::size_t li = 0; li < dxhat.size(); ++li) {
                                   gx[base + li] += is / n * (n * dxhat[li] - s1 - xhat[base + li] * s2);
                               }
                           }
                       });
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
    expect(x.value().rank() == 3, "resize_bilinear", "input must be C×H×W");
    expect(out_h >= 1 && out_w >= 1, "resize_bilinear", "output size must be positive");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto ty = lerp_table(h, out_h);
    auto tx = lerp_table(w, out_w);
    Tensor out({c, out_h, out_w});
    const auto& xv = x.value();
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < out_h; ++oy) {
            const auto& ly = ty[static_cast<std::size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                const auto& lx = tx[static_cast<std::size_t>(ox)];
                const double top = xv.at(ch, ly.i0, lx.i0) * (1 - lx.w1) + xv.at(ch, ly.i0, lx.i1) * lx.w1;
                const double bot = xv.at(ch, ly.i1, lx.i0) * (1 - lx.w1) + xv.at(ch, ly.i1, lx.i1) * lx.w1;
                out.at(ch, oy, ox) = top * (1 - ly.w1) + bot * ly.w1;
            }
        }
    }
    return make_result(std::move(out), {x}, [ty = std::move(ty), tx = std::move(tx), c, out_h, out_w](Node& n) {
        auto& g = g0(n);
        for (int ch = 0; ch < c; ++ch) {
            for (int oy = 0; oy < out_h; ++oy) {
                const auto& ly = ty[static_cast<std::size_t>(oy)];
                for (int ox = 0; ox < out_w; ++ox) {
                    const auto& lx = tx[static_cast<std::size_t>(ox)];
                    const double d = n.grad.at(ch, oy, ox);
                    g.at(ch, ly.i0, lx.i0) += d * (1 - ly.w1) * (1 - lx.w1);
                    g.at(ch, ly.i0, lx.i1) += d * (1 - ly.w1) * lx.w1;
                    g.at(ch, ly.i1, lx.i0) += d * ly.w1 * (1 - lx.w1);
                    g.at(ch, ly.i1, lx.i1) += d * ly.w1 * lx.w1;
                }
            }
        }
    });
}

Var concat(std::span<const Var> parts) {
    expect(!parts.empty(), "concat", "no inputs");
    std::vector<int> shape = parts[0].shape();
    int lead = 0;
    for (const auto& p : parts) {
        auto s = p.shape();
        expect(s.size() == shape.size() && std::equal(s.begin() + 1, s.end(), shape.begin() + 1), "concat",
               "trailing dimensions differ: " + shape_str(s) + " vs " + shape_str(shape));
        lead += s[0];
    }
    shape[0] = lead;
    Tensor out(shape);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
        off += p.value().size();
    }
    return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                       [offsets = std::move(offsets)](Node& n) {
                           for (std::size_t i = 0; i < n.parents.size(); ++i) {
                               if (!n.parents[i]->requires_grad) continue;
                               auto& g = n.parents[i]->grad_buffer();
                               for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[offsets[i] + j];
                           }
                       });
}

namespace {

// Normalizes vectors laid out with `len` components spaced `stride` apart,
// starting at `count` consecutive base offsets.
Var normalize_strided(const Var& x, int count, int len, int base_step, int stride, double eps) {
    Tensor out(x.shape());
    std::vector<double> norms(static_cast<std::size_t>(count));
    const auto& xv = x.value();
    for (int v = 0; v < count; ++v) {
        const std::size_t base = static_cast<std::size_t>(v) * base_step;
        double s = 0.0;
        for (int j = 0; j < len; ++j) {
            const double e = xv[base + static_cast<std::size_t>(j) * stride];
            s += e * e;
        }
        const double nm = std::max(std::sqrt(s), eps);
        norms[static_cast<std::size_t>(v)] = nm;
        for (int j = 0; j < len; ++j) {
            const std::size_t idx = base + static_cast<std::size_t>(j) * stride;
            out[idx] = xv[idx] / nm;
        }
    }
    return make_result(std::move(out), {x}, [norms = std::move(norms), count, len, base_step, stride, eps](Node& n) {
        auto& g = g0(n);
        for (int v = 0; v < count; ++v) {
            const std::size_t base = static_cast<std::size_t>(v) * base_step;
            const double nm = norms[static_cast<std::size_t>(v)];
            double dot = 0.0;
            for (int j = 0; j < len; ++j) {
                const std::size_t idx = base + static_cast<std::size_t>(j) * stride;
                dot += n.value[idx] * n.grad[idx];
            }
            const bool clamped = nm <= eps;
            for (int j = 0; j < len; ++j) {
                const std::size_t idx = base + static_cast<std::size_t>(j) * stride;
                g[idx] += clamped ? n.grad[idx] / eps : (n.grad[idx] - n.value[idx] * dot) / nm;
            }
        }
    });
}

}  // namespace

Var normalize_channels(const Var& x, double eps) {
    expect(x.value().rank() == 3, "normalize_channels", "input must be C×H×W");
    const int hw = x.dim(1) * x.dim(2);
    return normalize_strided(x, hw, x.dim(0), 1, hw, eps);
}

Var normalize_rows(const Var& x, double eps) {
    expect(x.value().rank() == 2, "normalize_rows", "input must be K×C");
    return normalize_strided(x, x.dim(0), x.dim(1), x.dim(1), 1, eps);
}

Var gather_pixels(const Var& x, std::span<const PixelCoord> coords) {
    expect(x.value().rank() == 3, "gather_pixels", "input must be C×H×W");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<PixelCoord> pts(coords.begin(), coords.end());
    for (const auto& p : pts) {
        expect(p.row >= 0 && p.row < h && p.col >= 0 && p.col < w, "gather_pixels", "coordinate out of range");
    }
    Tensor out({static_cast<int>(pts.size()), c});
    for (std::size_t k = 0; k < pts.size(); ++k) {
        for (int ch = 0; ch < c; ++ch) out.at(static_cast<int>(k), ch) = x.value().at(ch, pts[k].row, pts[k].col);
    }
    return make_result(std::move(out), {x}, [pts = std::move(pts), c](Node& n) {
        auto& g = g0(n);
        for (std::size_t k = 0; k < pts.size(); ++k) {
            for (int ch = 0; ch < c; ++ch) g.at(ch, pts[k].row, pts[k].col) += n.grad.at(static_cast<int>(k), ch);
        }
    });
}

Var matmul(const Var& a, const Var& b) {
    expect(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(1) == b.dim(0), "matmul",
           shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
    Tensor out({m, nn});
    if (m > 0 && nn > 0) {
        MapRM(out.data(), m, nn).noalias() = CMapRM(a.value().data(), m, k) * CMapRM(b.value().data(), k, nn);
    }
    return make_result(std::move(out), {a, b}, [m, k, nn](Node& n) {
        if (m == 0 || nn == 0) return;
        CMapRM dy(n.grad.data(), m, nn);
        if (needs(n, 0)) {
            MapRM(g0(n).data(), m, k).noalias() += dy * CMapRM(n.parents[1]->value.data(), k, nn).transpose();
        }
        if (needs(n, 1)) {
            MapRM(g1(n).data(), k, nn).noalias() += CMapRM(n.parents[0]->value.data(), m, k).transpose() * dy;
        }
    });
}

Var transpose(const Var& a) {
    expect(a.value().rank() == 2, "transpose", "input must be 2-D");
    const int r = a.dim(0), c = a.dim(1);
    Tensor out({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = a.value().at(i, j);
    return make_result(std::move(out), {a}, [r, c](Node& n) {
        auto& g = g0(n);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) g.at(i, j) += n.grad.at(j, i);
    });
}

Var select_rows(const Var& a, std::span<const int> rows) {
    expect(a.value().rank() == 2, "select_rows", "input must be 2-D");
    const int nrows = a.dim(0), ncols = a.dim(1);
    std::vector<int> idx(rows.begin(), rows.end());
    for (int r : idx) expect(r >= 0 && r < nrows, "select_rows", "row index out of range");
    Tensor out({static_cast<int>(idx.size()), ncols});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(a.value().data() + static_cast<std::size_t>(idx[i]) * ncols, ncols,
                    out.data() + i * static_cast<std::size_t>(ncols));
    }
    return make_result(std::move(out), {a}, [idx = std::move(idx), ncols](Node& n) {
        auto& g = g0(n);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (int j = 0; j < ncols; ++j) g.at(idx[i], j) += n.grad.at(static_cast<int>(i), j);
        }
    });
}

Var pairwise_min(const Var& a, const Var& b) {
    expect(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(1) == b.dim(1), "pairwise_min",
           shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int na = a.dim(0), nb = b.dim(0), p = a.dim(1);
    Tensor out({na * nb, p});
    for (int i = 0; i < na; ++i)
        for (int c = 0; c < nb; ++c)
            for (int j = 0; j < p; ++j) out.at(i * nb + c, j) = std::min(a.value().at(i, j), b.value().at(c, j));
    return make_result(std::move(out), {a, b}, [na, nb, p](Node& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        for (int i = 0; i < na; ++i) {
            for (int c = 0; c < nb; ++c) {
                for (int j = 0; j < p; ++j) {
                    const double d = n.grad.at(i * nb + c, j);
                    // Ties route to the instance side.
                    if (av.at(i, j) <= bv.at(c, j)) {
                        if (needs(n, 0)) g0(n).at(i, j) += d;
                    } else if (needs(n, 1)) {
                        g1(n).at(c, j) += d;
                    }
                }
            }
        }
    });
}

Var gate_channels(const Var& g, const Var& f) {
    expect(f.value().rank() == 3, "gate_channels", "features must be C×H×W");
    const int c = f.dim(0);
    const std::size_t hw = static_cast<std::size_t>(f.dim(1)) * f.dim(2);
    expect(g.value().size() == hw, "gate_channels", "gate size differs from feature plane");
    Tensor out(f.shape());
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] = g.value()[i] * f.value()[ch * hw + i];
    return make_result(std::move(out), {g, f}, [c, hw](Node& n) {
        const auto& gv = n.parents[0]->value;
        const auto& fv = n.parents[1]->value;
        for (int ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = n.grad[ch * hw + i];
                if (needs(n, 0)) g0(n)[i] += d * fv[ch * hw + i];
                if (needs(n, 1)) g1(n)[ch * hw + i] += d * gv[i];
            }
        }
    });
}

Var dice(const Var& pred, std::span<const double> target, double eps) {
    expect(pred.value().size() == target.size(), "dice",
           "prediction has " + std::to_string(pred.value().size()) + " values, target " +
               std::to_string(target.size()));
    const auto& pv = pred.value();
    double inter = 0.0, pp = 0.0, gg = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double p = std::clamp(pv[i], 0.0, 1.0);
        inter += p * target[i];
        pp += p * p;
        gg += target[i] * target[i];
    }
    const double den = pp + gg + eps;
    const double loss = 1.0 - 2.0 * inter / den;
    std::vector<double> tgt(target.begin(), target.end());
    return make_result(Tensor({1}, loss), {pred}, [tgt = std::move(tgt), inter, den](Node& n) {
        auto& g = g0(n);
        const auto& pv = n.parents[0]->value;
        const double up = n.grad[0];
        for (std::size_t i = 0; i < tgt.size(); ++i) {
            if (pv[i] < 0.0 || pv[i] > 1.0) continue;
            const double p = pv[i];
            g[i] += up * (-2.0) * (tgt[i] * den - inter * 2.0 * p) / (den * den);
        }
    });
}

Var mean_abs(const Var& x) {
    const auto count = x.value().size();
    expect(count > 0, "mean_abs", "empty input");
    double s = 0.0;
    for (double v : x.value().values()) s += std::abs(v);
    return make_result(Tensor({1}, s / static_cast<double>(count)), {x}, [count](Node& n) {
        auto& g = g0(n);
        const auto& xv = n.parents[0]->value;
        const double up = n.grad[0] / static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i) g[i] += xv[i] > 0 ? up : (xv[i] < 0 ? -up : 0.0);
    });
}

Var focal(const Var& prob, std::span<const double> target, double alpha, double gamma, double clip) {
    expect(prob.value().size() == target.size(), "focal", "size mismatch");
    const auto count = target.size();
    expect(count > 0, "focal", "empty input");
    const auto& pv = prob.value();
    double total = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double p = std::clamp(pv[i], clip, 1.0 - clip);
        if (target[i] > 0.5) {
            total += -alpha * std::pow(1.0 - p, gamma) * std::log(p);
        } else {
            total += -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
        }
    }
    std::vector<double> tgt(target.begin(), target.end());
    return make_result(Tensor({1}, total / static_cast<double>(count)), {prob},
                       [tgt = std::move(tgt), alpha, gamma, clip, count](Node& n) {
                           auto& g = g0(n);
                           const auto& pv = n.parents[0]->value;
                           const double up = n.grad[0] / static_cast<double>(count);
                           for (std::size_t i = 0; i < count; ++i) {
                               if (pv[i] < clip || pv[i] > 1.0 - clip) continue;
                               const double p = pv[i];
                               double d;
                               if (tgt[i] > 0.5) {
                                   d = alpha * (gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p) -
                                                std::pow(1.0 - p, gamma) / p);
                               } else {
                                   d = -(1.0 - alpha) * (gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p) -
                                                         std::pow(p, gamma) / (1.0 - p));
                               }
                               g[i] += up * d;
                           }
                       });
}

Var abs_dev_from_identity(const Var& a, std::span<const std::uint8_t> keep) {
    expect(a.value().rank() == 2 && a.dim(0) == a.dim(1), "abs_dev_from_identity", "matrix must be square");
    const int k = a.dim(0);
    std::vector<std::uint8_t> kept(keep.begin(), keep.end());
    if (kept.empty()) kept.assign(static_cast<std::size_t>(k) * k, 1);
    expect(kept.size() == static_cast<std::size_t>(k) * k, "abs_dev_from_identity", "keep mask size");
    double s = 0.0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            if (kept[static_cast<std::size_t>(i) * k + j]) s += std::abs(a.value().at(i, j) - (i == j ? 1.0 : 0.0));
    return make_result(Tensor({1}, s), {a}, [kept = std::move(kept), k](Node& n) {
        auto& g = g0(n);
        const auto& av = n.parents[0]->value;
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
                if (!kept[static_cast<std::size_t>(i) * k + j]) continue;
                const double d = av.at(i, j) - (i == j ? 1.0 : 0.0);
                g.at(i, j) += d > 0 ? n.grad[0] : (d < 0 ? -n.grad[0] : 0.0);
            }
        }
    });
}

}  // namespace uniparser::nn
