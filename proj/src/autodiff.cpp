#include "ccgbench/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ccgbench/numerics.hpp"

namespace ccgbench::autodiff {

namespace {

// out += a * b^T
void add_matmul_nt(Matrix& out, const Matrix& a, const Matrix& b) {
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(j, k);
            out(i, j) += acc;
        }
}

// out += a^T * b
void add_matmul_tn(Matrix& out, const Matrix& a, const Matrix& b) {
    for (std::size_t k = 0; k < a.rows; ++k)
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double av = a(k, i);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += av * b(k, j);
        }
}

}  // namespace

NodeId Graph::push(Matrix val, bool needs_grad, std::function<void()> back) {
    Node n;
    n.val = std::move(val);
    n.needs = grad_on_ && needs_grad;
    if (n.needs) {
        n.grd = Matrix(n.val.rows, n.val.cols);
        n.back = std::move(back);
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::constant(Matrix v) { return push(std::move(v), false, {}); }
NodeId Graph::param(Matrix v) { return push(std::move(v), true, {}); }

void Graph::backward(NodeId root) {
    if (!grad_on_) throw std::logic_error("backward: gradients disabled on this graph");
    Node& r = nodes_[static_cast<std::size_t>(root)];
    if (r.val.rows != 1 || r.val.cols != 1) throw std::invalid_argument("backward: root must be 1x1");
    if (!r.needs) return;  // root does not depend on any parameter
    r.grd(0, 0) = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.needs && n.back) n.back();
    }
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("add: shape mismatch");
    Matrix out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += vb.data[i];
    const bool ng = needs(a) || needs(b);
    NodeId id = push(std::move(out), ng, {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a, b] {
            const Matrix& g = grad(id);
            if (needs(a)) {
                Matrix& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
            }
            if (needs(b)) {
                Matrix& gb = grad_buf(b);
                for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i];
            }
        };
    return id;
}

NodeId Graph::sub(NodeId a, NodeId b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("sub: shape mismatch");
    Matrix out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= vb.data[i];
    NodeId id = push(std::move(out), needs(a) || needs(b), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a, b] {
            const Matrix& g = grad(id);
            if (needs(a)) {
                Matrix& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
            }
            if (needs(b)) {
                Matrix& gb = grad_buf(b);
                for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
            }
        };
    return id;
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("mul: shape mismatch");
    Matrix out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= vb.data[i];
    NodeId id = push(std::move(out), needs(a) || needs(b), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a, b] {
            const Matrix& g = grad(id);
            const Matrix& va2 = value(a);
            const Matrix& vb2 = value(b);
            if (needs(a)) {
                Matrix& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * vb2.data[i];
            }
            if (needs(b)) {
                Matrix& gb = grad_buf(b);
                for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * va2.data[i];
            }
        };
    return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    Matrix out = matmul_plain(value(a), value(b));
    NodeId id = push(std::move(out), needs(a) || needs(b), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a, b] {
            const Matrix& g = grad(id);
            if (needs(a)) add_matmul_nt(grad_buf(a), g, value(b));
            if (needs(b)) add_matmul_tn(grad_buf(b), value(a), g);
        };
    return id;
}

NodeId Graph::transpose(NodeId a) {
    NodeId id = push(transposed(value(a)), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a] {
            const Matrix& g = grad(id);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.rows; ++i)
                for (std::size_t j = 0; j < g.cols; ++j) ga(j, i) += g(i, j);
        };
    return id;
}

NodeId Graph::scale(NodeId a, double c) {
    Matrix out = value(a);
    for (double& v : out.data) v *= c;
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a, c] {
            const Matrix& g = grad(id);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * c;
        };
    return id;
}

NodeId Graph::shift(NodeId a, double c) {
    Matrix out = value(a);
    for (double& v : out.data) v += c;
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a] {
            const Matrix& g = grad(id);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
        };
    return id;
}

NodeId Graph::add_scalar(NodeId a, NodeId s) {
    const Matrix& vs = value(s);
    if (vs.rows != 1 || vs.cols != 1) throw std::invalid_argument("add_scalar: scalar node must be 1x1");
    Matrix out = value(a);
    for (double& v : out.data) v += vs(0, 0);
    NodeId id = push(std::move(out), needs(a) || needs(s), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a, s] {
            const Matrix& g = grad(id);
            if (needs(a)) {
                Matrix& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
            }
            if (needs(s)) {
                double acc = 0.0;
                for (double v : g.data) acc += v;
                grad_buf(s)(0, 0) += acc;
            }
        };
    return id;
}

NodeId Graph::add_rowvec(NodeId a, NodeId b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    if (vb.rows != 1 || vb.cols != va.cols) throw std::invalid_argument("add_rowvec: bias must be 1 x cols");
    Matrix out = va;
    for (std::size_t i = 0; i < va.rows; ++i)
        for (std::size_t j = 0; j < va.cols; ++j) out(i, j) += vb(0, j);
    NodeId id = push(std::move(out), needs(a) || needs(b), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a, b] {
            const Matrix& g = grad(id);
            if (needs(a)) {
                Matrix& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
            }
            if (needs(b)) {
                Matrix& gb = grad_buf(b);
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < g.cols; ++j) gb(0, j) += g(i, j);
            }
        };
    return id;
}

NodeId Graph::mul_colvec(NodeId a, NodeId c) {
    const Matrix& va = value(a);
    const Matrix& vc = value(c);
    if (vc.cols != 1 || vc.rows != va.rows) throw std::invalid_argument("mul_colvec: scaler must be rows x 1");
    Matrix out = va;
    for (std::size_t i = 0; i < va.rows; ++i)
        for (std::size_t j = 0; j < va.cols; ++j) out(i, j) *= vc(i, 0);
    NodeId id = push(std::move(out), needs(a) || needs(c), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a, c] {
            const Matrix& g = grad(id);
            const Matrix& va2 = value(a);
            const Matrix& vc2 = value(c);
            if (needs(a)) {
                Matrix& ga = grad_buf(a);
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < g.cols; ++j) ga(i, j) += g(i, j) * vc2(i, 0);
            }
            if (needs(c)) {
                Matrix& gc = grad_buf(c);
                for (std::size_t i = 0; i < g.rows; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < g.cols; ++j) acc += g(i, j) * va2(i, j);
                    gc(i, 0) += acc;
                }
            }
        };
    return id;
}

NodeId Graph::sigmoid(NodeId a) {
    Matrix out = value(a);
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a] {
            const Matrix& g = grad(id);
            const Matrix& y = value(id);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
        };
    return id;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline double gelu_fwd(double x) {
    const double u = kGeluC * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}
inline double gelu_bwd(double x) {
    const double u = kGeluC * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}
}  // namespace

NodeId Graph::gelu(NodeId a) {
    Matrix out = value(a);
    for (double& v : out.data) v = gelu_fwd(v);
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a] {
            const Matrix& g = grad(id);
            const Matrix& x = value(a);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * gelu_bwd(x.data[i]);
        };
    return id;
}

NodeId Graph::softmax_rows(NodeId a) {
    Matrix out = value(a);
    for (std::size_t i = 0; i < out.rows; ++i) {
        double mx = out(i, 0);
        for (std::size_t j = 1; j < out.cols; ++j) mx = std::max(mx, out(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < out.cols; ++j) {
            out(i, j) = std::exp(out(i, j) - mx);
            sum += out(i, j);
        }
        for (std::size_t j = 0; j < out.cols; ++j) out(i, j) /= sum;
    }
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a] {
            const Matrix& g = grad(id);
            const Matrix& y = value(id);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.rows; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < g.cols; ++j) dot += g(i, j) * y(i, j);
                for (std::size_t j = 0; j < g.cols; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
            }
        };
    return id;
}

NodeId Graph::square(NodeId a) {
    Matrix out = value(a);
    for (double& v : out.data) v *= v;
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a] {
            const Matrix& g = grad(id);
            const Matrix& x = value(a);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += 2.0 * g.data[i] * x.data[i];
        };
    return id;
}

NodeId Graph::sqrt_of(NodeId a) {
    Matrix out = value(a);
    for (double& v : out.data) {
        if (v < 0.0) throw std::invalid_argument("sqrt_of: negative entry");
        v = std::sqrt(v);
    }
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a] {
            const Matrix& g = grad(id);
            const Matrix& y = value(id);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * 0.5 / y.data[i];
        };
    return id;
}

NodeId Graph::abs_of(NodeId a) {
    Matrix out = value(a);
    for (double& v : out.data) v = std::fabs(v);
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a] {
            const Matrix& g = grad(id);
            const Matrix& x = value(a);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double s = x.data[i] > 0.0 ? 1.0 : (x.data[i] < 0.0 ? -1.0 : 0.0);
                ga.data[i] += g.data[i] * s;
            }
        };
    return id;
}

NodeId Graph::sum_all(NodeId a) {
    double acc = 0.0;
    for (double v : value(a).data) acc += v;
    Matrix out(1, 1);
    out(0, 0) = acc;
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a] {
            const double g = grad(id)(0, 0);
            Matrix& ga = grad_buf(a);
            for (double& v : ga.data) v += g;
        };
    return id;
}

NodeId Graph::mean_all(NodeId a) {
    const double n = static_cast<double>(value(a).size());
    double acc = 0.0;
    for (double v : value(a).data) acc += v;
    Matrix out(1, 1);
    out(0, 0) = acc / n;
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a, n] {
            const double g = grad(id)(0, 0) / n;
            Matrix& ga = grad_buf(a);
            for (double& v : ga.data) v += g;
        };
    return id;
}

NodeId Graph::sum_of(const std::vector<NodeId>& ids) {
    if (ids.empty()) throw std::invalid_argument("sum_of: empty operand list");
    Matrix out = value(ids[0]);
    bool ng = needs(ids[0]);
    for (std::size_t k = 1; k < ids.size(); ++k) {
        const Matrix& v = value(ids[k]);
        if (!v.same_shape(out)) throw std::invalid_argument("sum_of: shape mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += v.data[i];
        ng = ng || needs(ids[k]);
    }
    NodeId id = push(std::move(out), ng, {});
    if (nodes_.back().needs) {
        std::vector<NodeId> ops = ids;
        nodes_.back().back = [this, id, ops] {
            const Matrix& g = grad(id);
            for (NodeId op : ops) {
                if (!needs(op)) continue;
                Matrix& go = grad_buf(op);
                for (std::size_t i = 0; i < g.size(); ++i) go.data[i] += g.data[i];
            }
        };
    }
    return id;
}

NodeId Graph::slice_cols(NodeId a, std::size_t c0, std::size_t c1) {
    const Matrix& va = value(a);
    if (c0 >= c1 || c1 > va.cols) throw std::invalid_argument("slice_cols: bad range");
    Matrix out(va.rows, c1 - c0);
    for (std::size_t i = 0; i < va.rows; ++i)
        for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = va(i, j);
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a, c0] {
            const Matrix& g = grad(id);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.rows; ++i)
                for (std::size_t j = 0; j < g.cols; ++j) ga(i, c0 + j) += g(i, j);
        };
    return id;
}

NodeId Graph::slice_rows(NodeId a, std::size_t r0, std::size_t r1) {
    const Matrix& va = value(a);
    if (r0 >= r1 || r1 > va.rows) throw std::invalid_argument("slice_rows: bad range");
    Matrix out(r1 - r0, va.cols);
    for (std::size_t i = r0; i < r1; ++i)
        for (std::size_t j = 0; j < va.cols; ++j) out(i - r0, j) = va(i, j);
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a, r0] {
            const Matrix& g = grad(id);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.rows; ++i)
                for (std::size_t j = 0; j < g.cols; ++j) ga(r0 + i, j) += g(i, j);
        };
    return id;
}

NodeId Graph::concat_cols(const std::vector<NodeId>& ids) {
    if (ids.empty()) throw std::invalid_argument("concat_cols: empty operand list");
    const std::size_t rows = value(ids[0]).rows;
    std::size_t cols = 0;
    bool ng = false;
    for (NodeId n : ids) {
        if (value(n).rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += value(n).cols;
        ng = ng || needs(n);
    }
    Matrix out(rows, cols);
    std::size_t off = 0;
    for (NodeId n : ids) {
        const Matrix& v = value(n);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < v.cols; ++j) out(i, off + j) = v(i, j);
        off += v.cols;
    }
    NodeId id = push(std::move(out), ng, {});
    if (nodes_.back().needs) {
        std::vector<NodeId> ops = ids;
        nodes_.back().back = [this, id, ops] {
            const Matrix& g = grad(id);
            std::size_t off2 = 0;
            for (NodeId op : ops) {
                const std::size_t w = value(op).cols;
                if (needs(op)) {
                    Matrix& go = grad_buf(op);
                    for (std::size_t i = 0; i < g.rows; ++i)
                        for (std::size_t j = 0; j < w; ++j) go(i, j) += g(i, off2 + j);
                }
                off2 += w;
            }
        };
    }
    return id;
}

NodeId Graph::reshape(NodeId a, std::size_t r, std::size_t c) {
    const Matrix& va = value(a);
    if (r * c != va.size()) throw std::invalid_argument("reshape: element count mismatch");
    Matrix out(r, c);
    out.data = va.data;
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, a] {
            const Matrix& g = grad(id);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
        };
    return id;
}

NodeId Graph::layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
    const Matrix& vx = value(x);
    const Matrix& vg = value(gamma);
    const Matrix& vb = value(beta);
    if (vg.rows != 1 || vg.cols != vx.cols || vb.rows != 1 || vb.cols != vx.cols)
        throw std::invalid_argument("layer_norm: gamma/beta must be 1 x cols");
    const std::size_t n = vx.cols;

    Matrix xhat(vx.rows, n);
    std::vector<double> inv_std(vx.rows);
    Matrix out(vx.rows, n);
    for (std::size_t i = 0; i < vx.rows; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += vx(i, j);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = vx(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            xhat(i, j) = (vx(i, j) - mu) * is;
            out(i, j) = vg(0, j) * xhat(i, j) + vb(0, j);
        }
    }
    NodeId id = push(std::move(out), needs(x) || needs(gamma) || needs(beta), {});
    if (nodes_.back().needs)
        nodes_.back().back = [this, id, x, gamma, beta, xhat, inv_std] {
            const Matrix& g = grad(id);
            const Matrix& vg2 = value(gamma);
            const std::size_t n2 = g.cols;
            if (needs(gamma) || needs(beta)) {
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < n2; ++j) {
                        if (needs(gamma)) grad_buf(gamma)(0, j) += g(i, j) * xhat(i, j);
                        if (needs(beta)) grad_buf(beta)(0, j) += g(i, j);
                    }
            }
            if (needs(x)) {
                Matrix& gx = grad_buf(x);
                for (std::size_t i = 0; i < g.rows; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < n2; ++j) {
                        const double gj = g(i, j) * vg2(0, j);
                        m1 += gj;
                        m2 += gj * xhat(i, j);
                    }
                    m1 /= static_cast<double>(n2);
                    m2 /= static_cast<double>(n2);
                    for (std::size_t j = 0; j < n2; ++j) {
                        const double gj = g(i, j) * vg2(0, j);
                        gx(i, j) += inv_std[i] * (gj - m1 - xhat(i, j) * m2);
                    }
                }
            }
        };
    return id;
}

NodeId Graph::log_masked(NodeId a, const Matrix& mask, double eps, double neg_clamp) {
    const Matrix& va = value(a);
    if (!va.same_shape(mask)) throw std::invalid_argument("log_masked: mask shape mismatch");
    Matrix out(va.rows, va.cols);
    for (std::size_t i = 0; i < va.size(); ++i)
        out.data[i] = mask.data[i] != 0.0 ? std::log(va.data[i] + eps) : neg_clamp;
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs) {
        Matrix mcopy = mask;
        nodes_.back().back = [this, id, a, mcopy, eps] {
            const Matrix& g = grad(id);
            const Matrix& x = value(a);
            Matrix& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (mcopy.data[i] != 0.0) ga.data[i] += g.data[i] / (x.data[i] + eps);
        };
    }
    return id;
}

NodeId Graph::notears_penalty(NodeId a) {
    const Matrix& va = value(a);
    if (va.rows != va.cols || va.rows == 0) throw std::invalid_argument("notears_penalty: square matrix required");
    const std::size_t c = va.rows;
    Matrix m(c, c);
    for (std::size_t i = 0; i < va.size(); ++i) m.data[i] = va.data[i] * va.data[i];

    const bool ng = needs(a) && grad_on_;
    numerics::MatexpResult r = numerics::matexp_trace(m, ng);
    Matrix out(1, 1);
    out(0, 0) = (r.trace - static_cast<double>(c)) / static_cast<double>(c);
    NodeId id = push(std::move(out), needs(a), {});
    if (nodes_.back().needs) {
        Matrix gm = std::move(r.gradient);  // exp(M)^T
        nodes_.back().back = [this, id, a, gm, c] {
            const double g = grad(id)(0, 0);
            const Matrix& x = value(a);
            Matrix& ga = grad_buf(a);
            const double k = 2.0 * g / static_cast<double>(c);
            for (std::size_t i = 0; i < x.size(); ++i) ga.data[i] += k * gm.data[i] * x.data[i];
        };
    }
    return id;
}

}  // namespace ccgbench::autodiff
