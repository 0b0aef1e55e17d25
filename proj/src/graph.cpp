#include "ffdc/graph.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ffdc {

thread_local uint64_t g_attention_dot_count = 0;

namespace {

constexpr double kMaskPenalty = -1e30;

double softplus(double x) { return (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

int Graph::push(Node n) {
    // Parameter leaves are not re-scanned here; the optimizer validates them
    // and any non-finite value surfaces in the first dependent op anyway.
    if (!n.vref && !n.val.all_finite())
        throw std::runtime_error("graph: non-finite activation produced by node");
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Graph::input(Tensor t) {
    Node n;
    n.op = Op::input;
    n.val = std::move(t);
    return push(std::move(n));
}

int Graph::param(const std::string& name) {
    Node n;
    n.op = Op::param;
    n.vref = &store_->value(name);
    n.pname = name;
    return push(std::move(n));
}

int Graph::matmul(int a, int b) {
    Node n;
    n.op = Op::matmul;
    n.a = a;
    n.b = b;
    matmul_into(node_val(a), node_val(b), n.val);
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    const Tensor& ta = node_val(a);
    const Tensor& tb = node_val(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("graph add: shape mismatch");
    Node n;
    n.op = Op::add;
    n.a = a;
    n.b = b;
    n.val = ta;
    for (size_t i = 0; i < n.val.v.size(); ++i) n.val.v[i] += tb.v[i];
    return push(std::move(n));
}

int Graph::add_row(int a, int bias) {
    const Tensor& ta = node_val(a);
    const Tensor& tb = node_val(bias);
    if (tb.rows != 1 || tb.cols != ta.cols) throw std::invalid_argument("graph add_row: bias must be 1 x cols");
    Node n;
    n.op = Op::add_row;
    n.a = a;
    n.b = bias;
    n.val = ta;
    for (int i = 0; i < ta.rows; ++i) {
        double* row = n.val.row(i);
        for (int j = 0; j < ta.cols; ++j) row[j] += tb.v[j];
    }
    return push(std::move(n));
}

int Graph::scale(int a, double s) {
    Node n;
    n.op = Op::scale;
    n.a = a;
    n.sa = s;
    n.val = node_val(a);
    for (double& x : n.val.v) x *= s;
    return push(std::move(n));
}

int Graph::tanh_op(int a) {
    Node n;
    n.op = Op::tanh_op;
    n.a = a;
    n.val = node_val(a);
    for (double& x : n.val.v) x = std::tanh(x);
    return push(std::move(n));
}

int Graph::layer_norm(int x, int gain, int bias, double eps) {
    const Tensor& tx = node_val(x);
    const Tensor& tg = node_val(gain);
    const Tensor& tb = node_val(bias);
    if (tg.rows != 1 || tg.cols != tx.cols || tb.rows != 1 || tb.cols != tx.cols)
        throw std::invalid_argument("graph layer_norm: gain/bias must be 1 x cols");
    Node n;
    n.op = Op::layer_norm;
    n.a = x;
    n.b = gain;
    n.c = bias;
    n.sa = eps;
    n.val = Tensor(tx.rows, tx.cols);
    Tensor xhat(tx.rows, tx.cols);
    Tensor inv_std(tx.rows, 1);
    for (int i = 0; i < tx.rows; ++i) {
        const double* row = tx.row(i);
        double mean = 0.0;
        for (int j = 0; j < tx.cols; ++j) mean += row[j];
        mean /= tx.cols;
        double var = 0.0;
        for (int j = 0; j < tx.cols; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= tx.cols;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std.at(i, 0) = is;
        double* hrow = xhat.row(i);
        double* orow = n.val.row(i);
        for (int j = 0; j < tx.cols; ++j) {
            hrow[j] = (row[j] - mean) * is;
            orow[j] = tg.v[j] * hrow[j] + tb.v[j];
        }
    }
    n.aux.push_back(std::move(xhat));
    n.aux.push_back(std::move(inv_std));
    return push(std::move(n));
}

int Graph::attention(int q, int k, int v, const BoolMask* mask, int heads) {
    const Tensor& tq = node_val(q);
    const Tensor& tk = node_val(k);
    const Tensor& tv = node_val(v);
    const int rows = tq.rows;
    const int dim = tq.cols;
    if (tk.rows != rows || tv.rows != rows || tk.cols != dim || tv.cols != dim)
        throw std::invalid_argument("attention: q/k/v shapes must match");
    if (mask == nullptr || mask->n != rows) throw std::invalid_argument("attention: mask size must equal sequence length");
    if (heads <= 0 || dim % heads != 0) throw std::invalid_argument("attention: head count must divide model width");
    const int empty = mask->first_empty_row();
    if (empty >= 0)
        throw std::invalid_argument("attention: mask row " + std::to_string(empty) + " has no visible keys");

    const int hd = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Node n;
    n.op = Op::attention;
    n.a = q;
    n.b = k;
    n.c = v;
    n.i1 = heads;
    n.mask = mask;
    n.val = Tensor(rows, dim);
    Tensor probs(heads * rows, rows);
    std::vector<double> srow(rows);
    for (int h = 0; h < heads; ++h) {
        const int c0 = h * hd;
        for (int i = 0; i < rows; ++i) {
            const double* qi = tq.row(i) + c0;
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < rows; ++j) {
                const double* kj = tk.row(j) + c0;
                double s = 0.0;
                for (int t = 0; t < hd; ++t) s += qi[t] * kj[t];
                ++g_attention_dot_count;
                s *= scale;
                if (!mask->get(i, j)) s += kMaskPenalty;
                srow[j] = s;
                if (s > mx) mx = s;
            }
            double z = 0.0;
            double* prow = probs.row(h * rows + i);
            for (int j = 0; j < rows; ++j) {
                const double e = std::exp(srow[j] - mx);
                prow[j] = e;
                z += e;
            }
            double* orow = n.val.row(i) + c0;
            for (int j = 0; j < rows; ++j) {
                prow[j] /= z;
                if (prow[j] != 0.0) {
                    const double* vj = tv.row(j) + c0;
                    for (int t = 0; t < hd; ++t) orow[t] += prow[j] * vj[t];
                }
            }
        }
    }
    n.aux.push_back(std::move(probs));
    return push(std::move(n));
}

int Graph::concat_rows(const std::vector<int>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const int cols = node_val(parts[0]).cols;
    int rows = 0;
    for (int p : parts) {
        if (node_val(p).cols != cols) throw std::invalid_argument("concat_rows: column mismatch");
        rows += node_val(p).rows;
    }
    Node n;
    n.op = Op::concat_rows;
    n.parts = parts;
    n.val = Tensor(rows, cols);
    int r = 0;
    for (int p : parts) {
        const Tensor& t = node_val(p);
        for (int i = 0; i < t.rows; ++i, ++r)
            for (int j = 0; j < cols; ++j) n.val.at(r, j) = t.at(i, j);
    }
    return push(std::move(n));
}

int Graph::slice_rows(int a, int first, int count) {
    const Tensor& ta = node_val(a);
    if (first < 0 || count <= 0 || first + count > ta.rows) throw std::invalid_argument("slice_rows: out of range");
    Node n;
    n.op = Op::slice_rows;
    n.a = a;
    n.i0 = first;
    n.i1 = count;
    n.val = Tensor(count, ta.cols);
    for (int i = 0; i < count; ++i)
        for (int j = 0; j < ta.cols; ++j) n.val.at(i, j) = ta.at(first + i, j);
    return push(std::move(n));
}

int Graph::reshape(int a, int rows, int cols) {
    const Tensor& ta = node_val(a);
    if (static_cast<size_t>(rows) * cols != ta.size()) throw std::invalid_argument("reshape: element count mismatch");
    Node n;
    n.op = Op::reshape;
    n.a = a;
    n.val = Tensor(rows, cols, ta.v);
    return push(std::move(n));
}

int Graph::mse_loss(int pred, Tensor target) {
    const Tensor& tp = node_val(pred);
    if (!tp.same_shape(target)) throw std::invalid_argument("mse_loss: target shape mismatch");
    Node n;
    n.op = Op::mse_loss;
    n.a = pred;
    n.val = Tensor(1, 1);
    double s = 0.0;
    for (size_t i = 0; i < tp.v.size(); ++i) {
        const double d = tp.v[i] - target.v[i];
        s += d * d;
    }
    n.val.at(0, 0) = s / static_cast<double>(tp.v.size());
    n.aux.push_back(std::move(target));
    return push(std::move(n));
}

int Graph::bce_with_logit(int z, double label) {
    const Tensor& tz = node_val(z);
    if (tz.rows != 1 || tz.cols != 1) throw std::invalid_argument("bce_with_logit: logit must be 1x1");
    if (label != 0.0 && label != 1.0) throw std::invalid_argument("bce_with_logit: label must be 0 or 1");
    Node n;
    n.op = Op::bce_with_logit;
    n.a = z;
    n.sa = label;
    n.val = Tensor(1, 1);
    const double zv = tz.at(0, 0);
    n.val.at(0, 0) = (1.0 - label) * zv + softplus(-zv);
    return push(std::move(n));
}

int Graph::weighted_sum(int a, int b, double wa, double wb) {
    const Tensor& ta = node_val(a);
    const Tensor& tb = node_val(b);
    if (ta.rows != 1 || ta.cols != 1 || tb.rows != 1 || tb.cols != 1)
        throw std::invalid_argument("weighted_sum: operands must be 1x1");
    Node n;
    n.op = Op::weighted_sum;
    n.a = a;
    n.b = b;
    n.sa = wa;
    n.sb = wb;
    n.val = Tensor(1, 1);
    n.val.at(0, 0) = wa * ta.at(0, 0) + wb * tb.at(0, 0);
    return push(std::move(n));
}

void Graph::backward(int loss) {
    const Tensor& lv = node_val(loss);
    if (lv.rows != 1 || lv.cols != 1) throw std::invalid_argument("backward: loss node must be 1x1");
    for (int id = 0; id < static_cast<int>(nodes_.size()); ++id) {
        Node& n = nodes_[id];
        const Tensor& v = node_val(id);
        if (n.grad.v.empty()) n.grad = Tensor(v.rows, v.cols);
    }
    nodes_[loss].grad.at(0, 0) = 1.0;
    for (int id = loss; id >= 0; --id) backward_node(nodes_[id]);
}

void Graph::backward_node(Node& n) {
    bool all_zero = true;
    for (double g : n.grad.v)
        if (g != 0.0) {
            all_zero = false;
            break;
        }
    if (all_zero) return;

    switch (n.op) {
        case Op::input:
            break;
        case Op::param: {
            Tensor& g = store_->grad(n.pname);
            for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += n.grad.v[i];
            break;
        }
        case Op::matmul: {
            matmul_nt_acc(n.grad, node_val(n.b), nodes_[n.a].grad);
            matmul_tn_acc(node_val(n.a), n.grad, nodes_[n.b].grad);
            break;
        }
        case Op::add: {
            for (size_t i = 0; i < n.grad.v.size(); ++i) {
                nodes_[n.a].grad.v[i] += n.grad.v[i];
                nodes_[n.b].grad.v[i] += n.grad.v[i];
            }
            break;
        }
        case Op::add_row: {
            Tensor& da = nodes_[n.a].grad;
            Tensor& db = nodes_[n.b].grad;
            for (int i = 0; i < n.grad.rows; ++i)
                for (int j = 0; j < n.grad.cols; ++j) {
                    da.at(i, j) += n.grad.at(i, j);
                    db.at(0, j) += n.grad.at(i, j);
                }
            break;
        }
        case Op::scale: {
            Tensor& da = nodes_[n.a].grad;
            for (size_t i = 0; i < n.grad.v.size(); ++i) da.v[i] += n.sa * n.grad.v[i];
            break;
        }
        case Op::tanh_op: {
            Tensor& da = nodes_[n.a].grad;
            for (size_t i = 0; i < n.grad.v.size(); ++i) da.v[i] += (1.0 - n.val.v[i] * n.val.v[i]) * n.grad.v[i];
            break;
        }
        case Op::layer_norm: {
            const Tensor& xhat = n.aux[0];
            const Tensor& inv_std = n.aux[1];
            const Tensor& gain = node_val(n.b);
            Tensor& dx = nodes_[n.a].grad;
            Tensor& dg = nodes_[n.b].grad;
            Tensor& db = nodes_[n.c].grad;
            const int cols = n.val.cols;
            for (int i = 0; i < n.val.rows; ++i) {
                const double* gy = n.grad.row(i);
                const double* xh = xhat.row(i);
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int j = 0; j < cols; ++j) {
                    dg.at(0, j) += gy[j] * xh[j];
                    db.at(0, j) += gy[j];
                    const double dxh = gy[j] * gain.v[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xh[j];
                }
                const double is = inv_std.at(i, 0);
                const double m1 = sum_dxhat / cols;
                const double m2 = sum_dxhat_xhat / cols;
                double* dxr = dx.row(i);
                for (int j = 0; j < cols; ++j) {
                    const double dxh = gy[j] * gain.v[j];
                    dxr[j] += is * (dxh - m1 - xh[j] * m2);
                }
            }
            break;
        }
        case Op::attention: {
            const int heads = n.i1;
            const int rows = n.val.rows;
            const int dim = n.val.cols;
            const int hd = dim / heads;
            const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
            const Tensor& probs = n.aux[0];
            const Tensor& tq = node_val(n.a);
            const Tensor& tk = node_val(n.b);
            const Tensor& tv = node_val(n.c);
            Tensor& dq = nodes_[n.a].grad;
            Tensor& dk = nodes_[n.b].grad;
            Tensor& dv = nodes_[n.c].grad;
            std::vector<double> dprow(rows);
            for (int h = 0; h < heads; ++h) {
                const int c0 = h * hd;
                for (int i = 0; i < rows; ++i) {
                    const double* go = n.grad.row(i) + c0;
                    const double* prow = probs.row(h * rows + i);
                    double rowdot = 0.0;
                    for (int j = 0; j < rows; ++j) {
                        if (prow[j] == 0.0) {
                            dprow[j] = 0.0;
                            continue;
                        }
                        const double* vj = tv.row(j) + c0;
                        double dp = 0.0;
                        double* dvj = dv.row(j) + c0;
                        for (int t = 0; t < hd; ++t) {
                            dp += go[t] * vj[t];
                            dvj[t] += prow[j] * go[t];
                        }
                        dprow[j] = dp;
                        rowdot += dp * prow[j];
                    }
                    const double* qi = tq.row(i) + c0;
                    double* dqi = dq.row(i) + c0;
                    for (int j = 0; j < rows; ++j) {
                        const double ds = prow[j] == 0.0 ? 0.0 : prow[j] * (dprow[j] - rowdot);
                        if (ds == 0.0) continue;
                        const double dss = ds * scale;
                        const double* kj = tk.row(j) + c0;
                        double* dkj = dk.row(j) + c0;
                        for (int t = 0; t < hd; ++t) {
                            dqi[t] += dss * kj[t];
                            dkj[t] += dss * qi[t];
                        }
                    }
                }
            }
            break;
        }
        case Op::concat_rows: {
            int r = 0;
            for (int p : n.parts) {
                Tensor& dp = nodes_[p].grad;
                for (int i = 0; i < dp.rows; ++i, ++r)
                    for (int j = 0; j < dp.cols; ++j) dp.at(i, j) += n.grad.at(r, j);
            }
            break;
        }
        case Op::slice_rows: {
            Tensor& da = nodes_[n.a].grad;
            for (int i = 0; i < n.i1; ++i)
                for (int j = 0; j < n.grad.cols; ++j) da.at(n.i0 + i, j) += n.grad.at(i, j);
            break;
        }
        case Op::reshape: {
            Tensor& da = nodes_[n.a].grad;
            for (size_t i = 0; i < da.v.size(); ++i) da.v[i] += n.grad.v[i];
            break;
        }
        case Op::mse_loss: {
            const Tensor& tp = node_val(n.a);
            const Tensor& target = n.aux[0];
            Tensor& dp = nodes_[n.a].grad;
            const double g = n.grad.at(0, 0) * 2.0 / static_cast<double>(tp.v.size());
            for (size_t i = 0; i < tp.v.size(); ++i) dp.v[i] += g * (tp.v[i] - target.v[i]);
            break;
        }
        case Op::bce_with_logit: {
            const double zv = node_val(n.a).at(0, 0);
            nodes_[n.a].grad.at(0, 0) += n.grad.at(0, 0) * (sigmoid(zv) - n.sa);
            break;
        }
        case Op::weighted_sum: {
            nodes_[n.a].grad.at(0, 0) += n.sa * n.grad.at(0, 0);
            nodes_[n.b].grad.at(0, 0) += n.sb * n.grad.at(0, 0);
            break;
        }
    }
}

Tensor linear_rows(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor out = matmul(x, w);
    if (b.rows != 1 || b.cols != out.cols) throw std::invalid_argument("linear_rows: bias must be 1 x cols");
    for (int i = 0; i < out.rows; ++i) {
        double* row = out.row(i);
        for (int j = 0; j < out.cols; ++j) row[j] += b.v[j];
    }
    return out;
}

void layer_norm_rows_inplace(Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    for (int i = 0; i < x.rows; ++i) {
        double* row = x.row(i);
        double mean = 0.0;
        for (int j = 0; j < x.cols; ++j) mean += row[j];
        mean /= x.cols;
        double var = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= x.cols;
        const double is = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < x.cols; ++j) row[j] = gain.v[j] * (row[j] - mean) * is + bias.v[j];
    }
}

void softmax_row_inplace(std::vector<double>& row) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double s : row)
        if (s > mx) mx = s;
    double z = 0.0;
    for (double& s : row) {
        s = std::exp(s - mx);
        z += s;
    }
    for (double& s : row) s /= z;
}

}  // namespace ffdc
