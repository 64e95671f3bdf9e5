#include "smlstm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "smlstm/errors.hpp"

namespace smlstm {

double sigmoid_clamped(double x) {
    const double c = std::clamp(x, -40.0, 40.0);
    return 1.0 / (1.0 + std::exp(-c));
}

Value Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return Value{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Graph::Node& Graph::node(Value v) { return nodes_.at(v.id); }
const Graph::Node& Graph::cnode(Value v) const { return nodes_.at(v.id); }

Tensor& Graph::ensure_grad(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.grad_alloc) {
        n.grad = Tensor::zeros(n.out.shape());
        n.grad_alloc = true;
    }
    return n.grad;
}

Value Graph::input(Tensor t) {
    Node n;
    n.op = OpKind::Input;
    n.out = std::move(t);
    return push(std::move(n));
}

Value Graph::param(const std::string& name) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return Value{it->second};
    if (!params_) throw ContractError("graph has no bound ParamStore; param '" + name + "'");
    auto pit = params_->find(name);
    if (pit == params_->end()) throw ContractError("unknown parameter '" + name + "'");
    Node n;
    n.op = OpKind::Param;
    n.out = pit->second;
    n.param_name = name;
    Value v = push(std::move(n));
    param_nodes_.emplace(name, v.id);
    return v;
}

Value Graph::add(Value a, Value b) {
    const Tensor& ta = cnode(a).out;
    const Tensor& tb = cnode(b).out;
    require_same_shape(ta, tb, "add");
    Node n;
    n.op = OpKind::Add;
    n.inputs = {a.id, b.id};
    n.out = ta;
    for (std::size_t i = 0; i < n.out.size(); ++i) n.out[i] += tb[i];
    return push(std::move(n));
}

Value Graph::add_n(const std::vector<Value>& terms) {
    if (terms.empty()) throw ContractError("add_n: empty term list");
    if (terms.size() == 1) return terms[0];
    Node n;
    n.op = OpKind::AddN;
    n.out = cnode(terms[0]).out;
    n.inputs.reserve(terms.size());
    n.inputs.push_back(terms[0].id);
    for (std::size_t t = 1; t < terms.size(); ++t) {
        const Tensor& tt = cnode(terms[t]).out;
        require_same_shape(n.out, tt, "add_n");
        for (std::size_t i = 0; i < n.out.size(); ++i) n.out[i] += tt[i];
        n.inputs.push_back(terms[t].id);
    }
    return push(std::move(n));
}

Value Graph::sub(Value a, Value b) {
    const Tensor& ta = cnode(a).out;
    const Tensor& tb = cnode(b).out;
    require_same_shape(ta, tb, "sub");
    Node n;
    n.op = OpKind::Sub;
    n.inputs = {a.id, b.id};
    n.out = ta;
    for (std::size_t i = 0; i < n.out.size(); ++i) n.out[i] -= tb[i];
    return push(std::move(n));
}

Value Graph::mul(Value a, Value b) {
    const Tensor& ta = cnode(a).out;
    const Tensor& tb = cnode(b).out;
    require_same_shape(ta, tb, "mul");
    Node n;
    n.op = OpKind::Mul;
    n.inputs = {a.id, b.id};
    n.out = ta;
    for (std::size_t i = 0; i < n.out.size(); ++i) n.out[i] *= tb[i];
    return push(std::move(n));
}

Value Graph::scale(Value a, double factor) {
    Node n;
    n.op = OpKind::Scale;
    n.inputs = {a.id};
    n.factor = factor;
    n.out = cnode(a).out;
    for (std::size_t i = 0; i < n.out.size(); ++i) n.out[i] *= factor;
    return push(std::move(n));
}

Value Graph::matmul(Value a, Value b) {
    const Tensor& ta = cnode(a).out;
    const Tensor& tb = cnode(b).out;
    const bool a_vec = ta.rank() == 1;
    const bool b_vec = tb.rank() == 1;
    const std::size_t m = a_vec ? 1 : ta.dim(0);
    const std::size_t k = a_vec ? ta.dim(0) : ta.dim(1);
    const std::size_t k2 = b_vec ? tb.dim(0) : tb.dim(0);
    const std::size_t p = b_vec ? 1 : tb.dim(1);
    if (k != k2) {
        throw DimensionError("matmul: inner dimensions disagree, " + ta.shape_str() +
                             " vs " + tb.shape_str());
    }
    std::vector<std::size_t> out_shape;
    if (a_vec && b_vec) out_shape = {1};
    else if (a_vec) out_shape = {p};
    else if (b_vec) out_shape = {m};
    else out_shape = {m, p};
    Node n;
    n.op = OpKind::MatMul;
    n.inputs = {a.id, b.id};
    n.out = Tensor::zeros(out_shape);
    const double* A = ta.data();
    const double* B = tb.data();
    double* C = n.out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = A[i * k + kk];
            if (av == 0.0) continue;
            const double* Brow = B + kk * p;
            double* Crow = C + i * p;
            for (std::size_t j = 0; j < p; ++j) Crow[j] += av * Brow[j];
        }
    }
    return push(std::move(n));
}

Value Graph::add_bias(Value x, Value b) {
    const Tensor& tx = cnode(x).out;
    const Tensor& tb = cnode(b).out;
    if (tx.rank() == 1) return add(x, b);
    if (tb.rank() != 1 || tb.dim(0) != tx.cols()) {
        throw DimensionError("add_bias: bias " + tb.shape_str() + " does not match " +
                             tx.shape_str());
    }
    Node n;
    n.op = OpKind::AddBias;
    n.inputs = {x.id, b.id};
    n.out = tx;
    for (std::size_t r = 0; r < tx.rows(); ++r)
        for (std::size_t c = 0; c < tx.cols(); ++c) n.out.at(r, c) += tb[c];
    return push(std::move(n));
}

Value Graph::sigmoid(Value a) {
    Node n;
    n.op = OpKind::Sigmoid;
    n.inputs = {a.id};
    n.out = cnode(a).out;
    for (std::size_t i = 0; i < n.out.size(); ++i) n.out[i] = sigmoid_clamped(n.out[i]);
    return push(std::move(n));
}

Value Graph::tanh(Value a) {
    Node n;
    n.op = OpKind::Tanh;
    n.inputs = {a.id};
    n.out = cnode(a).out;
    for (std::size_t i = 0; i < n.out.size(); ++i) n.out[i] = std::tanh(n.out[i]);
    return push(std::move(n));
}

Value Graph::relu(Value a) {
    Node n;
    n.op = OpKind::Relu;
    n.inputs = {a.id};
    n.out = cnode(a).out;
    for (std::size_t i = 0; i < n.out.size(); ++i) n.out[i] = std::max(0.0, n.out[i]);
    return push(std::move(n));
}

Value Graph::softmax_masked(Value logits, const std::vector<bool>& mask) {
    const Tensor& tl = cnode(logits).out;
    if (tl.rank() != 1) throw DimensionError("softmax: expected 1-D logits, got " + tl.shape_str());
    if (mask.size() != tl.dim(0)) {
        throw DimensionError("softmax: mask length " + std::to_string(mask.size()) +
                             " vs logits " + tl.shape_str());
    }
    double max_kept = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) max_kept = std::max(max_kept, tl[i]);
    if (!std::isfinite(max_kept) && max_kept < 0) {
        throw DegenerateInputError("softmax: all positions masked out");
    }
    Node n;
    n.op = OpKind::SoftmaxMasked;
    n.inputs = {logits.id};
    n.mask.assign(mask.begin(), mask.end());
    n.out = Tensor::zeros({tl.dim(0)});
    double denom = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        n.out[i] = std::exp(tl[i] - max_kept);
        denom += n.out[i];
    }
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) n.out[i] /= denom;
    return push(std::move(n));
}

Value Graph::softmax(Value logits) {
    const Tensor& tl = cnode(logits).out;
    return softmax_masked(logits, std::vector<bool>(tl.size(), true));
}

Value Graph::sum(Value a) {
    Node n;
    n.op = OpKind::Sum;
    n.inputs = {a.id};
    double s = 0.0;
    for (std::size_t i = 0; i < cnode(a).out.size(); ++i) s += cnode(a).out[i];
    n.out = Tensor::scalar(s);
    return push(std::move(n));
}

Value Graph::concat(Value a, Value b) {
    const Tensor& ta = cnode(a).out;
    const Tensor& tb = cnode(b).out;
    if (ta.rank() != 1 || tb.rank() != 1)
        throw DimensionError("concat: expects 1-D operands");
    Node n;
    n.op = OpKind::Concat;
    n.inputs = {a.id, b.id};
    std::vector<double> vals(ta.values());
    vals.insert(vals.end(), tb.values().begin(), tb.values().end());
    n.out = Tensor({ta.size() + tb.size()}, std::move(vals));
    return push(std::move(n));
}

Value Graph::stack(const std::vector<Value>& rows) {
    if (rows.empty()) throw ContractError("stack: empty row list");
    const std::size_t c = cnode(rows[0]).out.size();
    Node n;
    n.op = OpKind::Stack;
    n.out = Tensor::zeros({rows.size(), c});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Tensor& tr = cnode(rows[r]).out;
        if (tr.rank() != 1 || tr.size() != c)
            throw DimensionError("stack: row " + std::to_string(r) + " has shape " + tr.shape_str());
        std::copy(tr.data(), tr.data() + c, n.out.data() + r * c);
        n.inputs.push_back(rows[r].id);
    }
    return push(std::move(n));
}

Value Graph::rows(Value matrix, const std::vector<std::size_t>& ids) {
    const Tensor& tm = cnode(matrix).out;
    if (tm.rank() != 2) throw DimensionError("rows: expects 2-D matrix, got " + tm.shape_str());
    Node n;
    n.op = OpKind::Rows;
    n.inputs = {matrix.id};
    n.ids = ids;
    n.out = Tensor::zeros({ids.size(), tm.cols()});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= tm.rows())
            throw DimensionError("rows: index " + std::to_string(ids[r]) + " out of range");
        std::copy(tm.data() + ids[r] * tm.cols(), tm.data() + (ids[r] + 1) * tm.cols(),
                  n.out.data() + r * tm.cols());
    }
    return push(std::move(n));
}

Value Graph::row(Value matrix, std::size_t r) {
    const Tensor& tm = cnode(matrix).out;
    if (tm.rank() != 2) throw DimensionError("row: expects 2-D matrix, got " + tm.shape_str());
    if (r >= tm.rows()) throw DimensionError("row: index " + std::to_string(r) + " out of range");
    Node n;
    n.op = OpKind::Row;
    n.inputs = {matrix.id};
    n.ids = {r};
    n.out = Tensor({tm.cols()},
                   std::vector<double>(tm.data() + r * tm.cols(), tm.data() + (r + 1) * tm.cols()));
    return push(std::move(n));
}

Value Graph::broadcast(Value scalar, std::size_t len) {
    const Tensor& ts = cnode(scalar).out;
    if (ts.size() != 1) throw DimensionError("broadcast: expects a scalar, got " + ts.shape_str());
    Node n;
    n.op = OpKind::Broadcast;
    n.inputs = {scalar.id};
    n.out = Tensor::full({len}, ts[0]);
    return push(std::move(n));
}

const Tensor& Graph::value(Value v) const { return cnode(v).out; }

const Tensor& Graph::grad(Value v) const {
    const Node& n = cnode(v);
    if (n.grad_alloc) return n.grad;
    if (zero_grad_.size() != n.out.size() || !(zero_grad_.shape() == n.out.shape()))
        const_cast<Graph*>(this)->zero_grad_ = Tensor::zeros(n.out.shape());
    return zero_grad_;
}

GradientStore Graph::backward(Value root) {
    Node& r = node(root);
    if (r.out.size() != 1) {
        throw ContractError("backward: root must be scalar, got shape " + r.out.shape_str());
    }
    ensure_grad(root.id)[0] = 1.0;
    for (std::uint32_t id = root.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.grad_alloc) continue;
        const Tensor& g = n.grad;
        switch (n.op) {
            case OpKind::Input:
            case OpKind::Param:
                break;
            case OpKind::Add: {
                Tensor& ga = ensure_grad(n.inputs[0]);
                Tensor& gb = ensure_grad(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case OpKind::AddN: {
                for (std::uint32_t in : n.inputs) {
                    Tensor& gi = ensure_grad(in);
                    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                }
                break;
            }
            case OpKind::Sub: {
                Tensor& ga = ensure_grad(n.inputs[0]);
                Tensor& gb = ensure_grad(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                break;
            }
            case OpKind::Mul: {
                const Tensor& a = nodes_[n.inputs[0]].out;
                const Tensor& b = nodes_[n.inputs[1]].out;
                Tensor& ga = ensure_grad(n.inputs[0]);
                Tensor& gb = ensure_grad(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * b[i];
                    gb[i] += g[i] * a[i];
                }
                break;
            }
            case OpKind::Scale: {
                Tensor& ga = ensure_grad(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.factor;
                break;
            }
            case OpKind::MatMul: {
                const Tensor& ta = nodes_[n.inputs[0]].out;
                const Tensor& tb = nodes_[n.inputs[1]].out;
                const bool a_vec = ta.rank() == 1;
                const std::size_t m = a_vec ? 1 : ta.dim(0);
                const std::size_t k = a_vec ? ta.dim(0) : ta.dim(1);
                const std::size_t p = tb.rank() == 1 ? 1 : tb.dim(1);
                Tensor& ga = ensure_grad(n.inputs[0]);
                Tensor& gb = ensure_grad(n.inputs[1]);
                const double* A = ta.data();
                const double* B = tb.data();
                const double* G = g.data();
                // dA = G * B^T ; dB = A^T * G
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < p; ++j) acc += G[i * p + j] * B[kk * p + j];
                        ga[i * k + kk] += acc;
                    }
                }
                for (std::size_t kk = 0; kk < k; ++kk) {
                    for (std::size_t j = 0; j < p; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i) acc += A[i * k + kk] * G[i * p + j];
                        gb[kk * p + j] += acc;
                    }
                }
                break;
            }
            case OpKind::AddBias: {
                const Tensor& tx = nodes_[n.inputs[0]].out;
                Tensor& gx = ensure_grad(n.inputs[0]);
                Tensor& gb = ensure_grad(n.inputs[1]);
                const std::size_t cols = tx.cols();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += g[i];
                    gb[i % cols] += g[i];
                }
                break;
            }
            case OpKind::Sigmoid: {
                Tensor& ga = ensure_grad(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = n.out[i];
                    ga[i] += g[i] * y * (1.0 - y);
                }
                break;
            }
            case OpKind::Tanh: {
                Tensor& ga = ensure_grad(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = n.out[i];
                    ga[i] += g[i] * (1.0 - y * y);
                }
                break;
            }
            case OpKind::Relu: {
                const Tensor& a = nodes_[n.inputs[0]].out;
                Tensor& ga = ensure_grad(n.inputs[0]);
                // Subgradient convention: exactly 0 at the kink.
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (a[i] > 0.0) ga[i] += g[i];
                break;
            }
            case OpKind::SoftmaxMasked: {
                Tensor& ga = ensure_grad(n.inputs[0]);
                double dot = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (n.mask[i]) dot += g[i] * n.out[i];
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (n.mask[i]) ga[i] += n.out[i] * (g[i] - dot);
                break;
            }
            case OpKind::Sum: {
                Tensor& ga = ensure_grad(n.inputs[0]);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                break;
            }
            case OpKind::Concat: {
                Tensor& ga = ensure_grad(n.inputs[0]);
                Tensor& gb = ensure_grad(n.inputs[1]);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[ga.size() + i];
                break;
            }
            case OpKind::Stack: {
                const std::size_t c = n.out.cols();
                for (std::size_t r = 0; r < n.inputs.size(); ++r) {
                    Tensor& gr = ensure_grad(n.inputs[r]);
                    for (std::size_t j = 0; j < c; ++j) gr[j] += g[r * c + j];
                }
                break;
            }
            case OpKind::Rows: {
                Tensor& gm = ensure_grad(n.inputs[0]);
                const std::size_t c = n.out.cols();
                for (std::size_t r = 0; r < n.ids.size(); ++r)
                    for (std::size_t j = 0; j < c; ++j) gm[n.ids[r] * c + j] += g[r * c + j];
                break;
            }
            case OpKind::Row: {
                Tensor& gm = ensure_grad(n.inputs[0]);
                const std::size_t c = n.out.size();
                for (std::size_t j = 0; j < c; ++j) gm[n.ids[0] * c + j] += g[j];
                break;
            }
            case OpKind::Broadcast: {
                Tensor& gs = ensure_grad(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gs[0] += g[i];
                break;
            }
        }
    }
    GradientStore store;
    for (const auto& [name, id] : param_nodes_) {
        const Node& pn = nodes_[id];
        if (pn.grad_alloc) store.emplace(name, pn.grad);
    }
    return store;
}

GradientStore Graph::finite_difference_gradient(
    const std::function<double(const ParamStore&)>& f, const ParamStore& params,
    double eps) {
    if (!(eps > 0.0)) throw ContractError("finite_difference_gradient: eps must be > 0");
    GradientStore store;
    ParamStore work = params;
    for (auto& [name, tensor] : work) {
        Tensor g = Tensor::zeros(tensor.shape());
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            const double orig = tensor[i];
            tensor[i] = orig + eps;
            const double fp = f(work);
            tensor[i] = orig - eps;
            const double fm = f(work);
            tensor[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericError("finite_difference_gradient: non-finite value at '" +
                                   name + "'[" + std::to_string(i) + "]");
            }
            g[i] = (fp - fm) / (2.0 * eps);
        }
        store.emplace(name, std::move(g));
    }
    return store;
}

}  // namespace smlstm
