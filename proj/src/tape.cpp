#include "sidrec/tape.hpp"

#include <algorithm>
#include <cmath>

namespace sidrec::num {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw Error(msg);
}

}  // namespace

Tape::Id Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> bwd) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = requires_grad ? std::move(bwd) : nullptr;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

Tensor& Tape::grad_buf(Id id) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

void Tape::check_finite(Id id, const char* op) const {
    for (double v : nodes_[id].value.data) {
        if (!std::isfinite(v)) throw Error(std::string(op) + ": non-finite value produced");
    }
}

Tape::Id Tape::leaf(Tensor value, bool requires_grad) {
    for (double v : value.data) {
        if (!std::isfinite(v)) throw Error("leaf: non-finite input value");
    }
    return push(std::move(value), requires_grad, nullptr);
}

Tape::Id Tape::matmul(Id a, Id b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    require(A.rank() == 2 && B.rank() == 2 && A.shape[1] == B.shape[0],
            "matmul: incompatible shapes " + A.shape_str() + " x " + B.shape_str());
    size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Tensor C = Tensor::zeros({m, n});
    for (size_t i = 0; i < m; ++i) {
        const double* arow = &A.data[i * k];
        double* crow = &C.data[i * n];
        for (size_t kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            const double* brow = &B.data[kk * n];
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, b, out, m, k, n](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        const Tensor& A2 = t.nodes_[a].value;
        const Tensor& B2 = t.nodes_[b].value;
        if (t.nodes_[a].requires_grad) {
            Tensor& dA = t.grad_buf(a);  // dA = G * B^T
            for (size_t i = 0; i < m; ++i) {
                const double* grow = &G.data[i * n];
                double* darow = &dA.data[i * k];
                for (size_t kk = 0; kk < k; ++kk) {
                    const double* brow = &B2.data[kk * n];
                    double acc = 0.0;
                    for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    darow[kk] += acc;
                }
            }
        }
        if (t.nodes_[b].requires_grad) {
            Tensor& dB = t.grad_buf(b);  // dB = A^T * G
            for (size_t i = 0; i < m; ++i) {
                const double* arow = &A2.data[i * k];
                const double* grow = &G.data[i * n];
                for (size_t kk = 0; kk < k; ++kk) {
                    double av = arow[kk];
                    if (av == 0.0) continue;
                    double* dbrow = &dB.data[kk * n];
                    for (size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                }
            }
        }
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "matmul");
    return out;
}

Tape::Id Tape::add(Id a, Id b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    if (A.same_shape(B)) {
        Tensor C = A;
        for (size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
        Id out = push(std::move(C), rg, nullptr);
        nodes_[out].backward = [a, b, out](Tape& t) {
            const Tensor& G = t.nodes_[out].grad;
            if (t.nodes_[a].requires_grad) {
                Tensor& dA = t.grad_buf(a);
                for (size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i];
            }
            if (t.nodes_[b].requires_grad) {
                Tensor& dB = t.grad_buf(b);
                for (size_t i = 0; i < G.size(); ++i) dB.data[i] += G.data[i];
            }
        };
        if (!rg) nodes_[out].backward = nullptr;
        check_finite(out, "add");
        return out;
    }
    // row broadcast: [m,n] + [n]
    require(A.rank() == 2 && B.rank() == 1 && A.shape[1] == B.shape[0],
            "add: incompatible shapes " + A.shape_str() + " + " + B.shape_str());
    size_t m = A.shape[0], n = A.shape[1];
    Tensor C = A;
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) C.data[i * n + j] += B.data[j];
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, b, out, m, n](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        if (t.nodes_[a].requires_grad) {
            Tensor& dA = t.grad_buf(a);
            for (size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i];
        }
        if (t.nodes_[b].requires_grad) {
            Tensor& dB = t.grad_buf(b);
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) dB.data[j] += G.data[i * n + j];
        }
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "add");
    return out;
}

Tape::Id Tape::sub(Id a, Id b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    require(A.same_shape(B), "sub: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Tensor C = A;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] -= B.data[i];
    bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, b, out](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        if (t.nodes_[a].requires_grad) {
            Tensor& dA = t.grad_buf(a);
            for (size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i];
        }
        if (t.nodes_[b].requires_grad) {
            Tensor& dB = t.grad_buf(b);
            for (size_t i = 0; i < G.size(); ++i) dB.data[i] -= G.data[i];
        }
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "sub");
    return out;
}

Tape::Id Tape::mul(Id a, Id b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    require(A.same_shape(B), "mul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Tensor C = A;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] *= B.data[i];
    bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, b, out](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        const Tensor& A2 = t.nodes_[a].value;
        const Tensor& B2 = t.nodes_[b].value;
        if (t.nodes_[a].requires_grad) {
            Tensor& dA = t.grad_buf(a);
            for (size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i] * B2.data[i];
        }
        if (t.nodes_[b].requires_grad) {
            Tensor& dB = t.grad_buf(b);
            for (size_t i = 0; i < G.size(); ++i) dB.data[i] += G.data[i] * A2.data[i];
        }
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "mul");
    return out;
}

Tape::Id Tape::scale(Id a, double c) {
    Tensor C = nodes_[a].value;
    for (double& v : C.data) v *= c;
    bool rg = nodes_[a].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, out, c](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        Tensor& dA = t.grad_buf(a);
        for (size_t i = 0; i < G.size(); ++i) dA.data[i] += c * G.data[i];
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "scale");
    return out;
}

Tape::Id Tape::add_scalar(Id a, double c) {
    Tensor C = nodes_[a].value;
    for (double& v : C.data) v += c;
    bool rg = nodes_[a].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, out](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        Tensor& dA = t.grad_buf(a);
        for (size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i];
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "add_scalar");
    return out;
}

Tape::Id Tape::tanh_op(Id a) {
    Tensor C = nodes_[a].value;
    for (double& v : C.data) v = std::tanh(v);
    bool rg = nodes_[a].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, out](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        const Tensor& Y = t.nodes_[out].value;
        Tensor& dA = t.grad_buf(a);
        for (size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i] * (1.0 - Y.data[i] * Y.data[i]);
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "tanh");
    return out;
}

Tape::Id Tape::relu(Id a) {
    Tensor C = nodes_[a].value;
    for (double& v : C.data) v = v > 0.0 ? v : 0.0;
    bool rg = nodes_[a].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, out](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        const Tensor& X = t.nodes_[a].value;
        Tensor& dA = t.grad_buf(a);
        for (size_t i = 0; i < G.size(); ++i)
            if (X.data[i] > 0.0) dA.data[i] += G.data[i];
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "relu");
    return out;
}

Tape::Id Tape::exp_op(Id a) {
    Tensor C = nodes_[a].value;
    for (double& v : C.data) v = std::exp(v);
    bool rg = nodes_[a].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, out](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        const Tensor& Y = t.nodes_[out].value;
        Tensor& dA = t.grad_buf(a);
        for (size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i] * Y.data[i];
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "exp");
    return out;
}

Tape::Id Tape::log_op(Id a) {
    Tensor C = nodes_[a].value;
    for (double& v : C.data) v = std::log(v);
    bool rg = nodes_[a].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, out](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        const Tensor& X = t.nodes_[a].value;
        Tensor& dA = t.grad_buf(a);
        for (size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i] / X.data[i];
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "log");
    return out;
}

Tape::Id Tape::clamp(Id a, double lo, double hi) {
    require(lo <= hi, "clamp: lo > hi");
    Tensor C = nodes_[a].value;
    for (double& v : C.data) v = std::min(std::max(v, lo), hi);
    bool rg = nodes_[a].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, out, lo, hi](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        const Tensor& X = t.nodes_[a].value;
        Tensor& dA = t.grad_buf(a);
        for (size_t i = 0; i < G.size(); ++i)
            if (X.data[i] >= lo && X.data[i] <= hi) dA.data[i] += G.data[i];
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "clamp");
    return out;
}

Tape::Id Tape::min_elem(Id a, Id b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    require(A.same_shape(B), "min: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Tensor C = A;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] = std::min(A.data[i], B.data[i]);
    bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, b, out](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        const Tensor& A2 = t.nodes_[a].value;
        const Tensor& B2 = t.nodes_[b].value;
        for (size_t i = 0; i < G.size(); ++i) {
            if (A2.data[i] <= B2.data[i]) {
                if (t.nodes_[a].requires_grad) t.grad_buf(a).data[i] += G.data[i];
            } else {
                if (t.nodes_[b].requires_grad) t.grad_buf(b).data[i] += G.data[i];
            }
        }
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "min");
    return out;
}

Tape::Id Tape::sum(Id a) {
    double s = 0.0;
    for (double v : nodes_[a].value.data) s += v;
    bool rg = nodes_[a].requires_grad;
    Id out = push(Tensor::scalar(s), rg, nullptr);
    nodes_[out].backward = [a, out](Tape& t) {
        double g = t.nodes_[out].grad.data[0];
        Tensor& dA = t.grad_buf(a);
        for (double& v : dA.data) v += g;
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "sum");
    return out;
}

Tape::Id Tape::mean(Id a) {
    size_t n = nodes_[a].value.size();
    require(n > 0, "mean: empty tensor");
    double s = 0.0;
    for (double v : nodes_[a].value.data) s += v;
    s /= double(n);
    bool rg = nodes_[a].requires_grad;
    Id out = push(Tensor::scalar(s), rg, nullptr);
    nodes_[out].backward = [a, out, n](Tape& t) {
        double g = t.nodes_[out].grad.data[0] / double(n);
        Tensor& dA = t.grad_buf(a);
        for (double& v : dA.data) v += g;
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "mean");
    return out;
}

Tape::Id Tape::gather_rows(Id matrix, std::vector<size_t> idx) {
    const Tensor& A = nodes_[matrix].value;
    require(A.rank() == 2, "gather: expected matrix, got " + A.shape_str());
    size_t n = A.shape[1];
    for (size_t i : idx)
        require(i < A.shape[0], "gather: row index " + std::to_string(i) + " out of range for " + A.shape_str());
    Tensor C = Tensor::zeros({idx.size(), n});
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(&A.data[idx[r] * n], &A.data[idx[r] * n] + n, &C.data[r * n]);
    bool rg = nodes_[matrix].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [matrix, out, idx = std::move(idx), n](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        Tensor& dA = t.grad_buf(matrix);
        for (size_t r = 0; r < idx.size(); ++r)
            for (size_t j = 0; j < n; ++j) dA.data[idx[r] * n + j] += G.data[r * n + j];
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "gather");
    return out;
}

Tape::Id Tape::concat_rows(Id a, Id b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    require(A.rank() == 2 && B.rank() == 2 && A.shape[1] == B.shape[1],
            "concat: incompatible shapes " + A.shape_str() + " | " + B.shape_str());
    size_t n = A.shape[1], ma = A.shape[0], mb = B.shape[0];
    Tensor C = Tensor::zeros({ma + mb, n});
    std::copy(A.data.begin(), A.data.end(), C.data.begin());
    std::copy(B.data.begin(), B.data.end(), C.data.begin() + ma * n);
    bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, b, out, ma, mb, n](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        if (t.nodes_[a].requires_grad) {
            Tensor& dA = t.grad_buf(a);
            for (size_t i = 0; i < ma * n; ++i) dA.data[i] += G.data[i];
        }
        if (t.nodes_[b].requires_grad) {
            Tensor& dB = t.grad_buf(b);
            for (size_t i = 0; i < mb * n; ++i) dB.data[i] += G.data[ma * n + i];
        }
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "concat");
    return out;
}

Tape::Id Tape::transpose(Id a) {
    const Tensor& A = nodes_[a].value;
    require(A.rank() == 2, "transpose: expected matrix, got " + A.shape_str());
    size_t m = A.shape[0], n = A.shape[1];
    Tensor C = Tensor::zeros({n, m});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) C.data[j * m + i] = A.data[i * n + j];
    bool rg = nodes_[a].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [a, out, m, n](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        Tensor& dA = t.grad_buf(a);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) dA.data[i * n + j] += G.data[j * m + i];
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "transpose");
    return out;
}

Tape::Id Tape::row_softmax(Id scores, bool causal) {
    const Tensor& A = nodes_[scores].value;
    require(A.rank() == 2, "softmax: expected matrix, got " + A.shape_str());
    if (causal)
        require(A.shape[0] == A.shape[1], "softmax: causal mask needs square scores, got " + A.shape_str());
    size_t m = A.shape[0], n = A.shape[1];
    Tensor C = Tensor::zeros({m, n});
    for (size_t i = 0; i < m; ++i) {
        size_t lim = causal ? i + 1 : n;
        double mx = A.data[i * n];
        for (size_t j = 1; j < lim; ++j) mx = std::max(mx, A.data[i * n + j]);
        double z = 0.0;
        for (size_t j = 0; j < lim; ++j) {
            double e = std::exp(A.data[i * n + j] - mx);
            C.data[i * n + j] = e;
            z += e;
        }
        for (size_t j = 0; j < lim; ++j) C.data[i * n + j] /= z;
    }
    bool rg = nodes_[scores].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [scores, out, m, n, causal](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        const Tensor& Y = t.nodes_[out].value;
        Tensor& dA = t.grad_buf(scores);
        for (size_t i = 0; i < m; ++i) {
            size_t lim = causal ? i + 1 : n;
            double dot = 0.0;
            for (size_t j = 0; j < lim; ++j) dot += G.data[i * n + j] * Y.data[i * n + j];
            for (size_t j = 0; j < lim; ++j)
                dA.data[i * n + j] += Y.data[i * n + j] * (G.data[i * n + j] - dot);
        }
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "softmax");
    return out;
}

Tape::Id Tape::gather_log_softmax(Id logits, std::vector<size_t> targets) {
    const Tensor& A = nodes_[logits].value;
    size_t m, n;
    if (A.rank() == 2) {
        m = A.shape[0];
        n = A.shape[1];
    } else if (A.rank() == 1) {
        m = 1;
        n = A.shape[0];
    } else {
        throw Error("log_softmax: expected matrix or row, got " + A.shape_str());
    }
    require(targets.size() == m, "log_softmax: targets count " + std::to_string(targets.size()) +
                                     " != rows " + std::to_string(m));
    for (size_t y : targets)
        require(y < n, "log_softmax: target " + std::to_string(y) + " out of range for " + A.shape_str());
    Tensor C = Tensor::zeros({m});
    for (size_t i = 0; i < m; ++i) {
        double mx = A.data[i * n];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, A.data[i * n + j]);
        double z = 0.0;
        for (size_t j = 0; j < n; ++j) z += std::exp(A.data[i * n + j] - mx);
        C.data[i] = A.data[i * n + targets[i]] - mx - std::log(z);
    }
    bool rg = nodes_[logits].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [logits, out, targets = std::move(targets), m, n](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        const Tensor& A2 = t.nodes_[logits].value;
        Tensor& dA = t.grad_buf(logits);
        for (size_t i = 0; i < m; ++i) {
            double g = G.data[i];
            if (g == 0.0) continue;
            double mx = A2.data[i * n];
            for (size_t j = 1; j < n; ++j) mx = std::max(mx, A2.data[i * n + j]);
            double z = 0.0;
            for (size_t j = 0; j < n; ++j) z += std::exp(A2.data[i * n + j] - mx);
            for (size_t j = 0; j < n; ++j) {
                double p = std::exp(A2.data[i * n + j] - mx) / z;
                dA.data[i * n + j] += g * ((j == targets[i] ? 1.0 : 0.0) - p);
            }
        }
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "log_softmax");
    return out;
}

Tape::Id Tape::layer_norm(Id x, Id gain, Id bias, double eps) {
    require(eps > 0.0, "layer_norm: eps must be > 0");
    const Tensor& X = nodes_[x].value;
    const Tensor& Gn = nodes_[gain].value;
    const Tensor& Bs = nodes_[bias].value;
    size_t m, n;
    if (X.rank() == 2) {
        m = X.shape[0];
        n = X.shape[1];
    } else if (X.rank() == 1) {
        m = 1;
        n = X.shape[0];
    } else {
        throw Error("layer_norm: expected matrix or row, got " + X.shape_str());
    }
    require(Gn.size() == n && Bs.size() == n,
            "layer_norm: gain/bias size mismatch with " + X.shape_str());
    Tensor C = X;
    std::vector<double> inv_std(m), mu(m);
    for (size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (size_t j = 0; j < n; ++j) s += X.data[i * n + j];
        mu[i] = s / double(n);
        double var = 0.0;
        for (size_t j = 0; j < n; ++j) {
            double d = X.data[i * n + j] - mu[i];
            var += d * d;
        }
        var /= double(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (size_t j = 0; j < n; ++j)
            C.data[i * n + j] = (X.data[i * n + j] - mu[i]) * inv_std[i] * Gn.data[j] + Bs.data[j];
    }
    bool rg = nodes_[x].requires_grad || nodes_[gain].requires_grad || nodes_[bias].requires_grad;
    Id out = push(std::move(C), rg, nullptr);
    nodes_[out].backward = [x, gain, bias, out, m, n, mu = std::move(mu),
                            inv_std = std::move(inv_std)](Tape& t) {
        const Tensor& G = t.nodes_[out].grad;
        const Tensor& X2 = t.nodes_[x].value;
        const Tensor& Gn2 = t.nodes_[gain].value;
        for (size_t i = 0; i < m; ++i) {
            double s1 = 0.0, s2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
            for (size_t j = 0; j < n; ++j) {
                double xhat = (X2.data[i * n + j] - mu[i]) * inv_std[i];
                double dxhat = G.data[i * n + j] * Gn2.data[j];
                s1 += dxhat;
                s2 += dxhat * xhat;
            }
            s1 /= double(n);
            s2 /= double(n);
            for (size_t j = 0; j < n; ++j) {
                double xhat = (X2.data[i * n + j] - mu[i]) * inv_std[i];
                double dxhat = G.data[i * n + j] * Gn2.data[j];
                if (t.nodes_[x].requires_grad)
                    t.grad_buf(x).data[i * n + j] += inv_std[i] * (dxhat - s1 - xhat * s2);
                if (t.nodes_[gain].requires_grad)
                    t.grad_buf(gain).data[j] += G.data[i * n + j] * xhat;
                if (t.nodes_[bias].requires_grad) t.grad_buf(bias).data[j] += G.data[i * n + j];
            }
        }
    };
    if (!rg) nodes_[out].backward = nullptr;
    check_finite(out, "layer_norm");
    return out;
}

Tape::Id Tape::softmax_cross_entropy(Id logits_row, size_t target) {
    Id lp = gather_log_softmax(logits_row, {target});
    return scale(sum(lp), -1.0);
}

void Tape::backward(Id scalar_output) {
    require(nodes_[scalar_output].value.size() == 1,
            "backward: output must be scalar, got " + nodes_[scalar_output].value.shape_str());
    grad_buf(scalar_output).data[0] = 1.0;
    for (size_t i = scalar_output + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.data.empty()) continue;
        n.backward(*this);
    }
}

std::pair<std::vector<Tensor>, std::vector<Tensor>> forward_backward(
    const BuildFn& fn, const std::vector<Tensor>& params, const std::vector<Tensor>& inputs) {
    Tape t;
    std::vector<Tape::Id> pids, iids;
    pids.reserve(params.size());
    for (const Tensor& p : params) pids.push_back(t.leaf(p, true));
    for (const Tensor& x : inputs) iids.push_back(t.leaf(x, false));
    std::vector<Tape::Id> outs = fn(t, pids, iids);
    if (outs.empty()) throw Error("forward_backward: function produced no outputs");
    t.backward(outs[0]);
    std::vector<Tensor> values, grads;
    for (Tape::Id o : outs) values.push_back(t.value(o));
    for (size_t i = 0; i < pids.size(); ++i) {
        const Tensor& g = t.grad(pids[i]);
        grads.push_back(g.data.empty() ? Tensor::zeros(params[i].shape) : g);
    }
    return {std::move(values), std::move(grads)};
}

double grad_check(const std::function<Tape::Id(Tape&, Tape::Id)>& build, const Tensor& point,
                  double step) {
    // analytic
    Tape t;
    Tape::Id p = t.leaf(point, true);
    Tape::Id out = build(t, p);
    t.backward(out);
    Tensor analytic = t.grad(p).data.empty() ? Tensor::zeros(point.shape) : t.grad(p);

    auto eval = [&](const Tensor& x) {
        Tape tt;
        Tape::Id pp = tt.leaf(x, false);
        Tape::Id oo = build(tt, pp);
        if (tt.value(oo).size() != 1) throw Error("grad_check: function must be scalar-valued");
        return tt.value(oo).data[0];
    };

    double max_err = 0.0;
    Tensor x = point;
    for (size_t i = 0; i < x.size(); ++i) {
        double orig = x.data[i];
        x.data[i] = orig + step;
        double fp = eval(x);
        x.data[i] = orig - step;
        double fm = eval(x);
        x.data[i] = orig;
        double numeric = (fp - fm) / (2.0 * step);
        double err = std::abs(analytic.data[i] - numeric) / std::max(1e-8, std::abs(numeric));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace sidrec::num
