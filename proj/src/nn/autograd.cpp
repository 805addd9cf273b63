#include "dim/autograd.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "dim/error.hpp"

namespace dim::ad {

// ---------------------------------------------------------------- ParamStore

ParamId ParamStore::add(const std::string& name, Matrix init) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter name " + name);
    ParamId id{params_.size()};
    Matrix grad = Matrix::Zero(init.rows(), init.cols());
    params_.push_back(Parameter{name, std::move(init), std::move(grad), true});
    index_[name] = id.index;
    return id;
}

ParamId ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter " + name);
    return ParamId{it->second};
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
}

void ParamStore::set_trainable_prefix(const std::string& prefix, bool trainable) {
    for (auto& p : params_) {
        if (p.name.compare(0, prefix.size(), prefix) == 0) p.trainable = trainable;
    }
}

void ParamStore::set_all_trainable(bool trainable) {
    for (auto& p : params_) p.trainable = trainable;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

// ---------------------------------------------------------------------- Tape

Var Tape::push(Matrix value, bool requires_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = record_ && requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::input(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::param(ParamStore& store, ParamId id) {
    auto& cache = param_cache_[&store];
    auto it = cache.find(id.index);
    if (it != cache.end()) return Var{it->second};
    const Parameter& p = store[id];
    Var v = push(p.value, p.trainable, nullptr);
    cache[id.index] = v.id;
    if (nodes_[v.id].requires_grad) bindings_.push_back(Binding{&store, id, v.id});
    return v;
}

Matrix& Tape::grad_ref(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0 && n.value.size() != 0) n.grad.setZero(n.value.rows(), n.value.cols());
    if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols()) {
        n.grad.setZero(n.value.rows(), n.value.cols());
    }
    return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
    if (!nodes_[v.id].requires_grad) return;
    grad_ref(v) += g;
}

void Tape::backward(Var loss) {
    if (!record_) throw InvalidArgument("backward() on a tape that does not record gradients");
    if (nodes_[loss.id].value.size() != 1) throw InvalidArgument("backward() needs a scalar loss");
    if (!nodes_[loss.id].requires_grad) return;
    grad_ref(loss)(0, 0) += 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
        n.backward(*this, i);
    }
    for (const auto& b : bindings_) {
        const Matrix& g = nodes_[b.var].grad;
        if (g.size() != 0) (*b.store)[b.id].grad += g;
    }
}

// ---------------------------------------------------------------- operations

namespace {

bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
    for (auto v : vs) {
        if (t.requires_grad(v)) return true;
    }
    return false;
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw InvalidArgument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()) + ")");
    }
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    if (A.cols() != B.rows()) throw InvalidArgument("matmul: inner dimension mismatch");
    Matrix out(A.rows(), B.cols());
    out.noalias() = A * B;
    return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& t, int self) {
        const Matrix& G = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad_ref(a).noalias() += G * t.value(b).transpose();
        if (t.requires_grad(b)) t.grad_ref(b).noalias() += t.value(a).transpose() * G;
    });
}

Var matmul_nt(Tape& t, Var a, Var b) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    if (A.cols() != B.cols()) throw InvalidArgument("matmul_nt: inner dimension mismatch");
    Matrix out(A.rows(), B.rows());
    out.noalias() = A * B.transpose();
    return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& t, int self) {
        const Matrix& G = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad_ref(a).noalias() += G * t.value(b);
        if (t.requires_grad(b)) t.grad_ref(b).noalias() += G.transpose() * t.value(a);
    });
}

Var transpose(Tape& t, Var a) {
    Matrix out = t.value(a).transpose();
    return t.push(std::move(out), t.requires_grad(a),
                  [a](Tape& t, int self) { t.grad_ref(a) += t.grad(Var{self}).transpose(); });
}

Var add(Tape& t, Var a, Var b) {
    check_same_shape(t.value(a), t.value(b), "add");
    Matrix out = t.value(a) + t.value(b);
    return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& t, int self) {
        const Matrix& G = t.grad(Var{self});
        t.accumulate(a, G);
        t.accumulate(b, G);
    });
}

Var sub(Tape& t, Var a, Var b) {
    check_same_shape(t.value(a), t.value(b), "sub");
    Matrix out = t.value(a) - t.value(b);
    return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& t, int self) {
        const Matrix& G = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad_ref(a) += G;
        if (t.requires_grad(b)) t.grad_ref(b) -= G;
    });
}

Var mul(Tape& t, Var a, Var b) {
    check_same_shape(t.value(a), t.value(b), "mul");
    Matrix out = t.value(a).cwiseProduct(t.value(b));
    return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& t, int self) {
        const Matrix& G = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad_ref(a) += G.cwiseProduct(t.value(b));
        if (t.requires_grad(b)) t.grad_ref(b) += G.cwiseProduct(t.value(a));
    });
}

Var scale(Tape& t, Var a, double s) {
    Matrix out = t.value(a) * s;
    return t.push(std::move(out), t.requires_grad(a),
                  [a, s](Tape& t, int self) { t.grad_ref(a) += t.grad(Var{self}) * s; });
}

Var add_row(Tape& t, Var a, Var row) {
    const Matrix& A = t.value(a);
    const Matrix& R = t.value(row);
    if (R.rows() != 1 || R.cols() != A.cols()) throw InvalidArgument("add_row: row shape mismatch");
    Matrix out = A.rowwise() + R.row(0);
    return t.push(std::move(out), any_grad(t, {a, row}), [a, row](Tape& t, int self) {
        const Matrix& G = t.grad(Var{self});
        if (t.requires_grad(a)) t.grad_ref(a) += G;
        if (t.requires_grad(row)) t.grad_ref(row) += G.colwise().sum();
    });
}

Var linear(Tape& t, Var x, Var weight, Var bias) {
    const Matrix& X = t.value(x);
    const Matrix& W = t.value(weight);
    const Matrix& B = t.value(bias);
    if (X.cols() != W.rows()) {
        throw InvalidArgument("linear: input width " + std::to_string(X.cols()) + " != weight rows " +
                              std::to_string(W.rows()));
    }
    if (B.rows() != 1 || B.cols() != W.cols()) throw InvalidArgument("linear: bias shape mismatch");
    Matrix out(X.rows(), W.cols());
    out.noalias() = X * W;
    out.rowwise() += B.row(0);
    return t.push(std::move(out), any_grad(t, {x, weight, bias}), [x, weight, bias](Tape& t, int self) {
        const Matrix& G = t.grad(Var{self});
        if (t.requires_grad(x)) t.grad_ref(x).noalias() += G * t.value(weight).transpose();
        if (t.requires_grad(weight)) t.grad_ref(weight).noalias() += t.value(x).transpose() * G;
        if (t.requires_grad(bias)) t.grad_ref(bias) += G.colwise().sum();
    });
}

Var gelu(Tape& t, Var a) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    const Matrix& X = t.value(a);
    Matrix out(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.size(); ++i) {
        const double x = X.data()[i];
        out.data()[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
    }
    return t.push(std::move(out), t.requires_grad(a), [a](Tape& t, int self) {
        const Matrix& X = t.value(a);
        const Matrix& G = t.grad(Var{self});
        Matrix& GA = t.grad_ref(a);
        for (Eigen::Index i = 0; i < X.size(); ++i) {
            const double x = X.data()[i];
            const double th = std::tanh(kC * (x + kA * x * x * x));
            const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * x * x);
            GA.data()[i] += G.data()[i] * d;
        }
    });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
    const Matrix& X = t.value(x);
    const Matrix& Gn = t.value(gain);
    const Matrix& Bs = t.value(bias);
    if (Gn.rows() != 1 || Gn.cols() != X.cols() || Bs.rows() != 1 || Bs.cols() != X.cols()) {
        throw InvalidArgument("layer_norm: parameter shape mismatch");
    }
    const Eigen::Index n = X.rows(), d = X.cols();
    auto xhat = std::make_shared<Matrix>(n, d);
    auto inv_std = std::make_shared<Vector>(n);
    Matrix out(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double mu = X.row(r).mean();
        const double var = (X.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)(r) = is;
        xhat->row(r) = (X.row(r).array() - mu) * is;
        out.row(r) = xhat->row(r).cwiseProduct(Gn.row(0)) + Bs.row(0);
    }
    return t.push(std::move(out), any_grad(t, {x, gain, bias}),
                  [x, gain, bias, xhat, inv_std](Tape& t, int self) {
                      const Matrix& G = t.grad(Var{self});
                      const Matrix& Gn = t.value(gain);
                      if (t.requires_grad(gain)) t.grad_ref(gain) += G.cwiseProduct(*xhat).colwise().sum();
                      if (t.requires_grad(bias)) t.grad_ref(bias) += G.colwise().sum();
                      if (t.requires_grad(x)) {
                          Matrix& GX = t.grad_ref(x);
                          const Eigen::Index d = G.cols();
                          for (Eigen::Index r = 0; r < G.rows(); ++r) {
                              RowVector dxhat = G.row(r).cwiseProduct(Gn.row(0));
                              const double m1 = dxhat.mean();
                              const double m2 = dxhat.cwiseProduct(xhat->row(r)).mean();
                              GX.row(r) += (*inv_std)(r) *
                                           (dxhat.array() - m1 - xhat->row(r).array() * m2).matrix();
                              (void)d;
                          }
                      }
                  });
}

namespace {
void softmax_row_inplace(Eigen::Ref<RowVector> row) {
    const double m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
}
}  // namespace

Var softmax_rows(Tape& t, Var a) {
    Matrix out = t.value(a);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        RowVector row = out.row(r);
        softmax_row_inplace(row);
        out.row(r) = row;
    }
    return t.push(std::move(out), t.requires_grad(a), [a](Tape& t, int self) {
        const Matrix& Y = t.value(Var{self});
        const Matrix& G = t.grad(Var{self});
        Matrix& GA = t.grad_ref(a);
        for (Eigen::Index r = 0; r < Y.rows(); ++r) {
            const double dot = G.row(r).dot(Y.row(r));
            GA.row(r) += Y.row(r).cwiseProduct((G.row(r).array() - dot).matrix());
        }
    });
}

Var attention(Tape& t, Var q, Var k, Var v, int heads, const std::vector<bool>& key_valid) {
    const Matrix& Q = t.value(q);
    const Matrix& K = t.value(k);
    const Matrix& V = t.value(v);
    const Eigen::Index d = Q.cols();
    if (heads < 1 || d % heads != 0) throw InvalidArgument("attention: heads must divide model width");
    if (K.cols() != d || V.cols() != d || K.rows() != V.rows()) {
        throw InvalidArgument("attention: q/k/v shape mismatch");
    }
    if (!key_valid.empty() && static_cast<Eigen::Index>(key_valid.size()) != K.rows()) {
        throw InvalidArgument("attention: key mask length mismatch");
    }
    const Eigen::Index dh = d / heads;
    const double sc = 1.0 / std::sqrt(double(dh));
    const Eigen::Index n = Q.rows(), m = K.rows();
    auto probs = std::make_shared<std::vector<Matrix>>(heads);
    Matrix out = Matrix::Zero(n, d);
    for (int h = 0; h < heads; ++h) {
        Matrix S(n, m);
        S.noalias() = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose();
        S *= sc;
        Matrix& P = (*probs)[h];
        P.setZero(n, m);
        for (Eigen::Index r = 0; r < n; ++r) {
            double mx = -std::numeric_limits<double>::infinity();
            for (Eigen::Index c = 0; c < m; ++c) {
                if (key_valid.empty() || key_valid[c]) mx = std::max(mx, S(r, c));
            }
            if (!std::isfinite(mx)) continue;  // no valid key: zero output
            double z = 0.0;
            for (Eigen::Index c = 0; c < m; ++c) {
                if (key_valid.empty() || key_valid[c]) {
                    P(r, c) = std::exp(S(r, c) - mx);
                    z += P(r, c);
                }
            }
            P.row(r) /= z;
        }
        out.middleCols(h * dh, dh).noalias() = P * V.middleCols(h * dh, dh);
    }
    return t.push(std::move(out), any_grad(t, {q, k, v}), [q, k, v, heads, dh, sc, probs](Tape& t, int self) {
        const Matrix& G = t.grad(Var{self});
        const Matrix& Q = t.value(q);
        const Matrix& K = t.value(k);
        const Matrix& V = t.value(v);
        const bool gq = t.requires_grad(q), gk = t.requires_grad(k), gv = t.requires_grad(v);
        for (int h = 0; h < heads; ++h) {
            const Matrix& P = (*probs)[h];
            const auto Gh = G.middleCols(h * dh, dh);
            if (gv) t.grad_ref(v).middleCols(h * dh, dh).noalias() += P.transpose() * Gh;
            if (!gq && !gk) continue;
            Matrix dP(P.rows(), P.cols());
            dP.noalias() = Gh * V.middleCols(h * dh, dh).transpose();
            Matrix dS = P.cwiseProduct(dP);
            const Vector rs = dS.rowwise().sum();
            dS -= P.cwiseProduct(rs.replicate(1, P.cols()));
            dS *= sc;
            if (gq) t.grad_ref(q).middleCols(h * dh, dh).noalias() += dS * K.middleCols(h * dh, dh);
            if (gk) t.grad_ref(k).middleCols(h * dh, dh).noalias() += dS.transpose() * Q.middleCols(h * dh, dh);
        }
    });
}

Var cross_entropy(Tape& t, Var logits, const std::vector<int>& targets) {
    const Matrix& Z = t.value(logits);
    if (static_cast<Eigen::Index>(targets.size()) != Z.rows()) {
        throw InvalidArgument("cross_entropy: one target per row required");
    }
    int count = 0;
    double total = 0.0;
    for (Eigen::Index r = 0; r < Z.rows(); ++r) {
        const int tgt = targets[r];
        if (tgt < 0) continue;
        if (tgt >= Z.cols()) throw InvalidArgument("cross_entropy: target out of range");
        const double mx = Z.row(r).maxCoeff();
        const double lse = mx + std::log((Z.row(r).array() - mx).exp().sum());
        total += lse - Z(r, tgt);
        ++count;
    }
    Matrix out(1, 1);
    out(0, 0) = count > 0 ? total / count : 0.0;
    return t.push(std::move(out), t.requires_grad(logits) && count > 0,
                  [logits, targets, count](Tape& t, int self) {
                      const double g = t.grad(Var{self})(0, 0) / count;
                      const Matrix& Z = t.value(logits);
                      Matrix& GZ = t.grad_ref(logits);
                      for (Eigen::Index r = 0; r < Z.rows(); ++r) {
                          const int tgt = targets[r];
                          if (tgt < 0) continue;
                          RowVector p = Z.row(r);
                          softmax_row_inplace(p);
                          p(tgt) -= 1.0;
                          GZ.row(r) += g * p;
                      }
                  });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
    const Eigen::Index rows = t.value(parts[0]).rows();
    Eigen::Index cols = 0;
    bool rg = false;
    for (auto p : parts) {
        if (t.value(p).rows() != rows) throw InvalidArgument("concat_cols: row mismatch");
        cols += t.value(p).cols();
        rg = rg || t.requires_grad(p);
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (auto p : parts) {
        out.middleCols(c, t.value(p).cols()) = t.value(p);
        c += t.value(p).cols();
    }
    return t.push(std::move(out), rg, [parts](Tape& t, int self) {
        const Matrix& G = t.grad(Var{self});
        Eigen::Index c = 0;
        for (auto p : parts) {
            const Eigen::Index w = t.value(p).cols();
            if (t.requires_grad(p)) t.grad_ref(p) += G.middleCols(c, w);
            c += w;
        }
    });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_rows: no inputs");
    const Eigen::Index cols = t.value(parts[0]).cols();
    Eigen::Index rows = 0;
    bool rg = false;
    for (auto p : parts) {
        if (t.value(p).cols() != cols) throw InvalidArgument("concat_rows: column mismatch");
        rows += t.value(p).rows();
        rg = rg || t.requires_grad(p);
    }
    Matrix out(rows, cols);
    Eigen::Index r = 0;
    for (auto p : parts) {
        out.middleRows(r, t.value(p).rows()) = t.value(p);
        r += t.value(p).rows();
    }
    return t.push(std::move(out), rg, [parts](Tape& t, int self) {
        const Matrix& G = t.grad(Var{self});
        Eigen::Index r = 0;
        for (auto p : parts) {
            const Eigen::Index h = t.value(p).rows();
            if (t.requires_grad(p) && h > 0) t.grad_ref(p) += G.middleRows(r, h);
            r += h;
        }
    });
}

Var slice_rows(Tape& t, Var a, Eigen::Index start, Eigen::Index count) {
    const Matrix& A = t.value(a);
    if (start < 0 || count < 0 || start + count > A.rows()) throw InvalidArgument("slice_rows: out of range");
    Matrix out = A.middleRows(start, count);
    return t.push(std::move(out), t.requires_grad(a), [a, start, count](Tape& t, int self) {
        t.grad_ref(a).middleRows(start, count) += t.grad(Var{self});
    });
}

Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count) {
    const Matrix& A = t.value(a);
    if (start < 0 || count < 0 || start + count > A.cols()) throw InvalidArgument("slice_cols: out of range");
    Matrix out = A.middleCols(start, count);
    return t.push(std::move(out), t.requires_grad(a), [a, start, count](Tape& t, int self) {
        t.grad_ref(a).middleCols(start, count) += t.grad(Var{self});
    });
}

Var gather_rows(Tape& t, Var a, const std::vector<int>& rows) {
    const Matrix& A = t.value(a);
    Matrix out(static_cast<Eigen::Index>(rows.size()), A.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= A.rows()) throw InvalidArgument("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = A.row(rows[i]);
    }
    return t.push(std::move(out), t.requires_grad(a), [a, rows](Tape& t, int self) {
        const Matrix& G = t.grad(Var{self});
        Matrix& GA = t.grad_ref(a);
        for (std::size_t i = 0; i < rows.size(); ++i) GA.row(rows[i]) += G.row(static_cast<Eigen::Index>(i));
    });
}

Var reshape(Tape& t, Var a, Eigen::Index rows, Eigen::Index cols) {
    const Matrix& A = t.value(a);
    if (rows * cols != A.size()) throw InvalidArgument("reshape: element count mismatch");
    Matrix out = Eigen::Map<const Matrix>(A.data(), rows, cols);
    const Eigen::Index r0 = A.rows(), c0 = A.cols();
    return t.push(std::move(out), t.requires_grad(a), [a, r0, c0](Tape& t, int self) {
        const Matrix& G = t.grad(Var{self});
        t.grad_ref(a) += Eigen::Map<const Matrix>(G.data(), r0, c0);
    });
}

Var mean_rows(Tape& t, Var a) {
    const Matrix& A = t.value(a);
    if (A.rows() == 0) throw InvalidArgument("mean_rows: empty input");
    Matrix out = A.colwise().mean();
    const double n = double(A.rows());
    return t.push(std::move(out), t.requires_grad(a), [a, n](Tape& t, int self) {
        const RowVector g = t.grad(Var{self}).row(0) / n;
        t.grad_ref(a).rowwise() += g;
    });
}

Var sum(Tape& t, Var a) {
    Matrix out(1, 1);
    out(0, 0) = t.value(a).sum();
    return t.push(std::move(out), t.requires_grad(a), [a](Tape& t, int self) {
        t.grad_ref(a).array() += t.grad(Var{self})(0, 0);
    });
}

Var mean(Tape& t, Var a) {
    const Matrix& A = t.value(a);
    if (A.size() == 0) throw InvalidArgument("mean: empty input");
    Matrix out(1, 1);
    out(0, 0) = A.mean();
    const double n = double(A.size());
    return t.push(std::move(out), t.requires_grad(a), [a, n](Tape& t, int self) {
        t.grad_ref(a).array() += t.grad(Var{self})(0, 0) / n;
    });
}

Var mse(Tape& t, Var a, Var b) {
    check_same_shape(t.value(a), t.value(b), "mse");
    const Eigen::Index n = t.value(a).size();
    Matrix out(1, 1);
    out(0, 0) = n > 0 ? (t.value(a) - t.value(b)).squaredNorm() / double(n) : 0.0;
    return t.push(std::move(out), any_grad(t, {a, b}) && n > 0, [a, b, n](Tape& t, int self) {
        const double g = t.grad(Var{self})(0, 0) * 2.0 / double(n);
        const Matrix diff = t.value(a) - t.value(b);
        if (t.requires_grad(a)) t.grad_ref(a) += g * diff;
        if (t.requires_grad(b)) t.grad_ref(b) -= g * diff;
    });
}

Var straight_through(Tape& t, Var encoded, const Matrix& quantized) {
    check_same_shape(t.value(encoded), quantized, "straight_through");
    return t.push(quantized, t.requires_grad(encoded),
                  [encoded](Tape& t, int self) { t.grad_ref(encoded) += t.grad(Var{self}); });
}

Var detach(Tape& t, Var a) { return t.constant(t.value(a)); }

}  // namespace dim::ad
