#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation of one forward pass; backward()
// walks it in reverse. Parameters live in a ParamStore and are bound to a
// tape as leaves, so the same model can be evaluated on many tapes.

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dim/types.hpp"

namespace dim::ad {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

struct ParamId {
    std::size_t index = static_cast<std::size_t>(-1);
};

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;
};

// Ordered, name-addressable parameter collection.
class ParamStore {
public:
    ParamId add(const std::string& name, Matrix init);

    Parameter& operator[](ParamId id) { return params_[id.index]; }
    const Parameter& operator[](ParamId id) const { return params_[id.index]; }

    ParamId find(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }
    std::size_t size() const { return params_.size(); }

    void zero_grad();
    // Marks every parameter whose name starts with `prefix`.
    void set_trainable_prefix(const std::string& prefix, bool trainable);
    void set_all_trainable(bool trainable);

    std::size_t scalar_count() const;

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

class Tape {
public:
    explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }

    Var constant(Matrix value);
    // Leaf whose gradient can be read back with grad() after backward().
    Var input(Matrix value);
    // Binds a parameter; repeated calls for the same id return one leaf.
    Var param(ParamStore& store, ParamId id);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    double scalar(Var v) const { return nodes_[v.id].value(0, 0); }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    // Zero-sized until backward() reaches the node.
    const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

    // Seeds d(loss)/d(loss) = 1 and propagates. Parameter gradients are
    // added into ParamStore::grad of every bound store.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

    // --- op construction (used by the free functions below) ---
    using BackwardFn = std::function<void(Tape&, int self)>;
    Var push(Matrix value, bool requires_grad, BackwardFn fn);
    Matrix& grad_ref(Var v);
    void accumulate(Var v, const Matrix& g);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        BackwardFn backward;
    };
    struct Binding {
        ParamStore* store;
        ParamId id;
        int var;
    };

    bool record_;
    std::vector<Node> nodes_;
    std::vector<Binding> bindings_;
    std::unordered_map<const ParamStore*, std::unordered_map<std::size_t, int>> param_cache_;
};

// ---- operations ----
Var matmul(Tape& t, Var a, Var b);
Var matmul_nt(Tape& t, Var a, Var b);  // a * b^T
Var transpose(Tape& t, Var a);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);  // elementwise
Var scale(Tape& t, Var a, double s);
Var add_row(Tape& t, Var a, Var row);                // a + broadcast(1 x d row)
Var linear(Tape& t, Var x, Var weight, Var bias);    // x W + b, W: in x out, b: 1 x out
Var gelu(Tape& t, Var a);
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_rows(Tape& t, Var a);
// Multi-head scaled dot-product attention. q: n x d, k/v: m x d. Keys with
// key_valid[j] == false are ignored; empty key_valid means all valid.
Var attention(Tape& t, Var q, Var k, Var v, int heads, const std::vector<bool>& key_valid = {});
// Mean over rows with target >= 0 of -log softmax(logits)[target]; 0 when no
// row is selected.
Var cross_entropy(Tape& t, Var logits, const std::vector<int>& targets);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var slice_rows(Tape& t, Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Tape& t, Var a, const std::vector<int>& rows);
Var reshape(Tape& t, Var a, Eigen::Index rows, Eigen::Index cols);  // row-major reinterpretation
Var mean_rows(Tape& t, Var a);                                      // 1 x d
Var sum(Tape& t, Var a);                                            // 1 x 1
Var mean(Tape& t, Var a);                                           // 1 x 1
Var mse(Tape& t, Var a, Var b);                                     // mean((a-b)^2)
// Value of `quantized`, gradient copied straight to `encoded`.
Var straight_through(Tape& t, Var encoded, const Matrix& quantized);
Var detach(Tape& t, Var a);

}  // namespace dim::ad
