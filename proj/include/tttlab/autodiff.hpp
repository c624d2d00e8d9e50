#pragma once

// Minimal define-by-run reverse-mode differentiation over Tensor.
//
// A Tape records every primitive as it is evaluated. Parameters enter the
// tape bound to a slice of a ParamStore; backward() from any scalar node
// returns one flat GradVector per store, aligned index-for-index with the
// store's values. Each tape is single-threaded; separate tapes share nothing.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tttlab/tensor.hpp"

namespace tttlab {

struct ParamBlock {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    std::size_t size = 0;

    friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

// Flat, named parameter storage. Blocks are laid out contiguously in the
// order they were added.
class ParamStore {
public:
    ParamStore() = default;
    explicit ParamStore(std::string name) : name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }

    const ParamBlock& add_block(std::string name, Shape shape);
    const ParamBlock& block(std::string_view name) const;
    bool has_block(std::string_view name) const;
    std::span<const ParamBlock> blocks() const noexcept { return blocks_; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> block_values(std::string_view name);
    std::span<const double> block_values(std::string_view name) const;
    Tensor block_tensor(std::string_view name) const;

    std::size_t size() const noexcept { return values_.size(); }

    // FNV-1a digest of the raw parameter bytes.
    std::uint64_t checksum() const;

    friend bool operator==(const ParamStore&, const ParamStore&) = default;

private:
    std::string name_;
    std::vector<ParamBlock> blocks_;
    std::vector<double> values_;
};

// Gradient aligned with one ParamStore.
struct GradVector {
    std::vector<double> values;

    GradVector() = default;
    explicit GradVector(std::size_t n) : values(n, 0.0) {}
    explicit GradVector(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const noexcept { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    double& operator[](std::size_t i) { return values[i]; }

    friend bool operator==(const GradVector&, const GradVector&) = default;
};

// Euclidean norm over the whole flat vector.
double grad_norm(const GradVector& v);

// Handle to a node on a Tape.
struct Var {
    std::size_t id = 0;
};

class Gradients {
public:
    // Gradient for a store; zeros if the store never entered the tape.
    GradVector of(const ParamStore& store) const;

    void add(const ParamStore* store, const ParamBlock& block, const Tensor& grad);

private:
    struct Entry {
        const ParamStore* store;
        GradVector grad;
    };
    std::vector<Entry> entries_;
};

class Tape {
public:
    // Accumulates into the adjoints of the node's inputs. Entries for inputs
    // that do not require a gradient are null.
    using BackwardFn = std::function<void(const Tensor& out_grad, std::span<Tensor* const> in_grads)>;

    Var constant(Tensor value);
    Var parameter(const ParamStore& store, std::string_view block);

    // Records a primitive result. Throws NumericError if the value is not finite.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Exact gradient of a scalar node with respect to every parameter leaf.
    Gradients backward(Var root) const;

private:
    struct Node {
        Tensor value;
        std::vector<Var> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        const ParamStore* store = nullptr;
        const ParamBlock* block = nullptr;
    };
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. Matrices are [rows, cols]; spatial data is stored channel-last
// with one row per pixel, tiles stacked along the row axis.

Var add(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double factor);
Var sum(Tape& t, Var a);
Var tanh(Tape& t, Var a);
Var matmul(Tape& t, Var a, Var b);
// a[n,m] + bias[m] broadcast over rows.
Var add_bias(Tape& t, Var a, Var bias);
// x[n,k] W[k,m] + b[m]; a 1x1 convolution when rows are pixels.
Var affine(Tape& t, Var x, Var weight, Var bias);

// Bilinear resize of `batch` stacked grids of in_h x in_w rows to
// out_h x out_w, align-corners convention (corner pixels map exactly).
struct GridResize {
    std::size_t batch = 1;
    std::size_t in_h = 1, in_w = 1;
    std::size_t out_h = 1, out_w = 1;
};
Var upsample_bilinear(Tape& t, Var x, const GridResize& grid);

// Columns [begin, begin+count) of a matrix.
Var slice_columns(Tape& t, Var x, std::size_t begin, std::size_t count);

// Mean over consecutive groups of `group` rows: [G*group, C] -> [G, C].
Var group_mean(Tape& t, Var x, std::size_t group);

// Row-wise layer normalisation with learned scale/shift over the last axis.
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);

// sum_i w_i (pred_i - target_i)^2
Var weighted_squared_error(Tape& t, Var pred, const Tensor& target, const Tensor& weight);
// sum_r w_r * CE(softmax(logits_r), class_r); rows with w_r == 0 are ignored.
Var weighted_softmax_cross_entropy(Tape& t, Var logits, std::span<const std::size_t> classes,
                                   std::span<const double> row_weight);
// sum_i w_i * BCE(sigmoid(logit_i), target_i)
Var weighted_bce_with_logits(Tape& t, Var logits, const Tensor& target, const Tensor& weight);

// Unweighted means of the above.
Var mse(Tape& t, Var pred, const Tensor& target);
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const std::size_t> classes);
Var bce_with_logits(Tape& t, Var logits, const Tensor& target);

}  // namespace tttlab
