#include "tttlab/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "tttlab/errors.hpp"
#include "tttlab/rng.hpp"

namespace tttlab {

// ---------------------------------------------------------------- ParamStore

const ParamBlock& ParamStore::add_block(std::string name, Shape shape) {
    if (has_block(name)) throw UsageError("duplicate parameter block '" + name + "'");
    ParamBlock block;
    block.name = std::move(name);
    block.size = shape_size(shape);
    block.shape = std::move(shape);
    block.offset = values_.size();
    values_.resize(values_.size() + block.size, 0.0);
    blocks_.push_back(std::move(block));
    return blocks_.back();
}

bool ParamStore::has_block(std::string_view name) const {
    return std::any_of(blocks_.begin(), blocks_.end(),
                       [&](const ParamBlock& b) { return b.name == name; });
}

const ParamBlock& ParamStore::block(std::string_view name) const {
    for (const auto& b : blocks_) {
        if (b.name == name) return b;
    }
    throw UsageError("no parameter block '" + std::string(name) + "' in store '" + name_ + "'");
}

std::span<double> ParamStore::block_values(std::string_view name) {
    const auto& b = block(name);
    return std::span<double>(values_).subspan(b.offset, b.size);
}

std::span<const double> ParamStore::block_values(std::string_view name) const {
    const auto& b = block(name);
    return std::span<const double>(values_).subspan(b.offset, b.size);
}

Tensor ParamStore::block_tensor(std::string_view name) const {
    const auto& b = block(name);
    auto first = values_.begin() + static_cast<std::ptrdiff_t>(b.offset);
    return Tensor(b.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(b.size)));
}

std::uint64_t ParamStore::checksum() const {
    return fnv1a(values_.data(), values_.size() * sizeof(double));
}

double grad_norm(const GradVector& v) {
    double s = 0.0;
    for (double x : v.values) s += x * x;
    return std::sqrt(s);
}

// ----------------------------------------------------------------- Gradients

GradVector Gradients::of(const ParamStore& store) const {
    for (const auto& e : entries_) {
        if (e.store == &store) return e.grad;
    }
    return GradVector(store.size());
}

void Gradients::add(const ParamStore* store, const ParamBlock& block, const Tensor& grad) {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [&](const Entry& e) { return e.store == store; });
    if (it == entries_.end()) {
        entries_.push_back({store, GradVector(store->size())});
        it = std::prev(entries_.end());
    }
    if (!grad.all_finite()) throw NumericError("non-finite gradient for block '" + block.name + "'");
    for (std::size_t i = 0; i < block.size; ++i) it->grad[block.offset + i] += grad[i];
}

// ---------------------------------------------------------------------- Tape

Var Tape::constant(Tensor value) {
    if (!value.all_finite()) throw NumericError("non-finite constant entered the tape");
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::parameter(const ParamStore& store, std::string_view block_name) {
    const ParamBlock& block = store.block(block_name);
    Node n;
    n.value = store.block_tensor(block_name);
    if (!n.value.all_finite()) {
        throw NumericError("non-finite parameter block '" + block.name + "'");
    }
    n.requires_grad = true;
    n.store = &store;
    n.block = &block;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op) {
    if (!value.all_finite()) {
        throw NumericError(std::string("non-finite value produced by ") + op);
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [&](Var v) { return nodes_.at(v.id).requires_grad; });
    if (n.requires_grad) {
        n.inputs = std::move(inputs);
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Gradients Tape::backward(Var root) const {
    const Node& r = nodes_.at(root.id);
    if (r.value.size() != 1) {
        throw UsageError("backward requires a scalar root, got shape " + shape_string(r.value.shape()));
    }
    Gradients out;
    if (!r.requires_grad) return out;

    std::vector<Tensor> adjoint(root.id + 1);
    std::vector<bool> live(root.id + 1, false);
    adjoint[root.id] = Tensor(r.value.shape(), {1.0});
    live[root.id] = true;

    std::vector<Tensor*> in_grads;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        if (!live[i]) continue;
        const Node& n = nodes_[i];
        if (n.store != nullptr) {
            out.add(n.store, *n.block, adjoint[i]);
            continue;
        }
        if (!n.backward) continue;
        in_grads.assign(n.inputs.size(), nullptr);
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const std::size_t j = n.inputs[k].id;
            if (!nodes_[j].requires_grad) continue;
            if (!live[j]) {
                adjoint[j] = Tensor(nodes_[j].value.shape());
                live[j] = true;
            }
            in_grads[k] = &adjoint[j];
        }
        n.backward(adjoint[i], in_grads);
    }
    return out;
}

}  // namespace tttlab
