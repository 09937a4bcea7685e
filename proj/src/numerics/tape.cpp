#include "gct/numerics/tape.hpp"

#include "gct/errors.hpp"

#include <limits>

namespace gct {

Parameter& ParameterStore::add(std::string name, Matrix init) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->grad = Matrix::Zero(init.rows(), init.cols());
  p->value = std::move(init);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(std::string_view name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterStore::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

Parameter& ParameterStore::at(std::string_view name) {
  Parameter* p = find(name);
  if (p == nullptr) throw ConfigError("unknown parameter: " + std::string(name));
  return *p;
}

const Parameter& ParameterStore::at(std::string_view name) const {
  const Parameter* p = find(name);
  if (p == nullptr) throw ConfigError("unknown parameter: " + std::string(name));
  return *p;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::vector<Matrix> ParameterStore::snapshot() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value);
  return out;
}

void ParameterStore::restore(const std::vector<Matrix>& values) {
  if (values.size() != params_.size()) throw DimensionError("snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].rows() != params_[i]->value.rows() ||
        values[i].cols() != params_[i]->value.cols())
      throw DimensionError("snapshot shape mismatch for " + params_[i]->name);
    params_[i]->value = values[i];
  }
}

const Matrix& Tensor::value() const { return tape_->value(id_); }

Matrix Tensor::grad() const {
  const Matrix& g = tape_->grad(id_);
  if (g.size() == 0) return Matrix::Zero(value().rows(), value().cols());
  return g;
}

std::array<Eigen::Index, 2> Tensor::shape() const {
  const Matrix& v = value();
  return {v.rows(), v.cols()};
}

double Tensor::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw DimensionError("scalar() on non-1x1 tensor");
  return v(0, 0);
}

bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

Tensor Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Tensor Tape::leaf(Matrix value) { return record(std::move(value), true, nullptr); }

Tensor Tape::param(Parameter& p) {
  Parameter* target = &p;
  return record(p.value, true, [target](Tape&, const Matrix& g) { target->grad += g; });
}

Tensor Tape::record(Matrix value, bool requires_grad, Backward backward) {
  if (nodes_.size() >= std::numeric_limits<NodeId>::max())
    throw DimensionError("tape node limit reached");
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  return Tensor(this, static_cast<NodeId>(nodes_.size() - 1));
}

Matrix& Tape::grad_buffer(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(NodeId id, Matrix g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    if (g.rows() != n.value.rows() || g.cols() != n.value.cols())
      throw DimensionError("gradient shape does not match its node");
    n.grad = std::move(g);
  } else {
    n.grad += g;
  }
}

void Tape::accumulate_block(NodeId id, Eigen::Index row, Eigen::Index col, const Matrix& g) {
  if (!nodes_[id].requires_grad) return;
  grad_buffer(id).block(row, col, g.rows(), g.cols()) += g;
}

void Tape::backward(Tensor root) {
  if (root.tape() != this) throw ContractError("backward root belongs to another tape");
  const Matrix& rv = value(root.id());
  if (rv.rows() != 1 || rv.cols() != 1) throw DimensionError("backward root must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id()).setOnes();
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

}  // namespace gct
