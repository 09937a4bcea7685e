#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace gct {

/// Dense row-major f64 matrix; every tensor in the library is rank <= 2.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

/// Stand-in for -inf in attention masks. Finite so that sentinel * 0 stays 0.
inline constexpr double kMaskedValue = -1e30;
/// Any mask entry at or below this counts as masked.
inline constexpr double kMaskedThreshold = -1e29;

inline bool is_masked(double m) { return m <= kMaskedThreshold; }

/// A trainable array with a gradient accumulator that persists across tapes.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Named parameters in insertion order. Addresses are stable for the store's lifetime.
class ParameterStore {
 public:
  Parameter& add(std::string name, Matrix init);
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t total_elements() const;

  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;
using NodeId = std::uint32_t;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives
/// and has not been cleared.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  /// Gradient of the last backward root w.r.t. this value (zeros if unreached).
  Matrix grad() const;
  std::array<Eigen::Index, 2> shape() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 tensor.
  double scalar() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  NodeId id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Append-only record of primitive operations. Nodes are appended after their
/// parents, so reverse insertion order is a valid topological order.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  /// Value that never receives a gradient.
  Tensor constant(Matrix value);
  /// Free input whose gradient is readable after backward.
  Tensor leaf(Matrix value);
  /// Binds a Parameter: backward adds this node's gradient into param.grad.
  Tensor param(Parameter& param);
  /// Records an op result. `backward` receives dL/d(result) and must call
  /// accumulate() for each parent that requires a gradient.
  Tensor record(Matrix value, bool requires_grad, Backward backward);

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable node once.
  void backward(Tensor root);
  void accumulate(NodeId id, Matrix g);
  /// Adds g into a block of the node's gradient.
  void accumulate_block(NodeId id, Eigen::Index row, Eigen::Index col, const Matrix& g);

  const Matrix& value(NodeId id) const { return nodes_[id].value; }
  const Matrix& grad(NodeId id) const { return nodes_[id].grad; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  Matrix& grad_buffer(NodeId id);

  std::deque<Node> nodes_;
};

}  // namespace gct
