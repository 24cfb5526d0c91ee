#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace advforge {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {
struct TensorImpl;
}

/// Dense row-major float32 array with an optional gradient.
///
/// Tensor is a handle: copies alias the same storage. Tensors produced while a
/// Tape is active (and with at least one input requiring a gradient) are
/// recorded on that tape and participate in backward().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const float> data() const;
  /// Writable view of the values. Only legal on tensors that are not the
  /// output of a recorded operation.
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const float> grad() const;
  void zero_grad();
  void clear_grad();

  /// New leaf sharing this tensor's storage, without gradient tracking.
  Tensor detach() const;
  /// Deep copy of the values into a fresh leaf.
  Tensor clone() const;

  bool is_recorded() const;

  // Engine internals.
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of differentiable operations (define-by-run).
///
/// A tape is confined to one thread. Operations record onto the tape made
/// active with TapeScope; with no active tape nothing is recorded.
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<float>& grad_out)>;

  struct Entry {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return entries_.size(); }
  void clear();

  std::size_t record(Entry entry);
  const Entry& entry(std::size_t index) const { return entries_.at(index); }

 private:
  std::uint64_t id_;
  std::vector<Entry> entries_;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  ~TapeScope();

 private:
  Tape* previous_;
};

/// Suspends recording for the current thread (forward-only evaluation).
class NoTapeScope {
 public:
  NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;
  ~NoTapeScope();

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Reverse-mode sweep from a scalar recorded on the active tape. Leaf
/// gradients accumulate across calls; intermediate gradients are recomputed.
void backward(const Tensor& loss);

}  // namespace advforge
