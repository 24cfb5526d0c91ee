#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <vector>

#include "advforge/tensor.hpp"

namespace advforge::detail {

inline constexpr std::size_t kNotRecorded = static_cast<std::size_t>(-1);

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<float>> storage;
  std::vector<float> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  std::uint64_t tape_id = 0;
  std::size_t tape_index = kNotRecorded;

  std::size_t numel() const { return storage->size(); }
  const float* values() const { return storage->data(); }
  bool recorded() const { return tape_index != kNotRecorded; }

  // Adds `g` into the gradient buffer, allocating it on first touch.
  void accumulate(const float* g);
  void accumulate_at(std::size_t i, float g);
  void ensure_grad();
};

using ImplPtr = std::shared_ptr<TensorImpl>;

/// Builds the result tensor of an operation and records it on the active
/// tape when any input requires a gradient. `fn` is invoked during backward
/// with the output gradient and must only touch inputs that require grad.
Tensor make_result(Shape shape, std::vector<float> values,
                   std::initializer_list<const Tensor*> inputs, Tape::BackwardFn fn);

// True when recording is possible for these inputs.
bool should_record(std::initializer_list<const Tensor*> inputs);

}  // namespace advforge::detail
