#include "advforge/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <sstream>

#include "tensor_impl.hpp"

namespace advforge {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

std::shared_ptr<detail::TensorImpl> new_impl(Shape shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->storage = std::make_shared<std::vector<float>>(std::move(data));
  impl->requires_grad = requires_grad;
  return impl;
}

const detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw std::logic_error("use of an undefined tensor");
  return *impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- TensorImpl -----------------------------------------------------------

namespace detail {

void TensorImpl::ensure_grad() {
  if (grad.size() != numel()) grad.assign(numel(), 0.0f);
}

void TensorImpl::accumulate(const float* g) {
  if (grad.empty()) {
    grad.assign(g, g + numel());
    return;
  }
  const std::size_t n = grad.size();
  float* __restrict dst = grad.data();
  for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
}

void TensorImpl::accumulate_at(std::size_t i, float g) {
  ensure_grad();
  grad[i] += g;
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t != nullptr && t->defined() && t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<float> values, std::initializer_list<const Tensor*> inputs,
                   Tape::BackwardFn fn) {
  const bool record = should_record(inputs);
  auto impl = new_impl(std::move(shape), std::move(values), record);
  if (record) {
    Tape::Entry entry;
    for (const Tensor* t : inputs) {
      if (t != nullptr && t->defined()) entry.inputs.push_back(t->impl());
    }
    entry.output = impl;
    entry.backward = std::move(fn);
    impl->tape_id = g_active_tape->id();
    impl->tape_index = g_active_tape->record(std::move(entry));
  }
  return Tensor(std::move(impl));
}

}  // namespace detail

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(new_impl(std::move(shape), std::vector<float>(n, 0.0f), requires_grad));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(new_impl(std::move(shape), std::vector<float>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  return Tensor(new_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return Tensor(new_impl(Shape{}, std::vector<float>{value}, requires_grad));
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).numel(); }

std::span<const float> Tensor::data() const {
  const auto& impl = checked(impl_);
  return {impl.storage->data(), impl.storage->size()};
}

std::span<float> Tensor::mutable_data() {
  const auto& impl = checked(impl_);
  if (impl.recorded()) throw AutogradError("cannot mutate the output of a recorded operation");
  return {impl.storage->data(), impl.storage->size()};
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  checked(impl_);
  if (impl_->recorded()) throw AutogradError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = flag;
}

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::span<const float> Tensor::grad() const {
  const auto& impl = checked(impl_);
  return {impl.grad.data(), impl.grad.size()};
}

void Tensor::zero_grad() {
  checked(impl_);
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

void Tensor::clear_grad() {
  checked(impl_);
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const {
  const auto& src = checked(impl_);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = src.shape;
  impl->storage = src.storage;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  const auto& src = checked(impl_);
  return Tensor(new_impl(src.shape, *src.storage, false));
}

bool Tensor::is_recorded() const { return checked(impl_).recorded(); }

// ---- Tape -----------------------------------------------------------------

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

void Tape::clear() {
  entries_.clear();
  // Outstanding tensors still carry the old id; a fresh id makes them off-tape.
  id_ = g_next_tape_id.fetch_add(1);
}

std::size_t Tape::record(Entry entry) {
  entries_.push_back(std::move(entry));
  return entries_.size() - 1;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoTapeScope::NoTapeScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoTapeScope::~NoTapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw AutogradError("backward() on an undefined tensor");
  if (loss.numel() != 1) {
    throw AutogradError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  Tape* tape = g_active_tape;
  const auto& root = loss.impl();
  if (tape == nullptr || !root->recorded() || root->tape_id != tape->id()) {
    throw AutogradError("backward() on a tensor that is not recorded on the active tape");
  }

  const std::size_t last = root->tape_index;
  // Intermediate gradients are rebuilt on every sweep; leaves keep accumulating.
  std::vector<char> touched(last + 1, 0);
  for (std::size_t i = 0; i <= last; ++i) tape->entry(i).output->grad.clear();
  root->grad.assign(1, 1.0f);
  touched[last] = 1;

  for (std::size_t i = last + 1; i-- > 0;) {
    if (!touched[i]) continue;
    const auto& e = tape->entry(i);
    e.output->ensure_grad();
    e.backward(e.output->grad);
    for (const auto& in : e.inputs) {
      if (in->requires_grad && in->recorded() && in->tape_id == tape->id() && in->tape_index < i) {
        touched[in->tape_index] = 1;
      }
    }
  }
}

}  // namespace advforge
