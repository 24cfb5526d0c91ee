#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "advforge/tensor.hpp"

namespace advforge {

/// Images [batch, channels, height, width] in [0, 1] with integer labels.
struct ImageBatch {
  Tensor images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

enum class DataSource { mnist, synthetic };
enum class Split { train, test };

std::string to_string(DataSource source);
std::string to_string(Split split);

class IdxError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, count_mismatch };
  IdxError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Read-only in-memory dataset. Copies share the underlying arrays.
class Dataset {
 public:
  Dataset(DataSource source, Split split, Shape item_shape, std::size_t classes, std::vector<float> images,
          std::vector<int> labels, std::uint64_t seed = 0);

  DataSource source() const { return source_; }
  Split split() const { return split_; }
  std::size_t size() const { return labels_->size(); }
  std::size_t classes() const { return classes_; }
  const Shape& item_shape() const { return item_shape_; }
  std::size_t item_numel() const { return shape_numel(item_shape_); }
  std::uint64_t seed() const { return seed_; }
  std::string id() const;

  std::span<const float> item(std::size_t index) const;
  int label(std::size_t index) const { return (*labels_)[index]; }
  std::span<const int> labels() const { return *labels_; }

  ImageBatch gather(std::span<const std::size_t> indices) const;
  ImageBatch range(std::size_t begin, std::size_t end) const;
  /// First `n` items (same order).
  Dataset head(std::size_t n) const;

 private:
  DataSource source_;
  Split split_;
  Shape item_shape_;
  std::size_t classes_;
  std::shared_ptr<const std::vector<float>> images_;
  std::shared_ptr<const std::vector<int>> labels_;
  std::uint64_t seed_;
};

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       Split split = Split::train);

// IDX encoders (used for round-trip checks and fixtures). Pixels are
// re-quantized as round(255 * v).
std::vector<std::uint8_t> encode_idx_images(const Dataset& ds);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds);
Dataset decode_idx(const std::vector<std::uint8_t>& image_bytes, const std::vector<std::uint8_t>& label_bytes,
                   Split split = Split::train);

/// Class c is a bright square at a class-specific grid cell plus uniform noise
/// in [-0.1, 0.1], clamped to [0, 1]. Labels cycle 0..C-1.
Dataset make_synthetic(std::size_t n, std::size_t classes, std::size_t side, std::uint64_t seed,
                       Split split = Split::train);
/// The noise-free template of class `c` used by make_synthetic.
std::vector<float> synthetic_template(std::size_t classes, std::size_t side, std::size_t c);

/// One epoch: a seeded permutation split into batches; the last may be short.
class Batches {
 public:
  Batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed);

  std::size_t count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
  std::span<const std::size_t> indices(std::size_t b) const;
  ImageBatch operator[](std::size_t b) const { return ds_.gather(indices(b)); }

  class iterator {
   public:
    using value_type = ImageBatch;
    using difference_type = std::ptrdiff_t;
    iterator(const Batches* owner, std::size_t b) : owner_(owner), b_(b) {}
    ImageBatch operator*() const { return (*owner_)[b_]; }
    iterator& operator++() {
      ++b_;
      return *this;
    }
    bool operator==(const iterator& o) const { return b_ == o.b_; }

   private:
    const Batches* owner_;
    std::size_t b_;
  };

  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, count()}; }

 private:
  Dataset ds_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
};

Batches batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed);

}  // namespace advforge
