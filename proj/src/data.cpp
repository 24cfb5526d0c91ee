#include "advforge/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>

#include "advforge/random.hpp"

namespace advforge {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr float kSyntheticNoise = 0.1f;

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) | (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) | static_cast<std::uint32_t>(bytes[offset + 3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open IDX file " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IdxError(IdxError::Kind::io, "cannot read IDX file " + path.string());
  return bytes;
}

struct IdxHeader {
  std::uint32_t count = 0;
  std::uint32_t rows = 1;
  std::uint32_t cols = 1;
  std::size_t payload = 0;
};

IdxHeader parse_header(const std::vector<std::uint8_t>& bytes, std::uint32_t magic, const std::string& what) {
  const std::size_t header = magic == kImageMagic ? 16 : 8;
  if (bytes.size() < 4) throw IdxError(IdxError::Kind::truncated, what + ": file shorter than the magic number");
  const std::uint32_t found = read_be32(bytes, 0);
  if (found != magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, ": bad magic 0x%08x (expected 0x%08x)", found, magic);
    throw IdxError(IdxError::Kind::bad_magic, what + buf);
  }
  if (bytes.size() < header) throw IdxError(IdxError::Kind::truncated, what + ": truncated header");
  IdxHeader h;
  h.count = read_be32(bytes, 4);
  if (magic == kImageMagic) {
    h.rows = read_be32(bytes, 8);
    h.cols = read_be32(bytes, 12);
  }
  h.payload = header;
  const std::size_t need = static_cast<std::size_t>(h.count) * h.rows * h.cols;
  if (bytes.size() - header < need) {
    throw IdxError(IdxError::Kind::truncated, what + ": truncated payload (" + std::to_string(bytes.size() - header) +
                                                  " of " + std::to_string(need) + " bytes)");
  }
  return h;
}

}  // namespace

std::string to_string(DataSource source) { return source == DataSource::mnist ? "mnist" : "synthetic"; }
std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Dataset::Dataset(DataSource source, Split split, Shape item_shape, std::size_t classes, std::vector<float> images,
                 std::vector<int> labels, std::uint64_t seed)
    : source_(source), split_(split), item_shape_(std::move(item_shape)), classes_(classes), seed_(seed) {
  if (images.size() != labels.size() * shape_numel(item_shape_)) {
    throw ShapeError("dataset: " + std::to_string(images.size()) + " pixel values for " +
                     std::to_string(labels.size()) + " items of shape " + shape_str(item_shape_));
  }
  images_ = std::make_shared<const std::vector<float>>(std::move(images));
  labels_ = std::make_shared<const std::vector<int>>(std::move(labels));
}

std::string Dataset::id() const { return to_string(source_) + "-" + to_string(split_) + "-" + std::to_string(size()); }

std::span<const float> Dataset::item(std::size_t index) const {
  const std::size_t n = item_numel();
  return {images_->data() + index * n, n};
}

ImageBatch Dataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t n = item_numel();
  std::vector<float> data(indices.size() * n);
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = item(indices[i]);
    std::copy(src.begin(), src.end(), data.begin() + static_cast<std::ptrdiff_t>(i * n));
    labels[i] = (*labels_)[indices[i]];
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), item_shape_.begin(), item_shape_.end());
  return ImageBatch{Tensor::from_data(std::move(shape), std::move(data)), std::move(labels)};
}

ImageBatch Dataset::range(std::size_t begin, std::size_t end) const {
  end = std::min(end, size());
  std::vector<std::size_t> idx(end > begin ? end - begin : 0);
  std::iota(idx.begin(), idx.end(), begin);
  return gather(idx);
}

Dataset Dataset::head(std::size_t n) const {
  n = std::min(n, size());
  const std::size_t k = item_numel();
  return Dataset(source_, split_, item_shape_, classes_,
                 std::vector<float>(images_->begin(), images_->begin() + static_cast<std::ptrdiff_t>(n * k)),
                 std::vector<int>(labels_->begin(), labels_->begin() + static_cast<std::ptrdiff_t>(n)), seed_);
}

Dataset decode_idx(const std::vector<std::uint8_t>& image_bytes, const std::vector<std::uint8_t>& label_bytes,
                   Split split) {
  const IdxHeader ih = parse_header(image_bytes, kImageMagic, "images");
  const IdxHeader lh = parse_header(label_bytes, kLabelMagic, "labels");
  if (ih.count != lh.count) {
    throw IdxError(IdxError::Kind::count_mismatch, "IDX count mismatch: " + std::to_string(ih.count) +
                                                       " images vs " + std::to_string(lh.count) + " labels");
  }
  const std::size_t n = ih.count;
  const std::size_t pixels = static_cast<std::size_t>(ih.rows) * ih.cols;
  std::vector<float> images(n * pixels);
  for (std::size_t i = 0; i < images.size(); ++i) {
    images[i] = static_cast<float>(image_bytes[ih.payload + i]) / 255.0f;
  }
  std::vector<int> labels(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = label_bytes[lh.payload + i];
    max_label = std::max(max_label, labels[i]);
  }
  const std::size_t classes = std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1);
  return Dataset(DataSource::mnist, split, Shape{1, ih.rows, ih.cols}, classes, std::move(images),
                 std::move(labels));
}

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       Split split) {
  const auto image_bytes = slurp(images_path);
  const auto label_bytes = slurp(labels_path);
  try {
    return decode_idx(image_bytes, label_bytes, split);
  } catch (const IdxError& e) {
    throw IdxError(e.kind(), std::string(e.what()) + " [" + images_path.string() + ", " + labels_path.string() + "]");
  }
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& ds) {
  const auto& s = ds.item_shape();
  if (s.size() != 3 || s[0] != 1) throw ShapeError("IDX images must be single-channel, got " + shape_str(s));
  std::vector<std::uint8_t> out;
  out.reserve(16 + ds.size() * ds.item_numel());
  put_be32(out, kImageMagic);
  put_be32(out, static_cast<std::uint32_t>(ds.size()));
  put_be32(out, static_cast<std::uint32_t>(s[1]));
  put_be32(out, static_cast<std::uint32_t>(s[2]));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (float v : ds.item(i)) out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
  }
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + ds.size());
  put_be32(out, kLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(ds.size()));
  for (int l : ds.labels()) out.push_back(static_cast<std::uint8_t>(l));
  return out;
}

std::vector<float> synthetic_template(std::size_t classes, std::size_t side, std::size_t c) {
  const auto grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(classes))));
  const std::size_t cell = side / grid;
  const std::size_t square = std::max<std::size_t>(2, cell * 3 / 4);
  const std::size_t offset = (cell - std::min(cell, square)) / 2;
  const std::size_t top = (c / grid) * cell + offset;
  const std::size_t left = (c % grid) * cell + offset;
  std::vector<float> img(side * side, 0.0f);
  for (std::size_t y = top; y < std::min(side, top + square); ++y) {
    for (std::size_t x = left; x < std::min(side, left + square); ++x) img[y * side + x] = 1.0f;
  }
  return img;
}

Dataset make_synthetic(std::size_t n, std::size_t classes, std::size_t side, std::uint64_t seed, Split split) {
  if (classes < 2) throw std::invalid_argument("make_synthetic: need at least 2 classes");
  if (n < classes) throw std::invalid_argument("make_synthetic: n must be at least the class count");
  if (side < 8) throw std::invalid_argument("make_synthetic: side must be at least 8");
  const auto grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(classes))));
  if (side / grid < 2) throw std::invalid_argument("make_synthetic: side too small for the class count");

  std::vector<std::vector<float>> templates;
  for (std::size_t c = 0; c < classes; ++c) templates.push_back(synthetic_template(classes, side, c));

  Rng rng(seed);
  const std::size_t pixels = side * side;
  std::vector<float> images(n * pixels);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    labels[i] = static_cast<int>(c);
    for (std::size_t p = 0; p < pixels; ++p) {
      const float v = templates[c][p] + rng.uniform(-kSyntheticNoise, kSyntheticNoise);
      images[i * pixels + p] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return Dataset(DataSource::synthetic, split, Shape{1, side, side}, classes, std::move(images),
                 std::move(labels), seed);
}

Batches::Batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed)
    : ds_(ds), batch_size_(batch_size), order_(ds.size()) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order_));
}

std::span<const std::size_t> Batches::indices(std::size_t b) const {
  const std::size_t begin = b * batch_size_;
  const std::size_t end = std::min(order_.size(), begin + batch_size_);
  return {order_.data() + begin, end - begin};
}

Batches batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed) {
  return Batches(ds, batch_size, seed);
}

}  // namespace advforge
