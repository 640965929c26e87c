#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace backlink {

enum class Split { Train, Test };

// Raw byte images (N, C, H, W) with integer labels.
struct DatasetHandle {
  std::vector<std::uint8_t> images;
  Shape shape;  // N, C, H, W
  std::vector<std::int32_t> labels;
  std::size_t classes = 0;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return Shape(shape.begin() + 1, shape.end()); }
  std::size_t sample_elements() const { return shape_elements(sample_shape()); }
  void validate() const;
  // Rows [begin, end) as a new handle.
  DatasetHandle slice(std::size_t begin, std::size_t end) const;
};

// IDX pair: 0x00000803 image file (N, H, W) and 0x00000801 label file (N), big-endian.
DatasetHandle load_idx(const std::string& images_path, const std::string& labels_path, Split split = Split::Train);
void write_idx(const DatasetHandle& data, const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary: records of one label byte followed by 3072 channel-major pixels.
DatasetHandle load_cifar_binary(const std::string& path, Split split = Split::Train);
void write_cifar_binary(const DatasetHandle& data, const std::string& path);

// Gaussian clusters around class-dependent means drawn with standard deviation
// `spread` (unit noise around each mean), quantized to bytes. dims is (C, H, W)
// or (features).
DatasetHandle synth_blobs(std::size_t classes, std::size_t per_class, const Shape& dims, std::uint64_t seed,
                          double spread = 1.0, Split split = Split::Train);

struct Normalization {
  std::vector<double> mean;  // per channel
  std::vector<double> stddev;
};

// Per-channel statistics of a dataset's pixels.
Normalization channel_statistics(const DatasetHandle& data);

struct BatchOptions {
  std::size_t batch_size = 128;
  bool shuffle = true;
  std::uint64_t seed = 0;
  bool augment = false;  // pad-4 random crop + horizontal flip, spatial data only
};

template <typename T>
struct Batch {
  Tensor<T> inputs;
  std::vector<std::int32_t> labels;
  std::vector<std::size_t> indices;
};

// Epoch-wise iteration in a seed-determined order; the last batch may be short.
template <typename T>
class BatchIterator {
 public:
  BatchIterator(const DatasetHandle& data, Normalization norm, BatchOptions options);

  void start_epoch(std::size_t epoch);
  // nullopt marks the end of the epoch.
  std::optional<Batch<T>> next();
  std::size_t batches_per_epoch() const;
  const BatchOptions& options() const { return options_; }

 private:
  const DatasetHandle* data_;
  Normalization norm_;
  BatchOptions options_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

// Whole dataset as one normalized tensor (no augmentation).
template <typename T>
Tensor<T> normalized_inputs(const DatasetHandle& data, const Normalization& norm, std::size_t begin, std::size_t end);

}  // namespace backlink
