#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "tape.hpp"

namespace backlink {

void DatasetHandle::validate() const {
  if (shape.size() != 4) throw ConfigError("dataset shape must be (N, C, H, W), got " + shape_string(shape));
  if (shape[0] != labels.size())
    throw ConfigError("dataset has " + std::to_string(shape[0]) + " images but " + std::to_string(labels.size()) +
                      " labels");
  if (images.size() != shape_elements(shape)) throw ConfigError("dataset pixel buffer does not match its shape");
  for (auto l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw ConfigError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
}

DatasetHandle DatasetHandle::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw ConfigError("dataset slice out of range");
  DatasetHandle out;
  const std::size_t per = sample_elements();
  out.images.assign(images.begin() + static_cast<long>(begin * per), images.begin() + static_cast<long>(end * per));
  out.shape = shape;
  out.shape[0] = end - begin;
  out.labels.assign(labels.begin() + static_cast<long>(begin), labels.begin() + static_cast<long>(end));
  out.classes = classes;
  out.split = split;
  return out;
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::string& path) {
  if (b.size() < at + 4) throw IoError("'" + path + "' is truncated");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;
constexpr std::size_t kCifarPixels = 3 * 32 * 32;

}  // namespace

DatasetHandle load_idx(const std::string& images_path, const std::string& labels_path, Split split) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (read_be32(img, 0, images_path) != kIdxImages) throw IoError("'" + images_path + "' has a bad IDX image magic");
  if (read_be32(lab, 0, labels_path) != kIdxLabels) throw IoError("'" + labels_path + "' has a bad IDX label magic");
  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t h = read_be32(img, 8, images_path);
  const std::size_t w = read_be32(img, 12, images_path);
  const std::size_t nl = read_be32(lab, 4, labels_path);
  if (img.size() < 16 + n * h * w) throw IoError("'" + images_path + "' is truncated");
  if (lab.size() < 8 + nl) throw IoError("'" + labels_path + "' is truncated");
  if (n != nl)
    throw IoError("image/label count mismatch: " + std::to_string(n) + " images, " + std::to_string(nl) + " labels");
  DatasetHandle d;
  d.shape = {n, 1, h, w};
  d.images.assign(img.begin() + 16, img.begin() + 16 + static_cast<long>(n * h * w));
  d.labels.reserve(n);
  std::uint8_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels.push_back(lab[8 + i]);
    max_label = std::max(max_label, lab[8 + i]);
  }
  d.classes = std::max<std::size_t>(10, std::size_t{max_label} + 1);
  d.split = split;
  return d;
}

void write_idx(const DatasetHandle& data, const std::string& images_path, const std::string& labels_path) {
  data.validate();
  if (data.shape[1] != 1) throw ConfigError("IDX images must have a single channel");
  std::vector<std::uint8_t> img, lab;
  put_be32(img, kIdxImages);
  for (std::size_t i : {0, 2, 3}) put_be32(img, static_cast<std::uint32_t>(data.shape[i]));
  img.insert(img.end(), data.images.begin(), data.images.end());
  put_be32(lab, kIdxLabels);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (auto l : data.labels) lab.push_back(static_cast<std::uint8_t>(l));
  write_file(images_path, img);
  write_file(labels_path, lab);
}

DatasetHandle load_cifar_binary(const std::string& path, Split split) {
  const auto bytes = read_file(path);
  if (bytes.empty() || bytes.size() % (kCifarPixels + 1) != 0)
    throw IoError("'" + path + "' length " + std::to_string(bytes.size()) + " is not a positive multiple of 3073");
  const std::size_t n = bytes.size() / (kCifarPixels + 1);
  DatasetHandle d;
  d.shape = {n, 3, 32, 32};
  d.classes = 10;
  d.split = split;
  d.images.reserve(n * kCifarPixels);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = bytes.data() + i * (kCifarPixels + 1);
    if (rec[0] >= 10) throw IoError("'" + path + "' record " + std::to_string(i) + " has label " + std::to_string(rec[0]));
    d.labels.push_back(rec[0]);
    d.images.insert(d.images.end(), rec + 1, rec + 1 + kCifarPixels);
  }
  return d;
}

void write_cifar_binary(const DatasetHandle& data, const std::string& path) {
  data.validate();
  if (data.sample_shape() != Shape{3, 32, 32}) throw ConfigError("CIFAR records must be 3x32x32");
  std::vector<std::uint8_t> out;
  out.reserve(data.size() * (kCifarPixels + 1));
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.push_back(static_cast<std::uint8_t>(data.labels[i]));
    out.insert(out.end(), data.images.begin() + static_cast<long>(i * kCifarPixels),
               data.images.begin() + static_cast<long>((i + 1) * kCifarPixels));
  }
  write_file(path, out);
}

DatasetHandle synth_blobs(std::size_t classes, std::size_t per_class, const Shape& dims, std::uint64_t seed,
                          double spread, Split split) {
  if (classes == 0 || per_class == 0 || dims.empty() || shape_elements(dims) == 0)
    throw ConfigError("synth_blobs needs positive class count, samples per class and dimensions");
  Shape sample = dims.size() == 3 ? dims : Shape{1, 1, shape_elements(dims)};
  const std::size_t per = shape_elements(sample);
  // Class means come from the seed alone so train and test draws share them.
  std::mt19937_64 mean_rng(mix_seed(seed, 0x6d65616e));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> means(classes * per);
  for (auto& m : means) m = spread * normal(mean_rng);

  std::mt19937_64 rng(mix_seed(seed, split == Split::Train ? 1 : 2));
  DatasetHandle d;
  d.shape = {classes * per_class, sample[0], sample[1], sample[2]};
  d.classes = classes;
  d.split = split;
  d.images.resize(shape_elements(d.shape));
  d.labels.resize(classes * per_class);
  for (std::size_t i = 0; i < classes * per_class; ++i) {
    const std::size_t c = i % classes;
    d.labels[i] = static_cast<std::int32_t>(c);
    for (std::size_t k = 0; k < per; ++k) {
      const double v = means[c * per + k] + normal(rng);
      d.images[i * per + k] = static_cast<std::uint8_t>(std::clamp(std::lround(128.0 + 32.0 * v), 0L, 255L));
    }
  }
  return d;
}

Normalization channel_statistics(const DatasetHandle& data) {
  data.validate();
  const std::size_t c = data.shape[1], inner = data.shape[2] * data.shape[3];
  Normalization norm{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  const double count = static_cast<double>(data.size() * inner);
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < inner; ++k) norm.mean[ch] += data.images[(i * c + ch) * inner + k];
  for (auto& m : norm.mean) m /= count;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < inner; ++k) {
        const double d = data.images[(i * c + ch) * inner + k] - norm.mean[ch];
        norm.stddev[ch] += d * d;
      }
  for (auto& s : norm.stddev) s = std::max(std::sqrt(s / count), 1e-8);
  return norm;
}

namespace {

template <typename T>
void fill_sample(const DatasetHandle& data, const Normalization& norm, std::size_t index, T* dst, bool augment,
                 std::uint64_t aug_seed) {
  const std::size_t c = data.shape[1], h = data.shape[2], w = data.shape[3];
  const std::uint8_t* src = data.images.data() + index * c * h * w;
  long dy = 0, dx = 0;
  bool flip = false;
  if (augment && h > 1 && w > 1) {
    std::mt19937_64 rng(aug_seed);
    std::uniform_int_distribution<long> shift(-4, 4);
    dy = shift(rng);
    dx = shift(rng);
    flip = (rng() & 1) != 0;
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mean = norm.mean[ch], inv = 1.0 / norm.stddev[ch];
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const long sy = static_cast<long>(y) + dy;
        const long sx0 = static_cast<long>(flip ? w - 1 - x : x) + dx;
        // Padding pixels are zero after normalization.
        double v = 0.0;
        if (sy >= 0 && sy < static_cast<long>(h) && sx0 >= 0 && sx0 < static_cast<long>(w))
          v = (src[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx0)] - mean) * inv;
        dst[(ch * h + y) * w + x] = static_cast<T>(v);
      }
  }
}

}  // namespace

template <typename T>
BatchIterator<T>::BatchIterator(const DatasetHandle& data, Normalization norm, BatchOptions options)
    : data_(&data), norm_(std::move(norm)), options_(options) {
  data.validate();
  if (options_.batch_size == 0) throw ConfigError("batch size must be positive");
  if (norm_.mean.size() != data.shape[1]) throw ConfigError("normalization does not match the channel count");
  start_epoch(0);
}

template <typename T>
void BatchIterator<T>::start_epoch(std::size_t epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  order_.resize(data_->size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (options_.shuffle) {
    std::mt19937_64 rng(mix_seed(options_.seed, epoch));
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

template <typename T>
std::optional<Batch<T>> BatchIterator<T>::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t n = std::min(options_.batch_size, order_.size() - cursor_);
  Shape shape = data_->shape;
  shape[0] = n;
  const bool flat = data_->shape[1] == 1 && data_->shape[2] == 1;
  Batch<T> batch;
  batch.inputs = Tensor<T>(shape);
  const std::size_t per = data_->sample_elements();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = order_[cursor_ + i];
    fill_sample(*data_, norm_, idx, batch.inputs.data() + i * per, options_.augment && !flat,
                mix_seed(mix_seed(options_.seed, epoch_ + 0x1000), idx));
    batch.labels.push_back(data_->labels[idx]);
    batch.indices.push_back(idx);
  }
  if (flat) batch.inputs = batch.inputs.reshaped({n, per});
  cursor_ += n;
  return batch;
}

template <typename T>
std::size_t BatchIterator<T>::batches_per_epoch() const {
  return (data_->size() + options_.batch_size - 1) / options_.batch_size;
}

template <typename T>
Tensor<T> normalized_inputs(const DatasetHandle& data, const Normalization& norm, std::size_t begin, std::size_t end) {
  Shape shape = data.shape;
  shape[0] = end - begin;
  Tensor<T> out(shape);
  const std::size_t per = data.sample_elements();
  for (std::size_t i = begin; i < end; ++i) fill_sample(data, norm, i, out.data() + (i - begin) * per, false, 0);
  if (data.shape[1] == 1 && data.shape[2] == 1) out = out.reshaped({end - begin, per});
  return out;
}

template class BatchIterator<float>;
template class BatchIterator<double>;
template Tensor<float> normalized_inputs(const DatasetHandle&, const Normalization&, std::size_t, std::size_t);
template Tensor<double> normalized_inputs(const DatasetHandle&, const Normalization&, std::size_t, std::size_t);

}  // namespace backlink
