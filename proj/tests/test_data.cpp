#include "doctest.h"
#include "engine.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace backlink;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("backlink_data_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

const std::vector<std::uint8_t> kIdxImages{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4, 250, 251, 252, 253};
const std::vector<std::uint8_t> kIdxLabels{0, 0, 8, 1, 0, 0, 0, 2, 3, 9};

}  // namespace

TEST_CASE("idx fixture is recovered exactly") {
  const auto img = scratch("a-images.idx"), lbl = scratch("a-labels.idx");
  write_bytes(img, kIdxImages);
  write_bytes(lbl, kIdxLabels);
  const auto d = load_idx(img.string(), lbl.string());
  CHECK(d.shape == Shape{2, 1, 2, 2});
  CHECK(d.images == std::vector<std::uint8_t>{1, 2, 3, 4, 250, 251, 252, 253});
  CHECK(d.labels == std::vector<std::int32_t>{3, 9});
  CHECK(d.classes == 10);

  const auto img2 = scratch("b-images.idx"), lbl2 = scratch("b-labels.idx");
  write_idx(d, img2.string(), lbl2.string());
  const auto again = load_idx(img2.string(), lbl2.string());
  CHECK(again.images == d.images);
  CHECK(again.labels == d.labels);
}

TEST_CASE("idx errors") {
  const auto empty = scratch("empty.idx"), lbl = scratch("c-labels.idx"), img = scratch("c-images.idx");
  write_bytes(empty, {});
  write_bytes(lbl, kIdxLabels);
  CHECK_THROWS_AS(load_idx(empty.string(), lbl.string()), IoError);

  auto truncated = kIdxImages;
  truncated.pop_back();
  write_bytes(img, truncated);
  CHECK_THROWS_AS(load_idx(img.string(), lbl.string()), IoError);

  auto bad_magic = kIdxImages;
  bad_magic[3] = 4;
  write_bytes(img, bad_magic);
  CHECK_THROWS_AS(load_idx(img.string(), lbl.string()), IoError);

  write_bytes(img, kIdxImages);
  write_bytes(lbl, {0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3});
  CHECK_THROWS_AS(load_idx(img.string(), lbl.string()), IoError);
  CHECK_THROWS_AS(load_idx(scratch("missing.idx").string(), lbl.string()), IoError);
}

TEST_CASE("cifar fixture is recovered exactly") {
  std::vector<std::uint8_t> record{7};
  for (std::size_t i = 0; i < 3072; ++i) record.push_back(static_cast<std::uint8_t>(i % 256));
  const auto one = scratch("one.bin");
  write_bytes(one, record);
  const auto d = load_cifar_binary(one.string());
  CHECK(d.size() == 1);
  CHECK(d.shape == Shape{1, 3, 32, 32});
  CHECK(d.labels[0] == 7);
  for (std::size_t i = 0; i < 3072; ++i) CHECK(d.images[i] == i % 256);

  auto two = record;
  two.insert(two.end(), record.begin(), record.end());
  two[3073] = 2;
  const auto p2 = scratch("two.bin");
  write_bytes(p2, two);
  const auto d2 = load_cifar_binary(p2.string());
  CHECK(d2.size() == 2);
  CHECK(d2.labels == std::vector<std::int32_t>{7, 2});

  const auto p3 = scratch("three.bin");
  write_cifar_binary(d2, p3.string());
  CHECK(load_cifar_binary(p3.string()).images == d2.images);
}

TEST_CASE("cifar errors") {
  const auto empty = scratch("empty.bin"), odd = scratch("odd.bin");
  write_bytes(empty, {});
  CHECK_THROWS_AS(load_cifar_binary(empty.string()), IoError);
  write_bytes(odd, std::vector<std::uint8_t>(3074, 1));
  CHECK_THROWS_AS(load_cifar_binary(odd.string()), IoError);
  std::vector<std::uint8_t> bad_label(3073, 0);
  bad_label[0] = 10;
  write_bytes(odd, bad_label);
  CHECK_THROWS_AS(load_cifar_binary(odd.string()), IoError);
}

TEST_CASE("synthetic blobs are deterministic with uniform labels") {
  const auto a = synth_blobs(4, 25, {3, 4, 4}, 9), b = synth_blobs(4, 25, {3, 4, 4}, 9);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(a.shape == Shape{100, 3, 4, 4});
  std::vector<std::size_t> counts(4, 0);
  for (auto l : a.labels) ++counts[static_cast<std::size_t>(l)];
  for (auto c : counts) CHECK(c == 25);
  CHECK(synth_blobs(4, 25, {3, 4, 4}, 10).images != a.images);
  const auto flat = synth_blobs(2, 5, {6}, 1);
  CHECK(flat.shape == Shape{10, 1, 1, 6});
}

TEST_CASE("train and test splits share class means") {
  // A linear model fit on the train split must transfer to the test split.
  const auto train = synth_blobs(2, 200, {8}, 3, 3.0, Split::Train);
  const auto test = synth_blobs(2, 100, {8}, 3, 3.0, Split::Test);
  NetworkSpec spec{"linear", {8}, 2, {UnitSpec{{LayerSpec::dense(0, 2)}}}};
  Network<double> net(spec, partition(1, 1), AuxClassifierSpec{}, 1);
  TrainOptions opts;
  opts.epochs = 5;
  opts.batch.batch_size = 32;
  opts.sgd = {0.05, 0.9, 0.0};
  opts.schedule = {0.05, {}, 0.1};
  const auto m = run_sequential(net, BackLinkConfig{}, train, test, opts);
  CHECK(m.epochs.back().test_accuracy >= 0.99);
}

TEST_CASE("batch iteration") {
  const auto d = synth_blobs(3, 10, {2, 4, 4}, 5);
  const auto norm = channel_statistics(d);
  {
    BatchIterator<double> it(d, norm, {30, true, 1, false});
    it.start_epoch(0);
    CHECK(it.batches_per_epoch() == 1);
    auto b = it.next();
    REQUIRE(b.has_value());
    CHECK(b->inputs.shape() == Shape{30, 2, 4, 4});
    CHECK_FALSE(it.next().has_value());
  }
  {
    BatchIterator<double> a(d, norm, {8, true, 4, false}), b(d, norm, {8, true, 4, false});
    std::vector<std::size_t> seen;
    for (std::size_t epoch : {0u, 1u}) {
      a.start_epoch(epoch);
      b.start_epoch(epoch);
      std::size_t batches = 0;
      while (auto x = a.next()) {
        auto y = b.next();
        REQUIRE(y.has_value());
        CHECK(max_abs_diff(x->inputs, y->inputs) == 0.0);
        CHECK(x->labels == y->labels);
        if (epoch == 0) seen.insert(seen.end(), x->indices.begin(), x->indices.end());
        ++batches;
      }
      CHECK(batches == 4);
    }
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < seen.size(); ++i) CHECK(seen[i] == i);
    CHECK(seen.size() == 30);
  }
}

TEST_CASE("normalized train split has zero channel means") {
  const auto d = synth_blobs(5, 40, {3, 6, 6}, 8);
  const auto x = normalized_inputs<double>(d, channel_statistics(d), 0, d.size());
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t p = 0; p < 36; ++p) {
        const double v = x[(i * 3 + c) * 36 + p];
        sum += v;
        sq += v * v;
        ++n;
      }
    CHECK(std::abs(sum / n) <= 1e-6);
    CHECK(std::abs(sq / n - 1.0) <= 1e-6);
  }
}

TEST_CASE("augmentation keeps shapes and is reproducible") {
  const auto d = synth_blobs(2, 8, {3, 8, 8}, 2);
  BatchIterator<double> a(d, channel_statistics(d), {16, false, 3, true}), b(d, channel_statistics(d), {16, false, 3, true});
  BatchIterator<double> plain(d, channel_statistics(d), {16, false, 3, false});
  a.start_epoch(2);
  b.start_epoch(2);
  plain.start_epoch(2);
  const auto x = a.next(), y = b.next(), z = plain.next();
  CHECK(x->inputs.shape() == Shape{16, 3, 8, 8});
  CHECK(max_abs_diff(x->inputs, y->inputs) == 0.0);
  CHECK(max_abs_diff(x->inputs, z->inputs) > 0.0);
}
