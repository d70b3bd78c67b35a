#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bwfl/error.hpp"
#include "bwfl/random.hpp"

namespace bwfl {

// Labelled samples with features in [0, 1], stored row-major.
struct Dataset {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }

  std::span<const double> input(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
};

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError(path + ": truncated IDX header");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Reads an IDX image/label pair (MNIST layout). Pixels are scaled by 1/255.
inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  const std::string ipath = images_path.string();
  const std::string lpath = labels_path.string();
  std::ifstream images(images_path, std::ios::binary);
  if (!images) throw FormatError(ipath + ": cannot open");
  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw FormatError(lpath + ": cannot open");

  if (detail::read_be32(images, ipath) != kIdxImageMagic) {
    throw FormatError(ipath + ": bad magic number (expected 0x00000803)");
  }
  const std::uint32_t count = detail::read_be32(images, ipath);
  const std::uint32_t rows = detail::read_be32(images, ipath);
  const std::uint32_t cols = detail::read_be32(images, ipath);

  if (detail::read_be32(labels, lpath) != kIdxLabelMagic) {
    throw FormatError(lpath + ": bad magic number (expected 0x00000801)");
  }
  const std::uint32_t label_count = detail::read_be32(labels, lpath);
  if (label_count != count) {
    throw FormatError(lpath + ": label count " + std::to_string(label_count) +
                      " does not match image count " + std::to_string(count) + " in " + ipath);
  }

  Dataset ds;
  ds.dim = std::size_t{rows} * cols;
  std::vector<unsigned char> pixels(ds.dim * count);
  if (!images.read(reinterpret_cast<char*>(pixels.data()),
                   static_cast<std::streamsize>(pixels.size()))) {
    throw FormatError(ipath + ": truncated pixel data");
  }
  std::vector<unsigned char> raw_labels(count);
  if (!labels.read(reinterpret_cast<char*>(raw_labels.data()),
                   static_cast<std::streamsize>(raw_labels.size()))) {
    throw FormatError(lpath + ": truncated label data");
  }

  ds.features.resize(pixels.size());
  std::transform(pixels.begin(), pixels.end(), ds.features.begin(),
                 [](unsigned char p) { return static_cast<double>(p) / 255.0; });
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  int max_label = 0;
  for (int l : ds.labels) max_label = std::max(max_label, l);
  ds.num_classes = count == 0 ? 0 : static_cast<std::size_t>(max_label) + 1;
  return ds;
}

// Gaussian blobs around seeded random class centres, clipped to [0, 1].
inline Dataset synthetic(std::size_t classes, std::size_t dim, std::size_t per_class,
                         std::uint64_t seed, double spread = 0.1) {
  if (classes < 2) throw ArgumentError("synthetic: need at least 2 classes");
  if (dim < 1) throw ArgumentError("synthetic: dim must be >= 1");
  Rng rng = make_rng(seed, Stream::synthetic);
  std::uniform_real_distribution<double> centre(0.2, 0.8);
  std::normal_distribution<double> noise(0.0, spread);

  std::vector<double> centres(classes * dim);
  for (double& c : centres) c = centre(rng);

  Dataset ds;
  ds.dim = dim;
  ds.num_classes = classes;
  ds.features.reserve(classes * per_class * dim);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t n = 0; n < per_class; ++n) {
      for (std::size_t d = 0; d < dim; ++d) {
        ds.features.push_back(std::clamp(centres[c * dim + d] + noise(rng), 0.0, 1.0));
      }
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

enum class PartitionMode { iid, noniid };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::noniid;
  std::size_t labels_per_device = 3;
  // 0 means "split the whole pool evenly".
  std::size_t samples_per_device = 0;
};

struct DevicePartition {
  std::vector<std::vector<std::size_t>> devices;
  PartitionMode mode = PartitionMode::iid;
  std::size_t labels_per_device = 0;

  std::size_t num_devices() const { return devices.size(); }
  std::size_t samples(std::size_t m) const { return devices[m].size(); }
  std::size_t total_samples() const {
    std::size_t n = 0;
    for (const auto& d : devices) n += d.size();
    return n;
  }
  std::vector<std::size_t> all_indices() const {
    std::vector<std::size_t> out;
    out.reserve(total_samples());
    for (const auto& d : devices) out.insert(out.end(), d.begin(), d.end());
    return out;
  }
};

// Splits `pool` (indices into ds) across M devices. Draws without replacement.
//
// iid: shuffle the pool, then deal near-equal shares (or samples_per_device
// each). noniid: labels are assigned round-robin over a seeded permutation of
// the classes, so device m holds labels perm[(m*L + j) mod C] for j < L and
// every class is used before any repeats; each device draws its share evenly
// from those per-label pools.
inline DevicePartition partition(const Dataset& ds, std::span<const std::size_t> pool,
                                 std::size_t M, const PartitionSpec& spec, std::uint64_t seed) {
  if (M < 1) throw ArgumentError("partition: need at least one device");
  Rng rng = make_rng(seed, Stream::partition);
  DevicePartition part;
  part.mode = spec.mode;
  part.devices.resize(M);

  if (spec.mode == PartitionMode::iid) {
    std::vector<std::size_t> shuffled(pool.begin(), pool.end());
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    if (spec.samples_per_device == 0) {
      const std::size_t base = shuffled.size() / M;
      const std::size_t extra = shuffled.size() % M;
      std::size_t pos = 0;
      for (std::size_t m = 0; m < M; ++m) {
        const std::size_t take = base + (m < extra ? 1 : 0);
        part.devices[m].assign(shuffled.begin() + pos, shuffled.begin() + pos + take);
        pos += take;
      }
    } else {
      if (spec.samples_per_device * M > shuffled.size()) {
        throw PartitionError("partition: pool of " + std::to_string(shuffled.size()) +
                             " samples cannot give " + std::to_string(M) + " devices " +
                             std::to_string(spec.samples_per_device) + " samples each");
      }
      for (std::size_t m = 0; m < M; ++m) {
        auto first = shuffled.begin() + m * spec.samples_per_device;
        part.devices[m].assign(first, first + spec.samples_per_device);
      }
    }
    return part;
  }

  const std::size_t classes = ds.num_classes;
  const std::size_t L = spec.labels_per_device;
  if (L < 1 || L > classes) {
    throw PartitionError("partition: labels_per_device=" + std::to_string(L) +
                         " must be in [1, " + std::to_string(classes) + "]");
  }
  part.labels_per_device = L;

  std::vector<std::vector<std::size_t>> by_label(classes);
  for (std::size_t i : pool) by_label[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  for (auto& bucket : by_label) std::shuffle(bucket.begin(), bucket.end(), rng);
  std::vector<std::size_t> cursor(classes, 0);

  std::vector<std::size_t> perm(classes);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);

  const std::size_t share =
      spec.samples_per_device != 0 ? spec.samples_per_device : pool.size() / M;
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t j = 0; j < L; ++j) {
      const std::size_t label = perm[(m * L + j) % classes];
      const std::size_t take = share / L + (j < share % L ? 1 : 0);
      auto& bucket = by_label[label];
      if (cursor[label] + take > bucket.size()) {
        throw PartitionError("partition: label " + std::to_string(label) +
                             " has too few samples for device " + std::to_string(m));
      }
      part.devices[m].insert(part.devices[m].end(), bucket.begin() + cursor[label],
                             bucket.begin() + cursor[label] + take);
      cursor[label] += take;
    }
  }
  return part;
}

inline DevicePartition partition(const Dataset& ds, std::size_t M, const PartitionSpec& spec,
                                 std::uint64_t seed) {
  std::vector<std::size_t> pool(ds.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  return partition(ds, pool, M, spec, seed);
}

// Uniform sample without replacement from one device's indices.
inline std::vector<std::size_t> sample_minibatch(const DevicePartition& part, std::size_t device,
                                                 std::size_t size, Rng& rng) {
  if (device >= part.num_devices()) throw ArgumentError("sample_minibatch: no such device");
  const auto& owned = part.devices[device];
  if (size > owned.size()) {
    throw ArgumentError("sample_minibatch: requested " + std::to_string(size) +
                        " samples but device " + std::to_string(device) + " holds " +
                        std::to_string(owned.size()));
  }
  std::vector<std::size_t> pick(owned);
  for (std::size_t i = 0; i < size; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, pick.size() - 1);
    std::swap(pick[i], pick[d(rng)]);
  }
  pick.resize(size);
  return pick;
}

struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded random hold-out; the test part is never handed to devices.
inline HoldoutSplit holdout_split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw ArgumentError("holdout_split: test_fraction must be in [0, 1)");
  }
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, Stream::holdout);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * ds.size()));
  HoldoutSplit split;
  split.test.assign(idx.begin(), idx.begin() + n_test);
  split.train.assign(idx.begin() + n_test, idx.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

}  // namespace bwfl
