#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "fatcc/tensor.hpp"

namespace fatcc {

/// Labeled examples with features in [0, 1].
struct Dataset {
  Tensor inputs;  // [n, d]
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dims() const { return inputs.cols(); }

  /// Throws unless inputs/labels agree, labels < C and features lie in [0, 1].
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices) const;
};

struct PartitionConfig {
  std::size_t num_clients = 5;
  double gamma = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled by 1/255; the class count is max(label) + 1.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Isotropic Gaussian blobs, one per class, clamped to [0, 1]. Class means are
/// drawn uniformly from [0.2, 0.8]^dims. Rows are ordered class by class.
Dataset synth_gaussian(std::size_t num_classes, std::size_t dims, std::size_t per_class, double spread,
                       std::uint64_t seed);

/// Same class means as synth_gaussian(seed) but independent noise from `noise_seed`,
/// used for a held-out split drawn from the same distribution.
Dataset synth_gaussian_split(std::size_t num_classes, std::size_t dims, std::size_t per_class, double spread,
                             std::uint64_t seed, std::uint64_t noise_seed);

/// Uniformly random subset of round(fraction * n) examples (at least one), in
/// ascending index order.
Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed);

/// Label-skewed split: for every class, client proportions q ~ Dir(gamma * 1_N)
/// and that class's (shuffled) indices are dealt out with largest-remainder
/// rounding. Shards are disjoint and cover every index; some may be empty.
std::vector<ClientShard> dirichlet_partition(const Dataset& data, const PartitionConfig& config);

/// One draw from Dir(concentration * 1_k) via normalized Gamma variates.
std::vector<double> sample_symmetric_dirichlet(std::size_t k, double concentration, std::mt19937_64& rng);

/// Largest-remainder apportionment of `total` items by `proportions`
/// (ties go to the lower index). The counts always sum to `total`.
std::vector<std::size_t> largest_remainder(std::span<const double> proportions, std::size_t total);

/// Shannon entropy (nats) of a shard's label histogram; 0 for an empty shard.
double label_entropy(const Dataset& data, const ClientShard& shard);

}  // namespace fatcc
