#include "fatcc/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "fatcc/errors.hpp"

namespace fatcc {

void Dataset::validate() const {
  if (inputs.rows() != labels.size()) {
    throw ShapeError("dataset has " + std::to_string(inputs.rows()) + " inputs but " + std::to_string(labels.size()) +
                     " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DomainError("dataset label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (double v : inputs.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("dataset feature outside [0, 1]");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.inputs = gather_rows(inputs, indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels[i]);
  out.num_classes = num_classes;
  return out;
}

void PartitionConfig::validate() const {
  if (num_clients < 1) throw DomainError("partition needs at least one client");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw DomainError("Dirichlet concentration gamma must be > 0");
}

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw std::ios_base::failure("truncated IDX header in " + path.string());
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

std::string hex(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t n, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes(n);
  if (n > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n))) {
    throw std::ios_base::failure("truncated IDX payload in " + path.string() + ": expected " + std::to_string(n) +
                                 " bytes, got " + std::to_string(in.gcount()));
  }
  return bytes;
}

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  return in;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  auto img = open_binary(images_path);
  const std::uint32_t img_magic = read_be32(img, images_path);
  if (img_magic != kIdxImageMagic) {
    throw FormatError(images_path.string() + ": expected IDX image magic 0x00000803, found " + hex(img_magic));
  }
  const std::size_t n_images = read_be32(img, images_path);
  const std::size_t rows = read_be32(img, images_path);
  const std::size_t cols = read_be32(img, images_path);

  auto lbl = open_binary(labels_path);
  const std::uint32_t lbl_magic = read_be32(lbl, labels_path);
  if (lbl_magic != kIdxLabelMagic) {
    throw FormatError(labels_path.string() + ": expected IDX label magic 0x00000801, found " + hex(lbl_magic));
  }
  const std::size_t n_labels = read_be32(lbl, labels_path);
  if (n_images != n_labels) {
    throw FormatError("IDX count mismatch: " + std::to_string(n_images) + " images vs " + std::to_string(n_labels) +
                      " labels");
  }

  const std::size_t dims = rows * cols;
  const auto pixels = read_payload(img, n_images * dims, images_path);
  const auto raw_labels = read_payload(lbl, n_labels, labels_path);

  Dataset d;
  d.inputs = Tensor::matrix(n_images, dims);
  for (std::size_t i = 0; i < pixels.size(); ++i) d.inputs.data()[i] = static_cast<double>(pixels[i]) / 255.0;
  d.labels.assign(raw_labels.begin(), raw_labels.end());
  int max_label = -1;
  for (int y : d.labels) max_label = std::max(max_label, y);
  d.num_classes = static_cast<std::size_t>(max_label + 1);
  return d;
}

namespace {

Dataset synth_impl(std::size_t num_classes, std::size_t dims, std::size_t per_class, double spread,
                   std::uint64_t mean_seed, std::uint64_t noise_seed) {
  if (num_classes == 0 || dims == 0 || per_class == 0) throw DomainError("synth_gaussian: counts must be positive");
  if (!(spread >= 0.0)) throw DomainError("synth_gaussian: spread must be >= 0");

  std::mt19937_64 mean_rng(mean_seed);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dims));
  for (auto& m : means) {
    for (double& v : m) v = u(mean_rng);
  }

  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d;
  d.num_classes = num_classes;
  d.inputs = Tensor::matrix(num_classes * per_class, dims);
  d.labels.reserve(num_classes * per_class);
  std::size_t r = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t k = 0; k < per_class; ++k, ++r) {
      auto row = d.inputs.row(r);
      for (std::size_t i = 0; i < dims; ++i) {
        const double v = spread == 0.0 ? means[c][i] : means[c][i] + spread * noise(rng);
        row[i] = std::clamp(v, 0.0, 1.0);
      }
      d.labels.push_back(static_cast<int>(c));
    }
  }
  return d;
}

}  // namespace

Dataset synth_gaussian(std::size_t num_classes, std::size_t dims, std::size_t per_class, double spread,
                       std::uint64_t seed) {
  return synth_impl(num_classes, dims, per_class, spread, seed, seed);
}

Dataset synth_gaussian_split(std::size_t num_classes, std::size_t dims, std::size_t per_class, double spread,
                             std::uint64_t seed, std::uint64_t noise_seed) {
  return synth_impl(num_classes, dims, per_class, spread, seed, noise_seed);
}

Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("subsample fraction must lie in (0, 1]");
  const auto n = data.size();
  auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  keep = std::clamp<std::size_t>(keep, std::min<std::size_t>(1, n), n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return data.subset(idx);
}

std::vector<double> sample_symmetric_dirichlet(std::size_t k, double concentration, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> q(k);
  for (;;) {
    double total = 0.0;
    for (double& v : q) {
      v = gamma(rng);
      total += v;
    }
    // every draw can underflow to zero for tiny concentrations; redraw
    if (total > 0.0 && std::isfinite(total)) {
      for (double& v : q) v /= total;
      return q;
    }
  }
}

std::vector<std::size_t> largest_remainder(std::span<const double> proportions, std::size_t total) {
  const std::size_t k = proportions.size();
  std::vector<std::size_t> counts(k, 0);
  if (k == 0) return counts;
  std::vector<double> remainder(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = proportions[i] * static_cast<double>(total);
    counts[i] = std::min(total, static_cast<std::size_t>(std::floor(exact)));
    remainder[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  // proportions may not sum to exactly 1 in floating point; shed any excess first
  while (assigned > total) {
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % k) {
    ++counts[order[i]];
    ++assigned;
  }
  return counts;
}

std::vector<ClientShard> dirichlet_partition(const Dataset& data, const PartitionConfig& config) {
  config.validate();
  if (data.size() == 0) throw DomainError("dirichlet_partition: empty dataset");
  const std::size_t n_clients = config.num_clients;

  std::vector<ClientShard> shards(n_clients);
  for (std::size_t i = 0; i < n_clients; ++i) shards[i].client_id = i;

  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(static_cast<std::size_t>(data.labels[i])).push_back(i);

  std::mt19937_64 rng(config.seed);
  for (auto& members : by_class) {
    const auto q = sample_symmetric_dirichlet(n_clients, config.gamma, rng);
    std::shuffle(members.begin(), members.end(), rng);
    const auto counts = largest_remainder(q, members.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n_clients; ++i) {
      shards[i].indices.insert(shards[i].indices.end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                               members.begin() + static_cast<std::ptrdiff_t>(pos + counts[i]));
      pos += counts[i];
    }
  }
  for (auto& s : shards) std::sort(s.indices.begin(), s.indices.end());
  return shards;
}

double label_entropy(const Dataset& data, const ClientShard& shard) {
  if (shard.indices.empty()) return 0.0;
  std::vector<std::size_t> hist(data.num_classes, 0);
  for (std::size_t i : shard.indices) ++hist.at(static_cast<std::size_t>(data.labels.at(i)));
  const double n = static_cast<double>(shard.indices.size());
  double h = 0.0;
  for (std::size_t c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace fatcc
