#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "sfcsplit/tensor.hpp"

namespace sfcsplit {

/// Flat classification dataset kept in double precision; batches are cast
/// to the run's precision on extraction.
struct Dataset {
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::vector<double> features;  // [n, dim] row-major
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }

  template <typename T>
  Tensor<T> batch_features(const std::vector<std::size_t>& idx) const {
    Tensor<T> x({idx.size(), dim});
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < dim; ++c) {
        x.data[r * dim + c] = static_cast<T>(features[idx[r] * dim + c]);
      }
    }
    return x;
  }

  std::vector<std::uint32_t> batch_labels(const std::vector<std::size_t>& idx) const {
    std::vector<std::uint32_t> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(labels[i]);
    return out;
  }
};

struct BlobSpec {
  std::size_t samples = 2000;
  std::size_t dim = 384;
  std::size_t classes = 10;
  double center_scale = 1.0;
  double noise = 1.0;
  std::uint64_t seed = 7;
};

/// Isotropic Gaussian clusters, one per class, with labels assigned round-robin.
Dataset make_gaussian_blobs(const BlobSpec& spec);

/// Flat binary: "NSFD" | u32 n | u32 dim | u32 classes | n*dim f32 | n u32 labels (all LE).
Dataset load_flat_dataset(const std::filesystem::path& path);
void save_flat_dataset(const Dataset& ds, const std::filesystem::path& path);

/// Deterministic per-epoch mini-batch order shared by networked and
/// monolithic runs. The final batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, std::uint64_t seed,
                                                    int epoch);

}  // namespace sfcsplit
