#include "sfcsplit/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace sfcsplit {

Dataset make_gaussian_blobs(const BlobSpec& spec) {
  if (spec.classes < 2 || spec.dim == 0 || spec.samples == 0) {
    throw std::invalid_argument("blob dataset needs >= 2 classes, dim > 0 and samples > 0");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> center(0.0, spec.center_scale);
  std::normal_distribution<double> noise(0.0, spec.noise);

  std::vector<double> centers(spec.classes * spec.dim);
  for (auto& c : centers) c = center(rng);

  Dataset ds;
  ds.dim = spec.dim;
  ds.classes = spec.classes;
  ds.features.resize(spec.samples * spec.dim);
  ds.labels.resize(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const auto label = static_cast<std::uint32_t>(i % spec.classes);
    ds.labels[i] = label;
    for (std::size_t d = 0; d < spec.dim; ++d) {
      ds.features[i * spec.dim + d] = centers[label * spec.dim + d] + noise(rng);
    }
  }
  return ds;
}

namespace {

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf;
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
    throw std::runtime_error("dataset file truncated");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

Dataset load_flat_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "NSFD", 4) != 0) {
    throw std::runtime_error("bad dataset magic in " + path.string());
  }
  Dataset ds;
  const auto n = get_le<std::uint32_t>(is);
  ds.dim = get_le<std::uint32_t>(is);
  ds.classes = get_le<std::uint32_t>(is);
  ds.features.resize(static_cast<std::size_t>(n) * ds.dim);
  for (auto& f : ds.features) f = std::bit_cast<float>(get_le<std::uint32_t>(is));
  ds.labels.resize(n);
  for (auto& l : ds.labels) {
    l = get_le<std::uint32_t>(is);
    if (l >= ds.classes) throw std::runtime_error("dataset label out of range");
  }
  return ds;
}

void save_flat_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write dataset " + path.string());
  os.write("NSFD", 4);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.size()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.dim));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.classes));
  for (double f : ds.features) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(f)));
  for (auto l : ds.labels) put_le<std::uint32_t>(os, l);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, std::uint64_t seed,
                                                    int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace sfcsplit
