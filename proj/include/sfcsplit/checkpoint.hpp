#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "sfcsplit/nn.hpp"

namespace sfcsplit {

// Layout: "NSFM" | u16 version | u16 L | L x (u32 in, u32 out, u8 activation)
//         | per layer: in*out weights, out biases, each f64 little-endian.
// Parameters are widened to f64 so 32- and 64-bit models share one format.
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void put_bytes(std::vector<std::uint8_t>& out, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_bytes(const std::vector<std::uint8_t>& in, std::size_t& pos, int n) {
  if (pos + static_cast<std::size_t>(n) > in.size()) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += static_cast<std::size_t>(n);
  return v;
}

}  // namespace detail

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const std::vector<nn::Layer<T>>& layers) {
  std::vector<std::uint8_t> out{'N', 'S', 'F', 'M'};
  detail::put_bytes(out, kCheckpointVersion, 2);
  detail::put_bytes(out, layers.size(), 2);
  for (const auto& l : layers) {
    detail::put_bytes(out, l.in_dim, 4);
    detail::put_bytes(out, l.out_dim, 4);
    out.push_back(static_cast<std::uint8_t>(l.activation));
  }
  for (const auto& l : layers) {
    for (T w : l.weights.data) detail::put_bytes(out, std::bit_cast<std::uint64_t>(static_cast<double>(w)), 8);
    for (T b : l.bias.data) detail::put_bytes(out, std::bit_cast<std::uint64_t>(static_cast<double>(b)), 8);
  }
  return out;
}

template <typename T>
std::vector<nn::Layer<T>> decode_checkpoint(const std::vector<std::uint8_t>& in) {
  if (in.size() < 8 || std::memcmp(in.data(), "NSFM", 4) != 0) {
    throw std::runtime_error("bad checkpoint magic");
  }
  std::size_t pos = 4;
  if (detail::get_bytes(in, pos, 2) != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version");
  }
  const auto depth = detail::get_bytes(in, pos, 2);
  std::vector<nn::Layer<T>> layers(depth);
  for (auto& l : layers) {
    l.in_dim = detail::get_bytes(in, pos, 4);
    l.out_dim = detail::get_bytes(in, pos, 4);
    const auto act = detail::get_bytes(in, pos, 1);
    if (act > 1) throw std::runtime_error("bad activation code in checkpoint");
    l.activation = static_cast<nn::Activation>(act);
  }
  for (auto& l : layers) {
    l.weights = Tensor<T>({l.in_dim, l.out_dim});
    l.bias = Tensor<T>({l.out_dim});
    for (T& w : l.weights.data) w = static_cast<T>(std::bit_cast<double>(detail::get_bytes(in, pos, 8)));
    for (T& b : l.bias.data) b = static_cast<T>(std::bit_cast<double>(detail::get_bytes(in, pos, 8)));
  }
  if (pos != in.size()) throw std::runtime_error("trailing bytes in checkpoint");
  return layers;
}

template <typename T>
void save_checkpoint(const std::vector<nn::Layer<T>>& layers, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(layers);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
std::vector<nn::Layer<T>> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes);
}

}  // namespace sfcsplit
