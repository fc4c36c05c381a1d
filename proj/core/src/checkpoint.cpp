// SPDX-License-Identifier: Apache-2.0
#include "smartfreeze/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "smartfreeze/error.hpp"

namespace smartfreeze {

namespace {

constexpr const char* kMagic = "smartfreeze-checkpoint";

std::filesystem::path with_suffix(const std::filesystem::path& base, const char* suffix) {
  return std::filesystem::path(base.string() + suffix);
}

std::string dims(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "0" : out;
}

Shape parse_dims(const std::string& text) {
  Shape s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(std::stoull(part));
  return s;
}

void write_reals(std::ostream& out, std::span<const double> values) {
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (char& b : bytes) {
      b = static_cast<char>(bits & 0xff);
      bits >>= 8;
    }
    out.write(bytes, 8);
  }
}

void read_reals(std::istream& in, std::span<double> values) {
  for (double& v : values) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw InputError("checkpoint data truncated");
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes[i];
    v = std::bit_cast<double>(bits);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& base, const Network& net) {
  std::ofstream manifest(with_suffix(base, ".manifest"), std::ios::binary | std::ios::trunc);
  std::ofstream data(with_suffix(base, ".bin"), std::ios::binary | std::ios::trunc);
  if (!manifest || !data) throw InputError("cannot write checkpoint " + base.string());
  manifest << kMagic << " 1\n";
  manifest << "input_shape " << dims(net.input_shape) << "\n";
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const auto& s = l.spec;
    manifest << "layer " << i << ' ' << to_string(s.kind) << ' ' << s.in << ' ' << s.out << ' '
             << s.kernel << ' ' << s.stride << ' ' << s.pad << ' ' << (s.trainable ? 1 : 0) << "\n";
    if (!s.has_parameters()) continue;
    for (const auto& [name, t] : {std::pair{"weight", &l.weight}, std::pair{"bias", &l.bias}}) {
      manifest << "tensor layer" << i << '.' << name << ' ' << dims(t->shape()) << ' ' << offset << "\n";
      write_reals(data, t->values());
      offset += t->size() * 8;
    }
  }
  if (!manifest || !data) throw InputError("failed writing checkpoint " + base.string());
}

Network load_checkpoint(const std::filesystem::path& base) {
  std::ifstream manifest(with_suffix(base, ".manifest"));
  std::ifstream data(with_suffix(base, ".bin"), std::ios::binary);
  if (!manifest || !data) throw InputError("cannot open checkpoint " + base.string());
  std::string magic;
  int version = 0;
  manifest >> magic >> version;
  if (magic != kMagic || version != 1) throw InputError("not a checkpoint manifest: " + base.string());

  Network net;
  std::string word;
  while (manifest >> word) {
    if (word == "input_shape") {
      std::string d;
      manifest >> d;
      net.input_shape = parse_dims(d);
    } else if (word == "layer") {
      std::size_t index = 0;
      std::string kind;
      int trainable = 0;
      LayerSpec s;
      manifest >> index >> kind >> s.in >> s.out >> s.kernel >> s.stride >> s.pad >> trainable;
      if (!manifest || index != net.layers.size()) throw InputError("malformed checkpoint layer line");
      s.kind = layer_kind_from_string(kind);
      s.trainable = trainable != 0;
      net.layers.push_back(Layer{s, {}, {}});
    } else if (word == "tensor") {
      std::string name, d;
      std::uint64_t offset = 0;
      manifest >> name >> d >> offset;
      if (!manifest || net.layers.empty()) throw InputError("malformed checkpoint tensor line");
      Layer& l = net.layers.back();
      const bool is_bias = name.ends_with(".bias");
      Tensor t(parse_dims(d));
      data.seekg(static_cast<std::streamoff>(offset));
      read_reals(data, t.values());
      (is_bias ? l.bias : l.weight) = std::move(t);
    } else {
      throw InputError("unexpected checkpoint manifest entry '" + word + "'");
    }
  }
  net.output_shapes();
  return net;
}

}  // namespace smartfreeze
