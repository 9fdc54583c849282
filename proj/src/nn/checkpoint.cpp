#include "emts/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "emts/errors.hpp"

namespace emts::nn {

namespace {

constexpr char kMagic[] = "EMTSW1";
constexpr std::size_t kMagicLen = 6;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void put_f64(std::string& out, double v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ConfigError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, bytes_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_{0};
};

}  // namespace

const Mlp& Checkpoint::net(const std::string& name) const {
  for (const auto& n : nets) {
    if (n.name == name) return n.net;
  }
  throw ConfigError("checkpoint: no network named '" + name + "'");
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, kMagicLen);
  const std::string meta = ckpt.meta.is_null() ? std::string("{}") : ckpt.meta.dump();
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  put_u32(out, static_cast<std::uint32_t>(ckpt.nets.size()));
  for (const auto& n : ckpt.nets) {
    put_u32(out, static_cast<std::uint32_t>(n.name.size()));
    out += n.name;
    put_u32(out, static_cast<std::uint32_t>(n.net.layers().size()));
    for (const auto& l : n.net.layers()) {
      put_u32(out, static_cast<std::uint32_t>(l.weight.rows()));
      put_u32(out, static_cast<std::uint32_t>(l.weight.cols()));
    }
  }
  for (const auto& n : ckpt.nets) {
    for (const auto& l : n.net.layers()) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) put_f64(out, l.weight(r, c));
      }
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) put_f64(out, l.bias(r));
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.str(kMagicLen) != std::string(kMagic, kMagicLen)) throw ConfigError("checkpoint: bad magic");
  Checkpoint ckpt;
  const std::uint32_t meta_len = in.u32();
  ckpt.meta = nlohmann::json::parse(in.str(meta_len));
  const std::uint32_t count = in.u32();
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> shapes(count);
  std::vector<std::string> names(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    names[i] = in.str(in.u32());
    const std::uint32_t layers = in.u32();
    for (std::uint32_t l = 0; l < layers; ++l) {
      const std::uint32_t rows = in.u32();
      const std::uint32_t cols = in.u32();
      shapes[i].emplace_back(rows, cols);
    }
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    std::vector<DenseLayer> layers;
    for (const auto& [rows, cols] : shapes[i]) {
      DenseLayer l{Matrix(rows, cols), Vector(rows)};
      for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t c = 0; c < cols; ++c) l.weight(r, c) = in.f64();
      }
      for (std::uint32_t r = 0; r < rows; ++r) l.bias(r) = in.f64();
      layers.push_back(std::move(l));
    }
    ckpt.nets.push_back({names[i], Mlp(std::move(layers))});
  }
  if (!in.at_end()) throw ConfigError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("missing checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace emts::nn
