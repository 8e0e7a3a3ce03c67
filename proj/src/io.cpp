#include "ipart/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ipart/errors.hpp"

namespace ipart {

namespace {

static_assert(std::endian::native == std::endian::little, "tensor dump assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("tensor dump: truncated input");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_tensor_dump(const NamedTensors& tensors) {
  std::string out = "RGT1";
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw IoError("tensor dump: name too long");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (Index e : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (double v : t.values()) put<double>(out, v);
  }
  return out;
}

NamedTensors decode_tensor_dump(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_string(4) != "RGT1") throw IoError("tensor dump: bad magic");
  const auto count = in.get<std::uint32_t>();
  NamedTensors tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.get<std::uint16_t>();
    std::string name = in.get_string(len);
    const auto rank = in.get<std::uint8_t>();
    Shape shape;
    for (int r = 0; r < rank; ++r) shape.push_back(static_cast<Index>(in.get<std::uint32_t>()));
    Tensor t;
    try {
      t = Tensor(shape);
    } catch (const std::invalid_argument& e) {
      throw IoError(std::string("tensor dump: ") + e.what());
    }
    for (Index k = 0; k < t.size(); ++k) t[k] = in.get<double>();
    tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!in.done()) throw IoError("tensor dump: trailing bytes");
  return tensors;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_tensor_dump(const std::filesystem::path& path, const NamedTensors& tensors) {
  write_text(path, encode_tensor_dump(tensors));
}

NamedTensors read_tensor_dump(const std::filesystem::path& path) { return decode_tensor_dump(read_text(path)); }

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("write_ppm: expected 3×H×W image, got " + shape_string(image.shape()));
  }
  const Index h = image.dim(1), w = image.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(3 * h * w));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) {
        const double v = std::clamp(image(c, y, x), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  write_text(path, out);
}

Tensor read_ppm(const std::filesystem::path& path) {
  const std::string bytes = read_text(path);
  std::istringstream header(bytes);
  std::string magic;
  long w = 0, h = 0, maxval = 0;
  header >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported PPM file " + path.string());
  const auto start = static_cast<std::size_t>(header.tellg()) + 1;  // single whitespace after maxval
  if (bytes.size() < start + static_cast<std::size_t>(3 * w * h)) throw IoError("truncated PPM file " + path.string());
  Tensor image(Shape{3, h, w});
  std::size_t pos = start;
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      for (long c = 0; c < 3; ++c) {
        image(c, y, x) = static_cast<unsigned char>(bytes[pos++]) / 255.0;
      }
    }
  }
  return image;
}

}  // namespace ipart
