#include "amh/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace amh {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

unsigned char level(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void require_gray(const Tensor& t, const char* what) {
  if (t.channels() != 1 || t.height() <= 0 || t.width() <= 0) {
    throw ShapeError(std::string(what) + ": expected a non-empty single-channel map, got " + to_string(t.shape()));
  }
}

class PgmParser {
 public:
  explicit PgmParser(const std::vector<unsigned char>& b) : b_(b) {}

  void skip_space() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long number(const char* what) {
    skip_space();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) throw ImageFormatError(std::string("pgm: expected ") + what, pos_);
    long v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > 1'000'000) throw ImageFormatError(std::string("pgm: ") + what + " too large", pos_);
    }
    return v;
  }

  std::size_t pos_ = 0;

 private:
  const std::vector<unsigned char>& b_;
};

}  // namespace

Tensor quantize(const Tensor& x) {
  Tensor q(x.shape());
  for (Index i = 0; i < x.size(); ++i) q.values()[i] = level(x.values()[i]) / 255.0;
  return q;
}

std::vector<unsigned char> encode_pgm(const Tensor& gray) {
  require_gray(gray, "pgm");
  const std::string header = "P5\n" + std::to_string(gray.width()) + " " + std::to_string(gray.height()) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  for (Index i = 0; i < gray.size(); ++i) out.push_back(level(gray.values()[i]));
  return out;
}

Tensor decode_pgm(const std::vector<unsigned char>& b) {
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw ImageFormatError("pgm: missing P5 magic", 0);
  PgmParser p(b);
  p.pos_ = 2;
  if (p.pos_ < b.size() && !std::isspace(b[p.pos_]) && b[p.pos_] != '#') {
    throw ImageFormatError("pgm: expected whitespace after magic", p.pos_);
  }
  p.skip_space();
  const std::size_t w_at = p.pos_;
  const long w = p.number("width");
  p.skip_space();
  const std::size_t h_at = p.pos_;
  const long h = p.number("height");
  p.skip_space();
  const std::size_t maxval_at = p.pos_;
  const long maxval = p.number("maxval");
  if (w <= 0) throw ImageFormatError("pgm: zero image width", w_at);
  if (h <= 0) throw ImageFormatError("pgm: zero image height", h_at);
  if (maxval <= 0 || maxval > 255) throw ImageFormatError("pgm: only 8-bit maxval is supported", maxval_at);
  if (p.pos_ >= b.size() || !std::isspace(b[p.pos_])) throw ImageFormatError("pgm: expected whitespace after maxval", p.pos_);
  ++p.pos_;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (b.size() - p.pos_ < need) throw ImageFormatError("pgm: truncated pixel data", b.size());
  if (b.size() - p.pos_ > need) throw ImageFormatError("pgm: trailing bytes after pixel data", p.pos_ + need);
  Tensor t(1, h, w);
  for (std::size_t i = 0; i < need; ++i) {
    const unsigned v = b[p.pos_ + i];
    if (v > static_cast<unsigned>(maxval)) throw ImageFormatError("pgm: sample exceeds maxval", p.pos_ + i);
    t.values()[static_cast<Index>(i)] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return t;
}

void save_pgm(const std::string& path, const Tensor& gray) { write_file(path, encode_pgm(gray)); }

Tensor load_pgm(const std::string& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const ImageFormatError& e) {
    throw ImageFormatError(path + ": " + std::string(e.what()).substr(0, std::string(e.what()).rfind(" at byte")),
                           e.offset());
  }
}

std::vector<unsigned char> encode_png_gray(const Tensor& gray) {
  require_gray(gray, "png");
  const auto w = static_cast<std::uint32_t>(gray.width()), h = static_cast<std::uint32_t>(gray.height());
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(h) * (w + 1));
  for (Index y = 0; y < gray.height(); ++y) {
    raw.push_back(0);  // filter: none
    for (Index x = 0; x < gray.width(); ++x) raw.push_back(level(gray(0, y, x)));
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK) {
    throw std::runtime_error("png: zlib compression failed");
  }
  z.resize(zlen);

  std::vector<unsigned char> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  auto be32 = [](std::vector<unsigned char>& v, std::uint32_t x) {
    for (int s = 24; s >= 0; s -= 8) v.push_back(static_cast<unsigned char>(x >> s));
  };
  auto chunk = [&](const char* type, const std::vector<unsigned char>& data) {
    be32(out, static_cast<std::uint32_t>(data.size()));
    std::vector<unsigned char> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out.insert(out.end(), body.begin(), body.end());
    be32(out, static_cast<std::uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size()))));
  };
  std::vector<unsigned char> ihdr;
  be32(ihdr, w);
  be32(ihdr, h);
  ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // 8-bit grayscale
  chunk("IHDR", ihdr);
  chunk("IDAT", z);
  chunk("IEND", {});
  return out;
}

void save_png_gray(const std::string& path, const Tensor& gray) { write_file(path, encode_png_gray(gray)); }

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw std::runtime_error("manifest '" + path + "' line " + std::to_string(n) + ": expected image<TAB>mask");
    }
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
  for (const auto& e : entries) out << e.image << '\t' << e.mask << '\n';
}

Dataset load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path q(p);
    return (q.is_absolute() ? q : base / q).string();
  };
  Dataset d;
  for (const auto& e : read_manifest(manifest_path)) {
    Sample s;
    s.image = load_pgm(resolve(e.image));
    Tensor m = load_pgm(resolve(e.mask));
    check_same_shape(s.image.shape(), m.shape(), "manifest pair");
    for (Index i = 0; i < m.size(); ++i) m.values()[i] = m.values()[i] >= 0.5 ? 1.0 : 0.0;
    s.edges = std::move(m);
    d.push_back(std::move(s));
  }
  return d;
}

}  // namespace amh
