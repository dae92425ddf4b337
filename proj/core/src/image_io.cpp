#include "bisenet/image_io.hpp"

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

namespace bisenet {

namespace {

struct Header {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::size_t data_offset = 0;
};

class HeaderParser {
 public:
  explicit HeaderParser(const std::vector<std::uint8_t>& b) : b_(b) {}

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

  std::int64_t number(const char* what) {
    skip_space();
    const std::size_t start = pos_;
    std::int64_t v = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      v = v * 10 + (b_[pos_] - '0');
      if (v > (std::int64_t{1} << 31)) throw Error(ErrorKind::kFormat, std::string(what) + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw Error(ErrorKind::kFormat, std::string("expected ") + what, start);
    return v;
  }

  Header parse(char kind) {
    if (b_.size() < 2 || b_[0] != 'P' || b_[1] != kind)
      throw Error(ErrorKind::kFormat, std::string("expected binary P") + kind + " magic", 0);
    pos_ = 2;
    Header h;
    skip_space();
    const std::size_t wpos = pos_;
    h.width = number("width");
    h.height = number("height");
    if (h.width < 1 || h.height < 1) throw Error(ErrorKind::kFormat, "empty image", wpos);
    skip_space();
    const std::size_t mpos = pos_;
    const auto maxval = number("maxval");
    if (maxval != 255)
      throw Error(ErrorKind::kFormat, "unsupported maxval " + std::to_string(maxval) + " (only 255)", mpos);
    if (pos_ >= b_.size() || !std::isspace(b_[pos_]))
      throw Error(ErrorKind::kFormat, "expected whitespace after maxval", pos_);
    h.data_offset = pos_ + 1;
    return h;
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> header(char kind, std::int64_t w, std::int64_t h) {
  const std::string s = std::string("P") + kind + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

std::uint8_t to_byte(float v) {
  const float r = std::nearbyint(v);
  return static_cast<std::uint8_t>(r < 0.0f ? 0.0f : (r > 255.0f ? 255.0f : r));
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path + "'");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write to '" + path + "' failed");
}

Tensor decode_ppm(const std::vector<std::uint8_t>& bytes) {
  const Header h = HeaderParser(bytes).parse('6');
  const std::size_t need = static_cast<std::size_t>(h.width * h.height * 3);
  if (bytes.size() - h.data_offset < need)
    throw Error(ErrorKind::kFormat, "truncated pixel data", bytes.size());
  Tensor t(Shape{1, 3, h.height, h.width});
  const std::uint8_t* src = bytes.data() + h.data_offset;
  const std::int64_t hw = h.width * h.height;
  for (std::int64_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) t[c * hw + i] = static_cast<float>(src[i * 3 + c]);
  return t;
}

Tensor read_ppm(const std::string& path) { return decode_ppm(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) fail(ErrorKind::kShape, "PPM output needs a (1, 3, h, w) image, got " + s.str());
  auto out = header('6', s.w, s.h);
  const std::int64_t hw = s.spatial();
  out.reserve(out.size() + static_cast<std::size_t>(hw * 3));
  for (std::int64_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) out.push_back(to_byte(image[c * hw + i]));
  return out;
}

void write_ppm(const Tensor& image, const std::string& path) { write_file_bytes(path, encode_ppm(image)); }

LabelMap decode_pgm(const std::vector<std::uint8_t>& bytes) {
  const Header h = HeaderParser(bytes).parse('5');
  const std::size_t need = static_cast<std::size_t>(h.width * h.height);
  if (bytes.size() - h.data_offset < need)
    throw Error(ErrorKind::kFormat, "truncated pixel data", bytes.size());
  LabelMap m(1, h.height, h.width);
  for (std::size_t i = 0; i < need; ++i) m.data[i] = bytes[h.data_offset + i];
  return m;
}

LabelMap read_pgm(const std::string& path) { return decode_pgm(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_pgm(const LabelMap& labels) {
  if (labels.n != 1) fail(ErrorKind::kShape, "PGM output needs a single label map");
  auto out = header('5', labels.w, labels.h);
  for (auto v : labels.data) {
    if (v < 0 || v > 255) fail(ErrorKind::kData, "label " + std::to_string(v) + " does not fit in a byte");
    out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

void write_pgm(const LabelMap& labels, const std::string& path) { write_file_bytes(path, encode_pgm(labels)); }

void write_color_mask(const LabelMap& labels, const Palette& palette, const std::string& path) {
  if (labels.n != 1) fail(ErrorKind::kShape, "colour mask needs a single label map");
  auto out = header('6', labels.w, labels.h);
  for (auto v : labels.data) {
    const Rgb c = (v >= 0 && static_cast<std::size_t>(v) < palette.size()) ? palette[v] : Rgb{0, 0, 0};
    out.insert(out.end(), c.begin(), c.end());
  }
  write_file_bytes(path, out);
}

Palette read_palette(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open palette '" + path + "'");
  Palette p;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    long cls, r, g, b;
    if (!(ss >> cls)) continue;
    if (!(ss >> r >> g >> b) || cls < 0 || cls > 255 || r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255)
      fail(ErrorKind::kData, path + ":" + std::to_string(lineno) + ": expected 'class r g b'");
    if (p.size() <= static_cast<std::size_t>(cls)) p.resize(static_cast<std::size_t>(cls) + 1, Rgb{0, 0, 0});
    p[static_cast<std::size_t>(cls)] = Rgb{static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                                           static_cast<std::uint8_t>(b)};
  }
  return p;
}

Palette default_palette(std::int64_t num_classes) {
  static constexpr Rgb kBase[] = {
      {128, 64, 128}, {244, 35, 232}, {70, 70, 70},   {102, 102, 156}, {190, 153, 153},
      {153, 153, 153}, {250, 170, 30}, {220, 220, 0}, {107, 142, 35},  {152, 251, 152},
      {70, 130, 180},  {220, 20, 60},  {255, 0, 0},   {0, 0, 142},     {0, 0, 70},
      {0, 60, 100},    {0, 80, 100},   {0, 0, 230},   {119, 11, 32}};
  Palette p;
  for (std::int64_t c = 0; c < num_classes; ++c) {
    if (c < static_cast<std::int64_t>(std::size(kBase))) {
      p.push_back(kBase[c]);
      continue;
    }
    Rng rng = Rng::derive(0x9a1e77e, static_cast<std::uint64_t>(c));
    const auto v = rng.next_u64();
    p.push_back(Rgb{static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                    static_cast<std::uint8_t>(v >> 16)});
  }
  return p;
}

std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open manifest '" + path + "'");
  const auto dir = std::filesystem::path(path).parent_path();
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (dir / fp).string();
  };
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string img, lab, extra;
    if (!(ss >> img)) continue;
    if (img[0] == '#') continue;
    if (!(ss >> lab) || (ss >> extra))
      fail(ErrorKind::kData, path + ":" + std::to_string(lineno) + ": expected 'image_path label_path'");
    entries.emplace_back(resolve(img), resolve(lab));
  }
  return entries;
}

void write_manifest(const std::vector<std::pair<std::string, std::string>>& entries, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  for (const auto& [img, lab] : entries) out << img << ' ' << lab << '\n';
}

}  // namespace bisenet
