#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "porenet/error.hpp"
#include "porenet/file_util.hpp"
#include "porenet/image.hpp"

namespace porenet {

namespace fs = std::filesystem;

std::string read_binary_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

std::string read_text_file(const fs::path& path) { return read_binary_file(path); }

void write_file_atomic(const fs::path& path, std::span<const unsigned char> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::kIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(ErrorKind::kIo, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

void write_text_atomic(const fs::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::vector<unsigned char> to_bytes(std::span<const float> values) {
  std::vector<unsigned char> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [](float v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  return out;
}

namespace {

GrayImage from_bytes(int width, int height, const unsigned char* bytes) {
  std::vector<float> values(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(bytes[i]) / 255.0f;
  return GrayImage(width, height, std::move(values));
}

GrayImage decode_pgm(const std::string& data, const fs::path& path) {
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) ++pos;
    if (start == pos) throw Error(ErrorKind::kFormat, path.string() + ": malformed PGM header");
    return std::stol(data.substr(start, pos - start));
  };
  const long width = next_token();
  const long height = next_token();
  const long maxval = next_token();
  if (width <= 0 || height <= 0) throw Error(ErrorKind::kFormat, path.string() + ": PGM has non-positive size");
  if (maxval != 255) {
    throw Error(ErrorKind::kFormat, path.string() + ": PGM maxval " + std::to_string(maxval) +
                                        " unsupported (8-bit grayscale with maxval 255 required)");
  }
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (data.size() < pos + need) throw Error(ErrorKind::kFormat, path.string() + ": truncated PGM pixel data");
  return from_bytes(static_cast<int>(width), static_cast<int>(height),
                    reinterpret_cast<const unsigned char*>(data.data() + pos));
}

struct PngReadState {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadState() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngBuffer {
  const std::string* data;
  std::size_t offset;
};

GrayImage decode_png(const std::string& data, const fs::path& path) {
  PngReadState st;
  st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!st.png) throw Error(ErrorKind::kIo, "libpng initialisation failed");
  st.info = png_create_info_struct(st.png);
  if (!st.info) throw Error(ErrorKind::kIo, "libpng initialisation failed");

  PngBuffer buf{&data, 0};
  std::vector<unsigned char> pixels;
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  if (setjmp(png_jmpbuf(st.png))) {
    throw Error(ErrorKind::kFormat, path.string() + ": corrupt PNG");
  }
  png_set_read_fn(st.png, &buf, [](png_structp p, png_bytep out, png_size_t n) {
    auto* b = static_cast<PngBuffer*>(png_get_io_ptr(p));
    if (b->offset + n > b->data->size()) png_error(p, "read past end");
    std::memcpy(out, b->data->data() + b->offset, n);
    b->offset += n;
  });
  png_read_info(st.png, st.info);
  png_get_IHDR(st.png, st.info, &width, &height, &bit_depth, &color_type, nullptr, nullptr, nullptr);
  const bool gray = color_type == PNG_COLOR_TYPE_GRAY;
  if (!gray || bit_depth != 8) {
    // Leaving the setjmp scope via an exception is fine: nothing libpng-owned is live on the stack.
    throw Error(ErrorKind::kFormat, path.string() + ": PNG must be 8-bit grayscale (color type " +
                                        std::to_string(color_type) + ", bit depth " + std::to_string(bit_depth) +
                                        ")");
  }
  pixels.resize(static_cast<std::size_t>(width) * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * width;
  png_read_image(st.png, rows.data());
  return from_bytes(static_cast<int>(width), static_cast<int>(height), pixels.data());
}

}  // namespace

GrayImage load_image(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::kIo, "image file not found: " + path.string());
  const std::string data = read_binary_file(path);
  if (data.size() >= 2 && data[0] == 'P' && data[1] == '5') return decode_pgm(data, path);
  static constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (data.size() >= 8 && std::memcmp(data.data(), kPngSig, 8) == 0) return decode_png(data, path);
  std::string fmt = data.size() >= 2 ? data.substr(0, 2) : data;
  for (char& ch : fmt) {
    if (!std::isprint(static_cast<unsigned char>(ch))) ch = '?';
  }
  throw Error(ErrorKind::kFormat, path.string() + ": unsupported image format (magic '" + fmt +
                                      "'); expected binary PGM (P5) or PNG");
}

void save_pgm(const GrayImage& img, const fs::path& path) {
  std::string header = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<unsigned char> bytes(header.begin(), header.end());
  const auto px = to_bytes(img.values());
  bytes.insert(bytes.end(), px.begin(), px.end());
  write_file_atomic(path, bytes);
}

std::string format_pores(const PoreSet& set) {
  std::string out;
  for (const Point& p : set.pores) {
    out += std::to_string(p.x);
    out += ' ';
    out += std::to_string(p.y);
    out += '\n';
  }
  return out;
}

PoreSet parse_pores(const std::string& text, const std::string& image_id, int width, int height) {
  PoreSet set;
  set.image_id = image_id;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    long x = 0, y = 0;
    std::string rest;
    if (!(ls >> x >> y) || (ls >> rest)) {
      throw Error(ErrorKind::kFormat, image_id + ": malformed pore line " + std::to_string(line_no) + ": '" + line + "'");
    }
    if (x < 0 || y < 0 || (width > 0 && x >= width) || (height > 0 && y >= height)) {
      throw Error(ErrorKind::kOutOfBounds, image_id + ": pore on line " + std::to_string(line_no) + " (" +
                                               std::to_string(x) + "," + std::to_string(y) +
                                               ") lies outside the image bounds");
    }
    set.pores.push_back({static_cast<int>(x), static_cast<int>(y)});
  }
  std::sort(set.pores.begin(), set.pores.end());
  set.pores.erase(std::unique(set.pores.begin(), set.pores.end()), set.pores.end());
  return set;
}

PoreSet load_pores(const fs::path& path, int width, int height) {
  if (!fs::exists(path)) throw Error(ErrorKind::kIo, "pore file not found: " + path.string());
  return parse_pores(read_text_file(path), path.stem().string(), width, height);
}

void save_pores(const PoreSet& set, const fs::path& path) { write_text_atomic(path, format_pores(set)); }

}  // namespace porenet
