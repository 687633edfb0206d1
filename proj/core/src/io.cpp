#include "latentshield/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace latentshield {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path.string());
  std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof()) throw std::runtime_error("read failed: " + path.string());
  return out;
}

void atomic_write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out.good()) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

json read_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  return json::parse(text);
}

void write_json_atomic(const fs::path& path, const json& j, int indent) {
  atomic_write_file(path, j.dump(indent) + "\n");
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

Tensor read_png(const fs::path& path) {
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open PNG: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("libpng init failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("PNG decode failed: " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("unsupported PNG channel count: " + std::to_string(channels));
  }
  pixels.resize(static_cast<std::size_t>(w) * h * channels);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) {
    rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  Tensor out(1, channels, static_cast<int>(h), static_cast<int>(w));
  for (int c = 0; c < channels; ++c) {
    for (png_uint_32 y = 0; y < h; ++y) {
      for (png_uint_32 x = 0; x < w; ++x) {
        out.at(0, c, static_cast<int>(y), static_cast<int>(x)) =
            pixels[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0;
      }
    }
  }
  return out;
}

void write_png(const fs::path& path, const Tensor& image) {
  if (image.n() != 1 || (image.c() != 1 && image.c() != 3)) {
    throw std::invalid_argument("write_png expects shape (1,{1|3},h,w), got " + image.shape_str());
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const int c = image.c(), h = image.h(), w = image.w();
  std::vector<png_byte> pixels(static_cast<std::size_t>(h) * w * c);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = std::clamp(image.at(0, ch, y, x), 0.0, 1.0);
        pixels[(static_cast<std::size_t>(y) * w + x) * c + ch] =
            static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
  }

  fs::path tmp = path;
  tmp += ".tmp";
  FILE* fp = std::fopen(tmp.string().c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open PNG for write: " + tmp.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("PNG encode failed: " + tmp.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * c;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// .npy
// ---------------------------------------------------------------------------

namespace {

// Pulls "'key': value" out of the header dict without a full Python parser.
std::string npy_dict_value(const std::string& header, const std::string& key) {
  const std::string needle = "'" + key + "':";
  const std::size_t pos = header.find(needle);
  if (pos == std::string::npos) throw std::runtime_error(".npy header missing key " + key);
  std::size_t start = pos + needle.size();
  while (start < header.size() && header[start] == ' ') ++start;
  std::size_t end = start;
  int depth = 0;
  while (end < header.size()) {
    const char ch = header[end];
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (depth == 0 && (ch == ',' || ch == '}')) break;
    ++end;
  }
  return header.substr(start, end - start);
}

}  // namespace

Tensor read_npy(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0) {
    throw std::runtime_error("not a .npy file: " + path.string());
  }
  const unsigned major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0, header_off = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) |
                 (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    header_off = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw std::runtime_error("truncated .npy header");
    header_len = 0;
    for (int i = 0; i < 4; ++i) {
      header_len |= static_cast<std::size_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    }
    header_off = 12;
  } else {
    throw std::runtime_error("unsupported .npy version");
  }
  if (bytes.size() < header_off + header_len) throw std::runtime_error("truncated .npy header");
  const std::string header = bytes.substr(header_off, header_len);

  const std::string descr = npy_dict_value(header, "descr");
  const std::string order = npy_dict_value(header, "fortran_order");
  if (order.find("False") == std::string::npos) {
    throw std::runtime_error(".npy fortran_order=True unsupported");
  }
  bool f64 = false;
  if (descr.find("<f8") != std::string::npos || descr.find("|f8") != std::string::npos) {
    f64 = true;
  } else if (descr.find("<f4") == std::string::npos && descr.find("|f4") == std::string::npos) {
    throw std::runtime_error(".npy dtype unsupported: " + descr);
  }

  std::string shape_s = npy_dict_value(header, "shape");
  std::vector<int> dims;
  for (std::size_t i = 0; i < shape_s.size();) {
    if (std::isdigit(static_cast<unsigned char>(shape_s[i]))) {
      std::size_t j = i;
      while (j < shape_s.size() && std::isdigit(static_cast<unsigned char>(shape_s[j]))) ++j;
      dims.push_back(std::stoi(shape_s.substr(i, j - i)));
      i = j;
    } else {
      ++i;
    }
  }
  if (dims.empty() || dims.size() > 4) {
    throw std::runtime_error(".npy rank unsupported: " + shape_s);
  }
  while (dims.size() < 4) dims.insert(dims.begin(), 1);

  Tensor out(dims[0], dims[1], dims[2], dims[3]);
  const std::size_t count = out.numel();
  const char* payload = bytes.data() + header_off + header_len;
  const std::size_t avail = bytes.size() - header_off - header_len;
  const std::size_t need = count * (f64 ? 8 : 4);
  if (avail < need) throw std::runtime_error(".npy payload truncated: " + path.string());
  if (f64) {
    std::memcpy(out.data(), payload, need);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      float v;
      std::memcpy(&v, payload + 4 * i, 4);
      out[i] = static_cast<double>(v);
    }
  }
  return out;
}

void write_npy(const fs::path& path, const Tensor& t) {
  char shape[128];
  std::snprintf(shape, sizeof(shape), "(%d, %d, %d, %d)", t.n(), t.c(), t.h(), t.w());
  std::string header = std::string("{'descr': '<f8', 'fortran_order': False, 'shape': ") + shape +
                       ", }";
  // Total of magic+len+header must be a multiple of 64, newline-terminated.
  const std::size_t base = 10 + header.size() + 1;
  const std::size_t pad = (64 - base % 64) % 64;
  header.append(pad, ' ');
  header.push_back('\n');

  std::string out;
  out.reserve(10 + header.size() + t.numel() * 8);
  out.append("\x93NUMPY", 6);
  out.push_back('\x01');
  out.push_back('\x00');
  const std::size_t hl = header.size();
  out.push_back(static_cast<char>(hl & 0xff));
  out.push_back(static_cast<char>((hl >> 8) & 0xff));
  out += header;
  out.append(reinterpret_cast<const char*>(t.data()), t.numel() * 8);
  atomic_write_file(path, out);
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (const char ch : bytes) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a64_file(const fs::path& path) { return fnv1a64(read_file(path)); }

std::string hex_u64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace latentshield
