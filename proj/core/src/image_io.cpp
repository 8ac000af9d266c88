#include "attnpain/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace attnpain {

namespace {

// Skips whitespace and '#' comment lines between header tokens.
int next_header_token(std::istream& in) {
  int c = in.get();
  for (;;) {
    while (c != EOF && std::isspace(c)) c = in.get();
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
      continue;
    }
    return c;
  }
}

size_t read_header_number(std::istream& in, const std::string& path) {
  int c = next_header_token(in);
  if (c == EOF || !std::isdigit(c)) throw FormatError(path + ": malformed PNM header");
  size_t v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + static_cast<size_t>(c - '0');
    c = in.get();
  }
  return v;
}

uint8_t quantize(double v) {
  double c = std::clamp(v, 0.0, 1.0);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

}  // namespace

Tensor read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for reading");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || (m1 != '5' && m1 != '6'))
    throw FormatError(path + ": not a binary PGM/PPM file");
  const size_t channels = m1 == '5' ? 1 : 3;
  const size_t width = read_header_number(in, path);
  const size_t height = read_header_number(in, path);
  const size_t maxval = read_header_number(in, path);
  if (width == 0 || height == 0) throw FormatError(path + ": zero image dimension");
  if (maxval == 0 || maxval > 255) throw FormatError(path + ": only 8-bit images supported");
  // Exactly one whitespace byte separates the header from pixel data; the
  // header number parser has already consumed it.
  std::vector<unsigned char> raw(width * height * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size())
    throw IoError(path + ": truncated pixel data");

  Tensor img = Tensor::zeros({channels, height, width});
  double* d = img.data_f64();
  const double scale = 1.0 / static_cast<double>(maxval);
  for (size_t y = 0; y < height; ++y)
    for (size_t x = 0; x < width; ++x)
      for (size_t c = 0; c < channels; ++c)
        d[c * height * width + y * width + x] =
            static_cast<double>(raw[(y * width + x) * channels + c]) * scale;
  return img;
}

void write_pgm(const Tensor& image, const std::string& path) {
  const auto& s = image.shape();
  size_t h = 0, w = 0;
  if (s.size() == 2) {
    h = s[0];
    w = s[1];
  } else if (s.size() == 3 && s[0] == 1) {
    h = s[1];
    w = s[2];
  } else {
    throw ValidationError("write_pgm: expected [H,W] or [1,H,W], got " + shape_str(s));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(w * h);
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = quantize(image.item(i));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError(path + ": write failed");
}

void write_ppm(const Tensor& image, const std::string& path) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != 3)
    throw ValidationError("write_ppm: expected [3,H,W], got " + shape_str(s));
  const size_t h = s[1], w = s[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(w * h * 3);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x)
      for (size_t c = 0; c < 3; ++c)
        raw[(y * w + x) * 3 + c] = quantize(image.item(c * h * w + y * w + x));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace attnpain
