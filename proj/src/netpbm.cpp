#include "stmt/netpbm.hpp"

#include <cctype>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace stmt {

namespace {

[[noreturn]] void fail(const std::string& path, long offset, const std::string& what) {
  throw std::runtime_error(path + " (byte " + std::to_string(offset) + "): " + what);
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& is, const std::string& path) {
  std::string tok;
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      c = is.get();
    } else {
      break;
    }
  }
  if (c == EOF) fail(path, static_cast<long>(is.tellg()), "truncated header");
  while (c != EOF && !std::isspace(c) && c != '#') {
    tok.push_back(static_cast<char>(c));
    c = is.get();
  }
  // The terminator stays in the stream; the caller owns the single
  // header/payload separator byte.
  if (c != EOF) is.unget();
  return tok;
}

int header_int(std::istream& is, const std::string& path, const char* what) {
  const std::string tok = next_token(is, path);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::logic_error&) {
    fail(path, static_cast<long>(is.tellg()),
         std::string("malformed ") + what + " '" + tok + "'");
  }
}

void write_netpbm(const std::string& path, const ImageU8& img, const char* magic,
                  int channels) {
  if (img.channels != channels || img.width <= 0 || img.height <= 0) {
    throw std::invalid_argument("netpbm write: image layout does not match the format");
  }
  if (img.data.size() != static_cast<std::size_t>(img.width * img.height * channels)) {
    throw std::invalid_argument("netpbm write: pixel buffer size mismatch");
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("netpbm write: cannot open " + path);
    os << magic << "\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size()));
    if (!os) throw std::runtime_error("netpbm write: write failure for " + path);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

ImageU8 read_netpbm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path + ": cannot open");
  const std::string magic = next_token(is, path);
  int channels = 0;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    fail(path, 0, "unsupported magic '" + magic + "' (need binary P5 or P6)");
  }
  ImageU8 img;
  img.channels = channels;
  img.width = header_int(is, path, "width");
  img.height = header_int(is, path, "height");
  const int maxval = header_int(is, path, "maxval");
  if (maxval != 255) {
    fail(path, static_cast<long>(is.tellg()), "unsupported maxval " + std::to_string(maxval));
  }
  // Exactly one whitespace byte separates the header from the payload.
  const int sep = is.get();
  if (sep == EOF || !std::isspace(sep)) {
    fail(path, static_cast<long>(is.tellg()), "missing header/payload separator");
  }
  const std::size_t payload =
      static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) *
      static_cast<std::size_t>(channels);
  img.data.resize(payload);
  is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(payload));
  if (static_cast<std::size_t>(is.gcount()) != payload) {
    fail(path, static_cast<long>(is.tellg()),
         "short pixel payload: got " + std::to_string(is.gcount()) + " of " +
             std::to_string(payload) + " bytes");
  }
  return img;
}

void write_ppm(const std::string& path, const ImageU8& img) { write_netpbm(path, img, "P6", 3); }

void write_pgm(const std::string& path, const ImageU8& img) { write_netpbm(path, img, "P5", 1); }

}  // namespace stmt
