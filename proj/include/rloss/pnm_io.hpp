#pragma once

// Binary PPM (P6) images and PGM (P5) labelings, maxval 255 only.
// In labeling files the value 255 marks an unlabeled pixel.

#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "rloss/errors.hpp"
#include "rloss/grid.hpp"

namespace rloss {

inline constexpr std::uint8_t kUnlabeledByte = 255;

struct RawPnm {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& header, std::span<const std::uint8_t> body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

class HeaderReader {
 public:
  HeaderReader(const std::vector<std::uint8_t>& bytes, const std::string& name) : bytes_(bytes), name_(name) {}

  /// Skips whitespace and '#' comments, then reads a decimal integer.
  int next_int() {
    for (;;) {
      if (pos_ >= bytes_.size()) fail("unexpected end of header");
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
    long value = 0;
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) fail("header value too large");
      ++pos_;
    }
    if (pos_ == start) fail("expected a decimal number");
    return static_cast<int>(value);
  }

  /// The single whitespace byte that separates maxval from the payload.
  void end_of_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("missing whitespace after maxval");
    ++pos_;
  }

  std::size_t position() const noexcept { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(ParseError::Kind::malformed_header, name_ + ": malformed header: " + msg);
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses a P5 or P6 file with maxval 255; `expected_magic` is "P5" or "P6".
inline RawPnm read_pnm(const std::filesystem::path& path, const std::string& expected_magic) {
  const auto bytes = detail::read_file(path);
  const std::string name = path.string();
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != static_cast<std::uint8_t>(expected_magic[1]))
    throw ParseError(ParseError::Kind::unsupported_magic, name + ": unsupported magic (expected " + expected_magic + ")");
  detail::HeaderReader header(bytes, name);
  header.skip(2);
  RawPnm raw;
  raw.channels = expected_magic == "P6" ? 3 : 1;
  raw.width = header.next_int();
  raw.height = header.next_int();
  if (raw.width < 1 || raw.height < 1) header.fail("width and height must be positive");
  const int maxval = header.next_int();
  if (maxval != 255)
    throw ParseError(ParseError::Kind::unsupported_maxval, name + ": maxval " + std::to_string(maxval) + " is not 255");
  header.end_of_header();
  const std::size_t need = static_cast<std::size_t>(raw.width) * static_cast<std::size_t>(raw.height) *
                           static_cast<std::size_t>(raw.channels);
  const std::size_t at = header.position();
  if (bytes.size() - at < need)
    throw ParseError(ParseError::Kind::truncated_payload, name + ": truncated payload (" +
                                                              std::to_string(bytes.size() - at) + " of " +
                                                              std::to_string(need) + " bytes)");
  raw.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(at), bytes.begin() + static_cast<std::ptrdiff_t>(at + need));
  return raw;
}

inline ImageGrid read_image(const std::filesystem::path& path) {
  auto raw = read_pnm(path, "P6");
  return ImageGrid(raw.width, raw.height, std::move(raw.data));
}

inline void write_image(const ImageGrid& image, const std::filesystem::path& path) {
  detail::write_file(path, "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n",
                     image.rgb());
}

inline PartialLabeling labeling_from_bytes(int width, int height, std::span<const std::uint8_t> bytes, int k) {
  if (k < 2) throw InvalidLabelError("label count K must be at least 2");
  std::vector<int> labels(bytes.size());
  for (std::size_t p = 0; p < bytes.size(); ++p) {
    const int v = bytes[p];
    if (v == kUnlabeledByte) {
      labels[p] = PartialLabeling::kUnlabeled;
    } else if (v >= k) {
      throw InvalidLabelError("pixel " + std::to_string(p) + " has label " + std::to_string(v) +
                              " but K = " + std::to_string(k));
    } else {
      labels[p] = v;
    }
  }
  return PartialLabeling(width, height, k, std::move(labels));
}

inline PartialLabeling read_labeling(const std::filesystem::path& path, int k) {
  const auto raw = read_pnm(path, "P5");
  return labeling_from_bytes(raw.width, raw.height, raw.data, k);
}

/// Reads a labeling and checks that it matches the dimensions of `paired`.
inline PartialLabeling read_labeling(const std::filesystem::path& path, int k, const ImageGrid& paired) {
  auto lab = read_labeling(path, k);
  if (lab.width() != paired.width() || lab.height() != paired.height())
    throw DimensionError(path.string() + ": labeling is " + std::to_string(lab.width()) + "x" +
                         std::to_string(lab.height()) + " but image is " + std::to_string(paired.width()) + "x" +
                         std::to_string(paired.height()));
  return lab;
}

inline void write_labels(std::span<const int> labels, int width, int height, const std::filesystem::path& path) {
  if (labels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw DimensionError("label buffer does not match width*height");
  std::vector<std::uint8_t> body(labels.size());
  for (std::size_t p = 0; p < labels.size(); ++p)
    body[p] = labels[p] == PartialLabeling::kUnlabeled ? kUnlabeledByte : static_cast<std::uint8_t>(labels[p]);
  detail::write_file(path, "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n", body);
}

inline void write_labeling(const PartialLabeling& lab, const std::filesystem::path& path) {
  write_labels(lab.labels(), lab.width(), lab.height(), path);
}

/// Writes the per-pixel argmax (ties to the smallest label) as a P5 image.
inline void write_segmentation(const SoftSegmentation& seg, int width, int height, const std::filesystem::path& path) {
  if (seg.num_labels() > 255) throw InvalidLabelError("at most 255 labels fit in a PGM labeling");
  write_labels(seg.argmax(), width, height, path);
}

}  // namespace rloss
