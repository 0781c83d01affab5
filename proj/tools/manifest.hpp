#pragma once

// Flat key=value run manifests. Keys may repeat (multi-valued options), so
// entries keep file order.

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "rloss/errors.hpp"

namespace rloss::cli {

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 failed for " + path.string());
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

class Manifest {
 public:
  void add(std::string key, std::string value) { entries_.emplace_back(std::move(key), std::move(value)); }

  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }

  std::string get(const std::string& key, const std::string& fallback = {}) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return v;
    return fallback;
  }

  /// Writes to a temporary sibling and renames it into place.
  void write(const std::filesystem::path& path) const {
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw IoError("cannot write manifest " + tmp.string());
      for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
      if (!out) throw IoError("cannot write manifest " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move manifest into place: " + ec.message());
  }

  static Manifest read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw IoError("malformed manifest line: " + line);
      m.add(line.substr(0, eq), line.substr(eq + 1));
    }
    return m;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace rloss::cli
