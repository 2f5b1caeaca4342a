#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "saslm/corpus.hpp"

namespace saslm::testutil {

// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    dir_ = std::filesystem::temp_directory_path() / ("saslm_" + tag + "_" + std::to_string(counter_++));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  std::string path(const std::string& name = "") const {
    return name.empty() ? dir_.string() : (dir_ / name).string();
  }

private:
  static inline int counter_ = 0;
  std::filesystem::path dir_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return out;
}

// Small synthetic word corpus over an alphabet of `vocab_words` surface
// tokens; line lengths vary so padding paths get exercised.
inline std::vector<std::string> toy_lines(int num_lines, int vocab_words, int min_len, int max_len,
                                          unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<int> word(0, vocab_words - 1);
  std::vector<std::string> lines;
  lines.reserve(static_cast<std::size_t>(num_lines));
  for (int i = 0; i < num_lines; ++i) {
    std::string line;
    int n = len(rng);
    for (int j = 0; j < n; ++j) {
      if (j) line += ' ';
      line += "w" + std::to_string(word(rng));
    }
    lines.push_back(line);
  }
  return lines;
}

}  // namespace saslm::testutil
