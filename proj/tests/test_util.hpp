#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>

#include "anneal/core.hpp"

namespace anneal::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("anneal-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Dataset with caller-chosen classes and uniformly random features.
inline Dataset random_dataset(const std::vector<int>& classes, std::size_t dim, int num_classes, std::uint64_t seed,
                              const std::vector<Split>& splits = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Item> items;
  std::vector<float> f;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    items.push_back(Item{"it" + std::to_string(100 + i), classes[i], splits.empty() ? Split::train : splits[i], std::nullopt});
    for (std::size_t d = 0; d < dim; ++d) f.push_back(static_cast<float>(u(rng)));
  }
  return Dataset(std::move(items), num_classes, dim, std::move(f));
}

}  // namespace anneal::test
