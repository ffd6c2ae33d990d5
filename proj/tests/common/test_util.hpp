#pragma once

#include <random>

#include "fsra/tensor/tensor.hpp"

namespace fsra::testing_util {

inline Tensor<double> random_tensor(Shape shape, int seed, double scale = 1.0) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed) * 7919u + 17u);
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor<double>(std::move(shape), std::move(data));
}

}  // namespace fsra::testing_util

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

namespace fsra::testing_util {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("fsra_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fsra::testing_util
