#pragma once

#include <cstddef>
#include <filesystem>
#include <map>

#include "fsra/data/image.hpp"

namespace fsra {

// Decoded images resized to a square side, loaded on first use.
class ImageCache {
 public:
  explicit ImageCache(std::size_t side) : side_(side) {}

  const Image& get(const std::filesystem::path& path) {
    auto it = images_.find(path);
    if (it != images_.end()) return it->second;
    return images_.emplace(path, resize_bilinear(read_image(path), side_, side_)).first->second;
  }
  std::size_t side() const { return side_; }
  std::size_t size() const { return images_.size(); }

 private:
  std::size_t side_;
  std::map<std::filesystem::path, Image> images_;
};

}  // namespace fsra
