#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsra/losses.hpp"

namespace fsra {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ClassEntry {
  std::string id;
  // Indexed by ViewTag.
  std::array<std::vector<std::filesystem::path>, 3> views;

  const std::vector<std::filesystem::path>& images(ViewTag v) const {
    return views[static_cast<int>(v)];
  }
  bool has(ViewTag v) const { return !images(v).empty(); }
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<ClassEntry> classes;  // sorted by id
  std::vector<std::string> warnings;

  // Classes that have both drone and satellite images, in id order. Their
  // positions in this list are the training labels.
  std::vector<std::size_t> paired() const;
  std::size_t image_count(ViewTag v) const;
  const ClassEntry* find(const std::string& id) const;
};

// Indexes root/{drone,satellite[,street]}/<class>/<image>.{png,raw}.
// Throws ConfigError when root, the drone or the satellite directory is
// missing, or when no image is found.
DatasetIndex scan_dataset(const std::filesystem::path& root);

}  // namespace fsra
