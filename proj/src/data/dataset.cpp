#include "fsra/data/dataset.hpp"

#include <algorithm>
#include <map>

namespace fsra {

namespace fs = std::filesystem;

std::vector<std::size_t> DatasetIndex::paired() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].has(ViewTag::kDrone) && classes[i].has(ViewTag::kSatellite)) out.push_back(i);
  }
  return out;
}

std::size_t DatasetIndex::image_count(ViewTag v) const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.images(v).size();
  return n;
}

const ClassEntry* DatasetIndex::find(const std::string& id) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), id,
                             [](const ClassEntry& c, const std::string& s) { return c.id < s; });
  return it != classes.end() && it->id == id ? &*it : nullptr;
}

DatasetIndex scan_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw ConfigError("dataset root '" + root.string() + "' does not exist");
  DatasetIndex index;
  index.root = root;
  std::map<std::string, ClassEntry> by_id;
  for (ViewTag view : {ViewTag::kDrone, ViewTag::kSatellite, ViewTag::kStreet}) {
    const fs::path dir = root / view_name(view);
    if (!fs::is_directory(dir)) {
      if (view == ViewTag::kStreet) continue;
      throw ConfigError("dataset '" + root.string() + "' has no '" + view_name(view) + "' directory");
    }
    for (const auto& class_dir : fs::directory_iterator(dir)) {
      if (!class_dir.is_directory()) continue;
      const std::string id = class_dir.path().filename().string();
      auto& entry = by_id[id];
      entry.id = id;
      auto& list = entry.views[static_cast<int>(view)];
      for (const auto& f : fs::directory_iterator(class_dir.path())) {
        const auto ext = f.path().extension().string();
        if (f.is_regular_file() && (ext == ".png" || ext == ".raw")) list.push_back(f.path());
      }
      std::sort(list.begin(), list.end());
    }
  }
  for (auto& [id, entry] : by_id) {
    const bool drone = entry.has(ViewTag::kDrone);
    const bool sat = entry.has(ViewTag::kSatellite);
    if (!drone && !sat && !entry.has(ViewTag::kStreet)) continue;
    if (drone != sat) {
      index.warnings.push_back("class '" + id + "' has only " +
                               (drone ? "drone" : "satellite") +
                               " images; skipped for paired sampling");
    }
    index.classes.push_back(std::move(entry));
  }
  if (index.classes.empty()) throw ConfigError("dataset '" + root.string() + "' contains no images");
  return index;
}

}  // namespace fsra
