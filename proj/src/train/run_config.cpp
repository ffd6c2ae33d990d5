#include "fsra/train/run_config.hpp"

#include <fstream>
#include <map>

#include "fsra/data/dataset.hpp"
#include "fsra/util/hash.hpp"

namespace fsra {

using nlohmann::json;

namespace {

const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> table{
      {"regions", "model.head.regions"},
      {"k", "sampler.k"},
      {"image-size", "model.backbone.image_size"},
      {"image_size", "model.backbone.image_size"},
      {"batch-size", "sampler.batch_size"},
      {"batch_size", "sampler.batch_size"},
      {"epochs", "train.epochs"},
      {"seed", "train.seed"},
      {"margin", "loss.margin"},
  };
  return table;
}

void check_known(const json& user, const json& reference, const std::string& where) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!reference.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    if (it.value().is_object() && reference[it.key()].is_object()) {
      check_known(it.value(), reference[it.key()], key);
    } else if (it.value().is_object() != reference[it.key()].is_object()) {
      throw ConfigError("config key '" + key + "' has the wrong type");
    }
  }
}

void merge(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object()) {
      merge(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

template <typename V>
V get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + where + "." + key + "': " + e.what());
  }
}

json augment_json(const AugmentConfig& a) {
  return {{"flip_p", a.flip_p},         {"pad_crop_p", a.pad_crop_p}, {"max_pad", a.max_pad},
          {"shift_p", a.shift_p},       {"max_shift", a.max_shift},   {"jitter_p", a.jitter_p},
          {"max_jitter", a.max_jitter}};
}

}  // namespace

LrSchedule TrainConfig::schedule() const {
  return LrSchedule::scaled(epochs, milestone_reference, milestones, decay_factor);
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (milestone_reference == 0) throw ConfigError("train.milestone_reference must be positive");
  if (!(sgd.lr_backbone > 0.0) || !(sgd.lr_heads > 0.0)) throw ConfigError("learning rates must be positive");
  if (sgd.momentum < 0.0 || sgd.weight_decay < 0.0) throw ConfigError("momentum and weight decay must be >= 0");
  if (!(decay_factor > 0.0)) throw ConfigError("train.decay_factor must be positive");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (i > 0 && milestones[i] <= milestones[i - 1]) {
      throw ConfigError("train.milestones must be strictly increasing");
    }
    if (milestones[i] == 0 || milestones[i] >= milestone_reference) {
      throw ConfigError("train.milestones must lie in [1, milestone_reference)");
    }
  }
  if (keep_checkpoints != "all" && keep_checkpoints != "last") {
    throw ConfigError("train.keep_checkpoints must be 'all' or 'last'");
  }
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.model.backbone = BackboneConfig::vit_micro();
  c.model.head.regions = 3;
  c.model.head.hidden = 64;
  c.model.head.dropout = 0.1;
  c.out = "runs/default";
  return c;
}

void RunConfig::validate() const {
  try {
    model.backbone.validate();
    if (model.head.regions > model.backbone.num_patches()) {
      throw ConfigError("model.head.regions exceeds the number of patches");
    }
    if (model.head.hidden == 0) throw ConfigError("model.head.hidden must be positive");
    if (model.head.dropout < 0.0 || model.head.dropout >= 1.0) throw ConfigError("model.head.dropout in [0,1)");
    loss.validate();
    if (!loss.branch_weights.empty() && loss.branch_weights.size() != model.head.branches()) {
      throw ConfigError("loss.branch_weights needs one weight per branch");
    }
    sampler.validate();
    train.validate();
    if (eval.batch_size == 0) throw ConfigError("eval.batch_size must be positive");
    for (auto k : eval.recall_ks) {
      if (k == 0) throw ConfigError("eval.recall_ks must be positive");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json to_json(const RunConfig& c) {
  const auto& b = c.model.backbone;
  const auto& h = c.model.head;
  const auto& t = c.train;
  json j;
  j["model"]["backbone"] = {{"image_size", b.image_size}, {"patch_size", b.patch_size},
                            {"channels", b.channels},     {"embed_dim", b.embed_dim},
                            {"depth", b.depth},           {"heads", b.heads},
                            {"mlp_ratio", b.mlp_ratio},   {"dropout", b.dropout}};
  j["model"]["head"] = {{"regions", h.regions}, {"hidden", h.hidden}, {"dropout", h.dropout}};
  j["loss"] = {{"margin", c.loss.margin},
               {"use_triplet", c.loss.use_triplet},
               {"use_kl", c.loss.use_kl},
               {"kl_all_branches", c.loss.kl_all_branches},
               {"kl_literal", c.loss.kl_literal},
               {"triplet_features", c.loss.triplet_features == TripletFeatures::kBottleneck
                                        ? "bottleneck"
                                        : "pre_classifier"},
               {"branch_weights", c.loss.branch_weights}};
  j["sampler"] = {{"k", c.sampler.k}, {"batch_size", c.sampler.batch_size}};
  j["train"] = {{"epochs", t.epochs},
                {"lr_backbone", t.sgd.lr_backbone},
                {"lr_heads", t.sgd.lr_heads},
                {"momentum", t.sgd.momentum},
                {"weight_decay", t.sgd.weight_decay},
                {"milestones", t.milestones},
                {"milestone_reference", t.milestone_reference},
                {"decay_factor", t.decay_factor},
                {"seed", t.seed},
                {"keep_checkpoints", t.keep_checkpoints},
                {"augment", augment_json(t.augment)}};
  j["eval"] = {{"recall_ks", c.eval.recall_ks}, {"batch_size", c.eval.batch_size}};
  j["data"] = {{"train_root", c.train_root.string()}, {"test_root", c.test_root.string()}};
  j["out"] = c.out.string();
  return j;
}

RunConfig run_config_from_json(const json& user) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  json j = to_json(RunConfig::defaults());
  check_known(user, j, "");
  merge(j, user);

  RunConfig c;
  const auto& jb = j["model"]["backbone"];
  auto& b = c.model.backbone;
  b.image_size = get<std::size_t>(jb, "image_size", "model.backbone");
  b.patch_size = get<std::size_t>(jb, "patch_size", "model.backbone");
  b.channels = get<std::size_t>(jb, "channels", "model.backbone");
  b.embed_dim = get<std::size_t>(jb, "embed_dim", "model.backbone");
  b.depth = get<std::size_t>(jb, "depth", "model.backbone");
  b.heads = get<std::size_t>(jb, "heads", "model.backbone");
  b.mlp_ratio = get<double>(jb, "mlp_ratio", "model.backbone");
  b.dropout = get<double>(jb, "dropout", "model.backbone");
  const auto& jh = j["model"]["head"];
  c.model.head.regions = get<std::size_t>(jh, "regions", "model.head");
  c.model.head.hidden = get<std::size_t>(jh, "hidden", "model.head");
  c.model.head.dropout = get<double>(jh, "dropout", "model.head");

  const auto& jl = j["loss"];
  c.loss.margin = get<double>(jl, "margin", "loss");
  c.loss.use_triplet = get<bool>(jl, "use_triplet", "loss");
  c.loss.use_kl = get<bool>(jl, "use_kl", "loss");
  c.loss.kl_all_branches = get<bool>(jl, "kl_all_branches", "loss");
  c.loss.kl_literal = get<bool>(jl, "kl_literal", "loss");
  const auto tf = get<std::string>(jl, "triplet_features", "loss");
  if (tf == "bottleneck") {
    c.loss.triplet_features = TripletFeatures::kBottleneck;
  } else if (tf == "pre_classifier") {
    c.loss.triplet_features = TripletFeatures::kPreClassifier;
  } else {
    throw ConfigError("loss.triplet_features must be 'pre_classifier' or 'bottleneck'");
  }
  c.loss.branch_weights = get<std::vector<double>>(jl, "branch_weights", "loss");

  c.sampler.k = get<std::size_t>(j["sampler"], "k", "sampler");
  c.sampler.batch_size = get<std::size_t>(j["sampler"], "batch_size", "sampler");

  const auto& jt = j["train"];
  auto& t = c.train;
  t.epochs = get<std::size_t>(jt, "epochs", "train");
  t.sgd.lr_backbone = get<double>(jt, "lr_backbone", "train");
  t.sgd.lr_heads = get<double>(jt, "lr_heads", "train");
  t.sgd.momentum = get<double>(jt, "momentum", "train");
  t.sgd.weight_decay = get<double>(jt, "weight_decay", "train");
  t.milestones = get<std::vector<std::size_t>>(jt, "milestones", "train");
  t.milestone_reference = get<std::size_t>(jt, "milestone_reference", "train");
  t.decay_factor = get<double>(jt, "decay_factor", "train");
  t.seed = get<std::uint64_t>(jt, "seed", "train");
  t.keep_checkpoints = get<std::string>(jt, "keep_checkpoints", "train");
  const auto& ja = jt["augment"];
  t.augment.flip_p = get<double>(ja, "flip_p", "train.augment");
  t.augment.pad_crop_p = get<double>(ja, "pad_crop_p", "train.augment");
  t.augment.max_pad = get<std::size_t>(ja, "max_pad", "train.augment");
  t.augment.shift_p = get<double>(ja, "shift_p", "train.augment");
  t.augment.max_shift = get<std::size_t>(ja, "max_shift", "train.augment");
  t.augment.jitter_p = get<double>(ja, "jitter_p", "train.augment");
  t.augment.max_jitter = get<double>(ja, "max_jitter", "train.augment");
  c.sampler.seed = t.seed;

  c.eval.recall_ks = get<std::vector<std::size_t>>(j["eval"], "recall_ks", "eval");
  c.eval.batch_size = get<std::size_t>(j["eval"], "batch_size", "eval");
  c.train_root = get<std::string>(j["data"], "train_root", "data");
  c.test_root = get<std::string>(j["data"], "test_root", "data");
  c.out = get<std::string>(j, "out", "");
  c.validate();
  return c;
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  if (auto it = aliases().find(key); it != aliases().end()) key = it->second;
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (!node->is_null() && !node->is_object()) {
      throw ConfigError("override key '" + key + "' descends into a value");
    }
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
  json tree = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    tree = json::parse(in, nullptr, false);
    if (tree.is_discarded()) throw ConfigError("config '" + path.string() + "' is not valid JSON");
    // Relative data paths are taken relative to the config file.
    for (const char* key : {"train_root", "test_root"}) {
      if (tree.contains("data") && tree["data"].contains(key) && tree["data"][key].is_string()) {
        std::filesystem::path p = tree["data"][key].get<std::string>();
        if (!p.empty() && p.is_relative()) tree["data"][key] = (path.parent_path() / p).string();
      }
    }
  }
  for (const auto& o : overrides) apply_override(tree, o);
  return run_config_from_json(tree);
}

std::string config_hash(const RunConfig& config) {
  auto j = to_json(config);
  j.erase("out");
  return hex64(fnv1a64(j.dump()));
}

}  // namespace fsra
