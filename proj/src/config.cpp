#include "ddtr/config.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

namespace ddtr {

using nlohmann::json;

namespace {

// Object view that rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0)) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type (" + std::string(v.type_name()) + ")");
    }
  }

  template <typename T>
  void read_list(const char* key, std::vector<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(path_ + "." + key + ": expected an array");
    std::vector<T> values;
    for (const auto& e : v) {
      if (!e.is_number_integer() || (std::is_unsigned_v<T> && e.get<long long>() < 0)) {
        throw ConfigError(path_ + "." + key + ": entries must be " +
                          (std::is_unsigned_v<T> ? "non-negative integers" : "integers"));
      }
      values.push_back(e.get<T>());
    }
    out = std::move(values);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(path_ + ": unknown key \"" + key + "\"");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_loss(const json& j, LossWeights& w) {
  Section s(j, "model.loss");
  s.read("cls", w.cls);
  s.read("l1", w.l1);
  s.read("giou", w.giou);
  s.read("focal_alpha", w.focal_alpha);
  s.read("focal_gamma", w.focal_gamma);
  s.finish();
}

void read_model(const json& j, ModelConfig& m) {
  Section s(j, "model");
  s.read("resolution_scale", m.resolution_scale);
  s.read("encoder_layers", m.encoder_layers);
  s.read_list("feature_levels", m.feature_levels);
  s.read("num_queries", m.num_queries);
  std::string qi = to_string(m.query_init);
  s.read("query_init", qi);
  try {
    m.query_init = parse_query_init(qi);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model.query_init: ") + e.what());
  }
  s.read("ibbr", m.ibbr);
  s.read("model_dim", m.model_dim);
  s.read("heads", m.heads);
  s.read("samples", m.samples);
  s.read("ffn_dim", m.ffn_dim);
  s.read("decoder_layers", m.decoder_layers);
  s.read("num_classes", m.num_classes);
  if (const json* loss = s.child("loss")) read_loss(*loss, m.loss);
  s.finish();
}

void read_training(const json& j, TrainingConfig& t) {
  Section s(j, "training");
  s.read("steps", t.steps);
  s.read("batch_size", t.batch_size);
  s.read("learning_rate", t.learning_rate);
  s.read("backbone_lr_scale", t.backbone_lr_scale);
  s.read("weight_decay", t.weight_decay);
  s.read("lr_drop_factor", t.lr_drop_factor);
  s.read("grad_clip", t.grad_clip);
  s.finish();
}

void read_dataset(const json& j, ExperimentConfig& cfg) {
  Section s(j, "dataset");
  DatasetSpec& d = cfg.dataset;
  s.read("height", d.height);
  s.read("width", d.width);
  s.read("empty_fraction", d.empty_fraction);
  s.read("objects_mean", d.objects_mean);
  s.read("size_mean", d.size_mean);
  s.read("size_sd", d.size_sd);
  s.read("contrast", d.contrast);
  s.read("noise", d.noise);
  s.read("classes", d.classes);
  s.read("seed", d.seed);
  s.read("train_images", cfg.train_images);
  s.read("eval_images", cfg.eval_images);
  std::string path;
  s.read("path", path);
  if (!path.empty()) cfg.dataset_path = path;
  s.finish();
}

json to_json(const ExperimentConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const TrainingConfig& t = cfg.training;
  const DatasetSpec& d = cfg.dataset;
  json dataset = {{"height", d.height},
                  {"width", d.width},
                  {"empty_fraction", d.empty_fraction},
                  {"objects_mean", d.objects_mean},
                  {"size_mean", d.size_mean},
                  {"size_sd", d.size_sd},
                  {"contrast", d.contrast},
                  {"noise", d.noise},
                  {"classes", d.classes},
                  {"seed", d.seed},
                  {"train_images", cfg.train_images},
                  {"eval_images", cfg.eval_images}};
  if (cfg.dataset_path) dataset["path"] = *cfg.dataset_path;
  return json{
      {"model",
       {{"resolution_scale", m.resolution_scale},
        {"encoder_layers", m.encoder_layers},
        {"feature_levels", m.feature_levels},
        {"num_queries", m.num_queries},
        {"query_init", to_string(m.query_init)},
        {"ibbr", m.ibbr},
        {"model_dim", m.model_dim},
        {"heads", m.heads},
        {"samples", m.samples},
        {"ffn_dim", m.ffn_dim},
        {"decoder_layers", m.decoder_layers},
        {"num_classes", m.num_classes},
        {"loss",
         {{"cls", m.loss.cls},
          {"l1", m.loss.l1},
          {"giou", m.loss.giou},
          {"focal_alpha", m.loss.focal_alpha},
          {"focal_gamma", m.loss.focal_gamma}}}}},
      {"training",
       {{"steps", t.steps},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"backbone_lr_scale", t.backbone_lr_scale},
        {"weight_decay", t.weight_decay},
        {"lr_drop_factor", t.lr_drop_factor},
        {"grad_clip", t.grad_clip}}},
      {"seeds", cfg.seeds},
      {"dataset", dataset}};
}

}  // namespace

void TrainingConfig::validate() const {
  if (steps == 0) throw ConfigError("training.steps must be at least 1");
  if (batch_size == 0) throw ConfigError("training.batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("training.learning_rate must be positive");
  if (!(backbone_lr_scale >= 0.0)) throw ConfigError("training.backbone_lr_scale must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("training.weight_decay must be non-negative");
  if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0)) throw ConfigError("training.lr_drop_factor must lie in (0, 1]");
  if (!(grad_clip >= 0.0)) throw ConfigError("training.grad_clip must be non-negative");
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
    if (!dataset_path) dataset.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  training.validate();
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (!dataset_path && model.num_classes < dataset.classes) {
    throw ConfigError("model.num_classes (" + std::to_string(model.num_classes) + ") is below dataset.classes (" +
                      std::to_string(dataset.classes) + ")");
  }
  if (!dataset_path && (train_images == 0 || eval_images == 0)) {
    throw ConfigError("dataset.train_images and dataset.eval_images must be at least 1");
  }
}

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  Section root(doc, "config");
  if (const json* m = root.child("model")) read_model(*m, cfg.model);
  if (const json* t = root.child("training")) read_training(*t, cfg.training);
  root.read_list("seeds", cfg.seeds);
  if (const json* d = root.child("dataset")) read_dataset(*d, cfg);
  root.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + file.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

std::string config_to_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::string config_digest(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_json(cfg).dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ddtr
