#include "gknet/config.hpp"

#include <fstream>
#include <set>

namespace gknet {

namespace {

// Reads known keys from one JSON object and rejects the rest.
class Fields {
 public:
  Fields(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    GK_CONFIG_CHECK(j.is_object(), "config section '" << section_ << "' must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      it->get_to(out);
    } catch (const json::exception& e) {
      throw ConfigError("config " + section_ + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    for (const auto& item : j_.items())
      GK_CONFIG_CHECK(known_.count(item.key()), "unknown config key '" << section_ << "." << item.key() << "'");
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> known_;
};

}  // namespace

void to_json(json& j, const TransformerConfig& c) {
  j = json{{"layers", c.layers}, {"heads", c.heads}, {"ffn_expansion", c.ffn_expansion}};
}

void from_json(const json& j, TransformerConfig& c) {
  Fields f(j, "network.transformer");
  f.get("layers", c.layers);
  f.get("heads", c.heads);
  f.get("ffn_expansion", c.ffn_expansion);
  f.finish();
}

void to_json(json& j, const NetworkConfig& c) {
  j = json{{"depth", c.depth},
           {"base_channels", c.base_channels},
           {"resolution", c.resolution},
           {"kernel_sizes", c.kernel_sizes},
           {"modulation_levels", c.modulation_levels},
           {"scf_groups", c.scf_groups},
           {"transformer", c.transformer},
           {"skip_attention", c.skip_attention},
           {"selective_fusion", c.selective_fusion}};
}

void from_json(const json& j, NetworkConfig& c) {
  Fields f(j, "network");
  f.get("depth", c.depth);
  f.get("base_channels", c.base_channels);
  f.get("resolution", c.resolution);
  f.get("kernel_sizes", c.kernel_sizes);
  f.get("modulation_levels", c.modulation_levels);
  f.get("scf_groups", c.scf_groups);
  f.get("transformer", c.transformer);
  f.get("skip_attention", c.skip_attention);
  f.get("selective_fusion", c.selective_fusion);
  f.finish();
}

void to_json(json& j, const SynthesisConfig& c) {
  j = json{{"gain", c.gain},           {"gamma", c.gamma},           {"brightness", c.brightness},
           {"saturation", c.saturation}, {"min_shapes", c.min_shapes}, {"max_shapes", c.max_shapes},
           {"min_area", c.min_area},   {"max_area", c.max_area},     {"seed", c.seed}};
}

void from_json(const json& j, SynthesisConfig& c) {
  Fields f(j, "synthesis");
  f.get("gain", c.gain);
  f.get("gamma", c.gamma);
  f.get("brightness", c.brightness);
  f.get("saturation", c.saturation);
  f.get("min_shapes", c.min_shapes);
  f.get("max_shapes", c.max_shapes);
  f.get("min_area", c.min_area);
  f.get("max_area", c.max_area);
  f.get("seed", c.seed);
  f.finish();
}

void to_json(json& j, const LossConfig& c) { j = json{{"a_min", c.a_min}}; }

void from_json(const json& j, LossConfig& c) {
  Fields f(j, "train.loss");
  f.get("a_min", c.a_min);
  f.finish();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr", c.lr},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"eps", c.eps},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"max_steps", c.max_steps},
           {"seed", c.seed},
           {"eval_interval", c.eval_interval},
           {"checkpoint_interval", c.checkpoint_interval},
           {"log_interval", c.log_interval},
           {"checkpoint_dir", c.checkpoint_dir},
           {"grad_clip", c.grad_clip},
           {"stop_fmse_drop", c.stop_fmse_drop},
           {"loss", c.loss}};
}

void from_json(const json& j, TrainConfig& c) {
  Fields f(j, "train");
  f.get("lr", c.lr);
  f.get("beta1", c.beta1);
  f.get("beta2", c.beta2);
  f.get("eps", c.eps);
  f.get("epochs", c.epochs);
  f.get("batch_size", c.batch_size);
  f.get("max_steps", c.max_steps);
  f.get("seed", c.seed);
  f.get("eval_interval", c.eval_interval);
  f.get("checkpoint_interval", c.checkpoint_interval);
  f.get("log_interval", c.log_interval);
  f.get("checkpoint_dir", c.checkpoint_dir);
  f.get("grad_clip", c.grad_clip);
  f.get("stop_fmse_drop", c.stop_fmse_drop);
  f.get("loss", c.loss);
  f.finish();
}

ConfigFile parse_config(const json& j, ConfigFile base) {
  Fields f(j, "<root>");
  f.get("network", base.network);
  f.get("train", base.train);
  f.get("synthesis", base.synthesis);
  f.finish();
  base.train.network = base.network;
  return base;
}

ConfigFile load_config_file(const std::filesystem::path& path, ConfigFile base) {
  std::ifstream is(path);
  GK_CONFIG_CHECK(is.good(), "cannot read config file " << path.string());
  json j;
  try {
    j = json::parse(is, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return parse_config(j, std::move(base));
}

json to_json(const ConfigFile& c) {
  return json{{"network", c.network}, {"train", c.train}, {"synthesis", c.synthesis}};
}

}  // namespace gknet
