#include "ipart/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "ipart/errors.hpp"
#include "ipart/io.hpp"

namespace ipart {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("config: " + key + " = '" + value + "' is not " + what);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::logic_error&) {
    bad(key, v, "a number");
  }
  if (used != v.size()) bad(key, v, "a number");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, v, "an integer");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, v, "an unsigned integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, v, "a boolean (true/false)");
}

std::vector<Index> to_list(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(to_int(key, trim(item)));
  if (out.empty()) bad(key, v, "a comma-separated integer list");
  return out;
}

std::string str(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string str(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string str(bool v) { return v ? "true" : "false"; }

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.seed = to_uint(k, v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"threads", [](RunConfig& c, auto& k, auto& v) { c.threads = static_cast<int>(to_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.threads); }},
      {"out", [](RunConfig& c, auto&, auto& v) { c.out = v; }, [](const RunConfig& c) { return c.out.string(); }},
      {"data", [](RunConfig& c, auto&, auto& v) { c.data = v; }, [](const RunConfig& c) { return c.data.string(); }},

      {"scene.canvas", [](RunConfig& c, auto& k, auto& v) { c.scene.canvas = to_int(k, v); },
       [](const RunConfig& c) { return std::to_string(c.scene.canvas); }},
      {"scene.classes", [](RunConfig& c, auto& k, auto& v) { c.scene.classes = to_int(k, v); },
       [](const RunConfig& c) { return std::to_string(c.scene.classes); }},
      {"scene.noise", [](RunConfig& c, auto& k, auto& v) { c.scene.noise = to_double(k, v); },
       [](const RunConfig& c) { return str(c.scene.noise); }},
      {"scene.center_jitter", [](RunConfig& c, auto& k, auto& v) { c.scene.center_jitter = to_double(k, v); },
       [](const RunConfig& c) { return str(c.scene.center_jitter); }},
      {"scene.anchor_jitter", [](RunConfig& c, auto& k, auto& v) { c.scene.anchor_jitter = to_double(k, v); },
       [](const RunConfig& c) { return str(c.scene.anchor_jitter); }},
      {"scene.background_min", [](RunConfig& c, auto& k, auto& v) { c.scene.background_min = to_double(k, v); },
       [](const RunConfig& c) { return str(c.scene.background_min); }},
      {"scene.background_max", [](RunConfig& c, auto& k, auto& v) { c.scene.background_max = to_double(k, v); },
       [](const RunConfig& c) { return str(c.scene.background_max); }},

      {"data.train", [](RunConfig& c, auto& k, auto& v) { c.train_samples = to_int(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train_samples); }},
      {"data.fit", [](RunConfig& c, auto& k, auto& v) { c.fit_samples = to_int(k, v); },
       [](const RunConfig& c) { return std::to_string(c.fit_samples); }},
      {"data.test", [](RunConfig& c, auto& k, auto& v) { c.test_samples = to_int(k, v); },
       [](const RunConfig& c) { return std::to_string(c.test_samples); }},

      {"model.widths", [](RunConfig& c, auto& k, auto& v) { c.model.backbone.widths = to_list(k, v); },
       [](const RunConfig& c) { return str(c.model.backbone.widths); }},
      {"model.strides", [](RunConfig& c, auto& k, auto& v) { c.model.backbone.strides = to_list(k, v); },
       [](const RunConfig& c) { return str(c.model.backbone.strides); }},
      {"model.batch_norm", [](RunConfig& c, auto& k, auto& v) { c.model.backbone.batch_norm = to_bool(k, v); },
       [](const RunConfig& c) { return str(c.model.backbone.batch_norm); }},
      {"model.parts", [](RunConfig& c, auto& k, auto& v) { c.model.parts = to_int(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.parts); }},
      {"model.blocks", [](RunConfig& c, auto& k, auto& v) { c.model.blocks = to_int(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.blocks); }},
      {"model.attention", [](RunConfig& c, auto& k, auto& v) { c.model.use_attention = to_bool(k, v); },
       [](const RunConfig& c) { return str(c.model.use_attention); }},
      {"model.heads",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "single") {
           c.model.heads = HeadMode::single;
         } else if (v == "per_attribute") {
           c.model.heads = HeadMode::per_attribute;
         } else {
           bad(k, v, "'single' or 'per_attribute'");
         }
       },
       [](const RunConfig& c) { return std::string(c.model.heads == HeadMode::single ? "single" : "per_attribute"); }},
      {"model.smoothing_size", [](RunConfig& c, auto& k, auto& v) { c.model.smoothing_size = to_int(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.smoothing_size); }},
      {"model.smoothing_bandwidth",
       [](RunConfig& c, auto& k, auto& v) { c.model.smoothing_bandwidth = to_double(k, v); },
       [](const RunConfig& c) { return str(c.model.smoothing_bandwidth); }},

      {"train.lr", [](RunConfig& c, auto& k, auto& v) { c.train.learning_rate = to_double(k, v); },
       [](const RunConfig& c) { return str(c.train.learning_rate); }},
      {"train.momentum", [](RunConfig& c, auto& k, auto& v) { c.train.momentum = to_double(k, v); },
       [](const RunConfig& c) { return str(c.train.momentum); }},
      {"train.weight_decay", [](RunConfig& c, auto& k, auto& v) { c.train.weight_decay = to_double(k, v); },
       [](const RunConfig& c) { return str(c.train.weight_decay); }},
      {"train.batch", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = to_int(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {"train.epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = to_int(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"train.w_cls", [](RunConfig& c, auto& k, auto& v) { c.train.w_cls = to_double(k, v); },
       [](const RunConfig& c) { return str(c.train.w_cls); }},
      {"train.w_reg", [](RunConfig& c, auto& k, auto& v) { c.train.w_reg = to_double(k, v); },
       [](const RunConfig& c) { return str(c.train.w_reg); }},
      {"train.eps", [](RunConfig& c, auto& k, auto& v) { c.train.eps = to_double(k, v); },
       [](const RunConfig& c) { return str(c.train.eps); }},
      {"train.flip", [](RunConfig& c, auto& k, auto& v) { c.train.flip = to_bool(k, v); },
       [](const RunConfig& c) { return str(c.train.flip); }},
      {"train.crop", [](RunConfig& c, auto& k, auto& v) { c.train.crop = to_bool(k, v); },
       [](const RunConfig& c) { return str(c.train.crop); }},
      {"train.crop_pad", [](RunConfig& c, auto& k, auto& v) { c.train.crop_pad = to_int(k, v); },
       [](const RunConfig& c) { return std::to_string(c.train.crop_pad); }},

      {"prior.alpha", [](RunConfig& c, auto& k, auto& v) { c.train.prior_alpha = to_double(k, v); },
       [](const RunConfig& c) { return str(c.train.prior_alpha); }},
      {"prior.beta", [](RunConfig& c, auto& k, auto& v) { c.train.prior_beta = to_double(k, v); },
       [](const RunConfig& c) { return str(c.train.prior_beta); }},
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

void RunConfig::apply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string RunConfig::echo() const {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.emplace_back(f.key);
  return out;
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("config: threads must be at least 1");
  if (train_samples < 1 || fit_samples < 1 || test_samples < 1) {
    throw ConfigError("config: data.train, data.fit and data.test must be positive");
  }
  scene.validate();
  train.validate();
  if (model.backbone.widths.size() != model.backbone.strides.size()) {
    throw ConfigError("config: model.widths and model.strides must have the same length");
  }
  for (Index s : model.backbone.strides) {
    if (s < 1) throw ConfigError("config: strides must be positive");
  }
  if (scene.canvas % model.backbone.total_stride() != 0) {
    throw ConfigError("config: scene.canvas must be divisible by the total backbone stride");
  }
  if (model.parts < 2) throw ConfigError("config: model.parts must be at least 2");
  if (model.blocks < 0) throw ConfigError("config: model.blocks must be nonnegative");
  if (model.smoothing_size < 1 || model.smoothing_size % 2 == 0 || !(model.smoothing_bandwidth > 0.0)) {
    throw ConfigError("config: smoothing size must be odd and bandwidth positive");
  }
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m = model;
  m.classes = scene.classes;
  m.attributes = m.heads == HeadMode::per_attribute ? static_cast<Index>(scene.parts.size()) : 0;
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  t.threads = threads;
  return t;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  RunConfig cfg;
  cfg.apply(read_text(path));
  return cfg;
}

std::uint64_t RunConfig::data_seed(std::uint64_t split) const { return derive_seed(seed, 0x1000 + split); }

std::uint64_t RunConfig::model_seed() const { return derive_seed(seed, 0x2000); }

}  // namespace ipart
