#include "vlif/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

namespace vlif {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

long long parse_ll(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ValueError("config: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  return static_cast<int>(parse_ll(key, v));
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  const long long raw = parse_ll(key, v);
  if (raw < 0) throw ValueError("config: key '" + key + "' expects a non-negative integer");
  return static_cast<uint64_t>(raw);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ValueError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) throw ValueError("config: key '" + key + "' expects a comma-separated list");
  return out;
}

NeuronVariant parse_variant(const std::string& key, const std::string& v) {
  if (v == "nilif") return NeuronVariant::nilif;
  if (v == "ilif") return NeuronVariant::ilif;
  if (v == "lif") return NeuronVariant::lif;
  throw ValueError("config: key '" + key + "' expects nilif|ilif|lif, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"network.timesteps", [](RunConfig& c, const std::string& k, const std::string& v) { c.network.timesteps = parse_int(k, v); }},
      {"network.base_channels", [](RunConfig& c, const std::string& k, const std::string& v) { c.network.base_channels = parse_int(k, v); }},
      {"network.scales", [](RunConfig& c, const std::string& k, const std::string& v) { c.network.scales = parse_int(k, v); }},
      {"network.channel_multipliers", [](RunConfig& c, const std::string& k, const std::string& v) { c.network.channel_multipliers = parse_int_list(k, v); }},
      {"network.r", [](RunConfig& c, const std::string& k, const std::string& v) { c.network.r = parse_int(k, v); }},
      {"network.refine_blocks", [](RunConfig& c, const std::string& k, const std::string& v) { c.network.refine_blocks = parse_int(k, v); }},
      {"network.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.network.seed = parse_u64(k, v); }},
      {"network.vlif_variant", [](RunConfig& c, const std::string& k, const std::string& v) { c.network.vlif_variant = parse_variant(k, v); }},
      {"network.patch_order",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "row_major") c.network.patch_order = PatchOrder::row_major;
         else if (v == "column_major") c.network.patch_order = PatchOrder::column_major;
         else throw ValueError("config: key '" + k + "' expects row_major|column_major");
       }},
      {"neuron.theta", [](RunConfig& c, const std::string& k, const std::string& v) { c.neuron.theta = parse_double(k, v); }},
      {"neuron.beta", [](RunConfig& c, const std::string& k, const std::string& v) { c.neuron.beta = parse_double(k, v); }},
      {"neuron.d_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.neuron.d_max = parse_int(k, v); }},
      {"neuron.reset",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "subtract") c.neuron.reset = ResetMode::subtract;
         else if (v == "zero") c.neuron.reset = ResetMode::zero;
         else throw ValueError("config: key '" + k + "' expects subtract|zero");
       }},
      {"neuron.surrogate_width", [](RunConfig& c, const std::string& k, const std::string& v) { c.neuron.surrogate_width = parse_double(k, v); }},
      {"vlif.r", [](RunConfig& c, const std::string& k, const std::string& v) { c.vlif.r = parse_int(k, v); }},
      {"vlif.compression",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "temporal") c.vlif.compression = Compression::temporal;
         else if (v == "channel") c.vlif.compression = Compression::channel;
         else throw ValueError("config: key '" + k + "' expects temporal|channel");
       }},
      {"vlif.patch_order",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "row_major") c.vlif.patch_order = PatchOrder::row_major;
         else if (v == "column_major") c.vlif.patch_order = PatchOrder::column_major;
         else throw ValueError("config: key '" + k + "' expects row_major|column_major");
       }},
      {"vlif.variant", [](RunConfig& c, const std::string& k, const std::string& v) { c.vlif.variant = parse_variant(k, v); }},
      {"train.iterations", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.iterations = parse_int(k, v); }},
      {"train.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = parse_int(k, v); }},
      {"train.learning_rate", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.learning_rate = parse_double(k, v); }},
      {"train.lr_schedule", [](RunConfig& c, const std::string&, const std::string& v) { c.train.lr_schedule = v; }},
      {"train.patch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.patch_size = parse_int(k, v); }},
      {"train.loss", [](RunConfig& c, const std::string&, const std::string& v) { c.train.loss = v; }},
      {"train.charbonnier_eps", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.charbonnier_eps = parse_double(k, v); }},
      {"train.log_interval", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.log_interval = parse_int(k, v); }},
      {"rain.streak_count", [](RunConfig& c, const std::string& k, const std::string& v) { c.rain.streak_count = parse_int(k, v); }},
      {"rain.length_px", [](RunConfig& c, const std::string& k, const std::string& v) { c.rain.length_px = parse_double(k, v); }},
      {"rain.angle_deg", [](RunConfig& c, const std::string& k, const std::string& v) { c.rain.angle_deg = parse_double(k, v); }},
      {"rain.angle_jitter_deg", [](RunConfig& c, const std::string& k, const std::string& v) { c.rain.angle_jitter_deg = parse_double(k, v); }},
      {"rain.width_px", [](RunConfig& c, const std::string& k, const std::string& v) { c.rain.width_px = parse_double(k, v); }},
      {"rain.intensity", [](RunConfig& c, const std::string& k, const std::string& v) { c.rain.intensity = parse_double(k, v); }},
      {"rain.blur_sigma", [](RunConfig& c, const std::string& k, const std::string& v) { c.rain.gaussian_blur_sigma = parse_double(k, v); }},
      {"rain.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.rain.seed = parse_u64(k, v); }},
      {"paths.data", [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"paths.out", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      {"paths.checkpoint", [](RunConfig& c, const std::string&, const std::string& v) { c.checkpoint = v; }},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
      {"data.count", [](RunConfig& c, const std::string& k, const std::string& v) { c.gen_count = parse_int(k, v); }},
      {"data.size", [](RunConfig& c, const std::string& k, const std::string& v) { c.gen_size = parse_int(k, v); }},
  };
  return table;
}

}  // namespace

void RunConfig::finalize() {
  network.neuron = neuron;
  vlif.neuron = neuron;
  network.seed = network.seed == NetworkConfig().seed ? seed : network.seed;
  rain.seed = rain.seed == RainSpec().seed ? seed : rain.seed;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto it = setters().find(key);
  if (it == setters().end()) throw ValueError("config: unknown key '" + key + "'");
  it->second(cfg, key, value);
}

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ValueError("config: " + origin + ":" + std::to_string(lineno) +
                       ": expected key=value, got '" + t + "'");
    apply_override(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValueError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config_text(ss.str(), path);
}

std::string network_manifest_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["network"] = {
      {"timesteps", cfg.network.timesteps},
      {"base_channels", cfg.network.base_channels},
      {"scales", cfg.network.scales},
      {"channel_multipliers", cfg.network.channel_multipliers},
      {"r", cfg.network.r},
      {"refine_blocks", cfg.network.refine_blocks},
      {"seed", cfg.network.seed},
      {"vlif_variant", cfg.network.vlif_variant == NeuronVariant::nilif  ? "nilif"
                       : cfg.network.vlif_variant == NeuronVariant::ilif ? "ilif"
                                                                         : "lif"},
      {"patch_order",
       cfg.network.patch_order == PatchOrder::row_major ? "row_major" : "column_major"},
  };
  j["neuron"] = {
      {"theta", cfg.neuron.theta},
      {"beta", cfg.neuron.beta},
      {"d_max", cfg.neuron.d_max},
      {"reset", cfg.neuron.reset == ResetMode::subtract ? "subtract" : "zero"},
      {"surrogate_width", cfg.neuron.surrogate_width},
  };
  return j.dump();
}

void load_network_manifest(const std::string& json_text, RunConfig& cfg) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("manifest: ") + e.what(), 0);
  }
  const auto& n = j.at("network");
  cfg.network.timesteps = n.at("timesteps").get<int>();
  cfg.network.base_channels = n.at("base_channels").get<int>();
  cfg.network.scales = n.at("scales").get<int>();
  cfg.network.channel_multipliers = n.at("channel_multipliers").get<std::vector<int>>();
  cfg.network.r = n.at("r").get<int>();
  cfg.network.refine_blocks = n.at("refine_blocks").get<int>();
  cfg.network.seed = n.at("seed").get<uint64_t>();
  const std::string variant = n.at("vlif_variant").get<std::string>();
  cfg.network.vlif_variant = variant == "nilif" ? NeuronVariant::nilif
                             : variant == "ilif" ? NeuronVariant::ilif
                                                 : NeuronVariant::lif;
  cfg.network.patch_order =
      n.at("patch_order").get<std::string>() == "row_major" ? PatchOrder::row_major
                                                            : PatchOrder::column_major;
  const auto& ne = j.at("neuron");
  cfg.neuron.theta = ne.at("theta").get<double>();
  cfg.neuron.beta = ne.at("beta").get<double>();
  cfg.neuron.d_max = ne.at("d_max").get<int>();
  cfg.neuron.reset = ne.at("reset").get<std::string>() == "zero" ? ResetMode::zero
                                                                 : ResetMode::subtract;
  cfg.neuron.surrogate_width = ne.at("surrogate_width").get<double>();
  cfg.network.neuron = cfg.neuron;
  cfg.vlif.neuron = cfg.neuron;
}

}  // namespace vlif
