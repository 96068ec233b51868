// Command-line front end: synthetic data generation, training, inference,
// evaluation, neuron analysis and energy profiling over the core library.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vlif/analysis.hpp"
#include "vlif/config.hpp"
#include "vlif/net.hpp"
#include "vlif/ops.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vlif;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;
  std::string out;
  std::string data;
  std::string checkpoint;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "run configuration file (key=value lines)");
  cmd->add_option("--set", o.overrides, "override a config key, e.g. --set train.iterations=500");
  cmd->add_option("--seed", o.seed, "pin all randomness");
  cmd->add_option("--out", o.out, "output directory");
}

RunConfig make_config(const CommonOpts& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig() : parse_run_config(o.config_path);
  for (const std::string& kv : o.overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) throw ValueError("--set expects key=value, got '" + kv + "'");
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed >= 0) cfg.seed = static_cast<uint64_t>(o.seed);
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.data.empty()) cfg.data_dir = o.data;
  if (!o.checkpoint.empty()) cfg.checkpoint = o.checkpoint;
  cfg.finalize();
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

std::string zero_pad(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

int cmd_gen_data(const RunConfig& cfg) {
  fs::create_directories(fs::path(cfg.out_dir) / "rainy");
  fs::create_directories(fs::path(cfg.out_dir) / "clean");
  Rng rng(cfg.seed);
  for (int i = 0; i < cfg.gen_count; ++i) {
    Image clean = make_clean_image(cfg.gen_size, cfg.gen_size, rng);
    RainSpec spec = cfg.rain;
    spec.seed = cfg.seed * 7919 + static_cast<uint64_t>(i);
    ImagePair pair = gen_rain(clean, spec, zero_pad(i, 3));
    save_image((fs::path(cfg.out_dir) / "rainy" / (pair.id + ".ppm")).string(), pair.rainy);
    save_image((fs::path(cfg.out_dir) / "clean" / (pair.id + ".ppm")).string(), pair.clean);
  }
  json j = {{"pairs", cfg.gen_count}, {"size", cfg.gen_size}, {"seed", cfg.seed}};
  write_json(fs::path(cfg.out_dir) / "gen_report.json", j);
  std::cout << "wrote " << cfg.gen_count << " pairs under " << cfg.out_dir << "\n";
  return 0;
}

int cmd_train(RunConfig cfg) {
  if (cfg.data_dir.empty()) throw ValueError("train: --data (or paths.data) is required");
  Dataset ds = load_dataset(cfg.data_dir);
  if (ds.pairs.empty()) throw ValueError("train: no usable pairs under " + cfg.data_dir);
  for (const SkipRecord& s : ds.skipped)
    std::cerr << "skipping " << s.id << ": " << s.reason << "\n";
  DerainNet net(cfg.network);
  TrainResult res =
      train_derain(net, ds.pairs, cfg.train, cfg.out_dir, cfg.seed, network_manifest_json(cfg));
  std::cout << "trained " << cfg.train.iterations << " iterations; best batch PSNR "
            << res.best_psnr << " dB at iteration " << res.best_iteration << "\n"
            << "checkpoints: " << res.best_checkpoint << " , " << res.last_checkpoint << "\n";
  return 0;
}

DerainNet net_from_checkpoint(const std::string& path, RunConfig& cfg) {
  Checkpoint ck = load_checkpoint(path);
  load_network_manifest(ck.manifest_json, cfg);
  DerainNet net(cfg.network);
  net.load_state(ck);
  return net;
}

int cmd_infer(RunConfig cfg, const std::string& input, const std::string& reference) {
  if (cfg.checkpoint.empty()) throw ValueError("infer: --checkpoint is required");
  if (input.empty()) throw ValueError("infer: --input is required");
  DerainNet net = net_from_checkpoint(cfg.checkpoint, cfg);
  Image rainy = load_image(input);
  ForwardCtx ctx;
  Tensor out = net.forward(image_to_tensor(rainy), ctx);
  Image derained = tensor_to_image(out);
  fs::create_directories(cfg.out_dir);
  const fs::path out_path = fs::path(cfg.out_dir) / (fs::path(input).stem().string() + ".derained.ppm");
  save_image(out_path.string(), derained);
  std::cout << "wrote " << out_path.string() << "\n";
  if (!reference.empty()) {
    Image ref = load_image(reference);
    std::cout << "psnr " << psnr(derained, ref) << " dB (rainy baseline "
              << psnr(rainy, ref) << " dB)\n";
  }
  return 0;
}

int cmd_eval(RunConfig cfg) {
  if (cfg.checkpoint.empty()) throw ValueError("eval: --checkpoint is required");
  if (cfg.data_dir.empty()) throw ValueError("eval: --data is required");
  DerainNet net = net_from_checkpoint(cfg.checkpoint, cfg);
  Dataset ds = load_dataset(cfg.data_dir);
  if (ds.pairs.empty()) throw ValueError("eval: no usable pairs under " + cfg.data_dir);
  json per_pair = json::array();
  double sum_psnr = 0.0, sum_ssim = 0.0, base_psnr = 0.0, base_ssim = 0.0;
  for (const ImagePair& pair : ds.pairs) {
    ForwardCtx ctx;
    Image derained = tensor_to_image(net.forward(image_to_tensor(pair.rainy), ctx));
    const double p = psnr(derained, pair.clean), s = ssim(derained, pair.clean);
    const double bp = psnr(pair.rainy, pair.clean), bs = ssim(pair.rainy, pair.clean);
    sum_psnr += p;
    sum_ssim += s;
    base_psnr += bp;
    base_ssim += bs;
    per_pair.push_back({{"id", pair.id}, {"psnr", p}, {"ssim", s}, {"rainy_psnr", bp}, {"rainy_ssim", bs}});
  }
  const double n = static_cast<double>(ds.pairs.size());
  json j = {{"pairs", per_pair},
            {"mean_psnr", sum_psnr / n},
            {"mean_ssim", sum_ssim / n},
            {"rainy_mean_psnr", base_psnr / n},
            {"rainy_mean_ssim", base_ssim / n}};
  write_json(fs::path(cfg.out_dir) / "eval_report.json", j);
  std::cout << "mean PSNR " << sum_psnr / n << " dB (rainy " << base_psnr / n << " dB), mean SSIM "
            << sum_ssim / n << " (rainy " << base_ssim / n << ")\n"
            << "report: " << (fs::path(cfg.out_dir) / "eval_report.json").string() << "\n";
  return 0;
}

json saturation_json(const SaturationReport& rep) {
  json per_t = json::array();
  for (const auto& e : rep.per_t)
    per_t.push_back({{"t", e.t}, {"norm", e.norm}, {"mu", e.mu}, {"low_fraction", e.low_fraction}});
  return {{"per_t", per_t},
          {"input_low_fraction", rep.input_low_fraction},
          {"exact_invariance", rep.exact_invariance}};
}

json decay_json(const ActivationReport& rep) {
  json buckets = json::array();
  for (const auto& b : rep.buckets)
    buckets.push_back({{"lo", b.lo},
                       {"hi", b.hi},
                       {"population", b.population},
                       {"lif_rate", b.lif_rate},
                       {"vlif_rate", b.vlif_rate}});
  json ratio = std::isfinite(rep.ratio) ? json(rep.ratio) : json(nullptr);
  return {{"lif_rate", rep.lif_fraction},
          {"vlif_rate", rep.vlif_fraction},
          {"ratio", ratio},
          {"buckets", buckets},
          {"lowest_bucket",
           {{"lo", rep.lowest.lo},
            {"hi", rep.lowest.hi},
            {"population", rep.lowest.population},
            {"lif_rate", rep.lowest.lif_rate},
            {"vlif_rate", rep.lowest.vlif_rate}}}};
}

int cmd_analyze(const RunConfig& cfg, const std::string& experiment, int n, double sigma,
                int t_max, const std::string& apply_mode, bool dump_tensors) {
  fs::create_directories(cfg.out_dir);
  json out;
  if (experiment == "saturation") {
    SaturationMode mode;
    if (apply_mode == "reapply") mode = SaturationMode::reapply;
    else if (apply_mode == "temporal") mode = SaturationMode::temporal;
    else throw ValueError("analyze-neuron: --apply-mode expects reapply|temporal");
    Tensor probe = make_streak_probe(64, 64, cfg.seed);
    SaturationReport rep = saturation_experiment(probe, t_max, cfg.neuron, mode);
    out = saturation_json(rep);
    if (dump_tensors) {
      save_spkt((fs::path(cfg.out_dir) / "saturation_probe.spkt").string(), probe);
      save_spectrum_pgm((fs::path(cfg.out_dir) / "saturation_probe_spectrum.pgm").string(),
                        spectrum(probe));
    }
    write_json(fs::path(cfg.out_dir) / "analyze_saturation.json", out);
  } else if (experiment == "decay") {
    ActivationReport rep = decay_matrix_experiment(n, cfg.neuron, cfg.vlif, sigma);
    out = decay_json(rep);
    if (dump_tensors) {
      DecayMatrix dm = make_decay_matrix(n, sigma);
      save_spkt((fs::path(cfg.out_dir) / "decay_matrix.spkt").string(), dm.values);
      Tensor pt = patch_to_time(dm.values, cfg.vlif);
      VlifIntegrateResult vi = vlif_integrate(pt, cfg.vlif);
      save_spkt((fs::path(cfg.out_dir) / "decay_vlif_spikes.spkt").string(), vi.spikes.detach());
      save_spkt((fs::path(cfg.out_dir) / "decay_vlif_fmap.spkt").string(), vi.f_map);
    }
    write_json(fs::path(cfg.out_dir) / "analyze_decay.json", out);
  } else {
    throw ValueError("analyze-neuron: unknown experiment '" + experiment +
                     "' (expected saturation|decay)");
  }
  std::cout << out.dump(2) << "\n";
  char line[160];
  if (experiment == "saturation") {
    std::cout << "t     norm            mu              low_fraction\n";
    for (const auto& e : out["per_t"]) {
      std::snprintf(line, sizeof(line), "%-5d %-15.9g %-15.9g %.9g\n", e["t"].get<int>(),
                    e["norm"].get<double>(), e["mu"].get<double>(),
                    e["low_fraction"].get<double>());
      std::cout << line;
    }
  } else {
    std::cout << "bucket            population  lif_rate  vlif_rate\n";
    for (const auto& b : out["buckets"]) {
      std::snprintf(line, sizeof(line), "[%5.3f, %5.3f)  %-11lld %-9.4f %.4f\n",
                    b["lo"].get<double>(), b["hi"].get<double>(),
                    static_cast<long long>(b["population"].get<int64_t>()),
                    b["lif_rate"].get<double>(), b["vlif_rate"].get<double>());
      std::cout << line;
    }
  }
  return 0;
}

int cmd_profile(RunConfig cfg, const std::string& input) {
  DerainNet net = [&] {
    if (!cfg.checkpoint.empty()) return net_from_checkpoint(cfg.checkpoint, cfg);
    return DerainNet(cfg.network);
  }();
  Image sample;
  if (!input.empty()) {
    sample = load_image(input);
  } else {
    Rng rng(cfg.seed);
    Image clean = make_clean_image(cfg.gen_size, cfg.gen_size, rng);
    sample = gen_rain(clean, cfg.rain, "probe").rainy;
  }
  EnergyReport rep = profile_energy(net, image_to_tensor(sample));
  if (rep.empty) std::cerr << "warning: no counted layers in this profile\n";
  json layers = json::array();
  for (const EnergyLayer& l : rep.layers)
    layers.push_back({{"layer", l.count.layer},
                      {"macs", l.count.mac_count},
                      {"spike_driven", l.count.spike_driven},
                      {"firing_rate", l.count.firing_rate},
                      {"sign_ops", l.count.sign_ops},
                      {"sops", l.sops},
                      {"energy_pj", l.energy_pj}});
  json j = {{"layers", layers}, {"total_pj", rep.total_pj}, {"total_uj", rep.total_uj}};
  write_json(fs::path(cfg.out_dir) / "energy_report.json", j);
  std::cout << energy_report_text(rep);
  std::cout << "report: " << (fs::path(cfg.out_dir) / "energy_report.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spiking image deraining toolkit"};
  app.require_subcommand(1);

  CommonOpts gen_o, train_o, infer_o, eval_o, analyze_o, profile_o;

  CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic rainy/clean pairs");
  add_common(gen, gen_o);

  CLI::App* train = app.add_subcommand("train", "train the deraining network");
  add_common(train, train_o);
  train->add_option("--data", train_o.data, "dataset directory (rainy/ + clean/)");

  CLI::App* infer = app.add_subcommand("infer", "derain one image with a checkpoint");
  add_common(infer, infer_o);
  std::string infer_input, infer_reference;
  infer->add_option("--checkpoint", infer_o.checkpoint, "checkpoint file");
  infer->add_option("--input", infer_input, "rainy image (P6 ppm)");
  infer->add_option("--reference", infer_reference, "clean reference for PSNR");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(eval, eval_o);
  eval->add_option("--data", eval_o.data, "dataset directory");
  eval->add_option("--checkpoint", eval_o.checkpoint, "checkpoint file");

  CLI::App* analyze = app.add_subcommand("analyze-neuron", "saturation / decay-matrix experiments");
  add_common(analyze, analyze_o);
  std::string experiment = "saturation";
  std::string apply_mode = "reapply";
  int n = 64, t_max = 5;
  double sigma = 2.0;
  bool dump_tensors = false;
  analyze->add_option("--experiment", experiment, "saturation|decay");
  analyze->add_option("--n", n, "decay matrix side length");
  analyze->add_option("--sigma", sigma, "decay length");
  analyze->add_option("--t-max", t_max, "largest application count");
  analyze->add_option("--apply-mode", apply_mode,
                      "saturation operator: reapply the fresh mask or step one neuron in time");
  analyze->add_flag("--dump", dump_tensors, "dump probe tensors (SPKT) and spectra (PGM)");

  CLI::App* profile = app.add_subcommand("profile-energy", "count MACs/SOPs and estimate energy");
  add_common(profile, profile_o);
  std::string profile_input;
  profile->add_option("--checkpoint", profile_o.checkpoint, "optional checkpoint file");
  profile->add_option("--input", profile_input, "sample image (synthetic when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(make_config(gen_o));
    if (train->parsed()) return cmd_train(make_config(train_o));
    if (infer->parsed()) return cmd_infer(make_config(infer_o), infer_input, infer_reference);
    if (eval->parsed()) return cmd_eval(make_config(eval_o));
    if (analyze->parsed())
      return cmd_analyze(make_config(analyze_o), experiment, n, sigma, t_max, apply_mode,
                         dump_tensors);
    if (profile->parsed()) return cmd_profile(make_config(profile_o), profile_input);
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
