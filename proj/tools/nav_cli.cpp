#include <csignal>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "nmfnav/gateway.hpp"
#include "nmfnav/gradsuite.hpp"
#include "nmfnav/policy.hpp"
#include "nmfnav/server.hpp"
#include "nmfnav/train.hpp"

using namespace nmfnav;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void emit(const json& j) { std::cout << j.dump() << std::endl; }

void log(const std::string& msg) { std::cerr << "[nav-cli] " << msg << std::endl; }

void emit_config(const std::string& command, const json& cfg) { emit({{"command", command}, {"config", cfg}}); }

std::vector<EnvType> parse_env_list(const std::string& s) {
  if (s == "mixed") return {kAllEnvs.begin(), kAllEnvs.end()};
  try {
    return {parse_env(s)};
  } catch (const RangeError& e) {
    throw UsageError(e.what());
  }
}

Arch parse_arch_or_throw(const std::string& s) {
  const auto a = parse_arch(s);
  if (!a) throw UsageError("unknown arch '" + s + "'");
  return *a;
}

/// Folds a flat JSON object into argv as `--key value`; flags on the command
/// line take precedence.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].starts_with("--config=")) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) return args;  // CLI11's existence check reports it
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config " + path + ": expected a flat JSON object");
  const auto given = [&](const std::string& flag) {
    for (const auto& a : args)
      if (a == flag || a.starts_with(flag + "=")) return true;
    return false;
  };
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    if (value.is_object() || value.is_array() || value.is_null())
      throw UsageError("config " + path + ": value of '" + key + "' must be a scalar");
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
      continue;
    }
    args.push_back(flag);
    args.push_back(value.is_string() ? value.get<std::string>() : value.dump());
  }
  return args;
}

NetConfig net_config(std::size_t points, double dmap_scale) {
  NetConfig c;
  c.points = points;
  c.dmap_scale = dmap_scale;
  return c;
}

json net_json(const NetConfig& c) {
  return {{"rgb", {c.rgb_h, c.rgb_w}}, {"dmap", {c.dmap_h, c.dmap_w}}, {"dmap_scale", c.dmap_scale},
          {"points", c.points}, {"dropout", c.dropout}};
}

void write_pgm(const fs::path& path, const std::vector<float>& map, std::size_t h, std::size_t w) {
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (float v : map) out.put(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  if (!out) throw Error("cannot write " + path.string());
}

void write_overlay(const fs::path& path, const Sample& s, const GradCam& cam) {
  std::ofstream out(path, std::ios::binary);
  out << "P6\n" << cam.width << " " << cam.height << "\n255\n";
  const std::size_t plane = cam.width * cam.height;
  for (std::size_t i = 0; i < plane; ++i) {
    const float m = cam.map[i];
    for (std::size_t c = 0; c < 3; ++c) {
      const float base = s.rgb[c * plane + i];
      const float heat = c == 0 ? m : 0.0f;
      out.put(static_cast<char>(std::lround(std::clamp(0.5f * base + 0.5f * heat, 0.0f, 1.0f) * 255.0f)));
    }
  }
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NMFNet learned-navigation workbench"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 1;
  std::string config_path;
  app.add_option("--seed", seed, "Master seed")->capture_default_str();
  app.add_option("--config", config_path, "Flat JSON object of flag values")->check(CLI::ExistingFile);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Collect a dataset with the scripted driver");
  std::string gen_env = "mixed", gen_out;
  std::size_t gen_records = 2000, gen_steps = 100;
  double gen_dr = 0.45, gen_area = 0.1;
  gen->add_option("--env", gen_env, "normal_city|collapsed_house|collapsed_city|cave|mixed")->capture_default_str();
  gen->add_option("--records", gen_records)->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--dr-fraction", gen_dr)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  gen->add_option("--episode-steps", gen_steps)->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--area-scale", gen_area)->capture_default_str();
  gen->add_option("--out", gen_out, "Output NAVD file")->required();

  // shared model/data flags
  std::string arch_name = "nmfnet", data_path, weights_path;
  std::size_t points = 1024, epochs = 20, batch = 8, max_steps = 0;
  double lr = 0.01, momentum = 0.9, split = 0.7, dmap_scale = 0, dropout = 0.5;
  const auto add_data = [&](CLI::App* c) {
    c->add_option("--data", data_path, "NAVD dataset")->required()->check(CLI::ExistingFile);
    c->add_option("--points", points)->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--dmap-scale", dmap_scale, "Distance-map px per meter (0 fits the laser range)")->capture_default_str();
  };

  auto* tr = app.add_subcommand("train", "Train rgbnet or nmfnet");
  add_data(tr);
  tr->add_option("--arch", arch_name, "rgbnet|nmfnet")->capture_default_str();
  tr->add_option("--epochs", epochs)->capture_default_str()->check(CLI::PositiveNumber);
  tr->add_option("--lr", lr)->capture_default_str();
  tr->add_option("--momentum", momentum)->capture_default_str();
  tr->add_option("--batch", batch)->capture_default_str()->check(CLI::PositiveNumber);
  tr->add_option("--split", split, "Train fraction")->capture_default_str();
  tr->add_option("--max-steps", max_steps, "0: no cap")->capture_default_str();
  tr->add_option("--dropout", dropout)->capture_default_str()->check(CLI::Range(0.0, 0.99));
  tr->add_option("--out", weights_path, "Output NAVW file")->required();

  auto* ev = app.add_subcommand("eval", "RMSE report on the test split");
  add_data(ev);
  bool eval_all = false;
  ev->add_option("--weights", weights_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "Train fraction; the rest is evaluated")->capture_default_str();
  ev->add_flag("--all", eval_all, "Evaluate every record instead of the test split");

  auto* run = app.add_subcommand("run", "Closed-loop episodes");
  std::string run_env = "normal_city", trace_path;
  std::size_t episodes = 1, steps = 600;
  bool use_driver = false;
  run->add_option("--weights", weights_path)->check(CLI::ExistingFile);
  run->add_flag("--driver", use_driver, "Use the scripted driver instead of a network");
  run->add_option("--env", run_env)->capture_default_str();
  run->add_option("--episodes", episodes)->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--steps", steps)->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--points", points)->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--dmap-scale", dmap_scale)->capture_default_str();
  run->add_option("--trace", trace_path, "NDJSON trace output");

  auto* gc = app.add_subcommand("gradcam", "Grad-CAM map for one record");
  add_data(gc);
  std::size_t index = 0;
  std::string branch_name = "rgb", out_prefix;
  gc->add_option("--weights", weights_path)->required()->check(CLI::ExistingFile);
  gc->add_option("--index", index)->capture_default_str();
  gc->add_option("--branch", branch_name, "rgb|dmap")->capture_default_str();
  gc->add_option("--out", out_prefix, "Writes <out>_map.pgm and, for rgb, <out>_overlay.ppm");

  auto* st = app.add_subcommand("stats", "Dataset summary");
  st->add_option("--data", data_path)->required()->check(CLI::ExistingFile);

  auto* sv = app.add_subcommand("serve", "Run the gateway");
  ServerConfig scfg;
  std::string serve_env = "normal_city", record_path = "session.navd";
  double duration = 0;
  sv->add_option("--bind", scfg.bind)->capture_default_str();
  sv->add_option("--port", scfg.ws_port, "WebSocket port")->capture_default_str();
  sv->add_option("--tcp-port", scfg.tcp_port, "Newline-delimited JSON port")->capture_default_str();
  sv->add_option("--tick-hz", scfg.tick_hz)->capture_default_str();
  sv->add_option("--env", serve_env)->capture_default_str();
  sv->add_option("--record", record_path, "Dataset file for recordings")->capture_default_str();
  sv->add_option("--weights", weights_path, "Preload weights")->check(CLI::ExistingFile);
  sv->add_option("--points", points)->capture_default_str()->check(CLI::PositiveNumber);
  sv->add_option("--dmap-scale", dmap_scale)->capture_default_str();
  sv->add_option("--duration", duration, "Seconds; 0 runs until SIGINT/SIGTERM")->capture_default_str();

  auto* cg = app.add_subcommand("check-grad", "Gradient check against central differences");
  double eps = 1e-3, tol = 1e-3;
  cg->add_option("--eps", eps)->capture_default_str();
  cg->add_option("--tol", tol)->capture_default_str();

  try {
    auto args = merge_config(std::vector<std::string>(argv + 1, argv + argc));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, std::cerr, std::cerr) == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) {
      CollectConfig c;
      c.envs = parse_env_list(gen_env);
      c.records = gen_records;
      c.dr_fraction = gen_dr;
      c.seed = seed;
      c.episode_steps = gen_steps;
      c.area_scale = gen_area;
      emit_config("gen-data", {{"env", gen_env}, {"records", gen_records}, {"dr_fraction", gen_dr}, {"seed", seed},
                               {"episode_steps", gen_steps}, {"area_scale", gen_area}, {"out", gen_out}});
      log("collecting " + std::to_string(gen_records) + " records");
      const auto summary = collect_to_file(c, gen_out);
      emit(summary.to_json());
    } else if (tr->parsed()) {
      TrainConfig tc;
      tc.arch = parse_arch_or_throw(arch_name);
      tc.lr = lr;
      tc.momentum = momentum;
      tc.batch = batch;
      tc.epochs = epochs;
      tc.max_steps = max_steps;
      tc.seed = seed;
      tc.validate();
      NetConfig nc = net_config(points, dmap_scale);
      nc.dropout = dropout;
      emit_config("train", {{"train", tc.to_json()}, {"net", net_json(nc)}, {"data", data_path}, {"split", split}, {"out", weights_path}});
      const Dataset d = load_dataset(data_path, nc);
      const Split sp = split_dataset(d.size(), {split, seed});
      log("training " + arch_name + " on " + std::to_string(sp.train.size()) + " records");
      TrainHooks hooks;
      hooks.on_epoch = [](const EpochRecord& e) {
        emit(e.to_json());
        log("epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.loss));
      };
      const auto r = train(d, sp.train, tc, hooks);
      save_weights(r.weights, weights_path);
      emit({{"weights", weights_path}, {"test", evaluate_rmse(r.weights, d, sp.test).to_json()}});
    } else if (ev->parsed()) {
      const NetConfig nc = net_config(points, dmap_scale);
      emit_config("eval", {{"weights", weights_path}, {"data", data_path}, {"split", split}, {"all", eval_all}, {"seed", seed}, {"net", net_json(nc)}});
      const auto w = load_weights(weights_path);
      const Dataset d = load_dataset(data_path, nc);
      std::vector<std::size_t> idx;
      if (eval_all) {
        idx.resize(d.size());
        std::iota(idx.begin(), idx.end(), 0);
      } else {
        idx = split_dataset(d.size(), {split, seed}).test;
      }
      emit(evaluate_rmse(w, d, idx).to_json());
    } else if (run->parsed()) {
      const auto env = parse_env_list(run_env);
      if (env.size() != 1) throw UsageError("run needs a single environment");
      if (use_driver == !weights_path.empty()) throw UsageError("run needs exactly one of --weights or --driver");
      const NetConfig nc = net_config(points, dmap_scale);
      emit_config("run", {{"env", run_env}, {"episodes", episodes}, {"steps", steps}, {"seed", seed},
                          {"policy", use_driver ? json("driver") : json(weights_path)}, {"net", net_json(nc)}});
      SteeringModel model;
      if (use_driver) {
        model = driver_model();
      } else {
        auto w = std::make_shared<const ModelWeights>(load_weights(weights_path));
        model = network_model(w, infer_config(*w, nc));
      }
      std::ofstream trace;
      if (!trace_path.empty()) trace.open(trace_path);
      std::vector<double> dist;
      std::size_t collisions = 0;
      for (std::size_t k = 0; k < episodes; ++k) {
        const auto r = run_episode(model, env[0], seed + k, EpisodeConfig{steps, kControlDt, {}});
        if (trace.is_open()) r.write_ndjson(trace);
        emit(r.summary_json());
        dist.push_back(r.distance);
        collisions += r.terminated_by == Termination::collision;
      }
      std::sort(dist.begin(), dist.end());
      const double median = dist.size() % 2 ? dist[dist.size() / 2] : 0.5 * (dist[dist.size() / 2 - 1] + dist[dist.size() / 2]);
      emit({{"episodes", episodes}, {"collisions", collisions}, {"median_distance", median}});
    } else if (gc->parsed()) {
      CamBranch branch;
      if (branch_name == "rgb")
        branch = CamBranch::rgb;
      else if (branch_name == "dmap")
        branch = CamBranch::dmap;
      else
        throw UsageError("branch must be rgb or dmap");
      const NetConfig nc = net_config(points, dmap_scale);
      emit_config("gradcam", {{"weights", weights_path}, {"data", data_path}, {"index", index}, {"branch", branch_name}, {"net", net_json(nc)}});
      const auto w = load_weights(weights_path);
      const Dataset d = load_dataset(data_path, nc);
      if (index >= d.size()) throw UsageError("index " + std::to_string(index) + " out of range");
      const NetConfig wc = infer_config(w, d.config);
      const auto cam = grad_cam(w, d.samples[index], wc, branch);
      double sum = 0, peak = 0;
      std::size_t hot = 0;
      for (float v : cam.map) {
        sum += v;
        peak = std::max(peak, static_cast<double>(v));
        hot += v > 0.5f;
      }
      json out{{"index", index}, {"branch", branch_name}, {"prediction", cam.prediction}, {"label", d.samples[index].steering},
               {"feature_hw", {cam.feat_h, cam.feat_w}}, {"hw", {cam.height, cam.width}},
               {"mean", sum / static_cast<double>(cam.map.size())}, {"max", peak},
               {"hot_fraction", static_cast<double>(hot) / static_cast<double>(cam.map.size())}};
      if (!out_prefix.empty()) {
        write_pgm(out_prefix + "_map.pgm", cam.map, cam.height, cam.width);
        out["map"] = out_prefix + "_map.pgm";
        if (branch == CamBranch::rgb) {
          write_overlay(out_prefix + "_overlay.ppm", d.samples[index], cam);
          out["overlay"] = out_prefix + "_overlay.ppm";
        }
      }
      emit(out);
    } else if (st->parsed()) {
      emit_config("stats", {{"data", data_path}});
      emit(dataset_stats(data_path).to_json());
    } else if (sv->parsed()) {
      const auto env = parse_env_list(serve_env);
      if (env.size() != 1) throw UsageError("serve needs a single environment");
      scfg.session.env = env[0];
      scfg.session.seed = seed;
      scfg.session.record_path = record_path;
      scfg.session.net = net_config(points, dmap_scale);
      if (!weights_path.empty()) scfg.session.weights = weights_path;
      emit_config("serve", {{"bind", scfg.bind}, {"port", scfg.ws_port}, {"tcp_port", scfg.tcp_port}, {"tick_hz", scfg.tick_hz},
                            {"env", serve_env}, {"seed", seed}, {"record", record_path},
                            {"weights", weights_path.empty() ? json(nullptr) : json(weights_path)}, {"duration", duration}});
      // Block the shutdown signals before any thread starts so only sigwait sees them.
      sigset_t sigs;
      sigemptyset(&sigs);
      sigaddset(&sigs, SIGINT);
      sigaddset(&sigs, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &sigs, nullptr);
      Server server(scfg);
      server.start();
      log("serving ws://" + scfg.bind + ":" + std::to_string(server.ws_port()) + " and tcp " + scfg.bind + ":" +
          std::to_string(server.tcp_port()));
      emit({{"listening", {{"ws", server.ws_port()}, {"tcp", server.tcp_port()}}}});
      if (duration > 0) {
        timespec ts{static_cast<time_t>(duration), static_cast<long>((duration - std::floor(duration)) * 1e9)};
        sigtimedwait(&sigs, nullptr, &ts);
      } else {
        int sig = 0;
        sigwait(&sigs, &sig);
      }
      server.stop();
      emit({{"ticks", server.ticks()}});
      log("stopped");
    } else if (cg->parsed()) {
      emit_config("check-grad", {{"eps", eps}, {"tol", tol}, {"seed", seed}});
      const auto report = run_grad_suite(seed, eps, tol);
      emit(report.to_json());
      log("max relative error " + std::to_string(report.max_rel_error));
      return report.pass ? 0 : 2;
    }
  } catch (const UsageError& e) {
    std::cerr << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) std::cerr << sub->help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
