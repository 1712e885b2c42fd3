// fsn: generate data, train, evaluate, run inference, check gradients and run the
// attention ablation. See `fsn --help`.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fsn/ablation.hpp"
#include "fsn/checkpoint.hpp"
#include "fsn/detector.hpp"
#include "fsn/grad_suite.hpp"
#include "fsn/run_config.hpp"
#include "fsn/synth.hpp"

namespace fs = std::filesystem;
using namespace fsn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerification = 2;

struct Overrides {
  std::string config_file;
  std::vector<std::string> assignments;
  std::string data_dir, out_dir, checkpoint, image;
  std::string seed, iterations;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_file, "key=value config file");
  cmd->add_option("-s,--set", o.assignments, "override one key, KEY=VALUE (repeatable)");
  cmd->add_option("--data", o.data_dir, "dataset directory (data_dir)");
  cmd->add_option("--out", o.out_dir, "output directory (out_dir)");
  cmd->add_option("--seed", o.seed, "seed (overrides FSN_SEED)");
}

// defaults < config file < FSN_SEED < flags
RunConfig resolve(const Overrides& o) {
  RunConfig cfg;
  if (!o.config_file.empty()) cfg.load_file(o.config_file);
  cfg.apply_environment();
  for (const auto& a : o.assignments) cfg.set_assignment(a);
  if (!o.data_dir.empty()) cfg.data_dir = o.data_dir;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (!o.checkpoint.empty()) cfg.checkpoint = o.checkpoint;
  if (!o.image.empty()) cfg.image = o.image;
  if (!o.seed.empty()) cfg.set("seed", o.seed);
  if (!o.iterations.empty()) cfg.set("iterations", o.iterations);
  cfg.detector.validate();
  return cfg;
}

void require(const std::string& value, const char* key, const char* command) {
  if (value.empty()) {
    throw ConfigError(std::string(command) + ": " + key + " is required (--set " + key + "=...)");
  }
}

void require_dir(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) throw std::runtime_error(std::string(what) + " not found: " + dir.string());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << text;
}

// eval and infer write beside the checkpoint unless out_dir is given
fs::path output_dir(const RunConfig& cfg, const char* sub) {
  return cfg.out_dir.empty() ? cfg.checkpoint_dir() / sub : fs::path(cfg.out_dir);
}

int cmd_gen_data(const RunConfig& cfg) {
  require(cfg.data_dir, "data_dir", "gen-data");
  if (cfg.scenes < 1) throw ConfigError("gen-data: scenes must be >= 1");
  const SynthParams params;
  const auto scenes = generate_dataset(static_cast<std::size_t>(cfg.scenes), cfg.detector.seed, params);
  save_dataset(cfg.data_dir, scenes, params, cfg.detector.seed);
  cfg.write_effective(cfg.data_dir);
  std::size_t objects = 0;
  for (const auto& s : scenes) objects += s.objects.size();
  std::printf("wrote %zu scenes (%zu objects) to %s\n", scenes.size(), objects, cfg.data_dir.c_str());
  return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
  require(cfg.data_dir, "data_dir", "train");
  require(cfg.out_dir, "out_dir", "train");
  require_dir(cfg.data_dir, "dataset");
  LoadedDataset data = load_dataset(cfg.data_dir);
  fs::create_directories(cfg.out_dir);
  cfg.write_effective(cfg.out_dir);

  const auto t0 = std::chrono::steady_clock::now();
  Trainer trainer(cfg.detector, std::move(data.scenes));
  std::ofstream log(fs::path(cfg.out_dir) / "loss_log.tsv");
  log << "step\tcls_loss\treg_loss\tforeground\n";
  double cls_window = 0, reg_window = 0;
  int in_window = 0;
  StepLoss last;
  trainer.run(cfg.detector.iterations, [&](int step, const StepLoss& l) {
    char line[128];
    std::snprintf(line, sizeof(line), "%d\t%.9g\t%.9g\t%zu\n", step, l.cls, l.reg, l.foreground);
    log << line;
    last = l;
    cls_window += l.cls;
    reg_window += l.reg;
    ++in_window;
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.detector.iterations)) {
      std::fprintf(stderr, "step %5d  cls %.4f  reg %.4f  (%.0fs)\n", step, cls_window / in_window,
                   reg_window / in_window, seconds_since(t0));
      cls_window = reg_window = 0;
      in_window = 0;
    }
  });
  save_checkpoint(cfg.out_dir, trainer.model());
  std::printf("trained %d steps in %.1fs; final cls %.4f reg %.4f; checkpoint in %s\n",
              trainer.steps_done(), seconds_since(t0), last.cls, last.reg, cfg.out_dir.c_str());
  return kExitOk;
}

std::string ap_table(const MapResult& m, int classes) {
  std::string out;
  char line[96];
  std::snprintf(line, sizeof(line), "%-12s %8s\n", "class", "AP");
  out += line;
  for (int c = 1; c <= classes; ++c) {
    const auto& ap = m.ap[static_cast<std::size_t>(c)];
    if (ap) {
      std::snprintf(line, sizeof(line), "%-12s %8.4f\n", class_name(c).c_str(), *ap);
    } else {
      std::snprintf(line, sizeof(line), "%-12s %8s\n", class_name(c).c_str(), "n/a");
    }
    out += line;
  }
  std::snprintf(line, sizeof(line), "%-12s %8.4f\n", "mAP", m.map);
  out += line;
  return out;
}

int cmd_eval(const RunConfig& cfg) {
  require(cfg.data_dir, "data_dir", "eval");
  require(cfg.checkpoint_dir().string(), "checkpoint", "eval");
  require_dir(cfg.checkpoint_dir(), "checkpoint");
  require_dir(cfg.data_dir, "dataset");
  const Detector<float> model = load_checkpoint(cfg.checkpoint_dir());
  const LoadedDataset data = load_dataset(cfg.data_dir);
  const MapResult m = evaluate_scenes(model, data.scenes);
  const std::string table = ap_table(m, model.config().classes);
  std::fputs(table.c_str(), stdout);
  const fs::path out = output_dir(cfg, "eval");
  fs::create_directories(out);
  cfg.write_effective(out);
  write_text(out / "eval.txt", table);
  return kExitOk;
}

int cmd_infer(const RunConfig& cfg) {
  require(cfg.image, "image", "infer");
  require(cfg.checkpoint_dir().string(), "checkpoint", "infer");
  require_dir(cfg.checkpoint_dir(), "checkpoint");
  if (!fs::is_regular_file(cfg.image)) throw std::runtime_error("image not found: " + cfg.image);
  const Detector<float> model = load_checkpoint(cfg.checkpoint_dir());

  // Proposals come from the dataset record when the image belongs to data_dir;
  // otherwise they are uniform random boxes.
  Scene scene = read_ppm(cfg.image);
  scene.seed = cfg.detector.seed;
  if (!cfg.data_dir.empty()) {
    require_dir(cfg.data_dir, "dataset");
    LoadedDataset data = load_dataset(cfg.data_dir);
    const std::string name = fs::path(cfg.image).filename().string();
    for (std::size_t i = 0; i < data.files.size(); ++i) {
      if (fs::path(data.files[i]).filename() == name) {
        scene = std::move(data.scenes[i]);
        break;
      }
    }
  }
  const auto proposals = scene_proposals(scene, model.config());
  const auto dets = infer(model, scene, proposals);
  std::string text;
  char line[160];
  for (const auto& d : dets) {
    std::snprintf(line, sizeof(line), "%s %.6f %.2f %.2f %.2f %.2f\n", class_name(d.label).c_str(),
                  d.score, d.box.x1, d.box.y1, d.box.x2, d.box.y2);
    text += line;
  }
  std::fputs(text.c_str(), stdout);
  const fs::path out = output_dir(cfg, "infer");
  fs::create_directories(out);
  cfg.write_effective(out);
  write_text(out / "detections.txt", text);
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg) {
  GradSuiteOptions opt;
  opt.seeds = cfg.gradcheck_seeds;
  opt.base_seed = cfg.detector.seed;
  opt.max_coords = static_cast<std::size_t>(std::max(cfg.gradcheck_max_coords, 0));
  if (opt.seeds < 1) throw ConfigError("gradcheck: gradcheck_seeds must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  const GradReport report = run_grad_suite(opt);
  const std::string text = report.text();
  std::fputs(text.c_str(), stdout);
  std::printf("%s in %.1fs\n", report.passed() ? "all gradients within tolerance" : "GRADIENT CHECK FAILED",
              seconds_since(t0));
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    cfg.write_effective(cfg.out_dir);
    write_text(fs::path(cfg.out_dir) / "gradcheck.txt", text);
  }
  return report.passed() ? kExitOk : kExitVerification;
}

int cmd_ablate(const RunConfig& cfg) {
  require(cfg.out_dir, "out_dir", "ablate");
  AblationOptions opt;
  opt.base = cfg.detector;
  opt.seeds = cfg.ablation_seeds;
  opt.train_scenes = cfg.ablation_train_scenes;
  opt.test_scenes = cfg.ablation_test_scenes;
  fs::create_directories(cfg.out_dir);
  cfg.write_effective(cfg.out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_ablation(opt, [&](const std::string& msg) {
    std::fprintf(stderr, "%s  (%.0fs)\n", msg.c_str(), seconds_since(t0));
  });
  const std::string text = format_ablation_text(rows, opt);
  std::fputs(text.c_str(), stdout);
  write_text(fs::path(cfg.out_dir) / "ablation.txt", text);
  write_text(fs::path(cfg.out_dir) / "ablation.tsv", format_ablation_tsv(rows, opt));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective RoI attention detector on synthetic shapes"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every command");

  Overrides o;
  struct Command {
    CLI::App* app;
    int (*run)(const RunConfig&);
  };
  std::vector<Command> commands;
  auto add = [&](const char* name, const char* desc, int (*run)(const RunConfig&)) {
    CLI::App* cmd = app.add_subcommand(name, desc);
    add_common(cmd, o);
    commands.push_back({cmd, run});
    return cmd;
  };
  add("gen-data", "write a synthetic dataset to data_dir", cmd_gen_data);
  add("train", "train on data_dir, write a checkpoint and loss log to out_dir", cmd_train)
      ->add_option("--iterations", o.iterations, "training steps");
  add("eval", "per-class AP and mAP of a checkpoint on data_dir", cmd_eval)
      ->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
  CLI::App* infer_cmd = add("infer", "detect objects in one .ppm image", cmd_infer);
  infer_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
  infer_cmd->add_option("--image", o.image, "input image (.ppm)");
  add("gradcheck", "finite-difference check of every backward pass", cmd_gradcheck);
  add("ablate", "train and score every attention variant x shift direction", cmd_ablate)
      ->add_option("--iterations", o.iterations, "training steps per run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (const Command& c : commands) {
    if (!c.app->parsed()) continue;
    try {
      return c.run(resolve(o));
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "fsn %s: %s\n", c.app->get_name().c_str(), e.what());
      return kExitUsage;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "fsn %s: error: %s\n", c.app->get_name().c_str(), e.what());
      return kExitUsage;
    }
  }
  return kExitUsage;
}
