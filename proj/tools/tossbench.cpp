// tossbench: command-line driver for training, evaluating, and analyzing
// tossing policies. Every subcommand exits nonzero on error. Run-level
// parallelism for `ablation` comes from the TOSSBENCH_THREADS environment
// variable (default 1).

#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tossim/ballistics.hpp"
#include "tossim/bench.hpp"

namespace ts = tossim;

namespace {

ts::Config load_config(const std::string& path,
                       const std::vector<std::string>& overrides) {
  ts::Config cfg = path.empty() ? ts::Config{} : ts::Config::from_file(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::runtime_error("override must look like key=value: " + kv);
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

void print_metrics(const char* label, const ts::MetricsReport& m) {
  std::printf("%s: steps %ld, grasp %.1f%% (%ld), throw %.1f%% (%ld/%ld)\n",
              label, m.steps, m.grasp_pct, m.grasp_successes, m.throw_pct,
              m.throws_in_box, m.throws);
}

void print_run(const ts::RunSummary& rs) {
  std::printf("%s s%llu [%s, %s] -> %s\n", ts::variant_name(rs.variant),
              static_cast<unsigned long long>(rs.seed),
              ts::supervision_name(rs.supervision), rs.object_set.c_str(),
              rs.dir.c_str());
  print_metrics("  train", rs.train);
  print_metrics("  eval", rs.eval);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grasp-and-throw training benchmark"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value config file")
      ->check(CLI::ExistingFile);
  app.add_option("--set", overrides,
                 "config override key=value (repeatable, wins over the file)");

  // train
  auto* train = app.add_subcommand("train", "Train one variant on one seed");
  std::string variant = "residual-physics";
  std::uint64_t seed = 0;
  long steps = -1;
  std::string out_dir;
  std::string object_set;
  std::string supervision;
  train->add_option("--variant", variant,
                    "residual-physics | regression | regression-pop | "
                    "physics-only");
  train->add_option("--seed", seed, "training seed");
  train->add_option("--steps", steps, "training steps override");
  train->add_option("--out", out_dir, "output root (experiment.out_dir)");
  train->add_option("--object-set", object_set,
                    "seen | unseen | single kind name");
  train->add_option("--supervision", supervision, "width | throw-accuracy");

  // eval
  auto* eval = app.add_subcommand(
      "eval", "Evaluate a saved checkpoint greedily, no updates");
  std::string checkpoint;
  std::string layout = "train";
  eval->add_option("--checkpoint", checkpoint, "policy checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--variant", variant, "variant the checkpoint was trained as")
      ->required();
  eval->add_option("--seed", seed, "evaluation seed");
  eval->add_option("--steps", steps, "evaluation steps override");
  eval->add_option("--object-set", object_set, "object set override");
  eval->add_option("--layout", layout, "train | displaced box layout");
  eval->add_option("--out", out_dir, "directory for eval.csv");

  // ablation
  auto* ablation = app.add_subcommand(
      "ablation", "Train all four variants over a seed list "
                  "(TOSSBENCH_THREADS runs in parallel)");
  std::string seeds;
  ablation->add_option("--seeds", seeds, "comma-separated seed list");
  ablation->add_option("--steps", steps, "training steps override");
  ablation->add_option("--out", out_dir, "output root");
  ablation->add_option("--object-set", object_set, "object set override");

  // supervision
  auto* superv = app.add_subcommand(
      "supervision", "Width vs throw-accuracy grasp supervision study");
  std::string width_from;
  superv->add_option("--seed", seed, "training seed");
  superv->add_option("--steps", steps, "training steps override");
  superv->add_option("--out", out_dir, "output root");
  superv->add_option("--object-set", object_set,
                     "single-kind object set (e.g. hammer)");
  superv->add_option("--width-from", width_from,
                     "existing width-supervised run directory to reuse");

  // unseen-locations
  auto* unseen_loc = app.add_subcommand(
      "unseen-locations", "Evaluate finished runs on the displaced boxes");
  std::string runs_dir;
  unseen_loc->add_option("--runs", runs_dir, "ablation output tree")
      ->required()
      ->check(CLI::ExistingDirectory);
  unseen_loc->add_option("--seeds", seeds, "comma-separated seed list");
  unseen_loc->add_option("--steps", steps, "evaluation steps override");
  unseen_loc->add_option("--out", out_dir, "report directory");

  // unseen-objects
  auto* unseen_obj = app.add_subcommand(
      "unseen-objects", "Evaluate finished runs on the unseen object set");
  unseen_obj->add_option("--runs", runs_dir, "ablation output tree")
      ->required()
      ->check(CLI::ExistingDirectory);
  unseen_obj->add_option("--seeds", seeds, "comma-separated seed list");
  unseen_obj->add_option("--steps", steps, "evaluation steps override");
  unseen_obj->add_option("--out", out_dir, "report directory");

  // plan
  auto* plan = app.add_subcommand(
      "plan", "Print the analytic release solution for a landing target");
  double px = 0.95, py = -0.16, pz = -1.0;
  plan->add_option("-x", px, "target x (m)");
  plan->add_option("-y", py, "target y (m)");
  plan->add_option("-z", pz, "target z (m), default: box rim height");

  // histograms
  auto* hist = app.add_subcommand(
      "histograms", "Rebuild grasp histograms from a grasp_events.csv");
  std::string events_path;
  hist->add_option("--events", events_path, "grasp_events.csv from a run")
      ->required()
      ->check(CLI::ExistingFile);
  hist->add_option("--object-set", object_set, "object set the run used");
  hist->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);

    ts::Config cfg = load_config(config_path, overrides);
    if (steps >= 0 && (train->parsed() || ablation->parsed() ||
                       superv->parsed())) {
      cfg.set("train.steps", std::to_string(steps));
    }
    if (steps >= 0 && (eval->parsed() || unseen_loc->parsed() ||
                       unseen_obj->parsed())) {
      cfg.set("experiment.eval_steps", std::to_string(steps));
    }
    if (!out_dir.empty()) cfg.set("experiment.out_dir", out_dir);
    if (!object_set.empty()) cfg.set("experiment.object_set", object_set);
    if (!seeds.empty()) cfg.set("experiment.seeds", seeds);
    if (!supervision.empty()) cfg.set("train.supervision", supervision);

    if (train->parsed()) {
      auto ecfg = ts::ExperimentConfig::from_config(cfg);
      print_run(ts::run_single(ecfg, ts::variant_from_name(variant), seed));
    } else if (eval->parsed()) {
      cfg.set("experiment.box_layout", layout);
      const auto ecfg = ts::ExperimentConfig::from_config(cfg);
      const auto ws = ts::workspace_from_config(cfg);
      const auto sp = ts::sim_params_from_config(cfg);
      ts::Policy policy(ts::PolicyConfig::from_config(cfg, ws),
                        ts::variant_from_name(variant), seed);
      policy.load(checkpoint);
      const std::uint64_t h = policy.param_hash();
      ts::Simulator sim(ws, sp, ts::objects_for_set(ecfg.object_set, cfg),
                        seed);
      const auto er = ts::run_eval_loop(policy, sim, ecfg.targets(ws),
                                        ecfg.eval_steps, seed);
      if (policy.param_hash() != h) {
        throw std::logic_error("evaluation changed the parameters");
      }
      const auto m = ts::metrics_from_steps(er.steps, er.grasps);
      if (!ecfg.out_dir.empty()) {
        std::filesystem::create_directories(ecfg.out_dir);
        ts::write_step_csv(ecfg.out_dir + "/eval.csv", er.steps);
      }
      print_metrics("eval", m);
    } else if (ablation->parsed()) {
      const auto rep = ts::run_ablation(ts::ExperimentConfig::from_config(cfg));
      for (const auto& rs : rep.runs) print_run(rs);
    } else if (superv->parsed()) {
      if (!cfg.has("experiment.object_set")) {
        cfg.set("experiment.object_set", "hammer");
      }
      cfg.set("experiment.seeds", std::to_string(seed));
      const auto rep = ts::run_supervision_study(
          ts::ExperimentConfig::from_config(cfg), width_from);
      std::printf("width:          throw %.1f%%, entropy %.3f\n",
                  rep.width.eval.throw_pct, rep.width_entropy);
      std::printf("throw-accuracy: throw %.1f%%, entropy %.3f\n",
                  rep.throw_accuracy.eval.throw_pct,
                  rep.throw_accuracy_entropy);
    } else if (unseen_loc->parsed()) {
      const auto rep = ts::run_unseen_locations(
          ts::ExperimentConfig::from_config(cfg), runs_dir);
      for (const auto& r : rep.rows) {
        std::printf("%s s%llu: seen %.1f%% -> displaced %.1f%%\n",
                    ts::variant_name(r.variant),
                    static_cast<unsigned long long>(r.seed), r.seen_throw_pct,
                    r.displaced_throw_pct);
      }
    } else if (unseen_obj->parsed()) {
      const auto rep = ts::run_unseen_objects(
          ts::ExperimentConfig::from_config(cfg), runs_dir);
      for (const auto& r : rep.rows) {
        std::printf(
            "%s s%llu: grasp %.1f%% -> %.1f%%, throw %.1f%% -> %.1f%%\n",
            ts::variant_name(r.variant),
            static_cast<unsigned long long>(r.seed), r.seen_grasp_pct,
            r.unseen_grasp_pct, r.seen_throw_pct, r.unseen_throw_pct);
      }
    } else if (plan->parsed()) {
      const auto ws = ts::workspace_from_config(cfg);
      const ts::Vec3 p{px, py, pz < 0.0 ? ws.boxes.front().rim_z : pz};
      const auto rp = ts::solve_release(p, ws);
      const auto landing = ts::simulate_ideal_flight(rp, ws, p.z);
      const double err = std::hypot(landing.x - p.x, landing.y - p.y);
      std::printf("target   (%.4f, %.4f, %.4f)\n", p.x, p.y, p.z);
      std::printf("release  (%.4f, %.4f, %.4f)\n", rp.r.x, rp.r.y, rp.r.z);
      std::printf("velocity (%.4f, %.4f, %.4f), planar %.4f m/s\n",
                  rp.v_hat.x, rp.v_hat.y, rp.v_hat.z, rp.planar_speed);
      std::printf("ideal-flight landing error %.3e m\n", err);
    } else if (hist->parsed()) {
      if (object_set.empty()) object_set = "seen";
      const auto events = ts::read_grasp_csv(events_path);
      const auto set = ts::objects_for_set(object_set, cfg);
      const auto ws = ts::workspace_from_config(cfg);
      const double cell = cfg.get_double("hist.cell", ws.pixel_size);
      const double dilation = ts::sim_params_from_config(cfg).gripper_dilation;
      ts::export_grasp_histograms(events, set, cell, dilation, out_dir);
      std::printf("histograms written to %s\n", out_dir.c_str());
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
