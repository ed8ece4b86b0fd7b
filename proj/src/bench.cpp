#include "tossim/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <utility>

#include "json.hpp"
#include "tossim/ballistics.hpp"

namespace tossim {

namespace {

using nlohmann::json;

// Seed tags keep the evaluation streams disjoint from the training
// streams that use the bare run seed.
constexpr std::uint64_t kEvalSimTag = 0x0ea15133d5133dULL;
constexpr std::uint64_t kEvalRngTag = 0x0ea1c0113c7edULL;
constexpr std::uint64_t kDisplacedTag = 0x0d15b0c35ULL;
constexpr std::uint64_t kUnseenTag = 0x0b1a4b0b5ULL;

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("double formatting failed");
  return std::string(buf, end);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

int bench_threads() {
  const char* s = std::getenv("TOSSBENCH_THREADS");
  if (s == nullptr || *s == '\0') return 1;
  const int v = std::atoi(s);
  return std::max(v, 1);
}

const std::array<PolicyVariant, 4> kAllVariants{
    PolicyVariant::ResidualPhysics, PolicyVariant::Regression,
    PolicyVariant::RegressionPoP, PolicyVariant::PhysicsOnly};

std::string run_dir_name(const std::string& root, PolicyVariant v,
                         std::uint64_t seed) {
  return root + "/" + variant_name(v) + "_s" + std::to_string(seed);
}

json metrics_to_json(const MetricsReport& m) {
  json j;
  j["steps"] = m.steps;
  j["grasp_successes"] = m.grasp_successes;
  j["throws"] = m.throws;
  j["throws_in_box"] = m.throws_in_box;
  j["grasp_pct"] = m.grasp_pct;
  j["throw_pct"] = m.throw_pct;
  json kinds = json::array();
  for (const auto& k : m.per_kind) {
    kinds.push_back({{"kind", kind_name(k.kind)},
                     {"grasp_successes", k.grasp_successes},
                     {"throws_in_box", k.throws_in_box},
                     {"throw_pct", k.throw_pct}});
  }
  j["per_kind"] = kinds;
  return j;
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  m.steps = j.at("steps").get<long>();
  m.grasp_successes = j.at("grasp_successes").get<long>();
  m.throws = j.at("throws").get<long>();
  m.throws_in_box = j.at("throws_in_box").get<long>();
  m.grasp_pct = j.at("grasp_pct").get<double>();
  m.throw_pct = j.at("throw_pct").get<double>();
  for (const auto& k : j.at("per_kind")) {
    m.per_kind.push_back({kind_from_name(k.at("kind").get<std::string>()),
                          k.at("grasp_successes").get<long>(),
                          k.at("throws_in_box").get<long>(),
                          k.at("throw_pct").get<double>()});
  }
  return m;
}

void write_json(const std::string& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  json j;
  in >> j;
  return j;
}

void write_curves_csv(const std::string& path, const MetricsReport& m) {
  auto out = open_out(path);
  out << "step,grasp_curve,throw_curve\n";
  for (std::size_t i = 0; i < m.grasp_curve.size(); ++i) {
    out << (i + 1) << ',' << format_double(m.grasp_curve[i]) << ','
        << format_double(m.throw_curve[i]) << '\n';
  }
}

void write_grid_csv(const std::string& path, const std::vector<double>& g,
                    int rows, int cols) {
  auto out = open_out(path);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c > 0) out << ',';
      out << format_double(g[static_cast<std::size_t>(r) * cols + c]);
    }
    out << '\n';
  }
}

double histogram_cell(const ExperimentConfig& cfg, const WorkspaceConfig& ws) {
  return cfg.raw.get_double("hist.cell", ws.pixel_size);
}

}  // namespace

SimParams sim_params_from_config(const Config& cfg) {
  SimParams p;
  p.n_objects = static_cast<int>(cfg.get_int("sim.n_objects", p.n_objects));
  p.gripper_dilation = cfg.get_double("sim.gripper_dilation", p.gripper_dilation);
  p.angle_tol_deg = cfg.get_double("sim.angle_tol_deg", p.angle_tol_deg);
  p.retention_p = cfg.get_double("sim.retention_p", p.retention_p);
  p.grasp_noise = cfg.get_bool("sim.grasp_noise", p.grasp_noise);
  p.dt = cfg.get_double("sim.dt", p.dt);
  p.max_flight_s = cfg.get_double("sim.max_flight_s", p.max_flight_s);
  p.spawn_attempts =
      static_cast<int>(cfg.get_int("sim.spawn_attempts", p.spawn_attempts));
  p.spawn_margin = cfg.get_double("sim.spawn_margin", p.spawn_margin);
  p.nudge_yaw = cfg.get_double("sim.nudge_yaw", p.nudge_yaw);
  p.nudge_xy = cfg.get_double("sim.nudge_xy", p.nudge_xy);
  return p;
}

std::vector<ObjectModel> objects_for_set(const std::string& set,
                                         const Config& cfg) {
  const double scale = cfg.get_double("objects.scale", 1.0);
  if (set == "seen") return make_standard_objects(scale, cfg);
  if (set == "unseen") return make_unseen_objects(scale, cfg);
  const ObjectKind kind = kind_from_name(set);
  for (auto make : {make_standard_objects, make_unseen_objects}) {
    for (auto& m : make(scale, cfg)) {
      if (m.kind == kind) return {std::move(m)};
    }
  }
  throw std::invalid_argument("object set has no models: " + set);
}

ExperimentConfig ExperimentConfig::from_config(const Config& cfg) {
  ExperimentConfig e;
  e.raw = cfg;
  e.object_set = cfg.get_string("experiment.object_set", e.object_set);
  e.box_layout = cfg.get_string("experiment.box_layout", e.box_layout);
  if (e.box_layout != "train" && e.box_layout != "displaced") {
    throw std::invalid_argument("experiment.box_layout must be train or displaced");
  }
  e.eval_steps = cfg.get_int("experiment.eval_steps", e.eval_steps);
  if (e.eval_steps < 0) throw std::invalid_argument("negative eval_steps");
  e.out_dir = cfg.get_string("experiment.out_dir", e.out_dir);
  const std::string seeds = cfg.get_string("experiment.seeds", "0");
  e.seeds.clear();
  std::size_t start = 0;
  for (std::size_t i = 0; i <= seeds.size(); ++i) {
    if (i == seeds.size() || seeds[i] == ',') {
      const std::string tok = seeds.substr(start, i - start);
      if (!tok.empty()) e.seeds.push_back(std::stoull(tok));
      start = i + 1;
    }
  }
  if (e.seeds.empty()) throw std::invalid_argument("experiment.seeds is empty");
  return e;
}

const std::vector<BoxSpec>& ExperimentConfig::targets(
    const WorkspaceConfig& ws) const {
  return box_layout == "displaced" ? ws.displaced_boxes : ws.boxes;
}

MetricsReport metrics_from_steps(const std::vector<StepRecord>& steps,
                                 const std::vector<GraspEvent>& grasps,
                                 long window) {
  if (window <= 0) throw std::invalid_argument("window must be positive");
  MetricsReport m;
  const long n = static_cast<long>(steps.size());
  m.steps = n;
  std::vector<long> psucc(static_cast<std::size_t>(n) + 1, 0);
  std::vector<long> pthrown(static_cast<std::size_t>(n) + 1, 0);
  std::vector<long> pinbox(static_cast<std::size_t>(n) + 1, 0);
  for (long i = 0; i < n; ++i) {
    const auto& r = steps[static_cast<std::size_t>(i)];
    psucc[i + 1] = psucc[i] + r.grasp_success;
    pthrown[i + 1] = pthrown[i] + (r.thrown ? 1 : 0);
    pinbox[i + 1] = pinbox[i] + r.throw_success;
  }
  m.grasp_successes = psucc[n];
  m.throws = pthrown[n];
  m.throws_in_box = pinbox[n];
  m.grasp_pct = n > 0 ? 100.0 * static_cast<double>(m.grasp_successes) / n : 0.0;
  m.throw_pct = m.throws > 0
                    ? 100.0 * static_cast<double>(m.throws_in_box) / m.throws
                    : 0.0;
  m.grasp_curve.resize(static_cast<std::size_t>(n));
  m.throw_curve.resize(static_cast<std::size_t>(n));
  for (long i = 1; i <= n; ++i) {
    const long w = std::min(i, window);
    const long succ = psucc[i] - psucc[i - w];
    const long thr = pthrown[i] - pthrown[i - w];
    const long box = pinbox[i] - pinbox[i - w];
    m.grasp_curve[i - 1] = static_cast<double>(succ) / window;
    const double rate = thr > 0 ? static_cast<double>(box) / thr : 0.0;
    m.throw_curve[i - 1] = rate * static_cast<double>(w) / window;
  }
  std::map<ObjectKind, KindStats> kinds;
  for (const auto& g : grasps) {
    auto& k = kinds[g.kind];
    k.kind = g.kind;
    ++k.grasp_successes;
    if (g.in_target_box) ++k.throws_in_box;
  }
  for (auto& [kind, stats] : kinds) {
    stats.throw_pct = stats.grasp_successes > 0
                          ? 100.0 * static_cast<double>(stats.throws_in_box) /
                                stats.grasp_successes
                          : 0.0;
    m.per_kind.push_back(stats);
  }
  return m;
}

GraspHistogram build_grasp_histogram(const ObjectModel& model,
                                     const std::vector<GraspEvent>& events,
                                     double cell, double dilation) {
  if (cell <= 0.0 || dilation < 0.0) {
    throw std::invalid_argument("histogram cell/dilation out of range");
  }
  GraspHistogram h;
  h.kind = model.kind;
  h.cell = cell;
  const double extent = model.bounding_radius() + dilation + cell;
  h.u0 = -extent;
  h.v0 = -extent;
  h.cols = static_cast<int>(std::ceil(2.0 * extent / cell));
  h.rows = h.cols;
  const std::size_t cells = static_cast<std::size_t>(h.rows) * h.cols;
  h.success.assign(cells, 0.0);
  h.to_box.assign(cells, 0.0);
  h.missed.assign(cells, 0.0);
  h.mask.assign(cells, 0);
  const PlacedObject obj{model, Pose2D{}};
  // Half a cell diagonal of slack: any point within the gripper dilation
  // of the silhouette then lands in an in-mask cell.
  const double thresh = dilation + cell * std::sqrt(0.5);
  for (int r = 0; r < h.rows; ++r) {
    for (int c = 0; c < h.cols; ++c) {
      const Vec2 center{h.u0 + (c + 0.5) * cell, h.v0 + (r + 0.5) * cell};
      h.mask[static_cast<std::size_t>(r) * h.cols + c] =
          footprint_distance(obj, center) <= thresh ? 1 : 0;
    }
  }
  auto cell_of = [&](double coord, double origin, int count) {
    const int i = static_cast<int>(std::floor((coord - origin) / cell));
    return std::clamp(i, 0, count - 1);
  };
  h.com_row = cell_of(model.com.y, h.v0, h.rows);
  h.com_col = cell_of(model.com.x, h.u0, h.cols);
  for (const auto& ev : events) {
    if (ev.kind != model.kind) continue;
    const int r = cell_of(ev.point.y, h.v0, h.rows);
    const int c = cell_of(ev.point.x, h.u0, h.cols);
    const std::size_t idx = static_cast<std::size_t>(r) * h.cols + c;
    if (h.mask[idx] == 0) {
      throw std::invalid_argument("grasp event outside the dilated silhouette");
    }
    h.success[idx] += 1.0;
    if (ev.in_target_box) {
      h.to_box[idx] += 1.0;
    } else {
      h.missed[idx] += 1.0;
    }
  }
  return h;
}

double histogram_entropy(const GraspHistogram& h) {
  double total = 0.0;
  for (const double v : h.success) total += v;
  if (total <= 0.0) return 0.0;
  double e = 0.0;
  for (const double v : h.success) {
    if (v > 0.0) {
      const double q = v / total;
      e -= q * std::log(q);
    }
  }
  return e;
}

double mean_abs_offset(const std::vector<GraspEvent>& events, ObjectKind kind) {
  double sum = 0.0;
  long n = 0;
  for (const auto& ev : events) {
    if (ev.kind != kind) continue;
    sum += std::abs(ev.s);
    ++n;
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

void export_grasp_histograms(const std::vector<GraspEvent>& events,
                             const std::vector<ObjectModel>& set, double cell,
                             double dilation, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<ObjectKind> done;
  for (const auto& model : set) {
    if (std::find(done.begin(), done.end(), model.kind) != done.end()) continue;
    done.push_back(model.kind);
    const GraspHistogram h = build_grasp_histogram(model, events, cell, dilation);
    const std::string base = out_dir + "/hist_" + kind_name(model.kind);
    write_grid_csv(base + "_success.csv", h.success, h.rows, h.cols);
    write_grid_csv(base + "_to_box.csv", h.to_box, h.rows, h.cols);
    write_grid_csv(base + "_missed.csv", h.missed, h.rows, h.cols);
    std::vector<double> mask(h.mask.begin(), h.mask.end());
    write_grid_csv(base + "_mask.csv", mask, h.rows, h.cols);
    double count = 0.0;
    for (const double v : h.success) count += v;
    json j;
    j["kind"] = kind_name(model.kind);
    j["rows"] = h.rows;
    j["cols"] = h.cols;
    j["cell"] = h.cell;
    j["u0"] = h.u0;
    j["v0"] = h.v0;
    j["com_row"] = h.com_row;
    j["com_col"] = h.com_col;
    j["grasps"] = count;
    j["entropy"] = histogram_entropy(h);
    j["mean_abs_offset"] = mean_abs_offset(events, model.kind);
    write_json(base + ".json", j);
  }
}

RunSummary run_single(const ExperimentConfig& cfg, PolicyVariant variant,
                      std::uint64_t seed) {
  const WorkspaceConfig ws = workspace_from_config(cfg.raw);
  const SimParams sp = sim_params_from_config(cfg.raw);
  const auto objects = objects_for_set(cfg.object_set, cfg.raw);
  TrainConfig tc = TrainConfig::from_config(cfg.raw);
  tc.seed = seed;
  PolicyConfig pc = PolicyConfig::from_config(cfg.raw, ws);
  pc.lr = tc.lr;
  pc.momentum = tc.momentum;
  pc.weight_decay = tc.weight_decay;

  const std::string dir = run_dir_name(cfg.out_dir, variant, seed);
  std::filesystem::create_directories(dir);

  RunSummary rs;
  rs.variant = variant;
  rs.seed = seed;
  rs.supervision = tc.supervision;
  rs.dir = dir;
  rs.object_set = cfg.object_set;

  Policy policy(pc, variant, seed);
  Simulator sim(ws, sp, objects, seed);
  if (variant == PolicyVariant::RegressionPoP && tc.pretrain_steps > 0) {
    rs.pretrain_rms = pretrain_on_physics(policy, sim, tc).holdout_rms;
  }
  const TrainResult tr = run_episode_loop(policy, sim, tc, dir);
  rs.train = metrics_from_steps(tr.steps, tr.grasps);
  rs.dropped_unreachable = tr.dropped_unreachable;
  write_curves_csv(dir + "/curves.csv", rs.train);
  export_grasp_histograms(tr.grasps, objects, histogram_cell(cfg, ws),
                          sp.gripper_dilation, dir);

  rs.param_hash = policy.param_hash();
  Simulator eval_sim(ws, sp, objects, seed ^ kEvalSimTag);
  const EvalResult er = run_eval_loop(policy, eval_sim, cfg.targets(ws),
                                      cfg.eval_steps, seed ^ kEvalRngTag);
  if (policy.param_hash() != rs.param_hash) {
    throw std::logic_error("evaluation changed the parameters");
  }
  rs.eval = metrics_from_steps(er.steps, er.grasps);
  write_step_csv(dir + "/eval.csv", er.steps);

  json j;
  j["variant"] = variant_name(variant);
  j["seed"] = seed;
  j["supervision"] = supervision_name(rs.supervision);
  j["object_set"] = rs.object_set;
  j["box_layout"] = cfg.box_layout;
  j["pretrain_rms"] = rs.pretrain_rms;
  j["dropped_unreachable"] = rs.dropped_unreachable;
  j["respawns_forced"] = tr.respawns_forced;
  j["param_hash"] = hash_hex(rs.param_hash);
  j["train"] = metrics_to_json(rs.train);
  j["eval"] = metrics_to_json(rs.eval);
  write_json(dir + "/report.json", j);
  return rs;
}

RunSummary load_run_summary(const std::string& dir) {
  const json j = read_json(dir + "/report.json");
  RunSummary rs;
  rs.variant = variant_from_name(j.at("variant").get<std::string>());
  rs.seed = j.at("seed").get<std::uint64_t>();
  rs.supervision =
      supervision_from_name(j.at("supervision").get<std::string>());
  rs.object_set = j.at("object_set").get<std::string>();
  rs.pretrain_rms = j.at("pretrain_rms").get<double>();
  rs.dropped_unreachable = j.at("dropped_unreachable").get<long>();
  rs.param_hash =
      std::stoull(j.at("param_hash").get<std::string>(), nullptr, 16);
  rs.train = metrics_from_json(j.at("train"));
  rs.eval = metrics_from_json(j.at("eval"));
  rs.dir = dir;
  return rs;
}

namespace {

/// Finished-run reuse for the multi-run drivers: a run directory whose
/// report.json parses and matches the requested job is picked up as-is, so
/// re-running a long suite after an interruption only trains what is
/// missing. Determinism makes the reused artifacts identical to what a
/// fresh run would produce.
bool try_resume_run(const ExperimentConfig& cfg, PolicyVariant variant,
                    std::uint64_t seed, GraspSupervision supervision,
                    RunSummary& out) {
  const std::string dir = run_dir_name(cfg.out_dir, variant, seed);
  if (!std::filesystem::exists(dir + "/report.json")) return false;
  RunSummary rs;
  try {
    rs = load_run_summary(dir);
  } catch (const std::exception&) {
    return false;  // partial or corrupt: retrain
  }
  if (rs.variant != variant || rs.seed != seed ||
      rs.supervision != supervision || rs.object_set != cfg.object_set) {
    return false;
  }
  out = rs;
  return true;
}

GraspSupervision configured_supervision(const ExperimentConfig& cfg) {
  return TrainConfig::from_config(cfg.raw).supervision;
}

}  // namespace

AblationReport run_ablation(const ExperimentConfig& cfg) {
  struct Job {
    PolicyVariant variant;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto v : kAllVariants) {
    for (const auto s : cfg.seeds) jobs.push_back({v, s});
  }
  std::vector<RunSummary> results(jobs.size());
  const GraspSupervision sup = configured_supervision(cfg);
  auto run_job = [&](std::size_t i) {
    if (!try_resume_run(cfg, jobs[i].variant, jobs[i].seed, sup, results[i])) {
      results[i] = run_single(cfg, jobs[i].variant, jobs[i].seed);
    }
  };
  const int threads = std::min<int>(bench_threads(),
                                    static_cast<int>(jobs.size()));
  if (threads <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_job(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        try {
          run_job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  AblationReport rep;
  rep.runs = results;
  json variants = json::array();
  for (const auto v : kAllVariants) {
    double throw_sum = 0.0, grasp_sum = 0.0;
    long n = 0;
    json per_seed = json::array();
    for (const auto& r : results) {
      if (r.variant != v) continue;
      throw_sum += r.eval.throw_pct;
      grasp_sum += r.eval.grasp_pct;
      ++n;
      per_seed.push_back({{"seed", r.seed},
                          {"throw_pct", r.eval.throw_pct},
                          {"grasp_pct", r.eval.grasp_pct},
                          {"dir", r.dir}});
    }
    const double mt = n > 0 ? throw_sum / n : 0.0;
    const double mg = n > 0 ? grasp_sum / n : 0.0;
    rep.throw_pct.push_back(mt);
    rep.grasp_pct.push_back(mg);
    variants.push_back({{"variant", variant_name(v)},
                        {"mean_throw_pct", mt},
                        {"mean_grasp_pct", mg},
                        {"seeds", per_seed}});
  }
  json j;
  j["object_set"] = cfg.object_set;
  j["variants"] = variants;
  std::filesystem::create_directories(cfg.out_dir);
  write_json(cfg.out_dir + "/ablation.json", j);
  return rep;
}

SupervisionReport run_supervision_study(const ExperimentConfig& cfg,
                                        const std::string& width_from) {
  const auto set = objects_for_set(cfg.object_set, cfg.raw);
  bool single_kind = true;
  for (const auto& m : set) single_kind &= m.kind == set.front().kind;
  if (!single_kind) {
    throw std::invalid_argument(
        "supervision study expects a single-kind object set");
  }
  const std::uint64_t seed = cfg.seeds.front();
  SupervisionReport rep;
  if (!width_from.empty()) {
    rep.width = load_run_summary(width_from);
    if (rep.width.supervision != GraspSupervision::Width) {
      throw std::invalid_argument("width_from run was not width-supervised");
    }
  } else {
    ExperimentConfig wcfg = cfg;
    wcfg.raw.set("train.supervision", "width");
    wcfg.out_dir = cfg.out_dir + "/width";
    if (!try_resume_run(wcfg, PolicyVariant::ResidualPhysics, seed,
                        GraspSupervision::Width, rep.width)) {
      rep.width = run_single(wcfg, PolicyVariant::ResidualPhysics, seed);
    }
  }
  ExperimentConfig tcfg = cfg;
  tcfg.raw.set("train.supervision", "throw-accuracy");
  tcfg.out_dir = cfg.out_dir + "/throw-accuracy";
  if (!try_resume_run(tcfg, PolicyVariant::ResidualPhysics, seed,
                      GraspSupervision::ThrowAccuracy, rep.throw_accuracy)) {
    rep.throw_accuracy =
        run_single(tcfg, PolicyVariant::ResidualPhysics, seed);
  }

  const WorkspaceConfig ws = workspace_from_config(cfg.raw);
  const double cell = histogram_cell(cfg, ws);
  const double dilation = sim_params_from_config(cfg.raw).gripper_dilation;
  const auto wev = read_grasp_csv(rep.width.dir + "/grasp_events.csv");
  const auto tev = read_grasp_csv(rep.throw_accuracy.dir + "/grasp_events.csv");
  rep.width_entropy =
      histogram_entropy(build_grasp_histogram(set.front(), wev, cell, dilation));
  rep.throw_accuracy_entropy =
      histogram_entropy(build_grasp_histogram(set.front(), tev, cell, dilation));

  json j;
  j["object_set"] = cfg.object_set;
  j["seed"] = seed;
  j["width"] = {{"dir", rep.width.dir},
                {"eval_throw_pct", rep.width.eval.throw_pct},
                {"eval_grasp_pct", rep.width.eval.grasp_pct},
                {"entropy", rep.width_entropy},
                {"mean_abs_offset", mean_abs_offset(wev, set.front().kind)}};
  j["throw_accuracy"] = {
      {"dir", rep.throw_accuracy.dir},
      {"eval_throw_pct", rep.throw_accuracy.eval.throw_pct},
      {"eval_grasp_pct", rep.throw_accuracy.eval.grasp_pct},
      {"entropy", rep.throw_accuracy_entropy},
      {"mean_abs_offset", mean_abs_offset(tev, set.front().kind)}};
  j["checks"] = {
      {"throw_accuracy_ge_width",
       rep.throw_accuracy.eval.throw_pct >= rep.width.eval.throw_pct},
      {"entropy_le_width",
       rep.throw_accuracy_entropy <= rep.width_entropy}};
  std::filesystem::create_directories(cfg.out_dir);
  write_json(cfg.out_dir + "/supervision.json", j);
  return rep;
}

LocationsReport run_unseen_locations(const ExperimentConfig& cfg,
                                     const std::string& runs_dir) {
  const WorkspaceConfig ws = workspace_from_config(cfg.raw);
  const SimParams sp = sim_params_from_config(cfg.raw);
  const PolicyConfig pc = PolicyConfig::from_config(cfg.raw, ws);
  LocationsReport rep;
  json rows = json::array();
  for (const auto v : kAllVariants) {
    for (const auto seed : cfg.seeds) {
      const std::string dir = run_dir_name(runs_dir, v, seed);
      if (!std::filesystem::exists(dir + "/report.json")) continue;
      const RunSummary rs = load_run_summary(dir);
      const auto objects = objects_for_set(rs.object_set, cfg.raw);
      Policy policy(pc, v, seed);
      policy.load(dir + "/final.bin");
      Simulator sim(ws, sp, objects, seed ^ kEvalSimTag ^ kDisplacedTag);
      const EvalResult er =
          run_eval_loop(policy, sim, ws.displaced_boxes, cfg.eval_steps,
                        seed ^ kEvalRngTag ^ kDisplacedTag);
      const MetricsReport m = metrics_from_steps(er.steps, er.grasps);
      rep.rows.push_back({v, seed, rs.eval.throw_pct, m.throw_pct});
      rows.push_back({{"variant", variant_name(v)},
                      {"seed", seed},
                      {"seen_throw_pct", rs.eval.throw_pct},
                      {"displaced_throw_pct", m.throw_pct},
                      {"seen_grasp_pct", rs.eval.grasp_pct},
                      {"displaced_grasp_pct", m.grasp_pct}});
    }
  }
  if (rep.rows.empty()) {
    throw std::runtime_error("no finished runs under " + runs_dir);
  }
  json means = json::array();
  for (const auto v : kAllVariants) {
    double seen = 0.0, displaced = 0.0;
    long n = 0;
    for (const auto& r : rep.rows) {
      if (r.variant != v) continue;
      seen += r.seen_throw_pct;
      displaced += r.displaced_throw_pct;
      ++n;
    }
    if (n == 0) continue;
    means.push_back({{"variant", variant_name(v)},
                     {"mean_seen_throw_pct", seen / n},
                     {"mean_displaced_throw_pct", displaced / n},
                     {"mean_drop", (seen - displaced) / n}});
  }
  json j;
  j["rows"] = rows;
  j["means"] = means;
  std::filesystem::create_directories(cfg.out_dir);
  write_json(cfg.out_dir + "/unseen_locations.json", j);
  return rep;
}

UnseenObjectsReport run_unseen_objects(const ExperimentConfig& cfg,
                                       const std::string& runs_dir) {
  const WorkspaceConfig ws = workspace_from_config(cfg.raw);
  const SimParams sp = sim_params_from_config(cfg.raw);
  const PolicyConfig pc = PolicyConfig::from_config(cfg.raw, ws);
  const auto unseen = objects_for_set("unseen", cfg.raw);
  UnseenObjectsReport rep;
  json rows = json::array();
  for (const auto v : kAllVariants) {
    for (const auto seed : cfg.seeds) {
      const std::string dir = run_dir_name(runs_dir, v, seed);
      if (!std::filesystem::exists(dir + "/report.json")) continue;
      const RunSummary rs = load_run_summary(dir);
      Policy policy(pc, v, seed);
      policy.load(dir + "/final.bin");
      Simulator sim(ws, sp, unseen, seed ^ kEvalSimTag ^ kUnseenTag);
      const EvalResult er =
          run_eval_loop(policy, sim, ws.boxes, cfg.eval_steps,
                        seed ^ kEvalRngTag ^ kUnseenTag);
      const MetricsReport m = metrics_from_steps(er.steps, er.grasps);
      UnseenObjectsReport::Row row;
      row.variant = v;
      row.seed = seed;
      row.seen_grasp_pct = rs.eval.grasp_pct;
      row.seen_throw_pct = rs.eval.throw_pct;
      row.unseen_grasp_pct = m.grasp_pct;
      row.unseen_throw_pct = m.throw_pct;
      row.per_kind = m.per_kind;
      rep.rows.push_back(row);
      json kinds = json::array();
      for (const auto& k : m.per_kind) {
        kinds.push_back({{"kind", kind_name(k.kind)},
                         {"grasp_successes", k.grasp_successes},
                         {"throws_in_box", k.throws_in_box},
                         {"throw_pct", k.throw_pct}});
      }
      rows.push_back({{"variant", variant_name(v)},
                      {"seed", seed},
                      {"seen_grasp_pct", row.seen_grasp_pct},
                      {"seen_throw_pct", row.seen_throw_pct},
                      {"unseen_grasp_pct", row.unseen_grasp_pct},
                      {"unseen_throw_pct", row.unseen_throw_pct},
                      {"per_kind", kinds}});
    }
  }
  if (rep.rows.empty()) {
    throw std::runtime_error("no finished runs under " + runs_dir);
  }
  json j;
  j["rows"] = rows;
  std::filesystem::create_directories(cfg.out_dir);
  write_json(cfg.out_dir + "/unseen_objects.json", j);
  return rep;
}

}  // namespace tossim
