#include "tossim/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "tossim/ballistics.hpp"

namespace tossim {

namespace {

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

}  // namespace

const char* supervision_name(GraspSupervision mode) {
  switch (mode) {
    case GraspSupervision::Width: return "width";
    case GraspSupervision::ThrowAccuracy: return "throw-accuracy";
  }
  throw std::invalid_argument("unknown supervision mode");
}

GraspSupervision supervision_from_name(const std::string& name) {
  if (name == "width") return GraspSupervision::Width;
  if (name == "throw-accuracy") return GraspSupervision::ThrowAccuracy;
  throw std::invalid_argument("unknown supervision mode: " + name);
}

TrainConfig TrainConfig::from_config(const Config& cfg) {
  TrainConfig t;
  t.steps = cfg.get_int("train.steps", t.steps);
  t.lr = cfg.get_double("train.lr", t.lr);
  t.momentum = cfg.get_double("train.momentum", t.momentum);
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  t.epsilon_start = cfg.get_double("train.epsilon_start", t.epsilon_start);
  t.epsilon_end = cfg.get_double("train.epsilon_end", t.epsilon_end);
  t.alpha = cfg.get_double("train.alpha", t.alpha);
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size", t.batch_size));
  t.capacity = cfg.get_int("train.capacity", t.capacity);
  t.supervision =
      supervision_from_name(cfg.get_string("train.supervision", "width"));
  t.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 0));
  t.checkpoint_every = cfg.get_int("train.checkpoint_every", t.checkpoint_every);
  t.pretrain_steps = cfg.get_int("train.pretrain_steps", t.pretrain_steps);
  t.pretrain_respawn_every =
      cfg.get_int("train.pretrain_respawn_every", t.pretrain_respawn_every);
  t.pretrain_holdout = cfg.get_int("train.pretrain_holdout", t.pretrain_holdout);
  t.max_consecutive_failures =
      cfg.get_int("train.max_consecutive_failures", t.max_consecutive_failures);
  if (t.steps < 0 || t.batch_size <= 0 || t.capacity <= 0 || t.alpha < 0.0) {
    throw std::invalid_argument("train config: invalid steps/batch/capacity/alpha");
  }
  return t;
}

double epsilon_at(long step, const TrainConfig& cfg) {
  if (cfg.steps <= 0) return cfg.epsilon_end;
  const double f = std::clamp(static_cast<double>(step) /
                                  static_cast<double>(cfg.steps),
                              0.0, 1.0);
  return cfg.epsilon_start + f * (cfg.epsilon_end - cfg.epsilon_start);
}

Labels make_labels(const GraspOutcome& grasp, const ThrowOutcome* thrown,
                   double executed_planar_speed, GraspSupervision mode,
                   const WorkspaceConfig& ws) {
  Labels out;
  const bool in_box = thrown != nullptr && thrown->in_target_box;
  out.y = mode == GraspSupervision::Width ? (grasp.success ? 1 : 0)
                                          : (grasp.success && in_box ? 1 : 0);
  if (thrown != nullptr && thrown->landed) {
    try {
      out.residual =
          executed_planar_speed - speed_for_landing(thrown->landing, ws);
    } catch (const std::domain_error&) {
      // Landing outside the solver's domain (too close to the ring for a
      // 45-degree arc to pass through at rim height): no residual label.
    }
  }
  return out;
}

ReplayBuffer::ReplayBuffer(long capacity) : capacity_(capacity) {
  if (capacity <= 0) throw std::invalid_argument("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  t.seq = next_seq_++;
  t.priority = max_priority();
  if (static_cast<long>(items_.size()) == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

double ReplayBuffer::max_priority() const {
  double m = items_.empty() ? 1.0 : 0.0;
  for (const auto& t : items_) m = std::max(m, t.priority);
  return m;
}

void ReplayBuffer::update_priority(long index, double priority) {
  items_.at(static_cast<std::size_t>(index)).priority = priority;
}

std::vector<long> ReplayBuffer::sample_indices(int batch, double alpha,
                                               Rng& rng) const {
  std::vector<long> out;
  if (items_.empty() || batch <= 0) return out;
  const long n = size();
  // Rank 1 = highest priority; ties go to the older transition so ranking
  // is a total order and reruns agree.
  std::vector<long> order(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [this](long a, long b) {
    const auto& ta = items_[static_cast<std::size_t>(a)];
    const auto& tb = items_[static_cast<std::size_t>(b)];
    if (ta.priority != tb.priority) return ta.priority > tb.priority;
    return ta.seq < tb.seq;
  });
  std::vector<double> cdf(static_cast<std::size_t>(n));
  double total = 0.0;
  for (long r = 0; r < n; ++r) {
    total += std::pow(static_cast<double>(r + 1), -alpha);
    cdf[static_cast<std::size_t>(r)] = total;
  }
  out.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    const double u = rng.uniform() * total;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto r = std::min<std::size_t>(
        static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
    out.push_back(order[r]);
  }
  return out;
}

double experience_replay(Policy& policy, ReplayBuffer& buffer,
                         const std::vector<long>& batch) {
  if (batch.empty()) return 0.0;
  TrainCache<float> cache;
  double sum = 0.0;
  for (const long idx : batch) {
    const Transition& t = buffer.at(idx);
    const bool need_throw = t.y == 1 && t.throw_label.has_value();
    policy.train_forward(t.map, t.cond, t.action.rotation, cache, need_throw);
    const auto parts = policy.loss_and_backward(
        cache, t.action.row, t.action.col, static_cast<double>(t.y),
        need_throw ? t.throw_label : std::nullopt);
    buffer.update_priority(idx, parts.total);
    sum += parts.total;
  }
  policy.apply_step(static_cast<int>(batch.size()));
  return sum / static_cast<double>(batch.size());
}

PretrainReport pretrain_on_physics(Policy& policy, Simulator& sim,
                                   const TrainConfig& cfg) {
  if (policy.variant() != PolicyVariant::RegressionPoP) {
    throw std::logic_error("pretraining is defined for RegressionPoP only");
  }
  const WorkspaceConfig& ws = sim.workspace();
  if (ws.boxes.empty()) throw std::invalid_argument("workspace has no boxes");
  Rng rng(cfg.seed ^ kPretrainSeedTag);
  // Jitter within the central half of the opening; the far corners of the
  // nearest boxes can fall outside the ballistic domain (a 45-degree arc
  // cannot pass through rim height that close to the ring). Out-of-domain
  // draws fall back to the box center, which the layout keeps solvable.
  auto pick_target = [&](long i) {
    const BoxSpec& box = ws.boxes[static_cast<std::size_t>(i) % ws.boxes.size()];
    const double jx = rng.uniform(-0.5, 0.5) * box.half_x;
    const double jy = rng.uniform(-0.5, 0.5) * box.half_y;
    Vec3 p{box.cx + jx, box.cy + jy, box.rim_z};
    try {
      return std::make_pair(p, solve_release(p, ws).planar_speed);
    } catch (const std::domain_error&) {
      const Vec3 c{box.cx, box.cy, box.rim_z};
      return std::make_pair(c, solve_release(c, ws).planar_speed);
    }
  };
  PretrainReport report;
  report.steps = cfg.pretrain_steps;
  Heightmap I;
  TrainCache<float> cache;
  for (long t = 0; t < cfg.pretrain_steps; ++t) {
    if (cfg.pretrain_respawn_every > 0 && t % cfg.pretrain_respawn_every == 0) {
      sim.respawn();
      I = sim.render_heightmap();
    } else if (t == 0) {
      sim.reset_if_empty();
      I = sim.render_heightmap();
    }
    const auto [p, speed] = pick_target(t);
    const double cond = policy.conditioning_value(p, ws);
    const GraspAction a = policy.random_action(rng);
    policy.train_forward(I, cond, a.rotation, cache, true);
    policy.pretrain_loss_and_backward(cache, a.row, a.col, speed);
    policy.apply_step_throw_only(1);
  }
  // Held-out check on fresh scenes and targets: the head should now track
  // the ballistic speed across the box region.
  sim.respawn();
  I = sim.render_heightmap();
  double se = 0.0;
  const long holdout = std::max<long>(cfg.pretrain_holdout, 1);
  for (long h = 0; h < holdout; ++h) {
    const auto [p, speed] = pick_target(h);
    const double cond = policy.conditioning_value(p, ws);
    const GraspAction a = policy.random_action(rng);
    const double qt = policy.qt_at_action(I, cond, a);
    se += (qt - speed) * (qt - speed);
  }
  report.holdout_rms = std::sqrt(se / static_cast<double>(holdout));
  return report;
}

namespace {

std::optional<double> variant_throw_label(PolicyVariant variant,
                                          const Transition& t) {
  if (!has_throw_head(variant)) return std::nullopt;
  // Both parameterizations train on the same sample subset (throws with a
  // usable landing) so the comparison between them is about representation,
  // not data volume. ResidualPhysics regresses the correction; the
  // Regression variants regress the speed that was actually executed.
  if (!t.residual.has_value()) return std::nullopt;
  if (variant == PolicyVariant::ResidualPhysics) return t.residual;
  return t.executed_speed;
}

std::string checkpoint_path(const std::string& dir, long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06ld.bin", step);
  return dir + "/" + buf;
}

}  // namespace

TrainResult run_episode_loop(Policy& policy, Simulator& sim,
                             const TrainConfig& cfg,
                             const std::string& out_dir) {
  const WorkspaceConfig& ws = sim.workspace();
  if (ws.boxes.empty()) throw std::invalid_argument("workspace has no boxes");
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  Rng rng(cfg.seed);
  ReplayBuffer buffer(cfg.capacity);
  TrainResult result;
  result.steps.reserve(static_cast<std::size_t>(cfg.steps));
  long consecutive_failures = 0;

  for (long step = 0; step < cfg.steps; ++step) {
    if (cfg.max_consecutive_failures > 0 &&
        consecutive_failures >= cfg.max_consecutive_failures) {
      sim.respawn();
      consecutive_failures = 0;
      ++result.respawns_forced;
    } else {
      sim.reset_if_empty();
    }
    Heightmap I = sim.render_heightmap();
    const BoxSpec& box = ws.boxes[static_cast<std::size_t>(step) % ws.boxes.size()];
    const Vec3 p{box.cx, box.cy, box.rim_z};
    const double cond = policy.conditioning_value(p, ws);
    const PolicyOutput out = policy.forward(I, cond);
    const double eps = epsilon_at(step, cfg);
    const GraspAction action = policy.select_action(out, eps, rng);
    const GraspOutcome grasp = sim.execute_grasp(action.row, action.col,
                                                 action.rotation);
    consecutive_failures = grasp.success ? 0 : consecutive_failures + 1;

    std::optional<ThrowOutcome> thrown;
    double executed = 0.0;
    if (grasp.success) {
      const ThrowParams tp = policy.compose_throw(out, action, p, eps, rng, ws);
      thrown = sim.execute_throw(grasp.model, grasp.s, tp.plan, box);
      executed = tp.plan.planar_speed;
    }
    const Labels labels = make_labels(grasp, thrown ? &*thrown : nullptr,
                                      executed, cfg.supervision, ws);
    if (thrown && !labels.residual.has_value()) ++result.dropped_unreachable;

    Transition t;
    t.map = std::move(I);
    t.target = p;
    t.target_box = box.id;
    t.action = action;
    t.cond = cond;
    t.executed_speed = executed;
    t.y = labels.y;
    t.thrown = thrown.has_value();
    t.landed = thrown && thrown->landed;
    t.in_target_box = thrown && thrown->in_target_box;
    if (t.landed) t.landing = thrown->landing;
    t.residual = labels.residual;
    t.throw_label = variant_throw_label(policy.variant(), t);
    t.step = step;
    buffer.push(std::move(t));

    const auto batch = buffer.sample_indices(cfg.batch_size, cfg.alpha, rng);
    const double mean_loss = experience_replay(policy, buffer, batch);

    StepRecord rec;
    rec.step = step;
    rec.epsilon = eps;
    rec.grasp_success = grasp.success ? 1 : 0;
    rec.throw_success = thrown && thrown->in_target_box ? 1 : 0;
    rec.target_box = box.id;
    rec.thrown = thrown.has_value();
    rec.executed_speed = executed;
    rec.residual = labels.residual;
    if (!batch.empty()) rec.loss = mean_loss;
    result.steps.push_back(rec);

    if (grasp.success) {
      GraspEvent ev;
      ev.step = step;
      ev.kind = grasp.kind;
      ev.point = grasp.object_point;
      ev.s = grasp.s;
      ev.thrown = true;
      ev.in_target_box = thrown->in_target_box;
      result.grasps.push_back(ev);
    }
    if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
        (step + 1) % cfg.checkpoint_every == 0) {
      policy.save(checkpoint_path(out_dir, step + 1));
    }
  }
  if (!out_dir.empty()) {
    policy.save(out_dir + "/final.bin");
    write_step_csv(out_dir + "/steps.csv", result.steps);
    write_grasp_csv(out_dir + "/grasp_events.csv", result.grasps);
  }
  return result;
}

EvalResult run_eval_loop(Policy& policy, Simulator& sim,
                         const std::vector<BoxSpec>& targets, long steps,
                         std::uint64_t seed) {
  if (targets.empty()) throw std::invalid_argument("no target boxes");
  const WorkspaceConfig& ws = sim.workspace();
  Rng rng(seed);
  EvalResult result;
  result.steps.reserve(static_cast<std::size_t>(steps));
  // Greedy policies can pick the same hopeless pixel until the scene
  // changes; the forced respawn keeps evaluation moving.
  constexpr long kMaxConsecutiveFailures = 50;
  long consecutive_failures = 0;
  for (long step = 0; step < steps; ++step) {
    if (consecutive_failures >= kMaxConsecutiveFailures) {
      sim.respawn();
      consecutive_failures = 0;
    } else {
      sim.reset_if_empty();
    }
    const Heightmap I = sim.render_heightmap();
    const BoxSpec& box = targets[static_cast<std::size_t>(step) % targets.size()];
    const Vec3 p{box.cx, box.cy, box.rim_z};
    const double cond = policy.conditioning_value(p, ws);
    const PolicyOutput out = policy.forward(I, cond);
    const GraspAction action = policy.select_action(out, 0.0, rng);
    const GraspOutcome grasp = sim.execute_grasp(action.row, action.col,
                                                 action.rotation);
    consecutive_failures = grasp.success ? 0 : consecutive_failures + 1;
    std::optional<ThrowOutcome> thrown;
    double executed = 0.0;
    if (grasp.success) {
      const ThrowParams tp = policy.compose_throw(out, action, p, 0.0, rng, ws);
      thrown = sim.execute_throw(grasp.model, grasp.s, tp.plan, box);
      executed = tp.plan.planar_speed;
    }
    const Labels labels = make_labels(grasp, thrown ? &*thrown : nullptr,
                                      executed, GraspSupervision::Width, ws);
    StepRecord rec;
    rec.step = step;
    rec.epsilon = 0.0;
    rec.grasp_success = grasp.success ? 1 : 0;
    rec.throw_success = thrown && thrown->in_target_box ? 1 : 0;
    rec.target_box = box.id;
    rec.thrown = thrown.has_value();
    rec.executed_speed = executed;
    rec.residual = labels.residual;
    result.steps.push_back(rec);
    if (grasp.success) {
      GraspEvent ev;
      ev.step = step;
      ev.kind = grasp.kind;
      ev.point = grasp.object_point;
      ev.s = grasp.s;
      ev.thrown = true;
      ev.in_target_box = thrown->in_target_box;
      result.grasps.push_back(ev);
    }
  }
  return result;
}

void write_step_csv(const std::string& path,
                    const std::vector<StepRecord>& steps) {
  auto out = open_out(path);
  out << "step,epsilon,grasp_success,throw_success,target_box,"
         "executed_speed,residual,loss\n";
  for (const auto& r : steps) {
    out << r.step << ',' << format_double(r.epsilon) << ',' << r.grasp_success
        << ',' << r.throw_success << ',' << r.target_box << ','
        << format_double(r.executed_speed) << ',';
    if (r.residual) out << format_double(*r.residual);
    out << ',';
    if (r.loss) out << format_double(*r.loss);
    out << '\n';
  }
}

void write_grasp_csv(const std::string& path,
                     const std::vector<GraspEvent>& grasps) {
  auto out = open_out(path);
  out << "step,kind,point_x,point_y,s,thrown,in_target_box\n";
  for (const auto& g : grasps) {
    out << g.step << ',' << kind_name(g.kind) << ',' << format_double(g.point.x)
        << ',' << format_double(g.point.y) << ',' << format_double(g.s) << ','
        << (g.thrown ? 1 : 0) << ',' << (g.in_target_box ? 1 : 0) << '\n';
  }
}

std::vector<GraspEvent> read_grasp_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<GraspEvent> out;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty file: " + path);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        f.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (f.size() != 7) throw std::runtime_error("malformed row in " + path);
    GraspEvent ev;
    ev.step = std::stol(f[0]);
    ev.kind = kind_from_name(f[1]);
    ev.point = {std::stod(f[2]), std::stod(f[3])};
    ev.s = std::stod(f[4]);
    ev.thrown = f[5] == "1";
    ev.in_target_box = f[6] == "1";
    out.push_back(ev);
  }
  return out;
}

}  // namespace tossim
