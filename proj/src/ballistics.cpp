#include "tossim/ballistics.hpp"

#include <cmath>
#include <stdexcept>

namespace tossim {

namespace {

void release_geometry(const Vec3& p, const WorkspaceConfig& ws, double& psi,
                      double& dist, Vec3& r) {
  const double planar = p.planar_norm();
  dist = planar - ws.release_radius;
  if (dist <= 0.0) {
    throw std::domain_error("ballistics: target inside the release circle");
  }
  psi = std::atan2(p.y, p.x);
  r = {ws.release_radius * std::cos(psi), ws.release_radius * std::sin(psi),
       ws.release_height};
}

}  // namespace

ReleasePlan solve_release(const Vec3& p, const WorkspaceConfig& ws) {
  ReleasePlan plan;
  double dist;
  release_geometry(p, ws, plan.azimuth, dist, plan.r);
  const double denom = dist + plan.r.z - p.z;
  if (denom <= 0.0) {
    throw std::domain_error(
        "ballistics: target above the 45-degree reachable cone (D + r_z - p_z <= 0)");
  }
  // z(D) = p_z has two roots when the target sits above the release
  // height: one on the ascent, one on the descent. An object falls into a
  // box, so only the descending crossing counts as a hit; that branch
  // passes through p exactly when the apex lies before D, i.e.
  // D >= 2 (p_z - r_z). Closer-and-higher targets are unreachable at 45
  // degrees even though the speed formula stays real.
  if (dist < 2.0 * (p.z - plan.r.z)) {
    throw std::domain_error(
        "ballistics: target too close for a descending 45-degree throw "
        "(D < 2 (p_z - r_z))");
  }
  const double v = dist * std::sqrt(ws.gravity / (2.0 * denom));
  plan.planar_speed = v;
  plan.v_hat = {v * std::cos(plan.azimuth), v * std::sin(plan.azimuth), v};
  return plan;
}

ReleasePlan plan_with_planar_speed(const Vec3& p, double planar_speed,
                                   const WorkspaceConfig& ws) {
  if (planar_speed <= 0.0) {
    throw std::domain_error("ballistics: planar speed must be positive");
  }
  ReleasePlan plan;
  double dist;
  release_geometry(p, ws, plan.azimuth, dist, plan.r);
  plan.planar_speed = planar_speed;
  plan.v_hat = {planar_speed * std::cos(plan.azimuth),
                planar_speed * std::sin(plan.azimuth), planar_speed};
  return plan;
}

Vec3 simulate_ideal_flight(const ReleasePlan& plan, const WorkspaceConfig& ws,
                           double plane_z, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("ballistics: dt must be positive");
  const double g = ws.gravity;
  Vec3 x = plan.r;
  Vec3 u = plan.v_hat;
  double t = 0.0;
  while (t < 10.0) {
    // RK4 for x'' = -g e_z. Exact integration would be closed form too; the
    // point of stepping is to stay an independent check of solve_release.
    const Vec3 x_prev = x;
    const Vec3 k1x = u;
    const Vec3 k1u = {0.0, 0.0, -g};
    const Vec3 k2x = u + k1u * (dt / 2.0);
    const Vec3 k3x = u + k1u * (dt / 2.0);
    const Vec3 k4x = u + k1u * dt;
    x = x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0);
    u = u + k1u * dt;
    t += dt;
    if (x_prev.z > plane_z && x.z <= plane_z) {
      const double f = (x_prev.z - plane_z) / (x_prev.z - x.z);
      return {x_prev.x + f * (x.x - x_prev.x), x_prev.y + f * (x.y - x_prev.y),
              plane_z};
    }
    if (u.z < 0.0 && x.z < plane_z) {
      throw std::runtime_error("ballistics: flight cannot reach the landing plane");
    }
  }
  throw std::runtime_error("ballistics: flight exceeded the 10 s cap");
}

double speed_for_landing(const Vec3& p_bar, const WorkspaceConfig& ws) {
  return solve_release(p_bar, ws).planar_speed;
}

}  // namespace tossim
