#pragma once

#include "tossim/scene.hpp"

namespace tossim {

/// Release pose and velocity produced by the analytic controller.
/// Invariants: |r_xy| = c_d, r.z = c_h, v_hat at 45 degrees elevation
/// (planar speed equals vertical speed), v_hat planar direction collinear
/// with (p_xy - r_xy).
struct ReleasePlan {
  Vec3 r;
  Vec3 v_hat;
  double planar_speed = 0.0;  // ||v_hat_xy||, also equals v_hat.z
  double azimuth = 0.0;       // psi, direction from origin toward the target
};

/// Closed-form release solution for landing a drag-free point mass at p.
///
/// Derivation (committed here because published forms of this equation
/// disagree on a sign): release at r = (c_d cos psi, c_d sin psi, c_h) with
/// planar speed v and vertical speed v (45 degrees). At horizontal travel
/// D = ||p_xy|| - c_d the height is
///     z(D) = r_z + D - a D^2 / (2 v^2),
/// so z(D) = p_z gives  v^2 = a D^2 / (2 (D + r_z - p_z)).
/// The denominator must be positive: a 45-degree throw cannot reach a point
/// above the line z = r_z + D. For a target above the release height the
/// parabola crosses z = p_z twice, and only the descending crossing counts
/// as landing there; it coincides with D exactly when the apex lies before
/// the target, D >= 2 (p_z - r_z). `simulate_ideal_flight` independently
/// verifies both the sign choice and the branch condition.
///
/// Throws std::domain_error when p is inside the release ring (D <= 0),
/// when the discriminant D + r_z - p_z is non-positive (target too high),
/// or when D < 2 (p_z - r_z) (target too close to come down on at 45
/// degrees).
ReleasePlan solve_release(const Vec3& p, const WorkspaceConfig& ws);

/// Same geometry, but with the planar speed imposed by the caller (the
/// learned policy variants command speeds other than the ballistic one).
/// Azimuth and release position still point at p.
ReleasePlan plan_with_planar_speed(const Vec3& p, double planar_speed,
                                   const WorkspaceConfig& ws);

/// Drag-free flight from the plan down to the plane z = plane_z, RK4 at
/// fixed step dt. Returns the landing position with z = plane_z exactly
/// (linear interpolation within the crossing step). Only downward crossings
/// count; a release below the plane first ascends through it, which is
/// ignored. Throws std::runtime_error when the plane is unreachable or
/// after 10 s of simulated flight. Used as the verification oracle for
/// solve_release.
Vec3 simulate_ideal_flight(const ReleasePlan& plan, const WorkspaceConfig& ws,
                           double plane_z, double dt = 1e-3);

/// Ballistic planar speed that would land exactly at p_bar: the residual
/// label reference. Same domain restrictions as solve_release.
double speed_for_landing(const Vec3& p_bar, const WorkspaceConfig& ws);

}  // namespace tossim
