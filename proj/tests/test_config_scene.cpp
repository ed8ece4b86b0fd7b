#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "tossim/config.hpp"
#include "tossim/rng.hpp"
#include "tossim/scene.hpp"

using namespace tossim;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Monte-Carlo integral of the footprint-union volume and centroid over the
// object's bounding box. Independent of the analytic prim formulas: points
// are classified by direct containment tests.
struct McMass {
  double volume = 0.0;
  Vec3 com;
};

bool point_in_prim(const Primitive& p, const Vec3& q) {
  const double dx = q.x - p.center.x;
  const double dy = q.y - p.center.y;
  const double dz = q.z - p.center.z;
  if (p.kind == PrimitiveKind::Sphere) {
    return dx * dx + dy * dy + dz * dz <= p.half.x * p.half.x;
  }
  return std::abs(dx) <= p.half.x && std::abs(dy) <= p.half.y &&
         std::abs(dz) <= p.half.z;
}

McMass mc_mass(const ObjectModel& m, long samples, std::uint64_t seed) {
  double lo_x = 1e9, hi_x = -1e9, lo_y = 1e9, hi_y = -1e9, lo_z = 1e9, hi_z = -1e9;
  for (const auto& p : m.prims) {
    const double hx = p.half.x;
    const double hy = p.kind == PrimitiveKind::Sphere ? p.half.x : p.half.y;
    const double hz = p.kind == PrimitiveKind::Sphere ? p.half.x : p.half.z;
    lo_x = std::min(lo_x, p.center.x - hx);
    hi_x = std::max(hi_x, p.center.x + hx);
    lo_y = std::min(lo_y, p.center.y - hy);
    hi_y = std::max(hi_y, p.center.y + hy);
    lo_z = std::min(lo_z, p.center.z - hz);
    hi_z = std::max(hi_z, p.center.z + hz);
  }
  Rng rng(seed);
  long hits = 0;
  Vec3 sum;
  for (long i = 0; i < samples; ++i) {
    const Vec3 q{rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y),
                 rng.uniform(lo_z, hi_z)};
    bool inside = false;
    for (const auto& p : m.prims) inside = inside || point_in_prim(p, q);
    if (inside) {
      ++hits;
      sum = sum + q;
    }
  }
  const double box_vol =
      (hi_x - lo_x) * (hi_y - lo_y) * (hi_z - lo_z);
  McMass out;
  out.volume = box_vol * static_cast<double>(hits) / static_cast<double>(samples);
  out.com = sum * (1.0 / static_cast<double>(hits));
  return out;
}

}  // namespace

TEST_SUITE("config_scene") {

TEST_CASE("config parses comments, blanks, and later assignments win") {
  const Config cfg = Config::from_string(
      "# leading comment\n"
      "\n"
      "a.b = 1.5\n"
      "  name =  hello  # trailing comment\n"
      "a.b = 2.5\n"
      "flag = true\n"
      "count = -3\n");
  CHECK(cfg.get_double("a.b") == 2.5);
  CHECK(cfg.get_string("name") == "hello");
  CHECK(cfg.get_bool("flag"));
  CHECK(cfg.get_int("count") == -3);
  CHECK(cfg.has("a.b"));
  CHECK(!cfg.has("missing"));
}

TEST_CASE("config rejects malformed lines and values") {
  CHECK_THROWS_AS((void)Config::from_string("just words\n"), std::runtime_error);
  CHECK_THROWS_AS((void)Config::from_string("= value\n"), std::runtime_error);
  const Config cfg = Config::from_string("x = abc\nb = maybe\n");
  CHECK_THROWS_AS((void)cfg.get_double("x"), std::runtime_error);
  CHECK_THROWS_AS((void)cfg.get_int("x"), std::runtime_error);
  CHECK_THROWS_AS((void)cfg.get_bool("b"), std::runtime_error);
  CHECK_THROWS_AS((void)cfg.get_string("missing"), std::runtime_error);
  CHECK(cfg.get_double("missing", 7.0) == 7.0);
  CHECK(cfg.get_int("missing", 9) == 9);
  CHECK(cfg.get_bool("missing", true));
  CHECK(cfg.get_string("missing", "d") == "d");
}

TEST_CASE("config accepts the documented bool spellings") {
  const Config cfg = Config::from_string(
      "t1 = true\nt2 = 1\nt3 = yes\nf1 = false\nf2 = 0\nf3 = no\n");
  for (const char* k : {"t1", "t2", "t3"}) CHECK(cfg.get_bool(k));
  for (const char* k : {"f1", "f2", "f3"}) CHECK(!cfg.get_bool(k));
}

TEST_CASE("desk workspace dimensions and pixel grid") {
  const WorkspaceConfig ws = make_desk_workspace();
  CHECK(ws.map_w() == 90);
  CHECK(ws.map_h() == 70);
  // Pixel centers tile the bin exactly: first and last centers sit half a
  // pixel inside the walls.
  const Vec2 c00 = ws.pixel_center(0, 0);
  CHECK(c00.x == doctest::Approx(-ws.bin_half_x + 0.5 * ws.pixel_size));
  CHECK(c00.y == doctest::Approx(-ws.bin_half_y + 0.5 * ws.pixel_size));
  const Vec2 cl = ws.pixel_center(ws.map_h() - 1, ws.map_w() - 1);
  CHECK(cl.x == doctest::Approx(ws.bin_half_x - 0.5 * ws.pixel_size));
  CHECK(cl.y == doctest::Approx(ws.bin_half_y - 0.5 * ws.pixel_size));
}

TEST_CASE("desk box grids: counts, displacement, and separation") {
  const WorkspaceConfig ws = make_desk_workspace();
  REQUIRE(ws.boxes.size() == 12);
  REQUIRE(ws.displaced_boxes.size() == 12);
  for (std::size_t i = 0; i < ws.boxes.size(); ++i) {
    CHECK(ws.displaced_boxes[i].cx ==
          doctest::Approx(ws.boxes[i].cx + 0.15));
    CHECK(ws.displaced_boxes[i].cy ==
          doctest::Approx(ws.boxes[i].cy + 0.16));
    CHECK(ws.boxes[i].rim_z == doctest::Approx(0.20));
  }
  // Every opening lies wholly beyond the release ring.
  for (const auto& b : ws.boxes) {
    const double nx = std::abs(b.cx) - b.half_x;
    const double ny = std::max(std::abs(b.cy) - b.half_y, 0.0);
    CHECK(std::sqrt(nx * nx + ny * ny) > ws.release_radius);
  }
  // No two openings overlap, across both grids.
  std::vector<BoxSpec> all = ws.boxes;
  all.insert(all.end(), ws.displaced_boxes.begin(), ws.displaced_boxes.end());
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      const bool apart = std::abs(all[i].cx - all[j].cx) >=
                             all[i].half_x + all[j].half_x ||
                         std::abs(all[i].cy - all[j].cy) >=
                             all[i].half_y + all[j].half_y;
      CHECK(apart);
    }
  }
}

TEST_CASE("workspace validation rejects broken layouts") {
  WorkspaceConfig ws = make_desk_workspace();
  ws.pixel_size = 0.007;  // 0.45 / 0.007 is not an integer
  CHECK_THROWS_AS(ws.validate(), std::invalid_argument);

  ws = make_desk_workspace();
  ws.boxes[0].cx = 0.5;  // nearest corner falls inside the release ring
  ws.boxes[0].cy = 0.0;
  CHECK_THROWS_AS(ws.validate(), std::invalid_argument);

  ws = make_desk_workspace();
  ws.boxes[1] = ws.boxes[0];
  CHECK_THROWS_AS(ws.validate(), std::invalid_argument);

  ws = make_desk_workspace();
  ws.release_radius = 0.2;  // ring cuts through the bin
  CHECK_THROWS_AS(ws.validate(), std::invalid_argument);

  ws = make_desk_workspace();
  ws.boxes[3].half_x = 0.0;
  CHECK_THROWS_AS(ws.validate(), std::invalid_argument);
}

TEST_CASE("workspace_from_config: defaults equal the desk layout") {
  const WorkspaceConfig d = make_desk_workspace();
  const WorkspaceConfig ws = workspace_from_config(Config{});
  CHECK(ws.bin_half_x == d.bin_half_x);
  CHECK(ws.num_rotations == d.num_rotations);
  REQUIRE(ws.boxes.size() == d.boxes.size());
  for (std::size_t i = 0; i < d.boxes.size(); ++i) {
    CHECK(ws.boxes[i].cx == d.boxes[i].cx);
    CHECK(ws.boxes[i].cy == d.boxes[i].cy);
  }
}

TEST_CASE("workspace_from_config: overrides are honored and validated") {
  Config cfg;
  cfg.set("workspace.num_rotations", "8");
  cfg.set("workspace.grid_nx", "2");
  const WorkspaceConfig ws = workspace_from_config(cfg);
  CHECK(ws.num_rotations == 8);
  CHECK(ws.boxes.size() == 8);

  Config bad;
  bad.set("workspace.pixel_size", "0.007");
  CHECK_THROWS_AS((void)workspace_from_config(bad), std::invalid_argument);
}

TEST_CASE("kind names round-trip and the seen split is stable") {
  for (ObjectKind k : {ObjectKind::Ball, ObjectKind::Cube, ObjectKind::Rod,
                       ObjectKind::Hammer, ObjectKind::Tee, ObjectKind::Capsule,
                       ObjectKind::RodSmall, ObjectKind::RodLarge}) {
    CHECK(kind_from_name(kind_name(k)) == k);
  }
  CHECK(is_seen_kind(ObjectKind::Hammer));
  CHECK(!is_seen_kind(ObjectKind::Tee));
  CHECK_THROWS_AS((void)kind_from_name("anvil"), std::invalid_argument);
}

TEST_CASE("normalize_yaw lands in [0, 2pi)") {
  CHECK(normalize_yaw(0.0) == 0.0);
  CHECK(normalize_yaw(2.0 * kPi) == doctest::Approx(0.0));
  CHECK(normalize_yaw(-0.5) == doctest::Approx(2.0 * kPi - 0.5));
  CHECK(normalize_yaw(7.0 * kPi) == doctest::Approx(kPi));
}

TEST_CASE("volume and center of mass match a Monte-Carlo integral") {
  const Config cfg;
  for (const auto& m : make_standard_objects(1.0, cfg)) {
    const McMass mc = mc_mass(m, 400000, 0x5ca1eu + static_cast<int>(m.kind));
    CHECK(std::abs(m.volume() - mc.volume) / mc.volume < 0.02);
    CHECK(std::abs(m.com.x - mc.com.x) < 1e-3);
    CHECK(std::abs(m.com.z - mc.com.z) < 1e-3);
    // All seen objects are mirror-symmetric in y.
    CHECK(m.com.y == 0.0);
  }
  // The hammer CoM sits between handle center and head center; the exact
  // volume-weighted value is 63/1850.
  const auto objs = make_standard_objects(1.0, cfg);
  const ObjectModel& hammer = objs[3];
  REQUIRE(hammer.kind == ObjectKind::Hammer);
  CHECK(hammer.com.x == doctest::Approx(63.0 / 1850.0).epsilon(1e-12));
}

TEST_CASE("bounding radius covers every footprint sample") {
  const Config cfg;
  for (const auto& m : make_standard_objects(1.0, cfg)) {
    const double r = m.bounding_radius();
    PlacedObject po{m, Pose2D{}};
    Rng rng(77);
    for (int i = 0; i < 2000; ++i) {
      const Vec2 q{rng.uniform(-r, r), rng.uniform(-r, r)};
      if (footprint_distance(po, q) <= 0.0) {
        CHECK(std::sqrt(q.x * q.x + q.y * q.y) <= r + 1e-12);
      }
    }
    // The radius is tight: the farthest sampled footprint point comes close
    // to it.
    double farthest = 0.0;
    Rng dense(m.kind == ObjectKind::Ball ? 5u : 6u + static_cast<unsigned>(m.kind));
    for (int i = 0; i < 40000; ++i) {
      const Vec2 q{dense.uniform(-r, r), dense.uniform(-r, r)};
      if (footprint_distance(po, q) <= 0.0) {
        farthest = std::max(farthest, std::sqrt(q.x * q.x + q.y * q.y));
      }
    }
    CHECK(farthest <= r + 1e-12);
    CHECK(farthest > 0.97 * r);
  }
}

TEST_CASE("footprint distance: sphere is exact, boxes rotate with the pose") {
  const Config cfg;
  const auto objs = make_standard_objects(1.0, cfg);
  const ObjectModel& ball = objs[0];
  PlacedObject pb{ball, Pose2D{0.1, -0.05, 1.3}};
  // A sphere's footprint distance ignores yaw.
  CHECK(footprint_distance(pb, {0.1, -0.05}) == doctest::Approx(-0.02));
  CHECK(footprint_distance(pb, {0.15, -0.05}) == doctest::Approx(0.03));

  const ObjectModel& rod = objs[2];
  PlacedObject pr{rod, Pose2D{0.0, 0.0, kPi / 2.0}};
  // Rotated 90 degrees the long side lies along y.
  CHECK(footprint_distance(pr, {0.0, 0.079}) < 0.0);
  CHECK(footprint_distance(pr, {0.0, 0.081}) > 0.0);
  CHECK(footprint_distance(pr, {0.016, 0.0}) > 0.0);
  CHECK(footprint_distance(pr, {0.014, 0.0}) < 0.0);
}

TEST_CASE("height_at reports the top surface") {
  const Config cfg;
  const auto objs = make_standard_objects(1.0, cfg);
  PlacedObject cube{objs[1], Pose2D{0.05, 0.05, 0.0}};
  CHECK(height_at(cube, {0.05, 0.05}) == doctest::Approx(0.04));
  CHECK(height_at(cube, {0.2, 0.2}) == 0.0);
  PlacedObject ball{objs[0], Pose2D{0.0, 0.0, 0.0}};
  CHECK(height_at(ball, {0.0, 0.0}) == doctest::Approx(0.04));
  // Halfway out in radius the spherical cap is lower.
  CHECK(height_at(ball, {0.01, 0.0}) ==
        doctest::Approx(0.02 + std::sqrt(0.02 * 0.02 - 0.01 * 0.01)));
}

TEST_CASE("axis_offset is the signed distance along the axis from the CoM") {
  const Config cfg;
  const auto objs = make_standard_objects(1.0, cfg);
  const ObjectModel& hammer = objs[3];
  const double yaw = 0.7;
  PlacedObject ph{hammer, Pose2D{0.03, -0.02, yaw}};
  // World point of the object-frame location (com.x + s, 0).
  const double s_true = 0.045;
  const double ox = hammer.com.x + s_true;
  const Vec2 world{0.03 + std::cos(yaw) * ox, -0.02 + std::sin(yaw) * ox};
  CHECK(axis_offset(ph, world) == doctest::Approx(s_true));
  // A point at the CoM has offset zero regardless of yaw.
  const Vec2 at_com{0.03 + std::cos(yaw) * hammer.com.x,
                    -0.02 + std::sin(yaw) * hammer.com.x};
  CHECK(axis_offset(ph, at_com) == doctest::Approx(0.0));
}

TEST_CASE("axis_half_length bounds the footprint along the axis") {
  const Config cfg;
  for (const auto& m : make_standard_objects(1.0, cfg)) {
    PlacedObject po{m, Pose2D{}};
    const double hl = m.axis_half_length();
    Rng rng(13);
    for (int i = 0; i < 2000; ++i) {
      const double r = m.bounding_radius();
      const Vec2 q{rng.uniform(-r, r), rng.uniform(-r, r)};
      if (footprint_distance(po, q) <= 0.0) {
        CHECK(std::abs(axis_offset(po, q)) <= hl + 1e-12);
      }
    }
  }
  // Rod: CoM at the center, so the half length is the half extent.
  const auto objs = make_standard_objects(1.0, cfg);
  CHECK(objs[2].axis_half_length() == doctest::Approx(0.08));
}

TEST_CASE("object sets: kinds, scale, and hidden coefficient overrides") {
  Config cfg;
  cfg.set("object.hammer.beta", "0.07");
  cfg.set("object.ball.intensity", "0.33");
  const auto seen = make_standard_objects(1.0, cfg);
  REQUIRE(seen.size() == 4);
  CHECK(seen[0].kind == ObjectKind::Ball);
  CHECK(seen[1].kind == ObjectKind::Cube);
  CHECK(seen[2].kind == ObjectKind::Rod);
  CHECK(seen[3].kind == ObjectKind::Hammer);
  CHECK(seen[3].beta == 0.07);
  CHECK(seen[0].intensity == doctest::Approx(0.33));
  CHECK(seen[1].beta == doctest::Approx(0.02));
  CHECK(!seen[0].elongated);
  CHECK(seen[2].elongated);

  const auto unseen = make_unseen_objects(1.0, Config{});
  REQUIRE(unseen.size() == 4);
  CHECK(unseen[0].kind == ObjectKind::Tee);
  CHECK(unseen[1].kind == ObjectKind::Capsule);
  CHECK(unseen[2].kind == ObjectKind::RodSmall);
  CHECK(unseen[3].kind == ObjectKind::RodLarge);
  // The scaled rods shrink and grow relative to the seen rod.
  const auto base = make_standard_objects(1.0, Config{});
  CHECK(unseen[2].bounding_radius() ==
        doctest::Approx(0.75 * base[2].bounding_radius()));
  CHECK(unseen[3].bounding_radius() ==
        doctest::Approx(1.25 * base[2].bounding_radius()));

  // Global scale multiplies footprints.
  const auto big = make_standard_objects(2.0, Config{});
  CHECK(big[1].bounding_radius() ==
        doctest::Approx(2.0 * base[1].bounding_radius()));
  CHECK_THROWS_AS((void)make_standard_objects(0.0, Config{}), std::invalid_argument);
}

}  // TEST_SUITE
