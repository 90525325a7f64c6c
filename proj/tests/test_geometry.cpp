#include "support.hpp"

#include <doctest.h>

using namespace muppet;
using namespace testsupport;

namespace {

CameraModel unit_camera(Distortion d = {}) {
  Mat3 K = Mat3::Identity();
  K(0, 0) = K(1, 1) = 1000.0;
  return CameraModel("c", K, d, Mat3::Identity(), Vec3::Zero(), 4000, 4000);
}

std::vector<const CameraModel*> pointers(const CameraRig& rig) {
  std::vector<const CameraModel*> out;
  for (const auto& c : rig.cameras) out.push_back(&c);
  return out;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("project: pinhole examples") {
  const CameraModel cam = unit_camera();
  CHECK((project(cam, {0, 0, 1000}) - Vec2(0, 0)).norm() < 1e-12);
  CHECK((project(cam, {100, 0, 1000}) - Vec2(100, 0)).norm() < 1e-12);
}

TEST_CASE("project: k1 = 0.1 fixture") {
  // x_n = 0.1, r^2 = 0.01, radial factor 1.001 -> u = 1000 * 0.1001.
  const CameraModel cam = unit_camera({0.1, 0, 0, 0});
  const Vec2 px = project(cam, {100, 0, 1000});
  CHECK(px.x() == doctest::Approx(100.1).epsilon(1e-14));
  CHECK(px.y() == doctest::Approx(0.0));
}

TEST_CASE("project: matches the independent formula with tangential terms") {
  const CameraRig rig = ring_rig(3, 3000, 2000, {-0.1, 0.02, 1e-3, -2e-3});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-400, 400);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng) * 0.3);
    for (const auto& c : rig.cameras) CHECK((project(c, p) - oracle_project(c, p)).norm() < 1e-9);
  }
}

TEST_CASE("project: zero distortion reduces to the pinhole formula") {
  const CameraRig rig = ring_rig(4);
  const Vec3 p(12.5, -40.0, 80.0);
  for (const auto& c : rig.cameras) {
    const Vec3 xc = c.rotation() * p + c.translation();
    const Vec2 expected(c.fx() * xc.x() / xc.z() + c.cx(), c.fy() * xc.y() / xc.z() + c.cy());
    CHECK((project(c, p) - expected).norm() == 0.0);
  }
}

TEST_CASE("project: points behind the camera") {
  const CameraModel cam = unit_camera();
  CHECK_THROWS_AS(project(cam, {0, 0, -5}), NonPositiveDepth);
  CHECK_THROWS_AS(project(cam, {0, 0, 0}), NonPositiveDepth);
  CHECK_FALSE(try_project(cam, {0, 0, 1e-12}).has_value());
  CHECK_THROWS_AS(reprojection_error(cam, {0, 0, -1}, {0, 0}), NonPositiveDepth);
}

TEST_CASE("camera invariants") {
  Mat3 K = Mat3::Identity();
  K(0, 0) = K(1, 1) = 1000.0;
  Mat3 R = Mat3::Identity();
  CHECK_NOTHROW(CameraModel("a", K, {}, R, Vec3::Zero(), 10, 10));
  Mat3 bad = R;
  bad(0, 1) = 1e-6;
  CHECK_THROWS_AS(CameraModel("a", K, {}, bad, Vec3::Zero(), 10, 10), InvalidCamera);
  CHECK_THROWS_AS(CameraModel("a", K, {}, -R, Vec3::Zero(), 10, 10), InvalidCamera);  // det -1
  Mat3 K0 = K;
  K0(0, 0) = 0.0;
  CHECK_THROWS_AS(CameraModel("a", K0, {}, R, Vec3::Zero(), 10, 10), InvalidCamera);
  CHECK_THROWS_AS(CameraModel("a", K, {}, R, Vec3::Zero(), 0, 10), InvalidCamera);
}

TEST_CASE("undistort: identity without distortion") {
  const CameraModel cam = unit_camera();
  const Vec2 q = undistort(cam, {512.3, 77.0});
  CHECK(q.x() == doctest::Approx(512.3).epsilon(1e-15));
  CHECK(q.y() == doctest::Approx(77.0).epsilon(1e-15));
}

TEST_CASE("undistort: round trip with k1 = 0.1") {
  const CameraModel cam = unit_camera({0.1, 0, 0, 0});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-600, 600);
  for (int i = 0; i < 500; ++i) {
    const Vec3 p(u(rng), u(rng), 1000.0 + u(rng));
    const Vec2 ideal = project_ideal(cam, p);
    CHECK((undistort(cam, project(cam, p)) - ideal).norm() < 1e-6);
  }
}

TEST_CASE("undistort: k1 = -0.2 near the image corner against a dense root search") {
  Mat3 K = Mat3::Identity();
  K(0, 0) = K(1, 1) = 1000.0;
  K(0, 2) = 960.0;
  K(1, 2) = 540.0;
  const CameraModel cam("c", K, {-0.2, 0, 0, 0}, Mat3::Identity(), Vec3::Zero(), 1920, 1080);
  const Vec2 q(1700.0, 950.0);

  // Zooming grid search over ideal pixels minimising |distort(ideal) - q|.
  auto distort_px = [&](const Vec2& ideal) {
    const Vec2 xn((ideal.x() - 960.0) / 1000.0, (ideal.y() - 540.0) / 1000.0);
    const double r2 = xn.squaredNorm();
    return Vec2(1000.0 * xn.x() * (1 - 0.2 * r2) + 960.0, 1000.0 * xn.y() * (1 - 0.2 * r2) + 540.0);
  };
  Vec2 best = q;
  double half = 600.0;
  for (int level = 0; level < 40; ++level) {
    Vec2 centre = best;
    double best_err = (distort_px(best) - q).norm();
    for (int i = -20; i <= 20; ++i)
      for (int j = -20; j <= 20; ++j) {
        const Vec2 c = centre + Vec2(i, j) * (half / 20.0);
        const double e = (distort_px(c) - q).norm();
        if (e < best_err) {
          best_err = e;
          best = c;
        }
      }
    half *= 0.25;
  }
  REQUIRE((distort_px(best) - q).norm() < 1e-8);
  CHECK((undistort(cam, q) - best).norm() < 1e-6);
}

TEST_CASE("undistort: non-invertible input reports NoConvergence") {
  // Beyond the fold of 1 - 0.5 r^2 no ideal point maps this far out.
  const CameraModel cam = unit_camera({-0.5, 0, 0, 0});
  CHECK_THROWS_AS(undistort(cam, {3000.0, 3000.0}), NoConvergence);
  CHECK_FALSE(try_undistort(cam, {3000.0, 3000.0}).has_value());
}

TEST_CASE("triangulate_dlt: exact two-view recovery") {
  const CameraModel a = look_at("a", {0, 0, 0}, {0, 0, 500}, 1000.0);
  const CameraModel b = look_at("b", {500, 0, 500}, {0, 0, 500}, 1000.0);
  const Vec3 p(10, -20, 500);
  const Observation obs[] = {{&a, project(a, p)}, {&b, project(b, p)}};
  CHECK((triangulate_dlt(obs) - p).norm() < 1e-6);
}

TEST_CASE("triangulate_dlt: errors") {
  const CameraModel a = look_at("a", {0, 0, 0}, {0, 0, 500});
  const CameraModel a2 = look_at("a2", {0, 0, 0}, {30, 0, 500});
  const Vec3 p(10, -20, 500);
  const Observation one[] = {{&a, project(a, p)}};
  CHECK_THROWS_AS(triangulate_dlt(one), InsufficientViews);
  const Observation same_centre[] = {{&a, project(a, p)}, {&a2, project(a2, p)}};
  CHECK_THROWS_AS(triangulate_dlt(same_centre), DegenerateGeometry);
}

TEST_CASE("triangulate_dlt: invariant to homogeneous rescaling") {
  const CameraRig rig = ring_rig(4);
  const auto cams = pointers(rig);
  const Vec3 p(35, -70, 120);
  std::vector<Vec3> h, hs;
  const double scales[] = {0.001, 7.0, 1e4, 0.3};
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const Vec2 px = project_ideal(*cams[i], p) + Vec2(0.7 * i, -0.4 * i);
    h.emplace_back(px.x(), px.y(), 1.0);
    hs.push_back(scales[i] * h.back());
  }
  const Vec3 x1 = triangulate_dlt_homogeneous(cams, h);
  const Vec3 x2 = triangulate_dlt_homogeneous(cams, hs);
  CHECK((x1 - x2).norm() <= 1e-6 * x1.norm());
}

TEST_CASE("triangulate_dlt: noisy accuracy against a least-squares oracle") {
  const CameraRig rig = ring_rig(4);
  const auto cams = pointers(rig);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 2.0);
  std::uniform_real_distribution<double> u(-300, 300);
  std::vector<double> dlt_err, oracle_err;
  for (int t = 0; t < 10000; ++t) {
    const Vec3 p(u(rng), u(rng), 0.3 * u(rng) + 100.0);
    std::vector<Observation> obs;
    std::vector<Vec2> px;
    for (const auto* c : cams) {
      px.push_back(project(*c, p) + Vec2(noise(rng), noise(rng)));
      obs.push_back({c, px.back()});
    }
    dlt_err.push_back((triangulate_dlt(obs) - p).norm());
    oracle_err.push_back((oracle_triangulate(cams, px) - p).norm());
  }
  MESSAGE("DLT median " << median_of(dlt_err) << " mm, oracle median " << median_of(oracle_err));
  CHECK(median_of(dlt_err) <= 1.05 * median_of(oracle_err));
}

TEST_CASE("refine_point: recovers the exact point from a perturbed start") {
  const CameraRig rig = ring_rig(4, 3000, 2000, {-0.05, 0.01, 0, 0});
  const Vec3 p(80, 40, 150);
  std::vector<Observation> obs;
  for (const auto& c : rig.cameras) obs.push_back({&c, project(c, p)});
  const RefineResult r = refine_point(obs, p + Vec3(5, 5, 5));
  CHECK((r.point - p).norm() < 1e-6);
  CHECK(r.final_cost <= r.initial_cost);
  CHECK(r.converged);
}

TEST_CASE("refine_point: never increases the cost and beats DLT") {
  const CameraRig rig = ring_rig(4, 3000, 2000, {-0.05, 0.01, 0, 0});
  const auto cams = pointers(rig);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 3.0);
  std::uniform_real_distribution<double> u(-300, 300);
  for (int t = 0; t < 300; ++t) {
    const Vec3 p(u(rng), u(rng), 100.0 + 0.2 * u(rng));
    std::vector<Observation> obs;
    for (const auto* c : cams) obs.push_back({c, project(*c, p) + Vec2(noise(rng), noise(rng))});
    const Vec3 init = triangulate_dlt(obs);
    const RefineResult r = refine_point(obs, init);
    double dlt_sq = 0.0, ref_sq = 0.0;
    for (const auto& o : obs) {
      dlt_sq += std::pow(reprojection_error(*o.camera, init, o.pixel), 2);
      ref_sq += std::pow(reprojection_error(*o.camera, r.point, o.pixel), 2);
    }
    CHECK(r.final_cost <= r.initial_cost);
    CHECK(ref_sq <= dlt_sq + 1e-9);
    // Random far-off starts must not go uphill either.
    const RefineResult far = refine_point(obs, init + Vec3(u(rng), u(rng), 0.1 * u(rng)));
    CHECK(far.final_cost <= far.initial_cost);
  }
}

TEST_CASE("refine_point: agrees with a grid-search and polish oracle") {
  const CameraRig rig = ring_rig(4, 3000, 2000, {-0.05, 0.01, 0, 0});
  const auto cams = pointers(rig);
  const Vec3 p(-120, 60, 90);
  const Vec2 offsets[] = {{1.5, -2.0}, {-0.7, 2.2}, {2.4, 0.3}, {-1.9, -1.1}};
  std::vector<Observation> obs;
  std::vector<Vec2> px;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    px.push_back(project(*cams[i], p) + offsets[i]);
    obs.push_back({cams[i], px.back()});
  }
  const Vec3 init = triangulate_dlt(obs);
  const RefineResult r = refine_point(obs, init);

  // Zooming 3D grid around the DLT solution; every level shrinks the box 4x.
  Vec3 best = init;
  double best_cost = oracle_cost(cams, px, best);
  double half = 10.0;
  for (int level = 0; level < 30; ++level) {
    const Vec3 centre = best;
    for (int i = -6; i <= 6; ++i)
      for (int j = -6; j <= 6; ++j)
        for (int k = -6; k <= 6; ++k) {
          const Vec3 c = centre + Vec3(i, j, k) * (half / 6.0);
          const double cost = oracle_cost(cams, px, c);
          if (cost < best_cost) {
            best_cost = cost;
            best = c;
          }
        }
    half *= 0.25;
  }
  CHECK((r.point - best).norm() < 1e-3);
}

TEST_CASE("refine_point: round trip over the working volume") {
  const CameraRig rig = ring_rig(4, 3000, 2000, {-0.05, 0.01, 0, 0});
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1000, 1000), uz(0, 250);
  for (int t = 0; t < 1000; ++t) {
    const Vec3 p(u(rng), u(rng), uz(rng));
    std::vector<Observation> obs;
    for (const auto& c : rig.cameras) obs.push_back({&c, project(c, p)});
    const RefineResult r = refine_point(obs, triangulate_dlt(obs));
    CHECK((r.point - p).norm() < 1e-6);
  }
}

TEST_CASE("reprojection_error") {
  const CameraRig rig = ring_rig(2);
  const Vec3 p(1, 2, 3);
  const Vec2 q = project(rig[0], p);
  CHECK(reprojection_error(rig[0], p, q) == 0.0);
  CHECK(reprojection_error(rig[0], p, q + Vec2(3, 4)) == doctest::Approx(5.0));
  const Vec2 r(1234.5, 678.25);
  const Vec2 d = oracle_project(rig[1], p) - r;
  CHECK(reprojection_error(rig[1], p, r) == doctest::Approx(std::sqrt(d.x() * d.x() + d.y() * d.y())));
}

TEST_CASE("rays") {
  const CameraRig rig = ring_rig(3);
  const Vec3 p(50, -30, 100);
  const auto ra = back_project(rig[0], project(rig[0], p));
  const auto rb = back_project(rig[1], project(rig[1], p));
  REQUIRE(ra);
  REQUIRE(rb);
  CHECK(point_ray_distance(p, *ra) < 1e-9);
  CHECK(ray_distance(*ra, *rb) < 1e-9);
  CHECK(point_ray_distance(p + Vec3(0, 0, 10), *ra) > 1.0);
  // A point behind the origin is measured to the origin (half-line).
  const Ray r{Vec3::Zero(), Vec3::UnitX()};
  CHECK(point_ray_distance({-3, 4, 0}, r) == doctest::Approx(5.0));
  CHECK(point_ray_distance({3, 4, 0}, r) == doctest::Approx(4.0));
}

TEST_CASE("triangulate: never throws and reports failure") {
  const CameraRig rig = ring_rig(2);
  const Vec3 p(5, 5, 5);
  const Observation one[] = {{&rig[0], project(rig[0], p)}};
  CHECK_FALSE(triangulate(one).has_value());
  const Observation two[] = {{&rig[0], project(rig[0], p)}, {&rig[1], project(rig[1], p)}};
  const auto t = triangulate(two);
  REQUIRE(t);
  CHECK((t->point - p).norm() < 1e-6);
  CHECK(t->rms_reprojection_px < 1e-6);
}

}  // TEST_SUITE
