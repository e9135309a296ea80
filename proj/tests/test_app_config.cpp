#include <doctest.h>

#include <string>

#include "avm/app/config.hpp"
#include "avm/errors.hpp"

using namespace avm;
using namespace avm::app;

namespace {

std::string error_of(const std::string& json) {
  try {
    parse_config(json);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("empty object gives the defaults") {
  const RunConfig c = parse_config("{}");
  const RunConfig d;
  CHECK(dump_config(c) == dump_config(d));
  CHECK(c.seed == 1);
  CHECK(c.sim.world_template == "loop-corridor");
}

TEST_CASE("partial override keeps the rest") {
  const RunConfig c = parse_config(R"({"seed": 7, "sim": {"template": "grid-garage", "laps": 2.0},
                                       "backend": {"preintegration": {"common_scale_sigma": 0.0}}})");
  CHECK(c.seed == 7);
  CHECK(c.sim.world_template == "grid-garage");
  CHECK(c.sim.laps == 2.0);
  CHECK(c.backend.preintegration.common_scale_sigma == 0.0);
  CHECK(c.backend.preintegration.differential_scale_sigma == PreintegrationNoise{}.differential_scale_sigma);
  CHECK(c.tracking.refine_radius == TrackingConfig{}.refine_radius);
}

TEST_CASE("round trip through dump") {
  RunConfig c;
  c.seed = 42;
  c.tracking.degeneracy_ratio = 0.05;
  c.spq.weights = LabelWeights({1.0, 1.0, 2.0, 5.0});
  c.landmarks = {"A", "C"};
  c.backend.optimizer.huber = true;
  const std::string once = dump_config(c);
  const RunConfig back = parse_config(once);
  CHECK(dump_config(back) == once);
  CHECK(back.landmarks == c.landmarks);
  CHECK(back.spq.weights.values() == c.spq.weights.values());
}

TEST_CASE("unknown keys are rejected with their path") {
  CHECK(error_of(R"({"sede": 1})").find("sede") != std::string::npos);
  const std::string nested = error_of(R"({"tracking": {"icp": {"radius": 0.3}}})");
  CHECK(nested.find("tracking.icp.radius") != std::string::npos);
}

TEST_CASE("type mismatches are rejected with their path") {
  CHECK(error_of(R"({"seed": "one"})").find("seed") != std::string::npos);
  CHECK(error_of(R"({"sim": {"laps": true}})").find("sim.laps") != std::string::npos);
  CHECK(error_of(R"({"backend": {"kinematic_edges": 1}})").find("backend.kinematic_edges") != std::string::npos);
  CHECK(error_of(R"({"landmarks": "A"})").find("landmarks") != std::string::npos);
  CHECK_FALSE(error_of("[1, 2]").empty());
  CHECK_FALSE(error_of("{ not json").empty());
}

TEST_CASE("out of range values fail validation") {
  CHECK_FALSE(error_of(R"({"sim": {"template": "moon-base"}})").empty());
  CHECK_FALSE(error_of(R"({"sim": {"laps": 0}})").empty());
  CHECK_FALSE(error_of(R"({"tracking": {"degeneracy_ratio": 1.5}})").empty());
  CHECK_FALSE(error_of(R"({"backend": {"information_condition": 0.5}})").empty());
  CHECK_FALSE(error_of(R"({"tracking": {"min_inlier_fraction": -0.1}})").empty());
}

TEST_CASE("visual-only turns off the kinematic edges and the semantic gate") {
  const RunConfig v = visual_only(RunConfig{});
  CHECK_FALSE(v.backend.kinematic_edges);
  CHECK_FALSE(v.backend.use_spq);
  CHECK(v.backend.loop_closure);
  CHECK(v.backend.optimize);
}
