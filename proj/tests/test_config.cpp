#include <doctest.h>

#include "casdet/error.hpp"
#include "casdet/pipeline/config.hpp"

using namespace casdet;
using namespace casdet::pipeline;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults") {
  const TrainConfig c = parse_config("");
  CHECK(c.num_stages() == 2);
  REQUIRE(c.stages.size() == 2);
  CHECK(c.stages[0].t_fg == 0.5);
  CHECK(c.stages[0].t_bg == 0.4);
  CHECK(c.stages[1].t_fg == doctest::Approx(0.6));
  CHECK(c.stages[1].t_bg == doctest::Approx(0.5));
  CHECK(c.stages[0].lambda == 2.0);
  CHECK(c.stages[1].alpha == 1.0);
  CHECK(c.model.use_fcm);
  CHECK(c.inference.nms_threshold == 0.5);
  CHECK(c.inference.score_threshold == 0.05);
  CHECK(c.inference.top_k == 100);
  CHECK(c.inference.ensemble_mode == EnsembleMode::kAverage);
  CHECK(c.scene.image_size == 64);
}

TEST_CASE("parsing: comments, whitespace and stage keys") {
  const TrainConfig c = parse_config(
      "# comment\n"
      "  seed = 9   # trailing\n"
      "num_stages = 3\n"
      "stage.3.t_fg = 0.75\n"
      "stage.2.alpha = 0.5\n"
      "fcm = false\n"
      "ensemble_mode = last\n"
      "lr_steps = 3, 5\n");
  CHECK(c.seed == 9);
  CHECK(c.num_stages() == 3);
  CHECK(c.stages[2].t_fg == 0.75);
  CHECK(c.stages[2].t_bg == doctest::Approx(0.6));
  CHECK(c.stages[1].alpha == 0.5);
  CHECK_FALSE(c.model.use_fcm);
  CHECK(c.inference.ensemble_mode == EnsembleMode::kLast);
  CHECK(c.lr_steps == std::vector<int>{3, 5});
  // Order of num_stages relative to stage keys does not matter.
  CHECK(parse_config("stage.3.t_fg = 0.8\nnum_stages = 3\n").stages[2].t_fg == 0.8);
}

TEST_CASE("errors") {
  CHECK(error_of("bogus = 1\n").find("unknown config key 'bogus'") != std::string::npos);
  CHECK(error_of("stage.1.bogus = 1\n").find("unknown config key") != std::string::npos);
  CHECK(error_of("seed = 1\nseed = 2\n").find("repeats line 1") != std::string::npos);
  CHECK(error_of("seed 1\n").find("line 1") != std::string::npos);
  CHECK(error_of("seed =\n").find("empty") != std::string::npos);
  CHECK(error_of("num_stages = 1\nstage.2.t_fg = 0.6\n").find("stage 2") != std::string::npos);
  CHECK(error_of("stage.0.t_fg = 0.6\n") != "");
  CHECK(error_of("num_stages = 4\n") != "");
  CHECK(error_of("lr = abc\n").find("lr") != std::string::npos);
  CHECK(error_of("stage.1.t_bg = 0.7\n") != "");  // t_bg above t_fg
  CHECK(error_of("fcm = maybe\n") != "");
  CHECK(error_of("ensemble_mode = max\n") != "");
  CHECK(error_of("stage.1.delta_std = 1, 1, 1\n").find("4 values") != std::string::npos);
  CHECK(error_of("image_size = 60\n") != "");  // stride 16 does not divide it
  CHECK_THROWS_AS(load_config("/nonexistent/casdet.cfg"), ConfigError);
}

TEST_CASE("format/parse round trip") {
  TrainConfig c = parse_config(
      "seed = 123\nnum_stages = 3\nstage.2.t_fg = 0.65\nstage.3.lambda = 1.5\n"
      "lr = 0.0123456789\nhflip = true\nensemble_mode = last\nlr_steps = 4, 8\n"
      "stage.1.delta_std = 0.5, 0.5, 1, 1\n");
  const std::string text = format_config(c);
  const TrainConfig back = parse_config(text);
  CHECK(format_config(back) == text);
  CHECK(back.lr == c.lr);
  CHECK(back.stages[1].t_fg == 0.65);
  CHECK(back.model.delta_std == c.model.delta_std);
  CHECK(format_config(parse_config(format_config(default_config()))) == format_config(default_config()));
}
