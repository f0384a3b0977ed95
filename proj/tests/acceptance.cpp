// One PASS/FAIL line per acceptance criterion; exit code 0 only if all pass.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "casdet/evaluation.hpp"
#include "casdet/numerics/checkpoint.hpp"
#include "casdet/pipeline/config.hpp"
#include "casdet/pipeline/inference.hpp"
#include "casdet/pipeline/scene.hpp"
#include "casdet/pipeline/trainer.hpp"
#include "casdet/verify/gradcheck_suite.hpp"
#include "casdet/verify/oracles.hpp"
#include "casdet/verify/selftest.hpp"

using namespace casdet;

namespace {

std::map<int, std::string> lines;
int failures = 0;
std::ostringstream runs;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
  lines[id] = std::string(ok ? "PASS" : "FAIL") + "  criterion " + std::to_string(id) + ": " + what + " (" +
              detail + ")";
  std::printf("%s\n", lines[id].c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

void criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();
  const auto reports = verify::run_gradcheck_suite({});
  const double secs = seconds_since(start);
  bool ok = secs < 120.0;
  double worst = 0.0;
  std::string worst_op;
  for (const auto& r : reports) {
    ok = ok && r.passed;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_op = r.op_name;
    }
  }
  report(1, ok, "finite-difference gradients, 20 instances per op, tol 1e-4",
         std::to_string(reports.size()) + " ops, worst " + fmt("%.2e", worst) + " (" + worst_op + "), " +
             fmt("%.1f", secs) + " s");
}

void criterion_checks(int id, const std::string& what, const std::vector<verify::CheckResult>& checks) {
  bool ok = true;
  std::string detail;
  for (const auto& c : checks) {
    ok = ok && c.passed;
    if (!detail.empty()) detail += "; ";
    detail += c.name + ": " + c.detail;
  }
  report(id, ok, what, detail);
}

struct Run {
  evaluation::APReport ap;
  std::vector<double> pearson;
};

Run train_and_score(pipeline::TrainConfig cfg, std::uint64_t seed, int stages, bool fcm) {
  cfg.seed = seed;
  cfg.model.num_stages = stages;
  cfg.model.use_fcm = fcm;
  cfg.stages.resize(static_cast<std::size_t>(stages));
  if (!cfg.model.delta_std.empty()) cfg.model.delta_std.resize(static_cast<std::size_t>(stages));
  const auto start = std::chrono::steady_clock::now();
  const auto result = pipeline::train(cfg);
  const auto anchors = geometry::generate_anchors(cfg.image_size(), cfg.anchors);
  const auto val = pipeline::make_scenes(cfg.scene, cfg.seed, pipeline::kValStream, cfg.val_scenes);
  Run run;
  run.ap = pipeline::evaluate(result.params, anchors, val, cfg.inference);
  for (const auto& s : evaluation::correlation_report(result.params, anchors, val, cfg.inference).stages) {
    run.pearson.push_back(s.pearson_r);
  }
  std::string line = "  seed " + std::to_string(seed) + "  stages " + std::to_string(stages) + "  fcm " +
                     (fcm ? "on " : "off") + fmt("  AP %.4f", run.ap.ap) + fmt("  AP50 %.4f", run.ap.ap_at.at(50)) +
                     fmt("  AP80 %.4f", run.ap.ap_at.at(80)) + fmt("  AP90 %.4f", run.ap.ap_at.at(90)) + "  r";
  for (double r : run.pearson) line += fmt(" %.4f", r);
  line += fmt("  (%.0f s)", seconds_since(start));
  std::printf("%s\n", line.c_str());
  runs << line << "\n";
  std::fflush(stdout);
  return run;
}

void criteria_directional(const pipeline::TrainConfig& cfg) {
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  int wins_5a = 0, wins_5b = 0, wins_6 = 0;
  std::ostringstream d5a, d5b, d6;
  for (std::uint64_t seed : seeds) {
    const Run one = train_and_score(cfg, seed, 1, false);
    const Run two = train_and_score(cfg, seed, 2, true);
    const Run nofcm = train_and_score(cfg, seed, 2, false);
    const bool a = two.ap.ap_at.at(80) > one.ap.ap_at.at(80) && two.ap.ap_at.at(90) > one.ap.ap_at.at(90);
    const bool b = two.ap.ap > nofcm.ap.ap;
    const bool c = two.pearson.at(1) > two.pearson.at(0);
    wins_5a += a;
    wins_5b += b;
    wins_6 += c;
    d5a << (seed > 1 ? ", " : "") << "seed " << seed << (a ? " yes" : " no");
    d5b << (seed > 1 ? ", " : "") << "seed " << seed << ' ' << fmt("%.4f", two.ap.ap) << " vs "
        << fmt("%.4f", nofcm.ap.ap);
    d6 << (seed > 1 ? ", " : "") << "seed " << seed << " r2 " << fmt("%.4f", two.pearson.at(1)) << " vs r1 "
       << fmt("%.4f", two.pearson.at(0));
  }
  report(5, wins_5a >= 2 && wins_5b >= 2,
         "(a) 2-stage+FCM beats 1-stage at AP80 and AP90, (b) FCM beats no-FCM in AP; >=2 of 3 seeds",
         "a: " + d5a.str() + "; b: " + d5b.str());
  report(6, wins_6 >= 2, "stage-2 Pearson r exceeds stage-1 in >=2 of 3 seeds", d6.str());
}

void criterion_degeneracy(pipeline::TrainConfig cfg) {
  cfg.model.num_stages = 1;
  cfg.stages.resize(1);
  cfg.model.delta_std.clear();
  cfg.train_scenes = 40;
  cfg.val_scenes = 10;
  cfg.epochs = 2;
  const auto result = pipeline::train(cfg);
  bool no_fcm = true;
  for (const auto& p : result.params.parameters()) no_fcm = no_fcm && p.name.find("fcm") == std::string::npos;
  const auto anchors = geometry::generate_anchors(cfg.image_size(), cfg.anchors);
  const auto scenes = pipeline::make_scenes(cfg.scene, cfg.seed, pipeline::kValStream, cfg.val_scenes);
  bool identical = true;
  std::size_t compared = 0;
  for (auto mode : {pipeline::EnsembleMode::kAverage, pipeline::EnsembleMode::kLast}) {
    auto inf = cfg.inference;
    inf.ensemble_mode = mode;
    // A briefly trained model scores below the default threshold; keep every anchor.
    inf.score_threshold = 0.0;
    for (const auto& s : scenes) {
      const auto got = pipeline::infer(s.image, result.params, anchors, inf);
      const auto want = verify::reference_single_stage(s.image, result.params, anchors, inf);
      identical = identical && got.size() == want.size();
      for (std::size_t i = 0; identical && i < got.size(); ++i) {
        identical = got[i].box == want[i].box && got[i].class_id == want[i].class_id &&
                    got[i].score == want[i].score;
      }
      compared += got.size();
    }
  }
  report(7, no_fcm && identical && compared > 0, "num_stages=1 is a plain single-stage detector",
         std::string(no_fcm ? "no FCM tensors" : "FCM tensors present") + ", " + std::to_string(compared) +
             " detections bit-identical to the reference in both ensemble modes: " +
             (identical ? "yes" : "no"));
}

void criterion_determinism(pipeline::TrainConfig cfg) {
  cfg.train_scenes = 60;
  cfg.val_scenes = 20;
  cfg.epochs = 3;
  auto once = [&] {
    const auto r = pipeline::train(cfg);
    std::ostringstream ckpt;
    std::vector<numerics::NamedTensor> tensors;
    for (const auto& p : r.params.parameters()) tensors.push_back({p.name, p.var.value()});
    numerics::write_checkpoint(ckpt, tensors);
    return std::make_pair(pipeline::metrics_csv(r.log), ckpt.str());
  };
  const auto a = once();
  const auto b = once();
  report(8, a == b, "identical config and seed give byte-identical metrics CSV and checkpoint",
         std::to_string(a.first.size()) + " CSV bytes, " + std::to_string(a.second.size()) +
             " checkpoint bytes");
}

}  // namespace

int main() {
  const pipeline::TrainConfig cfg = pipeline::load_config(CASDET_DEFAULT_CONFIG);
  criterion_gradients();
  criterion_checks(2, "zero-offset FCM equals conv2d to 1e-12", {verify::check_zero_offset_fcm(50)});
  criterion_checks(3, "nms, assign and AP match independent oracles",
                   {verify::check_nms_oracle(500), verify::check_assign_oracle(500), verify::check_ap_oracle(500)});
  criterion_checks(4, "box algebra round trip and sequential decode",
                   {verify::check_box_roundtrip(10000), verify::check_sequential_decode()});
  criterion_degeneracy(cfg);
  criterion_determinism(cfg);
  criteria_directional(cfg);
  std::ostringstream summary;
  for (const auto& [id, line] : lines) summary << line << "\n";
  summary << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAIL") << "\n";
  std::printf("\nsummary\n%s", summary.str().c_str());
  // ctest hides the output of passing tests, so keep a copy next to the binary.
  std::ofstream(CASDET_REPORT_FILE) << runs.str() << summary.str();
  return failures == 0 ? 0 : 1;
}
