#include "casdet/cli/commands.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "casdet/error.hpp"
#include "casdet/evaluation.hpp"
#include "casdet/numerics/checkpoint.hpp"
#include "casdet/pipeline/config.hpp"
#include "casdet/pipeline/scene.hpp"
#include "casdet/pipeline/trainer.hpp"
#include "casdet/verify/gradcheck_suite.hpp"
#include "casdet/verify/selftest.hpp"

namespace casdet::cli {

namespace fs = std::filesystem;

namespace {

// Outputs are staged in memory and written together at the end.
using Files = std::map<std::string, std::string>;

void write_outputs(const fs::path& dir, const Files& files) {
  if (dir.empty()) return;
  fs::create_directories(dir);
  for (const auto& [name, content] : files) {
    std::ofstream f(dir / name, std::ios::binary);
    f << content;
    if (!f) throw Error("cannot write " + (dir / name).string());
  }
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

pipeline::TrainConfig resolve_config(const CommandOptions& opts) {
  if (opts.config.empty()) throw ConfigError("--config is required");
  pipeline::TrainConfig cfg = pipeline::load_config(opts.config);
  if (opts.seed) cfg.seed = *opts.seed;
  cfg.validate();
  return cfg;
}

model::CascadeParams load_model(const pipeline::TrainConfig& cfg, const fs::path& checkpoint) {
  if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
  model::CascadeParams params = model::init_params(cfg.model, 0);
  numerics::load_checkpoint(checkpoint, params.parameters());
  return params;
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace

int run_train(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const pipeline::TrainConfig cfg = resolve_config(opts);
    if (opts.out.empty()) throw ConfigError("--out is required");
    const auto result = pipeline::train(cfg, [&](const pipeline::EpochLog& log) {
      out << "epoch " << log.epoch << "/" << cfg.epochs << "  loss " << fixed(log.mean.total)
          << "  val_ap " << fixed(log.val_ap) << "\n";
      out.flush();
    });
    Files files;
    files[kMetricsFile] = pipeline::metrics_csv(result.log);
    files[kConfigFile] = pipeline::format_config(cfg);
    std::ostringstream ckpt;
    std::vector<numerics::NamedTensor> tensors;
    for (const auto& p : result.params.parameters()) tensors.push_back({p.name, p.var.value()});
    numerics::write_checkpoint(ckpt, tensors);
    files[kCheckpointFile] = ckpt.str();
    write_outputs(opts.out, files);
    out << "wrote " << (opts.out / kCheckpointFile).string() << " and "
        << (opts.out / kMetricsFile).string() << "\n";
    return static_cast<int>(kOk);
  });
}

int run_eval(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const pipeline::TrainConfig cfg = resolve_config(opts);
    const model::CascadeParams params = load_model(cfg, opts.checkpoint);
    const auto anchors = geometry::generate_anchors(cfg.image_size(), cfg.anchors);
    const auto scenes =
        pipeline::make_scenes(cfg.scene, cfg.seed, pipeline::kValStream, cfg.val_scenes);
    const auto report = pipeline::evaluate(params, anchors, scenes, cfg.inference);
    const char* ensemble =
        cfg.inference.ensemble_mode == pipeline::EnsembleMode::kAverage ? "average" : "last";
    const char* fcm = cfg.model.num_stages > 1 && cfg.model.use_fcm ? "on" : "off";

    out << "stages  fcm  ensemble  AP      AP50    AP60    AP70    AP80    AP90\n";
    char line[256];
    std::snprintf(line, sizeof(line), "%-6d  %-3s  %-8s  %s  %s  %s  %s  %s  %s\n",
                  cfg.model.num_stages, fcm, ensemble, fixed(report.ap).c_str(),
                  fixed(report.ap_at.at(50)).c_str(), fixed(report.ap_at.at(60)).c_str(),
                  fixed(report.ap_at.at(70)).c_str(), fixed(report.ap_at.at(80)).c_str(),
                  fixed(report.ap_at.at(90)).c_str());
    out << line;

    std::ostringstream csv;
    csv << "stages,fcm,ensemble,ap,ap50,ap60,ap70,ap80,ap90\n"
        << cfg.model.num_stages << "," << fcm << "," << ensemble << "," << full(report.ap);
    for (int t : {50, 60, 70, 80, 90}) csv << "," << full(report.ap_at.at(t));
    csv << "\n";
    write_outputs(opts.out, {{kEvalFile, csv.str()}});
    return static_cast<int>(kOk);
  });
}

int run_analyze(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const pipeline::TrainConfig cfg = resolve_config(opts);
    const model::CascadeParams params = load_model(cfg, opts.checkpoint);
    const auto anchors = geometry::generate_anchors(cfg.image_size(), cfg.anchors);
    const auto scenes =
        pipeline::make_scenes(cfg.scene, cfg.seed, pipeline::kValStream, cfg.val_scenes);
    const auto report = evaluation::correlation_report(params, anchors, scenes, cfg.inference);

    Files files;
    std::ostringstream summary;
    summary << "stage,pairs,pearson_r,zero_variance,low_sample";
    for (int b = 0; b < 10; ++b) summary << ",bin" << b << "_mean_conf";
    summary << "\n";
    out << "stage  pairs  pearson_r  flags\n";
    for (const auto& s : report.stages) {
      std::ostringstream pairs;
      pairs << "stage,confidence,iou\n";
      for (const auto& p : s.pairs) {
        pairs << s.stage << "," << full(p.confidence) << "," << full(p.iou) << "\n";
      }
      files["correlation_stage" + std::to_string(s.stage) + ".csv"] = pairs.str();
      summary << s.stage << "," << s.pairs.size() << "," << full(s.pearson_r) << ","
              << s.zero_variance << "," << s.low_sample;
      for (double m : s.binned_mean_confidence) summary << "," << full(m);
      summary << "\n";
      std::string flags;
      if (s.zero_variance) flags += " zero-variance";
      if (s.low_sample) flags += " low-sample";
      char line[128];
      std::snprintf(line, sizeof(line), "%-5d  %-5zu  %-9s %s\n", s.stage, s.pairs.size(),
                    fixed(s.pearson_r).c_str(), flags.empty() ? "-" : flags.c_str() + 1);
      out << line;
    }
    files[kCorrelationSummaryFile] = summary.str();
    write_outputs(opts.out, files);
    return static_cast<int>(kOk);
  });
}

int run_gradcheck(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.instances < 1) throw ConfigError("--instances must be >= 1");
    verify::GradCheckOptions go;
    go.instances = opts.instances;
    go.inject_fault = opts.inject_fault;
    if (opts.seed) go.seed = *opts.seed;
    const auto reports = verify::run_gradcheck_suite(go);
    bool all = true;
    std::ostringstream csv;
    csv << "op,max_rel_error,tolerance,passed\n";
    out << "op               max_rel_error  tolerance  result\n";
    for (const auto& r : reports) {
      char line[160];
      std::snprintf(line, sizeof(line), "%-16s %-13.3e  %-9.0e  %s\n", r.op_name.c_str(),
                    r.max_rel_error, r.tolerance, r.passed ? "pass" : "FAIL");
      out << line;
      csv << r.op_name << "," << full(r.max_rel_error) << "," << full(r.tolerance) << ","
          << (r.passed ? "true" : "false") << "\n";
      all = all && r.passed;
    }
    write_outputs(opts.out, {{kGradcheckFile, csv.str()}});
    return static_cast<int>(all ? kOk : kVerificationFailure);
  });
}

int run_selftest(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto results = verify::run_selftest(opts.seed.value_or(0));
    bool all = true;
    std::ostringstream csv;
    csv << "check,passed,detail\n";
    for (const auto& r : results) {
      out << (r.passed ? "pass  " : "FAIL  ") << r.name << ": " << r.detail << "\n";
      csv << '"' << r.name << "\"," << (r.passed ? "true" : "false") << ",\"" << r.detail
          << "\"\n";
      all = all && r.passed;
    }
    write_outputs(opts.out, {{kSelftestFile, csv.str()}});
    return static_cast<int>(all ? kOk : kVerificationFailure);
  });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cascaded single-stage detector: train, evaluate, analyze, verify"};
  app.require_subcommand(1);
  CommandOptions opts;
  std::uint64_t seed = 0;

  auto add_seed_out = [&](CLI::App* sub, bool needs_out) {
    auto* o = sub->add_option("--out", opts.out, "output directory");
    if (needs_out) o->required();
    sub->add_option("--seed", seed, "override the seed")->each([&](const std::string& v) {
      opts.seed = std::stoull(v);
    });
  };
  auto add_model_io = [&](CLI::App* sub, bool needs_checkpoint) {
    sub->add_option("--config", opts.config, "key = value configuration file")->required();
    auto* k = sub->add_option("--checkpoint", opts.checkpoint, "model checkpoint");
    if (needs_checkpoint) k->required();
  };
  auto* train = app.add_subcommand("train", "train a model; writes checkpoint and metrics");
  add_model_io(train, false);
  add_seed_out(train, true);
  auto* eval = app.add_subcommand("eval", "COCO-style AP table on the validation scenes");
  add_model_io(eval, true);
  add_seed_out(eval, false);
  auto* analyze = app.add_subcommand("analyze", "confidence vs IoU correlation per stage");
  add_model_io(analyze, true);
  add_seed_out(analyze, false);
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op");
  add_seed_out(gradcheck, false);
  gradcheck->add_option("--instances", opts.instances, "random instances per op");
  gradcheck->add_flag("--inject-fault", opts.inject_fault,
                      "double every backward pass (the check must fail)");
  auto* selftest = app.add_subcommand("selftest", "oracle and property suite");
  add_seed_out(selftest, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? static_cast<int>(kOk) : static_cast<int>(kUsageError);
  }
  if (train->parsed()) return run_train(opts, out, err);
  if (eval->parsed()) return run_eval(opts, out, err);
  if (analyze->parsed()) return run_analyze(opts, out, err);
  if (gradcheck->parsed()) return run_gradcheck(opts, out, err);
  return run_selftest(opts, out, err);
}

}  // namespace casdet::cli
