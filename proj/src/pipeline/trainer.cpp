#include "casdet/pipeline/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "casdet/error.hpp"
#include "casdet/numerics/ops.hpp"
#include "casdet/numerics/optim.hpp"
#include "casdet/pipeline/inference.hpp"

namespace casdet::pipeline {

namespace {

[[noreturn]] void report_divergence(const numerics::Var& loss,
                                    std::span<const numerics::Parameter> params, int epoch,
                                    std::uint64_t scene_seed) {
  std::map<const numerics::Node*, std::string> names;
  for (const auto& p : params) names[p.var.node()] = p.name;
  std::string where = "loss";
  for (numerics::Node* n : numerics::topological_order(loss)) {
    if (n->value.all_finite()) continue;
    auto it = names.find(n);
    where = it != names.end() ? "parameter '" + it->second + "'" : "output of op '" + n->op + "'";
    break;
  }
  throw DivergenceError("non-finite loss in epoch " + std::to_string(epoch) + " (scene seed " +
                        std::to_string(scene_seed) + "); first non-finite tensor: " + where);
}

double scheduled_lr(const TrainConfig& cfg, int epoch, long iteration) {
  double lr = cfg.lr;
  for (int step : cfg.lr_steps) {
    if (epoch > step) lr *= 0.1;
  }
  if (iteration < cfg.warmup_iters) {
    const double f = static_cast<double>(iteration + 1) / cfg.warmup_iters;
    lr *= 0.1 + 0.9 * f;
  }
  return lr;
}

}  // namespace

namespace {

ImageLoss image_loss_impl(const SyntheticScene& scene, const model::CascadeParams& params,
                          const geometry::AnchorGrid& anchors, const TrainConfig& cfg,
                          const std::vector<assignment::AssignmentResult>* frozen) {
  model::ForwardOptions opts{cfg.inference.clip_refined_boxes, cfg.image_size()};
  const auto out = model::cascade_forward(numerics::Var::constant(scene.image), params, anchors,
                                          cfg.num_stages(), opts);
  if (frozen && frozen->size() != static_cast<std::size_t>(cfg.num_stages())) {
    throw Error("image_loss: " + std::to_string(frozen->size()) + " frozen assignments for " +
                std::to_string(cfg.num_stages()) + " stages");
  }
  ImageLoss result;
  std::vector<losses::StageLoss> stage_losses;
  for (int i = 0; i < cfg.num_stages(); ++i) {
    const auto& so = out.stages[static_cast<std::size_t>(i)];
    result.assignments.push_back(frozen ? (*frozen)[i]
                                        : assignment::assign(so.input_boxes, scene.gts,
                                                             cfg.stages[i]));
    stage_losses.push_back(losses::stage_loss(so.cls_logits, so.reg_deltas,
                                              result.assignments.back(), cfg.stages[i], cfg.loss,
                                              cfg.model.stage_delta_std(i)));
  }
  result.loss = losses::total_loss(stage_losses, cfg.stages);
  return result;
}

}  // namespace

ImageLoss image_loss(const SyntheticScene& scene, const model::CascadeParams& params,
                     const geometry::AnchorGrid& anchors, const TrainConfig& cfg) {
  return image_loss_impl(scene, params, anchors, cfg, nullptr);
}

ImageLoss image_loss(const SyntheticScene& scene, const model::CascadeParams& params,
                     const geometry::AnchorGrid& anchors, const TrainConfig& cfg,
                     const std::vector<assignment::AssignmentResult>& frozen) {
  return image_loss_impl(scene, params, anchors, cfg, &frozen);
}

evaluation::APReport evaluate(const model::CascadeParams& params,
                              const geometry::AnchorGrid& anchors,
                              const std::vector<SyntheticScene>& scenes,
                              const InferenceConfig& cfg) {
  std::vector<evaluation::ImageDetections> dets;
  std::vector<evaluation::ImageGroundTruth> gts;
  dets.reserve(scenes.size());
  gts.reserve(scenes.size());
  for (const auto& s : scenes) {
    dets.push_back(infer(s.image, params, anchors, cfg));
    gts.push_back(s.gts);
  }
  return evaluation::coco_ap(dets, gts);
}

TrainResult train(const TrainConfig& cfg, const std::vector<SyntheticScene>& train_set,
                  const std::vector<SyntheticScene>& val_set, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  const auto anchors = geometry::generate_anchors(cfg.image_size(), cfg.anchors);
  TrainResult result;
  result.params = model::init_params(cfg.model, derive_seed(cfg.seed, kInitStream, 0));
  const auto params = result.params.parameters();
  for (const auto& p : params) (void)p.var.node()->value.grad();

  numerics::Sgd opt(cfg.lr, cfg.momentum, cfg.weight_decay);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  long iteration = 0;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t num_stages = static_cast<std::size_t>(cfg.num_stages());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
      std::swap(order[i - 1], order[j]);
    }
    EpochLog log;
    log.epoch = epoch;
    log.mean.per_stage.assign(num_stages, {});
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const SyntheticScene& src = train_set[order[b]];
        const bool flip = cfg.hflip && std::uniform_int_distribution<int>(0, 1)(rng) == 1;
        const SyntheticScene scene = flip ? hflip(src) : src;
        ImageLoss il = image_loss(scene, result.params, anchors, cfg);
        const auto& br = il.loss.breakdown;
        if (!std::isfinite(br.total)) report_divergence(il.loss.total, params, epoch, src.seed);
        numerics::backward(numerics::scale(il.loss.total, inv));
        for (std::size_t s = 0; s < num_stages; ++s) {
          log.mean.per_stage[s].cls_loss += br.per_stage[s].cls_loss;
          log.mean.per_stage[s].loc_loss += br.per_stage[s].loc_loss;
        }
        log.mean.total += br.total;
      }
      const double norm = numerics::grad_norm(params);
      if (!std::isfinite(norm)) {
        std::string name = "?";
        for (const auto& p : params) {
          bool bad = false;
          for (double g : p.var.value().grad()) bad = bad || !std::isfinite(g);
          if (bad) {
            name = p.name;
            break;
          }
        }
        throw DivergenceError("non-finite gradient in epoch " + std::to_string(epoch) +
                              "; first non-finite tensor: gradient of '" + name + "'");
      }
      if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) {
        const double f = cfg.grad_clip / norm;
        for (const auto& p : params) {
          for (double& g : p.var.node()->value.grad()) g *= f;
        }
      }
      opt.set_lr(scheduled_lr(cfg, epoch, iteration));
      opt.step(params);
      ++iteration;
    }
    const double n = static_cast<double>(order.size());
    for (auto& s : log.mean.per_stage) {
      s.cls_loss /= n;
      s.loc_loss /= n;
    }
    log.mean.total /= n;
    log.val_ap = val_set.empty() ? 0.0 : evaluate(result.params, anchors, val_set, cfg.inference).ap;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const auto train_set = make_scenes(cfg.scene, cfg.seed, kTrainStream, cfg.train_scenes);
  const auto val_set = make_scenes(cfg.scene, cfg.seed, kValStream, cfg.val_scenes);
  return train(cfg, train_set, val_set, on_epoch);
}

std::string metrics_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,stage,cls_loss,loc_loss,total,val_ap\n";
  char buf[256];
  for (const auto& e : log) {
    for (std::size_t s = 0; s < e.mean.per_stage.size(); ++s) {
      std::snprintf(buf, sizeof(buf), "%d,%zu,%.10g,%.10g,%.10g,%.10g\n", e.epoch, s + 1,
                    e.mean.per_stage[s].cls_loss, e.mean.per_stage[s].loc_loss, e.mean.total,
                    e.val_ap);
      os << buf;
    }
  }
  return os.str();
}

}  // namespace casdet::pipeline
