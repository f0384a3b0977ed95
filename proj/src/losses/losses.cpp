#include "casdet/losses.hpp"

#include <cmath>
#include <string>

#include "casdet/error.hpp"
#include "casdet/numerics/ops.hpp"

namespace casdet::losses {

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var focal_loss(const Var& logits, std::span<const int> labels, double alpha,
               double gamma) {
  const auto& shape = logits.shape();
  if (shape.size() != 2) {
    throw DimensionError("focal_loss logits must be [N, num_classes], got " +
                         numerics::shape_to_string(shape));
  }
  const std::size_t n = shape[0];
  const std::size_t k = shape[1];
  if (labels.size() != n) {
    throw DimensionError("focal_loss has " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " logit rows");
  }
  std::size_t num_fg = 0;
  for (int l : labels) {
    if (l >= static_cast<int>(k)) {
      throw Error("focal_loss label " + std::to_string(l) +
                  " out of range for " + std::to_string(k) + " classes");
    }
    if (l < assignment::kIgnore) {
      throw Error("focal_loss label " + std::to_string(l) + " is not valid");
    }
    if (l >= 0) ++num_fg;
  }
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, num_fg));
  auto z = logits.value().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == assignment::kIgnore) continue;
    for (std::size_t c = 0; c < k; ++c) {
      const double x = z[i * k + c];
      const double p = sigmoid(x);
      if (labels[i] == static_cast<int>(c)) {
        // -log p = softplus(-x)
        acc += alpha * std::pow(1.0 - p, gamma) * softplus(-x);
      } else {
        acc += (1.0 - alpha) * std::pow(p, gamma) * softplus(x);
      }
    }
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return numerics::make_result(
      "focal_loss", numerics::Tensor::scalar(acc * norm), {logits},
      [lab = std::move(lab), n, k, norm, alpha, gamma](numerics::Node& self) {
        const double g = self.value.grad()[0] * norm;
        numerics::Node& in = *self.inputs[0];
        auto z = in.value.data();
        auto gz = in.value.grad();
        for (std::size_t i = 0; i < n; ++i) {
          if (lab[i] == assignment::kIgnore) continue;
          for (std::size_t c = 0; c < k; ++c) {
            const double x = z[i * k + c];
            const double p = sigmoid(x);
            double d;
            if (lab[i] == static_cast<int>(c)) {
              // d/dx [-a (1-p)^g log p] = a (1-p)^g (g p log p - (1-p))
              d = alpha * std::pow(1.0 - p, gamma) *
                  (gamma * p * (-softplus(-x)) - (1.0 - p));
            } else {
              // d/dx [-(1-a) p^g log(1-p)] = (1-a) p^g (p - g (1-p) log(1-p))
              d = (1.0 - alpha) * std::pow(p, gamma) *
                  (p - gamma * (1.0 - p) * (-softplus(x)));
            }
            gz[i * k + c] += g * d;
          }
        }
      });
}

Var smooth_l1(const Var& pred,
              std::span<const std::optional<geometry::Deltas>> targets,
              double beta) {
  const auto& shape = pred.shape();
  if (shape.size() != 2 || shape[1] != 4) {
    throw DimensionError("smooth_l1 predictions must be [N, 4], got " +
                         numerics::shape_to_string(shape));
  }
  const std::size_t n = shape[0];
  if (targets.size() != n) {
    throw DimensionError("smooth_l1 has " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " rows");
  }
  std::size_t num_fg = 0;
  for (const auto& t : targets) num_fg += t.has_value() ? 1 : 0;
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, num_fg));
  auto p = pred.value().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!targets[i]) continue;
    for (std::size_t j = 0; j < 4; ++j) {
      const double d = std::abs(p[i * 4 + j] - (*targets[i])[j]);
      acc += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
    }
  }
  std::vector<std::optional<geometry::Deltas>> tg(targets.begin(), targets.end());
  return numerics::make_result(
      "smooth_l1", numerics::Tensor::scalar(acc * norm), {pred},
      [tg = std::move(tg), n, norm, beta](numerics::Node& self) {
        const double g = self.value.grad()[0] * norm;
        numerics::Node& in = *self.inputs[0];
        auto p = in.value.data();
        auto gp = in.value.grad();
        for (std::size_t i = 0; i < n; ++i) {
          if (!tg[i]) continue;
          for (std::size_t j = 0; j < 4; ++j) {
            const double d = p[i * 4 + j] - (*tg[i])[j];
            double slope;
            if (std::abs(d) < beta) {
              slope = d / beta;
            } else {
              slope = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            }
            gp[i * 4 + j] += g * slope;
          }
        }
      });
}

StageLoss stage_loss(const Var& cls_logits, const Var& reg_preds,
                     const assignment::AssignmentResult& a,
                     const assignment::StageConfig& cfg,
                     const LossSettings& settings,
                     const geometry::Deltas& target_std) {
  cfg.validate();
  StageLoss out;
  out.cls = focal_loss(cls_logits, a.labels, settings.focal_alpha,
                       settings.focal_gamma);
  std::vector<std::optional<geometry::Deltas>> targets = a.reg_targets;
  for (auto& t : targets) {
    if (!t) continue;
    for (int j = 0; j < 4; ++j) (*t)[j] /= target_std[j];
  }
  out.loc = smooth_l1(reg_preds, targets, settings.smooth_l1_beta);
  const Var terms[] = {out.cls, out.loc};
  const double weights[] = {1.0, cfg.lambda};
  out.combined = numerics::weighted_sum(terms, weights);
  return out;
}

CascadeLoss total_loss(std::span<const StageLoss> stages,
                       std::span<const assignment::StageConfig> cfgs) {
  if (stages.size() != cfgs.size()) {
    throw Error("total_loss: " + std::to_string(stages.size()) +
                " stage losses but " + std::to_string(cfgs.size()) +
                " stage configs");
  }
  if (stages.empty()) throw Error("total_loss: no stages");
  std::vector<Var> terms;
  std::vector<double> weights;
  CascadeLoss out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    terms.push_back(stages[i].combined);
    weights.push_back(cfgs[i].alpha);
    out.breakdown.per_stage.push_back(
        {stages[i].cls.value().item(), stages[i].loc.value().item()});
  }
  out.total = numerics::weighted_sum(terms, weights);
  out.breakdown.total = out.total.value().item();
  return out;
}

}  // namespace casdet::losses
