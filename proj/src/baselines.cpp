#include "perm/baselines.hpp"

#include <numeric>

#include "perm/errors.hpp"
#include "perm/parallel.hpp"
#include "perm/rng.hpp"

namespace perm {

double ClientMetrics::mean_accuracy() const {
  return std::accumulate(eval_accuracy.begin(), eval_accuracy.end(), 0.0) / static_cast<double>(eval_accuracy.size());
}

double ClientMetrics::mean_eval_loss() const {
  return std::accumulate(eval_loss.begin(), eval_loss.end(), 0.0) / static_cast<double>(eval_loss.size());
}

ClientMetrics evaluate_clients(const std::vector<Vector>& models, const Federation& fed, const LossModel& model) {
  const std::size_t n = fed.size();
  if (models.size() != n) throw DimensionError("evaluate: one model per client required");
  ClientMetrics m;
  m.train_loss.resize(n);
  m.eval_loss.resize(n);
  m.eval_accuracy.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const Shard& s = fed.shards[i];
    m.train_loss[i] = loss(model, models[i], s.train);
    const Dataset& held = s.eval.rows() > 0 ? s.eval : s.train;
    m.eval_loss[i] = loss(model, models[i], held);
    m.eval_accuracy[i] = accuracy(models[i], held);
  });
  return m;
}

MixWeights sample_count_weights(const Federation& fed) {
  const auto counts = fed.train_counts();
  Vector p = Eigen::Map<const Vector>(counts.data(), static_cast<Eigen::Index>(counts.size()));
  return MixWeights(p / p.sum());
}

BaselineResult run_werm(const Federation& fed, const LossModel& model, LocalSgdConfig cfg,
                        const std::optional<MixWeights>& p, const RoundObserver& observer) {
  const MixWeights weights = p ? *p : sample_count_weights(fed);
  if (weights.size() != fed.size()) throw DimensionError("werm: one weight per client required");
  cfg.weights.assign(weights.values().data(), weights.values().data() + weights.values().size());

  BaselineResult out;
  out.name = "werm";
  out.global_model = local_sgd_global(fed, model, cfg, Vector(), observer);
  out.client_models.assign(fed.size(), out.global_model);
  out.metrics = evaluate_clients(out.client_models, fed, model);
  out.budget = {cfg.rounds, cfg.rounds * cfg.local_steps, 2 * fed.size() * cfg.rounds};
  return out;
}

std::vector<Vector> fine_tune(const Vector& global, const Federation& fed, const LossModel& model,
                              const LocalSgdConfig& cfg, std::size_t steps) {
  std::vector<Vector> out(fed.size(), global);
  if (steps == 0) return out;
  parallel_for(fed.size(), [&](std::size_t i) {
    Stream rng(cfg.seed, StreamTag::kFineTune, {i});
    Vector w = global;
    for (std::size_t t = 0; t < steps; ++t) w -= cfg.step * sampled_grad(model, w, fed.shards[i].train, cfg.sampling, rng);
    require_finite(w, "fine-tuning (step size too large?)");
    out[i] = cfg.domain.project(w);
  });
  return out;
}

BaselineResult run_localized_fedavg(const Federation& fed, const LossModel& model, LocalSgdConfig cfg,
                                    std::size_t fine_tune_steps, const RoundObserver& observer) {
  cfg.weights.clear();
  BaselineResult out;
  out.name = "localized-fedavg";
  out.global_model = local_sgd_global(fed, model, cfg, Vector(), observer);
  out.client_models = fine_tune(out.global_model, fed, model, cfg, fine_tune_steps);
  out.metrics = evaluate_clients(out.client_models, fed, model);
  out.budget = {cfg.rounds, cfg.rounds * cfg.local_steps + fine_tune_steps, 2 * fed.size() * cfg.rounds};
  return out;
}

}  // namespace perm
