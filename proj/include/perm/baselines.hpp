#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "perm/discrepancy.hpp"

namespace perm {

/// Per-client metrics of one model per client on its own data.
struct ClientMetrics {
  std::vector<double> train_loss;
  std::vector<double> eval_loss;
  std::vector<double> eval_accuracy;

  double mean_accuracy() const;
  double mean_eval_loss() const;
};

/// Evaluates models[i] on client i's training objective and held-out rows.
ClientMetrics evaluate_clients(const std::vector<Vector>& models, const Federation& fed, const LossModel& model);

/// Communication and compute used by a run.
struct Budget {
  std::size_t rounds = 0;
  std::size_t local_steps = 0;  // per client
  std::size_t messages = 0;
};

struct BaselineResult {
  std::string name;
  ClientMetrics metrics;
  Vector global_model;
  std::vector<Vector> client_models;
  Budget budget;
};

/// p(i) = n_i / n.
MixWeights sample_count_weights(const Federation& fed);

/// One global model trained by Local SGD with server weights `p`
/// (sample-count weighting when absent), evaluated on every client.
BaselineResult run_werm(const Federation& fed, const LossModel& model, LocalSgdConfig cfg,
                        const std::optional<MixWeights>& p = std::nullopt, const RoundObserver& observer = {});

/// FedAvg with uniform averaging, then `fine_tune_steps` local SGD steps per
/// client from the global model with the same step size.
BaselineResult run_localized_fedavg(const Federation& fed, const LossModel& model, LocalSgdConfig cfg,
                                    std::size_t fine_tune_steps, const RoundObserver& observer = {});

/// Fine-tunes `global` on each client; the sample stream is keyed by client.
std::vector<Vector> fine_tune(const Vector& global, const Federation& fed, const LossModel& model,
                              const LocalSgdConfig& cfg, std::size_t steps);

}  // namespace perm
