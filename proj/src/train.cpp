#include "ta3n/train.hpp"

#include "ta3n/eval.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

namespace ta3n {

void TrainConfig::validate() const {
  if (lr0 <= 0.0) throw std::invalid_argument("config: lr0 must be positive");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("config: momentum must lie in [0,1)");
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (source_batch < 1) throw std::invalid_argument("config: source_batch must be >= 1");
  if (weights.lambda_s < 0 || weights.lambda_r < 0 || weights.lambda_t < 0 ||
      weights.gamma < 0)
    throw std::invalid_argument("config: loss weights must be nonnegative");
}

double lr_schedule(double p, double lr0, double alpha, double beta) {
  return lr0 / std::pow(1.0 + alpha * p, beta);
}

double grl_lambda_schedule(double p, double ramp) {
  return 2.0 / (1.0 + std::exp(-ramp * p)) - 1.0;
}

SgdOptimizer::SgdOptimizer(std::vector<ad::Parameter*> params, double momentum,
                           double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (ad::Parameter* p : params_)
    velocity_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
}

void SgdOptimizer::step(double lr) {
  for (size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter* p = params_[i];
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols())
      throw std::invalid_argument("sgd_step: grad/param shape mismatch for '" +
                                  p->name + "'");
    velocity_[i] = momentum_ * velocity_[i] + p->grad + weight_decay_ * p->value;
    p->value -= lr * velocity_[i];
  }
}

void SgdOptimizer::zero_grad() {
  for (ad::Parameter* p : params_) p->zero_grad();
}

TrainingDiverged::TrainingDiverged(int e, int b)
    : std::runtime_error("training aborted: non-finite loss at epoch " +
                         std::to_string(e) + ", batch " + std::to_string(b)),
      epoch(e), batch(b) {}

TrainResult train(const TrainConfig& cfg, Ta3nModel& model,
                  const DomainDataset& source_train,
                  const DomainDataset& target_train,
                  const DomainDataset& source_val,
                  const DomainDataset& target_val) {
  cfg.validate();
  const int K = model.config().num_frames;
  BatchIterator batches(source_train, target_train, cfg.source_batch, K, cfg.seed);
  SgdOptimizer opt(model.parameters(), cfg.momentum, cfg.weight_decay);

  const int steps_per_epoch = batches.batches_per_epoch();
  const long total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;
  long step = 0;

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch > 0) batches.start_epoch();
    EpochMetrics em;
    em.epoch = epoch;
    int batch_idx = 0;
    while (auto batch = batches.next()) {
      const double p = static_cast<double>(step) / static_cast<double>(total_steps);
      const double lr = lr_schedule(p, cfg.lr0, cfg.lr_alpha, cfg.lr_beta);
      const double grl = grl_lambda_schedule(p, cfg.grl_ramp);

      opt.zero_grad();
      ad::Tape tape;
      ForwardOutputs out = model.forward(tape, batch->clips, grl);
      LossBreakdown loss = total_loss(tape, out, batch->clips, cfg.weights,
                                      model.config().variant);
      const double total = tape.scalar(loss.total);
      if (!std::isfinite(total)) throw TrainingDiverged(epoch, batch_idx);
      tape.backward(loss.total);
      opt.step(lr);

      em.lr = lr;
      em.grl_lambda = grl;
      em.loss_pred += tape.scalar(loss.pred);
      em.loss_spatial += tape.scalar(loss.spatial);
      em.loss_temporal += tape.scalar(loss.temporal);
      em.loss_relation += tape.scalar(loss.relation);
      em.loss_attentive_entropy += tape.scalar(loss.attentive_entropy);
      em.loss_total += total;
      ++step;
      ++batch_idx;
    }
    const double inv = 1.0 / static_cast<double>(batch_idx);
    em.loss_pred *= inv;
    em.loss_spatial *= inv;
    em.loss_temporal *= inv;
    em.loss_relation *= inv;
    em.loss_attentive_entropy *= inv;
    em.loss_total *= inv;
    em.source_val_accuracy = accuracy(model, source_val);
    em.target_val_accuracy = accuracy(model, target_val);
    result.epochs.push_back(em);
  }
  return result;
}

std::vector<double> grid_values(GridStage stage) {
  if (stage == GridStage::Coarse) return {0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0};
  return {0.0, 0.25, 0.5, 0.75, 1.0};
}

GridResult grid_search(const TrainConfig& base, const ModelConfig& model_cfg,
                       GridStage stage, const DomainDataset& source_train,
                       const DomainDataset& target_train,
                       const DomainDataset& source_val,
                       const DomainDataset& target_val, int jobs) {
  if (jobs < 1) throw std::invalid_argument("grid_search: jobs must be >= 1");

  struct Axis {
    const char* name;
    double LossWeights::* field;
  };
  std::vector<Axis> axes = {{"lambda_s", &LossWeights::lambda_s},
                            {"lambda_r", &LossWeights::lambda_r},
                            {"lambda_t", &LossWeights::lambda_t}};
  if (stage == GridStage::Coarse) axes.push_back({"gamma", &LossWeights::gamma});

  struct Candidate {
    const char* name;
    double value;
    LossWeights weights;
    double score = 0.0;
  };
  std::vector<Candidate> candidates;
  const std::vector<double> values = grid_values(stage);
  for (const Axis& axis : axes)
    for (double v : values) {  // ascending, so strict > ties toward smaller weights
      LossWeights w = base.weights;
      w.*axis.field = v;
      candidates.push_back(Candidate{axis.name, v, w});
    }

  auto run_candidate = [&](Candidate& c) {
    TrainConfig cfg = base;
    cfg.weights = c.weights;
    Ta3nModel model(model_cfg);
    train(cfg, model, source_train, target_train, source_val, target_val);
    c.score = accuracy(model, target_val);
  };

  if (jobs == 1) {
    for (Candidate& c : candidates) run_candidate(c);
  } else {
    std::atomic<size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
      try {
        for (size_t i = next.fetch_add(1); i < candidates.size();
             i = next.fetch_add(1))
          run_candidate(candidates[i]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = candidates.size();
      }
    };
    std::vector<std::thread> pool;
    const int n = std::min<int>(jobs, static_cast<int>(candidates.size()));
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  GridResult result;
  result.best_weights = base.weights;
  result.best_score = -1.0;
  for (const Candidate& c : candidates) {
    result.entries.push_back(GridEntry{c.name, c.value, c.score});
    if (c.score > result.best_score) {
      result.best_score = c.score;
      result.best_weights = c.weights;
    }
  }
  return result;
}

}  // namespace ta3n
