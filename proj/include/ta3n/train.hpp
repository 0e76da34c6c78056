#pragma once

#include "ta3n/data.hpp"
#include "ta3n/losses.hpp"

#include <stdexcept>
#include <unordered_map>

namespace ta3n {

struct TrainConfig {
  LossWeights weights;
  double lr0 = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 20;
  int source_batch = 32;
  std::uint64_t seed = 0;
  // DANN-style schedule constants
  double lr_alpha = 10.0;
  double lr_beta = 0.75;
  double grl_ramp = 10.0;

  void validate() const;
};

/// lr0 / (1 + alpha*p)^beta
double lr_schedule(double progress, double lr0, double alpha, double beta);
/// 2 / (1 + exp(-ramp*p)) - 1, monotone from 0 toward 1
double grl_lambda_schedule(double progress, double ramp);

/// SGD with momentum and weight decay:
///   v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<ad::Parameter*> params, double momentum,
               double weight_decay);
  void step(double lr);
  void zero_grad();

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<ad::Matrix> velocity_;
  double momentum_;
  double weight_decay_;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double grl_lambda = 0.0;
  double loss_pred = 0.0;
  double loss_spatial = 0.0;
  double loss_temporal = 0.0;
  double loss_relation = 0.0;
  double loss_attentive_entropy = 0.0;
  double loss_total = 0.0;
  double source_val_accuracy = 0.0;
  double target_val_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, int batch);
  int epoch;
  int batch;
};

TrainResult train(const TrainConfig& cfg, Ta3nModel& model,
                  const DomainDataset& source_train,
                  const DomainDataset& target_train,
                  const DomainDataset& source_val,
                  const DomainDataset& target_val);

enum class GridStage { Coarse, Fine };

struct GridEntry {
  std::string weight_name;
  double value = 0.0;
  double score = 0.0;  // target-validation accuracy
};

struct GridResult {
  std::vector<GridEntry> entries;
  LossWeights best_weights;
  double best_score = 0.0;
};

std::vector<double> grid_values(GridStage stage);

/// Coordinatewise sweep: each weight in turn over the stage grid, the others
/// held at the base config's values; gamma is swept on the coarse grid only.
/// Ties break toward smaller weights. Each candidate trains a fresh model
/// from model_cfg's seed. Candidates are independent, so up to `jobs` run
/// concurrently; results are reduced in sweep order either way.
GridResult grid_search(const TrainConfig& base, const ModelConfig& model_cfg,
                       GridStage stage, const DomainDataset& source_train,
                       const DomainDataset& target_train,
                       const DomainDataset& source_val,
                       const DomainDataset& target_val, int jobs = 1);

}  // namespace ta3n
