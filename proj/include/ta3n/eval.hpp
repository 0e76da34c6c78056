#pragma once

#include "ta3n/data.hpp"

#include <filesystem>
#include <optional>

namespace ta3n {

struct AttentionScaleStats {
  int scale = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct MetricsReport {
  double source_accuracy = 0.0;
  double target_accuracy = 0.0;
  std::optional<double> gain;  // target_accuracy minus a source-only reference
  double domain_loss = 0.0;    // video-level domain cross-entropy, GRL off
  double mmd = 0.0;
  double mmd_bandwidth = 0.0;
  std::vector<AttentionScaleStats> attention_stats;
};

/// Fraction of videos whose argmax class logit matches the label; ties break
/// toward the lowest class index.
double accuracy(const Ta3nModel& model, const DomainDataset& dataset);

/// Unbiased squared-MMD U-statistic with an RBF kernel; bandwidth from the
/// median heuristic over pooled pairwise distances. Returns the raw value
/// (may dip slightly below zero) and the bandwidth used.
struct MmdResult {
  double value = 0.0;
  double bandwidth = 0.0;
};
MmdResult mmd(const ad::Matrix& source_features, const ad::Matrix& target_features);

/// Final 1 x F video features for every record, one row per record.
ad::Matrix video_features(const Ta3nModel& model, const DomainDataset& dataset);

/// Video-level domain cross-entropy of the temporal discriminator over both
/// validation sets, as a pure measurement (no GRL).
double domain_loss_metric(const Ta3nModel& model, const DomainDataset& source,
                          const DomainDataset& target);

std::vector<AttentionScaleStats> attention_summary(const Ta3nModel& model,
                                                   const DomainDataset& dataset);

MetricsReport evaluate(const Ta3nModel& model, const DomainDataset& source_val,
                       const DomainDataset& target_val,
                       std::optional<double> source_only_reference = std::nullopt);

/// Writes final video features as single-frame records in the feature file
/// format (frame dim = F).
void dump_features(const Ta3nModel& model, const DomainDataset& dataset,
                   const std::filesystem::path& path);

/// Top-2 principal-axis coordinates: centered, eigen-ordered by descending
/// variance, sign fixed so each axis' largest-magnitude loading is positive.
ad::Matrix project_2d(const ad::Matrix& features);

}  // namespace ta3n
