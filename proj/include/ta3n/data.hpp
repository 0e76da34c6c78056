#pragma once

#include "ta3n/model.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <optional>
#include <string>
#include <vector>

namespace ta3n {

/// One video: T time-ordered frame feature rows plus label and domain tag.
struct FrameFeatureRecord {
  std::string video_id;
  Domain domain = Domain::Source;
  std::optional<int> label;  // absent for unlabeled target training data
  ad::Matrix frames;         // T x D
};

struct DomainDataset {
  int feature_dim = 0;
  std::vector<std::string> class_names;
  std::vector<FrameFeatureRecord> records;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  bool labeled() const;
};

/// Generator knobs for the synthetic cross-domain benchmark. Classes are
/// distinct temporal orderings of a shared waypoint set, so class identity
/// lives in frame order; the target domain differs by an affine feature
/// transform, extra frame noise, and temporal jitter.
struct SyntheticShiftSpec {
  int num_classes = 4;
  int feature_dim = 16;
  int frames_per_video = 12;
  int latent_dim = 3;
  int train_per_class = 40;   // per domain
  int val_per_class = 20;     // per domain
  double frame_noise_sigma = 0.05;
  double target_transform_strength = 1.05;  // 0 = identity transform
  double target_noise_sigma = 0.05;
  int temporal_jitter = 4;    // max adjacent swaps applied to target videos
  std::uint64_t seed = 0;
};

struct SyntheticData {
  DomainDataset source_train, source_val, target_train, target_val;
  ad::Matrix target_transform;  // D x D
  Eigen::RowVectorXd target_offset;
};

SyntheticData generate_synthetic(const SyntheticShiftSpec& spec);

/// Equally spaced frame indices: round(j*(T-1)/(K-1)) for j = 0..K-1.
std::vector<int> sample_frame_indices(int total_frames, int num_frames);
SampledClip sample_frames(const FrameFeatureRecord& rec, int num_frames);

/// One training batch: source clips keep labels, target labels are stripped.
struct Batch {
  std::vector<SampledClip> clips;
};

/// Ratio-aware source/target batch iterator. Each epoch covers every source
/// video exactly once; target videos are drawn with batch size
/// round(source_batch * |target| / |source|), clamped to >= 1, cycling when
/// exhausted. Source and target shuffles use independent seeded streams so
/// the source order does not depend on the target set.
class BatchIterator {
 public:
  BatchIterator(const DomainDataset& source, const DomainDataset& target,
                int source_batch, int num_frames, std::uint64_t seed);

  void start_epoch();
  std::optional<Batch> next();
  int batches_per_epoch() const;
  int target_batch_size() const { return target_batch_; }

 private:
  const DomainDataset& source_;
  const DomainDataset& target_;
  int source_batch_;
  int target_batch_;
  int num_frames_;
  std::mt19937_64 source_rng_;
  std::mt19937_64 target_rng_;
  std::vector<int> source_order_;
  std::vector<int> target_order_;
  size_t source_pos_ = 0;
  size_t target_pos_ = 0;
};

/// Feature file: one-line JSON manifest, then a binary segment of row-major
/// little-endian float64 frames at the offsets listed in the manifest.
void save_feature_file(const DomainDataset& ds, const std::filesystem::path& path);
DomainDataset load_feature_file(const std::filesystem::path& path);

}  // namespace ta3n
