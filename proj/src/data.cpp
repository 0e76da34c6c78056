#include "ta3n/data.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace ta3n {

using json = nlohmann::ordered_json;

bool DomainDataset::labeled() const {
  for (const auto& r : records)
    if (!r.label) return false;
  return !records.empty();
}

namespace {

ad::Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                    double sigma = 1.0) {
  std::normal_distribution<double> dist(0.0, sigma);
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

double condition_number(const ad::Matrix& m) {
  Eigen::JacobiSVD<ad::Matrix> svd(m);
  const double smin = svd.singularValues().minCoeff();
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return svd.singularValues().maxCoeff() / smin;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticShiftSpec& spec) {
  if (spec.num_classes < 2 || spec.feature_dim < 2)
    throw std::invalid_argument("generate_synthetic: need at least 2 classes and 2 feature dims");
  if (spec.train_per_class < 2 || spec.val_per_class < 1)
    throw std::invalid_argument("generate_synthetic: need at least 2 training videos per class per domain");
  if (spec.frames_per_video < 2 || spec.latent_dim < 1)
    throw std::invalid_argument("generate_synthetic: degenerate temporal spec");

  std::mt19937_64 rng(spec.seed);
  const int T = spec.frames_per_video;
  const int D = spec.feature_dim;
  const int C = spec.num_classes;

  // Shared waypoint set; each class is a distinct visiting order, so the
  // frame multiset (and hence any order-invariant pooling) carries no class
  // signal.
  ad::Matrix waypoints = gaussian(T, spec.latent_dim, rng);
  std::vector<std::vector<int>> orders;
  std::set<std::vector<int>> seen;
  while (static_cast<int>(orders.size()) < C) {
    std::vector<int> perm(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) perm[static_cast<size_t>(t)] = t;
    std::shuffle(perm.begin(), perm.end(), rng);
    if (seen.insert(perm).second) orders.push_back(perm);
  }
  ad::Matrix embed = gaussian(spec.latent_dim, D, rng) /
                     std::sqrt(static_cast<double>(spec.latent_dim));

  ad::Matrix transform = ad::Matrix::Identity(D, D);
  Eigen::RowVectorXd offset = Eigen::RowVectorXd::Zero(D);
  if (spec.target_transform_strength > 0.0) {
    // Cayley map of a random skew-symmetric matrix: an exact rotation, so
    // feature norms survive any strength. Both the rotation angle and the
    // offset grow with strength; a shared encoder can neutralize the shift,
    // but only alignment pressure rewards doing so.
    do {
      const ad::Matrix g = gaussian(D, D, rng) / std::sqrt(static_cast<double>(D));
      const ad::Matrix skew = spec.target_transform_strength * 0.5 * (g - g.transpose());
      const ad::Matrix eye = ad::Matrix::Identity(D, D);
      transform = (eye - skew) * (eye + skew).inverse();
    } while (condition_number(transform) > 100.0);
    offset = spec.target_transform_strength * gaussian(1, D, rng).row(0);
  }

  std::vector<std::string> class_names;
  for (int c = 0; c < C; ++c) class_names.push_back("pattern_" + std::to_string(c));

  auto make_video = [&](Domain domain, int cls, const std::string& id,
                        bool keep_label) {
    FrameFeatureRecord rec;
    rec.video_id = id;
    rec.domain = domain;
    if (keep_label) rec.label = cls;
    ad::Matrix latent(T, spec.latent_dim);
    for (int t = 0; t < T; ++t)
      latent.row(t) = waypoints.row(orders[static_cast<size_t>(cls)][static_cast<size_t>(t)]);
    ad::Matrix frames = latent * embed;
    if (spec.frame_noise_sigma > 0.0)
      frames += gaussian(T, D, rng, spec.frame_noise_sigma);
    if (domain == Domain::Target) {
      frames = (frames * transform.transpose()).rowwise() + offset;
      if (spec.target_noise_sigma > 0.0)
        frames += gaussian(T, D, rng, spec.target_noise_sigma);
      if (spec.temporal_jitter > 0) {
        std::uniform_int_distribution<int> count_dist(0, spec.temporal_jitter);
        std::uniform_int_distribution<int> pos_dist(0, T - 2);
        const int swaps = count_dist(rng);
        for (int s = 0; s < swaps; ++s) {
          const int p = pos_dist(rng);
          frames.row(p).swap(frames.row(p + 1));
        }
      }
    }
    rec.frames = std::move(frames);
    return rec;
  };

  SyntheticData out;
  out.target_transform = transform;
  out.target_offset = offset;
  for (DomainDataset* ds : {&out.source_train, &out.source_val,
                            &out.target_train, &out.target_val}) {
    ds->feature_dim = D;
    ds->class_names = class_names;
  }
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < spec.train_per_class; ++i)
      out.source_train.records.push_back(make_video(
          Domain::Source, c, "src_train_c" + std::to_string(c) + "_" + std::to_string(i), true));
    for (int i = 0; i < spec.val_per_class; ++i)
      out.source_val.records.push_back(make_video(
          Domain::Source, c, "src_val_c" + std::to_string(c) + "_" + std::to_string(i), true));
    for (int i = 0; i < spec.train_per_class; ++i)
      out.target_train.records.push_back(make_video(
          Domain::Target, c, "tgt_train_c" + std::to_string(c) + "_" + std::to_string(i), false));
    for (int i = 0; i < spec.val_per_class; ++i)
      out.target_val.records.push_back(make_video(
          Domain::Target, c, "tgt_val_c" + std::to_string(c) + "_" + std::to_string(i), true));
  }
  return out;
}

std::vector<int> sample_frame_indices(int total_frames, int num_frames) {
  if (num_frames < 2)
    throw std::invalid_argument("sample_frame_indices: K must be >= 2");
  if (total_frames < num_frames)
    throw std::invalid_argument("sample_frame_indices: video shorter than K frames");
  std::vector<int> idx(static_cast<size_t>(num_frames));
  for (int j = 0; j < num_frames; ++j)
    idx[static_cast<size_t>(j)] = static_cast<int>(std::lround(
        static_cast<double>(j) * (total_frames - 1) / (num_frames - 1)));
  return idx;
}

SampledClip sample_frames(const FrameFeatureRecord& rec, int num_frames) {
  const auto idx = sample_frame_indices(static_cast<int>(rec.frames.rows()), num_frames);
  SampledClip clip;
  clip.video_id = rec.video_id;
  clip.domain = rec.domain;
  clip.label = rec.label;
  clip.frames.resize(num_frames, rec.frames.cols());
  for (int j = 0; j < num_frames; ++j)
    clip.frames.row(j) = rec.frames.row(idx[static_cast<size_t>(j)]);
  return clip;
}

BatchIterator::BatchIterator(const DomainDataset& source,
                             const DomainDataset& target, int source_batch,
                             int num_frames, std::uint64_t seed)
    : source_(source),
      target_(target),
      source_batch_(source_batch),
      num_frames_(num_frames),
      source_rng_(seed),
      target_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  if (source.records.empty() || target.records.empty())
    throw std::invalid_argument("BatchIterator: both datasets must be nonempty");
  if (source_batch < 1)
    throw std::invalid_argument("BatchIterator: source batch size must be >= 1");
  const double ratio = static_cast<double>(target.records.size()) /
                       static_cast<double>(source.records.size());
  target_batch_ = std::max(1, static_cast<int>(std::lround(source_batch * ratio)));
  start_epoch();
}

void BatchIterator::start_epoch() {
  source_order_.resize(source_.records.size());
  target_order_.resize(target_.records.size());
  for (size_t i = 0; i < source_order_.size(); ++i) source_order_[i] = static_cast<int>(i);
  for (size_t i = 0; i < target_order_.size(); ++i) target_order_[i] = static_cast<int>(i);
  std::shuffle(source_order_.begin(), source_order_.end(), source_rng_);
  std::shuffle(target_order_.begin(), target_order_.end(), target_rng_);
  source_pos_ = 0;
  target_pos_ = 0;
}

int BatchIterator::batches_per_epoch() const {
  return static_cast<int>((source_.records.size() + source_batch_ - 1) /
                          static_cast<size_t>(source_batch_));
}

std::optional<Batch> BatchIterator::next() {
  if (source_pos_ >= source_order_.size()) return std::nullopt;
  Batch batch;
  const size_t take = std::min(static_cast<size_t>(source_batch_),
                               source_order_.size() - source_pos_);
  for (size_t i = 0; i < take; ++i) {
    batch.clips.push_back(sample_frames(
        source_.records[static_cast<size_t>(source_order_[source_pos_++])], num_frames_));
  }
  for (int i = 0; i < target_batch_; ++i) {
    if (target_pos_ >= target_order_.size()) {
      std::shuffle(target_order_.begin(), target_order_.end(), target_rng_);
      target_pos_ = 0;
    }
    SampledClip clip = sample_frames(
        target_.records[static_cast<size_t>(target_order_[target_pos_++])], num_frames_);
    clip.label.reset();  // unsupervised protocol: no target labels in training
    batch.clips.push_back(std::move(clip));
  }
  return batch;
}

void save_feature_file(const DomainDataset& ds, const std::filesystem::path& path) {
  json manifest;
  manifest["format"] = "ta3n-features";
  manifest["version"] = 1;
  manifest["feature_dim"] = ds.feature_dim;
  manifest["class_names"] = ds.class_names;
  manifest["record_count"] = ds.records.size();
  json records = json::array();
  std::uint64_t offset = 0;
  for (const auto& r : ds.records) {
    json jr;
    jr["video_id"] = r.video_id;
    jr["domain"] = r.domain == Domain::Source ? "source" : "target";
    if (r.label) jr["label"] = *r.label; else jr["label"] = nullptr;
    jr["frames"] = r.frames.rows();
    jr["offset"] = offset;
    offset += static_cast<std::uint64_t>(r.frames.size()) * sizeof(double);
    records.push_back(std::move(jr));
  }
  manifest["records"] = std::move(records);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_feature_file: cannot open " + path.string());
  out << manifest.dump() << '\n';
  for (const auto& r : ds.records) {
    // row-major little-endian float64
    for (Eigen::Index i = 0; i < r.frames.rows(); ++i)
      for (Eigen::Index j = 0; j < r.frames.cols(); ++j) {
        const double v = r.frames(i, j);
        out.write(reinterpret_cast<const char*>(&v), sizeof(double));
      }
  }
  if (!out) throw std::runtime_error("save_feature_file: write failed for " + path.string());
}

DomainDataset load_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_feature_file: cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error("load_feature_file: missing manifest line in " + path.string());
  json manifest;
  try {
    manifest = json::parse(header);
  } catch (const json::exception& e) {
    throw std::runtime_error("load_feature_file: malformed manifest in " +
                             path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "ta3n-features")
    throw std::runtime_error("load_feature_file: not a feature file: " + path.string());

  DomainDataset ds;
  ds.feature_dim = manifest.at("feature_dim").get<int>();
  ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
  const auto payload_start = in.tellg();
  for (const auto& jr : manifest.at("records")) {
    FrameFeatureRecord rec;
    rec.video_id = jr.at("video_id").get<std::string>();
    const std::string dom = jr.at("domain").get<std::string>();
    if (dom == "source") rec.domain = Domain::Source;
    else if (dom == "target") rec.domain = Domain::Target;
    else throw std::runtime_error("load_feature_file: record '" + rec.video_id +
                                  "' has unknown domain '" + dom + "'");
    if (!jr.at("label").is_null()) rec.label = jr.at("label").get<int>();
    const Eigen::Index T = jr.at("frames").get<Eigen::Index>();
    const std::uint64_t offset = jr.at("offset").get<std::uint64_t>();
    rec.frames.resize(T, ds.feature_dim);
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    for (Eigen::Index i = 0; i < T; ++i)
      for (Eigen::Index j = 0; j < ds.feature_dim; ++j) {
        double v;
        in.read(reinterpret_cast<char*>(&v), sizeof(double));
        if (!in)
          throw std::runtime_error("load_feature_file: truncated payload at record '" +
                                   rec.video_id + "' in " + path.string());
        rec.frames(i, j) = v;
      }
    if (!rec.frames.allFinite())
      throw std::runtime_error("load_feature_file: non-finite frames in record '" +
                               rec.video_id + "'");
    ds.records.push_back(std::move(rec));
  }
  if (ds.records.size() != manifest.at("record_count").get<size_t>())
    throw std::runtime_error("load_feature_file: record count mismatch in " + path.string());
  return ds;
}

}  // namespace ta3n
