#include "ta3n/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ta3n {

namespace {

// forward a whole dataset in chunks on throwaway tapes
template <typename Fn>
void forward_dataset(const Ta3nModel& model, const DomainDataset& dataset, Fn&& fn) {
  const int K = model.config().num_frames;
  constexpr size_t kChunk = 64;
  for (size_t begin = 0; begin < dataset.records.size(); begin += kChunk) {
    const size_t end = std::min(begin + kChunk, dataset.records.size());
    std::vector<SampledClip> clips;
    clips.reserve(end - begin);
    for (size_t i = begin; i < end; ++i)
      clips.push_back(sample_frames(dataset.records[i], K));
    ad::Tape tape;
    ForwardOutputs out = model.forward(tape, clips, 0.0);
    for (size_t i = 0; i < clips.size(); ++i)
      fn(tape, clips[i], out.videos[i], dataset.records[begin + i]);
  }
}

double video_domain_cross_entropy(ad::Tape& tape, const VideoOutputs& v, Domain d) {
  const ad::Matrix& z = tape.value(v.temporal_domain_logits);
  const double mx = z.maxCoeff();
  const double lse = std::log((z.array() - mx).exp().sum()) + mx;
  return -(z(0, d == Domain::Source ? 0 : 1) - lse);
}

}  // namespace

double accuracy(const Ta3nModel& model, const DomainDataset& dataset) {
  if (!dataset.labeled())
    throw std::invalid_argument("accuracy: dataset has unlabeled records");
  size_t correct = 0;
  forward_dataset(model, dataset,
                  [&](ad::Tape& tape, const SampledClip&, const VideoOutputs& v,
                      const FrameFeatureRecord& rec) {
                    const ad::Matrix& logits = tape.value(v.class_logits);
                    int best = 0;
                    for (Eigen::Index c = 1; c < logits.cols(); ++c)
                      if (logits(0, c) > logits(0, best)) best = static_cast<int>(c);
                    if (best == *rec.label) ++correct;
                  });
  return static_cast<double>(correct) / static_cast<double>(dataset.records.size());
}

MmdResult mmd(const ad::Matrix& X, const ad::Matrix& Y) {
  const Eigen::Index m = X.rows(), n = Y.rows();
  if (m < 2 || n < 2)
    throw std::invalid_argument("mmd: need at least 2 samples per set");
  if (X.cols() != Y.cols())
    throw std::invalid_argument("mmd: feature dimension mismatch");

  // median heuristic over pooled pairwise distances
  ad::Matrix pooled(m + n, X.cols());
  pooled << X, Y;
  std::vector<double> dists;
  dists.reserve(static_cast<size_t>((m + n) * (m + n - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j)
      dists.push_back((pooled.row(i) - pooled.row(j)).norm());
  std::sort(dists.begin(), dists.end());
  const double median = dists.size() % 2 == 1
                            ? dists[dists.size() / 2]
                            : 0.5 * (dists[dists.size() / 2 - 1] + dists[dists.size() / 2]);
  if (median <= 0.0)
    throw std::invalid_argument("mmd: degenerate bandwidth (all pooled points identical)");
  const double sigma2 = median * median;

  auto kernel = [sigma2](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return std::exp(-(a - b).squaredNorm() / (2.0 * sigma2));
  };
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (i != j) kxx += kernel(X.row(i), X.row(j));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) kyy += kernel(Y.row(i), Y.row(j));
  // summed in sorted order so mmd(A,B) == mmd(B,A) exactly
  std::vector<double> cross;
  cross.reserve(static_cast<size_t>(m * n));
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) cross.push_back(kernel(X.row(i), Y.row(j)));
  std::sort(cross.begin(), cross.end());
  for (double v : cross) kxy += v;
  const double value = kxx / static_cast<double>(m * (m - 1)) +
                       kyy / static_cast<double>(n * (n - 1)) -
                       2.0 * kxy / static_cast<double>(m * n);
  return MmdResult{value, median};
}

ad::Matrix video_features(const Ta3nModel& model, const DomainDataset& dataset) {
  ad::Matrix feats(static_cast<Eigen::Index>(dataset.records.size()),
                   model.config().feature_dim);
  Eigen::Index row = 0;
  forward_dataset(model, dataset,
                  [&](ad::Tape& tape, const SampledClip&, const VideoOutputs& v,
                      const FrameFeatureRecord&) {
                    feats.row(row++) = tape.value(v.video_feature).row(0);
                  });
  return feats;
}

double domain_loss_metric(const Ta3nModel& model, const DomainDataset& source,
                          const DomainDataset& target) {
  double total = 0.0;
  size_t count = 0;
  for (const DomainDataset* ds : {&source, &target}) {
    forward_dataset(model, *ds,
                    [&](ad::Tape& tape, const SampledClip&, const VideoOutputs& v,
                        const FrameFeatureRecord& rec) {
                      total += video_domain_cross_entropy(tape, v, rec.domain);
                      ++count;
                    });
  }
  return total / static_cast<double>(count);
}

std::vector<AttentionScaleStats> attention_summary(const Ta3nModel& model,
                                                   const DomainDataset& dataset) {
  if (model.config().attention != Attention::Domain)
    throw std::invalid_argument("attention_summary: model does not use domain attention");
  std::vector<AttentionScaleStats> stats;
  size_t count = 0;
  forward_dataset(model, dataset,
                  [&](ad::Tape&, const SampledClip&, const VideoOutputs& v,
                      const FrameFeatureRecord&) {
                    if (stats.empty()) {
                      stats.resize(v.attention_weights.size());
                      for (size_t s = 0; s < stats.size(); ++s) {
                        stats[s].scale = static_cast<int>(s) + 2;
                        stats[s].min = 1.0;
                        stats[s].max = 0.0;
                      }
                    }
                    for (size_t s = 0; s < v.attention_weights.size(); ++s) {
                      const double w = v.attention_weights[s];
                      stats[s].mean += w;
                      stats[s].min = std::min(stats[s].min, w);
                      stats[s].max = std::max(stats[s].max, w);
                    }
                    ++count;
                  });
  for (auto& s : stats) s.mean /= static_cast<double>(count);
  return stats;
}

MetricsReport evaluate(const Ta3nModel& model, const DomainDataset& source_val,
                       const DomainDataset& target_val,
                       std::optional<double> source_only_reference) {
  MetricsReport r;
  r.source_accuracy = accuracy(model, source_val);
  r.target_accuracy = accuracy(model, target_val);
  if (source_only_reference) r.gain = r.target_accuracy - *source_only_reference;
  r.domain_loss = domain_loss_metric(model, source_val, target_val);
  const MmdResult m = mmd(video_features(model, source_val),
                          video_features(model, target_val));
  r.mmd = m.value;
  r.mmd_bandwidth = m.bandwidth;
  if (model.config().attention == Attention::Domain &&
      model.config().variant == Variant::TemRelation)
    r.attention_stats = attention_summary(model, target_val);
  return r;
}

void dump_features(const Ta3nModel& model, const DomainDataset& dataset,
                   const std::filesystem::path& path) {
  DomainDataset out;
  out.feature_dim = model.config().feature_dim;
  out.class_names = dataset.class_names;
  const ad::Matrix feats = video_features(model, dataset);
  for (size_t i = 0; i < dataset.records.size(); ++i) {
    FrameFeatureRecord rec;
    rec.video_id = dataset.records[i].video_id;
    rec.domain = dataset.records[i].domain;
    rec.label = dataset.records[i].label;
    rec.frames = feats.row(static_cast<Eigen::Index>(i));
    out.records.push_back(std::move(rec));
  }
  save_feature_file(out, path);
}

ad::Matrix project_2d(const ad::Matrix& features) {
  if (features.rows() < 1 || features.cols() < 2)
    throw std::invalid_argument("project_2d: need at least 2 feature dimensions");
  const Eigen::RowVectorXd mean = features.colwise().mean();
  const ad::Matrix centered = features.rowwise() - mean;
  const ad::Matrix cov = centered.transpose() * centered /
                         std::max<double>(1.0, static_cast<double>(features.rows() - 1));
  Eigen::SelfAdjointEigenSolver<ad::Matrix> es(cov);
  // Eigen returns ascending eigenvalues; take the last two, descending.
  ad::Matrix axes(features.cols(), 2);
  axes.col(0) = es.eigenvectors().col(features.cols() - 1);
  axes.col(1) = es.eigenvectors().col(features.cols() - 2);
  for (int a = 0; a < 2; ++a) {
    Eigen::Index imax;
    axes.col(a).cwiseAbs().maxCoeff(&imax);
    if (axes(imax, a) < 0.0) axes.col(a) = -axes.col(a);
  }
  return centered * axes;
}

}  // namespace ta3n
