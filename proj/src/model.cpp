#include "ta3n/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ta3n {

namespace {

ad::Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> dist(-bound, bound);
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

// zero_output starts the final layer at zero, so the stack's initial output
// is exactly zero while hidden layers keep random features. Discriminators
// use this: they open at chance-level predictions (cross-entropy exactly
// ln 2) instead of random confident ones, which keeps early training calm.
Mlp make_mlp(const std::string& name, std::vector<int> dims, bool relu_output,
             std::mt19937_64& rng, bool zero_output = false) {
  Mlp mlp;
  mlp.relu_output = relu_output;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const bool last = l + 2 == dims.size();
    Mlp::Layer layer;
    layer.weight = ad::Parameter(name + "." + std::to_string(l) + ".weight",
                                 zero_output && last
                                     ? ad::Matrix::Zero(dims[l], dims[l + 1])
                                     : uniform_init(dims[l], dims[l + 1], rng));
    layer.bias = ad::Parameter(name + "." + std::to_string(l) + ".bias",
                               zero_output && last
                                   ? ad::Matrix::Zero(1, dims[l + 1])
                                   : uniform_init(1, dims[l + 1], rng));
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

std::uint64_t combinations(int n, int k) {
  if (k < 0 || k > n) return 0;
  std::uint64_t c = 1;
  for (int i = 1; i <= k; ++i) c = c * static_cast<std::uint64_t>(n - k + i) / i;
  return c;
}

}  // namespace

std::string to_string(Variant v) {
  return v == Variant::TemPooling ? "tempooling" : "temrelation";
}

std::string to_string(Attention a) {
  switch (a) {
    case Attention::None: return "none";
    case Attention::General: return "general";
    case Attention::Domain: return "domain";
  }
  return "none";
}

Variant variant_from_string(const std::string& s) {
  if (s == "tempooling") return Variant::TemPooling;
  if (s == "temrelation") return Variant::TemRelation;
  throw std::invalid_argument("unknown variant: " + s);
}

Attention attention_from_string(const std::string& s) {
  if (s == "none") return Attention::None;
  if (s == "general") return Attention::General;
  if (s == "domain") return Attention::Domain;
  throw std::invalid_argument("unknown attention mode: " + s);
}

ad::Value Mlp::apply(ad::Tape& tape, ad::Value x) const {
  for (size_t l = 0; l < layers.size(); ++l) {
    x = tape.add(tape.matmul(x, tape.param(const_cast<ad::Parameter&>(layers[l].weight))),
                 tape.param(const_cast<ad::Parameter&>(layers[l].bias)));
    if (l + 1 < layers.size() || relu_output) x = tape.relu(x);
  }
  return x;
}

void Mlp::collect(std::vector<ad::Parameter*>& out) {
  for (auto& layer : layers) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
}

std::vector<RelationSubset> enumerate_subsets(int num_frames, int scale,
                                              int max_per_scale,
                                              std::uint64_t seed) {
  if (scale < 2 || scale > num_frames) {
    std::ostringstream os;
    os << "enumerate_subsets: scale " << scale << " out of range [2, "
       << num_frames << "]";
    throw std::invalid_argument(os.str());
  }
  std::vector<RelationSubset> all;
  std::vector<int> idx(static_cast<size_t>(scale));
  for (int i = 0; i < scale; ++i) idx[static_cast<size_t>(i)] = i;
  while (true) {
    all.push_back(RelationSubset{scale, idx});
    int i = scale - 1;
    while (i >= 0 && idx[static_cast<size_t>(i)] == num_frames - scale + i) --i;
    if (i < 0) break;
    ++idx[static_cast<size_t>(i)];
    for (int j = i + 1; j < scale; ++j)
      idx[static_cast<size_t>(j)] = idx[static_cast<size_t>(j - 1)] + 1;
  }
  if (static_cast<int>(all.size()) <= max_per_scale) return all;
  std::vector<RelationSubset> sampled;
  std::mt19937_64 rng(seed + static_cast<std::uint64_t>(scale));
  std::sample(all.begin(), all.end(), std::back_inserter(sampled),
              static_cast<size_t>(max_per_scale), rng);
  return sampled;
}

double domain_attention_weight(const Eigen::RowVector2d& z) {
  const double mx = z.maxCoeff();
  const double e0 = std::exp(z(0) - mx);
  const double e1 = std::exp(z(1) - mx);
  const double p0 = e0 / (e0 + e1);
  const double p1 = e1 / (e0 + e1);
  double h = 0.0;
  if (p0 > 0.0) h -= p0 * std::log2(p0);
  if (p1 > 0.0) h -= p1 * std::log2(p1);
  return std::clamp(1.0 - h, 0.0, 1.0);
}

Ta3nModel::Ta3nModel(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.num_frames < 2) throw std::invalid_argument("model: K must be >= 2");
  if (cfg.input_dim < 1 || cfg.feature_dim < 1 || cfg.num_classes < 2)
    throw std::invalid_argument("model: bad dimensions");
  std::mt19937_64 rng(cfg.seed);
  const int F = cfg.feature_dim;
  const int H = std::max(2, F / 2);
  spatial_ = make_mlp("spatial", {cfg.input_dim, F}, true, rng);
  if (cfg.variant == Variant::TemRelation) {
    for (int n = 2; n <= cfg.num_frames; ++n) {
      relation_.push_back(
          make_mlp("relation." + std::to_string(n), {n * F, F}, true, rng));
      relation_disc_.push_back(make_mlp(
          "relation_disc." + std::to_string(n), {F, H, 2}, false, rng, true));
      subsets_.push_back(enumerate_subsets(cfg.num_frames, n,
                                           cfg.max_subsets_per_scale, cfg.seed));
    }
  }
  classifier_ = make_mlp("classifier", {F, cfg.num_classes}, false, rng);
  spatial_disc_ = make_mlp("spatial_disc", {F, H, 2}, false, rng, true);
  temporal_disc_ = make_mlp("temporal_disc", {F, H, 2}, false, rng, true);
  if (cfg.attention == Attention::General)
    general_attn_ = make_mlp("general_attn", {F, H, 1}, false, rng);
}

std::vector<ad::Parameter*> Ta3nModel::parameters() {
  std::vector<ad::Parameter*> out = generator_parameters();
  spatial_disc_.collect(out);
  temporal_disc_.collect(out);
  for (auto& d : relation_disc_) d.collect(out);
  return out;
}

std::vector<ad::Parameter*> Ta3nModel::generator_parameters() {
  std::vector<ad::Parameter*> out;
  spatial_.collect(out);
  for (auto& r : relation_) r.collect(out);
  classifier_.collect(out);
  general_attn_.collect(out);
  return out;
}

ad::Value Ta3nModel::spatial_forward(ad::Tape& tape, ad::Value frames) const {
  if (tape.value(frames).cols() != cfg_.input_dim ||
      tape.value(frames).rows() != cfg_.num_frames) {
    std::ostringstream os;
    os << "spatial_forward: expected " << cfg_.num_frames << "x"
       << cfg_.input_dim << " frames, got " << tape.value(frames).rows() << "x"
       << tape.value(frames).cols();
    throw std::invalid_argument(os.str());
  }
  return spatial_.apply(tape, frames);
}

ad::Value Ta3nModel::temporal_relation(ad::Tape& tape, ad::Value features,
                                       int scale) const {
  if (cfg_.variant != Variant::TemRelation)
    throw std::logic_error("temporal_relation: model variant is TemPooling");
  if (scale < 2 || scale > cfg_.num_frames)
    throw std::invalid_argument("temporal_relation: scale out of range");
  const auto& subs = subsets_[static_cast<size_t>(scale - 2)];
  const Mlp& g = relation_[static_cast<size_t>(scale - 2)];
  ad::Value acc;
  for (const RelationSubset& s : subs) {
    ad::Value cat = tape.gather_rows_concat(features, s.indices);
    ad::Value r = g.apply(tape, cat);
    acc = acc.valid() ? tape.add(acc, r) : r;
  }
  return acc;
}

ad::Value Ta3nModel::attention_scores(ad::Tape& tape,
                                      std::span<const ad::Value> feats) const {
  std::vector<ad::Value> scores;
  scores.reserve(feats.size());
  for (ad::Value f : feats) scores.push_back(general_attn_.apply(tape, f));
  ad::Value row = tape.hstack(scores);
  return tape.softmax_rows(row);
}

ForwardOutputs Ta3nModel::forward(ad::Tape& tape,
                                  std::span<const SampledClip> batch,
                                  double grl_lambda) const {
  ForwardOutputs out;
  out.videos.reserve(batch.size());
  for (const SampledClip& clip : batch)
    out.videos.push_back(forward_one(tape, clip, grl_lambda));
  return out;
}

VideoOutputs Ta3nModel::forward_one(ad::Tape& tape, const SampledClip& clip,
                                    double grl_lambda) const {
  if (clip.frames.rows() != cfg_.num_frames ||
      clip.frames.cols() != cfg_.input_dim) {
    std::ostringstream os;
    os << "forward: clip '" << clip.video_id << "' has shape "
       << clip.frames.rows() << "x" << clip.frames.cols() << ", expected "
       << cfg_.num_frames << "x" << cfg_.input_dim;
    throw std::invalid_argument(os.str());
  }
  VideoOutputs v;
  ad::Value frames = tape.constant(clip.frames);
  ad::Value feats = spatial_.apply(tape, frames);  // K x F
  v.spatial_domain_logits =
      spatial_disc_.apply(tape, tape.grl(feats, grl_lambda));  // K x 2

  ad::Value h;
  if (cfg_.variant == Variant::TemRelation) {
    const int num_scales = cfg_.num_frames - 1;
    std::vector<ad::Value> rel(static_cast<size_t>(num_scales));
    for (int n = 2; n <= cfg_.num_frames; ++n) {
      rel[static_cast<size_t>(n - 2)] = temporal_relation(tape, feats, n);
      v.relation_domain_logits.push_back(relation_disc_[static_cast<size_t>(n - 2)]
          .apply(tape, tape.grl(rel[static_cast<size_t>(n - 2)], grl_lambda)));
    }
    if (cfg_.attention == Attention::General) {
      ad::Value wts = attention_scores(tape, rel);
      for (int i = 0; i < num_scales; ++i) {
        ad::Value term = tape.add(
            tape.smul(tape.slice_cols(wts, i, 1), rel[static_cast<size_t>(i)]),
            rel[static_cast<size_t>(i)]);
        h = h.valid() ? tape.add(h, term) : term;
        v.attention_weights.push_back(tape.value(wts)(0, i));
      }
    } else {
      // Domain mode derives weights from the relation discriminators'
      // predictions; None mode uses weight 0. Both use the same residual
      // (w + 1) multiplier so the uniform-discriminator case reduces to the
      // unattended sum bit-for-bit.
      for (int i = 0; i < num_scales; ++i) {
        double w = 0.0;
        if (cfg_.attention == Attention::Domain) {
          const ad::Matrix& z = tape.value(v.relation_domain_logits[static_cast<size_t>(i)]);
          w = domain_attention_weight(Eigen::RowVector2d(z(0, 0), z(0, 1)));
        }
        ad::Value term = tape.scale(rel[static_cast<size_t>(i)], w + 1.0);
        h = h.valid() ? tape.add(h, term) : term;
        v.attention_weights.push_back(w);
      }
    }
  } else {  // TemPooling
    if (cfg_.attention == Attention::General) {
      std::vector<ad::Value> rows(static_cast<size_t>(cfg_.num_frames));
      for (int j = 0; j < cfg_.num_frames; ++j)
        rows[static_cast<size_t>(j)] = tape.slice_rows(feats, j, 1);
      ad::Value wts = attention_scores(tape, rows);
      ad::Value attended;
      for (int j = 0; j < cfg_.num_frames; ++j) {
        ad::Value term = tape.smul(tape.slice_cols(wts, j, 1),
                                   rows[static_cast<size_t>(j)]);
        attended = attended.valid() ? tape.add(attended, term) : term;
        v.attention_weights.push_back(tape.value(wts)(0, j));
      }
      h = tape.add(tape.mean_axis(feats, 0),
                   tape.scale(attended, 1.0 / cfg_.num_frames));
    } else {
      // attended mean with residual; weights 0 in None mode
      std::vector<double> w(static_cast<size_t>(cfg_.num_frames), 0.0);
      if (cfg_.attention == Attention::Domain) {
        const ad::Matrix& z = tape.value(v.spatial_domain_logits);
        for (int j = 0; j < cfg_.num_frames; ++j)
          w[static_cast<size_t>(j)] =
              domain_attention_weight(Eigen::RowVector2d(z(j, 0), z(j, 1)));
      }
      // (1/K) sum_j (w_j + 1) feat_j reduces to the plain mean at w = 0
      h = tape.weighted_mean_rows(feats, w);
      v.attention_weights = std::move(w);
    }
  }

  v.video_feature = h;
  v.temporal_domain_logits = temporal_disc_.apply(tape, tape.grl(h, grl_lambda));
  v.class_logits = classifier_.apply(tape, h);
  return v;
}

}  // namespace ta3n
