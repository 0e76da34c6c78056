#pragma once

#include "ta3n/autodiff.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ta3n {

enum class Variant { TemPooling, TemRelation };
enum class Attention { None, General, Domain };

std::string to_string(Variant v);
std::string to_string(Attention a);
Variant variant_from_string(const std::string& s);
Attention attention_from_string(const std::string& s);

enum class Domain { Source, Target };

/// One video at model input: K time-ordered frame feature rows.
struct SampledClip {
  std::string video_id;
  Domain domain = Domain::Source;
  std::optional<int> label;
  ad::Matrix frames;  // K x D
};

struct ModelConfig {
  int num_frames = 5;      // K
  int input_dim = 16;      // D
  int feature_dim = 16;    // F
  int num_classes = 4;     // C
  Variant variant = Variant::TemRelation;
  Attention attention = Attention::Domain;
  int max_subsets_per_scale = 32;
  std::uint64_t seed = 0;
};

/// Affine layer stack; ReLU between layers, optionally after the last one.
struct Mlp {
  struct Layer {
    ad::Parameter weight;
    ad::Parameter bias;
  };
  std::vector<Layer> layers;
  bool relu_output = false;

  ad::Value apply(ad::Tape& tape, ad::Value x) const;
  void collect(std::vector<ad::Parameter*>& out);
};

/// Time-ordered n-frame index tuple used by the relation module.
struct RelationSubset {
  int scale = 0;
  std::vector<int> indices;  // strictly increasing, length == scale
};

/// All C(K,n) strictly increasing tuples when that count fits in
/// max_per_scale, else a seeded uniform sample without replacement.
std::vector<RelationSubset> enumerate_subsets(int num_frames, int scale,
                                              int max_per_scale,
                                              std::uint64_t seed);

/// Per-video forward results; handles live on the tape used for the forward.
struct VideoOutputs {
  ad::Value class_logits;            // 1 x C
  ad::Value spatial_domain_logits;   // K x 2
  std::vector<ad::Value> relation_domain_logits;  // per scale, 1 x 2 (TemRelation)
  ad::Value temporal_domain_logits;  // 1 x 2
  std::vector<double> attention_weights;  // per scale (TemRelation) or per frame (TemPooling)
  ad::Value video_feature;           // 1 x F
};

struct ForwardOutputs {
  std::vector<VideoOutputs> videos;
};

/// Domain attention value of a 2-class domain prediction: 1 - H2(softmax(z)).
double domain_attention_weight(const Eigen::RowVector2d& domain_logits);

class Ta3nModel {
 public:
  explicit Ta3nModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::vector<RelationSubset>>& subsets() const { return subsets_; }

  std::vector<ad::Parameter*> parameters();
  /// Feature-path and classifier parameters only (spatial, relation, classifier).
  std::vector<ad::Parameter*> generator_parameters();

  ForwardOutputs forward(ad::Tape& tape, std::span<const SampledClip> batch,
                         double grl_lambda) const;

  // exposed for oracle tests
  ad::Value spatial_forward(ad::Tape& tape, ad::Value frames) const;
  ad::Value temporal_relation(ad::Tape& tape, ad::Value features, int scale) const;

 private:
  VideoOutputs forward_one(ad::Tape& tape, const SampledClip& clip,
                           double grl_lambda) const;
  ad::Value attention_scores(ad::Tape& tape, std::span<const ad::Value> feats) const;

  ModelConfig cfg_;
  Mlp spatial_;                       // D -> F, ReLU output
  std::vector<Mlp> relation_;         // scale n=2..K: nF -> F, ReLU output
  Mlp classifier_;                    // F -> C
  Mlp spatial_disc_;                  // F -> F/2 -> 2
  Mlp temporal_disc_;                 // F -> F/2 -> 2
  std::vector<Mlp> relation_disc_;    // per scale, F -> F/2 -> 2
  Mlp general_attn_;                  // F -> F/2 (tanh) -> 1
  std::vector<std::vector<RelationSubset>> subsets_;  // per scale n=2..K
};

}  // namespace ta3n
