#include "ta3n/losses.hpp"

#include <stdexcept>

namespace ta3n {

namespace {

int domain_label(Domain d) { return d == Domain::Source ? 0 : 1; }

ad::Value batch_mean(ad::Tape& tape, const std::vector<ad::Value>& terms) {
  ad::Value acc;
  for (ad::Value t : terms) acc = acc.valid() ? tape.add(acc, t) : t;
  return tape.scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

ad::Value prediction_loss(ad::Tape& tape, const ForwardOutputs& out,
                          std::span<const SampledClip> batch) {
  std::vector<ad::Value> terms;
  for (size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].domain != Domain::Source) continue;
    if (!batch[i].label)
      throw std::invalid_argument("prediction_loss: source clip '" +
                                  batch[i].video_id + "' has no label");
    terms.push_back(tape.cross_entropy(out.videos[i].class_logits, *batch[i].label));
  }
  if (terms.empty())
    throw std::invalid_argument("prediction_loss: batch has no source videos");
  return batch_mean(tape, terms);
}

ad::Value spatial_domain_loss(ad::Tape& tape, const ForwardOutputs& out,
                              std::span<const SampledClip> batch) {
  std::vector<ad::Value> terms;
  for (size_t i = 0; i < batch.size(); ++i) {
    const ad::Value logits = out.videos[i].spatial_domain_logits;
    const int K = static_cast<int>(tape.value(logits).rows());
    std::vector<ad::Value> frame_terms;
    for (int j = 0; j < K; ++j)
      frame_terms.push_back(tape.cross_entropy(tape.slice_rows(logits, j, 1),
                                               domain_label(batch[i].domain)));
    terms.push_back(batch_mean(tape, frame_terms));  // 1/K over frames
  }
  return batch_mean(tape, terms);
}

ad::Value temporal_domain_loss(ad::Tape& tape, const ForwardOutputs& out,
                               std::span<const SampledClip> batch) {
  std::vector<ad::Value> terms;
  for (size_t i = 0; i < batch.size(); ++i)
    terms.push_back(tape.cross_entropy(out.videos[i].temporal_domain_logits,
                                       domain_label(batch[i].domain)));
  return batch_mean(tape, terms);
}

ad::Value relation_domain_loss(ad::Tape& tape, const ForwardOutputs& out,
                               std::span<const SampledClip> batch) {
  std::vector<ad::Value> terms;
  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& per_scale = out.videos[i].relation_domain_logits;
    if (per_scale.empty())
      throw std::invalid_argument("relation_domain_loss: no relation scales present");
    std::vector<ad::Value> scale_terms;
    for (ad::Value logits : per_scale)
      scale_terms.push_back(tape.cross_entropy(logits, domain_label(batch[i].domain)));
    terms.push_back(batch_mean(tape, scale_terms));  // 1/(K-1) over scales
  }
  return batch_mean(tape, terms);
}

ad::Value attentive_entropy_loss(ad::Tape& tape, const ForwardOutputs& out) {
  std::vector<ad::Value> terms;
  for (const VideoOutputs& v : out.videos) {
    ad::Value class_entropy =
        tape.entropy_bits(tape.softmax_rows(v.class_logits));
    ad::Value domain_entropy = tape.entropy_bits(
        tape.softmax_rows(tape.detach(v.temporal_domain_logits)));
    const double hd = tape.scalar(domain_entropy);
    terms.push_back(tape.scale(class_entropy, 1.0 + hd));
  }
  return batch_mean(tape, terms);
}

LossBreakdown total_loss(ad::Tape& tape, const ForwardOutputs& out,
                         std::span<const SampledClip> batch,
                         const LossWeights& w, Variant variant) {
  if (out.videos.size() != batch.size())
    throw std::invalid_argument("total_loss: outputs/batch size mismatch");
  if (w.lambda_s < 0 || w.lambda_r < 0 || w.lambda_t < 0 || w.gamma < 0)
    throw std::invalid_argument("total_loss: weights must be nonnegative");
  LossBreakdown b;
  b.weights = w;
  b.pred = prediction_loss(tape, out, batch);
  b.spatial = spatial_domain_loss(tape, out, batch);
  b.temporal = temporal_domain_loss(tape, out, batch);
  b.relation = variant == Variant::TemRelation
                   ? relation_domain_loss(tape, out, batch)
                   : tape.constant_scalar(0.0);
  b.attentive_entropy = attentive_entropy_loss(tape, out);
  ad::Value total = b.pred;
  total = tape.add(total, tape.scale(b.attentive_entropy, w.gamma));
  total = tape.add(total, tape.scale(b.spatial, w.lambda_s));
  total = tape.add(total, tape.scale(b.relation, w.lambda_r));
  total = tape.add(total, tape.scale(b.temporal, w.lambda_t));
  b.total = total;
  return b;
}

}  // namespace ta3n
