#pragma once

#include "ta3n/model.hpp"

namespace ta3n {

struct LossWeights {
  double lambda_s = 0.75;
  double lambda_r = 0.5;
  double lambda_t = 0.75;
  double gamma = 0.3;
};

/// Component losses as tape nodes plus the weighted total. The adversarial
/// minus signs are realized by the GRL inside the discriminator paths, so
/// every component here is a plain cross-entropy (or entropy) minimized
/// jointly.
struct LossBreakdown {
  ad::Value pred;               // L_y, mean over source videos
  ad::Value spatial;            // L_sd
  ad::Value temporal;           // L_td
  ad::Value relation;           // L_rd (zero constant for TemPooling)
  ad::Value attentive_entropy;  // L_ae
  ad::Value total;
  LossWeights weights;
};

ad::Value prediction_loss(ad::Tape& tape, const ForwardOutputs& out,
                          std::span<const SampledClip> batch);
ad::Value spatial_domain_loss(ad::Tape& tape, const ForwardOutputs& out,
                              std::span<const SampledClip> batch);
ad::Value temporal_domain_loss(ad::Tape& tape, const ForwardOutputs& out,
                               std::span<const SampledClip> batch);
ad::Value relation_domain_loss(ad::Tape& tape, const ForwardOutputs& out,
                               std::span<const SampledClip> batch);
/// Per-video (1 + H2(domain prediction)) * H2(class prediction), batch mean;
/// the domain entropy factor is gradient-stopped.
ad::Value attentive_entropy_loss(ad::Tape& tape, const ForwardOutputs& out);

LossBreakdown total_loss(ad::Tape& tape, const ForwardOutputs& out,
                         std::span<const SampledClip> batch,
                         const LossWeights& w, Variant variant);

}  // namespace ta3n
