#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ta3n/losses.hpp"

#include <cmath>
#include <random>

using namespace ta3n;
using ad::Matrix;
using ad::Tape;
using ad::Value;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> dist;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

double ce_oracle(const Eigen::RowVectorXd& logits, int label) {
  const double mx = logits.maxCoeff();
  return -(logits(label) - mx) + std::log((logits.array() - mx).exp().sum());
}

SampledClip clip_of(Domain d, std::optional<int> label) {
  SampledClip c;
  c.domain = d;
  c.label = label;
  return c;
}

// hand-built outputs: one video per logits row set
struct Built {
  Tape tape;
  ForwardOutputs out;
  std::vector<SampledClip> batch;

  void add_video(Domain d, std::optional<int> label, const Matrix& class_logits,
                 const Matrix& spatial_logits, const Matrix& temporal_logits,
                 const std::vector<Matrix>& relation_logits = {}) {
    VideoOutputs v;
    v.class_logits = tape.constant(class_logits);
    v.spatial_domain_logits = tape.constant(spatial_logits);
    v.temporal_domain_logits = tape.constant(temporal_logits);
    for (const Matrix& r : relation_logits)
      v.relation_domain_logits.push_back(tape.constant(r));
    v.video_feature = v.class_logits;
    out.videos.push_back(std::move(v));
    batch.push_back(clip_of(d, label));
  }
};

}  // namespace

TEST_CASE("prediction loss") {
  SUBCASE("perfect one-hot logits are near zero") {
    Built b;
    Matrix logits = Matrix::Zero(1, 4);
    logits(0, 2) = 100.0;
    b.add_video(Domain::Source, 2, logits, Matrix::Zero(5, 2), Matrix::Zero(1, 2));
    CHECK(b.tape.scalar(prediction_loss(b.tape, b.out, b.batch)) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("uniform logits over 12 classes give ln 12") {
    Built b;
    b.add_video(Domain::Source, 0, Matrix::Zero(1, 12), Matrix::Zero(5, 2),
                Matrix::Zero(1, 2));
    CHECK(b.tape.scalar(prediction_loss(b.tape, b.out, b.batch)) ==
          doctest::Approx(std::log(12.0)));
  }
  SUBCASE("batch loss is the mean of per-video cross entropies") {
    Built b;
    double expected = 0.0;
    for (int i = 0; i < 3; ++i) {
      Matrix logits = random_matrix(1, 6, 10 + i);
      b.add_video(Domain::Source, i, logits, Matrix::Zero(5, 2), Matrix::Zero(1, 2));
      expected += ce_oracle(logits.row(0), i);
    }
    CHECK(b.tape.scalar(prediction_loss(b.tape, b.out, b.batch)) ==
          doctest::Approx(expected / 3.0).epsilon(1e-12));
  }
  SUBCASE("target-only batch is rejected") {
    Built b;
    b.add_video(Domain::Target, std::nullopt, Matrix::Zero(1, 4),
                Matrix::Zero(5, 2), Matrix::Zero(1, 2));
    CHECK_THROWS_AS(prediction_loss(b.tape, b.out, b.batch), std::invalid_argument);
  }
  SUBCASE("removing target samples leaves the prediction loss unchanged") {
    Built with_target, without;
    Matrix logits = random_matrix(1, 4, 3);
    with_target.add_video(Domain::Source, 1, logits, Matrix::Zero(5, 2), Matrix::Zero(1, 2));
    with_target.add_video(Domain::Target, std::nullopt, random_matrix(1, 4, 4),
                          Matrix::Zero(5, 2), Matrix::Zero(1, 2));
    without.add_video(Domain::Source, 1, logits, Matrix::Zero(5, 2), Matrix::Zero(1, 2));
    CHECK(with_target.tape.scalar(prediction_loss(with_target.tape, with_target.out,
                                                  with_target.batch)) ==
          without.tape.scalar(prediction_loss(without.tape, without.out, without.batch)));
  }
}

TEST_CASE("spatial domain loss") {
  SUBCASE("perfect per-frame predictions are near zero") {
    Built b;
    Matrix sd = Matrix::Zero(5, 2);
    sd.col(0).setConstant(50.0);  // source column
    b.add_video(Domain::Source, 0, Matrix::Zero(1, 4), sd, Matrix::Zero(1, 2));
    CHECK(b.tape.scalar(spatial_domain_loss(b.tape, b.out, b.batch)) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("uniform predictions give ln 2") {
    Built b;
    b.add_video(Domain::Source, 0, Matrix::Zero(1, 4), Matrix::Zero(5, 2),
                Matrix::Zero(1, 2));
    b.add_video(Domain::Target, std::nullopt, Matrix::Zero(1, 4), Matrix::Zero(5, 2),
                Matrix::Zero(1, 2));
    CHECK(b.tape.scalar(spatial_domain_loss(b.tape, b.out, b.batch)) ==
          doctest::Approx(std::log(2.0)));
  }
  SUBCASE("mixed confidences match the per-frame loop oracle") {
    Built b;
    Matrix sd0 = random_matrix(5, 2, 21), sd1 = random_matrix(5, 2, 22);
    b.add_video(Domain::Source, 0, Matrix::Zero(1, 4), sd0, Matrix::Zero(1, 2));
    b.add_video(Domain::Target, std::nullopt, Matrix::Zero(1, 4), sd1,
                Matrix::Zero(1, 2));
    double expected = 0.0;
    for (int j = 0; j < 5; ++j) expected += ce_oracle(sd0.row(j), 0) / 5.0;
    double v1 = 0.0;
    for (int j = 0; j < 5; ++j) v1 += ce_oracle(sd1.row(j), 1) / 5.0;
    expected = (expected + v1) / 2.0;
    CHECK(b.tape.scalar(spatial_domain_loss(b.tape, b.out, b.batch)) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("temporal domain loss") {
  Built b;
  Matrix td0 = random_matrix(1, 2, 31), td1 = random_matrix(1, 2, 32);
  b.add_video(Domain::Source, 0, Matrix::Zero(1, 4), Matrix::Zero(5, 2), td0);
  b.add_video(Domain::Target, std::nullopt, Matrix::Zero(1, 4), Matrix::Zero(5, 2), td1);
  const double expected = 0.5 * (ce_oracle(td0.row(0), 0) + ce_oracle(td1.row(0), 1));
  CHECK(b.tape.scalar(temporal_domain_loss(b.tape, b.out, b.batch)) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("relation domain loss") {
  SUBCASE("single scale degenerates to the plain domain cross entropy") {
    Built b;
    Matrix rd = random_matrix(1, 2, 41);
    b.add_video(Domain::Source, 0, Matrix::Zero(1, 4), Matrix::Zero(2, 2),
                Matrix::Zero(1, 2), {rd});
    CHECK(b.tape.scalar(relation_domain_loss(b.tape, b.out, b.batch)) ==
          doctest::Approx(ce_oracle(rd.row(0), 0)).epsilon(1e-12));
  }
  SUBCASE("all-uniform scales give ln 2") {
    Built b;
    std::vector<Matrix> scales(4, Matrix::Zero(1, 2));
    b.add_video(Domain::Target, std::nullopt, Matrix::Zero(1, 4), Matrix::Zero(5, 2),
                Matrix::Zero(1, 2), scales);
    CHECK(b.tape.scalar(relation_domain_loss(b.tape, b.out, b.batch)) ==
          doctest::Approx(std::log(2.0)));
  }
  SUBCASE("K=5 random logits match the double-loop oracle") {
    Built b;
    std::vector<Matrix> s0, s1;
    for (int n = 0; n < 4; ++n) {
      s0.push_back(random_matrix(1, 2, 50 + n));
      s1.push_back(random_matrix(1, 2, 60 + n));
    }
    b.add_video(Domain::Source, 0, Matrix::Zero(1, 4), Matrix::Zero(5, 2),
                Matrix::Zero(1, 2), s0);
    b.add_video(Domain::Target, std::nullopt, Matrix::Zero(1, 4), Matrix::Zero(5, 2),
                Matrix::Zero(1, 2), s1);
    double e0 = 0.0, e1 = 0.0;
    for (int n = 0; n < 4; ++n) {
      e0 += ce_oracle(s0[static_cast<size_t>(n)].row(0), 0) / 4.0;
      e1 += ce_oracle(s1[static_cast<size_t>(n)].row(0), 1) / 4.0;
    }
    CHECK(b.tape.scalar(relation_domain_loss(b.tape, b.out, b.batch)) ==
          doctest::Approx((e0 + e1) / 2.0).epsilon(1e-12));
  }
  SUBCASE("missing scales are rejected") {
    Built b;
    b.add_video(Domain::Source, 0, Matrix::Zero(1, 4), Matrix::Zero(5, 2),
                Matrix::Zero(1, 2));
    CHECK_THROWS_AS(relation_domain_loss(b.tape, b.out, b.batch),
                    std::invalid_argument);
  }
}

TEST_CASE("attentive entropy loss") {
  SUBCASE("one-hot class prediction gives zero regardless of the domain logits") {
    Built b;
    Matrix logits = Matrix::Zero(1, 4);
    logits(0, 1) = 1000.0;
    b.add_video(Domain::Source, 1, logits, Matrix::Zero(5, 2), random_matrix(1, 2, 71));
    CHECK(b.tape.scalar(attentive_entropy_loss(b.tape, b.out)) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("uniform domain and uniform 4-class prediction evaluate to exactly 4") {
    Built b;
    b.add_video(Domain::Source, 0, Matrix::Zero(1, 4), Matrix::Zero(5, 2),
                Matrix::Zero(1, 2));
    CHECK(b.tape.scalar(attentive_entropy_loss(b.tape, b.out)) == 4.0);
  }
  SUBCASE("matches independent scalar entropy evaluations") {
    // d softmax [0.9, 0.1], y softmax [0.7, 0.2, 0.1]
    Built b;
    Matrix d(1, 2), y(1, 3);
    d << std::log(0.9), std::log(0.1);
    y << std::log(0.7), std::log(0.2), std::log(0.1);
    b.add_video(Domain::Source, 0, y, Matrix::Zero(5, 2), d);
    const double hd = -0.9 * std::log2(0.9) - 0.1 * std::log2(0.1);
    const double hy =
        -0.7 * std::log2(0.7) - 0.2 * std::log2(0.2) - 0.1 * std::log2(0.1);
    CHECK(hy == doctest::Approx(1.1568).epsilon(1e-4));
    CHECK((1.0 + hd) * hy == doctest::Approx(1.6994).epsilon(1e-4));
    CHECK(b.tape.scalar(attentive_entropy_loss(b.tape, b.out)) ==
          doctest::Approx((1.0 + hd) * hy).epsilon(1e-12));
  }
  SUBCASE("the domain entropy factor is gradient stopped") {
    Tape t;
    ad::Parameter dp("d", random_matrix(1, 2, 81));
    ad::Parameter yp("y", random_matrix(1, 3, 82));
    ForwardOutputs out;
    VideoOutputs v;
    v.class_logits = t.param(yp);
    v.temporal_domain_logits = t.param(dp);
    v.spatial_domain_logits = t.constant(Matrix::Zero(2, 2));
    v.video_feature = v.class_logits;
    out.videos.push_back(v);
    t.backward(attentive_entropy_loss(t, out));
    CHECK(dp.grad.cwiseAbs().maxCoeff() == 0.0);
    CHECK(yp.grad.cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("total loss composition") {
  SUBCASE("all weights zero reduce the total to the prediction loss") {
    Built b;
    b.add_video(Domain::Source, 0, random_matrix(1, 4, 91), random_matrix(5, 2, 92),
                random_matrix(1, 2, 93), {random_matrix(1, 2, 94)});
    LossBreakdown lb = total_loss(b.tape, b.out, b.batch, LossWeights{0, 0, 0, 0},
                                  Variant::TemRelation);
    CHECK(b.tape.scalar(lb.total) == doctest::Approx(b.tape.scalar(lb.pred)).epsilon(1e-15));
  }
  SUBCASE("recomposition matches the explicit weighted sum") {
    Built b;
    for (int i = 0; i < 3; ++i)
      b.add_video(i < 2 ? Domain::Source : Domain::Target,
                  i < 2 ? std::optional<int>(i) : std::nullopt,
                  random_matrix(1, 4, 100 + i), random_matrix(5, 2, 110 + i),
                  random_matrix(1, 2, 120 + i),
                  {random_matrix(1, 2, 130 + i), random_matrix(1, 2, 140 + i)});
    const LossWeights w{0.75, 0.5, 0.75, 0.3};  // default operating point
    LossBreakdown lb = total_loss(b.tape, b.out, b.batch, w, Variant::TemRelation);
    const double expected = b.tape.scalar(lb.pred) + w.gamma * b.tape.scalar(lb.attentive_entropy) +
                            w.lambda_s * b.tape.scalar(lb.spatial) +
                            w.lambda_r * b.tape.scalar(lb.relation) +
                            w.lambda_t * b.tape.scalar(lb.temporal);
    CHECK(b.tape.scalar(lb.total) == doctest::Approx(expected).epsilon(1e-12));
    // all components nonnegative and finite
    for (double c : {b.tape.scalar(lb.pred), b.tape.scalar(lb.spatial),
                     b.tape.scalar(lb.temporal), b.tape.scalar(lb.relation),
                     b.tape.scalar(lb.attentive_entropy)}) {
      CHECK(c >= 0.0);
      CHECK(std::isfinite(c));
    }
  }
  SUBCASE("TemPooling drops the relation term") {
    Built b;
    b.add_video(Domain::Source, 0, random_matrix(1, 4, 151), random_matrix(5, 2, 152),
                random_matrix(1, 2, 153));
    LossBreakdown lb = total_loss(b.tape, b.out, b.batch, LossWeights{1, 1, 1, 0},
                                  Variant::TemPooling);
    CHECK(b.tape.scalar(lb.relation) == 0.0);
  }
  SUBCASE("negative weights are rejected") {
    Built b;
    b.add_video(Domain::Source, 0, Matrix::Zero(1, 4), Matrix::Zero(5, 2),
                Matrix::Zero(1, 2));
    CHECK_THROWS_AS(total_loss(b.tape, b.out, b.batch, LossWeights{-1, 0, 0, 0},
                               Variant::TemPooling),
                    std::invalid_argument);
  }
}

TEST_CASE("adversarial direction: generator gradient scales with -lambda, discriminator learns") {
  // domain-loss gradient on pre-GRL parameters is linear in the GRL strength
  ModelConfig cfg;
  cfg.num_frames = 4;
  cfg.input_dim = 6;
  cfg.feature_dim = 6;
  cfg.num_classes = 3;
  cfg.attention = Attention::None;
  cfg.seed = 7;

  std::vector<SampledClip> batch;
  for (int i = 0; i < 4; ++i) {
    SampledClip c;
    c.domain = i < 2 ? Domain::Source : Domain::Target;
    if (i < 2) c.label = i;
    c.frames = random_matrix(4, 6, 200 + i);
    batch.push_back(std::move(c));
  }

  auto domain_grads = [&](double grl_lambda) {
    Ta3nModel model(cfg);
    for (ad::Parameter* p : model.parameters()) p->zero_grad();
    ad::Tape t;
    auto out = model.forward(t, batch, grl_lambda);
    Value dom = t.add(spatial_domain_loss(t, out, batch),
                      t.add(relation_domain_loss(t, out, batch),
                            temporal_domain_loss(t, out, batch)));
    t.backward(dom);
    std::vector<Matrix> g;
    for (ad::Parameter* p : model.generator_parameters()) g.push_back(p->grad);
    return g;
  };
  auto g1 = domain_grads(1.0);
  auto g05 = domain_grads(0.5);
  for (size_t i = 0; i < g1.size(); ++i)
    CHECK((g05[i] - 0.5 * g1[i]).cwiseAbs().maxCoeff() <= 1e-10);

  // one SGD step on the total loss lowers the discriminators' own cross
  // entropy on the same batch
  Ta3nModel model(cfg);
  auto disc_ce = [&]() {
    ad::Tape t;
    auto out = model.forward(t, batch, 1.0);
    return t.scalar(t.add(spatial_domain_loss(t, out, batch),
                          t.add(relation_domain_loss(t, out, batch),
                                temporal_domain_loss(t, out, batch))));
  };
  const double before = disc_ce();
  for (ad::Parameter* p : model.parameters()) p->zero_grad();
  {
    ad::Tape t;
    auto out = model.forward(t, batch, 1.0);
    LossBreakdown lb = total_loss(t, out, batch, LossWeights{1, 1, 1, 0},
                                  Variant::TemRelation);
    t.backward(lb.total);
  }
  // step only the discriminator parameters so the movement of the generator
  // does not mask their progress
  std::vector<ad::Parameter*> gen = model.generator_parameters();
  for (ad::Parameter* p : model.parameters()) {
    if (std::find(gen.begin(), gen.end(), p) != gen.end()) continue;
    p->value -= 0.05 * p->grad;
  }
  CHECK(disc_ce() < before);
}
