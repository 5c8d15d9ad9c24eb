#pragma once

#include "entlink/common.hpp"
#include "entlink/corpus.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace entlink {

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

struct DenseLayer {
  Matrix weight;  // out x in
  DenseVector bias;
};

/// Per-layer gradients, shaped like DenseNet::layers.
struct DenseNetGrad {
  std::vector<Matrix> weight;
  std::vector<DenseVector> bias;

  void set_zero();
  bool all_zero() const;
  bool all_finite() const;
};

/// Feed-forward net: affine + elu on hidden layers, affine identity output.
/// Inverted dropout (keep_prob) applies to hidden activations in training
/// mode only, so inference is deterministic.
class DenseNet {
 public:
  DenseNet() = default;
  /// dims = {input, hidden..., output}; Glorot-uniform weights, zero biases.
  DenseNet(const std::vector<std::size_t>& dims, double keep_prob, Rng& init);
  DenseNet(std::vector<DenseLayer> layers, double keep_prob);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;
  std::vector<std::size_t> dims() const;
  double keep_prob() const { return keep_prob_; }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  struct Cache {
    std::vector<Matrix> inputs;       // input to each layer
    std::vector<Matrix> preact;       // pre-activation of each hidden layer
    std::vector<Matrix> dropout_mask;  // scaled keep mask per hidden layer
  };

  /// Columns of `x` are samples. `rng` is required when training.
  Matrix forward_batch(const Matrix& x, bool training, Rng* rng, Cache* cache) const;
  /// Accumulates parameter gradients into `grad` given dL/d(output).
  void backward_batch(const Cache& cache, const Matrix& grad_out, DenseNetGrad& grad) const;
  DenseNetGrad zero_grad() const;

 private:
  std::vector<DenseLayer> layers_;
  double keep_prob_ = 1.0;
};

DenseVector forward_embed(const DenseNet& net, const DenseVector& v, bool training = false, Rng* rng = nullptr);

/// The two networks mapping tuple vectors and mention vectors into the joint
/// space, and the loss margin.
struct EmbedderPair {
  DenseNet net_r;
  DenseNet net_t;
  double margin = 0.001;
  std::uint64_t seed = 0;

  std::size_t joint_dim() const { return net_r.output_dim(); }
  void validate() const;
};

struct NetworkShape {
  std::vector<std::size_t> relational_hidden{512};
  std::vector<std::size_t> text_hidden{};
  std::size_t joint_dim = 256;
  double keep_prob = 0.75;
};

EmbedderPair make_embedder_pair(std::size_t tuple_dim, std::size_t mention_dim, const NetworkShape& shape,
                                double margin, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Scoring

/// Cosine distance 1 - cos(u, v) in [0, 2]. A zero vector scores 1.
double score(const DenseVector& u, const DenseVector& v);
double average_positive_score(const DenseVector& anchor, const std::vector<DenseVector>& positives);

// ---------------------------------------------------------------------------
// Loss

/// A training batch of tuples and mentions. positive(i, j) marks gold pairs.
/// Non-anchor items only serve as contrastive examples.
struct TrainingBatch {
  Matrix tuples;    // tuple_dim x n_tuples
  Matrix mentions;  // mention_dim x n_mentions
  std::vector<std::uint8_t> positive;  // row-major n_tuples x n_mentions
  std::vector<std::uint8_t> tuple_anchor;
  std::vector<std::uint8_t> mention_anchor;
  std::vector<std::string> tuple_ids;
  std::vector<std::string> mention_ids;

  std::size_t n_tuples() const { return static_cast<std::size_t>(tuples.cols()); }
  std::size_t n_mentions() const { return static_cast<std::size_t>(mentions.cols()); }
  bool is_positive(std::size_t i, std::size_t j) const { return positive[i * n_mentions() + j] != 0; }
  void validate() const;
};

/// Loss over a score matrix S (n_tuples x n_mentions):
///   sum over tuple anchors r, non-matching t:  max(0, m + avg_pos(r) - S[r,t])
/// + sum over mention anchors t, non-matching r: max(0, m + avg_pos(t) - S[r,t])
/// where avg_pos is the mean score over the anchor's in-batch positives.
struct ScoreLoss {
  double loss = 0.0;
  Matrix grad;  // dL/dS
  std::size_t skipped_anchors = 0;
  std::size_t active_terms = 0;
  std::size_t terms = 0;
  double min_hinge_gap = std::numeric_limits<double>::infinity();
};

ScoreLoss contrastive_loss_from_scores(const Matrix& scores, const TrainingBatch& batch, double margin);

struct PairGrad {
  DenseNetGrad net_r;
  DenseNetGrad net_t;
  bool all_zero() const { return net_r.all_zero() && net_t.all_zero(); }
  bool all_finite() const { return net_r.all_finite() && net_t.all_finite(); }
};

struct LossResult {
  double loss = 0.0;
  PairGrad grad;
  std::size_t skipped_anchors = 0;
  std::size_t degenerate_scores = 0;
  double min_hinge_gap = std::numeric_limits<double>::infinity();
};

/// Loss and exact (sub)gradients through the score, the positive averages and
/// both networks.
LossResult pairwise_contrastive_loss(const EmbedderPair& pair, const TrainingBatch& batch, bool training = false,
                                     Rng* dropout_rng = nullptr);

/// Score-space gradient pieces, exposed for tests: dS/du and dS/dv of 1-cos.
void score_gradient(const DenseVector& u, const DenseVector& v, DenseVector& du, DenseVector& dv);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double learning_rate = 1e-3;
  double decay_rate = 0.9;
  std::size_t decay_steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  PairGrad m;
  PairGrad v;

  static AdamState for_pair(const EmbedderPair& pair, const AdamConfig& config);
  /// base * decay_rate^floor(step / decay_steps)
  double effective_lr() const { return effective_lr_at(step); }
  double effective_lr_at(std::size_t s) const;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  std::size_t skipped_anchors = 0;
};

/// One Adam step on `batch`. A batch whose gradient is exactly zero leaves
/// parameters and moments untouched but still advances the step counter.
/// Throws TrainingError with a dump of the batch on non-finite loss/gradient.
StepResult gradient_step(EmbedderPair& pair, AdamState& adam, const TrainingBatch& batch, Rng& dropout_rng);

/// Central finite differences over every parameter of both nets, dropout
/// off. Returns max |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// When a hinge sits within `epsilon`-scale of its kink the margin is nudged
/// and the check retried.
struct GradientCheckResult {
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t parameters = 0;
  std::size_t retries = 0;
  double margin_used = 0.0;
};

GradientCheckResult gradient_check(const EmbedderPair& pair, const TrainingBatch& batch, double epsilon = 1e-5,
                                   double floor = 1e-6);

// ---------------------------------------------------------------------------
// Checkpoint:
//   "ENTLCKP1" | u64 header length | UTF-8 JSON header
//   | parameters as f64: net_r layers (weight row-major, then bias), net_t layers
//   | when header.has_optimizer_state: Adam m then v in the same order.

void save_checkpoint(const EmbedderPair& pair, const AdamState* adam, const nlohmann::json& extra,
                     const std::string& path);
struct Checkpoint {
  EmbedderPair pair;
  std::optional<AdamState> adam;
  nlohmann::json header;
};
Checkpoint load_checkpoint(const std::string& path);
std::string encode_checkpoint(const EmbedderPair& pair, const AdamState* adam, const nlohmann::json& extra);
Checkpoint decode_checkpoint(std::string_view bytes);

// ---------------------------------------------------------------------------
// Sampling

struct SamplerConfig {
  std::size_t entities_per_batch = 16;
  std::size_t links_per_entity = 2;
  std::size_t distractors_per_batch = 4;
};

/// Ids of one batch; resolved into vectors by the caller.
struct SampledBatch {
  std::vector<std::string> tuple_keys;
  std::vector<std::string> mention_ids;
  std::vector<std::uint8_t> tuple_anchor;
  std::vector<std::uint8_t> mention_anchor;
  std::set<std::string> entities;  // every entity any item belongs to
};

/// Draws entities with probability proportional to 1 / (1 + times seen),
/// then gold links of each drawn entity. Only `trainable` links are ever
/// positives. Distractor tuples/mentions (e.g. held-out test entities) join
/// batches as contrastive examples only.
class BatchSampler {
 public:
  BatchSampler(std::vector<GoldLink> trainable, std::vector<GoldLink> distractors, SamplerConfig config,
               std::uint64_t seed);

  SampledBatch next();
  const std::map<std::string, std::size_t>& seen_counts() const { return seen_; }
  std::size_t entity_count() const { return entities_.size(); }

 private:
  std::vector<std::string> entities_;
  std::map<std::string, std::vector<std::string>> links_by_entity_;
  std::vector<std::string> distractor_entities_;
  std::map<std::string, std::vector<std::string>> distractor_links_;
  std::map<std::string, std::size_t> seen_;
  SamplerConfig config_;
  Rng rng_;
};

/// Materializes a sampled batch. `gold` decides positives among all pairs.
TrainingBatch assemble_batch(const SampledBatch& ids, const std::function<const DenseVector&(const std::string&)>& tuple_vec,
                             const std::function<const DenseVector&(const std::string&)>& mention_vec,
                             const std::set<std::pair<std::string, std::string>>& gold);

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::size_t batches = 2000;
  std::uint64_t seed = 0;
  std::ostream* log = nullptr;  // "step lr loss" lines
};

struct TrainSummary {
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::size_t steps = 0;
  std::set<std::string> entities_seen;
};

TrainSummary train_pair(EmbedderPair& pair, AdamState& adam, BatchSampler& sampler,
                        const std::function<TrainingBatch(const SampledBatch&)>& materialize,
                        const TrainOptions& options);

}  // namespace entlink
