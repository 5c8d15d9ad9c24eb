#include "entlink/neural.hpp"

#include "entlink/binio.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace entlink {

// ---------------------------------------------------------------------------
// DenseNetGrad

void DenseNetGrad::set_zero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
}

bool DenseNetGrad::all_zero() const {
  for (const auto& w : weight)
    if (!(w.array() == 0.0).all()) return false;
  for (const auto& b : bias)
    if (!(b.array() == 0.0).all()) return false;
  return true;
}

bool DenseNetGrad::all_finite() const {
  for (const auto& w : weight)
    if (!w.allFinite()) return false;
  for (const auto& b : bias)
    if (!b.allFinite()) return false;
  return true;
}

// ---------------------------------------------------------------------------
// DenseNet

DenseNet::DenseNet(const std::vector<std::size_t>& dims, double keep_prob, Rng& init) : keep_prob_(keep_prob) {
  if (dims.size() < 2) throw ValidationError("network needs at least an input and an output size");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ValidationError("keep probability must be in (0, 1]");
  for (std::size_t d : dims)
    if (d == 0) throw ValidationError("network layer sizes must be positive");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(dims[l]);
    const auto out = static_cast<Eigen::Index>(dims[l + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    DenseLayer layer;
    layer.weight.resize(out, in);
    for (Eigen::Index c = 0; c < in; ++c)
      for (Eigen::Index r = 0; r < out; ++r) layer.weight(r, c) = (2.0 * init.uniform() - 1.0) * limit;
    layer.bias = DenseVector::Zero(out);
    layers_.push_back(std::move(layer));
  }
}

DenseNet::DenseNet(std::vector<DenseLayer> layers, double keep_prob) : layers_(std::move(layers)), keep_prob_(keep_prob) {
  if (layers_.empty()) throw ValidationError("network has no layers");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ValidationError("keep probability must be in (0, 1]");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].bias.size() != layers_[l].weight.rows())
      throw ValidationError("layer " + std::to_string(l) + ": bias size does not match weight rows");
    if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows())
      throw ValidationError("layer " + std::to_string(l) + ": input size does not match previous layer");
  }
}

std::size_t DenseNet::input_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.cols());
}

std::size_t DenseNet::output_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.rows());
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<std::size_t> DenseNet::dims() const {
  std::vector<std::size_t> out;
  if (layers_.empty()) return out;
  out.push_back(input_dim());
  for (const auto& l : layers_) out.push_back(static_cast<std::size_t>(l.weight.rows()));
  return out;
}

Matrix DenseNet::forward_batch(const Matrix& x, bool training, Rng* rng, Cache* cache) const {
  if (static_cast<std::size_t>(x.rows()) != input_dim()) {
    throw ValidationError("network input has " + std::to_string(x.rows()) + " rows, expected " +
                          std::to_string(input_dim()));
  }
  const bool drop = training && keep_prob_ < 1.0;
  if (drop && rng == nullptr) throw ValidationError("training forward pass needs a dropout generator");
  if (cache) *cache = Cache{};
  Matrix h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (cache) cache->inputs.push_back(h);
    Matrix z = layer.weight * h;
    z.colwise() += layer.bias;
    if (l + 1 == layers_.size()) {
      h = std::move(z);
      break;
    }
    h = z.unaryExpr([](double v) { return elu(v); });
    Matrix mask;
    if (drop) {
      mask.resize(h.rows(), h.cols());
      const double scale = 1.0 / keep_prob_;
      for (Eigen::Index c = 0; c < mask.cols(); ++c)
        for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = rng->uniform() < keep_prob_ ? scale : 0.0;
      h = h.cwiseProduct(mask);
    }
    if (cache) {
      cache->preact.push_back(std::move(z));
      cache->dropout_mask.push_back(std::move(mask));
    }
  }
  return h;
}

void DenseNet::backward_batch(const Cache& cache, const Matrix& grad_out, DenseNetGrad& grad) const {
  if (cache.inputs.size() != layers_.size()) throw ValidationError("backward pass without a matching forward cache");
  Matrix g = grad_out;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    if (li + 1 < layers_.size()) {
      const auto& mask = cache.dropout_mask[li];
      if (mask.size() != 0) g = g.cwiseProduct(mask);
      g = g.cwiseProduct(cache.preact[li].unaryExpr([](double v) { return elu_grad(v); }));
    }
    grad.weight[li].noalias() += g * cache.inputs[li].transpose();
    grad.bias[li] += g.rowwise().sum();
    if (li > 0) g = layers_[li].weight.transpose() * g;
  }
}

DenseNetGrad DenseNet::zero_grad() const {
  DenseNetGrad g;
  for (const auto& l : layers_) {
    g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(DenseVector::Zero(l.bias.size()));
  }
  return g;
}

DenseVector forward_embed(const DenseNet& net, const DenseVector& v, bool training, Rng* rng) {
  Matrix x = v;
  Matrix out = net.forward_batch(x, training, rng, nullptr);
  return out.col(0);
}

void EmbedderPair::validate() const {
  if (net_r.output_dim() != net_t.output_dim()) {
    throw ValidationError("tuple and mention networks disagree on the joint dimension (" +
                          std::to_string(net_r.output_dim()) + " vs " + std::to_string(net_t.output_dim()) + ")");
  }
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw ValidationError("margin must be a finite non-negative number");
}

EmbedderPair make_embedder_pair(std::size_t tuple_dim, std::size_t mention_dim, const NetworkShape& shape,
                                double margin, std::uint64_t seed) {
  Rng root(seed);
  Rng init_r = root.fork(1);
  Rng init_t = root.fork(2);
  std::vector<std::size_t> dims_r{tuple_dim};
  dims_r.insert(dims_r.end(), shape.relational_hidden.begin(), shape.relational_hidden.end());
  dims_r.push_back(shape.joint_dim);
  std::vector<std::size_t> dims_t{mention_dim};
  dims_t.insert(dims_t.end(), shape.text_hidden.begin(), shape.text_hidden.end());
  dims_t.push_back(shape.joint_dim);
  EmbedderPair pair;
  pair.net_r = DenseNet(dims_r, shape.keep_prob, init_r);
  pair.net_t = DenseNet(dims_t, shape.keep_prob, init_t);
  pair.margin = margin;
  pair.seed = seed;
  pair.validate();
  return pair;
}

// ---------------------------------------------------------------------------
// Scoring

double score(const DenseVector& u, const DenseVector& v) {
  if (u.size() != v.size()) throw ValidationError("score of vectors with different dimensions");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) return 1.0;
  const double c = std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
  return 1.0 - c;
}

double average_positive_score(const DenseVector& anchor, const std::vector<DenseVector>& positives) {
  if (positives.empty()) throw ValidationError("average positive score needs at least one positive");
  double total = 0.0;
  for (const auto& p : positives) total += score(anchor, p);
  return total / static_cast<double>(positives.size());
}

void score_gradient(const DenseVector& u, const DenseVector& v, DenseVector& du, DenseVector& dv) {
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) {
    du = DenseVector::Zero(u.size());
    dv = DenseVector::Zero(v.size());
    return;
  }
  const double c = u.dot(v) / (nu * nv);
  du = -(v / (nu * nv) - c * u / (nu * nu));
  dv = -(u / (nu * nv) - c * v / (nv * nv));
}

// ---------------------------------------------------------------------------
// Loss

void TrainingBatch::validate() const {
  const std::size_t nr = n_tuples();
  const std::size_t nt = n_mentions();
  if (positive.size() != nr * nt) throw ValidationError("batch positive mask has the wrong size");
  if (tuple_anchor.size() != nr || mention_anchor.size() != nt)
    throw ValidationError("batch anchor flags have the wrong size");
  if (!tuple_ids.empty() && tuple_ids.size() != nr) throw ValidationError("batch tuple ids have the wrong size");
  if (!mention_ids.empty() && mention_ids.size() != nt) throw ValidationError("batch mention ids have the wrong size");
}

ScoreLoss contrastive_loss_from_scores(const Matrix& scores, const TrainingBatch& batch, double margin) {
  const std::size_t nr = batch.n_tuples();
  const std::size_t nt = batch.n_mentions();
  if (static_cast<std::size_t>(scores.rows()) != nr || static_cast<std::size_t>(scores.cols()) != nt)
    throw ValidationError("score matrix does not match the batch");
  ScoreLoss out;
  out.grad = Matrix::Zero(scores.rows(), scores.cols());
  std::vector<std::size_t> pos;

  for (std::size_t i = 0; i < nr; ++i) {
    if (!batch.tuple_anchor[i]) continue;
    pos.clear();
    for (std::size_t j = 0; j < nt; ++j)
      if (batch.is_positive(i, j)) pos.push_back(j);
    if (pos.empty()) {
      ++out.skipped_anchors;
      continue;
    }
    double avg = 0.0;
    for (auto j : pos) avg += scores(i, j);
    avg /= static_cast<double>(pos.size());
    std::size_t active = 0;
    for (std::size_t j = 0; j < nt; ++j) {
      if (batch.is_positive(i, j)) continue;
      ++out.terms;
      const double arg = margin + avg - scores(i, j);
      out.min_hinge_gap = std::min(out.min_hinge_gap, std::abs(arg));
      if (arg > 0.0) {
        out.loss += arg;
        out.grad(i, j) -= 1.0;
        ++active;
      }
    }
    out.active_terms += active;
    for (auto j : pos) out.grad(i, j) += static_cast<double>(active) / static_cast<double>(pos.size());
  }

  for (std::size_t j = 0; j < nt; ++j) {
    if (!batch.mention_anchor[j]) continue;
    pos.clear();
    for (std::size_t i = 0; i < nr; ++i)
      if (batch.is_positive(i, j)) pos.push_back(i);
    if (pos.empty()) {
      ++out.skipped_anchors;
      continue;
    }
    double avg = 0.0;
    for (auto i : pos) avg += scores(i, j);
    avg /= static_cast<double>(pos.size());
    std::size_t active = 0;
    for (std::size_t i = 0; i < nr; ++i) {
      if (batch.is_positive(i, j)) continue;
      ++out.terms;
      const double arg = margin + avg - scores(i, j);
      out.min_hinge_gap = std::min(out.min_hinge_gap, std::abs(arg));
      if (arg > 0.0) {
        out.loss += arg;
        out.grad(i, j) -= 1.0;
        ++active;
      }
    }
    out.active_terms += active;
    for (auto i : pos) out.grad(i, j) += static_cast<double>(active) / static_cast<double>(pos.size());
  }
  return out;
}

namespace {

// Columns scaled to unit length; zero columns stay zero. Returns the norms.
DenseVector normalize_columns(const Matrix& m, Matrix& unit) {
  DenseVector norms = m.colwise().norm().transpose();
  unit = m;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (norms[c] > 0.0) unit.col(c) /= norms[c];
  }
  return norms;
}

}  // namespace

LossResult pairwise_contrastive_loss(const EmbedderPair& pair, const TrainingBatch& batch, bool training,
                                     Rng* dropout_rng) {
  batch.validate();
  DenseNet::Cache cache_r;
  DenseNet::Cache cache_t;
  const Matrix u = pair.net_r.forward_batch(batch.tuples, training, dropout_rng, &cache_r);
  const Matrix v = pair.net_t.forward_batch(batch.mentions, training, dropout_rng, &cache_t);
  Matrix uh;
  Matrix vh;
  const DenseVector nu = normalize_columns(u, uh);
  const DenseVector nv = normalize_columns(v, vh);
  const Matrix cosines = (uh.transpose() * vh).cwiseMax(-1.0).cwiseMin(1.0);
  const Matrix scores = (1.0 - cosines.array()).matrix();

  LossResult out;
  for (Eigen::Index i = 0; i < nu.size(); ++i)
    for (Eigen::Index j = 0; j < nv.size(); ++j)
      if (nu[i] == 0.0 || nv[j] == 0.0) ++out.degenerate_scores;

  ScoreLoss sl = contrastive_loss_from_scores(scores, batch, pair.margin);
  out.loss = sl.loss;
  out.skipped_anchors = sl.skipped_anchors;
  out.min_hinge_gap = sl.min_hinge_gap;

  // d(1 - cos)/du_i = -(vh_j - cos_ij uh_i) / |u_i|, summed against dL/dS.
  const Matrix& g = sl.grad;
  const Matrix gc = g.cwiseProduct(cosines);
  Matrix du = -(vh * g.transpose() - uh * gc.rowwise().sum().asDiagonal());
  Matrix dv = -(uh * g - vh * gc.colwise().sum().transpose().asDiagonal());
  for (Eigen::Index i = 0; i < du.cols(); ++i) {
    if (nu[i] > 0.0) du.col(i) /= nu[i];
    else du.col(i).setZero();
  }
  for (Eigen::Index j = 0; j < dv.cols(); ++j) {
    if (nv[j] > 0.0) dv.col(j) /= nv[j];
    else dv.col(j).setZero();
  }

  out.grad.net_r = pair.net_r.zero_grad();
  out.grad.net_t = pair.net_t.zero_grad();
  pair.net_r.backward_batch(cache_r, du, out.grad.net_r);
  pair.net_t.backward_batch(cache_t, dv, out.grad.net_t);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

AdamState AdamState::for_pair(const EmbedderPair& pair, const AdamConfig& config) {
  if (!(config.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (config.decay_steps == 0) throw ValidationError("decay steps must be positive");
  if (!(config.decay_rate > 0.0 && config.decay_rate <= 1.0)) throw ValidationError("decay rate must be in (0, 1]");
  AdamState s;
  s.config = config;
  s.m.net_r = pair.net_r.zero_grad();
  s.m.net_t = pair.net_t.zero_grad();
  s.v = s.m;
  return s;
}

double AdamState::effective_lr_at(std::size_t s) const {
  const auto periods = static_cast<double>(s / config.decay_steps);
  return config.learning_rate * std::pow(config.decay_rate, periods);
}

namespace {

template <typename Param>
void adam_update(Param& p, const Param& g, Param& m, Param& v, const AdamConfig& c, double lr, double bc1,
                 double bc2) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
}

void adam_update_net(DenseNet& net, const DenseNetGrad& g, DenseNetGrad& m, DenseNetGrad& v, const AdamConfig& c,
                     double lr, double bc1, double bc2) {
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    adam_update(layers[l].weight, g.weight[l], m.weight[l], v.weight[l], c, lr, bc1, bc2);
    adam_update(layers[l].bias, g.bias[l], m.bias[l], v.bias[l], c, lr, bc1, bc2);
  }
}

std::string describe_batch(const TrainingBatch& batch) {
  std::ostringstream os;
  os << "batch of " << batch.n_tuples() << " tuples [";
  for (std::size_t i = 0; i < batch.tuple_ids.size(); ++i) os << (i ? ", " : "") << batch.tuple_ids[i];
  os << "] and " << batch.n_mentions() << " mentions [";
  for (std::size_t i = 0; i < batch.mention_ids.size(); ++i) os << (i ? ", " : "") << batch.mention_ids[i];
  os << "]";
  return os.str();
}

}  // namespace

StepResult gradient_step(EmbedderPair& pair, AdamState& adam, const TrainingBatch& batch, Rng& dropout_rng) {
  LossResult lr = pairwise_contrastive_loss(pair, batch, true, &dropout_rng);
  if (!std::isfinite(lr.loss) || !lr.grad.all_finite()) {
    throw TrainingError("non-finite loss or gradient at step " + std::to_string(adam.step + 1) + " (loss " +
                        std::to_string(lr.loss) + ") on " + describe_batch(batch));
  }
  StepResult out;
  out.loss = lr.loss;
  out.lr = adam.effective_lr();
  out.skipped_anchors = lr.skipped_anchors;
  ++adam.step;
  if (lr.grad.all_zero()) return out;
  const auto t = static_cast<double>(adam.step);
  const double bc1 = 1.0 - std::pow(adam.config.beta1, t);
  const double bc2 = 1.0 - std::pow(adam.config.beta2, t);
  adam_update_net(pair.net_r, lr.grad.net_r, adam.m.net_r, adam.v.net_r, adam.config, out.lr, bc1, bc2);
  adam_update_net(pair.net_t, lr.grad.net_t, adam.m.net_t, adam.v.net_t, adam.config, out.lr, bc1, bc2);
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

template <typename Fn>
void for_each_parameter(EmbedderPair& pair, const PairGrad& grad, Fn&& fn) {
  auto visit = [&](DenseNet& net, const DenseNetGrad& g) {
    auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (Eigen::Index k = 0; k < layers[l].weight.size(); ++k) fn(layers[l].weight.data()[k], g.weight[l].data()[k]);
      for (Eigen::Index k = 0; k < layers[l].bias.size(); ++k) fn(layers[l].bias.data()[k], g.bias[l].data()[k]);
    }
  };
  visit(pair.net_r, grad.net_r);
  visit(pair.net_t, grad.net_t);
}

}  // namespace

GradientCheckResult gradient_check(const EmbedderPair& pair, const TrainingBatch& batch, double epsilon, double floor) {
  if (!(epsilon > 0.0)) throw ValidationError("gradient check step must be positive");
  EmbedderPair work = pair;
  GradientCheckResult out;
  // Perturbing a parameter by epsilon moves scores by roughly epsilon times
  // the input scale; keep every hinge well clear of its kink.
  const double clearance = 1e3 * epsilon;
  LossResult analytic = pairwise_contrastive_loss(work, batch);
  while (analytic.min_hinge_gap < clearance && out.retries < 16) {
    ++out.retries;
    work.margin = pair.margin + 0.0137 * static_cast<double>(out.retries);
    analytic = pairwise_contrastive_loss(work, batch);
  }
  out.margin_used = work.margin;
  for_each_parameter(work, analytic.grad, [&](double& p, double a) {
    const double saved = p;
    p = saved + epsilon;
    const double plus = pairwise_contrastive_loss(work, batch).loss;
    p = saved - epsilon;
    const double minus = pairwise_contrastive_loss(work, batch).loss;
    p = saved;
    const double numeric = (plus - minus) / (2.0 * epsilon);
    const double abs_err = std::abs(a - numeric);
    const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
    out.max_abs_error = std::max(out.max_abs_error, abs_err);
    out.max_relative_error = std::max(out.max_relative_error, rel);
    ++out.parameters;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr std::string_view kCheckpointMagic = "ENTLCKP1";

nlohmann::json net_header(const DenseNet& net) { return {{"dims", net.dims()}, {"keep_prob", net.keep_prob()}}; }

void write_net(binio::Writer& w, const DenseNet& net) {
  for (const auto& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.f64(l.weight(r, c));
    w.vec(l.bias);
  }
}

void write_grad(binio::Writer& w, const DenseNetGrad& g) {
  for (std::size_t l = 0; l < g.weight.size(); ++l) {
    for (Eigen::Index r = 0; r < g.weight[l].rows(); ++r)
      for (Eigen::Index c = 0; c < g.weight[l].cols(); ++c) w.f64(g.weight[l](r, c));
    w.vec(g.bias[l]);
  }
}

void read_grad(binio::Reader& rd, DenseNetGrad& g) {
  for (std::size_t l = 0; l < g.weight.size(); ++l) {
    for (Eigen::Index r = 0; r < g.weight[l].rows(); ++r)
      for (Eigen::Index c = 0; c < g.weight[l].cols(); ++c) g.weight[l](r, c) = rd.f64();
    g.bias[l] = rd.vec(static_cast<std::size_t>(g.bias[l].size()));
  }
}

DenseNet read_net(binio::Reader& rd, const nlohmann::json& h) {
  const auto dims = h.at("dims").get<std::vector<std::size_t>>();
  if (dims.size() < 2) throw FormatError("checkpoint network has fewer than two layer sizes");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer;
    layer.weight.resize(static_cast<Eigen::Index>(dims[l + 1]), static_cast<Eigen::Index>(dims[l]));
    layer.bias.resize(static_cast<Eigen::Index>(dims[l + 1]));
    layers.push_back(std::move(layer));
  }
  DenseNetGrad tmp;
  for (auto& l : layers) {
    tmp.weight.push_back(std::move(l.weight));
    tmp.bias.push_back(std::move(l.bias));
  }
  read_grad(rd, tmp);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight = std::move(tmp.weight[l]);
    layers[l].bias = std::move(tmp.bias[l]);
  }
  return DenseNet(std::move(layers), h.at("keep_prob").get<double>());
}

}  // namespace

std::string encode_checkpoint(const EmbedderPair& pair, const AdamState* adam, const nlohmann::json& extra) {
  nlohmann::json header = {
      {"format", "entlink-checkpoint"},
      {"version", 1},
      {"net_r", net_header(pair.net_r)},
      {"net_t", net_header(pair.net_t)},
      {"margin", pair.margin},
      {"seed", pair.seed},
      {"has_optimizer_state", adam != nullptr},
      {"extra", extra.is_null() ? nlohmann::json::object() : extra},
  };
  if (adam) {
    header["optimizer"] = {{"learning_rate", adam->config.learning_rate},
                           {"decay_rate", adam->config.decay_rate},
                           {"decay_steps", adam->config.decay_steps},
                           {"beta1", adam->config.beta1},
                           {"beta2", adam->config.beta2},
                           {"epsilon", adam->config.epsilon},
                           {"step", adam->step}};
  }
  const std::string h = header.dump();
  binio::Writer w;
  w.bytes(kCheckpointMagic);
  w.u64(h.size());
  w.bytes(h);
  write_net(w, pair.net_r);
  write_net(w, pair.net_t);
  if (adam) {
    write_grad(w, adam->m.net_r);
    write_grad(w, adam->m.net_t);
    write_grad(w, adam->v.net_r);
    write_grad(w, adam->v.net_t);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  binio::Reader rd(bytes, "checkpoint");
  if (rd.bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  const auto hlen = rd.u64();
  if (hlen > rd.remaining()) throw FormatError("checkpoint: truncated header");
  Checkpoint out;
  try {
    out.header = nlohmann::json::parse(rd.bytes(static_cast<std::size_t>(hlen)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: unreadable header: ") + e.what());
  }
  const auto& h = out.header;
  try {
    if (h.at("format") != "entlink-checkpoint") throw FormatError("checkpoint: unexpected format tag");
    if (h.at("version").get<int>() != 1) {
      throw FormatError("checkpoint: unsupported version " + std::to_string(h.at("version").get<int>()));
    }
    out.pair.net_r = read_net(rd, h.at("net_r"));
    out.pair.net_t = read_net(rd, h.at("net_t"));
    out.pair.margin = h.at("margin").get<double>();
    out.pair.seed = h.at("seed").get<std::uint64_t>();
    out.pair.validate();
    if (h.at("has_optimizer_state").get<bool>()) {
      const auto& o = h.at("optimizer");
      AdamConfig c;
      c.learning_rate = o.at("learning_rate").get<double>();
      c.decay_rate = o.at("decay_rate").get<double>();
      c.decay_steps = o.at("decay_steps").get<std::size_t>();
      c.beta1 = o.at("beta1").get<double>();
      c.beta2 = o.at("beta2").get<double>();
      c.epsilon = o.at("epsilon").get<double>();
      AdamState s = AdamState::for_pair(out.pair, c);
      s.step = o.at("step").get<std::size_t>();
      read_grad(rd, s.m.net_r);
      read_grad(rd, s.m.net_t);
      read_grad(rd, s.v.net_r);
      read_grad(rd, s.v.net_t);
      out.adam = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header field: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  if (!rd.done()) throw FormatError("checkpoint: " + std::to_string(rd.remaining()) + " trailing bytes");
  return out;
}

void save_checkpoint(const EmbedderPair& pair, const AdamState* adam, const nlohmann::json& extra,
                     const std::string& path) {
  write_file(path, encode_checkpoint(pair, adam, extra));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// Sampling

BatchSampler::BatchSampler(std::vector<GoldLink> trainable, std::vector<GoldLink> distractors, SamplerConfig config,
                           std::uint64_t seed)
    : config_(config), rng_(seed) {
  if (config_.entities_per_batch == 0 || config_.links_per_entity == 0)
    throw ValidationError("sampler needs at least one entity and one link per batch");
  for (const auto& l : trainable) links_by_entity_[l.tuple_key].push_back(l.mention_id);
  if (links_by_entity_.empty()) throw ValidationError("sampler has no trainable links");
  for (auto& [entity, ms] : links_by_entity_) {
    std::sort(ms.begin(), ms.end());
    ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
    entities_.push_back(entity);
    seen_[entity] = 0;
  }
  for (const auto& l : distractors) {
    if (links_by_entity_.count(l.tuple_key)) continue;
    distractor_links_[l.tuple_key].push_back(l.mention_id);
  }
  for (auto& [entity, ms] : distractor_links_) {
    std::sort(ms.begin(), ms.end());
    ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
    distractor_entities_.push_back(entity);
  }
}

SampledBatch BatchSampler::next() {
  SampledBatch out;
  std::set<std::string> mention_set;
  auto add_mention = [&](const std::string& id, bool anchor) {
    if (!mention_set.insert(id).second) return;
    out.mention_ids.push_back(id);
    out.mention_anchor.push_back(anchor ? 1 : 0);
  };

  // Weighted draw without replacement, weight 1 / (1 + seen).
  const std::size_t k = std::min(config_.entities_per_batch, entities_.size());
  std::vector<std::size_t> pool(entities_.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  for (std::size_t draw = 0; draw < k; ++draw) {
    double total = 0.0;
    for (auto idx : pool) total += 1.0 / (1.0 + static_cast<double>(seen_[entities_[idx]]));
    double r = rng_.uniform() * total;
    std::size_t pick = pool.size() - 1;
    for (std::size_t p = 0; p < pool.size(); ++p) {
      r -= 1.0 / (1.0 + static_cast<double>(seen_[entities_[pool[p]]]));
      if (r < 0.0) {
        pick = p;
        break;
      }
    }
    const std::string& entity = entities_[pool[pick]];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    out.tuple_keys.push_back(entity);
    out.tuple_anchor.push_back(1);
    out.entities.insert(entity);
    const auto& ms = links_by_entity_.at(entity);
    for (std::size_t l = 0; l < config_.links_per_entity; ++l) add_mention(ms[rng_.index(ms.size())], true);
  }
  for (const auto& e : out.tuple_keys) ++seen_[e];

  // Distinct distractor entities alternate between contributing their tuple
  // and one of their mentions, so no two distractors form a gold pair.
  const std::size_t d = std::min(config_.distractors_per_batch, distractor_entities_.size());
  std::vector<std::size_t> order(distractor_entities_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < d; ++i) {
    std::swap(order[i], order[i + rng_.index(order.size() - i)]);
    const std::string& entity = distractor_entities_[order[i]];
    out.entities.insert(entity);
    if (i % 2 == 0) {
      out.tuple_keys.push_back(entity);
      out.tuple_anchor.push_back(0);
    } else {
      const auto& ms = distractor_links_.at(entity);
      add_mention(ms[rng_.index(ms.size())], false);
    }
  }
  return out;
}

TrainingBatch assemble_batch(const SampledBatch& ids,
                             const std::function<const DenseVector&(const std::string&)>& tuple_vec,
                             const std::function<const DenseVector&(const std::string&)>& mention_vec,
                             const std::set<std::pair<std::string, std::string>>& gold) {
  TrainingBatch b;
  const auto nr = static_cast<Eigen::Index>(ids.tuple_keys.size());
  const auto nt = static_cast<Eigen::Index>(ids.mention_ids.size());
  if (nr == 0 || nt == 0) throw ValidationError("cannot assemble an empty batch");
  const DenseVector& t0 = tuple_vec(ids.tuple_keys[0]);
  const DenseVector& m0 = mention_vec(ids.mention_ids[0]);
  b.tuples.resize(t0.size(), nr);
  b.mentions.resize(m0.size(), nt);
  for (Eigen::Index i = 0; i < nr; ++i) {
    const DenseVector& v = tuple_vec(ids.tuple_keys[static_cast<std::size_t>(i)]);
    if (v.size() != t0.size()) throw ValidationError("tuple vectors in a batch differ in dimension");
    b.tuples.col(i) = v;
  }
  for (Eigen::Index j = 0; j < nt; ++j) {
    const DenseVector& v = mention_vec(ids.mention_ids[static_cast<std::size_t>(j)]);
    if (v.size() != m0.size()) throw ValidationError("mention vectors in a batch differ in dimension");
    b.mentions.col(j) = v;
  }
  b.positive.assign(static_cast<std::size_t>(nr * nt), 0);
  for (std::size_t i = 0; i < ids.tuple_keys.size(); ++i)
    for (std::size_t j = 0; j < ids.mention_ids.size(); ++j)
      if (gold.count({ids.tuple_keys[i], ids.mention_ids[j]})) b.positive[i * ids.mention_ids.size() + j] = 1;
  b.tuple_anchor = ids.tuple_anchor;
  b.mention_anchor = ids.mention_anchor;
  b.tuple_ids = ids.tuple_keys;
  b.mention_ids = ids.mention_ids;
  return b;
}

// ---------------------------------------------------------------------------

TrainSummary train_pair(EmbedderPair& pair, AdamState& adam, BatchSampler& sampler,
                        const std::function<TrainingBatch(const SampledBatch&)>& materialize,
                        const TrainOptions& options) {
  TrainSummary summary;
  Rng dropout(splitmix64(options.seed ^ 0x64726f706f7574ULL));
  for (std::size_t b = 0; b < options.batches; ++b) {
    const SampledBatch ids = sampler.next();
    summary.entities_seen.insert(ids.entities.begin(), ids.entities.end());
    const TrainingBatch batch = materialize(ids);
    const StepResult r = gradient_step(pair, adam, batch, dropout);
    if (b == 0) summary.first_loss = r.loss;
    summary.last_loss = r.loss;
    ++summary.steps;
    if (options.log) {
      std::ostringstream line;
      line.precision(9);
      line << adam.step << ' ' << r.lr << ' ' << r.loss << '\n';
      *options.log << line.str();
    }
  }
  return summary;
}

}  // namespace entlink
