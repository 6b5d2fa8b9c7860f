#include "fmil/discrim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <utility>

#include <json.hpp>

namespace fmil {

namespace {

using nlohmann::json;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double clip_symmetric(double x, double bound) {
  return std::min(std::max(x, -bound), bound);
}

}  // namespace

const char* adversarial_reward_name(AdversarialReward kind) {
  switch (kind) {
    case AdversarialReward::Gail: return "gail";
    case AdversarialReward::Airl: return "airl";
    default: return "fairl";
  }
}

AdversarialReward adversarial_reward_from_name(const std::string& name) {
  if (name == "gail") return AdversarialReward::Gail;
  if (name == "airl") return AdversarialReward::Airl;
  if (name == "fairl") return AdversarialReward::Fairl;
  throw ConfigError("unknown adversarial reward: " + name);
}

double adversarial_reward(AdversarialReward kind, double logit) {
  switch (kind) {
    case AdversarialReward::Gail: return -detail::softplus(-logit);
    case AdversarialReward::Airl: return logit;
    default: return std::exp(logit) * -logit;
  }
}

double fmax_reward(const FDivergence& div, double logit) {
  const double u = std::min(std::max(std::exp(logit), 1e-300), 1e300);
  return div.conjugate(div.optimal_t(u));
}

double policy_step_reward(AdversarialReward kind, double logit) {
  switch (kind) {
    case AdversarialReward::Gail: return -detail::softplus(-logit);
    case AdversarialReward::Airl: return logit;
    default: return std::exp(logit);
  }
}

ExactTabularDiscriminator::ExactTabularDiscriminator(const Eigen::MatrixXd& expert_joint,
                                                     const Eigen::MatrixXd& policy_joint,
                                                     double logit_clip)
    : logit_clip_(logit_clip) {
  if (expert_joint.rows() != policy_joint.rows() ||
      expert_joint.cols() != policy_joint.cols()) {
    throw ShapeMismatch("discriminator: occupancy shapes differ");
  }
  if (expert_joint.minCoeff() < 0.0 || policy_joint.minCoeff() < 0.0) {
    throw DomainViolation("discriminator: negative occupancy mass");
  }
  logits_.resize(expert_joint.rows(), expert_joint.cols());
  for (Eigen::Index s = 0; s < logits_.rows(); ++s) {
    for (Eigen::Index a = 0; a < logits_.cols(); ++a) {
      const double pe = expert_joint(s, a);
      const double pp = policy_joint(s, a);
      double ratio;
      if (pe == 0.0 && pp == 0.0) {
        ratio = 1.0;
      } else if (pp == 0.0) {
        ratio = detail::kRatioClampHi;
      } else {
        ratio = std::min(std::max(pe / pp, detail::kRatioClampLo), detail::kRatioClampHi);
      }
      logits_(s, a) = clip_symmetric(std::log(ratio), logit_clip_);
    }
  }
}

double ExactTabularDiscriminator::logit(int s, int a) const {
  if (s < 0 || s >= logits_.rows() || a < 0 || a >= logits_.cols()) {
    throw ShapeMismatch("discriminator: state-action index out of range");
  }
  return logits_(s, a);
}

double ExactTabularDiscriminator::probability(int s, int a) const {
  return sigmoid(logit(s, a));
}

InputNormalizer InputNormalizer::fit(const Eigen::MatrixXd& rows) {
  if (rows.rows() == 0) throw ShapeMismatch("normalizer: no rows to fit");
  InputNormalizer n;
  n.mean = rows.colwise().mean();
  n.std = ((rows.rowwise() - n.mean.transpose()).array().square().colwise().mean())
              .sqrt()
              .max(1e-6)
              .matrix();
  return n;
}

InputNormalizer InputNormalizer::identity(int dim) {
  InputNormalizer n;
  n.mean = Eigen::VectorXd::Zero(dim);
  n.std = Eigen::VectorXd::Ones(dim);
  return n;
}

Eigen::MatrixXd InputNormalizer::apply(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != mean.size()) throw ShapeMismatch("normalizer: feature width mismatch");
  return ((rows.rowwise() - mean.transpose()).array().rowwise() /
          std.transpose().array())
      .matrix();
}

Eigen::MatrixXd one_hot_features(int n_states, int n_actions, const std::vector<int>& states,
                                 const std::vector<int>& actions) {
  if (states.size() != actions.size()) {
    throw ShapeMismatch("one-hot features: state/action count mismatch");
  }
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(Eigen::Index(states.size()), n_states + n_actions);
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i] < 0 || states[i] >= n_states || actions[i] < 0 || actions[i] >= n_actions) {
      throw ShapeMismatch("one-hot features: index out of range");
    }
    rows(Eigen::Index(i), states[i]) = 1.0;
    rows(Eigen::Index(i), n_states + actions[i]) = 1.0;
  }
  return rows;
}

LearnedDiscriminator::LearnedDiscriminator(std::vector<int> layer_sizes, Activation activation,
                                           std::uint64_t seed, double logit_clip,
                                           double input_clip)
    : net_(std::move(layer_sizes), activation, seed),
      normalizer_(InputNormalizer::identity(net_.input_dim())),
      logit_clip_(logit_clip),
      input_clip_(input_clip) {
  if (net_.output_dim() != 1) throw ShapeMismatch("discriminator: needs a scalar logit output");
  if (!(input_clip_ > 0.0)) throw DomainViolation("discriminator: input clip must be positive");
}

Eigen::MatrixXd LearnedDiscriminator::preprocess(const Eigen::MatrixXd& rows) const {
  Eigen::MatrixXd out = normalizer_.apply(rows);
  if (std::isfinite(input_clip_)) {
    out = out.cwiseMax(-input_clip_).cwiseMin(input_clip_);
  }
  return out;
}

void LearnedDiscriminator::fit_normalizer(const Eigen::MatrixXd& expert_rows) {
  if (expert_rows.cols() != net_.input_dim()) {
    throw ShapeMismatch("discriminator: feature width mismatch");
  }
  normalizer_ = InputNormalizer::fit(expert_rows);
}

Eigen::VectorXd LearnedDiscriminator::raw_logits(const Eigen::MatrixXd& rows) const {
  const Eigen::MatrixXd normalized = normalizer_.apply(rows);
  if (!std::isfinite(input_clip_)) return net_.forward(normalized).col(0);
  const Eigen::MatrixXd boxed =
      normalized.cwiseMax(-input_clip_).cwiseMin(input_clip_);
  Eigen::VectorXd out = net_.forward(boxed).col(0);
  // No evidence beyond the box: report the most-anti-expert logit instead of
  // whatever the net extrapolates to at the boundary.
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if ((normalized.row(i).cwiseAbs().array() > input_clip_).any()) {
      out[i] = -logit_clip_;
    }
  }
  return out;
}

Eigen::VectorXd LearnedDiscriminator::logits(const Eigen::MatrixXd& rows) const {
  Eigen::VectorXd out = raw_logits(rows);
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = clip_symmetric(out[i], logit_clip_);
  return out;
}

DiscrimTrainStats LearnedDiscriminator::train_step(AdamOptimizer& opt,
                                                   const Eigen::MatrixXd& expert_rows,
                                                   const Eigen::MatrixXd& policy_rows,
                                                   double penalty_weight,
                                                   std::uint64_t penalty_seed) {
  if (expert_rows.rows() == 0 || policy_rows.rows() == 0) {
    throw ShapeMismatch("discriminator: empty training batch");
  }
  const Eigen::MatrixXd e = preprocess(expert_rows);
  const Eigen::MatrixXd p = preprocess(policy_rows);
  const Eigen::Index ne = e.rows();
  const Eigen::Index np = p.rows();

  Eigen::MatrixXd stacked(ne + np, e.cols());
  stacked.topRows(ne) = e;
  stacked.bottomRows(np) = p;

  Mlp::Trace trace;
  const Eigen::MatrixXd logits = net_.forward_traced(stacked, &trace);

  DiscrimTrainStats stats;
  Eigen::MatrixXd out_grad(ne + np, 1);
  for (Eigen::Index i = 0; i < ne; ++i) {
    stats.bce += detail::softplus(-logits(i, 0)) / ne;
    out_grad(i, 0) = (sigmoid(logits(i, 0)) - 1.0) / ne;
  }
  for (Eigen::Index i = 0; i < np; ++i) {
    stats.bce += detail::softplus(logits(ne + i, 0)) / np;
    out_grad(ne + i, 0) = sigmoid(logits(ne + i, 0)) / np;
  }
  Eigen::VectorXd grad = net_.backward(trace, out_grad);

  if (penalty_weight > 0.0) {
    const GradientPenalty gp = gradient_penalty(net_, e, p, penalty_weight, penalty_seed);
    stats.penalty = gp.value;
    grad += gp.param_grad;
  }
  stats.loss = stats.bce + stats.penalty;
  opt.step(net_.params(), grad);
  return stats;
}

std::string LearnedDiscriminator::to_checkpoint() const {
  json header;
  header["layer_sizes"] = net_.layer_sizes();
  header["activation"] = activation_name(net_.activation());
  header["seed"] = net_.seed();
  header["logit_clip"] = logit_clip_;
  if (std::isfinite(input_clip_)) header["input_clip"] = input_clip_;
  header["normalizer_mean"] = std::vector<double>(normalizer_.mean.data(),
                                                  normalizer_.mean.data() + normalizer_.mean.size());
  header["normalizer_std"] = std::vector<double>(normalizer_.std.data(),
                                                 normalizer_.std.data() + normalizer_.std.size());
  header["param_count"] = net_.params().size();

  std::string blob = header.dump();
  blob.push_back('\n');
  const std::size_t bytes = std::size_t(net_.params().size()) * sizeof(double);
  const std::size_t offset = blob.size();
  blob.resize(offset + bytes);
  std::memcpy(blob.data() + offset, net_.params().data(), bytes);
  return blob;
}

LearnedDiscriminator LearnedDiscriminator::from_checkpoint(const std::string& blob) {
  const std::size_t split = blob.find('\n');
  if (split == std::string::npos) throw ConfigError("checkpoint: missing header line");
  json header;
  try {
    header = json::parse(blob.substr(0, split));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: bad header: ") + e.what());
  }
  const double input_clip = header.contains("input_clip")
                                ? header.at("input_clip").get<double>()
                                : std::numeric_limits<double>::infinity();
  LearnedDiscriminator disc(header.at("layer_sizes").get<std::vector<int>>(),
                            activation_from_name(header.at("activation").get<std::string>()),
                            header.at("seed").get<std::uint64_t>(),
                            header.at("logit_clip").get<double>(), input_clip);
  const auto mean = header.at("normalizer_mean").get<std::vector<double>>();
  const auto std_vec = header.at("normalizer_std").get<std::vector<double>>();
  if (Eigen::Index(mean.size()) != disc.net_.input_dim() || mean.size() != std_vec.size()) {
    throw ConfigError("checkpoint: normalizer size mismatch");
  }
  disc.normalizer_.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
  disc.normalizer_.std = Eigen::Map<const Eigen::VectorXd>(std_vec.data(), std_vec.size());

  const std::size_t expected = header.at("param_count").get<std::size_t>();
  if (expected != std::size_t(disc.net_.params().size()) ||
      blob.size() - split - 1 != expected * sizeof(double)) {
    throw ConfigError("checkpoint: parameter block size mismatch");
  }
  std::memcpy(disc.net_.params().data(), blob.data() + split + 1, expected * sizeof(double));
  return disc;
}

void LearnedDiscriminator::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("checkpoint: cannot open " + path);
  const std::string blob = to_checkpoint();
  out.write(blob.data(), std::streamsize(blob.size()));
  if (!out) throw ConfigError("checkpoint: write failed for " + path);
}

LearnedDiscriminator LearnedDiscriminator::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingRun("checkpoint: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_checkpoint(buf.str());
}

}  // namespace fmil
