#include "gnnrag/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gnnrag/binary_io.hpp"
#include "gnnrag/error.hpp"
#include "gnnrag/io.hpp"
#include "gnnrag/parallel.hpp"
#include "gnnrag/random.hpp"

namespace gnnrag {

void GnnConfig::validate() const {
  if (layers < 1) throw ConfigError("gnn.layers must be >= 1");
  if (hidden < 4) throw ConfigError("gnn.hidden must be >= 4");
  if (num_instructions() < 1) throw ConfigError("gnn.instructions must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("gnn.learning_rate must be positive");
  if (epochs < 0) throw ConfigError("gnn.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("gnn.batch_size must be >= 1");
}

namespace {

template <typename Derived>
std::span<double> view(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
template <typename Derived>
std::span<const double> view(const Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename Params, typename Fn>
void visit(Params& p, Fn&& fn) {
  fn(p.attention);
  fn(p.question_proj);
  fn(p.relation_proj);
  fn(p.relevance_weight);
  fn(p.relevance_bias);
  for (std::size_t l = 0; l < p.message_weight.size(); ++l) {
    fn(p.message_weight[l]);
    fn(p.message_bias[l]);
    fn(p.combine_weight[l]);
    fn(p.combine_bias[l]);
  }
  fn(p.seed_state);
  fn(p.output_weight);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::VectorXd softmax(const Eigen::VectorXd& x) {
  const double mx = x.maxCoeff();
  Eigen::VectorXd e = (x.array() - mx).exp();
  return e / e.sum();
}

}  // namespace

std::vector<std::span<double>> GnnParams::tensors() {
  std::vector<std::span<double>> out;
  visit(*this, [&](auto& t) { out.push_back(view(t)); });
  return out;
}

std::vector<std::span<const double>> GnnParams::tensors() const {
  std::vector<std::span<const double>> out;
  visit(*this, [&](const auto& t) { out.push_back(view(t)); });
  return out;
}

std::vector<std::string> GnnParams::tensor_names() const {
  std::vector<std::string> names = {"attention", "question_proj", "relation_proj",
                                    "relevance_weight", "relevance_bias"};
  for (std::size_t l = 0; l < message_weight.size(); ++l) {
    const auto s = std::to_string(l + 1);
    names.push_back("message_weight." + s);
    names.push_back("message_bias." + s);
    names.push_back("combine_weight." + s);
    names.push_back("combine_bias." + s);
  }
  names.push_back("seed_state");
  names.push_back("output_weight");
  return names;
}

std::size_t GnnParams::size() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.size();
  return n;
}

GnnParams GnnParams::zeros_like() const {
  GnnParams z = *this;
  for (auto t : z.tensors()) std::fill(t.begin(), t.end(), 0.0);
  return z;
}

void GnnParams::add_scaled(const GnnParams& other, double scale) {
  auto dst = tensors();
  auto src = other.tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t j = 0; j < dst[i].size(); ++j) dst[i][j] += scale * src[i][j];
  }
}

GnnModel::GnnModel(GnnConfig config, std::size_t embed_dim)
    : config_(std::move(config)), embed_dim_(embed_dim) {
  config_.validate();
  if (embed_dim_ == 0) throw ConfigError("embedding dim must be positive");
  const Eigen::Index d = config_.hidden;
  const Eigen::Index D = static_cast<Eigen::Index>(embed_dim_);
  const auto L = static_cast<std::size_t>(config_.layers);

  auto& p = params_;
  p.attention = RowMatrix::Zero(config_.num_instructions(), d);
  p.question_proj = RowMatrix::Zero(d, D);
  p.relation_proj = RowMatrix::Zero(d, D + 1);
  p.relevance_weight = Eigen::VectorXd::Zero(d);
  p.relevance_bias = Eigen::VectorXd::Zero(1);
  p.message_weight.assign(L, RowMatrix::Zero(d, 2 * d));
  p.message_bias.assign(L, Eigen::VectorXd::Zero(d));
  p.combine_weight.assign(L, RowMatrix::Zero(d, 2 * d));
  p.combine_bias.assign(L, Eigen::VectorXd::Zero(d));
  p.seed_state = Eigen::VectorXd::Zero(d);
  p.output_weight = Eigen::VectorXd::Zero(d);

  Rng rng(config_.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  auto names = p.tensor_names();
  auto tensors = p.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const bool is_bias = names[i].find("_bias") != std::string::npos &&
                         names[i] != "relevance_bias";
    for (auto& x : tensors[i]) {
      const double v = rng.uniform(-bound, bound);
      x = (is_bias && !config_.use_bias) ? 0.0 : v;
    }
  }
}

namespace {

struct Trace {
  RowMatrix projected;                             // T x d
  std::vector<Eigen::VectorXd> attention_weights;  // K vectors of length T
  RowMatrix instructions;                          // K x d
  std::vector<RelationId> relations;               // distinct relation ids in the subgraph
  std::vector<std::uint32_t> edge_relation;        // per triple, index into `relations`
  RowMatrix relation_inputs;                       // nrel x (D + 1)
  RowMatrix relation_hat;                          // nrel x d
  std::vector<RowMatrix> states;                   // L + 1 of N x d
  std::vector<RowMatrix> combine_pre;              // L of N x d
  std::vector<RowMatrix> messages;                 // L of N x d
  std::vector<RowMatrix> edge_pre;                 // L of E x d
  std::vector<Eigen::VectorXd> edge_omega;         // L of E
  std::vector<Eigen::VectorXd> relation_omega;     // L of nrel (soft mode only)
  Eigen::VectorXd logits;
  Eigen::VectorXd probabilities;
};

int instruction_for_layer(int layer, int num_instructions) {
  return std::min(layer, num_instructions) - 1;
}

void encode_impl(const GnnModel& model, const Eigen::MatrixXd& tokens, Trace& tr) {
  const auto& p = model.params();
  if (static_cast<std::size_t>(tokens.cols()) != model.embed_dim()) {
    throw DataError("question token width " + std::to_string(tokens.cols()) +
                    " does not match model embedding dim " + std::to_string(model.embed_dim()));
  }
  if (tokens.rows() == 0) throw DataError("question has no tokens");
  tr.projected = tokens * p.question_proj.transpose();
  const auto K = p.attention.rows();
  tr.instructions.resize(K, model.hidden());
  tr.attention_weights.resize(static_cast<std::size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) {
    Eigen::VectorXd scores = tr.projected * p.attention.row(k).transpose();
    tr.attention_weights[static_cast<std::size_t>(k)] = softmax(scores);
    tr.instructions.row(k) =
        tr.attention_weights[static_cast<std::size_t>(k)].transpose() * tr.projected;
  }
}

void forward_impl(const GnnModel& model, const Subgraph& sg, const EmbeddingTable& table,
                  const EdgeRelevance* oracle, Trace& tr) {
  const auto& p = model.params();
  const Eigen::Index N = static_cast<Eigen::Index>(sg.size());
  const Eigen::Index E = static_cast<Eigen::Index>(sg.triples.size());
  const Eigen::Index d = model.hidden();
  const int L = model.layers();
  const int K = static_cast<int>(p.attention.rows());
  if (N == 0) throw DataError("cannot run the GNN on an empty subgraph");
  if (table.relation_input_dim() != static_cast<std::size_t>(p.relation_proj.cols())) {
    throw DataError("embedding table dim does not match the model");
  }
  if (tr.instructions.rows() != K || tr.instructions.cols() != d) {
    throw DataError("instruction matrix must be K x hidden");
  }
  if (oracle && oracle->size() != sg.triples.size()) {
    throw DataError("oracle relevance needs one value per subgraph triple");
  }

  tr.relations.clear();
  for (const auto& t : sg.triples) tr.relations.push_back(t.relation);
  std::sort(tr.relations.begin(), tr.relations.end());
  tr.relations.erase(std::unique(tr.relations.begin(), tr.relations.end()), tr.relations.end());
  tr.edge_relation.resize(sg.triples.size());
  for (std::size_t e = 0; e < sg.triples.size(); ++e) {
    tr.edge_relation[e] = static_cast<std::uint32_t>(
        std::lower_bound(tr.relations.begin(), tr.relations.end(), sg.triples[e].relation) -
        tr.relations.begin());
  }
  const auto nrel = static_cast<Eigen::Index>(tr.relations.size());
  tr.relation_inputs.resize(nrel, p.relation_proj.cols());
  for (Eigen::Index j = 0; j < nrel; ++j) {
    tr.relation_inputs.row(j) =
        table.relation_input(tr.relations[static_cast<std::size_t>(j)]).transpose();
  }
  tr.relation_hat = tr.relation_inputs * p.relation_proj.transpose();

  tr.states.assign(static_cast<std::size_t>(L) + 1, RowMatrix());
  tr.combine_pre.assign(static_cast<std::size_t>(L), RowMatrix());
  tr.messages.assign(static_cast<std::size_t>(L), RowMatrix());
  tr.edge_pre.assign(static_cast<std::size_t>(L), RowMatrix());
  tr.edge_omega.assign(static_cast<std::size_t>(L), Eigen::VectorXd());
  tr.relation_omega.assign(static_cast<std::size_t>(L), Eigen::VectorXd());

  tr.states[0] = RowMatrix::Zero(N, d);
  for (auto s : sg.seeds) tr.states[0].row(s) = p.seed_state.transpose();

  for (int l = 0; l < L; ++l) {
    const auto ls = static_cast<std::size_t>(l);
    const RowMatrix& h = tr.states[ls];
    auto& omega = tr.edge_omega[ls];
    omega.resize(E);
    if (oracle) {
      for (Eigen::Index e = 0; e < E; ++e) omega[e] = (*oracle)[static_cast<std::size_t>(e)];
    } else {
      const auto k = instruction_for_layer(l + 1, K);
      Eigen::VectorXd gate = p.relevance_weight.cwiseProduct(tr.instructions.row(k).transpose());
      Eigen::VectorXd rel_omega = tr.relation_hat * gate;
      for (Eigen::Index j = 0; j < nrel; ++j) rel_omega[j] = sigmoid(rel_omega[j] + p.relevance_bias[0]);
      for (Eigen::Index e = 0; e < E; ++e) omega[e] = rel_omega[tr.edge_relation[static_cast<std::size_t>(e)]];
      tr.relation_omega[ls] = std::move(rel_omega);
    }

    const RowMatrix& wm = p.message_weight[ls];
    RowMatrix from_source = h * wm.leftCols(d).transpose();
    RowMatrix from_relation = tr.relation_hat * wm.rightCols(d).transpose();
    from_relation.rowwise() += p.message_bias[ls].transpose();

    RowMatrix& pre = tr.edge_pre[ls];
    pre.resize(E, d);
    RowMatrix msg = RowMatrix::Zero(N, d);
    for (Eigen::Index e = 0; e < E; ++e) {
      const auto& t = sg.triples[static_cast<std::size_t>(e)];
      pre.row(e) = from_source.row(t.head) + from_relation.row(tr.edge_relation[static_cast<std::size_t>(e)]);
      if (omega[e] != 0.0) msg.row(t.tail) += omega[e] * pre.row(e).cwiseMax(0.0);
    }

    const RowMatrix& wc = p.combine_weight[ls];
    RowMatrix z = h * wc.leftCols(d).transpose() + msg * wc.rightCols(d).transpose();
    z.rowwise() += p.combine_bias[ls].transpose();
    tr.states[ls + 1] = z.cwiseMax(0.0);
    tr.combine_pre[ls] = std::move(z);
    tr.messages[ls] = std::move(msg);
  }

  tr.logits = tr.states.back() * p.output_weight;
  tr.probabilities = softmax(tr.logits);
}

GnnParams backward_impl(const GnnModel& model, const Subgraph& sg, const Eigen::MatrixXd& tokens,
                        const Trace& tr, const Eigen::VectorXd& dlogits, bool oracle) {
  const auto& p = model.params();
  const Eigen::Index d = model.hidden();
  const int L = model.layers();
  const int K = static_cast<int>(p.attention.rows());
  const auto nrel = static_cast<Eigen::Index>(tr.relations.size());
  const bool bias = model.config().use_bias;

  GnnParams g = p.zeros_like();
  g.output_weight = tr.states.back().transpose() * dlogits;
  RowMatrix dh = dlogits * p.output_weight.transpose();
  RowMatrix dq = RowMatrix::Zero(K, d);
  RowMatrix drel = RowMatrix::Zero(nrel, d);

  for (int l = L - 1; l >= 0; --l) {
    const auto ls = static_cast<std::size_t>(l);
    const RowMatrix& h = tr.states[ls];
    const RowMatrix dz = dh.cwiseProduct((tr.combine_pre[ls].array() > 0.0).cast<double>().matrix());

    const RowMatrix& wc = p.combine_weight[ls];
    g.combine_weight[ls].leftCols(d) = dz.transpose() * h;
    g.combine_weight[ls].rightCols(d) = dz.transpose() * tr.messages[ls];
    if (bias) g.combine_bias[ls] = dz.colwise().sum().transpose();
    RowMatrix dh_prev = dz * wc.leftCols(d);
    const RowMatrix dmsg = dz * wc.rightCols(d);

    RowMatrix dsrc = RowMatrix::Zero(h.rows(), d);
    RowMatrix drel_msg = RowMatrix::Zero(nrel, d);
    Eigen::VectorXd domega = Eigen::VectorXd::Zero(nrel);
    const RowMatrix& pre = tr.edge_pre[ls];
    const auto& omega = tr.edge_omega[ls];
    for (std::size_t e = 0; e < sg.triples.size(); ++e) {
      const auto& t = sg.triples[e];
      const auto ei = static_cast<Eigen::Index>(e);
      const auto j = tr.edge_relation[e];
      auto grad_out = dmsg.row(t.tail);
      if (!oracle) domega[j] += grad_out.dot(pre.row(ei).cwiseMax(0.0));
      if (omega[ei] == 0.0) continue;
      Eigen::RowVectorXd dpre =
          omega[ei] * grad_out.cwiseProduct((pre.row(ei).array() > 0.0).cast<double>().matrix());
      dsrc.row(t.head) += dpre;
      drel_msg.row(j) += dpre;
    }

    const RowMatrix& wm = p.message_weight[ls];
    g.message_weight[ls].leftCols(d) = dsrc.transpose() * h;
    g.message_weight[ls].rightCols(d) = drel_msg.transpose() * tr.relation_hat;
    if (bias) g.message_bias[ls] = drel_msg.colwise().sum().transpose();
    dh_prev += dsrc * wm.leftCols(d);
    drel += drel_msg * wm.rightCols(d);

    if (!oracle) {
      const auto k = instruction_for_layer(l + 1, K);
      const auto& rel_omega = tr.relation_omega[ls];
      Eigen::VectorXd dx = domega.cwiseProduct(
          rel_omega.cwiseProduct((1.0 - rel_omega.array()).matrix()));
      const Eigen::VectorXd q = tr.instructions.row(k).transpose();
      const Eigen::VectorXd rel_dx = tr.relation_hat.transpose() * dx;
      g.relevance_weight += rel_dx.cwiseProduct(q);
      g.relevance_bias[0] += dx.sum();
      dq.row(k) += rel_dx.cwiseProduct(p.relevance_weight).transpose();
      drel += dx * p.relevance_weight.cwiseProduct(q).transpose();
    }
    dh = std::move(dh_prev);
  }

  for (auto s : sg.seeds) g.seed_state += dh.row(s).transpose();
  g.relation_proj = drel.transpose() * tr.relation_inputs;

  RowMatrix dproj = RowMatrix::Zero(tr.projected.rows(), d);
  for (int k = 0; k < K; ++k) {
    const auto& a = tr.attention_weights[static_cast<std::size_t>(k)];
    const Eigen::VectorXd dqk = dq.row(k).transpose();
    dproj += a * dqk.transpose();
    const Eigen::VectorXd da = tr.projected * dqk;
    const Eigen::VectorXd ds = a.cwiseProduct((da.array() - a.dot(da)).matrix());
    g.attention.row(k) = (tr.projected.transpose() * ds).transpose();
    dproj += ds * p.attention.row(k);
  }
  g.question_proj = dproj.transpose() * tokens;
  return g;
}

Eigen::MatrixXd question_tokens(const EmbeddingTable& table, const std::string& id) {
  return table.question(id).tokens.cast<double>();
}

/// Uniform target over answers present in the subgraph; empty when none are.
std::vector<LocalId> answer_locals(const Subgraph& sg, std::span<const EntityId> answers) {
  std::vector<LocalId> out;
  for (auto a : answers) {
    const long l = sg.local_of(a);
    if (l >= 0) out.push_back(static_cast<LocalId>(l));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double cross_entropy(const Eigen::VectorXd& logits, std::span<const LocalId> targets) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  const double w = 1.0 / static_cast<double>(targets.size());
  double loss = 0.0;
  for (auto t : targets) loss -= w * (logits[t] - lse);
  return loss;
}

NodeScores to_scores(Trace&& tr) {
  NodeScores s;
  s.probabilities = std::move(tr.probabilities);
  s.logits = std::move(tr.logits);
  s.final_states = tr.states.back();
  s.layer_states = std::move(tr.states);
  return s;
}

}  // namespace

RowMatrix encode_question(const GnnModel& model, const Eigen::MatrixXd& tokens) {
  Trace tr;
  encode_impl(model, tokens, tr);
  return tr.instructions;
}

RowMatrix encode_question(const GnnModel& model, const EmbeddingTable& table,
                          const std::string& question_id) {
  return encode_question(model, question_tokens(table, question_id));
}

double relevance(const GnnModel& model, const Eigen::VectorXd& instruction, RelationId relation,
                 const EmbeddingTable& table) {
  const auto& p = model.params();
  const Eigen::VectorXd r = p.relation_proj * table.relation_input(relation);
  return sigmoid(p.relevance_weight.dot(instruction.cwiseProduct(r)) + p.relevance_bias[0]);
}

NodeScores forward(const GnnModel& model, const Subgraph& subgraph, const RowMatrix& instructions,
                   const EmbeddingTable& table, const EdgeRelevance* oracle) {
  Trace tr;
  tr.instructions = instructions;
  forward_impl(model, subgraph, table, oracle, tr);
  return to_scores(std::move(tr));
}

std::optional<LossAndGradients> loss_and_gradients(const GnnModel& model, const Subgraph& subgraph,
                                                   const Eigen::MatrixXd& tokens,
                                                   std::span<const EntityId> answers,
                                                   const EmbeddingTable& table) {
  const auto targets = answer_locals(subgraph, answers);
  if (targets.empty()) return std::nullopt;
  Trace tr;
  encode_impl(model, tokens, tr);
  forward_impl(model, subgraph, table, nullptr, tr);

  Eigen::VectorXd dlogits = tr.probabilities;
  const double w = 1.0 / static_cast<double>(targets.size());
  for (auto t : targets) dlogits[t] -= w;

  LossAndGradients out;
  out.loss = cross_entropy(tr.logits, targets);
  out.gradients = backward_impl(model, subgraph, tokens, tr, dlogits, false);
  out.scores = to_scores(std::move(tr));
  return out;
}

std::optional<LossAndGradients> loss_and_gradients(const GnnModel& model, const Subgraph& subgraph,
                                                   const Question& question,
                                                   const EmbeddingTable& table) {
  return loss_and_gradients(model, subgraph, question_tokens(table, question.id), question.answers,
                            table);
}

double loss_only(const GnnModel& model, const Subgraph& subgraph, const Eigen::MatrixXd& tokens,
                 std::span<const EntityId> answers, const EmbeddingTable& table) {
  const auto targets = answer_locals(subgraph, answers);
  if (targets.empty()) return std::numeric_limits<double>::quiet_NaN();
  Trace tr;
  encode_impl(model, tokens, tr);
  forward_impl(model, subgraph, table, nullptr, tr);
  return cross_entropy(tr.logits, targets);
}

bool top1_is_answer(const NodeScores& scores, const Subgraph& subgraph, const Question& question) {
  Eigen::Index best = 0;
  scores.probabilities.maxCoeff(&best);  // first maximum, i.e. lowest local id
  const EntityId e = subgraph.nodes[static_cast<std::size_t>(best)];
  return std::find(question.answers.begin(), question.answers.end(), e) != question.answers.end();
}

double hits_at_1(const GnnModel& model, std::span<const TrainingExample> examples,
                 const EmbeddingTable& table, int jobs) {
  if (examples.empty()) return 0.0;
  std::vector<char> hit(examples.size(), 0);
  parallel_for(examples.size(), jobs, [&](std::size_t i) {
    const auto& ex = examples[i];
    const auto instr = encode_question(model, table, ex.question->id);
    const auto scores = forward(model, *ex.subgraph, instr, table);
    hit[i] = top1_is_answer(scores, *ex.subgraph, *ex.question) ? 1 : 0;
  });
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) /
         static_cast<double>(examples.size());
}

TrainResult train(GnnModel model, std::span<const TrainingExample> train_set,
                  std::span<const TrainingExample> validation_set, const EmbeddingTable& table,
                  const TrainOptions& options) {
  if (train_set.empty()) throw DataError("training set is empty");
  const auto& cfg = model.config();
  cfg.validate();

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  TrainResult result;
  result.model = model;
  result.best_epoch = options.start_epoch;
  double best_h1 = -1.0;

  GnnParams m1 = model.params().zeros_like();
  GnnParams m2 = m1;
  long step = 0;
  // Offset by the start epoch so resumed runs draw fresh permutations.
  Rng rng(cfg.seed ^ (0x5851f42d4c957f2dULL * static_cast<std::uint64_t>(options.start_epoch + 1)));
  std::vector<std::size_t> order(train_set.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t counted = 0;
    std::size_t skipped = 0;
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<std::optional<LossAndGradients>> results(end - start);
      parallel_for(end - start, options.jobs, [&](std::size_t i) {
        const auto& ex = train_set[order[start + i]];
        results[i] = loss_and_gradients(model, *ex.subgraph, *ex.question, table);
        if (results[i]) results[i]->scores = NodeScores{};
      });

      GnnParams grad = m1.zeros_like();
      std::size_t n = 0;
      double batch_loss = 0.0;
      for (auto& r : results) {
        if (!r) {
          ++skipped;
          continue;
        }
        batch_loss += r->loss;
        grad.add_scaled(r->gradients, 1.0);
        ++n;
      }
      if (n == 0) continue;
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError("training diverged at epoch " +
                              std::to_string(options.start_epoch + epoch) +
                              " (non-finite loss); lower gnn.learning_rate");
      }
      loss_sum += batch_loss;
      counted += n;

      ++step;
      const double inv_n = 1.0 / static_cast<double>(n);
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      auto theta = model.params().tensors();
      auto gs = grad.tensors();
      auto ms = m1.tensors();
      auto vs = m2.tensors();
      for (std::size_t t = 0; t < theta.size(); ++t) {
        for (std::size_t j = 0; j < theta[t].size(); ++j) {
          const double gj = gs[t][j] * inv_n;
          ms[t][j] = kBeta1 * ms[t][j] + (1.0 - kBeta1) * gj;
          vs[t][j] = kBeta2 * vs[t][j] + (1.0 - kBeta2) * gj * gj;
          theta[t][j] -= cfg.learning_rate * (ms[t][j] / c1) / (std::sqrt(vs[t][j] / c2) + kEps);
        }
      }
    }

    EpochLog entry;
    entry.epoch = options.start_epoch + epoch;
    entry.loss = counted ? loss_sum / static_cast<double>(counted) : 0.0;
    entry.skipped = skipped;
    entry.val_h1 = validation_set.empty() ? 0.0 : hits_at_1(model, validation_set, table, options.jobs);
    result.log.push_back(entry);
    if (options.on_epoch) options.on_epoch(entry);

    if (validation_set.empty() || entry.val_h1 > best_h1) {
      best_h1 = entry.val_h1;
      result.model = model;
      result.best_epoch = entry.epoch;
    }
  }
  return result;
}

namespace {
constexpr std::string_view kCheckpointMagic = "GNNM";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const GnnModel& model, const std::filesystem::path& file) {
  const auto& c = model.config();
  binary::Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.layers));
  w.u32(static_cast<std::uint32_t>(c.hidden));
  w.u32(static_cast<std::uint32_t>(c.num_instructions()));
  w.f64(c.learning_rate);
  w.u32(static_cast<std::uint32_t>(c.epochs));
  w.u32(static_cast<std::uint32_t>(c.batch_size));
  w.u64(c.seed);
  w.u32(c.relevance == RelevanceMode::Oracle ? 1u : 0u);
  w.u32(c.use_bias ? 1u : 0u);
  w.u32(static_cast<std::uint32_t>(model.embed_dim()));
  for (const auto& t : model.params().tensors()) {
    for (double x : t) w.f32(static_cast<float>(x));
  }
  write_file(file, w.data());
}

GnnModel load_checkpoint(const std::filesystem::path& file) {
  const std::string raw = read_file(file);
  binary::Reader r(raw, file.string());
  if (r.bytes(4) != kCheckpointMagic) throw DataError(file.string() + ": bad magic, expected GNNM");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw DataError(file.string() + ": unsupported checkpoint version " + std::to_string(v));
  }
  GnnConfig c;
  c.layers = static_cast<int>(r.u32());
  c.hidden = static_cast<int>(r.u32());
  c.instructions = static_cast<int>(r.u32());
  c.learning_rate = r.f64();
  c.epochs = static_cast<int>(r.u32());
  c.batch_size = static_cast<int>(r.u32());
  c.seed = r.u64();
  c.relevance = r.u32() == 1 ? RelevanceMode::Oracle : RelevanceMode::Soft;
  c.use_bias = r.u32() == 1;
  const auto embed_dim = r.u32();
  GnnModel model(c, embed_dim);
  for (auto t : model.params().tensors()) {
    for (auto& x : t) {
      const float f = r.f32();
      if (!std::isfinite(f)) throw DataError(file.string() + ": non-finite parameter");
      x = f;
    }
  }
  if (!r.done()) throw DataError(file.string() + ": trailing bytes after parameters");
  return model;
}

}  // namespace gnnrag
