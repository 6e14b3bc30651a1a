#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gnnrag/embeddings.hpp"
#include "gnnrag/kg.hpp"
#include "gnnrag/subgraph.hpp"

namespace gnnrag {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class RelevanceMode { Soft, Oracle };

struct GnnConfig {
  int layers = 3;
  int hidden = 64;
  /// Number of instruction vectors; 0 means "same as layers".
  int instructions = 0;
  double learning_rate = 1e-3;
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 0;
  RelevanceMode relevance = RelevanceMode::Soft;
  /// Affine biases in the message and combine layers. Disabling them gives
  /// psi(h, 0) = 0 when h = 0.
  bool use_bias = true;

  int num_instructions() const noexcept { return instructions > 0 ? instructions : layers; }
  /// Throws ConfigError unless layers >= 1, hidden >= 4, instructions >= 1.
  void validate() const;
};

/// All learnable tensors. Declaration order is the checkpoint order.
struct GnnParams {
  RowMatrix attention;           // K x d, one pooling vector per instruction
  RowMatrix question_proj;       // d x D
  RowMatrix relation_proj;       // d x (D + 1)
  Eigen::VectorXd relevance_weight;  // d
  Eigen::VectorXd relevance_bias;    // 1
  std::vector<RowMatrix> message_weight;       // per layer, d x 2d acting on [h_src; r]
  std::vector<Eigen::VectorXd> message_bias;   // per layer, d
  std::vector<RowMatrix> combine_weight;       // per layer, d x 2d acting on [h; msg]
  std::vector<Eigen::VectorXd> combine_bias;   // per layer, d
  Eigen::VectorXd seed_state;     // d
  Eigen::VectorXd output_weight;  // d

  /// Flat views over every tensor, in declaration order.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::vector<std::string> tensor_names() const;
  std::size_t size() const;

  /// Same shapes, all zeros.
  GnnParams zeros_like() const;
  void add_scaled(const GnnParams& other, double scale);
};

class GnnModel {
 public:
  GnnModel() = default;
  /// Uniform(-1/sqrt(d), 1/sqrt(d)) initialization from config.seed.
  GnnModel(GnnConfig config, std::size_t embed_dim);

  const GnnConfig& config() const noexcept { return config_; }
  GnnConfig& config() noexcept { return config_; }
  std::size_t embed_dim() const noexcept { return embed_dim_; }
  int hidden() const noexcept { return config_.hidden; }
  int layers() const noexcept { return config_.layers; }

  GnnParams& params() noexcept { return params_; }
  const GnnParams& params() const noexcept { return params_; }

 private:
  GnnConfig config_;
  std::size_t embed_dim_ = 0;
  GnnParams params_;
};

struct NodeScores {
  Eigen::VectorXd probabilities;
  Eigen::VectorXd logits;
  RowMatrix final_states;
  /// h^(0) .. h^(L); the per-layer reasoning process.
  std::vector<RowMatrix> layer_states;
};

/// Attention-pooled instructions q^(1..K) from a question's token matrix.
RowMatrix encode_question(const GnnModel& model, const Eigen::MatrixXd& tokens);
RowMatrix encode_question(const GnnModel& model, const EmbeddingTable& table,
                          const std::string& question_id);

/// sigmoid(u . (q (*) W_r r) + b)
double relevance(const GnnModel& model, const Eigen::VectorXd& instruction, RelationId relation,
                 const EmbeddingTable& table);

/// Per-triple relevance override used in oracle mode; one entry per
/// subgraph.triples element, each 0 or 1.
using EdgeRelevance = std::vector<double>;

NodeScores forward(const GnnModel& model, const Subgraph& subgraph, const RowMatrix& instructions,
                   const EmbeddingTable& table, const EdgeRelevance* oracle = nullptr);

struct LossAndGradients {
  double loss = 0.0;
  GnnParams gradients;
  NodeScores scores;
};

/// Cross-entropy against the uniform distribution over in-subgraph answers.
/// Returns nullopt (skip) when no answer lies in the subgraph.
std::optional<LossAndGradients> loss_and_gradients(const GnnModel& model, const Subgraph& subgraph,
                                                   const Question& question,
                                                   const EmbeddingTable& table);

/// Same as above with an explicit token matrix and answer set.
std::optional<LossAndGradients> loss_and_gradients(const GnnModel& model, const Subgraph& subgraph,
                                                   const Eigen::MatrixXd& tokens,
                                                   std::span<const EntityId> answers,
                                                   const EmbeddingTable& table);

double loss_only(const GnnModel& model, const Subgraph& subgraph, const Eigen::MatrixXd& tokens,
                 std::span<const EntityId> answers, const EmbeddingTable& table);

struct TrainingExample {
  const Subgraph* subgraph = nullptr;
  const Question* question = nullptr;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double val_h1 = 0.0;
  std::size_t skipped = 0;
};

struct TrainResult {
  GnnModel model;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

struct TrainOptions {
  int jobs = 1;
  /// Epoch numbering starts after this value (resumed runs).
  int start_epoch = 0;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Adam (0.9 / 0.999 / 1e-8) over mini-batches; keeps the checkpoint with the
/// best validation H@1 when a validation set is given.
TrainResult train(GnnModel model, std::span<const TrainingExample> train_set,
                  std::span<const TrainingExample> validation_set, const EmbeddingTable& table,
                  const TrainOptions& options = {});

/// 1 if the highest-probability node (ties: lowest local id) is an answer.
bool top1_is_answer(const NodeScores& scores, const Subgraph& subgraph, const Question& question);
double hits_at_1(const GnnModel& model, std::span<const TrainingExample> examples,
                 const EmbeddingTable& table, int jobs = 1);

/// "GNNM" checkpoint: version, config, embed dim, then tensors as float32.
void save_checkpoint(const GnnModel& model, const std::filesystem::path& file);
GnnModel load_checkpoint(const std::filesystem::path& file);

}  // namespace gnnrag
