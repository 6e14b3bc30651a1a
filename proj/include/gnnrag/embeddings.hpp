#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "gnnrag/kg.hpp"

namespace gnnrag {

struct QuestionEmbedding {
  Eigen::MatrixXf tokens;  // num_tokens x dim
  Eigen::VectorXf cls;     // dim
};

/// Pretrained-LM outputs: one pooled vector per forward relation and the
/// token-level states of every question.
///
/// Inverse relations reuse their forward vector; `relation_input` appends a
/// +1/-1 direction flag, so model-facing relation inputs have dim + 1 entries.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t dim, Eigen::MatrixXf relations);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t relation_input_dim() const noexcept { return dim_ + 1; }
  std::size_t num_relations() const noexcept { return static_cast<std::size_t>(relations_.rows()); }
  const Eigen::MatrixXf& relations() const noexcept { return relations_; }

  /// [vector(forward_of(r)); +1 or -1]
  Eigen::VectorXd relation_input(RelationId r) const;

  void add_question(std::string id, QuestionEmbedding embedding);
  bool has_question(const std::string& id) const { return questions_.count(id) != 0; }
  const QuestionEmbedding& question(const std::string& id) const;
  const std::map<std::string, QuestionEmbedding>& questions() const noexcept { return questions_; }

  /// Shape and finiteness checks; throws DataError.
  void validate() const;

 private:
  std::size_t dim_ = 0;
  Eigen::MatrixXf relations_;
  std::map<std::string, QuestionEmbedding> questions_;
};

/// embeddings.bin: "GEMB", u32 version (1), u32 dim, u32 num_relations, the
/// relation rows as float32, u32 num_questions, then per question a
/// u32-length-prefixed UTF-8 id, u32 num_tokens, token rows and the cls row.
/// Little-endian throughout.
void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& file);
EmbeddingTable read_embeddings(const std::filesystem::path& file);
/// Reads and checks the relation count against the KG's forward relations.
EmbeddingTable load_embeddings(const std::filesystem::path& file, const KnowledgeGraph& kg);

struct HashEmbedding {
  Eigen::MatrixXd tokens;
  Eigen::VectorXd cls;
};

/// Deterministic stand-in for an LM encoder. Each whitespace token maps to a
/// unit vector drawn from a generator seeded by the token's hash; cls is the
/// normalized token mean. Empty text yields one zero row and a zero cls.
HashEmbedding hash_embed(std::string_view text, std::size_t dim);

/// Table built with hash_embed: relation rows from relation labels, question
/// matrices from question texts.
EmbeddingTable make_hash_table(const KnowledgeGraph& kg, const std::vector<Question>& questions,
                               std::size_t dim);

}  // namespace gnnrag
