#include "gnnrag/embeddings.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "gnnrag/binary_io.hpp"
#include "gnnrag/error.hpp"
#include "gnnrag/io.hpp"

namespace gnnrag {

namespace {

constexpr std::string_view kMagic = "GEMB";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kHashSeed = 0x9e3779b97f4a7c15ULL;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool all_finite(const Eigen::MatrixXf& m) { return m.allFinite(); }

}  // namespace

EmbeddingTable::EmbeddingTable(std::size_t dim, Eigen::MatrixXf relations)
    : dim_(dim), relations_(std::move(relations)) {
  if (dim_ == 0) throw DataError("embedding dim must be positive");
  if (static_cast<std::size_t>(relations_.cols()) != dim_ && relations_.rows() > 0) {
    throw DataError("relation matrix width does not match dim");
  }
}

Eigen::VectorXd EmbeddingTable::relation_input(RelationId r) const {
  const auto n = static_cast<RelationId>(relations_.rows());
  if (r >= 2 * n) throw DataError("no embedding for relation " + std::to_string(r));
  const bool inverse = r >= n;
  Eigen::VectorXd out(dim_ + 1);
  out.head(dim_) = relations_.row(inverse ? r - n : r).transpose().cast<double>();
  out[static_cast<Eigen::Index>(dim_)] = inverse ? -1.0 : 1.0;
  return out;
}

void EmbeddingTable::add_question(std::string id, QuestionEmbedding embedding) {
  if (static_cast<std::size_t>(embedding.tokens.cols()) != dim_ ||
      static_cast<std::size_t>(embedding.cls.size()) != dim_) {
    throw DataError("question '" + id + "' has wrong embedding dimension");
  }
  questions_.insert_or_assign(std::move(id), std::move(embedding));
}

const QuestionEmbedding& EmbeddingTable::question(const std::string& id) const {
  auto it = questions_.find(id);
  if (it == questions_.end()) throw DataError("no embedding for question '" + id + "'");
  return it->second;
}

void EmbeddingTable::validate() const {
  if (dim_ == 0) throw DataError("embedding dim must be positive");
  if (relations_.rows() > 0 && static_cast<std::size_t>(relations_.cols()) != dim_) {
    throw DataError("relation rows have wrong dimension");
  }
  if (!all_finite(relations_)) throw DataError("non-finite relation embedding");
  for (const auto& [id, q] : questions_) {
    if (static_cast<std::size_t>(q.tokens.cols()) != dim_ ||
        static_cast<std::size_t>(q.cls.size()) != dim_) {
      throw DataError("question '" + id + "' has wrong embedding dimension");
    }
    if (q.tokens.rows() == 0) throw DataError("question '" + id + "' has no tokens");
    if (!q.tokens.allFinite() || !q.cls.allFinite()) {
      throw DataError("non-finite embedding for question '" + id + "'");
    }
  }
}

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& file) {
  table.validate();
  binary::Writer w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(table.dim()));
  w.u32(static_cast<std::uint32_t>(table.num_relations()));
  const auto& rel = table.relations();
  for (Eigen::Index i = 0; i < rel.rows(); ++i) {
    for (Eigen::Index j = 0; j < rel.cols(); ++j) w.f32(rel(i, j));
  }
  w.u32(static_cast<std::uint32_t>(table.questions().size()));
  for (const auto& [id, q] : table.questions()) {
    w.str(id);
    w.u32(static_cast<std::uint32_t>(q.tokens.rows()));
    for (Eigen::Index i = 0; i < q.tokens.rows(); ++i) {
      for (Eigen::Index j = 0; j < q.tokens.cols(); ++j) w.f32(q.tokens(i, j));
    }
    for (Eigen::Index j = 0; j < q.cls.size(); ++j) w.f32(q.cls[j]);
  }
  write_file(file, w.data());
}

EmbeddingTable read_embeddings(const std::filesystem::path& file) {
  const std::string raw = read_file(file);
  binary::Reader r(raw, file.string());
  if (r.bytes(4) != kMagic) throw DataError(file.string() + ": bad magic, expected GEMB");
  if (const auto v = r.u32(); v != kVersion) {
    throw DataError(file.string() + ": unsupported version " + std::to_string(v));
  }
  const auto dim = r.u32();
  if (dim == 0) throw DataError(file.string() + ": dim must be positive");
  const auto num_rel = r.u32();
  Eigen::MatrixXf rel(num_rel, dim);
  for (std::uint32_t i = 0; i < num_rel; ++i) {
    for (std::uint32_t j = 0; j < dim; ++j) rel(i, j) = r.f32();
  }
  EmbeddingTable table(dim, std::move(rel));
  const auto num_q = r.u32();
  for (std::uint32_t k = 0; k < num_q; ++k) {
    std::string id = r.str();
    const auto num_tokens = r.u32();
    QuestionEmbedding q;
    q.tokens.resize(num_tokens, dim);
    for (std::uint32_t i = 0; i < num_tokens; ++i) {
      for (std::uint32_t j = 0; j < dim; ++j) q.tokens(i, j) = r.f32();
    }
    q.cls.resize(dim);
    for (std::uint32_t j = 0; j < dim; ++j) q.cls[j] = r.f32();
    table.add_question(std::move(id), std::move(q));
  }
  if (!r.done()) throw DataError(file.string() + ": trailing bytes after payload");
  table.validate();
  return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& file, const KnowledgeGraph& kg) {
  auto table = read_embeddings(file);
  if (table.num_relations() != kg.num_forward_relations()) {
    throw DataError(file.string() + ": " + std::to_string(table.num_relations()) +
                    " relation rows, KG has " + std::to_string(kg.num_forward_relations()));
  }
  return table;
}

HashEmbedding hash_embed(std::string_view text, std::size_t dim) {
  if (dim < 8) throw ConfigError("hash_embed requires dim >= 8");
  std::vector<std::string> tokens;
  {
    std::istringstream in{std::string(text)};
    for (std::string tok; in >> tok;) tokens.push_back(std::move(tok));
  }
  const auto d = static_cast<Eigen::Index>(dim);
  HashEmbedding out;
  if (tokens.empty()) {
    out.tokens = Eigen::MatrixXd::Zero(1, d);
    out.cls = Eigen::VectorXd::Zero(d);
    return out;
  }
  out.tokens.resize(static_cast<Eigen::Index>(tokens.size()), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::mt19937_64 gen(fnv1a(tokens[i]) ^ kHashSeed);
    Eigen::VectorXd v(d);
    // Raw 64-bit draws mapped to [-1, 1); distribution objects are not portable.
    for (Eigen::Index j = 0; j < d; ++j) {
      v[j] = static_cast<double>(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    }
    out.tokens.row(static_cast<Eigen::Index>(i)) = v.normalized().transpose();
  }
  Eigen::VectorXd mean = out.tokens.colwise().mean().transpose();
  const double norm = mean.norm();
  out.cls = norm > 0.0 ? Eigen::VectorXd(mean / norm) : Eigen::VectorXd::Zero(d);
  return out;
}

EmbeddingTable make_hash_table(const KnowledgeGraph& kg, const std::vector<Question>& questions,
                               std::size_t dim) {
  Eigen::MatrixXf rel(static_cast<Eigen::Index>(kg.num_forward_relations()),
                      static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < kg.num_forward_relations(); ++r) {
    rel.row(static_cast<Eigen::Index>(r)) =
        hash_embed(kg.relation_labels()[r], dim).cls.transpose().cast<float>();
  }
  EmbeddingTable table(dim, std::move(rel));
  for (const auto& q : questions) {
    auto e = hash_embed(q.text, dim);
    table.add_question(q.id, QuestionEmbedding{e.tokens.cast<float>(), e.cls.cast<float>()});
  }
  return table;
}

}  // namespace gnnrag
