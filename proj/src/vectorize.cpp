#include "entlink/vectorize.hpp"

#include "entlink/binio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace entlink {

using nlohmann::json;

HashingEncoder::HashingEncoder(std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed), seed_mix_(splitmix64(seed)) {
  if (dim == 0) throw ValidationError("encoder dim must be positive");
}

std::vector<std::string> HashingEncoder::features(std::string_view text) {
  std::string norm = " ";
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = norm.size() > 1;
      continue;
    }
    if (pending_space) norm.push_back(' ');
    pending_space = false;
    norm.push_back(static_cast<char>(std::tolower(c)));
  }
  norm.push_back(' ');

  std::vector<std::string> out;
  for (std::size_t i = 0; i + 3 <= norm.size(); ++i) out.push_back("c:" + norm.substr(i, 3));
  if (norm == "  ") out.clear();
  for (auto& w : word_tokens(text)) out.push_back("w:" + w);
  return out;
}

DenseVector HashingEncoder::encode(std::string_view text) const {
  DenseVector v = DenseVector::Zero(static_cast<Eigen::Index>(dim_));
  for (const auto& f : features(text)) {
    const std::uint64_t h = splitmix64(fnv1a64(f) ^ seed_mix_);
    const auto bucket = static_cast<Eigen::Index>(h % dim_);
    v[bucket] += (h >> 63) ? -1.0 : 1.0;
  }
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

json HashingEncoder::config() const { return {{"type", "hashing"}, {"dim", dim_}, {"seed", seed_}}; }

DenseVector encode_text_baseline(const HashingEncoder& encoder, std::string_view text) {
  return encoder.encode(text);
}

std::shared_ptr<const TextEncoder> encoder_from_config(const json& config) {
  const auto type = config.value("type", std::string("hashing"));
  if (type != "hashing") throw ValidationError("unknown text encoder type '" + type + "'");
  return std::make_shared<HashingEncoder>(config.value("dim", std::size_t{256}),
                                          config.value("seed", std::uint64_t{0}));
}

// ---------------------------------------------------------------------------

VectorizerModel::VectorizerModel(std::shared_ptr<const TextEncoder> encoder, std::size_t fk_depth,
                                 std::string primary, std::map<std::string, RelationFit> fits)
    : encoder_(std::move(encoder)), fk_depth_(fk_depth), primary_(std::move(primary)), fits_(std::move(fits)) {
  if (!encoder_) throw ValidationError("vectorizer needs a text encoder");
  if (fk_depth_ < 1) throw ValidationError("fk_depth must be at least 1");
  if (!fits_.count(primary_)) throw ValidationError("vectorizer has no fit for relation " + primary_);
  // Every relation reachable within fk_depth hops must be fitted.
  std::set<std::pair<std::string, std::size_t>> visited;
  std::function<void(const std::string&, std::size_t)> check = [&](const std::string& rel, std::size_t depth) {
    if (!visited.emplace(rel, depth).second) return;
    auto it = fits_.find(rel);
    if (it == fits_.end()) throw ValidationError("vectorizer has no fit for relation " + rel);
    if (depth == 0) return;
    for (const auto& fk : it->second.schema.foreign_keys) check(fk.target_relation, depth - 1);
  };
  check(primary_, fk_depth_);
}

const RelationFit& VectorizerModel::fit(std::string_view relation) const {
  auto it = fits_.find(std::string(relation));
  if (it == fits_.end()) throw ValidationError("vectorizer was not fitted on relation " + std::string(relation));
  return it->second;
}

std::size_t VectorizerModel::attribute_dim(std::string_view relation, std::size_t attr) const {
  const auto& f = fit(relation);
  const auto& a = f.schema.attributes.at(attr);
  switch (a.kind) {
    case AttributeKind::Text: return encoder_->dim();
    case AttributeKind::Numeric: return 1;
    case AttributeKind::Categorical: return f.vocabulary.at(a.name).size() + 1;
  }
  return 0;
}

std::size_t VectorizerModel::dim_at(std::string_view relation, std::size_t depth) const {
  const auto& f = fit(relation);
  std::size_t dim = 0;
  for (std::size_t a = 0; a < f.schema.attributes.size(); ++a) dim += attribute_dim(relation, a);
  if (depth > 0) {
    for (const auto& fk : f.schema.foreign_keys) dim += dim_at(fk.target_relation, depth - 1);
  }
  return dim + f.schema.attributes.size() + f.schema.foreign_keys.size();
}

std::vector<BlockLayout> VectorizerModel::layout() const {
  const auto& f = fit(primary_);
  std::vector<BlockLayout> out;
  std::size_t offset = 0;
  for (std::size_t a = 0; a < f.schema.attributes.size(); ++a) {
    const auto d = attribute_dim(primary_, a);
    out.push_back({f.schema.attributes[a].name, offset, d});
    offset += d;
  }
  for (const auto& fk : f.schema.foreign_keys) {
    const auto d = dim_at(fk.target_relation, fk_depth_ - 1);
    out.push_back({fk.name, offset, d});
    offset += d;
  }
  const auto bits = f.schema.attributes.size() + f.schema.foreign_keys.size();
  out.push_back({"<presence>", offset, bits});
  return out;
}

DenseVector VectorizerModel::vectorize_attribute(std::string_view relation, std::size_t attr,
                                                 const std::optional<Scalar>& value) const {
  const auto& f = fit(relation);
  const auto& a = f.schema.attributes.at(attr);
  const auto dim = static_cast<Eigen::Index>(attribute_dim(relation, attr));
  DenseVector out = DenseVector::Zero(dim);
  if (!value) return out;
  switch (a.kind) {
    case AttributeKind::Text: {
      const auto* s = std::get_if<std::string>(&*value);
      return s ? encoder_->encode(*s) : encoder_->encode(std::to_string(std::get<double>(*value)));
    }
    case AttributeKind::Numeric: {
      const auto* x = std::get_if<double>(&*value);
      if (x == nullptr) {
        throw ValidationError("schema/tuple mismatch: text value in numeric column " + a.name);
      }
      const auto& st = f.numeric.at(a.name);
      out[0] = (*x - st.mean) / st.std;
      return out;
    }
    case AttributeKind::Categorical: {
      std::string token;
      if (const auto* s = std::get_if<std::string>(&*value)) {
        token = *s;
      } else {
        // Categories are compared as text; numbers use their JSON spelling.
        token = json(std::get<double>(*value)).dump();
      }
      const auto& vocab = f.vocabulary.at(a.name);
      auto it = std::lower_bound(vocab.begin(), vocab.end(), token);
      const auto slot = (it != vocab.end() && *it == token) ? static_cast<Eigen::Index>(it - vocab.begin())
                                                            : static_cast<Eigen::Index>(vocab.size());
      out[slot] = 1.0;
      return out;
    }
  }
  return out;
}

DenseVector VectorizerModel::embed_foreign_key(std::string_view relation, std::size_t fk,
                                               const std::vector<std::string>& keys, const TupleLookup& lookup,
                                               std::size_t depth, VectorizeDiagnostics* diag) const {
  if (depth < 1) throw ValidationError("embed_foreign_key needs depth >= 1");
  const auto& target = fit(relation).schema.foreign_keys.at(fk).target_relation;
  DenseVector sum = DenseVector::Zero(static_cast<Eigen::Index>(dim_at(target, depth - 1)));
  for (const auto& key : keys) {
    const TupleRecord* t = lookup ? lookup(target, key) : nullptr;
    if (t == nullptr) {
      if (diag) ++diag->dangling_keys;
      continue;
    }
    sum += vectorize_tuple_at(*t, depth - 1, lookup, diag);
  }
  return sum;
}

DenseVector VectorizerModel::vectorize_tuple_at(const TupleRecord& tuple, std::size_t depth,
                                                const TupleLookup& lookup, VectorizeDiagnostics* diag) const {
  const auto& f = fit(tuple.relation);
  const auto& schema = f.schema;
  if (tuple.values.size() != schema.attributes.size() || tuple.fk_values.size() != schema.foreign_keys.size()) {
    throw ValidationError("schema/tuple mismatch for tuple '" + tuple.key + "'");
  }
  DenseVector out(static_cast<Eigen::Index>(dim_at(tuple.relation, depth)));
  Eigen::Index offset = 0;
  auto put = [&](const DenseVector& block) {
    out.segment(offset, block.size()) = block;
    offset += block.size();
  };
  for (std::size_t a = 0; a < schema.attributes.size(); ++a) {
    put(vectorize_attribute(tuple.relation, a, tuple.values[a]));
  }
  if (depth > 0) {
    for (std::size_t j = 0; j < schema.foreign_keys.size(); ++j) {
      put(embed_foreign_key(tuple.relation, j, tuple.fk_values[j], lookup, depth, diag));
    }
  }
  for (const auto& v : tuple.values) out[offset++] = v ? 1.0 : 0.0;
  for (const auto& keys : tuple.fk_values) out[offset++] = keys.empty() ? 0.0 : 1.0;
  return out;
}

DenseVector VectorizerModel::vectorize_tuple(const TupleRecord& tuple, const TupleLookup& lookup,
                                             VectorizeDiagnostics* diag) const {
  if (tuple.relation != primary_) {
    throw ValidationError("vectorizer for " + primary_ + " cannot vectorize a tuple of " + tuple.relation);
  }
  return vectorize_tuple_at(tuple, fk_depth_, lookup, diag);
}

DenseVector VectorizerModel::vectorize_mention(const TextMention& mention) const {
  const auto d = static_cast<Eigen::Index>(encoder_->dim());
  DenseVector out(2 * d);
  out.head(d) = encoder_->encode(mention.mention_text);
  out.tail(d) = encoder_->encode(mention.sentence_text);
  return out;
}

json VectorizerModel::to_json() const {
  json rels = json::array();
  for (const auto& [name, f] : fits_) {
    json numeric = json::object();
    for (const auto& [col, st] : f.numeric) numeric[col] = {{"mean", st.mean}, {"std", st.std}};
    json vocab = json::object();
    for (const auto& [col, v] : f.vocabulary) vocab[col] = v;
    rels.push_back({{"schema", schema_to_json(f.schema)}, {"numeric", numeric}, {"vocabulary", vocab}});
  }
  json layout_j = json::array();
  for (const auto& b : layout()) layout_j.push_back({{"column", b.column}, {"offset", b.offset}, {"dim", b.dim}});
  return {{"format", "entlink-vectorizer"},
          {"version", 1},
          {"encoder", encoder_->config()},
          {"fk_depth", fk_depth_},
          {"primary", primary_},
          {"tuple_dim", tuple_dim()},
          {"mention_dim", mention_dim()},
          {"layout", layout_j},
          {"relations", rels}};
}

VectorizerModel VectorizerModel::from_json(const json& j) {
  if (j.value("format", std::string()) != "entlink-vectorizer" || j.value("version", 0) != 1) {
    throw FormatError("not an entlink-vectorizer v1 document");
  }
  std::map<std::string, RelationFit> fits;
  for (const auto& jr : j.at("relations")) {
    RelationFit f;
    f.schema = schema_from_json(jr.at("schema"));
    for (const auto& [col, st] : jr.at("numeric").items()) {
      f.numeric[col] = {st.at("mean").get<double>(), st.at("std").get<double>()};
    }
    for (const auto& [col, v] : jr.at("vocabulary").items()) f.vocabulary[col] = v.get<std::vector<std::string>>();
    fits.emplace(f.schema.name, std::move(f));
  }
  VectorizerModel model(encoder_from_config(j.at("encoder")), j.at("fk_depth").get<std::size_t>(),
                        j.at("primary").get<std::string>(), std::move(fits));
  if (model.tuple_dim() != j.at("tuple_dim").get<std::size_t>()) {
    throw FormatError("vectorizer layout does not match its recorded tuple_dim");
  }
  return model;
}

// ---------------------------------------------------------------------------

namespace {

RelationFit fit_relation(const FitInput& in) {
  RelationFit f;
  f.schema = *in.schema;
  const auto& schema = *in.schema;
  for (const auto* t : in.tuples) {
    if (t->relation != schema.name || t->values.size() != schema.attributes.size() ||
        t->fk_values.size() != schema.foreign_keys.size()) {
      throw ValidationError("schema/tuple mismatch: tuple '" + t->key + "' does not fit relation " + schema.name);
    }
  }
  for (std::size_t a = 0; a < schema.attributes.size(); ++a) {
    const auto& attr = schema.attributes[a];
    if (attr.kind == AttributeKind::Numeric) {
      std::vector<double> xs;
      for (const auto* t : in.tuples) {
        if (!t->values[a]) continue;
        const auto* x = std::get_if<double>(&*t->values[a]);
        if (x == nullptr) throw ValidationError("schema/tuple mismatch: text value in numeric column " + attr.name);
        xs.push_back(*x);
      }
      NumericStats st;
      if (!xs.empty()) {
        double sum = 0.0;
        for (double x : xs) sum += x;
        st.mean = sum / static_cast<double>(xs.size());
        double ss = 0.0;
        for (double x : xs) ss += (x - st.mean) * (x - st.mean);
        const double var = ss / static_cast<double>(xs.size());
        st.std = var > 0.0 ? std::sqrt(var) : 1.0;
      }
      if (!std::isfinite(st.mean) || !std::isfinite(st.std) || st.std <= 0.0) {
        throw ValidationError("non-finite statistics for numeric column " + attr.name);
      }
      f.numeric[attr.name] = st;
    } else if (attr.kind == AttributeKind::Categorical) {
      std::set<std::string> values;
      for (const auto* t : in.tuples) {
        if (!t->values[a]) continue;
        if (const auto* s = std::get_if<std::string>(&*t->values[a])) values.insert(*s);
        else values.insert(json(std::get<double>(*t->values[a])).dump());
      }
      f.vocabulary[attr.name] = {values.begin(), values.end()};
    }
  }
  return f;
}

}  // namespace

VectorizerModel fit_vectorizer(const FitInput& primary, const std::vector<FitInput>& related,
                               std::shared_ptr<const TextEncoder> encoder, std::size_t fk_depth) {
  if (primary.schema == nullptr) throw ValidationError("fit_vectorizer needs a schema");
  if (primary.tuples.empty()) throw ValidationError("fit_vectorizer needs a nonempty tuple set");
  std::map<std::string, RelationFit> fits;
  fits.emplace(primary.schema->name, fit_relation(primary));
  for (const auto& r : related) {
    if (r.schema == nullptr || r.schema->name == primary.schema->name) continue;
    fits.emplace(r.schema->name, fit_relation(r));
  }
  return VectorizerModel(std::move(encoder), fk_depth, primary.schema->name, std::move(fits));
}

VectorizerModel fit_vectorizer(const std::vector<TupleRecord>& tuples, const RelationSchema& schema,
                               std::shared_ptr<const TextEncoder> encoder, std::size_t fk_depth) {
  FitInput in{&schema, {}};
  for (const auto& t : tuples) in.tuples.push_back(&t);
  return fit_vectorizer(in, {}, std::move(encoder), fk_depth);
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kVecMagic = "ENTLVEC1";
constexpr std::uint32_t kVecVersion = 1;
}  // namespace

std::string encode_vector_file(const KeyedVectors& kv) {
  if (kv.keys.size() != kv.vectors.size()) throw ValidationError("keyed vectors: key/vector count mismatch");
  binio::Writer w;
  w.bytes(kVecMagic);
  w.u32(kVecVersion);
  w.u64(kv.source_fingerprint);
  w.u64(kv.keys.size());
  for (std::size_t i = 0; i < kv.keys.size(); ++i) {
    w.str(kv.keys[i]);
    w.u32(static_cast<std::uint32_t>(kv.vectors[i].size()));
    w.vec(kv.vectors[i]);
  }
  return w.take();
}

KeyedVectors decode_vector_file(std::string_view bytes) {
  binio::Reader r(bytes, "vector file");
  if (r.bytes(kVecMagic.size()) != kVecMagic) throw FormatError("vector file: bad magic");
  const auto version = r.u32();
  if (version != kVecVersion) {
    throw FormatError("vector file: version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kVecVersion) + ")");
  }
  KeyedVectors kv;
  kv.source_fingerprint = r.u64();
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    kv.keys.push_back(r.str());
    const auto dim = r.u32();
    kv.vectors.push_back(r.vec(dim));
  }
  if (!r.done()) throw FormatError("vector file: trailing bytes after last record");
  return kv;
}

void save_vectors(const KeyedVectors& kv, const std::string& path) { write_file(path, encode_vector_file(kv)); }

KeyedVectors load_vectors(const std::string& path) { return decode_vector_file(read_file(path)); }

}  // namespace entlink
