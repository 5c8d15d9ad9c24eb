#include "entlink/corpus.hpp"

#include "entlink/xml.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>

namespace entlink {

using nlohmann::json;

std::string_view to_string(AttributeKind kind) {
  switch (kind) {
    case AttributeKind::Text: return "text";
    case AttributeKind::Numeric: return "numeric";
    case AttributeKind::Categorical: return "categorical";
  }
  return "text";
}

AttributeKind attribute_kind_from_string(std::string_view s) {
  if (s == "text") return AttributeKind::Text;
  if (s == "numeric") return AttributeKind::Numeric;
  if (s == "categorical") return AttributeKind::Categorical;
  throw ValidationError("unknown attribute kind '" + std::string(s) + "'");
}

std::optional<std::size_t> RelationSchema::attribute_index(std::string_view attr) const {
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (attributes[i].name == attr) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> RelationSchema::foreign_key_index(std::string_view fk) const {
  for (std::size_t i = 0; i < foreign_keys.size(); ++i) {
    if (foreign_keys[i].name == fk) return i;
  }
  return std::nullopt;
}

void RelationSchema::validate(const std::vector<std::string>& declared) const {
  if (name.empty()) throw ValidationError("relation schema without a name");
  std::set<std::string> seen;
  for (const auto& a : attributes) {
    if (a.name.empty()) throw ValidationError("relation " + name + ": empty attribute name");
    if (!seen.insert(a.name).second) {
      throw ValidationError("relation " + name + ": duplicate column '" + a.name + "'");
    }
  }
  for (const auto& fk : foreign_keys) {
    if (!seen.insert(fk.name).second) {
      throw ValidationError("relation " + name + ": duplicate column '" + fk.name + "'");
    }
    if (!declared.empty() &&
        std::find(declared.begin(), declared.end(), fk.target_relation) == declared.end()) {
      throw ValidationError("relation " + name + ": foreign key '" + fk.name +
                            "' targets undeclared relation '" + fk.target_relation + "'");
    }
  }
  if (!name_attribute.empty()) {
    auto idx = attribute_index(name_attribute);
    if (!idx || attributes[*idx].kind != AttributeKind::Text) {
      throw ValidationError("relation " + name + ": name attribute '" + name_attribute +
                            "' is not a text attribute");
    }
  }
}

// ---------------------------------------------------------------------------

Relation::Relation(RelationSchema schema, std::vector<TupleRecord> tuples)
    : schema_(std::move(schema)), tuples_(std::move(tuples)) {
  for (std::size_t i = 0; i < tuples_.size(); ++i) {
    const auto& t = tuples_[i];
    if (t.key.empty()) throw ValidationError("relation " + schema_.name + ": tuple with empty key");
    if (t.values.size() != schema_.attributes.size() ||
        t.fk_values.size() != schema_.foreign_keys.size()) {
      throw ValidationError("relation " + schema_.name + ": tuple '" + t.key +
                            "' does not match the schema arity");
    }
    if (t.relation != schema_.name) {
      throw ValidationError("tuple '" + t.key + "' belongs to relation '" + t.relation +
                            "', not '" + schema_.name + "'");
    }
    for (std::size_t a = 0; a < t.values.size(); ++a) {
      if (!t.values[a]) continue;
      const bool numeric = std::holds_alternative<double>(*t.values[a]);
      if (numeric != (schema_.attributes[a].kind == AttributeKind::Numeric)) {
        throw ValidationError("relation " + schema_.name + ": tuple '" + t.key +
                              "' has a value of the wrong kind in column '" +
                              schema_.attributes[a].name + "'");
      }
    }
    if (!index_.emplace(t.key, i).second) {
      throw ValidationError("relation " + schema_.name + ": duplicate key '" + t.key + "'");
    }
  }
}

const TupleRecord* Relation::find(std::string_view key) const {
  auto it = index_.find(std::string(key));
  return it == index_.end() ? nullptr : &tuples_[it->second];
}

Corpus::Corpus(std::vector<Relation> relations, std::vector<TextMention> mentions,
               std::vector<GoldLink> links)
    : relations_(std::move(relations)), mentions_(std::move(mentions)), links_(std::move(links)) {
  validate();
}

void Corpus::validate() {
  std::vector<std::string> names;
  for (const auto& r : relations_) {
    if (std::find(names.begin(), names.end(), r.schema().name) != names.end()) {
      throw ValidationError("duplicate relation '" + r.schema().name + "'");
    }
    names.push_back(r.schema().name);
  }
  for (const auto& r : relations_) r.schema().validate(names);

  dangling_fk_ = 0;
  for (const auto& r : relations_) {
    for (const auto& t : r.tuples()) {
      for (std::size_t j = 0; j < t.fk_values.size(); ++j) {
        const auto& target = r.schema().foreign_keys[j].target_relation;
        for (const auto& key : t.fk_values[j]) {
          if (find_tuple(target, key) == nullptr) ++dangling_fk_;
        }
      }
    }
  }

  for (std::size_t i = 0; i < mentions_.size(); ++i) {
    const auto& m = mentions_[i];
    if (m.id.empty()) throw ValidationError("mention with empty id");
    if (m.mention_text.empty()) throw ValidationError("mention '" + m.id + "' has empty text");
    if (m.span.start >= m.span.end) {
      throw ValidationError("mention '" + m.id + "' has an empty or inverted span");
    }
    if (!mention_index_.emplace(m.id, i).second) {
      throw ValidationError("duplicate mention id '" + m.id + "'");
    }
  }
  for (const auto& link : links_) {
    const auto* m = mention(link.mention_id);
    if (m == nullptr) {
      throw ValidationError("gold link references unknown mention '" + link.mention_id + "'");
    }
    const auto rel = relation_of(*m);
    if (find_tuple(rel, link.tuple_key) == nullptr) {
      throw ValidationError("gold link references unknown tuple '" + link.tuple_key +
                            "' in relation '" + rel + "'");
    }
  }
}

const Relation* Corpus::relation(std::string_view name) const {
  for (const auto& r : relations_) {
    if (r.schema().name == name) return &r;
  }
  return nullptr;
}

const TextMention* Corpus::mention(std::string_view id) const {
  auto it = mention_index_.find(std::string(id));
  return it == mention_index_.end() ? nullptr : &mentions_[it->second];
}

const TupleRecord* Corpus::find_tuple(std::string_view rel, std::string_view key) const {
  const auto* r = relation(rel);
  return r == nullptr ? nullptr : r->find(key);
}

std::string Corpus::relation_of(const TextMention& m) const {
  if (m.entity_category && relation(*m.entity_category) != nullptr) return *m.entity_category;
  if (relations_.size() == 1) return relations_.front().schema().name;
  throw ValidationError("mention '" + m.id + "' cannot be assigned to a relation");
}

std::vector<const TextMention*> Corpus::mentions_of(std::string_view rel) const {
  std::vector<const TextMention*> out;
  for (const auto& m : mentions_) {
    if (relation_of(m) == rel) out.push_back(&m);
  }
  return out;
}

std::vector<GoldLink> Corpus::links_of(std::string_view rel) const {
  std::vector<GoldLink> out;
  for (const auto& l : links_) {
    if (relation_of(*mention(l.mention_id)) == rel) out.push_back(l);
  }
  return out;
}

std::vector<std::string> Corpus::linked_entities(std::string_view rel) const {
  std::set<std::string> keys;
  for (const auto& l : links_of(rel)) keys.insert(l.tuple_key);
  return {keys.begin(), keys.end()};
}

// ---------------------------------------------------------------------------
// JSON

RelationSchema schema_from_json(const json& j) {
  RelationSchema s;
  s.name = j.at("name").get<std::string>();
  for (const auto& a : j.value("attributes", json::array())) {
    s.attributes.push_back({a.at("name").get<std::string>(),
                            attribute_kind_from_string(a.at("kind").get<std::string>()),
                            a.value("derived", false)});
  }
  for (const auto& fk : j.value("foreign_keys", json::array())) {
    s.foreign_keys.push_back({fk.at("name").get<std::string>(), fk.at("target").get<std::string>()});
  }
  s.name_attribute = j.value("name_attribute", std::string());
  return s;
}

json schema_to_json(const RelationSchema& s) {
  json attrs = json::array();
  for (const auto& a : s.attributes) {
    json ja = {{"name", a.name}, {"kind", std::string(to_string(a.kind))}};
    if (a.derived) ja["derived"] = true;
    attrs.push_back(std::move(ja));
  }
  json fks = json::array();
  for (const auto& fk : s.foreign_keys) fks.push_back({{"name", fk.name}, {"target", fk.target_relation}});
  json out = {{"name", s.name}, {"attributes", attrs}, {"foreign_keys", fks}};
  if (!s.name_attribute.empty()) out["name_attribute"] = s.name_attribute;
  return out;
}

json corpus_to_json(const Corpus& corpus) {
  json rels = json::array();
  for (const auto& r : corpus.relations()) {
    json tuples = json::array();
    for (const auto& t : r.tuples()) {
      json values = json::array();
      for (const auto& v : t.values) {
        if (!v) values.push_back(nullptr);
        else if (auto* d = std::get_if<double>(&*v)) values.push_back(*d);
        else values.push_back(std::get<std::string>(*v));
      }
      tuples.push_back({{"key", t.key}, {"values", values}, {"fk", t.fk_values}});
    }
    rels.push_back({{"schema", schema_to_json(r.schema())}, {"tuples", tuples}});
  }
  json mentions = json::array();
  for (const auto& m : corpus.mentions()) {
    json jm = {{"id", m.id},
               {"start", m.span.start},
               {"end", m.span.end},
               {"mention", m.mention_text},
               {"sentence", m.sentence_text}};
    if (m.entity_category) jm["category"] = *m.entity_category;
    mentions.push_back(std::move(jm));
  }
  json links = json::array();
  for (const auto& l : corpus.links()) links.push_back({l.tuple_key, l.mention_id});
  return {{"format", "entlink-corpus"}, {"version", 1}, {"relations", rels},
          {"mentions", mentions}, {"links", links}};
}

Corpus corpus_from_json(const json& j) {
  if (j.value("format", std::string()) != "entlink-corpus" || j.value("version", 0) != 1) {
    throw FormatError("not an entlink-corpus v1 document");
  }
  std::vector<Relation> relations;
  for (const auto& jr : j.at("relations")) {
    auto schema = schema_from_json(jr.at("schema"));
    std::vector<TupleRecord> tuples;
    for (const auto& jt : jr.at("tuples")) {
      TupleRecord t;
      t.relation = schema.name;
      t.key = jt.at("key").get<std::string>();
      for (const auto& v : jt.at("values")) {
        if (v.is_null()) t.values.emplace_back(std::nullopt);
        else if (v.is_number()) t.values.emplace_back(Scalar(v.get<double>()));
        else t.values.emplace_back(Scalar(v.get<std::string>()));
      }
      t.fk_values = jt.at("fk").get<std::vector<std::vector<std::string>>>();
      tuples.push_back(std::move(t));
    }
    relations.emplace_back(std::move(schema), std::move(tuples));
  }
  std::vector<TextMention> mentions;
  for (const auto& jm : j.at("mentions")) {
    TextMention m;
    m.id = jm.at("id").get<std::string>();
    m.span = {jm.at("start").get<std::size_t>(), jm.at("end").get<std::size_t>()};
    m.mention_text = jm.at("mention").get<std::string>();
    m.sentence_text = jm.at("sentence").get<std::string>();
    if (jm.contains("category")) m.entity_category = jm.at("category").get<std::string>();
    mentions.push_back(std::move(m));
  }
  std::vector<GoldLink> links;
  for (const auto& jl : j.at("links")) links.push_back({jl.at(0).get<std::string>(), jl.at(1).get<std::string>()});
  return Corpus(std::move(relations), std::move(mentions), std::move(links));
}

// ---------------------------------------------------------------------------
// Kind inference and value cleanup

namespace {

std::optional<double> parse_number(std::string_view s) {
  const auto t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string strip_quotes(std::string_view s) {
  auto t = trim(s);
  if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
  return t;
}

std::string underscores_to_spaces(std::string s) {
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

std::string collapse_ws(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
    } else {
      if (space) out.push_back(' ');
      space = false;
      out.push_back(c);
    }
  }
  return out;
}

std::optional<Scalar> make_value(AttributeKind kind, const std::string& raw) {
  if (kind == AttributeKind::Numeric) return Scalar(*parse_number(raw));
  return Scalar(underscores_to_spaces(raw));
}

Span locate(const std::string& needle, const std::string& haystack) {
  const auto pos = ascii_lower(haystack).find(ascii_lower(needle));
  if (pos == std::string::npos) return {0, needle.size()};
  return {pos, pos + needle.size()};
}

}  // namespace

AttributeKind infer_attribute_kind(const std::vector<std::string>& values) {
  if (values.empty()) return AttributeKind::Text;
  if (std::all_of(values.begin(), values.end(), [](const auto& v) { return parse_number(v).has_value(); })) {
    return AttributeKind::Numeric;
  }
  constexpr std::size_t kMaxCategories = 32;
  constexpr std::size_t kMaxTokenBytes = 32;
  std::set<std::string> distinct;
  for (const auto& v : values) {
    const auto clean = underscores_to_spaces(v);
    if (clean.size() > kMaxTokenBytes) return AttributeKind::Text;
    if (std::any_of(clean.begin(), clean.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
      return AttributeKind::Text;
    }
    distinct.insert(clean);
    if (distinct.size() > kMaxCategories) return AttributeKind::Text;
  }
  return AttributeKind::Categorical;
}

// ---------------------------------------------------------------------------
// WebNLG

namespace {

std::vector<Triple> read_triples(const xml::Element& entry) {
  const xml::Element* set = entry.child("modifiedtripleset");
  const char* item = "mtriple";
  if (set == nullptr || set->children_named(item).empty()) {
    set = entry.child("originaltripleset");
    item = "otriple";
  }
  std::vector<Triple> out;
  if (set == nullptr) return out;
  for (const auto* t : set->children_named(item)) {
    const auto text = collapse_ws(t->text);
    const auto a = text.find('|');
    const auto b = a == std::string::npos ? a : text.find('|', a + 1);
    if (b == std::string::npos) throw ParseError("triple is not 'subject | predicate | object'", t->offset);
    Triple tr{trim(text.substr(0, a)), trim(text.substr(a + 1, b - a - 1)), strip_quotes(text.substr(b + 1))};
    if (tr.subject.empty() || tr.predicate.empty()) throw ParseError("triple with empty subject or predicate", t->offset);
    out.push_back(std::move(tr));
  }
  return out;
}

WebnlgEntry entry_from_element(const xml::Element& el) {
  WebnlgEntry e;
  auto attr = [&](const char* name, std::string fallback) {
    const auto* v = el.attribute(name);
    return v ? *v : fallback;
  };
  e.eid = attr("eid", "entry@" + std::to_string(el.offset));
  e.category = attr("category", "default");
  e.size = attr("size", "");
  e.triples = read_triples(el);
  if (e.triples.empty()) throw RejectedEntryError("entry " + e.eid + " has an empty triple set");

  std::vector<std::string> subjects;
  std::map<std::string, std::size_t> subject_count;
  for (const auto& t : e.triples) {
    if (subject_count[t.subject]++ == 0) subjects.push_back(t.subject);
  }
  e.primary_subject = subjects.front();
  for (const auto& s : subjects) {
    if (subject_count[s] > subject_count[e.primary_subject]) e.primary_subject = s;
  }
  const std::set<std::string> subject_set(subjects.begin(), subjects.end());

  std::vector<std::string> predicates;
  std::map<std::string, bool> is_fk;
  for (const auto& t : e.triples) {
    if (!is_fk.count(t.predicate)) {
      predicates.push_back(t.predicate);
      is_fk[t.predicate] = false;
    }
    if (subject_set.count(t.object)) is_fk[t.predicate] = true;
  }

  e.schema.name = e.category;
  std::map<std::string, std::vector<std::string>> column_values;
  for (const auto& t : e.triples) {
    if (!is_fk[t.predicate]) column_values[t.predicate].push_back(t.object);
  }
  for (const auto& p : predicates) {
    if (is_fk[p]) e.schema.foreign_keys.push_back({p, e.category});
    else e.schema.attributes.push_back({p, infer_attribute_kind(column_values[p]), false});
  }

  for (const auto& s : subjects) {
    TupleRecord t;
    t.relation = e.category;
    t.key = s;
    t.values.resize(e.schema.attributes.size());
    t.fk_values.resize(e.schema.foreign_keys.size());
    for (const auto& tr : e.triples) {
      if (tr.subject != s) continue;
      if (auto a = e.schema.attribute_index(tr.predicate)) {
        if (!t.values[*a]) t.values[*a] = make_value(e.schema.attributes[*a].kind, tr.object);
      } else if (auto f = e.schema.foreign_key_index(tr.predicate)) {
        auto& list = t.fk_values[*f];
        if (std::find(list.begin(), list.end(), tr.object) == list.end()) list.push_back(tr.object);
      }
    }
    e.tuples.push_back(std::move(t));
  }

  const auto surface = underscores_to_spaces(e.primary_subject);
  std::size_t n = 0;
  for (const auto* lex : el.children_named("lex")) {
    const auto sentence = collapse_ws(lex->text);
    ++n;
    if (sentence.empty()) continue;
    const auto* lid = lex->attribute("lid");
    TextMention m;
    m.id = e.category + "/" + e.size + "/" + e.eid + "/" + (lid ? *lid : "lex" + std::to_string(n));
    m.mention_text = surface;
    m.sentence_text = sentence;
    m.span = locate(surface, sentence);
    m.entity_category = e.category;
    e.links.push_back({e.primary_subject, m.id});
    e.mentions.push_back(std::move(m));
  }
  if (e.mentions.empty()) throw RejectedEntryError("entry " + e.eid + " has no lexicalization");
  return e;
}

void collect_entries(const xml::Element& el, std::vector<const xml::Element*>& out) {
  if (el.name == "entry") {
    out.push_back(&el);
    return;
  }
  for (const auto& c : el.children) collect_entries(c, out);
}

}  // namespace

WebnlgEntry parse_webnlg_entry(std::string_view xml_text) {
  const auto root = xml::parse(xml_text);
  if (root.name != "entry") throw ParseError("expected an <entry> element, found <" + root.name + ">", root.offset);
  return entry_from_element(root);
}

WebnlgDocument parse_webnlg_document(std::string_view xml_text) {
  const auto root = xml::parse(xml_text);
  std::vector<const xml::Element*> elements;
  collect_entries(root, elements);
  WebnlgDocument doc;
  for (const auto* el : elements) {
    try {
      doc.entries.push_back(entry_from_element(*el));
    } catch (const RejectedEntryError& err) {
      doc.rejected.emplace_back(err.what());
    }
  }
  return doc;
}

void CorpusBuilder::add(const WebnlgDocument& doc) {
  for (const auto& e : doc.entries) add(e);
}

void CorpusBuilder::add(const WebnlgEntry& entry) {
  auto [it, fresh] = relations_.try_emplace(entry.category);
  if (fresh) category_order_.push_back(entry.category);
  auto& rel = it->second;

  std::set<std::string> subjects;
  for (const auto& t : entry.triples) subjects.insert(t.subject);

  for (const auto& t : entry.triples) {
    auto [fk_it, new_pred] = rel.is_fk.try_emplace(t.predicate, true);
    if (new_pred) rel.predicates.push_back(t.predicate);
    // A column stays a foreign key only while every object resolves in its entry.
    if (!subjects.count(t.object)) fk_it->second = false;

    auto [idx_it, new_tuple] = rel.index.try_emplace(t.subject, rel.tuples.size());
    if (new_tuple) rel.tuples.push_back({t.subject, {}});
    rel.tuples[idx_it->second].cells[t.predicate].values.push_back(t.object);
  }
  // The same eid/lid can recur across benchmark files; keep ids unique.
  std::map<std::string, std::string> renamed;
  for (auto m : entry.mentions) {
    const auto original = m.id;
    for (int copy = 2; !mention_ids_.insert(m.id).second; ++copy) {
      m.id = original + "#" + std::to_string(copy);
    }
    renamed[original] = m.id;
    mentions_.push_back(std::move(m));
  }
  for (auto l : entry.links) {
    l.mention_id = renamed.at(l.mention_id);
    links_.push_back(std::move(l));
  }
}

Corpus CorpusBuilder::build() const {
  std::vector<Relation> relations;
  for (const auto& category : category_order_) {
    const auto& rel = relations_.at(category);
    RelationSchema schema;
    schema.name = category;
    std::string name_col = "name";
    while (rel.is_fk.count(name_col)) name_col = "_" + name_col;
    schema.attributes.push_back({name_col, AttributeKind::Text, true});
    schema.name_attribute = name_col;
    for (const auto& p : rel.predicates) {
      if (rel.is_fk.at(p)) {
        schema.foreign_keys.push_back({p, category});
        continue;
      }
      std::vector<std::string> values;
      for (const auto& t : rel.tuples) {
        auto c = t.cells.find(p);
        if (c != t.cells.end()) values.push_back(c->second.values.front());
      }
      schema.attributes.push_back({p, infer_attribute_kind(values), false});
    }

    std::vector<TupleRecord> tuples;
    for (const auto& pt : rel.tuples) {
      TupleRecord t;
      t.relation = category;
      t.key = pt.key;
      t.values.resize(schema.attributes.size());
      t.fk_values.resize(schema.foreign_keys.size());
      t.values[0] = Scalar(underscores_to_spaces(pt.key));
      for (const auto& [pred, cell] : pt.cells) {
        if (auto a = schema.attribute_index(pred)) {
          t.values[*a] = make_value(schema.attributes[*a].kind, cell.values.front());
        } else if (auto f = schema.foreign_key_index(pred)) {
          for (const auto& v : cell.values) {
            auto& list = t.fk_values[*f];
            if (std::find(list.begin(), list.end(), v) == list.end()) list.push_back(v);
          }
        }
      }
      tuples.push_back(std::move(t));
    }
    relations.emplace_back(std::move(schema), std::move(tuples));
  }
  return Corpus(std::move(relations), mentions_, links_);
}

// ---------------------------------------------------------------------------
// Delimited text

std::vector<std::vector<std::string>> parse_delimited(std::string_view text, char delimiter) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false;
  bool cell_started = false;
  std::size_t i = 0;
  auto end_row = [&] {
    row.push_back(std::move(cell));
    cell.clear();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
    cell_started = false;
  };
  if (text.substr(0, 3) == "\xEF\xBB\xBF") i = 3;
  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"' && !cell_started) {
      quoted = true;
      cell_started = true;
    } else if (c == delimiter) {
      row.push_back(std::move(cell));
      cell.clear();
      cell_started = false;
    } else if (c == '\n') {
      end_row();
    } else if (c == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') continue;
      end_row();
    } else {
      cell.push_back(c);
      cell_started = true;
    }
  }
  if (quoted) throw ParseError("unterminated quoted cell", text.size());
  if (cell_started || !row.empty()) end_row();
  return rows;
}

std::vector<TupleRecord> load_relation_table(const RelationSchema& schema, std::string_view text,
                                             char delimiter) {
  const auto rows = parse_delimited(text, delimiter);
  if (rows.empty()) throw ValidationError("relation table for " + schema.name + " has no header row");
  const auto& header = rows.front();
  std::vector<std::string> expected{header.empty() ? std::string("key") : header[0]};
  for (const auto& a : schema.attributes) expected.push_back(a.name);
  for (const auto& fk : schema.foreign_keys) expected.push_back(fk.name);
  if (header != expected) {
    std::string want;
    for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
    throw ValidationError("header mismatch for relation " + schema.name + ": expected key column then " + want);
  }

  std::vector<TupleRecord> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const auto line = std::to_string(r + 1);
    if (row.size() != expected.size()) {
      throw ParseError("row " + line + ": expected " + std::to_string(expected.size()) + " cells, found " +
                       std::to_string(row.size()));
    }
    TupleRecord t;
    t.relation = schema.name;
    t.key = trim(row[0]);
    if (t.key.empty()) throw ParseError("row " + line + ": empty key");
    for (std::size_t a = 0; a < schema.attributes.size(); ++a) {
      const auto& cell = row[1 + a];
      if (cell.empty()) {
        t.values.emplace_back(std::nullopt);
      } else if (schema.attributes[a].kind == AttributeKind::Numeric) {
        auto v = parse_number(cell);
        if (!v) {
          throw ParseError("row " + line + ", column \"" + schema.attributes[a].name + "\": cannot parse '" +
                           cell + "' as a number");
        }
        t.values.emplace_back(Scalar(*v));
      } else {
        t.values.emplace_back(Scalar(cell));
      }
    }
    for (std::size_t f = 0; f < schema.foreign_keys.size(); ++f) {
      std::vector<std::string> keys;
      const auto& cell = row[1 + schema.attributes.size() + f];
      std::size_t start = 0;
      while (!cell.empty() && start <= cell.size()) {
        auto bar = cell.find('|', start);
        if (bar == std::string::npos) bar = cell.size();
        auto k = trim(std::string_view(cell).substr(start, bar - start));
        if (!k.empty()) keys.push_back(std::move(k));
        start = bar + 1;
      }
      t.fk_values.push_back(std::move(keys));
    }
    out.push_back(std::move(t));
  }
  return out;
}

namespace {
void expect_header(const std::vector<std::vector<std::string>>& rows, const std::vector<std::string>& want,
                   const char* what) {
  if (rows.empty() || rows.front() != want) {
    std::string joined;
    for (const auto& w : want) joined += (joined.empty() ? "" : ",") + w;
    throw ValidationError(std::string("header mismatch in ") + what + " file: expected " + joined);
  }
}

std::size_t parse_offset(const std::string& cell, std::size_t row, const char* column) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw ParseError("row " + std::to_string(row) + ", column \"" + column + "\": not an offset: '" + cell + "'");
  }
  return v;
}
}  // namespace

std::vector<TextMention> load_mentions(std::string_view text, char delimiter) {
  const auto rows = parse_delimited(text, delimiter);
  expect_header(rows, {"id", "start", "end", "mention_text", "sentence_text", "category"}, "mention");
  std::vector<TextMention> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 6) throw ParseError("mention row " + std::to_string(r + 1) + ": expected 6 cells");
    TextMention m;
    m.id = row[0];
    m.span = {parse_offset(row[1], r + 1, "start"), parse_offset(row[2], r + 1, "end")};
    m.mention_text = row[3];
    m.sentence_text = row[4];
    if (!row[5].empty()) m.entity_category = row[5];
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<GoldLink> load_gold_links(std::string_view text, char delimiter) {
  const auto rows = parse_delimited(text, delimiter);
  expect_header(rows, {"tuple_key", "mention_id"}, "gold link");
  std::vector<GoldLink> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 2) throw ParseError("gold row " + std::to_string(r + 1) + ": expected 2 cells");
    out.push_back({rows[r][0], rows[r][1]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Unseen: return "unseen";
  }
  return "train";
}

void SplitSpec::validate() const {
  auto open_unit = [](double x) { return x > 0.0 && x < 1.0; };
  if (!open_unit(unseen_fraction) || !open_unit(test_fraction_of_seen)) {
    throw ValidationError("split fractions must lie in (0, 1)");
  }
}

EntitySplits make_splits(std::vector<std::string> keys, const SplitSpec& spec) {
  spec.validate();
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  const auto n = keys.size();
  if (n < 5) throw ValidationError("need at least 5 entities to split, got " + std::to_string(n));
  const auto n_unseen = static_cast<std::size_t>(std::lround(spec.unseen_fraction * static_cast<double>(n)));
  const auto seen = n - n_unseen;
  const auto n_test = static_cast<std::size_t>(std::lround(spec.test_fraction_of_seen * static_cast<double>(seen)));
  const auto n_train = seen - std::min(seen, n_test);
  if (n_unseen == 0 || n_test == 0 || n_train == 0 || n_unseen >= n) {
    throw ValidationError("too few entities (" + std::to_string(n) + ") to populate train, test and unseen");
  }

  Rng rng(spec.seed);
  rng.shuffle(keys);
  EntitySplits out;
  out.unseen.assign(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(n_unseen));
  out.test.assign(keys.begin() + static_cast<std::ptrdiff_t>(n_unseen),
                  keys.begin() + static_cast<std::ptrdiff_t>(n_unseen + n_test));
  out.train.assign(keys.begin() + static_cast<std::ptrdiff_t>(n_unseen + n_test), keys.end());
  std::sort(out.unseen.begin(), out.unseen.end());
  std::sort(out.test.begin(), out.test.end());
  std::sort(out.train.begin(), out.train.end());
  return out;
}

std::optional<Split> SplitManifest::split_of(std::string_view category, std::string_view key) const {
  auto it = categories.find(std::string(category));
  if (it == categories.end()) return std::nullopt;
  auto has = [&](const std::vector<std::string>& v) { return std::binary_search(v.begin(), v.end(), key); };
  if (has(it->second.train)) return Split::Train;
  if (has(it->second.test)) return Split::Test;
  if (has(it->second.unseen)) return Split::Unseen;
  return std::nullopt;
}

SplitManifest make_stratified_splits(const Corpus& corpus, const SplitSpec& spec) {
  SplitManifest out;
  out.spec = spec;
  for (const auto& r : corpus.relations()) {
    const auto& name = r.schema().name;
    auto entities = corpus.linked_entities(name);
    if (entities.empty()) {
      for (const auto& t : r.tuples()) entities.push_back(t.key);
    }
    SplitSpec local = spec;
    local.seed = splitmix64(spec.seed ^ fnv1a64(name));
    try {
      out.categories[name] = make_splits(std::move(entities), local);
    } catch (const ValidationError& e) {
      throw ValidationError("category " + name + ": " + e.what());
    }
  }
  return out;
}

json splits_to_json(const SplitManifest& m) {
  json cats = json::object();
  for (const auto& [name, s] : m.categories) {
    cats[name] = {{"train", s.train}, {"test", s.test}, {"unseen", s.unseen}};
  }
  return {{"format", "entlink-splits"},
          {"version", 1},
          {"seed", m.spec.seed},
          {"unseen_fraction", m.spec.unseen_fraction},
          {"test_fraction_of_seen", m.spec.test_fraction_of_seen},
          {"categories", cats}};
}

SplitManifest splits_from_json(const json& j) {
  if (j.value("format", std::string()) != "entlink-splits" || j.value("version", 0) != 1) {
    throw FormatError("not an entlink-splits v1 document");
  }
  SplitManifest m;
  m.spec.seed = j.at("seed").get<std::uint64_t>();
  m.spec.unseen_fraction = j.at("unseen_fraction").get<double>();
  m.spec.test_fraction_of_seen = j.at("test_fraction_of_seen").get<double>();
  for (const auto& [name, s] : j.at("categories").items()) {
    EntitySplits e;
    e.train = s.at("train").get<std::vector<std::string>>();
    e.test = s.at("test").get<std::vector<std::string>>();
    e.unseen = s.at("unseen").get<std::vector<std::string>>();
    m.categories[name] = std::move(e);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Stats

double tuple_density(const RelationSchema& schema, const TupleRecord& tuple) {
  std::size_t cells = 0;
  std::size_t filled = 0;
  for (std::size_t a = 0; a < schema.attributes.size(); ++a) {
    if (schema.attributes[a].derived) continue;
    ++cells;
    if (tuple.values[a]) ++filled;
  }
  for (const auto& fk : tuple.fk_values) {
    ++cells;
    if (!fk.empty()) ++filled;
  }
  return cells == 0 ? 0.0 : static_cast<double>(filled) / static_cast<double>(cells);
}

std::vector<CategoryStats> corpus_stats(const Corpus& corpus) {
  std::vector<CategoryStats> out;
  for (const auto& r : corpus.relations()) {
    CategoryStats s;
    const auto& schema = r.schema();
    s.category = schema.name;
    s.instances = corpus.linked_entities(schema.name).size();
    s.tuples = r.tuples().size();
    s.sentences = corpus.mentions_of(schema.name).size();
    s.sentences_per_instance =
        s.instances == 0 ? 0.0 : static_cast<double>(s.sentences) / static_cast<double>(s.instances);
    for (const auto& a : schema.attributes) s.columns += a.derived ? 0 : 1;
    s.columns += schema.foreign_keys.size();
    double total = 0.0;
    for (const auto& t : r.tuples()) total += tuple_density(schema, t);
    s.avg_tuple_density = r.tuples().empty() ? 0.0 : total / static_cast<double>(r.tuples().size());
    out.push_back(s);
  }
  return out;
}

}  // namespace entlink
