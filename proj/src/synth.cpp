#include "entlink/synth.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace entlink {

namespace {

constexpr const char* kSyllables[] = {"ka", "lo", "mi", "ra", "te", "su", "vo", "ne",
                                      "pi", "da", "ro", "ze", "bu", "ta", "li", "mo"};
constexpr const char* kSuffixes[] = {"Tower", "Hall", "House", "Court", "Plaza", "Centre"};
constexpr std::size_t kFirstWords = 5;
constexpr std::size_t kSecondWords = 6;
constexpr const char* kKinds[] = {"office", "hotel", "residential", "museum"};
constexpr const char* kCountries[] = {"Norland", "Vesteria", "Quarmont"};

// Placeholders: {N} name, {P} place, {K} kind, {F} floors, {Y} year.
constexpr const char* kTemplates[] = {
    "{N} is a {K} building in {P}.",
    "Located in {P}, {N} has {F} floors.",
    "{N} was completed in {Y}.",
    "The {K} known as {N} stands in {P}.",
    "Construction of {N} finished in {Y} and it rises {F} floors.",
    "{N}, in {P}, is a {K} landmark.",
    "Visitors to {P} often see {N}.",
    "With {F} floors, {N} dominates the skyline of {P}.",
    "{N} opened in {Y}.",
    "Architects praised {N} after it was finished in {Y}.",
};

std::string capitalized(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::string syllable_word(Rng& rng, std::size_t syllables) {
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) w += kSyllables[rng.index(std::size(kSyllables))];
  return capitalized(w);
}

std::string underscored(std::string s) {
  std::replace(s.begin(), s.end(), ' ', '_');
  return s;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fill(std::string text, const std::vector<std::pair<std::string, std::string>>& subs) {
  for (const auto& [from, to] : subs) {
    for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
      text.replace(pos, from.size(), to);
    }
  }
  return text;
}

struct Place {
  std::string name;
  std::string country;
};

struct Entity {
  std::string name;
  std::size_t place = 0;
  std::string kind;
  int floors = 0;
  int year = 0;
};

}  // namespace

void SynthConfig::validate() const {
  if (categories.empty()) throw ValidationError("synth: at least one category is required");
  std::set<std::string> seen;
  for (const auto& c : categories) {
    if (c.empty() || !seen.insert(c).second) throw ValidationError("synth: category names must be unique and non-empty");
  }
  if (entities_per_category == 0 || mentions_per_entity == 0 || lexicalizations_per_entry == 0 || places == 0) {
    throw ValidationError("synth: counts must be positive");
  }
  if (entities_per_category > kFirstWords * kSecondWords || places > 200) {
    throw ValidationError("synth: too many names requested");
  }
}

std::string synth_webnlg_xml(const SynthConfig& config) {
  config.validate();
  Rng root(config.seed);
  std::ostringstream xml;
  xml << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<benchmark>\n  <entries>\n";
  std::size_t eid = 0;
  std::set<std::string> used;

  for (std::size_t c = 0; c < config.categories.size(); ++c) {
    const auto& category = config.categories[c];
    Rng rng = root.fork(c);

    std::vector<Place> places;
    while (places.size() < config.places) {
      auto name = syllable_word(rng, 3) + " City";
      if (!used.insert(name).second) continue;
      places.push_back({name, kCountries[rng.index(std::size(kCountries))]});
    }
    // Names combine one word from each of two small vocabularies and a
    // suffix, so an unseen name reuses words that occur in other names.
    std::vector<std::string> first, second;
    while (first.size() < kFirstWords) {
      auto w = syllable_word(rng, 3);
      if (used.insert(w).second) first.push_back(w);
    }
    while (second.size() < kSecondWords) {
      auto w = syllable_word(rng, 3);
      if (used.insert(w).second) second.push_back(w);
    }
    std::vector<Entity> entities;
    while (entities.size() < config.entities_per_category) {
      auto name = first[rng.index(first.size())] + " " + second[rng.index(second.size())] + " " + kSuffixes[0];
      if (!used.insert(name).second) continue;
      Entity e;
      e.name = std::move(name);
      e.place = rng.index(places.size());
      e.kind = kKinds[rng.index(std::size(kKinds))];
      e.floors = 3 + static_cast<int>(rng.index(78));
      e.year = 1890 + static_cast<int>(rng.index(131));
      entities.push_back(std::move(e));
    }

    for (const auto& e : entities) {
      const auto subject = underscored(e.name);
      const auto& place = places[e.place];
      const auto place_id = underscored(place.name);
      const std::vector<std::pair<std::string, std::string>> subs{{"{N}", e.name},
                                                                  {"{P}", place.name},
                                                                  {"{K}", e.kind},
                                                                  {"{F}", std::to_string(e.floors)},
                                                                  {"{Y}", std::to_string(e.year)}};
      std::size_t written = 0;
      // Odd entries repeat only the type fact; merging recovers the full tuple.
      for (std::size_t entry = 0; written < config.mentions_per_entity; ++entry) {
        std::vector<std::string> triples;
        if (entry % 2 == 0) {
          triples.push_back(subject + " | location | " + place_id);
          triples.push_back(place_id + " | country | " + place.country);
        }
        triples.push_back(subject + " | buildingType | " + e.kind);
        ++eid;
        xml << "    <entry category=\"" << xml_escape(category) << "\" eid=\"Id" << eid << "\" size=\""
            << triples.size() << "\">\n      <modifiedtripleset>\n";
        for (const auto& t : triples) xml << "        <mtriple>" << xml_escape(t) << "</mtriple>\n";
        xml << "      </modifiedtripleset>\n";
        for (std::size_t l = 0; l < config.lexicalizations_per_entry && written < config.mentions_per_entity; ++l) {
          const auto* tmpl = kTemplates[(written + rng.index(3)) % std::size(kTemplates)];
          xml << "      <lex comment=\"good\" lid=\"Id" << (l + 1) << "\">" << xml_escape(fill(tmpl, subs))
              << "</lex>\n";
          ++written;
        }
        xml << "    </entry>\n";
      }
    }
  }
  xml << "  </entries>\n</benchmark>\n";
  return xml.str();
}

Corpus synth_corpus(const SynthConfig& config) {
  const auto doc = parse_webnlg_document(synth_webnlg_xml(config));
  if (!doc.rejected.empty()) throw Error("synthetic entry rejected: " + doc.rejected.front());
  CorpusBuilder builder;
  builder.add(doc);
  return builder.build();
}

}  // namespace entlink
