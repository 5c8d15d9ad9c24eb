#pragma once

#include "entlink/corpus.hpp"

#include <string>
#include <vector>

namespace entlink {

/// Generator for WebNLG-shaped benchmark XML with known gold links.
///
/// Each entity gets a syllable name, a categorical type and a foreign key to
/// a place entity; its mentions are template sentences that name it, often
/// alongside numbers that appear nowhere in the tables. Names are built from small shared word vocabularies, so the
/// hashed features of an entity never trained on are combinations of
/// features seen in training.
struct SynthConfig {
  std::vector<std::string> categories{"Building"};
  std::size_t entities_per_category = 30;
  std::size_t mentions_per_entity = 10;
  std::size_t lexicalizations_per_entry = 5;
  std::size_t places = 6;
  std::uint64_t seed = 0;

  void validate() const;
};

std::string synth_webnlg_xml(const SynthConfig& config);
/// Parses the generated XML through the regular WebNLG loader.
Corpus synth_corpus(const SynthConfig& config);

}  // namespace entlink
