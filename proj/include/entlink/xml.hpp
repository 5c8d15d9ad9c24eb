#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace entlink::xml {

/// Element tree node. `text` holds the concatenated character data that is a
/// direct child of this element, with entities decoded.
struct Element {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attributes;
  std::vector<Element> children;
  std::string text;
  std::size_t offset = 0;  // byte offset of '<' in the source

  const std::string* attribute(std::string_view key) const;
  const Element* child(std::string_view child_name) const;
  std::vector<const Element*> children_named(std::string_view child_name) const;
};

/// Parses a document with a single root element. Supports the subset used by
/// corpus files: declarations, comments, CDATA, DOCTYPE (skipped), attributes
/// and the predefined/numeric entities. Throws ParseError with a byte offset.
Element parse(std::string_view document);

}  // namespace entlink::xml
