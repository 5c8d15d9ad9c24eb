#include "entlink/xml.hpp"

#include "entlink/common.hpp"

#include <cctype>

namespace entlink::xml {

const std::string* Element::attribute(std::string_view key) const {
  for (const auto& [k, v] : attributes) {
    if (k == key) return &v;
  }
  return nullptr;
}

const Element* Element::child(std::string_view child_name) const {
  for (const auto& c : children) {
    if (c.name == child_name) return &c;
  }
  return nullptr;
}

std::vector<const Element*> Element::children_named(std::string_view child_name) const {
  std::vector<const Element*> out;
  for (const auto& c : children) {
    if (c.name == child_name) out.push_back(&c);
  }
  return out;
}

namespace {

void append_utf8(std::string& out, unsigned long cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  Element document() {
    skip_prolog();
    if (eof() || peek() != '<') fail("expected root element");
    Element root = element();
    skip_misc();
    if (!eof()) fail("content after root element");
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError("malformed XML: " + what, pos_); }

  bool eof() const { return pos_ >= src_.size(); }
  char peek() const { return src_[pos_]; }
  bool starts(std::string_view s) const { return src_.substr(pos_, s.size()) == s; }

  void skip_ws() {
    while (!eof() && std::isspace(static_cast<unsigned char>(peek()))) ++pos_;
  }

  void skip_until(std::string_view terminator, const char* what) {
    const auto found = src_.find(terminator, pos_);
    if (found == std::string_view::npos) fail(std::string("unterminated ") + what);
    pos_ = found + terminator.size();
  }

  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts("<!--")) {
        skip_until("-->", "comment");
      } else if (starts("<?")) {
        skip_until("?>", "processing instruction");
      } else {
        return;
      }
    }
  }

  void skip_prolog() {
    if (starts("\xEF\xBB\xBF")) pos_ += 3;
    for (;;) {
      skip_misc();
      if (starts("<!DOCTYPE")) {
        // Internal subsets are not supported; skip to the closing '>'.
        int depth = 0;
        while (!eof()) {
          const char c = src_[pos_++];
          if (c == '[') ++depth;
          if (c == ']') --depth;
          if (c == '>' && depth <= 0) break;
        }
        if (eof()) fail("unterminated DOCTYPE");
      } else {
        return;
      }
    }
  }

  static bool name_char(char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || c == '_' || c == '-' || c == '.' || c == ':' || u >= 0x80;
  }

  std::string name() {
    const auto start = pos_;
    while (!eof() && name_char(peek())) ++pos_;
    if (start == pos_) fail("expected a name");
    return std::string(src_.substr(start, pos_ - start));
  }

  void decode_entity(std::string& out) {
    const auto start = pos_;
    const auto semi = src_.find(';', pos_);
    if (semi == std::string_view::npos || semi - pos_ > 12) fail("unterminated entity reference");
    const auto ent = src_.substr(pos_ + 1, semi - pos_ - 1);
    if (ent == "lt") out.push_back('<');
    else if (ent == "gt") out.push_back('>');
    else if (ent == "amp") out.push_back('&');
    else if (ent == "quot") out.push_back('"');
    else if (ent == "apos") out.push_back('\'');
    else if (!ent.empty() && ent[0] == '#') {
      unsigned long cp = 0;
      try {
        cp = (ent.size() > 1 && (ent[1] == 'x' || ent[1] == 'X'))
                 ? std::stoul(std::string(ent.substr(2)), nullptr, 16)
                 : std::stoul(std::string(ent.substr(1)), nullptr, 10);
      } catch (const std::exception&) {
        pos_ = start;
        fail("bad character reference");
      }
      if (cp == 0 || cp > 0x10FFFF) fail("character reference out of range");
      append_utf8(out, cp);
    } else {
      fail("unknown entity &" + std::string(ent) + ";");
    }
    pos_ = semi + 1;
  }

  std::string attribute_value() {
    if (eof() || (peek() != '"' && peek() != '\'')) fail("expected quoted attribute value");
    const char quote = src_[pos_++];
    std::string out;
    while (!eof() && peek() != quote) {
      if (peek() == '<') fail("'<' in attribute value");
      if (peek() == '&') {
        decode_entity(out);
      } else {
        out.push_back(src_[pos_++]);
      }
    }
    if (eof()) fail("unterminated attribute value");
    ++pos_;
    return out;
  }

  Element element() {
    Element el;
    el.offset = pos_;
    ++pos_;  // '<'
    el.name = name();
    for (;;) {
      skip_ws();
      if (eof()) fail("unterminated start tag <" + el.name + ">");
      if (starts("/>")) {
        pos_ += 2;
        return el;
      }
      if (peek() == '>') {
        ++pos_;
        break;
      }
      auto key = name();
      skip_ws();
      if (eof() || peek() != '=') fail("expected '=' after attribute " + key);
      ++pos_;
      skip_ws();
      auto value = attribute_value();
      if (el.attribute(key) != nullptr) fail("duplicate attribute " + key);
      el.attributes.emplace_back(std::move(key), std::move(value));
    }
    content(el);
    return el;
  }

  void content(Element& el) {
    for (;;) {
      if (eof()) {
        pos_ = el.offset;
        fail("element <" + el.name + "> is never closed");
      }
      const char c = peek();
      if (c == '<') {
        if (starts("</")) {
          pos_ += 2;
          const auto close_at = pos_;
          const auto closing = name();
          if (closing != el.name) {
            pos_ = close_at;
            fail("mismatched end tag </" + closing + ">, expected </" + el.name + ">");
          }
          skip_ws();
          if (eof() || peek() != '>') fail("expected '>'");
          ++pos_;
          return;
        }
        if (starts("<!--")) {
          skip_until("-->", "comment");
        } else if (starts("<![CDATA[")) {
          pos_ += 9;
          const auto end = src_.find("]]>", pos_);
          if (end == std::string_view::npos) fail("unterminated CDATA section");
          el.text.append(src_.substr(pos_, end - pos_));
          pos_ = end + 3;
        } else if (starts("<?")) {
          skip_until("?>", "processing instruction");
        } else {
          el.children.push_back(element());
        }
      } else if (c == '&') {
        decode_entity(el.text);
      } else {
        el.text.push_back(c);
        ++pos_;
      }
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

}  // namespace

Element parse(std::string_view document) { return Parser(document).document(); }

}  // namespace entlink::xml
