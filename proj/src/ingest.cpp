#include "textspot/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "textspot/error.hpp"

namespace textspot {
namespace {

using nlohmann::json;

constexpr double kPi = std::numbers::pi;

std::string format_real(double v) {
  if (v == 0.0) return "0";  // folds -0
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string quote(const std::string& s) {
  return json(s).dump(-1, ' ', false, json::error_handler_t::replace);
}

double number_field(const json& obj, const char* key, std::size_t index) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) {
    throw SchemaError("primitive #" + std::to_string(index) + " missing numeric field '" + key + "'");
  }
  return it->get<double>();
}

int label_field(const json& obj, const ClassTable& table, std::size_t index, bool is_text) {
  auto it = obj.find("label");
  if (it == obj.end()) return is_text ? table.annotation_label() : kBackgroundLabel;
  if (it->is_string()) {
    auto id = table.find(it->get<std::string>());
    if (!id) throw SchemaError("unknown class name '" + it->get<std::string>() + "'");
    return *id;
  }
  if (it->is_number_integer()) {
    const int id = it->get<int>();
    if (id < 0 || id > table.annotation_label()) {
      throw SchemaError("primitive #" + std::to_string(index) + " label id out of range");
    }
    return id;
  }
  throw SchemaError("primitive #" + std::to_string(index) + " label must be a name or id");
}

Geometry geometry_from_json(const json& p, const std::string& type, std::size_t index) {
  auto num = [&](const char* key) { return number_field(p, key, index); };
  if (type == "line") return Line{num("x1"), num("y1"), num("x2"), num("y2")};
  if (type == "arc") return Arc{num("cx"), num("cy"), num("r"), num("start"), num("sweep")};
  if (type == "circle") return Circle{num("cx"), num("cy"), num("r")};
  if (type == "ellipse") return Ellipse{num("cx"), num("cy"), num("a"), num("b"), num("rotation")};
  if (type == "text") {
    Text t{num("xmin"), num("ymin"), num("xmax"), num("ymax"), "", 0.0};
    if (auto it = p.find("rotation"); it != p.end() && it->is_number()) t.rotation = it->get<double>();
    if (auto it = p.find("text"); it != p.end()) {
      if (!it->is_string()) throw SchemaError("primitive #" + std::to_string(index) + " text must be a string");
      t.content = it->get<std::string>();
    }
    return t;
  }
  throw SchemaError("primitive #" + std::to_string(index) + " has unknown type '" + type + "'");
}

ParsedDrawing parse_canonical(std::string_view bytes) {
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), e.byte);
  }
  if (!doc.is_object()) throw SchemaError("top level must be an object");

  std::vector<ClassInfo> classes;
  std::set<int> class_ids;
  std::set<std::string> class_names;
  if (auto it = doc.find("classes"); it != doc.end()) {
    if (!it->is_array()) throw SchemaError("'classes' must be an array");
    for (const auto& c : *it) {
      if (!c.is_object() || !c.contains("id") || !c.contains("name")) {
        throw SchemaError("class entries need 'id' and 'name'");
      }
      ClassInfo info;
      info.id = c.at("id").get<int>();
      info.name = c.at("name").get<std::string>();
      const std::string kind = c.value("kind", "thing");
      if (kind == "thing") {
        info.kind = ClassKind::kThing;
      } else if (kind == "stuff") {
        info.kind = ClassKind::kStuff;
      } else {
        throw SchemaError("class '" + info.name + "' has unknown kind '" + kind + "'");
      }
      if (info.name == kBackgroundName || info.name == kAnnotationName) {
        throw SchemaError("class name '" + info.name + "' is reserved");
      }
      if (!class_ids.insert(info.id).second || !class_names.insert(info.name).second) {
        throw SchemaError("duplicate class '" + info.name + "'");
      }
      classes.push_back(std::move(info));
    }
  }
  ParsedDrawing out;
  out.drawing.classes = ClassTable(std::move(classes));
  const ClassTable& table = out.drawing.classes;
  for (int i = 0; i < table.num_categories(); ++i) {
    if (table.classes()[i].id != i + 1) throw SchemaError("class ids must be dense from 1");
  }

  if (auto it = doc.find("meta"); it != doc.end()) {
    if (!it->is_object()) throw SchemaError("'meta' must be an object");
    DrawingMeta& meta = out.drawing.meta;
    if (auto o = it->find("origin"); o != it->end()) {
      if (!o->is_array() || o->size() != 2) throw SchemaError("meta.origin must be [x, y]");
      meta.origin = {(*o)[0].get<double>(), (*o)[1].get<double>()};
    }
    meta.tile_size = it->value("tile_size", 0.0);
    meta.source = it->value("source", std::string{});
    meta.normalized = it->value("normalized", false);
    if (auto s = it->find("source_ids"); s != it->end()) meta.source_ids = s->get<std::vector<int>>();
  }

  auto prims = doc.find("primitives");
  if (prims == doc.end()) return out;
  if (!prims->is_array()) throw SchemaError("'primitives' must be an array");

  std::set<int> ids;
  std::vector<int> file_ids;
  bool dense = true;
  for (std::size_t i = 0; i < prims->size(); ++i) {
    const json& p = (*prims)[i];
    if (!p.is_object()) throw SchemaError("primitive #" + std::to_string(i) + " must be an object");
    if (!p.contains("id") || !p.at("id").is_number_integer()) {
      throw SchemaError("primitive #" + std::to_string(i) + " needs an integer id");
    }
    const int file_id = p.at("id").get<int>();
    if (!ids.insert(file_id).second) throw SchemaError("duplicate primitive id " + std::to_string(file_id));
    dense = dense && file_id == static_cast<int>(i);
    file_ids.push_back(file_id);
    if (!p.contains("type") || !p.at("type").is_string()) {
      throw SchemaError("primitive #" + std::to_string(i) + " needs a type");
    }
    Primitive prim;
    prim.id = static_cast<int>(i);
    prim.geometry = geometry_from_json(p, p.at("type").get<std::string>(), i);
    try {
      check_geometry(prim.geometry);
    } catch (const InvalidGeometry& e) {
      throw SchemaError("primitive #" + std::to_string(i) + ": " + e.what());
    }
    prim.label = label_field(p, table, i, prim.is_text());
    prim.instance = p.value("instance", kNoInstance);
    out.drawing.primitives.push_back(std::move(prim));
  }
  if (!dense && out.drawing.meta.source_ids.empty()) out.drawing.meta.source_ids = file_ids;
  return out;
}

// ---------------------------------------------------------------------------
// SVG subset

struct SvgTag {
  std::size_t offset = 0;
  std::string name;
  std::map<std::string, std::string> attrs;
  bool closing = false;
  bool self_closing = false;
};

class SvgScanner {
 public:
  explicit SvgScanner(std::string_view src) : src_(src) {}

  // Returns false at end of input. Text between tags is collected into
  // `text` for the caller.
  bool next(SvgTag& tag, std::string& text) {
    text.clear();
    while (pos_ < src_.size()) {
      if (src_[pos_] != '<') {
        text.push_back(src_[pos_++]);
        continue;
      }
      if (starts_with("<!--")) {
        skip_past("-->");
        continue;
      }
      if (starts_with("<?")) {
        skip_past("?>");
        continue;
      }
      if (starts_with("<!")) {
        skip_past(">");
        continue;
      }
      read_tag(tag);
      return true;
    }
    return false;
  }

 private:
  bool starts_with(std::string_view s) const { return src_.substr(pos_, s.size()) == s; }

  void skip_past(std::string_view s) {
    const std::size_t start = pos_;
    auto end = src_.find(s, pos_);
    if (end == std::string_view::npos) throw ParseError("unterminated markup", start);
    pos_ = end + s.size();
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  std::string read_name() {
    const std::size_t start = pos_;
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == ':' || c == '.') {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ == start) throw ParseError("expected a name", start);
    return std::string(src_.substr(start, pos_ - start));
  }

  void read_tag(SvgTag& tag) {
    tag = SvgTag{};
    tag.offset = pos_;
    ++pos_;  // '<'
    if (pos_ < src_.size() && src_[pos_] == '/') {
      tag.closing = true;
      ++pos_;
    }
    tag.name = read_name();
    while (true) {
      skip_ws();
      if (pos_ >= src_.size()) throw ParseError("unterminated tag <" + tag.name + ">", tag.offset);
      const char c = src_[pos_];
      if (c == '>') {
        ++pos_;
        return;
      }
      if (c == '/') {
        if (pos_ + 1 >= src_.size() || src_[pos_ + 1] != '>') throw ParseError("stray '/'", pos_);
        tag.self_closing = true;
        pos_ += 2;
        return;
      }
      const std::string key = read_name();
      skip_ws();
      if (pos_ >= src_.size() || src_[pos_] != '=') throw ParseError("expected '=' after " + key, pos_);
      ++pos_;
      skip_ws();
      if (pos_ >= src_.size() || (src_[pos_] != '"' && src_[pos_] != '\'')) {
        throw ParseError("expected quoted value for " + key, pos_);
      }
      const char q = src_[pos_++];
      const auto end = src_.find(q, pos_);
      if (end == std::string_view::npos) throw ParseError("unterminated attribute value", pos_);
      tag.attrs[key] = std::string(src_.substr(pos_, end - pos_));
      pos_ = end + 1;
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

double svg_number(const SvgTag& tag, const std::string& key, double fallback) {
  auto it = tag.attrs.find(key);
  if (it == tag.attrs.end()) return fallback;
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (end == it->second.c_str()) throw ParseError("attribute " + key + " is not a number", tag.offset);
  return v;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string decode_entities(const std::string& s) {
  static const std::pair<const char*, char> table[] = {
      {"&lt;", '<'}, {"&gt;", '>'}, {"&amp;", '&'}, {"&quot;", '"'}, {"&apos;", '\''}};
  std::string out;
  for (std::size_t i = 0; i < s.size();) {
    bool hit = false;
    if (s[i] == '&') {
      for (const auto& [ent, ch] : table) {
        const std::size_t n = std::char_traits<char>::length(ent);
        if (s.compare(i, n, ent) == 0) {
          out.push_back(ch);
          i += n;
          hit = true;
          break;
        }
      }
    }
    if (!hit) out.push_back(s[i++]);
  }
  return out;
}

// Tokenizer for SVG path data.
class PathReader {
 public:
  explicit PathReader(const std::string& d) : d_(d) {}

  bool at_end() {
    skip();
    return i_ >= d_.size();
  }
  bool next_is_command() {
    skip();
    return i_ < d_.size() && std::isalpha(static_cast<unsigned char>(d_[i_]));
  }
  char command() { return d_[i_++]; }
  double number() {
    skip();
    const char* begin = d_.c_str() + i_;
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin) throw std::invalid_argument("bad number in path data");
    i_ += static_cast<std::size_t>(end - begin);
    return v;
  }
  bool flag() {
    skip();
    if (i_ < d_.size() && (d_[i_] == '0' || d_[i_] == '1')) return d_[i_++] == '1';
    throw std::invalid_argument("bad arc flag");
  }

 private:
  void skip() {
    while (i_ < d_.size() && (std::isspace(static_cast<unsigned char>(d_[i_])) || d_[i_] == ',')) ++i_;
  }
  const std::string& d_;
  std::size_t i_ = 0;
};

// Endpoint to center parameterization for circular arcs.
std::optional<Arc> svg_arc(Point p0, Point p1, double r, bool large, bool sweep_positive) {
  if (p0 == p1 || r <= 0) return std::nullopt;
  const double dx = 0.5 * (p0.x - p1.x), dy = 0.5 * (p0.y - p1.y);
  const double d2 = dx * dx + dy * dy;
  if (d2 > r * r) r = std::sqrt(d2);
  double coef = std::sqrt(std::max(0.0, (r * r - d2) / d2));
  if (large == sweep_positive) coef = -coef;
  const double cxp = coef * dy, cyp = -coef * dx;
  const double cx = cxp + 0.5 * (p0.x + p1.x), cy = cyp + 0.5 * (p0.y + p1.y);
  const double a0 = std::atan2(p0.y - cy, p0.x - cx);
  const double a1 = std::atan2(p1.y - cy, p1.x - cx);
  double delta = a1 - a0;
  if (sweep_positive && delta <= 0) delta += 2 * kPi;
  if (!sweep_positive && delta >= 0) delta -= 2 * kPi;
  if (sweep_positive) return Arc{cx, cy, r, a0, delta};
  return Arc{cx, cy, r, a0 + delta, -delta};
}

ParsedDrawing parse_svg(std::string_view bytes) {
  struct Pending {
    Geometry g;
    int label;
    int instance;
  };
  std::vector<Pending> pending;
  ParsedDrawing out;
  SvgScanner scanner(bytes);
  SvgTag tag;
  std::string text;
  int max_label = 0;
  bool seen_svg = false;
  std::optional<SvgTag> open_text;

  auto labels_of = [&](const SvgTag& t) {
    const int label = static_cast<int>(svg_number(t, "semantic-id", 0));
    const int inst = static_cast<int>(svg_number(t, "instance-id", -1));
    max_label = std::max(max_label, label);
    return std::pair{label, inst};
  };
  auto push = [&](const SvgTag& t, Geometry g) {
    try {
      check_geometry(g);
    } catch (const InvalidGeometry& e) {
      out.skipped.push_back({t.offset, t.name, e.what()});
      return;
    }
    auto [label, inst] = labels_of(t);
    pending.push_back({std::move(g), label, inst});
  };

  while (scanner.next(tag, text)) {
    if (open_text) {
      if (tag.closing && tag.name == "text") {
        const std::string content = trim(decode_entities(text));
        const double fs = svg_number(*open_text, "font-size", 1.0);
        const double x = svg_number(*open_text, "x", 0.0), y = svg_number(*open_text, "y", 0.0);
        if (content.empty()) {
          out.skipped.push_back({open_text->offset, "text", "empty text"});
        } else {
          const double w = 0.6 * fs * static_cast<double>(content.size());
          push(*open_text, Text{x, y - fs, x + w, y, content, 0.0});
        }
        open_text.reset();
      } else if (!tag.closing) {
        out.skipped.push_back({tag.offset, tag.name, "markup inside text"});
      }
      continue;
    }
    if (tag.closing) continue;
    const std::string& n = tag.name;
    if (n == "svg") {
      seen_svg = true;
    } else if (n == "g") {
      if (tag.attrs.count("transform")) out.skipped.push_back({tag.offset, "g", "transform ignored"});
    } else if (n == "line") {
      push(tag, Line{svg_number(tag, "x1", 0), svg_number(tag, "y1", 0), svg_number(tag, "x2", 0),
                     svg_number(tag, "y2", 0)});
    } else if (n == "circle") {
      push(tag, Circle{svg_number(tag, "cx", 0), svg_number(tag, "cy", 0), svg_number(tag, "r", 0)});
    } else if (n == "ellipse") {
      double rx = svg_number(tag, "rx", 0), ry = svg_number(tag, "ry", 0);
      double rot = 0.0;
      if (rx < ry) {
        std::swap(rx, ry);
        rot = kPi / 2;
      }
      push(tag, Ellipse{svg_number(tag, "cx", 0), svg_number(tag, "cy", 0), rx, ry, rot});
    } else if (n == "text") {
      if (tag.self_closing) {
        out.skipped.push_back({tag.offset, "text", "empty text"});
      } else {
        open_text = tag;
      }
    } else if (n == "path") {
      auto d = tag.attrs.find("d");
      if (d == tag.attrs.end()) {
        out.skipped.push_back({tag.offset, "path", "missing d"});
        continue;
      }
      std::vector<Geometry> parts;
      try {
        PathReader r(d->second);
        Point cur, start;
        char cmd = 0;
        while (!r.at_end()) {
          if (r.next_is_command()) cmd = r.command();
          const bool rel = std::islower(static_cast<unsigned char>(cmd));
          switch (std::toupper(static_cast<unsigned char>(cmd))) {
            case 'M': {
              Point p{r.number(), r.number()};
              if (rel) p = {cur.x + p.x, cur.y + p.y};
              cur = start = p;
              cmd = rel ? 'l' : 'L';
              break;
            }
            case 'L': {
              Point p{r.number(), r.number()};
              if (rel) p = {cur.x + p.x, cur.y + p.y};
              parts.push_back(Line{cur.x, cur.y, p.x, p.y});
              cur = p;
              break;
            }
            case 'H': {
              double x = r.number();
              if (rel) x += cur.x;
              parts.push_back(Line{cur.x, cur.y, x, cur.y});
              cur.x = x;
              break;
            }
            case 'V': {
              double y = r.number();
              if (rel) y += cur.y;
              parts.push_back(Line{cur.x, cur.y, cur.x, y});
              cur.y = y;
              break;
            }
            case 'A': {
              const double rx = r.number(), ry = r.number();
              r.number();  // x-axis rotation, irrelevant for circular arcs
              const bool large = r.flag(), sweep = r.flag();
              Point p{r.number(), r.number()};
              if (rel) p = {cur.x + p.x, cur.y + p.y};
              if (std::abs(rx - ry) > 1e-9 * std::max(std::abs(rx), 1.0)) {
                out.skipped.push_back({tag.offset, "path", "elliptical arc segment"});
              } else if (auto arc = svg_arc(cur, p, rx, large, sweep)) {
                parts.push_back(*arc);
              }
              cur = p;
              break;
            }
            case 'Z': {
              if (!(cur == start)) parts.push_back(Line{cur.x, cur.y, start.x, start.y});
              cur = start;
              break;
            }
            default:
              throw std::invalid_argument(std::string("unsupported path command '") + cmd + "'");
          }
        }
      } catch (const std::invalid_argument& e) {
        out.skipped.push_back({tag.offset, "path", e.what()});
        continue;
      }
      for (auto& g : parts) push(tag, std::move(g));
    } else if (n == "defs" || n == "title" || n == "desc" || n == "style") {
      out.skipped.push_back({tag.offset, n, "non-geometric element"});
    } else {
      out.skipped.push_back({tag.offset, n, "unsupported element"});
    }
  }
  if (open_text) throw ParseError("unterminated <text>", open_text->offset);
  if (!seen_svg) throw ParseError("no <svg> root element", 0);

  std::vector<ClassInfo> classes;
  for (int id = 1; id <= max_label; ++id) classes.push_back({id, "class-" + std::to_string(id), ClassKind::kThing});
  out.drawing.classes = ClassTable(std::move(classes));
  for (auto& p : pending) {
    Primitive prim;
    prim.id = static_cast<int>(out.drawing.primitives.size());
    prim.geometry = std::move(p.g);
    if (prim.is_text()) {
      prim.label = out.drawing.classes.annotation_label();
      prim.instance = kNoInstance;
    } else {
      prim.label = std::max(p.label, 0);
      prim.instance = prim.label == 0 ? kNoInstance : p.instance;
    }
    out.drawing.primitives.push_back(std::move(prim));
  }
  return out;
}

using FieldMap = std::map<std::string, std::string>;

void geometry_fields(FieldMap& f, const Geometry& g) {
  auto kv = [&](const char* k, double v) { f[k] = format_real(v); };
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Line>) {
          kv("x1", v.x1), kv("y1", v.y1), kv("x2", v.x2), kv("y2", v.y2);
        } else if constexpr (std::is_same_v<T, Arc>) {
          kv("cx", v.cx), kv("cy", v.cy), kv("r", v.r), kv("start", v.start), kv("sweep", v.sweep);
        } else if constexpr (std::is_same_v<T, Circle>) {
          kv("cx", v.cx), kv("cy", v.cy), kv("r", v.r);
        } else if constexpr (std::is_same_v<T, Ellipse>) {
          kv("cx", v.cx), kv("cy", v.cy), kv("a", v.a), kv("b", v.b), kv("rotation", v.rotation);
        } else {
          kv("xmin", v.xmin), kv("ymin", v.ymin), kv("xmax", v.xmax), kv("ymax", v.ymax);
          kv("rotation", v.rotation);
          f["text"] = quote(v.content);
        }
      },
      g);
}

}  // namespace

DrawingFormat parse_format_name(const std::string& name) {
  if (name == "canonical-json") return DrawingFormat::kCanonicalJson;
  if (name == "svg-subset") return DrawingFormat::kSvgSubset;
  throw ConfigError("ingest", "unknown format '" + name + "'");
}

ParsedDrawing parse_drawing(std::string_view bytes, DrawingFormat format) {
  if (format == DrawingFormat::kSvgSubset) return parse_svg(bytes);
  try {
    return parse_canonical(bytes);
  } catch (const nlohmann::json::exception& e) {
    // type errors from field access: the JSON parsed but has the wrong shape
    throw SchemaError(e.what());
  }
}

double canonical_real(double v) {
  const std::string s = format_real(v);
  return std::strtod(s.c_str(), nullptr);
}

std::string serialize_drawing(const Drawing& d) {
  std::ostringstream os;
  os << "{\"classes\":[";
  const auto& classes = d.classes.classes();
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& c = classes[i];
    os << (i ? ",\n" : "\n") << "{\"id\":" << c.id << ",\"kind\":\""
       << (c.kind == ClassKind::kThing ? "thing" : "stuff") << "\",\"name\":" << quote(c.name) << "}";
  }
  os << "\n],\n\"meta\":{";
  if (d.meta.normalized) os << "\"normalized\":true,";
  os << "\"origin\":[" << format_real(d.meta.origin.x) << "," << format_real(d.meta.origin.y) << "]";
  if (!d.meta.source.empty()) os << ",\"source\":" << quote(d.meta.source);
  if (!d.meta.source_ids.empty()) {
    os << ",\"source_ids\":[";
    for (std::size_t i = 0; i < d.meta.source_ids.size(); ++i) os << (i ? "," : "") << d.meta.source_ids[i];
    os << "]";
  }
  os << ",\"tile_size\":" << format_real(d.meta.tile_size) << "},\n\"primitives\":[";
  for (std::size_t i = 0; i < d.primitives.size(); ++i) {
    const Primitive& p = d.primitives[i];
    FieldMap fields;
    geometry_fields(fields, p.geometry);
    fields["id"] = std::to_string(p.id);
    fields["instance"] = std::to_string(p.instance);
    fields["label"] = quote(d.classes.name_of(p.label));
    fields["type"] = std::string("\"") + kind_name(p.kind()) + "\"";
    os << (i ? ",\n" : "\n") << "{";
    bool first = true;
    for (const auto& [k, v] : fields) {
      os << (first ? "" : ",") << "\"" << k << "\":" << v;
      first = false;
    }
    os << "}";
  }
  os << "\n]}\n";
  return os.str();
}

Drawing read_drawing_file(const std::string& path, DrawingFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("ingest", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_drawing(ss.str(), format).drawing;
}

void write_drawing_file(const std::string& path, const Drawing& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("ingest", "cannot write " + path);
  out << serialize_drawing(d);
}

void TileSpec::validate() const {
  if (!(tile_size > 0)) throw ConfigError("ingest", "tile size must be positive");
  if (!(overlap >= 0 && overlap < tile_size)) throw ConfigError("ingest", "overlap must be in [0, tile size)");
}

std::vector<Drawing> tile_drawing(const Drawing& d, const TileSpec& spec) {
  spec.validate();
  // (row, col) -> member positions in input order
  std::map<std::pair<long, long>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < d.primitives.size(); ++i) {
    const Point c = primitive_center(d.primitives[i]);
    const double u = (c.x - spec.origin_snap) / spec.tile_size;
    const double v = (c.y - spec.origin_snap) / spec.tile_size;
    if (spec.overlap == 0.0) {
      cells[{static_cast<long>(std::floor(v)), static_cast<long>(std::floor(u))}].push_back(i);
      continue;
    }
    const double o = spec.overlap / spec.tile_size;
    for (long row = static_cast<long>(std::floor(v - 1 - o)); row <= static_cast<long>(std::floor(v + o)); ++row) {
      for (long col = static_cast<long>(std::floor(u - 1 - o)); col <= static_cast<long>(std::floor(u + o)); ++col) {
        if (u >= col - o && u < col + 1 + o && v >= row - o && v < row + 1 + o) cells[{row, col}].push_back(i);
      }
    }
  }
  std::vector<Drawing> tiles;
  for (const auto& [cell, members] : cells) {
    Drawing t;
    t.classes = d.classes;
    t.meta.source = d.meta.source;
    t.meta.tile_size = spec.tile_size;
    t.meta.origin = {spec.origin_snap + static_cast<double>(cell.second) * spec.tile_size,
                     spec.origin_snap + static_cast<double>(cell.first) * spec.tile_size};
    std::map<int, int> local_instance;
    for (std::size_t pos : members) {
      Primitive p = d.primitives[pos];
      t.meta.source_ids.push_back(p.id);
      p.id = static_cast<int>(t.primitives.size());
      if (p.instance >= 0) {
        auto [it, _] = local_instance.emplace(p.instance, static_cast<int>(local_instance.size()));
        p.instance = it->second;
      }
      t.primitives.push_back(std::move(p));
    }
    tiles.push_back(std::move(t));
  }
  return tiles;
}

namespace {

Geometry affine(const Geometry& g, double ox, double oy, double s) {
  return std::visit(
      [&](const auto& v) -> Geometry {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Line>) {
          return Line{(v.x1 - ox) / s, (v.y1 - oy) / s, (v.x2 - ox) / s, (v.y2 - oy) / s};
        } else if constexpr (std::is_same_v<T, Arc>) {
          return Arc{(v.cx - ox) / s, (v.cy - oy) / s, v.r / s, v.start, v.sweep};
        } else if constexpr (std::is_same_v<T, Circle>) {
          return Circle{(v.cx - ox) / s, (v.cy - oy) / s, v.r / s};
        } else if constexpr (std::is_same_v<T, Ellipse>) {
          return Ellipse{(v.cx - ox) / s, (v.cy - oy) / s, v.a / s, v.b / s, v.rotation};
        } else {
          return Text{(v.xmin - ox) / s, (v.ymin - oy) / s, (v.xmax - ox) / s, (v.ymax - oy) / s,
                      v.content, v.rotation};
        }
      },
      g);
}

Geometry affine_inverse(const Geometry& g, double ox, double oy, double s) {
  return std::visit(
      [&](const auto& v) -> Geometry {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Line>) {
          return Line{v.x1 * s + ox, v.y1 * s + oy, v.x2 * s + ox, v.y2 * s + oy};
        } else if constexpr (std::is_same_v<T, Arc>) {
          return Arc{v.cx * s + ox, v.cy * s + oy, v.r * s, v.start, v.sweep};
        } else if constexpr (std::is_same_v<T, Circle>) {
          return Circle{v.cx * s + ox, v.cy * s + oy, v.r * s};
        } else if constexpr (std::is_same_v<T, Ellipse>) {
          return Ellipse{v.cx * s + ox, v.cy * s + oy, v.a * s, v.b * s, v.rotation};
        } else {
          return Text{v.xmin * s + ox, v.ymin * s + oy, v.xmax * s + ox, v.ymax * s + oy, v.content, v.rotation};
        }
      },
      g);
}

}  // namespace

NormalizedTile normalize_coords(const Drawing& tile) {
  if (tile.meta.normalized) throw ConfigError("ingest", "tile is already normalized");
  if (!(tile.meta.tile_size > 0)) throw ConfigError("ingest", "tile has no tile_size metadata");
  NormalizedTile out;
  out.tile = tile;
  out.tile.meta.normalized = true;
  const double s = tile.meta.tile_size;
  constexpr double kSlack = 1e-9;
  for (auto& p : out.tile.primitives) {
    p.geometry = affine(p.geometry, tile.meta.origin.x, tile.meta.origin.y, s);
    const Box b = geometry_bounds(p.geometry);
    if (b.xmin < -kSlack || b.ymin < -kSlack || b.xmax > 1 + kSlack || b.ymax > 1 + kSlack) {
      out.out_of_bounds.push_back(p.id);
    }
  }
  return out;
}

Drawing denormalize_coords(const Drawing& normalized) {
  if (!normalized.meta.normalized) throw ConfigError("ingest", "tile is not normalized");
  Drawing out = normalized;
  out.meta.normalized = false;
  for (auto& p : out.primitives) {
    p.geometry = affine_inverse(p.geometry, normalized.meta.origin.x, normalized.meta.origin.y,
                                normalized.meta.tile_size);
  }
  return out;
}

}  // namespace textspot
