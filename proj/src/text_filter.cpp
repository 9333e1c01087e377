#include "textspot/text_filter.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "textspot/error.hpp"

namespace textspot {

std::string NormalizeOptions::tag() const {
  std::string t = kNormalizationVersion;
  if (!lowercase) t += "+case";
  if (!collapse_digits) t += "+digits";
  return t;
}

std::string normalize_token(const std::string& s, const NormalizeOptions& opts) {
  std::string out;
  bool pending_space = false;
  bool in_digits = false;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      in_digits = false;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    if (opts.collapse_digits && std::isdigit(c)) {
      if (!in_digits) out.push_back('#');
      in_digits = true;
      continue;
    }
    in_digits = false;
    out.push_back(opts.lowercase ? static_cast<char>(std::tolower(c)) : ch);
  }
  return out;
}

std::int64_t CorpusStats::count(const std::string& normalized) const {
  auto it = counts.find(normalized);
  return it == counts.end() ? 0 : it->second;
}

void CorpusStats::merge(const CorpusStats& other) {
  if (version != other.version) throw ConfigError("text", "cannot merge stats with different normalization");
  for (const auto& [token, n] : other.counts) counts[token] += n;
  documents += other.documents;
}

std::vector<std::pair<std::string, std::int64_t>> CorpusStats::top(std::size_t n) const {
  std::vector<std::pair<std::string, std::int64_t>> all(counts.begin(), counts.end());
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (all.size() > n) all.resize(n);
  return all;
}

CorpusStats build_corpus_stats(const std::vector<Drawing>& training_tiles, const NormalizeOptions& opts) {
  CorpusStats stats;
  stats.version = opts.tag();
  for (const Drawing& tile : training_tiles) {
    ++stats.documents;
    for (const Primitive& p : tile.primitives) {
      if (const auto* t = std::get_if<Text>(&p.geometry)) {
        const std::string tok = normalize_token(t->content, opts);
        if (!tok.empty()) ++stats.counts[tok];
      }
    }
  }
  return stats;
}

std::string serialize_stats(const CorpusStats& stats) {
  std::ostringstream os;
  os << "#stats\t" << stats.version << "\t" << stats.documents << "\n";
  for (const auto& [token, n] : stats.counts) os << token << "\t" << n << "\n";
  return os.str();
}

CorpusStats parse_stats(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  CorpusStats stats;
  if (!std::getline(in, line)) throw SchemaError("empty corpus stats file");
  {
    std::istringstream h(line);
    std::string magic;
    if (!std::getline(h, magic, '\t') || magic != "#stats" || !std::getline(h, stats.version, '\t') ||
        !(h >> stats.documents)) {
      throw SchemaError("bad corpus stats header");
    }
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw SchemaError("bad corpus stats line: " + line);
    const std::int64_t n = std::stoll(line.substr(tab + 1));
    if (n < 1) throw SchemaError("corpus stats counts must be >= 1");
    stats.counts[line.substr(0, tab)] = n;
  }
  return stats;
}

void write_stats_file(const std::string& path, const CorpusStats& stats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("text", "cannot write " + path);
  out << serialize_stats(stats);
}

CorpusStats read_stats_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("text", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_stats(ss.str());
}

void TextFilterConfig::validate() const {
  if (min_count < 1) throw ConfigError("text", "min_count must be >= 1");
}

Drawing select_primitives(const Drawing& tile, const std::vector<std::size_t>& keep) {
  Drawing out;
  out.classes = tile.classes;
  out.meta = tile.meta;
  out.meta.source_ids.clear();
  for (std::size_t pos : keep) {
    Primitive p = tile.primitives[pos];
    const int original = tile.meta.source_ids.empty() ? p.id : tile.meta.source_ids[pos];
    out.meta.source_ids.push_back(original);
    p.id = static_cast<int>(out.primitives.size());
    out.primitives.push_back(std::move(p));
  }
  return out;
}

Drawing filter_text_primitives(const Drawing& tile, const CorpusStats& stats, const TextFilterConfig& cfg) {
  cfg.validate();
  if (stats.version != cfg.normalize.tag()) {
    throw ConfigError("text", "corpus stats built with '" + stats.version + "', filter expects '" +
                                  cfg.normalize.tag() + "'");
  }
  struct Candidate {
    std::size_t pos;
    std::int64_t count;
  };
  std::vector<Candidate> texts;
  for (std::size_t i = 0; i < tile.primitives.size(); ++i) {
    if (const auto* t = std::get_if<Text>(&tile.primitives[i].geometry)) {
      const std::int64_t n = stats.count(normalize_token(t->content, cfg.normalize));
      if (n >= cfg.min_count) texts.push_back({i, n});
    }
  }
  if (cfg.max_kept_per_tile && texts.size() > *cfg.max_kept_per_tile) {
    std::stable_sort(texts.begin(), texts.end(), [](const Candidate& a, const Candidate& b) { return a.count > b.count; });
    texts.resize(*cfg.max_kept_per_tile);
  }
  std::vector<char> keep_text(tile.primitives.size(), 0);
  for (const auto& c : texts) keep_text[c.pos] = 1;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < tile.primitives.size(); ++i) {
    if (!tile.primitives[i].is_text() || keep_text[i]) keep.push_back(i);
  }
  return select_primitives(tile, keep);
}

Drawing strip_text_primitives(const Drawing& tile) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < tile.primitives.size(); ++i) {
    if (!tile.primitives[i].is_text()) keep.push_back(i);
  }
  return select_primitives(tile, keep);
}

}  // namespace textspot
