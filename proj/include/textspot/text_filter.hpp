#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "textspot/model.hpp"

namespace textspot {

inline constexpr const char* kNormalizationVersion = "norm-v1";

struct NormalizeOptions {
  bool lowercase = true;
  bool collapse_digits = true;
  // Version tag recorded in corpus stats built with these options.
  std::string tag() const;
};

// Trim, lowercase, collapse every digit run to '#', collapse internal
// whitespace runs to a single space.
std::string normalize_token(const std::string& s, const NormalizeOptions& opts = {});

struct CorpusStats {
  std::map<std::string, std::int64_t> counts;
  std::int64_t documents = 0;
  std::string version = kNormalizationVersion;

  std::int64_t count(const std::string& normalized) const;
  // Associative merge used for sharded building.
  void merge(const CorpusStats& other);
  // Highest counts first, ties by token.
  std::vector<std::pair<std::string, std::int64_t>> top(std::size_t n) const;
  bool operator==(const CorpusStats&) const = default;
};

CorpusStats build_corpus_stats(const std::vector<Drawing>& training_tiles, const NormalizeOptions& opts = {});

// File layout: a header line "#stats<TAB>version<TAB>documents" followed by
// "token<TAB>count" lines sorted by token.
std::string serialize_stats(const CorpusStats& stats);
CorpusStats parse_stats(const std::string& text);
void write_stats_file(const std::string& path, const CorpusStats& stats);
CorpusStats read_stats_file(const std::string& path);

struct TextFilterConfig {
  std::int64_t min_count = 5;
  std::optional<std::size_t> max_kept_per_tile;
  NormalizeOptions normalize;
  void validate() const;
};

// Drops text primitives whose normalized token count is below min_count.
// Ids are re-densified; meta.source_ids maps new ids to the input's ids
// (composed with any mapping the input already carried).
Drawing filter_text_primitives(const Drawing& tile, const CorpusStats& stats, const TextFilterConfig& cfg);

// Removes every text primitive (the no-text ablation), same id handling.
Drawing strip_text_primitives(const Drawing& tile);

// Keeps the primitives at the given positions, re-densifying ids and
// composing meta.source_ids.
Drawing select_primitives(const Drawing& tile, const std::vector<std::size_t>& keep);

}  // namespace textspot
