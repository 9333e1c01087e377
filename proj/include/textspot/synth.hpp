#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "textspot/model.hpp"

namespace textspot {

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };
const char* split_name(Split s);

struct SynthConfig {
  std::uint64_t seed = 7;
  int train_tiles = 200;
  int val_tiles = 40;
  int test_tiles = 40;
  double tile_size = 14.0;
  int min_instances = 4;
  int max_instances = 8;
  int partitions_max = 2;  // interior walls per tile
  // Probability that an instance gets a text box next to it.
  double text_rate = 1.0;
  // Probability that such a text names the instance class; otherwise it is
  // a random low-frequency token.
  double informativeness = 0.9;
  // Probability of each of 8 clutter slots holding a background stroke.
  double clutter_rate = 0.5;

  void validate() const;
};

// door, window, sofa, table, chair (things) and wall (stuff).
ClassTable synth_classes();

// Text naming a class label, e.g. "DINING TABLE" for table.
std::string class_token(int label);

// Tile coordinates in [0, tile_size]^2, every real already canonical.
Drawing generate_tile(const SynthConfig& cfg, Split split, int index);

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> train;  // paths relative to the manifest directory
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::string stats;  // corpus statistics of the train split

  const std::vector<std::string>& split(Split s) const;
};

std::string serialize_manifest(const DatasetManifest& m);
DatasetManifest parse_manifest(const std::string& text);

// Writes <dir>/{train,val,test}/NNNN.json, <dir>/stats.tsv and
// <dir>/manifest.json.
DatasetManifest generate_dataset(const SynthConfig& cfg, const std::string& dir);

DatasetManifest read_manifest(const std::string& path);

}  // namespace textspot
