// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "beyond/nets.hpp"
#include "beyond/train.hpp"

namespace beyond::io {

using ndt::Index;
using ndt::Tensor;

// ---- dataset container ("BYND" binary format) ----
//
// Layout, all integers little-endian:
//   magic "BYND" | version u16 | count u32 | height u16 | width u16 |
//   channels u8 | num_classes u8 | provenance u16 length + bytes |
//   count * (c*h*w pixel bytes) | count label bytes
struct DatasetContainer {
  std::uint16_t version = 1;
  std::uint16_t height = 0, width = 0;
  std::uint8_t channels = 0, num_classes = 0;
  std::string provenance;
  std::vector<std::uint8_t> pixels;  // [count][c][h][w]
  std::vector<std::uint8_t> labels;

  std::uint32_t count() const { return static_cast<std::uint32_t>(labels.size()); }

  models::Dataset to_dataset() const;
  Tensor image(std::uint32_t index) const;  // [c,h,w], values k/255

  // Quantizes [0,1] doubles to bytes (round to nearest).
  static DatasetContainer from_images(const std::vector<Tensor>& images,
                                      const std::vector<int>& labels, int num_classes,
                                      std::string provenance);
};

void save_dataset(const std::string& path, const DatasetContainer& data);
DatasetContainer load_dataset(const std::string& path);

// ---- synthetic data ----

struct SynthConfig {
  int classes = 8;
  int per_class = 250;
  int height = 32, width = 32, channels = 3;
  std::uint64_t seed = 1;
};

// Class-balanced colored geometric motifs with jittered position, scale, and
// hue; sample order is a seeded shuffle so contiguous splits stay balanced.
DatasetContainer generate_synthetic_dataset(const SynthConfig& cfg);

// ---- model checkpoints ----
//
// Text header (magic line + one-line JSON topology/metadata document), then
// "BLOB <nbytes>", the parameters as 32-bit little-endian floats in declared
// order, and a trailing FNV-1a checksum of the blob.
struct BundleParts {
  bool classifier = false, encoder = false, head = false;
};

void save_checkpoint(const std::string& path, models::ModelBundle& bundle, BundleParts parts,
                     const nlohmann::json& extra_meta = nlohmann::json::object());
// Loads whichever components the file carries into `bundle`; returns them.
BundleParts load_checkpoint(const std::string& path, models::ModelBundle& bundle);

// ---- results persistence ----

struct ResultsTable {
  std::string name;  // file stem
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

struct CurveData {
  std::string name;
  std::vector<std::array<double, 3>> points;  // fpr, tpr, threshold
};

struct ResultsBundle {
  std::vector<ResultsTable> tables;
  std::vector<CurveData> curves;  // written as CSV and SVG
  nlohmann::json summary;         // summary.json
  std::vector<std::pair<std::string, std::string>> raw_files;  // name -> bytes
};

// Writes into <out_root>/<run_id>/ through a staging directory renamed into
// place, so a crash leaves either the old run or nothing. An existing run_id
// requires force. `fault_hook`, when set, is invoked with a step tag before
// each write and before the commit rename (crash-injection handle for tests).
void write_results(const std::string& out_root, const std::string& run_id, bool force,
                   const ResultsBundle& results,
                   const std::function<void(const std::string&)>& fault_hook = {});

std::string csv_escape(const std::string& field);

}  // namespace beyond::io
