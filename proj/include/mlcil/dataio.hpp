#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mlcil/cinet.hpp"
#include "mlcil/tensor.hpp"

namespace mlcil {

// ---- feature files ("CLF1") -------------------------------------------------
// 14-byte header: magic "CLF1", version u16, N u32, L u16, D u16, all little
// endian, followed by N*L*D float32 values. Values promote to float64 in
// memory.

void write_features(const std::string& path, const Tensor& features);  // [N, L, D]
Tensor read_features(const std::string& path);

// ---- annotations ------------------------------------------------------------
// One text line per sample: "<sample_id> <class> <class> ...". Sample ids are
// consecutive from zero; the first class is the sample's origin class and the
// order is preserved.

using Annotations = std::vector<std::vector<std::size_t>>;

void write_annotations(const std::string& path, const Annotations& ann);
Annotations read_annotations(const std::string& path);

// ---- checkpoints ("CLC1") ----------------------------------------------------
// magic "CLC1", version u16, u32 JSON length + model metadata, then a named
// tensor directory with float64 payloads. Writes are atomic (tmp + rename).

void save_checkpoint(const std::string& path, const IncrementalModel& model,
                     std::size_t session);

struct LoadedCheckpoint {
    std::unique_ptr<IncrementalModel> model;
    std::size_t session = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// ---- helpers ------------------------------------------------------------------

void atomic_write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);
std::uint64_t file_hash(const std::string& path);  // fnv1a over the raw bytes

// ---- synthetic stream ----------------------------------------------------------
// Each class owns a unit prototype direction. A sample carries its origin
// class and, with probability co_rate, one extra distinct class; every label
// plants the class prototype (plus noise) into its own set of patch slots
// while the remaining patches are pure noise.

struct GenConfig {
    std::size_t classes = 20;
    std::size_t train_per_class = 40;
    std::size_t test_per_class = 10;
    std::size_t patches = 6;       // L
    std::size_t feature_dim = 32;  // raw patch width
    std::size_t signal_patches = 2;
    double noise_std = 0.1;
    double co_rate = 0.3;
    std::uint64_t seed = 1;
};

struct Dataset {
    Tensor features;  // [N, L, D]
    Annotations labels;
};

struct GeneratedData {
    Dataset train;
    Dataset test;
    std::size_t classes = 0;
};

GeneratedData generate_stream(const GenConfig& cfg);

}  // namespace mlcil
