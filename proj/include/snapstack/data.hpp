#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "snapstack/rng.hpp"
#include "snapstack/tensor.hpp"

namespace snapstack {

// Class order is fixed project-wide: 0 COVID-19, 1 Normal, 2 Pneumonia.
inline constexpr std::size_t kClassCount = 3;
extern const std::array<const char*, kClassCount> kClassNames;

int parse_class_label(const std::string& name);  // -1 when unknown

struct ManifestRecord {
    std::string image_path;
    std::string patient_id;
    int label = 0;
    std::string source;
};

// Image inventory: comma-separated UTF-8 file with header
// image_path,patient_id,label,source. Paths must be unique, patient ids
// non-empty, labels one of the three class names, and every class present.
struct DatasetManifest {
    std::vector<ManifestRecord> records;

    std::array<std::size_t, kClassCount> class_counts() const;
    void validate() const;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

enum class Partition { Train, Validation, Test };
const char* partition_name(Partition p);

// Patient-level assignment for one cross-validation fold.
using FoldAssignment = std::map<std::string, Partition>;

struct FoldPlan {
    std::size_t fold_count = 5;
    std::array<double, 3> ratios{0.70, 0.10, 0.20};  // train, validation, test
    std::uint64_t seed = 0;
    std::vector<FoldAssignment> folds;

    std::vector<ManifestRecord> records_for(const DatasetManifest& manifest, std::size_t fold,
                                            Partition partition) const;
    // Per-fold, per-partition, per-class image counts.
    std::array<std::size_t, kClassCount> image_counts(const DatasetManifest& manifest,
                                                      std::size_t fold,
                                                      Partition partition) const;
};

// Splits patients of each class into fold_count equal-mass test blocks (so
// every patient serves in test exactly once across folds) and, per fold,
// carves the remainder into validation and train by image-count quota. The
// whole construction is a pure function of (manifest, seed).
FoldPlan make_folds(const DatasetManifest& manifest, std::size_t fold_count,
                    std::array<double, 3> ratios, std::uint64_t seed);

// Three synthetic texture classes (horizontal stripes, vertical stripes,
// checkerboard) with per-patient phase/frequency variation and per-image
// noise; two images per synthetic patient, so patient-level splitting is
// meaningful. Writes P6 images plus manifest.csv under `directory`.
struct SyntheticCorpus {
    DatasetManifest manifest;
    std::string manifest_path;
};

SyntheticCorpus generate_synthetic_corpus(const std::string& directory, std::size_t per_class,
                                          std::size_t size, std::uint64_t seed);

// In-memory variant used by unit tests: returns the images instead of
// writing files (keys are synthetic identifiers).
Tensor synthetic_image(int label, std::uint64_t patient, std::uint64_t image_index,
                       std::size_t size, std::uint64_t seed);

}  // namespace snapstack
