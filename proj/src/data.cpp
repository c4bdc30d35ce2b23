#include "snapstack/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "snapstack/image.hpp"

namespace snapstack {

const std::array<const char*, kClassCount> kClassNames = {"COVID-19", "Normal", "Pneumonia"};

int parse_class_label(const std::string& name) {
    for (std::size_t i = 0; i < kClassCount; ++i)
        if (name == kClassNames[i]) return static_cast<int>(i);
    return -1;
}

std::array<std::size_t, kClassCount> DatasetManifest::class_counts() const {
    std::array<std::size_t, kClassCount> counts{};
    for (const auto& r : records) ++counts[r.label];
    return counts;
}

void DatasetManifest::validate() const {
    if (records.empty()) throw std::invalid_argument("manifest has no records");
    std::set<std::string> paths;
    for (const auto& r : records) {
        if (r.patient_id.empty())
            throw std::invalid_argument("manifest record with empty patient_id: " + r.image_path);
        if (r.label < 0 || static_cast<std::size_t>(r.label) >= kClassCount)
            throw std::invalid_argument("manifest record with bad label: " + r.image_path);
        if (!paths.insert(r.image_path).second)
            throw std::invalid_argument("duplicate image path in manifest: " + r.image_path);
    }
    const auto counts = class_counts();
    for (std::size_t c = 0; c < kClassCount; ++c)
        if (counts[c] == 0)
            throw std::invalid_argument(std::string("manifest has no images of class ") +
                                        kClassNames[c]);
}

namespace {
std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}
}  // namespace

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path);

    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("manifest is empty: " + path);
    const auto header = split_csv_line(line);
    const std::array<std::string, 4> expected{"image_path", "patient_id", "label", "source"};
    if (header.size() != expected.size() ||
        !std::equal(header.begin(), header.end(), expected.begin()))
        throw std::runtime_error(
            "manifest header must be 'image_path,patient_id,label,source': " + path);

    DatasetManifest manifest;
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 4) {
            std::ostringstream msg;
            msg << path << " row " << row << ": expected 4 fields, got " << fields.size();
            throw std::runtime_error(msg.str());
        }
        const int label = parse_class_label(fields[2]);
        if (label < 0) {
            std::ostringstream msg;
            msg << path << " row " << row << ": unknown label '" << fields[2] << '\'';
            throw std::runtime_error(msg.str());
        }
        manifest.records.push_back({fields[0], fields[1], label, fields[3]});
    }
    manifest.validate();
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open manifest for writing: " + path);
    os << "image_path,patient_id,label,source\n";
    for (const auto& r : manifest.records)
        os << r.image_path << ',' << r.patient_id << ',' << kClassNames[r.label] << ','
           << r.source << '\n';
    if (!os) throw std::runtime_error("failed writing manifest: " + path);
}

const char* partition_name(Partition p) {
    switch (p) {
        case Partition::Train: return "train";
        case Partition::Validation: return "validation";
        case Partition::Test: return "test";
    }
    return "?";
}

std::vector<ManifestRecord> FoldPlan::records_for(const DatasetManifest& manifest,
                                                  std::size_t fold,
                                                  Partition partition) const {
    if (fold >= folds.size()) throw std::out_of_range("fold index out of range");
    std::vector<ManifestRecord> out;
    for (const auto& r : manifest.records) {
        const auto it = folds[fold].find(r.patient_id);
        if (it == folds[fold].end())
            throw std::logic_error("fold plan does not cover patient " + r.patient_id);
        if (it->second == partition) out.push_back(r);
    }
    return out;
}

std::array<std::size_t, kClassCount> FoldPlan::image_counts(const DatasetManifest& manifest,
                                                            std::size_t fold,
                                                            Partition partition) const {
    std::array<std::size_t, kClassCount> counts{};
    for (const auto& r : records_for(manifest, fold, partition)) ++counts[r.label];
    return counts;
}

FoldPlan make_folds(const DatasetManifest& manifest, std::size_t fold_count,
                    std::array<double, 3> ratios, std::uint64_t seed) {
    manifest.validate();
    if (fold_count < 2) throw std::invalid_argument("fold_count must be >= 2");
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0)) throw std::invalid_argument("split ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");

    // Patients per class, with image counts; ordered for determinism.
    struct Patient {
        std::string id;
        std::size_t images = 0;
    };
    std::array<std::map<std::string, std::size_t>, kClassCount> by_class;
    for (const auto& r : manifest.records) ++by_class[r.label][r.patient_id];
    {
        // A patient id must not span classes, otherwise patient-level
        // assignment is ambiguous.
        std::map<std::string, int> seen;
        for (const auto& r : manifest.records) {
            const auto [it, inserted] = seen.emplace(r.patient_id, r.label);
            if (!inserted && it->second != r.label)
                throw std::invalid_argument("patient " + r.patient_id +
                                            " appears under two classes");
        }
    }

    FoldPlan plan;
    plan.fold_count = fold_count;
    plan.ratios = ratios;
    plan.seed = seed;
    plan.folds.assign(fold_count, {});

    Rng root(seed);
    for (std::size_t cls = 0; cls < kClassCount; ++cls) {
        if (by_class[cls].size() < fold_count) {
            std::ostringstream msg;
            msg << "class " << kClassNames[cls] << " has " << by_class[cls].size()
                << " patients, fewer than the " << fold_count << " partitions needed";
            throw std::invalid_argument(msg.str());
        }
        std::vector<Patient> patients;
        for (const auto& [id, images] : by_class[cls]) patients.push_back({id, images});
        Rng rng = root.fork(cls);
        rng.shuffle(patients);

        // Equal-image-mass test blocks: each patient lands in exactly one
        // block, fold f tests block f.
        std::vector<std::vector<std::size_t>> blocks(fold_count);
        std::vector<std::size_t> block_mass(fold_count, 0);
        for (std::size_t p = 0; p < patients.size(); ++p) {
            std::size_t lightest = 0;
            for (std::size_t b = 1; b < fold_count; ++b)
                if (block_mass[b] < block_mass[lightest]) lightest = b;
            blocks[lightest].push_back(p);
            block_mass[lightest] += patients[p].images;
        }

        std::size_t class_images = 0;
        for (const auto& p : patients) class_images += p.images;
        const auto val_target = static_cast<std::size_t>(
            std::llround(ratios[1] * static_cast<double>(class_images)));

        std::vector<std::size_t> block_of(patients.size());
        for (std::size_t b = 0; b < fold_count; ++b)
            for (std::size_t p : blocks[b]) block_of[p] = b;

        for (std::size_t f = 0; f < fold_count; ++f) {
            auto& assignment = plan.folds[f];
            for (std::size_t p : blocks[f]) assignment[patients[p].id] = Partition::Test;

            // Walk the shuffled order starting just past this fold's block so
            // validation membership rotates across folds.
            std::size_t val_images = 0;
            bool val_has_patient = false;
            const std::size_t start = (f + 1) * patients.size() / fold_count;
            for (std::size_t k = 0; k < patients.size(); ++k) {
                const std::size_t p = (start + k) % patients.size();
                if (block_of[p] == f) continue;
                if (!val_has_patient || val_images < val_target) {
                    assignment[patients[p].id] = Partition::Validation;
                    val_images += patients[p].images;
                    val_has_patient = true;
                } else {
                    assignment[patients[p].id] = Partition::Train;
                }
            }
        }
    }
    return plan;
}

Tensor synthetic_image(int label, std::uint64_t patient, std::uint64_t image_index,
                       std::size_t size, std::uint64_t seed) {
    if (label < 0 || static_cast<std::size_t>(label) >= kClassCount)
        throw std::invalid_argument("synthetic label out of range");
    Rng patient_rng =
        Rng(seed).fork(hash_combine(static_cast<std::uint64_t>(label), patient));
    const double phase = patient_rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double cycles = patient_rng.uniform(5.0, 7.0);
    Rng image_rng = patient_rng.fork(image_index);
    const double brightness = image_rng.uniform(-0.05, 0.05);

    Tensor img = Tensor::zeros({size, size, 3});
    double* px = img.data();
    const double freq = 2.0 * std::numbers::pi * cycles / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            double pattern = 0.0;
            switch (label) {
                case 0: pattern = std::sin(freq * static_cast<double>(y) + phase); break;
                case 1: pattern = std::sin(freq * static_cast<double>(x) + phase); break;
                default:
                    pattern = std::sin(freq * static_cast<double>(x) + phase) *
                              std::sin(freq * static_cast<double>(y) + phase);
                    break;
            }
            const double noise = image_rng.uniform(-0.03, 0.03);
            const double v =
                std::clamp(0.5 + 0.35 * pattern + brightness + noise, 0.02, 0.98);
            for (std::size_t c = 0; c < 3; ++c) px[(y * size + x) * 3 + c] = v;
        }
    }
    return img;
}

SyntheticCorpus generate_synthetic_corpus(const std::string& directory, std::size_t per_class,
                                          std::size_t size, std::uint64_t seed) {
    if (per_class < 4) throw std::invalid_argument("per_class must be >= 4");
    if (size < 8) throw std::invalid_argument("synthetic image size must be >= 8");
    std::filesystem::create_directories(directory);

    SyntheticCorpus corpus;
    for (std::size_t cls = 0; cls < kClassCount; ++cls) {
        std::size_t produced = 0;
        std::uint64_t patient = 0;
        while (produced < per_class) {
            // Two images per patient; an odd remainder goes to the last
            // patient so nobody ends up with a single image.
            const std::size_t remaining = per_class - produced;
            const std::size_t take = remaining == 3 ? 3 : 2;
            std::ostringstream pid;
            pid << 'c' << cls << "_p" << patient;
            for (std::size_t k = 0; k < take; ++k) {
                Tensor img = synthetic_image(static_cast<int>(cls), patient, k, size, seed);
                std::ostringstream file;
                file << "img_c" << cls << "_p" << patient << '_' << k << ".ppm";
                const auto full = std::filesystem::path(directory) / file.str();
                write_ppm(full.string(), img);
                corpus.manifest.records.push_back(
                    {full.string(), pid.str(), static_cast<int>(cls), "synthetic"});
            }
            produced += take;
            ++patient;
        }
    }
    corpus.manifest.validate();
    const auto manifest_path = std::filesystem::path(directory) / "manifest.csv";
    corpus.manifest_path = manifest_path.string();
    save_manifest(corpus.manifest, corpus.manifest_path);
    return corpus;
}

}  // namespace snapstack
