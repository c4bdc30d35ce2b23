#include "snapstack/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "snapstack/digest.hpp"

namespace snapstack {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string to_hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

json augment_to_json(const AugmentConfig& a) {
    return json{{"flip_probability", a.flip_probability},
                {"rotation_degrees", a.rotation_degrees},
                {"shear_degrees", a.shear_degrees},
                {"zoom_fraction", a.zoom_fraction},
                {"shift_fraction", a.shift_fraction},
                {"seed", a.seed}};
}

AugmentConfig augment_from_json(const json& j) {
    AugmentConfig a;
    a.flip_probability = j.value("flip_probability", a.flip_probability);
    a.rotation_degrees = j.value("rotation_degrees", a.rotation_degrees);
    a.shear_degrees = j.value("shear_degrees", a.shear_degrees);
    a.zoom_fraction = j.value("zoom_fraction", a.zoom_fraction);
    a.shift_fraction = j.value("shift_fraction", a.shift_fraction);
    a.seed = j.value("seed", a.seed);
    a.validate();
    return a;
}

json network_to_json(const NetworkTrainConfig& n) {
    return json{{"arch", n.arch},
                {"total_iterations", n.total_iterations},
                {"batch_size", n.batch_size},
                {"checkpoint_fractions", n.checkpoint_fractions},
                {"seed", n.seed},
                {"learning_rate", n.learning_rate},
                {"dropout", n.dropout},
                {"base_depth", n.base_depth},
                {"width_divisor", n.width_divisor},
                {"head_channels", n.head_channels},
                {"freeze_trunk", n.freeze_trunk}};
}

NetworkTrainConfig network_from_json(const json& j, NetworkTrainConfig defaults) {
    NetworkTrainConfig n = std::move(defaults);
    n.arch = j.value("arch", n.arch);
    n.total_iterations = j.value("total_iterations", n.total_iterations);
    n.batch_size = j.value("batch_size", n.batch_size);
    if (j.contains("checkpoint_fractions"))
        n.checkpoint_fractions = j.at("checkpoint_fractions").get<std::vector<double>>();
    n.seed = j.value("seed", n.seed);
    n.learning_rate = j.value("learning_rate", n.learning_rate);
    n.dropout = j.value("dropout", n.dropout);
    n.base_depth = j.value("base_depth", n.base_depth);
    n.width_divisor = j.value("width_divisor", n.width_divisor);
    n.head_channels = j.value("head_channels", n.head_channels);
    n.freeze_trunk = j.value("freeze_trunk", n.freeze_trunk);
    return n;
}

json config_to_json(const ExperimentConfig& c) {
    return json{{"manifest", c.manifest_path},
                {"output_dir", c.output_dir},
                {"input_size", c.input_size},
                {"folds", json{{"count", c.fold_count},
                               {"ratios", c.ratios},
                               {"seed", c.fold_seed}}},
                {"augment", augment_to_json(c.augment)},
                {"loss", json{{"class_weights", c.class_weights}}},
                {"stacker", json{{"lambda", c.stacker_lambda}}},
                {"evaluation", json{{"bootstrap_resamples", c.bootstrap_resamples},
                                    {"seed", c.eval_seed}}},
                {"networks", json{{"covnet30", network_to_json(c.covnet30)},
                                  {"companion", network_to_json(c.companion)}}}};
}

}  // namespace

void ExperimentConfig::validate() const {
    if (manifest_path.empty()) throw std::invalid_argument("config: manifest path is required");
    if (output_dir.empty()) throw std::invalid_argument("config: output_dir is required");
    if (input_size < 16) throw std::invalid_argument("config: input_size must be >= 16");
    if (fold_count < 2) throw std::invalid_argument("config: fold count must be >= 2");
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0)) throw std::invalid_argument("config: ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("config: ratios must sum to 1");
    augment.validate();
    LossConfig{class_weights}.validate(kClassCount);
    if (stacker_lambda < 0.0) throw std::invalid_argument("config: lambda must be >= 0");
    if (bootstrap_resamples < 100)
        throw std::invalid_argument("config: bootstrap_resamples must be >= 100");

    if (covnet30.checkpoint_fractions.size() != 2)
        throw std::invalid_argument(
            "config: covnet30 needs exactly 2 checkpoint fractions (sub-models 1 and 2)");
    if (companion.checkpoint_fractions.size() != 3)
        throw std::invalid_argument(
            "config: companion needs exactly 3 checkpoint fractions (sub-models 3..5)");
    for (const auto* n : {&covnet30, &companion}) {
        if (n->arch != "covnet30" && n->arch != "covnet30-mini" && n->arch != "companion")
            throw std::invalid_argument("config: unknown arch '" + n->arch + '\'');
        if (n->arch == "covnet30" && input_size != 224)
            throw std::invalid_argument("config: the full covnet30 arch expects input_size 224");
        if (!(n->learning_rate > 0.0))
            throw std::invalid_argument("config: learning rate must be positive");
        TrainPlan probe;
        probe.total_iterations = n->total_iterations;
        probe.batch_size = n->batch_size;
        probe.checkpoint_fractions = n->checkpoint_fractions;
        probe.validate();
    }
}

std::uint64_t ExperimentConfig::digest() const {
    // output_dir is a location, not an experiment parameter; leave it out so
    // the same experiment written elsewhere matches its own artifacts.
    json j = config_to_json(*this);
    j.erase("output_dir");
    Fnv1a h;
    h.update(j.dump());
    return h.value();
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config " + path + " is not valid JSON: " + e.what());
    }

    ExperimentConfig c;
    c.manifest_path = j.value("manifest", "");
    c.output_dir = j.value("output_dir", "");
    c.input_size = j.value("input_size", c.input_size);
    if (j.contains("folds")) {
        const auto& f = j.at("folds");
        c.fold_count = f.value("count", c.fold_count);
        if (f.contains("ratios")) {
            const auto r = f.at("ratios").get<std::vector<double>>();
            if (r.size() != 3) throw std::runtime_error("config: ratios must have 3 entries");
            std::copy(r.begin(), r.end(), c.ratios.begin());
        }
        c.fold_seed = f.value("seed", c.fold_seed);
    }
    if (j.contains("augment")) c.augment = augment_from_json(j.at("augment"));
    if (j.contains("loss"))
        c.class_weights = j.at("loss").value("class_weights", c.class_weights);
    if (j.contains("stacker")) c.stacker_lambda = j.at("stacker").value("lambda", 1.0);
    if (j.contains("evaluation")) {
        c.bootstrap_resamples =
            j.at("evaluation").value("bootstrap_resamples", c.bootstrap_resamples);
        c.eval_seed = j.at("evaluation").value("seed", c.eval_seed);
    }

    NetworkTrainConfig covnet_defaults;
    covnet_defaults.arch = "covnet30-mini";
    covnet_defaults.checkpoint_fractions = {0.5, 1.0};
    NetworkTrainConfig companion_defaults;
    companion_defaults.arch = "companion";
    companion_defaults.checkpoint_fractions = {1.0 / 3.0, 2.0 / 3.0, 1.0};
    if (j.contains("networks")) {
        const auto& n = j.at("networks");
        c.covnet30 = network_from_json(n.value("covnet30", json::object()), covnet_defaults);
        c.companion = network_from_json(n.value("companion", json::object()),
                                        companion_defaults);
    } else {
        c.covnet30 = covnet_defaults;
        c.companion = companion_defaults;
    }
    c.validate();
    return c;
}

void ExperimentConfig::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write config: " + path);
    os << config_to_json(*this).dump(2) << '\n';
}

std::string network_for_sub(std::size_t sub) {
    if (sub >= 1 && sub <= 2) return "covnet30";
    if (sub >= 3 && sub <= 5) return "companion";
    throw std::invalid_argument("sub-model index must be 1..5");
}

std::vector<std::size_t> subs_for_network(const std::string& network) {
    if (network == "covnet30") return {1, 2};
    if (network == "companion") return {3, 4, 5};
    throw std::invalid_argument("unknown network '" + network + "' (want covnet30|companion)");
}

NetworkSpec build_network_spec(const ExperimentConfig& config, const std::string& network) {
    const NetworkTrainConfig& n =
        network == "covnet30" ? config.covnet30
        : network == "companion"
            ? config.companion
            : throw std::invalid_argument("unknown network '" + network + '\'');
    if (n.arch == "covnet30") return build_covnet30(n.dropout);
    if (n.arch == "covnet30-mini")
        return build_covnet30_mini(config.input_size, kClassCount, n.dropout);
    CompanionConfig cc;
    cc.input_size = config.input_size;
    cc.base_depth = n.base_depth;
    cc.width_divisor = n.width_divisor;
    cc.head_channels = n.head_channels;
    cc.class_count = kClassCount;
    cc.freeze_trunk = n.freeze_trunk;
    return build_companion(cc);
}

std::string fold_plan_path(const ExperimentConfig& c) {
    return (fs::path(c.output_dir) / "folds.json").string();
}
std::string fold_dir(const ExperimentConfig& c, std::size_t fold) {
    return (fs::path(c.output_dir) / ("fold" + std::to_string(fold))).string();
}
std::string checkpoint_path(const ExperimentConfig& c, std::size_t fold, std::size_t sub) {
    const std::string name = network_for_sub(sub) + "-sub" + std::to_string(sub) + ".ckpt";
    return (fs::path(fold_dir(c, fold)) / name).string();
}
std::string stacked_model_path(const ExperimentConfig& c, std::size_t fold) {
    return (fs::path(fold_dir(c, fold)) / "stacked.model").string();
}
std::string stack_features_path(const ExperimentConfig& c, std::size_t fold) {
    return (fs::path(fold_dir(c, fold)) / "stack-features.csv").string();
}
std::string eval_report_path(const ExperimentConfig& c, std::size_t fold,
                             const std::string& target) {
    return (fs::path(fold_dir(c, fold)) / ("eval-" + target + ".json")).string();
}
std::string mean_report_path(const ExperimentConfig& c, const std::string& target) {
    return (fs::path(c.output_dir) / ("eval-" + target + "-mean.json")).string();
}

namespace {

json seeds_json(const ExperimentConfig& c) {
    return json{{"fold", c.fold_seed},
                {"augment", c.augment.seed},
                {"covnet30", c.covnet30.seed},
                {"companion", c.companion.seed},
                {"evaluation", c.eval_seed}};
}

void check_fold_index(const ExperimentConfig& c, std::size_t fold) {
    if (fold < 1 || fold > c.fold_count)
        throw std::invalid_argument("fold must be in 1.." + std::to_string(c.fold_count));
}

}  // namespace

FoldPlan cmd_split(const ExperimentConfig& config, std::ostream& out) {
    config.validate();
    const DatasetManifest manifest = load_manifest(config.manifest_path);
    FoldPlan plan = make_folds(manifest, config.fold_count, config.ratios, config.fold_seed);

    fs::create_directories(config.output_dir);
    json folds = json::array();
    for (const auto& assignment : plan.folds) {
        json f{{"train", json::array()},
               {"validation", json::array()},
               {"test", json::array()}};
        for (const auto& [patient, part] : assignment) f[partition_name(part)].push_back(patient);
        folds.push_back(std::move(f));
    }
    const json doc{{"config_digest", to_hex(config.digest())},
                   {"seeds", seeds_json(config)},
                   {"fold_count", plan.fold_count},
                   {"ratios", plan.ratios},
                   {"folds", folds}};
    std::ofstream os(fold_plan_path(config), std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write fold plan: " + fold_plan_path(config));
    os << doc.dump(2) << '\n';

    // Per-fold image counts, one block per fold.
    out << std::left << std::setw(8) << "Fold" << std::setw(16) << "Partition";
    for (const auto* name : kClassNames) out << std::setw(12) << name;
    out << std::setw(8) << "Total" << '\n';
    for (std::size_t f = 0; f < plan.fold_count; ++f) {
        for (const Partition part :
             {Partition::Train, Partition::Validation, Partition::Test}) {
            const auto counts = plan.image_counts(manifest, f, part);
            out << std::left << std::setw(8) << ("Fold" + std::to_string(f + 1))
                << std::setw(16) << partition_name(part);
            std::size_t total = 0;
            for (const auto n : counts) {
                out << std::setw(12) << n;
                total += n;
            }
            out << std::setw(8) << total << '\n';
        }
    }
    return plan;
}

FoldPlan read_fold_plan(const std::string& path, const ExperimentConfig& config) {
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("fold plan not found: " + path + " (run the split stage first)");
    json doc;
    try {
        is >> doc;
    } catch (const json::exception& e) {
        throw std::runtime_error("fold plan " + path + " is not valid JSON: " + e.what());
    }
    if (doc.value("config_digest", "") != to_hex(config.digest()))
        throw std::runtime_error("fold plan " + path +
                                 " was produced by a different config; rerun split");
    FoldPlan plan;
    plan.fold_count = doc.at("fold_count").get<std::size_t>();
    plan.seed = config.fold_seed;
    const auto r = doc.at("ratios").get<std::vector<double>>();
    std::copy(r.begin(), r.end(), plan.ratios.begin());
    for (const auto& f : doc.at("folds")) {
        FoldAssignment assignment;
        for (const auto& [name, part] :
             {std::pair{"train", Partition::Train},
              std::pair{"validation", Partition::Validation},
              std::pair{"test", Partition::Test}})
            for (const auto& patient : f.at(name))
                assignment[patient.get<std::string>()] = part;
        plan.folds.push_back(std::move(assignment));
    }
    if (plan.folds.size() != plan.fold_count)
        throw std::runtime_error("fold plan " + path + " is inconsistent");
    return plan;
}

namespace {

std::vector<TrainSample> to_samples(const std::vector<ManifestRecord>& records) {
    std::vector<TrainSample> samples;
    samples.reserve(records.size());
    for (const auto& r : records) samples.push_back({r.image_path, r.label});
    return samples;
}

std::vector<Tensor> load_plain_images(const std::vector<ManifestRecord>& records,
                                      std::size_t size) {
    std::vector<Tensor> images(records.size());
    std::string error;
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < static_cast<long long>(records.size()); ++i) {
        try {
            images[i] = load_image(records[i].image_path, size, size);
        } catch (const std::exception& e) {
#pragma omp critical
            if (error.empty()) error = e.what();
        }
    }
    if (!error.empty()) throw std::runtime_error(error);
    return images;
}

void write_meta(const std::string& path, const ExperimentConfig& config, json extra) {
    extra["config_digest"] = to_hex(config.digest());
    extra["seeds"] = seeds_json(config);
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write metadata: " + path);
    os << extra.dump(2) << '\n';
}

int argmax_lowest_tie(std::span<const double> row) {
    int best = 0;
    for (std::size_t i = 1; i < row.size(); ++i)
        if (row[i] > row[best]) best = static_cast<int>(i);
    return best;
}

}  // namespace

std::vector<std::string> cmd_train(const ExperimentConfig& config, std::size_t fold,
                                   const std::string& network) {
    config.validate();
    check_fold_index(config, fold);
    const auto subs = subs_for_network(network);
    const NetworkTrainConfig& ncfg = network == "covnet30" ? config.covnet30 : config.companion;

    const DatasetManifest manifest = load_manifest(config.manifest_path);
    const FoldPlan plan = read_fold_plan(fold_plan_path(config), config);
    const auto train_records = plan.records_for(manifest, fold - 1, Partition::Train);
    if (train_records.empty()) throw std::runtime_error("fold has an empty train partition");

    const NetworkSpec spec = build_network_spec(config, network);
    TrainPlan tplan;
    tplan.total_iterations = ncfg.total_iterations;
    tplan.batch_size = ncfg.batch_size;
    tplan.checkpoint_fractions = ncfg.checkpoint_fractions;
    tplan.seed = hash_combine(ncfg.seed, fold);
    tplan.adam.learning_rate = ncfg.learning_rate;

    // Per-image augmentation stream derived from (seed, pass, index): the
    // draw is independent of batch composition and worker scheduling.
    const std::size_t size = config.input_size;
    const AugmentConfig aug = config.augment;
    const std::uint64_t aug_seed = hash_combine(aug.seed, fold);
    const SampleLoader loader = [size, aug, aug_seed](const TrainSample& sample,
                                                      std::uint64_t pass, std::size_t index) {
        Tensor img = load_image(sample.key, size, size);
        Rng rng(hash_combine(aug_seed, hash_combine(pass, index)));
        return augment(img, aug, rng);
    };

    fs::create_directories(fold_dir(config, fold));
    const std::string log_path =
        (fs::path(fold_dir(config, fold)) / ("train-" + network + ".log.jsonl")).string();
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write training log: " + log_path);
    log << json{{"config_digest", to_hex(config.digest())},
                {"network", network},
                {"fold", fold},
                {"seeds", seeds_json(config)}}
               .dump()
        << '\n';

    const TrainResult result =
        train(spec, to_samples(train_records), tplan, LossConfig{config.class_weights}, loader,
              &log);

    if (result.checkpoints.size() != subs.size())
        throw std::logic_error("checkpoint count does not match the sub-model numbering");

    std::vector<std::string> paths;
    for (std::size_t i = 0; i < subs.size(); ++i) {
        const std::string path = checkpoint_path(config, fold, subs[i]);
        save_checkpoint(spec, result.checkpoints[i], path);
        write_meta(path + ".meta.json", config,
                   json{{"network", network},
                        {"sub_model", subs[i]},
                        {"fold", fold},
                        {"trained_iterations", result.checkpoints[i].trained_iterations}});
        paths.push_back(path);
    }
    return paths;
}

namespace {

std::vector<Network> load_sub_models(const ExperimentConfig& config, std::size_t fold) {
    std::vector<Network> nets;
    for (std::size_t sub = 1; sub <= kSubModelCount; ++sub) {
        const std::string network = network_for_sub(sub);
        const std::string path = checkpoint_path(config, fold, sub);
        if (!fs::exists(path))
            throw std::runtime_error("missing checkpoint for sub" + std::to_string(sub) + ": " +
                                     path + " (train the " + network + " network first)");
        const NetworkSpec spec = build_network_spec(config, network);
        nets.emplace_back(spec, load_checkpoint(path, spec));
    }
    return nets;
}

}  // namespace

StackedModel cmd_stack(const ExperimentConfig& config, std::size_t fold) {
    config.validate();
    check_fold_index(config, fold);
    const DatasetManifest manifest = load_manifest(config.manifest_path);
    const FoldPlan plan = read_fold_plan(fold_plan_path(config), config);
    const auto val_records = plan.records_for(manifest, fold - 1, Partition::Validation);
    if (val_records.empty()) throw std::runtime_error("fold has an empty validation partition");

    std::vector<Network> nets = load_sub_models(config, fold);
    std::vector<Network*> net_ptrs;
    for (auto& n : nets) net_ptrs.push_back(&n);

    const auto images = load_plain_images(val_records, config.input_size);
    std::vector<int> labels;
    for (const auto& r : val_records) labels.push_back(r.label);

    const StackFeatures features = collect_features(net_ptrs, images, labels);
    const StackedModel model = fit_stacker(features, config.stacker_lambda);

    model.save(stacked_model_path(config, fold));
    write_meta(stacked_model_path(config, fold) + ".meta.json", config,
               json{{"fold", fold},
                    {"lambda", config.stacker_lambda},
                    {"validation_images", images.size()}});

    // Audit copy of the feature matrix.
    std::ofstream fs_out(stack_features_path(config, fold), std::ios::trunc);
    if (!fs_out)
        throw std::runtime_error("cannot write features: " + stack_features_path(config, fold));
    for (std::size_t j = 1; j <= kSubModelCount; ++j)
        for (const auto* cls : kClassNames) fs_out << "sub" << j << '_' << cls << ',';
    fs_out << "label\n";
    const std::size_t width = features.matrix.extent(1);
    fs_out << std::setprecision(17);
    for (std::size_t i = 0; i < features.matrix.extent(0); ++i) {
        for (std::size_t j = 0; j < width; ++j) fs_out << features.matrix.data()[i * width + j] << ',';
        fs_out << kClassNames[features.labels[i]] << '\n';
    }
    return model;
}

namespace {

struct TargetScores {
    std::vector<std::vector<double>> scores;  // [n][class]
    std::vector<int> predicted;
};

TargetScores score_target(const ExperimentConfig& config, std::size_t fold,
                          const std::string& target, const std::vector<Tensor>& images,
                          const std::vector<int>& labels) {
    TargetScores out;
    const std::size_t n = images.size();
    out.scores.assign(n, std::vector<double>(kClassCount, 0.0));

    if (target == "stacked") {
        std::vector<Network> nets = load_sub_models(config, fold);
        std::vector<Network*> ptrs;
        for (auto& net : nets) ptrs.push_back(&net);
        if (!fs::exists(stacked_model_path(config, fold)))
            throw std::runtime_error("stacked model missing: " +
                                     stacked_model_path(config, fold) +
                                     " (run the stack stage first)");
        const StackedModel model = StackedModel::load(stacked_model_path(config, fold));
        const StackFeatures features = collect_features(ptrs, images, labels);
        const std::size_t width = features.matrix.extent(1);
        for (std::size_t i = 0; i < n; ++i) {
            std::span<const double> row(features.matrix.data() + i * width, width);
            for (std::size_t c = 0; c < kClassCount; ++c)
                out.scores[i][c] = stacked_score(model, row, c);
        }
    } else {
        std::size_t sub = 0;
        if (target.rfind("sub", 0) == 0 && target.size() == 4 && target[3] >= '1' &&
            target[3] <= '5') {
            sub = static_cast<std::size_t>(target[3] - '0');
        } else if (target == "covnet30") {
            sub = 2;  // the fully trained base network
        } else if (target == "companion") {
            sub = 5;
        } else {
            throw std::invalid_argument(
                "unknown evaluation target '" + target +
                "' (want stacked, sub1..sub5, covnet30 or companion)");
        }
        const std::string network = network_for_sub(sub);
        const std::string path = checkpoint_path(config, fold, sub);
        if (!fs::exists(path))
            throw std::runtime_error("missing checkpoint for sub" + std::to_string(sub) + ": " +
                                     path);
        const NetworkSpec spec = build_network_spec(config, network);
        Network net(spec, load_checkpoint(path, spec));

        constexpr std::size_t kChunk = 64;
        const auto& shape = images.front().shape();
        const std::size_t stride = shape[0] * shape[1] * shape[2];
        for (std::size_t start = 0; start < n; start += kChunk) {
            const std::size_t count = std::min(kChunk, n - start);
            Tensor batch = Tensor::zeros({count, shape[0], shape[1], shape[2]});
            for (std::size_t i = 0; i < count; ++i)
                std::copy(images[start + i].data(), images[start + i].data() + stride,
                          batch.data() + i * stride);
            const Tensor probs = net.predict_probs(batch);
            for (std::size_t i = 0; i < count; ++i)
                for (std::size_t c = 0; c < kClassCount; ++c)
                    out.scores[start + i][c] = probs.data()[i * kClassCount + c];
        }
    }

    out.predicted.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.predicted[i] = argmax_lowest_tie(out.scores[i]);
    return out;
}

json metric_or_null(const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace

EvalSummary cmd_evaluate(const ExperimentConfig& config, std::size_t fold,
                         const std::string& target) {
    config.validate();
    check_fold_index(config, fold);
    const DatasetManifest manifest = load_manifest(config.manifest_path);
    const FoldPlan plan = read_fold_plan(fold_plan_path(config), config);
    const auto test_records = plan.records_for(manifest, fold - 1, Partition::Test);
    if (test_records.empty()) throw std::runtime_error("fold has an empty test partition");

    const auto images = load_plain_images(test_records, config.input_size);
    std::vector<int> labels;
    for (const auto& r : test_records) labels.push_back(r.label);

    const TargetScores ts = score_target(config, fold, target, images, labels);

    const ConfusionMatrix cm = confusion(labels, ts.predicted, kClassCount);
    const RatesReport rates = compute_rates(cm);
    const RocReport roc = roc_auc(labels, ts.scores);
    const double error_rate = 1.0 - rates.overall_accuracy;
    const double err_ci = error_ci_half_width(error_rate, labels.size());
    Fnv1a target_hash;
    target_hash.update(target);
    const double auc_ci =
        auc_ci_half_width(labels, ts.scores, config.bootstrap_resamples,
                          hash_combine(config.eval_seed, hash_combine(fold, target_hash.value())));

    EvalSummary summary;
    summary.target = target;
    summary.fold = fold;
    summary.n = labels.size();
    summary.overall_accuracy = rates.overall_accuracy;
    summary.error_rate = error_rate;
    summary.error_ci = err_ci;
    summary.macro_sensitivity = rates.macro.sensitivity;
    summary.macro_specificity = rates.macro.specificity;
    summary.macro_ppv = rates.macro.ppv;
    summary.macro_f1 = rates.macro.f1;
    summary.macro_accuracy_ovr = rates.macro.accuracy;
    summary.macro_auc = roc.macro_auc;
    summary.macro_auc_ci = auc_ci;

    // Report document.
    json per_class = json::object();
    for (std::size_t c = 0; c < kClassCount; ++c) {
        const auto& m = rates.per_class[c];
        per_class[kClassNames[c]] =
            json{{"accuracy_ovr", metric_or_null(m.accuracy)},
                 {"ppv", metric_or_null(m.ppv)},
                 {"sensitivity", metric_or_null(m.sensitivity)},
                 {"specificity", metric_or_null(m.specificity)},
                 {"f1", metric_or_null(m.f1)},
                 {"auc", roc.per_class[c].auc}};
    }
    json cm_json = json::array();
    for (std::size_t t = 0; t < kClassCount; ++t) {
        json row = json::array();
        for (std::size_t p = 0; p < kClassCount; ++p) row.push_back(cm.at(t, p));
        cm_json.push_back(std::move(row));
    }
    const json doc{{"target", target},
                   {"fold", fold},
                   {"n", labels.size()},
                   {"config_digest", to_hex(config.digest())},
                   {"seeds", seeds_json(config)},
                   {"confusion", cm_json},
                   {"per_class", per_class},
                   {"macro",
                    json{{"accuracy_ovr", metric_or_null(rates.macro.accuracy)},
                         {"ppv", metric_or_null(rates.macro.ppv)},
                         {"sensitivity", metric_or_null(rates.macro.sensitivity)},
                         {"specificity", metric_or_null(rates.macro.specificity)},
                         {"f1", metric_or_null(rates.macro.f1)},
                         {"auc", roc.macro_auc}}},
                   {"overall_accuracy", rates.overall_accuracy},
                   {"error_rate", error_rate},
                   {"error_ci95", err_ci},
                   {"macro_auc", roc.macro_auc},
                   {"macro_auc_ci95", auc_ci},
                   {"warnings", rates.warnings}};

    fs::create_directories(fold_dir(config, fold));
    const std::string report_path = eval_report_path(config, fold, target);
    {
        std::ofstream os(report_path, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write report: " + report_path);
        os << doc.dump(2) << '\n';
    }
    for (std::size_t c = 0; c < kClassCount; ++c) {
        std::ostringstream name;
        name << "eval-" << target << "-roc-" << c << ".tsv";
        std::ofstream os(fs::path(fold_dir(config, fold)) / name.str(), std::ios::trunc);
        os << "# fpr\ttpr (class " << kClassNames[c] << "; config "
           << to_hex(config.digest()) << ")\n"
           << std::setprecision(17);
        for (const auto& [fpr, tpr] : roc.per_class[c].points) os << fpr << '\t' << tpr << '\n';
    }
    return summary;
}

std::vector<EvalSummary> cmd_evaluate_all_folds(const ExperimentConfig& config,
                                                const std::string& target) {
    config.validate();
    std::vector<EvalSummary> all;
    for (std::size_t f = 1; f <= config.fold_count; ++f)
        all.push_back(cmd_evaluate(config, f, target));

    EvalSummary mean;
    mean.target = target;
    mean.fold = 0;
    const auto avg = [&](auto getter) {
        double sum = 0.0;
        for (const auto& s : all) sum += getter(s);
        return sum / static_cast<double>(all.size());
    };
    const auto avg_opt = [&](auto getter) -> std::optional<double> {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& s : all)
            if (const auto v = getter(s)) {
                sum += *v;
                ++n;
            }
        if (n == 0) return std::nullopt;
        return sum / static_cast<double>(n);
    };
    mean.n = 0;
    for (const auto& s : all) mean.n += s.n;
    mean.overall_accuracy = avg([](const EvalSummary& s) { return s.overall_accuracy; });
    mean.error_rate = avg([](const EvalSummary& s) { return s.error_rate; });
    mean.error_ci = avg([](const EvalSummary& s) { return s.error_ci; });
    mean.macro_auc = avg([](const EvalSummary& s) { return s.macro_auc; });
    mean.macro_auc_ci = avg([](const EvalSummary& s) { return s.macro_auc_ci; });
    mean.macro_sensitivity = avg_opt([](const EvalSummary& s) { return s.macro_sensitivity; });
    mean.macro_specificity = avg_opt([](const EvalSummary& s) { return s.macro_specificity; });
    mean.macro_ppv = avg_opt([](const EvalSummary& s) { return s.macro_ppv; });
    mean.macro_f1 = avg_opt([](const EvalSummary& s) { return s.macro_f1; });
    mean.macro_accuracy_ovr =
        avg_opt([](const EvalSummary& s) { return s.macro_accuracy_ovr; });

    const json doc{{"target", target},
                   {"folds", config.fold_count},
                   {"n_total", mean.n},
                   {"config_digest", to_hex(config.digest())},
                   {"seeds", seeds_json(config)},
                   {"mean",
                    json{{"overall_accuracy", mean.overall_accuracy},
                         {"error_rate", mean.error_rate},
                         {"error_ci95", mean.error_ci},
                         {"sensitivity", metric_or_null(mean.macro_sensitivity)},
                         {"specificity", metric_or_null(mean.macro_specificity)},
                         {"ppv", metric_or_null(mean.macro_ppv)},
                         {"f1", metric_or_null(mean.macro_f1)},
                         {"macro_auc", mean.macro_auc},
                         {"macro_auc_ci95", mean.macro_auc_ci}}}};
    std::ofstream os(mean_report_path(config, target), std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot write mean report: " + mean_report_path(config, target));
    os << doc.dump(2) << '\n';

    all.push_back(mean);
    return all;
}

std::string cmd_compare(const ExperimentConfig& config, const std::vector<std::size_t>& folds,
                        const std::vector<std::string>& targets) {
    std::vector<std::string> rows = targets;
    if (std::find(rows.begin(), rows.end(), "stacked") == rows.end()) rows.push_back("stacked");

    std::ostringstream grid;
    grid << std::left << std::setw(14) << "Model";
    for (const auto f : folds) grid << std::setw(10) << ("Fold" + std::to_string(f));
    grid << '\n';
    for (const auto& target : rows) {
        grid << std::left << std::setw(14) << target;
        for (const auto f : folds) {
            const EvalSummary s = cmd_evaluate(config, f, target);
            grid << std::setw(10) << std::fixed << std::setprecision(2)
                 << (100.0 * s.overall_accuracy);
        }
        grid << '\n';
    }
    const std::string text = grid.str();
    const auto path = fs::path(config.output_dir) / "comparison.txt";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write comparison grid: " + path.string());
    os << text;
    return text;
}

}  // namespace snapstack
