#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "snapstack/pipeline.hpp"

using namespace snapstack;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Deliberately tiny: 16x16 images, shallow nets, 8 iterations. Exercises the
// full pipeline fast; quality is asserted in the acceptance suite instead.
ExperimentConfig tiny_config(const fs::path& work) {
    ExperimentConfig c;
    c.manifest_path = (work / "synth" / "manifest.csv").string();
    c.output_dir = (work / "out").string();
    c.input_size = 16;
    c.fold_count = 5;
    c.fold_seed = 5;
    c.augment.seed = 11;
    c.augment.rotation_degrees = 5.0;

    c.covnet30.arch = "companion";  // mini covnet needs >= 40px; use the small trunk
    c.covnet30.base_depth = 1;
    c.covnet30.width_divisor = 16;
    c.covnet30.head_channels = 4;
    c.covnet30.total_iterations = 8;
    c.covnet30.batch_size = 8;
    c.covnet30.checkpoint_fractions = {0.5, 1.0};
    c.covnet30.seed = 21;

    c.companion.arch = "companion";
    c.companion.base_depth = 2;
    c.companion.width_divisor = 16;
    c.companion.head_channels = 4;
    c.companion.total_iterations = 9;
    c.companion.batch_size = 8;
    c.companion.checkpoint_fractions = {1.0 / 3.0, 2.0 / 3.0, 1.0};
    c.companion.seed = 22;

    c.bootstrap_resamples = 120;
    c.eval_seed = 31;
    return c;
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config round trip, digest, and validation") {
    const auto work = fresh_dir("snapstack_cfg");
    ExperimentConfig c = tiny_config(work);
    c.validate();

    const auto path = (work / "config.json").string();
    c.save(path);
    const ExperimentConfig back = ExperimentConfig::from_file(path);
    CHECK(back.digest() == c.digest());
    CHECK(back.input_size == 16);
    CHECK(back.covnet30.checkpoint_fractions == std::vector<double>{0.5, 1.0});

    // output_dir does not participate in the digest.
    ExperimentConfig moved = c;
    moved.output_dir = (work / "elsewhere").string();
    CHECK(moved.digest() == c.digest());

    ExperimentConfig bad = c;
    bad.covnet30.checkpoint_fractions = {1.0};
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.companion.checkpoint_fractions = {0.5, 1.0};
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.class_weights = {1.0, 2.0};
    CHECK_THROWS(bad.validate());

    CHECK(network_for_sub(1) == "covnet30");
    CHECK(network_for_sub(3) == "companion");
    CHECK_THROWS(network_for_sub(6));
}

TEST_CASE("full pipeline over one fold, then determinism across a rerun") {
    const auto work = fresh_dir("snapstack_pipe");
    generate_synthetic_corpus((work / "synth").string(), 20, 16, 3);
    ExperimentConfig c = tiny_config(work);

    // split: writes plan + prints counts
    std::ostringstream table;
    const FoldPlan plan = cmd_split(c, table);
    CHECK(fs::exists(fold_plan_path(c)));
    CHECK(table.str().find("Fold1") != std::string::npos);
    CHECK(table.str().find("COVID-19") != std::string::npos);

    // plan reload requires a matching config digest
    const FoldPlan reread = read_fold_plan(fold_plan_path(c), c);
    CHECK(reread.folds == plan.folds);
    ExperimentConfig other = c;
    other.fold_seed = 999;
    CHECK_THROWS(read_fold_plan(fold_plan_path(c), other));

    // train both networks on fold 1
    const auto cov_paths = cmd_train(c, 1, "covnet30");
    REQUIRE(cov_paths.size() == 2);
    CHECK(cov_paths[0].find("covnet30-sub1.ckpt") != std::string::npos);
    CHECK(cov_paths[1].find("covnet30-sub2.ckpt") != std::string::npos);

    // stack before companion checkpoints exist: must name the missing one
    CHECK_THROWS_WITH_AS(cmd_stack(c, 1), doctest::Contains("sub3"), std::runtime_error);

    const auto comp_paths = cmd_train(c, 1, "companion");
    REQUIRE(comp_paths.size() == 3);
    CHECK(comp_paths[2].find("companion-sub5.ckpt") != std::string::npos);

    // checkpoints carry the scheduled iterations
    const NetworkSpec cov_spec = build_network_spec(c, "covnet30");
    CHECK(load_checkpoint(cov_paths[0], cov_spec).trained_iterations == 4);
    CHECK(load_checkpoint(cov_paths[1], cov_spec).trained_iterations == 8);
    const NetworkSpec comp_spec = build_network_spec(c, "companion");
    CHECK(load_checkpoint(comp_paths[0], comp_spec).trained_iterations == 3);
    CHECK(load_checkpoint(comp_paths[1], comp_spec).trained_iterations == 6);
    CHECK(load_checkpoint(comp_paths[2], comp_spec).trained_iterations == 9);

    // stack
    const StackedModel model = cmd_stack(c, 1);
    CHECK(model.feature_width == 15);
    CHECK(fs::exists(stacked_model_path(c, 1)));

    // feature audit table: 15 feature columns + label, blocks sum to 1
    {
        std::ifstream audit(stack_features_path(c, 1));
        std::string header;
        std::getline(audit, header);
        CHECK(header == "sub1_COVID-19,sub1_Normal,sub1_Pneumonia,sub2_COVID-19,sub2_Normal,"
                        "sub2_Pneumonia,sub3_COVID-19,sub3_Normal,sub3_Pneumonia,sub4_COVID-19,"
                        "sub4_Normal,sub4_Pneumonia,sub5_COVID-19,sub5_Normal,sub5_Pneumonia,"
                        "label");
        std::string line;
        std::size_t rows = 0;
        while (std::getline(audit, line)) {
            ++rows;
            std::istringstream ss(line);
            std::string cell;
            std::vector<double> vals;
            while (std::getline(ss, cell, ',') && vals.size() < 15)
                vals.push_back(std::stod(cell));
            REQUIRE(vals.size() == 15);
            for (int block = 0; block < 5; ++block) {
                const double sum = vals[block * 3] + vals[block * 3 + 1] + vals[block * 3 + 2];
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
        CHECK(rows > 0);
    }

    // evaluate stacked + one sub-model
    const EvalSummary stacked = cmd_evaluate(c, 1, "stacked");
    CHECK(stacked.n > 0);
    CHECK(fs::exists(eval_report_path(c, 1, "stacked")));
    const EvalSummary sub2 = cmd_evaluate(c, 1, "sub2");
    CHECK(sub2.n == stacked.n);
    const EvalSummary base = cmd_evaluate(c, 1, "covnet30");
    CHECK(base.overall_accuracy == sub2.overall_accuracy);  // same checkpoint
    CHECK_THROWS(cmd_evaluate(c, 1, "sub9"));
    CHECK_THROWS(cmd_evaluate(c, 7, "stacked"));

    // the report embeds the config digest, seeds, and consistent numbers
    {
        const json doc = json::parse(slurp(eval_report_path(c, 1, "stacked")));
        CHECK(doc.at("n").get<std::size_t>() == stacked.n);
        CHECK(doc.at("config_digest").get<std::string>().substr(0, 2) == "0x");
        CHECK(doc.at("seeds").contains("fold"));
        CHECK(doc.at("overall_accuracy").get<double>() ==
              doctest::Approx(stacked.overall_accuracy));
        CHECK(doc.at("error_rate").get<double>() ==
              doctest::Approx(1.0 - stacked.overall_accuracy));
        CHECK(doc.at("confusion").size() == 3);
    }
    for (int cls = 0; cls < 3; ++cls) {
        const auto roc = fs::path(fold_dir(c, 1)) / ("eval-stacked-roc-" + std::to_string(cls) +
                                                     ".tsv");
        CHECK(fs::exists(roc));
    }

    // rerun train: byte-identical checkpoint (restartable stages)
    const std::string before = slurp(cov_paths[0]);
    cmd_train(c, 1, "covnet30");
    CHECK(slurp(cov_paths[0]) == before);

    // rerun stack: byte-identical model file
    const std::string model_before = slurp(stacked_model_path(c, 1));
    cmd_stack(c, 1);
    CHECK(slurp(stacked_model_path(c, 1)) == model_before);
}

TEST_CASE("all-folds evaluation writes a mean row equal to the fold mean") {
    const auto work = fresh_dir("snapstack_allfolds");
    generate_synthetic_corpus((work / "synth").string(), 20, 16, 13);
    ExperimentConfig c = tiny_config(work);
    c.covnet30.total_iterations = 4;
    c.companion.total_iterations = 6;

    std::ostringstream sink;
    cmd_split(c, sink);
    for (std::size_t f = 1; f <= 5; ++f) {
        cmd_train(c, f, "covnet30");
        cmd_train(c, f, "companion");
        cmd_stack(c, f);
    }
    const auto summaries = cmd_evaluate_all_folds(c, "stacked");
    REQUIRE(summaries.size() == 6);
    const EvalSummary& mean = summaries.back();
    CHECK(mean.fold == 0);

    // Mean row equals the arithmetic mean of the per-fold report files.
    double acc = 0.0, err = 0.0, ci = 0.0, auc = 0.0;
    for (std::size_t f = 1; f <= 5; ++f) {
        const json doc = json::parse(slurp(eval_report_path(c, f, "stacked")));
        acc += doc.at("overall_accuracy").get<double>();
        err += doc.at("error_rate").get<double>();
        ci += doc.at("error_ci95").get<double>();
        auc += doc.at("macro_auc").get<double>();
    }
    CHECK(mean.overall_accuracy == doctest::Approx(acc / 5.0).epsilon(1e-9));
    CHECK(mean.error_rate == doctest::Approx(err / 5.0).epsilon(1e-9));
    CHECK(mean.error_ci == doctest::Approx(ci / 5.0).epsilon(1e-9));
    CHECK(mean.macro_auc == doctest::Approx(auc / 5.0).epsilon(1e-9));

    const json mean_doc = json::parse(slurp(mean_report_path(c, "stacked")));
    CHECK(mean_doc.at("mean").at("overall_accuracy").get<double>() ==
          doctest::Approx(mean.overall_accuracy));

    // Comparison grid shaped like the sub-model table.
    const std::string grid =
        cmd_compare(c, {1, 2, 3, 4, 5}, {"sub1", "sub2", "sub3", "sub4", "sub5"});
    CHECK(grid.find("sub1") != std::string::npos);
    CHECK(grid.find("stacked") != std::string::npos);
    CHECK(grid.find("Fold5") != std::string::npos);
    CHECK(fs::exists(fs::path(c.output_dir) / "comparison.txt"));
}
