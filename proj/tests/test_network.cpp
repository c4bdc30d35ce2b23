#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "snapstack/network.hpp"
#include "testutil.hpp"

using namespace snapstack;
using testutil::bitwise_equal;

namespace {

struct GoldenRow {
    const char* kernel;
    std::vector<std::size_t> output;
    std::size_t params;
};

// The 30-row layer plan of the full network, column for column.
const std::vector<GoldenRow> kCovnet30Rows = {
    {"7x7", {218, 218, 32}, 4736},  {"2x2", {109, 109, 32}, 0},  {"-", {109, 109, 32}, 128},
    {"5x5", {105, 105, 64}, 51264}, {"2x2", {52, 52, 64}, 0},    {"-", {52, 52, 64}, 256},
    {"-", {52, 52, 64}, 0},         {"3x3", {50, 50, 128}, 73856}, {"2x2", {25, 25, 128}, 0},
    {"-", {25, 25, 128}, 512},      {"-", {25, 25, 128}, 0},     {"3x3", {23, 23, 128}, 147584},
    {"2x2", {11, 11, 128}, 0},      {"-", {11, 11, 128}, 512},   {"-", {11, 11, 128}, 0},
    {"3x3", {9, 9, 256}, 295168},   {"-", {9, 9, 256}, 1024},    {"-", {9, 9, 256}, 0},
    {"3x3", {7, 7, 256}, 590080},   {"-", {7, 7, 256}, 1024},    {"-", {7, 7, 256}, 0},
    {"3x3", {5, 5, 512}, 1180160},  {"-", {5, 5, 512}, 2048},    {"-", {5, 5, 512}, 0},
    {"3x3", {3, 3, 512}, 2359808},  {"-", {3, 3, 512}, 2048},    {"-", {3, 3, 512}, 0},
    {"-", {512}, 0},                {"-", {1000}, 513000},       {"-", {3}, 3003},
};

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("covnet30 layer table reproduces every row") {
    const NetworkSpec spec = build_covnet30();
    const auto rows = layer_table(spec);
    REQUIRE(rows.size() == 30);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        INFO("row ", i, " (", rows[i].name, ")");
        CHECK(rows[i].kernel == kCovnet30Rows[i].kernel);
        CHECK(rows[i].output == kCovnet30Rows[i].output);
        CHECK(rows[i].parameter_count == kCovnet30Rows[i].params);
    }
    CHECK(rows[21].name == "conv2D_7");  // 3x3 -> 5x5x512, 1,180,160 params
    CHECK(spec.total_parameter_count() == 5226211);

    std::size_t convs = 0, pools = 0, bns = 0, drops = 0;
    for (const auto& l : spec.layers) {
        convs += l.kind == LayerKind::Conv2d;
        pools += l.kind == LayerKind::MaxPool2d;
        bns += l.kind == LayerKind::BatchNorm;
        drops += l.kind == LayerKind::Dropout;
    }
    CHECK(convs == 8);
    CHECK(pools == 4);
    CHECK(bns == 8);
    CHECK(drops == 7);
}

TEST_CASE("covnet30 forward on a zero image is a probability row") {
    Network net = Network::create(build_covnet30(), 1);
    const Tensor probs = net.predict_probs(Tensor::zeros({1, 224, 224, 3}));
    double sum = 0.0;
    for (double p : probs.values()) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("companion head structure is fixed across trunk configurations") {
    for (const std::size_t depth : {1u, 4u, 6u}) {
        CompanionConfig cfg;
        cfg.input_size = 96;
        cfg.base_depth = depth;
        cfg.width_divisor = 16;
        cfg.head_channels = 8;
        const NetworkSpec spec = build_companion(cfg);
        REQUIRE(spec.layers.size() >= 7);
        const auto head = spec.layers.end() - 7;
        CHECK(head[0].kind == LayerKind::Conv2d);
        CHECK(head[1].kind == LayerKind::Relu);
        CHECK(head[2].kind == LayerKind::Conv2d);
        CHECK(head[3].kind == LayerKind::Relu);
        CHECK(head[4].kind == LayerKind::GlobalAvgPool);
        CHECK(head[5].kind == LayerKind::Dense);
        CHECK(head[6].kind == LayerKind::Softmax);
    }
}

TEST_CASE("companion desk configuration builds and forward-propagates") {
    CompanionConfig cfg;
    cfg.input_size = 64;
    cfg.base_depth = 4;
    cfg.width_divisor = 8;
    cfg.head_channels = 16;
    const NetworkSpec spec = build_companion(cfg);
    Network net = Network::create(spec, 7);
    const Tensor probs = net.predict_probs(Tensor::zeros({2, 64, 64, 3}));
    CHECK(probs.shape() == std::vector<std::size_t>{2, 3});

    CHECK(build_companion(cfg).digest() == spec.digest());
    CompanionConfig other = cfg;
    other.base_depth = 5;
    CHECK(build_companion(other).digest() != spec.digest());
}

TEST_CASE("companion full plan matches the published conv layout") {
    CompanionConfig cfg;
    cfg.input_size = 416;  // valid convolutions need extra spatial headroom
    cfg.base_depth = 16;
    cfg.width_divisor = 1;
    const NetworkSpec spec = build_companion(cfg);
    std::vector<std::size_t> widths;
    std::size_t pools = 0;
    const std::size_t trunk_end = spec.layers.size() - 7;
    for (std::size_t i = 0; i < trunk_end; ++i) {
        if (spec.layers[i].kind == LayerKind::Conv2d)
            widths.push_back(spec.layers[i].out_channels);
        pools += spec.layers[i].kind == LayerKind::MaxPool2d;
    }
    CHECK(widths == std::vector<std::size_t>{64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512,
                                             512, 512, 512, 512, 512});
    CHECK(pools == 5);

    // The same plan underflows at 224 because the convolutions are unpadded.
    cfg.input_size = 224;
    CHECK_THROWS(build_companion(cfg));
}

TEST_CASE("companion freeze_trunk marks only trunk layers non-trainable") {
    CompanionConfig cfg;
    cfg.input_size = 64;
    cfg.base_depth = 2;
    cfg.width_divisor = 16;
    cfg.head_channels = 8;
    cfg.freeze_trunk = true;
    const NetworkSpec spec = build_companion(cfg);
    CHECK(spec.frozen_prefix > 0);
    Network net = Network::create(spec, 3);
    std::size_t frozen = 0, live = 0;
    for (const auto& p : net.parameters()) {
        if (!p.trainable)
            ++frozen;
        else
            ++live;
    }
    CHECK(frozen > 0);
    CHECK(live > 0);
}

TEST_CASE("checkpoint round trip is byte-exact and digest-guarded") {
    const NetworkSpec spec = build_covnet30_mini(48, 3);
    Network net = Network::create(spec, 99);
    net.state().trained_iterations = 123;

    const std::string p1 = temp_path("ckpt_roundtrip_1.bin");
    const std::string p2 = temp_path("ckpt_roundtrip_2.bin");
    save_checkpoint(spec, net.state(), p1);
    NetworkState loaded = load_checkpoint(p1, spec);
    CHECK(loaded.trained_iterations == 123);
    save_checkpoint(spec, loaded, p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string bytes1((std::istreambuf_iterator<char>(f1)),
                             std::istreambuf_iterator<char>());
    const std::string bytes2((std::istreambuf_iterator<char>(f2)),
                             std::istreambuf_iterator<char>());
    CHECK(bytes1 == bytes2);
    CHECK(!bytes1.empty());

    // Loaded model predicts exactly what the saved one did.
    Rng rng(5);
    const Tensor image = Tensor::uniform({2, 48, 48, 3}, 0, 1, rng);
    Network reloaded(spec, std::move(loaded));
    CHECK(bitwise_equal(net.predict_probs(image), reloaded.predict_probs(image)));

    // Wrong spec: digest mismatch.
    const NetworkSpec other = build_covnet30_mini(48, 3, /*dropout_p=*/0.5);
    CHECK_THROWS_WITH_AS(load_checkpoint(p1, other),
                         doctest::Contains("digest mismatch"), std::runtime_error);

    // Truncated file.
    const std::string p3 = temp_path("ckpt_truncated.bin");
    {
        std::ofstream os(p3, std::ios::binary | std::ios::trunc);
        os << bytes1.substr(0, bytes1.size() / 2);
    }
    CHECK_THROWS(load_checkpoint(p3, spec));

    std::remove(p1.c_str());
    std::remove(p2.c_str());
    std::remove(p3.c_str());
}

TEST_CASE("spec digests are stable and sensitive") {
    CHECK(build_covnet30().digest() == build_covnet30().digest());
    CHECK(build_covnet30().digest() != build_covnet30_mini().digest());
    CHECK(build_covnet30(0.15).digest() != build_covnet30(0.2).digest());
}
