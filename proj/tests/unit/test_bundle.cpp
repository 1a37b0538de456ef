// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "doctest.h"
#include "fpq/bundle.hpp"
#include "json.hpp"
#include "oracle.hpp"

using fpq::BundleError;
using fpq::BundleErrorCode;
using fpq::CalibrationBundle;
using fpq::SynthSpec;
using fpq::Tensor;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;

    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path = fs::temp_directory_path() /
               ("fpq-test-" + tag + "-" + std::to_string(rng()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

BundleErrorCode load_error_code(const fs::path& dir, std::string* layer = nullptr) {
    try {
        fpq::load_bundle(dir);
    } catch (const BundleError& e) {
        if (layer) *layer = e.layer();
        return e.code();
    }
    FAIL("expected load_bundle to throw");
    return BundleErrorCode::Io;
}

// Edits the saved manifest through a JSON round-trip.
template <typename Fn>
void patch_manifest(const fs::path& dir, Fn&& edit) {
    auto manifest = nlohmann::ordered_json::parse(slurp(dir / "manifest.json"));
    edit(manifest);
    spit(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace

TEST_CASE("synth bundles are deterministic and survive a save/load round-trip") {
    SynthSpec spec;
    spec.layers = 2;
    spec.tokens = 6;
    spec.channels = 4;
    spec.seed = 42;

    const CalibrationBundle a = fpq::synth_bundle(spec);
    const CalibrationBundle b = fpq::synth_bundle(spec);
    CHECK(a.layers.size() == 2);
    CHECK(a.tensors.size() == 6);
    REQUIRE(a.tensors.count("layer0.x") == 1);
    CHECK(a.tensors.at("layer0.x") == b.tensors.at("layer0.x"));
    CHECK(a.tensors.at("layer1.w") == b.tensors.at("layer1.w"));

    TempDir dir("roundtrip");
    fpq::save_bundle(a, dir.path);
    const CalibrationBundle loaded = fpq::load_bundle(dir.path);
    CHECK(loaded.version == fpq::kBundleVersion);
    CHECK(loaded.layers.size() == a.layers.size());
    for (const auto& [name, tensor] : a.tensors) CHECK(loaded.tensor(name) == tensor);

    // Canonical form: saving the loaded bundle reproduces the bytes.
    TempDir dir2("roundtrip2");
    fpq::save_bundle(loaded, dir2.path);
    CHECK(slurp(dir.path / "manifest.json") == slurp(dir2.path / "manifest.json"));
    CHECK(slurp(dir.path / "tensors.bin") == slurp(dir2.path / "tensors.bin"));
    CHECK(fpq::bundle_digest(dir.path) == fpq::bundle_digest(dir2.path));
}

TEST_CASE("bundle digest reacts to any byte change") {
    SynthSpec spec;
    spec.tokens = 4;
    spec.channels = 3;
    spec.seed = 9;
    TempDir dir("digest");
    fpq::save_bundle(fpq::synth_bundle(spec), dir.path);
    const std::uint64_t before = fpq::bundle_digest(dir.path);

    std::string blob = slurp(dir.path / "tensors.bin");
    blob[blob.size() / 2] = static_cast<char>(blob[blob.size() / 2] ^ 0x01);
    spit(dir.path / "tensors.bin", blob);
    CHECK(fpq::bundle_digest(dir.path) != before);
}

TEST_CASE("synth spec validation") {
    SynthSpec bad;
    bad.channels = 4;
    bad.outlier_channels = 4;
    CHECK_THROWS_AS(fpq::synth_bundle(bad), std::invalid_argument);

    SynthSpec zero;
    zero.layers = 0;
    CHECK_THROWS_AS(fpq::synth_bundle(zero), std::invalid_argument);
}

TEST_CASE("outlier channels dominate the channel maxima") {
    SynthSpec spec;
    spec.tokens = 32;
    spec.channels = 8;
    spec.outlier_channels = 1;
    spec.outlier_scale = 100.0;
    spec.seed = 7;

    const CalibrationBundle bundle = fpq::synth_bundle(spec);
    const auto report = fpq::channel_stats(bundle.tensor("layer0.x"));
    REQUIRE(report.channels.size() == 8);

    std::vector<double> maxima;
    for (const auto& ch : report.channels) maxima.push_back(ch.max_abs);
    const double outlier = maxima[0];
    std::sort(maxima.begin(), maxima.end());
    const double median = maxima[maxima.size() / 2];
    CHECK(outlier == maxima.back());
    CHECK(outlier / median > 25.0);
    CHECK(outlier / median < 400.0);
    CHECK(report.inter_channel_variance < report.channels[0].variance);
}

TEST_CASE("channel_stats hand cases") {
    const Tensor constant(4, 3, 2.5);
    const auto flat = fpq::channel_stats(constant);
    CHECK(flat.inter_channel_variance == 0.0);
    CHECK(flat.mean_intra_channel_variance == 0.0);
    CHECK(flat.channels[1].max_abs == 2.5);
    CHECK(flat.channels[1].mean_abs == 2.5);

    Tensor two(2, 2, {1.0, 10.0, 1.0, 10.0});
    const auto split = fpq::channel_stats(two);
    CHECK(split.inter_channel_variance == 20.25);
    CHECK(split.mean_intra_channel_variance == 0.0);
}

TEST_CASE("load reports a missing bundle as an io error") {
    std::string layer;
    CHECK(load_error_code("no-such-dir-anywhere", &layer) == BundleErrorCode::Io);
    try {
        fpq::load_bundle("no-such-dir-anywhere");
    } catch (const BundleError& e) {
        CHECK(std::string(e.what()).find("bundle not found") != std::string::npos);
    }
}

TEST_CASE("load rejects malformed manifests with distinct codes") {
    SynthSpec spec;
    spec.tokens = 4;
    spec.channels = 3;
    spec.seed = 5;

    SUBCASE("invalid json") {
        TempDir dir("badjson");
        fpq::save_bundle(fpq::synth_bundle(spec), dir.path);
        spit(dir.path / "manifest.json", "{not json");
        CHECK(load_error_code(dir.path) == BundleErrorCode::Parse);
    }

    SUBCASE("wrong version") {
        TempDir dir("badversion");
        fpq::save_bundle(fpq::synth_bundle(spec), dir.path);
        patch_manifest(dir.path, [](auto& m) { m["version"] = 99; });
        CHECK(load_error_code(dir.path) == BundleErrorCode::VersionMismatch);
    }

    SUBCASE("wrong format marker") {
        TempDir dir("badmarker");
        fpq::save_bundle(fpq::synth_bundle(spec), dir.path);
        patch_manifest(dir.path, [](auto& m) { m["format"] = "tarball"; });
        CHECK(load_error_code(dir.path) == BundleErrorCode::VersionMismatch);
    }

    SUBCASE("missing tensor names the layer") {
        TempDir dir("missingtensor");
        fpq::save_bundle(fpq::synth_bundle(spec), dir.path);
        patch_manifest(dir.path, [](auto& m) { m["tensors"].erase("layer0.w"); });
        std::string layer;
        CHECK(load_error_code(dir.path, &layer) == BundleErrorCode::MissingTensor);
        CHECK(layer == "layer0");
    }

    SUBCASE("misaligned offset") {
        TempDir dir("misaligned");
        fpq::save_bundle(fpq::synth_bundle(spec), dir.path);
        patch_manifest(dir.path, [](auto& m) {
            m["tensors"]["layer0.x"]["offset"] =
                m["tensors"]["layer0.x"]["offset"].template get<int>() + 4;
        });
        CHECK(load_error_code(dir.path) == BundleErrorCode::Parse);
    }

    SUBCASE("corrupted raw output") {
        TempDir dir("badoref");
        auto bundle = fpq::synth_bundle(spec);
        auto& o = bundle.tensors.at("layer0.o");
        o.at(0, 0) += 10.0;
        fpq::save_bundle(bundle, dir.path);
        std::string layer;
        CHECK(load_error_code(dir.path, &layer) == BundleErrorCode::RawOutputMismatch);
        CHECK(layer == "layer0");
    }

    SUBCASE("shape that cannot compose") {
        TempDir dir("badshape");
        CalibrationBundle bundle;
        bundle.layers.push_back({"lone", fpq::LayerKind::WeightMatmul, "x", "w", "o", {}});
        bundle.tensors.emplace("x", Tensor(2, 3, 1.0));
        bundle.tensors.emplace("w", Tensor(4, 2, 1.0));
        bundle.tensors.emplace("o", Tensor(2, 2, 3.0));
        fpq::save_bundle(bundle, dir.path);
        std::string layer;
        CHECK(load_error_code(dir.path, &layer) == BundleErrorCode::ShapeMismatch);
        CHECK(layer == "lone");
    }

    SUBCASE("duplicate layer names") {
        TempDir dir("duplayer");
        auto bundle = fpq::synth_bundle(spec);
        fpq::save_bundle(bundle, dir.path);
        patch_manifest(dir.path, [](auto& m) { m["layers"].push_back(m["layers"][0]); });
        CHECK(load_error_code(dir.path) == BundleErrorCode::Parse);
    }
}

TEST_CASE("gradients ride along when present") {
    CalibrationBundle bundle;
    Tensor x(2, 3, {1.0, 0.5, -1.0, 2.0, 0.25, 0.75});
    Tensor w(3, 2, {0.5, 1.0, -0.5, 0.25, 1.5, -1.0});
    for (double& v : x.values()) v = static_cast<double>(static_cast<float>(v));
    for (double& v : w.values()) v = static_cast<double>(static_cast<float>(v));
    Tensor o = fpq::matmul(x, w);
    for (double& v : o.values()) v = static_cast<double>(static_cast<float>(v));
    bundle.layers.push_back(
        {"fc", fpq::LayerKind::WeightMatmul, "x", "w", "o", std::string("g")});
    bundle.tensors.emplace("x", x);
    bundle.tensors.emplace("w", w);
    bundle.tensors.emplace("o", o);
    bundle.tensors.emplace("g", Tensor(2, 2, 1.0));

    TempDir dir("grads");
    fpq::save_bundle(bundle, dir.path);
    const CalibrationBundle loaded = fpq::load_bundle(dir.path);
    REQUIRE(loaded.layers.size() == 1);
    REQUIRE(loaded.layers[0].grad.has_value());
    CHECK(*loaded.layers[0].grad == "g");
    CHECK(loaded.tensor("g") == Tensor(2, 2, 1.0));

    // A gradient of the wrong shape is a shape error.
    TempDir dir2("badgrad");
    bundle.tensors.erase("g");
    bundle.tensors.emplace("g", Tensor(3, 3, 1.0));
    fpq::save_bundle(bundle, dir2.path);
    std::string layer;
    CHECK(load_error_code(dir2.path, &layer) == BundleErrorCode::ShapeMismatch);
    CHECK(layer == "fc");
}

TEST_CASE("tensor lookup failure is a missing-tensor error") {
    CalibrationBundle empty;
    CHECK_THROWS_AS(empty.tensor("nope"), BundleError);
    try {
        empty.tensor("nope");
    } catch (const BundleError& e) {
        CHECK(e.code() == BundleErrorCode::MissingTensor);
    }
}
