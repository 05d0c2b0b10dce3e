#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "facor/checkpoint.hpp"
#include "facor/errors.hpp"
#include "facor/rng.hpp"
#include "facor/tensor.hpp"

using namespace facor;
namespace fs = std::filesystem;

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.shape_string() == "2x3");
    t.at(1, 2) = -4.0;
    CHECK(t[5] == -4.0);
    CHECK(t.all_finite());
    t[0] = std::nan("");
    CHECK_FALSE(t.all_finite());

    CHECK(parse_shape("4x4x8") == std::vector<std::size_t>{4, 4, 8});
    CHECK(parse_shape("1") == std::vector<std::size_t>{1});
    CHECK_THROWS_AS(parse_shape("4x"), ParseError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0}), ConfigError);
}

TEST_CASE("rng determinism and ranges") {
    Rng a(9), b(9);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng r(11);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double c = r.clipped_normal(-0.05, 0.05);
        CHECK(c >= -0.05);
        CHECK(c <= 0.05);
        CHECK(r.index(7) < 7);
    }

    // Child streams depend on the seed, not on consumed state.
    Rng parent1(21), parent2(21);
    parent1.next_u64();
    Rng c1 = parent1.child(5);
    Rng c2 = parent2.child(5);
    CHECK(c1.next_u64() == c2.next_u64());
    Rng c3 = parent2.child(6);
    CHECK(c1.next_u64() != c3.next_u64());
}

TEST_CASE("tensor bundle round trips at f64 and quantizes at f32") {
    const fs::path dir = fs::temp_directory_path() / "facor_bundle_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    TensorBundle bundle;
    Rng rng(5);
    Tensor weights({3, 4});
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = rng.normal();
    bundle.put("layer.weight", weights);
    bundle.put("meta.step", Tensor({1}, 42.0));

    save_bundle(dir / "state.manifest", bundle, Dtype::F64);
    const TensorBundle loaded = load_bundle(dir / "state.manifest");
    CHECK(loaded.at("layer.weight").values() == weights.values());
    CHECK(loaded.at("meta.step")[0] == 42.0);
    CHECK(loaded.find("missing") == nullptr);
    CHECK_THROWS_AS(loaded.at("missing"), LookupError);

    save_bundle(dir / "state32.manifest", bundle, Dtype::F32);
    const TensorBundle lossy = load_bundle(dir / "state32.manifest");
    for (std::size_t i = 0; i < weights.size(); ++i) {
        CHECK(lossy.at("layer.weight")[i] == (double)(float)weights[i]);
    }
}

TEST_CASE("bundle manifests reject malformed content") {
    const fs::path dir = fs::temp_directory_path() / "facor_bundle_bad";
    fs::remove_all(dir);
    fs::create_directories(dir);

    auto write = [&](const std::string& name, const std::string& text) {
        std::ofstream out(dir / name);
        out << text;
        return dir / name;
    };

    CHECK_THROWS_AS(load_bundle(write("h.manifest", "wrong header\n")), ParseError);
    CHECK_THROWS_AS(load_bundle(write("p.manifest", "facor-tensors 1\n")), ParseError);

    // Offset past the payload end is a data error naming the tensor.
    write("trunc.manifest",
          "facor-tensors 1\npayload trunc.bin\ntensor w 4 f32 0\n");
    std::ofstream payload(dir / "trunc.bin", std::ios::binary);
    const float tiny[2] = {1.0f, 2.0f};
    payload.write(reinterpret_cast<const char*>(tiny), sizeof(tiny));
    payload.close();
    try {
        load_bundle(dir / "trunc.manifest");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("w") != std::string::npos);
    }
}
