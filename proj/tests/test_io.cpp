#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "degdit/annotations.hpp"
#include "degdit/deg_encoder.hpp"
#include "degdit/params.hpp"
#include "degdit/rng.hpp"

using namespace degdit;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("tensor container round-trips bit-exactly", "[io]") {
    TensorFile tf;
    tf.seed = 0xDEADBEEFCAFE1234ULL;
    Rng rng(7);
    tf.tensors.emplace_back("alpha", rng.gaussian_matrix(5, 3));
    tf.tensors.emplace_back("beta", Mat::Zero(1, 4));
    Mat tricky(2, 2);
    tricky << -0.0, 1e-308, -1e300, 3.141592653589793;
    tf.tensors.emplace_back("tricky", tricky);
    tf.extra = {{"note", "round trip"}};

    std::string path = tmp_path("tensors_roundtrip.bin");
    write_tensor_file(path, tf);
    TensorFile back = read_tensor_file(path);

    REQUIRE(back.tensors.size() == 3);
    CHECK(back.seed == tf.seed);
    CHECK(back.extra.at("note") == "round trip");
    for (size_t i = 0; i < tf.tensors.size(); ++i) {
        CHECK(back.tensors[i].first == tf.tensors[i].first);
        const Mat& a = tf.tensors[i].second;
        const Mat& b = back.tensors[i].second;
        REQUIRE(a.rows() == b.rows());
        REQUIRE(a.cols() == b.cols());
        // bitwise, not just numeric (covers -0.0)
        CHECK(std::memcmp(a.data(), b.data(),
                          sizeof(double) * a.size()) == 0);
    }

    // byte-identical re-serialization
    std::string path2 = tmp_path("tensors_roundtrip2.bin");
    write_tensor_file(path2, back);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
}

TEST_CASE("checkpoints restore parameters exactly", "[io]") {
    EncoderConfig cfg;
    cfg.d_model = 8;
    cfg.L = 1;
    cfg.n_heads = 2;
    cfg.N_max = 4;
    cfg.F = 6;
    cfg.seed = 77;

    ParamStore store(cfg.seed);
    DegEncoder enc(cfg, store);
    std::string path = tmp_path("encoder.ckpt");
    save_checkpoint(store, path);

    ParamStore store2(0);
    DegEncoder enc2(cfg, store2);
    // perturb, then restore
    for (int p = 0; p < store2.count(); ++p) store2.value(p).array() += 1.0;
    load_checkpoint(store2, path);
    CHECK(store2.seed() == cfg.seed);
    for (int p = 0; p < store.count(); ++p) {
        REQUIRE(store2.entry(p).name == store.entry(p).name);
        REQUIRE(store2.value(p) == store.value(p));
    }
}

TEST_CASE("loading a checkpoint into a mismatched layout fails", "[io]") {
    EncoderConfig small;
    small.d_model = 8;
    small.L = 1;
    small.n_heads = 2;
    small.seed = 1;
    ParamStore s1(1);
    DegEncoder e1(small, s1);
    std::string path = tmp_path("small.ckpt");
    save_checkpoint(s1, path);

    EncoderConfig wide = small;
    wide.d_model = 16;
    ParamStore s2(1);
    DegEncoder e2(wide, s2);
    CHECK_THROWS_AS(load_checkpoint(s2, path), Error);
}

TEST_CASE("reading garbage tensor files fails cleanly", "[io]") {
    std::string path = tmp_path("garbage.bin");
    std::ofstream(path) << "this is not a tensor file";
    CHECK_THROWS_AS(read_tensor_file(path), Error);
    CHECK_THROWS_AS(read_tensor_file(tmp_path("missing_file.bin")), Error);
}

TEST_CASE("annotation JSONL round-trips and defaults intensity", "[io]") {
    std::string path = tmp_path("annotations.jsonl");
    {
        std::ofstream f(path);
        f << R"({"id":"a","duration":10.0,"caption":"dog then cat",)"
          << R"("events":[{"label":"dog","onset":1.0,"offset":3.0},)"
          << R"({"label":"cat","onset":4.0,"offset":6.0,"intensity":0.5}]})"
          << "\n";
    }
    auto recs = read_annotations_file(path);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].id == "a");
    CHECK(recs[0].caption == "dog then cat");
    REQUIRE(recs[0].events.size() == 2);
    CHECK(recs[0].events[0].intensity == 1.0);  // default when absent
    CHECK(recs[0].events[1].intensity == 0.5);

    std::string path2 = tmp_path("annotations2.jsonl");
    write_annotations_file(path2, recs);
    auto again = read_annotations_file(path2);
    REQUIRE(again.size() == 1);
    CHECK(again[0].events[1].offset == 6.0);

    auto vr = record_to_timeline(recs[0]);
    REQUIRE(vr.ok());
    CHECK(vr.timeline->size() == 2);
}

TEST_CASE("malformed annotation lines raise parse errors with line numbers",
          "[io]") {
    std::string path = tmp_path("bad.jsonl");
    std::ofstream(path) << R"({"id":"a","duration":10.0,"events":[]})"
                        << "\n"
                        << "{not json}\n";
    try {
        read_annotations_file(path);
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ParseError);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}
