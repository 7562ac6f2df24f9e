#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <set>

#include "microdarts/dataio.hpp"
#include "microdarts/errors.hpp"

using namespace microdarts;

TEST_SUITE_BEGIN("dataio");

TEST_CASE("gen_synthetic: deterministic and balanced") {
    auto a = gen_synthetic(4, 100, 16, 99);
    auto b = gen_synthetic(4, 100, 16, 99);
    CHECK(a.images.values() == b.images.values());
    CHECK(a.labels == b.labels);
    CHECK(a.count() == 400);
    std::vector<int> counts(4, 0);
    for (int lbl : a.labels) counts[static_cast<size_t>(lbl)]++;
    for (int c : counts) CHECK(c == 100);
    for (float v : a.images.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("gen_synthetic: noiseless jitter-free images are identical within class") {
    auto d = gen_synthetic(3, 5, 8, 7, 0.0, false);
    const size_t plane = 8 * 8;
    for (int c = 0; c < 3; ++c) {
        const float* first = d.images.data() + static_cast<size_t>(c) * 5 * plane;
        for (int i = 1; i < 5; ++i) {
            const float* img = first + static_cast<size_t>(i) * plane;
            for (size_t p = 0; p < plane; ++p) CHECK(img[p] == first[p]);
        }
    }
    // class means distinct
    std::vector<double> means(3, 0.0);
    for (int c = 0; c < 3; ++c) {
        const float* img = d.images.data() + static_cast<size_t>(c) * 5 * plane;
        for (size_t p = 0; p < plane; ++p) means[static_cast<size_t>(c)] += img[p];
    }
    CHECK(std::abs(means[0] - means[1]) + std::abs(means[1] - means[2]) > 1e-6);
}

TEST_CASE("gen_synthetic: rejects degenerate arguments") {
    CHECK_THROWS_AS(gen_synthetic(1, 10, 16, 0), InputError);
    CHECK_THROWS_AS(gen_synthetic(4, 10, 4, 0), InputError);
}

TEST_CASE("IDRT: write/load round-trip is the identity") {
    auto d = gen_synthetic(3, 7, 8, 123);
    const std::string path = "/tmp/microdarts_test_ds.idrt";
    write_binary(path, d);
    auto back = load_binary(path);
    CHECK(back.images.shape() == d.images.shape());
    CHECK(back.images.values() == d.images.values());
    CHECK(back.labels == d.labels);
    CHECK(back.classes == d.classes);
    std::remove(path.c_str());
}

TEST_CASE("IDRT: truncated payload names expected vs actual byte count") {
    auto d = gen_synthetic(2, 3, 8, 5);
    const std::string path = "/tmp/microdarts_test_trunc.idrt";
    write_binary(path, d);
    // cut the file short
    {
        std::string content;
        {
            FILE* f = fopen(path.c_str(), "rb");
            REQUIRE(f);
            char buf[1 << 16];
            size_t n = fread(buf, 1, sizeof buf, f);
            fclose(f);
            content.assign(buf, n / 2);
        }
        FILE* f = fopen(path.c_str(), "wb");
        REQUIRE(f);
        fwrite(content.data(), 1, content.size(), f);
        fclose(f);
    }
    try {
        load_binary(path);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("expected") != std::string::npos);
        CHECK(msg.find("have") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("IDRT: bad magic is rejected with the byte offset") {
    const std::string path = "/tmp/microdarts_test_magic.idrt";
    {
        FILE* f = fopen(path.c_str(), "wb");
        REQUIRE(f);
        fwrite("NOPE0000", 1, 8, f);
        fclose(f);
    }
    try {
        load_binary(path);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("byte 0") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("IDRT: zero-count file is a valid empty dataset") {
    Dataset empty;
    const std::string path = "/tmp/microdarts_test_empty.idrt";
    write_binary(path, empty);
    auto back = load_binary(path);
    CHECK(back.count() == 0);
    CHECK(back.labels.empty());
    std::remove(path.c_str());
}

TEST_CASE("labels csv sidecar: one row per sample") {
    auto d = gen_synthetic(2, 2, 8, 1);
    auto csv = labels_to_csv(d);
    CHECK(csv == "index,label\n0,0\n1,0\n2,1\n3,1\n");
}

TEST_CASE("make_split: fraction arithmetic and determinism") {
    auto d = gen_synthetic(4, 25, 8, 11);  // N = 100
    SplitFractions fr;                     // 0.4 / 0.4 / 0.2
    auto s1 = make_split(d, fr, 5);
    auto s2 = make_split(d, fr, 5);
    CHECK(s1.train_w.size() == 40);
    CHECK(s1.train_alpha.size() == 40);
    CHECK(s1.test.size() == 20);
    CHECK(s1.train_w == s2.train_w);
    CHECK(s1.discretize == s2.discretize);
    CHECK(make_split(d, fr, 6).train_w != s1.train_w);
}

TEST_CASE("make_split: parts are disjoint, discretize drawn from the train pools") {
    auto d = gen_synthetic(4, 30, 8, 13);
    auto s = make_split(d, {}, 21);
    std::set<int> w(s.train_w.begin(), s.train_w.end());
    std::set<int> a(s.train_alpha.begin(), s.train_alpha.end());
    std::set<int> t(s.test.begin(), s.test.end());
    for (int i : a) CHECK(w.count(i) == 0);
    for (int i : t) {
        CHECK(w.count(i) == 0);
        CHECK(a.count(i) == 0);
    }
    for (int i : s.discretize) CHECK((w.count(i) || a.count(i)));
}

TEST_CASE("make_split: insufficient samples raise input errors") {
    auto d = gen_synthetic(2, 1, 8, 3);  // N = 2
    CHECK_THROWS_AS(make_split(d, {}, 1), InputError);
}

TEST_CASE("epoch_batches: pure function of (seed, epoch)") {
    std::vector<int> part(32);
    for (int i = 0; i < 32; ++i) part[static_cast<size_t>(i)] = i;
    auto b1 = epoch_batches(part, SplitTag::train_w, 3, 8, 77);
    auto b2 = epoch_batches(part, SplitTag::train_w, 3, 8, 77);
    REQUIRE(b1.size() == 4);
    for (size_t i = 0; i < b1.size(); ++i) {
        CHECK(b1[i].indices == b2[i].indices);
        CHECK(b1[i].tag == SplitTag::train_w);
    }
    auto b3 = epoch_batches(part, SplitTag::train_w, 4, 8, 77);
    CHECK(b3[0].indices != b1[0].indices);
}

TEST_CASE("epoch_batches: short parts give one batch, tails are dropped") {
    std::vector<int> small{4, 9, 2};
    auto one = epoch_batches(small, SplitTag::test, 0, 8, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].indices.size() == 3);

    std::vector<int> uneven(19);
    for (int i = 0; i < 19; ++i) uneven[static_cast<size_t>(i)] = i;
    auto dropped = epoch_batches(uneven, SplitTag::test, 0, 8, 1);
    CHECK(dropped.size() == 2);
}

TEST_CASE("gather: image and label batches line up") {
    auto d = gen_synthetic(3, 4, 8, 17);
    std::vector<int> idx{5, 0, 11};
    auto imgs = gather_images(d, idx);
    auto lbls = gather_labels(d, idx);
    CHECK(imgs.shape() == std::vector<int>{3, 1, 8, 8});
    CHECK(lbls.size() == 3);
    CHECK(lbls[0] == d.labels[5]);
    const size_t plane = 64;
    for (size_t p = 0; p < plane; ++p)
        CHECK(imgs.values()[plane + p] == d.images.values()[p]);  // sample 0 copied
}

TEST_SUITE_END();
