// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "effortvae/error.hpp"
#include "effortvae/motion_data.hpp"
#include "helpers.hpp"

using namespace effortvae;
using effortvae::testing::empty_clip;
using effortvae::testing::random_clip;
using effortvae::testing::scratch_dir;

namespace {

std::array<double, 2> xy_barycenter(const Pose& p) {
    std::array<double, 2> b{0.0, 0.0};
    for (const auto& j : p.joints) {
        b[0] += j[0];
        b[1] += j[1];
    }
    b[0] /= static_cast<double>(p.joints.size());
    b[1] /= static_cast<double>(p.joints.size());
    return b;
}

}  // namespace

TEST_CASE("load_clips: CSV of 100 rows x 53 joints") {
    const auto dir = scratch_dir("csv100");
    RngStream rng(1);
    const MotionClip c = random_clip("a", 100, 53, rng, -1.0, 1.0);
    save_clip_csv(dir / "a.csv", c);
    const auto clips = load_clips(dir / "a.csv", ClipFormat::Csv);
    REQUIRE(clips.size() == 1);
    CHECK(clips[0].frame_count() == 100);
    CHECK(clips[0].joint_count() == 53);
    CHECK(clips[0].frames[17].joints[40][2] == doctest::Approx(c.frames[17].joints[40][2]).epsilon(1e-12));
}

TEST_CASE("load_clips: empty file is a parse error") {
    const auto dir = scratch_dir("empty");
    std::ofstream(dir / "e.csv").close();
    CHECK_THROWS_AS(load_clips(dir / "e.csv", ClipFormat::Csv), ParseError);
    std::ofstream(dir / "e.json").close();
    CHECK_THROWS_AS(load_clips(dir / "e.json", ClipFormat::Json), ParseError);
}

TEST_CASE("load_clips: malformed CSV reports the row") {
    const auto dir = scratch_dir("badrow");
    std::ofstream(dir / "b.csv") << "j0x,j0y,j0z\n0,0,0\n0,zz,0\n";
    try {
        load_clips(dir / "b.csv", ClipFormat::Csv);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.location() == 2);
    }
}

TEST_CASE("load_clips: inconsistent joint count is a schema error") {
    const auto dir = scratch_dir("schema");
    std::ofstream(dir / "s.json")
        << R"({"clips":[{"id":"s","fps":35,"frames":[[[0,0,0],[1,1,1]],[[0,0,0]]]}]})";
    CHECK_THROWS_AS(load_clips(dir / "s.json", ClipFormat::Json), SchemaError);
}

TEST_CASE("load_clips: two JSON clips of 40 and 60 frames") {
    const auto dir = scratch_dir("json2");
    RngStream rng(2);
    std::vector<MotionClip> clips{random_clip("x", 40, 5, rng), random_clip("y", 60, 5, rng)};
    clips[0].skeleton = {{0, 1}, {1, 2}};
    save_clips_json(dir / "c.json", clips);
    const auto back = load_clips(dir / "c.json", ClipFormat::Json);
    REQUIRE(back.size() == 2);
    CHECK(back[0].frame_count() + back[1].frame_count() == 100);
    CHECK(back[0].skeleton == clips[0].skeleton);
    CHECK(back[1].frames[59].joints[4] == clips[1].frames[59].joints[4]);
}

TEST_CASE("load_clips: binary round trip and bad magic") {
    const auto dir = scratch_dir("bin");
    RngStream rng(3);
    const MotionClip c = random_clip("b", 25, 7, rng);
    save_clip_binary(dir / "b.bin", c);
    const auto back = load_clips(dir / "b.bin", ClipFormat::RawBinary);
    REQUIRE(back.size() == 1);
    // float32 on disk
    for (int a = 0; a < 3; ++a)
        CHECK(back[0].frames[24].joints[6][a] == static_cast<double>(static_cast<float>(c.frames[24].joints[6][a])));
    std::ofstream(dir / "x.bin", std::ios::binary) << "garbage!garbage!garbage!";
    CHECK_THROWS_AS(load_clips(dir / "x.bin", ClipFormat::RawBinary), ParseError);
}

TEST_CASE("normalize: [-2, 2] per axis maps to [0, 1] with scale 1/4") {
    MotionClip c = empty_clip("n", 2, 2);
    c.frames[0].joints = {{-2.0, -2.0, -2.0}, {2.0, 2.0, 2.0}};
    c.frames[1].joints = {{2.0, -2.0, 2.0}, {-2.0, 2.0, -2.0}};
    const auto [out, spec] = normalize(c, BarycenterMode::None);
    CHECK(spec.scale == doctest::Approx(0.25));
    for (const auto& p : out.frames)
        for (const auto& j : p.joints)
            for (double v : j) CHECK((std::abs(v) < 1e-12 || std::abs(v - 1.0) < 1e-12));
}

TEST_CASE("normalize: unit-box clip is the identity under mode none") {
    MotionClip c = empty_clip("u", 2, 2);
    c.frames[0].joints = {{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
    c.frames[1].joints = {{0.5, 0.25, 0.75}, {0.1, 0.9, 0.3}};
    const auto [out, spec] = normalize(c, BarycenterMode::None);
    CHECK(spec.scale == doctest::Approx(1.0));
    for (double o : spec.offset) CHECK(o == doctest::Approx(0.0));
    CHECK(out.frames[1].joints[0][1] == doctest::Approx(0.25));
}

TEST_CASE("normalize: barycenter drift is removed") {
    RngStream rng(4);
    MotionClip c = random_clip("d", 50, 6, rng);
    for (std::size_t t = 0; t < c.frames.size(); ++t)
        for (auto& j : c.frames[t].joints) j[0] += 0.3 * static_cast<double>(t) / 49.0;
    const auto [out, spec] = normalize(c);
    const auto b0 = xy_barycenter(out.frames[0]);
    for (const auto& p : out.frames) {
        const auto b = xy_barycenter(p);
        CHECK(std::abs(b[0] - b0[0]) < 1e-9);
        CHECK(std::abs(b[1] - b0[1]) < 1e-9);
    }
    const MotionClip back = denormalize(out, spec);
    for (std::size_t t = 0; t < c.frames.size(); ++t)
        for (std::size_t j = 0; j < 6; ++j)
            for (int a = 0; a < 3; ++a) CHECK(std::abs(back.frames[t].joints[j][a] - c.frames[t].joints[j][a]) < 1e-9);
}

TEST_CASE("normalize: zero extent is degenerate") {
    MotionClip c = empty_clip("z", 3, 2);
    CHECK_THROWS_AS(normalize(c, BarycenterMode::None), DegenerateExtentError);
}

TEST_CASE("extract_windows: counts") {
    const MotionClip c = empty_clip("w", 100);
    CHECK(extract_windows(std::span(&c, 1), 40, 1).size() == 61);
    CHECK(window_count(39, 40, 1) == 0);
    CHECK(window_count(100, 40, 7) == 9);

    std::vector<MotionClip> six;
    for (int i = 0; i < 6; ++i) six.push_back(empty_clip("c" + std::to_string(i), 6066));
    CHECK(WindowIndex(six, 40, 1).total() == 36162);
    CHECK(window_count(6066, 40, 1) * 6 == 36162);
}

TEST_CASE("extract_windows: windows never span clips and carry their start") {
    std::vector<MotionClip> clips{empty_clip("a", 45), empty_clip("b", 39), empty_clip("c", 41)};
    const auto w = extract_windows(clips, 40, 2);
    REQUIRE(w.size() == 3 + 0 + 1);
    CHECK(w[2].clip_id == "a");
    CHECK(w[2].start_frame == 4);
    CHECK(w[3].clip_id == "c");
    CHECK(w[3].window_id() == "c:0");
    const WindowIndex index(clips, 40, 2);
    CHECK(index.contains("a", 4));
    CHECK_FALSE(index.contains("a", 3));
    CHECK_FALSE(index.contains("b", 0));
    CHECK(index.starts("a") == std::vector<std::size_t>{0, 2, 4});
}

TEST_CASE("sequence: flatten and from_flat round trip") {
    RngStream rng(5);
    const MotionClip c = random_clip("f", 20, 5, rng);
    const auto w = extract_windows(std::span(&c, 1), 20, 1);
    const auto flat = w[0].flatten();
    CHECK(flat.size() == 300);
    const Sequence back = Sequence::from_flat(flat, 20, 5, "f", 0);
    CHECK(back.poses[19].joints[4] == w[0].poses[19].joints[4]);
}
