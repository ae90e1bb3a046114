#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "canopy/error.hpp"
#include "canopy/geodata.hpp"
#include "oracles/oracles.hpp"
#include "support/scratch.hpp"

using namespace canopy;
using namespace canopy::geodata;
using canopy::testing::ScratchDir;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected canopy::Error");
  return ErrorKind::Validation;
}

void write_raw(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

bool same_bits(const RasterCube& a, const RasterCube& b) {
  return a.width == b.width && a.height == b.height && a.bands == b.bands &&
         a.values.size() == b.values.size() &&
         std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0;
}

RasterCube random_cube(std::size_t w, std::size_t h, std::size_t b, std::uint64_t seed) {
  auto c = RasterCube::filled(w, h, b);
  std::mt19937 rng(static_cast<unsigned>(seed));
  std::normal_distribution<float> d(0.f, 10.f);
  for (auto& v : c.values) v = d(rng);
  return c;
}

}  // namespace

TEST_CASE("cube layout is band-sequential and row-major") {
  ScratchDir dir("cube");
  const float raw[4] = {1, 2, 3, 4};
  write_raw(dir / "t.f32", std::string(reinterpret_cast<const char*>(raw), sizeof raw));
  write_raw(dir / "t.json",
            R"({"width":2,"height":2,"bands":1,"dtype":"f32","layout":"bsq","nodata":null})");
  const auto c = load_cube(dir / "t");
  CHECK(c.at(1, 0) == 2.0f);
  CHECK(c.at(0, 1) == 3.0f);
  CHECK(load_cube(dir / "t.json").values == c.values);
  CHECK(load_cube(dir / "t.f32").values == c.values);
}

TEST_CASE("load_cube names the byte counts on a size mismatch") {
  ScratchDir dir("cube");
  write_raw(dir / "m.f32", std::string(2 * 2 * 2 * 4, '\0'));
  write_raw(dir / "m.json", R"({"width":2,"height":2,"bands":3,"dtype":"f32","layout":"bsq"})");
  try {
    load_cube(dir / "m");
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Validation);
    const std::string msg = e.what();
    CHECK(msg.find("48") != std::string::npos);
    CHECK(msg.find("32") != std::string::npos);
  }
}

TEST_CASE("unknown dtype or layout is unsupported") {
  ScratchDir dir("cube");
  write_raw(dir / "a.f32", std::string(4, '\0'));
  write_raw(dir / "a.json", R"({"width":1,"height":1,"bands":1,"dtype":"f64","layout":"bsq"})");
  CHECK(kind_of([&] { load_cube(dir / "a"); }) == ErrorKind::Unsupported);
  write_raw(dir / "a.json", R"({"width":1,"height":1,"bands":1,"dtype":"f32","layout":"bip"})");
  CHECK(kind_of([&] { load_cube(dir / "a"); }) == ErrorKind::Unsupported);
}

TEST_CASE("missing cube files are I/O errors") {
  ScratchDir dir("cube");
  CHECK(kind_of([&] { load_cube(dir / "nothing"); }) == ErrorKind::Io);
}

TEST_CASE("save/load round trips bit-exactly") {
  ScratchDir dir("cube");

  SUBCASE("empty 0-band cube") {
    auto c = RasterCube::filled(3, 2, 0);
    save_cube(c, dir / "e");
    CHECK(std::filesystem::file_size(dir / "e.f32") == 0);
    const auto back = load_cube(dir / "e");
    CHECK(back.bands == 0);
    CHECK(back.width == 3);
  }
  SUBCASE("NaN nodata keeps its bit pattern") {
    auto c = random_cube(4, 4, 2, 3);
    const float odd_nan = std::bit_cast<float>(0x7fc00123u);
    c.values[5] = odd_nan;
    c.values[17] = std::numeric_limits<float>::quiet_NaN();
    save_cube(c, dir / "n");
    const auto back = load_cube(dir / "n");
    CHECK(same_bits(c, back));
    CHECK(std::bit_cast<std::uint32_t>(back.values[5]) == 0x7fc00123u);
    CHECK(back.pixel_is_nodata(1, 1));
  }
  SUBCASE("random 16x16x5") {
    auto c = random_cube(16, 16, 5, 11);
    c.band_names = {"a", "b", "c", "d", "e"};
    save_cube(c, dir / "r.f32");
    const auto back = load_cube(dir / "r");
    CHECK(same_bits(c, back));
    CHECK(back.band_names == c.band_names);
  }
  SUBCASE("64x64x430 written and read back") {
    auto c = random_cube(64, 64, 430, 5);
    save_cube(c, dir / "big");
    CHECK(same_bits(c, load_cube(dir / "big")));
  }
  SUBCASE("numeric nodata sentinel") {
    auto c = random_cube(3, 3, 1, 2);
    c.nodata = -9999.0f;
    c.values[4] = -9999.0f;
    save_cube(c, dir / "s");
    const auto back = load_cube(dir / "s");
    CHECK(back.nodata == -9999.0f);
    CHECK(back.pixel_is_nodata(1, 1));
    CHECK_FALSE(back.pixel_is_nodata(0, 0));
  }
}

TEST_CASE("cube validation rejects infinities that are not nodata") {
  auto c = RasterCube::filled(2, 1, 1);
  c.values[0] = std::numeric_limits<float>::infinity();
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::Validation);
  c.values = {1.0f};
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::Validation);
}

TEST_CASE("rasterize: sub-pixel radius hits one pixel") {
  PolygonLabel p{5, 5, 0.5, 2, 1};
  const auto r = rasterize_polygons({&p, 1}, 10, 10);
  int n = 0;
  for (auto v : r.labels) n += v != LabelRaster::kUnlabeled;
  CHECK(n == 1);
  CHECK(r.at(5, 5) == 2);
  CHECK(r.polygon_ids[5 * 10 + 5] == 1);
}

TEST_CASE("rasterize: radius 1.5 covers the 3x3 block") {
  PolygonLabel p{5, 5, 1.5, 0, 1};
  const auto r = rasterize_polygons({&p, 1}, 10, 10);
  int n = 0;
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x)
      if (r.at(x, y) == 0) {
        ++n;
        CHECK(std::abs(x - 5) <= 1);
        CHECK(std::abs(y - 5) <= 1);
      }
  CHECK(n == 9);
}

TEST_CASE("rasterize: overlaps go to the smaller polygon id") {
  std::vector<PolygonLabel> ps{{6, 5, 2, 1, 7}, {5, 5, 2, 0, 3}};
  const auto r = rasterize_polygons(ps, 12, 12);
  CHECK(r.at(5, 5) == 0);
  CHECK(r.at(6, 5) == 0);
  CHECK(r.at(8, 5) == 1);
  CHECK(r.polygon_ids[5 * 12 + 6] == 3);
}

TEST_CASE("rasterize agrees with the brute-force distance check") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    const int w = 1 + static_cast<int>(rng() % 64), h = 1 + static_cast<int>(rng() % 64);
    std::uniform_real_distribution<double> ux(-3, w + 3), uy(-3, h + 3), ur(0.2, 6);
    std::vector<PolygonLabel> ps;
    std::vector<oracle::Circle> cs;
    const int n = static_cast<int>(rng() % 12);
    std::vector<std::int64_t> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = i * 3 + 1;
    std::shuffle(ids.begin(), ids.end(), rng);
    for (int i = 0; i < n; ++i) {
      PolygonLabel p{ux(rng), uy(rng), ur(rng), static_cast<int>(rng() % 4), ids[i]};
      ps.push_back(p);
      cs.push_back({p.center_x, p.center_y, p.radius, p.label, p.polygon_id});
    }
    const auto got = rasterize_polygons(ps, w, h);
    const auto want = oracle::rasterize(cs, w, h);
    REQUIRE(got.labels.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) REQUIRE(got.labels[i] == want[i]);
  }
}

TEST_CASE("label rasters survive the cube conversion") {
  std::vector<PolygonLabel> ps{{2, 2, 1.2, 3, 1}, {6, 3, 2.0, 0, 2}};
  const auto r = rasterize_polygons(ps, 9, 7);
  const auto back = label_raster_from_cube(label_raster_to_cube(r));
  CHECK(back.labels == r.labels);
}

TEST_CASE("split_by_polygon proportions") {
  SUBCASE("100 single-class polygons split 66/23/11") {
    std::vector<PolygonLabel> ps;
    for (int i = 0; i < 100; ++i) ps.push_back({double(i), 0, 1, 0, i});
    const auto s = split_by_polygon(ps, {}, 1);
    int c[3] = {};
    for (auto [id, sp] : s.by_polygon) ++c[static_cast<int>(sp)];
    CHECK(c[0] == 66);
    CHECK(c[1] == 23);
    CHECK(c[2] == 11);
  }
  SUBCASE("fractions (1,0,0) put everything in train") {
    std::vector<PolygonLabel> ps;
    for (int i = 0; i < 10; ++i) ps.push_back({0, 0, 1, i % 2, i});
    for (auto [id, sp] : split_by_polygon(ps, {1, 0, 0}, 3).by_polygon) CHECK(sp == Split::Train);
  }
  SUBCASE("small classes go to train with a warning") {
    std::vector<PolygonLabel> ps{{0, 0, 1, 0, 1}, {0, 0, 1, 0, 2}, {0, 0, 1, 1, 3},
                                 {0, 0, 1, 1, 4}, {0, 0, 1, 1, 5}};
    const auto s = split_by_polygon(ps, {}, 0);
    CHECK(s.of(1) == Split::Train);
    CHECK(s.of(2) == Split::Train);
    REQUIRE(s.warnings.size() == 1);
    CHECK(s.warnings[0].find("class 0") != std::string::npos);
  }
  SUBCASE("bad fractions are rejected") {
    std::vector<PolygonLabel> ps{{0, 0, 1, 0, 1}};
    CHECK(kind_of([&] { split_by_polygon(ps, {0.5, 0.2, 0.2}, 0); }) == ErrorKind::Validation);
  }
}

TEST_CASE("split_by_polygon matches the reference shuffle") {
  for (std::uint64_t seed : {42ull, 7ull, 123456789ull}) {
    std::mt19937_64 rng(seed + 1);
    std::vector<PolygonLabel> ps;
    std::vector<std::pair<std::int64_t, int>> flat;
    for (int i = 0; i < 3 * 25; ++i) {
      const int label = static_cast<int>(rng() % 3);
      const std::int64_t id = 1000 - 7 * i;
      ps.push_back({0, 0, 1, label, id});
      flat.push_back({id, label});
    }
    const double frac[3] = {0.66, 0.23, 0.11};
    const auto want = oracle::polygon_split(flat, frac, seed);
    const auto got = split_by_polygon(ps, {}, seed);
    REQUIRE(got.by_polygon.size() == want.size());
    for (auto [id, sp] : want) CHECK(static_cast<int>(got.of(id)) == sp);

    // per-class counts within one polygon of the target fractions
    std::map<int, std::array<int, 4>> counts;
    for (const auto& p : ps) {
      ++counts[p.label][static_cast<int>(got.of(p.polygon_id))];
      ++counts[p.label][3];
    }
    for (auto& [label, c] : counts)
      for (int k = 0; k < 3; ++k) CHECK(std::abs(c[k] - frac[k] * c[3]) <= 1.0);
  }
}

TEST_CASE("splits are deterministic and round trip through CSV") {
  ScratchDir dir("split");
  std::vector<PolygonLabel> ps;
  for (int i = 0; i < 30; ++i) ps.push_back({0, 0, 1, i % 3, i + 1});
  const auto a = split_by_polygon(ps, {}, 5);
  CHECK(a.by_polygon == split_by_polygon(ps, {}, 5).by_polygon);
  write_splits_csv(a, dir / "s.csv");
  CHECK(read_splits_csv(dir / "s.csv").by_polygon == a.by_polygon);
}

TEST_CASE("extracted samples never straddle splits within a polygon") {
  std::vector<PolygonLabel> ps;
  for (int i = 0; i < 12; ++i) ps.push_back({3.0 + 5 * (i % 4), 3.0 + 5 * (i / 4), 2.2, i % 3, i + 1});
  const auto raster = rasterize_polygons(ps, 24, 16);
  auto hsi = random_cube(24, 16, 4, 1), als = random_cube(24, 16, 2, 2);
  hsi.at(3, 3, 2) = std::numeric_limits<float>::quiet_NaN();
  const auto splits = split_by_polygon(ps, {}, 9);
  const auto samples = extract_samples(hsi, als, raster, splits);
  std::map<std::int64_t, std::pair<Split, int>> seen;
  for (const auto& s : samples) {
    CHECK_FALSE((s.x == 3 && s.y == 3));
    auto [it, fresh] = seen.emplace(s.polygon_id, std::pair{s.split, s.label});
    if (!fresh) {
      CHECK(it->second.first == s.split);
      CHECK(it->second.second == s.label);
    }
    CHECK(s.split == splits.of(s.polygon_id));
  }
  CHECK(seen.size() == ps.size());
}

TEST_CASE("standardizer") {
  auto sample = [](std::vector<float> h) {
    LabeledSample s;
    s.hsi = std::move(h);
    s.als = {0};
    return s;
  };
  SUBCASE("values {1,3} map to {-1,+1}") {
    std::vector<LabeledSample> ss{sample({1, 7}), sample({3, 7})};
    const auto st = fit_standardizer(ss, Stream::Hsi);
    CHECK(st.apply(std::vector<float>{1, 7})[0] == doctest::Approx(-1.0));
    CHECK(st.apply(std::vector<float>{3, 7})[0] == doctest::Approx(1.0));
    // constant band
    CHECK(st.apply(std::vector<float>{3, 7})[1] == 0.0f);
    CHECK(st.apply(std::vector<float>{3, 100})[1] == 0.0f);
  }
  SUBCASE("training features come out with zero mean and unit std") {
    std::mt19937 rng(4);
    std::normal_distribution<float> d(50, 7);
    std::vector<LabeledSample> ss;
    for (int i = 0; i < 500; ++i) ss.push_back(sample({d(rng), d(rng) * 0.01f}));
    const auto st = fit_standardizer(ss, Stream::Hsi);
    for (int b = 0; b < 2; ++b) {
      double m = 0, v = 0;
      for (const auto& s : ss) m += st.apply(s.hsi)[b];
      m /= ss.size();
      for (const auto& s : ss) v += std::pow(st.apply(s.hsi)[b] - m, 2);
      CHECK(std::abs(m) < 1e-5);
      CHECK(std::sqrt(v / ss.size()) == doctest::Approx(1.0).epsilon(1e-5));
    }
    // a shifted test set is not re-centred
    std::vector<float> shifted{60, 0.6f};
    CHECK(st.apply(shifted)[0] > 1.0f);
  }
  SUBCASE("empty training set") {
    CHECK(kind_of([] { fit_standardizer({}, Stream::Als); }) == ErrorKind::Validation);
  }
  SUBCASE("wrong length") {
    std::vector<LabeledSample> ss{sample({1}), sample({2})};
    const auto st = fit_standardizer(ss, Stream::Hsi);
    CHECK(kind_of([&] { st.apply(std::vector<float>{1, 2}); }) == ErrorKind::Validation);
  }
}

TEST_CASE("sample store audit log flags early test reads") {
  std::vector<LabeledSample> ss(3);
  ss[0].split = Split::Train;
  ss[1].split = Split::Test;
  ss[2].split = Split::Validation;
  SampleStore store(ss);
  CHECK(store.get(Split::Train, "fit").size() == 1);
  CHECK(store.premature_test_reads() == 0);
  store.get(Split::Test, "peek");
  CHECK(store.premature_test_reads() == 1);
  store.begin_evaluation();
  CHECK(store.get(Split::Test, "eval").size() == 1);
  CHECK(store.premature_test_reads() == 1);
  CHECK(store.audit_log().size() == 3);
  CHECK(store.count(Split::Validation) == 1);
}

TEST_CASE("class list and polygon CSV round trip") {
  ScratchDir dir("io");
  std::vector<std::string> classes{"Pinus", "Betula", "Background"};
  write_class_list(classes, dir / "c.txt");
  CHECK(read_class_list(dir / "c.txt") == classes);

  std::vector<PolygonLabel> ps{{1.5, 2.25, 3, 1, 10}, {7, 8, 0.75, 0, 11}};
  write_polygons_csv(ps, dir / "p.csv");
  const auto back = read_polygons_csv(dir / "p.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].center_y == 2.25);
  CHECK(back[1].radius == 0.75);
  CHECK(back[1].polygon_id == 11);

  write_raw(dir / "bad.csv", "polygon_id,center_x,center_y,radius,label\n1,0,0,0,1\n");
  CHECK(kind_of([&] { read_polygons_csv(dir / "bad.csv"); }) == ErrorKind::Validation);
}
