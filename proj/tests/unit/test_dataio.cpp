#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "mtj/dataio.hpp"
#include "mtj/rng.hpp"

using namespace mtj;
namespace fs = std::filesystem;

namespace {

std::string entry_json(const std::string& id, int w, int h) {
  std::ostringstream os;
  os << R"({"video_id":")" << id
     << R"(","instrument":"Esaote","movement":"PT","muscle":"LG","subject_group":"impaired",)"
     << R"("frame_dir":"frames/)" << id << R"(","pixel_spacing_mm":0.2,"crop":{"x":10,"y":20,"w":)" << w
     << R"(,"h":)" << h << "}}";
  return os.str();
}

std::string manifest_json(const std::vector<std::string>& entries) {
  std::string s = R"({"schema_version":1,"entries":[)";
  for (std::size_t i = 0; i < entries.size(); ++i) s += (i ? "," : "") + entries[i];
  return s + "]}";
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "mtj_test_dataio" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("manifest parsing") {
  SUBCASE("empty entries") {
    const DatasetManifest m = parse_manifest(R"({"schema_version":1,"entries":[]})");
    CHECK(m.entries.empty());
  }
  SUBCASE("2:1 crop is accepted") {
    const DatasetManifest m = parse_manifest(manifest_json({entry_json("v1", 700, 350)}));
    REQUIRE(m.entries.size() == 1);
    const VideoEntry& e = m.entries[0];
    CHECK(e.instrument == Instrument::Esaote);
    CHECK(e.movement == Movement::PT);
    CHECK(e.muscle == Muscle::LG);
    CHECK(e.subject_group == SubjectGroup::impaired);
    CHECK(e.crop == CropSpec{10, 20, 700, 350});
    CHECK(e.pixel_spacing_mm == 0.2);
    CHECK(e.stride == 5);
  }
  SUBCASE("700x351 is rejected with the entry index") {
    const std::string msg =
        error_of([] { parse_manifest(manifest_json({entry_json("v1", 700, 350), entry_json("v2", 700, 351)})); });
    CHECK(msg.find("crop ratio") != std::string::npos);
    CHECK(msg.find("1") != std::string::npos);
  }
  SUBCASE("duplicate ids") {
    const std::string msg =
        error_of([] { parse_manifest(manifest_json({entry_json("v1", 700, 350), entry_json("v1", 700, 350)})); });
    CHECK(msg.find("duplicate") != std::string::npos);
  }
  SUBCASE("malformed documents") {
    CHECK_THROWS_AS(parse_manifest("{"), DataError);
    CHECK_THROWS_AS(parse_manifest(R"({"schema_version":99,"entries":[]})"), DataError);
    std::string bad = entry_json("v1", 700, 350);
    bad.replace(bad.find("Esaote"), 6, "Philips");
    CHECK_THROWS_AS(parse_manifest(manifest_json({bad})), DataError);
    bad = entry_json("v1", 700, 350);
    bad.replace(bad.find("0.2"), 3, "0.0");
    CHECK_THROWS_AS(parse_manifest(manifest_json({bad})), DataError);
  }
  SUBCASE("save and reload") {
    const fs::path dir = scratch("manifest");
    DatasetManifest m = parse_manifest(manifest_json({entry_json("a", 700, 350), entry_json("b", 512, 256)}));
    m.labels = "labels.csv";
    save_manifest(dir / "manifest.json", m);
    const DatasetManifest back = load_manifest(dir / "manifest.json");
    CHECK(back.base_dir == dir);
    CHECK(back.labels == "labels.csv");
    CHECK(manifest_to_json(back) == manifest_to_json(m));
    CHECK(back.frame_dir(back.entries[1]) == dir / "frames/b");
    CHECK(back.find("b") == &back.entries[1]);
    CHECK(back.find("zz") == nullptr);
  }
}

TEST_CASE("label parsing") {
  const std::string header = std::string(kLabelsHeader) + "\n";
  SUBCASE("visible and absent positions") {
    const auto r = parse_labels(header + "v1,3,S1,,\nv1,0,S1,100.5,60.0\n");
    REQUIRE(r.size() == 2);
    CHECK(r[0].frame_idx == 0);
    REQUIRE(r[0].position.has_value());
    CHECK(r[0].position->x == 100.5);
    CHECK(r[0].position->y == 60.0);
    CHECK(r[1].frame_idx == 3);
    CHECK_FALSE(r[1].position.has_value());
  }
  SUBCASE("range boundaries are exclusive at the top") {
    CHECK_THROWS_AS(parse_labels(header + "v1,0,S1,256.0,60.0\n"), DataError);
    CHECK_THROWS_AS(parse_labels(header + "v1,0,S1,10.0,128.0\n"), DataError);
    CHECK_THROWS_AS(parse_labels(header + "v1,0,S1,-0.5,1.0\n"), DataError);
    CHECK_NOTHROW(parse_labels(header + "v1,0,S1,255.99,0.0\n"));
  }
  SUBCASE("malformed rows report the row number") {
    const std::string msg = error_of([&] { parse_labels(header + "v1,0,S1,1.0,1.0\nv1,x,S1,1.0,1.0\n"); });
    CHECK(msg.find("3") != std::string::npos);
    CHECK_THROWS_AS(parse_labels(header + "v1,0,S1,1.0\n"), DataError);
    CHECK_THROWS_AS(parse_labels(header + "v1,0,S1,1.0,\n"), DataError);
    CHECK_THROWS_AS(parse_labels(header + "v1,-1,S1,1.0,1.0\n"), DataError);
    CHECK_THROWS_AS(parse_labels("video,frame\n"), DataError);
  }
  SUBCASE("sorted by video, frame, annotator") {
    const auto r = parse_labels(header + "v2,0,S1,1.0,1.0\nv1,5,S2,1.0,1.0\nv1,5,S1,1.0,1.0\nv1,10,S1,1.0,1.0\n");
    CHECK(std::is_sorted(r.begin(), r.end(), label_order));
    CHECK(r[0].annotator_id == "S1");
    CHECK(r[1].annotator_id == "S2");
    CHECK(r[2].frame_idx == 10);
    CHECK(r[3].video_id == "v2");
  }
}

TEST_CASE("label CSV round-trips byte for byte") {
  Rng rng(17);
  std::vector<LabelRecord> records;
  for (int i = 0; i < 300; ++i) {
    LabelRecord r{"vid" + std::to_string(rng.below(7)), static_cast<int>(rng.below(400)),
                  "S" + std::to_string(rng.below(5)), std::nullopt};
    if (rng.uniform() < 0.9) r.position = Point{rng.uniform(0.0, 256.0), rng.uniform(0.0, 128.0)};
    if (rng.uniform() < 0.2) r.position = Point{static_cast<double>(rng.below(256)), 64.0};
    records.push_back(r);
  }
  std::sort(records.begin(), records.end(), label_order);
  records.erase(std::unique(records.begin(), records.end(),
                            [](const LabelRecord& a, const LabelRecord& b) {
                              return !label_order(a, b) && !label_order(b, a);
                            }),
                records.end());
  const std::string text = format_labels(records);
  CHECK(parse_labels(text) == records);
  CHECK(format_labels(parse_labels(text)) == text);

  const fs::path dir = scratch("labels");
  write_labels(dir / "labels.csv", records);
  CHECK(load_labels(dir / "labels.csv") == records);

  CHECK(format_decimal(60.0) == "60.0");
  CHECK(format_decimal(100.5) == "100.5");
  CHECK(format_decimal(0.1) == "0.1");
}

TEST_CASE("frame sampling") {
  std::vector<int> all(23);
  std::iota(all.begin(), all.end(), 0);
  CHECK(sample_frames(all, 5) == std::vector<int>{0, 5, 10, 15, 20});
  CHECK(sample_frames(all, 1) == all);

  std::vector<int> ten_seconds(250);  // 10 s at 25 fps
  std::iota(ten_seconds.begin(), ten_seconds.end(), 0);
  CHECK(sample_frames(ten_seconds, 5).size() == 50);

  const std::vector<int> gappy{0, 1, 3, 4, 6, 9, 12};
  const auto s = sample_frames(gappy, 3);
  CHECK(s == std::vector<int>{0, 3, 6, 9, 12});
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  CHECK_THROWS(sample_frames(all, 0));

  const fs::path dir = scratch("frames");
  for (int i : {0, 1, 2, 5, 7, 10}) write_png(dir / frame_filename(i), Grid(4, 2, 9.0f));
  std::ofstream(dir / "notes.txt") << "ignored";
  CHECK(frame_filename(7) == "frame_000007.png");
  CHECK(list_frame_indices(dir) == std::vector<int>{0, 1, 2, 5, 7, 10});

  DatasetManifest m;
  m.base_dir = dir.parent_path();
  VideoEntry e;
  e.frame_dir = "frames";
  CHECK(sample_frames(m, e, 5) == std::vector<int>{0, 5, 10});
  e.frame_dir = "empty";
  fs::create_directories(m.base_dir / "empty");
  CHECK_THROWS_AS(sample_frames(m, e, 5), DataError);
}

TEST_CASE("PNG round trip") {
  const fs::path dir = scratch("png");
  Grid g(5, 3);
  for (int i = 0; i < 15; ++i) g.values()[i] = static_cast<float>(i * 17);
  write_png(dir / "a.png", g);
  const Frame f = read_png(dir / "a.png");
  CHECK(f == Frame(g));
  CHECK_THROWS_AS(read_png(dir / "missing.png"), DataError);
}

TEST_CASE("phantoms") {
  PhantomParams p;
  p.seed = 42;
  p.junction_x = 100.3;
  p.junction_y = 70.6;

  SUBCASE("determinism") {
    const auto a = synth_phantom(p);
    const auto b = synth_phantom(p);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    REQUIRE(a.second.position.has_value());
    CHECK(a.second.position->x == 100.3);
    CHECK(a.second.position->y == 70.6);
    p.seed = 43;
    CHECK_FALSE(synth_phantom(p).first == a.first);
  }
  SUBCASE("noiseless junction is brighter than the background") {
    p.contrast = 1.0;
    p.speckle_scale = 0.0;
    const auto [frame, label] = synth_phantom(p);
    const Grid mask = phantom_band_mask(p);
    double bg = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask.values()[i] == 0.0f) {
        bg += frame.values()[i];
        ++n;
      }
    bg /= n;
    CHECK(frame.at(100, 71) > bg);
    for (float v : frame.values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 255.0f);
    }
  }
  SUBCASE("margin and parameter checks") {
    p.junction_x = 11.0;
    CHECK_THROWS_AS(synth_phantom(p), DataError);
    p.junction_x = 100.0;
    p.junction_y = 128.0 - 11.0;
    CHECK_THROWS_AS(synth_phantom(p), DataError);
    p.junction_y = 64.0;
    p.contrast = 0.0;
    CHECK_THROWS_AS(synth_phantom(p), DataError);
    p.contrast = 1.5;
    CHECK_THROWS_AS(synth_phantom(p), DataError);
  }
  SUBCASE("domain A has at least twice the band contrast of domain B") {
    auto gap = [](Instrument inst) {
      double total = 0.0;
      for (std::uint64_t s = 0; s < 100; ++s) {
        const PhantomParams q = phantom_preset(inst, s, 128, 64);
        const Frame f = synth_phantom(q).first;
        const Grid mask = phantom_band_mask(q);
        double fg = 0.0, bg = 0.0;
        int nf = 0, nb = 0;
        for (std::size_t i = 0; i < f.size(); ++i) {
          if (mask.values()[i] > 0.0f) {
            fg += f.values()[i];
            ++nf;
          } else {
            bg += f.values()[i];
            ++nb;
          }
        }
        total += fg / nf - bg / nb;
      }
      return total / 100.0;
    };
    const double a = gap(Instrument::SyntheticA);
    const double b = gap(Instrument::SyntheticB);
    MESSAGE("gap A " << a << " gap B " << b);
    CHECK(b > 0.0);
    CHECK(a >= 2.0 * b);
  }
  SUBCASE("presets keep the junction inside the margin") {
    for (std::uint64_t s = 0; s < 200; ++s) {
      const PhantomParams q = phantom_preset(Instrument::SyntheticB, s, 128, 64);
      CHECK(q.junction_x >= kPhantomMargin);
      CHECK(q.junction_x <= 128 - kPhantomMargin);
      CHECK(q.junction_y >= kPhantomMargin);
      CHECK(q.junction_y <= 64 - kPhantomMargin);
    }
    CHECK_THROWS_AS(phantom_preset(Instrument::Esaote, 0, 128, 64), UsageError);
  }
}

TEST_CASE("enum names") {
  CHECK(to_string(Instrument::Telemed) == "Telemed");
  CHECK(parse_instrument("SyntheticB") == Instrument::SyntheticB);
  CHECK(parse_movement("RUN") == Movement::RUN);
  CHECK(parse_muscle("MG") == Muscle::MG);
  CHECK(parse_subject_group("healthy") == SubjectGroup::healthy);
  CHECK_THROWS_AS(parse_movement("walk"), DataError);
}
