#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "tacovc/manifest.hpp"
#include "tacovc/phones.hpp"
#include "tacovc/toy.hpp"
#include "tacovc/tvcf.hpp"
#include "tacovc/wav.hpp"

using namespace tacovc;
namespace fs = std::filesystem;

namespace {

fs::path tmpDir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tacovc_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("wav round trip") {
  const fs::path dir = tmpDir("wav");
  std::vector<float> s(1000);
  for (size_t i = 0; i < s.size(); ++i) s[i] = std::sin(0.01f * i) * 0.8f;
  io::writeWav(dir / "x.wav", s, 22050);
  const auto r = io::readWav(dir / "x.wav");
  REQUIRE(r.sample_rate == 22050);
  REQUIRE(r.samples.size() == s.size());
  for (size_t i = 0; i < s.size(); ++i) REQUIRE(std::abs(r.samples[i] - s[i]) < 1.0f / 16000.0f);

  CHECK_THROWS_AS(io::readWav(dir / "missing.wav"), Error);
}

TEST_CASE("tvcf container round trip with sidecar") {
  const fs::path dir = tmpDir("tvcf");
  Eigen::MatrixXf m(3, 5);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) m(r, c) = static_cast<float>(r * 10 + c) * 0.25f;
  io::writeTvcf(dir / "m.tvcf", m, {{"role", "TRUE_Y"}, {"frames", 3}});
  const Eigen::MatrixXf back = io::readTvcf(dir / "m.tvcf");
  CHECK(back == m);
  const auto side = io::readSidecar(dir / "m.tvcf");
  CHECK(side.at("role") == "TRUE_Y");

  // header checks
  std::string bytes = readFileBytes(dir / "m.tvcf");
  CHECK(bytes.substr(0, 4) == "TVCF");
  bytes[0] = 'X';
  CHECK_THROWS_AS(io::tvcfDecode(bytes), Error);
}

TEST_CASE("manifest load, save and validation") {
  const fs::path dir = tmpDir("manifest");
  {
    std::ofstream out(dir / "m.jsonl");
    out << R"({"utt_id":"u1","audio":"wavs/u1.wav","speaker":"A","transcript":"aa ss"})" << "\n";
    out << "\n";
    out << R"({"utt_id":"u2","audio":"wavs/u2.wav","speaker":"A"})" << "\n";
  }
  auto m = io::DatasetManifest::load(dir / "m.jsonl");
  REQUIRE(m.records.size() == 2);
  CHECK(m.records[0].transcript == "aa ss");
  CHECK(m.audioPath(m.records[1]) == dir / "wavs/u2.wav");
  CHECK_THROWS_AS(m.requireTranscripts(), Error);

  m.save(dir / "copy.jsonl");
  const auto m2 = io::DatasetManifest::load(dir / "copy.jsonl");
  CHECK(m2.records.size() == 2);
  CHECK(m2.records[1].utt_id == "u2");

  {
    std::ofstream out(dir / "dup.jsonl");
    out << R"({"utt_id":"u1","audio":"a.wav"})" << "\n";
    out << R"({"utt_id":"u1","audio":"b.wav"})" << "\n";
  }
  CHECK_THROWS_AS(io::DatasetManifest::load(dir / "dup.jsonl"), Error);
}

TEST_CASE("phone inventory parsing and folding") {
  const fs::path dir = tmpDir("phones");
  {
    std::ofstream out(dir / "inv.tsv");
    out << "# comment\n";
    out << "aa\tA\n";
    out << "ao\tA\n";
    out << "q\n";  // deleted under folding
    out << "s\ts\n";
  }
  const auto inv = pr::PhoneInventory::loadTsv(dir / "inv.tsv");
  REQUIRE(inv.size() == 4);
  CHECK(inv.numClasses() == 5);
  CHECK(inv.blankId() == 4);
  CHECK(inv.fold_symbols.size() == 2);

  const auto seq = inv.parseTranscript("aa q s ao");
  CHECK(seq.labels == std::vector<int>{0, 2, 3, 1});
  CHECK(inv.foldSequence(seq) == std::vector<int>{0, 1, 0});
  CHECK(inv.format(seq) == "aa q s ao");
  CHECK_THROWS_AS(inv.parseTranscript("aa zz"), Error);

  const auto j = inv.toJson();
  const auto inv2 = pr::PhoneInventory::fromJson(j);
  CHECK(inv2.symbols == inv.symbols);
  CHECK(inv2.fold == inv.fold);
}

TEST_CASE("phoneme error rate") {
  const auto inv = pr::PhoneInventory::identity({"p1", "p2", "p3", "p4"});
  pr::PhonemeSequence ref{{0, 1, 2, 3}};
  CHECK(pr::per(inv, ref, ref) == 0.0f);

  pr::PhonemeSequence sub{{0, 1, 1, 3}};
  CHECK(pr::per(inv, ref, sub) == 0.25f);

  pr::PhonemeSequence r3{{0, 1, 2}};
  pr::PhonemeSequence h2{{0, 2}};
  CHECK(pr::per(inv, r3, h2) == Catch::Approx(1.0 / 3.0));

  // PER can exceed 1 when the hypothesis is much longer
  pr::PhonemeSequence ref1{{0}};
  pr::PhonemeSequence hyp3{{1, 2, 3}};
  CHECK(pr::per(inv, ref1, hyp3) == 3.0f);

  pr::PhonemeSequence empty;
  CHECK_THROWS_AS(pr::per(inv, empty, ref), Error);
}

TEST_CASE("TIMIT 61->39 folding table ships as a data asset") {
  const fs::path table = fs::path(TACOVC_SOURCE_DIR) / "data" / "timit61_fold39.tsv";
  const auto inv = pr::PhoneInventory::loadTsv(table);
  CHECK(inv.size() == 61);
  CHECK(inv.numClasses() == 62);
  CHECK(inv.fold_symbols.size() == 39);
  CHECK(inv.fold[inv.idOf("q")] == -1);
  CHECK(inv.fold[inv.idOf("ao")] == inv.fold[inv.idOf("aa")]);
  CHECK(inv.fold[inv.idOf("pcl")] == inv.fold[inv.idOf("h#")]);
}

TEST_CASE("toy corpus generation is deterministic and well-formed") {
  const fs::path dir_a = tmpDir("toy_a");
  const fs::path dir_b = tmpDir("toy_b");
  toy::ToyCorpusOptions opt;
  opt.n_utterances = 3;
  opt.seed = 42;
  const auto m1 = toy::makeToyCorpus(dir_a, opt);
  const auto m2 = toy::makeToyCorpus(dir_b, opt);
  REQUIRE(m1.records.size() == 3);
  const auto inv = pr::PhoneInventory::loadTsv(dir_a / "toy_phones.tsv");
  CHECK(inv.size() == 8);
  for (size_t i = 0; i < m1.records.size(); ++i) {
    CHECK(m1.records[i].transcript == m2.records[i].transcript);
    CHECK(!m1.records[i].transcript.empty());
    inv.parseTranscript(m1.records[i].transcript);  // throws on unknown symbols
    const auto w1 = io::readWav(m1.audioPath(m1.records[i]));
    const auto w2 = io::readWav(m2.audioPath(m2.records[i]));
    CHECK(w1.samples == w2.samples);
    CHECK(w1.sample_rate == 22050);
    CHECK(w1.samples.size() > 22050 / 4);
  }

  toy::ToyCorpusOptions other = opt;
  other.speaker = "B";
  const auto mb = toy::makeToyCorpus(tmpDir("toy_c"), other);
  CHECK(mb.records[0].speaker == "B");
}
