#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tacovc/error.hpp"
#include "tacovc/util.hpp"

namespace tacovc::io {

struct ManifestRecord {
  std::string utt_id;
  std::string audio;       // path, relative to the manifest location unless absolute
  std::string transcript;  // whitespace-separated phone symbols; may be empty
  std::string speaker;
};

// JSON-lines dataset manifest. One record per line:
//   {"utt_id": "a01", "audio": "wavs/a01.wav", "speaker": "A", "transcript": "aa ss oo"}
struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;

  static DatasetManifest load(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoError, "cannot open manifest: " + path.string());
    DatasetManifest m;
    m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    std::string line;
    std::set<std::string> seen;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::InvalidInput,
              "manifest parse error at " + path.string() + ":" + std::to_string(lineno) + ": " +
                  e.what());
      }
      ManifestRecord r;
      r.utt_id = j.at("utt_id").get<std::string>();
      r.audio = j.value("audio", "");
      r.transcript = j.value("transcript", "");
      r.speaker = j.value("speaker", "");
      require(!r.utt_id.empty(), ErrorCode::InvalidInput, "manifest record with empty utt_id");
      require(seen.insert(r.utt_id).second, ErrorCode::InvalidInput,
              "duplicate utt_id in manifest: " + r.utt_id);
      m.records.push_back(std::move(r));
    }
    return m;
  }

  void save(const std::filesystem::path& path) const {
    std::ostringstream out;
    for (const auto& r : records) {
      nlohmann::json j{{"utt_id", r.utt_id}};
      if (!r.audio.empty()) j["audio"] = r.audio;
      if (!r.transcript.empty()) j["transcript"] = r.transcript;
      if (!r.speaker.empty()) j["speaker"] = r.speaker;
      out << j.dump() << "\n";
    }
    writeFileAtomic(path, out.str());
  }

  std::filesystem::path audioPath(const ManifestRecord& r) const {
    std::filesystem::path p(r.audio);
    return p.is_absolute() ? p : base_dir / p;
  }

  void requireNonEmpty() const {
    require(!records.empty(), ErrorCode::InvalidInput, "manifest has no records");
  }

  void requireTranscripts() const {
    for (const auto& r : records)
      require(!r.transcript.empty(), ErrorCode::InvalidInput,
              "manifest record " + r.utt_id + " lacks a phoneme transcript");
  }
};

}  // namespace tacovc::io
