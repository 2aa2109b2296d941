#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tacovc/error.hpp"
#include "tacovc/util.hpp"

namespace tacovc::pr {

struct PhonemeSequence {
  std::vector<int> labels;  // ids in [0, n_phones); never the CTC blank
};

// Phone inventory plus its scoring fold. TSV, one phone per line:
//   <symbol>\t<fold_symbol>
// A line with only <symbol> marks a phone that is deleted when folding
// (TIMIT's "q" under the usual 61->39 scoring fold).
struct PhoneInventory {
  std::vector<std::string> symbols;      // training inventory; id = index
  std::vector<int> fold;                 // id -> scoring class, -1 = deleted
  std::vector<std::string> fold_symbols; // scoring class names

  int size() const { return static_cast<int>(symbols.size()); }
  int blankId() const { return size(); }       // blank is the last PPG column
  int numClasses() const { return size() + 1; }

  int idOf(const std::string& sym) const {
    for (int i = 0; i < size(); ++i)
      if (symbols[i] == sym) return i;
    raise(ErrorCode::InvalidInput, "unknown phone symbol: " + sym);
  }

  PhonemeSequence parseTranscript(const std::string& text) const {
    PhonemeSequence seq;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) seq.labels.push_back(idOf(tok));
    require(!seq.labels.empty(), ErrorCode::InvalidInput, "empty transcript");
    return seq;
  }

  std::string format(const PhonemeSequence& seq) const {
    std::string out;
    for (size_t i = 0; i < seq.labels.size(); ++i) {
      const int id = seq.labels[i];
      require(id >= 0 && id < size(), ErrorCode::InvalidInput, "phone id out of range");
      if (i) out += ' ';
      out += symbols[id];
    }
    return out;
  }

  std::vector<int> foldSequence(const PhonemeSequence& seq) const {
    std::vector<int> out;
    out.reserve(seq.labels.size());
    for (int id : seq.labels) {
      require(id >= 0 && id < size(), ErrorCode::InvalidInput, "phone id out of range");
      if (fold[id] >= 0) out.push_back(fold[id]);
    }
    return out;
  }

  static PhoneInventory identity(const std::vector<std::string>& syms) {
    PhoneInventory inv;
    inv.symbols = syms;
    inv.fold_symbols = syms;
    inv.fold.resize(syms.size());
    for (size_t i = 0; i < syms.size(); ++i) inv.fold[i] = static_cast<int>(i);
    return inv;
  }

  static PhoneInventory loadTsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoError, "cannot open phone inventory: " + path.string());
    PhoneInventory inv;
    std::map<std::string, int> fold_ids;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      const std::string sym = tab == std::string::npos ? line : line.substr(0, tab);
      const std::string target = tab == std::string::npos ? "" : line.substr(tab + 1);
      require(!sym.empty(), ErrorCode::InvalidInput, "empty phone symbol in " + path.string());
      require(std::find(inv.symbols.begin(), inv.symbols.end(), sym) == inv.symbols.end(),
              ErrorCode::InvalidInput, "duplicate phone symbol: " + sym);
      inv.symbols.push_back(sym);
      if (target.empty()) {
        inv.fold.push_back(-1);
      } else {
        auto it = fold_ids.find(target);
        if (it == fold_ids.end()) {
          it = fold_ids.emplace(target, static_cast<int>(inv.fold_symbols.size())).first;
          inv.fold_symbols.push_back(target);
        }
        inv.fold.push_back(it->second);
      }
    }
    require(!inv.symbols.empty(), ErrorCode::InvalidInput, "empty phone inventory");
    return inv;
  }

  void saveTsv(const std::filesystem::path& path) const {
    std::ostringstream out;
    for (int i = 0; i < size(); ++i) {
      out << symbols[i];
      if (fold[i] >= 0) out << '\t' << fold_symbols[fold[i]];
      out << '\n';
    }
    writeFileAtomic(path, out.str());
  }

  nlohmann::json toJson() const {
    nlohmann::json lines = nlohmann::json::array();
    for (int i = 0; i < size(); ++i)
      lines.push_back({{"symbol", symbols[i]},
                       {"fold", fold[i] >= 0 ? fold_symbols[fold[i]] : ""}});
    return lines;
  }

  static PhoneInventory fromJson(const nlohmann::json& j) {
    PhoneInventory inv;
    std::map<std::string, int> fold_ids;
    for (const auto& e : j) {
      inv.symbols.push_back(e.at("symbol").get<std::string>());
      const std::string target = e.at("fold").get<std::string>();
      if (target.empty()) {
        inv.fold.push_back(-1);
      } else {
        auto it = fold_ids.find(target);
        if (it == fold_ids.end()) {
          it = fold_ids.emplace(target, static_cast<int>(inv.fold_symbols.size())).first;
          inv.fold_symbols.push_back(target);
        }
        inv.fold.push_back(it->second);
      }
    }
    return inv;
  }
};

inline int levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// Phoneme error rate: both sequences are folded to the scoring inventory
// first; Levenshtein distance over reference length. May exceed 1.
inline float per(const PhoneInventory& inv, const PhonemeSequence& ref,
                 const PhonemeSequence& hyp) {
  require(!ref.labels.empty(), ErrorCode::InvalidInput, "empty reference sequence");
  const std::vector<int> r = inv.foldSequence(ref);
  const std::vector<int> h = inv.foldSequence(hyp);
  require(!r.empty(), ErrorCode::InvalidInput, "reference folds to an empty sequence");
  return static_cast<float>(levenshtein(r, h)) / static_cast<float>(r.size());
}

}  // namespace tacovc::pr
