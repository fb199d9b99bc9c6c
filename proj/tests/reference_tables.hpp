#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sdfbayes/scenario.hpp"

// Reference true-toxicity tables, one row per drug-A level starting at j = 1.
// A leading '*' marks a true MTD.
inline const char* kReferenceTables = R"(
A   0.05  0.10  0.15 *0.30 | 0.10  0.15 *0.30  0.45 | 0.15 *0.30  0.45  0.50
B   0.02  0.08  0.10  0.11 | 0.05  0.10  0.13  0.15 | 0.09  0.12  0.15 *0.30
C   0.02  0.10  0.15  0.50 | 0.05  0.12 *0.30  0.55 | 0.08  0.15  0.45  0.60
D   0.05  0.12  0.20 *0.30 | 0.10  0.20 *0.30  0.40 |*0.30  0.42  0.52  0.62
RW  0.04  0.07  0.11  0.17 | 0.08  0.13  0.20 *0.30 | 0.13  0.21 *0.30  0.43
E   0.05  0.08  0.10  0.13 | 0.09  0.12  0.15 *0.30 | 0.15 *0.30  0.45  0.50
F   0.03  0.06  0.08  0.10 | 0.07  0.12  0.16 *0.35 | 0.10  0.15 *0.35  0.50
G   0.05  0.10  0.17 *0.35 | 0.10  0.17 *0.35  0.45 | 0.17 *0.35  0.45  0.50
H   0.03  0.06  0.08  0.10 | 0.07  0.12  0.16 *0.25 | 0.10  0.15 *0.25  0.40
I   0.03  0.08  0.18 *0.25 | 0.07  0.12 *0.25  0.40 | 0.10 *0.25  0.40  0.60
EP  0.035 0.09  0.125 0.205| 0.075 0.125 0.215 *0.30 | 0.12  0.21 *0.30  0.40
)";

struct ReferenceTable {
  std::vector<double> values;  // row-major, j = 1 first
  std::vector<sdfb::Dc> marked;
};

inline std::map<std::string, ReferenceTable> parse_reference_tables() {
  std::map<std::string, ReferenceTable> out;
  std::istringstream lines(kReferenceTables);
  for (std::string line; std::getline(lines, line);) {
    if (line.find_first_not_of(' ') == std::string::npos) continue;
    for (char& c : line)
      if (c == '|') c = ' ';
    std::istringstream in(line);
    std::string name;
    in >> name;
    ReferenceTable t;
    for (std::string tok; in >> tok;) {
      if (tok.front() == '*') {
        tok.erase(0, 1);
        const int i = static_cast<int>(t.values.size());
        t.marked.push_back(sdfb::Dc{i / 4 + 1, i % 4 + 1});
      }
      t.values.push_back(std::stod(tok));
    }
    out[name] = t;
  }
  return out;
}
