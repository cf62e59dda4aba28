#pragma once

#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gobert/ontology.hpp"

namespace fixtures {

inline std::string data(const std::string& name) { return std::string(GOBERT_TEST_DATA) + "/" + name; }

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// child is_a mid is_a root
inline const char* kChain = R"(format-version: 1.2

[Term]
id: GO:0008150
name: biological_process
namespace: biological_process

[Term]
id: GO:0000002
name: mid
namespace: biological_process
is_a: GO:0008150

[Term]
id: GO:0000003
name: child
namespace: biological_process
is_a: GO:0000002
)";

// two children pointing at one parent
inline const char* kDiamond = R"(
[Term]
id: GO:0003674
name: molecular_function
namespace: molecular_function

[Term]
id: GO:0000010
name: parent
namespace: molecular_function
is_a: GO:0003674

[Term]
id: GO:0000011
name: left
namespace: molecular_function
is_a: GO:0000010

[Term]
id: GO:0000012
name: right
namespace: molecular_function
relationship: part_of GO:0000010

[Term]
id: GO:0000013
name: bottom
namespace: molecular_function
is_a: GO:0000011
is_a: GO:0000012
)";

struct OracleCounts {
  std::map<std::string, std::size_t> counts;
  std::vector<std::array<std::string, 3>> edges;  // source, kind, target
};

inline OracleCounts read_oracle_counts(const std::string& path) {
  OracleCounts out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    std::getline(ls, key, '\t');
    if (key == "edge") {
      std::array<std::string, 3> e;
      for (auto& f : e) std::getline(ls, f, '\t');
      out.edges.push_back(e);
    } else {
      std::string v;
      std::getline(ls, v);
      out.counts[key] = std::stoul(v);
    }
  }
  return out;
}

}  // namespace fixtures
