#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "expnet/errors.hpp"
#include "expnet/rng.hpp"

namespace expnet {

using Weight = long long;
using NodePair = std::pair<int, int>;

// Distinct pairs are indexed densely: i<j for undirected graphs, ordered
// (i,j) with i!=j for directed ones. All per-pair storage keys off this.
inline std::size_t pair_count(int n, bool directed) {
  const std::size_t un = static_cast<std::size_t>(n);
  return directed ? un * (un - 1) : un * (un - 1) / 2;
}

inline std::size_t pair_index(int i, int j, int n, bool directed) {
  if (directed) {
    return static_cast<std::size_t>(i) * (n - 1) + static_cast<std::size_t>(j > i ? j - 1 : j);
  }
  if (i > j) std::swap(i, j);
  const std::size_t ui = static_cast<std::size_t>(i);
  return ui * n - ui * (ui + 1) / 2 + static_cast<std::size_t>(j - i - 1);
}

inline NodePair canonical_pair(int i, int j, bool directed) {
  return (directed || i < j) ? NodePair{i, j} : NodePair{j, i};
}

// Calls fn(i, j) once per distinct pair, in pair_index order.
template <typename Fn>
void for_each_pair(int n, bool directed, Fn&& fn) {
  if (directed) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) fn(i, j);
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) fn(i, j);
  }
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline bool parse_ll(const std::string& s, long long& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stoll(s, &pos);
  } catch (...) {
    return false;
  }
  return pos == s.size();
}

}  // namespace detail

// Immutable weighted graph over dense node indices. Undirected graphs store
// each pair once with i<j; the accessor is symmetric.
class ObservedGraph {
 public:
  ObservedGraph(int n_nodes, bool directed, std::map<NodePair, Weight> edges,
                std::vector<std::string> labels = {})
      : n_(n_nodes), directed_(directed), labels_(std::move(labels)) {
    if (n_ <= 0) throw validation_error("graph needs at least one node");
    if (!labels_.empty() && static_cast<int>(labels_.size()) != n_)
      throw validation_error("label count does not match node count");
    for (auto& [pair, w] : edges) {
      auto [i, j] = pair;
      if (i < 0 || j < 0 || i >= n_ || j >= n_)
        throw validation_error("edge endpoint out of range");
      if (i == j) throw validation_error("self-loops are not supported");
      if (w < 0) throw validation_error("negative edge weight");
      if (w == 0) continue;
      auto key = canonical_pair(i, j, directed_);
      edges_[key] += w;
    }
    build_adjacency();
  }

  int n_nodes() const { return n_; }
  bool directed() const { return directed_; }
  std::size_t n_edges() const { return edges_.size(); }

  Weight weight(int i, int j) const {
    if (i == j) return 0;
    auto it = edges_.find(canonical_pair(i, j, directed_));
    return it == edges_.end() ? 0 : it->second;
  }

  // Canonical (i<j for undirected) pair -> positive weight, sorted.
  const std::map<NodePair, Weight>& edges() const { return edges_; }

  // Undirected: all neighbors. Directed: out-neighbors.
  const std::vector<std::pair<int, Weight>>& neighbors(int i) const { return adj_[i]; }
  const std::vector<std::pair<int, Weight>>& in_neighbors(int i) const {
    return directed_ ? in_adj_[i] : adj_[i];
  }

  bool has_labels() const { return !labels_.empty(); }
  const std::vector<std::string>& labels() const { return labels_; }
  std::string label(int i) const {
    return has_labels() ? labels_[i] : std::to_string(i);
  }
  std::optional<int> find_label(const std::string& name) const {
    for (int i = 0; i < n_; ++i)
      if (labels_[i] == name) return i;
    return std::nullopt;
  }

  bool operator==(const ObservedGraph& other) const {
    return n_ == other.n_ && directed_ == other.directed_ && edges_ == other.edges_;
  }

 private:
  void build_adjacency() {
    adj_.assign(n_, {});
    if (directed_) in_adj_.assign(n_, {});
    for (const auto& [pair, w] : edges_) {
      auto [i, j] = pair;
      adj_[i].emplace_back(j, w);
      if (directed_) {
        in_adj_[j].emplace_back(i, w);
      } else {
        adj_[j].emplace_back(i, w);
      }
    }
    for (auto& nb : adj_) std::sort(nb.begin(), nb.end());
    for (auto& nb : in_adj_) std::sort(nb.begin(), nb.end());
  }

  int n_;
  bool directed_;
  std::map<NodePair, Weight> edges_;
  std::vector<std::string> labels_;
  std::vector<std::vector<std::pair<int, Weight>>> adj_;
  std::vector<std::vector<std::pair<int, Weight>>> in_adj_;
};

// Mean degree: nonzero pairs per node (2x for undirected endpoints).
inline double mean_degree(const ObservedGraph& g) {
  const double pairs = static_cast<double>(g.n_edges());
  return (g.directed() ? pairs : 2.0 * pairs) / g.n_nodes();
}

// ---------------------------------------------------------------------------
// Edge-list text format: `# comment` lines, whitespace-separated
// `src dst [weight]` fields, missing weight = 1, duplicates sum.
// The writer emits `# nodes: N` / `# label: <s>` directives so isolated nodes
// and labels survive a round trip; files without them parse per the plain
// format (labels mapped to dense indices in first-appearance order).

inline ObservedGraph load_edge_list(std::istream& in, bool directed) {
  std::vector<std::string> labels;
  std::unordered_map<std::string, int> index_of;
  auto intern = [&](const std::string& name) {
    auto it = index_of.find(name);
    if (it != index_of.end()) return it->second;
    const int idx = static_cast<int>(labels.size());
    labels.push_back(name);
    index_of.emplace(name, idx);
    return idx;
  };

  std::map<NodePair, Weight> edges;
  std::string line;
  long line_no = 0;
  bool synthetic_labels = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      std::string body = detail::trim(t.substr(1));
      if (body.rfind("nodes:", 0) == 0) {
        long long n = 0;
        if (!detail::parse_ll(detail::trim(body.substr(6)), n) || n <= 0)
          throw parse_error("bad '# nodes:' directive", line_no);
        for (long long i = static_cast<long long>(labels.size()); i < n; ++i)
          intern(std::to_string(i));
        synthetic_labels = true;
      } else if (body.rfind("label:", 0) == 0) {
        std::string name = detail::trim(body.substr(6));
        if (name.empty()) throw parse_error("empty '# label:' directive", line_no);
        if (index_of.count(name)) throw parse_error("duplicate label directive", line_no);
        intern(name);
      }
      continue;
    }
    auto fields = detail::split_ws(t);
    if (fields.size() < 2 || fields.size() > 3)
      throw parse_error("expected 'src dst [weight]'", line_no);
    Weight w = 1;
    if (fields.size() == 3) {
      if (!detail::parse_ll(fields[2], w))
        throw parse_error("non-integer weight '" + fields[2] + "'", line_no);
      if (w < 0) throw validation_error("negative weight at line " + std::to_string(line_no));
    }
    const int a = intern(fields[0]);
    const int b = intern(fields[1]);
    if (a == b) throw validation_error("self-loop at line " + std::to_string(line_no));
    edges[canonical_pair(a, b, directed)] += w;
  }
  if (labels.empty()) throw validation_error("edge list contains no nodes");
  const int n = static_cast<int>(labels.size());
  if (synthetic_labels) labels.clear();  // index strings carry no information
  return ObservedGraph(n, directed, std::move(edges), std::move(labels));
}

inline void write_edge_list(const ObservedGraph& g, std::ostream& out) {
  if (g.has_labels()) {
    for (const auto& l : g.labels()) out << "# label: " << l << "\n";
  } else {
    out << "# nodes: " << g.n_nodes() << "\n";
  }
  for (const auto& [pair, w] : g.edges())
    out << g.label(pair.first) << "\t" << g.label(pair.second) << "\t" << w << "\n";
}

// ---------------------------------------------------------------------------
// GML subset: `node [ id ... ]` and `edge [ source ... target ... ]` blocks.
// Node `label` and `value` attributes are kept (value = e.g. conference id);
// everything else is skipped. Result is undirected with unit edge weights.

struct GmlGraph {
  ObservedGraph graph;
  std::vector<long long> node_values;  // empty when no node carried `value`
};

namespace detail {

struct GmlTokenizer {
  explicit GmlTokenizer(std::istream& in) : in_(in) {}

  // Returns false at EOF. Quoted strings keep inner whitespace.
  bool next(std::string& tok) {
    int c;
    while ((c = in_.get()) != EOF) {
      if (c == '\n') ++line_;
      if (!std::isspace(c)) break;
    }
    if (c == EOF) return false;
    tok.clear();
    if (c == '[' || c == ']') {
      tok.push_back(static_cast<char>(c));
      return true;
    }
    if (c == '"') {
      while ((c = in_.get()) != EOF && c != '"') {
        if (c == '\n') ++line_;
        tok.push_back(static_cast<char>(c));
      }
      if (c == EOF) throw parse_error("unterminated string", line_);
      return true;
    }
    tok.push_back(static_cast<char>(c));
    while ((c = in_.get()) != EOF && !std::isspace(c) && c != '[' && c != ']') {
      tok.push_back(static_cast<char>(c));
    }
    if (c == '[' || c == ']') in_.unget();
    if (c == '\n') ++line_;
    return true;
  }

  long line() const { return line_; }

 private:
  std::istream& in_;
  long line_ = 1;
};

}  // namespace detail

inline GmlGraph load_gml(std::istream& in) {
  detail::GmlTokenizer tk(in);
  std::unordered_map<long long, int> index_of_id;
  std::vector<std::string> labels;
  std::vector<long long> values;
  bool any_value = false;
  std::map<NodePair, Weight> edges;
  long depth = 0;

  std::string tok;
  auto expect = [&](const char* what) {
    if (!tk.next(tok)) throw parse_error(std::string("unexpected end of input, expected ") + what, tk.line());
  };

  auto skip_value_or_block = [&]() {
    expect("a value");
    if (tok != "[") return;
    long nested = 1;
    while (nested > 0) {
      expect("']'");
      if (tok == "[") ++nested;
      if (tok == "]") --nested;
    }
  };

  while (tk.next(tok)) {
    if (tok == "[") {
      ++depth;
    } else if (tok == "]") {
      if (--depth < 0) throw parse_error("unbalanced brackets", tk.line());
    } else if (tok == "node") {
      expect("'['");
      if (tok != "[") throw parse_error("expected '[' after node", tk.line());
      long long id = 0;
      bool has_id = false;
      std::string label;
      long long value = 0;
      bool has_value = false;
      for (;;) {
        expect("']'");
        if (tok == "]") break;
        if (tok == "[") throw parse_error("unexpected '[' in node block", tk.line());
        const std::string key = tok;
        if (key == "id") {
          expect("node id");
          if (!detail::parse_ll(tok, id)) throw parse_error("non-integer node id", tk.line());
          has_id = true;
        } else if (key == "label") {
          expect("node label");
          label = tok;
        } else if (key == "value") {
          expect("node value");
          if (!detail::parse_ll(tok, value)) throw parse_error("non-integer node value", tk.line());
          has_value = true;
        } else {
          skip_value_or_block();
        }
      }
      if (!has_id) throw parse_error("node block without id", tk.line());
      if (index_of_id.count(id)) throw validation_error("duplicate node id " + std::to_string(id));
      const int idx = static_cast<int>(labels.size());
      index_of_id.emplace(id, idx);
      labels.push_back(label.empty() ? std::to_string(id) : label);
      values.push_back(has_value ? value : -1);
      any_value = any_value || has_value;
    } else if (tok == "edge") {
      expect("'['");
      if (tok != "[") throw parse_error("expected '[' after edge", tk.line());
      long long source = 0, target = 0;
      bool has_source = false, has_target = false;
      for (;;) {
        expect("']'");
        if (tok == "]") break;
        if (tok == "[") throw parse_error("unexpected '[' in edge block", tk.line());
        const std::string key = tok;
        if (key == "source") {
          expect("edge source");
          if (!detail::parse_ll(tok, source)) throw parse_error("non-integer edge source", tk.line());
          has_source = true;
        } else if (key == "target") {
          expect("edge target");
          if (!detail::parse_ll(tok, target)) throw parse_error("non-integer edge target", tk.line());
          has_target = true;
        } else {
          skip_value_or_block();
        }
      }
      if (!has_source || !has_target) throw parse_error("edge block missing source/target", tk.line());
      auto si = index_of_id.find(source);
      auto ti = index_of_id.find(target);
      if (si == index_of_id.end() || ti == index_of_id.end())
        throw validation_error("edge references unknown node id");
      if (si->second == ti->second) throw validation_error("self-loop in GML edge");
      edges[canonical_pair(si->second, ti->second, false)] += 1;
    } else {
      // container key (e.g. `graph [`) descends; scalar pairs are skipped
      expect("a value");
      if (tok == "[") {
        ++depth;
      } else if (tok == "]") {
        if (--depth < 0) throw parse_error("unbalanced brackets", tk.line());
      }
    }
  }
  if (depth != 0) throw parse_error("unbalanced brackets", tk.line());
  if (labels.empty()) throw validation_error("GML input contains no nodes");
  if (!any_value) values.clear();
  return GmlGraph{ObservedGraph(static_cast<int>(labels.size()), false, std::move(edges), std::move(labels)),
                  std::move(values)};
}

inline ObservedGraph load_gml_subset(std::istream& in) { return load_gml(in).graph; }

// ---------------------------------------------------------------------------
// Binary exposure mask over all distinct pairs.

class ExposureMask {
 public:
  ExposureMask(int n_nodes, bool directed, bool fill = false)
      : n_(n_nodes), directed_(directed), bits_(pair_count(n_nodes, directed), fill ? 1 : 0) {}

  int n_nodes() const { return n_; }
  bool directed() const { return directed_; }

  int at(int i, int j) const { return bits_[pair_index(i, j, n_, directed_)]; }
  void set(int i, int j, int value) {
    if (value != 0 && value != 1) throw validation_error("mask entries must be 0 or 1");
    bits_[pair_index(i, j, n_, directed_)] = static_cast<std::uint8_t>(value);
  }

  std::size_t ones() const {
    std::size_t c = 0;
    for (auto b : bits_) c += b;
    return c;
  }
  double density() const {
    return bits_.empty() ? 0.0 : static_cast<double>(ones()) / bits_.size();
  }

 private:
  int n_;
  bool directed_;
  std::vector<std::uint8_t> bits_;
};

inline void write_exposure_mask(const ExposureMask& m, std::ostream& out) {
  out << "# nodes: " << m.n_nodes() << "\n";
  out << "# directed: " << (m.directed() ? 1 : 0) << "\n";
  for_each_pair(m.n_nodes(), m.directed(), [&](int i, int j) {
    if (m.at(i, j)) out << i << "\t" << j << "\n";
  });
}

inline ExposureMask load_exposure_mask(std::istream& in) {
  std::string line;
  long line_no = 0;
  int n = -1, directed = 0;
  std::vector<NodePair> ones;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      std::string body = detail::trim(t.substr(1));
      long long x = 0;
      if (body.rfind("nodes:", 0) == 0 && detail::parse_ll(detail::trim(body.substr(6)), x)) n = static_cast<int>(x);
      if (body.rfind("directed:", 0) == 0 && detail::parse_ll(detail::trim(body.substr(9)), x)) directed = static_cast<int>(x);
      continue;
    }
    auto fields = detail::split_ws(t);
    long long a = 0, b = 0;
    if (fields.size() != 2 || !detail::parse_ll(fields[0], a) || !detail::parse_ll(fields[1], b))
      throw parse_error("expected 'i j'", line_no);
    ones.emplace_back(static_cast<int>(a), static_cast<int>(b));
  }
  if (n <= 0) throw parse_error("mask file lacks a '# nodes:' directive");
  ExposureMask m(n, directed != 0, false);
  for (auto [i, j] : ones) m.set(i, j, 1);
  return m;
}

// ---------------------------------------------------------------------------
// Set of held-out pairs (cross-validation). Membership is O(1).

class PairMask {
 public:
  PairMask(int n_nodes, bool directed)
      : n_(n_nodes), directed_(directed), held_(pair_count(n_nodes, directed), 0) {}

  static PairMask from_pairs(int n_nodes, bool directed, const std::vector<NodePair>& pairs) {
    PairMask m(n_nodes, directed);
    for (auto [i, j] : pairs) m.add(i, j);
    return m;
  }

  int n_nodes() const { return n_; }
  bool directed() const { return directed_; }
  std::size_t size() const { return count_; }

  void add(int i, int j) {
    if (i < 0 || j < 0 || i >= n_ || j >= n_ || i == j)
      throw validation_error("pair out of range");
    auto& slot = held_[pair_index(i, j, n_, directed_)];
    if (!slot) {
      slot = 1;
      ++count_;
    }
  }

  bool contains(int i, int j) const {
    return i != j && held_[pair_index(i, j, n_, directed_)] != 0;
  }

  std::vector<NodePair> pairs() const {
    std::vector<NodePair> out;
    out.reserve(count_);
    for_each_pair(n_, directed_, [&](int i, int j) {
      if (held_[pair_index(i, j, n_, directed_)]) out.emplace_back(i, j);
    });
    return out;
  }

 private:
  int n_;
  bool directed_;
  std::vector<std::uint8_t> held_;
  std::size_t count_ = 0;
};

inline void write_pair_mask(const PairMask& m, std::ostream& out) {
  for (auto [i, j] : m.pairs()) out << i << "\t" << j << "\n";
}

inline PairMask load_pair_mask(std::istream& in, int n_nodes, bool directed) {
  PairMask m(n_nodes, directed);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto fields = detail::split_ws(t);
    long long a = 0, b = 0;
    if (fields.size() != 2 || !detail::parse_ll(fields[0], a) || !detail::parse_ll(fields[1], b))
      throw parse_error("expected 'i j'", line_no);
    m.add(static_cast<int>(a), static_cast<int>(b));
  }
  return m;
}

// Uniform random partition of all distinct pairs into n_folds disjoint masks
// of near-equal size (sizes differ by at most one). Deterministic in seed.
inline std::vector<PairMask> make_cv_folds(const ObservedGraph& g, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw validation_error("need at least 2 folds");
  const std::size_t n_pairs = pair_count(g.n_nodes(), g.directed());
  if (static_cast<std::size_t>(n_folds) > n_pairs)
    throw validation_error("more folds than node pairs");

  std::vector<NodePair> all;
  all.reserve(n_pairs);
  for_each_pair(g.n_nodes(), g.directed(), [&](int i, int j) { all.emplace_back(i, j); });
  Rng rng(derive_seed(seed, "cv-folds"));
  rng.shuffle(std::span<NodePair>(all));

  std::vector<PairMask> folds;
  folds.reserve(n_folds);
  const std::size_t base = n_pairs / n_folds;
  const std::size_t rem = n_pairs % n_folds;
  std::size_t cursor = 0;
  for (int f = 0; f < n_folds; ++f) {
    const std::size_t len = base + (static_cast<std::size_t>(f) < rem ? 1 : 0);
    PairMask m(g.n_nodes(), g.directed());
    for (std::size_t t = 0; t < len; ++t) {
      auto [i, j] = all[cursor++];
      m.add(i, j);
    }
    folds.push_back(std::move(m));
  }
  return folds;
}

}  // namespace expnet
