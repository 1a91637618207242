#pragma once

// Text formats: flat key = value configs, CSV for trajectories, paths, arc
// parametrizations and scan datasets, key = value summary records, and
// atomic file writes.

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "horokit/asymptotics.hpp"
#include "horokit/jm_metric.hpp"

namespace horokit::io {

/// Shortest round-trip decimal form (17 significant digits at most).
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt(const Vec& v) {
  std::string s = "[";
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (k) s += ", ";
    s += fmt(v[k]);
  }
  return s + "]";
}

inline std::string fmt(const std::vector<double>& v) { return fmt(Vec(Eigen::Map<const Vec>(v.data(), v.size()))); }

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  int dots = 0;
  char prev = '.';
  for (char c : key) {
    if (c == '.') {
      if (prev == '.') return false;
      ++dots;
    } else if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) {
      return false;
    }
    prev = c;
  }
  return prev != '.' && dots <= 1;
}

inline bool parse_double(const std::string& s, double& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(t.c_str(), &end);
  return end == t.c_str() + t.size() && errno != ERANGE;
}

}  // namespace detail

/// Flat configuration: `key = value` lines, `[section]` headers prefixing the
/// following keys, `#` comments, vectors as `[a, b, c]`. Keys have at most two
/// dotted levels. Every read marks the key as used so stray keys can be rejected.
class Config {
  // Top-level keys sort before sectioned ones so dump() can emit them headerless.
  struct KeyOrder {
    bool operator()(const std::string& a, const std::string& b) const {
      const bool sa = a.find('.') != std::string::npos, sb = b.find('.') != std::string::npos;
      return sa != sb ? sb : a < b;
    }
  };

 public:
  using Map = std::map<std::string, std::string, KeyOrder>;

  Config() = default;

  static Config parse(std::string_view text) {
    Config cfg;
    std::string section;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const std::string t = detail::trim(line);
      if (t.empty()) continue;
      const std::string where = "line " + std::to_string(lineno);
      if (t.front() == '[' && t.back() == ']') {
        section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
        if (!detail::valid_key(section) || section.find('.') != std::string::npos)
          throw ConfigError(section, "bad section name at " + where);
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(t, "expected 'key = value' at " + where);
      std::string key = detail::trim(std::string_view(t).substr(0, eq));
      if (!section.empty()) key = section + "." + key;
      if (!detail::valid_key(key)) throw ConfigError(key, "malformed key (at most two dotted levels) at " + where);
      if (cfg.values_.count(key)) throw ConfigError(key, "duplicate key at " + where);
      cfg.values_[key] = detail::trim(std::string_view(t).substr(eq + 1));
    }
    return cfg;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("--config", "cannot open " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(key, "missing");
    used_.insert(key);
    return it->second;
  }

  std::string text(const std::string& key) const { return raw(key); }
  std::string text(const std::string& key, const std::string& def) {
    if (!has(key)) set(key, def);
    return raw(key);
  }

  double number(const std::string& key) const {
    double v = 0.0;
    if (!detail::parse_double(raw(key), v)) throw ConfigError(key, "not a number: '" + raw(key) + "'");
    return v;
  }
  double number(const std::string& key, double def) {
    if (!has(key)) set(key, fmt(def));
    return number(key);
  }

  long integer(const std::string& key) const {
    const std::string& s = raw(key);
    long v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key, "not an integer: '" + s + "'");
    return v;
  }
  long integer(const std::string& key, long def) {
    if (!has(key)) set(key, std::to_string(def));
    return integer(key);
  }

  bool flag(const std::string& key, bool def) {
    if (!has(key)) set(key, def ? "true" : "false");
    const std::string& s = raw(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(key, "not a boolean: '" + s + "'");
  }

  std::vector<double> list(const std::string& key) const {
    const std::string s = detail::trim(raw(key));
    if (s.size() < 2 || s.front() != '[' || s.back() != ']') throw ConfigError(key, "expected a bracketed list");
    std::vector<double> out;
    const std::string body = detail::trim(std::string_view(s).substr(1, s.size() - 2));
    if (body.empty()) return out;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      double v = 0.0;
      if (!detail::parse_double(item, v)) throw ConfigError(key, "bad list entry '" + detail::trim(item) + "'");
      out.push_back(v);
    }
    if (body.back() == ',') throw ConfigError(key, "trailing comma");
    return out;
  }
  std::vector<double> list(const std::string& key, const std::vector<double>& def) {
    if (!has(key)) set(key, fmt(def));
    return list(key);
  }

  Vec vector(const std::string& key) const {
    const auto v = list(key);
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  void set(const std::string& key, const std::string& value) {
    if (!detail::valid_key(key)) throw ConfigError(key, "malformed key");
    values_[key] = value;
  }

  const Map& entries() const { return values_; }

  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  void reject_unused() const {
    const auto u = unused();
    if (!u.empty()) throw ConfigError(u.front(), "unknown key");
  }

  /// Canonical text form, grouped by section; parse(dump()) == *this.
  std::string dump() const {
    std::string out;
    std::string section = "\x01";
    for (const auto& [k, v] : values_) {
      const auto dot = k.find('.');
      const std::string sec = dot == std::string::npos ? "" : k.substr(0, dot);
      if (sec != section) {
        if (!sec.empty()) out += (out.empty() ? "[" : "\n[") + sec + "]\n";
        section = sec;
      }
      out += (dot == std::string::npos ? k : k.substr(dot + 1)) + " = " + v + "\n";
    }
    return out;
  }

 private:
  Map values_;
  mutable std::set<std::string> used_;
};

/// `system.masses`, `system.dim` (default 2), `system.collision_tol` (default 1e-9).
inline MassSystem mass_system(Config& cfg) {
  const auto m = cfg.list("system.masses");
  const long d = cfg.integer("system.dim", 2);
  const double tol = cfg.number("system.collision_tol", 1e-9);
  try {
    return MassSystem(m, static_cast<int>(d), tol);
  } catch (const DomainError& e) {
    throw ConfigError("system", e.what());
  }
}

inline Vec phase_vector(const Config& cfg, const MassSystem& sys, const std::string& key) {
  Vec v = cfg.vector(key);
  if (v.size() != sys.size())
    throw ConfigError(key, "expected " + std::to_string(sys.size()) + " entries (N * d), got " + std::to_string(v.size()));
  if (!v.allFinite()) throw ConfigError(key, "non-finite entry");
  return v;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string coordinate_header(const MassSystem& sys, char prefix) {
  std::string s;
  for (int i = 1; i <= sys.n_bodies(); ++i)
    for (int k = 1; k <= sys.dim(); ++k) s += std::string(",") + prefix + "_" + std::to_string(i) + "_" + std::to_string(k);
  return s;
}

inline void append_row(std::string& out, const Vec& v) {
  for (Eigen::Index k = 0; k < v.size(); ++k) out += "," + fmt(v[k]);
}

/// Header `t,x_1_1..x_N_d,v_1_1..v_N_d`, one sample per row.
inline std::string trajectory_csv(const MassSystem& sys, const Trajectory& traj) {
  std::string out = "t" + coordinate_header(sys, 'x') + coordinate_header(sys, 'v') + "\n";
  for (std::size_t k = 0; k < traj.size(); ++k) {
    out += fmt(traj.times()[k]);
    append_row(out, traj.position(k));
    append_row(out, traj.velocity(k));
    out += "\n";
  }
  return out;
}

/// Same schema without the velocity columns.
inline std::string path_csv(const MassSystem& sys, const Path& path) {
  std::string out = "t" + coordinate_header(sys, 'x') + "\n";
  for (std::size_t k = 0; k < path.times.size(); ++k) {
    out += fmt(path.times[k]);
    append_row(out, path.nodes.col(static_cast<Eigen::Index>(k)));
    out += "\n";
  }
  return out;
}

inline std::string arcparam_csv(const ArcParam& arc) {
  std::string out = "t,s\n";
  for (std::size_t k = 0; k < arc.t_samples().size(); ++k)
    out += fmt(arc.t_samples()[k]) + "," + fmt(arc.s_samples()[k]) + "\n";
  return out;
}

inline std::vector<std::vector<double>> read_numeric_csv(std::istream& in, std::vector<std::string>* header) {
  std::string line;
  if (!std::getline(in, line)) throw DomainError("empty CSV");
  if (header) {
    header->clear();
    std::stringstream hs(line);
    for (std::string c; std::getline(hs, c, ',');) header->push_back(detail::trim(c));
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    std::vector<double> r;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) {
      double v = 0.0;
      if (!detail::parse_double(c, v)) throw DomainError("bad CSV field '" + c + "'");
      r.push_back(v);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Inverse of trajectory_csv. Accelerations are recomputed from positions and
/// the reference energy is that of the first sample.
inline Trajectory read_trajectory_csv(const MassSystem& sys, std::istream& in) {
  std::vector<std::string> header;
  const auto rows = read_numeric_csv(in, &header);
  const Eigen::Index n = sys.size();
  if (static_cast<Eigen::Index>(header.size()) != 1 + 2 * n) throw DimensionError("trajectory CSV has the wrong column count");
  Trajectory traj;
  double prev = -std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    if (static_cast<Eigen::Index>(r.size()) != 1 + 2 * n) throw DimensionError("ragged trajectory CSV row");
    if (!(r[0] > prev)) throw DomainError("trajectory times must increase");
    prev = r[0];
    const Vec x = Eigen::Map<const Vec>(r.data() + 1, n);
    const Vec v = Eigen::Map<const Vec>(r.data() + 1 + n, n);
    Vec a(n);
    if (!acceleration(sys, x, a)) throw DomainError("trajectory sample at a collision");
    traj.push_back(r[0], x, v, a);
  }
  if (traj.empty()) throw DomainError("trajectory CSV has no samples");
  const double h = energy(sys, traj.position(0), traj.velocity(0));
  const double span = traj.t_end() - traj.t_begin();
  traj.set_meta(h, Termination::ReachedTmax, IntegratorOptions{}.drift_rate * (1.0 + std::abs(h)) * std::max(1.0, span),
                false);
  return traj;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c == '\n' ? ' ' : c;
  }
  return q + "\"";
}

inline std::string vector_or_nan(const Vec& v, Eigen::Index n) {
  std::string s;
  if (v.size() == n) {
    append_row(s, v);
  } else {
    for (Eigen::Index k = 0; k < n; ++k) s += ",nan";
  }
  return s;
}

inline std::string scan_csv(const MassSystem& sys, const std::vector<ScanRow>& rows) {
  std::string out = "id,ok,class_minus,class_plus,norm_minus,norm_plus,norm_identity,com_identity" +
                    coordinate_header(sys, 'x') + coordinate_header(sys, 'v') +
                    coordinate_header(sys, 'm') + coordinate_header(sys, 'p') + ",message\n";
  const Eigen::Index n = sys.size();
  for (const auto& r : rows) {
    const double rel = std::abs(r.norm_minus - r.norm_plus) / std::max(r.norm_minus, r.norm_plus);
    out += std::to_string(r.id) + "," + (r.ok ? "1" : "0") + "," + to_string(r.class_minus) + "," +
           to_string(r.class_plus) + "," + fmt(r.norm_minus) + "," + fmt(r.norm_plus) + "," + fmt(rel) + "," +
           fmt(r.com_identity);
    out += vector_or_nan(r.x, n) + vector_or_nan(r.v, n) + vector_or_nan(r.a_minus, n) + vector_or_nan(r.a_plus, n);
    out += "," + csv_quote(r.message) + "\n";
  }
  return out;
}

/// Sidecar describing the scan columns.
inline std::string scan_schema(const MassSystem& sys) {
  std::ostringstream s;
  s << "# scan dataset columns; vectors are body-major, coordinate-minor\n"
    << "bodies = " << sys.n_bodies() << "\n"
    << "dim = " << sys.dim() << "\n"
    << "masses = " << fmt(sys.masses()) << "\n"
    << "id = sample index, random samples first then explicit ones\n"
    << "ok = 1 when both branches are hyperbolic and both fits succeeded\n"
    << "class_minus = expansion label of the past branch\n"
    << "class_plus = expansion label of the future branch\n"
    << "norm_minus = mass norm of a_minus\n"
    << "norm_plus = mass norm of a_plus\n"
    << "norm_identity = |norm_minus - norm_plus| / max(norm_minus, norm_plus)\n"
    << "com_identity = |G(a_minus) + G(a_plus)| (Euclidean)\n"
    << "x_i_k = perihelion configuration\n"
    << "v_i_k = perihelion velocity\n"
    << "m_i_k = past asymptotic velocity a_minus (nan when the fit failed)\n"
    << "p_i_k = future asymptotic velocity a_plus (nan when the fit failed)\n"
    << "message = notes and failure reason, quoted when needed\n";
  return s.str();
}

// ---------------------------------------------------------------------------
// Summary records

/// Ordered `key = value` lines.
class Record {
 public:
  Record& add(const std::string& key, const std::string& v) {
    lines_.emplace_back(key, v);
    return *this;
  }
  Record& add(const std::string& key, const char* v) { return add(key, std::string(v)); }
  Record& add(const std::string& key, double v) { return add(key, fmt(v)); }
  Record& add(const std::string& key, int v) { return add(key, std::to_string(v)); }
  Record& add(const std::string& key, long v) { return add(key, std::to_string(v)); }
  Record& add(const std::string& key, std::size_t v) { return add(key, std::to_string(v)); }
  Record& add(const std::string& key, bool v) { return add(key, std::string(v ? "true" : "false")); }
  Record& add(const std::string& key, const Vec& v) { return add(key, fmt(v)); }
  Record& add(const std::string& key, const std::vector<double>& v) { return add(key, fmt(v)); }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : lines_) out += k + " = " + v + "\n";
    return out;
  }
  const std::vector<std::pair<std::string, std::string>>& lines() const { return lines_; }

 private:
  std::vector<std::pair<std::string, std::string>> lines_;
};

// ---------------------------------------------------------------------------
// Files

/// Writes to a sibling temporary and renames it over the target.
inline void write_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    if (!f) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace horokit::io
