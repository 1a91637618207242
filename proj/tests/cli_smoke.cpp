// End-to-end checks of the command-line driver: exit codes, outputs, manifests, replay.
// Usage: cli_smoke CLI CONFIG_DIR CORPUS_DIR WORK_DIR

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "horokit/io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using horokit::io::Config;
using horokit::io::read_file;
using horokit::io::write_atomic;

namespace {

std::string cli, configs, corpus;
fs::path work;
int failures = 0;

struct Result {
  int code = -1;
  std::string out, err;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

// Runs the driver with the given arguments; env is prefixed verbatim.
Result run(const std::string& args, const std::string& env = "") {
  static int n = 0;
  const fs::path o = work / ("stdout_" + std::to_string(n)), e = work / ("stderr_" + std::to_string(n));
  ++n;
  const std::string cmd = env + " " + quote(cli) + " " + args + " > " + quote(o) + " 2> " + quote(e);
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(o);
  r.err = read_file(e);
  return r;
}

fs::path cfg_file(const std::string& name, const std::string& text) {
  const fs::path p = work / "cfg" / name;
  write_atomic(p, text);
  return p;
}

std::string summary_value(const fs::path& dir, const std::string& key) {
  auto c = Config::parse(read_file(dir / "summary.txt"));
  return c.has(key) ? c.raw(key) : "";
}

std::size_t lines(const fs::path& p) {
  const std::string s = read_file(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

void check(const std::string& name, const std::function<std::string()>& body) {
  std::string why;
  try {
    why = body();
  } catch (const std::exception& e) {
    why = std::string("exception: ") + e.what();
  }
  std::printf("%s %s%s%s\n", why.empty() ? "PASS" : "FAIL", name.c_str(), why.empty() ? "" : ": ", why.c_str());
  std::fflush(stdout);
  failures += !why.empty();
}

std::string expect_code(const Result& r, int want) {
  if (r.code == want) return "";
  return "exit " + std::to_string(r.code) + ", expected " + std::to_string(want) + "; stderr: " + r.err;
}

std::string cfg(const std::string& name) { return quote(configs + "/" + name); }
std::string out(const std::string& name) { return quote((work / name).string()); }

}  // namespace

int main(int argc, char** argv) {
  if (argc != 5) {
    std::cerr << "usage: cli_smoke CLI CONFIG_DIR CORPUS_DIR WORK_DIR\n";
    return 64;
  }
  cli = argv[1];
  configs = argv[2];
  corpus = argv[3];
  work = argv[4];
  fs::remove_all(work);
  fs::create_directories(work);

  check("phi free two-body writes path and manifest", [] {
    const auto r = run("phi --config " + cfg("phi_two_body.cfg") + " --out " + out("phi"));
    if (auto e = expect_code(r, 0); !e.empty()) return e;
    const std::string path = read_file(work / "phi" / "path.csv");
    if (path.rfind("t,x_1_1,x_1_2,x_2_1,x_2_2\n", 0) != 0) return std::string("bad path header");
    const auto m = nlohmann::json::parse(read_file(work / "phi" / "manifest.json"));
    if (m.at("outputs").size() != 2 || m.at("command") != "phi") return std::string("manifest incomplete");
    return std::string();
  });

  check("phi matches a frozen corpus case to 1e-4", [] {
    auto c = Config::parse(read_file(fs::path(corpus) / "kepler_00.case"));
    const std::string text = "mode = free\nh = " + c.raw("input.h") + "\nx = " + c.raw("input.x") +
                             "\ny = " + c.raw("input.y") + "\n[system]\nmasses = " + c.raw("system.masses") +
                             "\ndim = " + c.raw("system.dim") + "\n";
    const auto r = run("phi --config " + quote(cfg_file("corpus.cfg", text)) + " --out " + out("corpus"));
    if (auto e = expect_code(r, 0); !e.empty()) return e;
    const double want = c.number("oracle.value");
    const double got = std::stod(summary_value(work / "corpus", "value"));
    const double rel = std::abs(got - want) / std::abs(want);
    return rel <= 1e-4 ? std::string() : "relative error " + std::to_string(rel);
  });

  check("phi x = y gives 0 and an empty path", [] {
    const auto p = cfg_file("same.cfg", "h = 1\nx = [-0.5, 0, 0.5, 0]\ny = [-0.5, 0, 0.5, 0]\n[system]\nmasses = [1, 1]\n");
    const auto r = run("phi --config " + quote(p) + " --out " + out("same"));
    if (auto e = expect_code(r, 0); !e.empty()) return e;
    if (std::stod(summary_value(work / "same", "value")) != 0.0) return std::string("nonzero value");
    if (lines(work / "same" / "path.csv") != 1) return std::string("path not empty");
    return summary_value(work / "same", "note").empty() ? std::string("no note") : std::string();
  });

  check("phi with h < 0 in free mode is a config error naming h", [] {
    const auto p = cfg_file("neg.cfg", "h = -1\nx = [-0.5, 0, 0.5, 0]\ny = [-1, 0, 1, 0]\n[system]\nmasses = [1, 1]\n");
    const auto r = run("phi --config " + quote(p) + " --out " + out("neg"));
    if (auto e = expect_code(r, 64); !e.empty()) return e;
    return r.err.find("'h'") != std::string::npos ? std::string() : "message does not name h: " + r.err;
  });

  check("unknown config key is rejected by name", [] {
    const auto p = cfg_file("typo.cfg",
                            "h = 1\nx = [-0.5, 0, 0.5, 0]\ny = [-1, 0, 1, 0]\nmdoe = free\n[system]\nmasses = [1, 1]\n");
    const auto r = run("phi --config " + quote(p) + " --out " + out("typo"));
    if (auto e = expect_code(r, 64); !e.empty()) return e;
    return r.err.find("mdoe") != std::string::npos ? std::string() : "message does not name the key: " + r.err;
  });

  check("malformed value names its key", [] {
    const auto p = cfg_file("bad.cfg", "h = one\nx = [-0.5, 0, 0.5, 0]\ny = [-1, 0, 1, 0]\n[system]\nmasses = [1, 1]\n");
    const auto r = run("phi --config " + quote(p) + " --out " + out("bad"));
    if (auto e = expect_code(r, 64); !e.empty()) return e;
    return r.err.find("'h'") != std::string::npos ? std::string() : "message does not name h: " + r.err;
  });

  check("missing --config is a usage error", [] { return expect_code(run("phi --out " + out("none")), 64); });

  check("default output directory comes from the environment", [] {
    const fs::path dir = work / "from_env";
    const auto r = run("phi --config " + cfg("phi_two_body.cfg"), "HOROKIT_OUT_DIR=" + quote(dir.string()));
    if (auto e = expect_code(r, 0); !e.empty()) return e;
    return fs::exists(dir / "manifest.json") ? std::string() : std::string("no manifest in env directory");
  });

  check("synthesize equilateral: homothetic escape, normalization noted", [] {
    const auto r = run("synthesize --config " + cfg("synthesize_equilateral.cfg") + " --out " + out("equi"));
    if (auto e = expect_code(r, 0); !e.empty()) return e;
    const double drift = std::stod(summary_value(work / "equi", "shape_drift"));
    if (!(drift < 1e-4)) return "shape drift " + std::to_string(drift);
    const auto m = nlohmann::json::parse(read_file(work / "equi" / "manifest.json"));
    bool noted = false;
    for (const auto& n : m.at("notes")) noted = noted || n.get<std::string>().find("normalized") != std::string::npos;
    if (!noted) return std::string("normalization not noted in manifest");
    return read_file(work / "equi" / "trajectory.csv").rfind("t,x_1_1", 0) == 0 ? std::string()
                                                                                 : std::string("bad trajectory header");
  });

  check("synthesize with a colliding direction is a config error", [] {
    const auto p = cfg_file("collide.cfg",
                            "h = 1\nx0 = [-0.5, 0, 0.5, 0]\na = [1, 1, 1, 1]\n[system]\nmasses = [1, 1]\n");
    return expect_code(run("synthesize --config " + quote(p) + " --out " + out("collide")), 64);
  });

  check("synthesize non-convergence exits 3 with diagnostics", [] {
    const auto p = cfg_file("noconv.cfg",
                            "h = 1\nx0 = [-0.5, 0, 0.5, 0]\na = [-0.5, -0.8660254037844386, 0.5, 0.8660254037844386]\n"
                            "lambdas = [2, 4, 8]\nvel_tol = 1e-9\n[system]\nmasses = [1, 1]\n");
    const auto r = run("synthesize --config " + quote(p) + " --out " + out("noconv"));
    if (auto e = expect_code(r, 3); !e.empty()) return e;
    if (!fs::exists(work / "noconv" / "diagnostics.txt")) return std::string("no diagnostics file");
    return fs::exists(work / "noconv" / "manifest.json") ? std::string() : std::string("no manifest");
  });

  check("classify bounded orbit is not expansive", [] {
    const auto p = cfg_file("ellipse.cfg", "x = [-0.5, 0, 0.5, 0]\nv = [0, -0.6, 0, 0.6]\n[system]\nmasses = [1, 1]\n");
    const auto r = run("classify --config " + quote(p) + " --out " + out("ellipse"));
    if (auto e = expect_code(r, 0); !e.empty()) return e;
    const auto label = summary_value(work / "ellipse", "classification");
    return label == "not_expansive" ? std::string() : "label " + label;
  });

  check("classify hyperbolic scatter", [] {
    const auto r = run("classify --config " + cfg("classify_kepler.cfg") + " --out " + out("hyp"));
    if (auto e = expect_code(r, 0); !e.empty()) return e;
    const auto label = summary_value(work / "hyp", "classification");
    return label == "hyperbolic" ? std::string() : "label " + label;
  });

  check("scatter Kepler input satisfies both identities", [] {
    const auto r = run("scatter --config " + cfg("scatter_kepler.cfg") + " --out " + out("scatter"));
    if (auto e = expect_code(r, 0); !e.empty()) return e;
    const fs::path d = work / "scatter";
    if (summary_value(d, "bi_hyperbolic") != "true") return std::string("not bi-hyperbolic");
    const double ni = std::stod(summary_value(d, "norm_identity")), ci = std::stod(summary_value(d, "com_identity"));
    return ni <= 1e-4 && ci <= 1e-6 ? std::string()
                                    : "identities " + std::to_string(ni) + ", " + std::to_string(ci);
  });

  check("empty sampler gives an empty dataset", [] {
    const auto p = cfg_file("empty.cfg", "h = 1\n[system]\nmasses = [1, 1, 1]\n[sampler]\ncount = 0\n");
    const auto r = run("scatter --config " + quote(p) + " --out " + out("empty"));
    if (auto e = expect_code(r, 0); !e.empty()) return e;
    if (lines(work / "empty" / "scan.csv") != 1) return std::string("dataset not empty");
    return fs::exists(work / "empty" / "scan_schema.txt") ? std::string() : std::string("no schema");
  });

  check("scan with two workers replays bit for bit", [] {
    const auto p = cfg_file("scan.cfg",
                            "h = 1\nt_max = 1000\n[system]\nmasses = [1, 1, 1]\n[sampler]\ncount = 4\nscale = 3\n");
    const auto r = run("scatter --config " + quote(p) + " --out " + out("scan") + " --seed 7 --workers 2");
    if (auto e = expect_code(r, 0); !e.empty()) return e;
    if (lines(work / "scan" / "scan.csv") != 5) return std::string("expected 4 rows");
    const auto m = nlohmann::json::parse(read_file(work / "scan" / "manifest.json"));
    if (m.at("seeds") != nlohmann::json::array({7})) return std::string("seed not recorded");
    const auto rep = run("replay --manifest " + out("scan/manifest.json") + " --out " + out("scan_replay"));
    if (auto e = expect_code(rep, 0); !e.empty()) return e;
    return read_file(work / "scan" / "scan.csv") == read_file(work / "scan_replay" / "scan.csv")
               ? std::string()
               : std::string("replayed dataset differs");
  });

  check("busemann table has one row per point and lambda", [] {
    const auto r = run("busemann --config " + cfg("busemann_two_body.cfg") + " --out " + out("busemann") +
                       " --workers 2");
    if (auto e = expect_code(r, 0); !e.empty()) return e;
    const std::string t = read_file(work / "busemann" / "busemann.csv");
    if (t.rfind("point_id,lambda,u,cauchy_delta\n", 0) != 0) return std::string("bad header");
    return lines(work / "busemann" / "busemann.csv") == 1 + 4 * 4 ? std::string() : std::string("wrong row count");
  });

  check("replay reproduces digests and detects tampering", [] {
    const auto rep = run("replay --manifest " + out("phi/manifest.json") + " --out " + out("phi_replay"));
    if (auto e = expect_code(rep, 0); !e.empty()) return e;
    if (rep.out.find("reproduced") == std::string::npos) return std::string("no reproduction report");
    auto m = nlohmann::json::parse(read_file(work / "phi" / "manifest.json"));
    m["outputs"][0]["sha256"] = std::string(64, '0');
    write_atomic(work / "tampered" / "manifest.json", m.dump(2));
    const auto bad = run("replay --manifest " + out("tampered/manifest.json") + " --out " + out("tampered_replay"));
    return expect_code(bad, 2);
  });

  std::printf("%d failure(s)\n", failures);
  return failures ? 1 : 0;
}
