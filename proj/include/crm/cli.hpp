// Config-driven runner behind the crm command-line tool.
//
// A run reads one JSON document, validates it completely, executes a single
// task and writes CSV files plus manifest.json into the output directory.

#ifndef CRM_CLI_HPP
#define CRM_CLI_HPP

#include "crm/divergence.hpp"
#include "crm/gauge.hpp"
#include "crm/model.hpp"
#include "crm/projection.hpp"
#include "crm/rmatrix.hpp"
#include "crm/transport.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace crm::cli {

using json = nlohmann::json;

inline constexpr int exit_ok = 0;
inline constexpr int exit_config = 2;
inline constexpr int exit_numerical = 3;

// Validation failure; the message always starts with the offending key path.
class ConfigError : public InvalidArgument {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : InvalidArgument(key + ": " + what), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Typed view of one JSON object that remembers which keys were read.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  bool has(const std::string& k) const { return obj_.contains(k); }

  const json& raw(const std::string& k) {
    used_.insert(k);
    if (!obj_.contains(k)) throw ConfigError(key(k), "is required");
    return obj_.at(k);
  }

  Section section(const std::string& k) { return Section(raw(k), key(k)); }

  std::optional<Section> optional_section(const std::string& k) {
    if (!has(k)) return std::nullopt;
    return section(k);
  }

  std::string string(const std::string& k) {
    const json& v = raw(k);
    if (!v.is_string()) throw ConfigError(key(k), "must be a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& k, const std::string& fallback) {
    return has(k) ? string(k) : fallback;
  }

  long long integer(const std::string& k) {
    const json& v = raw(k);
    if (!v.is_number_integer()) throw ConfigError(key(k), "must be an integer");
    return v.get<long long>();
  }
  long long integer(const std::string& k, long long fallback) { return has(k) ? integer(k) : fallback; }

  int positive_int(const std::string& k) {
    const long long v = integer(k);
    if (v < 1 || v > 1'000'000) throw ConfigError(key(k), "must be a positive integer");
    return static_cast<int>(v);
  }
  int positive_int(const std::string& k, int fallback) { return has(k) ? positive_int(k) : fallback; }

  int index(const std::string& k, int fallback, int upper) {
    const long long v = has(k) ? integer(k) : fallback;
    if (v < 0 || v >= upper) {
      throw ConfigError(key(k), "must be in [0, " + std::to_string(upper) + ")");
    }
    return static_cast<int>(v);
  }

  double number(const std::string& k) {
    const json& v = raw(k);
    if (!v.is_number()) throw ConfigError(key(k), "must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(key(k), "must be finite");
    return x;
  }
  double number(const std::string& k, double fallback) { return has(k) ? number(k) : fallback; }
  double positive(const std::string& k, double fallback) {
    const double x = number(k, fallback);
    if (!(x > 0.0)) throw ConfigError(key(k), "must be positive");
    return x;
  }

  bool boolean(const std::string& k, bool fallback) {
    if (!has(k)) return fallback;
    const json& v = raw(k);
    if (!v.is_boolean()) throw ConfigError(key(k), "must be true or false");
    return v.get<bool>();
  }

  std::vector<double> numbers(const std::string& k, std::vector<double> fallback = {}) {
    if (!has(k)) return fallback;
    const json& v = raw(k);
    if (!v.is_array()) throw ConfigError(key(k), "must be an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(key(k) + "[" + std::to_string(i) + "]", "must be a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::vector<int> integers(const std::string& k, std::vector<int> fallback = {}) {
    if (!has(k)) return fallback;
    const json& v = raw(k);
    if (!v.is_array()) throw ConfigError(key(k), "must be an array of integers");
    std::vector<int> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_integer()) {
        throw ConfigError(key(k) + "[" + std::to_string(i) + "]", "must be an integer");
      }
      out.push_back(v[i].get<int>());
    }
    return out;
  }

  // Rejects every key that was never read.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Presets.

struct PresetInfo {
  std::string name;
  std::string description;
  std::string anchor;
};

inline const std::vector<PresetInfo>& presets() {
  static const std::vector<PresetInfo> list{
      {"identity", "k-independent identity coefficients; the plain Wannier basis",
       "constant field, vanishing r-matrix derivative term"},
      {"two-band-generic", "Rice-Mele type chain d = (t1 + t2 cos ka, t2 sin ka, mass)",
       "two-band angle form and its closed-form overlaps"},
      {"graphene-ribbon", "theta = pi/2 loop of radius 0.5 around a graphene Dirac point",
       "graphene phase model, Berry phase -/+ pi"},
      {"qwz-pump", "h = sin k tx + sin 2pi l ty + (mu + cos k + cos 2pi l) tz on the (k, l) torus",
       "adiabatic current by loop integration"},
      {"appendixB", "half-cell sine basis 2/sqrt(a) sin(4 n pi r / a) with a vacuum gap",
       "incompleteness counterexample and its orthogonality"},
  };
  return list;
}

inline std::string list_presets() {
  std::ostringstream os;
  for (const auto& p : presets()) os << p.name << "\t" << p.description << " [" << p.anchor << "]\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Model construction.

// value(k) = c0 + winding * k * a + sum_s cos[s-1] cos(s k a) + sin[s-1] sin(s k a)
struct AngleSeries {
  double c0 = 0.0;
  std::vector<double> cos_terms;
  std::vector<double> sin_terms;
  int winding = 0;
  double a = 1.0;

  double value(double k) const {
    double v = c0 + winding * k * a;
    for (std::size_t s = 0; s < cos_terms.size(); ++s) v += cos_terms[s] * std::cos((s + 1.0) * k * a);
    for (std::size_t s = 0; s < sin_terms.size(); ++s) v += sin_terms[s] * std::sin((s + 1.0) * k * a);
    return v;
  }
  double derivative(double k) const {
    double v = winding * a;
    for (std::size_t s = 0; s < cos_terms.size(); ++s) {
      v -= (s + 1.0) * a * cos_terms[s] * std::sin((s + 1.0) * k * a);
    }
    for (std::size_t s = 0; s < sin_terms.size(); ++s) {
      v += (s + 1.0) * a * sin_terms[s] * std::cos((s + 1.0) * k * a);
    }
    return v;
  }
};

inline AngleSeries parse_series(Section s, double a, bool allow_winding) {
  AngleSeries out;
  out.a = a;
  out.c0 = s.number("c0", 0.0);
  out.cos_terms = s.numbers("cos");
  out.sin_terms = s.numbers("sin");
  if (allow_winding) out.winding = static_cast<int>(s.integer("winding", 0));
  s.finish();
  return out;
}

struct ModelChoice {
  std::string kind;    // preset name, "angles" or "hamiltonian"
  std::optional<BlochField> field;
  std::optional<PumpHamiltonian> pump;
  double gap_tol = 1e-8;
  json params = json::object();
};

inline bool is_preset(const std::string& name) {
  for (const auto& p : presets()) {
    if (p.name == name) return true;
  }
  return false;
}

inline ModelChoice parse_model(Section model, const LatticeSpec& lattice, const std::string& task) {
  ModelChoice out;
  const int n_kinds = model.has("preset") + model.has("angles") + model.has("hamiltonian");
  if (n_kinds != 1) {
    throw ConfigError(model.key("preset"), "exactly one of preset, angles, hamiltonian is required");
  }
  const double a = lattice.lattice_constant;
  const bool pump_task = task == "pump";
  const bool sampled_task = task == "divergence-demo" || task == "incompleteness";

  if (model.has("preset")) {
    out.kind = model.string("preset");
    if (!is_preset(out.kind)) throw ConfigError(model.key("preset"), "unknown preset '" + out.kind + "'");
    std::optional<Section> params = model.optional_section("params");
    static const json empty = json::object();
    Section p = params ? *params : Section(empty, model.key("params"));
    if (out.kind == "qwz-pump") {
      if (!pump_task) throw ConfigError(model.key("preset"), "qwz-pump is only valid for task pump");
      if (lattice.n_bands != 2) throw ConfigError("lattice.bands", "qwz-pump needs 2 bands");
      const double mu = p.number("mu", -1.0);
      out.params["mu"] = mu;
      out.pump = qwz_pump(mu, a);
      out.gap_tol = p.positive("gap_tol", 1e-6);
    } else if (pump_task) {
      throw ConfigError(model.key("preset"), "task pump needs the qwz-pump preset");
    } else if (out.kind == "appendixB") {
      if (!sampled_task) {
        throw ConfigError(model.key("preset"), "appendixB is only valid for divergence-demo and incompleteness");
      }
    } else if (sampled_task) {
      throw ConfigError(model.key("preset"), "this task works on the appendixB preset");
    } else if (out.kind == "identity") {
      out.field.emplace(identity_field(lattice));
    } else {
      if (lattice.n_bands != 2) throw ConfigError("lattice.bands", "preset " + out.kind + " needs 2 bands");
      TwoBandModel m;
      if (out.kind == "two-band-generic") {
        const double t1 = p.number("t1", 1.0), t2 = p.number("t2", 0.6), mass = p.number("mass", 0.4);
        out.params = {{"t1", t1}, {"t2", t2}, {"mass", mass}};
        if (std::abs(mass) < 1e-12 && std::abs(std::abs(t1) - std::abs(t2)) < 1e-12) {
          throw DegenerateRibbon("two-band-generic gap closes for these parameters", 0.0, 0.0);
        }
        m = two_band_generic(a, t1, t2, mass);
      } else {
        const double radius = p.positive("radius", 0.5), bond = p.positive("bond", 1.0);
        const double hopping = p.positive("hopping", 1.0);
        out.params = {{"radius", radius}, {"bond", bond}, {"hopping", hopping}};
        m = graphene_ribbon(a, radius, bond, hopping);
      }
      out.field.emplace(two_band_field(m.angles, lattice, m.energies));
    }
    p.finish();
  } else if (model.has("angles")) {
    out.kind = "angles";
    if (pump_task || sampled_task) throw ConfigError(model.key("angles"), "not valid for task " + task);
    if (lattice.n_bands != 2) throw ConfigError("lattice.bands", "angle models need 2 bands");
    Section ang = model.section("angles");
    const AngleSeries theta = parse_series(ang.section("theta"), a, false);
    const AngleSeries phi = parse_series(ang.section("phi"), a, true);
    ang.finish();
    TwoBandAngles angles;
    angles.theta = [theta](double k) { return theta.value(k); };
    angles.dtheta = [theta](double k) { return theta.derivative(k); };
    angles.phi = [phi](double k) { return phi.value(k); };
    angles.dphi = [phi](double k) { return phi.derivative(k); };
    const KGrid grid = build_kgrid(lattice);
    for (int q = 0; q < grid.size(); ++q) {
      const double t = theta.value(grid[q]);
      if (t < 0.0 || t > pi) {
        throw ConfigError(model.key("angles.theta"),
                          "theta leaves [0, pi] at grid point " + std::to_string(q));
      }
    }
    out.field.emplace(two_band_field(angles, lattice));
  } else {
    out.kind = "hamiltonian";
    if (pump_task || sampled_task) throw ConfigError(model.key("hamiltonian"), "not valid for task " + task);
    Section ham = model.section("hamiltonian");
    out.gap_tol = ham.positive("gap_tol", 1e-8);
    const json& terms = ham.raw("terms");
    const std::string tkey = ham.key("terms");
    if (!terms.is_array() || terms.empty()) throw ConfigError(tkey, "must be a non-empty array");
    const Eigen::Index nb = lattice.n_bands;
    std::vector<std::pair<int, CMatrix>> h;
    for (std::size_t t = 0; t < terms.size(); ++t) {
      Section term(terms[t], tkey + "[" + std::to_string(t) + "]");
      const int shift = static_cast<int>(term.integer("shift"));
      CMatrix m = CMatrix::Zero(nb, nb);
      for (const char* part : {"re", "im"}) {
        if (!term.has(part)) continue;
        const json& rows = term.raw(part);
        const std::string pk = term.key(part);
        if (!rows.is_array() || static_cast<Eigen::Index>(rows.size()) != nb) {
          throw ConfigError(pk, "must be a " + std::to_string(nb) + "x" + std::to_string(nb) + " array");
        }
        for (Eigen::Index i = 0; i < nb; ++i) {
          const json& row = rows[static_cast<std::size_t>(i)];
          if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != nb) {
            throw ConfigError(pk + "[" + std::to_string(i) + "]", "must have " + std::to_string(nb) + " entries");
          }
          for (Eigen::Index j = 0; j < nb; ++j) {
            const json& v = row[static_cast<std::size_t>(j)];
            if (!v.is_number()) {
              throw ConfigError(pk + "[" + std::to_string(i) + "][" + std::to_string(j) + "]", "must be a number");
            }
            m(i, j) += std::string(part) == "re" ? cplx(v.get<double>(), 0.0) : cplx(0.0, v.get<double>());
          }
        }
      }
      term.finish();
      h.emplace_back(shift, m);
    }
    ham.finish();
    auto hk = [h, a](double k) {
      CMatrix out = CMatrix::Zero(h.front().second.rows(), h.front().second.cols());
      for (const auto& [s, m] : h) out += m * std::polar(1.0, s * k * a);
      return out;
    };
    try {
      out.field.emplace(eigenfield_from_hamiltonian(hk, lattice, out.gap_tol));
    } catch (const NumericalGuard&) {
      throw;
    } catch (const InvalidArgument& e) {
      throw ConfigError(tkey, e.what());
    }
  }
  model.finish();
  return out;
}

inline LatticeSpec parse_lattice(Section s) {
  LatticeSpec l;
  l.n_cells = s.positive_int("N");
  l.lattice_constant = s.positive("a", 1.0);
  l.n_bands = s.positive_int("bands", 2);
  l.origin = s.number("origin", 0.0);
  s.finish();
  return l;
}

// ---------------------------------------------------------------------------
// Digests.

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("SHA-256 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

// ---------------------------------------------------------------------------
// Runner.

struct RunOptions {
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  int verbosity = 0;
};

struct RunOutcome {
  int exit_code = exit_ok;
  std::string error;
  std::vector<std::string> messages;
  std::vector<std::string> files;
};

struct OutputSet {
  std::map<std::string, std::string> files;  // name -> content, written in name order
  std::vector<std::string> messages;
  json grid = json::object();
  json tolerances = json::object();
};

inline const std::vector<std::string>& task_names() {
  static const std::vector<std::string> t{"crm", "connection", "berry-phase", "gauge-audit",
                                          "shift-current", "pump", "divergence-demo", "incompleteness"};
  return t;
}

namespace tasks {

inline void crm_task(const BlochField& field, Section& params, OutputSet& out) {
  const double tol = params.positive("hermiticity_tol", 1e-10);
  const CRMatrix r = crm(field, tol);
  std::ostringstream os;
  write_csv(os, r);
  out.files["crm.csv"] = os.str();
  out.tolerances["hermiticity"] = tol;
  out.messages.push_back("hermiticity check: pass (defect " + csv::num(r.hermiticity_defect) + ")");
  out.messages.push_back("derivative scheme: " + std::string(to_string(r.scheme)));
}

inline void connection_task(const BlochField& field, Section& params, OutputSet& out) {
  const std::string kind = params.string("kind", "berry-connection");
  ConnectionField c;
  if (kind == "berry-connection") {
    c = berry_connection(field);
  } else if (kind == "reduced-r") {
    c = reduced_rmatrix(field);
  } else {
    throw ConfigError(params.key("kind"), "must be berry-connection or reduced-r");
  }
  std::ostringstream os;
  write_csv(os, c);
  out.files["connection.csv"] = os.str();
  out.messages.push_back("symmetrization defect: " + csv::num(c.defect));
}

inline void berry_phase_task(const BlochField& field, Section& params, OutputSet& out) {
  std::vector<int> bands = params.integers("bands", {0});
  std::ostringstream os;
  csv::Writer w(os, {"band", "theta"});
  for (std::size_t i = 0; i < bands.size(); ++i) {
    if (bands[i] < 0 || bands[i] >= field.n_bands()) {
      throw ConfigError(params.key("bands") + "[" + std::to_string(i) + "]", "band index out of range");
    }
    const double t = berry_phase(field, bands[i]);
    w.values(bands[i], t);
    out.messages.push_back("band " + std::to_string(bands[i]) + ": theta = " + csv::num(t));
  }
  out.files["berry_phase.csv"] = os.str();
}

inline void gauge_audit_task(const BlochField& field, Section& params, std::uint64_t seed,
                             OutputSet& out) {
  const int count = params.positive_int("seeds", 10);
  GaugeOptions opt;
  opt.modes = static_cast<int>(params.integer("modes", 2));
  if (opt.modes < 0) throw ConfigError(params.key("modes"), "must be >= 0");
  opt.diagonal_only = params.boolean("diagonal_only", true);
  opt.amplitude = params.number("amplitude", GaugeOptions{}.amplitude);
  const int band = params.index("band", 0, field.n_bands());
  const double tol = params.positive("tolerance", 1e-9);
  const double dk = field.grid().spacing();
  const ConnectionField a0 = berry_connection(field);
  const MatrixField m0 = as_matrix_field(a0);
  const double theta0 = berry_phase(field, band);
  const double loop0 = functional_loop(m0, band, dk);
  const double trace0 = functional_trace_loop(m0, dk);
  const cplx f0 = functional_F(m0, band, 0);
  std::vector<FunctionalReport> reports;
  for (int s = 0; s < count; ++s) {
    const std::uint64_t sd = seed + static_cast<std::uint64_t>(s);
    const GaugeField u = random_gauge_field(field.lattice(), sd, opt);
    const BlochField g = apply_gauge(field, u);
    const MatrixField m1 = transform(m0, u);
    reports.push_back(make_report("berry_phase", band, sd, theta0, berry_phase(g, band), tol, true));
    reports.push_back(make_report("loop", band, sd, loop0, functional_loop(m1, band, dk), tol, true));
    reports.push_back(make_report("trace_loop", -1, sd, trace0, functional_trace_loop(m1, dk), tol, true));
    reports.push_back(make_report("F", band, sd, f0, functional_F(m1, band, 0), tol));
  }
  std::ostringstream os;
  write_csv(os, reports);
  out.files["gauge_audit.csv"] = os.str();
  out.tolerances["invariance"] = tol;
  std::map<std::string, int> failures;
  for (const auto& r : reports) failures[r.name] += r.invariant() ? 0 : 1;
  for (const auto& [name, n] : failures) {
    out.messages.push_back(name + ": " + std::to_string(count - n) + "/" + std::to_string(count) + " invariant");
  }
}

inline void shift_current_task(const BlochField& field, Section& params, OutputSet& out) {
  if (!field.has_energies()) throw ConfigError("model", "shift-current needs a model with band energies");
  DriveSpec drive;
  drive.eta = params.positive("eta", 0.02);
  const double lo = params.number("omega_min", 0.0);
  const double hi = params.number("omega_max", 4.0);
  const int n = params.positive_int("n_omega", 201);
  if (!(hi > lo)) throw ConfigError(params.key("omega_max"), "must exceed omega_min");
  drive.frequencies = linspace(lo, hi, n);
  const int filled = params.index("filled", 1, field.n_bands() + 1);
  const OccupationSpec occ = OccupationSpec::lowest_filled(field.n_bands(), filled);
  const Spectrum s = shift_current_spectrum(field, occ, drive);
  std::ostringstream os;
  write_csv(os, s);
  out.files["shift_current.csv"] = os.str();
  out.grid["n_omega"] = n;
  out.tolerances["eta"] = drive.eta;
  out.tolerances["undefined_shift"] = undefined_shift_threshold;
  out.messages.push_back("skipped fraction: " + csv::num(s.skipped_fraction));
}

inline void pump_task(const ModelChoice& model, const LatticeSpec& lattice, Section& params, OutputSet& out) {
  const int nl = params.positive_int("n_lambda", lattice.n_cells);
  if (nl < 3) throw ConfigError(params.key("n_lambda"), "must be >= 3");
  const int band = params.index("band", 0, lattice.n_bands);
  const PumpFamily fam = build_pump_family(*model.pump, lattice, nl, model.gap_tol, model.kind);
  const PumpResult r = pumped_charge(fam, band);
  const ChernResult c = chern_oracle(fam, band);
  std::ostringstream p, o;
  write_csv(p, r);
  write_oracle_csv(o, model.kind, band, c);
  out.files["pump.csv"] = p.str();
  out.files["chern_oracle.csv"] = o.str();
  out.grid["n_lambda"] = nl;
  out.tolerances["gap"] = model.gap_tol;
  out.tolerances["chern_residue"] = chern_residue_limit;
  out.tolerances["branch_jump"] = branch_jump_limit;
  out.messages.push_back("delta Q = " + csv::num(r.delta_q) + ", Chern = " + std::to_string(c.chern) +
                         " (residue " + csv::num(c.residue) + ")");
}

inline void divergence_task(const LatticeSpec& lattice, Section& params, OutputSet& out) {
  const double a = lattice.lattice_constant;
  const int m = params.positive_int("intervals", SampledCellFunction::default_intervals);
  if (m < SampledCellFunction::min_intervals) throw ConfigError(params.key("intervals"), "must be >= 64");
  const std::string cell = params.string("cell", "appendixB");
  std::optional<SampledCellFunction> f;
  if (cell == "appendixB") {
    f.emplace(appendix_b_basis(params.positive_int("n", 1), a, m));
  } else if (cell == "uniform") {
    f.emplace(uniform_cell(a, m));
  } else if (cell == "delta") {
    f.emplace(delta_like_cell(a, 0.5 * a, params.positive("width", 0.02 * a), m));
  } else {
    throw ConfigError(params.key("cell"), "must be appendixB, uniform or delta");
  }
  std::vector<int> windows = params.integers("windows", {8, 16, 32, 64, 128, 256});
  const std::string centering = params.string("centering", "from-origin");
  WindowCentering c;
  if (centering == "from-origin") {
    c = WindowCentering::FromOrigin;
  } else if (centering == "centered") {
    c = WindowCentering::Centered;
  } else {
    throw ConfigError(params.key("centering"), "must be from-origin or centered");
  }
  TruncationStudy s;
  try {
    s = drm_truncated_diagonal(*f, 0.0, windows, c);
  } catch (const InvalidArgument& e) {
    throw ConfigError(params.key("windows"), e.what());
  }
  const int tw = params.positive_int("translation_window", windows.back());
  const TranslationReport t = translation_contradiction(*f, 0.0, tw);
  std::ostringstream a1, a2;
  write_csv(a1, s);
  csv::Writer w(a2, {"W", "before", "after", "difference", "predicted_shift", "formal_shift"});
  w.values(tw, t.before, t.after, t.boundary_term(), t.predicted_shift, t.formal_shift);
  out.files["truncation.csv"] = a1.str();
  out.files["translation.csv"] = a2.str();
  out.grid["intervals"] = m;
  out.messages.push_back("fit slope " + csv::num(s.fit.slope) + ", R^2 " + csv::num(s.fit.r_squared));
}

inline void incompleteness_task(const LatticeSpec& lattice, Section& params, OutputSet& out) {
  const double a = lattice.lattice_constant;
  const int m = params.positive_int("intervals", SampledCellFunction::default_intervals);
  if (m < SampledCellFunction::min_intervals) throw ConfigError(params.key("intervals"), "must be >= 64");
  const std::string target = params.string("target", "gap");
  std::optional<SampledCellFunction> f;
  if (target == "gap") {
    f.emplace(gap_supported_cell(a, m));
  } else if (target == "constant") {
    f.emplace(constant_cell(a, 1.0, m));
  } else if (target == "square-wave") {
    f.emplace(square_wave_cell(a, m));
  } else if (target == "basis") {
    f.emplace(appendix_b_basis(params.positive_int("n", 1), a, m));
  } else {
    throw ConfigError(params.key("target"), "must be gap, constant, square-wave or basis");
  }
  const std::vector<int> n_max = params.integers("n_max", {1, 2, 4, 8, 16, 32, 64});
  for (std::size_t i = 0; i < n_max.size(); ++i) {
    if (n_max[i] < 1) throw ConfigError(params.key("n_max") + "[" + std::to_string(i) + "]", "must be >= 1");
  }
  const ResidualSweep s = residual_sweep(*f, n_max);
  std::ostringstream os;
  write_csv(os, s);
  out.files["incompleteness.csv"] = os.str();
  out.grid["intervals"] = m;
}

}  // namespace tasks

// Validates and executes a parsed config. Throws ConfigError / NumericalGuard.
inline OutputSet execute(const json& config, const RunOptions& opts, json& manifest) {
  Section root(config, "");
  const std::string task = root.string("task");
  if (std::find(task_names().begin(), task_names().end(), task) == task_names().end()) {
    throw ConfigError("task", "unknown task '" + task + "'");
  }
  LatticeSpec lattice = parse_lattice(root.section("lattice"));
  if (lattice.n_cells < 3 && (task == "berry-phase" || task == "shift-current" ||
                              task == "gauge-audit" || task == "pump")) {
    throw ConfigError("lattice.N", "task " + task + " needs N >= 3");
  }
  std::uint64_t seed = static_cast<std::uint64_t>(root.integer("seed", 0));
  if (opts.seed) seed = *opts.seed;
  if (root.has("output")) (void)root.string("output");
  std::optional<ModelChoice> model;
  if (root.has("model")) {
    model = parse_model(root.section("model"), lattice, task);
  } else if (task != "divergence-demo" && task != "incompleteness") {
    (void)root.section("model");  // raises the missing-key error
  }
  static const json empty = json::object();
  std::optional<Section> ps = root.optional_section("params");
  Section params = ps ? *ps : Section(empty, "params");
  root.finish();

  OutputSet out;
  if (task == "crm") {
    tasks::crm_task(*model->field, params, out);
  } else if (task == "connection") {
    tasks::connection_task(*model->field, params, out);
  } else if (task == "berry-phase") {
    tasks::berry_phase_task(*model->field, params, out);
  } else if (task == "gauge-audit") {
    tasks::gauge_audit_task(*model->field, params, seed, out);
  } else if (task == "shift-current") {
    tasks::shift_current_task(*model->field, params, out);
  } else if (task == "pump") {
    tasks::pump_task(*model, lattice, params, out);
  } else if (task == "divergence-demo") {
    tasks::divergence_task(lattice, params, out);
  } else {
    tasks::incompleteness_task(lattice, params, out);
  }
  params.finish();

  manifest["task"] = task;
  manifest["seed"] = seed;
  manifest["config"] = config;
  manifest["model"] = model ? json{{"kind", model->kind}, {"params", model->params}} : json(nullptr);
  json grid = out.grid;
  grid["N"] = lattice.n_cells;
  grid["a"] = lattice.lattice_constant;
  grid["bands"] = lattice.n_bands;
  grid["origin"] = lattice.origin;
  manifest["grid"] = grid;
  json tol = out.tolerances;
  tol["unitarity"] = BlochField::unitarity_tolerance;
  manifest["tolerances"] = tol;
  return out;
}

inline std::string resolve_output_dir(const json& config, const RunOptions& opts) {
  if (opts.output_dir) return *opts.output_dir;
  if (config.is_object() && config.contains("output") && config["output"].is_string()) {
    return config["output"].get<std::string>();
  }
  if (const char* env = std::getenv("CRM_OUTPUT_DIR")) return env;
  return "crm-output";
}

inline RunOutcome run(const json& config, const RunOptions& opts = {}) {
  RunOutcome r;
  set_worker_count(opts.workers);
  try {
    json manifest;
    OutputSet out = execute(config, opts, manifest);
    const std::filesystem::path dir = resolve_output_dir(config, opts);
    std::filesystem::create_directories(dir);
    json files = json::array();
    std::string combined;
    for (const auto& [name, content] : out.files) {
      std::ofstream f(dir / name, std::ios::binary);
      f << content;
      if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
      const std::string digest = sha256_hex(content);
      files.push_back({{"name", name}, {"bytes", content.size()}, {"sha256", digest}});
      combined += name + ":" + digest + "\n";
      r.files.push_back((dir / name).string());
    }
    manifest["files"] = files;
    manifest["digest"] = sha256_hex(combined);
    std::ofstream m(dir / "manifest.json", std::ios::binary);
    m << manifest.dump(2) << "\n";
    r.files.push_back((dir / "manifest.json").string());
    r.messages = std::move(out.messages);
  } catch (const NumericalGuard& e) {
    r.exit_code = exit_numerical;
    r.error = e.what();
  } catch (const InvalidArgument& e) {
    r.exit_code = exit_config;
    r.error = e.what();
  }
  return r;
}

inline RunOutcome run_file(const std::string& path, const RunOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) {
    RunOutcome r;
    r.exit_code = exit_config;
    r.error = "config: cannot open '" + path + "'";
    return r;
  }
  json config;
  try {
    config = json::parse(in);
  } catch (const json::parse_error& e) {
    RunOutcome r;
    r.exit_code = exit_config;
    r.error = std::string("config: parse error: ") + e.what();
    return r;
  }
  return run(config, opts);
}

}  // namespace crm::cli

#endif  // CRM_CLI_HPP
