// cvqkd-lab: scenario runner for the key-rate analysis and the LO
// calibration experiments. Emits plot-ready CSV or JSON tables. Every
// scenario is a pure function of its resolved parameters, so a rerun with
// the same inputs is byte-identical.
//
// Exit codes: 0 ok (incl. --help), 2 bad flags/config, 3 solver failure.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvqkd/attack.hpp"
#include "cvqkd/montecarlo.hpp"
#include "cvqkd/optimizer.hpp"

namespace {

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Loss grids

struct LossRange {
  double start = 0.0;
  double stop = 0.0;
  double step = 1.0;
};

double parse_number(const std::string& text, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || text.empty() || !std::isfinite(v))
    throw config_error(what + ": not a number '" + text + "'");
  return v;
}

LossRange parse_range(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ':') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);

  LossRange r;
  if (parts.size() == 1) {
    r.start = r.stop = parse_number(parts[0], "loss");
    r.step = 1.0;
  } else if (parts.size() == 3) {
    r.start = parse_number(parts[0], "loss start");
    r.stop = parse_number(parts[1], "loss stop");
    r.step = parse_number(parts[2], "loss step");
  } else {
    throw config_error("loss range must be 'start:stop:step' or a single value, got '" + text +
                       "'");
  }
  return r;
}

std::vector<double> range_points(const LossRange& r) {
  if (!(r.step > 0.0)) throw config_error("loss step must be > 0");
  if (r.stop < r.start - 1e-12) throw config_error("loss stop must be >= start");
  const auto count = static_cast<std::size_t>(std::floor((r.stop - r.start) / r.step + 1e-9)) + 1;
  std::vector<double> pts(count);
  for (std::size_t i = 0; i < count; ++i) pts[i] = r.start + static_cast<double>(i) * r.step;
  return pts;
}

// ---------------------------------------------------------------------------
// Output tables

using Cell = std::variant<double, std::uint64_t>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
};

std::string format_cell(const Cell& cell) {
  char buf[40];
  if (std::holds_alternative<double>(cell))
    std::snprintf(buf, sizeof buf, "%.12g", std::get<double>(cell));
  else
    std::snprintf(buf, sizeof buf, "%llu",
                  static_cast<unsigned long long>(std::get<std::uint64_t>(cell)));
  return buf;
}

void write_csv(const Table& table, std::ostream& os) {
  for (std::size_t i = 0; i < table.columns.size(); ++i)
    os << (i ? "," : "") << table.columns[i];
  os << "\n";
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_cell(row[i]);
    os << "\n";
  }
}

void write_json(const Table& table, const std::string& scenario, std::ostream& os) {
  nlohmann::json doc;
  doc["scenario"] = scenario;
  doc["columns"] = table.columns;
  auto rows = nlohmann::json::array();
  for (const auto& row : table.rows) {
    auto r = nlohmann::json::array();
    for (const auto& cell : row) {
      if (std::holds_alternative<std::uint64_t>(cell)) {
        r.push_back(std::get<std::uint64_t>(cell));
      } else {
        const double v = std::get<double>(cell);
        if (!std::isfinite(v)) {
          r.push_back(nullptr);
        } else {
          // Round through the same 12-significant-digit formatting the CSV
          // uses, so the two formats carry identical numbers.
          r.push_back(std::strtod(format_cell(cell).c_str(), nullptr));
        }
      }
    }
    rows.push_back(std::move(r));
  }
  doc["rows"] = std::move(rows);
  os << doc.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Parameters: defaults, then config file, then flags

struct Run {
  std::string scenario;
  double v = 40.0;
  double beta = 1.0;
  double eta = 0.606;
  double n_el = 0.041;
  double eps = 0.2;
  double gain = 1.0;
  double chi_d_max = 100.0;
  std::uint64_t n = 1000000;
  std::uint64_t seed = 1;
  LossRange loss;
  std::string out;
  std::string format = "csv";
  std::string lo_profile = "constant";
  std::string stabilizer = "on";
  std::string dump_batch;
};

struct ConfigEntry {
  std::string value;
  int line = 0;
};

std::map<std::string, ConfigEntry> read_config(const std::string& path) {
  static const std::set<std::string> allowed = {
      "scenario",    "v",
      "beta",        "eta",
      "n_el",        "eps",
      "gain",        "chi_d_max",
      "out",         "format",
      "loss_db_range.start", "loss_db_range.stop", "loss_db_range.step",
      "mc.n",        "mc.seed",
      "mc.lo_profile", "mc.stabilizer",
  };
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file '" + path + "'");

  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
  };

  std::map<std::string, ConfigEntry> entries;
  std::string line;
  int num = 0;
  while (std::getline(in, line)) {
    ++num;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw config_error("line " + std::to_string(num) + ": expected 'key = value', got '" +
                         text + "'");
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (!allowed.count(key))
      throw config_error("unknown key '" + key + "' at line " + std::to_string(num));
    if (entries.count(key))
      throw config_error("duplicate key '" + key + "' at line " + std::to_string(num));
    if (value.empty())
      throw config_error("empty value for key '" + key + "' at line " + std::to_string(num));
    entries[key] = ConfigEntry{value, num};
  }
  return entries;
}

double config_number(const ConfigEntry& e, const std::string& key) {
  try {
    return parse_number(e.value, key);
  } catch (const config_error&) {
    throw config_error("key '" + key + "' at line " + std::to_string(e.line) +
                       ": not a number '" + e.value + "'");
  }
}

std::uint64_t config_count(const ConfigEntry& e, const std::string& key) {
  const double v = config_number(e, key);
  if (v < 0.0 || v != std::floor(v) || v > 9e18)
    throw config_error("key '" + key + "' at line " + std::to_string(e.line) +
                       ": expected a nonnegative integer, got '" + e.value + "'");
  return static_cast<std::uint64_t>(v);
}

int thread_budget() {
  const char* env = std::getenv("CVQKD_LAB_THREADS");
  if (!env) return 0;  // library picks the hardware count
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

// ---------------------------------------------------------------------------
// Scenarios

constexpr double kLoPhotonsCal = 1e8;

double clamp0(double k) { return k > 0.0 ? k : 0.0; }

Table run_fig1a(const Run& r) {
  // The three detector grades are fixed by the scenario; eps rides the flag.
  const cvqkd::ProtocolParams params{r.v, r.beta};
  const double nels[3] = {0.041, 0.0359, 0.0205};
  Table t;
  t.columns = {"loss_db",
               "k_nel_0041",
               "k_nel_0359",
               "k_nel_0205",
               "k_nel_0041_clamped",
               "k_nel_0359_clamped",
               "k_nel_0205_clamped"};
  for (double loss : range_points(r.loss)) {
    const auto ch = cvqkd::ChannelModel::from_loss_db(loss, r.eps);
    double k[3];
    for (int i = 0; i < 3; ++i) {
      const cvqkd::DetectorModel det{r.eta, nels[i], 1.0, kLoPhotonsCal};
      k[i] = cvqkd::key_rate(cvqkd::Protocol{cvqkd::NoisyHomodyne{det}}, params, ch).k_raw;
    }
    t.rows.push_back({loss, k[0], k[1], k[2], clamp0(k[0]), clamp0(k[1]), clamp0(k[2])});
  }
  return t;
}

Table run_fig1b(const Run& r) {
  const cvqkd::ProtocolParams params{r.v, r.beta};
  const double gains[3] = {1.0, 8.0 / 7.0, 2.0};
  Table t;
  t.columns = {"loss_db",
               "k_true_g1",
               "k_true_g87",
               "k_true_g2",
               "k_believed",
               "k_true_g1_clamped",
               "k_true_g87_clamped",
               "k_true_g2_clamped",
               "k_believed_clamped"};
  for (double loss : range_points(r.loss)) {
    const auto ch = cvqkd::ChannelModel::from_loss_db(loss, r.eps);
    double k_true[3];
    double k_believed = 0.0;
    for (int i = 0; i < 3; ++i) {
      const auto sc = cvqkd::constant_total_noise_scenario(r.eps, r.n_el, r.eta, ch, gains[i]);
      const auto gap = cvqkd::rate_gap(sc, params);
      k_true[i] = gap.k_true;
      k_believed = gap.k_believed;  // independent of the gain
    }
    t.rows.push_back({loss, k_true[0], k_true[1], k_true[2], k_believed, clamp0(k_true[0]),
                      clamp0(k_true[1]), clamp0(k_true[2]), clamp0(k_believed)});
  }
  return t;
}

Table run_fig3(const Run& r) {
  const cvqkd::ProtocolParams params{r.v, r.beta};
  Table t;
  t.columns = {"loss_db", "eps_perfect_hom", "eps_heterodyne", "eps_noisy_hom"};
  for (double loss : range_points(r.loss)) {
    const auto hom = cvqkd::tolerable_excess_noise(cvqkd::Protocol{cvqkd::PerfectHomodyne{}},
                                                   params, loss, false);
    const auto het = cvqkd::tolerable_excess_noise(cvqkd::Protocol{cvqkd::Heterodyne{}}, params,
                                                   loss, false);
    const auto opt = cvqkd::tolerable_excess_noise(cvqkd::Protocol{cvqkd::PerfectHomodyne{}},
                                                   params, loss, true, r.chi_d_max);
    t.rows.push_back({loss, hom.eps_max, het.eps_max, opt.eps_max});
  }
  return t;
}

Table run_fig4(const Run& r) {
  const cvqkd::ProtocolParams params{r.v, r.beta};
  const cvqkd::DetectorModel det{r.eta, r.n_el, 1.0, kLoPhotonsCal};
  Table t;
  t.columns = {"loss_db",    "k_opt",     "k_perfect",         "k_het",
               "chi_d_star", "n_el_star", "gain_star",         "k_opt_clamped",
               "k_perfect_clamped",       "k_het_clamped"};
  for (double loss : range_points(r.loss)) {
    const auto ch = cvqkd::ChannelModel::from_loss_db(loss, r.eps);
    const auto opt = cvqkd::optimal_added_noise(params, ch, r.chi_d_max);
    const double k_hom =
        cvqkd::key_rate(cvqkd::Protocol{cvqkd::PerfectHomodyne{}}, params, ch).k_raw;
    const double k_het =
        cvqkd::key_rate(cvqkd::Protocol{cvqkd::Heterodyne{}}, params, ch).k_raw;
    const auto plan = cvqkd::gain_for_target_noise(det, opt.chi_d_star);
    t.rows.push_back({loss, opt.k_star, k_hom, k_het, opt.chi_d_star, plan.n_el_target,
                      plan.gain, clamp0(opt.k_star), clamp0(k_hom), clamp0(k_het)});
  }
  return t;
}

Table run_sweep(const Run& r) {
  const cvqkd::ProtocolParams params{r.v, r.beta};
  const cvqkd::DetectorModel det{r.eta, r.n_el, r.gain, kLoPhotonsCal};
  Table t;
  t.columns = {"loss_db",     "t",          "chi_c",       "chi_d",        "chi_t",
               "i_ab_hom",    "chi_be_hom", "k_hom",       "i_ab_het",     "chi_be_het",
               "k_het",       "i_ab_noisy", "chi_be_noisy", "k_noisy",
               "k_hom_clamped", "k_het_clamped", "k_noisy_clamped"};
  for (double loss : range_points(r.loss)) {
    const auto ch = cvqkd::ChannelModel::from_loss_db(loss, r.eps);
    const auto nb = cvqkd::noise_budget(ch, det);
    const auto hom = cvqkd::key_rate(cvqkd::Protocol{cvqkd::PerfectHomodyne{}}, params, ch);
    const auto het = cvqkd::key_rate(cvqkd::Protocol{cvqkd::Heterodyne{}}, params, ch);
    const auto noisy = cvqkd::key_rate(cvqkd::Protocol{cvqkd::NoisyHomodyne{det}}, params, ch);
    t.rows.push_back({loss, ch.t, nb.chi_c, nb.chi_d, nb.chi_t, hom.i_ab, hom.chi_be, hom.k_raw,
                      het.i_ab, het.chi_be, het.k_raw, noisy.i_ab, noisy.chi_be, noisy.k_raw,
                      clamp0(hom.k_raw), clamp0(het.k_raw), clamp0(noisy.k_raw)});
  }
  return t;
}

// Per-pulse LO gains seen at the receiver: the scenario gain times the
// profile's fluctuation.
std::vector<double> profile_gains(const Run& r, std::size_t n) {
  if (r.lo_profile == "constant") return std::vector<double>(n, r.gain);
  const std::string key = "stochastic:";
  if (r.lo_profile.rfind(key, 0) == 0) {
    const double rel = parse_number(r.lo_profile.substr(key.size()), "mc.lo_profile");
    std::vector<double> g =
        cvqkd::detail::lo_gains(cvqkd::StochasticLo{rel, r.seed}, n);
    for (double& v : g) v *= r.gain;
    return g;
  }
  throw config_error("mc.lo_profile must be 'constant' or 'stochastic:<rel>', got '" +
                     r.lo_profile + "'");
}

double stabilizer_monitor_rel(const Run& r) {
  if (r.stabilizer == "on") return 0.0;
  const std::string key = "on:";
  if (r.stabilizer.rfind(key, 0) == 0)
    return parse_number(r.stabilizer.substr(key.size()), "mc.stabilizer");
  throw config_error("mc.stabilizer must be 'on' or 'on:<rel>', got '" + r.stabilizer + "'");
}

std::vector<std::string> mc_base_columns() {
  return {"n",         "seed",        "loss_db",   "t",          "eps",       "v",
          "eta",       "n_el",        "var_alice", "var_y",      "se_var_y",  "cov_ay",
          "se_cov_ay", "etat_hat",    "se_etat_hat", "t_hat",    "se_t_hat",  "eps_hat",
          "se_eps_hat", "saturated",  "n_used"};
}

void push_mc_base(std::vector<Cell>& row, const Run& r, double loss,
                  const cvqkd::ChannelModel& ch, const cvqkd::PulseBatch& batch,
                  const cvqkd::EstimationReport& rep) {
  row.insert(row.end(),
             {Cell{r.n}, Cell{r.seed}, Cell{loss}, Cell{ch.t}, Cell{r.eps}, Cell{r.v},
              Cell{r.eta}, Cell{r.n_el}, Cell{rep.var_alice}, Cell{rep.var_y},
              Cell{rep.se_var_y}, Cell{rep.cov_ay}, Cell{rep.se_cov_ay}, Cell{rep.etat_hat},
              Cell{rep.se_etat_hat}, Cell{rep.t_hat}, Cell{rep.se_t_hat}, Cell{rep.eps_hat},
              Cell{rep.se_eps_hat}, Cell{static_cast<std::uint64_t>(batch.saturated_count)},
              Cell{static_cast<std::uint64_t>(rep.n_used)}});
}

void maybe_dump(const Run& r, const cvqkd::PulseBatch& batch) {
  if (r.dump_batch.empty()) return;
  std::ofstream out(r.dump_batch);
  if (!out) throw config_error("cannot open dump file '" + r.dump_batch + "'");
  cvqkd::export_batch(batch, out);
  if (!out) throw config_error("failed writing dump file '" + r.dump_batch + "'");
}

Table run_mc_validate(const Run& r) {
  const cvqkd::ProtocolParams params{r.v, r.beta};
  const cvqkd::DetectorModel det{r.eta, r.n_el, 1.0, kLoPhotonsCal};
  Table t;
  t.columns = mc_base_columns();
  t.columns.emplace_back("gain");
  for (double loss : range_points(r.loss)) {
    const auto ch = cvqkd::ChannelModel::from_loss_db(loss, r.eps);
    const auto batch = cvqkd::simulate_batch(params, ch, det,
                                             cvqkd::SequenceLo{profile_gains(r, r.n)}, r.n,
                                             r.seed, thread_budget());
    const auto alice = cvqkd::matched_alice(batch);
    const auto y = cvqkd::normalize_batch(batch, det, cvqkd::Normalization::Calibrated);
    const auto rep = cvqkd::estimate_parameters(alice, y, det);
    std::vector<Cell> row;
    push_mc_base(row, r, loss, ch, batch, rep);
    row.emplace_back(r.gain);
    t.rows.push_back(std::move(row));
    maybe_dump(r, batch);
  }
  return t;
}

Table run_mc_attack(const Run& r) {
  const cvqkd::ProtocolParams params{r.v, r.beta};
  const cvqkd::DetectorModel det{r.eta, r.n_el, 1.0, kLoPhotonsCal};
  Table t;
  t.columns = mc_base_columns();
  t.columns.insert(t.columns.end(), {"gain", "eps_bias_observed", "eps_bias_predicted"});
  for (double loss : range_points(r.loss)) {
    const auto ch = cvqkd::ChannelModel::from_loss_db(loss, r.eps);
    const auto batch = cvqkd::simulate_batch(params, ch, det,
                                             cvqkd::SequenceLo{profile_gains(r, r.n)}, r.n,
                                             r.seed, thread_budget());
    const auto alice = cvqkd::matched_alice(batch);
    // Bob rescales by the live LO reading but keeps the calibration-time
    // electronic noise figure; the transmission is pinned so the row isolates
    // the noise-split error.
    const auto y = cvqkd::normalize_batch(batch, det, cvqkd::Normalization::Instantaneous);
    const auto rep = cvqkd::estimate_parameters(alice, y, det, ch.t);
    const double predicted = -r.n_el * (1.0 - 1.0 / r.gain) / (r.eta * ch.t);
    std::vector<Cell> row;
    push_mc_base(row, r, loss, ch, batch, rep);
    row.insert(row.end(), {Cell{r.gain}, Cell{rep.eps_hat - r.eps}, Cell{predicted}});
    t.rows.push_back(std::move(row));
    maybe_dump(r, batch);
  }
  return t;
}

Table run_mc_stabilize(const Run& r) {
  const cvqkd::ProtocolParams params{r.v, r.beta};
  const cvqkd::DetectorModel det{r.eta, r.n_el, 1.0, kLoPhotonsCal};

  cvqkd::StabilizerConfig cfg;
  cfg.target_intensity = kLoPhotonsCal;
  cfg.monitor_noise_rel = stabilizer_monitor_rel(r);
  const std::uint64_t monitor_seed = r.seed ^ 0x9e3779b97f4a7c15ULL;

  Table t;
  t.columns = mc_base_columns();
  t.columns.insert(t.columns.end(),
                   {"gain", "clipped", "residual_rms", "eps_bias_observed",
                    "eps_bias_predicted"});
  for (double loss : range_points(r.loss)) {
    const auto ch = cvqkd::ChannelModel::from_loss_db(loss, r.eps);

    std::vector<double> incoming = profile_gains(r, r.n);
    for (double& g : incoming) g *= kLoPhotonsCal;
    const auto stab = cvqkd::stabilize_lo(incoming, cfg, monitor_seed);

    std::vector<double> gains(r.n);
    for (std::size_t i = 0; i < r.n; ++i) gains[i] = stab.stabilized[i] / kLoPhotonsCal;
    const auto batch = cvqkd::simulate_batch(params, ch, det, cvqkd::SequenceLo{std::move(gains)},
                                             r.n, r.seed, thread_budget());
    const auto alice = cvqkd::matched_alice(batch);
    // With the LO pinned at its calibration intensity the calibration-time
    // normalization is trustworthy again; no live rescaling needed.
    const auto y = cvqkd::normalize_batch(batch, det, cvqkd::Normalization::Calibrated);
    const auto rep = cvqkd::estimate_parameters(alice, y, det, ch.t);

    double ss = 0.0;
    for (double res : stab.residuals) ss += res * res;
    const double rms = std::sqrt(ss / static_cast<double>(stab.residuals.size()));

    std::vector<Cell> row;
    push_mc_base(row, r, loss, ch, batch, rep);
    row.insert(row.end(), {Cell{r.gain}, Cell{static_cast<std::uint64_t>(stab.clipped)},
                           Cell{rms}, Cell{rep.eps_hat - r.eps}, Cell{0.0}});
    t.rows.push_back(std::move(row));
    maybe_dump(r, batch);
  }
  return t;
}

// ---------------------------------------------------------------------------

struct ScenarioSpec {
  std::string default_loss;
  bool is_mc = false;
  Table (*run)(const Run&) = nullptr;
};

const std::map<std::string, ScenarioSpec>& scenario_specs() {
  static const std::map<std::string, ScenarioSpec> specs = {
      {"fig1a", {"0:6:0.25", false, run_fig1a}},
      {"fig1b", {"0:6:0.25", false, run_fig1b}},
      {"fig3", {"0:20:0.5", false, run_fig3}},
      {"fig4", {"0:25:0.5", false, run_fig4}},
      {"sweep", {"0:25:0.5", false, run_sweep}},
      {"mc-validate", {"3", true, run_mc_validate}},
      {"mc-attack", {"3", true, run_mc_attack}},
      {"mc-stabilize", {"3", true, run_mc_stabilize}},
  };
  return specs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CV-QKD key-rate scenarios and LO-calibration experiments"};
  app.require_subcommand(1);

  Run run;
  std::string loss_flag;
  std::string config_path;

  auto add_common = [&](CLI::App* s) {
    s->add_option("--v", run.v, "Alice's modulation variance, SNU");
    s->add_option("--beta", run.beta, "reconciliation efficiency in (0, 1]");
    s->add_option("--loss", loss_flag, "channel loss grid in dB: start:stop:step or one value");
    s->add_option("--out", run.out, "output file (default: stdout)");
    s->add_option("--format", run.format, "output format: csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
    s->add_option("--config", config_path, "parameter file with 'key = value' lines");
  };
  auto add_eta = [&](CLI::App* s) {
    s->add_option("--eta", run.eta, "detector efficiency in (0, 1]");
  };
  auto add_eps = [&](CLI::App* s) {
    s->add_option("--eps", run.eps, "channel excess noise at the input, SNU");
  };
  auto add_nel = [&](CLI::App* s) {
    s->add_option("--n-el", run.n_el, "calibrated electronic noise, SNU");
  };
  auto add_chid = [&](CLI::App* s) {
    s->add_option("--chi-d-max", run.chi_d_max, "upper bound for the trusted added noise");
  };
  auto add_gain = [&](CLI::App* s) {
    s->add_option("--gain", run.gain, "LO intensity gain relative to calibration");
  };
  auto add_mc = [&](CLI::App* s) {
    s->add_option("--n", run.n, "pulses per run");
    s->add_option("--seed", run.seed, "RNG seed");
    s->add_option("--dump-batch", run.dump_batch, "write the per-pulse record to this file");
  };

  CLI::App* fig1a = app.add_subcommand("fig1a", "key rate vs loss for three detector grades");
  add_common(fig1a), add_eta(fig1a), add_eps(fig1a);
  CLI::App* fig1b =
      app.add_subcommand("fig1b", "believed vs true key rate under LO intensity attack");
  add_common(fig1b), add_eta(fig1b), add_eps(fig1b), add_nel(fig1b);
  CLI::App* fig3 = app.add_subcommand("fig3", "tolerable excess noise frontiers vs loss");
  add_common(fig3), add_chid(fig3);
  CLI::App* fig4 =
      app.add_subcommand("fig4", "optimal trusted added noise, rates and LO gain plan");
  add_common(fig4), add_eta(fig4), add_eps(fig4), add_nel(fig4), add_chid(fig4);
  CLI::App* sweep = app.add_subcommand("sweep", "per-protocol rate breakdown over a loss grid");
  add_common(sweep), add_eta(sweep), add_eps(sweep), add_nel(sweep), add_gain(sweep);
  for (const char* name : {"mc-validate", "mc-attack", "mc-stabilize"}) {
    CLI::App* s = app.add_subcommand(
        name, std::string("pulse-level simulation: ") +
                  (name[3] == 'v' ? "estimator validation"
                                  : (name[3] == 'a' ? "LO calibration attack"
                                                    : "attack with intensity stabilizer")));
    add_common(s), add_eta(s), add_eps(s), add_nel(s), add_gain(s), add_mc(s);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  run.scenario = sub->get_name();
  const ScenarioSpec& spec = scenario_specs().at(run.scenario);

  try {
    // Defaults, then config file, then flags. The flag values are already in
    // `run`, so the config only fills slots whose flag is absent.
    std::map<std::string, ConfigEntry> cfg;
    if (!config_path.empty()) cfg = read_config(config_path);

    auto flag_given = [&](const std::string& name) {
      return sub->get_option_no_throw(name) != nullptr && sub->count(name) > 0;
    };
    auto take_number = [&](const std::string& key, const std::string& flag, double& slot) {
      if (cfg.count(key) && !flag_given(flag)) slot = config_number(cfg.at(key), key);
    };
    auto take_count = [&](const std::string& key, const std::string& flag,
                          std::uint64_t& slot) {
      if (cfg.count(key) && !flag_given(flag)) slot = config_count(cfg.at(key), key);
    };
    auto take_string = [&](const std::string& key, const std::string& flag, std::string& slot) {
      if (cfg.count(key) && !flag_given(flag)) slot = cfg.at(key).value;
    };

    if (cfg.count("scenario") && cfg.at("scenario").value != run.scenario)
      throw config_error("config is for scenario '" + cfg.at("scenario").value +
                         "' but subcommand is '" + run.scenario + "'");

    take_number("v", "--v", run.v);
    take_number("beta", "--beta", run.beta);
    take_number("eta", "--eta", run.eta);
    take_number("n_el", "--n-el", run.n_el);
    take_number("eps", "--eps", run.eps);
    take_number("gain", "--gain", run.gain);
    take_number("chi_d_max", "--chi-d-max", run.chi_d_max);
    take_count("mc.n", "--n", run.n);
    take_count("mc.seed", "--seed", run.seed);
    take_string("mc.lo_profile", "", run.lo_profile);
    take_string("mc.stabilizer", "", run.stabilizer);
    take_string("out", "--out", run.out);
    take_string("format", "--format", run.format);
    if (run.format != "csv" && run.format != "json")
      throw config_error("format must be 'csv' or 'json', got '" + run.format + "'");

    run.loss = parse_range(spec.default_loss);
    if (flag_given("--loss")) {
      run.loss = parse_range(loss_flag);
    } else {
      take_number("loss_db_range.start", "--loss", run.loss.start);
      take_number("loss_db_range.stop", "--loss", run.loss.stop);
      take_number("loss_db_range.step", "--loss", run.loss.step);
    }
    const std::size_t npoints = range_points(run.loss).size();

    if (!run.dump_batch.empty() && npoints != 1)
      throw config_error("--dump-batch needs a single loss point, grid has " +
                         std::to_string(npoints));
    if (run.n == 0) throw config_error("mc.n must be >= 1");
    if (spec.is_mc && run.n > (std::uint64_t(1) << 31))
      throw config_error("mc.n larger than 2^31 is not supported");

    const Table table = spec.run(run);

    std::ostringstream buf;
    if (run.format == "csv")
      write_csv(table, buf);
    else
      write_json(table, run.scenario, buf);

    if (run.out.empty()) {
      std::cout << buf.str();
    } else {
      std::ofstream out(run.out, std::ios::binary);
      if (!out) throw config_error("cannot open output file '" + run.out + "'");
      out << buf.str();
      out.flush();
      if (!out) throw config_error("failed writing output file '" + run.out + "'");
    }
    return 0;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cvqkd::unphysical_state_error& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 3;
  } catch (const cvqkd::solver_error& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
}
