#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "riskdiff/conditional.hpp"
#include "riskdiff/divided_diff.hpp"
#include "riskdiff/errors.hpp"
#include "riskdiff/format.hpp"
#include "riskdiff/loss_models.hpp"
#include "riskdiff/oracles.hpp"
#include "riskdiff/risk_measures.hpp"
#include "riskdiff/sampling.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace riskdiff;

namespace {

struct Options {
  std::string model_path;
  std::string x_csv;
  double alpha = 0.95;
  long n_samples = 1'000'000;
  std::uint64_t seed = 1;
  int axis = 1;
  int order = 1;
  std::string bands_csv;
  std::string msched_csv;
  std::string out_dir;
  bool no_timestamp = false;
  unsigned threads = 1;
  std::string config_path;
  std::string mode = "auto";
  bool center = false;
  double epsilon = 0.0;
  double fd_step = 0.05;
  std::string family = "bounded";
  std::string target = "loss";

  // Presence tracking for options whose default depends on the subcommand.
  bool axis_given = false;
  bool order_given = false;
  bool center_given = false;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  for (std::string& p : parts) {
    const std::size_t a = p.find_first_not_of(" \t");
    const std::size_t b = p.find_last_not_of(" \t");
    p = a == std::string::npos ? std::string() : p.substr(a, b - a + 1);
  }
  return parts;
}

std::vector<double> parse_doubles(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const std::string& tok : split_csv(s)) {
    bool ok = false;
    const double v = parse_double(tok.data(), tok.data() + tok.size(), ok);
    if (tok.empty() || !ok)
      throw std::invalid_argument(what + ": cannot parse '" + tok + "' as a number");
    out.push_back(v);
  }
  return out;
}

std::vector<long> parse_longs(const std::string& s, const std::string& what) {
  std::vector<long> out;
  for (const std::string& tok : split_csv(s)) {
    long v = 0;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || r.ec != std::errc{} || r.ptr != tok.data() + tok.size())
      throw std::invalid_argument(what + ": cannot parse '" + tok + "' as an integer");
    out.push_back(v);
  }
  return out;
}

std::string join_csv(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) s.push_back(',');
    s += format_double(v[i]);
  }
  return s;
}

std::string iso_utc_now() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

json diagnostic_json(const MonotonicityReport& d) {
  return json{{"band_count", d.band_count},
              {"epsilon", d.epsilon},
              {"pass", d.pass},
              {"probe_ms", d.probe_ms},
              {"threshold", d.threshold},
              {"violation_fraction", d.violation_fraction}};
}

// Closed-form reference block for gaussian_linear models, rebuilt from the
// resolved model document so it cannot drift from what the report embeds.
std::optional<GaussianPortfolio> gaussian_params(const LossModel& model) {
  if (model.kind() != ModelKind::gaussian_linear) return std::nullopt;
  const json doc = model.to_json();
  const json& params = doc.at("params");
  GaussianPortfolio p;
  p.mu = params.at("mu").get<std::vector<double>>();
  const json& rows = params.at("sigma");
  p.sigma = Matrix(p.mu.size());
  for (std::size_t i = 0; i < p.mu.size(); ++i)
    for (std::size_t j = 0; j < p.mu.size(); ++j)
      p.sigma(i, j) = rows.at(i).at(j).get<double>();
  return p;
}

int exit_code_from(const json& verdicts) {
  for (const auto& [name, v] : verdicts.items()) {
    (void)name;
    if (v.is_object() && v.contains("pass") && v["pass"].is_boolean() &&
        !v["pass"].get<bool>())
      return 2;
  }
  return 0;
}

// Assembles the report, writes artifacts, prints verdicts, and maps any
// failed verdict to exit code 2.
int finish(const Options& o, const std::string& command, json config, json results,
           json verdicts, json oracle = nullptr) {
  if (!o.no_timestamp) config["generated_at"] = iso_utc_now();
  json report;
  report["config"] = std::move(config);
  report["results"] = std::move(results);
  report["verdicts"] = verdicts;
  if (!oracle.is_null()) report["oracle"] = std::move(oracle);

  if (!o.out_dir.empty()) {
    fs::create_directories(o.out_dir);
    const fs::path path = fs::path(o.out_dir) / "report.json";
    write_text(path, report.dump(2) + "\n");
    std::printf("report: %s\n", path.string().c_str());
  }
  for (const auto& [name, v] : verdicts.items()) {
    const bool pass = v.is_object() && v.value("pass", false);
    std::printf("verdict %s: %s\n", name.c_str(), pass ? "pass" : "FAIL");
  }
  (void)command;
  return exit_code_from(verdicts);
}

LossModel load_model(const Options& o) {
  if (o.model_path.empty())
    throw std::invalid_argument("--model is required for this command");
  return LossModel::from_json_file(o.model_path);
}

std::vector<double> resolve_x(const Options& o) {
  if (o.x_csv.empty()) throw std::invalid_argument("--x is required for this command");
  return parse_doubles(o.x_csv, "--x");
}

void check_common(const Options& o) {
  if (o.threads == 0) throw std::invalid_argument("--threads must be at least 1");
  if (o.n_samples < 1) throw std::invalid_argument("--n-samples must be at least 1");
}

// ---------------------------------------------------------------------------
// Config file: JSON object of defaults for the domain flags; command-line
// flags win. Unknown or ill-typed fields are rejected by name.

struct ConfigField {
  const char* key;
  const char* flag;
  std::function<void(const json&)> apply;
};

double field_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw std::invalid_argument("config." + key + ": expected a number");
  return v.get<double>();
}

long field_integer(const json& v, const std::string& key) {
  if (!v.is_number_integer())
    throw std::invalid_argument("config." + key + ": expected an integer");
  return v.get<long>();
}

std::string field_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw std::invalid_argument("config." + key + ": expected a string");
  return v.get<std::string>();
}

std::string field_csv(const json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (!v.is_array() || v.empty())
    throw std::invalid_argument("config." + key + ": expected a non-empty array or CSV string");
  std::vector<double> nums;
  for (const json& e : v) {
    if (!e.is_number())
      throw std::invalid_argument("config." + key + ": non-numeric entry");
    nums.push_back(e.get<double>());
  }
  return join_csv(nums);
}

void merge_config(CLI::App* sub, Options& o) {
  if (o.config_path.empty()) return;
  std::ifstream is(o.config_path);
  if (!is) throw std::invalid_argument("cannot open config file " + o.config_path);
  json doc;
  try {
    is >> doc;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config file " + o.config_path + ": " + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("config: expected a JSON object");

  const std::vector<ConfigField> fields = {
      {"model", "--model", [&](const json& v) { o.model_path = field_string(v, "model"); }},
      {"x", "--x", [&](const json& v) { o.x_csv = field_csv(v, "x"); }},
      {"alpha", "--alpha", [&](const json& v) { o.alpha = field_number(v, "alpha"); }},
      {"n_samples", "--n-samples",
       [&](const json& v) { o.n_samples = field_integer(v, "n_samples"); }},
      {"seed", "--seed",
       [&](const json& v) {
         const long s = field_integer(v, "seed");
         if (s < 0) throw std::invalid_argument("config.seed: must be non-negative");
         o.seed = static_cast<std::uint64_t>(s);
       }},
      {"axis", "--axis",
       [&](const json& v) {
         o.axis = static_cast<int>(field_integer(v, "axis"));
         o.axis_given = true;
       }},
      {"order", "--order",
       [&](const json& v) {
         o.order = static_cast<int>(field_integer(v, "order"));
         o.order_given = true;
       }},
      {"bands", "--bands", [&](const json& v) { o.bands_csv = field_csv(v, "bands"); }},
      {"m_schedule", "--m-schedule",
       [&](const json& v) { o.msched_csv = field_csv(v, "m_schedule"); }},
      {"mode", "--mode", [&](const json& v) { o.mode = field_string(v, "mode"); }},
      {"center_at_quantile", "--center-at-quantile",
       [&](const json& v) {
         if (!v.is_boolean())
           throw std::invalid_argument("config.center_at_quantile: expected a boolean");
         o.center = v.get<bool>();
         o.center_given = true;
       }},
      {"epsilon", "--epsilon",
       [&](const json& v) { o.epsilon = field_number(v, "epsilon"); }},
      {"fd_step", "--fd-step",
       [&](const json& v) { o.fd_step = field_number(v, "fd_step"); }},
      {"family", "--family", [&](const json& v) { o.family = field_string(v, "family"); }},
      {"target", "--target", [&](const json& v) { o.target = field_string(v, "target"); }},
  };

  for (const auto& [key, value] : doc.items()) {
    const ConfigField* field = nullptr;
    for (const ConfigField& f : fields)
      if (key == f.key) field = &f;
    if (!field)
      throw std::invalid_argument("config." + key + ": unknown field");
    CLI::Option* opt = sub->get_option_no_throw(field->flag);
    if (!opt)
      throw std::invalid_argument("config." + key + ": not a field of subcommand " +
                                  sub->get_name());
    if (opt->count() > 0) continue;
    field->apply(value);
  }
}

// ---------------------------------------------------------------------------
// Subcommand handlers.

int cmd_simulate(Options& o) {
  const LossModel model = load_model(o);
  const std::vector<double> x = resolve_x(o);
  std::vector<std::pair<int, int>> cols;
  if (o.axis_given || o.order_given) cols.emplace_back(o.axis, o.order);
  const SampleSet set =
      draw(model, x, static_cast<std::size_t>(o.n_samples), o.seed, cols, o.threads);

  const double m = mean(set.losses);
  const double sd = std::sqrt(sample_variance(set.losses));
  const auto [mn, mx] = std::minmax_element(set.losses.begin(), set.losses.end());
  json results{{"count", set.count}, {"csv", nullptr},    {"max_loss", *mx},
               {"mean_loss", m},     {"min_loss", *mn},   {"sd_loss", sd}};
  if (!o.out_dir.empty()) {
    fs::create_directories(o.out_dir);
    save(set, (fs::path(o.out_dir) / "samples.csv").string());
    results["csv"] = "samples.csv";
  }
  std::printf("simulate: count=%zu mean=%.10g sd=%.10g min=%.10g max=%.10g\n", set.count,
              m, sd, *mn, *mx);

  json config{{"command", "simulate"},
              {"model", model.to_json()},
              {"x", x},
              {"n_samples", o.n_samples},
              {"seed", o.seed},
              {"axis", cols.empty() ? json(nullptr) : json(o.axis)},
              {"order", cols.empty() ? json(nullptr) : json(o.order)}};
  return finish(o, "simulate", std::move(config), std::move(results), json::object());
}

int cmd_var(Options& o) {
  const LossModel model = load_model(o);
  const std::vector<double> x = resolve_x(o);
  const SampleSet set =
      draw(model, x, static_cast<std::size_t>(o.n_samples), o.seed, {}, o.threads);
  const double v = var(set, o.alpha);
  std::printf("var: alpha=%.10g var=%.10g\n", o.alpha, v);

  json oracle = nullptr;
  if (const auto p = gaussian_params(model)) {
    const GaussianTail gt = gaussian_var_es(*p, x, o.alpha);
    oracle = json{{"var", gt.q}};
    std::printf("oracle: var=%.10g\n", gt.q);
  }
  json config{{"command", "var"},     {"model", model.to_json()},
              {"x", x},               {"alpha", o.alpha},
              {"n_samples", o.n_samples}, {"seed", o.seed}};
  return finish(o, "var", std::move(config), json{{"var", v}}, json::object(),
                std::move(oracle));
}

int cmd_es(Options& o) {
  const LossModel model = load_model(o);
  const std::vector<double> x = resolve_x(o);
  const SampleSet set =
      draw(model, x, static_cast<std::size_t>(o.n_samples), o.seed, {}, o.threads);
  const TailEstimate t = es(set, o.alpha);
  const double qi = es_quantile_integral(set, o.alpha);
  const double gap = std::fabs(t.es - qi);
  const bool dual_ok = gap <= 1e-12 * std::max(1.0, std::fabs(t.es));
  std::printf("es: var=%.10g es=%.10g atom=%.10g se=%.10g\n", t.var, t.es, t.atom,
              t.standard_error);

  json results{{"atom", t.atom},
               {"dual_gap", gap},
               {"es", t.es},
               {"quantile_integral", qi},
               {"standard_error", t.standard_error},
               {"var", t.var}};
  json verdicts{{"dual_form", {{"gap", gap}, {"pass", dual_ok}}}};
  json oracle = nullptr;
  if (const auto p = gaussian_params(model)) {
    const GaussianTail gt = gaussian_var_es(*p, x, o.alpha);
    oracle = json{{"es", gt.es}, {"var", gt.q}};
    std::printf("oracle: var=%.10g es=%.10g\n", gt.q, gt.es);
  }
  json config{{"command", "es"},     {"model", model.to_json()},
              {"x", x},              {"alpha", o.alpha},
              {"n_samples", o.n_samples}, {"seed", o.seed}};
  return finish(o, "es", std::move(config), std::move(results), std::move(verdicts),
                std::move(oracle));
}

int cmd_es_deriv(Options& o) {
  const LossModel model = load_model(o);
  const std::vector<double> x = resolve_x(o);

  EsMode mode;
  if (o.mode == "auto") {
    mode = model.continuity() == LawType::absolutely_continuous
               ? EsMode::continuous_eq319
               : EsMode::general_eq304;
  } else if (o.mode == "continuous_eq319") {
    mode = EsMode::continuous_eq319;
  } else if (o.mode == "general_eq304") {
    mode = EsMode::general_eq304;
  } else {
    throw std::invalid_argument("--mode: expected auto, continuous_eq319 or general_eq304");
  }

  long qfd = 64;
  if (!o.msched_csv.empty()) {
    const std::vector<long> ms = parse_longs(o.msched_csv, "--m-schedule");
    if (ms.empty()) throw std::invalid_argument("--m-schedule: empty schedule");
    qfd = ms.back();
    if (qfd < 4) throw std::invalid_argument("--m-schedule: last entry must be >= 4");
  }
  const std::vector<long> resolved_ms{qfd / 4, qfd / 2, qfd};

  const std::vector<std::pair<int, int>> cols{{o.axis, o.order}};
  const SampleSet set =
      draw(model, x, static_cast<std::size_t>(o.n_samples), o.seed, cols, o.threads);
  const TailEstimate t =
      es_derivative(model, x, o.alpha, o.axis, o.order, set, mode, qfd, o.threads);
  const MonotonicityReport diag =
      tail_monotonicity_diagnostic(model, x, o.alpha, o.axis, set, {}, 0.01, 0.0,
                                   o.threads);

  std::printf("es-deriv: d^%d ES/dx_%d^%d = %.10g (se %.10g), mode=%s\n", o.order,
              o.axis, o.order, t.derivative->value, t.derivative->stderr_,
              to_string(mode).c_str());
  std::printf("tail monotonicity: violation fraction %.10g over %zu band members\n",
              diag.violation_fraction, diag.band_count);

  json results{{"diagnostic", diagnostic_json(diag)},
               {"quantile_dd_stable", t.quantile_dd_stable},
               {"tail", t.to_json()}};
  json verdicts{{"premise",
                 {{"pass", diag.pass}, {"violation_fraction", diag.violation_fraction}}}};
  if (mode == EsMode::general_eq304)
    verdicts["quantile_dd"] = {{"pass", t.quantile_dd_stable}};

  json oracle = nullptr;
  if (const auto p = gaussian_params(model)) {
    const GaussianTail gt = gaussian_var_es(*p, x, o.alpha);
    oracle = json{{"es", gt.es}, {"var", gt.q}};
    if (o.order == 1)
      oracle["es_gradient"] = gaussian_es_gradient(*p, x, o.alpha, o.axis);
    if (o.order == 2)
      oracle["es_hessian_diag"] = gaussian_es_hessian_diag(*p, x, o.alpha, o.axis);
  }
  json config{{"command", "es-deriv"}, {"model", model.to_json()},
              {"x", x},                {"alpha", o.alpha},
              {"n_samples", o.n_samples},  {"seed", o.seed},
              {"axis", o.axis},        {"order", o.order},
              {"mode", to_string(mode)},   {"m_schedule", resolved_ms}};
  return finish(o, "es-deriv", std::move(config), std::move(results), std::move(verdicts),
                std::move(oracle));
}

int cmd_var_deriv(Options& o) {
  const LossModel model = load_model(o);
  const std::vector<double> x = resolve_x(o);
  if (model.continuity() != LawType::absolutely_continuous)
    throw not_applicable_error(
        "var-deriv requires an absolutely continuous loss law; model '" + model.id() +
        "' is " + to_string(model.continuity()));

  const std::vector<std::pair<int, int>> cols{{o.axis, 1}};
  const SampleSet set =
      draw(model, x, static_cast<std::size_t>(o.n_samples), o.seed, cols, o.threads);
  const VarDerivative vd = var_derivative(set, o.alpha, o.axis, o.epsilon);
  std::printf("var-deriv: dVaR/dx_%d = %.10g (se %.10g, epsilon %.10g, count %zu)\n",
              o.axis, vd.value, vd.standard_error, vd.epsilon, vd.count);

  json oracle = nullptr;
  if (const auto p = gaussian_params(model)) {
    const GaussianTail gt = gaussian_var_es(*p, x, o.alpha);
    oracle = json{{"var", gt.q},
                  {"var_gradient", gaussian_var_gradient(*p, x, o.alpha, o.axis)}};
    std::printf("oracle: var_gradient=%.10g\n", oracle["var_gradient"].get<double>());
  }
  json results{{"count", vd.count},
               {"epsilon", vd.epsilon},
               {"standard_error", vd.standard_error},
               {"value", vd.value}};
  json config{{"command", "var-deriv"}, {"model", model.to_json()},
              {"x", x},                 {"alpha", o.alpha},
              {"n_samples", o.n_samples},   {"seed", o.seed},
              {"axis", o.axis},         {"epsilon", o.epsilon}};
  return finish(o, "var-deriv", std::move(config), std::move(results), json::object(),
                std::move(oracle));
}

int cmd_verify_prop1(Options& o) {
  const LossModel model = load_model(o);
  const std::vector<double> x = resolve_x(o);
  Prop1Config cfg;
  cfg.sample_count = static_cast<std::size_t>(o.n_samples);
  cfg.seed = o.seed;
  cfg.center_at_quantile = o.center;
  cfg.alpha = o.alpha;
  cfg.threads = o.threads;
  if (!o.bands_csv.empty()) cfg.band_schedule = parse_doubles(o.bands_csv, "--bands");
  const LevelSetReport rep = verify_proposition1(model, x, o.axis, o.order, cfg);

  std::printf(
      "proposition 1: estimate=%.10g abs=%.10g prob_zero=%.10g mass=%.10g verdict=%s\n",
      rep.estimate, rep.abs_estimate, rep.prob_zero_deriv, rep.conditioning_mass,
      to_string(rep.verdict).c_str());

  json verdicts{{"proposition1",
                 {{"pass", rep.verdict == Verdict::pass},
                  {"verdict", to_string(rep.verdict)}}}};
  json config{{"command", "verify-prop1"},
              {"model", model.to_json()},
              {"x", x},
              {"alpha", o.alpha},
              {"n_samples", o.n_samples},
              {"seed", o.seed},
              {"axis", o.axis},
              {"order", o.order},
              {"center_at_quantile", o.center},
              {"bands", o.bands_csv.empty() ? json(nullptr) : json(cfg.band_schedule)}};
  return finish(o, "verify-prop1", std::move(config),
                json{{"level_set", rep.to_json()}}, std::move(verdicts));
}

int cmd_verify_prop2(Options& o) {
  const LossModel model = load_model(o);
  const std::vector<double> x = resolve_x(o);
  Prop2Config cfg;
  cfg.sample_count = static_cast<std::size_t>(o.n_samples);
  cfg.seed = o.seed;
  cfg.center_at_quantile = o.center_given ? o.center : true;
  cfg.alpha = o.alpha;
  cfg.band_epsilon = o.epsilon;
  cfg.threads = o.threads;
  const Prop2Report rep = verify_proposition2(model, x, cfg);

  std::printf("proposition 2: max euler residual=%.10g symmetry residual=%.10g verdict=%s\n",
              rep.max_euler_residual, rep.symmetry_residual,
              to_string(rep.verdict).c_str());

  json verdicts{{"proposition2",
                 {{"pass", rep.verdict == Verdict::pass},
                  {"verdict", to_string(rep.verdict)}}}};
  json config{{"command", "verify-prop2"},
              {"model", model.to_json()},
              {"x", x},
              {"alpha", o.alpha},
              {"n_samples", o.n_samples},
              {"seed", o.seed},
              {"center_at_quantile", cfg.center_at_quantile},
              {"epsilon", o.epsilon}};
  return finish(o, "verify-prop2", std::move(config),
                json{{"proposition2", rep.to_json()}}, std::move(verdicts));
}

int cmd_lemma1(Options& o) {
  std::vector<long> schedule{10, 100, 1000};
  if (!o.msched_csv.empty()) schedule = parse_longs(o.msched_csv, "--m-schedule");

  FamilyValue H;
  FamilyEvent A;
  if (o.family == "bounded") {
    H = [](long, double) { return 1.0; };
    A = [](long m, double u) { return u <= 1.0 / static_cast<double>(m); };
  } else if (o.family == "unbounded") {
    H = [](long m, double) { return static_cast<double>(m); };
    A = [](long m, double u) { return u <= 1.0 / static_cast<double>(m); };
  } else if (o.family == "empty") {
    H = [](long, double) { return 1.0; };
    A = [](long, double) { return false; };
  } else {
    throw std::invalid_argument("--family: expected bounded, unbounded or empty");
  }

  const Lemma1Report rep =
      lemma1_probe(H, A, schedule, static_cast<std::size_t>(o.n_samples), o.seed);
  for (const Lemma1Row& r : rep.rows)
    std::printf("m=%ld: estimate=%.10g (se %.10g) abs=%.10g\n", r.m, r.estimate,
                r.standard_error, r.abs_estimate);

  json config{{"command", "lemma1-probe"},
              {"family", o.family},
              {"m_schedule", schedule},
              {"n_samples", o.n_samples},
              {"seed", o.seed}};
  return finish(o, "lemma1-probe", std::move(config), json{{"probe", rep.to_json()}},
                json{{"lemma1", {{"pass", rep.pass}}}});
}

int cmd_diverge_check(Options& o) {
  const LossModel model = load_model(o);
  const std::vector<double> x = resolve_x(o);
  const int order = o.order_given ? o.order : 2;
  if (o.fd_step <= 0.0) throw std::invalid_argument("--fd-step must be positive");

  const std::vector<std::pair<int, int>> cols{{o.axis, order}};
  const SampleSet set =
      draw(model, x, static_cast<std::size_t>(o.n_samples), o.seed, cols, o.threads);
  const TailEstimate naive = es_derivative(model, x, o.alpha, o.axis, order, set,
                                           EsMode::continuous_eq319, 64, o.threads);
  const FdResult fd =
      fd_of_mc_es(model, x, o.alpha, o.axis, order, o.fd_step,
                  static_cast<std::size_t>(o.n_samples), o.seed, o.threads);
  const MonotonicityReport diag =
      tail_monotonicity_diagnostic(model, x, o.alpha, o.axis, set, {}, 0.01, 0.0,
                                   o.threads);
  const double discrepancy = std::fabs(naive.derivative->value - fd.value);

  std::printf("naive tail-average estimate: %.10g (se %.10g)\n",
              naive.derivative->value, naive.derivative->stderr_);
  std::printf("finite-difference estimate:  %.10g (se %.10g, step %.10g)\n", fd.value,
              fd.standard_error, fd.step);
  std::printf("discrepancy: %.10g\n", discrepancy);
  std::printf("tail monotonicity: violation fraction %.10g over %zu band members\n",
              diag.violation_fraction, diag.band_count);

  json results{{"diagnostic", diagnostic_json(diag)},
               {"discrepancy", discrepancy},
               {"fd",
                {{"degenerate", fd.degenerate},
                 {"standard_error", fd.standard_error},
                 {"step", fd.step},
                 {"value", fd.value}}},
               {"naive", naive.to_json()}};
  json verdicts{{"premise",
                 {{"pass", diag.pass}, {"violation_fraction", diag.violation_fraction}}}};
  json oracle = nullptr;
  if (const auto p = gaussian_params(model)) {
    if (order == 1) oracle = json{{"es_gradient", gaussian_es_gradient(*p, x, o.alpha, o.axis)}};
    if (order == 2)
      oracle = json{{"es_hessian_diag", gaussian_es_hessian_diag(*p, x, o.alpha, o.axis)}};
  }
  json config{{"command", "diverge-check"}, {"model", model.to_json()},
              {"x", x},                     {"alpha", o.alpha},
              {"n_samples", o.n_samples},       {"seed", o.seed},
              {"axis", o.axis},             {"order", order},
              {"fd_step", o.fd_step}};
  return finish(o, "diverge-check", std::move(config), std::move(results),
                std::move(verdicts), std::move(oracle));
}

int cmd_euler(Options& o) {
  const LossModel model = load_model(o);
  const std::vector<double> x = resolve_x(o);
  std::vector<std::pair<int, int>> cols;
  for (std::size_t i = 1; i <= model.dim(); ++i)
    cols.emplace_back(static_cast<int>(i), 1);
  const SampleSet set =
      draw(model, x, static_cast<std::size_t>(o.n_samples), o.seed, cols, o.threads);
  const EulerReport rep = euler_allocation(model, x, o.alpha, set, o.threads);
  const bool pass = rep.relative_residual <= 0.01;
  std::printf("euler: total=%.10g es=%.10g relative residual=%.10g\n", rep.total, rep.es,
              rep.relative_residual);

  json oracle = nullptr;
  if (const auto p = gaussian_params(model)) {
    const GaussianTail gt = gaussian_var_es(*p, x, o.alpha);
    NeumaierSum total;
    for (std::size_t i = 0; i < x.size(); ++i)
      total.add(x[i] * gaussian_es_gradient(*p, x, o.alpha, static_cast<int>(i + 1)));
    oracle = json{{"es", gt.es}, {"es_total_gradient", total.value()}};
  }
  json verdicts{{"euler", {{"pass", pass}, {"relative_residual", rep.relative_residual}}}};
  json config{{"command", "euler"},   {"model", model.to_json()},
              {"x", x},               {"alpha", o.alpha},
              {"n_samples", o.n_samples}, {"seed", o.seed}};
  return finish(o, "euler", std::move(config), json{{"allocation", rep.to_json()}},
                std::move(verdicts), std::move(oracle));
}

int cmd_convergence(Options& o) {
  const LossModel model = load_model(o);
  const std::vector<double> x = resolve_x(o);
  std::vector<long> schedule{10, 20, 40};
  if (!o.msched_csv.empty()) schedule = parse_longs(o.msched_csv, "--m-schedule");

  WeightFunction f;
  if (o.target == "loss") {
    const PrimitiveSample probe = model.primitive_at(o.seed, 0);
    f = [&model, probe](std::span<const double> xs) { return model.evaluate(xs, probe); };
  } else if (o.target == "quantile") {
    f = [&](std::span<const double> xs) {
      return empirical_quantile(
          losses_at(model, xs, static_cast<std::size_t>(o.n_samples), o.seed, o.threads),
          o.alpha);
    };
  } else if (o.target == "es") {
    f = [&](std::span<const double> xs) {
      return es_from_losses(
                 losses_at(model, xs, static_cast<std::size_t>(o.n_samples), o.seed,
                           o.threads),
                 o.alpha)
          .es;
    };
  } else {
    throw std::invalid_argument("--target: expected loss, quantile or es");
  }

  const ConvergenceTable table = convergence_table(f, x, o.axis, o.order, schedule);
  for (const ConvergenceRow& r : table.rows)
    std::printf("m=%ld: estimate=%.10g\n", r.m, r.estimate);
  std::printf("extrapolated=%.10g stable=%s\n", table.extrapolated,
              table.stable ? "yes" : "no");

  json rows = json::array();
  for (const ConvergenceRow& r : table.rows)
    rows.push_back({{"estimate", r.estimate}, {"m", r.m}});
  json results{{"csv", nullptr},
               {"table",
                {{"extrapolated", table.extrapolated},
                 {"rows", std::move(rows)},
                 {"stable", table.stable}}}};
  if (!o.out_dir.empty()) {
    fs::create_directories(o.out_dir);
    write_convergence_csv(table, (fs::path(o.out_dir) / "table.csv").string());
    results["csv"] = "table.csv";
  }
  json config{{"command", "convergence"},
              {"model", model.to_json()},
              {"x", x},
              {"alpha", o.alpha},
              {"n_samples", o.n_samples},
              {"seed", o.seed},
              {"axis", o.axis},
              {"order", o.order},
              {"target", o.target},
              {"m_schedule", schedule}};
  return finish(o, "convergence", std::move(config), std::move(results),
                json{{"stable", {{"pass", table.stable}}}});
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Monte Carlo tail-risk measures with derivative verifiers"};
  app.name("riskdiff");
  app.require_subcommand(1);

  const auto add_output = [&](CLI::App* s) {
    s->add_option("--out", o.out_dir, "output directory for report.json and tables");
    s->add_flag("--no-timestamp", o.no_timestamp,
                "omit generated_at so reports are byte-reproducible");
    s->add_option("--config", o.config_path,
                  "JSON file of option defaults; command-line flags win");
  };
  const auto add_model = [&](CLI::App* s) {
    s->add_option("--model", o.model_path, "loss model JSON file");
    s->add_option("--x", o.x_csv, "portfolio weights, comma separated");
    s->add_option("--n-samples", o.n_samples, "Monte Carlo sample count");
    s->add_option("--seed", o.seed, "RNG seed");
    s->add_option("--threads", o.threads, "worker threads (does not affect results)");
  };
  const auto add_alpha = [&](CLI::App* s) {
    s->add_option("--alpha", o.alpha, "tail level in (0, 1)");
  };
  const auto add_axis = [&](CLI::App* s) {
    s->add_option("--axis", o.axis, "1-based weight axis");
  };
  const auto add_order = [&](CLI::App* s, const char* help) {
    s->add_option("--order", o.order, help);
  };

  CLI::App* s_sim = app.add_subcommand(
      "simulate", "Draw a sample set and report loss statistics");
  add_model(s_sim);
  add_axis(s_sim);
  add_order(s_sim, "derivative order for the optional derivative column");
  add_output(s_sim);

  CLI::App* s_var = app.add_subcommand("var", "Empirical value-at-risk");
  add_model(s_var);
  add_alpha(s_var);
  add_output(s_var);

  CLI::App* s_es = app.add_subcommand(
      "es", "Expected shortfall with the dual-form consistency check");
  add_model(s_es);
  add_alpha(s_es);
  add_output(s_es);

  CLI::App* s_esd = app.add_subcommand(
      "es-deriv", "Derivative of expected shortfall in a weight axis");
  add_model(s_esd);
  add_alpha(s_esd);
  add_axis(s_esd);
  add_order(s_esd, "derivative order");
  s_esd->add_option("--mode", o.mode,
                    "auto, continuous_eq319 or general_eq304 (auto follows the model law)");
  s_esd->add_option("--m-schedule", o.msched_csv,
                    "quantile divided-difference schedule; the last entry sets the step");
  add_output(s_esd);

  CLI::App* s_vard = app.add_subcommand(
      "var-deriv", "Derivative of value-at-risk via the banded conditional mean");
  add_model(s_vard);
  add_alpha(s_vard);
  add_axis(s_vard);
  s_vard->add_option("--epsilon", o.epsilon, "band half-width; 0 selects sd(L)*N^(-1/3)");
  add_output(s_vard);

  CLI::App* s_p1 = app.add_subcommand(
      "verify-prop1", "Check the vanishing conditional tail-derivative conclusions");
  add_model(s_p1);
  add_alpha(s_p1);
  add_axis(s_p1);
  add_order(s_p1, "derivative order");
  s_p1->add_option("--bands", o.bands_csv,
                   "band schedule, comma separated and decreasing; empty selects auto");
  s_p1->add_option("--center-at-quantile", o.center,
                   "condition on L - q_alpha(L) = 0 instead of L = 0");
  add_output(s_p1);

  CLI::App* s_p2 = app.add_subcommand(
      "verify-prop2", "Check the homogeneous-loss conditional-gradient conclusions");
  add_model(s_p2);
  add_alpha(s_p2);
  s_p2->add_option("--center-at-quantile", o.center,
                   "condition on L - q_alpha(L) = 0 instead of L = 0");
  s_p2->add_option("--epsilon", o.epsilon, "band half-width; 0 selects sd(H)*N^(-1/3)");
  add_output(s_p2);

  CLI::App* s_l1 = app.add_subcommand(
      "lemma1-probe", "Vanishing-expectation probe for an indexed family");
  s_l1->add_option("--family", o.family, "bounded, unbounded or empty");
  s_l1->add_option("--m-schedule", o.msched_csv, "index schedule, comma separated");
  s_l1->add_option("--n-samples", o.n_samples, "Monte Carlo sample count");
  s_l1->add_option("--seed", o.seed, "RNG seed");
  s_l1->add_option("--threads", o.threads,
                   "accepted for interface uniformity; the probe is single-pass");
  add_output(s_l1);

  CLI::App* s_div = app.add_subcommand(
      "diverge-check",
      "Compare the naive tail-average derivative against a finite-difference oracle");
  add_model(s_div);
  add_alpha(s_div);
  add_axis(s_div);
  add_order(s_div, "derivative order (default 2)");
  s_div->add_option("--fd-step", o.fd_step, "finite-difference step");
  add_output(s_div);

  CLI::App* s_eul = app.add_subcommand(
      "euler", "Full risk allocation x_i * dES/dx_i for a degree-1 homogeneous loss");
  add_model(s_eul);
  add_alpha(s_eul);
  add_output(s_eul);

  CLI::App* s_conv = app.add_subcommand(
      "convergence", "Divided-difference convergence table for a scalar target");
  add_model(s_conv);
  add_alpha(s_conv);
  add_axis(s_conv);
  add_order(s_conv, "derivative order");
  s_conv->add_option("--target", o.target, "loss, quantile or es");
  s_conv->add_option("--m-schedule", o.msched_csv,
                     "step denominators, comma separated and increasing");
  add_output(s_conv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::fputs(app.help().c_str(), stderr);
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    merge_config(sub, o);
    const auto mark = [&](const char* flag, bool& given) {
      CLI::Option* opt = sub->get_option_no_throw(flag);
      if (opt && opt->count() > 0) given = true;
    };
    mark("--axis", o.axis_given);
    mark("--order", o.order_given);
    mark("--center-at-quantile", o.center_given);
    check_common(o);
    if (!(o.alpha > 0.0) || !(o.alpha < 1.0))
      throw std::invalid_argument("--alpha must lie strictly inside (0, 1)");

    const std::string name = sub->get_name();
    if (name == "simulate") return cmd_simulate(o);
    if (name == "var") return cmd_var(o);
    if (name == "es") return cmd_es(o);
    if (name == "es-deriv") return cmd_es_deriv(o);
    if (name == "var-deriv") return cmd_var_deriv(o);
    if (name == "verify-prop1") return cmd_verify_prop1(o);
    if (name == "verify-prop2") return cmd_verify_prop2(o);
    if (name == "lemma1-probe") return cmd_lemma1(o);
    if (name == "diverge-check") return cmd_diverge_check(o);
    if (name == "euler") return cmd_euler(o);
    if (name == "convergence") return cmd_convergence(o);
    throw std::invalid_argument("unknown subcommand " + name);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
