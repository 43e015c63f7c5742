#include "gnmk/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>

namespace gnmk::experiment {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg)
{
    throw ConfigError(path + ": " + msg);
}

std::string join(const std::string& path, const std::string& key)
{
    return path.empty() ? key : path + "." + key;
}

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed)
{
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
        if (!known) fail(join(path, it.key()), "unknown field");
    }
}

const json* section(const json& obj, const std::string& path, const char* key)
{
    if (!obj.contains(key)) return nullptr;
    const json& s = obj.at(key);
    if (!s.is_object()) fail(join(path, key), "expected an object");
    return &s;
}

double number(const json* obj, const std::string& path, const char* key, double def)
{
    if (!obj || !obj->contains(key)) return def;
    const json& v = obj->at(key);
    if (!v.is_number()) fail(join(path, key), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(join(path, key), "must be finite");
    return x;
}

long integer(const json* obj, const std::string& path, const char* key, long def)
{
    if (!obj || !obj->contains(key)) return def;
    const json& v = obj->at(key);
    if (!v.is_number_integer()) fail(join(path, key), "expected an integer");
    return v.get<long>();
}

bool boolean(const json* obj, const std::string& path, const char* key, bool def)
{
    if (!obj || !obj->contains(key)) return def;
    const json& v = obj->at(key);
    if (!v.is_boolean()) fail(join(path, key), "expected true or false");
    return v.get<bool>();
}

std::string string(const json* obj, const std::string& path, const char* key, const std::string& def)
{
    if (!obj || !obj->contains(key)) return def;
    const json& v = obj->at(key);
    if (!v.is_string()) fail(join(path, key), "expected a string");
    return v.get<std::string>();
}

std::vector<double> numbers(const json* obj, const std::string& path, const char* key, std::vector<double> def)
{
    if (!obj || !obj->contains(key)) return def;
    const json& v = obj->at(key);
    if (!v.is_array()) fail(join(path, key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string p = join(path, key) + "[" + std::to_string(i) + "]";
        if (!v[i].is_number()) fail(p, "expected a number");
        out.push_back(v[i].get<double>());
        if (!std::isfinite(out.back())) fail(p, "must be finite");
    }
    return out;
}

std::vector<std::string> strings(const json* obj, const std::string& path, const char* key,
                                 std::vector<std::string> def)
{
    if (!obj || !obj->contains(key)) return def;
    const json& v = obj->at(key);
    if (!v.is_array()) fail(join(path, key), "expected an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_string()) fail(join(path, key) + "[" + std::to_string(i) + "]", "expected a string");
        out.push_back(v[i].get<std::string>());
    }
    return out;
}

Vec vec3(const std::vector<double>& v, const std::string& path)
{
    if (v.size() != 3) fail(path, "expected 3 components");
    return Eigen::Map<const Vec>(v.data(), 3);
}

std::vector<double> to_std(const Vec& v)
{
    return std::vector<double>(v.data(), v.data() + v.size());
}

bool is_multiple(double a, double b)
{
    const double r = a / b;
    return std::abs(r - std::round(r)) <= 1e-9 * std::max(1.0, r);
}

template <class F>
void wrap(const std::string& path, F&& f)
{
    try {
        f();
    } catch (const std::invalid_argument& e) {
        fail(path, e.what());
    }
}

std::string fnv1a(const std::string& text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

dynsys::Flow make_flow(const ExperimentConfig& cfg)
{
    return dynsys::Flow{dynsys::lorenz84_hours(cfg.system, cfg.hours_per_unit), cfg.integrator};
}

pce::PCExpansion make_prior(const ExperimentConfig& cfg)
{
    return pce::PCExpansion::linear(cfg.prior_mean, cfg.prior_std.asDiagonal().toDenseMatrix());
}

basis_adapt::ForecastConfig forecast_config(const ExperimentConfig& cfg)
{
    basis_adapt::ForecastConfig fc = cfg.forecast;
    fc.train_samples = cfg.samples;
    fc.seed = mix_seed(cfg.seed, 1);
    return fc;
}

filter::FilterConfig filter_config(const ExperimentConfig& cfg)
{
    filter::FilterConfig fc = cfg.filter;
    fc.samples = cfg.samples;
    fc.seed = mix_seed(cfg.seed, 2);
    return fc;
}

std::string time_name(double t)
{
    std::ostringstream os;
    os << t;
    return os.str();
}

std::vector<std::string> flag_names(const Flags& f)
{
    std::vector<std::string> out;
    for (Flag x : f.items()) out.emplace_back(flag_name(x));
    return out;
}

std::string declared_hash(const std::filesystem::path& file)
{
    const auto ext = file.extension().string();
    if (ext == ".json") {
        std::ifstream is(file);
        const json j = json::parse(is, nullptr, false);
        if (j.is_object() && j.contains("config_hash") && j["config_hash"].is_string())
            return j["config_hash"].get<std::string>();
        return {};
    }
    if (ext != ".csv" && ext != ".pce") return {};
    std::ifstream is(file);
    std::string line;
    const std::string tag = "# config_hash=";
    for (int i = 0; i < 3 && std::getline(is, line); ++i) {
        if (line.rfind(tag, 0) == 0) return line.substr(tag.size());
    }
    return {};
}

}  // namespace

const char* smoother_name(SmootherKind k)
{
    switch (k) {
    case SmootherKind::ds: return "ds";
    case SmootherKind::ps1: return "ps1";
    case SmootherKind::ps2: return "ps2";
    }
    return "?";
}

SmootherKind parse_smoother(const std::string& name)
{
    if (name == "ds") return SmootherKind::ds;
    if (name == "ps1") return SmootherKind::ps1;
    if (name == "ps2") return SmootherKind::ps2;
    throw std::invalid_argument("unknown smoother '" + name + "' (expected ds, ps1 or ps2)");
}

ExperimentConfig default_config()
{
    ExperimentConfig c;
    c.truth = Vec(3);
    c.truth << 1.0, 0.0, -0.75;
    c.prior_mean = Vec::Zero(3);
    c.prior_std = Vec::Ones(3);
    c.observed = {0, 1, 2};
    c.fit_times = {96.0};
    c.fit_policies = {basis_adapt::BasisPolicy::fixed_hermite, basis_adapt::BasisPolicy::mgs,
                      basis_adapt::BasisPolicy::nmap};
    c.jacobian_windows = {6.0, 12.0, 24.0};
    c.sweep_delta_tau = {6.0, 3.0};
    c.sweep_noise = {0.05, 0.1, 0.2};
    c.sweep_smoother = {SmootherKind::ps2};
    return c;
}

ExperimentConfig parse_config(const json& j)
{
    if (!j.is_object()) fail("(root)", "expected an object");
    check_keys(j, "", {"seed", "system", "truth", "prior", "time", "measurement", "smoother", "basis", "samples",
                       "integrator", "output", "fit_pce", "jacobian_check", "sweep"});
    ExperimentConfig c = default_config();

    if (!j.contains("seed")) fail("seed", "required");
    if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<long long>() >= 0))
        fail("seed", "expected a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();

    if (const json* s = section(j, "", "system")) {
        check_keys(*s, "system", {"a", "b", "F1", "F2", "hours_per_unit"});
        c.system.a = number(s, "system", "a", c.system.a);
        c.system.b = number(s, "system", "b", c.system.b);
        c.system.F1 = number(s, "system", "F1", c.system.F1);
        c.system.F2 = number(s, "system", "F2", c.system.F2);
        c.hours_per_unit = number(s, "system", "hours_per_unit", c.hours_per_unit);
        if (!(c.hours_per_unit > 0.0)) fail("system.hours_per_unit", "must be positive");
    }
    c.truth = vec3(numbers(&j, "", "truth", to_std(c.truth)), "truth");

    if (const json* s = section(j, "", "prior")) {
        check_keys(*s, "prior", {"mean", "std"});
        c.prior_mean = vec3(numbers(s, "prior", "mean", to_std(c.prior_mean)), "prior.mean");
        c.prior_std = vec3(numbers(s, "prior", "std", to_std(c.prior_std)), "prior.std");
        if ((c.prior_std.array() <= 0.0).any()) fail("prior.std", "entries must be positive");
    }

    if (const json* s = section(j, "", "time")) {
        check_keys(*s, "time", {"start", "horizon", "report_step", "delta_tau"});
        c.t0 = number(s, "time", "start", c.t0);
        c.horizon = number(s, "time", "horizon", c.horizon);
        c.report_step = number(s, "time", "report_step", c.report_step);
        c.filter.delta_tau = number(s, "time", "delta_tau", c.filter.delta_tau);
    }
    if (c.horizon < c.t0) fail("time.horizon", "must not precede time.start");
    if (!(c.report_step > 0.0)) fail("time.report_step", "must be positive");
    if (!(c.filter.delta_tau > 0.0)) fail("time.delta_tau", "must be positive");
    if (c.horizon > c.t0 && !is_multiple(c.horizon - c.t0, c.report_step))
        fail("time.report_step", "must divide the window horizon - start");
    if (!is_multiple(c.report_step, c.filter.delta_tau))
        fail("time.delta_tau", "must divide time.report_step");

    if (const json* s = section(j, "", "measurement")) {
        check_keys(*s, "measurement", {"noise_coefficient", "noise_floor", "observed"});
        c.noise_coefficient = number(s, "measurement", "noise_coefficient", c.noise_coefficient);
        c.noise_floor = number(s, "measurement", "noise_floor", c.noise_floor);
        if (s->contains("observed")) {
            const auto obs = numbers(s, "measurement", "observed", {});
            c.observed.clear();
            for (double v : obs) {
                if (v != std::floor(v) || v < 0 || v > 2) fail("measurement.observed", "entries must be 0, 1 or 2");
                c.observed.push_back(static_cast<int>(v));
            }
        }
    }
    if (!(c.noise_coefficient > 0.0)) fail("measurement.noise_coefficient", "must be positive");
    if (!(c.noise_floor > 0.0)) fail("measurement.noise_floor", "must be positive");
    if (c.observed.empty()) fail("measurement.observed", "must not be empty");
    for (std::size_t i = 1; i < c.observed.size(); ++i) {
        if (c.observed[i] <= c.observed[i - 1]) fail("measurement.observed", "must be strictly increasing");
    }

    if (const json* s = section(j, "", "smoother")) {
        check_keys(*s, "smoother", {"kind", "map_mode", "tol", "max_iter", "bias_correct", "bias_invert", "pinv_rcond",
                                    "divergence_window", "model_error_var", "bias_samples"});
        wrap("smoother.kind", [&] { c.smoother = parse_smoother(string(s, "smoother", "kind", "ps2")); });
        wrap("smoother.map_mode",
             [&] { c.filter.map_mode = filter::parse_map_mode(string(s, "smoother", "map_mode", "projection")); });
        c.filter.tol = number(s, "smoother", "tol", c.filter.tol);
        c.filter.max_iter = static_cast<int>(integer(s, "smoother", "max_iter", c.filter.max_iter));
        c.filter.bias_correct = boolean(s, "smoother", "bias_correct", c.filter.bias_correct);
        c.filter.bias_invert = boolean(s, "smoother", "bias_invert", c.filter.bias_invert);
        c.filter.pinv_rcond = number(s, "smoother", "pinv_rcond", c.filter.pinv_rcond);
        c.filter.divergence_window =
            static_cast<int>(integer(s, "smoother", "divergence_window", c.filter.divergence_window));
        c.filter.model_error_var = number(s, "smoother", "model_error_var", c.filter.model_error_var);
        c.filter.bias_samples = integer(s, "smoother", "bias_samples", c.filter.bias_samples);
    }

    if (const json* s = section(j, "", "basis")) {
        check_keys(*s, "basis", {"policy", "order", "reexpand_order", "kl_tolerance", "anchor_step",
                                 "validation_samples", "work_samples"});
        wrap("basis.policy",
             [&] { c.forecast.policy = basis_adapt::parse_policy(string(s, "basis", "policy", "nmap")); });
        c.forecast.order = static_cast<int>(integer(s, "basis", "order", c.forecast.order));
        c.forecast.reexpand_order = static_cast<int>(integer(s, "basis", "reexpand_order", c.forecast.reexpand_order));
        c.forecast.kl_tolerance = number(s, "basis", "kl_tolerance", c.forecast.kl_tolerance);
        c.forecast.anchor_step = number(s, "basis", "anchor_step", c.forecast.anchor_step);
        c.forecast.validation_samples = integer(s, "basis", "validation_samples", c.forecast.validation_samples);
        c.forecast.work_samples = integer(s, "basis", "work_samples", c.forecast.work_samples);
    }
    c.filter.reduction.order = c.forecast.reexpand_order;
    c.filter.reduction.samples = c.forecast.work_samples;

    c.samples = integer(&j, "", "samples", c.samples);
    if (c.samples < 10) fail("samples", "must be >= 10");

    if (const json* s = section(j, "", "integrator")) {
        check_keys(*s, "integrator", {"abs_tol", "rel_tol", "initial_step", "max_step", "min_step"});
        c.integrator.abs_tol = number(s, "integrator", "abs_tol", c.integrator.abs_tol);
        c.integrator.rel_tol = number(s, "integrator", "rel_tol", c.integrator.rel_tol);
        c.integrator.initial_step = number(s, "integrator", "initial_step", c.integrator.initial_step);
        c.integrator.max_step = number(s, "integrator", "max_step", c.integrator.max_step);
        c.integrator.min_step = number(s, "integrator", "min_step", c.integrator.min_step);
    }

    if (const json* s = section(j, "", "output")) {
        check_keys(*s, "output", {"quantile_samples", "directory"});
        c.quantile_samples = integer(s, "output", "quantile_samples", c.quantile_samples);
        c.output_dir = string(s, "output", "directory", c.output_dir);
    }
    if (c.quantile_samples < 100) fail("output.quantile_samples", "must be >= 100");

    if (const json* s = section(j, "", "fit_pce")) {
        check_keys(*s, "fit_pce", {"times", "policies"});
        c.fit_times = numbers(s, "fit_pce", "times", c.fit_times);
        if (s->contains("policies")) {
            c.fit_policies.clear();
            for (const auto& p : strings(s, "fit_pce", "policies", {}))
                wrap("fit_pce.policies", [&] { c.fit_policies.push_back(basis_adapt::parse_policy(p)); });
        }
    }
    for (double t : c.fit_times) {
        if (t < c.t0) fail("fit_pce.times", "times must not precede time.start");
    }

    if (const json* s = section(j, "", "jacobian_check")) {
        check_keys(*s, "jacobian_check", {"windows", "runs"});
        c.jacobian_windows = numbers(s, "jacobian_check", "windows", c.jacobian_windows);
        c.jacobian_runs = static_cast<int>(integer(s, "jacobian_check", "runs", c.jacobian_runs));
    }
    for (double w : c.jacobian_windows) {
        if (!(w > 0.0)) fail("jacobian_check.windows", "windows must be positive");
    }
    if (c.jacobian_runs < 1) fail("jacobian_check.runs", "must be >= 1");

    if (const json* s = section(j, "", "sweep")) {
        check_keys(*s, "sweep", {"delta_tau", "noise_coefficient", "smoother"});
        c.sweep_delta_tau = numbers(s, "sweep", "delta_tau", c.sweep_delta_tau);
        c.sweep_noise = numbers(s, "sweep", "noise_coefficient", c.sweep_noise);
        if (s->contains("smoother")) {
            c.sweep_smoother.clear();
            for (const auto& k : strings(s, "sweep", "smoother", {}))
                wrap("sweep.smoother", [&] { c.sweep_smoother.push_back(parse_smoother(k)); });
        }
    }
    for (double d : c.sweep_delta_tau) {
        if (!(d > 0.0) || !is_multiple(c.report_step, d)) fail("sweep.delta_tau", "entries must divide time.report_step");
    }
    for (double n : c.sweep_noise) {
        if (!(n > 0.0)) fail("sweep.noise_coefficient", "entries must be positive");
    }

    wrap("smoother", [&] { c.filter.validate(); });
    wrap("basis", [&] { c.forecast.validate(); });
    wrap("integrator", [&] { c.integrator.validate(); });
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw ConfigError(path.string() + ": cannot open configuration file");
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j);
}

json to_json(const ExperimentConfig& c)
{
    json j;
    j["seed"] = c.seed;
    j["system"] = {{"a", c.system.a}, {"b", c.system.b}, {"F1", c.system.F1}, {"F2", c.system.F2},
                   {"hours_per_unit", c.hours_per_unit}};
    j["truth"] = to_std(c.truth);
    j["prior"] = {{"mean", to_std(c.prior_mean)}, {"std", to_std(c.prior_std)}};
    j["time"] = {{"start", c.t0}, {"horizon", c.horizon}, {"report_step", c.report_step},
                 {"delta_tau", c.filter.delta_tau}};
    j["measurement"] = {{"noise_coefficient", c.noise_coefficient}, {"noise_floor", c.noise_floor},
                        {"observed", c.observed}};
    j["smoother"] = {{"kind", smoother_name(c.smoother)},
                     {"map_mode", filter::map_mode_name(c.filter.map_mode)},
                     {"tol", c.filter.tol},
                     {"max_iter", c.filter.max_iter},
                     {"bias_correct", c.filter.bias_correct},
                     {"bias_invert", c.filter.bias_invert},
                     {"pinv_rcond", c.filter.pinv_rcond},
                     {"divergence_window", c.filter.divergence_window},
                     {"model_error_var", c.filter.model_error_var},
                     {"bias_samples", c.filter.bias_samples}};
    j["basis"] = {{"policy", basis_adapt::policy_name(c.forecast.policy)},
                  {"order", c.forecast.order},
                  {"reexpand_order", c.forecast.reexpand_order},
                  {"kl_tolerance", c.forecast.kl_tolerance},
                  {"anchor_step", c.forecast.anchor_step},
                  {"validation_samples", c.forecast.validation_samples},
                  {"work_samples", c.forecast.work_samples}};
    j["samples"] = c.samples;
    j["integrator"] = {{"abs_tol", c.integrator.abs_tol},           {"rel_tol", c.integrator.rel_tol},
                       {"initial_step", c.integrator.initial_step}, {"max_step", c.integrator.max_step},
                       {"min_step", c.integrator.min_step}};
    j["output"] = {{"quantile_samples", c.quantile_samples}};
    if (!c.output_dir.empty()) j["output"]["directory"] = c.output_dir;
    std::vector<std::string> policies;
    for (auto p : c.fit_policies) policies.emplace_back(basis_adapt::policy_name(p));
    j["fit_pce"] = {{"times", c.fit_times}, {"policies", policies}};
    j["jacobian_check"] = {{"windows", c.jacobian_windows}, {"runs", c.jacobian_runs}};
    std::vector<std::string> smoothers;
    for (auto k : c.sweep_smoother) smoothers.emplace_back(smoother_name(k));
    j["sweep"] = {{"delta_tau", c.sweep_delta_tau}, {"noise_coefficient", c.sweep_noise}, {"smoother", smoothers}};
    return j;
}

std::string config_hash(const ExperimentConfig& cfg)
{
    json j = to_json(cfg);
    j["output"].erase("directory");
    return fnv1a(j.dump());
}

std::vector<double> report_times(const ExperimentConfig& cfg)
{
    return filter::smoothing_times(cfg.t0, cfg.horizon, cfg.report_step);
}

Twin simulate(const ExperimentConfig& cfg)
{
    const dynsys::Flow flow = make_flow(cfg);
    Twin tw;
    tw.times = report_times(cfg);
    tw.truth.resize(static_cast<Eigen::Index>(tw.times.size()), 3);
    Vec x = cfg.truth;
    double t = cfg.t0;
    for (std::size_t k = 0; k < tw.times.size(); ++k) {
        if (tw.times[k] > t) x = flow(x, t, tw.times[k]);
        t = tw.times[k];
        tw.truth.row(static_cast<Eigen::Index>(k)) = x.transpose();
    }
    tw.truth_final = x;
    const auto m = static_cast<Eigen::Index>(cfg.observed.size());
    tw.noise_std.resize(m);
    tw.measurement.resize(m);
    const Mat xi = pce::sample_germ(1, static_cast<int>(m), mix_seed(cfg.seed, 3));
    for (Eigen::Index i = 0; i < m; ++i) {
        const double v = x(cfg.observed[static_cast<std::size_t>(i)]);
        tw.noise_std(i) = std::max(cfg.noise_coefficient * std::abs(v), cfg.noise_floor);
        tw.measurement(i) = v + tw.noise_std(i) * xi(0, i);
    }
    tw.model = filter::MeasurementModel(cfg.observed, 3, tw.noise_std.cwiseAbs2().asDiagonal().toDenseMatrix());
    return tw;
}

void pce_quantiles(const pce::PCExpansion& x, long n, std::uint64_t seed, Vec& p01, Vec& p99)
{
    const Mat s = pce::pce_eval_samples(x, pce::sample_germ(n, x.germ_dim(), seed));
    p01.resize(s.cols());
    p99.resize(s.cols());
    std::vector<double> col(static_cast<std::size_t>(n));
    auto quantile = [&](double q) {
        // Linear interpolation between order statistics.
        const double pos = q * static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        std::nth_element(col.begin(), col.begin() + static_cast<long>(lo), col.end());
        const double a = col[lo];
        if (lo + 1 >= col.size()) return a;
        const double b = *std::min_element(col.begin() + static_cast<long>(lo) + 1, col.end());
        return a + (pos - static_cast<double>(lo)) * (b - a);
    };
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
        for (long i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = s(i, c);
        p01(c) = quantile(0.01);
        p99(c) = quantile(0.99);
    }
}

RunSummary run_experiment(const ExperimentConfig& cfg)
{
    const auto start = std::chrono::steady_clock::now();
    RunSummary s;
    s.config_hash = config_hash(cfg);
    s.config = to_json(cfg);
    s.twin = simulate(cfg);

    const dynsys::Flow flow = make_flow(cfg);
    basis_adapt::StateForecaster forecaster(flow, make_prior(cfg), cfg.t0, forecast_config(cfg));
    const filter::Dynamics dyn = filter::make_dynamics(flow, forecaster);
    const filter::FilterConfig fcfg = filter_config(cfg);
    switch (cfg.smoother) {
    case SmootherKind::ds:
        s.result = filter::direct_smooth(s.twin.measurement, cfg.t0, cfg.horizon, s.twin.model, fcfg, dyn);
        break;
    case SmootherKind::ps1:
        s.result = filter::ps1_smooth(s.twin.measurement, cfg.t0, cfg.horizon, s.twin.model, fcfg, dyn);
        break;
    case SmootherKind::ps2:
        s.result = filter::ps2_smooth(s.twin.measurement, cfg.t0, cfg.horizon, s.twin.model, fcfg, dyn);
        break;
    }

    for (std::size_t k = 0; k < s.twin.times.size(); ++k) {
        const double t = s.twin.times[k];
        const filter::SmootherStep& step = s.result.at(t);
        ReportRow row;
        row.time = t;
        row.truth = s.twin.truth.row(static_cast<Eigen::Index>(k)).transpose();
        row.mean = pce::pce_mean(step.posterior);
        row.variance = pce::pce_cov(step.posterior).diagonal();
        pce_quantiles(step.posterior, cfg.quantile_samples, mix_seed(cfg.seed, 1000 + k), row.p01, row.p99);
        row.iterations = step.iterations;
        row.converged = step.converged;
        s.rows.push_back(std::move(row));
    }
    s.anchors = forecaster.anchors();
    s.flags = s.result.flags;
    s.flags.merge(forecaster.flags());
    s.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return s;
}

double coverage(const RunSummary& s)
{
    if (s.rows.empty()) return 0.0;
    std::size_t inside = 0;
    for (const auto& r : s.rows) {
        if ((r.truth.array() >= r.p01.array()).all() && (r.truth.array() <= r.p99.array()).all()) ++inside;
    }
    return static_cast<double>(inside) / static_cast<double>(s.rows.size());
}

std::vector<FitPceRecord> fit_pce_study(const ExperimentConfig& cfg)
{
    const dynsys::Flow flow = make_flow(cfg);
    std::vector<FitPceRecord> out;
    for (auto policy : cfg.fit_policies) {
        basis_adapt::ForecastConfig fc = forecast_config(cfg);
        fc.policy = policy;
        basis_adapt::StateForecaster f(flow, make_prior(cfg), cfg.t0, fc);
        for (double t : cfg.fit_times) out.push_back({policy, t, f.validation_error(t), f.anchors().size()});
    }
    return out;
}

Mat finite_difference_jacobian(const dynsys::Flow& flow, const Vec& x, double t0, double t1)
{
    dynsys::Flow fine = flow;
    fine.cfg.abs_tol = 1e-12;
    fine.cfg.rel_tol = 1e-12;
    Mat J(x.size(), x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double h = 1e-5 * std::max(1.0, std::abs(x(j)));
        Vec a = x, b = x;
        a(j) += h;
        b(j) -= h;
        J.col(j) = (fine(a, t0, t1) - fine(b, t0, t1)) / (2.0 * h);
    }
    return J;
}

std::vector<JacobianRecord> jacobian_check(const ExperimentConfig& base, double window, int run)
{
    ExperimentConfig cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(run);
    const double T = cfg.horizon;
    const double tt = T - window;
    if (tt < cfg.t0 - 1e-9) throw ConfigError("jacobian_check.windows: window longer than horizon - start");

    const Twin tw = simulate(cfg);
    const dynsys::Flow flow = make_flow(cfg);
    basis_adapt::StateForecaster forecaster(flow, make_prior(cfg), cfg.t0, forecast_config(cfg));
    const filter::Dynamics dyn = filter::make_dynamics(flow, forecaster);
    filter::FilterConfig fcfg = filter_config(cfg);
    fcfg.map_mode = filter::MapMode::projection;

    const auto last = filter::gnmk_iterate(dyn.forecast(T), tw.measurement, T, T, tw.model, fcfg, dyn.propagate,
                                           mix_seed(cfg.seed, 4));
    basis_adapt::ReductionConfig red = fcfg.reduction;
    red.seed = mix_seed(cfg.seed, 5);
    const pce::PCExpansion pm = basis_adapt::reduce_germ(last.posterior, red);
    const auto ident = filter::MeasurementModel::identity(3, Mat::Zero(3, 3));

    std::vector<JacobianRecord> out;
    auto observer = [&](const filter::IterationSamples& s) {
        const Mat J = finite_difference_jacobian(flow, s.x_lin, tt, T);
        const auto support = pce::active_support(s.current);
        const pce::PCExpansion z = sparse_bayes::fit_pce(s.germ, s.observed, pce::BasisKind::hermite(),
                                                         pce::subset(s.current.index_set(), support), fcfg.rvm);
        const auto proj = filter::estimate_forward_map_projection(pce::restrict_to(s.current, support), z, s.x_lin,
                                                                  fcfg.pinv_rcond);
        const Mat prior_H = s.previous_gain.size() ? pinv(s.previous_gain, fcfg.pinv_rcond) : Mat::Zero(3, 3);
        const auto bayes = filter::estimate_forward_map_bayes(s.states, s.observed, s.x_lin, prior_H, fcfg.rvm);
        out.push_back({window, run, s.iteration, (proj.H - J).norm() / J.norm(), (bayes.H - J).norm() / J.norm()});
    };
    filter::gnmk_iterate(dyn.forecast(tt), pm, tt, T, ident, fcfg, dyn.propagate, mix_seed(cfg.seed, 6), observer);
    return out;
}

std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& dir)
{
    std::vector<ExperimentConfig> cells;
    for (double dt : cfg.sweep_delta_tau) {
        for (double noise : cfg.sweep_noise) {
            for (SmootherKind k : cfg.sweep_smoother) {
                ExperimentConfig c = cfg;
                c.filter.delta_tau = dt;
                c.noise_coefficient = noise;
                c.smoother = k;
                cells.push_back(std::move(c));
            }
        }
    }
    std::vector<SweepCell> out(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < cells.size(); ++i) {
        try {
            const ExperimentConfig& c = cells[i];
            const RunSummary s = run_experiment(c);
            std::ostringstream name;
            name << "cell_dt" << c.filter.delta_tau << "_noise" << c.noise_coefficient << "_" << smoother_name(c.smoother);
            write_run(s, OutputDirectory(dir / name.str(), s.config_hash));
            SweepCell cell{c.filter.delta_tau, c.noise_coefficient, c.smoother, s.config_hash, coverage(s), 0.0, 0, s.flags};
            double width = 0.0;
            for (const auto& r : s.rows) width += (r.p99 - r.p01).mean();
            cell.mean_band_width = width / static_cast<double>(s.rows.size());
            for (const auto& st : s.result.steps) cell.max_iterations = std::max(cell.max_iterations, st.iterations);
            out[i] = std::move(cell);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

OutputDirectory::OutputDirectory(std::filesystem::path dir, std::string hash)
    : dir_(std::move(dir)), hash_(std::move(hash))
{
    std::filesystem::create_directories(dir_);
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
        if (!entry.is_regular_file()) continue;
        const std::string h = declared_hash(entry.path());
        if (!h.empty() && h != hash_) {
            throw ConfigError("output: directory " + dir_.string() + " already holds results for config hash " + h +
                              " (" + entry.path().filename().string() + "); current hash is " + hash_);
        }
    }
}

void OutputDirectory::write_csv(const std::string& name, const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& rows) const
{
    std::ofstream os(dir_ / name);
    os << "# config_hash=" << hash_ << "\n";
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
        os << "\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    if (!os) throw std::runtime_error("failed to write " + (dir_ / name).string());
}

void OutputDirectory::write_json(const std::string& name, json j) const
{
    j["config_hash"] = hash_;
    std::ofstream os(dir_ / name);
    os << j.dump(2) << "\n";
    if (!os) throw std::runtime_error("failed to write " + (dir_ / name).string());
}

void OutputDirectory::write_pce(const std::string& name, const pce::PCExpansion& x) const
{
    std::ofstream os(dir_ / name);
    pce::write_pce(os, x, "config_hash=" + hash_);
    if (!os) throw std::runtime_error("failed to write " + (dir_ / name).string());
}

std::string format_double(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

void write_simulation(const Twin& tw, const OutputDirectory& out)
{
    std::vector<std::vector<std::string>> rows;
    for (std::size_t k = 0; k < tw.times.size(); ++k) {
        std::vector<std::string> r{format_double(tw.times[k])};
        for (Eigen::Index c = 0; c < tw.truth.cols(); ++c)
            r.push_back(format_double(tw.truth(static_cast<Eigen::Index>(k), c)));
        rows.push_back(std::move(r));
    }
    out.write_csv("truth.csv", {"time", "truth_0", "truth_1", "truth_2"}, rows);

    rows.clear();
    const double T = tw.times.back();
    for (Eigen::Index i = 0; i < tw.measurement.size(); ++i) {
        Eigen::Index c = 0;
        tw.model.selector.row(i).maxCoeff(&c);
        rows.push_back({format_double(T), std::to_string(c), format_double(tw.measurement(i)),
                        format_double(tw.noise_std(i))});
    }
    out.write_csv("measurement.csv", {"time", "component", "value", "noise_std"}, rows);
}

void write_run(const RunSummary& s, const OutputDirectory& out)
{
    const Eigen::Index d = s.twin.truth.cols();
    std::vector<std::string> header{"time"};
    for (const char* q : {"truth", "mean", "var", "p01", "p99"}) {
        for (Eigen::Index c = 0; c < d; ++c) header.push_back(std::string(q) + "_" + std::to_string(c));
    }
    header.push_back("iterations");
    header.push_back("converged");
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : s.rows) {
        std::vector<std::string> line{format_double(r.time)};
        for (const Vec* v : {&r.truth, &r.mean, &r.variance, &r.p01, &r.p99}) {
            for (Eigen::Index c = 0; c < d; ++c) line.push_back(format_double((*v)(c)));
        }
        line.push_back(std::to_string(r.iterations));
        line.push_back(r.converged ? "1" : "0");
        rows.push_back(std::move(line));
    }
    out.write_csv("trajectory.csv", header, rows);

    json steps = json::array();
    for (const auto& st : s.result.steps) {
        json js = {{"time", st.time},
                   {"iterations", st.iterations},
                   {"converged", st.converged},
                   {"errors", st.errors},
                   {"flags", flag_names(st.flags)}};
        if (st.bias.size()) js["bias"] = to_std(st.bias);
        steps.push_back(std::move(js));
    }
    json report = json::array();
    for (const auto& r : s.rows) {
        report.push_back({{"time", r.time},
                          {"truth", to_std(r.truth)},
                          {"mean", to_std(r.mean)},
                          {"variance", to_std(r.variance)},
                          {"p01", to_std(r.p01)},
                          {"p99", to_std(r.p99)}});
    }
    json j = {{"config", s.config},
              {"smoother", s.config["smoother"]["kind"]},
              {"measurement", {{"time", s.twin.times.back()},
                               {"value", to_std(s.twin.measurement)},
                               {"noise_std", to_std(s.twin.noise_std)}}},
              {"steps", steps},
              {"report", report},
              {"anchors", s.anchors},
              {"coverage", coverage(s)},
              {"flags", flag_names(s.flags)},
              {"wall_clock_s", s.wall_clock_s}};
    out.write_json("summary.json", std::move(j));
    for (const auto& r : s.rows) out.write_pce("posterior_t" + time_name(r.time) + ".pce", s.result.at(r.time).posterior);
}

}  // namespace gnmk::experiment
