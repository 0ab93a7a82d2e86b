#ifndef STEERLAB_CLI_HPP
#define STEERLAB_CLI_HPP

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "steerlab/steerlab.hpp"

namespace steerlab::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kVerificationFailed = 1, kConfigError = 2 };

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- logging --------------------------------------------------------------

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel log_level() {
    const char* env = std::getenv("STEERLAB_LOG");
    if (!env) return LogLevel::warn;
    const std::string v(env);
    if (v == "error") return LogLevel::error;
    if (v == "info") return LogLevel::info;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::warn;
}

inline void log(LogLevel level, const std::string& msg) {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (static_cast<int>(level) <= static_cast<int>(log_level()))
        std::cerr << "steerlab [" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

// ---- run context ----------------------------------------------------------

// FNV-1a over the canonical (sorted-key) dump of the effective config.
inline std::string config_hash(const json& config) {
    json hashed = config;
    hashed.erase("out");
    const std::string text = hashed.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

class Run {
public:
    Run(const std::string& config_path, const Overrides& over) {
        try {
            config_ = io::read_json_file(config_path);
        } catch (const ParseError& e) {
            throw ConfigError(e.what());
        }
        if (!config_.is_object()) throw ConfigError("config must be a JSON object");
        base_ = fs::path(config_path).parent_path();

        if (over.seed) config_["seed"] = *over.seed;
        if (config_.contains("seed") && !config_["seed"].is_number_unsigned() && !config_["seed"].is_number_integer())
            throw ConfigError("seed must be a non-negative integer");
        seed_ = config_.contains("seed") ? config_["seed"].get<std::uint64_t>() : 0;
        config_["seed"] = seed_;

        out_ = over.out ? fs::path(*over.out)
                        : (config_.contains("out") ? base_ / config_["out"].get<std::string>() : fs::path("steerlab_out"));
        hash_ = config_hash(config_);
    }

    const json& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }
    const std::string& hash() const { return hash_; }
    const fs::path& out_dir() const { return out_; }

    // ---- config accessors; every failure is a ConfigError ----

    bool has(const char* key) const { return config_.contains(key) && !config_[key].is_null(); }

    fs::path path(const char* key) const {
        if (!has(key) || !config_[key].is_string()) throw ConfigError(std::string("config needs a file path in '") + key + "'");
        return resolve(config_[key].get<std::string>());
    }

    fs::path resolve(const std::string& rel) const {
        fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : base_ / rel;
        if (!fs::exists(p)) throw ConfigError("referenced file does not exist: " + p.string());
        return p;
    }

    std::vector<fs::path> paths(const char* key) const {
        if (!has(key) || !config_[key].is_array()) throw ConfigError(std::string("config needs a list of paths in '") + key + "'");
        std::vector<fs::path> out;
        for (const auto& p : config_[key]) {
            if (!p.is_string()) throw ConfigError(std::string("non-string path in '") + key + "'");
            out.push_back(resolve(p.get<std::string>()));
        }
        return out;
    }

    double number(const char* key) const {
        if (!has(key) || !config_[key].is_number()) throw ConfigError(std::string("config needs a number in '") + key + "'");
        return config_[key].get<double>();
    }

    double number_or(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }

    long integer(const char* key) const {
        if (!has(key) || !config_[key].is_number_integer()) throw ConfigError(std::string("config needs an integer in '") + key + "'");
        return config_[key].get<long>();
    }

    long integer_or(const char* key, long fallback) const { return has(key) ? integer(key) : fallback; }

    bool boolean_or(const char* key, bool fallback) const {
        if (!has(key)) return fallback;
        if (!config_[key].is_boolean()) throw ConfigError(std::string("config needs a boolean in '") + key + "'");
        return config_[key].get<bool>();
    }

    std::string string_or(const char* key, const std::string& fallback) const {
        if (!has(key)) return fallback;
        if (!config_[key].is_string()) throw ConfigError(std::string("config needs a string in '") + key + "'");
        return config_[key].get<std::string>();
    }

    std::vector<double> numbers(const char* key) const {
        if (!has(key) || !config_[key].is_array()) throw ConfigError(std::string("config needs a list of numbers in '") + key + "'");
        std::vector<double> out;
        for (const auto& x : config_[key]) {
            if (!x.is_number()) throw ConfigError(std::string("non-numeric entry in '") + key + "'");
            out.push_back(x.get<double>());
        }
        return out;
    }

    Matrix matrix(const char* key) const {
        try {
            return io::matrix_from_json(config_.at(key), key);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("bad matrix in '") + key + "': " + e.what());
        }
    }

    // "zero" or an explicit vector.
    HiddenState hidden_state(const char* key, Eigen::Index dim) const {
        if (!has(key) || (config_[key].is_string() && config_[key].get<std::string>() == "zero"))
            return HiddenState::zeros(dim);
        const std::vector<double> v = numbers(key);
        if (static_cast<Eigen::Index>(v.size()) != dim) throw ConfigError(std::string("'") + key + "' must have embed_dim entries");
        return HiddenState(Eigen::Map<const Vector>(v.data(), dim));
    }

    // ---- outputs ----

    json meta() const {
        return json{{"tool", "steerlab"}, {"tool_version", kVersion}, {"config_hash", hash_}, {"seed", seed_}};
    }

    std::string csv_banner() const {
        return "# tool=steerlab tool_version=" + std::string(kVersion) + " config_hash=" + hash_ +
               " seed=" + std::to_string(seed_) + "\n";
    }

    void write_csv(const std::string& name, const std::string& body) const {
        ensure_out();
        io::write_text_file((out_ / name).string(), csv_banner() + body);
    }

    void write_json(const std::string& name, json doc) const {
        ensure_out();
        doc["meta"] = meta();
        io::write_text_file((out_ / name).string(), doc.dump(2) + "\n");
    }

private:
    void ensure_out() const {
        std::error_code ec;
        fs::create_directories(out_, ec);
        if (ec) throw ConfigError("cannot create output directory " + out_.string() + ": " + ec.message());
    }

    json config_;
    fs::path base_;
    fs::path out_;
    std::uint64_t seed_ = 0;
    std::string hash_;
};

inline json optional_number(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

inline std::vector<double> omega_grid(const Run& run) {
    const std::vector<double> omegas = run.numbers("omegas");
    if (omegas.empty()) throw ConfigError("'omegas' must be non-empty");
    for (double w : omegas)
        if (!(w > 0.0)) throw ConfigError("every omega must be positive");
    return omegas;
}

// ---- verify-theorem -------------------------------------------------------

inline json report_to_json(const ConcentrationReport& r) {
    return json{{"lambda_total", r.lambda_total},
                {"cum_shift", r.cum_shift},
                {"gamma1", r.gamma1},
                {"gamma2", r.gamma2},
                {"log_gamma1", r.log_gamma1},
                {"log_gamma2", r.log_gamma2},
                {"r", r.r},
                {"p_c1_exact", r.p_c1_exact},
                {"p_c2_exact", r.p_c2_exact},
                {"p_c1_lower_bound", optional_number(r.p_c1_lower_bound)},
                {"epsilon", r.epsilon},
                {"threshold", r.threshold},
                {"satisfied", r.satisfied},
                {"p_c1_bruteforce", r.p_c1_bruteforce},
                {"p_c2_bruteforce", r.p_c2_bruteforce},
                {"exact_rel_error", r.exact_rel_error},
                {"exact_ok", r.exact_ok},
                {"sound", r.sound()}};
}

inline std::string concentration_csv(const std::vector<ConcentrationReport>& rows) {
    std::string csv = "cum_shift,gamma1,gamma2,r,p_c1_exact,p_c2_exact,p_c1_lower_bound,threshold,satisfied\n";
    for (const auto& r : rows) {
        csv += fixed4(r.cum_shift) + "," + fixed4(r.gamma1) + "," + fixed4(r.gamma2) + "," + fixed4(r.r) + "," +
               fixed4(r.p_c1_exact) + "," + fixed4(r.p_c2_exact) + "," +
               (r.p_c1_lower_bound ? fixed4(*r.p_c1_lower_bound) : std::string()) + "," + fixed4(r.threshold) + "," +
               (r.satisfied ? "true" : "false") + "\n";
    }
    return csv;
}

// Problems with one report; empty when exactness, soundness and bound direction hold.
inline std::vector<std::string> theorem_violations(const ConcentrationReport& r) {
    std::vector<std::string> out;
    if (!r.exact_ok) out.push_back("closed form disagrees with brute force (rel err " + shortest(r.exact_rel_error) + ")");
    if (!r.sound()) out.push_back("threshold satisfied but brute-force Pr(c2) = " + shortest(r.p_c2_bruteforce) + " >= epsilon");
    if (r.p_c1_lower_bound && r.p_c1_exact < *r.p_c1_lower_bound) out.push_back("exact Pr(c1) below the lower bound");
    return out;
}

struct RandomTheoremCase {
    std::uint64_t index = 0;
    synthetic::AlignedInstance instance;
    HiddenState h0;
    std::vector<double> lambdas;
    double epsilon = 0.1;
};

// Randomized aligned instance with a cumulative shift placed around the threshold.
inline RandomTheoremCase random_theorem_case(std::uint64_t seed, std::uint64_t index, std::span<const double> epsilons) {
    Rng rng(derive_seed(seed, index));
    const auto dim = static_cast<Eigen::Index>(rng.uniform_int(2, 12));
    const auto vocab = static_cast<std::size_t>(rng.uniform_int(2, 40));
    const auto n_c1 = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(vocab) - 1));
    const double p = rng.uniform(0.1, 3.0);
    const double d = rng.uniform(0.1, 3.0);
    RandomTheoremCase c{index, synthetic::aligned_instance(rng, dim, vocab, n_c1, p, d), {}, {}, 0.0};
    c.h0 = HiddenState(synthetic::gaussian_vector(rng, dim, rng.uniform(0.0, 1.0)));
    c.epsilon = epsilons[index % epsilons.size()];

    const double log_r = class_mass(c.instance.model, c.h0, c.instance.spec.c2).log_mass -
                         class_mass(c.instance.model, c.h0, c.instance.spec.c1).log_mass;
    const double threshold = concentration_threshold(std::exp(log_r), c.epsilon);
    // Most instances land within +-50% of the threshold; every eighth sits on it exactly.
    const double cum = (index % 8 == 0) ? threshold : threshold * rng.uniform(0.5, 1.5) + rng.uniform(-1.0, 1.0);
    const double total = cum / d;

    const auto rounds = static_cast<std::size_t>(rng.uniform_int(1, 5));
    std::vector<double> weights(rounds);
    for (auto& w : weights) w = rng.uniform(-0.5, 1.5);
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    if (std::abs(wsum) < 1e-3) {
        weights.assign(rounds, 1.0);
        wsum = static_cast<double>(rounds);
    }
    for (auto& w : weights) c.lambdas.push_back(total * w / wsum);
    return c;
}

inline int cmd_verify_theorem(const Run& run) {
    const double epsilon = run.number("epsilon");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
    std::vector<double> epsilons = run.has("epsilons") ? run.numbers("epsilons") : std::vector<double>{epsilon};
    for (double e : epsilons)
        if (!(e > 0.0 && e < 1.0)) throw ConfigError("every entry of 'epsilons' must lie in (0, 1)");
    const std::vector<double> grid = run.numbers("lambda_grid");
    if (grid.empty()) throw ConfigError("'lambda_grid' must be non-empty");
    const long instances = run.integer_or("random_instances", 0);
    if (instances < 0) throw ConfigError("'random_instances' must be non-negative");

    const UnembeddingModel model = io::load_model(run.path("model").string());
    const ConceptSpec spec = io::load_concept(run.path("concept").string());
    const HiddenState h0 = run.hidden_state("h0", model.embed_dim());
    const std::vector<double> schedule = run.has("lambda_schedule") ? run.numbers("lambda_schedule") : std::vector<double>{};

    const ConceptReport check = validate_concept(model, spec);
    if (!check.passed) {
        std::string msg = "validate_concept rejected '" + spec.name + "':";
        for (const auto& i : check.issues) msg += " " + i + ";";
        log(LogLevel::error, msg);
        run.write_json("failure.json", json{{"stage", "validate_concept"}, {"issues", check.issues}});
        return kVerificationFailed;
    }

    std::vector<std::string> failures;
    json failing_instances = json::array();

    const std::vector<ConcentrationReport> rows = sweep_concentration(model, spec, h0, grid, epsilon);
    json sweep = json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        sweep.push_back(report_to_json(rows[i]));
        for (const auto& v : theorem_violations(rows[i])) {
            failures.push_back("sweep row " + std::to_string(i) + ": " + v);
            failing_instances.push_back(json{{"kind", "sweep"}, {"lambda_total", grid[i]}, {"report", report_to_json(rows[i])}});
        }
    }

    json schedule_report = nullptr;
    if (!schedule.empty()) {
        const ConcentrationReport rep = concentration_report(model, spec, h0, schedule, epsilon);
        schedule_report = report_to_json(rep);
        for (const auto& v : theorem_violations(rep)) {
            failures.push_back("schedule: " + v);
            failing_instances.push_back(json{{"kind", "schedule"}, {"lambdas", schedule}, {"report", schedule_report}});
        }
    }

    std::size_t random_failures = 0;
    for (long i = 0; i < instances; ++i) {
        const RandomTheoremCase c = random_theorem_case(run.seed(), static_cast<std::uint64_t>(i), epsilons);
        const ConcentrationReport rep = concentration_report(c.instance.model, c.instance.spec, c.h0, c.lambdas, c.epsilon);
        const auto violations = theorem_violations(rep);
        if (violations.empty()) continue;
        ++random_failures;
        for (const auto& v : violations) failures.push_back("random instance " + std::to_string(i) + ": " + v);
        failing_instances.push_back(json{{"kind", "random"},
                                         {"seed", run.seed()},
                                         {"index", i},
                                         {"model", io::model_to_json(c.instance.model)},
                                         {"concept", io::concept_to_json(c.instance.spec)},
                                         {"h0", io::to_json(c.h0.h)},
                                         {"lambdas", c.lambdas},
                                         {"epsilon", c.epsilon},
                                         {"report", report_to_json(rep)}});
    }

    run.write_csv("theorem_sweep.csv", concentration_csv(rows));
    run.write_json("theorem_report.json", json{{"concept", spec.name},
                                               {"epsilon", epsilon},
                                               {"sweep", sweep},
                                               {"schedule", schedule_report},
                                               {"random_instances", instances},
                                               {"random_failures", random_failures},
                                               {"passed", failures.empty()}});
    if (!failures.empty()) {
        for (const auto& f : failures) log(LogLevel::error, f);
        run.write_json("failure.json", json{{"stage", "verification"}, {"failures", failures}, {"instances", failing_instances}});
        return kVerificationFailed;
    }
    std::error_code ec;
    fs::remove(run.out_dir() / "failure.json", ec);  // left over from an earlier failing run
    log(LogLevel::info, "verify-theorem: all checks passed");
    return kOk;
}

// ---- decompose ------------------------------------------------------------

inline TokenBlock block_from_config(const Run& run, const char* key, const char* len_key, Eigen::Index d_emb, Rng& rng,
                                    BlockRole role) {
    if (run.has(key)) {
        Matrix m = run.matrix(key);
        if (m.rows() != d_emb) throw ConfigError(std::string("'") + key + "' must have d_emb rows");
        return TokenBlock(std::move(m), role);
    }
    const long n = run.integer(len_key);
    if (n < 1) throw ConfigError(std::string("'") + len_key + "' must be at least 1");
    return TokenBlock(synthetic::gaussian_matrix(rng, d_emb, n), role);
}

inline std::string sweep_csv(const std::vector<std::tuple<double, double, double>>& rows) {
    std::string csv = "omega,alpha,err_l2\n";
    for (const auto& [w, a, e] : rows) csv += shortest(w) + "," + fixed4(a) + "," + shortest(e) + "\n";
    return csv;
}

inline int cmd_decompose(const Run& run) {
    const std::vector<double> omegas = omega_grid(run);
    const AttentionHead head = io::load_head(run.path("head").string());
    Rng rng(derive_seed(run.seed(), 0));
    const TokenBlock s = block_from_config(run, "context", "context_len", head.d_emb(), rng, BlockRole::context);
    const TokenBlock tau = block_from_config(run, "prompt", "prompt_len", head.d_emb(), rng, BlockRole::prompt);
    const double tol = run.number_or("tolerance", 1e-10);

    std::vector<std::tuple<double, double, double>> rows;
    json points = json::array();
    bool ok = true;
    for (double w : omegas) {
        const Decomposition dec = decompose(head, s, tau, w);
        const Vector direct = sa_forward(head, s, tau, w);
        const Vector diff = dec.reconstruct() - direct;
        const double err = diff.norm();
        if (!(diff.cwiseAbs().maxCoeff() <= tol)) {
            ok = false;
            log(LogLevel::error, "decomposition identity violated at omega=" + shortest(w) + " (err " + shortest(err) + ")");
        }
        rows.emplace_back(w, dec.alpha, err);
        points.push_back(json{{"omega", w},
                              {"alpha", dec.alpha},
                              {"prompt_term", io::to_json(dec.prompt_term)},
                              {"context_term", io::to_json(dec.context_term)},
                              {"sa_output", io::to_json(direct)},
                              {"err_l2", err}});
    }
    run.write_csv("decompose_sweep.csv", sweep_csv(rows));
    run.write_json("decompose.json", json{{"context_len", s.size()},
                                          {"prompt_len", tau.size()},
                                          {"zero_logit_alpha", static_cast<double>(tau.size()) /
                                                                   static_cast<double>(s.size() + tau.size())},
                                          {"points", points},
                                          {"passed", ok}});
    return ok ? kOk : kVerificationFailed;
}

// ---- construct-prompt -----------------------------------------------------

inline int cmd_construct_prompt(const Run& run) {
    const std::vector<double> omegas = omega_grid(run);
    const UnembeddingModel model = io::load_model(run.path("model").string());
    const std::vector<double> target_raw = run.numbers("target");
    if (static_cast<Eigen::Index>(target_raw.size()) != model.embed_dim())
        throw ConfigError("'target' must have embed_dim entries");
    const Vector target = Eigen::Map<const Vector>(target_raw.data(), model.embed_dim());
    if (target.norm() < 1.0) throw ConfigError("target norm " + shortest(target.norm()) + " is below 1");
    const long prompt_len = run.integer_or("prompt_len", 1);
    if (prompt_len < 1) throw ConfigError("'prompt_len' must be at least 1");
    const double tol = run.number_or("tolerance", 1e-6);

    TokenSet ctx_tokens;
    if (run.has("context_tokens")) {
        for (double x : run.numbers("context_tokens")) {
            if (x < 0 || x != std::floor(x)) throw ConfigError("context token ids must be non-negative integers");
            ctx_tokens.push_back(static_cast<TokenId>(x));
        }
    } else {
        Rng rng(derive_seed(run.seed(), 0));
        const long m = run.integer_or("context_len", 2);
        for (long i = 0; i < m; ++i)
            ctx_tokens.push_back(static_cast<TokenId>(rng.uniform_int(0, static_cast<std::int64_t>(model.vocab_size()) - 1)));
    }
    for (TokenId v : ctx_tokens)
        if (v >= model.vocab_size()) throw ConfigError("context token id out of range");
    if (ctx_tokens.empty()) throw ConfigError("context must contain at least one token");

    const SoftPrompt sp = construct_soft_prompt(model, target, prompt_len);
    const TokenBlock s = embed_context(model, ctx_tokens);
    if (!sp.admits(s)) {
        log(LogLevel::error, "a context column reaches the bound B");
        return kVerificationFailed;
    }

    std::vector<double> sorted = omegas;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    std::vector<std::tuple<double, double, double>> rows;
    bool ok = true;
    double prev = std::numeric_limits<double>::infinity();
    for (double w : sorted) {
        const double err = sp.error(s, w);
        const double alpha = decompose(sp.head, s, sp.prompt, w).alpha;
        rows.emplace_back(w, alpha, err);
        if (err > prev) {
            ok = false;
            log(LogLevel::error, "approximation error increased at omega=" + shortest(w));
        }
        prev = err;
    }
    const double final_err = std::get<2>(rows.back());
    if (!(final_err <= tol)) {
        ok = false;
        log(LogLevel::error, "error " + shortest(final_err) + " at smallest omega exceeds tolerance " + shortest(tol));
    }

    run.write_csv("construct_sweep.csv", sweep_csv(rows));
    run.write_json("soft_prompt.json", json{{"bound", sp.bound},
                                            {"bound_reading", "B = 1 + max(max_v ||E(v)||_2, 1)"},
                                            {"max_embedding_norm", model.embedding().colwise().norm().maxCoeff()},
                                            {"target", io::to_json(sp.target)},
                                            {"head", io::head_to_json(sp.head)},
                                            {"prompt", io::to_json(sp.prompt.columns)},
                                            {"context_tokens", ctx_tokens},
                                            {"tolerance", tol},
                                            {"final_error", final_err},
                                            {"passed", ok}});
    return ok ? kOk : kVerificationFailed;
}

// ---- simulate -------------------------------------------------------------

inline int cmd_simulate(const Run& run) {
    const UnembeddingModel model = io::load_model(run.path("model").string());
    std::vector<ConceptSpec> concepts;
    for (const auto& p : run.paths("concepts")) concepts.push_back(io::load_concept(p.string()));
    if (concepts.empty()) throw ConfigError("'concepts' must list at least one concept file");
    const long n = run.integer("tokens_per_round");
    if (n < 1) throw ConfigError("'tokens_per_round' must be at least 1");

    const Matrix lambdas = run.has("lambdas") ? run.matrix("lambdas") : Matrix(0, static_cast<Eigen::Index>(concepts.size()));
    if (lambdas.cols() != static_cast<Eigen::Index>(concepts.size()))
        throw ConfigError("'lambdas' must have one column per concept");
    for (const auto& c : concepts) {
        if (c.ell.size() != model.embed_dim()) throw ConfigError("concept '" + c.name + "' has the wrong dimension");
        model.check_tokens(c.c1);
        model.check_tokens(c.c2);
    }

    const HiddenState h0 = run.hidden_state("h0", model.embed_dim());
    const Trajectory traj = roll_trajectory(h0, ShiftPlan(concepts, lambdas));
    const auto responses = simulate_responses(model, traj, static_cast<std::size_t>(n), run.seed());

    const ConceptSpec& primary = concepts.front();
    std::vector<char> in_c1(model.vocab_size(), 0);
    for (TokenId v : primary.c1) in_c1[v] = 1;

    std::string csv = "round,p_c1,freq_c1,z_score\n";
    json rounds = json::array();
    for (std::size_t k = 0; k < responses.size(); ++k) {
        const double p = set_probability(next_token_distribution(model, traj.states[k]), primary.c1);
        std::size_t hits = 0;
        for (TokenId t : responses[k]) hits += in_c1[t];
        const double freq = static_cast<double>(hits) / static_cast<double>(n);
        const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
        const double z = sigma > 0.0 ? (freq - p) / sigma : 0.0;
        csv += std::to_string(k) + "," + fixed4(p) + "," + fixed4(freq) + "," + fixed4(z) + "\n";
        rounds.push_back(json{{"round", k},
                              {"state", io::to_json(traj.states[k].h)},
                              {"p_c1", p},
                              {"freq_c1", freq},
                              {"tokens", responses[k]}});
    }
    run.write_csv("simulate_rounds.csv", csv);
    json angles = json::array();
    const Matrix theta = concept_angles(concepts);
    for (Eigen::Index i = 0; i < theta.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < theta.cols(); ++j) row.push_back(std::isnan(theta(i, j)) ? json(nullptr) : json(theta(i, j)));
        angles.push_back(std::move(row));
    }
    run.write_json("simulate.json", json{{"concept", primary.name},
                                         {"tokens_per_round", n},
                                         {"concept_angles", angles},
                                         {"rounds", rounds}});
    return kOk;
}

// ---- analyze --------------------------------------------------------------

inline std::vector<std::pair<std::string, int>> selected_keys(const Run& run, const TraceSet& traces) {
    std::set<std::string> conditions;
    if (run.has("conditions")) {
        for (const auto& c : run.config()["conditions"]) {
            if (!c.is_string()) throw ConfigError("'conditions' must be strings");
            conditions.insert(c.get<std::string>());
        }
    }
    std::vector<std::pair<std::string, int>> keys;
    for (const auto& [key, count] : traces.counts)
        if (conditions.empty() || conditions.count(key.first)) keys.push_back(key);
    return keys;
}

inline int cmd_analyze(const Run& run) {
    const UnembeddingSubset subset = io::load_unembedding_subset(run.path("unembeddings").string());
    std::vector<io::TokenGroup> groups;
    for (const auto& p : run.paths("groups")) groups.push_back(io::load_group(p.string()));
    if (groups.empty()) throw ConfigError("'groups' must list at least one group file");
    const TraceSet traces = load_traces(run.path("traces").string());
    if (!traces.records.empty() && traces.dim != subset.dim())
        throw ConfigError("trace dimension " + std::to_string(traces.dim) + " differs from unembedding dimension " +
                          std::to_string(subset.dim()));

    std::vector<GroupScore> scores;
    json entries = json::array();
    for (const auto& [condition, round] : selected_keys(run, traces)) {
        const ShiftMatrix shifts = shift_vectors(traces.records, condition, round);
        for (const auto& g : groups) {
            GroupScore gs{condition, g.name, round, group_inner_product_sum(subset, shifts.rows, g.ids),
                          shifts.sample_ids.size()};
            entries.push_back(json{{"condition", condition},
                                   {"group", g.name},
                                   {"round", round},
                                   {"sum", gs.score},
                                   {"mean", gs.mean()},
                                   {"samples", gs.samples}});
            scores.push_back(std::move(gs));
        }
    }
    const ReportTable table = report_table(scores);
    for (const auto& w : table.warnings) log(LogLevel::warn, w);

    json counts = json::array();
    for (const auto& [key, n] : traces.counts)
        counts.push_back(json{{"condition", key.first}, {"round", key.second}, {"records", n}});
    json group_meta = json::array();
    for (const auto& g : groups)
        group_meta.push_back(json{{"name", g.name}, {"size", g.ids.size()}, {"provenance", g.provenance}});

    run.write_csv("group_scores.csv", table.csv);
    run.write_json("analysis.json", json{{"scores", entries}, {"counts", counts}, {"groups", group_meta}});
    return kOk;
}

// ---- pca ------------------------------------------------------------------

inline int cmd_pca(const Run& run) {
    const TraceSet traces = load_traces(run.path("traces").string());
    const bool normalize = run.boolean_or("normalize", true);
    const std::string scope = run.string_or("scope", "per_round");
    if (scope != "per_round" && scope != "pooled") throw ConfigError("'scope' must be per_round or pooled");

    // Fit groups: (condition, round) per round, or one per condition when pooled.
    std::map<std::string, std::vector<std::pair<std::string, int>>> fits;
    for (const auto& key : selected_keys(run, traces)) {
        const std::string fit_key = scope == "pooled" ? key.first : key.first + "\x1f" + std::to_string(key.second);
        fits[fit_key].push_back(key);
    }

    std::string proj_csv = "condition,round,sample_id,pc1,pc2,pc3\n";
    std::string summary_csv = "condition,round,samples,ratio1,ratio2,ratio3,rank\n";
    json results = json::array();
    for (const auto& [fit_key, keys] : fits) {
        std::vector<ShiftMatrix> parts;
        Eigen::Index total = 0;
        for (const auto& [cond, round] : keys) {
            parts.push_back(shift_vectors(traces.records, cond, round));
            total += parts.back().rows.rows();
        }
        if (total < 3) {
            log(LogLevel::warn, "skipping PCA fit with fewer than 3 samples (" + keys.front().first + ")");
            continue;
        }
        Matrix data(total, traces.dim);
        Eigen::Index at = 0;
        for (const auto& part : parts) {
            data.middleRows(at, part.rows.rows()) = part.rows;
            at += part.rows.rows();
        }
        const PcaResult pca = pca3(data, normalize);
        const std::string cond = keys.front().first;
        const std::string round_label = scope == "pooled" ? "all" : std::to_string(keys.front().second);

        at = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            for (std::size_t i = 0; i < parts[pi].sample_ids.size(); ++i, ++at) {
                proj_csv += csv_field(cond) + "," + std::to_string(keys[pi].second) + "," +
                            csv_field(parts[pi].sample_ids[i]) + "," + fixed4(pca.projected(at, 0)) + "," +
                            fixed4(pca.projected(at, 1)) + "," + fixed4(pca.projected(at, 2)) + "\n";
            }
        }
        summary_csv += csv_field(cond) + "," + round_label + "," + std::to_string(total) + "," +
                       fixed4(pca.explained_variance_ratio(0)) + "," + fixed4(pca.explained_variance_ratio(1)) + "," +
                       fixed4(pca.explained_variance_ratio(2)) + "," + std::to_string(pca.rank) + "\n";
        results.push_back(json{{"condition", cond},
                               {"round", round_label},
                               {"samples", total},
                               {"explained_variance_ratio", io::to_json(pca.explained_variance_ratio)},
                               {"variances", io::to_json(pca.variances)},
                               {"components", io::to_json(Matrix(pca.components.transpose()))},
                               {"rank", pca.rank},
                               {"padded_components", pca.padded},
                               {"zero_rows", pca.zero_rows}});
    }
    run.write_csv("pca_projections.csv", proj_csv);
    run.write_csv("pca_summary.csv", summary_csv);
    run.write_json("pca.json", json{{"normalize", normalize},
                                    {"normalization", normalize ? "per-row unit L2 before centering" : "none"},
                                    {"scope", scope},
                                    {"fits", results}});
    return kOk;
}

// ---- dispatch -------------------------------------------------------------

inline const std::map<std::string, std::function<int(const Run&)>>& commands() {
    static const std::map<std::string, std::function<int(const Run&)>> table{
        {"verify-theorem", cmd_verify_theorem}, {"decompose", cmd_decompose}, {"construct-prompt", cmd_construct_prompt},
        {"simulate", cmd_simulate},             {"analyze", cmd_analyze},     {"pca", cmd_pca},
    };
    return table;
}

// Loads the config and runs one subcommand, mapping failures onto exit codes:
// 0 success, 1 verification failure, 2 configuration or input error.
inline int run_command(const std::string& name, const std::string& config_path, const Overrides& over) {
    const auto it = commands().find(name);
    if (it == commands().end()) {
        log(LogLevel::error, "unknown subcommand '" + name + "'");
        return kConfigError;
    }
    try {
        const Run run(config_path, over);
        log(LogLevel::info, name + ": config_hash=" + run.hash() + " seed=" + std::to_string(run.seed()));
        return it->second(run);
    } catch (const ConfigError& e) {
        log(LogLevel::error, std::string("config: ") + e.what());
        return kConfigError;
    } catch (const ParseError& e) {
        log(LogLevel::error, std::string("input: ") + e.what());
        return kConfigError;
    } catch (const ContractViolation& e) {
        log(LogLevel::error, std::string("precondition: ") + e.what());
        return kConfigError;
    } catch (const VerificationFailure& e) {
        log(LogLevel::error, e.what());
        return kVerificationFailed;
    } catch (const NumericError& e) {
        log(LogLevel::error, std::string("numeric: ") + e.what());
        return kVerificationFailed;
    } catch (const std::exception& e) {
        log(LogLevel::error, e.what());
        return kConfigError;
    }
}

} // namespace steerlab::cli

#endif // STEERLAB_CLI_HPP
