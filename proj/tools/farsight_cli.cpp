// Command-line front end: model generation, decoding, trace diagnostics and
// the verification suite. Every command is deterministic given its flags and
// the files it reads, and all floats are printed at nine significant digits,
// so repeated runs produce byte-identical output.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or precondition
// error, 3 malformed or invalid input data.

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "farsight/attention.hpp"
#include "farsight/decoder.hpp"
#include "farsight/diagnostics.hpp"
#include "farsight/masks.hpp"
#include "farsight/model_io.hpp"
#include "farsight/numerics.hpp"
#include "farsight/trace.hpp"
#include "farsight/verify.hpp"

namespace {

using farsight::Error;
using farsight::ErrorKind;
using ojson = nlohmann::ordered_json;

const char* kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::domain: return "domain";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::index: return "index";
        case ErrorKind::format: return "format";
        case ErrorKind::input: return "input";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

// Round through the 9-significant-digit text form so the JSON output carries
// exactly what the CSV outputs would.
double round9(double v) { return std::strtod(farsight::format_sig9(v).c_str(), nullptr); }

template <typename T>
std::vector<T> parse_int_list(const std::string& text, const std::string& flag) {
    std::vector<T> out;
    if (text.empty() || text.front() == ',' || text.back() == ',')
        throw Error(ErrorKind::domain, flag + ": expected a comma-separated list of integers");
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t comma = text.find(',', pos);
        std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos
                                                                       : comma - pos);
        T value{};
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
        if (ec != std::errc() || p != item.data() + item.size())
            throw Error(ErrorKind::domain, flag + ": '" + item + "' is not an integer");
        out.push_back(value);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(ErrorKind::io, "cannot open " + path + " for writing");
    out << content;
    if (!out.good())
        throw Error(ErrorKind::io, "write failed for " + path);
}

// ------------------------------------------------------------- run config

// Shared decode/diagnose settings. Flags land here; a --config file fills in
// any field whose flag was not given explicitly on the command line.
struct RunConfig {
    std::string model_path;
    std::string prompt_text;
    std::size_t vision_prefix = 0;
    std::string mask = "farsight";
    double sigma = 0.0;
    bool sigma_set = false;
    std::size_t seq = 256;
    double alpha = 1024.0;
    std::string schedule = "uniform";
    bool pseudocode_scaling = false;
    std::string strategy = "greedy";
    double temperature = 1.0;
    std::uint64_t seed = 0;
    std::size_t beam_width = 4;
    std::size_t max_new_tokens = 8;
    bool cached = false;
};

ojson load_config_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::io, "cannot open config " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    ojson parsed;
    try {
        parsed = ojson::parse(buf.str());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, "config " + path + ": " + e.what());
    }
    if (!parsed.is_object())
        throw Error(ErrorKind::format, "config " + path + ": expected a JSON object");
    return parsed;
}

// Merge config values under flags. `given` reports whether the corresponding
// flag appeared on the command line; explicit flags always win.
void apply_config(RunConfig& cfg, const ojson& file,
                  const std::map<std::string, bool>& given) {
    auto want = [&](const char* key) { return file.contains(key) && !given.at(key); };
    try {
        if (want("model")) cfg.model_path = file["model"].get<std::string>();
        if (want("prompt")) {
            std::string joined;
            for (const auto& id : file["prompt"]) {
                if (!joined.empty()) joined += ',';
                joined += std::to_string(id.get<int>());
            }
            cfg.prompt_text = joined;
        }
        if (want("vision_prefix")) cfg.vision_prefix = file["vision_prefix"].get<std::size_t>();
        if (want("mask")) cfg.mask = file["mask"].get<std::string>();
        if (want("sigma") && !given.at("seq") && !given.at("alpha")) {
            cfg.sigma = file["sigma"].get<double>();
            cfg.sigma_set = true;
        }
        if (want("seq") && !given.at("sigma")) cfg.seq = file["seq"].get<std::size_t>();
        if (want("alpha") && !given.at("sigma")) cfg.alpha = file["alpha"].get<double>();
        if (want("schedule")) cfg.schedule = file["schedule"].get<std::string>();
        if (want("pseudocode_scaling"))
            cfg.pseudocode_scaling = file["pseudocode_scaling"].get<bool>();
        if (want("strategy")) cfg.strategy = file["strategy"].get<std::string>();
        if (want("temperature")) cfg.temperature = file["temperature"].get<double>();
        if (want("seed")) cfg.seed = file["seed"].get<std::uint64_t>();
        if (want("beam_width")) cfg.beam_width = file["beam_width"].get<std::size_t>();
        if (want("max_new_tokens"))
            cfg.max_new_tokens = file["max_new_tokens"].get<std::size_t>();
        if (want("cache")) cfg.cached = file["cache"].get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::input, std::string("config: ") + e.what());
    }
    if (cfg.sigma_set && (file.contains("seq") || file.contains("alpha")) &&
        !given.at("seq") && !given.at("alpha") && !given.at("sigma"))
        throw Error(ErrorKind::input, "config: give sigma or the seq/alpha pair, not both");
}

farsight::MaskMode parse_mask(const std::string& name) {
    if (name == "causal") return farsight::MaskMode::causal;
    if (name == "farsight") return farsight::MaskMode::farsight;
    if (name == "alibi") return farsight::MaskMode::alibi;
    throw Error(ErrorKind::domain, "unknown mask mode '" + name + "'");
}

farsight::RegisterSchedule schedule_from(const RunConfig& cfg, std::size_t head_count) {
    farsight::RegisterSchedule s =
        cfg.sigma_set ? farsight::RegisterSchedule::with_sigma(cfg.sigma)
                      : farsight::RegisterSchedule::from_decay_rate(cfg.seq, cfg.alpha);
    if (cfg.schedule == "per-head") {
        s.mode = farsight::ScheduleMode::per_head;
        s.head_count = head_count;
    } else if (cfg.schedule != "uniform") {
        throw Error(ErrorKind::domain, "unknown schedule '" + cfg.schedule + "'");
    }
    s.pseudocode_scaling = cfg.pseudocode_scaling;
    return s;
}

farsight::DecodeStrategy strategy_from(const RunConfig& cfg) {
    if (cfg.strategy == "greedy") return farsight::DecodeStrategy::make_greedy();
    if (cfg.strategy == "sample")
        return farsight::DecodeStrategy::make_sample(cfg.temperature, cfg.seed);
    if (cfg.strategy == "beam") return farsight::DecodeStrategy::make_beam(cfg.beam_width);
    throw Error(ErrorKind::domain, "unknown strategy '" + cfg.strategy + "'");
}

// ------------------------------------------------------------- gen-model

int run_gen_model(const farsight::ModelConfig& cfg, const std::string& out_path) {
    farsight::ModelWeights model = farsight::generate_synthetic_model(cfg);
    std::string bytes = farsight::serialize_model(model);
    write_text_file(out_path, bytes);

    char digest[17];
    std::snprintf(digest, sizeof digest, "%016llx",
                  static_cast<unsigned long long>(farsight::fnv1a64(bytes)));
    ojson out{{"path", out_path},
              {"digest", std::string("fnv1a64:") + digest},
              {"bytes", bytes.size()},
              {"vocab_size", cfg.vocab_size},
              {"d_model", cfg.d_model},
              {"head_count", cfg.head_count},
              {"layer_count", cfg.layer_count},
              {"seed", cfg.seed}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------- decode

int run_decode(const RunConfig& cfg, const std::string& dump_trace,
               const std::string& out_path) {
    if (cfg.model_path.empty())
        throw Error(ErrorKind::domain, "decode: --model is required");
    if (cfg.prompt_text.empty())
        throw Error(ErrorKind::domain, "decode: --prompt is required");
    farsight::ModelWeights model = farsight::load_model(cfg.model_path);
    std::vector<int> ids = parse_int_list<int>(cfg.prompt_text, "--prompt");
    farsight::TokenSequence prompt = farsight::TokenSequence::from_ids(ids, cfg.vision_prefix);

    farsight::MaskMode mode = parse_mask(cfg.mask);
    farsight::RegisterSchedule schedule = schedule_from(cfg, model.head_count);
    farsight::DecodeStrategy strategy = strategy_from(cfg);
    farsight::CacheMode cache =
        cfg.cached ? farsight::CacheMode::cached : farsight::CacheMode::full_recompute;

    farsight::DecodeResult result =
        farsight::decode(model, prompt, strategy, mode, schedule, cfg.max_new_tokens, cache);

    ojson steps = ojson::array();
    for (const farsight::StepSummary& s : result.steps)
        steps.push_back(ojson{{"step", s.step},
                              {"token", s.token},
                              {"log_prob", round9(s.log_prob)},
                              {"max_logit", round9(s.max_logit)}});
    ojson out{{"mask", cfg.mask},
              {"sigma", round9(schedule.sigma)},
              {"schedule", cfg.schedule},
              {"strategy", cfg.strategy},
              {"prompt", ids},
              {"vision_prefix", cfg.vision_prefix},
              {"max_new_tokens", cfg.max_new_tokens},
              {"generated", result.generated},
              {"cumulative_log_prob", round9(result.cumulative_log_prob)},
              {"steps", steps}};
    if (cfg.strategy == "sample") {
        out["temperature"] = round9(cfg.temperature);
        out["seed"] = cfg.seed;
    }
    if (cfg.strategy == "beam") out["beam_width"] = cfg.beam_width;

    std::string text = out.dump(2) + "\n";
    std::cout << text;
    if (!out_path.empty()) write_text_file(out_path, text);
    if (!dump_trace.empty()) farsight::write_trace_csv(result.trace, dump_trace);
    return 0;
}

// -------------------------------------------------------------- diagnose

struct TraceSummary {
    farsight::DecayCurve curve;
    farsight::CollapseReport collapse;
    std::vector<double> beta_mean;
    std::vector<std::size_t> suggested;
};

TraceSummary summarize_trace(const farsight::AttentionTrace& trace, std::size_t vision_prefix,
                             const std::vector<std::size_t>& outliers) {
    TraceSummary s;
    s.curve = farsight::visual_attention_curve(trace, vision_prefix);
    s.collapse = farsight::collapse_metric(trace, outliers);
    s.suggested = farsight::suggest_outliers(trace);
    for (std::size_t t = 0; t < trace.steps(); ++t) {
        double total = 0.0;
        std::size_t count = 0;
        for (const farsight::TraceEntry& e : trace.entries)
            if (e.step == t)
                for (double b : e.beta) {
                    total += b;
                    ++count;
                }
        s.beta_mean.push_back(count ? total / static_cast<double>(count) : 0.0);
    }
    return s;
}

ojson summary_json(const TraceSummary& s) {
    ojson curve = ojson::array();
    for (double v : s.curve.values) curve.push_back(round9(v));
    ojson mass = ojson::array();
    for (double v : s.collapse.per_step_mass) mass.push_back(round9(v));
    ojson beta = ojson::array();
    for (double v : s.beta_mean) beta.push_back(round9(v));
    return ojson{{"curve", curve},
                 {"collapse",
                  ojson{{"outlier_indices", s.collapse.outlier_indices},
                        {"per_step_mass", mass},
                        {"aggregate_share", round9(s.collapse.aggregate_share)}}},
                 {"beta_mean", beta},
                 {"suggested_outliers", s.suggested}};
}

int run_diagnose(const RunConfig& cfg, const std::string& trace_path, std::size_t steps,
                 bool compare, const std::string& outliers_text, const std::string& out_path,
                 const std::string& report_path) {
    std::vector<std::size_t> outliers;
    if (!outliers_text.empty())
        outliers = parse_int_list<std::size_t>(outliers_text, "--outliers");

    // mode label -> summary, in fixed emission order
    std::vector<std::pair<std::string, TraceSummary>> summaries;
    ojson report{{"sigma", nullptr}, {"steps", nullptr}, {"modes", ojson::object()}};

    if (!trace_path.empty()) {
        farsight::AttentionTrace trace = farsight::read_trace_csv(trace_path);
        summaries.emplace_back("trace", summarize_trace(trace, cfg.vision_prefix, outliers));
        report["steps"] = trace.steps();
        report.erase("sigma");
    } else {
        if (cfg.model_path.empty() || cfg.prompt_text.empty())
            throw Error(ErrorKind::domain,
                        "diagnose: provide --trace, or --model with --prompt");
        farsight::ModelWeights model = farsight::load_model(cfg.model_path);
        std::vector<int> ids = parse_int_list<int>(cfg.prompt_text, "--prompt");
        farsight::TokenSequence prompt =
            farsight::TokenSequence::from_ids(ids, cfg.vision_prefix);
        farsight::RegisterSchedule schedule = schedule_from(cfg, model.head_count);
        report["sigma"] = round9(schedule.sigma);
        report["steps"] = steps;
        if (compare) {
            for (farsight::MaskMode mode :
                 {farsight::MaskMode::causal, farsight::MaskMode::farsight,
                  farsight::MaskMode::alibi}) {
                farsight::DecodeResult run = farsight::decode(
                    model, prompt, farsight::DecodeStrategy::make_greedy(), mode, schedule,
                    steps);
                summaries.emplace_back(farsight::mask_mode_name(mode),
                                       summarize_trace(run.trace, prompt.vision_prefix_len(),
                                                       outliers));
            }
        } else {
            farsight::MaskMode mode = parse_mask(cfg.mask);
            farsight::DecodeResult run = farsight::decode(
                model, prompt, farsight::DecodeStrategy::make_greedy(), mode, schedule, steps);
            summaries.emplace_back(cfg.mask,
                                   summarize_trace(run.trace, prompt.vision_prefix_len(),
                                                   outliers));
        }
    }

    std::string csv = "mode,step,vision_mass\n";
    for (const auto& [name, s] : summaries)
        for (std::size_t t = 0; t < s.curve.values.size(); ++t)
            csv += name + "," + std::to_string(t) + "," +
                   farsight::format_sig9(s.curve.values[t]) + "\n";
    std::cout << csv;
    if (!out_path.empty()) write_text_file(out_path, csv);

    for (const auto& [name, s] : summaries) report["modes"][name] = summary_json(s);
    if (!report_path.empty()) write_text_file(report_path, report.dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------- verify

int run_verify(const std::string& sizes_text, std::uint64_t seed, const std::string& mutate,
               const std::string& out_path) {
    farsight::verify::SuiteConfig config;
    config.seed = seed;
    config.sizes = parse_int_list<std::size_t>(sizes_text, "--sizes");
    std::optional<farsight::verify::Mutation> mutation = farsight::verify::parse_mutation(mutate);
    if (!mutation)
        throw Error(ErrorKind::domain, "unknown mutation '" + mutate + "'");
    config.mutation = *mutation;

    std::vector<farsight::verify::OracleReport> reports =
        farsight::verify::run_property_suite(config);

    std::size_t failed = 0;
    for (const farsight::verify::OracleReport& r : reports) {
        if (!r.pass) ++failed;
        std::cout << (r.pass ? "ok   " : "FAIL ") << r.property << " size=" << r.size
                  << " max_dev=" << farsight::format_sig9(r.max_dev)
                  << " tol=" << farsight::format_sig9(r.tolerance);
        if (!r.detail.empty()) std::cout << " detail=" << r.detail;
        std::cout << "\n";
    }
    std::cout << (failed == 0 ? "all " + std::to_string(reports.size()) + " properties passed"
                              : std::to_string(failed) + " of " +
                                    std::to_string(reports.size()) + " properties FAILED")
              << "\n";

    if (!out_path.empty()) {
        std::ostringstream csv;
        farsight::verify::write_report_csv(reports, csv);
        write_text_file(out_path, csv.str());
    }
    return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Register-mask attention toolkit"};
    app.require_subcommand(1);

    // gen-model
    farsight::ModelConfig gen_cfg;
    std::string gen_out;
    CLI::App* gen = app.add_subcommand("gen-model", "Write a seeded synthetic model file");
    gen->add_option("--vocab", gen_cfg.vocab_size, "vocabulary size")->capture_default_str();
    gen->add_option("--d-model", gen_cfg.d_model, "model width")->capture_default_str();
    gen->add_option("--heads", gen_cfg.head_count, "attention heads")->capture_default_str();
    gen->add_option("--layers", gen_cfg.layer_count, "decoder layers")->capture_default_str();
    std::uint64_t gen_seed = 0;
    gen->add_option("--seed", gen_seed, "generator seed")->capture_default_str();
    gen->add_option("--out", gen_out, "output model path")->required();

    // shared decode/diagnose flags
    RunConfig cfg;
    std::string config_path, dump_trace, decode_out;

    CLI::App* dec = app.add_subcommand("decode", "Generate tokens from a model file");
    CLI::Option* o_model = dec->add_option("--model", cfg.model_path, "model file");
    CLI::Option* o_prompt =
        dec->add_option("--prompt", cfg.prompt_text, "comma-separated token ids");
    CLI::Option* o_vp = dec->add_option("--vision-prefix", cfg.vision_prefix,
                                        "leading ids tagged as vision tokens");
    CLI::Option* o_mask =
        dec->add_option("--mask", cfg.mask, "causal | farsight | alibi")->capture_default_str();
    CLI::Option* o_sigma = dec->add_option("--sigma", cfg.sigma, "explicit decay rate");
    CLI::Option* o_seq =
        dec->add_option("--seq", cfg.seq, "reference length for the decay rate")
            ->capture_default_str();
    CLI::Option* o_alpha = dec->add_option("--alpha", cfg.alpha, "decay-rate log base")
                               ->capture_default_str();
    o_sigma->excludes(o_seq)->excludes(o_alpha);
    CLI::Option* o_sched = dec->add_option("--schedule", cfg.schedule, "uniform | per-head")
                               ->capture_default_str();
    CLI::Option* o_pseudo = dec->add_flag("--pseudocode-scaling", cfg.pseudocode_scaling,
                                          "also multiply surviving scores by sigma");
    CLI::Option* o_strategy =
        dec->add_option("--strategy", cfg.strategy, "greedy | sample | beam")
            ->capture_default_str();
    CLI::Option* o_temp = dec->add_option("--temperature", cfg.temperature, "sampling temperature")
                              ->capture_default_str();
    CLI::Option* o_seed = dec->add_option("--seed", cfg.seed, "sampling seed")
                              ->capture_default_str();
    CLI::Option* o_beam = dec->add_option("--beam-width", cfg.beam_width, "beam width")
                              ->capture_default_str();
    CLI::Option* o_maxnew =
        dec->add_option("--max-new-tokens", cfg.max_new_tokens, "tokens to generate")
            ->capture_default_str();
    CLI::Option* o_cache = dec->add_flag("--cache", cfg.cached,
                                         "reuse cached K/V rows (causal mask only)");
    dec->add_option("--dump-trace", dump_trace, "write attention trace CSV here");
    dec->add_option("--out", decode_out, "also write the JSON result here");
    dec->add_option("--config", config_path, "JSON file with these fields; flags win");

    // diagnose
    std::string diag_trace, diag_outliers, diag_out, diag_report;
    std::size_t diag_steps = 8;
    bool diag_compare = false;
    CLI::App* diag = app.add_subcommand("diagnose", "Decay and collapse metrics for a run");
    CLI::Option* d_trace = diag->add_option("--trace", diag_trace, "existing trace CSV");
    CLI::Option* d_model = diag->add_option("--model", cfg.model_path, "model file");
    CLI::Option* d_prompt =
        diag->add_option("--prompt", cfg.prompt_text, "comma-separated token ids");
    diag->add_option("--steps", diag_steps, "decode steps for a fresh run")
        ->capture_default_str();
    diag->add_option("--vision-prefix", cfg.vision_prefix, "leading ids tagged as vision");
    diag->add_option("--mask", cfg.mask, "mask mode for a fresh run")->capture_default_str();
    diag->add_flag("--compare-modes", diag_compare, "run causal, farsight and alibi");
    CLI::Option* d_sigma = diag->add_option("--sigma", cfg.sigma, "explicit decay rate");
    CLI::Option* d_seq = diag->add_option("--seq", cfg.seq, "reference length")
                             ->capture_default_str();
    CLI::Option* d_alpha = diag->add_option("--alpha", cfg.alpha, "decay-rate log base")
                               ->capture_default_str();
    d_sigma->excludes(d_seq)->excludes(d_alpha);
    diag->add_option("--schedule", cfg.schedule, "uniform | per-head")->capture_default_str();
    diag->add_option("--outliers", diag_outliers, "comma-separated outlier indices");
    diag->add_option("--out", diag_out, "curve CSV path (mode,step,vision_mass)");
    diag->add_option("--report", diag_report, "full JSON report path");
    d_trace->excludes(d_model)->excludes(d_prompt);

    // verify
    std::string ver_sizes = "2,3,8,32,128", ver_mutate = "none", ver_out;
    std::uint64_t ver_seed = 42;
    CLI::App* ver = app.add_subcommand("verify", "Run the property suite");
    ver->add_option("--sizes", ver_sizes, "comma-separated kernel sizes")
        ->capture_default_str();
    ver->add_option("--seed", ver_seed, "suite seed")->capture_default_str();
    ver->add_option("--mutate", ver_mutate,
                    "none | register-sign | no-remask | pseudocode-sigma")
        ->capture_default_str();
    ver->add_option("--out", ver_out, "report CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            gen_cfg.seed = gen_seed;
            return run_gen_model(gen_cfg, gen_out);
        }
        if (dec->parsed()) {
            cfg.sigma_set = o_sigma->count() > 0;
            if (!config_path.empty()) {
                std::map<std::string, bool> given{
                    {"model", o_model->count() > 0},
                    {"prompt", o_prompt->count() > 0},
                    {"vision_prefix", o_vp->count() > 0},
                    {"mask", o_mask->count() > 0},
                    {"sigma", o_sigma->count() > 0},
                    {"seq", o_seq->count() > 0},
                    {"alpha", o_alpha->count() > 0},
                    {"schedule", o_sched->count() > 0},
                    {"pseudocode_scaling", o_pseudo->count() > 0},
                    {"strategy", o_strategy->count() > 0},
                    {"temperature", o_temp->count() > 0},
                    {"seed", o_seed->count() > 0},
                    {"beam_width", o_beam->count() > 0},
                    {"max_new_tokens", o_maxnew->count() > 0},
                    {"cache", o_cache->count() > 0}};
                apply_config(cfg, load_config_json(config_path), given);
            }
            return run_decode(cfg, dump_trace, decode_out);
        }
        if (diag->parsed()) {
            cfg.sigma_set = d_sigma->count() > 0;
            return run_diagnose(cfg, diag_trace, diag_steps, diag_compare, diag_outliers,
                                diag_out, diag_report);
        }
        if (ver->parsed()) return run_verify(ver_sizes, ver_seed, ver_mutate, ver_out);
    } catch (const Error& e) {
        std::cerr << "error (" << kind_name(e.kind()) << "): " << e.what() << "\n";
        return e.kind() == ErrorKind::format || e.kind() == ErrorKind::input ? 3 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
