// ckav command line tool. Talks to the engine only through the C interface.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ckav/ckav.h"

namespace {

using json = nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitIo = 3;

struct Failure {
    int exit_code;
    std::string message;
};

int exit_code_for(ckav_status s) {
    switch (s) {
        case CKAV_OK: return kExitOk;
        case CKAV_ERROR_USAGE: return kExitUsage;
        case CKAV_ERROR_IO: return kExitIo;
        default: return kExitData;
    }
}

void check(ckav_status s) {
    if (s != CKAV_OK) throw Failure{exit_code_for(s), ckav_last_error()};
}

struct StringDeleter {
    void operator()(char* s) const { ckav_string_free(s); }
};
using OwnedString = std::unique_ptr<char, StringDeleter>;

struct CheckpointDeleter {
    void operator()(ckav_checkpoint* c) const { ckav_checkpoint_free(c); }
};
using CheckpointPtr = std::unique_ptr<ckav_checkpoint, CheckpointDeleter>;

struct DatasetDeleter {
    void operator()(ckav_dataset* d) const { ckav_dataset_free(d); }
};
using DatasetPtr = std::unique_ptr<ckav_dataset, DatasetDeleter>;

struct ObjectiveDeleter {
    void operator()(ckav_objective* o) const { ckav_objective_free(o); }
};
using ObjectivePtr = std::unique_ptr<ckav_objective, ObjectiveDeleter>;

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Failure{kExitIo, "cannot open '" + path + "'"};
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Failure{kExitIo, "cannot open '" + path + "' for writing"};
    out << text;
    out.close();
    if (!out) throw Failure{kExitIo, "write failed for '" + path + "'"};
}

CheckpointPtr load_checkpoint(const std::string& path, bool allow_nonfinite = false) {
    ckav_checkpoint* raw = nullptr;
    check(ckav_checkpoint_read(path.c_str(), allow_nonfinite ? 1 : 0, &raw));
    return CheckpointPtr(raw);
}

std::vector<CheckpointPtr> load_checkpoints(const std::vector<std::string>& paths) {
    std::vector<CheckpointPtr> out;
    for (const auto& p : paths) out.push_back(load_checkpoint(p));
    return out;
}

std::vector<const ckav_checkpoint*> raw_handles(const std::vector<CheckpointPtr>& ckpts) {
    std::vector<const ckav_checkpoint*> out;
    for (const auto& c : ckpts) out.push_back(c.get());
    return out;
}

ObjectivePtr load_objective(const std::string& spec_path, const std::string& dev_path) {
    const std::string spec = read_text(spec_path);
    DatasetPtr dev;
    if (!dev_path.empty()) {
        ckav_dataset* raw = nullptr;
        check(ckav_dataset_read(dev_path.c_str(), &raw));
        dev.reset(raw);
    }
    ckav_objective* raw = nullptr;
    check(ckav_objective_create(spec.c_str(), dev.get(), &raw));
    return ObjectivePtr(raw);
}

ckav_selection parse_selection(const std::string& s) {
    if (s == "top-k") return CKAV_SELECT_TOP_K;
    if (s == "last-k-best") return CKAV_SELECT_LAST_K_BEST;
    if (s == "last-k-end") return CKAV_SELECT_LAST_K_END;
    throw Failure{kExitUsage, "unknown selection '" + s + "'"};
}

// "0,0.1,1" or a JSON array "[0, 0.1, 1]".
std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    const auto first = text.find_first_not_of(" \t");
    if (first != std::string::npos && text[first] == '[') {
        try {
            out = json::parse(text).get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw Failure{kExitUsage, std::string("bad --grid: ") + e.what()};
        }
        return out;
    }
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw Failure{kExitUsage, "bad --grid value '" + item + "'"};
        }
    }
    if (out.empty()) throw Failure{kExitUsage, "--grid is empty"};
    return out;
}

// Sorts handles by step, keeping the original paths aligned.
void sort_by_step(std::vector<CheckpointPtr>& ckpts) {
    std::stable_sort(ckpts.begin(), ckpts.end(), [](const CheckpointPtr& a, const CheckpointPtr& b) {
        uint64_t sa = 0, sb = 0;
        ckav_checkpoint_step(a.get(), &sa);
        ckav_checkpoint_step(b.get(), &sb);
        return sa < sb;
    });
}

void emit(const std::string& text) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    std::cout.flush();
}

struct TrainOptions {
    std::string spec, adam, out_dir;
    std::optional<uint64_t> seed;
};

int run_train_toy(const TrainOptions& o) {
    const std::string spec = read_text(o.spec);
    const std::string adam = o.adam.empty() ? "{}" : read_text(o.adam);
    char* raw = nullptr;
    check(ckav_train_toy(spec.c_str(), adam.c_str(), o.out_dir.c_str(), o.seed ? 1 : 0, o.seed.value_or(0), &raw));
    OwnedString summary(raw);
    emit(summary.get());
    return kExitOk;
}

int run_gen_quadratic(const TrainOptions& o) {
    const std::string spec = read_text(o.spec);
    char* raw = nullptr;
    check(ckav_gen_quadratic(spec.c_str(), o.out_dir.c_str(), o.seed ? 1 : 0, o.seed.value_or(0), &raw));
    OwnedString summary(raw);
    emit(summary.get());
    return kExitOk;
}

int run_inspect(const std::string& path, bool allow_nonfinite) {
    const auto ckpt = load_checkpoint(path, allow_nonfinite);
    char* raw = nullptr;
    check(ckav_checkpoint_describe(ckpt.get(), &raw));
    OwnedString text(raw);
    emit(text.get());
    return kExitOk;
}

int run_eval(const std::string& spec, const std::string& dev, const std::string& path) {
    const auto objective = load_objective(spec, dev);
    const auto ckpt = load_checkpoint(path);
    double loss = 0.0, ppl = 0.0;
    check(ckav_evaluate(objective.get(), ckpt.get(), &loss, &ppl));
    emit(json{{"dev_loss", loss}, {"dev_ppl", ppl}}.dump());
    return kExitOk;
}

struct AverageOptions {
    std::string scheme = "uniform";
    double tau = 1.0;
    std::optional<double> grad_step;
    std::string weights;
    std::string select;
    std::size_t k = 0;
    std::string out;
    std::size_t threads = 1;
    std::vector<std::string> files;
};

int run_average(const AverageOptions& o) {
    auto ckpts = load_checkpoints(o.files);
    sort_by_step(ckpts);
    if (!o.select.empty()) {
        if (o.k == 0) throw Failure{kExitUsage, "--select requires --k"};
        const auto all = raw_handles(ckpts);
        std::vector<size_t> idx(std::min(o.k, all.size()));
        size_t count = 0;
        check(ckav_select(all.data(), all.size(), parse_selection(o.select), o.k, idx.data(), &count));
        std::vector<CheckpointPtr> chosen;
        for (size_t i = 0; i < count; ++i) chosen.push_back(std::move(ckpts[idx[i]]));
        ckpts = std::move(chosen);
    }
    const auto handles = raw_handles(ckpts);
    const std::size_t n = handles.size();

    std::vector<double> weights(n);
    if (!o.weights.empty()) {
        const auto given = parse_grid(o.weights);
        if (given.size() != n) throw Failure{kExitData, "--weights has " + std::to_string(given.size()) +
                                                            " entries for " + std::to_string(n) + " checkpoints"};
        check(ckav_weights_explicit(given.data(), n, weights.data()));
    } else if (o.scheme == "uniform") {
        check(ckav_weights_uniform(n, weights.data()));
    } else if (o.scheme == "ppl-softmax") {
        std::vector<double> ppls(n);
        for (std::size_t i = 0; i < n; ++i) {
            int present = 0;
            check(ckav_checkpoint_dev_ppl(handles[i], &ppls[i], &present));
            if (!present) {
                std::uint64_t step = 0;
                check(ckav_checkpoint_step(handles[i], &step));
                throw Failure{kExitData, "checkpoint at step " + std::to_string(step) + " has no dev_ppl"};
            }
        }
        check(ckav_weights_ppl_softmax(ppls.data(), n, o.tau, weights.data()));
    } else {
        throw Failure{kExitUsage, "unknown scheme '" + o.scheme + "'"};
    }

    ckav_checkpoint* raw = nullptr;
    if (o.grad_step) {
        check(ckav_gradient_step_average(handles.data(), n, weights.data(), *o.grad_step, o.threads, &raw));
    } else {
        check(ckav_average(handles.data(), n, weights.data(), o.threads, &raw));
    }
    CheckpointPtr averaged(raw);
    check(ckav_checkpoint_write(averaged.get(), o.out.c_str()));

    json steps = json::array();
    for (const auto* h : handles) {
        uint64_t s = 0;
        check(ckav_checkpoint_step(h, &s));
        steps.push_back(s);
    }
    emit(json{{"out", o.out}, {"steps", steps}, {"weights", weights}}.dump());
    return kExitOk;
}

struct OptimizeOptions {
    double eta = 0.0;
    std::string dev, spec, report, out;
    std::size_t threads = 1;
    std::vector<std::string> files;
};

int run_optimize(const OptimizeOptions& o) {
    const auto objective = load_objective(o.spec, o.dev);
    const auto ckpts = load_checkpoints(o.files);
    const auto handles = raw_handles(ckpts);
    std::vector<double> weights(handles.size());
    char* raw = nullptr;
    check(ckav_optimize_weights(handles.data(), handles.size(), objective.get(), o.eta, weights.data(), &raw));
    OwnedString report(raw);
    if (!o.report.empty()) write_text(o.report, std::string(report.get()) + "\n");
    if (!o.out.empty()) {
        ckav_checkpoint* avg = nullptr;
        check(ckav_average(handles.data(), handles.size(), weights.data(), o.threads, &avg));
        CheckpointPtr averaged(avg);
        check(ckav_checkpoint_write(averaged.get(), o.out.c_str()));
    }
    emit(report.get());
    return kExitOk;
}

struct SweepOptions {
    std::string kind;
    std::string grid;
    std::string dev, spec, out;
    std::string format = "csv";
    std::string select = "top-k";
    std::optional<std::size_t> k;
    std::optional<std::size_t> k_max;
    double tau = 100.0;
    std::size_t resolution = 20;
    std::size_t threads = 1;
    std::vector<std::string> files;
};

int run_sweep(const SweepOptions& o) {
    ckav_sweep_options opts;
    ckav_sweep_options_init(&opts);
    if (o.kind == "k") opts.kind = CKAV_SWEEP_K;
    else if (o.kind == "temp") opts.kind = CKAV_SWEEP_TEMP;
    else if (o.kind == "grad-eta") opts.kind = CKAV_SWEEP_GRAD_ETA;
    else if (o.kind == "opt-eta") opts.kind = CKAV_SWEEP_OPT_ETA;
    else if (o.kind == "simplex") opts.kind = CKAV_SWEEP_SIMPLEX;
    else throw Failure{kExitUsage, "unknown sweep kind '" + o.kind + "'"};

    if (o.format == "csv") opts.format = CKAV_FORMAT_CSV;
    else if (o.format == "json") opts.format = CKAV_FORMAT_JSON;
    else throw Failure{kExitUsage, "unknown format '" + o.format + "'"};

    const auto objective = load_objective(o.spec, o.dev);
    const auto ckpts = load_checkpoints(o.files);
    const auto handles = raw_handles(ckpts);

    opts.selection = parse_selection(o.select);
    if (opts.kind == CKAV_SWEEP_K) {
        opts.k = o.k_max.value_or(o.k.value_or(handles.size()));
    } else {
        opts.k = o.k.value_or(handles.size());
    }
    opts.tau = o.tau;
    opts.resolution = o.resolution;
    opts.threads = o.threads;
    std::vector<double> grid;
    if (!o.grid.empty()) {
        grid = parse_grid(o.grid);
        opts.grid = grid.data();
        opts.grid_len = grid.size();
    }

    char* text_raw = nullptr;
    char* summary_raw = nullptr;
    check(ckav_sweep(handles.data(), handles.size(), objective.get(), &opts, &text_raw, &summary_raw));
    OwnedString text(text_raw), summary(summary_raw);
    if (o.out.empty()) {
        emit(text.get());
        std::cerr << summary.get() << "\n";
    } else {
        write_text(o.out, text.get());
        json s = json::parse(summary.get());
        s["out"] = o.out;
        emit(s.dump());
    }
    return kExitOk;
}

std::size_t default_threads() {
    if (const char* env = std::getenv("CKAV_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
        std::cerr << "ignoring invalid CKAV_THREADS='" << env << "'\n";
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string version = std::string("ckav ") + ckav_version();
    CLI::App app{"Checkpoint averaging: toy training, averaging, weight optimization and sweeps"};
    app.set_version_flag("--version", version);
    app.require_subcommand(1);

    auto add_version = [&](CLI::App* sub) { sub->set_version_flag("--version", version); };
    const std::size_t threads_default = default_threads();

    TrainOptions train_opts;
    auto* train = app.add_subcommand("train-toy", "Train the toy MLP with Adam and write a checkpoint series");
    add_version(train);
    train->add_option("--spec", train_opts.spec, "Model/data spec JSON file")->required();
    train->add_option("--adam", train_opts.adam, "Adam config JSON file (defaults if omitted)");
    train->add_option("--out-dir", train_opts.out_dir, "Existing output directory")->required();
    train->add_option("--seed", train_opts.seed, "Overrides the Adam seed");

    TrainOptions quad_opts;
    auto* quad = app.add_subcommand("gen-quadratic", "Sample noisy checkpoints around a quadratic optimum");
    add_version(quad);
    quad->add_option("--spec", quad_opts.spec, "Quadratic task JSON file")->required();
    quad->add_option("--out-dir", quad_opts.out_dir, "Existing output directory")->required();
    quad->add_option("--seed", quad_opts.seed, "Overrides the spec seed");

    std::string inspect_path;
    bool allow_nonfinite = false;
    auto* inspect = app.add_subcommand("inspect", "Print tensor names, shapes and metadata as JSON");
    add_version(inspect);
    inspect->add_option("checkpoint", inspect_path)->required();
    inspect->add_flag("--allow-nonfinite", allow_nonfinite, "Accept NaN/Inf tensor values");

    std::string eval_spec, eval_dev, eval_path;
    auto* eval = app.add_subcommand("eval", "Evaluate dev loss and perplexity of a checkpoint");
    add_version(eval);
    eval->add_option("--spec", eval_spec, "Model spec or quadratic task JSON file")->required();
    eval->add_option("--dev", eval_dev, "Dev dataset (.ckav); not needed for quadratic tasks");
    eval->add_option("checkpoint", eval_path)->required();

    AverageOptions avg_opts;
    avg_opts.threads = threads_default;
    auto* average = app.add_subcommand("average", "Average checkpoints");
    add_version(average);
    average->add_option("--scheme", avg_opts.scheme, "uniform | ppl-softmax")
        ->check(CLI::IsMember({"uniform", "ppl-softmax"}));
    average->add_option("--tau", avg_opts.tau, "Temperature for ppl-softmax");
    average->add_option("--grad-step", avg_opts.grad_step, "Subtract eta times the mean stored gradient");
    average->add_option("--weights", avg_opts.weights, "Explicit weights w1,w2,... (sum 1 within 1e-9)");
    average->add_option("--select", avg_opts.select, "top-k | last-k-best | last-k-end")
        ->check(CLI::IsMember({"top-k", "last-k-best", "last-k-end"}));
    average->add_option("--k", avg_opts.k, "Number of checkpoints to select");
    average->add_option("--out", avg_opts.out, "Output checkpoint path")->required();
    average->add_option("--threads", avg_opts.threads, "Worker threads (env CKAV_THREADS)")->check(CLI::PositiveNumber);
    average->add_option("checkpoints", avg_opts.files)->required();

    OptimizeOptions opt_opts;
    opt_opts.threads = threads_default;
    auto* optimize = app.add_subcommand("optimize-weights", "One-step gradient optimization of interpolation weights");
    add_version(optimize);
    optimize->add_option("--eta", opt_opts.eta, "Logit step size")->required();
    optimize->add_option("--dev", opt_opts.dev, "Dev dataset (.ckav); not needed for quadratic tasks");
    optimize->add_option("--spec", opt_opts.spec, "Model spec or quadratic task JSON file")->required();
    optimize->add_option("--report", opt_opts.report, "Write the JSON report to this file");
    optimize->add_option("--out", opt_opts.out, "Also write the averaged checkpoint");
    optimize->add_option("--threads", opt_opts.threads, "Worker threads (env CKAV_THREADS)")->check(CLI::PositiveNumber);
    optimize->add_option("checkpoints", opt_opts.files)->required();

    SweepOptions sweep_opts;
    sweep_opts.threads = threads_default;
    auto* sweep = app.add_subcommand("sweep", "Hyperparameter sweeps: k | temp | grad-eta | opt-eta | simplex");
    add_version(sweep);
    sweep->add_option("kind", sweep_opts.kind, "k | temp | grad-eta | opt-eta | simplex")
        ->required()
        ->check(CLI::IsMember({"k", "temp", "grad-eta", "opt-eta", "simplex"}));
    sweep->add_option("--grid", sweep_opts.grid, "Comma list or JSON array of tau/eta values");
    sweep->add_option("--dev", sweep_opts.dev, "Dev dataset (.ckav); not needed for quadratic tasks");
    sweep->add_option("--spec", sweep_opts.spec, "Model spec or quadratic task JSON file")->required();
    sweep->add_option("--out", sweep_opts.out, "Output file (stdout if omitted)");
    sweep->add_option("--format", sweep_opts.format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
    sweep->add_option("--select", sweep_opts.select, "top-k | last-k-best | last-k-end")
        ->check(CLI::IsMember({"top-k", "last-k-best", "last-k-end"}));
    sweep->add_option("--k", sweep_opts.k, "Selected checkpoint count (temp, grad-eta)");
    sweep->add_option("--k-max", sweep_opts.k_max, "Largest K for the k sweep");
    sweep->add_option("--tau", sweep_opts.tau, "Temperature for grad-eta");
    sweep->add_option("--resolution", sweep_opts.resolution, "Simplex grid resolution R")->check(CLI::PositiveNumber);
    sweep->add_option("--threads", sweep_opts.threads, "Worker threads (env CKAV_THREADS)")->check(CLI::PositiveNumber);
    sweep->add_option("checkpoints", sweep_opts.files)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*train) return run_train_toy(train_opts);
        if (*quad) return run_gen_quadratic(quad_opts);
        if (*inspect) return run_inspect(inspect_path, allow_nonfinite);
        if (*eval) return run_eval(eval_spec, eval_dev, eval_path);
        if (*average) return run_average(avg_opts);
        if (*optimize) return run_optimize(opt_opts);
        if (*sweep) return run_sweep(sweep_opts);
    } catch (const Failure& f) {
        std::cerr << "error: " << f.message << "\n";
        return f.exit_code;
    }
    std::cerr << app.help();
    return kExitUsage;
}
