// Command-line front end: generate synthetic data, train a single model, or
// sweep a hyperparameter axis with repeats.  Exit codes: 0 success, 1 usage,
// 2 data/schema error, 3 numeric abort during training.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fairgrad/fairgrad.hpp"

namespace fs = std::filesystem;
using namespace fairgrad;

namespace {

struct TrainArgs {
    std::string data;
    std::string label_col;
    std::string sensitive_col;
    std::string fairness = "ap";
    std::string desirable;  // comma-separated original label values
    std::string mode = "fairgrad";
    std::optional<double> epsilon;
    std::string model = "linear";
    std::string hidden = "128,64,32";
    double dropout = 0.2;
    double lr = 0.1;
    double lambda_lr = 0.01;
    double clip_norm = 0.05;
    int batch_size = 64;
    int epochs = 100;
    double beta = 0.03;
    std::uint64_t seed = 1;
    std::string out;
};

std::string default_out_dir() {
    if (const char* env = std::getenv("FAIRGRAD_OUT")) return env;
    return "fairgrad_out";
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty() || !out.empty()) out.push_back(cur);
    return out;
}

void add_train_flags(CLI::App* cmd, TrainArgs& a) {
    cmd->add_option("--data", a.data, "input CSV")->required();
    cmd->add_option("--label-col", a.label_col, "name of the class column")->required();
    cmd->add_option("--sensitive-col", a.sensitive_col, "name of the protected column")
        ->required();
    cmd->add_option("--fairness", a.fairness, "fairness notion")
        ->check(CLI::IsMember({"ap", "eodds", "eopp"}))
        ->required();
    cmd->add_option("--desirable-labels", a.desirable,
                    "comma-separated label values (eopp only)");
    cmd->add_option("--mode", a.mode, "training mode")
        ->check(CLI::IsMember({"unconstrained", "fairgrad"}));
    cmd->add_option("--epsilon", a.epsilon, "fairness slack (fairgrad mode)");
    cmd->add_option("--model", a.model, "architecture")
        ->check(CLI::IsMember({"linear", "mlp"}));
    cmd->add_option("--hidden-sizes", a.hidden, "mlp hidden layer sizes");
    cmd->add_option("--dropout", a.dropout, "mlp dropout rate");
    cmd->add_option("--lr", a.lr, "learning rate");
    cmd->add_option("--lambda-lr", a.lambda_lr, "multiplier learning rate");
    cmd->add_option("--clip-norm", a.clip_norm, "L2 gradient clip");
    cmd->add_option("--batch-size", a.batch_size, "batch size");
    cmd->add_option("--epochs", a.epochs, "epoch count");
    cmd->add_option("--beta", a.beta, "selection accuracy window");
    cmd->add_option("--seed", a.seed, "base seed");
    cmd->add_option("--out", a.out, "output directory (default $FAIRGRAD_OUT)");
}

struct Usage : std::runtime_error {
    using std::runtime_error::runtime_error;
};

FairnessNotion make_notion(const TrainArgs& a, const LoadedCsv& loaded) {
    if (a.fairness == "ap") return FairnessNotion::accuracy_parity();
    if (a.fairness == "eodds") return FairnessNotion::equalized_odds();
    if (a.desirable.empty())
        throw Usage("--fairness eopp requires --desirable-labels");
    std::vector<int> codes;
    for (const std::string& v : split_list(a.desirable)) {
        bool found = false;
        for (std::size_t c = 0; c < loaded.label_values.size(); ++c)
            if (loaded.label_values[c] == v) {
                codes.push_back(static_cast<int>(c));
                found = true;
            }
        if (!found)
            throw DataError("desirable label '" + v + "' does not occur in '" +
                            a.data + "'");
    }
    return FairnessNotion::equal_opportunity(std::move(codes));
}

ModelSpec make_model(const TrainArgs& a, const Dataset& ds) {
    if (a.model == "linear")
        return ModelSpec::linear(static_cast<int>(ds.dim()), ds.label_count);
    std::vector<int> hidden;
    for (const std::string& h : split_list(a.hidden)) {
        try {
            hidden.push_back(std::stoi(h));
        } catch (const std::exception&) {
            throw Usage("bad --hidden-sizes entry '" + h + "'");
        }
    }
    return ModelSpec::mlp(static_cast<int>(ds.dim()), ds.label_count, hidden, a.dropout);
}

TrainConfig make_config(const TrainArgs& a, const ModelSpec& model) {
    TrainConfig cfg;
    cfg.model = model;
    if (a.mode == "unconstrained") {
        if (a.epsilon) throw Usage("--epsilon only applies to --mode fairgrad");
        cfg.mode = TrainMode::Unconstrained;
    } else if (a.epsilon) {
        if (*a.epsilon < 0.0) throw Usage("--epsilon must be >= 0");
        cfg.mode = TrainMode::FairGradEpsilon;
        cfg.epsilon = *a.epsilon;
    } else {
        cfg.mode = TrainMode::FairGradExact;
    }
    cfg.learning_rate = a.lr;
    cfg.lambda_lr = a.lambda_lr;
    cfg.clip_norm = a.clip_norm;
    cfg.batch_size = a.batch_size;
    cfg.epochs = a.epochs;
    cfg.beta = a.beta;
    cfg.seed = a.seed;
    return cfg;
}

std::string file_fingerprint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return buf;
}

std::string json_str(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"' || ch == '\\') out += '\\';
        out += ch;
    }
    return out + "\"";
}

/// The manifest pins everything needed to reproduce the run bit for bit;
/// it is written before training starts.
void write_manifest(const TrainArgs& a, const std::string& command,
                    const std::string& axis_name, const std::string& axis_values,
                    int repeats, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << "{\n";
    out << "  \"command\": " << json_str(command) << ",\n";
    out << "  \"data\": " << json_str(a.data) << ",\n";
    out << "  \"data_fnv1a\": " << json_str(file_fingerprint(a.data)) << ",\n";
    out << "  \"label_col\": " << json_str(a.label_col) << ",\n";
    out << "  \"sensitive_col\": " << json_str(a.sensitive_col) << ",\n";
    out << "  \"fairness\": " << json_str(a.fairness) << ",\n";
    out << "  \"desirable_labels\": " << json_str(a.desirable) << ",\n";
    out << "  \"mode\": " << json_str(a.mode) << ",\n";
    out << "  \"epsilon\": " << (a.epsilon ? fmt17(*a.epsilon) : "null") << ",\n";
    out << "  \"model\": " << json_str(a.model) << ",\n";
    out << "  \"hidden_sizes\": " << json_str(a.hidden) << ",\n";
    out << "  \"dropout\": " << fmt17(a.dropout) << ",\n";
    out << "  \"lr\": " << fmt17(a.lr) << ",\n";
    out << "  \"lambda_lr\": " << fmt17(a.lambda_lr) << ",\n";
    out << "  \"clip_norm\": " << fmt17(a.clip_norm) << ",\n";
    out << "  \"batch_size\": " << a.batch_size << ",\n";
    out << "  \"epochs\": " << a.epochs << ",\n";
    out << "  \"beta\": " << fmt17(a.beta) << ",\n";
    out << "  \"seed\": " << a.seed << ",\n";
    if (!axis_name.empty()) {
        out << "  \"" << axis_name << "\": " << json_str(axis_values) << ",\n";
        out << "  \"repeats\": " << repeats << ",\n";
    }
    out << "  \"out\": " << json_str(a.out) << "\n}\n";
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

int cmd_generate(const std::string& spec_path, const std::string& out_path) {
    const SyntheticSpec spec = load_synthetic_spec(spec_path);
    const Dataset ds = gen_synthetic(spec);
    save_csv(ds, out_path);
    std::cout << "wrote " << ds.size() << " rows (" << ds.dim() << " features, "
              << ds.label_count << " labels, " << ds.sensitive_count
              << " sensitive values) to " << out_path << "\n";
    return 0;
}

/// One full pipeline run: load, split, standardize, train, select, report.
struct RunOutcome {
    TrainResult result;
    FairnessReport test_report;
    ModelSpec model;
};

RunOutcome run_pipeline(const TrainArgs& a, TrainConfig cfg, const LoadedCsv& loaded,
                        const FairnessNotion& notion, std::uint64_t seed) {
    Split parts = split(loaded.data, seed);
    standardize(parts.train, {&parts.val, &parts.test});
    cfg.seed = seed;
    RunOutcome out{train(cfg, parts.train, parts.val, notion),
                   FairnessReport{}, cfg.model};
    out.test_report = evaluate(out.result.selected().params, parts.test, notion);
    return out;
}

int cmd_train(const TrainArgs& a) {
    fs::create_directories(a.out);
    write_manifest(a, "train", "", "", 0, fs::path(a.out) / "manifest.json");

    const LoadedCsv loaded = load_csv(a.data, a.label_col, a.sensitive_col);
    const FairnessNotion notion = make_notion(a, loaded);
    const ModelSpec model = make_model(a, loaded.data);
    const TrainConfig cfg = make_config(a, model);

    const RunOutcome run = run_pipeline(a, cfg, loaded, notion, a.seed);
    write_report_json(run.test_report, (fs::path(a.out) / "report.json").string());
    write_history_csv(run.result.history, (fs::path(a.out) / "history.csv").string());
    save_checkpoint(run.result.selected().params, model,
                    (fs::path(a.out) / "checkpoint.json").string());

    std::cout << "selected epoch " << run.result.selected().epoch << "/" << cfg.epochs
              << ": test accuracy " << fmt17(run.test_report.accuracy)
              << ", mean |fairness| " << fmt17(run.test_report.mean_abs_fairness)
              << "\n"
              << "artifacts in " << a.out << "\n";
    return 0;
}

struct SweepRow {
    std::string setting;
    int repeat = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    bool numeric_failure = false;
    double accuracy = 0.0;
    double fairness = 0.0;
    int selected_epoch = 0;
    std::string error;
};

int cmd_sweep(const TrainArgs& a, const std::string& epsilons,
              const std::string& batch_sizes, int repeats) {
    if (epsilons.empty() == batch_sizes.empty())
        throw Usage("sweep needs exactly one of --epsilons or --batch-sizes");
    if (repeats < 1) throw Usage("--repeats must be >= 1");
    const bool eps_axis = !epsilons.empty();
    if (eps_axis && a.mode == "unconstrained")
        throw Usage("--epsilons only applies to --mode fairgrad");

    std::vector<std::string> settings = split_list(eps_axis ? epsilons : batch_sizes);
    const std::string axis = eps_axis ? "epsilon" : "batch_size";

    fs::create_directories(a.out);
    write_manifest(a, "sweep", eps_axis ? "epsilons" : "batch_sizes",
                   eps_axis ? epsilons : batch_sizes, repeats,
                   fs::path(a.out) / "manifest.json");

    const LoadedCsv loaded = load_csv(a.data, a.label_col, a.sensitive_col);
    const FairnessNotion notion = make_notion(a, loaded);
    const ModelSpec model = make_model(a, loaded.data);

    std::vector<SweepRow> rows;
    for (const std::string& setting : settings) {
        for (int rep = 0; rep < repeats; ++rep) {
            SweepRow row;
            row.setting = setting;
            row.repeat = rep;
            row.seed = a.seed + static_cast<std::uint64_t>(rep);
            try {
                TrainArgs run_args = a;
                if (eps_axis) run_args.epsilon = std::stod(setting);
                TrainConfig cfg = make_config(run_args, model);
                if (!eps_axis) {
                    cfg.batch_size = std::stoi(setting);
                    if (cfg.batch_size < 1) throw Usage("batch size must be >= 1");
                }
                const RunOutcome run = run_pipeline(a, cfg, loaded, notion, row.seed);
                row.ok = true;
                row.accuracy = run.test_report.accuracy;
                row.fairness = run.test_report.mean_abs_fairness;
                row.selected_epoch = run.result.selected().epoch;
                std::cout << axis << "=" << setting << " repeat=" << rep
                          << ": accuracy " << fmt17(row.accuracy) << ", mean |fairness| "
                          << fmt17(row.fairness) << "\n";
            } catch (const Usage&) {
                throw;
            } catch (const NumericError& e) {
                row.numeric_failure = true;
                row.error = e.what();
                std::cout << axis << "=" << setting << " repeat=" << rep
                          << ": FAILED (" << row.error << ")\n";
            } catch (const std::exception& e) {
                row.error = e.what();
                std::cout << axis << "=" << setting << " repeat=" << rep
                          << ": FAILED (" << row.error << ")\n";
            }
            rows.push_back(std::move(row));
        }
    }

    {
        std::ofstream runs(fs::path(a.out) / "sweep_runs.csv");
        if (!runs) throw DataError("cannot write sweep_runs.csv");
        runs << axis << ",repeat,seed,status,test_accuracy,mean_abs_fairness,"
                "selected_epoch,error\n";
        for (const auto& r : rows) {
            std::string err = r.error;
            for (char& ch : err)
                if (ch == ',' || ch == '\n') ch = ';';
            runs << r.setting << "," << r.repeat << "," << r.seed << ","
                 << (r.ok ? "ok" : "failed") << ",";
            if (r.ok)
                runs << fmt17(r.accuracy) << "," << fmt17(r.fairness) << ","
                     << r.selected_epoch;
            else
                runs << ",,";
            runs << "," << err << "\n";
        }
    }

    {
        std::ofstream agg(fs::path(a.out) / "sweep_aggregate.csv");
        if (!agg) throw DataError("cannot write sweep_aggregate.csv");
        agg << axis << ",runs,accuracy_mean,accuracy_std,fairness_mean,fairness_std\n";
        for (const std::string& setting : settings) {
            std::vector<double> acc, fair;
            for (const auto& r : rows)
                if (r.ok && r.setting == setting) {
                    acc.push_back(r.accuracy);
                    fair.push_back(r.fairness);
                }
            auto mean = [](const std::vector<double>& v) {
                double s = 0.0;
                for (double x : v) s += x;
                return v.empty() ? 0.0 : s / double(v.size());
            };
            // population standard deviation, to match by-hand recomputation
            auto stddev = [&](const std::vector<double>& v) {
                if (v.empty()) return 0.0;
                const double m = mean(v);
                double s = 0.0;
                for (double x : v) s += (x - m) * (x - m);
                return std::sqrt(s / double(v.size()));
            };
            agg << setting << "," << acc.size() << "," << fmt17(mean(acc)) << ","
                << fmt17(stddev(acc)) << "," << fmt17(mean(fair)) << ","
                << fmt17(stddev(fair)) << "\n";
        }
    }

    bool any_failed = false, any_numeric = false;
    for (const auto& r : rows) {
        any_failed |= !r.ok;
        any_numeric |= r.numeric_failure;
    }
    std::cout << "sweep artifacts in " << a.out << "\n";
    if (any_failed) {
        std::cerr << "sweep finished with failed runs\n";
        return any_numeric ? 3 : 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fairness-aware classifier training via group reweighting"};
    app.require_subcommand(1);

    std::string gen_spec, gen_out;
    CLI::App* gen = app.add_subcommand("generate", "generate a synthetic CSV");
    gen->add_option("--spec", gen_spec, "synthetic spec JSON")->required();
    gen->add_option("--out", gen_out, "output CSV path")->required();

    TrainArgs train_args;
    CLI::App* tr = app.add_subcommand("train", "train and evaluate one model");
    add_train_flags(tr, train_args);

    TrainArgs sweep_args;
    std::string sweep_epsilons, sweep_batches;
    int sweep_repeats = 5;
    CLI::App* sw = app.add_subcommand("sweep", "repeat training along one axis");
    add_train_flags(sw, sweep_args);
    sw->add_option("--epsilons", sweep_epsilons, "comma-separated epsilon values");
    sw->add_option("--batch-sizes", sweep_batches, "comma-separated batch sizes");
    sw->add_option("--repeats", sweep_repeats, "repetitions per setting");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_generate(gen_spec, gen_out);
        if (tr->parsed()) {
            if (train_args.out.empty()) train_args.out = default_out_dir();
            return cmd_train(train_args);
        }
        if (sweep_args.out.empty()) sweep_args.out = default_out_dir();
        return cmd_sweep(sweep_args, sweep_epsilons, sweep_batches, sweep_repeats);
    } catch (const Usage& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
