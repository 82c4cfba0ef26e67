#include "marglik/commands.hpp"

#include "marglik/rng.hpp"

#include <json.hpp>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace marglik {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

void write_meta(const RunConfig& cfg, const std::string& out_dir,
                const std::string& command) {
    json meta = json::parse(config_to_json(cfg));
    meta["command"] = command;
    std::ofstream out(fs::path(out_dir) / "meta.json");
    out << meta.dump(2) << "\n";
}

struct CsvFile {
    std::ofstream out;

    CsvFile(const fs::path& path, const std::vector<std::string>& header)
        : out(path) {
        if (!out) throw MarglikError("cannot open " + path.string());
        for (std::size_t i = 0; i < header.size(); ++i)
            out << (i ? "," : "") << header[i];
        out << "\n";
    }
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i)
            out << (i ? "," : "") << cells[i];
        out << "\n";
        out.flush();
    }
};

double wallclock_ms(const std::function<void()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                     t0)
        .count();
}

}  // namespace

void save_state(const std::string& prefix, const Network& net, const TrainedState& st,
                const Hyperparameters& h) {
    static_assert(sizeof(double) == 8);
    std::ofstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw MarglikError("cannot open " + prefix + ".bin");
    for (long i = 0; i < st.mode.size(); ++i) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(st.mode[i]);
        if constexpr (std::endian::native == std::endian::big) {
            std::uint64_t sw = 0;
            for (int b = 0; b < 8; ++b) sw |= ((bits >> (8 * b)) & 0xffu) << (8 * (7 - b));
            bits = sw;
        }
        bin.write(reinterpret_cast<const char*>(&bits), 8);
    }
    json side;
    side["format"] = {{"dtype", "float64-le"}, {"count", st.mode.size()}};
    side["epoch"] = st.epoch;
    side["layout"] = {{"input_dim", net.input_dim()},
                      {"hidden", net.hidden_dims()},
                      {"output_dim", net.output_dim()},
                      {"param_count", net.param_count()},
                      {"order", "per layer: weights row-major, then bias"}};
    side["hyperparameters"] = {{"prior_mode", to_string(h.prior.mode)}};
    std::vector<double> lv(h.prior.log_values.data(),
                           h.prior.log_values.data() + h.prior.log_values.size());
    side["hyperparameters"]["log_prior"] = lv;
    if (h.log_sigma2) side["hyperparameters"]["log_sigma2"] = *h.log_sigma2;
    if (h.eta) {
        std::vector<double> eta(h.eta->data(), h.eta->data() + h.eta->size());
        side["hyperparameters"]["eta"] = eta;
    }
    std::ofstream meta(prefix + ".json");
    meta << side.dump(2) << "\n";
}

TrainedState load_state(const std::string& prefix, const Network& net,
                        Hyperparameters* h) {
    std::ifstream meta(prefix + ".json");
    if (!meta) throw MarglikError("cannot open " + prefix + ".json");
    json side = json::parse(meta);
    const long count = side.at("format").at("count").get<long>();
    if (count != net.param_count())
        throw CountMismatch("state has " + std::to_string(count) +
                            " parameters, network expects " +
                            std::to_string(net.param_count()));
    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw MarglikError("cannot open " + prefix + ".bin");
    TrainedState st;
    st.mode.resize(count);
    for (long i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        if (!bin.read(reinterpret_cast<char*>(&bits), 8))
            throw Truncated(prefix + ".bin: truncated at parameter " + std::to_string(i));
        if constexpr (std::endian::native == std::endian::big) {
            std::uint64_t sw = 0;
            for (int b = 0; b < 8; ++b) sw |= ((bits >> (8 * b)) & 0xffu) << (8 * (7 - b));
            bits = sw;
        }
        st.mode[i] = std::bit_cast<double>(bits);
    }
    st.epoch = side.value("epoch", 0);
    if (h && side.contains("hyperparameters")) {
        const json& hp = side.at("hyperparameters");
        h->prior.mode = prior_mode_from_string(hp.at("prior_mode").get<std::string>());
        const auto lv = hp.at("log_prior").get<std::vector<double>>();
        h->prior.log_values.resize(static_cast<long>(lv.size()));
        for (std::size_t i = 0; i < lv.size(); ++i)
            h->prior.log_values[static_cast<long>(i)] = lv[i];
        if (hp.contains("log_sigma2")) h->log_sigma2 = hp.at("log_sigma2").get<double>();
        if (hp.contains("eta")) {
            const auto ev = hp.at("eta").get<std::vector<double>>();
            Vector eta(static_cast<long>(ev.size()));
            for (std::size_t i = 0; i < ev.size(); ++i) eta[static_cast<long>(i)] = ev[i];
            h->eta = eta;
        }
    }
    return st;
}

Dataset build_dataset(const RunConfig& cfg) {
    const auto& d = cfg.dataset;
    if (d.kind == "sinusoid") return gen_sinusoid(d.n, d.noise_sd, d.seed);
    if (d.kind == "blobs") return gen_blobs(d.n, d.classes, d.seed);
    if (d.kind == "rotated_blobs")
        return gen_rotated_blobs(d.n, d.classes, d.max_angle, d.seed);
    if (d.kind == "mnist")
        return load_idx_mnist(d.images, d.labels, d.n, d.seed, d.max_angle);
    throw ConfigError("unknown dataset kind '" + d.kind + "'");
}

Network build_network(const RunConfig& cfg, const Dataset& ds) {
    const int input_dim = static_cast<int>(ds.inputs.cols());
    int output_dim = 1;
    if (ds.classification()) {
        int max_label = 0;
        for (int y : ds.targets_class) max_label = std::max(max_label, y);
        output_dim = max_label + 1;
    } else {
        output_dim = static_cast<int>(ds.targets_real.cols());
    }
    return Network(input_dim, cfg.network.hidden, output_dim, cfg.network.activation);
}

namespace {

struct Workbench {
    Dataset dataset;
    Network net;
    TrainProblem problem;
    Hyperparameters hyper;
    TrainedState state;
};

// Dataset + network + either a loaded or freshly trained state.
Workbench make_workbench(const RunConfig& cfg, bool train_if_no_state) {
    Dataset ds = build_dataset(cfg);
    Network net = build_network(cfg, ds);
    Workbench wb{std::move(ds), std::move(net), {}, {}, {}};
    wb.problem.net = &wb.net;
    wb.problem.likelihood = cfg.likelihood;
    wb.problem.transform = cfg.hyper.transform;
    wb.problem.transform_samples = cfg.hyper.transform_samples;
    wb.problem.train = wb.dataset.train();
    wb.problem.test = wb.dataset.test();
    wb.hyper = initial_hyperparameters(cfg, wb.net);
    if (!cfg.state_file.empty()) {
        wb.state = load_state(cfg.state_file, wb.net, &wb.hyper);
    } else if (train_if_no_state) {
        TrainResult r = interleaved_train(cfg.train, wb.problem,
                                          init_params(wb.net, cfg.network.init_seed),
                                          wb.hyper);
        wb.state = std::move(r.state);
        wb.hyper = std::move(r.hyper);
    } else {
        wb.state.mode = init_params(wb.net, cfg.network.init_seed);
    }
    return wb;
}

Model model_of(const Workbench& wb, const RunConfig& cfg) {
    Model m;
    m.net = &wb.net;
    m.mode = wb.state.mode;
    m.likelihood = cfg.likelihood;
    m.transform = cfg.hyper.transform;
    m.transform_samples = cfg.hyper.transform_samples;
    m.transform_seed = keyed_hash(cfg.seed, 0xE75, 0);
    m.limits = cfg.train.limits;
    return m;
}

std::vector<std::string> hyper_column_names(const Hyperparameters& h) {
    std::vector<std::string> names;
    for (long g = 0; g < h.prior.log_values.size(); ++g)
        names.push_back("log_prior_" + std::to_string(g));
    if (h.log_sigma2) names.push_back("log_sigma2");
    if (h.eta)
        for (long i = 0; i < h.eta->size(); ++i)
            names.push_back("eta_" + std::to_string(i));
    return names;
}

std::vector<std::string> hyper_column_values(const Hyperparameters& h) {
    std::vector<std::string> vals;
    for (long g = 0; g < h.prior.log_values.size(); ++g)
        vals.push_back(format_double(h.prior.log_values[g]));
    if (h.log_sigma2) vals.push_back(format_double(*h.log_sigma2));
    if (h.eta)
        for (long i = 0; i < h.eta->size(); ++i)
            vals.push_back(format_double((*h.eta)[i]));
    return vals;
}

}  // namespace

int cmd_train(RunConfig cfg, const std::string& out_dir,
              std::optional<std::uint64_t> seed_override, std::ostream& log) {
    if (seed_override) {
        cfg.seed = *seed_override;
        cfg.train.seed = *seed_override;
    }
    fs::create_directories(out_dir);
    const std::string ts = timestamp_now();
    write_meta(cfg, out_dir, "train");

    Dataset ds = build_dataset(cfg);
    Network net = build_network(cfg, ds);
    TrainProblem problem;
    problem.net = &net;
    problem.likelihood = cfg.likelihood;
    problem.transform = cfg.hyper.transform;
    problem.transform_samples = cfg.hyper.transform_samples;
    problem.train = ds.train();
    problem.test = ds.test();
    Hyperparameters h0 = initial_hyperparameters(cfg, net);

    std::vector<std::string> header{"epoch",          "train_logjoint", "marglik_total",
                                    "marglik_loglik", "marglik_logprior",
                                    "marglik_logdet"};
    for (const auto& n : hyper_column_names(h0)) header.push_back(n);
    header.insert(header.end(), {"hypergrad_ms", "test_loglik", "test_metric"});
    CsvFile csv(fs::path(out_dir) / ("train_" + ts + ".csv"), header);

    auto sink = [&](const EpochRecord& rec) {
        std::vector<std::string> cells{std::to_string(rec.epoch),
                                       format_double(rec.train_logjoint),
                                       format_double(rec.marglik.total),
                                       format_double(rec.marglik.log_lik),
                                       format_double(rec.marglik.log_prior),
                                       format_double(rec.marglik.logdet_term)};
        for (const auto& v : hyper_column_values(rec.hyper)) cells.push_back(v);
        cells.push_back(format_double(rec.hypergrad_ms));
        cells.push_back(format_double(rec.test_loglik));
        cells.push_back(format_double(rec.test_metric));
        csv.row(cells);
    };

    TrainResult result = interleaved_train(cfg.train, problem,
                                           init_params(net, cfg.network.init_seed), h0,
                                           sink);
    const std::string prefix = (fs::path(out_dir) / ("state_" + ts)).string();
    save_state(prefix, net, result.state, result.hyper);
    log << "trained " << cfg.train.epochs << " epochs; state at " << prefix
        << ".bin\n";
    return 0;
}

int cmd_grid(RunConfig cfg, const std::string& out_dir,
             std::optional<std::uint64_t> seed_override, std::ostream& log) {
    if (seed_override) {
        cfg.seed = *seed_override;
        cfg.train.seed = *seed_override;
    }
    fs::create_directories(out_dir);
    const std::string ts = timestamp_now();
    write_meta(cfg, out_dir, "grid");

    Workbench wb = make_workbench(cfg, /*train_if_no_state=*/true);
    const Model model = model_of(wb, cfg);
    const int n_train = wb.problem.train.size();
    const int n_out = wb.net.output_dim();

    CsvFile csv(fs::path(out_dir) / ("grid_" + ts + ".csv"),
                {"hyper_value", "estimator_tag", "total", "log_lik", "log_prior",
                 "logdet_term", "eval_ms"});

    // one partition per estimator entry, fixed across the grid
    std::vector<DataPartition> partitions(cfg.grid.estimators.size());
    std::vector<ParamPartition> param_partitions(cfg.grid.estimators.size());
    const ParamLayout layout = param_layout(wb.net);
    for (std::size_t e = 0; e < cfg.grid.estimators.size(); ++e) {
        const auto& ge = cfg.grid.estimators[e];
        const PartitionConfig pc = ge.partition.value_or(cfg.train.partition);
        partitions[e] = build_data_partition(pc, n_train, n_out, wb.problem.train.labels,
                                             keyed_hash(cfg.seed, 0x6D, e));
        if (ge.param_partition == "layerwise")
            param_partitions[e] = layerwise_param_partition(layout);
        else if (ge.param_partition == "diagonal")
            param_partitions[e] = diagonal_param_partition(layout.total);
        else
            param_partitions[e] = full_param_partition(layout.total);
    }

    for (int i = 0; i < cfg.grid.points; ++i) {
        const double v = cfg.grid.points == 1
                             ? cfg.grid.min
                             : cfg.grid.min + (cfg.grid.max - cfg.grid.min) * i /
                                                  (cfg.grid.points - 1);
        Hyperparameters h = wb.hyper;
        if (cfg.grid.axis == "log_prior" || cfg.grid.axis == "log_precision") {
            h.prior.log_values.setConstant(v);
        } else if (cfg.grid.axis == "log_sigma2") {
            if (!h.log_sigma2) throw ConfigError("grid axis log_sigma2 needs a gaussian likelihood");
            h.log_sigma2 = v;
        } else if (cfg.grid.axis.rfind("eta", 0) == 0) {
            const int idx = std::stoi(cfg.grid.axis.substr(3));
            if (!h.eta || idx < 0 || idx >= h.eta->size())
                throw ConfigError("grid axis '" + cfg.grid.axis + "' out of range");
            (*h.eta)[idx] = v;
        } else {
            throw ConfigError("unknown grid axis '" + cfg.grid.axis + "'");
        }
        for (std::size_t e = 0; e < cfg.grid.estimators.size(); ++e) {
            const auto& ge = cfg.grid.estimators[e];
            EstimatorInputs inputs;
            inputs.dp = &partitions[e];
            if (ge.spec.kind == EstimatorKind::parametric ||
                ge.spec.kind == EstimatorKind::doubly)
                if (!ge.param_partition.empty()) inputs.pp = &param_partitions[e];
            if (ge.spec.kind == EstimatorKind::stochastic)
                inputs.batch = uniform_index(partitions[e].size(),
                                             keyed_hash(cfg.seed, 0x9B, e),
                                             static_cast<std::uint64_t>(i));
            MargLikComponents comps;
            const double ms = wallclock_ms([&] {
                comps = evaluate_estimator(ge.spec, model, wb.problem.train, h, inputs);
            });
            csv.row({format_double(v), ge.label, format_double(comps.total),
                     format_double(comps.log_lik), format_double(comps.log_prior),
                     format_double(comps.logdet_term), format_double(ms)});
        }
    }
    log << "grid written (" << cfg.grid.points << " points x "
        << cfg.grid.estimators.size() << " estimators)\n";
    return 0;
}

int cmd_pareto(RunConfig cfg, const std::string& out_dir,
               std::optional<std::uint64_t> seed_override, std::ostream& log) {
    if (seed_override) {
        cfg.seed = *seed_override;
        cfg.train.seed = *seed_override;
    }
    fs::create_directories(out_dir);
    const std::string ts = timestamp_now();
    write_meta(cfg, out_dir, "pareto");

    Workbench wb = make_workbench(cfg, /*train_if_no_state=*/true);
    const Model model = model_of(wb, cfg);
    const int n_train = wb.problem.train.size();
    const int n_out = wb.net.output_dim();
    const ParamLayout layout = param_layout(wb.net);
    const ParamPartition layerwise = layerwise_param_partition(layout);

    CsvFile csv(fs::path(out_dir) / ("pareto_" + ts + ".csv"),
                {"estimator_tag", "batch_size", "outputs_per_batch", "mean_total",
                 "sd_total", "mean_ms"});

    GradientRequest grad_req;
    grad_req.prior = true;
    grad_req.sigma2 = cfg.likelihood == LikelihoodKind::gaussian;
    grad_req.eta = cfg.hyper.transform != TransformKind::none;

    int cell_index = 0;
    for (const ParetoCell& cell : cfg.pareto.cells) {
        const int reps = cfg.pareto.repetitions;
        std::vector<double> totals, times;
        const int b_in = cell.estimator == "exact" || cell.batch_inputs <= 0
                             ? n_train
                             : cell.batch_inputs;
        const int outs = cell.estimator == "exact" || cell.outputs == 0
                             ? n_out
                             : std::min(cell.outputs, n_out);
        std::string tag = cell.estimator == "exact"
                              ? "exact"
                              : cell.estimator + "-" + std::to_string(b_in) + "-" +
                                    std::to_string(outs);
        for (int r = 0; r < reps; ++r) {
            const std::uint64_t cell_seed =
                keyed_hash(cfg.seed, 0x9A12, static_cast<std::uint64_t>(cell_index),
                           static_cast<std::uint64_t>(r));
            if (cell.estimator == "exact") {
                EstimatorSpec spec{EstimatorKind::exact, Route::automatic,
                                   CurvatureKind::ggn_full};
                MargLikComponents comps;
                const double ms = wallclock_ms([&] {
                    comps = evaluate_estimator(spec, model, wb.problem.train, wb.hyper,
                                               {});
                    (void)hyper_gradient(spec, model, wb.problem.train, wb.hyper, {},
                                         grad_req);
                });
                totals.push_back(comps.total);
                times.push_back(ms);
                continue;
            }
            // partition: output-wise for single-output cells, random otherwise
            DataPartition dp =
                outs == 1 ? output_wise_partition(n_train, n_out, b_in)
                          : random_data_partition(n_train, n_out,
                                                  std::min(b_in * outs, n_train * n_out),
                                                  cell_seed);
            EstimatorSpec value_spec;
            EstimatorSpec stoch_spec{EstimatorKind::stochastic, Route::kernel,
                                     CurvatureKind::ntk};
            EstimatorInputs value_in, stoch_in;
            value_in.dp = &dp;
            stoch_in.dp = &dp;
            stoch_in.batch = uniform_index(dp.size(), cell_seed, 0x7);
            if (cell.estimator == "ntk") {
                value_spec = {EstimatorKind::ntk_subset, Route::kernel,
                              CurvatureKind::ntk};
            } else if (cell.estimator == "kfac") {
                value_spec = {EstimatorKind::doubly, Route::parametric,
                              CurvatureKind::kfac};
                stoch_spec = {EstimatorKind::stochastic, Route::parametric,
                              CurvatureKind::kfac};
            } else {  // ggn_block
                value_spec = {EstimatorKind::doubly, Route::parametric,
                              CurvatureKind::ggn_block};
                value_in.pp = &layerwise;
                stoch_spec = {EstimatorKind::stochastic, Route::parametric,
                              CurvatureKind::ggn_block};
                stoch_in.pp = &layerwise;
            }
            const MargLikComponents value =
                evaluate_estimator(value_spec, model, wb.problem.train, wb.hyper,
                                   value_in);
            const double ms = wallclock_ms([&] {
                (void)evaluate_estimator(stoch_spec, model, wb.problem.train, wb.hyper,
                                         stoch_in);
                (void)hyper_gradient(stoch_spec, model, wb.problem.train, wb.hyper,
                                     stoch_in, grad_req);
            });
            totals.push_back(value.total);
            times.push_back(ms);
        }
        double mean = 0.0, ms_mean = 0.0;
        for (double t : totals) mean += t;
        for (double t : times) ms_mean += t;
        mean /= reps;
        ms_mean /= reps;
        bool all_equal = true;
        for (double t : totals) all_equal = all_equal && t == totals.front();
        double var = 0.0;
        for (double t : totals) var += (t - mean) * (t - mean);
        const double sd = (reps > 1 && !all_equal) ? std::sqrt(var / (reps - 1)) : 0.0;
        csv.row({tag, std::to_string(b_in), std::to_string(outs), format_double(mean),
                 format_double(sd), format_double(ms_mean)});
        ++cell_index;
    }
    log << "pareto written (" << cfg.pareto.cells.size() << " cells x "
        << cfg.pareto.repetitions << " repetitions)\n";
    return 0;
}

}  // namespace marglik
