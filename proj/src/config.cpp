#include "marglik/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace marglik {

using nlohmann::json;

namespace {

void require_keys(const json& obj, const std::string& where,
                  const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("key '" + key + "': " + e.what());
    }
}

Route route_from_string(const std::string& s) {
    if (s == "auto" || s == "automatic") return Route::automatic;
    if (s == "parametric") return Route::parametric;
    if (s == "kernel" || s == "ntk") return Route::kernel;
    throw ConfigError("unknown route '" + s + "'");
}

std::string to_string(Route r) {
    switch (r) {
        case Route::automatic: return "auto";
        case Route::parametric: return "parametric";
        case Route::kernel: return "kernel";
    }
    return "?";
}

PartitionConfig parse_partition(const json& p, const std::string& where) {
    require_keys(p, where, {"kind", "batch_size", "drop_last"});
    PartitionConfig out;
    out.kind = data_partition_kind_from_string(get_or<std::string>(p, "kind", "random"));
    out.batch_size = get_or<int>(p, "batch_size", 32);
    out.drop_last = get_or<bool>(p, "drop_last", true);
    if (out.batch_size < 1) throw ConfigError(where + ": batch_size must be >= 1");
    return out;
}

EstimatorSpec parse_estimator_spec(const json& e, const json* curvature,
                                   const std::string& where) {
    EstimatorSpec spec;
    spec.kind = estimator_kind_from_string(get_or<std::string>(e, "kind", "exact"));
    spec.route = route_from_string(get_or<std::string>(e, "route", "auto"));
    if (curvature)
        spec.curvature = curvature_kind_from_string(
            get_or<std::string>(*curvature, "kind", "ggn_full"));
    if (e.contains("curvature"))
        spec.curvature =
            curvature_kind_from_string(e.at("curvature").get<std::string>());
    if (spec.kind == EstimatorKind::stochastic && spec.route == Route::automatic)
        spec.route =
            spec.curvature == CurvatureKind::ntk ? Route::kernel : Route::parametric;
    (void)where;
    return spec;
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    require_keys(root, "config",
                 {"seed", "output", "dataset", "network", "likelihood",
                  "hyperparameters", "estimator", "curvature", "partition", "limits",
                  "train", "grid", "pareto", "state_file"});
    RunConfig cfg;
    cfg.seed = get_or<std::uint64_t>(root, "seed", 0);
    cfg.state_file = get_or<std::string>(root, "state_file", "");

    if (root.contains("output")) {
        require_keys(root.at("output"), "output", {"dir"});
        cfg.out_dir = get_or<std::string>(root.at("output"), "dir", "out");
    }

    if (root.contains("dataset")) {
        const json& d = root.at("dataset");
        require_keys(d, "dataset",
                     {"kind", "n", "noise_sd", "classes", "max_angle", "seed", "images",
                      "labels"});
        cfg.dataset.kind = get_or<std::string>(d, "kind", "sinusoid");
        if (cfg.dataset.kind != "sinusoid" && cfg.dataset.kind != "blobs" &&
            cfg.dataset.kind != "rotated_blobs" && cfg.dataset.kind != "mnist")
            throw ConfigError("dataset.kind: unknown kind '" + cfg.dataset.kind + "'");
        cfg.dataset.n = get_or<int>(d, "n", 200);
        cfg.dataset.noise_sd = get_or<double>(d, "noise_sd", 0.1);
        cfg.dataset.classes = get_or<int>(d, "classes", 3);
        cfg.dataset.max_angle = get_or<double>(d, "max_angle", 0.0);
        cfg.dataset.seed = get_or<std::uint64_t>(d, "seed", 1);
        cfg.dataset.images = get_or<std::string>(d, "images", "");
        cfg.dataset.labels = get_or<std::string>(d, "labels", "");
    }

    if (root.contains("network")) {
        const json& n = root.at("network");
        require_keys(n, "network", {"hidden", "activation", "init_seed"});
        cfg.network.hidden = get_or<std::vector<int>>(n, "hidden", {24, 24});
        cfg.network.activation =
            activation_from_string(get_or<std::string>(n, "activation", "tanh"));
        cfg.network.init_seed = get_or<std::uint64_t>(n, "init_seed", 0);
    }

    cfg.likelihood =
        likelihood_from_string(get_or<std::string>(root, "likelihood", "gaussian"));

    if (root.contains("hyperparameters")) {
        const json& h = root.at("hyperparameters");
        require_keys(h, "hyperparameters",
                     {"prior_mode", "log_prior_init", "log_sigma2_init", "transform",
                      "eta_init", "transform_samples", "learn_prior", "learn_sigma2",
                      "learn_eta"});
        cfg.hyper.prior_mode =
            prior_mode_from_string(get_or<std::string>(h, "prior_mode", "scalar"));
        cfg.hyper.log_prior_init = get_or<double>(h, "log_prior_init", 0.0);
        if (h.contains("log_sigma2_init"))
            cfg.hyper.log_sigma2_init = h.at("log_sigma2_init").get<double>();
        cfg.hyper.transform =
            transform_kind_from_string(get_or<std::string>(h, "transform", "none"));
        cfg.hyper.eta_init = get_or<std::vector<double>>(h, "eta_init", {});
        cfg.hyper.transform_samples = get_or<int>(h, "transform_samples", 8);
        cfg.hyper.learn_prior = get_or<bool>(h, "learn_prior", true);
        cfg.hyper.learn_sigma2 = get_or<bool>(h, "learn_sigma2", false);
        cfg.hyper.learn_eta = get_or<bool>(h, "learn_eta", false);
        for (double e : cfg.hyper.eta_init)
            if (e < 0.0) throw ConfigError("eta_init: amplitudes must be >= 0");
        const int want = transform_dim(cfg.hyper.transform);
        if (cfg.hyper.transform != TransformKind::none &&
            static_cast<int>(cfg.hyper.eta_init.size()) != want)
            throw ConfigError("eta_init must have " + std::to_string(want) +
                              " entries for transform '" +
                              to_string(cfg.hyper.transform) + "'");
    }
    if (cfg.likelihood == LikelihoodKind::gaussian && !cfg.hyper.log_sigma2_init)
        cfg.hyper.log_sigma2_init = 0.0;

    if (root.contains("estimator"))
        require_keys(root.at("estimator"), "estimator", {"kind", "route", "curvature"});
    if (root.contains("curvature"))
        require_keys(root.at("curvature"), "curvature", {"kind"});
    cfg.train.estimator = parse_estimator_spec(
        root.contains("estimator") ? root.at("estimator") : json::object(),
        root.contains("curvature") ? &root.at("curvature") : nullptr, "estimator");

    if (root.contains("partition"))
        cfg.train.partition = parse_partition(root.at("partition"), "partition");

    if (root.contains("limits")) {
        const json& l = root.at("limits");
        require_keys(l, "limits", {"max_full_ggn_dim", "max_ntk_dim"});
        cfg.train.limits.max_full_ggn_dim = get_or<int>(l, "max_full_ggn_dim", 4000);
        cfg.train.limits.max_ntk_dim = get_or<int>(l, "max_ntk_dim", 4000);
    }

    if (root.contains("train")) {
        const json& t = root.at("train");
        require_keys(
            t, "train",
            {"epochs", "weight_batch_size", "weight_optimizer", "weight_lr",
             "weight_lr_end", "lr_schedule", "momentum", "beta1", "beta2", "adam_eps",
             "burnin_epochs", "hyper_every_k", "hyper_steps_per_update",
             "hyper_lr_prior", "hyper_lr_sigma2", "hyper_lr_eta", "hyper_schedule",
             "hyper_lr_end_factor", "fd_step_eta"});
        cfg.train.epochs = get_or<int>(t, "epochs", 100);
        cfg.train.weight_batch_size = get_or<int>(t, "weight_batch_size", 32);
        const std::string opt = get_or<std::string>(t, "weight_optimizer", "adam");
        if (opt == "adam")
            cfg.train.weight_optimizer = WeightOptKind::adam;
        else if (opt == "sgd")
            cfg.train.weight_optimizer = WeightOptKind::sgd;
        else
            throw ConfigError("train.weight_optimizer: unknown '" + opt + "'");
        cfg.train.weight_lr.start = get_or<double>(t, "weight_lr", 1e-2);
        cfg.train.weight_lr.end =
            get_or<double>(t, "weight_lr_end", cfg.train.weight_lr.start * 1e-4);
        const std::string sched = get_or<std::string>(t, "lr_schedule", "cosine");
        if (sched == "cosine")
            cfg.train.weight_lr.kind = ScheduleKind::cosine;
        else if (sched == "constant")
            cfg.train.weight_lr.kind = ScheduleKind::constant;
        else
            throw ConfigError("train.lr_schedule: unknown '" + sched + "'");
        cfg.train.sgd_momentum = get_or<double>(t, "momentum", 0.9);
        cfg.train.weight_adam.beta1 = get_or<double>(t, "beta1", 0.9);
        cfg.train.weight_adam.beta2 = get_or<double>(t, "beta2", 0.999);
        cfg.train.weight_adam.eps = get_or<double>(t, "adam_eps", 1e-8);
        cfg.train.hyper_adam = cfg.train.weight_adam;
        cfg.train.burnin_epochs = get_or<int>(t, "burnin_epochs", 10);
        cfg.train.hyper_every_k = get_or<int>(t, "hyper_every_k", 1);
        cfg.train.hyper_steps_per_update = get_or<int>(t, "hyper_steps_per_update", 1);
        cfg.train.hyper_lr_prior = get_or<double>(t, "hyper_lr_prior", 0.1);
        cfg.train.hyper_lr_sigma2 = get_or<double>(t, "hyper_lr_sigma2", 0.1);
        cfg.train.hyper_lr_eta = get_or<double>(t, "hyper_lr_eta", 0.05);
        const std::string hs = get_or<std::string>(t, "hyper_schedule", "cosine");
        if (hs == "cosine")
            cfg.train.hyper_schedule = ScheduleKind::cosine;
        else if (hs == "constant")
            cfg.train.hyper_schedule = ScheduleKind::constant;
        else
            throw ConfigError("train.hyper_schedule: unknown '" + hs + "'");
        cfg.train.hyper_lr_end_factor = get_or<double>(t, "hyper_lr_end_factor", 0.1);
        cfg.train.fd_step_eta = get_or<double>(t, "fd_step_eta", 1e-3);
        if (cfg.train.burnin_epochs < 0 || cfg.train.hyper_every_k < 1)
            throw ConfigError("train: burnin_epochs >= 0 and hyper_every_k >= 1 required");
        if (cfg.train.weight_lr.start <= 0.0)
            throw ConfigError("train.weight_lr must be positive");
    }
    cfg.train.learn_prior = cfg.hyper.learn_prior;
    cfg.train.learn_sigma2 = cfg.hyper.learn_sigma2;
    cfg.train.learn_eta = cfg.hyper.learn_eta;
    cfg.train.seed = cfg.seed;

    if (root.contains("grid")) {
        const json& g = root.at("grid");
        require_keys(g, "grid", {"axis", "min", "max", "points", "estimators"});
        cfg.grid.axis = get_or<std::string>(g, "axis", "log_prior");
        cfg.grid.min = get_or<double>(g, "min", -4.0);
        cfg.grid.max = get_or<double>(g, "max", 4.0);
        cfg.grid.points = get_or<int>(g, "points", 17);
        if (cfg.grid.points < 1) throw ConfigError("grid.points must be >= 1");
        if (g.contains("estimators")) {
            for (const json& e : g.at("estimators")) {
                require_keys(e, "grid.estimators[]",
                             {"label", "kind", "route", "curvature", "partition",
                              "param_partition"});
                GridEstimatorConfig ge;
                ge.spec = parse_estimator_spec(e, nullptr, "grid.estimators[]");
                ge.label = get_or<std::string>(e, "label", to_string(ge.spec.kind));
                if (e.contains("partition"))
                    ge.partition = parse_partition(e.at("partition"), "grid partition");
                ge.param_partition = get_or<std::string>(e, "param_partition", "");
                cfg.grid.estimators.push_back(std::move(ge));
            }
        }
    }
    if (cfg.grid.estimators.empty()) {
        GridEstimatorConfig exact;
        exact.label = "exact";
        exact.spec = {EstimatorKind::exact, Route::automatic, CurvatureKind::ggn_full};
        cfg.grid.estimators.push_back(exact);
    }

    if (root.contains("pareto")) {
        const json& p = root.at("pareto");
        require_keys(p, "pareto", {"repetitions", "cells"});
        cfg.pareto.repetitions = get_or<int>(p, "repetitions", 5);
        if (cfg.pareto.repetitions < 1)
            throw ConfigError("pareto.repetitions must be >= 1");
        if (p.contains("cells")) {
            for (const json& c : p.at("cells")) {
                require_keys(c, "pareto.cells[]", {"estimator", "batch_inputs", "outputs"});
                ParetoCell cell;
                cell.estimator = get_or<std::string>(c, "estimator", "ntk");
                if (cell.estimator != "ntk" && cell.estimator != "kfac" &&
                    cell.estimator != "ggn_block" && cell.estimator != "exact")
                    throw ConfigError("pareto cell: unknown estimator '" +
                                      cell.estimator + "'");
                cell.batch_inputs = get_or<int>(c, "batch_inputs", 0);
                cell.outputs = get_or<int>(c, "outputs", 1);
                cfg.pareto.cells.push_back(cell);
            }
        }
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

Hyperparameters initial_hyperparameters(const RunConfig& cfg, const Network& net) {
    Hyperparameters h;
    h.prior.mode = cfg.hyper.prior_mode;
    const ParamLayout layout = param_layout(net);
    const long groups = cfg.hyper.prior_mode == PriorMode::scalar ? 1
                        : cfg.hyper.prior_mode == PriorMode::layerwise
                            ? static_cast<long>(layout.sizes.size())
                            : layout.total;
    h.prior.log_values = Vector::Constant(groups, cfg.hyper.log_prior_init);
    if (cfg.likelihood == LikelihoodKind::gaussian)
        h.log_sigma2 = cfg.hyper.log_sigma2_init.value_or(0.0);
    if (cfg.hyper.transform != TransformKind::none) {
        Vector eta(static_cast<long>(cfg.hyper.eta_init.size()));
        for (std::size_t i = 0; i < cfg.hyper.eta_init.size(); ++i)
            eta[static_cast<long>(i)] = cfg.hyper.eta_init[i];
        h.eta = eta;
    }
    return h;
}

std::string config_to_json(const RunConfig& cfg) {
    json root;
    root["seed"] = cfg.seed;
    root["output"] = {{"dir", cfg.out_dir}};
    root["dataset"] = {{"kind", cfg.dataset.kind},     {"n", cfg.dataset.n},
                       {"noise_sd", cfg.dataset.noise_sd}, {"classes", cfg.dataset.classes},
                       {"max_angle", cfg.dataset.max_angle}, {"seed", cfg.dataset.seed},
                       {"images", cfg.dataset.images}, {"labels", cfg.dataset.labels}};
    root["network"] = {{"hidden", cfg.network.hidden},
                       {"activation", to_string(cfg.network.activation)},
                       {"init_seed", cfg.network.init_seed}};
    root["likelihood"] = to_string(cfg.likelihood);
    json hyper = {{"prior_mode", to_string(cfg.hyper.prior_mode)},
                  {"log_prior_init", cfg.hyper.log_prior_init},
                  {"transform", to_string(cfg.hyper.transform)},
                  {"eta_init", cfg.hyper.eta_init},
                  {"transform_samples", cfg.hyper.transform_samples},
                  {"learn_prior", cfg.hyper.learn_prior},
                  {"learn_sigma2", cfg.hyper.learn_sigma2},
                  {"learn_eta", cfg.hyper.learn_eta}};
    if (cfg.hyper.log_sigma2_init) hyper["log_sigma2_init"] = *cfg.hyper.log_sigma2_init;
    root["hyperparameters"] = hyper;
    root["estimator"] = {{"kind", to_string(cfg.train.estimator.kind)},
                         {"route", to_string(cfg.train.estimator.route)}};
    root["curvature"] = {{"kind", to_string(cfg.train.estimator.curvature)}};
    root["partition"] = {{"kind", to_string(cfg.train.partition.kind)},
                         {"batch_size", cfg.train.partition.batch_size},
                         {"drop_last", cfg.train.partition.drop_last}};
    root["limits"] = {{"max_full_ggn_dim", cfg.train.limits.max_full_ggn_dim},
                      {"max_ntk_dim", cfg.train.limits.max_ntk_dim}};
    root["train"] = {
        {"epochs", cfg.train.epochs},
        {"weight_batch_size", cfg.train.weight_batch_size},
        {"weight_optimizer",
         cfg.train.weight_optimizer == WeightOptKind::adam ? "adam" : "sgd"},
        {"weight_lr", cfg.train.weight_lr.start},
        {"weight_lr_end", cfg.train.weight_lr.end},
        {"lr_schedule",
         cfg.train.weight_lr.kind == ScheduleKind::cosine ? "cosine" : "constant"},
        {"burnin_epochs", cfg.train.burnin_epochs},
        {"hyper_every_k", cfg.train.hyper_every_k},
        {"hyper_steps_per_update", cfg.train.hyper_steps_per_update},
        {"hyper_lr_prior", cfg.train.hyper_lr_prior},
        {"hyper_lr_sigma2", cfg.train.hyper_lr_sigma2},
        {"hyper_lr_eta", cfg.train.hyper_lr_eta}};
    if (!cfg.state_file.empty()) root["state_file"] = cfg.state_file;
    return root.dump(2);
}

}  // namespace marglik
