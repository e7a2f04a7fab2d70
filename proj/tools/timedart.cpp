// Command-line entry point: pretrain, finetune, evaluate, ablate, synth.

#include <CLI11.hpp>

#include <timedart/timedart.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace timedart;

namespace {

class IncompatibleCheckpoint : public Error {
public:
    explicit IncompatibleCheckpoint(const std::string& msg) : Error(msg) {}
};

struct CommonArgs {
    std::string config_path;
    std::string checkpoint_path;
    std::string out_dir;
    bool random_init = false;
    int threads = 1;
};

RunConfig load_run_config(const CommonArgs& args) {
    RunConfig config = RunConfig::parse_file(args.config_path);
    if (const char* env_seed = std::getenv("TIMEDART_SEED")) {
        config.set("seed", env_seed);
    }
    if (!args.out_dir.empty()) config.set("out_dir", args.out_dir);
    return config;
}

std::string out_dir(const RunConfig& config) {
    const std::string dir = config.str("out_dir", ".");
    fs::create_directories(dir);
    return dir;
}

void write_manifest(const RunConfig& config, const std::string& command, const std::string& dir) {
    std::ofstream out(dir + "/manifest.txt");
    out << "# timedart run manifest\n";
    out << "version=" << kVersionString << "\n";
    out << "command=" << command << "\n";
    out << "seed=" << config.str("seed", "0") << "\n";
    for (const auto& [key, value] : config.entries()) {
        if (key == "seed") continue;
        out << key << "=" << value << "\n";
    }
}

SplitSpec split_from_config(const RunConfig& config) {
    if (config.has("split_indices")) {
        const auto parts = config.list("split_indices");
        if (parts.size() != 3) {
            throw ConfigError("split_indices needs three begin:end pairs");
        }
        std::array<std::pair<std::size_t, std::size_t>, 3> bounds;
        for (std::size_t i = 0; i < 3; ++i) {
            const std::size_t colon = parts[i].find(':');
            if (colon == std::string::npos) {
                throw ConfigError("split_indices entry '" + parts[i] + "' is not begin:end");
            }
            bounds[i] = {std::stoul(parts[i].substr(0, colon)),
                         std::stoul(parts[i].substr(colon + 1))};
        }
        return SplitSpec::from_boundaries(bounds[0], bounds[1], bounds[2]);
    }
    const auto fractions = config.numbers("split");
    if (fractions.empty()) return SplitSpec::from_fractions(0.7, 0.1, 0.2);
    if (fractions.size() != 3) throw ConfigError("split needs three fractions");
    return SplitSpec::from_fractions(fractions[0], fractions[1], fractions[2]);
}

std::vector<MultivariateSeries> load_corpus(const RunConfig& config) {
    config.validate_input_paths();
    const auto paths = config.list("data");
    if (paths.empty()) throw ConfigError("config missing required key 'data'");
    CsvOptions options;
    options.has_header = config.flag("has_header", true);
    options.columns = config.list("columns");
    std::vector<MultivariateSeries> corpus;
    for (const std::string& path : paths) corpus.push_back(load_csv(path, options));
    return corpus;
}

ModelConfig model_config_from(const RunConfig& config) {
    ModelConfig mc;
    mc.patch_len = config.count("patch_len", 2);
    mc.model_dim = config.count("model_dim", 32);
    mc.encoder_layers = config.count("encoder_layers", 2);
    mc.decoder_layers = config.count("decoder_layers", 1);
    mc.heads = config.count("heads", 8);
    mc.ff_dim = config.count("ff_dim", 0);
    mc.pre_norm = config.flag("pre_norm", false);
    mc.dropout = config.num("dropout", 0.0);
    return mc;
}

ModelConfig model_config_from_checkpoint(const Checkpoint& ckpt) {
    ModelConfig mc;
    mc.patch_len = std::stoul(ckpt.config_value("patch_len"));
    mc.model_dim = std::stoul(ckpt.config_value("model_dim"));
    mc.encoder_layers = std::stoul(ckpt.config_value("encoder_layers"));
    mc.decoder_layers = std::stoul(ckpt.config_value("decoder_layers"));
    mc.heads = std::stoul(ckpt.config_value("heads"));
    mc.ff_dim = std::stoul(ckpt.config_value("ff_dim"));
    mc.pre_norm = ckpt.config_value("pre_norm") == "true";
    mc.dropout = std::stod(ckpt.config_value("dropout"));
    return mc;
}

void require_compatible(const ModelConfig& from_ckpt, const RunConfig& config) {
    auto check = [&](const char* key, std::size_t ckpt_value) {
        if (config.has(key) && config.count(key, 0) != ckpt_value) {
            throw IncompatibleCheckpoint(std::string("checkpoint ") + key + "=" +
                                         std::to_string(ckpt_value) + " conflicts with config " +
                                         key + "=" + config.str(key));
        }
    };
    check("patch_len", from_ckpt.patch_len);
    check("model_dim", from_ckpt.model_dim);
    check("encoder_layers", from_ckpt.encoder_layers);
    check("decoder_layers", from_ckpt.decoder_layers);
    check("heads", from_ckpt.heads);
}

PretrainConfig pretrain_config_from(const RunConfig& config) {
    PretrainConfig pc;
    pc.model = model_config_from(config);
    pc.total_steps = config.count("total_steps", 1000);
    pc.scheduler = scheduler_from_string(config.str("scheduler", "cosine"));
    pc.mask_ratio = config.num("mask_ratio", 1.0);
    pc.no_ar = config.flag("no_ar", false);
    pc.no_diff = config.flag("no_diff", false);
    pc.epochs = config.count("pretrain_epochs", config.count("epochs", 50));
    pc.batch_size = config.count("batch_size", 16);
    pc.learning_rate = config.num("learning_rate", 1e-4);
    pc.clip_norm = config.num("clip_norm", 5.0);
    pc.seed = static_cast<std::uint64_t>(config.num("seed", 0));
    return pc;
}

FinetuneConfig finetune_config_from(const RunConfig& config, TaskKind task) {
    FinetuneConfig fc;
    fc.mode = config.str("mode", "full") == "linear_probe" ? FinetuneMode::linear_probe
                                                           : FinetuneMode::full;
    fc.portion = config.num("portion", 1.0);
    fc.epochs = config.count("finetune_epochs", config.count("epochs", 10));
    fc.batch_size = config.count("batch_size", 16);
    fc.learning_rate = config.num("learning_rate", 1e-4);
    fc.clip_norm = config.num("clip_norm", 5.0);
    fc.keep_causal_mask = config.flag("keep_causal_mask", true);
    fc.use_sos_shift = config.flag("use_sos_shift", false);
    fc.seed = static_cast<std::uint64_t>(config.num("seed", 0));
    fc.horizon = config.count("horizon", 96);
    fc.num_classes = config.count("num_classes", 2);
    (void)task;
    return fc;
}

std::vector<int> load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open labels file: " + path);
    std::vector<int> labels;
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        labels.push_back(std::stoi(line.substr(comma + 1)));
    }
    return labels;
}

struct TaskData {
    std::vector<Window> train, val, test;
};

/// Forecast windows: chronological split of each series, then sliding
/// windows. Classification windows: non-overlapping lookbacks labeled from
/// the labels file, split by window counts.
TaskData build_task_data(const RunConfig& config, TaskKind task, std::size_t lookback,
                         std::size_t horizon, std::size_t stride) {
    TaskData data;
    const auto corpus = load_corpus(config);
    if (task == TaskKind::forecast) {
        for (const MultivariateSeries& series : corpus) {
            const auto splits = split_series(series, split_from_config(config));
            for (auto& w : make_windows(splits[0], lookback, horizon, stride)) {
                data.train.push_back(std::move(w));
            }
            for (auto& w : make_windows(splits[1], lookback, horizon, stride)) {
                data.val.push_back(std::move(w));
            }
            for (auto& w : make_windows(splits[2], lookback, horizon, stride)) {
                data.test.push_back(std::move(w));
            }
        }
        return data;
    }

    const std::vector<int> labels = load_labels(config.str("labels"));
    std::vector<Window> windows;
    for (const MultivariateSeries& series : corpus) {
        for (auto& w : make_windows(series, lookback, 0, lookback)) {
            if (windows.size() < labels.size()) w.label = labels[windows.size()];
            windows.push_back(std::move(w));
        }
    }
    if (windows.size() != labels.size()) {
        throw ConfigError("labels count " + std::to_string(labels.size()) +
                          " does not match window count " + std::to_string(windows.size()));
    }
    const auto fractions = config.numbers("split");
    const double train_frac = fractions.size() == 3 ? fractions[0] : 0.7;
    const double val_frac = fractions.size() == 3 ? fractions[1] : 0.1;
    const std::size_t n_train = static_cast<std::size_t>(train_frac * double(windows.size()));
    const std::size_t n_val = static_cast<std::size_t>(val_frac * double(windows.size()));
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (i < n_train) {
            data.train.push_back(std::move(windows[i]));
        } else if (i < n_train + n_val) {
            data.val.push_back(std::move(windows[i]));
        } else {
            data.test.push_back(std::move(windows[i]));
        }
    }
    return data;
}

void write_metric_rows(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path);
    out << "epoch,split,metric,value\n";
    out.precision(12);
    for (const MetricRow& row : rows) {
        out << row.epoch << ',' << row.split << ',' << row.metric << ',' << row.value << "\n";
    }
}

/// Test-set forecast evaluation with optional parallelism over windows.
/// Predictions land in a preallocated slot per window, so the result does not
/// depend on the thread count.
ForecastMetrics evaluate_forecast_model(const ModelParams& model, const std::vector<Window>& windows,
                                        std::size_t horizon, const EncodeOptions& options,
                                        int threads, std::vector<Tensor>* predictions_out = nullptr,
                                        std::vector<MetricRow>* per_horizon = nullptr) {
    std::vector<Tensor> predictions(windows.size());
    std::vector<Tensor> targets(windows.size());
    auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t w = begin; w < end; ++w) {
            predictions[w] = forecast_forward(model.store, model.config, windows[w].lookback,
                                              horizon, options);
            targets[w] = *windows[w].horizon;
        }
    };
    const std::size_t workers = std::max(1, threads);
    if (workers <= 1 || windows.size() < 2 * workers) {
        worker(0, windows.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (windows.size() + workers - 1) / workers;
        for (std::size_t t = 0; t < workers; ++t) {
            const std::size_t begin = t * chunk;
            const std::size_t end = std::min(begin + chunk, windows.size());
            if (begin < end) pool.emplace_back(worker, begin, end);
        }
        for (std::thread& t : pool) t.join();
    }

    if (per_horizon) {
        const std::size_t channels = targets[0].dim(0);
        for (std::size_t h = 0; h < horizon; ++h) {
            double se = 0.0, ae = 0.0;
            std::size_t count = 0;
            for (std::size_t w = 0; w < windows.size(); ++w) {
                for (std::size_t c = 0; c < channels; ++c) {
                    const double e = predictions[w].at(c, h) - targets[w].at(c, h);
                    se += e * e;
                    ae += std::abs(e);
                    ++count;
                }
            }
            per_horizon->push_back({0, "test", "mse_h" + std::to_string(h + 1), se / double(count)});
            per_horizon->push_back({0, "test", "mae_h" + std::to_string(h + 1), ae / double(count)});
        }
    }
    if (predictions_out) *predictions_out = predictions;
    return evaluate_forecast(predictions, targets);
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_pretrain(const CommonArgs& args) {
    const RunConfig config = load_run_config(args);
    const std::string dir = out_dir(config);
    const PretrainConfig pc = pretrain_config_from(config);
    pc.validate();

    const std::size_t lookback = config.count("lookback", 336);
    const std::size_t stride = config.count("stride", 1);
    const auto corpus = load_corpus(config);
    std::vector<Tensor> instances;
    for (const MultivariateSeries& series : corpus) {
        const auto splits = split_series(series, split_from_config(config));
        const auto windows = make_windows(splits[0], lookback, 0, stride);
        for (Tensor& inst : prepare_pretrain_instances(windows)) {
            instances.push_back(std::move(inst));
        }
    }
    write_manifest(config, "pretrain", dir);

    const EffectiveSetup setup = apply_ablation(pc);
    const std::string loss_path = config.str("loss_log", dir + "/pretrain_loss.csv");
    std::ofstream loss_log(loss_path);
    loss_log << "# encoder_mask=" << to_string(setup.encoder_mask.kind) << "\n";
    loss_log << "# decoder_mask="
             << (setup.use_diffusion ? to_string(setup.decoder_mask.kind) : "-") << "\n";
    loss_log << "# loss=" << (setup.use_diffusion ? "diffusion" : "mse") << "\n";
    loss_log << "epoch,loss\n";
    loss_log.precision(12);

    const PretrainResult result = pretrain_loop(instances, pc, [&](std::size_t epoch, double loss) {
        loss_log << epoch << ',' << loss << "\n";
        loss_log.flush();
        std::cout << "epoch " << epoch << " loss " << loss << "\n";
    });
    result.checkpoint.save(dir + "/pretrained.ckpt");
    if (result.diverged) {
        std::cerr << "training diverged; last good checkpoint written\n";
        return 3;
    }
    std::cout << "wrote " << dir << "/pretrained.ckpt\n";
    return 0;
}

int cmd_finetune(const CommonArgs& args) {
    const RunConfig config = load_run_config(args);
    const std::string dir = out_dir(config);
    if (args.checkpoint_path.empty()) throw ConfigError("finetune requires --checkpoint");
    const Checkpoint pretrained = Checkpoint::load(args.checkpoint_path);
    const ModelConfig mc = model_config_from_checkpoint(pretrained);
    require_compatible(mc, config);

    const TaskKind task = task_from_string(config.str("task", "forecast"));
    const std::size_t lookback = config.count("lookback", 336);
    const FinetuneConfig fc = finetune_config_from(config, task);
    const std::size_t stride = config.count("stride", 1);
    TaskData data = build_task_data(config, task, lookback,
                                    task == TaskKind::forecast ? fc.horizon : 0, stride);
    if (data.train.empty()) throw ConfigError("finetune: empty training split");
    write_manifest(config, "finetune", dir);

    RngStream init_rng = RngStream::substream(fc.seed, "init");
    ModelParams model = ModelParams::init(mc, init_rng);
    if (!args.random_init) pretrained.restore(model.store);

    FinetuneResult result = finetune(data.train, data.val, model, fc, task);
    std::cout << "fine-tuned on " << few_shot_count(data.train.size(), fc.portion)
              << " of " << data.train.size() << " training windows\n";

    // Final test metrics under the trained parameters.
    if (!data.test.empty()) {
        if (task == TaskKind::forecast) {
            const ForecastMetrics m = evaluate_forecast_model(model, data.test, fc.horizon,
                                                              EncodeOptions::from(fc), args.threads);
            result.log.push_back({fc.epochs, "test", "mse", m.mse});
            result.log.push_back({fc.epochs, "test", "mae", m.mae});
            std::cout << "test mse " << m.mse << " mae " << m.mae << "\n";
        } else {
            Tensor logits({data.test.size(), fc.num_classes});
            std::vector<int> labels;
            for (std::size_t w = 0; w < data.test.size(); ++w) {
                const Tensor row = classify_forward(model.store, model.config,
                                                    data.test[w].lookback, EncodeOptions::from(fc));
                for (std::size_t k = 0; k < fc.num_classes; ++k) logits.at(w, k) = row[k];
                labels.push_back(*data.test[w].label);
            }
            const ClassifyMetrics m = evaluate_classify(logits, labels);
            result.log.push_back({fc.epochs, "test", "accuracy", m.accuracy});
            result.log.push_back({fc.epochs, "test", "macro_f1", m.macro_f1});
            std::cout << "test accuracy " << m.accuracy << " macro_f1 " << m.macro_f1 << "\n";
        }
    }

    write_metric_rows(config.str("metrics_log", dir + "/finetune_metrics.csv"), result.log);
    result.checkpoint.save(dir + "/finetuned.ckpt");
    std::cout << "wrote " << dir << "/finetuned.ckpt\n";
    return 0;
}

int cmd_evaluate(const CommonArgs& args) {
    const RunConfig config = load_run_config(args);
    const std::string dir = out_dir(config);
    if (args.checkpoint_path.empty()) throw ConfigError("evaluate requires --checkpoint");
    const Checkpoint ckpt = Checkpoint::load(args.checkpoint_path);
    const ModelConfig mc = model_config_from_checkpoint(ckpt);
    require_compatible(mc, config);

    const TaskKind task = task_from_string(
        config.str("task", ckpt.config.count("task") ? ckpt.config_value("task") : "forecast"));
    const std::size_t lookback = config.count("lookback", 336);
    FinetuneConfig fc = finetune_config_from(config, task);
    // The encoding choices used at fine-tuning time travel with the checkpoint.
    if (!config.has("keep_causal_mask") && ckpt.config.count("keep_causal_mask")) {
        fc.keep_causal_mask = ckpt.config_value("keep_causal_mask") == "true";
    }
    if (!config.has("use_sos_shift") && ckpt.config.count("use_sos_shift")) {
        fc.use_sos_shift = ckpt.config_value("use_sos_shift") == "true";
    }
    const std::size_t stride = config.count("stride", 1);
    TaskData data = build_task_data(config, task, lookback,
                                    task == TaskKind::forecast ? fc.horizon : 0, stride);
    if (data.test.empty()) throw ConfigError("evaluate: empty test split");
    write_manifest(config, "evaluate", dir);

    RngStream init_rng = RngStream::substream(fc.seed, "init");
    ModelParams model = ModelParams::init(mc, init_rng);
    ensure_head(model.store, mc, task, lookback, fc, init_rng);
    ckpt.restore(model.store);

    std::vector<MetricRow> rows;
    if (task == TaskKind::forecast) {
        std::vector<Tensor> predictions;
        std::vector<MetricRow> per_horizon;
        const ForecastMetrics m = evaluate_forecast_model(
            model, data.test, fc.horizon, EncodeOptions::from(fc), args.threads, &predictions,
            config.flag("per_horizon", false) ? &per_horizon : nullptr);
        rows.push_back({0, "test", "mse", m.mse});
        rows.push_back({0, "test", "mae", m.mae});
        for (auto& row : per_horizon) rows.push_back(row);
        std::cout << "test mse " << m.mse << " mae " << m.mae << "\n";

        if (config.flag("dump_predictions", false)) {
            std::ofstream dump(dir + "/predictions.csv");
            dump << "window_id,channel,step,prediction,target\n";
            dump.precision(12);
            for (std::size_t w = 0; w < data.test.size(); ++w) {
                for (std::size_t c = 0; c < predictions[w].dim(0); ++c) {
                    for (std::size_t h = 0; h < fc.horizon; ++h) {
                        dump << w << ',' << c << ',' << h << ',' << predictions[w].at(c, h) << ','
                             << data.test[w].horizon->at(c, h) << "\n";
                    }
                }
            }
        }
    } else {
        Tensor logits({data.test.size(), fc.num_classes});
        std::vector<int> labels;
        for (std::size_t w = 0; w < data.test.size(); ++w) {
            const Tensor row = classify_forward(model.store, model.config, data.test[w].lookback,
                                                EncodeOptions::from(fc));
            for (std::size_t k = 0; k < fc.num_classes; ++k) logits.at(w, k) = row[k];
            labels.push_back(*data.test[w].label);
        }
        const ClassifyMetrics m = evaluate_classify(logits, labels);
        rows.push_back({0, "test", "accuracy", m.accuracy});
        rows.push_back({0, "test", "macro_f1", m.macro_f1});
        std::cout << "test accuracy " << m.accuracy << " macro_f1 " << m.macro_f1 << "\n";
    }
    write_metric_rows(config.str("metrics_log", dir + "/evaluate_metrics.csv"), rows);
    return 0;
}

int cmd_ablate(const CommonArgs& args) {
    const RunConfig base_config = load_run_config(args);
    const std::string dir = out_dir(base_config);
    write_manifest(base_config, "ablate", dir);

    struct Setting {
        const char* name;
        bool no_ar;
        bool no_diff;
    };
    const Setting settings[] = {{"full", false, false},
                                {"no_ar", true, false},
                                {"no_diff", false, true},
                                {"no_ar_diff", true, true}};

    std::ofstream summary(dir + "/ablation.csv");
    summary << "setting,metric,value\n";
    summary.precision(12);

    const std::size_t lookback = base_config.count("lookback", 336);
    const std::size_t stride = base_config.count("stride", 1);
    const TaskKind task = task_from_string(base_config.str("task", "forecast"));
    for (const Setting& setting : settings) {
        RunConfig config = base_config;
        config.set("no_ar", setting.no_ar ? "true" : "false");
        config.set("no_diff", setting.no_diff ? "true" : "false");
        const std::string sub = dir + "/" + setting.name;
        fs::create_directories(sub);

        PretrainConfig pc = pretrain_config_from(config);
        const auto corpus = load_corpus(config);
        std::vector<Tensor> instances;
        for (const MultivariateSeries& series : corpus) {
            const auto splits = split_series(series, split_from_config(config));
            const auto windows = make_windows(splits[0], lookback, 0, stride);
            for (Tensor& inst : prepare_pretrain_instances(windows)) {
                instances.push_back(std::move(inst));
            }
        }
        const PretrainResult pre = pretrain_loop(instances, pc);
        if (pre.diverged) return 3;
        pre.checkpoint.save(sub + "/pretrained.ckpt");

        const FinetuneConfig fc = finetune_config_from(config, task);
        TaskData data = build_task_data(config, task, lookback,
                                        task == TaskKind::forecast ? fc.horizon : 0, stride);
        RngStream init_rng = RngStream::substream(fc.seed, "init");
        ModelParams model = ModelParams::init(pc.model, init_rng);
        pre.checkpoint.restore(model.store);
        finetune(data.train, data.val, model, fc, task);

        if (task == TaskKind::forecast) {
            const ForecastMetrics m = evaluate_forecast_model(model, data.test, fc.horizon,
                                                              EncodeOptions::from(fc), args.threads);
            summary << setting.name << ",mse," << m.mse << "\n";
            summary << setting.name << ",mae," << m.mae << "\n";
            std::cout << setting.name << " test mse " << m.mse << "\n";
        } else {
            Tensor logits({data.test.size(), fc.num_classes});
            std::vector<int> labels;
            for (std::size_t w = 0; w < data.test.size(); ++w) {
                const Tensor row = classify_forward(model.store, model.config,
                                                    data.test[w].lookback, EncodeOptions::from(fc));
                for (std::size_t k = 0; k < fc.num_classes; ++k) logits.at(w, k) = row[k];
                labels.push_back(*data.test[w].label);
            }
            const ClassifyMetrics m = evaluate_classify(logits, labels);
            summary << setting.name << ",accuracy," << m.accuracy << "\n";
            summary << setting.name << ",macro_f1," << m.macro_f1 << "\n";
        }
        summary.flush();
    }
    return 0;
}

int cmd_synth(const CommonArgs& args) {
    const RunConfig config = load_run_config(args);
    const std::string dir = out_dir(config);
    SynthSpec spec;
    spec.kind = synth_kind_from_string(config.str("synth_kind", "sinusoid_mix"));
    spec.length = config.count("synth_length", 1024);
    spec.channels = config.count("synth_channels", 1);
    spec.noise_std = config.num("synth_noise_std", 0.0);
    spec.seed = static_cast<std::uint64_t>(config.num("seed", 0));
    if (config.has("synth_frequencies")) spec.frequencies = config.numbers("synth_frequencies");
    if (config.has("synth_amplitudes")) spec.amplitudes = config.numbers("synth_amplitudes");
    if (config.has("synth_ar_coeffs")) spec.ar_coeffs = config.numbers("synth_ar_coeffs");
    spec.num_classes = config.count("synth_num_classes", 3);
    spec.window_len = config.count("synth_window_len", 64);
    spec.num_windows = config.count("synth_num_windows", 300);

    const SynthResult result = generate(spec);
    write_manifest(config, "synth", dir);
    save_csv(result.series, dir + "/synth.csv");
    if (!result.labels.empty()) {
        std::ofstream labels(dir + "/synth_labels.csv");
        labels << "window,label\n";
        for (std::size_t w = 0; w < result.labels.size(); ++w) {
            labels << w << ',' << result.labels[w] << "\n";
        }
    }
    std::cout << "wrote " << dir << "/synth.csv\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"TimeDART: self-supervised time-series pre-training"};
    app.require_subcommand(1);

    CommonArgs args;

    auto add_common = [&](CLI::App* cmd, bool needs_checkpoint) {
        cmd->add_option("--config", args.config_path, "run configuration file")->required();
        cmd->add_option("--out", args.out_dir, "output directory override");
        cmd->add_option("--threads", args.threads,
                        "worker threads for evaluation (1 = deterministic)");
        if (needs_checkpoint) {
            cmd->add_option("--checkpoint", args.checkpoint_path, "checkpoint file");
        }
    };

    CLI::App* pretrain_cmd = app.add_subcommand("pretrain", "self-supervised pre-training");
    add_common(pretrain_cmd, false);
    CLI::App* finetune_cmd = app.add_subcommand("finetune", "task fine-tuning from a checkpoint");
    add_common(finetune_cmd, true);
    finetune_cmd->add_flag("--random-init", args.random_init,
                           "ignore checkpoint weights, keep its architecture");
    CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "test-set evaluation of a checkpoint");
    add_common(evaluate_cmd, true);
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "sweep the four ablation settings");
    add_common(ablate_cmd, false);
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    add_common(synth_cmd, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (pretrain_cmd->parsed()) return cmd_pretrain(args);
        if (finetune_cmd->parsed()) return cmd_finetune(args);
        if (evaluate_cmd->parsed()) return cmd_evaluate(args);
        if (ablate_cmd->parsed()) return cmd_ablate(args);
        if (synth_cmd->parsed()) return cmd_synth(args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const IncompatibleCheckpoint& e) {
        std::cerr << "incompatible checkpoint: " << e.what() << "\n";
        return 4;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
