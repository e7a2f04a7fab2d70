#ifndef TIMEDART_CONFIG_HPP
#define TIMEDART_CONFIG_HPP

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace timedart {

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Flat key=value run configuration, one entry per line, '#' comments.
/// Unknown keys are rejected up front.
class RunConfig {
public:
    static const std::set<std::string>& known_keys() {
        static const std::set<std::string> keys = {
            // data
            "data", "labels", "columns", "has_header", "split", "split_indices", "lookback",
            "horizon", "stride",
            // architecture
            "patch_len", "model_dim", "encoder_layers", "decoder_layers", "heads", "ff_dim",
            "pre_norm", "dropout",
            // diffusion
            "total_steps", "scheduler", "mask_ratio", "no_ar", "no_diff",
            // optimization
            "epochs", "pretrain_epochs", "finetune_epochs", "batch_size", "learning_rate",
            "clip_norm", "seed",
            // fine-tuning
            "mode", "portion", "keep_causal_mask", "use_sos_shift", "task", "num_classes",
            // outputs
            "out_dir", "loss_log", "metrics_log", "dump_predictions", "per_horizon",
            // synthesis
            "synth_kind", "synth_length", "synth_channels", "synth_noise_std",
            "synth_frequencies", "synth_amplitudes", "synth_ar_coeffs", "synth_num_classes",
            "synth_window_len", "synth_num_windows"};
        return keys;
    }

    static RunConfig parse_string(const std::string& text) {
        RunConfig config;
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::string trimmed = trim(line.substr(0, line.find('#')));
            if (trimmed.empty()) continue;
            const std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": expected key=value, got '" + trimmed + "'");
            }
            const std::string key = trim(trimmed.substr(0, eq));
            if (!known_keys().count(key)) {
                throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" +
                                  key + "'");
            }
            if (config.kv_.count(key)) {
                throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" +
                                  key + "'");
            }
            config.kv_[key] = trim(trimmed.substr(eq + 1));
        }
        return config;
    }

    static RunConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::ostringstream buffer;
        buffer << in.rdbuf();
        return parse_string(buffer.str());
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    std::string str(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw ConfigError("config missing required key '" + key + "'");
        return it->second;
    }
    std::string str(const std::string& key, const std::string& fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    double num(const std::string& key, double fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : to_num(key, it->second);
    }
    double num(const std::string& key) const { return to_num(key, str(key)); }

    std::size_t count(const std::string& key, std::size_t fallback) const {
        const double v = num(key, static_cast<double>(fallback));
        if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
            throw ConfigError("config key '" + key + "' must be a non-negative integer");
        }
        return static_cast<std::size_t>(v);
    }

    bool flag(const std::string& key, bool fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config key '" + key + "' must be a boolean, got '" + v + "'");
    }

    std::vector<std::string> list(const std::string& key) const {
        std::vector<std::string> items;
        auto it = kv_.find(key);
        if (it == kv_.end()) return items;
        std::istringstream in(it->second);
        std::string item;
        while (std::getline(in, item, ',')) {
            const std::string t = trim(item);
            if (!t.empty()) items.push_back(t);
        }
        return items;
    }

    std::vector<double> numbers(const std::string& key) const {
        std::vector<double> values;
        for (const std::string& item : list(key)) values.push_back(to_num(key, item));
        return values;
    }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    const std::map<std::string, std::string>& entries() const { return kv_; }

    /// Referenced input paths must exist by validation time.
    void validate_input_paths() const {
        for (const char* key : {"data", "labels"}) {
            if (!has(key)) continue;
            for (const std::string& path : list(key)) {
                std::ifstream probe(path);
                if (!probe) {
                    throw ConfigError(std::string("config key '") + key +
                                      "' references missing file: " + path);
                }
            }
        }
    }

private:
    static std::string trim(const std::string& s) {
        std::size_t begin = s.find_first_not_of(" \t\r");
        std::size_t end = s.find_last_not_of(" \t\r");
        return begin == std::string::npos ? "" : s.substr(begin, end - begin + 1);
    }

    static double to_num(const std::string& key, const std::string& value) {
        try {
            std::size_t used = 0;
            const double v = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' must be numeric, got '" + value + "'");
        }
    }

    std::map<std::string, std::string> kv_;
};

} // namespace timedart

#endif // TIMEDART_CONFIG_HPP
