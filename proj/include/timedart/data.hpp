#ifndef TIMEDART_DATA_HPP
#define TIMEDART_DATA_HPP

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace timedart {

/// Raw multivariate series, one row per channel.
struct MultivariateSeries {
    Tensor values; // [C x total_length]
    std::vector<std::string> channel_names;
    std::optional<std::string> frequency_hint;

    std::size_t channels() const { return values.rank() == 2 ? values.dim(0) : 0; }
    std::size_t length() const { return values.rank() == 2 ? values.dim(1) : 0; }
};

struct CsvOptions {
    bool has_header = true;
    /// Subset of value columns to keep, by name. Empty keeps all.
    std::vector<std::string> columns;
};

namespace detail {

inline bool parse_double(const std::string& field, double& out) {
    const char* begin = field.data();
    const char* end = begin + field.size();
    while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end != begin && (*(end - 1) == ' ' || *(end - 1) == '\r' || *(end - 1) == '\t')) --end;
    if (begin == end) return false;
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r') {
        fields.back().pop_back();
    }
    return fields;
}

} // namespace detail

/// Load a comma-separated file into a series. The first column is treated as
/// a timestamp and dropped when its first data cell does not parse as a float.
/// Rejects any NaN/Inf or non-numeric cell, naming the offending row/column.
inline MultivariateSeries load_csv(const std::string& path, const CsvOptions& options = {}) {
    std::ifstream in(path);
    if (!in) throw Error("load_csv: cannot open file: " + path);

    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }

    std::size_t first_data = 0;
    std::vector<std::string> header;
    if (options.has_header) {
        if (lines.empty()) throw Error("load_csv: empty file: " + path);
        header = detail::split_line(lines[0]);
        first_data = 1;
    }
    if (lines.size() <= first_data) throw Error("load_csv: no data rows in " + path);

    const std::vector<std::string> first_row = detail::split_line(lines[first_data]);
    const std::size_t total_cols = first_row.size();
    if (header.empty()) {
        for (std::size_t c = 0; c < total_cols; ++c) header.push_back("col" + std::to_string(c));
    }
    if (header.size() != total_cols) {
        throw Error("load_csv: header has " + std::to_string(header.size()) +
                    " fields but data rows have " + std::to_string(total_cols));
    }

    // Timestamp detection: a leading column whose data does not parse as float.
    double probe = 0.0;
    const bool drop_first = total_cols > 1 && !detail::parse_double(first_row[0], probe);
    const std::size_t value_begin = drop_first ? 1 : 0;

    std::vector<std::size_t> keep;
    if (options.columns.empty()) {
        for (std::size_t c = value_begin; c < total_cols; ++c) keep.push_back(c);
    } else {
        for (const std::string& want : options.columns) {
            auto it = std::find(header.begin(), header.end(), want);
            if (it == header.end()) throw Error("load_csv: no column named '" + want + "'");
            keep.push_back(static_cast<std::size_t>(it - header.begin()));
        }
    }
    if (keep.empty()) throw Error("load_csv: no value columns selected");

    const std::size_t rows = lines.size() - first_data;
    const std::size_t channels = keep.size();
    Tensor values({channels, rows});

    for (std::size_t r = 0; r < rows; ++r) {
        const std::vector<std::string> fields = detail::split_line(lines[first_data + r]);
        if (fields.size() != total_cols) {
            throw Error("load_csv: row " + std::to_string(r + 1) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(total_cols));
        }
        for (std::size_t c = 0; c < channels; ++c) {
            double v = 0.0;
            if (!detail::parse_double(fields[keep[c]], v)) {
                throw Error("load_csv: non-numeric cell at row " + std::to_string(r + 1) +
                            ", column '" + header[keep[c]] + "'");
            }
            if (!std::isfinite(v)) {
                throw Error("load_csv: non-finite cell at row " + std::to_string(r + 1) +
                            ", column '" + header[keep[c]] + "'");
            }
            values.at(c, r) = v;
        }
    }

    MultivariateSeries series;
    series.values = std::move(values);
    for (std::size_t c : keep) series.channel_names.push_back(header[c]);
    return series;
}

/// Write a series back out in the same CSV dialect load_csv reads.
inline void save_csv(const MultivariateSeries& series, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("save_csv: cannot open for writing: " + path);
    for (std::size_t c = 0; c < series.channels(); ++c) {
        if (c) out << ',';
        out << series.channel_names[c];
    }
    out << '\n';
    out.precision(17);
    for (std::size_t t = 0; t < series.length(); ++t) {
        for (std::size_t c = 0; c < series.channels(); ++c) {
            if (c) out << ',';
            out << series.values.at(c, t);
        }
        out << '\n';
    }
}

/// Chronological train/val/test boundaries, either as fractions of the total
/// length or as explicit [begin, end) index pairs. Explicit pairs may overlap
/// so a validation lookback can start inside the training segment.
struct SplitSpec {
    std::array<double, 3> fractions{0.7, 0.1, 0.2};
    std::optional<std::array<std::pair<std::size_t, std::size_t>, 3>> boundaries;

    static SplitSpec from_fractions(double train, double val, double test) {
        SplitSpec s;
        s.fractions = {train, val, test};
        return s;
    }
    static SplitSpec from_boundaries(std::pair<std::size_t, std::size_t> train,
                                     std::pair<std::size_t, std::size_t> val,
                                     std::pair<std::size_t, std::size_t> test) {
        SplitSpec s;
        s.boundaries = {{train, val, test}};
        return s;
    }
};

namespace detail {

inline MultivariateSeries slice_series(const MultivariateSeries& series, std::size_t begin,
                                       std::size_t end) {
    const std::size_t channels = series.channels();
    MultivariateSeries out;
    out.channel_names = series.channel_names;
    out.frequency_hint = series.frequency_hint;
    out.values = Tensor({channels, end - begin});
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t t = begin; t < end; ++t) {
            out.values.at(c, t - begin) = series.values.at(c, t);
        }
    }
    return out;
}

} // namespace detail

/// Split into chronological train/val/test segments.
inline std::array<MultivariateSeries, 3> split_series(const MultivariateSeries& series,
                                                      const SplitSpec& spec) {
    const std::size_t total = series.length();
    std::array<std::pair<std::size_t, std::size_t>, 3> bounds;
    if (spec.boundaries) {
        bounds = *spec.boundaries;
        for (const auto& [begin, end] : bounds) {
            if (begin >= end || end > total) {
                throw Error("split_series: boundary [" + std::to_string(begin) + ", " +
                            std::to_string(end) + ") out of range for length " +
                            std::to_string(total));
            }
        }
        if (bounds[0].first > bounds[1].first || bounds[1].first > bounds[2].first) {
            throw Error("split_series: boundaries must be chronological");
        }
    } else {
        const double sum = spec.fractions[0] + spec.fractions[1] + spec.fractions[2];
        if (std::abs(sum - 1.0) > 1e-9) {
            throw Error("split_series: fractions sum to " + std::to_string(sum) + ", expected 1");
        }
        for (double f : spec.fractions) {
            if (f <= 0.0) throw Error("split_series: fractions must be positive");
        }
        const auto n_train = static_cast<std::size_t>(spec.fractions[0] * static_cast<double>(total));
        const auto n_val = static_cast<std::size_t>(spec.fractions[1] * static_cast<double>(total));
        if (n_train == 0 || n_val == 0 || n_train + n_val >= total) {
            throw Error("split_series: a split is empty at length " + std::to_string(total));
        }
        bounds = {{{0, n_train}, {n_train, n_train + n_val}, {n_train + n_val, total}}};
    }
    return {detail::slice_series(series, bounds[0].first, bounds[0].second),
            detail::slice_series(series, bounds[1].first, bounds[1].second),
            detail::slice_series(series, bounds[2].first, bounds[2].second)};
}

/// One training/evaluation example: a lookback, an optional horizon that
/// immediately follows it, and an optional class label.
struct Window {
    Tensor lookback;               // [C x L]
    std::optional<Tensor> horizon; // [C x H]
    std::optional<int> label;
    std::size_t start = 0; // start index in the source series
};

/// Slide a window of `lookback` (+ optional `horizon`) over the series.
inline std::vector<Window> make_windows(const MultivariateSeries& series, std::size_t lookback,
                                        std::size_t horizon, std::size_t stride = 1) {
    if (lookback == 0) throw Error("make_windows: lookback must be positive");
    if (stride == 0) throw Error("make_windows: stride must be positive");
    const std::size_t total = series.length();
    const std::size_t span = lookback + horizon;
    if (span > total) {
        throw Error("make_windows: window span " + std::to_string(span) +
                    " exceeds series length " + std::to_string(total));
    }
    const std::size_t channels = series.channels();
    const std::size_t count = (total - span) / stride + 1;

    std::vector<Window> windows;
    windows.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        const std::size_t start = w * stride;
        Window win;
        win.start = start;
        win.lookback = Tensor({channels, lookback});
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t t = 0; t < lookback; ++t) {
                win.lookback.at(c, t) = series.values.at(c, start + t);
            }
        }
        if (horizon > 0) {
            Tensor h({channels, horizon});
            for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t t = 0; t < horizon; ++t) {
                    h.at(c, t) = series.values.at(c, start + lookback + t);
                }
            }
            win.horizon = std::move(h);
        }
        windows.push_back(std::move(win));
    }
    return windows;
}

/// Per-channel mean and standard deviation of one lookback window.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;
};

/// Standard deviations below this are floored so constant channels map to
/// zeros instead of dividing by zero.
inline constexpr double kStdFloor = 1e-5;

/// Zero-mean / unit-variance standardization per channel (population std).
inline std::pair<Tensor, NormStats> instance_normalize(const Tensor& lookback) {
    if (lookback.rank() != 2) throw Error("instance_normalize: expected [C x L] input");
    const std::size_t channels = lookback.dim(0);
    const std::size_t length = lookback.dim(1);
    if (length == 0) throw Error("instance_normalize: empty window");

    Tensor out({channels, length});
    NormStats stats;
    stats.mean.resize(channels);
    stats.std.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        double mean = 0.0;
        for (std::size_t t = 0; t < length; ++t) mean += lookback.at(c, t);
        mean /= static_cast<double>(length);
        double var = 0.0;
        for (std::size_t t = 0; t < length; ++t) {
            const double d = lookback.at(c, t) - mean;
            var += d * d;
        }
        var /= static_cast<double>(length);
        const double sd = std::max(std::sqrt(var), kStdFloor);
        stats.mean[c] = mean;
        stats.std[c] = sd;
        for (std::size_t t = 0; t < length; ++t) {
            out.at(c, t) = (lookback.at(c, t) - mean) / sd;
        }
    }
    return {std::move(out), std::move(stats)};
}

/// Restore the original scale on model outputs of any length.
inline Tensor denormalize(const Tensor& values, const NormStats& stats) {
    if (values.rank() != 2) throw Error("denormalize: expected [C x K] input");
    const std::size_t channels = values.dim(0);
    if (channels != stats.mean.size()) {
        throw Error("denormalize: channel count mismatch: values have " +
                    std::to_string(channels) + ", stats have " + std::to_string(stats.mean.size()));
    }
    Tensor out({channels, values.dim(1)});
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t t = 0; t < values.dim(1); ++t) {
            out.at(c, t) = values.at(c, t) * stats.std[c] + stats.mean[c];
        }
    }
    return out;
}

/// A channel-independent view of a window batch: every channel of every
/// window becomes its own univariate instance, with a map back to the source.
struct ChannelizedBatch {
    std::vector<Window> instances; // each lookback is [1 x L]
    std::vector<std::pair<std::size_t, std::size_t>> origin; // (window, channel)
};

inline ChannelizedBatch channelize(const std::vector<Window>& windows) {
    ChannelizedBatch batch;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const Window& win = windows[w];
        const std::size_t channels = win.lookback.dim(0);
        const std::size_t length = win.lookback.dim(1);
        for (std::size_t c = 0; c < channels; ++c) {
            Window inst;
            inst.start = win.start;
            inst.label = win.label;
            inst.lookback = Tensor({1, length});
            for (std::size_t t = 0; t < length; ++t) inst.lookback.at(0, t) = win.lookback.at(c, t);
            if (win.horizon) {
                Tensor h({1, win.horizon->dim(1)});
                for (std::size_t t = 0; t < h.dim(1); ++t) h.at(0, t) = win.horizon->at(c, t);
                inst.horizon = std::move(h);
            }
            batch.instances.push_back(std::move(inst));
            batch.origin.emplace_back(w, c);
        }
    }
    return batch;
}

inline std::vector<Window> dechannelize(const ChannelizedBatch& batch) {
    if (batch.instances.empty()) return {};
    std::size_t num_windows = 0;
    std::size_t num_channels = 0;
    for (const auto& [w, c] : batch.origin) {
        num_windows = std::max(num_windows, w + 1);
        num_channels = std::max(num_channels, c + 1);
    }
    const std::size_t length = batch.instances[0].lookback.dim(1);
    const bool has_horizon = batch.instances[0].horizon.has_value();
    const std::size_t horizon = has_horizon ? batch.instances[0].horizon->dim(1) : 0;

    std::vector<Window> windows(num_windows);
    for (Window& w : windows) {
        w.lookback = Tensor({num_channels, length});
        if (has_horizon) w.horizon = Tensor({num_channels, horizon});
    }
    for (std::size_t i = 0; i < batch.instances.size(); ++i) {
        const auto [w, c] = batch.origin[i];
        const Window& inst = batch.instances[i];
        windows[w].start = inst.start;
        windows[w].label = inst.label;
        for (std::size_t t = 0; t < length; ++t) {
            windows[w].lookback.at(c, t) = inst.lookback.at(0, t);
        }
        if (has_horizon) {
            for (std::size_t t = 0; t < horizon; ++t) {
                windows[w].horizon->at(c, t) = inst.horizon->at(0, t);
            }
        }
    }
    return windows;
}

} // namespace timedart

#endif // TIMEDART_DATA_HPP
