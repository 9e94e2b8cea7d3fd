#include "sonar/streams.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "sonar/errors.hpp"
#include "sonar/rng.hpp"

namespace sonar {

namespace {

Eigen::VectorXd vec2(double a, double b) {
    Eigen::VectorXd v(2);
    v << a, b;
    return v;
}

std::vector<PhaseSpec> seeded(std::vector<PhaseSpec> phases, std::uint64_t seed) {
    for (std::size_t i = 0; i < phases.size(); ++i)
        phases[i].seed = mix_seed(seed, 0x5eedULL + i);
    return phases;
}

} // namespace

void PhaseSpec::validate() const {
    if (length < 1) throw ConfigError("phase: length must be >= 1");
    if (const auto* mix = std::get_if<GaussianMixture>(&distribution)) {
        if (mix->centers.empty()) throw ConfigError("phase: mixture needs at least one center");
        if (mix->stddev < 0) throw ConfigError("phase: mixture stddev must be nonnegative");
        for (const auto& c : mix->centers)
            if (c.size() != mix->centers.front().size())
                throw ConfigError("phase: mixture centers must share a dimension");
    } else {
        const auto& disk = std::get<TruncatedDiskGaussian>(distribution);
        if (disk.center.size() == 0) throw ConfigError("phase: disk center must be nonempty");
    }
}

std::vector<StreamEvent> generate(const std::vector<PhaseSpec>& phases) {
    if (phases.empty()) throw ConfigError("generate: needs at least one phase");
    for (const auto& p : phases) p.validate();

    std::vector<StreamEvent> events;
    long total = 0;
    for (const auto& p : phases) total += p.length;
    events.reserve(total);

    long index = 0;
    for (std::size_t pid = 0; pid < phases.size(); ++pid) {
        const PhaseSpec& phase = phases[pid];
        std::mt19937_64 rng(phase.seed);
        std::normal_distribution<double> gauss(0.0, 1.0);

        for (long i = 0; i < phase.length; ++i) {
            StreamEvent ev;
            ev.phase_id = static_cast<int>(pid);
            ev.index = index++;
            if (const auto* mix = std::get_if<GaussianMixture>(&phase.distribution)) {
                std::uniform_int_distribution<std::size_t> pick(0, mix->centers.size() - 1);
                const Eigen::VectorXd& center = mix->centers[pick(rng)];
                ev.x_raw = center;
                for (int k = 0; k < center.size(); ++k)
                    ev.x_raw(k) += mix->stddev * gauss(rng);
            } else {
                const auto& disk = std::get<TruncatedDiskGaussian>(phase.distribution);
                Eigen::VectorXd x(disk.center.size());
                do {
                    for (int k = 0; k < x.size(); ++k) x(k) = disk.center(k) + gauss(rng);
                } while (x.norm() > 1.0);
                ev.x_raw = std::move(x);
            }
            events.push_back(std::move(ev));
        }
    }
    return events;
}

std::vector<std::string> preset_names() {
    return {"stationary2", "mild4", "transfer2", "adversarial10", "hemisphere2"};
}

std::vector<PhaseSpec> preset(const std::string& name, std::uint64_t seed) {
    if (name == "stationary2") {
        PhaseSpec p;
        p.length = 20000;
        p.distribution = GaussianMixture{{vec2(-2, 2), vec2(2, -2)}, 0.3};
        return seeded({p}, seed);
    }
    if (name == "mild4") {
        const std::vector<std::vector<Eigen::VectorXd>> centers = {
            {vec2(-2, 2), vec2(2, -2)},
            {vec2(-2, -2), vec2(2, 2)},
            {vec2(2, 2), vec2(2, -2)},
            {vec2(-2, 2), vec2(-2, -2)},
        };
        std::vector<PhaseSpec> phases;
        for (const auto& cs : centers) {
            PhaseSpec p;
            p.length = 10000;
            p.distribution = GaussianMixture{cs, 0.3};
            phases.push_back(std::move(p));
        }
        return seeded(std::move(phases), seed);
    }
    if (name == "transfer2") {
        std::vector<PhaseSpec> phases;
        for (double stddev : {0.6, 0.3}) {
            PhaseSpec p;
            p.length = 10000;
            p.distribution = GaussianMixture{{vec2(-2, -2), vec2(2, 2)}, stddev};
            phases.push_back(std::move(p));
        }
        return seeded(std::move(phases), seed);
    }
    if (name == "adversarial10") {
        std::mt19937_64 rng(mix_seed(seed, 0xad5eULL));
        std::uniform_real_distribution<double> box(-5.0, 5.0);
        std::vector<PhaseSpec> phases;
        for (int i = 0; i < 10; ++i) {
            PhaseSpec p;
            p.length = 10000;
            p.distribution =
                GaussianMixture{{vec2(box(rng), box(rng)), vec2(box(rng), box(rng))}, 0.3};
            phases.push_back(std::move(p));
        }
        return seeded(std::move(phases), seed);
    }
    if (name == "hemisphere2") {
        std::vector<PhaseSpec> phases;
        for (double cx : {0.0, 0.75}) {
            PhaseSpec p;
            p.length = 5000;
            p.distribution = TruncatedDiskGaussian{vec2(cx, 0.0)};
            phases.push_back(std::move(p));
        }
        return seeded(std::move(phases), seed);
    }
    std::ostringstream msg;
    msg << "unknown preset '" << name << "'; available:";
    for (const auto& n : preset_names()) msg << " " << n;
    throw ConfigError(msg.str());
}

std::vector<long> phase_starts(const std::vector<PhaseSpec>& phases) {
    std::vector<long> starts;
    long at = 0;
    for (const auto& p : phases) {
        starts.push_back(at);
        at += p.length;
    }
    return starts;
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, delim)) fields.push_back(field);
    if (!line.empty() && line.back() == delim) fields.push_back("");
    return fields;
}

int resolve_column(const std::vector<std::string>& header, const std::string& spec) {
    auto it = std::find(header.begin(), header.end(), spec);
    if (it != header.end()) return static_cast<int>(it - header.begin());
    try {
        std::size_t pos = 0;
        const int idx = std::stoi(spec, &pos);
        if (pos == spec.size() && idx >= 0 && idx < static_cast<int>(header.size())) return idx;
    } catch (const std::exception&) {
    }
    throw DataError("csv: cannot resolve column '" + spec + "' against header");
}

} // namespace

std::vector<StreamEvent> ingest_csv(const std::string& path, const CsvOptions& options) {
    std::ifstream in(path);
    if (!in) throw DataError("csv: cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) return {};   // empty file -> empty stream
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_line(line, options.delimiter);

    std::vector<int> feature_idx;
    if (options.feature_columns.empty()) {
        // Default: every column except the label.
        for (int i = 0; i < static_cast<int>(header.size()); ++i) feature_idx.push_back(i);
    } else {
        for (const auto& spec : options.feature_columns)
            feature_idx.push_back(resolve_column(header, spec));
    }
    int label_idx = -1;
    if (options.label_column) {
        label_idx = resolve_column(header, *options.label_column);
        feature_idx.erase(std::remove(feature_idx.begin(), feature_idx.end(), label_idx),
                          feature_idx.end());
    }
    if (feature_idx.empty()) throw DataError("csv: no feature columns selected");

    std::vector<StreamEvent> events;
    long row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_line(line, options.delimiter);
        if (fields.size() < header.size()) {
            std::ostringstream msg;
            msg << "csv: row " << row << " has " << fields.size() << " fields, header has "
                << header.size();
            throw DataError(msg.str());
        }
        StreamEvent ev;
        ev.index = row - 1;
        ev.x_raw.resize(static_cast<int>(feature_idx.size()));
        for (std::size_t k = 0; k < feature_idx.size(); ++k) {
            const std::string& cell = fields[feature_idx[k]];
            try {
                std::size_t pos = 0;
                ev.x_raw(static_cast<int>(k)) = std::stod(cell, &pos);
                if (pos != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                std::ostringstream msg;
                msg << "csv: row " << row << ": non-numeric feature '" << cell << "' in column "
                    << header[feature_idx[k]];
                throw DataError(msg.str());
            }
        }
        if (label_idx >= 0) {
            const std::string& cell = fields[label_idx];
            if (cell == options.outlier_value) ev.label = Label::Outlier;
            else if (cell == options.normal_value) ev.label = Label::Normal;
            else if (!cell.empty()) {
                std::ostringstream msg;
                msg << "csv: row " << row << ": unmapped label value '" << cell << "'";
                throw DataError(msg.str());
            }
        }
        events.push_back(std::move(ev));
    }
    return events;
}

void write_stream_csv(const std::string& path, const std::vector<StreamEvent>& events) {
    std::ofstream out(path);
    if (!out) throw DataError("csv: cannot write '" + path + "'");
    const int dim = events.empty() ? 0 : static_cast<int>(events.front().x_raw.size());
    for (int k = 0; k < dim; ++k) out << "x" << k << ",";
    out << "label,phase_id\n";
    char buf[64];
    for (const auto& ev : events) {
        for (int k = 0; k < dim; ++k) {
            std::snprintf(buf, sizeof(buf), "%.17g", ev.x_raw(k));
            out << buf << ",";
        }
        if (ev.label) out << (*ev.label == Label::Outlier ? "1" : "0");
        out << ",";
        if (ev.phase_id) out << *ev.phase_id;
        out << "\n";
    }
}

RunningStandardizer::RunningStandardizer(double variance_floor, bool inclusive)
    : variance_floor_(variance_floor), inclusive_(inclusive) {
    if (!(variance_floor > 0)) throw ConfigError("standardizer: variance floor must be positive");
}

void RunningStandardizer::update(const Eigen::VectorXd& x) {
    if (count_ == 0) {
        mean_ = x;
        m2_ = Eigen::VectorXd::Zero(x.size());
        count_ = 1;
        return;
    }
    count_ += 1;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta.cwiseProduct(x - mean_);
}

Eigen::VectorXd RunningStandardizer::transform(const Eigen::VectorXd& x) const {
    if (count_ == 0) return Eigen::VectorXd::Zero(x.size());
    const Eigen::VectorXd var =
        (m2_ / static_cast<double>(count_)).cwiseMax(variance_floor_);
    return (x - mean_).cwiseQuotient(var.cwiseSqrt());
}

Eigen::VectorXd RunningStandardizer::push(const Eigen::VectorXd& x) {
    if (count_ > 0 && x.size() != mean_.size())
        throw InputError("standardizer: dimension changed mid-stream");
    if (inclusive_) {
        update(x);
        return transform(x);
    }
    const Eigen::VectorXd out = transform(x);
    update(x);
    return out;
}

Eigen::VectorXd RunningStandardizer::peek(const Eigen::VectorXd& x) const {
    if (count_ > 0 && x.size() != mean_.size())
        throw InputError("standardizer: dimension changed mid-stream");
    return transform(x);
}

Eigen::VectorXd RunningStandardizer::mean() const {
    return count_ ? mean_ : Eigen::VectorXd();
}

Eigen::VectorXd RunningStandardizer::variance() const {
    if (!count_) return {};
    return (m2_ / static_cast<double>(count_)).cwiseMax(variance_floor_);
}

} // namespace sonar
