#include "driftguard/drift_world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace driftguard {

void DataCounts::validate() const {
    if (train_per_step < 1) throw ConfigError("data.train_per_step must be positive");
    if (val_per_step < 1) throw ConfigError("data.val_per_step must be positive");
}

void DriftSettings::validate() const {
    if (rate_lo < 0.0 || rate_hi < 0.0 || rate_lo > 1.0 || rate_hi > 1.0) {
        throw ConfigError("drift.rate_lo/rate_hi must be within [0, 1]");
    }
    if (rate_lo > rate_hi) throw ConfigError("drift.rate_lo must not exceed drift.rate_hi");
    if (p_instantaneous < 0.0 || p_instantaneous > 1.0) {
        throw ConfigError("drift.p_instantaneous must be within [0, 1]");
    }
    if (len_min < 1 || len_max < len_min) throw ConfigError("drift.len_min/len_max invalid");
}

void SyntheticWorldSpec::validate() const {
    if (n_domains < 1) throw ConfigError("world.n_domains must be positive");
    if (n_features < 1) throw ConfigError("world.n_features must be positive");
    if (n_classes < 2) throw ConfigError("world.n_classes must be at least 2");
    if (!(noise_sigma > 0.0)) throw ConfigError("world.noise_sigma must be positive");
}

int DeviceDistribution::dominant_domain() const {
    int best = -1;
    double best_w = -1.0;
    for (const auto& [d, w] : mixture) {  // map order: ascending domain id
        if (w > best_w) {
            best_w = w;
            best = d;
        }
    }
    return best;
}

void DeviceDistribution::check_valid() const {
    double sum = 0.0;
    for (const auto& [d, w] : mixture) {
        if (w < 0.0) throw ProtocolError("mixture weight negative for domain " + std::to_string(d));
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ProtocolError("mixture weights do not sum to 1");
}

// ---------------------------------------------------------------------------
// SyntheticWorld

namespace {

// Random rotation via Gram-Schmidt on a Gaussian matrix.
std::vector<std::vector<double>> random_rotation(int n, Rng& rng) {
    std::vector<std::vector<double>> m(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n)));
    for (auto& row : m) {
        for (double& v : row) v = rng.normal();
    }
    // Orthonormalize columns.
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < j; ++k) {
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += m[static_cast<size_t>(i)][static_cast<size_t>(j)] *
                                                m[static_cast<size_t>(i)][static_cast<size_t>(k)];
            for (int i = 0; i < n; ++i) m[static_cast<size_t>(i)][static_cast<size_t>(j)] -=
                dot * m[static_cast<size_t>(i)][static_cast<size_t>(k)];
        }
        double norm = 0.0;
        for (int i = 0; i < n; ++i) norm += m[static_cast<size_t>(i)][static_cast<size_t>(j)] *
                                            m[static_cast<size_t>(i)][static_cast<size_t>(j)];
        norm = std::sqrt(norm);
        for (int i = 0; i < n; ++i) m[static_cast<size_t>(i)][static_cast<size_t>(j)] /= norm;
    }
    return m;
}

}  // namespace

SyntheticWorld::SyntheticWorld(const SyntheticWorldSpec& spec, uint64_t master_seed) : spec_(spec) {
    spec.validate();
    Rng rng = substream(master_seed, "world.domains");
    class_means_.assign(static_cast<size_t>(spec.n_classes),
                        std::vector<double>(static_cast<size_t>(spec.n_features)));
    for (auto& mean : class_means_) {
        for (double& v : mean) v = rng.normal() * spec.class_mean_scale;
    }
    domains_.resize(static_cast<size_t>(spec.n_domains));
    for (auto& d : domains_) {
        d.rotation = random_rotation(spec.n_features, rng);
        d.shift.resize(static_cast<size_t>(spec.n_features));
        for (double& v : d.shift) v = rng.normal() * spec.domain_shift_scale;
    }
}

LabeledSample SyntheticWorld::draw(int domain, int /*device*/, Rng& rng) {
    if (domain < 0 || domain >= spec_.n_domains) throw LookupError("draw: unknown domain");
    int cls = static_cast<int>(rng.uniform_int(spec_.n_classes));
    const auto& mean = class_means_[static_cast<size_t>(cls)];
    std::vector<double> z(static_cast<size_t>(spec_.n_features));
    for (size_t i = 0; i < z.size(); ++i) z[i] = mean[i] + rng.normal() * spec_.noise_sigma;

    const auto& d = domains_[static_cast<size_t>(domain)];
    LabeledSample s;
    s.features.assign(static_cast<size_t>(spec_.n_features), 0.0);
    for (int i = 0; i < spec_.n_features; ++i) {
        double acc = d.shift[static_cast<size_t>(i)];
        const auto& row = d.rotation[static_cast<size_t>(i)];
        for (int j = 0; j < spec_.n_features; ++j) acc += row[static_cast<size_t>(j)] * z[static_cast<size_t>(j)];
        s.features[static_cast<size_t>(i)] = acc;
    }
    s.label = cls;
    s.domain = domain;
    return s;
}

// ---------------------------------------------------------------------------
// ExternalWorld

ExternalWorld::ExternalWorld(std::vector<std::vector<LabeledSample>> pools, int n_features, int n_classes,
                             uint64_t master_seed, int n_devices)
    : pools_(std::move(pools)), n_features_(n_features), n_classes_(n_classes), master_seed_(master_seed) {
    cursors_.assign(static_cast<size_t>(n_devices), std::vector<Cursor>(pools_.size()));
}

LabeledSample ExternalWorld::draw(int domain, int device, Rng& /*rng*/) {
    if (domain < 0 || domain >= n_domains()) throw LookupError("draw: unknown domain");
    auto& cur = cursors_[static_cast<size_t>(device)][static_cast<size_t>(domain)];
    const auto& pool = pools_[static_cast<size_t>(domain)];
    if (cur.pos >= cur.order.size()) {
        cur.order.resize(pool.size());
        std::iota(cur.order.begin(), cur.order.end(), 0);
        Rng shuffler = substream(master_seed_, "world.pool", (static_cast<uint64_t>(device) << 20) ^
                                                                 static_cast<uint64_t>(domain),
                                 cur.epoch);
        shuffler.shuffle(cur.order);
        cur.pos = 0;
        ++cur.epoch;
    }
    return pool[static_cast<size_t>(cur.order[cur.pos++])];
}

std::unique_ptr<ExternalWorld> load_external(const std::string& path, uint64_t master_seed, int n_devices) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open data file: " + path);

    std::string header;
    if (!std::getline(in, header)) throw LoadError(path + ": empty file");
    int n_features = 0, n_domains = 0, n_classes = 0;
    if (std::sscanf(header.c_str(), "#features=%d domains=%d classes=%d", &n_features, &n_domains,
                    &n_classes) != 3 ||
        n_features < 1 || n_domains < 1 || n_classes < 2) {
        throw LoadError(path + ":1: malformed header, expected '#features=N domains=M classes=C'");
    }

    std::vector<std::vector<LabeledSample>> pools(static_cast<size_t>(n_domains));
    std::string line;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (static_cast<int>(cells.size()) != n_features + 2) {
            throw LoadError(path + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(n_features + 2) + " fields, got " + std::to_string(cells.size()));
        }
        auto parse = [&](const std::string& text, const char* what) {
            size_t used = 0;
            double v;
            try {
                v = std::stod(text, &used);
            } catch (const std::exception&) {
                throw LoadError(path + ":" + std::to_string(line_no) + ": non-numeric " + what + " '" +
                                text + "'");
            }
            if (used != text.size() || !std::isfinite(v)) {
                throw LoadError(path + ":" + std::to_string(line_no) + ": non-numeric " + what + " '" +
                                text + "'");
            }
            return v;
        };
        LabeledSample s;
        int domain = static_cast<int>(parse(cells[0], "domain id"));
        s.label = static_cast<int>(parse(cells[1], "class id"));
        if (domain < 0 || domain >= n_domains) {
            throw LoadError(path + ":" + std::to_string(line_no) + ": unknown domain id " + cells[0]);
        }
        if (s.label < 0 || s.label >= n_classes) {
            throw LoadError(path + ":" + std::to_string(line_no) + ": unknown class id " + cells[1]);
        }
        s.domain = domain;
        s.features.reserve(static_cast<size_t>(n_features));
        for (int f = 0; f < n_features; ++f) s.features.push_back(parse(cells[static_cast<size_t>(f + 2)], "feature"));
        pools[static_cast<size_t>(domain)].push_back(std::move(s));
    }
    for (int d = 0; d < n_domains; ++d) {
        if (pools[static_cast<size_t>(d)].empty()) {
            throw LoadError(path + ": domain " + std::to_string(d) + " has no samples");
        }
    }
    return std::make_unique<ExternalWorld>(std::move(pools), n_features, n_classes, master_seed, n_devices);
}

// ---------------------------------------------------------------------------
// Drift mechanics

std::vector<DriftEvent> schedule_events(int step, int fleet_size, int total_steps, int n_domains,
                                        const DriftSettings& settings,
                                        const std::vector<DeviceDistribution>& distributions, Rng& rng) {
    if (step < 2) throw ProtocolError("schedule_events: drift events begin at step 2");
    if (static_cast<int>(distributions.size()) != fleet_size) {
        throw ProtocolError("schedule_events: distribution list does not match fleet size");
    }
    std::vector<DriftEvent> events;
    if (settings.rate_hi <= 0.0 || n_domains < 2) return events;

    int lo = std::max<int>(1, static_cast<int>(std::ceil(settings.rate_lo * fleet_size)));
    int hi = std::max<int>(lo, static_cast<int>(std::floor(settings.rate_hi * fleet_size)));
    int n_drift = lo + static_cast<int>(rng.uniform_int(hi - lo + 1));
    n_drift = std::min(n_drift, fleet_size);

    // Distinct devices, uniform: partial Fisher-Yates over the id list.
    std::vector<int> ids(static_cast<size_t>(fleet_size));
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = 0; i < n_drift; ++i) {
        int j = i + static_cast<int>(rng.uniform_int(fleet_size - i));
        std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
    }
    std::vector<int> chosen(ids.begin(), ids.begin() + n_drift);
    std::sort(chosen.begin(), chosen.end());

    int len_cap = std::max(1, std::min(settings.len_max,
                                       static_cast<int>(std::ceil(0.15 * static_cast<double>(total_steps)))));
    int len_lo = std::min(settings.len_min, len_cap);

    for (int device : chosen) {
        DriftEvent ev;
        ev.device = device;
        ev.start_step = step;
        int current = distributions[static_cast<size_t>(device)].dominant_domain();
        // Uniform over domains != current dominant domain.
        int pick = static_cast<int>(rng.uniform_int(n_domains - 1));
        ev.target_domain = pick < current ? pick : pick + 1;
        if (rng.uniform() < settings.p_instantaneous) {
            ev.pattern = DriftPattern::Instantaneous;
            ev.length = 1;
        } else {
            ev.pattern = DriftPattern::Incremental;
            ev.length = len_lo + static_cast<int>(rng.uniform_int(len_cap - len_lo + 1));
        }
        events.push_back(ev);
    }
    return events;
}

void update_distribution(DeviceDistribution& dist, int step) {
    // Events sorted by trigger time; apply in order. An activating event
    // freezes the current mixture as its base and supersedes older ones.
    std::stable_sort(dist.pending.begin(), dist.pending.end(),
                     [](const ActiveDrift& a, const ActiveDrift& b) {
                         return a.event.start_step < b.event.start_step;
                     });
    std::vector<ActiveDrift> kept;
    for (size_t i = 0; i < dist.pending.size(); ++i) {
        ActiveDrift& ad = dist.pending[i];
        if (step < ad.event.start_step) {
            kept.push_back(std::move(ad));
            continue;
        }
        if (!ad.started) {
            ad.started = true;
            ad.base = dist.mixture;
            // Supersede any older event that already ran (its effect is folded
            // into this base).
            std::erase_if(kept, [](const ActiveDrift& k) { return k.started; });
        }
        int progress = step - ad.event.start_step + 1;
        bool done;
        if (ad.event.pattern == DriftPattern::Instantaneous) {
            dist.mixture = {{ad.event.target_domain, 1.0}};
            done = true;
        } else {
            double frac = std::min(1.0, static_cast<double>(progress) /
                                            static_cast<double>(ad.event.length));
            std::map<int, double> mix;
            for (const auto& [d, w] : ad.base) {
                double scaled = (1.0 - frac) * w;
                if (scaled != 0.0) mix[d] += scaled;
            }
            mix[ad.event.target_domain] += frac;
            dist.mixture = std::move(mix);
            done = progress >= ad.event.length;
        }
        if (!done) kept.push_back(std::move(ad));
    }
    dist.pending = std::move(kept);
    dist.check_valid();
}

StepData sample_step(World& world, const DeviceDistribution& dist, int device, const DataCounts& counts,
                     Rng& rng) {
    dist.check_valid();
    auto pick_domain = [&]() {
        double u = rng.uniform();
        double acc = 0.0;
        int last = dist.mixture.begin()->first;
        for (const auto& [d, w] : dist.mixture) {
            acc += w;
            last = d;
            if (u < acc) return d;
        }
        return last;
    };
    StepData data;
    data.train.reserve(static_cast<size_t>(counts.train_per_step));
    data.val.reserve(static_cast<size_t>(counts.val_per_step));
    for (int i = 0; i < counts.train_per_step; ++i) data.train.push_back(world.draw(pick_domain(), device, rng));
    for (int i = 0; i < counts.val_per_step; ++i) data.val.push_back(world.draw(pick_domain(), device, rng));
    return data;
}

}  // namespace driftguard
