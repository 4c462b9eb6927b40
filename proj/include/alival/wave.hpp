#pragma once

// Persistent multi-wave validation state: cumulative validated ids, design
// provenance per wave, and running quality estimates that feed the next
// wave's simulations. The state file is written atomically and guarded by a
// lock file.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "alival/audit.hpp"
#include "alival/common.hpp"
#include "alival/design.hpp"

namespace alival {

struct WaveRecord {
    int index = 0;
    std::string design;  // provenance label, e.g. "bcc(n=48,seed=7)"
    std::vector<std::string> ids;
};

struct WaveState {
    int wave_index = -1;  // -1 = nothing run yet; Pilot becomes 0
    std::optional<int> budget;
    std::vector<WaveRecord> waves;
    // Cumulative quality tallies; rates derive from these.
    long n11 = 0, n10 = 0, n01 = 0, n00 = 0;
    long missing_pre = 0, recovered = 0;
    std::map<std::string, long> finding_counts;

    std::set<std::string> validated_ids() const {
        std::set<std::string> all;
        for (const auto& w : waves) all.insert(w.ids.begin(), w.ids.end());
        return all;
    }

    Rate tpr() const { return Rate::of(n11, n11 + n01); }
    Rate fpr() const { return Rate::of(n10, n10 + n00); }
    Rate recovery_rate() const { return Rate::of(recovered, missing_pre); }
};

// Advance the state by one wave: new ids must be disjoint from everything
// validated so far, and quality tallies absorb the wave's report.
inline WaveState advance_wave(const WaveState& state,
                              const ValidationSelection& selection,
                              const QualityReport& findings) {
    WaveState next = state;
    const auto seen = state.validated_ids();
    for (const auto& id : selection.selected_ids) {
        if (seen.count(id)) {
            throw data_error("patient " + id +
                             " was already validated in an earlier wave");
        }
    }
    next.wave_index = state.wave_index + 1;
    WaveRecord rec;
    rec.index = next.wave_index;
    rec.design = std::string(design_name(selection.spec.kind)) +
                 "(n=" + std::to_string(selection.spec.n) +
                 ",seed=" + std::to_string(selection.spec.seed) + ")";
    rec.ids = selection.selected_ids;
    next.waves.push_back(std::move(rec));
    if (next.budget.has_value() &&
        static_cast<long>(next.validated_ids().size()) > *next.budget) {
        throw data_error("cumulative validated count exceeds the budget of " +
                         std::to_string(*next.budget));
    }
    next.n11 += findings.overall.n11;
    next.n10 += findings.overall.n10;
    next.n01 += findings.overall.n01;
    next.n00 += findings.overall.n00;
    next.missing_pre += findings.overall.missing_pre;
    next.recovered += findings.overall.recovered;
    for (const auto& [k, v] : findings.finding_counts) {
        next.finding_counts[k] += v;
    }
    return next;
}

inline nlohmann::json wave_state_to_json(const WaveState& s) {
    nlohmann::json j;
    j["wave_index"] = s.wave_index;
    if (s.budget.has_value()) j["budget"] = *s.budget;
    j["waves"] = nlohmann::json::array();
    for (const auto& w : s.waves) {
        j["waves"].push_back({{"index", w.index},
                              {"design", w.design},
                              {"ids", w.ids}});
    }
    j["quality"] = {{"n11", s.n11},         {"n10", s.n10},
                    {"n01", s.n01},         {"n00", s.n00},
                    {"missing_pre", s.missing_pre},
                    {"recovered", s.recovered}};
    j["finding_counts"] = s.finding_counts;
    auto put_rate = [&j](const char* key, const Rate& r) {
        if (r.value.has_value()) {
            j["quality"][key] = round12(*r.value);
        } else {
            j["quality"][key] = nullptr;
        }
    };
    put_rate("tpr", s.tpr());
    put_rate("fpr", s.fpr());
    put_rate("recovery_rate", s.recovery_rate());
    return j;
}

inline WaveState wave_state_from_json(const nlohmann::json& j) {
    WaveState s;
    s.wave_index = j.at("wave_index").get<int>();
    if (j.contains("budget") && !j["budget"].is_null()) {
        s.budget = j["budget"].get<int>();
    }
    for (const auto& w : j.at("waves")) {
        WaveRecord rec;
        rec.index = w.at("index").get<int>();
        rec.design = w.at("design").get<std::string>();
        rec.ids = w.at("ids").get<std::vector<std::string>>();
        s.waves.push_back(std::move(rec));
    }
    const auto& q = j.at("quality");
    s.n11 = q.at("n11").get<long>();
    s.n10 = q.at("n10").get<long>();
    s.n01 = q.at("n01").get<long>();
    s.n00 = q.at("n00").get<long>();
    s.missing_pre = q.at("missing_pre").get<long>();
    s.recovered = q.at("recovered").get<long>();
    if (j.contains("finding_counts")) {
        s.finding_counts =
            j["finding_counts"].get<std::map<std::string, long>>();
    }
    return s;
}

// Exclusive-creation lock file guarding state access; removed on scope exit.
class StateLock {
public:
    explicit StateLock(const std::string& state_path)
        : lock_path_(state_path + ".lock") {
        std::error_code ec;
        if (std::filesystem::exists(lock_path_, ec)) {
            throw data_error("state file is locked (" + lock_path_ +
                             " exists); remove it if no other run is active");
        }
        std::ofstream out(lock_path_);
        if (!out) throw data_error("cannot create lock file " + lock_path_);
        out << "locked\n";
    }
    ~StateLock() {
        std::error_code ec;
        std::filesystem::remove(lock_path_, ec);
    }
    StateLock(const StateLock&) = delete;
    StateLock& operator=(const StateLock&) = delete;

private:
    std::string lock_path_;
};

// Atomic write: temp file in the same directory, then rename over the target.
inline void save_wave_state(const WaveState& s, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw data_error("cannot write " + tmp);
        out << wave_state_to_json(s).dump(2) << '\n';
        out.flush();
        if (!out) throw data_error("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw data_error("cannot move " + tmp + " over " + path + ": " +
                         ec.message());
    }
}

// Refuses to proceed on a corrupt state file; the unreadable file is copied
// aside and the backup path is named in the error.
inline WaveState load_wave_state(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open state file " + path);
    nlohmann::json j;
    try {
        in >> j;
        return wave_state_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        const std::string backup = path + ".corrupt";
        std::error_code ec;
        std::filesystem::copy_file(
            path, backup, std::filesystem::copy_options::overwrite_existing, ec);
        throw data_error("state file " + path + " is corrupt (" + e.what() +
                         "); a copy was saved to " + backup +
                         "; refusing to proceed");
    }
}

}  // namespace alival
