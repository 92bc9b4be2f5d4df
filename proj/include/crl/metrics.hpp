#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "crl/agent.hpp"

namespace crl {

// Append-only JSON-lines metrics: one self-contained object per update.
// No timestamps, so identical runs produce byte-identical files.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path) : out_(path, std::ios::out | std::ios::trunc) {
        if (!out_) throw ConfigError("cannot open metrics file: " + path);
    }

    void write(const UpdateMetrics& m, std::optional<double> win_rate = {}) {
        nlohmann::ordered_json j;
        j["step"] = m.step;
        j["loss_rl"] = m.loss_rl;
        j["loss_club"] = m.loss_club;
        j["loss_vib"] = m.loss_vib;
        j["loss_total"] = m.loss_total;
        j["mi_estimate"] = m.mi_estimate;
        j["entropy"] = m.entropy;
        j["grad_norm"] = m.grad_norm;
        if (win_rate) j["win_rate"] = *win_rate;
        out_ << j.dump() << "\n";
        out_.flush();
    }

private:
    std::ofstream out_;
};

}  // namespace crl
