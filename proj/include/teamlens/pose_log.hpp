#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "teamlens/stream_io.hpp"

namespace teamlens {

// Trajectory log, one row per frame:  t,x,y,heading,v_fwd,v_ang
// Positions in meters, heading in radians wrapped to (-pi, pi], forward
// velocity in m/s, angular velocity in rad/s. The same schema serves both
// commanded controls and recorded ground-truth poses; which one a file is
// comes from the manifest key it hangs off.

struct PoseRow {
    double x = 0, y = 0, heading = 0, v_fwd = 0, v_ang = 0;
};

struct PoseLog {
    std::vector<PoseRow> rows;
    std::size_t n_frames() const { return rows.size(); }
};

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a <= 0) a += 2.0 * kPi;
    return a - kPi;
}

inline void write_pose_log(const PoseLog& log, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_pose_log: cannot open " + path.string());
    f << "t,x,y,heading,v_fwd,v_ang\n";
    char buf[160];
    for (std::size_t t = 0; t < log.rows.size(); ++t) {
        const auto& r = log.rows[t];
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", t, r.x, r.y,
                      r.heading, r.v_fwd, r.v_ang);
        f << buf;
    }
    if (!f) throw std::runtime_error("write_pose_log: short write to " + path.string());
}

/// `ground_truth` marks privileged logs; reads of those are counted so the
/// inference path can prove it never touched them.
inline PoseLog read_pose_log(const std::filesystem::path& path, bool ground_truth) {
    if (ground_truth) IoTracker::gt_pose_reads()++;
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_pose_log: cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line) || line != "t,x,y,heading,v_fwd,v_ang")
        throw std::runtime_error("read_pose_log: bad header in " + path.string());
    PoseLog log;
    std::size_t expect_t = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        double vals[6];
        for (int i = 0; i < 6; ++i) {
            if (!std::getline(ls, field, i == 5 ? '\n' : ','))
                throw std::runtime_error("read_pose_log: malformed row " + std::to_string(expect_t) +
                                         " in " + path.string());
            try {
                vals[i] = std::stod(field);
            } catch (const std::exception&) {
                throw std::runtime_error("read_pose_log: non-numeric field '" + field + "' in " +
                                         path.string());
            }
        }
        if (static_cast<std::size_t>(vals[0]) != expect_t)
            throw std::runtime_error("read_pose_log: timestep gap at row " +
                                     std::to_string(expect_t) + " in " + path.string());
        if (!(vals[3] > -kPi - 1e-12 && vals[3] <= kPi + 1e-12))
            throw std::runtime_error("read_pose_log: heading out of (-pi, pi] at row " +
                                     std::to_string(expect_t) + " in " + path.string());
        log.rows.push_back({vals[1], vals[2], vals[3], vals[4], vals[5]});
        ++expect_t;
    }
    if (log.rows.empty()) throw std::runtime_error("read_pose_log: no rows in " + path.string());
    return log;
}

} // namespace teamlens
