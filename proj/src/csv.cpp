#include "fedsparse/csv.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fedsparse::ts {

namespace {

[[noreturn]] void malformed(size_t line_no, const std::string& why) {
    throw std::runtime_error("malformed row at line " + std::to_string(line_no) + ": " +
                             why);
}

double parse_double(const std::string& s, size_t line_no, const char* what) {
    if (s.empty()) malformed(line_no, std::string("empty ") + what);
    char* end = nullptr;
    errno = 0;
    double v = std::strtod(s.c_str(), &end);
    if (errno != 0 || end != s.c_str() + s.size() || !std::isfinite(v))
        malformed(line_no, std::string("bad ") + what + " '" + s + "'");
    return v;
}

long parse_long(const std::string& s, size_t line_no, const char* what) {
    if (s.empty()) malformed(line_no, std::string("empty ") + what);
    char* end = nullptr;
    errno = 0;
    long v = std::strtol(s.c_str(), &end, 10);
    if (errno != 0 || end != s.c_str() + s.size())
        malformed(line_no, std::string("bad ") + what + " '" + s + "'");
    return v;
}

}  // namespace

std::vector<SparseSeries> ingest_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);

    std::string line;
    size_t line_no = 0;
    if (!std::getline(in, line)) throw std::runtime_error("missing header in " + path);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "patient_id,time,channel,value")
        throw std::runtime_error("unexpected header '" + line + "' in " + path);

    std::map<std::string, std::vector<Event>> by_patient;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (line.back() == ',') cols.push_back("");
        if (cols.size() != 4) malformed(line_no, "expected 4 columns");
        if (cols[0].empty()) malformed(line_no, "empty patient_id");

        Event e;
        e.time = parse_double(cols[1], line_no, "time");
        long ch = parse_long(cols[2], line_no, "channel");
        if (ch < 0) malformed(line_no, "negative channel");
        e.channel = static_cast<int>(ch);
        e.value = parse_double(cols[3], line_no, "value");
        by_patient[cols[0]].push_back(e);
    }

    std::vector<SparseSeries> out;
    out.reserve(by_patient.size());
    for (auto& [pid, events] : by_patient) {
        std::stable_sort(events.begin(), events.end(),
                         [](const Event& a, const Event& b) { return a.time < b.time; });
        for (size_t i = 1; i < events.size(); ++i)
            if (events[i].time == events[i - 1].time)
                throw std::runtime_error("timestamp collision for patient " + pid +
                                         " at t=" + std::to_string(events[i].time));
        out.push_back(SparseSeries{pid, std::move(events)});
    }
    return out;
}

void write_csv(const std::string& path, std::span<const SparseSeries> series) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "patient_id,time,channel,value\n";
    char buf[64];
    for (const SparseSeries& s : series) {
        for (const Event& e : s.events) {
            out << s.patient_id << ',';
            std::snprintf(buf, sizeof(buf), "%.17g", e.time);
            out << buf << ',' << e.channel << ',';
            std::snprintf(buf, sizeof(buf), "%.17g", e.value);
            out << buf << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace fedsparse::ts
