#pragma once

#include <span>
#include <string>
#include <vector>

#include "fedsparse/series.hpp"

namespace fedsparse::ts {

// Reads `patient_id,time,channel,value` rows (header required, any row
// order), groups by patient and sorts each series by time. Series are
// returned in patient_id order. Throws on malformed rows (with the line
// number) and on duplicate (patient, time) pairs ("timestamp collision").
std::vector<SparseSeries> ingest_csv(const std::string& path);

// Writes the same schema ingest_csv reads.
void write_csv(const std::string& path, std::span<const SparseSeries> series);

}  // namespace fedsparse::ts
