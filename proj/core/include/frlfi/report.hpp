#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "frlfi/faultinj.hpp"
#include "frlfi/fedtrain.hpp"
#include "frlfi/harness.hpp"

namespace frlfi::report {

/// Shortest text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

/// RFC 4180 style: fields with commas, quotes or newlines are quoted.
std::string csv_field(std::string_view s);
std::vector<std::string> split_csv_line(std::string_view line);

void write_results_csv(std::ostream& out, const std::vector<harness::ResultRow>& rows);
std::vector<harness::ResultRow> read_results_csv(std::istream& in);
void write_timings_csv(std::ostream& out, const std::vector<harness::ResultRow>& rows);

void write_convergence_csv(std::ostream& out, const std::vector<harness::ConvergenceRow>& rows);
void write_mitigation_csv(std::ostream& out, const std::vector<harness::MitigationRow>& rows);

void write_episode_log_csv(std::ostream& out, const std::vector<fedtrain::EpisodeLogRow>& rows);
void write_injection_log_csv(std::ostream& out, const faultinj::InjectionLog& log);
void write_guard_events_csv(std::ostream& out, const std::vector<fedtrain::GuardEvent>& events);

/// One SVG per (location, mode, format, agents, multiplier) group of training
/// rows: fault episode on the x axis, BER on the y axis, colour = mean SR.
struct Heatmap {
  std::string title;
  std::vector<int> episodes;
  std::vector<double> bers;
  std::vector<std::vector<double>> sr;  // [ber][episode], NaN when missing
  std::string svg() const;
  std::size_t cell_count() const { return episodes.size() * bers.size(); }
};
std::vector<Heatmap> build_heatmaps(const std::vector<harness::ResultRow>& rows);

/// Plain-text table with each row compared to its fault-free baseline (same
/// cell with BER 0, or the clean inference cell) where one exists.
std::string summary(const std::vector<harness::ResultRow>& rows);

/// Writes `content` to `path` atomically; throws std::runtime_error naming the path.
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace frlfi::report
