#include "frlfi/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "frlfi/config.hpp"

namespace frlfi::report {

using harness::Cell;
using harness::ResultRow;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return {buf, p};
}

double parse_double(std::string_view s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  }
  return v;
}

namespace {

int parse_int(std::string_view s) {
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw std::invalid_argument("not an integer: '" + std::string(s) + "'");
  }
  return v;
}

bool parse_bool(std::string_view s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("not a boolean: '" + std::string(s) + "'");
}

const char* bool_text(bool b) { return b ? "true" : "false"; }

constexpr std::string_view kResultHeader =
    "phase,fault_episode,ber,location,mode,format,n_agents,interval_multiplier,inference,guard,repetitions,mean_sr,"
    "sr_std,ci95,mean_flips";

}  // namespace

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  if (quoted) throw std::invalid_argument("unterminated quote in CSV line");
  return fields;
}

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << kResultHeader << '\n';
  for (const auto& r : rows) {
    const Cell& c = r.cell;
    const bool inference = r.phase == harness::Phase::Inference;
    out << harness::to_string(r.phase) << ',' << c.fault_episode << ',' << format_double(c.ber) << ','
        << csv_field(config::location_string(c.location)) << ',' << faultinj::to_string(c.mode) << ','
        << csv_field(c.fmt.to_string()) << ',' << c.n_agents << ',' << c.interval_multiplier << ','
        << (inference ? harness::to_string(c.kind) : "-") << ',' << (inference ? bool_text(c.guard) : "-") << ','
        << r.repetitions << ',' << format_double(r.mean_sr) << ',' << format_double(r.sr_std) << ',' << format_double(r.ci95) << ','
        << format_double(r.mean_flips) << '\n';
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("results CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kResultHeader) throw std::invalid_argument("unexpected results CSV header: " + line);
  std::vector<ResultRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 15) {
      throw std::invalid_argument("results CSV line " + std::to_string(lineno) + ": expected 15 fields, got " +
                                  std::to_string(f.size()));
    }
    try {
      ResultRow r;
      r.phase = harness::phase_from_string(f[0]);
      r.cell.fault_episode = parse_int(f[1]);
      r.cell.ber = parse_double(f[2]);
      r.cell.location = config::parse_location(f[3]);
      r.cell.mode = faultinj::flip_mode_from_string(f[4]);
      r.cell.fmt = fxp::QFormat::parse(f[5]);
      r.cell.n_agents = parse_int(f[6]);
      r.cell.interval_multiplier = parse_int(f[7]);
      if (r.phase == harness::Phase::Inference) {
        r.cell.kind = harness::inference_kind_from_string(f[8]);
        r.cell.guard = parse_bool(f[9]);
      } else if (f[8] != "-" || f[9] != "-") {
        throw std::invalid_argument("training rows carry no inference settings");
      }
      r.repetitions = parse_int(f[10]);
      r.mean_sr = parse_double(f[11]);
      r.sr_std = parse_double(f[12]);
      r.ci95 = parse_double(f[13]);
      r.mean_flips = parse_double(f[14]);
      rows.push_back(r);
    } catch (const std::exception& e) {
      throw std::invalid_argument("results CSV line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_timings_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << "row,runtime_s\n";
  for (std::size_t i = 0; i < rows.size(); ++i) out << i << ',' << format_double(rows[i].runtime_s) << '\n';
}

void write_convergence_csv(std::ostream& out, const std::vector<harness::ConvergenceRow>& rows) {
  out << "ber,repetition,seed,fault_episode,episodes_to_recover,censored,flips\n";
  for (const auto& r : rows) {
    out << format_double(r.ber) << ',' << r.repetition << ',' << r.seed << ',' << r.fault_episode << ','
        << r.episodes_to_recover << ',' << bool_text(r.censored) << ',' << r.flips << '\n';
  }
}

void write_mitigation_csv(std::ostream& out, const std::vector<harness::MitigationRow>& rows) {
  out << "repetition,seed,faulted,guarded,final_sr,verdicts,recoveries,flips\n";
  for (const auto& r : rows) {
    out << r.repetition << ',' << r.seed << ',' << bool_text(r.faulted) << ',' << bool_text(r.guarded) << ','
        << format_double(r.final_sr) << ',' << r.verdicts << ',' << r.recoveries << ',' << r.flips << '\n';
  }
}

void write_episode_log_csv(std::ostream& out, const std::vector<fedtrain::EpisodeLogRow>& rows) {
  out << "episode,agent,return,outcome,epsilon,alpha,flips_injected,sr_window100\n";
  for (const auto& r : rows) {
    out << r.episode << ',' << r.agent << ',' << format_double(r.episode_return) << ','
        << gridworld::to_string(r.outcome) << ',' << format_double(r.epsilon) << ',' << format_double(r.alpha)
        << ',' << r.flips_injected << ',' << format_double(r.sr_window) << '\n';
  }
}

void write_injection_log_csv(std::ostream& out, const faultinj::InjectionLog& log) {
  out << "location,offset,bit,old_bit,new_bit,episode,step,agent\n";
  for (const auto& r : log) {
    out << csv_field(r.location.to_string()) << ',' << r.offset << ',' << r.bit << ',' << r.old_bit << ','
        << r.new_bit << ',' << r.episode << ',' << r.step << ',' << r.agent << '\n';
  }
}

void write_guard_events_csv(std::ostream& out, const std::vector<fedtrain::GuardEvent>& events) {
  out << "episode,verdict,agent,action_taken,recovered_within_k\n";
  for (const auto& e : events) {
    const char* rec = e.recovered_within_k < 0 ? "n/a" : (e.recovered_within_k == 1 ? "true" : "false");
    out << e.episode << ',' << guard::to_string(e.verdict.kind) << ',' << e.verdict.agent << ','
        << csv_field(e.action) << ',' << rec << '\n';
  }
}

std::vector<Heatmap> build_heatmaps(const std::vector<ResultRow>& rows) {
  using Key = std::tuple<std::string, std::string, std::string, int, int>;
  std::map<Key, std::vector<const ResultRow*>> groups;
  std::vector<Key> order;
  for (const auto& r : rows) {
    if (r.phase != harness::Phase::Training) continue;
    const Cell& c = r.cell;
    Key k{config::location_string(c.location), std::string(faultinj::to_string(c.mode)), c.fmt.to_string(),
          c.n_agents, c.interval_multiplier};
    if (!groups.contains(k)) order.push_back(k);
    groups[k].push_back(&r);
  }
  std::vector<Heatmap> maps;
  for (const auto& k : order) {
    const auto& members = groups[k];
    Heatmap h;
    std::ostringstream title;
    title << std::get<0>(k) << ' ' << std::get<1>(k) << ' ' << std::get<2>(k) << " n=" << std::get<3>(k)
          << " C x" << std::get<4>(k);
    h.title = title.str();
    for (const auto* r : members) {
      if (std::find(h.episodes.begin(), h.episodes.end(), r->cell.fault_episode) == h.episodes.end()) {
        h.episodes.push_back(r->cell.fault_episode);
      }
      if (std::find(h.bers.begin(), h.bers.end(), r->cell.ber) == h.bers.end()) h.bers.push_back(r->cell.ber);
    }
    std::sort(h.episodes.begin(), h.episodes.end());
    std::sort(h.bers.begin(), h.bers.end());
    h.sr.assign(h.bers.size(), std::vector<double>(h.episodes.size(), std::numeric_limits<double>::quiet_NaN()));
    for (const auto* r : members) {
      const auto bi = std::find(h.bers.begin(), h.bers.end(), r->cell.ber) - h.bers.begin();
      const auto ei = std::find(h.episodes.begin(), h.episodes.end(), r->cell.fault_episode) - h.episodes.begin();
      h.sr[static_cast<std::size_t>(bi)][static_cast<std::size_t>(ei)] = r->mean_sr;
    }
    maps.push_back(std::move(h));
  }
  return maps;
}

namespace {

std::string colour(double sr) {
  if (std::isnan(sr)) return "#cccccc";
  sr = std::clamp(sr, 0.0, 1.0);
  // red (0) -> yellow (0.5) -> green (1)
  const int r = sr < 0.5 ? 215 : static_cast<int>(215 - (sr - 0.5) * 2 * (215 - 26));
  const int g = sr < 0.5 ? static_cast<int>(48 + sr * 2 * (190 - 48)) : static_cast<int>(190 - (sr - 0.5) * 2 * 40);
  const int b = sr < 0.5 ? 39 : static_cast<int>(39 + (sr - 0.5) * 2 * 40);
  std::ostringstream os;
  os << '#' << std::hex << std::setfill('0') << std::setw(2) << r << std::setw(2) << g << std::setw(2) << b;
  return os.str();
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string Heatmap::svg() const {
  constexpr int cw = 70, ch = 36, left = 80, top = 40;
  const int w = left + cw * static_cast<int>(episodes.size()) + 20;
  const int h = top + ch * static_cast<int>(bers.size()) + 50;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "  <text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  // Highest BER on top.
  for (std::size_t bi = 0; bi < bers.size(); ++bi) {
    const int y = top + ch * static_cast<int>(bers.size() - 1 - bi);
    std::ostringstream label;
    label << std::setprecision(3) << bers[bi];
    os << "  <text x=\"" << left - 8 << "\" y=\"" << y + ch / 2 + 4 << "\" text-anchor=\"end\">" << label.str()
       << "</text>\n";
    for (std::size_t ei = 0; ei < episodes.size(); ++ei) {
      const int x = left + cw * static_cast<int>(ei);
      const double v = sr[bi][ei];
      os << "  <rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cw << "\" height=\"" << ch
         << "\" fill=\"" << colour(v) << "\" stroke=\"#ffffff\"/>\n";
      std::ostringstream val;
      if (std::isnan(v)) {
        val << "-";
      } else {
        val << std::fixed << std::setprecision(3) << v;
      }
      os << "  <text x=\"" << x + cw / 2 << "\" y=\"" << y + ch / 2 + 4 << "\" text-anchor=\"middle\">" << val.str()
         << "</text>\n";
    }
  }
  const int ay = top + ch * static_cast<int>(bers.size());
  for (std::size_t ei = 0; ei < episodes.size(); ++ei) {
    os << "  <text x=\"" << left + cw * static_cast<int>(ei) + cw / 2 << "\" y=\"" << ay + 16
       << "\" text-anchor=\"middle\">" << episodes[ei] << "</text>\n";
  }
  os << "  <text x=\"" << left + cw * static_cast<int>(episodes.size()) / 2 << "\" y=\"" << ay + 36
     << "\" text-anchor=\"middle\">fault episode</text>\n";
  os << "  <text x=\"14\" y=\"" << top + ch * static_cast<int>(bers.size()) / 2
     << "\" transform=\"rotate(-90 14 " << top + ch * static_cast<int>(bers.size()) / 2
     << ")\" text-anchor=\"middle\">BER</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string summary(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "phase" << std::setw(8) << "episode" << std::setw(10) << "ber" << std::setw(20)
     << "location" << std::setw(11) << "mode" << std::setw(11) << "format" << std::setw(4) << "n" << std::setw(4)
     << "Cx" << std::setw(15) << "inference" << std::setw(7) << "guard" << std::right << std::setw(8) << "SR"
     << std::setw(9) << "+-ci95" << std::setw(10) << "flips" << std::setw(10) << "vs base" << '\n';
  for (const auto& r : rows) {
    const Cell& c = r.cell;
    const bool inference = r.phase == harness::Phase::Inference;
    const ResultRow* base = nullptr;
    for (const auto& o : rows) {
      if (&o == &r || o.phase != r.phase) continue;
      const Cell& b = o.cell;
      const bool match =
          r.phase == harness::Phase::Training
              ? (b.ber == 0.0 && b.fault_episode == c.fault_episode && b.location == c.location && b.mode == c.mode &&
                 b.fmt == c.fmt && b.n_agents == c.n_agents && b.interval_multiplier == c.interval_multiplier)
              : (b.kind == harness::InferenceKind::Clean && b.guard == c.guard && b.mode == c.mode);
      if (match) {
        base = &o;
        break;
      }
    }
    std::ostringstream ber;
    ber << std::setprecision(3) << c.ber;
    os << std::left << std::setw(10) << harness::to_string(r.phase) << std::setw(8) << c.fault_episode << std::setw(10)
       << ber.str() << std::setw(20) << config::location_string(c.location) << std::setw(11)
       << faultinj::to_string(c.mode) << std::setw(11) << c.fmt.to_string() << std::setw(4) << c.n_agents
       << std::setw(4) << c.interval_multiplier << std::setw(15) << (inference ? harness::to_string(c.kind) : "-") << std::setw(7)
       << (inference ? (c.guard ? "yes" : "no") : "-") << std::right << std::fixed << std::setprecision(4) << std::setw(8) << r.mean_sr
       << std::setw(9) << r.ci95 << std::setprecision(1) << std::setw(10) << r.mean_flips;
    if (base != nullptr && base != &r) {
      os << std::setprecision(4) << std::showpos << std::setw(10) << (r.mean_sr - base->mean_sr) << std::noshowpos
         << (harness::ci_separated(r, *base) ? " *" : "");
    }
    os.unsetf(std::ios::floatfield);
    os << '\n';
  }
  os << "(* = separated from the baseline by more than the summed 95% half-widths)\n";
  return os.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot write " + path.string() + ": " + ec.message());
}

}  // namespace frlfi::report
