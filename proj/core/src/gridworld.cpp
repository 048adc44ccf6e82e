#include "frlfi/gridworld.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace frlfi::gridworld {

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Ongoing: return "ongoing";
    case Outcome::ReachedGoal: return "goal";
    case Outcome::HitHell: return "hell";
    case Outcome::Timeout: return "timeout";
  }
  return "?";
}

Outcome outcome_from_string(std::string_view s) {
  for (Outcome o : {Outcome::Ongoing, Outcome::ReachedGoal, Outcome::HitHell, Outcome::Timeout}) {
    if (to_string(o) == s) return o;
  }
  throw std::invalid_argument("unknown outcome '" + std::string(s) + "'");
}

int observation_index(const Observation& obs) {
  int idx = 0;
  for (auto v : obs) {
    if (v < -1 || v > 1) throw std::invalid_argument("observation entry outside {-1,0,1}");
    idx = idx * 3 + (v + 1);
  }
  return idx;
}

Observation observation_from_index(int index) {
  if (index < 0 || index >= kNumObservations) throw std::out_of_range("observation index");
  Observation obs{};
  for (int i = kNumActions - 1; i >= 0; --i) {
    obs[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(index % 3 - 1);
    index /= 3;
  }
  return obs;
}

GridMap GridMap::parse(std::string_view text, int id) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  if (lines.size() != kGridSize) {
    throw MapError(MapError::Kind::Dimensions, "map must have " + std::to_string(kGridSize) + " rows, got " +
                                                   std::to_string(lines.size()));
  }
  GridMap map;
  map.id_ = id;
  int sources = 0;
  for (int r = 0; r < kGridSize; ++r) {
    const auto& line = lines[static_cast<std::size_t>(r)];
    if (line.size() != kGridSize) {
      throw MapError(MapError::Kind::Dimensions,
                     "row " + std::to_string(r) + " has " + std::to_string(line.size()) + " columns");
    }
    for (int c = 0; c < kGridSize; ++c) {
      CellType cell{};
      switch (line[static_cast<std::size_t>(c)]) {
        case '.': cell = CellType::Free; break;
        case 'H': cell = CellType::Hell; break;
        case 'G':
          cell = CellType::Goal;
          map.goals_.push_back({r, c});
          break;
        case 'S':
          cell = CellType::Source;
          map.source_ = {r, c};
          ++sources;
          break;
        default:
          throw MapError(MapError::Kind::IllegalCharacter, std::string("illegal map character '") +
                                                               line[static_cast<std::size_t>(c)] + "' at row " +
                                                               std::to_string(r));
      }
      map.cells_[index({r, c})] = cell;
    }
  }
  if (sources != 1) {
    throw MapError(MapError::Kind::SourceCount, "map needs exactly one 'S', found " + std::to_string(sources));
  }
  if (map.goals_.empty()) throw MapError(MapError::Kind::NoGoal, "map has no 'G'");
  return map;
}

GridMap GridMap::load(const std::filesystem::path& path, int id) {
  std::ifstream in(path);
  if (!in) throw MapError(MapError::Kind::Io, "cannot open map file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return parse(text, id);
}

int GridMap::goal_distance(Position p) const {
  int best = 2 * kGridSize;
  for (const auto& g : goals_) best = std::min(best, std::abs(g.row - p.row) + std::abs(g.col - p.col));
  return best;
}

std::string GridMap::to_text() const {
  std::string out;
  for (int r = 0; r < kGridSize; ++r) {
    for (int c = 0; c < kGridSize; ++c) {
      switch (at({r, c})) {
        case CellType::Free: out += '.'; break;
        case CellType::Hell: out += 'H'; break;
        case CellType::Goal: out += 'G'; break;
        case CellType::Source: out += 'S'; break;
      }
    }
    out += '\n';
  }
  return out;
}

namespace {

constexpr std::array<Position, kNumActions> kMoves{{{-1, 0}, {1, 0}, {0, 1}, {0, -1}}};

}  // namespace

Observation observe(const GridMap& map, Position pos) {
  if (!map.inside(pos)) throw std::out_of_range("observe: position off the grid");
  Observation obs{};
  for (std::size_t a = 0; a < kMoves.size(); ++a) {
    const Position n{pos.row + kMoves[a].row, pos.col + kMoves[a].col};
    if (!map.inside(n)) {
      obs[a] = -1;
      continue;
    }
    switch (map.at(n)) {
      case CellType::Hell: obs[a] = -1; break;
      case CellType::Goal: obs[a] = 1; break;
      default: obs[a] = 0; break;
    }
  }
  return obs;
}

StepResult step(const GridMap& map, Position pos, Action action, int goal_distance_before) {
  if (!map.inside(pos)) throw std::out_of_range("step: position off the grid");
  const auto a = static_cast<std::size_t>(action);
  if (a >= kMoves.size()) throw std::invalid_argument("step: invalid action");
  StepResult r;
  Position next{pos.row + kMoves[a].row, pos.col + kMoves[a].col};
  if (!map.inside(next)) next = pos;
  r.next = next;
  switch (map.at(next)) {
    case CellType::Hell:
      r.reward = -1.0;
      r.terminal = true;
      r.outcome = Outcome::HitHell;
      return r;
    case CellType::Goal:
      r.reward = 1.0;
      r.terminal = true;
      r.outcome = Outcome::ReachedGoal;
      return r;
    default:
      break;
  }
  r.reward = map.goal_distance(next) < goal_distance_before ? 0.1 : -0.1;
  return r;
}

double success_rate(std::span<const Outcome> outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("success_rate: no attempts");
  const auto hits = std::count(outcomes.begin(), outcomes.end(), Outcome::ReachedGoal);
  return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

}  // namespace frlfi::gridworld
