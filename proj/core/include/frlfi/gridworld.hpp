#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace frlfi::gridworld {

inline constexpr int kGridSize = 10;
inline constexpr int kNumActions = 4;
inline constexpr int kNumObservations = 81;
inline constexpr int kDefaultMaxSteps = 200;

enum class CellType : std::uint8_t { Free, Hell, Goal, Source };

/// Action order is also the observation neighbour order.
enum class Action : std::uint8_t { Up = 0, Down = 1, Right = 2, Left = 3 };

enum class Outcome : std::uint8_t { Ongoing, ReachedGoal, HitHell, Timeout };

std::string_view to_string(Outcome o);
Outcome outcome_from_string(std::string_view s);

struct Position {
  int row = 0;
  int col = 0;
  friend bool operator==(const Position&, const Position&) = default;
};

/// Neighbour encoding: -1 hell or off-grid, +1 goal, 0 free/source.
using Observation = std::array<std::int8_t, kNumActions>;

/// Dense index in [0, 81) of a valid observation (base-3 digits, -1 -> 0).
int observation_index(const Observation& obs);
Observation observation_from_index(int index);

class MapError : public std::runtime_error {
 public:
  enum class Kind { Dimensions, IllegalCharacter, SourceCount, NoGoal, Io };
  MapError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class GridMap {
 public:
  /// Parses 10 lines of 10 characters from {'.', 'H', 'G', 'S'}.
  static GridMap parse(std::string_view text, int id = 0);
  static GridMap load(const std::filesystem::path& path, int id = 0);

  CellType at(Position p) const { return cells_[index(p)]; }
  bool inside(Position p) const { return p.row >= 0 && p.row < kGridSize && p.col >= 0 && p.col < kGridSize; }
  Position source() const { return source_; }
  int id() const { return id_; }

  /// Manhattan distance to the nearest goal cell.
  int goal_distance(Position p) const;

  std::string to_text() const;

 private:
  static std::size_t index(Position p) { return static_cast<std::size_t>(p.row * kGridSize + p.col); }

  std::array<CellType, kGridSize * kGridSize> cells_{};
  std::vector<Position> goals_;
  Position source_{};
  int id_ = 0;
};

/// Throws std::out_of_range if pos is off the grid.
Observation observe(const GridMap& map, Position pos);

struct StepResult {
  Position next;
  double reward = 0.0;
  bool terminal = false;
  Outcome outcome = Outcome::Ongoing;
};

/// One transition. Moving off-grid leaves the agent in place with -0.1.
StepResult step(const GridMap& map, Position pos, Action action, int goal_distance_before);
inline StepResult step(const GridMap& map, Position pos, Action action) {
  return step(map, pos, action, map.goal_distance(pos));
}

/// Fraction of ReachedGoal outcomes. Throws std::invalid_argument when empty.
double success_rate(std::span<const Outcome> outcomes);

/// The 12 maps shipped with the library.
const std::vector<GridMap>& default_maps();

}  // namespace frlfi::gridworld
