#pragma once

#include <cstdint>
#include <vector>

#include "crl/tensor.hpp"

namespace crl {

enum class Action : int { Up = 0, Down = 1, Left = 2, Right = 3, Stay = 4 };
constexpr int kNumActions = 5;

struct Pos {
    int r = -1;
    int c = -1;
    bool operator==(const Pos&) const = default;
};

inline int manhattan(Pos a, Pos b) { return std::abs(a.r - b.r) + std::abs(a.c - b.c); }

inline Pos moved(Pos p, Action a) {
    switch (a) {
        case Action::Up: return {p.r - 1, p.c};
        case Action::Down: return {p.r + 1, p.c};
        case Action::Left: return {p.r, p.c - 1};
        case Action::Right: return {p.r, p.c + 1};
        case Action::Stay: return p;
    }
    return p;
}

// Directions in the fixed tie-break order Up < Down < Left < Right.
constexpr Action kMoveOrder[4] = {Action::Up, Action::Down, Action::Left, Action::Right};

struct Entity {
    int id = 0;
    std::vector<int> words;  // fixed length (words_per_cell), pad id 0
    Pos pos;
    bool on_board = true;
};

// Grid snapshot handed to the encoder/policy. The grid content is derived
// from the entity roster; off-board entities stay in the roster so concepts
// can be computed for the whole episode cast.
struct WorldObservation {
    int height = 0;
    int width = 0;
    int words_per_cell = 0;
    Pos agent;
    std::vector<Entity> entities;
    int carried = -1;           // roster index of the carried entity, -1 if none
    bool message_held = false;

    int entity_at(Pos p) const {
        for (std::size_t i = 0; i < entities.size(); ++i)
            if (entities[i].on_board && entities[i].pos == p) return static_cast<int>(i);
        return -1;
    }
};

struct StepResult {
    double reward = 0.0;
    bool done = false;
    bool truncated = false;
    bool win = false;  // the +1 success terminal (win-rate numerator)
};

}  // namespace crl
