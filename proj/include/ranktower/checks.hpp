#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ranktower::checks {

struct GradRow {
    std::string name;
    std::size_t seeds = 0;
    double max_rel_error = 0.0;
    bool pass = false;
};

// Central-difference agreement of every op, loss and model block over `seeds` random
// instances each (dimensions <= 8).
std::vector<GradRow> gradient_suite(std::size_t seeds = 20, double tolerance = 1e-4);

struct PinRow {
    std::string name;
    double value = 0.0;
    double expected = 0.0;
    bool pass = false;
};

// Hand-computed loss and metric instances.
std::vector<PinRow> loss_pins(double tolerance = 1e-9);

std::string format_grad_table(const std::vector<GradRow>& rows);
std::string format_pin_table(const std::vector<PinRow>& rows);

} // namespace ranktower::checks
