#pragma once

#include "qera/calibration.hpp"
#include "qera/quantizer.hpp"

#include <string>
#include <vector>

namespace qera {
namespace selftest {

struct CheckResult {
    bool passed = true;
    std::string detail;  // failure description or summary counts
};

/// Seeded random layer instance: Gaussian weight, MXINT(3,32), rank in
/// [1,8], SPD population rxx with outlier directions and channel scale
/// spread (activation-like), exact (eps = 0) stats.
struct LayerInstance {
    Matrix w;
    QuantSpec spec;
    Index rank = 1;
    CalibStats stats;
};

LayerInstance make_layer_instance(uint64_t seed);

CheckResult check_svd_factorization();
CheckResult check_eckart_young();
CheckResult check_sqrt_roundtrip(bool corrupt = false);
CheckResult check_quantizer_idempotence();
CheckResult check_exact_method_dominance();     // acceptance criterion 1
CheckResult check_tail_energy_identity();   // acceptance criterion 2
CheckResult check_objective_equivalence();  // acceptance criterion 3
CheckResult check_reduction_chain();        // acceptance criterion 4

struct Summary {
    struct Family {
        std::string name;
        CheckResult result;
        double seconds = 0.0;
    };
    std::vector<Family> families;
    double total_seconds = 0.0;

    bool all_passed() const;
};

/// Runs every property family at small sizes. `corrupt_family` is a test
/// hook: naming a family ("spsd_sqrt") injects an error so the harness
/// provably detects failures.
Summary run_selftest(const std::string& corrupt_family = "");

}  // namespace selftest
}  // namespace qera
