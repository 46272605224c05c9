#ifndef VC_ABLATION_HPP
#define VC_ABLATION_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "vc/metrics.hpp"
#include "vc/video.hpp"

namespace vc {

// Side-by-side evaluation of trained variants. Every row samples the same
// prompts from the same noise streams, so differences between rows come
// from the checkpoints and the condition menu, not from the draw.

struct SeedCheckpoint {
    uint64_t seed = 0;  // training seed, recorded in the report row
    std::string path;   // archive holding that seed's trained variant
};

// One report row: a variant evaluated under a fixed condition menu. Text
// always rides along; the listed kinds are extracted from each reference
// clip the same way training extracts them.
struct AblationRow {
    std::string name;
    std::vector<SeedCheckpoint> checkpoints;
    std::vector<Cond> conditions;
};

struct AblationConfig {
    std::string eval_root;  // corpus directory with manifest.jsonl
    int prompts = 32;       // evaluation clips, taken from the front
    int steps = 25;         // DDIM steps per video
    double guidance = 3.0;  // omega; 0 keeps the unconditional branch
    uint64_t seed = 1;      // base of the shared noise streams
    int resamples = 1000;   // bootstrap resamples behind the intervals
    double coverage = 0.9;
};

// Generates one video per (checkpoint, prompt), scores frame consistency
// and end point error against the reference flow, and aggregates bootstrap
// intervals over the pooled values. A row that cannot run (bad checkpoint,
// mismatched geometry) reports the error in its slot; the rest still run.
EvalReport run_ablation(const std::vector<AblationRow>& rows, const AblationConfig& cfg);

} // namespace vc

#endif
