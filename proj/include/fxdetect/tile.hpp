#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fxdetect/layers.hpp"
#include "fxdetect/model.hpp"

namespace fxdetect {

struct PlatformBudget {
    std::uint64_t on_chip_buffer_bytes = 0;
    std::uint64_t mac_units = 0;
    double clock_hz = 0;
    double dram_bandwidth_bytes_per_s = 0;
    std::uint64_t element_bytes = 2;

    bool valid() const {
        return on_chip_buffer_bytes > 0 && mac_units > 0 && clock_hz > 0 &&
               dram_bandwidth_bytes_per_s > 0 && element_bytes > 0;
    }
};

// Tiling of one conv layer's loop nest. Output-stationary: the output tile
// stays on chip across the whole input-channel sweep and is written exactly
// once.
struct TilePlan {
    int tm = 1, tn = 1, tr = 1, tc = 1;  // tile extents over M, N, R, C
    std::uint64_t element_bytes = 2;

    int trips_m = 0, trips_n = 0, trips_r = 0, trips_c = 0;
    std::uint64_t input_buffer_bytes = 0;
    std::uint64_t weight_buffer_bytes = 0;
    std::uint64_t output_buffer_bytes = 0;

    std::uint64_t footprint_bytes() const {
        return input_buffer_bytes + weight_buffer_bytes + output_buffer_bytes;
    }
};

struct RooflineEstimate {
    double computational_roof = 0;  // ops/s
    double ctc_ratio = 0;           // ops per byte of external traffic
    double bandwidth_bound = 0;     // ops/s
    double attainable = 0;          // min(roof, bandwidth_bound)
};

struct TrafficEvent {
    enum class Kind { InputFetch, WeightFetch, OutputWrite };
    Kind kind;
    std::uint64_t bytes;
    int rt, ct, mt, nt;  // tile coordinate issuing the transfer (nt = -1 for writes)
};

struct TrafficLog {
    std::uint64_t input_bytes = 0;
    std::uint64_t weight_bytes = 0;
    std::uint64_t output_bytes = 0;
    std::vector<TrafficEvent> events;

    std::uint64_t total_bytes() const { return input_bytes + weight_bytes + output_bytes; }
};

// 2*M*N*K^2*R*C, counting multiply and add separately.
std::uint64_t layer_ops(const LayerSpec& spec, const Shape& input_shape);

// Builds the plan for given tile factors, computing trips and buffer
// footprints (input halo (S*Tr+K-S) x (S*Tc+K-S)). Throws on invalid factors.
TilePlan make_tile_plan(const LayerSpec& spec, const Shape& input_shape, int tm, int tn, int tr,
                        int tc, std::uint64_t element_bytes);

bool plan_fits(const TilePlan& plan, const PlatformBudget& platform);

// Conservative per-iteration traffic model: every (rt, ct, mt, nt) iteration
// fetches a full weight tile and a full input tile; every (rt, ct, mt)
// writes a full output tile once. Edge tiles are counted at full size.
TrafficLog estimate_traffic(const LayerSpec& spec, const Shape& input_shape, const TilePlan& plan);

double ctc_ratio(const LayerSpec& spec, const Shape& input_shape, const TilePlan& plan);

RooflineEstimate attainable_performance(const LayerSpec& spec, const Shape& input_shape,
                                        const TilePlan& plan, const PlatformBudget& platform);

// Exhaustive search over divisor-aligned tile factors, filtered by buffer and
// MAC constraints, maximizing attainable performance. Ties prefer higher CTC,
// then smaller footprint, then lexicographically smallest (Tm, Tn, Tr, Tc).
struct PlanChoice {
    TilePlan plan;
    RooflineEstimate roofline;
};
PlanChoice select_best_plan(const LayerSpec& spec, const Shape& input_shape,
                            const PlatformBudget& platform);

// After blocking, an element is reused every ceil(n / block) iterations.
std::uint64_t reuse_distance(std::uint64_t loop_extent, std::uint64_t block);

// Fixed-capacity on-chip scratchpad. fetch() always performs (and logs) the
// transfer; fetch_if_absent() skips it when the requested tag is already
// resident, so a schedule that asks twice for the same tile pays once.
class OnChipBuffer {
public:
    OnChipBuffer(std::string name, std::uint64_t capacity_bytes)
        : name_(std::move(name)), capacity_(capacity_bytes) {}

    void fetch(std::int64_t tag, std::uint64_t bytes, TrafficLog& log, TrafficEvent ev);
    void fetch_if_absent(std::int64_t tag, std::uint64_t bytes, TrafficLog& log, TrafficEvent ev);
    bool resident(std::int64_t tag) const { return tag == resident_tag_; }
    std::uint64_t capacity() const { return capacity_; }

private:
    std::string name_;
    std::uint64_t capacity_ = 0;
    std::int64_t resident_tag_ = -1;
};

// Executes the tiled loop nest with explicit on-chip buffers, logging every
// external transfer. Output equals conv2d bit-for-bit in fixed mode and
// exactly in real mode (per-element summation order preserved: input channel,
// then kernel row, then kernel column); TrafficLog totals equal
// estimate_traffic.
struct TiledConvResult {
    Tensor output;
    TrafficLog traffic;
};
TiledConvResult simulate_tiled_conv(const LayerSpec& spec, const TilePlan& plan,
                                    const Tensor& input, const Tensor& weights,
                                    const Tensor& bias);

// select_best_plan per conv layer; latency assumes layers run sequentially at
// their attainable rate. Conv compute and traffic only.
struct LayerPlanReport {
    std::string layer_name;
    Shape input_shape;
    LayerSpec spec;
    TilePlan plan;
    RooflineEstimate roofline;
    std::uint64_t ops = 0;
    std::uint64_t traffic_bytes = 0;
    double seconds = 0;
};
struct ModelPlan {
    std::vector<LayerPlanReport> layers;
    double total_seconds = 0;
    std::uint64_t total_ops = 0;
};
ModelPlan plan_model(const ModelManifest& model, const PlatformBudget& platform);

// Key-value text file: on_chip_buffer_bytes, mac_units, clock_hz,
// dram_bandwidth_bytes_per_s, element_bytes.
PlatformBudget read_platform_file(const std::filesystem::path& path);

}  // namespace fxdetect
