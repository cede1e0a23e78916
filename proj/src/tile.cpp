#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fxdetect/tile.hpp"

namespace fxdetect {

namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

void require_conv(const LayerSpec& spec, const char* who) {
    if (spec.kind != LayerKind::Conv) {
        throw std::invalid_argument(std::string(who) + ": layer '" + spec.name + "' is not conv");
    }
}

std::vector<int> divisors_of(int n) {
    std::vector<int> out;
    for (int d = 1; d <= n; ++d) {
        if (n % d == 0) out.push_back(d);
    }
    return out;
}

}  // namespace

std::uint64_t layer_ops(const LayerSpec& spec, const Shape& input_shape) {
    require_conv(spec, "layer_ops");
    const Shape out = conv_output_shape(input_shape, spec);
    return 2ull * spec.out_channels * spec.in_channels * spec.kernel * spec.kernel * out.h *
           out.w;
}

TilePlan make_tile_plan(const LayerSpec& spec, const Shape& input_shape, int tm, int tn, int tr,
                        int tc, std::uint64_t element_bytes) {
    require_conv(spec, "make_tile_plan");
    const Shape out = conv_output_shape(input_shape, spec);
    const int M = spec.out_channels, N = spec.in_channels, R = out.h, C = out.w;
    if (tm < 1 || tm > M || tn < 1 || tn > N || tr < 1 || tr > R || tc < 1 || tc > C) {
        throw std::invalid_argument("make_tile_plan: tile factors out of range for layer '" +
                                    spec.name + "'");
    }
    TilePlan plan;
    plan.tm = tm;
    plan.tn = tn;
    plan.tr = tr;
    plan.tc = tc;
    plan.element_bytes = element_bytes;
    plan.trips_m = static_cast<int>(ceil_div(M, tm));
    plan.trips_n = static_cast<int>(ceil_div(N, tn));
    plan.trips_r = static_cast<int>(ceil_div(R, tr));
    plan.trips_c = static_cast<int>(ceil_div(C, tc));
    const int K = spec.kernel, S = spec.stride;
    const std::uint64_t in_h = static_cast<std::uint64_t>(S) * tr + K - S;
    const std::uint64_t in_w = static_cast<std::uint64_t>(S) * tc + K - S;
    plan.input_buffer_bytes = tn * in_h * in_w * element_bytes;
    plan.weight_buffer_bytes = static_cast<std::uint64_t>(tm) * tn * K * K * element_bytes;
    plan.output_buffer_bytes = static_cast<std::uint64_t>(tm) * tr * tc * element_bytes;
    return plan;
}

bool plan_fits(const TilePlan& plan, const PlatformBudget& platform) {
    return plan.footprint_bytes() <= platform.on_chip_buffer_bytes &&
           static_cast<std::uint64_t>(plan.tm) * plan.tn <= platform.mac_units;
}

TrafficLog estimate_traffic(const LayerSpec& spec, const Shape& input_shape,
                            const TilePlan& plan) {
    require_conv(spec, "estimate_traffic");
    const Shape out = conv_output_shape(input_shape, spec);
    if (plan.trips_m != static_cast<int>(ceil_div(spec.out_channels, plan.tm)) ||
        plan.trips_n != static_cast<int>(ceil_div(spec.in_channels, plan.tn)) ||
        plan.trips_r != static_cast<int>(ceil_div(out.h, plan.tr)) ||
        plan.trips_c != static_cast<int>(ceil_div(out.w, plan.tc))) {
        throw std::invalid_argument("estimate_traffic: plan trips inconsistent with layer '" +
                                    spec.name + "'");
    }
    const std::uint64_t trips_out = static_cast<std::uint64_t>(plan.trips_r) * plan.trips_c *
                                    plan.trips_m;
    const std::uint64_t trips_all = trips_out * plan.trips_n;
    TrafficLog log;
    log.weight_bytes = trips_all * plan.weight_buffer_bytes;
    log.input_bytes = trips_all * plan.input_buffer_bytes;
    log.output_bytes = trips_out * plan.output_buffer_bytes;
    return log;
}

double ctc_ratio(const LayerSpec& spec, const Shape& input_shape, const TilePlan& plan) {
    const TrafficLog log = estimate_traffic(spec, input_shape, plan);
    return static_cast<double>(layer_ops(spec, input_shape)) /
           static_cast<double>(log.total_bytes());
}

RooflineEstimate attainable_performance(const LayerSpec& spec, const Shape& input_shape,
                                        const TilePlan& plan, const PlatformBudget& platform) {
    RooflineEstimate est;
    const std::uint64_t active_macs =
        std::min<std::uint64_t>(static_cast<std::uint64_t>(plan.tm) * plan.tn, platform.mac_units);
    est.computational_roof = 2.0 * static_cast<double>(active_macs) * platform.clock_hz;
    est.ctc_ratio = ctc_ratio(spec, input_shape, plan);
    est.bandwidth_bound = platform.dram_bandwidth_bytes_per_s * est.ctc_ratio;
    est.attainable = std::min(est.computational_roof, est.bandwidth_bound);
    return est;
}

PlanChoice select_best_plan(const LayerSpec& spec, const Shape& input_shape,
                            const PlatformBudget& platform) {
    require_conv(spec, "select_best_plan");
    if (!platform.valid()) throw std::invalid_argument("select_best_plan: bad platform budget");
    const Shape out = conv_output_shape(input_shape, spec);

    const TilePlan minimal =
        make_tile_plan(spec, input_shape, 1, 1, 1, 1, platform.element_bytes);
    if (!plan_fits(minimal, platform)) {
        throw std::runtime_error("select_best_plan: no feasible plan for layer '" + spec.name +
                                 "': minimal 1x1x1x1 tile needs " +
                                 std::to_string(minimal.footprint_bytes()) +
                                 " buffer bytes, budget is " +
                                 std::to_string(platform.on_chip_buffer_bytes));
    }

    bool have = false;
    PlanChoice best;
    const auto better = [&](const TilePlan& plan, const RooflineEstimate& est) {
        if (!have) return true;
        if (est.attainable != best.roofline.attainable) {
            return est.attainable > best.roofline.attainable;
        }
        if (est.ctc_ratio != best.roofline.ctc_ratio) return est.ctc_ratio > best.roofline.ctc_ratio;
        if (plan.footprint_bytes() != best.plan.footprint_bytes()) {
            return plan.footprint_bytes() < best.plan.footprint_bytes();
        }
        const auto key = std::array{plan.tm, plan.tn, plan.tr, plan.tc};
        const auto best_key = std::array{best.plan.tm, best.plan.tn, best.plan.tr, best.plan.tc};
        return key < best_key;
    };

    for (int tm : divisors_of(spec.out_channels))
    for (int tn : divisors_of(spec.in_channels))
    for (int tr : divisors_of(out.h))
    for (int tc : divisors_of(out.w)) {
        const TilePlan plan =
            make_tile_plan(spec, input_shape, tm, tn, tr, tc, platform.element_bytes);
        if (!plan_fits(plan, platform)) continue;
        const RooflineEstimate est = attainable_performance(spec, input_shape, plan, platform);
        if (better(plan, est)) {
            best = PlanChoice{plan, est};
            have = true;
        }
    }
    return best;
}

std::uint64_t reuse_distance(std::uint64_t loop_extent, std::uint64_t block) {
    if (block == 0) throw std::invalid_argument("reuse_distance: block size must be positive");
    return ceil_div(loop_extent, block);
}

void OnChipBuffer::fetch(std::int64_t tag, std::uint64_t bytes, TrafficLog& log, TrafficEvent ev) {
    if (bytes > capacity_) {
        throw std::logic_error("on-chip buffer '" + name_ + "' overflow: fetch of " +
                               std::to_string(bytes) + " bytes exceeds capacity " +
                               std::to_string(capacity_));
    }
    resident_tag_ = tag;
    ev.bytes = bytes;
    switch (ev.kind) {
        case TrafficEvent::Kind::InputFetch: log.input_bytes += bytes; break;
        case TrafficEvent::Kind::WeightFetch: log.weight_bytes += bytes; break;
        case TrafficEvent::Kind::OutputWrite: log.output_bytes += bytes; break;
    }
    log.events.push_back(ev);
}

void OnChipBuffer::fetch_if_absent(std::int64_t tag, std::uint64_t bytes, TrafficLog& log,
                                   TrafficEvent ev) {
    if (resident(tag)) return;
    fetch(tag, bytes, log, ev);
}

namespace {

struct TileRange {
    int begin, end;  // global index range covered by this tile
    int len() const { return end - begin; }
};

TileRange tile_range(int trip, int tile, int extent) {
    const int b = trip * tile;
    return TileRange{b, std::min(b + tile, extent)};
}

}  // namespace

TiledConvResult simulate_tiled_conv(const LayerSpec& spec, const TilePlan& plan,
                                    const Tensor& input, const Tensor& weights,
                                    const Tensor& bias) {
    require_conv(spec, "simulate_tiled_conv");
    if (input.shape.n != 1) {
        throw std::invalid_argument("simulate_tiled_conv: batch must be 1");
    }
    const Shape out_shape = conv_output_shape(input.shape, spec);
    const int M = spec.out_channels, N = spec.in_channels, K = spec.kernel;
    const int S = spec.stride, P = spec.pad;
    const int H = input.shape.h, W = input.shape.w;
    const int R = out_shape.h, C = out_shape.w;
    if (plan.tm > M || plan.tn > N || plan.tr > R || plan.tc > C) {
        throw std::invalid_argument("simulate_tiled_conv: plan does not fit layer '" + spec.name +
                                    "'");
    }
    const bool fixed = input.kind == NumericKind::Fixed;
    const int in_th = S * plan.tr + K - S;  // input tile halo extents
    const int in_tw = S * plan.tc + K - S;

    TiledConvResult result;
    result.output = fixed ? Tensor::fixed(out_shape, *spec.q_out) : Tensor::real(out_shape);

    // required tile sizes, recomputed here so an understated plan footprint
    // trips the buffer capacity check
    const std::uint64_t e = plan.element_bytes;
    const std::uint64_t input_tile_bytes = static_cast<std::uint64_t>(plan.tn) * in_th * in_tw * e;
    const std::uint64_t weight_tile_bytes =
        static_cast<std::uint64_t>(plan.tm) * plan.tn * K * K * e;
    const std::uint64_t output_tile_bytes =
        static_cast<std::uint64_t>(plan.tm) * plan.tr * plan.tc * e;

    OnChipBuffer input_buf("input", plan.input_buffer_bytes);
    OnChipBuffer weight_buf("weight", plan.weight_buffer_bytes);
    OnChipBuffer output_buf("output", plan.output_buffer_bytes);

    // on-chip storage; zero-filled slots stand in for padding and edge tiles
    std::vector<double> in_tile_r, w_tile_r;
    std::vector<std::int64_t> acc_tile;
    std::vector<std::int32_t> in_tile_x, w_tile_x;
    std::vector<double> acc_tile_r;
    if (fixed) {
        in_tile_x.resize(static_cast<std::size_t>(plan.tn) * in_th * in_tw);
        w_tile_x.resize(static_cast<std::size_t>(plan.tm) * plan.tn * K * K);
        acc_tile.resize(static_cast<std::size_t>(plan.tm) * plan.tr * plan.tc);
    } else {
        in_tile_r.resize(static_cast<std::size_t>(plan.tn) * in_th * in_tw);
        w_tile_r.resize(static_cast<std::size_t>(plan.tm) * plan.tn * K * K);
        acc_tile_r.resize(static_cast<std::size_t>(plan.tm) * plan.tr * plan.tc);
    }
    const int acc_shift =
        fixed ? spec.q_in->frac_bits + spec.q_weight->frac_bits - bias.qf.frac_bits : 0;

    for (int rt = 0; rt < plan.trips_r; ++rt)
    for (int ct = 0; ct < plan.trips_c; ++ct)
    for (int mt = 0; mt < plan.trips_m; ++mt) {
        const TileRange mr = tile_range(mt, plan.tm, M);
        const TileRange rr = tile_range(rt, plan.tr, R);
        const TileRange cr = tile_range(ct, plan.tc, C);

        // output tile becomes resident and accumulates across the whole nt sweep
        for (int lm = 0; lm < mr.len(); ++lm) {
            for (int lr = 0; lr < rr.len(); ++lr)
            for (int lc = 0; lc < cr.len(); ++lc) {
                const std::size_t idx =
                    (static_cast<std::size_t>(lm) * plan.tr + lr) * plan.tc + lc;
                if (fixed) {
                    acc_tile[idx] = static_cast<std::int64_t>(bias.raw[mr.begin + lm])
                                    << acc_shift;
                } else {
                    acc_tile_r[idx] = bias.vals[mr.begin + lm];
                }
            }
        }

        for (int nt = 0; nt < plan.trips_n; ++nt) {
            const TileRange nr = tile_range(nt, plan.tn, N);

            const std::int64_t w_tag = static_cast<std::int64_t>(mt) * plan.trips_n + nt;
            weight_buf.fetch(w_tag, weight_tile_bytes, result.traffic,
                             TrafficEvent{TrafficEvent::Kind::WeightFetch, 0, rt, ct, mt, nt});
            if (fixed) std::fill(w_tile_x.begin(), w_tile_x.end(), 0);
            else std::fill(w_tile_r.begin(), w_tile_r.end(), 0.0);
            for (int lm = 0; lm < mr.len(); ++lm)
            for (int ln = 0; ln < nr.len(); ++ln)
            for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) {
                const std::size_t idx =
                    ((static_cast<std::size_t>(lm) * plan.tn + ln) * K + i) * K + j;
                if (fixed) w_tile_x[idx] = weights.raw_at(mr.begin + lm, nr.begin + ln, i, j);
                else w_tile_r[idx] = weights.at(mr.begin + lm, nr.begin + ln, i, j);
            }

            const std::int64_t in_tag =
                (static_cast<std::int64_t>(rt) * plan.trips_c + ct) * plan.trips_n + nt;
            input_buf.fetch(in_tag, input_tile_bytes, result.traffic,
                            TrafficEvent{TrafficEvent::Kind::InputFetch, 0, rt, ct, mt, nt});
            const int y_base = rr.begin * S - P;
            const int x_base = cr.begin * S - P;
            if (fixed) std::fill(in_tile_x.begin(), in_tile_x.end(), 0);
            else std::fill(in_tile_r.begin(), in_tile_r.end(), 0.0);
            for (int ln = 0; ln < nr.len(); ++ln)
            for (int ly = 0; ly < in_th; ++ly)
            for (int lx = 0; lx < in_tw; ++lx) {
                const int y = y_base + ly;
                const int x = x_base + lx;
                if (y < 0 || y >= H || x < 0 || x >= W) continue;
                const std::size_t idx =
                    (static_cast<std::size_t>(ln) * in_th + ly) * in_tw + lx;
                if (fixed) in_tile_x[idx] = input.raw_at(0, nr.begin + ln, y, x);
                else in_tile_r[idx] = input.at(0, nr.begin + ln, y, x);
            }

            // MAC sweep; per output element the (n, i, j) order matches conv2d
            for (int lm = 0; lm < mr.len(); ++lm)
            for (int lr = 0; lr < rr.len(); ++lr)
            for (int lc = 0; lc < cr.len(); ++lc) {
                const std::size_t out_idx =
                    (static_cast<std::size_t>(lm) * plan.tr + lr) * plan.tc + lc;
                for (int ln = 0; ln < nr.len(); ++ln)
                for (int i = 0; i < K; ++i)
                for (int j = 0; j < K; ++j) {
                    const std::size_t w_idx =
                        ((static_cast<std::size_t>(lm) * plan.tn + ln) * K + i) * K + j;
                    const std::size_t in_idx =
                        (static_cast<std::size_t>(ln) * in_th + (S * lr + i)) * in_tw +
                        (S * lc + j);
                    if (fixed) {
                        acc_tile[out_idx] += static_cast<std::int64_t>(w_tile_x[w_idx]) *
                                             in_tile_x[in_idx];
                    } else {
                        acc_tile_r[out_idx] += w_tile_r[w_idx] * in_tile_r[in_idx];
                    }
                }
            }
        }

        output_buf.fetch(static_cast<std::int64_t>(rt) * plan.trips_c * plan.trips_m +
                             static_cast<std::int64_t>(ct) * plan.trips_m + mt,
                         output_tile_bytes, result.traffic,
                         TrafficEvent{TrafficEvent::Kind::OutputWrite, 0, rt, ct, mt, -1});
        for (int lm = 0; lm < mr.len(); ++lm)
        for (int lr = 0; lr < rr.len(); ++lr)
        for (int lc = 0; lc < cr.len(); ++lc) {
            const std::size_t idx = (static_cast<std::size_t>(lm) * plan.tr + lr) * plan.tc + lc;
            if (fixed) {
                result.output.raw_at(0, mr.begin + lm, rr.begin + lr, cr.begin + lc) =
                    requantize_accumulator(acc_tile[idx], *spec.q_in, *spec.q_weight,
                                           *spec.q_out);
            } else {
                result.output.at(0, mr.begin + lm, rr.begin + lr, cr.begin + lc) =
                    acc_tile_r[idx];
            }
        }
    }
    return result;
}

ModelPlan plan_model(const ModelManifest& model, const PlatformBudget& platform) {
    ModelPlan mp;
    Shape cur = model.input_shape;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        switch (spec.kind) {
            case LayerKind::Conv: {
                LayerPlanReport rep;
                rep.layer_name = spec.name;
                rep.input_shape = cur;
                rep.spec = spec;
                try {
                    const PlanChoice choice = select_best_plan(spec, cur, platform);
                    rep.plan = choice.plan;
                    rep.roofline = choice.roofline;
                } catch (const std::exception& e) {
                    throw std::runtime_error("plan_model: layer '" + spec.name + "': " + e.what());
                }
                rep.ops = layer_ops(spec, cur);
                rep.traffic_bytes = estimate_traffic(spec, cur, rep.plan).total_bytes();
                rep.seconds = static_cast<double>(rep.ops) / rep.roofline.attainable;
                mp.total_seconds += rep.seconds;
                mp.total_ops += rep.ops;
                mp.layers.push_back(std::move(rep));
                cur = conv_output_shape(cur, spec);
                break;
            }
            case LayerKind::MaxPool:
                cur.h = pool_out_dim(cur.h, spec.window, spec.stride);
                cur.w = pool_out_dim(cur.w, spec.window, spec.stride);
                break;
            case LayerKind::Relu:
            case LayerKind::Softmax:
            case LayerKind::HeadTap:
                break;
        }
    }
    return mp;
}

PlatformBudget read_platform_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open platform file: " + path.string());
    PlatformBudget p;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream in(line);
        std::string key;
        in >> key;
        const std::string ctx = path.string() + ":" + std::to_string(line_no);
        if (key == "on_chip_buffer_bytes") in >> p.on_chip_buffer_bytes;
        else if (key == "mac_units") in >> p.mac_units;
        else if (key == "clock_hz") in >> p.clock_hz;
        else if (key == "dram_bandwidth_bytes_per_s") in >> p.dram_bandwidth_bytes_per_s;
        else if (key == "element_bytes") in >> p.element_bytes;
        else throw std::runtime_error(ctx + ": unknown platform key '" + key + "'");
        if (!in) throw std::runtime_error(ctx + ": bad value for '" + key + "'");
    }
    if (!p.valid()) throw std::runtime_error(path.string() + ": incomplete platform description");
    return p;
}

}  // namespace fxdetect
