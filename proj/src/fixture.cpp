#include <algorithm>
#include <cstdio>
#include <fstream>

#include "fxdetect/fixture.hpp"
#include "fxdetect/image.hpp"

namespace fxdetect {

namespace {

constexpr int kImageSize = 128;
constexpr int kGrid = 16;       // 16x16 cells of 8x8 pixels
constexpr int kCell = 8;
constexpr double kBackground = 0.12;
constexpr double kNoise = 0.04;

// head score weights; the pedestrian logit is
//   4 * (block mean) + 4 * (center 4x4 mean) - 7
constexpr double kGainMean = 4.0;
constexpr double kGainBeacon = 4.0;
constexpr double kPedBias = -7.0;

struct Rect {
    int x1, y1, x2, y2;  // half-open pixel extents
};

void paint(Tensor& img, const Rect& r, double v) {
    for (int y = std::max(0, r.y1); y < std::min(kImageSize, r.y2); ++y)
    for (int x = std::max(0, r.x1); x < std::min(kImageSize, r.x2); ++x) {
        img.at(0, 0, y, x) = v;
    }
}

}  // namespace

ModelManifest make_fixture_model() {
    ModelManifest model;
    model.mode = Mode::Real;
    model.input_shape = Shape{1, 1, kImageSize, kImageSize};

    // conv1: 8x8 non-overlapping block statistics
    //   ch0 block mean, ch1 vertical gradient, ch2 horizontal gradient,
    //   ch3 center 4x4 mean (the beacon detector)
    LayerSpec conv1;
    conv1.kind = LayerKind::Conv;
    conv1.name = "conv1";
    conv1.out_channels = 4;
    conv1.in_channels = 1;
    conv1.kernel = kCell;
    conv1.stride = kCell;
    conv1.pad = 0;
    Tensor w1 = Tensor::real(Shape{4, 1, kCell, kCell});
    for (int i = 0; i < kCell; ++i)
    for (int j = 0; j < kCell; ++j) {
        w1.at(0, 0, i, j) = 1.0 / 64.0;
        w1.at(1, 0, i, j) = (i < 4 ? 6.0 : -6.0) / 32.0;
        w1.at(2, 0, i, j) = (j < 4 ? 6.0 : -6.0) / 32.0;
        w1.at(3, 0, i, j) = (i >= 2 && i < 6 && j >= 2 && j < 6) ? 1.0 / 16.0 : 0.0;
    }
    Tensor b1 = Tensor::real(Shape{1, 4, 1, 1});

    LayerSpec relu1;
    relu1.kind = LayerKind::Relu;
    relu1.name = "relu1";

    // conv2: detection head, 6 channels = tx ty tw th bg ped for one prior group
    LayerSpec conv2;
    conv2.kind = LayerKind::Conv;
    conv2.name = "head";
    conv2.out_channels = 6;
    conv2.in_channels = 4;
    conv2.kernel = 3;
    conv2.stride = 1;
    conv2.pad = 1;
    conv2.tap = "head0";
    Tensor w2 = Tensor::real(Shape{6, 4, 3, 3});
    w2.at(5, 0, 1, 1) = kGainMean;    // block mean of the cell itself
    w2.at(5, 3, 1, 1) = kGainBeacon;  // beacon response of the cell itself
    Tensor b2 = Tensor::real(Shape{1, 6, 1, 1});
    b2.vals[0] = 0.30;   // tx
    b2.vals[1] = 0.10;   // ty
    b2.vals[2] = 0.20;   // tw
    b2.vals[3] = -0.10;  // th
    b2.vals[4] = 0.0;    // background logit
    b2.vals[5] = kPedBias;

    model.layers = {conv1, relu1, conv2};
    model.weights = {w1, Tensor{}, w2};
    model.biases = {b1, Tensor{}, b2};

    model.priors.image_w = kImageSize;
    model.priors.image_h = kImageSize;
    model.priors.var_center = 0.1;
    model.priors.var_size = 0.2;
    TapPriorSpec tap;
    tap.tap = "head0";
    tap.fh = kGrid;
    tap.fw = kGrid;
    tap.scales = {0.25};
    tap.aspect_ratios = {0.41};
    model.priors.taps = {tap};
    return model;
}

FixtureScene make_fixture_scene(std::mt19937_64& rng, const std::string& image_id) {
    std::uniform_real_distribution<double> noise(-kNoise, kNoise);
    std::uniform_real_distribution<double> ped_v(0.55, 0.95);
    std::uniform_real_distribution<double> confuser_v(0.80, 0.92);
    std::uniform_real_distribution<double> people_v(0.20, 0.35);
    std::uniform_real_distribution<double> occl_frac(0.40, 0.60);

    FixtureScene scene;
    scene.image = Tensor::real(Shape{1, 1, kImageSize, kImageSize});
    paint(scene.image, Rect{0, 0, kImageSize, kImageSize}, kBackground);

    // object slots on distinct grid columns so planted rectangles never touch
    std::vector<int> cols = {2, 5, 8, 11, 14};
    std::shuffle(cols.begin(), cols.end(), rng);
    const std::vector<int> rows = {3, 8, 12};
    const int n_obj = 3 + static_cast<int>(rng() % 3);

    for (int k = 0; k < n_obj; ++k) {
        const int j = cols[k];
        const int i = rows[rng() % rows.size()];
        const int cx = kCell * j + 4;  // cell center in pixels
        const int cy = kCell * i + 4;

        // first two slots are always clean pedestrians
        const int roll = k < 2 ? 0 : static_cast<int>(rng() % 100);

        if (roll < 50) {  // pedestrian: 21x50 body + beacon
            const double v = ped_v(rng);
            paint(scene.image, Rect{cx - 10, cy - 25, cx + 11, cy + 25}, v);
            paint(scene.image, Rect{cx - 2, cy - 2, cx + 2, cy + 2}, 1.0);
            scene.annotations.push_back(GroundTruthBox{
                image_id, "person", double(cx - 10), double(cy - 25), double(cx + 11),
                double(cy + 25), 0.0});
        } else if (roll < 75) {  // confuser: bright 12x12 square, no annotation
            const double v = confuser_v(rng);
            paint(scene.image, Rect{cx - 6, cy - 6, cx + 6, cy + 6}, v);
        } else if (roll < 85) {  // unclear pedestrian, becomes an ignore region
            const double v = ped_v(rng);
            paint(scene.image, Rect{cx - 10, cy - 25, cx + 11, cy + 25}, v);
            paint(scene.image, Rect{cx - 2, cy - 2, cx + 2, cy + 2}, 1.0);
            scene.annotations.push_back(GroundTruthBox{
                image_id, "person?", double(cx - 10), double(cy - 25), double(cx + 11),
                double(cy + 25), 0.0});
        } else if (roll < 95) {  // occluded pedestrian: lower part darkened
            const double v = ped_v(rng);
            const double o = occl_frac(rng);
            paint(scene.image, Rect{cx - 10, cy - 25, cx + 11, cy + 25}, v);
            paint(scene.image, Rect{cx - 2, cy - 2, cx + 2, cy + 2}, 1.0);
            const int occluded_rows = static_cast<int>(50 * o);
            paint(scene.image, Rect{cx - 10, cy + 25 - occluded_rows, cx + 11, cy + 25}, 0.15);
            scene.annotations.push_back(GroundTruthBox{
                image_id, "person", double(cx - 10), double(cy - 25), double(cx + 11),
                double(cy + 25), o});
        } else {  // group of people
            const double v = people_v(rng);
            paint(scene.image, Rect{cx - 12, cy - 28, cx + 12, cy + 28}, v);
            scene.annotations.push_back(GroundTruthBox{
                image_id, "people", double(cx - 12), double(cy - 28), double(cx + 12),
                double(cy + 28), 0.0});
        }
    }

    for (double& v : scene.image.vals) v = std::clamp(v + noise(rng), 0.0, 1.0);
    return scene;
}

FixtureLayout generate_fixture(const std::filesystem::path& out_dir, const FixtureOptions& opt) {
    FixtureLayout layout;
    layout.image_dir = out_dir / "images";
    layout.calib_dir = out_dir / "calib";
    std::filesystem::create_directories(layout.image_dir);
    std::filesystem::create_directories(layout.calib_dir);

    layout.model_manifest = out_dir / "model.fxm";
    save_model(make_fixture_model(), layout.model_manifest);

    std::mt19937_64 rng(opt.seed);
    std::vector<GroundTruthBox> all_annotations;
    char name[32];
    for (int k = 0; k < opt.eval_images; ++k) {
        std::snprintf(name, sizeof(name), "img_%04d", k);
        const FixtureScene scene = make_fixture_scene(rng, name);
        const auto path = layout.image_dir / (std::string(name) + ".pgm");
        write_pgm(path, scene.image);
        layout.eval_images.push_back(path);
        all_annotations.insert(all_annotations.end(), scene.annotations.begin(),
                               scene.annotations.end());
    }
    layout.annotations = out_dir / "annotations.txt";
    write_annotation_file(layout.annotations, all_annotations);

    for (int k = 0; k < opt.calib_images; ++k) {
        std::snprintf(name, sizeof(name), "cal_%04d", k);
        const FixtureScene scene = make_fixture_scene(rng, name);
        const auto path = layout.calib_dir / (std::string(name) + ".pgm");
        write_pgm(path, scene.image);
        layout.calib_images.push_back(path);
    }

    layout.platform = out_dir / "platform.txt";
    {
        const auto tmp = out_dir / "platform.txt.tmp";
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write platform file: " + tmp.string());
        f << "# editable example budget, not silicon ground truth\n"
          << "on_chip_buffer_bytes 4194304\n"
          << "mac_units 1024\n"
          << "clock_hz 200000000\n"
          << "dram_bandwidth_bytes_per_s 8589934592\n"
          << "element_bytes 2\n";
        f.close();
        std::filesystem::rename(tmp, layout.platform);
    }
    return layout;
}

}  // namespace fxdetect
