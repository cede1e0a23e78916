#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fxdetect/eval.hpp"
#include "fxdetect/model.hpp"

namespace fxdetect {

// Hand-constructed two-conv detector over 128x128 grayscale images with a
// 16x16 detection grid. Pedestrians are planted as 21x50 bright rectangles
// whose center cell carries a full-intensity 4x4 beacon; the head scores a
// cell by its 8x8 block mean plus its center-4x4 mean, so the beacon cell
// outscores its neighbors and NMS provably keeps one detection per rectangle.
// Beacon-less bright squares ("confusers") score inside the pedestrian score
// band and supply false positives for a graded miss-rate curve.
struct FixtureOptions {
    std::uint64_t seed = 42;
    int eval_images = 60;
    int calib_images = 100;
};

ModelManifest make_fixture_model();

struct FixtureScene {
    Tensor image;
    std::vector<GroundTruthBox> annotations;
};

FixtureScene make_fixture_scene(std::mt19937_64& rng, const std::string& image_id);

struct FixtureLayout {
    std::filesystem::path model_manifest;
    std::filesystem::path annotations;
    std::filesystem::path image_dir;
    std::filesystem::path calib_dir;
    std::filesystem::path platform;
    std::vector<std::filesystem::path> eval_images;
    std::vector<std::filesystem::path> calib_images;
};

// Writes model + blobs, eval images with annotations, calibration images, and
// an example platform description under out_dir.
FixtureLayout generate_fixture(const std::filesystem::path& out_dir, const FixtureOptions& opt);

}  // namespace fxdetect
