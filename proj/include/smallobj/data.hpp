#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "smallobj/metrics.hpp"
#include "smallobj/tensor.hpp"

namespace smallobj {

struct ImageInfo {
    int id = 0;
    int width = 0;
    int height = 0;
    std::string file_name;
};

struct AnnRecord {
    int id = 0;
    int image_id = 0;
    int category_id = 0;
    std::array<double, 4> bbox{};  // x, y, w, h
    double area = 0.0;
};

struct AnnotationSet {
    std::vector<ImageInfo> images;
    std::vector<Category> categories;
    std::vector<AnnRecord> annotations;

    // Duplicate ids, dangling references, negative sizes -> std::runtime_error
    // naming the offending id.
    void validate() const;
};

AnnotationSet load_annotations(const std::string& path);
void save_annotations(const AnnotationSet& set, const std::string& path);

std::vector<GroundTruth> to_ground_truth(const AnnotationSet& set);

// COCO results format: [{image_id, category_id, bbox:[x,y,w,h], score}].
void save_detections(const std::vector<ImageDetection>& dets, const std::string& path);
std::vector<ImageDetection> load_detections(const std::string& path);

struct SceneSpec {
    std::uint64_t seed = 0;
    int image_size = 640;
    int min_objects = 1;
    int max_objects = 4;
    std::array<double, 3> size_weights{0.6, 0.3, 0.1};  // small, medium, large
    double occlusion_rate = 0.0;
    int num_classes = 4;

    void validate() const;  // throws std::invalid_argument
};

struct Scene {
    Tensor image;  // 3 x S x S, values in [0,1]
    std::vector<GroundTruth> gts;
};

// Pure function of (spec, index): filled rectangles/ellipses on a textured
// background. GT boxes are the exact placement boxes; category ids are
// 1-based. With occlusion rate q, objects after the first are drawn (with
// probability q) as same-class companions overlapping a previously placed
// object no smaller than themselves, at IoU in [0.4, 0.8]; all other
// placements keep pairwise IoU below 0.4.
Scene generate_scene(const SceneSpec& spec, int index);

enum class ImageFormat { Png, RawTensor };

std::string image_file_name(int image_id, ImageFormat format);

// Generates n scenes with image ids 1..n, streaming each image to `sink`
// (which may be empty) and returning the assembled annotation metadata.
AnnotationSet generate_dataset(
    const SceneSpec& spec, int n,
    const std::function<void(int image_id, const Tensor& image,
                             const std::string& file_name)>& sink,
    ImageFormat format = ImageFormat::Png);

// Nearest-neighbor resize of the longer side to out_size, zero padding on
// the right/bottom. `scale` maps original -> resized coordinates.
struct Resized {
    Tensor image;
    double scale = 1.0;
    int orig_width = 0;
    int orig_height = 0;
};

Resized resize_to_square(const Tensor& image, int out_size);

}  // namespace smallobj
