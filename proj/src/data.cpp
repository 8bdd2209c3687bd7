#include "smallobj/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

#include "smallobj/box.hpp"
#include "smallobj/rng.hpp"

namespace smallobj {

namespace {

using nlohmann::json;

json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
    }
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

void AnnotationSet::validate() const {
    std::set<int> image_ids, category_ids, ann_ids;
    for (const ImageInfo& im : images) {
        if (!image_ids.insert(im.id).second)
            throw std::runtime_error("annotations: duplicate image id " + std::to_string(im.id));
        if (im.width <= 0 || im.height <= 0)
            throw std::runtime_error("annotations: image id " + std::to_string(im.id) +
                                     " has non-positive dimensions");
    }
    for (const Category& c : categories) {
        if (!category_ids.insert(c.id).second)
            throw std::runtime_error("annotations: duplicate category id " + std::to_string(c.id));
    }
    for (const AnnRecord& a : annotations) {
        if (!ann_ids.insert(a.id).second)
            throw std::runtime_error("annotations: duplicate annotation id " + std::to_string(a.id));
        if (!image_ids.count(a.image_id))
            throw std::runtime_error("annotations: annotation " + std::to_string(a.id) +
                                     " references unknown image id " + std::to_string(a.image_id));
        if (!category_ids.count(a.category_id))
            throw std::runtime_error("annotations: annotation " + std::to_string(a.id) +
                                     " references unknown category id " +
                                     std::to_string(a.category_id));
        if (a.bbox[2] < 0 || a.bbox[3] < 0)
            throw std::runtime_error("annotations: annotation " + std::to_string(a.id) +
                                     " has negative box size");
        if (a.area < 0)
            throw std::runtime_error("annotations: annotation " + std::to_string(a.id) +
                                     " has negative area");
    }
}

AnnotationSet load_annotations(const std::string& path) {
    const json j = parse_json_file(path);
    AnnotationSet set;
    try {
        for (const json& im : j.at("images")) {
            ImageInfo info;
            info.id = im.at("id").get<int>();
            info.width = im.at("width").get<int>();
            info.height = im.at("height").get<int>();
            info.file_name = im.at("file_name").get<std::string>();
            set.images.push_back(std::move(info));
        }
        for (const json& c : j.at("categories")) {
            set.categories.push_back({c.at("id").get<int>(), c.at("name").get<std::string>()});
        }
        for (const json& a : j.at("annotations")) {
            AnnRecord rec;
            rec.id = a.at("id").get<int>();
            rec.image_id = a.at("image_id").get<int>();
            rec.category_id = a.at("category_id").get<int>();
            const json& bbox = a.at("bbox");
            if (!bbox.is_array() || bbox.size() != 4)
                throw std::runtime_error("annotations: bbox must be [x,y,w,h] in " + path);
            for (int i = 0; i < 4; ++i) rec.bbox[i] = bbox[i].get<double>();
            rec.area = a.at("area").get<double>();
            set.annotations.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed annotations in " + path + ": " + e.what());
    }
    set.validate();
    return set;
}

void save_annotations(const AnnotationSet& set, const std::string& path) {
    set.validate();
    json j;
    j["images"] = json::array();
    for (const ImageInfo& im : set.images) {
        j["images"].push_back({{"id", im.id},
                               {"width", im.width},
                               {"height", im.height},
                               {"file_name", im.file_name}});
    }
    j["categories"] = json::array();
    for (const Category& c : set.categories) {
        j["categories"].push_back({{"id", c.id}, {"name", c.name}});
    }
    j["annotations"] = json::array();
    for (const AnnRecord& a : set.annotations) {
        j["annotations"].push_back({{"id", a.id},
                                    {"image_id", a.image_id},
                                    {"category_id", a.category_id},
                                    {"bbox", a.bbox},
                                    {"area", a.area}});
    }
    write_text_file(path, j.dump(2) + "\n");
}

std::vector<GroundTruth> to_ground_truth(const AnnotationSet& set) {
    std::vector<GroundTruth> gts;
    gts.reserve(set.annotations.size());
    for (const AnnRecord& a : set.annotations) {
        GroundTruth g;
        g.image_id = a.image_id;
        g.category_id = a.category_id;
        g.box = {a.bbox[0], a.bbox[1], a.bbox[0] + a.bbox[2], a.bbox[1] + a.bbox[3]};
        gts.push_back(g);
    }
    return gts;
}

void save_detections(const std::vector<ImageDetection>& dets, const std::string& path) {
    json j = json::array();
    for (const ImageDetection& d : dets) {
        const BBox& b = d.det.box;
        j.push_back({{"image_id", d.image_id},
                     {"category_id", d.det.class_id},
                     {"bbox", {b.x_min, b.y_min, b.width(), b.height()}},
                     {"score", d.det.score}});
    }
    write_text_file(path, j.dump(2) + "\n");
}

std::vector<ImageDetection> load_detections(const std::string& path) {
    const json j = parse_json_file(path);
    if (!j.is_array()) throw std::runtime_error("detections must be a JSON array: " + path);
    std::vector<ImageDetection> dets;
    try {
        for (const json& r : j) {
            ImageDetection d;
            d.image_id = r.at("image_id").get<int>();
            d.det.class_id = r.at("category_id").get<int>();
            const json& bbox = r.at("bbox");
            if (!bbox.is_array() || bbox.size() != 4)
                throw std::runtime_error("detections: bbox must be [x,y,w,h] in " + path);
            const double x = bbox[0].get<double>();
            const double y = bbox[1].get<double>();
            const double w = bbox[2].get<double>();
            const double h = bbox[3].get<double>();
            if (w < 0 || h < 0)
                throw std::runtime_error("detections: negative box size in " + path);
            d.det.box = {x, y, x + w, y + h};
            d.det.score = r.at("score").get<double>();
            if (d.det.score < 0.0 || d.det.score > 1.0)
                throw std::runtime_error("detections: score outside [0,1] in " + path);
            dets.push_back(d);
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed detections in " + path + ": " + e.what());
    }
    return dets;
}

void SceneSpec::validate() const {
    if (image_size < 32)
        throw std::invalid_argument("scene: image size must be >= 32");
    if (min_objects < 0 || max_objects < min_objects)
        throw std::invalid_argument("scene: need 0 <= min objects <= max objects");
    double sum = 0.0;
    for (double w : size_weights) {
        if (w < 0) throw std::invalid_argument("scene: size weights must be >= 0");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("scene: size weights must sum to 1");
    if (occlusion_rate < 0.0 || occlusion_rate > 1.0)
        throw std::invalid_argument("scene: occlusion rate must be in [0,1]");
    if (num_classes < 1)
        throw std::invalid_argument("scene: need at least one class");
    // the medium/large buckets need room: object sides are capped at 3/4 of
    // the image side
    if (size_weights[1] > 0.0 && image_size < 48)
        throw std::invalid_argument("scene: image size must be >= 48 for medium objects");
    if (size_weights[2] > 0.0 && image_size < 130)
        throw std::invalid_argument("scene: image size must be >= 130 for large objects");
}

namespace {

struct PlacedObject {
    BBox box;
    int cls = 0;  // zero-based here; +1 when reported
    bool ellipse = false;
    std::array<double, 3> color{};
};

// integer side lengths for one size bucket; areas land strictly inside the
// bucket bounds (small <= 1024 < medium <= 9216 < large)
std::pair<int, int> sample_bucket_size(Rng& rng, int bucket, int image_size) {
    if (bucket == 0) {
        return {rng.uniform_int(4, 32), rng.uniform_int(4, 32)};
    }
    const int cap = (3 * image_size) / 4;
    if (bucket == 1) {
        const int hi = std::min(96, cap);
        for (int attempt = 0; attempt < 10000; ++attempt) {
            int w = rng.uniform_int(17, hi);
            int h = rng.uniform_int(17, hi);
            if (w * h > 1024) return {w, h};
        }
        return {hi, hi};
    }
    const int hi = std::min(224, cap);
    return {rng.uniform_int(97, hi), rng.uniform_int(97, hi)};
}

int pick_bucket(Rng& rng, const std::array<double, 3>& weights) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int b = 0; b < 3; ++b) {
        acc += weights[b];
        if (u < acc) return b;
    }
    return 2;
}

BBox place_box(Rng& rng, int w, int h, int image_size) {
    const int x0 = rng.uniform_int(0, image_size - w);
    const int y0 = rng.uniform_int(0, image_size - h);
    return {static_cast<double>(x0), static_cast<double>(y0),
            static_cast<double>(x0 + w), static_cast<double>(y0 + h)};
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, int index) {
    spec.validate();
    Rng rng(spec.seed, static_cast<std::uint64_t>(index));
    const int size = spec.image_size;

    Scene scene;
    scene.image = Tensor(3, size, size);
    std::array<double, 3> base{}, grad_x{}, grad_y{};
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(0.10, 0.35);
        grad_x[c] = rng.uniform(-0.08, 0.08);
        grad_y[c] = rng.uniform(-0.08, 0.08);
    }
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = base[c] + grad_x[c] * x / size + grad_y[c] * y / size +
                           rng.uniform(-0.02, 0.02);
                scene.image.at(c, y, x) = std::clamp(v, 0.0, 1.0);
            }
        }
    }

    const int count = rng.uniform_int(spec.min_objects, spec.max_objects);
    std::vector<PlacedObject> placed;
    for (int k = 0; k < count; ++k) {
        PlacedObject obj;
        obj.cls = rng.uniform_int(0, spec.num_classes - 1);
        obj.ellipse = rng.uniform_int(0, 1) == 1;
        for (int c = 0; c < 3; ++c) obj.color[c] = rng.uniform(0.5, 0.95);

        bool placed_ok = false;
        const bool occlude = !placed.empty() && rng.uniform() < spec.occlusion_rate;
        if (occlude) {
            const PlacedObject& partner =
                placed[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(placed.size()) - 1))];
            obj.cls = partner.cls;  // same class, so suppression sees the pair
            const int pw = static_cast<int>(partner.box.width());
            const int ph = static_cast<int>(partner.box.height());
            for (int attempt = 0; attempt < 1000 && !placed_ok; ++attempt) {
                const int w = std::max(4, static_cast<int>(std::lround(pw * rng.uniform(0.7, 1.0))));
                const int h = std::max(4, static_cast<int>(std::lround(ph * rng.uniform(0.7, 1.0))));
                const double cx = partner.box.center_x() + rng.uniform(-0.5, 0.5) * pw;
                const double cy = partner.box.center_y() + rng.uniform(-0.5, 0.5) * ph;
                int x0 = static_cast<int>(std::lround(cx - 0.5 * w));
                int y0 = static_cast<int>(std::lround(cy - 0.5 * h));
                x0 = std::clamp(x0, 0, size - w);
                y0 = std::clamp(y0, 0, size - h);
                const BBox candidate{static_cast<double>(x0), static_cast<double>(y0),
                                     static_cast<double>(x0 + w), static_cast<double>(y0 + h)};
                const double overlap = iou(candidate, partner.box);
                if (overlap >= 0.4 && overlap <= 0.8) {
                    obj.box = candidate;
                    placed_ok = true;
                }
            }
        }
        if (!placed_ok) {
            const int bucket = pick_bucket(rng, spec.size_weights);
            const auto [w, h] = sample_bucket_size(rng, bucket, size);
            for (int attempt = 0; attempt < 10000 && !placed_ok; ++attempt) {
                const BBox candidate = place_box(rng, w, h, size);
                bool clear = true;
                for (const PlacedObject& other : placed) {
                    if (iou(candidate, other.box) >= 0.4) {
                        clear = false;
                        break;
                    }
                }
                obj.box = candidate;
                if (clear) placed_ok = true;
            }
            // pathological crowding: keep the last candidate
        }
        placed.push_back(obj);
    }

    for (const PlacedObject& obj : placed) {
        const int x0 = static_cast<int>(obj.box.x_min);
        const int y0 = static_cast<int>(obj.box.y_min);
        const int x1 = static_cast<int>(obj.box.x_max);
        const int y1 = static_cast<int>(obj.box.y_max);
        const double rx = 0.5 * obj.box.width();
        const double ry = 0.5 * obj.box.height();
        const double cx = obj.box.center_x();
        const double cy = obj.box.center_y();
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                if (obj.ellipse) {
                    const double nx = (x + 0.5 - cx) / rx;
                    const double ny = (y + 0.5 - cy) / ry;
                    if (nx * nx + ny * ny > 1.0) continue;
                }
                for (int c = 0; c < 3; ++c) scene.image.at(c, y, x) = obj.color[c];
            }
        }
        scene.gts.push_back({index, obj.box, obj.cls + 1});
    }
    return scene;
}

std::string image_file_name(int image_id, ImageFormat format) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%06d.%s", image_id,
                  format == ImageFormat::Png ? "png" : "ten");
    return buf;
}

AnnotationSet generate_dataset(
    const SceneSpec& spec, int n,
    const std::function<void(int image_id, const Tensor& image,
                             const std::string& file_name)>& sink,
    ImageFormat format) {
    spec.validate();
    if (n < 0) throw std::invalid_argument("dataset: n must be >= 0");

    AnnotationSet set;
    for (int k = 0; k < spec.num_classes; ++k)
        set.categories.push_back({k + 1, "class" + std::to_string(k + 1)});

    int ann_id = 1;
    for (int i = 0; i < n; ++i) {
        const int image_id = i + 1;
        Scene scene = generate_scene(spec, image_id);
        const std::string file_name = image_file_name(image_id, format);
        set.images.push_back({image_id, spec.image_size, spec.image_size, file_name});
        for (const GroundTruth& g : scene.gts) {
            set.annotations.push_back({ann_id++, image_id, g.category_id,
                                       {g.box.x_min, g.box.y_min, g.box.width(), g.box.height()},
                                       g.box.area()});
        }
        if (sink) sink(image_id, scene.image, file_name);
    }
    set.validate();
    return set;
}

Resized resize_to_square(const Tensor& image, int out_size) {
    if (out_size < 1) throw std::invalid_argument("resize: output size must be >= 1");
    if (image.channels() < 1 || image.height() < 1 || image.width() < 1)
        throw std::invalid_argument("resize: empty image");

    Resized out;
    out.orig_width = image.width();
    out.orig_height = image.height();
    out.scale = static_cast<double>(out_size) / std::max(image.width(), image.height());
    const int rw = std::max(1, static_cast<int>(std::lround(image.width() * out.scale)));
    const int rh = std::max(1, static_cast<int>(std::lround(image.height() * out.scale)));

    out.image = Tensor(image.channels(), out_size, out_size);
    for (int c = 0; c < image.channels(); ++c) {
        for (int y = 0; y < rh; ++y) {
            const int sy = std::min(image.height() - 1,
                                    static_cast<int>((y + 0.5) * image.height() / rh));
            for (int x = 0; x < rw; ++x) {
                const int sx = std::min(image.width() - 1,
                                        static_cast<int>((x + 0.5) * image.width() / rw));
                out.image.at(c, y, x) = image.at(c, sy, sx);
            }
        }
    }
    return out;
}

}  // namespace smallobj
