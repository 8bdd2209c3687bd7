#include "smallobj/cli.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "smallobj/arch.hpp"
#include "smallobj/box.hpp"
#include "smallobj/cbam.hpp"
#include "smallobj/data.hpp"
#include "smallobj/dcm.hpp"
#include "smallobj/nms.hpp"
#include "smallobj/png_io.hpp"
#include "smallobj/rng.hpp"

namespace smallobj {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- parsing

long long parse_ll(const std::string& s, const std::string& what) {
    long long v = 0;
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end)
        throw std::invalid_argument("bad integer for " + what + ": '" + s + "'");
    return v;
}

double parse_double(const std::string& s, const std::string& what) {
    if (s.empty()) throw std::invalid_argument("empty value for " + what);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || !std::isfinite(v))
        throw std::invalid_argument("bad number for " + what + ": '" + s + "'");
    return v;
}

std::array<double, 3> parse_weights(std::string s, const std::string& what) {
    std::erase_if(s, [](char c) { return c == '[' || c == ']' || c == ' '; });
    std::array<double, 3> out{};
    std::stringstream ss(s);
    std::string part;
    int i = 0;
    while (std::getline(ss, part, ',')) {
        if (i >= 3) throw std::invalid_argument(what + " needs exactly 3 values");
        out[i++] = parse_double(part, what);
    }
    if (i != 3) throw std::invalid_argument(what + " needs exactly 3 values");
    return out;
}

// Config file: flat key=value lines ('#' comments) or a single JSON object.
// Keys are the long option names without the leading dashes.
struct ConfigFile {
    std::map<std::string, std::string> values;

    bool has(const std::string& key) const { return values.count(key) != 0; }
    const std::string& str(const std::string& key) const { return values.at(key); }
    long long ll(const std::string& key) const { return parse_ll(values.at(key), key); }
    double num(const std::string& key) const { return parse_double(values.at(key), key); }
};

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

ConfigFile load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ConfigFile cf;
    const std::string body = trim(text);
    if (!body.empty() && body[0] == '{') {
        json j;
        try {
            j = json::parse(body);
        } catch (const json::exception& e) {
            throw std::invalid_argument("malformed JSON config " + path + ": " + e.what());
        }
        if (!j.is_object()) throw std::invalid_argument("config must be a JSON object: " + path);
        for (const auto& [key, value] : j.items()) {
            cf.values[key] = value.is_string() ? value.get<std::string>() : value.dump();
        }
        return cf;
    }
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config " + path + " line " + std::to_string(line_no) +
                                        ": expected key=value");
        cf.values[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return cf;
}

ConfigFile maybe_load_config(const std::string& path) {
    return path.empty() ? ConfigFile{} : load_config_file(path);
}

// ---------------------------------------------------------------- manifest

void write_manifest(const fs::path& path, const std::string& command, const json& resolved) {
    json j;
    j["command"] = command;
    j["config"] = resolved;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

fs::path manifest_path_for(const fs::path& primary) {
    fs::path p = primary;
    p.replace_extension();
    p += ".manifest.json";
    return p;
}

// ---------------------------------------------------------------- workers

int worker_count(int n_items) {
    int threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads < 1) threads = 1;
    if (const char* env = std::getenv("SMALLOBJ_THREADS")) {
        const long long cap = parse_ll(env, "SMALLOBJ_THREADS");
        if (cap < 1) throw std::invalid_argument("SMALLOBJ_THREADS must be >= 1");
        threads = std::min<long long>(threads, cap);
    }
    return std::max(1, std::min(threads, n_items));
}

template <typename Fn>
void parallel_for(int n, Fn&& fn) {
    const int workers = worker_count(n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------- gen

struct GenOptions {
    std::string out;
    std::string config;
    std::uint64_t seed = 0;
    int n = 16;
    int image_size = 640;
    int min_objects = 1;
    int max_objects = 4;
    double occlusion = 0.0;
    int classes = 4;
    std::string weights = "0.6,0.3,0.1";
    std::string format = "png";
};

int run_gen(const GenOptions& o) {
    if (o.out.empty()) throw std::invalid_argument("gen: --out is required");
    if (o.n < 0) throw std::invalid_argument("gen: --n must be >= 0");
    ImageFormat fmt;
    if (o.format == "png") {
        fmt = ImageFormat::Png;
    } else if (o.format == "ten") {
        fmt = ImageFormat::RawTensor;
    } else {
        throw std::invalid_argument("gen: --image-format must be png or ten");
    }

    SceneSpec spec;
    spec.seed = o.seed;
    spec.image_size = o.image_size;
    spec.min_objects = o.min_objects;
    spec.max_objects = o.max_objects;
    spec.size_weights = parse_weights(o.weights, "--size-weights");
    spec.occlusion_rate = o.occlusion;
    spec.num_classes = o.classes;
    spec.validate();

    const fs::path root(o.out);
    fs::create_directories(root / "images");

    const AnnotationSet set = generate_dataset(
        spec, o.n,
        [&](int, const Tensor& image, const std::string& file_name) {
            const fs::path p = root / "images" / file_name;
            if (fmt == ImageFormat::Png) {
                write_png_rgb8(p.string(), tensor_to_image(image));
            } else {
                save_tensor_raw(p.string(), image);
            }
        },
        fmt);
    save_annotations(set, (root / "annotations.json").string());

    json cfg;
    cfg["seed"] = o.seed;
    cfg["n"] = o.n;
    cfg["image-size"] = o.image_size;
    cfg["min-objects"] = o.min_objects;
    cfg["max-objects"] = o.max_objects;
    cfg["occlusion"] = o.occlusion;
    cfg["classes"] = o.classes;
    cfg["size-weights"] = spec.size_weights;
    cfg["image-format"] = o.format;
    cfg["out"] = o.out;
    write_manifest(root / "manifest.json", "gen", cfg);

    std::cout << "generated " << set.images.size() << " images with "
              << set.annotations.size() << " objects in " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- infer

struct InferOptions {
    std::string data;
    std::string config;
    std::string weights;
    std::string save_weights;
    std::string out;
    std::uint64_t seed = 0;
    int input_size = 640;
    double width = 0.25;
    int fusion_channels = -1;
    std::string nms = "soft";
    double sigma = 1.1;
    double nt = 0.9;
    double score_floor = 0.001;
    double iou_threshold = 0.5;
    int topk = 300;
};

Tensor load_image_any(const fs::path& path) {
    if (path.extension() == ".ten") return load_tensor_raw(path.string());
    return image_to_tensor(read_png_rgb8(path.string()));
}

int run_infer(const InferOptions& o) {
    if (o.data.empty()) throw std::invalid_argument("infer: --data is required");
    if (o.nms != "soft" && o.nms != "hard" && o.nms != "none")
        throw std::invalid_argument("infer: --nms must be soft, hard, or none");
    if (o.iou_threshold < 0.0 || o.iou_threshold > 1.0)
        throw std::invalid_argument("infer: --iou-threshold must be in [0,1]");
    if (o.score_floor < 0.0) throw std::invalid_argument("infer: --score-floor must be >= 0");
    if (o.topk < 0) throw std::invalid_argument("infer: --pre-nms-topk must be >= 0");
    SoftNmsConfig nms_cfg;
    nms_cfg.sigma = o.sigma;
    nms_cfg.nt = o.nt;
    nms_cfg.score_floor = o.score_floor;
    nms_cfg.mode = NmsMode::Gaussian;
    nms_cfg.validate();

    const fs::path root(o.data);
    const AnnotationSet set = load_annotations((root / "annotations.json").string());
    if (set.categories.empty()) throw std::runtime_error("infer: dataset has no categories");

    std::vector<Category> cats = set.categories;  // class index k <-> cats[k]
    std::sort(cats.begin(), cats.end(),
              [](const Category& a, const Category& b) { return a.id < b.id; });

    ModelConfig mc;
    mc.input_size = o.input_size;
    mc.width = o.width;
    mc.num_classes = static_cast<int>(cats.size());
    mc.fusion_channels = o.fusion_channels;
    mc.anchors = default_anchors(o.input_size);
    mc.validate();

    ModelParams params = [&] {
        if (!o.weights.empty()) return load_params(mc, o.weights);
        Rng rng(o.seed, 1);
        return make_model_params(mc, rng);
    }();
    if (!o.save_weights.empty()) save_params(params, mc, o.save_weights);

    const int n = static_cast<int>(set.images.size());
    std::vector<std::vector<ImageDetection>> slots(n);
    parallel_for(n, [&](int i) {
        const ImageInfo& info = set.images[i];
        const Tensor img = load_image_any(root / "images" / info.file_name);
        const Resized rz = resize_to_square(img, o.input_size);
        const auto raw = model_forward(rz.image, mc, params);
        std::vector<Detection> dets = decode_predictions(raw, mc, o.score_floor);

        if (o.topk > 0 && dets.size() > static_cast<std::size_t>(o.topk)) {
            std::stable_sort(dets.begin(), dets.end(),
                             [](const Detection& a, const Detection& b) {
                                 return a.score > b.score;
                             });
            dets.resize(static_cast<std::size_t>(o.topk));
        }
        if (o.nms == "soft") {
            dets = soft_nms(dets, nms_cfg);
        } else if (o.nms == "hard") {
            dets = nms_hard(dets, o.iou_threshold);
        }

        std::vector<ImageDetection>& out = slots[i];
        for (const Detection& d : dets) {
            BBox b{std::clamp(d.box.x_min / rz.scale, 0.0, static_cast<double>(rz.orig_width)),
                   std::clamp(d.box.y_min / rz.scale, 0.0, static_cast<double>(rz.orig_height)),
                   std::clamp(d.box.x_max / rz.scale, 0.0, static_cast<double>(rz.orig_width)),
                   std::clamp(d.box.y_max / rz.scale, 0.0, static_cast<double>(rz.orig_height))};
            if (b.width() <= 0.0 || b.height() <= 0.0) continue;
            out.push_back({info.id, {b, cats[d.class_id].id, d.score}});
        }
    });

    std::vector<ImageDetection> all;
    for (const auto& slot : slots) all.insert(all.end(), slot.begin(), slot.end());

    const fs::path out_path =
        o.out.empty() ? root / "detections.json" : fs::path(o.out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    save_detections(all, out_path.string());

    json cfg;
    cfg["data"] = o.data;
    cfg["weights"] = o.weights;
    cfg["save-weights"] = o.save_weights;
    cfg["out"] = out_path.string();
    cfg["seed"] = o.seed;
    cfg["input-size"] = o.input_size;
    cfg["width"] = o.width;
    cfg["fusion-channels"] = o.fusion_channels;
    cfg["nms"] = o.nms;
    cfg["sigma"] = o.sigma;
    cfg["nt"] = o.nt;
    cfg["score-floor"] = o.score_floor;
    cfg["iou-threshold"] = o.iou_threshold;
    cfg["pre-nms-topk"] = o.topk;
    cfg["num-classes"] = mc.num_classes;
    write_manifest(manifest_path_for(out_path), "infer", cfg);

    std::cout << "processed " << n << " images, kept " << all.size()
              << " detections -> " << out_path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
    std::string data;
    std::string config;
    std::string annotations;
    std::string dets;
    std::string out = "report.json";
    std::string csv;
    double iou_threshold = 0.5;
};

int run_eval(const EvalOptions& o) {
    if (o.data.empty() && o.annotations.empty())
        throw std::invalid_argument("eval: need --data or --annotations");
    const std::string ann_path =
        o.annotations.empty() ? (fs::path(o.data) / "annotations.json").string()
                              : o.annotations;
    const std::string det_path =
        o.dets.empty() ? (o.data.empty()
                              ? throw std::invalid_argument("eval: --dets is required")
                              : (fs::path(o.data) / "detections.json").string())
                       : o.dets;
    if (o.iou_threshold <= 0.0 || o.iou_threshold > 1.0)
        throw std::invalid_argument("eval: --iou-threshold must be in (0,1]");

    const AnnotationSet set = load_annotations(ann_path);
    const std::vector<ImageDetection> dets = load_detections(det_path);

    std::set<int> image_ids;
    for (const ImageInfo& im : set.images) image_ids.insert(im.id);
    for (const ImageDetection& d : dets) {
        if (!image_ids.count(d.image_id))
            throw std::invalid_argument("eval: detections reference unknown image id " +
                                        std::to_string(d.image_id));
    }

    const EvalReport report =
        evaluate(dets, to_ground_truth(set), set.categories, o.iou_threshold);

    const fs::path out_path(o.out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open for writing: " + o.out);
        out << report_to_json(report);
        if (!out) throw std::runtime_error("write failed: " + o.out);
    }
    if (!o.csv.empty()) {
        std::ofstream out(o.csv, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open for writing: " + o.csv);
        out << report_to_csv(report);
        if (!out) throw std::runtime_error("write failed: " + o.csv);
    }

    json cfg;
    cfg["annotations"] = ann_path;
    cfg["dets"] = det_path;
    cfg["out"] = o.out;
    cfg["csv"] = o.csv;
    cfg["iou-threshold"] = o.iou_threshold;
    write_manifest(manifest_path_for(out_path), "eval", cfg);

    std::cout << "map=" << report.map50 << " ap50_95=" << report.ap50_95
              << " ap_s=" << report.ap_s << " ap_m=" << report.ap_m
              << " ap_l=" << report.ap_l << " -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- selftest

struct SelftestOptions {
    std::string config;
    std::uint64_t seed = 1;
    double sigma = 1.1;
    double nt = 0.9;
    double score_floor = 0.001;
    int ap_scenarios = 100;
    int nms_sets = 100;
    int input_size = 640;
};

std::vector<Detection> random_detections(Rng& rng, int n, int classes, double span) {
    std::vector<Detection> dets;
    for (int i = 0; i < n; ++i) {
        const double x = rng.uniform(0.0, span);
        const double y = rng.uniform(0.0, span);
        const double w = rng.uniform(1.0, span / 2);
        const double h = rng.uniform(1.0, span / 2);
        dets.push_back({{x, y, x + w, y + h}, rng.uniform_int(0, classes - 1), rng.uniform()});
    }
    return dets;
}

// linear-scan formulation: a detection survives when no higher-priority kept
// detection of its class overlaps it beyond the threshold
std::vector<Detection> selftest_nms_reference(const std::vector<Detection>& dets,
                                              double threshold) {
    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets[a].score > dets[b].score;
    });
    std::vector<Detection> kept;
    for (std::size_t i : order) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (k.class_id == dets[i].class_id &&
                iou(k.box, dets[i].box) > threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(dets[i]);
    }
    return kept;
}

bool same_detection_set(std::vector<Detection> a, std::vector<Detection> b) {
    const auto key = [](const Detection& d) {
        return std::tuple(d.class_id, d.score, d.box.x_min, d.box.y_min, d.box.x_max,
                          d.box.y_max);
    };
    const auto cmp = [&](const Detection& x, const Detection& y) { return key(x) < key(y); };
    std::sort(a.begin(), a.end(), cmp);
    std::sort(b.begin(), b.end(), cmp);
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (key(a[i]) != key(b[i])) return false;
    return true;
}

double selftest_ap_reference(std::vector<ScoredLabel> labeled, std::size_t num_gt) {
    if (num_gt == 0) return 0.0;
    std::stable_sort(labeled.begin(), labeled.end(),
                     [](const ScoredLabel& a, const ScoredLabel& b) {
                         return a.score > b.score;
                     });
    double total = 0.0;
    for (int i = 0; i <= 10; ++i) {
        const double r = i / 10.0;
        double best = 0.0;
        std::size_t tp = 0;
        for (std::size_t k = 0; k < labeled.size(); ++k) {
            if (labeled[k].tp) ++tp;
            const double recall = static_cast<double>(tp) / static_cast<double>(num_gt);
            const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
            if (recall >= r) best = std::max(best, precision);
        }
        total += best;
    }
    return total / 11.0;
}

}  // namespace

bool selftest_ap_check(const ApFn& ap, int scenarios, std::uint64_t seed,
                       std::string* detail) {
    Rng rng(seed, 17);
    for (int s = 0; s < scenarios; ++s) {
        const std::size_t num_gt = static_cast<std::size_t>(rng.uniform_int(1, 10));
        const int n = rng.uniform_int(0, 20);
        std::vector<ScoredLabel> labeled;
        int tp_left = rng.uniform_int(0, static_cast<int>(std::min<std::size_t>(num_gt, n)));
        for (int i = 0; i < n; ++i) {
            const bool tp = tp_left > 0 && rng.uniform() < 0.5;
            if (tp) --tp_left;
            labeled.push_back({rng.uniform(), tp});
        }
        const double got = ap(labeled, num_gt);
        const double want = selftest_ap_reference(labeled, num_gt);
        if (std::abs(got - want) > 1e-9) {
            if (detail) {
                *detail = "scenario " + std::to_string(s) + ": got " + std::to_string(got) +
                          ", reference " + std::to_string(want);
            }
            return false;
        }
    }
    return true;
}

namespace {

int run_selftest(const SelftestOptions& o) {
    // validate the suppression config before anything runs
    SoftNmsConfig nms_cfg;
    nms_cfg.sigma = o.sigma;
    nms_cfg.nt = o.nt;
    nms_cfg.score_floor = o.score_floor;
    nms_cfg.validate();
    if (o.ap_scenarios < 1 || o.nms_sets < 1)
        throw std::invalid_argument("selftest: check counts must be >= 1");

    struct Row {
        std::string name;
        bool ok;
        std::string detail;
    };
    std::vector<Row> rows;
    const auto check = [&rows](const std::string& name, bool ok, std::string detail = "") {
        rows.push_back({name, ok, std::move(detail)});
    };

    Rng rng(o.seed, 0);

    {  // activation values
        const double m1 = mish(1.0);
        check("activations",
              sigmoid(0.0) == 0.5 && std::abs(m1 - 0.8650983882673103) < 1e-12 &&
                  mish(20.0) > mish(19.0),
              "mish(1)=" + std::to_string(m1));
    }

    {  // dilated-stack receptive field
        DcmParams dcm = make_dcm_params(2, rng);
        bool ok = true;
        std::string detail;
        for (int trial = 0; trial < 5 && ok; ++trial) {
            Tensor x(2, 96, 96);
            const int iy = rng.uniform_int(30, 65);
            const int ix = rng.uniform_int(30, 65);
            x.at(rng.uniform_int(0, 1), iy, ix) = 1.0;
            const Tensor y = dcm_enhance(x, dcm);
            for (int c = 0; c < y.channels() && ok; ++c) {
                for (int yy = 0; yy < y.height() && ok; ++yy) {
                    for (int xx = 0; xx < y.width() && ok; ++xx) {
                        if (y.at(c, yy, xx) != 0.0 &&
                            (std::abs(yy - iy) > 20 || std::abs(xx - ix) > 20)) {
                            ok = false;
                            detail = "response outside 41x41 at (" + std::to_string(yy) +
                                     "," + std::to_string(xx) + ")";
                        }
                    }
                }
            }
        }
        check("dcm receptive field 41x41", ok, detail);
    }

    {  // zero-parameter enhancement block is the identity
        const DcmParams dcm = make_dcm_params_zero(3);
        Tensor x(3, 17, 19);
        for (double& v : x.data()) v = rng.uniform(-2.0, 2.0);
        const Tensor y = dcm_forward(x, dcm);
        check("dcm zero identity", y.data() == x.data());
    }

    {  // attention only attenuates
        bool ok = true;
        for (int trial = 0; trial < 20 && ok; ++trial) {
            const int c = rng.uniform_int(1, 8);
            CbamParams cbam = make_cbam_params(c, 4, rng);
            Tensor x(c, rng.uniform_int(3, 10), rng.uniform_int(3, 10));
            for (double& v : x.data()) v = rng.uniform(-3.0, 3.0);
            const Tensor y = cbam_apply(x, cbam);
            ok = y.same_shape(x);
            for (std::size_t i = 0; i < x.size() && ok; ++i)
                ok = std::abs(y.data()[i]) <= std::abs(x.data()[i]);
        }
        check("cbam attenuation", ok);
    }

    {  // suppression against the linear-scan reference
        bool ok = true;
        std::string detail;
        for (int s = 0; s < o.nms_sets && ok; ++s) {
            const auto dets = random_detections(rng, rng.uniform_int(0, 40), 3, 60.0);
            if (!same_detection_set(nms_hard(dets, 0.5),
                                    selftest_nms_reference(dets, 0.5))) {
                ok = false;
                detail = "set " + std::to_string(s);
            }
            SoftNmsConfig hard = nms_cfg;
            hard.mode = NmsMode::Hard;
            if (ok && !same_detection_set(soft_nms(dets, hard), nms_hard(dets, hard.nt))) {
                ok = false;
                detail = "hard-mode mismatch on set " + std::to_string(s);
            }
        }
        check("nms oracle", ok, detail);
    }

    {  // gaussian rescoring on the canonical overlapping pair
        std::vector<Detection> pair{{{0, 0, 10, 10}, 0, 0.9}, {{0, 0, 10, 10}, 0, 0.8}};
        const auto out = soft_nms(pair, nms_cfg);
        const double want = 0.8 * std::exp(-1.0 / o.sigma);
        const bool ok = out.size() == 2 && std::abs(out[1].score - want) < 1e-12;
        check("soft-nms rescore", ok,
              "expected second score " + std::to_string(want));
    }

    {  // overlap metric identities
        bool ok = true;
        for (int i = 0; i < 1000 && ok; ++i) {
            const double ax = rng.uniform(0, 50), ay = rng.uniform(0, 50);
            const double bx = rng.uniform(0, 50), by = rng.uniform(0, 50);
            const BBox a{ax, ay, ax + rng.uniform(1, 30), ay + rng.uniform(1, 30)};
            const BBox b{bx, by, bx + rng.uniform(1, 30), by + rng.uniform(1, 30)};
            ok = ciou_metric(a, b) <= iou(a, b) + 1e-12 && ciou_loss(a, b) >= -1e-12 &&
                 ciou_loss(a, a) < 1e-12;
        }
        const BBox a{-1, -1, 1, 1}, b{-2, -0.5, 2, 0.5};
        ok = ok && std::abs(ciou_metric(a, b) - 0.3155) < 1e-3;
        check("ciou identities", ok);
    }

    {  // AP against the exhaustive PR reference
        std::string detail;
        const bool ok = selftest_ap_check(
            [](std::vector<ScoredLabel> l, std::size_t g) {
                return average_precision_11pt(std::move(l), g);
            },
            o.ap_scenarios, o.seed, &detail);
        check("ap oracle", ok, detail);

        const double capped = average_precision_11pt({{0.9, true}}, 2);
        check("ap 2gt/1tp == 6/11", capped == 6.0 / 11.0,
              "got " + std::to_string(capped));
    }

    {  // full forward: grid sizes and wall time
        ModelConfig mc;
        mc.input_size = o.input_size;
        mc.anchors = default_anchors(o.input_size);
        mc.validate();
        Rng mrng(o.seed, 99);
        const ModelParams params = make_model_params(mc, mrng);
        Tensor img(3, mc.input_size, mc.input_size);
        for (double& v : img.data()) v = mrng.uniform();
        const auto t0 = std::chrono::steady_clock::now();
        const auto raw = model_forward(img, mc, params);
        const auto t1 = std::chrono::steady_clock::now();
        const double secs = std::chrono::duration<double>(t1 - t0).count();
        const int g = mc.input_size;
        const bool ok = raw[0].grid == g / 8 && raw[1].grid == g / 16 &&
                        raw[2].grid == g / 32;
        std::ostringstream msg;
        msg << "grids " << raw[0].grid << "/" << raw[1].grid << "/" << raw[2].grid
            << ", forward " << secs << "s";
        check("shape pyramid", ok, msg.str());
    }

    {  // decode geometry spot value
        ModelConfig mc;
        mc.num_classes = 1;
        for (auto& scale : mc.anchors)   // small anchors: no border clipping
            for (Anchor& a : scale) a = {6.0, 6.0};
        RawPrediction p;
        p.grid = mc.input_size / 8;
        p.stride = 8;
        p.cls_map = Tensor(3, p.grid, p.grid);
        p.reg_map = Tensor(15, p.grid, p.grid);
        for (double& v : p.cls_map.data()) v = 4.0;   // high class logit
        for (int a = 0; a < 3; ++a)                    // high objectness
            for (int y = 0; y < p.grid; ++y)
                for (int x = 0; x < p.grid; ++x) p.reg_map.at(a * 5 + 4, y, x) = 4.0;
        RawPrediction q16 = p, q32 = p;
        q16.grid = mc.input_size / 16;
        q16.stride = 16;
        q16.cls_map = Tensor(3, q16.grid, q16.grid);
        q16.reg_map = Tensor(15, q16.grid, q16.grid);
        q32.grid = mc.input_size / 32;
        q32.stride = 32;
        q32.cls_map = Tensor(3, q32.grid, q32.grid);
        q32.reg_map = Tensor(15, q32.grid, q32.grid);
        const auto dets = decode_predictions({p, q16, q32}, mc, 0.5);
        bool ok = !dets.empty();
        if (ok) {
            const Detection& d = dets.front();
            ok = std::abs(d.box.center_x() - 4.0) < 1e-12 &&
                 std::abs(d.box.center_y() - 4.0) < 1e-12;
        }
        check("decode center (0,0) -> 4px", ok);
    }

    {  // scene generation reproducibility
        SceneSpec spec;
        spec.seed = o.seed;
        spec.image_size = 160;
        spec.size_weights = {0.5, 0.5, 0.0};
        const Scene s1 = generate_scene(spec, 7);
        const Scene s2 = generate_scene(spec, 7);
        bool ok = s1.image.data() == s2.image.data() && s1.gts.size() == s2.gts.size();
        for (std::size_t i = 0; ok && i < s1.gts.size(); ++i) {
            ok = s1.gts[i].box.x_min == s2.gts[i].box.x_min &&
                 s1.gts[i].category_id == s2.gts[i].category_id;
        }
        check("scene determinism", ok);
    }

    bool all_ok = true;
    std::size_t width = 0;
    for (const Row& r : rows) width = std::max(width, r.name.size());
    for (const Row& r : rows) {
        all_ok = all_ok && r.ok;
        std::cout << (r.ok ? "[ ok ] " : "[FAIL] ") << r.name
                  << std::string(width - r.name.size() + 2, ' ') << r.detail << "\n";
    }
    std::cout << (all_ok ? "selftest passed" : "selftest FAILED") << " (" << rows.size()
              << " checks)\n";
    return all_ok ? 0 : 1;
}

// ---------------------------------------------------------------- bench

struct BenchOptions {
    std::string config;
    std::uint64_t seed = 0;
    int input_size = 320;
    int nms_n = 1000;
};

int run_bench(const BenchOptions& o) {
    Rng rng(o.seed, 3);
    using clock = std::chrono::steady_clock;
    const auto ms = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };

    {
        ConvSpec conv = make_conv(32, 32, 3, 1, 1, 1, rng);
        Tensor x(32, 80, 80);
        for (double& v : x.data()) v = rng.uniform();
        const auto t0 = clock::now();
        const Tensor y = conv2d(x, conv);
        const auto t1 = clock::now();
        std::cout << "conv2d 32x80x80 (3x3): " << ms(t0, t1) << " ms\n";
    }
    {
        ModelConfig mc;
        mc.input_size = o.input_size;
        mc.anchors = default_anchors(o.input_size);
        mc.validate();
        Rng mrng(o.seed, 4);
        const ModelParams params = make_model_params(mc, mrng);
        Tensor img(3, o.input_size, o.input_size);
        for (double& v : img.data()) v = mrng.uniform();
        const auto t0 = clock::now();
        const auto raw = model_forward(img, mc, params);
        const auto t1 = clock::now();
        std::cout << "model forward " << o.input_size << "x" << o.input_size << ": "
                  << ms(t0, t1) << " ms (grids " << raw[0].grid << "/" << raw[1].grid
                  << "/" << raw[2].grid << ")\n";
    }
    {
        const auto dets = random_detections(rng, o.nms_n, 1, 400.0);
        SoftNmsConfig cfg;
        const auto t0 = clock::now();
        const auto kept = soft_nms(dets, cfg);
        const auto t1 = clock::now();
        std::cout << "soft-nms on " << o.nms_n << " boxes: " << ms(t0, t1) << " ms ("
                  << kept.size() << " kept)\n";
    }
    return 0;
}

// ---------------------------------------------------------------- wiring

// CLI flags win over config-file values; file values win over defaults.
struct Merge {
    const ConfigFile& cf;

    void u64(const CLI::Option* opt, const char* key, std::uint64_t& target) const {
        if (!opt->count() && cf.has(key))
            target = static_cast<std::uint64_t>(cf.ll(key));
    }
    void integer(const CLI::Option* opt, const char* key, int& target) const {
        if (!opt->count() && cf.has(key)) target = static_cast<int>(cf.ll(key));
    }
    void real(const CLI::Option* opt, const char* key, double& target) const {
        if (!opt->count() && cf.has(key)) target = cf.num(key);
    }
    void text(const CLI::Option* opt, const char* key, std::string& target) const {
        if (!opt->count() && cf.has(key)) target = cf.str(key);
    }
};

}  // namespace

int cli_main(int argc, const char* const* argv) {
    try {
        CLI::App app{"small-object detection sandbox: synthetic data, inference, evaluation"};
        app.require_subcommand(1);

        GenOptions go;
        auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
        auto* gen_out = gen->add_option("--out", go.out, "output directory");
        auto* gen_seed = gen->add_option("--seed", go.seed, "master seed");
        auto* gen_n = gen->add_option("--n", go.n, "number of images");
        auto* gen_size = gen->add_option("--image-size", go.image_size, "square image side");
        auto* gen_min = gen->add_option("--min-objects", go.min_objects, "objects per image, lower bound");
        auto* gen_max = gen->add_option("--max-objects", go.max_objects, "objects per image, upper bound");
        auto* gen_occ = gen->add_option("--occlusion", go.occlusion, "occluded-object rate in [0,1]");
        auto* gen_cls = gen->add_option("--classes", go.classes, "number of object classes");
        auto* gen_w = gen->add_option("--size-weights", go.weights, "small,medium,large sampling weights");
        auto* gen_fmt = gen->add_option("--image-format", go.format, "png or ten");
        gen->add_option("--config", go.config, "config file (key=value or JSON)");

        InferOptions io;
        auto* infer = app.add_subcommand("infer", "run the detector over a dataset");
        auto* inf_data = infer->add_option("--data", io.data, "dataset directory from gen");
        auto* inf_weights = infer->add_option("--weights", io.weights, "weights file (default: fresh random)");
        auto* inf_savew = infer->add_option("--save-weights", io.save_weights, "write the weights used");
        auto* inf_out = infer->add_option("--out", io.out, "detections JSON path");
        auto* inf_seed = infer->add_option("--seed", io.seed, "seed for fresh weights");
        auto* inf_size = infer->add_option("--input-size", io.input_size, "network input side (multiple of 32)");
        auto* inf_width = infer->add_option("--width", io.width, "channel width multiplier");
        auto* inf_fuse = infer->add_option("--fusion-channels", io.fusion_channels,
                                           "-1 auto, 0 off, or explicit count");
        auto* inf_nms = infer->add_option("--nms", io.nms, "soft, hard, or none");
        auto* inf_sigma = infer->add_option("--sigma", io.sigma, "gaussian rescoring width");
        auto* inf_nt = infer->add_option("--nt", io.nt, "overlap threshold for hard/linear modes");
        auto* inf_floor = infer->add_option("--score-floor", io.score_floor, "drop detections below this score");
        auto* inf_iou = infer->add_option("--iou-threshold", io.iou_threshold, "hard-NMS overlap threshold");
        auto* inf_topk = infer->add_option("--pre-nms-topk", io.topk, "cap on decoded boxes per image (0 = all)");
        infer->add_option("--config", io.config, "config file (key=value or JSON)");

        EvalOptions eo;
        auto* eval = app.add_subcommand("eval", "score detections against annotations");
        auto* ev_data = eval->add_option("--data", eo.data, "dataset directory");
        auto* ev_ann = eval->add_option("--annotations", eo.annotations, "annotation JSON path");
        auto* ev_dets = eval->add_option("--dets", eo.dets, "detections JSON path");
        auto* ev_out = eval->add_option("--out", eo.out, "report JSON path");
        auto* ev_csv = eval->add_option("--csv", eo.csv, "per-class CSV path");
        auto* ev_iou = eval->add_option("--iou-threshold", eo.iou_threshold, "matching IoU threshold");
        eval->add_option("--config", eo.config, "config file (key=value or JSON)");

        SelftestOptions so;
        auto* self = app.add_subcommand("selftest", "run the built-in invariant and oracle checks");
        auto* st_seed = self->add_option("--seed", so.seed, "seed for the randomized checks");
        auto* st_sigma = self->add_option("--sigma", so.sigma, "gaussian rescoring width");
        auto* st_nt = self->add_option("--nt", so.nt, "overlap threshold for hard mode");
        auto* st_floor = self->add_option("--score-floor", so.score_floor, "suppression score floor");
        auto* st_ap = self->add_option("--ap-scenarios", so.ap_scenarios, "AP oracle scenario count");
        auto* st_nms = self->add_option("--nms-sets", so.nms_sets, "NMS oracle set count");
        auto* st_size = self->add_option("--input-size", so.input_size, "forward-pass check input side");
        self->add_option("--config", so.config, "config file (key=value or JSON)");

        BenchOptions bo;
        auto* bench = app.add_subcommand("bench", "time the heavy kernels");
        auto* be_seed = bench->add_option("--seed", bo.seed, "seed");
        auto* be_size = bench->add_option("--input-size", bo.input_size, "forward-pass input side");
        auto* be_n = bench->add_option("--nms-n", bo.nms_n, "suppression benchmark box count");
        bench->add_option("--config", bo.config, "config file (key=value or JSON)");

        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            app.exit(e);
            return 1;
        }

        if (gen->parsed()) {
            const ConfigFile cf = maybe_load_config(go.config);
            const Merge m{cf};
            m.text(gen_out, "out", go.out);
            m.u64(gen_seed, "seed", go.seed);
            m.integer(gen_n, "n", go.n);
            m.integer(gen_size, "image-size", go.image_size);
            m.integer(gen_min, "min-objects", go.min_objects);
            m.integer(gen_max, "max-objects", go.max_objects);
            m.real(gen_occ, "occlusion", go.occlusion);
            m.integer(gen_cls, "classes", go.classes);
            m.text(gen_w, "size-weights", go.weights);
            m.text(gen_fmt, "image-format", go.format);
            return run_gen(go);
        }
        if (infer->parsed()) {
            const ConfigFile cf = maybe_load_config(io.config);
            const Merge m{cf};
            m.text(inf_data, "data", io.data);
            m.text(inf_weights, "weights", io.weights);
            m.text(inf_savew, "save-weights", io.save_weights);
            m.text(inf_out, "out", io.out);
            m.u64(inf_seed, "seed", io.seed);
            m.integer(inf_size, "input-size", io.input_size);
            m.real(inf_width, "width", io.width);
            m.integer(inf_fuse, "fusion-channels", io.fusion_channels);
            m.text(inf_nms, "nms", io.nms);
            m.real(inf_sigma, "sigma", io.sigma);
            m.real(inf_nt, "nt", io.nt);
            m.real(inf_floor, "score-floor", io.score_floor);
            m.real(inf_iou, "iou-threshold", io.iou_threshold);
            m.integer(inf_topk, "pre-nms-topk", io.topk);
            return run_infer(io);
        }
        if (eval->parsed()) {
            const ConfigFile cf = maybe_load_config(eo.config);
            const Merge m{cf};
            m.text(ev_data, "data", eo.data);
            m.text(ev_ann, "annotations", eo.annotations);
            m.text(ev_dets, "dets", eo.dets);
            m.text(ev_out, "out", eo.out);
            m.text(ev_csv, "csv", eo.csv);
            m.real(ev_iou, "iou-threshold", eo.iou_threshold);
            return run_eval(eo);
        }
        if (self->parsed()) {
            const ConfigFile cf = maybe_load_config(so.config);
            const Merge m{cf};
            m.u64(st_seed, "seed", so.seed);
            m.real(st_sigma, "sigma", so.sigma);
            m.real(st_nt, "nt", so.nt);
            m.real(st_floor, "score-floor", so.score_floor);
            m.integer(st_ap, "ap-scenarios", so.ap_scenarios);
            m.integer(st_nms, "nms-sets", so.nms_sets);
            m.integer(st_size, "input-size", so.input_size);
            return run_selftest(so);
        }
        if (bench->parsed()) {
            const ConfigFile cf = maybe_load_config(bo.config);
            const Merge m{cf};
            m.u64(be_seed, "seed", bo.seed);
            m.integer(be_size, "input-size", bo.input_size);
            m.integer(be_n, "nms-n", bo.nms_n);
            return run_bench(bo);
        }
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace smallobj
