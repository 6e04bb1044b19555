#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "kbdm/rng.hpp"
#include "kbdm/tensor.hpp"

namespace kbdm {

constexpr std::size_t kImageSize = 32;
constexpr std::size_t kJointCount = 5;

inline const std::array<const char*, kJointCount>& joint_names() {
    static const std::array<const char*, kJointCount> names = {
        "head", "hand1", "hand2", "foot1", "foot2"};
    return names;
}

struct Point {
    double x = 0.0;
    double y = 0.0;
};

/// Pose archetype: named template of 5 joints (head, two hands, two feet) on
/// the 32x32 canvas, asymmetric so orientation mirroring is visible.
struct Archetype {
    std::string name;
    std::array<Point, kJointCount> joints;
};

// Templates occupy deliberately different canvas regions so pose classes stay
// separable after patch quantization: standing fills the center column,
// sitting crouches bottom-left, waving leans top-right, kicking stretches on
// a wide diagonal.
inline const std::vector<Archetype>& archetypes() {
    static const std::vector<Archetype> table = {
        {"standing", {{{16, 4}, {11, 14}, {21, 10}, {12, 28}, {20, 28}}}},
        {"sitting", {{{6, 12}, {12, 16}, {2, 18}, {16, 27}, {24, 22}}}},
        {"waving", {{{22, 5}, {29, 2}, {16, 14}, {19, 28}, {26, 26}}}},
        {"kicking", {{{6, 8}, {2, 15}, {16, 9}, {28, 12}, {10, 28}}}},
    };
    return table;
}

inline const std::vector<std::string>& orientations() {
    static const std::vector<std::string> table = {"right-facing", "left-facing"};
    return table;
}

inline std::size_t archetype_id(const std::string& name) {
    const auto& table = archetypes();
    for (std::size_t i = 0; i < table.size(); ++i)
        if (table[i].name == name) return i;
    throw ConfigError("unknown pose archetype: " + name);
}

inline std::size_t orientation_id(const std::string& name) {
    const auto& table = orientations();
    for (std::size_t i = 0; i < table.size(); ++i)
        if (table[i] == name) return i;
    throw ConfigError("unknown orientation: " + name);
}

// Template joints after orientation (left-facing mirrors x) and uniform
// scaling about the canvas center.
inline std::array<Point, kJointCount> oriented_template(std::size_t archetype,
                                                        std::size_t orientation,
                                                        double scale = 1.0) {
    if (!(scale > 0.0)) throw ConfigError("scale must be positive");
    std::array<Point, kJointCount> joints = archetypes().at(archetype).joints;
    if (orientation == 1) {
        for (Point& p : joints) p.x = static_cast<double>(kImageSize - 1) - p.x;
    }
    const double c = static_cast<double>(kImageSize - 1) / 2.0;
    for (Point& p : joints) {
        p.x = c + scale * (p.x - c);
        p.y = c + scale * (p.y - c);
    }
    return joints;
}

inline std::string scale_label(double scale) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scale-%03lld",
                  static_cast<long long>(std::lround(scale * 100.0)));
    return buf;
}

// Skeleton bones: spine head->pelvis, arms from the neck, legs from the
// pelvis. Neck and pelvis are derived points, not keypoints.
inline std::vector<std::pair<Point, Point>> skeleton_bones(const std::array<Point, kJointCount>& j) {
    const Point feet_mid{(j[3].x + j[4].x) / 2.0, (j[3].y + j[4].y) / 2.0};
    const Point pelvis{j[0].x + 0.62 * (feet_mid.x - j[0].x), j[0].y + 0.62 * (feet_mid.y - j[0].y)};
    const Point neck{j[0].x + 0.25 * (feet_mid.x - j[0].x), j[0].y + 0.25 * (feet_mid.y - j[0].y)};
    return {
        {j[0], pelvis},  // spine
        {neck, j[1]},    // arms
        {neck, j[2]},
        {pelvis, j[3]},  // legs
        {pelvis, j[4]},
    };
}

// 1-px integer Bresenham line.
inline void draw_line(Tensor& image, const Point& a, const Point& b, double value = 1.0) {
    int x0 = static_cast<int>(std::lround(a.x)), y0 = static_cast<int>(std::lround(a.y));
    int x1 = static_cast<int>(std::lround(b.x)), y1 = static_cast<int>(std::lround(b.y));
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        if (y0 >= 0 && y0 < static_cast<int>(image.rows()) && x0 >= 0 &&
            x0 < static_cast<int>(image.cols())) {
            image.at(static_cast<std::size_t>(y0), static_cast<std::size_t>(x0)) = value;
        }
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

inline double point_segment_distance(double px, double py, const Point& a, const Point& b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
    t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
    const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

// Anti-aliased stroke: full intensity within half_width of the centerline,
// linear falloff over one further pixel.
inline void draw_soft_segment(Tensor& image, const Point& a, const Point& b, double half_width,
                              double value = 1.0) {
    const int r0 = static_cast<int>(std::floor(std::min(a.y, b.y) - half_width - 1.5));
    const int r1 = static_cast<int>(std::ceil(std::max(a.y, b.y) + half_width + 1.5));
    const int c0 = static_cast<int>(std::floor(std::min(a.x, b.x) - half_width - 1.5));
    const int c1 = static_cast<int>(std::ceil(std::max(a.x, b.x) + half_width + 1.5));
    for (int r = std::max(0, r0); r <= std::min(static_cast<int>(image.rows()) - 1, r1); ++r) {
        for (int c = std::max(0, c0); c <= std::min(static_cast<int>(image.cols()) - 1, c1); ++c) {
            const double d = point_segment_distance(c, r, a, b);
            const double v = value * std::min(1.0, std::max(0.0, half_width + 1.0 - d));
            auto& px = image.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            px = std::max(px, v);
        }
    }
}

inline void draw_soft_disk(Tensor& image, const Point& center, double radius) {
    draw_soft_segment(image, center, center, radius);
}

struct SyntheticSample {
    Tensor image;       // [32 x 32] in [0,1]
    Tensor pose_image;  // [32 x 32], > 0 exactly on skeleton pixels
    std::vector<Point> keypoints;
    std::vector<std::string> labels;  // [archetype, orientation(, scale)]
    std::size_t archetype = 0;
    std::size_t orientation = 0;
    double scale = 1.0;
};

// Body: 3-px-thick soft strokes along the bones plus bright mass at the
// head/hands/feet. Limbs render dimmer than joints so each joint is the
// locally brightest blob, which keeps keypoint extraction well conditioned.
inline Tensor render_body(const std::array<Point, kJointCount>& joints) {
    Tensor image({kImageSize, kImageSize});
    for (const auto& [a, b] : skeleton_bones(joints)) draw_soft_segment(image, a, b, 0.5, 0.55);
    draw_soft_disk(image, joints[0], 1.8);  // head
    for (std::size_t j = 1; j < kJointCount; ++j) draw_soft_disk(image, joints[j], 1.2);
    return image;
}

inline Tensor render_pose(const std::array<Point, kJointCount>& joints) {
    Tensor pose({kImageSize, kImageSize});
    for (const auto& [a, b] : skeleton_bones(joints)) draw_line(pose, a, b);
    return pose;
}

struct CorpusConfig {
    int count = 200;
    std::uint64_t seed = 7;
    std::vector<std::string> archetype_names = {"standing", "sitting", "waving", "kicking"};
    std::vector<std::string> orientation_names = {"right-facing", "left-facing"};
    std::vector<double> scales = {1.0};
    int jitter_px = 2;
};

inline SyntheticSample make_sample(std::size_t archetype, std::size_t orientation, double scale,
                                   Rng rng, int jitter_px, bool label_scale = false) {
    std::array<Point, kJointCount> joints = oriented_template(archetype, orientation, scale);
    for (Point& p : joints) {
        if (jitter_px > 0) {
            const std::uint64_t span = static_cast<std::uint64_t>(2 * jitter_px + 1);
            p.x += static_cast<double>(static_cast<long long>(rng.next_below(span)) - jitter_px);
            p.y += static_cast<double>(static_cast<long long>(rng.next_below(span)) - jitter_px);
        }
        p.x = std::min(std::max(p.x, 1.0), static_cast<double>(kImageSize) - 2.0);
        p.y = std::min(std::max(p.y, 1.0), static_cast<double>(kImageSize) - 2.0);
    }
    SyntheticSample s;
    s.archetype = archetype;
    s.orientation = orientation;
    s.scale = scale;
    s.labels = {archetypes()[archetype].name, orientations()[orientation]};
    if (label_scale) s.labels.push_back(scale_label(scale));
    s.keypoints.assign(joints.begin(), joints.end());
    s.pose_image = render_pose(joints);
    s.image = render_body(joints);
    return s;
}

// Deterministic per (config): label combinations round-robin, per-sample
// jitter from split rng streams. The scale component enters the labels only
// when more than one scale class is requested.
inline std::vector<SyntheticSample> generate_corpus(const CorpusConfig& cfg) {
    if (cfg.count < 1) throw ConfigError("generate_corpus: count must be >= 1");
    struct Combo {
        std::size_t archetype, orientation;
        double scale;
    };
    std::vector<Combo> combos;
    for (const std::string& a : cfg.archetype_names)
        for (const std::string& o : cfg.orientation_names)
            for (double s : cfg.scales) {
                if (!(s > 0.0)) throw ConfigError("generate_corpus: scales must be positive");
                combos.push_back({archetype_id(a), orientation_id(o), s});
            }
    if (combos.empty()) throw ConfigError("generate_corpus: no label combinations");
    const bool label_scale = cfg.scales.size() > 1;
    Rng root(cfg.seed);
    std::vector<SyntheticSample> corpus;
    corpus.reserve(static_cast<std::size_t>(cfg.count));
    for (int i = 0; i < cfg.count; ++i) {
        const Combo& c = combos[static_cast<std::size_t>(i) % combos.size()];
        corpus.push_back(make_sample(c.archetype, c.orientation, c.scale,
                                     root.split(static_cast<std::uint64_t>(i)), cfg.jitter_px,
                                     label_scale));
    }
    return corpus;
}

/// Extracted joint estimate; ok=false marks a detection failure.
struct ExtractedJoint {
    double x = 0.0;
    double y = 0.0;
    bool ok = false;
};

// Joint localization for the evaluation harness. For each joint, integer
// offsets up to +/-3 around the oriented template position are scanned for the
// 5x5 window with the most brightness *above half the local peak* — limbs
// render dimmer than joint blobs, so this mass concentrates on the joints and
// a mid-limb window cannot outscore one centred on the joint. A pixel only
// contributes to a joint's score if it lies no closer to a different joint's
// template position, so a bright neighbouring joint (e.g. the larger head blob
// next to a hand) can never dominate the search or drag the estimate.
// The estimate is the thresholded-intensity centroid of the best window.
inline std::vector<ExtractedJoint> extract_keypoints(const Tensor& image, std::size_t archetype,
                                                     std::size_t orientation, double scale = 1.0) {
    const auto joints = oriented_template(archetype, orientation, scale);
    std::vector<ExtractedJoint> out(kJointCount);
    const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
    for (std::size_t j = 0; j < kJointCount; ++j) {
        const int tx = static_cast<int>(std::lround(joints[j].x));
        const int ty = static_cast<int>(std::lround(joints[j].y));
        double local_peak = 0.0;
        for (int r = ty - 5; r <= ty + 5; ++r) {
            for (int c = tx - 5; c <= tx + 5; ++c) {
                if (r < 0 || r >= h || c < 0 || c >= w) continue;
                local_peak =
                    std::max(local_peak, image.at(static_cast<std::size_t>(r),
                                                  static_cast<std::size_t>(c)));
            }
        }
        const double floor = 0.5 * local_peak;
        const auto mass = [&](int r, int c) {
            if (r < 0 || r >= h || c < 0 || c >= w) return 0.0;
            const double own = (joints[j].x - c) * (joints[j].x - c) +
                               (joints[j].y - r) * (joints[j].y - r);
            for (std::size_t k = 0; k < kJointCount; ++k) {
                if (k == j) continue;
                const double other = (joints[k].x - c) * (joints[k].x - c) +
                                     (joints[k].y - r) * (joints[k].y - r);
                if (other < own) return 0.0;
            }
            return std::max(0.0, image.at(static_cast<std::size_t>(r),
                                          static_cast<std::size_t>(c)) -
                                     floor);
        };
        double best_score = 0.0;
        int best_x = tx, best_y = ty;
        for (int dy = -3; dy <= 3; ++dy) {
            for (int dx = -3; dx <= 3; ++dx) {
                const int cx = tx + dx, cy = ty + dy;
                double score = 0.0;
                for (int r = cy - 2; r <= cy + 2; ++r)
                    for (int c = cx - 2; c <= cx + 2; ++c) score += mass(r, c);
                if (score > best_score) {
                    best_score = score;
                    best_x = cx;
                    best_y = cy;
                }
            }
        }
        if (best_score < 1e-6) continue;  // blank neighborhood: detection failure
        double wx = 0.0, wy = 0.0, wsum = 0.0;
        for (int r = best_y - 2; r <= best_y + 2; ++r) {
            for (int c = best_x - 2; c <= best_x + 2; ++c) {
                const double v = mass(r, c);
                wx += v * c;
                wy += v * r;
                wsum += v;
            }
        }
        out[j] = ExtractedJoint{wx / wsum, wy / wsum, true};
    }
    return out;
}

}  // namespace kbdm
