/*
 * Per-point change-detection metrics against labeled ground truth, and the
 * on-disk run report (metrics + correspondences + per-segment clouds +
 * match matrix). Reports are byte-stable: same inputs, same bytes.
 */
#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <vector>

#include "json.hpp"

#include "deltamap/descriptor.hpp"
#include "deltamap/geometry.hpp"
#include "deltamap/grouping.hpp"

namespace deltamap {

struct ConfusionCounts {
    size_t tp = 0, fp = 0, tn = 0, fn = 0;
    size_t total() const { return tp + fp + tn + fn; }
};

// Evaluates every labeled mission point: predicted-positive iff within
// match_radius of any predicted-change point, ground-truth-positive iff its
// label is in gt_changed_ids. Points carrying a label in exclude_labels
// (floor and walls by default) are skipped entirely.
ConfusionCounts label_points(const PointCloud& predicted_change,
                             const PointCloud& full_mission,
                             const std::set<uint32_t>& gt_changed_ids,
                             double match_radius = 0.05,
                             const std::set<uint32_t>& exclude_labels = {0});

// Ratios that come out 0/0 are left unset ("undefined"), never forced to 0.
struct MetricsReport {
    ConfusionCounts counts;
    std::optional<double> precision;    // tp / (tp + fp)
    std::optional<double> recall;       // tp / (tp + fn)
    std::optional<double> specificity;  // tn / (tn + fp)
    std::optional<double> f_score;      // 2PR / (P + R)
    std::optional<double> iou;          // tp / (tp + fp + fn)
};

MetricsReport compute_metrics(const ConfusionCounts& c);

// Stable key order; undefined ratios serialize as the string "undefined".
nlohmann::ordered_json metrics_to_json(const MetricsReport& m);

struct ChangeReport {
    std::vector<DescribedObject> objects_a;
    std::vector<DescribedObject> objects_b;
    AssignResult assignment;
    ClusterConfidence cluster_conf;
    std::optional<MetricsReport> metrics;
};

// Writes into out_dir (created if absent):
//   report.json        correspondences with transforms and confidences
//   metrics.json       only when metrics are present
//   match_matrix.csv   header `classA_id, classB_id, confidence`
//   segments/          one PLY per object, indexed by segments/index.json
void write_report(const ChangeReport& report,
                  const std::filesystem::path& out_dir);

}  // namespace deltamap
