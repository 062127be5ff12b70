#include "deltamap/evaluation.hpp"

#include <cstdio>
#include <fstream>
#include <string>

#include "deltamap/cloud_io.hpp"
#include "deltamap/common.hpp"
#include "deltamap/neighbor_grid.hpp"

namespace deltamap {

ConfusionCounts label_points(const PointCloud& predicted_change,
                             const PointCloud& full_mission,
                             const std::set<uint32_t>& gt_changed_ids,
                             double match_radius,
                             const std::set<uint32_t>& exclude_labels) {
    require(match_radius > 0.0, "label_points: match_radius must be positive");
    require(full_mission.has_labels() || full_mission.empty(),
            "label_points: mission cloud carries no labels");

    std::optional<NeighborGrid> grid;
    if (!predicted_change.empty())
        grid.emplace(predicted_change.points, match_radius);

    ConfusionCounts counts;
    for (size_t i = 0; i < full_mission.size(); ++i) {
        const uint32_t label = full_mission.labels[i];
        if (exclude_labels.count(label)) continue;
        const bool gt_positive = gt_changed_ids.count(label) > 0;
        const bool predicted =
            grid && grid->has_neighbor_within(full_mission.points[i], match_radius);
        if (predicted) {
            if (gt_positive)
                ++counts.tp;
            else
                ++counts.fp;
        } else {
            if (gt_positive)
                ++counts.fn;
            else
                ++counts.tn;
        }
    }
    return counts;
}

MetricsReport compute_metrics(const ConfusionCounts& c) {
    MetricsReport m;
    m.counts = c;
    auto ratio = [](size_t num, size_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    m.specificity = ratio(c.tn, c.tn + c.fp);
    m.iou = ratio(c.tp, c.tp + c.fp + c.fn);
    if (m.precision && m.recall && *m.precision + *m.recall > 0.0)
        m.f_score = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    return m;
}

namespace {

nlohmann::ordered_json ratio_json(const std::optional<double>& v) {
    if (!v) return "undefined";
    return *v;
}

nlohmann::ordered_json transform_json(const RigidTransform& t) {
    const Eigen::Quaterniond q = t.quaternion();
    nlohmann::ordered_json j;
    j["qx"] = q.x();
    j["qy"] = q.y();
    j["qz"] = q.z();
    j["qw"] = q.w();
    j["tx"] = t.translation.x();
    j["ty"] = t.translation.y();
    j["tz"] = t.translation.z();
    return j;
}

const char* kind_name(Correspondence::Kind k) {
    switch (k) {
        case Correspondence::Kind::Moved: return "moved";
        case Correspondence::Kind::Added: return "added";
        default: return "removed";
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << body;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

nlohmann::ordered_json metrics_to_json(const MetricsReport& m) {
    nlohmann::ordered_json j;
    j["counts"]["tp"] = m.counts.tp;
    j["counts"]["fp"] = m.counts.fp;
    j["counts"]["tn"] = m.counts.tn;
    j["counts"]["fn"] = m.counts.fn;
    j["precision"] = ratio_json(m.precision);
    j["recall"] = ratio_json(m.recall);
    j["specificity"] = ratio_json(m.specificity);
    j["f_score"] = ratio_json(m.f_score);
    j["iou"] = ratio_json(m.iou);
    return j;
}

void write_report(const ChangeReport& report,
                  const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "segments");

    auto cluster_conf_of = [&](int cls) -> nlohmann::ordered_json {
        const auto idx = static_cast<size_t>(cls);
        if (idx >= report.cluster_conf.confidence.size() ||
            report.cluster_conf.degenerate)
            return "undefined";
        return report.cluster_conf.confidence[idx];
    };

    nlohmann::ordered_json j;
    j["correspondences"] = nlohmann::ordered_json::array();
    for (const auto& c : report.assignment.correspondences) {
        nlohmann::ordered_json e;
        e["kind"] = kind_name(c.kind);
        e["class"] = c.class_id;
        e["object_a"] = c.index_a
                            ? nlohmann::ordered_json(
                                  report.objects_a[*c.index_a].segment.id)
                            : nlohmann::ordered_json(nullptr);
        e["object_b"] = c.index_b
                            ? nlohmann::ordered_json(
                                  report.objects_b[*c.index_b].segment.id)
                            : nlohmann::ordered_json(nullptr);
        e["weighted_distance"] = c.weighted_dist;
        e["pair_confidence"] = c.pair_confidence;
        e["cluster_confidence"] = cluster_conf_of(c.class_id);
        e["transform"] = c.transform ? transform_json(c.transform->transform)
                                     : nlohmann::ordered_json(nullptr);
        if (c.transform) {
            e["transform_degenerate"] = c.transform->degenerate;
            e["registration_rms"] = c.transform->rms;
        }
        j["correspondences"].push_back(std::move(e));
    }

    nlohmann::ordered_json index;
    index["mission_a"] = nlohmann::ordered_json::array();
    index["mission_b"] = nlohmann::ordered_json::array();
    auto dump_side = [&](const std::vector<DescribedObject>& objs,
                         const char* prefix, nlohmann::ordered_json& list) {
        for (const auto& obj : objs) {
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%04u.ply", prefix,
                          obj.segment.id);
            save_cloud(obj.segment.cloud, out_dir / "segments" / name,
                       CloudFormat::PlyAscii);
            nlohmann::ordered_json e;
            e["id"] = obj.segment.id;
            e["file"] = std::string("segments/") + name;
            e["points"] = obj.segment.cloud.size();
            e["centroid"] = {obj.segment.centroid.x(), obj.segment.centroid.y(),
                             obj.segment.centroid.z()};
            list.push_back(std::move(e));
        }
    };
    dump_side(report.objects_a, "a", index["mission_a"]);
    dump_side(report.objects_b, "b", index["mission_b"]);

    std::string csv = "classA_id, classB_id, confidence\n";
    for (const auto& e : report.assignment.matrix.entries) {
        char row[128];
        std::snprintf(row, sizeof(row), "%u, %u, %.17g\n", e.object_a_id,
                      e.object_b_id, e.confidence);
        csv += row;
    }

    write_text_file(out_dir / "report.json", j.dump(2) + "\n");
    write_text_file(out_dir / "segments" / "index.json", index.dump(2) + "\n");
    write_text_file(out_dir / "match_matrix.csv", csv);
    if (report.metrics)
        write_text_file(out_dir / "metrics.json",
                        metrics_to_json(*report.metrics).dump(2) + "\n");
}

}  // namespace deltamap
