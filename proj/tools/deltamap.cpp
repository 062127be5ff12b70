/*
 * deltamap: batch change detection between LiDAR missions.
 *
 * Subcommands:
 *   simulate   build two synthetic missions from a scene + change script
 *   align      register missions into one frame and merge them
 *   detect     full change-detection pipeline between two missions
 *   evaluate   per-point metrics of a detect run against ground truth
 *   describe   segment a cloud and export object descriptors
 *   match      correspondences between two exported descriptor sets
 */
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "deltamap/alignment.hpp"
#include "deltamap/cloud_io.hpp"
#include "deltamap/evaluation.hpp"
#include "deltamap/json_util.hpp"
#include "deltamap/pipeline.hpp"
#include "deltamap/scenegen.hpp"

namespace dm = deltamap;
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json load_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return json::parse(in);
}

void write_json(const ordered_json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

dm::PipelineConfig load_config(const std::string& path) {
    if (path.empty()) return {};
    return dm::config_from_json(load_json(path));
}

dm::LidarModel parse_lidar(const std::string& spec) {
    if (spec.size() > 5 && spec.substr(spec.size() - 5) == ".json") {
        const json j = load_json(spec);
        dm::reject_unknown_keys(j,
                                {"channels", "vertical_fov_deg",
                                 "horizontal_resolution_deg", "max_range",
                                 "range_sigma"},
                                "lidar");
        dm::LidarModel m;
        m.channels = j.value("channels", m.channels);
        m.vertical_fov_deg = j.value("vertical_fov_deg", m.vertical_fov_deg);
        m.horizontal_resolution_deg =
            j.value("horizontal_resolution_deg", m.horizontal_resolution_deg);
        m.max_range = j.value("max_range", m.max_range);
        m.range_sigma = j.value("range_sigma", m.range_sigma);
        m.check_invariants();
        return m;
    }
    return dm::lidar_preset(spec);
}

struct SimulateArgs {
    std::string scene_file, script_file, out_dir;
    std::string lidar = "os0-128-like";
    int poses = 20;
    double height = 1.2;
    double rx = 0.0, ry = 0.0;
    uint64_t seed = 1;
    double odom_sigma_trans = 0.0, odom_sigma_rot = 0.0;
};

int cmd_simulate(const SimulateArgs& a) {
    const dm::SceneSpec spec_a = dm::scene_spec_from_json(load_json(a.scene_file));
    const dm::ChangeScript script =
        dm::change_script_from_json(load_json(a.script_file));
    const auto [spec_b, gt_ids] = dm::apply_changes(spec_a, script);
    const dm::LidarModel lidar = parse_lidar(a.lidar);

    const dm::Scene scene_a = dm::build_scene(spec_a);
    const dm::Scene scene_b = dm::build_scene(spec_b);
    for (const auto& w : scene_a.warnings) std::cerr << "[scene] " << w << "\n";

    const auto traj =
        dm::ellipse_trajectory(spec_a.extent, a.poses, a.height, a.rx, a.ry);
    const auto mission_a =
        dm::generate_mission(scene_a, traj, lidar, a.seed, "mission_a",
                             a.odom_sigma_trans, a.odom_sigma_rot);
    const auto mission_b = dm::generate_mission(
        scene_b, traj, lidar, a.seed + 1, "mission_b", a.odom_sigma_trans,
        a.odom_sigma_rot);

    const fs::path out(a.out_dir);
    dm::save_mission(mission_a, out / "mission_a");
    dm::save_mission(mission_b, out / "mission_b");

    ordered_json gt;
    gt["changed_ids"] = gt_ids;
    gt["scene_a"] = dm::scene_spec_to_json(spec_a);
    gt["scene_b"] = dm::scene_spec_to_json(spec_b);
    write_json(gt, out / "ground_truth.json");

    std::cout << "missions written to " << out.string() << " ("
              << mission_a.nodes.size() << " poses, "
              << gt_ids.size() << " changed objects)\n";
    return 0;
}

int cmd_align(const std::vector<std::string>& mission_dirs,
              const std::string& out_dir, const std::string& config_file) {
    const dm::PipelineConfig cfg = load_config(config_file);
    std::vector<dm::MissionTrajectory> missions;
    for (size_t i = 0; i < mission_dirs.size(); ++i)
        missions.push_back(
            dm::load_mission(mission_dirs[i], "mission_" + std::to_string(i)));

    dm::AlignParams ap;
    ap.loop_radius = cfg.align.loop_radius;
    ap.icp.max_iter = cfg.align.icp_max_iter;
    ap.icp.corr_dist = cfg.align.icp_corr_dist;
    ap.icp_voxel_leaf = cfg.align.voxel_leaf;
    ap.accept_min_inlier_fraction = cfg.align.min_inlier_fraction;
    ap.accept_max_rms = cfg.align.max_rms;
    const dm::AlignResult result = dm::align_missions(missions, ap);

    const fs::path out(out_dir);
    fs::create_directories(out);
    ordered_json closures = ordered_json::array();
    for (const auto& c : result.closures)
        closures.push_back({{"mission_a", c.mission_a},
                            {"node_a", c.node_a},
                            {"mission_b", c.mission_b},
                            {"node_b", c.node_b},
                            {"rms", c.rms},
                            {"inlier_fraction", c.inlier_fraction},
                            {"accepted", c.accepted}});
    ordered_json summary;
    summary["closures"] = std::move(closures);
    summary["initial_error"] = result.report.initial_error;
    summary["final_error"] = result.report.final_error;
    summary["iterations"] = result.report.iterations;
    write_json(summary, out / "alignment.json");

    for (size_t i = 0; i < missions.size(); ++i) {
        const std::string tag = std::to_string(i);
        dm::save_trajectory_poses(result.graph.trajectories[i],
                                  out / ("poses_" + tag + ".txt"));
        dm::save_cloud(result.merged[i], out / ("merged_" + tag + ".ply"),
                       dm::CloudFormat::PlyBinary);
    }
    std::cout << "aligned " << missions.size() << " missions, error "
              << result.report.initial_error << " -> "
              << result.report.final_error << "\n";
    return 0;
}

int cmd_detect(const std::string& dir_a, const std::string& dir_b,
               const std::string& out_dir, const std::string& config_file,
               int observed_both) {
    dm::PipelineConfig cfg = load_config(config_file);
    if (observed_both >= 0) cfg.diff.require_observed_both = observed_both != 0;

    const auto mission_a = dm::load_mission(dir_a, "mission_a");
    const auto mission_b = dm::load_mission(dir_b, "mission_b");
    const dm::DetectResult result = dm::run_detect(mission_a, mission_b, cfg);

    for (const auto& line : result.log) std::cerr << line << "\n";

    const fs::path out(out_dir);
    fs::create_directories(out);
    write_json(dm::config_to_json(cfg), out / "effective_config.json");
    dm::write_report(dm::make_change_report(result), out);
    dm::save_cloud(result.changed_a, out / "changed_a.ply",
                   dm::CloudFormat::PlyBinary);
    dm::save_cloud(result.changed_b, out / "changed_b.ply",
                   dm::CloudFormat::PlyBinary);
    dm::save_cloud(dm::changeset_to_cloud(result.changes),
                   out / "changed_voxels.ply", dm::CloudFormat::PlyBinary);
    dm::save_cloud(result.merged_a, out / "merged_a.ply",
                   dm::CloudFormat::PlyBinary);
    dm::save_cloud(result.merged_b, out / "merged_b.ply",
                   dm::CloudFormat::PlyBinary);

    ordered_json timings = ordered_json::array();
    for (const auto& t : result.timings)
        timings.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
    write_json(timings, out / "timings.json");
    for (const auto& t : result.timings) {
        char line[128];
        std::snprintf(line, sizeof(line), "%-12s %8.3f s", t.stage.c_str(),
                      t.seconds);
        std::cerr << line << "\n";
    }

    std::cout << result.assignment.correspondences.size()
              << " correspondences, " << result.changes.added.size()
              << " added / " << result.changes.removed.size()
              << " removed voxels\n";
    return 0;
}

int cmd_evaluate(const std::string& report_dir, const std::string& gt_dir,
                 const std::string& config_file) {
    const dm::PipelineConfig cfg = load_config(config_file);
    const fs::path report(report_dir), gt(gt_dir);

    const json gt_json = load_json(gt / "ground_truth.json");
    std::set<uint32_t> gt_ids;
    for (const auto& v : gt_json.at("changed_ids")) gt_ids.insert(v.get<uint32_t>());

    const auto changed_a = dm::load_cloud(report / "changed_a.ply");
    const auto changed_b = dm::load_cloud(report / "changed_b.ply");
    const auto merged_a = dm::load_cloud(report / "merged_a.ply");
    const auto merged_b = dm::load_cloud(report / "merged_b.ply");

    dm::ConfusionCounts counts;
    const std::pair<const dm::PointCloud*, const dm::PointCloud*> sides[] = {
        {&changed_a, &merged_a}, {&changed_b, &merged_b}};
    for (const auto& [predicted, mission] : sides) {
        const auto c = dm::label_points(*predicted, *mission, gt_ids,
                                        cfg.evaluation.match_radius,
                                        cfg.evaluation.exclude_labels);
        counts.tp += c.tp;
        counts.fp += c.fp;
        counts.tn += c.tn;
        counts.fn += c.fn;
    }
    const dm::MetricsReport metrics = dm::compute_metrics(counts);
    write_json(dm::metrics_to_json(metrics), report / "metrics.json");

    auto cell = [](const std::optional<double>& v) {
        char buf[32];
        if (v)
            std::snprintf(buf, sizeof(buf), "%9.4f", *v);
        else
            std::snprintf(buf, sizeof(buf), "%9s", "undef");
        return std::string(buf);
    };
    std::cout << "precision    recall  specific   f-score       iou\n"
              << cell(metrics.precision) << " " << cell(metrics.recall) << " "
              << cell(metrics.specificity) << " " << cell(metrics.f_score) << " "
              << cell(metrics.iou) << "\n";
    return 0;
}

int cmd_describe(const std::string& cloud_file, const std::string& out_file,
                 double tol, size_t min_size, double voxel) {
    dm::PointCloud cloud = dm::load_cloud(cloud_file);
    if (voxel > 0.0) cloud = dm::voxel_downsample(cloud, voxel);
    const auto segments = dm::euclidean_cluster(cloud, tol, min_size, 0, 0, 1);
    if (segments.empty()) throw std::runtime_error("no segments found");
    const auto objects = dm::describe_all(segments);
    dm::export_descriptors(objects, out_file);
    std::cout << objects.size() << " descriptors written to " << out_file << "\n";
    return 0;
}

int cmd_match(const std::string& file_a, const std::string& file_b,
              const std::string& out_dir, double alpha, double beta, int k_max,
              uint64_t seed) {
    if (alpha != 0.0)
        throw std::runtime_error(
            "descriptor files carry no geometry; the physical weight must be 0 "
            "(pass --alpha 0)");
    const auto rows_a = dm::import_descriptors(file_a);
    const auto rows_b = dm::import_descriptors(file_b);
    if (rows_a.empty() && rows_b.empty())
        throw std::runtime_error("both descriptor files are empty");

    auto as_objects = [](const std::vector<std::pair<uint32_t, dm::Descriptor>>& rows,
                         int mission) {
        std::vector<dm::DescribedObject> out;
        for (const auto& [id, desc] : rows) {
            dm::DescribedObject obj;
            obj.segment.mission = mission;
            obj.segment.id = id;
            obj.descriptor = desc;
            out.push_back(std::move(obj));
        }
        return out;
    };
    const auto objects_a = as_objects(rows_a, 0);
    const auto objects_b = as_objects(rows_b, 1);

    std::vector<dm::DescriptorVector> all;
    for (const auto& o : objects_a) all.push_back(o.descriptor.values);
    for (const auto& o : objects_b) all.push_back(o.descriptor.values);
    const int k_cap = std::min<int>(k_max, static_cast<int>(all.size()));
    const auto elbow = dm::select_k_elbow(all, k_cap, seed);
    const auto clustering = dm::kmeans(all, elbow.k_star, seed);

    // Matched pairs would need real point clouds to register; descriptor
    // files only support grouping, so transforms are skipped.
    auto result = dm::assign_correspondences(objects_a, objects_b, clustering,
                                             alpha, beta);
    for (auto& c : result.correspondences) c.transform.reset();

    dm::ChangeReport report;
    report.objects_a = objects_a;
    report.objects_b = objects_b;
    report.assignment = std::move(result);
    report.cluster_conf = dm::cluster_confidence(clustering, all);
    dm::write_report(report, out_dir);
    std::cout << report.assignment.correspondences.size()
              << " correspondences written to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"object-level LiDAR change detection"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "cap worker threads (0 = hardware)");

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "generate two synthetic missions");
    simulate->add_option("scene", sim.scene_file, "scene JSON")->required();
    simulate->add_option("script", sim.script_file, "change script JSON")->required();
    simulate->add_option("out", sim.out_dir, "output directory")->required();
    simulate->add_option("--lidar", sim.lidar, "preset name or JSON file");
    simulate->add_option("--poses", sim.poses, "poses per mission");
    simulate->add_option("--height", sim.height, "sensor height [m]");
    simulate->add_option("--rx", sim.rx, "trajectory ellipse x radius [m]");
    simulate->add_option("--ry", sim.ry, "trajectory ellipse y radius [m]");
    simulate->add_option("--seed", sim.seed, "simulation seed");
    simulate->add_option("--odom-sigma-trans", sim.odom_sigma_trans,
                         "odometry noise per step [m]");
    simulate->add_option("--odom-sigma-rot", sim.odom_sigma_rot,
                         "odometry noise per step [rad]");

    std::vector<std::string> align_dirs;
    std::string align_out, align_config;
    auto* align = app.add_subcommand("align", "register missions into one frame");
    align->add_option("missions", align_dirs, "mission directories")
        ->required()
        ->expected(2, -1);
    align->add_option("--out", align_out, "output directory")->required();
    align->add_option("--config", align_config, "pipeline config JSON");

    std::string det_a, det_b, det_out, det_config;
    bool det_ob_on = false, det_ob_off = false;
    auto* detect = app.add_subcommand("detect", "detect changes between two missions");
    detect->add_option("mission_a", det_a, "mission A directory")->required();
    detect->add_option("mission_b", det_b, "mission B directory")->required();
    detect->add_option("--out", det_out, "output directory")->required();
    detect->add_option("--config", det_config, "pipeline config JSON");
    auto* det_ob_on_flag = detect->add_flag(
        "--changes-require-observed-both", det_ob_on,
        "count only voxels observed by both missions (default on)");
    detect
        ->add_flag("--changes-anywhere", det_ob_off,
                   "count voxels one mission never observed as changed")
        ->excludes(det_ob_on_flag);

    std::string eval_report, eval_gt, eval_config;
    auto* evaluate = app.add_subcommand("evaluate", "score a detect run against ground truth");
    evaluate->add_option("report", eval_report, "detect output directory")->required();
    evaluate->add_option("truth", eval_gt, "simulate output directory")->required();
    evaluate->add_option("--config", eval_config, "pipeline config JSON");

    std::string desc_cloud, desc_out;
    double desc_tol = 0.1, desc_voxel = 0.05;
    size_t desc_min = 30;
    auto* describe = app.add_subcommand("describe", "segment a cloud and export descriptors");
    describe->add_option("cloud", desc_cloud, "input point cloud")->required();
    describe->add_option("out", desc_out, "descriptor text file")->required();
    describe->add_option("--cluster-tol", desc_tol, "clustering tolerance [m]");
    describe->add_option("--min-size", desc_min, "minimum segment size");
    describe->add_option("--voxel", desc_voxel, "downsample leaf [m], 0 = off");

    std::string match_a, match_b, match_out;
    double match_alpha = 0.0, match_beta = 1.0;
    int match_kmax = 10;
    uint64_t match_seed = 1;
    auto* match = app.add_subcommand("match", "correspondences between descriptor sets");
    match->add_option("descriptors_a", match_a, "descriptor file A")->required();
    match->add_option("descriptors_b", match_b, "descriptor file B")->required();
    match->add_option("--out", match_out, "output directory")->required();
    match->add_option("--alpha", match_alpha, "physical-distance weight");
    match->add_option("--beta", match_beta, "descriptor-distance weight");
    match->add_option("--k-max", match_kmax, "largest K for the elbow sweep");
    match->add_option("--seed", match_seed, "clustering seed");

    CLI11_PARSE(app, argc, argv);
    if (threads > 0) dm::set_max_threads(threads);

    try {
        if (*simulate) return cmd_simulate(sim);
        if (*align) return cmd_align(align_dirs, align_out, align_config);
        if (*detect)
            return cmd_detect(det_a, det_b, det_out, det_config,
                              det_ob_on ? 1 : det_ob_off ? 0 : -1);
        if (*evaluate) return cmd_evaluate(eval_report, eval_gt, eval_config);
        if (*describe)
            return cmd_describe(desc_cloud, desc_out, desc_tol, desc_min, desc_voxel);
        if (*match)
            return cmd_match(match_a, match_b, match_out, match_alpha, match_beta,
                             match_kmax, match_seed);
    } catch (const std::exception& e) {
        std::cerr << "deltamap: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
