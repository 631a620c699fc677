use lpr_core::config::Config;
use lpr_core::correlation::{argmax_grid, correlate_direct, CorrelationSurface};
use lpr_core::descriptor::BevDescriptor;
use lpr_core::geometry::{transform_cloud, Point3, PointCloud, Pose2D};
use lpr_core::grid::Grid;
use lpr_core::pose_metrics::{rre, rte};
use lpr_core::search::*;
use lpr_core::synth::{generate_world, render_scan, Extent, SensorModel, WorldModel, WorldParams};

fn world(seed: u64) -> WorldModel {
    let extent = Extent {
        x_min: -40.0,
        x_max: 160.0,
        y_min: -40.0,
        y_max: 40.0,
    };
    generate_world(
        seed,
        &WorldParams {
            landmarks: (0.02 * extent.area()) as usize,
            extent,
            min_separation: 1.0,
            radius_min: 0.3,
            radius_max: 1.0,
            height_min: 3.0,
            height_max: 6.0,
            surface_density: 40.0,
        },
    )
    .unwrap()
}

fn scan(w: &WorldModel, pose: &Pose2D) -> PointCloud {
    render_scan(w, pose, &SensorModel::noiseless(40.0), 0)
}

/// References 30 m apart along x, far enough that their windows do not
/// overlap.
fn spaced_scans(w: &WorldModel, n: usize) -> Vec<(u64, PointCloud, Pose2D)> {
    (0..n)
        .map(|k| {
            let pose = Pose2D::new(30.0 * k as f64, 0.0, 15.0 * k as f64);
            (k as u64 + 10, scan(w, &pose), pose)
        })
        .collect()
}

fn empty_cloud() -> PointCloud {
    PointCloud::sensor(Vec::new())
}

#[test]
fn thinning_keeps_every_other_meter_scan() {
    let scans: Vec<_> = (0..10)
        .map(|k| (k, empty_cloud(), Pose2D::new(k as f64, 0.0, 0.0)))
        .collect();
    let index = build_reference_index(&scans, &Config::default()).unwrap();
    assert_eq!(index.ids(), &[0, 2, 4, 6, 8]);

    let mut builder = ReferenceIndexBuilder::new(&Config::default()).unwrap();
    for (id, cloud, pose) in &scans {
        builder.add(*id, cloud, *pose).unwrap();
    }
    assert_eq!(builder.finish().unwrap().ids(), &[0, 2, 4, 6, 8]);
}

#[test]
fn empty_and_duplicate_inputs_are_rejected() {
    assert!(build_reference_index(&[], &Config::default()).is_err());
    let scans = vec![
        (1, empty_cloud(), Pose2D::identity()),
        (1, empty_cloud(), Pose2D::new(5.0, 0.0, 0.0)),
    ];
    assert!(build_reference_index(&scans, &Config::default()).is_err());
    assert!(ReferenceIndexBuilder::new(&Config::default()).unwrap().finish().is_err());
}

#[test]
fn five_references_tile_three_by_two() {
    let scans: Vec<_> = (0..5)
        .map(|k| (k, empty_cloud(), Pose2D::new(10.0 * k as f64, 0.0, 0.0)))
        .collect();
    let index = build_reference_index(&scans, &Config::default()).unwrap();
    assert_eq!(index.tile_grid(), (2, 3));
    assert_eq!(index.tile_shape(), (60, 60));
    assert_eq!(index.mosaic().shape(), (120, 180));
    assert_eq!(tile_layout(1500), (39, 39));
    assert_eq!(tile_layout(1), (1, 1));
    assert_eq!(tile_layout(10), (3, 4));
    assert!((index.low_cell_size() - 2.0 * index.high_cell_size()).abs() < 1e-12);
}

#[test]
fn unused_tiles_stay_zero() {
    let w = world(1);
    let index = build_reference_index(&spaced_scans(&w, 5), &Config::default()).unwrap();
    let m = index.mosaic();
    assert!(m.sub_grid(60, 120, 60, 60).as_slice().iter().all(|&v| v == 0.0));
    let low = index.low_descriptor(12).unwrap();
    assert_eq!(low.grid, m.sub_grid(0, 120, 60, 60));
}

fn planted_surface(index: &ReferenceIndex, peaks: &[(usize, usize, f64)]) -> CorrelationSurface {
    let (rows, cols) = index.mosaic().shape();
    let mut values = Grid::zeros(rows, cols);
    for &(i, j, v) in peaks {
        values[(i, j)] = v;
    }
    CorrelationSurface { values, theta: 0.0 }
}

#[test]
fn single_tile_maximum_is_the_global_argmax() {
    let index = build_reference_index(&[(4, empty_cloud(), Pose2D::identity())], &Config::default()).unwrap();
    let s = planted_surface(&index, &[(3, 50, 2.0), (40, 7, 5.0), (59, 59, 4.0)]);
    let m = per_tile_maxima(&s, &index).unwrap();
    let (i, j, v) = argmax_grid(&s.values).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!(m[0].reference_id, 4);
    assert_eq!(m[0].score, v);
    assert_eq!(m[0].shift, (i as isize - 30, j as isize - 30));
}

#[test]
fn edge_peak_goes_to_the_lower_tile() {
    let scans: Vec<_> = (0..4)
        .map(|k| (k, empty_cloud(), Pose2D::new(10.0 * k as f64, 0.0, 0.0)))
        .collect();
    let index = build_reference_index(&scans, &Config::default()).unwrap();
    // row 60 is 30 cells from the centers of tile rows 0 and 1
    let s = planted_surface(&index, &[(60, 10, 7.0)]);
    let m = per_tile_maxima(&s, &index).unwrap();
    assert_eq!(m[0].score, 7.0);
    assert_eq!(m[0].shift, (30, -20));
    assert!(m[2].score < 7.0);
}

#[test]
fn planted_tile_maxima_match_brute_force() {
    let scans: Vec<_> = (0..4)
        .map(|k| (k, empty_cloud(), Pose2D::new(10.0 * k as f64, 0.0, 0.0)))
        .collect();
    let index = build_reference_index(&scans, &Config::default()).unwrap();
    let planted = [(5, 5, 3.0), (20, 100, 4.0), (100, 40, 1.5), (90, 95, 9.0), (70, 75, 2.0)];
    let s = planted_surface(&index, &planted);
    let m = per_tile_maxima(&s, &index).unwrap();
    // brute force: attribute every cell by explicit distance to all centers
    let centers = [(30.0, 30.0), (30.0, 90.0), (90.0, 30.0), (90.0, 90.0)];
    let mut best = [(f64::NEG_INFINITY, (0isize, 0isize)); 4];
    for i in 0..120 {
        for j in 0..120 {
            let ti = if (i as f64 - 30.0).abs() <= (i as f64 - 90.0).abs() { 0 } else { 1 };
            let tj = if (j as f64 - 30.0).abs() <= (j as f64 - 90.0).abs() { 0 } else { 1 };
            let t = ti * 2 + tj;
            let v = s.values[(i, j)];
            if v > best[t].0 {
                best[t] = (v, (i as isize - centers[t].0 as isize, j as isize - centers[t].1 as isize));
            }
        }
    }
    for t in 0..4 {
        assert_eq!((m[t].score, m[t].shift), best[t], "tile {t}");
    }
    assert_eq!(m[3].score, 9.0);
    assert_eq!(m[1].score, 4.0);
    assert_eq!(m[2].score, 1.5);
}

#[test]
fn tile_maxima_reject_wrong_surface_shape() {
    let index = build_reference_index(&[(4, empty_cloud(), Pose2D::identity())], &Config::default()).unwrap();
    let s = CorrelationSurface {
        values: Grid::zeros(10, 10),
        theta: 0.0,
    };
    assert!(per_tile_maxima(&s, &index).is_err());
}

fn lone_reference_index(w: &WorldModel, target: u64) -> ReferenceIndex {
    let scans: Vec<_> = (0..4u64)
        .map(|k| {
            let pose = Pose2D::new(30.0 * k as f64, 0.0, 0.0);
            let cloud = if k == target { scan(w, &pose) } else { empty_cloud() };
            (k, cloud, pose)
        })
        .collect();
    build_reference_index(&scans, &Config::default()).unwrap()
}

#[test]
fn global_search_finds_identical_tile() {
    let w = world(2);
    let index = lone_reference_index(&w, 2);
    let q = index.low_descriptor(2).unwrap();
    let c = global_search(&index, &q, 10.0, 2).unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!(c[0].reference_id, 2);
    assert_eq!(c[0].theta, 0.0);
    assert_eq!(c[0].shift, (0, 0));
    assert!(c[0].score >= c[1].score);
}

#[test]
fn global_search_reports_intra_tile_shift() {
    let w = world(3);
    let index = lone_reference_index(&w, 1);
    let tile = index.low_descriptor(1).unwrap();
    let mut grid = Grid::zeros(60, 60);
    for i in 0..57 {
        for j in 0..60 {
            grid[(i, j)] = tile.grid[(i + 3, j)];
        }
    }
    let q = BevDescriptor { grid, ..tile.clone() };
    let direct = correlate_direct(&q, &tile).unwrap();
    let (i, j, _) = argmax_grid(&direct.values).unwrap();
    let expected = (i as isize - 30, j as isize - 30);
    assert_eq!(expected, (3, 0));
    let c = global_search(&index, &q, 10.0, 1).unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].reference_id, 1);
    assert_eq!(c[0].theta, 0.0);
    assert_eq!(c[0].shift, expected);
}

#[test]
fn global_search_checks_inputs() {
    let w = world(3);
    let index = lone_reference_index(&w, 1);
    let tile = index.low_descriptor(1).unwrap();
    assert!(global_search(&index, &tile, 10.0, 0).is_err());
    let coarse = BevDescriptor {
        cell_size: 1.2,
        ..tile.clone()
    };
    assert!(global_search(&index, &coarse, 10.0, 2).is_err());
    let small = BevDescriptor {
        grid: Grid::zeros(30, 30),
        ..tile
    };
    assert!(global_search(&index, &small, 10.0, 2).is_err());
}

#[test]
fn candidate_lists_are_short_and_sorted() {
    let w = world(4);
    let scans = spaced_scans(&w, 5);
    let index = build_reference_index(&scans, &Config::default()).unwrap();
    let q = index.low_descriptor(12).unwrap();
    for n in 1..=7 {
        let c = global_search(&index, &q, 10.0, n).unwrap();
        assert_eq!(c.len(), n.min(5));
        assert!(c.windows(2).all(|p| p[0].score >= p[1].score));
        let mut ids: Vec<u64> = c.iter().map(|c| c.reference_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), c.len());
        for cand in &c {
            assert!(cand.shift.0.abs() < 60 && cand.shift.1.abs() < 60);
        }
    }
}

#[test]
fn local_search_identity_and_east_offset() {
    let w = world(5);
    let config = Config::default();
    let index = build_reference_index(&spaced_scans(&w, 3), &config).unwrap();
    let cand = |id| Candidate {
        reference_id: id,
        theta: 0.0,
        shift: (0, 0),
        score: 1.0,
    };
    let same = index.high_descriptor(11).unwrap().clone();
    let m = local_search(&index, &same, &[cand(11)], 10.0).unwrap();
    assert_eq!((m.reference_id, m.theta_match, m.shift), (11, 0.0, (0.0, 0.0)));

    // reference 10 sits at the origin with yaw 0, so east is the sensor x axis
    let cloud = scan(&w, &Pose2D::new(1.2, 0.0, 0.0));
    let q = localize_verbose(&index, &cloud, &config).unwrap().query;
    let m = local_search(&index, &q.high, &[cand(10)], 10.0).unwrap();
    assert_eq!(m.theta_match, 0.0);
    assert!((m.shift.0 - 1.2).abs() <= 0.3 + 1e-9, "x shift {}", m.shift.0);
    assert!(m.shift.1.abs() <= 0.3 + 1e-9, "y shift {}", m.shift.1);
}

#[test]
fn local_search_reranks_by_high_resolution_score() {
    let w = world(6);
    let config = Config::default();
    let index = build_reference_index(&spaced_scans(&w, 3), &config).unwrap();
    let q = index.high_descriptor(12).unwrap().clone();
    let cands = [
        Candidate {
            reference_id: 11,
            theta: 0.0,
            shift: (0, 0),
            score: 9.0,
        },
        Candidate {
            reference_id: 12,
            theta: 0.0,
            shift: (0, 0),
            score: 1.0,
        },
    ];
    let m = local_search(&index, &q, &cands, 10.0).unwrap();
    assert_eq!(m.reference_id, 12);
    assert_eq!(m.global_score, 1.0);
    assert!(local_search(&index, &q, &[], 10.0).is_err());
}

#[test]
fn local_search_ties_prefer_global_score_then_id() {
    let w = world(6);
    let index = build_reference_index(&spaced_scans(&w, 2), &Config::default()).unwrap();
    let q = index.high_descriptor(10).unwrap().clone();
    let cand = |score| Candidate {
        reference_id: 10,
        theta: 0.0,
        shift: (0, 0),
        score,
    };
    // the same reference twice: identical local scores
    let m = local_search(&index, &q, &[cand(1.0), cand(3.0)], 10.0).unwrap();
    assert_eq!(m.global_score, 3.0);
}

#[test]
fn localize_identical_cloud_returns_reference_pose() {
    let w = world(7);
    let config = Config::default();
    let scans = spaced_scans(&w, 4);
    let index = build_reference_index(&scans, &config).unwrap();
    for (id, cloud, pose) in &scans {
        let e = localize(&index, cloud, &config).unwrap();
        assert_eq!(e.reference_id, *id);
        assert_eq!(e.pose, *pose);
        assert!(!e.low_confidence);
    }
}

#[test]
fn localize_recovers_forty_degree_yaw() {
    let w = world(8);
    let config = Config::default();
    let scans = spaced_scans(&w, 3);
    let index = build_reference_index(&scans, &config).unwrap();
    let (id, cloud, pose) = &scans[1];
    // the sensor turned by +40°: its cloud is the reference cloud turned by −40°
    let turned = transform_cloud(cloud, &Pose2D::new(0.0, 0.0, -40.0));
    let e = localize(&index, &turned, &config).unwrap();
    let truth = Pose2D::new(pose.x, pose.y, pose.yaw + 40.0);
    assert_eq!(e.reference_id, *id);
    assert!(rre(&e.pose, &truth) <= 5.0, "rre {}", rre(&e.pose, &truth));
    assert!(rte(&e.pose, &truth) <= 2f64.sqrt() * 0.3);
}

#[test]
fn localize_recovers_planted_offset() {
    let w = world(9);
    let config = Config::default();
    let scans = spaced_scans(&w, 3);
    let index = build_reference_index(&scans, &config).unwrap();
    let (id, _, pose) = &scans[2];
    let truth = pose.compose(&Pose2D::new(2.0, -1.5, 0.0));
    let e = localize(&index, &scan(&w, &truth), &config).unwrap();
    assert_eq!(e.reference_id, *id);
    assert!(rte(&e.pose, &truth) <= 2f64.sqrt() * 0.3, "rte {}", rte(&e.pose, &truth));
    assert!(rte(&e.uncorrected(), &truth) > 2.0);
}

#[test]
fn localize_flags_empty_queries() {
    let w = world(10);
    let config = Config::default();
    let index = build_reference_index(&spaced_scans(&w, 2), &config).unwrap();
    let e = localize(&index, &empty_cloud(), &config).unwrap();
    assert!(e.low_confidence);
    let far = PointCloud::sensor(vec![Point3::new(100.0, 0.0, 2.0)]);
    assert!(localize(&index, &far, &config).unwrap().low_confidence);
}

#[test]
fn localize_rejects_mismatched_descriptor_config() {
    let w = world(10);
    let index = build_reference_index(&spaced_scans(&w, 2), &Config::default()).unwrap();
    let mut other = Config::default();
    other.voxel_size = 0.75;
    assert!(localize(&index, &empty_cloud(), &other).is_err());
}

#[test]
fn localize_is_deterministic() {
    let w = world(11);
    let config = Config::default();
    let scans = spaced_scans(&w, 4);
    let query = scan(&w, &Pose2D::new(61.0, 1.0, 100.0));
    let a = localize_verbose(&build_reference_index(&scans, &config).unwrap(), &query, &config).unwrap();
    let b = localize_verbose(&build_reference_index(&scans, &config).unwrap(), &query, &config).unwrap();
    assert_eq!(a.matched, b.matched);
    assert_eq!(a.candidates, b.candidates);
    assert_eq!(a.estimate, b.estimate);
}

#[test]
fn removing_the_winner_promotes_the_runner_up() {
    let w = world(12);
    let mut config = Config::default();
    config.reference_spacing = 0.0;
    // overlapping references 3 m apart so several of them match
    let scans: Vec<_> = (0..4)
        .map(|k| {
            let pose = Pose2D::new(3.0 * k as f64, 0.0, 0.0);
            (k as u64, scan(&w, &pose), pose)
        })
        .collect();
    config.top_n = scans.len();
    let index = build_reference_index(&scans, &config).unwrap();
    let query = scan(&w, &Pose2D::new(4.0, 0.5, 20.0));
    let first = localize_verbose(&index, &query, &config).unwrap();
    let q = &first.query.high;
    let mut ranked: Vec<MatchResult> = first
        .candidates
        .iter()
        .map(|c| local_search(&index, q, std::slice::from_ref(c), config.rotation_step).unwrap())
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    assert_eq!(ranked[0].reference_id, first.matched.reference_id);
    let reduced = index.without(first.matched.reference_id).unwrap();
    let second = localize(&reduced, &query, &config).unwrap();
    assert_eq!(second.reference_id, ranked[1].reference_id);
    assert!(index.without(999).is_err());
}

#[test]
fn index_roundtrips_through_disk() {
    let w = world(13);
    let config = Config::default();
    let scans = spaced_scans(&w, 3);
    let index = build_reference_index(&scans, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    index.save(dir.path()).unwrap();
    let loaded = ReferenceIndex::load(dir.path()).unwrap();
    assert_eq!(loaded.ids(), index.ids());
    assert_eq!(loaded.poses(), index.poses());
    assert_eq!(loaded.mosaic(), index.mosaic());
    assert_eq!(loaded.config(), index.config());
    assert_eq!(loaded.manifest(), index.manifest());
    for id in index.ids() {
        assert_eq!(loaded.high_descriptor(*id), index.high_descriptor(*id));
    }
    let query = scan(&w, &Pose2D::new(31.0, -1.0, 40.0));
    assert_eq!(
        localize(&loaded, &query, &config).unwrap(),
        localize(&index, &query, &config).unwrap()
    );
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("format_version = 1\n"));
    assert!(manifest.contains(&format!("config.voxel_size = {}\n", config.voxel_size)));
}

#[test]
fn index_load_checks_version_and_files() {
    let w = world(14);
    let index = build_reference_index(&spaced_scans(&w, 2), &Config::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    index.save(dir.path()).unwrap();
    let manifest_path = dir.path().join("manifest.txt");
    let manifest = std::fs::read_to_string(&manifest_path).unwrap();
    std::fs::write(&manifest_path, manifest.replace("format_version = 1", "format_version = 2")).unwrap();
    let err = ReferenceIndex::load(dir.path()).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
    std::fs::write(&manifest_path, &manifest).unwrap();
    std::fs::remove_file(dir.path().join("refs").join("11.txt")).unwrap();
    assert!(ReferenceIndex::load(dir.path()).is_err());
    assert!(ReferenceIndex::load(dir.path().join("missing")).is_err());
}
