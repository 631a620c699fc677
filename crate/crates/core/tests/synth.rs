use std::fs;
use std::path::Path;

use lpr_core::config::Config;
use lpr_core::geometry::{load_pointcloud_bin, load_poses_csv};
use lpr_core::synth::*;

fn small_layout() -> BenchmarkLayout {
    let mut c = Config::default();
    c.synth_reference_scans = 12;
    c.synth_queries = 6;
    BenchmarkLayout::from_config(&c)
}

fn sensor() -> SensorModel {
    SensorModel {
        max_range: 20.0,
        dropout: 0.3,
        noise: 0.05,
        max_points: 20_000,
    }
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "ref", "query"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let layout = small_layout();
    let sa = generate_benchmark(7, &layout, &sensor(), a.path()).unwrap();
    let sb = generate_benchmark(7, &layout, &sensor(), b.path()).unwrap();
    generate_benchmark(8, &layout, &sensor(), c.path()).unwrap();
    assert_eq!(sa, sb);
    assert!(sa.landmarks > 0);
    let (la, lb, lc) = (listing(a.path()), listing(b.path()), listing(c.path()));
    assert_eq!(la.len(), 3 + 12 + 6);
    assert_eq!(la, lb);
    assert_ne!(la, lc);
}

#[test]
fn benchmark_files_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let layout = small_layout();
    let summary = generate_benchmark(3, &layout, &sensor(), dir.path()).unwrap();
    assert_eq!((summary.references, summary.queries), (12, 6));

    let refs = load_poses_csv(dir.path().join("ref_poses.csv")).unwrap();
    let gt = load_poses_csv(dir.path().join("query_gt.csv")).unwrap();
    assert_eq!(refs.len(), 12);
    assert_eq!(gt.len(), 6);
    for (k, (id, pose)) in refs.iter().enumerate() {
        assert_eq!(*id, k as u64);
        assert_eq!(*pose, layout.path_pose(k));
        let cloud = load_pointcloud_bin(dir.path().join("ref").join(format!("{id:06}.bin"))).unwrap();
        assert!(!cloud.is_empty() && cloud.len() <= 20_000);
    }

    let assoc = fs::read_to_string(dir.path().join("associations.csv")).unwrap();
    let mut lines = assoc.lines();
    assert_eq!(lines.next(), Some("query_id,anchor_ref_id,nearest_ref_id,nearest_distance"));
    for ((line, (qid, qpose)), k) in lines.zip(&gt).zip(0u64..) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0].parse::<u64>().unwrap(), *qid);
        assert_eq!(*qid, k);
        let anchor = refs[f[1].parse::<usize>().unwrap()].1;
        let nearest = refs[f[2].parse::<usize>().unwrap()].1;
        let d: f64 = f[3].parse().unwrap();
        assert!((nearest.distance(qpose) - d).abs() < 1e-9);
        assert!(refs.iter().all(|(_, p)| p.distance(qpose) >= d - 1e-12));
        assert!(anchor.distance(qpose) <= layout.max_offset * 2f64.sqrt() + 1e-9);
        assert!(d <= layout.max_offset * 2f64.sqrt() + 1e-9);
    }
}

#[test]
fn infeasible_world_is_an_error() {
    let mut layout = small_layout();
    layout.landmark_density = 5.0;
    layout.min_separation = 2.0;
    let dir = tempfile::tempdir().unwrap();
    assert!(generate_benchmark(1, &layout, &sensor(), dir.path()).is_err());
    layout = small_layout();
    layout.reference_scans = 0;
    assert!(generate_benchmark(1, &layout, &sensor(), dir.path()).is_err());
}

#[test]
fn empty_world_still_renders() {
    let mut layout = small_layout();
    layout.landmark_density = 0.0;
    let dir = tempfile::tempdir().unwrap();
    let s = generate_benchmark(1, &layout, &sensor(), dir.path()).unwrap();
    assert_eq!(s.landmarks, 0);
    let cloud = load_pointcloud_bin(dir.path().join("query").join("000000.bin")).unwrap();
    assert!(cloud.is_empty());
}
