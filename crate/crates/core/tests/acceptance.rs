//! Acceptance gate: one PASS/FAIL line per headline criterion, non-zero exit on any failure.

use std::time::Instant;

use nalgebra::{Isometry3, Translation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use sylva_core::analysis::{
    fit_circle, fit_cylinder, fit_terrain_cloth, reconstruct_frustums, ClothParams, StemCircle,
};
use sylva_core::autonomy::{compute_gdf, CostGrid};
use sylva_core::geom::{Extent, Label, PointCloud, Vec3};
use sylva_core::mission::{
    clean_world_config, drift_study, evaluate_inventory, forest_world, m1_config, m7_config,
    run_mission, DriftStudyParams, MissionOutput,
};
use sylva_core::par::Execution;
use sylva_core::sim::{generate_world, scan_lidar, to_world, LidarSpec};

struct Gate {
    failed: usize,
}

impl Gate {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

fn timed(cfg: sylva_core::mission::MissionConfig) -> (MissionOutput, f64) {
    let t0 = Instant::now();
    let out = run_mission(cfg).expect("mission runs");
    (out, t0.elapsed().as_secs_f64())
}

fn rate_ha_per_h(out: &MissionOutput) -> f64 {
    out.report.area_ha / (out.report.mission_time_s / 3600.0)
}

/// Mission time minus everything accounted to segments and interventions.
fn duration_gap(out: &MissionOutput) -> f64 {
    let r = &out.report;
    let sum: f64 = r
        .segment_durations_s
        .iter()
        .chain(&r.intervention_durations_s)
        .sum();
    (sum - r.mission_time_s).abs()
}

fn m7(gate: &mut Gate) -> MissionOutput {
    let (out, wall) = timed(m7_config(7));
    let r = &out.report;
    let eval = evaluate_inventory(&out.inventory, &out.world.trees, 1.0, 0.02);
    let frac = eval.dbh_fraction.unwrap_or(0.0);
    let ok = r.outcome == "completed"
        && (0.9..=1.1).contains(&r.area_ha)
        && eval.detected >= 90
        && frac >= 0.8
        && r.mission_time_s <= 25.0 * 60.0
        && wall <= 300.0;
    gate.check(
        "m7 reproduction",
        ok,
        format!(
            "outcome {}, area {:.3} ha, detected {}/{}, dbh within 2 cm {:.1}% of {}, {:.0} s simulated, {:.1} s wall, {} interventions",
            r.outcome,
            r.area_ha,
            eval.detected,
            eval.truth_trees,
            100.0 * frac,
            eval.reconstructed,
            r.mission_time_s,
            wall,
            r.interventions
        ),
    );
    out
}

fn coverage(gate: &mut Gate, m1: &[MissionOutput]) -> MissionOutput {
    let rates: Vec<f64> = m1.iter().map(rate_ha_per_h).collect();
    gate.check(
        "coverage rate, forest plots",
        rates.iter().all(|&r| r >= 1.5),
        format!("{:.2?} ha/h (at least 1.5)", rates),
    );
    let (clean, _) = timed(clean_world_config(1));
    let rate = rate_ha_per_h(&clean);
    gate.check(
        "coverage rate, clean world",
        clean.report.outcome == "completed" && (1.6..=2.4).contains(&rate),
        format!(
            "{:.3} ha in {:.0} s = {:.2} ha/h (2 +/- 20%)",
            clean.report.area_ha, clean.report.mission_time_s, rate
        ),
    );
    clean
}

fn metrics(gate: &mut Gate, runs: &[&MissionOutput]) {
    let quiet: Vec<_> = runs
        .iter()
        .filter(|o| o.report.interventions == 0)
        .collect();
    let exact = !quiet.is_empty()
        && quiet.iter().all(|o| {
            o.report.mdbi_m == Some(o.report.distance_m)
                && o.report.mtbi_s == Some(o.report.mission_time_s)
        });
    gate.check(
        "metrics identities, zero interventions",
        exact,
        format!(
            "{} intervention-free runs, MDBI = distance and MTBI = time exactly",
            quiet.len()
        ),
    );
    let worst = runs.iter().map(|o| duration_gap(o)).fold(0.0, f64::max);
    let with = runs.iter().filter(|o| o.report.interventions > 0).count();
    gate.check(
        "metrics identities, durations",
        worst <= 1e-6,
        format!(
            "largest |sum - mission time| {worst:.1e} s over {} runs ({with} with interventions)",
            runs.len()
        ),
    );
}

/// Plain O(n^2) Dijkstra over the 8-connected passable cells.
fn dijkstra(grid: &CostGrid, goal: usize, lethal: f64) -> Vec<f64> {
    let (nx, ny) = (grid.nx as i64, grid.ny as i64);
    let n = grid.nx * grid.ny;
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    if grid.cost[goal] >= lethal {
        return dist;
    }
    dist[goal] = 0.0;
    while let Some(u) = (0..n)
        .filter(|&k| !done[k] && dist[k].is_finite())
        .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
    {
        done[u] = true;
        let (i, j) = ((u % grid.nx) as i64, (u / grid.nx) as i64);
        for di in -1..=1 {
            for dj in -1..=1 {
                let (a, b) = (i + di, j + dj);
                if (di, dj) == (0, 0) || a < 0 || b < 0 || a >= nx || b >= ny {
                    continue;
                }
                let v = (b * nx + a) as usize;
                if grid.cost[v] >= lethal {
                    continue;
                }
                let len = if di != 0 && dj != 0 {
                    grid.resolution * std::f64::consts::SQRT_2
                } else {
                    grid.resolution
                };
                let w = len * (1.0 + 0.5 * (grid.cost[u] + grid.cost[v]));
                if dist[u] + w < dist[v] {
                    dist[v] = dist[u] + w;
                }
            }
        }
    }
    dist
}

fn gdf(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatched = 0;
    for _ in 0..100 {
        let cost: Vec<f64> = (0..400)
            .map(|_| {
                if rng.random_bool(0.2) {
                    1.0
                } else {
                    rng.random_range(0.0..0.85)
                }
            })
            .collect();
        let grid = CostGrid::new([0.0, 0.0], 0.1, 20, 20, cost);
        let goal = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
        let field = compute_gdf(&grid, goal, 0.9).expect("goal inside grid");
        let (gi, gj) = field.goal_cell;
        let oracle = dijkstra(&grid, grid.index(gi, gj), 0.9);
        if field.distance != oracle
            || field
                .reachable
                .iter()
                .zip(&oracle)
                .any(|(r, d)| *r != d.is_finite())
        {
            mismatched += 1;
        }
    }
    gate.check(
        "gdf equals dijkstra",
        mismatched == 0,
        format!("{mismatched} of 100 random 20x20 grids differ"),
    );
}

fn pose_graph(gate: &mut Gate) {
    let seeds: Vec<u64> = (0..20).collect();
    let trials = drift_study(&seeds, &DriftStudyParams::default(), Execution::default())
        .expect("drift study");
    let better = trials
        .iter()
        .filter(|t| t.error_with < t.error_without)
        .count();
    let increases: usize = trials.iter().map(|t| t.residual_increases).sum();
    let calls: usize = trials.iter().map(|t| t.optimizer_calls).sum();
    let mean = |f: fn(&sylva_core::mission::DriftTrial) -> f64| {
        trials.iter().map(f).sum::<f64>() / trials.len() as f64
    };
    gate.check(
        "pose graph benefit",
        better * 100 >= 95 * trials.len(),
        format!(
            "closed error below open in {better}/{} seeds (mean {:.3} m vs {:.3} m)",
            trials.len(),
            mean(|t| t.error_with),
            mean(|t| t.error_without)
        ),
    );
    gate.check(
        "optimizer residual non-increase",
        increases == 0 && calls > 0,
        format!("{increases} increases over {calls} optimizer calls"),
    );
}

/// Twenty metres of scans on a forest slope, merged and thinned like a mission payload.
fn labelled_payload(slope_deg: f64, seed: u64) -> PointCloud {
    let extent = Extent::new(0.0, 0.0, 40.0, 40.0);
    let mut spec = forest_world(extent, 25, seed);
    spec.terrain.mean_slope = slope_deg.to_radians();
    spec.terrain.slope_heading = seed as f64 * 0.7;
    let world = generate_world(&spec).expect("world");
    let lidar = LidarSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut merged = PointCloud::new();
    for k in 0..=20 {
        let (x, y) = (10.0 + k as f64, 20.0);
        let origin = Vec3::new(x, y, world.terrain_height(x, y) + 0.8);
        let pose = Isometry3::from_parts(Translation3::from(origin), UnitQuaternion::identity());
        let scan = to_world(&scan_lidar(&world, &pose, &lidar, &mut rng), &pose);
        for (i, p) in scan.points.iter().enumerate() {
            if (p.x - x).hypot(p.y - y) <= 15.0 {
                merged.push(*p, scan.label(i));
            }
        }
    }
    merged.voxel_dedup(0.02)
}

fn cloth(gate: &mut Gate) {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    let mut worst = (1.0f64, 1.0f64);
    for (k, slope) in [0.0, 5.0, 10.0, 15.0].into_iter().enumerate() {
        for s in 0..2 {
            let cloud = labelled_payload(slope, 10 * k as u64 + s);
            let res = fit_terrain_cloth(&cloud, &ClothParams::default()).expect("cloth fit");
            let (mut a, mut b, mut c) = (0usize, 0usize, 0usize);
            for (i, &g) in res.ground.iter().enumerate() {
                let truth = cloud.label(i) == Label::Terrain;
                match (g, truth) {
                    (true, true) => a += 1,
                    (true, false) => b += 1,
                    (false, true) => c += 1,
                    _ => {}
                }
            }
            worst.0 = worst.0.min(a as f64 / (a + c) as f64);
            worst.1 = worst.1.min(a as f64 / (a + b) as f64);
            tp += a;
            fp += b;
            fneg += c;
        }
    }
    let recall = tp as f64 / (tp + fneg) as f64;
    let precision = tp as f64 / (tp + fp) as f64;
    gate.check(
        "cloth ground filter",
        recall >= 0.99 && precision >= 0.95,
        format!(
            "recall {recall:.4}, precision {precision:.4} over 8 payloads at 0-15 deg (worst payload {:.4} / {:.4})",
            worst.0, worst.1
        ),
    );
}

fn geometry(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut circle_err = 0.0f64;
    for _ in 0..100 {
        let (cx, cy, r) = (
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(0.03..0.6),
        );
        let arc = rng.random_range(1.0..std::f64::consts::TAU);
        let pts: Vec<[f64; 2]> = (0..30)
            .map(|k| {
                let a = arc * k as f64 / 30.0;
                [cx + r * a.cos(), cy + r * a.sin()]
            })
            .collect();
        let c = fit_circle(&pts).expect("circle");
        circle_err = circle_err
            .max((c.center[0] - cx).abs())
            .max((c.center[1] - cy).abs())
            .max((c.radius - r).abs());
    }
    gate.check(
        "circle fit, noise-free",
        circle_err <= 1e-9,
        format!("max error {circle_err:.1e} over 100 circles"),
    );

    let mut cyl_err = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.005).expect("sigma");
        let r = rng.random_range(0.1..0.4);
        let tilt = rng.random_range(0.0..10f64.to_radians());
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let axis = Vec3::new(tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos());
        let u = axis
            .cross(&Vec3::z())
            .try_normalize(1e-12)
            .unwrap_or_else(Vec3::x);
        let v = axis.cross(&u);
        let base = Vec3::new(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            0.3,
        );
        let pts: Vec<Vec3> = (0..400)
            .map(|_| {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let s = rng.random_range(0.0..2.0);
                base + axis * s + (u * a.cos() + v * a.sin()) * (r + noise.sample(&mut rng))
            })
            .collect();
        let c = fit_cylinder(&pts).expect("cylinder");
        cyl_err = cyl_err.max((c.radius - r).abs());
    }
    gate.check(
        "cylinder radius, 5 mm noise",
        cyl_err <= 0.003,
        format!("max radius error {:.2} mm over 100 seeds", 1000.0 * cyl_err),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut vol_err = 0.0f64;
    for _ in 0..100 {
        let h0 = rng.random_range(0.0..5.0);
        let h1 = h0 + rng.random_range(0.1..3.0);
        let (r0, r1) = (rng.random_range(0.05..0.5), rng.random_range(0.05..0.5));
        let circ = |h: f64, r: f64, c: [f64; 2]| StemCircle {
            height: h,
            center: c,
            radius: r,
            rms: 0.0,
            points: 50,
            arc_deg: 360.0,
            low_coverage: false,
        };
        let f = reconstruct_frustums(&[
            circ(h0, r0, [0.0, 0.0]),
            circ(h1, r1, [rng.random_range(-0.3..0.3), 0.1]),
        ])
        .expect("frustum");
        let closed = std::f64::consts::PI * (h1 - h0) * (r0 * r0 + r0 * r1 + r1 * r1) / 3.0;
        vol_err = vol_err.max((f[0].volume() - closed).abs());
    }
    gate.check(
        "frustum volume",
        vol_err <= 1e-9,
        format!("max error {vol_err:.1e} m^3 over 100 frustums"),
    );
}

fn determinism(gate: &mut Gate, first: &MissionOutput) {
    let (again, _) = timed(m1_config(3));
    let (a, b) = (first.report.to_json(), again.report.to_json());
    gate.check(
        "deterministic report",
        a == b,
        format!(
            "two runs of the same config and seed: {} and {} bytes, identical: {}",
            a.len(),
            b.len(),
            a == b
        ),
    );
}

fn main() {
    let t0 = Instant::now();
    let mut gate = Gate { failed: 0 };
    gdf(&mut gate);
    geometry(&mut gate);
    pose_graph(&mut gate);
    cloth(&mut gate);
    let m7 = m7(&mut gate);
    let m1: Vec<MissionOutput> = [3, 4].into_iter().map(|s| timed(m1_config(s)).0).collect();
    let clean = coverage(&mut gate, &m1);
    metrics(&mut gate, &[&m7, &m1[0], &m1[1], &clean]);
    determinism(&mut gate, &m1[0]);
    println!(
        "acceptance: {} failed, {:.0} s",
        gate.failed,
        t0.elapsed().as_secs_f64()
    );
    if gate.failed > 0 {
        std::process::exit(1);
    }
}
