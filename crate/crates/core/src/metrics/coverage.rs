//! Covered area as a raster of the union of sensing disks.

use crate::geom::Extent;
use crate::par::Execution;

use super::segments::TrajectorySample;

pub const DEFAULT_COVERAGE_RESOLUTION: f64 = 0.25;

/// Area in hectares of grid cells whose centre lies within `range` of a trajectory
/// sample, restricted to `bounds` when given.
pub fn compute_covered_area(
    traj: &[TrajectorySample],
    range: f64,
    resolution: f64,
    bounds: Option<Extent>,
) -> f64 {
    compute_covered_area_with(Execution::default(), traj, range, resolution, bounds)
}

pub fn compute_covered_area_with(
    exec: Execution,
    traj: &[TrajectorySample],
    range: f64,
    resolution: f64,
    bounds: Option<Extent>,
) -> f64 {
    covered_cells(exec, traj, range, resolution, bounds) as f64 * resolution * resolution / 10_000.0
}

pub fn covered_cells(
    exec: Execution,
    traj: &[TrajectorySample],
    range: f64,
    res: f64,
    bounds: Option<Extent>,
) -> u64 {
    if traj.is_empty() || !(range > 0.0) || !(res > 0.0) {
        return 0;
    }
    let centers: Vec<[f64; 2]> = traj.iter().map(|s| [s.pose.x, s.pose.y]).collect();
    let mut ext = Extent::new(
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for c in &centers {
        ext.min_x = ext.min_x.min(c[0] - range);
        ext.min_y = ext.min_y.min(c[1] - range);
        ext.max_x = ext.max_x.max(c[0] + range);
        ext.max_y = ext.max_y.max(c[1] + range);
    }
    if let Some(b) = bounds {
        ext = Extent::new(
            ext.min_x.max(b.min_x),
            ext.min_y.max(b.min_y),
            ext.max_x.min(b.max_x),
            ext.max_y.min(b.max_y),
        );
        if ext.min_x >= ext.max_x || ext.min_y >= ext.max_y {
            return 0;
        }
    }
    // Cells are aligned to multiples of the resolution.
    let i0 = (ext.min_x / res).floor() as i64;
    let i1 = (ext.max_x / res).ceil() as i64;
    let j0 = (ext.min_y / res).floor() as i64;
    let j1 = (ext.max_y / res).ceil() as i64;
    let cell_in_bounds = |i: i64, j: i64| {
        let (x, y) = ((i as f64 + 0.5) * res, (j as f64 + 0.5) * res);
        bounds.is_none_or(|b| b.contains(x, y))
    };
    let mut by_y = centers.clone();
    by_y.sort_by(|a, b| a[1].total_cmp(&b[1]));
    let r2 = range * range;
    let rows = exec.map_range((j1 - j0).max(0) as usize, |row| {
        let j = j0 + row as i64;
        let y = (j as f64 + 0.5) * res;
        let lo = by_y.partition_point(|c| c[1] < y - range);
        let hi = by_y.partition_point(|c| c[1] <= y + range);
        let mut spans: Vec<(i64, i64)> = Vec::with_capacity(hi - lo);
        for c in &by_y[lo..hi] {
            let dy = y - c[1];
            let w2 = r2 - dy * dy;
            if w2 < 0.0 {
                continue;
            }
            let w = w2.sqrt();
            let a = ((c[0] - w) / res - 0.5).ceil() as i64;
            let b = ((c[0] + w) / res - 0.5).floor() as i64;
            let (a, b) = (a.max(i0), b.min(i1 - 1));
            if a <= b {
                spans.push((a, b));
            }
        }
        spans.sort_unstable();
        let mut count = 0u64;
        let mut cur: Option<(i64, i64)> = None;
        let mut flush = |s: (i64, i64)| {
            if bounds.is_none() {
                count += (s.1 - s.0 + 1) as u64;
            } else {
                count += (s.0..=s.1).filter(|&i| cell_in_bounds(i, j)).count() as u64;
            }
        };
        for s in spans {
            cur = match cur {
                Some(c) if s.0 <= c.1 + 1 => Some((c.0, c.1.max(s.1))),
                Some(c) => {
                    flush(c);
                    Some(s)
                }
                None => Some(s),
            };
        }
        if let Some(c) = cur {
            flush(c);
        }
        count
    });
    rows.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose4;

    fn at(x: f64, y: f64) -> TrajectorySample {
        TrajectorySample {
            t: 0.0,
            pose: Pose4::new(x, y, 0.0, 0.0),
        }
    }

    #[test]
    fn single_disk() {
        let a = compute_covered_area(&[at(3.1, -2.7)], 15.0, 0.25, None) * 10_000.0;
        let truth = std::f64::consts::PI * 225.0;
        assert!((a - truth).abs() / truth < 0.02, "{a}");
    }

    #[test]
    fn stadium() {
        let traj: Vec<_> = (0..=1000).map(|k| at(k as f64 * 0.1, 0.0)).collect();
        let a = compute_covered_area(&traj, 15.0, 0.25, None) * 10_000.0;
        let truth = 3000.0 + std::f64::consts::PI * 225.0;
        assert!((a - truth).abs() / truth < 0.02, "{a}");
    }

    #[test]
    fn bounds_clip() {
        let a = compute_covered_area(
            &[at(0.0, 0.0)],
            15.0,
            0.25,
            Some(Extent::new(0.0, 0.0, 100.0, 100.0)),
        ) * 10_000.0;
        let truth = std::f64::consts::PI * 225.0 / 4.0;
        assert!((a - truth).abs() / truth < 0.03, "{a}");
    }

    #[test]
    fn monotone_in_length_and_range() {
        let traj: Vec<_> = (0..200)
            .map(|k| at((k as f64 * 0.37).sin() * 20.0, k as f64 * 0.2))
            .collect();
        let mut prev = 0.0;
        for n in [1, 10, 50, 100, 200] {
            let a = compute_covered_area(&traj[..n], 10.0, 0.25, None);
            assert!(a >= prev);
            prev = a;
        }
        let mut prev = 0.0;
        for r in [1.0, 5.0, 10.0, 15.0] {
            let a = compute_covered_area(&traj, r, 0.25, None);
            assert!(a >= prev);
            prev = a;
        }
    }

    #[test]
    fn sequential_matches_parallel() {
        let traj: Vec<_> = (0..500)
            .map(|k| at(k as f64 * 0.3, (k as f64 * 0.05).cos() * 10.0))
            .collect();
        assert_eq!(
            covered_cells(Execution::Sequential, &traj, 15.0, 0.25, None),
            covered_cells(Execution::Parallel, &traj, 15.0, 0.25, None)
        );
    }
}
