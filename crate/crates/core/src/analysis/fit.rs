//! Circle and cylinder least-squares fits.

use nalgebra::{Matrix3, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
    pub rms: f64,
}

fn circle_rms(pts: &[[f64; 2]], c: [f64; 2], r: f64) -> f64 {
    let s: f64 = pts
        .iter()
        .map(|p| ((p[0] - c[0]).hypot(p[1] - c[1]) - r).powi(2))
        .sum();
    (s / pts.len() as f64).sqrt()
}

/// Algebraic (Kåsa) fit, computed about the centroid for conditioning.
pub fn fit_circle_kasa(pts: &[[f64; 2]]) -> Result<Circle> {
    if pts.len() < 3 {
        return Err(Error::FitFailed(format!(
            "{} points for a circle",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for p in pts {
        let (x, y) = (p[0] - mx, p[1] - my);
        let row = Vector3::new(x, y, 1.0);
        a += row * row.transpose();
        b += row * -(x * x + y * y);
    }
    let sol = a
        .cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::FitFailed("collinear points".into()))?;
    let (cx, cy) = (-sol[0] / 2.0, -sol[1] / 2.0);
    let r2 = cx * cx + cy * cy - sol[2];
    if !(r2 > 0.0) || !r2.is_finite() {
        return Err(Error::FitFailed("no real circle".into()));
    }
    let center = [cx + mx, cy + my];
    let radius = r2.sqrt();
    Ok(Circle {
        center,
        radius,
        rms: circle_rms(pts, center, radius),
    })
}

/// Kåsa initialisation refined by damped Gauss–Newton on geometric distances.
/// The refined fit is only returned when it does not increase the RMS.
pub fn fit_circle(pts: &[[f64; 2]]) -> Result<Circle> {
    let init = fit_circle_kasa(pts)?;
    let (mut c, mut r) = (init.center, init.radius);
    let mut cost = circle_rms(pts, c, r);
    let mut lambda = 1e-6;
    for _ in 0..100 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for p in pts {
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            let d = dx.hypot(dy).max(1e-15);
            let res = d - r;
            let j = Vector3::new(-dx / d, -dy / d, -1.0);
            jtj += j * j.transpose();
            jtr += j * res;
        }
        let mut improved = false;
        while lambda < 1e10 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] *= 1.0 + lambda;
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let (nc, nr) = ([c[0] + step[0], c[1] + step[1]], r + step[2]);
            let nc_cost = circle_rms(pts, nc, nr);
            if nr > 0.0 && nc_cost <= cost {
                let gain = cost - nc_cost;
                c = nc;
                r = nr;
                cost = nc_cost;
                lambda = (lambda * 0.1).max(1e-12);
                improved = gain > 1e-15 * cost.max(1e-300);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(Circle {
        center: c,
        radius: r,
        rms: cost,
    })
}

/// Fraction of the full circle covered by the points, in degrees (10-degree bins).
pub fn arc_coverage_deg(pts: &[[f64; 2]], center: [f64; 2]) -> f64 {
    let mut bins = [false; 36];
    for p in pts {
        let a = (p[1] - center[1]).atan2(p[0] - center[0]) + std::f64::consts::PI;
        let k = ((a / std::f64::consts::TAU * 36.0) as usize).min(35);
        bins[k] = true;
    }
    bins.iter().filter(|b| **b).count() as f64 * 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    /// Axis point at height `z_ref`.
    pub point: [f64; 3],
    /// Unit direction with positive z.
    pub direction: [f64; 3],
    pub radius: f64,
    pub rms: f64,
}

impl Cylinder {
    /// Horizontal axis position at height `z`.
    pub fn center_at(&self, z: f64) -> [f64; 2] {
        let t = (z - self.point[2]) / self.direction[2];
        [
            self.point[0] + t * self.direction[0],
            self.point[1] + t * self.direction[1],
        ]
    }

    pub fn distance_to_axis(&self, p: &Vec3) -> f64 {
        axis_distance(p, self.point, self.direction)
    }

    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        (self.distance_to_axis(p) - self.radius).abs()
    }

    pub fn tilt_deg(&self) -> f64 {
        self.direction[2].clamp(-1.0, 1.0).acos().to_degrees()
    }
}

fn axis_distance(p: &Vec3, point: [f64; 3], dir: [f64; 3]) -> f64 {
    let v = Vec3::new(p.x - point[0], p.y - point[1], p.z - point[2]);
    let d = Vec3::new(dir[0], dir[1], dir[2]);
    v.cross(&d).norm()
}

/// Parameters: axis point (x, y) at height `z_ref`, tilt slopes (tx, ty) with
/// direction (tx, ty, 1) normalised, and radius.
fn cyl_from(params: &Vector5<f64>, z_ref: f64) -> ([f64; 3], [f64; 3], f64) {
    let d = Vec3::new(params[2], params[3], 1.0).normalize();
    ([params[0], params[1], z_ref], [d.x, d.y, d.z], params[4])
}

fn cyl_cost(pts: &[Vec3], params: &Vector5<f64>, z_ref: f64) -> f64 {
    let (p, d, r) = cyl_from(params, z_ref);
    pts.iter()
        .map(|q| (axis_distance(q, p, d) - r).powi(2))
        .sum()
}

/// Cylinder fit by Levenberg–Marquardt from a vertical axis through the horizontal
/// centroid. A second start from the algebraic circle of the projection is tried as
/// well and the lower-cost solution kept.
pub fn fit_cylinder(pts: &[Vec3]) -> Result<Cylinder> {
    if pts.len() < 10 {
        return Err(Error::FitFailed(format!(
            "{} points for a cylinder",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let z_ref = pts.iter().map(|p| p.z).sum::<f64>() / n;
    let r0 = pts.iter().map(|p| (p.x - mx).hypot(p.y - my)).sum::<f64>() / n;
    let mut starts = vec![Vector5::new(mx, my, 0.0, 0.0, r0)];
    let proj: Vec<[f64; 2]> = pts.iter().map(|p| [p.x, p.y]).collect();
    if let Ok(c) = fit_circle_kasa(&proj) {
        starts.push(Vector5::new(c.center[0], c.center[1], 0.0, 0.0, c.radius));
    }
    let mut best: Option<(f64, Vector5<f64>)> = None;
    for s in starts {
        if let Some((cost, x)) = refine_cylinder(pts, s, z_ref) {
            if best.is_none_or(|(bc, _)| cost < bc) {
                best = Some((cost, x));
            }
        }
    }
    let (cost, x) = best.ok_or_else(|| Error::FitFailed("cylinder did not converge".into()))?;
    let (point, direction, radius) = cyl_from(&x, z_ref);
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::FitFailed(format!("radius {radius}")));
    }
    Ok(Cylinder {
        point,
        direction,
        radius,
        rms: (cost / n).sqrt(),
    })
}

fn refine_cylinder(pts: &[Vec3], mut x: Vector5<f64>, z_ref: f64) -> Option<(f64, Vector5<f64>)> {
    if !(x[4] > 0.0) {
        return None;
    }
    let mut cost = cyl_cost(pts, &x, z_ref);
    let mut lambda = 1e-4;
    for _ in 0..60 {
        let (p, d, r) = cyl_from(&x, z_ref);
        let mut jtj = nalgebra::Matrix5::<f64>::zeros();
        let mut jtr = Vector5::<f64>::zeros();
        let h = 1e-7;
        for q in pts {
            let res = axis_distance(q, p, d) - r;
            // Numerical derivative for the axis parameters, analytic for the radius.
            let mut j = Vector5::zeros();
            for k in 0..4 {
                let mut xp = x;
                xp[k] += h;
                let (pp, dp, _) = cyl_from(&xp, z_ref);
                j[k] = (axis_distance(q, pp, dp) - axis_distance(q, p, d)) / h;
            }
            j[4] = -1.0;
            jtj += j * j.transpose();
            jtr += j * res;
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for k in 0..5 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let nx = x + step;
            let nc = cyl_cost(pts, &nx, z_ref);
            if nx[4] > 0.0 && nc.is_finite() && nc <= cost {
                let rel = (cost - nc) / cost.max(1e-300);
                x = nx;
                cost = nc;
                lambda = (lambda * 0.2).max(1e-12);
                accepted = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    // Reject solutions whose axis lies nearly horizontal.
    (x[2].hypot(x[3]) < 1.0).then_some((cost, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn circle_pts(c: [f64; 2], r: f64, n: usize, arc: f64) -> Vec<[f64; 2]> {
        (0..n)
            .map(|k| {
                let a = arc * k as f64 / n as f64;
                [c[0] + r * a.cos(), c[1] + r * a.sin()]
            })
            .collect()
    }

    #[test]
    fn exact_circle() {
        let pts = circle_pts([3.2, -1.7], 0.15, 40, std::f64::consts::TAU);
        let c = fit_circle(&pts).unwrap();
        assert!((c.center[0] - 3.2).abs() < 1e-9 && (c.center[1] + 1.7).abs() < 1e-9);
        assert!((c.radius - 0.15).abs() < 1e-9);
    }

    #[test]
    fn geometric_refinement_never_worse() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.01).unwrap();
        for _ in 0..50 {
            let pts: Vec<[f64; 2]> = circle_pts([0.0, 0.0], 0.2, 30, 2.0)
                .into_iter()
                .map(|p| [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)])
                .collect();
            let k = fit_circle_kasa(&pts).unwrap();
            let g = fit_circle(&pts).unwrap();
            assert!(g.rms <= k.rms);
        }
    }

    #[test]
    fn arc_coverage() {
        let pts = circle_pts([0.0, 0.0], 0.2, 120, 120f64.to_radians());
        let cov = arc_coverage_deg(&pts, [0.0, 0.0]);
        assert!((110.0..=130.0).contains(&cov), "{cov}");
    }

    fn cylinder_pts(r: f64, tilt_deg: f64, noise: f64, seed: u64) -> Vec<Vec3> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let t = tilt_deg.to_radians();
        let axis = Vec3::new(t.sin(), 0.0, t.cos());
        let u = Vec3::new(t.cos(), 0.0, -t.sin());
        let v = axis.cross(&u);
        let base = Vec3::new(1.0, 2.0, 0.5);
        (0..400)
            .map(|k| {
                let a = k as f64 * 2.399963;
                let s = 2.0 * (k as f64 / 400.0);
                let rr = r + if noise > 0.0 {
                    nd.sample(&mut rng)
                } else {
                    0.0
                };
                base + axis * s + (u * a.cos() + v * a.sin()) * rr
            })
            .collect()
    }

    #[test]
    fn exact_vertical_cylinder() {
        let c = fit_cylinder(&cylinder_pts(0.2, 0.0, 0.0, 0)).unwrap();
        assert!((c.radius - 0.2).abs() < 1e-6, "{c:?}");
        assert!(c.rms < 1e-6);
    }

    #[test]
    fn tilted_cylinder_direction() {
        let c = fit_cylinder(&cylinder_pts(0.2, 10.0, 0.0, 0)).unwrap();
        assert!((c.tilt_deg() - 10.0).abs() < 1.0, "{}", c.tilt_deg());
        assert!((c.radius - 0.2).abs() < 1e-4);
    }

    #[test]
    fn noisy_cylinder_radius() {
        for seed in 0..10 {
            let c = fit_cylinder(&cylinder_pts(0.2, 0.0, 0.005, seed)).unwrap();
            assert!((c.radius - 0.2).abs() < 0.003, "seed {seed}: {}", c.radius);
            assert!((c.rms - 0.005).abs() < 0.002);
        }
    }
}
