//! Circle stacks along stems, frustum reconstruction and traits.

use serde::{Deserialize, Serialize};

use super::fit::{arc_coverage_deg, fit_circle};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::sim::BREAST_HEIGHT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StemParams {
    pub band: f64,
    pub min_band_points: usize,
    pub rms_gate: f64,
    /// Bands covering less arc than this are flagged.
    pub min_arc_deg: f64,
    pub breast_height: f64,
    /// Highest normalised height the sensor can see at its effective range.
    pub height_ceiling: f64,
}

impl Default for StemParams {
    fn default() -> Self {
        Self {
            band: 0.5,
            min_band_points: 10,
            rms_gate: 0.05,
            min_arc_deg: 180.0,
            breast_height: BREAST_HEIGHT,
            height_ceiling: 9.46,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StemCircle {
    /// Height above local terrain.
    pub height: f64,
    pub center: [f64; 2],
    pub radius: f64,
    pub rms: f64,
    pub points: usize,
    pub arc_deg: f64,
    pub low_coverage: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frustum {
    pub h0: f64,
    pub h1: f64,
    pub c0: [f64; 2],
    pub c1: [f64; 2],
    pub r0: f64,
    pub r1: f64,
}

impl Frustum {
    /// Oblique frustums share the right frustum's volume (Cavalieri).
    pub fn volume(&self) -> f64 {
        std::f64::consts::PI
            * (self.h1 - self.h0)
            * (self.r0 * self.r0 + self.r0 * self.r1 + self.r1 * self.r1)
            / 3.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TraitFlags {
    pub extrapolated: bool,
    pub fov_limited: bool,
    pub low_coverage: bool,
}

impl TraitFlags {
    pub fn labels(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.extrapolated {
            v.push("extrapolated");
        }
        if self.fov_limited {
            v.push("fov_limited");
        }
        if self.low_coverage {
            v.push("low_coverage");
        }
        v
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Traits {
    pub dbh: Option<f64>,
    pub height: Option<f64>,
    pub flags: TraitFlags,
}

/// Fits one circle per height band of the stem cloud, heights measured from `ground`.
/// Each band is fitted twice, the second time without points beyond three RMS.
pub fn fit_circles_along_stem(
    cloud: &PointCloud,
    ground: f64,
    params: &StemParams,
) -> Result<Vec<StemCircle>> {
    let mut bands: std::collections::BTreeMap<i64, Vec<(f64, [f64; 2])>> = Default::default();
    for p in &cloud.points {
        let h = p.z - ground;
        if h < 0.0 {
            continue;
        }
        bands
            .entry((h / params.band).floor() as i64)
            .or_default()
            .push((h, [p.x, p.y]));
    }
    let mut out = Vec::new();
    for pts in bands.values() {
        if pts.len() < params.min_band_points {
            continue;
        }
        let xy: Vec<[f64; 2]> = pts.iter().map(|p| p.1).collect();
        let Ok(first) = fit_circle(&xy) else { continue };
        let gate = 3.0 * first.rms.max(0.005);
        let kept: Vec<usize> = (0..xy.len())
            .filter(|&i| {
                ((xy[i][0] - first.center[0]).hypot(xy[i][1] - first.center[1]) - first.radius)
                    .abs()
                    <= gate
            })
            .collect();
        let (circle, used) = if kept.len() >= params.min_band_points && kept.len() < xy.len() {
            let sub: Vec<[f64; 2]> = kept.iter().map(|&i| xy[i]).collect();
            match fit_circle(&sub) {
                Ok(c) => (c, kept),
                Err(_) => (first, (0..xy.len()).collect()),
            }
        } else {
            (first, (0..xy.len()).collect())
        };
        if circle.rms > params.rms_gate {
            continue;
        }
        let height = used.iter().map(|&i| pts[i].0).sum::<f64>() / used.len() as f64;
        let used_xy: Vec<[f64; 2]> = used.iter().map(|&i| xy[i]).collect();
        let arc_deg = arc_coverage_deg(&used_xy, circle.center);
        out.push(StemCircle {
            height,
            center: circle.center,
            radius: circle.radius,
            rms: circle.rms,
            points: used.len(),
            arc_deg,
            low_coverage: arc_deg < params.min_arc_deg,
        });
    }
    if out.len() < 2 {
        return Err(Error::ReconstructionFailed(format!(
            "{} valid circle bands",
            out.len()
        )));
    }
    Ok(out)
}

pub fn reconstruct_frustums(circles: &[StemCircle]) -> Result<Vec<Frustum>> {
    if circles.len() < 2 {
        return Err(Error::ReconstructionFailed(format!(
            "{} circles",
            circles.len()
        )));
    }
    if circles.windows(2).any(|w| w[1].height <= w[0].height) {
        return Err(Error::NonMonotoneHeights);
    }
    Ok(circles
        .windows(2)
        .map(|w| Frustum {
            h0: w[0].height,
            h1: w[1].height,
            c0: w[0].center,
            c1: w[1].center,
            r0: w[0].radius,
            r1: w[1].radius,
        })
        .collect())
}

pub fn stem_volume(frustums: &[Frustum]) -> f64 {
    frustums.iter().map(Frustum::volume).sum()
}

/// DBH by linear interpolation of circle radii at breast height; height is the
/// highest normalised point.
pub fn estimate_traits(circles: &[StemCircle], top: Option<f64>, params: &StemParams) -> Traits {
    let bh = params.breast_height;
    let mut flags = TraitFlags {
        fov_limited: top.is_some_and(|h| h >= params.height_ceiling - 0.5),
        ..Default::default()
    };
    let lerp = |a: &StemCircle, b: &StemCircle| {
        let t = (bh - a.height) / (b.height - a.height);
        2.0 * (a.radius + t * (b.radius - a.radius))
    };
    let dbh = match circles.len() {
        0 | 1 => None,
        n => {
            if bh < circles[0].height {
                (circles[0].height - bh <= params.band).then(|| {
                    flags.extrapolated = true;
                    lerp(&circles[0], &circles[1])
                })
            } else if bh > circles[n - 1].height {
                (bh - circles[n - 1].height <= params.band).then(|| {
                    flags.extrapolated = true;
                    lerp(&circles[n - 2], &circles[n - 1])
                })
            } else {
                let k = circles.partition_point(|c| c.height <= bh).clamp(1, n - 1);
                let (a, b) = (&circles[k - 1], &circles[k]);
                flags.low_coverage = a.low_coverage && b.low_coverage;
                Some(lerp(a, b))
            }
        }
    };
    Traits {
        dbh: dbh.filter(|d| *d > 0.0),
        height: top,
        flags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Label, Vec3};

    fn circ(h: f64, r: f64) -> StemCircle {
        StemCircle {
            height: h,
            center: [0.0, 0.0],
            radius: r,
            rms: 0.0,
            points: 20,
            arc_deg: 360.0,
            low_coverage: false,
        }
    }

    #[test]
    fn dbh_interpolation_example() {
        let t = estimate_traits(
            &[circ(1.0, 0.16), circ(2.0, 0.14)],
            Some(5.0),
            &StemParams::default(),
        );
        assert!((t.dbh.unwrap() - 0.308).abs() < 1e-12);
        assert!(!t.flags.extrapolated);
    }

    #[test]
    fn dbh_extrapolated_and_absent() {
        let p = StemParams::default();
        let t = estimate_traits(&[circ(1.5, 0.16), circ(2.0, 0.14)], None, &p);
        assert!(t.flags.extrapolated && t.dbh.is_some());
        let t = estimate_traits(&[circ(2.5, 0.16), circ(3.0, 0.14)], None, &p);
        assert!(t.dbh.is_none());
    }

    #[test]
    fn fov_limited_height() {
        let t = estimate_traits(
            &[circ(1.0, 0.16), circ(2.0, 0.14)],
            Some(9.2),
            &StemParams::default(),
        );
        assert!(t.flags.fov_limited);
        let t = estimate_traits(
            &[circ(1.0, 0.16), circ(2.0, 0.14)],
            Some(8.0),
            &StemParams {
                height_ceiling: 8.0,
                ..Default::default()
            },
        );
        assert_eq!(t.height, Some(8.0));
        assert!(t.flags.fov_limited);
    }

    #[test]
    fn frustum_volume_formula() {
        let f = reconstruct_frustums(&[circ(0.0, 0.2), circ(1.0, 0.1)]).unwrap();
        let expected = std::f64::consts::PI * (0.04 + 0.02 + 0.01) / 3.0;
        assert!((f[0].volume() - expected).abs() < 1e-12);
        let mut a = circ(0.0, 0.2);
        a.center = [0.3, -0.2];
        let g = reconstruct_frustums(&[a, circ(1.0, 0.1)]).unwrap();
        assert!((g[0].volume() - expected).abs() < 1e-12);
        let n = reconstruct_frustums(&[
            circ(0.0, 0.2),
            circ(1.0, 0.1),
            circ(2.0, 0.1),
            circ(3.0, 0.05),
        ])
        .unwrap();
        assert_eq!(n.len(), 3);
        assert!(matches!(
            reconstruct_frustums(&[circ(1.0, 0.2), circ(1.0, 0.1)]),
            Err(Error::NonMonotoneHeights)
        ));
    }

    #[test]
    fn tapered_stem_band_radii() {
        // 0.40 m base diameter, taper 0.01 m per m.
        let mut pc = PointCloud::new();
        for k in 0..400 {
            let z = k as f64 * 0.02;
            let r = 0.5 * (0.40 - 0.01 * z);
            for a in 0..30 {
                let a = a as f64 * std::f64::consts::TAU / 30.0 + 0.05 * k as f64;
                pc.push(
                    Vec3::new(5.0 + r * a.cos(), -2.0 + r * a.sin(), 0.3 + z),
                    Label::Stem(0),
                );
            }
        }
        let circles = fit_circles_along_stem(&pc, 0.3, &StemParams::default()).unwrap();
        assert_eq!(circles.len(), 16);
        for c in &circles {
            let truth = 0.5 * (0.40 - 0.01 * c.height);
            assert!((c.radius - truth).abs() < 0.005, "{c:?}");
        }
        let t = estimate_traits(&circles, Some(8.0), &StemParams::default());
        assert!((t.dbh.unwrap() - (0.40 - 0.013)).abs() < 0.002);
    }

    #[test]
    fn half_arc_band_is_flagged() {
        let mut pc = PointCloud::new();
        for k in 0..100 {
            let z = k as f64 * 0.02;
            for a in 0..20 {
                let a = a as f64 * (120f64.to_radians() / 20.0);
                pc.push(Vec3::new(0.2 * a.cos(), 0.2 * a.sin(), z), Label::Stem(0));
            }
        }
        let circles = fit_circles_along_stem(&pc, 0.0, &StemParams::default()).unwrap();
        assert!(circles
            .iter()
            .all(|c| c.low_coverage && (c.radius - 0.2).abs() < 1e-6));
    }
}
