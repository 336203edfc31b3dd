//! Boustrophedon survey planning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rotate_about, wrap_angle, Polygon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaypointStatus {
    Pending,
    Reached,
    Skipped,
}

/// 6-DOF waypoint with zero roll and pitch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub row: usize,
    pub status: WaypointStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyPlan {
    pub polygon: Polygon,
    pub row_spacing: f64,
    pub waypoint_spacing: f64,
    pub sweep_heading: f64,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveyParams {
    pub row_spacing: f64,
    pub waypoint_spacing: f64,
    pub sweep_heading: f64,
    /// Smallest loop-closure search radius; rows may be at most 1.5 times this apart.
    pub loop_radius_min: f64,
}

impl Default for SurveyParams {
    fn default() -> Self {
        Self {
            row_spacing: 10.0,
            waypoint_spacing: 10.0,
            sweep_heading: 0.0,
            loop_radius_min: 10.0,
        }
    }
}

impl SurveyPlan {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.waypoints.last().map_or(0, |w| w.row + 1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("survey plan: {e}")))
    }
}

pub fn plan_survey_with(polygon: &Polygon, params: &SurveyParams) -> Result<SurveyPlan> {
    if params.row_spacing > 1.5 * params.loop_radius_min + 1e-9 {
        return Err(Error::Config(format!(
            "row spacing {} m exceeds 1.5x the loop-closure radius {} m",
            params.row_spacing, params.loop_radius_min
        )));
    }
    plan_survey(
        polygon,
        params.row_spacing,
        params.waypoint_spacing,
        params.sweep_heading,
    )
}

/// Rows run along `sweep_heading`; row offsets are centred across the polygon.
pub fn plan_survey(
    polygon: &Polygon,
    row_spacing: f64,
    waypoint_spacing: f64,
    sweep_heading: f64,
) -> Result<SurveyPlan> {
    if !(row_spacing > 0.0 && waypoint_spacing > 0.0) {
        return Err(Error::Config("spacings must be positive".into()));
    }
    if polygon
        .vertices
        .iter()
        .any(|v| !v[0].is_finite() || !v[1].is_finite())
    {
        return Err(Error::DegeneratePolygon("non-finite vertex".into()));
    }
    if !polygon.is_simple() {
        return Err(Error::DegeneratePolygon("polygon is not simple".into()));
    }
    if polygon.area() <= 1e-9 {
        return Err(Error::DegeneratePolygon("zero area".into()));
    }

    // Work in a frame where rows are parallel to the x axis.
    let about = polygon.vertices[0];
    let local = polygon.rotated(-sweep_heading, about);
    let ys = local.vertices.iter().map(|v| v[1]);
    let y_min = ys.clone().fold(f64::INFINITY, f64::min);
    let y_max = ys.fold(f64::NEG_INFINITY, f64::max);
    let height = y_max - y_min;
    let n_rows = (height / row_spacing + 1e-9).floor() as usize + 1;
    if height < row_spacing {
        log::warn!("row spacing {row_spacing} m exceeds polygon width {height:.2} m; planning a single row");
    }
    let first = y_min + 0.5 * (height - (n_rows - 1) as f64 * row_spacing);

    let mut waypoints = Vec::new();
    let mut row_idx = 0;
    for r in 0..n_rows {
        let y = first + r as f64 * row_spacing;
        let Some((a, b)) = row_span(&local, y) else {
            continue;
        };
        let len = b - a;
        let n = ((len / waypoint_spacing) - 1e-9).ceil().max(0.0) as usize + 1;
        let step = if n > 1 { len / (n - 1) as f64 } else { 0.0 };
        let forward = row_idx % 2 == 0;
        let yaw = if forward {
            sweep_heading
        } else {
            sweep_heading + std::f64::consts::PI
        };
        for k in 0..n {
            let kk = if forward { k } else { n - 1 - k };
            let x = a + kk as f64 * step;
            let [wx, wy] = rotate_about([x, y], sweep_heading, about);
            waypoints.push(Waypoint {
                x: wx,
                y: wy,
                z: 0.0,
                roll: 0.0,
                pitch: 0.0,
                yaw: wrap_angle(yaw),
                row: row_idx,
                status: WaypointStatus::Pending,
            });
        }
        row_idx += 1;
    }
    if waypoints.is_empty() {
        return Err(Error::DegeneratePolygon(
            "no row intersects the polygon".into(),
        ));
    }
    Ok(SurveyPlan {
        polygon: polygon.clone(),
        row_spacing,
        waypoint_spacing,
        sweep_heading,
        waypoints,
    })
}

/// Extent of the horizontal line `y` inside the polygon, between its outermost crossings.
fn row_span(poly: &Polygon, y: f64) -> Option<(f64, f64)> {
    let mut xs = Vec::new();
    for (a, b) in poly.edges() {
        let (lo, hi) = if a[1] <= b[1] { (a, b) } else { (b, a) };
        if y < lo[1] - 1e-12 || y > hi[1] + 1e-12 {
            continue;
        }
        if (hi[1] - lo[1]).abs() < 1e-12 {
            xs.push(a[0]);
            xs.push(b[0]);
        } else {
            let t = ((y - lo[1]) / (hi[1] - lo[1])).clamp(0.0, 1.0);
            xs.push(lo[0] + t * (hi[0] - lo[0]));
        }
    }
    let a = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let b = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (a.is_finite() && b >= a).then_some((a, b))
}
