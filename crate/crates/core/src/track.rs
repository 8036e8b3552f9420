//! Closed-loop track geometry: validation, arc-length projection and
//! drivable-surface queries.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackColors {
    pub track_color: Rgb,
    pub line_color: Rgb,
    pub offtrack_color: Rgb,
    pub sky_color: Rgb,
}

impl Default for TrackColors {
    fn default() -> Self {
        Self {
            track_color: [96, 96, 96],
            line_color: [255, 255, 255],
            offtrack_color: [40, 120, 40],
            sky_color: [150, 200, 255],
        }
    }
}

/// Serialized track description. Wrap in [`Track`] to validate and query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    pub lane_width_m: f64,
    pub waypoints: Vec<Point>,
    #[serde(default)]
    pub colors: TrackColors,
}

impl TrackSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("track serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading track {}", path.display()), e))?;
        Self::from_json(&text)
    }
}

/// Straights plus two 180-degree arcs (counter-clockwise), 13 m around.
pub fn default_track() -> TrackSpec {
    const LENGTH_M: f64 = 13.0;
    const RADIUS_M: f64 = 1.0;
    const ARC_SEGMENTS: usize = 48;
    const STRAIGHT_SEGMENTS: usize = 8;

    // Size the straights so that the polyline (not the ideal arcs) is 13 m.
    let chord_arc_len = 2.0 * ARC_SEGMENTS as f64 * RADIUS_M * (PI / (2.0 * ARC_SEGMENTS as f64)).sin();
    let straight = (LENGTH_M - 2.0 * chord_arc_len) / 2.0;
    let half = straight / 2.0;

    let mut waypoints = Vec::with_capacity(2 * (ARC_SEGMENTS + STRAIGHT_SEGMENTS));
    let push_straight = |wp: &mut Vec<Point>, from: Point, to: Point| {
        for i in 0..STRAIGHT_SEGMENTS {
            let t = i as f64 / STRAIGHT_SEGMENTS as f64;
            wp.push([from[0] + (to[0] - from[0]) * t, from[1] + (to[1] - from[1]) * t]);
        }
    };
    let push_arc = |wp: &mut Vec<Point>, center: Point, start_angle: f64| {
        for i in 0..ARC_SEGMENTS {
            let a = start_angle + PI * i as f64 / ARC_SEGMENTS as f64;
            wp.push([center[0] + RADIUS_M * a.cos(), center[1] + RADIUS_M * a.sin()]);
        }
    };
    push_straight(&mut waypoints, [-half, -RADIUS_M], [half, -RADIUS_M]);
    push_arc(&mut waypoints, [half, 0.0], -PI / 2.0);
    push_straight(&mut waypoints, [half, RADIUS_M], [-half, RADIUS_M]);
    push_arc(&mut waypoints, [-half, 0.0], PI / 2.0);

    TrackSpec {
        lane_width_m: 0.6,
        waypoints,
        colors: TrackColors::default(),
    }
}

/// Result of projecting a point onto the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc position in [0, length).
    pub arc_m: f64,
    /// Signed perpendicular distance; left of the driving direction is positive.
    pub lateral_m: f64,
    pub segment: usize,
}

/// A validated track with cached arc lengths and a segment lookup grid.
#[derive(Debug, Clone)]
pub struct Track {
    spec: TrackSpec,
    /// cumulative[i] is the arc position of waypoint i; cumulative[n] = length.
    cumulative: Vec<f64>,
    grid: SegmentGrid,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Closest-point parameter in [0, 1] and squared distance from `p` to `a->b`.
fn closest_on_segment(a: Point, b: Point, p: Point) -> (f64, f64) {
    let d = sub(b, a);
    let ap = sub(p, a);
    let t = (dot(ap, d) / dot(d, d)).clamp(0.0, 1.0);
    let q = [a[0] + d[0] * t, a[1] + d[1] * t];
    let e = sub(p, q);
    (t, dot(e, e))
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let orient = |p: Point, q: Point, r: Point| cross(sub(q, p), sub(r, p));
    let on_seg = |p: Point, q: Point, r: Point| {
        r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
    };
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    (o1 == 0.0 && on_seg(a, b, c))
        || (o2 == 0.0 && on_seg(a, b, d))
        || (o3 == 0.0 && on_seg(c, d, a))
        || (o4 == 0.0 && on_seg(c, d, b))
}

impl Track {
    pub fn new(spec: TrackSpec) -> Result<Self> {
        let n = spec.waypoints.len();
        if n < 4 {
            return Err(Error::InvalidTrack(format!("need at least 4 waypoints, got {n}")));
        }
        if !(spec.lane_width_m > 0.0 && spec.lane_width_m.is_finite()) {
            return Err(Error::InvalidTrack("lane_width_m must be > 0".into()));
        }
        if spec.waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTrack("non-finite waypoint".into()));
        }
        let mut cumulative = Vec::with_capacity(n + 1);
        cumulative.push(0.0);
        for i in 0..n {
            let a = spec.waypoints[i];
            let b = spec.waypoints[(i + 1) % n];
            if a == b {
                return Err(Error::InvalidTrack(format!(
                    "waypoints {i} and {} coincide",
                    (i + 1) % n
                )));
            }
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            cumulative.push(cumulative[i] + len);
        }
        for i in 0..n {
            for j in i + 2..n {
                // Adjacent segments (including the closing pair) share a vertex.
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = (spec.waypoints[i], spec.waypoints[(i + 1) % n]);
                let (c, d) = (spec.waypoints[j], spec.waypoints[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(Error::InvalidTrack(format!(
                        "centerline self-intersects (segments {i} and {j})"
                    )));
                }
            }
        }
        let grid = SegmentGrid::build(&spec.waypoints, spec.lane_width_m / 2.0);
        Ok(Self {
            spec,
            cumulative,
            grid,
        })
    }

    pub fn default_track() -> Self {
        Self::new(default_track()).expect("default track is valid")
    }

    pub fn spec(&self) -> &TrackSpec {
        &self.spec
    }

    pub fn waypoints(&self) -> &[Point] {
        &self.spec.waypoints
    }

    pub fn lane_width_m(&self) -> f64 {
        self.spec.lane_width_m
    }

    pub fn colors(&self) -> &TrackColors {
        &self.spec.colors
    }

    pub fn segment_count(&self) -> usize {
        self.spec.waypoints.len()
    }

    fn segment(&self, i: usize) -> (Point, Point) {
        let n = self.segment_count();
        (self.spec.waypoints[i], self.spec.waypoints[(i + 1) % n])
    }

    /// Total length of the closed centerline polyline.
    pub fn centerline_length(&self) -> f64 {
        self.cumulative[self.segment_count()]
    }

    pub fn project(&self, p: Point) -> Projection {
        let mut best: Option<(f64, f64, usize, f64)> = None; // (dist2, arc, seg, t)
        for i in 0..self.segment_count() {
            let (a, b) = self.segment(i);
            let (t, d2) = closest_on_segment(a, b, p);
            let arc = self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i]);
            let better = match best {
                None => true,
                Some((bd2, barc, _, _)) => d2 < bd2 || (d2 == bd2 && arc < barc),
            };
            if better {
                best = Some((d2, arc, i, t));
            }
        }
        let (d2, mut arc, seg, _) = best.expect("track has segments");
        let (a, b) = self.segment(seg);
        let side = cross(sub(b, a), sub(p, a));
        let dist = d2.sqrt();
        let lateral = if side < 0.0 { -dist } else { dist };
        let len = self.centerline_length();
        if arc >= len {
            arc -= len;
        }
        Projection {
            arc_m: arc,
            lateral_m: lateral,
            segment: seg,
        }
    }

    pub fn is_on_track(&self, p: Point) -> bool {
        self.project(p).lateral_m.abs() <= self.spec.lane_width_m / 2.0
    }

    /// Point and unit tangent at an arc position (taken modulo the length).
    pub fn point_at(&self, arc_m: f64) -> (Point, Point) {
        let len = self.centerline_length();
        let s = arc_m.rem_euclid(len);
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.segment_count() - 1),
            Err(i) => i - 1,
        };
        let (a, b) = self.segment(i);
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        let t = (s - self.cumulative[i]) / seg_len;
        let d = sub(b, a);
        (
            [a[0] + d[0] * t, a[1] + d[1] * t],
            [d[0] / seg_len, d[1] / seg_len],
        )
    }

    /// Minimum distance from `p` to the centerline, considering only segments
    /// that can lie within `half lane width + margin` of it. Returns `None`
    /// when no segment is that close.
    pub(crate) fn near_distance(&self, p: Point) -> Option<f64> {
        let candidates = self.grid.candidates(p)?;
        let mut best = f64::INFINITY;
        for &i in candidates {
            let (a, b) = self.segment(i as usize);
            let (_, d2) = closest_on_segment(a, b, p);
            best = best.min(d2);
        }
        (best.is_finite()).then(|| best.sqrt())
    }
}

/// Uniform grid over the track bounding box; each cell lists the segments
/// whose `reach`-inflated bounding box overlaps it.
#[derive(Debug, Clone)]
struct SegmentGrid {
    origin: Point,
    cell: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<u32>>,
}

impl SegmentGrid {
    fn build(waypoints: &[Point], half_width: f64) -> Self {
        let reach = half_width * 1.01 + 1e-6;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in waypoints {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k] - reach);
                hi[k] = hi[k].max(p[k] + reach);
            }
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let cell = (half_width).max(extent / 512.0);
        let cols = ((hi[0] - lo[0]) / cell).ceil().max(1.0) as usize;
        let rows = ((hi[1] - lo[1]) / cell).ceil().max(1.0) as usize;
        let mut cells = vec![Vec::new(); cols * rows];
        let n = waypoints.len();
        for i in 0..n {
            let (a, b) = (waypoints[i], waypoints[(i + 1) % n]);
            let c0 = (((a[0].min(b[0]) - reach - lo[0]) / cell).floor().max(0.0) as usize).min(cols - 1);
            let c1 = (((a[0].max(b[0]) + reach - lo[0]) / cell).floor().max(0.0) as usize).min(cols - 1);
            let r0 = (((a[1].min(b[1]) - reach - lo[1]) / cell).floor().max(0.0) as usize).min(rows - 1);
            let r1 = (((a[1].max(b[1]) + reach - lo[1]) / cell).floor().max(0.0) as usize).min(rows - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    cells[r * cols + c].push(i as u32);
                }
            }
        }
        Self {
            origin: lo,
            cell,
            cols,
            rows,
            cells,
        }
    }

    fn candidates(&self, p: Point) -> Option<&[u32]> {
        let fx = (p[0] - self.origin[0]) / self.cell;
        let fy = (p[1] - self.origin[1]) / self.cell;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (c, r) = (fx as usize, fy as usize);
        if c >= self.cols || r >= self.rows {
            return None;
        }
        let list = &self.cells[r * self.cols + c];
        (!list.is_empty()).then_some(list.as_slice())
    }
}
