//! Object error terms and the observation primitives they consume.

mod fit;
mod residuals;

use std::fmt;
use std::str::FromStr;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraView, DualConic, Ellipse, EllipsoidParams, Line2};
use crate::hull::{hull_edges, quickhull, simplify_capped, Contour2D, HullPolygon};
use crate::polygon::Polygon2D;

pub use fit::{fit_ellipse, inscribed_bbox_ellipse};
pub use residuals::{
    distribution_residual, overlap_residual, overlap_value, plane_algebraic_residual,
    plane_algebraic_values, point_algebraic_residual, point_reprojection_residual,
    projected_ellipse, wasserstein2, ResidualBlock, ResidualKind, Wrt, CONIC_POLYGON_VERTICES,
    FD_STEP, POSE_DOF, QUADRIC_DOF,
};
use residuals::{distribution_residual_wrt, overlap_residual_wrt};

/// Maximum number of contour samples fed to the point-algebraic term.
pub const POINT_ALGEBRAIC_SAMPLES: usize = 64;

/// Per-frame segmentation of one object with its derived primitives.
#[derive(Clone, Debug)]
pub struct Observation {
    pub frame_id: usize,
    pub object_id: usize,
    pub bbox: [f64; 4],
    pub contour: Contour2D,
    pub hull: HullPolygon,
    pub fitted_conic: Option<DualConic>,
}

impl Observation {
    /// Derives bbox, simplified hull and fitted conic from a contour.
    pub fn from_contour(
        frame_id: usize,
        object_id: usize,
        contour: Contour2D,
        simplify_tol: f64,
        max_edges: usize,
    ) -> Result<Self> {
        let bbox = contour.bbox();
        let hull = simplify_capped(&quickhull(&contour)?, simplify_tol, max_edges)?;
        let fitted_conic = fit_ellipse(contour.points()).ok().map(|e| e.dual_conic());
        Ok(Self {
            frame_id,
            object_id,
            bbox,
            contour,
            hull,
            fitted_conic,
        })
    }
}

fn bbox_lines(b: [f64; 4]) -> Result<Vec<Line2>> {
    let c = [
        Point2::new(b[0], b[1]),
        Point2::new(b[2], b[1]),
        Point2::new(b[2], b[3]),
        Point2::new(b[0], b[3]),
    ];
    (0..4)
        .map(|i| Line2::through(&c[i], &c[(i + 1) % 4]))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorTerm {
    Overlap,
    Distribution,
    PointAlgebraic,
    PlaneAlgebraic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Primitive {
    Bbox,
    Conic,
    Contour,
    Hull,
}

/// Observation data in the form a given error term consumes.
#[derive(Clone, Debug)]
pub enum Measurement {
    Lines(Vec<Line2>),
    Region(Polygon2D),
    Ellipse(Ellipse),
    Points(Vec<Point2<f64>>),
}

/// An (error term, primitive) pair plus the primitive's simplification settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintSpec {
    pub term: ErrorTerm,
    pub primitive: Primitive,
    /// Douglas-Peucker tolerance in pixels for contour and hull primitives.
    pub tol: f64,
    /// Edge cap for hulls; 0 disables it.
    pub max_edges: usize,
}

impl ConstraintSpec {
    pub fn new(term: ErrorTerm, primitive: Primitive, tol: f64, max_edges: usize) -> Result<Self> {
        use ErrorTerm::*;
        use Primitive::*;
        let ok = matches!(
            (term, primitive),
            (Overlap, _)
                | (Distribution, Bbox | Conic)
                | (PointAlgebraic, Contour)
                | (PlaneAlgebraic, Bbox | Contour | Hull)
        );
        if !ok {
            return Err(Error::Config(format!(
                "unsupported constraint {}",
                Self::name_of(term, primitive)
            )));
        }
        if !(tol >= 0.0) || !tol.is_finite() {
            return Err(Error::Config(format!(
                "simplification tolerance must be >= 0, got {tol}"
            )));
        }
        Ok(Self {
            term,
            primitive,
            tol,
            max_edges,
        })
    }

    /// The proposed constraint: plane-algebraic error on convex-hull edges.
    pub fn hull_plane(tol: f64, max_edges: usize) -> Self {
        Self {
            term: ErrorTerm::PlaneAlgebraic,
            primitive: Primitive::Hull,
            tol,
            max_edges,
        }
    }

    fn name_of(term: ErrorTerm, primitive: Primitive) -> String {
        let t = match term {
            ErrorTerm::Overlap => "overlap",
            ErrorTerm::Distribution => "distribution",
            ErrorTerm::PointAlgebraic => "point",
            ErrorTerm::PlaneAlgebraic => "plane",
        };
        let p = match primitive {
            Primitive::Bbox => "bbox",
            Primitive::Conic => "conic",
            Primitive::Contour => "contour",
            Primitive::Hull => "hull",
        };
        format!("{t}-{p}")
    }

    pub fn name(&self) -> String {
        Self::name_of(self.term, self.primitive)
    }

    /// Parses `term-primitive` names such as `plane-hull` or `overlap-bbox`.
    pub fn parse(name: &str, tol: f64, max_edges: usize) -> Result<Self> {
        let (t, p) = name
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("unknown constraint '{name}'")))?;
        let term = match t {
            "overlap" => ErrorTerm::Overlap,
            "distribution" => ErrorTerm::Distribution,
            "point" => ErrorTerm::PointAlgebraic,
            "plane" => ErrorTerm::PlaneAlgebraic,
            _ => return Err(Error::Config(format!("unknown error term in '{name}'"))),
        };
        let primitive = match p {
            "bbox" => Primitive::Bbox,
            "conic" => Primitive::Conic,
            "contour" => Primitive::Contour,
            "hull" => Primitive::Hull,
            _ => return Err(Error::Config(format!("unknown primitive in '{name}'"))),
        };
        Self::new(term, primitive, tol, max_edges)
    }

    pub fn kind(&self) -> ResidualKind {
        match self.term {
            ErrorTerm::Overlap => ResidualKind::Overlap,
            ErrorTerm::Distribution => ResidualKind::Distribution,
            ErrorTerm::PointAlgebraic => ResidualKind::PointAlgebraic,
            ErrorTerm::PlaneAlgebraic => ResidualKind::PlaneAlgebraic,
        }
    }

    fn hull(&self, obs: &Observation) -> Result<HullPolygon> {
        simplify_capped(&quickhull(&obs.contour)?, self.tol, self.max_edges)
    }

    fn conic(&self, obs: &Observation) -> Result<Ellipse> {
        match &obs.fitted_conic {
            Some(c) => c.to_ellipse(),
            None => fit_ellipse(obs.contour.points()),
        }
    }

    /// Extracts what this constraint needs from an observation.
    pub fn prepare(&self, obs: &Observation) -> Result<Measurement> {
        use ErrorTerm::*;
        use Primitive::*;
        Ok(match (self.term, self.primitive) {
            (PlaneAlgebraic, Hull) => Measurement::Lines(hull_edges(&self.hull(obs)?)),
            (PlaneAlgebraic, Contour) => Measurement::Lines(obs.contour.edge_lines(self.tol)?),
            (PlaneAlgebraic, Bbox) => Measurement::Lines(bbox_lines(obs.bbox)?),
            (Overlap, Bbox) => Measurement::Region(Polygon2D::rectangle(obs.bbox)?),
            (Overlap, Conic) => Measurement::Region(Polygon2D::new(
                self.conic(obs)?.polygon(CONIC_POLYGON_VERTICES),
            )?),
            (Overlap, Contour) => Measurement::Region(Polygon2D::new(crate::hull::simplify_ring(
                obs.contour.points(),
                self.tol,
            ))?),
            (Overlap, Hull) => {
                Measurement::Region(Polygon2D::new(self.hull(obs)?.vertices().to_vec())?)
            }
            (Distribution, Bbox) => Measurement::Ellipse(inscribed_bbox_ellipse(obs.bbox)?),
            (Distribution, Conic) => Measurement::Ellipse(self.conic(obs)?),
            (PointAlgebraic, Contour) => {
                Measurement::Points(obs.contour.subsample(POINT_ALGEBRAIC_SAMPLES))
            }
            _ => {
                return Err(Error::Config(format!(
                    "unsupported constraint {}",
                    self.name()
                )))
            }
        })
    }

    /// Residual block of this constraint for a prepared measurement.
    pub fn residual(
        &self,
        meas: &Measurement,
        q: &EllipsoidParams,
        cam: &CameraView,
    ) -> Result<ResidualBlock> {
        self.residual_wrt(meas, q, cam, Wrt::Both)
    }

    /// As [`ConstraintSpec::residual`]; numeric terms skip the Jacobian blocks not in `wrt`.
    pub fn residual_wrt(
        &self,
        meas: &Measurement,
        q: &EllipsoidParams,
        cam: &CameraView,
        wrt: Wrt,
    ) -> Result<ResidualBlock> {
        match (self.term, meas) {
            (ErrorTerm::PlaneAlgebraic, Measurement::Lines(l)) => {
                plane_algebraic_residual(q, cam, l)
            }
            (ErrorTerm::Overlap, Measurement::Region(r)) => overlap_residual_wrt(q, cam, r, wrt),
            (ErrorTerm::Distribution, Measurement::Ellipse(e)) => {
                distribution_residual_wrt(q, cam, e, wrt)
            }
            (ErrorTerm::PointAlgebraic, Measurement::Points(p)) => {
                point_algebraic_residual(q, cam, p)
            }
            _ => Err(Error::InvalidParameter(format!(
                "measurement does not match constraint {}",
                self.name()
            ))),
        }
    }
}

impl ConstraintSpec {
    /// Residual values only, without Jacobians.
    pub fn values(
        &self,
        meas: &Measurement,
        q: &EllipsoidParams,
        cam: &CameraView,
    ) -> Result<nalgebra::DVector<f64>> {
        use nalgebra::DVector;
        match (self.term, meas) {
            (ErrorTerm::PlaneAlgebraic, Measurement::Lines(l)) => Ok(DVector::from_vec(
                plane_algebraic_values(&q.dual(), cam, l)?,
            )),
            (ErrorTerm::Overlap, Measurement::Region(r)) => {
                Ok(DVector::from_element(1, overlap_value(q, cam, r)?))
            }
            (ErrorTerm::Distribution, Measurement::Ellipse(e)) => Ok(DVector::from_element(
                1,
                wasserstein2(e, &projected_ellipse(q, cam)?),
            )),
            _ => Ok(self.residual(meas, q, cam)?.values),
        }
    }
}

impl fmt::Display for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl FromStr for ConstraintSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, 0.0, 0)
    }
}
