//! Analytic level-set functions describing the fluid domain `{phi < 0}`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::{norm, sub, Real, Vec2};

type ScalarField<T> = Arc<dyn Fn(Vec2<T>) -> T + Send + Sync>;
type VectorField<T> = Arc<dyn Fn(Vec2<T>) -> Vec2<T> + Send + Sync>;

/// A level-set function together with its analytic gradient.
///
/// The fluid occupies `phi < 0`, the embedded boundary is `phi = 0`.
#[derive(Clone)]
pub enum LevelSet<T: Real> {
    /// Constant value everywhere; `Uniform(-1)` is an uncut domain.
    Uniform(T),
    /// `phi = n . x - offset`.
    HalfPlane { normal: Vec2<T>, offset: T },
    /// `phi = |x - c|^2 - r^2`, fluid inside the disc.
    Disc { center: Vec2<T>, radius: T },
    /// Circular annulus centred at the origin.
    Annulus { inner: T, outer: T },
    /// Straight channel of half width `half_width` whose centreline passes through
    /// `center` at inclination `theta`.
    TiltedStrip {
        center: Vec2<T>,
        half_width: T,
        sin: T,
        cos: T,
    },
    /// `phi = r^2 - |x - c|^2`, fluid outside the circle.
    Circle { center: Vec2<T>, radius: T },
    /// Convex arc followed by a concave arc and a flat wall.
    ConvexConcave {
        radius: T,
        center_a: Vec2<T>,
        center_b: Vec2<T>,
    },
    /// User supplied field with a bound on `|grad phi|`.
    Custom {
        value: ScalarField<T>,
        gradient: VectorField<T>,
        lipschitz: T,
    },
}

impl<T: Real> fmt::Debug for LevelSet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelSet::Uniform(v) => write!(f, "Uniform({v})"),
            LevelSet::HalfPlane { normal, offset } => {
                write!(f, "HalfPlane {{ normal: {normal:?}, offset: {offset} }}")
            }
            LevelSet::Disc { center, radius } => {
                write!(f, "Disc {{ center: {center:?}, radius: {radius} }}")
            }
            LevelSet::Annulus { inner, outer } => {
                write!(f, "Annulus {{ inner: {inner}, outer: {outer} }}")
            }
            LevelSet::TiltedStrip {
                center,
                half_width,
                sin,
                cos,
            } => write!(
                f,
                "TiltedStrip {{ center: {center:?}, half_width: {half_width}, theta: {} }}",
                sin.atan2(*cos)
            ),
            LevelSet::Circle { center, radius } => {
                write!(f, "Circle {{ center: {center:?}, radius: {radius} }}")
            }
            LevelSet::ConvexConcave {
                radius,
                center_a,
                center_b,
            } => write!(
                f,
                "ConvexConcave {{ radius: {radius}, center_a: {center_a:?}, center_b: {center_b:?} }}"
            ),
            LevelSet::Custom { lipschitz, .. } => write!(f, "Custom {{ lipschitz: {lipschitz} }}"),
        }
    }
}

fn positive<T: Real>(name: &str, v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive, got {v}")))
    }
}

impl<T: Real> LevelSet<T> {
    pub fn uncut() -> Self {
        LevelSet::Uniform(-T::one())
    }

    pub fn half_plane(normal: Vec2<T>, offset: T) -> Result<Self> {
        if norm(normal) == T::zero() {
            return Err(Error::Parameter("half-plane normal is zero".into()));
        }
        Ok(LevelSet::HalfPlane { normal, offset })
    }

    pub fn disc(center: Vec2<T>, radius: T) -> Result<Self> {
        positive("disc radius", radius)?;
        Ok(LevelSet::Disc { center, radius })
    }

    pub fn annulus(inner: T, outer: T) -> Result<Self> {
        positive("inner radius", inner)?;
        if outer <= inner {
            return Err(Error::Parameter(format!(
                "annulus needs inner < outer, got {inner} >= {outer}"
            )));
        }
        Ok(LevelSet::Annulus { inner, outer })
    }

    /// `theta` in radians.
    pub fn tilted_strip(center: Vec2<T>, half_width: T, theta: T) -> Result<Self> {
        positive("strip half width", half_width)?;
        Ok(LevelSet::TiltedStrip {
            center,
            half_width,
            sin: theta.sin(),
            cos: theta.cos(),
        })
    }

    pub fn circle(center: Vec2<T>, radius: T) -> Result<Self> {
        positive("circle radius", radius)?;
        Ok(LevelSet::Circle { center, radius })
    }

    /// `theta` in radians, strictly between 0 and pi/2.
    pub fn convex_concave(radius: T, theta: T) -> Result<Self> {
        positive("wall radius", radius)?;
        if !(theta > T::zero() && theta < T::FRAC_PI_2()) {
            return Err(Error::Parameter(format!(
                "wall angle must lie in (0, 90) degrees, got {} rad",
                theta
            )));
        }
        let (s, c) = theta.sin_cos();
        Ok(LevelSet::ConvexConcave {
            radius,
            center_a: [radius * s, -radius * c],
            center_b: [radius * s, radius * (T::two() - c)],
        })
    }

    pub fn custom(
        value: impl Fn(Vec2<T>) -> T + Send + Sync + 'static,
        gradient: impl Fn(Vec2<T>) -> Vec2<T> + Send + Sync + 'static,
        lipschitz: T,
    ) -> Self {
        LevelSet::Custom {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            lipschitz,
        }
    }

    pub fn value(&self, x: Vec2<T>) -> T {
        match self {
            LevelSet::Uniform(v) => *v,
            LevelSet::HalfPlane { normal, offset } => normal[0] * x[0] + normal[1] * x[1] - *offset,
            LevelSet::Disc { center, radius } => {
                let d = sub(x, *center);
                d[0] * d[0] + d[1] * d[1] - *radius * *radius
            }
            LevelSet::Annulus { inner, outer } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let mid = (*inner + *outer) * T::half();
                if r2.sqrt() <= mid {
                    *inner * *inner - r2
                } else {
                    r2 - *outer * *outer
                }
            }
            LevelSet::TiltedStrip {
                center,
                half_width,
                sin,
                cos,
            } => {
                let eta = -(x[0] - center[0]) * *sin + (x[1] - center[1]) * *cos;
                eta * eta - *half_width * *half_width
            }
            LevelSet::Circle { center, radius } => {
                let d = sub(x, *center);
                *radius * *radius - (d[0] * d[0] + d[1] * d[1])
            }
            LevelSet::ConvexConcave {
                radius,
                center_a,
                center_b,
            } => {
                if x[0] > center_b[0] && x[1] < center_b[1] {
                    norm(sub(x, *center_b)) - *radius
                } else {
                    let d1 = *radius - norm(sub(x, *center_a));
                    let d3 = x[0] - center_b[0] - *radius;
                    d1.max(d3)
                }
            }
            LevelSet::Custom { value, .. } => value(x),
        }
    }

    pub fn gradient(&self, x: Vec2<T>) -> Vec2<T> {
        let two = T::two();
        match self {
            LevelSet::Uniform(_) => [T::zero(), T::zero()],
            LevelSet::HalfPlane { normal, .. } => *normal,
            LevelSet::Disc { center, .. } => {
                let d = sub(x, *center);
                [two * d[0], two * d[1]]
            }
            LevelSet::Annulus { inner, outer } => {
                let r = norm(x);
                let mid = (*inner + *outer) * T::half();
                let s = if r <= mid { -two } else { two };
                [s * x[0], s * x[1]]
            }
            LevelSet::TiltedStrip {
                center, sin, cos, ..
            } => {
                let eta = -(x[0] - center[0]) * *sin + (x[1] - center[1]) * *cos;
                [-two * eta * *sin, two * eta * *cos]
            }
            LevelSet::Circle { center, .. } => {
                let d = sub(x, *center);
                [-two * d[0], -two * d[1]]
            }
            LevelSet::ConvexConcave {
                radius,
                center_a,
                center_b,
            } => {
                if x[0] > center_b[0] && x[1] < center_b[1] {
                    let d = sub(x, *center_b);
                    let n = norm(d);
                    [d[0] / n, d[1] / n]
                } else {
                    let da = sub(x, *center_a);
                    let na = norm(da);
                    let d1 = *radius - na;
                    let d3 = x[0] - center_b[0] - *radius;
                    if d1 >= d3 {
                        [-da[0] / na, -da[1] / na]
                    } else {
                        [T::one(), T::zero()]
                    }
                }
            }
            LevelSet::Custom { gradient, .. } => gradient(x),
        }
    }

    /// Upper bound of `|grad phi|` over the box `[lo, hi]`.
    pub fn lipschitz_bound(&self, lo: Vec2<T>, hi: Vec2<T>) -> T {
        let corners = [lo, [hi[0], lo[1]], [lo[0], hi[1]], hi];
        let max_corner = |f: &dyn Fn(Vec2<T>) -> T| {
            corners.iter().fold(T::zero(), |m, &c| m.max(f(c)))
        };
        match self {
            LevelSet::Uniform(_) => T::zero(),
            LevelSet::HalfPlane { normal, .. } => norm(*normal),
            LevelSet::Disc { center, .. } | LevelSet::Circle { center, .. } => {
                T::two() * max_corner(&|c| norm(sub(c, *center)))
            }
            LevelSet::Annulus { .. } => T::two() * max_corner(&|c| norm(c)),
            LevelSet::TiltedStrip {
                center, sin, cos, ..
            } => {
                T::two()
                    * max_corner(&|c| {
                        (-(c[0] - center[0]) * *sin + (c[1] - center[1]) * *cos).abs()
                    })
            }
            LevelSet::ConvexConcave { .. } => T::one(),
            LevelSet::Custom { lipschitz, .. } => *lipschitz,
        }
    }
}
