use serde::{Deserialize, Serialize};

use crate::scalar::{c, Real};
use crate::{Error, Result};

/// A search grid over parameter space: a strictly increasing 1-D axis, or
/// a full lattice over several axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid<R> {
    points: Vec<Vec<R>>,
    dims: usize,
    /// Per-axis spacing; zero for a single-point axis.
    steps: Vec<R>,
}

impl<R: Real> ParamGrid<R> {
    /// Uniform 1-D grid of `n` points on `[lo, hi]`.
    pub fn linspace(lo: R, hi: R, n: usize) -> Result<Self> {
        let axis = linspace(lo, hi, n)?;
        let steps = vec![if n > 1 { axis[1] - axis[0] } else { R::zero() }];
        Ok(Self {
            points: axis.into_iter().map(|x| vec![x]).collect(),
            dims: 1,
            steps,
        })
    }

    /// Full lattice: `per_axis` uniform points on each `[lo, hi]` bound.
    pub fn lattice(bounds: &[(R, R)], per_axis: usize) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Validation("lattice needs at least one axis".into()));
        }
        let axes: Vec<Vec<R>> = bounds
            .iter()
            .map(|&(lo, hi)| linspace(lo, hi, per_axis))
            .collect::<Result<_>>()?;
        let steps = axes
            .iter()
            .map(|a| if a.len() > 1 { a[1] - a[0] } else { R::zero() })
            .collect();
        let mut points = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(points.len() * axis.len());
            for p in &points {
                for &v in axis {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            points = next;
        }
        Ok(Self {
            points,
            dims: bounds.len(),
            steps,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn points(&self) -> &[Vec<R>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[R] {
        &self.points[i]
    }

    pub fn step(&self, axis: usize) -> R {
        self.steps[axis]
    }

    /// 1-D axis values; panics if the grid is multi-dimensional.
    pub fn axis_values(&self) -> Vec<R> {
        assert_eq!(self.dims, 1, "axis_values on multi-dimensional grid");
        self.points.iter().map(|p| p[0]).collect()
    }
}

fn linspace<R: Real>(lo: R, hi: R, n: usize) -> Result<Vec<R>> {
    if n == 0 {
        return Err(Error::Validation("grid must be nonempty".into()));
    }
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::Validation(format!("bad grid bounds [{lo}, {hi}]")));
    }
    if n == 1 {
        return Ok(vec![(lo + hi) / c(2.0)]);
    }
    if lo == hi {
        return Err(Error::Validation(
            "grid with several points needs lo < hi".into(),
        ));
    }
    let step = (hi - lo) / c((n - 1) as f64);
    Ok((0..n).map(|i| lo + step * c(i as f64)).collect())
}
