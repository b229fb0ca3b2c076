//! Geometry of the discrete torus `{0, ..., N-1}^d`, the nearest-neighbour
//! jump kernel, and exact single-walk transition probabilities.
//!
//! Sites are linearized in row-major order: the last coordinate varies
//! fastest. A site index is a `usize` in `[0, N^d)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::LatticeError;

/// Largest torus for which [`tv_distance_from_uniform`] sums exactly.
pub const TV_SITE_CAP: usize = 1_000_000;

/// Dimension and side length of the torus `T^d_N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGeometry {
    dim: usize,
    side: usize,
}

impl TorusGeometry {
    pub fn new(dim: usize, side: usize) -> Result<Self, LatticeError> {
        if dim < 2 {
            return Err(LatticeError::Dimension(dim));
        }
        if side < 2 {
            return Err(LatticeError::Side(side));
        }
        let sites = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(side));
        if sites.is_none_or(|s| s > u32::MAX as usize) {
            return Err(LatticeError::TooLarge { dim, side });
        }
        Ok(TorusGeometry { dim, side })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    /// `N^d`.
    pub fn num_sites(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    /// Number of kernel directions, `2d`.
    #[inline]
    pub fn num_directions(&self) -> usize {
        2 * self.dim
    }

    pub fn origin(&self) -> TorusPoint {
        TorusPoint {
            coords: vec![0; self.dim],
        }
    }

    /// The canonical basis vector `e_j` (zero-based `j`).
    pub fn unit(&self, j: usize) -> TorusPoint {
        let mut coords = vec![0; self.dim];
        coords[j] = 1 % self.side;
        TorusPoint { coords }
    }

    /// Builds a point from arbitrary integer coordinates, reducing each
    /// modulo `N`.
    pub fn point(&self, coords: &[i64]) -> Result<TorusPoint, LatticeError> {
        if coords.len() != self.dim {
            return Err(LatticeError::CoordinateCount {
                expected: self.dim,
                got: coords.len(),
            });
        }
        let n = self.side as i64;
        Ok(TorusPoint {
            coords: coords.iter().map(|&c| c.rem_euclid(n) as usize).collect(),
        })
    }

    pub fn index_of(&self, p: &TorusPoint) -> usize {
        p.coords.iter().fold(0, |acc, &c| acc * self.side + c)
    }

    pub fn point_of(&self, mut index: usize) -> TorusPoint {
        let mut coords = vec![0; self.dim];
        for c in coords.iter_mut().rev() {
            *c = index % self.side;
            index /= self.side;
        }
        TorusPoint { coords }
    }

    pub fn add(&self, x: &TorusPoint, y: &TorusPoint) -> TorusPoint {
        TorusPoint {
            coords: x
                .coords
                .iter()
                .zip(&y.coords)
                .map(|(a, b)| (a + b) % self.side)
                .collect(),
        }
    }

    /// `x - y` reduced modulo `N`.
    pub fn sub(&self, x: &TorusPoint, y: &TorusPoint) -> TorusPoint {
        TorusPoint {
            coords: x
                .coords
                .iter()
                .zip(&y.coords)
                .map(|(a, b)| (a + self.side - b) % self.side)
                .collect(),
        }
    }

    pub fn neg(&self, x: &TorusPoint) -> TorusPoint {
        self.sub(&self.origin(), x)
    }

    /// Index of the neighbour of `site` in direction `dir`, where direction
    /// `2j` is `+e_j` and `2j + 1` is `-e_j`.
    pub fn neighbor(&self, site: usize, dir: usize) -> usize {
        let axis = dir / 2;
        let stride = self.side.pow((self.dim - 1 - axis) as u32);
        let coord = (site / stride) % self.side;
        let shifted = if dir.is_multiple_of(2) {
            (coord + 1) % self.side
        } else {
            (coord + self.side - 1) % self.side
        };
        site - coord * stride + shifted * stride
    }

    /// Flat neighbour table: entry `site * 2d + dir` is `neighbor(site, dir)`.
    pub fn neighbor_table(&self) -> Vec<u32> {
        let k = self.num_directions();
        let mut table = Vec::with_capacity(self.num_sites() * k);
        for site in 0..self.num_sites() {
            for dir in 0..k {
                table.push(self.neighbor(site, dir) as u32);
            }
        }
        table
    }
}

/// A site of the torus; coordinates are always reduced modulo `N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TorusPoint {
    coords: Vec<usize>,
}

impl TorusPoint {
    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }
}

/// Nearest-neighbour kernel on the torus: `p(delta) = 1/(2d)` for each of
/// the `2d` directions `±e_j` that reduce to `delta`.
///
/// For `N = 2` the directions `+e_j` and `-e_j` coincide and the mass adds
/// up to `1/d`, so the kernel still sums to one.
pub fn jump_kernel(g: &TorusGeometry, delta: &TorusPoint) -> f64 {
    let hits = (0..g.num_directions())
        .filter(|&dir| g.neighbor(0, dir) == g.index_of(delta))
        .count();
    hits as f64 / g.num_directions() as f64
}

/// Wrapped Euclidean distance.
pub fn torus_distance(g: &TorusGeometry, x: &TorusPoint, y: &TorusPoint) -> f64 {
    x.coords
        .iter()
        .zip(&y.coords)
        .map(|(&a, &b)| {
            let diff = a.abs_diff(b);
            let wrapped = diff.min(g.side - diff) as f64;
            wrapped * wrapped
        })
        .sum::<f64>()
        .sqrt()
}

/// One-dimensional circulant walk on `Z_N` jumping at total rate `rate`
/// (half to each side): the full law at time `t` from the origin.
fn circulant_marginal(side: usize, rate: f64, t: f64) -> Vec<f64> {
    let n = side as f64;
    let decay: Vec<f64> = (0..side)
        .map(|m| (-rate * t * (1.0 - (2.0 * PI * m as f64 / n).cos())).exp())
        .collect();
    (0..side)
        .map(|k| {
            let s: f64 = decay
                .iter()
                .enumerate()
                .map(|(m, &e)| e * (2.0 * PI * (m * k % side) as f64 / n).cos())
                .sum();
            (s / n).max(0.0)
        })
        .collect()
}

fn check_time(t: f64) -> Result<(), LatticeError> {
    if !t.is_finite() || t < 0.0 {
        return Err(LatticeError::Time(t));
    }
    Ok(())
}

fn check_speed(speed: f64) -> Result<(), LatticeError> {
    if !speed.is_finite() || speed <= 0.0 {
        return Err(LatticeError::Speed(speed));
    }
    Ok(())
}

/// `P_x[x(t) = y]` for the continuous-time nearest-neighbour walk jumping
/// at total rate `speed`.
///
/// Each coordinate moves as an independent circulant walk at rate
/// `speed / d`, so the law factorizes over coordinates and each factor is
/// evaluated by its discrete Fourier series.
pub fn walk_transition_probability(
    g: &TorusGeometry,
    x: &TorusPoint,
    y: &TorusPoint,
    t: f64,
    speed: f64,
) -> Result<f64, LatticeError> {
    check_time(t)?;
    check_speed(speed)?;
    let marginal = circulant_marginal(g.side, speed / g.dim as f64, t);
    let delta = g.sub(y, x);
    Ok(delta.coords.iter().map(|&c| marginal[c]).product())
}

/// Exact total-variation distance between `p_t(x, .)` and the uniform
/// measure on the torus.
pub fn tv_distance_from_uniform(g: &TorusGeometry, _x: &TorusPoint, t: f64, speed: f64) -> Result<f64, LatticeError> {
    check_time(t)?;
    check_speed(speed)?;
    let sites = g.num_sites();
    if sites > TV_SITE_CAP {
        return Err(LatticeError::Capacity {
            sites,
            cap: TV_SITE_CAP,
        });
    }
    // translation invariance: the distance does not depend on x
    let marginal = circulant_marginal(g.side, speed / g.dim as f64, t);
    let uniform = 1.0 / sites as f64;
    let mut total = 0.0;
    let mut digits = vec![0usize; g.dim];
    for _ in 0..sites {
        let p: f64 = digits.iter().map(|&c| marginal[c]).product();
        total += (p - uniform).abs();
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < g.side {
                break;
            }
            *d = 0;
        }
    }
    Ok((0.5 * total).clamp(0.0, 1.0))
}
