//! Analytic moving sources used in the numerical studies.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::mesh::HALF_WIDTH;
use crate::{Error, Result};

const L: f64 = HALF_WIDTH;
const S: f64 = HALF_WIDTH;
const H: f64 = HALF_WIDTH;

/// Half-width of the boxes of the four constant sources.
pub const BOX_HALF_WIDTH: f64 = 0.4;

/// Gaussian width of the two-source case.
pub const GAUSSIAN_WIDTH: f64 = 2.0;

#[derive(Clone)]
pub enum SourceSpec {
    /// Two moving Gaussians of width 2.
    GaussianPair,
    /// Four boxes of half-width 0.4 moving along the cube diagonals.
    ConstantFour,
    /// Eight Gaussians starting at the corners.
    GaussianEight,
    Custom(Arc<dyn Fn([f64; 3], f64) -> f64 + Send + Sync>),
}

impl SourceSpec {
    pub fn custom<F>(f: F) -> Self
    where
        F: Fn([f64; 3], f64) -> f64 + Send + Sync + 'static,
    {
        SourceSpec::Custom(Arc::new(f))
    }

    /// Source centres at time `t` (empty for custom sources).
    pub fn centers(&self, t: f64) -> Vec<[f64; 3]> {
        match self {
            SourceSpec::GaussianPair => pair_centers(t).to_vec(),
            SourceSpec::ConstantFour => four_centers(t).to_vec(),
            SourceSpec::GaussianEight => eight_centers(t).to_vec(),
            SourceSpec::Custom(_) => Vec::new(),
        }
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        match self {
            SourceSpec::GaussianPair => vec![1.0; 2],
            SourceSpec::ConstantFour => vec![2.0, 1.0, 1.0, 2.0],
            SourceSpec::GaussianEight => vec![4.0, 4.0, 4.0, 4.0, 6.0, 6.0, 6.0, 6.0],
            SourceSpec::Custom(_) => Vec::new(),
        }
    }

    pub fn eval(&self, x: [f64; 3], t: f64) -> f64 {
        let r2 = |c: [f64; 3]| (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2);
        match self {
            SourceSpec::GaussianPair => pair_centers(t)
                .iter()
                .map(|&c| (-r2(c) / (GAUSSIAN_WIDTH * GAUSSIAN_WIDTH)).exp())
                .sum(),
            SourceSpec::ConstantFour => four_centers(t)
                .iter()
                .zip(self.amplitudes())
                .filter(|(c, _)| (0..3).all(|d| (x[d] - c[d]).abs() < BOX_HALF_WIDTH))
                .map(|(_, a)| a)
                .sum(),
            SourceSpec::GaussianEight => eight_centers(t)
                .iter()
                .zip(self.amplitudes())
                .map(|(&c, a)| a * (-r2(c)).exp())
                .sum(),
            SourceSpec::Custom(f) => f(x, t),
        }
    }

    /// Value of the single component `i` (0-based) at `(x, t)`.
    pub fn component(&self, i: usize, x: [f64; 3], t: f64) -> Option<f64> {
        let c = *self.centers(t).get(i)?;
        let a = self.amplitudes()[i];
        let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2);
        Some(match self {
            SourceSpec::GaussianPair => (-r2 / (GAUSSIAN_WIDTH * GAUSSIAN_WIDTH)).exp(),
            SourceSpec::ConstantFour => {
                if (0..3).all(|d| (x[d] - c[d]).abs() < BOX_HALF_WIDTH) {
                    a
                } else {
                    0.0
                }
            }
            SourceSpec::GaussianEight => a * (-r2).exp(),
            SourceSpec::Custom(_) => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SourceSpec::GaussianPair => "gaussian_pair",
            SourceSpec::ConstantFour => "constant_four",
            SourceSpec::GaussianEight => "gaussian_eight",
            SourceSpec::Custom(_) => "custom",
        }
    }
}

impl fmt::Debug for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PartialEq for SourceSpec {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (SourceSpec::Custom(a), SourceSpec::Custom(b)) => Arc::ptr_eq(a, b),
            _ => self.name() == other.name(),
        }
    }
}

impl std::str::FromStr for SourceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian_pair" | "ex1" | "1" => Ok(SourceSpec::GaussianPair),
            "constant_four" | "ex2" | "2" => Ok(SourceSpec::ConstantFour),
            "gaussian_eight" | "ex3" | "3" => Ok(SourceSpec::GaussianEight),
            other => Err(Error::InvalidArgument(format!(
                "unknown source `{other}` (expected gaussian_pair, constant_four or gaussian_eight)"
            ))),
        }
    }
}

fn pair_centers(t: f64) -> [[f64; 3]; 2] {
    let c4 = (4.0 * t).cos().abs();
    [
        [
            L * (2.0 * PI * t).sin(),
            S * (2.0 * PI * t).cos(),
            H * (4.0 * PI * t).cos(),
        ],
        [L - 2.0 * L * c4, -S + 2.0 * S * c4, -H + 2.0 * H * t * t],
    ]
}

fn four_centers(t: f64) -> [[f64; 3]; 4] {
    let up = |a: f64| -a + 2.0 * a * t;
    let down = |a: f64| a - 2.0 * a * t;
    [
        [up(L), up(S), down(H)],
        [down(L), down(S), up(H)],
        [down(L), up(S), up(H)],
        [up(L), down(S), down(H)],
    ]
}

fn eight_centers(t: f64) -> [[f64; 3]; 8] {
    let c2 = (PI * t).cos().powi(2);
    let s2 = (PI * t).sin().powi(2);
    let cc = (2.0 * PI * t).cos().powi(2) * (0.5 * PI * t).cos();
    let ss = s2 * (0.5 * PI * t).sin();
    let at = |a: f64, w: f64| -a + 2.0 * a * w;
    [
        [at(L, 1.0 - t), at(S, 1.0 - t), at(H, 1.0 - t)],
        [at(L, t), at(S, t), at(H, t)],
        [at(L, c2 * (1.0 - t)), at(S, s2 * t), at(H, c2 * (1.0 - t))],
        [at(L, c2 * (1.0 - t)), at(S, c2 * (1.0 - t)), at(H, s2 * t)],
        [at(L, cc), at(S, ss), at(H, ss)],
        [at(L, ss), at(S, cc), at(H, ss)],
        [at(L, ss), at(S, ss), at(H, cc)],
        [at(L, ss), at(S, cc), at(H, cc)],
    ]
}
