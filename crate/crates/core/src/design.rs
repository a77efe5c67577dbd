//! Hypothesis matrices for one-way and two-way layouts.
//!
//! Two-way cells are flattened with factor A outer and factor B inner:
//! cell `(i_A, i_B)` (zero-based) has flat index `i_A·b + i_B`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{centering, kronecker, projection_matrix, ContrastSpec, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Effect {
    Group,
    MainA,
    MainB,
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "layout")]
pub enum Layout {
    OneWay { k: usize },
    TwoWay { a: usize, b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    #[serde(flatten)]
    pub layout: Layout,
    pub effect: Effect,
}

impl DesignSpec {
    pub fn one_way(k: usize) -> Self {
        Self {
            layout: Layout::OneWay { k },
            effect: Effect::Group,
        }
    }

    pub fn two_way(a: usize, b: usize, effect: Effect) -> Self {
        Self {
            layout: Layout::TwoWay { a, b },
            effect,
        }
    }

    pub fn groups(&self) -> usize {
        match self.layout {
            Layout::OneWay { k } => k,
            Layout::TwoWay { a, b } => a * b,
        }
    }

    pub fn contrast(&self) -> Result<ContrastSpec> {
        match (self.layout, self.effect) {
            (Layout::OneWay { k }, Effect::Group) => one_way_contrast(k),
            (Layout::TwoWay { a, b }, effect) if effect != Effect::Group => {
                two_way_contrast(a, b, effect)
            }
            (layout, effect) => Err(Error::BadDesign(format!(
                "effect {effect:?} does not apply to layout {layout:?}"
            ))),
        }
    }
}

/// `H = P_k`: no group effect.
pub fn one_way_contrast(k: usize) -> Result<ContrastSpec> {
    if k < 2 {
        return Err(Error::BadDesign(format!("need at least 2 groups, got {k}")));
    }
    projection_matrix(&centering(k))
}

/// Main-effect and interaction contrasts of an `a × b` layout.
pub fn two_way_contrast(a: usize, b: usize, effect: Effect) -> Result<ContrastSpec> {
    if a < 2 || b < 2 {
        return Err(Error::BadDesign(format!(
            "two-way layout needs at least 2 levels per factor, got {a}x{b}"
        )));
    }
    let mean_row = |m: usize| Matrix::from_element(1, m, 1.0 / m as f64);
    let h = match effect {
        Effect::MainA => kronecker(&centering(a), &mean_row(b)),
        Effect::MainB => kronecker(&mean_row(a), &centering(b)),
        Effect::Interaction => kronecker(&centering(a), &centering(b)),
        Effect::Group => {
            return Err(Error::BadDesign(
                "two-way layouts test main-A, main-B or interaction".into(),
            ))
        }
    };
    projection_matrix(&h)
}

/// Accepts a user-supplied hypothesis matrix for `k` groups.
pub fn validate_contrast(h: &Matrix, k: usize) -> Result<ContrastSpec> {
    if h.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "contrast has {} columns but the design has {k} groups",
            h.ncols()
        )));
    }
    projection_matrix(h)
}

/// Cell label `(i_A, i_B)` of a flat two-way index, zero-based.
pub fn cell_of(index: usize, b: usize) -> (usize, usize) {
    (index / b, index % b)
}
