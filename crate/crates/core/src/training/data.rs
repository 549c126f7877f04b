//! Toy datasets.

use crate::numerics::Rng;

/// Half-width of the checkerboard support `[−4, 4]²`.
pub const CHECKERBOARD_HALF_WIDTH: f64 = 4.0;
const CELL: f64 = 2.0;

/// Cell index pair of a point in `[−4, 4]²`, each in `0..4`.
pub fn checkerboard_cell(x: f64, y: f64) -> (i64, i64) {
    let h = CHECKERBOARD_HALF_WIDTH;
    (((x + h) / CELL).floor() as i64, ((y + h) / CELL).floor() as i64)
}

/// A cell carries mass when its index sum is even.
pub fn checkerboard_on(x: f64, y: f64) -> bool {
    let (i, j) = checkerboard_cell(x, y);
    (0..4).contains(&i) && (0..4).contains(&j) && (i + j) % 2 == 0
}

/// `n` samples uniform over the eight "on" cells of a 4×4 board of side-2 cells.
pub fn dataset_checkerboard(rng: &mut Rng, n: usize) -> Vec<Vec<f64>> {
    let h = CHECKERBOARD_HALF_WIDTH;
    (0..n)
        .map(|_| {
            let k = rng.below(8);
            let j = k / 2;
            let i = 2 * (k % 2) + (j % 2);
            let x = -h + CELL * (i as f64 + rng.uniform());
            let y = -h + CELL * (j as f64 + rng.uniform());
            vec![x, y]
        })
        .collect()
}

/// Inputs and targets of the degenerate regression task.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionData {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// `n` pairs with inputs `x ~ N(0, I₂)` and targets `y₁ = x₁`, `y₂ ~ N(0, eps_var)`
/// independent of `x`: the targets lie near a line, so a good fit contracts `ℝ²` onto it.
pub fn dataset_regression2d(rng: &mut Rng, n: usize, eps_var: f64) -> RegressionData {
    let sd = eps_var.sqrt();
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = rng.normal();
        let x2 = rng.normal();
        let y2 = sd * rng.normal();
        inputs.push(vec![x1, x2]);
        targets.push(vec![x1, y2]);
    }
    RegressionData { inputs, targets }
}
