//! Uniform time grids, grid-sampled functions, and the fixed-step
//! integrators used by every solver in this crate.
//!
//! All ODE systems here are small (dimension <= 5) and smooth, and several
//! of them feed each other: the moment ODEs consume the Riccati solutions,
//! the value-function quadratures consume both. Classical fixed-step RK4 on
//! a shared uniform grid keeps every stage deterministic and lets each
//! solution be re-evaluated between nodes with cubic Hermite interpolation
//! (values plus stored right-hand-side derivatives), which is O(h^4) and so
//! does not degrade the RK4 order when solutions are composed.

use std::io::{self, Write};

/// Uniform partition of `[0, T]` into `n_steps` equal steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// A grid needs a positive horizon and at least one step.
    pub fn new(horizon: f64, n_steps: usize) -> Self {
        assert!(
            horizon > 0.0 && horizon.is_finite(),
            "time grid horizon must be positive and finite, got {horizon}"
        );
        assert!(n_steps >= 1, "time grid needs at least one step");
        TimeGrid { horizon, n_steps }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Node `i`, computed as `T * i / n` so that `node(n) == T` exactly and
    /// nodes are strictly increasing.
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_steps);
        self.horizon * i as f64 / self.n_steps as f64
    }

    /// Index of the step interval containing `t`, clamping roundoff
    /// excursions just outside `[0, T]`.
    fn interval_of(&self, t: f64) -> usize {
        let scaled = t / self.dt();
        let i = scaled.floor();
        if i < 0.0 {
            0
        } else if i as usize >= self.n_steps {
            self.n_steps - 1
        } else {
            i as usize
        }
    }
}

/// A function sampled on a [`TimeGrid`]: values and time-derivatives at every
/// node, with cubic Hermite evaluation in between. `N` is the number of
/// scalar components (4 for a 2x2 matrix, 2 for a vector, 1 for a scalar).
#[derive(Debug, Clone)]
pub struct GridFunction<const N: usize> {
    grid: TimeGrid,
    values: Vec<[f64; N]>,
    derivs: Vec<[f64; N]>,
}

impl<const N: usize> GridFunction<N> {
    pub fn new(grid: TimeGrid, values: Vec<[f64; N]>, derivs: Vec<[f64; N]>) -> Self {
        assert_eq!(values.len(), grid.n_nodes(), "one value per node");
        assert_eq!(derivs.len(), grid.n_nodes(), "one derivative per node");
        GridFunction { grid, values, derivs }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn value(&self, node: usize) -> &[f64; N] {
        &self.values[node]
    }

    pub fn deriv(&self, node: usize) -> &[f64; N] {
        &self.derivs[node]
    }

    /// Cubic Hermite evaluation at an arbitrary `t` in `[0, T]`.
    pub fn eval(&self, t: f64) -> [f64; N] {
        let i = self.grid.interval_of(t);
        let t0 = self.grid.node(i);
        let h = self.grid.dt();
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (y0, y1) = (&self.values[i], &self.values[i + 1]);
        let (d0, d1) = (&self.derivs[i], &self.derivs[i + 1]);
        let mut out = [0.0; N];
        for k in 0..N {
            out[k] = h00 * y0[k] + h10 * h * d0[k] + h01 * y1[k] + h11 * h * d1[k];
        }
        out
    }

    pub fn eval_component(&self, t: f64, k: usize) -> f64 {
        self.eval(t)[k]
    }

    /// Largest absolute entry over all nodes and components.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Writes `t,<names...>` rows, one per node, full double precision.
    pub fn write_csv<W: Write>(&self, out: &mut W, names: &[&str]) -> io::Result<()> {
        assert_eq!(names.len(), N, "one column name per component");
        write!(out, "t")?;
        for name in names {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for i in 0..self.grid.n_nodes() {
            write!(out, "{}", csv_float(self.grid.node(i)))?;
            for k in 0..N {
                write!(out, ",{}", csv_float(self.values[i][k]))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Project-wide CSV float format: 17 significant digits, enough to
/// round-trip any f64 exactly.
pub fn csv_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Integration stopped early because the guard rejected a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aborted {
    /// Time of the node at which the rejected state was produced.
    pub t: f64,
}

fn rk4_step<const N: usize>(
    t: f64,
    h: f64,
    y: &[f64; N],
    rhs: &mut impl FnMut(f64, &[f64; N]) -> [f64; N],
) -> ([f64; N], [f64; N]) {
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &axpy(y, &k1, 0.5 * h));
    let k3 = rhs(t + 0.5 * h, &axpy(y, &k2, 0.5 * h));
    let k4 = rhs(t + h, &axpy(y, &k3, h));
    let mut next = [0.0; N];
    for i in 0..N {
        next[i] = y[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    (next, k1)
}

fn axpy<const N: usize>(y: &[f64; N], k: &[f64; N], a: f64) -> [f64; N] {
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = y[i] + a * k[i];
    }
    out
}

/// Classical RK4 from `y(0) = initial` to `t = T`. The guard sees every
/// freshly computed node state; returning `false` aborts.
pub fn rk4_forward<const N: usize>(
    grid: &TimeGrid,
    initial: [f64; N],
    mut rhs: impl FnMut(f64, &[f64; N]) -> [f64; N],
    mut accept: impl FnMut(f64, &[f64; N]) -> bool,
) -> Result<GridFunction<N>, Aborted> {
    let n = grid.n_steps();
    let mut values = Vec::with_capacity(n + 1);
    let mut derivs = Vec::with_capacity(n + 1);
    let mut y = initial;
    values.push(y);
    derivs.push([0.0; N]); // patched below once rhs(t0, y0) is known
    for i in 0..n {
        let t = grid.node(i);
        let h = grid.node(i + 1) - t;
        let (next, k1) = rk4_step(t, h, &y, &mut rhs);
        derivs[i] = k1;
        if !accept(grid.node(i + 1), &next) {
            return Err(Aborted { t: grid.node(i + 1) });
        }
        y = next;
        values.push(y);
        derivs.push([0.0; N]);
    }
    let i_last = n;
    derivs[i_last] = rhs(grid.node(i_last), &y);
    Ok(GridFunction::new(grid.clone(), values, derivs))
}

/// Classical RK4 from a terminal condition `y(T) = terminal` down to `t = 0`,
/// i.e. the time-reversed system integrated forward. Stored derivatives are
/// the forward-time right-hand side, so Hermite interpolation works as usual.
pub fn rk4_backward<const N: usize>(
    grid: &TimeGrid,
    terminal: [f64; N],
    mut rhs: impl FnMut(f64, &[f64; N]) -> [f64; N],
    mut accept: impl FnMut(f64, &[f64; N]) -> bool,
) -> Result<GridFunction<N>, Aborted> {
    let n = grid.n_steps();
    let mut values = vec![[0.0; N]; n + 1];
    let mut derivs = vec![[0.0; N]; n + 1];
    let mut y = terminal;
    values[n] = y;
    for i in (0..n).rev() {
        let t_hi = grid.node(i + 1);
        let h = grid.node(i) - t_hi; // negative step
        let (next, k1) = rk4_step(t_hi, h, &y, &mut rhs);
        derivs[i + 1] = k1;
        if !accept(grid.node(i), &next) {
            return Err(Aborted { t: grid.node(i) });
        }
        y = next;
        values[i] = y;
    }
    derivs[0] = rhs(0.0, &y);
    Ok(GridFunction::new(grid.clone(), values, derivs))
}

/// Composite Simpson rule over node samples. Requires an even step count.
pub fn simpson(grid: &TimeGrid, samples: &[f64]) -> f64 {
    let n = grid.n_steps();
    assert_eq!(samples.len(), grid.n_nodes());
    assert!(n % 2 == 0, "Simpson needs an even number of steps, got {n}");
    let mut odd = 0.0;
    let mut even = 0.0;
    for (i, &s) in samples.iter().enumerate().take(n).skip(1) {
        if i % 2 == 1 {
            odd += s;
        } else {
            even += s;
        }
    }
    (grid.dt() / 3.0) * (samples[0] + samples[n] + 4.0 * odd + 2.0 * even)
}

/// Composite trapezoid rule over node samples.
pub fn trapezoid(grid: &TimeGrid, samples: &[f64]) -> f64 {
    let n = grid.n_steps();
    assert_eq!(samples.len(), grid.n_nodes());
    let interior: f64 = samples[1..n].iter().sum();
    grid.dt() * (0.5 * (samples[0] + samples[n]) + interior)
}
