//! Layer fixtures and inversion workloads shared by the criterion benches and the CLI.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use flowforge::convkit::{dense_operator, BatchMode, Boundary, Filter, Tensor4};
use flowforge::flows::{Bijection, Direction, Emerging, ParamStore, Periodic};
use flowforge::numerics::Lu;
use flowforge::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Emerging layer with perturbed weights whose diagonal taps stay away from zero.
pub fn emerging_fixture(c: usize, kernel: usize, seed: u64) -> Result<(ParamStore, Emerging)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = Emerging::new(&mut store, "bench", c, kernel, &mut rng)?;
    let noise = Normal::new(0.0, 0.1).expect("valid std");
    for id in [layer.w1, layer.w2] {
        for v in store.get_mut(id).data_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Ok((store, layer))
}

/// Periodic layer with perturbed weights.
pub fn periodic_fixture(c: usize, kernel: usize, seed: u64) -> Result<(ParamStore, Periodic)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = Periodic::new(&mut store, "bench", c, kernel, &mut rng)?;
    let noise = Normal::new(0.0, 0.1).expect("valid std");
    for v in store.get_mut(layer.w).data_mut() {
        *v += noise.sample(&mut rng);
    }
    Ok((store, layer))
}

pub fn random_batch(n: usize, c: usize, size: usize, seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(n, c, size, size, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Inverts the emerging layer by expanding it into a dense `chw × chw` matrix, factoring it
/// and solving for every example.
pub fn dense_inverse(store: &ParamStore, layer: &Emerging, y: &Tensor4) -> Result<Tensor4> {
    let (n, c, h, w) = y.shape();
    let (wm, k1, k2) = layer.effective(store)?;
    let d0 = dense_operator(&Filter::from_matrix(&wm), h, w, Boundary::Zero)?;
    let d1 = dense_operator(&k1, h, w, Boundary::Zero)?;
    let d2 = dense_operator(&k2, h, w, Boundary::Zero)?;
    let full = d2.compose(&d1)?.compose(&d0)?;
    let lu = Lu::factor(full.matrix())?;
    let mut out = Vec::with_capacity(n);
    for b in 0..n {
        let x = lu.solve(&y.raster(b))?;
        out.push(Tensor4::from_raster(c, h, w, &x)?);
    }
    Tensor4::stack(&out)
}

/// Inverts the emerging layer by substitution.
pub fn substitution_inverse(store: &ParamStore, layer: &Emerging, y: &Tensor4, mode: BatchMode) -> Result<Tensor4> {
    Ok(layer.inverse_with(store, y, mode)?.0)
}

/// Inverts one example at a time through the periodic layer; `cold` drops the cached
/// per-frequency inverses before every call.
pub fn periodic_inverse_each(store: &ParamStore, layer: &Periodic, y: &Tensor4, cold: bool) -> Result<Tensor4> {
    let mut out = Vec::with_capacity(y.batch());
    for b in 0..y.batch() {
        if cold {
            layer.invalidate_cache();
        }
        out.push(layer.apply(store, &y.slice_batch(b, 1), Direction::Inverse)?.0);
    }
    Tensor4::stack(&out)
}

/// Workload of the inversion table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InversionSetup {
    pub size: usize,
    pub channels: usize,
    pub kernel: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for InversionSetup {
    fn default() -> Self {
        InversionSetup { size: 16, channels: 4, kernel: 3, batch: 100, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionRow {
    pub method: &'static str,
    pub total: Duration,
    pub per_example_ms: f64,
    pub max_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionReport {
    pub setup: InversionSetup,
    pub workers: usize,
    pub rows: Vec<InversionRow>,
}

pub const DENSE: &str = "dense matrix inversion";
pub const SEQUENTIAL: &str = "sequential substitution";
pub const PARALLEL: &str = "batch-parallel substitution";
pub const PERIODIC: &str = "periodic inverse (cold / warm cache)";

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, Duration)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed()))
}

impl InversionReport {
    pub fn row(&self, method: &str) -> Option<&InversionRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Dense time over batch-parallel substitution time.
    pub fn substitution_speedup(&self) -> f64 {
        self.row(DENSE).expect("dense row").total.as_secs_f64()
            / self.row(PARALLEL).expect("parallel row").total.as_secs_f64()
    }

    /// Cold-cache time over warm-cache time of the periodic inverse.
    pub fn cache_speedup(&self) -> f64 {
        let cold = self.rows.iter().find(|r| r.method == PERIODIC).expect("cold row");
        let warm = self.rows.iter().rev().find(|r| r.method == PERIODIC).expect("warm row");
        cold.total.as_secs_f64() / warm.total.as_secs_f64()
    }

    /// Markdown table with one row per method, in ms per example.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let st = &self.setup;
        let _ = writeln!(
            s,
            "inversion at {}x{}, c={}, d={}, batch {}, {} worker(s)\n",
            st.size, st.size, st.channels, st.kernel, st.batch, self.workers
        );
        let _ = writeln!(s, "| method | ms/example | max abs error |");
        let _ = writeln!(s, "|---|---|---|");
        let dense = self.row(DENSE).expect("dense row");
        let _ = writeln!(s, "| (a) {} | {:.4} | {:.1e} |", DENSE, dense.per_example_ms, dense.max_error);
        let seq = self.row(SEQUENTIAL).expect("sequential row");
        let _ = writeln!(s, "| (b) {} | {:.4} | {:.1e} |", SEQUENTIAL, seq.per_example_ms, seq.max_error);
        let par = self.row(PARALLEL).expect("parallel row");
        let _ = writeln!(s, "| (c) {} | {:.4} | {:.1e} |", PARALLEL, par.per_example_ms, par.max_error);
        let cold = self.rows.iter().find(|r| r.method == PERIODIC).expect("cold row");
        let warm = self.rows.iter().rev().find(|r| r.method == PERIODIC).expect("warm row");
        let _ = writeln!(
            s,
            "| (d) {} | {:.4} / {:.4} | {:.1e} |",
            PERIODIC,
            cold.per_example_ms,
            warm.per_example_ms,
            cold.max_error.max(warm.max_error)
        );
        let _ = writeln!(
            s,
            "\nsubstitution speedup over dense: {:.1}x; warm cache speedup over cold: {:.1}x",
            self.substitution_speedup(),
            self.cache_speedup()
        );
        s
    }
}

/// Times the four inversion strategies and checks each against the forward pass.
pub fn measure_inversion(setup: InversionSetup, workers: usize) -> Result<InversionReport> {
    let InversionSetup { size, channels: c, kernel, batch, seed } = setup;
    let per = |d: Duration| d.as_secs_f64() * 1e3 / batch.max(1) as f64;
    let x = random_batch(batch, c, size, seed.wrapping_add(1));

    let (es, el) = emerging_fixture(c, kernel, seed)?;
    let y = el.apply(&es, &x, Direction::Forward)?.0;
    let (xd, td) = timed(|| dense_inverse(&es, &el, &y))?;
    let (xs, ts) = timed(|| substitution_inverse(&es, &el, &y, BatchMode::Sequential))?;
    let (xp, tp) = timed(|| substitution_inverse(&es, &el, &y, BatchMode::Parallel))?;

    let (ps, pl) = periodic_fixture(c, kernel, seed.wrapping_add(2))?;
    let yp = pl.apply(&ps, &x, Direction::Forward)?.0;
    let (xc, tc) = timed(|| periodic_inverse_each(&ps, &pl, &yp, true))?;
    let (xw, tw) = timed(|| periodic_inverse_each(&ps, &pl, &yp, false))?;

    let row = |method, total: Duration, rec: &Tensor4| InversionRow {
        method,
        total,
        per_example_ms: per(total),
        max_error: rec.max_abs_diff(&x),
    };
    Ok(InversionReport {
        setup,
        workers,
        rows: vec![
            row(DENSE, td, &xd),
            row(SEQUENTIAL, ts, &xs),
            row(PARALLEL, tp, &xp),
            row(PERIODIC, tc, &xc),
            row(PERIODIC, tw, &xw),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_methods_invert() {
        let setup = InversionSetup { size: 6, channels: 2, kernel: 3, batch: 3, seed: 1 };
        let r = measure_inversion(setup, 1).unwrap();
        assert_eq!(r.rows.len(), 5);
        for row in &r.rows {
            assert!(row.max_error < 1e-8, "{}: {}", row.method, row.max_error);
        }
        let md = r.to_markdown();
        let table: Vec<_> = md.lines().filter(|l| l.starts_with("| (")).collect();
        assert_eq!(table.len(), 4);
    }
}
