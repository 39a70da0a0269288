//! Randomized invariant suites checked against independent oracles.

use std::fmt;
use std::time::{Duration, Instant};

use flowforge::autodiff::{grad_check, Tape, Tensor, Var};
use flowforge::convkit::{
    build_autoregressive_mask, combine_filters, conv2d, dense_operator, Boundary, Filter, MaskVariant, Padding, Tensor4,
};
use flowforge::flows::{
    qr_compose, ActNorm, Bijection, ConvKind, Coupling, Direction, Emerging, FlowLayer, FlowModel, Inv1x1, ModelSpec,
    ParamStore, Periodic, Squeeze,
};
use flowforge::numerics::{householder_orthogonal, lu_slogdet, RMatrix};
use flowforge::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Failures kept per suite.
const MAX_FAILURES: usize = 5;
/// Central-difference step for Jacobians of non-linear layers.
const JACOBIAN_STEP: f64 = 1e-6;

pub const EXACT_LOGDET_TOL: f64 = 1e-7;
pub const COUPLING_LOGDET_TOL: f64 = 1e-4;
pub const ROUND_TRIP_TOL: f64 = 1e-8;
pub const COMPOSITION_TOL: f64 = 1e-10;
pub const PERIODIC_FORWARD_TOL: f64 = 1e-9;
pub const PERIODIC_LOGDET_TOL: f64 = 1e-7;
pub const ORTHOGONALITY_TOL: f64 = 1e-10;
pub const QR_LOGDET_TOL: f64 = 1e-9;
pub const GRADIENT_TOL: f64 = 1e-4;

/// Worst error of one invariant over its random trials.
#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub name: String,
    pub trials: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub failures: Vec<String>,
    pub elapsed: Duration,
}

impl SuiteReport {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        SuiteReport {
            name: name.into(),
            trials: 0,
            max_error: 0.0,
            tolerance,
            failures: Vec::new(),
            elapsed: Duration::ZERO,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn fail(&mut self, msg: String) {
        if self.failures.len() < MAX_FAILURES {
            self.failures.push(msg);
        }
    }

    /// Counts a trial with error `err`; `label` describes the configuration.
    fn record(&mut self, err: f64, label: impl FnOnce() -> String) {
        self.trials += 1;
        if err.is_nan() || err > self.tolerance {
            self.fail(format!("{}: error {err:.3e}", label()));
        }
        if err.is_nan() {
            self.max_error = f64::NAN;
        } else if !self.max_error.is_nan() {
            self.max_error = self.max_error.max(err);
        }
    }

    fn record_result(&mut self, r: Result<f64>, label: impl FnOnce() -> String) {
        match r {
            Ok(e) => self.record(e, label),
            Err(e) => {
                self.trials += 1;
                let l = label();
                self.fail(format!("{l}: {e}"));
            }
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} trials={} max_err={:.3e} tol={:.0e} time={:.2}s",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.max_error,
            self.tolerance,
            self.elapsed.as_secs_f64()
        )?;
        for msg in &self.failures {
            write!(f, "\n    {msg}")?;
        }
        Ok(())
    }
}

fn timed(mut r: SuiteReport, start: Instant) -> SuiteReport {
    r.elapsed = start.elapsed();
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Random trials per layer kind or per invariant.
    pub trials: usize,
    /// Zeroes the diagonal center tap of this channel in every emerging layer under test.
    pub zero_tap: Option<usize>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { seed: 0, trials: 30, zero_tap: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    ActNorm,
    Plain,
    Plu,
    Qr,
    Emerging,
    Periodic,
    Coupling,
    Squeeze,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::ActNorm,
        LayerKind::Plain,
        LayerKind::Plu,
        LayerKind::Qr,
        LayerKind::Emerging,
        LayerKind::Periodic,
        LayerKind::Coupling,
        LayerKind::Squeeze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::ActNorm => "actnorm",
            LayerKind::Plain => "w1x1",
            LayerKind::Plu => "plu",
            LayerKind::Qr => "qr",
            LayerKind::Emerging => "emerging",
            LayerKind::Periodic => "periodic",
            LayerKind::Coupling => "coupling",
            LayerKind::Squeeze => "squeeze",
        }
    }
}

/// A randomized layer with its parameters.
pub struct LayerCase {
    pub store: ParamStore,
    pub layer: FlowLayer,
    pub input: Tensor4,
    pub kernel: usize,
}

impl LayerCase {
    fn label(&self, kind: LayerKind) -> String {
        let (_, c, h, w) = self.input.shape();
        format!("{} c={c} h={h} w={w} d={}", kind.name(), self.kernel)
    }

    fn bijection(&self) -> &dyn Bijection {
        self.layer.bijection().expect("suite layers are bijections")
    }
}

fn add_noise(store: &mut ParamStore, std: f64, rng: &mut impl Rng) {
    let noise = Normal::new(0.0, std).expect("valid std");
    let ids: Vec<_> = store.ids().filter(|&id| store.param(id).trainable).collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += noise.sample(rng);
        }
    }
}

fn random_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor4 {
    Tensor4::from_fn(n, c, h, w, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Random layer of `kind` on a random input with `h, w ≤ 5`, `c ≤ 3` and `d ∈ {1, 3}`.
pub fn random_layer(kind: LayerKind, rng: &mut impl Rng, zero_tap: Option<usize>) -> Result<LayerCase> {
    let mut store = ParamStore::new();
    let mut c = rng.random_range(1..=3);
    let (mut h, mut w) = (rng.random_range(1..=5), rng.random_range(1..=5));
    let kernel = if rng.random_bool(0.5) { 1 } else { 3 };
    let layer = match kind {
        LayerKind::ActNorm => {
            let l = ActNorm::new(&mut store, "l", c);
            l.initialize(&mut store, &random_tensor(2, c, h, w, rng))?;
            FlowLayer::ActNorm(l)
        }
        LayerKind::Plain => FlowLayer::Inv1x1(Inv1x1::plain(&mut store, "l", c, rng)),
        LayerKind::Plu => FlowLayer::Inv1x1(Inv1x1::plu(&mut store, "l", c, rng)?),
        LayerKind::Qr => {
            let k = rng.random_range(1..=c);
            FlowLayer::Inv1x1(Inv1x1::qr(&mut store, "l", c, k, rng))
        }
        LayerKind::Emerging => {
            if let Some(ch) = zero_tap {
                c = c.max(ch + 1);
            }
            FlowLayer::Emerging(Emerging::new(&mut store, "l", c, kernel, rng)?)
        }
        LayerKind::Periodic => FlowLayer::Periodic(Periodic::new(&mut store, "l", c, kernel, rng)?),
        LayerKind::Coupling => {
            c = 2;
            let width = rng.random_range(2..=4);
            FlowLayer::Coupling(Coupling::new(&mut store, "l", c, width, rng)?)
        }
        LayerKind::Squeeze => {
            h = 2 * rng.random_range(1..=2);
            w = 2 * rng.random_range(1..=2);
            FlowLayer::Squeeze(Squeeze)
        }
    };
    let std = match kind {
        LayerKind::Coupling => 0.3,
        LayerKind::Periodic => 0.1,
        _ => 0.2,
    };
    add_noise(&mut store, std, rng);
    if let (FlowLayer::Emerging(e), Some(ch)) = (&layer, zero_tap) {
        let p = e.p();
        let (my, mx) = MaskVariant::Upper.center(p);
        store.get_mut(e.w2).data_mut()[((ch * c + ch) * p + my) * p + mx] = 0.0;
    }
    let input = random_tensor(2, c, h, w, rng);
    Ok(LayerCase { store, layer, input, kernel })
}

/// Jacobian of the first example's forward map, column `k` holding `∂y/∂x_k`. Exact for
/// affine layers, central differences otherwise.
fn jacobian(case: &LayerCase, exact: bool) -> Result<RMatrix> {
    let b = case.bijection();
    let x = case.input.slice_batch(0, 1);
    let d = x.example_len();
    let fwd = |x: &Tensor4| b.apply(&case.store, x, Direction::Forward).map(|r| r.0);
    let base = fwd(&x)?;
    let mut jac = RMatrix::zeros(base.data().len(), d);
    for k in 0..d {
        let col = if exact {
            let mut xp = x.clone();
            xp.data_mut()[k] += 1.0;
            let yp = fwd(&xp)?;
            yp.data().iter().zip(base.data()).map(|(a, b)| a - b).collect::<Vec<_>>()
        } else {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[k] += JACOBIAN_STEP;
            xm.data_mut()[k] -= JACOBIAN_STEP;
            let (yp, ym) = (fwd(&xp)?, fwd(&xm)?);
            yp.data().iter().zip(ym.data()).map(|(a, b)| (a - b) / (2.0 * JACOBIAN_STEP)).collect()
        };
        for (r, v) in col.into_iter().enumerate() {
            jac[(r, k)] = v;
        }
    }
    Ok(jac)
}

/// `log |det|` of the layer's dense operator, built from its filters where it has any.
pub fn dense_logdet(case: &LayerCase) -> Result<f64> {
    let (_, _, h, w) = case.input.shape();
    match &case.layer {
        FlowLayer::Inv1x1(l) => {
            let (wm, _) = l.weight(&case.store)?;
            dense_operator(&Filter::from_matrix(&wm), h, w, Boundary::Zero)?.log_abs_det()
        }
        FlowLayer::Emerging(l) => {
            let (wm, k1, k2) = l.effective(&case.store)?;
            let d0 = dense_operator(&Filter::from_matrix(&wm), h, w, Boundary::Zero)?;
            let d1 = dense_operator(&k1, h, w, Boundary::Zero)?;
            let d2 = dense_operator(&k2, h, w, Boundary::Zero)?;
            d2.compose(&d1)?.compose(&d0)?.log_abs_det()
        }
        FlowLayer::Periodic(l) => dense_operator(&l.filter(&case.store)?, h, w, Boundary::Wrap)?.log_abs_det(),
        FlowLayer::Coupling(_) => Ok(lu_slogdet(&jacobian(case, false)?)?.log_abs),
        _ => Ok(lu_slogdet(&jacobian(case, true)?)?.log_abs),
    }
}

/// Reported logdet against the dense oracle, one report per layer kind.
pub fn logdet_suite(opts: &CheckOptions) -> Vec<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    LayerKind::ALL
        .iter()
        .map(|&kind| {
            let start = Instant::now();
            let tol = if kind == LayerKind::Coupling { COUPLING_LOGDET_TOL } else { EXACT_LOGDET_TOL };
            let mut r = SuiteReport::new(format!("logdet/{}", kind.name()), tol);
            for _ in 0..opts.trials {
                let case = match random_layer(kind, &mut rng, opts.zero_tap) {
                    Ok(c) => c,
                    Err(e) => {
                        r.record_result(Err(e), || kind.name().to_string());
                        continue;
                    }
                };
                let err = (|| {
                    let (_, ld) = case.bijection().apply(&case.store, &case.input, Direction::Forward)?;
                    let oracle = dense_logdet(&case)?;
                    if ld[0] == oracle {
                        return Ok(0.0);
                    }
                    Ok((ld[0] - oracle).abs())
                })();
                r.record_result(err, || case.label(kind));
            }
            timed(r, start)
        })
        .collect()
}

/// `inverse(forward(x)) == x` for every layer kind and for random two-level models.
pub fn round_trip_suite(opts: &CheckOptions) -> Vec<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5151);
    let mut out: Vec<SuiteReport> = LayerKind::ALL
        .iter()
        .map(|&kind| {
            let start = Instant::now();
            let mut r = SuiteReport::new(format!("roundtrip/{}", kind.name()), ROUND_TRIP_TOL);
            for _ in 0..opts.trials {
                let case = match random_layer(kind, &mut rng, opts.zero_tap) {
                    Ok(c) => c,
                    Err(e) => {
                        r.record_result(Err(e), || kind.name().to_string());
                        continue;
                    }
                };
                let err = (|| {
                    let b = case.bijection();
                    let (y, ld) = b.apply(&case.store, &case.input, Direction::Forward)?;
                    let (x, ild) = b.apply(&case.store, &y, Direction::Inverse)?;
                    let ld_err = ld.iter().zip(&ild).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
                    Ok(x.max_abs_diff(&case.input).max(ld_err / ld[0].abs().max(1.0) * ROUND_TRIP_TOL))
                })();
                r.record_result(err, || case.label(kind));
            }
            timed(r, start)
        })
        .collect();

    let start = Instant::now();
    let mut r = SuiteReport::new("roundtrip/model", ROUND_TRIP_TOL);
    for _ in 0..opts.trials {
        let spec = random_spec(&mut rng, 2);
        let err = (|| {
            let mut m = FlowModel::new(spec)?;
            let x = Tensor4::from_fn(3, spec.channels, spec.height, spec.width, |_, _, _, _| rng.random::<f64>());
            m.initialize(&x)?;
            add_noise(m.store_mut(), 0.05, &mut rng);
            let f = m.forward(&x)?;
            let back = m.inverse(&f.z, &f.latents)?;
            Ok(back.max_abs_diff(&x))
        })();
        r.record_result(err, || format!("model {}", spec_label(&spec)));
    }
    out.push(timed(r, start));
    out
}

const CONV_KINDS: [ConvKind; 5] = [
    ConvKind::W1x1,
    ConvKind::Plu,
    ConvKind::Qr { reflections: None },
    ConvKind::Emerging { kernel: 3 },
    ConvKind::Periodic { kernel: 3 },
];

fn random_spec(rng: &mut impl Rng, levels: usize) -> ModelSpec {
    let size = 1 << levels;
    ModelSpec {
        levels,
        depth: rng.random_range(1..=2),
        coupling_width: rng.random_range(2..=6),
        conv: CONV_KINDS[rng.random_range(0..CONV_KINDS.len())],
        channels: rng.random_range(1..=3),
        height: size * rng.random_range(1..=2),
        width: size * rng.random_range(1..=2),
        seed: rng.random(),
    }
}

fn spec_label(s: &ModelSpec) -> String {
    format!("levels={} depth={} conv={} {}x{}x{}", s.levels, s.depth, s.conv, s.channels, s.height, s.width)
}

/// A random `c × c × p × p` masked filter.
fn random_masked(variant: MaskVariant, p: usize, c: usize, rng: &mut impl Rng) -> Result<Filter> {
    let mask = build_autoregressive_mask(variant, p, c)?;
    let taps = (0..c * c * p * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    Filter::new(c, c, p, p, taps, mask.pad())?.masked(&mask)
}

/// The chained 1×1, LOWER and UPPER convolutions against the single combined `d × d` filter.
/// Wrap-around boundaries make the identity exact at the borders too.
pub fn composition_suite(opts: &CheckOptions) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7777);
    let mut r = SuiteReport::new("composition", COMPOSITION_TOL);
    for _ in 0..opts.trials {
        let c = rng.random_range(1..=3);
        let d: usize = if rng.random_bool(0.5) { 1 } else { 3 };
        let p = d.div_ceil(2);
        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let err = (|| {
            let wm = RMatrix::from_fn(c, c, |_, _| rng.random_range(-1.0..1.0));
            let k1 = random_masked(MaskVariant::Lower, p, c, &mut rng)?;
            let k2 = random_masked(MaskVariant::Upper, p, c, &mut rng)?;
            let x = random_tensor(2, c, h, w, &mut rng);
            let w1 = Filter::from_matrix(&wm);
            let chained =
                conv2d(&conv2d(&conv2d(&x, &w1, Boundary::Wrap)?, &k1, Boundary::Wrap)?, &k2, Boundary::Wrap)?;
            let merged = combine_filters(&k2, &combine_filters(&k1, &w1)?)?;
            if merged.kh() != d || merged.pad() != Padding::centered(d, d) {
                return Err(Error::Shape(format!(
                    "combined filter is {}x{}, expected {d}x{d}",
                    merged.kh(),
                    merged.kw()
                )));
            }
            Ok(chained.max_abs_diff(&conv2d(&x, &merged, Boundary::Wrap)?))
        })();
        r.record_result(err, || format!("c={c} d={d} h={h} w={w}"));
    }
    timed(r, start)
}

/// Frequency-domain periodic layer against spatial wrap convolution and the block-circulant
/// dense determinant, `h, w ≤ 6`, `c ≤ 3`.
pub fn periodic_suite(opts: &CheckOptions) -> Vec<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9999);
    let start = Instant::now();
    let mut fwd = SuiteReport::new("periodic/forward", PERIODIC_FORWARD_TOL);
    let mut ld = SuiteReport::new("periodic/logdet", PERIODIC_LOGDET_TOL);
    for _ in 0..opts.trials {
        let c = rng.random_range(1..=3);
        let d = [1, 3, 5][rng.random_range(0..3)];
        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let label = || format!("c={c} d={d} h={h} w={w}");
        let mut store = ParamStore::new();
        let layer = match Periodic::new(&mut store, "p", c, d, &mut rng) {
            Ok(l) => l,
            Err(e) => {
                fwd.record_result(Err(e), label);
                continue;
            }
        };
        add_noise(&mut store, 0.1, &mut rng);
        let x = random_tensor(2, c, h, w, &mut rng);
        let res = (|| {
            let (y, logdet) = layer.apply(&store, &x, Direction::Forward)?;
            let f = layer.filter(&store)?;
            let spatial = conv2d(&x, &f, Boundary::Wrap)?;
            let dense = dense_operator(&f, h, w, Boundary::Wrap)?.log_abs_det()?;
            Ok((y.max_abs_diff(&spatial), (logdet[0] - dense).abs()))
        })();
        match res {
            Ok((e1, e2)) => {
                fwd.record(e1, label);
                ld.record(e2, label);
            }
            Err(e) => fwd.record_result(Err(e), label),
        }
    }
    fwd.elapsed = start.elapsed();
    ld.elapsed = fwd.elapsed;
    vec![fwd, ld]
}

/// Orthogonality of the Householder product and the dense determinant of all three 1×1
/// parameterizations.
pub fn qr_suite(opts: &CheckOptions) -> Vec<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4242);
    let start = Instant::now();
    let mut orth = SuiteReport::new("qr/orthogonality", ORTHOGONALITY_TOL);
    let mut logdets: Vec<SuiteReport> =
        ["qr/logdet", "plu/logdet", "w1x1/logdet"].iter().map(|n| SuiteReport::new(*n, QR_LOGDET_TOL)).collect();
    for _ in 0..opts.trials {
        let c = rng.random_range(1..=4);
        let (h, w) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let hw = (h * w) as f64;
        let mut store = ParamStore::new();
        let k = rng.random_range(1..=c);
        let layers = [
            Inv1x1::qr(&mut store, "q", c, k, &mut rng),
            Inv1x1::plu(&mut store, "p", c, &mut rng).expect("rotation has an LU factorization"),
            Inv1x1::plain(&mut store, "w", c, &mut rng),
        ];
        add_noise(&mut store, 0.3, &mut rng);
        let label = || format!("c={c} k={k} h={h} w={w}");

        let qp = layers[0].qr_params(&store).expect("qr layer");
        let q = householder_orthogonal(&qp.vectors, c).and_then(|q| q.transpose().matmul(&q));
        orth.record_result(q.map(|qtq| qtq.max_abs_diff(&RMatrix::identity(c))), label);

        for (layer, rep) in layers.iter().zip(logdets.iter_mut()) {
            let err = (|| {
                let x = Tensor4::zeros(1, c, h, w);
                let (_, ld) = layer.apply(&store, &x, Direction::Forward)?;
                let (wm, _) = layer.weight(&store)?;
                let dense = dense_operator(&Filter::from_matrix(&wm), h, w, Boundary::Zero)?.log_abs_det()?;
                let mut e = (ld[0] - dense).abs();
                if let Some(qp) = layer.qr_params(&store) {
                    let composed = qr_compose(&qp)?;
                    let expected = hw * qp.log_s.iter().sum::<f64>();
                    e = e.max((ld[0] - expected).abs()).max(composed.max_abs_diff(&wm));
                }
                Ok(e)
            })();
            rep.record_result(err, label);
        }
    }
    let mut out = vec![orth];
    out.extend(logdets);
    for r in &mut out {
        r.elapsed = start.elapsed();
    }
    out
}

/// Tape gradient of the mean bits/dim against central differences for a one-level, depth-2
/// model on a `2 × 2 × 2` input, per convolution type.
pub fn gradient_suite(opts: &CheckOptions) -> Vec<SuiteReport> {
    CONV_KINDS
        .iter()
        .map(|&conv| {
            let start = Instant::now();
            let mut r = SuiteReport::new(format!("gradients/{conv}"), GRADIENT_TOL);
            let spec = ModelSpec {
                levels: 1,
                depth: 2,
                coupling_width: 4,
                conv,
                channels: 2,
                height: 2,
                width: 2,
                seed: opts.seed,
            };
            r.record_result(model_grad_error(spec, opts.seed), || format!("conv={conv}"));
            timed(r, start)
        })
        .collect()
}

/// Worst relative gradient error over every trainable parameter of a randomized model.
pub fn model_grad_error(spec: ModelSpec, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1234);
    let mut m = FlowModel::new(spec)?;
    let x = Tensor4::from_fn(2, spec.channels, spec.height, spec.width, |_, _, _, _| rng.random::<f64>());
    m.initialize(&x)?;
    add_noise(m.store_mut(), 0.1, &mut rng);
    let store = m.store();
    let trainable: Vec<_> = store.ids().filter(|&id| store.param(id).trainable).collect();
    let params: Vec<Tensor> = trainable.iter().map(|&id| store.get(id).clone()).collect();
    let dims = spec.dims() as f64;
    let report = grad_check(&params, flowforge::autodiff::FD_STEP, |tape: &mut Tape, vars: &[Var]| {
        let mut k = 0;
        let p: Vec<Var> = store
            .ids()
            .map(|id| {
                if store.param(id).trainable {
                    k += 1;
                    vars[k - 1]
                } else {
                    tape.constant(store.get(id).clone())
                }
            })
            .collect();
        let xv = tape.constant(Tensor::from(&x));
        let rec = m.record(tape, &p, xv)?;
        let total = tape.sum(rec.log_prob)?;
        let scaled = tape.scale(total, -1.0 / (x.batch() as f64 * dims * std::f64::consts::LN_2))?;
        tape.add_scalar(scaled, 8.0)
    })?;
    Ok(report.max_rel_error)
}

/// Every suite, in a fixed order.
pub fn run_all(opts: &CheckOptions) -> Vec<SuiteReport> {
    let mut out = logdet_suite(opts);
    out.extend(round_trip_suite(opts));
    out.push(composition_suite(opts));
    out.extend(periodic_suite(opts));
    out.extend(qr_suite(opts));
    out.extend(gradient_suite(opts));
    out
}
