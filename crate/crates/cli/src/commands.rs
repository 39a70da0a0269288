//! Subcommand implementations. Output goes to the given writer.

use std::fmt;
use std::io::Write;

use flowforge::convkit::Tensor4;
use flowforge::datakit::{
    load_dataset, save_ppm, tile_grid, Checkpoint, Dataset, Partition, RngState, Source, SynthShape,
};
use flowforge::flows::{quantize, FlowModel};
use flowforge::training::{evaluate, EvalStats, OptimConfig, Trainer};
use flowforge::Error;
use flowforge_bench::{measure_inversion, InversionSetup};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{BenchArgs, CheckArgs, EvalArgs, SampleArgs, TrainArgs};
use crate::suites::{run_all, CheckOptions};

/// Environment variable overriding the bench worker count.
pub const WORKERS_ENV: &str = "FLOWFORGE_WORKERS";
/// Training images used for the final train bits/dim.
const FINAL_EVAL_IMAGES: usize = 256;

/// Failure of a subcommand with its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input, configuration or failed checks: exit code 1.
    Validation(String),
    /// Numerical breakdown at run time: exit code 2.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn synth_shape(count: u32, size: usize, channels: usize) -> SynthShape {
    SynthShape { count: count as usize, size, channels }
}

/// Trains and writes the checkpoint at the start, every `checkpoint_every` steps and at the
/// end. A non-finite loss stops training and leaves the last checkpoint in place.
pub fn train(args: &TrainArgs, out: &mut impl Write) -> CliResult<EvalStats> {
    let source: Source = args.data.data.parse()?;
    let shape = synth_shape(args.data.num_train, args.data.size as usize, args.data.channels as usize);
    let data = load_dataset(&source, Partition::Train, shape, args.seed)?;
    let (_, c, h, w) = data.images.shape();
    let spec = args.model.spec(c, h, w, args.seed);
    let model = FlowModel::new(spec)?;
    let cfg = OptimConfig { lr: args.lr, warmup: args.warmup, batch: args.batch as usize, ..OptimConfig::default() };
    writeln!(
        out,
        "model conv={} levels={} depth={} width={} image={c}x{h}x{w} params={}",
        spec.conv,
        spec.levels,
        spec.depth,
        spec.coupling_width,
        model.num_parameters()
    )?;
    let mut trainer = Trainer::new(model, data.images.clone(), cfg, args.seed)?;
    let save = |t: &Trainer| {
        Checkpoint::from_model(t.model(), t.step(), Some(RngState::capture(t.rng()))).save(&args.checkpoint)
    };
    save(&trainer)?;
    for s in 0..args.steps {
        let log = trainer.train_step()?;
        if s % args.log_every == 0 || s + 1 == args.steps {
            writeln!(out, "{log}")?;
        }
        if (s + 1) % args.checkpoint_every == 0 || s + 1 == args.steps {
            save(&trainer)?;
        }
    }
    let n = data.len().min(FINAL_EVAL_IMAGES);
    let stats = evaluate(trainer.model(), &data.images.slice_batch(0, n), cfg.batch, args.seed)?;
    writeln!(out, "final step={} train {stats}", trainer.step())?;
    writeln!(out, "checkpoint {}", args.checkpoint.display())?;
    Ok(stats)
}

fn check_shape(model: &FlowModel, data: &Dataset) -> CliResult {
    let s = model.spec();
    let (_, c, h, w) = data.images.shape();
    if (c, h, w) != (s.channels, s.height, s.width) {
        return Err(CliError::Validation(format!(
            "images are {c}x{h}x{w} but the checkpoint expects {}x{}x{}",
            s.channels, s.height, s.width
        )));
    }
    Ok(())
}

/// Mean and standard error of bits/dim on the test split.
pub fn eval(args: &EvalArgs, out: &mut impl Write) -> CliResult<EvalStats> {
    let model = Checkpoint::load(&args.checkpoint)?.to_model()?;
    let spec = *model.spec();
    let source: Source = args.data.parse()?;
    if source != Source::Textures && source != Source::Blobs {
        // directories carry their own sizes
    } else if spec.height != spec.width {
        return Err(CliError::Validation("synthetic images are square; the checkpoint is not".into()));
    }
    let data =
        load_dataset(&source, Partition::Test, synth_shape(args.num_test, spec.height, spec.channels), args.seed)?;
    check_shape(&model, &data)?;
    let stats = evaluate(&model, &data.images, args.batch as usize, args.seed)?;
    writeln!(out, "test {stats}")?;
    Ok(stats)
}

/// Samples, quantizes and tiles into a near-square grid.
pub fn sample(args: &SampleArgs, out: &mut impl Write) -> CliResult<Tensor4> {
    let model = Checkpoint::load(&args.checkpoint)?.to_model()?;
    let channels = model.spec().channels;
    if channels != 1 && channels != 3 {
        return Err(CliError::Validation(format!("cannot write {channels}-channel samples as PPM/PGM")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let n = args.num_samples as usize;
    let x = model.sample(n, args.temperature, &mut rng)?;
    let cols = (n as f64).sqrt().ceil() as usize;
    let grid = tile_grid(&quantize(&x), cols)?;
    save_ppm(&grid, &args.out)?;
    let (_, _, gh, gw) = grid.shape();
    writeln!(out, "wrote {n} samples as a {gw}x{gh} grid to {}", args.out.display())?;
    Ok(x)
}

/// Runs every invariant suite; any failure is a validation failure.
pub fn check(args: &CheckArgs, out: &mut impl Write) -> CliResult {
    let opts = CheckOptions { seed: args.seed, trials: args.trials as usize, zero_tap: args.fault_zero_tap };
    let reports = run_all(&opts);
    let mut failed = 0;
    for r in &reports {
        writeln!(out, "{r}")?;
        failed += usize::from(!r.passed());
    }
    writeln!(out, "{} suites, {failed} failed", reports.len())?;
    if failed > 0 {
        return Err(CliError::Validation(format!("{failed} suite(s) failed")));
    }
    Ok(())
}

/// Worker count from the environment, else rayon's default.
pub fn workers() -> CliResult<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Validation(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(rayon::current_num_threads()),
    }
}

/// Times the inversion strategies on a pinned thread pool.
pub fn bench(args: &BenchArgs, out: &mut impl Write) -> CliResult {
    let n = workers()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Validation(format!("cannot start {n} workers: {e}")))?;
    let setup = InversionSetup {
        size: args.size as usize,
        channels: args.channels as usize,
        kernel: args.kernel as usize,
        batch: args.batch as usize,
        seed: args.seed,
    };
    let report = pool.install(|| measure_inversion(setup, n))?;
    write!(out, "{}", report.to_markdown())?;
    Ok(())
}
