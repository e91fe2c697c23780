use std::path::PathBuf;

use exit_mlmc::driver::level_diagnostics;
use exit_mlmc::reference::{cube_exit_series, cube_exit_solution, slab_exit_series, slab_exit_solution};
use exit_mlmc::{run, Error, Estimator, ExitTimeProfile, MlmcConfig, Preset, ProblemSpec, SeriesTruncation, SplitRule};

use crate::args::{CommonArgs, ConfigFile, EpsList, EstimatorList, LevelList, LevelsArgs, ReferenceArgs, RunArgs};
use crate::error::{CliError, Result};
use crate::output::{
    levels_row, run_level_rows, run_levels_path, run_row, write_with_manifest, RunManifest, RunOutcome, LEVELS_HEADER,
    RUN_HEADER, RUN_LEVELS_HEADER,
};

const DEFAULT_LEVEL_SAMPLES: u64 = 100_000;

/// Flags shared by `levels` and `run`, merged with the config file.
struct Common {
    problem: Preset,
    payoff: ExitTimeProfile,
    estimators: Vec<Estimator>,
    seed: u64,
    threads: Option<usize>,
    out: PathBuf,
    h0: f64,
    refinement: u32,
    split_rule: SplitRule,
}

impl Common {
    fn resolve(args: CommonArgs, file: &ConfigFile, default_out: &str) -> Result<Self> {
        let base = MlmcConfig::<f64>::new(1.0, Estimator::New2);
        let threads = file.pick(args.threads, "threads")?;
        if threads == Some(0) {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        Ok(Self {
            problem: file.pick(args.problem, "problem")?.unwrap_or(Preset::Cube3d),
            payoff: file.pick(args.payoff, "payoff")?.unwrap_or_default(),
            estimators: file
                .pick::<EstimatorList>(args.estimator, "estimator")?
                .map_or_else(|| Estimator::ALL.to_vec(), |l| l.0),
            seed: file.pick(args.seed, "seed")?.unwrap_or(0),
            threads,
            out: file
                .pick(args.out, "out")?
                .unwrap_or_else(|| PathBuf::from(default_out)),
            h0: file.pick(args.h0, "h0")?.unwrap_or(base.h0),
            refinement: file
                .pick(args.refine_factor, "refine-factor")?
                .unwrap_or(base.refinement),
            split_rule: file.pick(args.m_rule, "m-rule")?.unwrap_or_default(),
        })
    }

    fn config(&self, epsilon: f64, estimator: Estimator) -> MlmcConfig<f64> {
        let mut c = MlmcConfig::new(epsilon, estimator);
        c.h0 = self.h0;
        c.refinement = self.refinement;
        c.split_rule = self.split_rule;
        c.seed = self.seed;
        c
    }

    fn spec(&self) -> ProblemSpec<f64> {
        self.problem.build(self.payoff)
    }

    fn manifest(&self, subcommand: &str, samples: u64) -> RunManifest {
        RunManifest {
            subcommand: subcommand.into(),
            problem: self.problem.name().into(),
            payoff: match self.payoff {
                ExitTimeProfile::TerminalTime => "terminal-time",
                ExitTimeProfile::UnitRunning => "unit-running",
            }
            .into(),
            estimators: self.estimators.iter().map(|e| e.name().to_string()).collect(),
            eps: None,
            levels: None,
            samples,
            min_level: None,
            max_level: None,
            alpha: None,
            seed: self.seed,
            output: self.out.clone(),
            truncation: SeriesTruncation::default().max_index(),
            refine_factor: self.refinement,
            h0: self.h0,
            m_rule: self.split_rule.to_string(),
            threads: self.threads,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    /// Runs `f` on a pool of the requested size, or the global pool.
    fn in_pool<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        match self.threads {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }
}

pub fn levels(args: LevelsArgs) -> Result<()> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let common = Common::resolve(args.common, &file, "levels.csv")?;
    let levels = file
        .pick::<LevelList>(args.levels, "levels")?
        .map_or_else(|| (0..=4).collect(), |l| l.0);
    let samples = file.pick(args.samples, "samples")?.unwrap_or(DEFAULT_LEVEL_SAMPLES);
    if samples < 2 {
        return Err(CliError::Config("--samples must be at least 2".into()));
    }
    let spec = common.spec();

    let mut csv = format!("{LEVELS_HEADER}\n");
    for &est in &common.estimators {
        let config = common.config(1.0, est);
        config.validate(&spec)?;
        let records = common.in_pool(|| level_diagnostics(&spec, &config, levels.iter().copied(), samples))??;
        for r in &records {
            levels_row(&mut csv, est.name(), r);
        }
    }
    let mut manifest = common.manifest("levels", samples);
    manifest.levels = Some(levels);
    write_with_manifest(&common.out, &csv, &manifest)?;
    eprintln!("wrote {}", common.out.display());
    Ok(())
}

/// Analytic value at the start point, when one is available.
fn reference_value(problem: Preset) -> Option<f64> {
    let trunc = SeriesTruncation::default();
    match problem {
        Preset::Cube3d => cube_exit_solution(&[0.0; 3], 0.0, trunc).ok(),
        Preset::Cube1d => slab_exit_solution(0.0, 0.0, trunc).ok(),
        Preset::Ball3d => None,
    }
}

pub fn run_eps(args: RunArgs) -> Result<()> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let common = Common::resolve(args.common, &file, "run.csv")?;
    let eps = file
        .pick::<EpsList>(args.eps, "eps")?
        .ok_or_else(|| CliError::Config("at least one --eps value is required".into()))?
        .0;
    let defaults = MlmcConfig::<f64>::new(1.0, Estimator::New2);
    let samples = file.pick(args.samples, "samples")?.unwrap_or(defaults.initial_samples);
    let min_level = file.pick(args.min_level, "min-level")?.unwrap_or(defaults.min_level);
    let max_level = file.pick(args.max_level, "max-level")?.unwrap_or(defaults.max_level);
    let alpha = file.pick(args.alpha, "alpha")?;
    let spec = common.spec();
    let reference = reference_value(common.problem);

    let mut summary = format!("{RUN_HEADER}\n");
    let mut per_level = format!("{RUN_LEVELS_HEADER}\n");
    let mut capped = 0;
    for &est in &common.estimators {
        for &e in &eps {
            let mut config = common.config(e, est);
            config.initial_samples = samples;
            config.min_level = min_level;
            config.max_level = max_level;
            config.alpha_hint = alpha;
            config.validate(&spec)?;
            match common.in_pool(|| run(&spec, &config))? {
                Ok(r) => {
                    run_row(&mut summary, est.name(), e, reference, &RunOutcome::Done(&r));
                    run_level_rows(&mut per_level, est.name(), e, &r);
                    eprintln!(
                        "{est} eps={e}: estimate {} with L={}, cost {}",
                        r.estimate, r.chosen_level, r.total_cost
                    );
                }
                Err(Error::LevelCap { max_level, estimate }) => {
                    capped += 1;
                    run_row(
                        &mut summary,
                        est.name(),
                        e,
                        reference,
                        &RunOutcome::LevelCap { max_level, estimate },
                    );
                    eprintln!("{est} eps={e}: bias not converged by level {max_level}");
                }
                Err(other) => return Err(other.into()),
            }
        }
    }
    let mut manifest = common.manifest("run", samples);
    manifest.eps = Some(eps);
    manifest.min_level = Some(min_level);
    manifest.max_level = Some(max_level);
    manifest.alpha = alpha;
    write_with_manifest(&common.out, &summary, &manifest)?;
    write_with_manifest(&run_levels_path(&common.out), &per_level, &manifest)?;
    eprintln!("wrote {}", common.out.display());
    if capped > 0 {
        return Err(CliError::LevelCap(capped));
    }
    Ok(())
}

pub fn reference(args: ReferenceArgs) -> Result<()> {
    let trunc = SeriesTruncation::new(args.truncation)?;
    let x = &args.point.0;
    let value = match args.problem {
        Preset::Cube3d if args.series => cube_exit_series(x, args.t, trunc)?,
        Preset::Cube3d => cube_exit_solution(x, args.t, trunc)?,
        Preset::Cube1d => {
            let [x] = x[..] else {
                return Err(CliError::Config(format!(
                    "cube1d takes one coordinate, got {}",
                    x.len()
                )));
            };
            if args.series {
                slab_exit_series(x, args.t, trunc)?
            } else {
                slab_exit_solution(x, args.t, trunc)?
            }
        }
        Preset::Ball3d => return Err(CliError::Config("no analytic reference for ball3d".into())),
    };
    println!("{value}");
    Ok(())
}
