//! Command-line front end: `scale`, `spectrum`, `mutation`, `kappa`, `simulate`, `validate` and
//! `limits`.
//!
//! Settings are resolved as flags over `--config` JSON keys over defaults. Exit status is 0 on
//! success, 1 when a validation suite has a failing check and 2 on any configuration error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::lifespan::{LifespanMeasure, MutationContext};
use crate::montecarlo::{self, RunOptions};
use crate::mutation::{k_asymptotics, kappa_fixed_point_residual, kappa_law, MutationMoments};
use crate::scale::{self, Regime, ScaleGrid};
use crate::simulator::{self, DEFAULT_CAP};
use crate::spectrum::{self, limit_j, spectrum_limits, FamilySize, ModelGrids, SpectrumQuery};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "splitting-tree", version, about = "Splitting trees with neutral mutations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
struct CommonArgs {
    /// JSON file with any of: measure, p, horizon, step, seed, replicates, cap, tolerance, out
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Lifespan family: exponential, pure_birth, gamma or uniform
    #[arg(long, global = true)]
    family: Option<String>,
    /// Birth rate b (total mass of the lifespan measure)
    #[arg(long, global = true)]
    b: Option<f64>,
    /// Death rate of exponential lifespans
    #[arg(long, global = true)]
    d: Option<f64>,
    /// Shape of gamma lifespans
    #[arg(long, global = true)]
    k: Option<f64>,
    /// Rate of gamma lifespans
    #[arg(long, global = true)]
    r: Option<f64>,
    /// Length of uniform lifespans
    #[arg(long, global = true)]
    c: Option<f64>,
    /// Probability that a newborn is a mutant
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Grid step of the scale-function solver
    #[arg(long, global = true)]
    step: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Bound on individuals ever born per simulation
    #[arg(long, global = true)]
    cap: Option<u64>,
    /// Absolute tolerance of truncated improper integrals
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Output path, `-` for stdout
    #[arg(long, global = true)]
    out: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate the scale function W and its derivative.
    #[command(
        after_help = "CSV columns:\n  t       time\n  W       scale function W(t), Laplace transform 1/psi\n  Wprime  derivative W'(t), equal to b E[Xi(t)]"
    )]
    Scale {
        #[command(flatten)]
        common: CommonArgs,
        /// Emit every n-th grid node
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Also write the growth constants as JSON to this path (`-` for stdout)
        #[arg(long)]
        constants: Option<String>,
    },
    /// Expected allelic frequency spectrum and its long-time constants.
    #[command(
        after_help = "CSV columns:\n  i               number of carriers\n  a               age cutoff\n  t               time\n  expected        E[M_t^{i,a}], mean number of alleles younger than a with i carriers\n  limit_constant  lim e^{-eta t} E[M_t^{i,a}]\n  fraction_limit  almost-sure limit of M_t^{i,a} / M_t\nLimits are nan unless the tree is supercritical."
    )]
    Spectrum {
        #[command(flatten)]
        common: CommonArgs,
        /// Carrier counts: `3`, `1,2,5` or `1..10`
        #[arg(long, default_value = "1")]
        i: String,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        t: f64,
    },
    /// Mean carriers and alleles of each mutation type.
    #[command(
        after_help = "CSV columns:\n  i              allele type (mutations from the ancestral allele)\n  t              time\n  E_K            E[K_i(t)], mean carriers of type-i alleles\n  E_L            E[L_i(t)], mean number of type-i alleles\n  eta_p          exponential growth rate of E[K_i(t)]\n  leading_coeff  c with E[K_i(t)] ~ c t^i e^{eta_p t}"
    )]
    Mutation {
        #[command(flatten)]
        common: CommonArgs,
        /// Types: `3`, `0,1,2` or `0..4`
        #[arg(long, default_value = "0..3")]
        i: String,
        /// Times, comma separated
        #[arg(long, default_value = "1")]
        t: String,
    },
    /// Limit law of t^{-i} e^{-eta_c t} K_i(t) and its fixed-point residual.
    #[command(
        after_help = "JSON keys:\n  atom_prob         P(kappa_i = 0)\n  conditional_mean  E[kappa_i | kappa_i > 0]\n  theta             rate of the exponential part\n  mean              E[kappa_i]\n  residual_max      largest fixed-point residual of the Laplace transform over a log grid of a"
    )]
    Kappa {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1)]
        i: u32,
        #[arg(long, default_value_t = 1e-2)]
        a_min: f64,
        #[arg(long, default_value_t = 1e2)]
        a_max: f64,
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
    /// Simulate one population and write its living individuals and allele registry.
    #[command(
        after_help = "Snapshot CSV columns:\n  individual     id (0 is the ancestor)\n  parent         mother's id, empty for the ancestor\n  birth, death   birth and death times (death inf for immortal individuals)\n  allele         allele id\n  allele_type    mutations between the allele and the ancestral allele\n  allele_origin  time the allele appeared\nRegistry CSV columns: allele, origin, allele_type, parent_allele"
    )]
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Registry CSV path; defaults to `<out stem>.registry.csv`, or stdout after the snapshot
        #[arg(long)]
        registry: Option<String>,
    },
    /// Run a Monte Carlo validation suite (core, spectrum, kappa).
    #[command(
        after_help = "CSV columns:\n  check     check name\n  theory    analytic value (the level for goodness-of-fit checks)\n  estimate  Monte Carlo mean (the p-value for goodness-of-fit checks)\n  se        standard error\n  z         (estimate - theory) / se\n  pass      whether the check passed"
    )]
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "core")]
        suite: String,
    },
    /// Regime, Malthusian parameters and growth constants as JSON.
    #[command(
        after_help = "JSON keys:\n  measure                 the lifespan measure\n  constants               regime, eta, eta_tilde and the growth constants of W and W'\n  extinction_probability  1 - eta/b\n  clonal                  the same constants for the clonal measure (needs --p)\n  J                       integral of e^{-eta u} W_c'/W_c (supercritical trees, needs --p)"
    )]
    Limits {
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Resolved settings of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub measure: LifespanMeasure,
    pub mutation_prob: Option<f64>,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    pub replicates: usize,
    pub cap: u64,
    pub tolerance: f64,
    pub out: String,
}

fn read_config(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::config("config", "expected a JSON object")),
        Err(e) => Err(Error::config("config", format!("{}: {e}", path.display()))),
    }
}

fn number(map: &Map<String, Value>, key: &str) -> Result<Option<f64>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::config(key, format!("expected a number, got {v}"))),
    }
}

fn integer(map: &Map<String, Value>, key: &str) -> Result<Option<u64>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| Error::config(key, format!("expected a non-negative integer, got {v}"))),
    }
}

impl RunConfig {
    pub const DEFAULT_STEP: f64 = 1e-3;
    pub const DEFAULT_REPLICATES: usize = 10_000;
    pub const DEFAULT_TOLERANCE: f64 = spectrum::DEFAULT_TOLERANCE;
    pub const DEFAULT_HORIZON: f64 = 10.0;
    pub const DEFAULT_SEED: u64 = 42;

    fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => read_config(path)?,
            None => Map::new(),
        };
        let mut measure = match file.get("measure") {
            Some(Value::Object(m)) => m.clone(),
            Some(other) => return Err(Error::config("measure", format!("expected an object, got {other}"))),
            None => Map::new(),
        };
        if let Some(family) = &args.family {
            if measure.get("family").and_then(Value::as_str) != Some(family.as_str()) {
                measure.clear();
            }
            measure.insert("family".into(), json!(family));
        }
        for (key, value) in [
            ("b", args.b),
            ("d", args.d),
            ("k", args.k),
            ("r", args.r),
            ("c", args.c),
        ] {
            if let Some(v) = value {
                measure.insert(key.into(), json!(v));
            }
        }
        if measure.is_empty() {
            return Err(Error::config(
                "measure",
                "no lifespan measure given (use --family or a `measure` config key)",
            ));
        }
        let measure = LifespanMeasure::from_json(&Value::Object(measure))?;

        let mutation_prob = args.p.map(Some).map_or_else(|| number(&file, "p"), Ok)?;
        let horizon = args.horizon.map_or_else(|| number(&file, "horizon"), |v| Ok(Some(v)))?;
        let step = args.step.map_or_else(|| number(&file, "step"), |v| Ok(Some(v)))?;
        let tolerance = args.tol.map_or_else(|| number(&file, "tolerance"), |v| Ok(Some(v)))?;
        let seed = args.seed.map_or_else(|| integer(&file, "seed"), |v| Ok(Some(v)))?;
        let replicates = args
            .replicates
            .map(|v| v as u64)
            .map_or_else(|| integer(&file, "replicates"), |v| Ok(Some(v)))?;
        let cap = args.cap.map_or_else(|| integer(&file, "cap"), |v| Ok(Some(v)))?;
        let out = match (&args.out, file.get("out")) {
            (Some(o), _) => o.clone(),
            (None, Some(Value::String(s))) => s.clone(),
            (None, Some(other)) => return Err(Error::config("out", format!("expected a path, got {other}"))),
            (None, None) => "-".into(),
        };

        let config = Self {
            measure,
            mutation_prob,
            horizon: horizon.unwrap_or(Self::DEFAULT_HORIZON),
            step: step.unwrap_or(Self::DEFAULT_STEP),
            seed: seed.unwrap_or(Self::DEFAULT_SEED),
            replicates: replicates.unwrap_or(Self::DEFAULT_REPLICATES as u64) as usize,
            cap: cap.unwrap_or(DEFAULT_CAP),
            tolerance: tolerance.unwrap_or(Self::DEFAULT_TOLERANCE),
            out,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if let Some(p) = self.mutation_prob {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::config("p", format!("must lie in (0, 1), got {p}")));
            }
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::config(
                "horizon",
                format!("must be a finite non-negative time, got {}", self.horizon),
            ));
        }
        if !(self.step > 0.0) {
            return Err(Error::config("step", format!("must be positive, got {}", self.step)));
        }
        if self.replicates < 2 {
            return Err(Error::config(
                "replicates",
                format!("need at least 2, got {}", self.replicates),
            ));
        }
        if self.cap == 0 {
            return Err(Error::config("cap", "must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config(
                "tolerance",
                format!("must be positive, got {}", self.tolerance),
            ));
        }
        Ok(())
    }

    fn context(&self) -> Result<MutationContext> {
        let p = self
            .mutation_prob
            .ok_or_else(|| Error::config("p", "this subcommand needs a mutation probability (--p)"))?;
        MutationContext::new(self.measure, p)
    }

    fn run_options(&self) -> RunOptions {
        RunOptions {
            replicates: self.replicates,
            seed: self.seed,
            cap: self.cap,
        }
    }
}

/// Locale-independent formatting with 9 significant digits, like C's `%.9g`.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exponent) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exponent: i32 = exponent.parse().unwrap_or(0);
    if (-5..9).contains(&exponent) {
        let decimals = (8 - exponent).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!(
            "{}e{}{:02}",
            trim_zeros(mantissa),
            if exponent < 0 { '-' } else { '+' },
            exponent.abs()
        )
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::config(key, format!("cannot parse `{s}`")))
        })
        .collect()
}

fn parse_range(key: &str, text: &str) -> Result<Vec<u32>> {
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u32 = lo
            .trim()
            .parse()
            .map_err(|_| Error::config(key, format!("cannot parse `{text}`")))?;
        let hi: u32 = hi
            .trim()
            .parse()
            .map_err(|_| Error::config(key, format!("cannot parse `{text}`")))?;
        if hi < lo {
            return Err(Error::config(key, format!("empty range `{text}`")));
        }
        Ok((lo..=hi).collect())
    } else {
        parse_list(key, text)
    }
}

fn open_output(path: &str) -> Result<Option<BufWriter<File>>> {
    if path == "-" {
        return Ok(None);
    }
    File::create(path)
        .map(|f| Some(BufWriter::new(f)))
        .map_err(|e| Error::config("out", format!("cannot create {path}: {e}")))
}

fn io_error(e: io::Error) -> Error {
    Error::config("out", e.to_string())
}

/// Write `text` to `path`, or to `stdout` for `-`.
fn emit(path: &str, stdout: &mut dyn Write, text: &str) -> Result<()> {
    match open_output(path)? {
        Some(mut file) => {
            file.write_all(text.as_bytes()).map_err(io_error)?;
            file.flush().map_err(io_error)
        }
        None => stdout.write_all(text.as_bytes()).map_err(io_error),
    }
}

fn csv_row(fields: &[String]) -> String {
    let mut line = fields.join(",");
    line.push('\n');
    line
}

fn scale_command(config: &RunConfig, stride: usize, constants: Option<&str>, stdout: &mut dyn Write) -> Result<()> {
    if stride == 0 {
        return Err(Error::config("stride", "must be at least 1"));
    }
    let grid = ScaleGrid::solve(&config.measure, config.horizon, config.step)?;
    let mut text = String::from("t,W,Wprime\n");
    for k in (0..grid.len()).step_by(stride) {
        text += &csv_row(&[
            format_number(k as f64 * grid.step()),
            format_number(grid.values()[k]),
            format_number(grid.derivatives()[k]),
        ]);
    }
    emit(&config.out, stdout, &text)?;
    if let Some(path) = constants {
        let mut value = scale::growth_constants(&config.measure)?.to_json();
        value["measure"] = config.measure.to_json();
        let mut body = serde_json::to_string_pretty(&value).map_err(|e| Error::config("constants", e.to_string()))?;
        body.push('\n');
        emit(path, stdout, &body)?;
    }
    Ok(())
}

/// Grid horizon at which `limit_j` certifies `tol`.
fn limit_horizon(clonal_mass: f64, eta: f64, tol: f64) -> f64 {
    ((clonal_mass / (eta * tol)).ln() / eta).max(0.0) * 1.01 + 1.0
}

fn spectrum_command(config: &RunConfig, sizes: &[u32], a: f64, t: f64, stdout: &mut dyn Write) -> Result<()> {
    if !(a >= 0.0 && a <= t) {
        return Err(Error::config(
            "a",
            format!("the age cutoff must satisfy 0 ≤ a ≤ t, got a = {a}, t = {t}"),
        ));
    }
    let ctx = config.context()?;
    let grids = ModelGrids::solve(&ctx, t.max(config.step), config.step)?;
    let supercritical = scale::regime(&config.measure) == Regime::Supercritical;
    let limit_grid = if supercritical {
        let eta = scale::malthusian(&config.measure)?;
        let horizon = limit_horizon(ctx.clonal_mass(), eta, config.tolerance).max(t);
        Some(ScaleGrid::clonal(&ctx, horizon, config.step)?)
    } else {
        None
    };
    let mut text = String::from("i,a,t,expected,limit_constant,fraction_limit\n");
    for &i in sizes {
        let expected = grids.expected_spectrum(&SpectrumQuery::new(i, a, t)?)?;
        let (limit, fraction) = match &limit_grid {
            Some(clonal) => {
                let l = spectrum_limits(&ctx, clonal, i, a, config.tolerance)?;
                (l.mean_limit, l.fraction_limit)
            }
            None => (f64::NAN, f64::NAN),
        };
        text += &csv_row(&[
            i.to_string(),
            format_number(a),
            format_number(t),
            format_number(expected),
            format_number(limit),
            format_number(fraction),
        ]);
    }
    emit(&config.out, stdout, &text)
}

fn mutation_command(config: &RunConfig, types: &[u32], times: &[f64], stdout: &mut dyn Write) -> Result<()> {
    let ctx = config.context()?;
    let horizon = times.iter().copied().fold(config.step, f64::max);
    if let Some(&bad) = times.iter().find(|&&t| !(t >= 0.0)) {
        return Err(Error::config("t", format!("times must be non-negative, got {bad}")));
    }
    let moments = MutationMoments::solve(&ctx, horizon, config.step)?;
    let mut text = String::from("i,t,E_K,E_L,eta_p,leading_coeff\n");
    for &i in types {
        let (eta_p, coeff) = match k_asymptotics(&ctx, i) {
            Ok(a) => (a.eta_p, a.leading_coefficient),
            Err(Error::NoNegativeRoot(_) | Error::DivergentMoment { .. }) => (f64::NAN, f64::NAN),
            Err(e) => return Err(e),
        };
        for &t in times {
            text += &csv_row(&[
                i.to_string(),
                format_number(t),
                format_number(moments.expected_k(i, t)?),
                format_number(moments.expected_l(i, t)?),
                format_number(eta_p),
                format_number(coeff),
            ]);
        }
    }
    emit(&config.out, stdout, &text)
}

fn kappa_command(
    config: &RunConfig,
    i: u32,
    a_min: f64,
    a_max: f64,
    points: usize,
    stdout: &mut dyn Write,
) -> Result<()> {
    if !(a_min > 0.0 && a_max >= a_min) || points < 1 {
        return Err(Error::config("a_min", "need 0 < a_min <= a_max and at least one point"));
    }
    let ctx = config.context()?;
    let law = kappa_law(&ctx, i)?;
    let mut residual_max = 0.0f64;
    for k in 0..points {
        let frac = if points == 1 {
            0.0
        } else {
            k as f64 / (points - 1) as f64
        };
        let a = a_min * (a_max / a_min).powf(frac);
        residual_max = residual_max.max(kappa_fixed_point_residual(&ctx, i, a)?);
    }
    let value = json!({
        "order": i,
        "atom_prob": law.atom_prob,
        "conditional_mean": law.conditional_mean,
        "theta": law.theta,
        "mean": law.mean,
        "residual_max": residual_max,
    });
    let mut body = serde_json::to_string_pretty(&value).map_err(|e| Error::config("out", e.to_string()))?;
    body.push('\n');
    emit(&config.out, stdout, &body)
}

fn simulate_command(config: &RunConfig, registry: Option<&str>, stdout: &mut dyn Write) -> Result<()> {
    let ctx = config.context()?;
    let snapshot = simulator::simulate(&ctx, config.horizon, config.seed, config.cap)?;
    if snapshot.truncated {
        eprintln!("warning: cap of {} births reached, snapshot is truncated", config.cap);
    }
    let mut text = String::from("individual,parent,birth,death,allele,allele_type,allele_origin\n");
    for ind in &snapshot.alive {
        let allele = &snapshot.alleles[ind.allele as usize];
        text += &csv_row(&[
            ind.id.to_string(),
            ind.parent.map(|p| p.to_string()).unwrap_or_default(),
            format_number(ind.birth_time),
            format_number(ind.death_time),
            ind.allele.to_string(),
            allele.allele_type.to_string(),
            format_number(allele.origin_time),
        ]);
    }
    let mut registry_text = String::from("allele,origin,allele_type,parent_allele\n");
    for record in &snapshot.alleles {
        registry_text += &csv_row(&[
            record.id.to_string(),
            format_number(record.origin_time),
            record.allele_type.to_string(),
            record.parent_allele.map(|p| p.to_string()).unwrap_or_default(),
        ]);
    }
    emit(&config.out, stdout, &text)?;
    let registry_path = match registry {
        Some(path) => path.to_string(),
        None if config.out == "-" => "-".to_string(),
        None => {
            let out = Path::new(&config.out);
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("snapshot");
            out.with_file_name(format!("{stem}.registry.csv"))
                .to_string_lossy()
                .into_owned()
        }
    };
    if registry_path == "-" && config.out == "-" {
        stdout.write_all(b"\n").map_err(io_error)?;
    }
    emit(&registry_path, stdout, &registry_text)
}

fn validate_command(config: &RunConfig, suite: &str, stdout: &mut dyn Write) -> Result<bool> {
    let report = montecarlo::run_suite(suite, &config.run_options())?;
    let mut text = String::from("check,theory,estimate,se,z,pass\n");
    for row in &report.rows {
        text += &csv_row(&[
            row.check.clone(),
            format_number(row.theory),
            format_number(row.estimate),
            format_number(row.se),
            format_number(row.z),
            row.pass.to_string(),
        ]);
    }
    emit(&config.out, stdout, &text)?;
    Ok(report.all_pass())
}

fn limits_command(config: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let measure = &config.measure;
    let mut value = json!({
        "measure": measure.to_json(),
        "constants": scale::growth_constants(measure)?.to_json(),
        "extinction_probability": scale::extinction_probability(measure)?,
    });
    if let Some(p) = config.mutation_prob {
        let ctx = MutationContext::new(*measure, p)?;
        value["clonal"] = scale::growth_constants(&ctx.clonal_measure())?.to_json();
        if scale::regime(measure) == Regime::Supercritical {
            let eta = scale::malthusian(measure)?;
            let horizon = limit_horizon(ctx.clonal_mass(), eta, config.tolerance);
            let clonal = ScaleGrid::clonal(&ctx, horizon, config.step)?;
            value["J"] = json!(limit_j(&clonal, eta, FamilySize::All, f64::INFINITY, config.tolerance)?);
        }
    }
    let mut body = serde_json::to_string_pretty(&value).map_err(|e| Error::config("out", e.to_string()))?;
    body.push('\n');
    emit(&config.out, stdout, &body)
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Scale {
            common,
            stride,
            constants,
        } => scale_command(&RunConfig::resolve(&common)?, stride, constants.as_deref(), stdout)?,
        Command::Spectrum { common, i, a, t } => {
            let config = RunConfig::resolve(&common)?;
            spectrum_command(&config, &parse_range("i", &i)?, a, t, stdout)?
        }
        Command::Mutation { common, i, t } => {
            let config = RunConfig::resolve(&common)?;
            mutation_command(&config, &parse_range("i", &i)?, &parse_list("t", &t)?, stdout)?
        }
        Command::Kappa {
            common,
            i,
            a_min,
            a_max,
            points,
        } => kappa_command(&RunConfig::resolve(&common)?, i, a_min, a_max, points, stdout)?,
        Command::Simulate { common, registry } => {
            simulate_command(&RunConfig::resolve(&common)?, registry.as_deref(), stdout)?
        }
        Command::Validate { common, suite } => {
            // suites fix their own models; a measure is optional here
            let config = match RunConfig::resolve(&common) {
                Ok(c) => c,
                Err(Error::InvalidConfig { key, .. }) if key == "measure" => {
                    let mut with_default = common.clone();
                    with_default.family.get_or_insert_with(|| "pure_birth".into());
                    with_default.b.get_or_insert(1.0);
                    RunConfig::resolve(&with_default)?
                }
                Err(e) => return Err(e),
            };
            if !validate_command(&config, &suite, stdout)? {
                return Ok(EXIT_VALIDATION_FAILED);
            }
        }
        Command::Limits { common } => limits_command(&RunConfig::resolve(&common)?, stdout)?,
    }
    Ok(EXIT_OK)
}

/// Parse `args` (program name first), run the subcommand and return the exit status.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_CONFIG
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_number(1.0), "1");
        assert_eq!(format_number(4.43656365691809), "4.43656366");
        assert_eq!(format_number(0.001), "0.001");
        assert_eq!(format_number(123456789.4), "123456789");
        assert_eq!(format_number(1.5e-7), "1.5e-07");
        assert_eq!(format_number(2.5e12), "2.5e+12");
        assert_eq!(format_number(-0.25), "-0.25");
        assert_eq!(format_number(f64::INFINITY), "inf");
        assert_eq!(format_number(0.0), "0");
    }

    #[test]
    fn ranges_and_lists() {
        assert_eq!(parse_range("i", "1..3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_range("i", "4").unwrap(), vec![4]);
        assert_eq!(parse_range("i", "1,5").unwrap(), vec![1, 5]);
        assert!(parse_range("i", "3..1").is_err());
        assert!(parse_list::<f64>("t", "1,x").is_err());
    }

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("splitting-tree").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn precedence_flags_over_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(
            &path,
            r#"{"measure": {"family": "exponential", "d": 1.0, "b": 2.0}, "horizon": 3.0, "seed": 7}"#,
        )
        .unwrap();
        let common = CommonArgs {
            config: Some(path.clone()),
            b: Some(3.0),
            horizon: Some(1.5),
            ..CommonArgs::default()
        };
        let c = RunConfig::resolve(&common).unwrap();
        assert_eq!(c.measure, LifespanMeasure::exponential(1.0, 3.0).unwrap());
        assert_eq!(c.horizon, 1.5);
        assert_eq!(c.seed, 7);
        assert_eq!(c.step, 1e-3);
        assert_eq!(c.replicates, 10_000);
        assert_eq!(c.cap, 10_000_000);
        assert_eq!(c.tolerance, 1e-8);

        std::fs::write(&path, r#"{"measure": {"family": "exponential", "b": 2.0}}"#).unwrap();
        let common = CommonArgs {
            config: Some(path),
            ..CommonArgs::default()
        };
        match RunConfig::resolve(&common) {
            Err(Error::InvalidConfig { key, .. }) => assert_eq!(key, "d"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_errors_exit_with_two() {
        let (code, _, err) = run_capture(&[
            "spectrum",
            "--family",
            "exponential",
            "--d",
            "1",
            "--b",
            "2",
            "--p",
            "0.25",
            "--i",
            "1",
            "--a",
            "1",
            "--t",
            "0.5",
        ]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.contains("0 ≤ a ≤ t"), "{err}");
        let (code, _, err) = run_capture(&["scale", "--family", "exponential", "--b", "2"]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.contains("`d`"), "{err}");
        let (code, _, _) = run_capture(&["frobnicate"]);
        assert_eq!(code, EXIT_CONFIG);
        let (code, out, _) = run_capture(&["scale", "--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("Wprime"));
    }
}
