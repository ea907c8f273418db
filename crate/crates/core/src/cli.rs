//! Experiment runner: argument parsing, dispatch, and run persistence.
//!
//! Every run writes its outputs into a fresh timestamped directory under the
//! output root, followed by `manifest.json` (config snapshot, version, wall
//! time, thread count, sha256 of every output). Output bodies never contain
//! timestamps, so reruns with the same arguments are byte-identical.
//!
//! Exit codes: 0 success, 2 when a checked hypothesis or verification came
//! out negative, 1 on runtime errors, 64 on bad usage.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::Ratio;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::addcomb::{self, ResidueSet};
use crate::approxhom::{self, Branch, FiniteGroupTable};
use crate::commutator::{self, CongruenceBox, GluingConfig};
use crate::error::{Error, Result};
use crate::factored::FactoredModulus;
use crate::gens;
use crate::growth::{self, GroupSet};
use crate::rng;
use crate::sl2::{IntPair, LieVector};
use crate::spectral::{self, Lambda2Options, Method};
use crate::walks::{self, EventSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "SL2LAB_OUT";
const DEFAULT_OUT_ROOT: &str = "sl2lab-runs";

#[derive(Debug, Parser, Serialize)]
#[command(name = "sl2lab", version, about = "Expansion, growth and congruence experiments in SL2(Z/q) x SL2(Z/q)")]
pub struct Cli {
    /// Output root; a timestamped run directory is created inside it.
    #[arg(long, global = true, env = OUT_ROOT_ENV)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Accept parameters outside their documented ranges.
    #[arg(long, global = true)]
    pub force: bool,
    /// Print results without writing a run directory.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Second eigenvalue and Cheeger bounds of pi_{q,q}(<S>).
    Spectral(SpectralArgs),
    /// Tripling and bounded generation for a set of pairs.
    Growth(GrowthArgs),
    /// Walk mass on algebraic events.
    Nonconc(NonconcArgs),
    /// Sum-product covering trials on random residue sets.
    Addcomb(AddcombArgs),
    /// Approximate-homomorphism dichotomy.
    Approxhom(ApproxhomArgs),
    /// Modulus gluing experiment.
    Glue(GlueArgs),
    /// Exhaustive or randomised checks of the congruence lemmas.
    LemmaCheck(LemmaArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Auto,
    Power,
    Lanczos,
    Dense,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectralArgs {
    /// Moduli, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub q: Vec<u64>,
    /// Generator file (symmetric JSON list of matrix pairs); default is the
    /// built-in Zariski-dense set.
    #[arg(long)]
    pub gens: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = spectral::DEFAULT_GROUP_CAP)]
    pub cap: usize,
    /// Fill the seconds column (makes the CSV run dependent).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GrowthArgs {
    /// Set file (JSON list of matrix pairs, reduced to (q1, q2)); default is
    /// the built-in Zariski-dense set.
    #[arg(long)]
    pub set: Option<PathBuf>,
    #[arg(long)]
    pub q1: u64,
    #[arg(long)]
    pub q2: u64,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = growth::DEFAULT_K_MAX)]
    pub kmax: usize,
    /// Powers tracked in the trajectory.
    #[arg(long, default_value_t = 3)]
    pub steps: usize,
    #[arg(long, default_value_t = growth::DEFAULT_SET_CAP)]
    pub cap: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct NonconcArgs {
    /// Event: e1[:side], e2[:side], w:n[:side], linear:c1,..,c8:n,
    /// trace:x1;x2;y1;y2 or integral:c1,..,c8:n.
    #[arg(long)]
    pub event: String,
    /// Quotient moduli, comma separated (ignored for integral events).
    #[arg(long = "Q", alias = "q", value_delimiter = ',')]
    pub big_q: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub lmin: u32,
    #[arg(long)]
    pub lmax: u32,
    /// Monte-Carlo samples per length (integral events).
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub gens: Option<PathBuf>,
    #[arg(long, default_value_t = spectral::DEFAULT_GROUP_CAP)]
    pub cap: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct AddcombArgs {
    /// Modulus for subsets of Z/q.
    #[arg(long, conflicts_with_all = ["q1", "q2"])]
    pub q: Option<u64>,
    /// Moduli for subsets of Z/q1 x Z/q2.
    #[arg(long, requires = "q2")]
    pub q1: Option<u64>,
    #[arg(long, requires = "q1")]
    pub q2: Option<u64>,
    /// Size exponent: each random set has floor(N^density) + 1 elements,
    /// N the ambient size.
    #[arg(long, default_value_t = 0.8)]
    pub density: f64,
    #[arg(long, default_value_t = 24)]
    pub folds: usize,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hypothesis slack (default 1 - density).
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ApproxhomArgs {
    /// Domain group table (JSON {"order", "table"}); or use --cyclic.
    #[arg(long, requires = "g2", conflicts_with = "cyclic")]
    pub g1: Option<PathBuf>,
    #[arg(long, requires = "g1")]
    pub g2: Option<PathBuf>,
    /// Cyclic groups n,m.
    #[arg(long, value_delimiter = ',')]
    pub cyclic: Vec<usize>,
    /// Map file: JSON array of image indices.
    #[arg(long, conflicts_with_all = ["hom", "random"])]
    pub map: Option<PathBuf>,
    /// Use x -> k x (cyclic groups only), corrupted on --corrupt points.
    #[arg(long)]
    pub hom: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub corrupt: usize,
    /// Use a uniformly random map.
    #[arg(long)]
    pub random: bool,
    /// Epsilon as a fraction "a/b".
    #[arg(long, default_value = "1/1700")]
    pub epsilon: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct GlueArgs {
    #[arg(long, default_value_t = 1)]
    pub q1: u64,
    #[arg(long)]
    pub q2: u64,
    #[arg(long)]
    pub q3: u64,
    #[arg(long, default_value_t = 0.3)]
    pub theta: f64,
    /// B from a set file at moduli (q1 q3, q2).
    #[arg(long, conflicts_with = "diagonal")]
    pub set_b: Option<PathBuf>,
    /// B = {(g, g)} over SL2(Z/q3) (needs q1 = 1, q2 = q3).
    #[arg(long)]
    pub diagonal: bool,
    /// A from a set file at moduli (q1 q3, q2).
    #[arg(long, conflicts_with = "zariski_a")]
    pub set_a: Option<PathBuf>,
    /// A = the built-in Zariski-dense generators reduced to (q1 q3, q2).
    #[arg(long)]
    pub zariski_a: bool,
    #[arg(long, default_value_t = 6)]
    pub kmax: usize,
    #[arg(long, default_value_t = growth::DEFAULT_SET_CAP)]
    pub cap: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum LemmaKind {
    /// Commutator congruence over every x, y = 1 mod p at modulus p^depth.
    Commutator,
    /// Bracket span certificates for random pairs in sl2(Z/q).
    BracketSpan,
    /// Exhaustive amplification over every window with p^(m2+n2) <= max.
    Amplify,
}

#[derive(Debug, Args, Serialize)]
pub struct LemmaArgs {
    #[arg(long, value_enum)]
    pub lemma: LemmaKind,
    #[arg(long)]
    pub p: Option<u64>,
    #[arg(long)]
    pub depth: Option<u32>,
    #[arg(long)]
    pub q: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 128)]
    pub max_modulus: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Files produced by a run plus its verdict.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<(String, Vec<u8>)>,
    pub hypothesis_failed: bool,
    pub summary: String,
}

impl Outcome {
    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let v = decimal_strings(serde_json::to_value(v)?);
        let mut s = serde_json::to_string_pretty(&v)?;
        s.push('\n');
        self.files.push((name.to_string(), s.into_bytes()));
        Ok(())
    }

    fn csv(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body.into_bytes()));
    }
}

/// Integers become decimal strings so no reader loses precision.
pub fn decimal_strings(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_u64() || n.is_i64() => Value::String(n.to_string()),
        Value::Array(a) => Value::Array(a.into_iter().map(decimal_strings).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, decimal_strings(v))).collect()),
        other => other,
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Invalid(format!("usage: {}", msg.into()))
}

fn is_usage(e: &Error) -> bool {
    matches!(e, Error::Invalid(m) if m.starts_with("usage: "))
}

fn existing(p: &Option<PathBuf>) -> Result<()> {
    match p {
        Some(p) if !p.is_file() => Err(usage(format!("file not found: {}", p.display()))),
        _ => Ok(()),
    }
}

fn generators(path: &Option<PathBuf>) -> Result<Vec<IntPair>> {
    match path {
        Some(p) => gens::load_generators(p),
        None => Ok(gens::zariski_dense_pairs()),
    }
}

fn reduced_set(path: &Option<PathBuf>, q1: u64, q2: u64) -> Result<GroupSet> {
    let pairs = match path {
        Some(p) => gens::load_pairs(p)?,
        None => gens::zariski_dense_pairs(),
    };
    let elems = pairs.iter().map(|g| g.reduce(q1, q2)).collect::<Result<Vec<_>>>()?;
    GroupSet::new(q1, q2, elems)
}

fn parse_ratio(s: &str) -> Result<Ratio<u64>> {
    let bad = || usage(format!("expected a fraction a/b, got {s:?}"));
    let (a, b) = s.split_once('/').unwrap_or((s, "1"));
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if b == 0 {
        return Err(bad());
    }
    Ok(Ratio::new(a, b))
}

fn fmt_opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn fmt_f(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.12}")
    } else {
        String::new()
    }
}

/// Run the selected subcommand and collect its outputs.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Spectral(a) => run_spectral(a),
        Command::Growth(a) => run_growth(a),
        Command::Nonconc(a) => run_nonconc(a),
        Command::Addcomb(a) => run_addcomb(a, cli.force),
        Command::Approxhom(a) => run_approxhom(a, cli.force),
        Command::Glue(a) => run_glue(a),
        Command::LemmaCheck(a) => run_lemma(a, cli.force),
    }
}

fn run_spectral(a: &SpectralArgs) -> Result<Outcome> {
    existing(&a.gens)?;
    let gens = generators(&a.gens)?;
    let opts = Lambda2Options {
        tol: a.tol,
        seed: a.seed,
        method: match a.method {
            MethodArg::Auto => Method::Auto,
            MethodArg::Power => Method::Power,
            MethodArg::Lanczos => Method::Lanczos,
            MethodArg::Dense => Method::Dense,
        },
        ..Default::default()
    };
    let mut rows = spectral::gap_sweep(&gens, &a.q, &opts, a.cap)?;
    if !a.timing {
        rows.iter_mut().for_each(|r| r.seconds = None);
    }
    let mut out = Outcome::default();
    out.csv("spectral.csv", spectral::gap_rows_to_csv(&rows, a.timing));
    out.json("spectral.json", &rows)?;
    out.summary = rows
        .iter()
        .map(|r| format!("q={} N={} lambda2={:.6}", r.q, r.n, r.lambda2))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(out)
}

fn run_growth(a: &GrowthArgs) -> Result<Outcome> {
    existing(&a.set)?;
    let set = reduced_set(&a.set, a.q1, a.q2)?;
    let rep = growth::tripling(&set, a.delta, a.steps.max(3), a.cap)?;
    let bg = growth::bounded_generation_search(&set, a.kmax, a.delta, a.cap)?;
    let mut out = Outcome::default();
    out.csv("growth.csv", format!("{}\n{}\n", growth::GROWTH_CSV_HEADER, rep.csv_row()));
    out.json("growth.json", &json!({ "tripling": rep, "bounded_generation": bg }))?;
    out.hypothesis_failed = rep.grows == Some(false) || bg.hypothesis_holds == Some(false);
    out.summary = format!(
        "|A|={} |AAA|={} exponent={:.4} bounded generation={:?}",
        rep.size, rep.triple_size, rep.exponent, bg.found
    );
    Ok(out)
}

fn run_nonconc(a: &NonconcArgs) -> Result<Outcome> {
    existing(&a.gens)?;
    if a.lmin == 0 || a.lmin > a.lmax {
        return Err(usage("need 1 <= lmin <= lmax"));
    }
    let gens = generators(&a.gens)?;
    let mut out = Outcome::default();
    // integral events ignore Q; parse against a dummy modulus
    let probe = EventSpec::parse(&a.event, &FactoredModulus::new(a.big_q.first().copied().unwrap_or(2).max(2))?)?;
    if !probe.is_modular() {
        let ls: Vec<u32> = (a.lmin..=a.lmax).collect();
        let t = walks::archimedean_decay(&gens, &probe, &ls, a.samples, a.seed)?;
        let mut csv = String::from("l,hits,samples,estimate,ci_low,ci_high\n");
        for r in &t.rows {
            writeln!(csv, "{},{},{},{},{},{}", r.l, r.hits, r.samples, fmt_f(r.estimate), fmt_f(r.ci_low), fmt_f(r.ci_high)).unwrap();
        }
        out.csv("nonconc.csv", csv);
        out.json("nonconc.json", &t)?;
        out.summary = format!("rate={:?}", t.rate);
        return Ok(out);
    }
    if a.big_q.is_empty() {
        return Err(usage("modular events need --Q"));
    }
    let mut csv = String::from("Q,l,mass,uniform_mass\n");
    let mut tables = Vec::new();
    for &q in &a.big_q {
        let qf = FactoredModulus::new(q)?;
        let ev = EventSpec::parse(&a.event, &qf)?;
        let t = walks::decay_profile(&gens, &ev, &qf, a.lmin..=a.lmax, a.cap)?;
        for r in &t.rows {
            writeln!(csv, "{},{},{},{}", q, r.l, fmt_f(r.mass), fmt_f(t.uniform_mass)).unwrap();
        }
        writeln!(out.summary, "Q={} c_hat={:?}", q, t.c_hat).unwrap();
        tables.push(t);
    }
    out.csv("nonconc.csv", csv);
    out.json("nonconc.json", &tables)?;
    Ok(out)
}

fn random_set(q1: u64, q2: u64, size: usize, r: &mut impl Rng) -> Result<ResidueSet> {
    let n = (q1 * q2) as usize;
    let idx = rand::seq::index::sample(r, n, size.min(n));
    let mut v: Vec<usize> = idx.into_vec();
    v.sort_unstable();
    ResidueSet::from_pairs(q1, q2, v.into_iter().map(|i| (i as u64 / q2, i as u64 % q2)))
}

fn run_addcomb(a: &AddcombArgs, force: bool) -> Result<Outcome> {
    let (q1, q2, single) = match (a.q, a.q1, a.q2) {
        (Some(q), None, None) => (q, 1, true),
        (None, Some(x), Some(y)) => (x, y, false),
        _ => return Err(usage("give --q or both --q1 and --q2")),
    };
    if !(a.density > 0.0 && a.density <= 1.0) && !force {
        return Err(usage("density must lie in (0, 1]"));
    }
    let n = q1.checked_mul(q2).filter(|&n| n >= 2 && n <= addcomb::BITSET_MAX).ok_or_else(|| usage("ambient size must lie in [2, 65536]"))?;
    let gamma = a.gamma.unwrap_or(1.0 - a.density);
    let size = ((n as f64).powf(a.density).floor() as usize + 1).min(n as usize);
    let mut csv = String::from("trial,q1,q2,size_a,size_b,q1_prime,q2_prime,hypothesis_holds,verified,rescan_ok\n");
    let mut rows = Vec::new();
    let mut failed = false;
    for t in 0..a.trials {
        let mut r = rng::stream(a.seed, t as u64);
        let sa = random_set(q1, q2, size, &mut r)?;
        let sb = random_set(q1, q2, size, &mut r)?;
        let row = if single {
            let c = addcomb::sum_product_covering(&sa, &sb, a.folds, Some(gamma))?;
            failed |= !c.rescan_ok || (c.hypothesis_holds == Some(true) && c.verified == Some(false));
            writeln!(csv, "{t},{q1},1,{},{},{},1,{},{},{}", sa.len(), sb.len(), c.q_prime, fmt_opt(c.hypothesis_holds), fmt_opt(c.verified), c.rescan_ok).unwrap();
            serde_json::to_value(c)?
        } else {
            let c = addcomb::pair_covering(&sa, &sb, a.folds, Some(gamma))?;
            failed |= !c.rescan_ok || (c.hypothesis_holds == Some(true) && c.verified_10 == Some(false));
            writeln!(csv, "{t},{q1},{q2},{},{},{},{},{},{},{}", sa.len(), sb.len(), c.q1_prime, c.q2_prime, fmt_opt(c.hypothesis_holds), fmt_opt(c.verified_10), c.rescan_ok).unwrap();
            serde_json::to_value(c)?
        };
        rows.push(row);
    }
    let mut out = Outcome::default();
    out.csv("addcomb.csv", csv);
    out.json("addcomb.json", &rows)?;
    out.hypothesis_failed = failed;
    out.summary = format!("{} trials, set size {}, failures: {}", a.trials, size, failed);
    Ok(out)
}

fn run_approxhom(a: &ApproxhomArgs, force: bool) -> Result<Outcome> {
    existing(&a.g1)?;
    existing(&a.g2)?;
    existing(&a.map)?;
    let load = |p: &PathBuf| -> Result<FiniteGroupTable> {
        FiniteGroupTable::from_json(&serde_json::from_str(&fs::read_to_string(p)?)?)
    };
    let (g1, g2) = match (&a.g1, &a.g2, a.cyclic.as_slice()) {
        (Some(x), Some(y), []) => (load(x)?, load(y)?),
        (None, None, [n, m]) => (FiniteGroupTable::cyclic(*n)?, FiniteGroupTable::cyclic(*m)?),
        _ => return Err(usage("give --g1/--g2 or --cyclic n,m")),
    };
    let psi: Vec<u32> = if let Some(p) = &a.map {
        serde_json::from_str::<Vec<Value>>(&fs::read_to_string(p)?)?
            .iter()
            .map(|v| match v {
                Value::String(s) => s.parse::<u32>().map_err(|_| Error::invalid(format!("bad index {s:?}"))),
                Value::Number(n) => n.as_u64().map(|x| x as u32).ok_or_else(|| Error::invalid(format!("bad index {n}"))),
                _ => Err(Error::invalid("map entries must be indices")),
            })
            .collect::<Result<_>>()?
    } else if let Some(k) = a.hom {
        if a.cyclic.is_empty() {
            return Err(usage("--hom needs --cyclic"));
        }
        approxhom::corrupted_cyclic_hom(g1.order(), g2.order(), k, a.corrupt, a.seed)
    } else if a.random {
        let mut r = rng::stream(a.seed, 0);
        (0..g1.order()).map(|_| r.gen_range(0..g2.order() as u32)).collect()
    } else {
        return Err(usage("give --map, --hom or --random"));
    };
    let eps = parse_ratio(&a.epsilon)?;
    if !force && !(eps > Ratio::new(0, 1) && eps < Ratio::new(1, 1600)) {
        return Err(usage("epsilon outside (0, 1/1600) needs --force"));
    }
    let res = approxhom::dichotomy(&psi, &g1, &g2, eps, force)?;
    let mut out = Outcome::default();
    out.csv(
        "approxhom.csv",
        format!(
            "order_g1,order_g2,epsilon,agreement,branch,s_size,h_size\n{},{},{},{},{},{},{}\n",
            g1.order(),
            g2.order(),
            res.epsilon,
            res.agreement,
            serde_json::to_value(res.branch)?.as_str().unwrap_or_default(),
            res.s.len(),
            fmt_opt(res.h_size)
        ),
    );
    out.hypothesis_failed = res.branch == Branch::ConstructionFailure;
    out.summary = format!("branch={:?} agreement={}", res.branch, res.agreement);
    out.json("approxhom.json", &res)?;
    Ok(out)
}

fn run_glue(a: &GlueArgs) -> Result<Outcome> {
    existing(&a.set_a)?;
    existing(&a.set_b)?;
    let cfg = GluingConfig {
        k_max: a.kmax,
        cap: a.cap,
        ..GluingConfig::new(a.q1, a.q2, a.q3, a.theta)
    };
    let (m1, m2) = cfg.moduli();
    let b = if a.diagonal {
        if a.q1 != 1 || a.q2 != a.q3 {
            return Err(usage("--diagonal needs q1 = 1 and q2 = q3"));
        }
        commutator::diagonal_set(a.q3, a.cap)?
    } else {
        let p = a.set_b.as_ref().ok_or_else(|| usage("give --set-b or --diagonal"))?;
        reduced_set(&Some(p.clone()), m1, m2)?
    };
    let set_a = if a.zariski_a {
        Some(reduced_set(&None, m1, m2)?)
    } else if a.set_a.is_some() {
        Some(reduced_set(&a.set_a, m1, m2)?)
    } else {
        None
    };
    let rep = commutator::glue_pipeline(set_a.as_ref(), &b, &cfg)?;
    let mut primes = String::from("p,n,depth_modulus,scenario,agreement,half_depth_trivial\n");
    for r in &rep.primes {
        writeln!(primes, "{},{},{},{},{},{}", r.p, r.n, r.depth_modulus, r.scenario, r.agreement, fmt_opt(r.half_depth_trivial)).unwrap();
    }
    let mut cons = String::from("k,ball_size,kernel_size,q3_star,level,box_order,product_size,exponent\n");
    for r in &rep.construction {
        writeln!(cons, "{},{},{},{},{},{},{},{}", r.k, r.ball_size, r.kernel_size, r.q3_star, r.level, r.box_order, r.product_size, fmt_f(r.exponent)).unwrap();
    }
    let mut out = Outcome::default();
    out.csv("glue_primes.csv", primes);
    out.csv("glue_construction.csv", cons);
    out.json("glue.json", &rep)?;
    out.hypothesis_failed = !rep.all_replayed;
    out.summary = format!(
        "case={} q3*={} level={} expansion={} certificates={} replayed={}",
        rep.case,
        rep.achieved_q3_star,
        rep.achieved_level,
        rep.expansion,
        rep.certificates.len(),
        rep.all_replayed
    );
    Ok(out)
}

fn run_lemma(a: &LemmaArgs, force: bool) -> Result<Outcome> {
    let mut out = Outcome::default();
    match a.lemma {
        LemmaKind::Commutator => {
            let p = a.p.ok_or_else(|| usage("--p is required"))?;
            let n = a.depth.ok_or_else(|| usage("--depth is required"))?;
            if !crate::factored::is_prime(p) || n == 0 {
                return Err(usage("--p must be prime and --depth positive"));
            }
            if p.checked_pow(n).map_or(true, |q| q > 81) && !force {
                return Err(usage("moduli above 81 need --force"));
            }
            let r = commutator::commutator_sweep(p, n)?;
            out.csv("lemma.csv", format!("p,modulus,pairs,violations\n{},{},{},{}\n", r.p, r.modulus, r.pairs, r.violations));
            out.hypothesis_failed = r.violations > 0;
            out.summary = format!("commutator sweep mod {}: {} pairs, {} violations", r.modulus, r.pairs, r.violations);
            out.json("lemma.json", &r)?;
        }
        LemmaKind::BracketSpan => {
            let q = a.q.ok_or_else(|| usage("--q is required"))?;
            let mut r = rng::stream(a.seed, 0);
            let (mut certified, mut dependent, mut violations) = (0usize, 0usize, 0usize);
            let mut csv = String::from("trial,v,w,covers,substituted\n");
            for t in 0..a.trials {
                let mut draw = || LieVector::new(q, r.gen_range(0..q as i64), r.gen_range(0..q as i64), r.gen_range(0..q as i64));
                let (v, w) = (draw(), draw());
                match commutator::bracket_span_cover(&v, &w) {
                    Ok(s) => {
                        let ok = s.certificates.iter().all(|c| commutator::check_span_certificate(&v, &w, c).unwrap_or(false));
                        certified += 1;
                        violations += usize::from(!s.covers || !ok);
                        writeln!(csv, "{t},{v},{w},{},{}", s.covers, ok).unwrap();
                    }
                    Err(Error::Dependent { .. }) | Err(Error::Precondition(_)) => dependent += 1,
                    Err(e) => return Err(e),
                }
            }
            out.csv("lemma.csv", csv);
            out.json("lemma.json", &json!({ "q": q, "trials": a.trials, "certified": certified, "skipped": dependent, "violations": violations }))?;
            out.hypothesis_failed = violations > 0;
            out.summary = format!("bracket span mod {q}: {certified} certified, {dependent} skipped, {violations} violations");
        }
        LemmaKind::Amplify => {
            let p = a.p.ok_or_else(|| usage("--p is required"))?;
            if !crate::factored::is_prime(p) {
                return Err(usage("--p must be prime"));
            }
            if a.max_modulus > 128 && !force {
                return Err(usage("--max-modulus above 128 needs --force"));
            }
            let rows = amplify_windows(p, a.max_modulus)?;
            let mut csv = String::from("p,m1,m2,n1,n2,depth,window,canonical_k,symmetric_k,verified\n");
            let mut bad = 0;
            for (amp, ok) in &rows {
                let c = &amp.checks[0];
                bad += usize::from(!ok);
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{}",
                    c.p,
                    c.m1,
                    c.m2,
                    c.n1,
                    c.n2,
                    amp.result.depth.value(),
                    amp.result.window.value(),
                    fmt_opt(c.canonical_k),
                    fmt_opt(c.symmetric_k),
                    ok
                )
                .unwrap();
            }
            out.csv("lemma.csv", csv);
            out.json("lemma.json", &rows.iter().map(|r| &r.0).collect::<Vec<_>>())?;
            out.hypothesis_failed = bad > 0;
            out.summary = format!("amplify at p={p}: {} windows, {bad} unverified", rows.len());
        }
    }
    Ok(out)
}

/// Every admissible window pair at `p` with `p^(m2+n2) <= max`, amplified
/// with exhaustive verification.
pub fn amplify_windows(p: u64, max: u64) -> Result<Vec<(commutator::Amplified, bool)>> {
    let mut rows = Vec::new();
    let fits = |e: u32| p.checked_pow(e).is_some_and(|v| v <= max);
    for m1 in (1..).take_while(|&m| fits(m + 1)) {
        for m2 in m1..=2 * m1 {
            for n1 in (1..).take_while(|&n| fits(m2 + n)) {
                for n2 in n1..=2 * n1 {
                    if !fits(m2 + n2) {
                        break;
                    }
                    let h1 = CongruenceBox::new(FactoredModulus::prime_power(p, m1)?, FactoredModulus::prime_power(p, m2)?)?;
                    let h2 = CongruenceBox::new(FactoredModulus::prime_power(p, n1)?, FactoredModulus::prime_power(p, n2)?)?;
                    let amp = commutator::amplify(&h1, &h2, max)?;
                    let ok = amp.verified == Some(true);
                    rows.push((amp, ok));
                }
            }
        }
    }
    Ok(rows)
}

/// Timestamped run directory `<root>/<stamp>-<subcommand>`, made unique.
fn create_run_dir(root: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = root.join(format!("{stamp}-{name}"));
    let mut dir = base.clone();
    let mut i = 1;
    loop {
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                dir = PathBuf::from(format!("{}-{i}", base.display()));
                i += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Spectral(_) => "spectral",
        Command::Growth(_) => "growth",
        Command::Nonconc(_) => "nonconc",
        Command::Addcomb(_) => "addcomb",
        Command::Approxhom(_) => "approxhom",
        Command::Glue(_) => "glue",
        Command::LemmaCheck(_) => "lemma-check",
    }
}

/// Write outputs, then the manifest via a temporary file and rename.
pub fn persist(cli: &Cli, argv: &[String], outcome: &Outcome, wall: f64, threads: usize) -> Result<PathBuf> {
    let root = cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
    let dir = create_run_dir(&root, subcommand_name(&cli.command))?;
    let mut digests = Vec::new();
    for (name, body) in &outcome.files {
        fs::write(dir.join(name), body)?;
        digests.push(json!({
            "name": name,
            "bytes": body.len().to_string(),
            "sha256": hex::encode(Sha256::digest(body)),
        }));
    }
    let manifest = json!({
        "tool": "sl2lab",
        "version": env!("CARGO_PKG_VERSION"),
        "argv": argv,
        "config": decimal_strings(serde_json::to_value(cli)?),
        "threads": threads.to_string(),
        "finished": chrono::Utc::now().to_rfc3339(),
        "wall_seconds": wall,
        "hypothesis_failed": outcome.hypothesis_failed,
        "files": digests,
    });
    let tmp = dir.join(".manifest.json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::rename(&tmp, dir.join("manifest.json"))?;
    Ok(dir)
}

/// Parse `argv`, run, persist, and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_USAGE;
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let threads = rayon::current_num_threads();
    let t0 = Instant::now();
    let outcome = match execute(&cli) {
        Ok(o) => o,
        Err(e) if is_usage(&e) => {
            eprintln!("error: {}", e.to_string().trim_start_matches("invalid input: "));
            return EXIT_USAGE;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let wall = t0.elapsed().as_secs_f64();
    if !outcome.summary.is_empty() {
        println!("{}", outcome.summary.trim_end());
    }
    if cli.dry_run {
        for (name, body) in &outcome.files {
            if name.ends_with(".csv") {
                print!("{}", String::from_utf8_lossy(body));
            }
        }
    } else {
        let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        match persist(&cli, &args, &outcome, wall, threads) {
            Ok(dir) => println!("run directory: {}", dir.display()),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_ERROR;
            }
        }
    }
    if outcome.hypothesis_failed {
        EXIT_HYPOTHESIS
    } else {
        EXIT_OK
    }
}
