//! LDPC decoding problems: code construction, decoding graphs for a binary
//! symmetric channel, decoding with any engine, and bit-error-rate
//! experiments.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bethe::{bp_run, BpOptions};
use crate::dd::{dd_run, DdOptions, RegionSolver};
use crate::error::{Error, Result};
use crate::format::format_f64;
use crate::graph::{FactorGraph, GraphSpec};
use crate::oracle::Oracle;
use crate::regions::{build_decomposition, regional_bp_run};
use crate::solvers::StreamKey;

const RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityCheckCode {
    pub n: usize,
    /// Bit indices of each check, ascending.
    pub checks: Vec<Vec<usize>>,
    /// `(dv, dc, seed)` when generated.
    pub generator: Option<(usize, usize, u64)>,
}

impl ParityCheckCode {
    pub fn new(n: usize, checks: Vec<Vec<usize>>) -> Result<Self> {
        for (i, c) in checks.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::Code(format!("check {} is empty", i + 1)));
            }
            if c.iter().any(|&b| b >= n) {
                return Err(Error::Code(format!("check {} refers to a bit outside 0..{n}", i + 1)));
            }
            let mut sorted = c.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != c.len() {
                return Err(Error::Code(format!("check {} repeats a bit", i + 1)));
            }
        }
        let checks = checks
            .into_iter()
            .map(|mut c| {
                c.sort_unstable();
                c
            })
            .collect();
        Ok(Self {
            n,
            checks,
            generator: None,
        })
    }

    /// Three bits under a single parity check.
    pub fn p3() -> Self {
        Self::new(3, vec![vec![0, 1, 2]]).expect("valid")
    }

    /// True if every check has even parity on `bits`.
    pub fn syndrome_ok(&self, bits: &[u8]) -> bool {
        self.checks
            .iter()
            .all(|c| c.iter().map(|&b| bits[b] as usize).sum::<usize>() % 2 == 0)
    }
}

/// Configuration-style construction of a `(dv, dc)`-regular code: every bit
/// in exactly `dv` checks, every check over `dc` distinct bits. Checks are
/// filled one at a time, forcing in bits whose remaining degree equals the
/// number of checks left; the whole construction is retried on a dead end.
pub fn generate_ldpc(n: usize, dv: usize, dc: usize, seed: u64) -> Result<ParityCheckCode> {
    if n == 0 || dv == 0 || dc == 0 {
        return Err(Error::Code("n, dv and dc must be positive".into()));
    }
    if (n * dv) % dc != 0 {
        return Err(Error::Code(format!("n*dv = {} is not divisible by dc = {dc}", n * dv)));
    }
    if dc > n {
        return Err(Error::Code(format!("dc = {dc} exceeds n = {n}")));
    }
    let m = n * dv / dc;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'attempt: for _ in 0..RETRIES {
        let mut remaining = vec![dv; n];
        let mut checks = Vec::with_capacity(m);
        for i in 0..m {
            let left = m - i;
            if remaining.iter().any(|&r| r > left) {
                continue 'attempt;
            }
            let mut chosen: Vec<usize> = (0..n).filter(|&b| remaining[b] == left).collect();
            if chosen.len() > dc {
                continue 'attempt;
            }
            let mut pool: Vec<usize> = (0..n)
                .filter(|&b| remaining[b] > 0 && remaining[b] < left)
                .collect();
            while chosen.len() < dc {
                if pool.is_empty() {
                    continue 'attempt;
                }
                let &pick = pool
                    .choose_weighted(&mut rng, |&b| remaining[b] as f64)
                    .expect("positive weights");
                pool.retain(|&b| b != pick);
                chosen.push(pick);
            }
            for &b in &chosen {
                remaining[b] -= 1;
            }
            chosen.sort_unstable();
            checks.push(chosen);
        }
        let mut code = ParityCheckCode::new(n, checks)?;
        code.generator = Some((dv, dc, seed));
        return Ok(code);
    }
    Err(Error::Code(format!("no ({dv},{dc})-regular code found after {RETRIES} attempts")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelModel {
    /// Binary symmetric channel flipping each bit with probability `p`.
    Bsc { p: f64 },
}

impl ChannelModel {
    pub fn bsc(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::input(format!("BSC flip probability {p} must lie in (0, 0.5)")));
        }
        Ok(ChannelModel::Bsc { p })
    }

    /// `[-ln P(r | 0), -ln P(r | 1)]`.
    pub fn prior(&self, received: u8) -> [f64; 2] {
        match *self {
            ChannelModel::Bsc { p } => {
                let (keep, flip) = (-(1.0 - p).ln(), -p.ln());
                if received == 0 {
                    [keep, flip]
                } else {
                    [flip, keep]
                }
            }
        }
    }

    pub fn transmit(&self, codeword: &[u8], rng: &mut impl Rng) -> Vec<u8> {
        match *self {
            ChannelModel::Bsc { p } => codeword.iter().map(|&b| b ^ rng.gen_bool(p) as u8).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintMode {
    /// Odd parity forbidden (`+inf` energy).
    Hard,
    /// Odd parity costs `penalty · kT`.
    Soft { penalty: f64 },
}

impl ConstraintMode {
    pub const DEFAULT_PENALTY: f64 = 8.0;

    pub fn soft() -> Self {
        ConstraintMode::Soft {
            penalty: Self::DEFAULT_PENALTY,
        }
    }
}

pub fn bit_id(b: usize) -> String {
    format!("x{}", b + 1)
}

pub fn check_id(c: usize) -> String {
    format!("c{}", c + 1)
}

/// One binary variable `x{b+1}` per bit with channel priors, one factor
/// `c{i+1}` per check: energy 0 on even parity, `+inf` or the penalty on odd.
pub fn build_decoding_graph(
    code: &ParityCheckCode,
    channel: &ChannelModel,
    received: &[u8],
    mode: ConstraintMode,
) -> Result<FactorGraph> {
    if received.len() != code.n {
        return Err(Error::input(format!(
            "received word has {} bits, code has {}",
            received.len(),
            code.n
        )));
    }
    if received.iter().any(|&b| b > 1) {
        return Err(Error::input("received bits must be 0 or 1"));
    }
    let odd = match mode {
        ConstraintMode::Hard => f64::INFINITY,
        ConstraintMode::Soft { penalty } => {
            if !(penalty > 0.0 && penalty.is_finite()) {
                return Err(Error::input("soft-constraint penalty must be positive and finite"));
            }
            penalty
        }
    };
    let mut spec = GraphSpec::new();
    for (b, &r) in received.iter().enumerate() {
        spec = spec.variable(bit_id(b), 2).prior(bit_id(b), channel.prior(r).to_vec());
    }
    for (i, c) in code.checks.iter().enumerate() {
        let energies = (0..1usize << c.len())
            .map(|idx| if idx.count_ones() % 2 == 0 { 0.0 } else { odd })
            .collect();
        spec = spec.factor(check_id(i), c.iter().map(|&b| bit_id(b)), energies);
    }
    spec.build()
}

/// Contiguous blocks of `block_size` checks, in code order, as regions.
pub fn block_partition(code: &ParityCheckCode, block_size: usize) -> Result<BTreeMap<String, Vec<String>>> {
    if block_size == 0 {
        return Err(Error::input("block size must be positive"));
    }
    let blocks = code.checks.len().div_ceil(block_size);
    let width = blocks.to_string().len();
    Ok((0..code.checks.len())
        .collect::<Vec<_>>()
        .chunks(block_size)
        .enumerate()
        .map(|(k, chunk)| (format!("B{k:0width$}"), chunk.iter().map(|&i| check_id(i)).collect()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecodeMethod {
    Exact,
    Bp,
    RegionalBp,
    Dd,
}

impl DecodeMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DecodeMethod::Exact => "exact",
            DecodeMethod::Bp => "bp",
            DecodeMethod::RegionalBp => "regional-bp",
            DecodeMethod::Dd => "dd",
        }
    }
}

impl FromStr for DecodeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(DecodeMethod::Exact),
            "bp" => Ok(DecodeMethod::Bp),
            "regional-bp" => Ok(DecodeMethod::RegionalBp),
            "dd" => Ok(DecodeMethod::Dd),
            _ => Err(Error::input(format!(
                "unknown method {s:?} (expected exact, bp, regional-bp or dd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub bp: BpOptions,
    pub dd: DdOptions,
    /// Checks per region for regional BP and DD.
    pub block_size: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            bp: BpOptions::default(),
            dd: DdOptions::default(),
            block_size: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Hard decision: 1 iff `P(x=1) > P(x=0)`.
    pub bits: Vec<u8>,
    /// `P(x_b = 1)` per bit.
    pub marginals: Vec<f64>,
    pub syndrome_ok: bool,
    pub converged: bool,
    pub iterations: usize,
}

pub fn decode(code: &ParityCheckCode, graph: &FactorGraph, method: DecodeMethod, opts: &DecodeOptions) -> Result<DecodeResult> {
    let (beliefs, converged, iterations) = match method {
        DecodeMethod::Exact => (Oracle::default().variable_marginals(graph)?, true, 0),
        DecodeMethod::Bp => {
            let r = bp_run(graph, &opts.bp)?.result;
            (r.beliefs, r.status.is_converged(), r.iterations)
        }
        DecodeMethod::RegionalBp => {
            let d = build_decomposition(graph, &block_partition(code, opts.block_size)?)?;
            let r = regional_bp_run(graph, &d, &opts.bp)?.result;
            (r.beliefs, r.status.is_converged(), r.iterations)
        }
        DecodeMethod::Dd => {
            let d = build_decomposition(graph, &block_partition(code, opts.block_size)?)?;
            let r = dd_run(graph, &d, &opts.dd)?.result;
            (r.beliefs, r.status.is_converged(), r.iterations)
        }
    };
    let marginals: Vec<f64> = (0..code.n)
        .map(|b| {
            let j = graph.variable_index(&bit_id(b)).expect("bit variable");
            beliefs[j][1]
        })
        .collect();
    let bits: Vec<u8> = (0..code.n)
        .map(|b| {
            let j = graph.variable_index(&bit_id(b)).expect("bit variable");
            (beliefs[j][1] > beliefs[j][0]) as u8
        })
        .collect();
    Ok(DecodeResult {
        syndrome_ok: code.syndrome_ok(&bits),
        bits,
        marginals,
        converged,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerExperiment {
    pub code: ParityCheckCode,
    /// BSC flip probabilities, one block of rows each.
    pub flip_probabilities: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<DecodeMethod>,
    pub constraint: ConstraintMode,
    pub decode: DecodeOptions,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerRow {
    pub method: DecodeMethod,
    pub p: f64,
    pub trials: usize,
    pub bit_errors: usize,
    pub frame_errors: usize,
    pub avg_iters: f64,
    pub converged_frac: f64,
    /// Decodes that ended in an error; each counted as a frame error with
    /// the received word as the decision.
    pub failures: usize,
    /// Bits flipped by the channel over all trials.
    pub channel_flips: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerReport {
    pub n: usize,
    pub rows: Vec<BerRow>,
}

impl BerReport {
    pub const HEADER: [&'static str; 7] = [
        "method",
        "p",
        "trials",
        "bit_errors",
        "frame_errors",
        "avg_iters",
        "converged_frac",
    ];

    /// Bit error rate of a row: bit errors over `trials · n`.
    pub fn bit_error_rate(&self, row: &BerRow) -> f64 {
        row.bit_errors as f64 / (row.trials * self.n) as f64
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::input(format!("CSV output failed: {e}"));
        w.write_record(Self::HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.method.as_str().to_string(),
                format_f64(r.p),
                r.trials.to_string(),
                r.bit_errors.to_string(),
                r.frame_errors.to_string(),
                format_f64(r.avg_iters),
                format_f64(r.converged_frac),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::input(format!("CSV output failed: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV of ASCII fields"))
    }
}

struct TrialOutcome {
    flips: usize,
    /// Per method: `(bit errors, frame error, iterations, converged, failed)`.
    per_method: Vec<(usize, bool, usize, bool, bool)>,
}

/// Monte-Carlo decoding of the all-zeros codeword. Each trial draws its
/// noise from a stream keyed by `(seed, p index, trial)`, so results do not
/// depend on how trials are scheduled across threads.
pub fn ber_experiment(exp: &BerExperiment) -> Result<BerReport> {
    if exp.trials == 0 {
        return Err(Error::input("trials must be positive"));
    }
    if exp.methods.is_empty() {
        return Err(Error::input("at least one method is required"));
    }
    let channels = exp
        .flip_probabilities
        .iter()
        .map(|&p| ChannelModel::bsc(p))
        .collect::<Result<Vec<_>>>()?;
    if exp.methods.contains(&DecodeMethod::Dd)
        && matches!(exp.decode.dd.solver, RegionSolver::Gibbs(_))
        && exp.constraint == ConstraintMode::Hard
    {
        return Err(Error::input(
            "the Gibbs region solver needs soft parity constraints (use soft mode with a finite penalty)",
        ));
    }
    let zeros = vec![0u8; exp.code.n];
    let mut rows = Vec::new();
    for (pi, (channel, &p)) in channels.iter().zip(&exp.flip_probabilities).enumerate() {
        let outcomes: Vec<Result<TrialOutcome>> = (0..exp.trials)
            .into_par_iter()
            .map(|t| {
                let key = StreamKey::new(exp.seed).region("channel").outer(pi as u64).inner(t as u64);
                let received = channel.transmit(&zeros, &mut key.rng());
                let flips = received.iter().filter(|&&b| b == 1).count();
                let graph = build_decoding_graph(&exp.code, channel, &received, exp.constraint)?;
                let mut opts = exp.decode;
                if let RegionSolver::Gibbs(mut g) = opts.dd.solver {
                    g.sampler.seed = key.region("sampler").rng().gen();
                    opts.dd.solver = RegionSolver::Gibbs(g);
                }
                let per_method = exp
                    .methods
                    .iter()
                    .map(|&m| match decode(&exp.code, &graph, m, &opts) {
                        Ok(r) => {
                            let errs = r.bits.iter().filter(|&&b| b == 1).count();
                            (errs, errs > 0, r.iterations, r.converged, false)
                        }
                        Err(_) => (flips, true, 0, false, true),
                    })
                    .collect();
                Ok(TrialOutcome { flips, per_method })
            })
            .collect();
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
        let channel_flips: usize = outcomes.iter().map(|o| o.flips).sum();
        for (k, &method) in exp.methods.iter().enumerate() {
            let mut row = BerRow {
                method,
                p,
                trials: exp.trials,
                bit_errors: 0,
                frame_errors: 0,
                avg_iters: 0.0,
                converged_frac: 0.0,
                failures: 0,
                channel_flips,
            };
            let mut iters = 0usize;
            let mut converged = 0usize;
            for o in &outcomes {
                let (errs, frame, it, conv, failed) = o.per_method[k];
                row.bit_errors += errs;
                row.frame_errors += frame as usize;
                iters += it;
                converged += conv as usize;
                row.failures += failed as usize;
            }
            row.avg_iters = iters as f64 / exp.trials as f64;
            row.converged_frac = converged as f64 / exp.trials as f64;
            rows.push(row);
        }
    }
    Ok(BerReport { n: exp.code.n, rows })
}
