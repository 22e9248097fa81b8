//! Synthetic power/EM leakage.
//!
//! Each window covers two target clock cycles: the target is fetched in the
//! first cycle (while its predecessor executes) and executed in the second
//! (while its successor is fetched). A sample at time `t` (in cycles) is
//!
//! ```text
//! common(t) + inform(t) * (A_g * group(t) + A_i * instr(t))
//!     + bleed * class_part(prev, t + 1)   for t < 1
//!     + bleed * class_part(next, t - 1)   for t >= 1
//!     + N(0, sigma(t)) + (session offset + baseline wander) * span
//! ```
//!
//! where every waveform is a fixed sum of Gaussian bumps drawn from the model
//! seed. The group and instruction shapes of the two channels share a
//! `coupling` fraction of their waveform, so power and EM class means are
//! correlated. Waveforms are continuous in `t`, so the same model can be sampled at
//! any number of points per cycle.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};
use crate::tracekit::{DualTrace, LabelInfo, LabeledDataset, Record, Trace};

/// Instruction groups used for hierarchical classification of the AVR core.
pub const AVR_GROUPS: [&[&str]; 8] = [
    &["ADC", "ADD", "AND", "CP", "CPC", "CPSE", "EOR", "MOV", "OR", "SBC", "SUB", "MOVW"],
    &["ADIW", "ANDI", "CBR", "CPI", "LDI", "ORI", "SBCI", "SBIW", "SBR", "SUBI"],
    &[
        "ASR", "CLR", "COM", "DEC", "INC", "LSL", "LSR", "NEG", "ROL", "ROR", "SER", "SWAP", "TST",
    ],
    &[
        "BRCC", "BRCS", "BREQ", "BRGE", "BRHC", "BRHS", "BRLO", "BRLT", "BRMI", "BRNE", "BRPL",
        "BRSH", "BRTC", "BRTS", "BRVC", "BRVS", "CALL", "JMP", "RCALL", "RJMP",
    ],
    &["LD", "LDD", "LDS"],
    &["LPM", "ELPM"],
    &[
        "CLC", "CLN", "CLS", "CLT", "CLV", "CLZ", "SEC", "SEH", "SEI", "SEN", "SES", "SET", "SEV",
        "SEZ",
    ],
    &["BCLR", "BLD", "BRBC", "BRBS", "BSET", "BST", "CBI", "SBI", "SBIC", "SBIS", "SBRC", "SBRS"],
];

/// Mnemonic to group mapping. Instruction ids are assigned group by group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<String>>", into = "Vec<Vec<String>>")]
pub struct GroupTable {
    names: Vec<String>,
    group_of: Vec<usize>,
    within: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl GroupTable {
    pub fn avr() -> Self {
        Self::from_groups(AVR_GROUPS.iter().map(|g| g.iter().map(|s| s.to_string()).collect()))
            .expect("built-in table is valid")
    }

    pub fn from_groups<I>(groups: I) -> Result<Self>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut t = GroupTable {
            names: vec![],
            group_of: vec![],
            within: vec![],
            groups: vec![],
        };
        for (g, members) in groups.into_iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidArgument(format!("group {} is empty", g + 1)));
            }
            let mut ids = Vec::with_capacity(members.len());
            for (j, name) in members.into_iter().enumerate() {
                if t.names.contains(&name) {
                    return Err(Error::InvalidArgument(format!("`{name}` listed twice")));
                }
                ids.push(t.names.len());
                t.names.push(name);
                t.group_of.push(g);
                t.within.push(j);
            }
            t.groups.push(ids);
        }
        Ok(t)
    }

    pub fn n_instr(&self) -> usize {
        self.names.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn name(&self, instr: usize) -> &str {
        &self.names[instr]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn group_of(&self, instr: usize) -> usize {
        self.group_of[instr]
    }

    /// Position of `instr` inside its group.
    pub fn within_index(&self, instr: usize) -> usize {
        self.within[instr]
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.groups[group]
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn lookup(&self, mnemonic: &str) -> Result<usize> {
        let upper = mnemonic.to_ascii_uppercase();
        self.names
            .iter()
            .position(|n| *n == upper)
            .ok_or_else(|| Error::UnknownInstruction(mnemonic.to_string()))
    }

    pub fn check(&self, instr: usize) -> Result<()> {
        if instr < self.n_instr() {
            Ok(())
        } else {
            Err(Error::UnknownInstruction(format!("#{instr}")))
        }
    }

    pub fn label_infos(&self) -> Vec<LabelInfo> {
        self.names
            .iter()
            .zip(&self.group_of)
            .map(|(name, &group)| LabelInfo {
                name: name.clone(),
                group,
            })
            .collect()
    }
}

impl TryFrom<Vec<Vec<String>>> for GroupTable {
    type Error = Error;
    fn try_from(groups: Vec<Vec<String>>) -> Result<Self> {
        GroupTable::from_groups(groups)
    }
}

impl From<GroupTable> for Vec<Vec<String>> {
    fn from(t: GroupTable) -> Self {
        t.groups
            .iter()
            .map(|g| g.iter().map(|&i| t.names[i].clone()).collect())
            .collect()
    }
}

/// How strongly each channel carries instruction-dependent leakage in the
/// fetch (first) and execute (second) cycle of a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Informativeness {
    pub power: [f64; 2],
    pub em: [f64; 2],
}

impl Informativeness {
    /// Both channels informative everywhere, power stronger while fetching and
    /// EM stronger while executing.
    pub const DEFAULT: Informativeness = Informativeness {
        power: [1.0, 0.6],
        em: [0.6, 1.0],
    };
    /// Disjoint informative halves.
    pub const COMPLEMENTARY: Informativeness = Informativeness {
        power: [1.0, 0.0],
        em: [0.0, 1.0],
    };
    pub const UNIFORM: Informativeness = Informativeness {
        power: [1.0, 1.0],
        em: [1.0, 1.0],
    };
}

/// Generator knobs. Amplitudes and noise levels are in volts with a 1 V full scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakParams {
    pub window: usize,
    pub seed: u64,
    pub noise_sigma: [f64; 2],
    /// DC drift added by every reboot, as a fraction of the channel's
    /// noiseless peak-to-peak span.
    pub offset_spread: [f64; 2],
    /// Standard deviation of a per-window baseline wander, as a fraction of
    /// the channel span.
    pub dc_jitter: [f64; 2],
    pub bleed: f64,
    pub group_amplitude: f64,
    pub instr_amplitude: f64,
    pub bumps_per_cycle: usize,
    pub bump_width: [f64; 2],
    /// Share of the class waveforms common to both channels (0 = independent
    /// channels, 1 = identical shapes).
    pub coupling: f64,
    pub informativeness: Informativeness,
}

impl Default for LeakParams {
    fn default() -> Self {
        LeakParams {
            window: crate::tracekit::DEFAULT_WINDOW,
            seed: 0x5cd,
            noise_sigma: [0.05, 0.05],
            offset_spread: [0.05, 0.05],
            dc_jitter: [0.015, 0.015],
            bleed: 0.25,
            group_amplitude: 0.10,
            instr_amplitude: 0.06,
            bumps_per_cycle: 6,
            bump_width: [0.015, 0.05],
            coupling: 0.5,
            informativeness: Informativeness::DEFAULT,
        }
    }
}

impl LeakParams {
    /// Each channel leads on its own half of the window and carries a
    /// weaker, strongly correlated copy of the class shapes on the other, so
    /// fusing them both widens the informative span and averages noise.
    pub fn complementary() -> Self {
        LeakParams {
            noise_sigma: [0.08, 0.08],
            coupling: 0.9,
            informativeness: Informativeness {
                power: [1.0, 0.8],
                em: [0.8, 1.0],
            },
            ..Default::default()
        }
    }

    pub fn with_points_per_cycle(mut self, ppc: usize) -> Self {
        self.window = 2 * ppc;
        self
    }
}

/// A sum of Gaussian bumps on `[0, 2)` cycles, scaled to unit RMS.
#[derive(Debug, Clone)]
struct Waveform {
    bumps: Vec<(f64, f64, f64)>,
}

impl Waveform {
    fn random(rng: &mut Rng, n: usize, width: [f64; 2]) -> Self {
        let mut bumps: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                let c = rng.random_range(0.0..2.0);
                let s = rng.random_range(width[0]..width[1]);
                let a: f64 = rng.sample(StandardNormal);
                (c, s, a)
            })
            .collect();
        let mut w = Waveform { bumps: bumps.clone() };
        let grid = 2000;
        let ms = (0..grid)
            .map(|i| w.eval(2.0 * (i as f64 + 0.5) / grid as f64).powi(2))
            .sum::<f64>()
            / grid as f64;
        let scale = if ms > 0.0 { ms.sqrt().recip() } else { 0.0 };
        for b in &mut bumps {
            b.2 *= scale;
        }
        w.bumps = bumps;
        w
    }

    fn eval(&self, t: f64) -> f64 {
        self.bumps
            .iter()
            .map(|&(c, s, a)| a * (-(t - c).powi(2) / (2.0 * s * s)).exp())
            .sum()
    }
}

fn weight(halves: [f64; 2], t: f64) -> f64 {
    // smooth step between fetch and execute
    let x = 1.0 / (1.0 + (-(t - 1.0) / 0.02).exp());
    halves[0] * (1.0 - x) + halves[1] * x
}

/// Sample times (in cycles) of a `w`-point window.
pub fn sample_times(w: usize) -> Vec<f64> {
    (0..w).map(|k| 2.0 * (k as f64 + 0.5) / w as f64).collect()
}

/// Group and instruction waveforms of one source.
struct Shapes {
    groups: Vec<Waveform>,
    instrs: Vec<Waveform>,
}

impl Shapes {
    fn random(rng: &mut Rng, table: &GroupTable, n_bumps: usize, width: [f64; 2]) -> Self {
        Shapes {
            groups: (0..table.n_groups())
                .map(|_| Waveform::random(rng, n_bumps, width))
                .collect(),
            instrs: (0..table.n_instr())
                .map(|_| Waveform::random(rng, n_bumps, width))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct ChannelModel {
    common: Vec<f64>,
    /// instruction-dependent part, per instruction
    class_part: Vec<Vec<f64>>,
    /// contribution of an instruction when it precedes the target
    prev_bleed: Vec<Vec<f64>>,
    /// contribution of an instruction when it follows the target
    next_bleed: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    /// peak-to-peak of the noiseless signal over all instructions
    span: f64,
}

/// Sampled leakage model for a fixed group table and window size.
#[derive(Debug, Clone)]
pub struct LeakModel {
    params: LeakParams,
    table: GroupTable,
    channels: [ChannelModel; 2],
}

pub const POWER: usize = 0;
pub const EM: usize = 1;

impl LeakModel {
    pub fn new(params: LeakParams, table: GroupTable) -> Result<Self> {
        if params.window == 0 {
            return Err(Error::config("simulator.window", "must be positive"));
        }
        if params.noise_sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("simulator.noise_sigma", "must be > 0"));
        }
        if params.offset_spread.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::config("simulator.offset_spread", "must be >= 0"));
        }
        if params.dc_jitter.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::config("simulator.dc_jitter", "must be >= 0"));
        }
        if !(params.bump_width[0] > 0.0 && params.bump_width[1] > params.bump_width[0]) {
            return Err(Error::config("simulator.bump_width", "need 0 < min < max"));
        }
        if !(0.0..=1.0).contains(&params.coupling) {
            return Err(Error::config("simulator.coupling", "must be in [0, 1]"));
        }
        let times = sample_times(params.window);
        let n_bumps = 2 * params.bumps_per_cycle;
        let mut rng = rng::stream(params.seed, streams::SIGNATURES);
        let shared = Shapes::random(&mut rng, &table, n_bumps, params.bump_width);
        let channels = [POWER, EM].map(|ch| Self::channel(&params, &table, ch, &times, &shared));
        Ok(LeakModel {
            params,
            table,
            channels,
        })
    }

    fn channel(
        p: &LeakParams,
        table: &GroupTable,
        ch: usize,
        times: &[f64],
        shared: &Shapes,
    ) -> ChannelModel {
        let n_bumps = 2 * p.bumps_per_cycle;
        let mut rng = rng::stream(rng::mix(p.seed, 1 + ch as u64), streams::SIGNATURES);
        // clock edges dominate the class-independent part
        let mut common_wave = Waveform::random(&mut rng, n_bumps, p.bump_width);
        common_wave.bumps.push((0.05, 0.03, 2.0));
        common_wave.bumps.push((1.05, 0.03, 2.0));
        let own = Shapes::random(&mut rng, table, n_bumps, p.bump_width);
        let inform = if ch == POWER {
            p.informativeness.power
        } else {
            p.informativeness.em
        };
        let (a, b) = (p.coupling, (1.0 - p.coupling * p.coupling).sqrt());
        let class_at = |i: usize, t: f64| {
            let g = table.group_of(i);
            weight(inform, t)
                * (p.group_amplitude * (a * shared.groups[g].eval(t) + b * own.groups[g].eval(t))
                    + p.instr_amplitude * (a * shared.instrs[i].eval(t) + b * own.instrs[i].eval(t)))
        };

        let common: Vec<f64> = times.iter().map(|&t| 0.5 + 0.05 * common_wave.eval(t)).collect();
        let class_part: Vec<Vec<f64>> = (0..table.n_instr())
            .map(|i| times.iter().map(|&t| class_at(i, t)).collect())
            .collect();
        let prev_bleed = (0..table.n_instr())
            .map(|i| {
                times
                    .iter()
                    .map(|&t| if t < 1.0 { p.bleed * class_at(i, t + 1.0) } else { 0.0 })
                    .collect()
            })
            .collect();
        let next_bleed = (0..table.n_instr())
            .map(|i| {
                times
                    .iter()
                    .map(|&t| if t >= 1.0 { p.bleed * class_at(i, t - 1.0) } else { 0.0 })
                    .collect()
            })
            .collect();

        let mut nrng = rng::stream(rng::mix(p.seed, ch as u64), streams::NOISE_PROFILE);
        let shape = Waveform::random(&mut nrng, 4, [0.2, 0.5]);
        let sigma = times
            .iter()
            .map(|&t| p.noise_sigma[ch] * (1.0 + 0.2 * shape.eval(t).tanh()))
            .collect();
        let (lo, hi) = class_part
            .iter()
            .flat_map(|cp: &Vec<f64>| cp.iter().zip(&common).map(|(a, b)| a + b))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        ChannelModel {
            common,
            class_part,
            prev_bleed,
            next_bleed,
            sigma,
            span: hi - lo,
        }
    }

    pub fn params(&self) -> &LeakParams {
        &self.params
    }

    pub fn table(&self) -> &GroupTable {
        &self.table
    }

    pub fn window(&self) -> usize {
        self.params.window
    }

    /// Mean signature (no neighbours, no noise, no offset) of `instr` on `channel`.
    pub fn signature(&self, instr: usize, channel: usize) -> Vec<f64> {
        let c = &self.channels[channel];
        c.common
            .iter()
            .zip(&c.class_part[instr])
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Peak-to-peak span of the noiseless signal on `channel`.
    pub fn span(&self, channel: usize) -> f64 {
        self.channels[channel].span
    }

    pub fn noise_sigma(&self, channel: usize) -> &[f64] {
        &self.channels[channel].sigma
    }

    /// One window of `instr` between `prev` and `next` (`None` is an idle slot).
    pub fn gen_window(
        &self,
        instr: usize,
        prev: Option<usize>,
        next: Option<usize>,
        session: &Session,
        rng: &mut Rng,
    ) -> Result<DualTrace> {
        for i in [Some(instr), prev, next].into_iter().flatten() {
            self.table.check(i)?;
        }
        let [power, em] = [POWER, EM].map(|ch| {
            let c = &self.channels[ch];
            let wander: f64 = rng.sample(StandardNormal);
            let base = (session.offsets[ch] + self.params.dc_jitter[ch] * wander) * c.span;
            let mut out = Vec::with_capacity(self.window());
            for k in 0..self.window() {
                let mut v = c.common[k] + c.class_part[instr][k] + base;
                if let Some(p) = prev {
                    v += c.prev_bleed[p][k];
                }
                if let Some(n) = next {
                    v += c.next_bleed[n][k];
                }
                let z: f64 = rng.sample(StandardNormal);
                v += c.sigma[k] * z;
                out.push(v as f32);
            }
            Trace::new(out)
        });
        DualTrace::new(power, em)
    }

    /// A training-template window: random predecessor and successor instructions.
    pub fn gen_template_trace(
        &self,
        instr: usize,
        session: &Session,
        rng: &mut Rng,
    ) -> Result<DualTrace> {
        self.table.check(instr)?;
        let prev = rng.random_range(0..self.table.n_instr());
        let next = rng.random_range(0..self.table.n_instr());
        self.gen_window(instr, Some(prev), Some(next), session, rng)
    }

    /// `n_per_class` template windows of every instruction in `instrs`,
    /// record order instruction-major. Priors are uniform over `instrs`.
    pub fn gen_dataset(
        &self,
        instrs: &[usize],
        n_per_class: usize,
        session: &Session,
    ) -> Result<LabeledDataset> {
        if n_per_class == 0 {
            return Err(Error::InvalidArgument("n_per_class must be >= 1".into()));
        }
        for &i in instrs {
            self.table.check(i)?;
        }
        let jobs: Vec<(usize, usize)> = instrs
            .iter()
            .flat_map(|&i| (0..n_per_class).map(move |j| (i, j)))
            .collect();
        let make = |(slot, &(instr, _)): (usize, &(usize, usize))| -> Result<Record> {
            let mut rng = session.trace_rng(slot as u64);
            Ok(Record {
                trace: self.gen_template_trace(instr, session, &mut rng)?,
                instr,
                group: self.table.group_of(instr),
                session: session.id,
            })
        };
        #[cfg(feature = "parallel")]
        let records: Result<Vec<Record>> = jobs.par_iter().enumerate().map(make).collect();
        #[cfg(not(feature = "parallel"))]
        let records: Result<Vec<Record>> = jobs.iter().enumerate().map(make).collect();

        let mut priors = vec![0.0; self.table.n_instr()];
        let mut distinct = instrs.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        for &i in &distinct {
            priors[i] = 1.0 / distinct.len() as f64;
        }
        // duplicates in `instrs` are allowed; fall back to empirical priors then
        if distinct.len() != instrs.len() {
            return LabeledDataset::new(self.table.label_infos(), records?);
        }
        LabeledDataset::with_priors(self.table.label_infos(), records?, priors)
    }

    /// Windows of a straight-line program, one per instruction, with the
    /// program's actual neighbours bleeding in. `first_slot` offsets the noise
    /// streams so consecutive chunks of one long run stay independent.
    pub fn gen_benchmark(
        &self,
        program: &[usize],
        session: &Session,
        first_slot: u64,
    ) -> Result<Vec<(DualTrace, usize)>> {
        for &i in program {
            self.table.check(i)?;
        }
        let make = |k: usize| -> Result<(DualTrace, usize)> {
            let mut rng = session.trace_rng(first_slot + k as u64);
            let prev = k.checked_sub(1).map(|p| program[p]);
            let next = program.get(k + 1).copied();
            Ok((self.gen_window(program[k], prev, next, session, &mut rng)?, program[k]))
        };
        #[cfg(feature = "parallel")]
        return (0..program.len()).into_par_iter().map(make).collect();
        #[cfg(not(feature = "parallel"))]
        return (0..program.len()).map(make).collect();
    }
}

/// One power-on period of the target. The first boot (id 0) is the
/// reference the templates are captured in. Every reboot moves the DC level
/// of each channel a further `spread` along a drift direction drawn once per
/// seed, so boot `k` sits at `±k·spread`; it stays there until the next
/// reboot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: u32,
    /// per-channel offsets in units of the channel's signal span
    pub offsets: [f64; 2],
    pub spread: [f64; 2],
    pub seed: u64,
}

impl Session {
    pub fn boot(seed: u64, id: u32, spread: [f64; 2]) -> Self {
        let mut rng = rng::stream(seed, streams::SESSION);
        let mut offsets = [0.0; 2];
        for (o, s) in offsets.iter_mut().zip(spread) {
            let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *o = dir * s * id as f64;
        }
        Session {
            id,
            offsets,
            spread,
            seed,
        }
    }

    /// A session with no DC offset.
    pub fn quiet(seed: u64) -> Self {
        Session {
            id: 0,
            offsets: [0.0; 2],
            spread: [0.0; 2],
            seed,
        }
    }

    pub fn trace_rng(&self, slot: u64) -> Rng {
        rng::stream(rng::mix(self.seed, self.id as u64), streams::TRACES + slot)
    }
}

/// Restarts the target: new id, fresh DC offsets.
pub fn reboot(session: &Session) -> Session {
    Session::boot(session.seed, session.id + 1, session.spread)
}

/// Synthetic stand-in for one of the benchmark programs: a loop body
/// repeated up to an approximate cycle count.
#[derive(Debug, Clone, Copy)]
pub struct Benchmark {
    pub name: &'static str,
    pub body: &'static [&'static str],
    pub cycles: usize,
}

pub const BENCHMARKS: [Benchmark; 6] = [
    Benchmark {
        name: "Timeloop",
        body: &[
            "LDI", "LDI", "LDI", "DEC", "BRNE", "DEC", "BRNE", "SUBI", "SBCI", "BRCC", "MOV", "RJMP",
        ],
        cycles: 1400,
    },
    Benchmark {
        name: "Matrix",
        body: &[
            "LDI", "LD", "LDD", "MOV", "ADD", "ADC", "MOVW", "INC", "CPI", "BRNE", "LSL", "ROL",
            "SUBI", "RJMP",
        ],
        cycles: 1000,
    },
    Benchmark {
        name: "Decimaldivision",
        body: &["LDI", "CLR", "LSL", "ROL", "CP", "CPC", "BRCS", "SUB", "SBC", "DEC"],
        cycles: 1200,
    },
    Benchmark {
        name: "Decimal2float",
        body: &[
            "LDS", "LDS", "CLR", "LSR", "ROR", "BRCC", "ADD", "ADC", "SWAP", "ANDI", "ORI", "RJMP",
        ],
        cycles: 1000,
    },
    Benchmark {
        name: "ASCII",
        body: &[
            "LD", "MOV", "SWAP", "ANDI", "CPI", "BRLO", "SUBI", "ORI", "MOV", "ANDI", "CPI",
            "BRSH", "INC", "DEC", "BRNE", "RCALL",
        ],
        cycles: 2000,
    },
    Benchmark {
        name: "ADconverter",
        body: &[
            "SBI", "SBIC", "RJMP", "LDS", "LDS", "LSR", "ROR", "LSR", "ROR", "MOV", "SBI", "CBI",
            "CLC", "JMP",
        ],
        cycles: 1400,
    },
];

impl Benchmark {
    pub fn program(&self, table: &GroupTable) -> Result<Vec<usize>> {
        let body = self
            .body
            .iter()
            .map(|m| table.lookup(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(body.iter().copied().cycle().take(self.cycles).collect())
    }
}

/// Uniformly random program over the table (used for the neighbourhood-free controls).
pub fn random_program(table: &GroupTable, len: usize, rng: &mut Rng) -> Vec<usize> {
    let all: Vec<usize> = (0..table.n_instr()).collect();
    (0..len).map(|_| *all.choose(rng).unwrap()).collect()
}
