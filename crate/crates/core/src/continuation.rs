//! Fidelity-time sweeps: fresh random seeds at every time, "output
//! recycling" of solutions to neighbouring times, branch bookkeeping and the
//! max-fidelity envelope.
//!
//! A sweep runs in three stages, each a sequence of steps over the time
//! grid:
//!
//! 1. `fresh`: `seeds_per_t` random seeds at every `T`, each opening a branch.
//! 2. `up`: for increasing `T`, the best `carry` branches ending at the
//!    previous `T` are continued with their field as the seed.
//! 3. `down`: the same for decreasing `T`. A branch that already holds a
//!    record at the lower time spawns a child branch instead.
//!
//! Every seed is derived from the plan's master seed and the step, and the
//! solves inside a step are merged in a fixed order, so the outcome does not
//! depend on the worker count. With a store directory the branch index is
//! rewritten after every step and a sweep can resume from the last one.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::krotov::{solve, ConvergenceCriteria, Initial, SolveStatus};
use crate::linalg::CMatrix;
use crate::pauli::{GeneratorTable, BASIS_ORDERING_VERSION};
use crate::propagation::{default_slices, ControlField, TimeGrid, T2_MAX};
use crate::records::{config_hash, read_field_csv, read_json, write_field_csv, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecycleDirection {
    Up,
    Down,
    Both,
}

impl RecycleDirection {
    fn up(self) -> bool {
        matches!(self, RecycleDirection::Up | RecycleDirection::Both)
    }

    fn down(self) -> bool {
        matches!(self, RecycleDirection::Down | RecycleDirection::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    /// Target name as understood by [`crate::targets::named_target`].
    pub target: String,
    pub n: usize,
    /// Total times in units of `T2_MAX`, strictly increasing.
    pub t_values: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds_per_t: usize,
    #[serde(default = "default_true")]
    pub recycling: bool,
    #[serde(default = "default_direction")]
    pub direction: RecycleDirection,
    /// Branches carried from one time to the next when recycling.
    #[serde(default = "default_carry")]
    pub carry: usize,
    /// Slice count shared by every time; recycling keeps it fixed. Defaults
    /// to the default slice count of the largest time.
    #[serde(default)]
    pub slices: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub criteria: ConvergenceCriteria,
}

fn default_seeds() -> usize {
    8
}
fn default_true() -> bool {
    true
}
fn default_direction() -> RecycleDirection {
    RecycleDirection::Both
}
fn default_carry() -> usize {
    4
}

/// Default time step between neighbouring sweep times, in `T2_MAX` units.
pub const DEFAULT_T_STEP: f64 = 0.05;

impl SweepPlan {
    pub fn new(target: &str, n: usize, t_values: Vec<f64>) -> Self {
        Self {
            target: target.to_string(),
            n,
            t_values,
            seeds_per_t: default_seeds(),
            recycling: true,
            direction: RecycleDirection::Both,
            carry: default_carry(),
            slices: None,
            master_seed: 0,
            criteria: ConvergenceCriteria::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_values.is_empty() {
            return Err(invalid("sweep plan has no times"));
        }
        if self.t_values.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(invalid("sweep times must be positive"));
        }
        if self.t_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sweep times must be strictly increasing"));
        }
        if self.seeds_per_t == 0 && !self.recycling {
            return Err(invalid("a sweep needs fresh seeds or recycling"));
        }
        if self.seeds_per_t == 0 {
            return Err(invalid("recycling needs at least one fresh seed per time"));
        }
        if self.carry == 0 {
            return Err(invalid("carry must be positive"));
        }
        if self.slices == Some(0) {
            return Err(invalid("slice count must be positive"));
        }
        self.criteria.validate()
    }

    pub fn slice_count(&self) -> usize {
        self.slices.unwrap_or_else(|| {
            let t_max = self.t_values.iter().cloned().fold(0.0, f64::max);
            default_slices(t_max * T2_MAX)
        })
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    fn grid(&self, t_rel: f64) -> Result<TimeGrid> {
        TimeGrid::new(t_rel * T2_MAX, self.slice_count())
    }
}

/// Evenly spaced times from `lo` to `hi` inclusive.
pub fn t_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && hi >= lo && lo > 0.0) {
        return Err(invalid("time grid needs 0 < lo <= hi and a positive step"));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| lo + step * i as f64).collect())
}

/// Same per-slice coefficients on the grid of total time `t_new`.
pub fn recycle_field(field: &ControlField, t_new: f64) -> Result<ControlField> {
    field.with_total_time(t_new)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Fresh {
        seed: u64,
    },
    /// Spawned from `parent`'s record at `from_t`.
    Recycled {
        parent: usize,
        from_t: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RecordSource {
    Fresh {
        seed: u64,
    },
    /// Seeded with a field from `from_branch` at `from_t`.
    Recycled {
        from_branch: usize,
        from_t: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub t_rel: f64,
    pub fidelity: f64,
    pub status: SolveStatus,
    pub cycles: usize,
    pub source: RecordSource,
    /// Field file name inside the store's `fields/` directory.
    pub field_file: String,
    #[serde(skip)]
    pub field: Option<ControlField>,
}

impl BranchRecord {
    pub fn converged(&self) -> bool {
        self.status.is_terminal_success()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBranch {
    pub id: usize,
    pub provenance: Provenance,
    /// Sorted by time, at most one record per time.
    pub records: Vec<BranchRecord>,
}

impl SweepBranch {
    pub fn record_at(&self, t_rel: f64) -> Option<&BranchRecord> {
        self.records.iter().find(|r| r.t_rel == t_rel)
    }

    fn insert(&mut self, record: BranchRecord) -> Result<()> {
        if self.record_at(record.t_rel).is_some() {
            return Err(invalid(format!(
                "branch {} already has a record at T={}",
                self.id, record.t_rel
            )));
        }
        let pos = self.records.partition_point(|r| r.t_rel < record.t_rel);
        self.records.insert(pos, record);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub t_rel: f64,
    pub fidelity: f64,
    pub branch: usize,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub points: Vec<EnvelopePoint>,
    /// Times at which the owning branch differs from the one at the
    /// previous time.
    pub crossovers: Vec<f64>,
}

impl Envelope {
    pub fn at(&self, t_rel: f64) -> Option<&EnvelopePoint> {
        self.points.iter().find(|p| p.t_rel == t_rel)
    }

    /// `t_rel,fidelity,branch,status` rows under a JSON comment line
    /// carrying `t2max`, the basis ordering and `config_hash`.
    pub fn to_csv(&self, config_hash: &str) -> String {
        let meta = serde_json::json!({
            "t2max": T2_MAX,
            "basis_ordering": BASIS_ORDERING_VERSION,
            "config_hash": config_hash,
        });
        let mut out = format!("# {meta}\nt_rel,fidelity,branch,status\n");
        for p in &self.points {
            let status = serde_json::to_value(p.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            out.push_str(&format!(
                "{:?},{:?},{},{}\n",
                p.t_rel, p.fidelity, p.branch, status
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("t_rel") {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() < 2 {
                return Err(Error::Parse(format!(
                    "envelope line {}: too few cells",
                    i + 1
                )));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("envelope line {}: {e}", i + 1)))
            };
            let status = match cells.get(3).map(|s| s.trim()) {
                None | Some("converged") => SolveStatus::Converged,
                Some("saturated") => SolveStatus::Saturated,
                Some("not_converged") => SolveStatus::NotConverged,
                Some(other) => {
                    return Err(Error::Parse(format!(
                        "envelope line {}: status {other}",
                        i + 1
                    )))
                }
            };
            let branch = match cells.get(2) {
                Some(s) => s
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("envelope line {}: {e}", i + 1)))?,
                None => 0,
            };
            points.push(EnvelopePoint {
                t_rel: num(cells[0])?,
                fidelity: num(cells[1])?,
                branch,
                status,
            });
        }
        points.sort_by(|a, b| a.t_rel.total_cmp(&b.t_rel));
        Ok(Self {
            crossovers: crossovers_of(&points),
            points,
        })
    }
}

fn crossovers_of(points: &[EnvelopePoint]) -> Vec<f64> {
    points
        .windows(2)
        .filter(|w| w[0].branch != w[1].branch)
        .map(|w| w[1].t_rel)
        .collect()
}

/// Pointwise best fidelity over all branches, ties going to the lower
/// branch id.
pub fn envelope_of(branches: &[SweepBranch]) -> Result<Envelope> {
    let mut best: BTreeMap<u64, EnvelopePoint> = BTreeMap::new();
    for b in branches {
        for r in &b.records {
            let key = r.t_rel.to_bits();
            let candidate = EnvelopePoint {
                t_rel: r.t_rel,
                fidelity: r.fidelity,
                branch: b.id,
                status: r.status,
            };
            match best.get(&key) {
                Some(p)
                    if p.fidelity > r.fidelity || (p.fidelity == r.fidelity && p.branch < b.id) => {
                }
                _ => {
                    best.insert(key, candidate);
                }
            }
        }
    }
    if best.is_empty() {
        return Err(invalid("envelope of an empty branch set"));
    }
    let mut points: Vec<EnvelopePoint> = best.into_values().collect();
    points.sort_by(|a, b| a.t_rel.total_cmp(&b.t_rel));
    Ok(Envelope {
        crossovers: crossovers_of(&points),
        points,
    })
}

/// Pointwise best over several envelopes keyed on the exact time, e.g. a
/// coarse sweep and its window refinement. Earlier envelopes win ties.
pub fn merge_envelopes(envelopes: &[Envelope]) -> Result<Envelope> {
    let mut best: BTreeMap<u64, EnvelopePoint> = BTreeMap::new();
    for env in envelopes {
        for p in &env.points {
            match best.get(&p.t_rel.to_bits()) {
                Some(q) if q.fidelity >= p.fidelity => {}
                _ => {
                    best.insert(p.t_rel.to_bits(), p.clone());
                }
            }
        }
    }
    if best.is_empty() {
        return Err(invalid("merge of empty envelopes"));
    }
    let mut points: Vec<EnvelopePoint> = best.into_values().collect();
    points.sort_by(|a, b| a.t_rel.total_cmp(&b.t_rel));
    Ok(Envelope {
        crossovers: crossovers_of(&points),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveFailure {
    pub t_rel: f64,
    pub source: RecordSource,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub branches: Vec<SweepBranch>,
    pub envelope: Envelope,
    pub failures: Vec<SolveFailure>,
}

/// Step identifiers, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "stage", content = "index")]
enum Step {
    Fresh(usize),
    Up(usize),
    Down(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreIndex {
    plan_hash: String,
    basis_ordering: String,
    t2max: f64,
    plan: SweepPlan,
    completed: Vec<Step>,
    branches: Vec<SweepBranch>,
    failures: Vec<SolveFailure>,
    #[serde(default)]
    wall_clock_s: f64,
}

/// Options outside the plan: where to persist and how many workers to use.
#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub store: Option<PathBuf>,
    pub resume: bool,
    /// Worker cap; `None` uses rayon's default.
    pub jobs: Option<usize>,
}

pub const INDEX_FILE: &str = "index.json";
pub const ENVELOPE_FILE: &str = "envelope.csv";

fn field_file_name(branch: usize, t_index: usize) -> String {
    format!("b{branch:05}_t{t_index:03}.csv")
}

/// Seeds for the fresh solves at time index `t_index`.
fn fresh_seeds(master: u64, t_index: usize, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(t_index as u64);
    (0..count).map(|_| rng.random::<u64>()).collect()
}

struct Job {
    t_index: usize,
    source: RecordSource,
    initial: Initial,
    /// Branch to append to, or `None` to open a new one.
    target_branch: Option<usize>,
    provenance: Provenance,
}

struct JobResult {
    job: Job,
    outcome: Result<(f64, SolveStatus, usize, ControlField)>,
}

/// Runs the plan, optionally persisting to and resuming from a store.
pub fn run_sweep(plan: &SweepPlan, options: &SweepOptions) -> Result<SweepOutcome> {
    plan.validate()?;
    let target = crate::targets::named_target(&plan.target, plan.n)?;
    let basis = crate::pauli::enumerate_basis(plan.n)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = options.jobs {
            b = b.num_threads(j.max(1));
        }
        b.build()
            .map_err(|e| invalid(format!("thread pool: {e}")))?
    };
    let plan_hash = plan.hash()?;
    let started = Instant::now();

    let mut index = StoreIndex {
        plan_hash: plan_hash.clone(),
        basis_ordering: BASIS_ORDERING_VERSION.to_string(),
        t2max: T2_MAX,
        plan: plan.clone(),
        completed: Vec::new(),
        branches: Vec::new(),
        failures: Vec::new(),
        wall_clock_s: 0.0,
    };
    if let Some(dir) = &options.store {
        let path = dir.join(INDEX_FILE);
        if options.resume && path.exists() {
            let stored: StoreIndex = read_json(&path)?;
            if stored.plan_hash != plan_hash {
                return Err(invalid(format!(
                    "store at {} belongs to a different plan",
                    dir.display()
                )));
            }
            index = stored;
            load_fields(&mut index.branches, dir, &basis)?;
        } else if path.exists() && !options.resume {
            return Err(invalid(format!(
                "{} already holds a sweep; pass resume or choose another directory",
                dir.display()
            )));
        }
    }

    let steps = plan_steps(plan);
    for step in steps {
        if index.completed.contains(&step) {
            continue;
        }
        let jobs = jobs_for(step, plan, &index.branches)?;
        let u_f = &target.matrix;
        let results: Vec<JobResult> = pool.install(|| {
            jobs.into_par_iter()
                .map(|job| {
                    let outcome = run_job(&job, plan, u_f, &basis);
                    JobResult { job, outcome }
                })
                .collect()
        });
        merge(
            plan,
            &mut index,
            results,
            options.store.as_deref(),
            &basis,
            &plan_hash,
        )?;
        index.completed.push(step);
        if let Some(dir) = &options.store {
            index.wall_clock_s += started.elapsed().as_secs_f64();
            write_json(&dir.join(INDEX_FILE), &index)?;
            let env = envelope_of(&index.branches)?;
            crate::records::write_atomic(
                &dir.join(ENVELOPE_FILE),
                env.to_csv(&plan_hash).as_bytes(),
            )?;
        }
        log::info!(
            "sweep step {step:?} done, {} branches",
            index.branches.len()
        );
    }
    let envelope = envelope_of(&index.branches)?;
    Ok(SweepOutcome {
        branches: index.branches,
        envelope,
        failures: index.failures,
    })
}

fn plan_steps(plan: &SweepPlan) -> Vec<Step> {
    let count = plan.t_values.len();
    let mut steps: Vec<Step> = (0..count).map(Step::Fresh).collect();
    if plan.recycling && plan.direction.up() {
        steps.extend((1..count).map(Step::Up));
    }
    if plan.recycling && plan.direction.down() {
        steps.extend((0..count.saturating_sub(1)).rev().map(Step::Down));
    }
    steps
}

/// The best `carry` branches holding a record at `t`, by fidelity with ties
/// broken by branch id.
fn leaders(branches: &[SweepBranch], t: f64, carry: usize) -> Vec<usize> {
    let mut holders: Vec<(f64, usize)> = branches
        .iter()
        .filter_map(|b| b.record_at(t).map(|r| (r.fidelity, b.id)))
        .collect();
    holders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    holders.into_iter().take(carry).map(|(_, id)| id).collect()
}

fn jobs_for(step: Step, plan: &SweepPlan, branches: &[SweepBranch]) -> Result<Vec<Job>> {
    let t = &plan.t_values;
    Ok(match step {
        Step::Fresh(i) => fresh_seeds(plan.master_seed, i, plan.seeds_per_t)
            .into_iter()
            .map(|seed| Job {
                t_index: i,
                source: RecordSource::Fresh { seed },
                initial: Initial::Seed(seed),
                target_branch: None,
                provenance: Provenance::Fresh { seed },
            })
            .collect(),
        Step::Up(i) | Step::Down(i) => {
            let from = if matches!(step, Step::Up(_)) {
                i - 1
            } else {
                i + 1
            };
            let mut jobs = Vec::new();
            for id in leaders(branches, t[from], plan.carry) {
                let branch = &branches[id];
                let record = branch.record_at(t[from]).expect("leader holds a record");
                let field = record.field.as_ref().ok_or_else(|| {
                    invalid(format!("branch {id} lost its field at T={}", t[from]))
                })?;
                let seeded = recycle_field(field, t[i] * T2_MAX)?;
                let occupied = branch.record_at(t[i]).is_some();
                jobs.push(Job {
                    t_index: i,
                    source: RecordSource::Recycled {
                        from_branch: id,
                        from_t: t[from],
                    },
                    initial: Initial::Field(seeded),
                    target_branch: if occupied { None } else { Some(id) },
                    provenance: Provenance::Recycled {
                        parent: id,
                        from_t: t[from],
                    },
                });
            }
            jobs
        }
    })
}

fn run_job(
    job: &Job,
    plan: &SweepPlan,
    u_f: &CMatrix,
    basis: &GeneratorTable,
) -> Result<(f64, SolveStatus, usize, ControlField)> {
    let grid = plan.grid(plan.t_values[job.t_index])?;
    let out = solve(u_f, grid, basis, job.initial.clone(), &plan.criteria)?;
    Ok((
        out.state.fidelity,
        out.status,
        out.reports.len(),
        out.state.field,
    ))
}

fn merge(
    plan: &SweepPlan,
    index: &mut StoreIndex,
    results: Vec<JobResult>,
    store: Option<&Path>,
    basis: &GeneratorTable,
    plan_hash: &str,
) -> Result<()> {
    for JobResult { job, outcome } in results {
        let t_rel = plan.t_values[job.t_index];
        let (fidelity, status, cycles, field) = match outcome {
            Ok(v) => v,
            Err(e) => {
                log::warn!("solve at T={t_rel} failed: {e}");
                index.failures.push(SolveFailure {
                    t_rel,
                    source: job.source,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let id = match job.target_branch {
            Some(id) => id,
            None => {
                let id = index.branches.len();
                index.branches.push(SweepBranch {
                    id,
                    provenance: job.provenance,
                    records: Vec::new(),
                });
                id
            }
        };
        let field_file = field_file_name(id, job.t_index);
        if let Some(dir) = store {
            write_field_csv(
                &dir.join("fields").join(&field_file),
                &field,
                basis,
                plan_hash,
            )?;
        }
        index.branches[id].insert(BranchRecord {
            t_rel,
            fidelity,
            status,
            cycles,
            source: job.source,
            field_file,
            field: Some(field),
        })?;
    }
    Ok(())
}

fn load_fields(branches: &mut [SweepBranch], dir: &Path, basis: &GeneratorTable) -> Result<()> {
    for b in branches.iter_mut() {
        for r in b.records.iter_mut() {
            let (_, field) = read_field_csv(&dir.join("fields").join(&r.field_file), basis)?;
            r.field = Some(field);
        }
    }
    Ok(())
}

/// Loads the branches and envelope of a stored sweep.
pub fn load_store(dir: &Path) -> Result<(SweepPlan, Vec<SweepBranch>, Envelope)> {
    let index: StoreIndex = read_json(&dir.join(INDEX_FILE))?;
    let basis = crate::pauli::enumerate_basis(index.plan.n)?;
    let mut branches = index.branches;
    load_fields(&mut branches, dir, &basis)?;
    let envelope = envelope_of(&branches)?;
    Ok((index.plan, branches, envelope))
}

/// Times that place roughly `points` envelope values inside the defect
/// window `lo <= 1 - F <= hi`, by interpolating `log(1 - F)` linearly in `T`
/// between the envelope points that bracket the window.
pub fn window_times(envelope: &Envelope, window: (f64, f64), points: usize) -> Result<Vec<f64>> {
    let (lo, hi) = window;
    if points < 2 || !(lo > 0.0 && hi > lo) {
        return Err(invalid(
            "window refinement needs 0 < lo < hi and at least two points",
        ));
    }
    let pts: Vec<(f64, f64)> = envelope
        .points
        .iter()
        .filter(|p| p.status.is_terminal_success())
        .map(|p| (p.t_rel, (1.0 - p.fidelity).max(1e-300)))
        .collect();
    let crossing = |level: f64| -> Option<f64> {
        pts.windows(2).find_map(|w| {
            let (t0, y0) = w[0];
            let (t1, y1) = w[1];
            if y0 >= level && y1 <= level && y0 > y1 {
                let s = (y0.ln() - level.ln()) / (y0.ln() - y1.ln());
                Some(t0 + s * (t1 - t0))
            } else {
                None
            }
        })
    };
    let t_hi_defect = crossing(hi)
        .ok_or_else(|| Error::InsufficientData(format!("envelope never crosses 1-F = {hi}")))?;
    let t_lo_defect = crossing(lo)
        .ok_or_else(|| Error::InsufficientData(format!("envelope never crosses 1-F = {lo}")))?;
    let step = (t_lo_defect - t_hi_defect) / (points - 1) as f64;
    Ok((0..points).map(|i| t_hi_defect + step * i as f64).collect())
}
