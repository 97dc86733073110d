//! The active-learning loop: select a query sample, build its line, collect
//! an annotation, retrain, evaluate.
//!
//! A run is recorded as a JSON-lines transcript (a header, one entry per
//! query, and an end entry). Re-applying the recorded annotations to a fresh
//! learner reproduces the run bit for bit.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::EmbeddedDataset;
use crate::error::{Error, Result};
use crate::geometry::{build_query_line, fit_hypersphere, Hypersphere, QueryLine, DEFAULT_RESOLUTION};
use crate::metrics::{average_precision, LearningCurve};
use crate::model::{train, BoundarySet, Label, LabeledSet, LinearBoundary, Objective, SolverConfig};
use crate::oracle::{noisy_oracle_annotate, svm_oracle_annotate, AnnotationRecord, AnnotationSource, BoundaryPoint};
use crate::rng::Rng;
use crate::strategies::{QueryStrategy, Selector};

/// Schema version carried by transcripts and service responses.
pub const SCHEMA_VERSION: u32 = 1;

const STREAM_SELECT: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_INIT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationMode {
    /// Label plus boundary point per query.
    #[default]
    Boundary,
    /// Label only: the classical sample-annotation baseline.
    Sample,
}

impl std::str::FromStr for AnnotationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boundary" => Ok(Self::Boundary),
            "sample" => Ok(Self::Sample),
            _ => Err(Error::InvalidArgument(format!("unknown mode {s:?} (expected boundary or sample)"))),
        }
    }
}

impl std::fmt::Display for AnnotationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Boundary => "boundary",
            Self::Sample => "sample",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleKind {
    /// Classifier trained on all ground-truth train labels.
    #[default]
    Svm,
    /// The same classifier with Gaussian noise of `sigma` images.
    Noisy { sigma: f64 },
    /// Annotations arrive from outside (the service).
    Human,
}

impl OracleKind {
    pub fn sigma(&self) -> f64 {
        match self {
            Self::Noisy { sigma } => *sigma,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub strategy: QueryStrategy,
    pub oracle: OracleKind,
    pub n_queries: usize,
    pub lambda: f64,
    pub resolution: f64,
    pub init_per_class: usize,
    pub seed: u64,
    pub annotation_mode: AnnotationMode,
    /// Build and annotate lines as in boundary mode, then drop the boundary
    /// points. Equivalent to sample mode; kept as a check of that fact.
    pub discard_boundary: bool,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategy: QueryStrategy::Uncertainty,
            oracle: OracleKind::Svm,
            n_queries: 150,
            lambda: 1.0,
            resolution: DEFAULT_RESOLUTION,
            init_per_class: 1,
            seed: 0,
            annotation_mode: AnnotationMode::Boundary,
            discard_boundary: false,
            solver: SolverConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_queries == 0 {
            return bad("n_queries must be at least 1".into());
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::InvalidResolution(self.resolution));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and ≥ 0, got {}", self.lambda));
        }
        if self.init_per_class == 0 {
            return bad("init_per_class must be at least 1".into());
        }
        let sigma = self.oracle.sigma();
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return bad(format!("sigma must be finite and ≥ 0, got {sigma}"));
        }
        Ok(())
    }

    fn keeps_boundary_points(&self) -> bool {
        self.annotation_mode == AnnotationMode::Boundary && !self.discard_boundary
    }

    fn builds_lines(&self) -> bool {
        self.annotation_mode == AnnotationMode::Boundary
    }
}

/// Identifies the dataset a transcript belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// FNV-1a over dimensions, labels and value bits, as 16 hex digits.
    pub fingerprint: String,
}

impl DatasetInfo {
    pub fn of(data: &EmbeddedDataset) -> Self {
        const PRIME: u64 = 0x0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        feed(data.dim as u64);
        for rows in [&data.train, &data.test] {
            feed(rows.len() as u64);
            for (z, y) in rows {
                feed(i64::from(*y) as u64);
                z.iter().for_each(|x| feed(x.to_bits()));
            }
        }
        Self {
            name: data.name.clone(),
            dim: data.dim,
            n_train: data.train.len(),
            n_test: data.test.len(),
            fingerprint: format!("{h:016x}"),
        }
    }
}

/// The clipped query segment as shown to the annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSummary {
    pub t_lo: f64,
    pub t_hi: f64,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub sample_count: usize,
}

impl LineSummary {
    pub fn of(line: &QueryLine) -> Self {
        Self {
            t_lo: line.t_lo,
            t_hi: line.t_hi,
            start: line.point_at(line.t_lo),
            end: line.point_at(line.t_hi),
            sample_count: line.sample_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub v: u32,
    pub config: ExperimentConfig,
    pub dataset: DatasetInfo,
    /// Train ids of the initial labeled set.
    pub initial_ids: Vec<usize>,
    pub accuracy: f64,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based query number.
    pub iteration: usize,
    /// Train id of the query sample.
    pub sample_id: usize,
    pub line_id: u64,
    pub line: Option<LineSummary>,
    pub annotation: AnnotationRecord,
    pub accuracy: f64,
    pub average_precision: f64,
    pub labeled: usize,
    pub boundary_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndRecord {
    pub queries: usize,
    /// The pool ran dry before the query budget was spent.
    pub truncated: bool,
    pub boundary: LinearBoundary,
    pub aulc: Option<f64>,
    pub mean_average_precision: f64,
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptEntry {
    Header(TranscriptHeader),
    Step(StepRecord),
    End(EndRecord),
}

impl TranscriptEntry {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub steps: Vec<StepRecord>,
    pub end: Option<EndRecord>,
}

impl Transcript {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", TranscriptEntry::Header(self.header.clone()).to_json_line()?)?;
        for step in &self.steps {
            writeln!(out, "{}", TranscriptEntry::Step(step.clone()).to_json_line()?)?;
        }
        if let Some(end) = &self.end {
            writeln!(out, "{}", TranscriptEntry::End(end.clone()).to_json_line()?)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
    }

    /// Parses a transcript. A trailing partial line (an interrupted append)
    /// is ignored; anything else malformed is an error.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
        let mut header = None;
        let mut steps = Vec::new();
        let mut end = None;
        let last = lines.iter().rposition(|l| !l.trim().is_empty());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = match serde_json::from_str(line) {
                Ok(e) => e,
                Err(_) if Some(i) == last && header.is_some() => break,
                Err(e) => {
                    return Err(Error::Parse {
                        path: "<transcript>".into(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            };
            let misplaced = |what: &str| Error::Parse {
                path: "<transcript>".into(),
                line: i + 1,
                message: format!("unexpected {what} entry"),
            };
            match entry {
                TranscriptEntry::Header(h) if header.is_none() => header = Some(h),
                TranscriptEntry::Header(_) => return Err(misplaced("header")),
                TranscriptEntry::Step(_) | TranscriptEntry::End(_) if header.is_none() || end.is_some() => {
                    return Err(misplaced("step or end"))
                }
                TranscriptEntry::Step(s) => steps.push(s),
                TranscriptEntry::End(e) => end = Some(e),
            }
        }
        let header = header.ok_or_else(|| Error::Parse {
            path: "<transcript>".into(),
            line: 1,
            message: "missing header".into(),
        })?;
        Ok(Self { header, steps, end })
    }
}

/// A query waiting for its annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingQuery {
    pub line_id: u64,
    pub sample_id: usize,
    pub query: Vec<f64>,
    /// `None` in sample mode or when no line could be built through the
    /// sample (it lies on the current boundary, or outside the domain).
    pub line: Option<QueryLine>,
}

/// Trains the simulated oracle on every ground-truth train label.
pub fn train_oracle(data: &EmbeddedDataset, lambda: f64, solver: &SolverConfig) -> Result<LinearBoundary> {
    let mut a = LabeledSet::new();
    let mut seen = HashSet::new();
    for (z, y) in &data.train {
        if seen.insert(bits(z)) {
            a.push(z.clone(), *y)?;
        }
    }
    train(&a, &BoundarySet::new(), &Objective::new(lambda), None, solver)
}

fn bits(z: &[f64]) -> Vec<u64> {
    z.iter().map(|x| x.to_bits()).collect()
}

/// Test accuracy and average precision of a boundary.
pub fn evaluate(boundary: &LinearBoundary, test: &[(Vec<f64>, Label)]) -> Result<(f64, f64)> {
    let mut scores = Vec::with_capacity(test.len());
    let mut positives = Vec::with_capacity(test.len());
    let mut correct = 0usize;
    for (z, y) in test {
        let f = boundary.decision_value(z)?;
        if Label::from_decision(f) == *y {
            correct += 1;
        }
        scores.push(f);
        positives.push(*y == Label::Positive);
    }
    Ok((correct as f64 / test.len() as f64, average_precision(&scores, &positives)?))
}

/// State of one active-learning run.
#[derive(Debug, Clone)]
pub struct ActiveLearner {
    data: Arc<EmbeddedDataset>,
    config: ExperimentConfig,
    objective: Objective,
    sphere: Hypersphere,
    labeled: LabeledSet,
    boundary_points: BoundarySet,
    model: LinearBoundary,
    pool: Vec<usize>,
    selector: Selector,
    noise_rng: Rng,
    curve: LearningCurve,
    pending: Option<PendingQuery>,
    next_line_id: u64,
    header: TranscriptHeader,
    steps: Vec<StepRecord>,
    truncated: bool,
}

impl ActiveLearner {
    /// Draws the initial labeled set, trains the initial model and records
    /// its test metrics as the first curve point.
    pub fn new(data: Arc<EmbeddedDataset>, config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        data.validate()?;
        let objective = Objective::new(config.lambda);
        let sphere = fit_hypersphere(&data.train_points())?;

        // Exact duplicates in the train split are queried once.
        let mut seen = HashSet::new();
        let mut pool: Vec<usize> = (0..data.train.len()).filter(|&i| seen.insert(bits(&data.train[i].0))).collect();

        let mut init_rng = Rng::derive(config.seed, STREAM_INIT);
        let mut initial_ids = Vec::new();
        for class in [Label::Negative, Label::Positive] {
            let mut members: Vec<usize> = pool.iter().copied().filter(|&i| data.train[i].1 == class).collect();
            if members.len() < config.init_per_class {
                return Err(Error::InvalidData(format!(
                    "class {} has {} distinct train samples, fewer than init_per_class = {}",
                    i64::from(class),
                    members.len(),
                    config.init_per_class
                )));
            }
            for _ in 0..config.init_per_class {
                let pick = init_rng.below(members.len());
                initial_ids.push(members.swap_remove(pick));
            }
        }
        let mut labeled = LabeledSet::new();
        for &id in &initial_ids {
            let (z, y) = &data.train[id];
            labeled.push(z.clone(), *y)?;
        }
        let chosen: HashSet<usize> = initial_ids.iter().copied().collect();
        pool.retain(|i| !chosen.contains(i));

        let boundary_points = BoundarySet::new();
        let model = train(&labeled, &boundary_points, &objective, None, &config.solver)?;
        let (accuracy, ap) = evaluate(&model, &data.test)?;
        let mut curve = LearningCurve::default();
        curve.push(accuracy, ap);

        let header = TranscriptHeader {
            v: SCHEMA_VERSION,
            config: config.clone(),
            dataset: DatasetInfo::of(&data),
            initial_ids,
            accuracy,
            average_precision: ap,
        };
        Ok(Self {
            selector: Selector::new(config.strategy, Rng::derive(config.seed, STREAM_SELECT)),
            noise_rng: Rng::derive(config.seed, STREAM_NOISE),
            data,
            config,
            objective,
            sphere,
            labeled,
            boundary_points,
            model,
            pool,
            curve,
            pending: None,
            next_line_id: 0,
            header,
            steps: Vec::new(),
            truncated: false,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn data(&self) -> &Arc<EmbeddedDataset> {
        &self.data
    }

    pub fn boundary(&self) -> &LinearBoundary {
        &self.model
    }

    pub fn labeled(&self) -> &LabeledSet {
        &self.labeled
    }

    pub fn boundary_points(&self) -> &BoundarySet {
        &self.boundary_points
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.curve
    }

    pub fn sphere(&self) -> &Hypersphere {
        &self.sphere
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn pending(&self) -> Option<&PendingQuery> {
        self.pending.as_ref()
    }

    /// Queries answered so far.
    pub fn iteration(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// The budget is spent or the pool is empty.
    pub fn is_finished(&self) -> bool {
        self.pending.is_none() && (self.iteration() >= self.config.n_queries || self.pool.is_empty())
    }

    /// Returns the pending query, selecting a new one if none is pending.
    /// `Ok(None)` once the run is finished.
    pub fn next_query(&mut self) -> Result<Option<&PendingQuery>> {
        if self.pending.is_none() {
            if self.iteration() >= self.config.n_queries {
                return Ok(None);
            }
            if self.pool.is_empty() {
                self.truncated = true;
                return Ok(None);
            }
            let sample_id = self.selector.next(&self.pool, &self.data.train, &self.model)?;
            let query = self.data.train[sample_id].0.clone();
            let line = if self.config.builds_lines() {
                match build_query_line(&query, &self.model, &self.sphere, self.config.resolution) {
                    Ok(line) => Some(line),
                    Err(Error::DegenerateQuery | Error::QueryOutsideDomain | Error::DegenerateBoundary) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            self.pending = Some(PendingQuery {
                line_id: self.next_line_id,
                sample_id,
                query,
                line,
            });
            self.next_line_id += 1;
        }
        Ok(self.pending.as_ref())
    }

    /// Applies an annotation of the pending query and retrains.
    pub fn annotate(&mut self, record: AnnotationRecord) -> Result<&StepRecord> {
        let pending = self.pending.as_ref().ok_or(Error::NoPendingQuery)?;
        if record.line_id != pending.line_id {
            return Err(Error::StaleLine {
                expected: pending.line_id,
                got: record.line_id,
            });
        }
        if let Some(p) = record.boundary_point.point() {
            if p.len() != self.data.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.data.dim,
                    got: p.len(),
                });
            }
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidData("non-finite boundary point".into()));
            }
        }
        let pending = self.pending.take().expect("checked above");

        self.labeled.push(pending.query.clone(), record.query_label)?;
        if self.config.keeps_boundary_points() {
            if let Some(p) = record.boundary_point.point() {
                self.boundary_points.push(p.to_vec())?;
            }
        }
        self.pool.retain(|&i| i != pending.sample_id);

        self.model = train(
            &self.labeled,
            &self.boundary_points,
            &self.objective,
            Some(&self.model),
            &self.config.solver,
        )?;
        let (accuracy, ap) = evaluate(&self.model, &self.data.test)?;
        self.curve.push(accuracy, ap);
        self.steps.push(StepRecord {
            iteration: self.steps.len() + 1,
            sample_id: pending.sample_id,
            line_id: pending.line_id,
            line: pending.line.as_ref().map(LineSummary::of),
            annotation: record,
            accuracy,
            average_precision: ap,
            labeled: self.labeled.len(),
            boundary_points: self.boundary_points.len(),
        });
        Ok(self.steps.last().expect("just pushed"))
    }

    /// Answers the next query with the configured simulated oracle.
    /// `Ok(None)` once the run is finished.
    pub fn step_with_oracle(&mut self, oracle: &LinearBoundary) -> Result<Option<&StepRecord>> {
        let sigma = match self.config.oracle {
            OracleKind::Svm => None,
            OracleKind::Noisy { sigma } => Some(sigma),
            OracleKind::Human => {
                return Err(Error::InvalidArgument("a human-oracle run cannot be simulated".into()))
            }
        };
        let Some(pending) = self.next_query()?.cloned() else {
            return Ok(None);
        };
        let record = match (&pending.line, sigma) {
            (Some(line), None) => svm_oracle_annotate(pending.line_id, line, oracle)?,
            (Some(line), Some(s)) => noisy_oracle_annotate(pending.line_id, line, oracle, s, &mut self.noise_rng)?,
            (None, _) => AnnotationRecord {
                line_id: pending.line_id,
                boundary_point: BoundaryPoint::NoChange,
                query_label: oracle.predict(&pending.query)?,
                source: match sigma {
                    None => AnnotationSource::Svm,
                    Some(sigma) => AnnotationSource::Noisy { sigma },
                },
                noise_offset: 0,
                sample_index: None,
                t: None,
                true_t: None,
            },
        };
        self.annotate(record).map(Some)
    }

    pub fn end_record(&self) -> EndRecord {
        EndRecord {
            queries: self.iteration(),
            truncated: self.truncated,
            boundary: self.model.clone(),
            aulc: self.curve.aulc().ok(),
            mean_average_precision: self.curve.mean_average_precision(),
        }
    }

    pub fn header(&self) -> &TranscriptHeader {
        &self.header
    }

    /// The transcript so far; the end entry is present once the run is
    /// finished.
    pub fn transcript(&self) -> Transcript {
        Transcript {
            header: self.header.clone(),
            steps: self.steps.clone(),
            end: self.is_finished().then(|| self.end_record()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub curve: LearningCurve,
    pub boundary: LinearBoundary,
    pub transcript: Transcript,
    pub truncated: bool,
}

/// Trains the oracle and runs a simulated experiment.
pub fn run_experiment(data: Arc<EmbeddedDataset>, config: &ExperimentConfig) -> Result<ExperimentResult> {
    let oracle = train_oracle(&data, config.lambda, &config.solver)?;
    run_experiment_with_oracle(data, config, &oracle)
}

/// Runs a simulated experiment against a given oracle boundary.
pub fn run_experiment_with_oracle(
    data: Arc<EmbeddedDataset>,
    config: &ExperimentConfig,
    oracle: &LinearBoundary,
) -> Result<ExperimentResult> {
    let mut learner = ActiveLearner::new(data, config.clone())?;
    while learner.step_with_oracle(oracle)?.is_some() {}
    Ok(ExperimentResult {
        curve: learner.curve().clone(),
        boundary: learner.boundary().clone(),
        transcript: learner.transcript(),
        truncated: learner.is_truncated(),
    })
}

/// Re-applies a transcript's annotations to a fresh learner, checking that
/// every query, metric and (if present) the final boundary match bitwise.
pub fn replay(data: Arc<EmbeddedDataset>, transcript: &Transcript) -> Result<ActiveLearner> {
    let info = DatasetInfo::of(&data);
    if info != transcript.header.dataset {
        return Err(Error::ReplayDiverged {
            record: 0,
            message: format!(
                "dataset {} ({}) does not match transcript dataset {} ({})",
                info.name, info.fingerprint, transcript.header.dataset.name, transcript.header.dataset.fingerprint
            ),
        });
    }
    let mut learner = ActiveLearner::new(data, transcript.header.config.clone())?;
    let diverged = |record: usize, message: String| Error::ReplayDiverged { record, message };
    if learner.header != transcript.header {
        return Err(diverged(0, "initial state differs".into()));
    }
    for (i, step) in transcript.steps.iter().enumerate() {
        let record = i + 1;
        let pending = learner
            .next_query()?
            .ok_or_else(|| diverged(record, "run finished early".into()))?;
        if pending.sample_id != step.sample_id || pending.line_id != step.line_id {
            return Err(diverged(
                record,
                format!(
                    "selected sample {} on line {}, transcript has sample {} on line {}",
                    pending.sample_id, pending.line_id, step.sample_id, step.line_id
                ),
            ));
        }
        let replayed = learner.annotate(step.annotation.clone())?;
        if replayed != step {
            return Err(diverged(record, "step outcome differs".into()));
        }
    }
    if let Some(end) = &transcript.end {
        // Lets the learner notice pool exhaustion exactly as the original run did.
        if end.truncated {
            learner.next_query()?;
        }
        if learner.end_record() != *end {
            return Err(diverged(transcript.steps.len() + 1, "final state differs".into()));
        }
    }
    Ok(learner)
}
