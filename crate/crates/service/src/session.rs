use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use dba_core::data::EmbeddedDataset;
use dba_core::decoder::{render_strip, RenderOptions, StripZone};
use dba_core::geometry::{sample_line, LineSample};
use dba_core::learner::{replay, ActiveLearner, ExperimentConfig, StepRecord, Transcript, TranscriptEntry};
use dba_core::metrics::LearningCurve;
use dba_core::oracle::{human_oracle_annotate, AnnotationRecord, AnnotationSource, BoundaryPoint, HumanResponse};
use dba_core::model::Label;

use crate::ServiceError;

/// Lower-case simple form of a UUID, or `None` for anything else. Session ids
/// double as file names, so nothing else is accepted.
pub(crate) fn canonical_id(raw: &str) -> Option<String> {
    uuid::Uuid::try_parse(raw).ok().map(|u| u.simple().to_string())
}

/// A line as shown to the annotator.
#[derive(Debug)]
pub(crate) struct IssuedLine {
    pub line_id: u64,
    /// False when no line could be built; the strip then shows the query
    /// sample alone and only "no change" is accepted.
    pub has_line: bool,
    pub t_values: Vec<f64>,
    /// Strip index closest to the query sample.
    pub query_index: usize,
    pub zones: Vec<StripZone>,
    pub width: usize,
    pub height: usize,
    pub png: Vec<u8>,
}

/// State visible to readers; replaced wholesale on every commit.
#[derive(Debug, Clone)]
pub(crate) struct Snapshot {
    pub iteration: usize,
    pub labeled: usize,
    pub boundary_points: usize,
    pub pending_line_id: Option<u64>,
    pub pool: usize,
    pub curve: LearningCurve,
    pub finished: bool,
    pub n_queries: usize,
}

impl Snapshot {
    fn of(learner: &ActiveLearner) -> Self {
        Self {
            iteration: learner.iteration(),
            labeled: learner.labeled().len(),
            boundary_points: learner.boundary_points().len(),
            pending_line_id: learner.pending().map(|p| p.line_id),
            pool: learner.pool().len(),
            curve: learner.curve().clone(),
            finished: learner.is_finished(),
            n_queries: learner.config().n_queries,
        }
    }
}

struct Writer {
    learner: ActiveLearner,
    file: Option<File>,
}

pub(crate) struct Session {
    id: String,
    render: RenderOptions,
    writer: Mutex<Writer>,
    committed: RwLock<Arc<Snapshot>>,
    issued: RwLock<HashMap<u64, Arc<IssuedLine>>>,
    last_access: Mutex<Instant>,
}

/// What the annotator sent, after validation of its shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Answer {
    pub line_id: u64,
    pub index: Option<usize>,
    pub label: Label,
}

pub(crate) enum AnswerError {
    NoPending,
    Stale { pending: Option<u64> },
    Conflict,
    OutOfRange { index: usize, count: usize },
    NeedsNoChange,
    Core(dba_core::Error),
    Io(std::io::Error),
}

impl Session {
    pub fn create(
        data: Arc<EmbeddedDataset>,
        config: ExperimentConfig,
        dir: Option<&Path>,
        render: RenderOptions,
    ) -> Result<Self, ServiceError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let learner = ActiveLearner::new(data, config)?;
        let file = match dir {
            Some(dir) => {
                let mut f = OpenOptions::new().create_new(true).append(true).open(transcript_path(dir, &id))?;
                writeln!(f, "{}", TranscriptEntry::Header(learner.header().clone()).to_json_line()?)?;
                f.sync_data()?;
                Some(f)
            }
            None => None,
        };
        Ok(Self::from_parts(id, learner, file, render))
    }

    /// Rebuilds a session by replaying its transcript, then rewrites the
    /// file so that a torn final line does not linger.
    pub fn restore(id: String, data: Arc<EmbeddedDataset>, path: &Path, render: RenderOptions) -> Result<Self, ServiceError> {
        let transcript = Transcript::read_jsonl(BufReader::new(File::open(path)?))?;
        let learner = replay(data, &transcript)?;
        let clean = Transcript { end: None, ..transcript };
        let tmp = path.with_extension("jsonl.tmp");
        std::fs::write(&tmp, clean.to_jsonl()?)?;
        std::fs::rename(&tmp, path)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self::from_parts(id, learner, Some(file), render))
    }

    fn from_parts(id: String, learner: ActiveLearner, file: Option<File>, render: RenderOptions) -> Self {
        let snapshot = Snapshot::of(&learner);
        Self {
            id,
            render,
            writer: Mutex::new(Writer { learner, file }),
            committed: RwLock::new(Arc::new(snapshot)),
            issued: RwLock::new(HashMap::new()),
            last_access: Mutex::new(Instant::now()),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn touch(&self) {
        *self.last_access.lock().expect("access lock") = Instant::now();
    }

    pub fn last_access(&self) -> Instant {
        *self.last_access.lock().expect("access lock")
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.committed.read().expect("snapshot lock").clone()
    }

    pub fn issued(&self, line_id: u64) -> Option<Arc<IssuedLine>> {
        self.issued.read().expect("issued lock").get(&line_id).cloned()
    }

    pub fn config(&self) -> ExperimentConfig {
        self.writer.lock().expect("writer lock").learner.config().clone()
    }

    /// The pending line, issuing a new one if needed; `None` when finished.
    pub fn query(&self) -> Result<Option<Arc<IssuedLine>>, dba_core::Error> {
        let mut w = self.writer.lock().expect("writer lock");
        let Some(pending) = w.learner.next_query()?.cloned() else {
            self.commit(&w.learner);
            return Ok(None);
        };
        if let Some(issued) = self.issued(pending.line_id) {
            return Ok(Some(issued));
        }
        let (samples, has_line, query_index) = match &pending.line {
            Some(line) => (sample_line(line), true, line.nearest_sample_index(1.0)),
            None => (
                vec![LineSample {
                    index: 0,
                    t: 1.0,
                    point: pending.query.clone(),
                }],
                false,
                0,
            ),
        };
        let strip = render_strip(&samples, &self.render)?;
        let issued = Arc::new(IssuedLine {
            line_id: pending.line_id,
            has_line,
            t_values: samples.iter().map(|s| s.t).collect(),
            query_index,
            zones: strip.zones.clone(),
            width: strip.image.width,
            height: strip.image.height,
            png: strip.image.to_png()?,
        });
        self.issued
            .write()
            .expect("issued lock")
            .insert(issued.line_id, issued.clone());
        self.commit(&w.learner);
        Ok(Some(issued))
    }

    /// Applies an answer. Re-sending an answer already applied returns the
    /// original step; a different answer for an answered line conflicts.
    pub fn answer(&self, answer: Answer) -> Result<StepRecord, AnswerError> {
        let mut w = self.writer.lock().expect("writer lock");
        if let Some(step) = w.learner.steps().iter().rev().find(|s| s.line_id == answer.line_id) {
            return if answer_of(step) == answer {
                Ok(step.clone())
            } else {
                Err(AnswerError::Conflict)
            };
        }
        let Some(pending) = w.learner.pending().cloned() else {
            return Err(AnswerError::NoPending);
        };
        if pending.line_id != answer.line_id {
            return Err(AnswerError::Stale {
                pending: Some(pending.line_id),
            });
        }
        let record = match (&pending.line, answer.index) {
            (Some(line), index) => {
                if let Some(k) = index {
                    let count = line.sample_count();
                    if k >= count {
                        return Err(AnswerError::OutOfRange { index: k, count });
                    }
                }
                human_oracle_annotate(
                    answer.line_id,
                    line,
                    HumanResponse {
                        change_index: index,
                        label: answer.label,
                    },
                )
                .map_err(AnswerError::Core)?
            }
            (None, Some(_)) => return Err(AnswerError::NeedsNoChange),
            (None, None) => AnnotationRecord {
                line_id: answer.line_id,
                boundary_point: BoundaryPoint::NoChange,
                query_label: answer.label,
                source: AnnotationSource::Human,
                noise_offset: 0,
                sample_index: None,
                t: None,
                true_t: None,
            },
        };
        // Apply to a copy, persist, then swap: a failed write leaves the
        // session exactly as it was.
        let mut next = w.learner.clone();
        let step = next.annotate(record).map_err(AnswerError::Core)?.clone();
        if let Some(f) = w.file.as_mut() {
            let line = TranscriptEntry::Step(step.clone())
                .to_json_line()
                .map_err(AnswerError::Core)?;
            writeln!(f, "{line}").and_then(|_| f.sync_data()).map_err(AnswerError::Io)?;
        }
        w.learner = next;
        self.commit(&w.learner);
        Ok(step)
    }

    fn commit(&self, learner: &ActiveLearner) {
        *self.committed.write().expect("snapshot lock") = Arc::new(Snapshot::of(learner));
    }
}

pub(crate) fn answer_of(step: &StepRecord) -> Answer {
    Answer {
        line_id: step.line_id,
        index: step.annotation.sample_index,
        label: step.annotation.query_label,
    }
}

pub(crate) fn transcript_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}
