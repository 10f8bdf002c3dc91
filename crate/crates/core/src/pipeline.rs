//! Step orchestration for a profiling session.
//!
//! A session owns the table and every artifact derived from it. Work is
//! split into steps identified by [`StepId`]:
//!
//! ```text
//! context/table_summary
//! context/hierarchy
//! context/column_summaries
//! classify/higher_order/<leaf path>
//! stat/<Kind>/<target>
//! sem/<Kind>/<target>
//! review/<Kind>/<target>
//! ```
//!
//! Statistical steps depend only on the table. Semantic steps depend on the
//! context they are prompted with, and a review depends on the stat and sem
//! steps of the same kind and target. Column-level sem and review steps
//! appear once the column's leaf group has been classified.
//!
//! Runs proceed in waves: every step whose dependencies are done is marked
//! running, executed in parallel from owned inputs, and committed back in
//! step order. A result is dropped if its step was invalidated meanwhile.
//! Context edits and verdict overrides may arrive between waves; edits mark
//! the transitive dependents stale so the next run redoes exactly those.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use indexmap::{IndexMap, IndexSet};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::context::{
    self, apply_user_edit, AttributeHierarchy, ContextEdit, ContextError, SemanticContext,
};
use crate::ingest::ColumnTable;
use crate::llm::{ChatProvider, DEFAULT_MAX_RETRIES};
use crate::semantics::{
    self, applicable, compute_evidence, ErrorKind, HigherOrderAssignment, HigherOrderType, PromptContext,
    ReviewVerdict, SemProfile, VerdictStatus,
};
use crate::statprofile::{StatEvidence, Target, DEFAULT_COVERAGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Context,
    Classify,
    Stat,
    Sem,
    Review,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Context => "context",
            Phase::Classify => "classify",
            Phase::Stat => "stat",
            Phase::Sem => "sem",
            Phase::Review => "review",
        }
    }
}

/// Stable identifier of a step: phase, name and optional scope.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StepId {
    pub phase: Phase,
    pub name: String,
    pub scope: Option<String>,
}

const CLASSIFY_NAME: &str = "higher_order";

impl StepId {
    fn new(phase: Phase, name: &str, scope: Option<String>) -> Self {
        StepId {
            phase,
            name: name.to_string(),
            scope,
        }
    }

    pub fn table_summary() -> Self {
        Self::new(Phase::Context, "table_summary", None)
    }

    pub fn hierarchy() -> Self {
        Self::new(Phase::Context, "hierarchy", None)
    }

    pub fn column_summaries() -> Self {
        Self::new(Phase::Context, "column_summaries", None)
    }

    /// The summary of one column. Not a step of its own: it is produced by
    /// `context/column_summaries` but can be edited and depended on alone.
    fn column_summary(column: &str) -> Self {
        Self::new(Phase::Context, "column_summaries", Some(column.to_string()))
    }

    pub fn classify(leaf_path: &str) -> Self {
        Self::new(Phase::Classify, CLASSIFY_NAME, Some(leaf_path.to_string()))
    }

    pub fn stat(kind: ErrorKind, target: &Target) -> Self {
        Self::new(Phase::Stat, kind.as_str(), Some(target.to_string()))
    }

    pub fn sem(kind: ErrorKind, target: &Target) -> Self {
        Self::new(Phase::Sem, kind.as_str(), Some(target.to_string()))
    }

    pub fn review(kind: ErrorKind, target: &Target) -> Self {
        Self::new(Phase::Review, kind.as_str(), Some(target.to_string()))
    }

    /// Kind of a stat, sem or review step.
    pub fn kind(&self) -> Option<ErrorKind> {
        match self.phase {
            Phase::Stat | Phase::Sem | Phase::Review => self.name.parse().ok(),
            _ => None,
        }
    }

    pub fn target(&self) -> Option<Target> {
        self.kind()?;
        self.scope.as_deref().map(|s| s.parse().expect("infallible"))
    }

    fn with_phase(&self, phase: Phase) -> Self {
        StepId {
            phase,
            ..self.clone()
        }
    }
}

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.phase.as_str(), self.name)?;
        if let Some(s) = &self.scope {
            write!(f, "/{s}")?;
        }
        Ok(())
    }
}

impl FromStr for StepId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(3, '/');
        let phase = match parts.next() {
            Some("context") => Phase::Context,
            Some("classify") => Phase::Classify,
            Some("stat") => Phase::Stat,
            Some("sem") => Phase::Sem,
            Some("review") => Phase::Review,
            _ => return Err(format!("unknown step \"{s}\"")),
        };
        let name = parts.next().filter(|n| !n.is_empty()).ok_or_else(|| format!("unknown step \"{s}\""))?;
        let scope = parts.next().map(str::to_string);
        match phase {
            Phase::Stat | Phase::Sem | Phase::Review if name.parse::<ErrorKind>().is_err() || scope.is_none() => {
                Err(format!("unknown step \"{s}\""))
            }
            _ => Ok(StepId::new(phase, name, scope)),
        }
    }
}

impl Serialize for StepId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Pending,
    Running,
    Done,
    Stale,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepState {
    pub status: StepStatus,
    /// Cause of the last failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Selects which steps a run may execute: an exact id, or a prefix ending
/// in `*` such as `context/*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepFilter(String);

impl StepFilter {
    pub fn new(pattern: impl Into<String>) -> Self {
        StepFilter(pattern.into())
    }

    pub fn matches(&self, id: &StepId) -> bool {
        let text = id.to_string();
        match self.0.strip_suffix('*') {
            Some(prefix) => text.starts_with(prefix),
            None => text == self.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("unknown step {0}")]
    UnknownStep(String),
    #[error("verdict for {0} is already finalized")]
    AlreadyFinalized(String),
    #[error("step {0} is not done")]
    StepNotDone(String),
    #[error("the semantic context is not complete yet")]
    ContextIncomplete,
    #[error("{0}")]
    EditRejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepFailure {
    pub step: StepId,
    pub cause: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub executed: Vec<StepId>,
    pub failures: Vec<StepFailure>,
    /// Selected steps that could not run because a dependency failed.
    pub blocked: Vec<StepId>,
}

impl RunReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && self.blocked.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub max_retries: usize,
    /// Coverage threshold for pattern induction.
    pub coverage: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            max_retries: DEFAULT_MAX_RETRIES,
            coverage: DEFAULT_COVERAGE,
        }
    }
}

/// Owned inputs for one step, so it can run without the session lock.
pub struct Job {
    pub id: StepId,
    table: Arc<ColumnTable>,
    settings: Settings,
    input: JobInput,
}

enum JobInput {
    TableSummary { docs: Option<String> },
    Hierarchy { summary: String },
    ColumnSummaries { summary: String, hierarchy: AttributeHierarchy },
    Classify { columns: Vec<String>, summary: String, columns_text: IndexMap<String, String> },
    Stat { kind: ErrorKind, target: Target },
    Sem { kind: ErrorKind, target: Target, summary: String, columns_text: IndexMap<String, String> },
    Review { target: Target, evidence: StatEvidence, sem: SemProfile, summary: String, columns_text: IndexMap<String, String> },
}

pub enum Artifact {
    TableSummary(String),
    Hierarchy(AttributeHierarchy),
    ColumnSummaries(IndexMap<String, String>),
    Classification(HigherOrderAssignment),
    Stat(StatEvidence),
    Sem(SemProfile),
    Verdict(ReviewVerdict),
}

pub struct JobOutput {
    pub id: StepId,
    pub result: Result<Artifact, String>,
}

impl Job {
    /// Executes the step. The provider is only consulted by context,
    /// classification, sem and (ungated) review steps.
    pub fn execute(&self, llm: &dyn ChatProvider) -> JobOutput {
        let t = self.table.as_ref();
        let retries = self.settings.max_retries;
        let call_id = self.id.to_string();
        let result = match &self.input {
            JobInput::TableSummary { docs } => context::summarize_table(t, docs.as_deref(), llm, retries)
                .map(Artifact::TableSummary)
                .map_err(|e| e.to_string()),
            JobInput::Hierarchy { summary } => context::group_columns(t, summary, llm, retries)
                .map(Artifact::Hierarchy)
                .map_err(|e| e.to_string()),
            JobInput::ColumnSummaries { summary, hierarchy } => {
                context::summarize_columns(t, summary, hierarchy, llm, retries)
                    .map(Artifact::ColumnSummaries)
                    .map_err(|e| e.to_string())
            }
            JobInput::Classify {
                columns,
                summary,
                columns_text,
            } => semantics::classify_higher_order(&call_id, columns, summary, columns_text, t, llm, retries)
                .map(Artifact::Classification)
                .map_err(|e| e.to_string()),
            JobInput::Stat { kind, target } => compute_evidence(*kind, target, t, self.settings.coverage)
                .map(Artifact::Stat)
                .map_err(|e| e.to_string()),
            JobInput::Sem {
                kind,
                target,
                summary,
                columns_text,
            } => {
                let ctx = PromptContext {
                    table_summary: summary,
                    column_summaries: columns_text,
                };
                semantics::semantic_profile(&call_id, *kind, target, ctx, t, llm, retries)
                    .map(Artifact::Sem)
                    .map_err(|e| e.to_string())
            }
            JobInput::Review {
                target,
                evidence,
                sem,
                summary,
                columns_text,
            } => {
                let ctx = PromptContext {
                    table_summary: summary,
                    column_summaries: columns_text,
                };
                semantics::semantic_review(&call_id, target, evidence, sem, ctx, llm, retries)
                    .map(Artifact::Verdict)
                    .map_err(|e| e.to_string())
            }
        };
        JobOutput {
            id: self.id.clone(),
            result,
        }
    }
}

/// All state of one profiling session.
pub struct Session {
    table: Arc<ColumnTable>,
    docs: Option<String>,
    settings: Settings,
    table_summary: Option<String>,
    hierarchy: Option<AttributeHierarchy>,
    column_summaries: Option<IndexMap<String, String>>,
    classifications: IndexMap<String, HigherOrderAssignment>,
    stats: HashMap<StepId, StatEvidence>,
    sems: HashMap<StepId, SemProfile>,
    verdicts: HashMap<StepId, ReviewVerdict>,
    steps: IndexMap<StepId, StepState>,
    revision: u64,
}

impl Session {
    pub fn new(table: ColumnTable, docs: Option<String>, settings: Settings) -> Self {
        let mut s = Session {
            table: Arc::new(table),
            docs,
            settings,
            table_summary: None,
            hierarchy: None,
            column_summaries: None,
            classifications: IndexMap::new(),
            stats: HashMap::new(),
            sems: HashMap::new(),
            verdicts: HashMap::new(),
            steps: IndexMap::new(),
            revision: 0,
        };
        s.reconcile();
        s
    }

    /// Shared handle to the table, usable without holding the session.
    pub fn table_arc(&self) -> Arc<ColumnTable> {
        self.table.clone()
    }

    pub fn table(&self) -> &ColumnTable {
        &self.table
    }

    pub fn settings(&self) -> Settings {
        self.settings
    }

    /// Bumped by every mutation; used to detect conflicting edits.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn table_summary(&self) -> Option<&str> {
        self.table_summary.as_deref()
    }

    pub fn hierarchy(&self) -> Option<&AttributeHierarchy> {
        self.hierarchy.as_ref()
    }

    pub fn column_summaries(&self) -> Option<&IndexMap<String, String>> {
        self.column_summaries.as_ref()
    }

    /// The full context once all three parts exist.
    pub fn context(&self) -> Option<SemanticContext> {
        Some(SemanticContext {
            table_summary: self.table_summary.clone()?,
            hierarchy: self.hierarchy.clone()?,
            column_summaries: self.column_summaries.clone()?,
            docs: self.docs.clone(),
        })
    }

    pub fn classification(&self, leaf_path: &str) -> Option<&HigherOrderAssignment> {
        self.classifications.get(leaf_path)
    }

    /// Higher-order type of a column, when its leaf has been classified.
    pub fn higher_order_type(&self, column: &str) -> Option<HigherOrderType> {
        let leaf = self.hierarchy.as_ref()?.leaf_of(column)?;
        self.classifications.get(&leaf)?.type_of(column)
    }

    pub fn steps(&self) -> &IndexMap<StepId, StepState> {
        &self.steps
    }

    pub fn status(&self, id: &StepId) -> Option<StepStatus> {
        self.steps.get(id).map(|s| s.status)
    }

    pub fn stat(&self, id: &StepId) -> Option<&StatEvidence> {
        self.stats.get(id)
    }

    pub fn sem(&self, id: &StepId) -> Option<&SemProfile> {
        self.sems.get(id)
    }

    pub fn verdict(&self, id: &StepId) -> Option<&ReviewVerdict> {
        self.verdicts.get(id)
    }

    /// Whether any step has finished.
    pub fn any_done(&self) -> bool {
        self.steps.values().any(|s| s.status == StepStatus::Done)
    }

    pub fn all_done(&self) -> bool {
        self.steps.values().all(|s| s.status == StepStatus::Done)
    }

    // -----------------------------------------------------------------------
    // Step graph

    fn column_units(&self) -> Vec<(ErrorKind, Target)> {
        let mut units = Vec::new();
        let Some(h) = &self.hierarchy else {
            return units;
        };
        for leaf in h.leaves() {
            let Some(assignment) = self.classifications.get(&leaf.path) else {
                continue;
            };
            let mut grouped = HashSet::new();
            for g in assignment.groups() {
                if g.columns.iter().all(|c| leaf.columns.contains(c)) {
                    let target = Target::Group(g.columns.clone());
                    for kind in [ErrorKind::UniqueKey, ErrorKind::MissingValue] {
                        units.push((kind, target.clone()));
                    }
                    grouped.extend(g.columns.iter().cloned());
                }
            }
            for c in leaf.columns {
                let target = Target::column(c.clone());
                for kind in ErrorKind::ALL {
                    let merged = grouped.contains(c) && matches!(kind, ErrorKind::UniqueKey | ErrorKind::MissingValue);
                    if !merged && applicable(kind, &target, &self.table) {
                        units.push((kind, target.clone()));
                    }
                }
            }
        }
        units
    }

    fn desired_steps(&self) -> IndexSet<StepId> {
        let mut out = IndexSet::new();
        out.insert(StepId::table_summary());
        out.insert(StepId::hierarchy());
        out.insert(StepId::column_summaries());
        let dup = (ErrorKind::Duplication, Target::Table);
        out.insert(StepId::stat(dup.0, &dup.1));
        for col in self.table.column_names() {
            let target = Target::column(col);
            for kind in ErrorKind::ALL {
                if applicable(kind, &target, &self.table) {
                    out.insert(StepId::stat(kind, &target));
                }
            }
        }
        out.insert(StepId::sem(dup.0, &dup.1));
        out.insert(StepId::review(dup.0, &dup.1));
        if let Some(h) = &self.hierarchy {
            for leaf in h.leaves() {
                out.insert(StepId::classify(&leaf.path));
            }
        }
        for (kind, target) in self.column_units() {
            out.insert(StepId::stat(kind, &target));
            out.insert(StepId::sem(kind, &target));
            out.insert(StepId::review(kind, &target));
        }
        out
    }

    /// Brings the step set in line with the current artifacts, keeping the
    /// state of steps that remain and dropping artifacts of removed ones.
    fn reconcile(&mut self) {
        let desired = self.desired_steps();
        let mut next = IndexMap::with_capacity(desired.len());
        for id in desired {
            let state = self.steps.swap_remove(&id).unwrap_or(StepState {
                status: StepStatus::Pending,
                error: None,
            });
            next.insert(id, state);
        }
        for removed in self.steps.keys() {
            self.stats.remove(removed);
            self.sems.remove(removed);
            self.verdicts.remove(removed);
            if removed.phase == Phase::Classify {
                if let Some(leaf) = &removed.scope {
                    self.classifications.shift_remove(leaf);
                }
            }
        }
        self.steps = next;
    }

    /// Direct dependencies of a step.
    pub fn dependencies(&self, id: &StepId) -> Vec<StepId> {
        let leaf_columns = |leaf: &str| -> Vec<String> {
            self.hierarchy
                .as_ref()
                .and_then(|h| h.leaves().into_iter().find(|l| l.path == leaf).map(|l| l.columns.to_vec()))
                .unwrap_or_default()
        };
        match id.phase {
            Phase::Context => match id.name.as_str() {
                "hierarchy" => vec![StepId::table_summary()],
                "column_summaries" if id.scope.is_none() => vec![StepId::table_summary(), StepId::hierarchy()],
                "column_summaries" => vec![StepId::column_summaries()],
                _ => vec![],
            },
            Phase::Classify => {
                let mut deps = vec![StepId::table_summary(), StepId::hierarchy()];
                let leaf = id.scope.as_deref().unwrap_or_default();
                deps.extend(leaf_columns(leaf).iter().map(|c| StepId::column_summary(c)));
                deps
            }
            Phase::Stat => vec![],
            Phase::Sem => {
                let mut deps = vec![StepId::table_summary()];
                if let Some(target) = id.target().filter(|t| *t != Target::Table) {
                    let cols = target.columns();
                    deps.extend(cols.iter().map(|c| StepId::column_summary(c)));
                    if let Some(leaf) = self.hierarchy.as_ref().and_then(|h| h.leaf_of(cols[0])) {
                        deps.push(StepId::classify(&leaf));
                    }
                }
                deps
            }
            Phase::Review => vec![id.with_phase(Phase::Stat), id.with_phase(Phase::Sem)],
        }
    }

    fn effective_status(&self, id: &StepId) -> StepStatus {
        if id.phase == Phase::Context && id.scope.is_some() {
            let present = id
                .scope
                .as_deref()
                .is_some_and(|c| self.column_summaries.as_ref().is_some_and(|m| m.contains_key(c)));
            return match self.status(&StepId::column_summaries()) {
                Some(StepStatus::Done) if present => StepStatus::Done,
                Some(StepStatus::Done) => StepStatus::Failed,
                Some(s) => s,
                None => StepStatus::Pending,
            };
        }
        self.status(id).unwrap_or(StepStatus::Pending)
    }

    fn deps_done(&self, id: &StepId) -> bool {
        self.dependencies(id)
            .iter()
            .all(|d| self.effective_status(d) == StepStatus::Done)
    }

    /// Steps that transitively depend on `changed`. Context steps are never
    /// included: accepted context artifacts are authoritative.
    pub fn dependents(&self, changed: &StepId) -> Vec<StepId> {
        let mut seen: IndexSet<StepId> = IndexSet::new();
        let mut queue = VecDeque::from([changed.clone()]);
        while let Some(x) = queue.pop_front() {
            for id in self.steps.keys() {
                if id.phase != Phase::Context && !seen.contains(id) && self.dependencies(id).contains(&x) {
                    seen.insert(id.clone());
                    queue.push_back(id.clone());
                }
            }
        }
        seen.into_iter().collect()
    }

    /// Marks every transitive dependent of `changed` for re-execution and
    /// returns them.
    pub fn invalidate_downstream(&mut self, changed: &StepId) -> Vec<StepId> {
        let affected = self.dependents(changed);
        for id in &affected {
            let state = self.steps.get_mut(id).expect("dependents are steps");
            state.status = match state.status {
                StepStatus::Done | StepStatus::Running => StepStatus::Stale,
                StepStatus::Failed => StepStatus::Pending,
                other => other,
            };
        }
        if !affected.is_empty() {
            self.revision += 1;
        }
        affected
    }

    // -----------------------------------------------------------------------
    // Running

    fn job_for(&self, id: &StepId) -> Option<Job> {
        let summary = || self.table_summary.clone();
        let columns_text = |cols: &[&str]| -> IndexMap<String, String> {
            let all = self.column_summaries.as_ref();
            cols.iter()
                .filter_map(|c| all.and_then(|m| m.get(*c)).map(|s| (c.to_string(), s.clone())))
                .collect()
        };
        let input = match id.phase {
            Phase::Context => match id.name.as_str() {
                "table_summary" => JobInput::TableSummary { docs: self.docs.clone() },
                "hierarchy" => JobInput::Hierarchy { summary: summary()? },
                _ => JobInput::ColumnSummaries {
                    summary: summary()?,
                    hierarchy: self.hierarchy.clone()?,
                },
            },
            Phase::Classify => {
                let leaf = id.scope.as_deref()?;
                let columns = self
                    .hierarchy
                    .as_ref()?
                    .leaves()
                    .into_iter()
                    .find(|l| l.path == leaf)?
                    .columns
                    .to_vec();
                let refs: Vec<&str> = columns.iter().map(String::as_str).collect();
                JobInput::Classify {
                    columns_text: columns_text(&refs),
                    columns,
                    summary: summary()?,
                }
            }
            Phase::Stat => JobInput::Stat {
                kind: id.kind()?,
                target: id.target()?,
            },
            Phase::Sem => {
                let target = id.target()?;
                JobInput::Sem {
                    kind: id.kind()?,
                    columns_text: columns_text(&target.columns()),
                    target,
                    summary: summary()?,
                }
            }
            Phase::Review => {
                let target = id.target()?;
                JobInput::Review {
                    evidence: self.stats.get(&id.with_phase(Phase::Stat))?.clone(),
                    sem: self.sems.get(&id.with_phase(Phase::Sem))?.clone(),
                    columns_text: columns_text(&target.columns()),
                    target,
                    summary: summary()?,
                }
            }
        };
        Some(Job {
            id: id.clone(),
            table: Arc::clone(&self.table),
            settings: self.settings,
            input,
        })
    }

    /// Failed steps get another chance at the start of every run.
    pub fn begin_run(&mut self) {
        for state in self.steps.values_mut() {
            if state.status == StepStatus::Failed {
                state.status = StepStatus::Pending;
            }
        }
    }

    /// Marks every ready step (optionally restricted by `filter`) as
    /// running and returns the jobs to execute.
    pub fn plan_wave(&mut self, filter: Option<&StepFilter>) -> Vec<Job> {
        self.reconcile();
        let ready: Vec<StepId> = self
            .steps
            .iter()
            .filter(|(id, st)| {
                matches!(st.status, StepStatus::Pending | StepStatus::Stale)
                    && filter.is_none_or(|f| f.matches(id))
                    && self.deps_done(id)
            })
            .map(|(id, _)| id.clone())
            .collect();
        let mut jobs = Vec::with_capacity(ready.len());
        for id in ready {
            let job = self.job_for(&id);
            let state = self.steps.get_mut(&id).expect("ready steps exist");
            match job {
                Some(job) => {
                    state.status = StepStatus::Running;
                    jobs.push(job);
                }
                None => {
                    state.status = StepStatus::Failed;
                    state.error = Some("inputs unavailable".into());
                }
            }
        }
        jobs
    }

    /// Applies finished jobs. Results for steps that were invalidated or
    /// removed while running are discarded.
    pub fn commit(&mut self, outputs: Vec<JobOutput>, report: &mut RunReport) {
        for out in outputs {
            match self.steps.get(&out.id) {
                Some(st) if st.status == StepStatus::Running => {}
                _ => continue,
            }
            let state = match out.result {
                Ok(artifact) => {
                    self.store(&out.id, artifact);
                    StepState {
                        status: StepStatus::Done,
                        error: None,
                    }
                }
                Err(cause) => {
                    report.failures.push(StepFailure {
                        step: out.id.clone(),
                        cause: cause.clone(),
                    });
                    StepState {
                        status: StepStatus::Failed,
                        error: Some(cause),
                    }
                }
            };
            report.executed.push(out.id.clone());
            self.steps.insert(out.id, state);
        }
        self.revision += 1;
        self.reconcile();
    }

    fn store(&mut self, id: &StepId, artifact: Artifact) {
        match artifact {
            Artifact::TableSummary(s) => self.table_summary = Some(s),
            Artifact::Hierarchy(h) => self.hierarchy = Some(h),
            Artifact::ColumnSummaries(m) => self.column_summaries = Some(m),
            Artifact::Classification(a) => {
                let leaf = id.scope.clone().expect("classify steps are scoped");
                self.classifications.insert(leaf, a);
            }
            Artifact::Stat(e) => {
                self.stats.insert(id.clone(), e);
            }
            Artifact::Sem(p) => {
                self.sems.insert(id.clone(), p);
            }
            Artifact::Verdict(v) => {
                self.verdicts.insert(id.clone(), v);
            }
        }
    }

    /// Selected steps still waiting after a run finished.
    pub fn blocked(&self, filter: Option<&StepFilter>) -> Vec<StepId> {
        self.steps
            .iter()
            .filter(|(id, st)| {
                matches!(st.status, StepStatus::Pending | StepStatus::Stale) && filter.is_none_or(|f| f.matches(id))
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Runs waves until nothing selected is ready.
    pub fn run(&mut self, llm: &dyn ChatProvider, until: Option<&StepFilter>) -> RunReport {
        let mut report = RunReport::default();
        self.begin_run();
        loop {
            let jobs = self.plan_wave(until);
            if jobs.is_empty() {
                break;
            }
            let outputs: Vec<JobOutput> = jobs.par_iter().map(|j| j.execute(llm)).collect();
            self.commit(outputs, &mut report);
        }
        report.blocked = self.blocked(until);
        report
    }

    // -----------------------------------------------------------------------
    // Human feedback

    /// Applies a validated context edit and invalidates what depends on it.
    pub fn apply_context_edit(&mut self, edit: &ContextEdit) -> Result<Vec<StepId>, PipelineError> {
        let ctx = self.context().ok_or(PipelineError::ContextIncomplete)?;
        let names = self.table.column_names();
        let next = apply_user_edit(&ctx, edit, &names).map_err(|e| match e {
            ContextError::EditRejected(d) => PipelineError::EditRejected(d),
            other => PipelineError::EditRejected(other.to_string()),
        })?;
        let changed = match edit {
            ContextEdit::TableSummary(_) => StepId::table_summary(),
            ContextEdit::Hierarchy(_) => StepId::hierarchy(),
            ContextEdit::ColumnSummary { column, .. } => StepId::column_summary(column),
        };
        let mut affected: IndexSet<StepId> = self.invalidate_downstream(&changed).into_iter().collect();
        self.table_summary = Some(next.table_summary);
        self.hierarchy = Some(next.hierarchy);
        self.column_summaries = Some(next.column_summaries);
        if matches!(edit, ContextEdit::Hierarchy(_)) {
            // Leaves may have been renamed or regrouped; walk the new graph too.
            affected.extend(self.invalidate_downstream(&changed));
        }
        self.revision += 1;
        self.reconcile();
        Ok(affected.into_iter().filter(|id| self.steps.contains_key(id)).collect())
    }

    /// Records a human decision on a machine verdict.
    pub fn apply_verdict_override(&mut self, step: &StepId, is_error: bool, note: &str) -> Result<(), PipelineError> {
        let status = self.status(step);
        let verdict = self
            .verdicts
            .get_mut(step)
            .filter(|_| step.phase == Phase::Review)
            .ok_or_else(|| PipelineError::UnknownStep(step.to_string()))?;
        if status != Some(StepStatus::Done) {
            return Err(PipelineError::StepNotDone(step.to_string()));
        }
        if verdict.status != VerdictStatus::Machine {
            return Err(PipelineError::AlreadyFinalized(step.to_string()));
        }
        verdict.status = if verdict.is_error == is_error {
            VerdictStatus::Accepted
        } else {
            VerdictStatus::Overridden
        };
        verdict.is_error = is_error;
        let note = note.trim();
        if !note.is_empty() {
            verdict.reasoning = format!("{}\nReviewer note: {note}", verdict.reasoning);
            verdict.note = Some(note.to_string());
        }
        self.revision += 1;
        Ok(())
    }

    /// Verdicts of finished review steps in step order.
    pub fn done_verdicts(&self) -> Vec<(&StepId, &ReviewVerdict)> {
        self.steps
            .iter()
            .filter(|(id, st)| id.phase == Phase::Review && st.status == StepStatus::Done)
            .filter_map(|(id, _)| self.verdicts.get(id).map(|v| (id, v)))
            .collect()
    }

    /// Error verdicts per hierarchy node; see [`count_alerts`].
    pub fn alert_counts(&self) -> IndexMap<String, usize> {
        let verdicts: Vec<(Target, bool)> = self
            .done_verdicts()
            .into_iter()
            .map(|(_, v)| (v.target.clone(), v.is_error))
            .collect();
        count_alerts(self.hierarchy.as_ref(), &verdicts)
    }
}

/// Counts error verdicts per hierarchy node. The key `""` is the table
/// itself and counts every error, including table-level ones; each concept
/// path (`Patient`, `Patient/Identification`, ...) counts the errors on its
/// descendant columns. A verdict on a column group counts once per node.
pub fn count_alerts(h: Option<&AttributeHierarchy>, verdicts: &[(Target, bool)]) -> IndexMap<String, usize> {
    let mut counts: IndexMap<String, usize> = IndexMap::new();
    counts.insert(String::new(), 0);
    let mut column_leaf: HashMap<&str, String> = HashMap::new();
    if let Some(h) = h {
        for leaf in h.leaves() {
            let segments: Vec<&str> = leaf.path.split('/').collect();
            for i in 1..=segments.len() {
                counts.entry(segments[..i].join("/")).or_insert(0);
            }
            for c in leaf.columns {
                column_leaf.insert(c.as_str(), leaf.path.clone());
            }
        }
    }
    for (target, is_error) in verdicts {
        if !is_error {
            continue;
        }
        let mut nodes: IndexSet<String> = IndexSet::from([String::new()]);
        for c in target.columns() {
            if let Some(leaf) = column_leaf.get(c) {
                let segments: Vec<&str> = leaf.split('/').collect();
                for i in 1..=segments.len() {
                    nodes.insert(segments[..i].join("/"));
                }
            }
        }
        for n in nodes {
            *counts.entry(n).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{COLUMN_SUMMARIES_STEP, HIERARCHY_STEP, TABLE_SUMMARY_STEP};
    use crate::ingest::{parse_csv, CsvOptions};
    use crate::llm::{MockProvider, MockScript};
    use serde_json::json;

    #[test]
    fn step_id_text_round_trip() {
        let ids = [
            StepId::table_summary(),
            StepId::classify("Patient/Location"),
            StepId::stat(ErrorKind::Duplication, &Target::Table),
            StepId::review(ErrorKind::MissingValue, &Target::column("Maiden")),
            StepId::sem(ErrorKind::UniqueKey, &Target::Group(vec!["Lat".into(), "Lon".into()])),
        ];
        let text: Vec<String> = ids.iter().map(ToString::to_string).collect();
        assert_eq!(
            text,
            vec![
                "context/table_summary",
                "classify/higher_order/Patient/Location",
                "stat/Duplication/*",
                "review/MissingValue/Maiden",
                "sem/UniqueKey/[Lat, Lon]",
            ]
        );
        for (id, t) in ids.iter().zip(&text) {
            assert_eq!(&t.parse::<StepId>().unwrap(), id);
        }
        assert!("review/Nope/x".parse::<StepId>().is_err());
        assert!("bogus".parse::<StepId>().is_err());
        assert_eq!(StepId::table_summary().to_string(), TABLE_SUMMARY_STEP);
        assert_eq!(StepId::hierarchy().to_string(), HIERARCHY_STEP);
        assert_eq!(StepId::column_summaries().to_string(), COLUMN_SUMMARIES_STEP);
    }

    #[test]
    fn filters() {
        let f = StepFilter::new("context/*");
        assert!(f.matches(&StepId::hierarchy()));
        assert!(!f.matches(&StepId::classify("A")));
        assert!(StepFilter::new("context/hierarchy").matches(&StepId::hierarchy()));
    }

    fn small_session() -> Session {
        let t = parse_csv("a,b\n1,x\n2,y\n2,\n", "t", CsvOptions::default()).unwrap();
        Session::new(t, None, Settings::default())
    }

    #[test]
    fn stats_run_without_provider() {
        let mut s = small_session();
        let p = MockProvider::new(MockScript::new());
        let report = s.run(&p, Some(&StepFilter::new("stat/*")));
        assert!(report.failures.is_empty());
        assert!(s
            .steps()
            .iter()
            .filter(|(id, _)| id.phase == Phase::Stat)
            .all(|(_, st)| st.status == StepStatus::Done));
        assert_eq!(p.call_count(), 0);
    }

    #[test]
    fn failed_context_blocks_dependents_only() {
        let mut s = small_session();
        let p = MockProvider::new(MockScript::new());
        let report = s.run(&p, None);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].step, StepId::table_summary());
        assert!(report.blocked.contains(&StepId::hierarchy()));
        assert_eq!(s.status(&StepId::stat(ErrorKind::Duplication, &Target::Table)), Some(StepStatus::Done));
    }

    #[test]
    fn alert_counts_aggregate_upwards() {
        let h = AttributeHierarchy::from_json(&json!({"P": {"Id": ["a", "b"], "Loc": ["c", "d"]}})).unwrap();
        let verdicts = vec![
            (Target::column("a"), true),
            (Target::Table, true),
            (Target::Group(vec!["c".into(), "d".into()]), true),
            (Target::column("b"), false),
        ];
        let counts = count_alerts(Some(&h), &verdicts);
        assert_eq!(counts[""], 3);
        assert_eq!(counts["P"], 2);
        assert_eq!(counts["P/Id"], 1);
        assert_eq!(counts["P/Loc"], 1);
        let zero = count_alerts(Some(&h), &[]);
        assert!(zero.values().all(|n| *n == 0));
    }
}
