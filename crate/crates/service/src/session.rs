//! Elicitation sessions and their append-only event logs.
//!
//! Every mutation is written to `<data_dir>/<session id>.jsonl` before it is
//! applied in memory. Replaying the log on startup rebuilds the session,
//! including its solved model, since solves are deterministic.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use ordutil::compile::{compile_expression, compile_statement, DEFAULT_MODEL_CAP};
use ordutil::formula::{parse_expression, PreferenceExpression, Statement};
use ordutil::kernel::{degree_params, KernelParams};
use ordutil::schema::{load_catalog, load_catalog_records, load_schema, Catalog, Schema};
use ordutil::solver::{
    check_kkt, reconstruct_weights, solve_dual, KktReport, MarginMode, NamedWeight, SolverConfig,
    UtilityModel, Verdict,
};
use ordutil::utility::{evaluate_utility, rank_catalog, Ranking};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown statement `{0}`")]
    UnknownStatement(String),
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("model is stale: statements changed at revision {revision} after the solve at revision {solved}")]
    Stale { revision: u64, solved: u64 },
    #[error("session has not been solved")]
    NotSolved,
    #[error(transparent)]
    Invalid(#[from] ordutil::Error),
    #[error("event log: {0}")]
    Log(String),
}

pub type SessionResult<T> = std::result::Result<T, SessionError>;

/// Catalog as CSV text or as a list of `{attribute: value}` records with an
/// `id` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CatalogDoc {
    Csv(String),
    Records(Vec<BTreeMap<String, String>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Kernel degree; `None` means `min(n, 3)`.
    pub degree: Option<usize>,
    /// Unit-weight explicit features instead of the degree kernel.
    pub unweighted: bool,
    pub margin: MarginMode,
    pub model_cap: usize,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            degree: None,
            unweighted: false,
            margin: MarginMode::Hard,
            model_cap: DEFAULT_MODEL_CAP,
            seed: 0,
        }
    }
}

/// Per-solve changes to the session configuration. They are remembered for
/// later solves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOverrides {
    pub degree: Option<usize>,
    /// Switches to a soft margin with this C.
    pub soft_c: Option<f64>,
    /// Switches back to a hard margin.
    pub hard: Option<bool>,
    pub unweighted: Option<bool>,
}

impl SessionConfig {
    fn apply(&mut self, o: &SolveOverrides) {
        if let Some(d) = o.degree {
            self.degree = Some(d);
            self.unweighted = false;
        }
        if let Some(u) = o.unweighted {
            self.unweighted = u;
        }
        if let Some(c) = o.soft_c {
            self.margin = MarginMode::Soft { c };
        }
        if o.hard == Some(true) {
            self.margin = MarginMode::Hard;
        }
    }

    pub fn kernel(&self, schema: &Schema) -> ordutil::Result<KernelParams> {
        if self.unweighted {
            return Ok(KernelParams::unweighted(schema.len()));
        }
        degree_params(self.degree.unwrap_or(schema.len().min(3)), schema.len())
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            mode: self.margin,
            seed: self.seed,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Create {
        id: String,
        schema: serde_json::Value,
        catalog: CatalogDoc,
        config: SessionConfig,
    },
    Add {
        ids: Vec<String>,
        text: String,
    },
    Delete {
        id: String,
    },
    Solve {
        overrides: SolveOverrides,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct StoredStatement {
    pub id: String,
    /// Canonical DSL rendering.
    pub text: String,
    pub constraints: usize,
    #[serde(skip)]
    pub statement: Statement,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatementSummary {
    pub id: String,
    pub text: String,
    pub constraints: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AddSummary {
    pub revision: u64,
    pub added: Vec<StatementSummary>,
    pub statements: usize,
    pub constraints: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatementActivity {
    pub id: String,
    pub constraints: usize,
    /// Some constraint of the statement carries a positive multiplier.
    pub active: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub revision: u64,
    pub verdict: Verdict,
    pub message: String,
    pub feasible: bool,
    pub kernel: KernelParams,
    pub margin: MarginMode,
    pub statements: Vec<StatementActivity>,
    pub kkt: KktReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankingView {
    pub revision: u64,
    pub verdict: Verdict,
    #[serde(flatten)]
    pub ranking: Ranking,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionInfo {
    pub id: String,
    pub revision: u64,
    pub solved_revision: Option<u64>,
    pub stale: bool,
    pub attributes: usize,
    pub items: usize,
    pub config: SessionConfig,
    pub statements: Vec<StatementSummary>,
}

struct Solved {
    revision: u64,
    model: Arc<UtilityModel>,
    report: SolveReport,
}

pub struct Session {
    id: String,
    schema: Arc<Schema>,
    catalog: Catalog,
    config: SessionConfig,
    statements: Vec<StoredStatement>,
    next_statement: u64,
    revision: u64,
    solved: Option<Solved>,
    log: Option<File>,
}

impl Session {
    fn create(
        id: String,
        schema_doc: &serde_json::Value,
        catalog_doc: &CatalogDoc,
        config: SessionConfig,
    ) -> SessionResult<Self> {
        let schema = Arc::new(load_schema(&schema_doc.to_string())?);
        let catalog = match catalog_doc {
            CatalogDoc::Csv(text) => load_catalog(text, schema.clone())?,
            CatalogDoc::Records(rows) => load_catalog_records(rows, schema.clone())?,
        };
        config.kernel(&schema)?;
        config.solver().validate()?;
        Ok(Session {
            id,
            schema,
            catalog,
            config,
            statements: Vec::new(),
            next_statement: 1,
            revision: 0,
            solved: None,
            log: None,
        })
    }

    fn record(&mut self, event: &Event) -> SessionResult<()> {
        if let Some(log) = &mut self.log {
            let line =
                serde_json::to_string(event).map_err(|e| SessionError::Log(e.to_string()))?;
            writeln!(log, "{line}")
                .and_then(|_| log.flush())
                .map_err(|e| SessionError::Log(e.to_string()))?;
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn is_stale(&self) -> bool {
        self.solved
            .as_ref()
            .is_none_or(|s| s.revision != self.revision)
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            id: self.id.clone(),
            revision: self.revision,
            solved_revision: self.solved.as_ref().map(|s| s.revision),
            stale: self.is_stale(),
            attributes: self.schema.len(),
            items: self.catalog.len(),
            config: self.config.clone(),
            statements: self.statements.iter().map(summary).collect(),
        }
    }

    /// Parses and compiles `text` without changing the session.
    fn prepare(&self, text: &str) -> SessionResult<Vec<(Statement, usize)>> {
        let expr = parse_expression(text)?;
        expr.statements
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let n = compile_statement(&s, i, &self.schema, self.config.model_cap)?.len();
                Ok((s, n))
            })
            .collect()
    }

    pub fn add_statements(&mut self, text: &str) -> SessionResult<AddSummary> {
        let prepared = self.prepare(text)?;
        if prepared.is_empty() {
            return Ok(self.add_summary(Vec::new()));
        }
        let ids: Vec<String> = (0..prepared.len() as u64)
            .map(|i| format!("s{}", self.next_statement + i))
            .collect();
        self.record(&Event::Add {
            ids: ids.clone(),
            text: text.to_string(),
        })?;
        Ok(self.apply_add(ids, prepared))
    }

    fn apply_add(&mut self, ids: Vec<String>, prepared: Vec<(Statement, usize)>) -> AddSummary {
        let mut added = Vec::new();
        for (id, (statement, constraints)) in ids.into_iter().zip(prepared) {
            let stored = StoredStatement {
                id,
                text: statement.to_string(),
                constraints,
                statement,
            };
            added.push(summary(&stored));
            self.statements.push(stored);
            self.next_statement += 1;
        }
        self.revision += 1;
        self.add_summary(added)
    }

    fn add_summary(&self, added: Vec<StatementSummary>) -> AddSummary {
        AddSummary {
            revision: self.revision,
            added,
            statements: self.statements.len(),
            constraints: self.statements.iter().map(|s| s.constraints).sum(),
        }
    }

    pub fn delete_statement(&mut self, sid: &str) -> SessionResult<u64> {
        let pos = self
            .statements
            .iter()
            .position(|s| s.id == sid)
            .ok_or_else(|| SessionError::UnknownStatement(sid.to_string()))?;
        self.record(&Event::Delete {
            id: sid.to_string(),
        })?;
        self.statements.remove(pos);
        self.revision += 1;
        Ok(self.revision)
    }

    pub fn solve(&mut self, overrides: &SolveOverrides) -> SessionResult<SolveReport> {
        let mut config = self.config.clone();
        config.apply(overrides);
        let params = config.kernel(&self.schema)?;
        let solver = config.solver();
        solver.validate()?;
        let expr = PreferenceExpression {
            statements: self
                .statements
                .iter()
                .map(|s| s.statement.clone())
                .collect(),
        };
        let cs = compile_expression(&expr, self.schema.clone(), config.model_cap)?;
        let model = solve_dual(&cs, &params, &solver)?;
        self.record(&Event::Solve {
            overrides: overrides.clone(),
        })?;
        self.config = config;

        let mut activity: Vec<StatementActivity> = self
            .statements
            .iter()
            .map(|s| StatementActivity {
                id: s.id.clone(),
                constraints: s.constraints,
                active: false,
            })
            .collect();
        for (c, a) in model.constraints.constraints.iter().zip(&model.alphas) {
            if *a > 0.0 {
                activity[c.source].active = true;
            }
        }
        let verdict = model.diagnostics.verdict;
        let report = SolveReport {
            revision: self.revision,
            verdict,
            message: verdict.to_string(),
            feasible: verdict.is_feasible(),
            kernel: params,
            margin: self.config.margin,
            statements: activity,
            kkt: check_kkt(&model),
        };
        self.solved = Some(Solved {
            revision: self.revision,
            model: Arc::new(model),
            report: report.clone(),
        });
        Ok(report)
    }

    fn fresh(&self) -> SessionResult<&Solved> {
        let solved = self.solved.as_ref().ok_or(SessionError::NotSolved)?;
        if solved.revision != self.revision {
            return Err(SessionError::Stale {
                revision: self.revision,
                solved: solved.revision,
            });
        }
        Ok(solved)
    }

    pub fn ranking(&self, top: Option<usize>) -> SessionResult<RankingView> {
        let solved = self.fresh()?;
        Ok(RankingView {
            revision: solved.revision,
            verdict: solved.report.verdict,
            ranking: rank_catalog(&solved.model, &self.catalog, top)?,
        })
    }

    pub fn utility(&self, item: &str) -> SessionResult<f64> {
        let solved = self.fresh()?;
        let alt = self
            .catalog
            .get(item)
            .ok_or_else(|| SessionError::UnknownItem(item.to_string()))?;
        Ok(evaluate_utility(&solved.model, &alt.assignment))
    }

    pub fn explain(&self, top: usize) -> SessionResult<Vec<NamedWeight>> {
        let solved = self.fresh()?;
        let weights = reconstruct_weights(&solved.model)?;
        Ok(weights.top(&self.schema, top))
    }

    /// Last solve report; available even when stale.
    pub fn diagnostics(&self) -> SessionResult<(SolveReport, bool)> {
        let solved = self.solved.as_ref().ok_or(SessionError::NotSolved)?;
        Ok((solved.report.clone(), self.is_stale()))
    }
}

fn summary(s: &StoredStatement) -> StatementSummary {
    StatementSummary {
        id: s.id.clone(),
        text: s.text.clone(),
        constraints: s.constraints,
    }
}

pub type SharedSession = Arc<RwLock<Session>>;

/// All sessions, optionally backed by a directory of event logs.
pub struct SessionStore {
    sessions: RwLock<HashMap<String, SharedSession>>,
    data_dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore {
            sessions: RwLock::new(HashMap::new()),
            data_dir: None,
        }
    }

    /// Opens `dir`, replaying every `*.jsonl` log found there.
    pub fn open(dir: impl Into<PathBuf>) -> SessionResult<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| SessionError::Log(format!("{}: {e}", dir.display())))?;
        let mut sessions = HashMap::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| SessionError::Log(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            let session = replay(&path)?;
            sessions.insert(session.id.clone(), Arc::new(RwLock::new(session)));
        }
        Ok(SessionStore {
            sessions: RwLock::new(sessions),
            data_dir: Some(dir),
        })
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.read().is_empty()
    }

    pub fn create(
        &self,
        schema: serde_json::Value,
        catalog: CatalogDoc,
        config: SessionConfig,
    ) -> SessionResult<String> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut session = Session::create(id.clone(), &schema, &catalog, config.clone())?;
        if let Some(dir) = &self.data_dir {
            let path = dir.join(format!("{id}.jsonl"));
            let file = OpenOptions::new()
                .create_new(true)
                .append(true)
                .open(&path)
                .map_err(|e| SessionError::Log(format!("{}: {e}", path.display())))?;
            session.log = Some(file);
            session.record(&Event::Create {
                id: id.clone(),
                schema,
                catalog,
                config,
            })?;
        }
        self.sessions
            .write()
            .insert(id.clone(), Arc::new(RwLock::new(session)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> SessionResult<SharedSession> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }
}

fn replay(path: &Path) -> SessionResult<Session> {
    let bad =
        |line: usize, msg: String| SessionError::Log(format!("{}:{line}: {msg}", path.display()));
    let file = File::open(path).map_err(|e| bad(0, e.to_string()))?;
    let mut session: Option<Session> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| bad(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
        match (event, session.as_mut()) {
            (
                Event::Create {
                    id,
                    schema,
                    catalog,
                    config,
                },
                None,
            ) => session = Some(Session::create(id, &schema, &catalog, config)?),
            (Event::Add { ids, text }, Some(s)) => {
                let prepared = s.prepare(&text)?;
                if prepared.len() != ids.len() {
                    return Err(bad(i + 1, "statement count does not match ids".into()));
                }
                s.apply_add(ids, prepared);
            }
            (Event::Delete { id }, Some(s)) => {
                s.delete_statement(&id)?;
            }
            (Event::Solve { overrides }, Some(s)) => {
                s.solve(&overrides)?;
            }
            (_, _) => {
                return Err(bad(
                    i + 1,
                    "log must start with a single create event".into(),
                ))
            }
        }
    }
    let mut session = session.ok_or_else(|| bad(0, "empty log".into()))?;
    session.log = Some(
        OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| bad(0, e.to_string()))?,
    );
    Ok(session)
}
