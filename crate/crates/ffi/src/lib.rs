//! C ABI over the kgseek engine.
//!
//! Every fallible function returns a [`KgsStatus`]; on failure the message is
//! available from [`kgs_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Strings passed in are
//! NUL-terminated UTF-8; lists of names are separated by `|`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kgseek::coalesce::{EntitySet, RelationSeq};
use kgseek::error::{CheckpointError, KgError, ScorerError, SeekError};
use kgseek::features::tokenize;
use kgseek::kg::{load_triples, parse_triples, KnowledgeGraph};
use kgseek::scorer::{EdgeScorer, FeaturizedModel, OracleScorer, ScoreRequest, UniformScorer};
use kgseek::seeker::{seek, SeekParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    BadInput = 4,
    ScorerContract = 5,
    Checkpoint = 6,
    OutOfRange = 7,
    Panic = 8,
}

pub struct KgsGraph {
    graph: KnowledgeGraph,
}

pub struct KgsScorer {
    kind: ScorerKind,
}

enum ScorerKind {
    Uniform,
    Oracle(OracleScorer),
    Featurized { model: FeaturizedModel, fingerprint: u64 },
}

impl EdgeScorer for ScorerKind {
    fn score(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        match self {
            ScorerKind::Uniform => UniformScorer.score(req),
            ScorerKind::Oracle(o) => o.score(req),
            ScorerKind::Featurized { model, .. } => model.score(req),
        }
    }
}

pub struct KgsResult {
    sequences: Vec<CString>,
    nll: Vec<f64>,
    candidates: Vec<CString>,
    scorer_calls: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(KgsStatus, String);

impl From<KgError> for Failure {
    fn from(e: KgError) -> Self {
        let status = match e {
            KgError::Io { .. } => KgsStatus::Io,
            KgError::UnknownEntityId(_) | KgError::UnknownRelationId(_) => KgsStatus::OutOfRange,
            _ => KgsStatus::BadInput,
        };
        let mut msg = e.to_string();
        if let Some(src) = std::error::Error::source(&e) {
            msg = format!("{msg}: {src}");
        }
        Failure(status, msg)
    }
}

impl From<SeekError> for Failure {
    fn from(e: SeekError) -> Self {
        match e {
            SeekError::Graph(g) => g.into(),
            SeekError::Scorer(_) => Failure(KgsStatus::ScorerContract, e.to_string()),
            _ => Failure(KgsStatus::BadInput, e.to_string()),
        }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let status = if matches!(e, CheckpointError::Io(_)) { KgsStatus::Io } else { KgsStatus::Checkpoint };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KgsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            KgsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            KgsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(KgsStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(KgsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(KgsStatus::NullArgument, format!("{what} is null")))
}

fn out_arg<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(KgsStatus::NullArgument, "output pointer is null".into()));
    }
    Ok(())
}

fn names(list: &str) -> impl Iterator<Item = &str> {
    list.split('|').map(str::trim).filter(|s| !s.is_empty())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn kgs_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a tab-separated triple file.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgs_graph_load(path: *const c_char, add_inverses: bool, out: *mut *mut KgsGraph) -> KgsStatus {
    guard(|| {
        out_arg(out)?;
        let path = str_arg(path, "path")?;
        let graph = load_triples(path, add_inverses)?;
        *out = Box::into_raw(Box::new(KgsGraph { graph }));
        Ok(())
    })
}

/// Builds a graph from triple text held in memory.
///
/// # Safety
/// `text` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgs_graph_parse(text: *const c_char, add_inverses: bool, out: *mut *mut KgsGraph) -> KgsStatus {
    guard(|| {
        out_arg(out)?;
        let text = str_arg(text, "text")?;
        let graph = parse_triples(text.as_bytes(), add_inverses)?;
        *out = Box::into_raw(Box::new(KgsGraph { graph }));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kgs_graph_free(graph: *mut KgsGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kgs_graph_num_entities(graph: *const KgsGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.num_entities())
}

/// Relation count, including the reserved `self` relation.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kgs_graph_num_relations(graph: *const KgsGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.num_relations())
}

/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kgs_graph_num_edges(graph: *const KgsGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.num_edges())
}

/// Scorer giving every valid next relation equal probability.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgs_scorer_uniform(out: *mut *mut KgsScorer) -> KgsStatus {
    guard(|| {
        out_arg(out)?;
        *out = Box::into_raw(Box::new(KgsScorer { kind: ScorerKind::Uniform }));
        Ok(())
    })
}

/// Scorer that follows the given gold sequences, e.g. `"directed starred"`.
/// Several sequences are separated by `|`.
///
/// # Safety
/// `graph` must be a live handle, `gold` a valid C string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn kgs_scorer_oracle(
    graph: *const KgsGraph,
    gold: *const c_char,
    out: *mut *mut KgsScorer,
) -> KgsStatus {
    guard(|| {
        out_arg(out)?;
        let g = &ref_arg(graph, "graph")?.graph;
        let gold = str_arg(gold, "gold")?;
        let seqs = names(gold).map(|s| RelationSeq::parse(g, s)).collect::<Result<Vec<_>, _>>()?;
        if seqs.is_empty() {
            return Err(Failure(KgsStatus::BadInput, "no gold sequences".into()));
        }
        *out = Box::into_raw(Box::new(KgsScorer { kind: ScorerKind::Oracle(OracleScorer::new(&seqs)) }));
        Ok(())
    })
}

/// Loads a trained scorer checkpoint and checks it against `graph`.
///
/// # Safety
/// `graph` must be a live handle, `path` a valid C string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn kgs_scorer_load(
    graph: *const KgsGraph,
    path: *const c_char,
    out: *mut *mut KgsScorer,
) -> KgsStatus {
    guard(|| {
        out_arg(out)?;
        let g = &ref_arg(graph, "graph")?.graph;
        let path = str_arg(path, "path")?;
        let model = FeaturizedModel::load(path)?;
        if !model.matches_graph(g) {
            return Err(Failure(KgsStatus::Checkpoint, "checkpoint relations do not match the graph".into()));
        }
        let kind = ScorerKind::Featurized { model, fingerprint: g.fingerprint() };
        *out = Box::into_raw(Box::new(KgsScorer { kind }));
        Ok(())
    })
}

/// # Safety
/// `scorer` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kgs_scorer_free(scorer: *mut KgsScorer) {
    if !scorer.is_null() {
        drop(Box::from_raw(scorer));
    }
}

/// Beam search from the `|`-separated anchor names. `question` may be null.
///
/// # Safety
/// `graph` and `scorer` must be live handles, `anchors` a valid C string,
/// `question` null or a valid C string, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgs_seek(
    graph: *const KgsGraph,
    scorer: *const KgsScorer,
    anchors: *const c_char,
    question: *const c_char,
    beam: usize,
    tau_max: usize,
    k: usize,
    out: *mut *mut KgsResult,
) -> KgsStatus {
    guard(|| {
        out_arg(out)?;
        let g = &ref_arg(graph, "graph")?.graph;
        let scorer = &ref_arg(scorer, "scorer")?.kind;
        if let ScorerKind::Featurized { fingerprint, .. } = scorer {
            if *fingerprint != g.fingerprint() {
                return Err(Failure(KgsStatus::BadInput, "scorer was loaded for a different graph".into()));
            }
        }
        let anchors = str_arg(anchors, "anchors")?;
        let tokens = if question.is_null() { Vec::new() } else { tokenize(str_arg(question, "question")?) };
        let ids = names(anchors).map(|n| g.entity_id(n)).collect::<Result<Vec<_>, _>>()?;
        let res = seek(g, &EntitySet::from_unsorted(ids), &tokens, scorer, SeekParams { beam, tau_max, k })?;
        let cstring = |s: String| CString::new(s).map_err(|_| Failure(KgsStatus::BadInput, "name contains NUL".into()));
        let result = KgsResult {
            sequences: res.entries.iter().map(|e| cstring(e.seq.display(g).to_string())).collect::<Result<_, _>>()?,
            nll: res.entries.iter().map(|e| e.nll).collect(),
            candidates: res.candidates.iter().map(|&v| cstring(g.entity_name(v).to_owned())).collect::<Result<_, _>>()?,
            scorer_calls: res.scorer_calls,
        };
        *out = Box::into_raw(Box::new(result));
        Ok(())
    })
}

/// # Safety
/// `result` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kgs_result_free(result: *mut KgsResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Number of ranked sequences (at most `k`).
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kgs_result_len(result: *const KgsResult) -> usize {
    result.as_ref().map_or(0, |r| r.sequences.len())
}

/// Sequence at `rank` (0-based) as space-separated relation names, or null
/// when out of range. Owned by `result`.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kgs_result_sequence(result: *const KgsResult, rank: usize) -> *const c_char {
    result.as_ref().and_then(|r| r.sequences.get(rank)).map_or(ptr::null(), |s| s.as_ptr())
}

/// Negative log-likelihood of the sequence at `rank`, or NaN when out of range.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kgs_result_nll(result: *const KgsResult, rank: usize) -> f64 {
    result.as_ref().and_then(|r| r.nll.get(rank).copied()).unwrap_or(f64::NAN)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kgs_result_num_candidates(result: *const KgsResult) -> usize {
    result.as_ref().map_or(0, |r| r.candidates.len())
}

/// Name of candidate `i` in id order, or null when out of range. Owned by
/// `result`.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kgs_result_candidate(result: *const KgsResult, i: usize) -> *const c_char {
    result.as_ref().and_then(|r| r.candidates.get(i)).map_or(ptr::null(), |s| s.as_ptr())
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kgs_result_scorer_calls(result: *const KgsResult) -> u64 {
    result.as_ref().map_or(0, |r| r.scorer_calls)
}
