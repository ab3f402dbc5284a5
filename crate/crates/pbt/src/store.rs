//! The shared data-store members coordinate through: performance
//! publication, population snapshots, and checkpoint save/restore with
//! atomic exploit copy.
//!
//! This is the only shared mutable state in the system. Every operation is
//! atomic at record granularity and never blocks on another member's
//! progress; per-member writes are linearizable last-write-wins guarded by a
//! version counter, while cross-member reads are snapshot-stale (no global
//! synchronization, as none is required).
//!
//! Two backends sit behind one interface: an in-process map (default) and a
//! directory of files with layout
//! `<run_dir>/checkpoints/<member_id>/<created_at>.ckpt`. File checkpoints
//! are written via temp-file-then-rename so a concurrent reader never sees a
//! torn record.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use crate::analysis::{EventKind, LineageEvent};
use crate::core::{
    ExploitMask, HyperValue, HyperparamVector, MemberId, MemberState, ParamVector,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("stale publish for member {id}: version {published} <= stored {stored}")]
    StaleVersion {
        id: MemberId,
        published: u64,
        stored: u64,
    },
    #[error("unknown member {0}")]
    UnknownMember(MemberId),
    #[error("unknown checkpoint {0:?}")]
    UnknownCheckpoint(CheckpointRef),
    #[error("exploit mask `none` never copies; the caller must not reach the store with it")]
    MaskIsNone,
    #[error("checkpoint codec: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Handle to a saved checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CheckpointRef {
    pub member_id: MemberId,
    pub created_at: u64,
}

/// A saved member state, retrievable by reference and serializable
/// bit-exactly as one self-describing text record.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub member_id: MemberId,
    pub t: u64,
    pub theta: ParamVector,
    pub h: HyperparamVector,
    pub p: f64,
    pub ancestor_id: MemberId,
    /// Set when this state was produced by an exploit copy.
    pub parent_member_id: Option<MemberId>,
    pub created_at: u64,
}

impl Checkpoint {
    pub fn reference(&self) -> CheckpointRef {
        CheckpointRef {
            member_id: self.member_id,
            created_at: self.created_at,
        }
    }
}

/// A consistent per-member-latest view of the population. May be stale
/// relative to in-flight writes, but never torn.
#[derive(Debug, Clone)]
pub struct StoreSnapshot {
    /// Latest state of each live member, sorted by id.
    pub members: Vec<MemberState>,
    /// Global event counter at snapshot time.
    pub event_counter: u64,
}

#[derive(Debug)]
enum Backend {
    Memory,
    Directory { run_dir: PathBuf },
}

#[derive(Debug, Default)]
struct Inner {
    members: BTreeMap<MemberId, MemberState>,
    failed: BTreeMap<MemberId, String>,
    checkpoints: BTreeMap<CheckpointRef, Checkpoint>,
    latest_checkpoint: BTreeMap<MemberId, CheckpointRef>,
    /// Checkpoints used as exploit sources; retention keeps these forever.
    pinned: BTreeSet<CheckpointRef>,
    events: Vec<LineageEvent>,
    counter: u64,
}

impl Inner {
    fn next_counter(&mut self) -> u64 {
        self.counter += 1;
        self.counter
    }
}

/// The shared population store.
#[derive(Debug)]
pub struct PopulationStore {
    inner: Mutex<Inner>,
    backend: Backend,
}

impl PopulationStore {
    /// In-process store seeded with the initial population. A birth event is
    /// logged for every member.
    pub fn in_memory(initial: Vec<MemberState>) -> Self {
        Self::build(initial, Backend::Memory)
    }

    /// Directory-backed store: checkpoints live under
    /// `<run_dir>/checkpoints/`.
    pub fn with_directory(initial: Vec<MemberState>, run_dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(run_dir.join("checkpoints"))?;
        Ok(Self::build(
            initial,
            Backend::Directory {
                run_dir: run_dir.to_path_buf(),
            },
        ))
    }

    fn build(initial: Vec<MemberState>, backend: Backend) -> Self {
        let mut inner = Inner::default();
        for state in initial {
            let counter = inner.next_counter();
            inner.events.push(LineageEvent {
                event_counter: counter,
                member_id: state.id,
                kind: EventKind::StepBatch,
                parent_member_id: None,
                mask: None,
                h_before: state.h.clone(),
                h_after: state.h.clone(),
                p_at_event: state.p,
                t_at_event: state.t,
            });
            inner.members.insert(state.id, state);
        }
        Self {
            inner: Mutex::new(inner),
            backend,
        }
    }

    /// Reopen a directory-backed store from its checkpoint files: the
    /// registry is rebuilt and each member's latest checkpoint becomes its
    /// current state (with an empty eval window).
    pub fn reload_from_directory(run_dir: &Path, window_capacity: usize) -> Result<Self, StoreError> {
        let mut inner = Inner::default();
        let root = run_dir.join("checkpoints");
        let mut max_counter = 0u64;
        for member_dir in read_dir_sorted(&root)? {
            for file in read_dir_sorted(&member_dir)? {
                let text = fs::read_to_string(&file)?;
                let ckpt = decode_checkpoint(&text)?;
                max_counter = max_counter.max(ckpt.created_at);
                let r = ckpt.reference();
                match inner.latest_checkpoint.get(&ckpt.member_id) {
                    Some(prev) if prev.created_at >= ckpt.created_at => {}
                    _ => {
                        inner.latest_checkpoint.insert(ckpt.member_id, r);
                    }
                }
                inner.checkpoints.insert(r, ckpt);
            }
        }
        for (&id, r) in &inner.latest_checkpoint {
            let ckpt = &inner.checkpoints[r];
            let mut state = MemberState::new(id, ckpt.theta.clone(), ckpt.h.clone(), window_capacity);
            state.t = ckpt.t;
            state.p = ckpt.p;
            state.ancestor_id = ckpt.ancestor_id;
            inner.members.insert(id, state);
        }
        inner.counter = max_counter;
        Ok(Self {
            inner: Mutex::new(inner),
            backend: Backend::Directory {
                run_dir: run_dir.to_path_buf(),
            },
        })
    }

    /// Publish a member's current state. Rejected when the version does not
    /// advance (lost-update signal). An eval event is logged.
    pub fn publish(&self, state: &MemberState) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().unwrap();
        let stored = inner
            .members
            .get(&state.id)
            .ok_or(StoreError::UnknownMember(state.id))?;
        if state.version <= stored.version {
            return Err(StoreError::StaleVersion {
                id: state.id,
                published: state.version,
                stored: stored.version,
            });
        }
        let counter = inner.next_counter();
        inner.events.push(LineageEvent {
            event_counter: counter,
            member_id: state.id,
            kind: EventKind::Eval,
            parent_member_id: None,
            mask: None,
            h_before: state.h.clone(),
            h_after: state.h.clone(),
            p_at_event: state.p,
            t_at_event: state.t,
        });
        inner.members.insert(state.id, state.clone());
        Ok(())
    }

    /// Per-member-latest view of the live population.
    pub fn snapshot(&self) -> StoreSnapshot {
        let inner = self.inner.lock().unwrap();
        StoreSnapshot {
            members: inner.members.values().cloned().collect(),
            event_counter: inner.counter,
        }
    }

    /// Save a checkpoint of `state`. `parent` records the exploit source
    /// when this state was just produced by a copy. Retention: the member's
    /// previous checkpoint is dropped unless it was pinned as an exploit
    /// source.
    pub fn save_checkpoint(
        &self,
        state: &MemberState,
        parent: Option<MemberId>,
    ) -> Result<CheckpointRef, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        let created_at = inner.next_counter();
        let ckpt = Checkpoint {
            member_id: state.id,
            t: state.t,
            theta: state.theta.clone(),
            h: state.h.clone(),
            p: state.p,
            ancestor_id: state.ancestor_id,
            parent_member_id: parent,
            created_at,
        };
        let r = ckpt.reference();
        if let Backend::Directory { run_dir } = &self.backend {
            write_checkpoint_file(run_dir, &ckpt)?;
        }
        let previous = inner.latest_checkpoint.insert(state.id, r);
        inner.checkpoints.insert(r, ckpt);
        if let Some(prev) = previous {
            if !inner.pinned.contains(&prev) {
                inner.checkpoints.remove(&prev);
                if let Backend::Directory { run_dir } = &self.backend {
                    let _ = fs::remove_file(checkpoint_path(run_dir, &prev));
                }
            }
        }
        Ok(r)
    }

    /// Load the exact saved value behind a reference.
    pub fn load_checkpoint(&self, r: &CheckpointRef) -> Result<Checkpoint, StoreError> {
        let inner = self.inner.lock().unwrap();
        if !inner.checkpoints.contains_key(r) {
            return Err(StoreError::UnknownCheckpoint(*r));
        }
        match &self.backend {
            Backend::Memory => Ok(inner.checkpoints[r].clone()),
            // read back through the file and codec: the disk is the record
            Backend::Directory { run_dir } => {
                let text = fs::read_to_string(checkpoint_path(run_dir, r))?;
                decode_checkpoint(&text)
            }
        }
    }

    pub fn latest_checkpoint(&self, member: MemberId) -> Option<CheckpointRef> {
        self.inner.lock().unwrap().latest_checkpoint.get(&member).copied()
    }

    /// Atomic exploit copy: overwrite `dst`'s fields from `src` according to
    /// the mask, record lineage, pin the source checkpoint, install and
    /// return the new state.
    ///
    /// mask=all copies θ, h and ancestry bit-for-bit; hyperparams-only
    /// copies h alone; weights-only copies θ and ancestry alone. dst's step
    /// counter, eval window and p are preserved; steps_since_event resets.
    pub fn exploit_copy(
        &self,
        dst_id: MemberId,
        src: &Checkpoint,
        mask: ExploitMask,
    ) -> Result<MemberState, StoreError> {
        if mask == ExploitMask::None {
            return Err(StoreError::MaskIsNone);
        }
        let mut inner = self.inner.lock().unwrap();
        let dst = inner
            .members
            .get(&dst_id)
            .ok_or(StoreError::UnknownMember(dst_id))?
            .clone();

        let mut next = dst.clone();
        match mask {
            ExploitMask::All => {
                next.theta = src.theta.clone();
                next.h = src.h.clone();
                next.ancestor_id = src.ancestor_id;
            }
            ExploitMask::HyperparamsOnly => {
                next.h = src.h.clone();
            }
            ExploitMask::WeightsOnly => {
                next.theta = src.theta.clone();
                next.ancestor_id = src.ancestor_id;
            }
            ExploitMask::None => unreachable!(),
        }
        next.steps_since_event = 0;
        next.version += 1;

        inner.pinned.insert(src.reference());
        let counter = inner.next_counter();
        inner.events.push(LineageEvent {
            event_counter: counter,
            member_id: dst_id,
            kind: EventKind::Exploit,
            parent_member_id: Some(src.member_id),
            mask: Some(mask),
            h_before: dst.h.clone(),
            h_after: next.h.clone(),
            p_at_event: next.p,
            t_at_event: next.t,
        });
        inner.members.insert(dst_id, next.clone());
        Ok(next)
    }

    /// Log an explore event (h mutation after an exploit copy). The stored
    /// member is untouched; the member publishes its explored state with the
    /// re-eval that always follows, so every store write carries a version
    /// bump.
    pub fn log_explore(&self, member: &MemberState, h_before: &HyperparamVector) {
        let mut inner = self.inner.lock().unwrap();
        let counter = inner.next_counter();
        inner.events.push(LineageEvent {
            event_counter: counter,
            member_id: member.id,
            kind: EventKind::Explore,
            parent_member_id: None,
            mask: None,
            h_before: h_before.clone(),
            h_after: member.h.clone(),
            p_at_event: member.p,
            t_at_event: member.t,
        });
    }

    /// Remove a member from the live population.
    pub fn mark_failed(&self, member: MemberId, reason: impl Into<String>) {
        let mut inner = self.inner.lock().unwrap();
        inner.members.remove(&member);
        inner.failed.insert(member, reason.into());
    }

    pub fn failed_members(&self) -> Vec<(MemberId, String)> {
        let inner = self.inner.lock().unwrap();
        inner.failed.iter().map(|(k, v)| (*k, v.clone())).collect()
    }

    pub fn events(&self) -> Vec<LineageEvent> {
        self.inner.lock().unwrap().events.clone()
    }

    /// Serialize the event log as JSON lines.
    pub fn events_jsonl(&self) -> String {
        let inner = self.inner.lock().unwrap();
        let mut out = String::new();
        for ev in &inner.events {
            out.push_str(&serde_json::to_string(ev).expect("events always serialize"));
            out.push('\n');
        }
        out
    }
}

fn read_dir_sorted(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<io::Result<_>>()?;
    entries.sort();
    Ok(entries)
}

fn checkpoint_path(run_dir: &Path, r: &CheckpointRef) -> PathBuf {
    run_dir
        .join("checkpoints")
        .join(r.member_id.to_string())
        .join(format!("{:012}.ckpt", r.created_at))
}

fn write_checkpoint_file(run_dir: &Path, ckpt: &Checkpoint) -> Result<(), StoreError> {
    let path = checkpoint_path(run_dir, &ckpt.reference());
    fs::create_dir_all(path.parent().expect("checkpoint path has a parent"))?;
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, encode_checkpoint(ckpt)?)?;
    fs::rename(&tmp, &path)?;
    Ok(())
}

/// 17 significant digits: enough for a bit-exact f64 round trip.
fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn token_ok(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_graphic())
}

/// One self-describing text record per checkpoint: header fields, h as
/// name/value pairs, theta as an explicit decimal array.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<String, StoreError> {
    let mut out = String::from("pbt-checkpoint v1\n");
    writeln!(out, "member_id {}", ckpt.member_id).unwrap();
    writeln!(out, "t {}", ckpt.t).unwrap();
    writeln!(out, "p {}", fmt_f64(ckpt.p)).unwrap();
    writeln!(out, "ancestor_id {}", ckpt.ancestor_id).unwrap();
    match ckpt.parent_member_id {
        Some(id) => writeln!(out, "parent_member_id {id}").unwrap(),
        None => writeln!(out, "parent_member_id none").unwrap(),
    }
    writeln!(out, "created_at {}", ckpt.created_at).unwrap();
    for (name, value) in ckpt.h.iter() {
        if !token_ok(name) {
            return Err(StoreError::Codec(format!("bad hyperparameter name {name:?}")));
        }
        match value {
            HyperValue::Num(v) => writeln!(out, "h {name} num {}", fmt_f64(*v)).unwrap(),
            HyperValue::Cat(tok) => {
                if !token_ok(tok) {
                    return Err(StoreError::Codec(format!("bad categorical token {tok:?}")));
                }
                writeln!(out, "h {name} cat {tok}").unwrap();
            }
        }
    }
    write!(out, "theta {}", ckpt.theta.len()).unwrap();
    for v in ckpt.theta.values() {
        write!(out, " {}", fmt_f64(*v)).unwrap();
    }
    out.push('\n');
    Ok(out)
}

pub fn decode_checkpoint(text: &str) -> Result<Checkpoint, StoreError> {
    let bad = |msg: &str| StoreError::Codec(msg.to_string());
    let mut lines = text.lines();
    if lines.next() != Some("pbt-checkpoint v1") {
        return Err(bad("missing header"));
    }

    let mut member_id = None;
    let mut t = None;
    let mut p = None;
    let mut ancestor_id = None;
    let mut parent: Option<Option<MemberId>> = None;
    let mut created_at = None;
    let mut h = HyperparamVector::default();
    let mut theta: Option<Vec<f64>> = None;

    for line in lines {
        let mut parts = line.split(' ');
        let key = parts.next().ok_or_else(|| bad("empty line"))?;
        match key {
            "member_id" => member_id = Some(parse_next(&mut parts, "member_id")?),
            "t" => t = Some(parse_next(&mut parts, "t")?),
            "p" => p = Some(parse_f64(parts.next(), "p")?),
            "ancestor_id" => ancestor_id = Some(parse_next(&mut parts, "ancestor_id")?),
            "parent_member_id" => {
                let v = parts.next().ok_or_else(|| bad("parent_member_id missing"))?;
                parent = Some(if v == "none" {
                    None
                } else {
                    Some(v.parse().map_err(|_| bad("bad parent_member_id"))?)
                });
            }
            "created_at" => created_at = Some(parse_next(&mut parts, "created_at")?),
            "h" => {
                let name = parts.next().ok_or_else(|| bad("h name missing"))?;
                let kind = parts.next().ok_or_else(|| bad("h kind missing"))?;
                let value = parts.next().ok_or_else(|| bad("h value missing"))?;
                let v = match kind {
                    "num" => HyperValue::Num(parse_f64(Some(value), "h")?),
                    "cat" => HyperValue::Cat(value.to_string()),
                    _ => return Err(bad("unknown h kind")),
                };
                h.set(name.to_string(), v);
            }
            "theta" => {
                let len: usize = parse_next(&mut parts, "theta length")?;
                let values: Vec<f64> = parts
                    .map(|s| parse_f64(Some(s), "theta"))
                    .collect::<Result<_, _>>()?;
                if values.len() != len {
                    return Err(bad("theta length mismatch"));
                }
                theta = Some(values);
            }
            other => return Err(StoreError::Codec(format!("unknown field {other:?}"))),
        }
    }

    Ok(Checkpoint {
        member_id: member_id.ok_or_else(|| bad("member_id missing"))?,
        t: t.ok_or_else(|| bad("t missing"))?,
        theta: ParamVector::new(theta.ok_or_else(|| bad("theta missing"))?)
            .map_err(|e| StoreError::Codec(e.to_string()))?,
        h,
        p: p.ok_or_else(|| bad("p missing"))?,
        ancestor_id: ancestor_id.ok_or_else(|| bad("ancestor_id missing"))?,
        parent_member_id: parent.ok_or_else(|| bad("parent_member_id missing"))?,
        created_at: created_at.ok_or_else(|| bad("created_at missing"))?,
    })
}

fn parse_next<'a, T: std::str::FromStr>(
    parts: &mut impl Iterator<Item = &'a str>,
    field: &str,
) -> Result<T, StoreError> {
    parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| StoreError::Codec(format!("bad {field}")))
}

fn parse_f64(part: Option<&str>, field: &str) -> Result<f64, StoreError> {
    part.and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| StoreError::Codec(format!("bad {field}")))
}
