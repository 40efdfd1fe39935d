//! Trajectory storage, fixed-length windowing, and the information-asymmetric
//! views consumed by the skill model.
//!
//! Views per timestep `t`:
//! - `x_ll`: proprioceptive block, frame-stacked over `t-2..t` (first frame
//!   repeated at episode start);
//! - `x_ml`: proprio + object block, stacked the same way;
//! - `x_hl`: the full state concatenated over the lookahead `t..t+4` (final
//!   frame repeated at episode end).
//!
//! Actions are stored raw and normalized into `[-1, 1]` when windows are
//! materialized. Windows never cross episode boundaries and trailing
//! segments shorter than the window length are dropped.

use crate::simenv::{TraceStep, PROPRIO_DIM, STATE_DIM};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Per-dimension `(min, max)` raw action bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRanges(pub Vec<(f64, f64)>);

impl ActionRanges {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Affine map onto `[-1, 1]`. Out-of-range inputs are clipped and
    /// counted.
    pub fn normalize(&self, raw: &[f64], clipped: &mut u64) -> Vec<f64> {
        debug_assert_eq!(raw.len(), self.dim());
        raw.iter()
            .zip(&self.0)
            .map(|(&v, &(lo, hi))| {
                let n = 2.0 * (v - lo) / (hi - lo) - 1.0;
                if !(-1.0..=1.0).contains(&n) {
                    *clipped += 1;
                    n.clamp(-1.0, 1.0)
                } else {
                    n
                }
            })
            .collect()
    }

    pub fn denormalize(&self, normalized: &[f64]) -> Vec<f64> {
        debug_assert_eq!(normalized.len(), self.dim());
        normalized
            .iter()
            .zip(&self.0)
            .map(|(&n, &(lo, hi))| lo + (n + 1.0) * 0.5 * (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub profile: String,
    pub seed: u64,
    pub task: String,
    /// (top, bottom) object names for pairwise stacking data.
    pub pair: Option<(String, String)>,
}

/// One recorded episode: aligned state/action sequences plus optional expert
/// phase labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub phases: Option<Vec<String>>,
    pub meta: EpisodeMeta,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        if self.states.len() != n && self.states.len() != n + 1 {
            return Err(Error::Data(format!(
                "episode has {} states for {} actions",
                self.states.len(),
                n
            )));
        }
        if let Some(p) = &self.phases {
            if p.len() != n {
                return Err(Error::Data("phase labels misaligned with actions".into()));
            }
        }
        Ok(())
    }

    pub fn to_trace(&self) -> Vec<TraceStep> {
        (0..self.len())
            .map(|t| TraceStep {
                t,
                state: self.states[t].clone(),
                action: self.actions[t].clone(),
                reward: self.rewards.get(t).copied().unwrap_or(0.0),
                phase: self
                    .phases
                    .as_ref()
                    .map(|p| p[t].clone())
                    .unwrap_or_default(),
            })
            .collect()
    }

    pub fn from_trace(steps: &[TraceStep], meta: EpisodeMeta) -> TrajectoryRecord {
        TrajectoryRecord {
            states: steps.iter().map(|s| s.state.clone()).collect(),
            actions: steps.iter().map(|s| s.action.clone()).collect(),
            rewards: steps.iter().map(|s| s.reward).collect(),
            phases: Some(steps.iter().map(|s| s.phase.clone()).collect()),
            meta,
        }
    }
}

/// View-construction constants. Widths depend only on this configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewConfig {
    pub frame_stack: usize,
    pub lookahead: usize,
    pub proprio_dim: usize,
    pub state_dim: usize,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            frame_stack: 3,
            lookahead: 5,
            proprio_dim: PROPRIO_DIM,
            state_dim: STATE_DIM,
        }
    }
}

impl ViewConfig {
    pub fn x_ll_dim(&self) -> usize {
        self.frame_stack * self.proprio_dim
    }

    pub fn x_ml_dim(&self) -> usize {
        self.frame_stack * self.state_dim
    }

    pub fn x_hl_dim(&self) -> usize {
        self.lookahead * self.state_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Views {
    pub x_ll: Vec<f64>,
    pub x_ml: Vec<f64>,
    pub x_hl: Vec<f64>,
}

/// Build the three asymmetric views for step `t` of a record.
pub fn build_views(record: &TrajectoryRecord, t: usize, cfg: &ViewConfig) -> Views {
    let n = record.len();
    debug_assert!(t < n, "view index {t} out of range (len {n})");
    let state = |i: usize| &record.states[i.min(record.states.len().saturating_sub(1))];

    let mut x_ll = Vec::with_capacity(cfg.x_ll_dim());
    let mut x_ml = Vec::with_capacity(cfg.x_ml_dim());
    for back in (0..cfg.frame_stack).rev() {
        // Clamp below zero by repeating the first frame.
        let idx = t.saturating_sub(back);
        let s = state(idx);
        x_ll.extend_from_slice(&s[..cfg.proprio_dim]);
        x_ml.extend_from_slice(&s[..cfg.state_dim]);
    }

    let mut x_hl = Vec::with_capacity(cfg.x_hl_dim());
    for ahead in 0..cfg.lookahead {
        // Clamp at the end by repeating the final frame.
        let idx = (t + ahead).min(n - 1);
        x_hl.extend_from_slice(&state(idx)[..cfg.state_dim]);
    }
    Views { x_ll, x_ml, x_hl }
}

/// Frame-stacked views maintained incrementally during live rollouts.
/// `reset` seeds the stack by repeating the first observation, matching the
/// episode-start clamp rule of [`build_views`].
#[derive(Debug, Clone)]
pub struct OnlineViews {
    cfg: ViewConfig,
    frames: std::collections::VecDeque<Vec<f64>>,
}

impl OnlineViews {
    pub fn new(cfg: ViewConfig, first_obs: &[f64]) -> OnlineViews {
        let mut v = OnlineViews {
            cfg,
            frames: std::collections::VecDeque::with_capacity(cfg.frame_stack),
        };
        v.reset(first_obs);
        v
    }

    pub fn reset(&mut self, first_obs: &[f64]) {
        self.frames.clear();
        for _ in 0..self.cfg.frame_stack {
            self.frames.push_back(first_obs.to_vec());
        }
    }

    pub fn push(&mut self, obs: &[f64]) {
        self.frames.pop_front();
        self.frames.push_back(obs.to_vec());
    }

    pub fn x_ll(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cfg.x_ll_dim());
        for f in &self.frames {
            out.extend_from_slice(&f[..self.cfg.proprio_dim]);
        }
        out
    }

    pub fn x_ml(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cfg.x_ml_dim());
        for f in &self.frames {
            out.extend_from_slice(&f[..self.cfg.state_dim]);
        }
        out
    }
}

/// One training step inside a window: the three views plus the normalized
/// action taken at that step.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStep {
    pub views: Views,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    pub steps: Vec<WindowStep>,
    /// (episode index, start step) provenance inside the parent dataset.
    pub origin: (usize, usize),
}

impl TrajectoryWindow {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Materialize one window starting at `start`. Returns `None` when the
/// episode is too short.
pub fn make_window(
    record: &TrajectoryRecord,
    episode_index: usize,
    start: usize,
    len: usize,
    cfg: &ViewConfig,
    ranges: &ActionRanges,
    clipped: &mut u64,
) -> Option<TrajectoryWindow> {
    if start + len > record.len() {
        return None;
    }
    let steps = (start..start + len)
        .map(|t| WindowStep {
            views: build_views(record, t, cfg),
            action: ranges.normalize(&record.actions[t], clipped),
        })
        .collect();
    Some(TrajectoryWindow {
        steps,
        origin: (episode_index, start),
    })
}

/// All stride-aligned windows of one episode; trailing partials are dropped.
pub fn make_windows(
    record: &TrajectoryRecord,
    episode_index: usize,
    len: usize,
    stride: usize,
    cfg: &ViewConfig,
    ranges: &ActionRanges,
) -> Vec<TrajectoryWindow> {
    assert!(len > 0 && stride > 0);
    let mut out = Vec::new();
    let mut clipped = 0;
    let mut start = 0;
    while start + len <= record.len() {
        if let Some(w) = make_window(record, episode_index, start, len, cfg, ranges, &mut clipped) {
            out.push(w);
        }
        start += stride;
    }
    out
}

/// Dataset directory manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub action_ranges: ActionRanges,
    pub profile: String,
    pub task: String,
    pub episodes: Vec<String>,
    pub checksum: String,
}

/// An in-memory dataset loaded from a manifest directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub episodes: Vec<TrajectoryRecord>,
    pub root: PathBuf,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl Dataset {
    pub fn save(
        root: &Path,
        episodes: &[TrajectoryRecord],
        ranges: &ActionRanges,
        profile: &str,
        task: &str,
    ) -> Result<()> {
        std::fs::create_dir_all(root)?;
        let mut files = Vec::new();
        let mut hasher = Sha256::new();
        for (i, ep) in episodes.iter().enumerate() {
            ep.validate()?;
            let name = format!("ep{i:05}.jsonl");
            let path = root.join(&name);
            crate::simenv::write_episode_jsonl(&path, &ep.to_trace())?;
            hasher.update(std::fs::read(&path)?);
            files.push(name);
        }
        let manifest = Manifest {
            action_ranges: ranges.clone(),
            profile: profile.to_string(),
            task: task.to_string(),
            episodes: files,
            checksum: format!("{:x}", hasher.finalize()),
        };
        let mf = std::fs::File::create(root.join(MANIFEST_NAME))?;
        serde_json::to_writer_pretty(mf, &manifest)?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Dataset> {
        let mf_path = root.join(MANIFEST_NAME);
        let manifest: Manifest = serde_json::from_reader(std::fs::File::open(&mf_path).map_err(
            |e| Error::Config(format!("cannot open dataset manifest {}: {e}", mf_path.display())),
        )?)?;
        let mut episodes = Vec::with_capacity(manifest.episodes.len());
        for (i, name) in manifest.episodes.iter().enumerate() {
            let steps = crate::simenv::read_episode_jsonl(&root.join(name))?;
            // All-pairs datasets tag pair and profile in the file name:
            // ep00000_<top>_<bottom>_<profile>.jsonl.
            let stem = name.trim_end_matches(".jsonl");
            let parts: Vec<&str> = stem.split('_').collect();
            let (pair, profile) = if parts.len() == 4 {
                (
                    Some((parts[1].to_string(), parts[2].to_string())),
                    parts[3].to_string(),
                )
            } else {
                (None, manifest.profile.clone())
            };
            let rec = TrajectoryRecord::from_trace(
                &steps,
                EpisodeMeta {
                    profile,
                    seed: i as u64,
                    task: manifest.task.clone(),
                    pair,
                },
            );
            rec.validate()?;
            episodes.push(rec);
        }
        Ok(Dataset {
            manifest,
            episodes,
            root: root.to_path_buf(),
        })
    }

    /// Uniformly sample a batch of windows (stride-aligned starts).
    pub fn sample_windows(
        &self,
        batch: usize,
        len: usize,
        stride: usize,
        cfg: &ViewConfig,
        rng: &mut impl rand::Rng,
    ) -> Vec<TrajectoryWindow> {
        let mut slots: Vec<(usize, usize)> = Vec::new();
        for (e, ep) in self.episodes.iter().enumerate() {
            let mut start = 0;
            while start + len <= ep.len() {
                slots.push((e, start));
                start += stride;
            }
        }
        assert!(!slots.is_empty(), "dataset has no complete windows");
        let mut clipped = 0;
        (0..batch)
            .map(|_| {
                let (e, start) = slots[rng.gen_range(0..slots.len())];
                make_window(
                    &self.episodes[e],
                    e,
                    start,
                    len,
                    cfg,
                    &self.manifest.action_ranges,
                    &mut clipped,
                )
                .expect("slot enumerated above")
            })
            .collect()
    }
}
