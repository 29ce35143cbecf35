//! Cross-view correspondences.
//!
//! Matches are always computed between the *unedited* views; the edit stages
//! only consume them. On the synthetic testbed the matcher is an oracle that
//! maps grid points through the ground-truth homographies, standing in for a
//! learned dense matcher. The text format below is the exchange point for
//! plugging in an external matcher instead.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene::{warp_point, Scene};

#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    /// Pixel coordinates in view a.
    pub x: (f64, f64),
    /// Pixel coordinates in view b.
    pub y: (f64, f64),
    pub certainty: f64,
}

#[derive(Debug, Clone)]
pub struct MatchSet {
    pub view_a: u32,
    pub view_b: u32,
    pub matches: Vec<Match>,
}

impl MatchSet {
    /// Same correspondences oriented from b to a.
    pub fn reversed(&self) -> MatchSet {
        MatchSet {
            view_a: self.view_b,
            view_b: self.view_a,
            matches: self
                .matches
                .iter()
                .map(|m| Match { x: m.y, y: m.x, certainty: m.certainty })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchFilterConfig {
    /// Strict lower bound: only matches with certainty > this survive.
    pub certainty_min: f64,
    pub max_matches: usize,
}

impl Default for MatchFilterConfig {
    fn default() -> Self {
        MatchFilterConfig { certainty_min: 0.05, max_matches: 50_000 }
    }
}

impl MatchFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.certainty_min) {
            return Err(Error::InvalidInput(format!(
                "certainty_min must lie in [0, 1), got {}",
                self.certainty_min
            )));
        }
        if self.max_matches == 0 {
            return Err(Error::InvalidInput("max_matches must be positive".into()));
        }
        Ok(())
    }
}

/// Exact correspondences between two views of a synthetic scene: every grid
/// point of view a whose image under H_b * H_a^-1 lands inside view b becomes
/// a match with certainty 1.
pub fn oracle_matches(scene: &Scene, a: u32, b: u32, grid_step: usize) -> Result<MatchSet> {
    if grid_step == 0 {
        return Err(Error::InvalidInput("grid_step must be positive".into()));
    }
    if a == b {
        return Err(Error::InvalidInput(format!("cannot match view {a} against itself")));
    }
    let va = scene.view(a)?;
    let vb = scene.view(b)?;
    let inv_a = va
        .homography
        .try_inverse()
        .ok_or_else(|| Error::DegenerateGeometry(format!("view {a} homography not invertible")))?;
    let cross = vb.homography * inv_a;
    let (max_x, max_y) = ((scene.width() - 1) as f64, (scene.height() - 1) as f64);
    let mut matches = Vec::new();
    for gy in (0..scene.height()).step_by(grid_step) {
        for gx in (0..scene.width()).step_by(grid_step) {
            let p = (gx as f64, gy as f64);
            let Ok(q) = warp_point(&cross, p) else { continue };
            if (0.0..=max_x).contains(&q.0) && (0.0..=max_y).contains(&q.1) {
                matches.push(Match { x: p, y: q, certainty: 1.0 });
            }
        }
    }
    Ok(MatchSet { view_a: a, view_b: b, matches })
}

/// Replaces all certainties with seeded U[0,1) draws. The oracle always says
/// 1.0, which makes threshold and cap behavior untestable; this exists for
/// exercising the filter.
pub fn randomize_certainty(set: &mut MatchSet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in set.matches.iter_mut() {
        m.certainty = rng.gen::<f64>();
    }
}

/// Keeps matches with certainty strictly above the threshold; if more than
/// `max_matches` survive, the highest-certainty ones are kept (ties broken by
/// original position). Output order always follows input order.
pub fn filter_matches(set: &MatchSet, cfg: &MatchFilterConfig) -> MatchSet {
    let surviving: Vec<usize> = set
        .matches
        .iter()
        .enumerate()
        .filter(|(_, m)| m.certainty > cfg.certainty_min)
        .map(|(i, _)| i)
        .collect();
    let selected = if surviving.len() <= cfg.max_matches {
        surviving
    } else {
        let mut ranked = surviving;
        // Stable sort by descending certainty keeps earlier rows first on ties.
        ranked.sort_by(|&i, &j| {
            set.matches[j].certainty.total_cmp(&set.matches[i].certainty)
        });
        ranked.truncate(cfg.max_matches);
        ranked.sort_unstable();
        ranked
    };
    MatchSet {
        view_a: set.view_a,
        view_b: set.view_b,
        matches: selected.into_iter().map(|i| set.matches[i].clone()).collect(),
    }
}

// ── Pairwise count index ─────────────────────────────────────────────────────

/// Match counts per unordered view pair; lookups are symmetric and absent
/// pairs count as zero.
#[derive(Debug, Clone, Default)]
pub struct MatchCountIndex {
    counts: HashMap<(u32, u32), usize>,
}

impl MatchCountIndex {
    pub fn count(&self, a: u32, b: u32) -> usize {
        let key = (a.min(b), a.max(b));
        self.counts.get(&key).copied().unwrap_or(0)
    }

    /// Total matches between `v` and every view in `others`.
    pub fn total(&self, v: u32, others: &[u32]) -> usize {
        others.iter().filter(|&&o| o != v).map(|&o| self.count(v, o)).sum()
    }
}

pub fn match_count_index(sets: &[MatchSet]) -> MatchCountIndex {
    let mut counts = HashMap::new();
    for s in sets {
        let key = (s.view_a.min(s.view_b), s.view_a.max(s.view_b));
        *counts.entry(key).or_insert(0) += s.len();
    }
    MatchCountIndex { counts }
}

// ── Disk format ──────────────────────────────────────────────────────────────

/// Writes the plain-text match format: a header line carrying the pair ids and
/// view dimensions, then one `x_a y_a x_b y_b certainty` row per match.
pub fn save_matches(set: &MatchSet, width: usize, height: usize, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "# matches view_a={} view_b={} width={} height={}\n",
        set.view_a, set.view_b, width, height
    ));
    for m in &set.matches {
        out.push_str(&format!("{} {} {} {} {}\n", m.x.0, m.x.1, m.y.0, m.y.1, m.certainty));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a match file. Malformed rows are reported with their line number;
/// out-of-bounds coordinates are clamped to the view bounds and the match's
/// certainty zeroed, so downstream filtering drops them.
pub fn load_matches(path: &Path) -> Result<MatchSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty match file"))?;
    let (view_a, view_b, width, height) = parse_header(header)
        .ok_or_else(|| Error::parse(path, 1, format!("bad header: {header:?}")))?;
    let (max_x, max_y) = ((width - 1) as f64, (height - 1) as f64);
    let mut matches = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, i + 1, format!("{e}: {line:?}")))?;
        if fields.len() != 5 {
            return Err(Error::parse(path, i + 1, format!("expected 5 fields, got {}", fields.len())));
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, i + 1, "non-finite value"));
        }
        let mut m = Match {
            x: (fields[0], fields[1]),
            y: (fields[2], fields[3]),
            certainty: fields[4],
        };
        let in_bounds = |p: (f64, f64)| (0.0..=max_x).contains(&p.0) && (0.0..=max_y).contains(&p.1);
        if !in_bounds(m.x) || !in_bounds(m.y) {
            m.x = (m.x.0.clamp(0.0, max_x), m.x.1.clamp(0.0, max_y));
            m.y = (m.y.0.clamp(0.0, max_x), m.y.1.clamp(0.0, max_y));
            m.certainty = 0.0;
        }
        matches.push(m);
    }
    Ok(MatchSet { view_a, view_b, matches })
}

fn parse_header(line: &str) -> Option<(u32, u32, usize, usize)> {
    let rest = line.strip_prefix('#')?.trim();
    let mut view_a = None;
    let mut view_b = None;
    let mut width = None;
    let mut height = None;
    for token in rest.split_whitespace() {
        if token == "matches" {
            continue;
        }
        let (key, value) = token.split_once('=')?;
        match key {
            "view_a" => view_a = value.parse().ok(),
            "view_b" => view_b = value.parse().ok(),
            "width" => width = value.parse().ok(),
            "height" => height = value.parse().ok(),
            _ => return None,
        }
    }
    match (view_a, view_b, width, height) {
        (Some(a), Some(b), Some(w), Some(h)) if w > 0 && h > 0 => Some((a, b, w, h)),
        _ => None,
    }
}

/// Canonical per-pair match file name used by the CLI and experiment driver.
pub fn pair_file_name(a: u32, b: u32) -> String {
    format!("pair_{:03}_{:03}.txt", a.min(b), a.max(b))
}
