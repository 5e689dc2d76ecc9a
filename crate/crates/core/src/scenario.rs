//! Scenario configuration, node placement and per-episode randomisation.
//!
//! Node indices follow contiguous per-cell blocks: cell `m` owns APs
//! `m*A..(m+1)*A`, users `m*K..(m+1)*K` and targets `m*Q..(m+1)*Q`.
//! Cell `m` also owns subband `m`.

use std::ops::Range;
use std::path::Path;

use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::TargetState;
use crate::rng::{substream, Stream};

pub type Position = Vector2<f64>;

fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// Immutable episode configuration.
///
/// Serialized keys use the short symbol names (`m`, `r`, `a`, `k`, `q`, ...)
/// so configuration files read like the parameter table they come from.
/// All quantities are linear SI units (W, Hz, s, m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "m")]
    pub cells: usize,
    #[serde(rename = "r")]
    pub clusters: usize,
    #[serde(rename = "a")]
    pub aps_per_cell: usize,
    #[serde(rename = "k")]
    pub users_per_cell: usize,
    #[serde(rename = "q")]
    pub targets_per_cell: usize,
    pub n_tx: usize,
    #[serde(rename = "b")]
    pub subcarriers: usize,
    #[serde(rename = "l")]
    pub slots: usize,
    #[serde(rename = "n_t")]
    pub frames: usize,
    pub delta_f: f64,
    pub f_c: f64,
    /// Slot duration; `1/delta_f` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_sym: Option<f64>,
    /// Frame duration; `L * t_sym` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_bar: Option<f64>,
    pub p_max: f64,
    pub p_ce: f64,
    pub d_ce: usize,
    pub m_max: usize,
    pub rho_ak: f64,
    pub kappa_bar: f64,
    pub delta_q: f64,
    pub sigma_rcs: f64,
    pub g_r: f64,
    pub n0: f64,
    pub area: f64,
    pub v_range: (f64, f64),
    /// Overhead normaliser; `8 M (A-1) N_tx K` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub o: Option<f64>,
    /// Base per-cell overhead; `0.7 o` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub o_bar_m: Option<f64>,
    pub u_k_c_min: f64,
    pub u_k_c_max: f64,
    pub u_q_rp_min: f64,
    pub u_q_rp_max: f64,
    pub u_q_rv_min: f64,
    pub u_q_rv_max: f64,
    pub rng_seed: u64,

    /// Number of discrete beam angles in the steering grid.
    pub delta_theta: usize,
    /// Frame-0 belief standard deviations (position m, velocity m/s).
    pub sigma_p0: f64,
    pub sigma_v0: f64,
    /// Floor applied to the total utility before the reward logarithm.
    pub reward_floor: f64,
    /// Exponent applied to each squared AP-target distance in the
    /// round-trip fading coefficient. 2 reproduces the printed expression,
    /// 1 is the conventional bistatic radar equation.
    pub radar_range_power: i32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl ScenarioConfig {
    /// Main system parameters of the reference deployment.
    pub fn reference() -> Self {
        Self {
            cells: 4,
            clusters: 2,
            aps_per_cell: 3,
            users_per_cell: 4,
            targets_per_cell: 4,
            n_tx: 4,
            subcarriers: 16,
            slots: 100,
            frames: 20,
            delta_f: 156.25e3,
            f_c: 5.89e9,
            t_sym: None,
            t_bar: None,
            p_max: dbm_to_watt(40.0),
            p_ce: dbm_to_watt(25.0),
            d_ce: 1,
            m_max: 2,
            rho_ak: 0.98,
            kappa_bar: 4.0,
            delta_q: 100.0,
            sigma_rcs: 1.0,
            g_r: 1.0,
            n0: dbm_to_watt(-174.0),
            area: 600.0,
            v_range: (20.0, 80.0),
            o: None,
            o_bar_m: None,
            u_k_c_min: 0.05,
            u_k_c_max: 0.35,
            u_q_rp_min: 5e-5,
            u_q_rp_max: 2.0,
            u_q_rv_min: 5e-5,
            u_q_rv_max: 2.0,
            rng_seed: 0,
            delta_theta: 8,
            sigma_p0: 10.0,
            sigma_v0: 5.0,
            reward_floor: 1e-3,
            radar_range_power: 2,
        }
    }

    /// Two cells, two APs, two users and two targets per cell.
    pub fn desk() -> Self {
        Self {
            cells: 2,
            clusters: 2,
            aps_per_cell: 2,
            users_per_cell: 2,
            targets_per_cell: 2,
            frames: 20,
            m_max: 2,
            ..Self::reference()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let counts = [
            ("m", self.cells),
            ("r", self.clusters),
            ("a", self.aps_per_cell),
            ("k", self.users_per_cell),
            ("q", self.targets_per_cell),
            ("n_tx", self.n_tx),
            ("b", self.subcarriers),
            ("l", self.slots),
            ("n_t", self.frames),
            ("d_ce", self.d_ce),
            ("m_max", self.m_max),
            ("delta_theta", self.delta_theta),
        ];
        for (name, v) in counts {
            if v == 0 {
                return fail(format!("{name} must be strictly positive"));
            }
        }
        if self.clusters > self.cells {
            return fail(format!("r = {} exceeds m = {}", self.clusters, self.cells));
        }
        if self.m_max > self.cells {
            return fail(format!("m_max = {} exceeds m = {}", self.m_max, self.cells));
        }
        if self.clusters * self.m_max < self.cells {
            return fail(format!(
                "r * m_max = {} cannot cover m = {} cells",
                self.clusters * self.m_max,
                self.cells
            ));
        }
        if self.d_ce * self.users_per_cell >= self.slots {
            return fail(format!(
                "d_ce * k = {} leaves no transmission slots out of l = {}",
                self.d_ce * self.users_per_cell,
                self.slots
            ));
        }
        if self.d_ce * self.users_per_cell * self.m_max > self.slots {
            return fail(format!(
                "d_ce * k * m_max = {} exceeds l = {}; federated frames would be infeasible",
                self.d_ce * self.users_per_cell * self.m_max,
                self.slots
            ));
        }
        let positive = [
            ("delta_f", self.delta_f),
            ("f_c", self.f_c),
            ("p_max", self.p_max),
            ("p_ce", self.p_ce),
            ("sigma_rcs", self.sigma_rcs),
            ("g_r", self.g_r),
            ("n0", self.n0),
            ("area", self.area),
            ("sigma_p0", self.sigma_p0),
            ("sigma_v0", self.sigma_v0),
            ("reward_floor", self.reward_floor),
            ("u_q_rp_min", self.u_q_rp_min),
            ("u_q_rv_min", self.u_q_rv_min),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be finite and strictly positive, got {v}"));
            }
        }
        for (name, v) in [("t_sym", self.t_sym), ("t_bar", self.t_bar), ("o", self.o)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return fail(format!("{name} must be finite and strictly positive, got {v}"));
                }
            }
        }
        if let Some(v) = self.o_bar_m {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("o_bar_m must be finite and strictly positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.rho_ak) {
            return fail(format!("rho_ak = {} outside [0, 1]", self.rho_ak));
        }
        if !(self.kappa_bar.is_finite() && self.kappa_bar >= 0.0) {
            return fail(format!("kappa_bar = {} must be nonnegative", self.kappa_bar));
        }
        if !(self.delta_q.is_finite() && self.delta_q >= 0.0) {
            return fail(format!("delta_q = {} must be nonnegative", self.delta_q));
        }
        let (vlo, vhi) = self.v_range;
        if !(vlo.is_finite() && vhi.is_finite() && 0.0 <= vlo && vlo <= vhi) {
            return fail(format!("v_range = ({vlo}, {vhi}) must satisfy 0 <= lo <= hi"));
        }
        for (name, lo, hi) in [
            ("u_k_c", self.u_k_c_min, self.u_k_c_max),
            ("u_q_rp", self.u_q_rp_min, self.u_q_rp_max),
            ("u_q_rv", self.u_q_rv_min, self.u_q_rv_max),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return fail(format!("{name} bounds ({lo}, {hi}) must satisfy min < max"));
            }
        }
        if !(1..=4).contains(&self.radar_range_power) {
            return fail(format!(
                "radar_range_power = {} outside 1..=4",
                self.radar_range_power
            ));
        }
        Ok(())
    }

    pub fn t_sym(&self) -> f64 {
        self.t_sym.unwrap_or(1.0 / self.delta_f)
    }

    pub fn t_bar(&self) -> f64 {
        self.t_bar.unwrap_or(self.slots as f64 * self.t_sym())
    }

    pub fn overhead_normalizer(&self) -> f64 {
        self.o.unwrap_or_else(|| {
            8.0 * (self.cells * (self.aps_per_cell - 1) * self.n_tx * self.users_per_cell) as f64
        })
    }

    pub fn base_overhead(&self) -> f64 {
        self.o_bar_m.unwrap_or_else(|| 0.7 * self.overhead_normalizer())
    }

    /// Per-subcarrier noise power, used for both AP and user receivers.
    pub fn noise_power(&self) -> f64 {
        self.n0 * self.delta_f
    }

    pub fn total_aps(&self) -> usize {
        self.cells * self.aps_per_cell
    }

    pub fn total_users(&self) -> usize {
        self.cells * self.users_per_cell
    }

    pub fn total_targets(&self) -> usize {
        self.cells * self.targets_per_cell
    }

    pub fn aps(&self, cell: usize) -> Range<usize> {
        cell * self.aps_per_cell..(cell + 1) * self.aps_per_cell
    }

    pub fn users(&self, cell: usize) -> Range<usize> {
        cell * self.users_per_cell..(cell + 1) * self.users_per_cell
    }

    pub fn targets(&self, cell: usize) -> Range<usize> {
        cell * self.targets_per_cell..(cell + 1) * self.targets_per_cell
    }

    pub fn cell_of_ap(&self, ap: usize) -> usize {
        ap / self.aps_per_cell
    }

    pub fn cell_of_user(&self, user: usize) -> usize {
        user / self.users_per_cell
    }

    pub fn cell_of_target(&self, target: usize) -> usize {
        target / self.targets_per_cell
    }

    /// Carrier frequency of subband `i` (0-based).
    pub fn subband_carrier(&self, i: usize) -> f64 {
        self.f_c + (i * self.subcarriers) as f64 * self.delta_f
    }

    /// Cell grid shape `(columns, rows)` used to tile the square area.
    pub fn cell_grid(&self) -> (usize, usize) {
        let cols = (self.cells as f64).sqrt().ceil() as usize;
        let rows = self.cells.div_ceil(cols);
        (cols, rows)
    }

    /// Axis-aligned bounds `(min, max)` of cell `m`.
    pub fn cell_bounds(&self, cell: usize) -> (Position, Position) {
        let (cols, rows) = self.cell_grid();
        let w = self.area / cols as f64;
        let h = self.area / rows as f64;
        let cx = (cell % cols) as f64;
        let cy = (cell / cols) as f64;
        (
            Position::new(cx * w, cy * h),
            Position::new((cx + 1.0) * w, (cy + 1.0) * h),
        )
    }
}

/// Node placement and noise levels for one deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub ap_positions: Vec<Position>,
    pub user_positions: Vec<Position>,
    pub target_states: Vec<TargetState>,
    /// Receiver noise power at each AP (W).
    pub ap_noise: Vec<f64>,
    /// Receiver noise power at each user (W).
    pub user_noise: Vec<f64>,
}

impl Scenario {
    pub fn cfg(&self) -> &ScenarioConfig {
        &self.config
    }
}

pub fn build_scenario(config: ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let mut rng = substream(seed, Stream::Scenario);
    let cfg = &config;

    let mut ap_positions = Vec::with_capacity(cfg.total_aps());
    let mut user_positions = Vec::with_capacity(cfg.total_users());
    let mut target_states = Vec::with_capacity(cfg.total_targets());

    let ap_cols = (cfg.aps_per_cell as f64).sqrt().ceil() as usize;
    let ap_rows = cfg.aps_per_cell.div_ceil(ap_cols);
    for m in 0..cfg.cells {
        let (lo, hi) = cfg.cell_bounds(m);
        let span = hi - lo;
        for i in 0..cfg.aps_per_cell {
            let gx = (i % ap_cols) as f64 + 0.5;
            let gy = (i / ap_cols) as f64 + 0.5;
            ap_positions.push(Position::new(
                lo.x + gx * span.x / ap_cols as f64,
                lo.y + gy * span.y / ap_rows as f64,
            ));
        }
    }
    for m in 0..cfg.cells {
        let (lo, hi) = cfg.cell_bounds(m);
        for _ in 0..cfg.users_per_cell {
            user_positions.push(Position::new(
                rng.random_range(lo.x..hi.x),
                rng.random_range(lo.y..hi.y),
            ));
        }
    }
    let (vlo, vhi) = cfg.v_range;
    for m in 0..cfg.cells {
        let (lo, hi) = cfg.cell_bounds(m);
        for _ in 0..cfg.targets_per_cell {
            let pos = Position::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
            let speed = if vhi > vlo { rng.random_range(vlo..=vhi) } else { vlo };
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            let vel = Position::new(speed * heading.cos(), speed * heading.sin());
            target_states.push(TargetState::new(pos, vel));
        }
    }

    let noise = cfg.noise_power();
    Ok(Scenario {
        ap_noise: vec![noise; cfg.total_aps()],
        user_noise: vec![noise; cfg.total_users()],
        config,
        ap_positions,
        user_positions,
        target_states,
    })
}

/// Offset every node position by up to 1% of the area per axis.
pub fn perturb_positions<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Scenario {
    perturb_positions_with(scenario, || rng.random_range(-1.0..=1.0))
}

/// Like [`perturb_positions`], drawing unit offsets in `[-1, 1]` from `unit_offset`.
pub fn perturb_positions_with(scenario: &Scenario, mut unit_offset: impl FnMut() -> f64) -> Scenario {
    let area = scenario.config.area;
    let bound = 0.01 * area;
    let mut shift = |p: &Position| {
        let dx = unit_offset().clamp(-1.0, 1.0) * bound;
        let dy = unit_offset().clamp(-1.0, 1.0) * bound;
        Position::new((p.x + dx).clamp(0.0, area), (p.y + dy).clamp(0.0, area))
    };
    let mut out = scenario.clone();
    for p in out.ap_positions.iter_mut() {
        *p = shift(p);
    }
    for p in out.user_positions.iter_mut() {
        *p = shift(p);
    }
    for t in out.target_states.iter_mut() {
        t.pos = shift(&t.pos);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts() {
        let s = build_scenario(ScenarioConfig::reference(), 7).unwrap();
        assert_eq!(s.config.cells, 4);
        assert_eq!(s.ap_positions.len(), 12);
        assert_eq!(s.user_positions.len(), 16);
        assert_eq!(s.target_states.len(), 16);
    }

    #[test]
    fn zero_m_max_rejected() {
        let cfg = ScenarioConfig { m_max: 0, ..ScenarioConfig::reference() };
        let err = build_scenario(cfg, 7).unwrap_err();
        assert!(err.to_string().contains("m_max"), "{err}");
    }

    #[test]
    fn other_invariants_rejected() {
        let bad = [
            ScenarioConfig { clusters: 5, ..ScenarioConfig::reference() },
            ScenarioConfig { rho_ak: 1.5, ..ScenarioConfig::reference() },
            ScenarioConfig { slots: 4, ..ScenarioConfig::reference() },
            ScenarioConfig { p_max: 0.0, ..ScenarioConfig::reference() },
            ScenarioConfig { m_max: 1, ..ScenarioConfig::reference() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = build_scenario(ScenarioConfig::reference(), 7).unwrap();
        let b = build_scenario(ScenarioConfig::reference(), 7).unwrap();
        let c = build_scenario(ScenarioConfig::reference(), 8).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        assert_eq!(ja, serde_json::to_string(&b).unwrap());
        assert_ne!(ja, serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn nodes_inside_their_cells() {
        let s = build_scenario(ScenarioConfig::reference(), 3).unwrap();
        let cfg = &s.config;
        for m in 0..cfg.cells {
            let (lo, hi) = cfg.cell_bounds(m);
            let inside = |p: &Position| p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
            assert!(cfg.aps(m).all(|a| inside(&s.ap_positions[a])));
            assert!(cfg.users(m).all(|k| inside(&s.user_positions[k])));
            assert!(cfg.targets(m).all(|q| inside(&s.target_states[q].pos)));
            for q in cfg.targets(m) {
                let v = s.target_states[q].vel.norm();
                assert!(v >= cfg.v_range.0 - 1e-9 && v <= cfg.v_range.1 + 1e-9);
            }
        }
        assert!(s.ap_noise.iter().all(|&n| (n - cfg.n0 * cfg.delta_f).abs() < 1e-30));
    }

    #[test]
    fn perturbation_bounds() {
        let s = build_scenario(ScenarioConfig::reference(), 11).unwrap();
        let mut rng = substream(5, Stream::Perturbation);
        for _ in 0..20 {
            let p = perturb_positions(&s, &mut rng);
            let pairs = s
                .ap_positions
                .iter()
                .zip(&p.ap_positions)
                .chain(s.user_positions.iter().zip(&p.user_positions));
            for (a, b) in pairs {
                assert!((a.x - b.x).abs() <= 6.0 + 1e-12 && (a.y - b.y).abs() <= 6.0 + 1e-12);
                assert!((0.0..=600.0).contains(&b.x) && (0.0..=600.0).contains(&b.y));
            }
            for (a, b) in s.target_states.iter().zip(&p.target_states) {
                assert_eq!(a.vel, b.vel);
                assert!((a.pos - b.pos).amax() <= 6.0 + 1e-12);
            }
        }
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let s = build_scenario(ScenarioConfig::reference(), 11).unwrap();
        assert_eq!(perturb_positions_with(&s, || 0.0), s);
    }

    #[test]
    fn clamped_at_area_edge() {
        let mut s = build_scenario(ScenarioConfig::desk(), 1).unwrap();
        s.user_positions[0] = Position::new(0.0, 600.0);
        let p = perturb_positions_with(&s, || -1.0);
        assert_eq!(p.user_positions[0], Position::new(0.0, 594.0));
    }

    #[test]
    fn toml_roundtrip_and_unknown_keys() {
        let cfg = ScenarioConfig::desk();
        let text = cfg.to_toml_string();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = ScenarioConfig::from_toml_str("m = 2\nr = 1\na = 2\nm_max = 2\n").unwrap();
        assert_eq!(partial.cells, 2);
        assert_eq!(partial.users_per_cell, 4);
        assert!(matches!(
            ScenarioConfig::from_toml_str("m = 2\nbogus = 1\n"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn derived_defaults() {
        let cfg = ScenarioConfig::reference();
        assert!((cfg.t_sym() - 6.4e-6).abs() < 1e-15);
        assert!((cfg.t_bar() - 6.4e-4).abs() < 1e-12);
        assert_eq!(cfg.overhead_normalizer(), 1024.0);
        assert!((cfg.base_overhead() - 716.8).abs() < 1e-9);
        assert!((cfg.p_max - 10.0).abs() < 1e-12);
    }
}
