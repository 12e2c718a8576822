//! Tracking-by-detection in 3D.
//!
//! Every track carries a constant-acceleration Kalman filter over
//! `[position, velocity, acceleration]`. Per frame all live tracks are
//! predicted, associated to the new observations by Euclidean distance inside
//! a gate, corrected, and their lifecycle counters advanced.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::FrameIndex;

pub type StateVector = SVector<f64, 9>;
pub type StateCovariance = SMatrix<f64, 9, 9>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("innovation covariance is singular (condition number {0:e})")]
    SingularInnovation(f64),
    #[error("frame {got} does not follow frame {previous}")]
    NonMonotonicFrame { previous: FrameIndex, got: FrameIndex },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Dead,
}

impl TrackStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackStatus::Tentative => "tentative",
            TrackStatus::Confirmed => "confirmed",
            TrackStatus::Dead => "dead",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignmentMode {
    #[default]
    Greedy,
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub fps: f64,
    /// Spectral density scale of the white-noise-jerk process model, m/s³.
    pub sigma_jerk: f64,
    /// Isotropic measurement standard deviation, m.
    pub measurement_sigma: f64,
    pub initial_velocity_sigma: f64,
    pub initial_acceleration_sigma: f64,
    /// Association gate, m.
    pub gate: f64,
    /// Consecutive hits to confirm a tentative track.
    pub confirm_hits: u32,
    /// Consecutive misses before a track dies.
    pub max_misses: u32,
    pub assignment: AssignmentMode,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            sigma_jerk: 20.0,
            measurement_sigma: 0.05,
            initial_velocity_sigma: 2.0,
            initial_acceleration_sigma: 10.0,
            gate: 0.5,
            confirm_hits: 3,
            max_misses: 15,
            assignment: AssignmentMode::Greedy,
        }
    }
}

impl TrackerConfig {
    pub fn measurement_covariance(&self) -> Matrix3<f64> {
        Matrix3::identity() * self.measurement_sigma * self.measurement_sigma
    }
}

/// `[I dt·I ½dt²·I; 0 I dt·I; 0 0 I]`
pub fn transition(dt: f64) -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..3 {
        f[(i, 3 + i)] = dt;
        f[(i, 6 + i)] = 0.5 * dt * dt;
        f[(3 + i, 6 + i)] = dt;
    }
    f
}

/// Discretized continuous white-noise-jerk covariance with density `σ_j²`.
pub fn process_noise(dt: f64, sigma_jerk: f64) -> StateCovariance {
    let q = sigma_jerk * sigma_jerk;
    let (d2, d3, d4, d5) = (dt * dt, dt.powi(3), dt.powi(4), dt.powi(5));
    let block = [[d5 / 20.0, d4 / 8.0, d3 / 6.0], [d4 / 8.0, d3 / 3.0, d2 / 2.0], [d3 / 6.0, d2 / 2.0, dt]];
    let mut m = StateCovariance::zeros();
    for (bi, row) in block.iter().enumerate() {
        for (bj, v) in row.iter().enumerate() {
            for axis in 0..3 {
                m[(3 * bi + axis, 3 * bj + axis)] = q * v;
            }
        }
    }
    m
}

fn symmetrize(p: &mut StateCovariance) {
    *p = (*p + p.transpose()) * 0.5;
}

/// Kalman state of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: u64,
    pub state: StateVector,
    pub covariance: StateCovariance,
    pub status: TrackStatus,
    pub hits: u32,
    pub consecutive_hits: u32,
    pub misses: u32,
    pub last_frame: FrameIndex,
    /// `(frame, position, observed)`; unobserved entries hold predictions.
    pub history: Vec<(FrameIndex, Vector3<f64>, bool)>,
}

impl TrackState {
    pub fn new(id: u64, frame: FrameIndex, position: Vector3<f64>, config: &TrackerConfig) -> Self {
        let mut state = StateVector::zeros();
        state.fixed_rows_mut::<3>(0).copy_from(&position);
        let mut covariance = StateCovariance::zeros();
        let vars = [
            config.measurement_sigma.powi(2),
            config.initial_velocity_sigma.powi(2),
            config.initial_acceleration_sigma.powi(2),
        ];
        for (block, var) in vars.iter().enumerate() {
            for axis in 0..3 {
                covariance[(3 * block + axis, 3 * block + axis)] = *var;
            }
        }
        Self {
            id,
            state,
            covariance,
            status: TrackStatus::Tentative,
            hits: 1,
            consecutive_hits: 1,
            misses: 0,
            last_frame: frame,
            history: vec![(frame, position, true)],
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(3).into_owned()
    }

    pub fn acceleration(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(6).into_owned()
    }

    /// Constant-acceleration prediction over `dt` seconds.
    pub fn predict(&self, dt: f64, sigma_jerk: f64) -> Self {
        let f = transition(dt);
        let mut covariance = f * self.covariance * f.transpose() + process_noise(dt, sigma_jerk);
        symmetrize(&mut covariance);
        Self { state: f * self.state, covariance, ..self.clone() }
    }

    /// Position-only correction in Joseph form.
    pub fn update(&self, z: &Vector3<f64>, r: &Matrix3<f64>) -> Result<Self, TrackerError> {
        let p = &self.covariance;
        let p_pos: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
        let s = p_pos + r;
        let s = (s + s.transpose()) * 0.5;
        let eig = s.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if cond > 1e12 {
            return Err(TrackerError::SingularInnovation(cond));
        }
        let s_inv = s.try_inverse().ok_or(TrackerError::SingularInnovation(cond))?;

        // P·Hᵀ is the first three columns of P
        let pht: SMatrix<f64, 9, 3> = p.fixed_view::<9, 3>(0, 0).into_owned();
        let gain = pht * s_inv;
        let innovation = z - self.position();
        let state = self.state + gain * innovation;

        let mut ikh = StateCovariance::identity();
        for i in 0..9 {
            for j in 0..3 {
                ikh[(i, j)] -= gain[(i, j)];
            }
        }
        let mut covariance = ikh * p * ikh.transpose() + gain * r * gain.transpose();
        symmetrize(&mut covariance);
        Ok(Self { state, covariance, ..self.clone() })
    }
}

/// Result of matching predicted tracks to observations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// `(track index, observation index)`
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_observations: Vec<usize>,
}

/// Greedy nearest-first association: candidate pairs within `gate` are taken
/// in ascending distance, each track and observation at most once.
pub fn associate(tracks: &[Vector3<f64>], observations: &[Vector3<f64>], gate: f64) -> Association {
    let distances: Vec<Vec<f64>> =
        tracks.iter().map(|t| observations.iter().map(|o| (t - o).norm()).collect()).collect();
    associate_distances(&distances, observations.len(), gate)
}

/// Greedy association on a precomputed `tracks × observations` distance table.
pub fn associate_distances(distances: &[Vec<f64>], n_observations: usize, gate: f64) -> Association {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, row) in distances.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            if d <= gate {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; distances.len()];
    let mut obs_used = vec![false; n_observations];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !track_used[i] && !obs_used[j] {
            track_used[i] = true;
            obs_used[j] = true;
            pairs.push((i, j));
        }
    }
    finish_association(pairs, &track_used, &obs_used)
}

/// Minimum-total-distance assignment among gated pairs (Hungarian method).
pub fn associate_optimal(tracks: &[Vector3<f64>], observations: &[Vector3<f64>], gate: f64) -> Association {
    let n = tracks.len().max(observations.len());
    let mut track_used = vec![false; tracks.len()];
    let mut obs_used = vec![false; observations.len()];
    if n == 0 {
        return finish_association(Vec::new(), &track_used, &obs_used);
    }
    // gated or padded cells cost more than any full set of real pairs
    let forbidden = gate * (n as f64 + 1.0) + 1.0;
    let cost = |i: usize, j: usize| -> f64 {
        if i < tracks.len() && j < observations.len() {
            let d = (tracks[i] - observations[j]).norm();
            if d <= gate {
                return d;
            }
        }
        forbidden
    };
    let assignment = hungarian(n, cost);
    let mut pairs = Vec::new();
    for (i, j) in assignment.into_iter().enumerate() {
        if i < tracks.len() && j < observations.len() && (tracks[i] - observations[j]).norm() <= gate {
            track_used[i] = true;
            obs_used[j] = true;
            pairs.push((i, j));
        }
    }
    finish_association(pairs, &track_used, &obs_used)
}

fn finish_association(mut pairs: Vec<(usize, usize)>, track_used: &[bool], obs_used: &[bool]) -> Association {
    pairs.sort();
    Association {
        pairs,
        unmatched_tracks: (0..track_used.len()).filter(|&i| !track_used[i]).collect(),
        unmatched_observations: (0..obs_used.len()).filter(|&j| !obs_used[j]).collect(),
    }
}

/// Square assignment by potentials, O(n³). Returns the column for each row.
fn hungarian(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// One row of tracker output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub frame: FrameIndex,
    pub track_id: u64,
    pub status: TrackStatus,
    pub position: Vector3<f64>,
}

/// Sequential multi-track state machine.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    active: Vec<TrackState>,
    finished: Vec<TrackState>,
    next_id: u64,
    last_frame: Option<FrameIndex>,
}

/// What [`Tracker::step`] did with the observations of one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepOutput {
    /// Track id each observation was assigned to, by observation index.
    pub observation_tracks: Vec<u64>,
    /// Tracks updated or born this frame.
    pub records: Vec<TrackRecord>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self { config, active: Vec::new(), finished: Vec::new(), next_id: 1, last_frame: None }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live (tentative or confirmed) tracks.
    pub fn tracks(&self) -> &[TrackState] {
        &self.active
    }

    pub fn finished(&self) -> &[TrackState] {
        &self.finished
    }

    /// All tracks ever created, ordered by id.
    pub fn all_tracks(&self) -> Vec<&TrackState> {
        let mut all: Vec<&TrackState> = self.active.iter().chain(&self.finished).collect();
        all.sort_by_key(|t| t.id);
        all
    }

    /// Advances to `frame`: predict, associate, update, spawn, retire.
    pub fn step(&mut self, frame: FrameIndex, observations: &[Vector3<f64>]) -> Result<StepOutput, TrackerError> {
        if let Some(prev) = self.last_frame {
            if frame <= prev {
                return Err(TrackerError::NonMonotonicFrame { previous: prev, got: frame });
            }
            let dt = (frame - prev) as f64 / self.config.fps;
            for t in self.active.iter_mut() {
                *t = t.predict(dt, self.config.sigma_jerk);
            }
        }
        self.last_frame = Some(frame);

        let predicted: Vec<Vector3<f64>> = self.active.iter().map(TrackState::position).collect();
        let assoc = match self.config.assignment {
            AssignmentMode::Greedy => associate(&predicted, observations, self.config.gate),
            AssignmentMode::Optimal => associate_optimal(&predicted, observations, self.config.gate),
        };

        let r = self.config.measurement_covariance();
        let mut observation_tracks = vec![0u64; observations.len()];
        let mut records = Vec::new();
        let mut hit = vec![false; self.active.len()];
        for &(ti, oi) in &assoc.pairs {
            let track = &mut self.active[ti];
            *track = match track.update(&observations[oi], &r) {
                Ok(t) => t,
                Err(_) => {
                    // treat as a miss; the observation spawns a new track below
                    continue;
                }
            };
            hit[ti] = true;
            track.hits += 1;
            track.consecutive_hits += 1;
            track.misses = 0;
            track.last_frame = frame;
            if track.status == TrackStatus::Tentative && track.consecutive_hits >= self.config.confirm_hits {
                track.status = TrackStatus::Confirmed;
            }
            let pos = track.position();
            track.history.push((frame, pos, true));
            observation_tracks[oi] = track.id;
            records.push(TrackRecord { frame, track_id: track.id, status: track.status, position: pos });
        }

        for (ti, track) in self.active.iter_mut().enumerate() {
            if hit[ti] {
                continue;
            }
            track.misses += 1;
            track.consecutive_hits = 0;
            let pos = track.position();
            track.history.push((frame, pos, false));
            if track.misses >= self.config.max_misses {
                track.status = TrackStatus::Dead;
            }
        }

        for (oi, obs) in observations.iter().enumerate() {
            if observation_tracks[oi] != 0 {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let mut track = TrackState::new(id, frame, *obs, &self.config);
            if track.consecutive_hits >= self.config.confirm_hits {
                track.status = TrackStatus::Confirmed;
            }
            observation_tracks[oi] = id;
            records.push(TrackRecord { frame, track_id: id, status: track.status, position: *obs });
            self.active.push(track);
        }

        let (dead, live): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.active).into_iter().partition(|t| t.status == TrackStatus::Dead);
        self.active = live;
        self.finished.extend(dead);

        records.sort_by_key(|r| r.track_id);
        Ok(StepOutput { observation_tracks, records })
    }
}
