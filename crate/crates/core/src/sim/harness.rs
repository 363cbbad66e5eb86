//! Monte Carlo orchestration: UE drops, link synthesis, solver runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::scenario::{ChannelMode, Scenario};
use super::stats::{summarize, RunSummary};
use crate::analysis::{cov_mse_tswpm, cov_mse_wnls};
use crate::channel::{path_loss, sample_cdl_a, sample_shadow, snr_db, LinkGeometry};
use crate::crlb::{
    fim_position, fim_tdoa_from_toa, fim_toa_awgn, fim_toa_multipath, peb, tdoa_transform,
    toa_variance_meters, PrsGrid,
};
use crate::error::{Error, Result};
use crate::geometry::{dop, jacobian_augmented, jacobian_tdoa, AnchorSet, Position};
use crate::measurements::{
    form_tdoa, projection_weights, select_reference, synth_toa_awgn, synth_toa_multipath, synth_twtoa,
    LinkModel, ToaSet,
};
use crate::solvers::{
    ippm, nls, ts_wpm, ts_wpm_coop, wnls, wnls_coop, CoopScenario, CoopUe, SolverKind, SolverResult,
};
use crate::units::db_to_linear;

/// Offset of the initial point from the nearest anchor toward the area center, m.
const INIT_OFFSET_M: f64 = 1.0;
/// Shortest UE-UE distance used in the path-loss model, m.
const MIN_LINK_DISTANCE_M: f64 = 1.0;

// Stream purposes; each random draw in a trial comes from exactly one stream.
const STREAM_DROP: u64 = 1;
const STREAM_ANCHOR_LINK: u64 = 2;
const STREAM_UE_LINK: u64 = 3;
const STREAM_NEIGHBORS: u64 = 4;
const STREAM_INIT: u64 = 5;
const STREAM_PRS: u64 = 6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for the tuple `(master_seed, keys...)`.
pub fn stream(master_seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let seed = keys
        .iter()
        .fold(splitmix64(master_seed), |acc, &k| splitmix64(acc ^ splitmix64(k)));
    ChaCha8Rng::seed_from_u64(seed)
}

/// One solver run for one UE in one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub ue: usize,
    pub solver: SolverKind,
    /// Position error in meters; `+inf` when the solver failed.
    pub error_m: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gdop: f64,
    pub ref_snr_db: f64,
    pub peb_m: f64,
    pub multiply_adds: u64,
    pub matrix_inversions: u64,
    pub snr_db: Vec<f64>,
    pub failure: Option<String>,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Bound quantities for one UE drop, independent of the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DropBounds {
    pub peb_m: f64,
    /// Linearized RMSE of WNLS; `NaN` when undefined.
    pub linearized_rmse_wnls_m: f64,
    /// Linearized RMSE of TS-WPM; `NaN` when undefined.
    pub linearized_rmse_tswpm_m: f64,
}

/// Per-trial output of the harness.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub records: Vec<TrialRecord>,
    pub bounds: Vec<DropBounds>,
}

/// Options that do not affect results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

struct LinkDraw {
    snr_db: f64,
    model: LinkModel,
    measured: f64,
    variance: f64,
}

/// Shared per-run state derived once from the scenario.
struct Context<'a> {
    scn: &'a Scenario,
    prs: PrsGrid,
}

impl<'a> Context<'a> {
    fn new(scn: &'a Scenario) -> Result<Self> {
        let mut rng = stream(scn.master_seed, &[STREAM_PRS]);
        let prs = PrsGrid::qpsk(&mut rng, scn.link.n_subcarriers, scn.link.scs_hz)?;
        Ok(Self { scn, prs })
    }

    fn anchor_geometry(&self, ue: Position, anchor: Position) -> LinkGeometry {
        let p = &self.scn.propagation;
        let d2 = ue.distance(anchor);
        let dh = p.anchor_height_m - p.ue_height_m;
        let indoor = self.scn.ue_area.depth(ue);
        let outside = !self.scn.ue_area.contains(anchor);
        LinkGeometry {
            distance_3d: (d2 * d2 + dh * dh).sqrt().max(MIN_LINK_DISTANCE_M),
            indoor_distance_2d: indoor,
            n_floors: p.n_floors,
            n_internal_walls: walls(indoor, p.internal_wall_spacing_m),
            n_external_walls: if outside { p.external_walls } else { 0 },
        }
    }

    fn ue_geometry(&self, a: Position, b: Position) -> LinkGeometry {
        let p = &self.scn.propagation;
        let d2 = a.distance(b);
        LinkGeometry {
            distance_3d: d2.max(MIN_LINK_DISTANCE_M),
            indoor_distance_2d: d2,
            n_floors: 0,
            n_internal_walls: walls(d2, p.internal_wall_spacing_m),
            n_external_walls: 0,
        }
    }

    /// Shadowing, SNR, bound-implied variances and one ranging draw for a link.
    fn draw_link(&self, geom: &LinkGeometry, true_range: f64, rng: &mut ChaCha8Rng) -> Result<LinkDraw> {
        let link = &self.scn.link;
        let pl = path_loss(geom)?;
        let shadow = sample_shadow(rng, link.shadow_std_db);
        let snr = snr_db(link, pl, shadow);
        let gamma = db_to_linear(snr);
        let var_awgn = toa_variance_meters(fim_toa_awgn(gamma, link.scs_hz, link.n_subcarriers)?)?;
        let (var_mp, multipath) = match self.scn.channel_mode {
            ChannelMode::Awgn => (var_awgn, false),
            ChannelMode::Multipath => {
                let cir = sample_cdl_a(rng, self.scn.cdl.delay_spread_s, self.scn.cdl.max_taps)?
                    .sample_spaced(self.prs.sample_period())?;
                let fim = fim_toa_multipath(&cir, &self.prs, gamma)?;
                // a frequency-selective draw can carry more delay information
                // than a flat channel at the same SNR; the flat bound is the floor
                let var = toa_variance_meters(fim)?.max(var_awgn);
                (var, true)
            }
        };
        let model = LinkModel::new(true_range, gamma, var_awgn, var_mp)?;
        let measured = if multipath {
            synth_toa_multipath(&model, rng)
        } else {
            synth_toa_awgn(&model, rng)
        };
        Ok(LinkDraw {
            snr_db: snr,
            model,
            measured,
            variance: model.var_multipath,
        })
    }

    fn drop_ue(&self, trial: usize, ue: usize) -> Position {
        let area = &self.scn.ue_area;
        let mut rng = stream(self.scn.master_seed, &[STREAM_DROP, trial as u64, ue as u64]);
        Position::new(
            rng.random_range(area.x_min..=area.x_max),
            rng.random_range(area.y_min..=area.y_max),
        )
    }

    /// Nearest anchor, nudged toward the area center so the start is not on an anchor.
    fn initial_point(&self, anchors: &[Position], theta: Position) -> Position {
        let nearest = anchors
            .iter()
            .copied()
            .min_by(|a, b| a.distance(theta).total_cmp(&b.distance(theta)))
            .expect("anchors are non-empty");
        let center = self.scn.ue_area.center();
        let d = center.distance(nearest);
        if d == 0.0 {
            return nearest.translated(INIT_OFFSET_M, 0.0);
        }
        let s = INIT_OFFSET_M / d;
        nearest.translated((center.x - nearest.x) * s, (center.y - nearest.y) * s)
    }

    fn run_trial(&self, trial: usize) -> Result<TrialOutcome> {
        if self.scn.coop.enabled {
            self.run_coop_trial(trial)
        } else {
            self.run_single_trial(trial)
        }
    }

    fn run_single_trial(&self, trial: usize) -> Result<TrialOutcome> {
        let scn = self.scn;
        let mut records = Vec::new();
        let mut bounds = Vec::new();
        for ue in 0..scn.n_ues {
            let theta = self.drop_ue(trial, ue);
            let draws = scn
                .anchors
                .iter()
                .enumerate()
                .map(|(b, &a)| {
                    let mut rng = stream(
                        scn.master_seed,
                        &[STREAM_ANCHOR_LINK, trial as u64, ue as u64, b as u64],
                    );
                    self.draw_link(&self.anchor_geometry(theta, a), theta.distance(a), &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let snrs: Vec<f64> = draws.iter().map(|d| d.snr_db).collect();
            let reference = select_reference(&snrs)?;
            let anchors = AnchorSet::new(scn.anchors.clone(), reference)?;
            let vars: Vec<f64> = draws.iter().map(|d| d.variance).collect();
            let toas = ToaSet::new(draws.iter().map(|d| d.measured).collect(), vars.clone())?;
            let tdoa = form_tdoa(&toas, reference)?;
            let gdop = tdoa_gdop(&anchors, theta);
            let drop_bounds = single_bounds(&anchors, theta, &vars, &tdoa.covariance());
            let init = self.initial_point(&scn.anchors, theta);
            for &kind in &scn.solvers {
                let res = match kind {
                    SolverKind::Tswpm => projection_weights(&vars).and_then(|w| {
                        ts_wpm(&tdoa, &anchors, &w, &scn.solver_config, init, init.distance(anchors.reference()))
                    }),
                    SolverKind::Wnls => wnls(&tdoa, &anchors, &scn.solver_config, init),
                    SolverKind::Nls => nls(&tdoa, &anchors, &scn.solver_config, init),
                    SolverKind::Ippm => ippm(&tdoa, &anchors, &scn.solver_config, init),
                };
                records.push(record(trial, ue, kind, theta, res, gdop, &snrs, reference, drop_bounds.peb_m));
            }
            bounds.push(drop_bounds);
        }
        Ok(TrialOutcome { records, bounds })
    }

    fn run_coop_trial(&self, trial: usize) -> Result<TrialOutcome> {
        let scn = self.scn;
        let n_ues = scn.n_ues;
        let thetas: Vec<Position> = (0..n_ues).map(|u| self.drop_ue(trial, u)).collect();

        let mut ues = Vec::with_capacity(n_ues);
        let mut per_ue_snrs = Vec::with_capacity(n_ues);
        let mut gdops = Vec::with_capacity(n_ues);
        for (u, &theta) in thetas.iter().enumerate() {
            let draws = scn
                .anchors
                .iter()
                .enumerate()
                .map(|(b, &a)| {
                    let mut rng = stream(
                        scn.master_seed,
                        &[STREAM_ANCHOR_LINK, trial as u64, u as u64, b as u64],
                    );
                    self.draw_link(&self.anchor_geometry(theta, a), theta.distance(a), &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            // strongest anchors, strongest first; ties resolve to the lower index
            let mut order: Vec<usize> = (0..draws.len()).collect();
            order.sort_by(|&a, &b| draws[b].snr_db.total_cmp(&draws[a].snr_db));
            order.truncate(scn.coop.anchors_visible_per_ue);
            let positions: Vec<Position> = order.iter().map(|&b| scn.anchors[b]).collect();
            let snrs: Vec<f64> = order.iter().map(|&b| draws[b].snr_db).collect();
            let vars: Vec<f64> = order.iter().map(|&b| draws[b].variance).collect();
            let values: Vec<f64> = order.iter().map(|&b| draws[b].measured).collect();
            let anchors = AnchorSet::new(positions, 0)?;
            let tdoa = form_tdoa(&ToaSet::new(values, vars)?, 0)?;
            gdops.push(tdoa_gdop(&anchors, theta));
            per_ue_snrs.push(snrs);
            let mut rng = stream(scn.master_seed, &[STREAM_NEIGHBORS, trial as u64, u as u64]);
            let mut others: Vec<usize> = (0..n_ues).filter(|&v| v != u).collect();
            for i in 0..scn.coop.n_coop {
                let j = rng.random_range(i..others.len());
                others.swap(i, j);
            }
            others.truncate(scn.coop.n_coop);
            others.sort_unstable();
            ues.push(CoopUe {
                anchors,
                tdoa,
                neighbors: others,
            });
        }

        // one two-way measurement per unordered pair that any UE relies on
        let mut pairs: Vec<(usize, usize)> = ues
            .iter()
            .enumerate()
            .flat_map(|(u, ue)| ue.neighbors.iter().map(move |&v| (u.min(v), u.max(v))))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        let mut links = Vec::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            let mut rng = stream(scn.master_seed, &[STREAM_UE_LINK, trial as u64, i as u64, j as u64]);
            let draw = self.draw_link(&self.ue_geometry(thetas[i], thetas[j]), thetas[i].distance(thetas[j]), &mut rng)?;
            // the ranging draw is replaced by the two-way measurement below
            links.push((i, j, draw.model.true_range + draw.model.nlos_bias, draw.variance));
        }
        let mut rng = stream(scn.master_seed, &[STREAM_UE_LINK, trial as u64, u64::MAX]);
        let twtoa = synth_twtoa(&links, &mut rng)?;
        let scene = CoopScenario::new(ues, twtoa)?;

        let mut rng = stream(scn.master_seed, &[STREAM_INIT, trial as u64]);
        let inits: Vec<Position> = scene
            .ues()
            .iter()
            .zip(&thetas)
            .map(|(ue, &theta)| {
                // jitter keeps UEs that share a nearest anchor from starting on top of each other
                let p = self.initial_point(ue.anchors.positions(), theta);
                p.translated(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))
            })
            .collect();

        let mut records = Vec::new();
        for &kind in &scn.solvers {
            let results = match kind {
                SolverKind::Tswpm => {
                    let seeds: Vec<(Position, f64)> = inits
                        .iter()
                        .zip(scene.ues())
                        .map(|(&p, ue)| (p, p.distance(ue.anchors.reference())))
                        .collect();
                    ts_wpm_coop(&scene, &scn.solver_config, &seeds)
                }
                SolverKind::Wnls => wnls_coop(&scene, &scn.solver_config, &inits),
                other => Err(Error::invalid(format!("`{other}` has no cooperative variant"))),
            };
            match results {
                Ok(results) => {
                    for (u, res) in results.into_iter().enumerate() {
                        records.push(record(trial, u, kind, thetas[u], Ok(res), gdops[u], &per_ue_snrs[u], 0, f64::NAN));
                    }
                }
                Err(e) => {
                    for u in 0..n_ues {
                        records.push(record(
                            trial,
                            u,
                            kind,
                            thetas[u],
                            Err(e.clone()),
                            gdops[u],
                            &per_ue_snrs[u],
                            0,
                            f64::NAN,
                        ));
                    }
                }
            }
        }
        Ok(TrialOutcome {
            records,
            bounds: Vec::new(),
        })
    }
}

/// Horizontal DOP of the range model with the reference range as a free
/// offset, the TDOA counterpart of a clock-aware GDOP. `NaN` when undefined,
/// e.g. with fewer than three anchors.
pub fn tdoa_gdop(anchors: &AnchorSet, theta: Position) -> f64 {
    jacobian_augmented(anchors, theta)
        .and_then(|j| dop(j.matrix()))
        .map_or(f64::NAN, |d| d.hdop)
}

fn walls(indoor: f64, spacing: Option<f64>) -> u32 {
    spacing.map_or(0, |s| (indoor / s).floor() as u32)
}

fn single_bounds(
    anchors: &AnchorSet,
    theta: Position,
    toa_vars: &[f64],
    c1: &nalgebra::DMatrix<f64>,
) -> DropBounds {
    let peb_m = (|| {
        let h1 = jacobian_tdoa(anchors, theta)?;
        let t = tdoa_transform(anchors.len(), anchors.reference_index())?;
        peb(&fim_position(h1.matrix(), &fim_tdoa_from_toa(toa_vars, &t)?)?)
    })()
    .unwrap_or(f64::NAN);
    let linearized_rmse_wnls_m = jacobian_tdoa(anchors, theta)
        .and_then(|h1| cov_mse_wnls(&h1, c1))
        .map_or(f64::NAN, |s| s.mse.sqrt());
    let linearized_rmse_tswpm_m = jacobian_augmented(anchors, theta)
        .and_then(|h2| cov_mse_tswpm(&h2, toa_vars))
        .map_or(f64::NAN, |s| s.mse.sqrt());
    DropBounds {
        peb_m,
        linearized_rmse_wnls_m,
        linearized_rmse_tswpm_m,
    }
}

#[allow(clippy::too_many_arguments)]
fn record(
    trial: usize,
    ue: usize,
    solver: SolverKind,
    truth: Position,
    res: Result<SolverResult>,
    gdop: f64,
    snrs: &[f64],
    reference: usize,
    peb_m: f64,
) -> TrialRecord {
    let base = TrialRecord {
        trial,
        ue,
        solver,
        error_m: f64::INFINITY,
        iterations: 0,
        converged: false,
        gdop,
        ref_snr_db: snrs[reference],
        peb_m,
        multiply_adds: 0,
        matrix_inversions: 0,
        snr_db: snrs.to_vec(),
        failure: None,
    };
    match res {
        Ok(r) => TrialRecord {
            error_m: r.estimate.distance(truth),
            iterations: r.iterations,
            converged: r.converged,
            multiply_adds: r.op_counter.multiply_adds,
            matrix_inversions: r.op_counter.matrix_inversions,
            ..base
        },
        Err(e) => TrialRecord {
            failure: Some(failure_tag(&e)),
            ..base
        },
    }
}

fn failure_tag(e: &Error) -> String {
    match e {
        Error::IllConditioned(_) => "ill_conditioned".into(),
        Error::DegenerateGeometry(_) => "degenerate_geometry".into(),
        Error::SingularGeometry(_) => "singular_geometry".into(),
        _ => "solver_error".into(),
    }
}

/// Runs every trial of `scn` and summarizes the results. Output depends only on
/// the scenario, never on the thread count or scheduling.
pub fn run_monte_carlo(scn: &Scenario, opts: RunOptions) -> Result<(Vec<TrialRecord>, RunSummary)> {
    scn.validate()?;
    let ctx = Context::new(scn)?;
    let work = || {
        (0..scn.trials)
            .into_par_iter()
            .map(|t| ctx.run_trial(t))
            .collect::<Result<Vec<_>>>()
    };
    let outcomes = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut records = Vec::new();
    let mut bounds = Vec::new();
    for o in outcomes {
        records.extend(o.records);
        bounds.extend(o.bounds);
    }
    let summary = summarize(scn, &records, &bounds);
    Ok((records, summary))
}

/// One row of the bound table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub x: f64,
    pub y: f64,
    pub gdop: f64,
    pub peb_m: f64,
}

/// GDOP and AWGN position error bound on a `nx x ny` grid of cell centers,
/// without shadowing. The reference anchor is the strongest one.
pub fn bound_table(scn: &Scenario, nx: usize, ny: usize) -> Result<Vec<BoundRow>> {
    if nx == 0 || ny == 0 {
        return Err(Error::invalid("grid must have at least one cell per axis"));
    }
    let ctx = Context::new(scn)?;
    let area = &scn.ue_area;
    let mut rows = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let theta = Position::new(
                area.x_min + (ix as f64 + 0.5) * (area.x_max - area.x_min) / nx as f64,
                area.y_min + (iy as f64 + 0.5) * (area.y_max - area.y_min) / ny as f64,
            );
            let mut snrs = Vec::with_capacity(scn.anchors.len());
            let mut vars = Vec::with_capacity(scn.anchors.len());
            for &a in &scn.anchors {
                let snr = snr_db(&scn.link, path_loss(&ctx.anchor_geometry(theta, a))?, 0.0);
                vars.push(toa_variance_meters(fim_toa_awgn(
                    db_to_linear(snr),
                    scn.link.scs_hz,
                    scn.link.n_subcarriers,
                )?)?);
                snrs.push(snr);
            }
            let anchors = AnchorSet::new(scn.anchors.clone(), select_reference(&snrs)?)?;
            let gdop = tdoa_gdop(&anchors, theta);
            let c1 = crate::measurements::TdoaSet::new(
                vec![0.0; anchors.len() - 1],
                anchors.reference_index(),
                vars.clone(),
            )?
            .covariance();
            rows.push(BoundRow {
                x: theta.x,
                y: theta.y,
                gdop,
                peb_m: single_bounds(&anchors, theta, &vars, &c1).peb_m,
            });
        }
    }
    Ok(rows)
}
