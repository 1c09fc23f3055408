//! Ladder bitrate optimization: minimize expected streaming bitrate subject
//! to a floor on expected delivered quality.
//!
//! The problem is non-convex (the objective mixes bitrates with the viewing
//! probabilities they induce), so the solver runs a multistart scheme: every
//! start is projected onto the ordered box of valid bitrate vectors, driven
//! to feasibility by quality ascent if needed, then improved with an
//! augmented Lagrangian over the quality constraint whose inner steps are
//! projected gradient descent with Barzilai-Borwein step sizes and a
//! monotone backtracking line search. The best feasible iterate seen
//! anywhere wins, so the result is never worse than the best feasible start.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::player::{evaluate, Ladder, LadderEntry, ModelEvaluation};
use crate::rq_model::ChunkRqModel;
use crate::stats::{BandwidthDistribution, Smoothing, ViewportDistribution};

/// Tuning knobs for [`solve`] and [`default_starts`].
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Step budget per start.
    pub max_iters: usize,
    /// Relative objective-change threshold for the plateau stop.
    pub rel_tol: f64,
    /// Accepted steps over which the plateau is measured.
    pub stall_window: usize,
    /// Random starts added to the baselines by [`default_starts`].
    pub extra_starts: usize,
    /// Seed for start jittering.
    pub seed: u64,
    /// Record the objective value at every accepted step of the winning
    /// start.
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 500,
            rel_tol: 1e-6,
            stall_window: 5,
            extra_starts: 8,
            seed: 0,
            record_history: false,
        }
    }
}

/// One chunk's constrained bitrate-selection problem.
///
/// Fixes the set of representations (one per listed resolution), their
/// per-entry bitrate bounds (the sampled range of each curve), the ordering
/// constraint with a minimum gap between consecutive bitrates, and the
/// quality floor. Optimization always runs against a piecewise linear
/// bandwidth CDF so analytic gradients exist.
#[derive(Debug, Clone)]
pub struct OptimizationProblem {
    model: ChunkRqModel,
    resolutions: Vec<u32>,
    viewport: ViewportDistribution,
    bandwidth: BandwidthDistribution,
    quality_floor: f64,
    min_gap: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    // Per-entry bounds in gap-shifted coordinates, where the ordering
    // constraint becomes plain monotonicity.
    shifted_lo: Vec<f64>,
    shifted_hi: Vec<f64>,
}

impl OptimizationProblem {
    pub fn new(
        model: &ChunkRqModel,
        resolutions: &[u32],
        viewport: &ViewportDistribution,
        bandwidth: &BandwidthDistribution,
        quality_floor: f64,
        min_gap: f64,
    ) -> Result<Self> {
        if resolutions.is_empty() {
            return Err(Error::EmptyLadder);
        }
        for pair in resolutions.windows(2) {
            if pair[1] < pair[0] {
                return Err(Error::LadderResolutionOrder {
                    index: 1,
                    resolution: pair[1],
                    previous: pair[0],
                });
            }
        }
        let mut lo = Vec::with_capacity(resolutions.len());
        let mut hi = Vec::with_capacity(resolutions.len());
        for &resolution in resolutions {
            let (range_lo, range_hi) = model.curve(resolution)?.bitrate_range();
            if !(range_lo < range_hi) {
                return Err(Error::BadInterval {
                    lo: range_lo,
                    hi: range_hi,
                });
            }
            lo.push(range_lo);
            hi.push(range_hi);
        }

        let gap = min_gap.max(0.0);
        let n = resolutions.len();
        let shifted_lo: Vec<f64> = (0..n).map(|i| lo[i] - i as f64 * gap).collect();
        let shifted_hi: Vec<f64> = (0..n).map(|i| hi[i] - i as f64 * gap).collect();
        let mut running_lo = f64::NEG_INFINITY;
        let mut tight_lo = Vec::with_capacity(n);
        for &v in &shifted_lo {
            running_lo = running_lo.max(v);
            tight_lo.push(running_lo);
        }
        let mut running_hi = f64::INFINITY;
        for i in (0..n).rev() {
            running_hi = running_hi.min(shifted_hi[i]);
            if tight_lo[i] > running_hi {
                return Err(Error::EmptyFeasibleBox);
            }
        }

        let problem = OptimizationProblem {
            model: model.clone(),
            resolutions: resolutions.to_vec(),
            viewport: viewport.clone(),
            bandwidth: bandwidth.clone().with_smoothing(Smoothing::PiecewiseLinear),
            quality_floor,
            min_gap: gap,
            lo,
            hi,
            shifted_lo,
            shifted_hi,
        };

        let top = problem.upper_corner();
        let attainable = problem.eval(&top).quality;
        if attainable < quality_floor {
            return Err(Error::UnreachableQualityFloor {
                quality_floor,
                attainable,
            });
        }
        Ok(problem)
    }

    pub fn dim(&self) -> usize {
        self.resolutions.len()
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn quality_floor(&self) -> f64 {
        self.quality_floor
    }

    pub fn min_gap(&self) -> f64 {
        self.min_gap
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    pub fn model(&self) -> &ChunkRqModel {
        &self.model
    }

    pub fn viewport(&self) -> &ViewportDistribution {
        &self.viewport
    }

    /// The bandwidth distribution the solver differentiates against.
    pub fn bandwidth(&self) -> &BandwidthDistribution {
        &self.bandwidth
    }

    /// Largest bitrate vector satisfying bounds and ordering.
    fn upper_corner(&self) -> Vec<f64> {
        let n = self.dim();
        let mut corner = vec![0.0; n];
        let mut running = f64::INFINITY;
        for i in (0..n).rev() {
            running = running.min(self.shifted_hi[i]);
            corner[i] = running + i as f64 * self.min_gap;
        }
        corner
    }

    /// Euclidean projection onto the ordered box.
    ///
    /// Shifting out the minimum gaps turns the ordering constraint into
    /// plain monotonicity, leaving a least-squares fit of a non-decreasing
    /// sequence with per-coordinate interval bounds. That is solved exactly
    /// by dynamic programming: a forward pass builds the convex piecewise
    /// quadratic cost-to-here in each coordinate's value, a backward pass
    /// reads the minimizers off under the next coordinate's choice.
    pub fn project(&self, bitrates: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(bitrates.len(), n);
        let targets: Vec<f64> = bitrates
            .iter()
            .enumerate()
            .map(|(i, &b)| b - i as f64 * self.min_gap)
            .collect();

        let mut pieces: Vec<Piece> = Vec::new();
        let mut stages: Vec<(f64, f64)> = Vec::with_capacity(n);
        let mut domain_lo = f64::NEG_INFINITY;
        for i in 0..n {
            domain_lo = domain_lo.max(self.shifted_lo[i]);
            let domain_hi = self.shifted_hi[i];
            if i == 0 {
                pieces.push(Piece::quadratic(domain_lo, domain_hi, targets[0]));
            } else {
                let (arg, min_value) = piecewise_argmin(&pieces);
                let mut next = Vec::with_capacity(pieces.len() + 1);
                for p in &pieces {
                    if p.start >= arg {
                        break;
                    }
                    let mut clipped = *p;
                    clipped.end = clipped.end.min(arg);
                    next.push(clipped);
                }
                next.push(Piece {
                    start: arg,
                    end: f64::INFINITY,
                    a2: 0.0,
                    a1: 0.0,
                    a0: min_value,
                });
                pieces = clip_and_add(&next, domain_lo, domain_hi, targets[i]);
            }
            let (arg, _) = piecewise_argmin(&pieces);
            stages.push((domain_lo, arg));
        }

        let mut shifted = vec![0.0; n];
        shifted[n - 1] = stages[n - 1].1;
        for i in (0..n - 1).rev() {
            let (lo, arg) = stages[i];
            shifted[i] = arg.min(shifted[i + 1]).max(lo);
        }
        for (i, b) in bitrates.iter_mut().enumerate() {
            *b = shifted[i] + i as f64 * self.min_gap;
        }
    }

    /// Ladder for a bitrate vector that already satisfies the constraints.
    pub fn ladder(&self, bitrates: &[f64]) -> Ladder {
        let entries = self
            .resolutions
            .iter()
            .zip(bitrates)
            .map(|(&resolution, &bitrate)| LadderEntry::new(resolution, bitrate))
            .collect();
        Ladder::from_sorted_unchecked(entries)
    }

    /// Evaluates a ladder under the solver's (piecewise linear) bandwidth
    /// model.
    pub fn evaluate_ladder(&self, ladder: &Ladder) -> Result<ModelEvaluation> {
        evaluate(ladder, &self.model, &self.viewport, &self.bandwidth)
    }

    fn eval(&self, bitrates: &[f64]) -> Evaluated {
        let ladder = self.ladder(bitrates);
        let eval = evaluate(&ladder, &self.model, &self.viewport, &self.bandwidth)
            .expect("problem resolutions are validated against the model");
        Evaluated {
            rate: eval.avg_bitrate,
            quality: eval.avg_quality,
            grad_rate: eval.grad_bitrate.expect("linear smoothing has gradients"),
            grad_quality: eval.grad_quality.expect("linear smoothing has gradients"),
        }
    }
}

struct Evaluated {
    rate: f64,
    quality: f64,
    grad_rate: Vec<f64>,
    grad_quality: Vec<f64>,
}

/// One segment of a convex piecewise quadratic, `a2 t^2 + a1 t + a0` on
/// `[start, end]`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    start: f64,
    end: f64,
    a2: f64,
    a1: f64,
    a0: f64,
}

impl Piece {
    fn quadratic(start: f64, end: f64, target: f64) -> Self {
        Piece {
            start,
            end,
            a2: 1.0,
            a1: -2.0 * target,
            a0: target * target,
        }
    }

    fn value(&self, t: f64) -> f64 {
        (self.a2 * t + self.a1) * t + self.a0
    }

    fn argmin(&self) -> (f64, f64) {
        let t = if self.a2 > 0.0 {
            (-self.a1 / (2.0 * self.a2)).clamp(self.start, self.end)
        } else if self.a1 >= 0.0 {
            self.start
        } else {
            self.end
        };
        (t, self.value(t))
    }
}

/// Leftmost minimizer of a convex piecewise quadratic.
fn piecewise_argmin(pieces: &[Piece]) -> (f64, f64) {
    let mut best = (f64::NAN, f64::INFINITY);
    for p in pieces {
        let (t, v) = p.argmin();
        if v < best.1 {
            best = (t, v);
        }
    }
    best
}

/// Restricts `pieces` to `[lo, hi]` and adds `(t - target)^2` to every
/// segment.
fn clip_and_add(pieces: &[Piece], lo: f64, hi: f64, target: f64) -> Vec<Piece> {
    let mut out = Vec::with_capacity(pieces.len());
    for p in pieces {
        let start = p.start.max(lo);
        let end = p.end.min(hi);
        if start > end {
            continue;
        }
        out.push(Piece {
            start,
            end,
            a2: p.a2 + 1.0,
            a1: p.a1 - 2.0 * target,
            a0: p.a0 + target * target,
        });
    }
    debug_assert!(!out.is_empty(), "feasibility is checked at construction");
    if out.is_empty() {
        out.push(Piece::quadratic(lo, hi.max(lo), target));
    }
    out
}

/// Result of one [`solve`] call.
#[derive(Debug, Clone)]
pub struct OptimizationResult {
    /// Best feasible ladder found.
    pub ladder: Ladder,
    /// Model evaluation at the solution, under the solver's bandwidth model.
    pub evaluation: ModelEvaluation,
    /// True when the winning start stopped on an objective plateau rather
    /// than the iteration budget.
    pub converged: bool,
    /// Accepted steps summed over all starts.
    pub iterations: usize,
    /// Starts processed.
    pub starts_tried: usize,
    /// `max(0, quality_floor - Q(solution))`.
    pub constraint_violation: f64,
    /// Index of the start that produced the solution, counting the caller's
    /// starts first and the solver's own corner starts after them.
    pub best_start: usize,
    /// Expected bitrate at each accepted step of the winning start, when
    /// requested.
    pub objective_history: Option<Vec<f64>>,
}

/// Baseline ladders plus seeded log-space jitters of the first one, all
/// projected onto the problem's ordered box.
pub fn default_starts(
    problem: &OptimizationProblem,
    baselines: &[Ladder],
    config: &SolverConfig,
) -> Result<Vec<Ladder>> {
    let n = problem.dim();
    let mut starts = Vec::with_capacity(baselines.len() + config.extra_starts);
    for (index, ladder) in baselines.iter().enumerate() {
        if ladder.len() != n {
            return Err(Error::BadStartLength {
                index,
                got: ladder.len(),
                expected: n,
            });
        }
        let mut r = ladder.bitrates();
        problem.project(&mut r);
        starts.push(problem.ladder(&r));
    }

    let base: Vec<f64> = match starts.first() {
        Some(ladder) => ladder.bitrates(),
        None => {
            let (lo, hi) = problem.bounds();
            let mut r: Vec<f64> = lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| (l * h).sqrt())
                .collect();
            problem.project(&mut r);
            r
        }
    };
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    for _ in 0..config.extra_starts {
        let mut r: Vec<f64> = base
            .iter()
            .map(|&b| (b.ln() + noise.sample(&mut rng)).exp())
            .collect();
        problem.project(&mut r);
        starts.push(problem.ladder(&r));
    }
    if starts.is_empty() {
        return Err(Error::NoStarts);
    }
    Ok(starts)
}

struct StartOutcome {
    best: Option<(Vec<f64>, f64)>,
    stalled: bool,
    steps: usize,
    max_quality: f64,
    history: Vec<f64>,
}

/// Minimizes the expected bitrate over the ordered box subject to the
/// quality floor, starting from each given ladder, and returns the best
/// feasible point seen.
///
/// In addition to the given starts the solver always explores a fixed set
/// of staircase corners of the ordered box (the cheapest k entries at their
/// lower bounds, the rest at their upper bounds). Ladders whose top entries
/// price themselves out of the bandwidth support live near those corners,
/// and gradient descent cannot reach them from interior starts. Corner
/// starts are processed after the given ones, so ties still resolve to the
/// lowest caller-supplied start index.
pub fn solve(
    problem: &OptimizationProblem,
    starts: &[Ladder],
    config: &SolverConfig,
) -> Result<OptimizationResult> {
    if starts.is_empty() {
        return Err(Error::NoStarts);
    }
    let n = problem.dim();
    let mut best: Option<(Vec<f64>, f64, usize, bool, Vec<f64>)> = None;
    let mut iterations = 0usize;
    let mut max_quality = f64::NEG_INFINITY;

    let mut start_points = Vec::with_capacity(starts.len() + n + 1);
    for (index, start) in starts.iter().enumerate() {
        if start.len() != n {
            return Err(Error::BadStartLength {
                index,
                got: start.len(),
                expected: n,
            });
        }
        let mut r = start.bitrates();
        problem.project(&mut r);
        start_points.push(r);
    }
    for k in 0..=n {
        let mut r: Vec<f64> = (0..n)
            .map(|i| if i < k { problem.lo[i] } else { problem.hi[i] })
            .collect();
        problem.project(&mut r);
        if !start_points.iter().any(|p| p == &r) {
            start_points.push(r);
        }
    }

    for (index, r) in start_points.into_iter().enumerate() {
        let outcome = run_start(problem, r, config);
        iterations += outcome.steps;
        max_quality = max_quality.max(outcome.max_quality);
        if let Some((r_best, rate)) = outcome.best {
            let better = match &best {
                None => true,
                Some((_, incumbent, ..)) => rate < *incumbent,
            };
            if better {
                best = Some((r_best, rate, index, outcome.stalled, outcome.history));
            }
        }
    }

    match best {
        Some((r, _, best_start, stalled, history)) => {
            let ladder = problem.ladder(&r);
            let evaluation = problem.evaluate_ladder(&ladder)?;
            let constraint_violation =
                (problem.quality_floor - evaluation.avg_quality).max(0.0);
            Ok(OptimizationResult {
                ladder,
                evaluation,
                converged: stalled,
                iterations,
                starts_tried: starts.len(),
                constraint_violation,
                best_start,
                objective_history: config.record_history.then_some(history),
            })
        }
        None => Err(Error::Infeasible {
            quality_floor: problem.quality_floor,
            shortfall: problem.quality_floor - max_quality,
        }),
    }
}

fn consider(outcome: &mut StartOutcome, q0: f64, feas_tol: f64, r: &[f64], e: &Evaluated) {
    outcome.max_quality = outcome.max_quality.max(e.quality);
    if e.quality >= q0 - feas_tol {
        let better = outcome.best.as_ref().map_or(true, |(_, b)| e.rate < *b);
        if better {
            outcome.best = Some((r.to_vec(), e.rate));
        }
    }
}

fn run_start(problem: &OptimizationProblem, mut r: Vec<f64>, config: &SolverConfig) -> StartOutcome {
    let q0 = problem.quality_floor;
    let feas_tol = 1e-6 * q0.abs();
    let rate_scale = problem.hi.iter().fold(1.0f64, |a, &b| a.max(b));

    let mut outcome = StartOutcome {
        best: None,
        stalled: false,
        steps: 0,
        max_quality: f64::NEG_INFINITY,
        history: Vec::new(),
    };

    let mut current = problem.eval(&r);
    consider(&mut outcome, q0, feas_tol, &r, &current);
    if config.record_history {
        outcome.history.push(current.rate);
    }

    // Quality ascent until the floor is reached, for starts that begin
    // infeasible.
    if current.quality < q0 {
        let budget = config.max_iters / 2;
        let mut steps = 0;
        let mut state = StepState::new();
        while current.quality < q0 && steps < budget {
            let ascent: Vec<f64> = current.grad_quality.iter().map(|g| -g).collect();
            match take_step(problem, &r, &ascent, |e| -e.quality, -current.quality, &mut state, rate_scale) {
                Some((r_next, e_next)) => {
                    r = r_next;
                    current = e_next;
                    steps += 1;
                    outcome.steps += 1;
                    consider(&mut outcome, q0, feas_tol, &r, &current);
                    if config.record_history {
                        outcome.history.push(current.rate);
                    }
                }
                None => break,
            }
        }
    }

    // Alternate gradient-based descent with long-range coordinate sweeps.
    // The descent finds the local optimum precisely; the sweep jumps across
    // the barriers of the non-convex landscape (e.g. pushing one entry past
    // the bandwidth support so its viewing probability vanishes), which no
    // local gradient step can cross.
    for _ in 0..4 {
        let stalled = al_phase(problem, &mut r, &mut current, config, &mut outcome, rate_scale);
        if outcome.steps >= config.max_iters {
            break;
        }
        if !sweep_phase(problem, &mut r, &mut current, config, &mut outcome) {
            outcome.stalled = stalled;
            break;
        }
    }

    outcome
}

/// Augmented Lagrangian on the quality constraint; inner loops are
/// projected gradient descent with a monotone acceptance test. Returns true
/// when it stopped on a plateau or stationary point rather than the budget.
fn al_phase(
    problem: &OptimizationProblem,
    r: &mut Vec<f64>,
    current: &mut Evaluated,
    config: &SolverConfig,
    outcome: &mut StartOutcome,
    rate_scale: f64,
) -> bool {
    let q0 = problem.quality_floor;
    let feas_tol = 1e-6 * q0.abs();
    let mut mu = 0.0f64;
    let rho0 = 10.0 * current.rate.max(1.0) / q0.abs().max(1.0);
    let mut rho = rho0;
    let mut violation_prev = f64::INFINITY;
    let mut plateau: Vec<f64> = Vec::new();

    for _ in 0..40 {
        let mut state = StepState::new();
        let mut inner_steps = 0usize;
        loop {
            if outcome.steps >= config.max_iters || inner_steps >= 60 {
                break;
            }
            let slack = (q0 - current.quality + mu / rho).max(0.0);
            let lagrangian = |e: &Evaluated| {
                let s = (q0 - e.quality + mu / rho).max(0.0);
                e.rate + 0.5 * rho * s * s
            };
            let value = current.rate + 0.5 * rho * slack * slack;
            let grad: Vec<f64> = current
                .grad_rate
                .iter()
                .zip(&current.grad_quality)
                .map(|(gr, gq)| gr - rho * slack * gq)
                .collect();
            match take_step(problem, r, &grad, lagrangian, value, &mut state, rate_scale) {
                Some((r_next, e_next)) => {
                    *r = r_next;
                    *current = e_next;
                    inner_steps += 1;
                    outcome.steps += 1;
                    consider(outcome, q0, feas_tol, r, current);
                    if config.record_history {
                        outcome.history.push(current.rate);
                    }
                    if current.quality >= q0 - feas_tol {
                        plateau.push(current.rate);
                        if plateau.len() > config.stall_window {
                            let recent = &plateau[plateau.len() - config.stall_window - 1..];
                            let lo = recent.iter().fold(f64::INFINITY, |a, &b| a.min(b));
                            let hi = recent.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                            if hi - lo <= config.rel_tol * hi.abs().max(1e-300) {
                                return true;
                            }
                        }
                    }
                }
                None => break,
            }
        }

        let violation = (q0 - current.quality).max(0.0);
        if violation <= feas_tol.max(1e-9 * q0.abs().max(1.0)) && inner_steps == 0 {
            return true;
        }
        if outcome.steps >= config.max_iters {
            return false;
        }
        mu = (mu + rho * (q0 - current.quality)).max(0.0);
        if violation > 0.25 * violation_prev {
            rho = (rho * 10.0).min(rho0 * 1e10);
        }
        violation_prev = violation;
    }
    true
}

const SWEEP_POINTS: usize = 16;
const SWEEP_REFINES: usize = 3;

/// One-coordinate-at-a-time global probe: scans a log-spaced grid of each
/// entry's admissible interval (neighbors and bounds fixed), with local
/// refinement around the best candidate, and moves there when a feasible
/// point with a strictly lower rate exists. Returns whether anything moved.
fn sweep_phase(
    problem: &OptimizationProblem,
    r: &mut [f64],
    current: &mut Evaluated,
    config: &SolverConfig,
    outcome: &mut StartOutcome,
) -> bool {
    let q0 = problem.quality_floor;
    let feas_tol = 1e-6 * q0.abs();
    let n = problem.dim();
    let mut improved_any = false;

    for _ in 0..2 {
        let mut moved = false;
        for j in 0..n {
            if outcome.steps >= config.max_iters {
                return improved_any;
            }
            let interval_lo = if j == 0 {
                problem.lo[0]
            } else {
                (r[j - 1] + problem.min_gap).max(problem.lo[j])
            };
            let interval_hi = if j == n - 1 {
                problem.hi[n - 1]
            } else {
                (r[j + 1] - problem.min_gap).min(problem.hi[j])
            };
            if !(interval_lo < interval_hi) {
                continue;
            }

            let incumbent = if current.quality >= q0 - feas_tol {
                current.rate
            } else {
                f64::INFINITY
            };
            let mut best: Option<(f64, f64)> = None;
            let mut lo = interval_lo;
            let mut hi = interval_hi;
            let mut trial = r.to_vec();
            for _ in 0..SWEEP_REFINES {
                let step = (hi / lo).ln() / (SWEEP_POINTS - 1) as f64;
                for k in 0..SWEEP_POINTS {
                    let candidate = (lo * (k as f64 * step).exp()).min(hi);
                    trial[j] = candidate;
                    let e = problem.eval(&trial);
                    outcome.max_quality = outcome.max_quality.max(e.quality);
                    if e.quality >= q0 - feas_tol {
                        let beats_best = best.map_or(true, |(rate, _)| e.rate < rate);
                        if beats_best {
                            best = Some((e.rate, candidate));
                        }
                    }
                }
                match best {
                    Some((_, center)) => {
                        lo = (center * (-step).exp()).max(interval_lo);
                        hi = (center * step.exp()).min(interval_hi);
                        if hi / lo < 1.0 + 1e-12 {
                            break;
                        }
                    }
                    None => break,
                }
            }

            if let Some((rate, candidate)) = best {
                if rate < incumbent * (1.0 - 1e-9) {
                    r[j] = candidate;
                    *current = problem.eval(r);
                    outcome.steps += 1;
                    consider(outcome, q0, feas_tol, r, current);
                    if config.record_history {
                        outcome.history.push(current.rate);
                    }
                    moved = true;
                    improved_any = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    improved_any
}

struct StepState {
    step: Option<f64>,
    prev: Option<(Vec<f64>, Vec<f64>)>,
}

impl StepState {
    fn new() -> Self {
        StepState {
            step: None,
            prev: None,
        }
    }
}

/// One projected-gradient step with Barzilai-Borwein initialization and
/// halving backtracks until the objective decreases. Returns the accepted
/// point, or `None` at a projected-stationary point.
fn take_step<F>(
    problem: &OptimizationProblem,
    r: &[f64],
    grad: &[f64],
    objective: F,
    current_value: f64,
    state: &mut StepState,
    rate_scale: f64,
) -> Option<(Vec<f64>, Evaluated)>
where
    F: Fn(&Evaluated) -> f64,
{
    let grad_norm = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
    if grad_norm == 0.0 {
        return None;
    }
    let default_step = 0.05 * rate_scale / grad_norm;
    let mut step = match (&state.prev, state.step) {
        (Some((r_prev, g_prev)), _) => {
            let mut sy = 0.0;
            let mut ss = 0.0;
            for i in 0..r.len() {
                let s = r[i] - r_prev[i];
                let y = grad[i] - g_prev[i];
                sy += s * y;
                ss += s * s;
            }
            if sy > 0.0 && ss > 0.0 {
                (ss / sy).clamp(default_step * 1e-6, default_step * 1e6)
            } else {
                state.step.unwrap_or(default_step) * 2.0
            }
        }
        (None, Some(last)) => last * 2.0,
        (None, None) => default_step,
    };

    for _ in 0..60 {
        let mut candidate: Vec<f64> = r
            .iter()
            .zip(grad)
            .map(|(&x, &g)| x - step * g)
            .collect();
        problem.project(&mut candidate);
        let moved = candidate
            .iter()
            .zip(r)
            .fold(0.0f64, |a, (&c, &x)| a.max((c - x).abs()));
        if moved <= 1e-9 * rate_scale {
            return None;
        }
        let dist2: f64 = candidate
            .iter()
            .zip(r)
            .map(|(&c, &x)| (c - x) * (c - x))
            .sum();
        let evaluated = problem.eval(&candidate);
        if objective(&evaluated) <= current_value - 1e-4 * dist2 / step {
            state.step = Some(step);
            state.prev = Some((candidate.clone(), grad.to_vec()));
            return Some((candidate, evaluated));
        }
        step *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{fixed_label_ladder, hull_maximizing_ladder};
    use crate::rq_model::{RateQualityCurve, RqSample};
    use crate::synth::{canonical_family, default_viewport_pmf, synth_chunk_model};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn viewport(weights: &[(u32, f64)]) -> ViewportDistribution {
        let map: BTreeMap<u32, f64> = weights.iter().copied().collect();
        ViewportDistribution::from_counts(&map).unwrap()
    }

    fn atoms(support: &[f64]) -> BandwidthDistribution {
        BandwidthDistribution::from_samples(
            support.iter().map(|&s| (s, 1.0)).collect(),
            Smoothing::PiecewiseLinear,
        )
        .unwrap()
    }

    fn curve(resolution: u32, points: &[(f64, f64)]) -> RateQualityCurve {
        let samples = points.iter().map(|&(r, q)| RqSample::new(r, q)).collect();
        RateQualityCurve::new(resolution, samples).unwrap()
    }

    fn canonical_problem(quality_floor: f64) -> OptimizationProblem {
        let model = synth_chunk_model("c", &canonical_family()).unwrap();
        let vd = ViewportDistribution::from_pmf(&default_viewport_pmf()).unwrap();
        let bd = atoms(&[3e5, 8e5, 1.5e6, 3e6, 8e6]);
        OptimizationProblem::new(&model, &model.resolutions(), &vd, &bd, quality_floor, 1000.0)
            .unwrap()
    }

    /// Two entries with hand-checkable bound boxes, no minimum gap.
    fn two_box_problem(ranges: [(f64, f64); 2]) -> OptimizationProblem {
        let model = ChunkRqModel::new(
            "boxes",
            720,
            vec![
                curve(360, &[(ranges[0].0, 20.0), (ranges[0].1, 30.0)]),
                curve(720, &[(ranges[1].0, 25.0), (ranges[1].1, 40.0)]),
            ],
        )
        .unwrap();
        let vd = viewport(&[(720, 1.0)]);
        let bd = atoms(&[1e8]);
        OptimizationProblem::new(&model, &[360, 720], &vd, &bd, 0.0, 0.0).unwrap()
    }

    #[test]
    fn projection_handles_interacting_bounds() {
        // Disjoint boxes: ordering is free, so the projection is a plain
        // per-coordinate clamp.
        let problem = two_box_problem([(1e5, 2e5), (4e5, 8e5)]);
        let mut r = vec![1e6, 3e5];
        problem.project(&mut r);
        assert_eq!(r, vec![2e5, 4e5]);

        // Overlapping boxes where the target inverts the order: the
        // coordinates pool at a shared value, clamped by the first box.
        let problem = two_box_problem([(1e5, 3e5), (2e5, 5e5)]);
        let mut r = vec![1e6, 1e4];
        problem.project(&mut r);
        assert_eq!(r, vec![3e5, 3e5]);

        // A feasible point projects to itself.
        let mut r = vec![1.5e5, 2.5e5];
        problem.project(&mut r);
        assert_eq!(r, vec![1.5e5, 2.5e5]);
    }

    #[test]
    fn construction_rejects_unreachable_floors_and_empty_boxes() {
        let model = synth_chunk_model("c", &canonical_family()).unwrap();
        let vd = ViewportDistribution::from_pmf(&default_viewport_pmf()).unwrap();
        let bd = atoms(&[1e6, 5e6]);
        let err = OptimizationProblem::new(
            &model,
            &model.resolutions(),
            &vd,
            &bd,
            1e6,
            1000.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnreachableQualityFloor { .. }));

        let small = ChunkRqModel::new(
            "s",
            360,
            vec![curve(360, &[(1e5, 20.0), (1e6, 30.0)])],
        )
        .unwrap();
        let err = OptimizationProblem::new(
            &small,
            &[360, 360, 360],
            &viewport(&[(360, 1.0)]),
            &bd,
            0.0,
            6e5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyFeasibleBox));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(150))]

        /// Projection output satisfies bounds, ordering with the minimum
        /// gap, and is idempotent.
        #[test]
        fn projection_lands_in_the_ordered_box(
            raw in proptest::collection::vec(1e3..2e7f64, 6),
        ) {
            let problem = canonical_problem(29.0);
            let mut r = raw.clone();
            problem.project(&mut r);
            let (lo, hi) = problem.bounds();
            for i in 0..6 {
                prop_assert!(r[i] >= lo[i] - 1e-6 && r[i] <= hi[i] + 1e-6);
                if i > 0 {
                    prop_assert!(r[i] - r[i - 1] >= problem.min_gap() - 1e-6);
                }
            }
            let mut again = r.clone();
            problem.project(&mut again);
            for i in 0..6 {
                prop_assert!((again[i] - r[i]).abs() <= 1e-6);
            }
        }

        /// Projection is the nearest feasible point, certified two ways
        /// against feasible points sampled without using the projection:
        /// no feasible z is closer to the input, and the variational
        /// inequality <y - P(y), z - P(y)> <= 0 holds.
        #[test]
        fn projection_is_nearest(
            raw in proptest::collection::vec(1e3..2e7f64, 6),
            coords in proptest::collection::vec(0.0..1.0f64, 6),
        ) {
            let problem = canonical_problem(29.0);
            let mut p = raw.clone();
            problem.project(&mut p);

            let n = problem.dim();
            let mut hi_env = problem.shifted_hi.clone();
            for i in (0..n - 1).rev() {
                hi_env[i] = hi_env[i].min(hi_env[i + 1]);
            }
            let mut z = vec![0.0; n];
            let mut floor = f64::NEG_INFINITY;
            for i in 0..n {
                floor = floor.max(problem.shifted_lo[i]);
                z[i] = floor + coords[i] * (hi_env[i] - floor);
                floor = z[i];
                z[i] += i as f64 * problem.min_gap();
            }

            let dist_p: f64 = (0..n).map(|i| (raw[i] - p[i]).powi(2)).sum();
            let dist_z: f64 = (0..n).map(|i| (raw[i] - z[i]).powi(2)).sum();
            prop_assert!(dist_p <= dist_z * (1.0 + 1e-9) + 1e-3);

            let dot: f64 = (0..n).map(|i| (raw[i] - p[i]) * (z[i] - p[i])).sum();
            // The slack absorbs floating point noise on products of
            // magnitude up to ~1e14; a wrong projection overshoots it by
            // many orders.
            prop_assert!(dot <= 10.0, "dot = {dot}");
        }
    }

    #[test]
    fn a_single_entry_solution_activates_the_quality_floor() {
        let model = ChunkRqModel::new(
            "one",
            720,
            vec![curve(720, &[(1e6, 30.0), (2e6, 40.0)])],
        )
        .unwrap();
        let vd = viewport(&[(720, 1.0)]);
        let bd = atoms(&[5e6, 8e6]);
        let problem =
            OptimizationProblem::new(&model, &[720], &vd, &bd, 35.0, 1000.0).unwrap();
        let start = Ladder::new(vec![LadderEntry::new(720, 1.9e6)]).unwrap();
        let result = solve(&problem, &[start], &SolverConfig::default()).unwrap();
        let r = result.ladder.entries()[0].bitrate;
        assert!((r - 1.5e6).abs() < 2e3, "got {r}");
        assert!((result.evaluation.avg_quality - 35.0).abs() < 0.02);
        assert!(result.converged);
    }

    #[test]
    fn a_floor_met_at_the_lower_bounds_returns_the_lower_bounds() {
        let model = ChunkRqModel::new(
            "two",
            720,
            vec![
                curve(360, &[(1e5, 20.0), (1e6, 30.0)]),
                curve(720, &[(2e5, 22.0), (4e6, 40.0)]),
            ],
        )
        .unwrap();
        let vd = viewport(&[(360, 0.4), (720, 0.6)]);
        // All bandwidth mass far above every candidate bitrate, so viewing
        // probabilities cannot shift and the rate is monotone in bitrates.
        let bd = atoms(&[1e8]);
        let lower = {
            let mut r = vec![0.0, 0.0];
            let problem =
                OptimizationProblem::new(&model, &[360, 720], &vd, &bd, 0.0, 1000.0).unwrap();
            problem.project(&mut r);
            r
        };
        let problem = {
            let probe =
                OptimizationProblem::new(&model, &[360, 720], &vd, &bd, 0.0, 1000.0).unwrap();
            let floor_quality = probe.eval(&lower).quality;
            OptimizationProblem::new(&model, &[360, 720], &vd, &bd, floor_quality, 1000.0)
                .unwrap()
        };
        let start = Ladder::new(vec![
            LadderEntry::new(360, 8e5),
            LadderEntry::new(720, 3e6),
        ])
        .unwrap();
        let result = solve(&problem, &[start], &SolverConfig::default()).unwrap();
        for (got, want) in result.ladder.bitrates().iter().zip(&lower) {
            assert!((got / want - 1.0).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn the_solution_never_loses_to_a_feasible_start() {
        let problem = canonical_problem(0.0);
        let model = problem.model().clone();
        let fixed = fixed_label_ladder(&model, "crf20").unwrap();
        let hull = hull_maximizing_ladder(&model, (144, 1080), "crf20").unwrap();
        let q_fixed = problem.evaluate_ladder(&fixed).unwrap().avg_quality;

        let problem = {
            let vd = problem.viewport().clone();
            let bd = problem.bandwidth().clone();
            OptimizationProblem::new(&model, &model.resolutions(), &vd, &bd, q_fixed, 1000.0)
                .unwrap()
        };
        let starts =
            default_starts(&problem, &[fixed.clone(), hull.clone()], &SolverConfig::default())
                .unwrap();
        let result = solve(&problem, &starts, &SolverConfig::default()).unwrap();

        assert!(result.constraint_violation <= 1e-6 * q_fixed.abs());
        for baseline in [&fixed, &hull] {
            let eval = problem.evaluate_ladder(baseline).unwrap();
            if eval.avg_quality >= q_fixed - 1e-6 * q_fixed.abs() {
                assert!(result.evaluation.avg_bitrate <= eval.avg_bitrate + 1e-9);
            }
        }
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_solutions() {
        let problem = canonical_problem(31.0);
        let model = problem.model().clone();
        let fixed = fixed_label_ladder(&model, "crf20").unwrap();
        let config = SolverConfig {
            extra_starts: 4,
            seed: 7,
            ..SolverConfig::default()
        };
        let starts = default_starts(&problem, &[fixed], &config).unwrap();
        let a = solve(&problem, &starts, &config).unwrap();
        let b = solve(&problem, &starts, &config).unwrap();
        for (x, y) in a.ladder.bitrates().iter().zip(b.ladder.bitrates()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a.best_start, b.best_start);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn default_starts_are_deterministic_and_feasible() {
        let problem = canonical_problem(30.0);
        let model = problem.model().clone();
        let fixed = fixed_label_ladder(&model, "crf20").unwrap();
        let hull = hull_maximizing_ladder(&model, (144, 1080), "crf20").unwrap();
        let baselines = vec![fixed, hull];

        let none = SolverConfig {
            extra_starts: 0,
            ..SolverConfig::default()
        };
        let only_baselines = default_starts(&problem, &baselines, &none).unwrap();
        assert_eq!(only_baselines.len(), 2);

        let eight = SolverConfig {
            extra_starts: 8,
            seed: 3,
            ..SolverConfig::default()
        };
        let starts = default_starts(&problem, &baselines, &eight).unwrap();
        assert_eq!(starts.len(), 10);
        let (lo, hi) = problem.bounds();
        for ladder in &starts {
            let r = ladder.bitrates();
            for i in 0..r.len() {
                assert!(r[i] >= lo[i] - 1e-6 && r[i] <= hi[i] + 1e-6);
                if i > 0 {
                    assert!(r[i] - r[i - 1] >= problem.min_gap() - 1e-6);
                }
            }
        }
        let again = default_starts(&problem, &baselines, &eight).unwrap();
        for (a, b) in starts.iter().zip(&again) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn start_validation_errors_are_specific() {
        let problem = canonical_problem(30.0);
        assert!(matches!(
            solve(&problem, &[], &SolverConfig::default()),
            Err(Error::NoStarts)
        ));
        let short = Ladder::new(vec![LadderEntry::new(144, 1e5)]).unwrap();
        assert!(matches!(
            solve(&problem, &[short], &SolverConfig::default()),
            Err(Error::BadStartLength {
                index: 0,
                got: 1,
                expected: 6
            })
        ));
    }

    /// Exhaustive log-grid search over the ordered box, feasible points
    /// only.
    fn grid_optimum(problem: &OptimizationProblem, factor: f64) -> f64 {
        let (lo, hi) = problem.bounds();
        let q0 = problem.quality_floor();
        let feas_tol = 1e-6 * q0.abs();
        let grids: Vec<Vec<f64>> = (0..problem.dim())
            .map(|i| {
                let mut g = vec![];
                let mut v = lo[i];
                while v < hi[i] {
                    g.push(v);
                    v *= factor;
                }
                g.push(hi[i]);
                g
            })
            .collect();
        let mut best = f64::INFINITY;
        let mut index = vec![0usize; problem.dim()];
        'grid: loop {
            let r: Vec<f64> = index.iter().enumerate().map(|(i, &j)| grids[i][j]).collect();
            let ordered = r
                .windows(2)
                .all(|w| w[1] - w[0] >= problem.min_gap());
            if ordered {
                let e = problem.eval(&r);
                if e.quality >= q0 - feas_tol && e.rate < best {
                    best = e.rate;
                }
            }
            for i in (0..problem.dim()).rev() {
                index[i] += 1;
                if index[i] < grids[i].len() {
                    continue 'grid;
                }
                index[i] = 0;
                if i == 0 {
                    break 'grid;
                }
            }
        }
        best
    }

    #[test]
    fn the_solver_matches_a_coarse_grid_oracle_on_a_small_problem() {
        let model = ChunkRqModel::new(
            "three",
            1080,
            vec![
                curve(360, &[(1e5, 24.0), (4e5, 30.0), (1.6e6, 34.0)]),
                curve(720, &[(2e5, 22.0), (8e5, 32.0), (3.2e6, 40.0)]),
                curve(1080, &[(4e5, 20.0), (1.6e6, 34.0), (6.4e6, 45.0)]),
            ],
        )
        .unwrap();
        let vd = viewport(&[(360, 0.2), (720, 0.3), (1080, 0.5)]);
        let bd = atoms(&[4e5, 1e6, 2.5e6, 6e6]);
        let problem =
            OptimizationProblem::new(&model, &[360, 720, 1080], &vd, &bd, 30.0, 1000.0)
                .unwrap();
        let config = SolverConfig {
            extra_starts: 6,
            seed: 11,
            ..SolverConfig::default()
        };
        let starts = default_starts(&problem, &[], &config).unwrap();
        let result = solve(&problem, &starts, &config).unwrap();

        let grid_best = grid_optimum(&problem, 1.05);
        // The grid is both a lower-bound witness (up to its spacing) and an
        // upper-bound witness (its optimum is a feasible point the solver
        // must not lose to badly).
        assert!(
            result.evaluation.avg_bitrate <= grid_best * (1.0 + 1e-3),
            "solver {} vs grid {grid_best}",
            result.evaluation.avg_bitrate
        );
        assert!(
            result.evaluation.avg_bitrate >= grid_best * (1.0 - 0.06),
            "solver {} vs grid {grid_best}",
            result.evaluation.avg_bitrate
        );
    }
}
