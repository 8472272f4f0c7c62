//! Central finite-difference check of every training objective composed
//! with the rectifier network.

use edm_core::losses::{ce_loss_taped, dm_loss_taped, mse_loss_taped, reg_loss_taped, sl_loss_taped, LossWeights};
use edm_core::nn::{Architecture, Matrix, Mlp, Role, Tape, Var};
use edm_core::rng;
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub const STEP: f64 = 1e-4;
pub const COORDINATES: usize = 100;
/// Denominator floor so near-zero gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    SubjectiveLogic,
    CrossEntropy,
    SquaredError,
    Prior,
    Dm,
}

impl Objective {
    pub const ALL: [Objective; 5] =
        [Objective::SubjectiveLogic, Objective::CrossEntropy, Objective::SquaredError, Objective::Prior, Objective::Dm];
}

#[derive(Debug, Clone, Copy)]
pub struct CheckResult {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

const ROWS: usize = 8;
const LABELED_ROWS: usize = 5;
const CLASSES: usize = 4;

fn random_distribution(rng: &mut rng::Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..CLASSES).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn one_hot(rng: &mut rng::Rng) -> Vec<f64> {
    let mut y = vec![0.0; CLASSES];
    y[rng.random_range(0..CLASSES)] = 1.0;
    y
}

struct Problem {
    batch: Matrix,
    targets: Matrix,
    unlabeled_targets: Matrix,
}

impl Problem {
    fn new(objective: Objective, rng: &mut rng::Rng) -> Self {
        let batch = Matrix::from_vec(ROWS, 6, (0..ROWS * 6).map(|_| StandardNormal.sample(rng)).collect());
        let rows = |n: usize, rng: &mut rng::Rng, hard: bool| {
            let data: Vec<Vec<f64>> =
                (0..n).map(|_| if hard { one_hot(rng) } else { random_distribution(rng) }).collect();
            Matrix::from_rows(&data, CLASSES)
        };
        let (targets, unlabeled_targets) = match objective {
            Objective::SubjectiveLogic => (rows(ROWS, rng, true), Matrix::zeros(0, CLASSES)),
            Objective::Dm => (rows(LABELED_ROWS, rng, false), rows(ROWS - LABELED_ROWS, rng, false)),
            _ => (rows(ROWS, rng, false), Matrix::zeros(0, CLASSES)),
        };
        Problem { batch, targets, unlabeled_targets }
    }

    fn loss(&self, objective: Objective, tape: &mut Tape, logits: Var) -> Var {
        match objective {
            Objective::SubjectiveLogic => sl_loss_taped(tape, logits, &self.targets),
            Objective::CrossEntropy => {
                let p = tape.softmax_rows(logits);
                ce_loss_taped(tape, p, &self.targets)
            }
            Objective::SquaredError => {
                let p = tape.softmax_rows(logits);
                mse_loss_taped(tape, p, &self.targets)
            }
            Objective::Prior => {
                let p = tape.softmax_rows(logits);
                reg_loss_taped(tape, p)
            }
            Objective::Dm => {
                dm_loss_taped(tape, logits, &self.targets, &self.unlabeled_targets, LossWeights::default()).total
            }
        }
    }

    fn value(&self, objective: Objective, model: &Mlp) -> f64 {
        model.value_and_grad(&self.batch, |t, l| self.loss(objective, t, l)).expect("shapes agree").0
    }

    /// Everything whose change would put a kink between the two probes.
    fn regime(&self, objective: Objective, model: &Mlp) -> (Vec<bool>, Vec<bool>) {
        let hidden = model.activation_pattern(&self.batch).expect("shapes agree");
        let logits = match objective {
            Objective::SubjectiveLogic => {
                model.forward_logits(&self.batch).expect("shapes agree").as_slice().iter().map(|&z| z > 0.0).collect()
            }
            _ => Vec::new(),
        };
        (hidden, logits)
    }
}

fn perturbed(model: &Mlp, index: usize, delta: f64) -> Mlp {
    let mut m = model.clone();
    *m.params_mut().nth(index).expect("index in range") += delta;
    m
}

/// Compares taped gradients with central differences on `COORDINATES`
/// randomly chosen parameters. Coordinates whose probes straddle a rectifier
/// kink are skipped.
pub fn check(objective: Objective, seed: u64) -> CheckResult {
    let mut rng = rng::stream(seed, &[0xD1FF]);
    let arch = Architecture::mlp(6, &[10, 10], CLASSES).expect("valid widths");
    let model = Mlp::init(&arch, Role::NetD, seed);
    let problem = Problem::new(objective, &mut rng);
    let (_, grads) = model.value_and_grad(&problem.batch, |t, l| problem.loss(objective, t, l)).expect("shapes agree");
    let analytic: Vec<f64> = grads.iter().copied().collect();
    let base = problem.regime(objective, &model);

    let mut result = CheckResult { max_rel_error: 0.0, checked: 0, skipped: 0 };
    for index in sample(&mut rng, analytic.len(), COORDINATES.min(analytic.len())) {
        let plus = perturbed(&model, index, STEP);
        let minus = perturbed(&model, index, -STEP);
        if problem.regime(objective, &plus) != base || problem.regime(objective, &minus) != base {
            result.skipped += 1;
            continue;
        }
        let numeric = (problem.value(objective, &plus) - problem.value(objective, &minus)) / (2.0 * STEP);
        let a = analytic[index];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        result.max_rel_error = result.max_rel_error.max(rel);
        result.checked += 1;
    }
    result
}
