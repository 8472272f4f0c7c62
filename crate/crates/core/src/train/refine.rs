//! Target construction for one semi-supervised step: label co-refinement,
//! guessed targets for unlabelled samples, and pairwise mixing.

use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::losses::temp_sharpen;
use crate::nn::{softmax_rows, AugmentSpec, Matrix, Mlp};
use crate::rng::Rng;

/// `sharpen(w y + (1 - w) p, T)`.
pub fn co_refine(y: &[f64], w: f64, p: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("clean weight {w} outside [0, 1]")));
    }
    if y.len() != p.len() {
        return Err(Error::Shape(format!("{} label entries vs {} probabilities", y.len(), p.len())));
    }
    let blend: Vec<f64> = y.iter().zip(p).map(|(&yc, &pc)| w * yc + (1.0 - w) * pc).collect();
    temp_sharpen(&blend, temperature)
}

/// `m` independent augmentations of `batch` and the model's softmax output
/// averaged over them.
pub fn augment_and_average(
    model: &Mlp,
    batch: &Matrix,
    m: usize,
    augment: &AugmentSpec,
    rng: &mut Rng,
) -> Result<(Vec<Matrix>, Matrix)> {
    if m == 0 {
        return Err(Error::invalid("need at least one augmentation"));
    }
    let mut views = Vec::with_capacity(m);
    let mut mean = Matrix::zeros(batch.rows(), model.arch.num_classes());
    for _ in 0..m {
        let view = augment.apply(batch, rng);
        mean.add_assign(&softmax_rows(&model.forward_logits(&view)?));
        views.push(view);
    }
    let inv = 1.0 / m as f64;
    mean.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
    Ok((views, mean))
}

/// Sharpened average prediction over `m` augmentations of one sample.
pub fn guess_unlabeled(
    model: &Mlp,
    sample: &[f64],
    m: usize,
    temperature: f64,
    augment: &AugmentSpec,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let x = Matrix::from_vec(1, sample.len(), sample.to_vec());
    let (_, mean) = augment_and_average(model, &x, m, augment, rng)?;
    temp_sharpen(mean.row(0), temperature)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedPair {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    /// Weight of the first operand, always in `[0.5, 1]`.
    pub lambda: f64,
}

/// Convex combination of two (input, target) pairs with weight
/// `max(lambda, 1 - lambda)` on the first.
pub fn mixmatch_pair(a: (&[f64], &[f64]), b: (&[f64], &[f64]), lambda: f64) -> MixedPair {
    let l = lambda.max(1.0 - lambda);
    let mix = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| l * x + (1.0 - l) * y).collect() };
    MixedPair { input: mix(a.0, b.0), target: mix(a.1, b.1), lambda: l }
}

/// Mixed inputs and soft targets for one step. The first `labeled_rows`
/// rows come from the labelled batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedBatch {
    pub inputs: Matrix,
    pub targets: Matrix,
    /// Weight of the first operand of every mixed row.
    pub lambdas: Vec<f64>,
    pub labeled_rows: usize,
}

impl RefinedBatch {
    pub fn labeled_targets(&self) -> Matrix {
        rows_of(&self.targets, 0, self.labeled_rows)
    }

    pub fn unlabeled_targets(&self) -> Matrix {
        rows_of(&self.targets, self.labeled_rows, self.targets.rows() - self.labeled_rows)
    }
}

fn rows_of(m: &Matrix, start: usize, len: usize) -> Matrix {
    let c = m.cols();
    Matrix::from_vec(len, c, m.as_slice()[start * c..(start + len) * c].to_vec())
}

/// Knobs used while building a [`RefinedBatch`].
#[derive(Debug, Clone, Copy)]
pub struct RefineParams {
    pub augmentations: usize,
    pub temperature: f64,
    pub mix_alpha: f64,
    pub augment: AugmentSpec,
}

/// Builds the mixed batch from labelled rows `xs` (one-hot `ys`, clean
/// weights `w`) and unlabelled rows `us`.
///
/// Every sample is augmented `M` times; each view of a labelled sample
/// carries its co-refined label and each view of an unlabelled sample its
/// sharpened guess. All views are then mixed against a shuffled copy of the
/// union, one Beta draw per row.
pub fn refine_batch(
    model: &Mlp,
    xs: &Matrix,
    ys: &Matrix,
    w: &[f64],
    us: &Matrix,
    params: &RefineParams,
    rng: &mut Rng,
) -> Result<RefinedBatch> {
    let m = params.augmentations;
    let (x_views, px) = augment_and_average(model, xs, m, &params.augment, rng)?;
    let mut x_targets = Vec::with_capacity(xs.rows());
    for b in 0..xs.rows() {
        x_targets.push(co_refine(ys.row(b), w[b], px.row(b), params.temperature)?);
    }
    let mut u_views = Vec::new();
    let mut u_targets = Vec::with_capacity(us.rows());
    if us.rows() > 0 {
        let (views, pu) = augment_and_average(model, us, m, &params.augment, rng)?;
        for b in 0..us.rows() {
            u_targets.push(temp_sharpen(pu.row(b), params.temperature)?);
        }
        u_views = views;
    }

    let mut inputs: Vec<&[f64]> = Vec::new();
    let mut targets: Vec<&[f64]> = Vec::new();
    for (views, tgt) in [(&x_views, &x_targets), (&u_views, &u_targets)] {
        for view in views {
            for (b, t) in tgt.iter().enumerate() {
                inputs.push(view.row(b));
                targets.push(t);
            }
        }
    }
    let total = inputs.len();
    let mut partner: Vec<usize> = (0..total).collect();
    partner.shuffle(rng);
    let beta = Beta::new(params.mix_alpha, params.mix_alpha)
        .map_err(|e| Error::invalid(format!("mix_alpha {}: {e}", params.mix_alpha)))?;

    let d = xs.cols();
    let k = model.arch.num_classes();
    let mut mixed_x = Vec::with_capacity(total * d);
    let mut mixed_y = Vec::with_capacity(total * k);
    let mut lambdas = Vec::with_capacity(total);
    for (i, &j) in partner.iter().enumerate() {
        let mixed = mixmatch_pair((inputs[i], targets[i]), (inputs[j], targets[j]), beta.sample(rng));
        mixed_x.extend(mixed.input);
        mixed_y.extend(mixed.target);
        lambdas.push(mixed.lambda);
    }
    Ok(RefinedBatch {
        inputs: Matrix::from_vec(total, d, mixed_x),
        targets: Matrix::from_vec(total, k, mixed_y),
        lambdas,
        labeled_rows: m * xs.rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, Role};
    use crate::rng;
    use proptest::prelude::*;

    fn close_all(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn co_refine_cases() {
        close_all(&co_refine(&[0., 1., 0.], 1.0, &[0.2, 0.3, 0.5], 1.0).unwrap(), &[0., 1., 0.], 0.0);
        close_all(&co_refine(&[0., 1., 0.], 0.0, &[0.2, 0.3, 0.5], 1.0).unwrap(), &[0.2, 0.3, 0.5], 1e-15);
        // [0.8, 0.2] squared and renormalised: 0.64 / 0.68, 0.04 / 0.68.
        let r = co_refine(&[1., 0.], 0.5, &[0.6, 0.4], 0.5).unwrap();
        close_all(&r, &[0.64 / 0.68, 0.04 / 0.68], 1e-12);
        close_all(&r, &[0.9412, 0.0588], 1e-4);
        assert!(co_refine(&[1., 0.], 1.5, &[0.5, 0.5], 1.0).is_err());
    }

    fn model() -> Mlp {
        Mlp::init(&Architecture::mlp(3, &[5], 4).unwrap(), Role::NetD, 9)
    }

    #[test]
    fn guess_degenerate_pipeline() {
        let x = [0.3, -1.2, 0.8];
        let mut r = rng::stream(1, &[]);
        let g1 = guess_unlabeled(&model(), &x, 1, 1.0, &AugmentSpec::NONE, &mut r).unwrap();
        let direct = model().predict_probs(&Matrix::from_vec(1, 3, x.to_vec())).unwrap();
        close_all(&g1, direct.row(0), 1e-15);
        let g2 = guess_unlabeled(&model(), &x, 2, 1.0, &AugmentSpec::NONE, &mut r).unwrap();
        close_all(&g1, &g2, 1e-15);
        let aug = AugmentSpec::jitter(0.5).unwrap();
        let g = guess_unlabeled(&model(), &x, 3, 0.5, &aug, &mut r).unwrap();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixmatch_cases() {
        let a: (&[f64], &[f64]) = (&[1.0, 2.0], &[0.3, 0.7]);
        for l in [0.0, 0.2, 0.5, 0.9] {
            let m = mixmatch_pair(a, a, l);
            close_all(&m.input, a.0, 1e-15);
            close_all(&m.target, a.1, 1e-15);
        }
        let m = mixmatch_pair((&[1.0], &[1.0, 0.0]), (&[0.0], &[0.0, 1.0]), 0.3);
        assert!((m.lambda - 0.7).abs() < 1e-15);
        close_all(&m.input, &[0.7], 1e-15);
        close_all(&m.target, &[0.7, 0.3], 1e-15);
    }

    fn params() -> RefineParams {
        RefineParams { augmentations: 2, temperature: 0.5, mix_alpha: 4.0, augment: AugmentSpec::jitter(0.1).unwrap() }
    }

    #[test]
    fn refined_batch_shapes() {
        let xs = Matrix::from_vec(3, 3, (0..9).map(|i| i as f64 * 0.1).collect());
        let ys = Matrix::from_rows(&[[1., 0., 0., 0.], [0., 1., 0., 0.], [0., 0., 0., 1.]], 4);
        let us = Matrix::from_vec(2, 3, vec![0.5; 6]);
        let mut r = rng::stream(3, &[]);
        let b = refine_batch(&model(), &xs, &ys, &[1.0, 0.5, 0.0], &us, &params(), &mut r).unwrap();
        assert_eq!(b.inputs.shape(), (10, 3));
        assert_eq!(b.labeled_rows, 6);
        assert_eq!(b.labeled_targets().rows(), 6);
        assert_eq!(b.unlabeled_targets().rows(), 4);

        let none = Matrix::zeros(0, 3);
        let b = refine_batch(&model(), &xs, &ys, &[1.0; 3], &none, &params(), &mut r).unwrap();
        assert_eq!(b.inputs.rows(), 6);
        assert_eq!(b.unlabeled_targets().rows(), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn refined_targets_are_distributions(seed in any::<u64>(), w in prop::collection::vec(0.0f64..=1.0, 1..6), nu in 0usize..5) {
            let mut r = rng::stream(seed, &[]);
            let nx = w.len();
            let xs = Matrix::from_vec(nx, 3, (0..nx * 3).map(|i| (i as f64).sin()).collect());
            let mut ys = Matrix::zeros(nx, 4);
            for b in 0..nx {
                ys[(b, (seed as usize + b) % 4)] = 1.0;
            }
            let us = Matrix::from_vec(nu, 3, (0..nu * 3).map(|i| (i as f64).cos()).collect());
            let batch = refine_batch(&model(), &xs, &ys, &w, &us, &params(), &mut r).unwrap();
            for row in batch.targets.iter_rows() {
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            prop_assert!(batch.lambdas.iter().all(|&l| (0.5..=1.0).contains(&l)));
        }
    }
}
