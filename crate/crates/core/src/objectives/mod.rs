//! Mutual-information objectives of the dynamic bottleneck and the model
//! update step.
//!
//! `L_DB = a1 * I_upper - a2 * I_pred - a3 * I_nce`, minimised over the online
//! encoder, posterior, predictor, online projector and score matrix.

pub mod nce_bound;

pub use nce_bound::{exact_nce_bound_check, NceBoundReport};

use serde::{Deserialize, Serialize};

use crate::dbmodel::{momentum_update, Bound, Branch, DBModel};
use crate::error::{Error, Result};
use crate::numcore::{
    kl_to_standard_normal, Adam, AdamConfig, GaussianDiag, Graph, ParamSet, RngStream, Tensor, Var,
};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub i_pred: f64,
    pub i_nce: f64,
    pub i_upper: f64,
    pub total: f64,
    pub batch_size: usize,
}

impl LossBreakdown {
    fn from_terms(
        i_pred: f64,
        i_nce: f64,
        i_upper: f64,
        batch_size: usize,
        a: (f64, f64, f64),
    ) -> Self {
        LossBreakdown {
            i_pred,
            i_nce,
            i_upper,
            total: a.0 * i_upper - a.1 * i_pred - a.2 * i_nce,
            batch_size,
        }
    }

    /// Element-wise mean of several breakdowns (batch sizes are summed).
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        LossBreakdown {
            i_pred: items.iter().map(|b| b.i_pred).sum::<f64>() / n,
            i_nce: items.iter().map(|b| b.i_nce).sum::<f64>() / n,
            i_upper: items.iter().map(|b| b.i_upper).sum::<f64>() / n,
            total: items.iter().map(|b| b.total).sum::<f64>() / n,
            batch_size: items.iter().map(|b| b.batch_size).sum(),
        }
    }
}

/// Mean log-likelihood of `target` rows under `N(mean, std^2 I)` with one
/// std per row (`std: [m, 1]`).
pub fn i_pred_var(g: &mut Graph, target: Var, mean: Var, std: Var) -> Result<Var> {
    let n = g.value(mean).cols();
    let diff = g.sub(target, mean)?;
    let sq = g.square(diff);
    let sum_sq = g.sum_cols(sq);
    let var = g.square(std);
    let quad = g.div(sum_sq, var)?;
    let quad = g.scale(quad, -0.5);
    let log_std = g.log(std);
    let log_std = g.scale(log_std, -(n as f64));
    let per_item = g.add(quad, log_std)?;
    let per_item = g.add_scalar(per_item, -(n as f64) * HALF_LN_2PI);
    Ok(g.mean_all(per_item))
}

/// Mean KL of diagonal Gaussians (rows of `mean`, `std`) to `N(0, I)`.
pub fn i_upper_var(g: &mut Graph, mean: Var, std: Var) -> Result<Var> {
    let m2 = g.square(mean);
    let s2 = g.square(std);
    let ls = g.log(std);
    let ls = g.scale(ls, -2.0);
    let t = g.add(m2, s2)?;
    let t = g.add(t, ls)?;
    let t = g.add_scalar(t, -1.0);
    let per_item = g.sum_cols(t);
    let per_item = g.scale(per_item, 0.5);
    Ok(g.mean_all(per_item))
}

/// Mean over rows of the log-softmax of the diagonal entry of a square score matrix.
pub fn i_nce_var(g: &mut Graph, scores: Var) -> Result<Var> {
    let v = g.value(scores);
    if v.rows() != v.cols() {
        return Err(Error::dim(
            "i_nce",
            "square score matrix",
            format!("{:?}", v.shape()),
        ));
    }
    if v.rows() < 2 {
        return Err(Error::InsufficientNegatives(v.rows()));
    }
    let ls = g.log_softmax_rows(scores);
    let d = g.diag(ls)?;
    Ok(g.mean_all(d))
}

/// InfoNCE value of a precomputed `[K, K]` score matrix whose diagonal holds
/// the positive pairs.
pub fn nce_from_scores(scores: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.constant(scores);
    let v = i_nce_var(&mut g, s)?;
    Ok(g.scalar(v))
}

fn frozen(model: &DBModel) -> (Graph, Bound) {
    let mut g = Graph::new();
    let b = Bound::new(&mut g, &model.params, |_| false);
    (g, b)
}

/// `E[log q(s' | z)]` for latent rows `z` and target encodings `s_next`.
pub fn loss_i_pred(model: &DBModel, z: &Tensor, s_next: &Tensor) -> Result<f64> {
    if z.rows() == 0 {
        return Err(Error::EmptyBatch("loss_i_pred"));
    }
    let (mut g, b) = frozen(model);
    let zv = g.constant(z);
    let t = g.constant(s_next);
    let (mean, std) = model.predict_var(&mut g, &b, zv)?;
    if g.value(t).shape() != g.value(mean).shape() {
        return Err(Error::dim(
            "loss_i_pred",
            format!("{:?}", g.value(mean).shape()),
            format!("{:?}", s_next.shape()),
        ));
    }
    let v = i_pred_var(&mut g, t, mean, std)?;
    Ok(g.scalar(v))
}

/// InfoNCE with in-batch negatives: item `i`'s positive is `s_next[i]`.
pub fn loss_i_nce(model: &DBModel, z: &Tensor, s_next: &Tensor) -> Result<f64> {
    if z.rows() < 2 {
        return Err(Error::InsufficientNegatives(z.rows()));
    }
    let (mut g, b) = frozen(model);
    let zv = g.constant(z);
    let t = g.constant(s_next);
    let (mean, _) = model.predict_var(&mut g, &b, zv)?;
    let u_pred = model.project_var(&mut g, &b, mean, Branch::Online)?;
    let u_next = model.project_var(&mut g, &b, t, Branch::Momentum)?;
    let scores = model.score_matrix_var(&mut g, &b, u_pred, u_next)?;
    let v = i_nce_var(&mut g, scores)?;
    Ok(g.scalar(v))
}

pub fn loss_i_upper(posteriors: &[GaussianDiag]) -> Result<f64> {
    if posteriors.is_empty() {
        return Err(Error::EmptyBatch("loss_i_upper"));
    }
    Ok(posteriors.iter().map(kl_to_standard_normal).sum::<f64>() / posteriors.len() as f64)
}

/// `(o, a, o')` triples for one model update.
#[derive(Clone, Debug, PartialEq)]
pub struct DbBatch {
    pub obs: Tensor,
    pub actions: Vec<usize>,
    pub next_obs: Tensor,
}

impl DbBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> DbBatch {
        DbBatch {
            obs: self.obs.select_rows(idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            next_obs: self.next_obs.select_rows(idx),
        }
    }
}

/// Full objective on `params` with frozen reparameterisation noise `eps`
/// (`[m, latent]`). Returns the breakdown and, when asked, gradients for
/// every trainable group.
pub fn db_loss(
    model: &DBModel,
    params: &ParamSet,
    batch: &DbBatch,
    eps: &Tensor,
    with_grads: bool,
) -> Result<(LossBreakdown, Option<ParamSet>)> {
    let m = batch.len();
    if m == 0 {
        return Err(Error::EmptyBatch("db_loss"));
    }
    if m < 2 {
        return Err(Error::InsufficientNegatives(m));
    }
    let c = &model.config;
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params, |n| with_grads && DBModel::is_trainable(n));
    let x = g.constant(&batch.obs);
    let xn = g.constant(&batch.next_obs);
    let s = model.encode_var(&mut g, &b, x, Branch::Online)?;
    let (mu, sd) = model.posterior_var(&mut g, &b, s, &batch.actions)?;
    let e = g.constant(eps);
    let noise = g.mul(sd, e)?;
    let z = g.add(mu, noise)?;
    let target_branch = if c.shared_target_encoder {
        Branch::Online
    } else {
        Branch::Momentum
    };
    let s_next = model.encode_var(&mut g, &b, xn, target_branch)?;
    let (pm, ps) = model.predict_var(&mut g, &b, z)?;
    let i_pred = i_pred_var(&mut g, s_next, pm, ps)?;
    let u_pred = model.project_var(&mut g, &b, pm, Branch::Online)?;
    let u_next = model.project_var(&mut g, &b, s_next, target_branch)?;
    let scores = model.score_matrix_var(&mut g, &b, u_pred, u_next)?;
    let i_nce = i_nce_var(&mut g, scores)?;
    let i_upper = i_upper_var(&mut g, mu, sd)?;

    let t_up = g.scale(i_upper, c.alpha1);
    let t_pred = g.scale(i_pred, -c.alpha2);
    let t_nce = g.scale(i_nce, -c.alpha3);
    let total = g.add(t_up, t_pred)?;
    let total = g.add(total, t_nce)?;

    let breakdown = LossBreakdown::from_terms(
        g.scalar(i_pred),
        g.scalar(i_nce),
        g.scalar(i_upper),
        m,
        (c.alpha1, c.alpha2, c.alpha3),
    );
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite("L_DB".into()));
    }
    let grads = if with_grads {
        let gr = g.backward(total)?;
        Some(b.gradients(&g, &gr, params))
    } else {
        None
    };
    Ok((breakdown, grads))
}

pub fn db_optimizer(model: &DBModel) -> Adam {
    Adam::new(AdamConfig {
        learning_rate: model.config.learning_rate,
        ..AdamConfig::default()
    })
}

/// One gradient step on the trainable groups followed by the momentum update.
///
/// On a non-finite loss or gradient the parameters are left untouched.
pub fn db_train_step(
    model: &mut DBModel,
    opt: &mut Adam,
    batch: &DbBatch,
    rng: &mut RngStream,
) -> Result<LossBreakdown> {
    let eps = rng.normal_tensor(&[batch.len(), model.config.latent_dim]);
    let (breakdown, grads) = db_loss(model, &model.params, batch, &eps, true)?;
    let grads = grads.expect("requested");
    if !grads.is_finite() {
        return Err(Error::NonFinite("L_DB gradient".into()));
    }
    opt.step(&mut model.params, &grads)?;
    momentum_update(&mut model.params, model.config.tau)?;
    Ok(breakdown)
}

/// All model updates for one collected episode batch: `updates_per_episode`
/// steps, each on the whole batch or on a fresh random minibatch.
pub fn db_update_episode(
    model: &mut DBModel,
    opt: &mut Adam,
    batch: &DbBatch,
    rng: &mut RngStream,
) -> Result<LossBreakdown> {
    let mut out = Vec::with_capacity(model.config.updates_per_episode);
    for _ in 0..model.config.updates_per_episode {
        match model.config.minibatch_size {
            Some(mb) if mb < batch.len() => {
                let mut idx: Vec<usize> = (0..batch.len()).collect();
                rng.shuffle(&mut idx);
                idx.truncate(mb);
                out.push(db_train_step(model, opt, &batch.select(&idx), rng)?);
            }
            _ => out.push(db_train_step(model, opt, batch, rng)?),
        }
    }
    Ok(LossBreakdown::mean(&out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbmodel::{DBConfig, PREDICTOR, SCORE};
    use crate::envsim::{grid_reset, grid_step, NoiseMode, NoisyGridConfig};
    use crate::numcore::finite_difference_check;
    use proptest::prelude::*;

    fn small_config() -> DBConfig {
        DBConfig {
            encoder_hidden: vec![12],
            encoding_dim: 6,
            posterior_hidden: 10,
            latent_dim: 4,
            predictor_hidden: 10,
            projection_hidden: 5,
            projection_dim: 3,
            ..DBConfig::default()
        }
    }

    fn random_batch(m: usize, obs: usize, actions: usize, seed: u64) -> DbBatch {
        let mut rng = RngStream::new(seed);
        DbBatch {
            obs: rng.normal_tensor(&[m, obs]),
            actions: (0..m).map(|_| rng.index(actions)).collect(),
            next_obs: rng.normal_tensor(&[m, obs]),
        }
    }

    #[test]
    fn i_pred_at_mode_with_unit_std() {
        let mut g = Graph::new();
        let t = g.constant(&Tensor::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap());
        let std = g.constant(&Tensor::scalar(1.0));
        let v = i_pred_var(&mut g, t, t, std).unwrap();
        assert!((g.scalar(v) + 1.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn i_pred_is_a_batch_mean() {
        let m = DBModel::new(5, 2, &small_config(), &mut RngStream::new(0)).unwrap();
        let mut rng = RngStream::new(1);
        let z = rng.normal_tensor(&[1, 4]);
        let s = rng.normal_tensor(&[1, 6]);
        let one = loss_i_pred(&m, &z, &s).unwrap();
        let two = loss_i_pred(&m, &z.select_rows(&[0, 0]), &s.select_rows(&[0, 0])).unwrap();
        assert!((one - two).abs() < 1e-12);
        assert!(loss_i_pred(&m, &Tensor::zeros(&[0, 4]), &Tensor::zeros(&[0, 6])).is_err());
    }

    #[test]
    fn i_nce_uniform_scores() {
        assert!(
            (nce_from_scores(&Tensor::zeros(&[2, 2])).unwrap() + std::f64::consts::LN_2).abs()
                < 1e-12
        );
        assert!((nce_from_scores(&Tensor::zeros(&[5, 5])).unwrap() + 5f64.ln()).abs() < 1e-12);
        let mut m = DBModel::new(5, 2, &small_config(), &mut RngStream::new(0)).unwrap();
        m.params.insert(SCORE, Tensor::zeros(&[3, 3]));
        let mut rng = RngStream::new(2);
        let v = loss_i_nce(&m, &rng.normal_tensor(&[4, 4]), &rng.normal_tensor(&[4, 6])).unwrap();
        assert!((v + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn i_nce_saturates_and_needs_negatives() {
        let mut s = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            s.set(i, i, 50.0);
        }
        let v = nce_from_scores(&s).unwrap();
        assert!(v <= 0.0 && v.abs() < 1e-20, "{v}");
        assert!(matches!(
            nce_from_scores(&Tensor::zeros(&[1, 1])),
            Err(Error::InsufficientNegatives(1))
        ));
        let m = DBModel::new(5, 2, &small_config(), &mut RngStream::new(0)).unwrap();
        assert!(matches!(
            loss_i_nce(&m, &Tensor::zeros(&[1, 4]), &Tensor::zeros(&[1, 6])),
            Err(Error::InsufficientNegatives(1))
        ));
    }

    #[test]
    fn i_upper_examples() {
        assert_eq!(
            loss_i_upper(&[GaussianDiag::standard(3), GaussianDiag::standard(3)]).unwrap(),
            0.0
        );
        let g = GaussianDiag::new(Tensor::vector(&[1.0]), Tensor::vector(&[1.0])).unwrap();
        assert!((loss_i_upper(&[g]).unwrap() - 0.5).abs() < 1e-15);
        assert!(loss_i_upper(&[]).is_err());
    }

    #[test]
    fn full_loss_gradient_matches_fd() {
        let model = DBModel::new(7, 3, &small_config(), &mut RngStream::new(3)).unwrap();
        let batch = random_batch(8, 7, 3, 4);
        let eps = RngStream::new(5).normal_tensor(&[8, 4]);
        let loss = |p: &ParamSet| {
            let (b, g) = db_loss(&model, p, &batch, &eps, true)?;
            Ok((b.total, g.expect("requested")))
        };
        let report = finite_difference_check(loss, &model.params, 1e-5, 0).unwrap();
        assert!(report.passes(1e-4), "{report:?}");
        let groups: Vec<&str> = report.params.iter().map(|p| p.name.as_str()).collect();
        assert!(groups.contains(&"encoder_online.l0.w") && groups.contains(&SCORE));
        assert!(!groups.iter().any(|n| n.contains("momentum")));
    }

    #[test]
    fn shared_target_gradient_matches_fd() {
        let cfg = DBConfig {
            shared_target_encoder: true,
            ..small_config()
        };
        let model = DBModel::new(7, 3, &cfg, &mut RngStream::new(6)).unwrap();
        let batch = random_batch(8, 7, 3, 7);
        let eps = RngStream::new(8).normal_tensor(&[8, 4]);
        let loss = |p: &ParamSet| {
            let (b, g) = db_loss(&model, p, &batch, &eps, true)?;
            Ok((b.total, g.expect("requested")))
        };
        let report = finite_difference_check(loss, &model.params, 1e-5, 0).unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn zero_weights_or_zero_rate_only_blend_momentum() {
        for cfg in [
            DBConfig {
                alpha1: 0.0,
                alpha2: 0.0,
                alpha3: 0.0,
                ..small_config()
            },
            DBConfig {
                learning_rate: 0.0,
                ..small_config()
            },
        ] {
            let mut model = DBModel::new(7, 3, &cfg, &mut RngStream::new(9)).unwrap();
            // Desynchronise the twins so the blend is visible.
            momentum_update(&mut model.params, 1.0).unwrap();
            for (n, t) in model.params.iter_mut() {
                if n.starts_with("encoder_online") {
                    t.data_mut().iter_mut().for_each(|v| *v += 0.5);
                }
            }
            let before = model.params.clone();
            let mut opt = db_optimizer(&model);
            db_train_step(
                &mut model,
                &mut opt,
                &random_batch(6, 7, 3, 10),
                &mut RngStream::new(11),
            )
            .unwrap();
            let mut expected = before.clone();
            momentum_update(&mut expected, cfg.tau).unwrap();
            assert!(model.params.bit_eq(&expected));
        }
    }

    #[test]
    fn momentum_groups_change_only_through_blending() {
        let cfg = DBConfig {
            tau: 1.0,
            ..small_config()
        };
        let mut model = DBModel::new(7, 3, &cfg, &mut RngStream::new(12)).unwrap();
        let before = model.params.clone();
        let mut opt = db_optimizer(&model);
        for i in 0..3 {
            db_train_step(
                &mut model,
                &mut opt,
                &random_batch(6, 7, 3, 13 + i),
                &mut RngStream::new(i),
            )
            .unwrap();
        }
        assert!(model
            .params
            .subset("encoder_momentum.")
            .bit_eq(&before.subset("encoder_momentum.")));
        assert!(model
            .params
            .subset("projector_momentum.")
            .bit_eq(&before.subset("projector_momentum.")));
        assert!(!model
            .params
            .subset(PREDICTOR)
            .bit_eq(&before.subset(PREDICTOR)));
    }

    #[test]
    fn non_finite_loss_leaves_params_untouched() {
        let mut model = DBModel::new(7, 3, &small_config(), &mut RngStream::new(14)).unwrap();
        let before = model.params.clone();
        let mut batch = random_batch(4, 7, 3, 15);
        batch.obs.data_mut()[0] = f64::INFINITY;
        let mut opt = db_optimizer(&model);
        assert!(db_train_step(&mut model, &mut opt, &batch, &mut RngStream::new(0)).is_err());
        assert!(model.params.bit_eq(&before));
    }

    #[test]
    fn training_descends_on_noiseless_grid() {
        let env = NoisyGridConfig {
            grid_side: 4,
            noise_dims: 0,
            noise_mode: NoiseMode::None,
            goal_cell: None,
            ..NoisyGridConfig::default()
        };
        let mut rng = RngStream::new(16);
        let (mut s, mut obs) = grid_reset(&env, &mut rng);
        let (mut o, mut a, mut o2) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..64 {
            let act = rng.index(4);
            let (s2, tr) = grid_step(&s, &obs, act, &env, &mut rng).unwrap();
            o.push(tr.obs.data().to_vec());
            a.push(act);
            o2.push(tr.next_obs.data().to_vec());
            s = s2;
            obs = tr.next_obs;
        }
        let batch = DbBatch {
            obs: Tensor::from_rows(&o).unwrap(),
            actions: a,
            next_obs: Tensor::from_rows(&o2).unwrap(),
        };
        let cfg = DBConfig {
            learning_rate: 1e-3,
            ..DBConfig::default()
        };
        let mut model = DBModel::new(16, 4, &cfg, &mut RngStream::new(17)).unwrap();
        let mut opt = db_optimizer(&model);
        let mut train_rng = RngStream::new(18);
        let totals: Vec<f64> = (0..200)
            .map(|_| {
                db_train_step(&mut model, &mut opt, &batch, &mut train_rng)
                    .unwrap()
                    .total
            })
            .collect();
        let avg = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
        let first = avg(&totals[..10]);
        let last = avg(&totals[190..]);
        assert!(last < first, "{first} -> {last}");
        let windows: Vec<f64> = totals.windows(10).step_by(10).map(avg).collect();
        assert!(
            windows.windows(2).filter(|w| w[1] < w[0]).count() >= windows.len() * 3 / 4,
            "{windows:?}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn breakdown_identity_and_signs(seed in 0u64..1000, m in 2usize..10) {
            let model = DBModel::new(5, 2, &small_config(), &mut RngStream::new(seed)).unwrap();
            let batch = random_batch(m, 5, 2, seed + 1);
            let eps = RngStream::new(seed + 2).normal_tensor(&[m, 4]);
            let (b, _) = db_loss(&model, &model.params, &batch, &eps, false).unwrap();
            let c = &model.config;
            prop_assert!((b.total - (c.alpha1 * b.i_upper - c.alpha2 * b.i_pred - c.alpha3 * b.i_nce)).abs() <= 1e-10);
            prop_assert!(b.i_nce <= 0.0);
            prop_assert!(b.i_upper >= 0.0);
        }

        #[test]
        fn nce_is_permutation_invariant(seed in 0u64..1000) {
            let model = DBModel::new(5, 2, &small_config(), &mut RngStream::new(seed)).unwrap();
            let mut rng = RngStream::new(seed + 3);
            let z = rng.normal_tensor(&[6, 4]);
            let s = rng.normal_tensor(&[6, 6]);
            let mut perm: Vec<usize> = (0..6).collect();
            rng.shuffle(&mut perm);
            let a = loss_i_nce(&model, &z, &s).unwrap();
            let b = loss_i_nce(&model, &z.select_rows(&perm), &s.select_rows(&perm)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn i_upper_non_negative(seed in 0u64..1000) {
            let mut rng = RngStream::new(seed);
            let posts: Vec<GaussianDiag> = (0..4)
                .map(|_| {
                    let mean = rng.normal_tensor(&[3]);
                    let std = rng.normal_tensor(&[3]).map(crate::numcore::floored_softplus);
                    GaussianDiag::new(mean, std).unwrap()
                })
                .collect();
            prop_assert!(loss_i_upper(&posts).unwrap() >= 0.0);
        }
    }
}
