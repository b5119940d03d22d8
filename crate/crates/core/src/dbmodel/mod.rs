//! The dynamic-bottleneck network stack at MLP scale.
//!
//! Parameter groups, by name prefix:
//!
//! | prefix                 | role                                  | trained |
//! |------------------------|---------------------------------------|---------|
//! | `encoder_online.`      | observation encoder                   | yes     |
//! | `encoder_momentum.`    | EMA copy of the encoder (targets)     | no      |
//! | `posterior.`           | `g^Z(z | s, a)`, diagonal Gaussian    | yes     |
//! | `predictor.`           | `q(s' | z)`, shared scalar std        | yes     |
//! | `projector_online.`    | projection of the predicted mean      | yes     |
//! | `projector_momentum.`  | EMA copy of the projector (targets)   | no      |
//! | `score`                | bilinear contrastive score matrix     | yes     |

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{GaussianDiag, Graph, ParamSet, RngStream, Tensor, Var, STD_FLOOR};

pub const ENCODER_ONLINE: &str = "encoder_online.";
pub const ENCODER_MOMENTUM: &str = "encoder_momentum.";
pub const POSTERIOR: &str = "posterior.";
pub const PREDICTOR: &str = "predictor.";
pub const PROJECTOR_ONLINE: &str = "projector_online.";
pub const PROJECTOR_MOMENTUM: &str = "projector_momentum.";
pub const SCORE: &str = "score";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DBConfig {
    pub encoder_hidden: Vec<usize>,
    pub encoding_dim: usize,
    pub posterior_hidden: usize,
    pub latent_dim: usize,
    pub predictor_hidden: usize,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub leaky_slope: f64,
    pub tau: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub learning_rate: f64,
    /// Gradient steps on the model per collected episode batch.
    pub updates_per_episode: usize,
    /// Items per update; the whole rollout when absent.
    pub minibatch_size: Option<usize>,
    /// Ablation: targets come from the online encoder and projector, with
    /// gradients flowing through them, instead of the momentum copies.
    pub shared_target_encoder: bool,
}

impl Default for DBConfig {
    fn default() -> Self {
        DBConfig {
            encoder_hidden: vec![128],
            encoding_dim: 64,
            posterior_hidden: 128,
            latent_dim: 32,
            predictor_hidden: 128,
            projection_hidden: 32,
            projection_dim: 16,
            leaky_slope: 0.01,
            tau: 0.999,
            alpha1: 0.001,
            alpha2: 0.1,
            alpha3: 0.1,
            learning_rate: 1e-4,
            updates_per_episode: 1,
            minibatch_size: None,
            shared_target_encoder: false,
        }
    }
}

impl DBConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if [self.alpha1, self.alpha2, self.alpha3]
            .iter()
            .any(|a| !(*a >= 0.0))
        {
            return bad("loss weights must be non-negative");
        }
        let dims = [
            self.encoding_dim,
            self.posterior_hidden,
            self.latent_dim,
            self.predictor_hidden,
            self.projection_hidden,
            self.projection_dim,
        ];
        if dims.contains(&0) || self.encoder_hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.updates_per_episode == 0 {
            return bad("updates_per_episode must be positive");
        }
        if self.minibatch_size.is_some_and(|m| m < 2) {
            return bad("minibatch_size must be at least 2");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Online,
    Momentum,
}

/// Parameter names bound to graph leaves.
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    /// Binds every entry of `params`; names for which `trainable` holds become
    /// differentiable leaves, the rest constants.
    pub fn new(g: &mut Graph, params: &ParamSet, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = params
            .iter()
            .map(|(n, t)| {
                let v = if trainable(n) {
                    g.param(t)
                } else {
                    g.constant(t)
                };
                (n.to_string(), v)
            })
            .collect();
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    /// Pulls gradients for every trainable name into a `ParamSet`, in the
    /// order of `params`.
    pub fn gradients(
        &self,
        g: &Graph,
        grads: &crate::numcore::Gradients,
        params: &ParamSet,
    ) -> ParamSet {
        let mut out = ParamSet::new();
        for (n, t) in params.iter() {
            let v = self.vars[n];
            if g.requires_grad(v) {
                out.insert(n, grads.get_or_zeros(v, t));
            }
        }
        out
    }
}

fn init_linear(
    params: &mut ParamSet,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut RngStream,
) {
    let limit = (6.0 / fan_in as f64).sqrt();
    let mut w = Tensor::zeros(&[fan_in, fan_out]);
    for v in w.data_mut() {
        *v = rng.uniform_range(-limit, limit);
    }
    params.insert(format!("{prefix}w"), w);
    params.insert(format!("{prefix}b"), Tensor::zeros(&[1, fan_out]));
}

/// Std heads start at zero so every std starts at `softplus(0) + floor`.
fn zero_linear(params: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize) {
    params.insert(format!("{prefix}w"), Tensor::zeros(&[fan_in, fan_out]));
    params.insert(format!("{prefix}b"), Tensor::zeros(&[1, fan_out]));
}

/// The model: configuration plus every parameter group in one `ParamSet`.
#[derive(Clone, Debug)]
pub struct DBModel {
    pub config: DBConfig,
    pub obs_dim: usize,
    pub action_count: usize,
    pub params: ParamSet,
}

impl DBModel {
    /// Fresh model. Momentum groups start as copies of their online twins and
    /// the score matrix starts at the identity; other layers use He-uniform
    /// weights and zero biases.
    pub fn new(
        obs_dim: usize,
        action_count: usize,
        config: &DBConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || action_count == 0 {
            return Err(Error::InvalidArgument(
                "obs_dim and action_count must be positive".into(),
            ));
        }
        let c = config;
        let mut p = ParamSet::new();
        let mut dims = vec![obs_dim];
        dims.extend(&c.encoder_hidden);
        dims.push(c.encoding_dim);
        for (i, w) in dims.windows(2).enumerate() {
            init_linear(&mut p, &format!("{ENCODER_ONLINE}l{i}."), w[0], w[1], rng);
        }
        let h = c.posterior_hidden;
        init_linear(
            &mut p,
            &format!("{POSTERIOR}in."),
            c.encoding_dim + action_count,
            h,
            rng,
        );
        init_linear(&mut p, &format!("{POSTERIOR}res1."), h, h, rng);
        init_linear(&mut p, &format!("{POSTERIOR}res2."), h, h, rng);
        init_linear(&mut p, &format!("{POSTERIOR}mean."), h, c.latent_dim, rng);
        zero_linear(&mut p, &format!("{POSTERIOR}std."), h, c.latent_dim);
        let h = c.predictor_hidden;
        init_linear(&mut p, &format!("{PREDICTOR}in."), c.latent_dim, h, rng);
        init_linear(&mut p, &format!("{PREDICTOR}res1."), h, h, rng);
        init_linear(&mut p, &format!("{PREDICTOR}res2."), h, h, rng);
        init_linear(&mut p, &format!("{PREDICTOR}mean."), h, c.encoding_dim, rng);
        zero_linear(&mut p, &format!("{PREDICTOR}std."), h, 1);
        init_linear(
            &mut p,
            &format!("{PROJECTOR_ONLINE}l0."),
            c.encoding_dim,
            c.projection_hidden,
            rng,
        );
        init_linear(
            &mut p,
            &format!("{PROJECTOR_ONLINE}l1."),
            c.projection_hidden,
            c.projection_dim,
            rng,
        );
        p.insert(SCORE, Tensor::identity(c.projection_dim));

        let encoder = p.strip_prefix(ENCODER_ONLINE);
        p.extend_prefixed(ENCODER_MOMENTUM, &encoder);
        let projector = p.strip_prefix(PROJECTOR_ONLINE);
        p.extend_prefixed(PROJECTOR_MOMENTUM, &projector);
        Ok(DBModel {
            config: c.clone(),
            obs_dim,
            action_count,
            params: p,
        })
    }

    pub fn encoder_layers(&self) -> usize {
        self.config.encoder_hidden.len() + 1
    }

    /// Names updated by gradient descent.
    pub fn is_trainable(name: &str) -> bool {
        !(name.starts_with(ENCODER_MOMENTUM) || name.starts_with(PROJECTOR_MOMENTUM))
    }

    fn check_cols(&self, g: &Graph, x: Var, want: usize, op: &'static str) -> Result<()> {
        let got = g.value(x).cols();
        if got != want {
            return Err(Error::dim(op, want, got));
        }
        Ok(())
    }

    /// Encoder forward on rows of `x`; leaky ReLU on hidden layers only.
    pub fn encode_var(&self, g: &mut Graph, b: &Bound, x: Var, branch: Branch) -> Result<Var> {
        self.check_cols(g, x, self.obs_dim, "encode")?;
        let prefix = match branch {
            Branch::Online => ENCODER_ONLINE,
            Branch::Momentum => ENCODER_MOMENTUM,
        };
        let layers = self.encoder_layers();
        let mut h = x;
        for i in 0..layers {
            let w = b.var(&format!("{prefix}l{i}.w"))?;
            let bias = b.var(&format!("{prefix}l{i}.b"))?;
            h = g.linear(h, w, bias)?;
            if i + 1 < layers {
                h = g.leaky_relu(h, self.config.leaky_slope);
            }
        }
        Ok(h)
    }

    /// `lrelu(x + W2 lrelu(W1 x + b1) + b2)`.
    fn residual(&self, g: &mut Graph, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let slope = self.config.leaky_slope;
        let h = g.linear(
            x,
            b.var(&format!("{prefix}res1.w"))?,
            b.var(&format!("{prefix}res1.b"))?,
        )?;
        let h = g.leaky_relu(h, slope);
        let h = g.linear(
            h,
            b.var(&format!("{prefix}res2.w"))?,
            b.var(&format!("{prefix}res2.b"))?,
        )?;
        let sum = g.add(x, h)?;
        Ok(g.leaky_relu(sum, slope))
    }

    fn floored_softplus_var(g: &mut Graph, x: Var) -> Var {
        let sp = g.softplus(x);
        g.add_scalar(sp, STD_FLOOR)
    }

    /// Posterior mean and std (`[m, latent]` each) for encodings `s` and actions.
    pub fn posterior_var(
        &self,
        g: &mut Graph,
        b: &Bound,
        s: Var,
        actions: &[usize],
    ) -> Result<(Var, Var)> {
        self.check_cols(g, s, self.config.encoding_dim, "posterior")?;
        let m = g.value(s).rows();
        if actions.len() != m {
            return Err(Error::dim("posterior actions", m, actions.len()));
        }
        let mut onehot = Tensor::zeros(&[m, self.action_count]);
        for (i, &a) in actions.iter().enumerate() {
            if a >= self.action_count {
                return Err(Error::InvalidArgument(format!(
                    "action {a} outside [0, {})",
                    self.action_count
                )));
            }
            onehot.set(i, a, 1.0);
        }
        let a = g.constant(&onehot);
        let x = g.concat_cols(s, a)?;
        let h = g.linear(x, b.var("posterior.in.w")?, b.var("posterior.in.b")?)?;
        let h = g.leaky_relu(h, self.config.leaky_slope);
        let h = self.residual(g, b, POSTERIOR, h)?;
        let mean = g.linear(h, b.var("posterior.mean.w")?, b.var("posterior.mean.b")?)?;
        let pre = g.linear(h, b.var("posterior.std.w")?, b.var("posterior.std.b")?)?;
        Ok((mean, Self::floored_softplus_var(g, pre)))
    }

    /// Prediction head: mean `[m, encoding]` and one shared std per row `[m, 1]`.
    pub fn predict_var(&self, g: &mut Graph, b: &Bound, z: Var) -> Result<(Var, Var)> {
        self.check_cols(g, z, self.config.latent_dim, "predict_next")?;
        let h = g.linear(z, b.var("predictor.in.w")?, b.var("predictor.in.b")?)?;
        let h = g.leaky_relu(h, self.config.leaky_slope);
        let h = self.residual(g, b, PREDICTOR, h)?;
        let mean = g.linear(h, b.var("predictor.mean.w")?, b.var("predictor.mean.b")?)?;
        let pre = g.linear(h, b.var("predictor.std.w")?, b.var("predictor.std.b")?)?;
        Ok((mean, Self::floored_softplus_var(g, pre)))
    }

    /// Two-layer projector with L2 normalisation after each linear layer.
    pub fn project_var(&self, g: &mut Graph, b: &Bound, v: Var, branch: Branch) -> Result<Var> {
        self.check_cols(g, v, self.config.encoding_dim, "project")?;
        let prefix = match branch {
            Branch::Online => PROJECTOR_ONLINE,
            Branch::Momentum => PROJECTOR_MOMENTUM,
        };
        let h = g.linear(
            v,
            b.var(&format!("{prefix}l0.w"))?,
            b.var(&format!("{prefix}l0.b"))?,
        )?;
        let h = g.l2_normalize_rows(h);
        let h = g.leaky_relu(h, self.config.leaky_slope);
        let h = g.linear(
            h,
            b.var(&format!("{prefix}l1.w"))?,
            b.var(&format!("{prefix}l1.b"))?,
        )?;
        Ok(g.l2_normalize_rows(h))
    }

    /// All pairwise scores: `[m, m]` with entry `(i, j) = u_pred_i^T W u_next_j`.
    pub fn score_matrix_var(
        &self,
        g: &mut Graph,
        b: &Bound,
        u_pred: Var,
        u_next: Var,
    ) -> Result<Var> {
        let uw = g.matmul(u_pred, b.var(SCORE)?)?;
        g.matmul_nt(uw, u_next)
    }

    fn frozen(&self) -> (Graph, Bound) {
        let mut g = Graph::new();
        let b = Bound::new(&mut g, &self.params, |_| false);
        (g, b)
    }

    /// Encodes a batch `[m, obs_dim]` (or a single observation).
    pub fn encode(&self, obs: &Tensor, branch: Branch) -> Result<Tensor> {
        let (mut g, b) = self.frozen();
        let x = g.constant(obs);
        let s = self.encode_var(&mut g, &b, x, branch)?;
        Ok(g.value(s).clone())
    }

    /// Posterior of a single `(s, a)`.
    pub fn posterior(&self, s: &Tensor, action: usize) -> Result<GaussianDiag> {
        let (mean, std) = self.posterior_batch(s, &[action])?;
        GaussianDiag::new(
            Tensor::vector(mean.row_slice(0)),
            Tensor::vector(std.row_slice(0)),
        )
    }

    /// Posterior means and stds for a batch of encodings.
    pub fn posterior_batch(&self, s: &Tensor, actions: &[usize]) -> Result<(Tensor, Tensor)> {
        let (mut g, b) = self.frozen();
        let x = g.constant(s);
        let (mean, std) = self.posterior_var(&mut g, &b, x, actions)?;
        Ok((g.value(mean).clone(), g.value(std).clone()))
    }

    /// Next-encoding distribution predicted from a single latent `z`.
    pub fn predict_next(&self, z: &Tensor) -> Result<GaussianDiag> {
        let (mut g, b) = self.frozen();
        let x = g.constant(z);
        if g.value(x).rows() != 1 {
            return Err(Error::dim(
                "predict_next",
                "one latent row",
                g.value(x).rows(),
            ));
        }
        let (mean, std) = self.predict_var(&mut g, &b, x)?;
        let n = self.config.encoding_dim;
        let sd = g.value(std).data()[0];
        GaussianDiag::new(Tensor::vector(g.value(mean).data()), Tensor::full(&[n], sd))
    }

    pub fn project(&self, v: &Tensor, branch: Branch) -> Result<Tensor> {
        let (mut g, b) = self.frozen();
        let x = g.constant(v);
        let u = self.project_var(&mut g, &b, x, branch)?;
        Ok(g.value(u).clone())
    }

    /// Mean per-dimension std of online encodings over `probe` rows; near
    /// zero when the encoder has collapsed to a constant.
    pub fn encoder_std(&self, probe: &Tensor) -> Result<f64> {
        let s = self.encode(probe, Branch::Online)?;
        let stds = s.column_std();
        Ok(stds.iter().sum::<f64>() / stds.len() as f64)
    }
}

/// `u_pred^T W u_next`.
pub fn score(u_pred: &Tensor, u_next: &Tensor, w: &Tensor) -> Result<f64> {
    let n = w.rows();
    if w.cols() != n || u_pred.len() != n || u_next.len() != n {
        return Err(Error::dim(
            "score",
            n,
            format!("{} and {}", u_pred.len(), u_next.len()),
        ));
    }
    let mut total = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| w.get(i, j) * u_next.data()[j]).sum();
        total += u_pred.data()[i] * row;
    }
    Ok(total)
}

/// `momentum <- tau * momentum + (1 - tau) * online` for encoder and projector.
pub fn momentum_update(params: &mut ParamSet, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    for (online, momentum) in [
        (ENCODER_ONLINE, ENCODER_MOMENTUM),
        (PROJECTOR_ONLINE, PROJECTOR_MOMENTUM),
    ] {
        let src = params.strip_prefix(online);
        for (name, value) in src.iter() {
            let target = params
                .get_mut(&format!("{momentum}{name}"))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("missing momentum twin of `{online}{name}`"))
                })?;
            if target.shape() != value.shape() {
                return Err(Error::dim(
                    "momentum_update",
                    format!("{:?}", value.shape()),
                    format!("{:?}", target.shape()),
                ));
            }
            for (m, o) in target.data_mut().iter_mut().zip(value.data()) {
                *m = tau * *m + (1.0 - tau) * o;
            }
        }
    }
    Ok(())
}
