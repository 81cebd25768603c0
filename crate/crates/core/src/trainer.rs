//! Training loop: pretraining, mixture initialization, alternating updates
//! of the encoders and the prior, and final hard assignment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gmm::{em_fit, responsibilities, GmmFit, MixturePrior};
use crate::graph::{AttributedGraph, RunConfig};
use crate::losses::{build_objective, Frozen, LossReport, LossWeights, NoiseDraw, Trainable};
use crate::model::{node_means, standard_normal, ModelContext, ModelParams};
use crate::tensor::{adam_step, AdamState, DenseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Alternating,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Alternating => "alternating",
        }
    }
}

/// Which parameter group an epoch updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateGroup {
    Network,
    Prior,
}

/// Loss values recorded for one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub group: UpdateGroup,
    pub report: LossReport,
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub phase: Phase,
    pub params: ModelParams,
    pub prior: Option<MixturePrior>,
    pub network_opt: AdamState,
    pub prior_opt: Option<AdamState>,
    pub history: Vec<EpochRecord>,
    /// The EM fit that initialized the prior.
    pub em: Option<GmmFit>,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Loss history as a TSV document.
    pub fn loss_log(&self) -> String {
        let mut out = String::from(LossReport::TSV_HEADER);
        out.push('\n');
        for rec in &self.history {
            out.push_str(&rec.report.tsv_row(rec.epoch, rec.phase.as_str()));
            out.push('\n');
        }
        out
    }
}

/// Final hard clustering with the quantities it came from.
#[derive(Clone, Debug)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub responsibilities: DenseMatrix,
    /// Node posterior means.
    pub embeddings: DenseMatrix,
}

/// Alternation rule: within each block of ten epochs, residues below
/// `interval` train the networks and the rest train the prior.
pub fn update_group(epoch: usize, interval: usize) -> UpdateGroup {
    if epoch % 10 < interval {
        UpdateGroup::Network
    } else {
        UpdateGroup::Prior
    }
}

/// Drives one training run on one graph.
pub struct Trainer {
    pub ctx: ModelContext,
    pub config: RunConfig,
    pub k: usize,
    pub state: TrainState,
}

type Hook<'h> = &'h mut dyn FnMut(&Trainer) -> Result<()>;

impl Trainer {
    /// Builds the context and initializes weights from `config.seed`.
    pub fn new(graph: &AttributedGraph, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let k = config
            .k
            .or(graph.k_clusters())
            .ok_or_else(|| Error::Input("cluster count unknown: no labels and no k given".into()))?;
        if k < 1 || k > graph.n_nodes() {
            return Err(Error::Input(format!(
                "cluster count {k} invalid for {} nodes",
                graph.n_nodes()
            )));
        }
        let ctx = ModelContext::new(graph, config.self_loops);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(
            graph.n_nodes(),
            graph.n_attrs(),
            config.hidden,
            config.embedding_dim,
            &mut rng,
        );
        let network_opt = AdamState::new(config.lr, &params.shapes());
        Ok(Self {
            ctx,
            k,
            state: TrainState {
                epoch: 0,
                phase: Phase::Pretrain,
                params,
                prior: None,
                network_opt,
                prior_opt: None,
                history: Vec::new(),
                em: None,
                rng,
            },
            config,
        })
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            omega: self.config.omega,
            beta: self.config.beta,
            alpha: self.config.alpha,
            pos_weight: self.config.pos_weight,
            cah_input: self.config.cah_input,
        }
    }

    fn draw_noise(&mut self) -> Vec<NoiseDraw> {
        let (n, m, j) = (self.ctx.n_nodes(), self.ctx.n_attrs(), self.config.embedding_dim);
        (0..self.config.mc_samples)
            .map(|_| NoiseDraw {
                nodes: standard_normal(n, j, &mut self.state.rng),
                attrs: standard_normal(m, j, &mut self.state.rng),
            })
            .collect()
    }

    fn record(&mut self, group: UpdateGroup, report: LossReport) {
        self.state.history.push(EpochRecord {
            epoch: self.state.epoch,
            phase: self.state.phase,
            group,
            report,
        });
    }

    fn maybe_checkpoint(&self, hook: &mut Option<Hook<'_>>) -> Result<()> {
        let every = self.config.checkpoint_every;
        if every > 0 && self.state.epoch.is_multiple_of(every) {
            if let Some(h) = hook.as_mut() {
                h(self)?;
            }
        }
        Ok(())
    }

    fn epoch_error(&self, e: Error) -> Error {
        match e {
            Error::Numeric(msg) => Error::Numeric(format!("epoch {}: {msg}", self.state.epoch)),
            other => other,
        }
    }

    /// One network-only update against the single standard-normal prior.
    fn pretrain_epoch(&mut self) -> Result<()> {
        let noise = self.draw_noise();
        let trainable = Trainable {
            network: true,
            prior: false,
        };
        let obj = build_objective(
            &self.ctx,
            &self.state.params,
            None,
            &noise,
            &self.weights(),
            trainable,
            &Frozen::default(),
        )?;
        let grads = obj.tape.backward(obj.loss)?;
        let g: Vec<&DenseMatrix> = obj.network.all().iter().map(|v| grads.get(*v)).collect::<Result<_>>()?;
        let mut params = self.state.params.tensors_mut();
        adam_step(&mut params, &g, &mut self.state.network_opt)?;
        if !self.state.params.tensors().iter().all(|t| t.is_finite()) {
            return Err(Error::Numeric("network parameters became non-finite".into()));
        }
        self.record(UpdateGroup::Network, obj.report);
        Ok(())
    }

    /// Runs `epochs` pretraining epochs.
    pub fn pretrain(&mut self, epochs: usize, mut hook: Option<Hook<'_>>) -> Result<()> {
        if self.state.phase != Phase::Pretrain {
            return Err(Error::Contract("pretrain after the prior was initialized".into()));
        }
        for _ in 0..epochs {
            self.state.epoch += 1;
            self.pretrain_epoch().map_err(|e| self.epoch_error(e))?;
            self.maybe_checkpoint(&mut hook)?;
        }
        Ok(())
    }

    /// Fits the mixture prior to the current node means.
    pub fn init_priors(&mut self) -> Result<()> {
        let means = node_means(&self.ctx, &self.state.params)?;
        let em_seed: u64 = self.state.rng.random();
        let fit = em_fit(&means, self.k, em_seed)?;
        self.state.prior_opt = Some(AdamState::new(self.config.lr, &fit.prior.shapes()));
        self.state.prior = Some(fit.prior.clone());
        self.state.em = Some(fit);
        self.state.phase = Phase::Alternating;
        Ok(())
    }

    fn alternating_epoch(&mut self, local_epoch: usize) -> Result<()> {
        let group = update_group(local_epoch, self.config.interval);
        let noise = self.draw_noise();
        let trainable = Trainable {
            network: group == UpdateGroup::Network,
            prior: group == UpdateGroup::Prior,
        };
        let prior = self.state.prior.as_ref().expect("alternating phase has a prior");
        let obj = build_objective(
            &self.ctx,
            &self.state.params,
            Some(prior),
            &noise,
            &self.weights(),
            trainable,
            &Frozen::default(),
        )?;
        let grads = obj.tape.backward(obj.loss)?;
        match group {
            UpdateGroup::Network => {
                let g: Vec<&DenseMatrix> =
                    obj.network.all().iter().map(|v| grads.get(*v)).collect::<Result<_>>()?;
                let mut params = self.state.params.tensors_mut();
                adam_step(&mut params, &g, &mut self.state.network_opt)?;
                if !self.state.params.tensors().iter().all(|t| t.is_finite()) {
                    return Err(Error::Numeric("network parameters became non-finite".into()));
                }
            }
            UpdateGroup::Prior => {
                let pv = obj.prior.expect("prior attached");
                let g = [grads.get(pv.means)?, grads.get(pv.log_vars)?, grads.get(pv.logits)?];
                let prior = self.state.prior.as_mut().expect("prior present");
                let opt = self.state.prior_opt.as_mut().expect("prior optimizer present");
                let mut tensors = prior.tensors_mut();
                adam_step(&mut tensors, &g, opt)?;
                prior.clamp_variances();
                if !prior.tensors().iter().all(|t| t.is_finite()) {
                    return Err(Error::Numeric("prior parameters became non-finite".into()));
                }
            }
        }
        self.record(group, obj.report);
        Ok(())
    }

    /// Runs `epochs` alternating epochs.
    pub fn alternating_train(&mut self, epochs: usize, mut hook: Option<Hook<'_>>) -> Result<()> {
        if self.state.phase != Phase::Alternating {
            return Err(Error::Contract("alternating training needs an initialized prior".into()));
        }
        for local in 1..=epochs {
            self.state.epoch += 1;
            self.alternating_epoch(local).map_err(|e| self.epoch_error(e))?;
            self.maybe_checkpoint(&mut hook)?;
        }
        Ok(())
    }

    /// Hard assignment: argmax of the responsibilities of the node means.
    pub fn assign_clusters(&self) -> Result<ClusteringResult> {
        let prior = self
            .state
            .prior
            .as_ref()
            .ok_or_else(|| Error::Contract("assignment needs an initialized prior".into()))?;
        let embeddings = node_means(&self.ctx, &self.state.params)?;
        let gamma = responsibilities(&embeddings, prior)?;
        Ok(ClusteringResult {
            assignments: gamma.argmax(),
            responsibilities: gamma.into_matrix(),
            embeddings,
        })
    }

    /// The full schedule. Without the mixture prior, the pretraining
    /// objective runs for all epochs and the mixture is fitted only at the end.
    pub fn run(&mut self, mut hook: Option<Hook<'_>>) -> Result<ClusteringResult> {
        if self.config.mixture_prior {
            self.pretrain(self.config.t1, hook.as_deref_mut().map(|h| h as Hook<'_>))?;
            self.init_priors()?;
            self.alternating_train(self.config.t2, hook.as_deref_mut().map(|h| h as Hook<'_>))?;
        } else {
            self.pretrain(
                self.config.t1 + self.config.t2,
                hook.as_deref_mut().map(|h| h as Hook<'_>),
            )?;
            self.init_priors()?;
        }
        if let Some(h) = hook.as_mut() {
            let every = self.config.checkpoint_every;
            if every == 0 || !self.state.epoch.is_multiple_of(every) {
                h(self)?;
            }
        }
        self.assign_clusters()
    }
}

/// Convenience: build a trainer and run the whole schedule.
pub fn train(graph: &AttributedGraph, config: RunConfig) -> Result<(Trainer, ClusteringResult)> {
    let mut trainer = Trainer::new(graph, config)?;
    let result = trainer.run(None)?;
    Ok((trainer, result))
}
