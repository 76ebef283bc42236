//! The full model: prompt and scene encoders, query decoder and output heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qtensor::{Tensor, Var};

use crate::config::{LossWeights, ModelConfig};
use crate::decoder::{Decoder, DecoderInput, DecoderOut, MaskPolicy};
use crate::error::{Error, Result};
use crate::features::{Rep, SceneCache, SceneEncoder, SegmentVars};
use crate::fourier::FourierPE;
use crate::heads::{Generator, GroundingHead, GroundingOut, MaskHead};
use crate::hungarian::hungarian;
use crate::losses::{grounding_loss, mask_loss, matching_cost};
use crate::params::{Graph, Init, ParamStore};
use crate::prompt::PromptEncoder;
use crate::scene::Scene;
use crate::tasks::{PromptSpec, TaskSample};
use crate::vocab::Vocab;

const FOURIER_SALT: u64 = 0x0f0e_71e5;

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub seed: u64,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub fourier: crate::params::ParamId,
    pub prompt: PromptEncoder,
    pub scene: SceneEncoder,
    pub decoder: Decoder,
    pub mask_head: MaskHead,
    pub grounding: GroundingHead,
    pub generator: Generator,
}

/// Forward outputs for one (scene, prompt) pair.
pub struct SampleForward {
    pub decoder: DecoderOut,
    /// Final M×Q mask probabilities.
    pub p_mask: Var,
    pub grounding: GroundingOut,
}

/// Data-dependent discrete choices of a forward pass. Replaying them makes
/// the loss a smooth function of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Frozen {
    pub attn_masks: Vec<Tensor>,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub mask: f64,
    pub grounding: f64,
    pub generation: f64,
    pub total: f64,
}

pub struct SampleLoss {
    pub loss: Var,
    pub parts: LossParts,
    pub frozen: Frozen,
}

/// Draws a representation subset: each is dropped with probability `rate`,
/// redrawing while nothing survives.
pub fn sample_reps(rng: &mut impl Rng, rate: f64) -> Vec<Rep> {
    loop {
        let kept: Vec<Rep> = Rep::ALL.into_iter().filter(|_| rng.random::<f64>() >= rate).collect();
        if !kept.is_empty() {
            return kept;
        }
    }
}

/// Grounding labels: 1 for queries matched to one of the targets.
pub fn grounding_labels(q: usize, pairs: &[(usize, usize)], targets: &[usize]) -> Vec<f64> {
    let mut labels = vec![0.0; q];
    for &(qi, k) in pairs {
        if targets.contains(&k) {
            labels[qi] = 1.0;
        }
    }
    labels
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        if cfg.hidden_dim < 4 || cfg.hidden_dim % 4 != 0 {
            return Err(Error::Config(format!("hidden_dim {} must be a positive multiple of 4", cfg.hidden_dim)));
        }
        let vocab = Vocab::default();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let d = cfg.hidden_dim;
        let pe = FourierPE::new(d / 2, cfg.fourier_sigma, seed ^ FOURIER_SALT);
        let fourier = init.tensor("scene.fourier", pe.matrix().clone(), false);
        let prompt = PromptEncoder::new(&mut init, &vocab, d, seed);
        let scene = SceneEncoder::new(&mut init, cfg);
        let decoder = Decoder::new(&mut init, cfg);
        let mask_head = MaskHead::new(&mut init, d);
        let grounding = GroundingHead::new(&mut init, d);
        let generator = Generator::new(&mut init, vocab.len(), d, cfg.generator_blocks, cfg.max_answer_len, cfg.ln_eps);
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            vocab,
            store,
            fourier,
            prompt,
            scene,
            decoder,
            mask_head,
            grounding,
            generator,
        })
    }

    pub fn pe(&self) -> FourierPE {
        FourierPE::from_matrix(self.store.get(self.fourier).clone())
    }

    pub fn embed_table(&self) -> &Tensor {
        self.store.get(self.prompt.table)
    }

    pub fn cache(&self, scene: &Scene) -> Result<SceneCache> {
        SceneCache::build(scene, &self.cfg, self.embed_table(), &self.pe(), self.seed)
    }

    pub fn encode_scene(&self, g: &mut Graph, cache: &SceneCache) -> Result<SegmentVars> {
        self.scene.encode(g, cache)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        feats: &SegmentVars,
        cache: &SceneCache,
        prompt: &PromptSpec,
        reps: &[Rep],
        policy: MaskPolicy,
    ) -> Result<SampleForward> {
        let t = self.prompt.encode(g, &self.vocab, prompt)?;
        let query_pe = g.constant(cache.query_pe.clone())?;
        let inp = DecoderInput {
            feats,
            reps,
            prompt: t,
            query_pe,
            positions: &cache.query_positions,
        };
        let decoder = self.decoder.forward(g, &inp, &self.mask_head, policy)?;
        let p_mask = *decoder.p_masks.last().expect("at least one mask");
        let grounding = self.grounding.forward(g, decoder.queries)?;
        Ok(SampleForward { decoder, p_mask, grounding })
    }

    /// Weighted loss of one task. `frozen` replays earlier masks and matches.
    #[allow(clippy::too_many_arguments)]
    pub fn sample_loss(
        &self,
        g: &mut Graph,
        feats: &SegmentVars,
        cache: &SceneCache,
        task: &TaskSample,
        reps: &[Rep],
        policy: MaskPolicy,
        weights: &LossWeights,
        frozen: Option<&Frozen>,
    ) -> Result<SampleLoss> {
        let policy = match frozen {
            Some(f) => MaskPolicy::Fixed(&f.attn_masks),
            None => policy,
        };
        let out = self.forward(g, feats, cache, &task.prompt, reps, policy)?;
        let q = cache.query_positions.len();
        let mut terms = Vec::new();
        let mut parts = LossParts::default();
        let pairs = match frozen {
            Some(f) => f.pairs.clone(),
            None if task.kind.has_mask_supervision() && cache.gt_masks.cols() > 0 => {
                hungarian(&matching_cost(g.value(out.p_mask), &cache.gt_masks, weights))?
            }
            None => Vec::new(),
        };
        if task.kind.has_mask_supervision() {
            let l = mask_loss(g, out.p_mask, &cache.gt_masks, &pairs, weights)?;
            parts.mask = g.value(l).item()?;
            terms.push(g.tape.scale(l, weights.mask)?);
        }
        if task.kind.has_grounding_supervision() {
            let labels = grounding_labels(q, &pairs, &task.targets);
            let l = grounding_loss(g, out.grounding.probs, &labels, weights.bce_clamp)?;
            parts.grounding = g.value(l).item()?;
            terms.push(g.tape.scale(l, weights.grounding)?);
        }
        if task.kind.has_answer() {
            let l = self.generator.loss(g, out.decoder.queries, &self.vocab, &task.answer)?;
            let l = g.tape.reshape(l, &[1])?;
            parts.generation = g.value(l).item()?;
            terms.push(g.tape.scale(l, weights.generation)?);
        }
        let loss = crate::losses::sum_vars(g, &terms)?;
        parts.total = g.value(loss).item()?;
        Ok(SampleLoss {
            loss,
            parts,
            frozen: Frozen {
                attn_masks: out.decoder.attn_masks,
                pairs,
            },
        })
    }
}
