use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::generate::{split_point, teacher_forced};
use super::losses::{bce_multilabel_loss, ce_loss};
use super::metrics::argmax;
use super::rng::{stream_rng, Stream};
use crate::autodiff::{Tape, Var};
use crate::complex::ComplexVar;
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::model::{Backbone, ModelConfig};
use crate::params::{ParamStore, Session};
use crate::signal::{Dataset, LabelKind, SpectralSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    ClassifyFrames,
    ClassifySequence,
    ConditionalGenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Ce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task: Task,
    pub loss: LossKind,
    /// Share of time steps given to the encoder when generating.
    pub encoder_fraction: f64,
    /// Weight of the frame-reconstruction MSE added to the label loss when
    /// generating.
    pub recon_weight: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec { task: Task::ClassifyFrames, loss: LossKind::Bce, encoder_fraction: 0.6, recon_weight: 0.0 }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.encoder_fraction > 0.0 && self.encoder_fraction < 1.0) {
            return Err(Error::Config(format!("encoder_fraction {} must lie in (0, 1)", self.encoder_fraction)));
        }
        if !(self.recon_weight >= 0.0 && self.recon_weight.is_finite()) {
            return Err(Error::Config(format!("recon_weight {} must be ≥ 0", self.recon_weight)));
        }
        if self.task == Task::ClassifyFrames && self.loss != LossKind::Bce {
            return Err(Error::Config("per-frame classification uses the bce loss".into()));
        }
        if self.task == Task::ClassifySequence && self.loss != LossKind::Ce {
            return Err(Error::Config("sequence classification uses the ce loss".into()));
        }
        Ok(())
    }

    /// The label layout this task and loss expect.
    pub fn label_kind(&self) -> LabelKind {
        match self.loss {
            LossKind::Bce => LabelKind::PerFrame,
            LossKind::Ce => LabelKind::PerSequence,
        }
    }

    pub fn check_dataset(&self, d: &Dataset) -> Result<()> {
        if d.label_kind != self.label_kind() {
            return Err(Error::Config(format!("{:?} loss needs {:?} labels, dataset has {:?}", self.loss, self.label_kind(), d.label_kind)));
        }
        if self.task == Task::ConditionalGenerate {
            split_point(d.t, self.encoder_fraction)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// `[T, w] → [T, L]`.
    PerFrame,
    /// Mean over time, then `[w] → [L]`.
    Pooled,
}

/// Linear prediction layer over real features.
#[derive(Debug, Clone)]
pub struct ClassificationHead {
    pub linear: Linear,
    pub kind: HeadKind,
}

impl ClassificationHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, width: usize, n_labels: usize, kind: HeadKind, rng: &mut R) -> Result<Self> {
        Ok(ClassificationHead { linear: Linear::new(store, "head", width, n_labels, true, rng)?, kind })
    }

    pub fn forward<'t>(&self, sess: &Session<'t>, features: Var<'t>) -> Result<Var<'t>> {
        match self.kind {
            HeadKind::PerFrame => self.linear.forward(sess, features),
            HeadKind::Pooled => {
                let t = features.shape()[0];
                let mean = sess.tape.constant_from(vec![1, t], vec![1.0 / t as f64; t])?.matmul(features)?;
                self.linear.forward(sess, mean)?.reshape(vec![self.linear.d_out])
            }
        }
    }
}

/// Label-side result of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// Sigmoid scores, flattened like the targets.
    Scores { scores: Vec<f64>, targets: Vec<bool> },
    Class { predicted: usize, target: usize },
}

/// Backbone, prediction head and their parameters.
#[derive(Debug, Clone)]
pub struct Network {
    pub model: ModelConfig,
    pub task: TaskSpec,
    pub n_features: usize,
    pub n_labels: usize,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub head: ClassificationHead,
}

impl Network {
    /// Builds every parameter from the init stream of `seed`.
    pub fn new(model: &ModelConfig, task: &TaskSpec, n_features: usize, n_labels: usize, seed: u64) -> Result<Self> {
        model.validate()?;
        task.validate()?;
        let mut rng: ChaCha8Rng = stream_rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let generating = task.task == Task::ConditionalGenerate;
        let backbone = Backbone::new(&mut store, model, n_features, generating, &mut rng)?;
        let width = if generating { 2 * n_features } else { backbone.feature_width() };
        let kind = match task.label_kind() {
            LabelKind::PerFrame => HeadKind::PerFrame,
            LabelKind::PerSequence => HeadKind::Pooled,
        };
        let head = ClassificationHead::new(&mut store, width, n_labels, kind, &mut rng)?;
        Ok(Network { model: model.clone(), task: task.clone(), n_features, n_labels, store, backbone, head })
    }

    pub fn check_dataset(&self, d: &Dataset) -> Result<()> {
        self.task.check_dataset(d)?;
        if d.f != self.n_features || d.n_labels != self.n_labels {
            return Err(Error::Config(format!(
                "network expects F={}, L={}; dataset has F={}, L={}",
                self.n_features, self.n_labels, d.f, d.n_labels
            )));
        }
        Ok(())
    }

    /// Logits for the task's label span and, when generating, the
    /// teacher-forced frames.
    pub fn forward<'t>(&self, sess: &Session<'t>, ex: &SpectralSequence) -> Result<(Var<'t>, Option<ComplexVar<'t>>)> {
        match self.task.task {
            Task::ClassifyFrames | Task::ClassifySequence => {
                let enc = self.backbone.encode(sess, ComplexVar::constant(sess.tape, &ex.frames))?;
                Ok((self.head.forward(sess, enc.features()?)?, None))
            }
            Task::ConditionalGenerate => {
                let generated = teacher_forced(sess, &self.backbone, &ex.frames, self.task.encoder_fraction)?;
                Ok((self.head.forward(sess, generated.concat_parts()?)?, Some(generated)))
            }
        }
    }

    /// Targets aligned with the logits of [`Network::forward`].
    pub fn label_targets<'a>(&self, ex: &'a SpectralSequence) -> Result<&'a [f64]> {
        match (self.task.task, self.task.label_kind()) {
            (Task::ConditionalGenerate, LabelKind::PerFrame) => {
                let t = ex.frames.shape()[0];
                let te = split_point(t, self.task.encoder_fraction)?;
                Ok(&ex.labels[te * self.n_labels..])
            }
            _ => Ok(&ex.labels),
        }
    }

    pub fn loss_from<'t>(&self, sess: &Session<'t>, ex: &SpectralSequence, logits: Var<'t>, generated: Option<ComplexVar<'t>>) -> Result<Var<'t>> {
        let targets = self.label_targets(ex)?;
        let mut loss = match self.task.loss {
            LossKind::Bce => bce_multilabel_loss(logits, targets)?,
            LossKind::Ce => ce_loss(logits, argmax(targets))?,
        };
        if let (Some(g), true) = (generated, self.task.recon_weight > 0.0) {
            let te = split_point(ex.frames.shape()[0], self.task.encoder_fraction)?;
            let target = ex.frames.rows(te, ex.frames.shape()[0] - te)?;
            let (dr, di) = (g.re.sub(sess.tape.constant(target.re()))?, g.im.sub(sess.tape.constant(target.im()))?);
            let mse = dr.mul(dr)?.mean().add(di.mul(di)?.mean())?.scale(0.5);
            loss = loss.add(mse.scale(self.task.recon_weight))?;
        }
        Ok(loss)
    }

    pub fn example_loss<'t>(&self, sess: &Session<'t>, ex: &SpectralSequence) -> Result<Var<'t>> {
        let (logits, generated) = self.forward(sess, ex)?;
        self.loss_from(sess, ex, logits, generated)
    }

    /// Eval-mode loss and prediction for one example.
    pub fn evaluate_example(&self, ex: &SpectralSequence) -> Result<(f64, Prediction)> {
        let tape = Tape::new();
        let sess = Session::eval(&tape, &self.store);
        let (logits, generated) = self.forward(&sess, ex)?;
        let loss = self.loss_from(&sess, ex, logits, generated)?.item();
        Ok((loss, self.prediction(logits, self.label_targets(ex)?)))
    }

    pub fn prediction(&self, logits: Var<'_>, targets: &[f64]) -> Prediction {
        match self.task.loss {
            LossKind::Bce => Prediction::Scores { scores: logits.sigmoid_values(), targets: targets.iter().map(|&y| y == 1.0).collect() },
            LossKind::Ce => Prediction::Class { predicted: argmax(&logits.value()), target: argmax(targets) },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_params;
    use crate::complex::ComplexTensor;
    use crate::model::Variant;
    use crate::tensor::RealTensor;
    use rand::SeedableRng;

    fn tiny() -> ModelConfig {
        ModelConfig { n_encoder_layers: 1, n_decoder_layers: 1, d_model: 8, n_heads: 2, d_ff: 8, positional_encoding: false, ..ModelConfig::default() }
    }

    fn example(t: usize, f: usize, labels: Vec<f64>, seed: u64) -> SpectralSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut part = || RealTensor::from_fn(vec![t, f], |_| rng.random_range(-1.0..1.0));
        SpectralSequence { frames: ComplexTensor::new(part(), part()).unwrap(), labels }
    }

    #[test]
    fn zero_head_weights_give_zero_logits() {
        let task = TaskSpec::default();
        let mut net = Network::new(&tiny(), &task, 3, 2, 1).unwrap();
        net.store.get_mut(net.head.linear.weight).data_mut().fill(0.0);
        let ex = example(4, 3, vec![0.0; 8], 2);
        let tape = Tape::new();
        let sess = Session::eval(&tape, &net.store);
        let (logits, _) = net.forward(&sess, &ex).unwrap();
        assert_eq!(logits.shape(), vec![4, 2]);
        assert!(logits.value().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pooled_head_shape_and_permutation_invariance() {
        let task = TaskSpec { task: Task::ClassifySequence, loss: LossKind::Ce, ..TaskSpec::default() };
        for variant in [Variant::Complex, Variant::Concatenated] {
            let net = Network::new(&ModelConfig { variant, ..tiny() }, &task, 3, 4, 3).unwrap();
            let ex = example(4, 3, vec![0.0, 1.0, 0.0, 0.0], 4);
            let logits = |ex: &SpectralSequence| {
                let tape = Tape::new();
                let sess = Session::eval(&tape, &net.store);
                net.forward(&sess, ex).unwrap().0.value().to_vec()
            };
            let base = logits(&ex);
            assert_eq!(base.len(), 4);
            let rows: Vec<ComplexTensor> = [3, 1, 0, 2].iter().map(|&r| ex.frames.rows(r, 1).unwrap()).collect();
            let shuffled = SpectralSequence { frames: ComplexTensor::concat_rows(&rows.iter().collect::<Vec<_>>()).unwrap(), ..ex.clone() };
            for (a, b) in base.iter().zip(logits(&shuffled)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn task_and_labels_must_agree() {
        assert!(TaskSpec { loss: LossKind::Ce, ..TaskSpec::default() }.validate().is_err());
        assert!(TaskSpec { encoder_fraction: 1.0, ..TaskSpec::default() }.validate().is_err());
        let net = Network::new(&tiny(), &TaskSpec::default(), 3, 2, 0).unwrap();
        let d = Dataset::new(4, 3, 2, LabelKind::PerSequence, vec![]).unwrap();
        assert!(matches!(net.check_dataset(&d), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Network::new(&tiny(), &TaskSpec::default(), 3, 2, 9).unwrap();
        let b = Network::new(&tiny(), &TaskSpec::default(), 3, 2, 9).unwrap();
        let c = Network::new(&tiny(), &TaskSpec::default(), 3, 2, 10).unwrap();
        assert_eq!(a.store, b.store);
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn generation_loss_gradients() {
        let task = TaskSpec { task: Task::ConditionalGenerate, recon_weight: 0.5, ..TaskSpec::default() };
        let mut net = Network::new(&ModelConfig { dropout_relu: 0.0, dropout_residual: 0.0, ..tiny() }, &task, 3, 2, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for id in net.store.ids().collect::<Vec<_>>() {
            net.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        let ex = example(8, 3, (0..16).map(|i| f64::from((i * 7) % 3 == 0)).collect(), 7);
        let mut store = net.store.clone();
        let reports = grad_check_params(&mut store, |sess| net.example_loss(sess, &ex), 1e-6, 1e-4, 4).unwrap();
        for (name, r) in reports {
            assert!(r.passed, "{name}: {r:?}");
        }
    }
}
