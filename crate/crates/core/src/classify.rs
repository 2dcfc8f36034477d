//! Binary combustion-efficiency classifiers on the two principal components.
//!
//! Four small models are trained from scratch so they can be compared on
//! accuracy and parameter count: logistic regression, a linear SVM, k-nearest
//! neighbours and a one-hidden-layer MLP.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("training data needs both labels and at least 2 samples")]
    SingleClass,
    #[error("data set is empty")]
    Empty,
    #[error("k = {k} invalid for {n} samples (must be odd and <= n)")]
    InvalidK { k: usize, n: usize },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    High,
    Low,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::High => "high",
            Label::Low => "low",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::High => Label::Low,
            Label::Low => Label::High,
        }
    }

    fn target(self) -> f64 {
        match self {
            Label::High => 1.0,
            Label::Low => 0.0,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Label::High => 1.0,
            Label::Low => -1.0,
        }
    }

    fn from_score(score: f64) -> Self {
        if score > 0.0 {
            Label::High
        } else {
            Label::Low
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(Label::High),
            "low" => Ok(Label::Low),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Llm,
    Rule,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub pcs: [f64; 2],
    pub label: Label,
    pub source: LabelSource,
}

/// Points in PC space with their labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<Label>,
}

impl Dataset {
    pub fn new(points: Vec<[f64; 2]>, labels: Vec<Label>) -> Self {
        assert_eq!(points.len(), labels.len(), "points and labels differ in length");
        Self { points, labels }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    fn require_both_classes(&self) -> Result<(), ClassifyError> {
        if self.len() < 2 || self.count(Label::High) == 0 || self.count(Label::Low) == 0 {
            return Err(ClassifyError::SingleClass);
        }
        Ok(())
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Seeded stratified split; `test_fraction` of each class (rounded) goes
    /// to the second set.
    pub fn stratified_split(&self, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let (train, test) = stratified_split_indices(&self.labels, test_fraction, seed);
        (self.subset(&train), self.subset(&test))
    }
}

/// Index form of [`Dataset::stratified_split`]: (train, test), each ascending.
/// Every class keeps at least one training sample.
pub fn stratified_split_indices(
    labels: &[Label],
    test_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for label in [Label::High, Label::Low] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        // Fisher-Yates with the seeded stream
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_test = ((idx.len() as f64) * test_fraction).round() as usize;
        let n_test = n_test.min(idx.len().saturating_sub(1));
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

impl From<&[LabeledSample]> for Dataset {
    fn from(s: &[LabeledSample]) -> Self {
        Dataset {
            points: s.iter().map(|x| x.pcs).collect(),
            labels: s.iter().map(|x| x.label).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierKind {
    Logistic,
    LinearSvm,
    Knn,
    Mlp,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::Logistic,
        ClassifierKind::LinearSvm,
        ClassifierKind::Knn,
        ClassifierKind::Mlp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ClassifierKind::Logistic => "logistic",
            ClassifierKind::LinearSvm => "linear-svm",
            ClassifierKind::Knn => "knn",
            ClassifierKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: [f64; 2],
    pub bias: f64,
}

impl LinearModel {
    pub fn score(&self, x: &[f64; 2]) -> f64 {
        self.weights[0] * x[0] + self.weights[1] * x[1] + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub stored: Dataset,
}

/// 2 → hidden (tanh) → 1 (sigmoid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// hidden × 2
    pub w1: Vec<[f64; 2]>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpModel {
    pub fn hidden_width(&self) -> usize {
        self.b1.len()
    }

    fn hidden(&self, x: &[f64; 2]) -> Vec<f64> {
        self.w1
            .iter()
            .zip(&self.b1)
            .map(|(w, b)| (w[0] * x[0] + w[1] * x[1] + b).tanh())
            .collect()
    }

    /// Output logit.
    pub fn logit(&self, x: &[f64; 2]) -> f64 {
        self.hidden(x).iter().zip(&self.w2).map(|(h, w)| h * w).sum::<f64>() + self.b2
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() * 2 + self.b1.len() + self.w2.len() + 1
    }

    /// Parameters flattened as w1 (row-major), b1, w2, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.w1.iter().flat_map(|w| w.iter().copied()).collect();
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn from_flat(hidden: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), 4 * hidden + 1);
        let w1 = (0..hidden).map(|i| [v[2 * i], v[2 * i + 1]]).collect();
        let b1 = v[2 * hidden..3 * hidden].to_vec();
        let w2 = v[3 * hidden..4 * hidden].to_vec();
        Self {
            w1,
            b1,
            w2,
            b2: v[4 * hidden],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierModel {
    Logistic(LinearModel),
    LinearSvm(LinearModel),
    Knn(KnnModel),
    Mlp(MlpModel),
}

impl ClassifierModel {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierModel::Logistic(_) => ClassifierKind::Logistic,
            ClassifierModel::LinearSvm(_) => ClassifierKind::LinearSvm,
            ClassifierModel::Knn(_) => ClassifierKind::Knn,
            ClassifierModel::Mlp(_) => ClassifierKind::Mlp,
        }
    }

    /// Stored learnable values; KNN counts each stored sample as 2 coordinates
    /// plus a label.
    pub fn parameter_count(&self) -> usize {
        match self {
            ClassifierModel::Logistic(_) | ClassifierModel::LinearSvm(_) => 3,
            ClassifierModel::Knn(m) => m.stored.len() * 3,
            ClassifierModel::Mlp(m) => m.parameter_count(),
        }
    }

    pub fn predict(&self, x: &[f64; 2]) -> Label {
        match self {
            ClassifierModel::Logistic(m) | ClassifierModel::LinearSvm(m) => {
                Label::from_score(m.score(x))
            }
            ClassifierModel::Knn(m) => knn_vote(&m.stored, m.k, x),
            ClassifierModel::Mlp(m) => Label::from_score(m.logit(x)),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Numerically stable −[y log σ(z) + (1−y) log(1−σ(z))].
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn check_lr(learning_rate: f64) -> Result<(), ClassifyError> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(ClassifyError::InvalidHyperparameter(format!(
            "learning_rate {learning_rate}"
        )));
    }
    Ok(())
}

/// Mean cross-entropy of a linear logit and its gradient (w₀, w₁, b).
pub fn logistic_loss_and_gradient(m: &LinearModel, data: &Dataset) -> (f64, [f64; 3]) {
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut g = [0.0; 3];
    for (x, l) in data.points.iter().zip(&data.labels) {
        let z = m.score(x);
        let y = l.target();
        loss += bce_with_logit(z, y);
        let d = sigmoid(z) - y;
        g[0] += d * x[0];
        g[1] += d * x[1];
        g[2] += d;
    }
    (loss / n, g.map(|v| v / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub svm_regularization: f64,
    pub knn_k: usize,
    pub mlp_hidden_width: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 0.1,
            svm_regularization: 1e-2,
            knn_k: 1,
            mlp_hidden_width: 8,
            seed: 42,
        }
    }
}

/// Full-batch gradient descent on mean cross-entropy from zero weights.
/// Returns the model and the loss recorded before each epoch's step.
pub fn train_logistic_with_history(
    data: &Dataset,
    epochs: usize,
    learning_rate: f64,
) -> Result<(ClassifierModel, Vec<f64>), ClassifyError> {
    data.require_both_classes()?;
    check_lr(learning_rate)?;
    let mut m = LinearModel {
        weights: [0.0; 2],
        bias: 0.0,
    };
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (loss, g) = logistic_loss_and_gradient(&m, data);
        if !loss.is_finite() {
            return Err(ClassifyError::Divergence { epoch, loss });
        }
        history.push(loss);
        m.weights[0] -= learning_rate * g[0];
        m.weights[1] -= learning_rate * g[1];
        m.bias -= learning_rate * g[2];
    }
    Ok((ClassifierModel::Logistic(m), history))
}

pub fn train_logistic(
    data: &Dataset,
    epochs: usize,
    learning_rate: f64,
) -> Result<ClassifierModel, ClassifyError> {
    train_logistic_with_history(data, epochs, learning_rate).map(|(m, _)| m)
}

/// Subgradient descent on the hinge loss with labels ±1. The L2 penalty
/// λ/2‖w‖² is applied as its exact proximal step w ← w / (1 + ηλ), which
/// stays stable for any λ; the bias is not penalized.
pub fn train_svm(
    data: &Dataset,
    epochs: usize,
    learning_rate: f64,
    regularization: f64,
) -> Result<ClassifierModel, ClassifyError> {
    data.require_both_classes()?;
    check_lr(learning_rate)?;
    if !(regularization >= 0.0) {
        return Err(ClassifyError::InvalidHyperparameter(format!(
            "regularization {regularization}"
        )));
    }
    let n = data.len() as f64;
    let mut m = LinearModel {
        weights: [0.0; 2],
        bias: 0.0,
    };
    for epoch in 0..epochs {
        let mut g = [0.0; 3];
        let mut loss = 0.0;
        for (x, l) in data.points.iter().zip(&data.labels) {
            let s = l.sign();
            let margin = s * m.score(x);
            if margin < 1.0 {
                loss += 1.0 - margin;
                g[0] -= s * x[0];
                g[1] -= s * x[1];
                g[2] -= s;
            }
        }
        if !loss.is_finite() {
            return Err(ClassifyError::Divergence { epoch, loss });
        }
        let shrink = 1.0 + learning_rate * regularization;
        m.weights[0] = (m.weights[0] - learning_rate * g[0] / n) / shrink;
        m.weights[1] = (m.weights[1] - learning_rate * g[1] / n) / shrink;
        m.bias -= learning_rate * g[2] / n;
    }
    Ok(ClassifierModel::LinearSvm(m))
}

fn knn_vote(stored: &Dataset, k: usize, x: &[f64; 2]) -> Label {
    let mut order: Vec<(f64, usize)> = stored
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2), i))
        .collect();
    // (distance, index) ordering breaks distance ties by lower index
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let high = order[..k]
        .iter()
        .filter(|(_, i)| stored.labels[*i] == Label::High)
        .count();
    if 2 * high > k {
        Label::High
    } else {
        Label::Low
    }
}

pub fn train_knn(data: &Dataset, k: usize) -> Result<ClassifierModel, ClassifyError> {
    if data.is_empty() {
        return Err(ClassifyError::Empty);
    }
    if k.is_multiple_of(2) || k > data.len() {
        return Err(ClassifyError::InvalidK { k, n: data.len() });
    }
    Ok(ClassifierModel::Knn(KnnModel {
        k,
        stored: data.clone(),
    }))
}

pub fn knn_predict(stored: &Dataset, k: usize, x: &[f64; 2]) -> Result<Label, ClassifyError> {
    if stored.is_empty() {
        return Err(ClassifyError::Empty);
    }
    if k.is_multiple_of(2) || k > stored.len() {
        return Err(ClassifyError::InvalidK { k, n: stored.len() });
    }
    Ok(knn_vote(stored, k, x))
}

/// Seeded uniform(−0.5, 0.5) initialization in the order w1, b1, w2, b2.
pub fn mlp_init(hidden_width: usize, seed: u64) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f64> = (0..4 * hidden_width + 1)
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    MlpModel::from_flat(hidden_width, &flat)
}

/// Mean cross-entropy of the MLP and its backpropagated gradient, flattened
/// like [`MlpModel::to_flat`].
pub fn mlp_loss_and_gradient(m: &MlpModel, data: &Dataset) -> (f64, Vec<f64>) {
    let hw = m.hidden_width();
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut gw1 = vec![[0.0f64; 2]; hw];
    let mut gb1 = vec![0.0f64; hw];
    let mut gw2 = vec![0.0f64; hw];
    let mut gb2 = 0.0;
    for (x, l) in data.points.iter().zip(&data.labels) {
        let y = l.target();
        let h = m.hidden(x);
        let z = h.iter().zip(&m.w2).map(|(a, w)| a * w).sum::<f64>() + m.b2;
        loss += bce_with_logit(z, y);
        let dz = sigmoid(z) - y;
        gb2 += dz;
        for j in 0..hw {
            gw2[j] += dz * h[j];
            let dpre = dz * m.w2[j] * (1.0 - h[j] * h[j]);
            gb1[j] += dpre;
            gw1[j][0] += dpre * x[0];
            gw1[j][1] += dpre * x[1];
        }
    }
    let grad = MlpModel {
        w1: gw1,
        b1: gb1,
        w2: gw2,
        b2: gb2,
    }
    .to_flat()
    .into_iter()
    .map(|g| g / n)
    .collect();
    (loss / n, grad)
}

pub fn train_mlp_with_history(
    data: &Dataset,
    hidden_width: usize,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<(ClassifierModel, Vec<f64>), ClassifyError> {
    data.require_both_classes()?;
    check_lr(learning_rate)?;
    if hidden_width < 2 {
        return Err(ClassifyError::InvalidHyperparameter(format!(
            "hidden_width {hidden_width} < 2"
        )));
    }
    let mut m = mlp_init(hidden_width, seed);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (loss, g) = mlp_loss_and_gradient(&m, data);
        if !loss.is_finite() {
            return Err(ClassifyError::Divergence { epoch, loss });
        }
        history.push(loss);
        let flat: Vec<f64> = m
            .to_flat()
            .iter()
            .zip(&g)
            .map(|(p, g)| p - learning_rate * g)
            .collect();
        m = MlpModel::from_flat(hidden_width, &flat);
    }
    Ok((ClassifierModel::Mlp(m), history))
}

pub fn train_mlp(
    data: &Dataset,
    hidden_width: usize,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<ClassifierModel, ClassifyError> {
    train_mlp_with_history(data, hidden_width, epochs, learning_rate, seed).map(|(m, _)| m)
}

pub fn train(kind: ClassifierKind, data: &Dataset, cfg: &TrainConfig) -> Result<ClassifierModel, ClassifyError> {
    match kind {
        ClassifierKind::Logistic => train_logistic(data, cfg.epochs, cfg.learning_rate),
        ClassifierKind::LinearSvm => {
            train_svm(data, cfg.epochs, cfg.learning_rate, cfg.svm_regularization)
        }
        ClassifierKind::Knn => {
            data.require_both_classes()?;
            train_knn(data, cfg.knn_k)
        }
        ClassifierKind::Mlp => train_mlp(
            data,
            cfg.mlp_hidden_width,
            cfg.epochs,
            cfg.learning_rate,
            cfg.seed,
        ),
    }
}

/// Accuracy and confusion counts; `confusion[true][predicted]` with index 0 = High.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: [[usize; 2]; 2],
}

pub fn evaluate(model: &ClassifierModel, data: &Dataset) -> Result<Evaluation, ClassifyError> {
    if data.is_empty() {
        return Err(ClassifyError::Empty);
    }
    let idx = |l: Label| usize::from(l == Label::Low);
    let mut confusion = [[0usize; 2]; 2];
    for (x, l) in data.points.iter().zip(&data.labels) {
        confusion[idx(*l)][idx(model.predict(x))] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub kind: ClassifierKind,
    pub parameter_count: usize,
    pub train: Evaluation,
    pub test: Evaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub models: Vec<ClassifierModel>,
    /// Index into `rows`/`models` of the selected classifier.
    pub selected: usize,
}

/// Trains all four classifiers on `train`, scores them on `test`, and selects
/// the best held-out accuracy, then fewest parameters, then declaration order.
pub fn compare_classifiers(
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<Comparison, ClassifyError> {
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for kind in ClassifierKind::ALL {
        let model = train(kind, train_set, cfg)?;
        rows.push(ComparisonRow {
            kind,
            parameter_count: model.parameter_count(),
            train: evaluate(&model, train_set)?,
            test: evaluate(&model, test_set)?,
        });
        models.push(model);
    }
    let selected = (0..rows.len())
        .min_by(|&a, &b| {
            rows[b]
                .test
                .accuracy
                .total_cmp(&rows[a].test.accuracy)
                .then(rows[a].parameter_count.cmp(&rows[b].parameter_count))
                .then(a.cmp(&b))
        })
        .expect("four candidates");
    Ok(Comparison {
        rows,
        models,
        selected,
    })
}

/// Aligned plain-text table of a comparison.
pub fn format_comparison(c: &Comparison) -> String {
    let mut s = format!(
        "{:<12} {:>7} {:>10} {:>10}  {}\n",
        "model", "params", "train_acc", "test_acc", "confusion(test) hh hl lh ll"
    );
    for (i, r) in c.rows.iter().enumerate() {
        let m = r.test.confusion;
        s.push_str(&format!(
            "{:<12} {:>7} {:>10.4} {:>10.4}  {} {} {} {}{}\n",
            r.kind.name(),
            r.parameter_count,
            r.train.accuracy,
            r.test.accuracy,
            m[0][0],
            m[0][1],
            m[1][0],
            m[1][1],
            if i == c.selected { "  <- selected" } else { "" }
        ));
    }
    s
}
