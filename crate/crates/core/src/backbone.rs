//! Latent-factor backbones trained with BPR under a prefix mask.
//!
//! Two scorers share one training loop. Both score a pair by the inner
//! product of final user and item representations:
//!
//! - **MF**: the final representation is the masked embedding row.
//! - **LightGCN**: the masked table is propagated `L` times over the
//!   symmetric-normalized user–item graph and the layer outputs are averaged.
//!
//! Propagation is linear and `Â` is symmetric, so the gradient of the final
//! representations maps back to the table through the same averaging of
//! powers of `Â`. Masked-out coordinates get no update.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{sample_bpr_batch, BprTriple, InteractionDataset, Split};
use crate::embedding::MaskedEmbeddingTable;
use crate::error::{BetError, Result};
use crate::metrics::eval_ensemble;
use crate::sampler::SizeAction;
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerKind {
    #[default]
    Mf,
    #[serde(rename = "lightgcn")]
    LightGcn { layers: usize },
}

/// Symmetric-normalized bipartite adjacency in CSR form, no self loops.
///
/// Node ids are entity rows: users first, then items.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    weights: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_dataset(ds: &InteractionDataset) -> Self {
        Self::from_edges(ds.num_users, ds.num_items, &ds.train)
    }

    pub fn from_edges(num_users: usize, num_items: usize, edges: &[(u32, u32)]) -> Self {
        let n = num_users + num_items;
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            let item = num_users as u32 + v;
            adj[u as usize].push(item);
            adj[item as usize].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let degree: Vec<f64> = adj.iter().map(|l| l.len() as f64).collect();

        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for (a, list) in adj.iter().enumerate() {
            for &b in list {
                neighbors.push(b);
                weights.push(1.0 / (degree[a] * degree[b as usize]).sqrt());
            }
            offsets.push(neighbors.len());
        }
        Self {
            offsets,
            neighbors,
            weights,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `y = Â x` for a row-major `num_nodes × dim` matrix.
    pub fn propagate(&self, x: &[f64], dim: usize) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (a, out) in y.chunks_exact_mut(dim).enumerate() {
            for e in self.offsets[a]..self.offsets[a + 1] {
                let b = self.neighbors[e] as usize;
                let w = self.weights[e];
                for (o, &xb) in out.iter_mut().zip(&x[b * dim..(b + 1) * dim]) {
                    *o += w * xb;
                }
            }
        }
        y
    }

    /// `(1 / (L+1)) Σ_{k=0..L} Â^k x`.
    pub fn layer_mean(&self, x: &[f64], dim: usize, layers: usize) -> Vec<f64> {
        let mut acc = x.to_vec();
        let mut cur = x.to_vec();
        for _ in 0..layers {
            cur = self.propagate(&cur, dim);
            for (a, c) in acc.iter_mut().zip(&cur) {
                *a += c;
            }
        }
        let scale = 1.0 / (layers + 1) as f64;
        acc.iter_mut().for_each(|a| *a *= scale);
        acc
    }

    /// Dense `Â`, for small graphs and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.num_nodes();
        let mut m = vec![vec![0.0; n]; n];
        for (a, row) in m.iter_mut().enumerate() {
            for e in self.offsets[a]..self.offsets[a + 1] {
                row[self.neighbors[e] as usize] = self.weights[e];
            }
        }
        m
    }
}

/// Optimizer and schedule settings shared by pretraining, finetuning and
/// retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub decay_every: usize,
    pub decay_ratio: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub finetune_epochs: usize,
    /// Early-stopping patience, counted in evaluations.
    pub patience: usize,
    /// Epochs between validation evaluations during `train`.
    pub eval_every: usize,
    pub init_scale: f64,
    pub metric_ks: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.03,
            decay_every: 200,
            decay_ratio: 0.98,
            l2: 1e-4,
            batch_size: 2048,
            max_epochs: 200,
            finetune_epochs: 10,
            patience: 10,
            eval_every: 1,
            init_scale: 0.1,
            metric_ks: vec![5, 10, 20],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_f = [self.initial_lr, self.decay_ratio, self.init_scale];
        if positive_f.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(BetError::Config(format!(
                "learning rate, decay ratio and init scale must be positive, got {positive_f:?}"
            )));
        }
        if self.decay_ratio > 1.0 {
            return Err(BetError::Config(format!(
                "decay_ratio must lie in (0, 1], got {}",
                self.decay_ratio
            )));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(BetError::Config(format!("l2 must be >= 0, got {}", self.l2)));
        }
        let counts = [
            self.decay_every,
            self.batch_size,
            self.max_epochs,
            self.finetune_epochs,
            self.patience,
            self.eval_every,
        ];
        if counts.contains(&0) {
            return Err(BetError::Config(format!("all step counts must be >= 1, got {counts:?}")));
        }
        if self.metric_ks.is_empty() || self.metric_ks.contains(&0) {
            return Err(BetError::Config(format!(
                "metric_ks must be nonempty and positive, got {:?}",
                self.metric_ks
            )));
        }
        Ok(())
    }

    /// Step-decayed learning rate after `step` updates.
    pub fn lr_at(&self, step: usize) -> f64 {
        self.initial_lr * self.decay_ratio.powi((step / self.decay_every) as i32)
    }
}

/// One line of a training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    /// Mean per-triple loss over the epoch, regularization included.
    pub loss: f64,
    pub val_ensemble: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    pub steps: usize,
    pub best_epoch: Option<usize>,
    pub best_val_ensemble: Option<f64>,
    /// Batch losses of every step, in order.
    #[serde(skip)]
    pub step_losses: Vec<f64>,
}

impl TrainReport {
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Overflow-safe `-ln σ(x)`.
pub(crate) fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Overflow-safe `σ(x)`.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The recommender `G_Θ`: a masked table plus a scorer.
#[derive(Debug, Clone)]
pub struct Backbone {
    table: MaskedEmbeddingTable,
    kind: ScorerKind,
    num_users: usize,
    num_items: usize,
    graph: Option<Arc<NormalizedAdjacency>>,
    /// Final representations; kept fresh by every mutator (LightGCN only).
    propagated: Option<Vec<f64>>,
}

impl Backbone {
    /// A freshly initialized backbone for `ds`.
    pub fn new(
        ds: &InteractionDataset,
        kind: ScorerKind,
        d_max: usize,
        init_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let table = MaskedEmbeddingTable::init(ds.num_entities(), d_max, init_scale, seed)?;
        Self::from_table(ds, kind, table)
    }

    /// Wraps an existing table (e.g. one imported from a `BETS` file).
    pub fn from_table(
        ds: &InteractionDataset,
        kind: ScorerKind,
        table: MaskedEmbeddingTable,
    ) -> Result<Self> {
        if table.num_rows() != ds.num_entities() {
            return Err(BetError::InvalidArgument(format!(
                "table has {} rows, dataset has {} entities",
                table.num_rows(),
                ds.num_entities()
            )));
        }
        let graph = match kind {
            ScorerKind::Mf => None,
            ScorerKind::LightGcn { .. } => Some(Arc::new(NormalizedAdjacency::from_dataset(ds))),
        };
        let mut model = Self {
            table,
            kind,
            num_users: ds.num_users,
            num_items: ds.num_items,
            graph,
            propagated: None,
        };
        model.refresh();
        Ok(model)
    }

    pub fn kind(&self) -> ScorerKind {
        self.kind
    }

    pub fn table(&self) -> &MaskedEmbeddingTable {
        &self.table
    }

    pub fn into_table(self) -> MaskedEmbeddingTable {
        self.table
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn d_max(&self) -> usize {
        self.table.d_max()
    }

    pub fn apply_action(&mut self, action: &SizeAction) -> Result<()> {
        self.table.apply_action(action)?;
        self.refresh();
        Ok(())
    }

    pub fn apply_sizes(&mut self, sizes: &[u32]) -> Result<()> {
        self.table.apply_sizes(sizes)?;
        self.refresh();
        Ok(())
    }

    fn refresh(&mut self) {
        self.propagated = match (self.kind, &self.graph) {
            (ScorerKind::LightGcn { layers }, Some(g)) => {
                Some(g.layer_mean(&self.table.masked_dense(), self.table.d_max(), layers))
            }
            _ => None,
        };
    }

    /// Final user/item representations, row-major `(|U|+|V|) × d_max`.
    pub fn final_embeddings(&self) -> Vec<f64> {
        match &self.propagated {
            Some(p) => p.clone(),
            None => self.table.masked_dense(),
        }
    }

    /// Runs `f` with a borrowed view of the final representations.
    pub(crate) fn with_final_embeddings<T>(&self, f: impl FnOnce(&[f64]) -> T) -> T {
        match &self.propagated {
            Some(p) => f(p),
            None => f(&self.table.masked_dense()),
        }
    }

    /// Predicted preference `ŷ_uv`.
    pub fn score(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.num_users {
            return Err(BetError::OutOfBounds { index: user, len: self.num_users });
        }
        if item >= self.num_items {
            return Err(BetError::OutOfBounds { index: item, len: self.num_items });
        }
        let d = self.table.d_max();
        let v = self.num_users + item;
        Ok(match &self.propagated {
            Some(p) => dot(&p[user * d..(user + 1) * d], &p[v * d..(v + 1) * d]),
            None => {
                let (a, b) = (self.table.active_row(user), self.table.active_row(v));
                let k = a.len().min(b.len());
                dot(&a[..k], &b[..k])
            }
        })
    }

    /// BPR loss of a batch: `Σ −ln σ(ŷ_uv − ŷ_uv') + η‖Θ_active‖²`, where the
    /// penalty covers the retained coordinates of rows touched by the batch.
    pub fn bpr_loss(&self, triples: &[BprTriple], l2: f64) -> Result<f64> {
        if triples.is_empty() {
            return Err(BetError::InvalidArgument("empty batch".to_owned()));
        }
        Ok(self.loss_and_gradient(triples, l2, false)?.0)
    }

    /// Loss and the gradient with respect to every stored coordinate of the
    /// table (zero on masked-out coordinates).
    pub fn bpr_gradient(&self, triples: &[BprTriple], l2: f64) -> Result<(f64, Vec<f64>)> {
        if triples.is_empty() {
            return Err(BetError::InvalidArgument("empty batch".to_owned()));
        }
        let (loss, grad) = self.loss_and_gradient(triples, l2, true)?;
        Ok((loss, grad.expect("gradient requested")))
    }

    fn touched_rows(&self, triples: &[BprTriple]) -> Vec<usize> {
        let mut rows: Vec<usize> = triples
            .iter()
            .flat_map(|t| {
                [
                    t.user as usize,
                    self.num_users + t.pos as usize,
                    self.num_users + t.neg as usize,
                ]
            })
            .collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }

    fn check_triples(&self, triples: &[BprTriple]) -> Result<()> {
        for t in triples {
            if t.user as usize >= self.num_users {
                return Err(BetError::OutOfBounds { index: t.user as usize, len: self.num_users });
            }
            for item in [t.pos, t.neg] {
                if item as usize >= self.num_items {
                    return Err(BetError::OutOfBounds { index: item as usize, len: self.num_items });
                }
            }
        }
        Ok(())
    }

    fn loss_and_gradient(
        &self,
        triples: &[BprTriple],
        l2: f64,
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        self.check_triples(triples)?;
        let d = self.table.d_max();
        let nu = self.num_users;
        let masked;
        let finals: &[f64] = match &self.propagated {
            Some(p) => p,
            None => {
                masked = self.table.masked_dense();
                &masked
            }
        };
        let row = |n: usize| &finals[n * d..(n + 1) * d];

        let mut loss = 0.0;
        let mut d_final = if want_grad { vec![0.0; finals.len()] } else { Vec::new() };
        for t in triples {
            let (u, v, vn) = (t.user as usize, nu + t.pos as usize, nu + t.neg as usize);
            let (eu, ev, evn) = (row(u), row(v), row(vn));
            let x: f64 = eu.iter().zip(ev.iter().zip(evn)).map(|(a, (b, c))| a * (b - c)).sum();
            loss += neg_log_sigmoid(x);
            if want_grad {
                // d/dx of -ln σ(x) is -σ(-x).
                let g = -sigmoid(-x);
                for i in 0..d {
                    d_final[u * d + i] += g * (ev[i] - evn[i]);
                    d_final[v * d + i] += g * eu[i];
                    d_final[vn * d + i] -= g * eu[i];
                }
            }
        }

        let touched = self.touched_rows(triples);
        for &n in &touched {
            loss += l2 * self.table.active_row(n).iter().map(|x| x * x).sum::<f64>();
        }
        if !want_grad {
            return Ok((loss, None));
        }

        let mut grad = match (self.kind, &self.graph) {
            (ScorerKind::LightGcn { layers }, Some(g)) => g.layer_mean(&d_final, d, layers),
            _ => d_final,
        };
        for &n in &touched {
            for (gi, &x) in grad[n * d..].iter_mut().zip(self.table.active_row(n)) {
                *gi += 2.0 * l2 * x;
            }
        }
        for n in 0..self.table.num_rows() {
            grad[n * d + self.table.row_size(n)..(n + 1) * d].fill(0.0);
        }
        Ok((loss, Some(grad)))
    }

    /// One gradient-descent step on a batch; returns the batch loss.
    fn step(&mut self, triples: &[BprTriple], l2: f64, lr: f64) -> Result<f64> {
        let d = self.table.d_max();
        let (loss, grad) = self.bpr_gradient(triples, l2)?;
        let rows: Vec<usize> = match self.kind {
            // MF gradients are confined to the batch's rows.
            ScorerKind::Mf => self.touched_rows(triples),
            ScorerKind::LightGcn { .. } => (0..self.table.num_rows()).collect(),
        };
        let sizes: Vec<usize> = rows.iter().map(|&n| self.table.row_size(n)).collect();
        let values = self.table.values_mut();
        for (&n, &size) in rows.iter().zip(&sizes) {
            let start = n * d;
            for (x, g) in values[start..start + size].iter_mut().zip(&grad[start..start + size]) {
                *x -= lr * g;
            }
        }
        self.refresh();
        Ok(loss)
    }

    fn run_epoch(
        &mut self,
        ds: &InteractionDataset,
        cfg: &TrainConfig,
        rng: &mut Rng,
        report: &mut TrainReport,
        epoch: usize,
    ) -> Result<(f64, f64)> {
        let batches = ds.train.len().div_ceil(cfg.batch_size).max(1);
        let mut total = 0.0;
        let mut count = 0usize;
        let mut lr = cfg.lr_at(report.steps);
        for _ in 0..batches {
            let batch = sample_bpr_batch(ds, cfg.batch_size, rng)?;
            lr = cfg.lr_at(report.steps);
            let loss = self.step(&batch, cfg.l2, lr)?;
            if !loss.is_finite() {
                return Err(BetError::Numeric(format!(
                    "non-finite BPR loss at epoch {epoch}, step {}, lr {lr}",
                    report.steps
                )));
            }
            report.steps += 1;
            report.step_losses.push(loss);
            total += loss;
            count += batch.len();
        }
        Ok((total / count as f64, lr))
    }

    /// Trains until `max_epochs` or until the validation ensemble fails to
    /// improve for `patience` evaluations. The best evaluated state is kept.
    pub fn train(&mut self, ds: &InteractionDataset, cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainReport> {
        cfg.validate()?;
        let mut report = TrainReport::default();
        let mut best: Option<(f64, usize, MaskedEmbeddingTable)> = None;
        let mut stale = 0usize;
        for epoch in 1..=cfg.max_epochs {
            let (loss, lr) = self.run_epoch(ds, cfg, rng, &mut report, epoch)?;
            let mut record = TrainRecord { epoch, loss, val_ensemble: None, lr };
            if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
                let val = eval_ensemble(self, ds, Split::Val, &cfg.metric_ks)?.ensemble;
                record.val_ensemble = Some(val);
                match &best {
                    Some((b, _, _)) if val <= *b => stale += 1,
                    _ => {
                        best = Some((val, epoch, self.table.clone()));
                        stale = 0;
                    }
                }
            }
            log::debug!("epoch {epoch}: loss {loss:.5} val {:?}", record.val_ensemble);
            report.records.push(record);
            if stale >= cfg.patience {
                break;
            }
        }
        if let Some((val, epoch, table)) = best {
            self.table = table;
            self.refresh();
            report.best_epoch = Some(epoch);
            report.best_val_ensemble = Some(val);
        }
        Ok(report)
    }

    /// Applies `action` and trains for `epochs` epochs without evaluation.
    pub fn finetune(
        &mut self,
        ds: &InteractionDataset,
        action: &SizeAction,
        epochs: usize,
        cfg: &TrainConfig,
        rng: &mut Rng,
    ) -> Result<TrainReport> {
        cfg.validate()?;
        self.apply_action(action)?;
        let mut report = TrainReport::default();
        for epoch in 1..=epochs {
            let (loss, lr) = self.run_epoch(ds, cfg, rng, &mut report, epoch)?;
            report.records.push(TrainRecord { epoch, loss, val_ensemble: None, lr });
        }
        Ok(report)
    }
}
