use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::task::{affine, argmax};
use super::{make_planted_task, Adam, AdapterSpec, PlantedTask, RunRecord, TaskKind, TrainConfig};
use crate::error::{Error, Result};
use crate::gradients::{backward, loss_and_grad, Loss, Targets};
use crate::lora::LoraAdapter;
use crate::monarch::{Adapter, AdapterLayer, InitMode, LinearDelta, MonarchAdapter, MonarchConfig};
use crate::numerics::DenseMatrix;

/// Loss is recorded every this many steps.
pub const LOG_EVERY: usize = 50;

/// A minibatch loss this many times the step-0 loss counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Distinct stream for adapter initialization and minibatch sampling.
const INIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const BATCH_STREAM: u64 = 0xd1b5_4a32_d192_ed03;

/// Result of a run together with the trained layer and its task.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub layer: AdapterLayer,
    pub task: PlantedTask,
}

pub fn train(config: &TrainConfig) -> Result<RunRecord> {
    Ok(train_with_model(config)?.record)
}

/// Trains only the adapter; `W` and `b` stay frozen. The frozen part of
/// the forward pass is computed once for the whole dataset.
pub fn train_with_model(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let started = Instant::now();
    let n = config.n;
    let task = make_planted_task(&config.task, n, config.samples, config.seed)?;
    let init_seed = config.seed ^ INIT_STREAM;
    let adapter = match config.adapter {
        AdapterSpec::More { blocks, block_rank } => Adapter::Monarch(MonarchAdapter::init(
            MonarchConfig::new(n, blocks, block_rank)?,
            &InitMode::ZeroOut,
            init_seed,
        )?),
        AdapterSpec::Lora { rank } => Adapter::Lora(LoraAdapter::init(n, rank, init_seed)?),
    };
    let mut layer = AdapterLayer::new(task.base_weight.clone(), task.bias.clone(), adapter)?;
    let loss = match task.kind {
        TaskKind::Regression => Loss::Mse,
        TaskKind::Classification => Loss::SoftmaxXent,
    };
    let frozen_out = affine(&task.features, &task.base_weight, &task.bias)?;

    let sizes = {
        let (a, b) = params_mut(layer.adapter_mut());
        [a.len(), b.len()]
    };
    let mut adam = Adam::new(config.optimizer.clone(), &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ BATCH_STREAM);
    let batch = config.batch.min(config.samples);
    let mut loss_curve = Vec::new();
    let mut initial_loss = None;

    for step in 0..config.steps {
        let rows: Vec<usize> = if batch == config.samples {
            (0..batch).collect()
        } else {
            let mut idx = sample(&mut rng, config.samples, batch).into_vec();
            idx.sort_unstable();
            idx
        };
        let x = gather(&task.features, &rows);
        let base = gather(&frozen_out, &rows);
        let targets = gather_targets(&task.targets, &rows);

        let outputs = base.add(&layer.adapter().apply(&x)?)?;
        let (value, upstream) = loss_and_grad(loss, &outputs, &targets)?;
        let reference = *initial_loss.get_or_insert(value);
        if !value.is_finite() || value > DIVERGENCE_FACTOR * reference.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged { step, loss: value });
        }
        if step % LOG_EVERY == 0 {
            loss_curve.push((step, value));
        }
        let lr = adam.learning_rate(config.steps);
        let diverged = |e: Error| match e {
            Error::NonFinite(_) => Error::Diverged { step, loss: value },
            other => other,
        };
        match layer.adapter_mut() {
            Adapter::Monarch(a) => {
                let g = backward(a, &x, &upstream).map_err(diverged)?;
                let (fin, fout) = a.factors_mut();
                adam.step([fin, fout], [&g.d_factor_in, &g.d_factor_out], lr);
            }
            Adapter::Lora(a) => {
                let g = a.backward(&x, &upstream).map_err(diverged)?;
                let (down, up) = a.factors_mut();
                adam.step([down, up], [g.d_down.data(), g.d_up.data()], lr);
            }
        }
    }

    let outputs = frozen_out.add(&layer.adapter().apply(&task.features)?)?;
    let (final_loss, _) = loss_and_grad(loss, &outputs, &task.targets)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step: config.steps,
            loss: final_loss,
        });
    }
    loss_curve.push((config.steps, final_loss));

    let recovery_error = match (&task.targets, task.kind) {
        (Targets::Labels(labels), TaskKind::Classification) => {
            let wrong = labels
                .iter()
                .enumerate()
                .filter(|(i, &l)| argmax(outputs.row(*i)) != l)
                .count();
            wrong as f64 / labels.len() as f64
        }
        _ => {
            let planted = task.planted_delta.fro_norm().max(1e-12);
            task.target_weight.sub(&layer.merge())?.fro_norm() / planted
        }
    };

    let record = RunRecord {
        task: config.task.name().to_string(),
        adapter: config.adapter.name().to_string(),
        n,
        blocks: config.adapter.shape().0,
        block_rank: config.adapter.shape().1,
        params: layer.adapter().param_count(),
        flops: config.adapter.flops_per_step(n, batch),
        seed: config.seed,
        steps: config.steps,
        final_loss,
        recovery_error,
        wall_ms: started.elapsed().as_millis() as u64,
        loss_curve,
    };
    Ok(TrainOutcome { record, layer, task })
}

fn params_mut(adapter: &mut Adapter) -> (&mut [f64], &mut [f64]) {
    match adapter {
        Adapter::Monarch(a) => a.factors_mut(),
        Adapter::Lora(a) => a.factors_mut(),
    }
}

fn gather(m: &DenseMatrix, rows: &[usize]) -> DenseMatrix {
    let mut data = Vec::with_capacity(rows.len() * m.cols());
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    DenseMatrix::new(rows.len(), m.cols(), data).expect("rows of a valid matrix")
}

fn gather_targets(t: &Targets, rows: &[usize]) -> Targets {
    match t {
        Targets::Dense(y) => Targets::Dense(gather(y, rows)),
        Targets::Labels(l) => Targets::Labels(rows.iter().map(|&r| l[r]).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{OptimizerConfig, TaskSpec};

    fn config(task: TaskSpec, adapter: AdapterSpec, steps: usize) -> TrainConfig {
        TrainConfig {
            format_version: 1,
            task,
            n: 16,
            adapter,
            optimizer: OptimizerConfig::default(),
            steps,
            batch: 32,
            seed: 7,
            samples: 128,
        }
    }

    #[test]
    fn frozen_base_is_untouched() {
        let cfg = config(
            TaskSpec::PlantedMonarch {
                blocks: 4,
                block_rank: 2,
            },
            AdapterSpec::More {
                blocks: 4,
                block_rank: 2,
            },
            60,
        );
        let out = train_with_model(&cfg).unwrap();
        assert_eq!(out.layer.base_weight(), &out.task.base_weight);
        assert_eq!(out.layer.bias(), &out.task.bias);
        assert_eq!(out.record.params, 64);
        assert_eq!(out.record.loss_curve.len(), 3);
    }

    #[test]
    fn zero_delta_stays_near_zero() {
        let cfg = config(
            TaskSpec::PlantedLowrank { rank: 0 },
            AdapterSpec::More {
                blocks: 4,
                block_rank: 2,
            },
            200,
        );
        let out = train_with_model(&cfg).unwrap();
        assert!(out.record.final_loss < 1e-6, "{}", out.record.final_loss);
        assert!(out.layer.adapter().to_dense().fro_norm() < 1e-2);
    }

    #[test]
    fn classification_runs_and_learns() {
        let mut cfg = config(
            TaskSpec::MlpShift {
                blocks: 2,
                block_rank: 2,
            },
            AdapterSpec::Lora { rank: 4 },
            300,
        );
        cfg.samples = 256;
        let rec = train(&cfg).unwrap();
        assert!(rec.recovery_error >= 0.0 && rec.recovery_error <= 1.0);
        assert!(rec.loss_curve.last().unwrap().1 < rec.loss_curve[0].1);
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = config(
            TaskSpec::PlantedMonarch {
                blocks: 4,
                block_rank: 2,
            },
            AdapterSpec::More {
                blocks: 4,
                block_rank: 2,
            },
            500,
        );
        cfg.optimizer.lr = 1e200;
        match train(&cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn identical_configs_give_identical_curves() {
        let cfg = config(
            TaskSpec::PlantedMonarch {
                blocks: 2,
                block_rank: 2,
            },
            AdapterSpec::More {
                blocks: 2,
                block_rank: 2,
            },
            120,
        );
        let (a, b) = (train(&cfg).unwrap(), train(&cfg).unwrap());
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
    }
}
