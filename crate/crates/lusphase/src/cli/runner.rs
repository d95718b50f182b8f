//! Fold-level training and evaluation driving the batch streams.

use std::fmt::Write as _;

use crate::data::{BatchStream, FeaturizedSample, FoldPlan, Split};
use crate::metrics::{confusion, summarize, MetricReport};
use crate::net::{train_step, AdamParams, AdamState, Model};
use crate::{Error, Result};

use super::config::RunConfig;

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("step,epoch,loss,train_acc,val_acc\n");
    for row in rows {
        let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |a| format!("{a:.4}"));
        writeln!(
            out,
            "{},{},{:.6},{},{}",
            row.step,
            row.epoch,
            row.loss,
            fmt_opt(row.train_acc),
            fmt_opt(row.val_acc)
        )
        .expect("writing to string");
    }
    out
}

/// Accuracy of the model over samples served in manifest order.
fn accuracy_over(
    model: &mut Model,
    samples: &[&FeaturizedSample],
    config: &RunConfig,
) -> Result<f64> {
    let (preds, labels) = predictions_over(model, samples, config)?;
    let correct = preds
        .iter()
        .zip(&labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / labels.len().max(1) as f64)
}

/// Predicted and true class ids over samples in manifest order.
pub fn predictions_over(
    model: &mut Model,
    samples: &[&FeaturizedSample],
    config: &RunConfig,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let side = config.featurize.network_side;
    let stream = BatchStream::new(
        samples,
        &config.fusion,
        config.train.batch_size,
        side,
        Split::Test,
        0,
        0,
    )?;
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for item in stream {
        let (input, batch_labels) = item?;
        let (classes, _) = model.predict(&input)?;
        preds.extend(classes);
        labels.extend(batch_labels);
    }
    Ok((preds, labels))
}

/// Trains a fresh model on one fold's training partition.
///
/// Returns the model and its per-step log; the log carries train/test
/// accuracy on each epoch's final row.
pub fn train_fold(
    samples: &[FeaturizedSample],
    plan: &FoldPlan,
    fold: usize,
    config: &RunConfig,
) -> Result<(Model, Vec<LogRow>)> {
    let (train, test) = plan.split(samples, fold)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "fold {fold} has an empty partition ({} train / {} test)",
            train.len(),
            test.len()
        )));
    }
    let mut model = Model::build(config.model_for_fold(fold), config.fusion.clone())?;
    let mut optimizer = AdamState::new(
        AdamParams {
            learning_rate: config.train.effective_learning_rate(),
            ..AdamParams::default()
        },
        &model
            .parameters_mut()
            .iter()
            .map(|p| &**p)
            .collect::<Vec<_>>(),
    );
    let side = config.featurize.network_side;
    let shuffle_seed = config.shuffle_seed(fold);
    let mut log = Vec::new();
    let mut step: u64 = 0;
    for epoch in 0..config.train.epochs {
        let stream = BatchStream::new(
            &train,
            &config.fusion,
            config.train.batch_size,
            side,
            Split::Train,
            shuffle_seed,
            epoch as u64,
        )?;
        let mut epoch_rows = Vec::new();
        for item in stream {
            let (input, labels) = item?;
            let loss = train_step(&mut model, &input, &labels, &mut optimizer)?;
            step += 1;
            epoch_rows.push(LogRow {
                step,
                epoch,
                loss,
                train_acc: None,
                val_acc: None,
            });
        }
        if let Some(last) = epoch_rows.last_mut() {
            last.train_acc = Some(accuracy_over(&mut model, &train, config)?);
            last.val_acc = Some(accuracy_over(&mut model, &test, config)?);
        }
        log.extend(epoch_rows);
    }
    Ok((model, log))
}

/// Evaluates a model on one fold's test partition.
pub fn evaluate_fold(
    model: &mut Model,
    samples: &[FeaturizedSample],
    plan: &FoldPlan,
    fold: usize,
    config: &RunConfig,
) -> Result<MetricReport> {
    let (_, test) = plan.split(samples, fold)?;
    if test.is_empty() {
        return Err(Error::Config(format!("fold {fold} has no test samples")));
    }
    let (preds, labels) = predictions_over(model, &test, config)?;
    summarize(&confusion(&preds, &labels)?)
}
