//! `spikedet losses-check`: numeric regression surface for the loss
//! equations. A fixture file holds inputs and independently computed expected
//! values; every case prints one pass/fail row.

use clap::Args;
use serde::Deserialize;
use spikedet_core::losses::{
    bce_logits, box_loss, cls_distill, dfl_distill, dfl_loss, eta_schedule, feat_distill, kl_div,
    softmax_t, theta_schedule, total_loss, BoxSample, DflSample, DistillConfig, FeatureAlignment,
    LossComponents,
};
use spikedet_core::tensor::Tensor;
use std::path::PathBuf;

use crate::{CliError, CliResult};

#[derive(Args)]
pub struct LossesCheckArgs {
    /// Fixture JSON with named cases and expected values.
    pub fixture: PathBuf,
}

#[derive(Deserialize)]
struct Fixture {
    cases: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    name: String,
    #[serde(default = "default_tolerance")]
    tolerance: f64,
    #[serde(flatten)]
    op: Op,
}

fn default_tolerance() -> f64 {
    1e-9
}

#[derive(Deserialize)]
struct JsonTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl JsonTensor {
    fn tensor(&self) -> Result<Tensor, spikedet_core::Error> {
        Tensor::from_f32(&self.shape, self.data.clone())
    }
}

#[derive(Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Op {
    SoftmaxT {
        logits: Vec<f64>,
        tp: f64,
        expected: Vec<f64>,
    },
    KlDiv {
        p_s: Vec<Vec<f64>>,
        p_t: Vec<Vec<f64>>,
        expected: f64,
    },
    BceLogits {
        x: Vec<Vec<f64>>,
        y: Vec<Vec<f64>>,
        expected: f64,
    },
    BoxLoss {
        samples: Vec<BoxSample>,
        expected: f64,
    },
    DflLoss {
        samples: Vec<DflSample>,
        reg_max: usize,
        expected: f64,
    },
    FeatDistill {
        teacher: JsonTensor,
        student_steps: Vec<JsonTensor>,
        projection: JsonTensor,
        expected: f64,
    },
    ClsDistill {
        student: JsonTensor,
        teacher: JsonTensor,
        tp: f64,
        expected: f64,
    },
    DflDistill {
        student: JsonTensor,
        teacher: JsonTensor,
        tp: f64,
        expected: f64,
    },
    TotalLoss {
        components: LossComponents,
        theta: f64,
        eta: f64,
        expected: f64,
    },
    ThetaSchedule {
        iter: usize,
        total: usize,
        expected: f64,
    },
    EtaSchedule {
        iter: usize,
        total: usize,
        expected: f64,
    },
}

/// Worst absolute deviation from the expected value(s).
fn evaluate(op: &Op) -> Result<f64, spikedet_core::Error> {
    Ok(match op {
        Op::SoftmaxT {
            logits,
            tp,
            expected,
        } => {
            let got = softmax_t(logits, *tp)?;
            got.iter()
                .zip(expected)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        }
        Op::KlDiv { p_s, p_t, expected } => (kl_div(p_s, p_t)? - expected).abs(),
        Op::BceLogits { x, y, expected } => (bce_logits(x, y)? - expected).abs(),
        Op::BoxLoss { samples, expected } => (box_loss(samples)? - expected).abs(),
        Op::DflLoss {
            samples,
            reg_max,
            expected,
        } => (dfl_loss(samples, *reg_max)? - expected).abs(),
        Op::FeatDistill {
            teacher,
            student_steps,
            projection,
            expected,
        } => {
            let teacher = teacher.tensor()?;
            let steps: Vec<Tensor> = student_steps
                .iter()
                .map(|t| t.tensor())
                .collect::<Result<_, _>>()?;
            let projection = projection.tensor()?;
            let align = FeatureAlignment::new(&teacher, &steps, &projection)?;
            (feat_distill(&align)? - expected).abs()
        }
        Op::ClsDistill {
            student,
            teacher,
            tp,
            expected,
        } => {
            let cfg = DistillConfig {
                tp: *tp,
                ..DistillConfig::default()
            };
            (cls_distill(&student.tensor()?, &teacher.tensor()?, &cfg, None)? - expected).abs()
        }
        Op::DflDistill {
            student,
            teacher,
            tp,
            expected,
        } => {
            let cfg = DistillConfig {
                tp: *tp,
                ..DistillConfig::default()
            };
            (dfl_distill(&student.tensor()?, &teacher.tensor()?, &cfg)? - expected).abs()
        }
        Op::TotalLoss {
            components,
            theta,
            eta,
            expected,
        } => {
            let cfg = DistillConfig {
                theta: *theta,
                eta: *eta,
                ..DistillConfig::default()
            };
            (total_loss(components, &cfg) - expected).abs()
        }
        Op::ThetaSchedule {
            iter,
            total,
            expected,
        } => (theta_schedule(*iter, *total) - expected).abs(),
        Op::EtaSchedule {
            iter,
            total,
            expected,
        } => (eta_schedule(*iter, *total) - expected).abs(),
    })
}

pub fn run(args: LossesCheckArgs) -> CliResult<()> {
    let fixture: Fixture = serde_json::from_str(&super::read_string(&args.fixture)?)
        .map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", args.fixture.display())))?;
    if fixture.cases.is_empty() {
        return Err(CliError::validation(anyhow::anyhow!(
            "no cases in {}",
            args.fixture.display()
        )));
    }

    let mut failures = 0usize;
    println!("{:<40} {:>12} {:>10}  result", "case", "|err|", "tol");
    for case in &fixture.cases {
        match evaluate(&case.op) {
            Ok(err) => {
                let pass = err <= case.tolerance;
                if !pass {
                    failures += 1;
                }
                println!(
                    "{:<40} {:>12.3e} {:>10.1e}  {}",
                    case.name,
                    err,
                    case.tolerance,
                    if pass { "pass" } else { "FAIL" }
                );
            }
            Err(e) => {
                failures += 1;
                println!("{:<40} {:>12} {:>10}  FAIL ({e})", case.name, "-", "-");
            }
        }
    }
    println!("{} cases, {} failures", fixture.cases.len(), failures);
    if failures > 0 {
        return Err(CliError::validation(anyhow::anyhow!(
            "{failures} loss check(s) failed"
        )));
    }
    Ok(())
}
