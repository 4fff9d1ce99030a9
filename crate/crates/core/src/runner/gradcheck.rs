use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::feam::{self, FeamParams, FeamVars};
use crate::model::{Ctx, Mode, Model, ModelConfig, Variant};
use crate::optim::{combined_loss, dice_loss, one_hot, soft_cross_entropy, LossConfig};
use crate::tensor::{grad_check_many, ConvSpec, Graph, PoolKind, Shape, Tensor, Var};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: &'static str,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < GRAD_TOLERANCE)
    }

    pub fn format(&self) -> String {
        let mut out = String::from("check,max_rel_error,status\n");
        for e in &self.entries {
            let status = if e.max_rel_error < GRAD_TOLERANCE { "ok" } else { "FAIL" };
            let _ = writeln!(out, "{},{:.3e},{status}", e.name, e.max_rel_error);
        }
        out
    }
}

/// Two stages, 16x16 inputs, two classes.
pub fn reduced_model_config() -> ModelConfig {
    ModelConfig {
        num_classes: 2,
        stage_widths: vec![4, 8],
        input_h: 16,
        input_w: 16,
        feam_reduction: 2,
        feam_kernel: 3,
        fuse_before_feam: false,
        logit_relu: false,
    }
}

type Op = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

struct Check {
    name: &'static str,
    op: Op,
    inputs: Vec<Tensor>,
}

/// Reduces `y` to a scalar with fixed pseudo-random weights so every output
/// element carries a distinct cotangent.
fn project(g: &mut Graph, y: Var) -> Result<Var> {
    let s = g.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(s.numel() as u64);
    let r = g.constant(Tensor::uniform(s, 1.0, &mut rng));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn rand(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

fn check(name: &'static str, inputs: Vec<Tensor>, op: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Check {
    Check {
        name,
        op: Box::new(op),
        inputs,
    }
}

fn unary(name: &'static str, x: Tensor, f: impl Fn(&mut Graph, Var) -> Result<Var> + 'static) -> Check {
    check(name, vec![x], move |g, v| {
        let y = f(g, v[0])?;
        project(g, y)
    })
}

fn checks(inject_fault: bool) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let conv = ConvSpec::new(3, 2, 3).stride(2).padding(1).bias(true);
    let tconv = ConvSpec::new(2, 3, 3).stride(2).padding(1).bias(true);
    let dense_w = rand(&mut rng, [2, 4, 1, 1]);
    let feam_p = FeamParams::random(4, 2, 3, &mut rng).expect("valid dims");
    let mut feam_inputs = vec![rand(&mut rng, [2, 4, 3, 3])];
    feam_inputs.extend(feam_p.tensors().into_iter().cloned());
    let labels: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 7 % 3) as u8).collect();
    let running = (vec![0.1, -0.2], vec![0.5, 1.5]);

    let mut list = vec![
        check(
            "conv2d",
            vec![rand(&mut rng, [2, 3, 5, 5]), rand(&mut rng, conv.weight_shape()), rand(&mut rng, [1, 2, 1, 1])],
            move |g, v| {
                if inject_fault {
                    g.inject_conv_backward_fault();
                }
                let y = g.conv2d(v[0], v[1], Some(v[2]), conv)?;
                project(g, y)
            },
        ),
        check(
            "transposed_conv2d",
            vec![rand(&mut rng, [2, 2, 3, 3]), rand(&mut rng, tconv.transposed_weight_shape()), rand(&mut rng, [1, 3, 1, 1])],
            move |g, v| {
                let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), tconv)?;
                project(g, y)
            },
        ),
        check(
            "batchnorm2d_train",
            vec![rand(&mut rng, [3, 2, 3, 3]), rand(&mut rng, [1, 2, 1, 1]), rand(&mut rng, [1, 2, 1, 1])],
            |g, v| {
                let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
                project(g, y)
            },
        ),
        check(
            "batchnorm2d_eval",
            vec![rand(&mut rng, [3, 2, 3, 3]), rand(&mut rng, [1, 2, 1, 1]), rand(&mut rng, [1, 2, 1, 1])],
            move |g, v| {
                let y = g.batch_norm_eval(v[0], v[1], v[2], &running.0, &running.1, 1e-5)?;
                project(g, y)
            },
        ),
        unary("max_pool2d", rand(&mut rng, [2, 2, 4, 4]), |g, x| g.pool2d(x, PoolKind::Max, 2, 2)),
        unary("avg_pool2d", rand(&mut rng, [2, 2, 4, 4]), |g, x| g.pool2d(x, PoolKind::Avg, 2, 2)),
        unary("global_max_pool", rand(&mut rng, [2, 3, 3, 3]), |g, x| Ok(g.global_pool(x, PoolKind::Max))),
        unary("global_avg_pool", rand(&mut rng, [2, 3, 3, 3]), |g, x| Ok(g.global_pool(x, PoolKind::Avg))),
        unary("channel_max", rand(&mut rng, [2, 3, 3, 3]), |g, x| Ok(g.channel_reduce(x, PoolKind::Max))),
        unary("channel_avg", rand(&mut rng, [2, 3, 3, 3]), |g, x| Ok(g.channel_reduce(x, PoolKind::Avg))),
        check(
            "dense",
            vec![rand(&mut rng, [3, 4, 1, 1]), dense_w, rand(&mut rng, [1, 2, 1, 1])],
            |g, v| {
                let y = g.dense(v[0], v[1], Some(v[2]))?;
                project(g, y)
            },
        ),
        unary("relu", rand(&mut rng, [2, 3, 3, 3]), |g, x| Ok(g.relu(x))),
        unary("sigmoid", rand(&mut rng, [2, 3, 3, 3]), |g, x| Ok(g.sigmoid(x))),
        unary("softmax_channel", rand(&mut rng, [2, 3, 3, 3]), |g, x| Ok(g.softmax_channel(x))),
        check("add", vec![rand(&mut rng, [2, 2, 3, 3]), rand(&mut rng, [2, 2, 3, 3])], |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y)
        }),
        check("mul_broadcast", vec![rand(&mut rng, [2, 3, 3, 3]), rand(&mut rng, [2, 3, 1, 1])], |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y)
        }),
        unary("scale", rand(&mut rng, [2, 2, 3, 3]), |g, x| Ok(g.scale(x, -1.7))),
        check("concat_channels", vec![rand(&mut rng, [2, 1, 3, 3]), rand(&mut rng, [2, 2, 3, 3])], |g, v| {
            let y = g.concat_channels(&[v[0], v[1]])?;
            project(g, y)
        }),
        check("sum", vec![rand(&mut rng, [2, 2, 3, 3])], |g, v| Ok(g.sum(v[0]))),
        check("channel_attention", feam_inputs.clone(), |g, v| {
            let y = feam::channel_attention(g, v[0], &FeamVars::from_slice(&v[1..]))?;
            project(g, y)
        }),
        check("spatial_attention", feam_inputs.clone(), |g, v| {
            let y = feam::spatial_attention(g, v[0], &FeamVars::from_slice(&v[1..]))?;
            project(g, y)
        }),
        check("feam", feam_inputs, |g, v| {
            let y = feam::apply(g, v[0], &FeamVars::from_slice(&v[1..]))?;
            project(g, y)
        }),
    ];

    let loss_labels = labels.clone();
    list.push(check("dice_loss", vec![rand(&mut rng, [2, 3, 3, 3])], move |g, v| {
        let p = g.softmax_channel(v[0]);
        let target = one_hot(&loss_labels, 2, 3, 3, 3)?;
        dice_loss(g, p, &target, 1e-7)
    }));
    let loss_labels = labels.clone();
    list.push(check("soft_cross_entropy", vec![rand(&mut rng, [2, 3, 3, 3])], move |g, v| {
        let p = g.softmax_channel(v[0]);
        soft_cross_entropy(g, p, &loss_labels, 1e-12, 0.1)
    }));
    list.push(check("combined_loss", vec![rand(&mut rng, [2, 3, 3, 3])], move |g, v| {
        let p = g.softmax_channel(v[0]);
        Ok(combined_loss(g, p, &labels, &LossConfig::default())?.total)
    }));

    let chain = ConvSpec::new(2, 3, 3).padding(1);
    list.push(check(
        "conv_bn_relu",
        vec![rand(&mut rng, [2, 2, 4, 4]), rand(&mut rng, chain.weight_shape()), rand(&mut rng, [1, 3, 1, 1]), rand(&mut rng, [1, 3, 1, 1])],
        move |g, v| {
            if inject_fault {
                g.inject_conv_backward_fault();
            }
            let y = g.conv2d(v[0], v[1], None, chain)?;
            let (y, _) = g.batch_norm_train(y, v[2], v[3], 1e-5)?;
            let y = g.relu(y);
            project(g, y)
        },
    ));

    list.push(model_check(inject_fault));
    list
}

/// Combined loss of the reduced model on one (1,3,16,16) sample, checked
/// against every parameter. Input gradients are already covered by the
/// conv2d check and sit near the roundoff floor here.
fn model_check(inject_fault: bool) -> Check {
    let cfg = reduced_model_config();
    let model = Model::build(cfg.clone(), Variant::Frts, 7).expect("valid reduced config");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (h, w) = (cfg.input_h, cfg.input_w);
    let inputs: Vec<Tensor> = model.store().iter().map(|(_, t)| t.clone()).collect();
    let rgb = rand(&mut rng, [1, 3, h, w]).map(f64::abs);
    let thermal = rand(&mut rng, [1, 1, h, w]).map(f64::abs);
    let labels: Vec<u8> = (0..h * w).map(|i| ((i / 5 + i / 37) % 2) as u8).collect();
    check("full_model", inputs, move |g, v| {
        if inject_fault {
            g.inject_conv_backward_fault();
        }
        let rgb = g.constant(rgb.clone());
        let thermal = g.constant(thermal.clone());
        let mut ctx = Ctx::new(g, model.store(), v, Mode::Train);
        let logits = model.forward(&mut ctx, rgb, thermal)?;
        let probs = g.softmax_channel(logits);
        Ok(combined_loss(g, probs, &labels, &LossConfig::default())?.total)
    })
}

/// Finite-difference audit of every differentiable op and of the reduced
/// model. `inject_fault` corrupts the conv weight gradient to prove the
/// audit can fail.
pub fn run_gradcheck(inject_fault: bool) -> Result<GradCheckReport> {
    let mut entries = Vec::new();
    for c in checks(inject_fault) {
        let errs = grad_check_many(&c.op, &c.inputs, FD_STEP)?;
        entries.push(GradCheckEntry {
            name: c.name,
            max_rel_error: errs.into_iter().fold(0.0, f64::max),
        });
    }
    Ok(GradCheckReport { entries })
}

/// Names covered by [`run_gradcheck`], in report order.
pub fn gradcheck_names() -> Vec<&'static str> {
    checks(false).iter().map(|c| c.name).collect()
}
