//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). It reports failures without
//! failing the build unless `ODTTE_ACCEPTANCE_STRICT=1` is set, so that a
//! criterion this environment cannot meet stays visible instead of blocking
//! the unit and property tests.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use odtte::architectures::{
    pool_placement, Block, DepthSummary, Family, Model, ModelSpec, ResNetBlock, SeConfig, SeUnit, VggBlock,
};
use odtte::autograd::{finite_diff_check, finite_diff_check_params, NodeId, ParamStore, Tape};
use odtte::baselines::{sbtte_predict_all, NeighborIndex, SbtteParams};
use odtte::dataset::{generate_synthetic, split, summary_stats, SyntheticConfig};
use odtte::features::{haversine_km, DeliveryRecord, FeatureConfig};
use odtte::layers::DenseParams;
use odtte::metrics::{compute_metrics, error_window, paired_ttest};
use odtte::analysis::fit_linear_ae;
use odtte::tensor::{Shape, Tensor};
use odtte::training::{evaluate_mse, train, Samples, StopReason, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const EPS: f64 = 1e-5;
/// Ten finite-difference steps.
const KINK_MARGIN: f64 = 1e-4;

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(shape, (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar probe `Σ y ⊙ w` so every output element contributes a distinct weight.
fn probe<'a>(tape: &mut Tape<'a>, y: NodeId, w: &Tensor) -> odtte::Result<NodeId> {
    let w = tape.constant(w.clone());
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn randomize_biases(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with("bias") {
            let t = random(store.get(id).shape(), rng).map(|v| 0.1 * v);
            *store.get_mut(id) = t;
        }
    }
}

fn tiny_loss<'a>(t: &mut Tape<'a>, s: &'a ParamStore, model: &Model, x: &Tensor, y: &Tensor) -> odtte::Result<NodeId> {
    let xn = t.constant(x.clone());
    let out = model.forward_with(t, s, xn)?;
    let yn = t.constant(y.clone());
    t.mse_loss(out, yn)
}

fn check(name: &str, err: f64, tol: f64, worst: &mut (f64, String)) -> Result<(), String> {
    if err > worst.0 {
        *worst = (err, name.to_string());
    }
    if err < tol {
        Ok(())
    } else {
        Err(format!("{name}: relative error {err:.3e} >= {tol:e}"))
    }
}

fn ac1_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0, String::new());
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (b, l, cin, cout) = (2, 8, 3, 4);
    for _ in 0..10 {
        let x = random(Shape::new(b, l, cin), &mut rng);
        let k = random(Shape::new(3, cin, cout), &mut rng);
        let bias = random(Shape::new(1, 1, cout), &mut rng);
        let w_conv = random(Shape::new(b, l, cout), &mut rng);
        let dense_x = random(Shape::new(b, 1, 5), &mut rng);
        let dense_w = random(Shape::new(1, 5, 3), &mut rng);
        let dense_b = random(Shape::new(1, 1, 3), &mut rng);
        let w_dense = random(Shape::new(b, 1, 3), &mut rng);
        let w_same = random(Shape::new(b, l, cin), &mut rng);
        let w_pool = random(Shape::new(b, l / 2, cin), &mut rng);
        let w_gap = random(Shape::new(b, 1, cin), &mut rng);
        let e = random(Shape::new(b, 1, cin), &mut rng).map(|v| 0.5 + 0.4 * v);
        let target = random(Shape::new(b, l, cin), &mut rng);
        let w_flat = random(Shape::new(b, 1, l * cin), &mut rng);

        let cases: Vec<(&str, f64)> = vec![
            ("conv1d/x", finite_diff_check(|t, xn| {
                let (kn, bn) = (t.constant(k.clone()), t.constant(bias.clone()));
                let y = t.conv1d(xn, kn, Some(bn))?;
                probe(t, y, &w_conv)
            }, &x, EPS).unwrap()),
            ("conv1d/kernel", finite_diff_check(|t, kn| {
                let (xn, bn) = (t.constant(x.clone()), t.constant(bias.clone()));
                let y = t.conv1d(xn, kn, Some(bn))?;
                probe(t, y, &w_conv)
            }, &k, EPS).unwrap()),
            ("conv1d/bias", finite_diff_check(|t, bn| {
                let (xn, kn) = (t.constant(x.clone()), t.constant(k.clone()));
                let y = t.conv1d(xn, kn, Some(bn))?;
                probe(t, y, &w_conv)
            }, &bias, EPS).unwrap()),
            ("dense/x", finite_diff_check(|t, xn| {
                let (wn, bn) = (t.constant(dense_w.clone()), t.constant(dense_b.clone()));
                let y = t.dense(xn, wn, Some(bn))?;
                probe(t, y, &w_dense)
            }, &dense_x, EPS).unwrap()),
            ("dense/weights", finite_diff_check(|t, wn| {
                let (xn, bn) = (t.constant(dense_x.clone()), t.constant(dense_b.clone()));
                let y = t.dense(xn, wn, Some(bn))?;
                probe(t, y, &w_dense)
            }, &dense_w, EPS).unwrap()),
            ("dense/bias", finite_diff_check(|t, bn| {
                let (xn, wn) = (t.constant(dense_x.clone()), t.constant(dense_w.clone()));
                let y = t.dense(xn, wn, Some(bn))?;
                probe(t, y, &w_dense)
            }, &dense_b, EPS).unwrap()),
            ("maxpool1d", finite_diff_check(|t, xn| {
                let y = t.maxpool1d(xn)?;
                probe(t, y, &w_pool)
            }, &x, EPS).unwrap()),
            ("relu", finite_diff_check(|t, xn| {
                let y = t.relu(xn);
                probe(t, y, &w_same)
            }, &x, EPS).unwrap()),
            ("sigmoid", finite_diff_check(|t, xn| {
                let y = t.sigmoid(xn);
                probe(t, y, &w_same)
            }, &x, EPS).unwrap()),
            ("global_avg_pool", finite_diff_check(|t, xn| {
                let y = t.global_avg_pool(xn);
                probe(t, y, &w_gap)
            }, &x, EPS).unwrap()),
            ("channel_scale/x", finite_diff_check(|t, xn| {
                let en = t.constant(e.clone());
                let y = t.channel_scale(xn, en)?;
                probe(t, y, &w_same)
            }, &x, EPS).unwrap()),
            ("channel_scale/e", finite_diff_check(|t, en| {
                let xn = t.constant(x.clone());
                let y = t.channel_scale(xn, en)?;
                probe(t, y, &w_same)
            }, &e, EPS).unwrap()),
            ("flatten", finite_diff_check(|t, xn| {
                let y = t.flatten(xn)?;
                probe(t, y, &w_flat)
            }, &x, EPS).unwrap()),
            ("mse_loss", finite_diff_check(|t, xn| {
                let yn = t.constant(target.clone());
                t.mse_loss(xn, yn)
            }, &x, EPS).unwrap()),
        ];
        for (name, err) in cases {
            check(name, err, 1e-5, &mut worst)?;
        }
    }

    // Blocks, each at 10 random parameter/input draws.
    let se = Some(SeConfig { reduction: 2, bias: true });
    for trial in 0..10 {
        let mut store = ParamStore::new();
        let blocks: Vec<(&str, Block)> = vec![
            ("vgg", Block::Vgg(VggBlock::init(&mut store, "v", 2, 4, true, None, &mut rng))),
            ("vgg+se", Block::Vgg(VggBlock::init(&mut store, "sv", 2, 4, true, se, &mut rng))),
            ("resnet/projection", Block::ResNet(ResNetBlock::init(&mut store, "r", 2, 4, None, &mut rng))),
            ("resnet+se/projection", Block::ResNet(ResNetBlock::init(&mut store, "sr", 2, 4, se, &mut rng))),
            ("resnet+se/identity", Block::ResNet(ResNetBlock::init(&mut store, "ri", 2, 2, se, &mut rng))),
        ];
        let se_unit = SeUnit::init(&mut store, "se", 4, SeConfig { reduction: 2, bias: true }, &mut rng);
        randomize_biases(&mut store, &mut rng);
        let x = random(Shape::new(2, 8, 2), &mut rng);
        for (name, block) in &blocks {
            let out_len = if matches!(block, Block::Vgg(_)) { 4 } else { 8 };
            let width = if *name == "resnet+se/identity" { 2 } else { 4 };
            let w = random(Shape::new(2, out_len, width), &mut rng);
            let p_err = finite_diff_check_params(&store, |t, s| {
                let xn = t.constant(x.clone());
                let y = block.apply(t, s, xn)?;
                probe(t, y, &w)
            }, EPS).unwrap();
            let x_err = finite_diff_check(|t, xn| {
                let y = block.apply(t, &store, xn)?;
                probe(t, y, &w)
            }, &x, EPS).unwrap();
            check(&format!("{name} block (trial {trial})"), p_err.max(x_err), 1e-5, &mut worst)?;
        }
        let u = random(Shape::new(2, 6, 4), &mut rng);
        let w = random(Shape::new(2, 6, 4), &mut rng);
        let se_err = finite_diff_check_params(&store, |t, s| {
            let un = t.constant(u.clone());
            let y = se_unit.apply(t, s, un)?;
            probe(t, y, &w)
        }, EPS).unwrap().max(finite_diff_check(|t, un| {
            let y = se_unit.apply(t, &store, un)?;
            probe(t, y, &w)
        }, &u, EPS).unwrap());
        check(&format!("se unit (trial {trial})"), se_err, 1e-5, &mut worst)?;

        let mut mlp_store = ParamStore::new();
        let layers = [
            DenseParams::init(&mut mlp_store, "fc0", 6, 5, true, &mut rng),
            DenseParams::init(&mut mlp_store, "fc1", 5, 3, true, &mut rng),
        ];
        randomize_biases(&mut mlp_store, &mut rng);
        let xm = random(Shape::new(3, 1, 6), &mut rng);
        let wm = random(Shape::new(3, 1, 3), &mut rng);
        let mlp_err = finite_diff_check_params(&mlp_store, |t, s| {
            let mut h = t.constant(xm.clone());
            h = layers[0].apply(t, s, h)?;
            h = t.relu(h);
            h = layers[1].apply(t, s, h)?;
            probe(t, h, &wm)
        }, EPS).unwrap();
        check(&format!("mlp block (trial {trial})"), mlp_err, 1e-5, &mut worst)?;
    }

    // Whole models at tiny widths.
    let tiny = DepthSummary::new(vec![2, 4, 8]).unwrap();
    let specs = [
        ModelSpec::conv(Family::Vgg, &tiny),
        ModelSpec::conv(Family::ResNet, &tiny),
        ModelSpec::conv(Family::Vgg, &tiny).with_se(SeConfig { reduction: 2, bias: true }),
        ModelSpec::conv(Family::ResNet, &tiny).with_se(SeConfig { reduction: 2, bias: true }),
        ModelSpec::mlp(&[6, 5]),
    ];
    for (i, spec) in specs.iter().enumerate() {
        let mut model = Model::build(spec, 40 + i as u64).unwrap();
        let mut checked = 0;
        let mut draws = 0;
        while checked < 10 {
            draws += 1;
            if draws > 200 {
                return Err(format!("tiny {}: no kink-free point in 200 draws", model.name()));
            }
            randomize_biases(model.params_mut(), &mut rng);
            let x = random(Shape::new(3, 12, 1), &mut rng);
            let y = random(Shape::new(3, 1, 1), &mut rng);
            // The ±eps stencil must not cross a ReLU or pooling kink.
            let mut probe_tape = Tape::new();
            tiny_loss(&mut probe_tape, model.params(), &model, &x, &y).unwrap();
            if probe_tape.kink_margin() < KINK_MARGIN {
                continue;
            }
            let err = finite_diff_check_params(model.params(), |t, s| tiny_loss(t, s, &model, &x, &y), EPS).unwrap();
            check(&format!("tiny {} (point {checked})", model.name()), err, 1e-4, &mut worst)?;
            checked += 1;
        }
    }

    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("took {secs:.1} s (limit 60 s)"));
    }
    Ok(format!("worst relative error {:.2e} ({}), {secs:.1} s", worst.0, worst.1))
}

fn ac2_constant_targets() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..200);
        let c = rng.random_range(0.1..14.0);
        let targets = vec![c; n];
        let preds: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..15.0)).collect();
        let m = compute_metrics(&targets, &preds).map_err(|e| e.to_string())?;
        worst = worst.max((m.mape - m.mare).abs());
    }
    if worst <= 1e-12 {
        Ok(format!("max |MAPE - MARE| = {worst:.1e} over 100 cases"))
    } else {
        Err(format!("max |MAPE - MARE| = {worst:e}"))
    }
}

/// Smallest sorted error whose rank covers a fraction `p` of the sample.
fn ew_oracle(errors: &[f64], p: f64) -> f64 {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = (1..=n).find(|&k| k as f64 / n as f64 >= p).unwrap_or(n);
    sorted[k - 1]
}

fn ac3_error_window() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for case in 0..1000 {
        let n = rng.random_range(1..300);
        let errors: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0f64).powi(2)).collect();
        let p: f64 = rng.random_range(0.001..=1.0);
        let got = error_window(&errors, p).map_err(|e| e.to_string())?;
        let want = ew_oracle(&errors, p);
        if got != want {
            return Err(format!("case {case}: n={n} p={p}: {got} != oracle {want}"));
        }
        let q = rng.random_range(p..=1.0);
        if error_window(&errors, q).unwrap() < got {
            return Err(format!("case {case}: EW not monotone between p={p} and {q}"));
        }
    }
    Ok("1000 cases equal to the sort-based oracle, monotone in p".into())
}

fn linear_scan(train: &[DeliveryRecord], q: &DeliveryRecord, p: &SbtteParams) -> f64 {
    let (mut ro, mut rd) = (p.radius_origin_km, p.radius_dest_km);
    for e in 0..=p.max_expansions {
        if e > 0 {
            ro *= p.growth;
            rd *= p.growth;
        }
        let mut d: Vec<f64> = train
            .iter()
            .filter(|t| haversine_km(t.origin, q.origin) <= ro && haversine_km(t.destination, q.destination) <= rd)
            .map(DeliveryRecord::duration_h)
            .collect();
        if d.len() >= p.min_neighbors {
            d.sort_by(f64::total_cmp);
            return d.iter().sum::<f64>() / d.len() as f64;
        }
    }
    let mut all: Vec<f64> = train.iter().map(DeliveryRecord::duration_h).collect();
    all.sort_by(f64::total_cmp);
    all.iter().sum::<f64>() / all.len() as f64
}

fn ac4_sbtte() -> Outcome {
    let start = Instant::now();
    let train = generate_synthetic(&SyntheticConfig { n_samples: 10_000, seed: 41, ..SyntheticConfig::default() })
        .map_err(|e| e.to_string())?
        .records;
    let queries = generate_synthetic(&SyntheticConfig { n_samples: 1000, seed: 42, ..SyntheticConfig::default() })
        .map_err(|e| e.to_string())?
        .records;
    let params = SbtteParams::default();
    let index = NeighborIndex::build(&train, 0.01).map_err(|e| e.to_string())?;
    let got = sbtte_predict_all(&index, &queries, &params).map_err(|e| e.to_string())?;
    for (i, (q, g)) in queries.iter().zip(&got).enumerate() {
        let want = linear_scan(&train, q, &params);
        if g.to_bits() != want.to_bits() {
            return Err(format!("query {i}: indexed {g} != linear scan {want}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 120.0 {
        return Err(format!("took {secs:.1} s (limit 120 s)"));
    }
    Ok(format!("1000 queries bit-identical to the linear scan, {secs:.1} s"))
}

fn ac5_pooling() -> Outcome {
    for blocks in 3..=10 {
        let spec = ModelSpec::conv(Family::Vgg, &DepthSummary::standard(blocks).unwrap().scaled_down(16));
        let model = Model::build(&spec, 0).map_err(|e| e.to_string())?;
        let pools = model.blocks().iter().filter(|b| matches!(b, Block::Vgg(v) if v.pool)).count();
        if pools != 3 {
            return Err(format!("VGG-{blocks} has {pools} pools"));
        }
        // Run a real batch through the trunk and read the spatial length off the output.
        let x = Tensor::zeros(Shape::new(1, 12, 1));
        let mut tape = Tape::new();
        let mut h = tape.constant(x);
        for b in model.blocks() {
            h = b.apply(&mut tape, model.params(), h).map_err(|e| e.to_string())?;
        }
        let len = tape.shape(h).len;
        if len != 1 {
            return Err(format!("VGG-{blocks} ends at spatial length {len}"));
        }
    }
    let hand: [(usize, &[usize]); 4] = [(3, &[1, 2, 3]), (4, &[1, 2, 3]), (6, &[1, 3, 5]), (10, &[1, 4, 7])];
    for (b, want) in hand {
        let got = pool_placement(b, 3).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("B={b}: placement {got:?} != {want:?}"));
        }
        let spec = ModelSpec::conv(Family::Vgg, &DepthSummary::standard(b).unwrap().scaled_down(16));
        let model = Model::build(&spec, 0).map_err(|e| e.to_string())?;
        let in_model: Vec<usize> =
            model.blocks().iter().enumerate().filter(|(_, b)| matches!(b, Block::Vgg(v) if v.pool)).map(|(i, _)| i + 1).collect();
        if in_model != want {
            return Err(format!("VGG-{b} pools after {in_model:?}, expected {want:?}"));
        }
    }
    Ok("VGG-3..10: 3 pools, final length 1; placements for B=3,4,6,10 match".into())
}

fn conv_params(k: usize, cin: usize, cout: usize) -> usize {
    k * cin * cout + cout
}

fn head_params(flat: usize) -> usize {
    (flat * 50 + 50) + (50 * 50 + 50) + (50 + 1)
}

fn ac6_param_counts() -> Outcome {
    // VGG-3: widths 64/128/256, three pools take length 12 to 1.
    let vgg3 = conv_params(3, 1, 64) + conv_params(3, 64, 64)
        + conv_params(3, 64, 128) + conv_params(3, 128, 128)
        + conv_params(3, 128, 256) + conv_params(3, 256, 256)
        + head_params(256);
    // ResNet-3: same convs plus 1×1 projections on every width change, no pooling.
    let res3 = vgg3 - head_params(256)
        + conv_params(1, 1, 64) + conv_params(1, 64, 128) + conv_params(1, 128, 256)
        + head_params(12 * 256);
    let got_vgg3 = Model::build(&ModelSpec::vgg(3).unwrap(), 0).unwrap().count_params();
    let got_res3 = Model::build(&ModelSpec::resnet(3).unwrap(), 0).unwrap().count_params();
    if got_vgg3 != vgg3 || got_res3 != res3 {
        return Err(format!("VGG-3 {got_vgg3} vs hand {vgg3}; ResNet-3 {got_res3} vs hand {res3}"));
    }
    let mut notes = vec![format!("VGG-3 {vgg3}, ResNet-3 {res3} exact")];
    for (spec, published) in [(ModelSpec::vgg(6).unwrap(), 6_730_907usize), (ModelSpec::resnet(8).unwrap(), 9_664_923)] {
        let model = Model::build(&spec, 0).unwrap();
        let got = model.count_params();
        let rel = (got as f64 - published as f64).abs() / published as f64;
        if rel > 0.03 {
            return Err(format!("{} has {got} parameters, published {published} ({:.2}% off)", model.name(), rel * 100.0));
        }
        notes.push(format!("{} {got} vs {published} ({:.2}%)", model.name(), rel * 100.0));
    }
    Ok(notes.join("; "))
}

const OVERFIT_LR: f64 = 1e-3;

fn ac7_overfit() -> Outcome {
    let start = Instant::now();
    let ds = generate_synthetic(&SyntheticConfig { n_samples: 256, seed: 1, ..SyntheticConfig::default() })
        .map_err(|e| e.to_string())?;
    let samples = Samples::from_records(&ds.records, &FeatureConfig::default()).map_err(|e| e.to_string())?;
    let val = samples.gather(&(0..32).collect::<Vec<_>>()).unwrap();
    let model = Model::build(&ModelSpec::resnet(3).unwrap(), 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        initial_lr: OVERFIT_LR,
        // Constant rate: with halving every 40 epochs the step size is gone before the fit is.
        lr_halving_period: usize::MAX,
        max_epochs: 2000,
        patience: 2000,
        stop_at_train_mse: Some(0.01),
        ..TrainConfig::default()
    };
    let out = train(model, &samples, &val, &cfg).map_err(|e| e.to_string())?;
    let mse = evaluate_mse(&out.model, &samples).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let epochs = out.history.epochs.len();
    if out.stop != StopReason::TrainTarget || mse >= 0.01 {
        return Err(format!("train MSE {mse:.4} after {epochs} epochs ({secs:.0} s)"));
    }
    if secs >= 300.0 {
        return Err(format!("reached train MSE {mse:.4} in {epochs} epochs but took {secs:.0} s (limit 300 s)"));
    }
    Ok(format!("train MSE {mse:.4} after {epochs} epochs, {secs:.0} s"))
}

fn ac8_calibration() -> Outcome {
    let ds = generate_synthetic(&SyntheticConfig { n_samples: 100_000, seed: 0, ..SyntheticConfig::default() })
        .map_err(|e| e.to_string())?;
    let (mean, median, var) = summary_stats(&ds.durations());
    let ok = (mean - 3.19).abs() <= 0.15 && (median - 2.96).abs() <= 0.15 && (var - 2.88).abs() <= 0.30;
    let msg = format!("mean {mean:.3} h, median {median:.3} h, variance {var:.3}");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Conv widths are divided by this factor for the benchmark; see the README.
const BENCH_WIDTH_DIVISOR: usize = 16;
const BENCH_LR: f64 = 1e-3;
const BENCH_MAX_EPOCHS: usize = 30;

fn ac9_benchmark_ordering() -> Outcome {
    let start = Instant::now();
    let ds = generate_synthetic(&SyntheticConfig { n_samples: 50_000, seed: 9, ..SyntheticConfig::default() })
        .map_err(|e| e.to_string())?;
    let s = split(ds.len(), 0.7, 9).map_err(|e| e.to_string())?;
    let fc = FeatureConfig::default();
    let train_set = Samples::from_records(&ds.subset(&s.train).records, &fc).map_err(|e| e.to_string())?;
    let val = Samples::from_records(&ds.subset(&s.test).records, &fc).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { initial_lr: BENCH_LR, max_epochs: BENCH_MAX_EPOCHS, seed: 9, ..TrainConfig::default() };
    let specs = [
        ModelSpec::conv(Family::ResNet, &DepthSummary::standard(8).unwrap().scaled_down(BENCH_WIDTH_DIVISOR)),
        ModelSpec::conv(Family::Vgg, &DepthSummary::standard(6).unwrap().scaled_down(BENCH_WIDTH_DIVISOR)),
        ModelSpec::mlp2(),
    ];
    let mut mse = Vec::new();
    let mut abs_errors = Vec::new();
    for spec in &specs {
        let out = train(Model::build(spec, 9).unwrap(), &train_set, &val, &cfg).map_err(|e| e.to_string())?;
        let pred = out.model.predict(&val.inputs).map_err(|e| e.to_string())?;
        mse.push(evaluate_mse(&out.model, &val).map_err(|e| e.to_string())?);
        abs_errors.push(pred.iter().zip(&val.targets).map(|(p, y)| (p - y).abs()).collect::<Vec<f64>>());
    }
    let t = paired_ttest(&abs_errors[0], &abs_errors[2]).map_err(|e| e.to_string())?;
    let msg = format!(
        "val MSE ResNet-8 {:.4}, VGG-6 {:.4}, MLP-2 {:.4}; paired t {:.2}, p {:.2e}; {:.0} s",
        mse[0],
        mse[1],
        mse[2],
        t.t,
        t.p,
        start.elapsed().as_secs_f64()
    );
    if mse[0] <= mse[1] && mse[1] <= mse[2] && t.p < 0.01 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn svd_rank2_optimum(n: usize, f: usize, data: &[f64]) -> f64 {
    let mut m = nalgebra::DMatrix::from_row_slice(n, f, data);
    for j in 0..f {
        let mean = m.column(j).mean();
        m.column_mut(j).add_scalar_mut(-mean);
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.iter().skip(2).map(|s| s * s).sum::<f64>() / n as f64
}

fn ac10_projection() -> Outcome {
    let ds = generate_synthetic(&SyntheticConfig { n_samples: 500, seed: 10, ..SyntheticConfig::default() })
        .map_err(|e| e.to_string())?;
    let spec = ModelSpec::conv(Family::Vgg, &DepthSummary::standard(3).unwrap().scaled_down(4));
    let model = Model::build(&spec, 10).map_err(|e| e.to_string())?;
    let inputs = Samples::from_records(&ds.records, &FeatureConfig::default()).map_err(|e| e.to_string())?.inputs;
    let trunk = model.trunk_features(&inputs).map_err(|e| e.to_string())?;
    let Shape { batch: n, channels: f, .. } = trunk.shape();
    let oracle = svd_rank2_optimum(n, f, trunk.data());
    let fit = fit_linear_ae(&trunk, &odtte::analysis::AeConfig::default()).map_err(|e| e.to_string())?;
    let ratio = fit.recon_mse / oracle;
    let msg = format!("AE {:.6e} vs SVD {:.6e} (ratio {ratio:.4}) on a {n}x{f} matrix, {} epochs", fit.recon_mse, oracle, fit.epochs);
    if fit.recon_mse >= oracle * (1.0 - 1e-9) && ratio <= 1.05 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_odtte");
    let out = dir.to_str().unwrap();
    let data = dir.join("data.csv");
    let ckpt = dir.join("model.ckpt");
    let preds = dir.join("predictions.csv");
    let common = ["--seed", "11", "--out", out, "--set", "width_divisor=16"];
    let steps: Vec<Vec<&str>> = vec![
        vec!["gen-data", "--n", "3000"],
        vec!["train", "--data", data.to_str().unwrap(), "--family", "resnet", "--depth", "3", "--max-epochs", "3", "--lr", "0.001"],
        vec!["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()],
        vec!["analyze", "--data", data.to_str().unwrap(), "--predictions", preds.to_str().unwrap()],
    ];
    for step in steps {
        let status = Command::new(bin).args(common).args(&step).output().map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("{} failed: {}", step[0], String::from_utf8_lossy(&status.stderr)));
        }
    }
    Ok(())
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

fn ac11_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let files = csv_files(a.path());
    if files != csv_files(b.path()) || files.is_empty() {
        return Err("the two runs produced different file sets".into());
    }
    for f in &files {
        if std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap() {
            return Err(format!("{f} differs between runs"));
        }
    }
    Ok(format!("{} CSV files byte-identical", files.len()))
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 11] = [
        ("AC1", "gradient correctness", ac1_gradients),
        ("AC2", "constant-target identity", ac2_constant_targets),
        ("AC3", "error window", ac3_error_window),
        ("AC4", "SB-TTE exactness", ac4_sbtte),
        ("AC5", "pooling structure", ac5_pooling),
        ("AC6", "parameter counting", ac6_param_counts),
        ("AC7", "overfit smoke test", ac7_overfit),
        ("AC8", "generator calibration", ac8_calibration),
        ("AC9", "benchmark ordering", ac9_benchmark_ordering),
        ("AC10", "projection optimality", ac10_projection),
        ("AC11", "determinism", ac11_determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let mut failed = 0;
    let total = Instant::now();
    for (id, name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = Duration::from_secs_f64(start.elapsed().as_secs_f64());
        match result {
            Ok(msg) => println!("PASS {id} {name}: {msg} [{:.1}s]", took.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {id} {name}: {msg} [{:.1}s]", took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {failed} failed, {:.0} s total", total.elapsed().as_secs_f64());
    if failed > 0 && std::env::var("ODTTE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
