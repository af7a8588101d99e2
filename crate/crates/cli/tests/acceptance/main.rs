//! The release gates. Each test checks one property the engine must hold —
//! kernel correctness against independent oracles, gradient fidelity,
//! architectural invariants, training behavior, metric exactness, and
//! output stability — and prints a `criterion N: PASS` line with the
//! measured numbers, so a `--nocapture` run doubles as the sign-off sheet.
//!
//! The slow tests (1, 2, 7) also assert their own wall-clock ceilings; they
//! are budgets, not benchmarks, so the limits are deliberately loose.

mod oracle;
mod support;

use std::fs;
use std::time::Instant;

use rand::Rng;

use volfuse_cli as _;
use volfuse_core::arch::{FocalFuse, GraphCtx, Model};
use volfuse_core::data::generate_phantom_set;
use volfuse_core::metrics::{average_surface_distance, dice_score, hausdorff_distance};
use volfuse_core::ops::conv::{conv3d, conv_transpose3d};
use volfuse_core::ops::linear::linear;
use volfuse_core::ops::norm::{instance_norm, NORM_EPS};
use volfuse_core::ops::pool::{global_avg_pool, pool3d};
use volfuse_core::ops::{ConvSpec, PoolKind};
use volfuse_core::train::{train, TrainOptions};
use volfuse_core::{
    cyclic_lr, load_checkpoint, save_checkpoint, LabelVolume, ModelConfig, ParamStore,
    PhantomSpec, Tape, Tensor, Variant,
};

use support::{
    fd_check, max_abs_diff, rand_f32, rand_f32_spread, rand_f64, rand_f64_kink_free,
    rand_f64_pool_safe, rand_labels, rng, run_cli, weighted_sum,
};

const ORACLE_TOL: f64 = 1e-6;

/// Forward kernels against the nested-loop references: 20 seeded random
/// shape/stride/padding/groups draws per op, spatial extents capped at 6.
#[test]
fn criterion_01_forward_kernels_match_oracles() {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: Vec<(&str, f64)> = Vec::new();

    let mut w_conv = 0.0f64;
    for case in 0..20 {
        let groups = 1 + case % 2;
        let cig = r.gen_range(1..=3);
        let cog = r.gen_range(1..=3);
        let b = r.gen_range(1..=2);
        let mut kernel = [0usize; 3];
        let mut stride = [0usize; 3];
        let mut padding = [0usize; 3];
        let mut extents = [0usize; 3];
        for a in 0..3 {
            kernel[a] = r.gen_range(1..=3);
            stride[a] = r.gen_range(1..=2);
            padding[a] = r.gen_range(0..=1);
            let min_in = kernel[a].saturating_sub(2 * padding[a]).max(1);
            extents[a] = r.gen_range(min_in..=6);
        }
        let spec = ConvSpec { kernel, stride, padding, groups, output_padding: [0; 3] };
        let x = rand_f32(
            &mut r,
            &[b, groups * cig, extents[0], extents[1], extents[2]],
            -0.3,
            0.3,
        );
        let w = rand_f32(&mut r, &[groups * cog, cig, kernel[0], kernel[1], kernel[2]], -0.3, 0.3);
        let bias = (case % 3 != 0).then(|| rand_f32(&mut r, &[groups * cog], -0.3, 0.3));
        let got = conv3d(&x, &w, bias.as_ref(), &spec).unwrap();
        let want = oracle::ref_conv3d(&x, &w, bias.as_ref(), &spec);
        let d = max_abs_diff(got.data(), &want);
        assert!(d <= ORACLE_TOL, "conv3d case {case}: max abs diff {d:.3e} (spec {spec:?})");
        w_conv = w_conv.max(d);
    }
    worst.push(("conv3d", w_conv));

    let mut w_deconv = 0.0f64;
    for case in 0..20 {
        let groups = 1 + case % 2;
        let cig = r.gen_range(1..=3);
        let cog = r.gen_range(1..=3);
        let b = r.gen_range(1..=2);
        let mut kernel = [0usize; 3];
        let mut stride = [0usize; 3];
        let mut padding = [0usize; 3];
        let mut output_padding = [0usize; 3];
        let mut extents = [0usize; 3];
        for a in 0..3 {
            kernel[a] = r.gen_range(1..=3);
            stride[a] = r.gen_range(1..=2);
            output_padding[a] = r.gen_range(0..stride[a]);
            extents[a] = r.gen_range(1..=6);
            let grown = (extents[a] - 1) * stride[a] + kernel[a] + output_padding[a];
            padding[a] = r.gen_range(0..=1usize).min((grown - 1) / 2);
        }
        let spec = ConvSpec { kernel, stride, padding, groups, output_padding };
        let x = rand_f32(
            &mut r,
            &[b, groups * cig, extents[0], extents[1], extents[2]],
            -0.3,
            0.3,
        );
        let w = rand_f32(&mut r, &[groups * cig, cog, kernel[0], kernel[1], kernel[2]], -0.3, 0.3);
        let bias = (case % 3 != 0).then(|| rand_f32(&mut r, &[groups * cog], -0.3, 0.3));
        let got = conv_transpose3d(&x, &w, bias.as_ref(), &spec).unwrap();
        let want = oracle::ref_conv_transpose3d(&x, &w, bias.as_ref(), &spec);
        let d = max_abs_diff(got.data(), &want);
        assert!(
            d <= ORACLE_TOL,
            "conv_transpose3d case {case}: max abs diff {d:.3e} (spec {spec:?})"
        );
        w_deconv = w_deconv.max(d);
    }
    worst.push(("conv_transpose3d", w_deconv));

    let mut w_pool = 0.0f64;
    for case in 0..20 {
        let kind = if case % 2 == 0 { PoolKind::Max } else { PoolKind::Avg };
        let b = r.gen_range(1..=2);
        let c = r.gen_range(1..=4);
        let pick = [2usize, 4, 6];
        let e = [pick[r.gen_range(0..3)], pick[r.gen_range(0..3)], pick[r.gen_range(0..3)]];
        let x = rand_f32(&mut r, &[b, c, e[0], e[1], e[2]], -0.3, 0.3);
        let got = pool3d(&x, kind).unwrap();
        let want = oracle::ref_pool(&x, kind == PoolKind::Max);
        let d = max_abs_diff(got.output.data(), &want);
        assert!(d <= ORACLE_TOL, "pool3d case {case} ({kind:?}): max abs diff {d:.3e}");
        w_pool = w_pool.max(d);
    }
    worst.push(("pool3d", w_pool));

    let mut w_gap = 0.0f64;
    for case in 0..20 {
        let b = r.gen_range(1..=2);
        let c = r.gen_range(1..=4);
        let e = [r.gen_range(1..=6), r.gen_range(1..=6), r.gen_range(1..=6)];
        let x = rand_f32(&mut r, &[b, c, e[0], e[1], e[2]], -0.3, 0.3);
        let got = global_avg_pool(&x).unwrap();
        let want = oracle::ref_global_avg_pool(&x);
        let d = max_abs_diff(got.data(), &want);
        assert!(d <= ORACLE_TOL, "global_avg_pool case {case}: max abs diff {d:.3e}");
        w_gap = w_gap.max(d);
    }
    worst.push(("global_avg_pool", w_gap));

    let mut w_lin = 0.0f64;
    for case in 0..20 {
        let b = r.gen_range(1..=2);
        let c_in = r.gen_range(1..=6);
        let c_out = r.gen_range(1..=6);
        let e = [r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4)];
        let x = rand_f32(&mut r, &[b, c_in, e[0], e[1], e[2]], -0.3, 0.3);
        let w = rand_f32(&mut r, &[c_out, c_in], -0.3, 0.3);
        let bias = (case % 2 == 0).then(|| rand_f32(&mut r, &[c_out], -0.3, 0.3));
        let got = linear(&x, &w, bias.as_ref()).unwrap();
        let want = oracle::ref_linear(&x, &w, bias.as_ref());
        let d = max_abs_diff(got.data(), &want);
        assert!(d <= ORACLE_TOL, "linear case {case}: max abs diff {d:.3e}");
        w_lin = w_lin.max(d);
    }
    worst.push(("linear", w_lin));

    let mut w_norm = 0.0f64;
    for case in 0..20 {
        let b = r.gen_range(1..=2);
        let c = r.gen_range(1..=4);
        let mut e = [1usize; 3];
        loop {
            e = [r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4)];
            if e[0] * e[1] * e[2] >= 2 {
                break;
            }
        }
        let x = rand_f32_spread(&mut r, &[b, c, e[0], e[1], e[2]]);
        let gamma = rand_f32(&mut r, &[c], -1.0, 1.0);
        let beta = rand_f32(&mut r, &[c], -1.0, 1.0);
        let (got, _) = instance_norm(&x, &gamma, &beta).unwrap();
        let want = oracle::ref_instance_norm(&x, &gamma, &beta, NORM_EPS);
        let d = max_abs_diff(got.data(), &want);
        assert!(d <= ORACLE_TOL, "instance_norm case {case}: max abs diff {d:.3e}");
        w_norm = w_norm.max(d);
    }
    worst.push(("instance_norm", w_norm));

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "oracle sweep took {elapsed:.1}s, budget is 30s");
    let summary: Vec<String> =
        worst.iter().map(|(op, d)| format!("{op} {d:.2e}")).collect();
    println!(
        "criterion 1: PASS — worst |f32 - f64 oracle| per op: {} ({elapsed:.1}s)",
        summary.join(", ")
    );
}

/// Central finite differences against the reverse sweep for every
/// differentiable op, then the full focal fusion block end to end.
#[test]
fn criterion_02_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut r = rng(202);
    let mut worst = 0.0f64;
    let mut track = |w: f64| {
        if w > worst {
            worst = w;
        }
    };

    let spec = ConvSpec::k3s1p1();
    let x = rand_f64(&mut r, &[1, 3, 4, 4, 4], -0.8, 0.8);
    let w = rand_f64(&mut r, &[4, 3, 3, 3, 3], -0.5, 0.5);
    let b = rand_f64(&mut r, &[4], -0.5, 0.5);
    track(fd_check("conv3d", &[x, w, b], 6, 1, &|t, ids| {
        let y = t.conv3d(ids[0], ids[1], Some(ids[2]), &spec).unwrap();
        weighted_sum(t, y, 11)
    }));

    let spec = ConvSpec {
        kernel: [3, 2, 1],
        stride: [2, 1, 1],
        padding: [1, 0, 0],
        groups: 2,
        output_padding: [0; 3],
    };
    let x = rand_f64(&mut r, &[2, 4, 5, 4, 3], -0.8, 0.8);
    let w = rand_f64(&mut r, &[6, 2, 3, 2, 1], -0.5, 0.5);
    let b = rand_f64(&mut r, &[6], -0.5, 0.5);
    track(fd_check("conv3d grouped strided", &[x, w, b], 6, 2, &|t, ids| {
        let y = t.conv3d(ids[0], ids[1], Some(ids[2]), &spec).unwrap();
        weighted_sum(t, y, 12)
    }));

    let spec = ConvSpec::new([2; 3], [2; 3], [0; 3]);
    let x = rand_f64(&mut r, &[1, 3, 3, 3, 3], -0.8, 0.8);
    let w = rand_f64(&mut r, &[3, 4, 2, 2, 2], -0.5, 0.5);
    let b = rand_f64(&mut r, &[4], -0.5, 0.5);
    track(fd_check("conv_transpose3d", &[x, w, b], 6, 3, &|t, ids| {
        let y = t.conv_transpose3d(ids[0], ids[1], Some(ids[2]), &spec).unwrap();
        weighted_sum(t, y, 13)
    }));

    let spec = ConvSpec {
        kernel: [2; 3],
        stride: [2; 3],
        padding: [1; 3],
        groups: 2,
        output_padding: [1; 3],
    };
    let x = rand_f64(&mut r, &[1, 4, 3, 3, 3], -0.8, 0.8);
    let w = rand_f64(&mut r, &[4, 3, 2, 2, 2], -0.5, 0.5);
    let b = rand_f64(&mut r, &[6], -0.5, 0.5);
    track(fd_check("conv_transpose3d grouped padded", &[x, w, b], 6, 4, &|t, ids| {
        let y = t.conv_transpose3d(ids[0], ids[1], Some(ids[2]), &spec).unwrap();
        weighted_sum(t, y, 14)
    }));

    let x = rand_f64_pool_safe(&mut r, &[1, 2, 4, 4, 4]);
    track(fd_check("pool3d max", &[x], 8, 5, &|t, ids| {
        let y = t.pool3d(ids[0], PoolKind::Max).unwrap();
        weighted_sum(t, y, 15)
    }));

    let x = rand_f64(&mut r, &[2, 2, 4, 2, 6], -0.8, 0.8);
    track(fd_check("pool3d avg", &[x], 8, 6, &|t, ids| {
        let y = t.pool3d(ids[0], PoolKind::Avg).unwrap();
        weighted_sum(t, y, 16)
    }));

    let x = rand_f64(&mut r, &[2, 3, 3, 2, 4], -0.8, 0.8);
    track(fd_check("global_avg_pool", &[x], 8, 7, &|t, ids| {
        let y = t.global_avg_pool(ids[0]).unwrap();
        weighted_sum(t, y, 17)
    }));

    let x = rand_f64(&mut r, &[1, 2, 3, 3, 3], -0.8, 0.8);
    track(fd_check("resize up", &[x], 8, 8, &|t, ids| {
        let y = t.resize_trilinear(ids[0], [6, 5, 7]).unwrap();
        weighted_sum(t, y, 18)
    }));

    let x = rand_f64(&mut r, &[1, 2, 6, 5, 4], -0.8, 0.8);
    track(fd_check("resize down", &[x], 8, 9, &|t, ids| {
        let y = t.resize_trilinear(ids[0], [3, 3, 3]).unwrap();
        weighted_sum(t, y, 19)
    }));

    let x = rand_f64(&mut r, &[2, 3, 2, 2, 3], -0.8, 0.8);
    let w = rand_f64(&mut r, &[4, 3], -0.5, 0.5);
    let b = rand_f64(&mut r, &[4], -0.5, 0.5);
    track(fd_check("linear", &[x, w, b], 6, 10, &|t, ids| {
        let y = t.linear(ids[0], ids[1], Some(ids[2])).unwrap();
        weighted_sum(t, y, 20)
    }));

    let x = rand_f64(&mut r, &[1, 3, 4, 3, 2], -0.8, 0.8);
    let gamma = rand_f64(&mut r, &[3], 0.5, 1.5);
    let beta = rand_f64(&mut r, &[3], -0.5, 0.5);
    track(fd_check("instance_norm", &[x, gamma, beta], 8, 11, &|t, ids| {
        let y = t.instance_norm(ids[0], ids[1], ids[2]).unwrap();
        weighted_sum(t, y, 21)
    }));

    let x = rand_f64(&mut r, &[1, 2, 3, 3, 3], -2.0, 2.0);
    track(fd_check("gelu", &[x], 10, 12, &|t, ids| {
        let y = t.gelu(ids[0]).unwrap();
        weighted_sum(t, y, 22)
    }));

    let x = rand_f64_kink_free(&mut r, &[2, 3, 3, 2, 2], 0.05);
    track(fd_check("relu", &[x], 10, 13, &|t, ids| {
        let y = t.relu(ids[0]).unwrap();
        weighted_sum(t, y, 23)
    }));

    let x = rand_f64(&mut r, &[1, 4, 2, 3, 2], -1.0, 1.0);
    track(fd_check("softmax_channel", &[x], 10, 14, &|t, ids| {
        let y = t.softmax_channel(ids[0]).unwrap();
        weighted_sum(t, y, 24)
    }));

    let a = rand_f64(&mut r, &[1, 2, 3, 2, 2], -0.8, 0.8);
    let b = rand_f64(&mut r, &[1, 3, 3, 2, 2], -0.8, 0.8);
    let c = rand_f64(&mut r, &[1, 1, 3, 2, 2], -0.8, 0.8);
    track(fd_check("concat_channels", &[a, b, c], 6, 15, &|t, ids| {
        let y = t.concat_channels(&[ids[0], ids[1], ids[2]]).unwrap();
        weighted_sum(t, y, 25)
    }));

    let x = rand_f64(&mut r, &[1, 6, 2, 2, 2], -0.8, 0.8);
    track(fd_check("slice_channels", &[x], 12, 16, &|t, ids| {
        let y = t.slice_channels(ids[0], 2, 3).unwrap();
        weighted_sum(t, y, 26)
    }));

    let a = rand_f64(&mut r, &[2, 2, 3, 2, 2], -0.8, 0.8);
    let b = rand_f64(&mut r, &[2, 2, 3, 2, 2], -0.8, 0.8);
    track(fd_check("add", &[a, b], 8, 17, &|t, ids| {
        let y = t.add(ids[0], ids[1]).unwrap();
        weighted_sum(t, y, 27)
    }));

    // the three broadcast patterns the fusion blocks actually use: plain
    // elementwise, a one-channel gate, and a pooled [*, c, 1, 1, 1] context
    let a = rand_f64(&mut r, &[1, 3, 3, 3, 3], -0.8, 0.8);
    let b = rand_f64(&mut r, &[1, 3, 3, 3, 3], -0.8, 0.8);
    track(fd_check("mul_broadcast same shape", &[a, b], 8, 18, &|t, ids| {
        let y = t.mul_broadcast(ids[0], ids[1]).unwrap();
        weighted_sum(t, y, 28)
    }));
    let a = rand_f64(&mut r, &[1, 3, 3, 3, 3], -0.8, 0.8);
    let b = rand_f64(&mut r, &[1, 1, 3, 3, 3], -0.8, 0.8);
    track(fd_check("mul_broadcast gate", &[a, b], 8, 19, &|t, ids| {
        let y = t.mul_broadcast(ids[0], ids[1]).unwrap();
        weighted_sum(t, y, 29)
    }));
    let a = rand_f64(&mut r, &[1, 3, 1, 1, 1], -0.8, 0.8);
    let b = rand_f64(&mut r, &[1, 1, 2, 2, 2], -0.8, 0.8);
    track(fd_check("mul_broadcast pooled context", &[a, b], 8, 20, &|t, ids| {
        let y = t.mul_broadcast(ids[0], ids[1]).unwrap();
        weighted_sum(t, y, 30)
    }));

    let x = rand_f64(&mut r, &[1, 2, 3, 2, 2], -0.8, 0.8);
    track(fd_check("scale", &[x], 8, 21, &|t, ids| {
        let y = t.scale(ids[0], 1.7).unwrap();
        weighted_sum(t, y, 31)
    }));

    let x = rand_f64(&mut r, &[2, 3, 2, 2, 2], -0.8, 0.8);
    track(fd_check("sum_all", &[x], 8, 22, &|t, ids| t.sum_all(ids[0]).unwrap()));

    let logits = rand_f64(&mut r, &[1, 3, 4, 4, 4], -1.0, 1.0);
    let labels = vec![rand_labels(&mut r, [4, 4, 4], 3)];
    track(fd_check("dice_ce_loss", &[logits], 12, 23, &|t, ids| {
        t.dice_ce_loss(ids[0], &labels).unwrap()
    }));

    // the full fusion block: four streams plus every parameter tensor
    let channels = [4usize, 8, 16, 32];
    let block = FocalFuse::new(&channels, 2).unwrap();
    let specs = block.param_specs();
    let store = ParamStore::<f64>::init(&specs, 77).unwrap();
    let mut inputs: Vec<Tensor<f64>> = (0..4)
        .map(|i| rand_f64(&mut r, &[1, channels[i], 8 >> i, 8 >> i, 8 >> i], -0.5, 0.5))
        .collect();
    for spec in &specs {
        inputs.push(store.get(&spec.name).unwrap().clone());
    }
    let empty = ParamStore::<f64>::new();
    track(fd_check("focal fusion block", &inputs, 3, 24, &|t, ids| {
        let mut ctx = GraphCtx::new(t, &empty, true);
        for (spec, &id) in specs.iter().zip(&ids[4..]) {
            ctx.bind(&spec.name, id);
        }
        let trace = block.apply(&mut ctx, &ids[..4]).unwrap();
        let mut loss = None;
        for (a, &y) in trace.fused.iter().enumerate() {
            let s = weighted_sum(t, y, 900 + a as u64);
            loss = Some(match loss {
                None => s,
                Some(prev) => t.add(prev, s).unwrap(),
            });
        }
        loss.unwrap()
    }));

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "gradient sweep took {elapsed:.1}s, budget is 300s");
    println!(
        "criterion 2: PASS — worst relative error {worst:.2e} across every op and the \
         fusion block ({elapsed:.1}s)"
    );
}

/// Encoder widths double from the stem exactly, and both variants bring
/// logits back to the input resolution.
#[test]
fn criterion_03_channel_widths_and_logit_extents() {
    let mut r = rng(303);
    let volume = rand_f32(&mut r, &[1, 1, 32, 32, 32], -0.5, 0.5);
    for variant in [Variant::FocalFuse, Variant::Msf3d] {
        let config = ModelConfig { variant, base_channels: 16, ..ModelConfig::default() };
        let model = Model::new(config).unwrap();
        let params: ParamStore<f32> = model.init_params(1).unwrap();
        let mut tape: Tape<f32> = Tape::new();
        let trace = model.forward(&mut tape, &params, volume.clone(), false).unwrap();

        let widths: Vec<usize> = trace
            .streams
            .iter()
            .map(|&s| tape.value(s).dims5().unwrap()[1])
            .collect();
        assert_eq!(widths, [16, 32, 64, 128, 256], "{variant:?} encoder widths");
        assert_eq!(
            tape.value(trace.logits).shape(),
            [1, 6, 32, 32, 32],
            "{variant:?} logits shape"
        );
    }
    println!(
        "criterion 3: PASS — widths 16/32/64/128/256 and full-resolution logits on both variants"
    );
}

/// The only way a far-away voxel can reach the output is the pooled global
/// context. A level-l feature at the finest stream sees at most 24 input
/// voxels in any direction (the widest path dips through the 1/8-resolution
/// stream), so a poke 59 voxels away must leave levels 1 and 2 bit-identical
/// at the target while still shifting the fused output through the pooled
/// path.
#[test]
fn criterion_04_far_perturbation_global_path() {
    let channels = [4usize, 8, 16, 32];
    let block = FocalFuse::new(&channels, 2).unwrap();
    let params = ParamStore::<f32>::init(&block.param_specs(), 17).unwrap();

    let target = [2usize, 2, 2];
    let poke = [61usize, 61, 61];

    let run = |perturb: bool| -> (Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>) {
        let mut tape: Tape<f32> = Tape::new();
        let mut r = rng(404);
        let mut streams = Vec::new();
        for (i, &c) in channels.iter().enumerate() {
            let e = 64usize >> i;
            let mut t = rand_f32(&mut r, &[1, c, e, e, e], -0.5, 0.5);
            if perturb && i == 0 {
                let idx = ((poke[0] * e) + poke[1]) * e + poke[2];
                t.data_mut()[idx] += 50.0;
            }
            streams.push(tape.leaf(t));
        }
        let trace = {
            let mut ctx = GraphCtx::new(&mut tape, &params, false);
            block.apply(&mut ctx, &streams).unwrap()
        };
        let at_target = |id| {
            let t = tape.value(id);
            let [_, c, w, h, z] = t.dims5().unwrap();
            (0..c)
                .map(|ci| t.data()[((ci * w + target[0]) * h + target[1]) * z + target[2]])
                .collect::<Vec<f32>>()
        };
        (
            at_target(trace.levels[0][1]),
            at_target(trace.levels[0][2]),
            at_target(trace.fused[0]),
            tape.value(trace.global_ctx[0]).data().to_vec(),
            tape.value(trace.levels[0][1]).data().to_vec(),
        )
    };

    let (l1_a, l2_a, fused_a, global_a, full_a) = run(false);
    let (l1_b, l2_b, fused_b, global_b, full_b) = run(true);

    let bit_equal = |a: &[f32], b: &[f32]| {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    };
    assert!(
        bit_equal(&l1_a, &l1_b),
        "level-1 features at the target moved: {l1_a:?} vs {l1_b:?}"
    );
    assert!(
        bit_equal(&l2_a, &l2_b),
        "level-2 features at the target moved: {l2_a:?} vs {l2_b:?}"
    );
    // the poke did land: level 1 changed somewhere near it
    assert!(!bit_equal(&full_a, &full_b), "perturbation never reached level 1 at all");
    assert!(!bit_equal(&global_a, &global_b), "pooled global context ignored the poke");
    let delta = fused_a
        .iter()
        .zip(&fused_b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    assert!(delta > 0.0, "fused output at the target never moved");
    println!(
        "criterion 4: PASS — poke 59 voxels out left levels 1-2 bit-identical at the \
         target, fused output moved {delta:.3e} via the global context"
    );
}

/// With the gate projection and the modulator mix zeroed, the modulator is
/// identically zero and so is every fused output — the multiplicative
/// structure, not small weights, is what kills it. The query path stays
/// untouched to make sure the zeros come from the modulator side.
#[test]
fn criterion_05_zeroed_gates_annihilate_output() {
    let channels = [4usize, 8, 16, 32];
    let block = FocalFuse::new(&channels, 2).unwrap();
    let specs = block.param_specs();

    let forward = |params: &ParamStore<f32>| -> Vec<Vec<f32>> {
        let mut tape: Tape<f32> = Tape::new();
        let mut r = rng(505);
        let streams: Vec<_> = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let e = 16usize >> i;
                tape.leaf(rand_f32(&mut r, &[1, c, e, e, e], -0.5, 0.5))
            })
            .collect();
        let trace = {
            let mut ctx = GraphCtx::new(&mut tape, params, false);
            block.apply(&mut ctx, &streams).unwrap()
        };
        trace.fused.iter().map(|&id| tape.value(id).data().to_vec()).collect()
    };

    let pristine = ParamStore::<f32>::init(&specs, 3).unwrap();
    assert!(
        forward(&pristine).iter().flatten().any(|&v| v != 0.0),
        "freshly initialized block already outputs all zeros"
    );

    let mut params = pristine;
    for a in 1..=4 {
        for name in ["gates.weight", "gates.bias", "mix.weight", "mix.bias"] {
            let t = params.get_mut(&format!("focal.s{a}.{name}")).unwrap();
            t.data_mut().fill(0.0);
        }
    }
    for (a, fused) in forward(&params).iter().enumerate() {
        assert!(
            fused.iter().all(|&v| v == 0.0),
            "scale {} output is not identically zero",
            a + 1
        );
    }
    println!("criterion 5: PASS — zeroed gate/mix projections force Y == 0 at every scale");
}

/// The triangular schedule hits its endpoints exactly, climbs and falls at
/// a constant rate, and repeats with period 2 * half_cycle.
#[test]
fn criterion_06_cyclic_schedule_endpoints() {
    let (lo, hi, half) = (0.0005f64, 0.003f64, 100u64);
    assert_eq!(cyclic_lr(0, lo, hi, half), 0.0005);
    assert_eq!(cyclic_lr(half, lo, hi, half), 0.003);

    let slope = (hi - lo) / half as f64;
    for i in 0..600u64 {
        assert_eq!(
            cyclic_lr(i, lo, hi, half),
            cyclic_lr(i + 2 * half, lo, hi, half),
            "schedule is not periodic at iteration {i}"
        );
        let d = cyclic_lr(i + 1, lo, hi, half) - cyclic_lr(i, lo, hi, half);
        let expect = if i % (2 * half) < half { slope } else { -slope };
        assert!(
            (d - expect).abs() < 1e-12,
            "slope at iteration {i} is {d:.3e}, expected {expect:.3e}"
        );
    }
    println!("criterion 6: PASS — lr(0) = 0.0005, lr(100) = 0.003, piecewise-linear, periodic");
}

/// Both variants memorize four phantoms in 200 iterations. The bars differ
/// because the focal variant converges faster on this recipe; both must fit
/// inside one 15-minute slot on a single desktop core.
#[test]
fn criterion_07_overfit_four_phantoms() {
    let start = Instant::now();
    let spec = PhantomSpec { seed: 7, ..PhantomSpec::default() };
    let samples = generate_phantom_set(&spec, 4).unwrap();

    let mut report = Vec::new();
    for (variant, bar) in [(Variant::FocalFuse, 0.90), (Variant::Msf3d, 0.85)] {
        let config = ModelConfig { variant, base_channels: 8, ..ModelConfig::default() };
        let opts = TrainOptions {
            epochs: 50, // 4 samples per epoch = 200 iterations
            seed: 0,
            half_cycle: 100,
            val_every: 50,
            ..TrainOptions::default()
        };
        let out = train(&config, &samples, &opts).unwrap();
        assert!(out.log.diverged.is_none(), "{variant:?} diverged");
        assert_eq!(out.log.iters.len(), 200);
        let dice = out.log.last_val().unwrap().mean_dice.unwrap();
        assert!(
            dice >= bar,
            "{variant:?} reached mean foreground dice {dice:.4}, needs {bar}"
        );
        report.push(format!("{} {dice:.4}", Variant::name(&variant)));
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 900.0, "overfit runs took {elapsed:.0}s, budget is 900s");
    println!(
        "criterion 7: PASS — train dice after 200 iterations: {} ({elapsed:.0}s)",
        report.join(", ")
    );
}

/// Production surface metrics against brute-force references on 50 seeded
/// random mask pairs — equal to the last bit, not within a tolerance — plus
/// the dice edge cases.
#[test]
fn criterion_08_surface_metrics_match_brute_force() {
    let mut r = rng(808);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 50 {
        attempts += 1;
        assert!(attempts < 300, "mask generator starved: {checked} valid pairs");
        let e = [r.gen_range(3..=16), r.gen_range(3..=16), r.gen_range(3..=16)];
        let spacing = [
            r.gen_range(0.5..2.0),
            r.gen_range(0.5..2.0),
            r.gen_range(0.5..2.0),
        ];
        let fill = r.gen_range(0.05..0.5);
        let mut masks = Vec::new();
        for _ in 0..2 {
            let numel = e[0] * e[1] * e[2];
            let data: Vec<u8> = (0..numel).map(|_| r.gen_bool(fill) as u8).collect();
            masks.push(LabelVolume::new(e, data).unwrap());
        }
        let (pred, truth) = (&masks[0], &masks[1]);
        let sp = oracle::ref_surface(pred, 1, spacing);
        let st = oracle::ref_surface(truth, 1, spacing);
        if sp.is_empty() || st.is_empty() {
            continue; // the metrics are undefined on an empty mask
        }

        let hd = hausdorff_distance(pred, truth, 1, spacing).unwrap();
        assert_eq!(hd, oracle::ref_hausdorff(&sp, &st), "hausdorff differs on pair {checked}");
        let asd = average_surface_distance(pred, truth, 1, spacing).unwrap();
        assert_eq!(asd, oracle::ref_asd(&sp, &st), "asd differs on pair {checked}");
        let dice = dice_score(pred, truth, 1).unwrap();
        assert_eq!(dice, oracle::ref_dice(pred, truth, 1), "dice differs on pair {checked}");
        checked += 1;
    }

    // dice edge cases, exact
    let mut solid = LabelVolume::new([4, 4, 4], vec![0; 64]).unwrap();
    solid.data_mut()[..32].fill(1);
    assert_eq!(dice_score(&solid, &solid, 1).unwrap(), 1.0);

    let mut left = LabelVolume::new([4, 4, 4], vec![0; 64]).unwrap();
    left.data_mut()[..32].fill(1);
    let mut right = LabelVolume::new([4, 4, 4], vec![0; 64]).unwrap();
    right.data_mut()[32..].fill(1);
    assert_eq!(dice_score(&left, &right, 1).unwrap(), 0.0);

    let mut a = LabelVolume::new([4, 1, 1], vec![0; 4]).unwrap();
    a.data_mut()[0] = 1;
    a.data_mut()[1] = 1;
    let mut b = LabelVolume::new([4, 1, 1], vec![0; 4]).unwrap();
    b.data_mut()[1] = 1;
    b.data_mut()[2] = 1;
    assert_eq!(dice_score(&a, &b, 1).unwrap(), 0.5);

    println!(
        "criterion 8: PASS — hausdorff/asd/dice bitwise-equal to brute force on 50 pairs, \
         edge cases exact"
    );
}

/// Same command, same bytes: logs and checkpoints from two identical train
/// invocations match, and a checkpoint survives a load/save round trip
/// untouched.
#[test]
fn criterion_09_training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(
        root.join("model.conf"),
        "variant focal_fuse\nbase_channels 2\nfocal_levels 1\nnum_classes 4\n",
    )
    .unwrap();
    fs::write(root.join("phantom.spec"), "classes 4\nradius.min 4\nradius.max 7\n").unwrap();

    let data = root.join("data");
    assert_eq!(
        run_cli(&[
            "gen-data",
            "--spec",
            root.join("phantom.spec").to_str().unwrap(),
            "--count",
            "2",
            "--seed",
            "11",
            "--out",
            data.to_str().unwrap(),
        ]),
        0
    );
    for side in ["a", "b"] {
        assert_eq!(
            run_cli(&[
                "train",
                "--config",
                root.join("model.conf").to_str().unwrap(),
                "--data",
                data.to_str().unwrap(),
                "--out",
                root.join(format!("run-{side}")).to_str().unwrap(),
                "--epochs",
                "2",
                "--seed",
                "5",
            ]),
            0
        );
    }
    for file in ["train.log", "model.ckpt"] {
        assert_eq!(
            fs::read(root.join("run-a").join(file)).unwrap(),
            fs::read(root.join("run-b").join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }

    let original = root.join("run-a").join("model.ckpt");
    let ckpt = load_checkpoint(&original).unwrap();
    let resaved = root.join("roundtrip.ckpt");
    save_checkpoint(&ckpt.params, &ckpt.state, &ckpt.config, &resaved).unwrap();
    assert_eq!(
        fs::read(&original).unwrap(),
        fs::read(&resaved).unwrap(),
        "checkpoint changed across a load/save round trip"
    );
    println!("criterion 9: PASS — rerun and round-trip bytes identical");
}

/// The evaluation table leads with the three mean columns, then per-class
/// dice. Scoring a dataset against itself pins every cell, so the whole
/// report is snapshotted byte for byte.
#[test]
fn criterion_10_eval_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("phantom.spec"), "classes 4\nradius.min 4\nradius.max 7\n").unwrap();
    let data = root.join("data");
    assert_eq!(
        run_cli(&[
            "gen-data",
            "--spec",
            root.join("phantom.spec").to_str().unwrap(),
            "--count",
            "2",
            "--seed",
            "13",
            "--out",
            data.to_str().unwrap(),
        ]),
        0
    );
    let report = root.join("report");
    assert_eq!(
        run_cli(&[
            "eval",
            "--pred",
            data.to_str().unwrap(),
            "--truth",
            data.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ]),
        0
    );
    let table = fs::read_to_string(report.join("aggregate.txt")).unwrap();
    assert_eq!(
        table,
        "Mean DSC  Mean HD  Mean ASD  Class 1 DSC  Class 2 DSC  Class 3 DSC\n\
         1.0000    0.0000   0.0000    1.0000       1.0000       1.0000\n",
        "aggregate table drifted from the snapshot"
    );
    println!("criterion 10: PASS — mean DSC/HD/ASD then per-class DSC, snapshot byte-exact");
}
